use crate::OutputFormat;
use anyhow::{Context, Result};
use gatedseg::io::{load_mask, pair_dataset};
use gatedseg::metrics::NamedPair;
use gatedseg::{evaluate_dataset, Binarize, DatasetReport, MetricReport};
use std::fmt::Write as _;
use std::path::Path;

pub fn run(
    pred_dir: &Path,
    gt_dir: &Path,
    jobs: Option<usize>,
    binarize: Binarize,
    format: OutputFormat,
    out: Option<&Path>,
) -> Result<()> {
    let pairing = pair_dataset(pred_dir, gt_dir)?;
    for stem in &pairing.unmatched {
        eprintln!("warning: `{stem}` has no counterpart and is skipped");
    }
    let pairs = pairing
        .pairs
        .iter()
        .map(|p| {
            Ok(NamedPair {
                name: p.stem.clone(),
                pred: load_mask(&p.pred)?,
                gt: load_mask(&p.gt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_dataset(pairs, binarize, jobs)?;
    let text = match format {
        OutputFormat::Json => to_json(&report, binarize, &pairing.unmatched),
        OutputFormat::Csv => to_csv(&report),
        OutputFormat::Table => to_table(&report, binarize),
    };
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Six decimals, ties to even (exact binary value).
fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn metrics_fields(r: &MetricReport, indent: &str) -> Vec<String> {
    r.scalars()
        .iter()
        .map(|(k, v)| format!("{indent}\"{k}\": {}", num(*v)))
        .collect()
}

/// JSON report. Depends only on the inputs and flags, never on the worker count.
pub fn to_json(report: &DatasetReport, binarize: Binarize, unmatched: &[String]) -> String {
    let quote = |s: &str| serde_json::to_string(s).expect("strings serialize");
    let mut s = String::from("{\n  \"aggregate\": {\n");
    s.push_str(&metrics_fields(&report.aggregate, "    ").join(",\n"));
    s.push_str("\n  },\n  \"per_image\": [");
    let rows: Vec<String> = report
        .per_image
        .iter()
        .map(|(name, r)| {
            let mut fields = vec![format!("      \"name\": {}", quote(name))];
            fields.extend(metrics_fields(r, "      "));
            format!("\n    {{\n{}\n    }}", fields.join(",\n"))
        })
        .collect();
    s.push_str(&rows.join(","));
    let unmatched: Vec<String> = unmatched.iter().map(|u| quote(u)).collect();
    write!(
        s,
        "\n  ],\n  \"config\": {{\n    \"binarize\": {},\n    \"images\": {},\n    \"unmatched\": [{}]\n  }}\n}}\n",
        quote(&binarize.to_string()),
        report.per_image.len(),
        unmatched.join(", ")
    )
    .unwrap();
    s
}

fn to_csv(report: &DatasetReport) -> String {
    let mut s = String::from("name");
    for (k, _) in report.aggregate.scalars() {
        write!(s, ",{k}").unwrap();
    }
    s.push('\n');
    let rows = report.per_image.iter().map(|(n, r)| (n.as_str(), r));
    for (name, r) in rows.chain([("aggregate", &report.aggregate)]) {
        s.push_str(name);
        for (_, v) in r.scalars() {
            write!(s, ",{}", num(v)).unwrap();
        }
        s.push('\n');
    }
    s
}

fn to_table(report: &DatasetReport, binarize: Binarize) -> String {
    let mut s = String::new();
    writeln!(s, "{} images, binarize {binarize}", report.per_image.len()).unwrap();
    for (k, v) in report.aggregate.scalars() {
        writeln!(s, "{k:<12}{v:>10.6}").unwrap();
    }
    s
}
