use anyhow::{bail, Result};
use gatedseg::gates::LevelGates;
use gatedseg::io::{load_mask, load_rgb, load_weights, save_mask, save_weights};
use gatedseg::net::{self, AdamConfig};
use gatedseg::{GrayImage, ModelConfig, Prediction, Preset};
use std::path::Path;

fn predict(weights: &Path, input: &Path, depth: Option<&Path>) -> Result<Prediction> {
    let params = load_weights(weights)?;
    let rgb = load_rgb(input)?;
    let two_stream = params.config.stream == net::Stream::Two;
    Ok(match (two_stream, depth) {
        (true, Some(d)) => net::forward_two_stream(&rgb, &load_mask(d)?.to_tensor(), &params)?,
        (false, None) => net::forward(&rgb, &params)?,
        (true, None) => bail!("{} holds a two-stream model; pass --depth", weights.display()),
        (false, Some(_)) => bail!(
            "{} holds a single-stream model; --depth is not accepted",
            weights.display()
        ),
    })
}

pub fn infer(weights: &Path, input: &Path, depth: Option<&Path>, output: &Path) -> Result<()> {
    let pred = predict(weights, input, depth)?;
    save_mask(&GrayImage::from_tensor_plane(&pred.sf, 0, 0), output)?;
    Ok(())
}

pub fn train_toy(out: &Path, steps: usize, seed: u64, preset: Preset) -> Result<()> {
    let report = net::train_toy(ModelConfig::preset(preset), steps, seed, AdamConfig::default().lr)?;
    for (i, loss) in report.losses.iter().enumerate() {
        let step = i + 1;
        if step == 1 || step % 100 == 0 || step == steps {
            println!("step {step:>5}  loss {loss:.6}");
        }
    }
    println!("final training MAE {:.6}", report.final_mae);
    let gate_norms: Vec<(String, f64)> = report
        .params
        .gate_param_names()
        .into_iter()
        .map(|n| {
            let norm = report.first_step_grad_norms[&n];
            (n, norm)
        })
        .collect();
    match gate_norms.iter().min_by(|a, b| a.1.total_cmp(&b.1)) {
        Some((name, norm)) => println!(
            "min gate gradient norm at step 1 {norm:.6e} ({name}, {} gate parameters)",
            gate_norms.len()
        ),
        None => println!("model has no gate units"),
    }
    save_weights(&report.params, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn level_line(label: &str, level: usize, g: &LevelGates, names: (&str, &str)) -> String {
    format!("{label} {level}: {}={:.4} {}={:.4}", names.0, g.g1[0], names.1, g.g2[0])
}

pub fn gates(weights: &Path, input: &Path, depth: Option<&Path>) -> Result<()> {
    let pred = predict(weights, input, depth)?;
    let trace = &pred.trace;
    if trace.levels.is_empty() && trace.cross_modal.is_empty() {
        println!("model has no gate units");
        return Ok(());
    }
    for (i, g) in trace.levels.iter().enumerate() {
        println!("{}", level_line("level", i + 1, g, ("g1", "g2")));
    }
    for (i, g) in trace.cross_modal.iter().enumerate() {
        println!("{}", level_line("cross-modal level", i + 1, g, ("rgb", "depth")));
    }
    let values: Vec<f64> = trace.values().collect();
    let mut bins = [0usize; 10];
    for v in &values {
        bins[((v * 10.0) as usize).min(9)] += 1;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    println!("histogram of {} gate values (mean {mean:.4}):", values.len());
    for (i, count) in bins.iter().enumerate() {
        let hi = if i == 9 { "]" } else { ")" };
        println!(
            "  [{:.1}, {:.1}{hi} {count:>3} {}",
            i as f64 / 10.0,
            (i + 1) as f64 / 10.0,
            "#".repeat(*count)
        );
    }
    Ok(())
}
