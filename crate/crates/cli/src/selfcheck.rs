use anyhow::{bail, ensure, Result};
use gatedseg::foldconv::{fold, receptive_field, unfold, ConvKind};
use gatedseg::io::WeightContainer;
use gatedseg::net::{self, Stream};
use gatedseg::tensor::{grad_check, GradCheckOp};
use gatedseg::{evaluate_pair, Binarize, GrayImage, ModelConfig, ModelParams, Preset, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = (&'static str, fn() -> Result<String>);

const QUICK: [Check; 6] = [
    ("op gradients", op_gradients),
    ("fold round trip", fold_round_trip),
    ("folded receptive field", folded_receptive_field),
    ("metric identities", metric_identities),
    ("weight container", weight_container),
    ("forward determinism", forward_determinism),
];

const FULL: [Check; 2] = [
    ("two-stream reduction", two_stream_reduction),
    ("toy training", toy_training),
];

pub fn run(quick: bool) -> Result<()> {
    let checks = QUICK.iter().chain(if quick { &[][..] } else { &FULL[..] });
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("ok    {name:<24}{detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name:<24}{e:#}");
            }
        }
    }
    if failed > 0 {
        bail!("{failed} check(s) failed");
    }
    Ok(())
}

fn op_gradients() -> Result<String> {
    let ops = GradCheckOp::catalogue();
    let mut worst = 0.0f64;
    for (i, op) in ops.iter().enumerate() {
        let err = grad_check(op, i as u64)?;
        ensure!(err <= 1e-5, "{}: relative error {err:e}", op.name());
        worst = worst.max(err);
    }
    Ok(format!("{} ops, worst relative error {worst:.1e}", ops.len()))
}

fn fold_round_trip() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let dims = [
            1,
            rng.random_range(1..4),
            rng.random_range(1..10),
            rng.random_range(1..10),
        ];
        let x = Tensor::random_uniform(dims, -1.0, 1.0, &mut rng);
        ensure!(unfold(&fold(&x), (dims[2], dims[3]))? == x, "mismatch for {dims:?}");
    }
    Ok("20 tensors bit-exact".into())
}

fn folded_receptive_field() -> Result<String> {
    let folded = receptive_field(ConvKind::FoldedAtrous, 2, 3, (12, 12), (24, 24))?.len();
    let plain = receptive_field(ConvKind::PlainAtrous, 4, 3, (12, 12), (24, 24))?.len();
    ensure!(
        (folded, plain) == (36, 9),
        "support sizes {folded} / {plain}, expected 36 / 9"
    );
    Ok("36 positions folded, 9 plain".into())
}

fn metric_identities() -> Result<String> {
    let gt = GrayImage::from_fn(16, 16, |y, x| {
        f64::from(u8::from((4..12).contains(&y) && (2..9).contains(&x)))
    });
    let perfect = evaluate_pair(&gt, &gt, Binarize::default())?;
    for (name, v) in perfect.scalars() {
        let want = if matches!(name, "ber" | "mae") { 0.0 } else { 1.0 };
        ensure!((v - want).abs() <= 1e-6, "perfect prediction: {name} = {v}");
    }
    let inv = evaluate_pair(&gt.complement(), &gt, Binarize::default())?;
    ensure!(
        (inv.pa, inv.iou, inv.dice, inv.ber) == (0.0, 0.0, 0.0, 1.0),
        "inverted prediction"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let pred = GrayImage::from_fn(16, 16, |_, _| rng.random());
        let r = evaluate_pair(&pred, &gt, Binarize::Adaptive)?;
        ensure!(
            (r.dice - 2.0 * r.iou / (1.0 + r.iou)).abs() <= 1e-12,
            "Dice/IoU identity"
        );
        ensure!(r.f_max >= r.f_mean, "F_max < F_mean");
    }
    Ok("perfect, inverted and 50 random pairs".into())
}

fn weight_container() -> Result<String> {
    let p = ModelParams::init(ModelConfig::preset(Preset::M5), 3)?;
    let bytes = WeightContainer::from_model(&p)?.to_bytes()?;
    let back = WeightContainer::from_bytes(&bytes)?;
    ensure!(back.to_model()? == p, "parameters differ after reload");
    ensure!(back.to_bytes()? == bytes, "bytes differ after reload");
    Ok(format!("{} bytes round-tripped", bytes.len()))
}

fn forward_determinism() -> Result<String> {
    let p = ModelParams::init(ModelConfig::preset(Preset::M5).with_input_size(32, 32), 4)?;
    let x = Tensor::random_uniform([1, 3, 32, 32], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(5));
    let (a, b) = (net::forward(&x, &p)?, net::forward(&x, &p)?);
    ensure!(a.sf == b.sf && a.trace == b.trace, "repeated forward passes differ");
    ensure!(a.sf.data().iter().all(|&v| v > 0.0 && v < 1.0), "output outside (0, 1)");
    Ok("M5 32x32 repeatable, output in (0, 1)".into())
}

fn two_stream_reduction() -> Result<String> {
    let config = ModelConfig::preset(Preset::TwoStream).with_input_size(32, 32);
    let mut p = ModelParams::init(config, 6)?;
    for (i, c) in p.config.encoder_channels.into_iter().enumerate() {
        let base = format!("cross.level{}", i + 1);
        p.set(&format!("{base}.gate.weight"), Tensor::zeros([2, 2 * c, 3, 3]))?;
        p.set(
            &format!("{base}.gate.bias"),
            Tensor::new([2, 1, 1, 1], vec![50.0, -50.0])?,
        )?;
        let identity = Tensor::from_fn([c, c, 3, 3], |o, i, y, x| {
            f64::from(u8::from(o == i && y == 1 && x == 1))
        });
        p.set(&format!("{base}.rgb.weight"), identity)?;
        p.set(&format!("{base}.rgb.bias"), Tensor::zeros([c, 1, 1, 1]))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rgb = Tensor::random_uniform([1, 3, 32, 32], 0.0, 1.0, &mut rng);
    let depth = Tensor::random_uniform([1, 1, 32, 32], 0.0, 1.0, &mut rng);
    let two = net::forward_two_stream(&rgb, &depth, &p)?;

    let mut single_cfg = p.config.clone();
    single_cfg.stream = Stream::Single;
    let tensors = p
        .tensors
        .iter()
        .filter(|(n, _)| !n.starts_with("depth_encoder") && !n.starts_with("cross."))
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    let single = net::forward(&rgb, &ModelParams::new(single_cfg, tensors)?)?;
    let diff = two.sf.max_abs_diff(&single.sf);
    ensure!(diff <= 1e-9, "max difference {diff:e}");
    Ok(format!("max difference {diff:.1e}"))
}

fn toy_training() -> Result<String> {
    let steps = 10;
    let report = net::train_toy(ModelConfig::preset(Preset::M4), steps, 7, net::AdamConfig::default().lr)?;
    let (first, last) = (report.losses[0], report.losses[steps - 1]);
    ensure!(last < first, "loss did not drop: {first:.6} -> {last:.6}");
    let min_gate = report
        .params
        .gate_param_names()
        .iter()
        .map(|n| report.first_step_grad_norms[n])
        .fold(f64::INFINITY, f64::min);
    ensure!(min_gate > 0.0, "a gate parameter received no gradient");
    Ok(format!("M4 loss {first:.4} -> {last:.4} in {steps} steps"))
}
