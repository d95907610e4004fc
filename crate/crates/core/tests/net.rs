use gatedseg::net::{self, fpn_decode, run, GateMode, ModelConfig, ModelParams, Preset};
use gatedseg::params::ParamSet;
use gatedseg::tensor::{bilinear_upsample, concat_channels, Tensor};
use gatedseg::{Error, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[path = "common/model_grad.rs"]
mod model_grad;
use model_grad::{check_model_gradients, toy_mask};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn image(n: usize, c: usize, size: usize, seed: u64) -> Tensor {
    Tensor::random_uniform([n, c, size, size], 0.0, 1.0, &mut rng(seed))
}

fn params(preset: Preset, size: usize, seed: u64) -> ModelParams {
    ModelParams::init(ModelConfig::preset(preset).with_input_size(size, size), seed).unwrap()
}

/// 3×3 kernel copying input channel `i` to output channel `i`.
fn identity_kernel(out_c: usize, in_c: usize) -> Tensor {
    Tensor::from_fn(
        [out_c, in_c, 3, 3],
        |o, i, y, x| if o == i && y == 1 && x == 1 { 1.0 } else { 0.0 },
    )
}

fn in_open_unit(t: &Tensor) -> bool {
    t.data().iter().all(|&v| v > 0.0 && v < 1.0)
}

#[test]
fn encoder_shapes_and_divisibility() {
    let p = params(Preset::M1, 64, 1);
    let mut tape = Tape::new();
    let bound = p.tensors.bind(&mut tape);
    let x = tape.constant(image(1, 3, 64, 2));
    let levels = net::encode(&mut tape, x, &bound, "encoder").unwrap();
    let dims: Vec<[usize; 4]> = levels.iter().map(|&l| tape.shape(l).dims()).collect();
    assert_eq!(
        dims,
        [
            [1, 16, 64, 64],
            [1, 24, 32, 32],
            [1, 32, 16, 16],
            [1, 48, 8, 8],
            [1, 64, 4, 4]
        ]
    );

    let bad = tape.constant(Tensor::zeros([1, 3, 60, 64]));
    let err = net::encode(&mut tape, bad, &bound, "encoder").unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
    assert!(err.to_string().contains("16"), "{err}");
}

#[test]
fn zero_inputs_give_zero_features() {
    let mut p = params(Preset::M1, 32, 3);
    let names: Vec<String> = p
        .tensors
        .names()
        .filter(|n| n.starts_with("transition"))
        .cloned()
        .collect();
    for n in names {
        let shape = p.get(&n).unwrap().shape();
        p.set(&n, Tensor::zeros(shape)).unwrap();
    }
    let mut tape = Tape::new();
    let bound = p.tensors.bind(&mut tape);
    let x = tape.constant(Tensor::zeros([1, 3, 32, 32]));
    let nodes = run(&mut tape, &p.config, &bound, x, None).unwrap();
    for &e in &nodes.encoder {
        assert!(tape.value(e).data().iter().all(|&v| v == 0.0));
    }
    for &t in &nodes.transitions {
        assert_eq!(tape.shape(t).c, 32);
        assert!(tape.value(t).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn identity_decoder_reduces_to_sums() {
    let p = params(Preset::M1, 32, 4);
    let mut set = ParamSet::new();
    for level in 2..=5 {
        set.insert(format!("decoder.level{level}.weight"), identity_kernel(32, 32));
        set.insert(format!("decoder.level{level}.bias"), Tensor::zeros([32, 1, 1, 1]));
    }
    set.insert("decoder.level1.weight", identity_kernel(1, 32));
    set.insert("decoder.level1.bias", Tensor::zeros([1, 1, 1, 1]));
    let mut r = rng(5);
    let ts: Vec<Tensor> = [32, 16, 8, 4, 2]
        .iter()
        .map(|&s| Tensor::random_uniform([1, 32, s, s], -1.0, 1.0, &mut r))
        .collect();
    let mut tape = Tape::new();
    let bound = set.bind(&mut tape);
    let nodes: Vec<_> = ts.iter().map(|t| tape.constant(t.clone())).collect();
    let tn: [_; 5] = nodes.try_into().unwrap();
    let decoded = fpn_decode(&mut tape, &tn, &GateMode::Ungated, &bound).unwrap();
    assert_eq!(tape.value(decoded.levels[4]), &ts[4]);
    for i in (1..4).rev() {
        let d_next = tape.value(decoded.levels[i + 1]);
        let up = bilinear_upsample(d_next, ts[i].shape().h, ts[i].shape().w).unwrap();
        let expect = gatedseg::tensor::add(&ts[i], &up).unwrap();
        assert_eq!(tape.value(decoded.levels[i]), &expect, "level {}", i + 1);
    }
    let up = bilinear_upsample(tape.value(decoded.levels[1]), 32, 32).unwrap();
    let sum = gatedseg::tensor::add(&ts[0], &up).unwrap();
    let d1 = tape.value(decoded.levels[0]);
    assert_eq!(d1.shape().dims(), [1, 1, 32, 32]);
    assert_eq!(d1.data(), &sum.data()[..32 * 32]);
    drop(p);
}

#[test]
fn closed_gate_blocks_its_level() {
    let p = params(Preset::M1, 32, 6);
    let mut r = rng(7);
    let mut tape = Tape::new();
    let bound = p.tensors.bind(&mut tape);
    let ts: Vec<_> = [32, 16, 8, 4, 2]
        .iter()
        .map(|&s| tape.var(Tensor::random_uniform([1, 32, s, s], -1.0, 1.0, &mut r)))
        .collect();
    let tn: [_; 5] = ts.try_into().unwrap();
    let mut gates = [(1.0, 1.0); 5];
    gates[2] = (0.0, 1.0);
    let decoded = fpn_decode(&mut tape, &tn, &GateMode::Fixed(gates), &bound).unwrap();
    let l = tape.sum(decoded.levels[0]).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(g.wrt(tn[2]).data().iter().all(|&v| v == 0.0));
    assert!(g.wrt(tn[1]).l2_norm() > 0.0);
    assert!(g.wrt(tn[3]).l2_norm() > 0.0);
}

#[test]
fn parallel_branch_layout_and_residual_identity() {
    let p = params(Preset::M3, 32, 8);
    let mut tape = Tape::new();
    let bound = p.tensors.bind(&mut tape);
    let x = tape.constant(image(2, 3, 32, 9));
    let nodes = run(&mut tape, &p.config, &bound, x, None).unwrap();
    let fcat = tape.value(nodes.fcat.unwrap());
    assert_eq!(fcat.shape().dims(), [2, 161, 32, 32]);
    assert_eq!(p.config.fcat_channels(), 161);
    let d1 = tape.value(nodes.s1_logits);
    for n in 0..2 {
        assert_eq!(fcat.sample(n).data()[..32 * 32], d1.sample(n).data()[..]);
    }

    // With every g2 at zero the gated transitions vanish.
    let d1v = tape.var(Tensor::random_uniform([1, 1, 16, 16], -1.0, 1.0, &mut rng(10)));
    let ts: Vec<_> = [16, 8, 4, 2, 1]
        .iter()
        .map(|&s| tape.var(Tensor::random_uniform([1, 32, s, s], -1.0, 1.0, &mut rng(s as u64))))
        .collect();
    let g2: Vec<_> = (0..5)
        .map(|_| {
            Some((
                tape.constant(Tensor::ones([1, 1, 1, 1])),
                tape.constant(Tensor::zeros([1, 1, 1, 1])),
            ))
        })
        .collect();
    let f = net::parallel_branch(&mut tape, d1v, &ts.try_into().unwrap(), &g2.try_into().unwrap()).unwrap();
    let expect = concat_channels(&[tape.value(d1v), &Tensor::zeros([1, 160, 16, 16])]).unwrap();
    assert_eq!(tape.value(f), &expect);
}

#[test]
fn zero_fuse_reduces_m2_to_m1() {
    let m1 = params(Preset::M1, 32, 11);
    let mut tensors = m1.tensors.clone();
    tensors.insert("fuse.weight", Tensor::zeros([1, 161, 3, 3]));
    tensors.insert("fuse.bias", Tensor::zeros([1, 1, 1, 1]));
    let m2 = ModelParams::new(ModelConfig::preset(Preset::M2).with_input_size(32, 32), tensors).unwrap();
    let x = image(2, 3, 32, 12);
    let a = net::forward(&x, &m1).unwrap();
    let b = net::forward(&x, &m2).unwrap();
    assert_eq!(a.sf, a.s1);
    assert_eq!(b.sf, a.sf);
    assert_eq!(b.s1, a.s1);
}

#[test]
fn m5_end_to_end_range_and_determinism() {
    let p = params(Preset::M5, 64, 13);
    let x = image(1, 3, 64, 14);
    let a = net::forward(&x, &p).unwrap();
    assert_eq!(a.sf.shape().dims(), [1, 1, 64, 64]);
    assert!(in_open_unit(&a.sf) && in_open_unit(&a.s1));
    assert_eq!(a.trace.levels.len(), 5);
    assert!(a.trace.values().all(|g| g > 0.0 && g < 1.0));
    let b = net::forward(&x, &p).unwrap();
    assert_eq!(a.sf, b.sf);
    assert_eq!(a.trace, b.trace);

    let mut tape = Tape::new();
    let bound = p.tensors.bind(&mut tape);
    let xn = tape.constant(x);
    run(&mut tape, &p.config, &bound, xn, None).unwrap();
    assert!(tape.replay_matches().unwrap());
}

#[test]
fn m5_routes_level5_through_context_module() {
    let p = params(Preset::M5, 32, 15);
    let x = image(1, 3, 32, 16);
    let base = net::forward(&x, &p).unwrap();
    let mut q = p.clone();
    let w = q.get("aspp.fuse.weight").unwrap().map(|v| v * 1.5);
    q.set("aspp.fuse.weight", w).unwrap();
    assert_ne!(net::forward(&x, &q).unwrap().sf, base.sf);
}

#[test]
fn all_presets_keep_input_resolution() {
    for preset in Preset::ALL {
        let p = params(preset, 32, 17);
        let x = image(1, 3, 32, 18);
        let pred = if preset == Preset::TwoStream {
            net::forward_two_stream(&x, &image(1, 1, 32, 19), &p).unwrap()
        } else {
            net::forward(&x, &p).unwrap()
        };
        assert_eq!(pred.sf.shape().dims(), [1, 1, 32, 32], "{preset}");
        assert!(in_open_unit(&pred.sf), "{preset}");
    }
}

#[test]
fn two_stream_runs_and_checks_inputs() {
    let p = params(Preset::TwoStream, 64, 20);
    let rgb = image(1, 3, 64, 21);
    let depth = image(1, 1, 64, 22);
    let a = net::forward_two_stream(&rgb, &depth, &p).unwrap();
    assert_eq!(a.sf.shape().dims(), [1, 1, 64, 64]);
    assert_eq!(a.trace.cross_modal.len(), 5);
    assert_eq!(net::forward_two_stream(&rgb, &depth, &p).unwrap().sf, a.sf);
    assert!(net::forward_two_stream(&rgb, &image(1, 1, 32, 23), &p).is_err());
    assert!(net::forward(&rgb, &p).is_err());
}

/// Single-stream parameters of a two-stream model: the depth encoder and
/// cross-modal units dropped.
fn single_stream_view(p: &ModelParams) -> ModelParams {
    let tensors = p
        .tensors
        .iter()
        .filter(|(n, _)| !n.starts_with("depth_encoder") && !n.starts_with("cross."))
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    ModelParams::new(ModelConfig::preset(Preset::M5).with_input_size(32, 32), tensors).unwrap()
}

#[test]
fn saturated_depth_gate_reduces_to_single_stream() {
    let mut p = params(Preset::TwoStream, 32, 24);
    for (level, c) in [16, 24, 32, 48, 64].into_iter().enumerate() {
        let base = format!("cross.level{}", level + 1);
        p.set(&format!("{base}.gate.weight"), Tensor::zeros([2, 2 * c, 3, 3]))
            .unwrap();
        p.set(
            &format!("{base}.gate.bias"),
            Tensor::new([2, 1, 1, 1], vec![50.0, -50.0]).unwrap(),
        )
        .unwrap();
        p.set(&format!("{base}.rgb.weight"), identity_kernel(c, c)).unwrap();
        p.set(&format!("{base}.rgb.bias"), Tensor::zeros([c, 1, 1, 1])).unwrap();
    }
    let rgb = image(2, 3, 32, 25);
    let depth = image(2, 1, 32, 26);
    let two = net::forward_two_stream(&rgb, &depth, &p).unwrap();
    for g in &two.trace.cross_modal {
        assert!(g.g1.iter().all(|&v| 1.0 - v <= 1e-12));
        assert!(g.g2.iter().all(|&v| v <= 1e-12));
    }
    let single = net::forward(&rgb, &single_stream_view(&p)).unwrap();
    assert!(
        two.sf.max_abs_diff(&single.sf) <= 1e-9,
        "{}",
        two.sf.max_abs_diff(&single.sf)
    );
    assert!(two.s1.max_abs_diff(&single.s1) <= 1e-9);
}

#[test]
fn full_model_gradient_check() {
    let p = params(Preset::M5, 32, 27);
    let summary = check_model_gradients(&p, &image(1, 3, 32, 28), &toy_mask(1, 32), 20, 29);
    for (name, i, a, n) in &summary.samples {
        assert!(
            model_grad::relative_error(*a, *n) <= 1e-4,
            "{name}[{i}]: analytic {a:e} numeric {n:e}"
        );
    }
    eprintln!(
        "worst relative error {:e}, {} kink coordinates redrawn",
        summary.worst, summary.redrawn
    );
}

#[test]
fn gates_influence_the_final_prediction() {
    let p = params(Preset::M4, 32, 30);
    let x = image(2, 3, 32, 31);
    let mut tape = Tape::new();
    let bound = p.tensors.bind(&mut tape);
    let xn = tape.constant(x.clone());
    let nodes = run(&mut tape, &p.config, &bound, xn, None).unwrap();
    let s = tape.sum(nodes.sf).unwrap();
    let grads = tape.backward(s).unwrap();
    let gate_names = p.gate_param_names();
    assert_eq!(gate_names.len(), 12);
    for name in &gate_names {
        assert!(grads.wrt(bound.get(name).unwrap()).l2_norm() > 0.0, "{name}");
    }
    // Numerically: nudging one gate weight moves S^F.
    let base = net::forward(&x, &p).unwrap();
    let mut q = p.clone();
    let w = q.get("gate.level3.weight").unwrap();
    q.set("gate.level3.weight", w.with_value(0, w.data()[0] + 1e-3))
        .unwrap();
    assert!(net::forward(&x, &q).unwrap().sf.max_abs_diff(&base.sf) > 0.0);
}
