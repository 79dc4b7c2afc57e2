use super::*;
use crate::numerics::{grad_check, Rng, Tape};

fn tiny_cfg() -> EncoderConfig {
    EncoderConfig {
        backbone: BackboneConfig {
            n_mels: 8,
            channels: vec![2, 2, 3, 3],
            pools: vec![(2, 2), (2, 2), (1, 1), (1, 1)],
        },
        n_keywords: 5,
        head_dim: 4,
        c1: 6,
    }
}

fn rand_feat(rng: &mut Rng, t: usize, m: usize) -> Tensor {
    Tensor::from_vec(vec![t, m], (0..t * m).map(|_| rng.uniform_range(-2.0, 2.0)).collect())
}

#[test]
fn zero_convs_give_per_channel_constant_maps() {
    let mut pset = ParamSet::new(0);
    let enc = KeywordEncoder::new(&mut pset, &tiny_cfg()).unwrap();
    // zero conv weights, distinct biases, distinct norm shifts
    for (_, p) in pset.clone().iter() {
        let id = pset.lookup(&p.name).unwrap();
        if p.name.contains("conv.w") {
            for v in pset.get_mut(id).value.data_mut() {
                *v = 0.0;
            }
        }
        if p.name.contains("conv.b") || p.name.contains("norm.b") {
            for (i, v) in pset.get_mut(id).value.data_mut().iter_mut().enumerate() {
                *v = 0.3 * (i as f64 + 1.0);
            }
        }
    }
    let mut tape = Tape::new();
    let track = TrackSet::none(&pset);
    let feat = Tensor::zeros(vec![12, 8]);
    let outs = enc.backbone_forward(&mut tape, &pset, &track, &feat).unwrap();
    for &out in &outs {
        let t = tape.value(out);
        let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        for ch in 0..c {
            let plane = &t.data()[ch * h * w..(ch + 1) * h * w];
            for v in plane {
                assert_eq!(*v, plane[0], "channel {ch} not constant");
            }
        }
    }
}

#[test]
fn forward_is_deterministic_across_runs() {
    let cfg = tiny_cfg();
    let mut rng = Rng::seed_from(42);
    let feat = rand_feat(&mut rng, 16, 8);
    let run = || {
        let mut pset = ParamSet::new(7);
        let enc = KeywordEncoder::new(&mut pset, &cfg).unwrap();
        let out = enc.infer(&pset, &feat).unwrap();
        (out.y_hat, out.x_seq)
    };
    let (y1, x1) = run();
    let (y2, x2) = run();
    for (a, b) in y1.data().iter().zip(y2.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    for (a, b) in x1.data().iter().zip(x2.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn per_sample_outputs_independent_of_other_samples() {
    let cfg = tiny_cfg();
    let mut pset = ParamSet::new(3);
    let enc = KeywordEncoder::new(&mut pset, &cfg).unwrap();
    let mut rng = Rng::seed_from(8);
    let a = rand_feat(&mut rng, 12, 8);
    let b = rand_feat(&mut rng, 12, 8);
    let ya_alone = enc.infer(&pset, &a).unwrap().y_hat;
    let _ = enc.infer(&pset, &b).unwrap();
    let ya_again = enc.infer(&pset, &a).unwrap().y_hat;
    assert_eq!(ya_alone, ya_again);
}

#[test]
fn hierarchy_heads_constant_maps_and_identity_linear() {
    // head over a constant map equals the linear applied to the
    // channel-mean vector; with identity weights it is the GAP itself
    let cfg = EncoderConfig {
        backbone: BackboneConfig {
            n_mels: 4,
            channels: vec![3, 3, 3, 3, 3],
            pools: vec![(1, 1); 5],
        },
        n_keywords: 2,
        head_dim: 3,
        c1: 4,
    };
    let mut pset = ParamSet::new(0);
    let enc = KeywordEncoder::new(&mut pset, &cfg).unwrap();
    for i in 1..=3 {
        let w = pset.lookup(&format!("encoder.head{i}.w")).unwrap();
        let b = pset.lookup(&format!("encoder.head{i}.b")).unwrap();
        for (j, v) in pset.get_mut(w).value.data_mut().iter_mut().enumerate() {
            *v = if j % 4 == 0 { 1.0 } else { 0.0 }; // 3x3 identity
        }
        for v in pset.get_mut(b).value.data_mut() {
            *v = 0.0;
        }
    }
    let mut tape = Tape::new();
    let track = TrackSet::none(&pset);
    // constant per-channel maps; taps land on blocks 3, 4, 5 (1-based)
    let maps: Vec<NodeId> = (0..5)
        .map(|i| {
            let mut t = Tensor::zeros(vec![3, 2, 2]);
            for ch in 0..3 {
                for k in 0..4 {
                    t.data_mut()[ch * 4 + k] = (i + 1) as f64 * (ch as f64 + 0.5);
                }
            }
            tape.constant(t)
        })
        .collect();
    let (f1, f2, f3) = enc.hierarchy_heads(&mut tape, &pset, &track, &maps).unwrap();
    for (f, tap) in [f1, f2, f3].iter().zip([2usize, 3, 4]) {
        let expect: Vec<f64> = (0..3).map(|ch| (tap + 1) as f64 * (ch as f64 + 0.5)).collect();
        for (a, b) in tape.value(*f).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "tap {tap}: {a} vs {b}");
        }
    }
}

#[test]
fn predict_keywords_analytic_values() {
    let cfg = tiny_cfg();
    let mut pset = ParamSet::new(0);
    let enc = KeywordEncoder::new(&mut pset, &cfg).unwrap();
    // zero weights + zero bias -> 0.5 everywhere
    let wid = pset.lookup("encoder.cls.w").unwrap();
    let bid = pset.lookup("encoder.cls.b").unwrap();
    for v in pset.get_mut(wid).value.data_mut() {
        *v = 0.0;
    }
    let mut tape = Tape::new();
    let track = TrackSet::none(&pset);
    let f = tape.constant(Tensor::zeros(vec![4]));
    let (_, y) = enc.predict_keywords(&mut tape, &pset, &track, f, f, f).unwrap();
    for v in tape.value(y).data() {
        assert_eq!(*v, 0.5);
    }
    // rigged bias logits [ln 3, -ln 3, 0, 0, 0] -> [0.75, 0.25, ...]
    pset.get_mut(bid).value.data_mut()[0] = 3f64.ln();
    pset.get_mut(bid).value.data_mut()[1] = -(3f64.ln());
    let mut tape = Tape::new();
    let f = tape.constant(Tensor::zeros(vec![4]));
    let (_, y) = enc.predict_keywords(&mut tape, &pset, &track, f, f, f).unwrap();
    assert!((tape.value(y).data()[0] - 0.75).abs() < 1e-12);
    assert!((tape.value(y).data()[1] - 0.25).abs() < 1e-12);
}

#[test]
fn predict_keywords_monotone_in_positive_weight_input() {
    let cfg = tiny_cfg();
    let mut pset = ParamSet::new(5);
    let enc = KeywordEncoder::new(&mut pset, &cfg).unwrap();
    let wid = pset.lookup("encoder.cls.w").unwrap();
    // force w[0, 0] > 0
    pset.get_mut(wid).value.data_mut()[0] = 0.8;
    let track = TrackSet::none(&pset);
    let probe = |x0: f64| {
        let mut tape = Tape::new();
        let mut f1v = Tensor::zeros(vec![4]);
        f1v.data_mut()[0] = x0;
        let f1 = tape.constant(f1v);
        let f23 = tape.constant(Tensor::zeros(vec![4]));
        let (_, y) = enc.predict_keywords(&mut tape, &pset, &track, f1, f23, f23).unwrap();
        tape.value(y).data()[0]
    };
    assert!(probe(1.0) > probe(0.0));
}

#[test]
fn bce_loss_analytic_values() {
    let mut tape = Tape::new();
    let half = tape.constant(Tensor::vector(vec![0.5]));
    let loss = bce_loss(&mut tape, &[1.0], half).unwrap();
    assert!((tape.value(loss).item() - 2f64.ln()).abs() < 1e-12);
    let loss0 = bce_loss(&mut tape, &[0.0], half).unwrap();
    assert!((tape.value(loss0).item() - 2f64.ln()).abs() < 1e-12);

    // perfect predictions after clamping: loss at the eps level
    let perfect = tape.constant(Tensor::vector(vec![1.0, 0.0, 1.0]));
    let loss = bce_loss(&mut tape, &[1.0, 0.0, 1.0], perfect).unwrap();
    assert!(tape.value(loss).item() >= 0.0);
    assert!(tape.value(loss).item() <= 3.0 * BCE_EPS);

    // targets outside [0, 1] rejected
    let y = tape.constant(Tensor::vector(vec![0.5]));
    assert!(bce_loss(&mut tape, &[1.5], y).is_err());
}

#[test]
fn bce_loss_nonnegative_on_random_inputs() {
    let mut rng = Rng::seed_from(17);
    for _ in 0..50 {
        let n = 1 + rng.uniform_usize(8);
        let y: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let mut tape = Tape::new();
        let pn = tape.constant(Tensor::vector(p));
        let loss = bce_loss(&mut tape, &y, pn).unwrap();
        assert!(tape.value(loss).item() >= 0.0);
    }
}

#[test]
fn topk_ordering_and_ties() {
    assert_eq!(topk_keywords(&[0.9, 0.1, 0.8, 0.7, 0.2], 3).unwrap(), vec![0, 2, 3]);
    assert_eq!(topk_keywords(&[0.5, 0.5, 0.5], 2).unwrap(), vec![0, 1]);
    let perm = topk_keywords(&[0.3, 0.9, 0.1, 0.5], 4).unwrap();
    let mut sorted = perm.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, vec![0, 1, 2, 3]);
    assert!(topk_keywords(&[0.5], 2).is_err());
}

#[test]
fn topk_invariant_under_monotone_transform() {
    let mut rng = Rng::seed_from(23);
    for _ in 0..50 {
        let n = 3 + rng.uniform_usize(10);
        let y: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let k = 1 + rng.uniform_usize(n);
        let mapped: Vec<f64> = y.iter().map(|v| (3.0 * v + 1.0).exp()).collect();
        assert_eq!(topk_keywords(&y, k).unwrap(), topk_keywords(&mapped, k).unwrap());
    }
}

#[test]
fn encoder_bce_path_gradient_matches_finite_differences() {
    let cfg = EncoderConfig {
        backbone: BackboneConfig {
            n_mels: 6,
            channels: vec![2, 2, 2],
            pools: vec![(2, 2), (1, 1), (2, 1)],
        },
        n_keywords: 3,
        head_dim: 3,
        c1: 4,
    };
    for seed in 0..3u64 {
        let mut pset = ParamSet::new(seed);
        let enc = KeywordEncoder::new(&mut pset, &cfg).unwrap();
        let mut rng = Rng::seed_from(seed + 100);
        let feat = rand_feat(&mut rng, 10, 6);
        let targets = vec![1.0, 0.0, 1.0];
        let all_ids: Vec<_> = pset.ids().collect();
        let err = grad_check(
            &mut pset,
            &all_ids,
            move |tape, pset| {
                let track = TrackSet::all(pset);
                let nodes = enc.forward(tape, pset, &track, &feat)?;
                bce_loss(tape, &targets, nodes.y_hat)
            },
            // central differences at 2e-4: balances truncation against the
            // float noise floor a smaller step hits on coordinates whose
            // gradient is near zero
            2e-4,
            4,
            &mut rng,
        )
        .unwrap();
        assert!(err <= 1e-4, "seed {seed}: rel err {err}");
    }
}
