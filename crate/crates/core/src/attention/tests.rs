use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::reference::{self as oracle, RefAttention, RefTensor};
use crate::gradcheck::{check_op, GradCheck};
use crate::tensor::Mode;

fn random(dims: Dims5, seed: u64) -> Tensor5 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor5::from_fn(dims, |_| rng.random_range(-1.0..1.0))
}

fn layer(c: usize, cr: usize, gamma: f32, seed: u64) -> (ParamStore, AttentionParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = AttentionParams::new(&mut store, "attn", c, cr, gamma, &mut rng).unwrap();
    // Non-zero biases so they matter in every check.
    for id in [p.source_b, p.key_b, p.value_b] {
        for v in store.tensor_mut(id).data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    (store, p)
}

fn run(store: &ParamStore, p: &AttentionParams, hs: &Tensor5, hr: Option<&Tensor5>) -> (Tensor5, Option<Tensor5>) {
    let mut g = Graph::with_params(store, Mode::Eval);
    let hs = g.input(hs.clone()).unwrap();
    let hr = hr.map(|t| g.input(t.clone()).unwrap());
    let out = source_reference_attention(&mut g, hs, hr, p).unwrap();
    (
        g.value(out.output).clone(),
        out.weights.map(|w| g.value(w).clone()),
    )
}

fn to_ref(store: &ParamStore, p: &AttentionParams) -> RefAttention {
    let r = |id| RefTensor::from(store.tensor(id));
    RefAttention {
        source_w: r(p.source_w),
        source_b: r(p.source_b),
        key_w: r(p.key_w),
        key_b: r(p.key_b),
        value_w: r(p.value_w),
        value_b: r(p.value_b),
        gamma: store.tensor(p.gamma).item() as f64,
    }
}

#[test]
fn source_reference_shapes_and_matrix_size() {
    let (store, p) = layer(64, 64, 0.3, 1);
    let hs = random(Dims5::new(1, 64, 5, 8, 8), 2);
    let hr = random(Dims5::new(1, 64, 3, 8, 8), 3);
    let (y, w) = run(&store, &p, &hs, Some(&hr));
    assert_eq!(y.dims(), hs.dims());
    let w = w.unwrap();
    assert_eq!(w.dims(), Dims5::new(1, 192, 1, 1, 320));
    assert_eq!(w.numel(), matrix_len(hs.dims(), hr.dims()));
}

#[test]
fn self_attention_at_sixteenth_resolution() {
    let (store, p) = layer(512, 512, 0.1, 4);
    let h = random(Dims5::new(1, 512, 5, 4, 4), 5);
    let mut g = Graph::with_params(&store, Mode::Eval);
    let hv = g.input(h.clone()).unwrap();
    let out = self_attention(&mut g, hv, &p).unwrap();
    assert_eq!(g.dims(out.output), h.dims());
    assert_eq!(g.dims(out.weights.unwrap()), Dims5::new(1, 80, 1, 1, 80));
}

#[test]
fn absent_references_and_zero_gamma_pass_through() {
    let hs = random(Dims5::new(2, 16, 3, 4, 4), 6);
    let (store, p) = layer(16, 16, 0.8, 7);
    let (y, w) = run(&store, &p, &hs, None);
    assert_eq!(y.data(), hs.data());
    assert!(w.is_none());

    let empty = Tensor5::zeros(Dims5::new(2, 16, 0, 4, 4));
    let (y, _) = run(&store, &p, &hs, Some(&empty));
    assert_eq!(y.data(), hs.data());

    let (store, p) = layer(16, 16, 0.0, 8);
    let hr = random(Dims5::new(2, 16, 2, 4, 4), 9);
    let (y, w) = run(&store, &p, &hs, Some(&hr));
    assert_eq!(y.data(), hs.data());
    assert!(w.is_some());
}

#[test]
fn single_reference_position_broadcasts_value() {
    let gamma = 0.6;
    let (store, p) = layer(8, 8, gamma, 10);
    let hs = random(Dims5::new(1, 8, 2, 3, 3), 11);
    let hr = random(Dims5::new(1, 8, 1, 1, 1), 12);
    let (y, w) = run(&store, &p, &hs, Some(&hr));
    assert!(w.unwrap().data().iter().all(|&v| v == 1.0));
    let vw = store.tensor(p.value_w);
    let vb = store.tensor(p.value_b);
    for c in 0..8 {
        let v: f64 = vb.data()[c] as f64
            + (0..8)
                .map(|ci| vw.at([c, ci, 0, 0, 0]) as f64 * hr.data()[ci] as f64)
                .sum::<f64>();
        for i in 0..18 {
            let k = c * 18 + i;
            let expected = hs.data()[k] as f64 + gamma as f64 * v;
            assert!((y.data()[k] as f64 - expected).abs() < 1e-5);
        }
    }
}

#[test]
fn weights_are_distributions_over_reference_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for draw in 0..5 {
        let c = 8 * rng.random_range(1..=3);
        let b = rng.random_range(1..=2);
        let sd = Dims5::new(b, c, rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=5));
        let rd = Dims5::new(b, c, rng.random_range(1..=3), rng.random_range(1..=5), rng.random_range(1..=5));
        let (store, p) = layer(c, c, 0.5, 100 + draw);
        let base = random(sd, 200 + draw);
        // Larger logits push the softmax towards saturation.
        let hs = Tensor5::from_fn(sd, |i| 3.0 * base.at(i));
        let hr = random(rd, 300 + draw);
        let (y, w) = run(&store, &p, &hs, Some(&hr));
        assert_eq!(y.dims(), sd);
        let w = w.unwrap();
        assert_eq!(w.numel(), b * matrix_len(sd, rd), "draw {draw}");
        let (nr, ns) = (rd.volume(), sd.volume());
        for bi in 0..b {
            for s in 0..ns {
                let col: Vec<f32> = (0..nr).map(|r| w.data()[(bi * nr + r) * ns + s]).collect();
                assert!(col.iter().all(|&v| v >= 0.0));
                let total: f64 = col.iter().map(|&v| v as f64).sum();
                assert!((total - 1.0).abs() < 1e-5, "draw {draw}: {total}");
            }
        }
    }
}

#[test]
fn permuting_reference_positions_leaves_output_unchanged() {
    let (store, p) = layer(16, 16, 0.9, 14);
    let hs = random(Dims5::new(1, 16, 2, 3, 3), 15);
    let rd = Dims5::new(1, 16, 3, 2, 4);
    let hr = random(rd, 16);
    // Reverse the flattened reference positions jointly across channels.
    let n = rd.volume();
    let permuted = Tensor5::from_fn(rd, |i| {
        let flat = (i[2] * rd.h + i[3]) * rd.w + i[4];
        hr.data()[i[1] * n + (n - 1 - flat)]
    });
    let (a, _) = run(&store, &p, &hs, Some(&hr));
    let (b, _) = run(&store, &p, &hs, Some(&permuted));
    assert!(a.max_abs_diff(&b) < 1e-5);
}

#[test]
fn forward_matches_reference_evaluation() {
    let (store, p) = layer(16, 24, 0.7, 17);
    let hs = random(Dims5::new(2, 16, 2, 4, 4), 18);
    let hr = random(Dims5::new(2, 24, 2, 4, 2), 19);
    let (y, _) = run(&store, &p, &hs, Some(&hr));
    let want = oracle::attention(&RefTensor::from(&hs), &RefTensor::from(&hr), &to_ref(&store, &p));
    let err = y
        .data()
        .iter()
        .zip(&want.data)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn gradients_match_finite_differences() {
    let (store, p) = layer(8, 8, 0.7, 20);
    let hs = random(Dims5::new(1, 8, 2, 2, 2), 21);
    let hr = random(Dims5::new(1, 8, 2, 2, 1), 22);
    let t = |id| store.tensor(id).clone();
    let inputs = [
        hs,
        hr,
        t(p.source_w),
        t(p.source_b),
        t(p.key_w),
        t(p.key_b),
        t(p.value_w),
        t(p.value_b),
        t(p.gamma),
    ];
    let report = check_op(
        &GradCheck::default(),
        &inputs,
        |g, v| {
            let vars = AttentionVars {
                source_w: v[2],
                source_b: v[3],
                key_w: v[4],
                key_b: v[5],
                value_w: v[6],
                value_b: v[7],
                gamma: v[8],
            };
            Ok(attend(g, v[0], Some(v[1]), &vars)?.output)
        },
        |r| {
            let params = RefAttention {
                source_w: r[2].clone(),
                source_b: r[3].clone(),
                key_w: r[4].clone(),
                key_b: r[5].clone(),
                value_w: r[6].clone(),
                value_b: r[7].clone(),
                gamma: r[8].data[0],
            };
            oracle::attention(&r[0], &r[1], &params)
        },
    )
    .unwrap();
    assert!(report.forward_max_abs < 1e-5);
    assert!(
        report.grads.passed(),
        "max rel {:.2e}: {:?}",
        report.grads.max_rel_err,
        &report.grads.mismatches[..report.grads.mismatches.len().min(5)]
    );
}

#[test]
fn self_attention_gradients_match_finite_differences() {
    let (store, p) = layer(8, 8, 0.5, 23);
    let h = random(Dims5::new(1, 8, 3, 2, 2), 24);
    let t = |id| store.tensor(id).clone();
    let inputs = [h, t(p.source_w), t(p.key_w), t(p.value_w), t(p.gamma)];
    let biases = [t(p.source_b), t(p.key_b), t(p.value_b)];
    let report = check_op(
        &GradCheck::default(),
        &inputs,
        |g, v| {
            let b: Vec<Var> = biases.iter().map(|t| g.constant(t.clone())).collect();
            let vars = AttentionVars {
                source_w: v[1],
                source_b: b[0],
                key_w: v[2],
                key_b: b[1],
                value_w: v[3],
                value_b: b[2],
                gamma: v[4],
            };
            Ok(attend(g, v[0], Some(v[0]), &vars)?.output)
        },
        |r| {
            let params = RefAttention {
                source_w: r[1].clone(),
                source_b: RefTensor::from(&biases[0]),
                key_w: r[2].clone(),
                key_b: RefTensor::from(&biases[1]),
                value_w: r[3].clone(),
                value_b: RefTensor::from(&biases[2]),
                gamma: r[4].data[0],
            };
            oracle::attention(&r[0], &r[0], &params)
        },
    )
    .unwrap();
    assert!(report.grads.passed(), "{:?}", report.grads);
}

#[test]
fn rejects_bad_channels_batches_and_non_finite_values() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    assert!(AttentionParams::new(&mut store, "bad", 12, 12, 0.0, &mut rng).is_err());

    let (store, p) = layer(8, 8, 0.1, 26);
    let mut g = Graph::with_params(&store, Mode::Eval);
    let hs = g.input(random(Dims5::new(2, 8, 1, 2, 2), 27)).unwrap();
    let hr = g.input(random(Dims5::new(1, 8, 1, 2, 2), 28)).unwrap();
    assert!(matches!(
        source_reference_attention(&mut g, hs, Some(hr), &p),
        Err(Error::Dimension { axis: "batch", .. })
    ));

    let mut bad = random(Dims5::new(2, 8, 1, 2, 2), 29);
    bad.data_mut()[3] = f32::NAN;
    let bad = g.constant(bad);
    assert!(matches!(
        source_reference_attention(&mut g, bad, None, &p),
        Err(Error::NonFinite { .. })
    ));
}
