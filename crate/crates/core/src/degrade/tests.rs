use image::{Rgb, RgbImage};

use super::ops::{self, GreyF};
use super::synth::{synthetic_dataset, synthetic_video};
use super::*;

fn bank() -> NoiseBank {
    NoiseBank::generated(1, 64, 3).unwrap()
}

fn in_unit(t: &Tensor5) -> bool {
    t.data().iter().all(|v| (0.0..=1.0).contains(v))
}

#[test]
fn noise_is_deterministic_and_bounded() {
    for kind in NoiseKind::GENERATED {
        let a = generate_noise(kind, 96, 64, 11).unwrap();
        let b = generate_noise(kind, 96, 64, 11).unwrap();
        let c = generate_noise(kind, 96, 64, 12).unwrap();
        assert_eq!(a, b, "{kind:?}");
        assert_ne!(a, c, "{kind:?}");
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    assert!(generate_noise(NoiseKind::Grain, 63, 256, 0).is_err());
    assert!(generate_noise(NoiseKind::Loaded, 64, 64, 0).is_err());
}

#[test]
fn grain_is_zero_mean() {
    for seed in 0..100 {
        let g = generate_noise(NoiseKind::Grain, 256, 256, seed).unwrap();
        let mean = g.iter().map(|&v| v as f64).sum::<f64>() / g.len() as f64;
        assert!(mean.abs() < 0.02, "seed {seed}: {mean}");
    }
}

#[test]
fn scratches_concentrate_in_few_columns() {
    for seed in 0..20 {
        let s = generate_noise(NoiseKind::Scratch, 256, 256, seed).unwrap();
        let mut cols = vec![0.0f64; 256];
        for (x, _, p) in s.enumerate_pixels() {
            cols[x as usize] += p.0[0].abs() as f64;
        }
        let total: f64 = cols.iter().sum();
        assert!(total > 0.0);
        cols.sort_by(|a, b| b.total_cmp(a));
        let (mut acc, mut needed) = (0.0, 0);
        for c in cols {
            acc += c;
            needed += 1;
            if acc >= 0.9 * total {
                break;
            }
        }
        assert!(needed * 10 <= 256, "seed {seed}: {needed} columns");
    }
}

#[test]
fn dust_is_sparse() {
    let d = generate_noise(NoiseKind::Dust, 256, 256, 5).unwrap();
    let nonzero = d.iter().filter(|v| **v != 0.0).count();
    assert!(nonzero > 0 && nonzero < d.len() / 10, "{nonzero}");
}

#[test]
fn bank_round_trips_through_png() {
    let dir = tempfile::tempdir().unwrap();
    let b = bank();
    b.save_dir(dir.path()).unwrap();
    let loaded = NoiseBank::load_dir(dir.path()).unwrap();
    assert_eq!(loaded.len(), b.len());
    for (x, y) in b.images.iter().zip(&loaded.images) {
        let diff = x.data.iter().zip(y.data.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f32::max);
        assert!(diff <= 0.5 / 255.0 + 1e-6, "{diff}");
        assert!(y.data.iter().all(|v| (-0.5..=0.5).contains(v)));
    }
}

#[test]
fn identity_recipe_returns_greyscale_of_target() {
    let clip = synthetic_video(1, 5, 40, 32);
    let refs = synthetic_video(2, 2, 48, 40);
    let recipe = DegradeRecipe::identity(5, 2, 32);
    let s = apply_recipe(&clip, &refs, &NoiseBank::default(), &recipe).unwrap();
    assert_eq!(s.x.data(), s.y_l.data());
    let (l, ab) = crate::colorspace::frames_to_lab(&clip).unwrap();
    assert!(s.y_l.max_abs_diff(&l) < 1e-6);
    assert!(s.y_ab.max_abs_diff(&ab) < 1e-6);
    assert_eq!(s.z.dims(), Dims5::new(1, 3, 2, 32, 32));
}

#[test]
fn joint_geometry_keeps_input_and_target_aligned() {
    let clip = synthetic_video(3, 5, 48, 40);
    let mut recipe = DegradeRecipe::identity(5, 0, 32);
    recipe.geometry = Some(Geometry {
        flip: true,
        edge: 330.0,
        rotation: 3.5,
        crop: [0.3, 0.8],
    });
    recipe.brightness = Some(1.1);
    let s = apply_recipe(&clip, &[], &NoiseBank::default(), &recipe).unwrap();
    let ssd: f64 = s
        .x
        .data()
        .iter()
        .zip(s.y_l.data())
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum();
    assert!(ssd < 1e-6);
    assert_eq!(s.x.dims(), Dims5::new(1, 1, 5, 32, 32));
    assert_eq!(s.z.dims().t, 0);
}

fn checkerboard(size: u32, cell: u32) -> RgbImage {
    RgbImage::from_fn(size, size, |x, y| {
        let v = if ((x / cell) + (y / cell)) % 2 == 0 { 230 } else { 25 };
        Rgb([v, v, v])
    })
}

#[test]
fn blur_removes_high_frequencies() {
    let clip = vec![checkerboard(64, 2); 5];
    let plain = DegradeRecipe::identity(5, 0, 64);
    let blurred = DegradeRecipe {
        blur: Some(4.0),
        ..plain.clone()
    };
    let grey = |s: &TrainingSample| GreyF::from_raw(64, 64, s.x.data()[..64 * 64].to_vec()).unwrap();
    let a = apply_recipe(&clip, &[], &NoiseBank::default(), &plain).unwrap();
    let b = apply_recipe(&clip, &[], &NoiseBank::default(), &blurred).unwrap();
    let (va, vb) = (ops::laplacian_variance(&grey(&a)), ops::laplacian_variance(&grey(&b)));
    assert!(vb < va, "{vb} >= {va}");
    assert!(vb < 0.1 * va);
}

#[test]
fn deterioration_leaves_targets_clean_and_outputs_clamped() {
    let data = synthetic_dataset(7, 3, 12, 48, 40);
    let b = bank();
    for seed in 0..30u64 {
        let refs: Vec<RgbImage> = (0..(seed % 4) as usize).map(|i| data.videos[i % 3].frames[i].clone()).collect();
        let clip = &data.videos[(seed % 3) as usize].frames[..5];
        let recipe = DegradeRecipe::draw(seed, 5, refs.len(), 32);
        let s = apply_recipe(clip, &refs, &b, &recipe).unwrap();
        for t in [&s.x, &s.y_l, &s.y_ab, &s.z] {
            assert!(in_unit(t));
        }
        let clean = DegradeRecipe {
            jpeg_quality: None,
            gaussian: None,
            blur: None,
            x_contrast: None,
            noise: vec![Vec::new(); 5],
            ..recipe.clone()
        };
        let c = apply_recipe(clip, &refs, &NoiseBank::default(), &clean).unwrap();
        assert_eq!(c.y_l.data(), s.y_l.data());
        assert_eq!(c.y_ab.data(), s.y_ab.data());
        assert_eq!(c.x.data(), c.y_l.data());
    }
}

#[test]
fn extreme_noise_is_clamped() {
    let clip = vec![checkerboard(32, 4); 5];
    let mut recipe = DegradeRecipe::draw(9, 5, 0, 32);
    for layers in &mut recipe.noise {
        for l in layers.iter_mut() {
            l.amplitude = 50.0;
        }
    }
    let s = apply_recipe(&clip, &[], &bank(), &recipe).unwrap();
    assert!(in_unit(&s.x));
    assert!(s.x.data().iter().any(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn recipes_replay_bit_identically() {
    let data = synthetic_dataset(8, 2, 10, 40, 40);
    let b = bank();
    let clip = &data.videos[0].frames[2..7];
    let refs = vec![data.videos[1].frames[3].clone()];
    let recipe = DegradeRecipe::draw(42, 5, 1, 32);
    let json = serde_json::to_string(&recipe).unwrap();
    let back: DegradeRecipe = serde_json::from_str(&json).unwrap();
    assert_eq!(back, recipe);
    let a = apply_recipe(clip, &refs, &b, &recipe).unwrap();
    let c = apply_recipe(clip, &refs, &b, &back).unwrap();
    assert_eq!(a.x.data(), c.x.data());
    assert_eq!(a.z.data(), c.z.data());
    assert_eq!(DegradeRecipe::draw(42, 5, 1, 32), recipe);
    assert_ne!(DegradeRecipe::draw(43, 5, 1, 32), recipe);
}

#[test]
fn noise_needs_a_bank() {
    let clip = vec![checkerboard(32, 4); 5];
    let recipe = DegradeRecipe::draw(1, 5, 0, 32);
    assert!(matches!(
        apply_recipe(&clip, &[], &NoiseBank::default(), &recipe),
        Err(Error::EmptyNoiseBank)
    ));
    let short = DegradeRecipe::draw(1, 4, 0, 32);
    assert!(apply_recipe(&clip, &[], &bank(), &short).is_err());
}

#[test]
fn reference_counts_are_uniform_and_first_is_nearby() {
    let data = synthetic_dataset(1, 3, 40, 16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let mut counts = [0usize; MAX_REFERENCES + 1];
    for _ in 0..n {
        let clip = (rng.random_range(0..3), rng.random_range(0..=35));
        let refs = sample_references(&data, clip, 5, &mut rng);
        counts[refs.len()] += 1;
        if let Some(&(v, f)) = refs.first() {
            assert_eq!(v, clip.0);
            assert!(f + 5 >= clip.1 && f <= clip.1 + 4 + 5, "{f} vs {clip:?}");
        }
    }
    for c in counts {
        let freq = c as f64 / n as f64;
        assert!((freq - 1.0 / 7.0).abs() < 0.02, "{counts:?}");
    }
}

#[test]
fn generator_is_reproducible_and_checks_data() {
    let data = synthetic_dataset(2, 2, 8, 40, 36);
    let b = bank();
    let gen = SampleGenerator {
        dataset: &data,
        bank: &b,
        size: 32,
        clip_len: 5,
    };
    let (a, ra) = gen.sample(3).unwrap();
    let (c, rc) = gen.sample(3).unwrap();
    assert_eq!(ra, rc);
    assert_eq!(a.x.data(), c.x.data());
    assert_eq!(a.z.data(), c.z.data());
    assert_eq!(a.x.dims(), Dims5::new(1, 1, 5, 32, 32));

    let empty = Dataset::default();
    let gen = SampleGenerator { dataset: &empty, ..gen };
    assert!(matches!(gen.sample(0), Err(Error::EmptyDataset)));
    let short = synthetic_dataset(2, 1, 3, 40, 36);
    let gen = SampleGenerator { dataset: &short, ..gen };
    assert!(matches!(gen.sample(0), Err(Error::VideoTooShort { .. })));
}

#[test]
fn jpeg_quality_orders_the_error() {
    let img = synthetic_video(4, 1, 64, 48).remove(0);
    let f = ops::to_float(&img);
    let err = |q: u32| {
        let mut g = f.clone();
        ops::jpeg_rgb(&mut g, q);
        g.iter().zip(f.iter()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>()
    };
    assert!(err(15) > err(40));
    assert!(err(40) > err(95));
    let mut flat = GreyF::from_pixel(20, 12, image::Luma([0.4]));
    ops::jpeg_grey(&mut flat, 15);
    assert!(flat.iter().all(|v| (v - 0.4).abs() < 0.01));
    assert_eq!(ops::quant_table(ops::QuantTable::Luma, 50)[0], 16.0);
    assert_eq!(ops::quant_table(ops::QuantTable::Luma, 25)[0], 32.0);
}

#[test]
fn validation_split_holds_out_videos() {
    let data = synthetic_dataset(1, 5, 6, 16, 16);
    let (train, val) = data.split_validation(4);
    assert_eq!(train.len() + val.len(), 5);
    assert!(!train.is_empty() && !val.is_empty());
    let one = synthetic_dataset(1, 1, 6, 16, 16);
    let (t, v) = one.split_validation(4);
    assert_eq!((t.len(), v.len()), (1, 1));
}

#[test]
fn eval_deterioration_keeps_extent() {
    let clip = synthetic_video(6, 7, 48, 32);
    let recipe = DegradeRecipe::draw_deterioration(3, 7);
    let s = apply_recipe(&clip, &[], &bank(), &recipe).unwrap();
    assert_eq!(s.x.dims(), Dims5::new(1, 1, 7, 32, 48));
    let (l, _) = crate::colorspace::frames_to_lab(&clip).unwrap();
    assert!(s.y_l.max_abs_diff(&l) < 1e-6);
    assert!(s.x.max_abs_diff(&l) > 0.01);
}
