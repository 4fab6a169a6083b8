use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use streamdepth::align::{absrel, delta1, eval_first_frame, eval_global, least_squares_align, Horizon};
use streamdepth::align::{scale_drift_curve, DepthSequence, SequenceKind};
use streamdepth::cache::{CacheBank, FeatureCache, PrecisionMode};
use streamdepth::dataio::{decode_pfm, decode_ppm, encode_pfm, encode_ppm, FloatMap, RgbImage};
use streamdepth::gradcheck::gradcheck;
use streamdepth::losses::{loss_sascon, loss_ssi_scene, loss_tgm, loss_tgm_aligned, Targets};
use streamdepth::motion::{LatentFeatures, Layout, WindowedMask};
use streamdepth::tape::{Tape, Var};
use streamdepth::tensor::{matmul, softmax_rows, Tensor};
use streamdepth::train::{augment_frame, AugmentConfig};

fn tensor(rows: usize, cols: usize, data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    vec(-1.0f64..1.0, rows * cols).prop_map(move |d| tensor(rows, cols, d))
}

fn latent(c: usize) -> Tensor<f32> {
    Tensor::new(vec![1, 2], vec![c as f32, -(c as f32)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_row_shifts(
        x in matrix(3, 5),
        shift in vec(-20.0f64..20.0, 3),
    ) {
        let s = softmax_rows(&x);
        for r in 0..3 {
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let mut shifted = x.clone();
        for (r, k) in shift.iter().enumerate() {
            for v in &mut shifted.data_mut()[r * 5..(r + 1) * 5] {
                *v += k;
            }
        }
        prop_assert!(softmax_rows(&shifted).max_abs_diff(&s) < 1e-6);
    }

    #[test]
    fn matmul_is_associative(a in matrix(3, 4), b in matrix(4, 2), c in matrix(2, 5)) {
        let (a, b, c) = (a.cast::<f32>(), b.cast::<f32>(), c.cast::<f32>());
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 1e-5);
    }

    #[test]
    fn tape_ops_match_finite_differences(
        x in matrix(2, 3),
        w in matrix(3, 3),
        b in vec(-1.0f64..1.0, 3),
        keys in matrix(2, 3),
    ) {
        let b = tensor(1, 3, b);
        let f = |tape: &mut Tape<f64>, v: &[Var]| {
            let h = tape.linear(v[0], v[1], v[2])?;
            let h = tape.tanh(h)?;
            let gain = tape.constant(Tensor::full(&[3], 1.3))?;
            let bias = tape.constant(Tensor::full(&[3], 0.1))?;
            let h = tape.layer_norm(h, gain, bias, 1e-5)?;
            let k1 = tape.tanh(v[3])?;
            let a = tape.attend(h, &[v[3], k1], &[k1, v[3]])?;
            let s = tape.softmax_rows(a)?;
            let m = tape.mul(s, h)?;
            let d = tape.div(m, v[3])?;
            let p = tape.matmul(d, v[1])?;
            tape.mean(p)
        };
        // keep the divisor away from zero
        let keys = tensor(2, 3, keys.data().iter().map(|v| v.signum() * (0.5 + v.abs())).collect());
        let report = gradcheck(f, &[x, w, b, keys], 1e-4, 1e-4).unwrap();
        prop_assert!(report.passed(), "{:?}", report.max_rel_err);
    }

    #[test]
    fn cache_is_bounded_fifo_with_monotone_footprint(
        cap in 1usize..6,
        gaps in vec(1usize..4, 1..30),
    ) {
        let mut cache = FeatureCache::<f32>::new(0, cap, PrecisionMode::Full32).unwrap();
        let mut inserted = Vec::new();
        let mut evicted = Vec::new();
        let mut last_bytes = 0;
        let mut t = 0;
        for g in gaps {
            t += g;
            if let Some(e) = cache.push_evict(t, &latent(t)).unwrap() {
                evicted.push(e);
            }
            inserted.push(t);
            prop_assert!(cache.len() <= cap);
            let idx = cache.frame_indices();
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            let bytes = cache.memory_footprint();
            if inserted.len() <= cap {
                prop_assert!(bytes >= last_bytes);
            } else {
                prop_assert_eq!(bytes, last_bytes);
            }
            last_bytes = bytes;
        }
        prop_assert_eq!(&evicted[..], &inserted[..evicted.len()]);
        prop_assert_eq!(cache.frame_indices(), inserted[evicted.len()..].to_vec());
    }

    #[test]
    fn single_cache_bank_matches_plain_cache(cap in 1usize..6, n in 1usize..25) {
        let mut bank = CacheBank::<f32>::new(0, 1, cap, PrecisionMode::Full32).unwrap();
        let mut cache = FeatureCache::<f32>::new(0, cap, PrecisionMode::Full32).unwrap();
        for t in 0..n {
            let (slot, ev_bank) = bank.push(t, &latent(t)).unwrap();
            let ev_cache = cache.push_evict(t, &latent(t)).unwrap();
            prop_assert_eq!(slot, 0);
            prop_assert_eq!(ev_bank, ev_cache);
            prop_assert_eq!(bank.window(0), cache.window());
        }
    }

    #[test]
    fn bank_routes_by_modulus_after_warmup(m in 2usize..4, cap in 1usize..5, n in 1usize..30) {
        let mut bank = CacheBank::<f32>::new(0, m, cap, PrecisionMode::Full32).unwrap();
        for t in 0..n {
            let (slot, _) = bank.push(t, &latent(t)).unwrap();
            if t >= cap {
                prop_assert_eq!(slot, t % m);
                for (k, c) in bank.caches().iter().enumerate() {
                    let idx = c.frame_indices();
                    prop_assert!(idx.iter().all(|i| i % m == k));
                    prop_assert!(idx.windows(2).all(|w| w[1] - w[0] == m));
                }
            }
        }
    }

    #[test]
    fn reorder_roundtrip_is_identity(n in 1usize..5, s in 1usize..5, c in 1usize..4, seed in any::<u64>()) {
        let data: Vec<f32> = (0..n * s * c).map(|i| (i as u64 ^ seed) as f32).collect();
        let x = LatentFeatures::new(n, s, c, Layout::FrameMajor, data).unwrap();
        let back = x.to_token_major().to_frame_major();
        prop_assert_eq!(back.data(), x.data());
        for (ni, si, ci) in [(0, 0, 0), (n - 1, s - 1, c - 1)] {
            prop_assert_eq!(x.to_token_major().get(ni, si, ci), x.get(ni, si, ci));
        }
    }

    #[test]
    fn mask_is_banded(c in 1usize..10, q in 0usize..30, k in 0usize..30) {
        let m = WindowedMask::new(c, 30).unwrap();
        prop_assert_eq!(m.admissible(q, k), k <= q && q - k < c);
        prop_assert_eq!(m.window_start(q), (0..=q).find(|&j| m.admissible(q, j)).unwrap());
    }

    #[test]
    fn ls_fit_is_optimal(
        p in vec(-3.0f64..3.0, 4..30),
        noise in vec(-1.0f64..1.0, 30),
        a in 0.1f64..4.0,
        b in -2.0f64..2.0,
    ) {
        let g: Vec<f64> = p.iter().zip(&noise).map(|(x, e)| a * x + b + e).collect();
        let valid = vec![true; p.len()];
        let fit = least_squares_align(&p, &g, &valid).unwrap();
        prop_assume!(!fit.degenerate);
        let sse = |s: f64, t: f64| p.iter().zip(&g).map(|(x, y)| (s * x + t - y).powi(2)).sum::<f64>();
        let best = sse(fit.scale, fit.shift);
        for d in [1e-3, 1e-2] {
            for (ds, dt) in [(d, 0.0), (-d, 0.0), (0.0, d), (0.0, -d), (d, d), (-d, d), (d, -d), (-d, -d)] {
                prop_assert!(sse(fit.scale + ds, fit.shift + dt) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn exact_affine_is_recovered(p in vec(-3.0f64..3.0, 3..30), a in 0.01f64..5.0, sign in any::<bool>(), b in -3.0f64..3.0) {
        let a = if sign { a } else { -a };
        let spread = p.iter().cloned().fold(f64::MIN, f64::max) - p.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 0.1);
        let pred: Vec<f64> = p.iter().map(|g| a * g + b).collect();
        let fit = least_squares_align(&pred, &p, &vec![true; p.len()]).unwrap();
        for (x, g) in pred.iter().zip(&p) {
            prop_assert!((fit.scale * x + fit.shift - g).abs() < 1e-6);
        }
    }

    #[test]
    fn metrics_are_bounded(
        gt in vec(0.01f64..80.0, 1..40),
        pred in vec(-5.0f64..100.0, 40),
        mask in vec(any::<bool>(), 40),
    ) {
        let n = gt.len();
        let mut valid = mask[..n].to_vec();
        valid[0] = true;
        let d = delta1(&gt, &pred[..n], &valid).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(absrel(&gt, &pred[..n], &valid).unwrap() >= 0.0);
    }

    #[test]
    fn first_frame_equals_global_on_single_frames(
        depth in vec(0.5f32..60.0, 12),
        a in 0.2f32..3.0,
        noise in vec(-0.05f32..0.05, 12),
    ) {
        let gt = seq(vec![depth.clone()], 4, 3);
        let pred = vec![FloatMap::new(4, 3, depth.iter().zip(&noise).map(|(d, e)| a / d + e).collect()).unwrap()];
        let first = eval_first_frame(&pred, &gt).unwrap();
        prop_assert_eq!(first.clone(), eval_global(&pred, &gt, Horizon::All).unwrap());
        prop_assert_eq!(first, eval_global(&pred, &gt, Horizon::Frames(500)).unwrap());
    }

    #[test]
    fn drift_of_global_affine_is_zero(
        depth in vec(0.5f32..60.0, 24),
        a in 0.2f32..3.0,
        b in -0.05f32..0.05,
        window in 1usize..6,
    ) {
        let frames: Vec<Vec<f32>> = depth.chunks(6).map(|c| c.to_vec()).collect();
        let gt = seq(frames.clone(), 3, 2);
        let pred: Vec<FloatMap> = frames
            .iter()
            .map(|f| FloatMap::new(3, 2, f.iter().map(|d| a / d + b).collect()).unwrap())
            .collect();
        let curve = scale_drift_curve(&[(&pred, &gt)], window).unwrap();
        prop_assert!(curve.raw.iter().all(|v| v.abs() < 1e-5), "{:?}", curve.raw);
        prop_assert!(curve.smoothed.iter().all(|v| v.abs() < 1e-5));
        prop_assert!(curve.data_support.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn losses_are_nonnegative_and_affine_invariant(
        gt in vec(0.1f64..5.0, 12),
        pred in vec(-2.0f64..2.0, 12),
        a in 0.2f64..3.0,
        b in -1.0f64..1.0,
        k in -3.0f64..3.0,
    ) {
        let gt: Vec<Vec<f64>> = gt.chunks(4).map(|c| c.to_vec()).collect();
        let pred: Vec<Vec<f64>> = pred.chunks(4).map(|c| c.to_vec()).collect();
        let valid = vec![vec![true; 4]; 3];
        let tg = Targets::new(&gt, &valid).unwrap();
        let run = |f: fn(&mut Tape<f64>, &[Var], &Targets) -> streamdepth::Result<Var>, p: &[Vec<f64>]| {
            let mut tape = Tape::<f64>::new();
            let vars: Vec<Var> = p.iter().map(|f| tape.param(Tensor::vector(f.clone())).unwrap()).collect();
            f(&mut tape, &vars, &tg).map(|v| tape.value(v).item())
        };
        let moved: Vec<Vec<f64>> = pred.iter().map(|f| f.iter().map(|x| a * x + b).collect()).collect();
        let shifted: Vec<Vec<f64>> = pred.iter().map(|f| f.iter().map(|x| x + k).collect()).collect();
        let affine_gt: Vec<Vec<f64>> = gt.iter().map(|f| f.iter().map(|x| a * x + b).collect()).collect();
        for f in [loss_ssi_scene, loss_tgm, loss_sascon] {
            if let Ok(v) = run(f, &pred) {
                prop_assert!(v >= 0.0);
            }
            prop_assert!(run(f, &affine_gt).unwrap().abs() < 1e-6);
        }
        if let (Ok(x), Ok(y)) = (run(loss_sascon, &pred), run(loss_sascon, &moved)) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        let (x, y) = (run(loss_tgm_aligned, &pred).unwrap(), run(loss_tgm_aligned, &shifted).unwrap());
        prop_assert!((x - y).abs() < 1e-9);
    }

    #[test]
    fn pfm_roundtrip(w in 1usize..6, h in 1usize..6, seed in any::<u32>()) {
        let data: Vec<f32> = (0..w * h).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32) & 0x7f7f_ffff)).collect();
        let map = FloatMap::new(w, h, data).unwrap();
        let bytes = encode_pfm(&map);
        let back = decode_pfm(&bytes).unwrap();
        prop_assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), map.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(encode_pfm(&back), bytes);
    }

    #[test]
    fn ppm_roundtrip(w in 1usize..6, h in 1usize..6, bytes in vec(any::<u8>(), 108)) {
        let img = RgbImage::from_bytes(w, h, &bytes[..w * h * 3]).unwrap();
        let enc = encode_ppm(&img);
        let back = decode_ppm(&enc).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes[..w * h * 3].to_vec());
        prop_assert_eq!(encode_ppm(&back), enc);
    }
}

fn seq(frames: Vec<Vec<f32>>, w: usize, h: usize) -> DepthSequence {
    let valid = frames.iter().map(|f| vec![true; f.len()]).collect();
    let maps = frames.into_iter().map(|f| FloatMap::new(w, h, f).unwrap()).collect();
    DepthSequence::new(maps, valid, SequenceKind::GroundTruth).unwrap()
}

#[test]
fn augmentation_never_exceeds_forty_percent() {
    let cfg = AugmentConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let (w, h) = (8 + i % 29, 6 + i % 17);
        let mut img = RgbImage::new(w, h, vec![1.0; w * h * 3]).unwrap();
        let f = augment_frame(&mut img, &cfg, &mut rng);
        let zeroed = img.data.chunks(3).filter(|p| p.iter().all(|&v| v == 0.0)).count();
        assert_eq!(zeroed as f64 / (w * h) as f64, f);
        worst = worst.max(f);
    }
    assert!(worst <= 0.4, "{worst}");
    assert!(worst > 0.35, "{worst}");
}
