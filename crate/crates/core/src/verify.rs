//! Self-checks shared by the `check` command and the test suites:
//! stream/batch equivalence, causality, gradient checks and the alignment
//! oracle.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::least_squares_align;
use crate::error::Result;
use crate::gradcheck::gradcheck;
use crate::losses::{loss_sascon, loss_ssi_scene, loss_tgm, Targets};
use crate::model::{head_forward_taped, DepthModel, HeadParams, HeadVars, ModelConfig, StreamingSession};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const EQUIVALENCE_TOL: f64 = 1e-5;
pub const CAUSALITY_TOL: f64 = 1e-6;
pub const GRADCHECK_TOL: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const ALIGN_TOL: f64 = 1e-6;

pub const EQUIVALENCE_CONTEXTS: [usize; 4] = [2, 4, 8, 16];

/// `N ∈ {1, c-1, c, c+5, 3c}`.
pub fn equivalence_lengths(c: usize) -> [usize; 5] {
    [1, c - 1, c, c + 5, 3 * c]
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CheckOptions {
    /// Runs the batch side of the equivalence check with a band one frame
    /// wider than the stream side. The check must then fail.
    pub band_mutation: bool,
    pub seed: u64,
}

fn random_features(cfg: &ModelConfig, frames: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor<f32>> {
    (0..frames)
        .map(|_| {
            let data = (0..cfg.tokens() * cfg.encoder_channels)
                .map(|_| rng.random_range(-1.0f32..1.0))
                .collect();
            Tensor::new(vec![cfg.tokens(), cfg.encoder_channels], data).expect("feature shape")
        })
        .collect()
}

/// Max abs difference between batch output (band `batch_context`) and a
/// streaming session with context `context`, over `frames` random frames.
pub fn stream_batch_max_diff(
    base: &ModelConfig,
    context: usize,
    batch_context: usize,
    frames: usize,
    seed: u64,
) -> Result<f64> {
    let model = DepthModel::new(ModelConfig {
        context: context.max(batch_context),
        seed,
        ..base.clone()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfea7);
    let feats = random_features(&model.config, frames, &mut rng);
    let batch = model.predict_batch_with_context(&feats, batch_context)?;
    let mut session = StreamingSession::new(&model, context, 1, model.config.precision)?;
    let mut worst = 0.0f64;
    for (t, f) in feats.iter().enumerate() {
        let d = session.step(t, f)?;
        for (a, b) in d.data.iter().zip(&batch[t].data) {
            worst = worst.max((a - b).abs() as f64);
        }
    }
    Ok(worst)
}

pub fn check_stream_equivalence(base: &ModelConfig, opts: CheckOptions) -> CheckResult {
    let mut worst = 0.0f64;
    let mut runs = 0;
    let mut failure = None;
    for (i, &c) in EQUIVALENCE_CONTEXTS.iter().enumerate() {
        for (j, &n) in equivalence_lengths(c).iter().enumerate() {
            let batch_c = if opts.band_mutation { c + 1 } else { c };
            let seed = opts.seed.wrapping_add((i * 5 + j) as u64);
            match stream_batch_max_diff(base, c, batch_c, n, seed) {
                Ok(d) => worst = worst.max(d),
                Err(e) => failure = Some(format!("c={c} N={n}: {e}")),
            }
            runs += 1;
        }
    }
    let passed = failure.is_none() && worst < EQUIVALENCE_TOL;
    CheckResult {
        name: "stream_equivalence",
        passed,
        detail: failure.unwrap_or_else(|| format!("{runs} configs, max abs diff {worst:.3e}")),
    }
}

/// Largest change in any batch output frame before `j` when frame `j`
/// is replaced, over every `j`.
pub fn causality_violation(base: &ModelConfig, frames: usize, seed: u64) -> Result<f64> {
    let model = DepthModel::new(ModelConfig { seed, ..base.clone() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xca05);
    let feats = random_features(&model.config, frames, &mut rng);
    let reference = model.predict_batch(&feats)?;
    let mut worst = 0.0f64;
    for j in 1..frames {
        let mut changed = feats.clone();
        changed[j] = random_features(&model.config, 1, &mut rng).remove(0);
        let out = model.predict_batch(&changed)?;
        for t in 0..j {
            for (a, b) in out[t].data.iter().zip(&reference[t].data) {
                worst = worst.max((a - b).abs() as f64);
            }
        }
    }
    Ok(worst)
}

pub fn check_causality(base: &ModelConfig, opts: CheckOptions) -> CheckResult {
    let r = causality_violation(&ModelConfig { context: 4, ..base.clone() }, 10, opts.seed);
    match r {
        Ok(d) => CheckResult {
            name: "causality",
            passed: d <= CAUSALITY_TOL,
            detail: format!("max change in earlier frames {d:.3e}"),
        },
        Err(e) => CheckResult {
            name: "causality",
            passed: false,
            detail: e.to_string(),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Ssi,
    Tgm,
    Sascon,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Ssi, LossKind::Tgm, LossKind::Sascon];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ssi => "ssi",
            LossKind::Tgm => "tgm",
            LossKind::Sascon => "sascon",
        }
    }

    pub fn eval(self, tape: &mut Tape<f64>, pred: &[Var], tg: &Targets) -> Result<Var> {
        match self {
            LossKind::Ssi => loss_ssi_scene(tape, pred, tg),
            LossKind::Tgm => loss_tgm(tape, pred, tg),
            LossKind::Sascon => loss_sascon(tape, pred, tg),
        }
    }
}

/// A seeded two-frame instance: predictions, targets and masks with at
/// least three valid pixels per frame.
pub struct LossInstance {
    pub pred: Vec<Tensor<f64>>,
    pub gt: Vec<Vec<f64>>,
    pub valid: Vec<Vec<bool>>,
}

impl LossInstance {
    pub fn random(seed: u64, pixels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pred = Vec::new();
        let mut gt = Vec::new();
        let mut valid = Vec::new();
        for _ in 0..2 {
            pred.push(Tensor::vector((0..pixels).map(|_| rng.random_range(0.1..2.0)).collect()));
            gt.push((0..pixels).map(|_| rng.random_range(0.2..3.0)).collect());
            let mut v: Vec<bool> = (0..pixels).map(|_| rng.random_bool(0.8)).collect();
            v[..3.min(pixels)].fill(true);
            valid.push(v);
        }
        Self { pred, gt, valid }
    }
}

/// Worst relative gradient error of one loss on one instance.
pub fn loss_gradcheck(kind: LossKind, inst: &LossInstance) -> Result<f64> {
    let tg = Targets::new(&inst.gt, &inst.valid)?;
    let report = gradcheck(
        |tape: &mut Tape<f64>, vars: &[Var]| kind.eval(tape, vars, &tg),
        &inst.pred,
        GRADCHECK_STEP,
        GRADCHECK_TOL,
    )?;
    Ok(report.worst())
}

pub fn check_loss_gradients(opts: CheckOptions, instances: usize) -> CheckResult {
    let mut worst = 0.0f64;
    for kind in LossKind::ALL {
        for i in 0..instances {
            let inst = LossInstance::random(opts.seed.wrapping_add(i as u64), 16);
            match loss_gradcheck(kind, &inst) {
                Ok(e) => worst = worst.max(e),
                Err(e) => {
                    return CheckResult {
                        name: "gradcheck_losses",
                        passed: false,
                        detail: format!("{} instance {i}: {e}", kind.name()),
                    }
                }
            }
        }
    }
    CheckResult {
        name: "gradcheck_losses",
        passed: worst < GRADCHECK_TOL,
        detail: format!("{} instances per loss, worst rel err {worst:.3e}", instances),
    }
}

/// Gradient check of the whole head (in f64) on a tiny configuration, with
/// a fixed random linear readout of all output pixels as the loss.
pub fn head_gradcheck(seed: u64) -> Result<f64> {
    let cfg = ModelConfig {
        patch: 2,
        height: 2,
        width: 4,
        encoder_channels: 3,
        head_channels: 4,
        motion_modules: 1,
        context: 2,
        seed,
        ..Default::default()
    };
    let model = DepthModel::new(cfg.clone())?;
    let head: HeadParams<f64> = model.head.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9ead);
    let frames = 3;
    let feats: Vec<Tensor<f64>> = random_features(&cfg, frames, &mut rng).iter().map(Tensor::cast).collect();
    let readout: Vec<f64> = (0..frames * cfg.pixels()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let stages = head.blocks.len();
    let params: Vec<Tensor<f64>> = head.tensors().into_iter().cloned().collect();
    let report = gradcheck(
        |tape: &mut Tape<f64>, vars: &[Var]| {
            let hv = HeadVars::from_flat(vars.to_vec(), stages);
            let xs = feats
                .iter()
                .map(|f| tape.constant(f.clone()))
                .collect::<Result<Vec<_>>>()?;
            let out = head_forward_taped(tape, &hv, &xs, &cfg, cfg.context)?;
            let all = tape.concat(&out)?;
            let w = tape.constant(Tensor::vector(readout.clone()))?;
            tape.dot(all, w)
        },
        &params,
        GRADCHECK_STEP,
        GRADCHECK_TOL,
    )?;
    Ok(report.worst())
}

pub fn check_head_gradients(opts: CheckOptions) -> CheckResult {
    match head_gradcheck(opts.seed) {
        Ok(e) => CheckResult {
            name: "gradcheck_head",
            passed: e < GRADCHECK_TOL,
            detail: format!("worst rel err {e:.3e}"),
        },
        Err(e) => CheckResult {
            name: "gradcheck_head",
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn mse(p: &[f64], g: &[f64], s: f64, t: f64) -> f64 {
    p.iter().zip(g).map(|(&p, &g)| (s * p + t - g).powi(2)).sum::<f64>() / p.len() as f64
}

/// Minimises the mean squared residual of `s p + t ~ g` by iterated grid
/// search, parameterised around the mean of `p` so the two axes decouple.
/// Returns `(s, t, mse)`.
pub fn brute_force_affine(p: &[f64], g: &[f64], half_width: f64) -> (f64, f64, f64) {
    let mp = p.iter().sum::<f64>() / p.len() as f64;
    let centred: Vec<f64> = p.iter().map(|v| v - mp).collect();
    let (mut cs, mut ct, mut hw) = (0.0, 0.0, half_width);
    const STEPS: i32 = 10;
    for _ in 0..80 {
        let step = hw / STEPS as f64;
        let mut best = (f64::INFINITY, cs, ct);
        for i in -STEPS..=STEPS {
            for j in -STEPS..=STEPS {
                let (s, t) = (cs + i as f64 * step, ct + j as f64 * step);
                let e = mse(&centred, g, s, t);
                if e < best.0 {
                    best = (e, s, t);
                }
            }
        }
        (cs, ct) = (best.1, best.2);
        hw = 2.0 * step;
    }
    let t = ct - cs * mp;
    (cs, t, mse(p, g, cs, t))
}

/// Worst `(LS mse - brute-force mse)` gap and worst exact-affine recovery
/// error over `instances` random problems.
pub fn alignment_oracle(seed: u64, instances: usize) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut gap, mut recovery) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let n = rng.random_range(3..40);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..3.0)).collect();
        let (a, b) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let noisy: Vec<f64> = p.iter().map(|&x| a * x + b + rng.random_range(-0.5..0.5)).collect();
        let valid = vec![true; n];

        let ls = least_squares_align(&p, &noisy, &valid)?;
        let (_, _, bf) = brute_force_affine(&p, &noisy, 64.0);
        gap = gap.max((mse(&p, &noisy, ls.scale, ls.shift) - bf).abs());

        let exact: Vec<f64> = p.iter().map(|&x| a * x + b).collect();
        let fit = least_squares_align(&p, &exact, &valid)?;
        recovery = recovery.max((fit.scale - a).abs()).max((fit.shift - b).abs());
    }
    Ok((gap, recovery))
}

pub fn check_alignment_oracle(opts: CheckOptions) -> CheckResult {
    match alignment_oracle(opts.seed, 100) {
        Ok((gap, rec)) => CheckResult {
            name: "alignment_oracle",
            passed: gap < ALIGN_TOL && rec < ALIGN_TOL,
            detail: format!("residual gap {gap:.3e}, affine recovery error {rec:.3e}"),
        },
        Err(e) => CheckResult {
            name: "alignment_oracle",
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// Runs every check with the default model configuration.
pub fn run_checks(opts: CheckOptions) -> Vec<CheckResult> {
    let base = ModelConfig::default();
    vec![
        check_stream_equivalence(&base, opts),
        check_causality(&base, opts),
        check_loss_gradients(opts, 10),
        check_head_gradients(opts),
        check_alignment_oracle(opts),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_finds_the_minimum() {
        let p = [0.0, 1.0, 2.0, 3.0];
        let g = [1.0, 2.9, 5.2, 7.0];
        let ls = least_squares_align(&p, &g, &[true; 4]).unwrap();
        let (s, t, e) = brute_force_affine(&p, &g, 16.0);
        assert!((s - ls.scale).abs() < 1e-6 && (t - ls.shift).abs() < 1e-6, "{s} {t} {ls:?}");
        assert!((mse(&p, &g, ls.scale, ls.shift) - e).abs() < 1e-12);
    }

    #[test]
    fn mutated_band_is_detected() {
        let base = ModelConfig {
            patch: 4,
            height: 8,
            width: 8,
            encoder_channels: 4,
            head_channels: 4,
            ..Default::default()
        };
        assert!(stream_batch_max_diff(&base, 3, 3, 9, 1).unwrap() < EQUIVALENCE_TOL);
        assert!(stream_batch_max_diff(&base, 3, 4, 9, 1).unwrap() > EQUIVALENCE_TOL);
        // the extra band is invisible until the window fills
        assert!(stream_batch_max_diff(&base, 3, 4, 3, 1).unwrap() < EQUIVALENCE_TOL);
    }

    #[test]
    fn head_gradients() {
        assert!(head_gradcheck(2).unwrap() < GRADCHECK_TOL);
    }
}
