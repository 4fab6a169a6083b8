//! Scale- and shift-invariant training losses on the tape.
//!
//! Every loss takes one prediction var per frame (any shape, read as a flat
//! vector), per-frame targets in the prediction's space (inverse depth) and
//! per-frame validity masks. Affine fits are built from tape ops, so
//! gradients flow through `(s, t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Pred variance below which a differentiable fit is refused.
pub const FIT_MIN_VARIANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    /// The base video loss: SSI and TGM only.
    pub fn ssi_tgm() -> Self {
        Self {
            gamma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} = {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Borrowed targets for one sequence.
#[derive(Clone, Copy, Debug)]
pub struct Targets<'a> {
    pub gt: &'a [Vec<f64>],
    pub valid: &'a [Vec<bool>],
}

impl<'a> Targets<'a> {
    pub fn new(gt: &'a [Vec<f64>], valid: &'a [Vec<bool>]) -> Result<Self> {
        if gt.len() != valid.len() {
            return Err(Error::shape("targets", "frame counts differ"));
        }
        if gt.iter().zip(valid).any(|(g, v)| g.len() != v.len()) {
            return Err(Error::shape("targets", "mask size differs from target size"));
        }
        Ok(Self { gt, valid })
    }

    pub fn frames(&self) -> usize {
        self.gt.len()
    }
}

fn check_frames<T: Real>(tape: &Tape<T>, pred: &[Var], tg: &Targets) -> Result<()> {
    if pred.len() != tg.frames() {
        return Err(Error::shape(
            "loss",
            format!("{} predicted frames, {} targets", pred.len(), tg.frames()),
        ));
    }
    for (p, g) in pred.iter().zip(tg.gt) {
        if tape.value(*p).len() != g.len() {
            return Err(Error::shape(
                "loss",
                format!("frame has {} values, target {}", tape.value(*p).len(), g.len()),
            ));
        }
    }
    Ok(())
}

fn valid_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i).collect()
}

/// Valid predictions of one frame as a vector, with the matching targets.
fn select<T: Real>(tape: &mut Tape<T>, pred: Var, gt: &[f64], mask: &[bool]) -> Result<(Var, Vec<f64>)> {
    let idx = valid_indices(mask);
    let g = idx.iter().map(|&i| gt[i]).collect();
    Ok((tape.gather(pred, idx)?, g))
}

/// Valid predictions of several frames pooled into one vector.
fn select_pooled<T: Real>(tape: &mut Tape<T>, pred: &[Var], tg: &Targets) -> Result<(Var, Vec<f64>)> {
    let mut parts = Vec::with_capacity(pred.len());
    let mut g = Vec::new();
    for ((&p, gt), mask) in pred.iter().zip(tg.gt).zip(tg.valid) {
        let (v, gs) = select(tape, p, gt, mask)?;
        if !gs.is_empty() {
            parts.push(v);
            g.extend(gs);
        }
    }
    if g.len() < 2 {
        return Err(Error::TooFewValid(g.len()));
    }
    Ok((tape.concat(&parts)?, g))
}

fn constant_vector<T: Real>(tape: &mut Tape<T>, v: impl IntoIterator<Item = f64>) -> Result<Var> {
    tape.constant(Tensor::vector(v.into_iter().map(T::lit).collect()))
}

/// Differentiable least-squares `(s, t)` for `s p + t ~ g`:
/// `s = <p - mean p, g - mean g> / |p - mean p|^2`, `t = mean g - s mean p`.
pub fn fit_affine<T: Real>(tape: &mut Tape<T>, p: Var, g: &[f64]) -> Result<(Var, Var)> {
    let n = tape.value(p).len();
    if n != g.len() {
        return Err(Error::shape("fit_affine", format!("{n} predictions, {} targets", g.len())));
    }
    if n < 2 {
        return Err(Error::TooFewValid(n));
    }
    let gm = g.iter().sum::<f64>() / n as f64;
    let mp = tape.mean(p)?;
    let neg_mp = tape.scale(mp, -T::one())?;
    let pc = tape.scalar_add(p, neg_mp)?;
    let gc = constant_vector(tape, g.iter().map(|&x| x - gm))?;
    let num = tape.dot(pc, gc)?;
    let den = tape.dot(pc, pc)?;
    let var = tape.value(den).item().as_f64() / n as f64;
    if var < FIT_MIN_VARIANCE {
        return Err(Error::Degenerate(format!("prediction variance {var:e} below threshold")));
    }
    let s = tape.div(num, den)?;
    let smp = tape.mul(s, mp)?;
    let neg = tape.scale(smp, -T::one())?;
    let t = tape.add_const(neg, &Tensor::scalar(T::lit(gm)))?;
    Ok((s, t))
}

fn affine<T: Real>(tape: &mut Tape<T>, x: Var, s: Var, t: Var) -> Result<Var> {
    let sx = tape.scalar_mul(x, s)?;
    tape.scalar_add(sx, t)
}

fn mean_abs_residual<T: Real>(tape: &mut Tape<T>, x: Var, target: &[f64]) -> Result<Var> {
    let neg = Tensor::vector(target.iter().map(|&g| T::lit(-g)).collect());
    let r = tape.add_const(x, &neg)?;
    let a = tape.abs(r)?;
    tape.mean(a)
}

/// Mean absolute error after one affine fit pooled over the whole sequence.
pub fn loss_ssi_scene<T: Real>(tape: &mut Tape<T>, pred: &[Var], tg: &Targets) -> Result<Var> {
    check_frames(tape, pred, tg)?;
    let (p, g) = select_pooled(tape, pred, tg)?;
    let (s, t) = fit_affine(tape, p, &g)?;
    let aligned = affine(tape, p, s, t)?;
    mean_abs_residual(tape, aligned, &g)
}

/// Temporal gradient matching on an already aligned sequence: mean of
/// `|(d_t - d_{t-1}) - (g_t - g_{t-1})|` over `t >= 1` and pixels valid in
/// both frames.
pub fn loss_tgm_aligned<T: Real>(tape: &mut Tape<T>, aligned: &[Var], tg: &Targets) -> Result<Var> {
    check_frames(tape, aligned, tg)?;
    if aligned.len() < 2 {
        return Err(Error::SequenceTooShort(format!(
            "temporal gradient needs 2 frames, got {}",
            aligned.len()
        )));
    }
    let mut residuals = Vec::new();
    for t in 1..aligned.len() {
        let idx: Vec<usize> = valid_indices(&tg.valid[t])
            .into_iter()
            .filter(|&i| tg.valid[t - 1][i])
            .collect();
        if idx.is_empty() {
            continue;
        }
        let target: Vec<f64> = idx.iter().map(|&i| -(tg.gt[t][i] - tg.gt[t - 1][i])).collect();
        let cur = tape.gather(aligned[t], idx.clone())?;
        let prev = tape.gather(aligned[t - 1], idx)?;
        let d = tape.sub(cur, prev)?;
        let r = tape.add_const(d, &Tensor::vector(target.into_iter().map(T::lit).collect()))?;
        residuals.push(r);
    }
    if residuals.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let all = tape.concat(&residuals)?;
    let a = tape.abs(all)?;
    tape.mean(a)
}

/// Scene-level alignment followed by [`loss_tgm_aligned`].
pub fn loss_tgm<T: Real>(tape: &mut Tape<T>, pred: &[Var], tg: &Targets) -> Result<Var> {
    check_frames(tape, pred, tg)?;
    if pred.len() < 2 {
        return Err(Error::SequenceTooShort(format!(
            "temporal gradient needs 2 frames, got {}",
            pred.len()
        )));
    }
    let (p, g) = select_pooled(tape, pred, tg)?;
    let (s, t) = fit_affine(tape, p, &g)?;
    let aligned = pred
        .iter()
        .map(|&x| affine(tape, x, s, t))
        .collect::<Result<Vec<_>>>()?;
    loss_tgm_aligned(tape, &aligned, tg)
}

/// Scale-and-shift consistency: per frame, the prediction aligned with the
/// frame-0 fit against the prediction aligned with its own fit; L1 averaged
/// over valid pixels, then over frames.
pub fn loss_sascon<T: Real>(tape: &mut Tape<T>, pred: &[Var], tg: &Targets) -> Result<Var> {
    check_frames(tape, pred, tg)?;
    if pred.is_empty() {
        return Err(Error::SequenceTooShort("no frames".into()));
    }
    let mut fit0 = None;
    let mut terms = Vec::with_capacity(pred.len());
    for i in 0..pred.len() {
        let (p, g) = select(tape, pred[i], &tg.gt[i], &tg.valid[i])?;
        let (si, ti) = fit_affine(tape, p, &g)?;
        let (s0, t0) = *fit0.get_or_insert((si, ti));
        let first = affine(tape, p, s0, t0)?;
        let indi = affine(tape, p, si, ti)?;
        let d = tape.sub(first, indi)?;
        let a = tape.abs(d)?;
        terms.push(tape.mean(a)?);
    }
    let stacked = tape.concat(&terms)?;
    tape.mean(stacked)
}

/// A weighted loss and the value of each of its terms.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub ssi: f64,
    pub tgm: f64,
    pub sascon: f64,
}

/// `alpha * SSI + beta * TGM + gamma * SaSCon`.
///
/// A term with weight 0 is left out of the total; if it cannot be computed
/// for this input (e.g. TGM on one frame) its reported value is 0.
pub fn loss_total<T: Real>(
    tape: &mut Tape<T>,
    pred: &[Var],
    tg: &Targets,
    weights: &LossWeights,
) -> Result<LossTerms> {
    weights.validate()?;
    type LossFn<T> = fn(&mut Tape<T>, &[Var], &Targets) -> Result<Var>;
    let fns: [(f64, LossFn<T>); 3] = [
        (weights.alpha, loss_ssi_scene::<T>),
        (weights.beta, loss_tgm::<T>),
        (weights.gamma, loss_sascon::<T>),
    ];
    let mut values = [0.0; 3];
    let mut total: Option<Var> = None;
    for (k, (w, f)) in fns.into_iter().enumerate() {
        let v = match f(tape, pred, tg) {
            Ok(v) => v,
            Err(_) if w == 0.0 => continue,
            Err(e) => return Err(e),
        };
        values[k] = tape.value(v).item().as_f64();
        if w == 0.0 {
            continue;
        }
        let wv = tape.scale(v, T::lit(w))?;
        total = Some(match total {
            Some(acc) => tape.add(acc, wv)?,
            None => wv,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(T::zero()))?,
    };
    Ok(LossTerms {
        total,
        ssi: values[0],
        tgm: values[1],
        sascon: values[2],
    })
}

/// `loss_total` with `gamma = 0`.
pub fn loss_ssi_tgm<T: Real>(tape: &mut Tape<T>, pred: &[Var], tg: &Targets, alpha: f64, beta: f64) -> Result<LossTerms> {
    loss_total(
        tape,
        pred,
        tg,
        &LossWeights {
            alpha,
            beta,
            gamma: 0.0,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradcheck;

    fn leaves(tape: &mut Tape<f64>, frames: &[Vec<f64>]) -> Vec<Var> {
        frames
            .iter()
            .map(|f| tape.param(Tensor::vector(f.clone())).unwrap())
            .collect()
    }

    fn eval(f: fn(&mut Tape<f64>, &[Var], &Targets) -> Result<Var>, pred: &[Vec<f64>], gt: &[Vec<f64>]) -> f64 {
        let valid: Vec<Vec<bool>> = gt.iter().map(|g| vec![true; g.len()]).collect();
        let tg = Targets::new(gt, &valid).unwrap();
        let mut tape = Tape::new();
        let vars = leaves(&mut tape, pred);
        let out = f(&mut tape, &vars, &tg).unwrap();
        tape.value(out).item()
    }

    #[test]
    fn ssi_two_point_fit() {
        let v = eval(loss_ssi_scene, &[vec![1.0], vec![2.0]], &[vec![1.0], vec![3.0]]);
        assert!(v.abs() < 1e-12);
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let (s, t) = fit_affine(&mut tape, p, &[1.0, 3.0]).unwrap();
        assert!((tape.value(s).item() - 2.0).abs() < 1e-12);
        assert!((tape.value(t).item() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn tgm_fixtures() {
        let gt = [vec![1.0], vec![2.0]];
        let valid = [vec![true], vec![true]];
        let tg = Targets::new(&gt, &valid).unwrap();
        let mut tape = Tape::<f64>::new();
        let vars = leaves(&mut tape, &[vec![1.0], vec![3.0]]);
        let v = loss_tgm_aligned(&mut tape, &vars, &tg).unwrap();
        assert_eq!(tape.value(v).item(), 1.0);

        let mut tape = Tape::<f64>::new();
        let one = leaves(&mut tape, &[vec![1.0]]);
        assert!(loss_tgm_aligned(&mut tape, &one, &Targets::new(&gt[..1], &valid[..1]).unwrap()).is_err());
    }

    #[test]
    fn tgm_ignores_constant_offset() {
        let gt = [vec![1.0, 2.0], vec![2.0, 5.0], vec![0.5, 1.0]];
        let valid = vec![vec![true; 2]; 3];
        let tg = Targets::new(&gt, &valid).unwrap();
        let base = [vec![1.2, 2.1], vec![1.7, 5.3], vec![0.9, 1.1]];
        let shifted: Vec<Vec<f64>> = base.iter().map(|f| f.iter().map(|x| x + 3.25).collect()).collect();
        let mut tape = Tape::<f64>::new();
        let a = leaves(&mut tape, &base);
        let b = leaves(&mut tape, &shifted);
        let la = loss_tgm_aligned(&mut tape, &a, &tg).unwrap();
        let lb = loss_tgm_aligned(&mut tape, &b, &tg).unwrap();
        assert!((tape.value(la).item() - tape.value(lb).item()).abs() < 1e-12);
    }

    #[test]
    fn sascon_fixture() {
        let v = eval(loss_sascon, &[vec![1.0, 2.0], vec![2.0, 4.0]], &[vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert!((v - 0.75).abs() < 1e-12, "{v}");
    }

    #[test]
    fn zero_on_global_affine() {
        let gt = vec![vec![1.0, 2.0, 4.0], vec![0.5, 3.0, 1.5]];
        let pred: Vec<Vec<f64>> = gt.iter().map(|f| f.iter().map(|g| 2.5 * g - 0.75).collect()).collect();
        for f in [loss_ssi_scene, loss_tgm, loss_sascon] {
            assert!(eval(f, &pred, &gt).abs() < 1e-12);
        }
    }

    #[test]
    fn total_is_linear_and_gamma_zero_is_ssi_tgm() {
        let gt = vec![vec![1.0, 2.0, 4.0], vec![0.5, 3.0, 1.5]];
        let pred = vec![vec![0.3, 0.9, 1.0], vec![0.2, 1.4, 0.1]];
        let valid = vec![vec![true; 3]; 2];
        let tg = Targets::new(&gt, &valid).unwrap();
        let w = LossWeights {
            alpha: 0.5,
            beta: 2.0,
            gamma: 1.5,
        };
        let mut tape = Tape::<f64>::new();
        let vars = leaves(&mut tape, &pred);
        let terms = loss_total(&mut tape, &vars, &tg, &w).unwrap();
        let expect = 0.5 * terms.ssi + 2.0 * terms.tgm + 1.5 * terms.sascon;
        assert!((tape.value(terms.total).item() - expect).abs() < 1e-12);

        let only_ssi = LossWeights {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
        };
        let t = loss_total(&mut tape, &vars, &tg, &only_ssi).unwrap();
        assert_eq!(tape.value(t.total).item(), t.ssi);

        let a = loss_total(&mut tape, &vars, &tg, &LossWeights::ssi_tgm()).unwrap();
        let b = loss_ssi_tgm(&mut tape, &vars, &tg, 1.0, 1.0).unwrap();
        assert_eq!(tape.value(a.total).item(), tape.value(b.total).item());
        assert_eq!(tape.value(a.total).item(), a.ssi + a.tgm);
    }

    #[test]
    fn weights_validate() {
        assert_eq!(LossWeights::default(), LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0 });
        assert!(LossWeights { alpha: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn degenerate_fit_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::vector(vec![2.0, 2.0, 2.0])).unwrap();
        assert!(matches!(fit_affine(&mut tape, p, &[1.0, 2.0, 3.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let gt = vec![vec![1.0, 2.0, 0.5, 3.0], vec![1.5, 2.5, 0.7, 2.0]];
        let valid = vec![vec![true, true, false, true], vec![true; 4]];
        let pred = [
            Tensor::vector(vec![0.4, 1.1, 0.9, 1.7]),
            Tensor::vector(vec![0.8, 1.2, 0.3, 1.05]),
        ];
        for f in [loss_ssi_scene, loss_tgm, loss_sascon] {
            let report = gradcheck(
                |tape: &mut Tape<f64>, vars: &[Var]| f(tape, vars, &Targets::new(&gt, &valid)?),
                &pred,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed(), "{:?}", report.max_rel_err);
        }
    }
}
