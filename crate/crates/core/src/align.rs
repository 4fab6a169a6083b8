//! Closed-form affine alignment, depth metrics and the evaluation protocols
//! built on them.
//!
//! Predictions are inverse depth. Alignment happens in inverse-depth space
//! against `1 / gt`; the aligned prediction is then inverted back to depth
//! (clamped, see [`invert_disparity`]) and scored against depth ground
//! truth clipped to `(0, 80]`.

use std::fmt::Write as _;

use crate::dataio::{FloatMap, MAX_DEPTH};
use crate::error::{Error, Result};

/// Pred variance below which a fit is reported degenerate.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;
pub const DELTA1_THRESHOLD: f64 = 1.25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineAlign {
    pub scale: f64,
    pub shift: f64,
    pub degenerate: bool,
}

impl AffineAlign {
    pub const IDENTITY: AffineAlign = AffineAlign {
        scale: 1.0,
        shift: 0.0,
        degenerate: false,
    };
}

/// Least-squares `(s, t)` minimising `sum (s p + t - g)^2` over pixels where
/// `valid` is set. Values are accumulated in `f64` around the means.
pub fn least_squares_align<P, G>(pred: &[P], gt: &[G], valid: &[bool]) -> Result<AffineAlign>
where
    P: Copy + Into<f64>,
    G: Copy + Into<f64>,
{
    if pred.len() != gt.len() || pred.len() != valid.len() {
        return Err(Error::shape(
            "least_squares_align",
            format!("pred {}, gt {}, mask {}", pred.len(), gt.len(), valid.len()),
        ));
    }
    let pairs = || {
        pred.iter()
            .zip(gt)
            .zip(valid)
            .filter(|(_, &v)| v)
            .map(|((&p, &g), _)| (p.into(), g.into()))
    };
    let n = pairs().count();
    if n < 2 {
        return Err(Error::TooFewValid(n));
    }
    let nf = n as f64;
    let (sp, sg) = pairs().fold((0.0, 0.0), |(a, b), (p, g)| (a + p, b + g));
    let (mp, mg) = (sp / nf, sg / nf);
    let (mut spp, mut spg) = (0.0, 0.0);
    for (p, g) in pairs() {
        spp += (p - mp) * (p - mp);
        spg += (p - mp) * (g - mg);
    }
    if spp / nf < DEGENERATE_VARIANCE {
        return Ok(AffineAlign {
            scale: 1.0,
            shift: mg - mp,
            degenerate: true,
        });
    }
    let scale = spg / spp;
    Ok(AffineAlign {
        scale,
        shift: mg - scale * mp,
        degenerate: false,
    })
}

pub fn apply_align<P: Copy + Into<f64>>(pred: &[P], align: AffineAlign) -> Vec<f64> {
    pred.iter().map(|&p| align.scale * p.into() + align.shift).collect()
}

/// `1 / max(d, eps)` clipped to the maximum evaluation depth.
pub fn invert_disparity(d: f64, eps: f64) -> f64 {
    (1.0 / d.max(eps)).min(MAX_DEPTH)
}

pub const DEFAULT_INVERT_EPS: f64 = 1e-6;

/// Mean of `|D - D'| / D` over valid pixels.
pub fn absrel(gt: &[f64], pred: &[f64], valid: &[bool]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for ((&g, &p), &ok) in gt.iter().zip(pred).zip(valid) {
        if ok {
            total += (g - p).abs() / g;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(total / n as f64)
}

/// Fraction of valid pixels with `max(D/D', D'/D) < 1.25`; non-positive
/// predictions always count as outliers.
pub fn delta1(gt: &[f64], pred: &[f64], valid: &[bool]) -> Result<f64> {
    let mut inliers = 0usize;
    let mut n = 0usize;
    for ((&g, &p), &ok) in gt.iter().zip(pred).zip(valid) {
        if ok {
            n += 1;
            if p > 0.0 && (g / p).max(p / g) < DELTA1_THRESHOLD {
                inliers += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(inliers as f64 / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SequenceKind {
    GroundTruth,
    Predicted,
}

/// Per-frame depth maps with validity masks.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthSequence {
    pub frames: Vec<FloatMap>,
    pub valid: Vec<Vec<bool>>,
    pub kind: SequenceKind,
}

impl DepthSequence {
    pub fn new(frames: Vec<FloatMap>, valid: Vec<Vec<bool>>, kind: SequenceKind) -> Result<Self> {
        if frames.len() != valid.len() {
            return Err(Error::shape("depth sequence", "frame and mask counts differ"));
        }
        for (f, v) in frames.iter().zip(&valid) {
            if f.data.len() != v.len() {
                return Err(Error::shape("depth sequence", "mask size differs from frame size"));
            }
        }
        Ok(Self { frames, valid, kind })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Ground truth of frame `i` clipped to `(0, 80]`, with pixels outside
    /// that range dropped from the mask.
    pub fn clipped(&self, i: usize) -> (Vec<f64>, Vec<bool>) {
        let frame = &self.frames[i];
        let mut depth = Vec::with_capacity(frame.data.len());
        let mut valid = Vec::with_capacity(frame.data.len());
        for (&d, &ok) in frame.data.iter().zip(&self.valid[i]) {
            let d = d as f64;
            let keep = ok && d > 0.0 && d.is_finite();
            depth.push(if keep { d.min(MAX_DEPTH) } else { 0.0 });
            valid.push(keep);
        }
        (depth, valid)
    }

    /// `1 / depth` on valid pixels (0 elsewhere) and the mask.
    pub fn inverse(&self, i: usize) -> (Vec<f64>, Vec<bool>) {
        let (depth, valid) = self.clipped(i);
        let inv = depth
            .iter()
            .zip(&valid)
            .map(|(&d, &ok)| if ok { 1.0 / d } else { 0.0 })
            .collect();
        (inv, valid)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub abs_rel: f64,
    pub delta1: f64,
    pub align: AffineAlign,
    pub frames: usize,
    pub valid_pixels: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "metric,value";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        let rows: [(&str, String); 7] = [
            ("abs_rel", format!("{}", self.abs_rel)),
            ("delta1", format!("{}", self.delta1)),
            ("scale", format!("{}", self.align.scale)),
            ("shift", format!("{}", self.align.shift)),
            ("degenerate", (self.align.degenerate as u8).to_string()),
            ("frames", self.frames.to_string()),
            ("valid_pixels", self.valid_pixels.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Horizon {
    Frames(usize),
    All,
}

impl Horizon {
    fn frames(self, len: usize) -> usize {
        match self {
            Horizon::Frames(n) => n.min(len),
            Horizon::All => len,
        }
    }
}

fn check_lengths(pred: &[FloatMap], gt: &DepthSequence) -> Result<()> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(Error::SequenceTooShort(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    for (p, g) in pred.iter().zip(&gt.frames) {
        if p.data.len() != g.data.len() {
            return Err(Error::shape("eval", "prediction and ground truth resolutions differ"));
        }
    }
    Ok(())
}

/// Joint validity of ground truth and a finite prediction.
fn joint_mask(pred: &FloatMap, valid: &[bool]) -> Vec<bool> {
    pred.data.iter().zip(valid).map(|(p, &v)| v && p.is_finite()).collect()
}

fn score(pred: &[FloatMap], gt: &DepthSequence, frames: usize, align: AffineAlign) -> Result<EvalReport> {
    let mut g_all = Vec::new();
    let mut p_all = Vec::new();
    let mut v_all = Vec::new();
    for i in 0..frames {
        let (g, v) = gt.clipped(i);
        let v = joint_mask(&pred[i], &v);
        let aligned = apply_align(&pred[i].data, align);
        p_all.extend(aligned.into_iter().map(|d| invert_disparity(d, DEFAULT_INVERT_EPS)));
        g_all.extend(g);
        v_all.extend(v);
    }
    Ok(EvalReport {
        abs_rel: absrel(&g_all, &p_all, &v_all)?,
        delta1: delta1(&g_all, &p_all, &v_all)?,
        align,
        frames,
        valid_pixels: v_all.iter().filter(|&&v| v).count(),
    })
}

/// Fits `(s, t)` on frame 0 only and scores the whole sequence with it.
pub fn eval_first_frame(pred: &[FloatMap], gt: &DepthSequence) -> Result<EvalReport> {
    check_lengths(pred, gt)?;
    let (inv, valid) = gt.inverse(0);
    let align = least_squares_align(&pred[0].data, &inv, &joint_mask(&pred[0], &valid))?;
    score(pred, gt, gt.len(), align)
}

/// Fits one `(s, t)` over every valid pixel of the first `horizon` frames
/// and scores those frames.
pub fn eval_global(pred: &[FloatMap], gt: &DepthSequence, horizon: Horizon) -> Result<EvalReport> {
    check_lengths(pred, gt)?;
    let frames = horizon.frames(gt.len());
    let mut p = Vec::new();
    let mut g = Vec::new();
    let mut v = Vec::new();
    for i in 0..frames {
        let (inv, valid) = gt.inverse(i);
        v.extend(joint_mask(&pred[i], &valid));
        p.extend_from_slice(&pred[i].data);
        g.extend(inv);
    }
    let align = least_squares_align(&p, &g, &v)?;
    score(pred, gt, frames, align)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftCurve {
    /// Unsmoothed mean `|s_0 - s_j| / |s_0|` per frame index.
    pub raw: Vec<f64>,
    /// `raw` after a centred moving average.
    pub smoothed: Vec<f64>,
    /// Number of sequences with at least `j + 1` frames.
    pub data_support: Vec<usize>,
    pub window: usize,
}

impl DriftCurve {
    pub const CSV_HEADER: &'static str = "frame_index,drift,data_support";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for (j, (d, n)) in self.smoothed.iter().zip(&self.data_support).enumerate() {
            let _ = writeln!(s, "{j},{d},{n}");
        }
        s
    }
}

/// Centred moving average over `[j - w/2, j + (w-1)/2]`, truncated at the
/// ends. `window <= 1` returns the input unchanged.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return values.to_vec();
    }
    let back = window / 2;
    let fwd = (window - 1) / 2;
    (0..values.len())
        .map(|j| {
            let lo = j.saturating_sub(back);
            let hi = (j + fwd).min(values.len() - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Per-frame scale drift relative to frame 0, averaged over sequences.
///
/// Each frame's scale is the scale component of its own least-squares
/// `(s, t)` fit. Frames whose fit is degenerate are left out of that
/// index's mean; `data_support` still counts every sequence long enough.
pub fn scale_drift_curve(pairs: &[(&[FloatMap], &DepthSequence)], window: usize) -> Result<DriftCurve> {
    let longest = pairs.iter().map(|(_, g)| g.len()).max().unwrap_or(0);
    let mut sums = vec![0.0; longest];
    let mut counts = vec![0usize; longest];
    let mut support = vec![0usize; longest];
    for (pred, gt) in pairs {
        check_lengths(pred, gt)?;
        let fit = |i: usize| -> Result<AffineAlign> {
            let (inv, valid) = gt.inverse(i);
            least_squares_align(&pred[i].data, &inv, &joint_mask(&pred[i], &valid))
        };
        let first = fit(0)?;
        if first.degenerate || first.scale == 0.0 {
            return Err(Error::Degenerate("frame-0 scale is zero or degenerate".into()));
        }
        for j in 0..gt.len() {
            support[j] += 1;
            let a = fit(j)?;
            if a.degenerate {
                continue;
            }
            sums[j] += (first.scale - a.scale).abs() / first.scale.abs();
            counts[j] += 1;
        }
    }
    let raw: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    Ok(DriftCurve {
        smoothed: moving_average(&raw, window),
        raw,
        data_support: support,
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fits() {
        let a = least_squares_align(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0], &[true; 3]).unwrap();
        assert!((a.scale - 2.0).abs() < 1e-12 && (a.shift - 1.0).abs() < 1e-12);
        let a = least_squares_align(&[0.0, 1.0], &[1.0, 0.0], &[true; 2]).unwrap();
        assert!((a.scale + 1.0).abs() < 1e-12 && (a.shift - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_too_few() {
        let a = least_squares_align(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        assert!(a.degenerate);
        assert_eq!(a.scale, 1.0);
        assert!((a.shift - 0.0).abs() < 1e-12);
        assert!(matches!(
            least_squares_align(&[1.0, 2.0], &[1.0, 2.0], &[true, false]),
            Err(Error::TooFewValid(1))
        ));
    }

    #[test]
    fn apply_examples() {
        assert_eq!(apply_align(&[1.0, 2.0], AffineAlign::IDENTITY), vec![1.0, 2.0]);
        let a = AffineAlign {
            scale: 2.0,
            shift: 1.0,
            degenerate: false,
        };
        assert_eq!(apply_align(&[1.0, 2.0], a), vec![3.0, 5.0]);
    }

    #[test]
    fn metric_fixtures() {
        assert_eq!(absrel(&[2.0, 4.0], &[2.0, 2.0], &[true; 2]).unwrap(), 0.25);
        assert_eq!(delta1(&[2.0, 4.0], &[2.0, 2.0], &[true; 2]).unwrap(), 0.5);
        assert_eq!(absrel(&[2.0, 4.0], &[2.0, 4.0], &[true; 2]).unwrap(), 0.0);
        assert_eq!(delta1(&[2.0, 4.0], &[2.0, 4.0], &[true; 2]).unwrap(), 1.0);
        assert_eq!(delta1(&[2.0, 4.0], &[4.0, 8.0], &[true; 2]).unwrap(), 0.0);
        assert_eq!(delta1(&[2.0], &[-2.0], &[true]).unwrap(), 0.0);
        assert!(matches!(absrel(&[1.0], &[1.0], &[false]), Err(Error::NoValidPixels)));
    }

    #[test]
    fn absrel_ratio_invariance() {
        let g = [1.5, 3.0, 7.0];
        let p = [1.0, 3.5, 6.0];
        let k = 3.7;
        let gk: Vec<f64> = g.iter().map(|v| v * k).collect();
        let pk: Vec<f64> = p.iter().map(|v| v * k).collect();
        let a = absrel(&g, &p, &[true; 3]).unwrap();
        let b = absrel(&gk, &pk, &[true; 3]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn inversion() {
        assert_eq!(invert_disparity(1.0, 1e-6), 1.0);
        assert_eq!(invert_disparity(0.0, 1e-6), 80.0);
        assert_eq!(invert_disparity(0.0125, 1e-6), 80.0);
        assert_eq!(invert_disparity(-3.0, 1e-6), 80.0);
    }

    #[test]
    fn smoothing() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0], 1), vec![1.0, 2.0, 3.0]);
        let s = moving_average(&[0.0, 4.0, 8.0, 12.0, 16.0], 4);
        // j=0: [0,1]; j=2: [0..3]; j=4: [2..4]
        assert_eq!(s, vec![2.0, 4.0, 6.0, 10.0, 12.0]);
    }
}
