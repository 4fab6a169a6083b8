//! Frame augmentation, the head fine-tuning loop and the loss ablation.

use std::fmt::Write as _;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{eval_first_frame, DepthSequence};
use crate::dataio::{LoadedSequence, RgbImage};
use crate::error::{Error, Result};
use crate::losses::{loss_total, LossWeights, Targets};
use crate::model::{head_forward_taped, DepthFrame, DepthModel, ModelConfig};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Upper bound of the per-frame masked fraction.
    pub max_fraction: f64,
    /// Rectangles tried per frame before giving up on the target coverage.
    pub max_rectangles: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_fraction: 0.4,
            max_rectangles: 64,
            seed: 0,
        }
    }
}

/// Zeroes random rectangles in one frame until a target fraction drawn from
/// `U[0, max_fraction]` is covered. Each rectangle's area is capped by the
/// coverage still missing, so the bound holds even with overlaps.
/// Returns the realised fraction.
pub fn augment_frame(img: &mut RgbImage, cfg: &AugmentConfig, rng: &mut impl Rng) -> f64 {
    let (w, h) = (img.width, img.height);
    let total = w * h;
    if total == 0 || cfg.max_fraction <= 0.0 {
        return 0.0;
    }
    let max_pixels = (cfg.max_fraction.min(1.0) * total as f64).floor() as usize;
    let f = rng.random_range(0.0..=cfg.max_fraction.min(1.0));
    let target = ((f * total as f64).round() as usize).min(max_pixels);
    let mut masked = vec![false; total];
    let mut covered = 0;
    for _ in 0..cfg.max_rectangles {
        if covered >= target {
            break;
        }
        let remaining = target - covered;
        let rw = rng.random_range(1..=w.min(remaining));
        let rh = rng.random_range(1..=h.min(remaining / rw));
        let x0 = rng.random_range(0..=w - rw);
        let y0 = rng.random_range(0..=h - rh);
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                let i = y * w + x;
                if !masked[i] {
                    masked[i] = true;
                    covered += 1;
                    img.data[i * 3..i * 3 + 3].fill(0.0);
                }
            }
        }
    }
    covered as f64 / total as f64
}

/// Augments every frame of a clip independently; depth targets are not
/// touched. Returns the new frames and each frame's masked fraction.
pub fn frame_augment(frames: &[RgbImage], cfg: &AugmentConfig, rng: &mut impl Rng) -> (Vec<RgbImage>, Vec<f64>) {
    let mut out = frames.to_vec();
    let fractions = out.iter_mut().map(|f| augment_frame(f, cfg, rng)).collect();
    (out, fractions)
}

/// Toy-scale default. Targets are inverse depths of scenes up to 80 units
/// deep, so loss gradients are small and plain descent needs a large step.
pub const DEFAULT_LR: f64 = 0.2;
/// The fine-tuning rate used with pre-trained weights.
pub const PRETRAINED_LR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    /// Sequences per step.
    pub batch: usize,
    /// Frames per training clip.
    pub clip_frames: usize,
    pub cosine: bool,
    /// Draw the clip stride uniformly from {1, 2, 3, 4}; otherwise stride 1.
    pub stride_sampling: bool,
    /// Draw the clip start at random; otherwise every clip starts at frame 0.
    pub random_start: bool,
    pub augment: Option<AugmentConfig>,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            steps: 200,
            batch: 1,
            clip_frames: 8,
            cosine: true,
            stride_sampling: true,
            random_start: true,
            augment: None,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate for 0-based step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if !self.cosine || self.steps == 0 {
            return self.lr;
        }
        let p = (step as f64 / self.steps as f64).min(1.0);
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * p).cos())
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.lr)));
        }
        if self.batch == 0 || self.clip_frames == 0 {
            return Err(Error::InvalidArgument("batch and clip_frames must be >= 1".into()));
        }
        if let Some(a) = &self.augment {
            if !(0.0..=1.0).contains(&a.max_fraction) {
                return Err(Error::InvalidArgument(format!("augment fraction {}", a.max_fraction)));
            }
        }
        Ok(())
    }
}

/// One training clip: encoder features plus inverse-depth targets.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub features: Vec<Tensor<f32>>,
    pub target: Vec<Vec<f64>>,
    pub valid: Vec<Vec<bool>>,
}

impl TrainSample {
    /// Frames `start, start + stride, ...` (at most `len`) of a sequence.
    pub fn from_clip(
        model: &DepthModel,
        rgb: &[RgbImage],
        depth: &DepthSequence,
        start: usize,
        stride: usize,
        len: usize,
    ) -> Result<Self> {
        let idx: Vec<usize> = (start..rgb.len()).step_by(stride.max(1)).take(len).collect();
        if idx.is_empty() {
            return Err(Error::SequenceTooShort(format!("no frames from {start}")));
        }
        let mut features = Vec::with_capacity(idx.len());
        let mut target = Vec::with_capacity(idx.len());
        let mut valid = Vec::with_capacity(idx.len());
        for &i in &idx {
            features.push(model.encode_frame(&rgb[i])?);
            let (inv, v) = depth.inverse(i);
            target.push(inv);
            valid.push(v);
        }
        Ok(Self {
            features,
            target,
            valid,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub ssi: f64,
    pub tgm: f64,
    pub sascon: f64,
    pub lr: f64,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "step,loss,ssi,tgm,sascon,lr";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.loss, self.ssi, self.tgm, self.sascon, self.lr
        )
    }
}

/// Plain gradient descent on the head; the encoder is never touched.
pub struct Trainer {
    pub model: DepthModel,
    pub config: TrainConfig,
    /// Steps taken so far, including those of a resumed checkpoint.
    pub step: u64,
    rng: ChaCha8Rng,
    aug_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: DepthModel, config: TrainConfig, step: u64) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ step.rotate_left(32));
        let aug_seed = config.augment.as_ref().map_or(0, |a| a.seed);
        let aug_rng = ChaCha8Rng::seed_from_u64(aug_seed ^ step.rotate_left(32) ^ 0xa06);
        Ok(Self {
            model,
            config,
            step,
            rng,
            aug_rng,
        })
    }

    /// Draws one clip from a random sequence, with stride sampling and
    /// augmentation as configured.
    pub fn sample(&mut self, data: &[LoadedSequence]) -> Result<TrainSample> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let seq = &data[self.rng.random_range(0..data.len())];
        let stride = if self.config.stride_sampling {
            self.rng.random_range(1..=4usize)
        } else {
            1
        };
        let span = (self.config.clip_frames - 1) * stride + 1;
        let start = if self.config.random_start && seq.rgb.len() > span {
            self.rng.random_range(0..=seq.rgb.len() - span)
        } else {
            0
        };
        let rgb = match &self.config.augment {
            Some(a) => frame_augment(&seq.rgb, a, &mut self.aug_rng).0,
            None => seq.rgb.clone(),
        };
        TrainSample::from_clip(&self.model, &rgb, &seq.depth, start, stride, self.config.clip_frames)
    }

    /// Forward, backward and one update over `batch`.
    pub fn train_step(&mut self, batch: &[TrainSample]) -> Result<LogRow> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let cfg = &self.model.config;
        let mut tape = Tape::new();
        let vars = self.model.head.register(&mut tape, true)?;
        let mut totals: Vec<Var> = Vec::with_capacity(batch.len());
        let (mut ssi, mut tgm, mut sascon) = (0.0, 0.0, 0.0);
        for sample in batch {
            let xs = sample
                .features
                .iter()
                .map(|f| tape.constant(f.clone()))
                .collect::<Result<Vec<_>>>()?;
            let pred = head_forward_taped(&mut tape, &vars, &xs, cfg, cfg.context)?;
            let tg = Targets::new(&sample.target, &sample.valid)?;
            let terms = loss_total(&mut tape, &pred, &tg, &self.config.weights)?;
            ssi += terms.ssi;
            tgm += terms.tgm;
            sascon += terms.sascon;
            totals.push(terms.total);
        }
        let summed = tape.concat(&totals)?;
        let loss = tape.mean(summed)?;
        let loss_value = tape.value(loss).item() as f64;
        let grads = tape.backward(loss).map_err(|e| {
            Error::InvalidArgument(format!("step {}: loss {loss_value} rejected: {e}", self.step))
        })?;
        let lr = self.config.lr_at(self.step);
        for (p, v) in self.model.head.tensors_mut().into_iter().zip(&vars.all) {
            let g = grads.get(*v).expect("head params are leaves");
            let lr32 = lr as f32;
            for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                *w -= lr32 * d;
            }
        }
        let n = batch.len() as f64;
        let row = LogRow {
            step: self.step,
            loss: loss_value,
            ssi: ssi / n,
            tgm: tgm / n,
            sascon: sascon / n,
            lr,
        };
        self.step += 1;
        Ok(row)
    }

    /// Runs `config.steps` sampled steps.
    pub fn run(&mut self, data: &[LoadedSequence]) -> Result<Vec<LogRow>> {
        let mut log = Vec::with_capacity(self.config.steps);
        for _ in 0..self.config.steps {
            let batch = (0..self.config.batch)
                .map(|_| self.sample(data))
                .collect::<Result<Vec<_>>>()?;
            log.push(self.train_step(&batch)?);
        }
        Ok(log)
    }
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LogRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

/// Batch-mode predictions for a whole sequence.
pub fn predict_sequence(model: &DepthModel, rgb: &[RgbImage]) -> Result<Vec<DepthFrame>> {
    model.predict_batch(&model.encode_sequence(rgb)?)
}

/// Mean first-frame-aligned AbsRel and delta1 over sequences.
pub fn evaluate_first_frame(model: &DepthModel, data: &[LoadedSequence]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let (mut a, mut d) = (0.0, 0.0);
    for seq in data {
        let r = eval_first_frame(&predict_sequence(model, &seq.rgb)?, &seq.depth)?;
        a += r.abs_rel;
        d += r.delta1;
    }
    Ok((a / data.len() as f64, d / data.len() as f64))
}

/// One row of the loss ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    /// `None` evaluates the untrained model.
    pub weights: Option<LossWeights>,
    pub augment: bool,
}

impl AblationRow {
    /// The five standard rows.
    pub fn standard() -> Vec<AblationRow> {
        let row = |name: &str, weights: Option<LossWeights>, augment| AblationRow {
            name: name.into(),
            weights,
            augment,
        };
        vec![
            row("none", None, false),
            row("ssi+tgm", Some(LossWeights::ssi_tgm()), false),
            row("ssi+tgm+aug", Some(LossWeights::ssi_tgm()), true),
            row("ssi+tgm+sascon", Some(LossWeights::default()), false),
            row("ssi+tgm+sascon+aug", Some(LossWeights::default()), true),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub name: String,
    pub abs_rel: f64,
    pub delta1: f64,
}

pub const ABLATION_CSV_HEADER: &str = "config,abs_rel,delta1";

pub fn ablation_csv(rows: &[AblationResult]) -> String {
    let mut s = String::from(ABLATION_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.name, r.abs_rel, r.delta1);
    }
    s
}

/// Trains one fresh model per row, identical except for the row's loss
/// weights and augmentation, and evaluates each with first-frame alignment.
pub fn ablation_suite(
    model_config: &ModelConfig,
    train: &TrainConfig,
    train_set: &[LoadedSequence],
    eval_set: &[LoadedSequence],
    rows: &[AblationRow],
) -> Result<Vec<AblationResult>> {
    rows.iter()
        .map(|row| {
            let model = DepthModel::new(model_config.clone())?;
            let model = match row.weights {
                None => model,
                Some(w) => {
                    let cfg = TrainConfig {
                        weights: w,
                        augment: row.augment.then(|| train.augment.clone().unwrap_or_default()),
                        ..train.clone()
                    };
                    let mut t = Trainer::new(model, cfg, 0)?;
                    t.run(train_set)?;
                    t.model
                }
            };
            let (abs_rel, delta1) = evaluate_first_frame(&model, eval_set)?;
            Ok(AblationResult {
                name: row.name.clone(),
                abs_rel,
                delta1,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::SequenceKind;
    use crate::dataio::{generate_sequence, SceneSpec};

    fn small_model() -> DepthModel {
        DepthModel::new(ModelConfig {
            patch: 4,
            height: 8,
            width: 8,
            encoder_channels: 8,
            head_channels: 8,
            context: 4,
            seed: 1,
            ..Default::default()
        })
        .unwrap()
    }

    fn loaded(seed: u64, frames: usize, w: usize, h: usize) -> LoadedSequence {
        let spec = SceneSpec::random(seed);
        let g = generate_sequence(&spec, frames, w, h).unwrap();
        LoadedSequence {
            id: format!("s{seed}"),
            depth: DepthSequence::new(g.depth, g.valid, SequenceKind::GroundTruth).unwrap(),
            rgb: g.rgb,
            source_frames: (0..frames).collect(),
        }
    }

    #[test]
    fn augment_identity_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = RgbImage::new(4, 4, vec![0.5; 48]).unwrap();
        let off = AugmentConfig {
            max_fraction: 0.0,
            ..Default::default()
        };
        let (out, fr) = frame_augment(std::slice::from_ref(&img), &off, &mut rng);
        assert_eq!(out[0], img);
        assert_eq!(fr[0], 0.0);

        let cfg = AugmentConfig::default();
        let mut sum = 0.0;
        for _ in 0..1000 {
            let mut f = RgbImage::new(32, 32, vec![0.5; 32 * 32 * 3]).unwrap();
            let frac = augment_frame(&mut f, &cfg, &mut rng);
            assert!((0.0..=0.4).contains(&frac));
            let zeroed = f.data.chunks(3).filter(|p| p.iter().all(|&v| v == 0.0)).count();
            assert_eq!(zeroed as f64 / 1024.0, frac);
            assert!(f.data.chunks(3).all(|p| p.iter().all(|&v| v == 0.0) || p.iter().all(|&v| v == 0.5)));
            sum += frac;
        }
        assert!((sum / 1000.0 - 0.2).abs() < 0.02, "{}", sum / 1000.0);
    }

    #[test]
    fn cosine_schedule() {
        let cfg = TrainConfig {
            lr: 1.0,
            steps: 10,
            ..Default::default()
        };
        assert_eq!(cfg.lr_at(0), 1.0);
        assert!((cfg.lr_at(5) - 0.5).abs() < 1e-12);
        assert!(cfg.lr_at(10).abs() < 1e-12);
        assert_eq!(TrainConfig { cosine: false, ..cfg }.lr_at(7), 1.0);
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let model = small_model();
        let seq = loaded(3, 6, 8, 8);
        let mut t = Trainer::new(
            model.clone(),
            TrainConfig {
                lr: 0.0,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let s = t.sample(std::slice::from_ref(&seq)).unwrap();
        let row = t.train_step(&[s]).unwrap();
        assert!(row.loss.is_finite());
        assert_eq!(t.model, model);
        assert_eq!(t.step, 1);
    }

    #[test]
    fn encoder_stays_frozen() {
        let model = small_model();
        let encoder = model.encoder.clone();
        let seq = loaded(4, 8, 8, 8);
        let mut t = Trainer::new(
            model,
            TrainConfig {
                steps: 3,
                lr: 1e-2,
                augment: Some(AugmentConfig::default()),
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let head = t.model.head.clone();
        let log = t.run(std::slice::from_ref(&seq)).unwrap();
        assert_eq!(log.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(t.model.encoder, encoder);
        assert_ne!(t.model.head, head);
    }

    #[test]
    fn clip_selection() {
        let model = small_model();
        let seq = loaded(5, 10, 8, 8);
        let s = TrainSample::from_clip(&model, &seq.rgb, &seq.depth, 1, 3, 8).unwrap();
        assert_eq!(s.features.len(), 3);
        let inv = seq.depth.inverse(4).0;
        assert_eq!(s.target[1], inv);
    }

    #[test]
    fn ablation_is_deterministic() {
        let cfg = small_model().config;
        let train = TrainConfig {
            steps: 2,
            clip_frames: 4,
            ..Default::default()
        };
        let data = vec![loaded(6, 6, 8, 8)];
        let rows = AblationRow::standard();
        let a = ablation_suite(&cfg, &train, &data, &data, &rows).unwrap();
        let b = ablation_suite(&cfg, &train, &data, &data, &rows).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        let csv = ablation_csv(&a);
        assert!(csv.starts_with("config,abs_rel,delta1\nnone,"));
    }
}
