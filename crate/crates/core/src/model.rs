//! The toy depth network: a frozen per-frame encoder stub followed by a
//! trainable head of per-frame blocks interleaved with motion modules, and
//! a per-patch inverse-depth readout upsampled to full resolution.
//!
//! The head runs three ways that share the same kernels:
//! - [`head_forward_taped`] for training (batch mode, differentiable),
//! - [`DepthModel::predict_batch`] (batch mode, plain),
//! - [`StreamingSession`] (one frame at a time against latent caches).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::{CacheBank, PrecisionMode};
use crate::dataio::{FloatMap, RgbImage};
use crate::error::{Error, Result};
use crate::motion::{
    forward_batch_taped, motion_module_forward, random_matrix, LatentFeatures, Mode, MotionModuleParams,
    MotionVars, WindowedMask, LN_EPS,
};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Real, Tensor};

/// Predicted inverse depth for one frame (non-metric, unconstrained sign).
pub type DepthFrame = FloatMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub patch: usize,
    pub height: usize,
    pub width: usize,
    pub encoder_channels: usize,
    pub head_channels: usize,
    pub motion_modules: usize,
    pub context: usize,
    pub caches: usize,
    pub precision: PrecisionMode,
    pub seed: u64,
    /// Multi-scale fusion factors of the full-size head. Recorded only; the
    /// toy head works at a single scale.
    pub fusion_factors: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            height: 32,
            width: 32,
            encoder_channels: 32,
            head_channels: 16,
            motion_modules: 2,
            context: 16,
            caches: 1,
            precision: PrecisionMode::Full32,
            seed: 0,
            fusion_factors: vec![4.0, 2.0, 1.0, 0.5],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.patch == 0 || self.height % self.patch != 0 || self.width % self.patch != 0 {
            return bad(format!(
                "{}x{} is not divisible by patch size {}",
                self.height, self.width, self.patch
            ));
        }
        if self.height == 0 || self.width == 0 {
            return bad("empty frame size".into());
        }
        if self.context == 0 || self.motion_modules == 0 || self.caches == 0 {
            return bad("context, motion_modules and caches must be >= 1".into());
        }
        if self.encoder_channels == 0 || self.head_channels == 0 {
            return bad("channel counts must be >= 1".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    pub fn tokens(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Token index of every pixel, row-major.
    pub fn pixel_tokens(&self) -> Vec<usize> {
        let (_, gw) = self.grid();
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (y / self.patch) * gw + x / self.patch))
            .collect()
    }
}

/// Frozen non-overlapping patchify and linear projection.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStub {
    pub patch: usize,
    /// `[3 p^2 x E]`
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
}

impl EncoderStub {
    pub fn init(rng: &mut ChaCha8Rng, patch: usize, channels: usize) -> Self {
        let fan_in = 3 * patch * patch;
        Self {
            patch,
            weight: random_matrix(rng, fan_in, channels, 1.0 / (fan_in as f64).sqrt()),
            bias: random_matrix::<f32>(rng, 1, channels, 0.1).reshape(vec![channels]).expect("bias shape"),
        }
    }

    /// Patch vectors of one frame, `[S x 3p^2]`, patches row-major and
    /// pixels within a patch row-major, RGB interleaved.
    pub fn patchify(&self, rgb: &RgbImage) -> Result<Tensor<f32>> {
        let p = self.patch;
        if rgb.width % p != 0 || rgb.height % p != 0 {
            return Err(Error::shape(
                "encode_frame",
                format!("{}x{} not divisible by patch {p}", rgb.width, rgb.height),
            ));
        }
        let (gh, gw) = (rgb.height / p, rgb.width / p);
        let mut data = Vec::with_capacity(rgb.data.len());
        for py in 0..gh {
            for px in 0..gw {
                for dy in 0..p {
                    let row = (py * p + dy) * rgb.width + px * p;
                    data.extend_from_slice(&rgb.data[row * 3..(row + p) * 3]);
                }
            }
        }
        Tensor::new(vec![gh * gw, 3 * p * p], data)
    }

    pub fn encode_frame(&self, rgb: &RgbImage) -> Result<Tensor<f32>> {
        tensor::linear(&self.patchify(rgb)?, &self.weight, &self.bias)
    }

    pub fn tensors(&self) -> [&Tensor<f32>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<f32>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Pre-norm per-frame residual MLP: `h + W2 tanh(W1 LN(h))`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBlock<T = f32> {
    pub ln_gain: Tensor<T>,
    pub ln_bias: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Real> FrameBlock<T> {
    fn init(rng: &mut ChaCha8Rng, c: usize) -> Self {
        let std = 1.0 / (c as f64).sqrt();
        Self {
            ln_gain: Tensor::full(&[c], T::one()),
            ln_bias: Tensor::zeros(&[c]),
            w1: random_matrix(rng, c, c, std),
            b1: Tensor::zeros(&[c]),
            w2: random_matrix(rng, c, c, std),
            b2: Tensor::zeros(&[c]),
        }
    }

    fn tensors(&self) -> [&Tensor<T>; 6] {
        [&self.ln_gain, &self.ln_bias, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 6] {
        [
            &mut self.ln_gain,
            &mut self.ln_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    pub fn forward(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        let z = tensor::layer_norm(h, &self.ln_gain, &self.ln_bias, T::lit(LN_EPS))?;
        let a = tensor::map(&tensor::linear(&z, &self.w1, &self.b1)?, |v| v.tanh());
        tensor::add(h, &tensor::linear(&a, &self.w2, &self.b2)?)
    }
}

/// Trainable head parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T = f32> {
    pub in_w: Tensor<T>,
    pub in_b: Tensor<T>,
    pub blocks: Vec<FrameBlock<T>>,
    pub motion: Vec<MotionModuleParams<T>>,
    pub out_ln_gain: Tensor<T>,
    pub out_ln_bias: Tensor<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
}

impl<T: Real> HeadParams<T> {
    pub fn init(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let (e, c) = (cfg.encoder_channels, cfg.head_channels);
        let mut blocks = Vec::with_capacity(cfg.motion_modules);
        let mut motion = Vec::with_capacity(cfg.motion_modules);
        for _ in 0..cfg.motion_modules {
            blocks.push(FrameBlock::init(rng, c));
            motion.push(MotionModuleParams::init(rng, c, cfg.context));
        }
        Self {
            in_w: random_matrix(rng, e, c, 1.0 / (e as f64).sqrt()),
            in_b: Tensor::zeros(&[c]),
            blocks,
            motion,
            out_ln_gain: Tensor::full(&[c], T::one()),
            out_ln_bias: Tensor::zeros(&[c]),
            out_w: random_matrix(rng, c, 1, 1.0 / (c as f64).sqrt()),
            out_b: Tensor::zeros(&[1]),
        }
    }

    /// All tensors in declared order: input projection, then per stage the
    /// frame block and the motion module, then the readout.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.in_w, &self.in_b];
        for (b, m) in self.blocks.iter().zip(&self.motion) {
            out.extend(b.tensors());
            out.extend(m.tensors());
        }
        out.extend([&self.out_ln_gain, &self.out_ln_bias, &self.out_w, &self.out_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.in_w, &mut self.in_b];
        for (b, m) in self.blocks.iter_mut().zip(self.motion.iter_mut()) {
            out.extend(b.tensors_mut());
            out.extend(m.tensors_mut());
        }
        out.extend([
            &mut self.out_ln_gain,
            &mut self.out_ln_bias,
            &mut self.out_w,
            &mut self.out_b,
        ]);
        out
    }

    pub fn cast<U: Real>(&self) -> HeadParams<U> {
        let mut out = HeadParams {
            in_w: self.in_w.cast(),
            in_b: self.in_b.cast(),
            blocks: Vec::new(),
            motion: Vec::new(),
            out_ln_gain: self.out_ln_gain.cast(),
            out_ln_bias: self.out_ln_bias.cast(),
            out_w: self.out_w.cast(),
            out_b: self.out_b.cast(),
        };
        for b in &self.blocks {
            out.blocks.push(FrameBlock {
                ln_gain: b.ln_gain.cast(),
                ln_bias: b.ln_bias.cast(),
                w1: b.w1.cast(),
                b1: b.b1.cast(),
                w2: b.w2.cast(),
                b2: b.b2.cast(),
            });
        }
        for m in &self.motion {
            out.motion.push(MotionModuleParams {
                ln_gain: m.ln_gain.cast(),
                ln_bias: m.ln_bias.cast(),
                wq: m.wq.cast(),
                bq: m.bq.cast(),
                wk: m.wk.cast(),
                bk: m.bk.cast(),
                wv: m.wv.cast(),
                bv: m.bv.cast(),
                wo: m.wo.cast(),
                bo: m.bo.cast(),
                pe: m.pe.cast(),
            });
        }
        out
    }

    /// Disables the temporal path by zeroing every output projection.
    pub fn zero_motion_outputs(&mut self) {
        for m in &mut self.motion {
            m.wo.data_mut().fill(T::zero());
            m.bo.data_mut().fill(T::zero());
        }
    }

    /// Smallest positional table across modules.
    pub fn max_context(&self) -> usize {
        self.motion.iter().map(MotionModuleParams::max_context).min().unwrap_or(0)
    }

    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> Result<HeadVars> {
        let all = self
            .tensors()
            .into_iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HeadVars::from_flat(all, self.blocks.len()))
    }

    fn readout(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        let z = tensor::layer_norm(h, &self.out_ln_gain, &self.out_ln_bias, T::lit(LN_EPS))?;
        tensor::linear(&z, &self.out_w, &self.out_b)
    }

    fn check_context(&self, context: usize) -> Result<()> {
        if context == 0 || context > self.max_context() {
            return Err(Error::InvalidArgument(format!(
                "context {context} outside 1..={}",
                self.max_context()
            )));
        }
        Ok(())
    }

    /// Batch-mode head over per-frame encoder features; returns one
    /// per-token inverse-depth vector per frame.
    pub fn forward_batch(&self, features: &[Tensor<T>], context: usize) -> Result<Vec<Vec<T>>> {
        if features.is_empty() {
            return Err(Error::SequenceTooShort("head needs at least one frame".into()));
        }
        self.check_context(context)?;
        let mask = WindowedMask::new(context, features.len())?;
        let mut hs = features
            .iter()
            .map(|f| tensor::linear(f, &self.in_w, &self.in_b))
            .collect::<Result<Vec<_>>>()?;
        for (block, motion) in self.blocks.iter().zip(&self.motion) {
            let blocked = hs.iter().map(|h| block.forward(h)).collect::<Result<Vec<_>>>()?;
            let x = LatentFeatures::from_frames(&blocked)?;
            hs = motion_module_forward(&x, Mode::Batch(mask), motion)?.to_frames();
        }
        hs.iter().map(|h| Ok(self.readout(h)?.into_data())).collect()
    }
}

/// Tape handles for [`HeadParams`], same order as [`HeadParams::tensors`].
#[derive(Clone, Debug)]
pub struct HeadVars {
    pub all: Vec<Var>,
    pub in_w: Var,
    pub in_b: Var,
    pub blocks: Vec<[Var; 6]>,
    pub motion: Vec<MotionVars>,
    pub out: [Var; 4],
}

impl HeadVars {
    /// Splits handles laid out as in [`HeadParams::tensors`].
    pub fn from_flat(all: Vec<Var>, stages: usize) -> Self {
        let mut it = all.iter().copied();
        let mut next = || it.next().expect("head var layout");
        let in_w = next();
        let in_b = next();
        let mut blocks = Vec::with_capacity(stages);
        let mut motion = Vec::with_capacity(stages);
        for _ in 0..stages {
            blocks.push([next(), next(), next(), next(), next(), next()]);
            motion.push(MotionVars {
                ln_gain: next(),
                ln_bias: next(),
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                pe: next(),
            });
        }
        let out = [next(), next(), next(), next()];
        Self {
            all,
            in_w,
            in_b,
            blocks,
            motion,
            out,
        }
    }
}

/// Differentiable batch-mode head. `features` are `[S x E]` per frame; the
/// result is one `[H*W]` inverse-depth vector per frame.
pub fn head_forward_taped<T: Real>(
    tape: &mut Tape<T>,
    vars: &HeadVars,
    features: &[Var],
    cfg: &ModelConfig,
    context: usize,
) -> Result<Vec<Var>> {
    if features.is_empty() {
        return Err(Error::SequenceTooShort("head needs at least one frame".into()));
    }
    let mask = WindowedMask::new(context, features.len())?;
    let eps = T::lit(LN_EPS);
    let mut hs = features
        .iter()
        .map(|&f| tape.linear(f, vars.in_w, vars.in_b))
        .collect::<Result<Vec<_>>>()?;
    for (b, m) in vars.blocks.iter().zip(&vars.motion) {
        let mut blocked = Vec::with_capacity(hs.len());
        for &h in &hs {
            let z = tape.layer_norm(h, b[0], b[1], eps)?;
            let a = tape.linear(z, b[2], b[3])?;
            let a = tape.tanh(a)?;
            let y = tape.linear(a, b[4], b[5])?;
            blocked.push(tape.add(h, y)?);
        }
        hs = forward_batch_taped(tape, m, &blocked, mask)?;
    }
    let pixel_tokens = cfg.pixel_tokens();
    hs.iter()
        .map(|&h| {
            let z = tape.layer_norm(h, vars.out[0], vars.out[1], eps)?;
            let d = tape.linear(z, vars.out[2], vars.out[3])?;
            tape.gather(d, pixel_tokens.clone())
        })
        .collect()
}

/// Nearest-neighbour upsampling of per-token values to a full frame.
pub fn upsample_tokens<T: Real>(tokens: &[T], cfg: &ModelConfig) -> Result<DepthFrame> {
    if tokens.len() != cfg.tokens() {
        return Err(Error::shape("upsample", format!("{} tokens, expected {}", tokens.len(), cfg.tokens())));
    }
    let data = cfg.pixel_tokens().into_iter().map(|t| tokens[t].as_f64() as f32).collect();
    FloatMap::new(cfg.width, cfg.height, data)
}

/// Encoder stub plus head.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthModel {
    pub config: ModelConfig,
    pub encoder: EncoderStub,
    pub head: HeadParams<f32>,
}

const HEAD_STREAM: u64 = 0x4ead_0000_0000_0001;

impl DepthModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut enc_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut head_rng = ChaCha8Rng::seed_from_u64(config.seed ^ HEAD_STREAM);
        Ok(Self {
            encoder: EncoderStub::init(&mut enc_rng, config.patch, config.encoder_channels),
            head: HeadParams::init(&mut head_rng, &config),
            config,
        })
    }

    pub fn encode_frame(&self, rgb: &RgbImage) -> Result<Tensor<f32>> {
        if (rgb.width, rgb.height) != (self.config.width, self.config.height) {
            return Err(Error::shape(
                "encode_frame",
                format!(
                    "frame is {}x{}, model expects {}x{}",
                    rgb.width, rgb.height, self.config.width, self.config.height
                ),
            ));
        }
        self.encoder.encode_frame(rgb)
    }

    pub fn encode_sequence(&self, frames: &[RgbImage]) -> Result<Vec<Tensor<f32>>> {
        frames.iter().map(|f| self.encode_frame(f)).collect()
    }

    /// Batch-mode inference with the model's own context length.
    pub fn predict_batch(&self, features: &[Tensor<f32>]) -> Result<Vec<DepthFrame>> {
        self.predict_batch_with_context(features, self.config.context)
    }

    pub fn predict_batch_with_context(&self, features: &[Tensor<f32>], context: usize) -> Result<Vec<DepthFrame>> {
        self.head
            .forward_batch(features, context)?
            .iter()
            .map(|t| upsample_tokens(t, &self.config))
            .collect()
    }

    pub fn session(&self) -> Result<StreamingSession<'_>> {
        StreamingSession::new(self, self.config.context, self.config.caches, self.config.precision)
    }
}

/// Frame-by-frame inference against per-module latent caches.
pub struct StreamingSession<'m> {
    model: &'m DepthModel,
    banks: Vec<CacheBank<f32>>,
    next_frame: usize,
    context: usize,
}

impl<'m> StreamingSession<'m> {
    pub fn new(model: &'m DepthModel, context: usize, caches: usize, precision: PrecisionMode) -> Result<Self> {
        model.head.check_context(context)?;
        let banks = (0..model.head.motion.len())
            .map(|site| CacheBank::new(site, caches, context, precision))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            banks,
            next_frame: 0,
            context,
        })
    }

    pub fn context(&self) -> usize {
        self.context
    }

    /// Index the next call to [`step`](Self::step) must use.
    pub fn next_frame(&self) -> usize {
        self.next_frame
    }

    /// Processes frame `frame_index`, which must be exactly the next one.
    pub fn step(&mut self, frame_index: usize, features: &Tensor<f32>) -> Result<DepthFrame> {
        if frame_index != self.next_frame {
            return Err(Error::SessionMisuse {
                expected: self.next_frame,
                got: frame_index,
            });
        }
        let head = &self.model.head;
        let mut h = tensor::linear(features, &head.in_w, &head.in_b)?;
        for ((block, motion), bank) in head.blocks.iter().zip(&head.motion).zip(self.banks.iter_mut()) {
            let x = LatentFeatures::from_frames(&[block.forward(&h)?])?;
            let y = motion_module_forward(&x, Mode::Stream { bank, frame_index }, motion)?;
            h = y.frame(0);
        }
        let out = upsample_tokens(head.readout(&h)?.data(), &self.model.config)?;
        self.next_frame += 1;
        Ok(out)
    }

    pub fn step_rgb(&mut self, rgb: &RgbImage) -> Result<DepthFrame> {
        let f = self.model.encode_frame(rgb)?;
        self.step(self.next_frame, &f)
    }

    pub fn reset(&mut self) {
        for b in &mut self.banks {
            b.clear();
        }
        self.next_frame = 0;
    }

    /// Bytes held by all caches.
    pub fn memory_footprint(&self) -> usize {
        self.banks.iter().map(CacheBank::memory_footprint).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            patch: 4,
            height: 8,
            width: 12,
            encoder_channels: 8,
            head_channels: 8,
            context: 4,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    fn frames(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<RgbImage> {
        use rand::RngExt;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let data = (0..cfg.pixels() * 3).map(|_| rng.random::<f32>()).collect();
                RgbImage::new(cfg.width, cfg.height, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { height: 30, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { context: 0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { motion_modules: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn encoder_is_frame_local() {
        let m = DepthModel::new(small()).unwrap();
        let f = frames(&m.config, 1, 1).remove(0);
        assert_eq!(m.encode_frame(&f).unwrap(), m.encode_frame(&f).unwrap());

        let zero = RgbImage::black(m.config.width, m.config.height);
        let feats = m.encode_frame(&zero).unwrap();
        for t in 0..feats.rows() {
            assert_eq!(feats.row(t), m.encoder.bias.data());
        }

        // change one pixel in the patch at grid (1, 2)
        let mut g = f.clone();
        let px = (5 * g.width + 9) * 3;
        g.data[px] = 1.0 - g.data[px];
        let (a, b) = (m.encode_frame(&f).unwrap(), m.encode_frame(&g).unwrap());
        let (_, gw) = m.config.grid();
        for t in 0..a.rows() {
            assert_eq!(a.row(t) == b.row(t), t != gw + 2, "token {t}");
        }
    }

    #[test]
    fn pixel_to_token_map() {
        let cfg = small();
        let map = cfg.pixel_tokens();
        assert_eq!(map[0], 0);
        assert_eq!(map[4], 1);
        assert_eq!(map[4 * 12], 3);
        assert_eq!(map[7 * 12 + 11], 5);
    }

    #[test]
    fn stream_matches_batch_and_resets() {
        let m = DepthModel::new(small()).unwrap();
        let feats = m.encode_sequence(&frames(&m.config, 10, 2)).unwrap();
        let batch = m.predict_batch(&feats).unwrap();
        let mut s = m.session().unwrap();
        let mut first = Vec::new();
        for (i, f) in feats.iter().enumerate() {
            let d = s.step(i, f).unwrap();
            let diff = d.data.iter().zip(&batch[i].data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            assert!(diff < 1e-5, "frame {i}: {diff}");
            first.push(d);
        }
        s.reset();
        assert_eq!(s.memory_footprint(), 0);
        for (i, f) in feats.iter().enumerate() {
            assert_eq!(s.step(i, f).unwrap(), first[i]);
        }
    }

    #[test]
    fn session_misuse() {
        let m = DepthModel::new(small()).unwrap();
        let f = m.encode_sequence(&frames(&m.config, 1, 2)).unwrap().remove(0);
        let mut s = m.session().unwrap();
        assert!(matches!(s.step(1, &f), Err(Error::SessionMisuse { expected: 0, got: 1 })));
        s.step(0, &f).unwrap();
        assert!(s.step(0, &f).is_err());
        assert!(StreamingSession::new(&m, 5, 1, PrecisionMode::Full32).is_err());
    }

    #[test]
    fn zero_motion_is_per_frame() {
        let mut m = DepthModel::new(small()).unwrap();
        m.head.zero_motion_outputs();
        let feats = m.encode_sequence(&frames(&m.config, 5, 4)).unwrap();
        let batch = m.predict_batch(&feats).unwrap();
        for (i, f) in feats.iter().enumerate() {
            let alone = m.predict_batch(std::slice::from_ref(f)).unwrap();
            assert_eq!(alone[0], batch[i]);
        }
    }

    #[test]
    fn taped_matches_plain() {
        let m = DepthModel::new(small()).unwrap();
        let feats = m.encode_sequence(&frames(&m.config, 6, 5)).unwrap();
        let plain = m.predict_batch(&feats).unwrap();
        let mut tape = Tape::new();
        let vars = m.head.register(&mut tape, true).unwrap();
        let xs: Vec<Var> = feats.iter().map(|f| tape.constant(f.clone()).unwrap()).collect();
        let out = head_forward_taped(&mut tape, &vars, &xs, &m.config, m.config.context).unwrap();
        for (o, p) in out.iter().zip(&plain) {
            let d = tape.value(*o).data().iter().zip(&p.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            assert!(d < 1e-5, "{d}");
        }
        assert_eq!(vars.all.len(), m.head.tensors().len());
    }

    #[test]
    fn footprint_is_bounded() {
        let m = DepthModel::new(small()).unwrap();
        let feats = m.encode_sequence(&frames(&m.config, 9, 6)).unwrap();
        let mut s = m.session().unwrap();
        let mut sizes = Vec::new();
        for (i, f) in feats.iter().enumerate() {
            s.step(i, f).unwrap();
            sizes.push(s.memory_footprint());
        }
        let c = m.config.context;
        let per_frame = m.config.motion_modules * m.config.tokens() * m.config.head_channels * 4;
        assert_eq!(sizes[c - 1], c * per_frame);
        assert!(sizes[c - 1..].iter().all(|&b| b == c * per_frame));
    }
}
