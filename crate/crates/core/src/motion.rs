//! Temporal attention block ("motion module").
//!
//! Two execution modes share every kernel:
//!
//! * **Batch**: all `N` frames at once, query frame `q` restricted to keys
//!   `k` with `0 <= q - k < c` (a banded lower-triangular mask).
//! * **Stream**: one frame at a time, attending over a [`CacheBank`] window
//!   that already contains the current frame.
//!
//! Cached latents are layer-normalised but not yet position-encoded; the
//! positional encoding depends on the window-relative age of each entry
//! (`0` for the newest frame), so keys and values are recomputed each step.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cache::CacheBank;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Real, Tensor};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// `[N, S, C]`
    FrameMajor,
    /// `[S, N, C]`
    TokenMajor,
}

/// Hidden features of `frames` frames with `tokens` spatial tokens each.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentFeatures<T = f32> {
    frames: usize,
    tokens: usize,
    channels: usize,
    layout: Layout,
    data: Vec<T>,
}

impl<T: Real> LatentFeatures<T> {
    pub fn new(frames: usize, tokens: usize, channels: usize, layout: Layout, data: Vec<T>) -> Result<Self> {
        if data.len() != frames * tokens * channels {
            return Err(Error::shape(
                "latent",
                format!("{frames}x{tokens}x{channels} vs {} values", data.len()),
            ));
        }
        Ok(Self {
            frames,
            tokens,
            channels,
            layout,
            data,
        })
    }

    /// Stacks per-frame `[S x C]` tensors into frame-major features.
    pub fn from_frames(frames: &[Tensor<T>]) -> Result<Self> {
        let first = frames.first().ok_or(Error::SequenceTooShort("no frames".into()))?;
        let [s, c] = *first.shape() else {
            return Err(Error::shape("latent", format!("frame shape {:?}", first.shape())));
        };
        let mut data = Vec::with_capacity(frames.len() * s * c);
        for f in frames {
            if f.shape() != first.shape() {
                return Err(Error::shape("latent", "frames differ in shape"));
            }
            data.extend_from_slice(f.data());
        }
        Self::new(frames.len(), s, c, Layout::FrameMajor, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    fn offset(&self, n: usize, s: usize) -> usize {
        match self.layout {
            Layout::FrameMajor => (n * self.tokens + s) * self.channels,
            Layout::TokenMajor => (s * self.frames + n) * self.channels,
        }
    }

    /// Element `(frame, token, channel)` regardless of layout.
    pub fn get(&self, n: usize, s: usize, c: usize) -> T {
        self.data[self.offset(n, s) + c]
    }

    fn row(&self, n: usize, s: usize) -> &[T] {
        let o = self.offset(n, s);
        &self.data[o..o + self.channels]
    }

    fn relayout(&self, layout: Layout) -> Self {
        if layout == self.layout {
            return self.clone();
        }
        let mut out = Self {
            layout,
            data: vec![T::zero(); self.data.len()],
            ..*self
        };
        for n in 0..self.frames {
            for s in 0..self.tokens {
                let dst = out.offset(n, s);
                out.data[dst..dst + self.channels].copy_from_slice(self.row(n, s));
            }
        }
        out
    }

    /// `(n, s, c) -> (s, n, c)`, so attention can run along time per token.
    pub fn to_token_major(&self) -> Self {
        self.relayout(Layout::TokenMajor)
    }

    pub fn to_frame_major(&self) -> Self {
        self.relayout(Layout::FrameMajor)
    }

    /// Frame `n` as an `[S x C]` tensor.
    pub fn frame(&self, n: usize) -> Tensor<T> {
        let mut data = Vec::with_capacity(self.tokens * self.channels);
        for s in 0..self.tokens {
            data.extend_from_slice(self.row(n, s));
        }
        Tensor::new(vec![self.tokens, self.channels], data).expect("frame shape")
    }

    pub fn to_frames(&self) -> Vec<Tensor<T>> {
        (0..self.frames).map(|n| self.frame(n)).collect()
    }
}

/// Banded causal mask: query `q` may attend key `k` iff `0 <= q - k < context`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowedMask {
    pub context: usize,
    pub frames: usize,
}

impl WindowedMask {
    pub fn new(context: usize, frames: usize) -> Result<Self> {
        if context == 0 {
            return Err(Error::InvalidArgument("context length must be >= 1".into()));
        }
        Ok(Self { context, frames })
    }

    pub fn admissible(&self, q: usize, k: usize) -> bool {
        k <= q && q - k < self.context
    }

    /// First admissible key for query `q`.
    pub fn window_start(&self, q: usize) -> usize {
        (q + 1).saturating_sub(self.context)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionModuleParams<T = f32> {
    pub ln_gain: Tensor<T>,
    pub ln_bias: Tensor<T>,
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    /// One row per window-relative age, `context x C`.
    pub pe: Tensor<T>,
}

pub(crate) fn random_matrix<T: Real>(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    let data = (0..rows * cols).map(|_| T::lit(normal.sample(rng))).collect();
    Tensor::new(vec![rows, cols], data).expect("matrix shape")
}

/// Standard sinusoidal table: even channels `sin`, odd channels `cos`.
pub fn sinusoidal_table<T: Real>(rows: usize, channels: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(rows * channels);
    for pos in 0..rows {
        for ch in 0..channels {
            let pair = (ch / 2) as f64;
            let freq = 1.0 / 10000f64.powf(2.0 * pair / channels as f64);
            let angle = pos as f64 * freq;
            data.push(T::lit(if ch % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![rows, channels], data).expect("table shape")
}

impl<T: Real> MotionModuleParams<T> {
    pub fn init(rng: &mut impl Rng, channels: usize, context: usize) -> Self {
        let std = 1.0 / (channels as f64).sqrt();
        Self {
            ln_gain: Tensor::full(&[channels], T::one()),
            ln_bias: Tensor::zeros(&[channels]),
            wq: random_matrix(rng, channels, channels, std),
            bq: Tensor::zeros(&[channels]),
            wk: random_matrix(rng, channels, channels, std),
            bk: Tensor::zeros(&[channels]),
            wv: random_matrix(rng, channels, channels, std),
            bv: Tensor::zeros(&[channels]),
            wo: random_matrix(rng, channels, channels, std),
            bo: Tensor::zeros(&[channels]),
            pe: sinusoidal_table(context, channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.ln_gain.len()
    }

    /// Number of positional-encoding rows (the largest usable context).
    pub fn max_context(&self) -> usize {
        self.pe.shape()[0]
    }

    pub fn tensors(&self) -> [&Tensor<T>; 11] {
        [
            &self.ln_gain,
            &self.ln_bias,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.pe,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 11] {
        [
            &mut self.ln_gain,
            &mut self.ln_bias,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.pe,
        ]
    }

    pub fn normalize(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        tensor::layer_norm(x, &self.ln_gain, &self.ln_bias, T::lit(LN_EPS))
    }

    fn check_age(&self, age: usize, context: usize) -> Result<()> {
        if age >= context || age >= self.max_context() {
            return Err(Error::AgeOutOfRange {
                age,
                context: context.min(self.max_context()),
            });
        }
        Ok(())
    }

    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> Result<MotionVars> {
        let mut reg = |t: &Tensor<T>| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        Ok(MotionVars {
            ln_gain: reg(&self.ln_gain)?,
            ln_bias: reg(&self.ln_bias)?,
            wq: reg(&self.wq)?,
            bq: reg(&self.bq)?,
            wk: reg(&self.wk)?,
            bk: reg(&self.bk)?,
            wv: reg(&self.wv)?,
            bv: reg(&self.bv)?,
            wo: reg(&self.wo)?,
            bo: reg(&self.bo)?,
            pe: reg(&self.pe)?,
        })
    }
}

/// Adds PE row `age` to every token of one `[S x C]` frame.
pub fn positional_encode<T: Real>(
    latent: &Tensor<T>,
    age: usize,
    context: usize,
    params: &MotionModuleParams<T>,
) -> Result<Tensor<T>> {
    params.check_age(age, context)?;
    tensor::add_row(latent, params.pe.row(age))
}

/// Attention weights and output of one streaming step.
#[derive(Debug, Clone)]
pub struct StreamAttention<T> {
    /// Output projection of the attended values, `[S x C]` (no residual).
    pub output: Tensor<T>,
    /// `[S x w]`, oldest window entry first.
    pub weights: Tensor<T>,
}

/// Cross-attention of the current normalised frame over a cached window.
///
/// `window` is oldest-first and must end with the current frame. Entry at
/// position `i` of a `w`-long window is encoded with age `w - 1 - i`.
pub fn attend_streaming<T: Real>(
    current: &Tensor<T>,
    window: &[Tensor<T>],
    context: usize,
    params: &MotionModuleParams<T>,
) -> Result<StreamAttention<T>> {
    let w = window.len();
    if w == 0 {
        return Err(Error::EmptyWindow);
    }
    if w > context {
        return Err(Error::WindowTooLong { len: w, context });
    }
    let q = tensor::linear(&positional_encode(current, 0, context, params)?, &params.wq, &params.bq)?;
    let mut keys = Vec::with_capacity(w);
    let mut values = Vec::with_capacity(w);
    for (pos, latent) in window.iter().enumerate() {
        let encoded = positional_encode(latent, w - 1 - pos, context, params)?;
        keys.push(tensor::linear(&encoded, &params.wk, &params.bk)?);
        values.push(tensor::linear(&encoded, &params.wv, &params.bv)?);
    }
    let kr: Vec<&Tensor<T>> = keys.iter().collect();
    let vr: Vec<&Tensor<T>> = values.iter().collect();
    let (attended, weights) = tensor::attend_tokens(&q, &kr, &vr)?;
    Ok(StreamAttention {
        output: tensor::linear(&attended, &params.wo, &params.bo)?,
        weights,
    })
}

/// Masked attention over a whole normalised sequence, run as one windowed
/// attention per query frame and token. Returns the output projection
/// (no residual) in frame-major layout.
pub fn attend_batch_masked<T: Real>(
    seq: &LatentFeatures<T>,
    mask: WindowedMask,
    params: &MotionModuleParams<T>,
) -> Result<LatentFeatures<T>> {
    let tm = seq.to_token_major();
    let (n, s, c) = (tm.frames, tm.tokens, tm.channels);
    if params.channels() != c {
        return Err(Error::shape("attend_batch_masked", format!("channels {c} vs params {}", params.channels())));
    }
    let mut out = vec![T::zero(); n * s * c];
    for tok in 0..s {
        let rows: Vec<Tensor<T>> = (0..n)
            .map(|f| Tensor::new(vec![1, c], tm.row(f, tok).to_vec()).expect("row shape"))
            .collect();
        for q in 0..n {
            let start = mask.window_start(q);
            let query = tensor::linear(&positional_encode(&rows[q], 0, mask.context, params)?, &params.wq, &params.bq)?;
            let mut keys = Vec::with_capacity(q + 1 - start);
            let mut values = Vec::with_capacity(q + 1 - start);
            for (k, row) in rows.iter().enumerate().take(q + 1).skip(start) {
                let encoded = positional_encode(row, q - k, mask.context, params)?;
                keys.push(tensor::linear(&encoded, &params.wk, &params.bk)?);
                values.push(tensor::linear(&encoded, &params.wv, &params.bv)?);
            }
            let kr: Vec<&Tensor<T>> = keys.iter().collect();
            let vr: Vec<&Tensor<T>> = values.iter().collect();
            let (attended, _) = tensor::attend_tokens(&query, &kr, &vr)?;
            let projected = tensor::linear(&attended, &params.wo, &params.bo)?;
            let o = (tok * n + q) * c;
            out[o..o + c].copy_from_slice(projected.data());
        }
    }
    Ok(LatentFeatures::new(n, s, c, Layout::TokenMajor, out)?.to_frame_major())
}

pub enum Mode<'a, T: Real> {
    Batch(WindowedMask),
    /// `x` must hold exactly one frame, with index `frame_index`.
    Stream {
        bank: &'a mut CacheBank<T>,
        frame_index: usize,
    },
}

/// Layer norm, temporal attention in the given mode, residual add.
///
/// In stream mode the normalised (pre-encoding) latent is pushed into the
/// bank before attending, so the window always ends with the current frame.
pub fn motion_module_forward<T: Real>(
    x: &LatentFeatures<T>,
    mode: Mode<'_, T>,
    params: &MotionModuleParams<T>,
) -> Result<LatentFeatures<T>> {
    let frames = x.to_frames();
    let normed = frames.iter().map(|f| params.normalize(f)).collect::<Result<Vec<_>>>()?;
    let attn_frames = match mode {
        Mode::Batch(mask) => attend_batch_masked(&LatentFeatures::from_frames(&normed)?, mask, params)?.to_frames(),
        Mode::Stream { bank, frame_index } => {
            if normed.len() != 1 {
                return Err(Error::InvalidArgument(format!(
                    "stream mode takes one frame, got {}",
                    normed.len()
                )));
            }
            let (slot, _) = bank.push(frame_index, &normed[0])?;
            let window = bank.window(slot);
            vec![attend_streaming(&normed[0], &window, bank.context(), params)?.output]
        }
    };
    let out = frames
        .iter()
        .zip(&attn_frames)
        .map(|(f, a)| tensor::add(f, a))
        .collect::<Result<Vec<_>>>()?;
    LatentFeatures::from_frames(&out)
}

/// Tape handles for one module's parameters.
#[derive(Clone, Copy, Debug)]
pub struct MotionVars {
    pub ln_gain: Var,
    pub ln_bias: Var,
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub pe: Var,
}

/// Differentiable batch-mode forward over per-frame `[S x C]` inputs,
/// including the residual.
pub fn forward_batch_taped<T: Real>(
    tape: &mut Tape<T>,
    vars: &MotionVars,
    xs: &[Var],
    mask: WindowedMask,
) -> Result<Vec<Var>> {
    let eps = T::lit(LN_EPS);
    let pe_rows_avail = tape.value(vars.pe).shape()[0];
    let ages = mask.context.min(xs.len());
    if ages > pe_rows_avail {
        return Err(Error::AgeOutOfRange {
            age: ages - 1,
            context: pe_rows_avail,
        });
    }
    let z = xs
        .iter()
        .map(|&x| tape.layer_norm(x, vars.ln_gain, vars.ln_bias, eps))
        .collect::<Result<Vec<_>>>()?;
    let pe_rows = (0..ages)
        .map(|a| tape.slice_rows(vars.pe, a, 1))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(xs.len());
    for q in 0..xs.len() {
        let start = mask.window_start(q);
        let eq = tape.add_row(z[q], pe_rows[0])?;
        let query = tape.linear(eq, vars.wq, vars.bq)?;
        let mut keys = Vec::with_capacity(q + 1 - start);
        let mut values = Vec::with_capacity(q + 1 - start);
        for k in start..=q {
            let e = tape.add_row(z[k], pe_rows[q - k])?;
            keys.push(tape.linear(e, vars.wk, vars.bk)?);
            values.push(tape.linear(e, vars.wv, vars.bv)?);
        }
        let attended = tape.attend(query, &keys, &values)?;
        let projected = tape.linear(attended, vars.wo, vars.bo)?;
        out.push(tape.add(xs[q], projected)?);
    }
    Ok(out)
}
