//! Latency and cache-memory measurements.
//!
//! `stream` times one [`StreamingSession::step`] per frame. `batch_recompute`
//! times a full batch pass over every frame seen so far, which is what a
//! batch model has to do to emit each new frame online. `batch_amortized`
//! is one batch pass over the whole clip divided by its length. All modes
//! skip the first `context` frames and report the median of the rest.
//!
//! [`StreamingSession::step`]: crate::model::StreamingSession::step

use std::fmt::Write as _;
use std::time::Instant;

use crate::cache::PrecisionMode;
use crate::dataio::{generate_sequence, SceneSpec};
use crate::error::{Error, Result};
use crate::model::{DepthModel, ModelConfig, StreamingSession};
use crate::tensor::Tensor;

pub const MIN_MEASURED_FRAMES: usize = 100;

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub model: ModelConfig,
    pub contexts: Vec<usize>,
    pub caches: usize,
    pub precision: PrecisionMode,
    /// Frames measured after warm-up, at least [`MIN_MEASURED_FRAMES`].
    pub measured_frames: usize,
    pub batch_recompute: bool,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            contexts: vec![8, 16, 32],
            caches: 1,
            precision: PrecisionMode::Full32,
            measured_frames: MIN_MEASURED_FRAMES,
            batch_recompute: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub mode: &'static str,
    pub context: usize,
    pub caches: usize,
    pub precision: PrecisionMode,
    pub frames_processed: usize,
    pub warmup_excluded: usize,
    pub median_ms: f64,
    pub cache_bytes: usize,
}

pub const BENCH_CSV_HEADER: &str =
    "mode,context,caches,precision,frames_processed,warmup_excluded,median_ms,cache_bytes";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.mode,
            r.context,
            r.caches,
            r.precision.flag(),
            r.frames_processed,
            r.warmup_excluded,
            r.median_ms,
            r.cache_bytes
        );
    }
    s
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn clip_features(model: &DepthModel, frames: usize, seed: u64) -> Result<Vec<Tensor<f32>>> {
    let cfg = &model.config;
    let seq = generate_sequence(&SceneSpec::random(seed), frames, cfg.width, cfg.height)?;
    model.encode_sequence(&seq.rgb)
}

/// Runs every mode for every context length.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.measured_frames < MIN_MEASURED_FRAMES {
        return Err(Error::InvalidArgument(format!(
            "bench needs at least {MIN_MEASURED_FRAMES} measured frames"
        )));
    }
    let mut rows = Vec::new();
    for &c in &cfg.contexts {
        let model = DepthModel::new(ModelConfig {
            context: c,
            caches: cfg.caches,
            precision: cfg.precision,
            ..cfg.model.clone()
        })?;
        let total = c + cfg.measured_frames;
        let feats = clip_features(&model, total, cfg.seed)?;
        let row = |mode, median_ms, cache_bytes| BenchRow {
            mode,
            context: c,
            caches: cfg.caches,
            precision: cfg.precision,
            frames_processed: total,
            warmup_excluded: c,
            median_ms,
            cache_bytes,
        };

        let mut session = StreamingSession::new(&model, c, cfg.caches, cfg.precision)?;
        let mut times = Vec::with_capacity(cfg.measured_frames);
        for (t, f) in feats.iter().enumerate() {
            let start = Instant::now();
            session.step(t, f)?;
            if t >= c {
                times.push(elapsed_ms(start));
            }
        }
        rows.push(row("stream", median(&mut times), session.memory_footprint()));

        if cfg.batch_recompute {
            let mut times = Vec::with_capacity(cfg.measured_frames);
            for t in c..total {
                let start = Instant::now();
                model.predict_batch(&feats[..=t])?;
                times.push(elapsed_ms(start));
            }
            rows.push(row("batch_recompute", median(&mut times), 0));
        }

        let start = Instant::now();
        model.predict_batch(&feats)?;
        rows.push(row("batch_amortized", elapsed_ms(start) / total as f64, 0));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn short_runs_are_rejected() {
        let cfg = BenchConfig {
            measured_frames: 10,
            ..Default::default()
        };
        assert!(run_bench(&cfg).is_err());
    }

    #[test]
    fn rows_and_header() {
        let cfg = BenchConfig {
            model: ModelConfig {
                patch: 4,
                height: 8,
                width: 8,
                encoder_channels: 4,
                head_channels: 4,
                motion_modules: 1,
                ..Default::default()
            },
            contexts: vec![2],
            batch_recompute: false,
            ..Default::default()
        };
        let rows = run_bench(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].frames_processed, 102);
        assert_eq!(rows[0].warmup_excluded, 2);
        assert_eq!(rows[0].cache_bytes, 2 * 4 * 4 * 4);
        let csv = bench_csv(&rows);
        assert!(csv.starts_with(&format!("{BENCH_CSV_HEADER}\nstream,2,1,fp32,102,2,")));
    }
}
