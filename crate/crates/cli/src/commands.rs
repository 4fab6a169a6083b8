use std::error::Error as StdError;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use streamdepth::align::{eval_first_frame, eval_global, scale_drift_curve, Horizon};
use streamdepth::bench::{bench_csv, run_bench, BenchConfig};
use streamdepth::cache::PrecisionMode;
use streamdepth::checkpoint::{load_checkpoint, save_checkpoint};
use streamdepth::dataio::{
    generate_sequence, load_sequence, read_manifest, read_pfm, write_pfm, write_sequence, FloatMap, LoadedSequence,
    SceneSpec, MANIFEST_FILE,
};
use streamdepth::losses::LossWeights;
use streamdepth::model::{DepthModel, ModelConfig, StreamingSession};
use streamdepth::train::{log_csv, AugmentConfig, TrainConfig, Trainer};
use streamdepth::verify::{run_checks, CheckOptions};

use crate::{
    Align, BenchArgs, CheckArgs, DriftArgs, EvalArgs, GenArgs, InferArgs, Precision, TrainArgs, EXIT_CHECK_FAILED,
};

type CmdResult = Result<u8, Box<dyn StdError>>;

pub const LATENCY_CSV_HEADER: &str = "frame_index,latency_ms,cache_bytes";
pub const RECORD_FILE: &str = "run.json";

impl From<Precision> for PrecisionMode {
    fn from(p: Precision) -> Self {
        match p {
            Precision::Fp32 => PrecisionMode::Full32,
            Precision::Fp16 => PrecisionMode::Emulated16,
        }
    }
}

fn usage(msg: impl Into<String>) -> Box<dyn StdError> {
    msg.into().into()
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Box<dyn StdError>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| usage(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Writes the resolved configuration of a run. Directory outputs get
/// `<dir>/run.json`; file outputs get `<file stem>.run.json` next to them.
fn write_record(output: &Path, is_dir: bool, command: &str, seed: u64, resolved: Value) -> Result<(), Box<dyn StdError>> {
    let path = if is_dir {
        output.join(RECORD_FILE)
    } else {
        output.with_extension(RECORD_FILE)
    };
    let record = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": resolved,
    });
    write_file(&path, serde_json::to_string_pretty(&record)? + "\n")
}

/// `path` itself when it holds a manifest, otherwise every subdirectory
/// that does, sorted by name.
fn find_sequences(path: &Path) -> Result<Vec<PathBuf>, Box<dyn StdError>> {
    if path.is_file() || path.join(MANIFEST_FILE).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(usage(format!("{}: no such sequence or directory", path.display())));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(usage(format!("{}: no {MANIFEST_FILE} found", path.display())));
    }
    Ok(dirs)
}

fn load_one(path: &Path, stride: usize) -> Result<LoadedSequence, Box<dyn StdError>> {
    let found = find_sequences(path)?;
    if found.len() != 1 {
        return Err(usage(format!("{}: expected one sequence, found {}", path.display(), found.len())));
    }
    Ok(load_sequence(&read_manifest(&found[0])?, stride)?)
}

pub fn prediction_name(i: usize) -> String {
    format!("pred_{i:05}.pfm")
}

fn read_predictions(dir: &Path) -> Result<Vec<FloatMap>, Box<dyn StdError>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| usage(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("pred_") && n.ends_with(".pfm"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(usage(format!("{}: no pred_*.pfm files", dir.display())));
    }
    Ok(files.iter().map(read_pfm).collect::<Result<_, _>>()?)
}

pub fn gen(a: &GenArgs) -> CmdResult {
    if a.frames == 0 || a.sequences == 0 {
        return Err(usage("--frames and --sequences must be at least 1"));
    }
    let base: Option<SceneSpec> = match &a.spec {
        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?)?),
        None => None,
    };
    let mut specs = Vec::with_capacity(a.sequences);
    for i in 0..a.sequences {
        let seed = a.seed.wrapping_add(i as u64);
        let spec = match &base {
            Some(s) => SceneSpec { seed, ..s.clone() },
            None => SceneSpec::random(seed),
        };
        let g = generate_sequence(&spec, a.frames, a.width, a.height)?;
        let id = format!("seq_{i:03}");
        write_sequence(a.out.join(&id), &id, &spec, &g)?;
        specs.push(spec);
    }
    write_record(&a.out, true, "gen", a.seed, json!({ "args": a, "scenes": specs }))?;
    println!("wrote {} sequence(s) of {} frames to {}", a.sequences, a.frames, a.out.display());
    Ok(0)
}

pub fn train(a: &TrainArgs) -> CmdResult {
    let stride = a.stride.map_or(1, usize::from);
    let data = find_sequences(&a.data)?
        .iter()
        .map(|p| Ok(load_sequence(&read_manifest(p)?, stride)?))
        .collect::<Result<Vec<_>, Box<dyn StdError>>>()?;
    let first = data[0].rgb.first().ok_or_else(|| usage("empty sequence"))?;
    let (model, step) = match &a.resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            (ck.model, ck.step)
        }
        None => (
            DepthModel::new(ModelConfig {
                context: a.context,
                width: first.width,
                height: first.height,
                seed: a.seed,
                ..ModelConfig::default()
            })?,
            0,
        ),
    };
    let cfg = TrainConfig {
        lr: a.lr,
        steps: a.steps,
        batch: a.batch,
        clip_frames: a.clip_frames,
        cosine: !a.no_cosine,
        stride_sampling: a.stride.is_none(),
        random_start: true,
        augment: a.augment.then(|| AugmentConfig {
            seed: a.seed,
            ..AugmentConfig::default()
        }),
        weights: LossWeights {
            alpha: a.alpha,
            beta: a.beta,
            gamma: a.gamma,
        },
        seed: a.seed,
    };
    let mut trainer = Trainer::new(model, cfg.clone(), step)?;
    let log = trainer.run(&data)?;
    fs::create_dir_all(&a.out)?;
    write_file(&a.out.join("train_log.csv"), log_csv(&log))?;
    save_checkpoint(a.out.join("checkpoint.bin"), &trainer.model, trainer.step)?;
    write_record(
        &a.out,
        true,
        "train",
        a.seed,
        json!({ "args": a, "model": trainer.model.config, "train": cfg, "start_step": step, "end_step": trainer.step }),
    )?;
    if let Some(last) = log.last() {
        println!("step {} loss {:.6}", last.step, last.loss);
    }
    Ok(0)
}

pub fn infer(a: &InferArgs, streaming: bool) -> CmdResult {
    let model = load_checkpoint(&a.checkpoint)?.model;
    let context = a.context.unwrap_or(model.config.context);
    let seq = load_one(&a.data, a.stride.into())?;
    let feats = model.encode_sequence(&seq.rgb)?;
    fs::create_dir_all(&a.out)?;
    let mut peak = 0;
    if streaming {
        let mut session = StreamingSession::new(&model, context, a.caches, a.precision.into())?;
        let mut csv = String::from(LATENCY_CSV_HEADER);
        csv.push('\n');
        for (t, f) in feats.iter().enumerate() {
            let start = Instant::now();
            let d = session.step(t, f)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            let bytes = session.memory_footprint();
            peak = peak.max(bytes);
            csv.push_str(&format!("{t},{ms},{bytes}\n"));
            write_pfm(a.out.join(prediction_name(t)), &d)?;
        }
        write_file(&a.out.join("latency.csv"), csv)?;
    } else {
        for (t, d) in model.predict_batch_with_context(&feats, context)?.iter().enumerate() {
            write_pfm(a.out.join(prediction_name(t)), d)?;
        }
    }
    let command = if streaming { "stream" } else { "infer-batch" };
    write_record(
        &a.out,
        true,
        command,
        a.seed,
        json!({ "args": a, "model": model.config, "context": context, "peak_cache_bytes": peak }),
    )?;
    println!("{command}: {} frames, context {context}, peak cache {peak} bytes", feats.len());
    Ok(0)
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    let pred = read_predictions(&a.pred)?;
    let gt = load_one(&a.gt, a.stride.into())?;
    let report = match a.align {
        Align::First => eval_first_frame(&pred, &gt.depth)?,
        Align::Global500 => eval_global(&pred, &gt.depth, Horizon::Frames(500))?,
        Align::Globalall => eval_global(&pred, &gt.depth, Horizon::All)?,
    };
    emit(a.out.as_deref(), &report.to_csv(), "eval", a.seed, json!({ "args": a }))
}

pub fn drift(a: &DriftArgs) -> CmdResult {
    if a.pred.len() != a.gt.len() {
        return Err(usage(format!("{} --pred paths but {} --gt paths", a.pred.len(), a.gt.len())));
    }
    let mut loaded = Vec::with_capacity(a.pred.len());
    for (p, g) in a.pred.iter().zip(&a.gt) {
        loaded.push((read_predictions(p)?, load_one(g, a.stride.into())?));
    }
    let pairs: Vec<_> = loaded.iter().map(|(p, g)| (p.as_slice(), &g.depth)).collect();
    let curve = scale_drift_curve(&pairs, a.smooth as usize)?;
    emit(a.out.as_deref(), &curve.to_csv(), "drift", a.seed, json!({ "args": a }))
}

pub fn bench(a: &BenchArgs) -> CmdResult {
    let cfg = BenchConfig {
        contexts: a.context.clone(),
        caches: a.caches,
        precision: a.precision.into(),
        measured_frames: a.frames,
        batch_recompute: !a.skip_batch_recompute,
        seed: a.seed,
        ..BenchConfig::default()
    };
    let csv = bench_csv(&run_bench(&cfg)?);
    emit(a.out.as_deref(), &csv, "bench", a.seed, json!({ "args": a, "model": cfg.model }))
}

/// Writes CSV to `out` (with its record) or prints it.
fn emit(out: Option<&Path>, csv: &str, command: &str, seed: u64, resolved: Value) -> CmdResult {
    match out {
        Some(path) => {
            write_file(path, csv)?;
            write_record(path, false, command, seed, resolved)?;
        }
        None => print!("{csv}"),
    }
    Ok(0)
}

pub fn check(a: &CheckArgs) -> CmdResult {
    let results = run_checks(CheckOptions {
        band_mutation: a.mutate_band,
        seed: a.seed,
    });
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    Ok(if results.iter().all(|r| r.passed) { 0 } else { EXIT_CHECK_FAILED })
}
