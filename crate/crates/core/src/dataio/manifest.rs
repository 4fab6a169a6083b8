//! Sequence manifests.
//!
//! ```text
//! manifest  := header* frame*
//! header    := key "=" value "\n"          (split at the first '=')
//! frame     := rgb " " depth " " valid "\n" (paths relative to the manifest)
//! ```
//!
//! Known keys: `id`, `frames`, `width`, `height`, `seed`, `stride`, `scene`
//! (one-line JSON). Unknown keys are kept. Paths may not contain
//! whitespace or `=`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::scene::{GeneratedSequence, SceneSpec};
use super::{read_pfm, read_ppm, write_pfm, write_ppm, FloatMap, RgbImage};
use crate::align::{DepthSequence, SequenceKind};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct FrameFiles {
    pub rgb: String,
    pub depth: String,
    pub valid: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceManifest {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Stride the files were rendered with (1 = every frame).
    pub stride: usize,
    pub scene: Option<SceneSpec>,
    pub extra: BTreeMap<String, String>,
    pub frames: Vec<FrameFiles>,
    /// Directory the paths are relative to.
    pub root: PathBuf,
}

impl SequenceManifest {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "id={}", self.id);
        let _ = writeln!(s, "frames={}", self.frames.len());
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "height={}", self.height);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "stride={}", self.stride);
        if let Some(scene) = &self.scene {
            let _ = writeln!(s, "scene={}", serde_json::to_string(scene).expect("scene serialises"));
        }
        for (k, v) in &self.extra {
            let _ = writeln!(s, "{k}={v}");
        }
        for f in &self.frames {
            let _ = writeln!(s, "{} {} {}", f.rgb, f.depth, f.valid);
        }
        s
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let bad = |msg: String| Error::format("manifest", msg);
        let mut header = BTreeMap::new();
        let mut frames = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            if frames.is_empty() {
                if let Some((k, v)) = line.split_once('=') {
                    header.insert(k.trim().to_string(), v.to_string());
                    continue;
                }
            }
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 3 || parts.iter().any(|p| p.is_empty() || p.contains('=')) {
                return Err(bad(format!("line {}: expected three paths", lineno + 1)));
            }
            frames.push(FrameFiles {
                rgb: parts[0].into(),
                depth: parts[1].into(),
                valid: parts[2].into(),
            });
        }
        let mut take = |k: &str| header.remove(k).ok_or_else(|| bad(format!("missing key {k:?}")));
        let num = |k: &str, v: String| -> Result<u64> {
            v.trim().parse().map_err(|_| bad(format!("key {k:?}: not a number: {v:?}")))
        };
        let id = take("id")?;
        let count = num("frames", take("frames")?)? as usize;
        let width = num("width", take("width")?)? as usize;
        let height = num("height", take("height")?)? as usize;
        let seed = num("seed", take("seed")?)?;
        let stride = num("stride", take("stride")?)? as usize;
        let scene = match header.remove("scene") {
            Some(json) => Some(serde_json::from_str(&json).map_err(|e| bad(format!("scene: {e}")))?),
            None => None,
        };
        if count != frames.len() {
            return Err(bad(format!("header says {count} frames, {} listed", frames.len())));
        }
        Ok(Self {
            id,
            width,
            height,
            seed,
            stride,
            scene,
            extra: header,
            frames,
            root: root.into(),
        })
    }
}

pub fn write_manifest(dir: impl AsRef<Path>, manifest: &SequenceManifest) -> Result<PathBuf> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads `path`, or `path/manifest.txt` when `path` is a directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<SequenceManifest> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join(MANIFEST_FILE);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    SequenceManifest::parse(&text, root)
}

/// Writes all frames of `seq` plus a manifest into `dir`.
pub fn write_sequence(
    dir: impl AsRef<Path>,
    id: &str,
    scene: &SceneSpec,
    seq: &GeneratedSequence,
) -> Result<SequenceManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = seq.rgb.first().ok_or_else(|| Error::InvalidScene("empty sequence".into()))?;
    let mut frames = Vec::with_capacity(seq.rgb.len());
    for (i, ((rgb, depth), valid)) in seq.rgb.iter().zip(&seq.depth).zip(&seq.valid).enumerate() {
        let files = FrameFiles {
            rgb: format!("rgb_{i:05}.ppm"),
            depth: format!("depth_{i:05}.pfm"),
            valid: format!("valid_{i:05}.pfm"),
        };
        write_ppm(dir.join(&files.rgb), rgb)?;
        write_pfm(dir.join(&files.depth), depth)?;
        let mask = FloatMap::new(
            depth.width,
            depth.height,
            valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        )?;
        write_pfm(dir.join(&files.valid), &mask)?;
        frames.push(files);
    }
    let manifest = SequenceManifest {
        id: id.to_string(),
        width: first.width,
        height: first.height,
        seed: scene.seed,
        stride: 1,
        scene: Some(scene.clone()),
        extra: BTreeMap::new(),
        frames,
        root: dir.to_path_buf(),
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct LoadedSequence {
    pub id: String,
    pub rgb: Vec<RgbImage>,
    pub depth: DepthSequence,
    /// Original frame index of each loaded frame.
    pub source_frames: Vec<usize>,
}

/// Loads every `stride`-th frame starting at 0.
pub fn load_sequence(manifest: &SequenceManifest, stride: usize) -> Result<LoadedSequence> {
    if !(1..=4).contains(&stride) {
        return Err(Error::InvalidArgument(format!("stride {stride} not in 1..=4")));
    }
    let mut rgb = Vec::new();
    let mut depth = Vec::new();
    let mut valid = Vec::new();
    let mut source_frames = Vec::new();
    for (i, f) in manifest.frames.iter().enumerate().step_by(stride) {
        let img = read_ppm(manifest.root.join(&f.rgb))?;
        let d = read_pfm(manifest.root.join(&f.depth))?;
        let v = read_pfm(manifest.root.join(&f.valid))?;
        if (img.width, img.height) != (manifest.width, manifest.height)
            || (d.width, d.height) != (manifest.width, manifest.height)
            || (v.width, v.height) != (manifest.width, manifest.height)
        {
            return Err(Error::format("manifest", format!("frame {i} resolution differs from header")));
        }
        rgb.push(img);
        valid.push(v.data.iter().map(|&m| m > 0.5).collect());
        depth.push(d);
        source_frames.push(i);
    }
    Ok(LoadedSequence {
        id: manifest.id.clone(),
        rgb,
        depth: DepthSequence::new(depth, valid, SequenceKind::GroundTruth)?,
        source_frames,
    })
}
