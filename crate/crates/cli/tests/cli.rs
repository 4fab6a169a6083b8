use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use streamdepth::dataio::read_pfm;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamdepth"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

/// Generates one short sequence and a 5-step checkpoint under `root`.
fn fixture(root: &Path) {
    ok(&["gen", "--out", s(&root.join("data")), "--frames", "20", "--seed", "7"]);
    ok(&[
        "train",
        "--data",
        s(&root.join("data")),
        "--out",
        s(&root.join("run")),
        "--steps",
        "5",
        "--context",
        "4",
    ]);
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["nope"]).status.code(), Some(1));
    assert_eq!(run(&["gen"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    assert_eq!(run(&["gen", "--out", s(&out), "--frames", "0"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--data", s(&out), "--out", s(&out), "--stride", "5"]).status.code(), Some(1));
    assert_eq!(run(&["eval", "--pred", s(&out), "--gt", s(&out)]).status.code(), Some(1));
}

#[test]
fn check_passes_and_band_mutation_fails() {
    let out = run(&["check"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");

    let out = run(&["check", "--mutate-band"]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("FAIL stream_equivalence"), "{text}");
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["gen", "--out", s(out), "--frames", "4", "--sequences", "2", "--seed", "11"]);
    }
    for seq in ["seq_000", "seq_001"] {
        for name in ["manifest.txt", "rgb_00003.ppm", "depth_00003.pfm", "valid_00003.pfm"] {
            let fa = fs::read(a.join(seq).join(name)).unwrap();
            let fb = fs::read(b.join(seq).join(name)).unwrap();
            assert_eq!(fa, fb, "{seq}/{name}");
        }
    }
    let record = |dir: &Path| -> serde_json::Value {
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("run.json")).unwrap()).unwrap();
        v["config"]["args"]["out"] = serde_json::Value::Null;
        v
    };
    assert_eq!(record(&a), record(&b));
}

#[test]
fn stream_matches_batch_and_outputs_have_golden_headers() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fixture(root);
    let ck = root.join("run/checkpoint.bin");
    let seq = root.join("data/seq_000");
    assert_eq!(first_line(&root.join("run/train_log.csv")), "step,loss,ssi,tgm,sascon,lr");
    assert!(root.join("run/run.json").is_file());

    for (cmd, out) in [("stream", "s"), ("infer-batch", "b")] {
        ok(&[cmd, "--checkpoint", s(&ck), "--data", s(&seq), "--out", s(&root.join(out))]);
    }
    assert_eq!(first_line(&root.join("s/latency.csv")), "frame_index,latency_ms,cache_bytes");
    for t in 0..20 {
        let name = format!("pred_{t:05}.pfm");
        let a = read_pfm(root.join("s").join(&name)).unwrap();
        let b = read_pfm(root.join("b").join(&name)).unwrap();
        let diff = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(diff <= 1e-5, "frame {t}: {diff}");
    }

    let eval = root.join("eval.csv");
    ok(&["eval", "--pred", s(&root.join("s")), "--gt", s(&seq), "--align", "global500", "--out", s(&eval)]);
    assert_eq!(first_line(&eval), "metric,value");
    assert!(root.join("eval.run.json").is_file());

    let drift = root.join("drift.csv");
    ok(&["drift", "--pred", s(&root.join("s")), "--gt", s(&seq), "--smooth", "1", "--out", s(&drift)]);
    assert_eq!(first_line(&drift), "frame_index,drift,data_support");
    let second = fs::read_to_string(&drift).unwrap().lines().nth(1).unwrap().to_string();
    assert!(second.starts_with("0,0,1"), "{second}");
}

#[test]
fn fp16_halves_cache_footprint() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fixture(root);
    let ck = root.join("run/checkpoint.bin");
    let seq = root.join("data/seq_000");
    let last_bytes = |out: &str| -> u64 {
        let text = fs::read_to_string(root.join(out).join("latency.csv")).unwrap();
        text.lines().last().unwrap().rsplit(',').next().unwrap().parse().unwrap()
    };
    for (p, out) in [("fp32", "full"), ("fp16", "half")] {
        ok(&["stream", "--checkpoint", s(&ck), "--data", s(&seq), "--out", s(&root.join(out)), "--precision", p]);
    }
    assert!(last_bytes("full") > 0);
    assert_eq!(last_bytes("full"), 2 * last_bytes("half"));
}

#[test]
fn eval_on_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&["gen", "--out", s(&root.join("data")), "--frames", "6", "--seed", "2"]);
    let seq = root.join("data/seq_000");
    let manifest = streamdepth::dataio::read_manifest(&seq).unwrap();
    let loaded = streamdepth::dataio::load_sequence(&manifest, 1).unwrap();
    let pred = root.join("pred");
    fs::create_dir_all(&pred).unwrap();
    for t in 0..loaded.depth.len() {
        // Predictions are inverse depth; invalid pixels get any positive value.
        let (inv, valid) = loaded.depth.inverse(t);
        let frame = &loaded.depth.frames[t];
        let data = inv.iter().zip(&valid).map(|(&v, &ok)| if ok { v as f32 } else { 1.0 }).collect();
        let map = streamdepth::dataio::FloatMap { width: frame.width, height: frame.height, data };
        streamdepth::dataio::write_pfm(pred.join(format!("pred_{t:05}.pfm")), &map).unwrap();
    }
    let text = ok(&["eval", "--pred", s(&pred), "--gt", s(&seq)]);
    let get = |k: &str| -> f64 {
        text.lines().find_map(|l| l.strip_prefix(&format!("{k},"))).unwrap().parse().unwrap()
    };
    assert!(get("abs_rel") < 1e-5, "{text}");
    assert_eq!(get("delta1"), 1.0);
}

#[test]
fn bench_writes_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    ok(&["bench", "--context", "2", "--skip-batch-recompute", "--out", s(&out)]);
    assert_eq!(
        first_line(&out),
        "mode,context,caches,precision,frames_processed,warmup_excluded,median_ms,cache_bytes"
    );
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 3);
}
