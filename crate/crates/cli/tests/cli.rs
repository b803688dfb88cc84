//! End-to-end runs of the `ebm3d` binary on a tiny configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ebm3d::energynet::save_checkpoint;
use ebm3d::kittiio::{from_box3d, write_result_file};
use ebm3d::synthscene::read_dataset;
use ebm3d::{Net, NetDims, PoolConfig};
use tempfile::TempDir;

const TINY: &[&str] = &[
    "timing=false",
    "synth.n_scenes=5",
    "synth.width=48",
    "synth.length=48",
    "synth.channels=4",
    "synth.cars_max=2",
    "net.grid_w=2",
    "net.grid_l=3",
    "net.enc_width=4",
    "net.hidden=16",
    "train.num_noise=8",
    "train.batch_size=2",
    "train.epochs=2",
    "refine.iterations=3",
    "refine.lambda=0.01",
    "refine.trace=true",
    "sweep.ts=0,1,3",
    "scan.points=21",
];

fn ebm3d(args: &[&str], extra: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ebm3d"));
    cmd.args(args);
    for s in TINY.iter().chain(extra) {
        cmd.arg("--set").arg(s);
    }
    cmd.env("RUST_LOG", "error").output().expect("binary runs")
}

fn ok(out: Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "exit {:?}: {stderr}", out.status.code());
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Run {
    _tmp: TempDir,
    root: PathBuf,
}

impl Run {
    fn dataset(&self) -> PathBuf {
        self.root.join("data")
    }

    fn ckpt(&self) -> PathBuf {
        self.root.join("train/checkpoint.bin")
    }
}

/// synth-gen followed by train.
fn trained() -> Run {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().to_path_buf();
    let run = Run { _tmp: tmp, root };
    ok(ebm3d(&["synth-gen", "--out", p(&run.dataset())], &[]));
    ok(ebm3d(&["train", "--dataset", p(&run.dataset()), "--out", p(&run.root.join("train"))], &[]));
    run
}

fn full_pipeline() -> Run {
    let run = trained();
    let (d, c) = (run.dataset(), run.ckpt());
    for cmd in ["refine", "eval", "sweep-T", "angle-scan"] {
        let out = run.root.join(cmd);
        ok(ebm3d(&[cmd, "--dataset", p(&d), "--checkpoint", p(&c), "--out", p(&out)], &[]));
    }
    run
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(files_under(&path));
        } else {
            out.insert(path.clone(), fs::read(&path).unwrap());
        }
    }
    out
}

#[test]
fn every_command_is_byte_identical_across_runs() {
    let (a, b) = (full_pipeline(), full_pipeline());
    let fa = files_under(&a.root);
    let fb = files_under(&b.root);
    let rel = |m: &BTreeMap<PathBuf, Vec<u8>>, root: &Path| -> BTreeMap<PathBuf, Vec<u8>> {
        m.iter().map(|(k, v)| (k.strip_prefix(root).unwrap().to_path_buf(), v.clone())).collect()
    };
    let (ra, rb) = (rel(&fa, &a.root), rel(&fb, &b.root));
    assert_eq!(ra.keys().collect::<Vec<_>>(), rb.keys().collect::<Vec<_>>());
    for (k, v) in &ra {
        assert!(*v == rb[k], "{} differs between runs", k.display());
    }
    for f in ["refine/traces.csv", "eval/eval.csv", "sweep-T/sweep_T.csv", "angle-scan/angle_scan.csv", "train/loss.csv"] {
        assert!(ra.contains_key(Path::new(f)), "missing {f}");
    }
}

#[test]
fn synth_gen_writes_manifest_and_rejects_empty_requests() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("d");
    let text = ok(ebm3d(&["synth-gen", "--out", p(&out)], &["synth.n_val=2"]));
    assert!(text.contains("scenes=5 train=3 val=2"), "{text}");
    let files = read_dataset(&out).unwrap();
    assert_eq!(files.iter().map(|f| f.entry.id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    for f in &files {
        assert_eq!(f.load().unwrap().id, f.entry.id);
    }
    let empty = ebm3d(&["synth-gen", "--out", p(&tmp.path().join("e"))], &["synth.n_scenes=0"]);
    assert_eq!(empty.status.code(), Some(2));
}

#[test]
fn zero_iterations_keep_detections_and_traces_never_drop() {
    let run = trained();
    let (d, c) = (run.dataset(), run.ckpt());
    let t0 = ok(ebm3d(
        &["refine", "--dataset", p(&d), "--checkpoint", p(&c), "--out", p(&run.root.join("r0"))],
        &["refine.iterations=0", "refine.split=all"],
    ));
    let summary = t0.lines().last().unwrap();
    assert!(summary.contains("mean_f_increase=0.000000"), "{summary}");
    let field = |key: &str| summary.split(' ').find_map(|kv| kv.strip_prefix(key)).unwrap().to_string();
    assert_eq!(field("mean_iou3d_initial="), field("mean_iou3d_refined="));

    ok(ebm3d(
        &["refine", "--dataset", p(&d), "--checkpoint", p(&c), "--out", p(&run.root.join("r3"))],
        &["refine.split=all"],
    ));
    let traces = fs::read_to_string(run.root.join("r3/traces.csv")).unwrap();
    let mut best: BTreeMap<(String, String), f64> = BTreeMap::new();
    for line in traces.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let key = (cols[0].to_string(), cols[1].to_string());
        let f: f64 = cols[3].parse().unwrap();
        if cols[4] == "1" {
            if let Some(prev) = best.get(&key) {
                assert!(f > *prev, "accepted value dropped in {line}");
            }
            best.insert(key, f);
        }
    }
    assert!(!best.is_empty());
}

#[test]
fn ground_truth_as_detections_scores_perfect_ap() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    ok(ebm3d(&["synth-gen", "--out", p(&data)], &[]));
    let dets = tmp.path().join("dets");
    fs::create_dir_all(&dets).unwrap();
    for f in read_dataset(&data).unwrap() {
        let s = f.load().unwrap();
        let labels: Vec<_> = s.gts.iter().map(|g| from_box3d(&g.bbox, "Car", Some(1.0))).collect();
        fs::write(dets.join(format!("{:06}.txt", s.id)), write_result_file(&labels).unwrap()).unwrap();
    }
    let out = tmp.path().join("eval");
    ok(ebm3d(&["eval", "--dataset", p(&data), "--dets", p(&dets), "--out", p(&out)], &["refine.split=all"]));
    let table = fs::read_to_string(out.join("eval.csv")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 10);
    for row in rows {
        assert_eq!(row.split(',').nth(4), Some("1.0"), "{row}");
    }
}

#[test]
fn angle_scan_wraps_and_zero_network_is_flat() {
    let run = trained();
    let d = run.dataset();
    let scan = |ckpt: &Path, out: &str| -> Vec<f64> {
        ok(ebm3d(&["angle-scan", "--dataset", p(&d), "--checkpoint", p(ckpt), "--out", p(&run.root.join(out))], &[]));
        fs::read_to_string(run.root.join(out).join("angle_scan.csv"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect()
    };
    let f = scan(&run.ckpt(), "a");
    assert_eq!(f.len(), 21);
    assert!((f[0] - f[20]).abs() <= 1e-12 * (1.0 + f[0].abs()), "{} vs {}", f[0], f[20]);

    let dims = NetDims { pool: PoolConfig::new(2, 3).unwrap(), channels: 4, enc_width: 4, hidden: 16 };
    let zero = run.root.join("zero.bin");
    save_checkpoint(&Net::zeros(dims).unwrap(), &zero).unwrap();
    assert!(scan(&zero, "z").iter().all(|v| *v == 0.0));
}

#[test]
fn training_resumes_from_a_matching_checkpoint_only() {
    let run = trained();
    let d = run.dataset();
    let again = ebm3d(
        &["train", "--dataset", p(&d), "--checkpoint", p(&run.ckpt()), "--out", p(&run.root.join("t2"))],
        &["train.epochs=1"],
    );
    let text = ok(again);
    assert!(text.contains("steps="), "{text}");
    let mismatch = ebm3d(
        &["train", "--dataset", p(&d), "--checkpoint", p(&run.ckpt()), "--out", p(&run.root.join("t3"))],
        &["net.hidden=8"],
    );
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    // missing required flag and unknown key are config errors
    assert_eq!(ebm3d(&["train", "--out", p(&out)], &[]).status.code(), Some(2));
    assert_eq!(ebm3d(&["synth-gen", "--out", p(&out)], &["no.such.key=1"]).status.code(), Some(2));
    // a dataset directory that does not exist
    let missing = tmp.path().join("nothing");
    assert_eq!(ebm3d(&["train", "--dataset", p(&missing), "--out", p(&out)], &[]).status.code(), Some(4));
    // a corrupt checkpoint
    let bad = tmp.path().join("bad.bin");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let code = ebm3d(&["refine", "--dataset", p(&missing), "--checkpoint", p(&bad), "--out", p(&out)], &[]).status.code();
    assert_eq!(code, Some(3));
    // clap rejects unknown subcommands
    assert_eq!(ebm3d(&["frobnicate"], &[]).status.code(), Some(2));
}
