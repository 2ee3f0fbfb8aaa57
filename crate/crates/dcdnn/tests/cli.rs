use std::path::Path;
use std::process::{Command, Output};

use dcdnn::manifest::{sha256_hex, Manifest};

const FAST: [&str; 9] = [
    "ref_lines=1",
    "hidden_4=8",
    "hidden_8=8",
    "depth=1",
    "pretrain_epochs=2",
    "recursive_epochs=2",
    "rounds=1",
    "batch_small=32",
    "modes=2",
];

fn dcdnn(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcdnn"))
        .current_dir(cwd)
        .env_remove("DCDNN_CONFIG")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn dcdnn")
}

fn fast(mut args: Vec<&str>) -> Vec<&str> {
    let mut out = Vec::new();
    for s in FAST {
        out.extend(["--set", s]);
    }
    out.append(&mut args);
    out
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn check_manifest(path: &Path) {
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert!(!m.outputs.is_empty());
    let dir = path.parent().unwrap();
    for a in &m.outputs {
        let data = std::fs::read(dir.join(&a.path)).unwrap();
        assert_eq!(a.bytes, data.len() as u64);
        assert_eq!(a.sha256, sha256_hex(&data), "{}", a.path);
    }
    assert_eq!(m.config["ref_lines"], "1");
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dcdnn(tmp.path(), &["selftest"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.matches("... ok").count(), 2, "{text}");
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(dcdnn(tmp.path(), &["selftest", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(dcdnn(tmp.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(dcdnn(tmp.path(), &["evaluate", "--models", "m.dcdb", "--out-dir", "o"]).status.code(), Some(2));
    assert_eq!(dcdnn(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn validation_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dcdnn(tmp.path(), &["train", "--dataset", "d.dcds", "--out-dir", "t"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--models"));

    let out = dcdnn(tmp.path(), &["--set", "no_such_key=1", "selftest"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let out = dcdnn(tmp.path(), &["--set", "modes=3", "pretrain", "--dataset", "d.dcds", "--out-dir", "p"]);
    assert_eq!(out.status.code(), Some(1));

    let out = dcdnn(tmp.path(), &["pretrain", "--dataset", "missing.dcds", "--out-dir", "p"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.dcds"));

    std::fs::write(tmp.path().join("junk.dcdb"), b"DCDB\x09\x00").unwrap();
    let out = dcdnn(tmp.path(), &["split", "--models", "junk.dcdb", "--out", "s.dcdb"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn staged_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    ok(&dcdnn(cwd, &["synth", "--out-dir", "img", "--images", "2", "--size", "48", "--tile", "16"]));
    assert!(cwd.join("img/labels.txt").exists());
    std::fs::write(cwd.join("list.txt"), "img/synth_0000.pgm\nimg/synth_0001.pgm\n").unwrap();

    ok(&dcdnn(cwd, &fast(vec!["extract", "list.txt", "--out", "d.dcds", "--block-size", "4", "--filter", "off"])));
    check_manifest(&cwd.join("d.dcds.manifest.json"));
    let ds = dcdnn::dataset_file::read_dataset(&cwd.join("d.dcds")).unwrap();
    assert_eq!(ds.block_sizes, [4]);
    assert_eq!(ds.groups.len(), 2 * 12 * 12);

    ok(&dcdnn(cwd, &fast(vec!["pretrain", "--dataset", "d.dcds", "--out-dir", "pre"])));
    check_manifest(&cwd.join("pre/manifest.json"));
    ok(&dcdnn(cwd, &fast(vec!["split", "--models", "pre/bank.dcdb", "--out", "split.dcdb"])));
    assert_eq!(dcdnn::model_file::read_bank(&cwd.join("split.dcdb")).unwrap().len(), 2);

    ok(&dcdnn(cwd, &fast(vec!["train", "--dataset", "d.dcds", "--models", "split.dcdb", "--out-dir", "train"])));
    check_manifest(&cwd.join("train/manifest.json"));
    for f in ["bank.dcdb", "history.json", "assignment.csv", "loss_per_round.csv", "retention.csv"] {
        assert!(cwd.join("train").join(f).exists(), "{f}");
    }

    let out = dcdnn(
        cwd,
        &fast(vec!["evaluate", "--models", "train/bank.dcdb", "--image", "img/synth_0000.pgm", "--block-size", "4", "--out-dir", "eval"]),
    );
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("144 blocks"));
    check_manifest(&cwd.join("eval/manifest.json"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(cwd.join("eval/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["frame_pixels"], 48 * 48);
    assert_eq!(summary["decisions"], 144);

    ok(&dcdnn(cwd, &fast(vec!["report", "train", "eval", "--out-dir", "rep"])));
    check_manifest(&cwd.join("rep/manifest.json"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(cwd.join("rep/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["modes"], 2);
    assert_eq!(summary["rounds"].as_array().unwrap().len(), 1);
}

#[test]
fn config_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    ok(&dcdnn(cwd, &["synth", "--out-dir", "img", "--images", "1", "--size", "32"]));
    std::fs::write(cwd.join("run.cfg"), "# small\nref_lines = 2\nfilter = off\n").unwrap();
    ok(&dcdnn(cwd, &["--config", "run.cfg", "--set", "ref_lines=1", "extract", "img", "--out", "d.dcds", "--block-size", "8"]));
    let ds = dcdnn::dataset_file::read_dataset(&cwd.join("d.dcds")).unwrap();
    assert_eq!(ds.ref_lines, 1);
    assert_eq!(ds.groups.len(), 16);

    ok(&dcdnn(cwd, &["--config", "run.cfg", "--paper-init", "extract", "img", "--out", "d2.dcds", "--block-size", "8"]));
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(cwd.join("d2.dcds.manifest.json")).unwrap()).unwrap();
    assert_eq!(m.config["init"], "unit");
    assert_eq!(m.config["ref_lines"], "2");
}
