//! End-to-end runs of the `segdec` binary on a tiny synthetic benchmark.

use std::fs;
use std::path::Path;
use std::process::Command;

use segdec::cli::ABLATION_HEADER;
use segdec::history::read_history;
use segdec::manifest::RunManifest;
use segdec::report::read_summary;

fn segdec(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_segdec")).args(args).env_remove("SEGDEC_OUT").output().unwrap();
    assert!(
        out.status.success(),
        "segdec {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tiny_benchmark(dir: &Path) {
    let d = dir.to_str().unwrap();
    segdec(&[
        "synth", "--out", d, "--easy", "--seed", "7", "--size", "64", "--train-pos", "4", "--train-neg", "6",
        "--test-pos", "2", "--test-neg", "4",
    ]);
}

#[test]
fn synth_then_train_writes_a_complete_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_benchmark(&data);
    assert!(data.join("manifest.json").is_file());
    assert_eq!(fs::read_dir(data.join("images")).unwrap().count(), 16);
    assert_eq!(fs::read_dir(data.join("masks")).unwrap().count(), 6);

    let run = tmp.path().join("run");
    segdec(&[
        "train", "--dataset", "synth", "--root", data.to_str().unwrap(), "--N", "2", "--preset", "dagm", "--epochs",
        "2", "--out", run.to_str().unwrap(),
    ]);
    for f in ["manifest.toml", "model.ckpt", "history.csv", "report/scores.csv", "report/summary.json", "report/pr_curve.png"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let manifest = RunManifest::read(&run).unwrap();
    assert_eq!((manifest.supervision.n, manifest.supervision.n_all), (2, 4));
    assert_eq!(manifest.hyperparams.epochs, 2);
    assert_eq!(manifest.hyperparams.w_pos, 10.0);
    assert_eq!(read_history(&run.join("history.csv")).unwrap().epochs.len(), 2);
    let summary = read_summary(&run.join("report")).unwrap();
    assert_eq!((summary.images, summary.positives), (6, 2));

    // the saved checkpoint evaluates to the same scores
    let eval = tmp.path().join("eval");
    segdec(&["eval", "--run", run.to_str().unwrap(), "--out", eval.to_str().unwrap()]);
    assert_eq!(fs::read(eval.join("scores.csv")).unwrap(), fs::read(run.join("report/scores.csv")).unwrap());

    // rerunning from the manifest reproduces the history bit for bit
    let again = tmp.path().join("again");
    segdec(&[
        "train", "--manifest", run.join("manifest.toml").to_str().unwrap(), "--out", again.to_str().unwrap(),
    ]);
    assert_eq!(fs::read(run.join("history.csv")).unwrap(), fs::read(again.join("history.csv")).unwrap());

    // a report can be rebuilt from the per-image scores
    let rebuilt = tmp.path().join("rebuilt");
    segdec(&[
        "report", "--scores", run.join("report/scores.csv").to_str().unwrap(), "--out", rebuilt.to_str().unwrap(),
    ]);
    assert_eq!(read_summary(&rebuilt).unwrap(), summary);
}

#[test]
fn ablate_writes_the_full_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_benchmark(&data);
    let out = tmp.path().join("ablate");
    segdec(&[
        "ablate", "--dataset", "synth", "--root", data.to_str().unwrap(), "--epochs", "1", "--out",
        out.to_str().unwrap(),
    ]);
    let mut reader = csv::Reader::from_path(out.join("ablation.csv")).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), ABLATION_HEADER);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let count = |mode: &str| rows.iter().filter(|r| &r[0] == mode).count();
    assert_eq!((count("FS"), count("MS"), count("WS")), (6, 6, 4));
    assert!(rows.iter().filter(|r| &r[0] == "WS").all(|r| &r[4] == "N/A" && &r[1] == "0"));
    assert!(rows.iter().filter(|r| &r[0] == "MS").all(|r| &r[1] == "1"));
}

#[test]
fn crossval_writes_every_fold() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_benchmark(&data);
    let out = tmp.path().join("cv");
    segdec(&[
        "crossval", "--dataset", "synth", "--root", data.to_str().unwrap(), "--train-subset", "train", "--folds", "2",
        "--epochs", "1", "--out", out.to_str().unwrap(),
    ]);
    for k in 0..2 {
        assert!(out.join(format!("fold_{k}/report/summary.json")).is_file());
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("crossval.json")).unwrap()).unwrap();
    assert_eq!(summary["folds"].as_array().unwrap().len(), 2);
}

#[test]
fn usage_errors_exit_with_2() {
    let status = Command::new(env!("CARGO_BIN_EXE_segdec")).arg("frobnicate").status().unwrap();
    assert_eq!(status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_segdec"))
        .args(["train", "--dataset", "synth", "--root", tmp.path().join("nope").to_str().unwrap(), "--out"])
        .arg(tmp.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}
