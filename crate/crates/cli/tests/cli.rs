//! End-to-end command tests driven through `dispatch` in-process.

use std::path::Path;

use sentinel_cli::dispatch;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["sentinel"];
    argv.extend_from_slice(args);
    dispatch(argv)
}

#[test]
fn no_arguments_is_a_usage_error() {
    assert_eq!(run(&[]), 1);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(run(&["synth", "--no-such-flag"]), 1);
}

#[test]
fn help_exits_zero() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["train", "--help"]), 0);
}

#[test]
fn eval_on_missing_checkpoint_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("manifest.jsonl");
    std::fs::write(&manifest, "").unwrap();
    assert_eq!(
        run(&[
            "eval",
            "--checkpoint",
            "/nonexistent/model.vsnt",
            "--manifest",
            manifest.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn infer_without_source_is_a_runtime_failure() {
    assert_eq!(run(&["infer", "--checkpoint", "/nonexistent.vsnt"]), 2);
}

fn write_tiny_config(path: &Path) {
    std::fs::write(
        path,
        r#"{
            "backbone": "conv3",
            "cell": "gru",
            "hidden_size": 8,
            "seq_len": 4,
            "frame_size": 16,
            "batch": 4,
            "lr": 0.05
        }"#,
    )
    .unwrap();
}

#[test]
fn synth_split_train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let manifest = data.join("manifest.jsonl");
    let config = tmp.path().join("config.json");
    let ckpt = tmp.path().join("model.vsnt");
    let metrics = tmp.path().join("metrics.csv");
    write_tiny_config(&config);

    assert_eq!(
        run(&[
            "synth",
            "--out",
            data.to_str().unwrap(),
            "--calm",
            "4",
            "--agitated",
            "4",
            "--frames",
            "16",
            "--fps",
            "8",
            "--side",
            "16",
            "--sprites",
            "2",
            "--seed",
            "11",
        ]),
        0
    );
    assert!(manifest.exists());

    assert_eq!(
        run(&["split", "--manifest", manifest.to_str().unwrap(), "--seed", "11"]),
        0
    );
    assert!(data.join("split.json").exists());

    assert_eq!(
        run(&[
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--out",
            ckpt.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--epochs",
            "6",
            "--seed",
            "11",
        ]),
        0
    );
    assert!(ckpt.exists());
    assert!(ckpt.with_extension("curve.csv").exists());
    assert!(ckpt.with_extension("curve.svg").exists());

    assert_eq!(
        run(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--manifest",
            manifest.to_str().unwrap(),
            "--metrics-out",
            metrics.to_str().unwrap(),
        ]),
        0
    );
    let csv = std::fs::read_to_string(&metrics).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "config,accuracy,precision,recall,f1,tp,fp,tn,fn"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "conv3+gru+pred");
    let f1: f64 = row[4].parse().expect("f1 parses as a real");
    assert!((0.0..=1.0).contains(&f1), "f1 = {f1}");

    // Offline inference over one of the stored videos.
    assert_eq!(
        run(&[
            "infer",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--video",
            data.join("calm_0000").to_str().unwrap(),
            "--mode",
            "single",
        ]),
        0
    );

    assert_eq!(
        run(&["inspect-checkpoint", "--checkpoint", ckpt.to_str().unwrap()]),
        0
    );
}

#[test]
fn seed_falls_back_to_env_var() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    std::env::set_var("VSNT_SEED", "123");
    assert_eq!(
        run(&[
            "synth",
            "--out",
            data.to_str().unwrap(),
            "--calm",
            "2",
            "--agitated",
            "2",
            "--frames",
            "4",
            "--side",
            "16",
            "--sprites",
            "1",
        ]),
        0
    );
    std::env::remove_var("VSNT_SEED");
    assert!(data.join("manifest.jsonl").exists());
}
