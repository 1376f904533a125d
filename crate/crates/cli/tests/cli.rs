use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dualspace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualspace"))
        .args(args)
        .env("DUALSPACE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = dualspace(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Exit code and the parsed `error` object from stderr.
fn failure(args: &[&str]) -> (i32, Value) {
    let out = dualspace(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    (out.status.code().unwrap(), err["error"].clone())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_synth(dir: &Path, extra: &[&str]) {
    let base = [
        "synth",
        "--classes",
        "4",
        "--per-class",
        "30",
        "--d-audio",
        "8",
        "--d-visual",
        "12",
        "--out",
        s(dir),
    ];
    ok_json(&[&base[..], extra].concat());
}

fn small_train(data: &Path, out: &Path, extra: &[&str]) -> Value {
    let base = [
        "train",
        "--data",
        s(data),
        "--out",
        s(out),
        "--batch-size",
        "48",
        "--audio-hidden",
        "16",
        "--visual-hidden",
        "16,16",
        "--lr",
        "0.01",
    ];
    ok_json(&[&base[..], extra].concat())
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn synth_is_deterministic_and_reports_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    small_synth(&a, &[]);
    small_synth(&b, &[]);
    small_synth(&c, &["--seed", "1"]);
    assert_eq!(files(&a), files(&b));
    assert_ne!(files(&a), files(&c));

    let summary = ok_json(&["synth", "--out", s(&tmp.path().join("d"))]);
    assert_eq!(summary["n"], 1000);
    assert_eq!(summary["d_a"], 128);
    assert_eq!(summary["d_v"], 1024);
    assert_eq!(summary["train"], 800);
    assert_eq!(summary["test"], 200);
}

#[test]
fn invalid_synth_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let (code, err) = failure(&["synth", "--classes", "0", "--out", s(&out)]);
    assert_eq!(code, 2);
    assert_eq!(err["kind"], "validation");
    assert_eq!(err["code"], 2);
    assert!(err["message"].as_str().unwrap().contains("classes"));
    assert!(!out.exists());

    let (code, _) = failure(&["synth", "--noise", "-1", "--out", s(&out)]);
    assert_eq!(code, 2);
    let (code, _) = failure(&["synth", "--bogus-flag", "--out", s(&out)]);
    assert_eq!(code, 2);
    assert!(!out.exists());
}

#[test]
fn one_epoch_writes_every_artifact_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_synth(&data, &[]);
    let (r1, r2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    let summary = small_train(&data, &r1, &["--epochs", "1", "--seed", "3"]);
    small_train(&data, &r2, &["--epochs", "1", "--seed", "3"]);

    assert_eq!(summary["epochs"], 1);
    assert_eq!(summary["ablation"], "full");
    let names: Vec<String> = files(&r1).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["fusion.json", "loss_history.csv", "model.ckpt"]);
    let csv = std::fs::read_to_string(r1.join("loss_history.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(files(&r1), files(&r2));

    // The checkpoint header records the resolved defaults.
    let ckpt = std::fs::read(r1.join("model.ckpt")).unwrap();
    let nl = ckpt.iter().position(|&b| b == b'\n').unwrap();
    let header: Value = serde_json::from_slice(&ckpt[..nl]).unwrap();
    assert_eq!(header["config"]["alpha"], 0.01);
    assert_eq!(header["config"]["beta"], 0.001);
}

#[test]
fn implicit_ablation_has_no_fusion_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_synth(&data, &[]);
    let out = tmp.path().join("run");
    let summary = small_train(
        &data,
        &out,
        &["--epochs", "2", "--ablation", "implicit", "--share-ex-im"],
    );
    assert_eq!(summary["fusion"], Value::Null);
    assert!(!out.join("fusion.json").exists());
    let eval = ok_json(&[
        "eval",
        "--data",
        s(&data),
        "--checkpoint",
        s(&out.join("model.ckpt")),
        "--out",
        s(&out),
    ]);
    assert!(eval["map_avg"].as_f64().unwrap() > 0.0);
}

#[test]
fn config_file_is_flat_and_strict() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_synth(&data, &[]);
    let out = tmp.path().join("run");
    let cfg = tmp.path().join("run.json");
    let body = serde_json::json!({
        "data": s(&data),
        "out": s(&out),
        "epochs": 2,
        "batch_size": 48,
        "audio_hidden": [8],
        "visual_hidden": [8],
    });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let summary = ok_json(&["train", "--config", s(&cfg), "--epochs", "3"]);
    assert_eq!(summary["epochs"], 3);

    std::fs::write(&cfg, r#"{"epochz": 2}"#).unwrap();
    let (code, err) = failure(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 2);
    assert!(err["message"].as_str().unwrap().contains("epochz"));
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_synth(&data, &[]);
    let out = tmp.path().join("run");

    let (code, err) = failure(&[
        "train",
        "--data",
        s(&tmp.path().join("absent")),
        "--out",
        s(&out),
    ]);
    assert_eq!((code, err["kind"].as_str().unwrap()), (4, "io"));

    // batch must exceed the number of classes
    let (code, _) = failure(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--batch-size",
        "4",
    ]);
    assert_eq!(code, 2);

    // a learning rate this large overflows to a non-finite loss
    let (code, err) = failure(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--batch-size",
        "48",
        "--epochs",
        "20",
        "--lr",
        "1e30",
    ]);
    assert_eq!((code, err["kind"].as_str().unwrap()), (3, "numerical"));
    assert!(!out.join("model.ckpt").exists());

    let (code, _) = failure(&[
        "eval",
        "--data",
        s(&data),
        "--checkpoint",
        s(&out.join("model.ckpt")),
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 4);
}

#[test]
fn thread_count_must_be_positive() {
    let out = Command::new(env!("CARGO_BIN_EXE_dualspace"))
        .args(["gradcheck"])
        .env("DUALSPACE_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn noise_free_clusters_evaluate_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_synth(&data, &["--noise", "0", "--cross-noise", "0"]);
    let out = tmp.path().join("run");
    // Every class collapses to one point per modality, so the fused
    // embeddings of paired rows coincide; c - 1 directions span the centroids.
    small_train(&data, &out, &["--epochs", "5", "--fusion-dim", "3"]);
    let ckpt = out.join("model.ckpt");
    let eval = ok_json(&[
        "eval",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&out),
    ]);
    assert_eq!(eval["map_avg"], 1.0);

    let report: Value =
        serde_json::from_slice(&std::fs::read(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["n_queries"], 24);
    let csv = std::fs::read_to_string(out.join("precision_scope.csv")).unwrap();
    assert!(csv.starts_with("direction,K,precision\n"));
}

#[test]
fn random_baseline_matches_the_chance_level() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok_json(&[
        "synth",
        "--classes",
        "10",
        "--per-class",
        "250",
        "--d-audio",
        "4",
        "--d-visual",
        "4",
        "--seed",
        "1",
        "--out",
        s(&data),
    ]);
    let out = tmp.path().join("random");
    let summary = ok_json(&[
        "baseline",
        "--data",
        s(&data),
        "--kind",
        "random",
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    assert_eq!(summary["n_queries"], 500);
    let map = summary["map_avg"].as_f64().unwrap();
    assert!((map - 0.110).abs() <= 0.01, "random MAP {map}");
    assert!(out.join("baseline.json").exists());
}

#[test]
fn linear_baselines_select_a_ridge_and_beat_chance() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_synth(&data, &[]);
    for kind in ["cca", "cluster_cca"] {
        let out = tmp.path().join(kind);
        let summary = ok_json(&[
            "baseline",
            "--data",
            s(&data),
            "--kind",
            kind,
            "--out",
            s(&out),
        ]);
        assert!(
            summary["map_avg"].as_f64().unwrap() > 0.5,
            "{kind}: {summary}"
        );
        let details: Value =
            serde_json::from_slice(&std::fs::read(out.join("baseline.json")).unwrap()).unwrap();
        assert_eq!(
            details["ridge_selection"]["scores"]
                .as_array()
                .unwrap()
                .len(),
            8
        );
        assert_eq!(details["model"]["k_out"], 4);
    }
    let out = tmp.path().join("fixed");
    let summary = ok_json(&[
        "baseline",
        "--data",
        s(&data),
        "--kind",
        "cca",
        "--ridge",
        "0.5",
        "--out",
        s(&out),
    ]);
    assert_eq!(summary["ridge"], 0.5);
    let (code, _) = failure(&[
        "baseline",
        "--data",
        s(&data),
        "--kind",
        "pca",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn gradcheck_passes_at_the_default_step() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("gradcheck.json");
    let summary = ok_json(&["gradcheck", "--seed", "1", "--out", s(&full)]);
    assert_eq!(summary["passed"], true);
    let err = summary["results"][0]["max_relative_error"]
        .as_f64()
        .unwrap();
    assert!(err < 1e-4, "{err}");
    let reports: Value = serde_json::from_slice(&std::fs::read(&full).unwrap()).unwrap();
    // four branches of three layers, a weight and a bias each
    assert_eq!(reports[0]["tensors"].as_array().unwrap().len(), 24);
}

#[test]
fn gradcheck_fails_at_a_coarse_step() {
    let out = dualspace(&["gradcheck", "--seed", "1", "--epsilon", "1e-1"]);
    assert_eq!(out.status.code(), Some(3));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["passed"], false);
}

#[test]
fn export_writes_embeddings_of_the_requested_split() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_synth(&data, &[]);
    let run = tmp.path().join("run");
    small_train(&data, &run, &["--epochs", "2", "--fusion-dim", "5"]);
    let ckpt = run.join("model.ckpt");
    let emb = tmp.path().join("emb");
    let summary = ok_json(&[
        "export",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--modality",
        "visual",
        "--split",
        "test",
        "--out",
        s(&emb),
    ]);
    assert_eq!(
        (summary["n"].as_u64(), summary["d"].as_u64()),
        (Some(24), Some(5))
    );
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(emb.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["modality"], "visual");
    assert_eq!(
        std::fs::metadata(emb.join("embedding.f32")).unwrap().len(),
        24 * 5 * 4
    );
    assert_eq!(
        std::fs::metadata(emb.join("labels.u32")).unwrap().len(),
        24 * 4
    );
}
