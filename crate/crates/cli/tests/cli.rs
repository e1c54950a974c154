use std::path::Path;
use std::process::{Command, Output};

use sgc_cli::{align_results, format_report, CliError};
use sgc_core::dataio::{generate_dataset, SynthConfig};
use sgc_core::decode::ClusterResult;
use sgc_core::metrics::MetricsReport;

fn sgc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn result(id: &str, labels: Vec<usize>) -> ClusterResult {
    ClusterResult {
        scene_id: id.into(),
        labels,
        levels_run: 1,
        trace: Vec::new(),
    }
}

#[test]
fn results_are_aligned_by_scene_id() {
    let scenes = generate_dataset(&SynthConfig {
        num_scenes: 2,
        embed_dim: 16,
        ..SynthConfig::default()
    })
    .unwrap()
    .scenes;
    let (a, b) = (&scenes[0], &scenes[1]);
    let swapped = vec![
        result(&b.scene_id, vec![0; b.len()]),
        result(&a.scene_id, vec![0; a.len()]),
    ];
    let aligned = align_results(&scenes, swapped).unwrap();
    assert_eq!(aligned[0].scene_id, a.scene_id);

    let missing = vec![result(&a.scene_id, vec![0; a.len()])];
    assert!(matches!(align_results(&scenes, missing), Err(CliError::Config(_))));
    let short = vec![result(&a.scene_id, vec![0]), result(&b.scene_id, vec![0; b.len()])];
    assert!(matches!(align_results(&scenes, short), Err(CliError::Config(_))));
    let dup = vec![
        result(&a.scene_id, vec![0; a.len()]),
        result(&a.scene_id, vec![0; a.len()]),
        result(&b.scene_id, vec![0; b.len()]),
    ];
    assert!(matches!(align_results(&scenes, dup), Err(CliError::Config(_))));
}

#[test]
fn report_has_two_decimals() {
    let text = format_report(&MetricsReport::PERFECT.scaled(100.0));
    assert!(text.contains("\"ari\": 100.00,"));
    assert!(text.contains("\"v_measure\": 100.00\n}"));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        sgc(&["generate", "--config", "absent.json", "--out", "x.json"], d)
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        sgc(&["eval", "--data", "absent.json", "--labels", "y.json"], d)
            .status
            .code(),
        Some(3)
    );
    std::fs::write(d.join("bad.json"), r#"{"train": {"epochs": 1, "typo": 3}}"#).unwrap();
    assert_eq!(
        sgc(&["generate", "--config", "bad.json", "--out", "x.json"], d)
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        sgc(&["generate", "--levels", "0", "--out", "x.json"], d).status.code(),
        Some(2)
    );
}

#[test]
fn unlabeled_training_data_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.json"), r#"{"synth": {"num_scenes": 2, "embed_dim": 16}}"#).unwrap();
    let out = sgc(&["generate", "--config", "small.json", "--out", "data.json"], d);
    assert!(out.status.success());
    let text = std::fs::read_to_string(d.join("data.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["scenes"][0]["detections"][0]
        .as_object_mut()
        .unwrap()
        .remove("identity");
    std::fs::write(d.join("data.json"), v.to_string()).unwrap();
    let out = sgc(
        &[
            "train",
            "--config",
            "small.json",
            "--train",
            "data.json",
            "--out",
            "run",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("identity labels"));
}
