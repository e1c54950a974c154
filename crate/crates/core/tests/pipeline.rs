//! End-to-end runs through the public API on small synthetic data.

use sgc_core::dataio::{generate_dataset, generate_dataset_with, load_dataset, save_dataset, SynthConfig};
use sgc_core::decode::{cluster_all, DecodeConfig};
use sgc_core::groundtruth::{build_gt_pool, gt_cluster_labels};
use sgc_core::metrics::{evaluate, score_labels};
use sgc_core::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use sgc_core::training::{build_train_pool, train, TrainConfig};
use sgc_core::Execution;

fn synth(n: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        num_scenes: n,
        embed_dim: 16,
        identities_range: [2, 6],
        seed,
        ..SynthConfig::default()
    }
}

fn quick_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        base_lr: 0.01,
        model: ModelConfig {
            out_dim: 8,
            theta_hidden: 16,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn generation_is_identical_in_both_execution_modes() {
    let cfg = synth(12, 3);
    let a = generate_dataset_with(&cfg, Execution::Sequential).unwrap();
    let b = generate_dataset_with(&cfg, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dataset_survives_a_file_round_trip() {
    let ds = generate_dataset(&synth(5, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.json");
    save_dataset(&path, &ds).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), ds);
}

#[test]
fn ground_truth_pool_is_identical_in_both_execution_modes() {
    let ds = generate_dataset(&synth(10, 5)).unwrap();
    let cfg = DecodeConfig::default();
    let a = build_gt_pool(&ds.scenes, &cfg, Execution::Sequential).unwrap();
    let b = build_gt_pool(&ds.scenes, &cfg, Execution::Parallel).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.edge_labels, y.edge_labels);
        assert_eq!(x.graph.edges, y.graph.edges);
    }
    assert!(!build_train_pool(&ds.scenes, &cfg, Execution::Sequential)
        .unwrap()
        .is_empty());
}

#[test]
fn ground_truth_decoding_recovers_identities_without_noise() {
    let cfg = SynthConfig {
        appearance_noise: 0.0,
        position_noise: 0.0,
        visibility_prob: 1.0,
        ..synth(20, 6)
    };
    for scene in generate_dataset(&cfg).unwrap().scenes {
        let (labels, _) = gt_cluster_labels(&scene, &DecodeConfig::default()).unwrap();
        let truth = scene.identities().unwrap();
        assert_eq!(score_labels(&truth, &labels).unwrap().ari, 1.0, "{}", scene.scene_id);
    }
}

#[test]
fn training_beats_the_untrained_model() {
    let train_set = generate_dataset(&synth(30, 7)).unwrap().scenes;
    let val_set = generate_dataset(&synth(8, 8)).unwrap().scenes;
    let test_set = generate_dataset(&synth(10, 9)).unwrap().scenes;
    let cfg = quick_train(40);
    let out = train(&train_set, &val_set, &cfg, |_| {}).unwrap();
    assert_eq!(out.history.len(), 40);
    let score = |p: &ModelParams| {
        let results = cluster_all(&test_set, p, &cfg.decode, Execution::default()).unwrap();
        evaluate(&test_set, &results).unwrap()
    };
    let arch = cfg.model.resolve(16).unwrap();
    let (before, after) = (score(&ModelParams::init(&arch, cfg.seed)), score(&out.best));
    assert!(after.v_measure > before.v_measure + 10.0, "{before:?} -> {after:?}");
    assert!(out.history.last().unwrap().loss < out.history[0].loss);
}

#[test]
fn checkpoints_reproduce_clusterings() {
    let scenes = generate_dataset(&synth(10, 10)).unwrap().scenes;
    let cfg = quick_train(2);
    let out = train(&scenes, &[], &cfg, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&path, &out.best).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, out.best);
    let a = cluster_all(&scenes, &out.best, &cfg.decode, Execution::Sequential).unwrap();
    let b = cluster_all(&scenes, &loaded, &cfg.decode, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}
