//! `sgc` command-line driver: synthetic data generation, training,
//! clustering and evaluation.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 I/O error,
//! 4 numeric failure during training.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sgc_core::dataio::{generate_dataset_with, load_dataset, save_dataset, Dataset, Scene, SynthConfig};
use sgc_core::decode::{cluster_all, ClusterResult};
use sgc_core::metrics::{evaluate, MetricsReport};
use sgc_core::model::{load_checkpoint, save_checkpoint};
use sgc_core::training::{train, EpochRecord, TrainConfig};
use sgc_core::Execution;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] sgc_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Core(sgc_core::Error::Io { .. }) => 3,
            CliError::Core(sgc_core::Error::NonFiniteGradient(_)) => 4,
            CliError::Core(_) => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(
    name = "sgc",
    version,
    about = "Hierarchical graph clustering for cross-camera association"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic multi-camera dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on labeled scenes; writes checkpoints and history into `--out`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster every scene of a dataset with a trained checkpoint.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a clustering file against a labeled dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
}

/// Config file plus the command-line overrides.
#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration (`seed`, `synth`, `train`); defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of clustering levels.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Edge connection threshold.
    #[arg(long)]
    pub p_tau: Option<f64>,
    /// Message-passing steps of the node encoder.
    #[arg(long)]
    pub mp_steps: Option<usize>,
}

/// Everything a run needs besides file paths. `seed` drives every random
/// stream; it replaces the seeds inside `synth` and `train`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    /// Loads the config (or defaults), applies overrides and validates.
    pub fn resolve(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(levels) = common.levels {
            cfg.train.decode.levels = levels;
        }
        if let Some(p_tau) = common.p_tau {
            cfg.train.decode.p_tau = p_tau;
        }
        if let Some(steps) = common.mp_steps {
            cfg.train.model.mp_steps = steps;
            // Explicit widths are tied to a step count.
            if cfg.train.model.step_dims.as_ref().is_some_and(|d| d.len() != steps) {
                cfg.train.model.step_dims = None;
            }
        }
        cfg.synth.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.synth.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn require_labels(ds: &Dataset, path: &Path) -> Result<()> {
    if ds.is_labeled() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{}: training requires identity labels on every detection",
            path.display()
        )))
    }
}

pub fn cmd_generate(common: &Common, out: &Path) -> Result<()> {
    let cfg = RunConfig::resolve(common)?;
    let ds = generate_dataset_with(&cfg.synth, Execution::default())?;
    save_dataset(out, &ds)?;
    let detections: usize = ds.scenes.iter().map(Scene::len).sum();
    println!(
        "wrote {} scenes ({} detections) to {}",
        ds.scenes.len(),
        detections,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct BestPointer<'a> {
    checkpoint: &'a str,
    epoch: Option<usize>,
    val: Option<MetricsReport>,
}

pub fn cmd_train(common: &Common, train_path: &Path, val_path: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = RunConfig::resolve(common)?;
    let train_ds = load_dataset(train_path)?;
    require_labels(&train_ds, train_path)?;
    let val_scenes = match val_path {
        Some(p) => {
            let ds = load_dataset(p)?;
            require_labels(&ds, p)?;
            ds.scenes
        }
        None => Vec::new(),
    };
    fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let outcome = train(&train_ds.scenes, &val_scenes, &cfg.train, |r: &EpochRecord| {
        match r.val {
            Some(v) => println!(
                "epoch {} loss {:.6} lr {:.6} val_v {:.2}",
                r.epoch, r.loss, r.lr, v.v_measure
            ),
            None => println!("epoch {} loss {:.6} lr {:.6}", r.epoch, r.loss, r.lr),
        }
    })?;
    save_checkpoint(out.join("checkpoint_best.json"), &outcome.best)?;
    save_checkpoint(out.join("checkpoint_final.json"), &outcome.final_params)?;
    write_file(&out.join("history.json"), &to_json(&outcome.history))?;
    let best_val = outcome
        .best_epoch
        .and_then(|e| outcome.history.get(e - 1))
        .and_then(|r| r.val);
    let pointer = BestPointer {
        checkpoint: "checkpoint_best.json",
        epoch: outcome.best_epoch,
        val: best_val,
    };
    write_file(&out.join("best.json"), &to_json(&pointer))?;
    Ok(())
}

pub fn cmd_cluster(common: &Common, checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::resolve(common)?;
    let params = load_checkpoint(checkpoint)?;
    let ds = load_dataset(data)?;
    let want = params.arch.input_dim();
    if 2 * ds.embed_dim != want {
        return Err(sgc_core::Error::DimMismatch {
            expected: want / 2,
            found: ds.embed_dim,
            context: format!("checkpoint {} vs data {}", checkpoint.display(), data.display()),
        }
        .into());
    }
    let results = cluster_all(&ds.scenes, &params, &cfg.train.decode, Execution::default())?;
    let mut text = serde_json::to_string(&results).expect("serializable");
    text.push('\n');
    write_file(out, &text)?;
    println!("clustered {} scenes into {}", results.len(), out.display());
    Ok(())
}

/// Metrics as a JSON object with two decimals per field.
pub fn format_report(r: &MetricsReport) -> String {
    let fields = [
        ("ari", r.ari),
        ("ami", r.ami),
        ("homogeneity", r.homogeneity),
        ("completeness", r.completeness),
        ("v_measure", r.v_measure),
    ];
    let mut s = String::from("{\n");
    for (k, (name, v)) in fields.iter().enumerate() {
        let sep = if k + 1 < fields.len() { "," } else { "" };
        let _ = writeln!(s, "  \"{name}\": {v:.2}{sep}");
    }
    s.push('}');
    s
}

/// Pairs clustering results with dataset scenes by scene id.
pub fn align_results(scenes: &[Scene], results: Vec<ClusterResult>) -> Result<Vec<ClusterResult>> {
    let mut by_id: BTreeMap<String, ClusterResult> = BTreeMap::new();
    for r in results {
        if by_id.contains_key(&r.scene_id) {
            return Err(CliError::Config(format!("duplicate labels for scene {:?}", r.scene_id)));
        }
        by_id.insert(r.scene_id.clone(), r);
    }
    let mut aligned = Vec::with_capacity(scenes.len());
    for s in scenes {
        let r = by_id
            .remove(&s.scene_id)
            .ok_or_else(|| CliError::Config(format!("no labels for scene {:?}", s.scene_id)))?;
        if r.labels.len() != s.len() {
            return Err(CliError::Config(format!(
                "scene {:?}: {} labels for {} detections",
                s.scene_id,
                r.labels.len(),
                s.len()
            )));
        }
        aligned.push(r);
    }
    if let Some(id) = by_id.keys().next() {
        return Err(CliError::Config(format!("labels for unknown scene {id:?}")));
    }
    Ok(aligned)
}

pub fn cmd_eval(data: &Path, labels: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    if !ds.is_labeled() {
        return Err(CliError::Config(format!(
            "{}: evaluation requires identity labels",
            data.display()
        )));
    }
    let results: Vec<ClusterResult> = serde_json::from_str(&read_file(labels)?)
        .map_err(|e| CliError::Config(format!("invalid labels file {}: {e}", labels.display())))?;
    let aligned = align_results(&ds.scenes, results)?;
    let report = evaluate(&ds.scenes, &aligned)?;
    println!("{}", format_report(&report));
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, out } => cmd_generate(&common, &out),
        Command::Train {
            common,
            train,
            val,
            out,
        } => cmd_train(&common, &train, val.as_deref(), &out),
        Command::Cluster {
            common,
            checkpoint,
            data,
            out,
        } => cmd_cluster(&common, &checkpoint, &data, &out),
        Command::Eval { data, labels } => cmd_eval(&data, &labels),
    }
}
