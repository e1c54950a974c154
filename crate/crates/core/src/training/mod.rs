//! Supervised training on pooled ground-truth graphs.
//!
//! The pool holds every level of every training scene's ground-truth
//! hierarchy. Each epoch shuffles the pool, walks it in batches, and takes
//! one Adam step per batch on the mean edge loss. After each epoch the whole
//! validation set is clustered and scored; the parameters with the best
//! validation V-measure are kept.

mod backward;
mod loss;
mod optim;

use serde::{Deserialize, Serialize};

pub use backward::{backward, batch_loss, forward_signature, DropoutSpec, TrainGraph};
pub use loss::{edge_bce_loss, PROB_CLAMP};
pub use optim::{adam_step, one_cycle_lr, AdamConfig, AdamState};

use crate::dataio::Scene;
use crate::decode::{cluster_all, DecodeConfig};
use crate::groundtruth::build_gt_pool;
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{ModelConfig, ModelParams};
use crate::rng::{self, STREAM_SHUFFLE};
use crate::{Error, Execution, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Full passes over the ground-truth pool.
    pub epochs: usize,
    /// Graphs per optimizer step.
    pub batch_size: usize,
    pub base_lr: f64,
    pub dropout: f64,
    pub warmup_fraction: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub model: ModelConfig,
    /// Threshold and level count, shared by ground-truth construction and
    /// validation clustering.
    pub decode: DecodeConfig,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 48,
            base_lr: 0.07,
            dropout: 0.1,
            warmup_fraction: 0.1,
            adam: AdamConfig::default(),
            seed: 0,
            model: ModelConfig::default(),
            decode: DecodeConfig::default(),
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must be in [0, 1)");
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps >= 0.0) {
            return bad("adam betas must be in [0, 1) and eps >= 0");
        }
        if self.model.mp_steps == 0 {
            return bad("mp_steps must be positive");
        }
        self.decode.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Edge-weighted mean training loss over the epoch.
    pub loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Validation scores (x100); absent without validation scenes.
    pub val: Option<MetricsReport>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation V-measure (the final parameters
    /// when there is no validation set).
    pub best: ModelParams,
    pub best_epoch: Option<usize>,
    pub final_params: ModelParams,
    pub history: Vec<EpochRecord>,
}

fn embed_dim(scenes: &[Scene], expected: Option<usize>, what: &str) -> Result<Option<usize>> {
    let mut dim = expected;
    for s in scenes {
        s.validate()?;
        match (dim, s.embed_dim()) {
            (None, d) => dim = d,
            (Some(want), Some(found)) if want != found => {
                return Err(Error::dim(want, found, format!("{what} scene {}", s.scene_id)));
            }
            _ => {}
        }
    }
    Ok(dim)
}

/// Ground-truth pool as training graphs; graphs without edges are dropped.
pub fn build_train_pool(scenes: &[Scene], decode: &DecodeConfig, exec: Execution) -> Result<Vec<TrainGraph>> {
    let pool: Vec<TrainGraph> = build_gt_pool(scenes, decode, exec)?
        .iter()
        .filter(|g| g.graph.edge_count() > 0)
        .map(TrainGraph::from_labeled)
        .collect();
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    Ok(pool)
}

fn shuffled(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(seed, STREAM_SHUFFLE, &[epoch as u64]));
    order
}

/// Trains from a fresh initialization. `observer` sees every epoch record as
/// it is produced.
pub fn train(
    train_scenes: &[Scene],
    val_scenes: &[Scene],
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dim = embed_dim(train_scenes, None, "training")?;
    let dim = embed_dim(val_scenes, dim, "validation")?.ok_or(Error::EmptyPool)?;
    for s in train_scenes.iter().chain(val_scenes) {
        s.identities()?;
    }
    let arch = cfg.model.resolve(dim)?;
    let mut params = ModelParams::init(&arch, cfg.seed);
    let exec = cfg.execution;
    let pool = build_train_pool(train_scenes, &cfg.decode, exec)?;
    log::info!(
        "training on {} graphs ({} edges), {} parameters",
        pool.len(),
        pool.iter().map(TrainGraph::edge_count).sum::<usize>(),
        params.parameter_count()
    );

    let batches_per_epoch = pool.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch) as u64;
    let mut adam = AdamState::new(&params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = params.clone();
    let mut best_epoch = None;
    let mut best_v = f64::NEG_INFINITY;
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        let order = shuffled(pool.len(), cfg.seed, epoch);
        let (mut loss_sum, mut edge_sum, mut lr) = (0.0, 0usize, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainGraph> = chunk.iter().map(|&k| pool[k].clone()).collect();
            let dropout = DropoutSpec {
                prob: cfg.dropout,
                seed: cfg.seed,
                step,
            };
            let (loss, grad) = backward(&batch, &params, Some(dropout), exec)?;
            lr = one_cycle_lr(step, total_steps, cfg.base_lr, cfg.warmup_fraction);
            adam_step(&mut params, &grad, &mut adam, lr, &cfg.adam);
            let edges: usize = batch.iter().map(TrainGraph::edge_count).sum();
            loss_sum += loss * edges as f64;
            edge_sum += edges;
            step += 1;
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteGradient("parameters after update".into()));
        }

        let val = if val_scenes.is_empty() {
            None
        } else {
            let results = cluster_all(val_scenes, &params, &cfg.decode, exec)?;
            Some(evaluate(val_scenes, &results)?)
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / edge_sum as f64,
            lr,
            val,
        };
        if let Some(v) = val.map(|m| m.v_measure) {
            if v > best_v {
                best_v = v;
                best = params.clone();
                best_epoch = Some(epoch + 1);
            }
        }
        observer(&record);
        history.push(record);
    }

    if val_scenes.is_empty() {
        best = params.clone();
        best_epoch = (cfg.epochs > 0).then_some(cfg.epochs);
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        final_params: params,
        history,
    })
}
