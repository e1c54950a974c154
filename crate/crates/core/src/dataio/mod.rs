//! Detections, scenes, dataset files and the synthetic scene generator.

mod file;
mod synth;

use std::collections::BTreeMap;

pub use file::{load_dataset, load_dataset_with, save_dataset, LoadOptions};
pub use synth::{
    generate_dataset, generate_dataset_with, generate_scene, sample_identities, IdentityBase, SynthConfig,
};

use crate::geometry::{BBox, GroundPoint, Homography};
use crate::{Error, Result};

/// Identity label attached to a detection for training and evaluation.
pub type IdentityId = u32;

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub camera: usize,
    pub bbox: Option<BBox>,
    /// Unit-norm appearance embedding.
    pub embedding: Vec<f64>,
    pub ground: GroundPoint,
    pub identity: Option<IdentityId>,
}

/// All detections across the cameras at one timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub num_cameras: usize,
    pub detections: Vec<Detection>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn embed_dim(&self) -> Option<usize> {
        self.detections.first().map(|d| d.embedding.len())
    }

    pub fn is_labeled(&self) -> bool {
        self.detections.iter().all(|d| d.identity.is_some())
    }

    /// Identity labels, or `MissingLabel` naming the first unlabeled detection.
    pub fn identities(&self) -> Result<Vec<IdentityId>> {
        self.detections
            .iter()
            .enumerate()
            .map(|(i, d)| d.identity.ok_or(Error::MissingLabel(i)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_cameras < 2 {
            return Err(Error::InvalidConfig(format!(
                "scene {} needs at least 2 cameras, has {}",
                self.scene_id, self.num_cameras
            )));
        }
        let dim = self.embed_dim().unwrap_or(0);
        for d in &self.detections {
            if d.camera >= self.num_cameras {
                return Err(Error::UnknownCamera {
                    camera: d.camera,
                    num_cameras: self.num_cameras,
                });
            }
            if d.embedding.len() != dim {
                return Err(Error::dim(dim, d.embedding.len(), format!("scene {}", self.scene_id)));
            }
            if !d.embedding.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("embedding"));
            }
            if !(d.ground.gx.is_finite() && d.ground.gy.is_finite()) {
                return Err(Error::NonFinite("ground position"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_cameras: usize,
    pub embed_dim: usize,
    pub homographies: BTreeMap<usize, Homography>,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn is_labeled(&self) -> bool {
        self.scenes.iter().all(Scene::is_labeled)
    }
}

const UNIT_TOLERANCE: f64 = 1e-12;

/// Scales `v` to unit Euclidean length. Vectors already of unit length
/// (within 1e-12) are returned unchanged, which makes the operation
/// idempotent bit-for-bit.
pub fn normalize_embedding(v: &[f64]) -> Result<Vec<f64>> {
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("embedding"));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::ZeroVector);
    }
    if (norm - 1.0).abs() <= UNIT_TOLERANCE {
        return Ok(v.to_vec());
    }
    Ok(v.iter().map(|x| x / norm).collect())
}
