//! Seeded synthetic multi-camera scenes.
//!
//! Each scene draws a fresh set of identities, each with a base appearance
//! embedding (uniform on the unit sphere) and a base ground position (uniform
//! in the arena). Every identity is seen by each camera independently with
//! `visibility_prob`; a sighting perturbs the base embedding by a random
//! rotation of angle `|N(0, appearance_noise)|` and the base position by
//! isotropic Gaussian noise.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{normalize_embedding, Dataset, Detection, Scene};
use crate::geometry::GroundPoint;
use crate::rng::{self, Rng, STREAM_GENERATE};
use crate::{Error, Execution, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_cameras: usize,
    /// Inclusive `[min, max]` number of identities per scene.
    pub identities_range: [usize; 2],
    pub visibility_prob: f64,
    /// Standard deviation, in radians, of the per-view rotation angle.
    pub appearance_noise: f64,
    /// Standard deviation of per-view position noise, in ground units.
    pub position_noise: f64,
    pub arena: [f64; 2],
    pub embed_dim: usize,
    pub num_scenes: usize,
    pub seed: u64,
    /// Upper bound on the cosine similarity between two identity bases of
    /// the same scene. Bases are redrawn until it holds; 1.0 disables it.
    pub max_identity_similarity: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_cameras: 4,
            identities_range: [2, 9],
            visibility_prob: 0.8,
            appearance_noise: 0.2,
            position_noise: 2.0,
            arena: [100.0, 100.0],
            embed_dim: 32,
            num_scenes: 100,
            seed: 0,
            max_identity_similarity: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_cameras < 2 {
            return bad(format!("num_cameras must be >= 2, got {}", self.num_cameras));
        }
        let [lo, hi] = self.identities_range;
        if lo < 1 || lo > hi {
            return bad(format!(
                "identities_range must satisfy 1 <= min <= max, got [{lo}, {hi}]"
            ));
        }
        if !(self.visibility_prob > 0.0 && self.visibility_prob <= 1.0) {
            return bad(format!(
                "visibility_prob must be in (0, 1], got {}",
                self.visibility_prob
            ));
        }
        if !(self.appearance_noise >= 0.0 && self.appearance_noise.is_finite()) {
            return bad("appearance_noise must be finite and >= 0".into());
        }
        if !(self.position_noise >= 0.0 && self.position_noise.is_finite()) {
            return bad("position_noise must be finite and >= 0".into());
        }
        if !self.arena.iter().all(|v| v.is_finite() && *v > 0.0) {
            return bad("arena dimensions must be positive".into());
        }
        if self.embed_dim < 2 {
            return bad(format!("embed_dim must be >= 2, got {}", self.embed_dim));
        }
        if !(self.max_identity_similarity > -1.0 && self.max_identity_similarity <= 1.0) {
            return bad("max_identity_similarity must be in (-1, 1]".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityBase {
    pub embedding: Vec<f64>,
    pub ground: GroundPoint,
}

fn gaussian_vector(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_vector(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        if let Ok(v) = normalize_embedding(&gaussian_vector(dim, rng)) {
            return v;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const MAX_BASE_ATTEMPTS: usize = 10_000;

/// Draws the identities of one scene.
pub fn sample_identities(cfg: &SynthConfig, count: usize, rng: &mut Rng) -> Result<Vec<IdentityBase>> {
    let mut bases: Vec<IdentityBase> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut attempts = 0;
        let embedding = loop {
            let e = unit_vector(cfg.embed_dim, rng);
            if bases
                .iter()
                .all(|b| dot(&b.embedding, &e) <= cfg.max_identity_similarity)
            {
                break e;
            }
            attempts += 1;
            if attempts >= MAX_BASE_ATTEMPTS {
                return Err(Error::InvalidConfig(format!(
                    "could not place {count} identities with pairwise similarity <= {} in {} dimensions",
                    cfg.max_identity_similarity, cfg.embed_dim
                )));
            }
        };
        let ground = GroundPoint::new(rng.random::<f64>() * cfg.arena[0], rng.random::<f64>() * cfg.arena[1]);
        bases.push(IdentityBase { embedding, ground });
    }
    Ok(bases)
}

/// Rotates `base` by `angle` towards a uniformly random orthogonal direction.
fn perturb(base: &[f64], angle: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let dir = loop {
        let u = gaussian_vector(base.len(), rng);
        let along = dot(&u, base);
        let ortho: Vec<f64> = u.iter().zip(base).map(|(x, b)| x - along * b).collect();
        if let Ok(v) = normalize_embedding(&ortho) {
            break v;
        }
    };
    let (s, c) = angle.sin_cos();
    let rotated: Vec<f64> = base.iter().zip(&dir).map(|(b, d)| c * b + s * d).collect();
    normalize_embedding(&rotated)
}

/// Emits one scene from fixed identity bases. Identity `k` is labeled `k`.
pub fn generate_scene(cfg: &SynthConfig, scene_id: &str, bases: &[IdentityBase], rng: &mut Rng) -> Result<Scene> {
    let mut detections = Vec::new();
    for camera in 0..cfg.num_cameras {
        for (identity, base) in bases.iter().enumerate() {
            if rng.random::<f64>() >= cfg.visibility_prob {
                continue;
            }
            let angle = (rng.sample::<f64, _>(StandardNormal) * cfg.appearance_noise).abs();
            let embedding = perturb(&base.embedding, angle, rng)?;
            let dx = rng.sample::<f64, _>(StandardNormal) * cfg.position_noise;
            let dy = rng.sample::<f64, _>(StandardNormal) * cfg.position_noise;
            detections.push(Detection {
                camera,
                bbox: None,
                embedding,
                ground: GroundPoint::new(base.ground.gx + dx, base.ground.gy + dy),
                identity: Some(identity as u32),
            });
        }
    }
    if detections.is_empty() {
        return Err(Error::EmptyScene);
    }
    Ok(Scene {
        scene_id: scene_id.to_string(),
        num_cameras: cfg.num_cameras,
        detections,
    })
}

const MAX_SCENE_ATTEMPTS: usize = 1000;

fn generate_indexed(cfg: &SynthConfig, index: usize) -> Result<Scene> {
    let mut rng = rng::stream(cfg.seed, STREAM_GENERATE, &[index as u64]);
    let [lo, hi] = cfg.identities_range;
    let count = rng.random_range(lo..=hi);
    let bases = sample_identities(cfg, count, &mut rng)?;
    let scene_id = format!("scene-{index:05}");
    for _ in 0..MAX_SCENE_ATTEMPTS {
        match generate_scene(cfg, &scene_id, &bases, &mut rng) {
            Err(Error::EmptyScene) => continue,
            other => return other,
        }
    }
    Err(Error::EmptyScene)
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    generate_dataset_with(cfg, Execution::default())
}

/// Scene `i` depends only on `(cfg, i)`, so the output is independent of the
/// execution mode.
pub fn generate_dataset_with(cfg: &SynthConfig, exec: Execution) -> Result<Dataset> {
    cfg.validate()?;
    let scenes = exec
        .map_range(cfg.num_scenes, |i| generate_indexed(cfg, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        num_cameras: cfg.num_cameras,
        embed_dim: cfg.embed_dim,
        homographies: Default::default(),
        scenes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn cfg() -> SynthConfig {
        SynthConfig {
            num_scenes: 20,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn full_visibility_counts() {
        let cfg = SynthConfig {
            visibility_prob: 1.0,
            ..cfg()
        };
        let mut rng = rng::stream(1, "t", &[]);
        let bases = sample_identities(&cfg, 5, &mut rng).unwrap();
        let scene = generate_scene(&cfg, "s", &bases, &mut rng).unwrap();
        assert_eq!(scene.len(), 20);
    }

    #[test]
    fn zero_noise_views_coincide() {
        let cfg = SynthConfig {
            visibility_prob: 1.0,
            appearance_noise: 0.0,
            position_noise: 0.0,
            ..cfg()
        };
        let mut rng = rng::stream(2, "t", &[]);
        let bases = sample_identities(&cfg, 4, &mut rng).unwrap();
        let scene = generate_scene(&cfg, "s", &bases, &mut rng).unwrap();
        for a in &scene.detections {
            for b in &scene.detections {
                if a.identity == b.identity {
                    assert_eq!(a.embedding, b.embedding);
                    assert_eq!(a.ground, b.ground);
                }
            }
        }
    }

    #[test]
    fn noisy_embeddings_stay_near_base() {
        let cfg = SynthConfig {
            appearance_noise: 0.1,
            visibility_prob: 1.0,
            ..cfg()
        };
        let mut rng = rng::stream(3, "t", &[]);
        let bases = sample_identities(&cfg, 3, &mut rng).unwrap();
        let scene = generate_scene(&cfg, "s", &bases, &mut rng).unwrap();
        for d in &scene.detections {
            let base = &bases[d.identity.unwrap() as usize].embedding;
            let cos = dot(base, &d.embedding);
            assert!(cos > 0.8 && cos <= 1.0 + 1e-12, "{cos}");
        }
    }

    #[test]
    fn dataset_is_deterministic_and_unit_norm() {
        let a = generate_dataset_with(&cfg(), Execution::Sequential).unwrap();
        let b = generate_dataset_with(&cfg(), Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scenes.len(), 20);
        for s in &a.scenes {
            s.validate().unwrap();
            let ids: BTreeSet<_> = s.detections.iter().map(|d| d.identity.unwrap()).collect();
            assert!(ids.len() <= 9 && !ids.is_empty());
            for d in &s.detections {
                let n = dot(&d.embedding, &d.embedding).sqrt();
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_counts_in_range() {
        let cfg = SynthConfig {
            visibility_prob: 1.0,
            num_scenes: 200,
            ..cfg()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let counts: BTreeSet<usize> = ds
            .scenes
            .iter()
            .map(|s| {
                s.detections
                    .iter()
                    .map(|d| d.identity.unwrap())
                    .collect::<BTreeSet<_>>()
                    .len()
            })
            .collect();
        assert_eq!(counts, (2..=9).collect());
    }

    #[test]
    fn bases_are_separated() {
        let cfg = cfg();
        let mut rng = rng::stream(4, "t", &[]);
        let bases = sample_identities(&cfg, 9, &mut rng).unwrap();
        for (i, a) in bases.iter().enumerate() {
            for b in &bases[i + 1..] {
                let cos = dot(&a.embedding, &b.embedding);
                assert!(cos < 1.0 - 1e-6 && cos <= cfg.max_identity_similarity);
            }
        }
    }

    #[test]
    fn empty_dataset_and_invalid_config() {
        let ds = generate_dataset(&SynthConfig { num_scenes: 0, ..cfg() }).unwrap();
        assert!(ds.scenes.is_empty());
        let bad = SynthConfig {
            num_cameras: 1,
            ..cfg()
        };
        assert!(matches!(generate_dataset(&bad), Err(Error::InvalidConfig(_))));
    }
}
