//! JSON dataset files.
//!
//! ```json
//! {"version": 1, "num_cameras": 4, "embed_dim": 32,
//!  "homographies": {"0": [9 numbers, row-major]},
//!  "scenes": [{"scene_id": "s0", "detections": [
//!     {"camera": 0, "bbox": [x, y, w, h], "ground": [gx, gy],
//!      "embedding": [...], "identity": 3}]}]}
//! ```
//!
//! `ground` takes precedence over `bbox`; a detection without `ground` is
//! projected through its camera's homography.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{normalize_embedding, Dataset, Detection, IdentityId, Scene};
use crate::geometry::{project_to_ground, standing_point, BBox, GroundPoint, Homography, LowerEdgeMode};
use crate::{Error, Result};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    version: u32,
    num_cameras: usize,
    embed_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    homographies: Option<BTreeMap<usize, Vec<f64>>>,
    scenes: Vec<SceneFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    scene_id: String,
    detections: Vec<DetectionFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionFile {
    camera: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground: Option<[f64; 2]>,
    embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    identity: Option<IdentityId>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    pub standing_mode: LowerEdgeMode,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset_with(path, LoadOptions::default())
}

pub fn load_dataset_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: DatasetFile =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    from_file(raw, opts)
}

fn from_file(raw: DatasetFile, opts: LoadOptions) -> Result<Dataset> {
    if raw.version != FORMAT_VERSION {
        return Err(Error::Schema(format!("unsupported version {}", raw.version)));
    }
    if raw.num_cameras < 2 {
        return Err(Error::Schema(format!(
            "num_cameras must be at least 2, got {}",
            raw.num_cameras
        )));
    }
    let mut homographies = BTreeMap::new();
    for (camera, values) in raw.homographies.unwrap_or_default() {
        if camera >= raw.num_cameras {
            return Err(Error::UnknownCamera {
                camera,
                num_cameras: raw.num_cameras,
            });
        }
        homographies.insert(camera, Homography::from_row_major(&values)?);
    }

    let mut scenes = Vec::with_capacity(raw.scenes.len());
    for s in raw.scenes {
        let mut detections = Vec::with_capacity(s.detections.len());
        for (i, d) in s.detections.into_iter().enumerate() {
            if d.camera >= raw.num_cameras {
                return Err(Error::UnknownCamera {
                    camera: d.camera,
                    num_cameras: raw.num_cameras,
                });
            }
            if d.embedding.len() != raw.embed_dim {
                return Err(Error::dim(
                    raw.embed_dim,
                    d.embedding.len(),
                    format!("scene {} detection {i}", s.scene_id),
                ));
            }
            let bbox = d.bbox.map(|[x, y, w, h]| BBox::new(x, y, w, h)).transpose()?;
            let ground = match (d.ground, bbox) {
                (Some([gx, gy]), _) => {
                    if !(gx.is_finite() && gy.is_finite()) {
                        return Err(Error::NonFinite("ground position"));
                    }
                    GroundPoint::new(gx, gy)
                }
                (None, Some(b)) => {
                    let h = homographies.get(&d.camera).ok_or_else(|| {
                        Error::Schema(format!(
                            "scene {} detection {i}: bbox given but camera {} has no homography",
                            s.scene_id, d.camera
                        ))
                    })?;
                    project_to_ground(h, standing_point(&b, opts.standing_mode)?)?
                }
                (None, None) => {
                    return Err(Error::Schema(format!(
                        "scene {} detection {i}: needs either ground or bbox",
                        s.scene_id
                    )))
                }
            };
            detections.push(Detection {
                camera: d.camera,
                bbox,
                embedding: normalize_embedding(&d.embedding)?,
                ground,
                identity: d.identity,
            });
        }
        let scene = Scene {
            scene_id: s.scene_id,
            num_cameras: raw.num_cameras,
            detections,
        };
        scene.validate()?;
        scenes.push(scene);
    }
    Ok(Dataset {
        num_cameras: raw.num_cameras,
        embed_dim: raw.embed_dim,
        homographies,
        scenes,
    })
}

fn to_file(ds: &Dataset) -> DatasetFile {
    DatasetFile {
        version: FORMAT_VERSION,
        num_cameras: ds.num_cameras,
        embed_dim: ds.embed_dim,
        homographies: (!ds.homographies.is_empty())
            .then(|| ds.homographies.iter().map(|(c, h)| (*c, h.to_row_major())).collect()),
        scenes: ds
            .scenes
            .iter()
            .map(|s| SceneFile {
                scene_id: s.scene_id.clone(),
                detections: s
                    .detections
                    .iter()
                    .map(|d| DetectionFile {
                        camera: d.camera,
                        bbox: d.bbox.map(|b| [b.x, b.y, b.w, b.h]),
                        ground: Some([d.ground.gx, d.ground.gy]),
                        embedding: d.embedding.clone(),
                        identity: d.identity,
                    })
                    .collect(),
            })
            .collect(),
    }
}

impl Dataset {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&to_file(self)).expect("dataset serialization cannot fail")
    }
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ds.to_json()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
