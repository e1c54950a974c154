//! Image-plane to ground-plane projection.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned box in pixels, `(x, y)` being the upper-left corner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("bounding box"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBBox(format!(
                "width and height must be positive, got w={w}, h={h}"
            )));
        }
        Ok(Self { x, y, w, h })
    }
}

/// Which edge of the box is taken as the standing point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerEdgeMode {
    /// `(x + w/2, y)`: the upper edge in image coordinates, kept for strict
    /// reproduction of published ground-plane coordinates.
    PaperLiteral,
    /// `(x + w/2, y + h)`: the bottom edge, since image rows grow downward.
    #[default]
    ImageConvention,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundPoint {
    pub gx: f64,
    pub gy: f64,
}

impl GroundPoint {
    pub fn new(gx: f64, gy: f64) -> Self {
        Self { gx, gy }
    }

    pub fn distance(&self, other: &GroundPoint) -> f64 {
        (self.gx - other.gx).hypot(self.gy - other.gy)
    }
}

/// Invertible 3x3 projective map from a camera's image plane to the common
/// ground plane, stored row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        if !m.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("homography"));
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det == 0.0 {
            return Err(Error::SingularHomography);
        }
        Ok(Self { m })
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 9 {
            return Err(Error::dim(9, values.len(), "homography entries"));
        }
        let mut m = [[0.0; 3]; 3];
        for (i, v) in values.iter().enumerate() {
            m[i / 3][i % 3] = *v;
        }
        Self::new(m)
    }

    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        self.m.iter().flatten().copied().collect()
    }

    /// `self * other`, i.e. apply `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Homography> {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[r][k] * other.m[k][c]).sum();
            }
        }
        Homography::new(out)
    }
}

pub fn standing_point(b: &BBox, mode: LowerEdgeMode) -> Result<(f64, f64)> {
    let b = BBox::new(b.x, b.y, b.w, b.h)?;
    let x = b.x + b.w / 2.0;
    Ok(match mode {
        LowerEdgeMode::PaperLiteral => (x, b.y),
        LowerEdgeMode::ImageConvention => (x, b.y + b.h),
    })
}

const MIN_HOMOGENEOUS_SCALE: f64 = 1e-12;

pub fn project_to_ground(h: &Homography, p: (f64, f64)) -> Result<GroundPoint> {
    if !(p.0.is_finite() && p.1.is_finite()) {
        return Err(Error::NonFinite("image point"));
    }
    let m = &h.m;
    let gx = m[0][0] * p.0 + m[0][1] * p.1 + m[0][2];
    let gy = m[1][0] * p.0 + m[1][1] * p.1 + m[1][2];
    let s = m[2][0] * p.0 + m[2][1] * p.1 + m[2][2];
    if s.abs() < MIN_HOMOGENEOUS_SCALE {
        return Err(Error::DegenerateProjection(s));
    }
    Ok(GroundPoint::new(gx / s, gy / s))
}
