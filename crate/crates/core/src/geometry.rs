//! Axis-aligned boxes in camera coordinates.
//!
//! Units are millimetres. Axes follow the camera: `x` grows to the right,
//! `y` grows upward and `z` grows away from the camera.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub const X: usize = 0;
pub const Y: usize = 1;
pub const Z: usize = 2;

/// Axis-aligned 3D box stored as its min and max corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    /// Validated constructor: every component finite and `min <= max` per axis.
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        let b = Aabb { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn from_center_size(center: Vec3, size: Vec3) -> Self {
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for i in 0..3 {
            min[i] = center[i] - size[i] / 2.0;
            max[i] = center[i] + size[i] / 2.0;
        }
        Aabb { min, max }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !self.min[i].is_finite() || !self.max[i].is_finite() {
                return Err(Error::Schema(format!("non-finite box component {self:?}")));
            }
            if self.min[i] > self.max[i] {
                return Err(Error::Schema(format!("box min exceeds max on axis {i}: {self:?}")));
            }
        }
        Ok(())
    }

    pub fn centroid(&self) -> Vec3 {
        [
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
            (self.min[2] + self.max[2]) / 2.0,
        ]
    }

    pub fn size(&self) -> Vec3 {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn translated(&self, t: Vec3) -> Self {
        Aabb {
            min: add(self.min, t),
            max: add(self.max, t),
        }
    }

    /// Grow every face outward by `margin`.
    pub fn expanded(&self, margin: f64) -> Self {
        Aabb {
            min: self.min.map(|v| v - margin),
            max: self.max.map(|v| v + margin),
        }
    }

    /// Closed intersection test (touching faces intersect).
    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    /// Closed containment: `self` lies within `other`, equality allowed.
    pub fn contained_in(&self, other: &Aabb) -> bool {
        (0..3).all(|i| other.min[i] <= self.min[i] && self.max[i] <= other.max[i])
    }

    /// Length of the overlap of the two projections on `axis`; negative when disjoint.
    pub fn overlap(&self, other: &Aabb, axis: usize) -> f64 {
        self.max[axis].min(other.max[axis]) - self.min[axis].max(other.min[axis])
    }

    /// Six parameters in the order min x,y,z then max x,y,z.
    pub fn params(&self) -> [f64; 6] {
        [self.min[0], self.min[1], self.min[2], self.max[0], self.max[1], self.max[2]]
    }

    pub fn from_params(p: [f64; 6]) -> Self {
        Aabb {
            min: [p[0], p[1], p[2]],
            max: [p[3], p[4], p[5]],
        }
    }
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}
