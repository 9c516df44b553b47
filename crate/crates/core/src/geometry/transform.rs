use nalgebra::{Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::mesh::{Aabb, TriangleMesh};
use crate::error::{Error, Result};

/// Scale, then rotate (about X, then Y, then Z; degrees), then translate.
///
/// Operates in the centered unit-cube frame `[-0.5, 0.5]³` of the hidden volume.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub scale: f64,
    pub rot_deg: [f64; 3],
    pub trans: [f64; 3],
}

impl Default for AffineTransform {
    fn default() -> Self {
        AffineTransform::identity()
    }
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform {
            scale: 1.0,
            rot_deg: [0.0; 3],
            trans: [0.0; 3],
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        let [x, y, z] = self.rot_deg.map(f64::to_radians);
        // Rz · Ry · Rx: X is applied first.
        Rotation3::from_euler_angles(x, y, z)
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation() * (p * self.scale) + Vector3::from(self.trans)
    }

    fn apply_unchecked(&self, mesh: &TriangleMesh) -> Result<TriangleMesh> {
        let r = self.rotation();
        let t = Vector3::from(self.trans);
        let s = self.scale;
        mesh.map_points(|p| r * (p * s) + t)
    }

    /// Transforms every vertex. Fails with [`Error::OutOfBounds`] if the result leaves
    /// the centered unit cube.
    pub fn apply(&self, mesh: &TriangleMesh) -> Result<TriangleMesh> {
        let out = self.apply_unchecked(mesh)?;
        let cube = Aabb::new(Point3::new(-0.5, -0.5, -0.5), Point3::new(0.5, 0.5, 0.5));
        if !out.vertices().iter().all(|p| cube.contains(p)) {
            return Err(Error::OutOfBounds);
        }
        Ok(out)
    }
}

/// Free-function form of [`AffineTransform::apply`].
pub fn apply_transform(mesh: &TriangleMesh, xf: &AffineTransform) -> Result<TriangleMesh> {
    xf.apply(mesh)
}
