use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{marching_cubes, FieldGrid, ISO_LEVEL};
use crate::error::{Error, Result};
use crate::geometry::{Bvh, TriangleMesh};
use crate::occlusion::global_occlusion;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceClass {
    /// Wall-visible part of the hull: the reconstructed surface.
    Nlos,
    /// Lateral and rear shadow interfaces.
    ShadowHull,
}

#[derive(Clone, Debug)]
pub struct ExtractedSurface {
    pub closed: TriangleMesh,
    pub nlos: TriangleMesh,
    /// One entry per triangle of `closed`.
    pub classification: Vec<SurfaceClass>,
}

impl ExtractedSurface {
    pub fn kept_area_fraction(&self) -> f64 {
        let total = self.closed.total_area();
        if total == 0.0 {
            0.0
        } else {
            self.nlos.total_area() / total
        }
    }
}

/// Normals with `n.z` above this count as not facing the wall.
const FACING: f64 = -1e-6;

/// Moves a centroid off its surface by `eps` along the normal, towards the wall
/// (the wall is at `z = 0` and the hidden volume at `z > 0`). Faces that do not point
/// at the wall, including the axis-aligned steps of a voxel staircase, move inward.
fn offset_towards_wall(c: &Point3<f64>, n: &Vector3<f64>, eps: f64) -> Point3<f64> {
    if n.z < FACING {
        c + n * eps
    } else {
        c - n * eps
    }
}

/// Keeps the triangles of `closed` whose offset centroid is globally visible from
/// `sensors` under the k-of-N rule, tested against `closed` itself.
pub fn segment_nlos_surface(
    closed: &TriangleMesh,
    sensors: &[Point3<f64>],
    k: usize,
    eps: f64,
) -> Result<ExtractedSurface> {
    if k == 0 || k > sensors.len() {
        return Err(Error::KOutOfRange {
            k,
            sensors: sensors.len(),
        });
    }
    if closed.is_empty() {
        return Ok(ExtractedSurface {
            closed: closed.clone(),
            nlos: TriangleMesh::empty(),
            classification: Vec::new(),
        });
    }
    let bvh = Bvh::build(closed)?;
    let classification = (0..closed.len())
        .into_par_iter()
        .map(|t| {
            let p = offset_towards_wall(&closed.centroid(t), &closed.normal(t), eps);
            global_occlusion(&bvh, &p, sensors, k).map(|occluded| {
                if occluded {
                    SurfaceClass::ShadowHull
                } else {
                    SurfaceClass::Nlos
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let keep: Vec<bool> = classification.iter().map(|c| *c == SurfaceClass::Nlos).collect();
    Ok(ExtractedSurface {
        closed: closed.clone(),
        nlos: closed.subset(&keep),
        classification,
    })
}

/// Marching cubes at 0.5 followed by segmentation with a half-cell offset.
pub fn extract_surface(grid: &FieldGrid, sensors: &[Point3<f64>], k: usize) -> Result<ExtractedSurface> {
    let closed = marching_cubes(grid, ISO_LEVEL)?;
    segment_nlos_surface(&closed, sensors, k, 0.5 * grid.cell_size())
}
