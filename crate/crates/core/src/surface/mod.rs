//! From occlusion values to geometry: grid sampling, marching cubes, segmentation of
//! the wall-visible surface, and the normal-ray Fermat filter.

mod fermat;
mod marching_cubes;
mod segment;
mod tables;

pub use fermat::{fermat_filter, fermat_mask};
pub use marching_cubes::marching_cubes;
pub use segment::{extract_surface, segment_nlos_surface, ExtractedSurface, SurfaceClass};

use nalgebra::Point3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::OcclusionField;
use crate::geometry::RayQuery;
use crate::occlusion::global_occlusion;
use crate::render::TransientVolume;
use crate::scene::HiddenCube;

pub const MIN_RESOLUTION: usize = 8;
pub const ISO_LEVEL: f64 = 0.5;

/// Occlusion values at the cell centers of an `r³` grid over the hidden cube.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub resolution: usize,
    pub cube: HiddenCube,
    /// `values[(iz · r + iy) · r + ix]`.
    pub values: Vec<f64>,
}

impl FieldGrid {
    pub fn cell_size(&self) -> f64 {
        self.cube.side / self.resolution as f64
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.resolution + iy) * self.resolution + ix
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.index(ix, iy, iz)]
    }

    /// Cell center in metres.
    pub fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> Point3<f64> {
        cell_center(&self.cube, self.resolution, ix, iy, iz)
    }

    /// Builds a grid by evaluating `f` (metres → value) at every cell center.
    pub fn from_fn(cube: HiddenCube, resolution: usize, f: impl Fn(&Point3<f64>) -> f64 + Sync) -> Result<Self> {
        check_resolution(resolution)?;
        let centers = cell_centers(&cube, resolution);
        let values: Vec<f64> = centers.par_iter().map(&f).collect();
        FieldGrid::new(cube, resolution, values)
    }

    pub fn new(cube: HiddenCube, resolution: usize, values: Vec<f64>) -> Result<Self> {
        check_resolution(resolution)?;
        if values.len() != resolution.pow(3) {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {resolution}³ grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("grid values must be finite".into()));
        }
        Ok(FieldGrid {
            resolution,
            cube,
            values,
        })
    }

    /// Halves the resolution, keeping the maximum of each 2³ block.
    pub fn max_pool(&self) -> Result<FieldGrid> {
        let r = self.resolution / 2;
        let mut values = vec![0.0; r * r * r];
        for iz in 0..r {
            for iy in 0..r {
                for ix in 0..r {
                    let mut m = f64::NEG_INFINITY;
                    for d in 0..8 {
                        let (dx, dy, dz) = (d & 1, (d >> 1) & 1, d >> 2);
                        m = m.max(self.get(2 * ix + dx, 2 * iy + dy, 2 * iz + dz));
                    }
                    values[(iz * r + iy) * r + ix] = m;
                }
            }
        }
        FieldGrid::new(self.cube, r, values)
    }

    /// Cells with value above the iso level.
    pub fn occupied(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v > ISO_LEVEL).collect()
    }
}

fn check_resolution(r: usize) -> Result<()> {
    if r < MIN_RESOLUTION {
        return Err(Error::InvalidConfig(format!(
            "grid resolution must be at least {MIN_RESOLUTION}, got {r}"
        )));
    }
    Ok(())
}

fn cell_center(cube: &HiddenCube, r: usize, ix: usize, iy: usize, iz: usize) -> Point3<f64> {
    let h = cube.side / r as f64;
    let min = cube.aabb().min;
    Point3::new(
        min.x + (ix as f64 + 0.5) * h,
        min.y + (iy as f64 + 0.5) * h,
        min.z + (iz as f64 + 0.5) * h,
    )
}

fn cell_centers(cube: &HiddenCube, r: usize) -> Vec<Point3<f64>> {
    let mut out = Vec::with_capacity(r * r * r);
    for iz in 0..r {
        for iy in 0..r {
            for ix in 0..r {
                out.push(cell_center(cube, r, ix, iy, iz));
            }
        }
    }
    out
}

/// Field probabilities at the cell centers.
pub fn evaluate_field(
    field: &OcclusionField,
    transient: Option<&TransientVolume>,
    resolution: usize,
) -> Result<FieldGrid> {
    check_resolution(resolution)?;
    let cube = field.config().cube;
    let centers = cell_centers(&cube, resolution);
    let values = field.predict(transient, &centers)?;
    FieldGrid::new(cube, resolution, values)
}

/// Hard oracle labels (0 or 1) at the cell centers.
pub fn evaluate_oracle(
    scene: &impl RayQuery,
    sensors: &[Point3<f64>],
    k: usize,
    cube: HiddenCube,
    resolution: usize,
) -> Result<FieldGrid> {
    check_resolution(resolution)?;
    if k == 0 || k > sensors.len() {
        return Err(Error::KOutOfRange {
            k,
            sensors: sensors.len(),
        });
    }
    let centers = cell_centers(&cube, resolution);
    let values = centers
        .par_iter()
        .map(|p| global_occlusion(scene, p, sensors, k).map(|o| if o { 1.0 } else { 0.0 }))
        .collect::<Result<Vec<f64>>>()?;
    FieldGrid::new(cube, resolution, values)
}
