//! Confocal three-bounce transient rendering.
//!
//! For every scan position `s` and every surface sample `p` (normal `n`, albedo `ρ`,
//! area weight `A / spp`) that sees `s` unobstructed, the renderer adds
//!
//! ```text
//! ρ · max(0, cos(n, s − p))^j / |s − p|^l · A / spp
//! ```
//!
//! to the histogram bin nearest to `τ = 2 |s − p| / c`, with `(j, l) = (2, 4)` for
//! diffuse and `(4, 2)` for retroreflective surfaces. Bin `b` covers time `b · Δt`.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::geometry::{Ray, RayQuery, TriangleMesh};
use crate::scene::{Material, SceneConfig, SPEED_OF_LIGHT};

/// How a path time is deposited into the histogram.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalMode {
    /// All energy into the nearest bin.
    #[default]
    Nearest,
    /// Split between the two neighbouring bins by linear weights.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub samples_per_triangle: usize,
    pub temporal: TemporalMode,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            samples_per_triangle: 4,
            temporal: TemporalMode::Nearest,
        }
    }
}

/// Measurement `m(s, τ)` with shape `(n_x, n_y, n_bins)`, time fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct TransientVolume {
    pub data: Array3<f64>,
    pub bin_width_ps: f64,
    pub wall_extent: [f64; 2],
    pub material: Material,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TransientHeader {
    shape: [usize; 3],
    bin_ps: f64,
    wall_extent_m: [f64; 2],
    material: Material,
    scale: String,
}

impl TransientVolume {
    pub fn zeros(config: &SceneConfig) -> Self {
        let [nx, ny] = config.wall.resolution;
        TransientVolume {
            data: Array3::zeros((nx, ny, config.n_bins)),
            bin_width_ps: config.bin_width_ps,
            wall_extent: config.wall.extent,
            material: config.material,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    pub fn total(&self) -> f64 {
        self.data.sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Histogram of one scan position.
    pub fn histogram(&self, ix: usize, iy: usize) -> Vec<f64> {
        self.data.slice(ndarray::s![ix, iy, ..]).to_vec()
    }

    /// Checks the shape against a configuration.
    pub fn check_shape(&self, config: &SceneConfig) -> Result<()> {
        let want = [config.wall.resolution[0], config.wall.resolution[1], config.n_bins];
        if self.shape() != want {
            return Err(Error::ShapeMismatch(format!(
                "transient has shape {:?}, configuration expects {want:?}",
                self.shape()
            )));
        }
        Ok(())
    }

    /// Writes raw little-endian `f32` in `(x, y, t)` order plus `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        binio::write_f32_le(path, self.data.iter().map(|&v| v as f32))?;
        let header = TransientHeader {
            shape: self.shape(),
            bin_ps: self.bin_width_ps,
            wall_extent_m: self.wall_extent,
            material: self.material,
            scale: "arbitrary".into(),
        };
        binio::write_json(&binio::sidecar_path(path), &header)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let header: TransientHeader = binio::read_json(&binio::sidecar_path(path))?;
        let bytes = binio::read_bytes(path)?;
        let n: usize = header.shape.iter().product();
        if bytes.len() != 4 * n {
            return Err(Error::Format(format!(
                "{}: expected {} bytes for shape {:?}, found {}",
                path.display(),
                4 * n,
                header.shape,
                bytes.len()
            )));
        }
        let values: Vec<f64> = binio::f32_from_le(&bytes).into_iter().map(f64::from).collect();
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Format(format!(
                "{}: transient entries must be finite and non-negative",
                path.display()
            )));
        }
        let [a, b, c] = header.shape;
        let data = Array3::from_shape_vec((a, b, c), values)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(TransientVolume {
            data,
            bin_width_ps: header.bin_ps,
            wall_extent: header.wall_extent_m,
            material: header.material,
        })
    }
}

/// Barycentric sample positions `(b1, b2)` inside the reference triangle.
///
/// A perfect square `m²` yields the centroids of the `m²` congruent sub-triangles of
/// the regular subdivision. Other counts use a stratified-u, golden-ratio-v lattice
/// warped onto the triangle.
pub fn stratified_barycentric(spp: usize) -> Vec<(f64, f64)> {
    let m = (spp as f64).sqrt().round() as usize;
    if m * m == spp {
        let mf = m as f64;
        let mut out = Vec::with_capacity(spp);
        for i in 0..m {
            for j in 0..m - i {
                out.push(((3 * i + 1) as f64 / (3.0 * mf), (3 * j + 1) as f64 / (3.0 * mf)));
                if i + j + 2 <= m {
                    out.push(((3 * i + 2) as f64 / (3.0 * mf), (3 * j + 2) as f64 / (3.0 * mf)));
                }
            }
        }
        return out;
    }
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    (0..spp)
        .map(|s| {
            let u = (s as f64 + 0.5) / spp as f64;
            let v = (s as f64 * phi + 0.5).fract();
            let su = u.sqrt();
            (su * (1.0 - v), su * v)
        })
        .collect()
}

/// Surface sample with its radiometric weight `ρ · A / spp`.
#[derive(Clone, Copy, Debug)]
struct SurfaceSample {
    p: Point3<f64>,
    n: Vector3<f64>,
    weight: f64,
}

fn surface_samples(mesh: &TriangleMesh, spp: usize) -> Vec<SurfaceSample> {
    let bary = stratified_barycentric(spp);
    let mut out = Vec::with_capacity(mesh.len() * spp);
    for t in 0..mesh.len() {
        let rho = mesh.albedo()[t];
        if rho == 0.0 {
            continue;
        }
        let [a, b, c] = mesh.corners(t);
        let n = mesh.normal(t);
        let weight = rho * mesh.area(t) / spp as f64;
        for &(b1, b2) in &bary {
            let p = a + (b - a) * b1 + (c - a) * b2;
            out.push(SurfaceSample { p, n, weight });
        }
    }
    out
}

/// Renders the confocal transient of `mesh` (metres) for every scan position of
/// `config.wall`. `scene` answers the visibility queries, normally a BVH of `mesh`.
pub fn render(
    mesh: &TriangleMesh,
    scene: &impl RayQuery,
    config: &SceneConfig,
    opts: &RenderOptions,
) -> Result<TransientVolume> {
    if opts.samples_per_triangle == 0 {
        return Err(Error::InvalidConfig("samples_per_triangle must be at least 1".into()));
    }
    let (j, l) = config.material.exponents();
    let samples = surface_samples(mesh, opts.samples_per_triangle);
    let positions = config.wall.positions();
    let n_bins = config.n_bins;
    // Bins per metre of one-way distance.
    let bins_per_m = 2.0 / (SPEED_OF_LIGHT * config.bin_width_s());

    let mut volume = TransientVolume::zeros(config);
    let data = volume
        .data
        .as_slice_mut()
        .expect("freshly allocated arrays are contiguous");
    data.par_chunks_mut(n_bins)
        .zip(positions.par_iter())
        .try_for_each(|(hist, s)| {
            for smp in &samples {
                let w: Vector3<f64> = s - smp.p;
                let d = w.norm();
                let f = d * bins_per_m;
                match opts.temporal {
                    TemporalMode::Nearest => {
                        let bin = f.round() as usize;
                        if bin >= n_bins {
                            return Err(Error::HistogramTooShort { bin, n_bins });
                        }
                    }
                    TemporalMode::Linear => {
                        let bin = f.floor() as usize + 1;
                        if bin >= n_bins {
                            return Err(Error::HistogramTooShort { bin, n_bins });
                        }
                    }
                }
                let cos = smp.n.dot(&w) / d;
                if cos <= 0.0 {
                    continue;
                }
                if scene.any_hit(&Ray::segment(smp.p, *s)) {
                    continue;
                }
                let value = smp.weight * cos.powi(j) / d.powi(l);
                match opts.temporal {
                    TemporalMode::Nearest => hist[f.round() as usize] += value,
                    TemporalMode::Linear => {
                        let b0 = f.floor();
                        let frac = f - b0;
                        hist[b0 as usize] += value * (1.0 - frac);
                        hist[b0 as usize + 1] += value * frac;
                    }
                }
            }
            Ok(())
        })?;
    Ok(volume)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{shapes, Bvh, EmptyScene};
    use crate::scene::WallScanGrid;

    fn single_point_config(n_bins: usize) -> SceneConfig {
        SceneConfig {
            wall: WallScanGrid::new([1e-3, 1e-3], [1, 1]),
            n_bins,
            ..SceneConfig::confocal_small()
        }
    }

    fn facet(d: f64, side: f64) -> TriangleMesh {
        shapes::rect_z(0.0, 0.0, side, side, d, 1, true)
    }

    #[test]
    fn subdivision_samples_are_centroids() {
        for m in 1..6 {
            let pts = stratified_barycentric(m * m);
            assert_eq!(pts.len(), m * m);
            let (su, sv) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
            // The sub-triangles tile the reference triangle, so their centroids
            // average to its centroid.
            assert!((su / (m * m) as f64 - 1.0 / 3.0).abs() < 1e-12);
            assert!((sv / (m * m) as f64 - 1.0 / 3.0).abs() < 1e-12);
        }
        for spp in [2, 3, 5, 7] {
            let pts = stratified_barycentric(spp);
            assert!(pts.iter().all(|&(a, b)| a >= 0.0 && b >= 0.0 && a + b <= 1.0));
        }
    }

    #[test]
    fn single_facet_matches_closed_form() {
        let cfg = single_point_config(256);
        let d = 0.3;
        let side = 2e-3;
        let mesh = facet(d, side);
        let bvh = Bvh::build(&mesh).unwrap();
        let v = render(&mesh, &bvh, &cfg, &RenderOptions::default()).unwrap();
        let h = v.histogram(0, 0);
        let expect_bin = (2.0 * d / (SPEED_OF_LIGHT * cfg.bin_width_s())).round() as usize;
        let nonzero: Vec<usize> = (0..h.len()).filter(|&b| h[b] > 0.0).collect();
        assert_eq!(nonzero, vec![expect_bin]);
        let analytic = side * side / d.powi(4);
        assert!((h[expect_bin] - analytic).abs() / analytic < 0.01);
    }

    #[test]
    fn doubling_distance() {
        let cfg = single_point_config(256);
        let opts = RenderOptions::default();
        let peak = |d: f64| {
            let m = facet(d, 2e-3);
            let v = render(&m, &EmptyScene, &cfg, &opts).unwrap();
            let h = v.histogram(0, 0);
            let b = (0..h.len()).max_by(|&a, &b| h[a].total_cmp(&h[b])).unwrap();
            (b, h[b])
        };
        let (b1, p1) = peak(0.25);
        let (b2, p2) = peak(0.5);
        assert!((b2 as i64 - 2 * b1 as i64).abs() <= 1);
        assert!((p2 / p1 - 1.0 / 16.0).abs() / (1.0 / 16.0) < 0.02);
    }

    #[test]
    fn retroreflective_exponents() {
        let mut cfg = single_point_config(256);
        cfg.material = Material::Retroreflective;
        let d = 0.4;
        let m = facet(d, 2e-3);
        let v = render(&m, &EmptyScene, &cfg, &RenderOptions::default()).unwrap();
        let analytic = 4e-6 / (d * d);
        assert!((v.total() - analytic).abs() / analytic < 0.01);
    }

    #[test]
    fn occluded_facet_is_dark() {
        let cfg = single_point_config(256);
        let target = facet(0.4, 2e-3);
        let blocker = shapes::rect_z(0.0, 0.0, 0.2, 0.2, 0.2, 1, false);
        let both = TriangleMesh::merge([&target, &blocker]);
        let bvh = Bvh::build(&both).unwrap();
        // Render only the target as emitter while the blocker occludes.
        let v = render(&target, &bvh, &cfg, &RenderOptions::default()).unwrap();
        assert!(v.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn back_facing_contributes_nothing() {
        let cfg = single_point_config(256);
        let away = shapes::rect_z(0.0, 0.0, 2e-3, 2e-3, 0.3, 1, false);
        let v = render(&away, &EmptyScene, &cfg, &RenderOptions::default()).unwrap();
        assert_eq!(v.total(), 0.0);
    }

    #[test]
    fn short_histogram_errors() {
        let cfg = single_point_config(16);
        let m = facet(0.3, 2e-3);
        let err = render(&m, &EmptyScene, &cfg, &RenderOptions::default()).unwrap_err();
        assert!(err.to_string().starts_with("histogram too short"));
    }

    #[test]
    fn linear_mode_conserves_energy() {
        let cfg = single_point_config(256);
        let m = facet(0.3123, 2e-3);
        let near = render(&m, &EmptyScene, &cfg, &RenderOptions::default()).unwrap();
        let lin = render(
            &m,
            &EmptyScene,
            &cfg,
            &RenderOptions {
                temporal: TemporalMode::Linear,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((near.total() - lin.total()).abs() < 1e-9 * near.total());
        assert_eq!(lin.data.iter().filter(|&&x| x > 0.0).count(), 2);
    }

    #[test]
    fn file_round_trip() {
        let cfg = SceneConfig {
            wall: WallScanGrid::new([0.7, 0.7], [4, 3]),
            ..SceneConfig::confocal_small()
        };
        let m = shapes::rect_z(0.0, 0.0, 0.2, 0.2, 0.35, 4, true);
        let v = render(&m, &EmptyScene, &cfg, &RenderOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        v.save(&p).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 4 * 4 * 3 * 256);
        let back = TransientVolume::load(&p).unwrap();
        assert_eq!(back.shape(), [4, 3, 256]);
        for (a, b) in back.data.iter().zip(v.data.iter()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let raw = std::fs::read(&p).unwrap();
        // (x, y, t) order with t fastest: entry (1, 2, b) at offset ((1·3 + 2)·256 + b)·4.
        let b = 100;
        let off = ((3 + 2) * 256 + b) * 4;
        let x = f32::from_le_bytes(raw[off..off + 4].try_into().unwrap());
        assert_eq!(x, v.data[[1, 2, b]] as f32);
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(binio::sidecar_path(&p)).unwrap()).unwrap();
        assert_eq!(side["scale"], "arbitrary");
        assert_eq!(side["shape"], serde_json::json!([4, 3, 256]));
    }
}
