//! Ground-truth occlusion labels.
//!
//! A point `p` is locally occluded with respect to a wall sensor `s` when the open
//! segment `p → s` crosses the hidden surface. Globally, `p` is occluded unless at
//! least `k` sensors see it; `k = 1` is the plain product of the local bits.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::geometry::{Ray, RayQuery, TriangleMesh};
use crate::scene::HiddenCube;

/// True if the segment from `p` to the sensor `s` is blocked.
pub fn local_occlusion(scene: &impl RayQuery, p: &Point3<f64>, s: &Point3<f64>) -> bool {
    scene.any_hit(&Ray::segment(*p, *s))
}

/// Global label from a count of occluding sensors: visible (false) iff at most
/// `n − k` sensors are blocked.
pub fn global_from_count(occluded: usize, n: usize, k: usize) -> Result<bool> {
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, sensors: n });
    }
    Ok(occluded > n - k)
}

pub fn global_occlusion(
    scene: &impl RayQuery,
    p: &Point3<f64>,
    sensors: &[Point3<f64>],
    k: usize,
) -> Result<bool> {
    if k == 0 || k > sensors.len() {
        return Err(Error::KOutOfRange {
            k,
            sensors: sensors.len(),
        });
    }
    let occluded = sensors.iter().filter(|s| local_occlusion(scene, p, s)).count();
    global_from_count(occluded, sensors.len(), k)
}

/// Training-point sampler parameters. Variances are in units of the hidden cube side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    pub n_total: usize,
    pub surface_fraction: f64,
    pub variance_range: [f64; 2],
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions {
            n_total: 400_000,
            surface_fraction: 0.7,
            variance_range: [0.001, 0.005],
        }
    }
}

/// Draws training points (metres). A `surface_fraction` share are area-uniform mesh
/// samples jittered by an isotropic Gaussian whose variance is drawn per point; the
/// rest are uniform in the cube. Points are clamped to the cube and rounded to `f32`
/// so they survive the sample file unchanged.
pub fn sample_points<R: Rng + ?Sized>(
    mesh: &TriangleMesh,
    cube: &HiddenCube,
    opts: &SamplingOptions,
    rng: &mut R,
) -> Vec<Point3<f64>> {
    let n_surface = if mesh.is_empty() {
        0
    } else {
        ((opts.n_total as f64) * opts.surface_fraction.clamp(0.0, 1.0)).round() as usize
    };
    let bounds = cube.aabb();
    let clamp = |p: Point3<f64>| Point3::from(Vector3::from_fn(|i, _| f32_inside(p[i], bounds.min[i], bounds.max[i])));
    let mut out = Vec::with_capacity(opts.n_total);
    let (surface, _) = mesh.sample_surface(rng, n_surface);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let [v0, v1] = opts.variance_range;
    for p in surface {
        let var = if v1 > v0 { rng.gen_range(v0..v1) } else { v0 };
        let sigma = var.max(0.0).sqrt() * cube.side;
        let off = Vector3::from_fn(|_, _| std_normal.sample(rng)) * sigma;
        out.push(clamp(p + off));
    }
    while out.len() < opts.n_total {
        let u = Vector3::from_fn(|_, _| rng.gen::<f64>());
        out.push(clamp(bounds.min + bounds.extent().component_mul(&u)));
    }
    out
}

/// Clamps to `[lo, hi]` and rounds to the nearest `f32` that is still inside.
fn f32_inside(v: f64, lo: f64, hi: f64) -> f64 {
    let r = v.clamp(lo, hi) as f32;
    let r = if (r as f64) > hi {
        r.next_down()
    } else if (r as f64) < lo {
        r.next_up()
    } else {
        r
    };
    r as f64
}

/// Labeled point set with per-sensor bits (1 = occluded).
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionSampleSet {
    pub points: Vec<Point3<f64>>,
    pub labels: Vec<u8>,
    /// `ceil(N / 8)` bytes per point, sensor `j` in bit `j % 8` of byte `j / 8`.
    pub bits: Vec<u8>,
    pub sensors: Vec<Point3<f64>>,
    pub k: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SampleHeader {
    count: usize,
    sensors: usize,
    k: usize,
    record_bytes: usize,
    sensor_positions: Vec<[f64; 3]>,
    layout: String,
}

impl OcclusionSampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn stride(&self) -> usize {
        self.sensors.len().div_ceil(8)
    }

    pub fn bit(&self, i: usize, sensor: usize) -> bool {
        self.bits[i * self.stride() + sensor / 8] >> (sensor % 8) & 1 == 1
    }

    pub fn occluded_count(&self, i: usize) -> usize {
        let s = self.stride();
        self.bits[i * s..(i + 1) * s]
            .iter()
            .map(|b| b.count_ones() as usize)
            .sum()
    }

    /// Recomputes global labels for another `k` from the stored bits.
    pub fn relabel(&self, k: usize) -> Result<OcclusionSampleSet> {
        let n = self.sensors.len();
        let labels = (0..self.len())
            .map(|i| global_from_count(self.occluded_count(i), n, k).map(u8::from))
            .collect::<Result<Vec<_>>>()?;
        Ok(OcclusionSampleSet {
            labels,
            k,
            ..self.clone()
        })
    }

    pub fn occluded_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.labels.iter().map(|&l| l as f64).sum::<f64>() / self.len() as f64
    }

    /// Records of `x, y, z: f32`, `label: u8`, packed bits; plus `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let stride = self.stride();
        let mut buf = Vec::with_capacity(self.len() * (13 + stride));
        for i in 0..self.len() {
            let p = self.points[i];
            for c in [p.x, p.y, p.z] {
                buf.extend_from_slice(&(c as f32).to_le_bytes());
            }
            buf.push(self.labels[i]);
            buf.extend_from_slice(&self.bits[i * stride..(i + 1) * stride]);
        }
        std::fs::write(path, &buf).map_err(|e| Error::io(path, e))?;
        let header = SampleHeader {
            count: self.len(),
            sensors: self.sensors.len(),
            k: self.k,
            record_bytes: 13 + stride,
            sensor_positions: self.sensors.iter().map(|s| [s.x, s.y, s.z]).collect(),
            layout: "xyz:f32le label:u8 bits:lsb-first".into(),
        };
        binio::write_json(&binio::sidecar_path(path), &header)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let header: SampleHeader = binio::read_json(&binio::sidecar_path(path))?;
        let stride = header.sensors.div_ceil(8);
        let rec = 13 + stride;
        if header.sensor_positions.len() != header.sensors {
            return Err(Error::Format(format!(
                "{}: sidecar lists {} sensor positions for {} sensors",
                path.display(),
                header.sensor_positions.len(),
                header.sensors
            )));
        }
        let bytes = binio::read_bytes(path)?;
        if bytes.len() != header.count * rec {
            return Err(Error::Format(format!(
                "{}: expected {} records of {rec} bytes, found {} bytes",
                path.display(),
                header.count,
                bytes.len()
            )));
        }
        let mut points = Vec::with_capacity(header.count);
        let mut labels = Vec::with_capacity(header.count);
        let mut bits = Vec::with_capacity(header.count * stride);
        for r in bytes.chunks_exact(rec) {
            let xyz = binio::f32_from_le(&r[..12]);
            points.push(Point3::new(xyz[0] as f64, xyz[1] as f64, xyz[2] as f64));
            labels.push(r[12]);
            bits.extend_from_slice(&r[13..]);
        }
        Ok(OcclusionSampleSet {
            points,
            labels,
            bits,
            sensors: header
                .sensor_positions
                .iter()
                .map(|s| Point3::new(s[0], s[1], s[2]))
                .collect(),
            k: header.k,
        })
    }
}

/// Labels every point against every sensor. Output order follows `points`.
pub fn label_set(
    scene: &impl RayQuery,
    points: &[Point3<f64>],
    sensors: &[Point3<f64>],
    k: usize,
) -> Result<OcclusionSampleSet> {
    let n = sensors.len();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, sensors: n });
    }
    let stride = n.div_ceil(8);
    let mut bits = vec![0u8; points.len() * stride];
    let mut labels = vec![0u8; points.len()];
    bits.par_chunks_mut(stride.max(1))
        .zip(labels.par_iter_mut())
        .zip(points.par_iter())
        .for_each(|((row, label), p)| {
            let mut count = 0;
            for (j, s) in sensors.iter().enumerate() {
                if local_occlusion(scene, p, s) {
                    row[j / 8] |= 1 << (j % 8);
                    count += 1;
                }
            }
            *label = u8::from(count > n - k);
        });
    Ok(OcclusionSampleSet {
        points: points.to_vec(),
        labels,
        bits,
        sensors: sensors.to_vec(),
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{shapes, Bvh, EmptyScene};
    use crate::scene::SceneConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sensors_5x5() -> Vec<Point3<f64>> {
        SceneConfig::confocal_small().wall.with_resolution(5, 5).positions()
    }

    #[test]
    fn empty_scene_is_visible() {
        let s = sensors_5x5();
        let p = Point3::new(0.1, 0.0, 0.4);
        assert!(!local_occlusion(&EmptyScene, &p, &s[0]));
        let set = label_set(&EmptyScene, &[p, Point3::new(0.0, 0.2, 0.55)], &s, 1).unwrap();
        assert_eq!(set.labels, vec![0, 0]);
    }

    #[test]
    fn behind_large_quad() {
        let quad = shapes::rect_z(0.0, 0.0, 4.0, 4.0, 0.3, 1, true);
        let bvh = Bvh::build(&quad).unwrap();
        let s = sensors_5x5();
        let p = Point3::new(0.05, -0.1, 0.5);
        assert!(local_occlusion(&bvh, &p, &s[7]));
        for k in 1..=25 {
            assert!(global_occlusion(&bvh, &p, &s, k).unwrap());
        }
        let front = Point3::new(0.0, 0.0, 0.2);
        assert!(!global_occlusion(&bvh, &front, &s, 25).unwrap());
    }

    #[test]
    fn counting_semantics() {
        // 3 of 25 visible.
        assert!(!global_from_count(22, 25, 1).unwrap());
        assert!(global_from_count(22, 25, 4).unwrap());
        assert!(!global_from_count(22, 25, 3).unwrap());
        assert!(!global_from_count(0, 25, 25).unwrap());
        assert!(global_from_count(25, 25, 1).unwrap());
        assert!(matches!(global_from_count(0, 25, 0), Err(Error::KOutOfRange { .. })));
        assert!(matches!(global_from_count(0, 25, 26), Err(Error::KOutOfRange { .. })));
    }

    #[test]
    fn uniform_sampling_passes_chi_square() {
        let cube = SceneConfig::confocal_small().hidden_cube;
        let opts = SamplingOptions {
            n_total: 51_200,
            surface_fraction: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = sample_points(&TriangleMesh::empty(), &cube, &opts, &mut rng);
        let b = cube.aabb();
        let mut counts = [0usize; 512];
        for p in &pts {
            let cell = |v: f64, lo: f64| (((v - lo) / cube.side * 8.0) as usize).min(7);
            counts[(cell(p.x, b.min.x) * 8 + cell(p.y, b.min.y)) * 8 + cell(p.z, b.min.z)] += 1;
        }
        let expected = pts.len() as f64 / 512.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // Upper 1% point of chi-square with 511 degrees of freedom.
        assert!(chi2 < 589.0, "chi2 = {chi2}");
    }

    #[test]
    fn zero_variance_points_lie_on_surface() {
        let cfg = SceneConfig::confocal_small();
        let cube = cfg.hidden_cube;
        let plate = shapes::rect_z(0.0, 0.0, 0.3, 0.3, 0.35, 2, true);
        let opts = SamplingOptions {
            n_total: 2000,
            surface_fraction: 1.0,
            variance_range: [0.0, 0.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = sample_points(&plate, &cube, &opts, &mut rng);
        assert_eq!(pts.len(), 2000);
        for p in pts {
            assert!((p.z - 0.35).abs() < 1e-3 && p.x.abs() <= 0.15 + 1e-6 && p.y.abs() <= 0.15 + 1e-6);
        }
    }

    #[test]
    fn points_stay_in_cube_and_split() {
        let cube = SceneConfig::confocal_small().hidden_cube;
        let sphere = shapes::uv_sphere(cube.center(), 0.24, 16, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts = sample_points(&sphere, &cube, &SamplingOptions { n_total: 10_000, ..Default::default() }, &mut rng);
        let b = cube.aabb();
        assert!(pts.iter().all(|p| b.contains(p)));
        assert!(pts.iter().all(|p| p.x == p.x as f32 as f64));
    }

    #[test]
    fn label_file_round_trip() {
        let quad = shapes::rect_z(0.1, 0.0, 0.3, 0.3, 0.3, 1, true);
        let bvh = Bvh::build(&quad).unwrap();
        let sensors: Vec<_> = sensors_5x5().into_iter().take(11).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cube = SceneConfig::confocal_small().hidden_cube;
        let pts = sample_points(&quad, &cube, &SamplingOptions { n_total: 300, ..Default::default() }, &mut rng);
        let set = label_set(&bvh, &pts, &sensors, 2).unwrap();
        assert_eq!(set.stride(), 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        set.save(&path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 300 * 15);
        assert_eq!(OcclusionSampleSet::load(&path).unwrap(), set);
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(binio::sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(side["count"], 300);
        assert_eq!(side["sensors"], 11);
        assert_eq!(side["k"], 2);
    }

    #[test]
    fn relabel_matches_fresh_labels() {
        let sphere = shapes::uv_sphere(Point3::new(0.0, 0.0, 0.3), 0.1, 24, 12);
        let bvh = Bvh::build(&sphere).unwrap();
        let s = sensors_5x5();
        let cube = SceneConfig::confocal_small().hidden_cube;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = sample_points(&sphere, &cube, &SamplingOptions { n_total: 500, ..Default::default() }, &mut rng);
        let a = label_set(&bvh, &pts, &s, 1).unwrap();
        for k in [3, 25] {
            assert_eq!(a.relabel(k).unwrap(), label_set(&bvh, &pts, &s, k).unwrap());
        }
        assert!(label_set(&bvh, &pts, &s, 0).is_err());
    }
}
