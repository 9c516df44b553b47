//! Scene assembly: the relay-wall scan grid, the hidden volume, presets, and
//! randomized affine placement of source meshes.
//!
//! Frame: the wall is the plane `z = 0` with normal `+z` pointing into the hidden
//! volume, `+y` is up. The hidden volume is a cube of side [`HiddenCube::side`]
//! metres centered on the `z` axis, spanning `z ∈ [z_near, z_near + side]`.
//! Source meshes and placements live in the cube's centered unit frame
//! `[-0.5, 0.5]³`; [`HiddenCube::to_world`] maps that frame to metres.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mesh_io, shapes, AffineTransform, Aabb, Bvh, TriangleMesh};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Regular grid of scan positions on the wall, at cell centers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallScanGrid {
    /// Width and height of the scanned area in metres.
    pub extent: [f64; 2],
    /// Number of scan positions along x and y.
    pub resolution: [usize; 2],
}

impl WallScanGrid {
    pub fn new(extent: [f64; 2], resolution: [usize; 2]) -> Self {
        WallScanGrid { extent, resolution }
    }

    pub fn count(&self) -> usize {
        self.resolution[0] * self.resolution[1]
    }

    pub fn spacing(&self) -> [f64; 2] {
        [
            self.extent[0] / self.resolution[0] as f64,
            self.extent[1] / self.resolution[1] as f64,
        ]
    }

    pub fn position(&self, ix: usize, iy: usize) -> Point3<f64> {
        let [dx, dy] = self.spacing();
        Point3::new(
            -self.extent[0] / 2.0 + (ix as f64 + 0.5) * dx,
            -self.extent[1] / 2.0 + (iy as f64 + 0.5) * dy,
            0.0,
        )
    }

    /// All positions, x-major (`index = ix · n_y + iy`), matching the transient layout.
    pub fn positions(&self) -> Vec<Point3<f64>> {
        let mut out = Vec::with_capacity(self.count());
        for ix in 0..self.resolution[0] {
            for iy in 0..self.resolution[1] {
                out.push(self.position(ix, iy));
            }
        }
        out
    }

    /// Same scanned area sampled at a different resolution.
    pub fn with_resolution(&self, nx: usize, ny: usize) -> Self {
        WallScanGrid {
            extent: self.extent,
            resolution: [nx, ny],
        }
    }

    /// Same resolution over a different scanned area.
    pub fn with_extent(&self, extent: [f64; 2]) -> Self {
        WallScanGrid {
            extent,
            resolution: self.resolution,
        }
    }

    /// True if `(x, y)` lies inside the scanned rectangle.
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.extent[0] / 2.0 && y.abs() <= self.extent[1] / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    #[default]
    Diffuse,
    Retroreflective,
}

impl Material {
    /// `(j, l)`: cosine exponent and distance falloff exponent of the geometric factor.
    pub fn exponents(self) -> (i32, i32) {
        match self {
            Material::Diffuse => (2, 4),
            Material::Retroreflective => (4, 2),
        }
    }
}

/// Cube-shaped hidden volume in front of the wall.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenCube {
    /// Edge length in metres; one scene unit.
    pub side: f64,
    /// Distance from the wall to the cube's front face.
    pub z_near: f64,
}

impl HiddenCube {
    pub fn center(&self) -> Point3<f64> {
        Point3::new(0.0, 0.0, self.z_near + self.side / 2.0)
    }

    pub fn aabb(&self) -> Aabb {
        let h = Vector3::repeat(self.side / 2.0);
        let c = self.center();
        Aabb::new(c - h, c + h)
    }

    /// Centered unit frame → metres.
    pub fn to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        self.center() + p.coords * self.side
    }

    /// Metres → centered unit frame.
    pub fn to_unit(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from((p - self.center()) / self.side)
    }

    /// Metres → `[-1, 1]³`.
    pub fn to_signed(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from((p - self.center()) * (2.0 / self.side))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub wall: WallScanGrid,
    pub bin_width_ps: f64,
    pub n_bins: usize,
    pub hidden_cube: HiddenCube,
    pub material: Material,
    pub seed: u64,
}

pub const PRESET_NAMES: &[&str] = &["confocal-small", "confocal-large"];

impl SceneConfig {
    /// 0.7 m × 0.7 m wall, 32 × 32 scans, 32 ps bins, 256 bins. The hidden cube
    /// (0.5 m) is centered 0.35 m from the wall.
    pub fn confocal_small() -> Self {
        SceneConfig {
            wall: WallScanGrid::new([0.7, 0.7], [32, 32]),
            bin_width_ps: 32.0,
            n_bins: 256,
            hidden_cube: HiddenCube {
                side: 0.5,
                z_near: 0.1,
            },
            material: Material::Diffuse,
            seed: 0,
        }
    }

    /// 2 m × 2 m wall, 32 × 32 scans, 64 ps bins, 256 bins, 1 m hidden cube.
    /// `z_near` is a free choice here; 0.2 m keeps every return inside the histogram.
    pub fn confocal_large() -> Self {
        SceneConfig {
            wall: WallScanGrid::new([2.0, 2.0], [32, 32]),
            bin_width_ps: 64.0,
            n_bins: 256,
            hidden_cube: HiddenCube {
                side: 1.0,
                z_near: 0.2,
            },
            material: Material::Diffuse,
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "confocal-small" => Ok(Self::confocal_small()),
            "confocal-large" => Ok(Self::confocal_large()),
            _ => Err(Error::InvalidConfig(format!(
                "unknown preset `{name}` (expected one of {PRESET_NAMES:?})"
            ))),
        }
    }

    pub fn bin_width_s(&self) -> f64 {
        self.bin_width_ps * 1e-12
    }

    /// Longest one-way distance between the scanned area and the hidden cube.
    pub fn max_path_distance(&self) -> f64 {
        let b = self.hidden_cube.aabb();
        let (hx, hy) = (self.wall.extent[0] / 2.0, self.wall.extent[1] / 2.0);
        let mut best: f64 = 0.0;
        for &wx in &[-hx, hx] {
            for &wy in &[-hy, hy] {
                for &cx in &[b.min.x, b.max.x] {
                    for &cy in &[b.min.y, b.max.y] {
                        for &cz in &[b.min.z, b.max.z] {
                            best = best.max(Vector3::new(cx - wx, cy - wy, cz).norm());
                        }
                    }
                }
            }
        }
        best
    }

    /// One-way distance covered by the histogram.
    pub fn histogram_range(&self) -> f64 {
        self.n_bins as f64 * self.bin_width_s() * SPEED_OF_LIGHT / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.wall;
        if w.resolution[0] == 0 || w.resolution[1] == 0 || !(w.extent[0] > 0.0 && w.extent[1] > 0.0) {
            return Err(Error::InvalidConfig("wall grid must be non-empty".into()));
        }
        if !(self.bin_width_ps > 0.0) || self.n_bins == 0 {
            return Err(Error::InvalidConfig("bin width and bin count must be positive".into()));
        }
        if !(self.hidden_cube.side > 0.0) || !(self.hidden_cube.z_near > 0.0) {
            return Err(Error::InvalidConfig(
                "hidden cube must have positive side and lie in front of the wall".into(),
            ));
        }
        if self.histogram_range() < self.max_path_distance() {
            return Err(Error::InvalidConfig(format!(
                "histogram covers {:.3} m but the hidden cube reaches {:.3} m",
                self.histogram_range(),
                self.max_path_distance()
            )));
        }
        Ok(())
    }
}

/// Uniform sampling ranges for random placements (degrees for rotations).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementRanges {
    pub scale: [f64; 2],
    pub rot_x: [f64; 2],
    pub rot_y: [f64; 2],
    pub rot_z: [f64; 2],
    pub trans_x: [f64; 2],
    pub trans_y: [f64; 2],
    pub trans_z: [f64; 2],
}

impl Default for PlacementRanges {
    fn default() -> Self {
        PlacementRanges {
            scale: [0.6, 0.85],
            rot_x: [0.0, 10.0],
            rot_y: [0.0, 20.0],
            rot_z: [0.0, 10.0],
            trans_x: [-0.30, 0.30],
            trans_y: [-0.30, 0.30],
            trans_z: [-0.40, 0.40],
        }
    }
}

impl PlacementRanges {
    /// Every range collapsed to a single value.
    pub fn fixed(xf: AffineTransform) -> Self {
        let p = |v: f64| [v, v];
        PlacementRanges {
            scale: p(xf.scale),
            rot_x: p(xf.rot_deg[0]),
            rot_y: p(xf.rot_deg[1]),
            rot_z: p(xf.rot_deg[2]),
            trans_x: p(xf.trans[0]),
            trans_y: p(xf.trans[1]),
            trans_z: p(xf.trans[2]),
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] >= r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

/// Draws one transform uniformly from `ranges`.
pub fn sample_placement<R: Rng + ?Sized>(rng: &mut R, ranges: &PlacementRanges) -> AffineTransform {
    AffineTransform {
        scale: uniform(rng, ranges.scale),
        rot_deg: [
            uniform(rng, ranges.rot_x),
            uniform(rng, ranges.rot_y),
            uniform(rng, ranges.rot_z),
        ],
        trans: [
            uniform(rng, ranges.trans_x),
            uniform(rng, ranges.trans_y),
            uniform(rng, ranges.trans_z),
        ],
    }
}

pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

/// Rejection-samples a transform that keeps `mesh` inside the unit cube.
pub fn place_mesh<R: Rng + ?Sized>(
    rng: &mut R,
    mesh: &TriangleMesh,
    ranges: &PlacementRanges,
) -> Result<AffineTransform> {
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let xf = sample_placement(rng, ranges);
        match xf.apply(mesh) {
            Ok(_) => return Ok(xf),
            Err(Error::OutOfBounds) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Unplaceable {
        attempts: MAX_PLACEMENT_ATTEMPTS,
    })
}

/// One source mesh and its placement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenePlacement {
    pub mesh: String,
    pub scale: f64,
    pub rot_deg: [f64; 3],
    pub trans: [f64; 3],
}

impl ScenePlacement {
    pub fn new(mesh: impl Into<String>, xf: AffineTransform) -> Self {
        ScenePlacement {
            mesh: mesh.into(),
            scale: xf.scale,
            rot_deg: xf.rot_deg,
            trans: xf.trans,
        }
    }

    pub fn transform(&self) -> AffineTransform {
        AffineTransform {
            scale: self.scale,
            rot_deg: self.rot_deg,
            trans: self.trans,
        }
    }
}

/// Persisted scene description. Meshes are referenced by id, not baked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub preset: String,
    pub seed: u64,
    pub placements: Vec<ScenePlacement>,
    /// Full configuration override; the preset is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SceneConfig>,
}

impl SceneFile {
    pub fn config(&self) -> Result<SceneConfig> {
        let mut cfg = match self.config {
            Some(c) => c,
            None => SceneConfig::preset(&self.preset)?,
        };
        cfg.seed = self.seed;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Resolves mesh ids to unit-box-normalized meshes: `<dir>/<id>.obj` first, then the
/// built-in shapes.
#[derive(Clone, Debug, Default)]
pub struct MeshLibrary {
    dir: Option<PathBuf>,
    extra: HashMap<String, TriangleMesh>,
}

impl MeshLibrary {
    pub fn builtin() -> Self {
        MeshLibrary::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        MeshLibrary {
            dir: Some(dir.into()),
            extra: HashMap::new(),
        }
    }

    /// Registers an in-memory mesh (normalized on insertion).
    pub fn insert(&mut self, id: impl Into<String>, mesh: &TriangleMesh) -> Result<()> {
        self.extra.insert(id.into(), mesh.normalized_to_unit_box()?);
        Ok(())
    }

    /// Ids available from the directory (sorted) followed by the built-ins.
    pub fn ids(&self) -> Result<Vec<String>> {
        let mut ids: Vec<String> = self.extra.keys().cloned().collect();
        if let Some(dir) = &self.dir {
            let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
            for entry in entries {
                let p = entry.map_err(|e| Error::io(dir, e))?.path();
                if p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("obj")) {
                    if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                        ids.push(stem.to_string());
                    }
                }
            }
        }
        ids.sort();
        ids.dedup();
        if ids.is_empty() {
            ids = shapes::BUILTIN_NAMES.iter().map(|s| s.to_string()).collect();
        }
        Ok(ids)
    }

    pub fn resolve(&self, id: &str) -> Result<TriangleMesh> {
        if let Some(m) = self.extra.get(id) {
            return Ok(m.clone());
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{id}.obj"));
            if path.exists() {
                return mesh_io::read_obj(&path)?.normalized_to_unit_box();
            }
        }
        if let Some(m) = shapes::builtin(id) {
            return Ok(m);
        }
        let path = match &self.dir {
            Some(d) => d.join(format!("{id}.obj")),
            None => PathBuf::from(format!("{id}.obj")),
        };
        Err(Error::UnknownMesh {
            id: id.to_string(),
            path,
        })
    }
}

/// A built scene: geometry in both frames plus the BVH over the world mesh.
#[derive(Clone, Debug)]
pub struct Scene {
    pub config: SceneConfig,
    /// Centered unit frame of the hidden cube (used for metrics).
    pub mesh_unit: TriangleMesh,
    /// Metres.
    pub mesh: TriangleMesh,
    pub bvh: Bvh,
}

impl Scene {
    pub fn labeling_sensors(&self, nx: usize, ny: usize) -> Vec<Point3<f64>> {
        self.config.wall.with_resolution(nx, ny).positions()
    }
}

/// Transforms and merges every placement; fails with "empty scene" for no placements.
pub fn build_scene(
    config: &SceneConfig,
    placements: &[ScenePlacement],
    library: &MeshLibrary,
) -> Result<Scene> {
    if placements.is_empty() {
        return Err(Error::EmptyScene);
    }
    let parts = placements
        .iter()
        .map(|p| library.resolve(&p.mesh).and_then(|m| p.transform().apply(&m)))
        .collect::<Result<Vec<_>>>()?;
    let mesh_unit = TriangleMesh::merge(parts.iter());
    scene_from_unit_mesh(config, mesh_unit)
}

/// Wraps a mesh already expressed in the cube's centered unit frame.
pub fn scene_from_unit_mesh(config: &SceneConfig, mesh_unit: TriangleMesh) -> Result<Scene> {
    let cube = config.hidden_cube;
    let mesh = mesh_unit.map_points(|p| cube.to_world(p))?;
    let bvh = Bvh::build(&mesh)?;
    Ok(Scene {
        config: *config,
        mesh_unit,
        mesh,
        bvh,
    })
}

pub fn load_scene(file: &SceneFile, library: &MeshLibrary) -> Result<Scene> {
    let cfg = file.config()?;
    cfg.validate()?;
    build_scene(&cfg, &file.placements, library)
}

const MESH_REDRAWS: usize = 8;

/// Generates `count` scene descriptions. Scene `i` draws from its own stream seeded
/// with `seed + i`, so the result does not depend on scheduling.
pub fn generate_dataset(
    preset: &str,
    count: usize,
    seed: u64,
    library: &MeshLibrary,
    ranges: &PlacementRanges,
    objects_per_scene: usize,
) -> Result<Vec<SceneFile>> {
    SceneConfig::preset(preset)?;
    let ids = library.ids()?;
    let meshes = ids
        .iter()
        .map(|id| library.resolve(id))
        .collect::<Result<Vec<_>>>()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let scene_seed = seed.wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
            let placements = (0..objects_per_scene.max(1))
                .map(|_| {
                    // Bulky meshes can exhaust their attempts under the default
                    // ranges; draw a different source a few times before giving up.
                    let mut last = None;
                    for _ in 0..MESH_REDRAWS {
                        let k = rng.gen_range(0..ids.len());
                        match place_mesh(&mut rng, &meshes[k], ranges) {
                            Ok(xf) => return Ok(ScenePlacement::new(ids[k].clone(), xf)),
                            Err(e @ Error::Unplaceable { .. }) => last = Some(e),
                            Err(e) => return Err(e),
                        }
                    }
                    Err(last.expect("at least one draw"))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SceneFile {
                preset: preset.to_string(),
                seed: scene_seed,
                placements,
                config: None,
            })
        })
        .collect()
}
