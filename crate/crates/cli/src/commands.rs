use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use nalgebra::Point3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use occfield::field::{fit, AdamConfig, FieldConfig, FitConfig, FitReport, OcclusionField, PositionalEncoding, TrainingScene};
use occfield::geometry::mesh_io::{read_mesh, write_mesh};
use occfield::geometry::TriangleMesh;
use occfield::metrics::{evaluate, EvalReport};
use occfield::noise::{add_spad_noise, NoiseOptions, SignalScale};
use occfield::occlusion::{label_set, sample_points, OcclusionSampleSet, SamplingOptions};
use occfield::render::{render, RenderOptions, TemporalMode, TransientVolume};
use occfield::scene::{generate_dataset, load_scene, MeshLibrary, PlacementRanges, Scene, SceneConfig, SceneFile};
use occfield::surface::{evaluate_field, evaluate_oracle, extract_surface, fermat_filter, ExtractedSurface};

use crate::error::{io_err, CliError, CliResult, Context};

pub const DEFAULT_PRESET: &str = "confocal-small";
pub const DEFAULT_SENSORS: &str = "5x5";

/// Parses `NXxNY`, e.g. `5x5`.
pub fn parse_grid(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::input(format!("sensor grid `{s}` is not of the form NXxNY"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let nx: usize = a.trim().parse().map_err(|_| bad())?;
    let ny: usize = b.trim().parse().map_err(|_| bad())?;
    if nx == 0 || ny == 0 {
        return Err(bad());
    }
    Ok((nx, ny))
}

pub fn library(mesh_dir: Option<&Path>) -> CliResult<MeshLibrary> {
    match mesh_dir {
        Some(d) if !d.is_dir() => Err(CliError::input(format!("mesh directory {} does not exist", d.display()))),
        Some(d) => Ok(MeshLibrary::with_dir(d)),
        None => Ok(MeshLibrary::builtin()),
    }
}

fn preset(name: Option<&str>) -> CliResult<SceneConfig> {
    Ok(SceneConfig::preset(name.unwrap_or(DEFAULT_PRESET))?)
}

/// Loads a scene file, optionally swapping in another preset's configuration.
pub fn open_scene(path: &Path, mesh_dir: Option<&Path>, preset_override: Option<&str>) -> CliResult<Scene> {
    let mut file = SceneFile::load(path)?;
    if let Some(p) = preset_override {
        SceneConfig::preset(p)?;
        file.preset = p.to_string();
        file.config = None;
    }
    Ok(load_scene(&file, &library(mesh_dir)?)?)
}

fn sensors(config: &SceneConfig, grid: &str) -> CliResult<Vec<Point3<f64>>> {
    let (nx, ny) = parse_grid(grid)?;
    Ok(config.wall.with_resolution(nx, ny).positions())
}

fn create_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    create_parent(path)?;
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn save_mesh(path: &Path, mesh: &TriangleMesh) -> CliResult<()> {
    create_parent(path)?;
    Ok(write_mesh(path, mesh)?)
}

// ---------------------------------------------------------------- gen-dataset

#[derive(Args, Serialize, Deserialize, Debug)]
pub struct GenDatasetArgs {
    /// Scene preset (confocal-small or confocal-large).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory of `<id>.obj` source meshes; the built-in shapes otherwise.
    #[arg(long)]
    pub mesh_dir: Option<PathBuf>,
    /// Objects placed per scene.
    #[arg(long)]
    pub objects: Option<usize>,
    /// Output directory for `scene_NNNNN.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn gen_dataset(a: GenDatasetArgs) -> CliResult<Vec<PathBuf>> {
    let out = a.out.ok_or_else(|| CliError::input("--out is required"))?;
    let files = generate_dataset(
        a.preset.as_deref().unwrap_or(DEFAULT_PRESET),
        a.count.unwrap_or(1),
        a.seed.unwrap_or(0),
        &library(a.mesh_dir.as_deref())?,
        &PlacementRanges::default(),
        a.objects.unwrap_or(1),
    )?;
    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let mut paths = Vec::with_capacity(files.len());
    for (i, f) in files.iter().enumerate() {
        let p = out.join(format!("scene_{i:05}.json"));
        f.save(&p)?;
        paths.push(p);
    }
    Ok(paths)
}

// --------------------------------------------------------------------- render

#[derive(Clone, Copy, Debug, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Temporal {
    Nearest,
    Linear,
}

#[derive(Args, Serialize, Deserialize, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Replace the scene file's configuration with this preset.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub mesh_dir: Option<PathBuf>,
    /// Stratified samples per triangle.
    #[arg(long)]
    pub spp: Option<usize>,
    #[arg(long, value_enum)]
    pub temporal: Option<Temporal>,
    /// Accepted for uniformity; rendering uses fixed stratified samples.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn render_cmd(a: RenderArgs) -> CliResult<TransientVolume> {
    let scene_path = a.scene.ok_or_else(|| CliError::input("--scene is required"))?;
    let out = a.out.ok_or_else(|| CliError::input("--out is required"))?;
    let scene = open_scene(&scene_path, a.mesh_dir.as_deref(), a.preset.as_deref())?;
    let opts = RenderOptions {
        samples_per_triangle: a.spp.unwrap_or(RenderOptions::default().samples_per_triangle),
        temporal: match a.temporal.unwrap_or(Temporal::Nearest) {
            Temporal::Nearest => TemporalMode::Nearest,
            Temporal::Linear => TemporalMode::Linear,
        },
    };
    let m = render(&scene.mesh, &scene.bvh, &scene.config, &opts)?;
    create_parent(&out)?;
    m.save(&out)?;
    Ok(m)
}

// --------------------------------------------------------------------- sample

#[derive(Args, Serialize, Deserialize, Debug, Default)]
pub struct SampleArgs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub mesh_dir: Option<PathBuf>,
    /// Number of points.
    #[arg(long)]
    pub n: Option<usize>,
    /// Visible iff at least k sensors see the point (1 = occluded from all of them).
    #[arg(long)]
    pub k: Option<usize>,
    /// Labeling sensor grid over the scanned wall, `NXxNY`.
    #[arg(long)]
    pub sensors: Option<String>,
    /// Use every scan position of the wall as a sensor.
    #[arg(long)]
    pub full_grid: bool,
    /// Share of points drawn near the surface.
    #[arg(long)]
    pub surface_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn sample_cmd(a: SampleArgs) -> CliResult<OcclusionSampleSet> {
    let scene_path = a.scene.ok_or_else(|| CliError::input("--scene is required"))?;
    let out = a.out.ok_or_else(|| CliError::input("--out is required"))?;
    let scene = open_scene(&scene_path, a.mesh_dir.as_deref(), a.preset.as_deref())?;
    let set = label_scene(
        &scene,
        a.n.unwrap_or(SamplingOptions::default().n_total),
        a.surface_fraction,
        if a.full_grid {
            let [nx, ny] = scene.config.wall.resolution;
            format!("{nx}x{ny}")
        } else {
            a.sensors.unwrap_or_else(|| DEFAULT_SENSORS.into())
        }
        .as_str(),
        a.k.unwrap_or(1),
        a.seed.unwrap_or(0),
    )?;
    create_parent(&out)?;
    set.save(&out)?;
    Ok(set)
}

pub fn label_scene(
    scene: &Scene,
    n: usize,
    surface_fraction: Option<f64>,
    grid: &str,
    k: usize,
    seed: u64,
) -> CliResult<OcclusionSampleSet> {
    let mut opts = SamplingOptions {
        n_total: n,
        ..Default::default()
    };
    if let Some(f) = surface_fraction {
        if !(0.0..=1.0).contains(&f) {
            return Err(CliError::input("--surface-fraction must lie in [0, 1]"));
        }
        opts.surface_fraction = f;
    }
    let s = sensors(&scene.config, grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = sample_points(&scene.mesh, &scene.config.hidden_cube, &opts, &mut rng);
    Ok(label_set(&scene.bvh, &pts, &s, k)?)
}

// ------------------------------------------------------------------------ fit

#[derive(Clone, Copy, Debug, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Single,
    Conditioned,
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
pub struct FitArgs {
    /// Sample file(s); one per training scene.
    #[arg(long)]
    pub samples: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Transient per scene, in the same order as `--samples` (conditioned mode).
    #[arg(long)]
    pub transient: Vec<PathBuf>,
    /// Preset whose hidden cube the field covers.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Final learning rate as a fraction of `--lr` (cosine decay); 1 keeps it constant.
    #[arg(long)]
    pub lr_end: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub code_dim: Option<usize>,
    /// Positional-encoding frequency count.
    #[arg(long)]
    pub frequencies: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight file; the config sidecar is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Loss curve CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

pub fn loss_csv_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

pub fn fit_cmd(a: FitArgs) -> CliResult<(OcclusionField, FitReport)> {
    let out = a.out.clone().ok_or_else(|| CliError::input("--out is required"))?;
    if a.samples.is_empty() {
        return Err(CliError::input("--samples is required"));
    }
    let sets = a
        .samples
        .iter()
        .map(|p| OcclusionSampleSet::load(p).context(p.display()))
        .collect::<CliResult<Vec<_>>>()?;
    let mode = a.mode.unwrap_or(Mode::Single);
    let transients = match mode {
        Mode::Single if !a.transient.is_empty() => {
            return Err(CliError::input("--transient is only used in conditioned mode"))
        }
        Mode::Single => Vec::new(),
        Mode::Conditioned => {
            if a.transient.len() != sets.len() {
                return Err(CliError::input(format!(
                    "conditioned mode needs one --transient per --samples ({} vs {})",
                    a.transient.len(),
                    sets.len()
                )));
            }
            a.transient
                .iter()
                .map(|p| TransientVolume::load(p).context(p.display()))
                .collect::<CliResult<Vec<_>>>()?
        }
    };
    let cube = preset(a.preset.as_deref())?.hidden_cube;
    let bounds = cube.aabb();
    for (set, path) in sets.iter().zip(&a.samples) {
        let margin = 1e-6 * cube.side;
        if set.points.iter().any(|p| {
            (0..3).any(|i| p[i] < bounds.min[i] - margin || p[i] > bounds.max[i] + margin)
        }) {
            return Err(CliError::input(format!(
                "{}: points lie outside the hidden cube of the chosen preset",
                path.display()
            )));
        }
    }
    let mut fc = match mode {
        Mode::Single => FieldConfig::single(cube),
        Mode::Conditioned => FieldConfig::conditioned(cube, transients[0].shape()),
    };
    fc.hidden = a.hidden.unwrap_or(fc.hidden);
    fc.layers = a.layers.unwrap_or(fc.layers);
    fc.code_dim = a.code_dim.unwrap_or(fc.code_dim);
    if let Some(f) = a.frequencies {
        fc.encoding = PositionalEncoding {
            frequencies: f,
            ..fc.encoding
        };
    }
    let seed = a.seed.unwrap_or(0);
    let defaults = FitConfig::default();
    let cfg = FitConfig {
        steps: a.steps.unwrap_or(defaults.steps),
        batch: a.batch.unwrap_or(defaults.batch),
        adam: AdamConfig {
            lr: a.lr.unwrap_or(defaults.adam.lr),
            ..defaults.adam
        },
        lr_end_fraction: a.lr_end.unwrap_or(defaults.lr_end_fraction),
        seed,
        eval_every: a.eval_every.unwrap_or(defaults.eval_every),
        ..defaults
    };
    let mut field = OcclusionField::new(fc, seed)?;
    let scenes: Vec<TrainingScene<'_>> = sets
        .iter()
        .enumerate()
        .map(|(i, s)| TrainingScene {
            samples: s,
            transient: transients.get(i),
        })
        .collect();
    let report = fit(&mut field, &scenes, &cfg)?;
    create_parent(&out)?;
    field.save(&out)?;
    write_text(&a.loss_csv.unwrap_or_else(|| loss_csv_path(&out)), &report.to_csv())?;
    Ok((field, report))
}

// -------------------------------------------------------------------- extract

#[derive(Args, Serialize, Deserialize, Debug, Default)]
pub struct ExtractArgs {
    /// Weight file of a fitted field.
    #[arg(long, conflicts_with = "oracle_scene")]
    pub field: Option<PathBuf>,
    /// Conditioning transient for a conditioned field.
    #[arg(long)]
    pub transient: Option<PathBuf>,
    /// Scene file; the grid is filled with ray-cast labels instead of a field.
    #[arg(long)]
    pub oracle_scene: Option<PathBuf>,
    #[arg(long)]
    pub mesh_dir: Option<PathBuf>,
    /// Preset for the wall; with `--oracle-scene`, replaces the scene's configuration.
    #[arg(long)]
    pub preset: Option<String>,
    /// Grid resolution per axis (32, 64 or 128).
    #[arg(long)]
    pub res: Option<usize>,
    /// Segmentation rule: a face is kept if at least k sensors see it. Defaults to all of them.
    #[arg(long)]
    pub k: Option<usize>,
    /// k of the oracle labels.
    #[arg(long)]
    pub label_k: Option<usize>,
    #[arg(long)]
    pub sensors: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Closed shadow-hull mesh (`.obj` or `.ply`).
    #[arg(long)]
    pub out_closed: Option<PathBuf>,
    /// Wall-visible part of the hull.
    #[arg(long)]
    pub out_nlos: Option<PathBuf>,
    /// Hull faces that pass the Fermat test against the scanned wall.
    #[arg(long)]
    pub out_fermat: Option<PathBuf>,
}

pub fn extract_cmd(a: ExtractArgs) -> CliResult<ExtractedSurface> {
    let res = a.res.unwrap_or(64);
    let grid_spec = a.sensors.clone().unwrap_or_else(|| DEFAULT_SENSORS.into());
    let (grid, wall_config) = match (&a.field, &a.oracle_scene) {
        (Some(path), None) => {
            let field = OcclusionField::load(path).context(path.display())?;
            let transient = a
                .transient
                .as_ref()
                .map(|p| TransientVolume::load(p).context(p.display()))
                .transpose()?;
            (evaluate_field(&field, transient.as_ref(), res)?, preset(a.preset.as_deref())?)
        }
        (None, Some(path)) => {
            let scene = open_scene(path, a.mesh_dir.as_deref(), a.preset.as_deref())?;
            let s = sensors(&scene.config, &grid_spec)?;
            let g = evaluate_oracle(&scene.bvh, &s, a.label_k.unwrap_or(1), scene.config.hidden_cube, res)?;
            (g, scene.config)
        }
        _ => return Err(CliError::input("exactly one of --field and --oracle-scene is required")),
    };
    let s = sensors(&wall_config, &grid_spec)?;
    let surface = extract_surface(&grid, &s, a.k.unwrap_or(s.len()))?;
    if let Some(p) = &a.out_closed {
        save_mesh(p, &surface.closed)?;
    }
    if let Some(p) = &a.out_nlos {
        save_mesh(p, &surface.nlos)?;
    }
    if let Some(p) = &a.out_fermat {
        save_mesh(p, &fermat_filter(&surface.closed, &wall_config.wall)?)?;
    }
    Ok(surface)
}

// ----------------------------------------------------------------------- eval

#[derive(Args, Serialize, Deserialize, Debug, Default)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Sample file whose labels are the prediction.
    #[arg(long, requires = "labels_gt")]
    pub labels_pred: Option<PathBuf>,
    #[arg(long, requires = "labels_pred")]
    pub labels_gt: Option<PathBuf>,
    /// F-score distance threshold in unit-cube lengths.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Surface samples per mesh.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Meshes are in metres for this preset and are mapped to the unit cube first.
    /// Without it they are taken to be in unit-cube coordinates already.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

pub fn eval_cmd(a: EvalArgs) -> CliResult<EvalReport> {
    let pred_path = a.pred.ok_or_else(|| CliError::input("--pred is required"))?;
    let gt_path = a.gt.ok_or_else(|| CliError::input("--gt is required"))?;
    let mut pred = read_mesh(&pred_path).context(pred_path.display())?;
    let mut gt = read_mesh(&gt_path).context(gt_path.display())?;
    if let Some(p) = &a.preset {
        let cube = SceneConfig::preset(p)?.hidden_cube;
        pred = pred.map_points(|q| cube.to_unit(q))?;
        gt = gt.map_points(|q| cube.to_unit(q))?;
    }
    let labels = match (&a.labels_pred, &a.labels_gt) {
        (Some(p), Some(g)) => Some((
            OcclusionSampleSet::load(p).context(p.display())?.labels,
            OcclusionSampleSet::load(g).context(g.display())?.labels,
        )),
        _ => None,
    };
    let report = evaluate(
        &pred,
        &gt,
        labels.as_ref().map(|(p, g)| (p.as_slice(), g.as_slice())),
        a.tau.unwrap_or(0.01),
        a.n.unwrap_or(10_000),
        a.seed.unwrap_or(0),
    )?;
    if let Some(p) = &a.json_out {
        write_text(p, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(report)
}

// ------------------------------------------------------------------ add-noise

#[derive(Args, Serialize, Deserialize, Debug, Default)]
pub struct AddNoiseArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Signal scale constant.
    #[arg(long = "C", conflicts_with = "peak_photons")]
    pub c: Option<f64>,
    /// Choose the scale so the brightest clean bin expects this many photons (default 100).
    #[arg(long)]
    pub peak_photons: Option<f64>,
    /// Lower end of the base-noise range.
    #[arg(long)]
    pub a: Option<f64>,
    /// Upper end of the base-noise range.
    #[arg(long)]
    pub b: Option<f64>,
    /// Draw the base noise per bin instead of once per volume.
    #[arg(long)]
    pub per_bin_base: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn add_noise_cmd(a: AddNoiseArgs) -> CliResult<TransientVolume> {
    let input = a.input.ok_or_else(|| CliError::input("--in is required"))?;
    let out = a.out.ok_or_else(|| CliError::input("--out is required"))?;
    let m = TransientVolume::load(&input).context(input.display())?;
    let lo = a.a.unwrap_or(0.0);
    let opts = NoiseOptions {
        scale: match (a.c, a.peak_photons) {
            (Some(c), _) => SignalScale::Constant(c),
            (None, Some(p)) => SignalScale::PeakPhotons(p),
            (None, None) => SignalScale::default(),
        },
        base: [lo, a.b.unwrap_or(lo)],
        per_bin_base: a.per_bin_base,
    };
    let noisy = add_spad_noise(&m, &opts, a.seed.unwrap_or(0))?;
    create_parent(&out)?;
    noisy.save(&out)?;
    Ok(noisy)
}
