//! End-to-end run: scene, transient, samples, fit, meshes, evaluation. Every artifact
//! lands in one directory together with `manifest.json`, which lists seeds, versions
//! and a SHA-256 per file.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use occfield::geometry::AffineTransform;
use occfield::metrics::{evaluate, label_iou, EvalReport};
use occfield::occlusion::{label_set, sample_points, SamplingOptions};
use occfield::scene::{ScenePlacement, SceneFile};
use occfield::surface::segment_nlos_surface;

use crate::commands::{
    extract_cmd, fit_cmd, open_scene, render_cmd, sample_cmd, save_mesh, ExtractArgs, FitArgs, Mode, RenderArgs,
    SampleArgs, DEFAULT_PRESET, DEFAULT_SENSORS,
};
use crate::error::{io_err, CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Demo {
    /// A square plate facing the wall, centered 25 cm from it.
    Plate,
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
pub struct PipelineArgs {
    /// Built-in demo scene.
    #[arg(long, value_enum, conflicts_with = "scene")]
    pub demo: Option<Demo>,
    /// Scene file to run instead of a demo.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub mesh_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub spp: Option<usize>,
    /// Training points.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_end: Option<f64>,
    /// Extraction grid resolution.
    #[arg(long)]
    pub res: Option<usize>,
    /// Held-out points for the oracle-vs-fit IoU.
    #[arg(long)]
    pub eval_points: Option<usize>,
}

/// Settings the run actually used, recorded in the manifest.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub seed: u64,
    pub spp: usize,
    pub points: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_end: f64,
    pub res: usize,
    pub eval_points: usize,
    pub sensors: String,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub weight_format_version: u32,
    pub scene_source: String,
    pub settings: PipelineSettings,
    pub stages: Vec<StageRecord>,
    pub artifacts: BTreeMap<String, Artifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct PipelineEval {
    /// Fitted wall-visible surface against the ground-truth wall-visible faces.
    pub field: EvalReport,
    /// Same comparison for the surface extracted from ray-cast labels.
    pub oracle: EvalReport,
    /// IoU of thresholded field predictions against ray-cast labels on fresh points.
    pub point_iou: f64,
    pub point_count: usize,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn demo_scene(demo: Demo, seed: u64) -> SceneFile {
    match demo {
        Demo::Plate => SceneFile {
            preset: DEFAULT_PRESET.into(),
            seed,
            placements: vec![ScenePlacement::new(
                "plate",
                AffineTransform {
                    scale: 0.5,
                    rot_deg: [0.0; 3],
                    trans: [0.0, 0.0, -0.2],
                },
            )],
            config: None,
        },
    }
}

struct Run {
    dir: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    fn record(&mut self, key: &str, file: &str) -> CliResult<()> {
        let sha256 = sha256_file(&self.path(file))?;
        self.manifest.artifacts.insert(
            key.into(),
            Artifact {
                file: file.into(),
                sha256,
            },
        );
        Ok(())
    }

    fn save_manifest(&self) -> CliResult<()> {
        let p = self.path(MANIFEST);
        std::fs::write(&p, serde_json::to_string_pretty(&self.manifest)? + "\n").map_err(|e| io_err(&p, e))
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Run) -> CliResult<T>) -> CliResult<T> {
        let start = Instant::now();
        eprintln!("[{name}]");
        match f(self) {
            Ok(v) => {
                self.manifest.stages.push(StageRecord {
                    name: name.into(),
                    seconds: start.elapsed().as_secs_f64(),
                });
                self.save_manifest()?;
                Ok(v)
            }
            Err(e) => {
                let e = e.context(format!("stage {name}"));
                self.manifest.failed_stage = Some(name.into());
                self.manifest.error = Some(e.message.clone());
                self.save_manifest()?;
                Err(e)
            }
        }
    }
}

pub fn pipeline_cmd(a: PipelineArgs) -> CliResult<(Manifest, PipelineEval)> {
    let dir = a.out.clone().ok_or_else(|| CliError::input("--out is required"))?;
    let seed = a.seed.unwrap_or(0);
    let (scene_file, source) = match (&a.demo, &a.scene) {
        (Some(d), None) => (demo_scene(*d, seed), format!("demo:{}", format!("{d:?}").to_lowercase())),
        (None, Some(p)) => (SceneFile::load(p)?, p.display().to_string()),
        _ => return Err(CliError::input("exactly one of --demo and --scene is required")),
    };
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let settings = PipelineSettings {
        seed,
        spp: a.spp.unwrap_or(4),
        points: a.points.unwrap_or(200_000),
        steps: a.steps.unwrap_or(1000),
        batch: a.batch.unwrap_or(4096),
        lr: a.lr.unwrap_or(3e-3),
        lr_end: a.lr_end.unwrap_or(0.01),
        res: a.res.unwrap_or(64),
        eval_points: a.eval_points.unwrap_or(50_000),
        sensors: DEFAULT_SENSORS.into(),
    };
    let mut run = Run {
        dir,
        manifest: Manifest {
            tool: "occfield".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            weight_format_version: occfield::field::WEIGHT_FORMAT_VERSION,
            scene_source: source,
            settings: settings.clone(),
            stages: Vec::new(),
            artifacts: BTreeMap::new(),
            failed_stage: None,
            error: None,
        },
    };
    let mesh_dir = a.mesh_dir.clone();
    let s = settings;

    let scene = run.stage("gen", |r| {
        let p = r.path("scene.json");
        scene_file.save(&p)?;
        let scene = open_scene(&p, mesh_dir.as_deref(), None)?;
        r.record("scene", "scene.json")?;
        Ok(scene)
    })?;

    run.stage("render", |r| {
        render_cmd(RenderArgs {
            scene: Some(r.path("scene.json")),
            preset: None,
            mesh_dir: mesh_dir.clone(),
            spp: Some(s.spp),
            temporal: None,
            seed: Some(s.seed),
            out: Some(r.path("transient.bin")),
        })?;
        r.record("transient", "transient.bin")?;
        r.record("transient_sidecar", "transient.bin.json")
    })?;

    run.stage("sample", |r| {
        sample_cmd(SampleArgs {
            scene: Some(r.path("scene.json")),
            mesh_dir: mesh_dir.clone(),
            n: Some(s.points),
            k: Some(1),
            sensors: Some(s.sensors.clone()),
            seed: Some(s.seed),
            out: Some(r.path("samples.bin")),
            ..Default::default()
        })?;
        r.record("samples", "samples.bin")?;
        r.record("samples_sidecar", "samples.bin.json")
    })?;

    let field = run.stage("fit", |r| {
        let (field, report) = fit_cmd(FitArgs {
            samples: vec![r.path("samples.bin")],
            mode: Some(Mode::Single),
            preset: Some(scene_file.preset.clone()),
            steps: Some(s.steps),
            batch: Some(s.batch),
            lr: Some(s.lr),
            lr_end: Some(s.lr_end),
            seed: Some(s.seed),
            out: Some(r.path("field.occf")),
            loss_csv: Some(r.path("loss.csv")),
            ..Default::default()
        })?;
        eprintln!(
            "  {} steps, held-out IoU {:.4}, {:.1} s",
            report.steps, report.final_val_iou, report.wall_clock_s
        );
        r.record("weights", "field.occf")?;
        r.record("weights_sidecar", "field.occf.json")?;
        r.record("loss_curve", "loss.csv")?;
        Ok(field)
    })?;

    run.stage("extract", |r| {
        for (prefix, field_path, oracle) in [
            ("field", Some(r.path("field.occf")), None),
            ("oracle", None, Some(r.path("scene.json"))),
        ] {
            extract_cmd(ExtractArgs {
                field: field_path,
                oracle_scene: oracle,
                mesh_dir: mesh_dir.clone(),
                preset: Some(scene_file.preset.clone()),
                res: Some(s.res),
                sensors: Some(s.sensors.clone()),
                seed: Some(s.seed),
                out_closed: Some(r.path(&format!("{prefix}_closed.obj"))),
                out_nlos: Some(r.path(&format!("{prefix}_nlos.obj"))),
                ..Default::default()
            })?;
            r.record(&format!("{prefix}_closed"), &format!("{prefix}_closed.obj"))?;
            r.record(&format!("{prefix}_nlos"), &format!("{prefix}_nlos.obj"))?;
        }
        // Ground-truth faces are split below half a grid cell so the centroid test
        // resolves partial visibility.
        let sensors = scene.labeling_sensors(5, 5);
        let cell = scene.config.hidden_cube.side / s.res as f64;
        let fine = scene.mesh.subdivided(0.5 * cell)?;
        let gt = segment_nlos_surface(&fine, &sensors, sensors.len(), 1e-5)?;
        save_mesh(&r.path("gt_nlos.obj"), &gt.nlos)?;
        r.record("gt_nlos", "gt_nlos.obj")
    })?;

    let eval = run.stage("eval", |r| {
        let cube = scene.config.hidden_cube;
        let unit = |file: &str| -> CliResult<_> {
            let m = occfield::geometry::mesh_io::read_mesh(r.path(file))?;
            Ok(m.map_points(|p| cube.to_unit(p))?)
        };
        let gt = unit("gt_nlos.obj")?;
        if unit("field_nlos.obj")?.is_empty() {
            return Err(CliError::numerical(
                "the fitted field has no wall-visible surface at this resolution (train longer)",
            ));
        }
        let score = |file: &str| -> CliResult<EvalReport> {
            Ok(evaluate(&unit(file)?, &gt, None, 0.01, 10_000, s.seed)?)
        };
        let field_report = score("field_nlos.obj")?;
        let oracle_report = score("oracle_nlos.obj")?;
        let sensors = scene.labeling_sensors(5, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(1));
        let opts = SamplingOptions {
            n_total: s.eval_points,
            ..Default::default()
        };
        let pts = sample_points(&scene.mesh, &cube, &opts, &mut rng);
        let truth = label_set(&scene.bvh, &pts, &sensors, 1)?;
        let pred: Vec<u8> = field.predict(None, &pts)?.iter().map(|&p| u8::from(p > 0.5)).collect();
        let iou = label_iou(&pred, &truth.labels)?;
        let report = PipelineEval {
            field: field_report,
            oracle: oracle_report,
            point_iou: iou,
            point_count: pts.len(),
        };
        let p = r.path("eval.json");
        std::fs::write(&p, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| io_err(&p, e))?;
        r.record("eval", "eval.json")?;
        Ok(report)
    })?;

    Ok((run.manifest, eval))
}
