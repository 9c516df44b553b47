//! `occfield`: scene generation, rendering, labeling, fitting, extraction and
//! evaluation for occlusion-field reconstruction.
//!
//! Exit codes: 0 success, 1 numerical or convergence failure, 2 I/O or validation
//! failure. `NLOS_THREADS` caps the worker count.

mod commands;
mod config;
mod error;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AddNoiseArgs, EvalArgs, ExtractArgs, FitArgs, GenDatasetArgs, RenderArgs, SampleArgs};
use config::ConfigFile;
use error::{CliError, CliResult};
use pipeline::PipelineArgs;

#[derive(Parser)]
#[command(name = "occfield", version, about = "Occlusion fields for non-line-of-sight reconstruction")]
struct Cli {
    /// JSON file with one section per command; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random scene descriptions.
    GenDataset(GenDatasetArgs),
    /// Render the confocal transient of a scene.
    Render(RenderArgs),
    /// Draw labeled training points for a scene.
    Sample(SampleArgs),
    /// Fit an occlusion field to labeled points.
    Fit(FitArgs),
    /// Extract the shadow hull and its wall-visible part.
    Extract(ExtractArgs),
    /// Compare a predicted mesh (and optionally labels) against ground truth.
    Eval(EvalArgs),
    /// Apply SPAD-style Poisson noise to a transient.
    AddNoise(AddNoiseArgs),
    /// Run every stage on one scene.
    Pipeline(PipelineArgs),
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("NLOS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::input(format!("NLOS_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::input(format!("cannot start {n} worker threads: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::empty(),
    };
    match cli.command {
        Command::GenDataset(a) => {
            let paths = commands::gen_dataset(cfg.apply("gen-dataset", a)?)?;
            println!("wrote {} scene files", paths.len());
        }
        Command::Render(a) => {
            let m = commands::render_cmd(cfg.apply("render", a)?)?;
            let [nx, ny, nt] = m.shape();
            println!("transient {nx}x{ny}x{nt}, peak {:.6e}", m.max());
        }
        Command::Sample(a) => {
            let s = commands::sample_cmd(cfg.apply("sample", a)?)?;
            println!(
                "{} points, {} sensors, k = {}, occluded fraction {:.4}",
                s.len(),
                s.sensors.len(),
                s.k,
                s.occluded_fraction()
            );
        }
        Command::Fit(a) => {
            let (_, r) = commands::fit_cmd(cfg.apply("fit", a)?)?;
            println!(
                "{} steps in {:.1} s; best held-out loss {:.5}, IoU {:.4}, MAE {:.4}",
                r.steps, r.wall_clock_s, r.best_val_loss, r.final_val_iou, r.final_val_mae
            );
        }
        Command::Extract(a) => {
            let s = commands::extract_cmd(cfg.apply("extract", a)?)?;
            println!(
                "closed hull {} triangles, wall-visible {} triangles ({:.1}% of the area)",
                s.closed.len(),
                s.nlos.len(),
                100.0 * s.kept_area_fraction()
            );
        }
        Command::Eval(a) => {
            let r = commands::eval_cmd(cfg.apply("eval", a)?)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::AddNoise(a) => {
            let m = commands::add_noise_cmd(cfg.apply("add-noise", a)?)?;
            println!("noisy transient, total count {:.0}", m.total());
        }
        Command::Pipeline(a) => {
            let (_, eval) = pipeline::pipeline_cmd(cfg.apply("pipeline", a)?)?;
            println!("chamfer x1e3 (field) {:.4}", eval.field.chamfer_x1e3);
            println!("chamfer x1e3 (oracle grid) {:.4}", eval.oracle.chamfer_x1e3);
            println!("f-score (field) {:.4}", eval.field.fscore);
            println!("oracle-vs-fit point IoU {:.4}", eval.point_iou);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
