use std::time::Instant;

use nalgebra::Point3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{bce_loss, Adam, AdamConfig, OcclusionField, SceneBatch, Tensor};
use crate::error::{Error, Result};
use crate::metrics::label_iou;
use crate::occlusion::OcclusionSampleSet;
use crate::render::TransientVolume;

/// One scene's labeled points, plus its transient in conditioned mode.
#[derive(Clone, Copy)]
pub struct TrainingScene<'a> {
    pub samples: &'a OcclusionSampleSet,
    pub transient: Option<&'a TransientVolume>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub steps: usize,
    /// Points per scene per step.
    pub batch: usize,
    pub adam: AdamConfig,
    /// Learning rate at the last step as a fraction of `adam.lr`, reached by cosine
    /// decay. `1.0` keeps the rate constant.
    #[serde(default = "constant_lr")]
    pub lr_end_fraction: f64,
    pub seed: u64,
    /// Share of each scene's points held out for validation.
    pub val_fraction: f64,
    /// Cap on validation points per scene.
    pub val_max: usize,
    pub eval_every: usize,
}

fn constant_lr() -> f64 {
    1.0
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 2000,
            batch: 20_000,
            adam: AdamConfig::default(),
            lr_end_fraction: 1.0,
            seed: 0,
            val_fraction: 0.1,
            val_max: 20_000,
            eval_every: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub step: usize,
    /// Mean training loss since the previous record.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub records: Vec<FitRecord>,
    pub initial_val_loss: f64,
    pub best_step: usize,
    pub best_val_loss: f64,
    /// Held-out point-label IoU of the returned weights.
    pub final_val_iou: f64,
    /// Held-out mean absolute difference between prediction and label.
    pub final_val_mae: f64,
    pub train_points: usize,
    pub val_points: usize,
    pub steps: usize,
    pub wall_clock_s: f64,
}

impl FitReport {
    /// Loss curve as CSV (`step,train_loss,val_loss,val_iou`).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,train_loss,val_loss,val_iou\n");
        for r in &self.records {
            s += &format!("{},{},{},{}\n", r.step, r.train_loss, r.val_loss, r.val_iou);
        }
        s
    }
}

struct Split {
    train: Vec<usize>,
    val_points: Vec<Point3<f64>>,
    val_labels: Vec<u8>,
    cursor: usize,
}

struct ValStats {
    loss: f64,
    iou: f64,
    mae: f64,
}

fn evaluate(field: &OcclusionField, scenes: &[TrainingScene<'_>], splits: &[Split]) -> Result<Option<ValStats>> {
    if splits.iter().all(|s| s.val_points.is_empty()) {
        return Ok(None);
    }
    let mut loss = 0.0;
    let mut n_scenes = 0.0;
    let mut pred_all = Vec::new();
    let mut gt_all = Vec::new();
    let mut abs_err = 0.0;
    for (scene, split) in scenes.iter().zip(splits) {
        if split.val_points.is_empty() {
            continue;
        }
        let p = field.predict(scene.transient, &split.val_points)?;
        loss += bce_loss(&p, &split.val_labels);
        n_scenes += 1.0;
        for (&pi, &y) in p.iter().zip(&split.val_labels) {
            pred_all.push(u8::from(pi > 0.5));
            gt_all.push(y);
            abs_err += (pi - f64::from(y)).abs();
        }
    }
    Ok(Some(ValStats {
        loss: loss / n_scenes,
        iou: label_iou(&pred_all, &gt_all)?,
        mae: abs_err / gt_all.len() as f64,
    }))
}

/// Fits `field` to labeled points with Adam on the mean BCE.
///
/// Each scene is split once into training and validation points. The weights with
/// the lowest validation loss seen at any evaluation are kept and rounded to `f32`.
/// On a non-finite loss or parameter the field is restored to the last finite state
/// and [`Error::Diverged`] is returned.
pub fn fit(field: &mut OcclusionField, scenes: &[TrainingScene<'_>], cfg: &FitConfig) -> Result<FitReport> {
    if scenes.is_empty() {
        return Err(Error::InvalidInput("no training scenes".into()));
    }
    if cfg.batch == 0 || !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::InvalidConfig(
            "batch must be positive and val_fraction in [0, 1)".into(),
        ));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut splits = Vec::with_capacity(scenes.len());
    for s in scenes {
        let set = s.samples;
        if set.points.len() != set.labels.len() {
            return Err(Error::ShapeMismatch("sample set points and labels differ in length".into()));
        }
        let n = set.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let n_val = ((n as f64) * cfg.val_fraction).round() as usize;
        if n <= n_val || n == 0 {
            return Err(Error::InvalidInput("too few points to train on".into()));
        }
        let val: Vec<usize> = idx[..n_val].iter().copied().take(cfg.val_max).collect();
        let mut train = idx[n_val..].to_vec();
        train.sort_unstable();
        train.shuffle(&mut rng);
        splits.push(Split {
            train,
            val_points: val.iter().map(|&i| set.points[i]).collect(),
            val_labels: val.iter().map(|&i| set.labels[i]).collect(),
            cursor: 0,
        });
    }
    let train_points = splits.iter().map(|s| s.train.len()).sum();
    let val_points = splits.iter().map(|s| s.val_points.len()).sum();

    let initial = evaluate(field, scenes, &splits)?;
    let initial_val_loss = initial.as_ref().map_or(f64::NAN, |v| v.loss);
    let mut best: (usize, f64, Vec<Tensor>) = (0, initial_val_loss, field.params().to_vec());
    let mut adam = Adam::new(cfg.adam, field.params());
    let mut records = Vec::new();
    let mut running = (0.0, 0usize);
    let mut batch_pts: Vec<Vec<Point3<f64>>> = vec![Vec::new(); scenes.len()];
    let mut batch_lbl: Vec<Vec<u8>> = vec![Vec::new(); scenes.len()];

    for step in 1..=cfg.steps {
        for (si, (scene, split)) in scenes.iter().zip(splits.iter_mut()).enumerate() {
            let size = cfg.batch.min(split.train.len());
            batch_pts[si].clear();
            batch_lbl[si].clear();
            for _ in 0..size {
                if split.cursor == split.train.len() {
                    split.train.shuffle(&mut rng);
                    split.cursor = 0;
                }
                let i = split.train[split.cursor];
                split.cursor += 1;
                batch_pts[si].push(scene.samples.points[i]);
                batch_lbl[si].push(scene.samples.labels[i]);
            }
        }
        let batches: Vec<SceneBatch<'_>> = scenes
            .iter()
            .enumerate()
            .map(|(si, s)| SceneBatch {
                transient: s.transient,
                points: &batch_pts[si],
                labels: &batch_lbl[si],
            })
            .collect();
        let progress = if cfg.steps > 1 {
            (step - 1) as f64 / (cfg.steps - 1) as f64
        } else {
            0.0
        };
        let decay = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        adam.set_lr(cfg.adam.lr * (cfg.lr_end_fraction + (1.0 - cfg.lr_end_fraction) * decay));
        let (loss, grads) = field.loss_and_gradient(&batches)?;
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step });
        }
        let before = field.params().to_vec();
        adam.step(field.params_mut(), &grads);
        if !field.is_finite() {
            field.params_mut().clone_from_slice(&before);
            return Err(Error::Diverged { step });
        }
        running.0 += loss;
        running.1 += 1;

        if step % cfg.eval_every.max(1) == 0 || step == cfg.steps {
            let train_loss = running.0 / running.1 as f64;
            running = (0.0, 0);
            let (val_loss, val_iou) = match evaluate(field, scenes, &splits)? {
                Some(v) => (v.loss, v.iou),
                None => (train_loss, f64::NAN),
            };
            if !val_loss.is_finite() {
                return Err(Error::Diverged { step });
            }
            records.push(FitRecord {
                step,
                train_loss,
                val_loss,
                val_iou,
            });
            if !(val_loss >= best.1) {
                best = (step, val_loss, field.params().to_vec());
            }
        }
    }

    field.params_mut().clone_from_slice(&best.2);
    field.quantize_f32();
    let fin = evaluate(field, scenes, &splits)?;
    Ok(FitReport {
        records,
        initial_val_loss,
        best_step: best.0,
        best_val_loss: best.1,
        final_val_iou: fin.as_ref().map_or(f64::NAN, |v| v.iou),
        final_val_mae: fin.as_ref().map_or(f64::NAN, |v| v.mae),
        train_points,
        val_points,
        steps: cfg.steps,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldConfig, PositionalEncoding};
    use crate::scene::SceneConfig;
    use rand::Rng;

    fn sample_set(n: usize, label: impl Fn(&Point3<f64>) -> u8, seed: u64) -> OcclusionSampleSet {
        let b = SceneConfig::confocal_small().hidden_cube.aabb();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<_> = (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(b.min.x..b.max.x),
                    rng.gen_range(b.min.y..b.max.y),
                    rng.gen_range(b.min.z..b.max.z),
                )
            })
            .collect();
        let labels = points.iter().map(label).collect();
        OcclusionSampleSet {
            points,
            labels,
            bits: vec![0; n],
            sensors: vec![Point3::origin()],
            k: 1,
        }
    }

    fn small_field(seed: u64) -> OcclusionField {
        let cfg = FieldConfig {
            hidden: 32,
            layers: 2,
            code_dim: 8,
            encoding: PositionalEncoding {
                frequencies: 3,
                include_raw: true,
            },
            ..FieldConfig::single(SceneConfig::confocal_small().hidden_cube)
        };
        OcclusionField::new(cfg, seed).unwrap()
    }

    fn quick_cfg(steps: usize) -> FitConfig {
        FitConfig {
            steps,
            batch: 512,
            adam: AdamConfig {
                lr: 3e-3,
                ..Default::default()
            },
            eval_every: 50,
            ..Default::default()
        }
    }

    #[test]
    fn all_zero_labels_drive_predictions_down() {
        let set = sample_set(3000, |_| 0, 1);
        let mut f = small_field(2);
        let rep = fit(&mut f, &[TrainingScene { samples: &set, transient: None }], &quick_cfg(400)).unwrap();
        assert!(rep.best_val_loss < rep.initial_val_loss);
        let p = f.predict(None, &set.points).unwrap();
        assert!(p.iter().all(|&v| v < 0.05), "max {}", p.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn learns_a_half_space() {
        let set = sample_set(6000, |p| u8::from(p.z > 0.4), 3);
        let mut f = small_field(4);
        let rep = fit(&mut f, &[TrainingScene { samples: &set, transient: None }], &quick_cfg(600)).unwrap();
        assert!(rep.final_val_iou > 0.9, "iou {}", rep.final_val_iou);
        assert!(rep.records.windows(2).all(|w| w[0].step < w[1].step));
        assert!(rep.records.iter().all(|r| r.train_loss.is_finite() && r.val_loss.is_finite()));
        // Weights were rounded to f32.
        assert!(f.params().iter().flat_map(|t| &t.data).all(|&v| v == v as f32 as f64));
    }

    #[test]
    fn seeded_fit_is_deterministic() {
        let set = sample_set(2000, |p| u8::from(p.x > 0.0), 5);
        let run = || {
            let mut f = small_field(6);
            fit(&mut f, &[TrainingScene { samples: &set, transient: None }], &quick_cfg(60)).unwrap();
            f.params().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn divergence_restores_finite_state() {
        let set = sample_set(1000, |p| u8::from(p.x > 0.0), 7);
        let mut f = small_field(8);
        let cfg = FitConfig {
            adam: AdamConfig {
                lr: f64::INFINITY,
                ..Default::default()
            },
            ..quick_cfg(10)
        };
        let err = fit(&mut f, &[TrainingScene { samples: &set, transient: None }], &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 1 }));
        assert!(err.is_numerical());
        assert!(f.is_finite());
    }
}
