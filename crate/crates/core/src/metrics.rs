//! Reconstruction metrics: symmetric squared Chamfer distance, label IoU, F-score.
//!
//! Distances are in the units of the meshes passed in; the pipeline evaluates in
//! the hidden cube's unit frame.

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rstar::{PointDistance, RTree, RTreeObject, AABB};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;

pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_TAU: f64 = 0.01;

pub const CHAMFER_CONVENTION: &str =
    "symmetric mean of squared nearest-neighbour distances between area-uniform surface samples, averaged over both directions";

fn samples(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    if mesh.is_empty() {
        return Err(Error::EmptyGeometry);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pts, _) = mesh.sample_surface(&mut rng, n);
    Ok(pts.into_iter().map(|p| [p.x, p.y, p.z]).collect())
}

fn nearest_d2(tree: &RTree<[f64; 3]>, q: &[f64; 3]) -> f64 {
    let nn = tree
        .nearest_neighbor(q)
        .or_else(|| tree.nearest_neighbor_iter(q).next())
        .expect("tree is non-empty");
    nn.distance_2(q)
}

fn mean_nn_d2(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let tree = RTree::bulk_load(to.to_vec());
    let sum: f64 = from.par_iter().map(|q| nearest_d2(&tree, q)).sum();
    sum / from.len() as f64
}

/// Symmetric squared Chamfer distance between `n` area-uniform samples per mesh.
/// Both meshes are sampled with the same `seed`.
pub fn chamfer(a: &TriangleMesh, b: &TriangleMesh, n: usize, seed: u64) -> Result<f64> {
    let sa = samples(a, n, seed)?;
    let sb = samples(b, n, seed)?;
    Ok(0.5 * (mean_nn_d2(&sa, &sb) + mean_nn_d2(&sb, &sa)))
}

/// `|pred ∧ gt| / |pred ∨ gt|`, 1 when both are empty.
pub fn label_iou<T: Copy + Into<u8>>(pred: &[T], gt: &[T]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "label vectors differ in length: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (p.into() != 0, g.into() != 0);
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Squared distance from `p` to the triangle `abc` (closest-feature classification).
pub fn point_triangle_distance2(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm_squared();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm_squared();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (ap - ab * v).norm_squared();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm_squared();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (ap - ac * w).norm_squared();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (bp - (c - b) * w).norm_squared();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    let q: Vector3<f64> = ab * v + ac * w;
    (ap - q).norm_squared()
}

struct Tri([Point3<f64>; 3]);

impl RTreeObject for Tri {
    type Envelope = AABB<[f64; 3]>;

    fn envelope(&self) -> Self::Envelope {
        let [a, b, c] = &self.0;
        AABB::from_corners(
            [a.x.min(b.x).min(c.x), a.y.min(b.y).min(c.y), a.z.min(b.z).min(c.z)],
            [a.x.max(b.x).max(c.x), a.y.max(b.y).max(c.y), a.z.max(b.z).max(c.z)],
        )
    }
}

impl PointDistance for Tri {
    fn distance_2(&self, p: &[f64; 3]) -> f64 {
        let [a, b, c] = &self.0;
        point_triangle_distance2(&Point3::from(*p), a, b, c)
    }
}

/// Point-to-surface distance queries over a triangle mesh.
pub struct MeshDistance {
    tree: RTree<Tri>,
}

impl MeshDistance {
    pub fn new(mesh: &TriangleMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::EmptyGeometry);
        }
        let tris = (0..mesh.len()).map(|t| Tri(mesh.corners(t))).collect();
        Ok(MeshDistance {
            tree: RTree::bulk_load(tris),
        })
    }

    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        let q = [p.x, p.y, p.z];
        let t = self
            .tree
            .nearest_neighbor(&q)
            .or_else(|| self.tree.nearest_neighbor_iter(&q).next())
            .expect("tree is non-empty");
        t.distance_2(&q).sqrt()
    }
}

fn within_fraction(points: &[[f64; 3]], target: &MeshDistance, tau: f64) -> f64 {
    let hits = points
        .par_iter()
        .filter(|q| target.distance(&Point3::from(**q)) <= tau)
        .count();
    hits as f64 / points.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

/// Precision: share of predicted surface samples within `tau` of the GT surface.
/// Recall: share of GT samples within `tau` of the predicted surface.
pub fn fscore_detail(pred: &TriangleMesh, gt: &TriangleMesh, tau: f64, n: usize, seed: u64) -> Result<FScore> {
    let sp = samples(pred, n, seed)?;
    let sg = samples(gt, n, seed.wrapping_add(1))?;
    let precision = within_fraction(&sp, &MeshDistance::new(gt)?, tau);
    let recall = within_fraction(&sg, &MeshDistance::new(pred)?, tau);
    let fscore = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(FScore {
        precision,
        recall,
        fscore,
    })
}

pub fn fscore(pred: &TriangleMesh, gt: &TriangleMesh, tau: f64, n: usize, seed: u64) -> Result<f64> {
    Ok(fscore_detail(pred, gt, tau, n, seed)?.fscore)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub chamfer: f64,
    pub chamfer_x1e3: f64,
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    pub n_samples: usize,
    pub tau: f64,
    pub seed: u64,
    pub chamfer_convention: String,
}

pub fn evaluate(
    pred: &TriangleMesh,
    gt: &TriangleMesh,
    labels: Option<(&[u8], &[u8])>,
    tau: f64,
    n: usize,
    seed: u64,
) -> Result<EvalReport> {
    let c = chamfer(pred, gt, n, seed)?;
    let f = fscore_detail(pred, gt, tau, n, seed)?;
    let iou = labels.map(|(p, g)| label_iou(p, g)).transpose()?;
    Ok(EvalReport {
        chamfer: c,
        chamfer_x1e3: c * 1e3,
        fscore: f.fscore,
        precision: f.precision,
        recall: f.recall,
        iou,
        n_samples: n,
        tau,
        seed,
        chamfer_convention: CHAMFER_CONVENTION.into(),
    })
}
