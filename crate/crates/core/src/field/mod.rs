//! Implicit occlusion field `Ô(m, p) = G(F(m), H(p))`.
//!
//! `H` is a fixed positional encoding of the point, `F` produces a shape code (a
//! learned constant in single-scene mode, a small encoder of the transient in
//! conditioned mode) and `G` is a fully connected decoder with softplus hidden units
//! and a logistic output. Gradients are computed by hand in reverse mode.

mod adam;
mod encoding;
mod fit;
mod io;
mod loss;

pub use adam::{Adam, AdamConfig};
pub use encoding::PositionalEncoding;
pub use fit::{fit, FitConfig, FitReport, FitRecord, TrainingScene};
pub use io::WEIGHT_FORMAT_VERSION;
pub use loss::{bce_loss, BCE_CLIP};

use nalgebra::Point3;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::TransientVolume;
use crate::scene::HiddenCube;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldMode {
    /// One scene; the shape code is a free parameter.
    Single,
    /// The shape code is computed from the transient.
    Conditioned,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub mode: FieldMode,
    pub encoding: PositionalEncoding,
    /// Width of every hidden decoder layer.
    pub hidden: usize,
    /// Number of hidden decoder layers.
    pub layers: usize,
    pub code_dim: usize,
    pub encoder_hidden: usize,
    /// Temporal average-pooling factor of the encoder input.
    pub pool: usize,
    /// `(n_x, n_y, n_bins)` of the conditioning transient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient_shape: Option<[usize; 3]>,
    /// Maps metres to the network's `[-1, 1]³` input domain.
    pub cube: HiddenCube,
}

impl FieldConfig {
    pub fn single(cube: HiddenCube) -> Self {
        FieldConfig {
            mode: FieldMode::Single,
            encoding: PositionalEncoding::default(),
            hidden: 128,
            layers: 4,
            code_dim: 128,
            encoder_hidden: 128,
            pool: 4,
            transient_shape: None,
            cube,
        }
    }

    pub fn conditioned(cube: HiddenCube, transient_shape: [usize; 3]) -> Self {
        FieldConfig {
            mode: FieldMode::Conditioned,
            transient_shape: Some(transient_shape),
            ..FieldConfig::single(cube)
        }
    }

    /// Length of the pooled, flattened transient fed to the encoder.
    pub fn encoder_input_dim(&self) -> Option<usize> {
        self.transient_shape
            .map(|[nx, ny, nb]| nx * ny * nb.div_ceil(self.pool.max(1)))
    }

    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.code_dim == 0 {
            return Err(Error::InvalidConfig("decoder widths and depth must be positive".into()));
        }
        if self.mode == FieldMode::Conditioned
            && (self.encoder_input_dim().unwrap_or(0) == 0 || self.encoder_hidden == 0 || self.pool == 0)
        {
            return Err(Error::InvalidConfig(
                "conditioned mode needs a non-empty transient shape, encoder width and pool".into(),
            ));
        }
        if !(self.cube.side > 0.0) {
            return Err(Error::InvalidConfig("cube side must be positive".into()));
        }
        Ok(())
    }
}

/// Named parameter array stored row-major. Matrices are `[fan_in, fan_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: &str, shape: &[usize]) -> Self {
        Tensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn mat(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.data).expect("matrix shape")
    }

    fn vec(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[..])
    }
}

/// Indices of each parameter group in the tensor list.
#[derive(Clone, Debug)]
struct Layout {
    code: Option<usize>,
    encoder: Option<[usize; 4]>,
    w0_code: usize,
    w0_pos: usize,
    b0: usize,
    hidden: Vec<(usize, usize)>,
    out_w: usize,
    out_b: usize,
}

impl Layout {
    fn build(cfg: &FieldConfig) -> (Layout, Vec<Tensor>) {
        let mut t = Vec::new();
        let mut push = |name: &str, shape: &[usize]| {
            t.push(Tensor::zeros(name, shape));
            t.len() - 1
        };
        let (d, h, p) = (cfg.code_dim, cfg.hidden, cfg.encoding.dim());
        let (code, encoder) = match cfg.mode {
            FieldMode::Single => (Some(push("code", &[d])), None),
            FieldMode::Conditioned => {
                let e = cfg.encoder_input_dim().unwrap_or(0);
                let eh = cfg.encoder_hidden;
                (
                    None,
                    Some([
                        push("encoder.w0", &[e, eh]),
                        push("encoder.b0", &[eh]),
                        push("encoder.w1", &[eh, d]),
                        push("encoder.b1", &[d]),
                    ]),
                )
            }
        };
        let w0_code = push("decoder.w0_code", &[d, h]);
        let w0_pos = push("decoder.w0_pos", &[p, h]);
        let b0 = push("decoder.b0", &[h]);
        let hidden = (1..cfg.layers)
            .map(|l| (push(&format!("decoder.w{l}"), &[h, h]), push(&format!("decoder.b{l}"), &[h])))
            .collect();
        let out_w = push("decoder.out_w", &[h, 1]);
        let out_b = push("decoder.out_b", &[1]);
        (
            Layout {
                code,
                encoder,
                w0_code,
                w0_pos,
                b0,
                hidden,
                out_w,
                out_b,
            },
            t,
        )
    }
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of softplus expressed through its output: `σ(x) = 1 − e^{−softplus(x)}`.
#[inline]
fn softplus_slope_from_output(a: f64) -> f64 {
    -(-a).exp_m1()
}

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Activations kept for the backward pass.
struct DecoderCache {
    q: Array2<f64>,
    /// Post-activation output of every hidden layer.
    acts: Vec<Array2<f64>>,
}

/// Shape-code computation kept for the backward pass.
struct CodeCache {
    code: Array1<f64>,
    encoder: Option<(Array1<f64>, Array1<f64>)>,
}

/// A batch of points from one scene with its labels.
pub struct SceneBatch<'a> {
    pub transient: Option<&'a TransientVolume>,
    pub points: &'a [Point3<f64>],
    pub labels: &'a [u8],
}

#[derive(Clone, Debug)]
pub struct OcclusionField {
    config: FieldConfig,
    layout: Layout,
    params: Vec<Tensor>,
}

impl OcclusionField {
    /// Uniform fan-in initialization `U(±1/√fan_in)` for weights and biases; the
    /// output layer starts at zero so every prediction is 0.5. Values are rounded to
    /// `f32` so a saved field reloads bit-exactly.
    pub fn new(config: FieldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, mut params) = Layout::build(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zero_init = [layout.out_w, layout.out_b];
        let fan_in = |t: &Tensor| -> usize {
            match t.name.as_str() {
                "code" => config.code_dim,
                "decoder.w0_code" | "decoder.w0_pos" | "decoder.b0" => config.code_dim + config.encoding.dim(),
                _ if t.shape.len() == 2 => t.shape[0],
                "encoder.b0" => config.encoder_input_dim().unwrap_or(1),
                "encoder.b1" => config.encoder_hidden,
                _ => config.hidden,
            }
        };
        for (i, t) in params.iter_mut().enumerate() {
            if zero_init.contains(&i) {
                continue;
            }
            let bound = 1.0 / (fan_in(t).max(1) as f64).sqrt();
            for v in t.data.iter_mut() {
                *v = rng.gen_range(-bound..bound) as f32 as f64;
            }
        }
        Ok(OcclusionField {
            config,
            layout,
            params,
        })
    }

    pub(crate) fn from_parts(config: FieldConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let (layout, expected) = Layout::build(&config);
        if expected.len() != params.len()
            || expected
                .iter()
                .zip(&params)
                .any(|(a, b)| a.name != b.name || a.shape != b.shape || b.data.len() != a.data.len())
        {
            return Err(Error::Format("weight tensors do not match the field configuration".into()));
        }
        Ok(OcclusionField {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for t in &mut self.params {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Metres → encoder domain `[-1, 1]³`.
    fn normalize(&self, p: &Point3<f64>) -> [f64; 3] {
        let q = self.config.cube.to_signed(p);
        [q.x, q.y, q.z]
    }

    /// Pooled `log(1 + m)` features in `(x, y, pooled t)` order.
    pub fn transient_features(&self, m: &TransientVolume) -> Result<Array1<f64>> {
        let want = self
            .config
            .transient_shape
            .ok_or_else(|| Error::InvalidInput("field is not transient-conditioned".into()))?;
        if m.shape() != want {
            return Err(Error::ShapeMismatch(format!(
                "transient has shape {:?}, field expects {want:?}",
                m.shape()
            )));
        }
        let pool = self.config.pool;
        let [nx, ny, nb] = want;
        let groups = nb.div_ceil(pool);
        let mut out = Array1::zeros(nx * ny * groups);
        for ix in 0..nx {
            for iy in 0..ny {
                for g in 0..groups {
                    let lo = g * pool;
                    let hi = (lo + pool).min(nb);
                    let s: f64 = (lo..hi).map(|b| m.data[[ix, iy, b]].max(0.0).ln_1p()).sum();
                    out[(ix * ny + iy) * groups + g] = s / (hi - lo) as f64;
                }
            }
        }
        Ok(out)
    }

    fn code(&self, transient: Option<&TransientVolume>) -> Result<CodeCache> {
        match self.config.mode {
            FieldMode::Single => Ok(CodeCache {
                code: self.params[self.layout.code.expect("single mode has a code")].vec().to_owned(),
                encoder: None,
            }),
            FieldMode::Conditioned => {
                let m = transient.ok_or_else(|| {
                    Error::InvalidInput("conditioned field needs a transient".into())
                })?;
                let x = self.transient_features(m)?;
                let [w0, b0, w1, b1] = self.layout.encoder.expect("conditioned mode has an encoder");
                let h = (x.dot(&self.params[w0].mat()) + self.params[b0].vec()).mapv(softplus);
                let code = h.dot(&self.params[w1].mat()) + self.params[b1].vec();
                Ok(CodeCache {
                    code,
                    encoder: Some((x, h)),
                })
            }
        }
    }

    /// Decoder forward pass on encoded points. Returns logits and, if requested, the
    /// activations needed for backpropagation.
    fn decode(&self, code: &Array1<f64>, q: Array2<f64>, keep: bool) -> (Array1<f64>, Option<DecoderCache>) {
        let l = &self.layout;
        let p = &self.params;
        // The code is constant over the batch, so its share of layer 0 is one row.
        let code_row = code.dot(&p[l.w0_code].mat()) + p[l.b0].vec();
        let mut a = q.dot(&p[l.w0_pos].mat()) + &code_row;
        a.mapv_inplace(softplus);
        let mut acts = Vec::with_capacity(self.config.layers);
        for &(w, b) in &l.hidden {
            let mut next = a.dot(&p[w].mat()) + p[b].vec();
            next.mapv_inplace(softplus);
            if keep {
                acts.push(std::mem::replace(&mut a, next));
            } else {
                a = next;
            }
        }
        let logits = a.dot(&p[l.out_w].mat()).column(0).to_owned() + p[l.out_b].data[0];
        if keep {
            acts.push(a);
            (logits, Some(DecoderCache { q, acts }))
        } else {
            (logits, None)
        }
    }

    fn encode_points(&self, points: &[Point3<f64>]) -> Array2<f64> {
        let pts: Vec<[f64; 3]> = points.iter().map(|p| self.normalize(p)).collect();
        self.config.encoding.encode_batch(&pts)
    }

    /// Occlusion probabilities in `(0, 1)` for points given in metres.
    pub fn predict(&self, transient: Option<&TransientVolume>, points: &[Point3<f64>]) -> Result<Vec<f64>> {
        let code = self.code(transient)?.code;
        const CHUNK: usize = 4096;
        let parts: Vec<Vec<f64>> = points
            .par_chunks(CHUNK)
            .map(|chunk| {
                let q = self.encode_points(chunk);
                self.decode(&code, q, false).0.iter().map(|&z| logistic(z)).collect()
            })
            .collect();
        Ok(parts.concat())
    }

    /// Mean BCE over scenes (each the mean over its points), without gradients.
    pub fn loss(&self, batches: &[SceneBatch<'_>]) -> Result<f64> {
        let mut total = 0.0;
        for b in batches {
            check_batch(b)?;
            let p = self.predict(b.transient, b.points)?;
            total += bce_loss(&p, b.labels);
        }
        Ok(total / batches.len().max(1) as f64)
    }

    /// Loss and exact gradient with respect to every parameter tensor.
    pub fn loss_and_gradient(&self, batches: &[SceneBatch<'_>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut grads: Vec<Vec<f64>> = self.params.iter().map(|t| vec![0.0; t.len()]).collect();
        let mut total = 0.0;
        let n_scenes = batches.len().max(1) as f64;
        for b in batches {
            check_batch(b)?;
            let cc = self.code(b.transient)?;
            let q = self.encode_points(b.points);
            let (logits, cache) = self.decode(&cc.code, q, true);
            let cache = cache.expect("cache requested");
            let probs: Vec<f64> = logits.iter().map(|&z| logistic(z)).collect();
            total += bce_loss(&probs, b.labels);
            let scale = 1.0 / (n_scenes * b.points.len() as f64);
            let dlogit = Array1::from_iter(
                probs
                    .iter()
                    .zip(b.labels)
                    .map(|(&p, &y)| scale * loss::dloss_dlogit(p, y)),
            );
            self.backward(&cc, &cache, &dlogit, &mut grads);
        }
        Ok((total / n_scenes, grads))
    }

    fn backward(&self, cc: &CodeCache, cache: &DecoderCache, dlogit: &Array1<f64>, grads: &mut [Vec<f64>]) {
        let l = &self.layout;
        let p = &self.params;
        let acts = &cache.acts;
        let last = acts.last().expect("at least one hidden layer");

        add_into(&mut grads[l.out_w], last.t().dot(dlogit).iter());
        grads[l.out_b][0] += dlogit.sum();
        let out_w = p[l.out_w].mat();
        let mut g_a: Array2<f64> = dlogit
            .view()
            .insert_axis(Axis(1))
            .dot(&out_w.t());

        for (idx, &(w, b)) in l.hidden.iter().enumerate().rev() {
            let a_out = &acts[idx + 1];
            let a_in = &acts[idx];
            let g_z = &g_a * &a_out.mapv(softplus_slope_from_output);
            add_into(&mut grads[w], a_in.t().dot(&g_z).iter());
            add_into(&mut grads[b], g_z.sum_axis(Axis(0)).iter());
            g_a = g_z.dot(&p[w].mat().t());
        }

        let g_z0 = &g_a * &acts[0].mapv(softplus_slope_from_output);
        add_into(&mut grads[l.w0_pos], cache.q.t().dot(&g_z0).iter());
        let s = g_z0.sum_axis(Axis(0));
        add_into(&mut grads[l.b0], s.iter());
        // Outer product code ⊗ s, row-major [code_dim, hidden].
        {
            let g = &mut grads[l.w0_code];
            let h = s.len();
            for (i, &c) in cc.code.iter().enumerate() {
                for (j, &sj) in s.iter().enumerate() {
                    g[i * h + j] += c * sj;
                }
            }
        }
        let g_code = p[l.w0_code].mat().dot(&s);

        match (l.code, l.encoder, &cc.encoder) {
            (Some(ci), _, _) => add_into(&mut grads[ci], g_code.iter()),
            (None, Some([w0, b0, w1, b1]), Some((x, h))) => {
                outer_into(&mut grads[w1], h, &g_code);
                add_into(&mut grads[b1], g_code.iter());
                let g_h = p[w1].mat().dot(&g_code);
                let g_pre = &g_h * &h.mapv(softplus_slope_from_output);
                outer_into(&mut grads[w0], x, &g_pre);
                add_into(&mut grads[b0], g_pre.iter());
            }
            _ => unreachable!("layout and code cache agree on the mode"),
        }
    }
}

fn check_batch(b: &SceneBatch<'_>) -> Result<()> {
    if b.points.len() != b.labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points but {} labels",
            b.points.len(),
            b.labels.len()
        )));
    }
    if b.points.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    Ok(())
}

fn add_into<'a>(dst: &mut [f64], src: impl Iterator<Item = &'a f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

/// `dst[i, j] += a[i] · b[j]`, skipping zero rows of `a`.
fn outer_into(dst: &mut [f64], a: &Array1<f64>, b: &Array1<f64>) {
    let m = b.len();
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let row = &mut dst[i * m..(i + 1) * m];
        for (d, &bj) in row.iter_mut().zip(b.iter()) {
            *d += ai * bj;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{SceneConfig, WallScanGrid};

    fn cube() -> HiddenCube {
        SceneConfig::confocal_small().hidden_cube
    }

    fn small_config() -> FieldConfig {
        FieldConfig {
            hidden: 16,
            layers: 3,
            code_dim: 8,
            encoder_hidden: 6,
            encoding: PositionalEncoding {
                frequencies: 2,
                include_raw: true,
            },
            ..FieldConfig::single(cube())
        }
    }

    fn random_points(n: usize, seed: u64) -> (Vec<Point3<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = cube().aabb();
        let pts: Vec<_> = (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(b.min.x..b.max.x),
                    rng.gen_range(b.min.y..b.max.y),
                    rng.gen_range(b.min.z..b.max.z),
                )
            })
            .collect();
        let labels = pts.iter().map(|p| u8::from(p.z > 0.35 && p.x > -0.05)).collect();
        (pts, labels)
    }

    fn randomize_output(f: &mut OcclusionField, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ow, ob) = (f.layout.out_w, f.layout.out_b);
        for i in [ow, ob] {
            for v in &mut f.params[i].data {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }

    /// Central differences on every entry; returns the worst per-tensor relative error
    /// `‖g_fd − g‖ / (‖g_fd‖ + ‖g‖)`.
    fn fd_check(f: &OcclusionField, batches: &[SceneBatch<'_>]) -> f64 {
        let (_, g) = f.loss_and_gradient(batches).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for ti in 0..f.params.len() {
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..f.params[ti].len() {
                let mut fp = f.clone();
                fp.params[ti].data[j] += h;
                let lp = fp.loss(batches).unwrap();
                fp.params[ti].data[j] -= 2.0 * h;
                let lm = fp.loss(batches).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                num += (fd - g[ti][j]).powi(2);
                den += fd * fd + g[ti][j] * g[ti][j];
            }
            let rel = if den == 0.0 { 0.0 } else { num.sqrt() / den.sqrt() };
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn fresh_field_predicts_half() {
        let f = OcclusionField::new(FieldConfig::single(cube()), 0).unwrap();
        let (pts, _) = random_points(50, 1);
        assert!(f.predict(None, &pts).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn duplicated_points_agree() {
        let mut f = OcclusionField::new(small_config(), 3).unwrap();
        randomize_output(&mut f, 4);
        let p = Point3::new(0.05, -0.1, 0.4);
        let out = f.predict(None, &[p, Point3::new(0.0, 0.0, 0.2), p]).unwrap();
        assert_eq!(out[0], out[2]);
        assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn gradients_match_finite_differences_single() {
        let mut f = OcclusionField::new(small_config(), 5).unwrap();
        randomize_output(&mut f, 6);
        let (pts, labels) = random_points(40, 2);
        let b = [SceneBatch {
            transient: None,
            points: &pts,
            labels: &labels,
        }];
        let err = fd_check(&f, &b);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gradients_match_finite_differences_conditioned() {
        let cfg = SceneConfig {
            wall: WallScanGrid::new([0.7, 0.7], [2, 2]),
            n_bins: 8,
            ..SceneConfig::confocal_small()
        };
        let mut m = TransientVolume::zeros(&cfg);
        for (i, v) in m.data.iter_mut().enumerate() {
            *v = (i % 5) as f64 * 0.7;
        }
        let fc = FieldConfig {
            mode: FieldMode::Conditioned,
            transient_shape: Some([2, 2, 8]),
            ..small_config()
        };
        let mut f = OcclusionField::new(fc, 7).unwrap();
        randomize_output(&mut f, 8);
        let (pts, labels) = random_points(30, 3);
        let (pts2, labels2) = random_points(20, 4);
        let mut m2 = m.clone();
        m2.data.mapv_inplace(|v| 2.0 - v * 0.5);
        let b = [
            SceneBatch {
                transient: Some(&m),
                points: &pts,
                labels: &labels,
            },
            SceneBatch {
                transient: Some(&m2),
                points: &pts2,
                labels: &labels2,
            },
        ];
        let err = fd_check(&f, &b);
        assert!(err < 1e-4, "relative error {err}");
        assert!(f.predict(None, &pts).is_err());
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let mut f = OcclusionField::new(small_config(), 9).unwrap();
        randomize_output(&mut f, 10);
        let (pts, labels) = random_points(25, 5);
        let single = [SceneBatch {
            transient: None,
            points: &pts,
            labels: &labels,
        }];
        let pts2 = [pts.clone(), pts.clone()].concat();
        let labels2 = [labels.clone(), labels.clone()].concat();
        let double = [SceneBatch {
            transient: None,
            points: &pts2,
            labels: &labels2,
        }];
        let (l1, g1) = f.loss_and_gradient(&single).unwrap();
        let (l2, g2) = f.loss_and_gradient(&double).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().flatten().zip(g2.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        // Output layer saturated far beyond the clip: predictions are clipped, loss is
        // at its floor and the clipped loss is flat.
        let mut f = OcclusionField::new(small_config(), 11).unwrap();
        let (ow, ob) = (f.layout.out_w, f.layout.out_b);
        f.params[ow].data.fill(0.0);
        f.params[ob].data[0] = 40.0;
        let pts = [Point3::new(0.0, 0.0, 0.3), Point3::new(0.1, 0.1, 0.5)];
        let labels = [1u8, 1];
        let b = [SceneBatch {
            transient: None,
            points: &pts,
            labels: &labels,
        }];
        let (loss, g) = f.loss_and_gradient(&b).unwrap();
        assert!(loss <= 1e-6);
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_labels_error() {
        let f = OcclusionField::new(small_config(), 0).unwrap();
        let pts = [Point3::new(0.0, 0.0, 0.3)];
        let b = [SceneBatch {
            transient: None,
            points: &pts,
            labels: &[0, 1],
        }];
        assert!(matches!(f.loss_and_gradient(&b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn softplus_helpers() {
        for x in [-40.0, -3.0, -1e-3, 0.0, 2.0, 50.0] {
            let a = softplus(x);
            assert!((a - (1.0f64 + f64::exp(x)).ln()).abs() < 1e-12 * (1.0 + a));
            assert!((softplus_slope_from_output(a) - logistic(x)).abs() < 1e-12);
        }
    }
}
