//! SPAD-style count noise: every bin becomes a Poisson draw with mean `C·m + B`,
//! where the base level `B ~ U[a, b]` is drawn once per volume.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::TransientVolume;

/// Below this mean, Poisson variates are drawn by sequential inversion.
pub const INVERSION_LIMIT: f64 = 30.0;

pub const DEFAULT_PEAK_PHOTONS: f64 = 100.0;

/// How the signal scale `C` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalScale {
    /// Use `C` as given.
    Constant(f64),
    /// Pick `C` so the brightest clean bin has this expected count.
    PeakPhotons(f64),
}

impl Default for SignalScale {
    fn default() -> Self {
        SignalScale::PeakPhotons(DEFAULT_PEAK_PHOTONS)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseOptions {
    pub scale: SignalScale,
    /// Base-noise range `[a, b]`.
    pub base: [f64; 2],
    /// Draw `B` independently for every bin instead of once per volume.
    pub per_bin_base: bool,
}

impl Default for NoiseOptions {
    fn default() -> Self {
        NoiseOptions {
            scale: SignalScale::default(),
            base: [0.0, 0.0],
            per_bin_base: false,
        }
    }
}

/// Poisson variate; sequential inversion for small means, `rand_distr` above.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < INVERSION_LIMIT {
        let u: f64 = rng.gen();
        let mut p = (-mean).exp();
        let mut cdf = p;
        let mut k = 0u64;
        while u > cdf {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
            if p == 0.0 && cdf < u {
                // Round-off left the CDF short of u; the remaining mass is negligible.
                break;
            }
        }
        k
    } else {
        Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [a, b]: [f64; 2]) -> f64 {
    if b > a {
        rng.gen_range(a..=b)
    } else {
        a
    }
}

/// Resolves `C` for a clean volume.
pub fn resolve_scale(m: &TransientVolume, scale: SignalScale) -> Result<f64> {
    let c = match scale {
        SignalScale::Constant(c) => c,
        SignalScale::PeakPhotons(peak) => {
            if !(peak > 0.0) {
                return Err(Error::InvalidInput("peak photon count must be positive".into()));
            }
            let max = m.max();
            if max > 0.0 {
                peak / max
            } else {
                1.0
            }
        }
    };
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidInput(format!("scale constant C must be positive, got {c}")));
    }
    Ok(c)
}

/// Returns a noisy copy of `m` with integer-valued entries.
///
/// Randomness is split into one ChaCha stream per scan position (stream 0 draws the
/// global `B`), so the output does not depend on thread scheduling.
pub fn add_spad_noise(m: &TransientVolume, opts: &NoiseOptions, seed: u64) -> Result<TransientVolume> {
    let [a, b] = opts.base;
    if !(a >= 0.0 && b >= a && b.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "base-noise range must satisfy 0 ≤ a ≤ b, got [{a}, {b}]"
        )));
    }
    if m.data.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("transient entries must be finite and non-negative".into()));
    }
    let c = resolve_scale(m, opts.scale)?;
    let mut global = ChaCha8Rng::seed_from_u64(seed);
    let base = uniform(&mut global, opts.base);

    let mut out = m.clone();
    let n_bins = m.shape()[2];
    let data = out
        .data
        .as_slice_mut()
        .ok_or_else(|| Error::InvalidInput("transient data must be contiguous".into()))?;
    data.par_chunks_mut(n_bins.max(1))
        .enumerate()
        .for_each(|(i, hist)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            for v in hist.iter_mut() {
                let bb = if opts.per_bin_base { uniform(&mut rng, opts.base) } else { base };
                *v = sample_poisson(&mut rng, c * *v + bb) as f64;
            }
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{SceneConfig, WallScanGrid};

    fn constant_volume(value: f64, nx: usize, n_bins: usize) -> TransientVolume {
        let cfg = SceneConfig {
            wall: WallScanGrid::new([0.7, 0.7], [nx, 1]),
            n_bins,
            ..SceneConfig::confocal_small()
        };
        let mut v = TransientVolume::zeros(&cfg);
        v.data.fill(value);
        v
    }

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn poisson_moments_small_mean() {
        let v = constant_volume(5.0, 100, 100);
        let opts = NoiseOptions {
            scale: SignalScale::Constant(1.0),
            ..Default::default()
        };
        let out = add_spad_noise(&v, &opts, 11).unwrap();
        let xs: Vec<f64> = out.data.iter().copied().collect();
        assert_eq!(xs.len(), 10_000);
        let (mean, var) = moments(&xs);
        assert!((mean - 5.0).abs() < 3.0 * (5.0f64 / 10_000.0).sqrt());
        assert!((var - 5.0).abs() / 5.0 < 0.05);
        assert!(xs.iter().all(|x| x.fract() == 0.0 && *x >= 0.0));
    }

    #[test]
    fn base_only() {
        let v = constant_volume(0.0, 100, 100);
        let opts = NoiseOptions {
            scale: SignalScale::Constant(1.0),
            base: [2.0, 2.0],
            per_bin_base: false,
        };
        let xs: Vec<f64> = add_spad_noise(&v, &opts, 5).unwrap().data.iter().copied().collect();
        let (mean, _) = moments(&xs);
        assert!((mean - 2.0).abs() < 3.0 * (2.0f64 / 10_000.0).sqrt());
    }

    #[test]
    fn scale_multiplies_mean() {
        let v = constant_volume(3.0, 100, 100);
        let mk = |c| NoiseOptions {
            scale: SignalScale::Constant(c),
            ..Default::default()
        };
        let m1 = moments(&add_spad_noise(&v, &mk(1.0), 1).unwrap().data.iter().copied().collect::<Vec<_>>()).0;
        let m10 = moments(&add_spad_noise(&v, &mk(10.0), 1).unwrap().data.iter().copied().collect::<Vec<_>>()).0;
        assert!((m10 / m1 - 10.0).abs() < 0.3);
    }

    #[test]
    fn seeded_determinism() {
        let v = constant_volume(1.5, 8, 64);
        let opts = NoiseOptions {
            base: [0.5, 1.5],
            ..Default::default()
        };
        let a = add_spad_noise(&v, &opts, 99).unwrap();
        let b = add_spad_noise(&v, &opts, 99).unwrap();
        let c = add_spad_noise(&v, &opts, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_inputs() {
        let v = constant_volume(1.0, 2, 4);
        let bad_range = NoiseOptions {
            base: [2.0, 1.0],
            ..Default::default()
        };
        assert!(add_spad_noise(&v, &bad_range, 0).is_err());
        let neg_c = NoiseOptions {
            scale: SignalScale::Constant(-1.0),
            ..Default::default()
        };
        assert!(add_spad_noise(&v, &neg_c, 0).is_err());
        let mut neg = v.clone();
        neg.data[[0, 0, 0]] = -1.0;
        assert!(add_spad_noise(&neg, &NoiseOptions::default(), 0).is_err());
    }

    #[test]
    fn peak_photons_sets_scale() {
        let mut v = constant_volume(0.0, 2, 8);
        v.data[[1, 0, 3]] = 0.25;
        assert_eq!(resolve_scale(&v, SignalScale::PeakPhotons(100.0)).unwrap(), 400.0);
    }

    /// Chi-square goodness of fit against the Poisson pmf for both sampling branches.
    #[test]
    fn both_branches_match_pmf() {
        for (mean, seed) in [(4.0, 1u64), (45.0, 2)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 40_000;
            let draws: Vec<u64> = (0..n).map(|_| sample_poisson(&mut rng, mean)).collect();
            let lo = (mean - 3.0 * f64::sqrt(mean)).max(0.0).floor() as u64;
            let hi = (mean + 3.0 * f64::sqrt(mean)).ceil() as u64;
            // Cells: (< lo), lo..=hi individually, (> hi).
            let ln_pmf = |k: u64| -> f64 {
                let mut lf = 0.0;
                for i in 2..=k {
                    lf += (i as f64).ln();
                }
                k as f64 * mean.ln() - mean - lf
            };
            let mut expected = vec![0.0; (hi - lo + 3) as usize];
            let mut observed = vec![0.0; expected.len()];
            let cdf_lo: f64 = (0..lo).map(|k| ln_pmf(k).exp()).sum();
            expected[0] = cdf_lo;
            let mut inside = 0.0;
            for k in lo..=hi {
                let p = ln_pmf(k).exp();
                expected[(k - lo + 1) as usize] = p;
                inside += p;
            }
            *expected.last_mut().unwrap() = 1.0 - cdf_lo - inside;
            for &d in &draws {
                let cell = if d < lo { 0 } else if d > hi { expected.len() - 1 } else { (d - lo + 1) as usize };
                observed[cell] += 1.0;
            }
            let chi2: f64 = expected
                .iter()
                .zip(&observed)
                .filter(|(e, _)| **e * n as f64 > 5.0)
                .map(|(e, o)| (o - e * n as f64).powi(2) / (e * n as f64))
                .sum();
            let dof = expected.len() as f64 - 1.0;
            // Wilson–Hilferty upper 1% point.
            let crit = dof * (1.0 - 2.0 / (9.0 * dof) + 2.326 * (2.0 / (9.0 * dof)).sqrt()).powi(3);
            assert!(chi2 < crit, "mean {mean}: chi2 {chi2} crit {crit}");
        }
    }
}
