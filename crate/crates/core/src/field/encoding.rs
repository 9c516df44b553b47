use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Per-coordinate sine/cosine features at octave frequencies `2^k π`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionalEncoding {
    pub frequencies: usize,
    pub include_raw: bool,
}

impl Default for PositionalEncoding {
    fn default() -> Self {
        PositionalEncoding {
            frequencies: 6,
            include_raw: true,
        }
    }
}

impl PositionalEncoding {
    pub fn dim(&self) -> usize {
        3 * (2 * self.frequencies + usize::from(self.include_raw))
    }

    /// Writes the features of `p` (already in `[-1, 1]³`) into `out`. Each coordinate
    /// contributes `[c?, sin(2⁰πc), cos(2⁰πc), …, sin(2^{L−1}πc), cos(2^{L−1}πc)]`.
    pub fn encode_into(&self, p: [f64; 3], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        let mut i = 0;
        for c in p {
            if self.include_raw {
                out[i] = c;
                i += 1;
            }
            let mut f = PI;
            for _ in 0..self.frequencies {
                let (s, co) = (f * c).sin_cos();
                out[i] = s;
                out[i + 1] = co;
                i += 2;
                f *= 2.0;
            }
        }
    }

    pub fn encode(&self, p: [f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.encode_into(p, &mut out);
        out
    }

    /// One row per point.
    pub fn encode_batch(&self, points: &[[f64; 3]]) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((points.len(), d));
        for (row, p) in out.rows_mut().into_iter().zip(points) {
            self.encode_into(*p, row.into_slice().expect("rows of a standard-layout array are contiguous"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_features() {
        let e = PositionalEncoding {
            frequencies: 2,
            include_raw: true,
        };
        assert_eq!(e.dim(), 15);
        let q = e.encode([0.0; 3]);
        for c in 0..3 {
            let b = &q[c * 5..c * 5 + 5];
            assert_eq!(b, &[0.0, 0.0, 1.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn zero_frequencies_is_identity() {
        let e = PositionalEncoding {
            frequencies: 0,
            include_raw: true,
        };
        assert_eq!(e.encode([0.3, -0.7, 0.9]), vec![0.3, -0.7, 0.9]);
    }

    #[test]
    fn frequencies_double() {
        let e = PositionalEncoding {
            frequencies: 3,
            include_raw: false,
        };
        let c = 0.1;
        let q = e.encode([c, 0.0, 0.0]);
        for k in 0..3 {
            let f = PI * 2f64.powi(k as i32);
            assert!((q[2 * k] - (f * c).sin()).abs() < 1e-15);
            assert!((q[2 * k + 1] - (f * c).cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn batch_rows_match_single() {
        let e = PositionalEncoding::default();
        let pts = [[0.1, 0.2, -0.3], [0.9, -1.0, 0.5]];
        let b = e.encode_batch(&pts);
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(b.row(i).to_vec(), e.encode(*p));
        }
    }
}
