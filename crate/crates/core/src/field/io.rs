//! Weight file: `OCCF` magic, `u32` version, `u32` tensor count, then per tensor a
//! `u32` rank and `u32` dimensions, then every tensor's data as little-endian `f32`
//! in header order. A JSON sidecar (`<path>.json`) holds the field configuration and
//! tensor names.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FieldConfig, OcclusionField, Tensor};
use crate::binio;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"OCCF";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WeightSidecar {
    format_version: u32,
    config: FieldConfig,
    tensors: Vec<TensorInfo>,
    parameter_count: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("weight file is truncated".into()))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    let b = take(bytes, pos, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

impl OcclusionField {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&WEIGHT_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for t in &self.params {
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for t in &self.params {
            for &v in &t.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Writes the binary weights and the JSON sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let side = WeightSidecar {
            format_version: WEIGHT_FORMAT_VERSION,
            config: self.config,
            tensors: self
                .params
                .iter()
                .map(|t| TensorInfo {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
            parameter_count: self.parameter_count(),
        };
        binio::write_json(&binio::sidecar_path(path), &side)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side: WeightSidecar = binio::read_json(&binio::sidecar_path(path))?;
        let bytes = binio::read_bytes(path)?;
        Self::from_bytes(side.config, &bytes, side.tensors.iter().map(|t| t.name.clone()).collect())
            .map_err(|e| match e {
                Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
                other => other,
            })
    }

    fn from_bytes(config: FieldConfig, bytes: &[u8], names: Vec<String>) -> Result<Self> {
        let mut pos = 0;
        if take(bytes, &mut pos, 4)? != MAGIC {
            return Err(Error::Format("not an occlusion-field weight file (bad magic)".into()));
        }
        let version = read_u32(bytes, &mut pos)?;
        if version != WEIGHT_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported weight format version {version}")));
        }
        let n = read_u32(bytes, &mut pos)? as usize;
        if n != names.len() {
            return Err(Error::Format(format!(
                "binary lists {n} tensors, sidecar lists {}",
                names.len()
            )));
        }
        let mut shapes = Vec::with_capacity(n);
        for _ in 0..n {
            let rank = read_u32(bytes, &mut pos)? as usize;
            let dims = (0..rank)
                .map(|_| read_u32(bytes, &mut pos).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            shapes.push(dims);
        }
        let mut params = Vec::with_capacity(n);
        for (name, shape) in names.into_iter().zip(shapes) {
            let len: usize = shape.iter().product();
            let raw = take(bytes, &mut pos, 4 * len)?;
            let data = binio::f32_from_le(raw).into_iter().map(f64::from).collect();
            params.push(Tensor { name, shape, data });
        }
        if pos != bytes.len() {
            return Err(Error::Format("trailing bytes after weight data".into()));
        }
        OcclusionField::from_parts(config, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;
    use crate::scene::SceneConfig;
    use nalgebra::Point3;

    #[test]
    fn round_trip_is_bit_exact() {
        let cube = SceneConfig::confocal_small().hidden_cube;
        let mut f = OcclusionField::new(FieldConfig::single(cube), 1).unwrap();
        // Give the output layer non-zero f32-representable weights.
        for t in f.params_mut() {
            if t.name.starts_with("decoder.out") {
                for (i, v) in t.data.iter_mut().enumerate() {
                    *v = ((i as f64 * 0.37).sin() * 0.5) as f32 as f64;
                }
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.occf");
        f.save(&path).unwrap();
        let g = OcclusionField::load(&path).unwrap();
        assert_eq!(f.params(), g.params());
        let pts: Vec<_> = (0..100)
            .map(|i| Point3::new(0.002 * i as f64 - 0.1, 0.01, 0.2 + 0.003 * i as f64))
            .collect();
        let a = f.predict(None, &pts).unwrap();
        let b = g.predict(None, &pts).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.iter().any(|&v| v != 0.5));
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"OCCF");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let cube = SceneConfig::confocal_small().hidden_cube;
        let f = OcclusionField::new(FieldConfig::single(cube), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.occf");
        f.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(OcclusionField::load(&path), Err(Error::Format(_))));
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(OcclusionField::load(&path), Err(Error::Format(_))));
    }
}
