//! Binary model file.
//!
//! ```text
//! "DCCM"  u32 version
//! u32 n_dims, n_dims × u32        encoder widths [d, h1, .., e]
//! per layer (encoder then decoder):
//!   u32 rows, u32 cols, rows·cols × f64 weight, u32 len, len × f64 bias
//! u32 k, u32 e, k·e × f64         centroids (k = 0: none)
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use thiserror::Error;

use super::{ArchitectureSpec, NetworkParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DCCM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("cannot access model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt model file: {0}")]
    CorruptHeader(String),
    #[error("model file version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("layer {layer} is {found:?} but the architecture implies {expected:?}")]
    ShapeInconsistent {
        layer: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_params(net: &NetworkParams) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let dims = net.spec.encoder_dims();
    put_u32(&mut out, dims.len());
    for &d in &dims {
        put_u32(&mut out, d);
    }
    for layer in net.encoder.iter().chain(&net.decoder) {
        let w = net.store.get(layer.weight);
        let b = net.store.get(layer.bias);
        put_u32(&mut out, w.rows());
        put_u32(&mut out, w.cols());
        put_f64s(&mut out, w.values());
        put_u32(&mut out, b.len());
        put_f64s(&mut out, b.values());
    }
    match net.centroids {
        Some(c) => {
            let mu = net.store.get(c.id);
            put_u32(&mut out, mu.rows());
            put_u32(&mut out, mu.cols());
            put_f64s(&mut out, mu.values());
        }
        None => {
            put_u32(&mut out, 0);
            put_u32(&mut out, 0);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelFileError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ModelFileError::CorruptHeader(format!("truncated at byte {}", self.pos))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<usize, ModelFileError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ModelFileError> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| ModelFileError::CorruptHeader("length overflow".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<NetworkParams, ModelFileError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(ModelFileError::CorruptHeader("bad magic".into()));
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(ModelFileError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n_dims = r.u32()?;
    if n_dims < 3 {
        return Err(ModelFileError::CorruptHeader(format!("{n_dims} layer widths")));
    }
    let dims = (0..n_dims).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
    let spec = ArchitectureSpec {
        input_dim: dims[0],
        hidden_dims: dims[1..n_dims - 1].to_vec(),
        embedding_dim: dims[n_dims - 1],
    };
    spec.validate()
        .map_err(|e| ModelFileError::CorruptHeader(e.to_string()))?;

    let expected: Vec<(usize, usize)> = spec
        .encoder_dims()
        .windows(2)
        .chain(spec.decoder_dims().windows(2))
        .map(|w| (w[0], w[1]))
        .collect();
    let mut layers = Vec::with_capacity(expected.len());
    for (layer, &want) in expected.iter().enumerate() {
        let shape = (r.u32()?, r.u32()?);
        if shape != want {
            return Err(ModelFileError::ShapeInconsistent {
                layer,
                expected: want,
                found: shape,
            });
        }
        let w = r.f64s(shape.0 * shape.1)?;
        let bias_len = r.u32()?;
        if bias_len != want.1 {
            return Err(ModelFileError::ShapeInconsistent {
                layer,
                expected: want,
                found: (shape.0, bias_len),
            });
        }
        let b = r.f64s(bias_len)?;
        layers.push((
            Tensor::matrix(shape.0, shape.1, w).expect("shape checked"),
            Tensor::vector(b).expect("width > 0"),
        ));
    }
    let (k, e) = (r.u32()?, r.u32()?);
    let centroids = if k == 0 {
        None
    } else {
        if e != spec.embedding_dim {
            return Err(ModelFileError::ShapeInconsistent {
                layer: expected.len(),
                expected: (k, spec.embedding_dim),
                found: (k, e),
            });
        }
        Some(Tensor::matrix(k, e, r.f64s(k * e)?).expect("k × e"))
    };
    if r.pos != bytes.len() {
        return Err(ModelFileError::CorruptHeader(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    let mut parts = layers.into_iter();
    let mut net = NetworkParams::build(&spec, |_, _| parts.next().expect("one per layer"))
        .map_err(|e| ModelFileError::CorruptHeader(e.to_string()))?;
    if let Some(mu) = centroids {
        net.attach_centroids(mu);
    }
    Ok(net)
}

pub fn save_params(path: &Path, net: &NetworkParams) -> Result<(), ModelFileError> {
    std::fs::write(path, encode_params(net)).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_params(path: &Path) -> Result<NetworkParams, ModelFileError> {
    let bytes = std::fs::read(path).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_params(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> NetworkParams {
        let spec = ArchitectureSpec {
            input_dim: 3,
            hidden_dims: vec![4],
            embedding_dim: 2,
        };
        NetworkParams::init(&spec, 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let mut n = net();
        assert_eq!(decode_params(&encode_params(&n)).unwrap(), n);
        n.attach_centroids(Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 1e-300]]).unwrap());
        assert_eq!(decode_params(&encode_params(&n)).unwrap(), n);
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode_params(&net());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_params(&bad), Err(ModelFileError::CorruptHeader(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_params(&bad),
            Err(ModelFileError::VersionMismatch { found: 9, expected: 1 })
        ));

        assert!(matches!(
            decode_params(&bytes[..bytes.len() - 3]),
            Err(ModelFileError::CorruptHeader(_))
        ));

        // first layer rows field sits after magic, version, n_dims and 3 dims
        let mut bad = bytes.clone();
        bad[24] = 7;
        assert!(matches!(
            decode_params(&bad),
            Err(ModelFileError::ShapeInconsistent { layer: 0, expected: (3, 4), found: (7, 4) })
        ));

        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_params(&long), Err(ModelFileError::CorruptHeader(_))));
    }
}
