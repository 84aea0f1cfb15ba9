//! Checkpoint archives.
//!
//! One archive per network: the bytes `PFAC`, a little-endian u32 format
//! version, a little-endian u64 header length, a JSON header (metadata plus
//! a tensor directory with name/dtype/shape/offset), and the raw
//! little-endian tensor payload. A sidecar `<file>.json` mirrors the header
//! for language-neutral inspection.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::param::HasParams;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"PFAC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct CkptMeta {
    /// Network kind: generator | discriminator | age_estimator | feature_net.
    pub kind: String,
    pub n_groups: usize,
    pub image_size: usize,
    pub iteration: u64,
    /// Training mode flag (pfa_end_to_end | pfa_independent | cgan_single).
    pub mode: String,
    /// aging | rejuvenation.
    pub direction: String,
    pub seed: u64,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: CkptMeta,
    tensors: Vec<TensorEntry>,
}

/// Serialize every tensor of `net` (weights and buffers) plus metadata.
pub fn save<S: Scalar, N: HasParams<S>>(path: &Path, meta: &CkptMeta, net: &N) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    net.visit("", &mut |p| {
        let offset = payload.len();
        for &v in p.value.iter() {
            v.write_le(&mut payload);
        }
        entries.push(TensorEntry {
            name: p.name.clone(),
            dtype: S::DTYPE.to_string(),
            shape: p.value.shape().to_vec(),
            offset,
            len: p.value.len(),
        });
    });
    let header = Header {
        meta: meta.clone(),
        tensors: entries,
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;

    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(MAGIC)
        .and_then(|_| file.write_all(&VERSION.to_le_bytes()))
        .and_then(|_| file.write_all(&(header_json.len() as u64).to_le_bytes()))
        .and_then(|_| file.write_all(&header_json))
        .and_then(|_| file.write_all(&payload))
        .map_err(|e| Error::io(path.display().to_string(), e))?;

    let sidecar = path.with_extension("ckpt.json");
    let pretty = serde_json::to_string_pretty(&header)
        .map_err(|e| Error::Checkpoint(format!("sidecar: {e}")))?;
    std::fs::write(&sidecar, pretty)
        .map_err(|e| Error::io(sidecar.display().to_string(), e))?;
    Ok(())
}

fn read_header(bytes: &[u8], path: &Path) -> Result<(Header, usize)> {
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint archive",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 16 + hlen {
        return Err(Error::Checkpoint("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + hlen])
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    Ok((header, 16 + hlen))
}

/// Read only the metadata.
pub fn read_meta(path: &Path) -> Result<CkptMeta> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(read_header(&bytes, path)?.0.meta)
}

/// Load an archive into an existing network of matching structure. Tensors
/// are matched by name and shape; missing or extra tensors are errors.
pub fn load_into<S: Scalar, N: HasParams<S>>(path: &Path, net: &mut N) -> Result<CkptMeta> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let (header, payload_start) = read_header(&bytes, path)?;
    let payload = &bytes[payload_start..];

    let mut by_name: BTreeMap<&str, &TensorEntry> = BTreeMap::new();
    for t in &header.tensors {
        by_name.insert(&t.name, t);
    }

    let mut problems: Vec<String> = Vec::new();
    let mut used = 0usize;
    net.visit_mut("", &mut |mut p| {
        let Some(entry) = by_name.get(p.name.as_str()) else {
            problems.push(format!("tensor {} missing from archive", p.name));
            return;
        };
        used += 1;
        if entry.shape != p.value.shape() {
            problems.push(format!(
                "tensor {}: archive shape {:?} vs network shape {:?}",
                p.name,
                entry.shape,
                p.value.shape()
            ));
            return;
        }
        let esize = match entry.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => {
                problems.push(format!("tensor {}: unknown dtype {other}", p.name));
                return;
            }
        };
        let start = entry.offset;
        let end = start + entry.len * esize;
        if end > payload.len() {
            problems.push(format!("tensor {} overruns the payload", p.name));
            return;
        }
        for (i, v) in p.value.iter_mut().enumerate() {
            let chunk = &payload[start + i * esize..];
            *v = match entry.dtype.as_str() {
                "f32" => S::from_f64(f32::read_le(chunk) as f64),
                _ => S::from_f64(f64::read_le(chunk)),
            };
        }
    });
    if used != header.tensors.len() {
        problems.push(format!(
            "archive has {} tensors but the network consumed {used}",
            header.tensors.len()
        ));
    }
    if !problems.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{}: {}",
            path.display(),
            problems.join("; ")
        )));
    }
    Ok(header.meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::estimator::AgeEstimator;
    use ndarray::Array4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("age.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut est = AgeEstimator::<f32>::new(&mut rng, 64, 4).unwrap();
        let x = Array4::from_shape_fn((2, 3, 64, 64), |(b, c, i, j)| {
            ((b + c + i + j) as f32 * 0.17).sin() * 0.5
        });
        let (before, _, _) = est.estimate(&x).unwrap();

        let meta = CkptMeta {
            kind: "age_estimator".into(),
            n_groups: 4,
            image_size: 64,
            ..Default::default()
        };
        save(&path, &meta, &est).unwrap();
        assert!(path.with_extension("ckpt.json").exists());

        let mut rng2 = ChaCha8Rng::seed_from_u64(999);
        let mut reloaded = AgeEstimator::<f32>::new(&mut rng2, 64, 4).unwrap();
        let got = load_into(&path, &mut reloaded).unwrap();
        assert_eq!(got.kind, "age_estimator");
        let (after, _, _) = reloaded.estimate(&x).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn shape_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("age.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let est = AgeEstimator::<f32>::new(&mut rng, 64, 4).unwrap();
        save(&path, &CkptMeta::default(), &est).unwrap();
        let mut other = AgeEstimator::<f32>::new(&mut rng, 64, 3).unwrap();
        assert!(load_into(&path, &mut other).is_err());
    }

    #[test]
    fn rejects_non_archives() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(read_meta(&path).is_err());
    }
}
