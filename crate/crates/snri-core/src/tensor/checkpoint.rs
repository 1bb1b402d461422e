//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian, documented in the repo README):
//!   magic   8 bytes  "SNRICKP1"
//!   config_hash      u64 (FNV-1a of the config block bytes)
//!   config_len       u32, followed by that many UTF-8 bytes (JSON)
//!   n_params         u32
//!   per parameter, sorted by name:
//!     name_len u32 + UTF-8 bytes
//!     ndim u32, dims u64 x ndim
//!     data f64 x numel
//!   adam_present     u8 (0 or 1)
//!   if present: step u64, lr/beta1/beta2/eps f64,
//!     then per parameter in the same order: m f64 x numel, v f64 x numel

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AdamHyper, AdamState, ParamSet, Tensor, TensorError};

const MAGIC: &[u8; 8] = b"SNRICKP1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub adam: Option<AdamState>,
    /// Model/run configuration serialized as JSON alongside the weights.
    pub config_json: String,
}

/// FNV-1a over arbitrary bytes; used for config hashes and cache keys.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), TensorError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&fnv1a64(ckpt.config_json.as_bytes()).to_le_bytes())?;
    w.write_all(&(ckpt.config_json.len() as u32).to_le_bytes())?;
    w.write_all(ckpt.config_json.as_bytes())?;
    w.write_all(&(ckpt.params.len() as u32).to_le_bytes())?;
    for (name, t) in ckpt.params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    match &ckpt.adam {
        None => w.write_all(&[0u8])?,
        Some(st) => {
            w.write_all(&[1u8])?;
            w.write_all(&st.step.to_le_bytes())?;
            for v in [st.hyper.lr, st.hyper.beta1, st.hyper.beta2, st.hyper.eps] {
                w.write_all(&v.to_le_bytes())?;
            }
            for (name, t) in ckpt.params.iter() {
                let m = st
                    .m
                    .get(name)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape()));
                let v = st
                    .v
                    .get(name)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape()));
                for x in m.data() {
                    w.write_all(&x.to_le_bytes())?;
                }
                for x in v.data() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, TensorError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, TensorError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64, TensorError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_f64_vec(r: &mut impl Read, n: usize) -> Result<Vec<f64>, TensorError> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(read_f64(r)?);
    }
    Ok(out)
}

fn read_string(r: &mut impl Read) -> Result<String, TensorError> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| bad("invalid UTF-8 in checkpoint"))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TensorError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!(
            "bad magic, not a checkpoint file: {}",
            path.display()
        )));
    }
    let stored_hash = read_u64(&mut r)?;
    let config_json = read_string(&mut r)?;
    if fnv1a64(config_json.as_bytes()) != stored_hash {
        return Err(bad("config hash mismatch, checkpoint is corrupt"));
    }
    let n_params = read_u32(&mut r)? as usize;
    let mut params = ParamSet::new();
    let mut order = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = read_string(&mut r)?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = read_f64_vec(&mut r, numel)?;
        params.insert(
            name.clone(),
            Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?,
        );
        order.push(name);
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let adam = if flag[0] == 1 {
        let step = read_u64(&mut r)?;
        let hyper = AdamHyper {
            lr: read_f64(&mut r)?,
            beta1: read_f64(&mut r)?,
            beta2: read_f64(&mut r)?,
            eps: read_f64(&mut r)?,
        };
        let mut st = AdamState::new(hyper);
        st.step = step;
        for name in &order {
            let shape = params.require(name)?.shape().to_vec();
            let numel: usize = shape.iter().product();
            let m = read_f64_vec(&mut r, numel)?;
            let v = read_f64_vec(&mut r, numel)?;
            st.m.insert(
                name.clone(),
                Tensor::new(shape.clone(), m).map_err(|e| bad(e.to_string()))?,
            );
            st.v.insert(
                name.clone(),
                Tensor::new(shape, v).map_err(|e| bad(e.to_string()))?,
            );
        }
        Some(st)
    } else {
        None
    };
    Ok(Checkpoint {
        params,
        adam,
        config_json,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_with_adam_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let mut params = ParamSet::new();
        params.insert("b.mat", Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        params.insert("a.vec", Tensor::vector(vec![-0.5, 0.25]));
        let mut adam = AdamState::new(AdamHyper::default());
        adam.step = 17;
        adam.m.insert("a.vec".into(), Tensor::vector(vec![0.1, 0.2]));

        let ckpt = Checkpoint {
            params: params.clone(),
            adam: Some(adam),
            config_json: r#"{"d":32}"#.to_string(),
        };
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.params, params);
        assert_eq!(back.config_json, ckpt.config_json);
        let st = back.adam.unwrap();
        assert_eq!(st.step, 17);
        assert_eq!(st.m.get("a.vec").unwrap().data(), &[0.1, 0.2]);
        // absent moments round-trip as zeros
        assert_eq!(st.m.get("b.mat").unwrap().data(), &[0.0; 6]);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
