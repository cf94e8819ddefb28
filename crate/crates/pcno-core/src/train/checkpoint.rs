//! Single-file checkpoint: versioned JSON header (format tag, config echo,
//! normalization stats, tensor manifest) followed by little-endian f64
//! parameter blobs in manifest order. Complex tensors serialize as
//! interleaved (re, im) pairs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, NormStats};
use crate::tensor::{Buffer, DType, Tensor};

const MAGIC: &[u8; 8] = b"PCNOCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    model: ModelConfig,
    norm: NormStats,
    /// Free-form echo of the run configuration that produced this file.
    config_echo: serde_json::Value,
    manifest: Vec<TensorMeta>,
}

pub fn save(params: &ModelParams, config_echo: serde_json::Value, path: &Path) -> Result<()> {
    let named = params.named_tensors();
    let manifest: Vec<TensorMeta> = named
        .iter()
        .map(|(name, t)| TensorMeta {
            name: name.clone(),
            dtype: match t.dtype() {
                DType::Real64 => "f64".into(),
                DType::Real32 => "f32".into(),
                DType::Complex128 => "c128".into(),
            },
            shape: t.shape().to_vec(),
        })
        .collect();
    let header = Header {
        format: "pcno-checkpoint".into(),
        version: VERSION,
        model: params.config.clone(),
        norm: params.norm.clone(),
        config_echo,
        manifest,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, t) in named {
        for v in t.to_real_vec() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ModelParams, serde_json::Value)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Dataset(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)?;
    let hlen = u64::from_le_bytes(len8) as usize;
    let mut hbytes = vec![0u8; hlen];
    r.read_exact(&mut hbytes)?;
    let header: Header = serde_json::from_slice(&hbytes)?;
    if header.version != VERSION {
        return Err(Error::VersionMismatch {
            found: header.version,
            supported: VERSION,
        });
    }

    // rebuild a params skeleton from the stored config, then overwrite every
    // tensor from the blobs
    let mut params = ModelParams::init(header.model.clone(), 0)?;
    params.norm = header.norm.clone();
    {
        let mut named = params.named_tensors_mut();
        if named.len() != header.manifest.len() {
            return Err(Error::Dataset(format!(
                "manifest has {} tensors, model expects {}",
                header.manifest.len(),
                named.len()
            )));
        }
        for ((name, slot), meta) in named.iter_mut().zip(header.manifest.iter()) {
            if *name != meta.name || slot.shape() != meta.shape.as_slice() {
                return Err(Error::Dataset(format!(
                    "manifest entry {} (shape {:?}) does not match model tensor {} (shape {:?})",
                    meta.name,
                    meta.shape,
                    name,
                    slot.shape()
                )));
            }
            let dof = slot.real_dof();
            let mut raw = vec![0u8; dof * 8];
            r.read_exact(&mut raw)?;
            let vals: Vec<f64> = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let t = match slot.dtype() {
                DType::Complex128 => {
                    let z: Vec<Complex64> = vals
                        .chunks_exact(2)
                        .map(|p| Complex64::new(p[0], p[1]))
                        .collect();
                    Tensor::new(meta.shape.clone(), DType::Complex128, Buffer::Complex(z))?
                }
                dt => Tensor::new(meta.shape.clone(), dt, Buffer::Real(vals))?,
            };
            **slot = Arc::new(t);
        }
    }
    Ok((params, header.config_echo))
}
