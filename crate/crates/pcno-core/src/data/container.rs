//! Directory container: one JSON manifest plus per-sample binary records.
//!
//! Records are little-endian; every array is prefixed by a dtype code, rank
//! and 64-bit extents. The manifest carries a sha256 checksum per record and
//! the reader rejects mismatches.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SampleBundle;
use crate::error::{Error, Result};
use crate::geometry::{Adjacency, CellBlock, DensityMode, GeometryFeatures, PointCloudSample};
use crate::gradop::GradientEdgeWeights;
use crate::tensor::GradAdjacency;

const FORMAT: &str = "pcno-dataset";
const VERSION: u32 = 1;
const RECORD_VERSION: u64 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordMeta {
    pub file: String,
    pub sha256: String,
    pub n_nodes: usize,
    pub label: String,
}

/// Manifest-level description of a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub format: String,
    pub version: u32,
    pub d: usize,
    pub d_prime: usize,
    pub d_a: usize,
    pub d_u: usize,
    pub channel_names_a: Vec<String>,
    pub channel_names_u: Vec<String>,
    pub units_a: Vec<String>,
    pub units_u: Vec<String>,
    pub density_mode: Option<DensityMode>,
    pub sample_count: usize,
    pub records: Vec<RecordMeta>,
}

impl DatasetInfo {
    pub fn new(d: usize, d_prime: usize, d_a: usize, d_u: usize) -> Self {
        DatasetInfo {
            format: FORMAT.into(),
            version: VERSION,
            d,
            d_prime,
            d_a,
            d_u,
            channel_names_a: (0..d_a).map(|i| format!("a{i}")).collect(),
            channel_names_u: (0..d_u).map(|i| format!("u{i}")).collect(),
            units_a: vec![String::new(); d_a],
            units_u: vec![String::new(); d_u],
            density_mode: None,
            sample_count: 0,
            records: Vec::new(),
        }
    }
}

// -- record codec -----------------------------------------------------------

const DT_F64: u64 = 0;
const DT_U64: u64 = 1;
const DT_U8: u64 = 2;

struct Enc {
    buf: Vec<u8>,
}

impl Enc {
    fn new() -> Self {
        Enc { buf: Vec::new() }
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64_array(&mut self, shape: &[usize], data: &[f64]) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.u64(DT_F64);
        self.u64(shape.len() as u64);
        for &e in shape {
            self.u64(e as u64);
        }
        for &v in data {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn u64_array(&mut self, data: &[u64]) {
        self.u64(DT_U64);
        self.u64(1);
        self.u64(data.len() as u64);
        for &v in data {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn u8_array(&mut self, data: &[u8]) {
        self.u64(DT_U8);
        self.u64(1);
        self.u64(data.len() as u64);
        self.buf.extend_from_slice(data);
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
    file: String,
}

impl<'a> Dec<'a> {
    fn u64(&mut self) -> Result<u64> {
        if self.pos + 8 > self.buf.len() {
            return Err(Error::Dataset(format!("{}: truncated record", self.file)));
        }
        let v = u64::from_le_bytes(self.buf[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        Ok(v)
    }

    fn array_header(&mut self, want: u64) -> Result<Vec<usize>> {
        let dt = self.u64()?;
        if dt != want {
            return Err(Error::Dataset(format!(
                "{}: dtype code {dt}, expected {want}",
                self.file
            )));
        }
        let rank = self.u64()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        Ok(shape)
    }

    fn f64_array(&mut self) -> Result<(Vec<usize>, Vec<f64>)> {
        let shape = self.array_header(DT_F64)?;
        let n: usize = shape.iter().product();
        if self.pos + 8 * n > self.buf.len() {
            return Err(Error::Dataset(format!("{}: truncated record", self.file)));
        }
        let data = self.buf[self.pos..self.pos + 8 * n]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        self.pos += 8 * n;
        Ok((shape, data))
    }

    fn u64_array(&mut self) -> Result<Vec<u64>> {
        let shape = self.array_header(DT_U64)?;
        let n: usize = shape.iter().product();
        if self.pos + 8 * n > self.buf.len() {
            return Err(Error::Dataset(format!("{}: truncated record", self.file)));
        }
        let data = self.buf[self.pos..self.pos + 8 * n]
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        self.pos += 8 * n;
        Ok(data)
    }

    fn u8_array(&mut self) -> Result<Vec<u8>> {
        let shape = self.array_header(DT_U8)?;
        let n: usize = shape.iter().product();
        if self.pos + n > self.buf.len() {
            return Err(Error::Dataset(format!("{}: truncated record", self.file)));
        }
        let data = self.buf[self.pos..self.pos + n].to_vec();
        self.pos += n;
        Ok(data)
    }
}

fn encode_record(b: &SampleBundle) -> Vec<u8> {
    let s = &b.sample;
    let mut e = Enc::new();
    e.u64(RECORD_VERSION);
    e.f64_array(&[s.n_nodes, s.dim], &s.coords);
    e.u8_array(&s.node_mask.iter().map(|&m| m as u8).collect::<Vec<u8>>());
    e.u64_array(&s.subdomains.iter().map(|&x| x as u64).collect::<Vec<u64>>());
    e.u64_array(&s.cells.dims.iter().map(|&x| x as u64).collect::<Vec<u64>>());
    e.u64_array(&s.cells.offsets.iter().map(|&x| x as u64).collect::<Vec<u64>>());
    e.u64_array(&s.cells.indices.iter().map(|&x| x as u64).collect::<Vec<u64>>());
    e.f64_array(&[s.n_nodes, s.d_a], &s.fields_a);
    match &s.fields_u {
        Some(u) => {
            e.u8_array(&[1]);
            e.f64_array(&[s.n_nodes, s.d_u], u);
        }
        None => e.u8_array(&[0]),
    }
    match &b.features {
        Some(f) => {
            e.u8_array(&[1]);
            e.f64_array(&[s.n_nodes], &f.d_omega);
            e.f64_array(&[s.n_nodes], &f.rho);
            e.f64_array(&[f.domain_measure.len()], &f.domain_measure);
            e.u64_array(&f.neighbors.offsets.iter().map(|&x| x as u64).collect::<Vec<u64>>());
            e.u64_array(&f.neighbors.indices.iter().map(|&x| x as u64).collect::<Vec<u64>>());
        }
        None => e.u8_array(&[0]),
    }
    match &b.grad_weights {
        Some(w) => {
            e.u8_array(&[1]);
            e.u64_array(&w.adjacency.offsets.iter().map(|&x| x as u64).collect::<Vec<u64>>());
            e.u64_array(&w.adjacency.neighbors.iter().map(|&x| x as u64).collect::<Vec<u64>>());
            e.f64_array(
                &[w.adjacency.neighbors.len(), w.adjacency.dim],
                &w.adjacency.weights,
            );
            e.u64_array(&w.effective_rank.iter().map(|&x| x as u64).collect::<Vec<u64>>());
            e.u64_array(&w.degenerate_nodes.iter().map(|&x| x as u64).collect::<Vec<u64>>());
        }
        None => e.u8_array(&[0]),
    }
    let label = s.label.as_bytes();
    e.u8_array(label);
    e.buf
}

fn decode_record(
    bytes: &[u8],
    file: &str,
    info: &DatasetInfo,
    density_mode: DensityMode,
) -> Result<SampleBundle> {
    let mut d = Dec {
        buf: bytes,
        pos: 0,
        file: file.to_string(),
    };
    let ver = d.u64()?;
    if ver != RECORD_VERSION {
        return Err(Error::VersionMismatch {
            found: ver as u32,
            supported: RECORD_VERSION as u32,
        });
    }
    let (cshape, coords) = d.f64_array()?;
    let (n, dim) = (cshape[0], cshape[1]);
    let mask: Vec<bool> = d.u8_array()?.into_iter().map(|x| x != 0).collect();
    let subdomains: Vec<u32> = d.u64_array()?.into_iter().map(|x| x as u32).collect();
    let dims: Vec<u8> = d.u64_array()?.into_iter().map(|x| x as u8).collect();
    let offsets: Vec<usize> = d.u64_array()?.into_iter().map(|x| x as usize).collect();
    let indices: Vec<usize> = d.u64_array()?.into_iter().map(|x| x as usize).collect();
    let (ashape, fields_a) = d.f64_array()?;
    let d_a = ashape[1];
    let has_u = d.u8_array()?[0] != 0;
    let (fields_u, d_u) = if has_u {
        let (ushape, u) = d.f64_array()?;
        (Some(u), ushape[1])
    } else {
        (None, info.d_u)
    };
    let has_features = d.u8_array()?[0] != 0;
    let features = if has_features {
        let (_, d_omega) = d.f64_array()?;
        let (_, rho) = d.f64_array()?;
        let (_, domain_measure) = d.f64_array()?;
        let noff: Vec<usize> = d.u64_array()?.into_iter().map(|x| x as usize).collect();
        let nidx: Vec<usize> = d.u64_array()?.into_iter().map(|x| x as usize).collect();
        Some(GeometryFeatures {
            d_omega,
            rho,
            neighbors: Adjacency {
                offsets: noff,
                indices: nidx,
            },
            domain_measure,
            density_mode,
        })
    } else {
        None
    };
    let has_weights = d.u8_array()?[0] != 0;
    let grad_weights = if has_weights {
        let goff: Vec<usize> = d.u64_array()?.into_iter().map(|x| x as usize).collect();
        let gnbr: Vec<usize> = d.u64_array()?.into_iter().map(|x| x as usize).collect();
        let (wshape, weights) = d.f64_array()?;
        let eff: Vec<u32> = d.u64_array()?.into_iter().map(|x| x as u32).collect();
        let degen: Vec<usize> = d.u64_array()?.into_iter().map(|x| x as usize).collect();
        Some(GradientEdgeWeights {
            adjacency: GradAdjacency {
                offsets: goff,
                neighbors: gnbr,
                weights,
                dim: wshape[1],
            },
            effective_rank: eff,
            degenerate_nodes: degen,
        })
    } else {
        None
    };
    let label = String::from_utf8(d.u8_array()?)
        .map_err(|_| Error::Dataset(format!("{file}: label is not utf-8")))?;

    Ok(SampleBundle {
        sample: PointCloudSample {
            coords,
            n_nodes: n,
            dim,
            intrinsic_dim: info.d_prime,
            cells: CellBlock {
                dims,
                offsets,
                indices,
            },
            node_mask: mask,
            fields_a,
            d_a,
            fields_u,
            d_u,
            subdomains,
            label,
        },
        features,
        grad_weights,
    })
}

/// Write a dataset directory: `manifest.json` + `samples/sample_NNNNNN.bin`.
/// Deterministic byte-for-byte given the same inputs.
pub fn write_dataset(bundles: &[SampleBundle], info: &DatasetInfo, path: &Path) -> Result<DatasetInfo> {
    if bundles.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (i, b) in bundles.iter().enumerate() {
        let s = &b.sample;
        if s.dim != info.d || s.d_a != info.d_a {
            return Err(Error::InconsistentSample {
                sample: i,
                reason: format!(
                    "sample has d = {}, d_a = {}; manifest says d = {}, d_a = {}",
                    s.dim, s.d_a, info.d, info.d_a
                ),
            });
        }
        if let Some(_u) = &s.fields_u {
            if s.d_u != info.d_u {
                return Err(Error::InconsistentSample {
                    sample: i,
                    reason: format!("sample d_u = {} vs manifest {}", s.d_u, info.d_u),
                });
            }
        }
    }
    fs::create_dir_all(path.join("samples"))?;
    let mut out = info.clone();
    out.sample_count = bundles.len();
    out.records = Vec::with_capacity(bundles.len());
    for (i, b) in bundles.iter().enumerate() {
        let bytes = encode_record(b);
        let digest = hex::encode(Sha256::digest(&bytes));
        let file = format!("samples/sample_{i:06}.bin");
        fs::write(path.join(&file), &bytes)?;
        out.records.push(RecordMeta {
            file,
            sha256: digest,
            n_nodes: b.sample.n_nodes,
            label: b.sample.label.clone(),
        });
    }
    let manifest = serde_json::to_vec_pretty(&out)?;
    fs::write(path.join("manifest.json"), manifest)?;
    Ok(out)
}

/// Read the manifest and materialize the requested samples only (all when
/// `subset` is None). Checksums are verified per record.
pub fn read_dataset(path: &Path, subset: Option<&[usize]>) -> Result<(DatasetInfo, Vec<SampleBundle>)> {
    let manifest_path = path.join("manifest.json");
    let info: DatasetInfo = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    if info.format != FORMAT {
        return Err(Error::Dataset(format!(
            "{} is not a {FORMAT} manifest",
            manifest_path.display()
        )));
    }
    if info.version != VERSION {
        return Err(Error::VersionMismatch {
            found: info.version,
            supported: VERSION,
        });
    }
    let density_mode = info.density_mode.unwrap_or_default();
    let indices: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..info.records.len()).collect(),
    };
    let mut bundles = Vec::with_capacity(indices.len());
    for &i in &indices {
        let meta = info.records.get(i).ok_or_else(|| {
            Error::Dataset(format!("record {i} out of range ({})", info.records.len()))
        })?;
        let bytes = fs::read(path.join(&meta.file))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != meta.sha256 {
            return Err(Error::ChecksumMismatch {
                index: i,
                file: meta.file.clone(),
            });
        }
        bundles.push(decode_record(&bytes, &meta.file, &info, density_mode)?);
    }
    Ok((info, bundles))
}

/// Path of a record inside a container (for tooling and tests).
pub fn record_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("samples/sample_{index:06}.bin"))
}
