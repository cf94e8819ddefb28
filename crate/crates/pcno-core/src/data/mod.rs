//! On-disk dataset contract and batching utilities.

mod batch;
mod container;

pub use batch::{pad_and_batch, Batch};
pub use container::{read_dataset, record_path, write_dataset, DatasetInfo, RecordMeta};

use crate::geometry::{GeometryFeatures, PointCloudSample};
use crate::gradop::GradientEdgeWeights;

/// One stored sample: geometry plus optional precomputed features and
/// gradient weights (present after preprocessing).
#[derive(Debug, Clone)]
pub struct SampleBundle {
    pub sample: PointCloudSample,
    pub features: Option<GeometryFeatures>,
    pub grad_weights: Option<GradientEdgeWeights>,
}

impl SampleBundle {
    pub fn new(sample: PointCloudSample) -> Self {
        SampleBundle {
            sample,
            features: None,
            grad_weights: None,
        }
    }
}

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::DensityMode;

/// Attach quadrature features and gradient weights to every sample. Asserts
/// the normalization sum rho dOmega = 1 per sample and aborts on violation.
pub fn preprocess(
    bundles: &mut [SampleBundle],
    mode: DensityMode,
    d_prime: usize,
    sv_rel_tol: f64,
) -> Result<()> {
    let results: Vec<Result<(crate::geometry::GeometryFeatures, GradientEdgeWeights)>> = bundles
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            let feats = crate::geometry::build_features(&b.sample, mode)?;
            let norm: f64 = feats
                .rho
                .iter()
                .zip(feats.d_omega.iter())
                .map(|(r, d)| r * d)
                .sum();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::Dataset(format!(
                    "sample {i}: quadrature normalization is {norm}, off by {:.3e}",
                    (norm - 1.0).abs()
                )));
            }
            let w = crate::gradop::build_pseudoinverse_weights(
                &b.sample,
                &feats.neighbors,
                d_prime,
                sv_rel_tol,
            )?;
            Ok((feats, w))
        })
        .collect();
    for (b, r) in bundles.iter_mut().zip(results) {
        let (f, w) = r?;
        b.features = Some(f);
        b.grad_weights = Some(w);
    }
    Ok(())
}
