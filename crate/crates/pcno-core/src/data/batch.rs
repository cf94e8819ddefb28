//! Zero-padding and stacking of variable-size samples.

use super::SampleBundle;
use crate::error::{Error, Result};
use crate::geometry::GeometryFeatures;
use crate::gradop::GradientEdgeWeights;
use crate::tensor::GradAdjacency;

/// Stacked zero-padded arrays plus node masks. The gradient-weight adjacency
/// is concatenated with per-sample node offsets so the whole batch can be
/// treated as one disjoint graph.
#[derive(Debug)]
pub struct Batch {
    pub n_max: usize,
    pub batch_size: usize,
    pub d: usize,
    pub d_a: usize,
    pub d_u: usize,
    /// [B * n_max]
    pub masks: Vec<bool>,
    /// [B * n_max * d]
    pub coords: Vec<f64>,
    /// [B * n_max * d_a]
    pub fields_a: Vec<f64>,
    /// [B * n_max * d_u] when every sample carries outputs.
    pub fields_u: Option<Vec<f64>>,
    /// Offset-shifted union of the per-sample gradient adjacencies.
    pub adjacency: Option<GradAdjacency>,
    originals: Vec<SampleBundle>,
}

impl Batch {
    /// Rebuild sample `i` as a padded bundle of `n_max` nodes (padding rows
    /// masked off and zero-filled everywhere).
    pub fn padded_bundle(&self, i: usize) -> SampleBundle {
        let src = &self.originals[i];
        let s = &src.sample;
        let n_max = self.n_max;
        let mut sample = s.clone();
        sample.n_nodes = n_max;
        sample.coords.resize(n_max * s.dim, 0.0);
        sample.node_mask.resize(n_max, false);
        sample.subdomains.resize(n_max, 0);
        sample.fields_a.resize(n_max * s.d_a, 0.0);
        if let Some(u) = sample.fields_u.as_mut() {
            u.resize(n_max * s.d_u, 0.0);
        }
        let features = src.features.as_ref().map(|f| {
            let mut f2 = f.clone();
            f2.d_omega.resize(n_max, 0.0);
            f2.rho.resize(n_max, 0.0);
            let last = *f2.neighbors.offsets.last().unwrap();
            f2.neighbors.offsets.resize(n_max + 1, last);
            f2
        });
        let grad_weights = src.grad_weights.as_ref().map(|w| {
            let mut w2 = w.clone();
            let last = *w2.adjacency.offsets.last().unwrap();
            w2.adjacency.offsets.resize(n_max + 1, last);
            w2.effective_rank.resize(n_max, 0);
            w2
        });
        SampleBundle {
            sample,
            features,
            grad_weights,
        }
    }
}

/// Pad every sample to `max_n` (default: the in-batch maximum) and stack.
pub fn pad_and_batch(bundles: &[SampleBundle], max_n: Option<usize>) -> Result<Batch> {
    if bundles.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = bundles[0].sample.dim;
    let d_a = bundles[0].sample.d_a;
    let d_u = bundles[0].sample.d_u;
    for (i, b) in bundles.iter().enumerate() {
        if b.sample.dim != d || b.sample.d_a != d_a {
            return Err(Error::InconsistentSample {
                sample: i,
                reason: "mixed channel dimensions in one batch".into(),
            });
        }
    }
    let widest = bundles.iter().map(|b| b.sample.n_nodes).max().unwrap();
    let n_max = max_n.unwrap_or(widest);
    if widest > n_max {
        return Err(Error::Dataset(format!(
            "sample with {widest} nodes exceeds max_n = {n_max}"
        )));
    }
    let b_count = bundles.len();
    let mut masks = vec![false; b_count * n_max];
    let mut coords = vec![0.0; b_count * n_max * d];
    let mut fields_a = vec![0.0; b_count * n_max * d_a];
    let all_have_u = bundles.iter().all(|b| b.sample.fields_u.is_some());
    let mut fields_u = if all_have_u {
        Some(vec![0.0; b_count * n_max * d_u])
    } else {
        None
    };

    let all_have_w = bundles.iter().all(|b| b.grad_weights.is_some());
    let mut offsets = vec![0usize];
    let mut neighbors = Vec::new();
    let mut weights = Vec::new();

    for (bi, b) in bundles.iter().enumerate() {
        let s = &b.sample;
        let n = s.n_nodes;
        let base = bi * n_max;
        masks[base..base + n].copy_from_slice(&s.node_mask);
        coords[base * d..(base + n) * d].copy_from_slice(&s.coords);
        fields_a[base * d_a..(base + n) * d_a].copy_from_slice(&s.fields_a);
        if let (Some(dst), Some(src)) = (fields_u.as_mut(), s.fields_u.as_ref()) {
            dst[base * d_u..(base + n) * d_u].copy_from_slice(src);
        }
        if all_have_w {
            let w = b.grad_weights.as_ref().unwrap();
            for i in 0..n_max {
                if i < n {
                    let (lo, hi) = (w.adjacency.offsets[i], w.adjacency.offsets[i + 1]);
                    for e in lo..hi {
                        neighbors.push(w.adjacency.neighbors[e] + base);
                    }
                    weights.extend_from_slice(&w.adjacency.weights[lo * d..hi * d]);
                }
                offsets.push(neighbors.len());
            }
        }
    }

    Ok(Batch {
        n_max,
        batch_size: b_count,
        d,
        d_a,
        d_u,
        masks,
        coords,
        fields_a,
        fields_u,
        adjacency: all_have_w.then_some(GradAdjacency {
            offsets,
            neighbors,
            weights,
            dim: d,
        }),
        originals: bundles.to_vec(),
    })
}

/// Utility for eval paths: pad a features struct alongside its sample.
#[allow(dead_code)]
pub(crate) fn padded_features(f: &GeometryFeatures, n_max: usize) -> GeometryFeatures {
    let mut f2 = f.clone();
    f2.d_omega.resize(n_max, 0.0);
    f2.rho.resize(n_max, 0.0);
    let last = *f2.neighbors.offsets.last().unwrap();
    f2.neighbors.offsets.resize(n_max + 1, last);
    f2
}

#[allow(dead_code)]
pub(crate) fn padded_weights(w: &GradientEdgeWeights, n_max: usize) -> GradientEdgeWeights {
    let mut w2 = w.clone();
    let last = *w2.adjacency.offsets.last().unwrap();
    w2.adjacency.offsets.resize(n_max + 1, last);
    w2.effective_rank.resize(n_max, 0);
    w2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(nodes: &[f64]) -> SampleBundle {
        let mut b = SampleBundle::new(crate::geometry::tests::line_sample(nodes));
        b.sample.fields_u = Some(nodes.iter().map(|x| x + 1.0).collect());
        b.sample.d_u = 1;
        b
    }

    #[test]
    fn equal_sizes_stack_without_padding() {
        let b = pad_and_batch(&[bundle(&[0.0, 0.5, 1.0]), bundle(&[0.0, 0.4, 0.9])], None).unwrap();
        assert_eq!(b.n_max, 3);
        assert!(b.masks.iter().all(|&m| m));
    }

    #[test]
    fn mixed_sizes_pad_to_the_max() {
        let b = pad_and_batch(
            &[bundle(&[0.0, 0.5, 1.0]), bundle(&[0.0, 0.2, 0.5, 0.7, 1.0])],
            None,
        )
        .unwrap();
        assert_eq!(b.n_max, 5);
        let m0: usize = b.masks[0..5].iter().map(|&m| m as usize).sum();
        let m1: usize = b.masks[5..10].iter().map(|&m| m as usize).sum();
        assert_eq!((m0, m1), (3, 5));
        // padded coordinate rows are zero
        assert_eq!(&b.coords[3..5], &[0.0, 0.0]);
    }

    #[test]
    fn oversize_sample_is_rejected() {
        let e = pad_and_batch(&[bundle(&[0.0, 0.5, 1.0])], Some(2));
        assert!(e.is_err());
    }

    #[test]
    fn adjacency_offsets_shift_per_sample() {
        let mk = |nodes: &[f64]| {
            let mut b = bundle(nodes);
            let feats = crate::geometry::build_features(&b.sample, Default::default()).unwrap();
            let w = crate::gradop::build_pseudoinverse_weights(&b.sample, &feats.neighbors, 1, 1e-8)
                .unwrap();
            b.features = Some(feats);
            b.grad_weights = Some(w);
            b
        };
        let b = pad_and_batch(&[mk(&[0.0, 0.5, 1.0]), mk(&[0.0, 1.0])], None).unwrap();
        let adj = b.adjacency.as_ref().unwrap();
        assert_eq!(adj.offsets.len(), 2 * 3 + 1);
        // second sample's node 0 lives at row 3 and points at node 4
        let row3 = &adj.neighbors[adj.offsets[3]..adj.offsets[4]];
        assert_eq!(row3, &[4]);
    }

    #[test]
    fn padded_bundle_round_trip_keeps_real_rows() {
        let src = bundle(&[0.0, 0.5, 1.0]);
        let b = pad_and_batch(&[src.clone(), bundle(&[0.0, 0.2, 0.5, 0.7, 1.0])], None).unwrap();
        let p = b.padded_bundle(0);
        assert_eq!(p.sample.n_nodes, 5);
        assert_eq!(&p.sample.coords[..3], &src.sample.coords[..]);
        assert!(!p.sample.node_mask[3] && !p.sample.node_mask[4]);
        assert_eq!(p.sample.fields_a.len(), 5);
    }
}
