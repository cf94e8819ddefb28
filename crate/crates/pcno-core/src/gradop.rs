//! Least-squares differential operator on point clouds.
//!
//! Per node, the rows (x_j - x_i) over its neighbors form A(x); the rank-d'
//! truncated SVD pseudoinverse A(x)^+ is computed once, and its columns are
//! stored on the edges. Applying the operator is then a single message pass,
//! differentiable on the tape with the transpose pass as backward. On
//! manifolds the truncation keeps the reconstructed gradient in the tangent
//! space, since A(x) n(x) = 0 for any local normal n.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{Adjacency, PointCloudSample};
use crate::tensor::{GradAdjacency, Tape, Var};

/// Edge weight vectors in compressed adjacency layout plus per-node rank
/// diagnostics.
#[derive(Debug, Clone)]
pub struct GradientEdgeWeights {
    pub adjacency: GradAdjacency,
    /// Rank actually used at each node after the singular-value cut.
    pub effective_rank: Vec<u32>,
    /// Nodes whose local geometry was rank-deficient (effective rank < d').
    pub degenerate_nodes: Vec<usize>,
}

impl GradientEdgeWeights {
    pub fn shared(self) -> Arc<GradAdjacency> {
        Arc::new(self.adjacency)
    }
}

/// Build the pseudoinverse edge weights for every unmasked node.
///
/// `sv_rel_tol` drops singular values below `tol * sigma_max` before
/// inversion; nodes ending below rank d' are recorded as degenerate and kept
/// at their reduced rank.
pub fn build_pseudoinverse_weights(
    sample: &PointCloudSample,
    neighbors: &Adjacency,
    intrinsic_dim: usize,
    sv_rel_tol: f64,
) -> Result<GradientEdgeWeights> {
    if !(sv_rel_tol > 0.0 && sv_rel_tol < 1.0) {
        return Err(Error::InvalidConfig {
            field: "sv_rel_tol".into(),
            reason: format!("{sv_rel_tol} not in (0, 1)"),
        });
    }
    let n = sample.n_nodes;
    let d = sample.dim;
    let mut weights = vec![0.0; neighbors.indices.len() * d];
    let mut effective_rank = vec![0u32; n];
    let mut degenerate = Vec::new();

    for i in 0..n {
        if !sample.node_mask[i] {
            continue;
        }
        let nbrs = neighbors.row(i);
        let m = nbrs.len();
        if m < intrinsic_dim {
            return Err(Error::TooFewNeighbors {
                node: i,
                got: m,
                need: intrinsic_dim,
            });
        }
        let xi = &sample.coords[i * d..(i + 1) * d];
        let mut a = DMatrix::<f64>::zeros(m, d);
        for (r, &j) in nbrs.iter().enumerate() {
            let xj = &sample.coords[j * d..(j + 1) * d];
            for c in 0..d {
                a[(r, c)] = xj[c] - xi[c];
            }
        }
        let svd = a.svd(true, true);
        let u = svd.u.as_ref().expect("svd with u");
        let vt = svd.v_t.as_ref().expect("svd with v_t");
        let sigma = &svd.singular_values;
        let sigma_max = sigma.iter().cloned().fold(0.0f64, f64::max);
        let keep = sigma
            .iter()
            .take(intrinsic_dim)
            .filter(|&&s| s > sv_rel_tol * sigma_max && s > 0.0)
            .count();
        effective_rank[i] = keep as u32;
        if keep < intrinsic_dim {
            degenerate.push(i);
        }
        // A^+ = V Sigma^-1 U^T restricted to the kept triplets; column r of
        // A^+ is the weight vector of neighbor r
        let base = neighbors.offsets[i];
        for (r, _) in nbrs.iter().enumerate() {
            let w = &mut weights[(base + r) * d..(base + r + 1) * d];
            for (c, wc) in w.iter_mut().enumerate() {
                let mut s = 0.0;
                for t in 0..keep {
                    s += vt[(t, c)] * u[(r, t)] / sigma[t];
                }
                *wc = s;
            }
        }
    }

    Ok(GradientEdgeWeights {
        adjacency: GradAdjacency {
            offsets: neighbors.offsets.clone(),
            neighbors: neighbors.indices.clone(),
            weights,
            dim: d,
        },
        effective_rank,
        degenerate_nodes: degenerate,
    })
}

/// Tape application: [n, c] field -> [n, d * c] per-channel gradient.
pub fn apply_gradient(tape: &mut Tape, weights: &Arc<GradAdjacency>, f: Var) -> Result<Var> {
    tape.edge_gradient(f, weights.clone())
}

/// Componentwise x / (1 + |x|); bounds gradient spikes at discontinuities
/// while keeping their location and sign.
pub fn softsign_smooth(tape: &mut Tape, g: Var) -> Result<Var> {
    tape.softsign(g)
}

/// Plain (non-tape) evaluation, used by tests and oracles.
pub fn apply_gradient_values(adj: &GradAdjacency, f: &[f64], c: usize) -> Vec<f64> {
    let mut tape = Tape::new();
    let fv = tape
        .leaf(crate::tensor::Tensor::from_vec(vec![adj.n_nodes(), c], f.to_vec()).unwrap());
    let g = tape.edge_gradient(fv, Arc::new(adj.clone())).unwrap();
    tape.value(g).real().to_vec()
}
