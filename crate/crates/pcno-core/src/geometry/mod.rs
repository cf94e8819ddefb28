//! Point-cloud geometry processing: per-node measures, quadrature densities
//! and neighbor connectivity derived from mesh topology.
//!
//! Conventions: a cell's measure is distributed equally among its nodes
//! (vertex-centered), neighbors are the nodes sharing at least one cell, and
//! the density is normalized so that sum_i rho_i dOmega_i = 1 over the whole
//! sample, subdomains included.

mod delaunay;

pub use delaunay::tessellate_point_cloud;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    Vertex,
    Cell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DensityMode {
    #[default]
    Uniform,
    PointCloud,
}

/// Ragged cell storage: each cell is a node-index tuple tagged with its own
/// dimension, so mixed line/shell meshes live in one sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellBlock {
    pub dims: Vec<u8>,
    pub offsets: Vec<usize>,
    pub indices: Vec<usize>,
}

impl CellBlock {
    pub fn new() -> Self {
        CellBlock {
            dims: Vec::new(),
            offsets: vec![0],
            indices: Vec::new(),
        }
    }

    pub fn push(&mut self, dim: u8, nodes: &[usize]) {
        self.dims.push(dim);
        self.indices.extend_from_slice(nodes);
        self.offsets.push(self.indices.len());
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn cell(&self, j: usize) -> (&[usize], u8) {
        (
            &self.indices[self.offsets[j]..self.offsets[j + 1]],
            self.dims[j],
        )
    }
}

/// One geometry instance: coordinates, topology, masks and fields.
///
/// Padded rows (mask false) carry zeros in every field array and appear in no
/// cell.
#[derive(Debug, Clone)]
pub struct PointCloudSample {
    /// Flat [n, dim] coordinates.
    pub coords: Vec<f64>,
    pub n_nodes: usize,
    pub dim: usize,
    /// Intrinsic (manifold) dimension d' <= dim.
    pub intrinsic_dim: usize,
    pub cells: CellBlock,
    /// true = real node, false = padding.
    pub node_mask: Vec<bool>,
    /// Flat [n, d_a] input channels.
    pub fields_a: Vec<f64>,
    pub d_a: usize,
    /// Flat [n, d_u] output channels; absent at inference.
    pub fields_u: Option<Vec<f64>>,
    pub d_u: usize,
    pub subdomains: Vec<u32>,
    /// Free-form group tag (mesh family, configuration, ...).
    pub label: String,
}

impl PointCloudSample {
    pub fn n_unmasked(&self) -> usize {
        self.node_mask.iter().filter(|&&m| m).count()
    }

    pub fn n_subdomains(&self) -> usize {
        self.subdomains
            .iter()
            .zip(self.node_mask.iter())
            .filter(|(_, &m)| m)
            .map(|(&s, _)| s as usize + 1)
            .max()
            .unwrap_or(1)
    }

    /// Structural invariants: index ranges, masks, dimension bounds and
    /// zeroed padding.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes;
        if self.coords.len() != n * self.dim
            || self.node_mask.len() != n
            || self.subdomains.len() != n
            || self.fields_a.len() != n * self.d_a
        {
            return Err(Error::InconsistentSample {
                sample: 0,
                reason: "array lengths disagree with n_nodes".into(),
            });
        }
        if let Some(u) = &self.fields_u {
            if u.len() != n * self.d_u {
                return Err(Error::InconsistentSample {
                    sample: 0,
                    reason: "output field length disagrees with n_nodes".into(),
                });
            }
        }
        if self.intrinsic_dim == 0 || self.intrinsic_dim > self.dim {
            return Err(Error::InvalidConfig {
                field: "intrinsic_dim".into(),
                reason: format!("{} not in 1..={}", self.intrinsic_dim, self.dim),
            });
        }
        for j in 0..self.cells.len() {
            let (nodes, cdim) = self.cells.cell(j);
            if cdim as usize > self.intrinsic_dim {
                return Err(Error::InvalidConfig {
                    field: "cells".into(),
                    reason: format!("cell {j} has dimension {cdim} > d' {}", self.intrinsic_dim),
                });
            }
            if nodes.len() < cdim as usize + 1 {
                return Err(Error::InvalidConfig {
                    field: "cells".into(),
                    reason: format!("cell {j} has {} nodes for dimension {cdim}", nodes.len()),
                });
            }
            for &v in nodes {
                if v >= n || !self.node_mask[v] {
                    return Err(Error::BadCellIndex {
                        cell: j,
                        node: v,
                        n_nodes: n,
                    });
                }
            }
        }
        for i in 0..n {
            if !self.node_mask[i] {
                let zero_a = self.fields_a[i * self.d_a..(i + 1) * self.d_a]
                    .iter()
                    .all(|&x| x == 0.0);
                let zero_u = self.fields_u.as_ref().is_none_or(|u| {
                    u[i * self.d_u..(i + 1) * self.d_u].iter().all(|&x| x == 0.0)
                });
                if !zero_a || !zero_u {
                    return Err(Error::InconsistentSample {
                        sample: 0,
                        reason: format!("padded node {i} carries nonzero field values"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Sorted-per-row compressed adjacency.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adjacency {
    pub offsets: Vec<usize>,
    pub indices: Vec<usize>,
}

impl Adjacency {
    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }
}

/// Precomputed per-node quadrature and connectivity.
#[derive(Debug, Clone)]
pub struct GeometryFeatures {
    /// Per-node measure share, zero on padding.
    pub d_omega: Vec<f64>,
    /// Quadrature density, zero on padding. sum_i rho_i dOmega_i = 1.
    pub rho: Vec<f64>,
    pub neighbors: Adjacency,
    /// Measure of each subdomain, |Omega_s| = sum_{i in s} dOmega_i.
    pub domain_measure: Vec<f64>,
    pub density_mode: DensityMode,
}

/// Measure of a cell embedded in R^dim. Simplices go through the Gram
/// determinant; planar polygons (2d cells with > 3 nodes) are
/// fan-triangulated from the lowest-index vertex.
fn cell_measure(coords: &[f64], dim: usize, nodes: &[usize], cell_dim: usize) -> f64 {
    let k = cell_dim;
    if nodes.len() == k + 1 {
        simplex_measure(coords, dim, nodes)
    } else if k == 2 {
        let anchor = nodes.iter().copied().min().unwrap();
        let mut rest: Vec<usize> = nodes.iter().copied().filter(|&v| v != anchor).collect();
        rest.sort_unstable();
        let mut total = 0.0;
        for w in rest.windows(2) {
            total += simplex_measure(coords, dim, &[anchor, w[0], w[1]]);
        }
        total
    } else {
        simplex_measure(coords, dim, &nodes[..k + 1])
    }
}

fn simplex_measure(coords: &[f64], dim: usize, nodes: &[usize]) -> f64 {
    let k = nodes.len() - 1;
    if k == 0 {
        return 0.0;
    }
    // edge matrix J (k x dim), measure = sqrt(det(J J^T)) / k!
    let x0 = &coords[nodes[0] * dim..nodes[0] * dim + dim];
    let mut j = vec![0.0; k * dim];
    for (r, &nd) in nodes[1..].iter().enumerate() {
        let x = &coords[nd * dim..nd * dim + dim];
        for m in 0..dim {
            j[r * dim + m] = x[m] - x0[m];
        }
    }
    let mut gram = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            let mut s = 0.0;
            for m in 0..dim {
                s += j[a * dim + m] * j[b * dim + m];
            }
            gram[a * k + b] = s;
        }
    }
    let det = det_small(&mut gram, k);
    let fact: f64 = (1..=k).map(|x| x as f64).product();
    det.max(0.0).sqrt() / fact
}

fn det_small(m: &mut [f64], k: usize) -> f64 {
    // Gaussian elimination with partial pivoting; k <= 3 in practice
    let mut det = 1.0;
    for col in 0..k {
        let mut piv = col;
        for r in col + 1..k {
            if m[r * k + col].abs() > m[piv * k + col].abs() {
                piv = r;
            }
        }
        if m[piv * k + col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            for c in 0..k {
                m.swap(piv * k + c, col * k + c);
            }
            det = -det;
        }
        det *= m[col * k + col];
        for r in col + 1..k {
            let f = m[r * k + col] / m[col * k + col];
            for c in col..k {
                m[r * k + c] -= f * m[col * k + c];
            }
        }
    }
    det
}

/// Per-node (vertex centering) or per-cell (cell centering) measures.
///
/// Vertex centering distributes each cell's measure equally among its nodes.
/// With mixed-dimension topologies a node takes the accumulation of its
/// highest cell dimension only, so lengths and areas are never added in the
/// same units.
pub fn compute_measures(sample: &PointCloudSample, centering: Centering) -> Result<Vec<f64>> {
    if sample.cells.is_empty() {
        return Err(Error::Mesh("topology is empty".into()));
    }
    let n = sample.n_nodes;
    let mut cell_meas = Vec::with_capacity(sample.cells.len());
    for j in 0..sample.cells.len() {
        let (nodes, cdim) = sample.cells.cell(j);
        let m = cell_measure(&sample.coords, sample.dim, nodes, cdim as usize);
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::DegenerateCell {
                cell: j,
                measure: m,
            });
        }
        cell_meas.push(m);
    }
    if centering == Centering::Cell {
        return Ok(cell_meas);
    }

    // highest cell dimension seen at each node
    let mut home_dim = vec![0u8; n];
    for j in 0..sample.cells.len() {
        let (nodes, cdim) = sample.cells.cell(j);
        for &v in nodes {
            home_dim[v] = home_dim[v].max(cdim);
        }
    }
    let mut d_omega = vec![0.0; n];
    let mut in_any_cell = vec![false; n];
    for j in 0..sample.cells.len() {
        let (nodes, cdim) = sample.cells.cell(j);
        let share = cell_meas[j] / nodes.len() as f64;
        for &v in nodes {
            in_any_cell[v] = true;
            if home_dim[v] == cdim {
                d_omega[v] += share;
            }
        }
    }
    for i in 0..n {
        if sample.node_mask[i] && !in_any_cell[i] {
            return Err(Error::NodeWithoutCell { node: i });
        }
    }
    Ok(d_omega)
}

/// Neighbor lists. Vertex centering: nodes sharing a cell, self excluded,
/// deduplicated and sorted ascending. Cell centering: cells sharing a node.
pub fn compute_connectivity(sample: &PointCloudSample, centering: Centering) -> Result<Adjacency> {
    match centering {
        Centering::Vertex => {
            let n = sample.n_nodes;
            let mut sets: Vec<Vec<usize>> = vec![Vec::new(); n];
            for j in 0..sample.cells.len() {
                let (nodes, _) = sample.cells.cell(j);
                for &a in nodes {
                    for &b in nodes {
                        if a != b {
                            sets[a].push(b);
                        }
                    }
                }
            }
            let mut offsets = Vec::with_capacity(n + 1);
            let mut indices = Vec::new();
            offsets.push(0);
            for (i, s) in sets.iter_mut().enumerate() {
                s.sort_unstable();
                s.dedup();
                if sample.node_mask[i] && s.is_empty() {
                    return Err(Error::IsolatedNode { node: i });
                }
                indices.extend_from_slice(s);
                offsets.push(indices.len());
            }
            Ok(Adjacency { offsets, indices })
        }
        Centering::Cell => {
            let n_cells = sample.cells.len();
            let mut node_cells: Vec<Vec<usize>> = vec![Vec::new(); sample.n_nodes];
            for j in 0..n_cells {
                let (nodes, _) = sample.cells.cell(j);
                for &v in nodes {
                    node_cells[v].push(j);
                }
            }
            let mut sets: Vec<Vec<usize>> = vec![Vec::new(); n_cells];
            for cells in &node_cells {
                for &a in cells {
                    for &b in cells {
                        if a != b {
                            sets[a].push(b);
                        }
                    }
                }
            }
            let mut offsets = vec![0];
            let mut indices = Vec::new();
            for (j, s) in sets.iter_mut().enumerate() {
                s.sort_unstable();
                s.dedup();
                if s.is_empty() && n_cells > 1 {
                    return Err(Error::IsolatedNode { node: j });
                }
                indices.extend_from_slice(s);
                offsets.push(indices.len());
            }
            Ok(Adjacency { offsets, indices })
        }
    }
}

/// Density per node plus subdomain measures. With S subdomains each carries
/// weight 1/S so the global normalization sum rho dOmega = 1 holds.
pub fn compute_density(
    sample: &PointCloudSample,
    d_omega: &[f64],
    mode: DensityMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sample.n_nodes;
    let n_seg = sample.n_subdomains();
    let mut measure = vec![0.0; n_seg];
    let mut counts = vec![0usize; n_seg];
    for i in 0..n {
        if !sample.node_mask[i] {
            continue;
        }
        let s = sample.subdomains[i] as usize;
        measure[s] += d_omega[i];
        counts[s] += 1;
    }
    for (s, (&m, &c)) in measure.iter().zip(counts.iter()).enumerate() {
        if c == 0 {
            return Err(Error::EmptySubdomain { subdomain: s });
        }
        if !(m > 0.0) {
            return Err(Error::ZeroSubdomainMeasure { subdomain: s });
        }
    }
    let sf = n_seg as f64;
    let mut rho = vec![0.0; n];
    for i in 0..n {
        if !sample.node_mask[i] {
            continue;
        }
        let s = sample.subdomains[i] as usize;
        rho[i] = match mode {
            DensityMode::Uniform => 1.0 / (sf * measure[s]),
            DensityMode::PointCloud => {
                if !(d_omega[i] > 0.0) {
                    return Err(Error::BadQuadrature {
                        node: i,
                        rho: 0.0,
                        d_omega: d_omega[i],
                    });
                }
                1.0 / (sf * counts[s] as f64 * d_omega[i])
            }
        };
    }
    Ok((rho, measure))
}

/// Full preprocessing for one sample: measures, connectivity, density.
pub fn build_features(sample: &PointCloudSample, mode: DensityMode) -> Result<GeometryFeatures> {
    let mut d_omega = compute_measures(sample, Centering::Vertex)?;
    for (i, &m) in sample.node_mask.iter().enumerate() {
        if !m {
            d_omega[i] = 0.0;
        }
    }
    let neighbors = compute_connectivity(sample, Centering::Vertex)?;
    let (rho, domain_measure) = compute_density(sample, &d_omega, mode)?;
    Ok(GeometryFeatures {
        d_omega,
        rho,
        neighbors,
        domain_measure,
        density_mode: mode,
    })
}

/// Reorder a sample by `perm`, where `perm[new_index] = old_index`. Cells and
/// subdomain labels follow; useful for permutation-invariance checks.
pub fn permute_sample(sample: &PointCloudSample, perm: &[usize]) -> PointCloudSample {
    let n = sample.n_nodes;
    assert_eq!(perm.len(), n);
    let mut inv = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let d = sample.dim;
    let mut coords = vec![0.0; n * d];
    let mut mask = vec![false; n];
    let mut subs = vec![0u32; n];
    let mut fa = vec![0.0; n * sample.d_a];
    let mut fu = sample.fields_u.as_ref().map(|_| vec![0.0; n * sample.d_u]);
    for new in 0..n {
        let old = perm[new];
        coords[new * d..(new + 1) * d].copy_from_slice(&sample.coords[old * d..(old + 1) * d]);
        mask[new] = sample.node_mask[old];
        subs[new] = sample.subdomains[old];
        fa[new * sample.d_a..(new + 1) * sample.d_a]
            .copy_from_slice(&sample.fields_a[old * sample.d_a..(old + 1) * sample.d_a]);
        if let (Some(dst), Some(src)) = (fu.as_mut(), sample.fields_u.as_ref()) {
            dst[new * sample.d_u..(new + 1) * sample.d_u]
                .copy_from_slice(&src[old * sample.d_u..(old + 1) * sample.d_u]);
        }
    }
    let mut cells = CellBlock::new();
    for j in 0..sample.cells.len() {
        let (nodes, cdim) = sample.cells.cell(j);
        let mut remapped: Vec<usize> = nodes.iter().map(|&v| inv[v]).collect();
        remapped.sort_unstable();
        cells.push(cdim, &remapped);
    }
    PointCloudSample {
        coords,
        n_nodes: n,
        dim: d,
        intrinsic_dim: sample.intrinsic_dim,
        cells,
        node_mask: mask,
        fields_a: fa,
        d_a: sample.d_a,
        fields_u: fu,
        d_u: sample.d_u,
        subdomains: subs,
        label: sample.label.clone(),
    }
}

#[cfg(test)]
pub(crate) mod tests;
