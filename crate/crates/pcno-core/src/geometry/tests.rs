//! Geometry oracles: hand-evaluated measure shares, connectivity counts,
//! density normalization and permutation equivariance.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

pub(crate) fn line_sample(nodes: &[f64]) -> PointCloudSample {
    let n = nodes.len();
    let mut cells = CellBlock::new();
    for i in 0..n - 1 {
        cells.push(1, &[i, i + 1]);
    }
    PointCloudSample {
        coords: nodes.to_vec(),
        n_nodes: n,
        dim: 1,
        intrinsic_dim: 1,
        cells,
        node_mask: vec![true; n],
        fields_a: vec![0.0; n],
        d_a: 1,
        fields_u: None,
        d_u: 0,
        subdomains: vec![0; n],
        label: String::new(),
    }
}

#[test]
fn half_segment_shares_on_a_line() {
    let s = line_sample(&[0.0, 0.5, 1.0]);
    let d = compute_measures(&s, Centering::Vertex).unwrap();
    assert_eq!(d, vec![0.25, 0.5, 0.25]);
}

#[test]
fn triangle_distributes_area_equally() {
    // right triangle with legs 2 and 3, area 3
    let mut cells = CellBlock::new();
    cells.push(2, &[0, 1, 2]);
    let s = PointCloudSample {
        coords: vec![0.0, 0.0, 2.0, 0.0, 0.0, 3.0],
        n_nodes: 3,
        dim: 2,
        intrinsic_dim: 2,
        cells,
        node_mask: vec![true; 3],
        fields_a: vec![0.0; 3],
        d_a: 1,
        fields_u: None,
        d_u: 0,
        subdomains: vec![0; 3],
        label: String::new(),
    };
    let d = compute_measures(&s, Centering::Vertex).unwrap();
    for &v in &d {
        assert!((v - 1.0).abs() < 1e-14);
    }
}

/// Unit square split along the diagonal b-c: nodes a=(0,0), b=(1,0), c=(0,1),
/// d=(1,1); triangles {a,b,c} and {b,d,c}. Hand evaluation of the half/third
/// shares gives [1/6, 1/3, 1/3, 1/6] with the diagonal nodes largest.
#[test]
fn unit_square_two_triangles_measure_shares() {
    let mut cells = CellBlock::new();
    cells.push(2, &[0, 1, 2]);
    cells.push(2, &[1, 2, 3]);
    let s = PointCloudSample {
        coords: vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
        n_nodes: 4,
        dim: 2,
        intrinsic_dim: 2,
        cells,
        node_mask: vec![true; 4],
        fields_a: vec![0.0; 4],
        d_a: 1,
        fields_u: None,
        d_u: 0,
        subdomains: vec![0; 4],
        label: String::new(),
    };
    let d = compute_measures(&s, Centering::Vertex).unwrap();
    let expect = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
    for (got, want) in d.iter().zip(expect.iter()) {
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }
}

#[test]
fn degenerate_cell_rejected_with_index() {
    let mut s = line_sample(&[0.0, 0.5, 1.0]);
    s.coords[2] = 0.5; // nodes 1 and 2 coincide -> cell 1 degenerate
    match compute_measures(&s, Centering::Vertex) {
        Err(Error::DegenerateCell { cell, .. }) => assert_eq!(cell, 1),
        other => panic!("expected degenerate cell, got {other:?}"),
    }
}

#[test]
fn node_outside_all_cells_rejected() {
    let mut s = line_sample(&[0.0, 0.5, 1.0]);
    s.coords.push(2.0);
    s.n_nodes += 1;
    s.node_mask.push(true);
    s.subdomains.push(0);
    s.fields_a.push(0.0);
    match compute_measures(&s, Centering::Vertex) {
        Err(Error::NodeWithoutCell { node }) => assert_eq!(node, 3),
        other => panic!("expected node-without-cell, got {other:?}"),
    }
}

#[test]
fn path_graph_connectivity() {
    let s = line_sample(&[0.0, 0.5, 1.0]);
    let adj = compute_connectivity(&s, Centering::Vertex).unwrap();
    assert_eq!(adj.row(1), &[0, 2]);
    assert_eq!(adj.row(0), &[1]);
}

#[test]
fn shared_edge_triangles_connectivity() {
    let mut cells = CellBlock::new();
    cells.push(2, &[0, 1, 2]);
    cells.push(2, &[1, 2, 3]);
    let s = PointCloudSample {
        coords: vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
        n_nodes: 4,
        dim: 2,
        intrinsic_dim: 2,
        cells,
        node_mask: vec![true; 4],
        fields_a: vec![0.0; 4],
        d_a: 1,
        fields_u: None,
        d_u: 0,
        subdomains: vec![0; 4],
        label: String::new(),
    };
    let adj = compute_connectivity(&s, Centering::Vertex).unwrap();
    // shared-edge nodes see everyone, corner nodes see three minus one
    assert_eq!(adj.row(1), &[0, 2, 3]);
    assert_eq!(adj.row(2), &[0, 1, 3]);
    assert_eq!(adj.row(0), &[1, 2]);
    assert_eq!(adj.row(3), &[1, 2]);

    let cadj = compute_connectivity(&s, Centering::Cell).unwrap();
    assert_eq!(cadj.row(0), &[1]);
    assert_eq!(cadj.row(1), &[0]);
}

/// 3x3 structured quad grid: the center node shares a cell with every other
/// node, so it has 8 neighbors (cells enumerated by hand).
#[test]
fn quad_grid_center_has_eight_neighbors() {
    let mut coords = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            coords.push(j as f64);
            coords.push(i as f64);
        }
    }
    let mut cells = CellBlock::new();
    for i in 0..2 {
        for j in 0..2 {
            let a = i * 3 + j;
            cells.push(2, &[a, a + 1, a + 3, a + 4]);
        }
    }
    let s = PointCloudSample {
        coords,
        n_nodes: 9,
        dim: 2,
        intrinsic_dim: 2,
        cells,
        node_mask: vec![true; 9],
        fields_a: vec![0.0; 9],
        d_a: 1,
        fields_u: None,
        d_u: 0,
        subdomains: vec![0; 9],
        label: String::new(),
    };
    let adj = compute_connectivity(&s, Centering::Vertex).unwrap();
    assert_eq!(adj.row(4).len(), 8);
    // quad cells are fan-triangulated: each unit cell has area 1
    let d = compute_measures(&s, Centering::Cell).unwrap();
    for &v in &d {
        assert!((v - 1.0).abs() < 1e-14);
    }
}

#[test]
fn uniform_density_is_inverse_measure() {
    let s = line_sample(&[0.0, 0.5, 1.0, 1.5, 2.0]);
    let f = build_features(&s, DensityMode::Uniform).unwrap();
    for (i, &r) in f.rho.iter().enumerate() {
        assert!((r - 0.5).abs() < 1e-14, "node {i}: {r}");
    }
    let norm: f64 = f.rho.iter().zip(f.d_omega.iter()).map(|(r, d)| r * d).sum();
    assert!((norm - 1.0).abs() <= 1e-12);
}

#[test]
fn pointcloud_density_on_uniform_grid_is_monte_carlo() {
    let nodes: Vec<f64> = (0..21).map(|i| i as f64 / 20.0).collect();
    let s = line_sample(&nodes);
    let f = build_features(&s, DensityMode::PointCloud).unwrap();
    for i in 0..s.n_nodes {
        let prod = f.rho[i] * f.d_omega[i];
        assert!((prod - 1.0 / 21.0).abs() < 1e-15, "node {i}: {prod}");
    }
}

/// Two subdomains with |Omega_1| = 1, |Omega_2| = 4: uniform densities are
/// 1/(2*1) and 1/(2*4), and the joint normalization holds.
#[test]
fn two_subdomain_density_normalization() {
    let nodes: Vec<f64> = vec![0.0, 0.5, 1.0, 2.0, 4.0, 6.0]; // lengths 1 and 4
    let mut s = line_sample(&nodes);
    s.subdomains = vec![0, 0, 0, 1, 1, 1];
    // detach the two chains: drop the segment bridging nodes 2-3
    let mut cells = CellBlock::new();
    cells.push(1, &[0, 1]);
    cells.push(1, &[1, 2]);
    cells.push(1, &[3, 4]);
    cells.push(1, &[4, 5]);
    s.cells = cells;
    let f = build_features(&s, DensityMode::Uniform).unwrap();
    assert_eq!(f.domain_measure.len(), 2);
    assert!((f.domain_measure[0] - 1.0).abs() < 1e-14);
    assert!((f.domain_measure[1] - 4.0).abs() < 1e-14);
    assert!((f.rho[0] - 0.5).abs() < 1e-14);
    assert!((f.rho[3] - 0.125).abs() < 1e-14);
    let norm: f64 = f.rho.iter().zip(f.d_omega.iter()).map(|(r, d)| r * d).sum();
    assert!((norm - 1.0).abs() <= 1e-12);
}

#[test]
fn refinement_preserves_total_measure() {
    let coarse: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
    let fine: Vec<f64> = (0..21).map(|i| i as f64 / 20.0).collect();
    let dc = compute_measures(&line_sample(&coarse), Centering::Vertex).unwrap();
    let df = compute_measures(&line_sample(&fine), Centering::Vertex).unwrap();
    let (sc, sf) = (dc.iter().sum::<f64>(), df.iter().sum::<f64>());
    assert!((sc - sf).abs() <= 1e-12);
    assert!((sc - 1.0).abs() <= 1e-12);
}

#[test]
fn padded_rows_change_nothing() {
    let mut s = line_sample(&[0.0, 0.25, 0.5, 1.0]);
    // two padded rows at the end
    s.coords.extend_from_slice(&[0.0, 0.0]);
    s.n_nodes += 2;
    s.node_mask.extend_from_slice(&[false, false]);
    s.subdomains.extend_from_slice(&[0, 0]);
    s.fields_a.extend_from_slice(&[0.0, 0.0]);
    let f1 = build_features(&s, DensityMode::PointCloud).unwrap();

    // garbage on padded rows must not leak anywhere
    let mut s2 = s.clone();
    s2.coords[4] = 123.0;
    s2.coords[5] = -5.0;
    let f2 = build_features(&s2, DensityMode::PointCloud).unwrap();
    assert_eq!(f1.d_omega, f2.d_omega);
    assert_eq!(f1.rho, f2.rho);
    assert_eq!(f1.neighbors, f2.neighbors);
    assert_eq!(f1.domain_measure, f2.domain_measure);
    let norm: f64 = f1.rho.iter().zip(f1.d_omega.iter()).map(|(r, d)| r * d).sum();
    assert!((norm - 1.0).abs() <= 1e-12);
}

#[test]
fn permutation_equivariance_of_features() {
    let nodes: Vec<f64> = vec![0.0, 0.1, 0.35, 0.6, 0.62, 0.9, 1.0];
    let s = line_sample(&nodes);
    let f = build_features(&s, DensityMode::PointCloud).unwrap();

    let mut perm: Vec<usize> = (0..s.n_nodes).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let sp = permute_sample(&s, &perm);
    let fp = build_features(&sp, DensityMode::PointCloud).unwrap();

    let mut inv = vec![0usize; s.n_nodes];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    for old in 0..s.n_nodes {
        let new = inv[old];
        assert!((f.d_omega[old] - fp.d_omega[new]).abs() < 1e-15);
        assert!((f.rho[old] - fp.rho[new]).abs() < 1e-12 * f.rho[old].abs());
        let mut a: Vec<usize> = f.neighbors.row(old).iter().map(|&j| inv[j]).collect();
        a.sort_unstable();
        assert_eq!(a, fp.neighbors.row(new));
    }
}

#[test]
fn mixed_dimension_nodes_take_highest_dimension_measure() {
    // a triangle with a dangling line segment attached at node 0
    let mut cells = CellBlock::new();
    cells.push(2, &[0, 1, 2]);
    cells.push(1, &[0, 3]);
    let s = PointCloudSample {
        coords: vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, -1.0, 0.0],
        n_nodes: 4,
        dim: 2,
        intrinsic_dim: 2,
        cells,
        node_mask: vec![true; 4],
        fields_a: vec![0.0; 4],
        d_a: 1,
        fields_u: None,
        d_u: 0,
        subdomains: vec![0, 0, 0, 1],
        label: String::new(),
    };
    let d = compute_measures(&s, Centering::Vertex).unwrap();
    // node 0 counts only its 2d share (area/3), not the line share
    assert!((d[0] - 0.5 / 3.0).abs() < 1e-15);
    // node 3 is line-only: half the segment length
    assert!((d[3] - 0.5).abs() < 1e-15);
}

#[test]
fn validate_catches_masked_cell_reference() {
    let mut s = line_sample(&[0.0, 0.5, 1.0]);
    s.node_mask[2] = false;
    assert!(matches!(
        s.validate(),
        Err(Error::BadCellIndex { node: 2, .. })
    ));
}
