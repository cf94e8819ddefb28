//! Desk-scale dataset generators: deterministic PDE solvers plus random
//! field samplers, emitting dataset containers.

mod advdiff;
mod burgers;
mod darcy;
mod grf;
mod mesh1d;

pub use advdiff::{analytic_boundary_layer, solve_adv_diff, AdvDiffCase};
pub use burgers::{solve_burgers_periodic, BurgersOutcome};
pub use darcy::{solve_darcy_unit_square, threshold_coefficients};
pub use grf::{Grf1d, Grf2d, GrfPeriodic1d, GrfSpec};
pub use mesh1d::{make_mesh_1d, MeshKind};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{DatasetInfo, SampleBundle};
use crate::error::{Error, Result};
use crate::geometry::{CellBlock, PointCloudSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    AdvDiff,
    Darcy,
    Burgers,
}

impl Problem {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "advdiff" => Ok(Problem::AdvDiff),
            "darcy" => Ok(Problem::Darcy),
            "burgers" => Ok(Problem::Burgers),
            other => Err(Error::InvalidConfig {
                field: "problem".into(),
                reason: format!("unknown problem {other}"),
            }),
        }
    }
}

/// splitmix64: decorrelate per-sample seeds from one master seed.
fn derive_seed(master: u64, index: u64, salt: u64) -> u64 {
    let mut z = master
        .wrapping_add(salt.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn chain_cells(n: usize) -> CellBlock {
    let mut cells = CellBlock::new();
    for i in 0..n - 1 {
        cells.push(1, &[i, i + 1]);
    }
    cells
}

/// Transport study samples, mesh kinds round-robin. Input channels are
/// [f(x), D, u_l] (the latter two constant over the domain), output is the
/// steady solution; the mesh family is recorded as the sample label.
pub fn gen_advdiff_dataset(n_samples: usize, master_seed: u64) -> Result<(DatasetInfo, Vec<SampleBundle>)> {
    let bundles: Vec<Result<SampleBundle>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let kind = MeshKind::ALL[i % 3];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, i as u64, 1));
            let case = AdvDiffCase::sample(&mut rng, derive_seed(master_seed, i as u64, 2), kind);
            let nodes = make_mesh_1d(kind, case.l)?;
            let g = case.source_field();
            let n = nodes.len();
            let f: Vec<f64> = nodes.iter().map(|&x| case.source_at(&g, x)).collect();
            let u = solve_adv_diff(&f, case.d_coef, case.u_l, &nodes)?;
            let mut fields_a = Vec::with_capacity(3 * n);
            for &fx in &f {
                fields_a.push(fx);
                fields_a.push(case.d_coef);
                fields_a.push(case.u_l);
            }
            Ok(SampleBundle::new(PointCloudSample {
                coords: nodes.clone(),
                n_nodes: n,
                dim: 1,
                intrinsic_dim: 1,
                cells: chain_cells(n),
                node_mask: vec![true; n],
                fields_a,
                d_a: 3,
                fields_u: Some(u),
                d_u: 1,
                subdomains: vec![0; n],
                label: kind.name().to_string(),
            }))
        })
        .collect();
    let bundles: Result<Vec<SampleBundle>> = bundles.into_iter().collect();
    let bundles = bundles?;
    let mut info = DatasetInfo::new(1, 1, 3, 1);
    info.channel_names_a = vec!["source".into(), "diffusivity".into(), "left_bc".into()];
    info.channel_names_u = vec!["solution".into()];
    info.sample_count = bundles.len();
    Ok((info, bundles))
}

/// Unit-square Darcy samples on the n x n tensor grid.
pub fn gen_darcy_dataset(
    n_samples: usize,
    grid_n: usize,
    master_seed: u64,
) -> Result<(DatasetInfo, Vec<SampleBundle>)> {
    let bundles: Vec<Result<SampleBundle>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let a = threshold_coefficients(grid_n, derive_seed(master_seed, i as u64, 3));
            let u = solve_darcy_unit_square(&a, grid_n)?;
            let n = grid_n;
            let mut coords = Vec::with_capacity(2 * n * n);
            for gi in 0..n {
                let x = gi as f64 / (n - 1) as f64;
                for gj in 0..n {
                    coords.push(x);
                    coords.push(gj as f64 / (n - 1) as f64);
                }
            }
            let mut cells = CellBlock::new();
            for gi in 0..n - 1 {
                for gj in 0..n - 1 {
                    let a0 = gi * n + gj;
                    cells.push(2, &[a0, a0 + 1, a0 + n, a0 + n + 1]);
                }
            }
            Ok(SampleBundle::new(PointCloudSample {
                coords,
                n_nodes: n * n,
                dim: 2,
                intrinsic_dim: 2,
                cells,
                node_mask: vec![true; n * n],
                fields_a: a,
                d_a: 1,
                fields_u: Some(u),
                d_u: 1,
                subdomains: vec![0; n * n],
                label: "darcy".into(),
            }))
        })
        .collect();
    let bundles: Result<Vec<SampleBundle>> = bundles.into_iter().collect();
    let bundles = bundles?;
    let mut info = DatasetInfo::new(2, 2, 1, 1);
    info.channel_names_a = vec!["permeability".into()];
    info.channel_names_u = vec!["pressure".into()];
    info.sample_count = bundles.len();
    Ok((info, bundles))
}

/// Periodic Burgers samples at fixed resolution: random initial state to the
/// state at t = 1, viscosity 0.1.
pub fn gen_burgers_dataset(
    n_samples: usize,
    resolution: usize,
    master_seed: u64,
) -> Result<(DatasetInfo, Vec<SampleBundle>)> {
    let spec = GrfSpec {
        scale: 1.0,
        tau: 5.0,
        alpha: 2.0,
        n_modes: 64,
    };
    let bundles: Vec<Result<SampleBundle>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let g = GrfPeriodic1d::sample(spec, derive_seed(master_seed, i as u64, 4));
            let u0 = g.eval_grid_normalized(resolution);
            let out = solve_burgers_periodic(&u0, 0.1, 1.0, None)?;
            let nodes: Vec<f64> = (0..resolution)
                .map(|j| j as f64 / resolution as f64)
                .collect();
            Ok(SampleBundle::new(PointCloudSample {
                coords: nodes,
                n_nodes: resolution,
                dim: 1,
                intrinsic_dim: 1,
                cells: chain_cells(resolution),
                node_mask: vec![true; resolution],
                fields_a: u0,
                d_a: 1,
                fields_u: Some(out.u),
                d_u: 1,
                subdomains: vec![0; resolution],
                label: "burgers".into(),
            }))
        })
        .collect();
    let bundles: Result<Vec<SampleBundle>> = bundles.into_iter().collect();
    let bundles = bundles?;
    let mut info = DatasetInfo::new(1, 1, 1, 1);
    info.channel_names_a = vec!["initial_state".into()];
    info.channel_names_u = vec!["final_state".into()];
    info.sample_count = bundles.len();
    Ok((info, bundles))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advdiff_round_robin_and_channels() {
        let (info, bundles) = gen_advdiff_dataset(6, 7).unwrap();
        assert_eq!(info.d_a, 3);
        assert_eq!(info.d, 1);
        assert_eq!(info.d_u, 1);
        let labels: Vec<&str> = bundles.iter().map(|b| b.sample.label.as_str()).collect();
        assert_eq!(labels.iter().filter(|&&l| l == "uniform").count(), 2);
        assert_eq!(labels.iter().filter(|&&l| l == "exponential").count(), 2);
        assert_eq!(labels.iter().filter(|&&l| l == "linear").count(), 2);
        // constant channels truly constant per sample
        for b in &bundles {
            let s = &b.sample;
            let d0 = s.fields_a[1];
            let u0 = s.fields_a[2];
            for i in 0..s.n_nodes {
                assert_eq!(s.fields_a[i * 3 + 1], d0);
                assert_eq!(s.fields_a[i * 3 + 2], u0);
            }
            s.validate().unwrap();
        }
    }

    #[test]
    fn generation_is_bit_identical_per_seed() {
        let (_, a) = gen_advdiff_dataset(3, 11).unwrap();
        let (_, b) = gen_advdiff_dataset(3, 11).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.sample.coords.len(), y.sample.coords.len());
            assert!(x
                .sample
                .fields_u
                .as_ref()
                .unwrap()
                .iter()
                .zip(y.sample.fields_u.as_ref().unwrap())
                .all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        let (_, c) = gen_advdiff_dataset(3, 12).unwrap();
        assert!(a[0]
            .sample
            .fields_u
            .as_ref()
            .unwrap()
            .iter()
            .zip(c[0].sample.fields_u.as_ref().unwrap())
            .any(|(p, q)| p != q));
    }

    #[test]
    fn darcy_samples_form_a_grid() {
        let (info, bundles) = gen_darcy_dataset(2, 17, 5).unwrap();
        assert_eq!(info.d, 2);
        let s = &bundles[0].sample;
        assert_eq!(s.n_nodes, 17 * 17);
        assert_eq!(s.cells.len(), 16 * 16);
        s.validate().unwrap();
        assert!(s.fields_a.iter().all(|&v| v == 12.0 || v == 3.0));
    }

    #[test]
    fn burgers_samples_resolve() {
        let (info, bundles) = gen_burgers_dataset(2, 256, 5).unwrap();
        assert_eq!(info.d, 1);
        let s = &bundles[0].sample;
        assert_eq!(s.n_nodes, 256);
        s.validate().unwrap();
        let u0_max = s.fields_a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!((u0_max - 1.0).abs() < 1e-12);
    }
}
