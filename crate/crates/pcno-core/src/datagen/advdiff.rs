//! Steady advection-diffusion two-point boundary value problem,
//! u' - D u'' = f on (0, L), u(0) = u_l, u(L) = 0, discretized with central
//! differences on a nonuniform grid and solved by the Thomas algorithm.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::grf::{Grf1d, GrfSpec};
use super::mesh1d::MeshKind;
use crate::error::{Error, Result};

/// Parameters of one problem instance, drawn from the study's ranges.
#[derive(Debug, Clone)]
pub struct AdvDiffCase {
    pub l: f64,
    pub u_l: f64,
    pub d_coef: f64,
    pub l_f: f64,
    pub grf_seed: u64,
    pub mesh_kind: MeshKind,
}

impl AdvDiffCase {
    pub fn sample(rng: &mut ChaCha8Rng, grf_seed: u64, mesh_kind: MeshKind) -> Self {
        let case = AdvDiffCase {
            l: rng.random_range(10.0..15.0),
            u_l: rng.random_range(0.0..1.0),
            d_coef: rng.random_range(5e-3..5e-2),
            l_f: rng.random_range(5.0..8.0),
            grf_seed,
            mesh_kind,
        };
        debug_assert!(case.l_f < case.l);
        case
    }

    /// Source field f(x) = |g(x / L_f)| on [0, L_f], zero beyond; g is the
    /// zero-boundary random field sampled on [0, 1].
    pub fn source_at(&self, g: &Grf1d, x: f64) -> f64 {
        if x <= self.l_f {
            g.eval(x / self.l_f).abs()
        } else {
            0.0
        }
    }

    pub fn source_field(&self) -> Grf1d {
        Grf1d::sample(GrfSpec::boundary_layer_source(), self.grf_seed)
    }
}

/// Second-order central differences on a nonuniform grid; tridiagonal
/// direct solve.
pub fn solve_adv_diff(f: &[f64], d_coef: f64, u_l: f64, nodes: &[f64]) -> Result<Vec<f64>> {
    let n = nodes.len();
    if n < 3 {
        return Err(Error::Solver("need at least 3 nodes".into()));
    }
    if !(d_coef > 0.0) {
        return Err(Error::Solver(format!("diffusivity {d_coef} must be positive")));
    }
    if nodes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Solver("nodes must be strictly increasing".into()));
    }
    if f.len() != n {
        return Err(Error::Solver("source length differs from nodes".into()));
    }

    // rows: lower, diag, upper
    let mut lo = vec![0.0; n];
    let mut di = vec![0.0; n];
    let mut up = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    di[0] = 1.0;
    rhs[0] = u_l;
    di[n - 1] = 1.0;
    rhs[n - 1] = 0.0;
    for i in 1..n - 1 {
        let hm = nodes[i] - nodes[i - 1];
        let hp = nodes[i + 1] - nodes[i];
        // u' ~ -hp/(hm (hm+hp)) u_{i-1} + (hp-hm)/(hm hp) u_i + hm/(hp (hm+hp)) u_{i+1}
        let a1 = -hp / (hm * (hm + hp));
        let b1 = (hp - hm) / (hm * hp);
        let c1 = hm / (hp * (hm + hp));
        // u'' ~ 2/(hm (hm+hp)) u_{i-1} - 2/(hm hp) u_i + 2/(hp (hm+hp)) u_{i+1}
        let a2 = 2.0 / (hm * (hm + hp));
        let b2 = -2.0 / (hm * hp);
        let c2 = 2.0 / (hp * (hm + hp));
        lo[i] = a1 - d_coef * a2;
        di[i] = b1 - d_coef * b2;
        up[i] = c1 - d_coef * c2;
        rhs[i] = f[i];
    }

    // Thomas sweep
    let mut c_star = vec![0.0; n];
    let mut d_star = vec![0.0; n];
    if di[0] == 0.0 {
        return Err(Error::Solver("singular system".into()));
    }
    c_star[0] = up[0] / di[0];
    d_star[0] = rhs[0] / di[0];
    for i in 1..n {
        let denom = di[i] - lo[i] * c_star[i - 1];
        if denom == 0.0 {
            return Err(Error::Solver("singular system".into()));
        }
        c_star[i] = up[i] / denom;
        d_star[i] = (rhs[i] - lo[i] * d_star[i - 1]) / denom;
    }
    let mut u = vec![0.0; n];
    u[n - 1] = d_star[n - 1];
    for i in (0..n - 1).rev() {
        u[i] = d_star[i] - c_star[i] * u[i + 1];
    }
    Ok(u)
}

/// Closed-form solution for f = 0, written to avoid exp overflow at small D:
/// u(x) = u_l (1 - e^{(x - L)/D}) / (1 - e^{-L/D}).
pub fn analytic_boundary_layer(x: f64, l: f64, d_coef: f64, u_l: f64) -> f64 {
    u_l * (1.0 - ((x - l) / d_coef).exp()) / (1.0 - (-l / d_coef).exp())
}
