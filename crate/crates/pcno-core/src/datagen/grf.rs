//! Spectral Gaussian random field samplers.
//!
//! All fields are Karhunen-Loeve expansions of (-Laplacian + tau^2)^{-alpha}
//! covariances in the eigenbasis matching the boundary conditions: sine modes
//! for zero-boundary fields, sine/cosine pairs for periodic ones.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy)]
pub struct GrfSpec {
    /// Covariance scale (variance prefactor).
    pub scale: f64,
    pub tau: f64,
    pub alpha: f64,
    pub n_modes: usize,
}

impl GrfSpec {
    /// The zero-boundary source field family used by the 1d transport study:
    /// N(0, 625 (-Laplacian + 25)^{-2}) truncated at 256 sine modes.
    pub fn boundary_layer_source() -> Self {
        GrfSpec {
            scale: 625.0,
            tau: 5.0,
            alpha: 2.0,
            n_modes: 256,
        }
    }
}

/// Zero-boundary field on [0, 1]:
/// g(x) = sum_m xi_m sigma_m sqrt(2) sin(pi m x) with
/// sigma_m = sqrt(scale) (pi^2 m^2 + tau^2)^{-alpha/2}.
#[derive(Debug, Clone)]
pub struct Grf1d {
    coeffs: Vec<f64>,
}

impl Grf1d {
    pub fn sample(spec: GrfSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (1..=spec.n_modes)
            .map(|m| {
                let xi: f64 = rng.sample(StandardNormal);
                let lam = PI * PI * (m * m) as f64 + spec.tau * spec.tau;
                xi * spec.scale.sqrt() * lam.powf(-spec.alpha / 2.0)
            })
            .collect();
        Grf1d { coeffs }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut s = 0.0;
        for (m, c) in self.coeffs.iter().enumerate() {
            s += c * (PI * (m + 1) as f64 * x).sin();
        }
        s * std::f64::consts::SQRT_2
    }

    /// Values on the uniform reference grid of `res + 1` points over [0, 1].
    pub fn eval_grid(&self, res: usize) -> Vec<f64> {
        assert!(res >= 512, "reference grid resolution must be >= 512");
        (0..=res).map(|i| self.eval(i as f64 / res as f64)).collect()
    }

    /// Mode standard deviations, for variance oracles.
    pub fn mode_std(spec: GrfSpec, m: usize) -> f64 {
        let lam = PI * PI * (m * m) as f64 + spec.tau * spec.tau;
        spec.scale.sqrt() * lam.powf(-spec.alpha / 2.0)
    }
}

/// Zero-boundary field on the unit square with eigenfunctions
/// 2 sin(pi m x) sin(pi n y).
#[derive(Debug, Clone)]
pub struct Grf2d {
    coeffs: Vec<f64>, // [n_modes, n_modes]
    n_modes: usize,
}

impl Grf2d {
    pub fn sample(spec: GrfSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mm = spec.n_modes;
        let mut coeffs = Vec::with_capacity(mm * mm);
        for m in 1..=mm {
            for n in 1..=mm {
                let xi: f64 = rng.sample(StandardNormal);
                let lam = PI * PI * ((m * m + n * n) as f64) + spec.tau * spec.tau;
                coeffs.push(xi * spec.scale.sqrt() * lam.powf(-spec.alpha / 2.0));
            }
        }
        Grf2d { coeffs, n_modes: mm }
    }

    /// Values on the n x n tensor grid over [0, 1]^2, separable evaluation.
    pub fn eval_grid(&self, n: usize) -> Vec<f64> {
        let mm = self.n_modes;
        // t[m, j] = sum_n c[m, n] sin(pi n y_j)
        let mut t = vec![0.0; mm * n];
        for m in 0..mm {
            for j in 0..n {
                let y = j as f64 / (n - 1) as f64;
                let mut s = 0.0;
                for q in 0..mm {
                    s += self.coeffs[m * mm + q] * (PI * (q + 1) as f64 * y).sin();
                }
                t[m * n + j] = s;
            }
        }
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let x = i as f64 / (n - 1) as f64;
            for m in 0..mm {
                let sx = 2.0 * (PI * (m + 1) as f64 * x).sin();
                if sx == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += sx * t[m * n + j];
                }
            }
        }
        out
    }
}

/// Zero-mean periodic field on [0, 1):
/// u(x) = sum_m sigma_m (xi_c sqrt(2) cos(2 pi m x) + xi_s sqrt(2) sin(2 pi m x)).
#[derive(Debug, Clone)]
pub struct GrfPeriodic1d {
    cos_coeffs: Vec<f64>,
    sin_coeffs: Vec<f64>,
}

impl GrfPeriodic1d {
    pub fn sample(spec: GrfSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cos_coeffs = Vec::with_capacity(spec.n_modes);
        let mut sin_coeffs = Vec::with_capacity(spec.n_modes);
        for m in 1..=spec.n_modes {
            let lam = (2.0 * PI * m as f64).powi(2) + spec.tau * spec.tau;
            let sigma = spec.scale.sqrt() * lam.powf(-spec.alpha / 2.0);
            let xc: f64 = rng.sample(StandardNormal);
            let xs: f64 = rng.sample(StandardNormal);
            cos_coeffs.push(sigma * xc);
            sin_coeffs.push(sigma * xs);
        }
        GrfPeriodic1d {
            cos_coeffs,
            sin_coeffs,
        }
    }

    /// Values at x_j = j / n, normalized to unit max amplitude.
    pub fn eval_grid_normalized(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (j, o) in out.iter_mut().enumerate() {
            let x = j as f64 / n as f64;
            let mut s = 0.0;
            for (m, (c, d)) in self
                .cos_coeffs
                .iter()
                .zip(self.sin_coeffs.iter())
                .enumerate()
            {
                let th = 2.0 * PI * (m + 1) as f64 * x;
                s += c * th.cos() + d * th.sin();
            }
            *o = s * std::f64::consts::SQRT_2;
        }
        let amp = out.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
        out.iter_mut().for_each(|x| *x /= amp);
        out
    }
}
