//! Low-rank Fourier integral operator.
//!
//! Per subdomain s and half-space mode k: a weighted forward transform
//! F_{s,k} = sum_{i in s} e^{-2 pi i (k/L).x_i} f(x_i) rho_i dOmega_i, a
//! learnable complex mixing G = W_{s,k} F_{s,k}, and an inverse transform
//! evaluated at every node with conjugate-pair folding,
//! f_out(x_j) = sum_s sum_k c_k Re[e^{+2 pi i (k/L).x_j} G_{s,k}].
//! The folding realizes the full spectrum under W_{-k} = conj(W_k), so the
//! output is real by construction. Length scales L are learnable through
//! their logarithm.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::GeometryFeatures;
use crate::tensor::{detect_lattice, ModeSet, NuftCtx, Tape, Tensor, Var};

pub use crate::tensor::ModeSet as FourierModeSet;

/// Learnable parameters of one integral operator: complex mode weights per
/// subdomain and log length scales.
#[derive(Debug, Clone)]
pub struct FourierIntegralParams {
    /// Complex [n_seg, n_modes, d_out, d_in].
    pub weights: Tensor,
    /// Real [dim], stores log L.
    pub log_l: Tensor,
    pub n_seg: usize,
    pub d_out: usize,
    pub d_in: usize,
}

impl FourierIntegralParams {
    /// Complex Gaussian init at scale 1/(d_in * |K+|); the k = 0 block gets a
    /// zero imaginary part so the realized spectrum satisfies
    /// W_{-k} = conj(W_k) exactly. Length scales start at L = 1 until
    /// [`set_length_scales`] is called with the data bounding box.
    ///
    /// [`set_length_scales`]: FourierIntegralParams::set_length_scales
    pub fn init(
        rng: &mut ChaCha8Rng,
        modes: &ModeSet,
        n_seg: usize,
        d_out: usize,
        d_in: usize,
    ) -> Self {
        let nk = modes.n_modes();
        let std = 1.0 / (d_in * nk) as f64;
        let mut w = Vec::with_capacity(n_seg * nk * d_out * d_in);
        for _ in 0..n_seg {
            for kidx in 0..nk {
                let zero_mode = kidx == modes.zero_index;
                for _ in 0..d_out * d_in {
                    let re: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * std;
                    let im: f64 = if zero_mode {
                        0.0
                    } else {
                        rng.sample::<f64, _>(rand_distr::StandardNormal) * std
                    };
                    w.push(Complex64::new(re, im));
                }
            }
        }
        FourierIntegralParams {
            weights: Tensor::from_complex(vec![n_seg, nk, d_out, d_in], w).unwrap(),
            log_l: Tensor::from_vec(vec![modes.dim], vec![0.0; modes.dim]).unwrap(),
            n_seg,
            d_out,
            d_in,
        }
    }

    pub fn set_length_scales(&mut self, l: &[f64]) {
        let vals: Vec<f64> = l.iter().map(|&x| x.max(1e-12).ln()).collect();
        self.log_l = Tensor::from_vec(vec![vals.len()], vals).unwrap();
    }
}

/// Bundle everything the transforms need about one sample. Validates the
/// quadrature data and detects tensor-product structure once.
pub fn build_ctx(
    coords: &[f64],
    n_nodes: usize,
    dim: usize,
    mask: &[bool],
    subdomains: &[u32],
    features: &GeometryFeatures,
    modes: ModeSet,
) -> Result<Arc<NuftCtx>> {
    let mut n_seg = 1usize;
    let mut quad_w = vec![0.0; n_nodes];
    let mut seg_seen = vec![false; 64];
    for i in 0..n_nodes {
        if !mask[i] {
            continue;
        }
        let (rho, dom) = (features.rho[i], features.d_omega[i]);
        if !(rho > 0.0) || !(dom > 0.0) {
            return Err(Error::BadQuadrature {
                node: i,
                rho,
                d_omega: dom,
            });
        }
        quad_w[i] = rho * dom;
        let s = subdomains[i] as usize;
        if s >= seg_seen.len() {
            seg_seen.resize(s + 1, false);
        }
        seg_seen[s] = true;
        n_seg = n_seg.max(s + 1);
    }
    for (s, seen) in seg_seen.iter().take(n_seg).enumerate() {
        if !seen {
            return Err(Error::EmptySubdomain { subdomain: s });
        }
    }
    let lattice = if n_seg == 1 && dim == 2 {
        detect_lattice(coords, n_nodes, dim, mask)
    } else {
        None
    };
    Ok(Arc::new(NuftCtx {
        coords: coords.to_vec(),
        n_nodes,
        dim,
        quad_w,
        seg: subdomains.to_vec(),
        n_seg,
        mask: mask.to_vec(),
        modes,
        lattice,
    }))
}

/// Apply the operator on the tape: analysis, per-mode mixing, synthesis.
/// Handles any number of subdomains; with S = 1 this is the plain
/// single-domain operator.
pub fn integral_apply(
    tape: &mut Tape,
    weights: Var,
    log_l: Var,
    ctx: &Arc<NuftCtx>,
    f_in: Var,
) -> Result<Var> {
    let fhat = tape.nuft_analysis(f_in, log_l, ctx.clone())?;
    let ghat = tape.mode_mix(weights, fhat)?;
    tape.nuft_synthesis(ghat, log_l, ctx.clone())
}

/// Multi-subdomain form: each subdomain integrates with its own weight block
/// and the kernel is evaluated at all nodes, so the contributions sum.
/// Identical to [`integral_apply`] with S = 1; the separate entry point
/// validates the per-subdomain weight blocks.
pub fn multi_domain_apply(
    tape: &mut Tape,
    weights: Var,
    log_l: Var,
    ctx: &Arc<NuftCtx>,
    f_in: Var,
) -> Result<Var> {
    let sw = tape.value(weights).shape().to_vec();
    if sw[0] != ctx.n_seg {
        return Err(Error::ShapeMismatch {
            op: "multi_domain_apply",
            lhs: sw,
            rhs: vec![ctx.n_seg],
        });
    }
    integral_apply(tape, weights, log_l, ctx, f_in)
}

/// Dense O(N^2) oracle: explicit kernel summation over the full spectrum
/// with W_{-k} = conj(W_k). Independent of the low-rank evaluation path;
/// used to pin it down in tests.
pub fn dense_oracle(
    ctx: &NuftCtx,
    weights: &Tensor,
    log_l: &[f64],
    f_in: &[f64],
    d_in: usize,
    d_out: usize,
) -> Vec<f64> {
    let l: Vec<f64> = log_l.iter().map(|x| x.exp()).collect();
    let ms = &ctx.modes;
    let n = ctx.n_nodes;
    let w = weights.complex();
    let nk = ms.n_modes();
    let mut out = vec![0.0; n * d_out];
    for j in 0..n {
        if !ctx.mask[j] {
            continue;
        }
        let xj = &ctx.coords[j * ctx.dim..(j + 1) * ctx.dim];
        for i in 0..n {
            if !ctx.mask[i] || ctx.quad_w[i] == 0.0 {
                continue;
            }
            let xi = &ctx.coords[i * ctx.dim..(i + 1) * ctx.dim];
            let s = ctx.seg[i] as usize;
            for kidx in 0..nk {
                let kvec = ms.mode(kidx);
                let mut phase = 0.0;
                for m in 0..ctx.dim {
                    phase += kvec[m] as f64 / l[m] * (xj[m] - xi[m]);
                }
                let kernel = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * phase);
                let wblock = &w[((s * nk) + kidx) * d_out * d_in..];
                for o in 0..d_out {
                    let mut acc = Complex64::ZERO;
                    for c in 0..d_in {
                        acc += wblock[o * d_in + c] * f_in[i * d_in + c];
                    }
                    let term = kernel * acc * ctx.quad_w[i];
                    // fold in the conjugate mode: for k != 0 the pair sum is
                    // 2 Re, for k = 0 only the real part survives since
                    // W_0 = conj(W_0)
                    out[j * d_out + o] += ms.fold[kidx] * term.re;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_features, CellBlock, DensityMode, PointCloudSample};
    use rand::SeedableRng;

    fn random_cloud_1d(n: usize, span: f64, seed: u64) -> PointCloudSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..span)).collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        crate::geometry::tests::line_sample(&nodes)
    }

    fn rand_params(ctx: &NuftCtx, d_in: usize, d_out: usize, seed: u64) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nk = ctx.modes.n_modes();
        let w: Vec<Complex64> = (0..ctx.n_seg * nk * d_out * d_in)
            .enumerate()
            .map(|(idx, _)| {
                let kidx = (idx / (d_out * d_in)) % nk;
                let re = rng.random_range(-1.0..1.0);
                let im = if kidx == ctx.modes.zero_index {
                    0.0
                } else {
                    rng.random_range(-1.0..1.0)
                };
                Complex64::new(re, im)
            })
            .collect();
        let weights = Tensor::from_complex(vec![ctx.n_seg, nk, d_out, d_in], w).unwrap();
        let log_l = Tensor::from_vec(
            vec![ctx.dim],
            (0..ctx.dim).map(|_| rng.random_range(-0.2..0.4)).collect(),
        )
        .unwrap();
        (weights, log_l)
    }

    fn apply(ctx: &Arc<NuftCtx>, weights: &Tensor, log_l: &Tensor, f: &Tensor) -> Vec<f64> {
        let mut tape = Tape::new();
        let w = tape.leaf(weights.clone());
        let l = tape.leaf(log_l.clone());
        let fv = tape.leaf(f.clone());
        let y = integral_apply(&mut tape, w, l, ctx, fv).unwrap();
        tape.value(y).real().to_vec()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max)
            / scale
    }

    #[test]
    fn zero_mode_identity_yields_the_mean() {
        // K+ = {0}, W_0 = I, uniform density: output is the domain mean of f
        let s = random_cloud_1d(30, 2.0, 1);
        let feats = build_features(&s, DensityMode::Uniform).unwrap();
        let ctx = build_ctx(
            &s.coords,
            s.n_nodes,
            1,
            &s.node_mask,
            &s.subdomains,
            &feats,
            ModeSet::half_space(1, 0),
        )
        .unwrap();
        let w = Tensor::from_complex(vec![1, 1, 1, 1], vec![Complex64::new(1.0, 0.0)]).unwrap();
        let log_l = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fdata: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = Tensor::from_vec(vec![30, 1], fdata.clone()).unwrap();
        let out = apply(&ctx, &w, &log_l, &f);
        let mean: f64 = fdata
            .iter()
            .zip(ctx.quad_w.iter())
            .map(|(v, w)| v * w)
            .sum();
        for &o in &out {
            assert!((o - mean).abs() < 1e-12, "{o} vs {mean}");
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let s = random_cloud_1d(20, 1.0, 3);
        let feats = build_features(&s, DensityMode::PointCloud).unwrap();
        let ctx = build_ctx(
            &s.coords,
            s.n_nodes,
            1,
            &s.node_mask,
            &s.subdomains,
            &feats,
            ModeSet::half_space(1, 3),
        )
        .unwrap();
        let (w, l) = rand_params(&ctx, 2, 3, 4);
        let f = Tensor::zeros(vec![20, 2], crate::tensor::DType::Real64);
        let out = apply(&ctx, &w, &l, &f);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dense_oracle_matches_low_rank_1d() {
        for (density, seed) in [(DensityMode::Uniform, 10u64), (DensityMode::PointCloud, 11)] {
            let s = random_cloud_1d(40, 3.0, seed);
            let feats = build_features(&s, density).unwrap();
            let ctx = build_ctx(
                &s.coords,
                s.n_nodes,
                1,
                &s.node_mask,
                &s.subdomains,
                &feats,
                ModeSet::half_space(1, 4),
            )
            .unwrap();
            let (w, l) = rand_params(&ctx, 2, 2, seed + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
            let f = Tensor::from_vec(
                vec![40, 2],
                (0..80).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let fast = apply(&ctx, &w, &l, &f);
            let dense = dense_oracle(&ctx, &w, l.real(), f.real(), 2, 2);
            assert!(
                rel_err(&fast, &dense) <= 1e-10,
                "density {density:?}: {}",
                rel_err(&fast, &dense)
            );
        }
    }

    #[test]
    fn two_subdomains_with_zero_second_block_reduce_to_first() {
        let mut s = random_cloud_1d(24, 2.0, 21);
        for i in 12..24 {
            s.subdomains[i] = 1;
        }
        // split the chain so subdomains carry their own cells
        let mut cells = CellBlock::new();
        for i in 0..11 {
            cells.push(1, &[i, i + 1]);
        }
        for i in 12..23 {
            cells.push(1, &[i, i + 1]);
        }
        s.cells = cells;
        let feats = build_features(&s, DensityMode::Uniform).unwrap();
        let ctx = build_ctx(
            &s.coords,
            s.n_nodes,
            1,
            &s.node_mask,
            &s.subdomains,
            &feats,
            ModeSet::half_space(1, 2),
        )
        .unwrap();
        assert_eq!(ctx.n_seg, 2);
        let (w, l) = rand_params(&ctx, 1, 1, 22);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let f = Tensor::from_vec(
            vec![24, 1],
            (0..24).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();

        // zero the second block: result must equal the first subdomain
        // integral alone
        let mut wz = w.complex().to_vec();
        let nk = ctx.modes.n_modes();
        for z in wz[nk..2 * nk].iter_mut() {
            *z = Complex64::ZERO;
        }
        let wz = Tensor::from_complex(vec![2, nk, 1, 1], wz).unwrap();
        let full = apply(&ctx, &wz, &l, &f);
        let dense = dense_oracle(&ctx, &wz, l.real(), f.real(), 1, 1);
        assert!(rel_err(&full, &dense) <= 1e-10);
        // dropping subdomain-1 nodes from the oracle sum changes nothing
        // because their weight block is zero
        let mut ctx1 = NuftCtx {
            coords: ctx.coords.clone(),
            n_nodes: ctx.n_nodes,
            dim: 1,
            quad_w: ctx.quad_w.clone(),
            seg: ctx.seg.clone(),
            n_seg: 2,
            mask: ctx.mask.clone(),
            modes: ctx.modes.clone(),
            lattice: None,
        };
        for i in 12..24 {
            ctx1.quad_w[i] = 0.0;
        }
        let only_first = dense_oracle(&ctx1, &wz, l.real(), f.real(), 1, 1);
        assert!(rel_err(&full, &only_first) <= 1e-10);
    }

    /// Line + square toy geometry, f = 1, k = 0 only, uniform density per the
    /// two-domain normalization: output = (W1 + W2) / 2 everywhere.
    #[test]
    fn line_plus_square_constant_field() {
        // segment of length 2 (subdomain 0) and unit square of two triangles
        // (subdomain 1)
        let coords = vec![
            0.0, -1.0, 1.0, -1.0, 2.0, -1.0, // line nodes
            0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, // square nodes
        ];
        let mut cells = CellBlock::new();
        cells.push(1, &[0, 1]);
        cells.push(1, &[1, 2]);
        cells.push(2, &[3, 4, 5]);
        cells.push(2, &[4, 5, 6]);
        let s = PointCloudSample {
            coords,
            n_nodes: 7,
            dim: 2,
            intrinsic_dim: 2,
            cells,
            node_mask: vec![true; 7],
            fields_a: vec![0.0; 7],
            d_a: 1,
            fields_u: None,
            d_u: 0,
            subdomains: vec![0, 0, 0, 1, 1, 1, 1],
            label: String::new(),
        };
        let feats = build_features(&s, DensityMode::Uniform).unwrap();
        let ctx = build_ctx(
            &s.coords,
            7,
            2,
            &s.node_mask,
            &s.subdomains,
            &feats,
            ModeSet::half_space(2, 0),
        )
        .unwrap();
        let (w1, w2) = (0.7, -0.4);
        let w = Tensor::from_complex(
            vec![2, 1, 1, 1],
            vec![Complex64::new(w1, 0.0), Complex64::new(w2, 0.0)],
        )
        .unwrap();
        let log_l = Tensor::from_vec(vec![2], vec![0.0, 0.0]).unwrap();
        let f = Tensor::from_vec(vec![7, 1], vec![1.0; 7]).unwrap();
        let mut tape = Tape::new();
        let wv = tape.leaf(w);
        let lv = tape.leaf(log_l);
        let fv = tape.leaf(f);
        let y = multi_domain_apply(&mut tape, wv, lv, &ctx, fv).unwrap();
        let expect = 0.5 * w1 + 0.5 * w2;
        for &o in tape.value(y).real() {
            assert!((o - expect).abs() < 1e-12, "{o} vs {expect}");
        }
    }

    #[test]
    fn empty_subdomain_is_rejected() {
        let s = random_cloud_1d(10, 1.0, 31);
        let feats = build_features(&s, DensityMode::Uniform).unwrap();
        let mut subs = s.subdomains.clone();
        subs.iter_mut().for_each(|x| *x = 2); // ids 0 and 1 unused
        let err = build_ctx(
            &s.coords,
            s.n_nodes,
            1,
            &s.node_mask,
            &subs,
            &feats,
            ModeSet::half_space(1, 1),
        );
        assert!(matches!(err, Err(Error::EmptySubdomain { subdomain: 0 })));
    }

    #[test]
    fn length_scale_underflow_is_rejected() {
        let s = random_cloud_1d(10, 1.0, 32);
        let feats = build_features(&s, DensityMode::Uniform).unwrap();
        let ctx = build_ctx(
            &s.coords,
            s.n_nodes,
            1,
            &s.node_mask,
            &s.subdomains,
            &feats,
            ModeSet::half_space(1, 1),
        )
        .unwrap();
        let (w, _) = rand_params(&ctx, 1, 1, 33);
        let bad_l = Tensor::from_vec(vec![1], vec![-800.0]).unwrap();
        let f = Tensor::zeros(vec![10, 1], crate::tensor::DType::Real64);
        let mut tape = Tape::new();
        let wv = tape.leaf(w);
        let lv = tape.leaf(bad_l);
        let fv = tape.leaf(f);
        assert!(matches!(
            integral_apply(&mut tape, wv, lv, &ctx, fv),
            Err(Error::LengthScaleUnderflow { .. })
        ));
    }

    #[test]
    fn output_is_exactly_real_by_construction() {
        // the synthesis op folds conjugate pairs in real arithmetic, so its
        // output buffer is a real tensor; no imaginary residue can exist
        let s = random_cloud_1d(15, 1.0, 41);
        let feats = build_features(&s, DensityMode::Uniform).unwrap();
        let ctx = build_ctx(
            &s.coords,
            s.n_nodes,
            1,
            &s.node_mask,
            &s.subdomains,
            &feats,
            ModeSet::half_space(1, 3),
        )
        .unwrap();
        let (w, l) = rand_params(&ctx, 1, 2, 42);
        let f = Tensor::from_vec(vec![15, 1], vec![0.5; 15]).unwrap();
        let mut tape = Tape::new();
        let wv = tape.leaf(w);
        let lv = tape.leaf(l);
        let fv = tape.leaf(f);
        let y = integral_apply(&mut tape, wv, lv, &ctx, fv).unwrap();
        assert!(!tape.value(y).is_complex());
    }

    #[test]
    fn permutation_invariance_of_pointwise_outputs() {
        use rand::seq::SliceRandom;
        let s = random_cloud_1d(25, 2.0, 51);
        let feats = build_features(&s, DensityMode::PointCloud).unwrap();
        let modes = ModeSet::half_space(1, 3);
        let ctx = build_ctx(
            &s.coords,
            s.n_nodes,
            1,
            &s.node_mask,
            &s.subdomains,
            &feats,
            modes.clone(),
        )
        .unwrap();
        let (w, l) = rand_params(&ctx, 1, 1, 52);
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let fdata: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = Tensor::from_vec(vec![25, 1], fdata.clone()).unwrap();
        let base = apply(&ctx, &w, &l, &f);

        let mut perm: Vec<usize> = (0..25).collect();
        perm.shuffle(&mut rng);
        let sp = crate::geometry::permute_sample(&s, &perm);
        let featsp = build_features(&sp, DensityMode::PointCloud).unwrap();
        let ctxp = build_ctx(
            &sp.coords,
            sp.n_nodes,
            1,
            &sp.node_mask,
            &sp.subdomains,
            &featsp,
            modes,
        )
        .unwrap();
        let fp =
            Tensor::from_vec(vec![25, 1], perm.iter().map(|&old| fdata[old]).collect()).unwrap();
        let out_p = apply(&ctxp, &w, &l, &fp);
        let scale = base.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (new, &old) in perm.iter().enumerate() {
            assert!(
                (out_p[new] - base[old]).abs() <= 1e-12 * scale,
                "node {old}: {} vs {}",
                out_p[new],
                base[old]
            );
        }
    }
}
