//! Forward/backward compute kernels behind the tape ops.
//!
//! The non-uniform Fourier kernels come in two flavors: a generic path for
//! arbitrary point clouds and a separable path used when the (unmasked) nodes
//! form an exact axis-aligned tensor-product lattice. Both evaluate the same
//! sums; the separable path contracts one dimension at a time, which is the
//! difference between O(N * prod_m K_m) and O(N * sum_m K_m) work.

use std::f64::consts::PI;

use num_complex::Complex64;

/// C = A * B for row-major matrices, via matrixmultiply.
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    mm_into(a, k as isize, 1, b, n as isize, 1, m, k, n, 0.0, &mut c);
    c
}

/// C = A^T * B where A is row-major [k, m].
pub(crate) fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    mm_into(a, 1, m as isize, b, n as isize, 1, m, k, n, 0.0, &mut c);
    c
}

/// C = A * B^T where B is row-major [n, k].
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    mm_into(a, k as isize, 1, b, 1, k as isize, m, k, n, 0.0, &mut c);
    c
}

#[allow(clippy::too_many_arguments)]
fn mm_into(
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    m: usize,
    k: usize,
    n: usize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        if beta == 0.0 {
            c.fill(0.0);
        }
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// ---------------------------------------------------------------------------
// Fourier mode sets
// ---------------------------------------------------------------------------

/// Half-space representative set of integer frequency vectors.
///
/// Contains k = 0 and every k in the box [-k_max, k_max]^d whose first
/// nonzero component is positive. The other half of the spectrum is implied
/// by conjugation, which is what the `fold` factors account for.
#[derive(Debug, Clone)]
pub struct ModeSet {
    pub dim: usize,
    pub k_max: usize,
    /// Flat [n_modes, dim] frequency vectors.
    pub modes: Vec<i32>,
    /// Conjugate-pair folding factor per mode: 1 for k = 0, 2 otherwise.
    pub fold: Vec<f64>,
    /// Index of the k = 0 mode in `modes`.
    pub zero_index: usize,
}

impl ModeSet {
    pub fn half_space(dim: usize, k_max: usize) -> Self {
        assert!(dim >= 1);
        let km = k_max as i32;
        let mut modes = Vec::new();
        let mut fold = Vec::new();
        let mut zero_index = 0;
        let mut k = vec![-km; dim];
        loop {
            let first_nonzero = k.iter().copied().find(|&x| x != 0);
            match first_nonzero {
                None => {
                    zero_index = fold.len();
                    modes.extend_from_slice(&k);
                    fold.push(1.0);
                }
                Some(x) if x > 0 => {
                    modes.extend_from_slice(&k);
                    fold.push(2.0);
                }
                _ => {}
            }
            // odometer increment, last dimension fastest
            let mut d = dim;
            loop {
                if d == 0 {
                    return ModeSet {
                        dim,
                        k_max,
                        modes,
                        fold,
                        zero_index,
                    };
                }
                d -= 1;
                if k[d] < km {
                    k[d] += 1;
                    break;
                }
                k[d] = -km;
            }
        }
    }

    pub fn n_modes(&self) -> usize {
        self.fold.len()
    }

    pub fn mode(&self, i: usize) -> &[i32] {
        &self.modes[i * self.dim..(i + 1) * self.dim]
    }

    /// Size of the implied full spectrum, (2 k_max + 1)^d.
    pub fn full_size(&self) -> usize {
        (2 * self.k_max + 1).pow(self.dim as u32)
    }
}

// ---------------------------------------------------------------------------
// Point-cloud context for the transforms
// ---------------------------------------------------------------------------

/// Tensor-product structure of the unmasked nodes, when present.
#[derive(Debug, Clone)]
pub struct Lattice {
    /// Sorted distinct coordinate values per dimension.
    pub axes: Vec<Vec<f64>>,
    /// Flat lattice index (row-major over axes) -> node index.
    pub node_at: Vec<usize>,
}

/// Everything the Fourier transforms need to know about one sample.
#[derive(Debug)]
pub struct NuftCtx {
    /// Node coordinates, flat [n, dim].
    pub coords: Vec<f64>,
    pub n_nodes: usize,
    pub dim: usize,
    /// Quadrature weight rho_i * dOmega_i per node, zero on masked nodes.
    pub quad_w: Vec<f64>,
    pub seg: Vec<u32>,
    pub n_seg: usize,
    pub mask: Vec<bool>,
    pub modes: ModeSet,
    /// Separable fast path, only used when `n_seg == 1` and `dim == 2`.
    pub lattice: Option<Lattice>,
}

/// Detect an exact tensor-product lattice over the unmasked nodes.
///
/// Coordinates must match bit-for-bit along each axis; anything irregular
/// falls back to the generic path.
pub fn detect_lattice(coords: &[f64], n: usize, dim: usize, mask: &[bool]) -> Option<Lattice> {
    if dim < 2 {
        return None;
    }
    let active: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    if active.is_empty() {
        return None;
    }
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for m in 0..dim {
        let mut vals: Vec<f64> = active.iter().map(|&i| coords[i * dim + m]).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return None;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        axes.push(vals);
    }
    let total: usize = axes.iter().map(|a| a.len()).product();
    if total != active.len() {
        return None;
    }
    let mut node_at = vec![usize::MAX; total];
    for &i in &active {
        let mut flat = 0usize;
        for m in 0..dim {
            let x = coords[i * dim + m];
            let pos = axes[m].partition_point(|&v| v < x);
            if pos >= axes[m].len() || axes[m][pos] != x {
                return None;
            }
            flat = flat * axes[m].len() + pos;
        }
        if node_at[flat] != usize::MAX {
            return None;
        }
        node_at[flat] = i;
    }
    Some(Lattice { axes, node_at })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PhasePart {
    Re,
    Im,
}

/// Per-node phase powers exp(-2 pi i p x_m / L_m) for p = 0..=k_max.
#[inline]
fn fill_tables(x: &[f64], l: &[f64], k_max: usize, out: &mut [Complex64]) {
    let stride = k_max + 1;
    for (m, &xm) in x.iter().enumerate() {
        let base = Complex64::from_polar(1.0, -2.0 * PI * xm / l[m]);
        let row = &mut out[m * stride..(m + 1) * stride];
        row[0] = Complex64::new(1.0, 0.0);
        for p in 1..stride {
            row[p] = row[p - 1] * base;
        }
    }
}

/// Phase exp(-2 pi i (k/L) . x) from precomputed per-dimension tables.
#[inline]
fn mode_phase(tables: &[Complex64], k_max: usize, kvec: &[i32]) -> Complex64 {
    let stride = k_max + 1;
    let t0 = tables[kvec[0].unsigned_abs() as usize];
    let mut ph = if kvec[0] < 0 { t0.conj() } else { t0 };
    for (m, &km) in kvec.iter().enumerate().skip(1) {
        let t = tables[m * stride + km.unsigned_abs() as usize];
        ph *= if km < 0 { t.conj() } else { t };
    }
    ph
}

// ---------------------------------------------------------------------------
// Forward transforms.
//
// The generic path materializes the phase matrix Phi[i, k] =
// exp(-2 pi i (k/L) . x_i) as split re/im buffers (masked rows zero) and
// reduces every transform to dgemm calls plus O(nK) sweeps. The lattice path
// contracts one dimension at a time. Both evaluate identical sums.
// ---------------------------------------------------------------------------

pub(crate) struct PhiMatrix {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub n: usize,
    pub nk: usize,
}

fn build_phase_matrix(ctx: &NuftCtx, l: &[f64]) -> PhiMatrix {
    let ms = &ctx.modes;
    let (dim, k_max, nk) = (ctx.dim, ms.k_max, ms.n_modes());
    let n = ctx.n_nodes;
    let mut re = vec![0.0; n * nk];
    let mut im = vec![0.0; n * nk];
    let mut tables = vec![Complex64::ZERO; dim * (k_max + 1)];
    for i in 0..n {
        if !ctx.mask[i] {
            continue;
        }
        fill_tables(&ctx.coords[i * dim..(i + 1) * dim], l, k_max, &mut tables);
        let row = i * nk;
        for kidx in 0..nk {
            let ph = mode_phase(&tables, k_max, ms.mode(kidx));
            re[row + kidx] = ph.re;
            im[row + kidx] = ph.im;
        }
    }
    PhiMatrix { re, im, n, nk }
}

// One-entry per-thread cache: within a layer's forward and backward the same
// (ctx, L) pair is used several times in a row. The cache holds the Arc so
// the pointer key cannot be recycled by a different context while cached.
thread_local! {
    #[allow(clippy::type_complexity)]
    static PHI_CACHE: std::cell::RefCell<Option<(std::sync::Arc<NuftCtx>, Vec<u64>, std::rc::Rc<PhiMatrix>)>> =
        const { std::cell::RefCell::new(None) };
}

fn phase_matrix(ctx: &std::sync::Arc<NuftCtx>, l: &[f64]) -> std::rc::Rc<PhiMatrix> {
    let key_l: Vec<u64> = l.iter().map(|x| x.to_bits()).collect();
    PHI_CACHE.with(|slot| {
        let mut slot = slot.borrow_mut();
        if let Some((held, kl, phi)) = slot.as_ref() {
            if std::sync::Arc::ptr_eq(held, ctx) && *kl == key_l {
                return phi.clone();
            }
        }
        let phi = std::rc::Rc::new(build_phase_matrix(ctx, l));
        *slot = Some((ctx.clone(), key_l, phi.clone()));
        phi
    })
}

/// F[s, k, c] = sum_{i in s} exp(-2 pi i (k/L).x_i) quad_w_i field[i, c].
pub(crate) fn analysis_forward(
    ctx: &std::sync::Arc<NuftCtx>,
    l: &[f64],
    field: &[f64],
    c: usize,
) -> Vec<Complex64> {
    if let (Some(lat), true, 2) = (&ctx.lattice, ctx.n_seg == 1, ctx.dim) {
        return analysis_lattice(ctx, lat, l, &ctx.quad_w, field, c);
    }
    let phi = phase_matrix(ctx, l);
    let (n, nk) = (phi.n, phi.nk);
    let mut out = vec![Complex64::ZERO; ctx.n_seg * nk * c];
    let mut wf = vec![0.0; n * c];
    for s in 0..ctx.n_seg {
        for i in 0..n {
            let w = ctx.quad_w[i];
            let keep = w != 0.0 && ctx.mask[i] && (ctx.seg[i] as usize == s || ctx.n_seg == 1);
            let row = &mut wf[i * c..(i + 1) * c];
            if keep {
                for (o, &v) in row.iter_mut().zip(&field[i * c..(i + 1) * c]) {
                    *o = w * v;
                }
            } else {
                row.fill(0.0);
            }
        }
        let f_re = mm_tn(&phi.re, &wf, nk, n, c);
        let f_im = mm_tn(&phi.im, &wf, nk, n, c);
        let base = s * nk * c;
        for (idx, z) in out[base..base + nk * c].iter_mut().enumerate() {
            *z = Complex64::new(f_re[idx], f_im[idx]);
        }
    }
    out
}

/// Fold the conjugate-pair factors and sum the subdomain blocks of a
/// spectrum into split re/im buffers of shape [K, c].
fn folded_sum(ctx: &NuftCtx, ghat: &[Complex64], c: usize) -> (Vec<f64>, Vec<f64>) {
    let nk = ctx.modes.n_modes();
    let mut re = vec![0.0; nk * c];
    let mut im = vec![0.0; nk * c];
    for s in 0..ctx.n_seg {
        for kidx in 0..nk {
            let fold = ctx.modes.fold[kidx];
            let src = &ghat[((s * nk) + kidx) * c..((s * nk) + kidx + 1) * c];
            let dst_re = &mut re[kidx * c..(kidx + 1) * c];
            let dst_im = &mut im[kidx * c..(kidx + 1) * c];
            for ch in 0..c {
                dst_re[ch] += fold * src[ch].re;
                dst_im[ch] += fold * src[ch].im;
            }
        }
    }
    (re, im)
}

/// out[j, o] = sum_s sum_k fold_k Re[exp(+2 pi i (k/L).x_j) ghat[s, k, o]].
/// Re[psi g] with psi = conj(phi) is phi_re g_re + phi_im g_im.
pub(crate) fn synthesis_forward(
    ctx: &std::sync::Arc<NuftCtx>,
    l: &[f64],
    ghat: &[Complex64],
    c_out: usize,
) -> Vec<f64> {
    if let (Some(lat), true, 2) = (&ctx.lattice, ctx.n_seg == 1, ctx.dim) {
        return synthesis_lattice(ctx, lat, l, ghat, c_out, true, PhasePart::Re, None);
    }
    let phi = phase_matrix(ctx, l);
    let (g_re, g_im) = folded_sum(ctx, ghat, c_out);
    let mut out = mm(&phi.re, &g_re, phi.n, phi.nk, c_out);
    let t = mm(&phi.im, &g_im, phi.n, phi.nk, c_out);
    for (x, y) in out.iter_mut().zip(t.iter()) {
        *x += y;
    }
    out
}

// ---------------------------------------------------------------------------
// Backward transforms, with the length-scale derivative accumulation fused
// into the same phase matrix(it shares every phase factor).
// ---------------------------------------------------------------------------

/// Adjoints of `synthesis_forward`: returns (ghat_bar [S, K, c], log_l_bar).
pub(crate) fn synthesis_backward(
    ctx: &std::sync::Arc<NuftCtx>,
    l: &[f64],
    ybar: &[f64],
    ghat: &[Complex64],
    c_out: usize,
) -> (Vec<Complex64>, Vec<f64>) {
    let ms = &ctx.modes;
    let nk = ms.n_modes();
    if let (Some(lat), true, 2) = (&ctx.lattice, ctx.n_seg == 1, ctx.dim) {
        // every subdomain block of the adjoint is the same unsegmented sum
        // (here S = 1); the adjoint phase of the synthesis is the analysis
        // phase, with the fold factors applied per mode
        let ones: Vec<f64> = ctx.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let mut gbar = analysis_lattice(ctx, lat, l, &ones, ybar, c_out);
        for kidx in 0..nk {
            let fold = ms.fold[kidx];
            for z in gbar[kidx * c_out..(kidx + 1) * c_out].iter_mut() {
                *z *= fold;
            }
        }
        let mut lbar = vec![0.0; ctx.dim];
        for (m, lm) in lbar.iter_mut().enumerate() {
            let t = synthesis_lattice(ctx, lat, l, ghat, c_out, true, PhasePart::Im, Some(m));
            *lm = ybar.iter().zip(t.iter()).map(|(a, b)| a * b).sum();
        }
        return (gbar, lbar);
    }

    let dim = ctx.dim;
    let phi = phase_matrix(ctx, l);
    let n = phi.n;
    // masked output rows carry no adjoint by construction, and the zero Phi
    // rows make that structural in the products below
    let acc_re = mm_tn(&phi.re, ybar, nk, n, c_out);
    let acc_im = mm_tn(&phi.im, ybar, nk, n, c_out);
    // log-L: d Re[psi g]/d log L_m = theta' Im[psi g] with
    // theta' = 2 pi k_m x_m / L_m and Im[conj(phi) g] = phi_re g_im - phi_im g_re
    let (g_re, g_im) = folded_sum(ctx, ghat, c_out);
    let t_re = mm_nt(ybar, &g_re, n, c_out, nk);
    let t_im = mm_nt(ybar, &g_im, n, c_out, nk);
    let mut lbar = vec![0.0; dim];
    for j in 0..n {
        if !ctx.mask[j] {
            continue;
        }
        let xj = &ctx.coords[j * dim..(j + 1) * dim];
        let row = j * nk;
        for kidx in 0..nk {
            let s1 = phi.re[row + kidx] * t_im[row + kidx] - phi.im[row + kidx] * t_re[row + kidx];
            if s1 == 0.0 {
                continue;
            }
            let kvec = ms.mode(kidx);
            for (m, lm) in lbar.iter_mut().enumerate() {
                let km = kvec[m] as f64;
                if km != 0.0 {
                    *lm += s1 * 2.0 * PI * km * xj[m] / l[m];
                }
            }
        }
    }
    // replicate per subdomain with the fold factors
    let mut gbar = vec![Complex64::ZERO; ctx.n_seg * nk * c_out];
    for s in 0..ctx.n_seg {
        for kidx in 0..nk {
            let fold = ms.fold[kidx];
            let dst = ((s * nk) + kidx) * c_out;
            for ch in 0..c_out {
                gbar[dst + ch] =
                    fold * Complex64::new(acc_re[kidx * c_out + ch], acc_im[kidx * c_out + ch]);
            }
        }
    }
    (gbar, lbar)
}

/// Adjoints of `analysis_forward`: returns (field_bar [n, c], log_l_bar).
pub(crate) fn analysis_backward(
    ctx: &std::sync::Arc<NuftCtx>,
    l: &[f64],
    fbar: &[Complex64],
    field: &[f64],
    c: usize,
) -> (Vec<f64>, Vec<f64>) {
    let ms = &ctx.modes;
    let nk = ms.n_modes();
    if let (Some(lat), true, 2) = (&ctx.lattice, ctx.n_seg == 1, ctx.dim) {
        // d/dfield: synthesis of the adjoint spectrum without folding,
        // scaled by the quadrature weights
        let mut gf = synthesis_lattice(ctx, lat, l, fbar, c, false, PhasePart::Re, None);
        for i in 0..ctx.n_nodes {
            let w = ctx.quad_w[i];
            for ch in 0..c {
                gf[i * c + ch] *= w;
            }
        }
        let mut lbar = vec![0.0; ctx.dim];
        for (m, lm) in lbar.iter_mut().enumerate() {
            let t = synthesis_lattice(ctx, lat, l, fbar, c, false, PhasePart::Im, Some(m));
            let mut acc = 0.0;
            for i in 0..ctx.n_nodes {
                let w = ctx.quad_w[i];
                if w == 0.0 {
                    continue;
                }
                for ch in 0..c {
                    acc += w * field[i * c + ch] * t[i * c + ch];
                }
            }
            *lm = acc;
        }
        return (gf, lbar);
    }

    let dim = ctx.dim;
    let phi = phase_matrix(ctx, l);
    let n = phi.n;
    let mut out = vec![0.0; n * c];
    let mut lbar = vec![0.0; dim];
    // per subdomain block: rows of that subdomain read their own spectrum
    let mut fb_re = vec![0.0; nk * c];
    let mut fb_im = vec![0.0; nk * c];
    for s in 0..ctx.n_seg {
        for (idx, z) in fbar[s * nk * c..(s + 1) * nk * c].iter().enumerate() {
            fb_re[idx] = z.re;
            fb_im[idx] = z.im;
        }
        // field_bar rows: w (phi_re fbar_re + phi_im fbar_im)
        let mut o_s = mm(&phi.re, &fb_re, n, nk, c);
        let t = mm(&phi.im, &fb_im, n, nk, c);
        for (x, y) in o_s.iter_mut().zip(t.iter()) {
            *x += y;
        }
        // log-L sweeps: Im[conj(phi) fbar] = phi_re fbar_im - phi_im fbar_re
        let p = mm_nt(field, &fb_im, n, c, nk);
        let q = mm_nt(field, &fb_re, n, c, nk);
        for i in 0..n {
            let w = ctx.quad_w[i];
            if w == 0.0 || !ctx.mask[i] || (ctx.n_seg > 1 && ctx.seg[i] as usize != s) {
                continue;
            }
            let orow = &mut out[i * c..(i + 1) * c];
            for (x, y) in orow.iter_mut().zip(&o_s[i * c..(i + 1) * c]) {
                *x = w * y;
            }
            let xi = &ctx.coords[i * dim..(i + 1) * dim];
            let row = i * nk;
            for kidx in 0..nk {
                let s1 = phi.re[row + kidx] * p[row + kidx] - phi.im[row + kidx] * q[row + kidx];
                if s1 == 0.0 {
                    continue;
                }
                let kvec = ms.mode(kidx);
                for (m, lm) in lbar.iter_mut().enumerate() {
                    let km = kvec[m] as f64;
                    if km != 0.0 {
                        *lm += w * s1 * 2.0 * PI * km * xi[m] / l[m];
                    }
                }
            }
        }
    }
    (out, lbar)
}

// ---------------------------------------------------------------------------
// Separable lattice path (dim == 2, single subdomain)
// ---------------------------------------------------------------------------

/// Phase matrix [n_pts, 2 k_max + 1] for one axis, as split re/im buffers.
/// `sign` is -1 for analysis, +1 for synthesis. Column q corresponds to
/// frequency k = q - k_max. With `x_factor`, row entries are multiplied by
/// the axis coordinate (length-scale derivative terms).
fn axis_phase_matrix(
    axis: &[f64],
    l_m: f64,
    k_max: usize,
    sign: f64,
    x_factor: bool,
) -> (Vec<f64>, Vec<f64>) {
    let kbox = 2 * k_max + 1;
    let mut re = vec![0.0; axis.len() * kbox];
    let mut im = vec![0.0; axis.len() * kbox];
    for (p, &x) in axis.iter().enumerate() {
        let base = Complex64::from_polar(1.0, sign * 2.0 * PI * x / l_m);
        let mut pow = Complex64::new(1.0, 0.0);
        let row = p * kbox;
        for q in 0..=k_max {
            let mut plus = pow;
            let mut minus = pow.conj();
            if x_factor {
                plus *= x;
                minus *= x;
            }
            re[row + k_max + q] = plus.re;
            im[row + k_max + q] = plus.im;
            re[row + k_max - q] = minus.re;
            im[row + k_max - q] = minus.im;
            pow *= base;
        }
    }
    (re, im)
}

fn analysis_lattice(
    ctx: &NuftCtx,
    lat: &Lattice,
    l: &[f64],
    node_w: &[f64],
    field: &[f64],
    c: usize,
) -> Vec<Complex64> {
    let ms = &ctx.modes;
    let k_max = ms.k_max;
    let kbox = 2 * k_max + 1;
    let (n1, n2) = (lat.axes[0].len(), lat.axes[1].len());

    // gather the weighted field onto the lattice
    let mut g = vec![0.0; n1 * n2 * c];
    for p1 in 0..n1 {
        for p2 in 0..n2 {
            let node = lat.node_at[p1 * n2 + p2];
            let w = node_w[node];
            if w == 0.0 {
                continue;
            }
            let dst = (p1 * n2 + p2) * c;
            for ch in 0..c {
                g[dst + ch] = w * field[node * c + ch];
            }
        }
    }

    // contract axis 0: A[k1, p2, ch] = sum_{p1} phi1[p1, k1] g[p1, p2, ch]
    let (phi1_re, phi1_im) = axis_phase_matrix(&lat.axes[0], l[0], k_max, -1.0, false);
    let a_re = mm_tn(&phi1_re, &g, kbox, n1, n2 * c);
    let a_im = mm_tn(&phi1_im, &g, kbox, n1, n2 * c);

    // transpose to B[p2, k1, ch]
    let mut b_re = vec![0.0; n2 * kbox * c];
    let mut b_im = vec![0.0; n2 * kbox * c];
    for k1 in 0..kbox {
        for p2 in 0..n2 {
            let src = (k1 * n2 + p2) * c;
            let dst = (p2 * kbox + k1) * c;
            b_re[dst..dst + c].copy_from_slice(&a_re[src..src + c]);
            b_im[dst..dst + c].copy_from_slice(&a_im[src..src + c]);
        }
    }

    // contract axis 1: C[k2, k1, ch] = sum_{p2} phi2[p2, k2] B[p2, k1, ch]
    let (phi2_re, phi2_im) = axis_phase_matrix(&lat.axes[1], l[1], k_max, -1.0, false);
    let mut c_re = mm_tn(&phi2_re, &b_re, kbox, n2, kbox * c);
    let c_im1 = mm_tn(&phi2_im, &b_im, kbox, n2, kbox * c);
    for (x, y) in c_re.iter_mut().zip(c_im1.iter()) {
        *x -= y;
    }
    let mut c_im = mm_tn(&phi2_re, &b_im, kbox, n2, kbox * c);
    let c_im2 = mm_tn(&phi2_im, &b_re, kbox, n2, kbox * c);
    for (x, y) in c_im.iter_mut().zip(c_im2.iter()) {
        *x += y;
    }

    // extract the half-space modes
    let nk = ms.n_modes();
    let mut out = vec![Complex64::ZERO; nk * c];
    for kidx in 0..nk {
        let kv = ms.mode(kidx);
        let (q1, q2) = ((kv[0] + k_max as i32) as usize, (kv[1] + k_max as i32) as usize);
        let src = (q2 * kbox + q1) * c;
        let dst = kidx * c;
        for ch in 0..c {
            out[dst + ch] = Complex64::new(c_re[src + ch], c_im[src + ch]);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn synthesis_lattice(
    ctx: &NuftCtx,
    lat: &Lattice,
    l: &[f64],
    ghat: &[Complex64],
    c_out: usize,
    use_fold: bool,
    part: PhasePart,
    deriv_dim: Option<usize>,
) -> Vec<f64> {
    let ms = &ctx.modes;
    let k_max = ms.k_max;
    let kbox = 2 * k_max + 1;
    let (n1, n2) = (lat.axes[0].len(), lat.axes[1].len());

    // zero-padded full-box spectrum with per-mode prefactors applied
    let mut gb_re = vec![0.0; kbox * kbox * c_out];
    let mut gb_im = vec![0.0; kbox * kbox * c_out];
    for kidx in 0..ms.n_modes() {
        let kv = ms.mode(kidx);
        let mut factor = if use_fold { ms.fold[kidx] } else { 1.0 };
        if let Some(m) = deriv_dim {
            // the k-dependent part of 2 pi k_m x_m / L_m; x_m lands in the
            // axis matrix below
            factor *= 2.0 * PI * kv[m] as f64 / l[m];
        }
        if factor == 0.0 {
            continue;
        }
        let (q1, q2) = ((kv[0] + k_max as i32) as usize, (kv[1] + k_max as i32) as usize);
        let dst = (q1 * kbox + q2) * c_out;
        let src = kidx * c_out;
        for ch in 0..c_out {
            gb_re[dst + ch] = factor * ghat[src + ch].re;
            gb_im[dst + ch] = factor * ghat[src + ch].im;
        }
    }

    // contract axis 0: E[p1, k2, o] = sum_{k1} psi1[p1, k1] Gb[k1, k2, o]
    let (psi1_re, psi1_im) =
        axis_phase_matrix(&lat.axes[0], l[0], k_max, 1.0, deriv_dim == Some(0));
    let mut e_re = mm(&psi1_re, &gb_re, n1, kbox, kbox * c_out);
    let t = mm(&psi1_im, &gb_im, n1, kbox, kbox * c_out);
    for (x, y) in e_re.iter_mut().zip(t.iter()) {
        *x -= y;
    }
    let mut e_im = mm(&psi1_re, &gb_im, n1, kbox, kbox * c_out);
    let t = mm(&psi1_im, &gb_re, n1, kbox, kbox * c_out);
    for (x, y) in e_im.iter_mut().zip(t.iter()) {
        *x += y;
    }

    // transpose to E'[k2, p1, o]
    let mut f_re = vec![0.0; kbox * n1 * c_out];
    let mut f_im = vec![0.0; kbox * n1 * c_out];
    for p1 in 0..n1 {
        for k2 in 0..kbox {
            let src = (p1 * kbox + k2) * c_out;
            let dst = (k2 * n1 + p1) * c_out;
            f_re[dst..dst + c_out].copy_from_slice(&e_re[src..src + c_out]);
            f_im[dst..dst + c_out].copy_from_slice(&e_im[src..src + c_out]);
        }
    }

    // contract axis 1: Y[p2, p1, o] = sum_{k2} psi2[p2, k2] E'[k2, p1, o]
    let (psi2_re, psi2_im) =
        axis_phase_matrix(&lat.axes[1], l[1], k_max, 1.0, deriv_dim == Some(1));
    let y = match part {
        PhasePart::Re => {
            let mut y = mm(&psi2_re, &f_re, n2, kbox, n1 * c_out);
            let t = mm(&psi2_im, &f_im, n2, kbox, n1 * c_out);
            for (x, v) in y.iter_mut().zip(t.iter()) {
                *x -= v;
            }
            y
        }
        PhasePart::Im => {
            let mut y = mm(&psi2_re, &f_im, n2, kbox, n1 * c_out);
            let t = mm(&psi2_im, &f_re, n2, kbox, n1 * c_out);
            for (x, v) in y.iter_mut().zip(t.iter()) {
                *x += v;
            }
            y
        }
    };

    // scatter back to nodes
    let mut out = vec![0.0; ctx.n_nodes * c_out];
    for p1 in 0..n1 {
        for p2 in 0..n2 {
            let node = lat.node_at[p1 * n2 + p2];
            let src = (p2 * n1 + p1) * c_out;
            out[node * c_out..(node + 1) * c_out].copy_from_slice(&y[src..src + c_out]);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Least-squares gradient message passing
// ---------------------------------------------------------------------------

/// Compressed adjacency carrying the pseudoinverse edge weight vectors.
#[derive(Debug, Clone)]
pub struct GradAdjacency {
    /// CSR offsets, length n + 1.
    pub offsets: Vec<usize>,
    /// Neighbor node index per edge.
    pub neighbors: Vec<usize>,
    /// Flat [n_edges, dim] weight vectors.
    pub weights: Vec<f64>,
    pub dim: usize,
}

impl GradAdjacency {
    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.len()
    }
}

/// out[i, m, ch] = sum_j w[ij, m] (f[j, ch] - f[i, ch]), flat [n, dim * c].
pub(crate) fn edge_gradient(adj: &GradAdjacency, f: &[f64], c: usize) -> Vec<f64> {
    let n = adj.n_nodes();
    let d = adj.dim;
    let mut out = vec![0.0; n * d * c];
    for i in 0..n {
        let row = &mut out[i * d * c..(i + 1) * d * c];
        let fi = &f[i * c..(i + 1) * c];
        for e in adj.offsets[i]..adj.offsets[i + 1] {
            let j = adj.neighbors[e];
            let fj = &f[j * c..(j + 1) * c];
            let w = &adj.weights[e * d..(e + 1) * d];
            for (m, &wm) in w.iter().enumerate() {
                if wm == 0.0 {
                    continue;
                }
                let dst = &mut row[m * c..(m + 1) * c];
                for ch in 0..c {
                    dst[ch] += wm * (fj[ch] - fi[ch]);
                }
            }
        }
    }
    out
}

/// Transpose message pass: accumulate d(loss)/d(f) from the gradient adjoint.
pub(crate) fn edge_gradient_transpose(adj: &GradAdjacency, gbar: &[f64], c: usize) -> Vec<f64> {
    let n = adj.n_nodes();
    let d = adj.dim;
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        let gi = &gbar[i * d * c..(i + 1) * d * c];
        for e in adj.offsets[i]..adj.offsets[i + 1] {
            let j = adj.neighbors[e];
            let w = &adj.weights[e * d..(e + 1) * d];
            for (m, &wm) in w.iter().enumerate() {
                if wm == 0.0 {
                    continue;
                }
                let src = &gi[m * c..(m + 1) * c];
                for ch in 0..c {
                    let v = wm * src[ch];
                    out[j * c + ch] += v;
                    out[i * c + ch] -= v;
                }
            }
        }
    }
    out
}
