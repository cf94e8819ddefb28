//! Primitive-level oracle tests: frozen hand values, finite-difference checks
//! of every backward rule, linearity and determinism of the tape.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernels::GradAdjacency;
use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(shape: Vec<usize>, r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Random cloud context for the Fourier primitives.
fn make_ctx(n: usize, dim: usize, n_seg: usize, k_max: usize, seed: u64) -> Arc<NuftCtx> {
    let mut r = rng(seed);
    let coords: Vec<f64> = (0..n * dim).map(|_| r.random_range(0.0..1.0)).collect();
    let mut quad_w: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
    let total: f64 = quad_w.iter().sum();
    quad_w.iter_mut().for_each(|w| *w /= total);
    let seg: Vec<u32> = (0..n).map(|i| (i % n_seg) as u32).collect();
    Arc::new(NuftCtx {
        coords,
        n_nodes: n,
        dim,
        quad_w,
        seg,
        n_seg,
        mask: vec![true; n],
        modes: ModeSet::half_space(dim, k_max),
        lattice: None,
    })
}

#[test]
fn gelu_softsign_scatter_trivial_values() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::from_vec(vec![3], vec![0.0, 3.0, -1.0]).unwrap());
    let g = t.gelu(x).unwrap();
    assert_eq!(t.value(g).real()[0], 0.0);
    let s = t.softsign(x).unwrap();
    assert_eq!(t.value(s).real()[1], 0.75);
    assert_eq!(t.value(s).real()[2], -0.5);

    let v = t.leaf(Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let out = t.scatter_add(v, Arc::new(vec![0, 0, 1]), 2).unwrap();
    assert_eq!(t.value(out).real(), &[3.0, 3.0]);
}

#[test]
fn backward_of_linear_map_replicates_input() {
    // loss = sum(W x) with fixed x => dL/dW_ij = x_j for every row i
    let mut t = Tape::new();
    let w = t.leaf(rand_tensor(vec![3, 2], &mut rng(1)));
    let x = t.leaf(Tensor::from_vec(vec![2, 1], vec![0.7, -1.3]).unwrap());
    let y = t.matmul(w, x).unwrap();
    let loss = t.sum(y).unwrap();
    let grads = t.backward(loss).unwrap();
    let gw = grads.get(w).unwrap().real();
    for row in 0..3 {
        assert!((gw[row * 2] - 0.7).abs() < 1e-15);
        assert!((gw[row * 2 + 1] + 1.3).abs() < 1e-15);
    }
}

#[test]
fn backward_of_squared_norm_is_two_p() {
    let mut t = Tape::new();
    let p = t.leaf(Tensor::from_vec(vec![4], vec![0.5, -2.0, 1.5, 0.0]).unwrap());
    let sq = t.mul(p, p).unwrap();
    let loss = t.sum(sq).unwrap();
    let grads = t.backward(loss).unwrap();
    let gp = grads.get(p).unwrap().real();
    assert_eq!(gp, &[1.0, -4.0, 3.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut t = Tape::new();
    let x = t.leaf(rand_tensor(vec![2, 2], &mut rng(2)));
    assert!(matches!(
        t.backward(x),
        Err(crate::Error::NonScalarLoss { .. })
    ));
}

#[test]
fn shape_mismatch_is_rejected_with_shapes() {
    let mut t = Tape::new();
    let a = t.leaf(rand_tensor(vec![2, 3], &mut rng(3)));
    let b = t.leaf(rand_tensor(vec![2, 3], &mut rng(4)));
    match t.matmul(a, b) {
        Err(crate::Error::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape mismatch, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn strict_mode_rejects_non_finite() {
    let mut t = Tape::new().strict(true);
    let x = t.leaf(Tensor::from_vec(vec![2], vec![1.0, f64::NAN]).unwrap());
    assert!(matches!(t.gelu(x), Err(crate::Error::NonFinite { .. })));
}

#[test]
fn fd_simple_examples() {
    // sum of squares: essentially exact
    let p = rand_tensor(vec![10], &mut rng(5));
    let d = finite_diff_check(
        |t, x| {
            let sq = t.mul(x, x)?;
            t.sum(sq)
        },
        &p,
        1e-6,
    )
    .unwrap();
    assert!(d <= 1e-9, "sum of squares fd discrepancy {d}");

    // softsign at 0.5
    let p = Tensor::from_vec(vec![1], vec![0.5]).unwrap();
    let d = finite_diff_check(
        |t, x| {
            let s = t.softsign(x)?;
            t.sum(s)
        },
        &p,
        1e-6,
    )
    .unwrap();
    assert!(d <= 1e-7, "softsign fd discrepancy {d}");
}

/// Worst relative FD discrepancy for one primitive wrapped into a scalar
/// probe loss sum(out * random_const).
fn probe<F>(build: F, points: &[Tensor]) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> crate::Result<Var>,
{
    finite_diff_check_multi(build, points, 1e-6).unwrap()
}

#[test]
fn fd_every_real_primitive() {
    let mut r = rng(7);
    let tol = 1e-5;

    // matmul + add_row + gelu
    let a = rand_tensor(vec![6, 5], &mut r);
    let b = rand_tensor(vec![5, 4], &mut r);
    let bias = rand_tensor(vec![4], &mut r);
    let d = probe(
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let y = t.add_row(y, v[2])?;
            let y = t.gelu(y)?;
            t.sum(y)
        },
        &[a, b, bias],
    );
    assert!(d <= tol, "matmul/add_row/gelu: {d}");

    // add, sub, mul, scale, sqrt (positive inputs for sqrt)
    let x = rand_tensor(vec![25], &mut r);
    let y = rand_tensor(vec![25], &mut r);
    let d = probe(
        |t, v| {
            let s = t.add(v[0], v[1])?;
            let q = t.sub(v[0], v[1])?;
            let m = t.mul(s, q)?;
            let m = t.scale(m, 0.37)?;
            t.sum(m)
        },
        &[x, y],
    );
    assert!(d <= tol, "add/sub/mul/scale: {d}");

    let pos: Vec<f64> = (0..30).map(|_| r.random_range(0.5..2.0)).collect();
    let p = Tensor::from_vec(vec![30], pos).unwrap();
    let d = probe(
        |t, v| {
            let s = t.sqrt(v[0])?;
            t.sum(s)
        },
        &[p],
    );
    assert!(d <= tol, "sqrt: {d}");

    // softsign away from the kink
    let vals: Vec<f64> = (0..40)
        .map(|_| {
            let v: f64 = r.random_range(0.2..1.5);
            v * if r.random_bool(0.5) { 1.0 } else { -1.0 }
        })
        .collect();
    let p = Tensor::from_vec(vec![40], vals).unwrap();
    let d = probe(
        |t, v| {
            let s = t.softsign(v[0])?;
            let c = t.mul(s, s)?;
            t.sum(c)
        },
        &[p],
    );
    assert!(d <= tol, "softsign: {d}");

    // gather + scatter_add + masked reductions + mask_rows + channel_affine
    let x = rand_tensor(vec![8, 3], &mut r);
    let idx = Arc::new(vec![1usize, 3, 3, 7, 0]);
    let seg = Arc::new(vec![0usize, 2, 1, 2, 0]);
    let mask = Arc::new(vec![true, false, true, true]);
    let scale = Arc::new(vec![1.5, -0.5, 2.0]);
    let shift = Arc::new(vec![0.1, 0.2, -0.3]);
    let d = probe(
        |t, v| {
            let g = t.gather(v[0], idx.clone())?;
            let sc = t.scatter_add(g, seg.clone(), 4)?;
            let sc = t.channel_affine(sc, scale.clone(), shift.clone())?;
            let sc = t.mask_rows(sc, mask.clone())?;
            let s1 = t.masked_sum(sc, mask.clone())?;
            let s2 = t.masked_mean(sc, mask.clone())?;
            let s2 = t.scale(s2, 0.7)?;
            t.add(s1, s2)
        },
        &[x],
    );
    assert!(d <= tol, "gather/scatter/masked: {d}");

    // edge_gradient
    let adj = Arc::new(GradAdjacency {
        offsets: vec![0, 2, 4, 6, 8],
        neighbors: vec![1, 2, 0, 3, 0, 3, 1, 2],
        weights: (0..16).map(|i| 0.3 * (i as f64) - 1.1).collect(),
        dim: 2,
    });
    let f = rand_tensor(vec![4, 3], &mut r);
    let w = rand_tensor(vec![4, 6], &mut r);
    let d = probe(
        |t, v| {
            let g = t.edge_gradient(v[0], adj.clone())?;
            let g = t.mul(g, v[1])?;
            t.sum(g)
        },
        &[f, w],
    );
    assert!(d <= tol, "edge_gradient: {d}");
}

#[test]
fn fd_fourier_primitives_random_cloud() {
    for (dim, n_seg, seed) in [(1usize, 1usize, 11u64), (2, 1, 12), (2, 2, 13)] {
        let ctx = make_ctx(9, dim, n_seg, 2, seed);
        let mut r = rng(seed + 100);
        let c_in = 2;
        let c_out = 3;
        let nk = ctx.modes.n_modes();
        let f = rand_tensor(vec![9, c_in], &mut r);
        let log_l = Tensor::from_vec(
            vec![dim],
            (0..dim).map(|_| r.random_range(-0.3..0.3)).collect(),
        )
        .unwrap();
        let wdata: Vec<Complex64> = (0..n_seg * nk * c_out * c_in)
            .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect();
        let w = Tensor::from_complex(vec![n_seg, nk, c_out, c_in], wdata).unwrap();
        let probe_w = rand_tensor(vec![9, c_out], &mut r);

        let ctx2 = ctx.clone();
        let d = finite_diff_check_multi(
            move |t, v| {
                let fh = t.nuft_analysis(v[0], v[1], ctx2.clone())?;
                let gh = t.mode_mix(v[2], fh)?;
                let y = t.nuft_synthesis(gh, v[1], ctx2.clone())?;
                let y = t.mul(y, v[3])?;
                t.sum(y)
            },
            &[f, log_l, w, probe_w],
            1e-6,
        )
        .unwrap();
        assert!(
            d <= 1e-6,
            "fourier chain fd (dim={dim}, seg={n_seg}): {d}"
        );
    }
}

#[test]
fn fd_fourier_primitives_lattice_path() {
    // 4x3 grid triggers the separable kernels; same op surface
    let (n1, n2) = (4usize, 3usize);
    let mut coords = Vec::new();
    for i in 0..n1 {
        for j in 0..n2 {
            coords.push(i as f64 / (n1 - 1) as f64);
            coords.push(j as f64 / (n2 - 1) as f64);
        }
    }
    let n = n1 * n2;
    let mask = vec![true; n];
    let lattice = detect_lattice(&coords, n, 2, &mask);
    assert!(lattice.is_some());
    let mut r = rng(21);
    let mut quad_w: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
    let tot: f64 = quad_w.iter().sum();
    quad_w.iter_mut().for_each(|w| *w /= tot);
    let ctx = Arc::new(NuftCtx {
        coords,
        n_nodes: n,
        dim: 2,
        quad_w,
        seg: vec![0; n],
        n_seg: 1,
        mask,
        modes: ModeSet::half_space(2, 2),
        lattice,
    });
    let nk = ctx.modes.n_modes();
    let f = rand_tensor(vec![n, 2], &mut r);
    let log_l = Tensor::from_vec(vec![2], vec![0.1, -0.2]).unwrap();
    let wdata: Vec<Complex64> = (0..nk * 2 * 2)
        .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect();
    let w = Tensor::from_complex(vec![1, nk, 2, 2], wdata).unwrap();
    let probe_w = rand_tensor(vec![n, 2], &mut r);

    let ctx2 = ctx.clone();
    let d = finite_diff_check_multi(
        move |t, v| {
            let fh = t.nuft_analysis(v[0], v[1], ctx2.clone())?;
            let gh = t.mode_mix(v[2], fh)?;
            let y = t.nuft_synthesis(gh, v[1], ctx2.clone())?;
            let y = t.mul(y, v[3])?;
            t.sum(y)
        },
        &[f, log_l, w, probe_w],
        1e-6,
    )
    .unwrap();
    assert!(d <= 1e-6, "fourier lattice chain fd: {d}");
}

#[test]
fn lattice_and_generic_paths_agree() {
    let (n1, n2) = (5usize, 4usize);
    let mut coords = Vec::new();
    for i in 0..n1 {
        for j in 0..n2 {
            coords.push(i as f64 * 0.25);
            coords.push(j as f64 * 0.3 + 0.05);
        }
    }
    let n = n1 * n2;
    let mask = vec![true; n];
    let mut r = rng(31);
    let quad_w: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
    let modes = ModeSet::half_space(2, 3);
    let mk_ctx = |lat| {
        Arc::new(NuftCtx {
            coords: coords.clone(),
            n_nodes: n,
            dim: 2,
            quad_w: quad_w.clone(),
            seg: vec![0; n],
            n_seg: 1,
            mask: mask.clone(),
            modes: modes.clone(),
            lattice: lat,
        })
    };
    let ctx_lat = mk_ctx(detect_lattice(&coords, n, 2, &mask));
    assert!(ctx_lat.lattice.is_some());
    let ctx_gen = mk_ctx(None);

    let f = rand_tensor(vec![n, 3], &mut r);
    let log_l = Tensor::from_vec(vec![2], vec![0.2, -0.1]).unwrap();
    let nk = modes.n_modes();
    let wdata: Vec<Complex64> = (0..nk * 2 * 3)
        .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect();
    let w = Tensor::from_complex(vec![1, nk, 2, 3], wdata).unwrap();

    let run = |ctx: Arc<NuftCtx>| {
        let mut t = Tape::new();
        let fv = t.leaf(f.clone());
        let lv = t.leaf(log_l.clone());
        let wv = t.leaf(w.clone());
        let fh = t.nuft_analysis(fv, lv, ctx.clone()).unwrap();
        let gh = t.mode_mix(wv, fh).unwrap();
        let y = t.nuft_synthesis(gh, lv, ctx).unwrap();
        t.value(y).real().to_vec()
    };
    let a = run(ctx_lat);
    let b = run(ctx_gen);
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() <= 1e-12 * scale, "{x} vs {y}");
    }
}

#[test]
fn linearity_of_backward() {
    let mut t = Tape::new();
    let p = t.leaf(rand_tensor(vec![5], &mut rng(41)));
    let q = t.leaf(rand_tensor(vec![5], &mut rng(42)));
    let l1 = {
        let m = t.mul(p, q).unwrap();
        t.sum(m).unwrap()
    };
    let l2 = {
        let s = t.softsign(p).unwrap();
        let m = t.mul(s, q).unwrap();
        t.sum(m).unwrap()
    };
    let lsum = t.add(l1, l2).unwrap();

    let g1 = t.backward(l1).unwrap();
    let g2 = t.backward(l2).unwrap();
    let gs = t.backward(lsum).unwrap();
    for v in [p, q] {
        let a = g1.get(v).unwrap().real();
        let b = g2.get(v).unwrap().real();
        let s = gs.get(v).unwrap().real();
        for i in 0..a.len() {
            assert!((s[i] - (a[i] + b[i])).abs() <= 1e-14 * (1.0 + s[i].abs()));
        }
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let ctx = make_ctx(12, 2, 2, 2, 77);
        let mut r = rng(78);
        let mut t = Tape::new();
        let f = t.leaf(rand_tensor(vec![12, 2], &mut r));
        let l = t.leaf(Tensor::from_vec(vec![2], vec![0.05, -0.02]).unwrap());
        let nk = ctx.modes.n_modes();
        let wdata: Vec<Complex64> = (0..2 * nk * 2 * 2)
            .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect();
        let w = t.leaf(Tensor::from_complex(vec![2, nk, 2, 2], wdata).unwrap());
        let fh = t.nuft_analysis(f, l, ctx.clone()).unwrap();
        let gh = t.mode_mix(w, fh).unwrap();
        let y = t.nuft_synthesis(gh, l, ctx).unwrap();
        t.value(y).real().to_vec()
    };
    let a = run();
    let b = run();
    assert!(a
        .iter()
        .zip(b.iter())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn corrupted_backward_rule_fails_fd_check() {
    let p = rand_tensor(vec![6], &mut rng(51));
    // healthy
    let d = finite_diff_check(
        |t, x| {
            let g = t.gelu(x)?;
            t.sum(g)
        },
        &p,
        1e-6,
    )
    .unwrap();
    assert!(d <= 1e-6);
    // corrupted: same probe but the tape scales gelu's input adjoints
    let analytic = {
        let mut t = Tape::new();
        t.corrupt_backward("gelu", 1.01);
        let x = t.leaf(p.clone());
        let g = t.gelu(x).unwrap();
        let loss = t.sum(g).unwrap();
        let grads = t.backward(loss).unwrap();
        grads.get(x).unwrap().real().to_vec()
    };
    let healthy = {
        let mut t = Tape::new();
        let x = t.leaf(p.clone());
        let g = t.gelu(x).unwrap();
        let loss = t.sum(g).unwrap();
        let grads = t.backward(loss).unwrap();
        grads.get(x).unwrap().real().to_vec()
    };
    let rel: f64 = analytic
        .iter()
        .zip(healthy.iter())
        .map(|(a, b)| ((a - b) / b.abs().max(1e-12)).abs())
        .fold(0.0, f64::max);
    assert!(rel > 1e-5, "corruption must be visible: {rel}");
}

#[test]
fn masked_rows_do_not_leak_into_reductions() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::from_vec(vec![3, 2], vec![1.0, 2.0, 999.0, -999.0, 3.0, 4.0]).unwrap());
    let mask = Arc::new(vec![true, false, true]);
    let s = t.masked_sum(x, mask.clone()).unwrap();
    assert_eq!(t.value(s).item(), 10.0);
    let m = t.masked_mean(x, mask).unwrap();
    assert_eq!(t.value(m).item(), 2.5);
}
