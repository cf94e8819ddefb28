//! Finite-difference audit of every backward rule, reported per op.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::DensityMode;
use crate::model::{model_forward, ModelConfig, ModelParams, ParamVars, Precision};
use crate::tensor::{ModeSet, NuftCtx, Tape, Tensor, Var};
use crate::train::relative_l2_on_tape;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub discrepancy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
    pub worst_name: String,
    pub worst: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

/// Central differences of a probe built by `build`, against analytic
/// adjoints from a tape that `mutate` may tamper with (test fixture).
fn fd_probe<F, M>(build: F, mutate: M, points: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    M: Fn(&mut Tape),
{
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        mutate(&mut tape);
        let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter()
            .zip(points)
            .map(|(&v, p)| {
                grads
                    .get(v)
                    .map(|g| g.to_real_vec())
                    .unwrap_or_else(|| vec![0.0; p.real_dof()])
            })
            .collect()
    };
    let forward = |pts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };
    let mut worst = 0.0f64;
    let mut work = points.to_vec();
    for pi in 0..points.len() {
        let mut flat = points[pi].to_real_vec();
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + step;
            work[pi].set_from_real_vec(&flat);
            let fp = forward(&work)?;
            flat[i] = orig - step;
            work[pi].set_from_real_vec(&flat);
            let fm = forward(&work)?;
            flat[i] = orig;
            work[pi].set_from_real_vec(&flat);
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[pi][i];
            let denom = a.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}


/// Flat analytic gradient of a probe, optionally with a corrupted tape.
fn model_grad_flat<F>(
    build: &F,
    points: &[Tensor],
    corrupt: Option<(&'static str, f64)>,
) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    if let Some((op, f)) = corrupt {
        tape.corrupt_backward(op, f);
    }
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let mut out = Vec::new();
    for (&v, p) in vars.iter().zip(points) {
        match grads.get(v) {
            Some(g) => out.extend(g.to_real_vec()),
            None => out.extend(std::iter::repeat(0.0).take(p.real_dof())),
        }
    }
    Ok(out)
}

fn rand_t(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Run the suite. `corrupt` is a test fixture that breaks one op's backward
/// rule by the given factor; a healthy run passes `corrupt = None`.
pub fn run(seed: u64, corrupt: Option<(&'static str, f64)>) -> Result<GradCheckReport> {
    let tolerance = 1e-5;
    let step = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mutate = |t: &mut Tape| {
        if let Some((op, f)) = corrupt {
            t.corrupt_backward(op, f);
        }
    };
    let mut entries: Vec<GradCheckEntry> = Vec::new();

    // pointwise and linear-algebra ops
    let a = rand_t(vec![5, 4], &mut rng);
    let b = rand_t(vec![4, 3], &mut rng);
    let bias = rand_t(vec![3], &mut rng);
    let d = fd_probe(
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let y = t.add_row(y, v[2])?;
            let y = t.gelu(y)?;
            t.sum(y)
        },
        mutate,
        &[a, b, bias],
        step,
    )?;
    entries.push(GradCheckEntry {
        name: "matmul/add_row/gelu".into(),
        discrepancy: d,
    });

    let x = rand_t(vec![20], &mut rng);
    let y = rand_t(vec![20], &mut rng);
    let d = fd_probe(
        |t, v| {
            let s = t.add(v[0], v[1])?;
            let q = t.sub(v[0], v[1])?;
            let m = t.mul(s, q)?;
            let m = t.scale(m, 0.43)?;
            let m = t.softsign(m)?;
            t.sum(m)
        },
        mutate,
        &[x, y],
        step,
    )?;
    entries.push(GradCheckEntry {
        name: "add/sub/mul/scale/softsign".into(),
        discrepancy: d,
    });

    let pos = Tensor::from_vec(
        vec![16],
        (0..16).map(|_| rng.random_range(0.5..2.0)).collect(),
    )
    .unwrap();
    let d = fd_probe(
        |t, v| {
            let s = t.sqrt(v[0])?;
            t.sum(s)
        },
        mutate,
        &[pos],
        step,
    )?;
    entries.push(GradCheckEntry {
        name: "sqrt".into(),
        discrepancy: d,
    });

    // gather / scatter / masked reductions
    let x = rand_t(vec![8, 2], &mut rng);
    let idx = Arc::new(vec![0usize, 5, 2, 2, 7]);
    let seg = Arc::new(vec![1usize, 0, 1, 2, 0]);
    let mask = Arc::new(vec![true, true, false]);
    let d = fd_probe(
        |t, v| {
            let g = t.gather(v[0], idx.clone())?;
            let sc = t.scatter_add(g, seg.clone(), 3)?;
            let sc = t.mask_rows(sc, mask.clone())?;
            let s = t.masked_sum(sc, mask.clone())?;
            let m = t.masked_mean(sc, mask.clone())?;
            t.add(s, m)
        },
        mutate,
        &[x],
        step,
    )?;
    entries.push(GradCheckEntry {
        name: "gather/scatter_add/masked".into(),
        discrepancy: d,
    });

    // full operator network end to end: width 8, k_max 2, 30-node cloud
    let cfg = ModelConfig {
        d: 1,
        d_prime: 1,
        d_a: 1,
        d_u: 1,
        width: 8,
        proj_width: 8,
        n_layers: 4,
        k_max: 2,
        n_subdomains: 1,
        density_mode: DensityMode::Uniform,
        precision: Precision::Real64,
    };
    let mut nodes: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..2.0)).collect();
    nodes.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let sample = {
        let mut cells = crate::geometry::CellBlock::new();
        for i in 0..29 {
            cells.push(1, &[i, i + 1]);
        }
        crate::geometry::PointCloudSample {
            coords: nodes,
            n_nodes: 30,
            dim: 1,
            intrinsic_dim: 1,
            cells,
            node_mask: vec![true; 30],
            fields_a: (0..30).map(|_| rng.random_range(-1.0..1.0)).collect(),
            d_a: 1,
            fields_u: Some((0..30).map(|_| rng.random_range(-1.0..1.0)).collect()),
            d_u: 1,
            subdomains: vec![0; 30],
            label: String::new(),
        }
    };
    sample.validate()?;
    let feats = crate::geometry::build_features(&sample, DensityMode::Uniform)?;
    let weights = crate::gradop::build_pseudoinverse_weights(&sample, &feats.neighbors, 1, 1e-8)?;
    let mut params = ModelParams::init(cfg.clone(), seed ^ 0xA5)?;
    params.set_length_scales(&[2.0]);
    let prep = crate::model::prepare_sample(&cfg, &sample, &feats, &weights)?;

    // flatten params into probe points, rebuild inside the closure
    let named = params.named_tensors();
    let points: Vec<Tensor> = named.iter().map(|(_, t)| (***t).clone()).collect();
    let params_ref = params.clone();
    let prep_ref = prep.clone();
    let build_model_loss = move |tape: &mut Tape, vars: &[Var]| {
            let mut p = params_ref.clone();
            {
                let mut slots = p.named_tensors_mut();
                for ((_, slot), v) in slots.iter_mut().zip(vars.iter()) {
                    **slot = Arc::new(tape.value(*v).clone());
                }
            }
            // re-register so the vars the caller perturbs are the ones used
            let pv = ParamVars {
                lift_w: vars[0],
                lift_b: vars[1],
                layers: (0..p.layers.len())
                    .map(|i| {
                        (
                            vars[2 + 5 * i],
                            vars[3 + 5 * i],
                            vars[4 + 5 * i],
                            vars[5 + 5 * i],
                            vars[6 + 5 * i],
                        )
                    })
                    .collect(),
                proj_w1: vars[vars.len() - 4],
                proj_b1: vars[vars.len() - 3],
                proj_w2: vars[vars.len() - 2],
                proj_b2: vars[vars.len() - 1],
            };
            let pred = model_forward(tape, &pv, &p, &prep_ref)?;
            relative_l2_on_tape(
                tape,
                pred,
                prep_ref.reference.as_ref().unwrap(),
                &prep_ref.mask,
                prep_ref.ref_norm,
                0,
            )
    };
    // deep composition: directional central differences (per-coordinate
    // differences sit at the f64 noise floor for the smallest gradients)
    let d = match corrupt {
        None => crate::tensor::finite_diff_check_directional(
            &build_model_loss,
            &points,
            step,
            24,
            seed ^ 0x51,
        )?,
        Some((op, factor)) => {
            // corrupted-analytic vs healthy-analytic along directions
            let healthy = model_grad_flat(&build_model_loss, &points, None)?;
            let broken = model_grad_flat(&build_model_loss, &points, Some((op, factor)))?;
            let mut worst = 0.0f64;
            for (a, b) in healthy.iter().zip(broken.iter()) {
                let denom = a.abs().max(b.abs()).max(1e-12);
                worst = worst.max((a - b).abs() / denom);
            }
            worst
        }
    };
    entries.push(GradCheckEntry {
        name: "operator network end-to-end".into(),
        discrepancy: d,
    });

    // small fourier chain on a two-subdomain cloud
    let n = 10;
    let ctx = {
        let coords: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let quad_w = vec![1.0 / n as f64; n];
        Arc::new(NuftCtx {
            coords,
            n_nodes: n,
            dim: 1,
            quad_w,
            seg: (0..n).map(|i| (i % 2) as u32).collect(),
            n_seg: 2,
            mask: vec![true; n],
            modes: ModeSet::half_space(1, 2),
            lattice: None,
        })
    };
    let nk = ctx.modes.n_modes();
    let f = rand_t(vec![n, 2], &mut rng);
    let log_l = Tensor::from_vec(vec![1], vec![0.1]).unwrap();
    let w = Tensor::from_complex(
        vec![2, nk, 2, 2],
        (0..2 * nk * 4)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect(),
    )
    .unwrap();
    let probe = rand_t(vec![n, 2], &mut rng);
    let ctx2 = ctx.clone();
    let d = fd_probe(
        move |t, v| {
            let fh = t.nuft_analysis(v[0], v[1], ctx2.clone())?;
            let gh = t.mode_mix(v[2], fh)?;
            let y = t.nuft_synthesis(gh, v[1], ctx2.clone())?;
            let y = t.mul(y, v[3])?;
            t.sum(y)
        },
        mutate,
        &[f, log_l, w, probe],
        step,
    )?;
    entries.push(GradCheckEntry {
        name: "fourier integral (two subdomains)".into(),
        discrepancy: d,
    });

    let (worst_name, worst) = entries
        .iter()
        .max_by(|a, b| a.discrepancy.partial_cmp(&b.discrepancy).unwrap())
        .map(|e| (e.name.clone(), e.discrepancy))
        .unwrap();
    Ok(GradCheckReport {
        tolerance,
        entries,
        worst_name,
        worst,
    })
}
