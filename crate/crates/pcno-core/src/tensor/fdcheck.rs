//! Central finite-difference checks of tape adjoints.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compare the tape gradient of `build` at `point` against central finite
/// differences, coordinate by coordinate.
///
/// Returns the worst relative discrepancy, with denominator
/// `max(|analytic|, |numeric|, 1e-12)`. Complex coordinates are perturbed as
/// independent (re, im) pairs.
pub fn finite_diff_check<F>(build: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_diff_check_multi(
        |tape, vars| build(tape, vars[0]),
        std::slice::from_ref(point),
        step,
    )
}

/// Multi-input variant: perturbs every coordinate of every input tensor.
pub fn finite_diff_check_multi<F>(build: F, points: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(step > 0.0, "step must be positive");

    let forward = |pts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_diff_check",
                index: 0,
            });
        }
        Ok(value)
    };

    // analytic gradients once, at the base point
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        if !tape.value(loss).item().is_finite() {
            return Err(Error::NonFinite {
                op: "finite_diff_check",
                index: 0,
            });
        }
        let grads = tape.backward(loss)?;
        vars.iter()
            .zip(points.iter())
            .map(|(&v, p)| match grads.get(v) {
                Some(g) => g.to_real_vec(),
                None => vec![0.0; p.real_dof()],
            })
            .collect()
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = points.to_vec();
    for (pi, p) in points.iter().enumerate() {
        let mut flat = p.to_real_vec();
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

/// Directional variant for deep compositions: compares g . v against central
/// differences along random unit directions v.
///
/// Per-coordinate central differences carry an absolute noise floor of about
/// eps * |f| / step; coordinates whose true gradient sits below that floor
/// cannot be certified in relative terms no matter how correct the adjoint
/// is. Directional derivatives aggregate the whole gradient, so the compared
/// values stay well above the floor while still validating every backward
/// rule on the path.
pub fn finite_diff_check_directional<F>(
    build: F,
    points: &[Tensor],
    step: f64,
    n_directions: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    use rand::Rng;
    use rand::SeedableRng;
    assert!(step > 0.0 && n_directions > 0);

    let forward = |pts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_diff_check",
                index: 0,
            });
        }
        Ok(value)
    };

    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter()
            .zip(points.iter())
            .map(|(&v, p)| match grads.get(v) {
                Some(g) => g.to_real_vec(),
                None => vec![0.0; p.real_dof()],
            })
            .collect()
    };

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let total_dof: usize = points.iter().map(|p| p.real_dof()).sum();
    let mut worst: f64 = 0.0;
    for _ in 0..n_directions {
        let dir: Vec<f64> = (0..total_dof)
            .map(|_| rng.random_range(-1.0..1.0f64))
            .collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);

        let shifted = |sign: f64| -> Result<f64> {
            let mut work: Vec<Tensor> = points.to_vec();
            let mut off = 0;
            for (pi, p) in points.iter().enumerate() {
                let mut flat = p.to_real_vec();
                for (x, d) in flat.iter_mut().zip(&dir[off..off + p.real_dof()]) {
                    *x += sign * step * d / norm;
                }
                work[pi].set_from_real_vec(&flat);
                off += p.real_dof();
            }
            forward(&work)
        };
        let fp = shifted(1.0)?;
        let fm = shifted(-1.0)?;
        let numeric = (fp - fm) / (2.0 * step);

        let mut a = 0.0;
        let mut off = 0;
        for g in &analytic {
            for (gi, di) in g.iter().zip(&dir[off..off + g.len()]) {
                a += gi * di / norm;
            }
            off += g.len();
        }
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
