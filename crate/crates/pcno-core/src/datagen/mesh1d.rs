//! 1d mesh families for the transport study: uniform, exponentially graded
//! and linearly graded, the latter two refined toward the right end where
//! the boundary layer sits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshKind {
    Uniform,
    Exponential,
    Linear,
}

impl MeshKind {
    pub const ALL: [MeshKind; 3] = [MeshKind::Uniform, MeshKind::Exponential, MeshKind::Linear];

    pub fn name(self) -> &'static str {
        match self {
            MeshKind::Uniform => "uniform",
            MeshKind::Exponential => "exponential",
            MeshKind::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(MeshKind::Uniform),
            "exponential" => Ok(MeshKind::Exponential),
            "linear" => Ok(MeshKind::Linear),
            other => Err(Error::InvalidConfig {
                field: "mesh_kind".into(),
                reason: format!("unknown kind {other}"),
            }),
        }
    }
}

const UNIFORM_H: f64 = 2e-3;
const EXP_H_RIGHT: f64 = 1e-4;
const EXP_H_CAP: f64 = 1e-2;
const EXP_GROWTH: f64 = 1.05;
const LIN_H_RIGHT: f64 = 1e-3;
const LIN_H_LEFT: f64 = 1e-2;

/// Node coordinates on [0, L], ascending, with node[0] = 0 and
/// node[last] = L exactly (the final cell absorbs the remainder).
pub fn make_mesh_1d(kind: MeshKind, l: f64) -> Result<Vec<f64>> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::Mesh(format!("domain length {l} must be positive")));
    }
    let nodes = match kind {
        MeshKind::Uniform => {
            let n = (l / UNIFORM_H + 1e-9).floor() as usize;
            let mut v: Vec<f64> = (0..=n).map(|i| i as f64 * UNIFORM_H).collect();
            let last = *v.last().unwrap();
            if l - last > 0.25 * UNIFORM_H {
                v.push(l);
            } else {
                *v.last_mut().unwrap() = l;
            }
            v
        }
        MeshKind::Exponential | MeshKind::Linear => {
            // build from the right end where the fine spacing is prescribed
            let mut desc = vec![l];
            let mut pos = l;
            let mut h = match kind {
                MeshKind::Exponential => EXP_H_RIGHT,
                _ => LIN_H_RIGHT,
            };
            loop {
                if pos - h <= 0.25 * h {
                    break;
                }
                pos -= h;
                desc.push(pos);
                h = match kind {
                    MeshKind::Exponential => (h * EXP_GROWTH).min(EXP_H_CAP),
                    MeshKind::Linear => {
                        // spacing graded linearly in position between the
                        // right and left target sizes
                        let frac = (pos / l).clamp(0.0, 1.0);
                        LIN_H_LEFT + (LIN_H_RIGHT - LIN_H_LEFT) * frac
                    }
                    MeshKind::Uniform => unreachable!(),
                };
            }
            desc.push(0.0);
            desc.reverse();
            desc
        }
    };
    debug_assert!(nodes.windows(2).all(|w| w[1] > w[0]));
    Ok(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_mesh_node_count_and_spacing() {
        let v = make_mesh_1d(MeshKind::Uniform, 10.0).unwrap();
        assert_eq!(v.len(), 5001);
        for w in v.windows(2) {
            assert!((w[1] - w[0] - UNIFORM_H).abs() < 1e-12);
        }
    }

    #[test]
    fn endpoints_are_exact_for_all_kinds() {
        for kind in MeshKind::ALL {
            for l in [10.0, 12.3456, 15.0] {
                let v = make_mesh_1d(kind, l).unwrap();
                assert_eq!(v[0], 0.0, "{kind:?}");
                assert!((v[v.len() - 1] - l).abs() <= 1e-12, "{kind:?}");
                assert!(v.windows(2).all(|w| w[1] > w[0]));
            }
        }
    }

    #[test]
    fn exponential_mesh_grows_leftward_until_the_cap() {
        let v = make_mesh_1d(MeshKind::Exponential, 10.0).unwrap();
        // spacing list from the right end
        let mut spacings: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
        spacings.reverse();
        assert!((spacings[0] - EXP_H_RIGHT).abs() < 1e-12);
        let mut at_cap = false;
        for w in spacings.windows(2) {
            if at_cap {
                assert!((w[1] - EXP_H_CAP).abs() < 1e-12 || w[1] < EXP_H_CAP * 1.01);
            } else {
                assert!(w[1] >= w[0] - 1e-15, "spacing must grow leftward");
            }
            if (w[1] - EXP_H_CAP).abs() < 1e-15 {
                at_cap = true;
            }
        }
        // skip the adjusted final (leftmost) cell when checking the cap
        let interior_max = spacings[..spacings.len() - 1]
            .iter()
            .fold(0.0f64, |m, &x| m.max(x));
        assert!(interior_max <= EXP_H_CAP + 1e-15);
    }

    #[test]
    fn linear_mesh_grades_between_the_prescribed_sizes() {
        let v = make_mesh_1d(MeshKind::Linear, 10.0).unwrap();
        let n = v.len();
        let right_h = v[n - 1] - v[n - 2];
        assert!((right_h - LIN_H_RIGHT).abs() < 1e-12);
        // near the left end (excluding the adjusted final cell)
        let left_h = v[2] - v[1];
        assert!(left_h > 0.8 * LIN_H_LEFT && left_h <= LIN_H_LEFT * 1.01);
    }

    #[test]
    fn unknown_kind_string_is_rejected() {
        assert!(MeshKind::parse("chebyshev").is_err());
    }
}
