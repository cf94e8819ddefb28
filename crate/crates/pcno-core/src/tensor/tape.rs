//! Reverse-mode differentiation tape.
//!
//! Every primitive records its inputs and enough context to run its backward
//! rule. Nodes are created in topological order by construction; `backward`
//! walks them in reverse, accumulating adjoints. One tape handles one sample;
//! parameter tensors are shared into the tape as `Arc` leaves and stay
//! read-only during the pass.

use std::sync::Arc;

use num_complex::Complex64;

use super::kernels::{self, GradAdjacency, NuftCtx};
use super::{Buffer, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
pub enum Op {
    Leaf,
    /// [m, k] x [k, n] -> [m, n]
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    /// [n, c] + [c] broadcast over rows
    AddRow { a: Var, b: Var },
    /// multiply by a host-side scalar constant
    Scale { a: Var, c: f64 },
    Gelu { a: Var, phi: Vec<f64> },
    SoftSign { a: Var },
    Sqrt { a: Var },
    /// row gather: out[r] = a[idx[r]]
    Gather { a: Var, idx: Arc<Vec<usize>> },
    /// segment sum: out[seg[r]] += a[r]
    ScatterAdd {
        a: Var,
        seg: Arc<Vec<usize>>,
        out_rows: usize,
    },
    /// sum over unmasked rows, all channels -> scalar
    MaskedSum { a: Var, mask: Arc<Vec<bool>> },
    /// mean over unmasked entries -> scalar
    MaskedMean { a: Var, mask: Arc<Vec<bool>> },
    /// zero out masked rows
    MaskRows { a: Var, mask: Arc<Vec<bool>> },
    /// per-channel constant affine: out = a * scale + shift
    ChannelAffine {
        a: Var,
        scale: Arc<Vec<f64>>,
        shift: Arc<Vec<f64>>,
    },
    Sum { a: Var },
    /// least-squares gradient message pass: [n, c] -> [n, d * c]
    EdgeGradient { f: Var, adj: Arc<GradAdjacency> },
    /// weighted forward transform e^{-2 pi i (k/L) . x}: [n, c] -> complex [S, K, c]
    NuftAnalysis {
        f: Var,
        log_l: Var,
        ctx: Arc<NuftCtx>,
    },
    /// per-mode complex mixing: [S, K, o, c] x [S, K, c] -> [S, K, o]
    ModeMix { w: Var, fhat: Var },
    /// inverse transform e^{+2 pi i (k/L) . x} with conjugate-pair folding and
    /// real-part extraction: complex [S, K, o] -> [n, o]
    NuftSynthesis {
        ghat: Var,
        log_l: Var,
        ctx: Arc<NuftCtx>,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::AddRow { .. } => "add_row",
            Op::Scale { .. } => "scale",
            Op::Gelu { .. } => "gelu",
            Op::SoftSign { .. } => "softsign",
            Op::Sqrt { .. } => "sqrt",
            Op::Gather { .. } => "gather",
            Op::ScatterAdd { .. } => "scatter_add",
            Op::MaskedSum { .. } => "masked_sum",
            Op::MaskedMean { .. } => "masked_mean",
            Op::MaskRows { .. } => "mask_rows",
            Op::ChannelAffine { .. } => "channel_affine",
            Op::Sum { .. } => "sum",
            Op::EdgeGradient { .. } => "edge_gradient",
            Op::NuftAnalysis { .. } => "nuft_analysis",
            Op::ModeMix { .. } => "mode_mix",
            Op::NuftSynthesis { .. } => "nuft_synthesis",
        }
    }
}

/// Adjoints produced by [`Tape::backward`], indexed by `Var`.
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adj.get(v.0).and_then(|t| t.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.adj.get_mut(v.0).and_then(|t| t.take())
    }
}

pub struct Tape {
    vals: Vec<Arc<Tensor>>,
    ops: Vec<Op>,
    strict: bool,
    corrupt: Option<(&'static str, f64)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            vals: Vec::new(),
            ops: Vec::new(),
            strict: false,
        corrupt: None,
        }
    }

    /// Reject non-finite inputs on every op.
    pub fn strict(mut self, on: bool) -> Self {
        self.strict = on;
        self
    }

    /// Test fixture: scale the input adjoints of the named op during
    /// backward, simulating a broken backward rule.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self, op: &'static str, factor: f64) {
        self.corrupt = Some((op, factor));
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, Arc::new(t))
    }

    pub fn leaf_shared(&mut self, t: Arc<Tensor>) -> Var {
        self.push(Op::Leaf, t)
    }

    fn push(&mut self, op: Op, t: Arc<Tensor>) -> Var {
        self.vals.push(t);
        self.ops.push(op);
        Var(self.vals.len() - 1)
    }

    fn check_finite(&self, op: &'static str, vars: &[Var]) -> Result<()> {
        if !self.strict {
            return Ok(());
        }
        for &v in vars {
            let t = self.value(v);
            let bad = match &t.buf {
                Buffer::Real(d) => d.iter().position(|x| !x.is_finite()),
                Buffer::Complex(d) => d.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()),
            };
            if let Some(index) = bad {
                return Err(Error::NonFinite { op, index });
            }
        }
        Ok(())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape != self.value(b).shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.value(a).shape.clone(),
                rhs: self.value(b).shape.clone(),
            });
        }
        Ok(())
    }

    fn rows_cols(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = &self.value(v).shape;
        match s.len() {
            1 => Ok((s[0], 1)),
            2 => Ok((s[0], s[1])),
            _ => Err(Error::ShapeMismatch {
                op,
                lhs: s.clone(),
                rhs: vec![],
            }),
        }
    }

    // -- primitives ---------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_finite("matmul", &[a, b])?;
        let (sa, sb) = (self.value(a).shape.clone(), self.value(b).shape.clone());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::mm(self.value(a).real(), self.value(b).real(), m, k, n);
        let dt = Tensor::promote(self.value(a).dtype, self.value(b).dtype);
        let t = Tensor::new(vec![m, n], dt, Buffer::Real(out))?;
        Ok(self.push(Op::MatMul { a, b }, Arc::new(t)))
    }

    fn elementwise(&mut self, op: &'static str, a: Var, b: Var) -> Result<Var> {
        self.check_finite(op, &[a, b])?;
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let out: Vec<f64> = ta
            .real()
            .iter()
            .zip(tb.real().iter())
            .map(|(x, y)| match op {
                "add" => x + y,
                "sub" => x - y,
                _ => x * y,
            })
            .collect();
        let t = Tensor::new(
            ta.shape.clone(),
            Tensor::promote(ta.dtype, tb.dtype),
            Buffer::Real(out),
        )?;
        let node = match op {
            "add" => Op::Add { a, b },
            "sub" => Op::Sub { a, b },
            _ => Op::Mul { a, b },
        };
        Ok(self.push(node, Arc::new(t)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b)
    }

    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_finite("add_row", &[a, b])?;
        let (n, c) = self.rows_cols("add_row", a)?;
        let sb = &self.value(b).shape;
        if sb.len() != 1 || sb[0] != c {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.value(a).shape.clone(),
                rhs: sb.clone(),
            });
        }
        let bias = self.value(b).real();
        let mut out = self.value(a).real().to_vec();
        for r in 0..n {
            for ch in 0..c {
                out[r * c + ch] += bias[ch];
            }
        }
        let t = Tensor::new(
            self.value(a).shape.clone(),
            Tensor::promote(self.value(a).dtype, self.value(b).dtype),
            Buffer::Real(out),
        )?;
        Ok(self.push(Op::AddRow { a, b }, Arc::new(t)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check_finite("scale", &[a])?;
        let ta = self.value(a);
        let out: Vec<f64> = ta.real().iter().map(|x| c * x).collect();
        let t = Tensor::new(ta.shape.clone(), ta.dtype, Buffer::Real(out))?;
        Ok(self.push(Op::Scale { a, c }, Arc::new(t)))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.check_finite("gelu", &[a])?;
        let ta = self.value(a);
        // cache Phi(x) = (1 + erf(x / sqrt 2)) / 2: the forward value is
        // x Phi(x) and the derivative reuses Phi without a second erf
        let phi: Vec<f64> = ta
            .real()
            .iter()
            .map(|&x| 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)))
            .collect();
        let out: Vec<f64> = ta
            .real()
            .iter()
            .zip(phi.iter())
            .map(|(&x, &p)| x * p)
            .collect();
        let t = Tensor::new(ta.shape.clone(), ta.dtype, Buffer::Real(out))?;
        Ok(self.push(Op::Gelu { a, phi }, Arc::new(t)))
    }

    pub fn softsign(&mut self, a: Var) -> Result<Var> {
        self.check_finite("softsign", &[a])?;
        let ta = self.value(a);
        let out: Vec<f64> = ta.real().iter().map(|&x| x / (1.0 + x.abs())).collect();
        let t = Tensor::new(ta.shape.clone(), ta.dtype, Buffer::Real(out))?;
        Ok(self.push(Op::SoftSign { a }, Arc::new(t)))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.check_finite("sqrt", &[a])?;
        let ta = self.value(a);
        let out: Vec<f64> = ta.real().iter().map(|x| x.sqrt()).collect();
        let t = Tensor::new(ta.shape.clone(), ta.dtype, Buffer::Real(out))?;
        Ok(self.push(Op::Sqrt { a }, Arc::new(t)))
    }

    pub fn gather(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        self.check_finite("gather", &[a])?;
        let (n, c) = self.rows_cols("gather", a)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::ShapeMismatch {
                op: "gather",
                lhs: vec![bad],
                rhs: vec![n],
            });
        }
        let src = self.value(a).real();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let shape = if self.value(a).shape.len() == 1 {
            vec![idx.len()]
        } else {
            vec![idx.len(), c]
        };
        let t = Tensor::new(shape, self.value(a).dtype, Buffer::Real(out))?;
        Ok(self.push(Op::Gather { a, idx }, Arc::new(t)))
    }

    pub fn scatter_add(&mut self, a: Var, seg: Arc<Vec<usize>>, out_rows: usize) -> Result<Var> {
        self.check_finite("scatter_add", &[a])?;
        let (n, c) = self.rows_cols("scatter_add", a)?;
        if seg.len() != n {
            return Err(Error::ShapeMismatch {
                op: "scatter_add",
                lhs: vec![seg.len()],
                rhs: vec![n],
            });
        }
        if let Some(&bad) = seg.iter().find(|&&s| s >= out_rows) {
            return Err(Error::ShapeMismatch {
                op: "scatter_add",
                lhs: vec![bad],
                rhs: vec![out_rows],
            });
        }
        let src = self.value(a).real();
        let mut out = vec![0.0; out_rows * c];
        for (r, &s) in seg.iter().enumerate() {
            for ch in 0..c {
                out[s * c + ch] += src[r * c + ch];
            }
        }
        let shape = if self.value(a).shape.len() == 1 {
            vec![out_rows]
        } else {
            vec![out_rows, c]
        };
        let t = Tensor::new(shape, self.value(a).dtype, Buffer::Real(out))?;
        Ok(self.push(Op::ScatterAdd { a, seg, out_rows }, Arc::new(t)))
    }

    fn masked_reduce(&mut self, op: &'static str, a: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        self.check_finite(op, &[a])?;
        let (n, c) = self.rows_cols(op, a)?;
        if mask.len() != n {
            return Err(Error::ShapeMismatch {
                op,
                lhs: vec![mask.len()],
                rhs: vec![n],
            });
        }
        let src = self.value(a).real();
        let mut sum = 0.0;
        let mut count = 0usize;
        for (r, &keep) in mask.iter().enumerate() {
            if keep {
                count += 1;
                for ch in 0..c {
                    sum += src[r * c + ch];
                }
            }
        }
        let (val, node) = if op == "masked_sum" {
            (sum, Op::MaskedSum { a, mask })
        } else {
            let denom = (count * c).max(1) as f64;
            (sum / denom, Op::MaskedMean { a, mask })
        };
        let t = Tensor::new(vec![], self.value(a).dtype, Buffer::Real(vec![val]))?;
        Ok(self.push(node, Arc::new(t)))
    }

    pub fn masked_sum(&mut self, a: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        self.masked_reduce("masked_sum", a, mask)
    }

    pub fn masked_mean(&mut self, a: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        self.masked_reduce("masked_mean", a, mask)
    }

    pub fn mask_rows(&mut self, a: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        self.check_finite("mask_rows", &[a])?;
        let (n, c) = self.rows_cols("mask_rows", a)?;
        if mask.len() != n {
            return Err(Error::ShapeMismatch {
                op: "mask_rows",
                lhs: vec![mask.len()],
                rhs: vec![n],
            });
        }
        let mut out = self.value(a).real().to_vec();
        for (r, &keep) in mask.iter().enumerate() {
            if !keep {
                out[r * c..(r + 1) * c].fill(0.0);
            }
        }
        let t = Tensor::new(
            self.value(a).shape.clone(),
            self.value(a).dtype,
            Buffer::Real(out),
        )?;
        Ok(self.push(Op::MaskRows { a, mask }, Arc::new(t)))
    }

    pub fn channel_affine(
        &mut self,
        a: Var,
        scale: Arc<Vec<f64>>,
        shift: Arc<Vec<f64>>,
    ) -> Result<Var> {
        self.check_finite("channel_affine", &[a])?;
        let (n, c) = self.rows_cols("channel_affine", a)?;
        if scale.len() != c || shift.len() != c {
            return Err(Error::ShapeMismatch {
                op: "channel_affine",
                lhs: vec![scale.len(), shift.len()],
                rhs: vec![c],
            });
        }
        let src = self.value(a).real();
        let mut out = vec![0.0; n * c];
        for r in 0..n {
            for ch in 0..c {
                out[r * c + ch] = src[r * c + ch] * scale[ch] + shift[ch];
            }
        }
        let t = Tensor::new(
            self.value(a).shape.clone(),
            self.value(a).dtype,
            Buffer::Real(out),
        )?;
        Ok(self.push(Op::ChannelAffine { a, scale, shift }, Arc::new(t)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check_finite("sum", &[a])?;
        let v: f64 = self.value(a).real().iter().sum();
        let t = Tensor::new(vec![], self.value(a).dtype, Buffer::Real(vec![v]))?;
        Ok(self.push(Op::Sum { a }, Arc::new(t)))
    }

    pub fn edge_gradient(&mut self, f: Var, adj: Arc<GradAdjacency>) -> Result<Var> {
        self.check_finite("edge_gradient", &[f])?;
        let (n, c) = self.rows_cols("edge_gradient", f)?;
        if adj.n_nodes() != n {
            return Err(Error::ShapeMismatch {
                op: "edge_gradient",
                lhs: vec![adj.n_nodes()],
                rhs: vec![n],
            });
        }
        let out = kernels::edge_gradient(&adj, self.value(f).real(), c);
        let t = Tensor::new(
            vec![n, adj.dim * c],
            self.value(f).dtype,
            Buffer::Real(out),
        )?;
        Ok(self.push(Op::EdgeGradient { f, adj }, Arc::new(t)))
    }

    pub fn nuft_analysis(&mut self, f: Var, log_l: Var, ctx: Arc<NuftCtx>) -> Result<Var> {
        self.check_finite("nuft_analysis", &[f, log_l])?;
        let (n, c) = self.rows_cols("nuft_analysis", f)?;
        if n != ctx.n_nodes || self.value(log_l).len() != ctx.dim {
            return Err(Error::ShapeMismatch {
                op: "nuft_analysis",
                lhs: vec![n, self.value(log_l).len()],
                rhs: vec![ctx.n_nodes, ctx.dim],
            });
        }
        let l = lengths(self.value(log_l))?;
        let out = kernels::analysis_forward(&ctx, &l, self.value(f).real(), c);
        let t = Tensor::from_complex(vec![ctx.n_seg, ctx.modes.n_modes(), c], out)?;
        Ok(self.push(Op::NuftAnalysis { f, log_l, ctx }, Arc::new(t)))
    }

    pub fn mode_mix(&mut self, w: Var, fhat: Var) -> Result<Var> {
        self.check_finite("mode_mix", &[w, fhat])?;
        let sw = self.value(w).shape.clone();
        let sf = self.value(fhat).shape.clone();
        if sw.len() != 4 || sf.len() != 3 || sw[0] != sf[0] || sw[1] != sf[1] || sw[3] != sf[2] {
            return Err(Error::ShapeMismatch {
                op: "mode_mix",
                lhs: sw,
                rhs: sf,
            });
        }
        let (s, k, o, c) = (sw[0], sw[1], sw[2], sw[3]);
        let wv = self.value(w).complex();
        let fv = self.value(fhat).complex();
        let mut out = vec![Complex64::ZERO; s * k * o];
        for sk in 0..s * k {
            let wb = &wv[sk * o * c..(sk + 1) * o * c];
            let fb = &fv[sk * c..(sk + 1) * c];
            let ob = &mut out[sk * o..(sk + 1) * o];
            for (oo, acc) in ob.iter_mut().enumerate() {
                let mut z = Complex64::ZERO;
                for ch in 0..c {
                    z += wb[oo * c + ch] * fb[ch];
                }
                *acc = z;
            }
        }
        let t = Tensor::from_complex(vec![s, k, o], out)?;
        Ok(self.push(Op::ModeMix { w, fhat }, Arc::new(t)))
    }

    pub fn nuft_synthesis(&mut self, ghat: Var, log_l: Var, ctx: Arc<NuftCtx>) -> Result<Var> {
        self.check_finite("nuft_synthesis", &[ghat, log_l])?;
        let sg = self.value(ghat).shape.clone();
        if sg.len() != 3 || sg[0] != ctx.n_seg || sg[1] != ctx.modes.n_modes() {
            return Err(Error::ShapeMismatch {
                op: "nuft_synthesis",
                lhs: sg,
                rhs: vec![ctx.n_seg, ctx.modes.n_modes()],
            });
        }
        let c_out = sg[2];
        let l = lengths(self.value(log_l))?;
        let out = kernels::synthesis_forward(&ctx, &l, self.value(ghat).complex(), c_out);
        let t = Tensor::from_vec(vec![ctx.n_nodes, c_out], out)?;
        Ok(self.push(Op::NuftSynthesis { ghat, log_l, ctx }, Arc::new(t)))
    }

    // -- backward -----------------------------------------------------------

    /// Reverse sweep from a scalar loss. Returns one adjoint per node; leaves
    /// (parameters, inputs) keep theirs, so callers read them off by `Var`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: lt.shape.clone(),
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.vals.len()];
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.vals.len()).rev() {
            let Some(out_adj) = adj[i].take() else {
                continue;
            };
            // fast path: Add passes the adjoint through unchanged to both
            // inputs, so accumulate in place instead of cloning
            if self.corrupt.is_none() {
                if let Op::Add { a, b } = &self.ops[i] {
                    for v in [*a, *b] {
                        match &mut adj[v.0] {
                            Some(acc) => accumulate(acc, &out_adj),
                            slot @ None => *slot = Some(out_adj.clone()),
                        }
                    }
                    adj[i] = Some(out_adj);
                    continue;
                }
            }
            let contributions = self.backward_one(Var(i), &out_adj)?;
            adj[i] = Some(out_adj);
            let scale = match self.corrupt {
                Some((name, factor)) if name == self.ops[i].name() => factor,
                _ => 1.0,
            };
            for (v, mut g) in contributions {
                if scale != 1.0 {
                    match &mut g.buf {
                        Buffer::Real(d) => d.iter_mut().for_each(|x| *x *= scale),
                        Buffer::Complex(d) => d.iter_mut().for_each(|z| *z *= scale),
                    }
                }
                match &mut adj[v.0] {
                    Some(acc) => accumulate(acc, &g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { adj })
    }


    /// Timing breakdown of a backward sweep, for performance work.
    #[doc(hidden)]
    pub fn backward_profiled(&self, loss: Var) -> Result<Vec<(&'static str, f64, usize)>> {
        use std::collections::HashMap;
        use std::time::Instant;
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: lt.shape.clone(),
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.vals.len()];
        adj[loss.0] = Some(Tensor::scalar(1.0));
        let mut stats: HashMap<&'static str, (f64, usize)> = HashMap::new();
        for i in (0..self.vals.len()).rev() {
            let Some(out_adj) = adj[i].take() else {
                continue;
            };
            let t0 = Instant::now();
            let contributions = self.backward_one(Var(i), &out_adj)?;
            let e = stats.entry(self.ops[i].name()).or_insert((0.0, 0));
            e.0 += t0.elapsed().as_secs_f64();
            e.1 += 1;
            adj[i] = Some(out_adj);
            for (v, g) in contributions {
                match &mut adj[v.0] {
                    Some(acc) => accumulate(acc, &g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let mut out: Vec<(&'static str, f64, usize)> =
            stats.into_iter().map(|(k, (t, n))| (k, t, n)).collect();
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        Ok(out)
    }

    fn backward_one(&self, v: Var, out_adj: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let op = &self.ops[v.0];
        let mut res: Vec<(Var, Tensor)> = Vec::new();
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (sa, sb) = (&self.value(*a).shape, &self.value(*b).shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let dy = out_adj.real();
                // dA = dY . B^T ; dB = A^T . dY
                let da = kernels::mm_nt(dy, self.value(*b).real(), m, n, k);
                let db = kernels::mm_tn(self.value(*a).real(), dy, k, m, n);
                res.push((*a, Tensor::from_vec(vec![m, k], da)?));
                res.push((*b, Tensor::from_vec(vec![k, n], db)?));
            }
            Op::Add { a, b } => {
                res.push((*a, out_adj.clone()));
                res.push((*b, out_adj.clone()));
            }
            Op::Sub { a, b } => {
                res.push((*a, out_adj.clone()));
                let mut g = out_adj.clone();
                g.real_mut().iter_mut().for_each(|x| *x = -*x);
                res.push((*b, g));
            }
            Op::Mul { a, b } => {
                let mut ga = out_adj.clone();
                for (x, y) in ga.real_mut().iter_mut().zip(self.value(*b).real()) {
                    *x *= *y;
                }
                let mut gb = out_adj.clone();
                for (x, y) in gb.real_mut().iter_mut().zip(self.value(*a).real()) {
                    *x *= *y;
                }
                res.push((*a, ga));
                res.push((*b, gb));
            }
            Op::AddRow { a, b } => {
                res.push((*a, out_adj.clone()));
                let c = self.value(*b).len();
                let n = self.value(*a).shape[0];
                let dy = out_adj.real();
                let mut gb = vec![0.0; c];
                for r in 0..n {
                    for ch in 0..c {
                        gb[ch] += dy[r * c + ch];
                    }
                }
                res.push((*b, Tensor::from_vec(vec![c], gb)?));
            }
            Op::Scale { a, c } => {
                let mut g = out_adj.clone();
                g.real_mut().iter_mut().for_each(|x| *x *= c);
                res.push((*a, g));
            }
            Op::Gelu { a, phi } => {
                let mut g = out_adj.clone();
                let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
                for ((x, &v), &p) in g
                    .real_mut()
                    .iter_mut()
                    .zip(self.value(*a).real())
                    .zip(phi.iter())
                {
                    *x *= p + v * norm * (-0.5 * v * v).exp();
                }
                res.push((*a, g));
            }
            Op::SoftSign { a } => {
                let mut g = out_adj.clone();
                for (x, &v) in g.real_mut().iter_mut().zip(self.value(*a).real()) {
                    let d = 1.0 + v.abs();
                    *x /= d * d;
                }
                res.push((*a, g));
            }
            Op::Sqrt { a } => {
                let mut g = out_adj.clone();
                for (x, &y) in g.real_mut().iter_mut().zip(self.value(v).real()) {
                    *x *= 0.5 / y.max(1e-300);
                }
                res.push((*a, g));
            }
            Op::Gather { a, idx } => {
                // backward of gather is scatter-add
                let (n, c) = self.rows_cols("gather", *a)?;
                let dy = out_adj.real();
                let mut ga = vec![0.0; n * c];
                for (r, &i) in idx.iter().enumerate() {
                    for ch in 0..c {
                        ga[i * c + ch] += dy[r * c + ch];
                    }
                }
                res.push((*a, Tensor::from_vec(self.value(*a).shape.clone(), ga)?));
            }
            Op::ScatterAdd { a, seg, .. } => {
                // backward of scatter-add is gather
                let (n, c) = self.rows_cols("scatter_add", *a)?;
                let dy = out_adj.real();
                let mut ga = vec![0.0; n * c];
                for (r, &s) in seg.iter().enumerate() {
                    ga[r * c..(r + 1) * c].copy_from_slice(&dy[s * c..(s + 1) * c]);
                }
                res.push((*a, Tensor::from_vec(self.value(*a).shape.clone(), ga)?));
            }
            Op::MaskedSum { a, mask } => {
                let (n, c) = self.rows_cols("masked_sum", *a)?;
                let g = out_adj.item();
                let mut ga = vec![0.0; n * c];
                for (r, &keep) in mask.iter().enumerate() {
                    if keep {
                        ga[r * c..(r + 1) * c].fill(g);
                    }
                }
                res.push((*a, Tensor::from_vec(self.value(*a).shape.clone(), ga)?));
            }
            Op::MaskedMean { a, mask } => {
                let (n, c) = self.rows_cols("masked_mean", *a)?;
                let count = mask.iter().filter(|&&k| k).count().max(1);
                let g = out_adj.item() / (count * c) as f64;
                let mut ga = vec![0.0; n * c];
                for (r, &keep) in mask.iter().enumerate() {
                    if keep {
                        ga[r * c..(r + 1) * c].fill(g);
                    }
                }
                res.push((*a, Tensor::from_vec(self.value(*a).shape.clone(), ga)?));
            }
            Op::MaskRows { a, mask } => {
                let (_, c) = self.rows_cols("mask_rows", *a)?;
                let mut g = out_adj.clone();
                {
                    let gm = g.real_mut();
                    for (r, &keep) in mask.iter().enumerate() {
                        if !keep {
                            gm[r * c..(r + 1) * c].fill(0.0);
                        }
                    }
                }
                res.push((*a, g));
            }
            Op::ChannelAffine { a, scale, .. } => {
                let (n, c) = self.rows_cols("channel_affine", *a)?;
                let mut g = out_adj.clone();
                {
                    let gm = g.real_mut();
                    for r in 0..n {
                        for ch in 0..c {
                            gm[r * c + ch] *= scale[ch];
                        }
                    }
                }
                res.push((*a, g));
            }
            Op::Sum { a } => {
                let g = out_adj.item();
                let ga = vec![g; self.value(*a).len()];
                res.push((*a, Tensor::from_vec(self.value(*a).shape.clone(), ga)?));
            }
            Op::EdgeGradient { f, adj: gadj } => {
                let (_, c) = self.rows_cols("edge_gradient", *f)?;
                let gf = kernels::edge_gradient_transpose(gadj, out_adj.real(), c);
                res.push((*f, Tensor::from_vec(self.value(*f).shape.clone(), gf)?));
            }
            Op::NuftAnalysis { f, log_l, ctx } => {
                let (_, c) = self.rows_cols("nuft_analysis", *f)?;
                let l = lengths(self.value(*log_l))?;
                let (gf, gl) = kernels::analysis_backward(
                    ctx,
                    &l,
                    out_adj.complex(),
                    self.value(*f).real(),
                    c,
                );
                res.push((*f, Tensor::from_vec(self.value(*f).shape.clone(), gf)?));
                res.push((*log_l, Tensor::from_vec(vec![ctx.dim], gl)?));
            }
            Op::ModeMix { w, fhat } => {
                let sw = &self.value(*w).shape;
                let (s, k, o, c) = (sw[0], sw[1], sw[2], sw[3]);
                let gbar = out_adj.complex();
                let wv = self.value(*w).complex();
                let fv = self.value(*fhat).complex();
                let mut gw = vec![Complex64::ZERO; s * k * o * c];
                let mut gfh = vec![Complex64::ZERO; s * k * c];
                for sk in 0..s * k {
                    let gb = &gbar[sk * o..(sk + 1) * o];
                    let fb = &fv[sk * c..(sk + 1) * c];
                    let wb = &wv[sk * o * c..(sk + 1) * o * c];
                    for (oo, &g) in gb.iter().enumerate() {
                        for ch in 0..c {
                            gw[sk * o * c + oo * c + ch] += g * fb[ch].conj();
                            gfh[sk * c + ch] += wb[oo * c + ch].conj() * g;
                        }
                    }
                }
                res.push((*w, Tensor::from_complex(vec![s, k, o, c], gw)?));
                res.push((*fhat, Tensor::from_complex(vec![s, k, c], gfh)?));
            }
            Op::NuftSynthesis { ghat, log_l, ctx } => {
                let sg = &self.value(*ghat).shape;
                let c_out = sg[2];
                let l = lengths(self.value(*log_l))?;
                let (gg, gl) = kernels::synthesis_backward(
                    ctx,
                    &l,
                    out_adj.real(),
                    self.value(*ghat).complex(),
                    c_out,
                );
                res.push((
                    *ghat,
                    Tensor::from_complex(vec![ctx.n_seg, ctx.modes.n_modes(), c_out], gg)?,
                ));
                res.push((*log_l, Tensor::from_vec(vec![ctx.dim], gl)?));
            }
        }
        Ok(res)
    }
}

fn lengths(log_l: &Tensor) -> Result<Vec<f64>> {
    log_l
        .real()
        .iter()
        .enumerate()
        .map(|(dim, &x)| {
            let l = x.exp();
            if !l.is_finite() || l < 1e-300 {
                Err(Error::LengthScaleUnderflow { dim, value: l })
            } else {
                Ok(l)
            }
        })
        .collect()
}

fn accumulate(acc: &mut Tensor, g: &Tensor) {
    match (&mut acc.buf, &g.buf) {
        (Buffer::Real(a), Buffer::Real(b)) => {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
        (Buffer::Complex(a), Buffer::Complex(b)) => {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
        _ => panic!("adjoint dtype mismatch"),
    }
}

/// Exact GeLU, x/2 * (1 + erf(x / sqrt(2))).
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// d/dx GeLU = Phi(x) + x phi(x).
pub fn gelu_deriv(x: f64) -> f64 {
    let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)) + x * phi
}
