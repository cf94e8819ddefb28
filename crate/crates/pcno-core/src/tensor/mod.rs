//! Dense row-major tensors and the reverse-mode tape built on them.
//!
//! The op set is deliberately small: exactly what the operator layers and the
//! training objective need. Complex tensors appear only on the Fourier
//! integral path; everything else is real.

mod fdcheck;
mod kernels;
mod tape;
#[cfg(test)]
mod tests;

pub use fdcheck::{finite_diff_check, finite_diff_check_directional, finite_diff_check_multi};
pub use kernels::{detect_lattice, GradAdjacency, Lattice, ModeSet, NuftCtx};
pub use tape::{gelu, gelu_deriv, Gradients, Op, Tape, Var};

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Real64,
    /// Opt-in reduced precision: values are stored in f64 buffers but rounded
    /// through f32 after every operation.
    Real32,
    Complex128,
}

#[derive(Debug, Clone)]
pub enum Buffer {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

/// Dense row-major array. `shape` may be empty (scalar, one element).
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    buf: Buffer,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, dtype: DType, buf: Buffer) -> Result<Self> {
        let len = shape.iter().product::<usize>();
        let ok = match (&buf, dtype) {
            (Buffer::Real(v), DType::Real64 | DType::Real32) => v.len() == len,
            (Buffer::Complex(v), DType::Complex128) => v.len() == len,
            _ => false,
        };
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "tensor::new",
                lhs: shape,
                rhs: vec![match &buf {
                    Buffer::Real(v) => v.len(),
                    Buffer::Complex(v) => v.len(),
                }],
            });
        }
        let mut t = Tensor { shape, dtype, buf };
        t.round_if_f32();
        Ok(t)
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, DType::Real64, Buffer::Real(data))
    }

    pub fn from_complex(shape: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        Self::new(shape, DType::Complex128, Buffer::Complex(data))
    }

    pub fn zeros(shape: Vec<usize>, dtype: DType) -> Self {
        let len = shape.iter().product::<usize>();
        let buf = match dtype {
            DType::Real64 | DType::Real32 => Buffer::Real(vec![0.0; len]),
            DType::Complex128 => Buffer::Complex(vec![Complex64::ZERO; len]),
        };
        Tensor { shape, dtype, buf }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            dtype: DType::Real64,
            buf: Buffer::Real(vec![v]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1 && self.shape.len() <= 1
    }

    pub fn real(&self) -> &[f64] {
        match &self.buf {
            Buffer::Real(v) => v,
            Buffer::Complex(_) => panic!("tensor is complex, expected real"),
        }
    }

    pub fn real_mut(&mut self) -> &mut [f64] {
        match &mut self.buf {
            Buffer::Real(v) => v,
            Buffer::Complex(_) => panic!("tensor is complex, expected real"),
        }
    }

    pub fn complex(&self) -> &[Complex64] {
        match &self.buf {
            Buffer::Complex(v) => v,
            Buffer::Real(_) => panic!("tensor is real, expected complex"),
        }
    }

    pub fn complex_mut(&mut self) -> &mut [Complex64] {
        match &mut self.buf {
            Buffer::Complex(v) => v,
            Buffer::Real(_) => panic!("tensor is real, expected complex"),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self.dtype, DType::Complex128)
    }

    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar {:?}", self.shape);
        self.real()[0]
    }

    /// View the values as a flat real vector; complex entries expand to
    /// (re, im) pairs. Used by the optimizer, checkpoints and gradient checks.
    pub fn to_real_vec(&self) -> Vec<f64> {
        match &self.buf {
            Buffer::Real(v) => v.clone(),
            Buffer::Complex(v) => {
                let mut out = Vec::with_capacity(2 * v.len());
                for z in v {
                    out.push(z.re);
                    out.push(z.im);
                }
                out
            }
        }
    }

    /// Number of real degrees of freedom (`2 * len` for complex tensors).
    pub fn real_dof(&self) -> usize {
        match self.dtype {
            DType::Complex128 => 2 * self.len(),
            _ => self.len(),
        }
    }

    /// Overwrite values from a flat real vector produced by [`to_real_vec`].
    pub fn set_from_real_vec(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.real_dof());
        match &mut self.buf {
            Buffer::Real(dst) => dst.copy_from_slice(v),
            Buffer::Complex(dst) => {
                for (z, pair) in dst.iter_mut().zip(v.chunks_exact(2)) {
                    *z = Complex64::new(pair[0], pair[1]);
                }
            }
        }
        self.round_if_f32();
    }

    pub fn all_finite(&self) -> bool {
        match &self.buf {
            Buffer::Real(v) => v.iter().all(|x| x.is_finite()),
            Buffer::Complex(v) => v.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
        }
    }

    fn round_if_f32(&mut self) {
        if self.dtype == DType::Real32 {
            if let Buffer::Real(v) = &mut self.buf {
                for x in v.iter_mut() {
                    *x = *x as f32 as f64;
                }
            }
        }
    }

    pub(crate) fn promote(a: DType, b: DType) -> DType {
        match (a, b) {
            (DType::Real32, DType::Real32) => DType::Real32,
            _ => DType::Real64,
        }
    }
}
