//! Point-cloud neural operator toolkit.
//!
//! Learns solution maps of parametric PDEs on variable-geometry point clouds.
//! The pieces: a small reverse-mode tape ([`tensor`]), mesh-derived quadrature
//! and connectivity ([`geometry`]), a least-squares differential operator
//! ([`gradop`]), a low-rank Fourier integral operator ([`fourier`]), the
//! operator network itself ([`model`]), the training recipe ([`train`]),
//! dataset containers ([`data`]) and desk-scale PDE data generators
//! ([`datagen`]).

pub mod data;
pub mod datagen;
pub mod error;
pub mod fourier;
pub mod geometry;
pub mod gradcheck;
pub mod gradop;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
