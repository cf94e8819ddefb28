//! Relative L2 objective over unmasked nodes.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Per-sample ||pred - ref||_2 / ||ref||_2 over unmasked nodes and all
/// channels, on the tape. `ref_norm` is precomputed from the data.
pub fn relative_l2_on_tape(
    tape: &mut Tape,
    pred: Var,
    reference: &Arc<Tensor>,
    mask: &Arc<Vec<bool>>,
    ref_norm: f64,
    sample: usize,
) -> Result<Var> {
    if ref_norm <= 0.0 {
        return Err(Error::ZeroReference { sample });
    }
    let r = tape.leaf_shared(reference.clone());
    let diff = tape.sub(pred, r)?;
    let sq = tape.mul(diff, diff)?;
    let ss = tape.masked_sum(sq, mask.clone())?;
    let num = tape.sqrt(ss)?;
    tape.scale(num, 1.0 / ref_norm)
}

/// Plain evaluation variant.
pub fn relative_l2(pred: &[f64], reference: &[f64], mask: &[bool], channels: usize) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &keep) in mask.iter().enumerate() {
        if !keep {
            continue;
        }
        for c in 0..channels {
            let p = pred[i * channels + c];
            let r = reference[i * channels + c];
            num += (p - r) * (p - r);
            den += r * r;
        }
    }
    if den <= 0.0 {
        return Err(Error::ZeroReference { sample: 0 });
    }
    Ok((num / den).sqrt())
}
