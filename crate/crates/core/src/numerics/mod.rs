//! Dense `f64` tensors, a reverse-mode tape, and a finite-difference verifier.

mod gradcheck;
mod tape;
mod tensor;

use indexmap::IndexMap;

pub use gradcheck::{finite_diff_check, relative_error, FdConfig, FdEntry, FdReport};
pub use tape::{dropout_mask, seeded_dropout, softmax_rows, Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::Result;

/// Insertion-ordered name → tensor map used for parameters and gradients.
pub type ParamMap = IndexMap<String, Tensor>;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Value-level layer norm.
pub fn layer_norm(m: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (x, g, b) = (
        tape.constant(m.clone()),
        tape.constant(gamma.clone()),
        tape.constant(beta.clone()),
    );
    let y = tape.layer_norm(x, g, b, eps)?;
    Ok(tape.value(y).clone())
}

/// Value-level row L2 normalisation; zero rows are returned unchanged.
pub fn l2_normalize_rows(m: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let x = tape.constant(m.clone());
    let y = tape.l2_normalize_rows(x);
    tape.value(y).clone()
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.matmul(b)
}

#[cfg(test)]
mod tests;
