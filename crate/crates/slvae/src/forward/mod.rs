//! Differentiable forward diffusion estimators `x -> y`.
//!
//! Any estimator that can place its prediction on a [`Tape`] plugs into
//! training and inference through [`ForwardModel`].

mod oracle;
mod surrogate;

pub use oracle::SiClosureOracle;
pub use surrogate::{train_forward, ForwardConfig, ForwardParams, ForwardTrace};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{Matrix, Tape, Var};

pub trait ForwardModel: Send + Sync {
    /// Predict infection probabilities for a batch of seed vectors. `x` is
    /// `|V| x B` with one seed vector per column; the result has the same
    /// shape.
    fn predict_tape(&self, tape: &mut Tape, g: &Graph, x: Var) -> Result<Var>;

    fn predict(&self, g: &Graph, x: &[f64]) -> Result<Vec<f64>> {
        check_len(g, x.len())?;
        let mut tape = Tape::new();
        let xv = tape.constant(Matrix::column(x));
        let y = self.predict_tape(&mut tape, g, xv)?;
        Ok(tape.value(y).as_slice().to_vec())
    }

    /// Predict for several seed vectors at once; returns one row per input.
    fn predict_many(&self, g: &Graph, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        for x in xs {
            check_len(g, x.len())?;
        }
        let mut tape = Tape::new();
        let xv = tape.constant(Matrix::from_columns(xs)?);
        let y = self.predict_tape(&mut tape, g, xv)?;
        let ym = tape.value(y);
        Ok((0..xs.len()).map(|c| ym.col_vec(c)).collect())
    }
}

pub(crate) fn check_len(g: &Graph, got: usize) -> Result<()> {
    if got != g.num_nodes() {
        return Err(Error::Dimension {
            expected: g.num_nodes(),
            got,
            context: "seed vector length",
        });
    }
    Ok(())
}

/// Gradient of `upstream . f(x)` with respect to `x`.
pub fn forward_grad_x(model: &dyn ForwardModel, g: &Graph, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    check_len(g, x.len())?;
    check_len(g, upstream.len())?;
    let mut tape = Tape::new();
    let xv = tape.leaf(Matrix::column(x));
    let y = model.predict_tape(&mut tape, g, xv)?;
    let u = tape.constant(Matrix::column(upstream));
    let w = tape.mul(y, u)?;
    let root = tape.sum(w);
    Ok(tape.backward(root)?.wrt(xv).into_vec())
}

/// Mean of `max(0, y_sub - y_sup)` over every node of every pair.
pub fn mean_monotonicity_violation(pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (sup, sub) in pairs {
        for (a, b) in sup.iter().zip(sub) {
            total += (b - a).max(0.0);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}
