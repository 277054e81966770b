use super::tape::{self, Tape, Var};
use super::tensor::Matrix;
use crate::error::{Error, Result};

/// `max(v) + ln(sum(exp(v - max(v))))`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    let Some(&first) = v.first() else {
        return Err(Error::Empty("log_sum_exp input"));
    };
    let m = v.iter().copied().fold(first, f64::max);
    if m == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

pub fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Relative error used by the gradient checks. Entries whose magnitude is
/// below `1e-4` are compared on an absolute scale.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Compare tape gradients of `loss` against central differences at every
/// coordinate of every input; returns the worst relative error.
pub fn finite_diff_check<F>(loss: F, point: &[Matrix], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (_, analytic) = tape::grad(&loss, point)?;
    let mut worst: f64 = 0.0;
    let mut probe = point.to_vec();
    for (k, g) in analytic.iter().enumerate() {
        for idx in 0..g.len() {
            let orig = probe[k].as_slice()[idx];
            probe[k].as_mut_slice()[idx] = orig + step;
            let up = tape::eval(&loss, &probe)?;
            probe[k].as_mut_slice()[idx] = orig - step;
            let down = tape::eval(&loss, &probe)?;
            probe[k].as_mut_slice()[idx] = orig;
            let fd = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(g.as_slice()[idx], fd));
        }
    }
    Ok(worst)
}
