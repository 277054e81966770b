use std::collections::VecDeque;
use std::sync::Arc;

use super::{check_len, ForwardModel};
use crate::error::Result;
use crate::graph::Graph;
use crate::numerics::{CsrMatrix, Tape, Var};

/// Exact forward map of deterministic SI (`beta = 1`) run for `hops`
/// steps: node `i` is infected iff some seed lies within `hops` of it.
///
/// On relaxed inputs it evaluates the multilinear extension
/// `1 - prod_{j in reach(i)} (1 - x_j)`, which is monotone in `x`.
#[derive(Debug, Clone)]
pub struct SiClosureOracle {
    hops: usize,
    reach: Arc<CsrMatrix>,
}

/// `1 - x` is floored here inside the log on the tape path.
const LOG_FLOOR: f64 = 1e-12;

impl SiClosureOracle {
    pub fn new(g: &Graph, hops: usize) -> Self {
        let n = g.num_nodes();
        let mut dist = vec![usize::MAX; n];
        let mut rows = Vec::with_capacity(n);
        let mut queue = VecDeque::new();
        for s in 0..n {
            let mut touched = vec![s];
            dist[s] = 0;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                if dist[u] == hops {
                    continue;
                }
                for v in g.neighbor_iter(u) {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        touched.push(v);
                        queue.push_back(v);
                    }
                }
            }
            rows.push(touched.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>());
            for v in touched {
                dist[v] = usize::MAX;
            }
        }
        SiClosureOracle {
            hops,
            reach: Arc::new(CsrMatrix::from_rows(n, rows)),
        }
    }

    pub fn hops(&self) -> usize {
        self.hops
    }

    /// Direct evaluation with plain products; exact 0/1 on binary input.
    pub fn predict_exact(&self, g: &Graph, x: &[f64]) -> Result<Vec<f64>> {
        check_len(g, x.len())?;
        Ok((0..x.len())
            .map(|i| 1.0 - self.reach.row(i).map(|(j, _)| 1.0 - x[j]).product::<f64>())
            .collect())
    }
}

impl ForwardModel for SiClosureOracle {
    fn predict_tape(&self, tape: &mut Tape, g: &Graph, x: Var) -> Result<Var> {
        check_len(g, tape.value(x).rows())?;
        let keep = tape.one_minus(x);
        let keep = tape.clamp(keep, LOG_FLOOR, 1.0);
        let logs = tape.log(keep);
        let summed = tape.sp_mul(&self.reach, logs)?;
        let none = tape.exp(summed);
        Ok(tape.one_minus(none))
    }

    fn predict(&self, g: &Graph, x: &[f64]) -> Result<Vec<f64>> {
        self.predict_exact(g, x)
    }
}
