//! Label-propagation baseline: `s <- a * S s + (1 - a) * s0` with `S` the
//! row-normalized adjacency and `s0` the observation mapped to `{-1, +1}`.
//! Predicted sources are nodes whose converged score is positive and no
//! smaller than any neighbor's.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::check_len;
use crate::graph::{row_normalize, Graph, Normalization};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpsiConfig {
    pub alpha: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LpsiConfig {
    fn default() -> Self {
        LpsiConfig {
            alpha: 0.5,
            tol: 1e-6,
            max_sweeps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpsiOutput {
    pub scores: Vec<f64>,
    pub prediction: Vec<f64>,
    pub sweeps: usize,
    /// Max-norm change of the last sweep.
    pub residual: f64,
}

pub fn lpsi_baseline(g: &Graph, observation: &[f64], cfg: &LpsiConfig) -> Result<LpsiOutput> {
    check_len(g, observation.len())?;
    if !(0.0..1.0).contains(&cfg.alpha) {
        return Err(Error::InvalidArgument(format!("alpha = {} must lie in [0, 1)", cfg.alpha)));
    }
    let owned;
    let s = match g.normalization() {
        Normalization::RowStochastic => g.norm_adjacency().as_ref(),
        Normalization::Symmetric => {
            owned = row_normalize(g.adjacency());
            &owned
        }
    };
    let s0: Vec<f64> = observation.iter().map(|&v| if v >= 0.5 { 1.0 } else { -1.0 }).collect();
    let mut x = s0.clone();
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        let sx = s.mul_vec(&x);
        let next: Vec<f64> = sx
            .iter()
            .zip(&s0)
            .map(|(a, b)| cfg.alpha * a + (1.0 - cfg.alpha) * b)
            .collect();
        residual = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        sweeps += 1;
        if residual < cfg.tol {
            break;
        }
    }
    if residual >= cfg.tol {
        return Err(Error::NotConverged { residual, sweeps });
    }
    let prediction = (0..g.num_nodes())
        .map(|v| {
            let peak = x[v] > 0.0 && g.neighbor_iter(v).all(|u| x[u] <= x[v]);
            if peak { 1.0 } else { 0.0 }
        })
        .collect();
    Ok(LpsiOutput {
        scores: x,
        prediction,
        sweeps,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Graph {
        Graph::from_edges(n, (0..n - 1).map(|i| (i, i + 1))).unwrap()
    }

    #[test]
    fn empty_observation_predicts_nothing() {
        let out = lpsi_baseline(&path(6), &[0.0; 6], &LpsiConfig::default()).unwrap();
        assert!(out.prediction.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn single_infected_node_is_a_peak() {
        let mut y = vec![0.0; 7];
        y[3] = 1.0;
        let out = lpsi_baseline(&path(7), &y, &LpsiConfig::default()).unwrap();
        assert_eq!(out.prediction[3], 1.0);
        assert_eq!(out.prediction.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn converged_scores_satisfy_fixpoint() {
        let g = Graph::from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)]).unwrap();
        let y = [1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let cfg = LpsiConfig::default();
        let out = lpsi_baseline(&g, &y, &cfg).unwrap();
        let sx = g.norm_adjacency().mul_vec(&out.scores);
        for v in 0..6 {
            let s0 = if y[v] >= 0.5 { 1.0 } else { -1.0 };
            let rhs = cfg.alpha * sx[v] + (1.0 - cfg.alpha) * s0;
            assert!((out.scores[v] - rhs).abs() < cfg.tol);
        }
    }

    #[test]
    fn sweep_cap_reports_residual() {
        let cfg = LpsiConfig {
            alpha: 0.99,
            tol: 1e-12,
            max_sweeps: 3,
        };
        let mut y = vec![0.0; 10];
        y[0] = 1.0;
        match lpsi_baseline(&path(10), &y, &cfg) {
            Err(Error::NotConverged { residual, sweeps }) => {
                assert_eq!(sweeps, 3);
                assert!(residual > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }
}
