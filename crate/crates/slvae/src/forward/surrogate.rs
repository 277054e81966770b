use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, ForwardModel};
use crate::diffusion::EpisodePair;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{Activation, AdamConfig, AdamState, BoundMlp, Matrix, MlpParams, Tape, Var};

/// Per-node perceptron over propagated seed features
/// `[x_i, (Ax)_i, ..., (A^T x)_i, deg_i / max_deg]` with a sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardParams {
    pub mlp: MlpParams,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardConfig {
    /// Number of adjacency powers used as features.
    pub depth: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Fraction of episodes held out for model selection.
    pub holdout_fraction: f64,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig {
            depth: 3,
            hidden: 32,
            epochs: 200,
            batch_size: 32,
            adam: AdamConfig::default(),
            holdout_fraction: 0.1,
        }
    }
}

impl ForwardParams {
    pub fn init<R: Rng + ?Sized>(depth: usize, hidden: usize, rng: &mut R) -> Self {
        ForwardParams {
            mlp: MlpParams::init(
                &[depth + 2, hidden, hidden, 1],
                &[Activation::Relu, Activation::Relu, Activation::Sigmoid],
                rng,
            ),
            depth,
        }
    }

    pub fn zeros(depth: usize, hidden: usize) -> Self {
        ForwardParams {
            mlp: MlpParams::zeros(
                &[depth + 2, hidden, hidden, 1],
                &[Activation::Relu, Activation::Relu, Activation::Sigmoid],
            ),
            depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mlp.input_dim() != self.depth + 2 || self.mlp.output_dim() != 1 {
            return Err(Error::Dimension {
                expected: self.depth + 2,
                got: self.mlp.input_dim(),
                context: "forward feature width",
            });
        }
        Ok(())
    }

    /// Prediction using parameters already bound to `tape`.
    pub fn predict_bound(&self, tape: &mut Tape, g: &Graph, mlp: &BoundMlp, x: Var) -> Result<Var> {
        let (n, b) = tape.value(x).shape();
        check_len(g, n)?;
        let mut parts = Vec::with_capacity(self.depth + 2);
        parts.push(x);
        let mut h = x;
        for _ in 0..self.depth {
            h = tape.sp_mul(g.norm_adjacency(), h)?;
            parts.push(h);
        }
        let maxd = g.max_degree().max(1) as f64;
        let mut deg = Matrix::zeros(n, b);
        for i in 0..n {
            for j in 0..b {
                deg.set(i, j, g.degree(i) as f64 / maxd);
            }
        }
        parts.push(tape.constant(deg));
        let feats = tape.stack_features(&parts)?;
        let out = mlp.forward(tape, feats)?;
        tape.reshape(out, n, b)
    }
}

impl ForwardModel for ForwardParams {
    fn predict_tape(&self, tape: &mut Tape, g: &Graph, x: Var) -> Result<Var> {
        let mlp = self.mlp.bind(tape);
        self.predict_bound(tape, g, &mlp, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub train_mse: Vec<f64>,
    pub holdout_mse: Vec<f64>,
    pub best_epoch: usize,
}

fn samples(episodes: &[EpisodePair]) -> Vec<(Vec<f64>, Vec<f64>)> {
    episodes
        .iter()
        .flat_map(|e| {
            std::iter::once((e.source.as_slice().to_vec(), e.observation.as_slice().to_vec())).chain(
                e.subsets
                    .iter()
                    .map(|(s, o)| (s.as_slice().to_vec(), o.as_slice().to_vec())),
            )
        })
        .collect()
}

/// Mean squared error of `params` over every (seed, target) pair.
pub(crate) fn mse_on(params: &ForwardParams, g: &Graph, data: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in data.chunks(256) {
        let xs: Vec<Vec<f64>> = chunk.iter().map(|(x, _)| x.clone()).collect();
        let preds = params.predict_many(g, &xs)?;
        for (p, (_, y)) in preds.iter().zip(chunk) {
            total += p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            count += p.len();
        }
    }
    Ok(total / count.max(1) as f64)
}

fn batch_loss(
    params: &ForwardParams,
    g: &Graph,
    batch: &[&(Vec<f64>, Vec<f64>)],
) -> Result<(f64, Vec<Matrix>)> {
    let xs: Vec<Vec<f64>> = batch.iter().map(|(x, _)| x.clone()).collect();
    let ys: Vec<Vec<f64>> = batch.iter().map(|(_, y)| y.clone()).collect();
    let mut tape = Tape::new();
    let mlp = params.mlp.bind(&mut tape);
    let x = tape.constant(Matrix::from_columns(&xs)?);
    let y = tape.constant(Matrix::from_columns(&ys)?);
    let pred = params.predict_bound(&mut tape, g, &mlp, x)?;
    let diff = tape.sub(pred, y)?;
    let sq = tape.sum_squares(diff);
    let loss = tape.scale(sq, 1.0 / (xs.len() * g.num_nodes()) as f64);
    let grads = tape.backward(loss)?;
    Ok((tape.scalar(loss), mlp.grads(&grads)))
}

/// Fit the surrogate to Monte-Carlo targets by Adam on mean squared error.
/// Returns the parameters with the lowest held-out error.
pub fn train_forward<R: Rng + ?Sized>(
    g: &Graph,
    dataset: &[EpisodePair],
    cfg: &ForwardConfig,
    rng: &mut R,
) -> Result<(ForwardParams, ForwardTrace)> {
    if dataset.is_empty() {
        return Err(Error::Empty("forward training set"));
    }
    let n_hold = if dataset.len() >= 2 {
        ((dataset.len() as f64 * cfg.holdout_fraction).round() as usize).clamp(1, dataset.len() - 1)
    } else {
        0
    };
    let (train_eps, hold_eps) = dataset.split_at(dataset.len() - n_hold);
    let train = samples(train_eps);
    let hold = if hold_eps.is_empty() { train.clone() } else { samples(hold_eps) };

    let mut params = ForwardParams::init(cfg.depth, cfg.hidden, rng);
    let mut adam = AdamState::new(cfg.adam, params.mlp.tensors());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = ForwardTrace {
        train_mse: Vec::with_capacity(cfg.epochs + 1),
        holdout_mse: Vec::with_capacity(cfg.epochs + 1),
        best_epoch: 0,
    };
    let mut best = (mse_on(&params, g, &hold)?, params.clone());
    trace.train_mse.push(mse_on(&params, g, &train)?);
    trace.holdout_mse.push(best.0);

    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<_> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_loss(&params, g, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: "forward training loss",
                    step: epoch,
                });
            }
            adam.step(&mut params.mlp.tensors_mut(), &grads)
                .map_err(|_| Error::NonFinite {
                    context: "forward training gradient",
                    step: epoch,
                })?;
            sum += loss;
            batches += 1;
        }
        trace.train_mse.push(sum / batches.max(1) as f64);
        let h = mse_on(&params, g, &hold)?;
        trace.holdout_mse.push(h);
        if h < best.0 {
            best = (h, params.clone());
            trace.best_epoch = epoch;
        }
    }
    Ok((best.1, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{build_dataset, DatasetConfig, SeedVector, SimConfig};
    use crate::forward::forward_grad_x;
    use crate::numerics::stable::relative_error;
    use crate::seed::rng_from;

    fn ring(n: usize) -> Graph {
        Graph::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)).chain([(0, n / 2)])).unwrap()
    }

    #[test]
    fn zero_params_predict_half() {
        let g = ring(8);
        let p = ForwardParams::zeros(3, 4);
        assert_eq!(p.predict(&g, &[0.0; 8]).unwrap(), vec![0.5; 8]);
    }

    #[test]
    fn outputs_in_open_unit_interval_and_deterministic() {
        let g = ring(10);
        let p = ForwardParams::init(3, 8, &mut rng_from(4));
        let x: Vec<f64> = (0..10).map(|i| (i % 3) as f64 / 2.0).collect();
        let a = p.predict(&g, &x).unwrap();
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(a, p.predict(&g, &x).unwrap());
        assert!(p.predict(&g, &[0.0; 3]).is_err());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let g = ring(9);
        let p = ForwardParams::init(3, 8, &mut rng_from(5));
        let mut rng = rng_from(6);
        for _ in 0..5 {
            let x: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
            let up: Vec<f64> = (0..9).map(|_| rng.random::<f64>() - 0.5).collect();
            let gx = forward_grad_x(&p, &g, &x, &up).unwrap();
            assert_eq!(gx.len(), 9);
            let f = |x: &[f64]| -> f64 { p.predict(&g, x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum() };
            for i in 0..9 {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[i] += 1e-5;
                b[i] -= 1e-5;
                let fd = (f(&a) - f(&b)) / 2e-5;
                assert!(relative_error(gx[i], fd) < 1e-3, "{} vs {fd}", gx[i]);
            }
            let zero = forward_grad_x(&p, &g, &x, &[0.0; 9]).unwrap();
            assert!(zero.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn analytic_single_edge() {
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        let sim = SimConfig {
            beta: 0.3,
            max_iterations: 1,
            source_fraction: 0.5,
            ..Default::default()
        };
        let data = build_dataset(
            &g,
            &sim,
            &DatasetConfig {
                num_episodes: 40,
                subsets_per_episode: 0,
                mc_runs: 2000,
            },
            &mut rng_from(1),
        )
        .unwrap();
        let cfg = ForwardConfig {
            hidden: 8,
            epochs: 300,
            batch_size: 8,
            adam: AdamConfig::with_lr(0.01),
            ..Default::default()
        };
        let (p, trace) = train_forward(&g, &data, &cfg, &mut rng_from(2)).unwrap();
        assert!(trace.train_mse.last().unwrap() < &trace.train_mse[0]);
        let y = p.predict(&g, SeedVector::from_indices(2, &[0]).unwrap().as_slice()).unwrap();
        assert!((y[1] - 0.3).abs() < 0.05, "{y:?}");
    }

    #[test]
    fn passthrough_fit_when_nothing_spreads() {
        let g = ring(12);
        let sim = SimConfig {
            beta: 0.0,
            max_iterations: 3,
            source_fraction: 0.25,
            ..Default::default()
        };
        let data = build_dataset(
            &g,
            &sim,
            &DatasetConfig {
                num_episodes: 30,
                subsets_per_episode: 2,
                mc_runs: 2,
            },
            &mut rng_from(3),
        )
        .unwrap();
        let cfg = ForwardConfig {
            hidden: 8,
            epochs: 200,
            adam: AdamConfig::with_lr(0.01),
            ..Default::default()
        };
        let (p, _) = train_forward(&g, &data, &cfg, &mut rng_from(4)).unwrap();
        assert!(mse_on(&p, &g, &samples(&data)).unwrap() < 0.01);
    }

    #[test]
    fn empty_dataset_rejected() {
        let g = ring(5);
        assert!(train_forward(&g, &[], &ForwardConfig::default(), &mut rng_from(0)).is_err());
    }
}
