//! Projected-gradient MAP reconstruction of the source set.
//!
//! Stage one minimizes `||y - f(x)||^2 + BCE(x, dec(z_bar))`; stage two
//! minimizes `||y - f(x)||^2 - log sum_j prod_i p_ij^x_i (1-p_ij)^(1-x_i)`
//! with `p_j = dec(z_j)` over a bank of training latents, evaluated in log
//! space with a max shift. Each Adam step is followed by clamping into
//! `[0, 1]` and, by default, thresholding back to `{0, 1}`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::SeedVector;
use crate::error::{Error, Result};
use crate::forward::{check_len, ForwardModel};
use crate::graph::Graph;
use crate::numerics::{AdamConfig, AdamState, Matrix, Tape, Var};
use crate::vae::{VaeParams, PROB_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Initialization stage followed by the bank-likelihood stage.
    #[default]
    Full,
    /// Stop after the initialization stage.
    InitOnly,
    /// Skip the initialization stage.
    NoInit,
}

/// Update applied to `x` before projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Adam with `adam.lr` as the step size.
    #[default]
    Adam,
    /// `x <- x - lr * grad`.
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Bernoulli probability of the initial draw.
    pub tau: f64,
    /// Binarization threshold; entries `>= delta` become 1.
    pub delta: f64,
    pub n_init: usize,
    pub n_opt: usize,
    pub adam: AdamConfig,
    pub step_rule: StepRule,
    /// Largest latent bank used in the likelihood sum; larger training
    /// sets are uniformly subsampled.
    pub max_bank: usize,
    /// Threshold after every step; otherwise only clamp and threshold at
    /// the end.
    pub project_every_step: bool,
    pub mode: InferenceMode,
    /// Variance of the Gaussian observation model; the fit term is
    /// `||y - f(x)||^2 / obs_variance`.
    pub obs_variance: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            tau: 0.5,
            delta: 0.5,
            n_init: 20,
            n_opt: 50,
            adam: AdamConfig::with_lr(0.002),
            step_rule: StepRule::Adam,
            max_bank: 2000,
            project_every_step: true,
            mode: InferenceMode::Full,
            obs_variance: 1.0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidArgument(format!("tau = {} must lie in (0, 1)", self.tau)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta = {} must lie in (0, 1)", self.delta)));
        }
        if self.n_init >= self.n_opt && !(self.n_init == 0 && self.n_opt == 0) {
            return Err(Error::InvalidArgument(format!(
                "n_init = {} must be smaller than n_opt = {}",
                self.n_init, self.n_opt
            )));
        }
        if !(self.obs_variance > 0.0 && self.obs_variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "obs_variance = {} must be positive",
                self.obs_variance
            )));
        }
        if self.max_bank == 0 {
            return Err(Error::InvalidArgument("max_bank must be >= 1".into()));
        }
        Ok(())
    }
}

/// Latent samples of the training sources.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBank {
    /// `N x k`, one reparameterized sample per source.
    pub samples: Matrix,
    /// Mean of the posterior means.
    pub z_bar: Vec<f64>,
    /// Training-set size before any subsampling.
    pub source_count: usize,
}

impl LatentBank {
    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }
}

/// Encode every training source; `z_bar` uses all of them, the sample bank
/// at most `max_bank` (uniformly chosen).
pub fn build_latent_bank<R: Rng + ?Sized>(
    vae: &VaeParams,
    sources: &[Vec<f64>],
    max_bank: usize,
    rng: &mut R,
) -> Result<LatentBank> {
    if sources.is_empty() {
        return Err(Error::Empty("training sources for latent bank"));
    }
    let k = vae.latent_dim;
    let x = Matrix::from_rows(sources)?;
    let enc = vae.encoder.forward_batch(&x)?;
    let n = sources.len();
    let mut z_bar = vec![0.0; k];
    for r in 0..n {
        for (d, zb) in z_bar.iter_mut().enumerate() {
            *zb += enc.get(r, d);
        }
    }
    z_bar.iter_mut().for_each(|v| *v /= n as f64);
    let mut rows: Vec<usize> = (0..n).collect();
    if n > max_bank {
        log::info!("latent bank: subsampling {max_bank} of {n} training sources");
        rows = rand::seq::index::sample(rng, n, max_bank).into_vec();
        rows.sort_unstable();
    }
    let mut samples = Matrix::zeros(rows.len(), k);
    for (i, &r) in rows.iter().enumerate() {
        for d in 0..k {
            let mu = enc.get(r, d);
            let sigma = (0.5 * enc.get(r, k + d)).exp();
            let e: f64 = rng.sample(StandardNormal);
            samples.set(i, d, mu + sigma * e);
        }
    }
    Ok(LatentBank {
        samples,
        z_bar,
        source_count: n,
    })
}

/// Clamp into `[0, 1]`.
pub fn trim(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// 1 where `x >= delta`, else 0.
pub fn threshold(x: &[f64], delta: f64) -> Vec<f64> {
    x.iter().map(|&v| if v >= delta { 1.0 } else { 0.0 }).collect()
}

/// Decoder log-probabilities, cached once per query.
#[derive(Debug, Clone)]
struct LogProbs {
    /// `rows x |V|` of `log p`.
    on: Matrix,
    /// `rows x |V|` of `log(1 - p)`.
    off: Matrix,
}

impl LogProbs {
    fn from_probs(p: &Matrix) -> Self {
        let c = p.map(|v| v.clamp(PROB_EPS, 1.0 - PROB_EPS));
        LogProbs {
            on: c.map(f64::ln),
            off: c.map(|v| (1.0 - v).ln()),
        }
    }

    /// Per-row `sum_i x_i log p_i + (1 - x_i) log(1 - p_i)` as a column.
    fn row_loglik(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let on = tape.constant(self.on.clone());
        let off = tape.constant(self.off.clone());
        let a = tape.matmul(on, x)?;
        let xq = tape.one_minus(x);
        let b = tape.matmul(off, xq)?;
        tape.add(a, b)
    }
}

enum PriorTerm {
    /// `BCE(x, dec(z_bar))`.
    Mean(LogProbs),
    /// `-LSE_j log p_j(x)` over the bank.
    Bank(LogProbs),
    None,
}

/// A differentiable objective in `x` with everything else frozen.
pub struct Objective<'a> {
    fwd: &'a dyn ForwardModel,
    g: &'a Graph,
    y: Matrix,
    prior: PriorTerm,
    fit_scale: f64,
}

impl<'a> Objective<'a> {
    pub fn init(fwd: &'a dyn ForwardModel, vae: &VaeParams, z_bar: &[f64], g: &'a Graph, y: &[f64]) -> Result<Self> {
        check_len(g, y.len())?;
        let p = vae.decode(z_bar)?;
        Ok(Objective {
            fwd,
            g,
            y: Matrix::column(y),
            prior: PriorTerm::Mean(LogProbs::from_probs(&Matrix::row(&p))),
            fit_scale: 1.0,
        })
    }

    pub fn pred(fwd: &'a dyn ForwardModel, vae: &VaeParams, bank: &LatentBank, g: &'a Graph, y: &[f64]) -> Result<Self> {
        check_len(g, y.len())?;
        if bank.is_empty() {
            return Err(Error::Empty("latent bank"));
        }
        let p = vae.decode_batch(&bank.samples)?;
        Ok(Objective {
            fwd,
            g,
            y: Matrix::column(y),
            prior: PriorTerm::Bank(LogProbs::from_probs(&p)),
            fit_scale: 1.0,
        })
    }

    /// Observation fit only.
    pub fn fit_only(fwd: &'a dyn ForwardModel, g: &'a Graph, y: &[f64]) -> Result<Self> {
        check_len(g, y.len())?;
        Ok(Objective {
            fwd,
            g,
            y: Matrix::column(y),
            prior: PriorTerm::None,
            fit_scale: 1.0,
        })
    }

    /// Divide the fit term by `variance` (unit by default).
    pub fn with_obs_variance(mut self, variance: f64) -> Self {
        self.fit_scale = 1.0 / variance;
        self
    }

    /// Build the loss for column `x` on `tape`.
    pub fn on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let pred = self.fwd.predict_tape(tape, self.g, x)?;
        let y = tape.constant(self.y.clone());
        let d = tape.sub(y, pred)?;
        let sq = tape.sum_squares(d);
        let mse = if self.fit_scale == 1.0 { sq } else { tape.scale(sq, self.fit_scale) };
        match &self.prior {
            PriorTerm::None => Ok(mse),
            PriorTerm::Mean(lp) => {
                let ll = lp.row_loglik(tape, x)?;
                let nll = tape.scale(ll, -1.0);
                tape.add(mse, nll)
            }
            PriorTerm::Bank(lp) => {
                let ll = lp.row_loglik(tape, x)?;
                let pmf = tape.log_sum_exp(ll)?;
                tape.sub(mse, pmf)
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(Matrix::column(x));
        let root = self.on_tape(&mut tape, xv)?;
        Ok(tape.scalar(root))
    }

    pub fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len(self.g, x.len())?;
        let mut tape = Tape::new();
        let xv = tape.leaf(Matrix::column(x));
        let root = self.on_tape(&mut tape, xv)?;
        let g = tape.backward(root)?;
        Ok((tape.scalar(root), g.wrt(xv).into_vec()))
    }

    /// Log-likelihood of `x` under each bank member (`log p_j(x)`).
    pub fn bank_log_likelihoods(&self, x: &[f64]) -> Option<Vec<f64>> {
        let PriorTerm::Bank(lp) = &self.prior else { return None };
        let mut tape = Tape::new();
        let xv = tape.constant(Matrix::column(x));
        let ll = lp.row_loglik(&mut tape, xv).ok()?;
        Some(tape.value(ll).as_slice().to_vec())
    }
}

/// Initialization objective value.
pub fn loss_init(x: &[f64], y: &[f64], fwd: &dyn ForwardModel, vae: &VaeParams, z_bar: &[f64], g: &Graph) -> Result<f64> {
    Objective::init(fwd, vae, z_bar, g, y)?.value(x)
}

/// Prediction objective value.
pub fn loss_pred(x: &[f64], y: &[f64], fwd: &dyn ForwardModel, vae: &VaeParams, bank: &LatentBank, g: &Graph) -> Result<f64> {
    Objective::pred(fwd, vae, bank, g, y)?.value(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Opt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub stage: Stage,
    pub iteration: usize,
    /// Loss at the point the gradient was taken.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    /// Binary reconstruction.
    pub sources: SeedVector,
    /// Relaxed values from the last step, before thresholding.
    pub scores: Vec<f64>,
    pub trace: Vec<IterRecord>,
}

fn run_stage(
    obj: &Objective<'_>,
    stage: Stage,
    steps: usize,
    cfg: &InferenceConfig,
    x: &mut Vec<f64>,
    scores: &mut Vec<f64>,
    trace: &mut Vec<IterRecord>,
) -> Result<()> {
    let mut xm = Matrix::column(x);
    let mut adam = AdamState::new(cfg.adam, [&xm]);
    for it in 0..steps {
        let (loss, grad) = obj.value_and_grad(xm.as_slice())?;
        let step_err = || Error::NonFinite {
            context: match stage {
                Stage::Init => "initialization loss",
                Stage::Opt => "prediction loss",
            },
            step: it,
        };
        if !loss.is_finite() {
            return Err(step_err());
        }
        trace.push(IterRecord {
            stage,
            iteration: it,
            loss,
        });
        match cfg.step_rule {
            StepRule::Adam => adam.step(&mut [&mut xm], &[Matrix::column(&grad)]).map_err(|_| step_err())?,
            StepRule::Gradient => {
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(step_err());
                }
                for (v, g) in xm.as_mut_slice().iter_mut().zip(&grad) {
                    *v -= cfg.adam.lr * g;
                }
            }
        }
        let relaxed = trim(xm.as_slice());
        let next = if cfg.project_every_step {
            threshold(&relaxed, cfg.delta)
        } else {
            relaxed.clone()
        };
        *scores = relaxed;
        xm = Matrix::column(&next);
    }
    *x = xm.into_vec();
    Ok(())
}

/// Reconstruct a binary source vector from observation `y`.
pub fn infer<R: Rng + ?Sized>(
    y: &[f64],
    fwd: &dyn ForwardModel,
    vae: &VaeParams,
    bank: &LatentBank,
    g: &Graph,
    cfg: &InferenceConfig,
    rng: &mut R,
) -> Result<InferenceResult> {
    cfg.validate()?;
    check_len(g, y.len())?;
    let mut x: Vec<f64> = (0..g.num_nodes())
        .map(|_| if rng.random::<f64>() < cfg.tau { 1.0 } else { 0.0 })
        .collect();
    let mut scores = x.clone();
    let mut trace = Vec::with_capacity(cfg.n_init + cfg.n_opt);
    if cfg.mode != InferenceMode::NoInit {
        let obj = Objective::init(fwd, vae, &bank.z_bar, g, y)?.with_obs_variance(cfg.obs_variance);
        run_stage(&obj, Stage::Init, cfg.n_init, cfg, &mut x, &mut scores, &mut trace)?;
    }
    if cfg.mode != InferenceMode::InitOnly {
        let obj = Objective::pred(fwd, vae, bank, g, y)?.with_obs_variance(cfg.obs_variance);
        run_stage(&obj, Stage::Opt, cfg.n_opt, cfg, &mut x, &mut scores, &mut trace)?;
    }
    Ok(InferenceResult {
        sources: SeedVector::new(threshold(&x, cfg.delta)),
        scores,
        trace,
    })
}
