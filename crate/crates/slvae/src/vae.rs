//! Encoder/decoder pair and the training objective.
//!
//! The loss per example is
//! `||y - f(x)||^2 + BCE(x, dec(z)) + KL(q(z|x) || N(0, I))`
//! plus `lambda` times the mean squared positive part of
//! `f(x_sub) - f(x)` over sampled sub-sources, with `z = mu + sigma * eps`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::EpisodePair;
use crate::error::{Error, Result};
use crate::forward::{ForwardModel, ForwardParams};
use crate::graph::Graph;
use crate::numerics::{Activation, AdamConfig, AdamState, BoundMlp, Matrix, MlpParams, Tape, Var};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams {
    /// `|V| -> h -> h -> 2k`; columns `0..k` are the mean, `k..2k` the
    /// log-variance.
    pub encoder: MlpParams,
    /// `k -> h -> h -> |V|` with sigmoid output.
    pub decoder: MlpParams,
    pub latent_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Monotonicity penalty weight.
    pub lambda: f64,
    pub latent_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Sub-sources used per example (capped by what the dataset holds).
    pub subsets_per_sample: usize,
    pub adam: AdamConfig,
    /// Also update the forward surrogate with the full objective.
    pub joint: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            latent_dim: 16,
            hidden: 64,
            epochs: 1000,
            batch_size: 32,
            subsets_per_sample: 4,
            adam: AdamConfig::default(),
            joint: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!("lambda = {} must be >= 0", self.lambda)));
        }
        if self.latent_dim == 0 || self.latent_dim >= num_nodes {
            return Err(Error::InvalidArgument(format!(
                "latent_dim = {} must lie in 1..{num_nodes}",
                self.latent_dim
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

impl VaeParams {
    pub fn init<R: Rng + ?Sized>(num_nodes: usize, latent_dim: usize, hidden: usize, rng: &mut R) -> Self {
        VaeParams {
            encoder: MlpParams::init(
                &[num_nodes, hidden, hidden, 2 * latent_dim],
                &[Activation::Relu, Activation::Relu, Activation::Identity],
                rng,
            ),
            decoder: MlpParams::init(
                &[latent_dim, hidden, hidden, num_nodes],
                &[Activation::Relu, Activation::Relu, Activation::Sigmoid],
                rng,
            ),
            latent_dim,
        }
    }

    pub fn zeros(num_nodes: usize, latent_dim: usize, hidden: usize) -> Self {
        VaeParams {
            encoder: MlpParams::zeros(
                &[num_nodes, hidden, hidden, 2 * latent_dim],
                &[Activation::Relu, Activation::Relu, Activation::Identity],
            ),
            decoder: MlpParams::zeros(
                &[latent_dim, hidden, hidden, num_nodes],
                &[Activation::Relu, Activation::Relu, Activation::Sigmoid],
            ),
            latent_dim,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.latent_dim;
        if self.encoder.output_dim() != 2 * k || self.decoder.input_dim() != k {
            return Err(Error::Dimension {
                expected: 2 * k,
                got: self.encoder.output_dim(),
                context: "latent width",
            });
        }
        if self.decoder.output_dim() != self.encoder.input_dim() {
            return Err(Error::Dimension {
                expected: self.encoder.input_dim(),
                got: self.decoder.output_dim(),
                context: "decoder output width",
            });
        }
        Ok(())
    }

    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.encoder.forward(x)?;
        let k = self.latent_dim;
        let mu = out[..k].to_vec();
        let sigma = out[k..].iter().map(|lv| (0.5 * lv).exp()).collect();
        Ok((mu, sigma))
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.decoder.forward(z)
    }

    /// Decode every row of `z`.
    pub fn decode_batch(&self, z: &Matrix) -> Result<Matrix> {
        self.decoder.forward_batch(z)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundVae {
        BoundVae {
            encoder: self.encoder.bind(tape),
            decoder: self.decoder.bind(tape),
            latent_dim: self.latent_dim,
        }
    }
}

pub fn reparameterize(mu: &[f64], sigma: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != sigma.len() || mu.len() != eps.len() {
        return Err(Error::Dimension {
            expected: mu.len(),
            got: sigma.len().min(eps.len()),
            context: "reparameterization",
        });
    }
    Ok(mu.iter().zip(sigma).zip(eps).map(|((m, s), e)| m + s * e).collect())
}

/// `KL(N(mu, sigma^2) || N(0, I))` in closed form.
pub fn kl_normal(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::Dimension {
            expected: mu.len(),
            got: sigma.len(),
            context: "kl arguments",
        });
    }
    if let Some(s) = sigma.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument(format!("sigma entry {s} is not positive")));
    }
    Ok(-0.5
        * mu.iter()
            .zip(sigma)
            .map(|(m, s)| 1.0 + (s * s).ln() - m * m - s * s)
            .sum::<f64>())
}

/// `||max(0, y_sub - y_sup)||^2`, before the `lambda` weight.
pub fn monotonicity_penalty(y_sup: &[f64], y_sub: &[f64]) -> Result<f64> {
    if y_sup.len() != y_sub.len() {
        return Err(Error::Dimension {
            expected: y_sup.len(),
            got: y_sub.len(),
            context: "penalty arguments",
        });
    }
    Ok(y_sup
        .iter()
        .zip(y_sub)
        .map(|(a, b)| (b - a).max(0.0).powi(2))
        .sum())
}

/// Bernoulli cross-entropy `-sum[x log p + (1-x) log(1-p)]`, `p` clamped.
pub fn bce(x: &[f64], p: &[f64]) -> f64 {
    x.iter()
        .zip(p)
        .map(|(&xi, &pi)| {
            let pi = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(xi * pi.ln() + (1.0 - xi) * (1.0 - pi).ln())
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct BoundVae {
    pub encoder: BoundMlp,
    pub decoder: BoundMlp,
    pub latent_dim: usize,
}

impl BoundVae {
    /// Returns `(mu, log_var)`, each `B x k`, for row-batched `x`.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let h = self.encoder.forward(tape, x)?;
        let k = self.latent_dim;
        Ok((tape.slice_cols(h, 0, k)?, tape.slice_cols(h, k, k)?))
    }

    pub fn decode(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        self.decoder.forward(tape, z)
    }
}

/// `-sum[x log p + (1-x) log(1-p)]` on the tape, `p` clamped.
pub fn bce_tape(tape: &mut Tape, x: Var, p: Var) -> Result<Var> {
    let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let lp = tape.log(p);
    let q = tape.one_minus(p);
    let lq = tape.log(q);
    let xq = tape.one_minus(x);
    let a = tape.mul(x, lp)?;
    let b = tape.mul(xq, lq)?;
    let s = tape.add(a, b)?;
    let s = tape.sum(s);
    Ok(tape.scale(s, -1.0))
}

/// `-1/2 sum(1 + log_var - mu^2 - exp(log_var))` on the tape.
pub fn kl_tape(tape: &mut Tape, mu: Var, log_var: Var) -> Result<Var> {
    let mu2 = tape.mul(mu, mu)?;
    let var = tape.exp(log_var);
    let a = tape.add_scalar(log_var, 1.0);
    let a = tape.sub(a, mu2)?;
    let a = tape.sub(a, var)?;
    let s = tape.sum(a);
    Ok(tape.scale(s, -0.5))
}

/// Loss pieces, each already averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub forward_mse: f64,
    pub reconstruction: f64,
    pub kl: f64,
    /// Mean penalty per sub-source pair, before `lambda`.
    pub penalty: f64,
    pub total: f64,
}

/// One batch prepared for the tape.
#[derive(Debug, Clone)]
pub struct ElboBatch {
    /// `B x |V|` sources.
    pub x: Matrix,
    /// `|V| x B` observations.
    pub y: Matrix,
    /// `B x k` standard-normal draws.
    pub eps: Matrix,
    /// `(example index, sub-source)` pairs.
    pub subsets: Vec<(usize, Vec<f64>)>,
}

impl ElboBatch {
    pub fn from_episodes<R: Rng + ?Sized>(
        batch: &[&EpisodePair],
        latent_dim: usize,
        subsets_per_sample: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Empty("elbo batch"));
        }
        let xs: Vec<Vec<f64>> = batch.iter().map(|e| e.source.as_slice().to_vec()).collect();
        let ys: Vec<Vec<f64>> = batch.iter().map(|e| e.observation.as_slice().to_vec()).collect();
        let eps = Matrix::from_vec(
            batch.len(),
            latent_dim,
            (0..batch.len() * latent_dim).map(|_| rng.sample(StandardNormal)).collect(),
        )?;
        let subsets = batch
            .iter()
            .enumerate()
            .flat_map(|(i, e)| {
                e.subsets
                    .iter()
                    .take(subsets_per_sample)
                    .map(move |(s, _)| (i, s.as_slice().to_vec()))
            })
            .collect();
        Ok(ElboBatch {
            x: Matrix::from_rows(&xs)?,
            y: Matrix::from_columns(&ys)?,
            eps,
            subsets,
        })
    }
}

/// Forward-model pieces of the loss: the squared error to `y` and the
/// monotonicity penalty. `x` is `B x |V|`.
pub fn forward_terms_tape(
    tape: &mut Tape,
    fwd: &dyn ForwardModel,
    g: &Graph,
    x: Var,
    y: Var,
    subsets: &[(usize, Vec<f64>)],
) -> Result<(Var, Var)> {
    let b = tape.value(x).rows() as f64;
    let xt = tape.transpose(x);
    let pred = fwd.predict_tape(tape, g, xt)?;
    let diff = tape.sub(y, pred)?;
    let mse = tape.sum_squares(diff);
    let mse = tape.scale(mse, 1.0 / b);
    let penalty = if subsets.is_empty() {
        tape.constant(Matrix::scalar(0.0))
    } else {
        let cols: Vec<Vec<f64>> = subsets.iter().map(|(_, s)| s.clone()).collect();
        let xs = tape.constant(Matrix::from_columns(&cols)?);
        let ysub = fwd.predict_tape(tape, g, xs)?;
        // gather the matching superset predictions column by column
        let n = g.num_nodes();
        let mut select = Matrix::zeros(tape.value(pred).cols(), subsets.len());
        for (c, (i, _)) in subsets.iter().enumerate() {
            select.set(*i, c, 1.0);
        }
        let sel = tape.constant(select);
        let ysup = tape.matmul(pred, sel)?;
        debug_assert_eq!(tape.value(ysup).rows(), n);
        let d = tape.sub(ysub, ysup)?;
        let d = tape.pos_part(d);
        let s = tape.sum_squares(d);
        tape.scale(s, 1.0 / subsets.len() as f64)
    };
    Ok((mse, penalty))
}

/// VAE pieces (reconstruction and KL), averaged over the batch.
pub fn vae_terms_tape(tape: &mut Tape, vae: &BoundVae, x: Var, eps: Var) -> Result<(Var, Var)> {
    let b = tape.value(x).rows() as f64;
    let (mu, log_var) = vae.encode(tape, x)?;
    let half = tape.scale(log_var, 0.5);
    let sigma = tape.exp(half);
    let noise = tape.mul(sigma, eps)?;
    let z = tape.add(mu, noise)?;
    let recon = vae.decode(tape, z)?;
    let bce = bce_tape(tape, x, recon)?;
    let bce = tape.scale(bce, 1.0 / b);
    let kl = kl_tape(tape, mu, log_var)?;
    let kl = tape.scale(kl, 1.0 / b);
    Ok((bce, kl))
}

pub struct ElboGrads {
    pub terms: LossTerms,
    pub encoder: Vec<Matrix>,
    pub decoder: Vec<Matrix>,
    pub forward: Option<Vec<Matrix>>,
}

/// Full objective and its gradients for one batch.
pub fn elbo_loss(
    vae: &VaeParams,
    fwd: &ForwardParams,
    g: &Graph,
    batch: &ElboBatch,
    lambda: f64,
    train_forward: bool,
) -> Result<ElboGrads> {
    let mut tape = Tape::new();
    let bv = vae.bind(&mut tape);
    let x = tape.constant(batch.x.clone());
    let y = tape.constant(batch.y.clone());
    let eps = tape.constant(batch.eps.clone());
    let (bce, kl) = vae_terms_tape(&mut tape, &bv, x, eps)?;
    let (mse, pen, fwd_vars) = if train_forward {
        let bf = fwd.mlp.bind(&mut tape);
        let bound = BoundForward { params: fwd, mlp: &bf };
        let (m, p) = forward_terms_tape(&mut tape, &bound, g, x, y, &batch.subsets)?;
        (m, p, Some(bf))
    } else {
        let (m, p) = forward_terms_tape(&mut tape, fwd, g, x, y, &batch.subsets)?;
        (m, p, None)
    };
    let wp = tape.scale(pen, lambda);
    let t = tape.add(mse, bce)?;
    let t = tape.add(t, kl)?;
    let total = tape.add(t, wp)?;
    let terms = LossTerms {
        forward_mse: tape.scalar(mse),
        reconstruction: tape.scalar(bce),
        kl: tape.scalar(kl),
        penalty: tape.scalar(pen),
        total: tape.scalar(total),
    };
    if !terms.total.is_finite() {
        return Err(Error::NonFinite {
            context: "elbo loss",
            step: 0,
        });
    }
    let grads = tape.backward(total)?;
    Ok(ElboGrads {
        terms,
        encoder: bv.encoder.grads(&grads),
        decoder: bv.decoder.grads(&grads),
        forward: fwd_vars.map(|b| b.grads(&grads)),
    })
}

/// Forward surrogate whose parameters are already on the tape.
struct BoundForward<'a> {
    params: &'a ForwardParams,
    mlp: &'a BoundMlp,
}

impl ForwardModel for BoundForward<'_> {
    fn predict_tape(&self, tape: &mut Tape, g: &Graph, x: Var) -> Result<Var> {
        self.params.predict_bound(tape, g, self.mlp, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeTrace {
    /// Mean batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub last_terms: LossTerms,
}

/// Adam over encoder and decoder (and the surrogate when `cfg.joint`).
pub fn train_vae<R: Rng + ?Sized>(
    g: &Graph,
    dataset: &[EpisodePair],
    fwd: &ForwardParams,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(VaeParams, ForwardParams, VaeTrace)> {
    use rand::seq::SliceRandom;
    if dataset.is_empty() {
        return Err(Error::Empty("vae training set"));
    }
    let n = g.num_nodes();
    cfg.validate(n)?;
    for e in dataset {
        if e.source.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: e.source.len(),
                context: "training source",
            });
        }
    }
    let mut vae = VaeParams::init(n, cfg.latent_dim, cfg.hidden, rng);
    let mut fwd = fwd.clone();
    let mut opt_enc = AdamState::new(cfg.adam, vae.encoder.tensors());
    let mut opt_dec = AdamState::new(cfg.adam, vae.decoder.tensors());
    let mut opt_fwd = AdamState::new(cfg.adam, fwd.mlp.tensors());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = VaeTrace {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        last_terms: LossTerms::default(),
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let eps_batch: Vec<&EpisodePair> = chunk.iter().map(|&i| &dataset[i]).collect();
            let batch = ElboBatch::from_episodes(&eps_batch, cfg.latent_dim, cfg.subsets_per_sample, rng)?;
            let out = elbo_loss(&vae, &fwd, g, &batch, cfg.lambda, cfg.joint).map_err(|e| match e {
                Error::NonFinite { context, .. } => Error::NonFinite { context, step: epoch },
                other => other,
            })?;
            let diverged = |_| Error::NonFinite {
                context: "vae gradient",
                step: epoch,
            };
            opt_enc.step(&mut vae.encoder.tensors_mut(), &out.encoder).map_err(diverged)?;
            opt_dec.step(&mut vae.decoder.tensors_mut(), &out.decoder).map_err(diverged)?;
            if let Some(fg) = &out.forward {
                opt_fwd.step(&mut fwd.mlp.tensors_mut(), fg).map_err(diverged)?;
            }
            sum += out.terms.total;
            count += 1;
            trace.last_terms = out.terms;
        }
        trace.epoch_loss.push(sum / count as f64);
        if epoch % 100 == 0 {
            log::debug!("vae epoch {epoch}: loss {:.4}", sum / count as f64);
        }
    }
    Ok((vae, fwd, trace))
}

/// Mean over latent dimensions of the variance of `mu(x)` across `sources`.
pub fn posterior_mean_spread(vae: &VaeParams, sources: &[Vec<f64>]) -> Result<f64> {
    if sources.is_empty() {
        return Err(Error::Empty("sources"));
    }
    let mus = sources
        .iter()
        .map(|x| vae.encode(x).map(|(m, _)| m))
        .collect::<Result<Vec<_>>>()?;
    let k = vae.latent_dim;
    let n = mus.len() as f64;
    let mut total = 0.0;
    for d in 0..k {
        let mean = mus.iter().map(|m| m[d]).sum::<f64>() / n;
        total += mus.iter().map(|m| (m[d] - mean).powi(2)).sum::<f64>() / n;
    }
    Ok(total / k as f64)
}
