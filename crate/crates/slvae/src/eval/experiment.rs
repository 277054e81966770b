//! Repeated-trial harness: build a training set, train (or reuse) the
//! models, then score every method on fresh simulated queries.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::lpsi::{lpsi_baseline, LpsiConfig};
use super::metrics::{precision_recall_f1, roc_auc, Stat};
use crate::bundle::ModelBundle;
use crate::diffusion::{
    build_dataset_with, encode_dataset, estimate_mc_observation_with, sample_sources, DatasetConfig, EpisodePair,
    SeedVector, SimConfig,
};
use crate::error::{Error, Result};
use crate::forward::{train_forward, ForwardConfig, ForwardTrace};
use crate::graph::Graph;
use crate::inference::{build_latent_bank, infer, InferenceConfig, InferenceMode};
use crate::par::{self, Exec};
use crate::seed::{derive_seed, label, rng_for};
use crate::vae::{train_vae, TrainConfig, VaeTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SlVae,
    SlVaeInitOnly,
    SlVaeNoInit,
    Lpsi,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SlVae => "sl_vae",
            Method::SlVaeInitOnly => "sl_vae_init_only",
            Method::SlVaeNoInit => "sl_vae_no_init",
            Method::Lpsi => "lpsi",
        }
    }

    fn inference_mode(self) -> Option<InferenceMode> {
        match self {
            Method::SlVae => Some(InferenceMode::Full),
            Method::SlVaeInitOnly => Some(InferenceMode::InitOnly),
            Method::SlVaeNoInit => Some(InferenceMode::NoInit),
            Method::Lpsi => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub name: String,
    pub sim: SimConfig,
    pub data: DatasetConfig,
    pub forward: ForwardConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub lpsi: LpsiConfig,
    pub methods: Vec<Method>,
    pub trials: usize,
    /// Simulations averaged into each query observation; 1 gives a single
    /// binary realization.
    pub observation_runs: usize,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "experiment".into(),
            sim: SimConfig::default(),
            data: DatasetConfig::default(),
            forward: ForwardConfig::default(),
            train: TrainConfig::default(),
            inference: InferenceConfig::default(),
            lpsi: LpsiConfig::default(),
            methods: vec![Method::SlVae, Method::Lpsi],
            trials: 10,
            observation_runs: 1,
            seed: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods requested".into()));
        }
        if self.observation_runs == 0 {
            return Err(Error::InvalidArgument("observation_runs must be >= 1".into()));
        }
        self.sim.validate()?;
        if self.needs_models() {
            self.train.validate(num_nodes)?;
            self.inference.validate()?;
        }
        Ok(())
    }

    pub fn needs_models(&self) -> bool {
        self.methods.iter().any(|m| m.inference_mode().is_some())
    }

    /// Hash of every setting that influences the trained models.
    pub fn model_hash(&self) -> String {
        let key = format!(
            "{:?}|{:?}|{:?}|{:?}|{}|{}",
            self.sim, self.data, self.forward, self.train, self.inference.max_bank, self.seed
        );
        hex::encode(Sha256::digest(key.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub bundle: ModelBundle,
    pub forward_trace: ForwardTrace,
    pub vae_trace: VaeTrace,
    pub train_seconds: f64,
}

/// Train the surrogate, then the VAE, then encode the latent bank.
pub fn train_models(g: &Graph, spec: &ExperimentSpec, episodes: &[EpisodePair]) -> Result<TrainedModels> {
    let start = Instant::now();
    let (forward, forward_trace) = train_forward(g, episodes, &spec.forward, &mut rng_for(spec.seed, label::TRAIN, 0))?;
    let (vae, forward, vae_trace) = train_vae(g, episodes, &forward, &spec.train, &mut rng_for(spec.seed, label::TRAIN, 1))?;
    let sources: Vec<Vec<f64>> = episodes.iter().map(|e| e.source.as_slice().to_vec()).collect();
    let bank = build_latent_bank(&vae, &sources, spec.inference.max_bank, &mut rng_for(spec.seed, label::BANK, 0))?;
    Ok(TrainedModels {
        bundle: ModelBundle { forward, vae, bank },
        forward_trace,
        vae_trace,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trained models keyed by (dataset hash, model-config hash).
#[derive(Debug, Default)]
pub struct ModelCache {
    entries: HashMap<(String, String), Arc<TrainedModels>>,
}

impl ModelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get_or_train(
        &mut self,
        g: &Graph,
        spec: &ExperimentSpec,
        episodes: &[EpisodePair],
        dataset_hash: &str,
    ) -> Result<Arc<TrainedModels>> {
        let key = (dataset_hash.to_string(), spec.model_hash());
        if let Some(m) = self.entries.get(&key) {
            log::info!("reusing cached models for {}", spec.name);
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(train_models(g, spec, episodes)?);
        self.entries.insert(key, Arc::clone(&m));
        Ok(m)
    }
}

/// Ground-truth source and the observation shown to every method.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub truth: SeedVector,
    pub observation: Vec<f64>,
}

/// Fresh query for `trial`, drawn from its own seed stream.
pub fn draw_test_case(g: &Graph, spec: &ExperimentSpec, trial: usize) -> Result<TestCase> {
    let mut rng = rng_for(spec.seed, label::TRIAL, trial as u64);
    let truth = sample_sources(g, spec.sim.source_fraction, &mut rng)?;
    let obs = estimate_mc_observation_with(Exec::Sequential, g, &truth, &spec.sim, spec.observation_runs, rng.random())?;
    Ok(TestCase {
        truth,
        observation: obs.into_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub error: String,
}

/// Per-node output of one method on one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDump {
    pub method: Method,
    pub trial: usize,
    pub truth: Vec<f64>,
    pub scores: Vec<f64>,
    pub prediction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    pub requested_trials: usize,
    pub trials: Vec<TrialMetrics>,
    pub failures: Vec<TrialFailure>,
    pub precision: Stat,
    pub recall: Stat,
    pub f1: Stat,
    pub auc: Stat,
    /// Fewer successful trials than requested.
    pub flagged: bool,
}

impl MetricsReport {
    fn aggregate(method: Method, requested: usize, mut trials: Vec<TrialMetrics>, failures: Vec<TrialFailure>) -> Self {
        trials.sort_by_key(|t| t.trial);
        let col = |f: fn(&TrialMetrics) -> f64| Stat::of(&trials.iter().map(f).collect::<Vec<_>>());
        MetricsReport {
            method,
            requested_trials: requested,
            precision: col(|t| t.precision),
            recall: col(|t| t.recall),
            f1: col(|t| t.f1),
            auc: col(|t| t.auc),
            flagged: trials.len() < requested,
            trials,
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub dataset_hash: String,
    pub model_hash: String,
    pub methods: Vec<MetricsReport>,
    #[serde(skip)]
    pub dumps: Vec<ScoreDump>,
}

impl ExperimentReport {
    pub fn method(&self, m: Method) -> Option<&MetricsReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    /// `method,trial,precision,recall,f1,auc`, one row per successful trial.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "method,trial,precision,recall,f1,auc")?;
        for r in &self.methods {
            for t in &r.trials {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    r.method.name(),
                    t.trial,
                    t.precision,
                    t.recall,
                    t.f1,
                    t.auc
                )?;
            }
        }
        Ok(())
    }
}

fn score_method(
    g: &Graph,
    spec: &ExperimentSpec,
    models: Option<&TrainedModels>,
    method: Method,
    trial: usize,
    case: &TestCase,
) -> Result<(TrialMetrics, ScoreDump)> {
    let (scores, prediction) = match method.inference_mode() {
        Some(mode) => {
            let m = models.ok_or(Error::Empty("trained models"))?;
            let cfg = InferenceConfig {
                mode,
                ..spec.inference.clone()
            };
            let mut rng = rng_for(spec.seed, label::INFER, trial as u64);
            let b = &m.bundle;
            let out = infer(&case.observation, &b.forward, &b.vae, &b.bank, g, &cfg, &mut rng)?;
            (out.scores, out.sources.into_vec())
        }
        None => {
            let out = lpsi_baseline(g, &case.observation, &spec.lpsi)?;
            (out.scores, out.prediction)
        }
    };
    let truth = case.truth.as_slice();
    let (precision, recall, f1) = precision_recall_f1(&prediction, truth)?;
    let auc = roc_auc(&scores, truth)?;
    let metrics = TrialMetrics {
        trial,
        precision,
        recall,
        f1,
        auc,
        predicted: prediction.iter().filter(|&&p| p >= 0.5).count(),
    };
    let dump = ScoreDump {
        method,
        trial,
        truth: truth.to_vec(),
        scores,
        prediction,
    };
    Ok((metrics, dump))
}

/// Score every requested method on the given queries. Trials run in
/// parallel under `exec`; results are reduced in trial order.
pub fn evaluate_cases(
    exec: Exec,
    g: &Graph,
    spec: &ExperimentSpec,
    models: Option<&TrainedModels>,
    cases: &[TestCase],
) -> (Vec<MetricsReport>, Vec<ScoreDump>) {
    let per_trial = par::map_indexed(exec, cases.len(), |t| {
        spec.methods
            .iter()
            .map(|&m| score_method(g, spec, models, m, t, &cases[t]))
            .collect::<Vec<_>>()
    });
    let mut reports = Vec::with_capacity(spec.methods.len());
    let mut dumps = Vec::new();
    for (mi, &method) in spec.methods.iter().enumerate() {
        let mut ok = Vec::new();
        let mut failures = Vec::new();
        for (t, row) in per_trial.iter().enumerate() {
            match &row[mi] {
                Ok((m, d)) => {
                    ok.push(*m);
                    dumps.push(d.clone());
                }
                Err(e) => {
                    log::warn!("{} trial {t} failed: {e}", method.name());
                    failures.push(TrialFailure {
                        trial: t,
                        error: e.to_string(),
                    });
                }
            }
        }
        reports.push(MetricsReport::aggregate(method, cases.len(), ok, failures));
    }
    (reports, dumps)
}

/// Full pipeline on a simulated training set and simulated queries.
pub fn run_experiment(g: &Graph, spec: &ExperimentSpec, exec: Exec, cache: &mut ModelCache) -> Result<ExperimentReport> {
    spec.validate(g.num_nodes())?;
    let episodes = build_dataset_with(exec, g, &spec.sim, &spec.data, derive_seed(spec.seed, label::DATASET, 0))?;
    let dataset_hash = hex::encode(Sha256::digest(encode_dataset(g.num_nodes(), &episodes)?));
    let cases = (0..spec.trials)
        .map(|t| draw_test_case(g, spec, t))
        .collect::<Result<Vec<_>>>()?;
    run_experiment_on(g, spec, exec, cache, &episodes, &dataset_hash, &cases)
}

/// Same as [`run_experiment`] with caller-supplied training episodes and
/// queries (e.g. ingested cascades).
pub fn run_experiment_on(
    g: &Graph,
    spec: &ExperimentSpec,
    exec: Exec,
    cache: &mut ModelCache,
    episodes: &[EpisodePair],
    dataset_hash: &str,
    cases: &[TestCase],
) -> Result<ExperimentReport> {
    spec.validate(g.num_nodes())?;
    let models = if spec.needs_models() {
        Some(cache.get_or_train(g, spec, episodes, dataset_hash)?)
    } else {
        None
    };
    let (methods, dumps) = evaluate_cases(exec, g, spec, models.as_deref(), cases);
    Ok(ExperimentReport {
        name: spec.name.clone(),
        dataset_hash: dataset_hash.to_string(),
        model_hash: spec.model_hash(),
        methods,
        dumps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::random_regular;
    use crate::numerics::AdamConfig;
    use crate::seed::rng_from;

    fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec {
            name: "tiny".into(),
            sim: SimConfig {
                beta: 0.3,
                max_iterations: 2,
                ..Default::default()
            },
            data: DatasetConfig {
                num_episodes: 20,
                subsets_per_episode: 2,
                mc_runs: 10,
            },
            forward: ForwardConfig {
                epochs: 3,
                hidden: 8,
                ..Default::default()
            },
            train: TrainConfig {
                latent_dim: 4,
                hidden: 8,
                epochs: 3,
                ..Default::default()
            },
            inference: InferenceConfig {
                n_init: 2,
                n_opt: 4,
                adam: AdamConfig::with_lr(0.3),
                ..Default::default()
            },
            methods: vec![Method::SlVae, Method::SlVaeInitOnly, Method::Lpsi],
            trials: 3,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_means_within_range() {
        let g = random_regular(30, 4, &mut rng_from(1)).unwrap();
        let spec = tiny_spec();
        let a = run_experiment(&g, &spec, Exec::Parallel, &mut ModelCache::new()).unwrap();
        let b = run_experiment(&g, &spec, Exec::Sequential, &mut ModelCache::new()).unwrap();
        assert_eq!(a, b);
        for r in &a.methods {
            assert!(!r.flagged, "{:?}", r.failures);
            assert_eq!(r.trials.len(), 3);
            for (stat, f) in [
                (r.f1, (|t: &TrialMetrics| t.f1) as fn(&TrialMetrics) -> f64),
                (r.auc, |t| t.auc),
                (r.precision, |t| t.precision),
            ] {
                let lo = r.trials.iter().map(f).fold(f64::INFINITY, f64::min);
                let hi = r.trials.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
                assert!(stat.mean >= lo - 1e-12 && stat.mean <= hi + 1e-12);
            }
            for t in &r.trials {
                for v in [t.precision, t.recall, t.f1, t.auc] {
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 3 * 3);
    }

    #[test]
    fn cache_reuses_models() {
        let g = random_regular(24, 4, &mut rng_from(2)).unwrap();
        let spec = tiny_spec();
        let mut cache = ModelCache::new();
        run_experiment(&g, &spec, Exec::Parallel, &mut cache).unwrap();
        let other = ExperimentSpec {
            methods: vec![Method::SlVae],
            trials: 2,
            ..spec.clone()
        };
        run_experiment(&g, &other, Exec::Parallel, &mut cache).unwrap();
        assert_eq!(cache.len(), 1);
        let retrained = ExperimentSpec {
            seed: 6,
            ..spec
        };
        run_experiment(&g, &retrained, Exec::Parallel, &mut cache).unwrap();
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn invalid_specs_rejected() {
        let g = random_regular(20, 4, &mut rng_from(3)).unwrap();
        let mut cache = ModelCache::new();
        for bad in [
            ExperimentSpec {
                trials: 0,
                ..tiny_spec()
            },
            ExperimentSpec {
                methods: vec![],
                ..tiny_spec()
            },
        ] {
            assert!(run_experiment(&g, &bad, Exec::Sequential, &mut cache).is_err());
        }
    }
}
