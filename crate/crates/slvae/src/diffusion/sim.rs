use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Observation, SeedVector};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::par::{self, Exec};
use crate::seed::{self, label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pattern {
    Si,
    Sir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub pattern: Pattern,
    /// Per-contact, per-step infection probability.
    pub beta: f64,
    /// Per-step recovery probability (SIR only).
    pub gamma: f64,
    pub max_iterations: usize,
    pub source_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            pattern: Pattern::Si,
            beta: 0.1,
            gamma: 0.1,
            max_iterations: 200,
            source_fraction: 0.10,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} = {p} is not a probability")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if !(self.source_fraction > 0.0 && self.source_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "source_fraction = {} must lie in (0, 1]",
                self.source_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Susceptible,
    Infected,
    Recovered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirOutcome {
    pub status: Vec<Status>,
    /// 1 for currently infected nodes, 0 for susceptible and recovered.
    pub observation: Vec<u8>,
}

#[inline]
fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    if p <= 0.0 {
        false
    } else if p >= 1.0 {
        true
    } else {
        rng.random::<f64>() < p
    }
}

/// Draw `round(fraction * n)` distinct sources (at least one).
pub fn sample_sources<R: Rng + ?Sized>(g: &Graph, fraction: f64, rng: &mut R) -> Result<SeedVector> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "source fraction {fraction} must lie in (0, 1]"
        )));
    }
    let n = g.num_nodes();
    if n == 0 {
        return Err(Error::Empty("graph"));
    }
    let mut k = (fraction * n as f64).round() as usize;
    if k == 0 {
        log::warn!("source fraction {fraction} on {n} nodes rounds to zero seeds; using one");
        k = 1;
    }
    let idx = rand::seq::index::sample(rng, n, k.min(n)).into_vec();
    SeedVector::from_indices(n, &idx)
}

/// Shared synchronous SI/SIR stepper. `on_step` sees the state after
/// initialization and after every step.
fn run<R: Rng + ?Sized>(
    g: &Graph,
    seeds: &SeedVector,
    beta: f64,
    gamma: f64,
    steps: usize,
    rng: &mut R,
    mut on_step: impl FnMut(&[Status]),
) -> Result<Vec<Status>> {
    let n = g.num_nodes();
    if seeds.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: seeds.len(),
            context: "seed vector",
        });
    }
    let seed_idx = seeds.support();
    if seed_idx.is_empty() {
        return Err(Error::Empty("seed set"));
    }
    let mut status = vec![Status::Susceptible; n];
    for &s in &seed_idx {
        status[s] = Status::Infected;
    }
    on_step(&status);
    let mut infected: Vec<usize> = seed_idx;
    for _ in 0..steps {
        let mut newly = Vec::new();
        let mut can_spread = false;
        for &u in &infected {
            for v in g.neighbor_iter(u) {
                if status[v] != Status::Susceptible {
                    continue;
                }
                can_spread = true;
                if bernoulli(rng, beta) {
                    status[v] = Status::Infected;
                    newly.push(v);
                }
            }
        }
        let mut still = Vec::with_capacity(infected.len() + newly.len());
        if gamma > 0.0 {
            for &u in &infected {
                if bernoulli(rng, gamma) {
                    status[u] = Status::Recovered;
                } else {
                    still.push(u);
                }
            }
        } else {
            still.extend_from_slice(&infected);
        }
        still.extend(newly);
        still.sort_unstable();
        infected = still;
        on_step(&status);
        let fixpoint = if gamma > 0.0 {
            infected.is_empty()
        } else {
            !can_spread || beta <= 0.0
        };
        if fixpoint {
            break;
        }
    }
    Ok(status)
}

/// SI process; returns the binary infection vector.
pub fn simulate_si<R: Rng + ?Sized>(
    g: &Graph,
    seeds: &SeedVector,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Vec<u8>> {
    let st = run(g, seeds, cfg.beta, 0.0, cfg.max_iterations, rng, |_| {})?;
    Ok(st.iter().map(|&s| (s == Status::Infected) as u8).collect())
}

/// SI process recording the infected set after every step.
pub fn simulate_si_trace<R: Rng + ?Sized>(
    g: &Graph,
    seeds: &SeedVector,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Vec<Vec<u8>>> {
    let mut trace = Vec::new();
    run(g, seeds, cfg.beta, 0.0, cfg.max_iterations, rng, |st| {
        trace.push(st.iter().map(|&s| (s == Status::Infected) as u8).collect())
    })?;
    Ok(trace)
}

/// SIR process: infections as in SI, then each previously infected node
/// recovers with probability `gamma`.
pub fn simulate_sir<R: Rng + ?Sized>(
    g: &Graph,
    seeds: &SeedVector,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<SirOutcome> {
    let status = run(g, seeds, cfg.beta, cfg.gamma, cfg.max_iterations, rng, |_| {})?;
    let observation = status.iter().map(|&s| (s == Status::Infected) as u8).collect();
    Ok(SirOutcome { status, observation })
}

/// Binary observation under the configured pattern.
pub fn simulate<R: Rng + ?Sized>(
    g: &Graph,
    seeds: &SeedVector,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Vec<u8>> {
    match cfg.pattern {
        Pattern::Si => simulate_si(g, seeds, cfg, rng),
        Pattern::Sir => Ok(simulate_sir(g, seeds, cfg, rng)?.observation),
    }
}

/// Per-node infection frequency over `runs` independent simulations.
pub fn estimate_mc_observation<R: Rng + ?Sized>(
    g: &Graph,
    seeds: &SeedVector,
    cfg: &SimConfig,
    runs: usize,
    rng: &mut R,
) -> Result<Observation> {
    estimate_mc_observation_with(Exec::default(), g, seeds, cfg, runs, rng.random())
}

/// As [`estimate_mc_observation`] with an explicit execution mode and base
/// seed. Run `r` uses a stream derived from `(base_seed, r)`, so the result
/// does not depend on the mode or thread count.
pub fn estimate_mc_observation_with(
    exec: Exec,
    g: &Graph,
    seeds: &SeedVector,
    cfg: &SimConfig,
    runs: usize,
    base_seed: u64,
) -> Result<Observation> {
    if runs == 0 {
        return Err(Error::InvalidArgument("runs must be >= 1".into()));
    }
    let outcomes = par::map_indexed(exec, runs, |r| {
        let mut rng = seed::rng_for(base_seed, label::MC_RUN, r as u64);
        simulate(g, seeds, cfg, &mut rng)
    });
    let mut counts = vec![0u64; g.num_nodes()];
    for o in outcomes {
        for (c, v) in counts.iter_mut().zip(o?) {
            *c += v as u64;
        }
    }
    Ok(Observation::new_unchecked(
        counts.iter().map(|&c| c as f64 / runs as f64).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn path(n: usize) -> Graph {
        Graph::from_edges(n, (0..n - 1).map(|i| (i, i + 1))).unwrap()
    }

    fn cfg(beta: f64, gamma: f64, steps: usize) -> SimConfig {
        SimConfig {
            beta,
            gamma,
            max_iterations: steps,
            ..Default::default()
        }
    }

    #[test]
    fn source_counts() {
        let g = path(34);
        let x = sample_sources(&g, 0.10, &mut rng_from(1)).unwrap();
        assert_eq!(x.count(), 3);
        assert!(x.is_binary());
        let all = sample_sources(&g, 1.0, &mut rng_from(1)).unwrap();
        assert!(all.as_slice().iter().all(|&v| v == 1.0));
        let g198 = path(198);
        assert_eq!(sample_sources(&g198, 0.10, &mut rng_from(2)).unwrap().count(), 20);
        assert_eq!(sample_sources(&path(5), 0.01, &mut rng_from(2)).unwrap().count(), 1);
        assert!(sample_sources(&g, 0.0, &mut rng_from(1)).is_err());
    }

    #[test]
    fn zero_beta_keeps_seeds() {
        let g = path(6);
        let x = SeedVector::from_indices(6, &[2]).unwrap();
        let y = simulate_si(&g, &x, &cfg(0.0, 0.0, 200), &mut rng_from(0)).unwrap();
        assert_eq!(y, vec![0, 0, 1, 0, 0, 0]);
    }

    #[test]
    fn unit_beta_fills_component() {
        let g = Graph::from_edges(7, [(0, 1), (1, 2), (2, 3), (4, 5)]).unwrap();
        let x = SeedVector::from_indices(7, &[1]).unwrap();
        let y = simulate_si(&g, &x, &cfg(1.0, 0.0, 200), &mut rng_from(0)).unwrap();
        assert_eq!(y, vec![1, 1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn one_step_neighbor_probability() {
        let g = path(5);
        let x = SeedVector::from_indices(5, &[0]).unwrap();
        let c = cfg(0.5, 0.0, 1);
        let mut rng = rng_from(42);
        let hits: usize = (0..10_000)
            .map(|_| simulate_si(&g, &x, &c, &mut rng).unwrap()[1] as usize)
            .sum();
        let p = hits as f64 / 10_000.0;
        assert!((p - 0.5).abs() < 0.02, "{p}");
    }

    #[test]
    fn sir_with_full_recovery() {
        let g = path(4);
        let x = SeedVector::from_indices(4, &[0, 3]).unwrap();
        let out = simulate_sir(&g, &x, &cfg(0.0, 1.0, 1), &mut rng_from(5)).unwrap();
        assert_eq!(out.status[0], Status::Recovered);
        assert_eq!(out.status[3], Status::Recovered);
        assert_eq!(out.observation, vec![0, 0, 0, 0]);
    }

    #[test]
    fn sir_zero_gamma_equals_si() {
        let g = Graph::from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)]).unwrap();
        let x = SeedVector::from_indices(6, &[0]).unwrap();
        let c = cfg(0.3, 0.0, 5);
        for s in 0..50 {
            let a = simulate_si(&g, &x, &c, &mut rng_from(s)).unwrap();
            let b = simulate_sir(&g, &x, &c, &mut rng_from(s)).unwrap().observation;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mc_seed_is_certain_and_beta_zero_is_exact() {
        let g = path(5);
        let x = SeedVector::from_indices(5, &[1]).unwrap();
        let y = estimate_mc_observation(&g, &x, &cfg(0.4, 0.0, 3), 200, &mut rng_from(9)).unwrap();
        assert_eq!(y.as_slice()[1], 1.0);
        let y0 = estimate_mc_observation(&g, &x, &cfg(0.0, 0.0, 3), 50, &mut rng_from(9)).unwrap();
        assert_eq!(y0.as_slice(), x.as_slice());
    }

    #[test]
    fn mc_independent_of_exec_mode() {
        let g = path(8);
        let x = SeedVector::from_indices(8, &[3]).unwrap();
        let c = cfg(0.3, 0.1, 4);
        let a = estimate_mc_observation_with(Exec::Sequential, &g, &x, &c, 500, 77).unwrap();
        let b = estimate_mc_observation_with(Exec::Parallel, &g, &x, &c, 500, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_seed_set_rejected() {
        let g = path(3);
        assert!(simulate_si(&g, &SeedVector::zeros(3), &cfg(0.5, 0.0, 2), &mut rng_from(0)).is_err());
    }
}
