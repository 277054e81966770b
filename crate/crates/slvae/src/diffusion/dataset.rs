use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sim::{estimate_mc_observation_with, sample_sources, SimConfig};
use super::{Observation, SeedVector};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::persist::Reader;
use crate::par::{self, Exec};
use crate::seed::rng_from;

/// One training sample: a source set, its observation, and observations
/// for sampled sub-sources.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodePair {
    pub source: SeedVector,
    pub observation: Observation,
    pub subsets: Vec<(SeedVector, Observation)>,
    /// The source has a single seed, so every "subset" equals it.
    pub degenerate: bool,
}

impl EpisodePair {
    pub fn subsets_contained(&self) -> bool {
        self.subsets.iter().all(|(s, _)| self.source.contains(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub num_episodes: usize,
    pub subsets_per_episode: usize,
    /// Monte-Carlo simulations per seed set for observation targets.
    pub mc_runs: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            num_episodes: 300,
            subsets_per_episode: 4,
            mc_runs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetDraw {
    pub subsets: Vec<SeedVector>,
    pub degenerate: bool,
}

/// Draw `count` strict sub-sources of `x`, each dropping `k` seeds with
/// `k` uniform in `1..seed_count`.
pub fn sample_monotone_subsets<R: Rng + ?Sized>(x: &SeedVector, count: usize, rng: &mut R) -> Result<SubsetDraw> {
    if !x.is_binary() {
        return Err(Error::InvalidArgument("subset sampling needs a binary seed vector".into()));
    }
    let mut seeds = x.support();
    if seeds.is_empty() {
        return Err(Error::Empty("seed set"));
    }
    if seeds.len() == 1 {
        return Ok(SubsetDraw {
            subsets: vec![x.clone(); count],
            degenerate: true,
        });
    }
    let subsets = (0..count)
        .map(|_| {
            let drop = rng.random_range(1..seeds.len());
            seeds.shuffle(rng);
            let mut v = x.as_slice().to_vec();
            for &s in &seeds[..drop] {
                v[s] = 0.0;
            }
            SeedVector::new(v)
        })
        .collect();
    Ok(SubsetDraw {
        subsets,
        degenerate: false,
    })
}

/// Sample sources and Monte-Carlo observation targets for every episode.
pub fn build_dataset<R: Rng + ?Sized>(
    g: &Graph,
    sim: &SimConfig,
    cfg: &DatasetConfig,
    rng: &mut R,
) -> Result<Vec<EpisodePair>> {
    build_dataset_with(Exec::default(), g, sim, cfg, rng.random())
}

pub fn build_dataset_with(
    exec: Exec,
    g: &Graph,
    sim: &SimConfig,
    cfg: &DatasetConfig,
    base_seed: u64,
) -> Result<Vec<EpisodePair>> {
    sim.validate()?;
    if cfg.num_episodes == 0 {
        return Err(Error::InvalidArgument("num_episodes must be >= 1".into()));
    }
    // sources and subsets are drawn sequentially so the episode list does
    // not depend on scheduling; only the MC estimates fan out
    let mut rng = rng_from(base_seed);
    let mut plans = Vec::with_capacity(cfg.num_episodes);
    for _ in 0..cfg.num_episodes {
        let source = sample_sources(g, sim.source_fraction, &mut rng)?;
        let draw = sample_monotone_subsets(&source, cfg.subsets_per_episode, &mut rng)?;
        let seeds: Vec<u64> = (0..=draw.subsets.len()).map(|_| rng.random()).collect();
        plans.push((source, draw, seeds));
    }
    let episodes = par::map_slice(exec, &plans, |(source, draw, seeds)| -> Result<EpisodePair> {
        let observation = estimate_mc_observation_with(Exec::Sequential, g, source, sim, cfg.mc_runs, seeds[0])?;
        let subsets = draw
            .subsets
            .iter()
            .zip(&seeds[1..])
            .map(|(s, &sd)| {
                Ok((
                    s.clone(),
                    estimate_mc_observation_with(Exec::Sequential, g, s, sim, cfg.mc_runs, sd)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EpisodePair {
            source: source.clone(),
            observation,
            subsets,
            degenerate: draw.degenerate,
        })
    });
    episodes.into_iter().collect()
}

const DATASET_MAGIC: &[u8; 8] = b"SLVAEDS1";

fn pack_bits(x: &SeedVector, out: &mut Vec<u8>) -> Result<()> {
    if !x.is_binary() {
        return Err(Error::InvalidArgument("only binary seed vectors can be persisted".into()));
    }
    let mut bytes = vec![0u8; x.len().div_ceil(8)];
    for (i, &v) in x.as_slice().iter().enumerate() {
        if v == 1.0 {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bytes);
    Ok(())
}

fn unpack_bits(r: &mut Reader<'_>, n: usize) -> Result<SeedVector> {
    let bytes = r.take(n.div_ceil(8))?;
    Ok(SeedVector::new(
        (0..n)
            .map(|i| ((bytes[i / 8] >> (i % 8)) & 1) as f64)
            .collect(),
    ))
}

/// Serialize episodes. Layout: magic, node count u32, episode count u32,
/// then per episode a degenerate byte, packed source bits, observation
/// f64s, subset count u32, and per subset packed bits plus f64s; a SHA-256
/// of everything before it closes the file.
pub fn encode_dataset(num_nodes: usize, episodes: &[EpisodePair]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(num_nodes as u32).to_le_bytes());
    out.extend_from_slice(&(episodes.len() as u32).to_le_bytes());
    let put_obs = |o: &Observation, out: &mut Vec<u8>| -> Result<()> {
        if o.len() != num_nodes {
            return Err(Error::Dimension {
                expected: num_nodes,
                got: o.len(),
                context: "persisted observation",
            });
        }
        for v in o.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(())
    };
    for e in episodes {
        out.push(e.degenerate as u8);
        pack_bits(&e.source, &mut out)?;
        put_obs(&e.observation, &mut out)?;
        out.extend_from_slice(&(e.subsets.len() as u32).to_le_bytes());
        for (s, o) in &e.subsets {
            pack_bits(s, &mut out)?;
            put_obs(o, &mut out)?;
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_dataset(buf: &[u8]) -> Result<(usize, Vec<EpisodePair>)> {
    let mut r = Reader::new(buf);
    if r.take(8)? != DATASET_MAGIC {
        return Err(Error::Format("bad dataset magic".into()));
    }
    let n = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut episodes = Vec::with_capacity(count);
    for _ in 0..count {
        let degenerate = r.u8()? != 0;
        let source = unpack_bits(&mut r, n)?;
        let observation = Observation::new(r.f64s(n)?)?;
        let k = r.u32()? as usize;
        let mut subsets = Vec::with_capacity(k);
        for _ in 0..k {
            let s = unpack_bits(&mut r, n)?;
            subsets.push((s, Observation::new(r.f64s(n)?)?));
        }
        episodes.push(EpisodePair {
            source,
            observation,
            subsets,
            degenerate,
        });
    }
    let end = r.position();
    if Sha256::digest(&buf[..end]).as_slice() != r.take(32)? {
        return Err(Error::Format("dataset checksum mismatch".into()));
    }
    Ok((n, episodes))
}

pub fn write_dataset(path: impl AsRef<Path>, num_nodes: usize, episodes: &[EpisodePair]) -> Result<String> {
    let path = path.as_ref();
    let bytes = encode_dataset(num_nodes, episodes)?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(usize, Vec<EpisodePair>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}
