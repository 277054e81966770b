//! Ground-truth epidemic processes and training-data construction.

mod cascade;
mod dataset;
mod sim;

pub use cascade::{load_cascades, parse_cascades, CascadeLabeling, CascadeOptions};
pub use dataset::{
    build_dataset, build_dataset_with, decode_dataset, encode_dataset, read_dataset,
    sample_monotone_subsets, write_dataset, DatasetConfig, EpisodePair, SubsetDraw,
};
pub use sim::{
    estimate_mc_observation, estimate_mc_observation_with, sample_sources, simulate, simulate_si,
    simulate_si_trace, simulate_sir, Pattern, SimConfig, SirOutcome, Status,
};

use crate::error::{Error, Result};

/// Per-node source indicator, binary for ground truth and relaxed into
/// `[0, 1]` during inference.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedVector(Vec<f64>);

impl SeedVector {
    pub fn new(values: Vec<f64>) -> Self {
        SeedVector(values)
    }

    pub fn zeros(n: usize) -> Self {
        SeedVector(vec![0.0; n])
    }

    pub fn from_indices(n: usize, idx: &[usize]) -> Result<Self> {
        let mut v = vec![0.0; n];
        for &i in idx {
            if i >= n {
                return Err(Error::NodeOutOfRange { index: i, num_nodes: n });
            }
            v[i] = 1.0;
        }
        Ok(SeedVector(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_binary(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Indices with value 1 (or, for relaxed vectors, value > 0.5).
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.5)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self) -> usize {
        self.support().len()
    }

    /// True when every seed of `other` is also a seed of `self`.
    pub fn contains(&self, other: &SeedVector) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(&a, &b)| b <= 0.5 || a > 0.5)
    }
}

/// Per-node infection probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "observation entry {bad} outside [0, 1]"
            )));
        }
        Ok(Observation(values))
    }

    pub(crate) fn new_unchecked(values: Vec<f64>) -> Self {
        Observation(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}
