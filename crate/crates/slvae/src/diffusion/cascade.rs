use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::EpisodePair;
use super::{Observation, SeedVector};
use crate::error::{Error, Result};

/// Which cascade participants count as infected in the observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CascadeLabeling {
    /// Every listed participant is infected.
    #[default]
    AllParticipants,
    /// Only the latest `bottom_fraction` of participants are infected.
    BottomOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeOptions {
    pub top_fraction: f64,
    pub bottom_fraction: f64,
    pub labeling: CascadeLabeling,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        CascadeOptions {
            top_fraction: 0.05,
            bottom_fraction: 0.30,
            labeling: CascadeLabeling::AllParticipants,
        }
    }
}

fn fraction_count(fraction: f64, len: usize) -> usize {
    ((fraction * len as f64).round() as usize).clamp(1, len)
}

/// Parse `cascade_id node_id timestamp` records into episodes. Within a
/// cascade, participants are ordered by `(timestamp, node_id)`.
pub fn parse_cascades(text: &str, num_nodes: usize, opts: &CascadeOptions, origin: &Path) -> Result<Vec<EpisodePair>> {
    let mut cascades: BTreeMap<String, Vec<(f64, usize)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: String| Error::Parse {
            path: origin.into(),
            line: i + 1,
            msg,
        };
        if parts.len() != 3 {
            return Err(bad(format!("expected `cascade node time`, got {line:?}")));
        }
        let node: usize = parts[1]
            .parse()
            .map_err(|_| bad(format!("bad node id {:?}", parts[1])))?;
        if node >= num_nodes {
            return Err(bad(format!("unknown node id {node} (graph has {num_nodes} nodes)")));
        }
        let t: f64 = parts[2]
            .parse()
            .map_err(|_| bad(format!("bad timestamp {:?}", parts[2])))?;
        cascades.entry(parts[0].to_string()).or_default().push((t, node));
    }
    let mut out = Vec::with_capacity(cascades.len());
    for (id, mut recs) in cascades {
        recs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        recs.dedup_by_key(|r| r.1);
        if recs.is_empty() {
            return Err(Error::InvalidArgument(format!("cascade {id} is empty")));
        }
        let n_src = fraction_count(opts.top_fraction, recs.len());
        let n_bottom = fraction_count(opts.bottom_fraction, recs.len());
        log::debug!(
            "cascade {id}: {} participants, {n_src} sources, {n_bottom} bottom-marked",
            recs.len()
        );
        let src: Vec<usize> = recs[..n_src].iter().map(|r| r.1).collect();
        let mut y = vec![0.0; num_nodes];
        let labeled = match opts.labeling {
            CascadeLabeling::AllParticipants => &recs[..],
            CascadeLabeling::BottomOnly => &recs[recs.len() - n_bottom..],
        };
        for &(_, v) in labeled {
            y[v] = 1.0;
        }
        out.push(EpisodePair {
            source: SeedVector::from_indices(num_nodes, &src)?,
            observation: Observation::new_unchecked(y),
            subsets: Vec::new(),
            degenerate: n_src == 1,
        });
    }
    Ok(out)
}

pub fn load_cascades(path: impl AsRef<Path>, num_nodes: usize, opts: &CascadeOptions) -> Result<Vec<EpisodePair>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cascades(&text, num_nodes, opts, path)
}
