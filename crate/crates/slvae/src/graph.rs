//! Undirected graph storage and edge-list ingestion.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::CsrMatrix;

/// How the propagation operator is derived from the adjacency matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `D^-1 A`
    #[default]
    RowStochastic,
    /// `D^-1/2 A D^-1/2`
    Symmetric,
}

/// Immutable undirected graph with dense `0..n` node indices.
#[derive(Debug, Clone)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Arc<CsrMatrix>,
    norm_adjacency: Arc<CsrMatrix>,
    degrees: Vec<usize>,
    normalization: Normalization,
}

impl Graph {
    /// Build from undirected pairs. Mirrored duplicates collapse; self-loops
    /// are rejected.
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::with_normalization(num_nodes, edges, Normalization::default())
    }

    pub fn with_normalization(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        normalization: Normalization,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            for x in [u, v] {
                if x >= num_nodes {
                    return Err(Error::NodeOutOfRange { index: x, num_nodes });
                }
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("self-loop on node {u}")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_nodes];
        for &(u, v) in &edges {
            rows[u].push((v, 1.0));
            rows[v].push((u, 1.0));
        }
        let degrees: Vec<usize> = rows.iter().map(Vec::len).collect();
        let adjacency = CsrMatrix::from_rows(num_nodes, rows);
        let norm_adjacency = normalize(&adjacency, &degrees, normalization);
        Ok(Graph {
            num_nodes,
            edges,
            adjacency: Arc::new(adjacency),
            norm_adjacency: Arc::new(norm_adjacency),
            degrees,
            normalization,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &Arc<CsrMatrix> {
        &self.adjacency
    }

    pub fn norm_adjacency(&self) -> &Arc<CsrMatrix> {
        &self.norm_adjacency
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn degree(&self, v: usize) -> usize {
        self.degrees[v]
    }

    pub fn max_degree(&self) -> usize {
        self.degrees.iter().copied().max().unwrap_or(0)
    }

    /// Sorted neighbor list of `v`.
    pub fn neighbors(&self, v: usize) -> Result<Vec<usize>> {
        if v >= self.num_nodes {
            return Err(Error::NodeOutOfRange {
                index: v,
                num_nodes: self.num_nodes,
            });
        }
        Ok(self.adjacency.row(v).map(|(c, _)| c).collect())
    }

    /// Neighbors without the bounds check or allocation.
    pub fn neighbor_iter(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.row(v).map(|(c, _)| c)
    }

    /// Stable fingerprint of the node count and edge set.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.num_nodes as u64).to_le_bytes());
        for &(u, v) in &self.edges {
            h.update((u as u64).to_le_bytes());
            h.update((v as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn normalize(adj: &CsrMatrix, degrees: &[usize], mode: Normalization) -> CsrMatrix {
    let rows = (0..adj.n_rows())
        .map(|r| {
            adj.row(r)
                .map(|(c, v)| {
                    let w = match mode {
                        Normalization::RowStochastic => v / degrees[r] as f64,
                        Normalization::Symmetric => {
                            v / ((degrees[r] as f64).sqrt() * (degrees[c] as f64).sqrt())
                        }
                    };
                    (c, w)
                })
                .collect()
        })
        .collect();
    CsrMatrix::from_rows(adj.n_cols(), rows)
}

/// Row-normalize a symmetric 0/1 adjacency; zero rows stay zero.
pub fn row_normalize(adjacency: &CsrMatrix) -> CsrMatrix {
    let degrees: Vec<usize> = (0..adjacency.n_rows())
        .map(|r| adjacency.row(r).count())
        .collect();
    normalize(adjacency, &degrees, Normalization::RowStochastic)
}

struct RawEdges {
    header_nodes: Option<usize>,
    edges: Vec<(u64, u64)>,
}

fn parse_edge_text(path: &Path, text: &str) -> Result<RawEdges> {
    let mut header_nodes = None;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(n) = rest.trim().strip_prefix("nodes=") {
                let n = n.trim().parse::<usize>().map_err(|_| Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    msg: format!("bad node-count header {line:?}"),
                })?;
                header_nodes = Some(n);
            }
            continue;
        }
        let mut it = line.split_whitespace();
        let mut next = || -> Result<u64> {
            let tok = it.next().ok_or_else(|| Error::Parse {
                path: path.into(),
                line: i + 1,
                msg: format!("expected two node ids, got {line:?}"),
            })?;
            tok.parse::<u64>().map_err(|_| Error::Parse {
                path: path.into(),
                line: i + 1,
                msg: format!("not a nonnegative integer: {tok:?}"),
            })
        };
        let u = next()?;
        let v = next()?;
        if it.next().is_some() {
            return Err(Error::Parse {
                path: path.into(),
                line: i + 1,
                msg: format!("expected exactly two node ids, got {line:?}"),
            });
        }
        edges.push((u, v));
    }
    if edges.is_empty() {
        return Err(Error::NoEdges(path.into()));
    }
    Ok(RawEdges { header_nodes, edges })
}

/// Load a whitespace-separated edge list whose ids are already dense.
///
/// `num_nodes` is `1 + max id` unless a `# nodes=N` header says otherwise.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph> {
    load_edge_list_with(path, Normalization::default())
}

pub fn load_edge_list_with(path: impl AsRef<Path>, normalization: Normalization) -> Result<Graph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw = parse_edge_text(path, &text)?;
    let max_id = raw.edges.iter().map(|&(u, v)| u.max(v)).max().unwrap() as usize;
    let n = match raw.header_nodes {
        Some(n) if n <= max_id => {
            return Err(Error::InvalidArgument(format!(
                "{}: header declares {n} nodes but id {max_id} appears",
                path.display()
            )))
        }
        Some(n) => n,
        None => max_id + 1,
    };
    let mut edges = Vec::with_capacity(raw.edges.len());
    for &(u, v) in &raw.edges {
        if u == v {
            log::warn!("{}: dropping self-loop on {u}", path.display());
            continue;
        }
        edges.push((u as usize, v as usize));
    }
    Graph::with_normalization(n, edges, normalization)
}

/// External id to dense index mapping, in dense-index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMap {
    pub external: Vec<u64>,
}

impl IdMap {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# dense external\n");
        for (i, e) in self.external.iter().enumerate() {
            let _ = writeln!(s, "{i} {e}");
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn index_of(&self) -> HashMap<u64, usize> {
        self.external.iter().enumerate().map(|(i, &e)| (e, i)).collect()
    }
}

/// Load an edge list with arbitrary (sparse) integer ids, remapping them to
/// `0..n` in ascending id order.
pub fn load_edge_list_remapped(path: impl AsRef<Path>) -> Result<(Graph, IdMap)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw = parse_edge_text(path, &text)?;
    let ids: BTreeSet<u64> = raw.edges.iter().flat_map(|&(u, v)| [u, v]).collect();
    let map = IdMap {
        external: ids.into_iter().collect(),
    };
    let index = map.index_of();
    let edges = raw
        .edges
        .iter()
        .filter(|(u, v)| u != v)
        .map(|(u, v)| (index[u], index[v]));
    Ok((Graph::from_edges(map.external.len(), edges)?, map))
}

/// Random `degree`-regular graph by the pairing model with restarts.
pub fn random_regular<R: rand::Rng + ?Sized>(n: usize, degree: usize, rng: &mut R) -> Result<Graph> {
    use rand::seq::SliceRandom;
    if n * degree % 2 != 0 || degree >= n {
        return Err(Error::InvalidArgument(format!(
            "no {degree}-regular graph on {n} nodes"
        )));
    }
    'attempt: for _ in 0..1000 {
        let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, degree)).collect();
        stubs.shuffle(rng);
        let mut seen = BTreeSet::new();
        for pair in stubs.chunks(2) {
            let (u, v) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if u != v {
                seen.insert((u, v));
            }
        }
        if seen.len() == n * degree / 2 {
            return Graph::from_edges(n, seen);
        }
        // loops and multi-edges left stubs unpaired; re-pair just those
        let mut deg = vec![0usize; n];
        for &(u, v) in &seen {
            deg[u] += 1;
            deg[v] += 1;
        }
        let mut left: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, degree - deg[v])).collect();
        for _ in 0..100 {
            left.shuffle(rng);
            let mut ok = true;
            let mut added = Vec::new();
            for pair in left.chunks(2) {
                let (u, v) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
                if u == v || seen.contains(&(u, v)) || added.contains(&(u, v)) {
                    ok = false;
                    break;
                }
                added.push((u, v));
            }
            if ok {
                seen.extend(added);
                return Graph::from_edges(n, seen);
            }
        }
        continue 'attempt;
    }
    Err(Error::InvalidArgument(format!(
        "failed to sample a {degree}-regular graph on {n} nodes"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use std::io::Write;

    fn triangle() -> Graph {
        Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn path_graph_normalizes_to_permutation() {
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        let d = g.norm_adjacency().to_dense();
        assert_eq!(d.as_slice(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn triangle_entries_are_half() {
        let g = triangle();
        for r in 0..3 {
            for (_, v) in g.norm_adjacency().row(r) {
                assert_eq!(v, 0.5);
            }
        }
        assert_eq!(g.neighbors(0).unwrap(), vec![1, 2]);
    }

    #[test]
    fn star_center_row() {
        let g = Graph::from_edges(5, [(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        assert!(g.norm_adjacency().row(0).all(|(_, v)| v == 0.25));
        assert!(g.norm_adjacency().row(3).all(|(_, v)| v == 1.0));
    }

    #[test]
    fn isolated_node_and_range() {
        let g = Graph::from_edges(4, [(0, 1)]).unwrap();
        assert!(g.neighbors(3).unwrap().is_empty());
        assert_eq!(g.norm_adjacency().row_sum(3), 0.0);
        assert!(matches!(g.neighbors(4), Err(Error::NodeOutOfRange { .. })));
    }

    #[test]
    fn row_normalize_is_repeatable() {
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (1, 3)]).unwrap();
        let a = row_normalize(g.adjacency());
        let b = row_normalize(g.adjacency());
        assert_eq!(a, b);
        assert_eq!(&a, g.norm_adjacency().as_ref());
    }

    #[test]
    fn mirrored_lines_dedup() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "0 1\n1 0").unwrap();
        let g = load_edge_list(f.path()).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (2, 1));
    }

    #[test]
    fn malformed_line_reports_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment\n0 1\n2 x").unwrap();
        match load_edge_list(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_and_missing_files() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# nothing here").unwrap();
        assert!(matches!(load_edge_list(f.path()), Err(Error::NoEdges(_))));
        assert!(matches!(
            load_edge_list("/definitely/not/here.edges"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn header_overrides_node_count() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# nodes=10\n0 1\n3 4").unwrap();
        let g = load_edge_list(f.path()).unwrap();
        assert_eq!(g.num_nodes(), 10);
    }

    #[test]
    fn sparse_ids_remap() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "100 7\n7 5000").unwrap();
        let (g, map) = load_edge_list_remapped(f.path()).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(map.external, vec![7, 100, 5000]);
        assert_eq!(g.neighbors(0).unwrap(), vec![1, 2]);
        assert!(map.to_text().contains("2 5000"));
    }

    #[test]
    fn regular_graph_degrees() {
        let g = random_regular(200, 10, &mut rng_from(3)).unwrap();
        assert!(g.degrees().iter().all(|&d| d == 10));
        assert_eq!(g.num_edges(), 1000);
    }

    proptest::proptest! {
        #[test]
        fn degree_sum_is_twice_edges(n in 2usize..30, pairs in proptest::collection::vec((0usize..30, 0usize..30), 0..80)) {
            let edges: Vec<_> = pairs.into_iter().filter(|&(u, v)| u < n && v < n && u != v).collect();
            let g = Graph::from_edges(n, edges).unwrap();
            proptest::prop_assert_eq!(g.degrees().iter().sum::<usize>(), 2 * g.num_edges());
            for r in 0..n {
                let s = g.norm_adjacency().row_sum(r);
                if g.degree(r) > 0 {
                    proptest::prop_assert!((s - 1.0).abs() < 1e-9);
                } else {
                    proptest::prop_assert_eq!(s, 0.0);
                }
                for (c, _) in g.adjacency().row(r) {
                    proptest::prop_assert_eq!(g.adjacency().get(c, r), 1.0);
                }
            }
        }
    }
}
