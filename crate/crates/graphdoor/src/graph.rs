//! Undirected graph representation, node roles, and the on-disk dataset
//! bundle.
//!
//! A dataset directory holds four files:
//!
//! * `edges.tsv` — one `u\tv` line per undirected edge
//! * `features.bin` — `GDFM` magic, u32 LE rows and cols, f32 LE row-major
//! * `labels.tsv` — `id\tlabel` lines for labeled nodes only
//! * `split.tsv` — `id\trole` line for every node

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, DenseMatrix};

/// Undirected simple graph. Edge ids are insertion order and stable.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new(n: usize) -> Self {
        Graph {
            n,
            edges: Vec::new(),
            adj: vec![Vec::new(); n],
        }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut g = Graph::new(n);
        for (u, v) in edges {
            g.add_edge(u, v)?;
        }
        Ok(g)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical `(min, max)` endpoint pairs in insertion order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Append `count` isolated nodes; returns their id range.
    pub fn add_nodes(&mut self, count: usize) -> std::ops::Range<usize> {
        let start = self.n;
        self.n += count;
        self.adj.resize(self.n, Vec::new());
        start..self.n
    }

    /// Insert an undirected edge. Returns false if it was already present.
    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<bool> {
        if u >= self.n || v >= self.n {
            return Err(Error::InvalidArgument(format!(
                "edge ({u},{v}) out of range for {} nodes",
                self.n
            )));
        }
        if u == v {
            return Err(Error::InvalidArgument(format!("self-loop at node {u}")));
        }
        if self.has_edge(u, v) {
            return Ok(false);
        }
        let (a, b) = (u.min(v), u.max(v));
        self.edges.push((a, b));
        let pos = self.adj[u].binary_search(&v).unwrap_err();
        self.adj[u].insert(pos, v);
        let pos = self.adj[v].binary_search(&u).unwrap_err();
        self.adj[v].insert(pos, u);
        Ok(true)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && v < self.n && self.adj[u].binary_search(&v).is_ok()
    }

    /// Neighbor ids in ascending order.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    /// Symmetrically normalized adjacency with self-loops:
    /// `D^{-1/2} (A + I) D^{-1/2}` where `D` counts the self-loop.
    pub fn normalized_adjacency(&self) -> CsrMatrix {
        let deg: Vec<f64> = (0..self.n).map(|v| (self.degree(v) + 1) as f64).collect();
        let mut offsets = Vec::with_capacity(self.n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for v in 0..self.n {
            let mut cols: Vec<usize> = self.adj[v].clone();
            let pos = cols.binary_search(&v).unwrap_err();
            cols.insert(pos, v);
            for c in cols {
                indices.push(c);
                values.push(1.0 / (deg[v] * deg[c]).sqrt());
            }
            offsets.push(indices.len());
        }
        CsrMatrix::new(self.n, self.n, offsets, indices, values)
            .expect("adjacency arrays are consistent by construction")
    }

    /// Row-normalized adjacency `D^{-1} A` without self-loops. Isolated
    /// nodes get an all-zero row.
    pub fn mean_aggregator(&self) -> CsrMatrix {
        let mut offsets = Vec::with_capacity(self.n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for v in 0..self.n {
            let d = self.degree(v);
            for &u in &self.adj[v] {
                indices.push(u);
                values.push(1.0 / d as f64);
            }
            offsets.push(indices.len());
        }
        CsrMatrix::new(self.n, self.n, offsets, indices, values)
            .expect("adjacency arrays are consistent by construction")
    }

    /// Subgraph induced by `keep` (new ids follow `keep` order). Edges keep
    /// their relative order, so downstream edge-id tie-breaks stay stable.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Result<(Graph, IdMap)> {
        let map = IdMap::from_kept(self.n, keep)?;
        let mut g = Graph::new(keep.len());
        for &(u, v) in &self.edges {
            if let (Some(nu), Some(nv)) = (map.to_new(u), map.to_new(v)) {
                g.add_edge(nu, nv)?;
            }
        }
        Ok((g, map))
    }
}

/// Bijection between surviving old ids and compact new ids.
#[derive(Debug, Clone, PartialEq)]
pub struct IdMap {
    old_of_new: Vec<usize>,
    new_of_old: Vec<Option<usize>>,
}

impl IdMap {
    pub fn identity(n: usize) -> Self {
        IdMap {
            old_of_new: (0..n).collect(),
            new_of_old: (0..n).map(Some).collect(),
        }
    }

    pub fn from_kept(total: usize, keep: &[usize]) -> Result<Self> {
        let mut new_of_old = vec![None; total];
        for (new, &old) in keep.iter().enumerate() {
            if old >= total {
                return Err(Error::InvalidArgument(format!(
                    "kept id {old} out of range for {total} nodes"
                )));
            }
            if new_of_old[old].is_some() {
                return Err(Error::InvalidArgument(format!("kept id {old} repeated")));
            }
            new_of_old[old] = Some(new);
        }
        Ok(IdMap {
            old_of_new: keep.to_vec(),
            new_of_old,
        })
    }

    pub fn len(&self) -> usize {
        self.old_of_new.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_of_new.is_empty()
    }

    pub fn to_old(&self, new: usize) -> usize {
        self.old_of_new[new]
    }

    pub fn to_new(&self, old: usize) -> Option<usize> {
        self.new_of_old.get(old).copied().flatten()
    }

    /// Chain with a second map applied after this one (`self`: A→B,
    /// `later`: B→C, result: A→C).
    pub fn compose(&self, later: &IdMap) -> IdMap {
        IdMap {
            old_of_new: later.old_of_new.iter().map(|&b| self.to_old(b)).collect(),
            new_of_old: self
                .new_of_old
                .iter()
                .map(|b| b.and_then(|b| later.to_new(b)))
                .collect(),
        }
    }
}

/// Provenance tag separating dataset nodes from injected trigger nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeOrigin {
    Original,
    Trigger {
        category: usize,
        pool_index: usize,
        instance: usize,
    },
}

impl NodeOrigin {
    pub fn is_trigger(self) -> bool {
        matches!(self, NodeOrigin::Trigger { .. })
    }
}

impl fmt::Display for NodeOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeOrigin::Original => f.write_str("original"),
            NodeOrigin::Trigger {
                category,
                pool_index,
                instance,
            } => write!(f, "trigger:{category}:{pool_index}:{instance}"),
        }
    }
}

impl NodeOrigin {
    pub fn parse(s: &str) -> Option<NodeOrigin> {
        if s == "original" {
            return Some(NodeOrigin::Original);
        }
        let rest = s.strip_prefix("trigger:")?;
        let mut it = rest.split(':');
        let category = it.next()?.parse().ok()?;
        let pool_index = it.next()?.parse().ok()?;
        let instance = it.next()?.parse().ok()?;
        if it.next().is_some() {
            return None;
        }
        Some(NodeOrigin::Trigger {
            category,
            pool_index,
            instance,
        })
    }
}

/// Write per-node origin tags as `id\ttag` lines.
pub fn write_origins(path: impl AsRef<Path>, origins: &[NodeOrigin]) -> Result<()> {
    let path = path.as_ref();
    let mut w = open_writer(path)?;
    for (i, o) in origins.iter().enumerate() {
        writeln!(w, "{i}\t{o}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read origin tags written by [`write_origins`]; `n` is the expected
/// node count.
pub fn read_origins(path: impl AsRef<Path>, n: usize) -> Result<Vec<NodeOrigin>> {
    let path = path.as_ref();
    let mut origins = vec![None; n];
    for (line_no, line) in read_lines(path)?.iter().enumerate() {
        let mut parts = line.split('\t');
        let bad = |detail: String| Error::Parse {
            file: path.display().to_string(),
            line: line_no + 1,
            detail,
        };
        let id: usize = parts
            .next()
            .unwrap_or("")
            .parse()
            .map_err(|_| bad(format!("bad node id in {line:?}")))?;
        let tag = parts.next().unwrap_or("");
        let origin = NodeOrigin::parse(tag).ok_or_else(|| bad(format!("bad origin {tag:?}")))?;
        if id >= n {
            return Err(bad(format!("node id {id} out of range for {n} nodes")));
        }
        origins[id] = Some(origin);
    }
    origins
        .into_iter()
        .enumerate()
        .map(|(i, o)| {
            o.ok_or_else(|| Error::Parse {
                file: path.display().to_string(),
                line: 0,
                detail: format!("node {i} missing origin"),
            })
        })
        .collect()
}

/// Node role inside a dataset split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    /// Labeled, used for supervised loss.
    Train,
    /// Labeled, used for early model selection.
    Val,
    /// Labeled, used for clean-accuracy reporting.
    Test,
    /// Present in the training graph without a usable label.
    Unlabeled,
    /// Held out of the training graph; attacked at evaluation time.
    Target,
    /// Held out of the training graph; evaluated without a trigger.
    Clean,
}

pub const ALL_ROLES: [Role; 6] = [
    Role::Train,
    Role::Val,
    Role::Test,
    Role::Unlabeled,
    Role::Target,
    Role::Clean,
];

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
            Role::Unlabeled => "unlabeled",
            Role::Target => "target",
            Role::Clean => "clean",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        ALL_ROLES.iter().copied().find(|r| r.as_str() == s)
    }

    /// True for the two roles excluded from the training graph.
    pub fn is_held_out(self) -> bool {
        matches!(self, Role::Target | Role::Clean)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A graph with aligned features, optional labels, and a role per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: Vec<Option<usize>>,
    pub split: Vec<Role>,
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Highest label plus one.
    pub fn num_classes(&self) -> Result<usize> {
        self.labels
            .iter()
            .flatten()
            .max()
            .map(|&m| m + 1)
            .ok_or(Error::NoLabeledNodes)
    }

    /// Node ids with the given role, ascending.
    pub fn role_indices(&self, role: Role) -> Vec<usize> {
        (0..self.split.len())
            .filter(|&i| self.split[i] == role)
            .collect()
    }

    /// Check internal consistency: aligned lengths, finite features,
    /// labels present wherever a labeled role demands one.
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        if self.features.rows() != n {
            return Err(Error::DimensionMismatch {
                context: "dataset".into(),
                detail: format!("{} feature rows for {} nodes", self.features.rows(), n),
            });
        }
        if self.labels.len() != n || self.split.len() != n {
            return Err(Error::DimensionMismatch {
                context: "dataset".into(),
                detail: format!(
                    "{} labels / {} roles for {} nodes",
                    self.labels.len(),
                    self.split.len(),
                    n
                ),
            });
        }
        for r in 0..n {
            for c in 0..self.features.cols() {
                if !self.features.get(r, c).is_finite() {
                    return Err(Error::NonFiniteFeature { row: r, col: c });
                }
            }
        }
        for (i, role) in self.split.iter().enumerate() {
            let labeled_role = matches!(role, Role::Train | Role::Val | Role::Test);
            if labeled_role && self.labels[i].is_none() {
                return Err(Error::InvalidArgument(format!(
                    "node {i} has role {role} but no label"
                )));
            }
        }
        Ok(())
    }

    /// Dataset induced by `keep`, with the id map back to `self`.
    pub fn induced(&self, keep: &[usize]) -> Result<(Dataset, IdMap)> {
        let (graph, map) = self.graph.induced_subgraph(keep)?;
        let mut features = DenseMatrix::zeros(keep.len(), self.features.cols());
        for (new, &old) in keep.iter().enumerate() {
            features.row_mut(new).copy_from_slice(self.features.row(old));
        }
        let labels = keep.iter().map(|&old| self.labels[old]).collect();
        let split = keep.iter().map(|&old| self.split[old]).collect();
        Ok((
            Dataset {
                graph,
                features,
                labels,
                split,
            },
            map,
        ))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

        let edges_path = dir.join("edges.tsv");
        let mut w = open_writer(&edges_path)?;
        for &(u, v) in self.graph.edges() {
            writeln!(w, "{u}\t{v}").map_err(|e| Error::io(edges_path.display().to_string(), e))?;
        }
        w.flush()
            .map_err(|e| Error::io(edges_path.display().to_string(), e))?;

        write_feature_matrix(dir.join("features.bin"), &self.features)?;

        let labels_path = dir.join("labels.tsv");
        let mut w = open_writer(&labels_path)?;
        for (i, label) in self.labels.iter().enumerate() {
            if let Some(l) = label {
                writeln!(w, "{i}\t{l}")
                    .map_err(|e| Error::io(labels_path.display().to_string(), e))?;
            }
        }
        w.flush()
            .map_err(|e| Error::io(labels_path.display().to_string(), e))?;

        let split_path = dir.join("split.tsv");
        let mut w = open_writer(&split_path)?;
        for (i, role) in self.split.iter().enumerate() {
            writeln!(w, "{i}\t{role}")
                .map_err(|e| Error::io(split_path.display().to_string(), e))?;
        }
        w.flush()
            .map_err(|e| Error::io(split_path.display().to_string(), e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let features = read_feature_matrix(dir.join("features.bin"))?;
        let n = features.rows();

        let edges_path = dir.join("edges.tsv");
        let mut edges = Vec::new();
        for (line_no, line) in read_lines(&edges_path)?.iter().enumerate() {
            let (u, v) = parse_pair(line, &edges_path, line_no + 1)?;
            edges.push((u, v));
        }
        let graph = Graph::from_edges(n, edges)?;

        let labels_path = dir.join("labels.tsv");
        let mut labels = vec![None; n];
        for (line_no, line) in read_lines(&labels_path)?.iter().enumerate() {
            let (id, label) = parse_pair(line, &labels_path, line_no + 1)?;
            if id >= n {
                return Err(Error::Parse {
                    file: labels_path.display().to_string(),
                    line: line_no + 1,
                    detail: format!("node id {id} out of range for {n} nodes"),
                });
            }
            labels[id] = Some(label);
        }

        let split_path = dir.join("split.tsv");
        let mut split = vec![None; n];
        for (line_no, line) in read_lines(&split_path)?.iter().enumerate() {
            let mut parts = line.split('\t');
            let id_str = parts.next().unwrap_or("");
            let role_str = parts.next().unwrap_or("");
            let id: usize = id_str.parse().map_err(|_| Error::Parse {
                file: split_path.display().to_string(),
                line: line_no + 1,
                detail: format!("bad node id {id_str:?}"),
            })?;
            let role = Role::parse(role_str).ok_or_else(|| Error::Parse {
                file: split_path.display().to_string(),
                line: line_no + 1,
                detail: format!("unknown role {role_str:?}"),
            })?;
            if id >= n {
                return Err(Error::Parse {
                    file: split_path.display().to_string(),
                    line: line_no + 1,
                    detail: format!("node id {id} out of range for {n} nodes"),
                });
            }
            split[id] = Some(role);
        }
        let split: Vec<Role> = split
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.ok_or_else(|| Error::Parse {
                    file: split_path.display().to_string(),
                    line: 0,
                    detail: format!("node {i} missing from split"),
                })
            })
            .collect::<Result<_>>()?;

        let ds = Dataset {
            graph,
            features,
            labels,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }
}

const FEATURE_MAGIC: &[u8; 4] = b"GDFM";

/// Write a dense matrix as `GDFM` + u32 LE dims + f32 LE row-major values.
pub fn write_feature_matrix(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = open_writer(path)?;
    let io_err = |e| Error::io(path.display().to_string(), e);
    w.write_all(FEATURE_MAGIC).map_err(io_err)?;
    w.write_all(&(m.rows() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(m.cols() as u32).to_le_bytes()).map_err(io_err)?;
    for &v in m.data() {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Read a matrix written by [`write_feature_matrix`]. Values are widened
/// to f64; non-finite entries are rejected.
pub fn read_feature_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(name.clone(), e))?;
    if bytes.len() < 12 {
        return Err(Error::UnexpectedEof(name));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(FEATURE_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[0..4]).into_owned(),
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + rows * cols * 4;
    if bytes.len() != expected {
        return Err(Error::UnexpectedEof(name));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for chunk in bytes[12..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    let m = DenseMatrix::from_vec(rows, cols, data)?;
    for r in 0..rows {
        for c in 0..cols {
            if !m.get(r, c).is_finite() {
                return Err(Error::NonFiniteFeature { row: r, col: c });
            }
        }
    }
    Ok(m)
}

/// Round every entry through f32, matching what a save/load cycle does.
pub fn quantize_f32(m: &DenseMatrix) -> DenseMatrix {
    m.map(|v| v as f32 as f64)
}

fn open_writer(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    Ok(lines)
}

fn parse_pair(line: &str, path: &Path, line_no: usize) -> Result<(usize, usize)> {
    let mut parts = line.split('\t');
    let parse = |s: Option<&str>| -> Result<usize> {
        s.unwrap_or("").trim().parse().map_err(|_| Error::Parse {
            file: path.display().to_string(),
            line: line_no,
            detail: format!("expected two tab-separated integers, got {line:?}"),
        })
    };
    Ok((parse(parts.next())?, parse(parts.next())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spmm;
    use proptest::prelude::*;

    fn path_graph() -> Graph {
        Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn add_edge_rejects_self_loop_and_dedups() {
        let mut g = Graph::new(3);
        assert!(g.add_edge(0, 0).is_err());
        assert!(g.add_edge(0, 5).is_err());
        assert!(g.add_edge(2, 1).unwrap());
        assert!(!g.add_edge(1, 2).unwrap());
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.edges(), &[(1, 2)]);
    }

    #[test]
    fn neighbors_sorted_ascending() {
        let g = Graph::from_edges(5, [(3, 0), (3, 4), (3, 1)]).unwrap();
        assert_eq!(g.neighbors(3), &[0, 1, 4]);
        assert_eq!(g.degree(3), 3);
        assert_eq!(g.degree(2), 0);
    }

    #[test]
    fn normalized_adjacency_two_node_edge() {
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        let a = g.normalized_adjacency().to_dense();
        for r in 0..2 {
            for c in 0..2 {
                assert!((a.get(r, c) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn normalized_adjacency_path_hand_values() {
        // Path 0-1-2 with self-loops: degrees 2, 3, 2.
        let a = path_graph().normalized_adjacency().to_dense();
        assert!((a.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((a.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((a.get(0, 1) - 1.0 / 6.0f64.sqrt()).abs() < 1e-15);
        assert!((a.get(1, 2) - 1.0 / 6.0f64.sqrt()).abs() < 1e-15);
        assert_eq!(a.get(0, 2), 0.0);
        // Symmetry.
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(a.get(r, c), a.get(c, r));
            }
        }
    }

    #[test]
    fn mean_aggregator_rows_sum_to_one_or_zero() {
        let mut g = path_graph();
        g.add_nodes(1); // isolated node 3
        let p = g.mean_aggregator();
        let ones = DenseMatrix::from_vec(4, 1, vec![1.0; 4]).unwrap();
        let sums = spmm(&p, &ones).unwrap();
        assert!((sums.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((sums.get(1, 0) - 1.0).abs() < 1e-15);
        assert!((sums.get(2, 0) - 1.0).abs() < 1e-15);
        assert_eq!(sums.get(3, 0), 0.0);
    }

    #[test]
    fn induced_subgraph_remaps_edges() {
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]).unwrap();
        let (sub, map) = g.induced_subgraph(&[1, 2, 4]).unwrap();
        assert_eq!(sub.num_nodes(), 3);
        assert_eq!(sub.edges(), &[(0, 1)]); // only 1-2 survives
        assert_eq!(map.to_old(2), 4);
        assert_eq!(map.to_new(3), None);
        assert_eq!(map.to_new(4), Some(2));
    }

    #[test]
    fn idmap_compose_chains_two_removals() {
        // 6 nodes -> keep [0,2,3,5] -> keep [1,3] of those.
        let a = IdMap::from_kept(6, &[0, 2, 3, 5]).unwrap();
        let b = IdMap::from_kept(4, &[1, 3]).unwrap();
        let ab = a.compose(&b);
        assert_eq!(ab.len(), 2);
        assert_eq!(ab.to_old(0), 2);
        assert_eq!(ab.to_old(1), 5);
        assert_eq!(ab.to_new(5), Some(1));
        assert_eq!(ab.to_new(0), None);
        assert_eq!(ab.to_new(3), None);
    }

    fn tiny_dataset() -> Dataset {
        let graph = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let features = quantize_f32(
            &DenseMatrix::from_vec(4, 2, vec![0.1, 0.9, 0.4, 0.3, 0.7, 0.2, 0.5, 0.5]).unwrap(),
        );
        Dataset {
            graph,
            features,
            labels: vec![Some(0), Some(1), None, Some(1)],
            split: vec![Role::Train, Role::Val, Role::Unlabeled, Role::Target],
        }
    }

    #[test]
    fn bundle_round_trip_is_identity() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn feature_file_bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.bin");
        fs::write(&path, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x80\x3f").unwrap();
        assert!(matches!(
            read_feature_matrix(&path),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn feature_file_truncation_rejected() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let path = dir.path().join("features.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(
            read_feature_matrix(&path),
            Err(Error::UnexpectedEof(_))
        ));
    }

    #[test]
    fn validate_flags_labeled_role_without_label() {
        let mut ds = tiny_dataset();
        ds.labels[0] = None;
        assert!(ds.validate().is_err());
    }

    #[test]
    fn validate_flags_non_finite_feature() {
        let mut ds = tiny_dataset();
        ds.features.set(1, 0, f64::NAN);
        assert!(matches!(
            ds.validate(),
            Err(Error::NonFiniteFeature { row: 1, col: 0 })
        ));
    }

    proptest! {
        #[test]
        fn prop_bundle_round_trip(
            n in 2usize..12,
            edge_bits in proptest::collection::vec(any::<bool>(), 66),
            labels in proptest::collection::vec(proptest::option::of(0usize..4), 12),
            roles in proptest::collection::vec(0usize..6, 12),
        ) {
            let mut g = Graph::new(n);
            let mut k = 0;
            for u in 0..n {
                for v in (u + 1)..n {
                    if edge_bits[k % edge_bits.len()] {
                        g.add_edge(u, v).unwrap();
                    }
                    k += 1;
                }
            }
            let features = quantize_f32(&DenseMatrix::from_fn(n, 3, |r, c| {
                (r * 3 + c) as f64 * 0.25 - 1.0
            }));
            let labels: Vec<Option<usize>> = (0..n).map(|i| labels[i]).collect();
            let split: Vec<Role> = (0..n)
                .map(|i| {
                    let wanted = ALL_ROLES[roles[i]];
                    // Keep the bundle valid: labeled roles need labels.
                    if labels[i].is_none()
                        && matches!(wanted, Role::Train | Role::Val | Role::Test)
                    {
                        Role::Unlabeled
                    } else {
                        wanted
                    }
                })
                .collect();
            let ds = Dataset { graph: g, features, labels, split };
            let dir = tempfile::tempdir().unwrap();
            ds.save(dir.path()).unwrap();
            let back = Dataset::load(dir.path()).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
