//! Graph data model, on-disk directory format and GCN propagation matrix.
//!
//! A data directory holds:
//!
//! * `graph.edges`: one `u v` pair of 0-based node ids per line, `#` starts a comment.
//! * `features.csv`: `n` rows of `f` comma-separated finite values, row `i` is node `i`.
//! * `labels.txt` (optional): one non-negative class id per line.
//! * `split.json` (optional): `{"train": [...], "val": [...], "test": [...]}`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::parallel::prelude::*;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EDGES_FILE: &str = "graph.edges";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.txt";
pub const SPLIT_FILE: &str = "split.json";

/// Rows below this count are multiplied serially.
const PAR_ROWS: usize = 512;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    #[serde(default)]
    pub train: Vec<usize>,
    #[serde(default)]
    pub val: Vec<usize>,
    #[serde(default)]
    pub test: Vec<usize>,
}

/// Undirected, unweighted attributed graph.
///
/// Edges are stored once each as `(u, v)` with `u < v`, sorted; self-loops are
/// never stored and are only introduced by [`normalize_adjacency`].
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    features: Array2<f64>,
    edges: Vec<(usize, usize)>,
    labels: Option<Vec<usize>>,
    splits: Option<Splits>,
}

impl Graph {
    /// Builds a validated graph. Edge pairs may come in either orientation and
    /// may repeat; they are canonicalized and deduplicated.
    pub fn new(
        features: Array2<f64>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Option<Vec<usize>>,
        splits: Option<Splits>,
    ) -> Result<Self> {
        let n = features.nrows();
        if let Some((idx, _)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let f = features.ncols().max(1);
            return Err(Error::InvalidGraph(format!(
                "non-finite feature at node {} column {}",
                idx / f,
                idx % f
            )));
        }

        let mut canon = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop on node {u}")));
            }
            canon.insert((u.min(v), u.max(v)));
        }

        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::InvalidGraph(format!(
                    "{} labels for {n} nodes",
                    labels.len()
                )));
            }
        }

        if let Some(splits) = &splits {
            let mut seen = vec![false; n];
            for (name, set) in [
                ("train", &splits.train),
                ("val", &splits.val),
                ("test", &splits.test),
            ] {
                for &i in set {
                    if i >= n {
                        return Err(Error::InvalidGraph(format!(
                            "{name} split index {i} out of range for {n} nodes"
                        )));
                    }
                    if seen[i] {
                        return Err(Error::InvalidGraph(format!(
                            "node {i} appears twice across splits"
                        )));
                    }
                    seen[i] = true;
                }
            }
        }

        Ok(Self {
            features,
            edges: canon.into_iter().collect(),
            labels,
            splits,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    /// Canonical undirected edges, `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn splits(&self) -> Option<&Splits> {
        self.splits.as_ref()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&(u.min(v), u.max(v))).is_ok()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    pub fn with_splits(mut self, splits: Splits) -> Result<Self> {
        Graph::new(
            std::mem::take(&mut self.features),
            self.edges,
            self.labels,
            Some(splits),
        )
    }

    /// Writes the graph in the directory format read by [`load_graph`].
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut edges = String::new();
        for (u, v) in &self.edges {
            let _ = writeln!(edges, "{u} {v}");
        }
        write_file(&dir.join(EDGES_FILE), &edges)?;

        let mut feats = String::new();
        for row in self.features.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    feats.push(',');
                }
                first = false;
                let _ = write!(feats, "{v}");
            }
            feats.push('\n');
        }
        write_file(&dir.join(FEATURES_FILE), &feats)?;

        if let Some(labels) = &self.labels {
            let mut s = String::new();
            for l in labels {
                let _ = writeln!(s, "{l}");
            }
            write_file(&dir.join(LABELS_FILE), &s)?;
        }
        if let Some(splits) = &self.splits {
            let path = dir.join(SPLIT_FILE);
            let s = serde_json::to_string(splits).map_err(|e| Error::json(&path, e))?;
            write_file(&path, &s)?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_required(path: PathBuf) -> Result<String> {
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads a graph from a data directory.
pub fn load_graph(dir: &Path) -> Result<Graph> {
    let feat_path = dir.join(FEATURES_FILE);
    let edge_path = dir.join(EDGES_FILE);
    let feat_text = read_required(feat_path.clone())?;
    let edge_text = read_required(edge_path.clone())?;

    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (lineno, line) in feat_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = values.len();
        for cell in line.split(',') {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(&feat_path, lineno + 1, format!("bad value `{cell}`")))?;
            if !v.is_finite() {
                return Err(parse_err(&feat_path, lineno + 1, "non-finite feature value"));
            }
            values.push(v);
        }
        let w = values.len() - before;
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(parse_err(
                    &feat_path,
                    lineno + 1,
                    format!("ragged row: {w} values, expected {expected}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let width = width.unwrap_or(0);
    let features = Array2::from_shape_vec((rows, width), values)
        .map_err(|e| Error::Shape(e.to_string()))?;

    let mut edges = Vec::new();
    for (lineno, line) in edge_text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(&edge_path, lineno + 1, "expected `u v`"));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(&edge_path, lineno + 1, format!("bad node id `{s}`")))
        };
        let (u, v) = (parse(a)?, parse(b)?);
        if u >= rows || v >= rows {
            return Err(parse_err(
                &edge_path,
                lineno + 1,
                format!("node index out of range for {rows} nodes"),
            ));
        }
        if u == v {
            return Err(parse_err(&edge_path, lineno + 1, "self-loop"));
        }
        edges.push((u, v));
    }

    let label_path = dir.join(LABELS_FILE);
    let labels = if label_path.is_file() {
        let text = fs::read_to_string(&label_path).map_err(|e| Error::io(&label_path, e))?;
        let mut labels = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            labels.push(line.parse::<usize>().map_err(|_| {
                parse_err(&label_path, lineno + 1, format!("bad class id `{line}`"))
            })?);
        }
        Some(labels)
    } else {
        None
    };

    let split_path = dir.join(SPLIT_FILE);
    let splits = if split_path.is_file() {
        let text = fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
        Some(serde_json::from_str::<Splits>(&text).map_err(|e| Error::json(&split_path, e))?)
    } else {
        None
    };

    Graph::new(features, edges, labels, splits)
}

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// `self · rhs`. Each output row is accumulated in column order by one
    /// thread, so the result does not depend on the thread count.
    pub fn matmul(&self, rhs: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(rhs.nrows(), self.n, "sparse matmul dimension mismatch");
        let mut out = Array2::zeros((self.n, rhs.ncols()));
        let fill = |(i, mut row): (usize, ndarray::ArrayViewMut1<'_, f64>)| {
            for (j, v) in self.row(i) {
                row.scaled_add(v, &rhs.row(j));
            }
        };
        if self.n >= PAR_ROWS {
            out.axis_iter_mut(Axis(0))
                .into_par_iter()
                .enumerate()
                .for_each(fill);
        } else {
            out.axis_iter_mut(Axis(0)).enumerate().for_each(fill);
        }
        out
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the degree matrix of `A + I`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency(CsrMatrix);

impl NormalizedAdjacency {
    /// Renormalizes an undirected edge list over `n` nodes. Edges must be
    /// canonical (`u < v`) and unique.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(u, v) in edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        let degree: Vec<f64> = neighbors.iter().map(|nb| nb.len() as f64).collect();

        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(n + 2 * edges.len());
        let mut values = Vec::with_capacity(n + 2 * edges.len());
        indptr.push(0);
        for (i, nb) in neighbors.iter_mut().enumerate() {
            nb.sort_unstable();
            for &j in nb.iter() {
                indices.push(j);
                values.push(1.0 / (degree[i] * degree[j]).sqrt());
            }
            indptr.push(indices.len());
        }
        Self(CsrMatrix {
            n,
            indptr,
            indices,
            values,
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        self.0.to_dense()
    }

    pub fn matmul(&self, rhs: ArrayView2<'_, f64>) -> Array2<f64> {
        self.0.matmul(rhs)
    }
}

pub fn normalize_adjacency(g: &Graph) -> NormalizedAdjacency {
    NormalizedAdjacency::from_edges(g.num_nodes(), g.edges())
}
