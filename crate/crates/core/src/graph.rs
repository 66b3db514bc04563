//! Similarity graphs and graph Laplacians.
//!
//! Two graph families are built from a distance matrix: the fixed-bandwidth
//! ε-graph with the manifold-consistent weight
//! `2(m+2)·vol / (α_m ε^{m+2} n)` and the fully connected self-tuning graph
//! `exp(−δ²/(2τ_i τ_j))`. A self-tuning graph can be restricted to its K-NN
//! edges. Diagonal weights never enter a Laplacian.
//!
//! Eigenvalue conventions: the matrix eigenvalues of `D − W` are what
//! converge to the manifold operator. The Dirichlet-energy quotient
//! `E[u] / ((1/n) Σ u_i²)` equals `n` times the matrix eigenvalue, because the
//! weight already carries the `1/n`.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use ndarray::{Array2, ArrayView2};

use crate::bounds::alpha_m;
use crate::error::{Error, Result};
use crate::linalg::{self, CsrMatrix, SymmetricOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KnnRule {
    /// Keep (i, j) if either point is among the other's K nearest.
    #[default]
    Union,
    /// Keep (i, j) only if each is among the other's K nearest.
    Mutual,
}

impl FromStr for KnnRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" | "or" => Ok(KnnRule::Union),
            "mutual" | "and" => Ok(KnnRule::Mutual),
            other => Err(Error::Parse(format!("unknown K-NN rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    Epsilon,
    SelfTuning,
    Knn(KnnRule),
    External,
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphKind::Epsilon => "epsilon",
            GraphKind::SelfTuning => "self-tuning",
            GraphKind::Knn(KnnRule::Union) => "knn-union",
            GraphKind::Knn(KnnRule::Mutual) => "knn-mutual",
            GraphKind::External => "external",
        })
    }
}

impl FromStr for GraphKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epsilon" => Ok(GraphKind::Epsilon),
            "self-tuning" => Ok(GraphKind::SelfTuning),
            "knn-union" => Ok(GraphKind::Knn(KnnRule::Union)),
            "knn-mutual" => Ok(GraphKind::Knn(KnnRule::Mutual)),
            "external" => Ok(GraphKind::External),
            other => Err(Error::Parse(format!("unknown graph kind `{other}`"))),
        }
    }
}

/// How a graph was constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    pub kind: GraphKind,
    pub eps: Option<f64>,
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub vol: Option<f64>,
}

impl Recipe {
    pub fn external() -> Self {
        Self {
            kind: GraphKind::External,
            eps: None,
            k: None,
            m: None,
            vol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Weights {
    /// Symmetric adjacency lists without self-loops.
    Sparse(Vec<Vec<(usize, f64)>>),
    /// Full matrix; the diagonal may be non-zero but is ignored by Laplacians.
    Dense(Array2<f64>),
}

/// Symmetric non-negative weights on n nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    n: usize,
    weights: Weights,
    recipe: Recipe,
}

impl SimilarityGraph {
    pub fn from_dense(w: Array2<f64>, recipe: Recipe) -> Result<Self> {
        let (n, c) = w.dim();
        if n != c {
            return Err(Error::ShapeMismatch(format!("weight matrix {n}x{c}")));
        }
        for i in 0..n {
            for j in 0..=i {
                let (a, b) = (w[[i, j]], w[[j, i]]);
                if a != b || !(a >= 0.0) || !a.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "weights must be symmetric, finite and non-negative (entry {i},{j})"
                    )));
                }
            }
        }
        Ok(Self {
            n,
            weights: Weights::Dense(w),
            recipe,
        })
    }

    /// Build from undirected edges (i, j, w); self-loops and zero weights are dropped.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], recipe: Recipe) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "edge ({i}, {j}) has invalid weight {w}"
                )));
            }
            if i == j || w == 0.0 {
                continue;
            }
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        for row in adj.iter_mut() {
            row.sort_by_key(|e| e.0);
            row.dedup_by(|a, b| {
                if a.0 == b.0 {
                    b.1 += a.1;
                    true
                } else {
                    false
                }
            });
        }
        Ok(Self {
            n,
            weights: Weights::Sparse(adj),
            recipe,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn recipe(&self) -> &Recipe {
        &self.recipe
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.weights, Weights::Dense(_))
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        match &self.weights {
            Weights::Dense(w) => w[[i, j]],
            Weights::Sparse(adj) => {
                if i == j {
                    return 0.0;
                }
                adj[i]
                    .binary_search_by_key(&j, |e| e.0)
                    .map(|p| adj[i][p].1)
                    .unwrap_or(0.0)
            }
        }
    }

    /// Non-zero weights of row i, diagonal included when stored.
    pub fn row_with_diagonal(&self, i: usize) -> Box<dyn Iterator<Item = (usize, f64)> + '_> {
        match &self.weights {
            Weights::Dense(w) => Box::new(
                w.row(i)
                    .into_iter()
                    .copied()
                    .enumerate()
                    .filter(|(_, v)| *v != 0.0),
            ),
            Weights::Sparse(adj) => Box::new(adj[i].iter().copied()),
        }
    }

    /// Non-zero off-diagonal weights of row i.
    pub fn row_offdiag(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.row_with_diagonal(i).filter(move |(j, _)| *j != i)
    }

    /// D(i,i) = Σ_{j≠i} W(i,j)
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row_offdiag(i).map(|(_, w)| w).sum())
            .collect()
    }

    /// Undirected edges (i < j) with positive weight.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|i| {
                self.row_offdiag(i)
                    .filter(move |(j, _)| *j > i)
                    .map(move |(j, w)| (i, j, w))
            })
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        (0..self.n)
            .map(|i| self.row_offdiag(i).filter(|(j, _)| *j > i).count())
            .sum()
    }

    /// Off-diagonal weights as a dense matrix.
    pub fn to_dense_offdiag(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, w) in self.row_offdiag(i) {
                out[[i, j]] = w;
            }
        }
        out
    }

    /// Number of connected components of the positive-weight graph.
    pub fn component_count(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for i in 0..self.n {
            for (j, _) in self.row_offdiag(i) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
        (0..self.n).filter(|&i| find(&mut parent, i) == i).count()
    }
}

fn check_square(dist: ArrayView2<f64>) -> Result<usize> {
    let (n, c) = dist.dim();
    if n != c {
        return Err(Error::ShapeMismatch(format!("distance matrix {n}x{c}")));
    }
    Ok(n)
}

/// The uniform ε-graph weight 2(m+2)·vol / (α_m ε^{m+2} n).
pub fn epsilon_weight(eps: f64, m: usize, vol: f64, n: usize) -> f64 {
    2.0 * (m as f64 + 2.0) * vol / (alpha_m(m) * eps.powi(m as i32 + 2) * n as f64)
}

/// ε-neighbourhood graph: pairs with δ(i,j) < ε get the uniform weight.
pub fn epsilon_graph(dist: ArrayView2<f64>, eps: f64, m: usize, vol: f64) -> Result<SimilarityGraph> {
    let n = check_square(dist)?;
    if !(eps > 0.0) || !(vol > 0.0) || m == 0 {
        return Err(Error::InvalidParameter(format!(
            "epsilon graph needs eps > 0, vol > 0, m >= 1 (got {eps}, {vol}, {m})"
        )));
    }
    let w = epsilon_weight(eps, m, vol, n);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if dist[[i, j]] < eps {
                edges.push((i, j, w));
            }
        }
    }
    if edges.is_empty() {
        warn!("epsilon graph with eps = {eps} on {n} points has no edges");
    }
    SimilarityGraph::from_edges(
        n,
        &edges,
        Recipe {
            kind: GraphKind::Epsilon,
            eps: Some(eps),
            k: None,
            m: Some(m),
            vol: Some(vol),
        },
    )
}

/// τ(i): distance from i to its K-th nearest neighbour (self excluded).
///
/// Zero scales (duplicated points) are replaced by the smallest positive scale.
pub fn self_tuning_scales(dist: ArrayView2<f64>, k: usize) -> Result<Vec<f64>> {
    let n = check_square(dist)?;
    if k == 0 || k >= n {
        return Err(Error::InvalidK { k, n });
    }
    let nn = linalg::knn_indices(dist, k);
    let mut tau: Vec<f64> = nn
        .iter()
        .enumerate()
        .map(|(i, idx)| dist[[i, idx[k - 1]]])
        .collect();
    let zeros = tau.iter().filter(|t| **t <= 0.0).count();
    if zeros > 0 {
        let floor = tau
            .iter()
            .copied()
            .filter(|t| *t > 0.0)
            .fold(f64::INFINITY, f64::min);
        if !floor.is_finite() {
            return Err(Error::DegenerateScale);
        }
        warn!("{zeros} self-tuning scales are zero; replaced by {floor}");
        tau.iter_mut().filter(|t| **t <= 0.0).for_each(|t| *t = floor);
    }
    Ok(tau)
}

/// Fully connected self-tuning graph W(i,j) = exp(−δ(i,j)² / (2 τ_i τ_j)).
pub fn self_tuning_graph(dist: ArrayView2<f64>, k: usize) -> Result<SimilarityGraph> {
    let n = check_square(dist)?;
    let tau = self_tuning_scales(dist, k)?;
    let w = Array2::from_shape_fn((n, n), |(i, j)| {
        let d = dist[[i, j]];
        (-d * d / (2.0 * tau[i] * tau[j])).exp()
    });
    // exact symmetry regardless of how dist was produced
    let w = Array2::from_shape_fn((n, n), |(i, j)| if i <= j { w[[i, j]] } else { w[[j, i]] });
    SimilarityGraph::from_dense(
        w,
        Recipe {
            kind: GraphKind::SelfTuning,
            eps: None,
            k: Some(k),
            m: None,
            vol: None,
        },
    )
}

/// Zero every weight whose endpoints are not K-nearest neighbours under `rule`.
pub fn knn_restrict(
    g: &SimilarityGraph,
    dist: ArrayView2<f64>,
    k: usize,
    rule: KnnRule,
) -> Result<SimilarityGraph> {
    let n = check_square(dist)?;
    if n != g.n() {
        return Err(Error::ShapeMismatch(format!(
            "graph on {} nodes, distances for {n}",
            g.n()
        )));
    }
    let k = k.min(n.saturating_sub(1));
    let nn = linalg::knn_indices(dist, k);
    let mut member = vec![Vec::new(); n];
    for (i, idx) in nn.iter().enumerate() {
        let mut s = idx.clone();
        s.sort_unstable();
        member[i] = s;
    }
    let is_nn = |i: usize, j: usize| member[i].binary_search(&j).is_ok();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let keep = match rule {
                KnnRule::Union => is_nn(i, j) || is_nn(j, i),
                KnnRule::Mutual => is_nn(i, j) && is_nn(j, i),
            };
            if keep {
                let w = g.weight(i, j);
                if w > 0.0 {
                    edges.push((i, j, w));
                }
            }
        }
    }
    let recipe = Recipe {
        kind: GraphKind::Knn(rule),
        k: Some(k),
        ..g.recipe().clone()
    };
    SimilarityGraph::from_edges(n, &edges, recipe)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplacianKind {
    /// D − W
    Unnormalized,
    /// I − D^{−1/2} W D^{−1/2}
    SymmetricNormalized,
}

#[derive(Debug, Clone)]
enum LaplacianMatrix {
    Sparse(CsrMatrix),
    Dense(Array2<f64>),
}

/// A graph Laplacian, stored sparse or dense following its graph.
#[derive(Debug, Clone)]
pub struct Laplacian {
    kind: LaplacianKind,
    matrix: LaplacianMatrix,
    degrees: Vec<f64>,
}

impl Laplacian {
    pub fn kind(&self) -> LaplacianKind {
        self.kind
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn as_dense(&self) -> Array2<f64> {
        match &self.matrix {
            LaplacianMatrix::Dense(a) => a.clone(),
            LaplacianMatrix::Sparse(s) => s.to_dense(),
        }
    }

    /// uᵀ L u
    pub fn quadratic_form(&self, u: &[f64]) -> f64 {
        let mut lu = vec![0.0; u.len()];
        self.apply(u, &mut lu);
        linalg::dot(u, &lu)
    }
}

impl SymmetricOperator for Laplacian {
    fn dim(&self) -> usize {
        self.degrees.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        match &self.matrix {
            LaplacianMatrix::Sparse(s) => s.apply(x, y),
            LaplacianMatrix::Dense(a) => a.apply(x, y),
        }
    }

    fn norm_bound(&self) -> f64 {
        match &self.matrix {
            LaplacianMatrix::Sparse(s) => s.norm_bound(),
            LaplacianMatrix::Dense(a) => a.norm_bound(),
        }
    }

    fn to_dense(&self) -> Array2<f64> {
        self.as_dense()
    }
}

/// Assemble the Laplacian of `g`; self-loops are excluded from D and W.
pub fn laplacian(g: &SimilarityGraph, kind: LaplacianKind) -> Result<Laplacian> {
    let n = g.n();
    let degrees = g.degrees();
    let scale: Vec<f64> = match kind {
        LaplacianKind::Unnormalized => vec![1.0; n],
        LaplacianKind::SymmetricNormalized => {
            if let Some(i) = degrees.iter().position(|d| !(*d > 0.0)) {
                return Err(Error::IsolatedNode(i));
            }
            degrees.iter().map(|d| 1.0 / d.sqrt()).collect()
        }
    };
    let diag = |i: usize| match kind {
        LaplacianKind::Unnormalized => degrees[i],
        LaplacianKind::SymmetricNormalized => 1.0,
    };
    let matrix = if g.is_dense() {
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for (j, w) in g.row_offdiag(i) {
                a[[i, j]] = -w * scale[i] * scale[j];
            }
            a[[i, i]] = diag(i);
        }
        LaplacianMatrix::Dense(a)
    } else {
        let mut triplets = Vec::new();
        for i in 0..n {
            triplets.push((i, i, diag(i)));
            for (j, w) in g.row_offdiag(i) {
                triplets.push((i, j, -w * scale[i] * scale[j]));
            }
        }
        LaplacianMatrix::Sparse(CsrMatrix::from_triplets(n, triplets))
    };
    Ok(Laplacian {
        kind,
        matrix,
        degrees,
    })
}

/// E[u] = (m+2)·vol / (α_m ε^{m+2} n) · Σ_i Σ_j 1{δ(i,j) < ε} |u_i − u_j|²
pub fn dirichlet_energy(
    dist: ArrayView2<f64>,
    eps: f64,
    m: usize,
    vol: f64,
    u: &[f64],
) -> Result<f64> {
    let n = check_square(dist)?;
    if u.len() != n {
        return Err(Error::LengthMismatch {
            left: u.len(),
            right: n,
        });
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let c = (m as f64 + 2.0) * vol / (alpha_m(m) * eps.powi(m as i32 + 2) * n as f64);
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if dist[[i, j]] < eps {
                let du = u[i] - u[j];
                sum += du * du;
            }
        }
    }
    Ok(c * sum)
}

/// Edge list: header `n m_edges kind`, then `i j w` per undirected edge.
pub fn write_edge_list(path: &Path, g: &SimilarityGraph) -> Result<()> {
    let edges = g.edges();
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{} {} {}", g.n(), edges.len(), g.recipe().kind)?;
    for (i, j, x) in edges {
        writeln!(w, "{i} {j} {x}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_edge_list(path: &Path) -> Result<SimilarityGraph> {
    let bad = |what: &str| Error::Parse(format!("{}: {what}", path.display()));
    let mut lines = BufReader::new(fs::File::open(path)?).lines();
    let header = lines.next().ok_or_else(|| bad("empty file"))??;
    let mut h = header.split_whitespace();
    let n: usize = h.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("header n"))?;
    let count: usize = h
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("header edge count"))?;
    let kind: GraphKind = h.next().ok_or_else(|| bad("header kind"))?.parse()?;
    let mut edges = Vec::with_capacity(count);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split_whitespace();
        let mut next = || f.next().ok_or_else(|| bad("short edge line"));
        let i: usize = next()?.parse().map_err(|_| bad("edge index"))?;
        let j: usize = next()?.parse().map_err(|_| bad("edge index"))?;
        let w: f64 = next()?.parse().map_err(|_| bad("edge weight"))?;
        edges.push((i, j, w));
    }
    if edges.len() != count {
        return Err(bad("edge count does not match header"));
    }
    SimilarityGraph::from_edges(
        n,
        &edges,
        Recipe {
            kind,
            ..Recipe::external()
        },
    )
}
