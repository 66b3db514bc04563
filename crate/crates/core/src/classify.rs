//! Probit semi-supervised binary classification on a similarity graph.
//!
//! The classifier minimises
//!
//! ```text
//! J(u) = (1/2c) uᵀ Δ u − Σ_j log Φ(y_j u_j / γ)
//! ```
//!
//! over the span U of all but the null eigenvector of the symmetric
//! normalised Laplacian Δ, with c = n (Σ_{i≥2} 1/λ_i)⁻¹. Writing u = Q a in the
//! eigenbasis makes the quadratic part diagonal, and a Newton step only needs
//! a J×J solve (J = number of labels) through the Woodbury identity.

use std::sync::Arc;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{self, laplacian, KnnRule, LaplacianKind, SimilarityGraph};
use crate::linalg::{symmetric_eigh, SymmetricOperator};
use crate::pointcloud::PointCloud;
use crate::regularize::{regularize_with_distances, RegularizerSpec};
use crate::spectral::{Convention, Spectrum};

pub const DEFAULT_GAMMA: f64 = 0.1;
const LN_2PI_HALF: f64 = 0.918_938_533_204_672_8;
const EIGEN_FLOOR: f64 = 1e-12;

/// Laplace's continued fraction x + 1/(x + 2/(x + 3/(x + …))) for x ≥ 8,
/// which equals φ(x)/Q(x) with Q the upper normal tail.
fn tail_continued_fraction(x: f64) -> f64 {
    let mut acc = x;
    for k in (1..=60).rev() {
        acc = x + k as f64 / acc;
    }
    acc
}

/// log Φ(z) for the standard normal CDF, finite for every finite z.
pub fn log_phi(z: f64) -> f64 {
    if z < -8.0 {
        let x = -z;
        -0.5 * x * x - LN_2PI_HALF - tail_continued_fraction(x).ln()
    } else if z < 0.0 {
        (0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        (-0.5 * libm::erfc(z / std::f64::consts::SQRT_2)).ln_1p()
    }
}

/// Inverse Mills ratio φ(z)/Φ(z) = d/dz log Φ(z).
pub fn mills_ratio(z: f64) -> f64 {
    if z < -8.0 {
        tail_continued_fraction(-z)
    } else {
        (-0.5 * z * z - LN_2PI_HALF - log_phi(z)).exp()
    }
}

/// log Φ(t/γ), the log-CDF of N(0, γ²) at t.
pub fn log_normal_cdf(t: f64, gamma: f64) -> f64 {
    log_phi(t / gamma)
}

/// Eigen-decomposition of Δ restricted to U, shared between problems on one graph.
#[derive(Debug, Clone)]
pub struct Eigenbasis {
    /// λ_2..λ_n (matrix convention)
    pub values: Vec<f64>,
    /// n × (n−1), columns q_2..q_n
    pub vectors: Array2<f64>,
    pub c: f64,
}

impl Eigenbasis {
    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    /// Decompose the symmetric normalised Laplacian of a connected graph.
    ///
    /// The null vector D^{1/2}1 is known analytically; it is lifted to the top
    /// of the spectrum and discarded, so a nearly disconnected graph still
    /// yields an exactly orthogonal U.
    pub fn from_graph(g: &SimilarityGraph) -> Result<Self> {
        let components = g.component_count();
        if components > 1 {
            return Err(Error::DisconnectedGraph { components });
        }
        let l = laplacian(g, LaplacianKind::SymmetricNormalized)?;
        let n = g.n();
        let mut q1: Vec<f64> = l.degrees().iter().map(|d| d.sqrt()).collect();
        let s = q1.iter().map(|v| v * v).sum::<f64>().sqrt();
        q1.iter_mut().for_each(|v| *v /= s);
        let mut a = l.as_dense();
        for i in 0..n {
            for j in 0..n {
                a[[i, j]] += 3.0 * q1[i] * q1[j];
            }
        }
        let (vals, vecs) = symmetric_eigh(&a);
        let drop = (0..n)
            .map(|c| {
                let p: f64 = (0..n).map(|r| vecs[[r, c]] * q1[r]).sum();
                (c, p.abs())
            })
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .map(|(c, _)| c)
            .unwrap_or(0);
        let keep: Vec<usize> = (0..n).filter(|&c| c != drop).collect();
        let values: Vec<f64> = keep.iter().map(|&c| vals[c].max(EIGEN_FLOOR)).collect();
        let vectors = Array2::from_shape_fn((n, keep.len()), |(r, c)| vecs[[r, keep[c]]]);
        Self::assemble(values, vectors)
    }

    /// From a full spectrum (values ascending, vectors as columns); drops the first pair.
    pub fn from_spectrum(spectrum: &Spectrum) -> Result<Self> {
        let s = spectrum.to_convention(Convention::Matrix);
        let vectors = s
            .vectors
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("spectrum has no eigenvectors".into()))?;
        let n = vectors.nrows();
        if s.values.len() != n || vectors.ncols() != n {
            return Err(Error::InvalidParameter("probit needs the full spectrum".into()));
        }
        if n < 2 || !(s.values[1] > 0.0) {
            return Err(Error::DisconnectedGraph { components: 2 });
        }
        let values = s.values[1..].to_vec();
        let vectors = vectors.slice(ndarray::s![.., 1..]).to_owned();
        Self::assemble(values, vectors)
    }

    fn assemble(values: Vec<f64>, vectors: Array2<f64>) -> Result<Self> {
        let n = vectors.nrows();
        let inv: f64 = values.iter().map(|v| 1.0 / v).sum();
        let c = if values.is_empty() { 1.0 } else { n as f64 / inv };
        Ok(Self { values, vectors, c })
    }

    /// uᵀΔu for u ∈ U.
    pub fn quadratic(&self, u: &[f64]) -> f64 {
        let a = self.coefficients(u);
        a.iter().zip(&self.values).map(|(x, l)| l * x * x).sum()
    }

    /// a = Qᵀ u
    pub fn coefficients(&self, u: &[f64]) -> Vec<f64> {
        let uv = ndarray::ArrayView1::from(u);
        self.vectors.t().dot(&uv).to_vec()
    }

    /// u = Q a
    pub fn expand(&self, a: &[f64]) -> Vec<f64> {
        self.vectors.dot(&ndarray::ArrayView1::from(a)).to_vec()
    }
}

#[derive(Debug, Clone)]
pub struct ProbitProblem {
    basis: Arc<Eigenbasis>,
    labels: Vec<(usize, i8)>,
    gamma: f64,
}

impl ProbitProblem {
    pub fn new(basis: Arc<Eigenbasis>, labels: Vec<(usize, i8)>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
        }
        let n = basis.n();
        let mut seen = vec![false; n];
        for &(i, y) in &labels {
            if i >= n {
                return Err(Error::InvalidParameter(format!("label index {i} out of range")));
            }
            if seen[i] {
                return Err(Error::InvalidParameter(format!("label index {i} repeated")));
            }
            if y != 1 && y != -1 {
                return Err(Error::InvalidParameter(format!("label {y} is not ±1")));
            }
            seen[i] = true;
        }
        Ok(Self {
            basis,
            labels,
            gamma,
        })
    }

    pub fn from_graph(g: &SimilarityGraph, labels: Vec<(usize, i8)>, gamma: f64) -> Result<Self> {
        Self::new(Arc::new(Eigenbasis::from_graph(g)?), labels, gamma)
    }

    pub fn basis(&self) -> &Eigenbasis {
        &self.basis
    }

    pub fn labels(&self) -> &[(usize, i8)] {
        &self.labels
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn c(&self) -> f64 {
        self.basis.c
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    fn likelihood(&self, u_at: impl Fn(usize) -> f64) -> f64 {
        self.labels
            .iter()
            .map(|&(i, y)| -log_normal_cdf(y as f64 * u_at(i), self.gamma))
            .sum()
    }

    /// J in coefficient form.
    fn objective_coeffs(&self, a: &[f64], u_labeled: &[f64]) -> f64 {
        let quad: f64 = a.iter().zip(&self.basis.values).map(|(x, l)| l * x * x).sum();
        let like: f64 = self
            .labels
            .iter()
            .zip(u_labeled)
            .map(|(&(_, y), u)| -log_normal_cdf(y as f64 * u, self.gamma))
            .sum();
        quad / (2.0 * self.c()) + like
    }

    fn labeled_values(&self, a: &[f64]) -> Vec<f64> {
        self.labels
            .iter()
            .map(|&(i, _)| {
                self.basis
                    .vectors
                    .row(i)
                    .iter()
                    .zip(a)
                    .map(|(q, x)| q * x)
                    .sum()
            })
            .collect()
    }
}

/// J(u) for u ∈ U.
pub fn probit_objective(p: &ProbitProblem, u: &[f64]) -> f64 {
    p.basis.quadratic(u) / (2.0 * p.c()) + p.likelihood(|i| u[i])
}

/// ∇J(u) = (1/c) Δu − Σ_j (y_j/γ) M(y_j u_j/γ) e_j, with Δ acting on U.
pub fn probit_gradient(p: &ProbitProblem, u: &[f64]) -> Vec<f64> {
    let a = p.basis.coefficients(u);
    let scaled: Vec<f64> = a
        .iter()
        .zip(&p.basis.values)
        .map(|(x, l)| l * x / p.c())
        .collect();
    let mut g = p.basis.expand(&scaled);
    for &(i, y) in &p.labels {
        let yf = y as f64;
        g[i] -= yf / p.gamma * mills_ratio(yf * u[i] / p.gamma);
    }
    g
}

#[derive(Debug, Clone, Copy)]
pub struct ProbitOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for ProbitOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierResult {
    pub u: Vec<f64>,
    pub predictions: Vec<i8>,
    /// sign mismatches on unlabeled points, when ground truth is known
    pub error_unlabeled: Option<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

pub fn sign(v: f64) -> i8 {
    if v < 0.0 {
        -1
    } else {
        1
    }
}

/// Damped Newton on the coefficients a of u = Q a.
pub fn fit_probit(p: &ProbitProblem, opts: &ProbitOptions, truth: Option<&[i8]>) -> Result<ClassifierResult> {
    let dim = p.basis.values.len();
    let c = p.c();
    let gamma = p.gamma;
    let diag: Vec<f64> = p.basis.values.iter().map(|l| l / c).collect();
    let nl = p.labels.len();
    // B: rows of Q at the labeled nodes
    let b = DMatrix::from_fn(nl, dim, |j, k| p.basis.vectors[[p.labels[j].0, k]]);
    let mut a = vec![0.0; dim];
    let mut ul = vec![0.0; nl];
    let mut f = p.objective_coeffs(&a, &ul);
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;

    for it in 0..=opts.max_iter {
        iterations = it;
        let mut s = vec![0.0; nl];
        let mut h = vec![0.0; nl];
        for (j, &(_, y)) in p.labels.iter().enumerate() {
            let yf = y as f64;
            let z = yf * ul[j] / gamma;
            let m = mills_ratio(z);
            s[j] = -yf * m / gamma;
            h[j] = (m * (z + m)).max(0.0) / (gamma * gamma);
        }
        let sv = DVector::from_vec(s);
        let bts = b.tr_mul(&sv);
        let g: Vec<f64> = (0..dim).map(|k| diag[k] * a[k] + bts[k]).collect();
        grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if grad_norm <= opts.grad_tol {
            break;
        }
        if it == opts.max_iter {
            return Err(Error::ProbitNoConvergence { grad_norm });
        }

        // H⁻¹g = D⁻¹g − D⁻¹BᵀS (I + S B D⁻¹ Bᵀ S)⁻¹ S B D⁻¹ g
        let dinv_g = DVector::from_fn(dim, |k, _| g[k] / diag[k]);
        let sq: Vec<f64> = h.iter().map(|v| v.sqrt()).collect();
        let mut bd = b.clone();
        for k in 0..dim {
            let w = 1.0 / diag[k].sqrt();
            bd.column_mut(k).scale_mut(w);
        }
        let mut inner = &bd * bd.transpose();
        for i in 0..nl {
            for j in 0..nl {
                inner[(i, j)] *= sq[i] * sq[j];
            }
            inner[(i, i)] += 1.0;
        }
        let rhs = DVector::from_fn(nl, |j, _| sq[j] * (b.row(j) * &dinv_g)[(0, 0)]);
        let corr = match inner.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => inner.lu().solve(&rhs).ok_or(Error::ProbitNoConvergence { grad_norm })?,
        };
        let scaled = DVector::from_fn(nl, |j, _| sq[j] * corr[j]);
        let back = b.tr_mul(&scaled);
        let dir: Vec<f64> = (0..dim).map(|k| dinv_g[k] - back[k] / diag[k]).collect();
        let slope: f64 = g.iter().zip(&dir).map(|(x, y)| x * y).sum();

        // Armijo backtracking along −dir
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = a.iter().zip(&dir).map(|(x, d)| x - t * d).collect();
            let trial_ul = p.labeled_values(&trial);
            let ft = p.objective_coeffs(&trial, &trial_ul);
            if ft <= f - 1e-4 * t * slope || (ft <= f + 1e-15 * f.abs() && t < 1.0 && ft <= f) {
                a = trial;
                ul = trial_ul;
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if grad_norm <= 1e-6 {
                warn!("probit line search stalled at gradient norm {grad_norm:e}; accepting");
                break;
            }
            return Err(Error::ProbitNoConvergence { grad_norm });
        }
    }
    debug!("probit converged in {iterations} Newton steps, |g| = {grad_norm:e}");

    let u = p.basis.expand(&a);
    let predictions: Vec<i8> = u.iter().map(|v| sign(*v)).collect();
    let error_unlabeled = truth
        .map(|t| {
            if t.len() != u.len() {
                return Err(Error::LengthMismatch {
                    left: t.len(),
                    right: u.len(),
                });
            }
            let mut labeled = vec![false; u.len()];
            p.labels.iter().for_each(|&(i, _)| labeled[i] = true);
            Ok((0..u.len())
                .filter(|&i| !labeled[i] && predictions[i] != t[i])
                .count())
        })
        .transpose()?;
    Ok(ClassifierResult {
        u,
        predictions,
        error_unlabeled,
        objective: f,
        iterations,
        grad_norm,
    })
}

/// Which graph the classifier runs on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassifierGraph {
    /// Fully connected self-tuning graph with K-th neighbour scales.
    FullyConnected { k: usize },
    /// The self-tuning graph restricted to K-NN edges.
    KnnVariant { k: usize, rule: KnnRule },
}

impl ClassifierGraph {
    pub fn build(&self, dist: ArrayView2<f64>) -> Result<SimilarityGraph> {
        match *self {
            ClassifierGraph::FullyConnected { k } => graph::self_tuning_graph(dist, k),
            ClassifierGraph::KnnVariant { k, rule } => {
                let g = graph::self_tuning_graph(dist, k)?;
                graph::knn_restrict(&g, dist, k, rule)
            }
        }
    }
}

/// A cloud with ground truth and the indices whose labels are revealed.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub cloud: PointCloud,
    pub truth: Vec<i8>,
    pub labeled: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(cloud: PointCloud, truth: Vec<i8>, labeled: Vec<usize>) -> Result<Self> {
        if truth.len() != cloud.n() {
            return Err(Error::LengthMismatch {
                left: truth.len(),
                right: cloud.n(),
            });
        }
        if let Some(&i) = labeled.iter().find(|&&i| i >= cloud.n()) {
            return Err(Error::InvalidParameter(format!("labeled index {i} out of range")));
        }
        Ok(Self {
            cloud,
            truth,
            labeled,
        })
    }

    pub fn labels(&self) -> Vec<(usize, i8)> {
        self.labeled.iter().map(|&i| (i, self.truth[i])).collect()
    }
}

/// Reveal `count` labels, split between the classes in proportion to their
/// size (at least one each when possible).
pub fn stratified_labels(truth: &[i8], count: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] > 0).collect();
    let mut neg: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] <= 0).collect();
    if count > truth.len() {
        return Err(Error::InsufficientLabels(format!(
            "asked for {count} labels among {} points",
            truth.len()
        )));
    }
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut from_pos = ((count as f64) * pos.len() as f64 / truth.len().max(1) as f64).round() as usize;
    if count >= 2 {
        from_pos = from_pos.clamp(1.min(pos.len()), count - 1.min(neg.len()));
    }
    from_pos = from_pos.min(pos.len()).max(count.saturating_sub(neg.len()));
    let mut out: Vec<usize> = pos[..from_pos].iter().chain(&neg[..count - from_pos]).copied().collect();
    out.sort_unstable();
    Ok(out)
}

/// Two stratified folds of the labeled indices.
fn stratified_folds(labels: &[(usize, i8)], rng: &mut ChaCha8Rng) -> [Vec<(usize, i8)>; 2] {
    let mut folds = [Vec::new(), Vec::new()];
    for class in [1i8, -1] {
        let mut members: Vec<(usize, i8)> = labels.iter().copied().filter(|l| l.1 == class).collect();
        members.shuffle(rng);
        for (k, l) in members.into_iter().enumerate() {
            folds[k % 2].push(l);
        }
    }
    folds
}

#[derive(Debug, Clone)]
pub struct CvRow {
    pub spec: RegularizerSpec,
    /// mean held-out error rate over folds and repeats
    pub error_rate: f64,
    pub fold_errors: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub best: RegularizerSpec,
    pub table: Vec<CvRow>,
}

/// 2-fold cross-validation of the regularizer on the labeled set.
///
/// Fold assignments depend only on `seed`, so every grid value is scored on
/// the same splits. Ties go to the smaller scale, then to grid order.
pub fn cross_validate(
    data: &LabeledDataset,
    grid: &[RegularizerSpec],
    graph: ClassifierGraph,
    repeats: usize,
    seed: u64,
    gamma: f64,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty regularizer grid".into()));
    }
    let labels = data.labels();
    for class in [1i8, -1] {
        let count = labels.iter().filter(|l| l.1 == class).count();
        if count < 2 {
            return Err(Error::InsufficientLabels(format!(
                "class {class:+} has {count} labels; cross-validation needs at least 2"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splits: Vec<[Vec<(usize, i8)>; 2]> =
        (0..repeats.max(1)).map(|_| stratified_folds(&labels, &mut rng)).collect();
    let dist = data.cloud.distances();

    let table: Vec<CvRow> = grid
        .par_iter()
        .map(|spec| -> Result<CvRow> {
            let reg = regularize_with_distances(&data.cloud, dist.view(), spec)?;
            let g = graph.build(reg.distances().view())?;
            let basis = Arc::new(Eigenbasis::from_graph(&g)?);
            let mut fold_errors = Vec::new();
            let mut rate = 0.0;
            let mut count = 0usize;
            for split in &splits {
                for f in 0..2 {
                    let (train, test) = (&split[f], &split[1 - f]);
                    let p = ProbitProblem::new(basis.clone(), train.clone(), gamma)?;
                    let fit = fit_probit(&p, &ProbitOptions::default(), None)?;
                    let errs = test.iter().filter(|&&(i, y)| fit.predictions[i] != y).count();
                    fold_errors.push(errs);
                    rate += errs as f64 / test.len() as f64;
                    count += 1;
                }
            }
            Ok(CvRow {
                spec: *spec,
                error_rate: rate / count as f64,
                fold_errors,
            })
        })
        .collect::<Result<_>>()?;

    let best = table
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            a.error_rate
                .total_cmp(&b.error_rate)
                .then(a.spec.scale().total_cmp(&b.spec.scale()))
                .then(i.cmp(j))
        })
        .map(|(_, r)| r.spec)
        .expect("grid is non-empty");
    Ok(CvResult { best, table })
}

/// Regularize, build the graph and fit with every revealed label.
pub fn classify(
    data: &LabeledDataset,
    spec: &RegularizerSpec,
    graph: ClassifierGraph,
    gamma: f64,
) -> Result<ClassifierResult> {
    if data.labeled.is_empty() {
        return Err(Error::InsufficientLabels("no labels revealed".into()));
    }
    let dist = data.cloud.distances();
    let reg = regularize_with_distances(&data.cloud, dist.view(), spec)?;
    let g = graph.build(reg.distances().view())?;
    let p = ProbitProblem::from_graph(&g, data.labels(), gamma)?;
    fit_probit(&p, &ProbitOptions::default(), Some(&data.truth))
}

impl SymmetricOperator for Eigenbasis {
    fn dim(&self) -> usize {
        self.n()
    }

    /// Δ restricted to U: Q diag(λ) Qᵀ x
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let a = self.coefficients(x);
        let s: Vec<f64> = a.iter().zip(&self.values).map(|(c, l)| c * l).collect();
        y.copy_from_slice(&self.expand(&s));
    }

    fn norm_bound(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}
