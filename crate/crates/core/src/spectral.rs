//! Smallest eigenpairs of graph Laplacians, the sphere spectrum, and the
//! eigenvalue sandwich between graphs built on perturbed distances.
//!
//! Small operators (n ≤ [`DENSE_LIMIT`]) are diagonalised densely. Larger ones
//! go through a block Lanczos iteration with thick restarts that only needs
//! matrix-vector products. The block size guards against missing copies of
//! repeated eigenvalues, which a single-vector Krylov space cannot see.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use log::debug;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{epsilon_graph, laplacian, LaplacianKind};
use crate::linalg::{dot, norm, symmetric_eigh, SymmetricOperator};

pub const DENSE_LIMIT: usize = 2000;
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    /// Dirichlet-energy quotient with the 1/n-weighted norm (= n × matrix).
    Scaled,
    /// Plain eigenvalues of the matrix.
    Matrix,
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    /// n × k, orthonormal columns
    pub vectors: Option<Array2<f64>>,
    pub convention: Convention,
    /// number of graph nodes
    pub n: usize,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_convention(&self, convention: Convention) -> Spectrum {
        let factor = match (self.convention, convention) {
            (Convention::Matrix, Convention::Scaled) => self.n as f64,
            (Convention::Scaled, Convention::Matrix) => 1.0 / self.n as f64,
            _ => 1.0,
        };
        Spectrum {
            values: self.values.iter().map(|v| v * factor).collect(),
            vectors: self.vectors.clone(),
            convention,
            n: self.n,
        }
    }
}

/// The `k` algebraically smallest eigenpairs (matrix convention).
pub fn smallest_eigs(op: &dyn SymmetricOperator, k: usize, tol: f64) -> Result<Spectrum> {
    let n = op.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let (values, vectors) = if n <= DENSE_LIMIT {
        dense_smallest(op, k)
    } else {
        lanczos_smallest(op, k, tol, 50 * k)?
    };
    Ok(Spectrum {
        values,
        vectors: Some(vectors),
        convention: Convention::Matrix,
        n,
    })
}

pub fn dense_smallest(op: &dyn SymmetricOperator, k: usize) -> (Vec<f64>, Array2<f64>) {
    let (vals, vecs) = symmetric_eigh(&op.to_dense());
    let cols = vecs.slice(ndarray::s![.., ..k]).to_owned();
    (vals[..k].to_vec(), cols)
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // two passes of classical Gram-Schmidt
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
}

/// Approximate (A + sI)⁻¹ b by conjugate gradients; exactness is not required
/// because the result only enlarges a search space.
fn shifted_solve(op: &dyn SymmetricOperator, shift: f64, b: &[f64], rtol: f64, max_iter: usize) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let stop = rtol * rtol * rr;
    for _ in 0..max_iter {
        if rr <= stop {
            break;
        }
        op.apply(&p, &mut ap);
        ap.iter_mut().zip(&p).for_each(|(a, q)| *a += shift * q);
        let alpha = rr / dot(&p, &ap);
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        let next = dot(&r, &r);
        let beta = next / rr;
        rr = next;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
    }
    x
}

/// Block Davidson iteration with thick restarts for the smallest eigenpairs.
///
/// Each step enlarges the search space with (A + sI)⁻¹ r for the residuals r
/// of the unconverged Ritz pairs (the inverse applied by CG), which is
/// equivalent to shift-invert Krylov on the current Ritz vectors. Ritz values
/// and residuals are always taken with respect to A itself, so inexact inner
/// solves only slow convergence down. `max_restarts` caps the outer steps.
pub fn lanczos_smallest(
    op: &dyn SymmetricOperator,
    k: usize,
    tol: f64,
    max_restarts: usize,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = op.dim();
    let block = k.clamp(1, 16);
    let max_basis = (2 * k + 20).max(k + 50).max(k + 2 * block).min(n);
    let keep = (k + (max_basis - k) / 3).min(max_basis - block).max(k);
    let scale = op.norm_bound();
    let shift = if scale > 0.0 { 1e-3 * scale } else { 1.0 };
    let expand = |x: &[f64]| shifted_solve(op, shift, x, 1e-6, 4 * n.max(100));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let random = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.random::<f64>() - 0.5).collect() };

    let mut v: Vec<Vec<f64>> = Vec::with_capacity(max_basis);
    let mut av: Vec<Vec<f64>> = Vec::with_capacity(max_basis);
    let push = |cand: Vec<f64>, v: &mut Vec<Vec<f64>>, av: &mut Vec<Vec<f64>>| -> bool {
        let mut cand = cand;
        let before = norm(&cand);
        orthogonalize(&mut cand, v);
        let nrm = norm(&cand);
        if !(nrm > 1e-8 * before) || !(nrm > 0.0) {
            return false;
        }
        cand.iter_mut().for_each(|x| *x /= nrm);
        let mut out = vec![0.0; n];
        op.apply(&cand, &mut out);
        v.push(cand);
        av.push(out);
        true
    };
    let mut start = Vec::new();
    for _ in 0..block {
        start.push(expand(&random(&mut rng)));
    }
    for c in start {
        push(c, &mut v, &mut av);
    }
    let mut worst = f64::INFINITY;

    for step in 0..=max_restarts {
        let p = v.len();
        let t = Array2::from_shape_fn((p, p), |(i, j)| 0.5 * (dot(&v[i], &av[j]) + dot(&v[j], &av[i])));
        let (theta, s) = symmetric_eigh(&t);
        let ritz = |cols: usize, src: &[Vec<f64>]| -> Vec<Vec<f64>> {
            (0..cols)
                .map(|c| {
                    let mut y = vec![0.0; n];
                    for (i, b) in src.iter().enumerate() {
                        let w = s[[i, c]];
                        y.iter_mut().zip(b).for_each(|(a, x)| *a += w * x);
                    }
                    y
                })
                .collect()
        };
        let nkeep = keep.min(p);
        let y = ritz(nkeep, &v);
        let ay = ritz(nkeep, &av);
        let residuals: Vec<Vec<f64>> = (0..k.min(nkeep))
            .map(|c| ay[c].iter().zip(&y[c]).map(|(a, b)| a - theta[c] * b).collect())
            .collect();
        let limit = tol * scale.max(f64::MIN_POSITIVE);
        let norms: Vec<f64> = residuals.iter().map(|r| norm(r)).collect();
        worst = if norms.len() < k { f64::INFINITY } else { norms.iter().copied().fold(0.0, f64::max) };
        debug!("davidson step {step}: basis {p}, worst residual {worst:e}");
        if worst <= limit || p == n {
            let mut vecs = Array2::zeros((n, k));
            for c in 0..k {
                for r in 0..n {
                    vecs[[r, c]] = y[c][r];
                }
            }
            return Ok((theta[..k].to_vec(), vecs));
        }
        let targets: Vec<usize> = (0..norms.len()).filter(|&c| norms[c] > limit).take(block).collect();
        let mut dirs: Vec<Vec<f64>> = targets.iter().map(|&c| expand(&residuals[c])).collect();
        if norms.len() < k {
            dirs.push(random(&mut rng));
        }
        if p + dirs.len() > max_basis {
            v = y;
            av = ay;
        }
        let mut added = 0;
        for d in dirs {
            if v.len() < max_basis && push(d, &mut v, &mut av) {
                added += 1;
            }
        }
        if added == 0 && v.len() < max_basis {
            push(random(&mut rng), &mut v, &mut av);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_restarts,
        residual: worst,
    })
}

/// First k values of {ℓ(ℓ+1) with multiplicity 2ℓ+1}.
pub fn sphere_spectrum(k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k);
    let mut l = 0usize;
    while out.len() < k {
        let v = (l * (l + 1)) as f64;
        for _ in 0..(2 * l + 1) {
            if out.len() == k {
                break;
            }
            out.push(v);
        }
        l += 1;
    }
    out
}

/// |λ̂ − λ| / λ per index; absolute error where the reference is zero.
pub fn spectral_error(computed: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    if computed.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: computed.len(),
            right: reference.len(),
        });
    }
    Ok(computed
        .iter()
        .zip(reference)
        .map(|(c, r)| {
            if *r == 0.0 {
                (c - r).abs()
            } else {
                (c - r).abs() / r.abs()
            }
        })
        .collect())
}

/// Write `index, value_paper_convention, value_matrix_convention, reference, relative_error`.
///
/// The error column compares the matrix-convention values with the reference.
pub fn write_spectrum_csv(path: &Path, spectrum: &Spectrum, reference: &[f64]) -> Result<()> {
    let matrix = spectrum.to_convention(Convention::Matrix);
    let scaled = spectrum.to_convention(Convention::Scaled);
    let errors = spectral_error(&matrix.values, reference)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(fs::File::create(path)?));
    w.write_record([
        "index",
        "value_paper_convention",
        "value_matrix_convention",
        "reference",
        "relative_error",
    ])?;
    for i in 0..matrix.len() {
        w.write_record([
            (i + 1).to_string(),
            scaled.values[i].to_string(),
            matrix.values[i].to_string(),
            reference[i].to_string(),
            errors[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// max over u ∈ span(basis) of E[u] / ((1/n) Σ u_i²), with the energy
/// evaluated pair by pair from the distances (no Laplacian involved).
///
/// By Courant–Fischer this equals the n-scaled λ_ℓ when the columns
/// span the first ℓ eigenvectors.
pub fn courant_fischer_value(
    dist: ArrayView2<f64>,
    eps: f64,
    m: usize,
    vol: f64,
    basis: ArrayView2<f64>,
) -> Result<f64> {
    let (n, l) = basis.dim();
    let col = |a: usize| basis.column(a).to_vec();
    let energy = |u: &[f64]| crate::graph::dirichlet_energy(dist, eps, m, vol, u);
    let mut e = nalgebra::DMatrix::zeros(l, l);
    for a in 0..l {
        for b in a..l {
            // polarization: E(x, y) = (E[x + y] − E[x − y]) / 4
            let (x, y) = (col(a), col(b));
            let plus: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p + q).collect();
            let minus: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p - q).collect();
            let v = (energy(&plus)? - energy(&minus)?) / 4.0;
            e[(a, b)] = v;
            e[(b, a)] = v;
        }
    }
    let gram = nalgebra::DMatrix::from_fn(l, l, |a, b| basis.column(a).dot(&basis.column(b)) / n as f64);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("basis columns are linearly dependent".into()))?;
    let linv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("basis columns are linearly dependent".into()))?;
    let c = &linv * e * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    Ok(c.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichRow {
    pub index: usize,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    pub eta: f64,
    pub eps: f64,
    pub rows: Vec<SandwichRow>,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.pass).count()
    }
}

/// Largest distance discrepancy on pairs that can influence an ε-graph.
pub fn measured_eta(dist_x: ArrayView2<f64>, dist_y: ArrayView2<f64>, eps: f64) -> Result<f64> {
    if dist_x.dim() != dist_y.dim() {
        return Err(Error::ShapeMismatch(format!(
            "distance matrices {:?} and {:?}",
            dist_x.dim(),
            dist_y.dim()
        )));
    }
    let global = dist_x
        .iter()
        .zip(dist_y.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let reach = eps + global;
    Ok(dist_x
        .iter()
        .zip(dist_y.iter())
        .filter(|(a, b)| a.min(**b) < reach)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

fn eps_graph_eigs(dist: ArrayView2<f64>, eps: f64, m: usize, k: usize) -> Result<Vec<f64>> {
    let g = epsilon_graph(dist, eps, m, 1.0)?;
    let l = laplacian(&g, LaplacianKind::Unnormalized)?;
    Ok(smallest_eigs(&l, k, DEFAULT_TOL)?.values)
}

/// ((ε−η)/ε)^{m+2} λ_ℓ(X, ε−η) ≤ λ_ℓ(Ȳ, ε) ≤ ((ε+η)/ε)^{m+2} λ_ℓ(X, ε+η) for ℓ = 1..k.
pub fn sandwich_check(
    dist_x: ArrayView2<f64>,
    dist_y: ArrayView2<f64>,
    eps: f64,
    m: usize,
    k: usize,
) -> Result<SandwichReport> {
    let eta = measured_eta(dist_x, dist_y, eps)?;
    if eps <= eta {
        return Err(Error::EtaTooLarge { eta, eps });
    }
    let n = dist_x.nrows();
    let k = k.min(n);
    let e = m as i32 + 2;
    let lo_factor = ((eps - eta) / eps).powi(e);
    let hi_factor = ((eps + eta) / eps).powi(e);
    let lo = eps_graph_eigs(dist_x, eps - eta, m, k)?;
    let mid = eps_graph_eigs(dist_y, eps, m, k)?;
    let hi = eps_graph_eigs(dist_x, eps + eta, m, k)?;
    let rows = (0..k)
        .map(|i| {
            let lower = lo_factor * lo[i];
            let upper = hi_factor * hi[i];
            let slack = 1e-8 * (1.0 + mid[i].abs());
            SandwichRow {
                index: i + 1,
                lower,
                value: mid[i],
                upper,
                pass: lower <= mid[i] + slack && mid[i] <= upper + slack,
            }
        })
        .collect();
    Ok(SandwichReport { eta, eps, rows })
}
