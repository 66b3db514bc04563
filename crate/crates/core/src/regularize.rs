//! Point-cloud regularizers: ball averaging, k-NN averaging and the
//! hyper-parameter free self-tuning global average.
//!
//! Each regularizer replaces every point by a (weighted) mean of input
//! points, so outputs always lie in the convex hull of the input.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{self, SimilarityGraph};
use crate::linalg;
use crate::pointcloud::PointCloud;

/// How to regularize a cloud before building a graph on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegularizerSpec {
    /// Leave the cloud untouched (the raw similarity).
    Identity,
    /// Average over the open ball of radius r.
    Ball { r: f64 },
    /// Average over the point and its k nearest neighbours.
    Knn { k: usize },
    /// Row-normalised average under the self-tuning weights with K neighbours.
    SelfTuning { k: usize },
    /// Replace points by the clean reference (oracle; synthetic data only).
    Clean,
}

impl RegularizerSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            RegularizerSpec::Ball { r } if !(r > 0.0) || !r.is_finite() => Err(
                Error::InvalidParameter(format!("ball radius must be positive, got {r}")),
            ),
            RegularizerSpec::Knn { k } | RegularizerSpec::SelfTuning { k } if k == 0 || k >= n => {
                Err(Error::InvalidK { k, n })
            }
            _ => Ok(()),
        }
    }

    /// Scale used to break cross-validation ties (smaller wins).
    pub fn scale(&self) -> f64 {
        match *self {
            RegularizerSpec::Identity | RegularizerSpec::Clean => 0.0,
            RegularizerSpec::Ball { r } => r,
            RegularizerSpec::Knn { k } | RegularizerSpec::SelfTuning { k } => k as f64,
        }
    }
}

impl fmt::Display for RegularizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegularizerSpec::Identity => write!(f, "identity"),
            RegularizerSpec::Ball { r } => write!(f, "ball:{r}"),
            RegularizerSpec::Knn { k } => write!(f, "knn:{k}"),
            RegularizerSpec::SelfTuning { k } => write!(f, "self-tuning:{k}"),
            RegularizerSpec::Clean => write!(f, "clean"),
        }
    }
}

impl FromStr for RegularizerSpec {
    type Err = Error;

    /// `identity`, `clean`, `ball:<r>`, `knn:<k>`, `self-tuning:<K>`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad regularizer `{s}`"));
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        match (kind, arg) {
            ("identity" | "none", None) => Ok(RegularizerSpec::Identity),
            ("clean", None) => Ok(RegularizerSpec::Clean),
            ("ball", Some(a)) => Ok(RegularizerSpec::Ball {
                r: a.parse().map_err(|_| bad())?,
            }),
            ("knn", Some(a)) => Ok(RegularizerSpec::Knn {
                k: a.parse().map_err(|_| bad())?,
            }),
            ("self-tuning", Some(a)) => Ok(RegularizerSpec::SelfTuning {
                k: a.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Mean of the selected rows, accumulated in index order.
fn mean_of_rows(points: ArrayView2<f64>, idx: impl Iterator<Item = usize>, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut count = 0usize;
    for j in idx {
        for (o, v) in out.iter_mut().zip(points.row(j)) {
            *o += v;
        }
        count += 1;
    }
    let inv = 1.0 / count as f64;
    out.iter_mut().for_each(|v| *v *= inv);
}

fn collect_rows(n: usize, d: usize, rows: Vec<Vec<f64>>) -> Array2<f64> {
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .expect("row lengths match")
}

/// Ball average using precomputed distances between the rows of `points`.
pub fn ball_average_points(
    points: ArrayView2<f64>,
    dist: ArrayView2<f64>,
    r: f64,
) -> Result<Array2<f64>> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ball radius must be positive, got {r}"
        )));
    }
    let (n, d) = points.dim();
    if dist.dim() != (n, n) {
        return Err(Error::ShapeMismatch(format!(
            "distance matrix {:?} for {n} points",
            dist.dim()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; d];
            let row = dist.row(i);
            // self is always inside: |y_i - y_i| = 0 < r
            mean_of_rows(points, (0..n).filter(|&j| j == i || row[j] < r), &mut out);
            out
        })
        .collect();
    Ok(collect_rows(n, d, rows))
}

/// Replace each point by the mean of all points strictly within distance r.
pub fn ball_average(cloud: &PointCloud, r: f64) -> Result<PointCloud> {
    let dist = cloud.distances();
    cloud.with_points(ball_average_points(cloud.points(), dist.view(), r)?)
}

/// k-NN average from precomputed distances.
pub fn knn_average_points(
    points: ArrayView2<f64>,
    dist: ArrayView2<f64>,
    k: usize,
) -> Result<Array2<f64>> {
    let (n, d) = points.dim();
    if k == 0 || k >= n {
        return Err(Error::InvalidK { k, n });
    }
    let nn = linalg::knn_indices(dist, k);
    let rows: Vec<Vec<f64>> = nn
        .into_par_iter()
        .enumerate()
        .map(|(i, mut idx)| {
            idx.push(i);
            idx.sort_unstable();
            let mut out = vec![0.0; d];
            mean_of_rows(points, idx.into_iter(), &mut out);
            out
        })
        .collect();
    Ok(collect_rows(n, d, rows))
}

/// Replace each point by the mean of itself and its k nearest neighbours
/// (k + 1 points, neighbour ties broken by smaller index).
pub fn knn_average(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    let dist = cloud.distances();
    cloud.with_points(knn_average_points(cloud.points(), dist.view(), k)?)
}

/// Weighted average ŷ_i = Σ_j W(i,j) y_j / Σ_j W(i,j), diagonal included.
pub fn self_tuning_average_points(
    points: ArrayView2<f64>,
    w: &SimilarityGraph,
) -> Result<Array2<f64>> {
    let (n, d) = points.dim();
    if w.n() != n {
        return Err(Error::ShapeMismatch(format!(
            "graph on {} nodes for {n} points",
            w.n()
        )));
    }
    let rows: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; d];
            let mut total = 0.0;
            for (j, wij) in w.row_with_diagonal(i) {
                if wij == 0.0 {
                    continue;
                }
                total += wij;
                for (o, v) in out.iter_mut().zip(points.row(j)) {
                    *o += wij * v;
                }
            }
            if !(total > 0.0) {
                return Err(Error::ZeroRowSum(i));
            }
            out.iter_mut().for_each(|v| *v /= total);
            Ok(out)
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(collect_rows(n, d, rows))
}

/// Global weighted average of the cloud under a similarity graph built on it.
pub fn self_tuning_average(cloud: &PointCloud, w: &SimilarityGraph) -> Result<PointCloud> {
    cloud.with_points(self_tuning_average_points(cloud.points(), w)?)
}

/// Apply a regularizer given the cloud's own distance matrix.
pub fn regularize_with_distances(
    cloud: &PointCloud,
    dist: ArrayView2<f64>,
    spec: &RegularizerSpec,
) -> Result<PointCloud> {
    spec.validate(cloud.n())?;
    let points = match *spec {
        RegularizerSpec::Identity => return Ok(cloud.clone()),
        RegularizerSpec::Clean => cloud
            .clean()
            .ok_or_else(|| {
                Error::InvalidParameter("clean regularizer needs a clean reference".into())
            })?
            .to_owned(),
        RegularizerSpec::Ball { r } => ball_average_points(cloud.points(), dist, r)?,
        RegularizerSpec::Knn { k } => knn_average_points(cloud.points(), dist, k)?,
        RegularizerSpec::SelfTuning { k } => {
            let w = graph::self_tuning_graph(dist, k)?;
            self_tuning_average_points(cloud.points(), &w)?
        }
    };
    cloud.with_points(points)
}

pub fn regularize(cloud: &PointCloud, spec: &RegularizerSpec) -> Result<PointCloud> {
    if matches!(spec, RegularizerSpec::Identity | RegularizerSpec::Clean) {
        spec.validate(cloud.n())?;
        return regularize_with_distances(cloud, ndarray::Array2::zeros((0, 0)).view(), spec);
    }
    let dist = cloud.distances();
    regularize_with_distances(cloud, dist.view(), spec)
}
