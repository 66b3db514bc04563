//! Masked distance-matrix comparisons between clean, noisy and regularized clouds.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::linalg;
use crate::pointcloud::{sphere_geodesic, PointCloud};

/// Which pairs enter a distance comparison. Always decided on the clean cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mask {
    /// δ_X(i,j) < ε
    Epsilon(f64),
    /// i and j are each among the other's K nearest under δ_X
    MutualKnn(usize),
    /// geodesic distance on the unit sphere ≤ r
    Geodesic(f64),
}

impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mask::Epsilon(e) => write!(f, "epsilon:{e}"),
            Mask::MutualKnn(k) => write!(f, "mutual-knn:{k}"),
            Mask::Geodesic(r) => write!(f, "geodesic:{r}"),
        }
    }
}

impl FromStr for Mask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad mask `{s}`"));
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        match kind.trim() {
            "epsilon" => Ok(Mask::Epsilon(arg.trim().parse().map_err(|_| bad())?)),
            "mutual-knn" => Ok(Mask::MutualKnn(arg.trim().parse().map_err(|_| bad())?)),
            "geodesic" => Ok(Mask::Geodesic(arg.trim().parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }
}

/// Ordered pairs (i, j), i ≠ j, selected by the mask.
pub fn mask_pairs(clean: &PointCloud, dist_x: ArrayView2<f64>, mask: Mask) -> Result<Vec<(usize, usize)>> {
    let n = clean.n();
    if dist_x.dim() != (n, n) {
        return Err(Error::ShapeMismatch(format!(
            "distance matrix {:?} for {n} points",
            dist_x.dim()
        )));
    }
    let mut out = Vec::new();
    match mask {
        Mask::Epsilon(eps) => {
            for i in 0..n {
                for j in 0..n {
                    if i != j && dist_x[[i, j]] < eps {
                        out.push((i, j));
                    }
                }
            }
        }
        Mask::MutualKnn(k) => {
            let nn = linalg::knn_indices(dist_x, k.min(n.saturating_sub(1)));
            let sets: Vec<Vec<usize>> = nn
                .into_iter()
                .map(|mut v| {
                    v.sort_unstable();
                    v
                })
                .collect();
            for i in 0..n {
                for &j in &sets[i] {
                    if sets[j].binary_search(&i).is_ok() {
                        out.push((i, j));
                    }
                }
            }
            out.sort_unstable();
        }
        Mask::Geodesic(r) => {
            let p = clean.points();
            for i in 0..n {
                for j in 0..n {
                    if i != j && sphere_geodesic(p.row(i), p.row(j))? <= r {
                        out.push((i, j));
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedDistanceReport {
    /// ‖D_X − D_Y‖_F
    pub frob_raw: f64,
    /// ‖D_X − D_Ȳ‖_F
    pub frob_reg: f64,
    pub mask: Mask,
    /// ordered pairs in the mask
    pub pair_count: usize,
}

fn masked_frobenius(a: ArrayView2<f64>, b: ArrayView2<f64>, pairs: &[(usize, usize)]) -> f64 {
    pairs
        .iter()
        .map(|&(i, j)| {
            let d = a[[i, j]] - b[[i, j]];
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// max over masked pairs of |δ_A − δ_B|
pub fn max_masked_discrepancy(a: ArrayView2<f64>, b: ArrayView2<f64>, pairs: &[(usize, usize)]) -> f64 {
    pairs
        .iter()
        .map(|&(i, j)| (a[[i, j]] - b[[i, j]]).abs())
        .fold(0.0, f64::max)
}

/// Compare noisy and regularized distances with the clean ones on a common mask.
pub fn masked_distance_report(
    x: &PointCloud,
    y: &PointCloud,
    ybar: &PointCloud,
    mask: Mask,
) -> Result<MaskedDistanceReport> {
    if y.n() != x.n() || ybar.n() != x.n() {
        return Err(Error::ShapeMismatch(format!(
            "clouds with {}, {} and {} points",
            x.n(),
            y.n(),
            ybar.n()
        )));
    }
    let dx = x.distances();
    let dy = y.distances();
    let dbar = ybar.distances();
    let pairs = mask_pairs(x, dx.view(), mask)?;
    Ok(MaskedDistanceReport {
        frob_raw: masked_frobenius(dx.view(), dy.view(), &pairs),
        frob_reg: masked_frobenius(dx.view(), dbar.view(), &pairs),
        mask,
        pair_count: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{add_noise, sample_sphere, NoiseSpec};
    use crate::regularize::ball_average;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};

    fn cloud(p: Array2<f64>) -> PointCloud {
        PointCloud::new(p, 1).unwrap()
    }

    #[test]
    fn perfect_and_noise_free_cases() {
        let x = sample_sphere(60, 2, 5, 1).unwrap();
        let y = add_noise(&x, &NoiseSpec::ambient_ball(0.1), 2).unwrap();
        let r = masked_distance_report(&x, &y, &x, Mask::Epsilon(0.8)).unwrap();
        assert_eq!(r.frob_reg, 0.0);
        assert!(r.frob_raw > 0.0);
        let r = masked_distance_report(&x, &x, &y, Mask::MutualKnn(5)).unwrap();
        assert_eq!(r.frob_raw, 0.0);
    }

    #[test]
    fn three_point_hand_instance() {
        // clean distances: d01 = 1, d02 = 3, d12 = 2; only (0,1) is below ε = 1.5
        let x = cloud(array![[0.0], [1.0], [3.0]]);
        let y = cloud(array![[0.0], [1.5], [3.0]]);
        let ybar = cloud(array![[0.1], [1.0], [3.0]]);
        let r = masked_distance_report(&x, &y, &ybar, Mask::Epsilon(1.5)).unwrap();
        assert_eq!(r.pair_count, 2);
        // both orientations of (0,1): √(2·0.5²) and √(2·0.1²)
        assert_relative_eq!(r.frob_raw, (2.0f64 * 0.25).sqrt(), max_relative = 1e-14);
        assert_relative_eq!(r.frob_reg, (2.0f64 * 0.01).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn mutual_knn_mask() {
        let x = cloud(array![[0.0], [1.0], [3.0], [10.0]]);
        let d = x.distances();
        let pairs = mask_pairs(&x, d.view(), Mask::MutualKnn(1)).unwrap();
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn report_is_permutation_invariant() {
        let x = sample_sphere(80, 2, 6, 3).unwrap();
        let y = add_noise(&x, &NoiseSpec::ambient_ball(0.2), 4).unwrap();
        let ybar = ball_average(&y, 0.5).unwrap();
        let perm: Vec<usize> = (0..80).rev().collect();
        let permute = |c: &PointCloud| cloud_rows(c, &perm);
        for mask in [Mask::Epsilon(0.6), Mask::MutualKnn(6), Mask::Geodesic(0.5)] {
            let a = masked_distance_report(&x, &y, &ybar, mask).unwrap();
            let b = masked_distance_report(&permute(&x), &permute(&y), &permute(&ybar), mask).unwrap();
            assert_eq!(a.pair_count, b.pair_count);
            assert_relative_eq!(a.frob_raw, b.frob_raw, max_relative = 1e-12);
            assert_relative_eq!(a.frob_reg, b.frob_reg, max_relative = 1e-12);
        }
    }

    fn cloud_rows(c: &PointCloud, perm: &[usize]) -> PointCloud {
        let p = c.points();
        let rows = Array2::from_shape_fn((perm.len(), p.ncols()), |(i, j)| p[[perm[i], j]]);
        PointCloud::new(rows, c.m()).unwrap()
    }

    #[test]
    fn mask_parsing() {
        assert_eq!("epsilon:0.5".parse::<Mask>().unwrap(), Mask::Epsilon(0.5));
        assert_eq!("mutual-knn:10".parse::<Mask>().unwrap(), Mask::MutualKnn(10));
        assert!("nope".parse::<Mask>().is_err());
    }
}
