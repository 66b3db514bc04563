//! The tabulated experiments: sphere distance tables and spectra, two moons,
//! MNIST pairs, and the empirical distance-bound scaling.

use std::f64::consts::PI;
use std::path::Path;

use log::info;
use ndarray::Array2;
use rayon::prelude::*;

use crate::bounds::eta_bound;
use crate::classify::{
    classify, cross_validate, stratified_labels, ClassifierGraph, LabeledDataset, DEFAULT_GAMMA,
};
use crate::error::{Result, Stage, StageExt};
use crate::experiments::metrics::{mask_pairs, masked_distance_report, max_masked_discrepancy, Mask, MaskedDistanceReport};
use crate::experiments::mnist::{load_mnist_dir, select_pair};
use crate::graph::{epsilon_graph, laplacian, KnnRule, LaplacianKind};
use crate::pointcloud::{add_noise, sample_sphere, sample_two_moons, NoiseMode, NoiseSpec, PointCloud};
use crate::regularize::{ball_average, regularize, RegularizerSpec};
use crate::spectral::{smallest_eigs, sphere_spectrum, Spectrum, DEFAULT_TOL};

/// Independent sub-seed for one random stream of a run.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(base ^ mix(stream))
}

pub mod streams {
    pub const NOISE: u64 = 0x100;
    pub const LABELS: u64 = 0x200;
    pub const CV: u64 = 0x300;
    pub const SUBSET: u64 = 0x400;
}

/// Noise seed for the σ at position `index` of a sweep.
pub fn noise_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, streams::NOISE + index as u64)
}

/// r = √σ/3 at σ = 0.1, r = √σ otherwise.
pub fn sphere_radius(sigma: f64) -> f64 {
    if (sigma - 0.1).abs() < 1e-12 {
        sigma.sqrt() / 3.0
    } else {
        sigma.sqrt()
    }
}

/// ε = 2 n^{−1/4}
pub fn sphere_epsilon(n: usize) -> f64 {
    2.0 * (n as f64).powf(-0.25)
}

pub const SPHERE_VOLUME: f64 = 4.0 * PI;

#[derive(Debug, Clone)]
pub struct SphereSetup {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub mode: NoiseMode,
}

impl Default for SphereSetup {
    fn default() -> Self {
        Self {
            n: 3000,
            d: 100,
            m: 2,
            mode: NoiseMode::AmbientBall,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DistanceRow {
    pub sigma: f64,
    pub seed: u64,
    pub r: f64,
    pub report: MaskedDistanceReport,
}

impl DistanceRow {
    pub fn ratio(&self) -> f64 {
        self.report.frob_raw / self.report.frob_reg
    }
}

/// Table 1: masked Frobenius distance errors of Y and Ȳ on the sphere.
pub fn table1(setup: &SphereSetup, sigmas: &[f64], seed: u64) -> Result<Vec<DistanceRow>> {
    let clean = sample_sphere(setup.n, setup.m, setup.d, seed).stage(Stage::Sample)?;
    let mask = Mask::Epsilon(sphere_epsilon(setup.n));
    sigmas
        .iter()
        .enumerate()
        .map(|(i, &sigma)| {
            let y = add_noise(&clean, &NoiseSpec::new(sigma, setup.mode)?, noise_seed(seed, i)).stage(Stage::Noise)?;
            let r = sphere_radius(sigma);
            let ybar = ball_average(&y, r).stage(Stage::Regularize)?;
            let report = masked_distance_report(&clean, &y, &ybar, mask).stage(Stage::Output)?;
            info!("table1 seed {seed} sigma {sigma}: raw {:.4} reg {:.4}", report.frob_raw, report.frob_reg);
            Ok(DistanceRow { sigma, seed, r, report })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SpectrumRun {
    pub label: String,
    pub sigma: f64,
    pub spectrum: Spectrum,
}

/// Smallest `count` eigenvalues of the rescaled ε-graph Laplacian of a sphere cloud.
pub fn sphere_graph_spectrum(cloud: &PointCloud, count: usize) -> Result<Spectrum> {
    let eps = sphere_epsilon(cloud.n());
    let g = epsilon_graph(cloud.distances().view(), eps, cloud.m(), SPHERE_VOLUME).stage(Stage::Graph)?;
    let l = laplacian(&g, LaplacianKind::Unnormalized).stage(Stage::Graph)?;
    let mut s = smallest_eigs(&l, count, DEFAULT_TOL).stage(Stage::Spectrum)?;
    s.vectors = None;
    Ok(s)
}

/// Figure 1: spectra of the clean cloud, of Ȳ at `sigma_reg` and of raw Y at `sigma_raw`.
pub fn fig1(setup: &SphereSetup, sigma_reg: f64, sigma_raw: f64, count: usize, seed: u64) -> Result<Vec<SpectrumRun>> {
    let clean = sample_sphere(setup.n, setup.m, setup.d, seed).stage(Stage::Sample)?;
    let y_reg = add_noise(&clean, &NoiseSpec::new(sigma_reg, setup.mode)?, noise_seed(seed, 0)).stage(Stage::Noise)?;
    let ybar = ball_average(&y_reg, sphere_radius(sigma_reg)).stage(Stage::Regularize)?;
    let y_raw = add_noise(&clean, &NoiseSpec::new(sigma_raw, setup.mode)?, noise_seed(seed, 1)).stage(Stage::Noise)?;
    let runs = [
        ("clean", 0.0, &clean),
        ("regularized", sigma_reg, &ybar),
        ("raw", sigma_raw, &y_raw),
    ];
    runs.iter()
        .map(|(label, sigma, cloud)| {
            Ok(SpectrumRun {
                label: label.to_string(),
                sigma: *sigma,
                spectrum: sphere_graph_spectrum(cloud, count)?,
            })
        })
        .collect()
}

/// Mean relative deviation of eigenvalues 2–4 from 2 and 5–9 from 6.
pub fn low_mode_deviation(values: &[f64]) -> (f64, f64) {
    let reference = sphere_spectrum(9);
    let mean = |a: usize, b: usize| values[a..b].iter().sum::<f64>() / (b - a) as f64;
    (
        (mean(1, 4) - reference[1]).abs() / reference[1],
        (mean(4, 9) - reference[4]).abs() / reference[4],
    )
}

#[derive(Debug, Clone)]
pub struct MoonsSetup {
    pub n: usize,
    pub d: usize,
    pub labels: usize,
    pub k: usize,
    pub mode: NoiseMode,
}

impl Default for MoonsSetup {
    fn default() -> Self {
        Self {
            n: 1000,
            d: 100,
            labels: 10,
            k: 10,
            mode: NoiseMode::AmbientBall,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MoonsRow {
    pub sigma: f64,
    pub seed: u64,
    pub error_raw: usize,
    pub error_reg: usize,
    pub unlabeled: usize,
    pub report: MaskedDistanceReport,
    pub predictions_raw: Vec<i8>,
    pub predictions_reg: Vec<i8>,
    pub truth: Vec<i8>,
}

/// Tables 2–3: two moons with r = σ, probit on the fully connected self-tuning graph.
pub fn table3(setup: &MoonsSetup, sigmas: &[f64], seed: u64) -> Result<Vec<MoonsRow>> {
    let (clean, truth) = sample_two_moons(setup.n, setup.d, seed).stage(Stage::Sample)?;
    let labeled = stratified_labels(&truth, setup.labels, derive_seed(seed, streams::LABELS)).stage(Stage::Classify)?;
    let graph = ClassifierGraph::FullyConnected { k: setup.k };
    sigmas
        .iter()
        .enumerate()
        .map(|(i, &sigma)| {
            let y = add_noise(&clean, &NoiseSpec::new(sigma, setup.mode)?, noise_seed(seed, i)).stage(Stage::Noise)?;
            let spec = RegularizerSpec::Ball { r: sigma };
            let ybar = regularize(&y, &spec).stage(Stage::Regularize)?;
            let report = masked_distance_report(&clean, &y, &ybar, Mask::MutualKnn(setup.k)).stage(Stage::Output)?;
            let data = LabeledDataset::new(y, truth.clone(), labeled.clone())?;
            let raw = classify(&data, &RegularizerSpec::Identity, graph, DEFAULT_GAMMA).stage(Stage::Classify)?;
            let reg = classify(&data, &spec, graph, DEFAULT_GAMMA).stage(Stage::Classify)?;
            let row = MoonsRow {
                sigma,
                seed,
                error_raw: raw.error_unlabeled.unwrap_or(0),
                error_reg: reg.error_unlabeled.unwrap_or(0),
                unlabeled: setup.n - labeled.len(),
                report,
                predictions_raw: raw.predictions,
                predictions_reg: reg.predictions,
                truth: truth.clone(),
            };
            info!("table3 seed {seed} sigma {sigma}: raw {} reg {}", row.error_raw, row.error_reg);
            Ok(row)
        })
        .collect()
}

/// Figure 2: first two coordinates of X, Y and Ȳ for two moons at σ (r = σ).
pub fn fig2(setup: &MoonsSetup, sigma: f64, seed: u64) -> Result<(Array2<f64>, Vec<i8>)> {
    let (clean, truth) = sample_two_moons(setup.n, setup.d, seed).stage(Stage::Sample)?;
    let y = add_noise(&clean, &NoiseSpec::new(sigma, setup.mode)?, noise_seed(seed, 0)).stage(Stage::Noise)?;
    let ybar = ball_average(&y, sigma).stage(Stage::Regularize)?;
    let (x, yp, bp) = (clean.points(), y.points(), ybar.points());
    let table = Array2::from_shape_fn((setup.n, 6), |(i, c)| match c {
        0 => x[[i, 0]],
        1 => x[[i, 1]],
        2 => yp[[i, 0]],
        3 => yp[[i, 1]],
        4 => bp[[i, 0]],
        _ => bp[[i, 1]],
    });
    Ok((table, truth))
}

#[derive(Debug, Clone)]
pub struct MnistSetup {
    pub digits: (u8, u8),
    pub n: usize,
    pub k: usize,
    pub labels: usize,
    pub repeats: usize,
    /// radii as multiples of the median nearest-neighbour distance
    pub radius_factors: Vec<f64>,
    /// also run the k-NN and self-tuning regularizers
    pub alternatives: bool,
}

impl Default for MnistSetup {
    fn default() -> Self {
        Self {
            digits: (4, 9),
            n: 1000,
            k: 20,
            labels: 40,
            repeats: 2,
            radius_factors: vec![0.6, 0.8, 1.0, 1.2, 1.4, 1.6],
            alternatives: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MnistRow {
    pub seed: u64,
    pub graph: String,
    pub regularizer: String,
    pub selected: RegularizerSpec,
    pub error: usize,
    pub unlabeled: usize,
    pub cv_table: Vec<(RegularizerSpec, f64)>,
}

fn median_nn_distance(cloud: &PointCloud) -> f64 {
    let d = cloud.distances();
    let mut nn: Vec<f64> = (0..cloud.n())
        .map(|i| {
            d.row(i)
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| *v)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    nn[nn.len() / 2]
}

/// Tables 4–6: MNIST pair, unregularized vs CV-selected ball / k-NN / self-tuning
/// regularization, on the fully connected and K-NN self-tuning graphs.
pub fn table4(setup: &MnistSetup, data_dir: &Path, seed: u64) -> Result<Vec<MnistRow>> {
    let all = load_mnist_dir(data_dir).stage(Stage::Load)?;
    let subset = select_pair(&all, setup.digits.0, setup.digits.1, setup.n, derive_seed(seed, streams::SUBSET))
        .stage(Stage::Load)?;
    let cloud = PointCloud::new(subset.images.clone(), 1)?;
    let labeled = stratified_labels(&subset.labels, setup.labels, derive_seed(seed, streams::LABELS))?;
    let data = LabeledDataset::new(cloud, subset.labels.clone(), labeled)?;
    let h = median_nn_distance(&data.cloud);
    let mut grids: Vec<(&str, Vec<RegularizerSpec>)> = vec![
        ("none", vec![RegularizerSpec::Identity]),
        (
            "ball",
            setup.radius_factors.iter().map(|f| RegularizerSpec::Ball { r: f * h }).collect(),
        ),
    ];
    if setup.alternatives {
        grids.push(("knn", [5, 10, 20].iter().map(|&k| RegularizerSpec::Knn { k }).collect()));
        grids.push(("self-tuning", vec![RegularizerSpec::SelfTuning { k: setup.k }]));
    }
    let graphs = [
        ("fully-connected", ClassifierGraph::FullyConnected { k: setup.k }),
        ("knn", ClassifierGraph::KnnVariant { k: setup.k, rule: KnnRule::Union }),
    ];
    let unlabeled = setup.n - data.labeled.len();
    let jobs: Vec<(usize, usize)> = (0..graphs.len()).flat_map(|g| (0..grids.len()).map(move |r| (g, r))).collect();
    jobs.par_iter()
        .map(|&(gi, ri)| {
            let (gname, graph) = graphs[gi];
            let (rname, grid) = &grids[ri];
            let (selected, cv_table) = if grid.len() == 1 {
                (grid[0], Vec::new())
            } else {
                let cv = cross_validate(&data, grid, graph, setup.repeats, derive_seed(seed, streams::CV), DEFAULT_GAMMA)
                    .stage(Stage::Classify)?;
                (cv.best, cv.table.iter().map(|r| (r.spec, r.error_rate)).collect())
            };
            let fit = classify(&data, &selected, graph, DEFAULT_GAMMA).stage(Stage::Classify)?;
            info!("table4 seed {seed} {gname}/{rname}: {selected} -> {:?}", fit.error_unlabeled);
            Ok(MnistRow {
                seed,
                graph: gname.to_string(),
                regularizer: rname.to_string(),
                selected,
                error: fit.error_unlabeled.unwrap_or(0),
                unlabeled,
                cv_table,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub sigma: f64,
    pub r: f64,
    pub measured: f64,
    pub pair_count: usize,
    pub raw_measured: f64,
}

/// Max discrepancy |δ_X − δ_Ȳ| over pairs with geodesic distance ≤ r, with r = √σ.
pub fn distance_bound_scaling(setup: &SphereSetup, sigmas: &[f64], seed: u64) -> Result<Vec<ScalingRow>> {
    let clean = sample_sphere(setup.n, setup.m, setup.d, seed).stage(Stage::Sample)?;
    let dx = clean.distances();
    sigmas
        .iter()
        .enumerate()
        .map(|(i, &sigma)| {
            let r = sigma.sqrt();
            let y = add_noise(&clean, &NoiseSpec::new(sigma, setup.mode)?, noise_seed(seed, i)).stage(Stage::Noise)?;
            let ybar = ball_average(&y, r).stage(Stage::Regularize)?;
            let pairs = mask_pairs(&clean, dx.view(), Mask::Geodesic(r))?;
            let measured = max_masked_discrepancy(dx.view(), ybar.distances().view(), &pairs);
            let raw_measured = max_masked_discrepancy(dx.view(), y.distances().view(), &pairs);
            Ok(ScalingRow {
                sigma,
                r,
                measured,
                pair_count: pairs.len(),
                raw_measured,
            })
        })
        .collect()
}

/// Ĉ such that the bound is tight at the calibration row.
pub fn calibrate_constant(row: &ScalingRow) -> f64 {
    row.measured / eta_bound(row.r, row.sigma, 1.0)
}

/// Rows `row, digit, stage, p0..p{d−1}` for `count` images before and after
/// ball regularization at `factor` × the median nearest-neighbour distance.
pub fn mnist_image_grid(setup: &MnistSetup, data_dir: &Path, seed: u64, count: usize, factor: f64) -> Result<Vec<(usize, u8, &'static str, Vec<f64>)>> {
    let all = load_mnist_dir(data_dir).stage(Stage::Load)?;
    let subset = select_pair(&all, setup.digits.0, setup.digits.1, setup.n, derive_seed(seed, streams::SUBSET))
        .stage(Stage::Load)?;
    let cloud = PointCloud::new(subset.images.clone(), 1)?;
    let r = factor * median_nn_distance(&cloud);
    let ybar = ball_average(&cloud, r).stage(Stage::Regularize)?;
    let mut out = Vec::with_capacity(2 * count);
    for i in 0..count.min(setup.n) {
        out.push((i, subset.digits[i], "raw", cloud.points().row(i).to_vec()));
        out.push((i, subset.digits[i], "regularized", ybar.points().row(i).to_vec()));
    }
    Ok(out)
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// `sigma, seed, r, mask, pair_count, frob_raw, frob_reg, ratio`
pub fn write_distance_rows(path: &Path, rows: &[DistanceRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["sigma", "seed", "r", "mask", "pair_count", "frob_raw", "frob_reg", "ratio"])?;
    for row in rows {
        w.write_record([
            row.sigma.to_string(),
            row.seed.to_string(),
            row.r.to_string(),
            row.report.mask.to_string(),
            row.report.pair_count.to_string(),
            row.report.frob_raw.to_string(),
            row.report.frob_reg.to_string(),
            row.ratio().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `sigma, seed, unlabeled, error_raw, error_reg, mask, frob_raw, frob_reg`
pub fn write_moons_rows(path: &Path, rows: &[MoonsRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["sigma", "seed", "unlabeled", "error_raw", "error_reg", "mask", "frob_raw", "frob_reg"])?;
    for row in rows {
        w.write_record([
            row.sigma.to_string(),
            row.seed.to_string(),
            row.unlabeled.to_string(),
            row.error_raw.to_string(),
            row.error_reg.to_string(),
            row.report.mask.to_string(),
            row.report.frob_raw.to_string(),
            row.report.frob_reg.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `seed, graph, regularizer, selected, error, unlabeled`
pub fn write_mnist_rows(path: &Path, rows: &[MnistRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["seed", "graph", "regularizer", "selected", "error", "unlabeled"])?;
    for row in rows {
        w.write_record([
            row.seed.to_string(),
            row.graph.clone(),
            row.regularizer.clone(),
            row.selected.to_string(),
            row.error.to_string(),
            row.unlabeled.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `seed, graph, regularizer, candidate, cv_error_rate`
pub fn write_mnist_cv(path: &Path, rows: &[MnistRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["seed", "graph", "regularizer", "candidate", "cv_error_rate"])?;
    for row in rows {
        for (spec, rate) in &row.cv_table {
            w.write_record([
                row.seed.to_string(),
                row.graph.clone(),
                row.regularizer.clone(),
                spec.to_string(),
                rate.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `index, label, x1, x2, y1, y2, ybar1, ybar2`
pub fn write_scatter(path: &Path, table: &Array2<f64>, labels: &[i8]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["index", "label", "x1", "x2", "y1", "y2", "ybar1", "ybar2"])?;
    for (i, row) in table.rows().into_iter().enumerate() {
        let mut rec = vec![i.to_string(), labels[i].to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `row, digit, stage, p0, …`
pub fn write_image_grid(path: &Path, rows: &[(usize, u8, &str, Vec<f64>)]) -> Result<()> {
    let mut w = writer(path)?;
    let pixels = rows.first().map_or(0, |r| r.3.len());
    let mut header = vec!["row".to_string(), "digit".into(), "stage".into()];
    header.extend((0..pixels).map(|p| format!("p{p}")));
    w.write_record(&header)?;
    for (row, digit, stage, px) in rows {
        let mut rec = vec![row.to_string(), digit.to_string(), stage.to_string()];
        rec.extend(px.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `sigma, r, pair_count, measured, raw_measured, bound`
pub fn write_scaling_rows(path: &Path, rows: &[ScalingRow], c_hat: f64) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["sigma", "r", "pair_count", "measured", "raw_measured", "bound"])?;
    for row in rows {
        w.write_record([
            row.sigma.to_string(),
            row.r.to_string(),
            row.pair_count.to_string(),
            row.measured.to_string(),
            row.raw_measured.to_string(),
            eta_bound(row.r, row.sigma, c_hat).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
