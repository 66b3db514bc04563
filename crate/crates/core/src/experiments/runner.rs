//! Config-driven pipeline: sample/load → noise → regularize → graph → task.
//!
//! Every run writes `results.csv`, `manifest.toml` (the resolved config and
//! every derived seed) and `run.log`; task-specific files sit alongside.
//! Outputs depend only on the config, so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::classify::{classify, cross_validate, stratified_labels, LabeledDataset};
use crate::error::{Error, Result, Stage, StageExt};
use crate::experiments::config::{ExperimentConfig, Source, Task};
use crate::experiments::metrics::masked_distance_report;
use crate::experiments::mnist::{default_mnist_dir, load_mnist_dir, select_pair};
use crate::experiments::repro::{derive_seed, low_mode_deviation, noise_seed, streams};
use crate::graph::{epsilon_graph, knn_restrict, laplacian, self_tuning_graph, GraphKind, LaplacianKind, SimilarityGraph};
use crate::pointcloud::{add_noise, sample_sphere, sample_two_moons, NoiseSpec, PointCloud};
use crate::regularize::{regularize, RegularizerSpec};
use crate::spectral::{smallest_eigs, sphere_spectrum, write_spectrum_csv, DEFAULT_TOL};

/// Derived seeds are written as decimal strings: TOML integers are signed 64-bit.
#[derive(Debug, Clone, Serialize)]
struct RunSeeds {
    seed: u64,
    sigma_index: usize,
    sigma: f64,
    noise_seed: String,
    label_seed: String,
    cv_seed: String,
    subset_seed: String,
}

#[derive(Debug, Clone, Serialize)]
struct Resolved {
    eps: f64,
    vol: f64,
    mask: String,
    graph: String,
    noise_mode: String,
    mnist_dir: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    resolved: Resolved,
    runs: Vec<RunSeeds>,
}

/// Everything one seed contributes, written after all seeds finish.
#[derive(Default)]
struct SeedOutput {
    rows: Vec<Vec<String>>,
    cv_rows: Vec<Vec<String>>,
    files: Vec<(String, FileBody)>,
    log: Vec<String>,
}

enum FileBody {
    Spectrum(crate::spectral::Spectrum, Vec<f64>),
    Records(Vec<Vec<String>>),
}

fn header(task: Task) -> Vec<&'static str> {
    match task {
        Task::DistanceTable => vec![
            "seed", "sigma", "regularizer", "mask", "pair_count", "frob_raw", "frob_reg", "ratio",
        ],
        Task::Spectrum => vec!["seed", "sigma", "regularizer", "file", "lambda_1", "dev_2_4", "dev_5_9"],
        Task::Classify => vec![
            "seed", "sigma", "graph", "regularizer", "labels", "unlabeled", "error_raw", "error_reg",
        ],
    }
}

fn mnist_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.data.dir.clone().unwrap_or_else(default_mnist_dir)
}

fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<(PointCloud, Option<Vec<i8>>)> {
    let d = &cfg.data;
    match d.source {
        Source::Sphere => Ok((sample_sphere(d.n, d.m, d.d, seed).stage(Stage::Sample)?, None)),
        Source::TwoMoons => {
            let (c, t) = sample_two_moons(d.n, d.d, seed).stage(Stage::Sample)?;
            Ok((c, Some(t)))
        }
        Source::Mnist => {
            let all = load_mnist_dir(&mnist_dir(cfg)).stage(Stage::Load)?;
            let s = select_pair(&all, d.digits[0], d.digits[1], d.n, derive_seed(seed, streams::SUBSET))
                .stage(Stage::Load)?;
            Ok((PointCloud::new(s.images, d.m).stage(Stage::Load)?, Some(s.labels)))
        }
    }
}

fn build_graph(cfg: &ExperimentConfig, cloud: &PointCloud) -> Result<SimilarityGraph> {
    let dist = cloud.distances();
    match cfg.graph_kind()? {
        GraphKind::Epsilon => epsilon_graph(dist.view(), cfg.eps(), cloud.m(), cfg.vol()),
        GraphKind::SelfTuning => self_tuning_graph(dist.view(), cfg.graph.k),
        GraphKind::Knn(rule) => {
            let g = self_tuning_graph(dist.view(), cfg.graph.k)?;
            knn_restrict(&g, dist.view(), cfg.graph.k, rule)
        }
        GraphKind::External => Err(Error::Config("cannot build an external graph".into())),
    }
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutput> {
    let mut out = SeedOutput::default();
    let (clean, truth) = load_data(cfg, seed)?;
    out.log.push(format!("seed {seed}: {} points in R^{}", clean.n(), clean.d()));
    let mode = cfg.noise_mode().stage(Stage::Noise)?;
    for (i, &sigma) in cfg.sigmas().iter().enumerate() {
        let y = if sigma > 0.0 {
            add_noise(&clean, &NoiseSpec::new(sigma, mode)?, noise_seed(seed, i)).stage(Stage::Noise)?
        } else {
            clean.clone()
        };
        let specs = cfg.regularizers(sigma).stage(Stage::Regularize)?;
        match cfg.task {
            Task::DistanceTable => {
                let mask = cfg.mask().stage(Stage::Config)?;
                for spec in &specs {
                    let ybar = regularize(&y, spec).stage(Stage::Regularize)?;
                    let r = masked_distance_report(&clean, &y, &ybar, mask).stage(Stage::Output)?;
                    out.log.push(format!(
                        "seed {seed} sigma {sigma} {spec}: frob_raw {} frob_reg {}",
                        r.frob_raw, r.frob_reg
                    ));
                    out.rows.push(vec![
                        seed.to_string(),
                        sigma.to_string(),
                        spec.to_string(),
                        mask.to_string(),
                        r.pair_count.to_string(),
                        r.frob_raw.to_string(),
                        r.frob_reg.to_string(),
                        (r.frob_raw / r.frob_reg).to_string(),
                    ]);
                }
            }
            Task::Spectrum => {
                let sphere2 = cfg.data.source == Source::Sphere && cfg.data.m == 2;
                for (j, spec) in specs.iter().enumerate() {
                    let ybar = regularize(&y, spec).stage(Stage::Regularize)?;
                    let g = build_graph(cfg, &ybar).stage(Stage::Graph)?;
                    let l = laplacian(&g, LaplacianKind::Unnormalized).stage(Stage::Graph)?;
                    let mut s = smallest_eigs(&l, cfg.spectrum.count, DEFAULT_TOL).stage(Stage::Spectrum)?;
                    s.vectors = None;
                    let reference = if sphere2 {
                        sphere_spectrum(s.len())
                    } else {
                        vec![f64::NAN; s.len()]
                    };
                    let (dev_a, dev_b) = if sphere2 && s.len() >= 9 {
                        let (a, b) = low_mode_deviation(&s.values);
                        (a.to_string(), b.to_string())
                    } else {
                        (String::new(), String::new())
                    };
                    let file = format!("spectrum-seed{seed}-sigma{i}-reg{j}.csv");
                    out.log.push(format!("seed {seed} sigma {sigma} {spec}: {} eigenvalues -> {file}", s.len()));
                    out.rows.push(vec![
                        seed.to_string(),
                        sigma.to_string(),
                        spec.to_string(),
                        file.clone(),
                        s.values[0].to_string(),
                        dev_a,
                        dev_b,
                    ]);
                    out.files.push((file, FileBody::Spectrum(s, reference)));
                }
            }
            Task::Classify => {
                let c = cfg.classify.as_ref().ok_or_else(|| Error::Config("missing [classify]".into()))?;
                let truth = truth.clone().ok_or_else(|| Error::Config("data source has no labels".into()))?;
                let labeled = stratified_labels(&truth, c.labels, derive_seed(seed, streams::LABELS))
                    .stage(Stage::Classify)?;
                let data = LabeledDataset::new(y, truth.clone(), labeled.clone()).stage(Stage::Classify)?;
                let graph = cfg.classifier_graph()?;
                let selected = if specs.len() > 1 {
                    let cv = cross_validate(&data, &specs, graph, c.cv_repeats, derive_seed(seed, streams::CV), c.gamma)
                        .stage(Stage::Classify)?;
                    for row in &cv.table {
                        out.cv_rows.push(vec![
                            seed.to_string(),
                            sigma.to_string(),
                            row.spec.to_string(),
                            row.error_rate.to_string(),
                        ]);
                    }
                    cv.best
                } else {
                    specs[0]
                };
                let raw = classify(&data, &RegularizerSpec::Identity, graph, c.gamma).stage(Stage::Classify)?;
                let reg = classify(&data, &selected, graph, c.gamma).stage(Stage::Classify)?;
                let (er, eg) = (raw.error_unlabeled.unwrap_or(0), reg.error_unlabeled.unwrap_or(0));
                out.log.push(format!("seed {seed} sigma {sigma} {selected}: errors raw {er} regularized {eg}"));
                out.rows.push(vec![
                    seed.to_string(),
                    sigma.to_string(),
                    cfg.graph.kind.clone(),
                    selected.to_string(),
                    labeled.len().to_string(),
                    (truth.len() - labeled.len()).to_string(),
                    er.to_string(),
                    eg.to_string(),
                ]);
                let mut is_labeled = vec![false; truth.len()];
                labeled.iter().for_each(|&i| is_labeled[i] = true);
                let mut records = vec![["index", "truth", "labeled", "pred_raw", "pred_reg", "u_reg"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()];
                for k in 0..truth.len() {
                    records.push(vec![
                        k.to_string(),
                        truth[k].to_string(),
                        (is_labeled[k] as u8).to_string(),
                        raw.predictions[k].to_string(),
                        reg.predictions[k].to_string(),
                        reg.u[k].to_string(),
                    ]);
                }
                out.files.push((format!("predictions-seed{seed}-sigma{i}.csv"), FileBody::Records(records)));
            }
        }
    }
    Ok(out)
}

fn write_records<S: AsRef<[u8]>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if !header.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn manifest(cfg: &ExperimentConfig) -> Result<String> {
    let runs = cfg
        .seeds
        .iter()
        .flat_map(|&seed| {
            cfg.sigmas().into_iter().enumerate().map(move |(i, sigma)| RunSeeds {
                seed,
                sigma_index: i,
                sigma,
                noise_seed: noise_seed(seed, i).to_string(),
                label_seed: derive_seed(seed, streams::LABELS).to_string(),
                cv_seed: derive_seed(seed, streams::CV).to_string(),
                subset_seed: derive_seed(seed, streams::SUBSET).to_string(),
            })
        })
        .collect();
    let m = Manifest {
        config: cfg,
        resolved: Resolved {
            eps: cfg.eps(),
            vol: cfg.vol(),
            mask: cfg.mask()?.to_string(),
            graph: cfg.graph_kind()?.to_string(),
            noise_mode: cfg.noise_mode()?.to_string(),
            mnist_dir: (cfg.data.source == Source::Mnist).then(|| mnist_dir(cfg).display().to_string()),
        },
        runs,
    };
    toml::to_string(&m).map_err(|e| Error::Config(e.to_string()))
}

/// Run every seed of `cfg` and write the artifacts into `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate().stage(Stage::Config)?;
    let dir = cfg.output.clone();
    fs::create_dir_all(&dir).stage(Stage::Output)?;
    info!("running `{}` ({} seeds) into {}", cfg.name, cfg.seeds.len(), dir.display());
    let outputs: Vec<SeedOutput> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed))
        .collect::<Result<_>>()?;

    let write = || -> Result<()> {
        let rows: Vec<Vec<String>> = outputs.iter().flat_map(|o| o.rows.clone()).collect();
        write_records(&dir.join("results.csv"), &header(cfg.task), &rows)?;
        let cv: Vec<Vec<String>> = outputs.iter().flat_map(|o| o.cv_rows.clone()).collect();
        if !cv.is_empty() {
            write_records(&dir.join("cv.csv"), &["seed", "sigma", "candidate", "cv_error_rate"], &cv)?;
        }
        for o in &outputs {
            for (name, body) in &o.files {
                match body {
                    FileBody::Spectrum(s, reference) => write_spectrum_csv(&dir.join(name), s, reference)?,
                    FileBody::Records(r) => write_records(&dir.join(name), &[], r)?,
                }
            }
        }
        fs::write(dir.join("manifest.toml"), manifest(cfg)?)?;
        let mut log: Vec<String> = vec![format!("experiment {} task {:?}", cfg.name, cfg.task)];
        log.extend(outputs.iter().flat_map(|o| o.log.iter().cloned()));
        for line in &log {
            info!("{line}");
        }
        fs::write(dir.join("run.log"), log.join("\n") + "\n")?;
        Ok(())
    };
    write().stage(Stage::Output)?;
    Ok(dir)
}
