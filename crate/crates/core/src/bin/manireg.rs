use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use manireg::bounds::{assumption3_check, eta_bound, failure_probability, r_bounds, GeometryParams};
use manireg::classify::{classify, stratified_labels, ClassifierGraph, LabeledDataset, DEFAULT_GAMMA};
use manireg::error::{Error, Result, Stage, StageExt};
use manireg::experiments::config::ExperimentConfig;
use manireg::experiments::mnist::default_mnist_dir;
use manireg::experiments::repro::{self, MnistSetup, MoonsSetup, SphereSetup};
use manireg::experiments::runner::run_experiment;
use manireg::graph::{
    epsilon_graph, knn_restrict, laplacian, read_edge_list, self_tuning_graph, write_edge_list, GraphKind, KnnRule,
    LaplacianKind,
};
use manireg::pointcloud::{add_noise, read_cloud, sample_sphere, sample_two_moons, write_cloud, NoiseMode, NoiseSpec};
use manireg::regularize::{regularize, RegularizerSpec};
use manireg::spectral::{smallest_eigs, sphere_spectrum, write_spectrum_csv, DEFAULT_TOL};

#[derive(Parser)]
#[command(name = "manireg", version, about = "Manifold-regularized graph constructions on noisy point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a cloud (optionally with noise) and write `<out>.csv`, `<out>.clean.csv`, `<out>.meta`.
    Gen(GenArgs),
    /// Regularize a cloud.
    Regularize(RegularizeArgs),
    /// Build a similarity graph and write it as an edge list.
    Graph(GraphArgs),
    /// Smallest Laplacian eigenvalues of a graph.
    Spectrum(SpectrumArgs),
    /// Semi-supervised probit classification.
    Classify(ClassifyArgs),
    /// Evaluate the distance-bound quantities on a grid of (r, σ).
    Bounds(BoundsArgs),
    /// Re-run a tabulated experiment.
    Repro(ReproArgs),
    /// Run an experiment described by a TOML config.
    Run { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Sphere,
    TwoMoons,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "sphere")]
    sampler: SamplerArg,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value = "ambient-ball")]
    mode: NoiseMode,
    /// defaults to seed + 1
    #[arg(long)]
    noise_seed: Option<u64>,
    /// output stem
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegularizeArgs {
    /// input stem
    #[arg(long)]
    input: PathBuf,
    /// `identity`, `ball:r`, `knn:k`, `self-tuning:K` or `clean`
    #[arg(long)]
    spec: RegularizerSpec,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct GraphOpts {
    /// `epsilon`, `self-tuning`, `knn-union` or `knn-mutual`
    #[arg(long, default_value = "self-tuning")]
    kind: GraphKind,
    /// ε-graph radius (default 2n^{-1/4})
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// manifold volume in the ε-graph weight
    #[arg(long, default_value_t = 1.0)]
    vol: f64,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    graph: GraphOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LaplacianArg {
    Unnormalized,
    Normalized,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReferenceArg {
    /// ℓ(ℓ+1) with multiplicity 2ℓ+1
    Sphere,
    None,
}

#[derive(Args)]
struct SpectrumArgs {
    /// edge list written by `graph`
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, value_enum, default_value = "unnormalized")]
    laplacian: LaplacianArg,
    #[arg(long, value_enum, default_value = "none")]
    reference: ReferenceArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierGraphArg {
    FullyConnected,
    KnnUnion,
    KnnMutual,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    input: PathBuf,
    /// one ±1 label per line
    #[arg(long)]
    truth: PathBuf,
    /// number of revealed labels
    #[arg(long)]
    labels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "identity")]
    spec: RegularizerSpec,
    #[arg(long, value_enum, default_value = "fully-connected")]
    graph: ClassifierGraphArg,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3")]
    r: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01")]
    sigma: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 1.0)]
    reach: f64,
    #[arg(long, default_value_t = 1.0)]
    c_m: f64,
    /// sample size for the failure probability column
    #[arg(long, default_value_t = 3000)]
    n: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    Table1,
    Table3,
    Table4,
    Fig1,
    Fig2,
    Scaling,
}

#[derive(Args)]
struct ReproArgs {
    #[arg(value_enum)]
    which: Protocol,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    seeds: Vec<u64>,
    #[arg(long, default_value = "repro-out")]
    out: PathBuf,
    /// override the sample size
    #[arg(long)]
    n: Option<usize>,
    /// override the ambient dimension
    #[arg(long)]
    d: Option<usize>,
    /// override the σ sweep
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    /// eigenvalues per spectrum
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// directory holding an IDX image/label pair
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
}

fn read_truth(path: &Path) -> Result<Vec<i8>> {
    fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<i8>().map_err(|_| Error::Parse(format!("bad label `{l}`"))))
        .collect()
}

fn write_truth(path: &Path, truth: &[i8]) -> Result<()> {
    let text: String = truth.iter().map(|t| format!("{t}\n")).collect();
    Ok(fs::write(path, text)?)
}

fn gen(a: GenArgs) -> Result<()> {
    let (clean, truth) = match a.sampler {
        SamplerArg::Sphere => (sample_sphere(a.n, a.m, a.d, a.seed).stage(Stage::Sample)?, None),
        SamplerArg::TwoMoons => {
            let (c, t) = sample_two_moons(a.n, a.d, a.seed).stage(Stage::Sample)?;
            (c, Some(t))
        }
    };
    let cloud = if a.sigma > 0.0 {
        let spec = NoiseSpec::new(a.sigma, a.mode).stage(Stage::Noise)?;
        add_noise(&clean, &spec, a.noise_seed.unwrap_or(a.seed + 1)).stage(Stage::Noise)?
    } else {
        clean
    };
    let files = write_cloud(&a.out, &cloud).stage(Stage::Output)?;
    if let Some(t) = truth {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".labels");
        write_truth(Path::new(&p), &t).stage(Stage::Output)?;
    }
    println!("wrote {}", files.points.display());
    Ok(())
}

fn build_graph(cloud: &manireg::pointcloud::PointCloud, g: &GraphOpts) -> Result<manireg::graph::SimilarityGraph> {
    let dist = cloud.distances();
    match g.kind {
        GraphKind::Epsilon => {
            let eps = g.eps.unwrap_or_else(|| repro::sphere_epsilon(cloud.n()));
            epsilon_graph(dist.view(), eps, cloud.m(), g.vol)
        }
        GraphKind::SelfTuning => self_tuning_graph(dist.view(), g.k),
        GraphKind::Knn(rule) => knn_restrict(&self_tuning_graph(dist.view(), g.k)?, dist.view(), g.k, rule),
        GraphKind::External => Err(Error::InvalidParameter("an external graph cannot be built".into())),
    }
}

fn bounds(a: BoundsArgs) -> Result<()> {
    // a round sphere of radius `reach`: injectivity radius πR, curvature 1/R²
    let g = GeometryParams::new(a.m, a.reach, std::f64::consts::PI * a.reach, 1.0 / (a.reach * a.reach), 1.0, 1.0)
        .stage(Stage::Config)?
        .with_c_m(a.c_m);
    println!("r,sigma,r_minus,r_plus,eta,failure_probability,assumption");
    for &r in &a.r {
        for &s in &a.sigma {
            let (lo, hi) = match r_bounds(r, s, &g) {
                Ok((lo, hi)) => (lo.to_string(), hi.to_string()),
                Err(_) => (String::new(), String::new()),
            };
            let check = assumption3_check(r, s, &g, 1.0);
            println!(
                "{r},{s},{lo},{hi},{},{},\"{check}\"",
                eta_bound(r, s, a.c_m),
                failure_probability(a.n, r, a.m, 1.0)
            );
        }
    }
    Ok(())
}

fn repro_cmd(a: ReproArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    let mut sphere = SphereSetup::default();
    let mut moons = MoonsSetup::default();
    let mut mnist = MnistSetup::default();
    if let Some(n) = a.n {
        sphere.n = n;
        moons.n = n;
        mnist.n = n;
    }
    if let Some(d) = a.d {
        sphere.d = d;
        moons.d = d;
    }
    let mnist_dir = a.mnist_dir.clone().unwrap_or_else(default_mnist_dir);
    let tenths = |k: usize| (1..=k).map(|i| i as f64 / 10.0).collect::<Vec<f64>>();
    match a.which {
        Protocol::Table1 => {
            let sigmas = a.sigmas.clone().unwrap_or_else(|| tenths(9));
            let mut rows = Vec::new();
            for &s in &a.seeds {
                rows.extend(repro::table1(&sphere, &sigmas, s)?);
            }
            repro::write_distance_rows(&a.out.join("table1.csv"), &rows).stage(Stage::Output)?;
            for r in &rows {
                println!("seed {} sigma {}: frob_raw {:.3} frob_reg {:.3}", r.seed, r.sigma, r.report.frob_raw, r.report.frob_reg);
            }
        }
        Protocol::Fig1 => {
            let sigmas = a.sigmas.clone().unwrap_or_else(|| vec![0.3, 0.5]);
            if sigmas.len() != 2 {
                return Err(Error::InvalidParameter("fig1 takes two σ values: regularized, raw".into()));
            }
            for &s in &a.seeds {
                for run in repro::fig1(&sphere, sigmas[0], sigmas[1], a.count, s)? {
                    let path = a.out.join(format!("fig1-{}-seed{s}.csv", run.label));
                    let reference = sphere_spectrum(run.spectrum.len());
                    write_spectrum_csv(&path, &run.spectrum, &reference).stage(Stage::Output)?;
                    println!("wrote {}", path.display());
                }
            }
        }
        Protocol::Table3 => {
            let sigmas = a.sigmas.clone().unwrap_or_else(|| tenths(7));
            let mut rows = Vec::new();
            for &s in &a.seeds {
                rows.extend(repro::table3(&moons, &sigmas, s)?);
            }
            repro::write_moons_rows(&a.out.join("table3.csv"), &rows).stage(Stage::Output)?;
            for r in &rows {
                println!("seed {} sigma {}: errors raw {} regularized {}", r.seed, r.sigma, r.error_raw, r.error_reg);
            }
        }
        Protocol::Table4 => {
            let mut rows = Vec::new();
            for &s in &a.seeds {
                rows.extend(repro::table4(&mnist, &mnist_dir, s)?);
            }
            repro::write_mnist_rows(&a.out.join("table4.csv"), &rows).stage(Stage::Output)?;
            repro::write_mnist_cv(&a.out.join("table4-cv.csv"), &rows).stage(Stage::Output)?;
            for r in &rows {
                println!("seed {} {} / {} ({}): {} of {}", r.seed, r.graph, r.regularizer, r.selected, r.error, r.unlabeled);
            }
        }
        Protocol::Fig2 => {
            let sigma = a.sigmas.as_ref().and_then(|s| s.first().copied()).unwrap_or(0.5);
            for &s in &a.seeds {
                let (table, labels) = repro::fig2(&moons, sigma, s)?;
                let path = a.out.join(format!("fig2-scatter-seed{s}.csv"));
                repro::write_scatter(&path, &table, &labels).stage(Stage::Output)?;
                println!("wrote {}", path.display());
                match repro::mnist_image_grid(&mnist, &mnist_dir, s, 10, 1.0) {
                    Ok(grid) => {
                        let path = a.out.join(format!("fig2-mnist-grid-seed{s}.csv"));
                        repro::write_image_grid(&path, &grid).stage(Stage::Output)?;
                        println!("wrote {}", path.display());
                    }
                    Err(e) => log::warn!("skipping MNIST image grid: {e}"),
                }
            }
        }
        Protocol::Scaling => {
            let sigmas = a.sigmas.clone().unwrap_or_else(|| vec![0.1, 0.2, 0.3, 0.4]);
            sphere.mode = NoiseMode::NormalSpace;
            for &s in &a.seeds {
                let rows = repro::distance_bound_scaling(&sphere, &sigmas, s)?;
                let c_hat = repro::calibrate_constant(&rows[0]);
                let path = a.out.join(format!("scaling-seed{s}.csv"));
                repro::write_scaling_rows(&path, &rows, c_hat).stage(Stage::Output)?;
                println!("wrote {} (C = {c_hat:.4})", path.display());
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Regularize(a) => {
            let cloud = read_cloud(&a.input).stage(Stage::Load)?;
            let out = regularize(&cloud, &a.spec).stage(Stage::Regularize)?;
            write_cloud(&a.out, &out).stage(Stage::Output)?;
            Ok(())
        }
        Command::Graph(a) => {
            let cloud = read_cloud(&a.input).stage(Stage::Load)?;
            let g = build_graph(&cloud, &a.graph).stage(Stage::Graph)?;
            info!("{} edges", g.edge_count());
            write_edge_list(&a.out, &g).stage(Stage::Output)
        }
        Command::Spectrum(a) => {
            let g = read_edge_list(&a.graph).stage(Stage::Load)?;
            let kind = match a.laplacian {
                LaplacianArg::Unnormalized => LaplacianKind::Unnormalized,
                LaplacianArg::Normalized => LaplacianKind::SymmetricNormalized,
            };
            let l = laplacian(&g, kind).stage(Stage::Graph)?;
            let s = smallest_eigs(&l, a.count, DEFAULT_TOL).stage(Stage::Spectrum)?;
            let reference = match a.reference {
                ReferenceArg::Sphere => sphere_spectrum(s.len()),
                ReferenceArg::None => vec![f64::NAN; s.len()],
            };
            write_spectrum_csv(&a.out, &s, &reference).stage(Stage::Output)
        }
        Command::Classify(a) => {
            let cloud = read_cloud(&a.input).stage(Stage::Load)?;
            let truth = read_truth(&a.truth).stage(Stage::Load)?;
            let labeled = stratified_labels(&truth, a.labels, a.seed).stage(Stage::Classify)?;
            let data = LabeledDataset::new(cloud, truth.clone(), labeled).stage(Stage::Classify)?;
            let graph = match a.graph {
                ClassifierGraphArg::FullyConnected => ClassifierGraph::FullyConnected { k: a.k },
                ClassifierGraphArg::KnnUnion => ClassifierGraph::KnnVariant { k: a.k, rule: KnnRule::Union },
                ClassifierGraphArg::KnnMutual => ClassifierGraph::KnnVariant { k: a.k, rule: KnnRule::Mutual },
            };
            let fit = classify(&data, &a.spec, graph, a.gamma).stage(Stage::Classify)?;
            let mut w = csv::Writer::from_path(&a.out).stage(Stage::Output)?;
            w.write_record(["index", "truth", "prediction", "u"]).stage(Stage::Output)?;
            for i in 0..truth.len() {
                w.write_record([i.to_string(), truth[i].to_string(), fit.predictions[i].to_string(), fit.u[i].to_string()])
                    .stage(Stage::Output)?;
            }
            w.flush().stage(Stage::Output)?;
            println!(
                "unlabeled errors: {} of {}",
                fit.error_unlabeled.unwrap_or(0),
                truth.len() - data.labeled.len()
            );
            Ok(())
        }
        Command::Bounds(a) => bounds(a),
        Command::Repro(a) => repro_cmd(a),
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = run_experiment(&cfg)?;
            println!("wrote {}", dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
