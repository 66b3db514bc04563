//! Synthetic manifold samplers, bounded noise and point-cloud persistence.
//!
//! Every sampler is a pure function of its arguments and seed: the same call
//! returns bit-identical output on every platform, which is what the
//! experiment manifests rely on.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;

/// Which generator produced a cloud. Only the sphere carries an analytic
/// normal-space description, so only it supports normal-space noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    Sphere,
    TwoMoons,
    External,
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampler::Sphere => "sphere",
            Sampler::TwoMoons => "two-moons",
            Sampler::External => "external",
        })
    }
}

impl FromStr for Sampler {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Sampler::Sphere),
            "two-moons" | "moons" => Ok(Sampler::TwoMoons),
            "external" => Ok(Sampler::External),
            other => Err(Error::Parse(format!("unknown sampler `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// Uniform in the ambient d-ball of radius sigma.
    #[default]
    AmbientBall,
    /// Uniform in the ball of radius sigma of the normal space at each point.
    NormalSpace,
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseMode::AmbientBall => "ambient-ball",
            NoiseMode::NormalSpace => "normal-space",
        })
    }
}

impl FromStr for NoiseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ambient-ball" | "ambient" => Ok(NoiseMode::AmbientBall),
            "normal-space" | "normal" => Ok(NoiseMode::NormalSpace),
            other => Err(Error::UnsupportedMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub mode: NoiseMode,
}

impl NoiseSpec {
    pub fn new(sigma: f64, mode: NoiseMode) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise level must be finite and non-negative, got {sigma}"
            )));
        }
        Ok(Self { sigma, mode })
    }

    pub fn ambient_ball(sigma: f64) -> Self {
        Self {
            sigma,
            mode: NoiseMode::AmbientBall,
        }
    }

    pub fn normal_space(sigma: f64) -> Self {
        Self {
            sigma,
            mode: NoiseMode::NormalSpace,
        }
    }
}

/// Where a cloud came from; written to the metadata sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub sampler: Sampler,
    pub seed: Option<u64>,
    pub noise: Option<NoiseSpec>,
    pub noise_seed: Option<u64>,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            sampler: Sampler::External,
            seed: None,
            noise: None,
            noise_seed: None,
        }
    }
}

/// n points in R^d near an m-dimensional manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
    m: usize,
    clean: Option<Array2<f64>>,
    provenance: Provenance,
}

impl PointCloud {
    pub fn new(points: Array2<f64>, m: usize) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidDimension(format!(
                "a cloud needs n >= 1 and d >= 1, got n = {n}, d = {d}"
            )));
        }
        if m == 0 || m > d {
            return Err(Error::InvalidDimension(format!(
                "intrinsic dimension m = {m} must satisfy 0 < m <= d = {d}"
            )));
        }
        Ok(Self {
            points,
            m,
            clean: None,
            provenance: Provenance::default(),
        })
    }

    pub fn with_clean(mut self, clean: Array2<f64>) -> Result<Self> {
        if clean.dim() != self.points.dim() {
            return Err(Error::ShapeMismatch(format!(
                "clean reference {:?} vs points {:?}",
                clean.dim(),
                self.points.dim()
            )));
        }
        self.clean = Some(clean);
        Ok(self)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Same metadata and clean reference, new coordinates.
    pub fn with_points(&self, points: Array2<f64>) -> Result<Self> {
        if points.dim() != self.points.dim() {
            return Err(Error::ShapeMismatch(format!(
                "replacement points {:?} vs {:?}",
                points.dim(),
                self.points.dim()
            )));
        }
        Ok(Self {
            points,
            m: self.m,
            clean: self.clean.clone(),
            provenance: self.provenance.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn d(&self) -> usize {
        self.points.ncols()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn into_points(self) -> Array2<f64> {
        self.points
    }

    pub fn clean(&self) -> Option<ArrayView2<'_, f64>> {
        self.clean.as_ref().map(|c| c.view())
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn distances(&self) -> Array2<f64> {
        linalg::pairwise_distances(self.points.view())
    }

    /// The clean reference as a cloud of its own.
    pub fn clean_cloud(&self) -> Option<PointCloud> {
        self.clean.as_ref().map(|c| PointCloud {
            points: c.clone(),
            m: self.m,
            clean: Some(c.clone()),
            provenance: self.provenance.clone(),
        })
    }
}

fn unit_gaussian_direction(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    loop {
        let g: Array1<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.dot(&g).sqrt();
        if norm > 0.0 {
            return g / norm;
        }
    }
}

/// n points uniform on the unit m-sphere inside the first m+1 coordinates of R^d.
pub fn sample_sphere(n: usize, m: usize, d: usize, seed: u64) -> Result<PointCloud> {
    if m == 0 || m + 1 > d {
        return Err(Error::InvalidDimension(format!(
            "sphere of dimension m = {m} needs m + 1 <= d, got d = {d}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidDimension("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Array2::zeros((n, d));
    for mut row in points.rows_mut() {
        let dir = unit_gaussian_direction(&mut rng, m + 1);
        row.slice_mut(ndarray::s![..m + 1]).assign(&dir);
    }
    Ok(PointCloud::new(points, m)?.with_provenance(Provenance {
        sampler: Sampler::Sphere,
        seed: Some(seed),
        ..Provenance::default()
    }))
}

/// Two interleaved unit semicircles zero-padded into R^d.
///
/// Moon A (label +1) is the upper half of the circle centred at (0, 0),
/// moon B (label −1) the lower half of the circle centred at (1, 0.5).
/// Moon A gets the extra point when n is odd; rows are ordered A then B.
pub fn sample_two_moons(n: usize, d: usize, seed: u64) -> Result<(PointCloud, Vec<i8>)> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!(
            "two moons need d >= 2, got {d}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidDimension(format!(
            "two moons need n >= 2, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_a = n.div_ceil(2);
    let mut points = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (theta, cx, cy, label) = if i < n_a {
            (rng.random::<f64>() * std::f64::consts::PI, 0.0, 0.0, 1)
        } else {
            (
                std::f64::consts::PI * (1.0 + rng.random::<f64>()),
                1.0,
                0.5,
                -1,
            )
        };
        points[[i, 0]] = cx + theta.cos();
        points[[i, 1]] = cy + theta.sin();
        labels.push(label);
    }
    let cloud = PointCloud::new(points, 1)?.with_provenance(Provenance {
        sampler: Sampler::TwoMoons,
        seed: Some(seed),
        ..Provenance::default()
    });
    Ok((cloud, labels))
}

/// Perturb every point by an independent vector of norm at most sigma.
///
/// The returned cloud keeps the input points as its clean reference.
pub fn add_noise(cloud: &PointCloud, spec: &NoiseSpec, seed: u64) -> Result<PointCloud> {
    let spec = NoiseSpec::new(spec.sigma, spec.mode)?;
    let (n, d) = (cloud.n(), cloud.d());
    let m = cloud.m();
    if spec.mode == NoiseMode::NormalSpace && cloud.provenance.sampler != Sampler::Sphere {
        return Err(Error::UnsupportedMode(format!(
            "normal-space noise needs an analytic normal space; {} clouds have none",
            cloud.provenance.sampler
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = cloud.points.to_owned();
    let mut noisy = clean.clone();
    for i in 0..n {
        let x = clean.row(i);
        let z = match spec.mode {
            NoiseMode::AmbientBall => {
                let dir = unit_gaussian_direction(&mut rng, d);
                let radius = spec.sigma * rng.random::<f64>().powf(1.0 / d as f64);
                dir * radius
            }
            NoiseMode::NormalSpace => {
                // normal space at x: span{x} plus the zero-padded axes m+1..d
                let k = d - m;
                let coeffs = unit_gaussian_direction(&mut rng, k);
                let radius = spec.sigma * rng.random::<f64>().powf(1.0 / k as f64);
                let mut z = Array1::zeros(d);
                for (a, b) in z.iter_mut().take(m + 1).zip(x.iter()) {
                    *a = coeffs[0] * b;
                }
                for j in 1..k {
                    z[m + j] = coeffs[j];
                }
                z * radius
            }
        };
        let mut y = &x + &z;
        // rounding in x + z may push |y - x| past sigma by an ulp
        let mut dz = linalg::euclidean(y.view(), x);
        let mut shrink = 1.0;
        while dz > spec.sigma {
            shrink *= 1.0 - 1e-12;
            y = &x + &(&z * shrink);
            dz = linalg::euclidean(y.view(), x);
        }
        noisy.row_mut(i).assign(&y);
    }
    let provenance = Provenance {
        noise: Some(spec),
        noise_seed: Some(seed),
        ..cloud.provenance.clone()
    };
    Ok(PointCloud {
        points: noisy,
        m,
        clean: Some(clean),
        provenance,
    })
}

/// Great-circle distance between two unit vectors.
pub fn sphere_geodesic(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    for v in [x, y] {
        let norm = v.dot(&v).sqrt();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::NotUnitNorm(norm));
        }
    }
    Ok(x.dot(&y).clamp(-1.0, 1.0).acos())
}

/// Paths written by [`write_cloud`].
#[derive(Debug, Clone)]
pub struct CloudFiles {
    pub points: PathBuf,
    pub clean: Option<PathBuf>,
    pub meta: PathBuf,
}

impl CloudFiles {
    /// `<stem>.csv`, `<stem>.clean.csv`, `<stem>.meta`
    pub fn for_stem(stem: &Path) -> Self {
        let with = |suffix: &str| {
            let mut s = stem.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        Self {
            points: with(".csv"),
            clean: Some(with(".clean.csv")),
            meta: with(".meta"),
        }
    }
}

pub fn write_matrix_csv(path: &Path, m: ArrayView2<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Parse(format!(
                "{}: ragged row {}",
                path.display(),
                rows + 1
            )));
        }
        for field in rec.iter() {
            data.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?,
            );
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))?;
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Parse(e.to_string()))
}

/// Write points (and clean reference, if any) as CSV plus a key=value sidecar.
pub fn write_cloud(stem: &Path, cloud: &PointCloud) -> Result<CloudFiles> {
    let mut files = CloudFiles::for_stem(stem);
    write_matrix_csv(&files.points, cloud.points())?;
    match (cloud.clean(), &files.clean) {
        (Some(c), Some(p)) => write_matrix_csv(p, c)?,
        _ => files.clean = None,
    }
    let p = &cloud.provenance;
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut meta = fs::File::create(&files.meta)?;
    writeln!(meta, "n={}", cloud.n())?;
    writeln!(meta, "d={}", cloud.d())?;
    writeln!(meta, "m={}", cloud.m())?;
    writeln!(meta, "sampler={}", p.sampler)?;
    writeln!(meta, "seed={}", opt(p.seed.map(|s| s.to_string())))?;
    writeln!(meta, "sigma={}", opt(p.noise.map(|s| s.sigma.to_string())))?;
    writeln!(meta, "mode={}", opt(p.noise.map(|s| s.mode.to_string())))?;
    writeln!(meta, "noise_seed={}", opt(p.noise_seed.map(|s| s.to_string())))?;
    Ok(files)
}

fn parse_kv(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Inverse of [`write_cloud`].
pub fn read_cloud(stem: &Path) -> Result<PointCloud> {
    let files = CloudFiles::for_stem(stem);
    let meta = parse_kv(&fs::read_to_string(&files.meta)?);
    let get = |key: &str| {
        meta.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .filter(|v| !v.is_empty())
    };
    let parse_err = |key: &str| Error::Parse(format!("{}: bad `{key}`", files.meta.display()));
    let m: usize = get("m")
        .ok_or_else(|| parse_err("m"))?
        .parse()
        .map_err(|_| parse_err("m"))?;
    let points = read_matrix_csv(&files.points)?;
    let mut cloud = PointCloud::new(points, m)?;
    if let Some(p) = files.clean.as_ref().filter(|p| p.exists()) {
        cloud = cloud.with_clean(read_matrix_csv(p)?)?;
    }
    let num = |key: &str| -> Result<Option<u64>> {
        get(key)
            .map(|v| v.parse().map_err(|_| parse_err(key)))
            .transpose()
    };
    let noise = match (get("sigma"), get("mode")) {
        (Some(s), Some(mode)) => Some(NoiseSpec::new(
            s.parse().map_err(|_| parse_err("sigma"))?,
            mode.parse()?,
        )?),
        _ => None,
    };
    let provenance = Provenance {
        sampler: get("sampler").map(str::parse).transpose()?.unwrap_or(Sampler::External),
        seed: num("seed")?,
        noise,
        noise_seed: num("noise_seed")?,
    };
    Ok(cloud.with_provenance(provenance))
}
