//! End-to-end acceptance checks. Each test writes one PASS/FAIL line to stderr
//! (uncaptured) and then asserts, so the summary appears even on success.

use std::io::Write;

use manireg::bounds::{assumption3_check, eta_bound, r_bounds, width_constant, GeometryParams};
use manireg::classify::{
    log_normal_cdf, probit_gradient, probit_objective, ProbitProblem, DEFAULT_GAMMA,
};
use manireg::experiments::mnist::default_mnist_dir;
use manireg::experiments::repro::{
    calibrate_constant, fig1, low_mode_deviation, table1, table3, table4, distance_bound_scaling, MnistSetup,
    MoonsSetup, SphereSetup,
};
use manireg::graph::{epsilon_graph, laplacian, self_tuning_graph, LaplacianKind};
use manireg::linalg::{pairwise_distances, symmetric_eigh};
use manireg::pointcloud::NoiseMode;
use manireg::spectral::{courant_fischer_value, sandwich_check, smallest_eigs};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn report(criterion: usize, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {criterion} {name}: {} {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn finish(criterion: usize, name: &str, failures: Vec<String>, summary: String) {
    let pass = failures.is_empty();
    let detail = if pass { summary } else { format!("{summary} | {}", failures.join("; ")) };
    report(criterion, name, pass, &detail);
    assert!(pass, "criterion {criterion} ({name}): {detail}");
}

#[test]
fn criterion_1_sphere_distance_table() {
    let sigmas: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let mut failures = Vec::new();
    let mut ratios = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let rows = table1(&SphereSetup::default(), &sigmas, seed).unwrap();
        for row in &rows {
            let (raw, reg) = (row.report.frob_raw, row.report.frob_reg);
            if !(reg < raw) {
                failures.push(format!("seed {seed} sigma {}: reg {reg:.3} !< raw {raw:.3}", row.sigma));
            }
            if (row.sigma - 0.5).abs() < 1e-9 {
                ratios.0.push(row.ratio());
                if row.ratio() < 5.0 {
                    failures.push(format!("seed {seed} sigma 0.5 ratio {:.2} < 5", row.ratio()));
                }
            }
            if (row.sigma - 0.2).abs() < 1e-9 {
                ratios.1.push(row.ratio());
                if row.ratio() < 2.0 {
                    failures.push(format!("seed {seed} sigma 0.2 ratio {:.2} < 2", row.ratio()));
                }
            }
        }
    }
    let summary = format!("ratios at 0.5 {:.2?}, at 0.2 {:.2?}", ratios.0, ratios.1);
    finish(1, "sphere distance table", failures, summary);
}

#[test]
fn criterion_2_sphere_spectrum() {
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for seed in SEEDS {
        let runs = fig1(&SphereSetup::default(), 0.3, 0.5, 9, seed).unwrap();
        let reg = &runs[1].spectrum;
        let raw = &runs[2].spectrum;
        let lambda1_scaled = reg.values[0] * reg.n as f64;
        if lambda1_scaled > 1e-6 {
            failures.push(format!("seed {seed}: lambda_1 {lambda1_scaled:e} > 1e-6"));
        }
        let (a, b) = low_mode_deviation(&reg.values);
        if a > 0.25 || b > 0.25 {
            failures.push(format!("seed {seed}: regularized deviations {a:.3}, {b:.3}"));
        }
        let (ra, rb) = low_mode_deviation(&raw.values);
        if !(ra.max(rb) > a.max(b)) {
            failures.push(format!("seed {seed}: raw deviation {:.3} <= regularized {:.3}", ra.max(rb), a.max(b)));
        }
        notes.push(format!("({a:.3},{b:.3})/({ra:.3},{rb:.3})"));
    }
    finish(2, "sphere spectrum", failures, format!("reg/raw deviations {}", notes.join(" ")));
}

#[test]
fn criterion_3_two_moons() {
    let sigmas: Vec<f64> = (1..=7).map(|i| i as f64 / 10.0).collect();
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for seed in SEEDS {
        let rows = table3(&MoonsSetup::default(), &sigmas, seed).unwrap();
        for row in &rows {
            if row.error_reg > 20 {
                failures.push(format!("seed {seed} sigma {}: regularized error {} > 20", row.sigma, row.error_reg));
            }
            if row.sigma > 0.45 && row.error_raw < row.error_reg + 100 {
                failures.push(format!(
                    "seed {seed} sigma {}: raw {} not >= regularized {} + 100",
                    row.sigma, row.error_raw, row.error_reg
                ));
            }
            if !(row.report.frob_reg < row.report.frob_raw) {
                failures.push(format!("seed {seed} sigma {}: distance report not improved", row.sigma));
            }
        }
        notes.push(
            rows.iter()
                .map(|r| format!("{}/{}", r.error_raw, r.error_reg))
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    finish(3, "two moons", failures, format!("raw/reg errors per seed [{}]", notes.join("] [")));
}

fn brute_force_eigs(dist: &Array2<f64>, eps: f64, m: usize, k: usize) -> Vec<f64> {
    // independent dense assembly: W_ij = 2(m+2)/(α_m ε^{m+2} n) for δ < ε
    let n = dist.nrows();
    let alpha = [2.0, std::f64::consts::PI, 4.0 * std::f64::consts::PI / 3.0][m - 1];
    let w = 2.0 * (m as f64 + 2.0) / (alpha * eps.powi(m as i32 + 2) * n as f64);
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j && dist[[i, j]] < eps {
                l[[i, j]] = -w;
                l[[i, i]] += w;
            }
        }
    }
    symmetric_eigh(&l).0.into_iter().take(k).collect()
}

#[test]
fn criterion_4_eigenvalue_sandwich() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut failures = Vec::new();
    let mut instances = 0;
    let mut rows = 0;
    while instances < 50 {
        let n = rng.random_range(20..=60usize);
        let m = rng.random_range(1..=3usize);
        let d = m + rng.random_range(0..3usize);
        let x = Array2::from_shape_fn((n, d), |_| rng.random::<f64>());
        let eps = 0.3 + 0.5 * rng.random::<f64>();
        let amp = eps / 8.0 / (d as f64).sqrt() * rng.random::<f64>();
        let y = &x + &Array2::from_shape_fn((n, d), |_| amp * (2.0 * rng.random::<f64>() - 1.0));
        let (dx, dy) = (pairwise_distances(x.view()), pairwise_distances(y.view()));
        let sandwich = match sandwich_check(dx.view(), dy.view(), eps, m, 10) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("instance {instances}: {e}"));
                instances += 1;
                continue;
            }
        };
        if !(sandwich.eta < eps / 4.0) {
            continue;
        }
        let (eta, k) = (sandwich.eta, sandwich.rows.len());
        let lo = brute_force_eigs(&dx, eps - eta, m, k);
        let mid = brute_force_eigs(&dy, eps, m, k);
        let hi = brute_force_eigs(&dx, eps + eta, m, k);
        let e = m as i32 + 2;
        for (i, row) in sandwich.rows.iter().enumerate() {
            rows += 1;
            let tol = 1e-9 * (1.0 + mid[i].abs());
            let lower = ((eps - eta) / eps).powi(e) * lo[i];
            let upper = ((eps + eta) / eps).powi(e) * hi[i];
            if !row.pass || !(lower <= mid[i] + tol && mid[i] <= upper + tol) {
                failures.push(format!("instance {instances} l={}: {lower} {} {upper}", row.index, mid[i]));
            }
            if (row.value - mid[i]).abs() > tol || (row.lower - lower).abs() > 1e-9 * (1.0 + lower.abs()) {
                failures.push(format!("instance {instances} l={}: solver disagrees with brute force", row.index));
            }
        }
        instances += 1;
    }
    finish(4, "eigenvalue sandwich", failures, format!("{instances} instances, {rows} inequalities"));
}

#[test]
fn criterion_5_minimax_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let n = rng.random_range(30..=80usize);
        let m = rng.random_range(1..=3usize);
        let x = Array2::from_shape_fn((n, m + 1), |_| rng.random::<f64>());
        let dist = pairwise_distances(x.view());
        let eps = 0.6 + 0.4 * rng.random::<f64>();
        let vol = 1.0 + rng.random::<f64>();
        let g = epsilon_graph(dist.view(), eps, m, vol).unwrap();
        let s = smallest_eigs(&laplacian(&g, LaplacianKind::Unnormalized).unwrap(), 5, 1e-12).unwrap();
        let vecs = s.vectors.as_ref().unwrap();
        let scale = 1e-6 * s.values[4] * n as f64;
        for l in 1..=5 {
            let basis = vecs.slice(ndarray::s![.., ..l]);
            let cf = courant_fischer_value(dist.view(), eps, m, vol, basis).unwrap();
            let lambda = s.values[l - 1] * n as f64;
            let rel = (cf - lambda).abs() / lambda.abs().max(scale);
            worst = worst.max(rel);
            if rel > 1e-8 {
                failures.push(format!("instance {inst} l={l}: solver {lambda} quotient {cf}"));
            }
        }
    }
    finish(5, "minimax equivalence", failures, format!("worst relative gap {worst:.2e}"));
}

#[test]
fn criterion_6_radius_bracket() {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut failures = Vec::new();
    let mut checked = 0;
    while checked < 10_000 {
        let m = rng.random_range(1..=6usize);
        let reach = 0.1 + 10.0 * rng.random::<f64>();
        let g = GeometryParams::new(m, reach, 10.0, 1e-3, 1.0, 1.0).unwrap();
        let r = (reach / 32.0).sqrt() * rng.random::<f64>().max(1e-6);
        let sigma = (r / 3.0).min(reach / (16.0 * m as f64)) * rng.random::<f64>();
        if !assumption3_check(r, sigma, &g, 1.0).passed() {
            continue;
        }
        checked += 1;
        let (lo, hi) = match r_bounds(r, sigma, &g) {
            Ok(b) => b,
            Err(e) => {
                failures.push(format!("m={m} R={reach} r={r} sigma={sigma}: {e}"));
                continue;
            }
        };
        let width = width_constant(m, reach) * (r.powi(3) + r * sigma + sigma * sigma / r);
        if !(0.5 * hi <= r && r <= 2.0 * lo && hi - lo <= width) {
            failures.push(format!("m={m} R={reach} r={r} sigma={sigma}: ({lo}, {hi})"));
        }
    }
    failures.truncate(5);
    finish(6, "radius bracket", failures, format!("{checked} draws"));
}

#[test]
fn criterion_7_probit_machinery() {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x = Array2::from_shape_fn((40, 3), |_| rng.random::<f64>());
    let g = self_tuning_graph(pairwise_distances(x.view()).view(), 5).unwrap();
    let labels: Vec<(usize, i8)> = (0..8).map(|i| (i * 5, if i % 2 == 0 { 1 } else { -1 })).collect();
    let p = ProbitProblem::from_graph(&g, labels.clone(), DEFAULT_GAMMA).unwrap();
    let project = |v: Vec<f64>| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.into_iter().map(|a| a - mean).collect::<Vec<f64>>()
    };
    let mut worst_fd = 0.0f64;
    for _ in 0..10 {
        let u = project((0..40).map(|_| rng.random::<f64>() - 0.5).collect());
        let dir = project((0..40).map(|_| rng.random::<f64>() - 0.5).collect());
        let grad = probit_gradient(&p, &u);
        let analytic: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let h = 1e-6;
        let shift = |s: f64| u.iter().zip(&dir).map(|(a, b)| a + s * b).collect::<Vec<f64>>();
        let fd = (probit_objective(&p, &shift(h)) - probit_objective(&p, &shift(-h))) / (2.0 * h);
        let rel = (fd - analytic).abs() / analytic.abs().max(1e-8);
        worst_fd = worst_fd.max(rel);
        if rel > 1e-4 {
            failures.push(format!("finite difference {fd} vs gradient {analytic}"));
        }
        let v = project((0..40).map(|_| rng.random::<f64>() - 0.5).collect());
        let mid: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 0.5 * (a + b)).collect();
        let lhs = probit_objective(&p, &mid);
        let rhs = 0.5 * (probit_objective(&p, &u) + probit_objective(&p, &v));
        if lhs > rhs + 1e-12 * rhs.abs() {
            failures.push(format!("midpoint convexity {lhs} > {rhs}"));
        }
    }
    let j0 = probit_objective(&p, &vec![0.0; 40]);
    if (j0 - labels.len() as f64 * std::f64::consts::LN_2).abs() > 1e-12 {
        failures.push(format!("J(0) = {j0}"));
    }
    // log Φ at −10, −20, −30 (50-digit reference values)
    let oracle = [
        (-10.0, -53.23128515051247057834703),
        (-20.0, -203.9171553710972639368045),
        (-30.0, -454.3212439563431971073558),
    ];
    let mut worst_cdf = 0.0f64;
    for (z, want) in oracle {
        let got = log_normal_cdf(z * DEFAULT_GAMMA, DEFAULT_GAMMA);
        let rel = ((got - want) / want).abs();
        worst_cdf = worst_cdf.max(rel);
        if rel > 1e-8 {
            failures.push(format!("log-CDF at {z}: {got} vs {want}"));
        }
    }
    finish(
        7,
        "probit machinery",
        failures,
        format!("worst FD {worst_fd:.1e}, worst log-CDF {worst_cdf:.1e}"),
    );
}

#[test]
fn criterion_8_mnist_direction() {
    let setup = MnistSetup {
        alternatives: false,
        ..MnistSetup::default()
    };
    let dir = default_mnist_dir();
    let mut failures = Vec::new();
    let mut improved = 0;
    let mut rel = Vec::new();
    let mut notes = Vec::new();
    for seed in SEEDS {
        let rows = table4(&setup, &dir, seed).unwrap();
        let find = |graph: &str, reg: &str| {
            rows.iter()
                .find(|r| r.graph == graph && r.regularizer == reg)
                .map(|r| r.error)
                .unwrap()
        };
        let (fc_raw, fc_reg) = (find("fully-connected", "none"), find("fully-connected", "ball"));
        let (kn_raw, kn_reg) = (find("knn", "none"), find("knn", "ball"));
        if fc_reg < fc_raw {
            improved += 1;
        }
        rel.push((fc_raw as f64 - fc_reg as f64) / (fc_raw as f64).max(1.0));
        if !(kn_raw < fc_raw && kn_reg < fc_reg) {
            failures.push(format!("seed {seed}: knn {kn_raw}/{kn_reg} vs fully connected {fc_raw}/{fc_reg}"));
        }
        notes.push(format!("fc {fc_raw}->{fc_reg} knn {kn_raw}->{kn_reg}"));
    }
    let mean_rel = rel.iter().sum::<f64>() / rel.len() as f64;
    if improved < 4 {
        failures.push(format!("regularization helped in {improved}/5 seeds"));
    }
    if mean_rel < 0.15 {
        failures.push(format!("mean relative improvement {mean_rel:.3} < 0.15"));
    }
    finish(
        8,
        "mnist 4/9 direction",
        failures,
        format!("data {}, {}", dir.display(), notes.join("; ")),
    );
}

#[test]
fn criterion_9_distance_bound_scaling() {
    let setup = SphereSetup {
        mode: NoiseMode::NormalSpace,
        ..SphereSetup::default()
    };
    let sigmas = [0.1, 0.2, 0.3, 0.4];
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for seed in SEEDS {
        let rows = distance_bound_scaling(&setup, &sigmas, seed).unwrap();
        let c_hat = calibrate_constant(&rows[0]);
        for row in &rows[1..] {
            let bound = eta_bound(row.r, row.sigma, c_hat);
            if row.measured > bound {
                failures.push(format!("seed {seed} sigma {}: {:.4} > bound {bound:.4}", row.sigma, row.measured));
            }
            if !(row.measured < 2.0 * row.sigma) {
                failures.push(format!("seed {seed} sigma {}: {:.4} >= 2 sigma", row.sigma, row.measured));
            }
        }
        notes.push(
            rows.iter()
                .map(|r| format!("{:.3}", r.measured))
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    finish(9, "distance bound scaling", failures, format!("measured max [{}]", notes.join("] [")));
}
