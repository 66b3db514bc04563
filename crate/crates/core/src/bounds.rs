//! Closed-form distance-error bounds and parameter admissibility checks.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

/// Geometric constants of the underlying manifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryParams {
    pub m: usize,
    /// reach
    pub reach: f64,
    /// injectivity radius
    pub i0: f64,
    /// max |sectional curvature|
    pub curvature: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub c_m: f64,
}

impl GeometryParams {
    pub fn new(m: usize, reach: f64, i0: f64, curvature: f64, p_min: f64, p_max: f64) -> Result<Self> {
        let g = Self {
            m,
            reach,
            i0,
            curvature,
            p_min,
            p_max,
            c_m: 1.0,
        };
        g.validate()?;
        Ok(g)
    }

    /// Unit sphere S^m ⊂ R^{m+1} with the uniform density.
    pub fn unit_sphere(m: usize) -> Self {
        let p = 1.0 / sphere_volume(m);
        Self {
            m,
            reach: 1.0,
            i0: PI,
            curvature: 1.0,
            p_min: p,
            p_max: p,
            c_m: 1.0,
        }
    }

    pub fn with_c_m(mut self, c_m: f64) -> Self {
        self.c_m = c_m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.reach, self.i0, self.curvature, self.p_min, self.p_max, self.c_m];
        if self.m == 0 || positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "geometry parameters must be positive: {self:?}"
            )));
        }
        if self.p_min > self.p_max {
            return Err(Error::InvalidParameter(format!(
                "p_min {} exceeds p_max {}",
                self.p_min, self.p_max
            )));
        }
        Ok(())
    }
}

/// Volume of the unit ball in R^m, by α_m = (2π/m) α_{m−2}.
pub fn alpha_m(m: usize) -> f64 {
    match m {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / m as f64 * alpha_m(m - 2),
    }
}

/// Surface area of the unit sphere S^m: (m+1)·α_{m+1}.
pub fn sphere_volume(m: usize) -> f64 {
    (m as f64 + 1.0) * alpha_m(m + 1)
}

/// (r₋, r₊) radii bracketing the ball average's effective localization.
pub fn r_bounds(r: f64, sigma: f64, g: &GeometryParams) -> Result<(f64, f64)> {
    if !(r > 0.0) || !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need r > 0 and sigma >= 0, got r = {r}, sigma = {sigma}"
        )));
    }
    let m = g.m as f64;
    let big_r = g.reach;
    let shift = m * sigma / big_r;
    let r_minus = r / ((1.0 + 4.0 * sigma / big_r + 16.0 * sigma * sigma / (r * r)).sqrt() + shift);
    let arg = 1.0 - 8.0 * r * r / big_r - 4.0 * sigma / big_r;
    if !(arg > shift * shift) {
        return Err(Error::Domain(format!(
            "r_plus undefined: 1 - 8r^2/R - 4sigma/R = {arg} must exceed (m sigma/R)^2 = {}",
            shift * shift
        )));
    }
    let r_plus = r / (arg.sqrt() - shift);
    Ok((r_minus, r_plus))
}

/// C_{m,R} = max{(8m+32)/R, 64}
pub fn width_constant(m: usize, reach: f64) -> f64 {
    ((8.0 * m as f64 + 32.0) / reach).max(64.0)
}

/// η = C_M (r³ + rσ + σ²/r)
pub fn eta_bound(r: f64, sigma: f64, c_m: f64) -> f64 {
    c_m * (r.powi(3) + r * sigma + sigma * sigma / r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clause {
    NoiseBelowReach,
    RadiusBelowInjectivity,
    RadiusBelowCurvature,
    RadiusBelowVolumeScale,
    RadiusBelowReach,
    NoiseBelowRadius,
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Clause::NoiseBelowReach => "sigma <= R/(16m)",
            Clause::RadiusBelowInjectivity => "r <= i0",
            Clause::RadiusBelowCurvature => "r <= 1/sqrt(K)",
            Clause::RadiusBelowVolumeScale => "r <= sqrt(alpha_m/(2CmK))",
            Clause::RadiusBelowReach => "r <= sqrt(R/32)",
            Clause::NoiseBelowRadius => "sigma <= r/3",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssumptionReport {
    pub violated: Vec<Clause>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.violated.is_empty()
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return f.write_str("pass");
        }
        let names: Vec<String> = self.violated.iter().map(|c| c.to_string()).collect();
        write!(f, "fail [{}]", names.join("; "))
    }
}

/// Evaluate every admissibility clause on (r, σ); `c` is the universal constant.
pub fn assumption3_check(r: f64, sigma: f64, g: &GeometryParams, c: f64) -> AssumptionReport {
    let m = g.m as f64;
    let k = g.curvature;
    let checks = [
        (Clause::NoiseBelowReach, sigma <= g.reach / (16.0 * m)),
        (Clause::RadiusBelowInjectivity, r <= g.i0),
        (Clause::RadiusBelowCurvature, r <= 1.0 / k.sqrt()),
        (
            Clause::RadiusBelowVolumeScale,
            r <= (alpha_m(g.m) / (2.0 * c * m * k)).sqrt(),
        ),
        (Clause::RadiusBelowReach, r <= (g.reach / 32.0).sqrt()),
        (Clause::NoiseBelowRadius, sigma <= r / 3.0),
    ];
    AssumptionReport {
        violated: checks.iter().filter(|(_, ok)| !ok).map(|(c, _)| *c).collect(),
    }
}

/// c = min{α_m² p_min² / 4^{m+2}, 1/16}
pub fn concentration_constant(m: usize, p_min: f64) -> f64 {
    let a = alpha_m(m);
    (a * a * p_min * p_min / 4f64.powi(m as i32 + 2)).min(1.0 / 16.0)
}

/// min(1, 4n·exp(−c n r^{max(2m, m+4)}))
pub fn failure_probability(n: usize, r: f64, m: usize, p_min: f64) -> f64 {
    let c = concentration_constant(m, p_min);
    let power = (2 * m).max(m + 4) as i32;
    let nf = n as f64;
    (4.0 * nf * (-c * nf * r.powi(power)).exp()).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat(m: usize) -> GeometryParams {
        GeometryParams::new(m, 1e14, 10.0, 1e-6, 1.0, 1.0).unwrap()
    }

    #[test]
    fn alpha_m_values() {
        assert_eq!(alpha_m(1), 2.0);
        assert_relative_eq!(alpha_m(2), PI, max_relative = 1e-15);
        assert_relative_eq!(alpha_m(3), 4.0 * PI / 3.0, max_relative = 1e-15);
        // π²/2 and 8π²/15
        assert_relative_eq!(alpha_m(4), PI * PI / 2.0, max_relative = 1e-15);
        assert_relative_eq!(alpha_m(5), 8.0 * PI * PI / 15.0, max_relative = 1e-15);
        assert_relative_eq!(sphere_volume(2), 4.0 * PI, max_relative = 1e-15);
    }

    #[test]
    fn r_bounds_collapse_without_noise() {
        let (lo, hi) = r_bounds(0.05, 0.0, &flat(2)).unwrap();
        assert_relative_eq!(lo, 0.05, max_relative = 1e-9);
        assert_relative_eq!(hi, 0.05, max_relative = 1e-9);
    }

    #[test]
    fn r_bounds_reference_values() {
        let g = GeometryParams::new(2, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let (lo, hi) = r_bounds(0.1, 0.01, &g).unwrap();
        // independent high-precision evaluation
        assert_relative_eq!(lo, 0.089_650_309_687_4, max_relative = 1e-8);
        assert_relative_eq!(hi, 0.108_922_595_721_3, max_relative = 1e-8);
        assert!(hi - lo <= width_constant(2, 1.0) * (0.001 + 0.001 + 0.001));
    }

    #[test]
    fn r_bounds_domain_error() {
        let g = GeometryParams::new(2, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(r_bounds(0.4, 0.01, &g), Err(Error::Domain(_))));
    }

    #[test]
    fn r_bounds_bracket_on_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
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
            let (lo, hi) = r_bounds(r, sigma, &g).unwrap();
            assert!(lo <= r && r <= hi, "{lo} {r} {hi}");
            assert!(0.5 * hi <= r && r <= 2.0 * lo, "{lo} {r} {hi}");
            let width = width_constant(m, reach) * (r.powi(3) + r * sigma + sigma * sigma / r);
            assert!(hi - lo <= width * (1.0 + 1e-12));
            checked += 1;
        }
    }

    #[test]
    fn eta_bound_examples() {
        assert_eq!(eta_bound(0.2, 0.0, 2.0), 2.0 * 0.2f64.powi(3));
        assert_relative_eq!(eta_bound(0.2, 0.04, 1.0), 0.024, max_relative = 1e-14);
    }

    #[test]
    fn eta_bound_grid_minimizer_scales_like_sqrt_sigma() {
        // d/dr (r³ + rσ + σ²/r) = 0  ⇔  3r⁴ + σr² − σ² = 0  ⇔  r² = σ(√13 − 1)/6
        let a = ((13f64.sqrt() - 1.0) / 6.0).sqrt();
        for &sigma in &[1e-4f64, 1e-3, 0.01, 0.05] {
            let step = 1e-4 * sigma.sqrt();
            let grid: Vec<f64> = (1..40_000).map(|i| i as f64 * step).collect();
            let best = grid
                .iter()
                .copied()
                .min_by(|x, y| eta_bound(*x, sigma, 1.0).total_cmp(&eta_bound(*y, sigma, 1.0)))
                .unwrap();
            assert!((best - a * sigma.sqrt()).abs() <= step + 1e-15, "sigma {sigma}");
        }
    }

    #[test]
    fn eta_bound_is_convex() {
        let h = 1e-3;
        for &sigma in &[1e-3, 0.1, 1.0] {
            for i in 2..2000 {
                let r = i as f64 * h;
                let second =
                    eta_bound(r + h, sigma, 1.0) - 2.0 * eta_bound(r, sigma, 1.0) + eta_bound(r - h, sigma, 1.0);
                assert!(second >= -1e-12 * eta_bound(r, sigma, 1.0), "sigma {sigma}, r {r}");
            }
        }
    }

    #[test]
    fn assumption3_clauses() {
        let g = GeometryParams::unit_sphere(2);
        assert!(assumption3_check(1e-3, 0.0, &g, 1.0).passed());
        let r = assumption3_check(0.02, 0.02, &g, 1.0);
        assert_eq!(r.violated, vec![Clause::NoiseBelowRadius]);
        // r² = R/16 while every other clause holds
        let wide = GeometryParams::new(2, 1.0, 10.0, 1e-4, 1.0, 1.0).unwrap();
        let rep = assumption3_check(0.25, 0.0, &wide, 1.0);
        assert_eq!(rep.violated, vec![Clause::RadiusBelowReach]);
        assert!(rep.to_string().contains("sqrt(R/32)"));
    }

    #[test]
    fn concentration_constant_on_sphere() {
        let c = concentration_constant(2, 1.0 / (4.0 * PI));
        assert_relative_eq!(c, 1.0 / 4096.0, max_relative = 1e-14);
    }

    #[test]
    fn failure_probability_limits() {
        assert_eq!(failure_probability(5, 0.0, 2, 1.0), 1.0);
        let p = 1.0 / (4.0 * PI);
        let mut prev = f64::INFINITY;
        let mut turned = false;
        for e in 1..40 {
            let n = 1usize << e;
            let v = failure_probability(n, 0.5, 2, p);
            if v < 1.0 {
                turned = true;
            }
            if turned {
                assert!(v <= prev);
            }
            prev = v;
        }
        assert!(prev < 1e-100);
    }
}
