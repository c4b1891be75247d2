//! Monte Carlo oracle for the jointly lognormal covariance identities.
//!
//! Draws are produced in fixed-size chunks; chunk `i` uses its own ChaCha
//! stream of the caller's seed, and partial sums are merged in chunk order,
//! so results do not depend on how many worker threads run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{bundled, growth_series};
use crate::error::Result;
use crate::model::{lognormal_power_cov, mrs_return_cov};
use crate::moments::{estimate_moments, MomentSet, VarianceConvention};

const CHUNK: usize = 1 << 16;

/// Pass threshold in standard errors.
pub const Z_THRESHOLD: f64 = 4.0;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_DRAWS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BivariateLogNormalSpec {
    pub mu_x: f64,
    pub sigma_x: f64,
    pub mu_y: f64,
    pub sigma_y: f64,
    /// Correlation of `(ln X, ln Y)`.
    pub rho: f64,
}

impl BivariateLogNormalSpec {
    pub fn mean_x(&self) -> f64 {
        (self.mu_x + 0.5 * self.sigma_x * self.sigma_x).exp()
    }

    pub fn mean_y(&self) -> f64 {
        (self.mu_y + 0.5 * self.sigma_y * self.sigma_y).exp()
    }

    /// Closed-form `cov(X^a, Y^b)`.
    pub fn power_cov(&self, a: f64, b: f64) -> f64 {
        lognormal_power_cov(
            a,
            b,
            self.mu_x,
            self.sigma_x,
            self.mu_y,
            self.sigma_y,
            self.rho,
        )
    }

    fn log_pair(&self, z_x: f64, z_perp: f64) -> (f64, f64) {
        let z_y = self.rho * z_x + (1.0 - self.rho * self.rho).max(0.0).sqrt() * z_perp;
        (
            self.mu_x + self.sigma_x * z_x,
            self.mu_y + self.sigma_y * z_y,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovEstimate {
    pub a: f64,
    pub b: f64,
    pub cov: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean_x: f64,
    pub mean_y: f64,
    pub se_mean_x: f64,
    pub se_mean_y: f64,
    /// Sample correlation of the log draws.
    pub log_correlation: f64,
    pub covariances: Vec<CovEstimate>,
}

fn chunk_draws(
    spec: &BivariateLogNormalSpec,
    n: usize,
    seed: u64,
    chunk: usize,
    mut f: impl FnMut(f64, f64),
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    let start = chunk * CHUNK;
    let len = CHUNK.min(n - start);
    for _ in 0..len {
        let z_x: f64 = StandardNormal.sample(&mut rng);
        let z_perp: f64 = StandardNormal.sample(&mut rng);
        let (lx, ly) = spec.log_pair(z_x, z_perp);
        f(lx, ly);
    }
}

/// Runs `fold` over every chunk in parallel and sums the per-chunk vectors in
/// chunk order.
fn chunked_sums(
    spec: &BivariateLogNormalSpec,
    n: usize,
    seed: u64,
    width: usize,
    fold: impl Fn(&mut [f64], f64, f64) + Sync,
) -> Vec<f64> {
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            chunk_draws(spec, n, seed, c, |lx, ly| fold(&mut acc, lx, ly));
            acc
        })
        .collect();
    partials
        .into_iter()
        .fold(vec![0.0; width], |mut total, part| {
            for (t, p) in total.iter_mut().zip(part) {
                *t += p;
            }
            total
        })
}

/// Draws `n` pairs and estimates means and `cov(X^a, Y^b)` for each requested
/// `(a, b)`, with standard errors. Deterministic for fixed `(spec, n, seed)`.
pub fn sample_pairs(
    spec: &BivariateLogNormalSpec,
    n: usize,
    seed: u64,
    powers: &[(f64, f64)],
) -> SampleSummary {
    assert!(n >= 2, "need at least two draws");
    let k = powers.len();
    let nf = n as f64;

    // pass 1: sums of X, Y, ln X, ln Y, X^a, Y^b
    let first = chunked_sums(spec, n, seed, 4 + 2 * k, |acc, lx, ly| {
        acc[0] += lx.exp();
        acc[1] += ly.exp();
        acc[2] += lx;
        acc[3] += ly;
        for (j, (a, b)) in powers.iter().enumerate() {
            acc[4 + 2 * j] += (a * lx).exp();
            acc[5 + 2 * j] += (b * ly).exp();
        }
    });
    let means: Vec<f64> = first.iter().map(|s| s / nf).collect();

    // pass 2: central second moments, regenerated from the same streams
    let second = chunked_sums(spec, n, seed, 5 + 2 * k, |acc, lx, ly| {
        let dx = lx.exp() - means[0];
        let dy = ly.exp() - means[1];
        let (dlx, dly) = (lx - means[2], ly - means[3]);
        acc[0] += dx * dx;
        acc[1] += dy * dy;
        acc[2] += dlx * dlx;
        acc[3] += dly * dly;
        acc[4] += dlx * dly;
        for (j, (a, b)) in powers.iter().enumerate() {
            let w = ((a * lx).exp() - means[4 + 2 * j]) * ((b * ly).exp() - means[5 + 2 * j]);
            acc[5 + 2 * j] += w;
            acc[6 + 2 * j] += w * w;
        }
    });

    let covariances = powers
        .iter()
        .enumerate()
        .map(|(j, &(a, b))| {
            let sum_w = second[5 + 2 * j];
            let sum_w2 = second[6 + 2 * j];
            let mean_w = sum_w / nf;
            let var_w = ((sum_w2 - nf * mean_w * mean_w) / (nf - 1.0)).max(0.0);
            CovEstimate {
                a,
                b,
                cov: sum_w / (nf - 1.0),
                std_error: (var_w / nf).sqrt(),
            }
        })
        .collect();

    let denom = (second[2] * second[3]).sqrt();
    SampleSummary {
        n,
        mean_x: means[0],
        mean_y: means[1],
        se_mean_x: (second[0] / (nf - 1.0) / nf).sqrt(),
        se_mean_y: (second[1] / (nf - 1.0) / nf).sqrt(),
        log_correlation: if denom > 0.0 { second[4] / denom } else { 0.0 },
        covariances,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub closed_form: f64,
    pub sample: f64,
    pub std_error: f64,
    /// `(sample - closed_form) / std_error`; zero when both sides agree exactly.
    pub z: f64,
    pub pass: bool,
}

impl IdentityCheck {
    fn new(name: String, closed_form: f64, sample: f64, std_error: f64) -> Self {
        let diff = sample - closed_form;
        let exact = diff.abs() <= 1e-15 * closed_form.abs().max(1.0);
        let z = if exact { 0.0 } else { diff / std_error };
        IdentityCheck {
            name,
            closed_form,
            sample,
            std_error,
            z,
            pass: exact || z.abs() <= Z_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub draws: usize,
    pub seed: u64,
    pub checks: Vec<IdentityCheck>,
    pub all_pass: bool,
}

/// Taus at which the marginal-rate-of-substitution covariance is checked.
/// Case name, distribution, and the `(a, b)` power pairs to check.
type BatteryCase = (&'static str, BivariateLogNormalSpec, Vec<(f64, f64)>);

pub const MRS_TAUS: [f64; 4] = [0.0, 1.0, 1.0319, 4.4];

/// The identity battery on the bundled series' moments.
pub fn validate_identities(draws: usize, seed: u64) -> Result<ValidationReport> {
    let m = estimate_moments(&growth_series(&bundled()), VarianceConvention::Sample)?;
    Ok(validate_identities_with(&m, draws, seed))
}

/// Generic power-covariance cases, an independent case, a negatively
/// correlated case, and the MRS-return covariance on `m` at each of
/// [`MRS_TAUS`]. Every spec also gets marginal-mean checks.
pub fn validate_identities_with(m: &MomentSet, draws: usize, seed: u64) -> ValidationReport {
    assert!(draws >= 10_000, "identity battery needs at least 1e4 draws");
    let market = BivariateLogNormalSpec {
        mu_x: m.mu_x,
        sigma_x: m.sigma_x(),
        mu_y: m.mu_r,
        sigma_y: m.sigma_r(),
        rho: m.rho,
    };
    let battery: Vec<BatteryCase> = vec![
        (
            "generic",
            BivariateLogNormalSpec {
                mu_x: 0.02,
                sigma_x: 0.04,
                mu_y: 0.05,
                sigma_y: 0.15,
                rho: 0.4,
            },
            vec![(-2.0, 1.0), (1.0, 1.0)],
        ),
        (
            "independent",
            BivariateLogNormalSpec {
                mu_x: 0.01,
                sigma_x: 0.03,
                mu_y: 0.06,
                sigma_y: 0.2,
                rho: 0.0,
            },
            vec![(-2.0, 1.0), (3.0, 2.0)],
        ),
        (
            "anticorrelated",
            BivariateLogNormalSpec {
                mu_x: 0.0,
                sigma_x: 0.05,
                mu_y: 0.03,
                sigma_y: 0.1,
                rho: -0.6,
            },
            vec![(3.0, -1.0), (-1.0, -1.0)],
        ),
        (
            "market",
            market,
            MRS_TAUS.iter().map(|t| (-t, 1.0)).collect(),
        ),
    ];

    let mut checks = Vec::new();
    for (i, (name, spec, powers)) in battery.iter().enumerate() {
        let s = sample_pairs(spec, draws, seed.wrapping_add(i as u64), powers);
        checks.push(IdentityCheck::new(
            format!("{name}: E[X]"),
            spec.mean_x(),
            s.mean_x,
            s.se_mean_x,
        ));
        checks.push(IdentityCheck::new(
            format!("{name}: E[Y]"),
            spec.mean_y(),
            s.mean_y,
            s.se_mean_y,
        ));
        for est in &s.covariances {
            let (label, closed) = if *name == "market" {
                (
                    format!("{name}: cov(x^-tau, R_e) tau={}", -est.a),
                    mrs_return_cov(m, -est.a),
                )
            } else {
                (
                    format!("{name}: cov(X^{}, Y^{})", est.a, est.b),
                    spec.power_cov(est.a, est.b),
                )
            };
            checks.push(IdentityCheck::new(label, closed, est.cov, est.std_error));
        }
    }
    let all_pass = checks.iter().all(|c| c.pass);
    ValidationReport {
        draws,
        seed,
        checks,
        all_pass,
    }
}
