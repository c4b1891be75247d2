//! Sample statistics entering the residual system.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::GrowthSeries;
use crate::error::{Result, SfmError};

/// Divisor used for variances and the covariance inside `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceConvention {
    /// `n - 1` divisor.
    #[default]
    Sample,
    /// `n` divisor.
    Population,
}

impl VarianceConvention {
    fn divisor(self, n: usize) -> f64 {
        match self {
            VarianceConvention::Sample => (n - 1) as f64,
            VarianceConvention::Population => n as f64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VarianceConvention::Sample => "sample",
            VarianceConvention::Population => "population",
        }
    }
}

impl fmt::Display for VarianceConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VarianceConvention {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sample" => Ok(VarianceConvention::Sample),
            "population" => Ok(VarianceConvention::Population),
            other => Err(format!(
                "unknown variance convention `{other}` (sample|population)"
            )),
        }
    }
}

/// Log-moments of consumption growth and the equity return, plus arithmetic
/// means of the gross series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    /// Mean of `ln x`.
    pub mu_x: f64,
    /// Variance of `ln x`.
    pub sigma2_x: f64,
    /// Mean of `ln R_e`.
    pub mu_r: f64,
    /// Variance of `ln R_e`.
    pub sigma2_r: f64,
    /// Correlation of `(ln x, ln R_e)`.
    pub rho: f64,
    pub mean_x: f64,
    pub mean_re: f64,
    pub mean_rf: f64,
    pub n_obs: usize,
    pub convention: VarianceConvention,
}

impl MomentSet {
    pub fn sigma_x(&self) -> f64 {
        self.sigma2_x.sqrt()
    }

    pub fn sigma_r(&self) -> f64 {
        self.sigma2_r.sqrt()
    }

    /// Checks the field invariants; useful for hand-built moment sets.
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma2_x >= 0.0
            && self.sigma2_r >= 0.0
            && (-1.0..=1.0).contains(&self.rho)
            && self.mean_x > 0.0
            && self.mean_re > 0.0
            && self.mean_rf > 0.0
            && self.n_obs >= 2
            && [
                self.mu_x,
                self.mu_r,
                self.mean_x,
                self.mean_re,
                self.mean_rf,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SfmError::Domain(format!("invalid moment set: {self:?}")))
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn central_sum(a: &[f64], mean_a: f64, b: &[f64], mean_b: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - mean_a) * (y - mean_b))
        .sum()
}

pub fn estimate_moments(
    growth: &GrowthSeries,
    convention: VarianceConvention,
) -> Result<MomentSet> {
    let n = growth.len();
    if n < 2 {
        return Err(SfmError::Degenerate(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    let obs = &growth.observations;
    if let Some(o) = obs
        .iter()
        .find(|o| !(o.x > 0.0 && o.r_e > 0.0 && o.r_f > 0.0))
    {
        return Err(SfmError::Domain(format!(
            "non-positive growth or return in year {}",
            o.year
        )));
    }

    let ln_x: Vec<f64> = obs.iter().map(|o| o.x.ln()).collect();
    let ln_r: Vec<f64> = obs.iter().map(|o| o.r_e.ln()).collect();
    let mu_x = mean(&ln_x);
    let mu_r = mean(&ln_r);
    let div = convention.divisor(n);
    let sigma2_x = central_sum(&ln_x, mu_x, &ln_x, mu_x) / div;
    let sigma2_r = central_sum(&ln_r, mu_r, &ln_r, mu_r) / div;
    if sigma2_x == 0.0 || sigma2_r == 0.0 {
        return Err(SfmError::Degenerate(format!(
            "zero variance in {} (correlation undefined); mu_x = {mu_x}",
            if sigma2_x == 0.0 { "ln x" } else { "ln R_e" }
        )));
    }
    let cov = central_sum(&ln_x, mu_x, &ln_r, mu_r) / div;
    let rho = (cov / (sigma2_x.sqrt() * sigma2_r.sqrt())).clamp(-1.0, 1.0);

    let raw = |f: fn(&crate::dataset::GrowthObservation) -> f64| {
        obs.iter().map(f).sum::<f64>() / n as f64
    };
    Ok(MomentSet {
        mu_x,
        sigma2_x,
        mu_r,
        sigma2_r,
        rho,
        mean_x: raw(|o| o.x),
        mean_re: raw(|o| o.r_e),
        mean_rf: raw(|o| o.r_f),
        n_obs: n,
        convention,
    })
}

/// `ln(mean_x) - mu_x - sigma2_x / 2`: zero iff the sample is exactly
/// lognormal-consistent. It bounds the attainable residual norm from below.
pub fn lognormality_gap(m: &MomentSet) -> f64 {
    m.mean_x.ln() - m.mu_x - 0.5 * m.sigma2_x
}
