//! CRRA utility, certain and uncertain utility, and the investor
//! risk-attitude label.
//!
//! Labelling rule. The family comes from the sufficiency factor alone:
//! above 1 is risk-loving, below 1 risk-averse, exactly 1 neutral. The
//! qualifier compares raw uncertain utility against certain utility:
//! "insufficient" when uncertain is lower, "sufficient" when higher, and
//! omitted when they are equal.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{growth_series, MarketSeries};
use crate::error::{Result, SfmError};

/// `|1 - tau|` below this uses the logarithmic limit.
pub const LOG_UTILITY_THRESHOLD: f64 = 1e-8;

/// Published Table 1 / Table 2 values kept as calibration fixtures.
pub mod published {
    pub const YEAR: i32 = 1977;
    pub const BETA: f64 = 0.9581;
    pub const TAU: f64 = 1.0319;
    pub const SFOM_EQUITY: f64 = 1.0013;
    pub const SFOM_RISKFREE: f64 = 1.0657;
    pub const CERTAIN_UTILITY: f64 = 7.14871804;
    pub const UNCERTAIN_UTILITY_EQUITY: f64 = 6.27558270;
    pub const UNCERTAIN_UTILITY_RISKFREE: f64 = 6.97944955;
    /// Utilities are printed to 8 decimals.
    pub const UTILITY_MATCH_TOLERANCE: f64 = 5e-9;
}

/// `v(c) = (c^(1-tau) - 1) / (1 - tau)`, or `ln c` near `tau = 1`.
pub fn crra_utility(c: f64, tau: f64) -> Result<f64> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(SfmError::Domain(format!(
            "consumption must be positive, got {c}"
        )));
    }
    let ln_c = c.ln();
    let one_m_tau = 1.0 - tau;
    if one_m_tau.abs() < LOG_UTILITY_THRESHOLD {
        Ok(ln_c)
    } else {
        Ok((one_m_tau * ln_c).exp_m1() / one_m_tau)
    }
}

/// Consumption level whose utility is `v`: `(1 + (1-tau) v)^(1/(1-tau))`.
pub fn crra_inverse(v: f64, tau: f64) -> Result<f64> {
    let one_m_tau = 1.0 - tau;
    if one_m_tau.abs() < LOG_UTILITY_THRESHOLD {
        return Ok(v.exp());
    }
    let shift = one_m_tau * v;
    if !(shift > -1.0) {
        return Err(SfmError::Domain(format!(
            "utility {v} is outside the range of v(., {tau})"
        )));
    }
    Ok((shift.ln_1p() / one_m_tau).exp())
}

/// `beta` times the equal-weight mean of `v(c_now * s)` over the scenarios.
pub fn uncertain_utility(c_now: f64, scenarios: &[f64], beta: f64, tau: f64) -> Result<f64> {
    if scenarios.is_empty() {
        return Err(SfmError::Domain(
            "uncertain utility needs at least one scenario".into(),
        ));
    }
    if !(c_now > 0.0) {
        return Err(SfmError::Domain(format!(
            "consumption must be positive, got {c_now}"
        )));
    }
    let mut sum = 0.0;
    for &s in scenarios {
        if !(s > 0.0) {
            return Err(SfmError::Domain(format!(
                "scenario growth factors must be positive, got {s}"
            )));
        }
        sum += crra_utility(c_now * s, tau)?;
    }
    Ok(beta * sum / scenarios.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Investor {
    Equity,
    RiskFree,
}

impl Investor {
    pub fn as_str(self) -> &'static str {
        match self {
            Investor::Equity => "equity",
            Investor::RiskFree => "risk-free",
        }
    }
}

impl fmt::Display for Investor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the uncertain-utility scenarios are drawn from history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioGenerator {
    /// Empirical consumption growth `{x_t}`, shared by both investors.
    Growth,
    /// The investor's own historical gross returns.
    #[default]
    Returns,
}

impl ScenarioGenerator {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioGenerator::Growth => "growth",
            ScenarioGenerator::Returns => "returns",
        }
    }

    pub fn scenarios(self, series: &MarketSeries, investor: Investor) -> Vec<f64> {
        let g = growth_series(series);
        match (self, investor) {
            (ScenarioGenerator::Growth, _) => g.growth().collect(),
            (ScenarioGenerator::Returns, Investor::Equity) => g.equity_returns().collect(),
            (ScenarioGenerator::Returns, Investor::RiskFree) => g.riskfree_returns().collect(),
        }
    }
}

impl fmt::Display for ScenarioGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioGenerator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "growth" => Ok(ScenarioGenerator::Growth),
            "returns" => Ok(ScenarioGenerator::Returns),
            other => Err(format!(
                "unknown scenario generator `{other}` (growth|returns)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttitudeFamily {
    RiskLoving,
    RiskAverse,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Qualifier {
    Insufficient,
    Sufficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttitudeLabel {
    pub family: AttitudeFamily,
    pub qualifier: Option<Qualifier>,
}

impl AttitudeLabel {
    /// Capitalised form used in tables, e.g. `Insufficient risk-loving`.
    pub fn title(&self) -> String {
        let s = self.to_string();
        let mut chars = s.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => s,
        }
    }
}

impl fmt::Display for AttitudeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let family = match self.family {
            AttitudeFamily::RiskLoving => "risk-loving",
            AttitudeFamily::RiskAverse => "risk-averse",
            AttitudeFamily::Neutral => "neutral",
        };
        match self.qualifier {
            Some(Qualifier::Insufficient) => write!(f, "insufficient {family}"),
            Some(Qualifier::Sufficient) => write!(f, "sufficient {family}"),
            None => f.write_str(family),
        }
    }
}

impl Serialize for AttitudeLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

pub fn classify_attitude(certain: f64, uncertain: f64, sfom: f64) -> AttitudeLabel {
    let family = if sfom > 1.0 {
        AttitudeFamily::RiskLoving
    } else if sfom < 1.0 {
        AttitudeFamily::RiskAverse
    } else {
        AttitudeFamily::Neutral
    };
    let qualifier = if uncertain < certain {
        Some(Qualifier::Insufficient)
    } else if uncertain > certain {
        Some(Qualifier::Sufficient)
    } else {
        None
    };
    AttitudeLabel { family, qualifier }
}

/// One row of the investor tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvestorReport {
    pub investor: Investor,
    pub year: i32,
    pub stdf: f64,
    pub sfom: f64,
    pub crra: f64,
    pub certain_utility: f64,
    pub uncertain_utility: f64,
    pub label: AttitudeLabel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyInputs {
    pub year: i32,
    pub beta: f64,
    pub tau: f64,
    pub sfom_equity: f64,
    pub sfom_riskfree: f64,
    pub generator: ScenarioGenerator,
}

/// Equity row then risk-free row. Certain utility is `v(c_year)`; uncertain
/// utility averages `v(c_year * s)` over the generator's scenarios.
pub fn investor_reports(
    series: &MarketSeries,
    inputs: &ClassifyInputs,
) -> Result<[InvestorReport; 2]> {
    for (name, v) in [
        ("sfom-equity", inputs.sfom_equity),
        ("sfom-riskfree", inputs.sfom_riskfree),
    ] {
        if !(v > 0.0) {
            return Err(SfmError::Domain(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    let record = series.record(inputs.year).ok_or_else(|| SfmError::Data {
        line: None,
        message: format!(
            "year {} not in series {}-{}",
            inputs.year,
            series.first_year(),
            series.last_year()
        ),
    })?;
    let c = record.consumption;
    let certain = crra_utility(c, inputs.tau)?;
    let row = |investor: Investor, sfom: f64| -> Result<InvestorReport> {
        let scenarios = inputs.generator.scenarios(series, investor);
        let uncertain = uncertain_utility(c, &scenarios, inputs.beta, inputs.tau)?;
        Ok(InvestorReport {
            investor,
            year: inputs.year,
            stdf: inputs.beta,
            sfom,
            crra: inputs.tau,
            certain_utility: certain,
            uncertain_utility: uncertain,
            label: classify_attitude(certain, uncertain, sfom),
        })
    };
    Ok([
        row(Investor::Equity, inputs.sfom_equity)?,
        row(Investor::RiskFree, inputs.sfom_riskfree)?,
    ])
}

/// Whether a report reproduces the published uncertain utility for its investor.
pub fn matches_published(report: &InvestorReport) -> bool {
    let target = match report.investor {
        Investor::Equity => published::UNCERTAIN_UTILITY_EQUITY,
        Investor::RiskFree => published::UNCERTAIN_UTILITY_RISKFREE,
    };
    (report.uncertain_utility - target).abs() <= published::UTILITY_MATCH_TOLERANCE
}
