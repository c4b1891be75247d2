//! The four-equation residual system and the lognormal covariance identities.
//!
//! Unknowns are handled in log space as `(b, w, d, tau)` with `b = ln beta`,
//! `w = ln omega`, `d = ln delta`. With `F = ln E(R_f)`, `Rm = ln E(R_e)`,
//! `X` the log of `E(x)` and `k = tau * rho * sigma_x * sigma_r`:
//!
//! ```text
//! r2 = F + b + w - tau*mu_x + tau^2*sigma2_x/2
//! r3 = F*(1 -/+ k) - Rm + b*k - d*(1 - k) + w*(1 + k)     printed / rederived
//! r4 = (Rm - F) - w + d - tau*sigma2_x
//! r5 = Rm - X + b + d + (1 - tau)*mu_x + (1 - tau)^2*sigma2_x/2
//! ```
//!
//! For every moment set and every parameter vector,
//! `r2 + r4 - r5 = X - mu_x - sigma2_x/2`, so the Jacobian never has full rank.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SfmError};
use crate::moments::MomentSet;

/// `(beta, omega, delta, tau)`: discount factor, risk-free SFOM, equity SFOM, CRRA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: f64,
    pub omega: f64,
    pub delta: f64,
    pub tau: f64,
}

impl ModelParams {
    /// Default solver start: beta near its conventional calibration, neutral
    /// SFOMs, tau inside the usual CRRA range.
    pub const CANONICAL_START: ModelParams = ModelParams {
        beta: 0.99,
        omega: 1.0,
        delta: 1.0,
        tau: 2.0,
    };

    pub fn new(beta: f64, omega: f64, delta: f64, tau: f64) -> Result<Self> {
        let p = ModelParams {
            beta,
            omega,
            delta,
            tau,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.beta, self.omega, self.delta]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if positive && self.tau.is_finite() {
            Ok(())
        } else {
            Err(SfmError::Domain(format!(
                "beta, omega, delta must be positive and tau finite, got {self:?}"
            )))
        }
    }

    pub fn from_log(v: [f64; 4]) -> Self {
        ModelParams {
            beta: v[0].exp(),
            omega: v[1].exp(),
            delta: v[2].exp(),
            tau: v[3],
        }
    }

    /// `[ln beta, ln omega, ln delta, tau]`.
    pub fn to_log(&self) -> [f64; 4] {
        [self.beta.ln(), self.omega.ln(), self.delta.ln(), self.tau]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eq3Variant {
    /// Coefficient `(1 - k)` on `ln E(R_f)`, as printed.
    #[default]
    Printed,
    /// Coefficient `(1 + k)`, from expanding the logged Euler relation directly.
    Rederived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LnExMode {
    /// `ln` of the arithmetic sample mean of `x`.
    #[default]
    Arithmetic,
    /// `mu_x + sigma2_x / 2`, which forces the lognormality gap to zero.
    #[serde(rename = "lognormal")]
    LognormalImplied,
}

macro_rules! text_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($variant => $name),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(format!(concat!("unknown ", $what, " `{}`"), other)),
                }
            }
        }
    };
}

text_enum!(Eq3Variant, "eq3 variant", Eq3Variant::Printed => "printed", Eq3Variant::Rederived => "rederived");
text_enum!(LnExMode, "lnex mode", LnExMode::Arithmetic => "arithmetic", LnExMode::LognormalImplied => "lognormal");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelOptions {
    pub eq3: Eq3Variant,
    pub lnex: LnExMode,
}

/// Residuals of the four equations, each `lhs - rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub r5: f64,
    pub norm: f64,
}

impl Residuals {
    pub fn from_array(r: [f64; 4]) -> Self {
        Residuals {
            r2: r[0],
            r3: r[1],
            r4: r[2],
            r5: r[3],
            norm: r.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.r2, self.r3, self.r4, self.r5]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// The residual system with all moment-derived constants precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquationSystem {
    /// `ln E(R_f)`
    pub ln_rf: f64,
    /// `ln E(R_e)`
    pub ln_re: f64,
    /// `ln E(x)` under the chosen mode
    pub ln_ex: f64,
    pub mu_x: f64,
    pub sigma2_x: f64,
    /// `rho * sigma_x * sigma_r`; `k = tau * rho_sx_sr`
    pub rho_sx_sr: f64,
    pub options: ModelOptions,
}

impl EquationSystem {
    pub fn new(m: &MomentSet, options: ModelOptions) -> Result<Self> {
        for (name, v) in [
            ("mean_rf", m.mean_rf),
            ("mean_re", m.mean_re),
            ("mean_x", m.mean_x),
        ] {
            if !(v > 0.0) {
                return Err(SfmError::Domain(format!(
                    "{name} must be positive to take its log, got {v}"
                )));
            }
        }
        let ln_ex = match options.lnex {
            LnExMode::Arithmetic => m.mean_x.ln(),
            LnExMode::LognormalImplied => m.mu_x + 0.5 * m.sigma2_x,
        };
        Ok(EquationSystem {
            ln_rf: m.mean_rf.ln(),
            ln_re: m.mean_re.ln(),
            ln_ex,
            mu_x: m.mu_x,
            sigma2_x: m.sigma2_x,
            rho_sx_sr: m.rho * m.sigma2_x.sqrt() * m.sigma2_r.sqrt(),
            options,
        })
    }

    pub fn k(&self, tau: f64) -> f64 {
        tau * self.rho_sx_sr
    }

    /// The parameter-free value of `r2 + r4 - r5`.
    pub fn gap(&self) -> f64 {
        self.ln_ex - self.mu_x - 0.5 * self.sigma2_x
    }

    /// Coefficient of `ln E(R_f)` in `r3`.
    fn f_coeff(&self, k: f64) -> f64 {
        match self.options.eq3 {
            Eq3Variant::Printed => 1.0 - k,
            Eq3Variant::Rederived => 1.0 + k,
        }
    }

    /// Residuals at `x = [b, w, d, tau]`.
    pub fn residuals(&self, x: &[f64; 4]) -> [f64; 4] {
        let [b, w, d, tau] = *x;
        let (f, rm, mu, s2) = (self.ln_rf, self.ln_re, self.mu_x, self.sigma2_x);
        let k = self.k(tau);
        let one_m_tau = 1.0 - tau;
        [
            f + b + w - tau * mu + 0.5 * tau * tau * s2,
            f * self.f_coeff(k) - rm + b * k - d * (1.0 - k) + w * (1.0 + k),
            (rm - f) - w + d - tau * s2,
            rm - self.ln_ex + b + d + one_m_tau * mu + 0.5 * one_m_tau * one_m_tau * s2,
        ]
    }

    /// Analytic Jacobian: row `i` is the gradient of residual `i` in `(b, w, d, tau)`.
    pub fn jacobian(&self, x: &[f64; 4]) -> Matrix4<f64> {
        let [b, w, d, tau] = *x;
        let (f, mu, s2) = (self.ln_rf, self.mu_x, self.sigma2_x);
        let k = self.k(tau);
        let dr3_dk = match self.options.eq3 {
            Eq3Variant::Printed => -f + b + d + w,
            Eq3Variant::Rederived => f + b + d + w,
        };
        Matrix4::new(
            1.0,
            1.0,
            0.0,
            -mu + tau * s2,
            k,
            1.0 + k,
            -(1.0 - k),
            self.rho_sx_sr * dr3_dk,
            0.0,
            -1.0,
            1.0,
            -s2,
            1.0,
            0.0,
            1.0,
            -mu - (1.0 - tau) * s2,
        )
    }

    pub fn residuals_vec(&self, x: &Vector4<f64>) -> Vector4<f64> {
        Vector4::from(self.residuals(&(*x).into()))
    }
}

pub fn residual_vector(m: &MomentSet, p: &ModelParams, options: ModelOptions) -> Result<Residuals> {
    let sys = EquationSystem::new(m, options)?;
    Ok(Residuals::from_array(sys.residuals(&p.to_log())))
}

pub fn jacobian(m: &MomentSet, p: &ModelParams, options: ModelOptions) -> Result<Matrix4<f64>> {
    let sys = EquationSystem::new(m, options)?;
    Ok(sys.jacobian(&p.to_log()))
}

/// `cov(X^a, Y^b)` for jointly lognormal `(X, Y)` with log-means `mu_*`,
/// log-stddevs `sigma_*` and log-correlation `rho`.
pub fn lognormal_power_cov(
    a: f64,
    b: f64,
    mu_x: f64,
    sigma_x: f64,
    mu_y: f64,
    sigma_y: f64,
    rho: f64,
) -> f64 {
    let ex = (a * mu_x + 0.5 * a * a * sigma_x * sigma_x).exp();
    let ey = (b * mu_y + 0.5 * b * b * sigma_y * sigma_y).exp();
    ex * ey * (a * b * rho * sigma_x * sigma_y).exp_m1()
}

/// Covariance of the marginal rate of substitution `x^(-tau)` with `R_e`.
pub fn mrs_return_cov(m: &MomentSet, tau: f64) -> f64 {
    lognormal_power_cov(-tau, 1.0, m.mu_x, m.sigma_x(), m.mu_r, m.sigma_r(), m.rho)
}

/// Exact (not log-linearised) Euler discrepancy
/// `omega*E(R_f) - delta*E(R_e) - omega*delta*beta*E(R_f)*cov(MRS, R_e)`.
pub fn euler_gap(m: &MomentSet, p: &ModelParams) -> f64 {
    let cov = mrs_return_cov(m, p.tau);
    p.omega * m.mean_rf - p.delta * m.mean_re - p.omega * p.delta * p.beta * m.mean_rf * cov
}
