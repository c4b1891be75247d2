//! Damped least squares on `(ln beta, ln omega, ln delta, tau)`, rank
//! diagnostics, and the one-parameter solution curve in `tau`.
//!
//! Because `r2 + r4 - r5` is the same constant `g` (the lognormality gap) at
//! every parameter vector, the residual norm cannot fall below `|g| / sqrt(3)`,
//! attained with `r3 = 0`, `r2 = r4 = g/3`, `r5 = -g/3`. The Jacobian is
//! singular everywhere, so undamped Newton steps are not available.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SfmError};
use crate::model::{euler_gap, EquationSystem, ModelOptions, ModelParams, Residuals};
use crate::moments::MomentSet;

/// Smallest singular value at or below this fraction of the largest counts as zero.
pub const RANK_THRESHOLD: f64 = 1e-10;

/// Below this `|k|` the `(b, w, d)` subsystem is treated as singular.
const MIN_SUBSYSTEM_DET: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub initial: ModelParams,
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub residual_tolerance: f64,
    pub damping_init: f64,
    pub options: ModelOptions,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            initial: ModelParams::CANONICAL_START,
            max_iterations: 500,
            step_tolerance: 1e-12,
            residual_tolerance: 1e-12,
            damping_init: 1e-3,
            options: ModelOptions::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let tol_ok = [
            self.step_tolerance,
            self.residual_tolerance,
            self.damping_init,
        ]
        .iter()
        .all(|t| t.is_finite() && *t > 0.0);
        if !tol_ok || self.max_iterations == 0 {
            return Err(SfmError::Domain(format!(
                "solver tolerances and damping must be positive and max_iterations >= 1: {self:?}"
            )));
        }
        self.initial.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceReason {
    /// Residual norm fell below `residual_tolerance`.
    #[serde(rename = "residual")]
    Residual,
    /// Step length fell below `step_tolerance` relative to the iterate.
    #[serde(rename = "step")]
    Step,
    #[serde(rename = "max-iter")]
    MaxIterations,
}

impl ConvergenceReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ConvergenceReason::Residual => "residual",
            ConvergenceReason::Step => "step",
            ConvergenceReason::MaxIterations => "max-iter",
        }
    }
}

impl fmt::Display for ConvergenceReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub params: ModelParams,
    pub residuals: Residuals,
    pub iterations: usize,
    pub converged: ConvergenceReason,
    /// Descending.
    pub jacobian_singular_values: [f64; 4],
    pub numerical_rank: usize,
    /// `r2 + r4 - r5`, constant over parameter space.
    pub gap: f64,
    /// Residual norm at the start and after every accepted step.
    pub norm_history: Vec<f64>,
}

/// Singular values of `j`, largest first.
pub fn singular_values(j: &Matrix4<f64>) -> [f64; 4] {
    let sv = j.singular_values();
    let mut out = [sv[0], sv[1], sv[2], sv[3]];
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

pub fn numerical_rank(sv: &[f64; 4]) -> usize {
    let largest = sv[0];
    if largest <= 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_THRESHOLD * largest).count()
}

fn half_sq(r: &Vector4<f64>) -> f64 {
    0.5 * r.norm_squared()
}

/// Levenberg-Marquardt with Nielsen's damping update. Accepted steps never
/// increase the residual norm.
pub fn solve(m: &MomentSet, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    let sys = EquationSystem::new(m, cfg.options)?;

    let mut x = Vector4::from(cfg.initial.to_log());
    let mut r = sys.residuals_vec(&x);
    if !r.iter().all(|v| v.is_finite()) {
        return Err(SfmError::Solver {
            reason: "non-finite residuals at the initial point".into(),
            iterations: 0,
            last: cfg.initial,
        });
    }
    let mut cost = half_sq(&r);
    let mut jac = sys.jacobian(&x.into());
    let mut jtj = jac.transpose() * jac;
    let mut grad = jac.transpose() * r;

    let max_diag = jtj.diagonal().max();
    let mut damping = cfg.damping_init * if max_diag > 0.0 { max_diag } else { 1.0 };
    let mut nu = 2.0;
    let mut history = vec![r.norm()];
    let mut reason = ConvergenceReason::MaxIterations;
    let mut iterations = 0;

    if r.norm() <= cfg.residual_tolerance {
        reason = ConvergenceReason::Residual;
    } else {
        for iter in 1..=cfg.max_iterations {
            iterations = iter;
            let step = (jtj + Matrix4::identity() * damping)
                .cholesky()
                .map(|c| c.solve(&(-grad)));
            let Some(step) = step else {
                damping *= nu;
                nu *= 2.0;
                continue;
            };
            if step.norm() <= cfg.step_tolerance * (x.norm() + cfg.step_tolerance) {
                reason = ConvergenceReason::Step;
                break;
            }

            let x_trial = x + step;
            let r_trial = sys.residuals_vec(&x_trial);
            let cost_trial = half_sq(&r_trial);
            let predicted = 0.5 * step.dot(&(step * damping - grad));
            let accepted = cost_trial.is_finite() && predicted > 0.0 && cost_trial < cost;

            if accepted {
                let gain = (cost - cost_trial) / predicted;
                x = x_trial;
                r = r_trial;
                cost = cost_trial;
                jac = sys.jacobian(&x.into());
                jtj = jac.transpose() * jac;
                grad = jac.transpose() * r;
                damping *= (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                history.push(r.norm());
                if r.norm() <= cfg.residual_tolerance {
                    reason = ConvergenceReason::Residual;
                    break;
                }
            } else {
                damping *= nu;
                nu *= 2.0;
            }
            if !damping.is_finite() {
                return Err(SfmError::Solver {
                    reason: "damping overflowed without an acceptable step".into(),
                    iterations,
                    last: ModelParams::from_log(x.into()),
                });
            }
        }
    }

    let sv = singular_values(&jac);
    Ok(Solution {
        params: ModelParams::from_log(x.into()),
        residuals: Residuals::from_array(r.into()),
        iterations,
        converged: reason,
        jacobian_singular_values: sv,
        numerical_rank: numerical_rank(&sv),
        gap: sys.gap(),
        norm_history: history,
    })
}

/// Independent solves, one per start, evaluated in parallel; output order
/// follows `starts`.
pub fn solve_from_starts(
    m: &MomentSet,
    starts: &[ModelParams],
    cfg: &SolverConfig,
) -> Vec<Result<Solution>> {
    starts
        .par_iter()
        .map(|start| {
            solve(
                m,
                &SolverConfig {
                    initial: *start,
                    ..*cfg
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldPoint {
    pub tau: f64,
    pub beta: f64,
    pub omega: f64,
    pub delta: f64,
    pub residuals: Residuals,
}

impl ManifoldPoint {
    pub fn params(&self) -> ModelParams {
        ModelParams {
            beta: self.beta,
            omega: self.omega,
            delta: self.delta,
            tau: self.tau,
        }
    }

    fn log_coords(&self) -> Vector4<f64> {
        Vector4::from(self.params().to_log())
    }
}

/// `steps + 1` evenly spaced points from `min` to `max` inclusive.
pub fn tau_grid(min: f64, max: f64, steps: usize) -> Result<Vec<f64>> {
    if !(min.is_finite() && max.is_finite() && max > min) || steps == 0 {
        return Err(SfmError::Domain(format!(
            "tau grid needs finite min < max and steps >= 1, got [{min}, {max}] with {steps} steps"
        )));
    }
    let h = (max - min) / steps as f64;
    Ok((0..=steps)
        .map(|i| if i == steps { max } else { min + i as f64 * h })
        .collect())
}

/// For each `tau`, solves `r2 = r3 = r4 = 0` exactly for `(b, w, d)`. The
/// subsystem determinant is `k = tau * rho * sigma_x * sigma_r`.
pub fn trace_manifold(
    m: &MomentSet,
    tau_grid: &[f64],
    options: ModelOptions,
) -> Result<Vec<ManifoldPoint>> {
    let sys = EquationSystem::new(m, options)?;
    if tau_grid.windows(2).any(|w| !(w[1] > w[0])) || tau_grid.iter().any(|t| !t.is_finite()) {
        return Err(SfmError::Domain(
            "tau grid must be finite and strictly increasing".into(),
        ));
    }
    tau_grid
        .iter()
        .map(|&tau| manifold_point(&sys, tau))
        .collect()
}

fn manifold_point(sys: &EquationSystem, tau: f64) -> Result<ManifoldPoint> {
    let k = sys.k(tau);
    if !(k.abs() > MIN_SUBSYSTEM_DET) {
        return Err(SfmError::SingularSubsystem { tau, k });
    }
    // Residuals are affine in (b, w, d) at fixed tau: r = A [b w d]' + r(0, 0, 0, tau).
    let j = sys.jacobian(&[0.0, 0.0, 0.0, tau]);
    let a = Matrix3::new(
        j[(0, 0)],
        j[(0, 1)],
        j[(0, 2)],
        j[(1, 0)],
        j[(1, 1)],
        j[(1, 2)],
        j[(2, 0)],
        j[(2, 1)],
        j[(2, 2)],
    );
    let r0 = sys.residuals(&[0.0, 0.0, 0.0, tau]);
    let rhs = -Vector3::new(r0[0], r0[1], r0[2]);
    let bwd = a
        .lu()
        .solve(&rhs)
        .ok_or(SfmError::SingularSubsystem { tau, k })?;
    let x = [bwd[0], bwd[1], bwd[2], tau];
    let p = ModelParams::from_log(x);
    Ok(ManifoldPoint {
        tau,
        beta: p.beta,
        omega: p.omega,
        delta: p.delta,
        residuals: Residuals::from_array(sys.residuals(&x)),
    })
}

/// Euclidean distance in `(ln beta, ln omega, ln delta, tau)` from `target`
/// to the polyline through `curve`.
pub fn manifold_distance(curve: &[ManifoldPoint], target: &ModelParams) -> Option<f64> {
    let t = Vector4::from(target.to_log());
    match curve {
        [] => None,
        [only] => Some((only.log_coords() - t).norm()),
        _ => curve
            .windows(2)
            .map(|seg| {
                let (a, b) = (seg[0].log_coords(), seg[1].log_coords());
                let ab = b - a;
                let s = ((t - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
                (a + ab * s - t).norm()
            })
            .min_by(|a, b| a.total_cmp(b)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub singular_values: [f64; 4],
    pub numerical_rank: usize,
    pub gap: f64,
    /// `|gap| / sqrt(3)`: the least attainable residual norm.
    pub residual_floor: f64,
    pub euler_gap: f64,
    pub residuals: Residuals,
}

pub fn rank_diagnostics(
    m: &MomentSet,
    p: &ModelParams,
    options: ModelOptions,
) -> Result<RankReport> {
    let sys = EquationSystem::new(m, options)?;
    let x = p.to_log();
    let sv = singular_values(&sys.jacobian(&x));
    Ok(RankReport {
        singular_values: sv,
        numerical_rank: numerical_rank(&sv),
        gap: sys.gap(),
        residual_floor: residual_floor(sys.gap()),
        euler_gap: euler_gap(m, p),
        residuals: Residuals::from_array(sys.residuals(&x)),
    })
}

pub fn residual_floor(gap: f64) -> f64 {
    gap.abs() / 3f64.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{bundled, growth_series};
    use crate::model::{Eq3Variant, LnExMode};
    use crate::moments::{estimate_moments, VarianceConvention};
    use approx::assert_relative_eq;

    fn bundled_moments() -> MomentSet {
        estimate_moments(&growth_series(&bundled()), VarianceConvention::Sample).unwrap()
    }

    /// Moments (and an equity SFOM) for which `(beta, omega, delta, tau)`
    /// solves all four equations exactly. Only `beta`, `omega` and `tau` are
    /// taken from `base`; `delta` is whatever zeroes `r3`.
    fn consistent_case(base: &ModelParams, eq3: Eq3Variant) -> (MomentSet, ModelParams) {
        let mut m = bundled_moments();
        let [b, w, _, tau] = base.to_log();
        let (mu, s2) = (m.mu_x, m.sigma2_x);
        let k = tau * m.rho * m.sigma_x() * m.sigma_r();
        let f = -b - w + tau * mu - 0.5 * tau * tau * s2;
        // with r4 = 0 substituted, r3 = f*(c3 - 1) - tau*s2 + k*(b + w + d)
        let c3 = match eq3 {
            Eq3Variant::Printed => 1.0 - k,
            Eq3Variant::Rederived => 1.0 + k,
        };
        let d = (tau * s2 - f * (c3 - 1.0)) / k - b - w;
        let rm = f + w - d + tau * s2;
        let x = rm + b + d + (1.0 - tau) * mu + 0.5 * (1.0 - tau).powi(2) * s2;
        m.mean_rf = f.exp();
        m.mean_re = rm.exp();
        m.mean_x = x.exp();
        (m, ModelParams::from_log([b, w, d, tau]))
    }

    #[test]
    fn exact_root_converges_immediately() {
        let base = ModelParams::new(0.97, 1.02, 1.0, 2.5).unwrap();
        for eq3 in [Eq3Variant::Printed, Eq3Variant::Rederived] {
            let (m, target) = consistent_case(&base, eq3);
            let cfg = SolverConfig {
                initial: target,
                options: ModelOptions {
                    eq3,
                    lnex: LnExMode::Arithmetic,
                },
                ..Default::default()
            };
            let sol = solve(&m, &cfg).unwrap();
            assert!(sol.residuals.norm <= 1e-12, "{:?}", sol.residuals);
            assert_eq!(sol.converged, ConvergenceReason::Residual);
            assert_eq!(sol.iterations, 0);
            assert!(sol.gap.abs() < 1e-14);
        }
    }

    #[test]
    fn consistent_system_reaches_zero_from_far() {
        let base = ModelParams::new(0.97, 1.02, 1.0, 2.5).unwrap();
        let (m, _) = consistent_case(&base, Eq3Variant::Printed);
        let sol = solve(&m, &SolverConfig::default()).unwrap();
        assert!(sol.residuals.norm <= 1e-10, "{:?}", sol);
    }

    #[test]
    fn bundled_solve_hits_floor() {
        let m = bundled_moments();
        let sol = solve(&m, &SolverConfig::default()).unwrap();
        let floor = residual_floor(sol.gap);
        assert_relative_eq!(sol.residuals.norm, floor, max_relative = 1e-6);
        assert!(sol.residuals.r3.abs() < 1e-8);
        assert!((sol.residuals.r2 - sol.gap / 3.0).abs() < 1e-8);
        assert!((sol.residuals.r4 - sol.gap / 3.0).abs() < 1e-8);
        assert!(sol.numerical_rank <= 3);
        assert_ne!(sol.converged, ConvergenceReason::MaxIterations);
    }

    #[test]
    fn accepted_norms_never_increase() {
        let m = bundled_moments();
        let starts = [
            ModelParams::CANONICAL_START,
            ModelParams::new(0.8, 1.3, 0.7, 8.0).unwrap(),
            ModelParams::new(1.1, 0.8, 1.2, -1.0).unwrap(),
        ];
        for start in starts {
            let sol = solve(
                &m,
                &SolverConfig {
                    initial: start,
                    ..Default::default()
                },
            )
            .unwrap();
            for w in sol.norm_history.windows(2) {
                assert!(w[1] <= w[0], "{:?}", sol.norm_history);
            }
        }
    }

    #[test]
    fn deterministic() {
        let m = bundled_moments();
        let a = solve(&m, &SolverConfig::default()).unwrap();
        let b = solve(&m, &SolverConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_config_rejected() {
        let m = bundled_moments();
        let cfg = SolverConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(solve(&m, &cfg).is_err());
        let cfg = SolverConfig {
            step_tolerance: -1.0,
            ..Default::default()
        };
        assert!(solve(&m, &cfg).is_err());
    }

    #[test]
    fn non_finite_moments_fail_as_solver_error() {
        let mut m = bundled_moments();
        m.mu_x = f64::INFINITY;
        let err = solve(&m, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, SfmError::Solver { .. }), "{err:?}");
        assert!(!err.is_data_error());
    }

    #[test]
    fn manifold_zeroes_three_equations() {
        let m = bundled_moments();
        let grid = tau_grid(0.5, 5.0, 450).unwrap();
        assert_eq!(grid.len(), 451);
        let curve = trace_manifold(&m, &grid, ModelOptions::default()).unwrap();
        let gap = crate::moments::lognormality_gap(&m);
        for p in &curve {
            let scale = 1.0
                + p.params()
                    .to_log()
                    .iter()
                    .map(|v| v.abs())
                    .fold(0.0, f64::max);
            assert!(p.residuals.r2.abs() <= 1e-10 * scale);
            assert!(p.residuals.r3.abs() <= 1e-10 * scale);
            assert!(p.residuals.r4.abs() <= 1e-10 * scale);
            assert!((p.residuals.r5 + gap).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn manifold_is_continuous() {
        let m = bundled_moments();
        let grid = tau_grid(0.5, 5.0, 450).unwrap();
        let curve = trace_manifold(&m, &grid, ModelOptions::default()).unwrap();
        let logs: Vec<[f64; 4]> = curve.iter().map(|p| p.params().to_log()).collect();
        for (i, w) in logs.windows(3).enumerate() {
            for ((a, b), c) in w[0].iter().zip(&w[1]).zip(&w[2]).take(3) {
                let left = (b - a).abs();
                let right = (c - b).abs();
                assert!(
                    right <= 10.0 * left.max(1e-12),
                    "jump at tau = {}",
                    curve[i + 1].tau
                );
            }
        }
    }

    #[test]
    fn manifold_consistent_case_is_exact() {
        let mut m = bundled_moments();
        m.mean_x = (m.mu_x + 0.5 * m.sigma2_x).exp();
        let grid = tau_grid(0.5, 5.0, 90).unwrap();
        for p in trace_manifold(&m, &grid, ModelOptions::default()).unwrap() {
            assert!(p.residuals.norm <= 1e-10, "{:?}", p);
        }
    }

    #[test]
    fn manifold_singular_when_uncorrelated() {
        let mut m = bundled_moments();
        m.rho = 0.0;
        let err = trace_manifold(&m, &[1.0, 2.0], ModelOptions::default()).unwrap_err();
        assert!(matches!(err, SfmError::SingularSubsystem { tau, .. } if tau == 1.0));
        let m = bundled_moments();
        let err = trace_manifold(&m, &[-1.0, 0.0, 1.0], ModelOptions::default()).unwrap_err();
        assert!(matches!(err, SfmError::SingularSubsystem { tau, .. } if tau == 0.0));
    }

    #[test]
    fn grid_validation() {
        assert!(tau_grid(1.0, 1.0, 10).is_err());
        assert!(tau_grid(1.0, 2.0, 0).is_err());
        let m = bundled_moments();
        assert!(trace_manifold(&m, &[2.0, 1.0], ModelOptions::default()).is_err());
    }

    #[test]
    fn distance_to_curve_points() {
        let m = bundled_moments();
        let curve = trace_manifold(
            &m,
            &tau_grid(1.0, 3.0, 20).unwrap(),
            ModelOptions::default(),
        )
        .unwrap();
        // a vertex and a segment midpoint are both on the polyline
        assert!(manifold_distance(&curve, &curve[7].params()).unwrap() < 1e-12);
        let mid = ModelParams::from_log({
            let (a, b) = (curve[3].params().to_log(), curve[4].params().to_log());
            [
                0.5 * (a[0] + b[0]),
                0.5 * (a[1] + b[1]),
                0.5 * (a[2] + b[2]),
                0.5 * (a[3] + b[3]),
            ]
        });
        assert!(manifold_distance(&curve, &mid).unwrap() < 1e-12);
        assert!(manifold_distance(&[], &mid).is_none());
    }

    #[test]
    fn rank_report() {
        let m = bundled_moments();
        let p = ModelParams::new(0.9581, 1.0657, 1.0013, 1.0319).unwrap();
        let rep = rank_diagnostics(&m, &p, ModelOptions::default()).unwrap();
        assert!(rep.numerical_rank <= 3);
        assert!(rep.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(rep.singular_values.iter().all(|s| *s >= 0.0));
        assert_relative_eq!(
            rep.residual_floor,
            8.290232199365411e-06 / 3f64.sqrt(),
            max_relative = 1e-8
        );
        assert_relative_eq!(rep.euler_gap, 0.005447628506271776, max_relative = 1e-10);

        let lognormal = ModelOptions {
            lnex: LnExMode::LognormalImplied,
            ..Default::default()
        };
        let rep = rank_diagnostics(&m, &p, lognormal).unwrap();
        assert!(rep.residual_floor < 1e-15);
    }
}
