//! Maximal-interval solver: certified windows, shifted-forcing restarts,
//! gluing, and blow-up classification.
//!
//! After solving a window ending at time `tau` with value `x_tau`, the
//! equation restarts with the forcing `t -> Ext_t(x_tau - o_tau) + o_{tau+t}`
//! over the remaining horizon; the new local solution glues continuously onto
//! the old one and the glued path solves the original equation. The solver
//! repeats this until it reaches the horizon, or until either the state norm
//! exceeds the blow-up threshold or the certified windows collapse below
//! `tau_min`. A collapse with monotone norm growth over the trailing windows
//! is classified as blow-up (bounded orbits are always continuable, so
//! failure to continue with growing norms is evidence of divergence);
//! a collapse with flat norms is reported as a stall.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::nonlinear::Nonlinearity;
use crate::picard::{
    certified_window, solve_local, PicardStart, SolveTolerances, WindowCertificate,
};
use crate::space::{uniform_grid, StateVector, Trajectory};
use crate::verify::{PerturbationCertificate, UniquenessCheck};
use crate::volterra::{defect, QuadratureSpec};

pub const SCHEMA_VERSION: u32 = 1;

/// Solver knobs with their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    /// Nodes per window grid.
    pub grid_n: usize,
    /// Picard convergence tolerance (scaled by `1 + R` per window).
    pub tol: f64,
    pub max_iter: usize,
    /// Certified contraction factor per window.
    pub contraction_target: f64,
    pub blowup_threshold: f64,
    /// Smallest window before the run stops; `None` means `1e-10 * T`.
    pub tau_min: Option<f64>,
    pub glue_tol: f64,
    /// Quadrature slack on measured contraction ratios.
    pub slack: f64,
    /// Sup-norm headroom over the certified ball.
    pub tol_ball: f64,
    /// Trailing windows consulted by the growth/blow-up classifier.
    pub growth_windows: usize,
    /// Probe density multiplier for sampled suprema.
    pub probe_factor: usize,
    /// Optional cap on window length (used to force window splits).
    pub max_window: Option<f64>,
    /// Budget for the global mild-equation defect on bounded runs.
    pub defect_budget: f64,
    /// Sample count for the per-window Lipschitz audit.
    pub audit_samples: usize,
    /// Mesh for kernel bound estimation.
    pub bound_mesh: usize,
    /// Seed for the randomized audits.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> SolverOptions {
        SolverOptions {
            grid_n: 64,
            tol: 1e-8,
            max_iter: 200,
            contraction_target: 0.5,
            blowup_threshold: 1e8,
            tau_min: None,
            glue_tol: 1e-7,
            slack: 0.1,
            tol_ball: 1e-6,
            growth_windows: 5,
            probe_factor: 4,
            max_window: None,
            defect_budget: 1e-3,
            audit_samples: 512,
            bound_mesh: 64,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.grid_n < 2 {
            return Err(Error::validation("solver.grid_n", "must be >= 2"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::validation("solver.tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::validation("solver.max_iter", "must be >= 1"));
        }
        if !(self.contraction_target > 0.0 && self.contraction_target < 1.0) {
            return Err(Error::validation("solver.contraction_target", "must lie in (0, 1)"));
        }
        if !(self.blowup_threshold > 0.0) {
            return Err(Error::validation("solver.blowup_threshold", "must be positive"));
        }
        if let Some(tau_min) = self.tau_min {
            if !(tau_min > 0.0) {
                return Err(Error::validation("solver.tau_min", "must be positive"));
            }
        }
        if !(self.glue_tol > 0.0) {
            return Err(Error::validation("solver.glue_tol", "must be positive"));
        }
        if self.growth_windows < 2 {
            return Err(Error::validation("solver.growth_windows", "must be >= 2"));
        }
        if self.probe_factor == 0 {
            return Err(Error::validation("solver.probe_factor", "must be >= 1"));
        }
        if self.bound_mesh < 2 {
            return Err(Error::validation("solver.bound_mesh", "must be >= 2"));
        }
        Ok(())
    }

    pub fn tau_min_for(&self, horizon: f64) -> f64 {
        self.tau_min.unwrap_or(1e-10 * horizon)
    }
}

/// Why the window loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    ReachedHorizon,
    NormThreshold { norm: f64 },
    WindowCollapse { tau: f64 },
}

/// Final classification of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    ReachedT,
    BlowUp { t_estimate: f64, norm_at_stop: f64 },
    Stalled { min_window_hit: f64 },
}

/// One `(s, 1/(T-s) + ||x_s||)` sample of the blow-up criterion functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionSample {
    pub s: f64,
    pub value: f64,
}

/// Per-window ledger entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowRecord {
    pub certificate: WindowCertificate,
    pub iterations: usize,
    pub final_update_norm: f64,
    /// Effective (scale-adjusted) tolerance the window was solved to.
    pub tol_effective: f64,
    pub defect: f64,
    pub contraction_ratios: Vec<f64>,
    pub max_iterate_norm: f64,
}

/// Threshold echo so a report alone determines its classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdEcho {
    pub blowup_threshold: f64,
    pub tau_min: f64,
    pub growth_windows: usize,
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveReport {
    pub schema_version: u32,
    pub problem_id: String,
    pub outcome: Outcome,
    pub rationale: String,
    pub stop: StopReason,
    pub t_end: f64,
    pub horizon: f64,
    pub thresholds: ThresholdEcho,
    pub windows: Vec<WindowRecord>,
    pub blowup_criterion_trace: Vec<CriterionSample>,
    /// Residual of the glued path in the original equation; computed for
    /// bounded runs, meaningless (and omitted) after norm blow-up.
    pub global_defect: Option<f64>,
    pub warnings: Vec<String>,
    pub uniqueness_checks: Option<Vec<UniquenessCheck>>,
    pub perturbation_certificates: Option<Vec<PerturbationCertificate>>,
    pub global_trajectory: Trajectory,
}

impl SolveReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Parse a report, rejecting unknown fields.
    pub fn from_json(s: &str) -> Result<SolveReport> {
        serde_json::from_str(s).map_err(|e| Error::Parse(format!("report: {e}")))
    }
}

/// A solver error together with whatever was computed before it.
#[derive(Debug)]
pub struct Aborted {
    pub error: Error,
    pub partial: Option<SolveReport>,
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "solve aborted: {}", self.error)
    }
}

impl std::error::Error for Aborted {}

/// Forcing for the restarted equation at time `tau`:
/// `t -> Ext_t(x_tau - o_tau) + o_{tau + t}` on `[0, horizon]`.
pub fn shifted_forcing(
    k: &Kernel,
    x_tau: &StateVector,
    o: &Trajectory,
    tau: f64,
    horizon: f64,
    grid_n: usize,
) -> Result<Trajectory> {
    if !(horizon > 0.0) {
        return Err(Error::domain("shifted_forcing needs a positive horizon"));
    }
    let tol = 1e-9 * (1.0 + o.t1().abs());
    if tau + horizon > o.t1() + tol {
        return Err(Error::contract(
            "shifted_forcing: tau + horizon exceeds the forcing interval",
        ));
    }
    let delta = x_tau.sub(&o.eval(tau)?);
    let grid = uniform_grid(0.0, horizon, grid_n.max(2));
    Trajectory::from_fn(grid, o.space(), |t| {
        let drift = k.apply_extended(t.min(k.horizon()), &delta)?;
        Ok(drift.add(&o.eval((tau + t).min(o.t1()))?))
    })
}

/// Concatenate `x` on `[a, b]` with a window solution `y` on `[0, eps]`,
/// producing a path on `[a, b + eps]`. The junction must match within
/// `glue_tol`; the restart construction makes it exact, so a mismatch
/// signals an inconsistent window solve.
pub fn glue(x: &Trajectory, y: &Trajectory, glue_tol: f64) -> Result<Trajectory> {
    if x.space() != y.space() {
        return Err(Error::contract("glue: trajectories in different spaces"));
    }
    let tol = 1e-9 * (1.0 + y.t1().abs());
    if y.t0().abs() > tol {
        return Err(Error::contract("glue: window trajectory must start at t = 0"));
    }
    let junction = x.t1();
    let mismatch = y.value(0).sub(x.value(x.len() - 1)).norm();
    if mismatch > glue_tol {
        return Err(Error::Glue {
            mismatch,
            glue_tol,
            at: junction,
        });
    }
    let mut grid = x.grid().to_vec();
    let mut values = x.values().to_vec();
    for (i, &t) in y.grid().iter().enumerate().skip(1) {
        grid.push(junction + t);
        values.push(y.value(i).clone());
    }
    Trajectory::new(grid, values)
}

struct LoopState {
    windows: Vec<WindowRecord>,
    trace: Vec<CriterionSample>,
    warnings: Vec<String>,
    global: Trajectory,
}

impl LoopState {
    fn partial_report(
        self,
        problem_id: &str,
        horizon: f64,
        opts: &SolverOptions,
    ) -> Option<SolveReport> {
        let t_end = self.global.t1();
        let mut report = SolveReport {
            schema_version: SCHEMA_VERSION,
            problem_id: problem_id.to_string(),
            outcome: Outcome::Stalled { min_window_hit: 0.0 },
            rationale: String::new(),
            stop: StopReason::WindowCollapse { tau: 0.0 },
            t_end,
            horizon,
            thresholds: ThresholdEcho {
                blowup_threshold: opts.blowup_threshold,
                tau_min: opts.tau_min_for(horizon),
                growth_windows: opts.growth_windows,
            },
            windows: self.windows,
            blowup_criterion_trace: self.trace,
            global_defect: None,
            warnings: self.warnings,
            uniqueness_checks: None,
            perturbation_certificates: None,
            global_trajectory: self.global,
        };
        let (outcome, rationale) = classify_outcome(&report);
        report.outcome = outcome;
        report.rationale = rationale;
        Some(report)
    }
}

/// Solve up to the maximal interval.
///
/// The forcing `o` must span `[0, T]` with `T` the kernel horizon. The first
/// window uses `o` itself (the restart formula degenerates to it because
/// `x_0 = o_0`); every subsequent window restarts from the glued endpoint.
pub fn solve_maximal(
    k: &Kernel,
    f: &Nonlinearity,
    o: &Trajectory,
    problem_id: &str,
    opts: &SolverOptions,
    q: &QuadratureSpec,
) -> std::result::Result<SolveReport, Aborted> {
    let abort_plain = |error: Error| Aborted { error, partial: None };
    opts.validate().map_err(abort_plain)?;
    q.validate().map_err(abort_plain)?;
    let horizon = k.horizon();
    let tol_t = 1e-9 * (1.0 + horizon);
    if o.t0().abs() > tol_t || o.t1() < horizon - tol_t {
        return Err(abort_plain(Error::contract(format!(
            "forcing must span [0, {horizon}], got [{}, {}]",
            o.t0(),
            o.t1()
        ))));
    }
    if o.space() != k.v_space() {
        return Err(abort_plain(Error::contract("forcing must take values in V")));
    }
    let m_alpha = k.singularity_bound(opts.bound_mesh).map_err(abort_plain)?;
    if !m_alpha.is_finite() {
        return Err(abort_plain(Error::UnsoundConfig(
            "sup t^alpha ||S_t|| is infinite for this kernel and alpha; \
             no certified window exists"
                .into(),
        )));
    }
    let f0 = f.f0_norm().map_err(abort_plain)?;
    let alpha = k.alpha();
    let tau_min = opts.tau_min_for(horizon);
    let tols = SolveTolerances {
        tol_ball: opts.tol_ball,
        slack: opts.slack,
    };

    let mut x_cursor = o.eval(0.0).map_err(abort_plain)?;
    // seed with the single point x(0) = o(0); windows glue onto it uniformly
    let seed_traj =
        Trajectory::new(vec![0.0], vec![x_cursor.clone()]).map_err(abort_plain)?;
    let mut st = LoopState {
        windows: Vec::new(),
        trace: Vec::new(),
        warnings: Vec::new(),
        global: seed_traj,
    };
    st.trace.push(CriterionSample {
        s: 0.0,
        value: 1.0 / horizon + x_cursor.norm(),
    });
    let mut t_cursor = 0.0f64;

    macro_rules! abort_with_partial {
        ($err:expr, $st:expr) => {
            return Err(Aborted {
                error: $err,
                partial: $st.partial_report(problem_id, horizon, opts),
            })
        };
    }

    let stop = loop {
        let remaining = horizon - t_cursor;
        if remaining <= tol_t {
            break StopReason::ReachedHorizon;
        }
        let window_idx = st.windows.len();

        // restart data and forcing sup over the remaining horizon
        let delta = match o.eval(t_cursor) {
            Ok(o_cur) => x_cursor.sub(&o_cur),
            Err(e) => abort_with_partial!(e, st),
        };
        let r_forcing = match forcing_sup(k, &delta, o, t_cursor, remaining, opts) {
            Ok(r) => r,
            Err(e) => abort_with_partial!(e, st),
        };
        let radius = 2.0 * r_forcing + 2.0;
        let psi = f.lipschitz_modulus(radius);
        match f.audit_psi(radius, opts.audit_samples, opts.seed.wrapping_add(window_idx as u64)) {
            Ok(audit) => {
                if audit.violated {
                    abort_with_partial!(
                        Error::Audit(format!(
                            "Lipschitz modulus violated at radius {radius}: observed ratio {} \
                             exceeds Psi = {psi}; certified windows would be unsound",
                            audit.max_observed_ratio
                        )),
                        st
                    );
                }
            }
            Err(e) => abort_with_partial!(e, st),
        }
        let mut tau = match certified_window(
            r_forcing,
            alpha,
            m_alpha,
            psi,
            f0,
            remaining,
            opts.contraction_target,
        ) {
            Ok(t) => t,
            Err(e) => abort_with_partial!(e, st),
        };
        if let Some(cap) = opts.max_window {
            tau = tau.min(cap);
        }
        if tau < tau_min {
            break StopReason::WindowCollapse { tau };
        }
        if window_idx == 1 && !k.has_exact_splitting() {
            st.warnings.push(
                "kernel has no exact semigroup splitting (singular_scaled); \
                 multi-window continuation is only approximate"
                    .to_string(),
            );
        }

        let grid = uniform_grid(0.0, tau, opts.grid_n);
        let o_local = match Trajectory::from_fn(grid, o.space(), |t| {
            let drift = k.apply_extended(t.min(horizon), &delta)?;
            Ok(drift.add(&o.eval((t_cursor + t).min(o.t1()))?))
        }) {
            Ok(tr) => tr,
            Err(e) => abort_with_partial!(e, st),
        };
        let cert = match WindowCertificate::new(t_cursor, tau, r_forcing, m_alpha, alpha, psi, f0) {
            Ok(c) => c,
            Err(e) => abort_with_partial!(e, st),
        };
        // absolute tolerances below the fp noise floor of large orbits are
        // unreachable; scale per window by the forcing magnitude
        let tol_effective = opts.tol * (1.0 + r_forcing);
        let res = match solve_local(
            k,
            f,
            &o_local,
            &cert,
            opts.grid_n,
            tol_effective,
            opts.max_iter,
            q,
            &tols,
            PicardStart::Forcing,
        ) {
            Ok(r) => r,
            Err(e) => abort_with_partial!(e, st),
        };
        st.windows.push(WindowRecord {
            certificate: cert,
            iterations: res.iterations,
            final_update_norm: res.final_update_norm,
            tol_effective,
            defect: res.defect,
            contraction_ratios: res.contraction_ratios.clone(),
            max_iterate_norm: res.max_iterate_norm,
        });
        let glued = match glue(&st.global, &res.trajectory, opts.glue_tol) {
            Ok(g) => g,
            Err(e) => abort_with_partial!(e, st),
        };
        x_cursor = glued.value(glued.len() - 1).clone();
        t_cursor = glued.t1();
        st.global = glued;

        let norm_end = x_cursor.norm();
        if horizon - t_cursor > tol_t {
            st.trace.push(CriterionSample {
                s: t_cursor,
                value: 1.0 / (horizon - t_cursor) + norm_end,
            });
        }
        if norm_end > opts.blowup_threshold {
            break StopReason::NormThreshold { norm: norm_end };
        }
    };

    let mut global = st.global;
    if matches!(stop, StopReason::ReachedHorizon) {
        global = snap_end(global, horizon).map_err(abort_plain)?;
    }
    let t_end = global.t1();
    let mut report = SolveReport {
        schema_version: SCHEMA_VERSION,
        problem_id: problem_id.to_string(),
        outcome: Outcome::Stalled { min_window_hit: 0.0 },
        rationale: String::new(),
        stop,
        t_end,
        horizon,
        thresholds: ThresholdEcho {
            blowup_threshold: opts.blowup_threshold,
            tau_min,
            growth_windows: opts.growth_windows,
        },
        windows: std::mem::take(&mut st.windows),
        blowup_criterion_trace: std::mem::take(&mut st.trace),
        global_defect: None,
        warnings: std::mem::take(&mut st.warnings),
        uniqueness_checks: None,
        perturbation_certificates: None,
        global_trajectory: global,
    };
    let (outcome, rationale) = classify_outcome(&report);
    report.outcome = outcome;
    report.rationale = rationale;
    if matches!(report.outcome, Outcome::ReachedT) {
        let norm_end = report
            .global_trajectory
            .value(report.global_trajectory.len() - 1)
            .norm();
        if norm_end > 0.5 * opts.blowup_threshold {
            report.warnings.push(format!(
                "reached the horizon with terminal norm {norm_end:e} above half the blow-up \
                 threshold; the classification rests on t_end = T alone"
            ));
        }
        let o_global = match o.resample(report.global_trajectory.grid().to_vec()) {
            Ok(tr) => tr,
            Err(e) => {
                return Err(Aborted {
                    error: e,
                    partial: Some(report),
                })
            }
        };
        match defect(&report.global_trajectory, k, f, &o_global, q) {
            Ok(d) => {
                if d > opts.defect_budget {
                    report.warnings.push(format!(
                        "global defect {d:e} exceeds the budget {:e}",
                        opts.defect_budget
                    ));
                }
                report.global_defect = Some(d);
            }
            Err(e) => {
                return Err(Aborted {
                    error: e,
                    partial: Some(report),
                })
            }
        }
    }
    Ok(report)
}

/// Sampled sup of the shifted forcing over the remaining horizon. The `o`
/// part is piecewise linear, so its own grid nodes are included to make that
/// contribution exact; the semigroup drift is continuous and probed densely.
fn forcing_sup(
    k: &Kernel,
    delta: &StateVector,
    o: &Trajectory,
    t_cursor: f64,
    remaining: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    let horizon = k.horizon();
    let probe_n = (opts.probe_factor * opts.grid_n).max(2);
    let mut best = 0.0f64;
    let mut visit = |t: f64| -> Result<()> {
        let drift = k.apply_extended(t.min(horizon), delta)?;
        let v = drift.add(&o.eval((t_cursor + t).min(o.t1()))?);
        let n = v.norm();
        if n > best {
            best = n;
        }
        Ok(())
    };
    let dt = remaining / (probe_n - 1) as f64;
    for i in 0..probe_n {
        visit((dt * i as f64).min(remaining))?;
    }
    for &g in o.grid() {
        if g > t_cursor && g <= t_cursor + remaining {
            visit(g - t_cursor)?;
        }
    }
    Ok(best)
}

fn snap_end(traj: Trajectory, horizon: f64) -> Result<Trajectory> {
    let last = traj.t1();
    if last == horizon {
        return Ok(traj);
    }
    let tol = 1e-9 * (1.0 + horizon);
    if (last - horizon).abs() > tol {
        return Ok(traj);
    }
    let mut grid = traj.grid().to_vec();
    let n = grid.len();
    if n < 2 || grid[n - 2] >= horizon {
        return Ok(traj);
    }
    grid[n - 1] = horizon;
    Trajectory::new(grid, traj.values().to_vec())
}

/// Deterministic mapping from a report's stop condition to its outcome, with
/// a human-readable rationale. For blow-ups the divergence time is estimated
/// by a least-squares fit of `1/||x_t||` (affine in `t` when
/// `||x_t|| ~ c/(t* - t)`) over the trailing window endpoints, and the
/// estimate is the midpoint of the last window start and the fitted root.
pub fn classify_outcome(report: &SolveReport) -> (Outcome, String) {
    let tol = 1e-9 * (1.0 + report.horizon);
    match report.stop {
        StopReason::ReachedHorizon => (
            Outcome::ReachedT,
            format!("solver reached the horizon T = {}", report.horizon),
        ),
        StopReason::NormThreshold { norm } => {
            let (t_est, detail) = blowup_estimate(report);
            (
                Outcome::BlowUp {
                    t_estimate: t_est,
                    norm_at_stop: norm,
                },
                format!(
                    "state norm {norm:e} exceeded the blow-up threshold {:e} at t = {}; {detail}",
                    report.thresholds.blowup_threshold, report.t_end
                ),
            )
        }
        StopReason::WindowCollapse { tau } => {
            if report.t_end >= report.horizon - tol {
                return (
                    Outcome::ReachedT,
                    format!("solver reached the horizon T = {}", report.horizon),
                );
            }
            if trailing_norms_increasing(report) {
                let norm = report
                    .global_trajectory
                    .value(report.global_trajectory.len() - 1)
                    .norm();
                let (t_est, detail) = blowup_estimate(report);
                (
                    Outcome::BlowUp {
                        t_estimate: t_est,
                        norm_at_stop: norm,
                    },
                    format!(
                        "certified windows collapsed to {tau:e} < tau_min = {:e} with \
                         monotone norm growth over the last {} windows; {detail}",
                        report.thresholds.tau_min, report.thresholds.growth_windows
                    ),
                )
            } else {
                (
                    Outcome::Stalled { min_window_hit: tau },
                    format!(
                        "certified windows collapsed to {tau:e} < tau_min = {:e} without \
                         norm growth; the forcing or kernel data look pathological",
                        report.thresholds.tau_min
                    ),
                )
            }
        }
    }
}

fn window_end_points(report: &SolveReport) -> Vec<(f64, f64)> {
    report
        .windows
        .iter()
        .filter_map(|w| {
            let t = w.certificate.t_start + w.certificate.tau;
            report
                .global_trajectory
                .eval(t.min(report.global_trajectory.t1()))
                .ok()
                .map(|v| (t, v.norm()))
        })
        .collect()
}

fn trailing_norms_increasing(report: &SolveReport) -> bool {
    let pts = window_end_points(report);
    let k = report.thresholds.growth_windows;
    if pts.len() < k {
        return false;
    }
    pts[pts.len() - k..].windows(2).all(|w| w[1].1 > w[0].1)
}

fn blowup_estimate(report: &SolveReport) -> (f64, String) {
    let t_end = report.t_end;
    let pts = window_end_points(report);
    let k = report.thresholds.growth_windows.max(2);
    let mut tail: Vec<(f64, f64)> = pts
        .iter()
        .rev()
        .take(k)
        .filter(|(_, n)| *n > 0.0)
        .map(|&(t, n)| (t, 1.0 / n))
        .collect();
    tail.reverse();
    let last_start = report
        .windows
        .last()
        .map(|w| w.certificate.t_start)
        .unwrap_or(t_end);
    let fitted = fit_root(&tail).unwrap_or(t_end);
    // blow-up cannot precede the last solved window, nor pass the horizon
    let t_star = fitted.clamp(t_end, report.horizon);
    let estimate = 0.5 * (last_start + t_star);
    (
        estimate,
        format!(
            "reciprocal-norm fit over {} window endpoints extrapolates divergence at t* = {t_star}",
            tail.len()
        ),
    )
}

/// Least-squares line through `(t, y)` points; returns the root `-b/a` when
/// the slope is negative (reciprocal norms must decay toward blow-up).
fn fit_root(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (st, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mt, my) = (st / n, sy / n);
    let mut cov = 0.0;
    let mut var = 0.0;
    for &(t, y) in pts {
        cov += (t - mt) * (y - my);
        var += (t - mt) * (t - mt);
    }
    if var == 0.0 {
        return None;
    }
    let a = cov / var;
    if a >= 0.0 {
        return None;
    }
    let b = my - a * mt;
    Some(-b / a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelKind;
    use crate::nonlinear::NonlinKind;
    use crate::space::{sup_distance, SpaceSpec};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn const_traj(space: &crate::space::Space, t1: f64, c: f64) -> Trajectory {
        let v = StateVector::new(vec![c], Arc::clone(space)).unwrap();
        Trajectory::constant(0.0, t1, &v).unwrap()
    }

    fn identity_kernel(horizon: f64, alpha: f64) -> Kernel {
        Kernel::new(
            KernelKind::Identity,
            horizon,
            alpha,
            0.5,
            SpaceSpec::sup(1),
            SpaceSpec::sup(1),
        )
        .unwrap()
    }

    #[test]
    fn shifted_forcing_starts_at_the_junction_value() {
        let k = Kernel::new(
            KernelKind::ScalarExp { lambda: -1.0 },
            2.0,
            0.5,
            0.5,
            SpaceSpec::sup(1),
            SpaceSpec::sup(1),
        )
        .unwrap();
        let o = const_traj(k.v_space(), 2.0, 0.25);
        let x_tau = StateVector::new(vec![2.0], Arc::clone(k.v_space())).unwrap();
        let sf = shifted_forcing(&k, &x_tau, &o, 0.5, 1.0, 33).unwrap();
        assert_relative_eq!(sf.value(0).coords()[0], 2.0, max_relative = 1e-15);
        // t = 1: e^{-1} (2 - 0.25) + 0.25
        assert_relative_eq!(
            sf.eval(1.0).unwrap().coords()[0],
            (-1.0f64).exp() * 1.75 + 0.25,
            max_relative = 1e-14
        );
    }

    #[test]
    fn shifted_forcing_degenerates_when_state_matches_forcing() {
        let k = identity_kernel(2.0, 0.5);
        let o = const_traj(k.v_space(), 2.0, 0.25);
        let x_tau = o.eval(0.5).unwrap();
        let sf = shifted_forcing(&k, &x_tau, &o, 0.5, 1.0, 9).unwrap();
        for v in sf.values() {
            assert_relative_eq!(v.coords()[0], 0.25, max_relative = 1e-15);
        }
    }

    #[test]
    fn glue_affine_paths() {
        let s = SpaceSpec::sup(1);
        let mk = |grid: Vec<f64>, vals: Vec<f64>| {
            Trajectory::new(
                grid,
                vals.into_iter()
                    .map(|v| StateVector::new(vec![v], Arc::clone(&s)).unwrap())
                    .collect(),
            )
            .unwrap()
        };
        // x(t) = t on [0,1], y(t) = 1 + t on [0,1]: glued path is t on [0,2]
        let x = mk(vec![0.0, 0.5, 1.0], vec![0.0, 0.5, 1.0]);
        let y = mk(vec![0.0, 1.0], vec![1.0, 2.0]);
        let u = glue(&x, &y, 1e-12).unwrap();
        assert_eq!(u.t1(), 2.0);
        assert_relative_eq!(u.eval(1.7).unwrap().coords()[0], 1.7, max_relative = 1e-14);
        // constant paths glue to a constant
        let cx = mk(vec![0.0, 1.0], vec![4.0, 4.0]);
        let cy = mk(vec![0.0, 0.5], vec![4.0, 4.0]);
        let cu = glue(&cx, &cy, 1e-12).unwrap();
        assert!(cu.values().iter().all(|v| v.coords()[0] == 4.0));
        // junction mismatch beyond tolerance is an error
        let bad = mk(vec![0.0, 1.0], vec![1.0 + 1e-5, 2.0]);
        match glue(&x, &bad, 1e-6) {
            Err(Error::Glue { .. }) => {}
            other => panic!("expected glue error, got {other:?}"),
        }
    }

    #[test]
    fn zero_nonlinearity_reaches_horizon_with_forcing_as_solution() {
        let k = identity_kernel(1.0, 0.5);
        let f = Nonlinearity::new(
            NonlinKind::Linear { matrix: DMatrix::zeros(1, 1) },
            Arc::clone(k.v_space()),
            Arc::clone(k.w_space()),
        )
        .unwrap();
        let o = const_traj(k.v_space(), 1.0, 3.0);
        let report = solve_maximal(
            &k,
            &f,
            &o,
            "free",
            &SolverOptions::default(),
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert!(matches!(report.outcome, Outcome::ReachedT));
        assert_eq!(report.t_end, 1.0);
        assert!(report.global_defect.unwrap() < 1e-12);
        for v in report.global_trajectory.values() {
            assert_relative_eq!(v.coords()[0], 3.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn linear_growth_matches_exponential_oracle() {
        let k = identity_kernel(1.0, 0.1);
        let f = Nonlinearity::new(
            NonlinKind::Linear { matrix: DMatrix::identity(1, 1) },
            Arc::clone(k.v_space()),
            Arc::clone(k.w_space()),
        )
        .unwrap();
        let o = const_traj(k.v_space(), 1.0, 1.0);
        let opts = SolverOptions {
            grid_n: 129,
            tol: 1e-10,
            ..SolverOptions::default()
        };
        let report = solve_maximal(&k, &f, &o, "exp", &opts, &QuadratureSpec::default()).unwrap();
        assert!(matches!(report.outcome, Outcome::ReachedT));
        assert!(report.windows.len() > 1, "should take several certified windows");
        for &t in &[0.0, 0.3, 0.77, 1.0] {
            let got = report.global_trajectory.eval(t).unwrap().coords()[0];
            assert_relative_eq!(got, t.exp(), max_relative = 1e-5);
        }
        // window tiling: each start is the previous end
        let mut expect = 0.0;
        for w in &report.windows {
            assert_relative_eq!(w.certificate.t_start, expect, epsilon = 1e-12);
            expect = w.certificate.t_start + w.certificate.tau;
        }
        assert_relative_eq!(expect, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn riccati_blows_up_near_one() {
        let k = identity_kernel(2.0, 0.1);
        let f = Nonlinearity::new(
            NonlinKind::QuadraticRiccati,
            Arc::clone(k.v_space()),
            Arc::clone(k.w_space()),
        )
        .unwrap();
        let o = const_traj(k.v_space(), 2.0, 1.0);
        let opts = SolverOptions {
            glue_tol: 1e-6,
            ..SolverOptions::default()
        };
        let report = solve_maximal(&k, &f, &o, "riccati", &opts, &QuadratureSpec::default()).unwrap();
        match report.outcome {
            Outcome::BlowUp { t_estimate, norm_at_stop } => {
                assert!(
                    (t_estimate - 1.0).abs() <= 0.05,
                    "estimate {t_estimate} should be within 5% of 1"
                );
                assert!(norm_at_stop > 1e7);
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
        // criterion functional increases over the last five recorded windows
        let tail = &report.blowup_criterion_trace[report.blowup_criterion_trace.len() - 5..];
        assert!(tail.windows(2).all(|w| w[1].value > w[0].value));
        // exact solution is 1 / (1 - t) while it stays moderate
        for &t in &[0.2, 0.5, 0.8] {
            let got = report.global_trajectory.eval(t).unwrap().coords()[0];
            assert_relative_eq!(got, 1.0 / (1.0 - t), max_relative = 1e-4);
        }
    }

    #[test]
    fn forced_split_agrees_with_single_window_solve() {
        let k = identity_kernel(0.25, 0.1);
        let f = Nonlinearity::new(
            NonlinKind::Linear { matrix: DMatrix::identity(1, 1) },
            Arc::clone(k.v_space()),
            Arc::clone(k.w_space()),
        )
        .unwrap();
        let o = const_traj(k.v_space(), 0.25, 1.0);
        let opts = SolverOptions {
            grid_n: 129,
            tol: 1e-11,
            ..SolverOptions::default()
        };
        let whole = solve_maximal(&k, &f, &o, "whole", &opts, &QuadratureSpec::default()).unwrap();
        assert_eq!(whole.windows.len(), 1);
        let split_opts = SolverOptions {
            max_window: Some(0.125),
            ..opts
        };
        let split =
            solve_maximal(&k, &f, &o, "split", &split_opts, &QuadratureSpec::default()).unwrap();
        assert_eq!(split.windows.len(), 2);
        let probe = whole.global_trajectory.len().max(split.global_trajectory.len());
        let d = sup_distance(&whole.global_trajectory, &split.global_trajectory, probe).unwrap();
        assert!(d <= 10.0 * 1e-11 + 1e-9, "split vs whole distance {d}");
        // junction continuity at the forced split
        let junction = split.windows[0].certificate.tau;
        let before = split.global_trajectory.eval(junction - 1e-12).unwrap();
        let after = split.global_trajectory.eval(junction + 1e-12).unwrap();
        assert!(before.sub(&after).norm() <= opts.glue_tol);
    }

    #[test]
    fn stalled_when_windows_collapse_without_growth() {
        let k = identity_kernel(1.0, 0.5);
        let f = Nonlinearity::new(
            NonlinKind::Linear { matrix: DMatrix::identity(1, 1) },
            Arc::clone(k.v_space()),
            Arc::clone(k.w_space()),
        )
        .unwrap();
        let o = const_traj(k.v_space(), 1.0, 1.0);
        // demand windows no smaller than 0.9: the certified window is far below
        let opts = SolverOptions {
            tau_min: Some(0.9),
            ..SolverOptions::default()
        };
        let report =
            solve_maximal(&k, &f, &o, "stall", &opts, &QuadratureSpec::default()).unwrap();
        match report.outcome {
            Outcome::Stalled { min_window_hit } => {
                assert!(min_window_hit > 0.0 && min_window_hit < 0.9);
            }
            other => panic!("expected stall, got {other:?}"),
        }
        assert_eq!(report.t_end, 0.0);
        assert!(report.windows.is_empty());
    }

    #[test]
    fn report_round_trips_and_rejects_unknown_fields() {
        let k = identity_kernel(1.0, 0.5);
        let f = Nonlinearity::new(
            NonlinKind::Linear { matrix: DMatrix::zeros(1, 1) },
            Arc::clone(k.v_space()),
            Arc::clone(k.w_space()),
        )
        .unwrap();
        let o = const_traj(k.v_space(), 1.0, 1.0);
        let report = solve_maximal(
            &k,
            &f,
            &o,
            "rt",
            &SolverOptions::default(),
            &QuadratureSpec::default(),
        )
        .unwrap();
        let json = report.to_json();
        let back = SolveReport::from_json(&json).unwrap();
        assert_eq!(report, back);
        let with_extra = json.replacen('{', "{\n  \"surprise\": 1,", 1);
        assert!(SolveReport::from_json(&with_extra).is_err());
        // classification is recomputable from the report alone
        let (outcome, _) = classify_outcome(&back);
        assert_eq!(outcome, back.outcome);
    }
}
