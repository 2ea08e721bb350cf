//! Certified local existence: contraction windows and the Picard solver.
//!
//! A window length `tau` is certified when two closed-form conditions hold
//! for the data `(R, alpha, M_alpha, Psi(2R+2), ||F(0)||)`:
//!
//! * contraction: `(tau^{1-alpha} / (1-alpha)) M_alpha Psi(2R+2) <= theta`
//!   (default `theta = 1/2`), which makes the Picard map a `theta`-contraction
//!   on the sup-ball of radius `R + 1`;
//! * ball invariance:
//!   `(tau^{1-alpha} / (1-alpha)) M_alpha (Psi(2R+2)(R+1) + ||F(0)||) <= 1`,
//!   which keeps iterates inside that ball.
//!
//! Inverting both for `tau` gives the window; iteration from the forcing then
//! converges geometrically, and any measured escape from the certificate
//! (ratios beyond the bound plus slack, iterates outside the ball) is an
//! error, not a silent acceptance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::nonlinear::Nonlinearity;
use crate::space::{sup_distance, uniform_grid, Trajectory};
use crate::volterra::{convolution_path, defect, QuadratureSpec};

/// Analytic data certifying one contraction window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowCertificate {
    /// Global time at which the window starts.
    pub t_start: f64,
    /// Window length.
    pub tau: f64,
    /// Sup-norm of the window's (shifted) forcing over the remaining horizon.
    pub r_forcing: f64,
    /// `sup_t t^alpha ||S_t||` over the full horizon.
    pub m_alpha: f64,
    pub alpha: f64,
    /// Lipschitz modulus at radius `2 R + 2`.
    pub psi_2r2: f64,
    /// `||F(0)||`.
    pub f0_norm: f64,
    /// `(tau^{1-alpha}/(1-alpha)) * M_alpha * Psi(2R+2)`; at most the
    /// contraction target by construction.
    pub contraction_factor_bound: f64,
}

impl WindowCertificate {
    pub fn new(
        t_start: f64,
        tau: f64,
        r_forcing: f64,
        m_alpha: f64,
        alpha: f64,
        psi_2r2: f64,
        f0_norm: f64,
    ) -> Result<WindowCertificate> {
        let gain = tau.powf(1.0 - alpha) / (1.0 - alpha) * m_alpha;
        let cert = WindowCertificate {
            t_start,
            tau,
            r_forcing,
            m_alpha,
            alpha,
            psi_2r2,
            f0_norm,
            contraction_factor_bound: gain * psi_2r2,
        };
        // fp headroom only; violations mean the window math is wrong
        let slack = 1e-9;
        if cert.contraction_factor_bound > 1.0 + slack {
            return Err(Error::UnsoundConfig(format!(
                "window contraction bound {} exceeds one",
                cert.contraction_factor_bound
            )));
        }
        if gain * (psi_2r2 * (r_forcing + 1.0) + f0_norm) > 1.0 + slack {
            return Err(Error::UnsoundConfig(
                "window violates the ball-invariance condition".into(),
            ));
        }
        Ok(cert)
    }

    /// Sup-norm radius of the invariant ball.
    pub fn ball_radius(&self) -> f64 {
        self.r_forcing + 1.0
    }
}

/// Largest window length satisfying both certificate conditions, capped by
/// the remaining horizon. Degenerate divisors (a vanishing modulus or
/// kernel bound) leave the corresponding condition inactive.
pub fn certified_window(
    r_forcing: f64,
    alpha: f64,
    m_alpha: f64,
    psi_2r2: f64,
    f0_norm: f64,
    remaining: f64,
    contraction_target: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if !(remaining > 0.0 && remaining.is_finite()) {
        return Err(Error::domain(format!(
            "remaining horizon must be positive, got {remaining}"
        )));
    }
    if !(contraction_target > 0.0 && contraction_target < 1.0) {
        return Err(Error::domain(format!(
            "contraction target must lie in (0,1), got {contraction_target}"
        )));
    }
    if !m_alpha.is_finite() {
        return Err(Error::UnsoundConfig(
            "singularity bound sup t^alpha ||S_t|| is not finite; \
             the existence hypotheses fail for this kernel"
                .into(),
        ));
    }
    for (name, v) in [("R", r_forcing), ("M_alpha", m_alpha), ("psi", psi_2r2), ("F0", f0_norm)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::domain(format!("{name} must be finite and nonnegative, got {v}")));
        }
    }
    let one_minus = 1.0 - alpha;
    let invert = |budget: f64, divisor: f64| -> f64 {
        if divisor <= 0.0 {
            f64::INFINITY
        } else {
            (budget * one_minus / divisor).powf(1.0 / one_minus)
        }
    };
    let tau_contraction = invert(contraction_target, m_alpha * psi_2r2);
    let tau_ball = invert(1.0, m_alpha * (psi_2r2 * (r_forcing + 1.0) + f0_norm));
    Ok(remaining.min(tau_contraction).min(tau_ball))
}

/// One application of the Picard map
/// `Phi(x)(t) = int_0^t S_{t-s} F(x_s) ds + o_t` on the shared grid.
pub fn picard_map(
    x: &Trajectory,
    k: &Kernel,
    f: &Nonlinearity,
    o_local: &Trajectory,
    q: &QuadratureSpec,
) -> Result<Trajectory> {
    if x.grid() != o_local.grid() {
        return Err(Error::contract("picard_map: iterate and forcing must share one grid"));
    }
    let fy = x.map_values(f.w_space(), |v| f.eval(v))?;
    let conv = convolution_path(k, &fy, x.grid(), q)?;
    let values = conv
        .values()
        .iter()
        .zip(o_local.values())
        .map(|(c, o)| c.add(o))
        .collect();
    Trajectory::new(x.grid().to_vec(), values)
}

/// Initial iterate for [`solve_local`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PicardStart {
    /// Start from the forcing itself (inside the ball since `||o|| <= R`).
    Forcing,
    /// Start from the zero path.
    Zero,
}

/// Outcome of one window solve.
#[derive(Debug, Clone)]
pub struct LocalSolveResult {
    /// The fixed point, sampled on the window grid `[0, tau]`.
    pub trajectory: Trajectory,
    pub iterations: usize,
    pub final_update_norm: f64,
    /// Mild-equation residual of the returned trajectory.
    pub defect: f64,
    pub certificate: WindowCertificate,
    /// Measured update ratios `||d_{n+1}|| / ||d_n||`.
    pub contraction_ratios: Vec<f64>,
    /// Largest iterate sup-norm seen (ball check data).
    pub max_iterate_norm: f64,
}

/// Extra tolerances for [`solve_local`] beyond the convergence tolerance.
#[derive(Debug, Clone, Copy)]
pub struct SolveTolerances {
    /// Allowed sup-norm excess over the certified ball radius.
    pub tol_ball: f64,
    /// Allowed excess of measured contraction ratios over the certified bound.
    pub slack: f64,
}

impl Default for SolveTolerances {
    fn default() -> SolveTolerances {
        SolveTolerances {
            tol_ball: 1e-6,
            slack: 0.1,
        }
    }
}

/// Solve the fixed-point problem on one certified window.
///
/// Iterates `x_{n+1} = Phi(x_n)` from `o_local` (or zero) until the path-space
/// update drops below `tol`. The certificate makes the exact map a
/// contraction, so convergence within `ceil(log2(d0/tol)) + 1` iterations is
/// guaranteed up to quadrature error; running past `max_iter`, escaping the
/// ball, or contracting slower than the certified bound plus slack are all
/// reported as errors because they invalidate the certificate.
#[allow(clippy::too_many_arguments)]
pub fn solve_local(
    k: &Kernel,
    f: &Nonlinearity,
    o_local: &Trajectory,
    cert: &WindowCertificate,
    grid_n: usize,
    tol: f64,
    max_iter: usize,
    q: &QuadratureSpec,
    tols: &SolveTolerances,
    start: PicardStart,
) -> Result<LocalSolveResult> {
    if grid_n < 2 {
        return Err(Error::domain("solve_local requires grid_n >= 2"));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("solve_local requires tol > 0"));
    }
    let tol_interval = 1e-9 * (1.0 + cert.tau);
    if o_local.t0().abs() > tol_interval || (o_local.t1() - cert.tau).abs() > tol_interval {
        return Err(Error::contract(format!(
            "solve_local: forcing interval [{}, {}] does not match the window [0, {}]",
            o_local.t0(),
            o_local.t1(),
            cert.tau
        )));
    }
    let grid = uniform_grid(0.0, cert.tau, grid_n);
    let o_local = if o_local.grid() == grid.as_slice() {
        o_local.clone()
    } else {
        o_local.resample(grid.clone())?
    };
    let ball = cert.ball_radius() + tols.tol_ball;
    let mut x = match start {
        PicardStart::Forcing => o_local.clone(),
        PicardStart::Zero => o_local.map_values(o_local.space(), |v| Ok(v.scale(0.0)))?,
    };
    let mut max_norm = x.sup_norm();
    let mut prev_update: Option<f64> = None;
    let mut ratios = Vec::new();
    for iter in 1..=max_iter {
        let next = picard_map(&x, k, f, &o_local, q)?;
        let update = sup_distance(&next, &x, grid_n)?;
        let norm = next.sup_norm();
        max_norm = max_norm.max(norm);
        if norm > ball {
            return Err(Error::BallViolation {
                observed: norm,
                allowed: ball,
            });
        }
        if let Some(prev) = prev_update {
            // ratios are only meaningful above the convergence floor where
            // rounding noise cannot dominate the quotient
            if prev > tol.max(1e3 * f64::EPSILON * (1.0 + norm)) {
                let ratio = update / prev;
                ratios.push(ratio);
                if ratio > cert.contraction_factor_bound + tols.slack {
                    return Err(Error::ContractionExceeded {
                        ratio,
                        bound: cert.contraction_factor_bound,
                        slack: tols.slack,
                    });
                }
            }
        }
        prev_update = Some(update);
        x = next;
        if update <= tol {
            let d = defect(&x, k, f, &o_local, q)?;
            return Ok(LocalSolveResult {
                trajectory: x,
                iterations: iter,
                final_update_norm: update,
                defect: d,
                certificate: cert.clone(),
                contraction_ratios: ratios,
                max_iterate_norm: max_norm,
            });
        }
    }
    Err(Error::NonContraction {
        max_iter,
        last_update: prev_update.unwrap_or(f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelKind;
    use crate::nonlinear::NonlinKind;
    use crate::space::{SpaceSpec, StateVector};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn scalar_setup(lambda: f64, horizon: f64, alpha: f64) -> (Kernel, Nonlinearity) {
        let k = Kernel::new(
            KernelKind::Identity,
            horizon,
            alpha,
            0.5,
            SpaceSpec::sup(1),
            SpaceSpec::sup(1),
        )
        .unwrap();
        let f = Nonlinearity::new(
            NonlinKind::Linear { matrix: DMatrix::from_element(1, 1, lambda) },
            Arc::clone(k.v_space()),
            Arc::clone(k.w_space()),
        )
        .unwrap();
        (k, f)
    }

    fn const_forcing(k: &Kernel, tau: f64, c: f64, n: usize) -> Trajectory {
        let grid = uniform_grid(0.0, tau, n);
        let values = grid
            .iter()
            .map(|_| StateVector::new(vec![c], Arc::clone(k.v_space())).unwrap())
            .collect();
        Trajectory::new(grid, values).unwrap()
    }

    #[test]
    fn window_formula_hand_computed_case() {
        // alpha = 1/2, M = psi = R = 1, F0 = 0:
        // contraction gives (0.5 / 2)^2 = 0.0625, ball invariance the same
        let tau = certified_window(1.0, 0.5, 1.0, 1.0, 0.0, 10.0, 0.5).unwrap();
        assert_relative_eq!(tau, 0.0625, max_relative = 1e-14);
    }

    #[test]
    fn window_unconstrained_when_f_vanishes() {
        let tau = certified_window(1.0, 0.5, 1.0, 0.0, 0.0, 7.5, 0.5).unwrap();
        assert_eq!(tau, 7.5);
    }

    #[test]
    fn window_clamped_by_remaining_horizon() {
        let tau = certified_window(1.0, 0.5, 1.0, 1.0, 0.0, 0.01, 0.5).unwrap();
        assert_eq!(tau, 0.01);
    }

    #[test]
    fn window_rejects_infinite_kernel_bound() {
        match certified_window(1.0, 0.5, f64::INFINITY, 1.0, 0.0, 1.0, 0.5) {
            Err(Error::UnsoundConfig(_)) => {}
            other => panic!("expected unsound-config error, got {other:?}"),
        }
    }

    #[test]
    fn certificate_invariants_enforced() {
        let tau = certified_window(1.0, 0.5, 1.0, 1.0, 0.5, 10.0, 0.5).unwrap();
        let cert = WindowCertificate::new(0.0, tau, 1.0, 1.0, 0.5, 1.0, 0.5).unwrap();
        assert!(cert.contraction_factor_bound <= 0.5 + 1e-12);
        // an oversized window is rejected
        assert!(WindowCertificate::new(0.0, 100.0, 1.0, 1.0, 0.5, 1.0, 0.5).is_err());
    }

    #[test]
    fn picard_map_constant_under_zero_nonlinearity() {
        let (k, _) = scalar_setup(1.0, 2.0, 0.5);
        let f0 = Nonlinearity::new(
            NonlinKind::Linear { matrix: DMatrix::zeros(1, 1) },
            Arc::clone(k.v_space()),
            Arc::clone(k.w_space()),
        )
        .unwrap();
        let o = const_forcing(&k, 1.0, 2.0, 9);
        let x = const_forcing(&k, 1.0, -5.0, 9);
        let out = picard_map(&x, &k, &f0, &o, &QuadratureSpec::default()).unwrap();
        assert_eq!(out, o);
    }

    #[test]
    fn picard_iterates_build_truncated_exponential_series() {
        // x' = x, x0 = 1: iterates from zero are 1, 1 + t, 1 + t + t^2/2, ...
        // and the trapezoid rule is exact through the degree-one integrand
        let (k, f) = scalar_setup(1.0, 2.0, 0.5);
        let o = const_forcing(&k, 1.0, 1.0, 5);
        let q = QuadratureSpec::default();
        let zero = o.map_values(o.space(), |v| Ok(v.scale(0.0))).unwrap();
        let p1 = picard_map(&zero, &k, &f, &o, &q).unwrap();
        for j in 0..p1.len() {
            assert_eq!(p1.value(j).coords()[0], 1.0);
        }
        let p2 = picard_map(&p1, &k, &f, &o, &q).unwrap();
        for (j, &t) in p2.grid().iter().enumerate() {
            assert_relative_eq!(p2.value(j).coords()[0], 1.0 + t, max_relative = 1e-14);
        }
        let p3 = picard_map(&p2, &k, &f, &o, &q).unwrap();
        for (j, &t) in p3.grid().iter().enumerate() {
            assert_relative_eq!(
                p3.value(j).coords()[0],
                1.0 + t + t * t / 2.0,
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn solve_local_zero_nonlinearity_converges_immediately() {
        let (k, _) = scalar_setup(1.0, 2.0, 0.5);
        let f0 = Nonlinearity::new(
            NonlinKind::Linear { matrix: DMatrix::zeros(1, 1) },
            Arc::clone(k.v_space()),
            Arc::clone(k.w_space()),
        )
        .unwrap();
        let o = const_forcing(&k, 1.0, 2.0, 17);
        let m = k.singularity_bound(16).unwrap();
        let cert = WindowCertificate::new(0.0, 1.0, 2.0, m, 0.5, 0.0, 0.0).unwrap();
        let res = solve_local(
            &k,
            &f0,
            &o,
            &cert,
            17,
            1e-12,
            50,
            &QuadratureSpec::default(),
            &SolveTolerances::default(),
            PicardStart::Forcing,
        )
        .unwrap();
        assert_eq!(res.iterations, 1);
        assert_eq!(res.final_update_norm, 0.0);
        assert_eq!(res.trajectory, o);
    }

    #[test]
    fn solve_local_matches_exponential_on_certified_window() {
        let (k, f) = scalar_setup(1.0, 1.0, 0.1);
        let m = k.singularity_bound(16).unwrap();
        let r = 1.0;
        let psi = f.lipschitz_modulus(2.0 * r + 2.0);
        let tau = certified_window(r, 0.1, m, psi, f.f0_norm().unwrap(), 1.0, 0.5).unwrap();
        let o = const_forcing(&k, tau, 1.0, 257);
        let cert = WindowCertificate::new(0.0, tau, r, m, 0.1, psi, 0.0).unwrap();
        let res = solve_local(
            &k,
            &f,
            &o,
            &cert,
            257,
            1e-10,
            100,
            &QuadratureSpec::default(),
            &SolveTolerances::default(),
            PicardStart::Forcing,
        )
        .unwrap();
        for (j, &t) in res.trajectory.grid().iter().enumerate() {
            assert_relative_eq!(res.trajectory.value(j).coords()[0], t.exp(), max_relative = 1e-6);
        }
        // certificate soundness: measured ratios within bound + slack
        for ratio in &res.contraction_ratios {
            assert!(*ratio <= cert.contraction_factor_bound + 0.1, "ratio {ratio}");
        }
        assert!(res.max_iterate_norm <= cert.ball_radius() + 1e-6);
        // dual-start uniqueness
        let res0 = solve_local(
            &k,
            &f,
            &o,
            &cert,
            257,
            1e-10,
            100,
            &QuadratureSpec::default(),
            &SolveTolerances::default(),
            PicardStart::Zero,
        )
        .unwrap();
        let d = sup_distance(&res.trajectory, &res0.trajectory, 257).unwrap();
        assert!(d <= 1e-9, "dual-start distance {d}");
    }

    #[test]
    fn solve_local_reports_non_contraction_when_capped() {
        let (k, f) = scalar_setup(1.0, 1.0, 0.1);
        let m = k.singularity_bound(16).unwrap();
        let psi = f.lipschitz_modulus(4.0);
        let tau = certified_window(1.0, 0.1, m, psi, 0.0, 1.0, 0.5).unwrap();
        let o = const_forcing(&k, tau, 1.0, 33);
        let cert = WindowCertificate::new(0.0, tau, 1.0, m, 0.1, psi, 0.0).unwrap();
        match solve_local(
            &k,
            &f,
            &o,
            &cert,
            33,
            1e-12,
            2,
            &QuadratureSpec::default(),
            &SolveTolerances::default(),
            PicardStart::Forcing,
        ) {
            Err(Error::NonContraction { max_iter: 2, .. }) => {}
            other => panic!("expected non-contraction error, got {other:?}"),
        }
    }
}
