//! Runtime certificates over computed trajectories.
//!
//! Three checks make the solver's guarantees observable after the fact:
//! dual-start uniqueness on a certified window, the Mittag-Leffler-Gronwall
//! perturbation inequality relating sup-norm distance to the paired
//! mild-equation defect, and discrete continuity of the convolution under
//! grid refinement. Certificates are advisory on normal runs and mandatory
//! in verify mode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::nonlinear::Nonlinearity;
use crate::picard::{solve_local, PicardStart, SolveTolerances, WindowCertificate};
use crate::space::{sup_distance, Trajectory};
use crate::specialfn::perturbation_bound;
use crate::volterra::{convolution_path, QuadratureSpec};

/// Dual-start agreement on one certified window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniquenessCheck {
    /// Sup distance between the solves started from the forcing and from zero.
    pub distance: f64,
    /// Acceptance threshold, ten times the solve tolerance.
    pub threshold: f64,
    pub passed: bool,
}

/// Solve one window twice, from the forcing and from the zero path; the
/// certified contraction forces both to the same fixed point, so the results
/// must agree within `10 * tol`.
#[allow(clippy::too_many_arguments)]
pub fn check_uniqueness(
    k: &Kernel,
    f: &Nonlinearity,
    o_local: &Trajectory,
    cert: &WindowCertificate,
    grid_n: usize,
    tol: f64,
    q: &QuadratureSpec,
    tols: &SolveTolerances,
) -> Result<UniquenessCheck> {
    let from_forcing = solve_local(k, f, o_local, cert, grid_n, tol, 500, q, tols, PicardStart::Forcing)?;
    let from_zero = solve_local(k, f, o_local, cert, grid_n, tol, 500, q, tols, PicardStart::Zero)?;
    let distance = sup_distance(&from_forcing.trajectory, &from_zero.trajectory, grid_n)?;
    let threshold = 10.0 * tol;
    Ok(UniquenessCheck {
        distance,
        threshold,
        passed: distance <= threshold,
    })
}

/// Both sides of the perturbation inequality, evaluated on a trajectory pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationCertificate {
    /// Sup distance of the two trajectories.
    pub lhs: f64,
    /// Sup of the paired defect `||x1 - Phi(x1) + Phi(x2) - x2||` (forcing-free map).
    pub defect_sup: f64,
    /// Lipschitz modulus at the sup of the norm sum.
    pub psi_at_sum: f64,
    /// Right-hand side of the inequality.
    pub bound: f64,
    /// Honest discretization budget added to the bound.
    pub slack: f64,
    /// `bound + slack - lhs`.
    pub margin: f64,
    pub passed: bool,
}

/// Evaluate the perturbation inequality for two paths on a shared grid.
///
/// In the continuum the sup distance never exceeds
/// `E_{1-alpha}[T^{1-alpha} M_alpha Psi] * defect_sup`; discretely both sides
/// carry quadrature error, which `slack` budgets for.
#[allow(clippy::too_many_arguments)]
pub fn check_perturbation(
    x1: &Trajectory,
    x2: &Trajectory,
    k: &Kernel,
    f: &Nonlinearity,
    alpha: f64,
    m_alpha: f64,
    q: &QuadratureSpec,
    slack: f64,
) -> Result<PerturbationCertificate> {
    if x1.grid() != x2.grid() {
        return Err(Error::contract("check_perturbation: trajectories must share one grid"));
    }
    if x1.space() != x2.space() {
        return Err(Error::contract("check_perturbation: trajectories must share one space"));
    }
    let tol = 1e-9 * (1.0 + x1.t1().abs());
    if x1.t0().abs() > tol {
        return Err(Error::contract("check_perturbation: trajectories must start at t = 0"));
    }
    let lhs = sup_distance(x1, x2, x1.len())?;
    let f1 = x1.map_values(f.w_space(), |v| f.eval(v))?;
    let f2 = x2.map_values(f.w_space(), |v| f.eval(v))?;
    let c1 = convolution_path(k, &f1, x1.grid(), q)?;
    let c2 = convolution_path(k, &f2, x1.grid(), q)?;
    let mut defect_sup = 0.0f64;
    let mut sum_norm = 0.0f64;
    for j in 0..x1.len() {
        let paired = x1
            .value(j)
            .sub(c1.value(j))
            .add(c2.value(j))
            .sub(x2.value(j))
            .norm();
        defect_sup = defect_sup.max(paired);
        sum_norm = sum_norm.max(x1.value(j).norm() + x2.value(j).norm());
    }
    let psi_at_sum = f.lipschitz_modulus(sum_norm);
    let bound = perturbation_bound(alpha, x1.t1(), m_alpha, psi_at_sum, defect_sup)?;
    let margin = bound + slack - lhs;
    Ok(PerturbationCertificate {
        lhs,
        defect_sup,
        psi_at_sum,
        bound,
        slack,
        margin,
        passed: margin >= 0.0,
    })
}

/// Adjacent-node jumps of the convolution path under dyadic grid refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuityCheck {
    /// Max adjacent-node jump per refinement level.
    pub moduli: Vec<f64>,
    pub passed: bool,
}

/// Check that the convolution path's modulus of continuity decays under
/// refinement: each level may exceed its predecessor by at most 50%, and the
/// finest level must fall below `continuity_tol`.
pub fn refinement_continuity_check(
    k: &Kernel,
    y: &Trajectory,
    levels: usize,
    continuity_tol: f64,
    q: &QuadratureSpec,
) -> Result<ContinuityCheck> {
    if levels < 2 {
        return Err(Error::domain("refinement_continuity_check requires levels >= 2"));
    }
    let mut grid = y.grid().to_vec();
    let mut moduli = Vec::with_capacity(levels);
    for level in 0..levels {
        if level > 0 {
            grid = refine_dyadic(&grid);
        }
        let resampled = y.resample(grid.clone())?;
        let path = convolution_path(k, &resampled, &grid, q)?;
        let modulus = path
            .values()
            .windows(2)
            .map(|w| w[1].sub(&w[0]).norm())
            .fold(0.0, f64::max);
        moduli.push(modulus);
    }
    let decaying = moduli.windows(2).all(|w| w[1] <= 1.5 * w[0]);
    let passed = decaying && *moduli.last().unwrap() <= continuity_tol;
    Ok(ContinuityCheck { moduli, passed })
}

fn refine_dyadic(grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len() * 2 - 1);
    for w in grid.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(*grid.last().unwrap());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelKind;
    use crate::nonlinear::NonlinKind;
    use crate::picard::certified_window;
    use crate::space::{uniform_grid, SpaceSpec, StateVector};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

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

    fn const_forcing(k: &Kernel, tau: f64, c: f64, n: usize) -> Trajectory {
        let grid = uniform_grid(0.0, tau, n);
        let values = grid
            .iter()
            .map(|_| StateVector::new(vec![c], Arc::clone(k.v_space())).unwrap())
            .collect();
        Trajectory::new(grid, values).unwrap()
    }

    fn linear_f(k: &Kernel, lambda: f64) -> Nonlinearity {
        Nonlinearity::new(
            NonlinKind::Linear { matrix: DMatrix::from_element(1, 1, lambda) },
            Arc::clone(k.v_space()),
            Arc::clone(k.w_space()),
        )
        .unwrap()
    }

    #[test]
    fn uniqueness_zero_nonlinearity_is_exact() {
        let k = identity_kernel(1.0, 0.5);
        let f = linear_f(&k, 0.0);
        let o = const_forcing(&k, 1.0, 2.0, 17);
        let m = k.singularity_bound(16).unwrap();
        let cert = WindowCertificate::new(0.0, 1.0, 2.0, m, 0.5, 0.0, 0.0).unwrap();
        let u = check_uniqueness(
            &k,
            &f,
            &o,
            &cert,
            17,
            1e-8,
            &QuadratureSpec::default(),
            &SolveTolerances::default(),
        )
        .unwrap();
        assert_eq!(u.distance, 0.0);
        assert!(u.passed);
    }

    #[test]
    fn uniqueness_on_certified_linear_window() {
        let k = identity_kernel(1.0, 0.1);
        let f = linear_f(&k, 1.0);
        let m = k.singularity_bound(16).unwrap();
        let psi = f.lipschitz_modulus(4.0);
        let tau = certified_window(1.0, 0.1, m, psi, 0.0, 1.0, 0.5).unwrap();
        let o = const_forcing(&k, tau, 1.0, 65);
        let cert = WindowCertificate::new(0.0, tau, 1.0, m, 0.1, psi, 0.0).unwrap();
        let u = check_uniqueness(
            &k,
            &f,
            &o,
            &cert,
            65,
            1e-8,
            &QuadratureSpec::default(),
            &SolveTolerances::default(),
        )
        .unwrap();
        assert!(u.passed, "distance {} vs threshold {}", u.distance, u.threshold);
        assert!(u.distance <= 1e-7);
    }

    #[test]
    fn uniqueness_on_riccati_first_window() {
        let k = identity_kernel(2.0, 0.1);
        let f = Nonlinearity::new(
            NonlinKind::QuadraticRiccati,
            Arc::clone(k.v_space()),
            Arc::clone(k.w_space()),
        )
        .unwrap();
        let m = k.singularity_bound(16).unwrap();
        let psi = f.lipschitz_modulus(4.0);
        let tau = certified_window(1.0, 0.1, m, psi, f.f0_norm().unwrap(), 2.0, 0.5).unwrap();
        let o = const_forcing(&k, tau, 1.0, 65);
        let cert = WindowCertificate::new(0.0, tau, 1.0, m, 0.1, psi, 0.0).unwrap();
        let u = check_uniqueness(
            &k,
            &f,
            &o,
            &cert,
            65,
            1e-9,
            &QuadratureSpec::default(),
            &SolveTolerances::default(),
        )
        .unwrap();
        assert!(u.passed, "distance {} vs threshold {}", u.distance, u.threshold);
    }

    #[test]
    fn perturbation_certificate_identical_pair_passes_trivially() {
        let k = identity_kernel(1.0, 0.5);
        let f = linear_f(&k, 1.0);
        let grid = uniform_grid(0.0, 0.25, 17);
        let x = Trajectory::from_fn(grid, k.v_space(), |t| {
            StateVector::new(vec![t.exp()], Arc::clone(k.v_space()))
        })
        .unwrap();
        let m = k.singularity_bound(16).unwrap();
        let cert =
            check_perturbation(&x, &x, &k, &f, 0.5, m, &QuadratureSpec::default(), 0.0).unwrap();
        assert_eq!(cert.lhs, 0.0);
        assert_eq!(cert.defect_sup, 0.0);
        assert!(cert.passed);
    }

    #[test]
    fn perturbation_certificate_for_shifted_forcing() {
        // solve the same linear window under forcings o and o + delta; the
        // paired defect telescopes to exactly delta and the bound covers the
        // measured distance
        let k = identity_kernel(1.0, 0.1);
        let f = linear_f(&k, 1.0);
        let m = k.singularity_bound(16).unwrap();
        let psi = f.lipschitz_modulus(2.0 * 1.01 + 2.0);
        let tau = certified_window(1.01, 0.1, m, psi, 0.0, 1.0, 0.5).unwrap();
        let delta = 1e-2;
        let o1 = const_forcing(&k, tau, 1.0, 65);
        let o2 = const_forcing(&k, tau, 1.0 + delta, 65);
        let cert_window = WindowCertificate::new(0.0, tau, 1.01, m, 0.1, psi, 0.0).unwrap();
        let q = QuadratureSpec::default();
        let tols = SolveTolerances::default();
        let x1 = solve_local(&k, &f, &o1, &cert_window, 65, 1e-11, 200, &q, &tols, PicardStart::Forcing)
            .unwrap()
            .trajectory;
        let x2 = solve_local(&k, &f, &o2, &cert_window, 65, 1e-11, 200, &q, &tols, PicardStart::Forcing)
            .unwrap()
            .trajectory;
        let cert = check_perturbation(&x1, &x2, &k, &f, 0.1, m, &q, 1e-6).unwrap();
        assert_relative_eq!(cert.defect_sup, delta, max_relative = 1e-4);
        assert!(cert.passed, "margin {}", cert.margin);
        assert!(cert.margin >= 0.0);
        assert!(cert.lhs > 0.0);
    }

    #[test]
    fn perturbation_certificate_is_self_consistent_for_adversarial_pair() {
        // x2 violates the equation by a large ramp; the bound scales with the
        // measured defect, so the certificate still closes
        let k = identity_kernel(1.0, 0.5);
        let f = linear_f(&k, 1.0);
        let grid = uniform_grid(0.0, 0.25, 33);
        let x1 = Trajectory::from_fn(grid.clone(), k.v_space(), |t| {
            StateVector::new(vec![t.exp()], Arc::clone(k.v_space()))
        })
        .unwrap();
        let x2 = Trajectory::from_fn(grid, k.v_space(), |t| {
            StateVector::new(vec![t.exp() + 5.0 * t], Arc::clone(k.v_space()))
        })
        .unwrap();
        let m = k.singularity_bound(16).unwrap();
        let cert =
            check_perturbation(&x1, &x2, &k, &f, 0.5, m, &QuadratureSpec::default(), 1e-9).unwrap();
        assert!(cert.passed, "margin {}", cert.margin);
    }

    #[test]
    fn continuity_check_zero_history() {
        let k = identity_kernel(1.0, 0.5);
        let y = const_forcing(&k, 1.0, 0.0, 9);
        let c = refinement_continuity_check(&k, &y, 3, 1e-12, &QuadratureSpec::default()).unwrap();
        assert!(c.moduli.iter().all(|m| *m == 0.0));
        assert!(c.passed);
    }

    #[test]
    fn continuity_moduli_halve_for_bounded_kernel() {
        let k = Kernel::new(
            KernelKind::ScalarExp { lambda: -1.0 },
            2.0,
            0.5,
            0.5,
            SpaceSpec::sup(1),
            SpaceSpec::sup(1),
        )
        .unwrap();
        let y = const_forcing(&k, 1.0, 1.0, 9);
        let c = refinement_continuity_check(&k, &y, 5, 0.5, &QuadratureSpec::default()).unwrap();
        assert!(c.passed);
        for w in c.moduli.windows(2) {
            let ratio = w[1] / w[0];
            assert!((0.4..0.62).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn continuity_moduli_follow_square_root_for_singular_kernel() {
        let k = Kernel::new(
            KernelKind::SingularScaled {
                alpha0: 0.5,
                base: Box::new(KernelKind::Identity),
            },
            2.0,
            0.5,
            0.5,
            SpaceSpec::sup(1),
            SpaceSpec::sup(1),
        )
        .unwrap();
        let y = const_forcing(&k, 1.0, 1.0, 9);
        let c = refinement_continuity_check(&k, &y, 5, 0.5, &QuadratureSpec::default()).unwrap();
        assert!(c.passed);
        // path is 2 sqrt(t): jumps scale like h^{1/2}, ratio 2^{-1/2}
        let expect = 2f64.powf(-0.5);
        for w in c.moduli.windows(2) {
            let ratio = w[1] / w[0];
            assert!((ratio - expect).abs() < 0.06, "ratio {ratio} vs {expect}");
        }
    }
}
