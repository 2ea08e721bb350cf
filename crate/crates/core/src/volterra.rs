//! Product-integration quadrature for the singular convolution
//! `int_0^t S_{t-s} y_s ds` and the mild-equation defect.
//!
//! The history `y` enters through its piecewise-linear interpolant while the
//! kernel is sampled exactly at quadrature nodes. For `singular_scaled`
//! kernels the declared weight `(t-s)^{-a0}` is never sampled: it is either
//! integrated exactly against the interpolant of the smooth factor
//! (`analytic_weight`) or absorbed into a Gauss-Jacobi rule on the final
//! panel. Every output node recomputes its full history (O(n^2) overall),
//! which is the price of kernels that do not diagonalize the convolution.

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::nonlinear::Nonlinearity;
use crate::space::{StateVector, Trajectory};

/// Composite rule applied to the bounded part of the integrand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    ProductRectangle,
    ProductTrapezoid,
}

/// Treatment of the panel touching the kernel singularity at `s = t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularPanelRule {
    /// Integrate `(t-s)^{-a0}` exactly against the interpolant.
    AnalyticWeight,
    /// Gauss-Jacobi rule with the given node count for that weight.
    GaussJacobi { nodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub scheme: Scheme,
    /// Sub-quadrature intervals per history-grid panel.
    pub panels_per_step: usize,
    pub singular_panel: SingularPanelRule,
}

impl Default for QuadratureSpec {
    fn default() -> QuadratureSpec {
        QuadratureSpec {
            scheme: Scheme::ProductTrapezoid,
            panels_per_step: 4,
            singular_panel: SingularPanelRule::AnalyticWeight,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.panels_per_step == 0 {
            return Err(Error::validation("quadrature.panels_per_step", "must be >= 1"));
        }
        if let SingularPanelRule::GaussJacobi { nodes } = self.singular_panel {
            if nodes == 0 {
                return Err(Error::validation("quadrature.singular_panel.nodes", "must be >= 1"));
            }
        }
        Ok(())
    }
}

/// `int_0^{t1(y)} S_{t1 - s} y_s ds`.
pub fn convolve(k: &Kernel, y: &Trajectory, q: &QuadratureSpec) -> Result<StateVector> {
    convolve_prefix(k, y, q, y.t1())
}

/// `int_0^t S_{t - s} y_s ds` for a prefix `t <= t1(y)`.
pub fn convolve_prefix(k: &Kernel, y: &Trajectory, q: &QuadratureSpec, t: f64) -> Result<StateVector> {
    q.validate()?;
    if y.space() != k.w_space() {
        return Err(Error::contract("convolve: history values must lie in the kernel's W space"));
    }
    let tol = 1e-12 * (1.0 + y.t1().abs());
    if y.t0().abs() > tol {
        return Err(Error::contract("convolve: history must start at t = 0"));
    }
    if t > y.t1() + tol || t > k.horizon() + tol {
        return Err(Error::domain(format!(
            "convolve: t = {t} exceeds the history interval or kernel horizon"
        )));
    }
    let t = t.min(y.t1()).min(k.horizon());
    let zero = StateVector::zero(k.v_space());
    if t <= tol {
        return Ok(zero);
    }

    // panel boundaries: history grid nodes strictly before t, then t itself
    let mut bounds: Vec<f64> = y.grid().iter().copied().filter(|&g| g < t - tol).collect();
    bounds.push(t);

    match k.singular_exponent() {
        None => convolve_bounded(k, y, q, t, &bounds, zero),
        Some(a0) => convolve_singular(k, y, q, t, a0, &bounds, zero),
    }
}

fn convolve_bounded(
    k: &Kernel,
    y: &Trajectory,
    q: &QuadratureSpec,
    t: f64,
    bounds: &[f64],
    zero: StateVector,
) -> Result<StateVector> {
    let m = q.panels_per_step;
    let mut acc = zero;
    let mut prev_s = bounds[0];
    let mut prev_g = k.apply_base_at(t - prev_s, &y.eval(prev_s)?)?;
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let h = (b - a) / m as f64;
        for i in 1..=m {
            let s = if i == m { b } else { a + h * i as f64 };
            let g = k.apply_base_at(t - s, &y.eval(s)?)?;
            match q.scheme {
                Scheme::ProductTrapezoid => {
                    acc = acc.axpy(0.5 * (s - prev_s), &prev_g.add(&g));
                }
                Scheme::ProductRectangle => {
                    acc = acc.axpy(s - prev_s, &prev_g);
                }
            }
            prev_s = s;
            prev_g = g;
        }
    }
    Ok(acc)
}

fn convolve_singular(
    k: &Kernel,
    y: &Trajectory,
    q: &QuadratureSpec,
    t: f64,
    a0: f64,
    bounds: &[f64],
    zero: StateVector,
) -> Result<StateVector> {
    let m = q.panels_per_step;
    let n_panels = bounds.len() - 1;
    let mut acc = zero;
    // smooth factor: G(s) = B_{t-s} y(s); the weight (t-s)^{-a0} stays exact
    let mut prev_s = bounds[0];
    let mut prev_g = k.apply_base_at(t - prev_s, &y.eval(prev_s)?)?;
    for (pi, w) in bounds.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        if pi + 1 == n_panels {
            if let SingularPanelRule::GaussJacobi { nodes } = q.singular_panel {
                let rule = gauss_jacobi::rule(nodes, -a0, 0.0)?;
                let half = (t - a) / 2.0;
                let scale = half.powf(1.0 - a0);
                for (&x, &wt) in rule.nodes.iter().zip(&rule.weights) {
                    let s = a + half * (x + 1.0);
                    let g = k.apply_base_at(t - s, &y.eval(s)?)?;
                    acc = acc.axpy(scale * wt, &g);
                }
                break;
            }
        }
        let h = (b - a) / m as f64;
        for i in 1..=m {
            let s = if i == m { b } else { a + h * i as f64 };
            let g = k.apply_base_at(t - s, &y.eval(s)?)?;
            // exact moments of u^{-a0} on [t - s, t - prev_s]
            let (p, qq) = (t - s, t - prev_s);
            let i0 = (qq.powf(1.0 - a0) - p.powf(1.0 - a0)) / (1.0 - a0);
            match q.scheme {
                Scheme::ProductTrapezoid => {
                    let i1 = (qq.powf(2.0 - a0) - p.powf(2.0 - a0)) / (2.0 - a0);
                    let w_prev = (i1 - p * i0) / (qq - p);
                    let w_cur = (qq * i0 - i1) / (qq - p);
                    acc = acc.axpy(w_prev, &prev_g).axpy(w_cur, &g);
                }
                Scheme::ProductRectangle => {
                    acc = acc.axpy(i0, &prev_g);
                }
            }
            prev_s = s;
            prev_g = g;
        }
    }
    Ok(acc)
}

/// The convolution sampled at every node of `grid`; node 0 is the zero vector.
pub fn convolution_path(
    k: &Kernel,
    y: &Trajectory,
    grid: &[f64],
    q: &QuadratureSpec,
) -> Result<Trajectory> {
    if grid.is_empty() {
        return Err(Error::contract("convolution_path: empty grid"));
    }
    let tol = 1e-12 * (1.0 + y.t1().abs());
    if grid[0].abs() > tol {
        return Err(Error::contract("convolution_path: grid must start at t = 0"));
    }
    let values = grid
        .iter()
        .map(|&t| convolve_prefix(k, y, q, t))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(grid.to_vec(), values)
}

/// Sup over grid nodes of the mild-equation residual
/// `|| x_t - int_0^t S_{t-s} F(x_s) ds - o_t ||`.
pub fn defect(
    x: &Trajectory,
    k: &Kernel,
    f: &Nonlinearity,
    o: &Trajectory,
    q: &QuadratureSpec,
) -> Result<f64> {
    if x.grid() != o.grid() {
        return Err(Error::contract("defect: trajectory and forcing must share one grid"));
    }
    if x.space() != o.space() {
        return Err(Error::contract("defect: trajectory and forcing must share one space"));
    }
    let fy = x.map_values(f.w_space(), |v| f.eval(v))?;
    let mut worst = 0.0f64;
    for (j, &t) in x.grid().iter().enumerate() {
        let conv = convolve_prefix(k, &fy, q, t)?;
        let r = x.value(j).sub(&conv).sub(o.value(j)).norm();
        if r > worst {
            worst = r;
        }
    }
    Ok(worst)
}

/// Gauss-Jacobi rules for the weight `(1-x)^a (1+x)^b` on `[-1, 1]`,
/// computed by Golub-Welsch from the three-term recurrence.
pub(crate) mod gauss_jacobi {
    use nalgebra::{DMatrix, SymmetricEigen};

    use crate::error::{Error, Result};
    use crate::specialfn::gamma;

    #[derive(Debug, Clone)]
    pub struct Rule {
        pub nodes: Vec<f64>,
        pub weights: Vec<f64>,
    }

    pub fn rule(n: usize, a: f64, b: f64) -> Result<Rule> {
        if n == 0 {
            return Err(Error::domain("gauss_jacobi needs at least one node"));
        }
        if !(a > -1.0 && b > -1.0) {
            return Err(Error::domain(format!(
                "gauss_jacobi weight exponents must exceed -1, got ({a}, {b})"
            )));
        }
        let mu0 = 2f64.powf(a + b + 1.0) * gamma(a + 1.0)? * gamma(b + 1.0)? / gamma(a + b + 2.0)?;
        if n == 1 {
            return Ok(Rule {
                nodes: vec![(b - a) / (a + b + 2.0)],
                weights: vec![mu0],
            });
        }
        let mut jac = DMatrix::zeros(n, n);
        for k in 0..n {
            let kf = k as f64;
            let diag = if k == 0 {
                (b - a) / (a + b + 2.0)
            } else {
                (b * b - a * a) / ((2.0 * kf + a + b) * (2.0 * kf + a + b + 2.0))
            };
            jac[(k, k)] = diag;
        }
        for k in 1..n {
            let kf = k as f64;
            let num = if k == 1 {
                4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + a + b).powi(2) * (3.0 + a + b))
            } else {
                4.0 * kf * (kf + a) * (kf + b) * (kf + a + b)
                    / ((2.0 * kf + a + b).powi(2) * (2.0 * kf + a + b + 1.0) * (2.0 * kf + a + b - 1.0))
            };
            let off = num.sqrt();
            jac[(k, k - 1)] = off;
            jac[(k - 1, k)] = off;
        }
        let eig = SymmetricEigen::new(jac);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let node = eig.eigenvalues[i];
                let w = mu0 * eig.eigenvectors[(0, i)].powi(2);
                (node, w)
            })
            .collect();
        pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        Ok(Rule {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }
}
