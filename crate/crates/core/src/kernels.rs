//! Kernel families `S_t : W -> V` and their bounded extensions `S_t : V -> V`.
//!
//! A kernel bundles the operator family, the horizon `T`, the singularity
//! exponent `alpha` (so that `sup_t t^alpha ||S_t||` is finite), and the
//! Hoelder exponent `rho` used by the continuation hypotheses. The extension
//! satisfies the splitting `S_{t1+t2} = Ext_{t1} S_{t2}` exactly for the
//! exponential kinds; the `singular_scaled` kind carries a genuine `t^-a0`
//! operator blow-up at `t = 0` and only its bounded base extends, which
//! [`Kernel::has_exact_splitting`] reports.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::space::{NormKind, Space, StateVector};

/// Operator family selector.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// `S_t = I`.
    Identity,
    /// `S_t = e^{lambda t} I`.
    ScalarExp { lambda: f64 },
    /// `S_t = diag(e^{-lambda_k t})`, the spectral heat semigroup.
    DiagonalExp { lambdas: Vec<f64> },
    /// `S_t = exp(t A)` for a square matrix `A`.
    MatrixExp { matrix: DMatrix<f64> },
    /// `S_t = t^{-alpha0} B_t` for a bounded base family `B`.
    SingularScaled { alpha0: f64, base: Box<KernelKind> },
}

impl KernelKind {
    fn is_singular(&self) -> bool {
        matches!(self, KernelKind::SingularScaled { .. })
    }

    fn base(&self) -> &KernelKind {
        match self {
            KernelKind::SingularScaled { base, .. } => base,
            other => other,
        }
    }

    fn is_diagonal_family(&self) -> bool {
        matches!(
            self.base(),
            KernelKind::Identity | KernelKind::ScalarExp { .. } | KernelKind::DiagonalExp { .. }
        )
    }

    /// Exponential rates of the diagonal family: `entry_k(t) = e^{mu_k t}`.
    fn diagonal_rates(&self, dim: usize) -> Vec<f64> {
        match self.base() {
            KernelKind::Identity => vec![0.0; dim],
            KernelKind::ScalarExp { lambda } => vec![*lambda; dim],
            KernelKind::DiagonalExp { lambdas } => lambdas.iter().map(|l| -l).collect(),
            KernelKind::MatrixExp { .. } | KernelKind::SingularScaled { .. } => {
                unreachable!("diagonal rates requested for a non-diagonal kind")
            }
        }
    }
}

/// Numeric estimate of the Hoelder-modulus constant `C_rho`, together with a
/// divergence flag raised when refining the mesh keeps growing the estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderEstimate {
    /// Estimate at the refined mesh.
    pub c_rho: f64,
    /// Estimate at the coarse mesh (half density).
    pub coarse: f64,
    /// True when `c_rho / coarse` exceeded the divergence factor.
    pub diverging: bool,
}

pub const HOLDER_DIVERGENCE_FACTOR: f64 = 2.0;

/// The kernel pair `(S, Ext)` with its analytic data.
pub struct Kernel {
    kind: KernelKind,
    horizon: f64,
    alpha: f64,
    rho: f64,
    v_space: Space,
    w_space: Space,
    /// Per-mode `W -> V` norm scale for the diagonal family; empty for matrix kinds.
    diag_scale: Vec<f64>,
    exp_cache: Mutex<HashMap<u64, Arc<DMatrix<f64>>>>,
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kernel")
            .field("kind", &self.kind)
            .field("horizon", &self.horizon)
            .field("alpha", &self.alpha)
            .field("rho", &self.rho)
            .finish()
    }
}

impl Clone for Kernel {
    fn clone(&self) -> Kernel {
        Kernel {
            kind: self.kind.clone(),
            horizon: self.horizon,
            alpha: self.alpha,
            rho: self.rho,
            v_space: Arc::clone(&self.v_space),
            w_space: Arc::clone(&self.w_space),
            diag_scale: self.diag_scale.clone(),
            exp_cache: Mutex::new(HashMap::new()),
        }
    }
}

fn norm_pair_compatible(w: &NormKind, v: &NormKind) -> bool {
    match (w.exponent(), v.exponent()) {
        (None, None) => true,
        (Some(p), Some(q)) => p == q,
        _ => false,
    }
}

impl Kernel {
    pub fn new(
        kind: KernelKind,
        horizon: f64,
        alpha: f64,
        rho: f64,
        v_space: Space,
        w_space: Space,
    ) -> Result<Kernel> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::validation("T", "horizon must be positive and finite"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::validation("alpha", "must lie in (0, 1)"));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::validation("rho", "must lie in (0, 1)"));
        }
        let dim = v_space.dim();
        if w_space.dim() != dim {
            return Err(Error::validation(
                "space",
                "V and W must have equal dimension (kernels act componentwise)",
            ));
        }
        if let KernelKind::SingularScaled { alpha0, base } = &kind {
            if !(*alpha0 > 0.0 && *alpha0 < 1.0) {
                return Err(Error::validation("kernel.alpha0", "must lie in (0, 1)"));
            }
            if base.is_singular() {
                return Err(Error::validation(
                    "kernel.base",
                    "singular_scaled kernels cannot be nested",
                ));
            }
        }
        match kind.base() {
            KernelKind::DiagonalExp { lambdas } => {
                if lambdas.len() != dim {
                    return Err(Error::validation(
                        "kernel.lambdas",
                        "length must equal the space dimension",
                    ));
                }
                if !lambdas.iter().all(|l| l.is_finite()) {
                    return Err(Error::validation("kernel.lambdas", "must be finite"));
                }
            }
            KernelKind::ScalarExp { lambda } => {
                if !lambda.is_finite() {
                    return Err(Error::validation("kernel.lambda", "must be finite"));
                }
            }
            KernelKind::MatrixExp { matrix } => {
                if matrix.nrows() != dim || matrix.ncols() != dim {
                    return Err(Error::validation(
                        "kernel.matrix",
                        "must be square with side equal to the space dimension",
                    ));
                }
                if !matrix.iter().all(|x| x.is_finite()) {
                    return Err(Error::validation("kernel.matrix", "entries must be finite"));
                }
                let supported = |n: &NormKind| {
                    matches!(n, NormKind::Sup | NormKind::Euclidean)
                        || matches!(n, NormKind::PNorm { p } if *p == 1.0 || *p == 2.0)
                };
                if !(supported(v_space.norm_kind())
                    && supported(w_space.norm_kind())
                    && norm_pair_compatible(w_space.norm_kind(), v_space.norm_kind()))
                {
                    return Err(Error::validation(
                        "space.norm",
                        "matrix_exp kernels need matching unweighted sup, euclidean, or 1-norms \
                         (operator norms are not available otherwise)",
                    ));
                }
            }
            KernelKind::Identity | KernelKind::SingularScaled { .. } => {}
        }
        let diag_scale = if kind.is_diagonal_family() {
            if !norm_pair_compatible(w_space.norm_kind(), v_space.norm_kind()) {
                return Err(Error::validation(
                    "space.norm",
                    "V and W norms must share the same exponent for diagonal kernels",
                ));
            }
            match w_space.norm_kind().exponent() {
                None => vec![1.0; dim],
                Some(p) => {
                    let ones = vec![1.0; dim];
                    let wa = w_space.norm_kind().weights().unwrap_or(&ones);
                    let wb = v_space.norm_kind().weights().unwrap_or(&ones);
                    wa.iter().zip(wb).map(|(a, b)| (b / a).powf(1.0 / p)).collect()
                }
            }
        } else {
            Vec::new()
        };
        Ok(Kernel {
            kind,
            horizon,
            alpha,
            rho,
            v_space,
            w_space,
            diag_scale,
            exp_cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn v_space(&self) -> &Space {
        &self.v_space
    }

    pub fn w_space(&self) -> &Space {
        &self.w_space
    }

    /// The `t^-a0` exponent when this kernel is singular.
    pub fn singular_exponent(&self) -> Option<f64> {
        match &self.kind {
            KernelKind::SingularScaled { alpha0, .. } => Some(*alpha0),
            _ => None,
        }
    }

    /// Whether `S_{t1+t2} = Ext_{t1} S_{t2}` holds exactly. The scalar
    /// `t^-a0` factor of singular kernels admits no time-homogeneous
    /// extension, so continuation across windows is only approximate there.
    pub fn has_exact_splitting(&self) -> bool {
        !self.kind.is_singular()
    }

    fn matrix_exp_at(&self, matrix: &DMatrix<f64>, t: f64) -> Arc<DMatrix<f64>> {
        let key = t.to_bits();
        let mut cache = self.exp_cache.lock().unwrap();
        if let Some(m) = cache.get(&key) {
            return Arc::clone(m);
        }
        let m = Arc::new((matrix * t).exp());
        cache.insert(key, Arc::clone(&m));
        m
    }

    /// Base-family application at `dt >= 0` (identity at `dt = 0`), without
    /// any singular factor. Result coordinates; no space bookkeeping.
    fn apply_base_coords(&self, dt: f64, coords: &[f64]) -> Vec<f64> {
        debug_assert!(dt >= 0.0);
        match self.kind.base() {
            KernelKind::Identity => coords.to_vec(),
            KernelKind::ScalarExp { lambda } => {
                let f = (lambda * dt).exp();
                coords.iter().map(|c| f * c).collect()
            }
            KernelKind::DiagonalExp { lambdas } => coords
                .iter()
                .zip(lambdas)
                .map(|(c, l)| (-l * dt).exp() * c)
                .collect(),
            KernelKind::MatrixExp { matrix } => {
                if dt == 0.0 {
                    return coords.to_vec();
                }
                let e = self.matrix_exp_at(matrix, dt);
                let v = nalgebra::DVector::from_column_slice(coords);
                (&*e * v).as_slice().to_vec()
            }
            KernelKind::SingularScaled { .. } => unreachable!("base of base"),
        }
    }

    fn finite_or_numeric(&self, coords: Vec<f64>, what: &str, t: f64) -> Result<Vec<f64>> {
        if coords.iter().all(|c| c.is_finite()) {
            Ok(coords)
        } else {
            Err(Error::numeric(format!("{what} produced a non-finite value at t = {t}")))
        }
    }

    /// `S_t w` for `t in (0, T)`.
    pub fn apply_kernel(&self, t: f64, w: &StateVector) -> Result<StateVector> {
        if !(t > 0.0 && t < self.horizon) {
            return Err(Error::domain(format!(
                "apply_kernel requires t in (0, {}), got {t}",
                self.horizon
            )));
        }
        if w.space() != &self.w_space {
            return Err(Error::contract("apply_kernel: vector not in the kernel's W space"));
        }
        let mut coords = self.apply_base_coords(t, w.coords());
        if let Some(a0) = self.singular_exponent() {
            let f = t.powf(-a0);
            for c in &mut coords {
                *c *= f;
            }
        }
        let coords = self.finite_or_numeric(coords, "kernel application", t)?;
        StateVector::new(coords, Arc::clone(&self.v_space))
    }

    /// Extension `Ext_t v` for `t in [0, T]`; `Ext_0` is the identity.
    pub fn apply_extended(&self, t: f64, v: &StateVector) -> Result<StateVector> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::domain(format!(
                "apply_extended requires t in [0, {}], got {t}",
                self.horizon
            )));
        }
        if v.space() != &self.v_space {
            return Err(Error::contract("apply_extended: vector not in the kernel's V space"));
        }
        if t == 0.0 {
            return Ok(v.clone());
        }
        let coords = self.apply_base_coords(t, v.coords());
        let coords = self.finite_or_numeric(coords, "extended kernel application", t)?;
        StateVector::new(coords, Arc::clone(&self.v_space))
    }

    /// Quadrature hook: the bounded base factor at history offset `dt >= 0`
    /// applied to a W-vector, landing in V. For non-singular kernels this is
    /// the full operator (continuously extended to `dt = 0`).
    pub(crate) fn apply_base_at(&self, dt: f64, w: &StateVector) -> Result<StateVector> {
        debug_assert!(w.space() == &self.w_space);
        let coords = self.apply_base_coords(dt.max(0.0), w.coords());
        let coords = self.finite_or_numeric(coords, "kernel application", dt)?;
        StateVector::new(coords, Arc::clone(&self.v_space))
    }

    /// Operator norm of the bounded base at `t >= 0`.
    fn opnorm_base(&self, t: f64) -> f64 {
        if self.kind.is_diagonal_family() {
            let rates = self.kind.diagonal_rates(self.v_space.dim());
            rates
                .iter()
                .zip(&self.diag_scale)
                .map(|(mu, s)| s * (mu * t).exp())
                .fold(0.0, f64::max)
        } else {
            let KernelKind::MatrixExp { matrix } = self.kind.base() else {
                unreachable!()
            };
            let e = self.matrix_exp_at(matrix, t);
            match self.v_space.norm_kind() {
                NormKind::Sup => max_row_sum(&e),
                NormKind::PNorm { p } if *p == 1.0 => max_col_sum(&e),
                _ => spectral_norm(&e),
            }
        }
    }

    /// Operator norm of the full family at `t > 0` (singular factor included).
    fn opnorm_full(&self, t: f64) -> f64 {
        let base = self.opnorm_base(t);
        match self.singular_exponent() {
            Some(a0) => t.powf(-a0) * base,
            None => base,
        }
    }

    /// `sup_{t in (0,T)} t^alpha ||S_t||`, exact for the diagonal family and
    /// mesh-maximized for matrix exponentials (`mesh >= 2` controls the
    /// geometric-plus-uniform point set clustered at the singularity).
    pub fn singularity_bound(&self, mesh: usize) -> Result<f64> {
        if mesh < 2 {
            return Err(Error::domain("singularity_bound requires mesh >= 2"));
        }
        let a0 = self.singular_exponent().unwrap_or(0.0);
        let beta = self.alpha - a0;
        if self.kind.is_diagonal_family() {
            let rates = self.kind.diagonal_rates(self.v_space.dim());
            let m = rates
                .iter()
                .zip(&self.diag_scale)
                .map(|(mu, s)| s * sup_power_exp(beta, *mu, self.horizon))
                .fold(0.0, f64::max);
            Ok(m)
        } else {
            if beta < 0.0 {
                // t^beta ||exp(tA)|| -> infinity as t -> 0
                return Ok(f64::INFINITY);
            }
            Ok(self.singularity_bound_mesh(mesh))
        }
    }

    /// Mesh-maximization estimate of the same supremum for any kind; always a
    /// lower bound, non-decreasing in mesh density.
    pub fn singularity_bound_mesh(&self, mesh: usize) -> f64 {
        self.mesh_points(mesh)
            .into_iter()
            .map(|t| t.powf(self.alpha) * self.opnorm_full(t))
            .fold(0.0, f64::max)
    }

    fn mesh_points(&self, mesh: usize) -> Vec<f64> {
        let t1 = self.horizon;
        let mut pts = Vec::with_capacity(2 * mesh + 2);
        for j in 1..=mesh.min(60) {
            pts.push(t1 * 2f64.powi(-(j as i32)));
        }
        for i in 1..mesh {
            pts.push(t1 * i as f64 / mesh as f64);
        }
        pts.push(t1 * (1.0 - 1e-9));
        pts
    }

    /// Operator norm of `S_u - S_s` for `0 < s < u < T`.
    fn opnorm_diff(&self, s: f64, u: f64) -> f64 {
        let a0 = self.singular_exponent().unwrap_or(0.0);
        let f = |t: f64| if a0 == 0.0 { 1.0 } else { t.powf(-a0) };
        if self.kind.is_diagonal_family() {
            let rates = self.kind.diagonal_rates(self.v_space.dim());
            rates
                .iter()
                .zip(&self.diag_scale)
                .map(|(mu, sc)| sc * (f(u) * (mu * u).exp() - f(s) * (mu * s).exp()).abs())
                .fold(0.0, f64::max)
        } else {
            let KernelKind::MatrixExp { matrix } = self.kind.base() else {
                unreachable!()
            };
            let eu = self.matrix_exp_at(matrix, u);
            let es = self.matrix_exp_at(matrix, s);
            let diff = &*eu * f(u) - &*es * f(s);
            match self.v_space.norm_kind() {
                NormKind::Sup => max_row_sum(&diff),
                NormKind::PNorm { p } if *p == 1.0 => max_col_sum(&diff),
                _ => spectral_norm(&diff),
            }
        }
    }

    /// Mesh estimate of `sup_{0<s<u<T} s^alpha ||S_u - S_s|| / (u-s)^rho`.
    ///
    /// Diagnostics only: a diverging estimate (growth beyond
    /// [`HOLDER_DIVERGENCE_FACTOR`] under mesh doubling) signals that the
    /// Hoelder continuation hypothesis looks violated for this kernel and is
    /// surfaced as a report warning, never a hard error.
    pub fn holder_modulus(&self, mesh: usize) -> Result<HolderEstimate> {
        if mesh < 2 {
            return Err(Error::domain("holder_modulus requires mesh >= 2"));
        }
        let coarse = self.holder_estimate(mesh);
        let refined = self.holder_estimate(2 * mesh);
        let diverging = coarse > 0.0 && refined / coarse > HOLDER_DIVERGENCE_FACTOR;
        Ok(HolderEstimate {
            c_rho: refined,
            coarse,
            diverging,
        })
    }

    fn holder_estimate(&self, mesh: usize) -> f64 {
        let t1 = self.horizon;
        let mut best = 0.0f64;
        for s in self.mesh_points(mesh) {
            if s >= t1 {
                continue;
            }
            let gap = t1 - s;
            // offsets from s, clustered small (Hoelder ratios peak there)
            for j in 1..=mesh.min(40) {
                let u = s + gap * 2f64.powi(-(j as i32));
                if u <= s || u >= t1 {
                    continue;
                }
                let r = s.powf(self.alpha) * self.opnorm_diff(s, u) / (u - s).powf(self.rho);
                best = best.max(r);
            }
            for i in 1..mesh {
                let u = s + gap * i as f64 / mesh as f64;
                if u <= s || u >= t1 {
                    continue;
                }
                let r = s.powf(self.alpha) * self.opnorm_diff(s, u) / (u - s).powf(self.rho);
                best = best.max(r);
            }
        }
        best
    }
}

/// `sup_{t in (0,T)} t^beta e^{mu t}` in closed form.
fn sup_power_exp(beta: f64, mu: f64, t1: f64) -> f64 {
    if beta < 0.0 {
        return f64::INFINITY;
    }
    if beta == 0.0 {
        return if mu <= 0.0 { 1.0 } else { (mu * t1).exp() };
    }
    let at_end = t1.powf(beta) * (mu * t1).exp();
    if mu >= 0.0 {
        return at_end;
    }
    let t_star = beta / (-mu);
    if t_star < t1 {
        t_star.powf(beta) * (mu * t_star).exp()
    } else {
        at_end
    }
}

pub(crate) fn max_row_sum(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub(crate) fn max_col_sum(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Operator norm of a matrix between two spaces with matching unweighted
/// norm kinds (sup, euclidean, or 1-norm).
pub(crate) fn matrix_opnorm(m: &DMatrix<f64>, from: &NormKind, to: &NormKind) -> Result<f64> {
    if !norm_pair_compatible(from, to) || from.weights().is_some() || to.weights().is_some() {
        return Err(Error::validation(
            "space.norm",
            "matrix operator norms need matching unweighted sup, euclidean, or 1-norms",
        ));
    }
    match to {
        NormKind::Sup => Ok(max_row_sum(m)),
        NormKind::Euclidean => Ok(spectral_norm(m)),
        NormKind::PNorm { p } if *p == 1.0 => Ok(max_col_sum(m)),
        NormKind::PNorm { p } if *p == 2.0 => Ok(spectral_norm(m)),
        _ => Err(Error::validation(
            "space.norm",
            "matrix operator norms need matching unweighted sup, euclidean, or 1-norms",
        )),
    }
}
