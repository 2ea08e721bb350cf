//! Nonlinearities `F : V -> W` with closed-form local Lipschitz moduli.
//!
//! Every built-in kind carries a polynomial `Psi(r)` with nonnegative
//! coefficients such that `||F(v) - F(w)|| <= Psi(r) ||v - w||` whenever
//! `||v|| + ||w|| <= r`. The modulus is the certificate the contraction
//! windows are built from, so it must be a sound upper bound;
//! [`Nonlinearity::audit_psi`] spot-checks it against sampled difference
//! quotients but never replaces it.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::matrix_opnorm;
use crate::space::{NormKind, Space, StateVector};

/// Polynomial in `r` with nonnegative coefficients, low order first.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiForm {
    coeffs: Vec<f64>,
}

impl PsiForm {
    pub fn new(coeffs: Vec<f64>) -> Result<PsiForm> {
        if !coeffs.iter().all(|c| c.is_finite() && *c >= 0.0) {
            return Err(Error::validation(
                "psi_form",
                "coefficients must be finite and nonnegative",
            ));
        }
        Ok(PsiForm { coeffs })
    }

    pub fn constant(c: f64) -> Result<PsiForm> {
        PsiForm::new(vec![c])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c)
    }
}

type CustomEval = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Nonlinearity selector. The polynomial kinds act componentwise
/// (Nemytskii operators).
#[derive(Clone)]
pub enum NonlinKind {
    /// `F(v) = A v`.
    Linear { matrix: DMatrix<f64> },
    /// Componentwise `F(v)_k = p(v_k)` with `p` given low order first.
    PolynomialScalar { coeffs: Vec<f64> },
    /// Componentwise `F(v)_k = v_k^2`.
    QuadraticRiccati,
    /// Componentwise `F(v)_k = v_k - v_k^3`.
    CubicReaction,
    /// User-supplied evaluator with a user-supplied (trusted) modulus.
    Custom { eval: CustomEval, psi: PsiForm },
}

impl std::fmt::Debug for NonlinKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NonlinKind::Linear { matrix } => f.debug_struct("Linear").field("matrix", matrix).finish(),
            NonlinKind::PolynomialScalar { coeffs } => {
                f.debug_struct("PolynomialScalar").field("coeffs", coeffs).finish()
            }
            NonlinKind::QuadraticRiccati => f.write_str("QuadraticRiccati"),
            NonlinKind::CubicReaction => f.write_str("CubicReaction"),
            NonlinKind::Custom { psi, .. } => f.debug_struct("Custom").field("psi", psi).finish(),
        }
    }
}

/// Result of a randomized Lipschitz-modulus audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiAudit {
    pub max_observed_ratio: f64,
    pub violated: bool,
}

/// Relative headroom granted to the audit before declaring a violation.
pub const DEFAULT_AUDIT_TOL: f64 = 1e-8;

/// The map `F` together with its modulus `Psi`.
#[derive(Debug, Clone)]
pub struct Nonlinearity {
    kind: NonlinKind,
    psi: PsiForm,
    v_space: Space,
    w_space: Space,
}

fn nemytskii_norms_ok(v: &NormKind, w: &NormKind) -> bool {
    // componentwise Lipschitz transfer needs |v_k| <= ||v|| and identical
    // exponents on both sides; weights break the first property
    if v != w {
        return false;
    }
    matches!(v, NormKind::Sup | NormKind::Euclidean | NormKind::PNorm { .. })
}

impl Nonlinearity {
    pub fn new(kind: NonlinKind, v_space: Space, w_space: Space) -> Result<Nonlinearity> {
        let dim = v_space.dim();
        if w_space.dim() != dim {
            return Err(Error::validation(
                "nonlinearity",
                "V and W must have equal dimension",
            ));
        }
        let psi = match &kind {
            NonlinKind::Linear { matrix } => {
                if matrix.nrows() != dim || matrix.ncols() != dim {
                    return Err(Error::validation(
                        "nonlinearity.matrix",
                        "must be square with side equal to the space dimension",
                    ));
                }
                PsiForm::constant(matrix_opnorm(
                    matrix,
                    v_space.norm_kind(),
                    w_space.norm_kind(),
                )?)?
            }
            NonlinKind::PolynomialScalar { coeffs } => {
                if coeffs.is_empty() || !coeffs.iter().all(|c| c.is_finite()) {
                    return Err(Error::validation(
                        "nonlinearity.coeffs",
                        "must be non-empty and finite",
                    ));
                }
                if !nemytskii_norms_ok(v_space.norm_kind(), w_space.norm_kind()) {
                    return Err(Error::validation(
                        "space.norm",
                        "componentwise nonlinearities need identical unweighted norms on V and W",
                    ));
                }
                // |p(x) - p(y)| <= p'-bound on [-r, r] * |x - y|
                PsiForm::new(
                    coeffs
                        .iter()
                        .enumerate()
                        .skip(1)
                        .map(|(i, c)| i as f64 * c.abs())
                        .collect(),
                )?
            }
            NonlinKind::QuadraticRiccati => {
                if !nemytskii_norms_ok(v_space.norm_kind(), w_space.norm_kind()) {
                    return Err(Error::validation(
                        "space.norm",
                        "componentwise nonlinearities need identical unweighted norms on V and W",
                    ));
                }
                // |v^2 - w^2| = |v + w| |v - w| <= r |v - w|
                PsiForm::new(vec![0.0, 1.0])?
            }
            NonlinKind::CubicReaction => {
                if !nemytskii_norms_ok(v_space.norm_kind(), w_space.norm_kind()) {
                    return Err(Error::validation(
                        "space.norm",
                        "componentwise nonlinearities need identical unweighted norms on V and W",
                    ));
                }
                // |(v - v^3) - (w - w^3)| <= (1 + |v^2 + vw + w^2|) |v - w|
                // and v^2 + vw + w^2 <= (|v| + |w|)^2 <= r^2
                PsiForm::new(vec![1.0, 0.0, 1.0])?
            }
            NonlinKind::Custom { psi, .. } => psi.clone(),
        };
        Ok(Nonlinearity {
            kind,
            psi,
            v_space,
            w_space,
        })
    }

    pub fn kind(&self) -> &NonlinKind {
        &self.kind
    }

    pub fn psi_form(&self) -> &PsiForm {
        &self.psi
    }

    pub fn v_space(&self) -> &Space {
        &self.v_space
    }

    pub fn w_space(&self) -> &Space {
        &self.w_space
    }

    /// Evaluate `F(v)`, landing in W.
    pub fn eval(&self, v: &StateVector) -> Result<StateVector> {
        if v.space() != &self.v_space {
            return Err(Error::contract("eval: vector not in the nonlinearity's V space"));
        }
        let coords: Vec<f64> = match &self.kind {
            NonlinKind::Linear { matrix } => {
                let x = nalgebra::DVector::from_column_slice(v.coords());
                (matrix * x).as_slice().to_vec()
            }
            NonlinKind::PolynomialScalar { coeffs } => v
                .coords()
                .iter()
                .map(|&x| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c))
                .collect(),
            NonlinKind::QuadraticRiccati => v.coords().iter().map(|x| x * x).collect(),
            NonlinKind::CubicReaction => v.coords().iter().map(|x| x - x * x * x).collect(),
            NonlinKind::Custom { eval, .. } => {
                let mut out = vec![0.0; self.w_space.dim()];
                eval(v.coords(), &mut out);
                out
            }
        };
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::numeric(format!(
                "nonlinearity produced non-finite value at component {i}"
            )));
        }
        StateVector::new(coords, Arc::clone(&self.w_space))
    }

    /// The modulus `Psi(r)`: a sound Lipschitz constant for the ball
    /// `||v|| + ||w|| <= r`.
    pub fn lipschitz_modulus(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        self.psi.eval(r.max(0.0))
    }

    /// `||F(0)||_W`, the constant in the ball-invariance window bound.
    pub fn f0_norm(&self) -> Result<f64> {
        Ok(self.eval(&StateVector::zero(&self.v_space))?.norm())
    }

    /// Randomized audit of `Psi`: draws `samples` pairs with
    /// `||v|| + ||w|| <= r` (half of them close pairs, which probe the local
    /// derivative) and reports the largest difference quotient. `violated`
    /// means the modulus is not an upper bound and every certificate built
    /// from it would be unsound; callers treat that as a fatal config error.
    pub fn audit_psi(&self, r: f64, samples: usize, seed: u64) -> Result<PsiAudit> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::domain(format!("audit radius must be nonnegative, got {r}")));
        }
        if samples == 0 {
            return Err(Error::domain("audit needs at least one sample"));
        }
        let dim = self.v_space.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
        };
        let mut max_ratio = 0.0f64;
        for i in 0..samples {
            let budget = r * rng.gen::<f64>();
            let (v, w) = if i % 2 == 0 {
                // independent pair splitting the norm budget
                let sigma = rng.gen::<f64>();
                let va = raw(&mut rng);
                let wa = raw(&mut rng);
                let nv = self.v_space.norm_of(&va);
                let nw = self.v_space.norm_of(&wa);
                if nv == 0.0 || nw == 0.0 {
                    continue;
                }
                let v: Vec<f64> = va.iter().map(|x| x * sigma * budget / nv).collect();
                let w: Vec<f64> = wa.iter().map(|x| x * (1.0 - sigma) * budget / nw).collect();
                (v, w)
            } else {
                // close pair: w = v + small delta
                let va = raw(&mut rng);
                let da = raw(&mut rng);
                let nv = self.v_space.norm_of(&va);
                let nd = self.v_space.norm_of(&da);
                if nv == 0.0 || nd == 0.0 {
                    continue;
                }
                let v: Vec<f64> = va.iter().map(|x| x * 0.49 * budget / nv).collect();
                let eps = 0.01 * budget / nd;
                let w: Vec<f64> = v.iter().zip(&da).map(|(x, d)| x + eps * d).collect();
                (v, w)
            };
            let vv = StateVector::new(v, Arc::clone(&self.v_space))?;
            let wv = StateVector::new(w, Arc::clone(&self.v_space))?;
            let denom = vv.sub(&wv).norm();
            if denom == 0.0 {
                continue;
            }
            let num = self.eval(&vv)?.sub(&self.eval(&wv)?).norm();
            max_ratio = max_ratio.max(num / denom);
        }
        let bound = self.lipschitz_modulus(r);
        Ok(PsiAudit {
            max_observed_ratio: max_ratio,
            violated: max_ratio > bound * (1.0 + DEFAULT_AUDIT_TOL) + f64::MIN_POSITIVE,
        })
    }
}
