//! Finite-dimensional normed state spaces and grid-sampled continuous paths.
//!
//! `SpaceSpec` is a finite-dimensional stand-in for the state spaces the
//! solver works on; `StateVector` is a point, `Trajectory` a piecewise-linear
//! path `[t0, t1] -> V` sampled on a strictly increasing grid. Everything is
//! immutable after construction and cheap to share via `Arc`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm selector for a [`SpaceSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormKind {
    Euclidean,
    Sup,
    PNorm { p: f64 },
    WeightedP { p: f64, weights: Vec<f64> },
}

impl NormKind {
    /// The `p` exponent of this norm; `None` for the sup norm.
    pub(crate) fn exponent(&self) -> Option<f64> {
        match self {
            NormKind::Euclidean => Some(2.0),
            NormKind::Sup => None,
            NormKind::PNorm { p } | NormKind::WeightedP { p, .. } => Some(*p),
        }
    }

    pub(crate) fn weights(&self) -> Option<&[f64]> {
        match self {
            NormKind::WeightedP { weights, .. } => Some(weights),
            _ => None,
        }
    }
}

/// A finite-dimensional normed space `(R^dim, norm)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    dim: usize,
    norm: NormKind,
}

/// Shared handle to a space; vectors and trajectories hold one of these.
pub type Space = Arc<SpaceSpec>;

impl SpaceSpec {
    pub fn new(dim: usize, norm: NormKind) -> Result<SpaceSpec> {
        if dim == 0 {
            return Err(Error::validation("dim", "must be >= 1"));
        }
        match &norm {
            NormKind::PNorm { p } => {
                if !(p.is_finite() && *p >= 1.0) {
                    return Err(Error::validation("norm.p", "must be finite and >= 1"));
                }
            }
            NormKind::WeightedP { p, weights } => {
                if !(p.is_finite() && *p >= 1.0) {
                    return Err(Error::validation("norm.p", "must be finite and >= 1"));
                }
                if weights.len() != dim {
                    return Err(Error::validation("norm.weights", "length must equal dim"));
                }
                if !weights.iter().all(|w| w.is_finite() && *w > 0.0) {
                    return Err(Error::validation(
                        "norm.weights",
                        "all weights must be strictly positive and finite",
                    ));
                }
            }
            NormKind::Euclidean | NormKind::Sup => {}
        }
        Ok(SpaceSpec { dim, norm })
    }

    pub fn shared(dim: usize, norm: NormKind) -> Result<Space> {
        Ok(Arc::new(SpaceSpec::new(dim, norm)?))
    }

    /// Shorthand for the sup-norm space of dimension `dim`.
    pub fn sup(dim: usize) -> Space {
        Arc::new(SpaceSpec::new(dim, NormKind::Sup).expect("dim >= 1"))
    }

    /// Shorthand for the euclidean space of dimension `dim`.
    pub fn euclidean(dim: usize) -> Space {
        Arc::new(SpaceSpec::new(dim, NormKind::Euclidean).expect("dim >= 1"))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm_kind(&self) -> &NormKind {
        &self.norm
    }

    /// Norm of a raw coordinate slice under this space's norm.
    pub fn norm_of(&self, coords: &[f64]) -> f64 {
        debug_assert_eq!(coords.len(), self.dim);
        match &self.norm {
            NormKind::Euclidean => coords.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormKind::Sup => coords.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            NormKind::PNorm { p } => coords
                .iter()
                .map(|x| x.abs().powf(*p))
                .sum::<f64>()
                .powf(1.0 / *p),
            NormKind::WeightedP { p, weights } => coords
                .iter()
                .zip(weights)
                .map(|(x, w)| w * x.abs().powf(*p))
                .sum::<f64>()
                .powf(1.0 / *p),
        }
    }
}

fn same_space(a: &Space, b: &Space) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// A point of a [`SpaceSpec`]; entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    coords: Vec<f64>,
    space: Space,
}

impl StateVector {
    pub fn new(coords: Vec<f64>, space: Space) -> Result<StateVector> {
        if coords.len() != space.dim() {
            return Err(Error::contract(format!(
                "coordinate length {} does not match space dim {}",
                coords.len(),
                space.dim()
            )));
        }
        if let Some(i) = coords.iter().position(|x| !x.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite entry {} at component {i}",
                coords[i]
            )));
        }
        Ok(StateVector { coords, space })
    }

    pub fn zero(space: &Space) -> StateVector {
        StateVector {
            coords: vec![0.0; space.dim()],
            space: Arc::clone(space),
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn norm(&self) -> f64 {
        self.space.norm_of(&self.coords)
    }

    pub fn add(&self, rhs: &StateVector) -> StateVector {
        assert!(same_space(&self.space, &rhs.space), "space mismatch in add");
        let coords = self
            .coords
            .iter()
            .zip(&rhs.coords)
            .map(|(a, b)| a + b)
            .collect();
        StateVector {
            coords,
            space: Arc::clone(&self.space),
        }
    }

    pub fn sub(&self, rhs: &StateVector) -> StateVector {
        assert!(same_space(&self.space, &rhs.space), "space mismatch in sub");
        let coords = self
            .coords
            .iter()
            .zip(&rhs.coords)
            .map(|(a, b)| a - b)
            .collect();
        StateVector {
            coords,
            space: Arc::clone(&self.space),
        }
    }

    pub fn scale(&self, factor: f64) -> StateVector {
        StateVector {
            coords: self.coords.iter().map(|a| factor * a).collect(),
            space: Arc::clone(&self.space),
        }
    }

    /// `self + factor * rhs`, the only compound update the solver needs.
    pub fn axpy(&self, factor: f64, rhs: &StateVector) -> StateVector {
        assert!(same_space(&self.space, &rhs.space), "space mismatch in axpy");
        let coords = self
            .coords
            .iter()
            .zip(&rhs.coords)
            .map(|(a, b)| a + factor * b)
            .collect();
        StateVector {
            coords,
            space: Arc::clone(&self.space),
        }
    }

    /// Reinterpret the same coordinates as a point of `space`.
    pub fn in_space(&self, space: &Space) -> Result<StateVector> {
        StateVector::new(self.coords.clone(), Arc::clone(space))
    }
}

/// Interpolation rule for [`Trajectory`]; only piecewise-linear in v1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    PiecewiseLinear,
}

/// A grid-sampled continuous path `[t0, t1] -> V`.
///
/// The stored values are the path's exact samples at the grid nodes and
/// evaluation between nodes is piecewise-linear. For two trajectories with
/// this interpolation the difference is again piecewise-linear, and the norm
/// of an affine segment is convex in `t`, so sup-norm distances over a merged
/// grid are attained at grid nodes; [`sup_distance`] exploits this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryRepr", into = "TrajectoryRepr")]
pub struct Trajectory {
    grid: Vec<f64>,
    values: Vec<StateVector>,
    space: Space,
    interpolation: Interpolation,
}

/// Serialized form of a trajectory: one space, coordinate rows per node.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRepr {
    space: SpaceSpec,
    interpolation: Interpolation,
    grid: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl From<Trajectory> for TrajectoryRepr {
    fn from(t: Trajectory) -> TrajectoryRepr {
        TrajectoryRepr {
            space: (*t.space).clone(),
            interpolation: t.interpolation,
            grid: t.grid,
            values: t.values.into_iter().map(|v| v.coords).collect(),
        }
    }
}

impl TryFrom<TrajectoryRepr> for Trajectory {
    type Error = Error;

    fn try_from(repr: TrajectoryRepr) -> Result<Trajectory> {
        let space = Arc::new(SpaceSpec::new(repr.space.dim, repr.space.norm)?);
        let values = repr
            .values
            .into_iter()
            .map(|coords| StateVector::new(coords, Arc::clone(&space)))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(repr.grid, values)
    }
}

impl Trajectory {
    pub fn new(grid: Vec<f64>, values: Vec<StateVector>) -> Result<Trajectory> {
        if grid.is_empty() {
            return Err(Error::contract("trajectory grid must be non-empty"));
        }
        if grid.len() != values.len() {
            return Err(Error::contract(format!(
                "grid has {} nodes but {} values supplied",
                grid.len(),
                values.len()
            )));
        }
        if !grid.iter().all(|t| t.is_finite()) {
            return Err(Error::numeric("non-finite grid node"));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract("grid must be strictly increasing"));
        }
        let space = Arc::clone(values[0].space());
        if !values.iter().all(|v| same_space(v.space(), &space)) {
            return Err(Error::contract("all trajectory values must share one space"));
        }
        Ok(Trajectory {
            grid,
            values,
            space,
            interpolation: Interpolation::PiecewiseLinear,
        })
    }

    /// Sample `f` on `grid`.
    pub fn from_fn(
        grid: Vec<f64>,
        space: &Space,
        mut f: impl FnMut(f64) -> Result<StateVector>,
    ) -> Result<Trajectory> {
        let values = grid.iter().map(|&t| f(t)).collect::<Result<Vec<_>>>()?;
        for v in &values {
            if !same_space(v.space(), space) {
                return Err(Error::contract("sampled value lies in the wrong space"));
            }
        }
        Trajectory::new(grid, values)
    }

    /// Constant path `t -> c` on `[t0, t1]`.
    pub fn constant(t0: f64, t1: f64, c: &StateVector) -> Result<Trajectory> {
        Trajectory::new(vec![t0, t1], vec![c.clone(), c.clone()])
    }

    pub fn t0(&self) -> f64 {
        self.grid[0]
    }

    pub fn t1(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a trajectory always has at least one node
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[StateVector] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &StateVector {
        &self.values[i]
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    /// Piecewise-linear evaluation at `t in [t0, t1]`.
    ///
    /// Arguments within a relative `1e-9` of the endpoints are clamped so
    /// accumulated floating-point drift in window arithmetic never turns a
    /// boundary evaluation into an error.
    pub fn eval(&self, t: f64) -> Result<StateVector> {
        let (t0, t1) = (self.t0(), self.t1());
        let tol = 1e-9 * (1.0 + t1.abs().max(t0.abs()));
        if t < t0 - tol || t > t1 + tol {
            return Err(Error::domain(format!(
                "evaluation time {t} outside trajectory interval [{t0}, {t1}]"
            )));
        }
        let t = t.clamp(t0, t1);
        // index of the panel [grid[i], grid[i+1]] containing t
        let i = match self.grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
            Ok(exact) => return Ok(self.values[exact].clone()),
            Err(0) => return Ok(self.values[0].clone()),
            Err(j) if j >= self.grid.len() => return Ok(self.values.last().unwrap().clone()),
            Err(j) => j - 1,
        };
        let (a, b) = (self.grid[i], self.grid[i + 1]);
        let w = (t - a) / (b - a);
        Ok(self.values[i].scale(1.0 - w).axpy(w, &self.values[i + 1]))
    }

    /// Exact sup over `[t0, t1]` of `t -> ||x(t)||`; attained at a grid node
    /// because the norm of an affine segment is convex.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(StateVector::norm).fold(0.0, f64::max)
    }

    /// Apply `f` to every node value, producing a path in `target` space.
    pub fn map_values(
        &self,
        target: &Space,
        mut f: impl FnMut(&StateVector) -> Result<StateVector>,
    ) -> Result<Trajectory> {
        let values = self
            .values
            .iter()
            .map(|v| {
                let w = f(v)?;
                if !same_space(w.space(), target) {
                    return Err(Error::contract("mapped value lies in the wrong space"));
                }
                Ok(w)
            })
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(self.grid.clone(), values)
    }

    /// Resample onto `grid` by interpolation (exact at shared nodes).
    pub fn resample(&self, grid: Vec<f64>) -> Result<Trajectory> {
        let values = grid
            .iter()
            .map(|&t| self.eval(t))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(grid, values)
    }

    /// Shift the time axis by `offset` (grid nodes move, values do not).
    pub fn shift_time(&self, offset: f64) -> Trajectory {
        Trajectory {
            grid: self.grid.iter().map(|t| t + offset).collect(),
            values: self.values.clone(),
            space: Arc::clone(&self.space),
            interpolation: self.interpolation,
        }
    }
}

/// Uniform grid of `n >= 2` nodes on `[t0, t1]` with exact endpoints.
pub fn uniform_grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "uniform grid needs at least two nodes");
    assert!(t1 > t0, "uniform grid needs t1 > t0");
    let dt = (t1 - t0) / (n - 1) as f64;
    let mut grid: Vec<f64> = (0..n).map(|i| t0 + dt * i as f64).collect();
    grid[n - 1] = t1;
    grid
}

/// Sup-metric on path space, evaluated over the union of both grids plus
/// `probe` equispaced sample points.
///
/// For two piecewise-linear trajectories the merged-grid maximum is already
/// exact (norms of affine segments are convex); the probe points guard the
/// day other interpolation rules arrive.
pub fn sup_distance(x: &Trajectory, y: &Trajectory, probe: usize) -> Result<f64> {
    if !same_space(x.space(), y.space()) {
        return Err(Error::contract("sup_distance: trajectories in different spaces"));
    }
    let span = x.t1() - x.t0();
    let tol = 1e-12 * (1.0 + span.abs());
    if (x.t0() - y.t0()).abs() > tol || (x.t1() - y.t1()).abs() > tol {
        return Err(Error::contract(format!(
            "sup_distance: intervals differ: [{}, {}] vs [{}, {}]",
            x.t0(),
            x.t1(),
            y.t0(),
            y.t1()
        )));
    }
    if probe < x.len().max(y.len()) {
        return Err(Error::contract(
            "sup_distance: probe must be at least the node count of either trajectory",
        ));
    }
    let mut best = 0.0f64;
    let mut visit = |t: f64| -> Result<()> {
        let d = x.eval(t)?.sub(&y.eval(t)?).norm();
        if d > best {
            best = d;
        }
        Ok(())
    };
    for &t in x.grid() {
        visit(t)?;
    }
    for &t in y.grid() {
        visit(t.clamp(x.t0(), x.t1()))?;
    }
    if span > 0.0 && probe > 1 {
        let dt = span / (probe - 1) as f64;
        for i in 0..probe {
            visit((x.t0() + dt * i as f64).min(x.t1()))?;
        }
    }
    Ok(best)
}
