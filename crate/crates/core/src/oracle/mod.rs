//! Exact image-space half-quadratic-splitting solver.
//!
//! This is the non-learned counterpart of the unfolding network: the priors
//! are quadratic couplings `½‖a − α‖²` and every degradation is a positive
//! per-pixel gain, so each subproblem (alignment, the two proximal updates,
//! and data consistency) has a closed form. The network stages mirror one
//! outer iteration of [`solve`].
//!
//! The objective tracked by [`energy`] is
//!
//! ```text
//! ½‖y₂ − D₂x‖² + λ₁·½‖D₁u − α₁‖² + λ₃·½‖D₃v − α₃‖² + β₁/2‖u − x‖² + β₃/2‖v − x‖²
//! ```

mod problem_file;

pub use problem_file::{LoadedProblem, ProblemFile, ProblemSource};

use ndarray::Zip;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, ExecMode};
use crate::Image;

/// Absolute slack allowed on the energy trace before the solver reports a bug.
pub const ENERGY_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("shape mismatch in `{field}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        field: &'static str,
        expected: [usize; 3],
        found: [usize; 3],
    },
    #[error("degradation gains must be finite and strictly positive (first offender {value} at {index:?})")]
    InvalidGain { value: f64, index: [usize; 3] },
    #[error("`{field}` must be strictly positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("prior weight must be nonnegative, got {0}")]
    NegativeWeight(f64),
    #[error("max_iters must be at least 1")]
    NoIterations,
    #[error("energy increased from {previous:e} to {current:e} at iteration {iteration}")]
    Divergence {
        iteration: usize,
        previous: f64,
        current: f64,
    },
}

type OResult<T> = std::result::Result<T, OracleError>;

fn dims(a: &Image) -> [usize; 3] {
    let (c, h, w) = a.dim();
    [c, h, w]
}

fn check_shape(field: &'static str, expected: [usize; 3], a: &Image) -> OResult<()> {
    let found = dims(a);
    if found != expected {
        return Err(OracleError::ShapeMismatch {
            field,
            expected,
            found,
        });
    }
    Ok(())
}

fn check_positive(field: &'static str, value: f64) -> OResult<()> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(OracleError::NonPositive { field, value });
    }
    Ok(())
}

fn half_sq_dist(a: &Image, b: &Image) -> f64 {
    Zip::from(a)
        .and(b)
        .fold(0.0, |acc, &p, &q| acc + 0.5 * (p - q) * (p - q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegradationKind {
    Diagonal,
}

/// Linear degradation `y = D x`, restricted to positive per-pixel gains.
///
/// A diagonal operator is its own transpose, so [`apply_transpose`] and
/// [`apply`] coincide; they are kept separate so call sites read like the
/// normal equations they implement.
///
/// [`apply`]: DegradationOp::apply
/// [`apply_transpose`]: DegradationOp::apply_transpose
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationOp {
    gains: Image,
}

impl DegradationOp {
    pub fn diagonal(gains: Image) -> OResult<Self> {
        if let Some((idx, &value)) = gains
            .indexed_iter()
            .find(|(_, g)| !(g.is_finite() && **g > 0.0))
        {
            return Err(OracleError::InvalidGain {
                value,
                index: [idx.0, idx.1, idx.2],
            });
        }
        Ok(Self { gains })
    }

    pub fn uniform(shape: (usize, usize, usize), gain: f64) -> OResult<Self> {
        Self::diagonal(Image::from_elem(shape, gain))
    }

    pub fn identity(shape: (usize, usize, usize)) -> Self {
        Self {
            gains: Image::ones(shape),
        }
    }

    pub fn kind(&self) -> DegradationKind {
        DegradationKind::Diagonal
    }

    pub fn gains(&self) -> &Image {
        &self.gains
    }

    pub fn shape(&self) -> [usize; 3] {
        dims(&self.gains)
    }

    pub fn apply(&self, x: &Image) -> OResult<Image> {
        check_shape("operand", self.shape(), x)?;
        Ok(&self.gains * x)
    }

    pub fn apply_transpose(&self, y: &Image) -> OResult<Image> {
        self.apply(y)
    }

    /// `D x + n`; the additive field is only used when synthesising observations.
    pub fn observe(&self, x: &Image, noise: Option<&Image>) -> OResult<Image> {
        let mut y = self.apply(x)?;
        if let Some(n) = noise {
            check_shape("noise", self.shape(), n)?;
            y += n;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignedSlot {
    Alpha1,
    Alpha3,
}

/// `λ·p(a, α)` with `p(a, α) = ½‖a − α‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticPrior {
    weight: f64,
    slot: AlignedSlot,
}

impl QuadraticPrior {
    pub fn new(weight: f64, slot: AlignedSlot) -> OResult<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(OracleError::NegativeWeight(weight));
        }
        Ok(Self { weight, slot })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn slot(&self) -> AlignedSlot {
        self.slot
    }

    /// Unweighted prior value.
    pub fn value(&self, a: &Image, aligned: &Image) -> f64 {
        half_sq_dist(a, aligned)
    }

    /// Gradient of the unweighted prior with respect to the aligned variable.
    pub fn grad_aligned(&self, a: &Image, aligned: &Image) -> Image {
        aligned - a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleProblem {
    pub y1: Image,
    pub y2: Image,
    pub y3: Image,
    pub d1: DegradationOp,
    pub d2: DegradationOp,
    pub d3: DegradationOp,
    pub prior1: QuadraticPrior,
    pub prior3: QuadraticPrior,
    pub step1: f64,
    pub step3: f64,
}

impl OracleProblem {
    /// Problem with the default weights `λ₁ = λ₃ = 1` and unit step sizes.
    pub fn new(
        observations: [Image; 3],
        degradations: [DegradationOp; 3],
    ) -> OResult<Self> {
        let [y1, y2, y3] = observations;
        let [d1, d2, d3] = degradations;
        let problem = Self {
            y1,
            y2,
            y3,
            d1,
            d2,
            d3,
            prior1: QuadraticPrior::new(1.0, AlignedSlot::Alpha1)?,
            prior3: QuadraticPrior::new(1.0, AlignedSlot::Alpha3)?,
            step1: 1.0,
            step3: 1.0,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_weights(mut self, lambda1: f64, lambda3: f64) -> OResult<Self> {
        self.prior1 = QuadraticPrior::new(lambda1, AlignedSlot::Alpha1)?;
        self.prior3 = QuadraticPrior::new(lambda3, AlignedSlot::Alpha3)?;
        Ok(self)
    }

    pub fn with_steps(mut self, step1: f64, step3: f64) -> OResult<Self> {
        check_positive("step1", step1)?;
        check_positive("step3", step3)?;
        self.step1 = step1;
        self.step3 = step3;
        Ok(self)
    }

    pub fn shape(&self) -> [usize; 3] {
        dims(&self.y2)
    }

    pub fn validate(&self) -> OResult<()> {
        let s = self.shape();
        check_shape("y1", s, &self.y1)?;
        check_shape("y3", s, &self.y3)?;
        check_shape("d1", s, &self.d1.gains)?;
        check_shape("d2", s, &self.d2.gains)?;
        check_shape("d3", s, &self.d3.gains)?;
        Ok(())
    }

    /// `κ₁ = λ₁ / β₁`, the scale of the first proximal operator.
    pub fn kappa1(&self, beta1: f64) -> f64 {
        self.prior1.weight / beta1
    }

    pub fn kappa3(&self, beta3: f64) -> f64 {
        self.prior3.weight / beta3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: Image,
    pub alpha1: Image,
    pub alpha3: Image,
    pub u: Image,
    pub v: Image,
    pub beta1: f64,
    pub beta3: f64,
    pub energy_trace: Vec<f64>,
}

impl SolverState {
    /// Starts from the reference observation: `x = u = v = y₂` and the
    /// aligned variables at the raw non-reference observations.
    pub fn initial(problem: &OracleProblem, beta1: f64, beta3: f64) -> OResult<Self> {
        check_positive("beta1", beta1)?;
        check_positive("beta3", beta3)?;
        problem.validate()?;
        Ok(Self {
            x: problem.y2.clone(),
            alpha1: problem.y1.clone(),
            alpha3: problem.y3.clone(),
            u: problem.y2.clone(),
            v: problem.y2.clone(),
            beta1,
            beta3,
            energy_trace: Vec::new(),
        })
    }

    pub fn validate(&self, shape: [usize; 3]) -> OResult<()> {
        check_shape("x", shape, &self.x)?;
        check_shape("alpha1", shape, &self.alpha1)?;
        check_shape("alpha3", shape, &self.alpha3)?;
        check_shape("u", shape, &self.u)?;
        check_shape("v", shape, &self.v)?;
        check_positive("beta1", self.beta1)?;
        check_positive("beta3", self.beta3)?;
        Ok(())
    }
}

fn check_pair(problem: &OracleProblem, state: &SolverState) -> OResult<()> {
    problem.validate()?;
    state.validate(problem.shape())
}

pub fn energy(problem: &OracleProblem, state: &SolverState) -> OResult<f64> {
    check_pair(problem, state)?;
    let fidelity = half_sq_dist(&problem.y2, &problem.d2.apply(&state.x)?);
    let p1 = problem
        .prior1
        .value(&problem.d1.apply(&state.u)?, &state.alpha1);
    let p3 = problem
        .prior3
        .value(&problem.d3.apply(&state.v)?, &state.alpha3);
    let cu = half_sq_dist(&state.u, &state.x);
    let cv = half_sq_dist(&state.v, &state.x);
    Ok(fidelity
        + problem.prior1.weight * p1
        + problem.prior3.weight * p3
        + state.beta1 * cu
        + state.beta3 * cv)
}

/// How the aligned variables are moved toward `D_i x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignMode {
    /// One gradient step of size `ς_i` on the prior.
    Gradient,
    /// Jump to the minimiser `α_i = D_i x`.
    #[default]
    Exact,
}

/// `α_i ← α_i − ς_i (α_i − D_i x)` for both non-reference slots.
pub fn align_step(
    problem: &OracleProblem,
    state: &SolverState,
    mode: AlignMode,
) -> OResult<SolverState> {
    check_pair(problem, state)?;
    check_positive("step1", problem.step1)?;
    check_positive("step3", problem.step3)?;
    let mut next = state.clone();
    let target1 = problem.d1.apply(&state.x)?;
    let target3 = problem.d3.apply(&state.x)?;
    match mode {
        AlignMode::Exact => {
            next.alpha1 = target1;
            next.alpha3 = target3;
        }
        AlignMode::Gradient => {
            let g1 = problem.prior1.grad_aligned(&target1, &state.alpha1);
            let g3 = problem.prior3.grad_aligned(&target3, &state.alpha3);
            next.alpha1.scaled_add(-problem.step1, &g1);
            next.alpha3.scaled_add(-problem.step3, &g3);
        }
    }
    Ok(next)
}

/// Closed-form `argmin_u β/2‖u − x‖² + λ·½‖D u − α‖²` for diagonal `D`.
fn prox_diag(
    x: &Image,
    aligned: &Image,
    d: &DegradationOp,
    beta: f64,
    lambda: f64,
    mode: ExecMode,
) -> Image {
    let mut out = Image::zeros(x.dim());
    exec::zip_update3(
        mode,
        out.view_mut(),
        x.view(),
        aligned.view(),
        d.gains.view(),
        |o, x, a, g| *o = (beta * x + lambda * g * a) / (beta + lambda * g * g),
    );
    out
}

pub fn prox_update_u(problem: &OracleProblem, state: &SolverState) -> OResult<SolverState> {
    check_pair(problem, state)?;
    let mut next = state.clone();
    next.u = prox_diag(
        &state.x,
        &state.alpha1,
        &problem.d1,
        state.beta1,
        problem.prior1.weight,
        ExecMode::preferred(),
    );
    Ok(next)
}

pub fn prox_update_v(problem: &OracleProblem, state: &SolverState) -> OResult<SolverState> {
    check_pair(problem, state)?;
    let mut next = state.clone();
    next.v = prox_diag(
        &state.x,
        &state.alpha3,
        &problem.d3,
        state.beta3,
        problem.prior3.weight,
        ExecMode::preferred(),
    );
    Ok(next)
}

/// `x ← (D₂ᵀD₂ + (β₁ + β₃)I)⁻¹ (D₂ᵀy₂ + β₁u + β₃v)`.
pub fn data_consistency(problem: &OracleProblem, state: &SolverState) -> OResult<SolverState> {
    check_pair(problem, state)?;
    let (b1, b3) = (state.beta1, state.beta3);
    let mut next = state.clone();
    let mut rhs = problem.d2.apply_transpose(&problem.y2)?;
    rhs.scaled_add(b1, &state.u);
    rhs.scaled_add(b3, &state.v);
    let mut x = Image::zeros(rhs.dim());
    exec::zip_update3(
        ExecMode::preferred(),
        x.view_mut(),
        rhs.view(),
        problem.d2.gains.view(),
        rhs.view(),
        |o, r, g, _| *o = r / (g * g + b1 + b3),
    );
    next.x = x;
    Ok(next)
}

/// Order of the two subproblems inside one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UpdateOrder {
    /// Alignment, then fusion.
    #[default]
    #[serde(rename = "AF", alias = "af")]
    AlignFirst,
    /// Fusion, then alignment.
    #[serde(rename = "FA", alias = "fa")]
    FuseFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub exact_align: bool,
    pub order: UpdateOrder,
    pub beta1: f64,
    pub beta3: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-10,
            exact_align: true,
            order: UpdateOrder::AlignFirst,
            beta1: 1.0,
            beta3: 1.0,
        }
    }
}

impl SolverConfig {
    fn align_mode(&self) -> AlignMode {
        if self.exact_align {
            AlignMode::Exact
        } else {
            AlignMode::Gradient
        }
    }

    /// Whether the energy trace is guaranteed monotone, in which case any
    /// increase beyond [`ENERGY_SLACK`] is reported as divergence.
    pub fn guards_monotonicity(&self) -> bool {
        self.exact_align && self.order == UpdateOrder::AlignFirst
    }
}

fn fuse(problem: &OracleProblem, state: &SolverState) -> OResult<SolverState> {
    let state = prox_update_u(problem, state)?;
    let state = prox_update_v(problem, &state)?;
    data_consistency(problem, &state)
}

/// One outer iteration in the configured order. Does not touch the trace.
pub fn outer_iteration(
    problem: &OracleProblem,
    state: &SolverState,
    config: &SolverConfig,
) -> OResult<SolverState> {
    match config.order {
        UpdateOrder::AlignFirst => {
            let aligned = align_step(problem, state, config.align_mode())?;
            fuse(problem, &aligned)
        }
        UpdateOrder::FuseFirst => {
            let fused = fuse(problem, state)?;
            align_step(problem, &fused, config.align_mode())
        }
    }
}

/// Runs outer iterations from [`SolverState::initial`].
///
/// `energy_trace[0]` is the energy of the initial state and entry `k` the
/// energy after iteration `k`. Iteration stops once the energy decrease falls
/// below `tol` or after `max_iters` iterations.
pub fn solve(problem: &OracleProblem, config: &SolverConfig) -> OResult<SolverState> {
    let state = SolverState::initial(problem, config.beta1, config.beta3)?;
    solve_from(problem, state, config)
}

pub fn solve_from(
    problem: &OracleProblem,
    mut state: SolverState,
    config: &SolverConfig,
) -> OResult<SolverState> {
    if config.max_iters == 0 {
        return Err(OracleError::NoIterations);
    }
    state.energy_trace.clear();
    state.energy_trace.push(energy(problem, &state)?);
    for iteration in 1..=config.max_iters {
        let trace = std::mem::take(&mut state.energy_trace);
        state = outer_iteration(problem, &state, config)?;
        state.energy_trace = trace;
        let previous = *state.energy_trace.last().expect("trace seeded");
        let current = energy(problem, &state)?;
        state.energy_trace.push(current);
        if config.guards_monotonicity() && current > previous + ENERGY_SLACK {
            return Err(OracleError::Divergence {
                iteration,
                previous,
                current,
            });
        }
        if previous - current < config.tol {
            break;
        }
    }
    Ok(state)
}

/// Solves independent problems, fanning out over the rayon pool when `mode`
/// allows it. Results are in input order.
pub fn solve_batch(
    problems: &[OracleProblem],
    config: &SolverConfig,
    mode: ExecMode,
) -> Vec<OResult<SolverState>> {
    exec::map_slice(mode, problems, |p| solve(p, config))
}
