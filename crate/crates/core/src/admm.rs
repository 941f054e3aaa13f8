//! Plug-and-play ADMM for RED-regularized blind unmixing.
//!
//! The splitting `A = V1`, `M = V2` turns the problem into closed-form
//! least-squares updates for `A` and `M`, a RED fixed-point sweep for `V1`,
//! a nonnegativity clamp for `V2`, and dual ascent on `G1`, `G2`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{AbundanceField, EndmemberMatrix, HyperCube};
use crate::denoise::{denoise, DenoiserSpec};
use crate::error::{Result, UnmixError};
use crate::init::{simplex_qp_columns, InitResult};
use crate::simplex::project_columns;

/// How the closed-form `A` is mapped onto the abundance simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// Exact minimizer of the `A`-subproblem over the simplex.
    #[default]
    Constrained,
    /// Euclidean projection of the closed-form `A` per pixel.
    Simplex,
    /// Per-pixel softmax across endmembers (temperature 1).
    Softmax,
    /// No projection; only for checking the raw closed-form iteration.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub max_outer: usize,
    pub inner_v1: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub projection: Projection,
    /// Keep `M` at its initial value (abundance-only unmixing).
    pub fix_endmembers: bool,
    pub denoiser: DenoiserSpec,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            lambda: 1.0,
            eta1: 1.0,
            eta2: 1.0,
            max_outer: 200,
            inner_v1: 1,
            tol_primal: 1e-5,
            tol_dual: 1e-5,
            projection: Projection::Constrained,
            fix_endmembers: false,
            denoiser: DenoiserSpec::default(),
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("eta1", self.eta1),
            ("eta2", self.eta2),
            ("tol_primal", self.tol_primal),
            ("tol_dual", self.tol_dual),
        ];
        for (name, v) in scalars {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(UnmixError::InvalidParameter(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if self.max_outer == 0 {
            return Err(UnmixError::InvalidParameter(
                "max_outer must be at least 1".into(),
            ));
        }
        self.denoiser.validate()
    }
}

/// Iterates and per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub m: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    pub g2: DMatrix<f64>,
    pub a: AbundanceField,
    pub v1: AbundanceField,
    pub g1: AbundanceField,
    /// `C(V1)` for the current `V1`, reused by the next sweep.
    pub denoised_v1: Option<AbundanceField>,
    pub history: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `½‖X − MA‖² + λ·½⟨V1, V1 − C(V1)⟩`.
    pub objective: f64,
    /// `‖A − V1‖_F / √(RN)`.
    pub primal_a: f64,
    /// `‖M − V2‖_F / √(BR)`.
    pub primal_m: f64,
    /// `α‖V1 − V1_prev‖_F / √(RN)`.
    pub dual_a: f64,
    /// `β‖V2 − V2_prev‖_F / √(BR)`.
    pub dual_m: f64,
}

impl AdmmState {
    /// Starting point: `A = V1 = A⁽⁰⁾`, `M = V2 = M⁽⁰⁾`, zero duals.
    pub fn from_init(init: &InitResult) -> Self {
        let a = init.abundances.clone();
        let m = init.endmembers.matrix().clone();
        let g1 = AbundanceField::zeros(a.height(), a.width(), a.count());
        let g2 = DMatrix::zeros(m.nrows(), m.ncols());
        Self {
            v2: m.clone(),
            m,
            g2,
            v1: a.clone(),
            a,
            g1,
            denoised_v1: None,
            history: Vec::new(),
        }
    }
}

fn solve_spd(lhs: DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    match lhs.clone().cholesky() {
        Some(ch) => Ok(ch.solve(rhs)),
        None => lhs
            .lu()
            .solve(rhs)
            .ok_or_else(|| UnmixError::Singular(format!("{what} system is singular"))),
    }
}

/// `A = (MᵀM + αI)⁻¹ [MᵀX + α(V1 − G1)]`.
pub fn update_a(
    x: &DMatrix<f64>,
    m: &DMatrix<f64>,
    v1: &DMatrix<f64>,
    g1: &DMatrix<f64>,
    alpha: f64,
) -> Result<DMatrix<f64>> {
    let r = m.ncols();
    if x.nrows() != m.nrows() || v1.shape() != (r, x.ncols()) || g1.shape() != v1.shape() {
        return Err(UnmixError::Shape("update_a operands disagree".into()));
    }
    let mt = m.transpose();
    let lhs = &mt * m + DMatrix::identity(r, r) * alpha;
    let rhs = &mt * x + (v1 - g1) * alpha;
    if alpha == 0.0 && lhs.clone().cholesky().is_none() {
        return Err(UnmixError::Singular(
            "MᵀM is rank deficient and α = 0".into(),
        ));
    }
    solve_spd(lhs, &rhs, "A-update")
}

/// Minimizer of `½‖X − MA‖² + ½α‖A − V1 + G1‖²` with every column of `A`
/// on the probability simplex.
pub fn update_a_constrained(
    x: &DMatrix<f64>,
    m: &DMatrix<f64>,
    v1: &DMatrix<f64>,
    g1: &DMatrix<f64>,
    alpha: f64,
) -> Result<DMatrix<f64>> {
    let r = m.ncols();
    if x.nrows() != m.nrows() || v1.shape() != (r, x.ncols()) || g1.shape() != v1.shape() {
        return Err(UnmixError::Shape("update_a operands disagree".into()));
    }
    let mt = m.transpose();
    let mut h = &mt * m + DMatrix::identity(r, r) * alpha;
    let ridge = 1e-12 * h.trace().max(f64::MIN_POSITIVE) / r as f64;
    for i in 0..r {
        h[(i, i)] += ridge;
    }
    let f = &mt * x + (v1 - g1) * alpha;
    Ok(simplex_qp_columns(&h, &f))
}

/// `M = (XAᵀ + βV2 − βG2)(AAᵀ + βI)⁻¹`.
pub fn update_m(
    x: &DMatrix<f64>,
    a: &DMatrix<f64>,
    v2: &DMatrix<f64>,
    g2: &DMatrix<f64>,
    beta: f64,
) -> Result<DMatrix<f64>> {
    let r = a.nrows();
    if x.ncols() != a.ncols() || v2.shape() != (x.nrows(), r) || g2.shape() != v2.shape() {
        return Err(UnmixError::Shape("update_m operands disagree".into()));
    }
    let lhs = a * a.transpose() + DMatrix::identity(r, r) * beta;
    let rhs = x * a.transpose() + (v2 - g2) * beta;
    if beta == 0.0 && lhs.clone().cholesky().is_none() {
        return Err(UnmixError::Singular(
            "AAᵀ is rank deficient and β = 0".into(),
        ));
    }
    // M·L = R  ⇔  Lᵀ·Mᵀ = Rᵀ with L symmetric.
    Ok(solve_spd(lhs, &rhs.transpose(), "M-update")?.transpose())
}

/// RED fixed-point sweeps `V ← [λ·C(V) + α(A + G1)] / (λ + α)` starting at
/// `v1_prev`.
pub fn update_v1(
    a: &AbundanceField,
    g1: &AbundanceField,
    v1_prev: &AbundanceField,
    lambda: f64,
    alpha: f64,
    denoiser: &DenoiserSpec,
    inner_iters: usize,
) -> Result<AbundanceField> {
    let total = lambda + alpha;
    if total <= 0.0 {
        return Err(UnmixError::InvalidParameter(
            "λ + α must be positive".into(),
        ));
    }
    red_sweeps(a, g1, v1_prev, lambda, alpha, denoiser, inner_iters, None)
}

/// [`update_v1`] with an optional precomputed `C(v1_prev)`.
#[allow(clippy::too_many_arguments)]
fn red_sweeps(
    a: &AbundanceField,
    g1: &AbundanceField,
    v1_prev: &AbundanceField,
    lambda: f64,
    alpha: f64,
    denoiser: &DenoiserSpec,
    inner_iters: usize,
    mut cached: Option<AbundanceField>,
) -> Result<AbundanceField> {
    let total = lambda + alpha;
    let target = (a.matrix() + g1.matrix()) * (alpha / total);
    let mut v = v1_prev.clone();
    for _ in 0..inner_iters {
        let next = if lambda == 0.0 {
            target.clone()
        } else {
            let c = match cached.take() {
                Some(c) => c,
                None => denoise(&v, denoiser)?,
            };
            c.into_matrix() * (lambda / total) + &target
        };
        v = v.with_matrix(next)?;
    }
    Ok(v)
}

/// `V2 = max(M + G2, 0)`.
pub fn update_v2(m: &DMatrix<f64>, g2: &DMatrix<f64>) -> DMatrix<f64> {
    (m + g2).map(|v| v.max(0.0))
}

/// `G1 += η1(A − V1)`, `G2 += η2(M − V2)`.
#[allow(clippy::too_many_arguments)]
pub fn update_duals(
    a: &DMatrix<f64>,
    v1: &DMatrix<f64>,
    g1: &DMatrix<f64>,
    m: &DMatrix<f64>,
    v2: &DMatrix<f64>,
    g2: &DMatrix<f64>,
    eta1: f64,
    eta2: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    (g1 + (a - v1) * eta1, g2 + (m - v2) * eta2)
}

pub(crate) fn softmax_columns(z: &mut DMatrix<f64>) {
    for mut col in z.column_iter_mut() {
        let mx = col.max();
        col.apply(|v| *v = (*v - mx).exp());
        let s = col.sum();
        col /= s;
    }
}

/// RED value `½⟨V, V − C(V)⟩` (trace form).
pub fn red_value(v: &AbundanceField, denoiser: &DenoiserSpec) -> Result<f64> {
    let d = denoise(v, denoiser)?;
    Ok(0.5 * v.matrix().dot(&(v.matrix() - d.matrix())))
}

/// One full ADMM sweep, in place.
pub fn step(
    x: &DMatrix<f64>,
    state: &mut AdmmState,
    config: &AdmmConfig,
) -> Result<IterationRecord> {
    let (b, n) = x.shape();
    let r = state.m.ncols();
    let a = match config.projection {
        Projection::Constrained => update_a_constrained(
            x,
            &state.m,
            state.v1.matrix(),
            state.g1.matrix(),
            config.alpha,
        )?,
        p => {
            let mut a = update_a(
                x,
                &state.m,
                state.v1.matrix(),
                state.g1.matrix(),
                config.alpha,
            )?;
            match p {
                Projection::Simplex => project_columns(&mut a),
                Projection::Softmax => softmax_columns(&mut a),
                _ => {}
            }
            a
        }
    };
    let a = state.a.with_matrix(a)?;
    let v1_prev = state.v1.clone();
    if config.lambda + config.alpha <= 0.0 {
        return Err(UnmixError::InvalidParameter(
            "λ + α must be positive".into(),
        ));
    }
    let v1 = red_sweeps(
        &a,
        &state.g1,
        &state.v1,
        config.lambda,
        config.alpha,
        &config.denoiser,
        config.inner_v1,
        state.denoised_v1.take(),
    )?;
    let g1 = state.g1.matrix() + (a.matrix() - v1.matrix()) * config.eta1;

    let v2_prev = state.v2.clone();
    if !config.fix_endmembers {
        let m = update_m(x, a.matrix(), &state.v2, &state.g2, config.beta)?;
        let v2 = update_v2(&m, &state.g2);
        state.g2 = &state.g2 + (&m - &v2) * config.eta2;
        state.m = m;
        state.v2 = v2;
    }
    state.g1 = state.g1.with_matrix(g1)?;
    state.a = a;
    state.v1 = v1;

    let data = 0.5 * (x - &state.m * state.a.matrix()).norm_squared();
    let reg = if config.lambda > 0.0 {
        let d = denoise(&state.v1, &config.denoiser)?;
        let value = 0.5 * state.v1.matrix().dot(&(state.v1.matrix() - d.matrix()));
        state.denoised_v1 = Some(d);
        config.lambda * value
    } else {
        0.0
    };
    let ra = ((r * n) as f64).sqrt();
    let rm = ((b * r) as f64).sqrt();
    let record = IterationRecord {
        iteration: state.history.len() + 1,
        objective: data + reg,
        primal_a: (state.a.matrix() - state.v1.matrix()).norm() / ra,
        primal_m: (&state.m - &state.v2).norm() / rm,
        dual_a: config.alpha * (state.v1.matrix() - v1_prev.matrix()).norm() / ra,
        dual_m: config.beta * (&state.v2 - &v2_prev).norm() / rm,
    };
    if !record.objective.is_finite() {
        return Err(UnmixError::Diverged {
            step: record.iteration,
            loss: record.objective,
            initial: state.history.first().map_or(f64::NAN, |h| h.objective),
        });
    }
    state.history.push(record);
    Ok(record)
}

/// Result of [`solve`].
#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceField,
    pub state: AdmmState,
    pub converged: bool,
}

/// Runs ADMM sweeps from `init` until both residual pairs fall below their
/// tolerances or `max_outer` sweeps have run.
pub fn solve(cube: &HyperCube, config: &AdmmConfig, init: &InitResult) -> Result<AdmmOutcome> {
    solve_with(cube, config, init, |_| {})
}

/// [`solve`] with a callback after every sweep.
pub fn solve_with(
    cube: &HyperCube,
    config: &AdmmConfig,
    init: &InitResult,
    mut on_iter: impl FnMut(&IterationRecord),
) -> Result<AdmmOutcome> {
    config.validate()?;
    let x = cube.to_matrix();
    if init.endmembers.bands() != cube.bands()
        || init.abundances.pixels() != cube.pixels()
        || init.abundances.count() != init.endmembers.count()
    {
        return Err(UnmixError::Shape(
            "initialization does not match the cube".into(),
        ));
    }
    let mut state = AdmmState::from_init(init);
    let mut converged = false;
    for _ in 0..config.max_outer {
        let rec = step(&x, &mut state, config)?;
        on_iter(&rec);
        if rec.primal_a.max(rec.primal_m) < config.tol_primal
            && rec.dual_a.max(rec.dual_m) < config.tol_dual
        {
            converged = true;
            break;
        }
    }
    Ok(AdmmOutcome {
        endmembers: EndmemberMatrix::new(state.m.clone())?,
        abundances: state.a.clone(),
        state,
        converged,
    })
}

/// Diagnostics as CSV text.
pub fn history_csv(history: &[IterationRecord]) -> String {
    let mut s = String::from("iteration,objective,primal_a,primal_m,dual_a,dual_m\n");
    for h in history {
        s.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e}\n",
            h.iteration, h.objective, h.primal_a, h.primal_m, h.dual_a, h.dual_m
        ));
    }
    s
}
