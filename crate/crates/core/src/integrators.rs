//! Time and space marching of the discrete covariant Euler-Lagrange
//! equations, and the implicit Legendre solves they need.
//!
//! Both marchers solve the same interior stencil
//!
//! ```text
//! (-μ_a^j + Ad*_{τ(Δt ξ_a^{j-1})} μ_a^{j-1}) / Δt
//!     + (λ_a^j - Ad*_{τ(Δs η_{a-1}^j)} λ_{a-1}^j) / Δs - g⁻¹DΠ + f = 0
//! ```
//!
//! with `μ = dτ⁻¹*(Δt ξ) 𝕁ξ` and `λ = dτ⁻¹*(Δs η) ℂ(η - E₆)`. The time marcher
//! solves it for `μ_a^j` under zero traction at the free end (`λ_{A-1} = 0`);
//! the space marcher solves it for `λ_a^j` under zero momentum at the final
//! time (`μ^{N-1} = 0`).

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rayon::prelude::*;
use thiserror::Error;

use crate::beam_model::{BeamParams, E6};
use crate::grid::{DiscreteField, EdgeConvention, GridError};
use crate::liegroup::{
    dtau_inv, dtau_inv_star, dtau_inv_star_dv, hat, tau, tau_inv, AlgebraVector, CoAlgebraVector,
    GroupElement, LieError,
};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-12;
pub const DEFAULT_NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianKind {
    #[default]
    Analytic,
    /// Central differences, step `1e-7 · max(1, |x|)`.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Residual ∞-norm threshold, relative to `max(1, |target|∞)`.
    pub tol: f64,
    pub max_iter: usize,
    pub jacobian: JacobianKind,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_NEWTON_TOL,
            max_iter: DEFAULT_NEWTON_MAX_ITER,
            jacobian: JacobianKind::Analytic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MarchOptions {
    pub newton: NewtonOptions,
    /// Solve the nodes of one front on the rayon pool. Results are identical
    /// to the sequential path.
    pub parallel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegendreSolution {
    pub value: AlgebraVector,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LegendreError {
    #[error("Newton stalled after {iterations} iterations with residual {residual:e}")]
    NewtonDivergence { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegratorError {
    #[error("Legendre solve failed at node (j={j}, a={a}): {source}")]
    NewtonDivergence {
        j: usize,
        a: usize,
        source: LegendreError,
    },
    #[error("chart boundary reached at node (j={j}, a={a}): {source}")]
    NearPiRotation {
        j: usize,
        a: usize,
        source: LieError,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("initial slices have lengths {first} and {second}, expected {expected}")]
    Shape {
        first: usize,
        second: usize,
        expected: usize,
    },
}

/// `μ = dτ⁻¹*(Δt ξ) 𝕁ξ`.
pub fn legendre_time(params: &BeamParams, xi: &AlgebraVector) -> CoAlgebraVector {
    dtau_inv_star(&(*xi * params.dt), &params.d_kinetic(xi))
}

/// `λ = dτ⁻¹*(Δs η) ℂ(η - E₆)`.
pub fn legendre_space(params: &BeamParams, eta: &AlgebraVector) -> CoAlgebraVector {
    dtau_inv_star(&(*eta * params.ds), &params.d_elastic(eta))
}

/// Inverts `x ↦ dτ⁻¹*(h x) D(x - offset)` for diagonal `D`.
fn solve_legendre(
    target: &CoAlgebraVector,
    h: f64,
    diag: &Vector6<f64>,
    offset: &AlgebraVector,
    guess: &AlgebraVector,
    opts: &NewtonOptions,
) -> Result<LegendreSolution, LegendreError> {
    let map = |x: &AlgebraVector| {
        let p = CoAlgebraVector::from_vec6(&diag.component_mul(&(*x - *offset).to_vec6()));
        dtau_inv_star(&(*x * h), &p)
    };
    let jacobian = |x: &AlgebraVector| -> Matrix6<f64> {
        match opts.jacobian {
            JacobianKind::Analytic => {
                let p = CoAlgebraVector::from_vec6(&diag.component_mul(&(*x - *offset).to_vec6()));
                let v = *x * h;
                dtau_inv(&v).transpose() * Matrix6::from_diagonal(diag)
                    + dtau_inv_star_dv(&v, &p) * h
            }
            JacobianKind::FiniteDifference => {
                let step = 1e-7 * x.amax().max(1.0);
                let mut m = Matrix6::zeros();
                for k in 0..6 {
                    let e = AlgebraVector::from_vec6(&Vector6::ith(k, step));
                    let col = (map(&(*x + e)) - map(&(*x - e))).to_vec6() / (2.0 * step);
                    m.set_column(k, &col);
                }
                m
            }
        }
    };

    let scale = target.amax().max(1.0);
    // For fixed ω the linear block is linear in γ: (I + hω̂/2) D_lin (γ - γ₀) = p_lin.
    // Starting from that γ puts the ω-γ coupling into the first Jacobian; a
    // raw guess with γ far off makes the first step overshoot badly.
    let mut x = *guess;
    let cayley_lin = Matrix3::identity() + hat(&x.ang) * (0.5 * h);
    if let Some(n) = cayley_lin.lu().solve(&target.lin) {
        let d_lin = Vector3::new(diag[3], diag[4], diag[5]);
        x.lin = offset.lin + n.component_div(&d_lin);
    }
    let mut met_tol = false;
    let mut residual = f64::INFINITY;
    for it in 0..=opts.max_iter {
        let f = map(&x) - *target;
        residual = f.amax();
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol * scale {
            // One extra step once the tolerance is met takes the quadratic
            // convergence down to roundoff.
            if met_tol || residual == 0.0 || it == opts.max_iter {
                return Ok(LegendreSolution {
                    value: x,
                    iterations: it,
                    residual,
                });
            }
            met_tol = true;
        }
        if it == opts.max_iter {
            break;
        }
        let Some(dx) = jacobian(&x).lu().solve(&f.to_vec6()) else {
            break;
        };
        x -= AlgebraVector::from_vec6(&dx);
    }
    if met_tol && residual <= opts.tol * scale {
        return Ok(LegendreSolution {
            value: x,
            iterations: opts.max_iter,
            residual,
        });
    }
    Err(LegendreError::NewtonDivergence {
        iterations: opts.max_iter,
        residual,
    })
}

/// Solves `dτ⁻¹*(Δt ξ) 𝕁ξ = μ` for `ξ`.
pub fn legendre_solve_time(
    mu: &CoAlgebraVector,
    params: &BeamParams,
    guess: &AlgebraVector,
    opts: &NewtonOptions,
) -> Result<LegendreSolution, LegendreError> {
    solve_legendre(
        mu,
        params.dt,
        &params.inertia_diag(),
        &AlgebraVector::zeros(),
        guess,
        opts,
    )
}

/// Solves `dτ⁻¹*(Δs η) ℂ(η - E₆) = λ` for `η`.
pub fn legendre_solve_space(
    lambda: &CoAlgebraVector,
    params: &BeamParams,
    guess: &AlgebraVector,
    opts: &NewtonOptions,
) -> Result<LegendreSolution, LegendreError> {
    solve_legendre(
        lambda,
        params.ds,
        &params.stiffness_diag(),
        &E6,
        guess,
        opts,
    )
}

/// External force density `f_a^j` acting at a node.
///
/// Arguments are `(j, a, g_a^j, ξ_a^{j-1}, η_{a-1}^j)`. Where the previous
/// velocity or strain does not exist (first row, first column) the marchers
/// pass `0` and `E₆` respectively.
pub trait ForceField: Sync {
    fn force(
        &self,
        j: usize,
        a: usize,
        g: &GroupElement,
        xi_prev: &AlgebraVector,
        eta_prev: &AlgebraVector,
    ) -> CoAlgebraVector;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoForce;

impl ForceField for NoForce {
    fn force(
        &self,
        _: usize,
        _: usize,
        _: &GroupElement,
        _: &AlgebraVector,
        _: &AlgebraVector,
    ) -> CoAlgebraVector {
        CoAlgebraVector::zeros()
    }
}

impl<F> ForceField for F
where
    F: Fn(usize, usize, &GroupElement, &AlgebraVector, &AlgebraVector) -> CoAlgebraVector + Sync,
{
    fn force(
        &self,
        j: usize,
        a: usize,
        g: &GroupElement,
        xi_prev: &AlgebraVector,
        eta_prev: &AlgebraVector,
    ) -> CoAlgebraVector {
        self(j, a, g, xi_prev, eta_prev)
    }
}

/// Per-triangle forces `f^k(△_a^j)`, `k = 1, 2, 3`, acting on the triangle's
/// nodes `(j, a)`, `(j+1, a)` and `(j, a+1)`.
pub trait TriangleForces {
    fn force(&self, slot: usize, j: usize, a: usize) -> CoAlgebraVector;

    /// Total force density on node `(j, a)`:
    /// `f¹(△_a^j) + f²(△_a^{j-1}) + f³(△_{a-1}^j)`.
    fn nodal(&self, j: usize, a: usize) -> CoAlgebraVector {
        let mut f = self.force(1, j, a);
        if j > 0 {
            f += self.force(2, j - 1, a);
        }
        if a > 0 {
            f += self.force(3, j, a - 1);
        }
        f
    }
}

fn relative(
    a: &GroupElement,
    b: &GroupElement,
    step: f64,
    j: usize,
    col: usize,
) -> Result<AlgebraVector, IntegratorError> {
    tau_inv(&a.between(b))
        .map(|v| v * (1.0 / step))
        .map_err(|source| IntegratorError::NearPiRotation { j, a: col, source })
}

/// Scratch space reused across steps.
#[derive(Debug, Clone, Default)]
pub struct StepWorkspace {
    strain: Vec<AlgebraVector>,
    flux: Vec<CoAlgebraVector>,
}

/// Marching front of the time integrator at row `j ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFront {
    pub j: usize,
    /// `g_a^j` for all `a`.
    pub nodes: Vec<GroupElement>,
    /// `ξ_a^{j-1}`.
    pub xi_prev: Vec<AlgebraVector>,
    /// `μ_a^{j-1}`.
    pub mu_prev: Vec<CoAlgebraVector>,
}

impl TimeFront {
    /// Front at `j = 1`, with `μ⁰` from the forward Legendre map of the
    /// velocities between the two slices.
    pub fn from_slices(
        row0: &[GroupElement],
        row1: &[GroupElement],
        params: &BeamParams,
    ) -> Result<Self, IntegratorError> {
        if row0.len() != row1.len() || row0.is_empty() {
            return Err(IntegratorError::Shape {
                first: row0.len(),
                second: row1.len(),
                expected: row0.len().max(1),
            });
        }
        let xi_prev = row0
            .iter()
            .zip(row1)
            .enumerate()
            .map(|(a, (g0, g1))| relative(g0, g1, params.dt, 0, a))
            .collect::<Result<Vec<_>, _>>()?;
        let mu_prev = xi_prev.iter().map(|xi| legendre_time(params, xi)).collect();
        Ok(Self {
            j: 1,
            nodes: row1.to_vec(),
            xi_prev,
            mu_prev,
        })
    }
}

/// Marching front of the space integrator at column `a ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceFront {
    pub a: usize,
    /// `g_a^j` for all `j`.
    pub nodes: Vec<GroupElement>,
    /// `η_{a-1}^j`.
    pub eta_prev: Vec<AlgebraVector>,
    /// `λ_{a-1}^j`.
    pub lambda_prev: Vec<CoAlgebraVector>,
}

impl SpaceFront {
    /// Front at `a = 1`, with `λ₀` from the forward Legendre map of the
    /// strains between the two slices.
    pub fn from_slices(
        col0: &[GroupElement],
        col1: &[GroupElement],
        params: &BeamParams,
    ) -> Result<Self, IntegratorError> {
        if col0.len() != col1.len() || col0.is_empty() {
            return Err(IntegratorError::Shape {
                first: col0.len(),
                second: col1.len(),
                expected: col0.len().max(1),
            });
        }
        let eta_prev = col0
            .iter()
            .zip(col1)
            .enumerate()
            .map(|(j, (g0, g1))| relative(g0, g1, params.ds, j, 0))
            .collect::<Result<Vec<_>, _>>()?;
        let lambda_prev = eta_prev
            .iter()
            .map(|eta| legendre_space(params, eta))
            .collect();
        Ok(Self {
            a: 1,
            nodes: col1.to_vec(),
            eta_prev,
            lambda_prev,
        })
    }
}

struct NodeUpdate {
    momentum: CoAlgebraVector,
    velocity: AlgebraVector,
    next: GroupElement,
    iterations: usize,
}

fn map_nodes<F>(n: usize, parallel: bool, f: F) -> Result<Vec<NodeUpdate>, IntegratorError>
where
    F: Fn(usize) -> Result<NodeUpdate, IntegratorError> + Sync + Send,
{
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Advances `front` from row `j` to row `j + 1` under zero traction at the
/// last node. Returns the largest Newton iteration count of the step.
pub fn step_time(
    front: &mut TimeFront,
    params: &BeamParams,
    forces: &dyn ForceField,
    opts: &MarchOptions,
    ws: &mut StepWorkspace,
) -> Result<usize, IntegratorError> {
    let j = front.j;
    let n = front.nodes.len();
    ws.strain.clear();
    ws.flux.clear();
    for a in 0..n {
        if a + 1 < n {
            let eta = relative(&front.nodes[a], &front.nodes[a + 1], params.ds, j, a)?;
            ws.strain.push(eta);
            ws.flux.push(legendre_space(params, &eta));
        } else {
            ws.strain.push(E6);
            ws.flux.push(CoAlgebraVector::zeros());
        }
    }

    let (dt, ds) = (params.dt, params.ds);
    let (strain, flux) = (&ws.strain, &ws.flux);
    let front_ref = &*front;
    let updates = map_nodes(n, opts.parallel, |a| {
        let g = &front_ref.nodes[a];
        let xi_prev = &front_ref.xi_prev[a];
        let mut net = flux[a];
        let eta_prev = if a > 0 {
            net -= tau(&(strain[a - 1] * ds)).ad_transpose(&flux[a - 1]);
            strain[a - 1]
        } else {
            E6
        };
        let f = forces.force(j, a, g, xi_prev, &eta_prev);
        let momentum = tau(&(*xi_prev * dt)).ad_transpose(&front_ref.mu_prev[a])
            + (net * (1.0 / ds) - params.d_potential(g) + f) * dt;
        let sol = legendre_solve_time(&momentum, params, xi_prev, &opts.newton)
            .map_err(|source| IntegratorError::NewtonDivergence { j, a, source })?;
        Ok(NodeUpdate {
            momentum,
            velocity: sol.value,
            next: g.compose(&tau(&(sol.value * dt))),
            iterations: sol.iterations,
        })
    })?;

    let mut max_iter = 0;
    for (a, u) in updates.into_iter().enumerate() {
        front.nodes[a] = u.next;
        front.xi_prev[a] = u.velocity;
        front.mu_prev[a] = u.momentum;
        max_iter = max_iter.max(u.iterations);
    }
    front.j += 1;
    Ok(max_iter)
}

/// Advances `front` from column `a` to column `a + 1` under zero momentum at
/// the last time node. Returns the largest Newton iteration count.
pub fn step_space(
    front: &mut SpaceFront,
    params: &BeamParams,
    forces: &dyn ForceField,
    opts: &MarchOptions,
    ws: &mut StepWorkspace,
) -> Result<usize, IntegratorError> {
    let a = front.a;
    let n = front.nodes.len();
    ws.strain.clear();
    ws.flux.clear();
    for j in 0..n {
        if j + 1 < n {
            let xi = relative(&front.nodes[j], &front.nodes[j + 1], params.dt, j, a)?;
            ws.strain.push(xi);
            ws.flux.push(legendre_time(params, &xi));
        } else {
            ws.strain.push(AlgebraVector::zeros());
            ws.flux.push(CoAlgebraVector::zeros());
        }
    }

    let (dt, ds) = (params.dt, params.ds);
    let (velocity, momentum) = (&ws.strain, &ws.flux);
    let front_ref = &*front;
    let updates = map_nodes(n, opts.parallel, |j| {
        let g = &front_ref.nodes[j];
        let eta_prev = &front_ref.eta_prev[j];
        let mut rate = momentum[j];
        let xi_prev = if j > 0 {
            rate -= tau(&(velocity[j - 1] * dt)).ad_transpose(&momentum[j - 1]);
            velocity[j - 1]
        } else {
            AlgebraVector::zeros()
        };
        let f = forces.force(j, a, g, &xi_prev, eta_prev);
        let lambda = tau(&(*eta_prev * ds)).ad_transpose(&front_ref.lambda_prev[j])
            + (rate * (1.0 / dt) + params.d_potential(g) - f) * ds;
        let sol = legendre_solve_space(&lambda, params, eta_prev, &opts.newton)
            .map_err(|source| IntegratorError::NewtonDivergence { j, a, source })?;
        Ok(NodeUpdate {
            momentum: lambda,
            velocity: sol.value,
            next: g.compose(&tau(&(sol.value * ds))),
            iterations: sol.iterations,
        })
    })?;

    let mut max_iter = 0;
    for (j, u) in updates.into_iter().enumerate() {
        front.nodes[j] = u.next;
        front.eta_prev[j] = u.velocity;
        front.lambda_prev[j] = u.momentum;
        max_iter = max_iter.max(u.iterations);
    }
    front.a += 1;
    Ok(max_iter)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunStats {
    pub steps: usize,
    pub max_newton_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub field: DiscreteField,
    pub stats: RunStats,
}

/// Result of a march that may stop early. `field` holds every slice
/// computed before `failure`, including the two initial ones.
#[derive(Debug, Clone)]
pub struct PartialRun {
    pub field: DiscreteField,
    pub stats: RunStats,
    pub failure: Option<IntegratorError>,
}

impl PartialRun {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn into_result(self) -> Result<RunOutput, IntegratorError> {
        match self.failure {
            None => Ok(RunOutput {
                field: self.field,
                stats: self.stats,
            }),
            Some(e) => Err(e),
        }
    }
}

/// Integrates rows `2..params.n_time` from the two initial rows. The result
/// carries [`EdgeConvention::ZeroTraction`].
pub fn run_time(
    row0: &[GroupElement],
    row1: &[GroupElement],
    params: &BeamParams,
    forces: &dyn ForceField,
    opts: &MarchOptions,
) -> Result<RunOutput, IntegratorError> {
    run_time_partial(row0, row1, params, forces, opts)?.into_result()
}

/// Like [`run_time`], but a failed step ends the march and the rows computed
/// so far are returned. Only malformed input is an error.
pub fn run_time_partial(
    row0: &[GroupElement],
    row1: &[GroupElement],
    params: &BeamParams,
    forces: &dyn ForceField,
    opts: &MarchOptions,
) -> Result<PartialRun, IntegratorError> {
    if row0.len() != params.n_space || row1.len() != params.n_space {
        return Err(IntegratorError::Shape {
            first: row0.len(),
            second: row1.len(),
            expected: params.n_space,
        });
    }
    let mut front = TimeFront::from_slices(row0, row1, params)?;
    let mut ws = StepWorkspace::default();
    let mut nodes = Vec::with_capacity(params.n_time * params.n_space);
    nodes.extend_from_slice(row0);
    nodes.extend_from_slice(row1);
    let mut stats = RunStats::default();
    let mut failure = None;
    while front.j + 1 < params.n_time {
        match step_time(&mut front, params, forces, opts, &mut ws) {
            Ok(it) => {
                stats.steps += 1;
                stats.max_newton_iterations = stats.max_newton_iterations.max(it);
                nodes.extend_from_slice(&front.nodes);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let rows = nodes.len() / params.n_space;
    let field = DiscreteField::new(rows, params.n_space, params.dt, params.ds, nodes)?
        .with_edge(EdgeConvention::ZeroTraction);
    Ok(PartialRun {
        field,
        stats,
        failure,
    })
}

/// Integrates columns `2..params.n_space` from the two initial columns. The
/// result carries [`EdgeConvention::ZeroMomentum`].
pub fn run_space(
    col0: &[GroupElement],
    col1: &[GroupElement],
    params: &BeamParams,
    forces: &dyn ForceField,
    opts: &MarchOptions,
) -> Result<RunOutput, IntegratorError> {
    run_space_partial(col0, col1, params, forces, opts)?.into_result()
}

/// Space counterpart of [`run_time_partial`].
pub fn run_space_partial(
    col0: &[GroupElement],
    col1: &[GroupElement],
    params: &BeamParams,
    forces: &dyn ForceField,
    opts: &MarchOptions,
) -> Result<PartialRun, IntegratorError> {
    if col0.len() != params.n_time || col1.len() != params.n_time {
        return Err(IntegratorError::Shape {
            first: col0.len(),
            second: col1.len(),
            expected: params.n_time,
        });
    }
    let mut front = SpaceFront::from_slices(col0, col1, params)?;
    let mut ws = StepWorkspace::default();
    let mut cols = Vec::with_capacity(params.n_space);
    cols.push(col0.to_vec());
    cols.push(col1.to_vec());
    let mut stats = RunStats::default();
    let mut failure = None;
    while front.a + 1 < params.n_space {
        match step_space(&mut front, params, forces, opts, &mut ws) {
            Ok(it) => {
                stats.steps += 1;
                stats.max_newton_iterations = stats.max_newton_iterations.max(it);
                cols.push(front.nodes.clone());
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let field = DiscreteField::from_columns(&cols, params.dt, params.ds)?
        .with_edge(EdgeConvention::ZeroMomentum);
    Ok(PartialRun {
        field,
        stats,
        failure,
    })
}

/// Velocities, strains and their Legendre images at every node of a field,
/// recomputed from the stored configurations. `None` marks quantities that
/// need a node outside the grid and are not fixed by the edge convention.
#[derive(Debug, Clone)]
pub struct FieldMomenta {
    n_space: usize,
    xi: Vec<Option<AlgebraVector>>,
    eta: Vec<Option<AlgebraVector>>,
    mu: Vec<Option<CoAlgebraVector>>,
    lambda: Vec<Option<CoAlgebraVector>>,
}

impl FieldMomenta {
    pub fn compute(field: &DiscreteField, params: &BeamParams) -> Result<Self, GridError> {
        let (n_time, n_space) = (field.n_time(), field.n_space());
        let rows = (0..n_time)
            .into_par_iter()
            .map(|j| {
                let mut row = Vec::with_capacity(n_space);
                for a in 0..n_space {
                    let xi = field.xi_with_edge(j, a)?;
                    let eta = field.eta_with_edge(j, a)?;
                    let mu = xi.map(|x| legendre_time(params, &x));
                    let lambda = eta.map(|e| legendre_space(params, &e));
                    row.push((xi, eta, mu, lambda));
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>, GridError>>()?;
        let mut out = Self {
            n_space,
            xi: Vec::with_capacity(n_time * n_space),
            eta: Vec::with_capacity(n_time * n_space),
            mu: Vec::with_capacity(n_time * n_space),
            lambda: Vec::with_capacity(n_time * n_space),
        };
        for (xi, eta, mu, lambda) in rows.into_iter().flatten() {
            out.xi.push(xi);
            out.eta.push(eta);
            out.mu.push(mu);
            out.lambda.push(lambda);
        }
        Ok(out)
    }

    fn idx(&self, j: usize, a: usize) -> usize {
        j * self.n_space + a
    }

    pub fn xi(&self, j: usize, a: usize) -> Option<AlgebraVector> {
        self.xi.get(self.idx(j, a)).copied().flatten()
    }

    pub fn eta(&self, j: usize, a: usize) -> Option<AlgebraVector> {
        self.eta.get(self.idx(j, a)).copied().flatten()
    }

    pub fn mu(&self, j: usize, a: usize) -> Option<CoAlgebraVector> {
        self.mu.get(self.idx(j, a)).copied().flatten()
    }

    pub fn lambda(&self, j: usize, a: usize) -> Option<CoAlgebraVector> {
        self.lambda.get(self.idx(j, a)).copied().flatten()
    }

    pub fn max_momentum_norm(&self) -> f64 {
        self.mu
            .iter()
            .chain(&self.lambda)
            .flatten()
            .map(CoAlgebraVector::amax)
            .fold(0.0, f64::max)
    }
}

fn missing(field: &DiscreteField, j: usize, a: usize) -> GridError {
    GridError::IndexOutOfRange {
        j,
        a,
        n_time: field.n_time(),
        n_space: field.n_space(),
    }
}

/// Stencil residual at node `(j, a)` without forcing. On the first row or
/// column the transported neighbour term is dropped, which gives the
/// boundary equations of a free end.
fn unforced_stencil(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    params: &BeamParams,
    j: usize,
    a: usize,
) -> Result<CoAlgebraVector, GridError> {
    let g = field.node(j, a)?;
    let mu = momenta.mu(j, a).ok_or_else(|| missing(field, j + 1, a))?;
    let lambda = momenta
        .lambda(j, a)
        .ok_or_else(|| missing(field, j, a + 1))?;
    let mut rate = -mu;
    if j > 0 {
        let xi = momenta.xi(j - 1, a).ok_or_else(|| missing(field, j, a))?;
        let mu_prev = momenta.mu(j - 1, a).ok_or_else(|| missing(field, j, a))?;
        rate += tau(&(xi * field.dt())).ad_transpose(&mu_prev);
    }
    let mut net = lambda;
    if a > 0 {
        let eta = momenta.eta(j, a - 1).ok_or_else(|| missing(field, j, a))?;
        let lambda_prev = momenta
            .lambda(j, a - 1)
            .ok_or_else(|| missing(field, j, a))?;
        net -= tau(&(eta * field.ds())).ad_transpose(&lambda_prev);
    }
    Ok(rate * (1.0 / field.dt()) + net * (1.0 / field.ds()) - params.d_potential(g))
}

/// Residual of the discrete equations at any node where they are defined,
/// including the free-end boundary forms on the first row and column and
/// the edge rows fixed by the field's edge convention.
pub fn stencil_residual(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    params: &BeamParams,
    forces: &dyn ForceField,
    j: usize,
    a: usize,
) -> Result<CoAlgebraVector, GridError> {
    let base = unforced_stencil(field, momenta, params, j, a)?;
    let xi_prev = if j > 0 {
        momenta.xi(j - 1, a).unwrap_or_default()
    } else {
        AlgebraVector::zeros()
    };
    let eta_prev = if a > 0 {
        momenta.eta(j, a - 1).unwrap_or(E6)
    } else {
        E6
    };
    Ok(base + forces.force(j, a, field.at(j, a), &xi_prev, &eta_prev))
}

/// Interior residual, defined for `1 ≤ j ≤ N-2` and `1 ≤ a ≤ A-2`.
pub fn dcel_residual(
    field: &DiscreteField,
    params: &BeamParams,
    forces: &dyn ForceField,
    j: usize,
    a: usize,
) -> Result<CoAlgebraVector, GridError> {
    let (n, m) = (field.n_time(), field.n_space());
    if j == 0 || a == 0 || j + 2 > n || a + 2 > m {
        return Err(GridError::IndexOutOfRange {
            j,
            a,
            n_time: n,
            n_space: m,
        });
    }
    let local = local_momenta(field, params, j, a)?;
    stencil_residual(field, &local, params, forces, j, a)
}

/// Momenta on the 2×2 patch `{j-1, j} × {a-1, a}` only.
fn local_momenta(
    field: &DiscreteField,
    params: &BeamParams,
    j: usize,
    a: usize,
) -> Result<FieldMomenta, GridError> {
    let n_space = field.n_space();
    let total = field.n_time() * n_space;
    let mut out = FieldMomenta {
        n_space,
        xi: vec![None; total],
        eta: vec![None; total],
        mu: vec![None; total],
        lambda: vec![None; total],
    };
    for jj in j.saturating_sub(1)..=j {
        for aa in a.saturating_sub(1)..=a {
            let k = jj * n_space + aa;
            out.xi[k] = field.xi_with_edge(jj, aa)?;
            out.eta[k] = field.eta_with_edge(jj, aa)?;
            out.mu[k] = out.xi[k].map(|x| legendre_time(params, &x));
            out.lambda[k] = out.eta[k].map(|e| legendre_space(params, &e));
        }
    }
    Ok(out)
}

/// Interior residual with the forcing split per triangle slot.
pub fn dcel_residual_split(
    field: &DiscreteField,
    params: &BeamParams,
    forces: &dyn TriangleForces,
    j: usize,
    a: usize,
) -> Result<CoAlgebraVector, GridError> {
    let base = dcel_residual(field, params, &NoForce, j, a)?;
    Ok(base + forces.force(1, j, a) + forces.force(2, j - 1, a) + forces.force(3, j, a - 1))
}

/// Threshold for the stencil residual of a converged run.
///
/// The marchers solve each Legendre equation to `newton_tol · max(1, |p|)`,
/// which enters the stencil divided by `Δt` (time runs) or `Δs` (space
/// runs). Recomputing `ξ`, `η` from stored positions adds roundoff of order
/// `ε (R + 1)` in each relative displacement, amplified by `𝕁/Δt²` and
/// `ℂ/Δs²`. The threshold is ten times the sum.
pub fn dcel_tolerance(
    params: &BeamParams,
    newton_tol: f64,
    momentum_scale: f64,
    position_scale: f64,
) -> f64 {
    let eps = f64::EPSILON;
    let solve = newton_tol * momentum_scale.max(1.0) * (1.0 / params.dt + 1.0 / params.ds);
    let round = eps
        * (position_scale + 1.0)
        * (params.inertia_diag().amax() / (params.dt * params.dt)
            + params.stiffness_diag().amax() / (params.ds * params.ds));
    10.0 * (solve + round)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CflReport {
    /// Dilational wave speed `c`.
    pub wave_speed: f64,
    /// `Δs / (10 c)`.
    pub dt_suggested: f64,
    pub dt: f64,
    pub exceeds: bool,
}

/// Time step suggested as a tenth of the Courant limit of the dilational
/// wave on the spatial mesh.
pub fn cfl_check(params: &BeamParams) -> CflReport {
    let c = params.dilational_wave_speed();
    let dt_suggested = params.ds / (10.0 * c);
    CflReport {
        wave_speed: c,
        dt_suggested,
        dt: params.dt,
        exceeds: params.dt > dt_suggested,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beam_model::MaterialInput;
    use crate::grid::grow_slice;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    pub(crate) fn material(dt: f64, ds: f64, length: f64, duration: f64, young: f64) -> BeamParams {
        BeamParams::build(&MaterialInput {
            rho: 1e3,
            side: 0.01,
            length,
            young,
            poisson: 0.35,
            gravity: Vector3::zeros(),
            dt,
            ds,
            duration,
        })
        .unwrap()
    }

    fn alg(max: f64) -> impl Strategy<Value = AlgebraVector> {
        prop::array::uniform6(-max..max).prop_map(AlgebraVector::from_array)
    }

    #[test]
    fn zero_momentum_gives_zero_velocity() {
        let p = material(5e-4, 0.1, 1.0, 3.0, 5e3);
        let sol = legendre_solve_time(
            &CoAlgebraVector::zeros(),
            &p,
            &AlgebraVector::zeros(),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.value, AlgebraVector::zeros());
        let sol = legendre_solve_space(
            &CoAlgebraVector::zeros(),
            &p,
            &E6,
            &NewtonOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.value, E6);
    }

    #[test]
    fn small_step_limit_is_linear() {
        let p = material(5e-4, 0.1, 1.0, 3.0, 5e3).with_grid(1e-14, 1e-14, 2, 2);
        let mu = CoAlgebraVector::from_array([1e-7, -2e-7, 3e-7, 0.1, 0.2, -0.3]);
        let xi = legendre_solve_time(&mu, &p, &AlgebraVector::zeros(), &NewtonOptions::default())
            .unwrap()
            .value;
        let lin = p.inertia_diag();
        for k in 0..6 {
            let expect = mu.to_vec6()[k] / lin[k];
            assert!((xi.to_vec6()[k] - expect).abs() < 1e-6 * expect.abs());
        }
        let lambda = CoAlgebraVector::from_array([1e-7, -2e-7, 3e-7, 0.01, 0.02, -0.03]);
        let eta = legendre_solve_space(&lambda, &p, &E6, &NewtonOptions::default())
            .unwrap()
            .value;
        let stiff = p.stiffness_diag();
        for k in 0..6 {
            let expect = E6.to_vec6()[k] + lambda.to_vec6()[k] / stiff[k];
            assert!(
                (eta.to_vec6()[k] - expect).abs() < 1e-6 * expect.abs().max(1e-3),
                "k={k} {eta:?}"
            );
        }
    }

    #[test]
    fn divergence_is_reported() {
        let p = material(5e-4, 0.1, 1.0, 3.0, 5e3);
        let opts = NewtonOptions {
            max_iter: 0,
            ..NewtonOptions::default()
        };
        let mu = CoAlgebraVector::from_array([1e-3, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let err = legendre_solve_time(&mu, &p, &AlgebraVector::zeros(), &opts).unwrap_err();
        assert!(matches!(
            err,
            LegendreError::NewtonDivergence { iterations: 0, .. }
        ));
    }

    #[test]
    fn finite_difference_jacobian_agrees() {
        let p = material(0.05, 0.05, 0.8, 10.0, 5e4);
        let xi0 = AlgebraVector::from_array([0.3, -2.0, 0.1, 0.05, -0.1, 0.02]);
        let mu = legendre_time(&p, &xi0);
        let fd = NewtonOptions {
            jacobian: JacobianKind::FiniteDifference,
            ..NewtonOptions::default()
        };
        let a = legendre_solve_time(&mu, &p, &AlgebraVector::zeros(), &NewtonOptions::default())
            .unwrap();
        let b = legendre_solve_time(&mu, &p, &AlgebraVector::zeros(), &fd).unwrap();
        assert!((a.value - xi0).amax() < 1e-10);
        assert!((b.value - xi0).amax() < 1e-9);
    }

    #[test]
    fn rest_state_is_a_fixed_point_of_one_step() {
        let p = material(1e-3, 0.125, 1.0, 1.0, 5e3);
        let row = grow_slice(&GroupElement::identity(), &vec![E6; p.n_space - 1], p.ds);
        let mut front = TimeFront::from_slices(&row, &row, &p).unwrap();
        step_time(
            &mut front,
            &p,
            &NoForce,
            &MarchOptions::default(),
            &mut StepWorkspace::default(),
        )
        .unwrap();
        assert_eq!(front.nodes, row);
    }

    #[test]
    fn single_node_is_a_free_rigid_body() {
        let p = material(0.01, 0.1, 1.0, 1.0, 5e3).with_grid(0.01, 0.1, 50, 1);
        let xi = AlgebraVector::from_array([1.0, -2.0, 0.5, 0.1, 0.0, 0.3]);
        let g0 = GroupElement::identity();
        let g1 = tau(&(xi * p.dt));
        let out = run_time(&[g0], &[g1], &p, &NoForce, &MarchOptions::default()).unwrap();
        // The body momentum transported by Ad* is the discrete rigid-body
        // update; the spatial momentum is therefore constant.
        let m0 = g0.coad(&legendre_time(&p, &xi));
        for j in 0..p.n_time - 1 {
            let xi_j = out.field.xi_at(j, 0).unwrap();
            let m = out.field.at(j, 0).coad(&legendre_time(&p, &xi_j));
            assert!((m - m0).amax() < 1e-14, "j={j}");
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let p = material(5e-4, 0.1, 1.0, 0.02, 5e3);
        let eta0 = vec![AlgebraVector::from_array([1.0, 1.5, 1.0, 0.0, 0.0, 1.0]); p.n_space - 1];
        let eta1 =
            vec![AlgebraVector::from_array([1.004, 1.52, 1.005, -0.01, 0.0, 1.0]); p.n_space - 1];
        let row0 = grow_slice(&GroupElement::identity(), &eta0, p.ds);
        let row1 = grow_slice(
            &GroupElement::from_translation(Vector3::new(0.0, 0.0, p.dt)),
            &eta1,
            p.ds,
        );
        let seq = run_time(&row0, &row1, &p, &NoForce, &MarchOptions::default()).unwrap();
        let par = run_time(
            &row0,
            &row1,
            &p,
            &NoForce,
            &MarchOptions {
                parallel: true,
                ..MarchOptions::default()
            },
        )
        .unwrap();
        assert_eq!(seq.field, par.field);
    }

    #[test]
    fn shape_errors() {
        let p = material(5e-4, 0.1, 1.0, 3.0, 5e3);
        let row = vec![GroupElement::identity(); 3];
        assert!(matches!(
            run_time(&row, &row, &p, &NoForce, &MarchOptions::default()),
            Err(IntegratorError::Shape { .. })
        ));
    }

    #[test]
    fn cfl_values() {
        let p = material(5e-4, 0.1, 1.0, 3.0, 5e3);
        let r = cfl_check(&p);
        let (lambda, mu) = (5e3 * 0.35 / (1.35 * 0.3), 5e3 / 2.7);
        let c = ((lambda + 2.0 * mu) / 1e3f64).sqrt();
        assert!((r.wave_speed - c).abs() < 1e-12);
        assert!((r.dt_suggested - 0.1 / (10.0 * c)).abs() < 1e-15);
        assert!(!r.exceeds);
        let stiff = material(5e-4, 0.1, 1.0, 3.0, 5e4);
        assert!(cfl_check(&stiff).dt_suggested < r.dt_suggested);
        let mut heavy = p.clone();
        heavy.rho = 1e300;
        assert!(cfl_check(&heavy).dt_suggested > 1e140);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn time_legendre_round_trip(xi in alg(3.0)) {
            let p = material(0.05, 0.05, 0.8, 10.0, 5e4);
            let mu = legendre_time(&p, &xi);
            let sol = legendre_solve_time(&mu, &p, &AlgebraVector::zeros(), &NewtonOptions::default()).unwrap();
            prop_assert!((sol.value - xi).amax() < 1e-10);
            prop_assert!(sol.iterations <= 10);
        }

        #[test]
        fn space_legendre_round_trip(d in alg(0.5)) {
            let p = material(5e-4, 0.1, 1.0, 3.0, 5e3);
            let eta = E6 + d;
            let lambda = legendre_space(&p, &eta);
            let sol = legendre_solve_space(&lambda, &p, &E6, &NewtonOptions::default()).unwrap();
            prop_assert!((sol.value - eta).amax() < 1e-10);
            prop_assert!(sol.iterations <= 10);
        }
    }
}
