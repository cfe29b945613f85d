//! Semi-discrete system and the two-stage splitting integrator.
//!
//! Each step first solves the perpendicular backward-Euler system
//! `(H + Δt M) u^{l+½} = H u^l + Δt (B g(t_{l+1}) + H s(t_{l+1}))` by conjugate
//! gradient, then applies the parallel stage
//! `u^{l+1} = u^{l+½} + c H⁻¹ (u^{l+1} − ½(P_f + P_b) u^{l+½})`, `c = Δt τ‖ κ‖ / 2`,
//! which is diagonal in `u^{l+1}`.

use std::sync::Arc;

use log::warn;

use crate::cg::{cg_solve, CgConfig};
use crate::error::{Error, Result};
use crate::grid::{check_finite, Grid1D, GridFunction};
use crate::linalg::{h_norm_sq, symmetric_eigenvalues, BandMatrix, LinearOperator};
use crate::parallel::ParallelPenaltyOperator;
use crate::report::{PropertyCheck, PropertyReport};
use crate::sbp::{boundary_diagonal, SbpOperatorSet};

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// `s(x, t)`
pub type SourceFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Relative slack on `‖u^{l+1}‖_H ≤ ‖u^l‖_H` per step.
pub const ENERGY_SLACK: f64 = 1e-12;

/// Weakly imposed Neumann data `κ u_x = g` at both ends.
#[derive(Clone)]
pub struct SatBoundary {
    tau0: f64,
    g_left: TimeFn,
    g_right: TimeFn,
    homogeneous: bool,
}

impl std::fmt::Debug for SatBoundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SatBoundary")
            .field("tau0", &self.tau0)
            .field("homogeneous", &self.homogeneous)
            .finish()
    }
}

impl SatBoundary {
    /// Only `τ0 = −1` is accepted.
    pub fn new(tau0: f64, g_left: TimeFn, g_right: TimeFn) -> Result<Self> {
        if tau0 != -1.0 {
            return Err(Error::InvalidTau0(tau0));
        }
        Ok(Self {
            tau0,
            g_left,
            g_right,
            homogeneous: false,
        })
    }

    pub fn no_flux() -> Self {
        Self {
            tau0: -1.0,
            g_left: Arc::new(|_| 0.0),
            g_right: Arc::new(|_| 0.0),
            homogeneous: true,
        }
    }

    pub fn constant(left: f64, right: f64) -> Self {
        if left == 0.0 && right == 0.0 {
            return Self::no_flux();
        }
        Self {
            tau0: -1.0,
            g_left: Arc::new(move |_| left),
            g_right: Arc::new(move |_| right),
            homogeneous: false,
        }
    }

    pub fn from_fns(
        g_left: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g_right: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            tau0: -1.0,
            g_left: Arc::new(g_left),
            g_right: Arc::new(g_right),
            homogeneous: false,
        }
    }

    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    pub fn g(&self, t: f64) -> (f64, f64) {
        ((self.g_left)(t), (self.g_right)(t))
    }

    /// Nodal vector carrying `g` at the two boundary nodes.
    pub fn g_vector(&self, n: usize, t: f64) -> Vec<f64> {
        let mut g = vec![0.0; n];
        let (l, r) = self.g(t);
        g[0] = l;
        g[n - 1] += r;
        g
    }
}

fn check_grids(a: &Grid1D, b: &Grid1D) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// `D_xx u + τ0 H⁻¹ B (K S u − g) + P‖ u`, evaluated term by term.
pub fn semi_discrete_rhs(
    u: &GridFunction,
    t: f64,
    ops: &SbpOperatorSet,
    sat: &SatBoundary,
    penalty: Option<&ParallelPenaltyOperator>,
) -> Result<GridFunction> {
    check_grids(u.grid(), ops.grid())?;
    let n = u.values().len();
    let h = ops.h();
    let b = boundary_diagonal(n);
    let g = sat.g_vector(n, t);
    let mut out = ops.second.apply(u.values());
    let su = ops.second.boundary_derivative().apply(u.values());
    let k = ops.second.kappa();
    for i in 0..n {
        out[i] += sat.tau0 * b[i] * (k[i] * su[i] - g[i]) / h[i];
    }
    add_penalty(&mut out, u.values(), penalty)?;
    GridFunction::new(u.grid(), out)
}

/// The same right-hand side in the reduced form `−H⁻¹ M u + H⁻¹ B g + P‖ u`
/// that holds for `τ0 = −1`.
pub fn semi_discrete_rhs_reduced(
    u: &GridFunction,
    t: f64,
    ops: &SbpOperatorSet,
    sat: &SatBoundary,
    penalty: Option<&ParallelPenaltyOperator>,
) -> Result<GridFunction> {
    check_grids(u.grid(), ops.grid())?;
    let n = u.values().len();
    let h = ops.h();
    let b = boundary_diagonal(n);
    let g = sat.g_vector(n, t);
    let mu = ops.second.m().apply(u.values());
    let mut out: Vec<f64> = (0..n).map(|i| (b[i] * g[i] - mu[i]) / h[i]).collect();
    add_penalty(&mut out, u.values(), penalty)?;
    GridFunction::new(u.grid(), out)
}

fn add_penalty(
    out: &mut [f64],
    u: &[f64],
    penalty: Option<&ParallelPenaltyOperator>,
) -> Result<()> {
    if let Some(p) = penalty {
        if p.h().len() != u.len() {
            return Err(Error::GridMismatch);
        }
        for (o, v) in out.iter_mut().zip(p.apply(u)) {
            *o += v;
        }
    }
    Ok(())
}

/// Symmetric positive-definite perpendicular system `S = H + Δt M`.
#[derive(Clone)]
pub struct StageOneSystem {
    grid: Arc<Grid1D>,
    matrix: BandMatrix,
    h: Vec<f64>,
    dt: f64,
    boundary: SatBoundary,
    source: Option<SourceFn>,
}

impl StageOneSystem {
    pub fn new(
        ops: &SbpOperatorSet,
        dt: f64,
        boundary: SatBoundary,
        source: Option<SourceFn>,
    ) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidTimeStep(format!(
                "Δt must be positive (got {dt})"
            )));
        }
        let h = ops.h().to_vec();
        let matrix = BandMatrix::from_diagonal(&h).add_scaled(dt, ops.second.m_band());
        Ok(Self {
            grid: Arc::clone(ops.grid()),
            matrix,
            h,
            dt,
            boundary,
            source,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn matrix(&self) -> &BandMatrix {
        &self.matrix
    }

    /// `H u_prev + Δt (B g(t) + H s(·, t))`
    pub fn rhs(&self, u_prev: &[f64], t: f64) -> Vec<f64> {
        let n = u_prev.len();
        let g = self.boundary.g_vector(n, t);
        let b = boundary_diagonal(n);
        let nodes = self.grid.nodes();
        (0..n)
            .map(|i| {
                let mut forcing = b[i] * g[i];
                if let Some(s) = &self.source {
                    forcing += self.h[i] * s(nodes[i], t);
                }
                self.h[i] * u_prev[i] + self.dt * forcing
            })
            .collect()
    }

    /// Symmetry and positive definiteness of `S` (dense eigensolve).
    pub fn certify(&self) -> PropertyReport {
        let dense = self.matrix.to_dense();
        let mut report = PropertyReport::new(format!("stage-one system Δt={:e}", self.dt));
        let asym = (&dense - dense.transpose())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        report.push(PropertyCheck::at_most("S symmetric", asym, 1e-13));
        let min = symmetric_eigenvalues(&dense)[0];
        report.push(PropertyCheck {
            name: "S positive definite".into(),
            residual: (-min).max(0.0),
            tolerance: 0.0,
            passed: min > 0.0,
        });
        report
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub u: GridFunction,
    pub t: f64,
    pub step_index: usize,
    /// `(t, ‖u‖_H²)` after every accepted step, starting with the initial state.
    pub energy_history: Vec<(f64, f64)>,
    pub cg_iterations: usize,
    /// Steps whose energy grew beyond [`ENERGY_SLACK`] under homogeneous data.
    pub energy_violations: usize,
}

impl SolverState {
    pub fn new(u: GridFunction, t: f64, h: &[f64]) -> Self {
        let e = h_norm_sq(h, u.values());
        Self {
            u,
            t,
            step_index: 0,
            energy_history: vec![(t, e)],
            cg_iterations: 0,
            energy_violations: 0,
        }
    }

    pub fn energy(&self) -> f64 {
        self.energy_history.last().map_or(0.0, |e| e.1)
    }
}

/// Perpendicular stage: returns `u^{l+½}` and the CG iteration count.
pub fn step_perpendicular(
    state: &SolverState,
    system: &StageOneSystem,
    cg: &CgConfig,
) -> Result<(Vec<f64>, usize)> {
    let t_next = state.t + system.dt;
    let rhs = system.rhs(state.u.values(), t_next);
    let out = cg_solve(&system.matrix, &rhs, Some(state.u.values()), cg)?;
    Ok((out.x, out.iterations))
}

/// Parallel stage, solved nodewise:
/// `u^{l+1}_j = (u^{l+½}_j − (c / 2H_jj)(w_f + w_b)_j) / (1 − c/H_jj)`,
/// evaluated as `u^{l+½}_j + r/(1 − r) (u^{l+½}_j − ½(w_f + w_b)_j)` with
/// `r = c/H_jj ≤ 0` so that a vanishing `A‖ u` leaves `u` bit-identical.
pub fn step_parallel(u_half: &[f64], dt: f64, penalty: &ParallelPenaltyOperator) -> Vec<f64> {
    let c = penalty.coupling(dt);
    if c == 0.0 {
        return u_half.to_vec();
    }
    let avg = penalty.averaged(u_half);
    let h = penalty.h();
    (0..u_half.len())
        .map(|j| {
            let r = c / h[j];
            u_half[j] + r / (1.0 - r) * (u_half[j] - avg[j])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeStepRule {
    Fixed(f64),
    /// `Δt = Δx`
    Dx,
    /// `Δt = Δx² / d`
    DxSquaredOver(f64),
}

impl TimeStepRule {
    pub fn dt(self, grid: &Grid1D) -> Result<f64> {
        let dt = match self {
            TimeStepRule::Fixed(dt) => dt,
            TimeStepRule::Dx => grid.dx(),
            TimeStepRule::DxSquaredOver(d) => grid.dx() * grid.dx() / d,
        };
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidTimeStep(format!("{self:?} gives Δt = {dt}")));
        }
        Ok(dt)
    }
}

/// Operators and data for one run of the splitting scheme.
#[derive(Clone)]
pub struct SplittingSolver {
    pub ops: SbpOperatorSet,
    pub sat: SatBoundary,
    pub penalty: Option<ParallelPenaltyOperator>,
    pub source: Option<SourceFn>,
    pub cg: CgConfig,
}

impl SplittingSolver {
    pub fn new(ops: SbpOperatorSet, sat: SatBoundary) -> Self {
        Self {
            ops,
            sat,
            penalty: None,
            source: None,
            cg: CgConfig::default(),
        }
    }

    pub fn with_penalty(mut self, penalty: ParallelPenaltyOperator) -> Self {
        self.penalty = Some(penalty);
        self
    }

    pub fn with_source(mut self, source: SourceFn) -> Self {
        self.source = Some(source);
        self
    }

    pub fn with_cg(mut self, cg: CgConfig) -> Self {
        self.cg = cg;
        self
    }

    pub fn initial_state(&self, u0: GridFunction) -> Result<SolverState> {
        check_grids(u0.grid(), self.ops.grid())?;
        Ok(SolverState::new(u0, 0.0, self.ops.h()))
    }

    pub fn stage_one_system(&self, dt: f64) -> Result<StageOneSystem> {
        StageOneSystem::new(&self.ops, dt, self.sat.clone(), self.source.clone())
    }

    /// Whether the energy must be non-increasing: homogeneous data, no source.
    fn monitors_energy(&self) -> bool {
        self.sat.is_homogeneous() && self.source.is_none()
    }

    /// One full step of length `system.dt()`.
    pub fn step(&self, state: &mut SolverState, system: &StageOneSystem) -> Result<()> {
        let t_next = state.t + system.dt();
        self.step_to(state, system, t_next)
    }

    fn step_to(&self, state: &mut SolverState, system: &StageOneSystem, t_next: f64) -> Result<()> {
        let step = state.step_index + 1;
        let wrap = |e: Error| Error::Step {
            step,
            source: Box::new(e),
        };
        let dt = system.dt();
        let (u_half, iterations) = step_perpendicular(state, system, &self.cg).map_err(wrap)?;
        let u_next = match &self.penalty {
            Some(p) => step_parallel(&u_half, dt, p),
            None => u_half,
        };
        check_finite(&u_next).map_err(wrap)?;
        let previous = state.energy();
        state.u = GridFunction::new(state.u.grid(), u_next).map_err(wrap)?;
        state.step_index = step;
        state.cg_iterations += iterations;
        let e = h_norm_sq(self.ops.h(), state.u.values());
        if self.monitors_energy() && e > previous * (1.0 + ENERGY_SLACK).powi(2) {
            if state.energy_violations == 0 {
                warn!("energy increased at step {step}: {previous:e} -> {e:e}");
            }
            state.energy_violations += 1;
        }
        state.t = t_next;
        state.energy_history.push((t_next, e));
        Ok(())
    }

    /// Steps with `Δt` from `rule` until `t = final_time`, shortening the
    /// last step to land on it exactly.
    pub fn advance(
        &self,
        mut state: SolverState,
        final_time: f64,
        rule: TimeStepRule,
    ) -> Result<SolverState> {
        if !(final_time > state.t) {
            return Err(Error::InvalidTimeStep(format!(
                "final time {final_time} must exceed current time {}",
                state.t
            )));
        }
        let dt = rule.dt(self.ops.grid())?;
        let system = self.stage_one_system(dt)?;
        let t0 = state.t;
        let mut k: u64 = 0;
        loop {
            let remaining = final_time - state.t;
            if remaining <= dt * 1e-9 {
                break;
            }
            if remaining <= dt * (1.0 + 1e-9) {
                let last = self.stage_one_system(remaining)?;
                self.step_to(&mut state, &last, final_time)?;
            } else {
                k += 1;
                self.step_to(&mut state, &system, t0 + k as f64 * dt)?;
            }
        }
        Ok(state)
    }
}
