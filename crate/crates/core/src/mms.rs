//! Manufactured-solution convergence study.
//!
//! Exact solution `u(x, t) = cos(2πt) sin(17πx + 1)` with constant κ; the
//! forcing and Neumann data are its analytic derivatives. The parallel penalty
//! is off.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::Result;
use crate::grid::{make_grid, Grid1D, GridFunction};
use crate::linalg::h_norm_sq;
use crate::sbp::{SbpOperatorSet, SbpOrder, SecondDerivConstruction};
use crate::solver::{SatBoundary, SolverState, SplittingSolver, TimeStepRule};

const WAVE: f64 = 17.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedCase {
    pub kappa: f64,
    pub length: f64,
}

impl ManufacturedCase {
    pub fn new(kappa: f64) -> Self {
        Self { kappa, length: 1.0 }
    }

    pub fn exact(&self, x: f64, t: f64) -> f64 {
        (2.0 * PI * t).cos() * (WAVE * x + 1.0).sin()
    }

    pub fn du_dx(&self, x: f64, t: f64) -> f64 {
        (2.0 * PI * t).cos() * WAVE * (WAVE * x + 1.0).cos()
    }

    /// `u_t − (κ u_x)_x`
    pub fn source(&self, x: f64, t: f64) -> f64 {
        let spatial = (WAVE * x + 1.0).sin();
        -2.0 * PI * (2.0 * PI * t).sin() * spatial
            + self.kappa * WAVE * WAVE * (2.0 * PI * t).cos() * spatial
    }

    pub fn g_left(&self, t: f64) -> f64 {
        self.kappa * self.du_dx(0.0, t)
    }

    pub fn g_right(&self, t: f64) -> f64 {
        self.kappa * self.du_dx(self.length, t)
    }

    pub fn boundary(&self) -> SatBoundary {
        let (a, b) = (*self, *self);
        SatBoundary::from_fns(move |t| a.g_left(t), move |t| b.g_right(t))
    }
}

pub fn manufactured_source(case: &ManufacturedCase, grid: &Arc<Grid1D>, t: f64) -> GridFunction {
    GridFunction::from_fn(grid, |x| case.source(x, t)).expect("source is finite")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub dx: f64,
    pub error: f64,
    /// Observed rate against the previous (coarser) row.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub order: SbpOrder,
    pub construction: SecondDerivConstruction,
    pub dt_rule: TimeStepRule,
    pub kappa: f64,
    pub final_time: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    /// Builds the table from `(n, dx, error)` triples, filling in rates.
    pub fn from_errors(
        order: SbpOrder,
        construction: SecondDerivConstruction,
        dt_rule: TimeStepRule,
        kappa: f64,
        final_time: f64,
        levels: &[(usize, f64, f64)],
    ) -> Self {
        let rows = levels
            .iter()
            .enumerate()
            .map(|(i, &(n, dx, error))| ConvergenceRow {
                n,
                dx,
                error,
                rate: (i > 0).then(|| {
                    let (_, dx0, e0) = levels[i - 1];
                    (e0 / error).ln() / (dx0 / dx).ln()
                }),
            })
            .collect();
        Self {
            order,
            construction,
            dt_rule,
            kappa,
            final_time,
            rows,
        }
    }

    pub fn rates(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.rate).collect()
    }

    pub fn mean_rate(&self) -> Option<f64> {
        let r = self.rates();
        (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
    }

    pub fn errors_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error < w[0].error)
    }

    /// Columns `n,dx,error,rate`; the first row's rate is empty.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("n,dx,error,rate\n");
        for r in &self.rows {
            let rate = r.rate.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:e},{:e},{}", r.n, r.dx, r.error, rate);
        }
        out
    }
}

/// Result of one refinement level.
#[derive(Debug, Clone)]
pub struct LevelResult {
    pub grid: Arc<Grid1D>,
    pub state: SolverState,
    pub error: f64,
    /// `|K S u − g|` at the left and right boundary at the final time.
    pub flux_mismatch: (f64, f64),
}

/// Integrates the manufactured problem on one grid and measures the
/// `H`-weighted relative error at `final_time`.
pub fn run_level(
    case: &ManufacturedCase,
    order: SbpOrder,
    construction: SecondDerivConstruction,
    n: usize,
    final_time: f64,
    dt_rule: TimeStepRule,
) -> Result<LevelResult> {
    let grid = make_grid(case.length, n)?;
    let kappa = GridFunction::constant(&grid, case.kappa)?;
    let ops = SbpOperatorSet::new(&grid, order, &kappa, construction)?;
    let c = *case;
    let solver = SplittingSolver::new(ops, case.boundary())
        .with_source(Arc::new(move |x, t| c.source(x, t)));
    let u0 = GridFunction::from_fn(&grid, |x| case.exact(x, 0.0))?;
    let state = solver.advance(solver.initial_state(u0)?, final_time, dt_rule)?;

    let h = solver.ops.h();
    let exact: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&x| case.exact(x, final_time))
        .collect();
    let diff: Vec<f64> = state
        .u
        .values()
        .iter()
        .zip(&exact)
        .map(|(a, b)| a - b)
        .collect();
    let error = (h_norm_sq(h, &diff) / h_norm_sq(h, &exact)).sqrt();

    let (fl, fr) = solver.ops.second.boundary_flux(state.u.values());
    let t = state.t;
    let flux_mismatch = ((fl - case.g_left(t)).abs(), (fr - case.g_right(t)).abs());
    Ok(LevelResult {
        grid,
        state,
        error,
        flux_mismatch,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub operators: Vec<(SbpOrder, SecondDerivConstruction)>,
    /// Strictly increasing node counts.
    pub grids: Vec<usize>,
    pub kappa: f64,
    pub final_time: f64,
    pub dt_rule: TimeStepRule,
}

impl Default for ConvergenceStudy {
    fn default() -> Self {
        Self {
            operators: vec![(
                SbpOrder::Order2,
                SecondDerivConstruction::WideFullyCompatible,
            )],
            grids: vec![65, 129, 257, 513],
            kappa: 1.0,
            final_time: DEFAULT_FINAL_TIME,
            dt_rule: TimeStepRule::DxSquaredOver(100.0),
        }
    }
}

/// `cos(2π·0.05) ≈ 0.95`, so the exact solution is O(1) when measured.
pub const DEFAULT_FINAL_TIME: f64 = 0.05;

/// Runs every (operator, grid) pair; levels run on separate threads.
pub fn run_convergence(study: &ConvergenceStudy) -> Result<Vec<ConvergenceReport>> {
    if study.grids.windows(2).any(|w| w[1] <= w[0]) {
        return Err(crate::Error::InvalidGrid(
            "convergence grid sizes must be strictly increasing".into(),
        ));
    }
    let case = ManufacturedCase::new(study.kappa);
    let mut reports = Vec::new();
    for &(order, construction) in &study.operators {
        let levels: Vec<Result<(usize, f64, f64)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = study
                .grids
                .iter()
                .map(|&n| {
                    scope.spawn(move || {
                        let r = run_level(
                            &case,
                            order,
                            construction,
                            n,
                            study.final_time,
                            study.dt_rule,
                        )?;
                        Ok((n, r.grid.dx(), r.error))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("convergence level panicked"))
                .collect()
        });
        let levels = levels.into_iter().collect::<Result<Vec<_>>>()?;
        reports.push(ConvergenceReport::from_errors(
            order,
            construction,
            study.dt_rule,
            study.kappa,
            study.final_time,
            &levels,
        ));
    }
    Ok(reports)
}
