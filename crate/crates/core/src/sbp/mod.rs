//! Diagonal-norm summation-by-parts operators.
//!
//! First derivative `D = H⁻¹Q` with `Q + Qᵀ = B = diag(-1, 0, …, 0, 1)`, and
//! second derivative `D_xx = H⁻¹(-M + B K S)` where `M` is symmetric positive
//! semidefinite and `S` is the boundary derivative. For the wide construction
//! `S = D` and `M = Dᵀ K H D`. Every operator is checked against these
//! identities when it is built.

mod tables;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridFunction};
use crate::linalg::{
    max_abs_entry, symmetric_eigenvalues, BandMatrix, LinearOperator, OperatorMatrix, StoragePolicy,
};
use crate::report::{PropertyCheck, PropertyReport};
use tables::{FirstDerivTable, SecondDerivTable, D1_ORDER2, D1_ORDER4, D2_ORDER4_NARROW, S_ORDER2};

pub const Q_SKEW_TOL: f64 = 1e-13;
pub const DX_CONSTANT_TOL: f64 = 1e-12;
pub const DX_LINEAR_TOL: f64 = 1e-10;
pub const M_SYMMETRY_TOL: f64 = 1e-13;
/// Relative to the spectral norm of `M`.
pub const PSD_REL_TOL: f64 = 1e-10;
pub const COMPATIBILITY_TOL: f64 = 1e-12;
pub const DXX_CONSTANT_TOL: f64 = 1e-12;
pub const DXX_LINEAR_TOL: f64 = 1e-10;
/// Relative to the domain length.
pub const QUADRATURE_TOL: f64 = 1e-12;

/// Interior accuracy order of the first-derivative operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SbpOrder {
    Order2,
    Order4,
}

impl SbpOrder {
    /// Number of rows at each end that deviate from the interior stencil.
    pub fn closure_width(self) -> usize {
        match self {
            SbpOrder::Order2 => 1,
            SbpOrder::Order4 => 4,
        }
    }

    pub fn min_nodes(self) -> usize {
        2 * self.closure_width()
    }

    pub fn interior_order(self) -> u32 {
        match self {
            SbpOrder::Order2 => 2,
            SbpOrder::Order4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SbpOrder::Order2 => "order2",
            SbpOrder::Order4 => "order4",
        }
    }

    fn first_table(self) -> &'static FirstDerivTable {
        match self {
            SbpOrder::Order2 => &D1_ORDER2,
            SbpOrder::Order4 => &D1_ORDER4,
        }
    }

    fn check_grid(self, grid: &Grid1D) -> Result<()> {
        if grid.n() < self.min_nodes() {
            return Err(Error::GridTooSmall {
                order: self.name(),
                min: self.min_nodes(),
                n: grid.n(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for SbpOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How `M` is formed for the second-derivative operator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum SecondDerivConstruction {
    /// `M = Dᵀ K H D`, `R = 0`. Any order, variable κ.
    #[default]
    WideFullyCompatible,
    /// Narrow-stencil operator. Order 2 with variable κ, order 4 with constant κ.
    NarrowCompatible,
}

impl SecondDerivConstruction {
    pub fn name(self) -> &'static str {
        match self {
            SecondDerivConstruction::WideFullyCompatible => "wide",
            SecondDerivConstruction::NarrowCompatible => "narrow",
        }
    }
}

impl fmt::Display for SecondDerivConstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `B = diag(-1, 0, …, 0, 1)`.
pub fn boundary_diagonal(n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n];
    b[0] = -1.0;
    b[n - 1] += 1.0;
    b
}

/// Places a boundary block and its mirror image into a band matrix.
/// `parity = -1` for odd operators (first derivative), `+1` for even.
fn place_block(m: &mut BandMatrix, block: &[&[f64]], scale: f64, parity: f64) {
    let n = m.n();
    for (i, row) in block.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c != 0.0 {
                m.set(i, j, c * scale);
                m.set(n - 1 - i, n - 1 - j, parity * c * scale);
            }
        }
    }
}

fn place_interior(m: &mut BandMatrix, interior: &[f64], first: usize, scale: f64) {
    let n = m.n();
    let half = interior.len() / 2;
    for i in first..n - first {
        for (k, &c) in interior.iter().enumerate() {
            if c != 0.0 {
                m.set(i, i + k - half, c * scale);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FirstDerivOperator {
    grid: Arc<Grid1D>,
    order: SbpOrder,
    h: Vec<f64>,
    q: OperatorMatrix,
    d: OperatorMatrix,
    d_band: BandMatrix,
}

impl FirstDerivOperator {
    /// Assembles an operator from a norm diagonal and `Q` without checking
    /// any SBP property. Use [`verify_first_derivative`] on the result.
    pub fn from_parts(
        grid: &Arc<Grid1D>,
        order: SbpOrder,
        h: Vec<f64>,
        q: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = grid.n();
        if h.len() != n || q.nrows() != n || q.ncols() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: h.len().min(q.nrows()).min(q.ncols()),
            });
        }
        let mut d_band = BandMatrix::zeros(n, n - 1, n - 1);
        for i in 0..n {
            for j in 0..n {
                d_band.set(i, j, q[(i, j)] / h[i]);
            }
        }
        Ok(Self {
            grid: Arc::clone(grid),
            order,
            h,
            q: OperatorMatrix::Dense(q.clone()),
            d: OperatorMatrix::Dense(d_band.to_dense()),
            d_band,
        })
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn order(&self) -> SbpOrder {
        self.order
    }

    /// Diagonal of the norm matrix `H`.
    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn q(&self) -> &OperatorMatrix {
        &self.q
    }

    pub fn d(&self) -> &OperatorMatrix {
        &self.d
    }

    pub fn boundary(&self) -> Vec<f64> {
        boundary_diagonal(self.grid.n())
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.d.apply(u)
    }
}

pub fn build_first_derivative(grid: &Arc<Grid1D>, order: SbpOrder) -> Result<FirstDerivOperator> {
    build_first_derivative_with(grid, order, StoragePolicy::Auto)
}

pub fn build_first_derivative_with(
    grid: &Arc<Grid1D>,
    order: SbpOrder,
    policy: StoragePolicy,
) -> Result<FirstDerivOperator> {
    order.check_grid(grid)?;
    let n = grid.n();
    let dx = grid.dx();
    let table = order.first_table();

    let mut h = vec![dx; n];
    for (i, &w) in table.norm.iter().enumerate() {
        h[i] = w * dx;
        h[n - 1 - i] = w * dx;
    }

    let block_width = table.block.iter().map(|r| r.len()).max().unwrap_or(0);
    let band = (block_width - 1).max(table.interior.len() / 2);
    let mut d = BandMatrix::zeros(n, band, band);
    place_interior(&mut d, table.interior, table.block.len(), 1.0 / dx);
    place_block(&mut d, table.block, 1.0 / dx, -1.0);
    let q = d.scale_rows(&h);

    let op = FirstDerivOperator {
        grid: Arc::clone(grid),
        order,
        h,
        q: OperatorMatrix::from_band(q, policy),
        d: OperatorMatrix::from_band(d.clone(), policy),
        d_band: d,
    };
    certify(verify_first_derivative(&op, Scaling::Magnitude))?;
    Ok(op)
}

#[derive(Debug, Clone)]
pub struct SecondDerivOperator {
    grid: Arc<Grid1D>,
    order: SbpOrder,
    construction: SecondDerivConstruction,
    kappa: Vec<f64>,
    m: OperatorMatrix,
    r: OperatorMatrix,
    s: OperatorMatrix,
    d_xx: OperatorMatrix,
    m_band: BandMatrix,
}

impl SecondDerivOperator {
    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn order(&self) -> SbpOrder {
        self.order
    }

    pub fn construction(&self) -> SecondDerivConstruction {
        self.construction
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn m(&self) -> &OperatorMatrix {
        &self.m
    }

    pub(crate) fn m_band(&self) -> &BandMatrix {
        &self.m_band
    }

    pub fn r(&self) -> &OperatorMatrix {
        &self.r
    }

    /// Boundary derivative `S` appearing in `B K S`; equals `D` for the wide construction.
    pub fn boundary_derivative(&self) -> &OperatorMatrix {
        &self.s
    }

    pub fn d_xx(&self) -> &OperatorMatrix {
        &self.d_xx
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.d_xx.apply(u)
    }

    /// `K S u` at the two boundary nodes: the discrete boundary fluxes.
    pub fn boundary_flux(&self, u: &[f64]) -> (f64, f64) {
        let su = self.s.apply(u);
        let n = u.len();
        (self.kappa[0] * su[0], self.kappa[n - 1] * su[n - 1])
    }
}

pub fn build_second_derivative(
    first: &FirstDerivOperator,
    kappa: &GridFunction,
    construction: SecondDerivConstruction,
) -> Result<SecondDerivOperator> {
    build_second_derivative_with(first, kappa, construction, StoragePolicy::Auto)
}

pub fn build_second_derivative_with(
    first: &FirstDerivOperator,
    kappa: &GridFunction,
    construction: SecondDerivConstruction,
    policy: StoragePolicy,
) -> Result<SecondDerivOperator> {
    let grid = first.grid();
    if **kappa.grid() != **grid {
        return Err(Error::GridMismatch);
    }
    let order = first.order();
    order.check_grid(grid)?;
    if let Some((node, &value)) = kappa.values().iter().enumerate().find(|(_, &k)| k < 0.0) {
        return Err(Error::NegativeKappa { node, value });
    }
    let n = grid.n();
    let dx = grid.dx();
    let k = kappa.values().to_vec();

    let d = &first.d_band;
    let kh: Vec<f64> = k.iter().zip(first.h()).map(|(a, b)| a * b).collect();
    let wide = d.transpose().matmul(&d.scale_rows(&kh));

    let (m, s) = match (construction, order) {
        (SecondDerivConstruction::WideFullyCompatible, _) => (wide.clone(), d.clone()),
        (SecondDerivConstruction::NarrowCompatible, SbpOrder::Order2) => {
            (narrow_order2(&k, dx), boundary_stencil(n, S_ORDER2, dx))
        }
        (SecondDerivConstruction::NarrowCompatible, SbpOrder::Order4) => {
            if !kappa.is_constant() {
                return Err(Error::UnsupportedConstruction(
                    "narrow order-4 operator requires constant κ".into(),
                ));
            }
            let table = &D2_ORDER4_NARROW;
            let s = boundary_stencil(n, table.boundary_derivative, dx);
            (narrow_constant(table, &s, first.h(), dx).scale_rows(&k), s)
        }
    };
    let m = zero_row_sums(&symmetrize(&m));
    let r = match construction {
        SecondDerivConstruction::WideFullyCompatible => BandMatrix::zeros(n, 0, 0),
        SecondDerivConstruction::NarrowCompatible => symmetrize(&m.add_scaled(-1.0, &wide)),
    };

    // D_xx = H⁻¹(-M + B K S)
    let b = boundary_diagonal(n);
    let bk: Vec<f64> = b.iter().zip(&k).map(|(b, k)| b * k).collect();
    let h_inv: Vec<f64> = first.h().iter().map(|h| 1.0 / h).collect();
    let d_xx = zero_row_sums(&s.scale_rows(&bk).add_scaled(-1.0, &m).scale_rows(&h_inv));

    let op = SecondDerivOperator {
        grid: Arc::clone(grid),
        order,
        construction,
        kappa: k,
        m: OperatorMatrix::from_band(m.clone(), policy),
        r: OperatorMatrix::from_band(r, policy),
        s: OperatorMatrix::from_band(s, policy),
        d_xx: OperatorMatrix::from_band(d_xx, policy),
        m_band: m,
    };
    certify(verify_second_derivative_cheap(
        first,
        &op,
        Scaling::Magnitude,
    ))?;
    Ok(op)
}

fn symmetrize(m: &BandMatrix) -> BandMatrix {
    m.add_scaled(1.0, &m.transpose())
        .scale_rows(&vec![0.5; m.n()])
}

/// Resets each diagonal entry to minus the sum of its off-diagonal row entries,
/// so constants lie in the null space up to summation roundoff only.
fn zero_row_sums(m: &BandMatrix) -> BandMatrix {
    let n = m.n();
    let (lo, up) = m.bandwidths();
    let mut out = m.clone();
    for i in 0..n {
        let off: f64 = (i.saturating_sub(lo)..(i + up + 1).min(n))
            .filter(|&j| j != i)
            .map(|j| m.get(i, j))
            .sum();
        out.set(i, i, -off);
    }
    out
}

/// Rows holding the one-sided boundary derivative at both ends, zero elsewhere.
fn boundary_stencil(n: usize, coeffs: &[f64], dx: f64) -> BandMatrix {
    let w = coeffs.len() - 1;
    let mut s = BandMatrix::zeros(n, w, w);
    for (j, &c) in coeffs.iter().enumerate() {
        s.set(0, j, c / dx);
        s.set(n - 1, n - 1 - j, -c / dx);
    }
    s
}

/// `M = -H D2 + B S` for a constant-coefficient narrow table (κ = 1).
fn narrow_constant(table: &SecondDerivTable, s: &BandMatrix, h: &[f64], dx: f64) -> BandMatrix {
    let n = h.len();
    let block_width = table.block.iter().map(|r| r.len()).max().unwrap_or(0);
    let band = (block_width - 1).max(table.interior.len() / 2);
    let mut d2 = BandMatrix::zeros(n, band, band);
    let scale = 1.0 / (dx * dx);
    place_interior(&mut d2, table.interior, table.block.len(), scale);
    place_block(&mut d2, table.block, scale, 1.0);
    let bs = s.scale_rows(&boundary_diagonal(n));
    bs.add_scaled(-1.0, &d2.scale_rows(h))
}

/// `uᵀ M u = Σ ½(κ_i + κ_{i+1}) (u_{i+1} - u_i)² / dx`.
fn narrow_order2(kappa: &[f64], dx: f64) -> BandMatrix {
    let n = kappa.len();
    let mut m = BandMatrix::zeros(n, 1, 1);
    for i in 0..n - 1 {
        let c = 0.5 * (kappa[i] + kappa[i + 1]) / dx;
        m.add_to(i, i, c);
        m.add_to(i + 1, i + 1, c);
        m.add_to(i, i + 1, -c);
        m.add_to(i + 1, i, -c);
    }
    m
}

/// A first- and second-derivative pair built on one grid.
#[derive(Debug, Clone)]
pub struct SbpOperatorSet {
    pub first: FirstDerivOperator,
    pub second: SecondDerivOperator,
}

impl SbpOperatorSet {
    pub fn new(
        grid: &Arc<Grid1D>,
        order: SbpOrder,
        kappa: &GridFunction,
        construction: SecondDerivConstruction,
    ) -> Result<Self> {
        let first = build_first_derivative(grid, order)?;
        let second = build_second_derivative(&first, kappa, construction)?;
        Ok(Self { first, second })
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        self.first.grid()
    }

    pub fn h(&self) -> &[f64] {
        self.first.h()
    }
}

/// How action residuals are compared with their tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    /// Tolerances are absolute.
    Absolute,
    /// Tolerances on operator actions `A v` are raised to the roundoff floor
    /// `8 ε ‖A‖_∞ ‖v‖_∞` when that is larger; second-derivative entries grow
    /// like `1/dx²` and cancellation error with them.
    Magnitude,
}

fn action_tolerance(scaling: Scaling, tol: f64, row_norm: f64, v_norm: f64) -> f64 {
    match scaling {
        Scaling::Absolute => tol,
        Scaling::Magnitude => tol.max(8.0 * f64::EPSILON * row_norm * v_norm),
    }
}

fn row_norm_inf(m: &OperatorMatrix) -> f64 {
    let n = m.dim();
    let mut best: f64 = 0.0;
    match m {
        OperatorMatrix::Dense(d) => {
            for i in 0..n {
                best = best.max(d.row(i).iter().map(|v| v.abs()).sum());
            }
        }
        OperatorMatrix::Banded(b) => {
            let (lo, up) = b.bandwidths();
            for i in 0..n {
                let s: f64 = (i.saturating_sub(lo)..(i + up + 1).min(n))
                    .map(|j| b.get(i, j).abs())
                    .sum();
                best = best.max(s);
            }
        }
    }
    best
}

/// Residual of `‖A v − expected‖_∞`, optionally restricted to `rows`.
fn action_residual(
    a: &OperatorMatrix,
    v: &[f64],
    expected: impl Fn(usize) -> f64,
    rows: std::ops::Range<usize>,
) -> f64 {
    let y = a.apply(v);
    rows.map(|i| (y[i] - expected(i)).abs()).fold(0.0, f64::max)
}

pub fn verify_first_derivative(op: &FirstDerivOperator, scaling: Scaling) -> PropertyReport {
    let grid = op.grid();
    let n = grid.n();
    let mut report = PropertyReport::new(format!("first derivative {} n={}", op.order, n));

    let q = op.q.to_dense();
    let mut skew = &q + q.transpose();
    skew[(0, 0)] += 1.0;
    skew[(n - 1, n - 1)] -= 1.0;
    report.push(PropertyCheck::at_most(
        "Q+Qt=B",
        max_abs_entry(&skew),
        Q_SKEW_TOL,
    ));

    let min_h = op.h.iter().copied().fold(f64::INFINITY, f64::min);
    report.push(PropertyCheck {
        name: "H positive".into(),
        residual: (-min_h).max(0.0),
        tolerance: 0.0,
        passed: min_h > 0.0,
    });

    let total: f64 = op.h.iter().sum();
    report.push(PropertyCheck::at_most(
        "H quadrature",
        (total - grid.length()).abs() / grid.length(),
        QUADRATURE_TOL,
    ));

    let dn = row_norm_inf(&op.d);
    let ones = vec![1.0; n];
    let r = action_residual(&op.d, &ones, |_| 0.0, 0..n);
    report.push(PropertyCheck::at_most(
        "Dx constant",
        r,
        action_tolerance(scaling, DX_CONSTANT_TOL, dn, 1.0),
    ));
    let r = action_residual(&op.d, grid.nodes(), |_| 1.0, 0..n);
    report.push(PropertyCheck::at_most(
        "Dx linear",
        r,
        action_tolerance(scaling, DX_LINEAR_TOL, dn, grid.length()),
    ));
    report
}

fn verify_second_derivative_cheap(
    first: &FirstDerivOperator,
    second: &SecondDerivOperator,
    scaling: Scaling,
) -> PropertyReport {
    let grid = first.grid();
    let n = grid.n();
    let mut report = PropertyReport::new(format!(
        "second derivative {} {} n={}",
        second.order, second.construction, n
    ));

    let m = second.m.to_dense();
    let r = second.r.to_dense();
    report.push(PropertyCheck::at_most(
        "M symmetric",
        max_abs_entry(&(&m - m.transpose())),
        M_SYMMETRY_TOL,
    ));
    report.push(PropertyCheck::at_most(
        "R symmetric",
        max_abs_entry(&(&r - r.transpose())),
        COMPATIBILITY_TOL,
    ));

    let d = first.d.to_dense();
    let kh = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        second.kappa.iter().zip(first.h()).map(|(k, h)| k * h),
    ));
    let compat = &m - d.transpose() * kh * &d - &r;
    report.push(PropertyCheck::at_most(
        "M = Dx^T KH Dx + R",
        max_abs_entry(&compat),
        COMPATIBILITY_TOL,
    ));

    let dn = row_norm_inf(&second.d_xx);
    let ones = vec![1.0; n];
    let res = action_residual(&second.d_xx, &ones, |_| 0.0, 0..n);
    report.push(PropertyCheck::at_most(
        "Dxx constant",
        res,
        action_tolerance(scaling, DXX_CONSTANT_TOL, dn, 1.0),
    ));
    if second.kappa.iter().all(|&k| k == second.kappa[0]) {
        let res = action_residual(&second.d_xx, grid.nodes(), |_| 0.0, 0..n);
        report.push(PropertyCheck::at_most(
            "Dxx linear",
            res,
            action_tolerance(scaling, DXX_LINEAR_TOL, dn, grid.length()),
        ));
    }
    report
}

/// Runs every check on a first/second derivative pair, including the
/// eigenvalue-based semidefiniteness of `M` and `R`. Action checks use
/// [`Scaling::Magnitude`]; matrix-entry checks are always absolute.
pub fn verify_operator_set(
    first: &FirstDerivOperator,
    second: &SecondDerivOperator,
) -> Result<PropertyReport> {
    verify_operator_set_scaled(first, second, Scaling::Magnitude)
}

pub fn verify_operator_set_scaled(
    first: &FirstDerivOperator,
    second: &SecondDerivOperator,
    scaling: Scaling,
) -> Result<PropertyReport> {
    if **first.grid() != **second.grid() {
        return Err(Error::GridMismatch);
    }
    let mut report = PropertyReport::new(format!(
        "SBP operator set {} {} n={}",
        first.order,
        second.construction,
        first.grid().n()
    ));
    report.extend(verify_first_derivative(first, scaling));
    report.extend(verify_second_derivative_cheap(first, second, scaling));
    for (name, mat) in [("M", &second.m), ("R", &second.r)] {
        let (min_eig, norm) = min_eig_and_norm(&mat.to_dense());
        // R may vanish identically; relative to ‖M‖ in both cases
        let scale = if name == "M" {
            norm
        } else {
            min_eig_and_norm(&second.m.to_dense()).1
        };
        report.push(PropertyCheck::at_most(
            format!("{name} PSD"),
            (-min_eig).max(0.0) / scale.max(f64::MIN_POSITIVE),
            PSD_REL_TOL,
        ));
    }
    Ok(report)
}

/// Smallest eigenvalue and spectral norm of a symmetric matrix.
pub fn min_eig_and_norm(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = symmetric_eigenvalues(m);
    let min = ev.first().copied().unwrap_or(0.0);
    let norm = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    (min, norm)
}

fn certify(report: PropertyReport) -> Result<()> {
    if report.passed() {
        return Ok(());
    }
    let failed: Vec<String> = report
        .failures()
        .map(|c| format!("{} (residual {:e} > {:e})", c.name, c.residual, c.tolerance))
        .collect();
    Err(Error::Certification(format!(
        "{}: {}",
        report.title,
        failed.join(", ")
    )))
}

#[cfg(test)]
mod tests;
