//! Parallel map operators.
//!
//! A point map sends each node `x_j` to a footpoint `y_j` on the forward or
//! backward plane. The map operator `P` evaluates a grid function at the
//! footpoints by piecewise-linear interpolation, so every row is a convex
//! combination of at most two nodal values. The parallel penalty is
//! `P‖ = (τ‖/2) κ‖ H⁻¹ (I − ½(P_f + P_b))` with `τ‖ = α/dx`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::linalg::{dot, symmetric_eigenvalues, DENSE_LIMIT};
use crate::report::{PropertyCheck, PropertyReport};

pub const ROW_SUM_TOL: f64 = 1e-13;
/// Slack on `λ_max(sym(½(P_f + P_b))) ≤ 1`.
pub const CERTIFICATE_TOL: f64 = 1e-10;
/// Relative to `‖u‖²`.
pub const DEFINITENESS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapDirection {
    Forward,
    Backward,
}

impl fmt::Display for MapDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MapDirection::Forward => "forward",
            MapDirection::Backward => "backward",
        })
    }
}

pub type MapFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum MapKind {
    Analytic {
        name: String,
        f: MapFn,
    },
    /// One target per node.
    Tabulated(Vec<f64>),
    /// Independent uniform targets on `[0, L]` drawn from ChaCha8 seeded with `seed`.
    Random {
        seed: u64,
        targets: Vec<f64>,
    },
}

impl fmt::Debug for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapKind::Analytic { name, .. } => write!(f, "Analytic({name})"),
            MapKind::Tabulated(t) => write!(f, "Tabulated({} targets)", t.len()),
            MapKind::Random { seed, .. } => write!(f, "Random(seed={seed})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PointMap {
    pub kind: MapKind,
    pub direction: MapDirection,
}

/// Footpoints of a map on a particular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MapTargets {
    pub targets: Vec<f64>,
    /// Number of raw targets that fell outside `[0, L]`.
    pub clamped: usize,
}

impl PointMap {
    pub fn analytic(
        name: impl Into<String>,
        direction: MapDirection,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind: MapKind::Analytic {
                name: name.into(),
                f: Arc::new(f),
            },
            direction,
        }
    }

    pub fn identity(direction: MapDirection) -> Self {
        Self::analytic("identity", direction, |x| x)
    }

    /// `F₁(x) = 1 − exp(−x)`
    pub fn f1(direction: MapDirection) -> Self {
        Self::analytic("f1", direction, f1)
    }

    /// `F₂(x) = ½(tanh(2πx − π) + 1)`
    pub fn f2(direction: MapDirection) -> Self {
        Self::analytic("f2", direction, f2)
    }

    pub fn tabulated(direction: MapDirection, targets: Vec<f64>) -> Self {
        Self {
            kind: MapKind::Tabulated(targets),
            direction,
        }
    }

    pub fn with_direction(mut self, direction: MapDirection) -> Self {
        self.direction = direction;
        self
    }

    pub fn name(&self) -> String {
        match &self.kind {
            MapKind::Analytic { name, .. } => name.clone(),
            MapKind::Tabulated(_) => "tabulated".into(),
            MapKind::Random { seed, .. } => format!("random(seed={seed})"),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self.kind {
            MapKind::Random { seed, .. } => Some(seed),
            _ => None,
        }
    }

    /// Raw footpoints clamped to `[0, L]`.
    pub fn evaluate(&self, grid: &Grid1D) -> Result<MapTargets> {
        let raw: Vec<f64> = match &self.kind {
            MapKind::Analytic { f, .. } => grid.nodes().iter().map(|&x| f(x)).collect(),
            MapKind::Tabulated(t) | MapKind::Random { targets: t, .. } => {
                if t.len() != grid.n() {
                    return Err(Error::LengthMismatch {
                        expected: grid.n(),
                        got: t.len(),
                    });
                }
                t.clone()
            }
        };
        let length = grid.length();
        let mut clamped = 0;
        let mut targets = Vec::with_capacity(raw.len());
        for (node, y) in raw.into_iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::MapNotFinite { node });
            }
            if !(0.0..=length).contains(&y) {
                clamped += 1;
            }
            targets.push(y.clamp(0.0, length));
        }
        if clamped > 0 {
            warn!(
                "{} map {}: {clamped} targets clamped to [0, {length}]",
                self.direction,
                self.name()
            );
        }
        Ok(MapTargets { targets, clamped })
    }
}

pub fn f1(x: f64) -> f64 {
    1.0 - (-x).exp()
}

pub fn f2(x: f64) -> f64 {
    use std::f64::consts::PI;
    0.5 * ((2.0 * PI * x - PI).tanh() + 1.0)
}

/// Random footpoints, uniform on `[0, L]`, reproducible from `seed`.
pub fn make_random_map(grid: &Grid1D, seed: u64) -> PointMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let length = grid.length();
    let targets = (0..grid.n())
        .map(|_| rng.random_range(0.0..=length))
        .collect();
    PointMap {
        kind: MapKind::Random { seed, targets },
        direction: MapDirection::Forward,
    }
}

/// Reads `node,target` rows (one-based node index). A header row and `#`
/// comment lines are skipped.
pub fn read_map_csv(reader: impl Read) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Table(format!(
                "row {}: expected 2 columns, got {}",
                line + 1,
                rec.len()
            )));
        }
        let node = rec[0].parse::<usize>();
        let target = rec[1].parse::<f64>();
        match (node, target) {
            (Ok(node), Ok(target)) => entries.push((node, target)),
            _ if line == 0 => continue,
            _ => {
                return Err(Error::Table(format!(
                    "row {}: cannot parse {:?}",
                    line + 1,
                    rec
                )))
            }
        }
    }
    entries.sort_by_key(|e| e.0);
    for (k, (node, _)) in entries.iter().enumerate() {
        if *node != k + 1 {
            return Err(Error::Table(format!(
                "node indices must be 1..=n without gaps (found {node} at position {})",
                k + 1
            )));
        }
    }
    Ok(entries.into_iter().map(|e| e.1).collect())
}

pub fn read_map_file(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    read_map_csv(std::fs::File::open(path)?)
}

/// Writes targets in the format read by [`read_map_csv`].
pub fn write_map_csv(mut w: impl Write, comments: &[String], targets: &[f64]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "node,target")?;
    for (j, y) in targets.iter().enumerate() {
        writeln!(w, "{},{:e}", j + 1, y)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct InterpRow {
    cols: [usize; 2],
    weights: [f64; 2],
    nnz: usize,
}

/// Piecewise-linear interpolation matrix with at most two nonzeros per row.
#[derive(Debug, Clone)]
pub struct InterpolationOperator {
    grid: Arc<Grid1D>,
    map_name: String,
    direction: MapDirection,
    targets: MapTargets,
    rows: Vec<InterpRow>,
}

pub fn build_interpolation(grid: &Arc<Grid1D>, map: &PointMap) -> Result<InterpolationOperator> {
    let targets = map.evaluate(grid)?;
    let nodes = grid.nodes();
    let n = nodes.len();
    let rows = targets
        .targets
        .iter()
        .map(|&y| {
            // first node strictly greater than y
            let k = nodes.partition_point(|&x| x <= y);
            if k == 0 || nodes[k - 1] == y || k == n {
                let j = k.saturating_sub(1).min(n - 1);
                return InterpRow {
                    cols: [j, j],
                    weights: [1.0, 0.0],
                    nnz: 1,
                };
            }
            let (left, right) = (k - 1, k);
            let theta = (y - nodes[left]) / (nodes[right] - nodes[left]);
            InterpRow {
                cols: [left, right],
                weights: [1.0 - theta, theta],
                nnz: 2,
            }
        })
        .collect();
    Ok(InterpolationOperator {
        grid: Arc::clone(grid),
        map_name: map.name(),
        direction: map.direction,
        targets,
        rows,
    })
}

impl InterpolationOperator {
    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn map_name(&self) -> &str {
        &self.map_name
    }

    pub fn direction(&self) -> MapDirection {
        self.direction
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets.targets
    }

    pub fn clamped(&self) -> usize {
        self.targets.clamped
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(&self.rows) {
            *o = (0..r.nnz).map(|k| r.weights[k] * u[r.cols[k]]).sum();
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, &mut out);
        out
    }

    /// Row `j` as `(column, weight)` pairs.
    pub fn row(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = &self.rows[j];
        (0..r.nnz).map(move |k| (r.cols[k], r.weights[k]))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.rows.len();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            for (c, w) in self.row(j) {
                m[(j, c)] += w;
            }
        }
        m
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows.len())
            .map(|j| self.row(j).map(|(_, w)| w).sum())
            .collect()
    }

    fn column_sums_into(&self, v: &[f64], out: &mut [f64]) {
        for (j, r) in self.rows.iter().enumerate() {
            for k in 0..r.nnz {
                out[r.cols[k]] += r.weights[k] * v[j];
            }
        }
    }
}

/// Checks row-stochasticity of a map operator.
pub fn verify_interpolation(p: &InterpolationOperator) -> PropertyReport {
    let mut report = PropertyReport::new(format!(
        "{} map {} n={}",
        p.direction,
        p.map_name,
        p.rows.len()
    ));
    let worst_sum = p
        .row_sums()
        .iter()
        .fold(0.0f64, |m, s| m.max((s - 1.0).abs()));
    report.push(PropertyCheck::at_most(
        "row sums = 1",
        worst_sum,
        ROW_SUM_TOL,
    ));
    let most_negative = p
        .rows
        .iter()
        .flat_map(|r| r.weights[..r.nnz].iter().copied())
        .fold(0.0f64, |m, w| m.max(-w));
    report.push(PropertyCheck::at_most("weights >= 0", most_negative, 0.0));
    let norm_inf = (0..p.rows.len())
        .map(|j| p.row(j).map(|(_, w)| w.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    report.push(PropertyCheck::at_most(
        "|P|_inf <= 1",
        (norm_inf - 1.0).max(0.0),
        ROW_SUM_TOL,
    ));
    report
}

#[derive(Debug, Clone)]
pub struct ParallelPenaltyOperator {
    pf: InterpolationOperator,
    pb: InterpolationOperator,
    kappa_par: f64,
    alpha: f64,
    tau_par: f64,
    h: Vec<f64>,
    certificate: f64,
}

pub fn assemble_parallel_penalty(
    pf: InterpolationOperator,
    pb: InterpolationOperator,
    kappa_par: f64,
    alpha: f64,
    h: &[f64],
    dx: f64,
) -> Result<ParallelPenaltyOperator> {
    if !(alpha <= 0.0) {
        return Err(Error::PositiveAlpha(alpha));
    }
    if !(kappa_par >= 0.0) {
        return Err(Error::NegativeKappaPar(kappa_par));
    }
    if *pf.grid != *pb.grid || h.len() != pf.rows.len() {
        return Err(Error::GridMismatch);
    }
    let certificate = averaged_map_lambda_max(&pf, &pb);
    let op = ParallelPenaltyOperator {
        pf,
        pb,
        kappa_par,
        alpha,
        tau_par: alpha / dx,
        h: h.to_vec(),
        certificate,
    };
    if !op.is_certified() {
        warn!(
            "parallel maps ({} / {}): λ_max(sym(½(P_f+P_b))) = {certificate:.6} > 1, \
             definiteness of the parallel penalty is not guaranteed; monitor the energy",
            op.pf.map_name, op.pb.map_name
        );
    }
    Ok(op)
}

impl ParallelPenaltyOperator {
    pub fn forward(&self) -> &InterpolationOperator {
        &self.pf
    }

    pub fn backward(&self) -> &InterpolationOperator {
        &self.pb
    }

    pub fn kappa_par(&self) -> f64 {
        self.kappa_par
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tau_par(&self) -> f64 {
        self.tau_par
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    /// Largest eigenvalue of the symmetric part of `½(P_f + P_b)`.
    pub fn certificate(&self) -> f64 {
        self.certificate
    }

    pub fn is_certified(&self) -> bool {
        self.certificate <= 1.0 + CERTIFICATE_TOL
    }

    /// `½(P_f u + P_b u)`
    pub fn averaged(&self, u: &[f64]) -> Vec<f64> {
        let mut wf = self.pf.apply(u);
        let wb = self.pb.apply(u);
        for (a, b) in wf.iter_mut().zip(&wb) {
            *a = 0.5 * (*a + b);
        }
        wf
    }

    /// `A‖ u = u − ½(P_f + P_b) u`
    pub fn a_par_apply(&self, u: &[f64]) -> Vec<f64> {
        let avg = self.averaged(u);
        u.iter().zip(&avg).map(|(a, b)| a - b).collect()
    }

    /// `P‖ u = (τ‖/2) κ‖ H⁻¹ A‖ u`
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let s = 0.5 * self.tau_par * self.kappa_par;
        self.a_par_apply(u)
            .into_iter()
            .zip(&self.h)
            .map(|(a, h)| s * a / h)
            .collect()
    }

    pub fn a_par_dense(&self) -> DMatrix<f64> {
        let n = self.h.len();
        DMatrix::identity(n, n) - (self.pf.to_dense() + self.pb.to_dense()) * 0.5
    }

    /// `H P‖ = (τ‖/2) κ‖ A‖`
    pub fn h_p_par_dense(&self) -> DMatrix<f64> {
        self.a_par_dense() * (0.5 * self.tau_par * self.kappa_par)
    }

    /// Stage-two coupling `c = Δt τ‖ κ‖ / 2 ≤ 0`.
    pub fn coupling(&self, dt: f64) -> f64 {
        0.5 * dt * self.tau_par * self.kappa_par
    }
}

/// `λ_max(sym(½(P_f + P_b)))`: dense eigensolve up to [`DENSE_LIMIT`] nodes,
/// shifted power iteration above.
fn averaged_map_lambda_max(pf: &InterpolationOperator, pb: &InterpolationOperator) -> f64 {
    let n = pf.rows.len();
    if n <= DENSE_LIMIT {
        let avg = (pf.to_dense() + pb.to_dense()) * 0.5;
        return symmetric_eigenvalues(&avg).last().copied().unwrap_or(0.0);
    }
    // y = sym(P̄) v = ¼ (P_f + P_b + P_fᵀ + P_bᵀ) v
    let sym_apply = |v: &[f64]| -> Vec<f64> {
        let mut y = vec![0.0; n];
        let a = pf.apply(v);
        let b = pb.apply(v);
        pf.column_sums_into(v, &mut y);
        pb.column_sums_into(v, &mut y);
        for j in 0..n {
            y[j] = 0.25 * (y[j] + a[j] + b[j]);
        }
        y
    };
    // Gershgorin shift makes the spectrum of sym(P̄) + σI non-negative
    let mut colsum = vec![0.0; n];
    let ones = vec![1.0; n];
    pf.column_sums_into(&ones, &mut colsum);
    pb.column_sums_into(&ones, &mut colsum);
    let sigma = 0.25 * (2.0 + colsum.iter().fold(0.0f64, |m, c| m.max(*c))) * 2.0;
    let mut v: Vec<f64> = (0..n)
        .map(|j| 1.0 + (j as f64 * 0.618).sin() * 0.1)
        .collect();
    let mut lambda = 0.0;
    for _ in 0..20_000 {
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let mut w = sym_apply(&v);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi += sigma * vi;
        }
        let next = dot(&v, &w);
        v = w;
        if (next - lambda).abs() <= 1e-13 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda - sigma
}

/// The two sign conditions on `A‖` and `H P‖`, plus row-stochasticity of both
/// maps, sampled on `samples` random vectors drawn from `seed`.
pub fn verify_parallel_penalty(
    op: &ParallelPenaltyOperator,
    samples: usize,
    seed: u64,
) -> PropertyReport {
    let n = op.h.len();
    let mut report = PropertyReport::new(format!(
        "parallel penalty {} / {} α={} κ‖={}",
        op.pf.map_name, op.pb.map_name, op.alpha, op.kappa_par
    ));
    report.extend(verify_interpolation(&op.pf));
    report.extend(verify_interpolation(&op.pb));
    report.push(PropertyCheck::at_most("alpha <= 0", op.alpha.max(0.0), 0.0));
    report.push(PropertyCheck::at_most(
        "lambda_max(sym(Pavg)) <= 1",
        (op.certificate - 1.0).max(0.0),
        CERTIFICATE_TOL,
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_a: f64 = 0.0;
    let mut worst_hp: f64 = 0.0;
    let s = 0.5 * op.tau_par * op.kappa_par;
    for _ in 0..samples {
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let uu = dot(&u, &u);
        let ua = dot(&u, &op.a_par_apply(&u));
        // uᵀ(A + Aᵀ)u = 2 uᵀAu, and H P‖ = s A‖
        worst_a = worst_a.max(-2.0 * ua / uu);
        worst_hp = worst_hp.max(2.0 * s * ua / uu);
    }
    report.push(PropertyCheck::at_most(
        "u^T(A+A^T)u >= 0",
        worst_a.max(0.0),
        DEFINITENESS_TOL,
    ));
    report.push(PropertyCheck::at_most(
        "u^T(HP+(HP)^T)u <= 0",
        worst_hp.max(0.0),
        DEFINITENESS_TOL,
    ));
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::linalg::{max_abs_diff, LinearOperator};
    use crate::sbp::{build_first_derivative, SbpOrder};
    use proptest::prelude::*;

    fn grid(n: usize) -> Arc<Grid1D> {
        make_grid(1.0, n).unwrap()
    }

    fn penalty(g: &Arc<Grid1D>, f: PointMap, b: PointMap, alpha: f64) -> ParallelPenaltyOperator {
        let d = build_first_derivative(g, SbpOrder::Order2).unwrap();
        assemble_parallel_penalty(
            build_interpolation(g, &f).unwrap(),
            build_interpolation(g, &b).unwrap(),
            1.0,
            alpha,
            d.h(),
            g.dx(),
        )
        .unwrap()
    }

    #[test]
    fn identity_map_is_identity_matrix() {
        for n in [2, 3, 17, 101, 1000] {
            let g = grid(n);
            let p = build_interpolation(&g, &PointMap::identity(MapDirection::Forward)).unwrap();
            assert_eq!(p.to_dense(), DMatrix::identity(n, n));
        }
    }

    #[test]
    fn constant_map_picks_first_node() {
        let g = grid(11);
        let p = build_interpolation(
            &g,
            &PointMap::analytic("zero", MapDirection::Forward, |_| 0.0),
        )
        .unwrap();
        let u: Vec<f64> = g.nodes().iter().map(|x| 3.0 + x).collect();
        assert!(p.apply(&u).iter().all(|&v| v == u[0]));
        for j in 0..11 {
            assert_eq!(p.row(j).collect::<Vec<_>>(), vec![(0, 1.0)]);
        }
    }

    #[test]
    fn f1_rows_are_stochastic() {
        let g = grid(101);
        let p = build_interpolation(&g, &PointMap::f1(MapDirection::Forward)).unwrap();
        assert_eq!(p.clamped(), 0);
        let report = verify_interpolation(&p);
        assert!(report.passed(), "{report}");
        let m = p.to_dense();
        assert!(m.iter().all(|&w| w >= 0.0));
        let norm_inf = m
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        assert!((norm_inf - 1.0).abs() <= 1e-13);
        assert!((0..101).all(|j| p.row(j).count() <= 2));
        // F₁ maps [0, 1] into [0, 1 − e⁻¹]
        assert!(p
            .targets()
            .iter()
            .all(|&y| y <= 1.0 - (-1.0f64).exp() + 1e-15));
    }

    #[test]
    fn out_of_range_targets_are_clamped_and_counted() {
        let g = grid(21);
        let map = PointMap::analytic("stretch", MapDirection::Backward, |x| 2.0 * x - 0.5);
        let p = build_interpolation(&g, &map).unwrap();
        // 2x − 0.5 < 0 for x < 0.25 (5 nodes), > 1 for x > 0.75 (5 nodes)
        assert_eq!(p.clamped(), 10);
        assert!(p.targets().iter().all(|&y| (0.0..=1.0).contains(&y)));
        assert!(verify_interpolation(&p).passed());
    }

    #[test]
    fn nan_target_is_reported_with_node() {
        let g = grid(11);
        let map = PointMap::analytic("bad", MapDirection::Forward, |x| {
            if x > 0.45 {
                f64::NAN
            } else {
                x
            }
        });
        let err = build_interpolation(&g, &map).unwrap_err();
        assert!(matches!(err, Error::MapNotFinite { node: 5 }));
    }

    #[test]
    fn tabulated_length_checked() {
        let g = grid(11);
        let map = PointMap::tabulated(MapDirection::Forward, vec![0.5; 10]);
        assert!(matches!(
            build_interpolation(&g, &map),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn random_map_reproducible() {
        let g = grid(101);
        let a = make_random_map(&g, 17);
        let b = make_random_map(&g, 17);
        let c = make_random_map(&g, 18);
        let ta = a.evaluate(&g).unwrap();
        let tb = b.evaluate(&g).unwrap();
        let tc = c.evaluate(&g).unwrap();
        assert_eq!(ta, tb);
        assert_ne!(ta.targets, tc.targets);
        assert_eq!(ta.clamped, 0);
        assert!(ta.targets.iter().all(|&y| (0.0..=1.0).contains(&y)));
        assert_eq!(a.seed(), Some(17));
    }

    #[test]
    fn random_map_regression_values() {
        // ChaCha8 stream for seed 17
        let g = grid(101);
        let t = make_random_map(&g, 17).evaluate(&g).unwrap().targets;
        let head: Vec<String> = t[..3].iter().map(|v| format!("{v:.12}")).collect();
        assert_eq!(head, RANDOM_SEED17_HEAD);
    }

    const RANDOM_SEED17_HEAD: [&str; 3] = ["0.704751342483", "0.649059042387", "0.561116328136"];

    #[test]
    fn csv_round_trip() {
        let targets = vec![0.0, 0.25, 1.0 / 3.0, 1.0];
        let mut buf = Vec::new();
        write_map_csv(&mut buf, &["seed=3".into()], &targets).unwrap();
        let back = read_map_csv(buf.as_slice()).unwrap();
        assert_eq!(back, targets);
    }

    #[test]
    fn csv_rejects_gaps() {
        let text = "node,target\n1,0.0\n3,0.5\n";
        assert!(matches!(
            read_map_csv(text.as_bytes()),
            Err(Error::Table(_))
        ));
        let text = "1,0.0\n2,abc\n";
        assert!(matches!(
            read_map_csv(text.as_bytes()),
            Err(Error::Table(_))
        ));
    }

    #[test]
    fn identity_maps_give_zero_penalty() {
        let g = grid(33);
        let op = penalty(
            &g,
            PointMap::identity(MapDirection::Forward),
            PointMap::identity(MapDirection::Backward),
            -1.0,
        );
        assert_eq!(op.a_par_dense(), DMatrix::zeros(33, 33));
        let u: Vec<f64> = g.nodes().iter().map(|x| (5.0 * x).cos()).collect();
        assert!(op.apply(&u).iter().all(|&v| v == 0.0));
        assert!(op.is_certified());
    }

    #[test]
    fn zero_alpha_gives_zero_penalty() {
        let g = grid(33);
        let op = penalty(
            &g,
            PointMap::f1(MapDirection::Forward),
            PointMap::f2(MapDirection::Backward),
            0.0,
        );
        let u: Vec<f64> = g.nodes().iter().map(|x| (5.0 * x).cos()).collect();
        assert!(op.apply(&u).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positive_alpha_rejected() {
        let g = grid(9);
        let p = build_interpolation(&g, &PointMap::identity(MapDirection::Forward)).unwrap();
        let h = vec![g.dx(); 9];
        let err =
            assemble_parallel_penalty(p.clone(), p.clone(), 1.0, 1.0, &h, g.dx()).unwrap_err();
        assert!(err.to_string().contains("stability requires α ≤ 0"));
        let err = assemble_parallel_penalty(p.clone(), p, -1.0, -1.0, &h, g.dx()).unwrap_err();
        assert!(matches!(err, Error::NegativeKappaPar(_)));
    }

    #[test]
    fn tau_is_alpha_over_dx() {
        let g = grid(51);
        let op = penalty(
            &g,
            PointMap::identity(MapDirection::Forward),
            PointMap::identity(MapDirection::Backward),
            -2.0,
        );
        assert!((op.tau_par() - (-2.0 / 0.02)).abs() < 1e-12);
    }

    #[test]
    fn certificate_matches_dense_oracle() {
        let g = grid(101);
        let op = penalty(
            &g,
            PointMap::f1(MapDirection::Forward),
            PointMap::f2(MapDirection::Backward),
            -1.0,
        );
        let avg = (op.forward().to_dense() + op.backward().to_dense()) * 0.5;
        let sym = (&avg + avg.transpose()) * 0.5;
        let lmax = nalgebra::SymmetricEigen::new(sym).eigenvalues.max();
        assert!((op.certificate() - lmax).abs() < 1e-12);
    }

    #[test]
    fn power_iteration_matches_dense_certificate() {
        let n = DENSE_LIMIT + 1;
        let g = grid(n);
        let pf = build_interpolation(&g, &PointMap::f2(MapDirection::Forward)).unwrap();
        let pb = build_interpolation(&g, &PointMap::identity(MapDirection::Backward)).unwrap();
        let power = averaged_map_lambda_max(&pf, &pb);
        let avg = (pf.to_dense() + pb.to_dense()) * 0.5;
        let dense = symmetric_eigenvalues(&avg).last().copied().unwrap();
        assert!(
            (power - dense).abs() < 1e-6 * dense.abs(),
            "{power} vs {dense}"
        );
    }

    #[test]
    fn lemma_conditions_for_certified_maps() {
        let g = grid(65);
        // reflection x → L − x is a permutation, so sym(P̄) has λ_max = 1
        let op = penalty(
            &g,
            PointMap::analytic("reflect", MapDirection::Forward, |x| 1.0 - x),
            PointMap::identity(MapDirection::Backward),
            -1.0,
        );
        assert!(op.is_certified(), "{}", op.certificate());
        let report = verify_parallel_penalty(&op, 100, 1);
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn h_p_par_symmetric_part_oracle() {
        // dense eigenvalue oracle for the quadratic-form bound on certified maps
        let g = grid(65);
        let op = penalty(
            &g,
            PointMap::analytic("reflect", MapDirection::Forward, |x| 1.0 - x),
            PointMap::analytic("reflect", MapDirection::Backward, |x| 1.0 - x),
            -1.0,
        );
        let hp = op.h_p_par_dense();
        let ev = symmetric_eigenvalues(&hp);
        assert!(*ev.last().unwrap() <= 1e-10);
        let u: Vec<f64> = g.nodes().iter().map(|x| (9.0 * x).sin() + x).collect();
        let direct = 2.0 * dot(&u, &hp.apply(&u));
        let via_action = 2.0
            * dot(
                &u,
                &op.h
                    .iter()
                    .zip(op.apply(&u))
                    .map(|(h, p)| h * p)
                    .collect::<Vec<_>>(),
            );
        assert!((direct - via_action).abs() < 1e-10 * dot(&u, &u));
    }

    #[test]
    fn penalty_preserves_constants() {
        let g = grid(40);
        let op = penalty(
            &g,
            make_random_map(&g, 5),
            make_random_map(&g, 6).with_direction(MapDirection::Backward),
            -1.0,
        );
        let ones = vec![1.0; 40];
        assert!(max_abs_diff(&op.averaged(&ones), &ones) <= 1e-13);
        assert!(op.apply(&ones).iter().all(|v| v.abs() <= 1e-11));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn interpolation_max_principle(n in 2usize..80, seed in any::<u64>(), useed in any::<u64>()) {
            let g = grid(n);
            let p = build_interpolation(&g, &make_random_map(&g, seed)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(useed);
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let lo = u.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for v in p.apply(&u) {
                prop_assert!(v >= lo - 1e-14 && v <= hi + 1e-14);
            }
            for s in p.row_sums() {
                prop_assert!((s - 1.0).abs() <= ROW_SUM_TOL);
            }
        }
    }
}
