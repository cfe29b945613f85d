//! Matrix storage for the difference operators.
//!
//! Operators are assembled as band matrices and then kept either dense or
//! banded depending on the grid size. Both representations expose the same
//! action through [`LinearOperator`].

use nalgebra::{DMatrix, SymmetricEigen};

/// Largest grid for which operators are kept dense under [`StoragePolicy::Auto`].
pub const DENSE_LIMIT: usize = 2048;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum StoragePolicy {
    /// Dense up to [`DENSE_LIMIT`] nodes, banded above.
    #[default]
    Auto,
    Dense,
    Banded,
}

impl StoragePolicy {
    pub fn use_dense(self, n: usize) -> bool {
        match self {
            StoragePolicy::Auto => n <= DENSE_LIMIT,
            StoragePolicy::Dense => true,
            StoragePolicy::Banded => false,
        }
    }
}

/// Square matrix-vector action.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// `y = A x`
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }

    /// Main diagonal, when cheaply available (Jacobi preconditioning).
    fn diagonal(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Square band matrix with `lower` sub- and `upper` super-diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    // row-major, row i holds columns i-lower ..= i+upper
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        let lower = lower.min(n.saturating_sub(1));
        let upper = upper.min(n.saturating_sub(1));
        Self {
            n,
            lower,
            upper,
            data: vec![0.0; n * (lower + upper + 1)],
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), 0, 0);
        m.data.copy_from_slice(d);
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.lower, self.upper)
    }

    fn width(&self) -> usize {
        self.lower + self.upper + 1
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.lower >= i && j <= i + self.upper
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width() + (j + self.lower - i)
    }

    /// Column range stored for row `i`.
    fn row_cols(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.lower)..(i + self.upper + 1).min(self.n)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    /// Panics if `(i, j)` lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n, self.upper, self.lower);
        for i in 0..self.n {
            for j in self.row_cols(i) {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &BandMatrix) -> Self {
        assert_eq!(self.n, other.n);
        let mut c = Self::zeros(self.n, self.lower + other.lower, self.upper + other.upper);
        for i in 0..self.n {
            for k in self.row_cols(i) {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in other.row_cols(k) {
                    c.add_to(i, j, a * other.get(k, j));
                }
            }
        }
        c
    }

    /// `diag(d) * self`
    pub fn scale_rows(&self, d: &[f64]) -> Self {
        let mut m = self.clone();
        for i in 0..self.n {
            for j in self.row_cols(i) {
                let s = m.slot(i, j);
                m.data[s] *= d[i];
            }
        }
        m
    }

    /// `self + scale * other`
    pub fn add_scaled(&self, scale: f64, other: &BandMatrix) -> Self {
        let mut m = Self::zeros(
            self.n,
            self.lower.max(other.lower),
            self.upper.max(other.upper),
        );
        for i in 0..self.n {
            for j in self.row_cols(i) {
                m.add_to(i, j, self.get(i, j));
            }
            for j in other.row_cols(i) {
                m.add_to(i, j, scale * other.get(i, j));
            }
        }
        m
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in self.row_cols(i) {
                d[(i, j)] = self.get(i, j);
            }
        }
        d
    }
}

impl LinearOperator for BandMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let w = self.width();
        for (i, yi) in y.iter_mut().enumerate() {
            let cols = self.row_cols(i);
            let base = i * w + (cols.start + self.lower - i);
            let row = &self.data[base..base + cols.len()];
            *yi = row.iter().zip(&x[cols]).map(|(a, b)| a * b).sum();
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some((0..self.n).map(|i| self.get(i, i)).collect())
    }
}

/// An operator in whichever representation the storage policy chose.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorMatrix {
    Dense(DMatrix<f64>),
    Banded(BandMatrix),
}

impl OperatorMatrix {
    pub fn from_band(band: BandMatrix, policy: StoragePolicy) -> Self {
        if policy.use_dense(band.n()) {
            OperatorMatrix::Dense(band.to_dense())
        } else {
            OperatorMatrix::Banded(band)
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, OperatorMatrix::Dense(_))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            OperatorMatrix::Dense(d) => d.clone(),
            OperatorMatrix::Banded(b) => b.to_dense(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            OperatorMatrix::Dense(d) => d[(i, j)],
            OperatorMatrix::Banded(b) => b.get(i, j),
        }
    }
}

impl LinearOperator for OperatorMatrix {
    fn dim(&self) -> usize {
        match self {
            OperatorMatrix::Dense(d) => d.nrows(),
            OperatorMatrix::Banded(b) => b.n(),
        }
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        match self {
            OperatorMatrix::Dense(d) => {
                let n = d.nrows();
                for (i, yi) in y.iter_mut().enumerate().take(n) {
                    *yi = d.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            OperatorMatrix::Banded(b) => b.apply_into(x, y),
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        match self {
            OperatorMatrix::Dense(d) => Some(d.diagonal().iter().copied().collect()),
            OperatorMatrix::Banded(b) => b.diagonal(),
        }
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(self.diagonal().iter().copied().collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `uᵀ H u` for diagonal `H`.
pub fn h_norm_sq(h: &[f64], u: &[f64]) -> f64 {
    h.iter().zip(u).map(|(w, v)| w * v * v).sum()
}

pub fn max_abs_entry(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> BandMatrix {
        let mut b = BandMatrix::zeros(n, 2, 1);
        for i in 0..n {
            for j in i.saturating_sub(2)..(i + 2).min(n) {
                b.set(i, j, (1 + i * 7 + j * 3) as f64 * 0.1);
            }
        }
        b
    }

    #[test]
    fn band_matches_dense() {
        let a = sample(9);
        let b = sample(9).transpose();
        let x: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
        let dense = a.to_dense();
        let y1 = a.apply(&x);
        let y2 = dense.apply(&x);
        assert!(max_abs_diff(&y1, &y2) < 1e-14);
        let c = a.matmul(&b).to_dense();
        let c2 = &dense * b.to_dense();
        assert!(max_abs_entry(&(c - c2)) < 1e-13);
        assert_eq!(a.transpose().to_dense(), dense.transpose());
    }

    #[test]
    #[should_panic(expected = "outside band")]
    fn set_outside_band_panics() {
        let mut b = BandMatrix::zeros(5, 1, 1);
        b.set(0, 3, 1.0);
    }

    #[test]
    fn bandwidth_is_capped_by_size() {
        let b = BandMatrix::zeros(3, 10, 10);
        assert_eq!(b.bandwidths(), (2, 2));
    }
}
