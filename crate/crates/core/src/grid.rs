//! Uniform grids on `[0, L]` and the grid functions that live on them.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Uniform node distribution `x_j = (j-1) dx`, `dx = L/(n-1)`, for `j = 1..=n`.
///
/// Stored zero-based: `nodes()[0] == 0` and `nodes()[n-1] == L`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    length: f64,
    dx: f64,
    nodes: Vec<f64>,
}

impl Grid1D {
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
}

/// Builds the uniform grid with `n` nodes on `[0, length]`.
pub fn make_grid(length: f64, n: usize) -> Result<Arc<Grid1D>> {
    if !(length.is_finite() && length > 0.0) {
        return Err(Error::InvalidGrid(format!(
            "length must be positive and finite (got {length})"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidGrid(format!("need n >= 2 nodes (got {n})")));
    }
    let dx = length / (n - 1) as f64;
    let mut nodes: Vec<f64> = (0..n).map(|j| j as f64 * dx).collect();
    nodes[n - 1] = length;
    Ok(Arc::new(Grid1D { length, dx, nodes }))
}

/// Values of a scalar field at every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Arc<Grid1D>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: &Arc<Grid1D>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::LengthMismatch {
                expected: grid.n(),
                got: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(Self {
            grid: Arc::clone(grid),
            values,
        })
    }

    pub fn from_fn(grid: &Arc<Grid1D>, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().iter().map(|&x| f(x)).collect())
    }

    pub fn constant(grid: &Arc<Grid1D>, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.n()])
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|&v| v == self.values[0])
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(node) => Err(Error::NonFiniteValue {
            node,
            value: values[node],
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_grid() {
        let g = make_grid(1.0, 2).unwrap();
        assert_eq!(g.nodes(), &[0.0, 1.0]);
        assert_eq!(g.dx(), 1.0);
    }

    #[test]
    fn five_point_grid() {
        let g = make_grid(1.0, 5).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.dx(), 0.25);
    }

    #[test]
    fn midpoint_of_long_grid() {
        let g = make_grid(2.0, 101).unwrap();
        assert!((g.dx() - 0.02).abs() < 1e-15);
        // nodes[51] in one-based numbering
        assert!((g.nodes()[50] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        let e = make_grid(0.0, 10).unwrap_err();
        assert!(e.to_string().contains("length"));
        let e = make_grid(-1.0, 10).unwrap_err();
        assert!(e.to_string().contains("length"));
        let e = make_grid(1.0, 1).unwrap_err();
        assert!(e.to_string().contains("n >= 2"));
        assert!(make_grid(f64::NAN, 10).is_err());
    }

    #[test]
    fn grid_function_checks() {
        let g = make_grid(1.0, 4).unwrap();
        assert!(matches!(
            GridFunction::new(&g, vec![0.0; 3]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            GridFunction::new(&g, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(Error::NonFiniteValue { node: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn spacing_is_uniform(length in 1e-3f64..1e3, n in 2usize..3000) {
            let g = make_grid(length, n).unwrap();
            let x = g.nodes();
            prop_assert_eq!(x[0], 0.0);
            prop_assert_eq!(x[n - 1], length);
            for w in x.windows(2) {
                prop_assert!(w[1] > w[0]);
                prop_assert!((w[1] - w[0] - g.dx()).abs() <= 1e-14 * length);
            }
            let again = make_grid(length, n).unwrap();
            prop_assert_eq!(&*g, &*again);
        }
    }
}
