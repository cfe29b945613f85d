//! Conjugate gradient for symmetric positive-definite systems.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    /// Relative residual target `‖b − A x‖ / ‖b‖`.
    pub tol: f64,
    /// Defaults to `10 n` when `None`.
    pub max_iter: Option<usize>,
    pub jacobi: bool,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            jacobi: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `A x = b`, starting from `x0` when given.
pub fn cg_solve<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    x0: Option<&[f64]>,
    cfg: &CgConfig,
) -> Result<CgOutcome> {
    let n = a.dim();
    assert_eq!(b.len(), n, "right-hand side length");
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let max_iter = cfg.max_iter.unwrap_or(10 * n);
    let inv_diag: Option<Vec<f64>> = if cfg.jacobi {
        a.diagonal().map(|d| d.iter().map(|v| 1.0 / v).collect())
    } else {
        None
    };
    let precondition = |r: &[f64]| -> Vec<f64> {
        match &inv_diag {
            Some(d) => r.iter().zip(d).map(|(r, d)| r * d).collect(),
            None => r.to_vec(),
        }
    };

    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut ap = vec![0.0; n];
    a.apply_into(&x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(b, ax)| b - ax).collect();
    let mut rel = norm2(&r) / b_norm;
    if rel <= cfg.tol {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            relative_residual: rel,
        });
    }
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);

    for it in 1..=max_iter {
        a.apply_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            // not positive definite along p
            return Err(Error::CgNotConverged {
                iterations: it,
                residual: rel,
            });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        rel = norm2(&r) / b_norm;
        if rel <= cfg.tol {
            return Ok(CgOutcome {
                x,
                iterations: it,
                relative_residual: rel,
            });
        }
        z = precondition(&r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::CgNotConverged {
        iterations: max_iter,
        residual: rel,
    })
}
