//! Diagonal-norm SBP coefficient tables (Mattsson & Nordström 2004, Strand 1994).
//!
//! Boundary blocks list the first rows of the operator scaled by `dx` (first
//! derivative) or `dx²` (second derivative). Rows at the right boundary follow
//! by the mirror rules in the parent module.

pub(crate) struct FirstDerivTable {
    pub norm: &'static [f64],
    pub block: &'static [&'static [f64]],
    /// Interior stencil centred on the diagonal.
    pub interior: &'static [f64],
}

pub(crate) struct SecondDerivTable {
    pub block: &'static [&'static [f64]],
    pub interior: &'static [f64],
    /// One-sided boundary first derivative used in the `B S` term.
    pub boundary_derivative: &'static [f64],
}

pub(crate) const D1_ORDER2: FirstDerivTable = FirstDerivTable {
    norm: &[0.5],
    block: &[&[-1.0, 1.0]],
    interior: &[-0.5, 0.0, 0.5],
};

#[rustfmt::skip]
pub(crate) const D1_ORDER4: FirstDerivTable = FirstDerivTable {
    norm: &[17.0 / 48.0, 59.0 / 48.0, 43.0 / 48.0, 49.0 / 48.0],
    block: &[
        &[-24.0 / 17.0, 59.0 / 34.0, -4.0 / 17.0, -3.0 / 34.0, 0.0, 0.0],
        &[-1.0 / 2.0, 0.0, 1.0 / 2.0, 0.0, 0.0, 0.0],
        &[4.0 / 43.0, -59.0 / 86.0, 0.0, 59.0 / 86.0, -4.0 / 43.0, 0.0],
        &[3.0 / 98.0, 0.0, -59.0 / 98.0, 0.0, 32.0 / 49.0, -4.0 / 49.0],
    ],
    interior: &[1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0],
};

/// Constant-coefficient narrow-stencil second derivative, interior order 4.
#[rustfmt::skip]
pub(crate) const D2_ORDER4_NARROW: SecondDerivTable = SecondDerivTable {
    block: &[
        &[2.0, -5.0, 4.0, -1.0, 0.0, 0.0],
        &[1.0, -2.0, 1.0, 0.0, 0.0, 0.0],
        &[-4.0 / 43.0, 59.0 / 43.0, -110.0 / 43.0, 59.0 / 43.0, -4.0 / 43.0, 0.0],
        &[-1.0 / 49.0, 0.0, 59.0 / 49.0, -118.0 / 49.0, 64.0 / 49.0, -4.0 / 49.0],
    ],
    interior: &[-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0],
    boundary_derivative: &[-11.0 / 6.0, 3.0, -3.0 / 2.0, 1.0 / 3.0],
};

/// Boundary first derivative paired with the variable-coefficient order-2 narrow operator.
pub(crate) const S_ORDER2: &[f64] = &[-1.5, 2.0, -0.5];
