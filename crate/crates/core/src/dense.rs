use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `a * x = b` by LU with partial pivoting.
pub(crate) fn lu_solve(a: DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let lu = a.lu();
    let x = lu.solve(b).ok_or(Error::Singular(what))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Singular(what))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
