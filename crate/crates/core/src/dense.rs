use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solve `a x = b` by partial-pivoting LU; fails on a zero pivot or a
/// non-finite solution.
pub(crate) fn lu_solve(a: DMatrix<f64>, b: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let lu = a.lu();
    let u = lu.u();
    let min_pivot = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if n > 0 && min_pivot <= 1e-13 * scale {
        return Err(Error::SingularSystem(format!(
            "{what}: pivot {min_pivot:e} relative to scale {scale:e}"
        )));
    }
    let x = lu
        .solve(&DVector::from_vec(b))
        .ok_or_else(|| Error::SingularSystem(what.to_string()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem(format!("{what}: non-finite solution")));
    }
    Ok(x.as_slice().to_vec())
}
