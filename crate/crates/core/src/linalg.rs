//! Small dense least-squares helpers on top of nalgebra's SVD.

use nalgebra::{ComplexField, DMatrix, DVector};

use crate::error::{QpeError, Result};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_RTOL: f64 = 1e-10;

/// Moore-Penrose pseudo-inverse with a relative singular-value cutoff.
pub fn pinv<T>(a: &DMatrix<T>, rtol: f64) -> Result<DMatrix<T>>
where
    T: ComplexField<RealField = f64>,
{
    let (nr, nc) = a.shape();
    if nr == 0 || nc == 0 {
        return Err(QpeError::Degenerate("empty matrix".into()));
    }
    let svd = nalgebra::SVD::try_new(a.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| QpeError::Degenerate(format!("SVD failed for a {nr}x{nc} matrix")))?;
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if !(smax > 0.0) || !smax.is_finite() {
        return Err(QpeError::Degenerate("matrix has no non-zero singular values".into()));
    }
    let cutoff = rtol * smax;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    // pinv = V diag(1/s) U^H, built column-block by column-block
    let mut scaled_vt = v_t.clone();
    for (i, s) in svd.singular_values.iter().enumerate() {
        let inv = if *s > cutoff { 1.0 / *s } else { 0.0 };
        scaled_vt.row_mut(i).scale_mut(inv);
    }
    Ok(scaled_vt.adjoint() * u.adjoint())
}

/// Minimum-norm solution of `min ||a x - b||`.
pub fn lstsq<T>(a: &DMatrix<T>, b: &DVector<T>, rtol: f64) -> Result<DVector<T>>
where
    T: ComplexField<RealField = f64>,
{
    if a.nrows() != b.len() {
        return Err(QpeError::LengthMismatch {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    Ok(pinv(a, rtol)? * b)
}

/// Singular values in descending order.
pub fn singular_values<T>(a: &DMatrix<T>) -> Vec<f64>
where
    T: ComplexField<RealField = f64>,
{
    let mut s: Vec<f64> = a.clone().singular_values().iter().cloned().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}
