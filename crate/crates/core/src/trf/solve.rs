//! Ridge solvers for the normal equations.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Smallest accepted ratio between the extreme squared Cholesky pivots
/// before an unregularized system is reported as singular.
const PIVOT_RATIO_FLOOR: f64 = 1e-14;

fn to_mat(a: ArrayView2<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Solves `(G + diag(penalty)) W = C` by Cholesky factorization.
pub fn cholesky_solve(
    gram: ArrayView2<'_, f64>,
    penalty: &Array1<f64>,
    rhs: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    let p = gram.nrows();
    let ridge_max = penalty.iter().copied().fold(0.0, f64::max);
    let a = Mat::from_fn(p, p, |i, j| {
        if i == j {
            gram[[i, j]] + penalty[i]
        } else {
            gram[[i, j]]
        }
    });
    let chol = a
        .llt(Side::Lower)
        .map_err(|_| Error::Singular { ridge: ridge_max })?;
    let l = chol.L();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..p {
        let d = l[(i, i)] * l[(i, i)];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if p > 0 && (!(lo > 0.0) || lo < PIVOT_RATIO_FLOOR * hi) && penalty.iter().any(|&r| r == 0.0) {
        return Err(Error::Singular { ridge: ridge_max });
    }
    let w = chol.solve(to_mat(rhs));
    let out = Array2::from_shape_fn((w.nrows(), w.ncols()), |(i, j)| w[(i, j)]);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite coefficients".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 5000,
        }
    }
}

/// Conjugate gradients on a symmetric positive definite operator, one column of `rhs` at a time.
pub fn conjugate_gradient<F>(
    apply: F,
    rhs: ArrayView2<'_, f64>,
    settings: CgSettings,
) -> Result<Array2<f64>>
where
    F: Fn(&Array1<f64>) -> Array1<f64> + Sync,
{
    use rayon::prelude::*;
    let cols: Vec<Result<Array1<f64>>> = (0..rhs.ncols())
        .into_par_iter()
        .map(|k| {
            let b = rhs.column(k).to_owned();
            let b_norm = b.dot(&b).sqrt();
            let mut x = Array1::zeros(b.len());
            if b_norm == 0.0 {
                return Ok(x);
            }
            let mut r = b.clone();
            let mut d = r.clone();
            let mut rr = r.dot(&r);
            for _ in 0..settings.max_iterations {
                if rr.sqrt() <= settings.tolerance * b_norm {
                    return Ok(x);
                }
                let ad = apply(&d);
                let dad = d.dot(&ad);
                if !(dad > 0.0) {
                    return Err(Error::Singular { ridge: 0.0 });
                }
                let step = rr / dad;
                x.scaled_add(step, &d);
                r.scaled_add(-step, &ad);
                let rr_next = r.dot(&r);
                d = &r + &(&d * (rr_next / rr));
                rr = rr_next;
            }
            if rr.sqrt() <= settings.tolerance * b_norm * 1e3 {
                Ok(x)
            } else {
                Err(Error::Numerical(format!(
                    "conjugate gradient did not converge in {} iterations",
                    settings.max_iterations
                )))
            }
        })
        .collect();
    let mut out = Array2::zeros(rhs.raw_dim());
    for (k, c) in cols.into_iter().enumerate() {
        out.column_mut(k).assign(&c?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cholesky_and_cg_agree() {
        let m = Array2::from_shape_fn((6, 6), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let g = m.t().dot(&m);
        let pen = Array1::from_elem(6, 0.5);
        let rhs = Array2::from_shape_fn((6, 2), |(i, k)| (i + k) as f64);
        let w = cholesky_solve(g.view(), &pen, rhs.view()).unwrap();
        let op = |v: &Array1<f64>| g.dot(v) + &(v * 0.5);
        let w_cg = conjugate_gradient(op, rhs.view(), CgSettings::default()).unwrap();
        for (a, b) in w.iter().zip(w_cg.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn singular_without_ridge_is_reported() {
        let g = Array2::from_shape_vec((2, 2), vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let rhs = Array2::ones((2, 1));
        let r = cholesky_solve(g.view(), &Array1::zeros(2), rhs.view());
        assert!(matches!(r, Err(Error::Singular { .. })));
        assert!(cholesky_solve(g.view(), &Array1::from_elem(2, 1.0), rhs.view()).is_ok());
    }
}
