// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense symmetric positive-definite solves.

use ndarray::{Array2, ArrayView2};

use crate::error::{LabError, Result};

/// Lower-triangular Cholesky factor of a symmetric matrix.
///
/// Fails when a pivot drops to `min_pivot` or below.
pub fn cholesky(a: ArrayView2<f64>, min_pivot: f64) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LabError::Shape(format!(
            "cholesky of non-square {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > min_pivot) {
            return Err(LabError::SingularGram { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ X = B` given the Cholesky factor `L`.
pub fn cholesky_solve(l: &Array2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for c in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[[i, c]];
            for k in 0..i {
                s -= l[[i, k]] * x[[k, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = x[[i, c]];
            for k in i + 1..n {
                s -= l[[k, i]] * x[[k, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
    }
    x
}

pub fn trace(a: ArrayView2<f64>) -> f64 {
    a.diag().sum()
}

pub fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_spd_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let b = array![[1.0, 0.0], [2.0, 1.0], [3.0, -1.0]];
        let l = cholesky(a.view(), 0.0).unwrap();
        let x = cholesky_solve(&l, b.view());
        let back = a.dot(&x);
        for (p, q) in back.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_is_reported() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let err = cholesky(a.view(), 1e-12).unwrap_err();
        assert!(matches!(err, LabError::SingularGram { index: 1, .. }));
    }
}
