// SPDX-License-Identifier: MIT OR Apache-2.0

//! Closed-form ridge update of one weight matrix.
//!
//! Matrices follow the column convention: `W` maps a key column `k` to the
//! output column `W k`, keys and targets are stacked as columns.

use ndarray::{Array2, ArrayView2};

use crate::error::{LabError, Result};
use crate::linalg::{cholesky, cholesky_solve, frobenius, trace};

/// Relative pivot below which the Gram matrix counts as singular.
const PIVOT_RTOL: f64 = 1e-10;
/// Jitter scale relative to the mean diagonal entry.
const JITTER_SCALE: f64 = 1e-6;
/// Refinement passes after jittering and their relative stopping residual.
const REFINE_PASSES: usize = 50;
const REFINE_RTOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub delta: Array2<f64>,
    /// Ridge jitter added to the Gram diagonal; zero when none was needed.
    pub jitter: f64,
}

fn check_shapes(w: ArrayView2<f64>, k1: ArrayView2<f64>, m1: ArrayView2<f64>, k0: ArrayView2<f64>) -> Result<()> {
    let (d_out, d_in) = w.dim();
    let bad = k1.nrows() != d_in
        || m1.nrows() != d_out
        || k1.ncols() != m1.ncols()
        || (k0.ncols() > 0 && k0.nrows() != d_in);
    if bad {
        return Err(LabError::Shape(format!(
            "W {:?}, K1 {:?}, M1 {:?}, K0 {:?} do not conform",
            w.dim(),
            k1.dim(),
            m1.dim(),
            k0.dim()
        )));
    }
    Ok(())
}

/// Minimizes `‖(W+Δ)K1 − M1‖² + λ‖Δ K0‖²`:
/// `Δ = (M1 − W K1) K1ᵀ (K1 K1ᵀ + λ K0 K0ᵀ)⁻¹`.
pub fn solve_update(
    w: ArrayView2<f64>,
    k1: ArrayView2<f64>,
    m1: ArrayView2<f64>,
    k0: ArrayView2<f64>,
    lambda: f64,
) -> Result<Update> {
    let m0 = if k0.ncols() > 0 { w.dot(&k0) } else { Array2::zeros((w.nrows(), 0)) };
    solve_update_with_targets(w, k1, m1, k0, m0.view(), lambda)
}

/// Minimizes `‖(W+Δ)K1 − M1‖² + λ‖(W+Δ)K0 − M0‖²`, where `M0` holds pinned
/// retention targets. With `M0 = W K0` this is [`solve_update`].
pub fn solve_update_with_targets(
    w: ArrayView2<f64>,
    k1: ArrayView2<f64>,
    m1: ArrayView2<f64>,
    k0: ArrayView2<f64>,
    m0: ArrayView2<f64>,
    lambda: f64,
) -> Result<Update> {
    check_shapes(w, k1, m1, k0)?;
    if !(lambda >= 0.0) {
        return Err(LabError::InvalidConfig(format!(
            "lambda_reg must be non-negative, got {lambda}"
        )));
    }
    if m0.dim() != (w.nrows(), k0.ncols()) {
        return Err(LabError::Shape(format!(
            "M0 {:?} does not match W {:?} and K0 {:?}",
            m0.dim(),
            w.dim(),
            k0.dim()
        )));
    }
    let d_in = w.ncols();
    if k1.ncols() == 0 {
        return Ok(Update {
            delta: Array2::zeros(w.raw_dim()),
            jitter: 0.0,
        });
    }
    let r1 = &m1 - &w.dot(&k1);
    let mut gram = k1.dot(&k1.t());
    // right-hand side of G Δᵀ = K1 R1ᵀ + λ K0 R0ᵀ
    let mut rhs = k1.dot(&r1.t());
    if k0.ncols() > 0 && lambda > 0.0 {
        gram = gram + lambda * k0.dot(&k0.t());
        let r0 = &m0 - &w.dot(&k0);
        rhs = rhs + lambda * k0.dot(&r0.t());
    }
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(Update {
            delta: Array2::zeros(w.raw_dim()),
            jitter: 0.0,
        });
    }
    let scale = trace(gram.view()) / d_in as f64;
    let (factor, jitter) = match cholesky(gram.view(), PIVOT_RTOL * scale) {
        Ok(l) => (l, 0.0),
        Err(LabError::SingularGram { .. }) => {
            let jitter = JITTER_SCALE * scale;
            let mut g = gram.clone();
            g.diag_mut().mapv_inplace(|v| v + jitter);
            (cholesky(g.view(), PIVOT_RTOL * jitter)?, jitter)
        }
        Err(e) => return Err(e),
    };
    let mut delta_t = cholesky_solve(&factor, rhs.view());
    if jitter > 0.0 {
        // iterated ridge: each pass removes most of the jitter bias while
        // staying in the span of the keys
        let mut last = f64::INFINITY;
        for _ in 0..REFINE_PASSES {
            let residual = &rhs - &gram.dot(&delta_t);
            let size = frobenius(residual.view());
            if !(size < last) || size <= REFINE_RTOL * frobenius(rhs.view()) {
                break;
            }
            last = size;
            delta_t = delta_t + cholesky_solve(&factor, residual.view());
        }
    }
    Ok(Update {
        delta: delta_t.t().to_owned(),
        jitter,
    })
}

/// `‖(W+Δ)K1 − M1‖² + λ‖(W+Δ)K0 − M0‖²`.
pub fn objective(
    w: ArrayView2<f64>,
    delta: ArrayView2<f64>,
    k1: ArrayView2<f64>,
    m1: ArrayView2<f64>,
    k0: ArrayView2<f64>,
    m0: ArrayView2<f64>,
    lambda: f64,
) -> f64 {
    let wn = &w + &delta;
    let edit = frobenius((&wn.dot(&k1) - &m1).view()).powi(2);
    let keep = if k0.ncols() > 0 {
        frobenius((&wn.dot(&k0) - &m0).view()).powi(2)
    } else {
        0.0
    };
    edit + lambda * keep
}
