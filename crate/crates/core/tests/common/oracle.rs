// SPDX-License-Identifier: MIT OR Apache-2.0

//! Iterative reference solver for the regularized least-squares update.

use ndarray::{Array2, ArrayView2};

/// Largest eigenvalue of a symmetric positive semi-definite matrix.
fn top_eigenvalue(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut v = Array2::from_elem((n, 1), 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = a.dot(&v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w / norm;
    }
    lambda
}

/// Minimizes `‖(W+Δ)K1 − M1‖² + λ‖(W+Δ)K0 − M0‖²` by accelerated gradient
/// descent with step `1/L` and adaptive restart, starting from `Δ = 0`.
/// Stops after `iters` steps or once the gradient has vanished.
pub fn gd_update(
    w: ArrayView2<f64>,
    k1: ArrayView2<f64>,
    m1: ArrayView2<f64>,
    k0: ArrayView2<f64>,
    m0: ArrayView2<f64>,
    lambda: f64,
    iters: usize,
) -> Array2<f64> {
    // gradient 2 ((W+Δ) G − B) with G = K1K1ᵀ + λK0K0ᵀ, B = M1K1ᵀ + λM0K0ᵀ
    let gram = k1.dot(&k1.t()) + lambda * k0.dot(&k0.t());
    let b = m1.dot(&k1.t()) + lambda * m0.dot(&k0.t());
    let lip = 2.0 * top_eigenvalue(&gram);
    let grad = |d: &Array2<f64>| 2.0 * ((&w + d).dot(&gram) - &b);
    let norm = |a: &Array2<f64>| a.iter().map(|x| x * x).sum::<f64>().sqrt();
    // rounding floor of the gradient
    let floor = 1e-12 * (norm(&w.dot(&gram)) + norm(&b)).max(1e-300);
    let mut x = Array2::zeros(w.raw_dim());
    let mut y = x.clone();
    let mut t: f64 = 1.0;
    for _ in 0..iters {
        let gy = grad(&y);
        if norm(&gy) <= floor {
            return y;
        }
        let next = &y - &(&gy / lip);
        // restart the momentum when it points uphill
        if (&gy * &(&next - &x)).sum() > 0.0 {
            t = 1.0;
            y = next.clone();
            x = next;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + &((&next - &x) * ((t - 1.0) / t_next));
        x = next;
        t = t_next;
    }
    x
}
