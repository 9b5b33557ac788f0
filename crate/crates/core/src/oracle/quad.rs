//! Quadrature rules for exact low-dimensional expectations.

use nalgebra::{DMatrix, SymmetricEigen};

/// Gauss-Hermite nodes and weights for expectations under the standard
/// normal: E[f(Z)] ~ sum_i w_i f(x_i), exact for polynomials of degree
/// < 2n. Computed by Golub-Welsch on the probabilists' Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut jacobi = DMatrix::zeros(n, n);
    for i in 1..n {
        let off = (i as f64).sqrt();
        jacobi[(i, i - 1)] = off;
        jacobi[(i - 1, i)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let w = eig.eigenvectors[(0, i)].powi(2);
            (node, w)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// Midpoint-rule nodes on [lo, hi]; weights are uniform 1/n.
pub fn midpoint(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let dt = (hi - lo) / n as f64;
    (0..n).map(|j| lo + (j as f64 + 0.5) * dt).collect()
}
