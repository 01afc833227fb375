use nalgebra::DMatrix;

/// Nodes and weights for `∫ f(x) exp(-x²) dx ≈ Σ w_i f(x_i)` by the
/// Golub-Welsch eigenvalue method.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        jacobi[(i, i - 1)] = b;
        jacobi[(i - 1, i)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mu0 = std::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], mu0 * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Nodes and weights for expectations under N(0, 1): `E f(Z) ≈ Σ w_i f(z_i)`.
pub fn normal_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_hermite(n);
    let s = std::f64::consts::SQRT_2;
    let c = std::f64::consts::PI.sqrt();
    (x.iter().map(|v| v * s).collect(), w.iter().map(|v| v / c).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_moments_are_exact() {
        let (z, w) = normal_nodes(15);
        let m = |k: i32| z.iter().zip(&w).map(|(z, w)| w * z.powi(k)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-12);
        assert!(m(1).abs() < 1e-12);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-10);
        assert!((m(6) - 15.0).abs() < 1e-9);
    }

    #[test]
    fn three_point_rule() {
        let (x, w) = gauss_hermite(3);
        let r = (1.5f64).sqrt();
        assert!((x[0] + r).abs() < 1e-12 && x[1].abs() < 1e-12 && (x[2] - r).abs() < 1e-12);
        assert!((w[1] - 2.0 * std::f64::consts::PI.sqrt() / 3.0).abs() < 1e-12);
    }
}
