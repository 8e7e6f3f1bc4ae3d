//! Gauss–Hermite quadrature nodes and weights.
//!
//! Physicists' convention: `∫ f(x)·e^{−x²} dx ≈ Σ wᵢ·f(xᵢ)`. Nodes are the
//! roots of the n-th Hermite polynomial, found by Newton iteration on the
//! orthonormal recurrence with the classic asymptotic initial guesses; the
//! adaptive quadrature in the mixed model rescales these around each
//! cluster's posterior mode.

const MAX_NEWTON: usize = 64;
const EPS: f64 = 1e-14;
/// π^(−1/4), the normalization of the degree-0 orthonormal Hermite function.
const PIM4: f64 = 0.751_125_544_464_943;

/// Nodes (descending) and weights for n-point Gauss–Hermite quadrature.
///
/// Panics if `n == 0`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "quadrature order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        // Initial guesses (largest root first), refined by Newton.
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        if n % 2 == 1 && i == m - 1 {
            z = 0.0; // the middle root is exactly zero for odd n
        }
        let mut pp = 0.0;
        for _ in 0..MAX_NEWTON {
            // Evaluate the orthonormal Hermite functions up to degree n at z.
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= EPS * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    (nodes, weights)
}
