//! Gauss–Legendre rules.

use std::f64::consts::PI;

/// Nodes and weights of the `order`-point Gauss–Legendre rule on `[-1, 1]`.
///
/// Nodes are returned in ascending order. The rule integrates polynomials of
/// degree `2 * order - 1` exactly.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be positive");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped to `[lo, hi]`.
pub fn gauss_legendre_on(order: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(order);
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|wi| half * wi).collect(),
    )
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_monomials_exactly() {
        for order in 1..=12 {
            let (x, w) = gauss_legendre(order);
            for deg in 0..(2 * order) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "order {order} deg {deg}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn nodes_are_ascending_and_interior() {
        let (x, _) = gauss_legendre_on(7, 0.2, 0.9);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
        assert!(x[0] > 0.2 && x[6] < 0.9);
    }
}
