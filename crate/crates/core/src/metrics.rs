//! The mean L² error `(1/(b - a)) ∫_a^b (f - g)^2 dx` used throughout.

use crate::quadrature::QuadratureRule;

/// Composite Gauss–Legendre estimate of the mean squared deviation on
/// `[a, b]`. Subintervals are aligned with `breaks` (where `f` may have
/// reduced smoothness) and refined so at least 200 nodes are used.
pub fn mean_l2_error(
    f: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
) -> f64 {
    const POINTS: usize = 5;
    const MIN_NODES: usize = 200;
    let mut edges: Vec<f64> = std::iter::once(a)
        .chain(breaks.iter().copied().filter(|&x| x > a && x < b))
        .chain(std::iter::once(b))
        .collect();
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
    edges.dedup();
    let segments = edges.len() - 1;
    let pieces = (MIN_NODES / POINTS).div_ceil(segments).max(1);
    let rule = QuadratureRule::gauss_legendre(POINTS);
    let mut total = 0.0;
    for w in edges.windows(2) {
        let h = (w[1] - w[0]) / pieces as f64;
        for k in 0..pieces {
            let lo = w[0] + h * k as f64;
            total += rule.integrate(lo, lo + h, |x| (f(x) - g(x)).powi(2));
        }
    }
    total / (b - a)
}
