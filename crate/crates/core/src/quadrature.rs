//! Gauss–Legendre rules on knot spans and rectangles.

use std::f64::consts::PI;

/// A Gauss–Legendre rule on the reference interval [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Builds the `order`-point rule by Newton iteration on the Legendre
    /// polynomial roots.
    ///
    /// # Panics
    /// Panics if `order == 0`.
    pub fn gauss_legendre(order: usize) -> Self {
        assert!(order >= 1, "a quadrature rule needs at least one point");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let half = n.div_ceil(2);
        for i in 0..half {
            // Tricomi initial guess for the i-th largest root.
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
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped affinely onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Gauss–Legendre approximation of the integral of `f` over one span `[a, b]`
/// with `q` points.
pub fn integrate_element<F: FnMut(f64) -> f64>(f: F, span: (f64, f64), q: usize) -> f64 {
    QuadratureRule::gauss_legendre(q).integrate(span.0, span.1, f)
}

/// Composite rule: `q` points on each of the given spans.
pub fn integrate_spans<F: FnMut(f64) -> f64>(mut f: F, spans: &[(f64, f64)], q: usize) -> f64 {
    let rule = QuadratureRule::gauss_legendre(q);
    spans
        .iter()
        .map(|&(a, b)| rule.integrate(a, b, &mut f))
        .sum()
}

/// Tensor-product rule with `q` points per direction on `span_s × span_v`.
pub fn integrate_rectangle<F: FnMut(f64, f64) -> f64>(
    mut f: F,
    span_s: (f64, f64),
    span_v: (f64, f64),
    q: usize,
) -> f64 {
    let rule = QuadratureRule::gauss_legendre(q);
    let mut total = 0.0;
    for (s, ws) in rule.mapped(span_s.0, span_s.1) {
        for (v, wv) in rule.mapped(span_v.0, span_v.1) {
            total += ws * wv * f(s, v);
        }
    }
    total
}
