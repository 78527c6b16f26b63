//! L² fitting of B-spline and NURBS functions in parameter space.
//!
//! For fixed weights the best coefficients solve the Gram system
//! `G a = b`, `G_ij = ∫ R_i R_j`, `b_i = ∫ R_i f`. NURBS weights are then
//! optimized by backtracking gradient descent on log-weights, which keeps
//! them positive.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;
use crate::splines::{KnotVector, NurbsBasis1D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub weights: Vec<f64>,
    pub mean_l2_error: f64,
    pub iterations: usize,
}

impl FitResult {
    /// Evaluate the fitted function at `xi`.
    pub fn eval(&self, kv: &KnotVector, xi: f64) -> Result<f64> {
        let basis = NurbsBasis1D::new(kv.clone(), self.weights.clone())?;
        let b = basis.eval_local(xi)?;
        Ok(b.indices()
            .zip(&b.values)
            .map(|(i, v)| self.coefficients[i] * v)
            .sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NurbsFitOptions {
    /// Stop when the relative error improvement of an iteration falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Smallest admissible weight relative to the largest one.
    pub min_weight: f64,
    /// Step for the central-difference gradient in log-weight space.
    pub fd_step: f64,
}

impl Default for NurbsFitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 500,
            min_weight: 1e-5,
            fd_step: 1e-6,
        }
    }
}

/// Quadrature order used for Gram assembly and the error integral.
pub fn fit_quadrature_order(degree: usize) -> usize {
    degree + 3
}

/// Sub-panels per knot span. Rational functions with strongly varying
/// weights develop internal layers a single Gauss rule per span cannot see.
pub const FIT_SUBPANELS: usize = 16;

fn sub_panels(a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let h = (b - a) / FIT_SUBPANELS as f64;
    (0..FIT_SUBPANELS).map(move |k| (a + k as f64 * h, a + (k + 1) as f64 * h))
}

/// Samples `(xi, R_i(xi), weight)` reused across fits on one knot vector.
struct Sampler {
    points: Vec<f64>,
    qweights: Vec<f64>,
    targets: Vec<f64>,
    length: f64,
}

impl Sampler {
    fn new(kv: &KnotVector, f: &dyn Fn(f64) -> f64) -> Self {
        let rule = QuadratureRule::gauss_legendre(fit_quadrature_order(kv.degree()));
        let mut points = Vec::new();
        let mut qweights = Vec::new();
        for (a, b) in kv.spans().into_iter().flat_map(|(a, b)| sub_panels(a, b)) {
            for (x, w) in rule.mapped(a, b) {
                points.push(x);
                qweights.push(w);
            }
        }
        let targets = points.iter().map(|&x| f(x)).collect();
        let (lo, hi) = kv.domain();
        Self {
            points,
            qweights,
            targets,
            length: hi - lo,
        }
    }

    fn fit(&self, basis: &NurbsBasis1D) -> Result<(Vec<f64>, f64)> {
        let n = basis.num_basis();
        let mut g = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        let locals: Vec<_> = self
            .points
            .iter()
            .map(|&x| basis.eval_local_unchecked(x))
            .collect();
        for ((b, &w), &t) in locals.iter().zip(&self.qweights).zip(&self.targets) {
            for (r, i) in b.indices().enumerate() {
                rhs[i] += w * b.values[r] * t;
                for (c, j) in b.indices().enumerate() {
                    g[(i, j)] += w * b.values[r] * b.values[c];
                }
            }
        }
        let coef = match g.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => g.lu().solve(&rhs).ok_or_else(|| Error::Singular {
                context: "Gram matrix".into(),
                condition: f64::INFINITY,
            })?,
        };
        if coef.iter().any(|c| !c.is_finite()) {
            return Err(Error::Singular {
                context: "Gram matrix".into(),
                condition: f64::INFINITY,
            });
        }
        let mut err = 0.0;
        for ((b, &w), &t) in locals.iter().zip(&self.qweights).zip(&self.targets) {
            let fhat: f64 = b.indices().zip(&b.values).map(|(i, v)| coef[i] * v).sum();
            err += w * (t - fhat) * (t - fhat);
        }
        Ok((coef.iter().copied().collect(), err / self.length))
    }
}

/// Best L² approximation with all weights equal to one.
pub fn fit_bspline(kv: &KnotVector, f: impl Fn(f64) -> f64) -> Result<FitResult> {
    fit_weighted(&NurbsBasis1D::bspline(kv.clone()), f)
}

/// Best L² approximation in the span of a fixed rational basis.
pub fn fit_weighted(basis: &NurbsBasis1D, f: impl Fn(f64) -> f64) -> Result<FitResult> {
    let sampler = Sampler::new(basis.knot_vector(), &f);
    let (coefficients, mean_l2_error) = sampler.fit(basis)?;
    Ok(FitResult {
        coefficients,
        weights: basis.weights().to_vec(),
        mean_l2_error,
        iterations: 0,
    })
}

/// Mean L² error `(1/|domain|) ∫ (f - fhat)^2` of given coefficients.
pub fn mean_l2_error(basis: &NurbsBasis1D, coefficients: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let rule = QuadratureRule::gauss_legendre(fit_quadrature_order(basis.degree()));
    let (lo, hi) = basis.domain();
    let mut err = 0.0;
    let panels = basis
        .knot_vector()
        .spans()
        .into_iter()
        .flat_map(|(a, b)| sub_panels(a, b));
    for (a, b) in panels {
        err += rule.integrate(a, b, |x| {
            let loc = basis.eval_local_unchecked(x);
            let fhat: f64 = loc
                .indices()
                .zip(&loc.values)
                .map(|(i, v)| coefficients[i] * v)
                .sum();
            (f(x) - fhat).powi(2)
        });
    }
    err / (hi - lo)
}

/// Fits coefficients and weights jointly. Starts at `w0` (all ones if
/// `None`); the returned weights are scaled so that the largest is 1.
pub fn fit_nurbs(
    kv: &KnotVector,
    f: impl Fn(f64) -> f64,
    w0: Option<&[f64]>,
    opts: NurbsFitOptions,
) -> Result<FitResult> {
    let n = kv.num_basis();
    let mut u: Vec<f64> = match w0 {
        Some(w) => {
            if w.len() != n {
                return Err(Error::InvalidWeights(format!(
                    "{} initial weights for {n} functions",
                    w.len()
                )));
            }
            if let Some(x) = w.iter().find(|x| !(**x > 0.0)) {
                return Err(Error::InvalidWeights(format!(
                    "initial weight {x} is not positive"
                )));
            }
            w.iter().map(|x| x.ln()).collect()
        }
        None => vec![0.0; n],
    };
    let sampler = Sampler::new(kv, &f);
    let u_min = opts.min_weight.ln();
    let normalize = |u: &mut Vec<f64>| {
        let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for x in u.iter_mut() {
            *x = (*x - m).max(u_min);
        }
    };
    let objective = |u: &[f64]| -> f64 {
        let basis = NurbsBasis1D::new(kv.clone(), u.iter().map(|x| x.exp()).collect());
        match basis.and_then(|b| sampler.fit(&b)) {
            Ok((_, e)) if e.is_finite() => e,
            _ => f64::INFINITY,
        }
    };
    normalize(&mut u);
    let mut err = objective(&u);
    if !err.is_finite() {
        return Err(Error::Numerical(
            "initial weights give a singular fit".into(),
        ));
    }
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < opts.max_iters && err > 0.0 {
        iterations += 1;
        let h = opts.fd_step;
        let grad: Vec<f64> = (0..n)
            .map(|i| {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[i] += h;
                dn[i] -= h;
                (objective(&up) - objective(&dn)) / (2.0 * h)
            })
            .collect();
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if !(gnorm2 > 0.0) || !gnorm2.is_finite() {
            break;
        }
        // backtracking with Armijo condition; the step grows after each success
        let mut accepted = None;
        let mut alpha = step * 2.0;
        for _ in 0..60 {
            let mut trial: Vec<f64> = u.iter().zip(&grad).map(|(x, g)| x - alpha * g).collect();
            normalize(&mut trial);
            let e = objective(&trial);
            if e <= err - 1e-4 * alpha * gnorm2 {
                accepted = Some((trial, e));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, e)) = accepted else { break };
        step = alpha;
        let improvement = (err - e) / err;
        u = trial;
        err = e;
        if improvement < opts.tol {
            break;
        }
    }
    let weights: Vec<f64> = u.iter().map(|x| x.exp()).collect();
    let basis = NurbsBasis1D::new(kv.clone(), weights.clone())?;
    let (coefficients, mean_l2_error) = sampler.fit(&basis)?;
    Ok(FitResult {
        coefficients,
        weights,
        mean_l2_error,
        iterations,
    })
}

/// B-spline fit of a target whose only derivative defects sit at `kinks`.
/// Each kink must be a knot of multiplicity at least `p`; jumps in the value
/// additionally need multiplicity `p + 1`, which the caller supplies.
pub fn fit_exact_nonsmooth(
    kv: &KnotVector,
    f: impl Fn(f64) -> f64,
    kinks: &[f64],
) -> Result<FitResult> {
    for &k in kinks {
        let m = kv.multiplicity(k);
        if m < kv.degree().max(1) {
            return Err(Error::Precondition(format!(
                "kink at {k} has knot multiplicity {m}, need at least {}",
                kv.degree().max(1)
            )));
        }
    }
    fit_bspline(kv, f)
}
