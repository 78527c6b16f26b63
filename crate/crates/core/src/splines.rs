//! B-spline and NURBS bases, curves and the parametric-to-physical map.
//!
//! Evaluation works on the single active knot span: at most `p + 1`
//! functions are nonzero at any parameter value, and the Cox–de Boor
//! recursion is run only for those. Knot vectors that are not open are
//! handled by virtually padding both ends with copies of the boundary knots,
//! which leaves every original basis function unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A nondecreasing knot sequence together with the polynomial degree.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
    // knots with `degree` copies of each end knot prepended/appended
    padded: Vec<f64>,
}

/// The nonzero basis functions at one parameter value.
///
/// `values[r]` and `derivs[r]` belong to basis function `first + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBasis {
    pub first: usize,
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
}

impl LocalBasis {
    /// Scatter into dense vectors of length `n`.
    pub fn to_dense(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut v = vec![0.0; n];
        let mut d = vec![0.0; n];
        for (r, (&val, &der)) in self.values.iter().zip(&self.derivs).enumerate() {
            let i = self.first + r;
            if i < n {
                v[i] = val;
                d[i] = der;
            }
        }
        (v, d)
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.first..self.first + self.values.len()
    }
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        let p = degree;
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidKnots("knots must be finite".into()));
        }
        if knots.len() < 2 * p + 2 {
            return Err(Error::InvalidKnots(format!(
                "{} knots cannot carry a degree-{p} basis (need at least {})",
                knots.len(),
                2 * p + 2
            )));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("knots must be nondecreasing".into()));
        }
        let (first, last) = (knots[0], knots[knots.len() - 1]);
        if !(last > first) {
            return Err(Error::InvalidKnots(
                "knot vector spans an empty interval".into(),
            ));
        }
        let mut run = 1;
        for w in knots.windows(2) {
            if w[1] == w[0] {
                run += 1;
                if run > p + 1 {
                    return Err(Error::InvalidKnots(format!(
                        "knot {} repeated more than {} times",
                        w[0],
                        p + 1
                    )));
                }
            } else {
                run = 1;
            }
        }
        let mut padded = Vec::with_capacity(knots.len() + 2 * p);
        padded.extend(std::iter::repeat_n(first, p));
        padded.extend_from_slice(&knots);
        padded.extend(std::iter::repeat_n(last, p));
        Ok(Self {
            knots,
            degree,
            padded,
        })
    }

    /// Open knot vector on `[a, b]` with `n_elements` equal elements.
    pub fn open_uniform(degree: usize, a: f64, b: f64, n_elements: usize) -> Result<Self> {
        if n_elements == 0 || !(b > a) {
            return Err(Error::InvalidKnots(
                "need b > a and at least one element".into(),
            ));
        }
        let h = (b - a) / n_elements as f64;
        let mut knots = vec![a; degree + 1];
        knots.extend((1..n_elements).map(|i| a + h * i as f64));
        knots.extend(std::iter::repeat_n(b, degree + 1));
        Self::new(knots, degree)
    }

    /// Returns a copy in which the knot value `at` occurs exactly
    /// `multiplicity` times. `at` must already be a knot value or lie strictly
    /// inside the domain.
    pub fn with_multiplicity(&self, at: f64, multiplicity: usize) -> Result<Self> {
        let (lo, hi) = self.domain();
        if !(at > lo && at < hi) {
            return Err(Error::InvalidKnots(format!(
                "{at} is not an interior parameter"
            )));
        }
        if multiplicity == 0 || multiplicity > self.degree + 1 {
            return Err(Error::InvalidKnots(format!(
                "multiplicity {multiplicity} outside [1, {}]",
                self.degree + 1
            )));
        }
        let mut knots: Vec<f64> = self.knots.iter().copied().filter(|&k| k != at).collect();
        knots.extend(std::iter::repeat_n(at, multiplicity));
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Self::new(knots, self.degree)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions `n = m - p - 1`.
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    pub fn multiplicity(&self, value: f64) -> usize {
        self.knots.iter().filter(|&&k| k == value).count()
    }

    pub fn is_open(&self) -> bool {
        let (a, b) = self.domain();
        self.multiplicity(a) == self.degree + 1 && self.multiplicity(b) == self.degree + 1
    }

    /// Distinct knot values in increasing order.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &k in &self.knots {
            if out.last() != Some(&k) {
                out.push(k);
            }
        }
        out
    }

    /// Nonempty knot spans (elements).
    pub fn spans(&self) -> Vec<(f64, f64)> {
        self.breakpoints()
            .windows(2)
            .map(|w| (w[0], w[1]))
            .collect()
    }

    /// Greville abscissae: averages of `p` consecutive interior knots.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.num_basis())
            .map(|i| {
                if p == 0 {
                    0.5 * (self.knots[i] + self.knots[i + 1])
                } else {
                    self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64
                }
            })
            .collect()
    }

    /// Support `[c_i, c_{i+p+1}]` of basis function `i`.
    pub fn support(&self, i: usize) -> (f64, f64) {
        (self.knots[i], self.knots[i + self.degree + 1])
    }

    fn check_domain(&self, xi: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if xi >= lo && xi <= hi {
            Ok(())
        } else {
            Err(Error::Domain { value: xi, lo, hi })
        }
    }

    /// Index into the padded knot array of the span containing `xi`: the last
    /// nonempty span whose left knot is `<= xi`.
    fn padded_span(&self, xi: f64) -> usize {
        let t = &self.padded;
        let hi = self.domain().1;
        if xi >= hi {
            let mut k = t.len() - 1;
            while t[k - 1] == t[k] {
                k -= 1;
            }
            return k - 1;
        }
        t.partition_point(|&c| c <= xi) - 1
    }

    /// Values and first derivatives of the nonzero functions at `xi`.
    pub fn eval_local(&self, xi: f64) -> Result<LocalBasis> {
        self.check_domain(xi)?;
        Ok(self.eval_local_unchecked(xi))
    }

    pub(crate) fn eval_local_unchecked(&self, xi: f64) -> LocalBasis {
        let p = self.degree;
        let t = &self.padded;
        let k = self.padded_span(xi);
        let w = p + 1;
        // ndu[j * w + r]: upper triangle holds basis values, lower triangle knot differences
        let mut ndu = vec![0.0; w * w];
        let mut left = vec![0.0; w];
        let mut right = vec![0.0; w];
        ndu[0] = 1.0;
        for j in 1..=p {
            left[j] = xi - t[k + 1 - j];
            right[j] = t[k + j] - xi;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j * w + r] = right[r + 1] + left[j - r];
                let temp = ndu[r * w + j - 1] / ndu[j * w + r];
                ndu[r * w + j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j * w + j] = saved;
        }
        let mut values: Vec<f64> = (0..=p).map(|r| ndu[r * w + p]).collect();
        let mut derivs = vec![0.0; w];
        if p > 0 {
            let pf = p as f64;
            for r in 0..=p {
                let mut d = 0.0;
                if r >= 1 {
                    d += ndu[(r - 1) * w + p - 1] / ndu[p * w + r - 1];
                }
                if r < p {
                    d -= ndu[r * w + p - 1] / ndu[p * w + r];
                }
                derivs[r] = pf * d;
            }
        }
        // padded function index k - p + r corresponds to original index k - 2p + r
        let n = self.num_basis() as isize;
        let first = k as isize - 2 * p as isize;
        if first < 0 || first + p as isize >= n {
            let lo = (-first).max(0) as usize;
            let hi = ((n - first).min(w as isize)).max(lo as isize) as usize;
            values = values[lo..hi].to_vec();
            derivs = derivs[lo..hi].to_vec();
            return LocalBasis {
                first: (first + lo as isize) as usize,
                values,
                derivs,
            };
        }
        LocalBasis {
            first: first as usize,
            values,
            derivs,
        }
    }

    /// All `n` basis values `N_{i,p}(xi)`.
    pub fn eval_basis(&self, xi: f64) -> Result<Vec<f64>> {
        Ok(self.eval_local(xi)?.to_dense(self.num_basis()).0)
    }

    /// All `n` first derivatives `N'_{i,p}(xi)`.
    pub fn eval_derivs(&self, xi: f64) -> Result<Vec<f64>> {
        Ok(self.eval_local(xi)?.to_dense(self.num_basis()).1)
    }
}

/// Rational basis built from a knot vector and strictly positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NurbsBasis1D {
    knots: KnotVector,
    weights: Vec<f64>,
}

impl NurbsBasis1D {
    pub fn new(knots: KnotVector, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != knots.num_basis() {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {} basis functions",
                weights.len(),
                knots.num_basis()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidWeights(format!(
                "weight {w} is not strictly positive"
            )));
        }
        Ok(Self { knots, weights })
    }

    /// All weights equal to one; the rational basis is then the B-spline basis.
    pub fn bspline(knots: KnotVector) -> Self {
        let n = knots.num_basis();
        Self {
            knots,
            weights: vec![1.0; n],
        }
    }

    pub fn knot_vector(&self) -> &KnotVector {
        &self.knots
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn degree(&self) -> usize {
        self.knots.degree()
    }

    pub fn num_basis(&self) -> usize {
        self.knots.num_basis()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.knots.domain()
    }

    pub fn eval_local(&self, xi: f64) -> Result<LocalBasis> {
        self.knots.check_domain(xi)?;
        Ok(self.eval_local_unchecked(xi))
    }

    pub(crate) fn eval_local_unchecked(&self, xi: f64) -> LocalBasis {
        let mut b = self.knots.eval_local_unchecked(xi);
        let ws = &self.weights[b.first..b.first + b.values.len()];
        let mut wsum = 0.0;
        let mut dwsum = 0.0;
        for ((&w, &n), &d) in ws.iter().zip(&b.values).zip(&b.derivs) {
            wsum += w * n;
            dwsum += w * d;
        }
        for ((w, n), d) in ws.iter().zip(b.values.iter_mut()).zip(b.derivs.iter_mut()) {
            let r = w * *n / wsum;
            *d = w * *d / wsum - r * dwsum / wsum;
            *n = r;
        }
        b
    }

    /// Dense `(R_i(xi), R_i'(xi))` for all `n` functions.
    pub fn eval(&self, xi: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(self.eval_local(xi)?.to_dense(self.num_basis()))
    }
}

/// `C(xi) = sum_i R_i(xi) P_i` with control points in `d` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct NurbsCurve {
    basis: NurbsBasis1D,
    points: Vec<Vec<f64>>,
}

impl NurbsCurve {
    pub fn new(basis: NurbsBasis1D, points: Vec<Vec<f64>>) -> Result<Self> {
        if points.len() != basis.num_basis() {
            return Err(Error::InvalidGeometry(format!(
                "{} control points for {} basis functions",
                points.len(),
                basis.num_basis()
            )));
        }
        let dim = points.first().map_or(0, Vec::len);
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidGeometry(
                "control points must share a nonzero dimension".into(),
            ));
        }
        Ok(Self { basis, points })
    }

    pub fn basis(&self) -> &NurbsBasis1D {
        &self.basis
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn eval(&self, xi: f64) -> Result<Vec<f64>> {
        Ok(self.eval_with_derivative(xi)?.0)
    }

    /// Point and parametric tangent at `xi`.
    pub fn eval_with_derivative(&self, xi: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let b = self.basis.eval_local(xi)?;
        let mut x = vec![0.0; self.dim()];
        let mut dx = vec![0.0; self.dim()];
        for (r, i) in b.indices().enumerate() {
            for (c, &pc) in self.points[i].iter().enumerate() {
                x[c] += b.values[r] * pc;
                dx[c] += b.derivs[r] * pc;
            }
        }
        Ok((x, dx))
    }

    pub fn to_document(&self) -> SplineDocument {
        let kv = self.basis.knot_vector();
        SplineDocument {
            degree: kv.degree(),
            knots: kv.knots().to_vec(),
            weights: self.basis.weights().to_vec(),
            points: self.points.clone(),
        }
    }

    pub fn from_document(doc: &SplineDocument) -> Result<Self> {
        let kv = KnotVector::new(doc.knots.clone(), doc.degree)?;
        let weights = if doc.weights.is_empty() {
            vec![1.0; kv.num_basis()]
        } else {
            doc.weights.clone()
        };
        Self::new(NurbsBasis1D::new(kv, weights)?, doc.points.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("spline document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: SplineDocument =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("spline JSON: {e}")))?;
        Self::from_document(&doc)
    }
}

/// Serialized form `{degree, knots[], weights[], points[][]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineDocument {
    pub degree: usize,
    pub knots: Vec<f64>,
    #[serde(default)]
    pub weights: Vec<f64>,
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
}

/// One-dimensional geometry map `xi -> x(xi)` given by a NURBS curve with
/// strictly increasing scalar control points.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry1D {
    curve: NurbsCurve,
    // (a, b) with x = a + b xi when the map is affine
    affine: Option<(f64, f64)>,
}

impl Geometry1D {
    pub fn new(basis: NurbsBasis1D, x_points: Vec<f64>) -> Result<Self> {
        if x_points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGeometry(
                "control point abscissae must be strictly increasing".into(),
            ));
        }
        let affine = affine_fit(&basis, &x_points);
        let curve = NurbsCurve::new(basis, x_points.into_iter().map(|x| vec![x]).collect())?;
        Ok(Self { curve, affine })
    }

    /// `x(xi) = xi`: B-spline basis on the same knots with control points at
    /// the Greville abscissae.
    pub fn identity(knots: &KnotVector) -> Result<Self> {
        Self::new(NurbsBasis1D::bspline(knots.clone()), knots.greville())
    }

    /// Affine map of the parameter domain onto `[a, b]`.
    pub fn affine(knots: &KnotVector, a: f64, b: f64) -> Result<Self> {
        let (lo, hi) = knots.domain();
        let scale = (b - a) / (hi - lo);
        let x = knots
            .greville()
            .into_iter()
            .map(|g| a + scale * (g - lo))
            .collect();
        Self::new(NurbsBasis1D::bspline(knots.clone()), x)
    }

    pub fn curve(&self) -> &NurbsCurve {
        &self.curve
    }

    pub fn param_domain(&self) -> (f64, f64) {
        self.curve.basis().domain()
    }

    pub fn physical_domain(&self) -> (f64, f64) {
        let pts = self.curve.points();
        (pts[0][0], pts[pts.len() - 1][0])
    }

    pub fn is_affine(&self) -> bool {
        self.affine.is_some()
    }

    /// Physical coordinate and Jacobian `dx/dxi`.
    pub fn param_to_physical(&self, xi: f64) -> Result<(f64, f64)> {
        if let Some((a, b)) = self.affine {
            let (lo, hi) = self.param_domain();
            if xi < lo || xi > hi {
                return Err(Error::Domain { value: xi, lo, hi });
            }
            return Ok((a + b * xi, b));
        }
        let (x, dx) = self.curve.eval_with_derivative(xi)?;
        Ok((x[0], dx[0]))
    }

    /// Inverse map by safeguarded Newton iteration.
    pub fn physical_to_param(&self, x: f64) -> Result<f64> {
        let (xa, xb) = self.physical_domain();
        let (mut lo, mut hi) = self.param_domain();
        if x < xa || x > xb {
            return Err(Error::Domain {
                value: x,
                lo: xa,
                hi: xb,
            });
        }
        if x == xa {
            return Ok(lo);
        }
        if x == xb {
            return Ok(hi);
        }
        if let Some((a, b)) = self.affine {
            return Ok(((x - a) / b).clamp(lo, hi));
        }
        let mut xi = lo + (hi - lo) * (x - xa) / (xb - xa);
        for _ in 0..200 {
            let (fx, jac) = self.param_to_physical(xi)?;
            let r = fx - x;
            if r.abs() <= 1e-14 * (xb - xa).abs().max(1.0) {
                return Ok(xi);
            }
            if r > 0.0 {
                hi = xi;
            } else {
                lo = xi;
            }
            let step = xi - r / jac;
            xi = if jac > 0.0 && step > lo && step < hi {
                step
            } else {
                0.5 * (lo + hi)
            };
        }
        Ok(xi)
    }
}

/// Equal weights and control points affine in the Greville abscissae give an
/// affine map, since B-splines reproduce linear functions.
fn affine_fit(basis: &NurbsBasis1D, x: &[f64]) -> Option<(f64, f64)> {
    let w = basis.weights();
    if w.iter().any(|&wi| wi != w[0]) {
        return None;
    }
    let g = basis.knot_vector().greville();
    let n = g.len();
    if n < 2 || g[n - 1] == g[0] {
        return None;
    }
    let b = (x[n - 1] - x[0]) / (g[n - 1] - g[0]);
    let a = x[0] - b * g[0];
    let scale = x[n - 1].abs().max(x[0].abs()).max(1.0);
    g.iter()
        .zip(x)
        .all(|(gi, xi)| (a + b * gi - xi).abs() <= 1e-13 * scale)
        .then_some((a, b))
}
