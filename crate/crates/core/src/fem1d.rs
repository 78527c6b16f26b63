//! Galerkin solver for the localized one-dimensional jump-diffusion PIDE in
//! the time to maturity `tau`:
//!
//! ```text
//! f_tau = ½σ²s² f_ss + (r - λβ) s f_s - r f + λ ∫ (f(sy) - f(s)) φ(y) dy
//! ```
//!
//! on `(0, s̄)` with the put data `f(0, s) = (K - s)+`, `f(tau, 0) = K e^{-r tau}`
//! and a homogeneous Neumann condition at `s̄`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{JumpSpec, ModelSpec};
use crate::quadrature::QuadratureRule;
use crate::splines::{Geometry1D, KnotVector, NurbsBasis1D};

/// Width of the log-jump window, in standard deviations, integrated by the
/// jump kernel; the normal mass outside is below 1e-18.
pub const JUMP_WINDOW_SIGMAS: f64 = 9.0;
/// Gauss points per log-space subinterval of the jump kernel.
pub const JUMP_INNER_ORDER: usize = 16;
/// Minimum Gauss order per element for the outer `s`-integral of `J'`; the
/// smoothed row `g_j(s)` is not polynomial.
pub const JUMP_OUTER_ORDER: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discretization1D {
    pub s_max: f64,
    pub n_s: usize,
    pub degree: usize,
    pub strike_knot_multiplicity: usize,
    pub n_tau: usize,
    pub omega: f64,
}

impl Discretization1D {
    /// Strike multiplicity `p`, fully implicit stepping.
    pub fn new(degree: usize, n_s: usize, n_tau: usize, s_max: f64) -> Self {
        Self {
            s_max,
            n_s,
            degree,
            strike_knot_multiplicity: degree.max(1),
            n_tau,
            omega: 1.0,
        }
    }

    pub fn validate(&self, strike: f64) -> Result<()> {
        if self.degree == 0 {
            return Err(Error::Config("degree must be at least 1".into()));
        }
        if self.n_s == 0 || self.n_tau == 0 {
            return Err(Error::Config("n_s and n_tau must be positive".into()));
        }
        if !(self.s_max > strike) {
            return Err(Error::Config(format!(
                "s_max = {} must exceed the strike {strike}",
                self.s_max
            )));
        }
        if self.strike_knot_multiplicity == 0 || self.strike_knot_multiplicity > self.degree + 1 {
            return Err(Error::Config(format!(
                "strike knot multiplicity {} outside [1, {}]",
                self.strike_knot_multiplicity,
                self.degree + 1
            )));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::Config(format!(
                "omega = {} outside [0, 1]",
                self.omega
            )));
        }
        Ok(())
    }

    /// Open uniform knots on `[0, s̄]` with the strike knot repeated.
    pub fn knot_vector(&self, strike: f64) -> Result<KnotVector> {
        self.validate(strike)?;
        KnotVector::open_uniform(self.degree, 0.0, self.s_max, self.n_s)?
            .with_multiplicity(strike, self.strike_knot_multiplicity)
    }
}

/// Default points per element for polynomial integrands of degree `~2p`.
pub fn default_quadrature_order(degree: usize) -> usize {
    (degree + 1).max(3)
}

/// Quadrature nodes in physical space: `(x, weight * jacobian, local basis
/// with physical derivatives)`.
pub(crate) struct PhysicalSample {
    pub x: f64,
    pub w: f64,
    pub first: usize,
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
}

pub(crate) fn physical_samples(
    basis: &NurbsBasis1D,
    geom: &Geometry1D,
    q: usize,
) -> Result<Vec<PhysicalSample>> {
    let rule = QuadratureRule::gauss_legendre(q);
    let mut out = Vec::new();
    for (a, b) in basis.knot_vector().spans() {
        for (xi, w) in rule.mapped(a, b) {
            let (x, jac) = geom.param_to_physical(xi)?;
            if !(jac > 0.0) {
                return Err(Error::InvalidGeometry(format!(
                    "nonpositive Jacobian {jac} at xi = {xi}"
                )));
            }
            let loc = basis.eval_local(xi)?;
            out.push(PhysicalSample {
                x,
                w: w * jac,
                first: loc.first,
                derivs: loc.derivs.iter().map(|d| d / jac).collect(),
                values: loc.values,
            });
        }
    }
    Ok(out)
}

/// `G_ij = ∫ w(x) D^{di} ψ_i D^{dj} ψ_j dx` with `di, dj ∈ {0, 1}`; the row
/// index is the test function.
pub fn assemble_weighted(
    basis: &NurbsBasis1D,
    geom: &Geometry1D,
    q: usize,
    weight: impl Fn(f64) -> f64,
    di: usize,
    dj: usize,
) -> Result<DMatrix<f64>> {
    let n = basis.num_basis();
    let mut g = DMatrix::zeros(n, n);
    for smp in physical_samples(basis, geom, q)? {
        let c = smp.w * weight(smp.x);
        let left = if di == 0 { &smp.values } else { &smp.derivs };
        let right = if dj == 0 { &smp.values } else { &smp.derivs };
        for (r, &li) in left.iter().enumerate() {
            for (k, &rj) in right.iter().enumerate() {
                g[(smp.first + r, smp.first + k)] += c * li * rj;
            }
        }
    }
    Ok(g)
}

/// `M_ij = ∫ ψ_j ψ_i ds`.
pub fn assemble_mass(basis: &NurbsBasis1D, geom: &Geometry1D) -> Result<DMatrix<f64>> {
    assemble_weighted(
        basis,
        geom,
        default_quadrature_order(basis.degree()),
        |_| 1.0,
        0,
        0,
    )
}

/// `A_ij = ∫ ½σ²s² ψ_j' ψ_i' + (λβ - r + σ²) s ψ_i ψ_j' + r ψ_j ψ_i ds`.
pub fn assemble_stiffness(
    basis: &NurbsBasis1D,
    geom: &Geometry1D,
    model: &ModelSpec,
) -> Result<DMatrix<f64>> {
    let sigma = model.constant_sigma().ok_or_else(|| Error::WrongSolver {
        solver: "fem1d",
        reason: "stochastic volatility needs the two-dimensional solver".into(),
    })?;
    let q = default_quadrature_order(basis.degree());
    let n = basis.num_basis();
    let convection = model.jumps.lambda * model.jumps.beta() - model.r + sigma * sigma;
    let mut a = DMatrix::zeros(n, n);
    for smp in physical_samples(basis, geom, q)? {
        let s = smp.x;
        let diff = 0.5 * sigma * sigma * s * s * smp.w;
        let conv = convection * s * smp.w;
        let react = model.r * smp.w;
        for r in 0..smp.values.len() {
            for k in 0..smp.values.len() {
                a[(smp.first + r, smp.first + k)] += diff * smp.derivs[r] * smp.derivs[k]
                    + conv * smp.values[r] * smp.derivs[k]
                    + react * smp.values[r] * smp.values[k];
            }
        }
    }
    Ok(a)
}

/// `g_j(s) = ∫_0^s̄ ψ_j(x) φ(x/s) / s dx`, computed in `z = ln(x/s)` where the
/// kernel becomes the normal density of the log-jump. Each element image is
/// split into subintervals no wider than `σ_J`.
pub fn jump_kernel_row(
    basis: &NurbsBasis1D,
    geom: &Geometry1D,
    jumps: &JumpSpec,
    s: f64,
) -> Result<Vec<f64>> {
    let n = basis.num_basis();
    let mut g = vec![0.0; n];
    if !(s > 0.0) {
        return Ok(g);
    }
    let rule = QuadratureRule::gauss_legendre(JUMP_INNER_ORDER);
    let (mu, sd) = (jumps.mu_j, jumps.sigma_j);
    let zlo = mu - JUMP_WINDOW_SIGMAS * sd;
    let zhi = mu + JUMP_WINDOW_SIGMAS * sd;
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    for (pa, pb) in basis.knot_vector().spans() {
        let (xa, _) = geom.param_to_physical(pa)?;
        let (xb, _) = geom.param_to_physical(pb)?;
        let za = if xa > 0.0 {
            (xa / s).ln().max(zlo)
        } else {
            zlo
        };
        let zb = (xb / s).ln().min(zhi);
        if !(zb > za) {
            continue;
        }
        let pieces = ((zb - za) / sd).ceil().max(1.0) as usize;
        let h = (zb - za) / pieces as f64;
        for k in 0..pieces {
            let lo = za + h * k as f64;
            for (z, w) in rule.mapped(lo, lo + h) {
                let x = (s * z.exp()).clamp(xa, xb);
                let xi = geom.physical_to_param(x)?.clamp(pa, pb);
                let dens = w * norm * (-0.5 * ((z - mu) / sd).powi(2)).exp();
                let loc = basis.eval_local(xi)?;
                for (i, v) in loc.indices().zip(&loc.values) {
                    g[i] += dens * v;
                }
            }
        }
    }
    Ok(g)
}

/// `J'_ij = ∫∫ ψ_j(x) ψ_i(s) φ(x/s) / s dx ds` (dense).
pub fn assemble_jump_prime(
    basis: &NurbsBasis1D,
    geom: &Geometry1D,
    jumps: &JumpSpec,
) -> Result<DMatrix<f64>> {
    let n = basis.num_basis();
    let mut jp = DMatrix::zeros(n, n);
    if !(jumps.sigma_j > 0.0) {
        return Err(Error::InvalidModel("jump kernel needs sigma_J > 0".into()));
    }
    let q = default_quadrature_order(basis.degree()).max(JUMP_OUTER_ORDER);
    for smp in physical_samples(basis, geom, q)? {
        let row = jump_kernel_row(basis, geom, jumps, smp.x)?;
        for (r, &vi) in smp.values.iter().enumerate() {
            let i = smp.first + r;
            for (j, &gj) in row.iter().enumerate() {
                jp[(i, j)] += smp.w * vi * gj;
            }
        }
    }
    Ok(jp)
}

/// `J = λ (M - J')`; the zero matrix when `λ = 0`.
pub fn assemble_jump(
    basis: &NurbsBasis1D,
    geom: &Geometry1D,
    jumps: &JumpSpec,
    mass: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if !jumps.is_active() {
        return Ok(DMatrix::zeros(mass.nrows(), mass.ncols()));
    }
    Ok((mass - assemble_jump_prime(basis, geom, jumps)?) * jumps.lambda)
}

/// Load vector `Φ_i = ∫ ψ_i payoff ds`.
pub fn load_vector(
    basis: &NurbsBasis1D,
    geom: &Geometry1D,
    payoff: impl Fn(f64) -> f64,
) -> Result<DVector<f64>> {
    let mut phi = DVector::zeros(basis.num_basis());
    for smp in physical_samples(basis, geom, basis.degree() + 3)? {
        let c = smp.w * payoff(smp.x);
        for (r, v) in smp.values.iter().enumerate() {
            phi[smp.first + r] += c * v;
        }
    }
    Ok(phi)
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.solve(rhs))
        .ok_or_else(|| Error::Singular {
            context: context.into(),
            condition: f64::INFINITY,
        })
}

/// L² projection `M f = Φ` of the payoff.
pub fn project_initial(
    basis: &NurbsBasis1D,
    geom: &Geometry1D,
    payoff: impl Fn(f64) -> f64,
) -> Result<DVector<f64>> {
    let m = assemble_mass(basis, geom)?;
    solve_spd(&m, &load_vector(basis, geom, payoff)?, "mass matrix")
}

#[derive(Debug, Clone)]
pub struct FemSystem1D {
    pub m: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub dirichlet_index: usize,
}

impl FemSystem1D {
    pub fn assemble(basis: &NurbsBasis1D, geom: &Geometry1D, model: &ModelSpec) -> Result<Self> {
        if !basis.knot_vector().is_open() {
            return Err(Error::Config("the solver needs an open knot vector".into()));
        }
        let m = assemble_mass(basis, geom)?;
        let a = assemble_stiffness(basis, geom, model)?;
        let j = assemble_jump(basis, geom, &model.jumps, &m)?;
        Ok(Self {
            m,
            a,
            j,
            dirichlet_index: 0,
        })
    }

    /// `A + J`.
    pub fn operator(&self) -> DMatrix<f64> {
        &self.a + &self.j
    }
}

/// Rough 2-norm condition estimate from the diagonal of the LU factor.
pub(crate) fn lu_condition(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let u = lu.u();
    let d: Vec<f64> = u.diagonal().iter().map(|x| x.abs()).collect();
    let max = d.iter().copied().fold(0.0, f64::max);
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Factorized θ-scheme with the Dirichlet unknowns eliminated:
/// `(M + dτ ω L) f_i = (M - (1 - ω) dτ L) f_{i-1}` on the free rows.
pub struct ThetaStepper {
    free: Vec<usize>,
    fixed: Vec<usize>,
    rhs_matrix: DMatrix<f64>,
    // columns of the implicit matrix belonging to fixed unknowns, free rows only
    coupling: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl ThetaStepper {
    pub fn new(
        m: &DMatrix<f64>,
        l: &DMatrix<f64>,
        fixed: &[usize],
        d_tau: f64,
        omega: f64,
    ) -> Result<Self> {
        let n = m.nrows();
        let lhs = m + l * (d_tau * omega);
        let rhs_matrix = m - l * ((1.0 - omega) * d_tau);
        let free: Vec<usize> = (0..n).filter(|i| !fixed.contains(i)).collect();
        let sub = lhs.select_rows(&free).select_columns(&free);
        let coupling = lhs.select_rows(&free).select_columns(fixed);
        let lu = sub.lu();
        let cond = lu_condition(&lu);
        if !cond.is_finite() || cond > 1e15 {
            return Err(Error::Singular {
                context: "theta-scheme system".into(),
                condition: cond,
            });
        }
        Ok(Self {
            free,
            fixed: fixed.to_vec(),
            rhs_matrix,
            coupling,
            lu,
        })
    }

    /// Advances one step; `fixed_values` are the Dirichlet coefficients at the new time.
    pub fn step(&self, f_prev: &DVector<f64>, fixed_values: &DVector<f64>) -> Result<DVector<f64>> {
        self.solve_rhs(&(&self.rhs_matrix * f_prev), fixed_values)
    }

    /// Solves the implicit system for an explicitly given full right-hand side.
    pub fn solve_rhs(&self, b: &DVector<f64>, fixed_values: &DVector<f64>) -> Result<DVector<f64>> {
        let mut bf = b.select_rows(&self.free);
        bf -= &self.coupling * fixed_values;
        let x = self.lu.solve(&bf).ok_or_else(|| Error::Singular {
            context: "theta-scheme solve".into(),
            condition: f64::INFINITY,
        })?;
        let mut f = DVector::zeros(b.len());
        for (k, &i) in self.free.iter().enumerate() {
            f[i] = x[k];
        }
        for (k, &i) in self.fixed.iter().enumerate() {
            f[i] = fixed_values[k];
        }
        Ok(f)
    }
}

/// One θ-step from `f_prev` to `tau_i` with Dirichlet value `K e^{-r tau_i}`.
pub fn step_theta(
    sys: &FemSystem1D,
    f_prev: &DVector<f64>,
    tau_i: f64,
    omega: f64,
    d_tau: f64,
    model: &ModelSpec,
) -> Result<DVector<f64>> {
    let stepper = ThetaStepper::new(
        &sys.m,
        &sys.operator(),
        &[sys.dirichlet_index],
        d_tau,
        omega,
    )?;
    let fd = DVector::from_element(1, model.strike * (-model.r * tau_i).exp());
    stepper.step(f_prev, &fd)
}

/// Coefficients at every time level and the data to evaluate them.
#[derive(Debug, Clone)]
pub struct PriceResult1D {
    pub basis: NurbsBasis1D,
    pub geometry: Geometry1D,
    pub taus: Vec<f64>,
    pub coefficients: Vec<DVector<f64>>,
    pub r: f64,
    pub strike: f64,
}

impl PriceResult1D {
    /// Put price at time level `step` and spot `s ∈ [0, s̄]`.
    pub fn put(&self, step: usize, s: f64) -> Result<f64> {
        let xi = self.geometry.physical_to_param(s)?;
        let loc = self.basis.eval_local(xi)?;
        let c = &self.coefficients[step];
        Ok(loc.indices().zip(&loc.values).map(|(i, v)| c[i] * v).sum())
    }

    pub fn call(&self, step: usize, s: f64) -> Result<f64> {
        Ok(crate::reference::parity_call(
            self.put(step, s)?,
            self.r,
            self.strike,
            self.taus[step],
            s,
        ))
    }

    pub fn final_step(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Put at maturity `tau = T`.
    pub fn put_final(&self, s: f64) -> Result<f64> {
        self.put(self.final_step(), s)
    }

    /// Distinct knot positions in physical space.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.basis
            .knot_vector()
            .breakpoints()
            .into_iter()
            .map(|xi| {
                self.geometry
                    .param_to_physical(xi)
                    .map(|p| p.0)
                    .unwrap_or(xi)
            })
            .collect()
    }
}

/// Assembles the system and runs `n_tau` θ-steps for the put.
pub fn price_put_1d(model: &ModelSpec, disc: &Discretization1D) -> Result<PriceResult1D> {
    model.validate()?;
    let kv = disc.knot_vector(model.strike)?;
    let basis = NurbsBasis1D::bspline(kv.clone());
    let geometry = Geometry1D::identity(&kv)?;
    let sys = FemSystem1D::assemble(&basis, &geometry, model)?;
    let strike = model.strike;
    let f0 = solve_spd(
        &sys.m,
        &load_vector(&basis, &geometry, |s| (strike - s).max(0.0))?,
        "mass matrix",
    )?;
    let d_tau = model.maturity / disc.n_tau as f64;
    let stepper = ThetaStepper::new(
        &sys.m,
        &sys.operator(),
        &[sys.dirichlet_index],
        d_tau,
        disc.omega,
    )?;
    let mut coefficients = Vec::with_capacity(disc.n_tau + 1);
    let mut taus = Vec::with_capacity(disc.n_tau + 1);
    coefficients.push(f0);
    taus.push(0.0);
    for i in 1..=disc.n_tau {
        let tau = d_tau * i as f64;
        let fd = DVector::from_element(1, strike * (-model.r * tau).exp());
        let next = stepper.step(coefficients.last().expect("initial state"), &fd)?;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite coefficients at step {i}"
            )));
        }
        coefficients.push(next);
        taus.push(tau);
    }
    Ok(PriceResult1D {
        basis,
        geometry,
        taus,
        coefficients,
        r: model.r,
        strike,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn hats() -> (NurbsBasis1D, Geometry1D) {
        let kv = KnotVector::open_uniform(1, 0.0, 2.0, 2).unwrap();
        let g = Geometry1D::identity(&kv).unwrap();
        (NurbsBasis1D::bspline(kv), g)
    }

    fn merton41() -> ModelSpec {
        ModelSpec::merton(
            0.048,
            0.197,
            100.0,
            1.0,
            JumpSpec::new(0.19, -0.055, 1.1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn hat_mass_matrix() {
        let (b, g) = hats();
        let m = assemble_mass(&b, &g).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[2., 1., 0., 1., 4., 1., 0., 1., 2.]) / 6.0;
        assert!((m - expect).amax() < 1e-15);
    }

    #[test]
    fn mass_rows_and_symmetry() {
        let kv = KnotVector::open_uniform(3, 0.0, 300.0, 9)
            .unwrap()
            .with_multiplicity(100.0, 3)
            .unwrap();
        let b = NurbsBasis1D::bspline(kv.clone());
        let g = Geometry1D::identity(&kv).unwrap();
        let m = assemble_mass(&b, &g).unwrap();
        assert!((&m - m.transpose()).amax() <= 1e-14 * m.amax());
        let ones = load_vector(&b, &g, |_| 1.0).unwrap();
        for i in 0..b.num_basis() {
            assert_abs_diff_eq!(m.row(i).sum(), ones[i], epsilon = 1e-11);
        }
    }

    #[test]
    fn affine_parameter_map_gives_same_mass() {
        let kv_phys = KnotVector::open_uniform(2, 0.0, 300.0, 6).unwrap();
        let kv_unit = KnotVector::open_uniform(2, 0.0, 1.0, 6).unwrap();
        let m1 = assemble_mass(
            &NurbsBasis1D::bspline(kv_phys.clone()),
            &Geometry1D::identity(&kv_phys).unwrap(),
        )
        .unwrap();
        let m2 = assemble_mass(
            &NurbsBasis1D::bspline(kv_unit.clone()),
            &Geometry1D::affine(&kv_unit, 0.0, 300.0).unwrap(),
        )
        .unwrap();
        assert!((m1 - m2).amax() < 1e-10);
    }

    #[test]
    fn stiffness_degenerate_cases() {
        let (b, g) = hats();
        let zero = ModelSpec::black_scholes(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(assemble_stiffness(&b, &g, &zero).unwrap().amax(), 0.0);
        let m = assemble_mass(&b, &g).unwrap();
        // without diffusion the convection coefficient is (λβ - r) s
        let drift = ModelSpec::black_scholes(0.07, 0.0, 1.0, 1.0).unwrap();
        let a = assemble_stiffness(&b, &g, &drift).unwrap();
        let c = assemble_weighted(&b, &g, 3, |s| s, 0, 1).unwrap();
        assert!((a - &m * 0.07 + c * 0.07).amax() < 1e-15);
        // λβ = r leaves only the reaction term
        let jumps = JumpSpec::new(1.0, 0.05, 0.2).unwrap();
        let r = jumps.beta();
        let react = ModelSpec::merton(r, 0.0, 1.0, 1.0, jumps).unwrap();
        let a = assemble_stiffness(&b, &g, &react).unwrap();
        assert!((a - m * r).amax() < 1e-15);
    }

    #[test]
    fn stiffness_rejects_stochastic_vol() {
        let (b, g) = hats();
        let f = crate::models::FractionalParams {
            kappa: 1.0,
            theta: 0.04,
            sigma: 0.3,
            rho: 0.0,
            eps: 1.0,
            hurst: 0.5,
        };
        let m = ModelSpec::svjd(0.05, 1.0, 1.0, f, JumpSpec::none()).unwrap();
        assert!(matches!(
            assemble_stiffness(&b, &g, &m),
            Err(Error::WrongSolver { .. })
        ));
    }

    #[test]
    fn zero_intensity_gives_zero_jump_matrix() {
        let (b, g) = hats();
        let m = assemble_mass(&b, &g).unwrap();
        assert_eq!(
            assemble_jump(&b, &g, &JumpSpec::none(), &m).unwrap().amax(),
            0.0
        );
    }

    #[test]
    fn constant_function_is_jump_invariant() {
        // jumps stay well inside [0, s̄] for s in the bulk of the domain
        let kv = KnotVector::open_uniform(2, 0.0, 1000.0, 40).unwrap();
        let b = NurbsBasis1D::bspline(kv.clone());
        let g = Geometry1D::identity(&kv).unwrap();
        let jumps = JumpSpec::new(0.3, 0.0, 0.05).unwrap();
        let m = assemble_mass(&b, &g).unwrap();
        let j = assemble_jump(&b, &g, &jumps, &m).unwrap();
        let out = j * DVector::from_element(b.num_basis(), 1.0);
        // rows whose support ends well below s̄ lose no kernel mass
        for i in 0..b.num_basis() {
            let (_, hi) = b.knot_vector().support(i);
            if hi < 700.0 {
                assert!(out[i].abs() <= 0.3 * 1e-4, "row {i}: {}", out[i]);
            }
        }
    }

    #[test]
    fn put_projection_is_exact() {
        let kv = KnotVector::open_uniform(3, 0.0, 300.0, 9)
            .unwrap()
            .with_multiplicity(100.0, 3)
            .unwrap();
        let b = NurbsBasis1D::bspline(kv.clone());
        let g = Geometry1D::identity(&kv).unwrap();
        let f = project_initial(&b, &g, |s: f64| (100.0 - s).max(0.0)).unwrap();
        for k in 0..=600 {
            let s = 0.5 * k as f64;
            let (v, _) = b.eval(s).unwrap();
            let val: f64 = v.iter().zip(f.iter()).map(|(a, c)| a * c).sum();
            assert!((val - (100.0 - s).max(0.0)).abs() <= 1e-10);
        }
        let c = project_initial(&b, &g, |_| 2.5).unwrap();
        assert!(c.iter().all(|&x| (x - 2.5).abs() < 1e-12));
    }

    #[test]
    fn digital_projection_overshoots() {
        let kv = KnotVector::open_uniform(3, 0.0, 300.0, 9).unwrap();
        let b = NurbsBasis1D::bspline(kv.clone());
        let g = Geometry1D::identity(&kv).unwrap();
        let f = project_initial(&b, &g, |s| if s < 100.0 { 1.0 } else { 0.0 }).unwrap();
        let max = (0..=300)
            .map(|k| {
                let (v, _) = b.eval(k as f64).unwrap();
                v.iter().zip(f.iter()).map(|(a, c)| a * c).sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(max > 1.0);
    }

    #[test]
    fn step_without_operator_only_sets_dirichlet() {
        let (b, g) = hats();
        let m = assemble_mass(&b, &g).unwrap();
        let sys = FemSystem1D {
            a: DMatrix::zeros(3, 3),
            j: DMatrix::zeros(3, 3),
            m,
            dirichlet_index: 0,
        };
        let model = ModelSpec::black_scholes(0.05, 0.2, 1.5, 1.0).unwrap();
        let prev = DVector::from_vec(vec![1.5, 0.4, 0.0]);
        let next = step_theta(&sys, &prev, 0.1, 1.0, 0.1, &model).unwrap();
        assert_eq!(next[0], 1.5 * (-0.005f64).exp());
        // M is not diagonal, so changing the fixed value couples into the free rows
        let stepper = ThetaStepper::new(&sys.m, &sys.operator(), &[0], 0.1, 1.0).unwrap();
        let same = stepper.step(&prev, &DVector::from_element(1, 1.5)).unwrap();
        assert!((same - prev).amax() < 1e-14);
    }

    #[test]
    fn dirichlet_value_every_step_and_parity() {
        let model = merton41();
        let res = price_put_1d(&model, &Discretization1D::new(2, 9, 20, 300.0)).unwrap();
        assert_abs_diff_eq!(res.coefficients[0][0], 100.0, epsilon = 1e-12);
        for (tau, c) in res.taus.iter().zip(&res.coefficients).skip(1) {
            assert_eq!(c[0], 100.0 * (-0.048 * tau).exp());
        }
        for s in [0.0, 50.0, 100.0, 250.0, 300.0] {
            let lhs =
                res.call(20, s).unwrap() - res.put(20, s).unwrap() - s + 100.0 * (-0.048f64).exp();
            assert!(lhs.abs() <= 1e-12);
        }
        assert_abs_diff_eq!(
            res.put_final(0.0).unwrap(),
            100.0 * (-0.048f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn jump_free_run_skips_assembly_exactly() {
        let model = ModelSpec::black_scholes(0.048, 0.197, 100.0, 1.0).unwrap();
        let disc = Discretization1D::new(3, 9, 10, 300.0);
        let a = price_put_1d(&model, &disc).unwrap();
        let kv = disc.knot_vector(100.0).unwrap();
        let basis = NurbsBasis1D::bspline(kv.clone());
        let geom = Geometry1D::identity(&kv).unwrap();
        let m = assemble_mass(&basis, &geom).unwrap();
        let st = assemble_stiffness(&basis, &geom, &model).unwrap();
        let stepper = ThetaStepper::new(&m, &st, &[0], 0.1, 1.0).unwrap();
        let mut f = a.coefficients[0].clone();
        for i in 1..=10 {
            f = stepper
                .step(
                    &f,
                    &DVector::from_element(1, 100.0 * (-0.048 * 0.1 * i as f64).exp()),
                )
                .unwrap();
        }
        assert_eq!(f, a.coefficients[10]);
    }

    #[test]
    fn config_validation() {
        let mut d = Discretization1D::new(3, 9, 100, 300.0);
        assert!(d.knot_vector(100.0).is_ok());
        d.s_max = 90.0;
        assert!(matches!(d.knot_vector(100.0), Err(Error::Config(_))));
        let mut d = Discretization1D::new(3, 9, 100, 300.0);
        d.strike_knot_multiplicity = 5;
        assert!(d.validate(100.0).is_err());
        d.strike_knot_multiplicity = 3;
        d.omega = 1.5;
        assert!(d.validate(100.0).is_err());
    }
}
