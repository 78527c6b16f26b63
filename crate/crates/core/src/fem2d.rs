//! Tensor-product Galerkin solver for the two-dimensional SVJD pricing PIDE
//! on `(0, s̄) × (0, v̄)`.
//!
//! Basis functions are products `ψ_i(s, v) = ψ^s_{i1}(s) ψ^v_{i2}(v)` with
//! `i = i1 + N1 * i2`, so every matrix whose coefficient separates in `s` and
//! `v` is a Kronecker product `V ⊗ S` of one-dimensional matrices. The put
//! price is fixed to `K e^{-r tau}` on `s = 0`; the other edges carry the
//! homogeneous conormal condition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem1d::{
    assemble_jump_prime, assemble_weighted, default_quadrature_order, load_vector, ThetaStepper,
};
use crate::models::{ModelSpec, V_FLOOR};
use crate::splines::{Geometry1D, KnotVector, NurbsBasis1D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discretization2D {
    pub s_max: f64,
    pub v_max: f64,
    pub n_s: usize,
    pub n_v: usize,
    pub degree: usize,
    pub strike_knot_multiplicity: usize,
    pub n_tau: usize,
    pub omega: f64,
}

impl Discretization2D {
    /// `n_v = n_s`, strike multiplicity `p`, fully implicit stepping.
    pub fn new(degree: usize, n_s: usize, n_tau: usize, s_max: f64, v_max: f64) -> Self {
        Self {
            s_max,
            v_max,
            n_s,
            n_v: n_s,
            degree,
            strike_knot_multiplicity: degree.max(1),
            n_tau,
            omega: 1.0,
        }
    }

    pub fn validate(&self, strike: f64) -> Result<()> {
        let s_part = crate::fem1d::Discretization1D {
            s_max: self.s_max,
            n_s: self.n_s,
            degree: self.degree,
            strike_knot_multiplicity: self.strike_knot_multiplicity,
            n_tau: self.n_tau,
            omega: self.omega,
        };
        s_part.validate(strike)?;
        if self.n_v == 0 || !(self.v_max > 0.0) {
            return Err(Error::Config("need n_v >= 1 and v_max > 0".into()));
        }
        Ok(())
    }

    pub fn tensor_basis(&self, strike: f64) -> Result<TensorBasis2D> {
        self.validate(strike)?;
        let ks = KnotVector::open_uniform(self.degree, 0.0, self.s_max, self.n_s)?
            .with_multiplicity(strike, self.strike_knot_multiplicity)?;
        let kv = KnotVector::open_uniform(self.degree, 0.0, self.v_max, self.n_v)?;
        TensorBasis2D::new(
            NurbsBasis1D::bspline(ks.clone()),
            Geometry1D::identity(&ks)?,
            NurbsBasis1D::bspline(kv.clone()),
            Geometry1D::identity(&kv)?,
        )
    }
}

#[derive(Debug, Clone)]
pub struct TensorBasis2D {
    pub basis_s: NurbsBasis1D,
    pub geom_s: Geometry1D,
    pub basis_v: NurbsBasis1D,
    pub geom_v: Geometry1D,
}

impl TensorBasis2D {
    pub fn new(
        basis_s: NurbsBasis1D,
        geom_s: Geometry1D,
        basis_v: NurbsBasis1D,
        geom_v: Geometry1D,
    ) -> Result<Self> {
        if !basis_s.knot_vector().is_open() {
            return Err(Error::Config(
                "the s-direction needs an open knot vector".into(),
            ));
        }
        Ok(Self {
            basis_s,
            geom_s,
            basis_v,
            geom_v,
        })
    }

    pub fn n1(&self) -> usize {
        self.basis_s.num_basis()
    }

    pub fn n2(&self) -> usize {
        self.basis_v.num_basis()
    }

    pub fn len(&self) -> usize {
        self.n1() * self.n2()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i1 + self.n1() * i2
    }

    pub fn split(&self, i: usize) -> (usize, usize) {
        (i % self.n1(), i / self.n1())
    }

    /// Indices of the functions that do not vanish on the edge `s = 0`.
    pub fn dirichlet_set(&self) -> Vec<usize> {
        (0..self.n2()).map(|i2| self.index(0, i2)).collect()
    }

    /// Dense values `ψ_i(s, v)` for all `i`.
    pub fn eval(&self, s: f64, v: f64) -> Result<Vec<f64>> {
        let ls = self.basis_s.eval_local(self.geom_s.physical_to_param(s)?)?;
        let lv = self.basis_v.eval_local(self.geom_v.physical_to_param(v)?)?;
        let mut out = vec![0.0; self.len()];
        for (i2, bv) in lv.indices().zip(&lv.values) {
            for (i1, bs) in ls.indices().zip(&ls.values) {
                out[self.index(i1, i2)] = bs * bv;
            }
        }
        Ok(out)
    }

    /// `Σ c_i ψ_i(s, v)`.
    pub fn combine(&self, c: &DVector<f64>, s: f64, v: f64) -> Result<f64> {
        let ls = self.basis_s.eval_local(self.geom_s.physical_to_param(s)?)?;
        let lv = self.basis_v.eval_local(self.geom_v.physical_to_param(v)?)?;
        let mut acc = 0.0;
        for (i2, bv) in lv.indices().zip(&lv.values) {
            for (i1, bs) in ls.indices().zip(&ls.values) {
                acc += c[self.index(i1, i2)] * bs * bv;
            }
        }
        Ok(acc)
    }
}

/// The one-dimensional factors reused by the Kronecker products.
#[derive(Debug, Clone)]
pub struct Factors {
    pub m_s: DMatrix<f64>,
    pub m_v: DMatrix<f64>,
    /// `J'_s`; `None` without jumps.
    pub jp_s: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct FemSystem2D {
    pub m: DMatrix<f64>,
    /// Stiffness part independent of `psi`.
    pub a: DMatrix<f64>,
    /// Coefficient matrix of `psi(tau)`; `None` if the drift has no `psi` term.
    pub a_psi: Option<DMatrix<f64>>,
    pub j: DMatrix<f64>,
    pub dirichlet_set: Vec<usize>,
    /// Boundary mass matrix on the edge `s = 0`.
    pub m_d: DMatrix<f64>,
    pub factors: Factors,
}

impl FemSystem2D {
    /// `A(tau) + J`.
    pub fn operator(&self, psi: f64) -> DMatrix<f64> {
        let mut l = &self.a + &self.j;
        if let Some(ap) = &self.a_psi {
            if psi != 0.0 {
                l += ap * psi;
            }
        }
        l
    }
}

/// Assembles `M`, `A` and `J` as sums of Kronecker products of 1-D integrals.
///
/// With row = test function `i`, column = trial function `j`:
///
/// ```text
/// A = ½ V[v] ⊗ S'[s²]'  + ½ρ V'[q√v] ⊗ S[s]'  + ½ρ V[q√v]' ⊗ S'[s]
///   + ½ V'[q²]' ⊗ M_s   + V[g_s] ⊗ S[s]'       + V[g_v]' ⊗ M_s      + r M
/// g_s = λβ - r + v + ½ρ q'√v + ¼ρ q/√v,   g_v = -p + ½ρ q√v + q q'
/// ```
///
/// where a prime on the left (right) of a bracket differentiates the test
/// (trial) function.
pub fn assemble_2d(model: &ModelSpec, tb: &TensorBasis2D) -> Result<FemSystem2D> {
    let f = model.fractional().ok_or_else(|| Error::WrongSolver {
        solver: "fem2d",
        reason: "constant volatility belongs to the one-dimensional solver".into(),
    })?;
    let (bs, gs) = (&tb.basis_s, &tb.geom_s);
    let (bv, gv) = (&tb.basis_v, &tb.geom_v);
    let qs = default_quadrature_order(bs.degree());
    // the v-coefficients are polynomial in v except the sqrt(v) psi term
    let qv = default_quadrature_order(bv.degree()) + 1;
    let rho = f.rho;
    let beta = model.jumps.beta();
    let lambda = model.jumps.lambda;
    let r = model.r;
    let pq = |v: f64| model.pq_coefficients(v.max(0.0), 0.0).expect("v >= 0");

    let m_s = assemble_weighted(bs, gs, qs, |_| 1.0, 0, 0)?;
    let m_v = assemble_weighted(bv, gv, qv, |_| 1.0, 0, 0)?;
    let s_dd = assemble_weighted(bs, gs, qs, |s| s * s, 1, 1)?;
    let s_nd = assemble_weighted(bs, gs, qs, |s| s, 0, 1)?;
    let s_dn = assemble_weighted(bs, gs, qs, |s| s, 1, 0)?;

    let v_v = assemble_weighted(bv, gv, qv, |v| v, 0, 0)?;
    let v_qsv_dn = assemble_weighted(bv, gv, qv, |v| pq(v).q * v.sqrt(), 1, 0)?;
    let v_qsv_nd = assemble_weighted(bv, gv, qv, |v| pq(v).q * v.sqrt(), 0, 1)?;
    let v_q2_dd = assemble_weighted(bv, gv, qv, |v| pq(v).q.powi(2), 1, 1)?;
    let g_s = |v: f64| {
        let c = pq(v);
        lambda * beta - r
            + v
            + 0.5 * rho * c.dq * v.sqrt()
            + 0.25 * rho * c.q / v.max(V_FLOOR).sqrt()
    };
    let v_gs = assemble_weighted(bv, gv, qv, g_s, 0, 0)?;
    let g_v = |v: f64| {
        let c = pq(v);
        -c.p + 0.5 * rho * c.q * v.sqrt() + c.q * c.dq
    };
    let v_gv = assemble_weighted(bv, gv, qv, g_v, 0, 1)?;

    let m = m_v.kronecker(&m_s);
    let mut a = v_v.kronecker(&s_dd) * 0.5;
    a += v_qsv_dn.kronecker(&s_nd) * (0.5 * rho);
    a += v_qsv_nd.kronecker(&s_dn) * (0.5 * rho);
    a += v_q2_dd.kronecker(&m_s) * 0.5;
    a += v_gs.kronecker(&s_nd);
    a += v_gv.kronecker(&m_s);
    a += &m * r;

    // -p(v) contains -(H - 1/2) psi sigma sqrt(v); pq above was taken at psi(0)
    let psi_active = f.hurst > 0.5 && !model.psi_profile.is_zero();
    let a_psi = if psi_active {
        let psi0 = model.psi_profile.eval(0.0);
        let coef = -(f.hurst - 0.5) * f.sigma;
        let v_psi = assemble_weighted(bv, gv, qv, |v| coef * v.sqrt(), 0, 1)?;
        let a_psi = v_psi.kronecker(&m_s);
        a -= &a_psi * psi0;
        Some(a_psi)
    } else {
        None
    };

    let (j, jp_s) = if model.jumps.is_active() {
        let jp_s = assemble_jump_prime(bs, gs, &model.jumps)?;
        let j = (&m - m_v.kronecker(&jp_s)) * lambda;
        (j, Some(jp_s))
    } else {
        (DMatrix::zeros(m.nrows(), m.ncols()), None)
    };

    Ok(FemSystem2D {
        m,
        a,
        a_psi,
        j,
        dirichlet_set: tb.dirichlet_set(),
        m_d: m_v.clone(),
        factors: Factors { m_s, m_v, jp_s },
    })
}

/// Coefficients on `I_D` solving `M_D f = c`, `c_j = ∫ ψ^v_j h dv`, for the
/// constant edge value `h`.
pub fn project_dirichlet(tb: &TensorBasis2D, m_d: &DMatrix<f64>, h: f64) -> Result<DVector<f64>> {
    let c = load_vector(&tb.basis_v, &tb.geom_v, |_| h)?;
    m_d.clone()
        .cholesky()
        .map(|ch| ch.solve(&c))
        .ok_or_else(|| Error::Config("boundary mass matrix is singular".into()))
}

/// `M f(0) = Φ` with the separable load `Φ = (∫ψ^v) ⊗ (∫ψ^s payoff)`.
pub fn project_initial_2d(
    tb: &TensorBasis2D,
    m: &DMatrix<f64>,
    payoff: impl Fn(f64) -> f64,
) -> Result<DVector<f64>> {
    let phi_s = load_vector(&tb.basis_s, &tb.geom_s, payoff)?;
    let phi_v = load_vector(&tb.basis_v, &tb.geom_v, |_| 1.0)?;
    let phi = phi_v.kronecker(&phi_s);
    m.clone()
        .cholesky()
        .map(|ch| ch.solve(&phi))
        .ok_or_else(|| Error::Singular {
            context: "2-D mass matrix".into(),
            condition: f64::INFINITY,
        })
}

#[derive(Debug, Clone)]
pub struct PriceResult2D {
    pub basis: TensorBasis2D,
    pub taus: Vec<f64>,
    pub coefficients: Vec<DVector<f64>>,
    pub r: f64,
    pub strike: f64,
}

impl PriceResult2D {
    pub fn put(&self, step: usize, s: f64, v: f64) -> Result<f64> {
        self.basis.combine(&self.coefficients[step], s, v)
    }

    pub fn call(&self, step: usize, s: f64, v: f64) -> Result<f64> {
        Ok(crate::reference::parity_call(
            self.put(step, s, v)?,
            self.r,
            self.strike,
            self.taus[step],
            s,
        ))
    }

    pub fn final_step(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn put_final(&self, s: f64, v: f64) -> Result<f64> {
        self.put(self.final_step(), s, v)
    }

    /// Distinct knot positions in `s`.
    pub fn s_breakpoints(&self) -> Vec<f64> {
        self.basis.basis_s.knot_vector().breakpoints()
    }
}

/// Assembles and runs `n_tau` θ-steps. A nonzero `psi` profile makes the
/// operator time dependent, and the system is then refactorized every step.
pub fn price_put_2d(model: &ModelSpec, disc: &Discretization2D) -> Result<PriceResult2D> {
    model.validate()?;
    let tb = disc.tensor_basis(model.strike)?;
    price_put_2d_on(model, tb, disc.n_tau, disc.omega)
}

/// [`price_put_2d`] on a caller-supplied tensor basis.
pub fn price_put_2d_on(
    model: &ModelSpec,
    tb: TensorBasis2D,
    n_tau: usize,
    omega: f64,
) -> Result<PriceResult2D> {
    model.validate()?;
    if n_tau == 0 || !(0.0..=1.0).contains(&omega) {
        return Err(Error::Config(format!(
            "need n_tau >= 1 and omega in [0, 1] (got {n_tau}, {omega})"
        )));
    }
    let sys = assemble_2d(model, &tb)?;
    let strike = model.strike;
    let f0 = project_initial_2d(&tb, &sys.m, |s| (strike - s).max(0.0))?;
    let d_tau = model.maturity / n_tau as f64;
    // edge coefficients for h = 1; the data is constant along the edge
    let unit_edge = project_dirichlet(&tb, &sys.m_d, 1.0)?;
    let mut coefficients = Vec::with_capacity(n_tau + 1);
    let mut taus = Vec::with_capacity(n_tau + 1);
    coefficients.push(f0);
    taus.push(0.0);
    let fixed = &sys.dirichlet_set;
    let time_dependent = sys.a_psi.is_some();
    let steady = if time_dependent {
        None
    } else {
        Some(ThetaStepper::new(
            &sys.m,
            &sys.operator(0.0),
            fixed,
            d_tau,
            omega,
        )?)
    };
    for i in 1..=n_tau {
        let tau = d_tau * i as f64;
        let fd = &unit_edge * (strike * (-model.r * tau).exp());
        let prev = coefficients.last().expect("initial state");
        let next = match &steady {
            Some(st) => st.step(prev, &fd),
            None => {
                let psi_new = model.psi_profile.eval(tau);
                let psi_old = model.psi_profile.eval(tau - d_tau);
                step_time_dependent(&sys, prev, &fd, psi_old, psi_new, d_tau, omega)
            }
        }
        .map_err(|e| Error::Numerical(format!("step {i}: {e}")))?;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite coefficients at step {i}"
            )));
        }
        coefficients.push(next);
        taus.push(tau);
    }
    Ok(PriceResult2D {
        basis: tb,
        taus,
        coefficients,
        r: model.r,
        strike,
    })
}

/// `(M + dτ ω L_new) f = (M - (1 - ω) dτ L_old) f_prev` with the fixed set eliminated.
fn step_time_dependent(
    sys: &FemSystem2D,
    prev: &DVector<f64>,
    fd: &DVector<f64>,
    psi_old: f64,
    psi_new: f64,
    d_tau: f64,
    omega: f64,
) -> Result<DVector<f64>> {
    let mut rhs = &sys.m * prev;
    if omega < 1.0 {
        rhs -= sys.operator(psi_old) * prev * ((1.0 - omega) * d_tau);
    }
    ThetaStepper::new(
        &sys.m,
        &sys.operator(psi_new),
        &sys.dirichlet_set,
        d_tau,
        omega,
    )?
    .solve_rhs(&rhs, fd)
}
