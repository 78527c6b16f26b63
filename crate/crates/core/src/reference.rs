//! Reference pricers: Black–Scholes, the Merton Poisson series, a
//! characteristic-function pricer for Heston/Bates and a Monte Carlo
//! simulator for the fractional SVJD model.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::models::{FractionalParams, JumpSpec, ModelSpec};
use crate::quadrature::QuadratureRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    BlackScholes,
    MertonSeries,
    Fourier,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePrice {
    pub method: Method,
    pub value: f64,
    /// Standard error for Monte Carlo, truncation bound for series, absent otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// European put under Black–Scholes with time to maturity `t`.
pub fn bs_put(r: f64, sigma: f64, strike: f64, t: f64, s: f64) -> f64 {
    let df = (-r * t).exp();
    if s <= 0.0 {
        return strike * df;
    }
    let vol = sigma * t.sqrt();
    if !(vol > 0.0) {
        return (strike * df - s).max(0.0);
    }
    let d1 = ((s / strike).ln() + (r + 0.5 * sigma * sigma) * t) / vol;
    let d2 = d1 - vol;
    let n = std_normal();
    strike * df * n.cdf(-d2) - s * n.cdf(-d1)
}

pub fn bs_call(r: f64, sigma: f64, strike: f64, t: f64, s: f64) -> f64 {
    parity_call(bs_put(r, sigma, strike, t, s), r, strike, t, s)
}

/// `call = put + s - K e^{-r t}`.
pub fn parity_call(put: f64, r: f64, strike: f64, t: f64, s: f64) -> f64 {
    put + s - strike * (-r * t).exp()
}

/// Merton put as a Poisson mixture of Black–Scholes prices. Returns the
/// value and an estimate of the omitted tail.
pub fn merton_put_with_bound(
    r: f64,
    sigma: f64,
    jumps: &JumpSpec,
    strike: f64,
    t: f64,
    s: f64,
) -> (f64, f64) {
    if !jumps.is_active() || t <= 0.0 {
        return (bs_put(r, sigma, strike, t, s), 0.0);
    }
    let beta = jumps.beta();
    let lt = jumps.lambda * (1.0 + beta) * t;
    let log1b = (1.0 + beta).ln();
    let mut log_w = -lt;
    let mut total = 0.0;
    let mut mass = 0.0;
    for k in 0..10_000usize {
        if k > 0 {
            log_w += lt.ln() - (k as f64).ln();
        }
        let w = log_w.exp();
        let kf = k as f64;
        let sig_k = (sigma * sigma + kf * jumps.sigma_j * jumps.sigma_j / t).sqrt();
        let r_k = r - jumps.lambda * beta + kf * log1b / t;
        let term = w * bs_put(r_k, sig_k, strike, t, s);
        total += term;
        mass += w;
        if kf > lt && term <= 1e-12 * total.max(1e-300) && w < 1e-16 {
            break;
        }
    }
    // tail estimate: omitted Poisson mass times the k = 0 discounted strike
    let cap = strike * (-(r - jumps.lambda * beta) * t).exp();
    (total, cap * (1.0 - mass).max(0.0))
}

pub fn merton_put(r: f64, sigma: f64, jumps: &JumpSpec, strike: f64, t: f64, s: f64) -> f64 {
    merton_put_with_bound(r, sigma, jumps, strike, t, s).0
}

/// Put price for a constant-volatility model (Black–Scholes or Merton).
pub fn constant_vol_put(model: &ModelSpec, t: f64, s: f64) -> Result<ReferencePrice> {
    let sigma = model.constant_sigma().ok_or_else(|| Error::WrongSolver {
        solver: "merton series",
        reason: "model has stochastic volatility".into(),
    })?;
    if model.jumps.is_active() {
        let (value, bound) =
            merton_put_with_bound(model.r, sigma, &model.jumps, model.strike, t, s);
        Ok(ReferencePrice {
            method: Method::MertonSeries,
            value,
            stderr: Some(bound),
        })
    } else {
        Ok(ReferencePrice {
            method: Method::BlackScholes,
            value: bs_put(model.r, sigma, model.strike, t, s),
            stderr: None,
        })
    }
}

/// Options for the Fourier pricer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierOptions {
    /// Baseline number of Gauss–Legendre nodes on `[0, U]`.
    pub nodes: usize,
    /// `U` is grown until the integrand modulus drops below this.
    pub tail_tol: f64,
    pub max_u: f64,
}

impl Default for FourierOptions {
    fn default() -> Self {
        Self {
            nodes: 256,
            tail_tol: 1e-12,
            max_u: 1e4,
        }
    }
}

/// Characteristic function of `ln S_t` for square-root variance with
/// log-normal jumps, in the form that avoids branch-cut discontinuities.
struct BatesCf {
    x0: f64,
    r: f64,
    t: f64,
    v0: f64,
    kappa: f64,
    theta: f64,
    xi: f64,
    rho: f64,
    jumps: JumpSpec,
}

impl BatesCf {
    fn eval(&self, u: Complex64) -> Complex64 {
        let i = Complex64::i();
        let beta = self.jumps.beta();
        let xi2 = self.xi * self.xi;
        let b = self.kappa - self.rho * self.xi * i * u;
        let d = (b * b + xi2 * (i * u + u * u)).sqrt();
        let g = (b - d) / (b + d);
        let e = (-d * self.t).exp();
        let c = self.kappa * self.theta / xi2
            * ((b - d) * self.t - 2.0 * ((1.0 - g * e) / (1.0 - g)).ln());
        let dd = (b - d) / xi2 * (1.0 - e) / (1.0 - g * e);
        let jump = self.jumps.lambda
            * self.t
            * ((i * u * self.jumps.mu_j - 0.5 * u * u * self.jumps.sigma_j * self.jumps.sigma_j)
                .exp()
                - 1.0);
        (i * u * (self.x0 + (self.r - self.jumps.lambda * beta) * self.t) + c + dd * self.v0 + jump)
            .exp()
    }
}

/// Put price under Heston (`lambda = 0`) or Bates dynamics with vol-of-vol
/// `xi`, by Gil-Pelaez inversion.
#[allow(clippy::too_many_arguments)]
pub fn bates_put(
    r: f64,
    kappa: f64,
    theta: f64,
    xi: f64,
    rho: f64,
    jumps: &JumpSpec,
    strike: f64,
    t: f64,
    s: f64,
    v0: f64,
    opts: FourierOptions,
) -> Result<f64> {
    let df = (-r * t).exp();
    if s <= 0.0 {
        return Ok(strike * df);
    }
    if t <= 0.0 {
        return Ok((strike - s).max(0.0));
    }
    let cf = BatesCf {
        x0: s.ln(),
        r,
        t,
        v0,
        kappa,
        theta,
        xi,
        rho,
        jumps: *jumps,
    };
    let i = Complex64::i();
    let lnk = strike.ln();
    let forward = s * (r * t).exp();
    // P1 under the share measure, P2 under the risk-neutral measure
    let integrand = |u: f64| -> [f64; 2] {
        let uc = Complex64::new(u, 0.0);
        let phase = (-i * uc * lnk).exp();
        let f2 = cf.eval(uc);
        let f1 = cf.eval(uc - i) / forward;
        let den = i * uc;
        [(phase * f1 / den).re, (phase * f2 / den).re]
    };
    let freq = (lnk - forward.ln()).abs() + 1.0;
    let [i1, i2] = integrate_half_line(integrand, freq, opts)?;
    let p1 = 0.5 + i1 / std::f64::consts::PI;
    let p2 = 0.5 + i2 / std::f64::consts::PI;
    let call = s * p1 - strike * df * p2;
    let put = call - s + strike * df;
    if !put.is_finite() {
        return Err(Error::Numerical(
            "Fourier inversion produced a non-finite price".into(),
        ));
    }
    Ok(put)
}

/// `∫_0^U f(u) du` for a vector-valued integrand, with `U` grown until every
/// component is below the tail tolerance and panels fine enough for the
/// oscillation frequency `freq`.
fn integrate_half_line<const N: usize>(
    f: impl Fn(f64) -> [f64; N],
    freq: f64,
    opts: FourierOptions,
) -> Result<[f64; N]> {
    let peak = |u: f64| f(u).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut upper = 10.0;
    while peak(upper).max(peak(upper * 1.1)) >= opts.tail_tol {
        upper *= 1.5;
        if upper > opts.max_u {
            return Err(Error::Numerical(format!(
                "characteristic-function integrand still {:.3e} at u = {:.3e}",
                peak(upper),
                opts.max_u
            )));
        }
    }
    let per_panel = 16;
    let panels = (opts.nodes / per_panel).max((upper * freq / 2.0).ceil() as usize);
    let rule = QuadratureRule::gauss_legendre(per_panel);
    let h = upper / panels as f64;
    let mut acc = [0.0; N];
    for k in 0..panels {
        for (u, w) in rule.mapped(k as f64 * h, (k + 1) as f64 * h) {
            for (a, v) in acc.iter_mut().zip(f(u)) {
                *a += w * v;
            }
        }
    }
    Ok(acc)
}

/// Call price for the same dynamics as [`bates_put`], computed on the contour
/// `Im u = -1/2` instead of by the two-probability split:
/// `C = S - e^{-rt} √K / π ∫_0^∞ Re[e^{iu ln K} φ(-u - i/2)] / (u² + 1/4) du`.
#[allow(clippy::too_many_arguments)]
pub fn bates_call(
    r: f64,
    kappa: f64,
    theta: f64,
    xi: f64,
    rho: f64,
    jumps: &JumpSpec,
    strike: f64,
    t: f64,
    s: f64,
    v0: f64,
    opts: FourierOptions,
) -> Result<f64> {
    let df = (-r * t).exp();
    if s <= 0.0 {
        return Ok(0.0);
    }
    if t <= 0.0 {
        return Ok((s - strike).max(0.0));
    }
    let cf = BatesCf {
        x0: s.ln(),
        r,
        t,
        v0,
        kappa,
        theta,
        xi,
        rho,
        jumps: *jumps,
    };
    let lnk = strike.ln();
    let forward = s * (r * t).exp();
    let integrand = |u: f64| -> [f64; 1] {
        let z = Complex64::new(-u, -0.5);
        let phase = Complex64::new(0.0, u * lnk).exp();
        [(phase * cf.eval(z)).re / (u * u + 0.25)]
    };
    let freq = (lnk - forward.ln()).abs() + 1.0;
    let [integral] = integrate_half_line(integrand, freq, opts)?;
    let call = s - df * strike.sqrt() * integral / std::f64::consts::PI;
    if !call.is_finite() {
        return Err(Error::Numerical(
            "Fourier inversion produced a non-finite price".into(),
        ));
    }
    Ok(call)
}

/// Characteristic-function price of a put under a square-root variance
/// model. The fractional correction to the drift is dropped, and the
/// vol-of-vol is `eps^(H - 1/2) sigma`; for `H = 1/2` this is Heston/Bates.
pub fn heston_bates_put(model: &ModelSpec, t: f64, s: f64, v0: f64) -> Result<ReferencePrice> {
    let f = model.fractional().ok_or_else(|| Error::WrongSolver {
        solver: "fourier",
        reason: "model has constant volatility".into(),
    })?;
    let value = bates_put(
        model.r,
        f.kappa,
        f.theta,
        f.q_scale(),
        f.rho,
        &model.jumps,
        model.strike,
        t,
        s,
        v0,
        FourierOptions::default(),
    )?;
    Ok(ReferencePrice {
        method: Method::Fourier,
        value,
        stderr: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub price: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

/// Antithetic pairs per parallel block; each block has its own RNG stream.
const MC_BLOCK: usize = 512;

/// Weights `a_m` with `psi_k = sum_{m=1..k} a_m dW_{k-m}`: the kernel
/// `(t - s + eps)^(H - 3/2)` averaged over each step.
fn psi_kernel(f: &FractionalParams, dt: f64, n_steps: usize) -> Vec<f64> {
    let a = f.hurst - 0.5;
    let mut out = vec![0.0; n_steps + 1];
    for (m, o) in out.iter_mut().enumerate().skip(1) {
        let hi = (m as f64 * dt + f.eps).powf(a);
        let lo = ((m - 1) as f64 * dt + f.eps).powf(a);
        *o = (hi - lo) / (a * dt);
    }
    out
}

/// Monte Carlo put under the fractional SVJD dynamics: log-Euler for the
/// price, full truncation for the variance, Poisson jump counts per step,
/// antithetic variates.
pub fn mc_fsvjd_put(model: &ModelSpec, s0: f64, v0: f64, cfg: McConfig) -> Result<McResult> {
    let f = *model.fractional().ok_or_else(|| Error::WrongSolver {
        solver: "monte carlo",
        reason: "model has constant volatility".into(),
    })?;
    if cfg.n_paths < 2 || cfg.n_steps == 0 {
        return Err(Error::Config(format!(
            "Monte Carlo needs n_paths >= 2 and n_steps >= 1 (got {} and {})",
            cfg.n_paths, cfg.n_steps
        )));
    }
    if !(v0 >= 0.0) || !(s0 > 0.0) {
        return Err(Error::Config(format!(
            "need s0 > 0 and v0 >= 0 (got {s0}, {v0})"
        )));
    }
    let t = model.maturity;
    let dt = t / cfg.n_steps as f64;
    let sdt = dt.sqrt();
    let fractional = f.hurst > 0.5;
    let kernel = if fractional {
        psi_kernel(&f, dt, cfg.n_steps)
    } else {
        Vec::new()
    };
    let jumps = model.jumps;
    let poisson = if jumps.is_active() {
        Some(Poisson::new(jumps.lambda * dt).map_err(|e| Error::InvalidModel(e.to_string()))?)
    } else {
        None
    };
    let drift = model.r - jumps.lambda * jumps.beta();
    let rho_c = (1.0 - f.rho * f.rho).sqrt();
    let q_scale = f.q_scale();
    let strike = model.strike;
    let df = (-model.r * t).exp();
    let n_pairs = cfg.n_paths.div_ceil(2);
    let n_blocks = n_pairs.div_ceil(MC_BLOCK);

    let simulate_block = |block: usize| -> (f64, f64, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(block as u64);
        let pairs = MC_BLOCK.min(n_pairs - block * MC_BLOCK);
        let mut dw_hist = vec![0.0; cfg.n_steps];
        let (mut mean, mut m2) = (0.0, 0.0);
        for done in 0..pairs {
            let mut x = [s0.ln(); 2];
            let mut v = [v0; 2];
            for k in 0..cfg.n_steps {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let dwv = sdt * z1;
                let dws = sdt * (f.rho * z1 + rho_c * z2);
                let psi = if fractional {
                    dw_hist[k] = dwv;
                    let mut acc = 0.0;
                    for m in 1..=k {
                        acc += kernel[m] * dw_hist[k - m];
                    }
                    acc
                } else {
                    0.0
                };
                let (njump, zj) = match &poisson {
                    Some(p) => {
                        let n = p.sample(&mut rng) as usize;
                        let mut zsum = 0.0;
                        for _ in 0..n {
                            zsum += rng.sample::<f64, _>(StandardNormal);
                        }
                        (n, zsum)
                    }
                    None => (0, 0.0),
                };
                // the antithetic twin flips every Gaussian increment, including psi
                for (a, sign) in [(0usize, 1.0), (1usize, -1.0)] {
                    let vp = v[a].max(0.0);
                    let sv = vp.sqrt();
                    let jump = njump as f64 * jumps.mu_j + sign * jumps.sigma_j * zj;
                    x[a] += (drift - 0.5 * vp) * dt + sv * sign * dws + jump;
                    let p = (f.hurst - 0.5) * sign * psi * f.sigma * sv + f.kappa * (f.theta - vp);
                    v[a] += p * dt + q_scale * sv * sign * dwv;
                }
            }
            let pay = 0.5 * ((strike - x[0].exp()).max(0.0) + (strike - x[1].exp()).max(0.0)) * df;
            let delta = pay - mean;
            mean += delta / (done + 1) as f64;
            m2 += delta * (pay - mean);
        }
        (mean, m2, pairs)
    };

    // blocks are merged in index order so the result does not depend on scheduling
    let blocks: Vec<(f64, f64, usize)> =
        (0..n_blocks).into_par_iter().map(simulate_block).collect();
    let (mut mean, mut m2, mut n) = (0.0, 0.0, 0usize);
    for (bm, bm2, bn) in blocks {
        let total = (n + bn) as f64;
        let delta = bm - mean;
        mean += delta * bn as f64 / total;
        m2 += bm2 + delta * delta * n as f64 * bn as f64 / total;
        n += bn;
    }
    let nf = n as f64;
    let var = m2 / (nf - 1.0).max(1.0);
    Ok(McResult {
        price: mean,
        stderr: (var / nf).sqrt(),
        n_paths: 2 * n,
    })
}
