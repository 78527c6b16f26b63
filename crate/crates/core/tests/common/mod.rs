//! Brute-force 2-D assembly on the full tensor quadrature grid, without
//! using the Kronecker structure.
#![allow(dead_code)]

use iga_core::fem1d::{default_quadrature_order, JUMP_OUTER_ORDER};
use iga_core::models::JumpSpec;
use iga_core::quadrature::QuadratureRule;
use iga_core::splines::KnotVector;
use nalgebra::DMatrix;

/// A 2-D quadrature point with the full (non-separable) basis data.
pub struct Point {
    pub s: f64,
    pub v: f64,
    pub w: f64,
    pub val: Vec<f64>,
    pub ds: Vec<f64>,
    pub dv: Vec<f64>,
}

pub fn tensor_points(ks: &KnotVector, kv: &KnotVector, qs: usize, qv: usize) -> Vec<Point> {
    let (rs, rv) = (
        QuadratureRule::gauss_legendre(qs),
        QuadratureRule::gauss_legendre(qv),
    );
    let (n1, n2) = (ks.num_basis(), kv.num_basis());
    let mut out = Vec::new();
    for (sa, sb) in ks.spans() {
        for (va, vb) in kv.spans() {
            for (s, ws) in rs.mapped(sa, sb) {
                for (v, wv) in rv.mapped(va, vb) {
                    let (bs, bds) = (ks.eval_basis(s).unwrap(), ks.eval_derivs(s).unwrap());
                    let (bv, bdv) = (kv.eval_basis(v).unwrap(), kv.eval_derivs(v).unwrap());
                    let mut p = Point {
                        s,
                        v,
                        w: ws * wv,
                        val: vec![0.0; n1 * n2],
                        ds: vec![0.0; n1 * n2],
                        dv: vec![0.0; n1 * n2],
                    };
                    for i2 in 0..n2 {
                        for i1 in 0..n1 {
                            let i = i1 + n1 * i2;
                            p.val[i] = bs[i1] * bv[i2];
                            p.ds[i] = bds[i1] * bv[i2];
                            p.dv[i] = bs[i1] * bdv[i2];
                        }
                    }
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Same per-direction orders as the library: `max(p+1, 3)` in `s`, one more in `v`.
pub fn orders(ks: &KnotVector, kv: &KnotVector) -> (usize, usize) {
    (
        default_quadrature_order(ks.degree()),
        default_quadrature_order(kv.degree()) + 1,
    )
}

pub fn brute_mass(ks: &KnotVector, kv: &KnotVector) -> DMatrix<f64> {
    let (qs, qv) = orders(ks, kv);
    let n = ks.num_basis() * kv.num_basis();
    let mut m = DMatrix::zeros(n, n);
    for p in tensor_points(ks, kv, qs, qv) {
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += p.w * p.val[i] * p.val[j];
            }
        }
    }
    m
}

/// `J'_ij = ∫∫ ψ_i(s, v) ∫ ψ_j(x, v) φ(x/s)/s dx ds dv`, the inner integral in
/// log-moneyness on fine panels.
pub fn brute_jump_prime(ks: &KnotVector, kv: &KnotVector, jumps: &JumpSpec) -> DMatrix<f64> {
    let (qs, qv) = orders(ks, kv);
    let n1 = ks.num_basis();
    let n = n1 * kv.num_basis();
    let fine = QuadratureRule::gauss_legendre(20);
    let norm = 1.0 / (jumps.sigma_j * (2.0 * std::f64::consts::PI).sqrt());
    let mut jp = DMatrix::zeros(n, n);
    for p in tensor_points(ks, kv, qs.max(JUMP_OUTER_ORDER), qv) {
        let bv = kv.eval_basis(p.v).unwrap();
        let mut inner = vec![0.0; n1];
        for (xa, xb) in ks.spans() {
            let za = if xa > 0.0 {
                (xa / p.s).ln()
            } else {
                jumps.mu_j - 12.0 * jumps.sigma_j
            };
            let zb = (xb / p.s).ln();
            let pieces = 200;
            let h = (zb - za) / pieces as f64;
            for k in 0..pieces {
                let lo = za + h * k as f64;
                for (z, w) in fine.mapped(lo, lo + h) {
                    let x = (p.s * z.exp()).clamp(xa, xb);
                    let dens = norm * (-0.5 * ((z - jumps.mu_j) / jumps.sigma_j).powi(2)).exp();
                    for (g, b) in inner.iter_mut().zip(ks.eval_basis(x).unwrap()) {
                        *g += w * dens * b;
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                jp[(i, j)] += p.w * p.val[i] * inner[j % n1] * bv[j / n1];
            }
        }
    }
    jp
}
