use approx::assert_abs_diff_eq;
use iga_core::splines::{KnotVector, NurbsBasis1D};
use proptest::prelude::*;

/// Textbook recursive Cox–de Boor on the half-open convention, with the right
/// end of the domain assigned to the last nonempty span.
fn naive_bspline(knots: &[f64], p: usize, i: usize, x: f64) -> f64 {
    let last = knots[knots.len() - 1];
    if p == 0 {
        let (a, b) = (knots[i], knots[i + 1]);
        if x >= a && x < b {
            return 1.0;
        }
        // closed right end on the last nonempty span
        if x == last && b == last && a < b {
            return 1.0;
        }
        return 0.0;
    }
    let mut out = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 > 0.0 {
        out += (x - knots[i]) / d1 * naive_bspline(knots, p - 1, i, x);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 > 0.0 {
        out += (knots[i + p + 1] - x) / d2 * naive_bspline(knots, p - 1, i + 1, x);
    }
    out
}

fn naive_nurbs(knots: &[f64], p: usize, w: &[f64], x: f64) -> Vec<f64> {
    let n = w.len();
    let raw: Vec<f64> = (0..n)
        .map(|i| w[i] * naive_bspline(knots, p, i, x))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

#[test]
fn uniform_quadratic_matches_piecewise_polynomials() {
    // the middle function of the uniform quadratic basis on [0, 3]
    let kv = KnotVector::new(vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 3.0, 3.0], 2).unwrap();
    let exact = |x: f64| -> (f64, f64) {
        if x < 1.0 {
            (0.5 * x * x, x)
        } else if x < 2.0 {
            (0.5 * (-2.0 * x * x + 6.0 * x - 3.0), -2.0 * x + 3.0)
        } else {
            (0.5 * (3.0 - x).powi(2), x - 3.0)
        }
    };
    for k in 0..=300 {
        let x = 3.0 * k as f64 / 300.0;
        let v = kv.eval_basis(x).unwrap();
        let d = kv.eval_derivs(x).unwrap();
        let (ev, ed) = exact(x);
        assert_abs_diff_eq!(v[2], ev, epsilon = 1e-14);
        assert_abs_diff_eq!(d[2], ed, epsilon = 1e-13);
    }
}

#[test]
fn open_cubic_end_functions_are_bernstein_on_first_span() {
    // on [0, 1] with knots 0,0,0,0,1,2,... the first function is (1 - x)^3
    let kv = KnotVector::open_uniform(3, 0.0, 6.0, 6).unwrap();
    for k in 0..=50 {
        let x = k as f64 / 50.0;
        let v = kv.eval_basis(x).unwrap();
        assert_abs_diff_eq!(v[0], (1.0 - x).powi(3), epsilon = 1e-14);
    }
}

#[test]
fn matches_textbook_recursion_on_repeated_knots() {
    let knots = vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 3.0, 4.0, 5.0, 6.0, 6.0, 6.0];
    let kv = KnotVector::new(knots.clone(), 2).unwrap();
    let w = vec![0.01, 0.81, 0.86, 0.14, 0.58, 0.54, 0.21, 0.83, 0.78];
    let basis = NurbsBasis1D::new(kv, w.clone()).unwrap();
    for k in 0..=600 {
        let x = 6.0 * k as f64 / 600.0;
        let (v, _) = basis.eval(x).unwrap();
        let expect = naive_nurbs(&knots, 2, &w, x);
        for (a, b) in v.iter().zip(&expect) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
    }
}

/// Open knot vector on `[0, 1]` from sorted interior breaks and multiplicities.
fn build_knots(p: usize, interior: &[(f64, usize)]) -> Vec<f64> {
    let mut knots = vec![0.0; p + 1];
    for &(x, m) in interior {
        knots.extend(std::iter::repeat_n(x, m));
    }
    knots.extend(std::iter::repeat_n(1.0, p + 1));
    knots
}

fn arb_basis() -> impl Strategy<Value = (Vec<f64>, usize, Vec<f64>)> {
    (1usize..=4)
        .prop_flat_map(|p| {
            (
                Just(p),
                prop::collection::vec((0.02f64..0.98, 1usize..=p), 0..6),
            )
        })
        .prop_flat_map(|(p, mut interior)| {
            interior.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            interior.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-3);
            let knots = build_knots(p, &interior);
            let n = knots.len() - p - 1;
            (Just(knots), Just(p), prop::collection::vec(0.05f64..2.0, n))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partition_of_unity((knots, p, w) in arb_basis(), x in 0.0f64..=1.0) {
        let basis = NurbsBasis1D::new(KnotVector::new(knots, p).unwrap(), w).unwrap();
        let (v, _) = basis.eval(x).unwrap();
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(v.iter().all(|&r| r >= -1e-15));
    }

    #[test]
    fn derivative_matches_central_difference((knots, p, w) in arb_basis(), x in 0.01f64..0.99) {
        let h = 1e-6;
        let kv = KnotVector::new(knots, p).unwrap();
        // skip points whose stencil straddles a knot
        prop_assume!(kv.breakpoints().iter().all(|b| (b - x).abs() > 2.0 * h));
        let basis = NurbsBasis1D::new(kv, w).unwrap();
        let (_, d) = basis.eval(x).unwrap();
        let (vp, _) = basis.eval(x + h).unwrap();
        let (vm, _) = basis.eval(x - h).unwrap();
        for i in 0..d.len() {
            let fd = (vp[i] - vm[i]) / (2.0 * h);
            prop_assert!((fd - d[i]).abs() <= 1e-6 * (1.0 + d[i].abs()), "i={} fd={} d={}", i, fd, d[i]);
        }
    }

    #[test]
    fn support_is_exact((knots, p, w) in arb_basis(), x in 0.0f64..=1.0) {
        let kv = KnotVector::new(knots.clone(), p).unwrap();
        let basis = NurbsBasis1D::new(kv.clone(), w.clone()).unwrap();
        let (v, _) = basis.eval(x).unwrap();
        for (i, &r) in v.iter().enumerate() {
            let (a, b) = kv.support(i);
            if x < a || x > b {
                prop_assert_eq!(r, 0.0);
            } else if x > a && x < b {
                prop_assert!(r > 0.0);
            }
        }
        let expect = naive_nurbs(&knots, p, &w, x);
        for (a, b) in v.iter().zip(&expect) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
