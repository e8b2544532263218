mod common;

use common::{rel_err, rng};
use hybridflow::bijectors::bernstein::constrain;
use hybridflow::bijectors::{BernsteinParams, Bijector, RqsParams, TriangularLambda};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_bernstein(r: &mut ChaCha8Rng, order: usize) -> BernsteinParams {
    let raw: Vec<f64> = (0..order + 2).map(|_| r.random_range(-3.0..3.0)).collect();
    let lo = r.random_range(-4.0..0.0);
    let hi = lo + r.random_range(0.5..6.0);
    BernsteinParams::from_raw(&raw, lo, hi).unwrap()
}

fn random_rqs(r: &mut ChaCha8Rng, bins: usize) -> RqsParams {
    let raw: Vec<f64> = (0..3 * bins + 1)
        .map(|_| r.random_range(-2.0..2.0))
        .collect();
    RqsParams::from_raw(&raw, bins, 4.0).unwrap()
}

/// Test points inside the domain, near its edges, and in both tails.
fn probe_points(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let mut pts = vec![
        lo,
        hi,
        lo - 3.0 * span,
        hi + 3.0 * span,
        lo + 1e-9,
        hi - 1e-9,
    ];
    pts.extend((0..6).map(|_| r.random_range(lo - 0.5 * span..hi + 0.5 * span)));
    pts
}

fn fd_derivative(f: impl Fn(f64) -> f64, y: f64) -> f64 {
    let h = 1e-6 * (1.0 + y.abs());
    (f(y + h) - f(y - h)) / (2.0 * h)
}

#[test]
fn bernstein_identity_examples() {
    let p = BernsteinParams::new(vec![0.0, 1.0], 0.0, 1.0).unwrap();
    for y in [0.0, 0.25, 0.5, 1.0, -2.0, 3.0] {
        assert!((p.forward(y) - y).abs() < 1e-15);
        assert!(p.log_det(y).unwrap().abs() < 1e-15);
    }
    assert!((p.inverse(0.25).unwrap() - 0.25).abs() < 1e-12);
    // below ϑ_0 the inverse is the linear continuation
    assert!((p.inverse(-1.5).unwrap() + 1.5).abs() < 1e-12);

    let wide = BernsteinParams::new(vec![0.0, 1.0], 0.0, 2.0).unwrap();
    for y in [0.3, 1.0, 1.7] {
        assert!((wide.log_det(y).unwrap() - 0.5f64.ln()).abs() < 1e-14);
    }
}

#[test]
fn bernstein_roundtrip_and_log_det_across_orders() {
    let mut r = rng(10);
    for order in [5, 50, 300] {
        for _ in 0..40 {
            let p = random_bernstein(&mut r, order);
            let (lo, hi) = p.map().domain();
            for y in probe_points(&mut r, lo, hi) {
                let z = p.forward(y);
                let back = p.inverse(z).unwrap();
                assert!((back - y).abs() < 1e-6, "M={order} y={y} back={back}");
                let fd = if (y - lo).abs() < 1e-8 {
                    // the second derivative jumps at the domain edges; difference
                    // on the linear side there
                    (p.forward(y) - p.forward(y - 1e-4)) / 1e-4
                } else if (y - hi).abs() < 1e-8 {
                    (p.forward(y + 1e-4) - p.forward(y)) / 1e-4
                } else {
                    fd_derivative(|v| p.forward(v), y)
                };
                let ad = p.log_det(y).unwrap().exp();
                assert!(
                    rel_err(ad, fd) < 1e-4,
                    "M={order} y={y} on [{lo}, {hi}]: {ad} vs {fd}"
                );
            }
        }
    }
}

#[test]
fn bernstein_inverse_hits_target_value() {
    let mut r = rng(11);
    let p = random_bernstein(&mut r, 50);
    for z in [-7.0, -3.0, -0.5, 0.0, 1.2, 3.0, 9.0] {
        let y = p.inverse(z).unwrap();
        assert!((p.forward(y) - z).abs() < 1e-9);
    }
}

#[test]
fn rqs_examples() {
    let p = RqsParams::identity(8, 4.0).unwrap();
    assert!((p.forward(0.3) - 0.3).abs() < 1e-12);
    assert!(p.log_det(0.3).abs() < 1e-12);
    let mut r = rng(12);
    let q = random_rqs(&mut r, 8);
    assert_eq!(q.forward(9.0), 9.0);
    assert_eq!(q.log_det(-9.0), 0.0);
}

#[test]
fn rqs_roundtrip_and_log_det() {
    let mut r = rng(13);
    for bins in [8, 32] {
        for _ in 0..100 {
            let p = random_rqs(&mut r, bins);
            for y in probe_points(&mut r, -4.0, 4.0) {
                let back = p.inverse(p.forward(y));
                assert!((back - y).abs() < 1e-8, "K={bins} y={y} back={back}");
                // the spline is only C1 at the interval ends
                if (y.abs() - 4.0).abs() > 1e-4 {
                    let fd = fd_derivative(|v| p.forward(v), y);
                    assert!(rel_err(p.log_det(y).exp(), fd) < 1e-5, "K={bins} y={y}");
                }
            }
        }
    }
}

#[test]
fn strict_monotonicity_on_random_pairs() {
    let mut r = rng(14);
    let b = random_bernstein(&mut r, 50);
    let s = random_rqs(&mut r, 32);
    for _ in 0..1000 {
        let a: f64 = r.random_range(-8.0..8.0);
        let c = a + r.random_range(1e-6..4.0);
        assert!(b.forward(a) < b.forward(c));
        assert!(s.forward(a) < s.forward(c));
    }
}

#[test]
fn three_stage_chain() {
    let mut r = rng(15);
    let marg = Bijector::Bernstein(vec![
        random_bernstein(&mut r, 20),
        random_bernstein(&mut r, 20),
    ]);
    let shift = Bijector::Shift(vec![0.4, -1.1]);
    let lam = Bijector::Triangular(TriangularLambda::from_lower(2, vec![-0.7]).unwrap());
    let chain = Bijector::chain(vec![marg.clone(), shift.clone(), lam.clone()]);
    for _ in 0..50 {
        let y = vec![r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];
        let (z, ld) = chain.forward_and_log_det(&y).unwrap();
        let sum = marg.log_det(&y).unwrap()
            + shift.log_det(&marg.forward(&y).unwrap()).unwrap()
            + lam
                .log_det(&shift.forward(&marg.forward(&y).unwrap()).unwrap())
                .unwrap();
        assert!((ld - sum).abs() < 1e-12);
        let back = chain.inverse(&z).unwrap();
        for k in 0..2 {
            assert!((back[k] - y[k]).abs() < 1e-6);
        }
    }
}

#[test]
fn triangular_combine_example() {
    let lam = TriangularLambda::from_lower(2, vec![0.5]).unwrap();
    assert_eq!(lam.combine(&[1.0, 2.0]).unwrap(), vec![1.0, 2.5]);
    assert_eq!(lam.solve(&[1.0, 2.5]).unwrap(), vec![1.0, 2.0]);
}

proptest! {
    #[test]
    fn constrain_is_increasing_and_covers(raw in prop::collection::vec(-50.0f64..50.0, 3..40)) {
        let theta = constrain(&raw).unwrap();
        prop_assert_eq!(theta.len(), raw.len() - 1);
        prop_assert!(theta[0] <= -3.0);
        prop_assert!(*theta.last().unwrap() >= 3.0);
        for k in 1..theta.len() {
            prop_assert!(theta[k] > theta[k - 1]);
        }
    }

    #[test]
    fn bernstein_roundtrip_prop(
        raw in prop::collection::vec(-4.0f64..4.0, 7..20),
        y in -20.0f64..20.0,
    ) {
        let p = BernsteinParams::from_raw(&raw, -2.0, 2.0).unwrap();
        let back = p.inverse(p.forward(y)).unwrap();
        prop_assert!((back - y).abs() < 1e-6);
    }

    #[test]
    fn rqs_roundtrip_prop(
        raw in prop::collection::vec(-3.0f64..3.0, 25),
        y in -10.0f64..10.0,
    ) {
        let p = RqsParams::from_raw(&raw, 8, 4.0).unwrap();
        prop_assert!((p.inverse(p.forward(y)) - y).abs() < 1e-8);
    }
}
