mod common;

use netequil::network::{bpr_conjugate, bpr_integral, bpr_time};
use netequil::{BprParams, Link, LinkCost};
use proptest::prelude::*;

fn link() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (0.05..5.0f64, 1.0..500.0f64, 0.01..1.0f64, 0.1..1.0f64)
}

#[test]
fn time_at_capacity_under_default_parameters() {
    let p = BprParams::default();
    for (t, cap) in [(1.0, 10.0), (0.37, 1800.0), (12.5, 0.5)] {
        let l = Link::road(0, 1, t, cap);
        assert_eq!(bpr_time(&p, &l, cap).unwrap(), 1.15 * t);
    }
}

#[test]
fn rejects_negative_flow_and_low_time() {
    let p = BprParams::default();
    let l = Link::road(0, 1, 1.0, 10.0);
    assert!(bpr_time(&p, &l, -1.0).is_err());
    assert!(bpr_integral(&p, &l, f64::NAN).is_err());
    assert!(bpr_conjugate(&p, &l, 0.5).is_err());
    assert_eq!(bpr_conjugate(&p, &l, 1.0).unwrap(), 0.0);
}

#[test]
fn uncapacitated_link_has_constant_time() {
    let c = LinkCost::resolve(&Link::road(0, 1, 2.0, f64::INFINITY), &BprParams::default());
    assert_eq!(c.time(1e9), 2.0);
    assert_eq!(c.integral(3.0), 6.0);
    assert_eq!(c.conjugate(2.0), 0.0);
    assert!(c.conjugate(2.0 + 1e-9).is_infinite());
}

proptest! {
    #[test]
    fn integral_matches_quadrature((t, cap, rho, mu) in link(), frac in 0.0..3.0f64) {
        let c = LinkCost { free_flow_time: t, capacity: cap, rho, mu };
        let f = frac * cap;
        // x = f u⁴ smooths the (x/f̄)^{1/μ} singularity at zero.
        let q = common::simpson(|u| c.time(f * u.powi(4)) * 4.0 * f * u.powi(3), 0.0, 1.0, 4000);
        let v = c.integral(f);
        prop_assert!((v - q).abs() <= 1e-10 * v.abs().max(1e-300), "{v} vs {q}");
    }

    #[test]
    fn fenchel_young_equality((t, cap, rho, mu) in link(), frac in 0.0..3.0f64) {
        let c = LinkCost { free_flow_time: t, capacity: cap, rho, mu };
        let f = frac * cap;
        let tau = c.time(f);
        let lhs = c.integral(f) + c.conjugate(tau);
        let rhs = f * tau;
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-300));
        // The inverse of τ is the conjugate's slope (well conditioned once loaded).
        if frac >= 0.5 {
            prop_assert!((c.conjugate_slope(tau) - f).abs() <= 1e-8 * f);
        }
    }

    #[test]
    fn fenchel_young_inequality((t, cap, rho, mu) in link(), frac in 0.0..3.0f64, bump in 0.0..2.0f64) {
        let c = LinkCost { free_flow_time: t, capacity: cap, rho, mu };
        let f = frac * cap;
        let s = t * (1.0 + bump);
        prop_assert!(c.integral(f) + c.conjugate(s) >= f * s * (1.0 - 1e-12));
    }

    #[test]
    fn time_is_nondecreasing((t, cap, rho, mu) in link(), a in 0.0..5.0f64, b in 0.0..5.0f64) {
        let c = LinkCost { free_flow_time: t, capacity: cap, rho, mu };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(c.time(lo * cap) <= c.time(hi * cap));
    }
}
