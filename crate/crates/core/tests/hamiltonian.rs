use proptest::prelude::*;
use riskswitch::hamiltonian::{g_theta, minimize, HamiltonianTable, Objective};
use riskswitch::market::MarketSpec;

fn spec(theta: f64) -> MarketSpec {
    MarketSpec::worked_example(theta, -0.4, 0.4)
}

#[test]
fn minimum_beats_a_dense_scan() {
    let s = spec(1.0);
    let (lo, hi) = s.admissible_set().interval();
    for x in 0..3 {
        let h = minimize(&s, 0.0, x).unwrap();
        let scan = (0..=20_000)
            .map(|k| lo + (hi - lo) * k as f64 / 20_000.0)
            .map(|u| g_theta(&s, 0.0, x, &[u]).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(h.value <= scan + 1e-12, "regime {x}: {} vs {scan}", h.value);
        assert!(scan - h.value < 1e-6);
    }
}

#[test]
fn table_is_flat_in_time_for_constant_coefficients() {
    let s = spec(2.0);
    let table = HamiltonianTable::build(&s, 1.0, 8).unwrap();
    assert!(table.is_homogeneous());
    for x in 0..3 {
        let h0 = minimize(&s, 0.0, x).unwrap().value;
        assert_eq!(table.h(0.3, x), h0);
        assert!((table.integral(0.2, 0.7, x) - 0.5 * h0).abs() < 1e-14);
    }
}

#[test]
fn inadmissible_points_are_rejected() {
    assert!(g_theta(&spec(1.0), 0.0, 0, &[3.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn objective_is_convex(theta in 0.2f64..6.0, x in 0usize..3, u1 in -2.4f64..2.4, u2 in -2.4f64..2.4, s in 0.0f64..1.0) {
        let obj = Objective::new(&spec(theta), 0.0, x);
        let mid = obj.value(&[s * u1 + (1.0 - s) * u2]).unwrap();
        let chord = s * obj.value(&[u1]).unwrap() + (1.0 - s) * obj.value(&[u2]).unwrap();
        prop_assert!(mid <= chord + 1e-12, "{mid} > {chord}");
    }

    #[test]
    fn minimum_lies_between_the_bounds(theta in 0.2f64..6.0, x in 0usize..3) {
        let s = spec(theta);
        let h = minimize(&s, 0.0, x).unwrap();
        // u = 0 is admissible and gives -θ r / 2
        prop_assert!(h.value <= -theta / 2.0 * s.rate(0.0, x) + 1e-15);
        prop_assert!(h.value >= Objective::new(&s, 0.0, x).lower_bound() - 1e-12);
        prop_assert!(s.admissible(&h.minimizer));
    }

    #[test]
    fn gradient_matches_central_differences(theta in 0.2f64..6.0, x in 0usize..3, u in -2.0f64..2.0) {
        let obj = Objective::new(&spec(theta), 0.0, x);
        let e = 1e-5;
        let fd = (obj.value_unchecked(&[u + e]) - obj.value_unchecked(&[u - e])) / (2.0 * e);
        prop_assert!((obj.gradient(&[u])[0] - fd).abs() < 1e-6);
        let fd2 = (obj.gradient(&[u + e])[0] - obj.gradient(&[u - e])[0]) / (2.0 * e);
        prop_assert!((obj.hessian(&[u])[(0, 0)] - fd2).abs() < 1e-5 * (1.0 + fd2.abs()));
    }
}
