use proptest::prelude::*;
use riskswitch::market::{
    validate, AffineJump, JumpMeasure, JumpSource, MarketSpec, PortfolioSet, RegimeCoefficients, RegimeSpace,
};
use riskswitch::semi_markov::RegimeChain;

fn two_asset_market(sigma: [[f64; 3]; 2], delta: f64) -> MarketSpec {
    let coef = RegimeCoefficients {
        r: 0.05.into(),
        mu: vec![0.1.into(), 0.2.into()],
        sigma: sigma.iter().map(|row| row.iter().map(|v| (*v).into()).collect()).collect(),
    };
    MarketSpec::new(
        2,
        3,
        1.0,
        RegimeSpace::new(vec![1]),
        vec![coef],
        vec![JumpSource {
            measure: JumpMeasure::uniform(-0.3, 0.5, 2.0),
            eta: vec![AffineJump::IDENTITY, AffineJump { scale: 0.5, shift: 0.1 }],
        }],
        PortfolioSet::boxed(2, -4.0, 4.0, delta),
    )
    .unwrap()
}

#[test]
fn single_asset_jump_bound_is_the_closed_interval() {
    // 1 + u z >= δ at z = ±0.4 gives |u| <= (1 - δ) / 0.4
    let spec = MarketSpec::worked_example(1.0, -0.4, 0.4);
    let (lo, hi) = spec.admissible_set().interval();
    let edge = (1.0 - 1e-3) / 0.4;
    assert!((hi - edge).abs() < 1e-12 && (lo + edge).abs() < 1e-12, "[{lo}, {hi}]");
    assert!(spec.admissible(&[edge - 1e-9]));
    assert!(!spec.admissible(&[edge + 1e-6]));
}

#[test]
fn box_binds_when_jumps_are_small() {
    let spec = MarketSpec::worked_example(1.0, -0.1, 0.1);
    assert_eq!(spec.admissible_set().interval(), (-5.0, 5.0));
}

#[test]
fn worked_example_passes_validation() {
    let spec = MarketSpec::worked_example(1.0, -0.4, 0.4);
    let report = validate(&spec, &[RegimeChain::worked_example()], 1.0);
    assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
}

#[test]
fn degenerate_volatility_fails_ellipticity() {
    let spec = two_asset_market([[0.2, 0.0, 0.0], [0.4, 0.0, 0.0]], 1e-3);
    let report = validate(&spec, &[RegimeChain::frozen()], 1.0);
    assert!(!report.passed());
}

#[test]
fn mismatched_coefficients_are_rejected() {
    let err = MarketSpec::new(
        1,
        1,
        1.0,
        RegimeSpace::new(vec![2]),
        vec![RegimeCoefficients::scalar(0.1, 0.2, 0.0)],
        vec![],
        PortfolioSet::default(),
    );
    assert!(err.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn membership_grows_as_delta_shrinks(u0 in -4.0f64..4.0, u1 in -4.0f64..4.0, d1 in 1e-4f64..0.9, gap in 0.0f64..0.09) {
        let sigma = [[0.2, 0.1, 0.0], [0.0, 0.3, 0.1]];
        let tight = two_asset_market(sigma, d1 + gap);
        let loose = two_asset_market(sigma, d1);
        if tight.admissible(&[u0, u1]) {
            prop_assert!(loose.admissible(&[u0, u1]));
        }
    }

    #[test]
    fn diffusion_matrix_is_symmetric_and_nonnegative(
        s in proptest::array::uniform6(-1.0f64..1.0),
        xi in proptest::array::uniform2(-3.0f64..3.0),
    ) {
        let spec = two_asset_market([[s[0], s[1], s[2]], [s[3], s[4], s[5]]], 1e-3);
        let a = spec.diffusion_matrix(0.0, 0);
        prop_assert!((a[(0, 1)] - a[(1, 0)]).abs() < 1e-15);
        let quad = xi[0] * xi[0] * a[(0, 0)] + 2.0 * xi[0] * xi[1] * a[(0, 1)] + xi[1] * xi[1] * a[(1, 1)];
        // ξ* a ξ = |σ* ξ|²
        let direct: f64 = (0..3).map(|k| (xi[0] * s[k] + xi[1] * s[3 + k]).powi(2)).sum();
        prop_assert!(quad >= -1e-14);
        prop_assert!((quad - direct).abs() < 1e-12);
    }
}
