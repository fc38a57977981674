//! Age-dependent semi-Markov regime components.
//!
//! A [`RegimeChain`] is one component `(X^l, Y^l)`: a finite state space and
//! age-dependent transition rates `λ_ij(y)`. Holding times in state `i` have
//! CDF `F(y|i) = 1 - exp(-Λ_i(y))` with `Λ_i` the cumulative total hazard,
//! and the jump target is drawn from `p_ij(y) = λ_ij(y) / Σ_j λ_ij(y)`.

mod embedded;
mod race;
mod rates;
mod sampling;

pub use embedded::{embedded_matrix, EmbeddedMatrix};
pub use race::{
    conditional_jump_cdf, conditional_jump_pdf, jump_race_density, next_component_prob,
    race_horizon, NextJump,
};
pub use rates::{HazardShape, MonotoneCubic, RateModel, TabulatedRates};
pub use sampling::{simulate_chain, walk_chain, Antithetic, SegmentView};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Age at which unboundedness of the cumulative hazard is checked.
pub const HAZARD_CHECK_AGE: f64 = 1.0e4;
/// `Λ_i(HAZARD_CHECK_AGE)` must exceed this (survival below `e^-40`).
pub const HAZARD_CHECK_LEVEL: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeChain {
    states: usize,
    rates: RateModel,
}

impl RegimeChain {
    /// Build a chain, checking the structural invariants of the rate model.
    pub fn new(states: usize, rates: RateModel) -> Result<Self> {
        match &rates {
            RateModel::Frozen => {
                if states != 1 {
                    return Err(invalid("states", "a frozen chain has exactly one state"));
                }
            }
            RateModel::Constant(c) => {
                check_square("rates", c, states)?;
                check_rows(c, "rates")?;
            }
            RateModel::Scaled { shape, p } => {
                check_square("p", p, states)?;
                check_rows(p, "p")?;
                if let HazardShape::Constant { rate } = shape {
                    if !(*rate > 0.0) {
                        return Err(invalid("rate", "constant hazard must be positive"));
                    }
                }
            }
            RateModel::Tabulated(_) => {}
        }
        if states < 2 && !matches!(rates, RateModel::Frozen) {
            return Err(invalid("states", "a switching chain needs at least two states"));
        }
        Ok(Self { states, rates })
    }

    /// Single regime, never switches.
    pub fn frozen() -> Self {
        Self {
            states: 1,
            rates: RateModel::Frozen,
        }
    }

    /// Constant rates `λ_ij = c p_ij`.
    pub fn constant(rate: f64, p: Vec<Vec<f64>>) -> Result<Self> {
        let k = p.len();
        Self::new(
            k,
            RateModel::Scaled {
                shape: HazardShape::Constant { rate },
                p,
            },
        )
    }

    /// Three-regime chain of the worked example, with hazard `y / (1 + y)`
    /// so that holding times have density `y e^{-y}`.
    pub fn worked_example() -> Self {
        Self::new(
            3,
            RateModel::Scaled {
                shape: HazardShape::GammaTwo,
                p: worked_example_matrix(),
            },
        )
        .expect("valid preset")
    }

    /// The same chain with the literal hazard `y - ln(1 + y)`.
    pub fn worked_example_log_gap() -> Self {
        Self::new(
            3,
            RateModel::Scaled {
                shape: HazardShape::LogGap,
                p: worked_example_matrix(),
            },
        )
        .expect("valid preset")
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn rates(&self) -> &RateModel {
        &self.rates
    }

    pub fn is_frozen(&self) -> bool {
        matches!(self.rates, RateModel::Frozen)
    }

    /// Every rate multiplied by `factor`; jump probabilities are unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            states: self.states,
            rates: self.rates.scaled_by(factor),
        }
    }

    fn check(&self, i: usize, y: f64) -> Result<()> {
        if i >= self.states {
            return Err(Error::InvalidState {
                index: i,
                states: self.states,
            });
        }
        if !(y >= 0.0) {
            return Err(Error::NegativeAge(y));
        }
        Ok(())
    }

    /// `λ_ij(y)`.
    pub fn rate(&self, i: usize, j: usize, y: f64) -> Result<f64> {
        self.check(i, y)?;
        self.check(j, y)?;
        Ok(self.rates.rate(i, j, y))
    }

    /// `Σ_{j≠i} λ_ij(y)`.
    pub fn total_rate(&self, i: usize, y: f64) -> Result<f64> {
        self.check(i, y)?;
        Ok(self.rates.total(i, y))
    }

    /// `Λ_i(y) = ∫_0^y Σ_{j≠i} λ_ij(v) dv`.
    pub fn cumulative_hazard(&self, i: usize, y: f64) -> Result<f64> {
        self.check(i, y)?;
        Ok(self.rates.cumulative(i, y))
    }

    /// `F(y|i) = 1 - exp(-Λ_i(y))`.
    pub fn holding_cdf(&self, i: usize, y: f64) -> Result<f64> {
        Ok(-(-self.cumulative_hazard(i, y)?).exp_m1())
    }

    /// `f(y|i) = λ_i(y) exp(-Λ_i(y))`.
    pub fn holding_pdf(&self, i: usize, y: f64) -> Result<f64> {
        self.check(i, y)?;
        Ok(self.rates.total(i, y) * (-self.rates.cumulative(i, y)).exp())
    }

    /// CDF of the residual holding time after `y_elapsed` in state `i`:
    /// `(F(s + y) - F(y)) / (1 - F(y))`.
    pub fn conditional_residual_cdf(&self, i: usize, y_elapsed: f64, s: f64) -> Result<f64> {
        self.check(i, y_elapsed)?;
        if !(s >= 0.0) {
            return Err(Error::NegativeAge(s));
        }
        Ok(-(-self.hazard_increment(i, y_elapsed, s)).exp_m1())
    }

    /// `p_ij(y)`.
    pub fn transition_prob(&self, i: usize, j: usize, y: f64) -> Result<f64> {
        self.check(i, y)?;
        self.check(j, y)?;
        Ok(self.rates.jump_prob(i, j, y))
    }

    // Unchecked fast paths used inside solver loops.

    #[inline]
    pub(crate) fn hazard(&self, i: usize, y: f64) -> f64 {
        self.rates.total(i, y)
    }

    #[inline]
    pub(crate) fn lambda_cum(&self, i: usize, y: f64) -> f64 {
        self.rates.cumulative(i, y)
    }

    #[inline]
    pub(crate) fn p(&self, i: usize, j: usize, y: f64) -> f64 {
        self.rates.jump_prob(i, j, y)
    }

    /// `Λ_i(y + s) - Λ_i(y)`.
    #[inline]
    pub(crate) fn hazard_increment(&self, i: usize, y: f64, s: f64) -> f64 {
        match self.rates.constant_total(i) {
            Some(c) => c * s,
            None => self.rates.cumulative(i, y + s) - self.rates.cumulative(i, y),
        }
    }

    /// Diagnostics for the rate invariants: positive total hazard on a grid
    /// of positive ages, nondecreasing and unbounded cumulative hazard, rows
    /// of `p` summing to one.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.is_frozen() {
            return out;
        }
        let ages: Vec<f64> = (1..=200).map(|g| g as f64 * 0.05).collect();
        for i in 0..self.states {
            if let Some(y) = ages.iter().find(|&&y| !(self.rates.total(i, y) > 0.0)) {
                out.push(format!("state {i}: total hazard not positive at age {y}"));
            }
            let mut prev = 0.0;
            for &y in &ages {
                let c = self.rates.cumulative(i, y);
                if c < prev - 1e-12 {
                    out.push(format!("state {i}: cumulative hazard decreases at age {y}"));
                    break;
                }
                prev = c;
            }
            let tail = self.rates.cumulative(i, HAZARD_CHECK_AGE);
            if !(tail > HAZARD_CHECK_LEVEL) {
                out.push(format!(
                    "state {i}: cumulative hazard {tail:.3e} at age {HAZARD_CHECK_AGE:e} does not diverge"
                ));
            }
            for &y in &[0.0, 0.5, 2.0] {
                let s: f64 = (0..self.states).map(|j| self.rates.jump_prob(i, j, y)).sum();
                if (s - 1.0).abs() > 1e-9 {
                    out.push(format!("state {i}: jump probabilities sum to {s} at age {y}"));
                }
            }
        }
        out
    }
}

fn worked_example_matrix() -> Vec<Vec<f64>> {
    vec![
        vec![0.0, 2.0 / 3.0, 1.0 / 3.0],
        vec![0.5, 0.0, 0.5],
        vec![1.0 / 3.0, 2.0 / 3.0, 0.0],
    ]
}

fn check_square(name: &str, m: &[Vec<f64>], k: usize) -> Result<()> {
    if m.len() != k || m.iter().any(|r| r.len() != k) {
        return Err(invalid(name, format!("must be {k}x{k}")));
    }
    Ok(())
}

fn check_rows(m: &[Vec<f64>], name: &str) -> Result<()> {
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(invalid(name, format!("entry ({i},{j}) must be finite and nonnegative")));
            }
        }
        if rates::row_mass(row, i) <= 0.0 {
            return Err(invalid(name, format!("row {i} has no off-diagonal mass")));
        }
    }
    Ok(())
}

/// Joint state `(X_t, Y_t)` of all components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub x: Vec<usize>,
    pub y: Vec<f64>,
}

impl ChainState {
    pub fn new(x: Vec<usize>, y: Vec<f64>) -> Self {
        Self { x, y }
    }

    pub fn single(x: usize, y: f64) -> Self {
        Self { x: vec![x], y: vec![y] }
    }

    pub fn validate(&self, chains: &[RegimeChain]) -> Result<()> {
        if self.x.len() != chains.len() || self.y.len() != chains.len() {
            return Err(Error::Dimension {
                what: "chain state".into(),
                expected: chains.len(),
                got: self.x.len().max(self.y.len()),
            });
        }
        for ((c, &x), &y) in chains.iter().zip(&self.x).zip(&self.y) {
            c.check(x, y)?;
        }
        Ok(())
    }
}

/// Piece of a simulated path on which every component is constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSegment {
    pub t_start: f64,
    pub t_end: f64,
    /// States, and ages at `t_start`.
    pub state: ChainState,
    /// Component that jumps at `t_end`, if the segment ends with a jump.
    pub jumped_component: Option<usize>,
    pub jumped_to: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_hazard_integrates_linearly() {
        let c = RegimeChain::constant(1.5, vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!((c.cumulative_hazard(0, 2.0).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(c.cumulative_hazard(1, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn example_chain_hazard_matches_simpson_oracle() {
        let c = RegimeChain::worked_example();
        // independent Simpson integration of y/(1+y) on [0, 1]
        let n = 1000;
        let h = 1.0 / n as f64;
        let f = |y: f64| y / (1.0 + y);
        let mut s = f(0.0) + f(1.0);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let simpson = s * h / 3.0;
        let v = c.cumulative_hazard(0, 1.0).unwrap();
        assert!((v - simpson).abs() < 1e-12);
        assert!((v - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((v - 0.3069).abs() < 1e-4);
    }

    #[test]
    fn example_chain_cdf_and_density() {
        let c = RegimeChain::worked_example();
        let f1 = c.holding_cdf(1, 1.0).unwrap();
        assert!((f1 - (1.0 - 2.0 * (-1f64).exp())).abs() < 1e-15);
        assert!((f1 - 0.26424).abs() < 1e-5);
        assert_eq!(c.holding_cdf(2, 0.0).unwrap(), 0.0);
        for &y in &[0.1, 1.0, 3.7] {
            let pdf = c.holding_pdf(0, y).unwrap();
            assert!((pdf - y * (-y).exp()).abs() < 1e-15);
        }
        // density integrates to one out to where 1 - F < 1e-10
        let mut top = 1.0;
        while 1.0 - c.holding_cdf(0, top).unwrap() >= 1e-10 {
            top += 1.0;
        }
        let mass =
            crate::quadrature::adaptive_simpson(|y| c.holding_pdf(0, y).unwrap(), 0.0, top, 1e-12, 1e-15)
                .unwrap();
        assert!((mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn residual_cdf_closed_forms() {
        let c = RegimeChain::worked_example();
        assert_eq!(c.conditional_residual_cdf(0, 1.0, 0.0).unwrap(), 0.0);
        let v = c.conditional_residual_cdf(0, 1.0, 1.0).unwrap();
        assert!((v - (1.0 - 1.5 * (-1f64).exp())).abs() < 1e-14);
        assert!((v - 0.44818).abs() < 1e-5);
        let e = RegimeChain::constant(0.8, vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        for &y in &[0.0, 0.4, 7.0] {
            let v = e.conditional_residual_cdf(1, y, 0.5).unwrap();
            assert!((v - (1.0 - (-0.4f64).exp())).abs() < 1e-15);
        }
    }

    #[test]
    fn domain_errors() {
        let c = RegimeChain::worked_example();
        assert!(matches!(c.cumulative_hazard(3, 1.0), Err(Error::InvalidState { .. })));
        assert!(matches!(c.cumulative_hazard(0, -1.0), Err(Error::NegativeAge(_))));
        assert!(RegimeChain::new(2, RateModel::Frozen).is_err());
        assert!(RegimeChain::constant(1.0, vec![vec![0.0, 0.0], vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn preset_diagnostics_are_clean() {
        assert!(RegimeChain::worked_example().diagnostics().is_empty());
        assert!(RegimeChain::worked_example_log_gap().diagnostics().is_empty());
        assert!(RegimeChain::frozen().diagnostics().is_empty());
    }

    #[test]
    fn log_gap_variant_differs() {
        let a = RegimeChain::worked_example().cumulative_hazard(0, 2.0).unwrap();
        let b = RegimeChain::worked_example_log_gap().cumulative_hazard(0, 2.0).unwrap();
        assert!((a - b).abs() > 1e-3);
    }
}
