//! Which component jumps next, and when.
//!
//! With independent components in states `x` with ages `y`, the density of
//! "component `l` is the first to jump, after a further time `s`" is
//!
//! ```text
//! λ^l(y^l + s) · Π_m (1 - F^m(s + y^m | x^m)) / (1 - F^m(y^m | x^m))
//! ```
//!
//! Its total mass is `P(ℓ = l)`, and normalising it by that mass gives the
//! conditional density `f_{τ^l | l}`. The infinite upper limit is cut where
//! the joint survival factor drops below [`SURVIVAL_CUTOFF`].

use super::{ChainState, RegimeChain};
use crate::error::{invalid, Error, Result};
use crate::quadrature::adaptive_simpson;

pub const SURVIVAL_CUTOFF: f64 = 1e-12;
const REL_TOL: f64 = 1e-12;
const ABS_TOL: f64 = 1e-15;
const HORIZON_BUDGET: f64 = 1e6;

/// Smallest doubling `s` at which the joint survival of all components is
/// below [`SURVIVAL_CUTOFF`].
pub fn race_horizon(chains: &[RegimeChain], state: &ChainState) -> Result<f64> {
    state.validate(chains)?;
    if chains.iter().all(RegimeChain::is_frozen) {
        return Err(Error::NoTransitions);
    }
    let target = -SURVIVAL_CUTOFF.ln();
    let mut s = 1.0;
    loop {
        let acc: f64 = chains
            .iter()
            .enumerate()
            .map(|(m, c)| c.hazard_increment(state.x[m], state.y[m], s))
            .sum();
        if acc >= target {
            return Ok(s);
        }
        s *= 2.0;
        if s > HORIZON_BUDGET {
            return Err(Error::UnboundedHazard {
                state: state.x[0],
                target,
                age_budget: HORIZON_BUDGET,
            });
        }
    }
}

/// Joint density that component `l` jumps first, at residual time `s`.
pub fn jump_race_density(chains: &[RegimeChain], state: &ChainState, l: usize, s: f64) -> f64 {
    let exponent: f64 = chains
        .iter()
        .enumerate()
        .map(|(m, c)| c.hazard_increment(state.x[m], state.y[m], s))
        .sum();
    chains[l].hazard(state.x[l], state.y[l] + s) * (-exponent).exp()
}

/// Raw race masses for every component plus the truncation horizon.
#[derive(Debug, Clone)]
pub struct NextJump {
    /// `P(ℓ = l)`, renormalised to sum to one.
    pub probs: Vec<f64>,
    /// Unnormalised integrals of [`jump_race_density`].
    pub masses: Vec<f64>,
    pub horizon: f64,
}

impl NextJump {
    pub fn compute(chains: &[RegimeChain], state: &ChainState) -> Result<Self> {
        let horizon = race_horizon(chains, state)?;
        let masses = (0..chains.len())
            .map(|l| {
                if chains[l].is_frozen() {
                    Ok(0.0)
                } else {
                    adaptive_simpson(|s| jump_race_density(chains, state, l, s), 0.0, horizon, REL_TOL, ABS_TOL)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::Quadrature { a: 0.0, b: horizon });
        }
        let probs = masses.iter().map(|m| m / total).collect();
        Ok(Self {
            probs,
            masses,
            horizon,
        })
    }
}

/// `P_{t,x,y}(ℓ(t) = l)` for every component `l`.
pub fn next_component_prob(chains: &[RegimeChain], state: &ChainState) -> Result<Vec<f64>> {
    Ok(NextJump::compute(chains, state)?.probs)
}

fn check_component(chains: &[RegimeChain], l: usize) -> Result<()> {
    if l >= chains.len() {
        return Err(Error::InvalidComponent {
            index: l,
            components: chains.len(),
        });
    }
    if chains[l].is_frozen() {
        return Err(invalid("component", format!("component {l} never jumps")));
    }
    Ok(())
}

/// `F_{τ^l | l}(r | x, y)`: CDF of the residual time given that `l` jumps first.
pub fn conditional_jump_cdf(chains: &[RegimeChain], state: &ChainState, l: usize, r: f64) -> Result<f64> {
    check_component(chains, l)?;
    if !(r >= 0.0) {
        return Err(Error::NegativeAge(r));
    }
    let next = NextJump::compute(chains, state)?;
    let upper = r.min(next.horizon);
    let part = adaptive_simpson(|s| jump_race_density(chains, state, l, s), 0.0, upper, REL_TOL, ABS_TOL)?;
    Ok((part / next.masses[l]).min(1.0))
}

/// `f_{τ^l | l}(r | x, y)`.
pub fn conditional_jump_pdf(chains: &[RegimeChain], state: &ChainState, l: usize, r: f64) -> Result<f64> {
    check_component(chains, l)?;
    if !(r >= 0.0) {
        return Err(Error::NegativeAge(r));
    }
    let next = NextJump::compute(chains, state)?;
    Ok(jump_race_density(chains, state, l, r) / next.masses[l])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_examples() -> Vec<RegimeChain> {
        vec![RegimeChain::worked_example(), RegimeChain::worked_example()]
    }

    #[test]
    fn single_component_takes_all_mass() {
        let c = vec![RegimeChain::worked_example()];
        let p = next_component_prob(&c, &ChainState::single(1, 0.3)).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_components_split_evenly() {
        let s = ChainState::new(vec![2, 2], vec![0.7, 0.7]);
        let p = next_component_prob(&two_examples(), &s).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn conditional_cdf_reduces_to_residual_cdf() {
        let chain = RegimeChain::worked_example();
        let c = vec![chain.clone()];
        let s = ChainState::single(0, 1.0);
        assert_eq!(conditional_jump_cdf(&c, &s, 0, 0.0).unwrap(), 0.0);
        for &r in &[0.25, 1.0, 3.0] {
            let a = conditional_jump_cdf(&c, &s, 0, r).unwrap();
            let b = chain.conditional_residual_cdf(0, 1.0, r).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn conditional_pdf_integrates_to_one() {
        let c = two_examples();
        let s = ChainState::new(vec![0, 1], vec![0.0, 1.0]);
        let next = NextJump::compute(&c, &s).unwrap();
        for l in 0..2 {
            let mass = adaptive_simpson(
                |r| conditional_jump_pdf(&c, &s, l, r).unwrap(),
                0.0,
                next.horizon,
                1e-10,
                1e-14,
            )
            .unwrap();
            assert!((mass - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn frozen_components_never_win() {
        let c = vec![RegimeChain::frozen(), RegimeChain::worked_example()];
        let p = next_component_prob(&c, &ChainState::new(vec![0, 1], vec![0.0, 0.2])).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 1.0).abs() < 1e-12);
        let all = vec![RegimeChain::frozen()];
        assert!(matches!(
            next_component_prob(&all, &ChainState::single(0, 0.0)),
            Err(Error::NoTransitions)
        ));
    }
}
