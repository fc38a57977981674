//! The integral equation for `ψ(t, x, y) = E[exp ∫_t^T h_θ(s, X_s) ds]`.
//!
//! Steps are counted backwards from the horizon: `ψ^m ≈ ψ(T - mΔt)`, so
//! `ψ^0 ≡ 1` is the terminal condition.

mod general;
mod grid;
mod reduced;

pub use general::{contraction_factor, solve_general, GeneralOptions, GeneralSolution, MAX_SWEEPS, PICARD_TOL};
pub use grid::{Mode, PsiGrid};
pub use reduced::{solve_reduced, ReducedSolution};

use crate::error::{invalid, Error, Result};
use crate::hamiltonian::{minimize, HamiltonianTable};
use crate::market::{MarketSpec, RegimeSpace};
use crate::semi_markov::RegimeChain;

/// `M = ⌈T/Δt⌉` and the step `T/M` that lands exactly on `t = 0`.
pub fn step_count(horizon: f64, dt: f64) -> Result<(usize, f64)> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(invalid("horizon", "must be finite and nonnegative"));
    }
    if !(dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    if horizon == 0.0 {
        return Ok((0, dt));
    }
    let m = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
    Ok((m, horizon / m as f64))
}

/// Anything that evaluates `ψ(t, x, y)` with `x` a flat joint regime.
pub trait PsiField: Sync {
    fn horizon(&self) -> f64;
    fn regimes(&self) -> RegimeSpace;
    fn psi(&self, t: f64, x: usize, y: &[f64]) -> f64;
}

impl PsiField for PsiGrid {
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn regimes(&self) -> RegimeSpace {
        self.regimes.clone()
    }

    fn psi(&self, t: f64, x: usize, y: &[f64]) -> f64 {
        self.psi_at(t, x, y)
    }
}

impl PsiField for GeneralSolution {
    fn horizon(&self) -> f64 {
        self.grid.horizon
    }

    fn regimes(&self) -> RegimeSpace {
        self.grid.regimes.clone()
    }

    fn psi(&self, t: f64, x: usize, y: &[f64]) -> f64 {
        self.grid.psi_at(t, x, y)
    }
}

/// `φ̃ = ln v - (2/θ) ln ψ(0, x, y)`.
pub fn optimal_wealth(psi: &dyn PsiField, theta: f64, v: f64, x: usize, y: &[f64]) -> Result<f64> {
    if !(v > 0.0) {
        return Err(invalid("v", "initial wealth must be positive"));
    }
    if !(theta > 0.0) {
        return Err(invalid("theta", "risk aversion must be positive"));
    }
    Ok(v.ln() - 2.0 / theta * psi.psi(0.0, x, y).ln())
}

/// Residual of the first-order equation at `(t, x, y)`:
///
/// ```text
/// [ψ(t+ε, x, y+ε𝟙) - ψ(t, x, y)]/ε
///   + Σ_l Σ_{j≠x^l} λ^l_{x^l j}(y^l) [ψ(t, R^l_j x, R^l_0 y) - ψ(t, x, y)]
///   + h_θ(t, x) ψ(t, x, y)
/// ```
pub fn pde_residual(
    psi: &dyn PsiField,
    table: &HamiltonianTable,
    chains: &[RegimeChain],
    t: f64,
    x: &[usize],
    y: &[f64],
    eps: f64,
) -> Result<f64> {
    let regimes = RegimeSpace::of(chains);
    if x.len() != regimes.components() || y.len() != x.len() {
        return Err(Error::Dimension {
            what: "probe point".into(),
            expected: regimes.components(),
            got: x.len().min(y.len()),
        });
    }
    if !(eps > 0.0) || t < 0.0 || t + eps > psi.horizon() + 1e-12 || y.iter().any(|v| *v < 0.0) {
        return Err(Error::NearBoundary {
            t,
            y: y.to_vec(),
            eps,
        });
    }
    let xf = regimes.flatten(x);
    let here = psi.psi(t, xf, y);
    let ahead: Vec<f64> = y.iter().map(|v| v + eps).collect();
    let mut res = (psi.psi(t + eps, xf, &ahead) - here) / eps;
    for (l, chain) in chains.iter().enumerate() {
        let mut reset = y.to_vec();
        reset[l] = 0.0;
        for j in (0..chain.states()).filter(|j| *j != x[l]) {
            let rate = chain.rate(x[l], j, y[l])?;
            if rate != 0.0 {
                res += rate * (psi.psi(t, regimes.with_component(xf, l, j), &reset) - here);
            }
        }
    }
    Ok(res + table.h(t, xf) * here)
}

/// `u*(t, x)` on a time grid for one regime. Depends on the market only.
pub fn optimal_control_curve(spec: &MarketSpec, t_grid: &[f64], x: usize) -> Result<Vec<Vec<f64>>> {
    t_grid.iter().map(|&t| Ok(minimize(spec, t, x)?.minimizer)).collect()
}
