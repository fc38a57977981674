//! Implicit trapezoid scheme for a single driving chain.

use nalgebra::{DMatrix, DVector};

use super::{step_count, PsiField, PsiGrid};
use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianTable;
use crate::market::RegimeSpace;
use crate::parallel::map_indexed;
use crate::semi_markov::RegimeChain;

use super::grid::Mode;

/// Solution of the reduced scheme: `ψ^m(j, 0)` for every step plus what is
/// needed to evaluate `ψ^m(i, y)` at any age.
#[derive(Debug, Clone)]
pub struct ReducedSolution {
    chain: RegimeChain,
    dt: f64,
    horizon: f64,
    steps: usize,
    /// `H^m(i) = ∫_0^{T - mΔt} h_θ(s, i) ds`.
    big_h: Vec<Vec<f64>>,
    /// `ψ^m(j, 0)`.
    history: Vec<Vec<f64>>,
}

#[inline]
fn weight(l: usize, m: usize) -> f64 {
    if l == 0 || l == m {
        0.5
    } else {
        1.0
    }
}

/// March `m = 1..M`, solving the `k × k` system coupling `ψ^m(·, 0)` through
/// the `l = 0` quadrature node at each step.
pub fn solve_reduced(table: &HamiltonianTable, chain: &RegimeChain, horizon: f64, dt: f64) -> Result<ReducedSolution> {
    let (steps, dt) = step_count(horizon, dt)?;
    let k = chain.states();
    if table.regimes() != k {
        return Err(Error::Dimension {
            what: "hamiltonian regimes".into(),
            expected: k,
            got: table.regimes(),
        });
    }
    let t_of = |m: usize| if m == steps { 0.0 } else { horizon - m as f64 * dt };
    let big_h: Vec<Vec<f64>> = (0..=steps)
        .map(|m| (0..k).map(|i| table.integral(0.0, t_of(m), i)).collect())
        .collect();
    let age = |l: usize| l as f64 * dt;
    // q0[i][l] = λ_i(lΔt) e^{-Λ_i(lΔt)},  p0[i][l][j] = p_ij(lΔt)
    let q0: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..=steps).map(|l| chain.hazard(i, age(l)) * (-chain.lambda_cum(i, age(l))).exp()).collect())
        .collect();
    let p0: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|i| (0..=steps).map(|l| (0..k).map(|j| chain.p(i, j, age(l))).collect()).collect())
        .collect();

    let mut history = vec![vec![1.0; k]];
    for m in 1..=steps {
        let mut rhs = DVector::zeros(k);
        let mut mat = DMatrix::<f64>::identity(k, k);
        for i in 0..k {
            let h_m = big_h[m][i];
            let mut acc = 0.0;
            for l in 1..=m {
                let prev = &history[m - l];
                let inner: f64 = (0..k).filter(|j| *j != i).map(|j| p0[i][l][j] * prev[j]).sum();
                acc += weight(l, m) * q0[i][l] * (big_h[m - l][i] - h_m).exp() * inner;
            }
            rhs[i] = (-chain.lambda_cum(i, age(m))).exp() * (big_h[0][i] - h_m).exp() + dt * acc;
            let c = 0.5 * dt * q0[i][0];
            for j in (0..k).filter(|j| *j != i) {
                mat[(i, j)] -= c * p0[i][0][j];
            }
        }
        let dominant = (0..k).all(|i| (0..k).filter(|j| *j != i).map(|j| mat[(i, j)].abs()).sum::<f64>() < mat[(i, i)]);
        if !dominant {
            log::warn!("reduced scheme step {m}: system is not diagonally dominant, Δt may be too large");
        }
        let sol = mat.lu().solve(&rhs).ok_or(Error::SingularSystem { size: k, step: m })?;
        history.push(sol.iter().copied().collect());
    }
    Ok(ReducedSolution {
        chain: chain.clone(),
        dt,
        horizon,
        steps,
        big_h,
        history,
    })
}

impl ReducedSolution {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn states(&self) -> usize {
        self.chain.states()
    }

    /// `ψ^m(j, 0)` for every state.
    pub fn history(&self, m: usize) -> &[f64] {
        &self.history[m]
    }

    /// `ψ^m(i, y)` from the stored `y = 0` history.
    pub fn psi_step(&self, m: usize, i: usize, y: f64) -> f64 {
        if m == 0 {
            return 1.0;
        }
        if y == 0.0 {
            return self.history[m][i];
        }
        let c = &self.chain;
        let k = c.states();
        let dt = self.dt;
        let h_m = self.big_h[m][i];
        let first = (-c.hazard_increment(i, y, m as f64 * dt)).exp() * (self.big_h[0][i] - h_m).exp();
        let mut acc = 0.0;
        for l in 0..=m {
            let s = l as f64 * dt;
            let q = c.hazard(i, y + s) * (-c.hazard_increment(i, y, s)).exp();
            if q == 0.0 {
                continue;
            }
            let prev = &self.history[m - l];
            let inner: f64 = (0..k).filter(|j| *j != i).map(|j| c.p(i, j, y + s) * prev[j]).sum();
            acc += weight(l, m) * q * (self.big_h[m - l][i] - h_m).exp() * inner;
        }
        first + dt * acc
    }

    /// Tabulate on the given age nodes.
    pub fn to_grid(&self, ages: &[f64]) -> PsiGrid {
        let k = self.states();
        let na = ages.len();
        let values = map_indexed((self.steps + 1) * k * na, |idx| {
            let a = idx % na;
            let i = (idx / na) % k;
            let m = idx / (na * k);
            self.psi_step(m, i, ages[a])
        });
        PsiGrid {
            mode: Mode::Reduced,
            dt: self.dt,
            horizon: self.horizon,
            steps: self.steps,
            regimes: RegimeSpace::new(vec![k]),
            ages: ages.to_vec(),
            values,
        }
    }
}

impl PsiField for ReducedSolution {
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn regimes(&self) -> RegimeSpace {
        RegimeSpace::new(vec![self.states()])
    }

    fn psi(&self, t: f64, x: usize, y: &[f64]) -> f64 {
        if self.steps == 0 {
            return 1.0;
        }
        let pos = ((self.horizon - t) / self.dt).clamp(0.0, self.steps as f64);
        let lo = pos.floor() as usize;
        let f = pos - lo as f64;
        if f < 1e-9 || lo == self.steps {
            return self.psi_step(lo, x, y[0]);
        }
        if f > 1.0 - 1e-9 {
            return self.psi_step(lo + 1, x, y[0]);
        }
        (1.0 - f) * self.psi_step(lo, x, y[0]) + f * self.psi_step(lo + 1, x, y[0])
    }
}
