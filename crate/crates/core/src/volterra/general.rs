//! Picard iteration for the full multi-component integral equation.

use super::grid::Mode;
use super::{step_count, PsiGrid};
use crate::error::{invalid, Error, Result};
use crate::hamiltonian::HamiltonianTable;
use crate::market::RegimeSpace;
use crate::parallel::map_indexed;
use crate::semi_markov::RegimeChain;

pub const PICARD_TOL: f64 = 1e-10;
pub const MAX_SWEEPS: usize = 500;
/// Consecutive non-contracting sweeps tolerated before giving up.
const STALL_SWEEPS: usize = 3;

#[derive(Debug, Clone)]
pub struct GeneralOptions {
    /// Age step; defaults to `Δt` so shifted ages land on nodes.
    pub y_step: Option<f64>,
    /// Largest age node; defaults to the horizon.
    pub y_max: Option<f64>,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for GeneralOptions {
    fn default() -> Self {
        Self {
            y_step: None,
            y_max: None,
            tol: PICARD_TOL,
            max_sweeps: MAX_SWEEPS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneralSolution {
    pub grid: PsiGrid,
    pub sweeps: usize,
    /// Sup-norm change of every sweep.
    pub changes: Vec<f64>,
    /// Largest change ratio over the last five sweeps.
    pub contraction: f64,
    /// Reads at in-domain points whose shifted ages fell past the last node.
    pub clamped_reads: usize,
}

/// Per-component tables along the shifted ages `age_a + lΔt`.
struct ComponentTables {
    k: usize,
    steps: usize,
    n_ages: usize,
    /// `[i][a][l]` total hazard
    hazard: Vec<f64>,
    /// `[i][a][l]` survival `exp(-(Λ(age_a + lΔt) - Λ(age_a)))`
    survival: Vec<f64>,
    /// `[i][a][l][j]` jump probabilities
    jump: Vec<f64>,
}

impl ComponentTables {
    fn new(chain: &RegimeChain, ages: &[f64], steps: usize, dt: f64) -> Self {
        let k = chain.states();
        let na = ages.len();
        let mut hazard = Vec::with_capacity(k * na * (steps + 1));
        let mut survival = Vec::with_capacity(hazard.capacity());
        let mut jump = Vec::with_capacity(hazard.capacity() * k);
        for i in 0..k {
            for &y in ages {
                for l in 0..=steps {
                    let s = l as f64 * dt;
                    hazard.push(chain.hazard(i, y + s));
                    survival.push((-chain.hazard_increment(i, y, s)).exp());
                    for j in 0..k {
                        jump.push(if j == i { 0.0 } else { chain.p(i, j, y + s) });
                    }
                }
            }
        }
        Self {
            k,
            steps,
            n_ages: na,
            hazard,
            survival,
            jump,
        }
    }

    #[inline]
    fn at(&self, i: usize, a: usize, l: usize) -> usize {
        (i * self.n_ages + a) * (self.steps + 1) + l
    }
}

/// Solve for `ψ` on the `(m, x, y)` grid by Jacobi-style Picard sweeps
/// `ψ ← Aψ`, trapezoid quadrature in the jump time and multilinear age
/// interpolation clamped at the last node.
pub fn solve_general(
    table: &HamiltonianTable,
    chains: &[RegimeChain],
    horizon: f64,
    dt: f64,
    opts: &GeneralOptions,
) -> Result<GeneralSolution> {
    let (steps, dt) = step_count(horizon, dt)?;
    let regimes = RegimeSpace::of(chains);
    let comps = regimes.components();
    if comps == 0 || comps > 8 {
        return Err(invalid("chains", "need between one and eight components"));
    }
    if table.regimes() != regimes.len() {
        return Err(Error::Dimension {
            what: "hamiltonian regimes".into(),
            expected: regimes.len(),
            got: table.regimes(),
        });
    }
    let y_step = opts.y_step.unwrap_or(dt);
    let y_max = opts.y_max.unwrap_or(horizon);
    if !(y_step > 0.0) || !(y_max >= 0.0) {
        return Err(invalid("y_grid", "age step must be positive and the range nonnegative"));
    }
    let n_ages = ((y_max / y_step) - 1e-9).ceil().max(0.0) as usize + 1;
    let ages: Vec<f64> = (0..n_ages).map(|a| a as f64 * y_step).collect();
    let aligned = ((y_step - dt) / dt).abs() < 1e-12;

    let tabs: Vec<ComponentTables> = chains.iter().map(|c| ComponentTables::new(c, &ages, steps, dt)).collect();
    let t_of = |m: usize| if m == steps { 0.0 } else { horizon - m as f64 * dt };
    let kx = regimes.len();
    let big_h: Vec<Vec<f64>> = (0..=steps)
        .map(|m| (0..kx).map(|x| table.integral(0.0, t_of(m), x)).collect())
        .collect();
    let xs: Vec<Vec<usize>> = (0..kx).map(|x| regimes.unflatten(x)).collect();

    let age_points = n_ages.pow(comps as u32);
    let slice = kx * age_points;
    let total = (steps + 1) * slice;
    let mut grid = PsiGrid {
        mode: Mode::General,
        dt,
        horizon,
        steps,
        regimes: regimes.clone(),
        ages,
        values: vec![1.0; total],
    };

    let decode = |flat: usize| -> Vec<usize> {
        let mut a = vec![0; comps];
        let mut rest = flat;
        for k in (0..comps).rev() {
            a[k] = rest % n_ages;
            rest /= n_ages;
        }
        a
    };

    // One application of the integral operator at a grid point; returns the
    // value and whether an in-domain read was clamped.
    let apply = |old: &[f64], idx: usize| -> (f64, bool) {
        let m = idx / slice;
        if m == 0 {
            return (1.0, false);
        }
        let x = (idx % slice) / age_points;
        let a = decode(idx % age_points);
        let xv = &xs[x];
        let in_domain = a.iter().all(|ai| grid.ages[*ai] <= t_of(m) + 1e-12);
        let mut clamped = false;
        let h_m = big_h[m][x];
        let surv = |l: usize| -> f64 {
            (0..comps)
                .map(|c| tabs[c].survival[tabs[c].at(xv[c], a[c], l)])
                .product()
        };
        let first = surv(m) * (big_h[0][x] - h_m).exp();
        let mut acc = 0.0;
        let mut shifted = vec![0.0; comps];
        for l in 0..=m {
            let w = if l == 0 || l == m { 0.5 } else { 1.0 };
            let s_all = surv(l);
            if s_all == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for c in 0..comps {
                let tc = &tabs[c];
                let pos = tc.at(xv[c], a[c], l);
                let lam = tc.hazard[pos];
                if lam == 0.0 {
                    continue;
                }
                for (cc, sh) in shifted.iter_mut().enumerate() {
                    *sh = if cc == c {
                        0.0
                    } else if aligned {
                        (a[cc] + l) as f64
                    } else {
                        (grid.ages[a[cc]] + l as f64 * dt) / y_step
                    };
                }
                if shifted.iter().any(|p| *p > (n_ages - 1) as f64 + 1e-9) {
                    clamped |= in_domain;
                }
                let mut targets = 0.0;
                for j in 0..tc.k {
                    let p = tc.jump[pos * tc.k + j];
                    if p == 0.0 {
                        continue;
                    }
                    let xj = regimes.with_component(x, c, j);
                    let base = (m - l) * slice + xj * age_points;
                    targets += p * read(old, base, &shifted, n_ages);
                }
                inner += lam * targets;
            }
            acc += w * s_all * (big_h[m - l][x] - h_m).exp() * inner;
        }
        (first + dt * acc, clamped)
    };

    let mut changes = Vec::new();
    let mut stalled = 0;
    let mut clamped_reads;
    loop {
        let next = map_indexed(total, |idx| apply(&grid.values, idx));
        clamped_reads = next.iter().filter(|(_, c)| *c).count();
        let change = next
            .iter()
            .zip(&grid.values)
            .map(|((n, _), o)| (n - o).abs())
            .fold(0.0, f64::max);
        grid.values = next.into_iter().map(|(v, _)| v).collect();
        changes.push(change);
        let sweeps = changes.len();
        if sweeps >= 2 && change >= changes[sweeps - 2] && change > 0.0 {
            stalled += 1;
        } else {
            stalled = 0;
        }
        log::debug!("picard sweep {sweeps}: change {change:e}");
        if change <= opts.tol {
            break;
        }
        if stalled >= STALL_SWEEPS {
            return Err(Error::ContractionStall {
                sweeps,
                factor: change / changes[sweeps - 2],
                change,
            });
        }
        if sweeps >= opts.max_sweeps {
            return Err(Error::SweepLimit { sweeps, change });
        }
    }
    if clamped_reads > 0 {
        log::warn!("{clamped_reads} grid points read ages past the last node; refine or extend the age grid");
    }
    let sweeps = changes.len();
    let contraction = contraction_factor(&changes);
    Ok(GeneralSolution {
        grid,
        sweeps,
        changes,
        contraction,
        clamped_reads,
    })
}

/// Largest ratio of successive changes over the last five sweeps.
pub fn contraction_factor(changes: &[f64]) -> f64 {
    let ratios: Vec<f64> = changes
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .collect();
    ratios.iter().rev().take(5).copied().fold(0.0, f64::max)
}

/// Multilinear read at fractional age positions, clamped to the grid.
fn read(values: &[f64], base: usize, pos: &[f64], n_ages: usize) -> f64 {
    let comps = pos.len();
    let top = (n_ages - 1) as f64;
    let mut lo = [0usize; 8];
    let mut frac = [0.0f64; 8];
    for (k, p) in pos.iter().enumerate() {
        let p = p.clamp(0.0, top);
        let i = (p.floor() as usize).min(n_ages.saturating_sub(2));
        lo[k] = i;
        frac[k] = if n_ages == 1 { 0.0 } else { p - i as f64 };
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << comps) {
        let mut w = 1.0;
        let mut flat = 0;
        for k in 0..comps {
            let up = (corner >> (comps - 1 - k)) & 1 == 1;
            w *= if up { frac[k] } else { 1.0 - frac[k] };
            flat = flat * n_ages + lo[k] + up as usize;
        }
        if w != 0.0 {
            acc += w * values[base + flat];
        }
    }
    acc
}
