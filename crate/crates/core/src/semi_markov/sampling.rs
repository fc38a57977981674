//! Path sampling by residual holding times.

use rand::{Rng, RngCore};

use super::{ChainState, PathSegment, RegimeChain};
use crate::error::{invalid, Error, Result};

/// Largest age the bisection bracket may reach.
pub const RESIDUAL_AGE_BUDGET: f64 = 1e6;

impl RegimeChain {
    /// Draw the residual holding time in state `i` after `y_elapsed`, by
    /// inverting `Λ_i(y + s) = Λ_i(y) - ln(1 - U)`.
    pub fn sample_residual<R: Rng + ?Sized>(&self, i: usize, y_elapsed: f64, rng: &mut R) -> Result<f64> {
        self.check(i, y_elapsed)?;
        let u: f64 = rng.gen();
        self.residual_from_uniform(i, y_elapsed, u)
    }

    /// Deterministic inverse of the residual CDF at probability `u`.
    pub fn residual_from_uniform(&self, i: usize, y: f64, u: f64) -> Result<f64> {
        if self.is_frozen() {
            return Ok(f64::INFINITY);
        }
        let e = -(-u).ln_1p();
        if e == 0.0 {
            return Ok(0.0);
        }
        if let Some(c) = self.rates.constant_total(i) {
            return Ok(e / c);
        }
        let base = self.lambda_cum(i, y);
        let target = base + e;
        let mut hi = 1.0;
        while self.lambda_cum(i, y + hi) < target {
            hi *= 2.0;
            if y + hi > RESIDUAL_AGE_BUDGET {
                return Err(Error::UnboundedHazard {
                    state: i,
                    target,
                    age_budget: RESIDUAL_AGE_BUDGET,
                });
            }
        }
        let mut lo = 0.0;
        while hi - lo > 1e-12 * (1.0 + lo) {
            let mid = 0.5 * (lo + hi);
            if self.lambda_cum(i, y + mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Draw the state entered from `i` when leaving it at age `y`.
    pub(crate) fn sample_target(&self, i: usize, y: f64, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last = i;
        for j in 0..self.states {
            if j == i {
                continue;
            }
            let p = self.p(i, j, y);
            if p > 0.0 {
                last = j;
            }
            acc += p;
            if u < acc {
                return j;
            }
        }
        last
    }
}

/// Borrowed view of one constant stretch of a path.
#[derive(Debug, Clone, Copy)]
pub struct SegmentView<'a> {
    pub t_start: f64,
    pub t_end: f64,
    pub x: &'a [usize],
    /// Ages at `t_start`.
    pub y: &'a [f64],
    /// `(component, new state)` of the jump closing the segment.
    pub jump: Option<(usize, usize)>,
}

/// Walk a path of the joint process on `[t0, horizon]`, calling `visit` on
/// each constant segment in order. Simultaneous jumps go to the lowest
/// component index.
pub fn walk_chain<R, F>(
    chains: &[RegimeChain],
    state0: &ChainState,
    t0: f64,
    horizon: f64,
    rng: &mut R,
    mut visit: F,
) -> Result<()>
where
    R: Rng + ?Sized,
    F: FnMut(SegmentView<'_>),
{
    state0.validate(chains)?;
    if !(horizon >= t0) {
        return Err(invalid("horizon", "must not precede the start time"));
    }
    let mut x = state0.x.clone();
    let mut y = state0.y.clone();
    let mut next = Vec::with_capacity(chains.len());
    for (c, chain) in chains.iter().enumerate() {
        next.push(t0 + chain.sample_residual(x[c], y[c], rng)?);
    }
    let mut t = t0;
    loop {
        let mut l = 0;
        for c in 1..next.len() {
            if next[c] < next[l] {
                l = c;
            }
        }
        if next.is_empty() || next[l] >= horizon {
            visit(SegmentView {
                t_start: t,
                t_end: horizon,
                x: &x,
                y: &y,
                jump: None,
            });
            return Ok(());
        }
        let t_jump = next[l];
        let age_at_jump = y[l] + (t_jump - t);
        let target = chains[l].sample_target(x[l], age_at_jump, rng.gen());
        visit(SegmentView {
            t_start: t,
            t_end: t_jump,
            x: &x,
            y: &y,
            jump: Some((l, target)),
        });
        for (c, age) in y.iter_mut().enumerate() {
            if c != l {
                *age += t_jump - t;
            }
        }
        x[l] = target;
        y[l] = 0.0;
        t = t_jump;
        next[l] = t + chains[l].sample_residual(x[l], 0.0, rng)?;
    }
}

/// Simulate the joint process on `[t0, horizon]` and store its segments.
pub fn simulate_chain<R: Rng + ?Sized>(
    chains: &[RegimeChain],
    state0: &ChainState,
    t0: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<Vec<PathSegment>> {
    let mut out = Vec::new();
    walk_chain(chains, state0, t0, horizon, rng, |seg| {
        out.push(PathSegment {
            t_start: seg.t_start,
            t_end: seg.t_end,
            state: ChainState::new(seg.x.to_vec(), seg.y.to_vec()),
            jumped_component: seg.jump.map(|j| j.0),
            jumped_to: seg.jump.map(|j| j.1),
        });
    })?;
    Ok(out)
}

/// Random source whose words are bitwise complements of the inner one's, so
/// uniforms `u` become `1 - 2^-53 - u`: the antithetic stream.
#[derive(Debug, Clone)]
pub struct Antithetic<R>(pub R);

impl<R: RngCore> RngCore for Antithetic<R> {
    fn next_u32(&mut self) -> u32 {
        !self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        !self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest);
        dest.iter_mut().for_each(|b| *b = !*b);
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}
