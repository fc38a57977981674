//! The pointwise Hamiltonian `g_θ(t, x, u)`, its minimum `h_θ(t, x)` over the
//! admissible set and the time integral `H_θ(t₁, t₂, x)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{dot, LinearConstraints, MarketSpec, FEAS_TOL};
use crate::parallel::map_indexed;

pub const GRADIENT_TOL: f64 = 1e-9;
pub const MAX_ITERATIONS: usize = 200;
/// Below this `|u|` the uniform closed form loses digits to cancellation.
pub const CLOSED_FORM_MIN_U: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HamiltonianResult {
    pub value: f64,
    pub minimizer: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// Jump quadrature of one market: weights and the jump vectors `η_{·j}(z)`.
#[derive(Debug, Clone)]
struct JumpNodes {
    weights: Vec<f64>,
    etas: Vec<Vec<f64>>,
}

impl JumpNodes {
    fn new(spec: &MarketSpec) -> Self {
        let mut weights = Vec::new();
        let mut etas = Vec::new();
        for src in &spec.jumps {
            for (z, w) in src.measure.quadrature() {
                weights.push(w);
                etas.push(src.eta.iter().map(|e| e.eval(z)).collect());
            }
        }
        Self { weights, etas }
    }
}

/// `g_θ` at a fixed `(t, x)` with its derivatives.
#[derive(Debug, Clone)]
pub struct Objective {
    theta: f64,
    r: f64,
    b: DVector<f64>,
    a: DMatrix<f64>,
    jumps: JumpNodes,
    set: LinearConstraints,
}

impl Objective {
    pub fn new(spec: &MarketSpec, t: f64, x: usize) -> Self {
        Self {
            theta: spec.theta,
            r: spec.rate(t, x),
            b: spec.excess_drift(t, x),
            a: spec.diffusion_matrix(t, x),
            jumps: JumpNodes::new(spec),
            set: spec.admissible_set(),
        }
    }

    pub fn constraints(&self) -> &LinearConstraints {
        &self.set
    }

    fn quad_coef(&self) -> f64 {
        0.5 * self.theta / 2.0 * (self.theta / 2.0 + 1.0)
    }

    /// Value without the admissibility check.
    pub fn value_unchecked(&self, u: &[f64]) -> f64 {
        let half = self.theta / 2.0;
        let uv = DVector::from_column_slice(u);
        let quad = (uv.transpose() * &self.a * &uv)[(0, 0)];
        let mut jump = 0.0;
        for (w, eta) in self.jumps.weights.iter().zip(&self.jumps.etas) {
            jump += w * ((1.0 + dot(u, eta)).powf(-half) - 1.0);
        }
        -half * (self.r + self.b.dot(&uv)) + self.quad_coef() * quad + jump
    }

    pub fn value(&self, u: &[f64]) -> Result<f64> {
        if !u.iter().all(|v| v.is_finite()) || !self.set.contains(u) {
            return Err(Error::Inadmissible { u: u.to_vec() });
        }
        Ok(self.value_unchecked(u))
    }

    pub fn gradient(&self, u: &[f64]) -> DVector<f64> {
        let half = self.theta / 2.0;
        let uv = DVector::from_column_slice(u);
        let mut g = -half * &self.b + 2.0 * self.quad_coef() * (&self.a * &uv);
        for (w, eta) in self.jumps.weights.iter().zip(&self.jumps.etas) {
            let c = -half * w * (1.0 + dot(u, eta)).powf(-half - 1.0);
            for (gl, e) in g.iter_mut().zip(eta) {
                *gl += c * e;
            }
        }
        g
    }

    pub fn hessian(&self, u: &[f64]) -> DMatrix<f64> {
        let half = self.theta / 2.0;
        let k = half * (half + 1.0);
        let mut h = k * &self.a;
        for (w, eta) in self.jumps.weights.iter().zip(&self.jumps.etas) {
            let c = k * w * (1.0 + dot(u, eta)).powf(-half - 2.0);
            for i in 0..u.len() {
                for j in 0..u.len() {
                    h[(i, j)] += c * eta[i] * eta[j];
                }
            }
        }
        h
    }

    /// `‖P(u - ∇g) - u‖`, zero exactly at the constrained minimizer.
    pub fn projected_gradient_norm(&self, u: &[f64]) -> f64 {
        let g = self.gradient(u);
        if u.len() == 1 {
            let (lo, hi) = self.set.interval();
            let p = (u[0] - g[0]).clamp(lo, hi);
            return (p - u[0]).abs();
        }
        let target: Vec<f64> = u.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
        let p = project(&self.set, u, &target);
        p.iter().zip(u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    pub fn minimize(&self) -> Result<HamiltonianResult> {
        if self.b.len() == 1 {
            self.minimize_scalar()
        } else {
            self.minimize_sqp()
        }
    }

    fn minimize_scalar(&self) -> Result<HamiltonianResult> {
        let (lo, hi) = self.set.interval();
        let d = |u: f64| self.gradient(&[u])[0];
        let (mut lo_b, mut hi_b) = (lo, hi);
        // replace infinite ends by a bracket on the sign of g'
        if !lo_b.is_finite() {
            let mut s = -1.0;
            while d(s) > 0.0 {
                s *= 2.0;
            }
            lo_b = s.min(hi);
        }
        if !hi_b.is_finite() {
            let mut s = 1.0;
            while d(s) < 0.0 {
                s *= 2.0;
            }
            hi_b = s.max(lo_b);
        }
        let mut iterations = 0;
        let u = if d(lo_b) >= 0.0 {
            lo_b
        } else if d(hi_b) <= 0.0 {
            hi_b
        } else {
            let f = |u: f64| self.value_unchecked(&[u]);
            let phi = 0.5 * (5f64.sqrt() - 1.0);
            let (mut a, mut b) = (lo_b, hi_b);
            let mut c = b - phi * (b - a);
            let mut e = a + phi * (b - a);
            let (mut fc, mut fe) = (f(c), f(e));
            while b - a > 1e-4 * (1.0 + a.abs()) && iterations < 60 {
                iterations += 1;
                if fc < fe {
                    b = e;
                    e = c;
                    fe = fc;
                    c = b - phi * (b - a);
                    fc = f(c);
                } else {
                    a = c;
                    c = e;
                    fc = fe;
                    e = a + phi * (b - a);
                    fe = f(e);
                }
            }
            // g' is increasing: safeguarded Newton on the bracket of its root
            let (mut a, mut b) = (lo_b.max(a - (b - a)), hi_b.min(b + (b - a)));
            if d(a) > 0.0 {
                a = lo_b;
            }
            if d(b) < 0.0 {
                b = hi_b;
            }
            let mut u = 0.5 * (a + b);
            loop {
                iterations += 1;
                let g = d(u);
                if g.abs() <= GRADIENT_TOL * 1e-3 || iterations >= MAX_ITERATIONS {
                    break;
                }
                if g < 0.0 {
                    a = u;
                } else {
                    b = u;
                }
                let newton = u - g / self.hessian(&[u])[(0, 0)];
                let next = if newton > a && newton < b { newton } else { 0.5 * (a + b) };
                if (next - u).abs() <= 1e-15 * (1.0 + u.abs()) {
                    u = next;
                    break;
                }
                u = next;
            }
            u
        };
        self.finish(vec![u], iterations)
    }

    fn minimize_sqp(&self) -> Result<HamiltonianResult> {
        let n = self.b.len();
        let mut u = vec![0.0; n];
        let mut f = self.value(&u)?;
        let mut iterations = 0;
        while iterations < MAX_ITERATIONS {
            if self.projected_gradient_norm(&u) <= GRADIENT_TOL {
                break;
            }
            iterations += 1;
            let g = self.gradient(&u);
            let h = self.hessian(&u);
            let d = solve_qp(&h, &g, &self.set, &u);
            let slope = g.dot(&DVector::from_column_slice(&d));
            if !(slope < 0.0) {
                break;
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-12 {
                let trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
                let ft = self.value_unchecked(&trial);
                if ft <= f + 1e-4 * alpha * slope {
                    u = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        self.finish(u, iterations)
    }

    fn finish(&self, u: Vec<f64>, iterations: usize) -> Result<HamiltonianResult> {
        let gradient_norm = self.projected_gradient_norm(&u);
        if !(gradient_norm <= GRADIENT_TOL) {
            return Err(Error::NonConvergence {
                iterations,
                gradient_norm,
            });
        }
        Ok(HamiltonianResult {
            value: self.value(&u)?,
            minimizer: u,
            iterations,
            gradient_norm,
        })
    }

    /// Lower bound on `h_θ` from `(1+w)^{-θ/2} - 1 ≥ -1` and the smallest
    /// eigenvalue of `a`.
    pub fn lower_bound(&self) -> f64 {
        let half = self.theta / 2.0;
        let c = self.quad_coef() * self.a.clone().symmetric_eigenvalues().min();
        let mass: f64 = self.jumps.weights.iter().sum();
        -half * self.r - half * half * self.b.norm_squared() / (4.0 * c) - mass
    }
}

/// Minimise `½ dᵀHd + gᵀd` over `{d : A(u + d) ≤ b}` by a primal
/// active-set method started from the feasible point `d = 0`.
pub(crate) fn solve_qp(h: &DMatrix<f64>, g: &DVector<f64>, set: &LinearConstraints, u: &[f64]) -> Vec<f64> {
    let n = g.len();
    let rows: Vec<(DVector<f64>, f64)> = set
        .rows
        .iter()
        .map(|(a, b)| (DVector::from_column_slice(a), b - dot(a, u)))
        .collect();
    let mut d = DVector::zeros(n);
    let mut work: Vec<usize> = Vec::new();
    for _ in 0..(20 * (n + rows.len()) + 50) {
        let k = work.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        for (c, &i) in work.iter().enumerate() {
            for l in 0..n {
                kkt[(n + c, l)] = rows[i].0[l];
                kkt[(l, n + c)] = rows[i].0[l];
            }
        }
        let mut rhs = DVector::zeros(n + k);
        let grad = h * &d + g;
        for l in 0..n {
            rhs[l] = -grad[l];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            work.pop();
            continue;
        };
        let p = sol.rows(0, n).into_owned();
        if p.norm() <= 1e-14 * (1.0 + d.norm()) {
            let worst = (0..k)
                .map(|c| (c, sol[n + c]))
                .filter(|(_, m)| *m < -1e-14)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                Some((c, _)) => {
                    work.remove(c);
                    continue;
                }
                None => break,
            }
        }
        let mut alpha = 1.0;
        let mut block = None;
        for (i, (a, b)) in rows.iter().enumerate() {
            if work.contains(&i) {
                continue;
            }
            let ap = a.dot(&p);
            if ap > 1e-15 {
                let room = (b - a.dot(&d)).max(0.0) / ap;
                if room < alpha {
                    alpha = room;
                    block = Some(i);
                }
            }
        }
        d += alpha * &p;
        if let Some(i) = block {
            work.push(i);
        }
    }
    d.iter().copied().collect()
}

/// Euclidean projection of `target` onto the polytope, from feasible `u`.
pub(crate) fn project(set: &LinearConstraints, u: &[f64], target: &[f64]) -> Vec<f64> {
    let n = u.len();
    let h = DMatrix::identity(n, n);
    let g = DVector::from_iterator(n, u.iter().zip(target).map(|(a, t)| a - t));
    let d = solve_qp(&h, &g, set, u);
    let p: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + b).collect();
    debug_assert!(set.rows.iter().all(|(a, b)| dot(a, &p) <= b + 1e3 * FEAS_TOL * (1.0 + b.abs())));
    p
}

/// `g_θ(t, x, u)`; errors when `u` is outside the admissible set.
pub fn g_theta(spec: &MarketSpec, t: f64, x: usize, u: &[f64]) -> Result<f64> {
    if u.len() != spec.n_assets {
        return Err(Error::Dimension {
            what: "portfolio".into(),
            expected: spec.n_assets,
            got: u.len(),
        });
    }
    Objective::new(spec, t, x).value(u)
}

/// `h_θ(t, x)` and the minimizer `u*(t, x)`.
pub fn minimize(spec: &MarketSpec, t: f64, x: usize) -> Result<HamiltonianResult> {
    Objective::new(spec, t, x).minimize()
}

/// Jump term `∫ ((1 + u z)^{-θ/2} - 1) ν(dz)` for `ν` uniform with unit mass
/// on `[a, b]` and `η(z) = z`, in closed form. `None` where the closed form
/// is singular (`θ = 2`) or cancels badly (`|u|` below [`CLOSED_FORM_MIN_U`]).
pub fn uniform_jump_term(theta: f64, a: f64, b: f64, u: f64) -> Option<f64> {
    let e = 1.0 - theta / 2.0;
    if e == 0.0 || u.abs() < CLOSED_FORM_MIN_U {
        return None;
    }
    Some(((1.0 + b * u).powf(e) - (1.0 + a * u).powf(e)) / (u * e * (b - a)) - 1.0)
}

/// `H_θ(t₁, t₂, x) = ∫_{t₁}^{t₂} h_θ(s, x) ds` by composite Simpson with
/// `steps` panels; exact for time-homogeneous coefficients.
pub fn big_h(spec: &MarketSpec, t1: f64, t2: f64, x: usize, steps: usize) -> Result<f64> {
    if !(t1 <= t2) {
        return Err(crate::error::invalid("t1", "must not exceed t2"));
    }
    if t1 == t2 {
        return Ok(0.0);
    }
    if spec.is_time_homogeneous() {
        return Ok((t2 - t1) * minimize(spec, t1, x)?.value);
    }
    let steps = steps.max(2) + steps % 2;
    let nodes = steps + 1;
    let vals = map_indexed(nodes, |k| minimize(spec, t1 + (t2 - t1) * k as f64 / steps as f64, x));
    let vals = vals.into_iter().collect::<Result<Vec<_>>>()?;
    let dt = (t2 - t1) / steps as f64;
    let sum: f64 = vals
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let w = if k == 0 || k == steps { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            w * r.value
        })
        .sum();
    Ok(sum * dt / 3.0)
}

/// Cached `h_θ` and `u*` on `[0, horizon]` for every regime. Time-dependent
/// coefficients are tabulated at the ends and midpoint of `cells` equal
/// cells; `h` is integrated as the piecewise quadratic through these nodes.
#[derive(Debug, Clone)]
pub struct HamiltonianTable {
    horizon: f64,
    cells: usize,
    homogeneous: bool,
    /// `[x][node]` with `2 * cells + 1` nodes (one when homogeneous).
    h: Vec<Vec<f64>>,
    u: Vec<Vec<Vec<f64>>>,
    /// `[x][cell boundary]` running integral of `h` from 0.
    cumulative: Vec<Vec<f64>>,
}

pub const DEFAULT_TABLE_CELLS: usize = 256;

impl HamiltonianTable {
    pub fn build(spec: &MarketSpec, horizon: f64, cells: usize) -> Result<Self> {
        let k = spec.regimes.len();
        let homogeneous = spec.is_time_homogeneous() || horizon == 0.0;
        let cells = if homogeneous { 0 } else { cells.max(1) };
        let nodes = 2 * cells + 1;
        let step = if cells == 0 { 0.0 } else { horizon / (2 * cells) as f64 };
        let results = map_indexed(k * nodes, |idx| minimize(spec, (idx % nodes) as f64 * step, idx / nodes));
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let mut h = vec![Vec::with_capacity(nodes); k];
        let mut u = vec![Vec::with_capacity(nodes); k];
        for (idx, r) in results.into_iter().enumerate() {
            h[idx / nodes].push(r.value);
            u[idx / nodes].push(r.minimizer);
        }
        let cumulative = h
            .iter()
            .map(|hx| {
                let mut acc = vec![0.0; cells + 1];
                for c in 0..cells {
                    let w = 2.0 * step;
                    acc[c + 1] = acc[c] + w / 6.0 * (hx[2 * c] + 4.0 * hx[2 * c + 1] + hx[2 * c + 2]);
                }
                acc
            })
            .collect();
        Ok(Self {
            horizon,
            cells,
            homogeneous,
            h,
            u,
            cumulative,
        })
    }

    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn regimes(&self) -> usize {
        self.h.len()
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let w = self.horizon / self.cells as f64;
        let c = ((t / w).floor().max(0.0) as usize).min(self.cells - 1);
        (c, ((t - c as f64 * w) / w).clamp(0.0, 1.0))
    }

    /// `h_θ(t, x)`.
    pub fn h(&self, t: f64, x: usize) -> f64 {
        if self.homogeneous {
            return self.h[x][0];
        }
        let (c, s) = self.locate(t);
        let (a, m, b) = (self.h[x][2 * c], self.h[x][2 * c + 1], self.h[x][2 * c + 2]);
        a * (1.0 - s) * (1.0 - 2.0 * s) + 4.0 * m * s * (1.0 - s) + b * s * (2.0 * s - 1.0)
    }

    /// `u*(t, x)` taken from the last tabulated node at or before `t`.
    pub fn control(&self, t: f64, x: usize) -> &[f64] {
        if self.homogeneous {
            return &self.u[x][0];
        }
        let step = self.horizon / (2 * self.cells) as f64;
        let k = ((t / step + 1e-9).floor().max(0.0) as usize).min(2 * self.cells);
        &self.u[x][k]
    }

    fn cumulative_at(&self, t: f64, x: usize) -> f64 {
        let (c, s) = self.locate(t);
        let w = self.horizon / self.cells as f64;
        let (a, m, b) = (self.h[x][2 * c], self.h[x][2 * c + 1], self.h[x][2 * c + 2]);
        // ∫_0^s of the quadratic through (0, a), (½, m), (1, b)
        let part = a * (s - 1.5 * s * s + 2.0 / 3.0 * s.powi(3))
            + m * (2.0 * s * s - 4.0 / 3.0 * s.powi(3))
            + b * (-0.5 * s * s + 2.0 / 3.0 * s.powi(3));
        self.cumulative[x][c] + w * part
    }

    /// `∫_{t₁}^{t₂} h_θ(s, x) ds`.
    pub fn integral(&self, t1: f64, t2: f64, x: usize) -> f64 {
        if self.homogeneous {
            return (t2 - t1) * self.h[x][0];
        }
        self.cumulative_at(t2, x) - self.cumulative_at(t1, x)
    }

    /// Smallest tabulated `h_θ`.
    pub fn h_min(&self) -> f64 {
        self.h.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// Tabulation as `(t, x, h, u*)` rows.
    pub fn rows(&self) -> Vec<(f64, usize, f64, Vec<f64>)> {
        let step = if self.cells == 0 {
            0.0
        } else {
            self.horizon / (2 * self.cells) as f64
        };
        let mut out = Vec::new();
        for x in 0..self.h.len() {
            for (k, (h, u)) in self.h[x].iter().zip(&self.u[x]).enumerate() {
                out.push((k as f64 * step, x, *h, u.clone()));
            }
        }
        out
    }

    /// Debug dump with header `t,regime,h,u` (`u` components joined by `;`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,regime,h,u")?;
        for (t, x, h, u) in self.rows() {
            let u: Vec<String> = u.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{t},{x},{h:.17e},{}", u.join(";"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{AffineJump, JumpMeasure, JumpSource, PortfolioSet, RegimeCoefficients, RegimeSpace, TimeFn};

    fn no_jump(mu: f64, sigma: f64, r: f64, theta: f64) -> MarketSpec {
        MarketSpec::new(
            1,
            1,
            theta,
            RegimeSpace::new(vec![1]),
            vec![RegimeCoefficients::scalar(mu, sigma, r)],
            vec![],
            PortfolioSet::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_portfolio_value() {
        let m = MarketSpec::worked_example(1.3, -0.4, 0.4);
        for x in 0..3 {
            assert_eq!(g_theta(&m, 0.0, x, &[0.0]).unwrap(), -0.65 * m.rate(0.0, x));
        }
    }

    #[test]
    fn closed_form_matches_quadrature() {
        for &theta in &[0.5, 1.0, 1.5, 3.0] {
            let m = MarketSpec::worked_example(theta, -0.4, 0.4);
            for &u in &[-2.0, -0.5, 0.3, 1.7] {
                let half = theta / 2.0;
                let closed = -half * (0.2 + 0.1 * u)
                    + 0.5 * half * (half + 1.0) * u * u * 0.04
                    + uniform_jump_term(theta, -0.4, 0.4, u).unwrap();
                let quad = g_theta(&m, 0.0, 0, &[u]).unwrap();
                assert!((closed - quad).abs() < 1e-10, "θ={theta} u={u}: {closed} vs {quad}");
            }
        }
        assert!(uniform_jump_term(2.0, -0.4, 0.4, 1.0).is_none());
        assert!(uniform_jump_term(1.0, -0.4, 0.4, 1e-8).is_none());
    }

    #[test]
    fn outside_the_safety_margin_is_an_error() {
        let m = MarketSpec::worked_example(1.0, -0.4, 0.4);
        assert!(matches!(g_theta(&m, 0.0, 0, &[2.6]), Err(Error::Inadmissible { .. })));
    }

    #[test]
    fn merton_fraction_without_jumps() {
        let m = no_jump(0.3, 0.2, 0.2, 1.0);
        let res = minimize(&m, 0.0, 0).unwrap();
        let expect = 0.1 / (1.5 * 0.04);
        assert!((res.minimizer[0] - expect).abs() < 1e-9);
        let flat = no_jump(0.2, 0.2, 0.2, 1.0);
        let res = minimize(&flat, 0.0, 0).unwrap();
        assert!(res.minimizer[0].abs() < 1e-12);
        assert_eq!(res.value, -0.5 * 0.2);
    }

    #[test]
    fn two_asset_sqp_hits_the_quadratic_minimizer() {
        let sigma = vec![vec![0.3.into(), 0.0.into()], vec![0.1.into(), 0.25.into()]];
        let coeff = RegimeCoefficients {
            r: 0.05.into(),
            mu: vec![0.12.into(), 0.09.into()],
            sigma,
        };
        let m = MarketSpec::new(
            2,
            2,
            2.0,
            RegimeSpace::new(vec![1]),
            vec![coeff],
            vec![],
            PortfolioSet::default(),
        )
        .unwrap();
        let res = minimize(&m, 0.0, 0).unwrap();
        let a = m.diffusion_matrix(0.0, 0);
        let b = m.excess_drift(0.0, 0);
        let expect = a.lu().solve(&(b / 2.0)).unwrap();
        for l in 0..2 {
            assert!((res.minimizer[l] - expect[l]).abs() < 1e-9);
        }
    }

    #[test]
    fn active_box_constraint_in_two_assets() {
        let coeff = RegimeCoefficients {
            r: 0.05.into(),
            mu: vec![0.5.into(), 0.06.into()],
            sigma: vec![vec![0.2.into(), 0.0.into()], vec![0.0.into(), 0.2.into()]],
        };
        let m = MarketSpec::new(
            2,
            2,
            1.0,
            RegimeSpace::new(vec![1]),
            vec![coeff],
            vec![JumpSource {
                measure: JumpMeasure::uniform(-0.2, 0.3, 0.5),
                eta: vec![AffineJump::IDENTITY, AffineJump { scale: 0.5, shift: 0.0 }],
            }],
            PortfolioSet {
                sum_max: Some(1.0),
                ..PortfolioSet::boxed(2, 0.0, 0.8, 1e-3)
            },
        )
        .unwrap();
        let res = minimize(&m, 0.0, 0).unwrap();
        assert!((res.minimizer[0] - 0.8).abs() < 1e-12);
        assert!(m.admissible(&res.minimizer));
        // brute force on a grid for the second coordinate
        let best = (0..=2000)
            .map(|k| 0.2 * k as f64 / 2000.0)
            .map(|v| g_theta(&m, 0.0, 0, &[0.8, v]).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(res.value <= best + 1e-12);
    }

    #[test]
    fn h_is_negative_and_above_the_bound() {
        let m = MarketSpec::worked_example(1.0, -0.4, 0.4);
        for x in 0..3 {
            let o = Objective::new(&m, 0.0, x);
            let res = o.minimize().unwrap();
            assert!(res.value < 0.0);
            assert!(res.value <= -0.5 * m.rate(0.0, x));
            assert!(res.value >= o.lower_bound());
        }
    }

    #[test]
    fn big_h_cases() {
        let m = MarketSpec::worked_example(1.0, -0.4, 0.4);
        assert_eq!(big_h(&m, 0.3, 0.3, 1, 8).unwrap(), 0.0);
        let h = minimize(&m, 0.0, 1).unwrap().value;
        assert_eq!(big_h(&m, 0.0, 0.8, 1, 8).unwrap(), 0.8 * h);

        let mut lin = m.clone();
        lin.coefficients[0].mu[0] = TimeFn::Poly { poly: vec![0.25, 0.1] };
        let coarse = big_h(&lin, 0.0, 1.0, 0, 16).unwrap();
        let fine = big_h(&lin, 0.0, 1.0, 0, 160).unwrap();
        assert!((coarse - fine).abs() < 1e-9, "{coarse} vs {fine}");
    }

    #[test]
    fn table_integrates_time_dependent_h() {
        let mut m = MarketSpec::worked_example(1.0, -0.4, 0.4);
        m.coefficients[0].mu[0] = TimeFn::Poly { poly: vec![0.25, 0.1] };
        let table = HamiltonianTable::build(&m, 1.0, 32).unwrap();
        assert!(!table.is_homogeneous());
        let direct = big_h(&m, 0.13, 0.71, 0, 64).unwrap();
        assert!((table.integral(0.13, 0.71, 0) - direct).abs() < 1e-9);
        let h = minimize(&m, 0.4, 0).unwrap().value;
        assert!((table.h(0.4, 0) - h).abs() < 1e-7);
    }

    #[test]
    fn homogeneous_table_is_constant() {
        let m = MarketSpec::worked_example(1.0, -0.4, 0.4);
        let table = HamiltonianTable::build(&m, 1.0, 16).unwrap();
        assert!(table.is_homogeneous());
        for x in 0..3 {
            assert_eq!(table.control(0.0, x), table.control(0.77, x));
            assert_eq!(table.integral(0.1, 0.6, x), 0.5 * table.h(0.0, x));
        }
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,regime,h,u\n"));
    }
}
