//! Monte-Carlo checks: Feynman–Kac estimates of `ψ`, exact wealth paths
//! under feedback controls, and the cost `E[V_T^{-θ/2}]`.
//!
//! Path `p` draws from the ChaCha8 stream `p` of the run seed, so results do
//! not depend on the thread schedule; sums are pairwise in path order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hamiltonian::{project, HamiltonianTable, DEFAULT_TABLE_CELLS};
use crate::market::{DensityShape, JumpMeasure, MarketSpec, RegimeSpace};
use crate::parallel::{map_indexed, pairwise_sum};
use crate::semi_markov::{simulate_chain, walk_chain, Antithetic, ChainState, PathSegment, RegimeChain};

pub const MIN_PATHS: usize = 100;
const CDF_POINTS: usize = 4096;
/// Offset separating the wealth streams from the regime streams.
const WEALTH_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    #[serde(rename = "se")]
    pub std_error: f64,
    #[serde(rename = "n")]
    pub n_paths: usize,
    pub seed: u64,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let n = samples.len();
        if n > 0 && samples.iter().all(|s| *s == samples[0]) {
            // a degenerate estimator is exact; keep it free of rounding
            return Self {
                mean: samples[0],
                std_error: 0.0,
                n_paths: n,
                seed,
            };
        }
        let mean = pairwise_sum(samples) / n as f64;
        let dev: Vec<f64> = samples.iter().map(|s| (s - mean).powi(2)).collect();
        let var = if n > 1 { pairwise_sum(&dev) / (n - 1) as f64 } else { 0.0 };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n_paths: n,
            seed,
        }
    }

    /// `|a - b| / sqrt(se_a² + se_b²)`, zero when both are exact and equal.
    pub fn z_score(&self, other: f64, other_se: f64) -> f64 {
        let se = (self.std_error.powi(2) + other_se.powi(2)).sqrt();
        let diff = (self.mean - other).abs();
        if se == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / se
        }
    }
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn check_paths(n: usize) -> Result<()> {
    if n < MIN_PATHS {
        return Err(invalid("n_paths", format!("need at least {MIN_PATHS} paths")));
    }
    Ok(())
}

/// Model shared by the estimators.
#[derive(Debug, Clone)]
pub struct McModel {
    pub spec: MarketSpec,
    pub chains: Vec<RegimeChain>,
    pub table: HamiltonianTable,
    pub horizon: f64,
    regimes: RegimeSpace,
    marks: Vec<MarkSampler>,
}

impl McModel {
    pub fn new(spec: MarketSpec, chains: Vec<RegimeChain>, horizon: f64) -> Result<Self> {
        let table = HamiltonianTable::build(&spec, horizon, DEFAULT_TABLE_CELLS)?;
        Self::with_table(spec, chains, horizon, table)
    }

    pub fn with_table(spec: MarketSpec, chains: Vec<RegimeChain>, horizon: f64, table: HamiltonianTable) -> Result<Self> {
        let regimes = RegimeSpace::of(&chains);
        if regimes != spec.regimes {
            return Err(Error::Dimension {
                what: "regime space".into(),
                expected: spec.regimes.len(),
                got: regimes.len(),
            });
        }
        if !(horizon >= 0.0) {
            return Err(invalid("horizon", "must be nonnegative"));
        }
        let marks = spec.jumps.iter().map(|j| MarkSampler::new(&j.measure)).collect();
        Ok(Self {
            spec,
            chains,
            table,
            horizon,
            regimes,
            marks,
        })
    }

    fn discount<R: RngCore>(&self, state: &ChainState, t: f64, rng: &mut R) -> Result<f64> {
        let mut acc = 0.0;
        walk_chain(&self.chains, state, t, self.horizon, rng, |seg| {
            acc += self.table.integral(seg.t_start, seg.t_end, self.regimes.flatten(seg.x));
        })?;
        Ok(acc.exp())
    }

    /// `ψ(t, x, y) = E[exp ∫_t^T h_θ(s, X_s) ds]`.
    pub fn estimate_psi(&self, t: f64, state: &ChainState, n_paths: usize, seed: u64) -> Result<McEstimate> {
        check_paths(n_paths)?;
        self.check_time(t)?;
        let samples = map_indexed(n_paths, |p| self.discount(state, t, &mut path_rng(seed, p)));
        let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(McEstimate::from_samples(&samples, seed))
    }

    /// Antithetic variant: `n_paths / 2` pairs, each averaging a stream and
    /// its complement.
    pub fn estimate_psi_antithetic(&self, t: f64, state: &ChainState, n_paths: usize, seed: u64) -> Result<McEstimate> {
        check_paths(n_paths)?;
        self.check_time(t)?;
        let pairs = map_indexed(n_paths / 2, |p| -> Result<f64> {
            let a = self.discount(state, t, &mut path_rng(seed, p))?;
            let b = self.discount(state, t, &mut Antithetic(path_rng(seed, p)))?;
            Ok(0.5 * (a + b))
        });
        let pairs = pairs.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(McEstimate::from_samples(&pairs, seed))
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(invalid("t", "must lie in [0, T]"));
        }
        Ok(())
    }

    /// One exact wealth path on `[0, T]` from `state0`; `record` adds
    /// `n_steps` uniform observation times.
    #[allow(clippy::too_many_arguments)]
    fn wealth_path(
        &self,
        v0: f64,
        state0: &ChainState,
        control: &FeedbackTable,
        n_steps: usize,
        seed: u64,
        path: usize,
        record: bool,
    ) -> Result<WealthPath> {
        let mut regime_rng = path_rng(seed, path);
        let segments = simulate_chain(&self.chains, state0, 0.0, self.horizon, &mut regime_rng)?;
        let mut rng = path_rng(seed ^ WEALTH_SEED_MIX, path);
        let mut grid: Vec<f64> = control.times.iter().copied().filter(|t| *t > 0.0 && *t < self.horizon).collect();
        if n_steps > 0 {
            grid.extend((1..n_steps).map(|k| self.horizon * k as f64 / n_steps as f64));
        }
        grid.sort_by(f64::total_cmp);
        let mut log_v = v0.ln();
        let mut out = WealthPath {
            times: vec![0.0],
            values: vec![v0],
            segments: Vec::new(),
        };
        for seg in &segments {
            let x = self.regimes.flatten(&seg.state.x);
            let mut cuts = vec![seg.t_start];
            cuts.extend(grid.iter().copied().filter(|t| *t > seg.t_start && *t < seg.t_end));
            cuts.push(seg.t_end);
            for w in cuts.windows(2) {
                let (a, b) = (w[0], w[1]);
                let u = control.at(a, x);
                self.advance(&mut log_v, a, b, x, u, &mut rng, &mut out, record)?;
            }
        }
        if record {
            out.segments = segments;
        } else {
            out.times = vec![0.0, self.horizon];
            out.values = vec![v0, log_v.exp()];
        }
        Ok(out)
    }

    /// Move `ln V` across `[a, b]` with regime `x` and fraction `u` fixed.
    #[allow(clippy::too_many_arguments)]
    fn advance<R: Rng>(
        &self,
        log_v: &mut f64,
        a: f64,
        b: f64,
        x: usize,
        u: &[f64],
        rng: &mut R,
        out: &mut WealthPath,
        record: bool,
    ) -> Result<()> {
        let spec = &self.spec;
        // jump epochs of every source on [a, b], merged in time order
        let mut events: Vec<(f64, f64)> = Vec::new();
        for (j, src) in spec.jumps.iter().enumerate() {
            let mass = src.measure.total_mass();
            if mass <= 0.0 {
                continue;
            }
            let exp = Exp::new(mass).map_err(|e| invalid("jump mass", e.to_string()))?;
            let mut t = a;
            loop {
                t += exp.sample(rng);
                if t >= b {
                    break;
                }
                let z = self.marks[j].sample(rng);
                let w: f64 = u.iter().zip(&src.eta).map(|(ul, e)| ul * e.eval(z)).sum();
                if !(1.0 + w > 0.0) {
                    return Err(Error::Inadmissible { u: u.to_vec() });
                }
                events.push((t, (1.0 + w).ln()));
            }
        }
        events.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut t = a;
        for &(te, jump) in events.iter().chain(std::iter::once(&(b, 0.0))) {
            if te > t {
                let (mean, var) = self.log_moments(t, te, x, u);
                let z: f64 = StandardNormal.sample(rng);
                *log_v += mean + var.sqrt() * z;
            }
            *log_v += jump;
            t = te;
            if record {
                let v = log_v.exp();
                assert!(v > 0.0, "wealth left the positive half-line");
                out.times.push(te);
                out.values.push(v);
            }
        }
        Ok(())
    }

    /// `∫(r + b·u - ½uᵀau) ds` and `∫uᵀau ds` over `[a, b]`.
    fn log_moments(&self, a: f64, b: f64, x: usize, u: &[f64]) -> (f64, f64) {
        let f = |s: f64| {
            let r = self.spec.rate(s, x);
            let bv = self.spec.excess_drift(s, x);
            let av = self.spec.diffusion_matrix(s, x);
            let uv = nalgebra::DVector::from_column_slice(u);
            let q = (uv.transpose() * av * &uv)[(0, 0)];
            (r + bv.dot(&uv) - 0.5 * q, q)
        };
        if self.spec.is_time_homogeneous() {
            let (m, q) = f(a);
            return (m * (b - a), q * (b - a));
        }
        let panels = 8;
        let h = (b - a) / panels as f64;
        let (mut m, mut q) = (0.0, 0.0);
        for k in 0..=panels {
            let w = if k == 0 || k == panels { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            let (mk, qk) = f(a + k as f64 * h);
            m += w * mk;
            q += w * qk;
        }
        (m * h / 3.0, q * h / 3.0)
    }

    /// Exact wealth path observed at regime switches, asset jumps, control
    /// nodes and `n_steps` uniform times.
    pub fn simulate_wealth(
        &self,
        v0: f64,
        state0: &ChainState,
        control: &FeedbackTable,
        n_steps: usize,
        seed: u64,
    ) -> Result<WealthPath> {
        self.check_control(v0, control)?;
        self.wealth_path(v0, state0, control, n_steps, seed, 0, true)
    }

    /// Terminal wealth of `n_paths` independent paths.
    pub fn terminal_wealth(
        &self,
        v0: f64,
        state0: &ChainState,
        control: &FeedbackTable,
        n_paths: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        self.check_control(v0, control)?;
        let out = map_indexed(n_paths, |p| {
            self.wealth_path(v0, state0, control, 0, seed, p, false)
                .map(|w| *w.values.last().expect("nonempty path"))
        });
        out.into_iter().collect()
    }

    /// `E[V_T^{-θ/2}]` under a feedback control.
    pub fn estimate_cost(
        &self,
        v0: f64,
        state0: &ChainState,
        control: &FeedbackTable,
        n_paths: usize,
        seed: u64,
    ) -> Result<McEstimate> {
        check_paths(n_paths)?;
        let half = self.spec.theta / 2.0;
        let samples: Vec<f64> = self
            .terminal_wealth(v0, state0, control, n_paths, seed)?
            .into_iter()
            .map(|v| v.powf(-half))
            .collect();
        Ok(McEstimate::from_samples(&samples, seed))
    }

    /// Cost of the optimal control against each perturbation; a
    /// perturbation fails when it beats the optimum by more than two
    /// combined standard errors.
    pub fn verify_suboptimality(
        &self,
        v0: f64,
        state0: &ChainState,
        perturbations: &[FeedbackTable],
        n_paths: usize,
        seed: u64,
    ) -> Result<SuboptimalityReport> {
        let optimal = FeedbackTable::optimal(&self.table);
        let best = self.estimate_cost(v0, state0, &optimal, n_paths, seed)?;
        let mut entries = Vec::new();
        for c in perturbations {
            let est = self.estimate_cost(v0, state0, c, n_paths, seed)?;
            let se = (best.std_error.powi(2) + est.std_error.powi(2)).sqrt();
            entries.push(PerturbedCost {
                cost: est,
                margin: (est.mean - best.mean) / se.max(f64::MIN_POSITIVE),
                passed: est.mean >= best.mean - 2.0 * se,
            });
        }
        Ok(SuboptimalityReport {
            passed: entries.iter().all(|e| e.passed),
            optimal: best,
            entries,
        })
    }

    fn check_control(&self, v0: f64, control: &FeedbackTable) -> Result<()> {
        if !(v0 > 0.0) {
            return Err(invalid("v0", "initial wealth must be positive"));
        }
        control.check(&self.spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbedCost {
    pub cost: McEstimate,
    /// `(cost - optimal) / combined SE`.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuboptimalityReport {
    pub optimal: McEstimate,
    pub entries: Vec<PerturbedCost>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WealthPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub segments: Vec<PathSegment>,
}

/// Feedback portfolio `u(t, x)`, constant from each node to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackTable {
    /// Increasing, starting at 0.
    pub times: Vec<f64>,
    /// `[node][regime]` portfolio vectors.
    pub values: Vec<Vec<Vec<f64>>>,
}

impl FeedbackTable {
    pub fn constant(regimes: usize, u: Vec<f64>) -> Self {
        Self {
            times: vec![0.0],
            values: vec![vec![u; regimes]],
        }
    }

    /// `u*(t, x)` read from a Hamiltonian table.
    pub fn optimal(table: &HamiltonianTable) -> Self {
        let rows = table.rows();
        let regimes = table.regimes();
        let nodes = rows.len() / regimes;
        let times = rows[..nodes].iter().map(|r| r.0).collect();
        let values = (0..nodes)
            .map(|k| (0..regimes).map(|x| rows[x * nodes + k].3.clone()).collect())
            .collect();
        Self { times, values }
    }

    pub fn at(&self, t: f64, x: usize) -> &[f64] {
        let k = self.times.partition_point(|s| *s <= t + 1e-12).max(1) - 1;
        &self.values[k][x]
    }

    pub fn map<F: Fn(usize, &[f64]) -> Vec<f64>>(&self, f: F) -> Self {
        Self {
            times: self.times.clone(),
            values: self
                .values
                .iter()
                .map(|row| row.iter().enumerate().map(|(x, u)| f(x, u)).collect())
                .collect(),
        }
    }

    pub fn check(&self, spec: &MarketSpec) -> Result<()> {
        if self.times.is_empty() || self.times[0] != 0.0 || self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("control", "node times must start at 0 and increase"));
        }
        for row in &self.values {
            if row.len() != spec.regimes.len() {
                return Err(Error::Dimension {
                    what: "control regimes".into(),
                    expected: spec.regimes.len(),
                    got: row.len(),
                });
            }
            if let Some(u) = row.iter().find(|u| !spec.admissible(u)) {
                return Err(Error::Inadmissible { u: u.clone() });
            }
        }
        Ok(())
    }
}

/// Nearest admissible portfolio to `u` (clamping when there is one asset).
pub fn clip_to_set(spec: &MarketSpec, u: &[f64]) -> Vec<f64> {
    let set = spec.admissible_set();
    if u.len() == 1 {
        let (lo, hi) = set.interval();
        return vec![u[0].clamp(lo, hi)];
    }
    project(&set, &vec![0.0; u.len()], u)
}

/// Sampler of the normalised jump measure: atoms by weight, the density
/// part by inverting a tabulated CDF.
#[derive(Debug, Clone)]
struct MarkSampler {
    continuous_share: f64,
    support: (f64, f64),
    cdf: Vec<f64>,
    atom_cum: Vec<f64>,
    atom_z: Vec<f64>,
}

impl MarkSampler {
    fn new(m: &JumpMeasure) -> Self {
        let total = m.total_mass();
        let (continuous_share, support, cdf) = match &m.continuous {
            Some(c) if c.mass > 0.0 && total > 0.0 => {
                let cdf = match c.shape {
                    DensityShape::Uniform => Vec::new(),
                    _ => {
                        let dz = (c.b - c.a) / (CDF_POINTS - 1) as f64;
                        let mut acc = vec![0.0; CDF_POINTS];
                        let dens = |z: f64| JumpMeasure::raw_density(&c.shape, c.a, c.b, z);
                        for k in 1..CDF_POINTS {
                            let z0 = c.a + (k - 1) as f64 * dz;
                            acc[k] = acc[k - 1] + dz / 6.0 * (dens(z0) + 4.0 * dens(z0 + 0.5 * dz) + dens(z0 + dz));
                        }
                        let top = acc[CDF_POINTS - 1];
                        acc.iter().map(|v| v / top).collect()
                    }
                };
                (c.mass / total, (c.a, c.b), cdf)
            }
            _ => (0.0, (0.0, 0.0), Vec::new()),
        };
        let atom_total: f64 = m.atoms.iter().map(|a| a.weight).sum();
        let mut run = 0.0;
        let atom_cum = m
            .atoms
            .iter()
            .map(|a| {
                run += a.weight / atom_total;
                run
            })
            .collect();
        Self {
            continuous_share,
            support,
            cdf,
            atom_cum,
            atom_z: m.atoms.iter().map(|a| a.z).collect(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let pick: f64 = rng.gen();
        let u: f64 = rng.gen();
        if pick < self.continuous_share || self.atom_z.is_empty() {
            let (a, b) = self.support;
            if self.cdf.is_empty() {
                return a + u * (b - a);
            }
            let k = self.cdf.partition_point(|c| *c <= u).clamp(1, CDF_POINTS - 1);
            let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
            let f = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
            let dz = (b - a) / (CDF_POINTS - 1) as f64;
            return a + (k - 1) as f64 * dz + f * dz;
        }
        let k = self.atom_cum.partition_point(|c| *c <= u).min(self.atom_z.len() - 1);
        self.atom_z[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{AffineJump, Atom, ContinuousPart, JumpSource, PortfolioSet, RegimeCoefficients};

    fn frozen(mu: f64, sigma: f64, r: f64, jumps: Vec<JumpSource>) -> McModel {
        let spec = MarketSpec::new(
            1,
            1,
            1.0,
            RegimeSpace::new(vec![1]),
            vec![RegimeCoefficients::scalar(mu, sigma, r)],
            jumps,
            PortfolioSet::default(),
        )
        .unwrap();
        McModel::new(spec, vec![RegimeChain::frozen()], 1.0).unwrap()
    }

    #[test]
    fn frozen_regime_psi_is_exact() {
        let m = frozen(0.3, 0.2, 0.2, vec![]);
        let est = m.estimate_psi(0.25, &ChainState::single(0, 0.0), 200, 7).unwrap();
        assert_eq!(est.std_error, 0.0);
        assert!((est.mean - (0.75 * m.table.h(0.0, 0)).exp()).abs() < 1e-15);
    }

    #[test]
    fn riskless_wealth_is_deterministic() {
        let m = frozen(0.3, 0.2, 0.2, vec![]);
        let zero = FeedbackTable::constant(1, vec![0.0]);
        let cost = m.estimate_cost(2.0, &ChainState::single(0, 0.0), &zero, 150, 3).unwrap();
        assert_eq!(cost.std_error, 0.0);
        assert!((cost.mean - 2f64.powf(-0.5) * (-0.5 * 0.2f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn reproducible_for_a_seed() {
        let m = McModel::new(MarketSpec::worked_example(1.0, -0.4, 0.4), vec![RegimeChain::worked_example()], 1.0).unwrap();
        let s = ChainState::single(1, 0.0);
        let a = m.estimate_psi(0.0, &s, 500, 11).unwrap();
        let b = m.estimate_psi(0.0, &s, 500, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.mean > 0.0 && a.mean <= 1.0);
    }

    #[test]
    fn wealth_paths_stay_positive_and_hit_jump_epochs() {
        let src = JumpSource {
            measure: JumpMeasure::uniform(-0.4, 0.4, 3.0),
            eta: vec![AffineJump::IDENTITY],
        };
        let m = frozen(0.3, 0.2, 0.2, vec![src]);
        let path = m
            .simulate_wealth(1.0, &ChainState::single(0, 0.0), &FeedbackTable::constant(1, vec![2.0]), 10, 5)
            .unwrap();
        assert!(path.values.iter().all(|v| *v > 0.0));
        assert!(path.times.windows(2).all(|w| w[0] <= w[1]));
        assert!(path.times.len() > 11);
        assert_eq!(*path.times.last().unwrap(), 1.0);
    }

    #[test]
    fn inadmissible_control_is_rejected() {
        let src = JumpSource {
            measure: JumpMeasure::uniform(-0.4, 0.4, 1.0),
            eta: vec![AffineJump::IDENTITY],
        };
        let m = frozen(0.3, 0.2, 0.2, vec![src]);
        let bad = FeedbackTable::constant(1, vec![3.0]);
        assert!(matches!(
            m.estimate_cost(1.0, &ChainState::single(0, 0.0), &bad, 100, 1),
            Err(Error::Inadmissible { .. })
        ));
        assert_eq!(clip_to_set(&m.spec, &[3.0]), vec![0.999 / 0.4]);
    }

    #[test]
    fn marks_follow_the_measure() {
        let m = JumpMeasure {
            continuous: Some(ContinuousPart {
                a: 0.0,
                b: 1.0,
                mass: 1.0,
                shape: DensityShape::Tabulated { values: vec![0.0, 2.0] },
            }),
            atoms: vec![Atom { z: -0.5, weight: 1.0 }],
        };
        let s = MarkSampler::new(&m);
        let mut rng = path_rng(1, 0);
        let draws: Vec<f64> = (0..40_000).map(|_| s.sample(&mut rng)).collect();
        let atoms = draws.iter().filter(|z| **z == -0.5).count() as f64 / draws.len() as f64;
        assert!((atoms - 0.5).abs() < 0.01);
        // density 2z on [0, 1] has mean 2/3
        let cont: Vec<f64> = draws.iter().copied().filter(|z| *z >= 0.0).collect();
        let mean = cont.iter().sum::<f64>() / cont.len() as f64;
        assert!((mean - 2.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn json_record_fields() {
        let e = McEstimate {
            mean: 0.5,
            std_error: 0.01,
            n_paths: 100,
            seed: 4,
        };
        assert_eq!(serde_json::to_string(&e).unwrap(), r#"{"mean":0.5,"se":0.01,"n":100,"seed":4}"#);
    }
}
