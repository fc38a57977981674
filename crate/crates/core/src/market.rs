//! Market coefficients per regime, jump structure and the portfolio set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::GaussLegendre;
use crate::semi_markov::{embedded_matrix, RegimeChain};

/// Default `δ` of the jump-safety margin `1 + [u*η(z)]_j ≥ δ`.
pub const DEFAULT_DELTA: f64 = 1e-3;
/// Smallest eigenvalue of `σσ*` accepted as uniformly elliptic.
pub const ELLIPTICITY_FLOOR: f64 = 1e-10;

/// Scalar coefficient as a function of time: a constant, one polynomial, or
/// polynomials on consecutive intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeFn {
    Const(f64),
    Poly {
        poly: Vec<f64>,
    },
    Piecewise {
        /// Interior breakpoints, increasing; piece `i` covers
        /// `[breaks[i-1], breaks[i])`.
        breaks: Vec<f64>,
        pieces: Vec<Vec<f64>>,
    },
}

impl TimeFn {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFn::Const(c) => *c,
            TimeFn::Poly { poly } => poly.iter().rev().fold(0.0, |acc, c| acc * t + c),
            TimeFn::Piecewise { breaks, pieces } => {
                let idx = breaks.partition_point(|b| *b <= t).min(pieces.len() - 1);
                pieces[idx].iter().rev().fold(0.0, |acc, c| acc * t + c)
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            TimeFn::Const(_) => true,
            TimeFn::Poly { poly } => poly.iter().skip(1).all(|c| *c == 0.0),
            TimeFn::Piecewise { pieces, .. } => {
                pieces.windows(2).all(|w| w[0] == w[1]) && pieces.iter().all(|p| p.iter().skip(1).all(|c| *c == 0.0))
            }
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        if let TimeFn::Piecewise { breaks, pieces } = self {
            if pieces.len() != breaks.len() + 1 {
                return Err(invalid(name, "piecewise function needs one more piece than breakpoints"));
            }
            if breaks.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(name, "breakpoints must increase"));
            }
        }
        Ok(())
    }
}

impl From<f64> for TimeFn {
    fn from(v: f64) -> Self {
        TimeFn::Const(v)
    }
}

/// Coefficients of one joint regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeCoefficients {
    pub r: TimeFn,
    pub mu: Vec<TimeFn>,
    /// `n × m1`, row `l` is the volatility vector of asset `l`.
    pub sigma: Vec<Vec<TimeFn>>,
}

impl RegimeCoefficients {
    /// Time-homogeneous single-asset regime `(μ, σ, r)`.
    pub fn scalar(mu: f64, sigma: f64, r: f64) -> Self {
        Self {
            r: r.into(),
            mu: vec![mu.into()],
            sigma: vec![vec![sigma.into()]],
        }
    }
}

/// Shape of the absolutely continuous part of a jump measure on `[a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityShape {
    Uniform,
    TruncatedNormal { mean: f64, std: f64 },
    /// Values on a uniform grid spanning `[a, b]`, linearly interpolated.
    Tabulated { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousPart {
    pub a: f64,
    pub b: f64,
    /// Total mass of this part.
    pub mass: f64,
    pub shape: DensityShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub z: f64,
    pub weight: f64,
}

/// Finite jump measure `ν_j`: a density on a compact interval plus atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpMeasure {
    #[serde(default)]
    pub continuous: Option<ContinuousPart>,
    #[serde(default)]
    pub atoms: Vec<Atom>,
}

impl JumpMeasure {
    /// Uniform measure of total mass `mass` on `[a, b]`.
    pub fn uniform(a: f64, b: f64, mass: f64) -> Self {
        Self {
            continuous: Some(ContinuousPart {
                a,
                b,
                mass,
                shape: DensityShape::Uniform,
            }),
            atoms: Vec::new(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.continuous.as_ref().map_or(0.0, |c| c.mass) + self.atoms.iter().map(|a| a.weight).sum::<f64>()
    }

    /// Support endpoints and atom locations; affine jump maps attain their
    /// extremes over the support at these points.
    pub fn extreme_points(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self.atoms.iter().map(|a| a.z).collect();
        if let Some(c) = &self.continuous {
            pts.push(c.a);
            pts.push(c.b);
        }
        pts
    }

    /// Unnormalised shape function on `[a, b]`.
    pub(crate) fn raw_density(shape: &DensityShape, a: f64, b: f64, z: f64) -> f64 {
        match shape {
            DensityShape::Uniform => 1.0,
            DensityShape::TruncatedNormal { mean, std } => {
                let u = (z - mean) / std;
                (-0.5 * u * u).exp()
            }
            DensityShape::Tabulated { values } => {
                let n = values.len();
                let pos = ((z - a) / (b - a) * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
                let i = (pos as usize).min(n - 2);
                let w = pos - i as f64;
                values[i] * (1.0 - w) + values[i + 1] * w
            }
        }
    }

    /// Quadrature nodes `(z, weight)` for `∫ f dν`: 64-point Gauss–Legendre
    /// on the continuous part plus the atoms.
    pub fn quadrature(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        if let Some(c) = &self.continuous {
            if c.mass > 0.0 && c.b > c.a {
                let gl = GaussLegendre::gl64();
                let norm = match c.shape {
                    DensityShape::Uniform => c.b - c.a,
                    _ => gl.integrate(|z| Self::raw_density(&c.shape, c.a, c.b, z), c.a, c.b),
                };
                for (z, w) in gl.mapped(c.a, c.b) {
                    out.push((z, w * c.mass * Self::raw_density(&c.shape, c.a, c.b, z) / norm));
                }
            }
        }
        out.extend(self.atoms.iter().map(|a| (a.z, a.weight)));
        out
    }

    fn check(&self, j: usize) -> Result<()> {
        let name = format!("jumps[{j}]");
        if let Some(c) = &self.continuous {
            if !(c.b > c.a) || !c.a.is_finite() || !c.b.is_finite() {
                return Err(invalid(&name, "support must be a finite interval a < b"));
            }
            if !(c.mass >= 0.0) || !c.mass.is_finite() {
                return Err(invalid(&name, "mass must be finite and nonnegative"));
            }
            match &c.shape {
                DensityShape::TruncatedNormal { std, .. } if !(*std > 0.0) => {
                    return Err(invalid(&name, "std must be positive"))
                }
                DensityShape::Tabulated { values }
                    if values.len() < 2 || values.iter().any(|v| !(*v >= 0.0)) || values.iter().all(|v| *v == 0.0) =>
                {
                    return Err(invalid(&name, "tabulated density needs ≥ 2 nonnegative values, not all zero"))
                }
                _ => {}
            }
        }
        if self.atoms.iter().any(|a| !(a.weight >= 0.0) || !a.weight.is_finite() || !a.z.is_finite()) {
            return Err(invalid(&name, "atoms need finite locations and nonnegative weights"));
        }
        Ok(())
    }
}

/// Affine jump map `η(z) = scale · z + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineJump {
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub shift: f64,
}

fn one() -> f64 {
    1.0
}

impl AffineJump {
    pub const IDENTITY: AffineJump = AffineJump { scale: 1.0, shift: 0.0 };

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        self.scale * z + self.shift
    }
}

/// Jump source `j`: its measure `ν_j` and the column `η_{·j}` over assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSource {
    pub measure: JumpMeasure,
    pub eta: Vec<AffineJump>,
}

/// Investment range `𝔸` intersected with `𝒰_δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSet {
    /// Per-asset lower bounds, `None` for unbounded. Empty means unbounded.
    #[serde(default)]
    pub lower: Vec<Option<f64>>,
    #[serde(default)]
    pub upper: Vec<Option<f64>>,
    /// Bound `Σ u^l ≤ 1 - c_0`.
    #[serde(default)]
    pub sum_max: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl Default for PortfolioSet {
    fn default() -> Self {
        Self {
            lower: Vec::new(),
            upper: Vec::new(),
            sum_max: None,
            delta: DEFAULT_DELTA,
        }
    }
}

impl PortfolioSet {
    /// Box `[lo, hi]` on every one of `n` assets.
    pub fn boxed(n: usize, lo: f64, hi: f64, delta: f64) -> Self {
        Self {
            lower: vec![Some(lo); n],
            upper: vec![Some(hi); n],
            sum_max: None,
            delta,
        }
    }

    /// Half-spaces `a·u ≤ b` describing `𝔸 ∩ 𝒰_δ`.
    pub fn constraints(&self, n: usize, jumps: &[JumpSource]) -> LinearConstraints {
        let mut rows = Vec::new();
        for l in 0..n {
            if let Some(Some(hi)) = self.upper.get(l) {
                let mut a = vec![0.0; n];
                a[l] = 1.0;
                rows.push((a, *hi));
            }
            if let Some(Some(lo)) = self.lower.get(l) {
                let mut a = vec![0.0; n];
                a[l] = -1.0;
                rows.push((a, -*lo));
            }
        }
        if let Some(s) = self.sum_max {
            rows.push((vec![1.0; n], s));
        }
        for src in jumps {
            for z in src.measure.extreme_points() {
                // 1 + Σ_l u_l η_l(z) ≥ δ
                let a: Vec<f64> = src.eta.iter().map(|e| -e.eval(z)).collect();
                if a.iter().any(|v| *v != 0.0) {
                    rows.push((a, 1.0 - self.delta));
                }
            }
        }
        LinearConstraints { n, rows }
    }

    /// `u ∈ 𝔸₁`: box and sum constraints, and `1 + [u*η(z)]_j ≥ δ` over every
    /// support point of every `ν_j`.
    pub fn contains(&self, u: &[f64], jumps: &[JumpSource]) -> bool {
        u.iter().all(|v| v.is_finite()) && self.constraints(u.len(), jumps).contains(u)
    }
}

/// Polytope `{u : a_i·u ≤ b_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraints {
    pub n: usize,
    pub rows: Vec<(Vec<f64>, f64)>,
}

pub(crate) const FEAS_TOL: f64 = 1e-12;

impl LinearConstraints {
    pub fn contains(&self, u: &[f64]) -> bool {
        self.rows.iter().all(|(a, b)| dot(a, u) <= b + FEAS_TOL * (1.0 + b.abs()))
    }

    /// Interval of feasible values for a single asset (`n == 1`).
    pub fn interval(&self) -> (f64, f64) {
        debug_assert_eq!(self.n, 1);
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (a, b) in &self.rows {
            if a[0] > 0.0 {
                hi = hi.min(b / a[0]);
            } else if a[0] < 0.0 {
                lo = lo.max(b / a[0]);
            }
        }
        (lo, hi)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Joint regime space of several components, flattened row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeSpace {
    pub dims: Vec<usize>,
}

impl RegimeSpace {
    pub fn new(dims: Vec<usize>) -> Self {
        Self { dims }
    }

    pub fn of(chains: &[RegimeChain]) -> Self {
        Self::new(chains.iter().map(RegimeChain::states).collect())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn components(&self) -> usize {
        self.dims.len()
    }

    pub fn flatten(&self, x: &[usize]) -> usize {
        x.iter().zip(&self.dims).fold(0, |acc, (xi, d)| acc * d + xi)
    }

    pub fn unflatten(&self, mut idx: usize) -> Vec<usize> {
        let mut x = vec![0; self.dims.len()];
        for (c, d) in self.dims.iter().enumerate().rev() {
            x[c] = idx % d;
            idx /= d;
        }
        x
    }

    /// Flat index after component `c` moves to state `s`.
    pub fn with_component(&self, idx: usize, c: usize, s: usize) -> usize {
        let stride: usize = self.dims[c + 1..].iter().product();
        let cur = (idx / stride) % self.dims[c];
        idx - cur * stride + s * stride
    }
}

/// Complete market model.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSpec {
    pub n_assets: usize,
    pub brownian_dim: usize,
    pub theta: f64,
    pub regimes: RegimeSpace,
    /// One entry per flattened joint regime.
    pub coefficients: Vec<RegimeCoefficients>,
    pub jumps: Vec<JumpSource>,
    pub constraint: PortfolioSet,
}

impl MarketSpec {
    /// Check dimensions and parameter domains (not the model assumptions;
    /// see [`validate`]).
    pub fn new(
        n_assets: usize,
        brownian_dim: usize,
        theta: f64,
        regimes: RegimeSpace,
        coefficients: Vec<RegimeCoefficients>,
        jumps: Vec<JumpSource>,
        constraint: PortfolioSet,
    ) -> Result<Self> {
        if n_assets == 0 {
            return Err(invalid("assets", "need at least one risky asset"));
        }
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(invalid("theta", "risk aversion must be positive"));
        }
        if coefficients.len() != regimes.len() {
            return Err(Error::Dimension {
                what: "regime coefficients".into(),
                expected: regimes.len(),
                got: coefficients.len(),
            });
        }
        for (x, c) in coefficients.iter().enumerate() {
            if c.mu.len() != n_assets || c.sigma.len() != n_assets {
                return Err(Error::Dimension {
                    what: format!("regime {x} drift/volatility rows"),
                    expected: n_assets,
                    got: c.mu.len().min(c.sigma.len()),
                });
            }
            if let Some(row) = c.sigma.iter().find(|row| row.len() != brownian_dim) {
                return Err(Error::Dimension {
                    what: format!("regime {x} volatility columns"),
                    expected: brownian_dim,
                    got: row.len(),
                });
            }
            c.r.check("r")?;
            c.mu.iter().try_for_each(|f| f.check("mu"))?;
            c.sigma.iter().flatten().try_for_each(|f| f.check("sigma"))?;
        }
        for (j, src) in jumps.iter().enumerate() {
            src.measure.check(j)?;
            if src.eta.len() != n_assets {
                return Err(Error::Dimension {
                    what: format!("jumps[{j}].eta"),
                    expected: n_assets,
                    got: src.eta.len(),
                });
            }
        }
        let c = &constraint;
        if (!c.lower.is_empty() && c.lower.len() != n_assets) || (!c.upper.is_empty() && c.upper.len() != n_assets) {
            return Err(invalid("constraint", "bounds must list every asset"));
        }
        if !(c.delta > 0.0 && c.delta <= 1.0) {
            return Err(invalid("delta", "must lie in (0, 1]"));
        }
        Ok(Self {
            n_assets,
            brownian_dim,
            theta,
            regimes,
            coefficients,
            jumps,
            constraint,
        })
    }

    /// Single-asset, single-driver market of the worked example:
    /// `(μ, σ, r)` per regime from the table, `η(z) = z`, `ν` uniform
    /// probability on `[a, b]`, box `[-5, 5]`.
    pub fn worked_example(theta: f64, a: f64, b: f64) -> Self {
        let coefficients = vec![
            RegimeCoefficients::scalar(0.3, 0.2, 0.2),
            RegimeCoefficients::scalar(0.6, 0.4, 0.5),
            RegimeCoefficients::scalar(0.8, 0.3, 0.7),
        ];
        Self::new(
            1,
            1,
            theta,
            RegimeSpace::new(vec![3]),
            coefficients,
            vec![JumpSource {
                measure: JumpMeasure::uniform(a, b, 1.0),
                eta: vec![AffineJump::IDENTITY],
            }],
            PortfolioSet::boxed(1, -5.0, 5.0, DEFAULT_DELTA),
        )
        .expect("valid preset")
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        let mut s = self.clone();
        if !(theta > 0.0) {
            return Err(invalid("theta", "risk aversion must be positive"));
        }
        s.theta = theta;
        Ok(s)
    }

    pub fn is_time_homogeneous(&self) -> bool {
        self.coefficients.iter().all(|c| {
            c.r.is_constant() && c.mu.iter().all(TimeFn::is_constant) && c.sigma.iter().flatten().all(TimeFn::is_constant)
        })
    }

    pub fn rate(&self, t: f64, x: usize) -> f64 {
        self.coefficients[x].r.eval(t)
    }

    /// `b(t, x) = μ(t, x) - r(t, x)` componentwise.
    pub fn excess_drift(&self, t: f64, x: usize) -> DVector<f64> {
        let c = &self.coefficients[x];
        let r = c.r.eval(t);
        DVector::from_iterator(self.n_assets, c.mu.iter().map(|m| m.eval(t) - r))
    }

    pub fn volatility(&self, t: f64, x: usize) -> DMatrix<f64> {
        let c = &self.coefficients[x];
        DMatrix::from_fn(self.n_assets, self.brownian_dim, |l, k| c.sigma[l][k].eval(t))
    }

    /// `a(t, x) = σ σ*`.
    pub fn diffusion_matrix(&self, t: f64, x: usize) -> DMatrix<f64> {
        let s = self.volatility(t, x);
        &s * s.transpose()
    }

    pub fn admissible_set(&self) -> LinearConstraints {
        self.constraint.constraints(self.n_assets, &self.jumps)
    }

    pub fn admissible(&self, u: &[f64]) -> bool {
        u.len() == self.n_assets && self.constraint.contains(u, &self.jumps)
    }
}

/// One named check in a validation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &str, failures: Vec<String>, ok: &str) {
        let passed = failures.is_empty();
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: if passed { ok.to_string() } else { failures.join("; ") },
        });
    }
}

/// Check the model assumptions on `[0, horizon]`: positive rate, jump sizes
/// above -1, finite jump measures, uniform ellipticity of `σσ*`, an
/// admissible origin, and per-chain hazard and irreducibility conditions.
pub fn validate(spec: &MarketSpec, chains: &[RegimeChain], horizon: f64) -> ValidationReport {
    let mut report = ValidationReport { checks: Vec::new() };
    let times: Vec<f64> = (0..=8).map(|i| horizon.max(0.0) * i as f64 / 8.0).collect();

    let mut dims = Vec::new();
    if RegimeSpace::of(chains) != spec.regimes {
        dims.push(format!(
            "chains give regime dims {:?}, market expects {:?}",
            RegimeSpace::of(chains).dims,
            spec.regimes.dims
        ));
    }
    if spec.brownian_dim < spec.n_assets {
        dims.push(format!("brownian dimension {} < asset count {}", spec.brownian_dim, spec.n_assets));
    }
    report.push("dimensions", dims, "consistent");

    let mut rates = Vec::new();
    for x in 0..spec.regimes.len() {
        for &t in &times {
            let r = spec.rate(t, x);
            if !(r >= 0.0) {
                rates.push(format!("r({t}, {x}) = {r} is negative"));
            }
        }
    }
    report.push("interest rate", rates, "nonnegative on the time grid");

    let mut jumps = Vec::new();
    for (j, src) in spec.jumps.iter().enumerate() {
        let mass = src.measure.total_mass();
        if !mass.is_finite() {
            jumps.push(format!("ν_{j} has infinite mass"));
        }
        for z in src.measure.extreme_points() {
            for (l, e) in src.eta.iter().enumerate() {
                if !(e.eval(z) > -1.0) {
                    jumps.push(format!("η_{l}{j}({z}) = {} ≤ -1", e.eval(z)));
                }
            }
        }
    }
    report.push("A1/A2 jump sizes", jumps, "η > -1 on every support, ν finite");

    let mut ellip = Vec::new();
    let mut floor = f64::INFINITY;
    for x in 0..spec.regimes.len() {
        for &t in &times {
            let a = spec.diffusion_matrix(t, x);
            let min_eig = a.symmetric_eigenvalues().min();
            floor = floor.min(min_eig);
            if !(min_eig >= ELLIPTICITY_FLOOR) {
                ellip.push(format!("min eigenvalue of a({t}, {x}) is {min_eig:e}"));
            }
        }
    }
    report.push("A3 ellipticity", ellip, &format!("δ₁ = {floor:e}"));

    let mut origin = Vec::new();
    if !spec.admissible(&vec![0.0; spec.n_assets]) {
        origin.push("origin is not admissible".into());
    }
    if !(spec.theta > 0.0) {
        origin.push("theta must be positive".into());
    }
    report.push("portfolio set", origin, "contains the origin");

    for (c, chain) in chains.iter().enumerate() {
        report.push(&format!("chain {c} hazards"), chain.diagnostics(), "positive, unbounded cumulative hazard");
        let emb = embedded_matrix(chain);
        let fail = if emb.irreducible {
            Vec::new()
        } else {
            vec![format!("A4: embedded jump matrix {:?} is reducible", emb.matrix)]
        };
        report.push(&format!("chain {c} A4 irreducibility"), fail, "irreducible");
    }
    report
}
