//! Age-dependent transition-rate families and their cumulative hazards.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quadrature::composite_simpson;

/// Scalar hazard profile `φ(y)` for rates of the form `λ_ij(y) = φ(y) p_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HazardShape {
    /// `φ(y) = c`.
    Constant { rate: f64 },
    /// `φ(y) = y / (1 + y)`: holding density `y e^{-y}`, CDF `1 - (1 + y) e^{-y}`.
    GammaTwo,
    /// `φ(y) = y - ln(1 + y)`.
    LogGap,
    /// `φ(y) = Σ c_k y^k`.
    Polynomial { coefficients: Vec<f64> },
}

impl HazardShape {
    pub fn value(&self, y: f64) -> f64 {
        match self {
            HazardShape::Constant { rate } => *rate,
            HazardShape::GammaTwo => y / (1.0 + y),
            HazardShape::LogGap => y - y.ln_1p(),
            HazardShape::Polynomial { coefficients } => horner(coefficients, y),
        }
    }

    /// `∫_0^y φ(v) dv`, in closed form.
    pub fn integral(&self, y: f64) -> f64 {
        match self {
            HazardShape::Constant { rate } => rate * y,
            HazardShape::GammaTwo => y - y.ln_1p(),
            // ∫ v - ln(1+v) dv = y²/2 - [(1+y) ln(1+y) - y]
            HazardShape::LogGap => 0.5 * y * y - ((1.0 + y) * y.ln_1p() - y),
            HazardShape::Polynomial { coefficients } => {
                let mut acc = 0.0;
                for (k, c) in coefficients.iter().enumerate().rev() {
                    acc = acc * y + c / (k + 1) as f64;
                }
                acc * y
            }
        }
    }

    fn constant_rate(&self) -> Option<f64> {
        match self {
            HazardShape::Constant { rate } => Some(*rate),
            HazardShape::Polynomial { coefficients } if coefficients.len() == 1 => {
                Some(coefficients[0])
            }
            _ => None,
        }
    }
}

fn horner(c: &[f64], y: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, ci| acc * y + ci)
}

/// Monotone piecewise-cubic (Fritsch–Carlson) interpolant on a uniform grid
/// starting at zero. Held constant past the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(step: f64, values: Vec<f64>) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(invalid("age_step", "must be positive"));
        }
        if values.len() < 2 {
            return Err(invalid("table", "needs at least two nodes"));
        }
        let n = values.len();
        let secant: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]) / step).collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = secant[0];
        slopes[n - 1] = secant[n - 2];
        for i in 1..n - 1 {
            let (a, b) = (secant[i - 1], secant[i]);
            slopes[i] = if a * b <= 0.0 { 0.0 } else { 2.0 / (1.0 / a + 1.0 / b) };
        }
        // endpoint slopes must not overshoot either
        for (i, s) in [(0usize, 0usize), (n - 1, n - 2)] {
            if slopes[i] * secant[s] < 0.0 {
                slopes[i] = 0.0;
            }
        }
        Ok(Self {
            step,
            values,
            slopes,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn last_age(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    pub fn eval(&self, y: f64) -> f64 {
        let n = self.values.len();
        if y >= self.last_age() {
            return self.values[n - 1];
        }
        let y = y.max(0.0);
        let cell = ((y / self.step) as usize).min(n - 2);
        let t = (y - cell as f64 * self.step) / self.step;
        let (v0, v1) = (self.values[cell], self.values[cell + 1]);
        let (d0, d1) = (self.slopes[cell] * self.step, self.slopes[cell + 1] * self.step);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * v0
            + (t3 - 2.0 * t2 + t) * d0
            + (-2.0 * t3 + 3.0 * t2) * v1
            + (t3 - t2) * d1;
        v.max(0.0)
    }
}

/// Tabulated rates `λ_ij` on a shared uniform age grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedRates {
    k: usize,
    // row-major k×k, diagonal entries unused
    curves: Vec<Option<MonotoneCubic>>,
    // cumulative total hazard of each state at the grid nodes
    node_cumulative: Vec<Vec<f64>>,
    // p_ij at the first grid node with positive total hazard
    p_fallback: Vec<Vec<f64>>,
}

impl TabulatedRates {
    /// `tables[i][j]` holds `λ_ij` at ages `0, step, 2 step, ...`; diagonal
    /// tables are ignored and may be empty.
    pub fn new(step: f64, tables: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let k = tables.len();
        let mut curves = Vec::with_capacity(k * k);
        let mut len = None;
        for (i, row) in tables.iter().enumerate() {
            if row.len() != k {
                return Err(invalid("rate table", format!("row {i} has {} entries", row.len())));
            }
            for (j, t) in row.iter().enumerate() {
                if i == j {
                    curves.push(None);
                    continue;
                }
                if t.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(invalid("rate table", format!("entry ({i},{j}) has a negative or non-finite value")));
                }
                match len {
                    None => len = Some(t.len()),
                    Some(l) if l != t.len() => {
                        return Err(invalid("rate table", "all tables must share one age grid"))
                    }
                    _ => {}
                }
                curves.push(Some(MonotoneCubic::new(step, t.clone())?));
            }
        }
        let n = len.unwrap_or(0);
        let mut node_cumulative = vec![vec![0.0; n]; k];
        let mut p_fallback = vec![vec![0.0; k]; k];
        for i in 0..k {
            let total = |y: f64| -> f64 {
                (0..k)
                    .filter(|&j| j != i)
                    .map(|j| curves[i * k + j].as_ref().map_or(0.0, |c| c.eval(y)))
                    .sum()
            };
            for g in 1..n {
                let a = (g - 1) as f64 * step;
                // Simpson is exact on each cubic cell.
                node_cumulative[i][g] = node_cumulative[i][g - 1] + composite_simpson(total, a, a + step, 2);
            }
            if let Some(g) = (0..n).find(|&g| total(g as f64 * step) > 0.0) {
                let y = g as f64 * step;
                let tot = total(y);
                for j in 0..k {
                    if j != i {
                        p_fallback[i][j] = curves[i * k + j].as_ref().map_or(0.0, |c| c.eval(y)) / tot;
                    }
                }
            }
        }
        Ok(Self {
            k,
            curves,
            node_cumulative,
            p_fallback,
        })
    }

    fn rate(&self, i: usize, j: usize, y: f64) -> f64 {
        self.curves[i * self.k + j].as_ref().map_or(0.0, |c| c.eval(y))
    }

    fn total(&self, i: usize, y: f64) -> f64 {
        (0..self.k).filter(|&j| j != i).map(|j| self.rate(i, j, y)).sum()
    }

    fn grid(&self) -> Option<&MonotoneCubic> {
        self.curves.iter().flatten().next()
    }

    fn cumulative(&self, i: usize, y: f64) -> f64 {
        let Some(grid) = self.grid() else { return 0.0 };
        let step = grid.step();
        let nodes = &self.node_cumulative[i];
        let last = grid.last_age();
        if y >= last {
            return nodes[nodes.len() - 1] + (y - last) * self.total(i, last);
        }
        let cell = ((y / step) as usize).min(nodes.len() - 2);
        let a = cell as f64 * step;
        nodes[cell] + composite_simpson(|v| self.total(i, v), a, y, 2)
    }
}

/// How the off-diagonal rates `λ_ij(y)` of a chain are given.
#[derive(Debug, Clone, PartialEq)]
pub enum RateModel {
    /// Single regime that never switches.
    Frozen,
    /// Age-independent rates `c_ij`.
    Constant(Vec<Vec<f64>>),
    /// `λ_ij(y) = φ(y) p_ij` with a row-stochastic `p`.
    Scaled { shape: HazardShape, p: Vec<Vec<f64>> },
    Tabulated(TabulatedRates),
}

impl RateModel {
    pub(crate) fn rate(&self, i: usize, j: usize, y: f64) -> f64 {
        if i == j {
            return 0.0;
        }
        match self {
            RateModel::Frozen => 0.0,
            RateModel::Constant(c) => c[i][j],
            RateModel::Scaled { shape, p } => shape.value(y) * p[i][j],
            RateModel::Tabulated(t) => t.rate(i, j, y),
        }
    }

    pub(crate) fn total(&self, i: usize, y: f64) -> f64 {
        match self {
            RateModel::Frozen => 0.0,
            RateModel::Constant(c) => c[i].iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum(),
            RateModel::Scaled { shape, p } => shape.value(y) * row_mass(&p[i], i),
            RateModel::Tabulated(t) => t.total(i, y),
        }
    }

    pub(crate) fn cumulative(&self, i: usize, y: f64) -> f64 {
        match self {
            RateModel::Frozen => 0.0,
            RateModel::Constant(_) => self.total(i, 0.0) * y,
            RateModel::Scaled { shape, p } => shape.integral(y) * row_mass(&p[i], i),
            RateModel::Tabulated(t) => t.cumulative(i, y),
        }
    }

    /// Total hazard if it does not depend on age.
    pub(crate) fn constant_total(&self, i: usize) -> Option<f64> {
        match self {
            RateModel::Frozen => Some(0.0),
            RateModel::Constant(_) => Some(self.total(i, 0.0)),
            RateModel::Scaled { shape, p } => shape.constant_rate().map(|c| c * row_mass(&p[i], i)),
            RateModel::Tabulated(_) => None,
        }
    }

    /// `p_ij(y)`, with the right limit / first-nonzero-node fallback where
    /// the total hazard vanishes.
    pub(crate) fn jump_prob(&self, i: usize, j: usize, y: f64) -> f64 {
        if i == j {
            return 0.0;
        }
        match self {
            RateModel::Frozen => 0.0,
            RateModel::Scaled { p, .. } => p[i][j] / row_mass(&p[i], i),
            RateModel::Constant(_) => self.rate(i, j, y) / self.total(i, y),
            RateModel::Tabulated(t) => {
                let tot = t.total(i, y);
                if tot > 0.0 {
                    t.rate(i, j, y) / tot
                } else {
                    t.p_fallback[i][j]
                }
            }
        }
    }

    pub(crate) fn scaled_by(&self, factor: f64) -> RateModel {
        match self {
            RateModel::Frozen => RateModel::Frozen,
            RateModel::Constant(c) => RateModel::Constant(
                c.iter().map(|r| r.iter().map(|v| v * factor).collect()).collect(),
            ),
            RateModel::Scaled { shape, p } => RateModel::Scaled {
                shape: shape.clone(),
                p: p.iter().map(|r| r.iter().map(|v| v * factor).collect()).collect(),
            },
            RateModel::Tabulated(t) => {
                let curves = t
                    .curves
                    .iter()
                    .map(|c| {
                        c.as_ref().map(|c| MonotoneCubic {
                            step: c.step,
                            values: c.values.iter().map(|v| v * factor).collect(),
                            slopes: c.slopes.iter().map(|v| v * factor).collect(),
                        })
                    })
                    .collect();
                RateModel::Tabulated(TabulatedRates {
                    k: t.k,
                    curves,
                    node_cumulative: t
                        .node_cumulative
                        .iter()
                        .map(|r| r.iter().map(|v| v * factor).collect())
                        .collect(),
                    p_fallback: t.p_fallback.clone(),
                })
            }
        }
    }
}

pub(crate) fn row_mass(row: &[f64], i: usize) -> f64 {
    row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum()
}
