//! JSON run configuration: market, chains, numerics, probes, sweeps, outputs.

use std::path::{Path, PathBuf};

use riskswitch::hamiltonian::DEFAULT_TABLE_CELLS;
use riskswitch::market::{JumpSource, MarketSpec, PortfolioSet, RegimeCoefficients, RegimeSpace};
use riskswitch::semi_markov::{ChainState, HazardShape, RateModel, RegimeChain, TabulatedRates};
use riskswitch::volterra::{MAX_SWEEPS, PICARD_TOL};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketConfig,
    pub chains: Vec<ChainConfig>,
    pub numerics: Numerics,
    #[serde(default)]
    pub probe: Probe,
    /// Points compared by `oracle`; empty means every regime at age zero.
    #[serde(default)]
    pub oracle_points: Vec<Point>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub residual: ResidualConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    #[serde(default = "one")]
    pub assets: usize,
    /// Defaults to the number of assets.
    #[serde(default)]
    pub brownian_dim: Option<usize>,
    pub theta: f64,
    /// One entry per joint regime, last component varying fastest.
    pub regimes: Vec<RegimeCoefficients>,
    #[serde(default)]
    pub jumps: Vec<JumpSource>,
    #[serde(default)]
    pub constraint: PortfolioSet,
}

/// Rates of one regime component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChainConfig {
    /// One regime, no switching.
    Frozen,
    /// Age-independent rates `λ_ij = c_ij`.
    Constant { rates: Vec<Vec<f64>> },
    /// `λ_ij(y) = φ(y) p_ij`.
    Scaled { shape: HazardShape, p: Vec<Vec<f64>> },
    /// `λ_ij` tabulated at ages `0, step, 2 step, ...`.
    Tabulated { step: f64, tables: Vec<Vec<Vec<f64>>> },
}

impl ChainConfig {
    pub fn build(&self) -> riskswitch::Result<RegimeChain> {
        match self {
            ChainConfig::Frozen => Ok(RegimeChain::frozen()),
            ChainConfig::Constant { rates } => RegimeChain::new(rates.len(), RateModel::Constant(rates.clone())),
            ChainConfig::Scaled { shape, p } => RegimeChain::new(
                p.len(),
                RateModel::Scaled {
                    shape: shape.clone(),
                    p: p.clone(),
                },
            ),
            ChainConfig::Tabulated { step, tables } => {
                RegimeChain::new(tables.len(), RateModel::Tabulated(TabulatedRates::new(*step, tables.clone())?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    pub horizon: f64,
    pub dt: f64,
    /// Age step of the general solver; defaults to `dt`.
    #[serde(default)]
    pub y_step: Option<f64>,
    /// Largest age node of the general solver; defaults to the horizon.
    #[serde(default)]
    pub y_max: Option<f64>,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_sweeps")]
    pub max_sweeps: usize,
    /// Cells of the Hamiltonian table for time-dependent coefficients.
    #[serde(default = "default_cells")]
    pub table_cells: usize,
}

/// Initial wealth and starting state for `φ̃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    #[serde(default = "one_f")]
    pub v: f64,
    /// Per-component regimes; empty means all zero.
    #[serde(default)]
    pub state: Vec<usize>,
    /// Per-component ages; empty means all zero.
    #[serde(default)]
    pub age: Vec<f64>,
}

impl Default for Probe {
    fn default() -> Self {
        Self {
            v: 1.0,
            state: Vec::new(),
            age: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    pub state: Vec<usize>,
    pub age: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_v")]
    pub v: Vec<f64>,
    #[serde(default = "default_horizons")]
    pub horizon: Vec<f64>,
    #[serde(default = "default_thetas")]
    pub theta: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            v: default_v(),
            horizon: default_horizons(),
            theta: default_thetas(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualConfig {
    /// Random interior probe points.
    #[serde(default = "default_points")]
    pub points: usize,
    /// Difference step as a multiple of `dt`.
    #[serde(default = "default_eps_ratio")]
    pub eps_ratio: f64,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        Self {
            points: default_points(),
            eps_ratio: default_eps_ratio(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub psi: Option<PathBuf>,
    #[serde(default)]
    pub oracle: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Option<PathBuf>,
    #[serde(default)]
    pub residual: Option<PathBuf>,
    /// Ages written by a reduced solve.
    #[serde(default = "default_ages")]
    pub ages: Vec<f64>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            psi: None,
            oracle: None,
            sweep: None,
            residual: None,
            ages: default_ages(),
        }
    }
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn default_paths() -> usize {
    100_000
}
fn default_tol() -> f64 {
    PICARD_TOL
}
fn default_sweeps() -> usize {
    MAX_SWEEPS
}
fn default_cells() -> usize {
    DEFAULT_TABLE_CELLS
}
fn default_v() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0]
}
fn default_horizons() -> Vec<f64> {
    vec![0.25, 0.5, 0.75, 1.0]
}
fn default_thetas() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0]
}
fn default_points() -> usize {
    10
}
fn default_eps_ratio() -> f64 {
    5.0
}
fn default_ages() -> Vec<f64> {
    vec![0.0]
}

/// A parsed configuration with its model built and checked for shape.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: RunConfig,
    pub spec: MarketSpec,
    pub chains: Vec<RegimeChain>,
    /// First 16 hex digits of the SHA-256 of the resolved configuration.
    pub hash: String,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    /// Hash of the canonical serialization, so formatting does not matter.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&canonical)[..8])
    }

    pub fn build_chains(&self) -> riskswitch::Result<Vec<RegimeChain>> {
        self.chains.iter().map(ChainConfig::build).collect()
    }

    pub fn build_market(&self, chains: &[RegimeChain]) -> riskswitch::Result<MarketSpec> {
        let m = &self.market;
        MarketSpec::new(
            m.assets,
            m.brownian_dim.unwrap_or(m.assets),
            m.theta,
            RegimeSpace::of(chains),
            m.regimes.clone(),
            m.jumps.clone(),
            m.constraint.clone(),
        )
    }

    pub fn build(self) -> Result<Problem, CliError> {
        let chains = self.build_chains()?;
        let spec = self.build_market(&chains)?;
        let hash = self.hash();
        Ok(Problem {
            config: self,
            spec,
            chains,
            hash,
        })
    }
}

impl Problem {
    pub fn components(&self) -> usize {
        self.chains.len()
    }

    /// The configured probe with empty fields filled by zeros.
    pub fn probe_state(&self) -> Result<ChainState, CliError> {
        let p = &self.config.probe;
        self.point(&Point {
            state: p.state.clone(),
            age: p.age.clone(),
        })
    }

    pub fn point(&self, p: &Point) -> Result<ChainState, CliError> {
        let n = self.components();
        let x = if p.state.is_empty() { vec![0; n] } else { p.state.clone() };
        let y = if p.age.is_empty() { vec![0.0; n] } else { p.age.clone() };
        let state = ChainState::new(x, y);
        state.validate(&self.chains)?;
        Ok(state)
    }

    /// Configured oracle points, or every regime at age zero.
    pub fn oracle_points(&self) -> Result<Vec<ChainState>, CliError> {
        if self.config.oracle_points.is_empty() {
            let regimes = RegimeSpace::of(&self.chains);
            return Ok((0..regimes.len())
                .map(|x| ChainState::new(regimes.unflatten(x), vec![0.0; regimes.components()]))
                .collect());
        }
        self.config.oracle_points.iter().map(|p| self.point(p)).collect()
    }
}
