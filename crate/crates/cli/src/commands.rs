use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskswitch::hamiltonian::HamiltonianTable;
use riskswitch::market::{validate, Check, MarketSpec, RegimeSpace};
use riskswitch::mc_oracle::McModel;
use riskswitch::semi_markov::ChainState;
use riskswitch::volterra::{
    optimal_wealth, pde_residual, solve_general, solve_reduced, step_count, GeneralOptions, GeneralSolution, Mode,
    PsiField, PsiGrid, ReducedSolution,
};
use serde::Serialize;

use crate::config::{Problem, RunConfig};
use crate::{CliError, LOW_PRECISION_SE, VERSION};

/// Largest oracle z-score accepted.
pub const Z_LIMIT: f64 = 3.0;
/// Smallest accepted residual reduction when `(ε, Δt)` are halved.
pub const REFINEMENT_FACTOR: f64 = 1.7;

/// Command-line values that take precedence over the config file. They are
/// applied before hashing, so the hash describes what actually ran.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(dt) = self.dt {
            cfg.numerics.dt = dt;
        }
        if let Some(seed) = self.seed {
            cfg.numerics.seed = seed;
        }
        if let Some(n) = self.paths {
            cfg.numerics.n_paths = n;
        }
    }
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Problem, CliError> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg);
    cfg.build()
}

pub enum Solved {
    Reduced(ReducedSolution),
    General(GeneralSolution),
}

impl Solved {
    pub fn field(&self) -> &dyn PsiField {
        match self {
            Solved::Reduced(s) => s,
            Solved::General(s) => s,
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Solved::Reduced(_) => Mode::Reduced,
            Solved::General(_) => Mode::General,
        }
    }

    /// Tabulated values; `ages` only applies to the reduced scheme.
    pub fn grid(&self, ages: &[f64]) -> PsiGrid {
        match self {
            Solved::Reduced(s) => s.to_grid(ages),
            Solved::General(s) => s.grid.clone(),
        }
    }
}

/// Solve for `ψ` with the given market and horizon. Without an explicit
/// mode, a single chain uses the reduced scheme and several chains the
/// general one.
pub fn solve(
    problem: &Problem,
    spec: &MarketSpec,
    horizon: f64,
    dt: f64,
    mode: Option<Mode>,
) -> Result<(HamiltonianTable, Solved), CliError> {
    let n = problem.numerics_cells();
    let table = HamiltonianTable::build(spec, horizon, n)?;
    let mode = mode.unwrap_or(if problem.components() == 1 {
        Mode::Reduced
    } else {
        Mode::General
    });
    let solved = match mode {
        Mode::Reduced => {
            if problem.components() != 1 {
                return Err(CliError::Usage(format!(
                    "the reduced scheme needs a single chain, the config has {}",
                    problem.components()
                )));
            }
            Solved::Reduced(solve_reduced(&table, &problem.chains[0], horizon, dt)?)
        }
        Mode::General => {
            let num = &problem.config.numerics;
            let opts = GeneralOptions {
                y_step: num.y_step,
                y_max: num.y_max,
                tol: num.picard_tol,
                max_sweeps: num.max_sweeps,
            };
            let sol = solve_general(&table, &problem.chains, horizon, dt, &opts)?;
            log::info!(
                "general solver: {} sweeps, contraction {:.3}, final change {:e}",
                sol.sweeps,
                sol.contraction,
                sol.changes.last().copied().unwrap_or(0.0)
            );
            Solved::General(sol)
        }
    };
    Ok((table, solved))
}

impl Problem {
    fn numerics_cells(&self) -> usize {
        self.config.numerics.table_cells
    }

    fn metadata(&self) -> String {
        format!(
            "config_hash={} seed={} version={}",
            self.hash, self.config.numerics.seed, VERSION
        )
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn label(state: &ChainState) -> String {
    format!("{}@{}", join(&state.x), join(&state.y))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

#[derive(Debug, Serialize)]
struct ValidationOutput<'a> {
    config_hash: String,
    passed: bool,
    checks: &'a [Check],
}

/// Build the model and check its assumptions. Prints a JSON report; an
/// error carries the failed check names.
pub fn cmd_validate(config: RunConfig, out: &mut dyn Write) -> Result<Vec<Check>, CliError> {
    let hash = config.hash();
    let horizon = config.numerics.horizon;
    let checks = match config.build() {
        Ok(p) => validate(&p.spec, &p.chains, horizon).checks,
        Err(e) => vec![Check {
            name: "model".into(),
            passed: false,
            detail: e.to_string(),
        }],
    };
    let passed = checks.iter().all(|c| c.passed);
    let report = ValidationOutput {
        config_hash: hash,
        passed,
        checks: &checks,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    writeln!(out, "{json}").map_err(io_err)?;
    if passed {
        Ok(checks)
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::Validation(failed.join(", ")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub mode: Mode,
    pub steps: usize,
    pub rows_per_state: usize,
    pub phi: f64,
    pub psi: f64,
    /// Largest in-domain difference from the reduced scheme, when the
    /// general solver ran on a single chain.
    pub cross_check: Option<f64>,
    pub path: PathBuf,
}

pub fn cmd_solve(
    problem: &Problem,
    mode: Option<Mode>,
    out_path: Option<&Path>,
    checkpoint: Option<&Path>,
    out: &mut dyn Write,
) -> Result<SolveReport, CliError> {
    let num = &problem.config.numerics;
    let (table, solved) = solve(problem, &problem.spec, num.horizon, num.dt, mode)?;
    let probe = problem.probe_state()?;
    let regimes = RegimeSpace::of(&problem.chains);
    let x = regimes.flatten(&probe.x);
    let field = solved.field();
    let psi = field.psi(0.0, x, &probe.y);
    let phi = optimal_wealth(field, problem.spec.theta, problem.config.probe.v, x, &probe.y)?;

    let grid = solved.grid(&problem.config.output.ages);
    let cross_check = match (&solved, problem.components()) {
        (Solved::General(_), 1) => {
            let red = solve_reduced(&table, &problem.chains[0], num.horizon, num.dt)?;
            let mut worst = 0.0f64;
            for m in 0..=grid.steps {
                for i in 0..regimes.len() {
                    for (a, &y) in grid.ages.iter().enumerate() {
                        if y <= grid.time(m) + 1e-12 {
                            worst = worst.max((grid.value(m, i, &[a]) - red.psi_step(m, i, y)).abs());
                        }
                    }
                }
            }
            log::info!("general vs reduced: max difference {worst:e}");
            Some(worst)
        }
        _ => None,
    };

    let path = out_path
        .map(Path::to_path_buf)
        .or_else(|| problem.config.output.psi.clone())
        .unwrap_or_else(|| PathBuf::from("psi.csv"));
    let comments = vec![
        problem.metadata(),
        format!(
            "mode={:?} steps={} dt={} theta={}",
            solved.mode(),
            grid.steps,
            grid.dt,
            problem.spec.theta
        )
        .to_lowercase(),
        format!(
            "phi={phi} v={} state={} y={}",
            problem.config.probe.v,
            join(&probe.x),
            join(&probe.y)
        ),
    ];
    let mut buf = Vec::new();
    grid.write_csv(&mut buf, &comments)?;
    write_file(&path, &buf)?;
    if let Some(cp) = checkpoint {
        let mut bytes = Vec::new();
        grid.write_checkpoint(&mut bytes)?;
        write_file(cp, &bytes)?;
    }

    let mut text = String::new();
    writeln!(text, "regime,t,h,u").unwrap();
    let times: Vec<f64> = if table.is_homogeneous() {
        vec![0.0]
    } else {
        vec![0.0, 0.5 * num.horizon, num.horizon]
    };
    for &t in &times {
        for xi in 0..regimes.len() {
            writeln!(text, "{},{t},{:.10},{}", join(&regimes.unflatten(xi)), table.h(t, xi), join(table.control(t, xi))).unwrap();
        }
    }
    writeln!(text, "psi(0)={psi:.12} phi={phi:.12}").unwrap();
    if let Some(c) = cross_check {
        writeln!(text, "general vs reduced max difference {c:.3e}").unwrap();
    }
    writeln!(text, "wrote {}", path.display()).unwrap();
    out.write_all(text.as_bytes()).map_err(io_err)?;

    let ages_per_state = grid.ages.len().pow(regimes.components() as u32);
    Ok(SolveReport {
        mode: solved.mode(),
        steps: grid.steps,
        rows_per_state: (grid.steps + 1) * ages_per_state,
        phi,
        psi,
        cross_check,
        path,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub point: String,
    pub psi_solver: f64,
    pub psi_mc: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    pub max_z: f64,
    pub low_precision: bool,
    pub path: PathBuf,
}

/// Compare the solver against Monte Carlo at the configured points.
pub fn cmd_oracle(
    problem: &Problem,
    mode: Option<Mode>,
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<OracleReport, CliError> {
    let num = &problem.config.numerics;
    let (table, solved) = solve(problem, &problem.spec, num.horizon, num.dt, mode)?;
    let model = McModel::with_table(problem.spec.clone(), problem.chains.clone(), num.horizon, table)?;
    let regimes = RegimeSpace::of(&problem.chains);
    let mut rows = Vec::new();
    for state in problem.oracle_points()? {
        let solver = solved.field().psi(0.0, regimes.flatten(&state.x), &state.y);
        let est = model.estimate_psi(0.0, &state, num.n_paths, num.seed)?;
        rows.push(OracleRow {
            point: label(&state),
            psi_solver: solver,
            psi_mc: est.mean,
            se: est.std_error,
            z: est.z_score(solver, 0.0),
        });
    }
    let max_z = rows.iter().map(|r| r.z).fold(0.0, f64::max);
    let max_se = rows.iter().map(|r| r.se).fold(0.0, f64::max);
    let low_precision = max_se > LOW_PRECISION_SE;

    let mut csv = format!("# {}\n# paths={}\n", problem.metadata(), num.n_paths);
    if low_precision {
        log::warn!("low precision: standard error {max_se:.3e} exceeds {LOW_PRECISION_SE}; increase --paths");
        writeln!(csv, "# warning: low precision, max se {max_se:e} > {LOW_PRECISION_SE}").unwrap();
    }
    csv.push_str("point,psi_solver,psi_mc,se,z\n");
    for r in &rows {
        writeln!(csv, "{},{},{},{},{}", r.point, r.psi_solver, r.psi_mc, r.se, r.z).unwrap();
    }
    let path = out_path
        .map(Path::to_path_buf)
        .or_else(|| problem.config.output.oracle.clone())
        .unwrap_or_else(|| PathBuf::from("oracle.csv"));
    write_file(&path, csv.as_bytes())?;

    let mut text = String::new();
    for r in &rows {
        writeln!(
            text,
            "{:>12}  solver {:.8}  mc {:.8} ± {:.2e}  z {:.2}",
            r.point, r.psi_solver, r.psi_mc, r.se, r.z
        )
        .unwrap();
    }
    if low_precision {
        writeln!(text, "warning: low precision (max se {max_se:.3e} > {LOW_PRECISION_SE})").unwrap();
    }
    out.write_all(text.as_bytes()).map_err(io_err)?;

    Ok(OracleReport {
        rows,
        max_z,
        low_precision,
        path,
    })
}

impl OracleReport {
    pub fn check(&self) -> Result<(), CliError> {
        if self.max_z > Z_LIMIT {
            return Err(CliError::Violation(format!("oracle |z| = {:.2} exceeds {Z_LIMIT}", self.max_z)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    V,
    T,
    Theta,
}

impl std::str::FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "v" => Ok(Axis::V),
            "T" | "t" | "horizon" => Ok(Axis::T),
            "theta" => Ok(Axis::Theta),
            other => Err(CliError::Usage(format!("unknown sweep axis `{other}` (expected v, T or theta)"))),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::V => "v",
            Axis::T => "T",
            Axis::Theta => "theta",
        }
    }

    /// Expected direction of `φ̃` along the axis: `+1` increasing, `-1`
    /// decreasing.
    pub fn direction(self) -> f64 {
        match self {
            Axis::Theta => -1.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub phi: Vec<f64>,
    /// Indices `k` where the step from `k` to `k + 1` has the wrong sign.
    pub violations: Vec<usize>,
    pub path: PathBuf,
}

/// `φ̃` along one axis. `v` reuses a single solve; `T` and `θ` re-solve.
pub fn cmd_sweep(
    problem: &Problem,
    axis: Axis,
    mode: Option<Mode>,
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<SweepReport, CliError> {
    let cfg = &problem.config;
    let num = &cfg.numerics;
    let probe = problem.probe_state()?;
    let x = RegimeSpace::of(&problem.chains).flatten(&probe.x);
    let v0 = cfg.probe.v;
    let values = match axis {
        Axis::V => cfg.sweep.v.clone(),
        Axis::T => cfg.sweep.horizon.clone(),
        Axis::Theta => cfg.sweep.theta.clone(),
    };
    if values.len() < 2 {
        return Err(CliError::Usage(format!("sweep over {} needs at least two values", axis.name())));
    }
    if values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(CliError::Usage(format!("sweep values for {} must increase", axis.name())));
    }
    let phi: Vec<f64> = match axis {
        Axis::V => {
            let (_, solved) = solve(problem, &problem.spec, num.horizon, num.dt, mode)?;
            values
                .iter()
                .map(|&v| optimal_wealth(solved.field(), problem.spec.theta, v, x, &probe.y))
                .collect::<riskswitch::Result<_>>()?
        }
        Axis::T => values
            .iter()
            .map(|&t| {
                let (_, solved) = solve(problem, &problem.spec, t, num.dt, mode)?;
                Ok(optimal_wealth(solved.field(), problem.spec.theta, v0, x, &probe.y)?)
            })
            .collect::<Result<_, CliError>>()?,
        Axis::Theta => values
            .iter()
            .map(|&th| {
                let spec = problem.spec.with_theta(th)?;
                let (_, solved) = solve(problem, &spec, num.horizon, num.dt, mode)?;
                Ok(optimal_wealth(solved.field(), th, v0, x, &probe.y)?)
            })
            .collect::<Result<_, CliError>>()?,
    };
    let violations: Vec<usize> = phi
        .windows(2)
        .enumerate()
        .filter(|(_, w)| !(axis.direction() * (w[1] - w[0]) > 0.0))
        .map(|(k, _)| k)
        .collect();

    let mut csv = format!("# {}\n", problem.metadata());
    csv.push_str("axis,value,phi\n");
    for (v, p) in values.iter().zip(&phi) {
        writeln!(csv, "{},{v},{p}", axis.name()).unwrap();
    }
    let path = out_path
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.sweep.clone())
        .unwrap_or_else(|| PathBuf::from("sweep.csv"));
    write_file(&path, csv.as_bytes())?;
    let mut text = String::new();
    for (v, p) in values.iter().zip(&phi) {
        writeln!(text, "{} = {v:<8} phi = {p:.10}", axis.name()).unwrap();
    }
    out.write_all(text.as_bytes()).map_err(io_err)?;

    Ok(SweepReport {
        axis,
        values,
        phi,
        violations,
        path,
    })
}

impl SweepReport {
    pub fn check(&self) -> Result<(), CliError> {
        if !self.violations.is_empty() {
            let want = if self.axis.direction() > 0.0 { "increasing" } else { "decreasing" };
            return Err(CliError::Violation(format!(
                "phi is not strictly {want} in {} at steps {:?}",
                self.axis.name(),
                self.violations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualRow {
    pub t: f64,
    pub state: Vec<usize>,
    pub age: Vec<f64>,
    pub coarse: f64,
    pub fine: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub eps: f64,
    pub dt: f64,
    pub rows: Vec<ResidualRow>,
    pub min_ratio: f64,
    pub path: PathBuf,
}

/// Residual of the first-order equation at random interior points, at
/// `(ε, Δt)` and at half of both.
pub fn cmd_residual(
    problem: &Problem,
    mode: Option<Mode>,
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<ResidualReport, CliError> {
    let cfg = &problem.config;
    let num = &cfg.numerics;
    let (steps, dt) = step_count(num.horizon, num.dt)?;
    let eps = cfg.residual.eps_ratio * dt;
    let last = ((num.horizon - eps) / dt + 1e-9).floor() as usize;
    if steps == 0 || last < 1 || !(eps > 0.0) {
        return Err(CliError::Usage("horizon too short for the residual probe".into()));
    }
    let (table, coarse) = solve(problem, &problem.spec, num.horizon, dt, mode)?;
    let (_, fine) = solve(problem, &problem.spec, num.horizon, 0.5 * dt, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(num.seed);
    let mut rows = Vec::with_capacity(cfg.residual.points);
    for _ in 0..cfg.residual.points {
        let t = rng.gen_range(1..=last) as f64 * dt;
        let state: Vec<usize> = problem.chains.iter().map(|c| rng.gen_range(0..c.states())).collect();
        let age: Vec<f64> = problem.chains.iter().map(|_| rng.gen_range(0.0..t)).collect();
        let r0 = pde_residual(coarse.field(), &table, &problem.chains, t, &state, &age, eps)?;
        let r1 = pde_residual(fine.field(), &table, &problem.chains, t, &state, &age, 0.5 * eps)?;
        rows.push(ResidualRow {
            t,
            state,
            age,
            coarse: r0,
            fine: r1,
            ratio: r0.abs() / r1.abs(),
        });
    }
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);

    let mut csv = format!("# {}\n# eps={eps} dt={dt}\n", problem.metadata());
    csv.push_str("point,t,state,y,residual_coarse,residual_fine,ratio\n");
    for (k, r) in rows.iter().enumerate() {
        writeln!(csv, "{k},{},{},{},{},{},{}", r.t, join(&r.state), join(&r.age), r.coarse, r.fine, r.ratio).unwrap();
    }
    let path = out_path
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.residual.clone())
        .unwrap_or_else(|| PathBuf::from("residual.csv"));
    write_file(&path, csv.as_bytes())?;
    let mut text = String::new();
    for r in &rows {
        writeln!(
            text,
            "t={:.3} state={} y={}  {:.3e} -> {:.3e}  ratio {:.2}",
            r.t,
            join(&r.state),
            join(&r.age.iter().map(|y| format!("{y:.3}")).collect::<Vec<_>>()),
            r.coarse,
            r.fine,
            r.ratio
        )
        .unwrap();
    }
    out.write_all(text.as_bytes()).map_err(io_err)?;

    Ok(ResidualReport {
        eps,
        dt,
        rows,
        min_ratio,
        path,
    })
}

impl ResidualReport {
    pub fn check(&self) -> Result<(), CliError> {
        if !(self.min_ratio >= REFINEMENT_FACTOR) {
            return Err(CliError::Violation(format!(
                "residual shrank by only {:.3} (need {REFINEMENT_FACTOR})",
                self.min_ratio
            )));
        }
        Ok(())
    }
}
