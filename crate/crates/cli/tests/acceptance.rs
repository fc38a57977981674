//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskswitch::hamiltonian::{minimize, HamiltonianTable, DEFAULT_TABLE_CELLS};
use riskswitch::market::{
    AffineJump, JumpMeasure, JumpSource, MarketSpec, PortfolioSet, RegimeCoefficients, RegimeSpace,
};
use riskswitch::mc_oracle::{clip_to_set, FeedbackTable, McModel};
use riskswitch::semi_markov::{
    conditional_jump_pdf, next_component_prob, ChainState, HazardShape, RateModel, RegimeChain, TabulatedRates,
};
use riskswitch::volterra::{
    optimal_control_curve, optimal_wealth, solve_general, solve_reduced, GeneralOptions, PsiField, PICARD_TOL,
};
use riskswitch_cli::{cmd_residual, cmd_sweep, load, solve, Axis, Overrides, Problem};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/worked_example.json")
}

fn worked_problem() -> Problem {
    load(&fixture(), &Overrides::default()).expect("fixture loads")
}

fn uniform_jumps(a: f64, b: f64) -> Vec<JumpSource> {
    vec![JumpSource {
        measure: JumpMeasure::uniform(a, b, 1.0),
        eta: vec![AffineJump::IDENTITY],
    }]
}

fn single_asset(regimes: RegimeSpace, coefficients: Vec<RegimeCoefficients>, theta: f64) -> MarketSpec {
    MarketSpec::new(
        1,
        1,
        theta,
        regimes,
        coefficients,
        uniform_jumps(-0.4, 0.4),
        PortfolioSet::boxed(1, -5.0, 5.0, 1e-3),
    )
    .unwrap()
}

fn terminal_condition() -> Outcome {
    let start = Instant::now();
    let mut cases: Vec<(MarketSpec, RegimeChain, f64, f64)> = Vec::new();
    let p = worked_problem();
    cases.push((p.spec.clone(), p.chains[0].clone(), 1.0, 0.002));
    let frozen = single_asset(RegimeSpace::new(vec![1]), vec![RegimeCoefficients::scalar(0.3, 0.2, 0.2)], 1.0);
    cases.push((frozen, RegimeChain::frozen(), 0.7, 0.01));
    let two = single_asset(
        RegimeSpace::new(vec![2]),
        vec![RegimeCoefficients::scalar(0.3, 0.2, 0.1), RegimeCoefficients::scalar(0.5, 0.3, 0.2)],
        2.0,
    );
    let tab = TabulatedRates::new(0.25, vec![vec![vec![], vec![0.2, 0.6, 1.0, 1.4]], vec![vec![1.0, 1.0, 2.0, 2.0], vec![]]]).unwrap();
    cases.push((two.clone(), RegimeChain::new(2, RateModel::Tabulated(tab)).unwrap(), 0.5, 0.005));
    cases.push((two, RegimeChain::constant(3.0, vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(), 0.3, 0.1));
    cases.push((p.spec.clone(), RegimeChain::worked_example_log_gap(), 0.25, 0.002));
    for (spec, chain, horizon, dt) in &cases {
        let table = HamiltonianTable::build(spec, *horizon, DEFAULT_TABLE_CELLS).unwrap();
        let sol = solve_reduced(&table, chain, *horizon, *dt).unwrap();
        let grid = sol.to_grid(&[0.0, 0.3, 2.0]);
        let k = chain.states();
        let first = &grid.values[..k * 3];
        if sol.history(0).iter().chain(first).any(|v| *v != 1.0) {
            return outcome(false, "psi^0 differs from 1");
        }
    }
    let elapsed = start.elapsed();
    outcome(
        elapsed < Duration::from_secs(1),
        format!("psi^0 == 1 exactly on {} configs, {elapsed:.2?}", cases.len()),
    )
}

fn frozen_closed_form() -> Outcome {
    let spec = single_asset(RegimeSpace::new(vec![1]), vec![RegimeCoefficients::scalar(0.6, 0.4, 0.5)], 1.5);
    let horizon = 1.0;
    let h = minimize(&spec, 0.0, 0).unwrap().value;
    let table = HamiltonianTable::build(&spec, horizon, DEFAULT_TABLE_CELLS).unwrap();
    let sol = solve_reduced(&table, &RegimeChain::frozen(), horizon, 0.002).unwrap();
    let psi_err = (sol.history(sol.steps())[0] - (horizon * h).exp()).abs();
    let v = 3.0;
    let phi = optimal_wealth(&sol, spec.theta, v, 0, &[0.0]).unwrap();
    let phi_err = (phi - (v.ln() - 2.0 / spec.theta * horizon * h)).abs();
    outcome(
        psi_err <= 1e-12 && phi_err <= 1e-12,
        format!("|psi - e^(Th)| = {psi_err:.1e}, |phi - closed form| = {phi_err:.1e}"),
    )
}

/// Scalar objective written out from the model with uniform jump sizes on
/// `[a, b]` and `η(z) = z`, integrated in closed form.
fn closed_form_g(theta: f64, mu: f64, sigma: f64, r: f64, a: f64, b: f64, u: f64) -> f64 {
    let q = theta / 2.0;
    let jump = if u == 0.0 {
        0.0
    } else if (1.0 - q).abs() < 1e-14 {
        ((1.0 + b * u).ln() - (1.0 + a * u).ln()) / (u * (b - a)) - 1.0
    } else {
        ((1.0 + b * u).powf(1.0 - q) - (1.0 + a * u).powf(1.0 - q)) / (u * (1.0 - q) * (b - a)) - 1.0
    };
    -q * (r + (mu - r) * u) + 0.5 * q * (q + 1.0) * u * u * sigma * sigma + jump
}

fn hamiltonian_oracle() -> Outcome {
    let start = Instant::now();
    let params = [(0.3, 0.2, 0.2), (0.6, 0.4, 0.5), (0.8, 0.3, 0.7)];
    let (a, b, delta) = (-0.4, 0.4, 1e-3);
    let lo = (-5.0f64).max(-(1.0 - delta) / b);
    let hi = 5.0f64.min((1.0 - delta) / -a);
    let n = ((hi - lo) / 1e-5).floor() as usize;
    let (mut worst_v, mut worst_u) = (0.0f64, 0.0f64);
    for theta in [0.5, 1.0, 2.0] {
        let spec = MarketSpec::worked_example(theta, a, b);
        for (x, &(mu, sigma, r)) in params.iter().enumerate() {
            let (mut best_u, mut best_g) = (0.0, f64::INFINITY);
            for k in 0..=n {
                let u = lo + k as f64 * 1e-5;
                let g = closed_form_g(theta, mu, sigma, r, a, b, u);
                if g < best_g {
                    best_g = g;
                    best_u = u;
                }
            }
            let res = minimize(&spec, 0.0, x).unwrap();
            worst_v = worst_v.max((res.value - best_g).abs());
            worst_u = worst_u.max((res.minimizer[0] - best_u).abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst_v <= 1e-6 && worst_u <= 1e-4 && elapsed < Duration::from_secs(10),
        format!("max value gap {worst_v:.1e}, max minimizer gap {worst_u:.1e}, {elapsed:.2?}"),
    )
}

fn feynman_kac() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let start = Instant::now();
        let p = worked_problem();
        let table = HamiltonianTable::build(&p.spec, 1.0, DEFAULT_TABLE_CELLS).unwrap();
        let sol = solve_reduced(&table, &p.chains[0], 1.0, 0.002).unwrap();
        let model = McModel::with_table(p.spec.clone(), p.chains.clone(), 1.0, table).unwrap();
        let mut worst = 0.0f64;
        for i in 0..3 {
            for y in [0.0, 0.5] {
                let est = model.estimate_psi(0.0, &ChainState::single(i, y), 100_000, 42).unwrap();
                worst = worst.max(est.z_score(sol.psi(0.0, i, &[y]), 0.0));
            }
        }
        let elapsed = start.elapsed();
        outcome(
            worst <= 3.0 && elapsed < Duration::from_secs(120),
            format!("max |z| = {worst:.2} over 6 points, {elapsed:.2?} on one thread"),
        )
    })
}

fn picard_contraction() -> Outcome {
    let chains = vec![
        RegimeChain::new(
            2,
            RateModel::Scaled {
                shape: HazardShape::GammaTwo,
                p: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            },
        )
        .unwrap(),
        RegimeChain::new(2, RateModel::Constant(vec![vec![0.0, 1.5], vec![0.8, 0.0]])).unwrap(),
    ];
    let regimes = RegimeSpace::of(&chains);
    let coefficients = vec![
        RegimeCoefficients::scalar(0.3, 0.2, 0.2),
        RegimeCoefficients::scalar(0.6, 0.4, 0.5),
        RegimeCoefficients::scalar(0.8, 0.3, 0.7),
        RegimeCoefficients::scalar(0.4, 0.25, 0.1),
    ];
    let spec = single_asset(regimes, coefficients, 1.0);
    let horizon = 0.5;
    let table = HamiltonianTable::build(&spec, horizon, DEFAULT_TABLE_CELLS).unwrap();
    let sol = solve_general(&table, &chains, horizon, 0.01, &GeneralOptions::default()).unwrap();
    let last = *sol.changes.last().unwrap();

    let p = worked_problem();
    let table1 = HamiltonianTable::build(&p.spec, horizon, DEFAULT_TABLE_CELLS).unwrap();
    let reduced = solve_reduced(&table1, &p.chains[0], horizon, 0.01).unwrap();
    let mut cross = 0.0f64;
    for y_step in [None, Some(0.025)] {
        let opts = GeneralOptions {
            y_step,
            ..GeneralOptions::default()
        };
        let general = solve_general(&table1, &p.chains, horizon, 0.01, &opts).unwrap();
        for i in 0..3 {
            for y in [0.0, 0.2, 0.4] {
                cross = cross.max((general.psi(0.0, i, &[y]) - reduced.psi(0.0, i, &[y])).abs());
            }
        }
    }
    outcome(
        sol.contraction < 1.0 && last <= PICARD_TOL && sol.sweeps <= 500 && cross <= 1e-4,
        format!(
            "{} sweeps, rho = {:.3}, final change {last:.1e}; single-chain gap {cross:.1e}",
            sol.sweeps, sol.contraction
        ),
    )
}

fn pde_refinement() -> Outcome {
    let p = worked_problem();
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_residual(&p, None, Some(&dir.path().join("residual.csv")), &mut std::io::sink()).unwrap();
    let n = report.rows.len();
    outcome(
        report.check().is_ok() && n == 10,
        format!(
            "min ratio {:.3} over {n} points (eps {} -> {}, dt {} -> {})",
            report.min_ratio,
            report.eps,
            report.eps / 2.0,
            report.dt,
            report.dt / 2.0
        ),
    )
}

fn sweep_trends() -> Outcome {
    let p = worked_problem();
    let dir = tempfile::tempdir().unwrap();
    let mut details = Vec::new();
    let mut passed = true;
    for axis in [Axis::V, Axis::T, Axis::Theta] {
        let out = dir.path().join(format!("{}.csv", axis.name()));
        let r = cmd_sweep(&p, axis, None, Some(&out), &mut std::io::sink()).unwrap();
        passed &= r.values.len() >= 4 && r.violations.is_empty();
        if axis == Axis::V {
            let gap = r
                .values
                .windows(2)
                .zip(r.phi.windows(2))
                .map(|(v, f)| ((f[1] - f[0]) - (v[1] / v[0]).ln()).abs())
                .fold(0.0, f64::max);
            passed &= gap <= 1e-12;
        }
        details.push(format!("{}: {} violations", axis.name(), r.violations.len()));
    }
    outcome(passed, details.join(", "))
}

fn verification() -> Outcome {
    let start = Instant::now();
    let p = worked_problem();
    let horizon = 1.0;
    let table = HamiltonianTable::build(&p.spec, horizon, DEFAULT_TABLE_CELLS).unwrap();
    let sol = solve_reduced(&table, &p.chains[0], horizon, 0.002).unwrap();
    let model = McModel::with_table(p.spec.clone(), p.chains.clone(), horizon, table.clone()).unwrap();
    let (v0, state) = (2.0f64, ChainState::single(1, 0.0));
    let n = 100_000;
    let seed = 7;

    let optimal = FeedbackTable::optimal(&table);
    let target = v0.powf(-p.spec.theta / 2.0) * sol.psi(0.0, 1, &[0.0]);
    let spec = &p.spec;
    let perturbed = vec![
        optimal.map(|_, u| clip_to_set(spec, &[u[0] + 0.5])),
        optimal.map(|_, u| clip_to_set(spec, &[u[0] - 0.5])),
        optimal.map(|_, u| vec![0.5 * u[0]]),
        optimal.map(|_, u| clip_to_set(spec, &[1.5 * u[0]])),
        optimal.map(|_, _| vec![0.0]),
    ];
    let report = model.verify_suboptimality(v0, &state, &perturbed, n, seed).unwrap();
    let z = report.optimal.z_score(target, 0.0);
    let margins: Vec<String> = report.entries.iter().map(|e| format!("{:.1}", e.margin)).collect();
    let elapsed = start.elapsed();
    outcome(
        z <= 3.0 && report.passed && elapsed < Duration::from_secs(300),
        format!(
            "optimal cost z = {z:.2}; perturbation margins [{}] SE; {elapsed:.2?}",
            margins.join(", ")
        ),
    )
}

fn chain_pool() -> Vec<RegimeChain> {
    let tab = TabulatedRates::new(
        0.5,
        vec![
            vec![vec![], vec![0.1, 0.4, 0.9, 1.2, 1.5], vec![0.2, 0.2, 0.5, 0.6, 0.8]],
            vec![vec![0.5, 0.7, 0.9, 1.1, 1.3], vec![], vec![0.3, 0.3, 0.3, 0.6, 0.9]],
            vec![vec![1.0, 0.8, 0.8, 1.0, 1.2], vec![0.2, 0.5, 0.8, 1.1, 1.4], vec![]],
        ],
    )
    .unwrap();
    vec![
        RegimeChain::worked_example(),
        RegimeChain::worked_example_log_gap(),
        RegimeChain::new(3, RateModel::Tabulated(tab)).unwrap(),
        RegimeChain::new(
            2,
            RateModel::Scaled {
                shape: HazardShape::Polynomial {
                    coefficients: vec![0.2, 0.5, 0.3],
                },
                p: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            },
        )
        .unwrap(),
    ]
}

fn random_state(rng: &mut ChaCha8Rng, pool: &[RegimeChain]) -> (Vec<RegimeChain>, ChainState) {
    let comps = rng.gen_range(2..=3);
    let chains: Vec<RegimeChain> = (0..comps).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect();
    let x = chains.iter().map(|c| rng.gen_range(0..c.states())).collect();
    let y = chains.iter().map(|_| rng.gen_range(0.0..2.0)).collect();
    (chains, ChainState::new(x, y))
}

fn race_suite() -> Outcome {
    let pool = chain_pool();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_sum, mut worst_id) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (chains, state) = random_state(&mut rng, &pool);
        let probs = next_component_prob(&chains, &state).unwrap();
        worst_sum = worst_sum.max((probs.iter().sum::<f64>() - 1.0).abs());
        for (l, chain) in chains.iter().enumerate() {
            let lhs = conditional_jump_pdf(&chains, &state, l, 0.0).unwrap() * probs[l];
            let rhs = chain.total_rate(state.x[l], state.y[l]).unwrap();
            worst_id = worst_id.max((lhs - rhs).abs());
        }
    }

    // d/dε P_{x, y+ε𝟙}(ℓ = l) = Σ_m λ^m(y^m) P(ℓ = l) - λ^l(y^l)
    let mut orders = Vec::new();
    for _ in 0..20 {
        let (chains, state) = random_state(&mut rng, &pool);
        let probs = next_component_prob(&chains, &state).unwrap();
        let rates: Vec<f64> = chains
            .iter()
            .enumerate()
            .map(|(m, c)| c.total_rate(state.x[m], state.y[m]).unwrap())
            .collect();
        let total: f64 = rates.iter().sum();
        let errors: Vec<Vec<f64>> = [1e-3, 1e-4]
            .iter()
            .map(|&eps| {
                let shifted = ChainState::new(state.x.clone(), state.y.iter().map(|y| y + eps).collect());
                let moved = next_component_prob(&chains, &shifted).unwrap();
                (0..chains.len())
                    .map(|l| ((moved[l] - probs[l]) / eps - (total * probs[l] - rates[l])).abs())
                    .collect()
            })
            .collect();
        orders.extend(errors[0].iter().zip(&errors[1]).map(|(a, b)| (a / b).log10()));
    }
    orders.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min_order = orders[0];
    let median = orders[orders.len() / 2];
    outcome(
        worst_sum <= 1e-8 && worst_id <= 1e-8 && min_order >= 0.8,
        format!(
            "|sum P - 1| <= {worst_sum:.1e}, identity gap {worst_id:.1e}; difference order min {min_order:.2}, median {median:.2}"
        ),
    )
}

fn control_robustness() -> Outcome {
    let slow = worked_problem();
    let mut fast = slow.clone();
    fast.chains = vec![slow.chains[0].scaled(10.0)];
    let horizon = slow.config.numerics.horizon;
    let dt = slow.config.numerics.dt;
    let (slow_table, slow_sol) = solve(&slow, &slow.spec, horizon, dt, None).unwrap();
    let (fast_table, fast_sol) = solve(&fast, &fast.spec, horizon, dt, None).unwrap();
    let grid: Vec<f64> = (0..=20).map(|k| k as f64 * horizon / 20.0).collect();
    let mut identical = true;
    let mut psi_gap = 0.0f64;
    for x in 0..3 {
        let a = optimal_control_curve(&slow.spec, &grid, x).unwrap();
        let b = optimal_control_curve(&fast.spec, &grid, x).unwrap();
        identical &= a
            .iter()
            .flatten()
            .zip(b.iter().flatten())
            .all(|(u, v)| u.to_bits() == v.to_bits());
        identical &= grid.iter().all(|&t| {
            let (u, v) = (slow_table.control(t, x), fast_table.control(t, x));
            u.iter().zip(v).all(|(p, q)| p.to_bits() == q.to_bits()) && u[0].to_bits() == a[0][0].to_bits()
        });
        for y in [0.0, 0.5] {
            psi_gap = psi_gap.max((slow_sol.field().psi(0.0, x, &[y]) - fast_sol.field().psi(0.0, x, &[y])).abs());
        }
    }
    outcome(
        identical && psi_gap > 1e-6,
        format!("controls bitwise equal: {identical}; max psi change {psi_gap:.2e}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("terminal condition", terminal_condition),
        ("frozen-regime closed form", frozen_closed_form),
        ("hamiltonian oracle", hamiltonian_oracle),
        ("feynman-kac agreement", feynman_kac),
        ("picard contraction", picard_contraction),
        ("pde residual refinement", pde_refinement),
        ("sweep trends", sweep_trends),
        ("verification theorem", verification),
        ("race identities", race_suite),
        ("control robustness", control_robustness),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.passed { "PASS" } else { "FAIL" };
        if !result.passed {
            failed += 1;
        }
        println!("criterion {:>2} {tag}  {name}: {}", k + 1, result.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
