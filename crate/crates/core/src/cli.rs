//! Command-line front end: `screenlab <command> --config <path> [--out <dir>]`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dist::{check_assumption1, check_assumption2, AssumptionReport, CostDistribution};
use crate::error::{Error, Result};
use crate::history::WorkHistory;
use crate::mechanism::{check_interim_ir, Environment, IrReport, Mechanism, SLACK_TOL};
use crate::sim::{deviation_search, quit_search, simulate, simulate_paths, simulate_stochastic, write_paths_csv};
use crate::sim::{DeviationReport, QuitReport};
use crate::solver::{brute_force, find_alpha_hat, interior_at_thetabar, solve, sweep_alpha, write_sweep_csv};
use crate::solver::{InteriorCheck, Regime, SolveReport};
use crate::stochastic::{build_improvement, improvement_report, verify_stochastic, StochasticCheck};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_REFUSED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "SCREENLAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "screenlab", version, about = "Dynamic screening mechanisms under limited liability")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the optimal mechanism at one α.
    Solve(CommonArgs),
    /// Solve over an α grid and write a CSV.
    Sweep(CommonArgs),
    /// Locate the α where always-working takes over.
    AlphaHat(CommonArgs),
    /// Structure-free grid search over every cutoff (N <= 3).
    Oracle(CommonArgs),
    /// Monte Carlo run through the optimal mechanism.
    Simulate(CommonArgs),
    /// Build and check the randomized improvement.
    Improve(CommonArgs),
    /// Assumption reports and invariant checks.
    Check(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Refused(_) | Error::Size { .. } | Error::Inapplicable(_) | Error::Bracket { .. } => EXIT_REFUSED,
        Error::Config(_) | Error::InvalidSupport { .. } | Error::InvalidParameter(_) | Error::Argument(_) => {
            EXIT_USAGE
        }
        _ => EXIT_FAILURE,
    }
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("screenlab: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    let (args, f): (&CommonArgs, fn(&RunConfig, &Path) -> Result<i32>) = match &cmd {
        Command::Solve(a) => (a, cmd_solve),
        Command::Sweep(a) => (a, cmd_sweep),
        Command::AlphaHat(a) => (a, cmd_alpha_hat),
        Command::Oracle(a) => (a, cmd_oracle),
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Improve(a) => (a, cmd_improve),
        Command::Check(a) => (a, cmd_check),
    };
    let cfg = RunConfig::load(&args.config)?;
    configure_threads(&cfg)?;
    fs::create_dir_all(&args.out)?;
    f(&cfg, &args.out)
}

fn configure_threads(cfg: &RunConfig) -> Result<()> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(s) => Some(
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {s:?}")))?,
        ),
        Err(_) => cfg.threads,
    };
    if let Some(k) = threads {
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn environment(cfg: &RunConfig) -> Result<Environment> {
    Environment::new(cfg.distribution()?, cfg.n, cfg.require_alpha()?)
}

pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let env = environment(cfg)?;
    let report = solve(&env)?;
    let mech = report.mechanism(&env.d)?;
    write_json(&out.join("solve_report.json"), &report)?;
    write_json(&out.join("mechanism.json"), &mech.to_record())?;
    println!("regime={} V_star={} u1_star={}", report.regime.label(), report.v_star, report.u1_star);
    Ok(EXIT_OK)
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let d = cfg.distribution()?;
    let rows = sweep_alpha(&d, cfg.n, &cfg.require_alpha_grid()?)?;
    let file = fs::File::create(out.join("sweep.csv"))?;
    write_sweep_csv(&rows, BufWriter::new(file))?;
    println!("rows={}", rows.len());
    Ok(EXIT_OK)
}

pub fn cmd_alpha_hat(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let d = cfg.distribution()?;
    let ah = find_alpha_hat(&d, cfg.n)?;
    write_json(&out.join("alpha_hat.json"), &ah)?;
    println!("{}", ah.alpha_hat);
    Ok(EXIT_OK)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub alpha: f64,
    pub value: f64,
    pub cutoffs: BTreeMap<String, f64>,
    pub step: f64,
    pub evaluations: u64,
    /// Optimal value from the first-order solver.
    pub solver_value: f64,
    pub value_gap: f64,
    /// Largest gap between oracle cutoffs and the solver's mechanism.
    pub max_cutoff_gap: f64,
}

pub fn cmd_oracle(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let env = environment(cfg)?;
    let bf = brute_force(&env, cfg.oracle.grid_points, cfg.oracle.refine_rounds)?;
    let report = solve(&env)?;
    let mech = report.mechanism(&env.d)?;
    let max_cutoff_gap = bf
        .profile
        .cutoffs()
        .iter()
        .zip(mech.profile().cutoffs())
        .enumerate()
        .filter(|(i, _)| mech.reach(&WorkHistory::from_node_index(*i)) > 0.0)
        .map(|(_, (a, b))| (a - b).abs())
        .fold(0.0f64, f64::max);
    let rep = OracleReport {
        n: env.n,
        alpha: env.alpha,
        value: bf.value,
        cutoffs: bf.profile.to_map(),
        step: bf.step,
        evaluations: bf.evaluations,
        solver_value: report.v_star,
        value_gap: (bf.value - report.v_star).abs(),
        max_cutoff_gap,
    };
    write_json(&out.join("oracle.json"), &rep)?;
    println!("oracle V={} solver V={} gap={}", rep.value, rep.solver_value, rep.value_gap);
    Ok(EXIT_OK)
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let env = environment(cfg)?;
    let mech = solve(&env)?.mechanism(&env.d)?;
    let res = simulate(&mech, &env, &cfg.sim)?;
    write_json(&out.join("sim_result.json"), &res)?;
    if cfg.sim.dump_paths {
        let recs = simulate_paths(&mech, &env, &cfg.sim)?;
        let file = fs::File::create(out.join("paths.csv"))?;
        write_paths_csv(&recs, env.n, BufWriter::new(file))?;
    }
    println!(
        "principal={} stderr={} exact={}",
        res.principal.mean, res.principal.stderr, res.exact_principal
    );
    Ok(EXIT_OK)
}

fn choose_epsilon(cfg: &RunConfig, report: &SolveReport, d: &CostDistribution) -> f64 {
    cfg.improve
        .epsilon
        .unwrap_or_else(|| cfg.improve.epsilon_fraction * report.u1_star / (d.hi() - d.mean()))
}

pub fn cmd_improve(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let env = environment(cfg)?;
    let report = solve(&env)?;
    let eps = choose_epsilon(cfg, &report, &env.d);
    let sm = build_improvement(&report, &env, eps)?;
    let rep = improvement_report(&sm, &env);
    write_json(&out.join("improvement.json"), &rep)?;
    let chk = verify_stochastic(&sm, &env);
    write_json(&out.join("improvement_check.json"), &chk)?;
    if cfg.improve.n_paths > 0 {
        let sim_cfg = crate::sim::SimConfig { n_paths: cfg.improve.n_paths, ..cfg.sim.clone() };
        let res = simulate_stochastic(&sm, &env, &sim_cfg)?;
        write_json(&out.join("improvement_sim.json"), &res)?;
    }
    println!("epsilon={} delta={} slack_min={}", rep.epsilon, rep.delta, rep.slack_min);
    Ok(if chk.passed { EXIT_OK } else { EXIT_FAILURE })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantSuite {
    pub regime: Regime,
    pub rent_verified: bool,
    pub interim_ir: IrReport,
    pub deviation: DeviationReport,
    pub quit: QuitReport,
    /// Smallest final payment over reachable leaves.
    pub min_reachable_payment: f64,
    pub stochastic: Option<StochasticCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub alpha: Option<f64>,
    pub assumption1: bool,
    pub assumption2: Option<AssumptionReport>,
    pub interior_at_thetabar: Option<InteriorCheck>,
    pub invariants: Option<InvariantSuite>,
    pub failures: Vec<String>,
    pub passed: bool,
}

fn min_reachable_payment(mech: &Mechanism) -> f64 {
    let n = mech.n();
    (0..1u32 << n)
        .map(|b| WorkHistory::new(n, b).expect("leaf"))
        .filter(|w| mech.reach(w) > 0.0)
        .map(|w| mech.payments()[w.bits() as usize])
        .fold(f64::INFINITY, f64::min)
}

fn invariant_suite(cfg: &RunConfig, env: &Environment, failures: &mut Vec<String>) -> Result<InvariantSuite> {
    let report = solve(env)?;
    let mech = report.mechanism(&env.d)?;
    let rent_verified = mech.verify_rent(&env.d).is_ok();
    if !rent_verified {
        failures.push("stored rent differs from recomputed rent".into());
    }
    let interim_ir = check_interim_ir(&mech, env);
    if let Some((t, w)) = &interim_ir.violation {
        failures.push(format!("interim participation violated at t={t}, history \"{w}\""));
    }
    let deviation = deviation_search(&mech, env, &cfg.sim)?;
    if deviation.max_violation > SLACK_TOL {
        failures.push(format!("deviation gain {} at t={}", deviation.max_violation, deviation.argmax_t));
    }
    let quit = quit_search(&mech, env, &cfg.sim)?;
    if (quit.min_continuation - interim_ir.min_slack).abs() > SLACK_TOL {
        failures.push("quit search disagrees with the participation check".into());
    }
    let min_pay = min_reachable_payment(&mech);
    if min_pay < -SLACK_TOL {
        failures.push(format!("negative final payment {min_pay}"));
    }
    let stochastic = if report.regime == Regime::ConsecutiveMenu && check_assumption1(&env.d) {
        let eps = choose_epsilon(cfg, &report, &env.d);
        match build_improvement(&report, env, eps) {
            Ok(sm) => {
                let chk = verify_stochastic(&sm, env);
                if !chk.passed {
                    failures.push("randomized improvement fails its checks".into());
                }
                Some(chk)
            }
            Err(Error::Inapplicable(_)) | Err(Error::Argument(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(InvariantSuite {
        regime: report.regime,
        rent_verified,
        interim_ir,
        deviation,
        quit,
        min_reachable_payment: min_pay,
        stochastic,
    })
}

pub fn cmd_check(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let d = cfg.distribution()?;
    let n = cfg.n;
    let assumption1 = check_assumption1(&d);
    let assumption2 = if n >= 2 { Some(check_assumption2(&d, n)?) } else { None };
    let interior = if n >= 2 { interior_at_thetabar(&d, n).ok() } else { None };
    let mut failures = Vec::new();
    let invariants = match cfg.alpha {
        Some(alpha) => Some(invariant_suite(cfg, &Environment::new(d.clone(), n, alpha)?, &mut failures)?),
        None => None,
    };
    let report = CheckReport {
        n,
        alpha: cfg.alpha,
        assumption1,
        assumption2,
        interior_at_thetabar: interior,
        invariants,
        passed: failures.is_empty(),
        failures,
    };
    write_json(&out.join("check_report.json"), &report)?;
    if let Some(a2) = &report.assumption2 {
        println!(
            "assumption1={} assumption2_g_monotone={} assumption2_density_bound={}",
            report.assumption1, a2.a2_g_monotone, a2.a2_density_bound
        );
    } else {
        println!("assumption1={}", report.assumption1);
    }
    for f in &report.failures {
        println!("FAIL {f}");
    }
    Ok(if report.passed { EXIT_OK } else { EXIT_FAILURE })
}
