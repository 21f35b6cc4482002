//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Lines go straight to the stderr handle so they show up in `cargo test`
//! output even for passing tests.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use screenlab::dist::{check_assumption1, check_assumption2, make_truncated_normal, make_uniform, CostDistribution};
use screenlab::history::WorkHistory;
use screenlab::mechanism::{
    agent_interim_utility, backload, Environment, InterimSchedule, NodeState, ThresholdProfile,
};
use screenlab::sim::{deviation_search, simulate, simulate_stochastic, SimConfig};
use screenlab::solver::{
    always_working, brute_force, find_alpha_hat, interior_at_thetabar, menu_value, solve, solve_foc_system,
    sweep_alpha, Regime,
};
use screenlab::stochastic::{build_improvement, delta_of, h_fn, stochastic_payoff, verify_stochastic};

type Outcome = Result<String, String>;

fn report(id: u32, name: &str, started: Instant, limit: Option<Duration>, outcome: Outcome) {
    let elapsed = started.elapsed();
    let outcome = match (outcome, limit) {
        (Ok(_), Some(l)) if elapsed > l => Err(format!("runtime {elapsed:.2?} exceeds {l:?}")),
        (o, _) => o,
    };
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d.as_str()),
        Err(d) => ("FAIL", d.as_str()),
    };
    let line = format!("ACCEPTANCE [{tag}] {id:02} {name}: {detail} ({elapsed:.2?})\n");
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    if let Err(e) = outcome {
        panic!("criterion {id} ({name}) failed: {e}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn uniform12() -> CostDistribution {
    make_uniform(1.0, 2.0).unwrap()
}

fn env(d: &CostDistribution, n: usize, alpha: f64) -> Environment {
    Environment::new(d.clone(), n, alpha).unwrap()
}

#[test]
fn criterion_01_oracle_equivalence_n1() {
    let t0 = Instant::now();
    let outcome = (|| {
        let d = uniform12();
        let mut worst = 0.0f64;
        for alpha in [2.0, 2.4, 3.0] {
            let bf = brute_force(&env(&d, 1, alpha), 201, 3).map_err(|e| e.to_string())?;
            ensure(bf.step <= 5e-3, || format!("final step {} above 5e-3", bf.step))?;
            let target = d.virtual_cost_inverse(alpha).unwrap_or(d.hi());
            let gap = (bf.profile.cutoffs()[0] - target).abs();
            ensure(gap <= 5e-3, || format!("alpha={alpha}: argmax {} vs G^-1 {target}", bf.profile.cutoffs()[0]))?;
            worst = worst.max(gap);
        }
        Ok(format!("max |c - G^-1(alpha)| = {worst:.3e} <= 5e-3"))
    })();
    report(1, "oracle equivalence N=1", t0, Some(Duration::from_secs(5)), outcome);
}

#[test]
fn criterion_02_oracle_equivalence_n2() {
    let t0 = Instant::now();
    let outcome = (|| {
        let d = uniform12();
        let e = env(&d, 2, 2.0);
        let foc = solve_foc_system(&e).map_err(|x| x.to_string())?;
        let v_foc = menu_value(&foc.menu, &e);
        let bf = brute_force(&e, 201, 3).map_err(|x| x.to_string())?;
        let dv = (v_foc - bf.value).abs();
        ensure(dv <= 2e-3, || format!("|V_foc - V_bf| = {dv:.3e}"))?;
        let prof = foc.menu.to_profile(&d).map_err(|x| x.to_string())?;
        let dc = prof
            .cutoffs()
            .iter()
            .zip(bf.profile.cutoffs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        ensure(dc <= 2e-3, || format!("cutoff gap {dc:.3e}: foc {:?} vs grid {:?}", prof.cutoffs(), bf.profile.cutoffs()))?;
        Ok(format!("|dV| = {dv:.3e}, max |dc| = {dc:.3e} (both <= 2e-3)"))
    })();
    report(2, "oracle equivalence N=2", t0, Some(Duration::from_secs(60)), outcome);
}

fn structure_check(d: &CostDistribution, n: usize, alpha: f64, grid: usize, rounds: usize) -> Outcome {
    let e = env(d, n, alpha);
    let bf = brute_force(&e, grid, rounds).map_err(|x| x.to_string())?;
    let step = bf.step;
    let mut worst_started = 0.0f64;
    let mut problems = Vec::new();
    for (i, &c) in bf.profile.cutoffs().iter().enumerate() {
        let w = WorkHistory::from_node_index(i);
        if w.started() {
            let gap = d.hi() - c;
            if gap > step {
                problems.push(format!("started node \"{w}\" cutoff {c}"));
            }
            worst_started = worst_started.max(gap);
        } else if !(c > d.lo() + step && c < d.hi() - step) {
            problems.push(format!("start cutoff at \"{w}\" = {c} not interior"));
        }
    }
    if problems.is_empty() {
        return Ok(format!("N={n} alpha={alpha} step={step:.2e} max started gap {worst_started:.2e}"));
    }
    let v_aw = always_working(&e).1;
    let a_hat = find_alpha_hat(d, n).map(|a| a.alpha_hat).unwrap_or(f64::NAN);
    Err(format!(
        "N={n} alpha={alpha}: {}; oracle V {} vs always-working {v_aw}, alpha_hat(N={n}) = {a_hat}",
        problems.join(", "),
        bf.value
    ))
}

#[test]
fn criterion_03_threshold_structure() {
    let t0 = Instant::now();
    let d = uniform12();
    let mut passed = Vec::new();
    let mut failed = Vec::new();
    for alpha in [2.0, 2.2] {
        for (n, grid, rounds) in [(2, 201, 3), (3, 9, 8)] {
            match structure_check(&d, n, alpha, grid, rounds) {
                Ok(s) => passed.push(s),
                Err(s) => failed.push(s),
            }
        }
    }
    let outcome = if failed.is_empty() {
        Ok(passed.join("; "))
    } else {
        Err(format!("{} of 4 cases fail [{}]; passing: {}", failed.len(), failed.join("; "), passed.join("; ")))
    };
    report(3, "started histories work, start cutoffs interior", t0, Some(Duration::from_secs(600)), outcome);
}

#[test]
fn criterion_04_binding_rent() {
    let t0 = Instant::now();
    let outcome = (|| {
        let dists = [uniform12(), make_truncated_normal(1.5, 0.4, 1.0, 2.0).unwrap()];
        let mut solved = 0;
        let (mut worst_u, mut worst_rent) = (0.0f64, 0.0f64);
        for d in &dists {
            for n in 2..=4 {
                for alpha in [2.0, 2.1, 2.2] {
                    let e = env(d, n, alpha);
                    let rep = solve(&e).map_err(|x| x.to_string())?;
                    if rep.regime != Regime::ConsecutiveMenu {
                        continue;
                    }
                    solved += 1;
                    let mech = rep.mechanism(d).map_err(|x| x.to_string())?;
                    let node = NodeState { t: n, w_prev: WorkHistory::zeros(n - 1), theta: d.hi() };
                    let u = agent_interim_utility(&mech, d, &node).map_err(|x| x.to_string())?;
                    ensure(u.abs() <= 1e-10, || format!("N={n} alpha={alpha}: worst-case utility on 0^N is {u}"))?;
                    let c = rep.menu.as_ref().unwrap();
                    let rent: f64 = c[1..].iter().map(|&x| d.cdf_integral(x)).sum();
                    let gap = (rep.u1_star - rent).abs();
                    ensure(gap <= 1e-12, || format!("N={n} alpha={alpha}: u1* {} vs sum I {rent}", rep.u1_star))?;
                    worst_u = worst_u.max(u.abs());
                    worst_rent = worst_rent.max(gap);
                }
            }
        }
        ensure(solved >= 6, || format!("only {solved} interior menus found"))?;
        Ok(format!("{solved} menus, max |u| = {worst_u:.1e}, max |u1* - sum I| = {worst_rent:.1e}"))
    })();
    report(4, "binding participation on the never-started chain", t0, None, outcome);
}

#[test]
fn criterion_05_regime_switch() {
    let t0 = Instant::now();
    let outcome = (|| {
        let d = uniform12();
        let n = 2;
        let ah = find_alpha_hat(&d, n).map_err(|e| e.to_string())?;
        let a = ah.alpha_hat;
        let upper = (n as f64 - 1.0) * d.hi() + d.virtual_cost(d.hi());
        ensure(a > d.hi() && a < upper, || format!("alpha_hat {a} outside ({}, {upper})", d.hi()))?;
        let e = env(&d, n, a);
        let foc = solve_foc_system(&e).map_err(|x| x.to_string())?;
        let gap = menu_value(&foc.menu, &e) - always_working(&e).1;
        ensure(gap.abs() <= 1e-7, || format!("|V_cm - V_aw| = {gap:e} at alpha_hat"))?;
        let alphas: Vec<f64> = (0..50).map(|i| d.hi() + (6.0 - d.hi()) * i as f64 / 49.0).collect();
        let rows = sweep_alpha(&d, n, &alphas).map_err(|e| e.to_string())?;
        let changes = rows.windows(2).filter(|w| w[0].regime != w[1].regime).count();
        ensure(changes == 1, || format!("{changes} regime changes on the sweep"))?;
        let monotone = rows.windows(2).all(|w| w[1].v_star >= w[0].v_star);
        ensure(monotone, || "V* decreases somewhere on the sweep".into())?;
        Ok(format!("alpha_hat = {a}, |V_cm - V_aw| = {:.1e}, 1 regime change, V* nondecreasing", gap.abs()))
    })();
    report(5, "regime switch at alpha_hat", t0, Some(Duration::from_secs(30)), outcome);
}

#[test]
fn criterion_06_value_derivative_is_expected_work() {
    let t0 = Instant::now();
    let outcome = (|| {
        let d = uniform12();
        let n = 2;
        let a_hat = find_alpha_hat(&d, n).map_err(|e| e.to_string())?.alpha_hat;
        let h = 1e-4;
        let mut worst = 0.0f64;
        for alpha in [2.05, 2.12, 2.2, 3.0, 5.0] {
            ensure((alpha - a_hat).abs() > 100.0 * h, || format!("alpha={alpha} too close to alpha_hat"))?;
            let v = |a: f64| solve(&env(&d, n, a)).map(|r| r.v_star).map_err(|e| e.to_string());
            let fd = (v(alpha + h)? - v(alpha - h)?) / (2.0 * h);
            let work = solve(&env(&d, n, alpha)).map_err(|e| e.to_string())?.expected_work;
            let rel = (fd - work).abs() / work;
            ensure(rel <= 1e-3, || format!("alpha={alpha}: dV/dalpha {fd} vs expected work {work}"))?;
            worst = worst.max(rel);
        }
        Ok(format!("max relative error {worst:.2e} <= 1e-3 at 5 alphas"))
    })();
    report(6, "dV*/dalpha equals expected work", t0, None, outcome);
}

#[test]
fn criterion_07_backloading() {
    let t0 = Instant::now();
    let outcome = (|| {
        let d = uniform12();
        let e = env(&d, 3, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut worst_payoff, mut min_delta) = (0.0f64, f64::INFINITY);
        for k in 0..20 {
            let cuts: Vec<f64> = (0..7).map(|_| rng.random_range(1.0..=2.0)).collect();
            let profile = ThresholdProfile::new(3, cuts, &d.support()).map_err(|x| x.to_string())?;
            let scale = if k % 4 == 0 { 0.0 } else { rng.random_range(0.0..1.0) };
            let draws: Vec<f64> = (0..15).map(|_| scale * rng.random::<f64>()).collect();
            let schedule = InterimSchedule::new(3, |w| draws[w.node_index()]).unwrap();
            let r = backload(&schedule, &profile, &e).map_err(|x| x.to_string())?;
            let dp = (r.payoff_after - r.payoff_before).abs();
            ensure(dp <= 1e-12, || format!("schedule {k}: payoff moved by {dp:e}"))?;
            ensure(r.min_slack_delta >= -1e-12, || format!("schedule {k}: min slack fell by {}", r.min_slack_delta))?;
            worst_payoff = worst_payoff.max(dp);
            min_delta = min_delta.min(r.min_slack_delta);
        }
        Ok(format!("20 schedules: max |dpayoff| = {worst_payoff:.1e}, min slack change = {min_delta:.3e} >= 0"))
    })();
    report(7, "backloading keeps payoff, raises slack", t0, None, outcome);
}

#[test]
fn criterion_08_incentive_compatibility() {
    let t0 = Instant::now();
    let outcome = (|| {
        let cfg = SimConfig { n_paths: 1, seed: 2024, deviation_nodes: 200, theta_grid: 21, dump_paths: false };
        let dists = [uniform12(), make_truncated_normal(1.5, 0.4, 1.0, 2.0).unwrap()];
        let mut worst = f64::NEG_INFINITY;
        let mut count = 0;
        for d in &dists {
            for n in 1..=4 {
                for alpha in [2.0, 2.2, 4.0] {
                    let e = env(d, n, alpha);
                    let mech = solve(&e).and_then(|r| r.mechanism(d)).map_err(|x| x.to_string())?;
                    let r = deviation_search(&mech, &e, &cfg).map_err(|x| x.to_string())?;
                    ensure(r.nodes_sampled == 200, || format!("sampled {} nodes", r.nodes_sampled))?;
                    ensure(r.max_violation <= 1e-9, || format!("N={n} alpha={alpha}: violation {r:?}"))?;
                    worst = worst.max(r.max_violation);
                    count += 1;
                }
            }
        }
        let d = uniform12();
        let e = env(&d, 2, 2.0);
        let mech = solve(&e).and_then(|r| r.mechanism(&d)).map_err(|x| x.to_string())?;
        let leaf = WorkHistory::parse("11").unwrap();
        let bad = mech.with_leaf_payment(&leaf, mech.payments()[3] + 0.1, &d).map_err(|x| x.to_string())?;
        let planted = deviation_search(&bad, &e, &cfg).map_err(|x| x.to_string())?.max_violation;
        ensure(planted > 0.05, || format!("planted corruption found only {planted}"))?;
        Ok(format!("{count} mechanisms, max violation {worst:.1e} <= 1e-9; planted +0.1 found {planted:.6}"))
    })();
    report(8, "deviation search on solved and corrupted mechanisms", t0, None, outcome);
}

#[test]
fn criterion_09_stochastic_gain() {
    let t0 = Instant::now();
    let outcome = (|| {
        let d = uniform12();
        let e = env(&d, 2, 2.0);
        let rep = solve(&e).map_err(|x| x.to_string())?;
        let eps = 0.5 * rep.u1_star / (d.hi() - d.mean());
        let sm = build_improvement(&rep, &e, eps).map_err(|x| x.to_string())?;
        let delta = eps * (h_fn(&d, 2.0, sm.c1) - h_fn(&d, 2.0, sm.x_sb));
        ensure((delta - delta_of(&sm, &d)).abs() <= 1e-15, || "delta helper disagrees".into())?;
        ensure(delta > 0.0, || format!("delta {delta} not positive"))?;
        let exact = stochastic_payoff(&sm, &e) - rep.v_star;
        ensure((exact - delta).abs() <= 1e-10, || format!("exact difference {exact} vs delta {delta}"))?;
        let chk = verify_stochastic(&sm, &e);
        ensure(chk.min_slack >= -1e-9, || format!("min slack {}", chk.min_slack))?;
        let cfg = SimConfig { n_paths: 1_000_000, seed: 99, deviation_nodes: 0, theta_grid: 0, dump_paths: false };
        let sim = simulate_stochastic(&sm, &e, &cfg).map_err(|x| x.to_string())?;
        let g = sim.gain.unwrap();
        ensure(g.covers(delta, 4.0), || format!("simulated gain {} +- {} vs delta {delta}", g.mean, g.stderr))?;
        Ok(format!(
            "delta = {delta:.6e}, |exact - delta| = {:.1e}, min slack {:.1e}, sim gain {:.4e} +- {:.1e}",
            (exact - delta).abs(),
            chk.min_slack,
            g.mean,
            g.stderr
        ))
    })();
    report(9, "randomized improvement gain", t0, Some(Duration::from_secs(60)), outcome);
}

#[test]
fn criterion_10_assumption_machinery() {
    let t0 = Instant::now();
    let outcome = (|| {
        let d = uniform12();
        ensure(check_assumption1(&d), || "lo + E >= hi should hold on [1,2]".into())?;
        ensure(!check_assumption1(&make_uniform(0.0, 1.0).unwrap()), || "should fail on [0,1]".into())?;
        for n in 2..=8 {
            let a2 = check_assumption2(&d, n).map_err(|e| e.to_string())?;
            ensure(a2.a2_density_bound == (n <= 3), || format!("density bound at N={n}: {}", a2.a2_density_bound))?;
        }
        let ic = interior_at_thetabar(&d, 2).map_err(|e| e.to_string())?;
        ensure(ic.holds, || format!("interior check fails: {ic:?}"))?;
        let e = env(&d, 2, d.hi());
        let bf = brute_force(&e, 201, 3).map_err(|x| x.to_string())?;
        let v_aw = always_working(&e).1;
        ensure(bf.value > v_aw, || format!("oracle {} does not beat always-working {v_aw}", bf.value))?;
        Ok(format!("A1 ok, density bound holds iff N<=3, interior at hi with oracle V {:.6} > V_aw {v_aw}", bf.value))
    })();
    report(10, "assumption reports", t0, None, outcome);
}

#[test]
fn criterion_11_simulation_consistency() {
    let t0 = Instant::now();
    let outcome = (|| {
        let d = uniform12();
        let mut lines = Vec::new();
        for (alpha, expect) in [(2.0, Regime::ConsecutiveMenu), (6.0, Regime::AlwaysWorking)] {
            let e = env(&d, 2, alpha);
            let rep = solve(&e).map_err(|x| x.to_string())?;
            ensure(rep.regime == expect, || format!("alpha={alpha}: regime {:?}", rep.regime))?;
            let mech = rep.mechanism(&d).map_err(|x| x.to_string())?;
            for seed in [1u64, 2, 3] {
                let cfg = SimConfig { n_paths: 200_000, seed, deviation_nodes: 0, theta_grid: 0, dump_paths: false };
                let a = simulate(&mech, &e, &cfg).map_err(|x| x.to_string())?;
                ensure(a.principal.covers(a.exact_principal, 4.0), || {
                    format!("alpha={alpha} seed={seed}: {} +- {} vs {}", a.principal.mean, a.principal.stderr, a.exact_principal)
                })?;
                let b = simulate(&mech, &e, &cfg).map_err(|x| x.to_string())?;
                ensure(a == b, || format!("alpha={alpha} seed={seed}: rerun differs"))?;
                let ja = serde_json::to_string(&a).unwrap();
                ensure(ja == serde_json::to_string(&b).unwrap(), || "serialized rerun differs".into())?;
                let z = (a.principal.mean - a.exact_principal) / a.principal.stderr.max(f64::MIN_POSITIVE);
                lines.push(format!("{}/{seed}: z={z:.2}", rep.regime.label()));
            }
        }
        Ok(lines.join(", "))
    })();
    report(11, "simulation matches exact payoffs, reruns identical", t0, None, outcome);
}
