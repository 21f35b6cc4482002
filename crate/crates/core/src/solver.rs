//! Optimal deterministic mechanism: always-working benchmark, first-order
//! system for the consecutive-working menu, regime selection, the switch
//! point α̂, α sweeps and an unstructured grid oracle for small horizons.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{check_assumption1, CostDistribution, G_GRID_POINTS, G_SLACK};
use crate::error::{Error, Result};
use crate::history::{node_count, WorkHistory};
use crate::mechanism::{
    check_interim_ir, expected_work, final_payment, principal_payoff, u1_star, Environment, Mechanism, ThresholdProfile,
};

/// Target ∞-norm of the projected first-order residual.
pub const FOC_TOL: f64 = 1e-10;
/// `c1 >= hi - DEGENERATE_GAP` is classified as always-working.
pub const DEGENERATE_GAP: f64 = 1e-8;
const LOWER_OFFSET: f64 = 1e-12;
const MAX_NEWTON_ITERS: usize = 100;
const MAX_HALVINGS: usize = 30;
const FIXED_POINT_ITERS: usize = 200;
/// Largest horizon accepted by the grid oracle.
pub const BRUTE_FORCE_MAX_N: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ConsecutiveMenu,
    AlwaysWorking,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::ConsecutiveMenu => "consecutive_menu",
            Regime::AlwaysWorking => "always_working",
        }
    }
}

/// Start cutoffs `c_t(0…0)`, `t = 1..N`. Every started history works.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsecMenu {
    pub start_cutoffs: Vec<f64>,
}

impl ConsecMenu {
    pub fn n(&self) -> usize {
        self.start_cutoffs.len()
    }

    pub fn to_profile(&self, d: &CostDistribution) -> Result<ThresholdProfile> {
        let hi = d.hi();
        ThresholdProfile::from_fn(self.n(), &d.support(), |w| if w.started() { hi } else { self.start_cutoffs[w.len()] })
    }

    pub fn mechanism(&self, d: &CostDistribution) -> Result<Mechanism> {
        Ok(Mechanism::from_profile(self.to_profile(d)?, d))
    }
}

pub fn always_working_profile(env: &Environment) -> ThresholdProfile {
    ThresholdProfile::constant(env.n, env.d.hi(), &env.d.support()).expect("hi lies in the support")
}

/// Always-working mechanism and its payoff `αN − (hi + (N−1)E)`.
pub fn always_working(env: &Environment) -> (Mechanism, f64) {
    let mech = Mechanism::from_profile(always_working_profile(env), &env.d);
    let v = env.alpha * env.n as f64 - (env.d.hi() + (env.n as f64 - 1.0) * env.d.mean());
    (mech, v)
}

struct MenuTerms {
    big_f: Vec<f64>,
    integral: Vec<f64>,
    /// `Pr(0_{t-1})`
    pr: Vec<f64>,
    /// `W_t`, with `W_{N+1} = 0` stored at index N.
    tail: Vec<f64>,
}

fn menu_terms(c: &[f64], env: &Environment) -> MenuTerms {
    let n = c.len();
    let d = &env.d;
    let big_f: Vec<f64> = c.iter().map(|&x| d.cdf(x)).collect();
    let integral: Vec<f64> = c.iter().map(|&x| d.cdf_integral(x)).collect();
    let mut pr = vec![1.0; n];
    for t in 1..n {
        pr[t] = pr[t - 1] * (1.0 - big_f[t - 1]);
    }
    let surplus = env.alpha - d.mean();
    let mut tail = vec![0.0; n + 1];
    for t in (0..n).rev() {
        let a = env.alpha - c[t] + (n - 1 - t) as f64 * surplus;
        tail[t] = big_f[t] * a + integral[t] + (1.0 - big_f[t]) * tail[t + 1];
    }
    MenuTerms { big_f, integral, pr, tail }
}

/// Menu payoff assuming the all-shirk chain carries the binding rent.
pub fn menu_value(menu: &ConsecMenu, env: &Environment) -> f64 {
    let m = menu_terms(&menu.start_cutoffs, env);
    m.tail[0] - m.integral.iter().sum::<f64>()
}

/// First-order residual `(∂V/∂c_t) / f(c_t)` of the menu payoff:
/// `Pr(0_{t−1})·(α − c_t + (N−t)(α−E) − W_{t+1}) − F(c_t)/f(c_t)`.
pub fn foc_residual(c: &[f64], env: &Environment) -> Vec<f64> {
    let n = c.len();
    let m = menu_terms(c, env);
    let surplus = env.alpha - env.d.mean();
    (0..n)
        .map(|t| {
            let gap = env.alpha - c[t] + (n - 1 - t) as f64 * surplus - m.tail[t + 1];
            let f = env.d.pdf(c[t]);
            let ratio = if f > 0.0 { m.big_f[t] / f } else if m.big_f[t] == 0.0 { 0.0 } else { f64::INFINITY };
            m.pr[t] * gap - ratio
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AltRoot {
    pub cutoffs: Vec<f64>,
    pub value: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocSolution {
    pub menu: ConsecMenu,
    /// ∞-norm of the residual with bound-active components zeroed.
    pub residual: f64,
    pub iterations: usize,
    pub degenerate: bool,
    pub used_fallback: bool,
    /// Other distinct roots reached from the remaining starting points.
    pub alternative_roots: Vec<AltRoot>,
    pub warnings: Vec<String>,
}

struct Bounds {
    lo: f64,
    hi: f64,
}

impl Bounds {
    fn project(&self, c: &mut [f64]) {
        for x in c.iter_mut() {
            *x = x.clamp(self.lo, self.hi);
        }
    }
}

fn projected(c: &[f64], r: &[f64], b: &Bounds) -> Vec<f64> {
    c.iter()
        .zip(r)
        .map(|(&x, &v)| if (x >= b.hi && v > 0.0) || (x <= b.lo && v < 0.0) { 0.0 } else { v })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::INFINITY } else { m.max(x.abs()) })
}

struct NewtonRun {
    c: Vec<f64>,
    norm: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn newton(env: &Environment, start: Vec<f64>, b: &Bounds) -> NewtonRun {
    let n = start.len();
    let mut c = start;
    b.project(&mut c);
    let h = 1e-6 * (env.d.hi() - env.d.lo());
    let mut r = foc_residual(&c, env);
    let mut p = projected(&c, &r, b);
    let mut norm = inf_norm(&p);
    let mut trace = vec![norm];
    let mut iterations = 0;
    while iterations < MAX_NEWTON_ITERS && norm > 1e-14 {
        iterations += 1;
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut cj = c.clone();
            let step = if c[j] + h <= b.hi { h } else { -h };
            cj[j] += step;
            let rj = foc_residual(&cj, env);
            for i in 0..n {
                jac[(i, j)] = (rj[i] - r[i]) / step;
            }
        }
        let mut rhs = DVector::from_iterator(n, r.iter().map(|v| -v));
        for i in 0..n {
            if p[i] == 0.0 && r[i] != 0.0 {
                // bound-active: keep the variable fixed
                for j in 0..n {
                    jac[(i, j)] = 0.0;
                }
                jac[(i, i)] = 1.0;
                rhs[i] = 0.0;
            }
        }
        let Some(delta) = jac.lu().solve(&rhs) else { break };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let mut trial: Vec<f64> = c.iter().zip(delta.iter()).map(|(x, d)| x + lambda * d).collect();
            b.project(&mut trial);
            let rt = foc_residual(&trial, env);
            let pt = projected(&trial, &rt, b);
            let nt = inf_norm(&pt);
            if nt < norm {
                c = trial;
                r = rt;
                p = pt;
                norm = nt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        trace.push(norm);
        if !accepted {
            break;
        }
    }
    NewtonRun { converged: norm <= FOC_TOL, c, norm, iterations, trace }
}

fn fixed_point(env: &Environment, mut c: Vec<f64>, b: &Bounds) -> Vec<f64> {
    let scale = 0.5 * (env.d.hi() - env.d.lo()).min(1.0);
    for _ in 0..FIXED_POINT_ITERS {
        let r = foc_residual(&c, env);
        for (x, v) in c.iter_mut().zip(&r) {
            let v = if v.is_finite() { *v } else { -1.0 };
            *x += scale * v / (1.0 + v.abs());
        }
        b.project(&mut c);
    }
    c
}

fn g_monotone(d: &CostDistribution) -> bool {
    let (lo, hi) = (d.lo(), d.hi());
    let step = (hi - lo) / (G_GRID_POINTS - 1) as f64;
    let mut prev = d.virtual_cost(lo);
    for i in 1..G_GRID_POINTS {
        let g = d.virtual_cost(if i == G_GRID_POINTS - 1 { hi } else { lo + step * i as f64 });
        if g - prev < G_SLACK {
            return false;
        }
        prev = g;
    }
    true
}

fn refuse_below_top(env: &Environment) -> Result<()> {
    if env.alpha < env.d.hi() {
        return Err(Error::Refused(format!(
            "alpha={} is below the top cost {}; the analysis assumes work is always efficient",
            env.alpha,
            env.d.hi()
        )));
    }
    Ok(())
}

/// Solve the menu first-order system by damped Newton from several starts.
pub fn solve_foc_system(env: &Environment) -> Result<FocSolution> {
    refuse_below_top(env)?;
    let d = &env.d;
    let n = env.n;
    let (lo, hi) = (d.lo(), d.hi());
    let b = Bounds { lo: lo + LOWER_OFFSET, hi };
    let mut warnings = Vec::new();
    if !g_monotone(d) {
        warnings.push("virtual cost is not monotone on the check grid".to_string());
    }
    let init = d.virtual_cost_inverse(env.alpha.min(d.virtual_cost(hi))).unwrap_or(0.5 * (lo + hi));
    let w = hi - lo;
    let mut starts = vec![vec![init; n]];
    let mut near_top = vec![init; n];
    near_top[0] = hi - 0.01 * w;
    starts.push(near_top);
    starts.push((0..n).map(|t| hi - w * (t + 1) as f64 / (n + 2) as f64).collect());
    starts.push(vec![lo + 0.25 * w; n]);
    let mut top = vec![lo + 0.1 * w; n];
    top[0] = hi;
    starts.push(top);

    let mut roots: Vec<(Vec<f64>, f64, usize, bool)> = Vec::new();
    let mut last_trace = Vec::new();
    let mut best_norm = f64::INFINITY;
    let mut total_iters = 0;
    for (k, s) in starts.into_iter().enumerate() {
        let mut run = newton(env, s, &b);
        let mut fell_back = false;
        if !run.converged {
            fell_back = true;
            let fp = fixed_point(env, run.c.clone(), &b);
            let again = newton(env, fp, &b);
            let mut trace = run.trace;
            trace.extend(again.trace.iter().copied());
            run = NewtonRun { trace, iterations: run.iterations + again.iterations, ..again };
        }
        total_iters += run.iterations;
        if run.norm < best_norm {
            best_norm = run.norm;
            last_trace = run.trace.clone();
        }
        if run.converged && !roots.iter().any(|(c, ..)| inf_norm(&sub(c, &run.c)) < 1e-6) {
            roots.push((run.c, run.norm, run.iterations, fell_back && k == 0));
        }
    }
    if roots.is_empty() {
        return Err(Error::NonConvergence { residual: best_norm, iterations: total_iters, trace: last_trace });
    }
    let value_of = |c: &[f64]| -> f64 {
        let menu = ConsecMenu { start_cutoffs: c.to_vec() };
        if c[0] >= hi - DEGENERATE_GAP {
            always_working(env).1
        } else {
            menu.mechanism(d).map(|m| principal_payoff(&m, env)).unwrap_or(f64::NEG_INFINITY)
        }
    };
    let values: Vec<f64> = roots.iter().map(|(c, ..)| value_of(c)).collect();
    let best = (0..roots.len())
        .max_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap_or(std::cmp::Ordering::Equal).then(j.cmp(&i)))
        .expect("nonempty");
    let alternative_roots = roots
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(i, (c, r, ..))| AltRoot { cutoffs: c.clone(), value: values[i], residual: *r })
        .collect();
    let (c, residual, iterations, used_fallback) = roots.swap_remove(best);
    Ok(FocSolution {
        degenerate: c[0] >= hi - DEGENERATE_GAP,
        menu: ConsecMenu { start_cutoffs: c },
        residual,
        iterations,
        used_fallback,
        alternative_roots,
        warnings,
    })
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub holds: bool,
    /// `min_t (c_{t+1} + Σ_{i≥t+2} I(c_i)) + E − hi`; absent for N = 1.
    pub margin: Option<f64>,
    pub assumption1: bool,
}

pub fn feasibility(menu: &ConsecMenu, env: &Environment) -> Feasibility {
    let d = &env.d;
    let c = &menu.start_cutoffs;
    let n = c.len();
    let assumption1 = check_assumption1(d);
    let margin = (n >= 2).then(|| {
        let integral: Vec<f64> = c.iter().map(|&x| d.cdf_integral(x)).collect();
        let mut best = f64::INFINITY;
        for t in 0..=n - 2 {
            let tail: f64 = integral[t + 1..].iter().sum();
            best = best.min(c[t] + tail);
        }
        best + d.mean() - d.hi()
    });
    let holds = assumption1 || margin.map_or(true, |m| m >= 0.0);
    Feasibility { holds, margin, assumption1 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteriorCheck {
    pub holds: bool,
    /// `1/f(hi)`
    pub lhs: f64,
    /// `(N−1)(hi−E) − W_2` at the first-order solution for α = hi.
    pub rhs: f64,
    pub cutoffs: Vec<f64>,
}

/// Whether the menu beats always-working at α = hi.
pub fn interior_at_thetabar(d: &CostDistribution, n: usize) -> Result<InteriorCheck> {
    let env = Environment::new(d.clone(), n, d.hi())?;
    let sol = solve_foc_system(&env)?;
    let c = sol.menu.start_cutoffs;
    let hi = d.hi();
    let lhs = 1.0 / d.pdf(hi);
    let mut w2 = 0.0;
    let mut carry = 1.0;
    for (t, &ct) in c.iter().enumerate().skip(1) {
        let f = d.cdf(ct);
        w2 += carry * (f * (hi - ct) + d.cdf_integral(ct) + f * (n - 1 - t) as f64 * (hi - d.mean()));
        carry *= 1.0 - f;
    }
    let rhs = (n as f64 - 1.0) * (hi - d.mean()) - w2;
    Ok(InteriorCheck { holds: lhs > rhs, lhs, rhs, cutoffs: c })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub assumption1: bool,
    pub start_participation: bool,
    pub start_participation_margin: Option<f64>,
    pub interior_at_thetabar: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartPayment {
    pub t: usize,
    pub payment: f64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub alpha: f64,
    pub regime: Regime,
    /// Start cutoffs of the menu candidate (absent if the first-order
    /// system failed and no fallback was possible).
    pub menu: Option<Vec<f64>>,
    pub u1_star: f64,
    /// Rent from the minimum over `t <= N−1` only.
    pub u1_star_truncated: f64,
    #[serde(rename = "V_star")]
    pub v_star: f64,
    #[serde(rename = "V_aw")]
    pub v_aw: f64,
    #[serde(rename = "V_cm")]
    pub v_cm: Option<f64>,
    pub foc_residual: Option<f64>,
    pub foc_iterations: usize,
    pub degenerate: bool,
    pub alternative_roots: Vec<AltRoot>,
    pub feasibility: FeasibilityReport,
    pub ir_min_slack: f64,
    pub expected_work: f64,
    pub start_payments: Vec<StartPayment>,
    pub degraded_precision: bool,
    pub warnings: Vec<String>,
}

impl SolveReport {
    /// The selected mechanism.
    pub fn mechanism(&self, d: &CostDistribution) -> Result<Mechanism> {
        match (self.regime, &self.menu) {
            (Regime::ConsecutiveMenu, Some(c)) => ConsecMenu { start_cutoffs: c.clone() }.mechanism(d),
            _ => Ok(Mechanism::from_profile(ThresholdProfile::constant(self.n, d.hi(), &d.support())?, d)),
        }
    }
}

fn start_payments(mech: &Mechanism) -> Vec<StartPayment> {
    let n = mech.n();
    (1..=n)
        .filter_map(|t| {
            let mut leaf = WorkHistory::zeros(t - 1);
            for _ in t..=n {
                leaf = leaf.push(true);
            }
            let probability = mech.reach(&leaf);
            (probability > 0.0).then(|| StartPayment { t, payment: final_payment(mech, &leaf).expect("leaf"), probability })
        })
        .collect()
}

/// Optimal deterministic mechanism for `env`.
pub fn solve(env: &Environment) -> Result<SolveReport> {
    refuse_below_top(env)?;
    let d = &env.d;
    let (aw_mech, v_aw) = always_working(env);
    let mut warnings = Vec::new();
    let mut degraded = false;
    let (menu, foc_residual, foc_iterations, degenerate, alternative_roots) = match solve_foc_system(env) {
        Ok(sol) => {
            warnings.extend(sol.warnings.iter().cloned());
            if sol.used_fallback {
                warnings.push("first-order system needed the fixed-point fallback".into());
            }
            (Some(sol.menu.start_cutoffs), Some(sol.residual), sol.iterations, sol.degenerate, sol.alternative_roots)
        }
        Err(Error::NonConvergence { residual, .. }) if env.n <= BRUTE_FORCE_MAX_N => {
            warnings.push(format!("first-order system failed (residual {residual:e}); using menu grid"));
            degraded = true;
            let g = menu_grid_search(env, 101, 8)?;
            let degenerate = g.start_cutoffs[0] >= d.hi() - DEGENERATE_GAP;
            (Some(g.start_cutoffs), None, 0, degenerate, Vec::new())
        }
        Err(e) => return Err(e),
    };
    let interior = interior_at_thetabar(d, env.n).ok().map(|x| x.holds);

    let mut chosen = (Regime::AlwaysWorking, aw_mech, v_aw);
    let mut v_cm = None;
    let mut feas = Feasibility { holds: true, margin: None, assumption1: check_assumption1(d) };
    if let Some(c) = menu.as_ref().filter(|_| !degenerate) {
        let cm = ConsecMenu { start_cutoffs: c.clone() };
        feas = feasibility(&cm, env);
        let mech = cm.mechanism(d)?;
        let v = principal_payoff(&mech, env);
        v_cm = Some(v);
        let ir = check_interim_ir(&mech, env);
        if !feas.holds {
            warnings.push("menu violates the started-branch participation condition".into());
        }
        if ir.violation.is_some() {
            warnings.push(format!("menu interim participation fails at t={}, \"{}\"", ir.argmin_t, ir.argmin_history));
        }
        if feas.holds && ir.violation.is_none() && v > v_aw {
            chosen = (Regime::ConsecutiveMenu, mech, v);
        }
    } else if let Some(c) = menu.as_ref() {
        feas = feasibility(&ConsecMenu { start_cutoffs: c.clone() }, env);
    }
    let (regime, mech, v_star) = chosen;
    let rent = u1_star(mech.profile(), d);
    let ir = check_interim_ir(&mech, env);
    Ok(SolveReport {
        n: env.n,
        alpha: env.alpha,
        regime,
        menu,
        u1_star: mech.u1_star(),
        u1_star_truncated: rent.value_truncated,
        v_star,
        v_aw,
        v_cm,
        foc_residual,
        foc_iterations,
        degenerate,
        alternative_roots,
        feasibility: FeasibilityReport {
            assumption1: feas.assumption1,
            start_participation: feas.holds,
            start_participation_margin: feas.margin,
            interior_at_thetabar: interior,
        },
        ir_min_slack: ir.min_slack,
        expected_work: expected_work(&mech),
        start_payments: start_payments(&mech),
        degraded_precision: degraded,
        warnings,
    })
}

/// Menu versus always-working at one α: `(V_cm − V_aw, menu selected)`.
fn regime_gap(d: &CostDistribution, n: usize, alpha: f64) -> Result<(f64, bool)> {
    let env = Environment::new(d.clone(), n, alpha)?;
    let sol = solve_foc_system(&env)?;
    if sol.degenerate {
        return Ok((0.0, false));
    }
    let v_aw = always_working(&env).1;
    let cm = sol.menu;
    let v = principal_payoff(&cm.mechanism(d)?, &env);
    let feasible = feasibility(&cm, &env).holds;
    Ok((v - v_aw, feasible && v > v_aw))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaHat {
    pub alpha_hat: f64,
    /// `V_cm − V_aw` at the returned α̂.
    pub gap_at_alpha_hat: f64,
    pub bracket: (f64, f64),
    pub interior_at_thetabar: bool,
    /// Set when α̂ = hi by convention (no interior region).
    pub conventional: bool,
    pub single_crossing: bool,
    pub regime_changes: usize,
}

/// Bisection for the α at which the optimal regime turns to always-working.
pub fn find_alpha_hat(d: &CostDistribution, n: usize) -> Result<AlphaHat> {
    let hi = d.hi();
    let upper = (n as f64 - 1.0) * hi + d.virtual_cost(hi);
    if !upper.is_finite() {
        return Err(Error::Bracket { lo: hi, hi: upper, gap_lo: f64::NAN, gap_hi: f64::NAN });
    }
    let interior = interior_at_thetabar(d, n)?.holds;
    let (gap_lo, cons_lo) = regime_gap(d, n, hi)?;
    if !interior || !cons_lo {
        return Ok(AlphaHat {
            alpha_hat: hi,
            gap_at_alpha_hat: gap_lo,
            bracket: (hi, upper),
            interior_at_thetabar: interior,
            conventional: true,
            single_crossing: true,
            regime_changes: 0,
        });
    }
    let (gap_hi, cons_hi) = regime_gap(d, n, upper)?;
    if cons_hi {
        return Err(Error::Bracket { lo: hi, hi: upper, gap_lo, gap_hi });
    }
    let (mut a, mut b) = (hi, upper);
    let width = 1e-8 * hi.abs().max(f64::MIN_POSITIVE);
    while b - a > width {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if regime_gap(d, n, m)?.1 {
            a = m;
        } else {
            b = m;
        }
    }
    let alpha_hat = 0.5 * (a + b);
    let gap_at = regime_gap(d, n, alpha_hat)?.0;
    let flags: Vec<bool> = (0..50)
        .into_par_iter()
        .map(|k| regime_gap(d, n, hi + (upper - hi) * k as f64 / 49.0).map(|g| g.1))
        .collect::<Result<_>>()?;
    let changes = flags.windows(2).filter(|w| w[0] != w[1]).count();
    Ok(AlphaHat {
        alpha_hat,
        gap_at_alpha_hat: gap_at,
        bracket: (hi, upper),
        interior_at_thetabar: interior,
        conventional: false,
        single_crossing: changes <= 1,
        regime_changes: changes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub regime: Regime,
    pub v_star: f64,
    pub v_aw: f64,
    /// `c_t(0…0)`; `hi` for every t under always-working.
    pub cutoffs: Vec<f64>,
    pub expected_work: f64,
}

pub fn sweep_alpha(d: &CostDistribution, n: usize, alphas: &[f64]) -> Result<Vec<SweepRow>> {
    if alphas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Argument("alpha grid must be ascending".into()));
    }
    alphas
        .par_iter()
        .map(|&alpha| {
            let env = Environment::new(d.clone(), n, alpha)?;
            let r = solve(&env)?;
            let cutoffs = match (r.regime, &r.menu) {
                (Regime::ConsecutiveMenu, Some(c)) => c.clone(),
                _ => vec![d.hi(); n],
            };
            Ok(SweepRow { alpha, regime: r.regime, v_star: r.v_star, v_aw: r.v_aw, cutoffs, expected_work: r.expected_work })
        })
        .collect()
}

/// Write sweep rows as CSV: `alpha,regime,V_star,V_aw,c1..cN,expected_work`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let n = rows.first().map_or(0, |r| r.cutoffs.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["alpha".to_string(), "regime".into(), "V_star".into(), "V_aw".into()];
    header.extend((1..=n).map(|t| format!("c{t}")));
    header.push("expected_work".into());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.alpha.to_string(), r.regime.label().to_string(), r.v_star.to_string(), r.v_aw.to_string()];
        rec.extend(r.cutoffs.iter().map(|c| c.to_string()));
        rec.push(r.expected_work.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Payoff of an arbitrary profile with N <= 3, from per-node `c`, `F(c)`,
/// `I(c)`. Rent is taken over reachable nodes.
fn small_tree_value(n: usize, alpha: f64, c: &[f64], fc: &[f64], ic: &[f64]) -> f64 {
    let inner = node_count(n);
    let mut reach = [0.0f64; 7];
    let mut s = [0.0f64; 7];
    reach[0] = 1.0;
    let mut min_s = 0.0f64;
    let mut v = 0.0;
    for i in 0..inner {
        if i > 0 {
            let parent = (i - 1) / 2;
            let work = i % 2 == 0;
            reach[i] = reach[parent] * if work { fc[parent] } else { 1.0 - fc[parent] };
            s[i] = s[parent] + if work { c[parent] } else { 0.0 } - ic[i];
            if reach[i] > 0.0 {
                min_s = min_s.min(s[i]);
            }
            v += reach[i] * (fc[i] * (alpha - c[i]) + ic[i]);
        } else {
            v += fc[0] * (alpha - c[0]);
        }
    }
    v + min_s
}

#[derive(Clone, Debug, PartialEq)]
pub struct BruteForce {
    pub profile: ThresholdProfile,
    pub value: f64,
    /// Final refinement step.
    pub step: f64,
    pub evaluations: u64,
}

struct Evaluator<'a> {
    env: &'a Environment,
}

impl Evaluator<'_> {
    fn value(&self, c: &[f64]) -> f64 {
        let d = &self.env.d;
        let fc: Vec<f64> = c.iter().map(|&x| d.cdf(x)).collect();
        let ic: Vec<f64> = c.iter().map(|&x| d.cdf_integral(x)).collect();
        small_tree_value(self.env.n, self.env.alpha, c, &fc, &ic)
    }
}

fn grid_values(d: &CostDistribution, points: usize) -> Vec<f64> {
    let (lo, hi) = (d.lo(), d.hi());
    (0..points)
        .map(|k| if k + 1 == points { hi } else { lo + (hi - lo) * k as f64 / (points - 1) as f64 })
        .collect()
}

/// Exhaustive grid over the free coordinates (`expand` maps them to a full
/// node vector), then coordinate refinement halving the step each round.
fn grid_search(
    env: &Environment,
    dims: usize,
    grid_points: usize,
    refine_rounds: usize,
    expand: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
) -> (Vec<f64>, f64, f64, u64) {
    let d = &env.d;
    let grid = grid_values(d, grid_points);
    let gf: Vec<f64> = grid.iter().map(|&x| d.cdf(x)).collect();
    let gi: Vec<f64> = grid.iter().map(|&x| d.cdf_integral(x)).collect();
    let n = env.n;
    let total = (grid_points as u64).pow(dims as u32);
    let chunk = (grid_points as u64).pow(dims.saturating_sub(1) as u32);
    let hi = d.hi();
    let f_hi = d.cdf(hi);
    let i_hi = d.cdf_integral(hi);
    let best = (0..grid_points as u64)
        .into_par_iter()
        .map(|first| {
            let mut idx = vec![0usize; dims];
            idx[0] = first as usize;
            let mut best = (f64::NEG_INFINITY, 0u64);
            for k in 0..chunk {
                let mut rem = k;
                for j in (1..dims).rev() {
                    idx[j] = (rem % grid_points as u64) as usize;
                    rem /= grid_points as u64;
                }
                let free: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
                let c = expand(&free);
                let mut fc = [0.0; 7];
                let mut ic = [0.0; 7];
                for (m, &x) in c.iter().enumerate() {
                    if let Some(pos) = idx.iter().position(|&i| grid[i] == x) {
                        fc[m] = gf[idx[pos]];
                        ic[m] = gi[idx[pos]];
                    } else if x == hi {
                        fc[m] = f_hi;
                        ic[m] = i_hi;
                    } else {
                        fc[m] = d.cdf(x);
                        ic[m] = d.cdf_integral(x);
                    }
                }
                let v = small_tree_value(n, env.alpha, &c, &fc, &ic);
                let code = first * chunk + k;
                if v > best.0 || (v == best.0 && code > best.1) {
                    best = (v, code);
                }
            }
            best
        })
        .reduce(
            || (f64::NEG_INFINITY, 0),
            |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 > a.1) { b } else { a },
        );
    let mut code = best.1;
    let mut free = vec![0.0; dims];
    for j in (0..dims).rev() {
        free[j] = grid[(code % grid_points as u64) as usize];
        code /= grid_points as u64;
    }
    let eval = Evaluator { env };
    let mut value = eval.value(&expand(&free));
    let mut evaluations = total;
    let h = (d.hi() - d.lo()) / (grid_points - 1) as f64;
    let mut step = h;
    for _ in 0..refine_rounds {
        step *= 0.5;
        for _pass in 0..10_000 {
            let mut improved = false;
            for j in 0..dims {
                for dir in [1.0, -1.0] {
                    let mut cand = free.clone();
                    cand[j] = (cand[j] + dir * step).clamp(d.lo(), d.hi());
                    if cand[j] == free[j] {
                        continue;
                    }
                    let v = eval.value(&expand(&cand));
                    evaluations += 1;
                    if v > value + 1e-15 {
                        free = cand;
                        value = v;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }
    // Ties and flat directions resolve toward the top cost.
    for j in 0..dims {
        if free[j] < hi {
            let mut cand = free.clone();
            cand[j] = hi;
            let v = eval.value(&expand(&cand));
            evaluations += 1;
            if v >= value - 1e-12 {
                free = cand;
                value = value.max(v);
            }
        }
    }
    (free, value, step, evaluations)
}

/// Structure-free grid oracle over all `2^N − 1` cutoffs (N <= 3).
pub fn brute_force(env: &Environment, grid_points: usize, refine_rounds: usize) -> Result<BruteForce> {
    let n = env.n;
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::Size { n, max: BRUTE_FORCE_MAX_N });
    }
    if grid_points < 2 {
        return Err(Error::Argument("grid needs at least 2 points per axis".into()));
    }
    let dims = node_count(n);
    let (free, value, step, evaluations) = grid_search(env, dims, grid_points, refine_rounds, &|c: &[f64]| c.to_vec());
    let profile = ThresholdProfile::new(n, free, &env.d.support())?;
    Ok(BruteForce { profile, value, step, evaluations })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MenuGrid {
    pub start_cutoffs: Vec<f64>,
    pub value: f64,
    pub step: f64,
}

/// Grid search restricted to consecutive menus (N <= 3).
pub fn menu_grid_search(env: &Environment, grid_points: usize, refine_rounds: usize) -> Result<MenuGrid> {
    let n = env.n;
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::Size { n, max: BRUTE_FORCE_MAX_N });
    }
    if grid_points < 2 {
        return Err(Error::Argument("grid needs at least 2 points per axis".into()));
    }
    let hi = env.d.hi();
    let expand = move |z: &[f64]| -> Vec<f64> {
        (0..node_count(n))
            .map(|i| {
                let w = WorkHistory::from_node_index(i);
                if w.started() {
                    hi
                } else {
                    z[w.len()]
                }
            })
            .collect()
    };
    let (free, value, step, _) = grid_search(env, n, grid_points, refine_rounds, &expand);
    Ok(MenuGrid { start_cutoffs: free, value, step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{make_truncated_normal, make_uniform};
    use crate::history::histories_of_length;
    use proptest::prelude::*;

    fn u12(n: usize, alpha: f64) -> Environment {
        Environment::new(make_uniform(1.0, 2.0).unwrap(), n, alpha).unwrap()
    }

    #[test]
    fn always_working_values() {
        let e = Environment::new(make_uniform(0.0, 1.0).unwrap(), 3, 1.5).unwrap();
        assert_eq!(always_working(&e).1, 2.5);
        let (m, v) = always_working(&u12(2, 2.0));
        assert_eq!(v, 0.5);
        assert_eq!(principal_payoff(&m, &u12(2, 2.0)), 0.5);
        let zero = u12(3, (2.0 + 2.0 * 1.5) / 3.0);
        assert!(always_working(&zero).1.abs() < 1e-15);
    }

    #[test]
    fn single_period_reduces_to_virtual_cost() {
        let e = Environment::new(make_uniform(1.0, 2.0).unwrap(), 1, 2.0).unwrap();
        let sol = solve_foc_system(&e).unwrap();
        assert!((sol.menu.start_cutoffs[0] - 1.5).abs() < 1e-12);
        let e = Environment::new(make_uniform(1.0, 2.0).unwrap(), 1, 1.8);
        assert!(e.is_ok());
        // residual root at G^{-1}(1.8) = 1.4 even though solve() refuses alpha < hi
        let r = foc_residual(&[1.4], &e.unwrap());
        assert!(r[0].abs() < 1e-15);
    }

    #[test]
    fn n2_reference_root() {
        let e = u12(2, 2.0);
        let sol = solve_foc_system(&e).unwrap();
        let c = &sol.menu.start_cutoffs;
        assert!(sol.residual <= FOC_TOL);
        // frozen from an independent 2-D grid over the menu family
        assert!((c[0] - 1.633974596).abs() < 1e-6, "{c:?}");
        assert!((c[1] - 1.267949192).abs() < 1e-6, "{c:?}");
        assert!(!sol.degenerate);
        assert!((menu_value(&sol.menu, &e) - 0.598076211353).abs() < 1e-9);
    }

    #[test]
    fn menu_value_matches_exact_payoff() {
        let e = u12(3, 2.2);
        let menu = ConsecMenu { start_cutoffs: vec![1.8, 1.4, 1.3] };
        let m = menu.mechanism(&e.d).unwrap();
        assert!((menu_value(&menu, &e) - principal_payoff(&m, &e)).abs() < 1e-13);
    }

    #[test]
    fn residual_is_scaled_gradient() {
        let e = u12(3, 2.1);
        let c = [1.75, 1.3, 1.2];
        let r = foc_residual(&c, &e);
        for t in 0..3 {
            let h = 1e-6;
            let mut up = c.to_vec();
            let mut dn = c.to_vec();
            up[t] += h;
            dn[t] -= h;
            let g = (menu_value(&ConsecMenu { start_cutoffs: up }, &e) - menu_value(&ConsecMenu { start_cutoffs: dn }, &e)) / (2.0 * h);
            assert!((g / e.d.pdf(c[t]) - r[t]).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn residual_matches_continuation_stats() {
        use crate::mechanism::continuation_stats;
        let e = u12(3, 2.1);
        let c = vec![1.75, 1.3, 1.2];
        let m = ConsecMenu { start_cutoffs: c.clone() }.mechanism(&e.d).unwrap();
        let r = foc_residual(&c, &e);
        for t in 1..=3 {
            let z = WorkHistory::zeros(t - 1);
            let v1 = continuation_stats(&m, &e, &z.push(true)).unwrap().v_hat;
            let v0 = continuation_stats(&m, &e, &z.push(false)).unwrap().v_hat;
            let pr = m.reach(&z);
            let want = pr * (e.alpha - c[t - 1] + v1 - v0) - e.d.cdf(c[t - 1]) / e.d.pdf(c[t - 1]);
            assert!((want - r[t - 1]).abs() < 1e-13, "t={t}");
        }
    }

    #[test]
    fn large_alpha_degenerates() {
        let sol = solve_foc_system(&u12(2, 10.0)).unwrap();
        assert!(sol.degenerate);
        assert_eq!(sol.menu.start_cutoffs[0], 2.0);
        let r = solve(&u12(2, 6.0)).unwrap();
        assert_eq!(r.regime, Regime::AlwaysWorking);
        assert_eq!(r.u1_star, 0.0);
        assert_eq!(r.ir_min_slack, 0.0);
    }

    #[test]
    fn solve_refuses_low_alpha() {
        assert!(matches!(solve(&u12(2, 1.5)), Err(Error::Refused(_))));
    }

    #[test]
    fn solve_n2_alpha2() {
        let r = solve(&u12(2, 2.0)).unwrap();
        assert_eq!(r.regime, Regime::ConsecutiveMenu);
        assert!(r.v_star > r.v_aw);
        assert_eq!(r.v_aw, 0.5);
        assert!(r.feasibility.start_participation);
        assert!(r.ir_min_slack.abs() < 1e-10);
        assert_eq!(r.start_payments.len(), 2);
        let c = r.menu.as_ref().unwrap();
        let i = |x: f64| (x - 1.0) * (x - 1.0) / 2.0;
        assert!((r.start_payments[0].payment - (c[0] + 1.5 + i(c[1]))).abs() < 1e-12);
        assert!((r.start_payments[1].payment - c[1]).abs() < 1e-12);
    }

    #[test]
    fn solve_n1_posted_price() {
        let r = solve(&u12(1, 2.0)).unwrap();
        assert_eq!(r.regime, Regime::ConsecutiveMenu);
        assert!((r.menu.as_ref().unwrap()[0] - 1.5).abs() < 1e-12);
        assert!((r.v_star - 0.25).abs() < 1e-12);
    }

    #[test]
    fn n3_reference_root() {
        let sol = solve_foc_system(&u12(3, 2.0)).unwrap();
        let c = &sol.menu.start_cutoffs;
        for (x, want) in c.iter().zip([1.78119822, 1.24565175, 1.14166976]) {
            assert!((x - want).abs() < 1e-7, "{c:?}");
        }
    }

    #[test]
    fn feasibility_examples() {
        let e = u12(2, 2.0);
        let menu = ConsecMenu { start_cutoffs: vec![1.6, 1.3] };
        let f = feasibility(&menu, &e);
        assert!(f.holds && f.assumption1);
        // the started-branch sum includes I(c2) even for N = 2
        assert!((f.margin.unwrap() - (1.6 + 0.045 + 1.5 - 2.0)).abs() < 1e-12);
        let e01 = Environment::new(make_uniform(0.0, 1.0).unwrap(), 3, 1.0).unwrap();
        let low = ConsecMenu { start_cutoffs: vec![0.1, 0.1, 0.1] };
        let f = feasibility(&low, &e01);
        assert!(!f.holds);
        // min over t of {0.1 + 2·0.005, 0.1 + 0.005} + 0.5 − 1
        assert!((f.margin.unwrap() - (0.105 - 0.5)).abs() < 1e-12);
        assert_eq!(feasibility(&ConsecMenu { start_cutoffs: vec![0.3] }, &e01).margin, None);
    }

    #[test]
    fn interior_examples() {
        let d = make_uniform(1.0, 2.0).unwrap();
        let c2 = interior_at_thetabar(&d, 2).unwrap();
        assert!(c2.holds);
        assert_eq!(c2.lhs, 1.0);
        let c3 = interior_at_thetabar(&d, 3).unwrap();
        assert!(c3.holds);
        let tn = make_truncated_normal(1.5, 1.0, 1.0, 2.0).unwrap();
        let rep = crate::dist::check_assumption2(&tn, 2).unwrap();
        assert!(rep.a2_density_bound);
        assert!(interior_at_thetabar(&tn, 2).unwrap().holds);
    }

    #[test]
    fn alpha_hat_n2_matches_continuous_handoff() {
        let d = make_uniform(1.0, 2.0).unwrap();
        let ah = find_alpha_hat(&d, 2).unwrap();
        // continuous hand-off: N α̂ = G(hi) + (N−1)E
        assert!((ah.alpha_hat - 2.25).abs() < 1e-6, "{ah:?}");
        assert!(ah.gap_at_alpha_hat.abs() <= 1e-7);
        assert!(ah.single_crossing);
        assert_eq!(ah.regime_changes, 1);
    }

    #[test]
    fn sweep_csv_layout() {
        let d = make_uniform(1.0, 2.0).unwrap();
        let rows = sweep_alpha(&d, 2, &[2.0, 2.5]).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "alpha,regime,V_star,V_aw,c1,c2,expected_work");
        assert!(lines.next().unwrap().starts_with("2,consecutive_menu,"));
        assert!(lines.next().unwrap().starts_with("2.5,always_working,"));
        assert!(sweep_alpha(&d, 2, &[2.5, 2.0]).is_err());
    }

    #[test]
    fn brute_force_guards_and_static_case() {
        assert!(matches!(brute_force(&u12(4, 2.0), 5, 0), Err(Error::Size { n: 4, max: 3 })));
        for alpha in [2.0, 2.4, 3.0] {
            let bf = brute_force(&u12(1, alpha), 201, 3).unwrap();
            let x = e_inv(alpha);
            assert!((bf.profile.cutoffs()[0] - x).abs() <= 5e-3, "alpha={alpha}");
        }
    }

    fn e_inv(alpha: f64) -> f64 {
        make_uniform(1.0, 2.0).unwrap().virtual_cost_inverse(alpha.min(3.0)).unwrap()
    }

    #[test]
    fn brute_force_always_working_at_high_alpha() {
        let bf = brute_force(&u12(2, 6.0), 41, 2).unwrap();
        assert!(bf.profile.cutoffs().iter().all(|&c| c == 2.0));
        assert_eq!(bf.value, 8.5);
    }

    proptest! {
        #[test]
        fn small_tree_value_matches_mechanism(n in 1usize..4, us in proptest::collection::vec(0.0f64..1.0, 7), alpha in 2.0f64..4.0) {
            let e = u12(n, alpha);
            let c: Vec<f64> = (0..node_count(n)).map(|i| 1.0 + us[i]).collect();
            let m = Mechanism::from_profile(ThresholdProfile::new(n, c.clone(), &e.d.support()).unwrap(), &e.d);
            let v = Evaluator { env: &e }.value(&c);
            prop_assert!((v - principal_payoff(&m, &e)).abs() < 1e-12);
        }

        #[test]
        fn expected_work_counts_leaves(us in proptest::collection::vec(0.0f64..1.0, 3)) {
            let e = u12(3, 2.0);
            let menu = ConsecMenu { start_cutoffs: us.iter().map(|u| 1.0 + u).collect() };
            let m = menu.mechanism(&e.d).unwrap();
            let direct: f64 = histories_of_length(3, 3).unwrap().iter().map(|w| m.reach(w) * w.work_count() as f64).sum();
            prop_assert!((expected_work(&m) - direct).abs() < 1e-12);
        }
    }
}
