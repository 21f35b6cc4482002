//! Monte Carlo runs through a mechanism and behavioural incentive searches.
//!
//! Path `i` draws from a ChaCha8 generator seeded with `seed` on stream `i`,
//! so results do not depend on thread count or scheduling.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::CostDistribution;
use crate::error::{Error, Result};
use crate::history::{WorkHistory, MAX_N};
use crate::mechanism::{
    agent_interim_utility, final_payment, flipped_plan_value, principal_payoff, Environment, Mechanism, NodeState,
};
use crate::quad::pairwise_sum;
use crate::stochastic::{delta_of, stochastic_payoff, StochasticMechanism};

/// Ex-post payoffs above `-NEGATIVE_EPS` count as nonnegative.
pub const NEGATIVE_EPS: f64 = 1e-12;
const QUANTILES: [f64; 9] = [0.0, 0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99, 1.0];
/// Offset around each cutoff probed by the deviation search.
const CUTOFF_PROBE: f64 = 1e-9;
/// Streams at and above this offset feed node sampling, not payoff paths.
const SEARCH_STREAM: u64 = 1 << 63;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub deviation_nodes: usize,
    pub theta_grid: usize,
    pub dump_paths: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { n_paths: 100_000, seed: 0, deviation_nodes: 200, theta_grid: 21, dump_paths: false }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidParameter("n_paths must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Sample standard deviation over `√n`.
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = pairwise_sum(xs) / n;
        if xs.len() < 2 {
            return Self { mean, stderr: 0.0 };
        }
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1.0);
        Self { mean, stderr: (var / n).sqrt() }
    }

    /// `|mean − target| ≤ k·stderr`.
    pub fn covers(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint {
    pub p: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub n_paths: usize,
    pub seed: u64,
    pub principal: Estimate,
    pub agent: Estimate,
    pub exact_principal: f64,
    /// Index 0 is "never worked"; index `t` is a first work period of `t`.
    pub start_frequency: Vec<f64>,
    pub ex_post_quantiles: Vec<QuantilePoint>,
    /// Share of paths with ex-post agent payoff below zero.
    pub negative_mass: f64,
    pub max_ic_violation: Option<f64>,
    pub min_interim_continuation: Option<f64>,
    /// Per-path principal gain over the deterministic base.
    pub gain: Option<Estimate>,
    pub expected_gain: Option<f64>,
    pub shirk_branch_frequency: Option<Estimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub index: usize,
    pub thetas: Vec<f64>,
    pub history: String,
    pub payment: f64,
    pub principal: f64,
    pub agent: f64,
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_thetas(d: &CostDistribution, n: usize, rng: &mut ChaCha8Rng) -> [f64; MAX_N] {
    let mut th = [0.0; MAX_N];
    for x in th.iter_mut().take(n) {
        *x = d.quantile(rng.random::<f64>());
    }
    th
}

struct Outcome {
    w: WorkHistory,
    payment: f64,
    cost: f64,
}

fn run_threshold(mech: &Mechanism, thetas: &[f64], from: WorkHistory) -> Outcome {
    let mut w = from;
    let mut cost = 0.0;
    for &theta in &thetas[from.len()..mech.n()] {
        let work = theta <= mech.cutoff(&w);
        if work {
            cost += theta;
        }
        w = w.push(work);
    }
    let payment = final_payment(mech, &w).expect("leaf");
    Outcome { w, payment, cost }
}

struct Summary {
    principal: Vec<f64>,
    agent: Vec<f64>,
    start: Vec<usize>,
}

fn summarize(n: usize, cfg: &SimConfig, s: Summary, exact: f64) -> SimResult {
    let mut counts = vec![0usize; n + 1];
    for &k in &s.start {
        counts[k] += 1;
    }
    let total = s.start.len() as f64;
    let start_frequency = counts.iter().map(|&c| c as f64 / total).collect();
    let negative = s.agent.iter().filter(|&&a| a < -NEGATIVE_EPS).count();
    let mut sorted = s.agent.clone();
    sorted.sort_by(f64::total_cmp);
    let ex_post_quantiles = QUANTILES
        .iter()
        .map(|&p| {
            let idx = ((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1);
            QuantilePoint { p, value: sorted[idx] }
        })
        .collect();
    SimResult {
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        principal: Estimate::from_samples(&s.principal),
        agent: Estimate::from_samples(&s.agent),
        exact_principal: exact,
        start_frequency,
        ex_post_quantiles,
        negative_mass: negative as f64 / total,
        max_ic_violation: None,
        min_interim_continuation: None,
        gain: None,
        expected_gain: None,
        shirk_branch_frequency: None,
    }
}

/// Simulate `cfg.n_paths` cost paths under the threshold rules and payments
/// of `mech`. Runs the deviation and quit searches when
/// `cfg.deviation_nodes > 0`.
pub fn simulate(mech: &Mechanism, env: &Environment, cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let d = &env.d;
    let n = mech.n();
    let a = env.alpha;
    let rows: Vec<(f64, f64, usize)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(cfg.seed, i as u64);
            let th = draw_thetas(d, n, &mut rng);
            let o = run_threshold(mech, &th[..n], WorkHistory::EMPTY);
            let principal = a * o.w.work_count() as f64 - o.payment;
            (principal, o.payment - o.cost, o.w.start_period().unwrap_or(0))
        })
        .collect();
    let summary = Summary {
        principal: rows.iter().map(|r| r.0).collect(),
        agent: rows.iter().map(|r| r.1).collect(),
        start: rows.iter().map(|r| r.2).collect(),
    };
    let mut res = summarize(n, cfg, summary, principal_payoff(mech, env));
    if cfg.deviation_nodes > 0 {
        res.max_ic_violation = Some(deviation_search(mech, env, cfg)?.max_violation);
        res.min_interim_continuation = Some(quit_search(mech, env, cfg)?.min_continuation);
    }
    Ok(res)
}

/// Per-path records for the first `cfg.n_paths` paths (same streams as
/// `simulate`).
pub fn simulate_paths(mech: &Mechanism, env: &Environment, cfg: &SimConfig) -> Result<Vec<PathRecord>> {
    cfg.validate()?;
    let n = mech.n();
    Ok((0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(cfg.seed, i as u64);
            let th = draw_thetas(&env.d, n, &mut rng);
            let o = run_threshold(mech, &th[..n], WorkHistory::EMPTY);
            PathRecord {
                index: i,
                thetas: th[..n].to_vec(),
                history: o.w.to_string(),
                payment: o.payment,
                principal: env.alpha * o.w.work_count() as f64 - o.payment,
                agent: o.payment - o.cost,
            }
        })
        .collect())
}

pub fn write_paths_csv<W: Write>(records: &[PathRecord], n: usize, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    let mut header = vec!["path".to_string()];
    header.extend((1..=n).map(|t| format!("theta{t}")));
    header.extend(["history", "payment", "principal", "agent"].map(String::from));
    wr.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.index.to_string()];
        row.extend(r.thetas.iter().map(|x| x.to_string()));
        row.push(r.history.clone());
        row.extend([r.payment, r.principal, r.agent].map(|x| x.to_string()));
        wr.write_record(&row).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    /// Largest gain of any deviation over truth-telling (may be negative).
    pub max_violation: f64,
    pub argmax_t: usize,
    pub argmax_history: String,
    pub argmax_theta: f64,
    /// `"one_shot"` or `"double@<period>"`.
    pub argmax_kind: String,
    pub nodes_sampled: usize,
    pub evaluations: usize,
}

/// On-path nodes `(t, w_{t−1})`: the root first, then random prefixes of
/// simulated paths.
fn sample_nodes(mech: &Mechanism, d: &CostDistribution, cfg: &SimConfig) -> Vec<(WorkHistory, f64)> {
    let n = mech.n();
    let mut out = Vec::with_capacity(cfg.deviation_nodes.max(1));
    for k in 0..cfg.deviation_nodes.max(1) {
        let mut rng = path_rng(cfg.seed, SEARCH_STREAM + k as u64);
        let depth = if k == 0 { 0 } else { rng.random_range(0..n) };
        let th = draw_thetas(d, n, &mut rng);
        let mut w = WorkHistory::EMPTY;
        for &theta in &th[..depth] {
            w = w.push(theta <= mech.cutoff(&w));
        }
        out.push((w, th[depth]));
    }
    out
}

fn probe_thetas(mech: &Mechanism, d: &CostDistribution, w: &WorkHistory, drawn: f64, grid: usize) -> Vec<f64> {
    let (lo, hi) = (d.lo(), d.hi());
    let mut v = vec![drawn, lo, hi];
    if grid >= 2 {
        v.extend((0..grid).map(|k| lo + (hi - lo) * k as f64 / (grid - 1) as f64));
    }
    let c = mech.cutoff(w);
    v.extend([c - CUTOFF_PROBE, c, c + CUTOFF_PROBE].map(|x| x.clamp(lo, hi)));
    v
}

/// Truth-telling shortfall over sampled on-path nodes: one-shot opposite
/// actions, and opposite actions now followed by one more flip at a later
/// period. All values come from exact continuation arithmetic.
pub fn deviation_search(mech: &Mechanism, env: &Environment, cfg: &SimConfig) -> Result<DeviationReport> {
    let d = &env.d;
    let n = mech.n();
    let nodes = sample_nodes(mech, d, cfg);
    let per_node: Vec<(f64, usize, WorkHistory, f64, String, usize)> = nodes
        .par_iter()
        .map(|&(w, drawn)| {
            let mut best = (f64::NEG_INFINITY, 0, w, drawn, String::new(), 0usize);
            let c = mech.cutoff(&w);
            for theta in probe_thetas(mech, d, &w, drawn, cfg.theta_grid) {
                let node = NodeState { t: w.len() + 1, w_prev: w, theta };
                let truthful = agent_interim_utility(mech, d, &node).expect("valid node");
                let lie_work = theta > c;
                if !lie_work && c >= d.hi() {
                    // no report induces shirking here
                    continue;
                }
                let child = w.push(lie_work);
                let now = if lie_work { -theta } else { 0.0 };
                let one_shot = now + mech.continuation_value(&child);
                best.5 += 1;
                if one_shot - truthful > best.0 {
                    best = (one_shot - truthful, node.t, w, theta, "one_shot".into(), best.5);
                }
                for flip in child.len()..n {
                    let v = now + flipped_plan_value(mech, d, &child, flip);
                    best.5 += 1;
                    if v - truthful > best.0 {
                        best = (v - truthful, node.t, w, theta, format!("double@{}", flip + 1), best.5);
                    }
                }
            }
            best
        })
        .collect();
    let evaluations = per_node.iter().map(|r| r.5).sum();
    let top = per_node
        .into_iter()
        .reduce(|a, b| if b.0 > a.0 { b } else { a })
        .expect("at least one node");
    Ok(DeviationReport {
        max_violation: if top.0.is_finite() { top.0 } else { 0.0 },
        argmax_t: top.1,
        argmax_history: top.2.to_string(),
        argmax_theta: top.3,
        argmax_kind: top.4,
        nodes_sampled: nodes.len(),
        evaluations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuitReport {
    pub min_continuation: f64,
    pub argmin_t: usize,
    pub argmin_history: String,
    pub argmin_theta: f64,
    pub nodes_checked: usize,
}

/// Lowest truthful interim utility over sampled on-path nodes and over
/// every reachable node at the top cost.
pub fn quit_search(mech: &Mechanism, env: &Environment, cfg: &SimConfig) -> Result<QuitReport> {
    let d = &env.d;
    let hi = d.hi();
    let mut cands: Vec<(WorkHistory, f64)> = sample_nodes(mech, d, cfg);
    for i in 0..crate::history::node_count(mech.n()) {
        let w = WorkHistory::from_node_index(i);
        if mech.reach(&w) > 0.0 {
            cands.push((w, hi));
        }
    }
    let mut best = (f64::INFINITY, 0, WorkHistory::EMPTY, hi);
    for &(w, theta) in &cands {
        let node = NodeState { t: w.len() + 1, w_prev: w, theta };
        let u = agent_interim_utility(mech, d, &node)?;
        if u < best.0 {
            best = (u, node.t, w, theta);
        }
    }
    Ok(QuitReport {
        min_continuation: best.0,
        argmin_t: best.1,
        argmin_history: best.2.to_string(),
        argmin_theta: best.3,
        nodes_checked: cands.len(),
    })
}

/// Simulate the randomized mechanism against its deterministic base on
/// common cost draws. An extra uniform per path drives the period-one
/// recommendation.
pub fn simulate_stochastic(sm: &StochasticMechanism, env: &Environment, cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let d = &env.d;
    let n = sm.n;
    let a = env.alpha;
    let base = sm.base_mechanism();
    let rows: Vec<(f64, f64, usize, f64, f64)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(cfg.seed, i as u64);
            let th = draw_thetas(d, n, &mut rng);
            let v: f64 = rng.random();
            let th = &th[..n];
            let b = run_threshold(base, th, WorkHistory::EMPTY);
            let base_principal = a * b.w.work_count() as f64 - b.payment;
            let t1 = th[0];
            let later: f64 = th[1..].iter().sum();
            let (w, payment, cost, shirked) = if t1 < sm.x_sb {
                (WorkHistory::ones(n), sm.payment_low(t1), t1 + later, 0.0)
            } else if t1 <= sm.c1 {
                if v < 1.0 - sm.epsilon {
                    (WorkHistory::ones(n), sm.payment_work(t1), t1 + later, 0.0)
                } else {
                    (shirk_then_work(n), sm.payment_shirk(t1), later, 1.0)
                }
            } else {
                (b.w, b.payment, b.cost, 0.0)
            };
            let principal = a * w.work_count() as f64 - payment;
            (principal, payment - cost, w.start_period().unwrap_or(0), principal - base_principal, shirked)
        })
        .collect();
    let summary = Summary {
        principal: rows.iter().map(|r| r.0).collect(),
        agent: rows.iter().map(|r| r.1).collect(),
        start: rows.iter().map(|r| r.2).collect(),
    };
    let mut res = summarize(n, cfg, summary, stochastic_payoff(sm, env));
    let gains: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let shirks: Vec<f64> = rows.iter().map(|r| r.4).collect();
    res.gain = Some(Estimate::from_samples(&gains));
    res.expected_gain = Some(delta_of(sm, d));
    res.shirk_branch_frequency = Some(Estimate::from_samples(&shirks));
    Ok(res)
}

/// Shirk in period one, then work every remaining period.
fn shirk_then_work(n: usize) -> WorkHistory {
    let mut w = WorkHistory::EMPTY.push(false);
    for _ in 1..n {
        w = w.push(true);
    }
    w
}
