//! Threshold mechanisms: payments, top-type rent, payoffs, interim
//! participation and deviation values, backloading.
//!
//! Node values are computed by exact recursion over the history tree. The
//! agent's continuation value before the cost of period `k+1` is drawn is
//!
//! `A(w) = F(c)·A(w1) − (c F(c) − I(c)) + (1 − F(c))·A(w0)`, with `A = p_N` at leaves,
//!
//! which works for any leaf payment table, not only the revenue-equivalent one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dist::{CostDistribution, Support};
use crate::error::{Error, Result};
use crate::history::{histories_of_length, node_count, CutoffLookup, WorkHistory, MAX_N};

/// Slack tolerance for participation and incentive checks.
pub const SLACK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdProfile {
    n: usize,
    cutoffs: Vec<f64>,
}

impl ThresholdProfile {
    /// `cutoffs` is indexed by `WorkHistory::node_index` for histories of
    /// length `0..n`.
    pub fn new(n: usize, cutoffs: Vec<f64>, support: &Support) -> Result<Self> {
        if n == 0 || n > MAX_N {
            return Err(Error::Argument(format!("horizon N={n} outside 1..={MAX_N}")));
        }
        if cutoffs.len() != node_count(n) {
            return Err(Error::Argument(format!(
                "profile for N={n} needs {} cutoffs, got {}",
                node_count(n),
                cutoffs.len()
            )));
        }
        for (i, &c) in cutoffs.iter().enumerate() {
            if !support.contains(c) {
                let w = WorkHistory::from_node_index(i);
                return Err(Error::Argument(format!(
                    "cutoff {c} at node t={}, history \"{w}\" outside [{}, {}]",
                    w.len() + 1,
                    support.lo,
                    support.hi
                )));
            }
        }
        Ok(Self { n, cutoffs })
    }

    pub fn constant(n: usize, c: f64, support: &Support) -> Result<Self> {
        Self::new(n, vec![c; node_count(n)], support)
    }

    pub fn from_fn(n: usize, support: &Support, f: impl Fn(&WorkHistory) -> f64) -> Result<Self> {
        let cutoffs = (0..node_count(n)).map(|i| f(&WorkHistory::from_node_index(i))).collect();
        Self::new(n, cutoffs, support)
    }

    /// Build from a bit-string keyed table; every node must be present.
    pub fn from_map(n: usize, map: &BTreeMap<String, f64>, support: &Support) -> Result<Self> {
        if n == 0 || n > MAX_N {
            return Err(Error::Argument(format!("horizon N={n} outside 1..={MAX_N}")));
        }
        let mut cutoffs = Vec::with_capacity(node_count(n));
        for i in 0..node_count(n) {
            let w = WorkHistory::from_node_index(i);
            let c = map
                .get(&w.to_string())
                .copied()
                .ok_or_else(|| Error::MissingCutoff { t: w.len() + 1, history: w.to_string() })?;
            cutoffs.push(c);
        }
        if map.len() != cutoffs.len() {
            let extra = map
                .keys()
                .find(|k| WorkHistory::parse(k).map(|w| w.len() >= n).unwrap_or(true))
                .cloned()
                .unwrap_or_default();
            return Err(Error::Argument(format!("unexpected cutoff key \"{extra}\" for N={n}")));
        }
        Self::new(n, cutoffs, support)
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        self.cutoffs
            .iter()
            .enumerate()
            .map(|(i, &c)| (WorkHistory::from_node_index(i).to_string(), c))
            .collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cutoffs(&self) -> &[f64] {
        &self.cutoffs
    }

    /// Cutoff `c_t(w_{t-1})` for a history of length `t-1 < N`.
    pub fn cutoff(&self, w: &WorkHistory) -> f64 {
        self.cutoffs[w.node_index()]
    }

    pub fn with_cutoff(&self, w: &WorkHistory, c: f64, support: &Support) -> Result<Self> {
        if w.len() >= self.n {
            return Err(Error::Argument(format!("history \"{w}\" has no cutoff for N={}", self.n)));
        }
        let mut cutoffs = self.cutoffs.clone();
        cutoffs[w.node_index()] = c;
        Self::new(self.n, cutoffs, support)
    }
}

impl CutoffLookup for ThresholdProfile {
    fn horizon(&self) -> usize {
        self.n
    }

    fn cutoff_at(&self, w: &WorkHistory) -> Option<f64> {
        if w.len() < self.n {
            Some(self.cutoff(w))
        } else {
            None
        }
    }
}

/// Problem instance.
#[derive(Clone, Debug)]
pub struct Environment {
    pub d: CostDistribution,
    pub n: usize,
    pub alpha: f64,
}

impl Environment {
    pub fn new(d: CostDistribution, n: usize, alpha: f64) -> Result<Self> {
        if n == 0 || n > MAX_N {
            return Err(Error::Argument(format!("horizon N={n} outside 1..={MAX_N}")));
        }
        if !alpha.is_finite() || alpha < d.lo() {
            return Err(Error::Argument(format!("alpha={alpha} must be finite and at least lo={}", d.lo())));
        }
        Ok(Self { d, n, alpha })
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.d.clone(), self.n, alpha)
    }

    /// `alpha >= hi`: working is efficient for every cost.
    pub fn efficient_regime(&self) -> bool {
        self.alpha >= self.d.hi()
    }
}

/// Evaluation point for interim utilities: period `t`, history `w_prev` of
/// length `t-1`, current cost `theta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub t: usize,
    pub w_prev: WorkHistory,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct U1Star {
    pub value: f64,
    /// Nodes `(t, w_{t-1})` attaining the minimum (within 1e-12).
    pub argmin: Vec<(usize, String)>,
    /// Same minimum restricted to `t <= N-1`.
    pub value_truncated: f64,
}

/// Per-node caches shared by all tree recursions.
#[derive(Clone, Debug)]
struct NodeTable {
    big_f: Vec<f64>,
    integral: Vec<f64>,
    partial_mean: Vec<f64>,
    reach: Vec<f64>,
}

impl NodeTable {
    fn build(profile: &ThresholdProfile, d: &CostDistribution) -> Self {
        let n = profile.n;
        let inner = node_count(n);
        let mut big_f = Vec::with_capacity(inner);
        let mut integral = Vec::with_capacity(inner);
        let mut partial_mean = Vec::with_capacity(inner);
        for &c in &profile.cutoffs {
            let fc = d.cdf(c);
            let ic = d.cdf_integral(c);
            big_f.push(fc);
            integral.push(ic);
            partial_mean.push(c * fc - ic);
        }
        let mut reach = vec![0.0; node_count(n + 1)];
        reach[0] = 1.0;
        for i in 0..inner {
            let w = WorkHistory::from_node_index(i);
            reach[w.push(true).node_index()] = reach[i] * big_f[i];
            reach[w.push(false).node_index()] = reach[i] * (1.0 - big_f[i]);
        }
        Self { big_f, integral, partial_mean, reach }
    }
}

/// Accumulated surplus `S(t, w)` for every interior node (`t = len + 1`).
fn accrued_surplus(profile: &ThresholdProfile, table: &NodeTable) -> Vec<f64> {
    let inner = node_count(profile.n);
    let mut s = vec![0.0; inner];
    for i in 0..inner {
        let w = WorkHistory::from_node_index(i);
        if w.len() + 1 >= profile.n {
            continue;
        }
        let c = profile.cutoffs[i];
        for (child, x) in [(w.push(true), c), (w.push(false), 0.0)] {
            let j = child.node_index();
            s[j] = s[i] + x - table.integral[j];
        }
    }
    s
}

fn u1_from_table(profile: &ThresholdProfile, table: &NodeTable) -> U1Star {
    let s = accrued_surplus(profile, table);
    let n = profile.n;
    let mut min = 0.0f64;
    let mut min_trunc = 0.0f64;
    for (i, &v) in s.iter().enumerate() {
        if table.reach[i] <= 0.0 {
            continue;
        }
        min = min.min(v);
        if WorkHistory::from_node_index(i).len() + 1 <= n.saturating_sub(1) {
            min_trunc = min_trunc.min(v);
        }
    }
    let argmin = s
        .iter()
        .enumerate()
        .filter(|&(i, &v)| table.reach[i] > 0.0 && v <= min + 1e-12)
        .map(|(i, _)| {
            let w = WorkHistory::from_node_index(i);
            (w.len() + 1, w.to_string())
        })
        .collect();
    U1Star { value: -min, argmin, value_truncated: -min_trunc }
}

/// Top-type rent: `−min S(t, w)` over nodes reached with positive probability.
pub fn u1_star(profile: &ThresholdProfile, d: &CostDistribution) -> U1Star {
    u1_from_table(profile, &NodeTable::build(profile, d))
}

/// Leaf payments `Σ x_t c_t − Σ_{t≥2} I(c_t) + u1*`.
fn eq1_payments(profile: &ThresholdProfile, table: &NodeTable, u1: f64) -> Vec<f64> {
    let n = profile.n;
    histories_of_length(n, n)
        .expect("n within range")
        .into_iter()
        .map(|leaf| {
            let mut p = u1;
            for t in 1..=n {
                let i = leaf.prefix(t - 1).node_index();
                if leaf.action(t) {
                    p += profile.cutoffs[i];
                }
                if t >= 2 {
                    p -= table.integral[i];
                }
            }
            p
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Mechanism {
    profile: ThresholdProfile,
    u1_star: f64,
    payments: Vec<f64>,
    table: NodeTable,
    cont: Vec<f64>,
}

impl Mechanism {
    /// Mechanism with the revenue-equivalent payment rule.
    pub fn from_profile(profile: ThresholdProfile, d: &CostDistribution) -> Self {
        let table = NodeTable::build(&profile, d);
        let u1 = u1_from_table(&profile, &table).value;
        let payments = eq1_payments(&profile, &table, u1);
        Self::assemble(profile, u1, payments, table)
    }

    /// Mechanism with an arbitrary leaf payment table (indexed by leaf bits).
    pub fn with_payments(profile: ThresholdProfile, d: &CostDistribution, payments: Vec<f64>) -> Result<Self> {
        if payments.len() != 1 << profile.n {
            return Err(Error::Argument(format!(
                "payment table needs {} leaves, got {}",
                1usize << profile.n,
                payments.len()
            )));
        }
        let table = NodeTable::build(&profile, d);
        let u1 = u1_from_table(&profile, &table).value;
        Ok(Self::assemble(profile, u1, payments, table))
    }

    fn assemble(profile: ThresholdProfile, u1_star: f64, payments: Vec<f64>, table: NodeTable) -> Self {
        let n = profile.n;
        let mut cont = vec![0.0; node_count(n + 1)];
        let leaf0 = node_count(n);
        cont[leaf0..].copy_from_slice(&payments);
        for i in (0..leaf0).rev() {
            let w = WorkHistory::from_node_index(i);
            let (a1, a0) = (cont[w.push(true).node_index()], cont[w.push(false).node_index()]);
            let fc = table.big_f[i];
            cont[i] = fc * a1 - table.partial_mean[i] + (1.0 - fc) * a0;
        }
        Self { profile, u1_star, payments, table, cont }
    }

    /// Same profile with every leaf payment shifted by `delta`.
    pub fn shifted(&self, delta: f64, d: &CostDistribution) -> Self {
        let payments = self.payments.iter().map(|p| p + delta).collect();
        Self::with_payments(self.profile.clone(), d, payments).expect("same shape")
    }

    /// Same profile with one leaf payment replaced.
    pub fn with_leaf_payment(&self, leaf: &WorkHistory, payment: f64, d: &CostDistribution) -> Result<Self> {
        if leaf.len() != self.n() {
            return Err(Error::Argument(format!("\"{leaf}\" is not a leaf for N={}", self.n())));
        }
        let mut payments = self.payments.clone();
        payments[leaf.bits() as usize] = payment;
        Self::with_payments(self.profile.clone(), d, payments)
    }

    pub fn n(&self) -> usize {
        self.profile.n
    }

    pub fn profile(&self) -> &ThresholdProfile {
        &self.profile
    }

    pub fn u1_star(&self) -> f64 {
        self.u1_star
    }

    /// Leaf payments in ascending leaf-bit order.
    pub fn payments(&self) -> &[f64] {
        &self.payments
    }

    pub fn cutoff(&self, w: &WorkHistory) -> f64 {
        self.profile.cutoff(w)
    }

    /// Probability of reaching history `w` (any length up to N).
    pub fn reach(&self, w: &WorkHistory) -> f64 {
        self.table.reach[w.node_index()]
    }

    /// Agent's expected continuation (future payment minus future costs)
    /// at history `w`, before the next cost is drawn.
    pub fn continuation_value(&self, w: &WorkHistory) -> f64 {
        self.cont[w.node_index()]
    }

    pub fn cdf_at_node(&self, w: &WorkHistory) -> f64 {
        self.table.big_f[w.node_index()]
    }

    pub fn partial_mean_at_node(&self, w: &WorkHistory) -> f64 {
        self.table.partial_mean[w.node_index()]
    }

    /// Recompute `u1*` from the profile and compare bit-for-bit.
    pub fn verify_rent(&self, d: &CostDistribution) -> Result<()> {
        let recomputed = u1_star(&self.profile, d).value;
        if recomputed.to_bits() != self.u1_star.to_bits() {
            return Err(Error::StaleRent { cached: self.u1_star, recomputed });
        }
        Ok(())
    }

    pub fn to_record(&self) -> MechanismRecord {
        MechanismRecord { n: self.n(), cutoffs: self.profile.to_map(), u1_star: self.u1_star }
    }

    /// Rebuild from a record; the stored rent must match the recomputed one.
    pub fn from_record(rec: &MechanismRecord, d: &CostDistribution) -> Result<Self> {
        let profile = ThresholdProfile::from_map(rec.n, &rec.cutoffs, &d.support())?;
        let mech = Self::from_profile(profile, d);
        if mech.u1_star.to_bits() != rec.u1_star.to_bits() {
            return Err(Error::StaleRent { cached: rec.u1_star, recomputed: mech.u1_star });
        }
        Ok(mech)
    }
}

/// Serialized form: `{N, cutoffs keyed by bit-string history, u1_star}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismRecord {
    #[serde(rename = "N")]
    pub n: usize,
    pub cutoffs: BTreeMap<String, f64>,
    pub u1_star: f64,
}

pub fn final_payment(mech: &Mechanism, w: &WorkHistory) -> Result<f64> {
    if w.len() != mech.n() {
        return Err(Error::Argument(format!("\"{w}\" is not a leaf for N={}", mech.n())));
    }
    Ok(mech.payments[w.bits() as usize])
}

/// Exact `Σ_leaves Pr(w)·(α·#work(w) − p_N(w))`.
pub fn principal_payoff(mech: &Mechanism, env: &Environment) -> f64 {
    let n = mech.n();
    let leaf0 = node_count(n);
    mech.payments
        .iter()
        .enumerate()
        .map(|(bits, &p)| {
            let pr = mech.table.reach[leaf0 + bits];
            if pr == 0.0 {
                0.0
            } else {
                pr * (env.alpha * bits.count_ones() as f64 - p)
            }
        })
        .sum()
}

/// Expected number of working periods.
pub fn expected_work(mech: &Mechanism) -> f64 {
    (0..node_count(mech.n())).map(|i| mech.table.reach[i] * mech.table.big_f[i]).sum()
}

fn check_node(mech: &Mechanism, d: &CostDistribution, node: &NodeState) -> Result<f64> {
    if node.t == 0 || node.t > mech.n() || node.w_prev.len() != node.t - 1 {
        return Err(Error::Argument(format!(
            "invalid node t={}, history \"{}\" for N={}",
            node.t,
            node.w_prev,
            mech.n()
        )));
    }
    if !d.support().contains(node.theta) {
        return Err(Error::Argument(format!("cost {} outside support", node.theta)));
    }
    Ok(mech.cutoff(&node.w_prev))
}

/// Truthful interim utility `u_t(w_{t-1}, θ_t)`.
pub fn agent_interim_utility(mech: &Mechanism, d: &CostDistribution, node: &NodeState) -> Result<f64> {
    let c = check_node(mech, d, node)?;
    let w = node.w_prev;
    Ok(if node.theta <= c {
        mech.continuation_value(&w.push(true)) - node.theta
    } else {
        mech.continuation_value(&w.push(false))
    })
}

/// Value of taking `forced_work` this period (by reporting on that side of
/// the cutoff) and reporting truthfully afterwards. If no report induces
/// shirking (cutoff at the top), the truthful value is returned.
pub fn deviation_value(mech: &Mechanism, d: &CostDistribution, node: &NodeState, forced_work: bool) -> Result<f64> {
    let c = check_node(mech, d, node)?;
    let w = node.w_prev;
    if forced_work {
        Ok(mech.continuation_value(&w.push(true)) - node.theta)
    } else if c >= d.hi() {
        agent_interim_utility(mech, d, node)
    } else {
        Ok(mech.continuation_value(&w.push(false)))
    }
}

/// Gain from taking the opposite action at `node`.
pub fn one_shot_gain(mech: &Mechanism, d: &CostDistribution, node: &NodeState) -> Result<f64> {
    let c = check_node(mech, d, node)?;
    let truthful = agent_interim_utility(mech, d, node)?;
    Ok(deviation_value(mech, d, node, node.theta > c)? - truthful)
}

/// Expected continuation from `w` when the agent follows the threshold rule
/// except at depth `flip_depth`, where every type takes the opposite action.
pub fn flipped_plan_value(mech: &Mechanism, d: &CostDistribution, w: &WorkHistory, flip_depth: usize) -> f64 {
    if w.len() > flip_depth || w.len() == mech.n() {
        return mech.continuation_value(w);
    }
    let fc = mech.cdf_at_node(w);
    let pm = mech.partial_mean_at_node(w);
    let (a1, a0) = if w.len() == flip_depth {
        (mech.continuation_value(&w.push(true)), mech.continuation_value(&w.push(false)))
    } else {
        (flipped_plan_value(mech, d, &w.push(true), flip_depth), flipped_plan_value(mech, d, &w.push(false), flip_depth))
    };
    if w.len() < flip_depth {
        return fc * a1 - pm + (1.0 - fc) * a0;
    }
    if mech.cutoff(w) >= d.hi() {
        // shirking is not reportable; the flip is void
        return fc * a1 - pm + (1.0 - fc) * a0;
    }
    // types above c work, types below shirk
    (1.0 - fc) * a1 - (d.mean() - pm) + fc * a0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrReport {
    pub min_slack: f64,
    pub argmin_t: usize,
    pub argmin_history: String,
    pub argmin_theta: f64,
    pub violation: Option<(usize, String)>,
    pub nodes_checked: usize,
}

/// Interim participation at the top cost of every reachable node.
pub fn check_interim_ir(mech: &Mechanism, env: &Environment) -> IrReport {
    check_interim_ir_with(mech, env, 0)
}

/// As `check_interim_ir`, additionally evaluating `paranoid_grid` evenly
/// spaced costs per node.
pub fn check_interim_ir_with(mech: &Mechanism, env: &Environment, paranoid_grid: usize) -> IrReport {
    let d = &env.d;
    let (lo, hi) = (d.lo(), d.hi());
    let mut best = (f64::INFINITY, 0usize, WorkHistory::EMPTY, hi);
    let mut checked = 0;
    for i in 0..node_count(mech.n()) {
        if mech.table.reach[i] <= 0.0 {
            continue;
        }
        let w = WorkHistory::from_node_index(i);
        let mut thetas = vec![hi];
        if paranoid_grid >= 2 {
            thetas.extend((0..paranoid_grid).map(|k| lo + (hi - lo) * k as f64 / (paranoid_grid - 1) as f64));
        }
        for theta in thetas {
            let node = NodeState { t: w.len() + 1, w_prev: w, theta };
            let u = agent_interim_utility(mech, d, &node).expect("valid node");
            checked += 1;
            if u < best.0 {
                best = (u, node.t, w, theta);
            }
        }
    }
    let violation = (best.0 < -SLACK_TOL).then(|| (best.1, best.2.to_string()));
    IrReport {
        min_slack: best.0,
        argmin_t: best.1,
        argmin_history: best.2.to_string(),
        argmin_theta: best.3,
        violation,
        nodes_checked: checked,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStats {
    /// Expected number of future working periods.
    pub expected_work: f64,
    /// Expected final payment minus the surplus accrued through `w`.
    pub payment_term: f64,
    /// `α·T − P`.
    pub v_hat: f64,
    /// Unadjusted conditional expectation of the final payment.
    pub expected_payment: f64,
}

pub fn continuation_stats(mech: &Mechanism, env: &Environment, w: &WorkHistory) -> Result<ContinuationStats> {
    let n = mech.n();
    if w.len() > n {
        return Err(Error::Argument(format!("history \"{w}\" longer than N={n}")));
    }
    fn rec(mech: &Mechanism, w: &WorkHistory) -> (f64, f64) {
        if w.len() == mech.n() {
            return (0.0, mech.payments[w.bits() as usize]);
        }
        let fc = mech.cdf_at_node(w);
        let (t1, p1) = rec(mech, &w.push(true));
        let (t0, p0) = rec(mech, &w.push(false));
        (fc * (t1 + 1.0) + (1.0 - fc) * t0, fc * p1 + (1.0 - fc) * p0)
    }
    let (t, ep) = rec(mech, w);
    let mut accrued = 0.0;
    for i in 1..=w.len() {
        let node = w.prefix(i - 1);
        if w.action(i) {
            accrued += mech.cutoff(&node);
        }
        if i >= 2 {
            accrued -= mech.table.integral[node.node_index()];
        }
    }
    let p = ep - accrued;
    Ok(ContinuationStats { expected_work: t, payment_term: p, v_hat: env.alpha * t - p, expected_payment: ep })
}

/// Per-period payments `p_t(w_t)` paid at the end of period `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterimSchedule {
    n: usize,
    pay: Vec<f64>,
}

impl InterimSchedule {
    pub fn new(n: usize, f: impl Fn(&WorkHistory) -> f64) -> Result<Self> {
        if n == 0 || n > MAX_N {
            return Err(Error::Argument(format!("horizon N={n} outside 1..={MAX_N}")));
        }
        let pay = (0..node_count(n + 1))
            .map(|i| {
                let w = WorkHistory::from_node_index(i);
                if w.is_empty() {
                    0.0
                } else {
                    f(&w)
                }
            })
            .collect();
        Ok(Self { n, pay })
    }

    pub fn zero(n: usize) -> Result<Self> {
        Self::new(n, |_| 0.0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, w: &WorkHistory) -> f64 {
        self.pay[w.node_index()]
    }
}

#[derive(Clone, Debug)]
pub struct BackloadResult {
    pub mechanism: Mechanism,
    pub payoff_before: f64,
    pub payoff_after: f64,
    pub min_slack_before: f64,
    pub min_slack_after: f64,
    pub min_slack_delta: f64,
}

/// Move every interim payment to the final period.
pub fn backload(schedule: &InterimSchedule, profile: &ThresholdProfile, env: &Environment) -> Result<BackloadResult> {
    let n = profile.n();
    if schedule.n != n {
        return Err(Error::Argument(format!("schedule horizon {} differs from profile {}", schedule.n, n)));
    }
    for (i, &p) in schedule.pay.iter().enumerate() {
        if p < 0.0 || !p.is_finite() {
            let w = WorkHistory::from_node_index(i);
            return Err(Error::LimitedLiability { history: w.to_string(), payment: p });
        }
    }
    let d = &env.d;
    let leaves = histories_of_length(n, n)?;
    let totals: Vec<f64> = leaves
        .iter()
        .map(|leaf| (1..=n).map(|t| schedule.get(&leaf.prefix(t))).sum())
        .collect();
    let after = Mechanism::with_payments(profile.clone(), d, totals)?;

    // Continuation under the interim schedule: future payments only.
    let table = &after.table;
    let mut future = vec![0.0; node_count(n + 1)];
    for i in (0..node_count(n)).rev() {
        let w = WorkHistory::from_node_index(i);
        let (j1, j0) = (w.push(true).node_index(), w.push(false).node_index());
        let fc = table.big_f[i];
        future[i] = fc * (schedule.pay[j1] + future[j1]) - table.partial_mean[i] + (1.0 - fc) * (schedule.pay[j0] + future[j0]);
    }
    let hi = d.hi();
    let mut min_before = f64::INFINITY;
    for i in 0..node_count(n) {
        if table.reach[i] <= 0.0 {
            continue;
        }
        let w = WorkHistory::from_node_index(i);
        let u = if hi <= profile.cutoff(&w) {
            let j = w.push(true).node_index();
            schedule.pay[j] + future[j] - hi
        } else {
            let j = w.push(false).node_index();
            schedule.pay[j] + future[j]
        };
        min_before = min_before.min(u);
    }
    let leaf0 = node_count(n);
    let payoff_before: f64 = leaves
        .iter()
        .map(|leaf| {
            let pr = table.reach[leaf0 + leaf.bits() as usize];
            let paid: f64 = (1..=n).map(|t| schedule.get(&leaf.prefix(t))).sum();
            pr * (env.alpha * leaf.work_count() as f64 - paid)
        })
        .sum();
    let payoff_after = principal_payoff(&after, env);
    let min_after = check_interim_ir(&after, env).min_slack;
    Ok(BackloadResult {
        mechanism: after,
        payoff_before,
        payoff_after,
        min_slack_before: min_before,
        min_slack_after: min_after,
        min_slack_delta: min_after - min_before,
    })
}
