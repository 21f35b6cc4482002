//! Period-one randomization over an optimal consecutive menu.
//!
//! Types in `[x_sb, c1*]` work with probability `1 − ε`; the rent they are
//! owed is paid only on the shirk branch, scaled by `1/ε`.

use serde::{Deserialize, Serialize};

use crate::dist::{check_assumption1, CostDistribution};
use crate::error::{Error, Result};
use crate::history::WorkHistory;
use crate::mechanism::{check_interim_ir, continuation_stats, Environment, Mechanism, SLACK_TOL};
use crate::quad;
use crate::solver::{Regime, SolveReport};

const SEGMENT_TOL: f64 = 1e-13;
const CHECK_GRID: usize = 101;
const IC_GRID: usize = 201;

/// Split a promised rent between the realized work and shirk branches of a
/// randomized recommendation that works with probability `q`.
pub fn split_promise(q: f64, rent: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Argument(format!("work probability {q} outside [0, 1]")));
    }
    if !(rent >= 0.0) || !rent.is_finite() {
        return Err(Error::Argument(format!("rent must be finite and nonnegative, got {rent}")));
    }
    if q == 1.0 {
        if rent > 0.0 {
            return Err(Error::Degenerate(format!("rent {rent} cannot sit on a shirk branch of probability 0")));
        }
        return Ok((0.0, 0.0));
    }
    Ok((0.0, rent / (1.0 - q)))
}

/// `H(θ) = F(θ)(θ − α)`.
pub fn h_fn(d: &CostDistribution, alpha: f64, theta: f64) -> f64 {
    d.cdf(theta) * (theta - alpha)
}

#[derive(Clone, Debug)]
pub struct StochasticMechanism {
    pub n: usize,
    pub alpha: f64,
    pub epsilon: f64,
    /// `u1*/(hi − E)`
    pub epsilon_max: f64,
    pub x_sb: f64,
    pub c1: f64,
    pub u1_star: f64,
    pub base_v: f64,
    pub base: SolveReport,
    base_mech: Mechanism,
    mean: f64,
    lo: f64,
    hi: f64,
}

impl StochasticMechanism {
    pub fn base_mechanism(&self) -> &Mechanism {
        &self.base_mech
    }

    /// Period-one work probability.
    pub fn q1(&self, theta: f64) -> f64 {
        if theta < self.x_sb {
            1.0
        } else if theta <= self.c1 {
            1.0 - self.epsilon
        } else {
            0.0
        }
    }

    /// `∫_θ^hi q1`.
    pub fn q1_tail(&self, theta: f64) -> f64 {
        let keep = 1.0 - self.epsilon;
        if theta < self.x_sb {
            (self.x_sb - theta) + keep * (self.c1 - self.x_sb)
        } else if theta <= self.c1 {
            keep * (self.c1 - theta)
        } else {
            0.0
        }
    }

    /// Interim rent owed to type `θ1`: `u1* + ∫_θ1^hi q1`.
    pub fn rent(&self, theta: f64) -> f64 {
        self.u1_star + self.q1_tail(theta)
    }

    fn future_cost(&self) -> f64 {
        (self.n as f64 - 1.0) * self.mean
    }

    /// Final payment for `θ1 < x_sb` (always works).
    pub fn payment_low(&self, theta: f64) -> f64 {
        theta + self.q1_tail(theta) + self.u1_star + self.future_cost()
    }

    /// Final payment for `θ1 ∈ [x_sb, c1*]` after the work realization.
    pub fn payment_work(&self, theta: f64) -> f64 {
        theta + self.future_cost()
    }

    /// Final payment for `θ1 ∈ [x_sb, c1*]` after the shirk realization.
    pub fn payment_shirk(&self, theta: f64) -> f64 {
        let (_, shirk) = split_promise(1.0 - self.epsilon, self.rent(theta)).expect("epsilon > 0");
        shirk + self.future_cost()
    }

    /// Expected period-one utility of type `θ1` under truthful reporting.
    pub fn first_period_utility(&self, theta: f64) -> f64 {
        let fc = self.future_cost();
        if theta < self.x_sb {
            self.payment_low(theta) - theta - fc
        } else if theta <= self.c1 {
            let e = self.epsilon;
            (1.0 - e) * (self.payment_work(theta) - theta - fc) + e * (self.payment_shirk(theta) - fc)
        } else {
            self.base_mech.continuation_value(&WorkHistory::zeros(1))
        }
    }
}

fn build(report: &SolveReport, env: &Environment, epsilon: f64, enforce_bound: bool) -> Result<StochasticMechanism> {
    let d = &env.d;
    if report.regime != Regime::ConsecutiveMenu {
        return Err(Error::Inapplicable("base mechanism is always-working".into()));
    }
    if report.n != env.n || report.alpha != env.alpha {
        return Err(Error::Argument("report does not belong to this environment".into()));
    }
    if !check_assumption1(d) {
        return Err(Error::Inapplicable("construction requires lo + E >= hi".into()));
    }
    let c1 = report.menu.as_ref().map(|c| c[0]).ok_or_else(|| Error::Inapplicable("report has no menu".into()))?;
    let u1 = report.u1_star;
    let epsilon_max = u1 / (d.hi() - d.mean());
    let within = epsilon > 0.0 && epsilon.is_finite() && (!enforce_bound || epsilon <= epsilon_max);
    if !within {
        return Err(Error::Argument(format!("epsilon {epsilon} outside (0, {epsilon_max}]")));
    }
    let x_sb = d
        .virtual_cost_inverse(env.alpha)
        .map_err(|_| Error::Inapplicable(format!("G^-1(alpha) lies at the top of the support; no room below c1*={c1}")))?;
    if !(x_sb < c1) {
        return Err(Error::Inapplicable(format!("x_sb={x_sb} is not below c1*={c1}")));
    }
    let base_mech = report.mechanism(d)?;
    Ok(StochasticMechanism {
        n: env.n,
        alpha: env.alpha,
        epsilon,
        epsilon_max,
        x_sb,
        c1,
        u1_star: u1,
        base_v: report.v_star,
        base: report.clone(),
        base_mech,
        mean: d.mean(),
        lo: d.lo(),
        hi: d.hi(),
    })
}

pub fn build_improvement(report: &SolveReport, env: &Environment, epsilon: f64) -> Result<StochasticMechanism> {
    build(report, env, epsilon, true)
}

/// Same construction without the upper bound on `ε`; for sharpness probes.
pub fn build_improvement_probe(report: &SolveReport, env: &Environment, epsilon: f64) -> Result<StochasticMechanism> {
    build(report, env, epsilon, false)
}

/// `Δ = ε (H(c1*) − H(x_sb))`.
pub fn improvement_delta(report: &SolveReport, env: &Environment, epsilon: f64) -> Result<f64> {
    let sm = build_improvement(report, env, epsilon)?;
    Ok(delta_of(&sm, &env.d))
}

pub fn delta_of(sm: &StochasticMechanism, d: &CostDistribution) -> f64 {
    sm.epsilon * (h_fn(d, sm.alpha, sm.c1) - h_fn(d, sm.alpha, sm.x_sb))
}

/// Exact principal payoff, integrating period one over the three segments.
pub fn stochastic_payoff(sm: &StochasticMechanism, env: &Environment) -> f64 {
    let d = &env.d;
    let n = sm.n as f64;
    let a = sm.alpha;
    let e = sm.epsilon;
    let low = quad::integrate(|t| (a * n - sm.payment_low(t)) * d.pdf(t), sm.lo, sm.x_sb, SEGMENT_TOL);
    let mid = quad::integrate(
        |t| {
            let work = a * n - sm.payment_work(t);
            let shirk = a * (n - 1.0) - sm.payment_shirk(t);
            ((1.0 - e) * work + e * shirk) * d.pdf(t)
        },
        sm.x_sb,
        sm.c1,
        SEGMENT_TOL,
    );
    let w0 = WorkHistory::zeros(1);
    let stats = continuation_stats(&sm.base_mech, env, &w0).expect("N >= 1");
    let high = (1.0 - d.cdf(sm.c1)) * (a * stats.expected_work - stats.expected_payment);
    low + mid + high
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticCheck {
    pub min_slack: f64,
    pub low_branch_min: Option<f64>,
    pub work_branch_min: Option<f64>,
    pub shirk_branch_min: Option<f64>,
    pub first_period_ir_min: f64,
    pub base_ir_min: f64,
    pub envelope_max_error: f64,
    pub ic_max_violation: f64,
    pub q1_monotone: bool,
    pub passed: bool,
}

fn segment_grid(a: f64, b: f64, k: usize) -> Vec<f64> {
    (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect()
}

/// Ex-post participation for each period-one realization, the period-one
/// envelope identity, period-one participation and misreport gains.
pub fn verify_stochastic(sm: &StochasticMechanism, env: &Environment) -> StochasticCheck {
    let hi = sm.hi;
    let n = sm.n;
    let mean = sm.mean;
    // ex-post at period t with θ_t = hi: payment − hi − (N−t)E
    let ex_post = |pay: f64| -> f64 { (2..=n).map(|t| pay - hi - (n - t) as f64 * mean).fold(f64::INFINITY, f64::min) };
    let mut low_min = None;
    let mut work_min = None;
    let mut shirk_min = None;
    if n >= 2 {
        let below = sm.x_sb - (sm.x_sb - sm.lo) * 1e-12;
        let lows = segment_grid(sm.lo, below, CHECK_GRID);
        low_min = Some(lows.iter().map(|&t| ex_post(sm.payment_low(t))).fold(f64::INFINITY, f64::min));
        let mids = segment_grid(sm.x_sb, sm.c1, CHECK_GRID);
        work_min = Some(mids.iter().map(|&t| ex_post(sm.payment_work(t))).fold(f64::INFINITY, f64::min));
        shirk_min = Some(mids.iter().map(|&t| ex_post(sm.payment_shirk(t))).fold(f64::INFINITY, f64::min));
    }
    let types = segment_grid(sm.lo, hi, IC_GRID);
    let utility: Vec<f64> = types.iter().map(|&t| sm.first_period_utility(t)).collect();
    let envelope = types
        .iter()
        .zip(&utility)
        .map(|(&t, &u)| (u - sm.rent(t)).abs())
        .fold(0.0f64, f64::max);
    let first_ir = utility.iter().copied().fold(f64::INFINITY, f64::min);
    let mut ic = f64::NEG_INFINITY;
    for (i, &t) in types.iter().enumerate() {
        for (j, &r) in types.iter().enumerate() {
            // type t reporting r: U(r) + q1(r)(r − t)
            let gain = utility[j] + sm.q1(r) * (r - t) - utility[i];
            ic = ic.max(gain);
        }
    }
    let q1_monotone = types.windows(2).all(|w| sm.q1(w[1]) <= sm.q1(w[0]));
    let base_ir = check_interim_ir(&sm.base_mech, env).min_slack;
    let min_slack = [low_min, work_min, shirk_min, Some(first_ir), Some(base_ir)]
        .into_iter()
        .flatten()
        .fold(f64::INFINITY, f64::min);
    let passed = min_slack >= -SLACK_TOL && envelope <= SLACK_TOL && ic <= SLACK_TOL && q1_monotone;
    StochasticCheck {
        min_slack,
        low_branch_min: low_min,
        work_branch_min: work_min,
        shirk_branch_min: shirk_min,
        first_period_ir_min: first_ir,
        base_ir_min: base_ir,
        envelope_max_error: envelope,
        ic_max_violation: ic,
        q1_monotone,
        passed,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub epsilon: f64,
    pub x_sb: f64,
    pub delta: f64,
    pub slack_min: f64,
    #[serde(rename = "base_V")]
    pub base_v: f64,
    #[serde(rename = "stochastic_V")]
    pub stochastic_v: f64,
}

pub fn improvement_report(sm: &StochasticMechanism, env: &Environment) -> ImprovementReport {
    ImprovementReport {
        epsilon: sm.epsilon,
        x_sb: sm.x_sb,
        delta: delta_of(sm, &env.d),
        slack_min: verify_stochastic(sm, env).min_slack,
        base_v: sm.base_v,
        stochastic_v: stochastic_payoff(sm, env),
    }
}
