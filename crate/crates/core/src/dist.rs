//! Cost distributions on a bounded support.
//!
//! Every distribution exposes the density, the CDF `F`, the mean and the
//! CDF integral `I(x) = ∫_lo^x F`. Uniform uses closed forms; the other
//! families integrate `F` numerically.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::quad;

/// Grid resolution used for the monotonicity check of `G`.
pub const G_GRID_POINTS: usize = 10_001;
/// Slack allowed for decreases of `G` between adjacent grid points.
pub const G_SLACK: f64 = -1e-9;
const INVERSE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub lo: f64,
    pub hi: f64,
}

impl Support {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidSupport { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

/// Parameterization as it appears in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum DistSpec {
    #[serde(rename = "uniform")]
    Uniform { lo: f64, hi: f64 },
    #[serde(rename = "truncnorm")]
    TruncatedNormal { mu: f64, sigma: f64, lo: f64, hi: f64 },
    /// `lo + (hi - lo) * X` with `X ~ Beta(a, b)`.
    #[serde(rename = "scaledbeta")]
    ScaledBeta { a: f64, b: f64, lo: f64, hi: f64 },
}

#[derive(Clone, Debug)]
enum Model {
    Uniform,
    TruncatedNormal {
        mu: f64,
        sigma: f64,
        std: Normal,
        cdf_lo: f64,
        mass: f64,
    },
    ScaledBeta {
        beta: Beta,
    },
}

/// Immutable cost distribution; all queries are pure.
#[derive(Clone, Debug)]
pub struct CostDistribution {
    spec: DistSpec,
    support: Support,
    mean: f64,
    model: Model,
}

pub fn make_uniform(lo: f64, hi: f64) -> Result<CostDistribution> {
    let support = Support::new(lo, hi)?;
    Ok(CostDistribution {
        spec: DistSpec::Uniform { lo, hi },
        support,
        mean: 0.5 * (lo + hi),
        model: Model::Uniform,
    })
}

pub fn make_truncated_normal(mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<CostDistribution> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    if !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("mu must be finite, got {mu}")));
    }
    let support = Support::new(lo, hi)?;
    let std = Normal::standard();
    let (za, zb) = ((lo - mu) / sigma, (hi - mu) / sigma);
    let cdf_lo = std.cdf(za);
    let mass = std.cdf(zb) - cdf_lo;
    if !(mass > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "support [{lo}, {hi}] carries no normal mass for mu={mu}, sigma={sigma}"
        )));
    }
    let mean = mu + sigma * (std.pdf(za) - std.pdf(zb)) / mass;
    Ok(CostDistribution {
        spec: DistSpec::TruncatedNormal { mu, sigma, lo, hi },
        support,
        mean: mean.clamp(lo, hi),
        model: Model::TruncatedNormal { mu, sigma, std, cdf_lo, mass },
    })
}

/// Shapes below 1 give an unbounded density at an endpoint and are rejected.
pub fn make_scaled_beta(a: f64, b: f64, lo: f64, hi: f64) -> Result<CostDistribution> {
    if !(a.is_finite() && b.is_finite() && a >= 1.0 && b >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "beta shapes must satisfy a >= 1 and b >= 1, got a={a}, b={b}"
        )));
    }
    let support = Support::new(lo, hi)?;
    let beta = Beta::new(a, b).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(CostDistribution {
        spec: DistSpec::ScaledBeta { a, b, lo, hi },
        support,
        mean: lo + (hi - lo) * a / (a + b),
        model: Model::ScaledBeta { beta },
    })
}

impl CostDistribution {
    pub fn from_spec(spec: &DistSpec) -> Result<Self> {
        match *spec {
            DistSpec::Uniform { lo, hi } => make_uniform(lo, hi),
            DistSpec::TruncatedNormal { mu, sigma, lo, hi } => make_truncated_normal(mu, sigma, lo, hi),
            DistSpec::ScaledBeta { a, b, lo, hi } => make_scaled_beta(a, b, lo, hi),
        }
    }

    pub fn spec(&self) -> &DistSpec {
        &self.spec
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn lo(&self) -> f64 {
        self.support.lo
    }

    pub fn hi(&self) -> f64 {
        self.support.hi
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.model, Model::Uniform)
    }

    /// Density on the support, zero outside.
    pub fn pdf(&self, x: f64) -> f64 {
        let Support { lo, hi } = self.support;
        if x < lo || x > hi {
            return 0.0;
        }
        match &self.model {
            Model::Uniform => 1.0 / (hi - lo),
            Model::TruncatedNormal { mu, sigma, std, mass, .. } => std.pdf((x - mu) / sigma) / (sigma * mass),
            Model::ScaledBeta { beta } => beta.pdf((x - lo) / (hi - lo)) / (hi - lo),
        }
    }

    /// CDF with `F(lo) = 0` and `F(hi) = 1` exactly.
    pub fn cdf(&self, x: f64) -> f64 {
        let Support { lo, hi } = self.support;
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        let v = match &self.model {
            Model::Uniform => (x - lo) / (hi - lo),
            Model::TruncatedNormal { mu, sigma, std, cdf_lo, mass } => (std.cdf((x - mu) / sigma) - cdf_lo) / mass,
            Model::ScaledBeta { beta } => beta.cdf((x - lo) / (hi - lo)),
        };
        v.clamp(0.0, 1.0)
    }

    /// `I(x) = ∫_lo^x F`; extended linearly above `hi` (where `F = 1`).
    /// `I(hi) = hi − E` exactly.
    pub fn cdf_integral(&self, x: f64) -> f64 {
        let Support { lo, hi } = self.support;
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return (hi - self.mean) + (x - hi);
        }
        match self.model {
            Model::Uniform => (x - lo) * (x - lo) / (2.0 * (hi - lo)),
            _ => quad::integrate(|t| self.cdf(t), lo, x, quad::ABS_TOL),
        }
    }

    /// `E[θ 1{θ ≤ c}] = c F(c) - I(c)`.
    pub fn partial_mean(&self, c: f64) -> f64 {
        let c = self.support.clamp(c);
        c * self.cdf(c) - self.cdf_integral(c)
    }

    /// Inverse CDF for `u` in `[0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let Support { lo, hi } = self.support;
        let u = u.clamp(0.0, 1.0);
        let x = match &self.model {
            Model::Uniform => lo + u * (hi - lo),
            Model::TruncatedNormal { mu, sigma, std, cdf_lo, mass } => {
                mu + sigma * std.inverse_cdf((cdf_lo + u * mass).clamp(0.0, 1.0))
            }
            Model::ScaledBeta { beta } => lo + (hi - lo) * beta.inverse_cdf(u),
        };
        if x.is_finite() {
            x.clamp(lo, hi)
        } else if u < 0.5 {
            lo
        } else {
            hi
        }
    }

    /// Virtual cost `G(θ) = θ + F(θ)/f(θ)`. Where the density vanishes the
    /// ratio is taken as 0 if `F` vanishes too, else `+inf`.
    pub fn virtual_cost(&self, theta: f64) -> f64 {
        let f = self.pdf(theta);
        let big_f = self.cdf(theta);
        if f > 0.0 {
            theta + big_f / f
        } else if big_f == 0.0 {
            theta
        } else {
            f64::INFINITY
        }
    }

    /// `G⁻¹(y)` by bisection on the support.
    pub fn virtual_cost_inverse(&self, y: f64) -> Result<f64> {
        let Support { lo, hi } = self.support;
        let (g_lo, g_hi) = (self.virtual_cost(lo), self.virtual_cost(hi));
        if y < g_lo {
            return Err(Error::Range { value: y, lo: g_lo, hi: g_hi, clamped: lo });
        }
        if y > g_hi {
            return Err(Error::Range { value: y, lo: g_lo, hi: g_hi, clamped: hi });
        }
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            if b - a <= INVERSE_TOL {
                break;
            }
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if self.virtual_cost(m) < y {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(0.5 * (a + b))
    }
}

/// Result of the distributional assumption checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub a1_holds: bool,
    pub a2_g_monotone: bool,
    pub a2_density_bound: bool,
    pub details: String,
}

/// `lo + mean >= hi`; equality counts as holding.
pub fn check_assumption1(d: &CostDistribution) -> bool {
    d.lo() + d.mean() >= d.hi()
}

pub fn check_assumption2(d: &CostDistribution, n: usize) -> Result<AssumptionReport> {
    if n < 2 {
        return Err(Error::Argument(format!("assumption 2 needs N >= 2, got {n}")));
    }
    let Support { lo, hi } = d.support();
    let step = (hi - lo) / (G_GRID_POINTS - 1) as f64;
    let mut prev = d.virtual_cost(lo);
    let mut worst_drop = 0.0f64;
    let mut worst_at = lo;
    for i in 1..G_GRID_POINTS {
        let x = if i == G_GRID_POINTS - 1 { hi } else { lo + step * i as f64 };
        let g = d.virtual_cost(x);
        let diff = g - prev;
        if diff < worst_drop {
            worst_drop = diff;
            worst_at = x;
        }
        prev = g;
    }
    let g_monotone = worst_drop >= G_SLACK;

    // f(hi) <= 1/((N-1)(hi-mean)), written multiplicatively with a relative
    // rounding allowance so that exact boundary cases count as holding.
    let f_hi = d.pdf(hi);
    let lhs = f_hi * (n - 1) as f64 * (hi - d.mean());
    let density_bound = lhs <= 1.0 + 1e-12;
    let a1 = check_assumption1(d);
    let details = format!(
        "G grid {} points, largest drop {:e} at {}; f(hi)*(N-1)*(hi-mean) = {} (bound 1); lo+mean-hi = {}",
        G_GRID_POINTS,
        worst_drop,
        worst_at,
        lhs,
        d.lo() + d.mean() - d.hi()
    );
    Ok(AssumptionReport { a1_holds: a1, a2_g_monotone: g_monotone, a2_density_bound: density_bound, details })
}
