//! Design-stage calculators: event counts, inflation factors, subject counts,
//! the robust-Wald power formula and the target variance it implies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Weibull-form baseline mean function `mu0(t) = lambda * t^nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weibull {
    pub lambda: f64,
    pub nu: f64,
}

impl Weibull {
    pub fn mean(&self, t: f64) -> f64 {
        self.lambda * t.powf(self.nu)
    }
}

fn default_pi() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    /// Two-sided significance level.
    pub alpha: f64,
    /// Target power `1 - gamma`.
    pub power: f64,
    /// Target log rate ratio.
    pub beta0: f64,
    /// Allocation probability `P(Z = 1)`.
    #[serde(default = "default_pi")]
    pub pi: f64,
    pub tau_a: f64,
    pub tau_f: f64,
    pub weibull: Weibull,
    /// Frailty variance.
    #[serde(default)]
    pub theta: f64,
    /// Replaces the accrual-averaged baseline mean when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_bar_override: Option<f64>,
}

impl DesignSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} must lie in (0, 1)", self.alpha));
        }
        if !(self.power > 0.0 && self.power < 1.0) {
            return bad(format!("power {} must lie in (0, 1)", self.power));
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return bad(format!("pi {} must lie in (0, 1)", self.pi));
        }
        if !self.beta0.is_finite() || self.beta0 == 0.0 {
            return bad(format!("beta0 {} must be finite and non-zero", self.beta0));
        }
        if !(self.tau_a >= 0.0 && self.tau_f > 0.0) {
            return bad(format!(
                "need tau_a >= 0 and tau_f > 0 (got {}, {})",
                self.tau_a, self.tau_f
            ));
        }
        if !(self.weibull.lambda > 0.0 && self.weibull.nu > 0.0) {
            return bad("weibull lambda and nu must be positive".into());
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return bad(format!("theta {} must be >= 0", self.theta));
        }
        if let Some(m) = self.mu_bar_override {
            if !(m > 0.0 && m.is_finite()) {
                return bad(format!("mu_bar_override {m} must be positive"));
            }
        }
        Ok(())
    }

    pub fn mu_bar(&self) -> f64 {
        self.mu_bar_override
            .unwrap_or_else(|| mean_baseline_mu(self.weibull, self.tau_a, self.tau_f))
    }
}

/// Order of the two ceilings in the inflated event count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventRounding {
    /// `ceil(ceil(L_base) * IF)`.
    #[default]
    Early,
    /// `ceil(L_base * IF)`.
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventCountOptions {
    pub rounding: EventRounding,
    /// Events added after rounding.
    pub cushion: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOutput {
    pub l_base: f64,
    pub inflation_factor: f64,
    pub l_events: u64,
    pub mu_bar: f64,
    pub n_subjects: u64,
    pub v2_target: f64,
}

/// Events needed under Poisson-type dependence:
/// `(pi (1 - pi))^-1 ((z_{1-alpha/2} + z_{1-gamma}) / beta0)^2`.
pub fn schoenfeld_events(alpha: f64, gamma: f64, beta0: f64, pi: f64) -> Result<f64> {
    if beta0 == 0.0 || !beta0.is_finite() {
        return Err(Error::InvalidParameter("beta0 must be non-zero".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0 && gamma > 0.0 && gamma < 1.0 && pi > 0.0 && pi < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha {alpha}, gamma {gamma} and pi {pi} must lie in (0, 1)"
        )));
    }
    let z = normal::quantile(1.0 - alpha / 2.0) + normal::quantile(1.0 - gamma);
    Ok((z / beta0).powi(2) / (pi * (1.0 - pi)))
}

/// `E[mu0(C)]` for uniform entry on `[0, tau_a]` and administrative
/// censoring at `tau_a + tau_f`, i.e. `C ~ U[tau_f, tau_a + tau_f]`.
pub fn mean_baseline_mu(weibull: Weibull, tau_a: f64, tau_f: f64) -> f64 {
    let Weibull { lambda, nu } = weibull;
    if tau_a <= 1e-12 * tau_f.max(1.0) {
        return lambda * tau_f.powf(nu);
    }
    let tau = tau_a + tau_f;
    lambda * (tau.powf(nu + 1.0) - tau_f.powf(nu + 1.0)) / (tau_a * (nu + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inflation {
    /// Gamma-frailty mixed Poisson process with a time-varying mean.
    WeibullMeanRate { theta: f64, mu_bar: f64, beta0: f64 },
    /// Subject-specific constant hazards with the given moments over `[0, tau]`.
    ConstantHazard { mean: f64, variance: f64, tau: f64 },
}

pub fn inflation_factor(variant: Inflation) -> f64 {
    match variant {
        Inflation::WeibullMeanRate {
            theta,
            mu_bar,
            beta0,
        } => 1.0 + theta * mu_bar * (1.0 + (2.0 * beta0).exp()) / (1.0 + beta0.exp()),
        Inflation::ConstantHazard {
            mean,
            variance,
            tau,
        } => 1.0 + variance * tau / mean,
    }
}

/// Target events with frailty inflation, early rounding and no cushion.
pub fn ingel_events(spec: &DesignSpec) -> Result<u64> {
    ingel_events_with(spec, EventCountOptions::default())
}

pub fn ingel_events_with(spec: &DesignSpec, opts: EventCountOptions) -> Result<u64> {
    spec.validate()?;
    let base = schoenfeld_events(spec.alpha, 1.0 - spec.power, spec.beta0, spec.pi)?;
    let factor = inflation_factor(Inflation::WeibullMeanRate {
        theta: spec.theta,
        mu_bar: spec.mu_bar(),
        beta0: spec.beta0,
    });
    let inflated = match opts.rounding {
        EventRounding::Early => ceil_count(ceil_count(base) * factor),
        EventRounding::Late => ceil_count(base * factor),
    };
    Ok(inflated as u64 + opts.cushion)
}

/// Subjects needed so that `L` events are expected within the design
/// durations: `ceil(L / ((pi e^beta0 + 1 - pi) mu_bar))`.
pub fn sample_size(spec: &DesignSpec, events: u64) -> Result<u64> {
    spec.validate()?;
    if events == 0 {
        return Err(Error::InvalidParameter("event count must be >= 1".into()));
    }
    let mu_bar = spec.mu_bar();
    if !(mu_bar > 0.0) {
        return Err(Error::InvalidParameter(
            "expected baseline events per subject is 0".into(),
        ));
    }
    let per_subject = (spec.pi * spec.beta0.exp() + 1.0 - spec.pi) * mu_bar;
    Ok(ceil_count(events as f64 / per_subject).max(1.0) as u64)
}

/// Ceiling of a count that should be exact when the underlying ratio is
/// integral: quotients such as `1206 / 1.8` land a few ulps above the
/// integer in floating point, which would otherwise add a spurious unit.
fn ceil_count(x: f64) -> f64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    }
}

/// Power of the two-sided robust Wald test when `beta_hat ~ N(beta0, v2)`.
pub fn power_given_variance(v2: f64, beta0: f64, alpha: f64) -> f64 {
    let z = normal::quantile(1.0 - alpha / 2.0);
    let shift = beta0 / v2.sqrt();
    normal::cdf(-z - shift) + normal::sf(z - shift)
}

/// Solve `power_given_variance(v2) = power` for `v2` by bisection on `v`.
pub fn target_variance(beta0: f64, alpha: f64, power: f64) -> Result<f64> {
    if beta0 == 0.0 || !beta0.is_finite() {
        return Err(Error::InvalidParameter("beta0 must be non-zero".into()));
    }
    if !(power > alpha && power < 1.0 && alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "power target {power} must lie in (alpha = {alpha}, 1)"
        )));
    }
    let mut lo = beta0.abs() / 50.0;
    let mut hi = beta0.abs() * 50.0;
    let p = |v: f64| power_given_variance(v * v, beta0, alpha);
    if !(p(lo) >= power && p(hi) <= power) {
        return Err(Error::BracketFailure(format!(
            "power {power} not bracketed by v in [{lo}, {hi}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let pm = p(mid);
        if (pm - power).abs() <= 1e-13 || hi - lo <= f64::EPSILON * mid {
            return Ok(mid * mid);
        }
        // power decreases in v
        if pm > power {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    Ok(mid * mid)
}

/// Full planning pass for a design spec.
pub fn plan(spec: &DesignSpec, opts: EventCountOptions) -> Result<DesignOutput> {
    spec.validate()?;
    let l_base = schoenfeld_events(spec.alpha, 1.0 - spec.power, spec.beta0, spec.pi)?;
    let mu_bar = spec.mu_bar();
    let inflation_factor = inflation_factor(Inflation::WeibullMeanRate {
        theta: spec.theta,
        mu_bar,
        beta0: spec.beta0,
    });
    let l_events = ingel_events_with(spec, opts)?;
    Ok(DesignOutput {
        l_base,
        inflation_factor,
        l_events,
        mu_bar,
        n_subjects: sample_size(spec, l_events)?,
        v2_target: target_variance(spec.beta0, spec.alpha, spec.power)?,
    })
}
