//! Semiparametric marginal rates model for a binary treatment indicator.
//!
//! `beta_hat` solves the partial score equation
//!
//! ```text
//! U(beta) = sum_i ∫ (Z_i - Zbar(beta, u)) dN_i(u),   Zbar = S1 / S0,
//! S_r(beta, u) = n^-1 sum_i Y_i(u) Z_i^r exp(beta Z_i)
//! ```
//!
//! and its variance is estimated by the sandwich `n^-1 A^-1 Sigma A^-1`,
//! which stays valid under arbitrary within-subject dependence. All
//! integrals are finite sums over the distinct observed event times; tied
//! events are pooled into one jump of multiplicity `d(u)`.

use serde::Serialize;

use crate::counting::AnalysisSnapshot;
use crate::error::{Error, Result};
use crate::normal;

/// Right-continuous non-decreasing step function starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFunction {
    jump_times: Vec<f64>,
    cumulative_values: Vec<f64>,
}

impl StepFunction {
    pub fn new(jump_times: Vec<f64>, cumulative_values: Vec<f64>) -> Result<Self> {
        if jump_times.len() != cumulative_values.len() {
            return Err(Error::InvalidParameter(
                "step function length mismatch".into(),
            ));
        }
        if jump_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "jump times must be strictly increasing".into(),
            ));
        }
        let mut prev = 0.0;
        for &v in &cumulative_values {
            if v < prev {
                return Err(Error::InvalidParameter(
                    "step function must be non-decreasing".into(),
                ));
            }
            prev = v;
        }
        Ok(Self {
            jump_times,
            cumulative_values,
        })
    }

    /// Value at `t`; 0 before the first jump, last value after the last.
    pub fn eval(&self, t: f64) -> f64 {
        match self.jump_times.partition_point(|&u| u <= t) {
            0 => 0.0,
            k => self.cumulative_values[k - 1],
        }
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn cumulative_values(&self) -> &[f64] {
        &self.cumulative_values
    }

    /// `(time, jump size)` pairs.
    pub fn jumps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.jump_times.iter().enumerate().map(|(k, &t)| {
            let prev = if k == 0 {
                0.0
            } else {
                self.cumulative_values[k - 1]
            };
            (t, self.cumulative_values[k] - prev)
        })
    }

    pub fn last_value(&self) -> f64 {
        self.cumulative_values.last().copied().unwrap_or(0.0)
    }
}

/// Per-event-time risk-set summaries of an unblinded snapshot.
struct RiskSets {
    n: usize,
    times: Vec<f64>,
    /// events at each time, and how many of them came from arm 1
    d: Vec<f64>,
    d1: Vec<f64>,
    at_risk0: Vec<f64>,
    at_risk1: Vec<f64>,
}

impl RiskSets {
    /// `contrast` requires both arms to be represented.
    fn build(snap: &AnalysisSnapshot, contrast: bool) -> Result<Self> {
        let n = snap.views.len();
        let mut followups: Vec<(f64, u8)> = Vec::with_capacity(n);
        let mut events: Vec<(f64, u8)> = Vec::with_capacity(snap.total_events);
        for v in &snap.views {
            let z = v.arm.ok_or(Error::Blinded)?;
            followups.push((v.followup, z));
            events.extend(v.events.iter().map(|&t| (t, z)));
        }
        if events.is_empty() {
            return Err(Error::NoEvents);
        }
        let n1_total = followups.iter().filter(|f| f.1 == 1).count();
        if contrast && (n1_total == 0 || n1_total == n) {
            return Err(Error::DegenerateArms);
        }
        followups.sort_by(|a, b| a.0.total_cmp(&b.0));
        events.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut rs = RiskSets {
            n,
            times: Vec::new(),
            d: Vec::new(),
            d1: Vec::new(),
            at_risk0: Vec::new(),
            at_risk1: Vec::new(),
        };
        // subjects with C < u have left the risk set
        let mut gone = 0;
        let mut gone1 = 0;
        let mut i = 0;
        while i < events.len() {
            let u = events[i].0;
            let mut j = i;
            let mut d1 = 0.0;
            while j < events.len() && events[j].0 == u {
                d1 += f64::from(events[j].1);
                j += 1;
            }
            while gone < n && followups[gone].0 < u {
                gone1 += usize::from(followups[gone].1);
                gone += 1;
            }
            let r1 = n1_total - gone1;
            let r0 = n - gone - r1;
            if r0 + r1 == 0 {
                return Err(Error::EmptyRiskSet(u));
            }
            rs.times.push(u);
            rs.d.push((j - i) as f64);
            rs.d1.push(d1);
            rs.at_risk0.push(r0 as f64);
            rs.at_risk1.push(r1 as f64);
            i = j;
        }
        Ok(rs)
    }

    /// `n S0(beta, u_k)`.
    fn weighted_at_risk(&self, k: usize, beta: f64) -> f64 {
        self.at_risk0[k] + self.at_risk1[k] * beta.exp()
    }

    fn zbar(&self, k: usize, beta: f64) -> f64 {
        let w1 = self.at_risk1[k] * beta.exp();
        w1 / (self.at_risk0[k] + w1)
    }

    /// `(U(beta), -dU/dbeta)`.
    fn score_information(&self, beta: f64) -> (f64, f64) {
        let mut score = 0.0;
        let mut info = 0.0;
        for k in 0..self.times.len() {
            let zb = self.zbar(k, beta);
            score += self.d1[k] - self.d[k] * zb;
            // S2/S0 - (S1/S0)^2 with Z in {0, 1}
            info += self.d[k] * (zb - zb * zb);
        }
        (score, info)
    }
}

/// `U(beta)` for an unblinded snapshot.
pub fn partial_score(snap: &AnalysisSnapshot, beta: f64) -> Result<f64> {
    Ok(RiskSets::build(snap, true)?.score_information(beta).0)
}

/// Analytic `dU/dbeta = -sum_u d(u) V(beta, u)`.
pub fn partial_score_derivative(snap: &AnalysisSnapshot, beta: f64) -> Result<f64> {
    Ok(-RiskSets::build(snap, true)?.score_information(beta).1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// `|beta|` beyond which the likelihood is treated as monotone.
    pub beta_bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 50,
            beta_bound: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub beta_hat: f64,
    pub iterations: usize,
    pub score_at_solution: f64,
    pub a_hat: f64,
    pub sigma_hat: f64,
    pub v2_robust: f64,
    pub v2_naive: f64,
    pub n: usize,
    pub events: usize,
    #[serde(skip)]
    pub mu0_hat: StepFunction,
}

impl FitResult {
    pub fn se_robust(&self) -> f64 {
        self.v2_robust.sqrt()
    }

    pub fn se_naive(&self) -> f64 {
        self.v2_naive.sqrt()
    }

    pub fn rate_ratio(&self) -> f64 {
        self.beta_hat.exp()
    }

    /// Wald interval for the rate ratio using the robust standard error.
    pub fn rate_ratio_ci(&self, level: f64) -> (f64, f64) {
        let z = normal::quantile(0.5 + level / 2.0);
        let se = self.se_robust();
        (
            (self.beta_hat - z * se).exp(),
            (self.beta_hat + z * se).exp(),
        )
    }
}

/// Solve `U(beta) = 0` by Newton iteration with step halving, then fill in
/// the Breslow-type mean function and the sandwich variance.
pub fn fit_beta(snap: &AnalysisSnapshot, opts: FitOptions) -> Result<FitResult> {
    let rs = RiskSets::build(snap, true)?;
    let total_d: f64 = rs.d.iter().sum();
    let total_d1: f64 = rs.d1.iter().sum();
    if total_d1 == 0.0 || total_d1 == total_d {
        return Err(Error::Nonidentifiable {
            beta: if total_d1 == 0.0 {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            },
        });
    }

    let mut beta = 0.0;
    let (mut score, mut info) = rs.score_information(beta);
    let mut iterations = 0;
    while score.abs() > opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                beta,
                score,
            });
        }
        iterations += 1;
        if !(info > 0.0) {
            return Err(Error::Nonidentifiable { beta });
        }
        let mut step = score / info;
        let mut next = beta + step;
        let (mut next_score, mut next_info) = rs.score_information(next);
        let mut halvings = 0;
        while next_score.abs() >= score.abs() && halvings < 30 {
            step *= 0.5;
            next = beta + step;
            (next_score, next_info) = rs.score_information(next);
            halvings += 1;
        }
        beta = next;
        score = next_score;
        info = next_info;
        if beta.abs() > opts.beta_bound {
            return Err(Error::Nonidentifiable { beta });
        }
    }

    let mu0_hat = breslow_from(&rs, beta);
    let rv = robust_from(snap, &rs, beta, &mu0_hat)?;
    Ok(FitResult {
        beta_hat: beta,
        iterations,
        score_at_solution: score,
        a_hat: rv.a_hat,
        sigma_hat: rv.sigma_hat,
        v2_robust: rv.v2_robust,
        v2_naive: 1.0 / (rs.n as f64 * rv.a_hat),
        n: rs.n,
        events: snap.total_events,
        mu0_hat,
    })
}

fn breslow_from(rs: &RiskSets, beta: f64) -> StepFunction {
    let mut acc = 0.0;
    let values = (0..rs.times.len())
        .map(|k| {
            acc += rs.d[k] / rs.weighted_at_risk(k, beta);
            acc
        })
        .collect();
    StepFunction {
        jump_times: rs.times.clone(),
        cumulative_values: values,
    }
}

/// `mu0_hat(t) = ∫_0^t d(sum_i N_i(u)) / (n S0(beta, u))`.
pub fn breslow_mu0(snap: &AnalysisSnapshot, beta: f64) -> Result<StepFunction> {
    Ok(breslow_from(&RiskSets::build(snap, false)?, beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustVariance {
    pub a_hat: f64,
    pub sigma_hat: f64,
    pub v2_robust: f64,
}

/// `A_hat`, `Sigma_hat` and `v2 = n^-1 A^-1 Sigma A^-1` at `beta_hat`.
pub fn robust_variance(
    snap: &AnalysisSnapshot,
    beta_hat: f64,
    mu0_hat: &StepFunction,
) -> Result<RobustVariance> {
    let rs = RiskSets::build(snap, true)?;
    robust_from(snap, &rs, beta_hat, mu0_hat)
}

fn robust_from(
    snap: &AnalysisSnapshot,
    rs: &RiskSets,
    beta: f64,
    mu0_hat: &StepFunction,
) -> Result<RobustVariance> {
    if mu0_hat.jump_times() != rs.times.as_slice() {
        return Err(Error::InvalidParameter(
            "baseline mean does not jump at the snapshot's event times".into(),
        ));
    }
    let n = rs.n as f64;
    let m = rs.times.len();
    let e_beta = beta.exp();
    let dmu: Vec<f64> = mu0_hat.jumps().map(|(_, j)| j).collect();
    let zbar: Vec<f64> = (0..m).map(|k| rs.zbar(k, beta)).collect();

    let mut a_sum = 0.0;
    for k in 0..m {
        let zb = zbar[k];
        a_sum += dmu[k] * (rs.at_risk0[k] * zb * zb + rs.at_risk1[k] * e_beta * (1.0 - zb).powi(2));
    }
    let a_hat = a_sum / n;
    if !(a_hat > 0.0) {
        return Err(Error::NonPositiveInformation(a_hat));
    }

    // compensator integrals ∫_0^t (z - Zbar) dmu0 for z = 0, 1
    let mut comp0 = Vec::with_capacity(m + 1);
    let mut comp1 = Vec::with_capacity(m + 1);
    comp0.push(0.0);
    comp1.push(0.0);
    for k in 0..m {
        comp0.push(comp0[k] - zbar[k] * dmu[k]);
        comp1.push(comp1[k] + (1.0 - zbar[k]) * dmu[k]);
    }

    let mut sigma_sum = 0.0;
    for v in &snap.views {
        let z = f64::from(v.arm.ok_or(Error::Blinded)?);
        let mut w = 0.0;
        for &t in &v.events {
            let k = rs.times.partition_point(|&u| u < t);
            w += z - zbar[k];
        }
        let at_risk = rs.times.partition_point(|&u| u <= v.followup);
        w -= if z == 1.0 {
            e_beta * comp1[at_risk]
        } else {
            comp0[at_risk]
        };
        sigma_sum += w * w;
    }
    let sigma_hat = sigma_sum / n;
    Ok(RobustVariance {
        a_hat,
        sigma_hat,
        v2_robust: sigma_hat / (n * a_hat * a_hat),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaldTest {
    pub z: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Robust Wald test of `beta = 0` against the standard normal.
pub fn wald_test(fit: &FitResult, alpha: f64) -> WaldTest {
    let z = fit.beta_hat / fit.se_robust();
    let p_value = (2.0 * normal::sf(z.abs())).min(1.0);
    WaldTest {
        z,
        p_value,
        reject: p_value < alpha,
    }
}
