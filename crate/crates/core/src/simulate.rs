//! Gamma-frailty mixed Poisson trial simulator with a Weibull baseline
//! mean `mu0(t) = lambda t^nu`, uniform accrual and administrative
//! censoring only.
//!
//! Subject `i` of a trial with seed `s` draws from its own ChaCha stream
//! `(s, i)`, so a dataset does not depend on generation order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::counting::{DesignDuration, SubjectRecord, TrialDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    pub lambda: f64,
    pub nu: f64,
    #[serde(default)]
    pub theta: f64,
    pub beta0: f64,
    #[serde(default = "half")]
    pub pi: f64,
    pub tau_a: f64,
    pub tau_f: f64,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Calendar time at which follow-up of every subject ends. Defaults to
    /// the planned study end `tau_a + tau_f`; monitoring experiments extend
    /// it so that a late stopping time can still be observed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub followup_horizon: Option<f64>,
}

fn half() -> f64 {
    0.5
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad("nu must be positive");
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return bad("theta must be non-negative");
        }
        if !self.beta0.is_finite() {
            return bad("beta0 must be finite");
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return bad("pi must lie in (0, 1)");
        }
        if !(self.tau_a >= 0.0 && self.tau_f > 0.0 && (self.tau_a + self.tau_f).is_finite()) {
            return bad("tau_a must be non-negative and tau_f positive");
        }
        if self.n < 2 {
            return Err(Error::TooFewSubjects(self.n));
        }
        if let Some(h) = self.followup_horizon {
            if !(h >= self.tau_a + self.tau_f && h.is_finite()) {
                return bad("followup_horizon must be at least tau_a + tau_f");
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.followup_horizon.unwrap_or(self.tau_a + self.tau_f)
    }
}

/// Subject-level frailty: 1 when `theta = 0`, otherwise gamma with mean 1
/// and variance `theta`.
pub fn draw_frailty<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> f64 {
    if theta == 0.0 {
        return 1.0;
    }
    Gamma::new(1.0 / theta, theta)
        .expect("theta validated positive")
        .sample(rng)
}

/// Event times on `(0, c]` for one subject, by inverting cumulative
/// intensity increments: `t_k^nu = t_{k-1}^nu + E_k / r`.
pub fn simulate_subject<R: Rng + ?Sized>(
    params: &ScenarioParams,
    eta: f64,
    z: u8,
    c: f64,
    rng: &mut R,
) -> Vec<f64> {
    generate(params, eta, z, c, rng, None)
}

/// As [`simulate_subject`], also returning the unit-exponential draws
/// consumed for the returned events.
pub fn simulate_subject_traced<R: Rng + ?Sized>(
    params: &ScenarioParams,
    eta: f64,
    z: u8,
    c: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut draws = Vec::new();
    let times = generate(params, eta, z, c, rng, Some(&mut draws));
    draws.truncate(times.len());
    (times, draws)
}

fn generate<R: Rng + ?Sized>(
    params: &ScenarioParams,
    eta: f64,
    z: u8,
    c: f64,
    rng: &mut R,
    mut trace: Option<&mut Vec<f64>>,
) -> Vec<f64> {
    let rate = eta * params.lambda * (params.beta0 * f64::from(z)).exp();
    let mut times = Vec::new();
    if !(rate > 0.0) || !(c > 0.0) {
        return times;
    }
    let inv_nu = 1.0 / params.nu;
    let mut cum = 0.0; // t_{k-1}^nu
    let mut prev = 0.0;
    loop {
        let e: f64 = Exp1.sample(rng);
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(e);
        }
        cum += e / rate;
        let mut t = cum.powf(inv_nu);
        if t > c {
            return times;
        }
        if t <= prev {
            // a vanishing gap rounded away; keep times strictly increasing
            t = prev.next_up();
            if t > c {
                return times;
            }
        }
        times.push(t);
        prev = t;
    }
}

/// Generator for subject `index` of trial `seed`.
pub fn subject_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Subject `index` of the trial described by `params`.
pub fn simulate_subject_at(params: &ScenarioParams, index: usize) -> SubjectRecord {
    let mut rng = subject_rng(params.seed, index);
    let z = u8::from(rng.random::<f64>() < params.pi);
    let enroll = params.tau_a * rng.random::<f64>();
    let eta = draw_frailty(params.theta, &mut rng);
    let c = params.horizon() - enroll;
    let event_times = simulate_subject(params, eta, z, c, &mut rng);
    SubjectRecord {
        id: format!("{}", index + 1),
        arm: Some(z),
        enroll_time: enroll,
        event_times,
        dropout_time: None,
    }
}

/// A complete trial: `n` subjects, administratively censored at the
/// follow-up horizon.
pub fn simulate_trial(params: &ScenarioParams) -> Result<TrialDataset> {
    params.validate()?;
    let subjects = (0..params.n)
        .map(|i| simulate_subject_at(params, i))
        .collect();
    let design = DesignDuration {
        accrual: params.tau_a,
        min_followup: params.tau_f,
    };
    TrialDataset::new(subjects, Some(design))?.with_admin_end(params.horizon())
}
