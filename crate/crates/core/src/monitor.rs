//! Blinded monitoring of the robust variance.
//!
//! With equal allocation the robust variance of `beta_hat` near the null
//! can be estimated without treatment codes as
//!
//! ```text
//! v2_blind = 4 sum_i (N_i(C_i) - mu0(C_i))^2 / L^2,
//! ```
//!
//! where `mu0` is the pooled Nelson–Aalen-type mean `sum d(u) / Y(u)` and
//! the sum runs over currently enrolled subjects. The final analysis is
//! triggered at the first scheduled calendar time at which the estimate
//! drops to the target variance.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counting::{observed_followup, snapshot, AnalysisSnapshot, TrialDataset, DAYS_PER_YEAR};
use crate::design::{power_given_variance, DesignSpec};
use crate::error::{Error, Result};
use crate::estimate::StepFunction;
use crate::stats::quantile_sorted;

/// Pooled mean `mu0(t) = sum_{u <= t} d(u) / #{j : C_j >= u}`; treatment
/// codes, if present, are ignored.
pub fn blinded_mu0(snap: &AnalysisSnapshot) -> Result<StepFunction> {
    let mut events: Vec<f64> = snap
        .views
        .iter()
        .flat_map(|v| v.events.iter().copied())
        .collect();
    if events.is_empty() {
        return Err(Error::NoEvents);
    }
    events.sort_unstable_by(f64::total_cmp);
    let mut followups: Vec<f64> = snap.views.iter().map(|v| v.followup).collect();
    followups.sort_unstable_by(f64::total_cmp);
    let n = followups.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut gone = 0;
    let mut mu = 0.0;
    let mut e = 0;
    while e < events.len() {
        let u = events[e];
        let j = e + events[e..].partition_point(|&t| t == u);
        while gone < n && followups[gone] < u {
            gone += 1;
        }
        if gone == n {
            return Err(Error::EmptyRiskSet(u));
        }
        mu += (j - e) as f64 / (n - gone) as f64;
        times.push(u);
        values.push(mu);
        e = j;
    }
    StepFunction::new(times, values)
}

/// `v2_blind` from `(C_i, N_i(C_i))` pairs and the pooled, sorted event
/// follow-up times. Returns `None` when there are no events.
///
/// Inputs are put in a canonical order before any floating-point sum, so
/// the result depends only on the multiset of subjects.
fn blinded_kernel(pairs: &mut [(f64, usize)], events: &[f64]) -> Option<f64> {
    let l = events.len();
    if l == 0 {
        return None;
    }
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let pairs = &*pairs;
    let n = pairs.len();
    let mut gone = 0;
    let mut mu = 0.0;
    let mut e = 0;
    let mut ss = 0.0;
    for &(c, count) in pairs {
        while e < l && events[e] <= c {
            let u = events[e];
            let j = e + events[e..].partition_point(|&t| t == u);
            while gone < n && pairs[gone].0 < u {
                gone += 1;
            }
            mu += (j - e) as f64 / (n - gone) as f64;
            e = j;
        }
        let resid = count as f64 - mu;
        ss += resid * resid;
    }
    Some(4.0 * ss / (l as f64 * l as f64))
}

fn snapshot_inputs(snap: &AnalysisSnapshot) -> (Vec<(f64, usize)>, Vec<f64>) {
    let pairs = snap
        .views
        .iter()
        .map(|v| (v.followup, v.events.len()))
        .collect();
    let mut events: Vec<f64> = snap
        .views
        .iter()
        .flat_map(|v| v.events.iter().copied())
        .collect();
    events.sort_unstable_by(f64::total_cmp);
    (pairs, events)
}

/// Blinded variance estimate for a snapshot.
pub fn blinded_variance(snap: &AnalysisSnapshot) -> Result<f64> {
    if snap.n_enrolled < 2 {
        return Err(Error::TooFewSubjects(snap.n_enrolled));
    }
    let (mut pairs, events) = snapshot_inputs(snap);
    blinded_kernel(&mut pairs, &events).ok_or(Error::NoEvents)
}

/// Result of evaluating the blinded statistic at one calendar time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlindedEvaluation {
    pub calendar_time: f64,
    pub events: usize,
    pub n_enrolled: usize,
    pub v2_blind: Option<f64>,
}

/// Evaluates `v2_blind` at a non-decreasing sequence of calendar times,
/// reusing the pooled event list between calls. Each evaluation agrees
/// bit for bit with [`blinded_variance`] on the corresponding snapshot.
#[derive(Debug)]
pub struct BlindedTracker<'a> {
    dataset: &'a TrialDataset,
    by_entry: Vec<usize>,
    caps: Vec<Option<f64>>,
    enrolled: usize,
    observed: Vec<usize>,
    events: Vec<f64>,
    pairs: Vec<(f64, usize)>,
    last: f64,
}

impl<'a> BlindedTracker<'a> {
    pub fn new(dataset: &'a TrialDataset) -> Self {
        let subjects = dataset.subjects();
        let mut by_entry: Vec<usize> = (0..subjects.len()).collect();
        by_entry.sort_by(|&a, &b| subjects[a].enroll_time.total_cmp(&subjects[b].enroll_time));
        let caps = by_entry
            .iter()
            .map(|&i| dataset.followup_cap(&subjects[i]))
            .collect();
        Self {
            dataset,
            caps,
            observed: vec![0; by_entry.len()],
            by_entry,
            enrolled: 0,
            events: Vec::with_capacity(dataset.total_events()),
            pairs: Vec::with_capacity(subjects.len()),
            last: f64::NEG_INFINITY,
        }
    }

    pub fn evaluate(&mut self, s: f64) -> Result<BlindedEvaluation> {
        if !(s >= self.last) || !s.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "evaluation time {s} precedes previous time {}",
                self.last
            )));
        }
        self.last = s;
        let subjects = self.dataset.subjects();
        while self.enrolled < self.by_entry.len()
            && subjects[self.by_entry[self.enrolled]].enroll_time < s
        {
            self.enrolled += 1;
        }
        self.pairs.clear();
        for slot in 0..self.enrolled {
            let rec = &subjects[self.by_entry[slot]];
            let (c, k) = observed_followup(&rec.event_times, s - rec.enroll_time, self.caps[slot]);
            for &t in &rec.event_times[self.observed[slot]..k] {
                let at = self.events.partition_point(|&x| x <= t);
                self.events.insert(at, t);
            }
            self.observed[slot] = k;
            self.pairs.push((c, k));
        }
        let v2_blind = if self.enrolled >= 2 {
            blinded_kernel(&mut self.pairs, &self.events)
        } else {
            None
        };
        Ok(BlindedEvaluation {
            calendar_time: s,
            events: self.events.len(),
            n_enrolled: self.enrolled,
            v2_blind,
        })
    }
}

/// Monitoring begins once any of the given conditions holds; an omitted
/// condition never fires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRule {
    /// Years since study start.
    #[serde(default)]
    pub min_elapsed: Option<f64>,
    #[serde(default)]
    pub min_events: Option<usize>,
}

impl StartRule {
    /// Start once `min_events` events have been observed.
    pub fn events(min_events: usize) -> Self {
        Self {
            min_elapsed: None,
            min_events: Some(min_events),
        }
    }

    /// Start at calendar time `min_elapsed` or at the `min_events`-th
    /// event, whichever comes first.
    pub fn either(min_elapsed: f64, min_events: usize) -> Self {
        Self {
            min_elapsed: Some(min_elapsed),
            min_events: Some(min_events),
        }
    }

    fn validate(&self) -> Result<()> {
        match (self.min_elapsed, self.min_events) {
            (None, None) => Err(Error::InvalidParameter(
                "start_rule needs min_elapsed or min_events".into(),
            )),
            (Some(t), _) if !(t >= 0.0 && t.is_finite()) => Err(Error::InvalidParameter(
                "start_rule.min_elapsed must be non-negative".into(),
            )),
            _ => Ok(()),
        }
    }
}

impl Default for StartRule {
    fn default() -> Self {
        Self::either(1.0 / 12.0, 20)
    }
}

/// Calendar times at which the statistic is evaluated. Grids are anchored
/// at study start and use exact multiples of the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// The activation time and every subsequent event arrival.
    Continuous,
    Daily,
    Weekly,
    /// Multiples of 1/12 year.
    Monthly,
    /// Explicit calendar times in years.
    Custom(Vec<f64>),
}

impl Schedule {
    fn step(&self) -> Option<f64> {
        match self {
            Schedule::Daily => Some(1.0 / DAYS_PER_YEAR),
            Schedule::Weekly => Some(7.0 / DAYS_PER_YEAR),
            Schedule::Monthly => Some(1.0 / 12.0),
            Schedule::Continuous | Schedule::Custom(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 100 {
            return Err(Error::InvalidParameter(
                "bootstrap needs at least 100 replicates".into(),
            ));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidParameter(
                "bootstrap level must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

fn default_horizon() -> f64 {
    15.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    pub v2_target: f64,
    #[serde(default)]
    pub start_rule: StartRule,
    pub schedule: Schedule,
    #[serde(default = "default_horizon")]
    pub max_horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapConfig>,
    /// Stop evaluating at the first crossing; when false the trajectory is
    /// followed to the horizon or the end of the data.
    #[serde(default = "yes")]
    pub stop_at_crossing: bool,
}

impl MonitorConfig {
    pub fn new(v2_target: f64, schedule: Schedule) -> Self {
        Self {
            v2_target,
            start_rule: StartRule::default(),
            schedule,
            max_horizon: default_horizon(),
            bootstrap: None,
            stop_at_crossing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v2_target > 0.0 && self.v2_target.is_finite()) {
            return Err(Error::InvalidParameter("v2_target must be positive".into()));
        }
        self.start_rule.validate()?;
        if !(self.max_horizon > self.start_rule.min_elapsed.unwrap_or(0.0)
            && self.max_horizon.is_finite())
        {
            return Err(Error::InvalidParameter(
                "max_horizon must exceed start_rule.min_elapsed".into(),
            ));
        }
        if let Schedule::Custom(times) = &self.schedule {
            if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParameter(
                    "custom schedule must be finite and strictly increasing".into(),
                ));
            }
        }
        if let Some(b) = &self.bootstrap {
            b.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapCi {
    pub v2_lo: f64,
    pub v2_hi: f64,
    pub power_lo: f64,
    pub power_hi: f64,
    /// Resamples discarded for containing no events.
    pub redraws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorPoint {
    /// Calendar time, years.
    pub s: f64,
    #[serde(rename = "L")]
    pub events: usize,
    #[serde(rename = "n")]
    pub n_enrolled: usize,
    /// `None` when no events have been observed yet.
    pub v2_blind: Option<f64>,
    pub predicted_power: Option<f64>,
    pub ci: Option<BootstrapCi>,
    pub crossed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Decision {
    Stopped {
        stop_time: f64,
        stop_l: usize,
        n_enrolled: usize,
        v2_blind: f64,
        predicted_power: f64,
    },
    NotReached {
        /// Last calendar time evaluated, if any.
        last_time: Option<f64>,
        horizon: f64,
    },
}

impl Decision {
    pub fn stop_time(&self) -> Option<f64> {
        match self {
            Decision::Stopped { stop_time, .. } => Some(*stop_time),
            Decision::NotReached { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub points: Vec<MonitorPoint>,
    pub decision: Decision,
}

/// Calendar time at which the start rule activates (`None` if never).
fn activation_time(dataset: &TrialDataset, rule: StartRule) -> Option<f64> {
    let by_events = rule.min_events.and_then(|m| {
        if m == 0 {
            Some(0.0)
        } else {
            dataset.event_calendar_times().get(m - 1).copied()
        }
    });
    match (rule.min_elapsed, by_events) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// Scheduled evaluation times in `[start, horizon]`, ascending.
fn schedule_times<'a>(
    dataset: &TrialDataset,
    cfg: &'a MonitorConfig,
    start: f64,
) -> Box<dyn Iterator<Item = f64> + 'a> {
    let horizon = cfg.max_horizon;
    match &cfg.schedule {
        Schedule::Continuous => {
            let mut times = dataset.event_calendar_times();
            times.retain(|&t| t > start && t <= horizon);
            times.dedup();
            let head = (start <= horizon).then_some(start);
            Box::new(head.into_iter().chain(times))
        }
        Schedule::Custom(times) => Box::new(
            times
                .iter()
                .copied()
                .filter(move |&t| t >= start && t <= horizon),
        ),
        grid => {
            let step = grid.step().expect("grid schedule");
            let first = (start / step - 1e-9).ceil().max(0.0) as u64;
            Box::new(
                (first..)
                    .map(move |k| k as f64 * step)
                    .take_while(move |&t| t <= horizon + 1e-12),
            )
        }
    }
}

fn require_equal_allocation(design: &DesignSpec) -> Result<()> {
    if design.pi != 0.5 {
        return Err(Error::InvalidParameter(
            "blinded monitoring is defined for equal allocation only (pi = 0.5)".into(),
        ));
    }
    Ok(())
}

/// Evaluate the blinded statistic on the schedule and apply the first
/// crossing rule.
pub fn monitor_trajectory(
    dataset: &TrialDataset,
    cfg: &MonitorConfig,
    design: &DesignSpec,
) -> Result<Trajectory> {
    cfg.validate()?;
    design.validate()?;
    require_equal_allocation(design)?;

    let start = activation_time(dataset, cfg.start_rule).unwrap_or(f64::INFINITY);
    let data_end = dataset.last_observation_time();
    let mut tracker = BlindedTracker::new(dataset);
    let mut points = Vec::new();
    let mut decision = None;
    for s in schedule_times(dataset, cfg, start) {
        let eval = tracker.evaluate(s)?;
        let power = eval
            .v2_blind
            .map(|v2| power_given_variance(v2, design.beta0, design.alpha));
        let crossed = eval.v2_blind.is_some_and(|v2| v2 <= cfg.v2_target);
        let ci = match (&cfg.bootstrap, eval.v2_blind) {
            (Some(b), Some(_)) => {
                let snap = snapshot(dataset, s, true)?;
                Some(bootstrap_ci(&snap, b, design.beta0, design.alpha)?)
            }
            _ => None,
        };
        if crossed && decision.is_none() {
            decision = Some(Decision::Stopped {
                stop_time: s,
                stop_l: eval.events,
                n_enrolled: eval.n_enrolled,
                v2_blind: eval.v2_blind.expect("crossed"),
                predicted_power: power.expect("crossed"),
            });
        }
        points.push(MonitorPoint {
            s,
            events: eval.events,
            n_enrolled: eval.n_enrolled,
            v2_blind: eval.v2_blind,
            predicted_power: power,
            ci,
            crossed,
        });
        if decision.is_some() && cfg.stop_at_crossing {
            break;
        }
        // nothing changes once every subject's follow-up has ended
        if data_end.is_some_and(|end| s >= end) {
            break;
        }
    }
    let decision = decision.unwrap_or(Decision::NotReached {
        last_time: points.last().map(|p| p.s),
        horizon: cfg.max_horizon,
    });
    Ok(Trajectory { points, decision })
}

/// Percentile bootstrap interval for `v2_blind`, resampling subjects with
/// replacement. Power bounds map the variance bounds through the power
/// formula (and so swap ends). Replicate `b` uses seed `seed + b`.
pub fn bootstrap_ci(
    snap: &AnalysisSnapshot,
    cfg: &BootstrapConfig,
    beta0: f64,
    alpha: f64,
) -> Result<BootstrapCi> {
    cfg.validate()?;
    let n = snap.n_enrolled;
    if n < 2 {
        return Err(Error::TooFewSubjects(n));
    }
    if snap.total_events == 0 {
        return Err(Error::NoEvents);
    }
    let cap = 10 * cfg.replicates;
    let outcomes: Vec<std::result::Result<(f64, usize), usize>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(b as u64));
            let mut pairs = Vec::with_capacity(n);
            let mut events = Vec::with_capacity(snap.total_events);
            let mut redraws = 0;
            loop {
                pairs.clear();
                events.clear();
                for _ in 0..n {
                    let v = &snap.views[rng.random_range(0..n)];
                    pairs.push((v.followup, v.events.len()));
                    events.extend_from_slice(&v.events);
                }
                if !events.is_empty() {
                    events.sort_unstable_by(f64::total_cmp);
                    let v2 = blinded_kernel(&mut pairs, &events).expect("events present");
                    return Ok((v2, redraws));
                }
                redraws += 1;
                if redraws > cap {
                    return Err(redraws);
                }
            }
        })
        .collect();

    let mut values = Vec::with_capacity(cfg.replicates);
    let mut redraws = 0;
    for outcome in outcomes {
        match outcome {
            Ok((v2, r)) => {
                values.push(v2);
                redraws += r;
            }
            Err(r) => return Err(Error::BootstrapExhausted(r)),
        }
    }
    if redraws > cap {
        return Err(Error::BootstrapExhausted(redraws));
    }
    values.sort_unstable_by(f64::total_cmp);
    let tail = (1.0 - cfg.level) / 2.0;
    let v2_lo = quantile_sorted(&values, tail);
    let v2_hi = quantile_sorted(&values, 1.0 - tail);
    Ok(BootstrapCi {
        v2_lo,
        v2_hi,
        power_lo: power_given_variance(v2_hi, beta0, alpha),
        power_hi: power_given_variance(v2_lo, beta0, alpha),
        redraws,
    })
}
