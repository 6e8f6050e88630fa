//! Direct, unoptimized evaluations of the estimating equations used as
//! oracles: every sum runs over individual subjects and individual events
//! straight from the definitions, with no pooling or sorting tricks.

#![allow(dead_code)]

use blindmon::counting::{AnalysisSnapshot, SubjectView};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn z(v: &SubjectView) -> f64 {
    f64::from(v.arm.expect("unblinded"))
}

fn at_risk(v: &SubjectView, t: f64) -> f64 {
    if v.followup >= t {
        1.0
    } else {
        0.0
    }
}

/// `(S0, S1)` times `n` at time `t`.
fn s01(snap: &AnalysisSnapshot, beta: f64, t: f64) -> (f64, f64) {
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    for v in &snap.views {
        let w = at_risk(v, t) * (beta * z(v)).exp();
        s0 += w;
        s1 += w * z(v);
    }
    (s0, s1)
}

pub fn score(snap: &AnalysisSnapshot, beta: f64) -> f64 {
    let mut u = 0.0;
    for v in &snap.views {
        for &t in &v.events {
            let (s0, s1) = s01(snap, beta, t);
            u += z(v) - s1 / s0;
        }
    }
    u
}

pub fn log_partial_likelihood(snap: &AnalysisSnapshot, beta: f64) -> f64 {
    let mut l = 0.0;
    for v in &snap.views {
        for &t in &v.events {
            let (s0, _) = s01(snap, beta, t);
            l += beta * z(v) - s0.ln();
        }
    }
    l
}

pub fn distinct_event_times(snap: &AnalysisSnapshot) -> Vec<f64> {
    let mut times: Vec<f64> = snap
        .views
        .iter()
        .flat_map(|v| v.events.iter().copied())
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

fn events_at(v: &SubjectView, u: f64) -> f64 {
    v.events.iter().filter(|&&t| t == u).count() as f64
}

/// Baseline mean increments at each distinct event time.
pub fn breslow_increments(snap: &AnalysisSnapshot, beta: f64) -> Vec<(f64, f64)> {
    distinct_event_times(snap)
        .into_iter()
        .map(|u| {
            let d: f64 = snap.views.iter().map(|v| events_at(v, u)).sum();
            (u, d / s01(snap, beta, u).0)
        })
        .collect()
}

/// `(A, Sigma, v2)` from the residual definitions.
pub fn robust_variance(snap: &AnalysisSnapshot, beta: f64) -> (f64, f64, f64) {
    let n = snap.views.len() as f64;
    let jumps = breslow_increments(snap, beta);
    let mut a = 0.0;
    let mut sigma = 0.0;
    for v in &snap.views {
        let mut w = 0.0;
        for &(u, dmu) in &jumps {
            let (s0, s1) = s01(snap, beta, u);
            let zbar = s1 / s0;
            let r = at_risk(v, u) * (beta * z(v)).exp();
            a += (z(v) - zbar).powi(2) * r * dmu;
            w += (z(v) - zbar) * (events_at(v, u) - r * dmu);
        }
        sigma += w * w;
    }
    let a = a / n;
    let sigma = sigma / n;
    (a, sigma, sigma / (n * a * a))
}

/// Maximizer of the log partial likelihood by successive grid refinement.
pub fn grid_argmax(snap: &AnalysisSnapshot, lo: f64, hi: f64) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..40 {
        let k = 40;
        let step = (hi - lo) / k as f64;
        let best = (0..=k)
            .map(|i| lo + i as f64 * step)
            .map(|b| (b, log_partial_likelihood(snap, b)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        lo = best - step;
        hi = best + step;
        if hi - lo < 1e-11 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Random small unblinded snapshot with events in both arms. Half of the
/// datasets round event times to a coarse grid so that ties occur.
pub fn random_snapshot(seed: u64) -> AnalysisSnapshot {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.random_range(4..=20);
        let tied = rng.random::<bool>();
        let views: Vec<SubjectView> = (0..n)
            .map(|i| {
                let arm = u8::from(i % 2 == 0 || rng.random::<f64>() < 0.3);
                let c = rng.random_range(0.2..2.0);
                let k = rng.random_range(0..=4);
                let mut events: Vec<f64> = (0..k)
                    .map(|_| {
                        let t: f64 = rng.random_range(0.0..c);
                        if tied {
                            ((t / 0.1).ceil() * 0.1).min(c)
                        } else {
                            t
                        }
                    })
                    .filter(|&t| t > 0.0)
                    .collect();
                events.sort_by(f64::total_cmp);
                events.dedup();
                SubjectView {
                    id: format!("{i}"),
                    arm: Some(arm),
                    followup: c,
                    events,
                }
            })
            .collect();
        let with_events = |a: u8| {
            views
                .iter()
                .any(|v| v.arm == Some(a) && !v.events.is_empty())
        };
        if with_events(0) && with_events(1) {
            return AnalysisSnapshot::from_views(2.0, views);
        }
    }
}

/// Relative comparison; the tiny absolute floor only matters when the
/// reference is (numerically) zero.
pub fn close(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs() + 1e-13
}
