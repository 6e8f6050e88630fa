//! Counting-process data model for two-arm recurrent-event trials.
//!
//! A [`TrialDataset`] holds one [`SubjectRecord`] per randomized subject with
//! event times measured from that subject's entry. [`snapshot`] freezes the
//! trial at a calendar time `s`, applying administrative censoring so that
//! subject `i` has follow-up `C_i = min(s - e_i, dropout_i, end - e_i)` and
//! observed counting process `N_i(t) = N*_i(t ∧ C_i)`.
//!
//! Time is in years throughout. Event times equal to `C_i` are observed.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DAYS_PER_YEAR: f64 = 365.25;

/// Slack (years) when comparing an event time against a follow-up bound
/// computed by floating-point subtraction of calendar times.
pub const TIME_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    #[default]
    Years,
    Days,
}

impl TimeUnit {
    pub fn to_years(self, value: f64) -> f64 {
        match self {
            TimeUnit::Years => value,
            TimeUnit::Days => value / DAYS_PER_YEAR,
        }
    }

    pub fn from_years(self, value: f64) -> f64 {
        match self {
            TimeUnit::Years => value,
            TimeUnit::Days => value * DAYS_PER_YEAR,
        }
    }
}

/// Supported on-disk dataset formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    EventsCsv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    /// Treatment indicator; `None` in blinded datasets.
    pub arm: Option<u8>,
    /// Calendar years from study start.
    pub enroll_time: f64,
    /// Strictly increasing years from entry.
    pub event_times: Vec<f64>,
    /// Non-administrative end of observation, years from entry.
    pub dropout_time: Option<f64>,
}

impl SubjectRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::InvalidSubject {
            id: self.id.clone(),
            msg,
        };
        if !(self.enroll_time.is_finite() && self.enroll_time >= 0.0) {
            return Err(bad(format!(
                "enroll_time {} must be finite and >= 0",
                self.enroll_time
            )));
        }
        if let Some(a) = self.arm {
            if a > 1 {
                return Err(bad(format!("arm {a} is not 0 or 1")));
            }
        }
        let mut prev = 0.0;
        for &t in &self.event_times {
            if !(t.is_finite() && t > prev) {
                return Err(bad(format!(
                    "event times must be positive and strictly increasing (got {t} after {prev})"
                )));
            }
            prev = t;
        }
        if let Some(d) = self.dropout_time {
            if !(d.is_finite() && d > 0.0) {
                return Err(bad(format!("dropout_time {d} must be positive")));
            }
            if let Some(&last) = self.event_times.last() {
                if last > d {
                    return Err(Error::EventAfterCensoring {
                        id: self.id.clone(),
                        event: last,
                        censor: d,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Planned accrual and minimum follow-up durations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignDuration {
    pub accrual: f64,
    pub min_followup: f64,
}

impl DesignDuration {
    pub fn total(&self) -> f64 {
        self.accrual + self.min_followup
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    subjects: Vec<SubjectRecord>,
    design: Option<DesignDuration>,
    admin_end: Option<f64>,
}

impl TrialDataset {
    pub fn new(subjects: Vec<SubjectRecord>, design: Option<DesignDuration>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(subjects.len());
        for s in &subjects {
            s.validate()?;
            if seen.insert(s.id.as_str(), ()).is_some() {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            if let Some(d) = design {
                if s.enroll_time > d.accrual + TIME_TOLERANCE {
                    return Err(Error::InvalidSubject {
                        id: s.id.clone(),
                        msg: format!(
                            "enroll_time {} exceeds accrual period {}",
                            s.enroll_time, d.accrual
                        ),
                    });
                }
            }
        }
        Ok(Self {
            subjects,
            design,
            admin_end: None,
        })
    }

    /// Override the calendar time at which administrative follow-up ends.
    /// Defaults to `accrual + min_followup` when a design duration is declared.
    pub fn with_admin_end(mut self, end: f64) -> Result<Self> {
        if !(end.is_finite() && end > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "admin end {end} must be positive"
            )));
        }
        for s in &self.subjects {
            if let Some(&last) = s.event_times.last() {
                if s.enroll_time + last > end + TIME_TOLERANCE {
                    return Err(Error::EventAfterCensoring {
                        id: s.id.clone(),
                        event: last,
                        censor: end - s.enroll_time,
                    });
                }
            }
        }
        self.admin_end = Some(end);
        Ok(self)
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn design(&self) -> Option<DesignDuration> {
        self.design
    }

    pub fn admin_end(&self) -> Option<f64> {
        self.admin_end.or(self.design.map(|d| d.total()))
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Upper bound on a subject's follow-up independent of the analysis time.
    pub fn followup_cap(&self, subject: &SubjectRecord) -> Option<f64> {
        let admin = self.admin_end().map(|end| end - subject.enroll_time);
        match (subject.dropout_time, admin) {
            (Some(d), Some(a)) => Some(d.min(a)),
            (d, a) => d.or(a),
        }
    }

    /// Calendar time after which no subject contributes further information,
    /// or `None` when any follow-up is open-ended.
    pub fn last_observation_time(&self) -> Option<f64> {
        self.subjects.iter().try_fold(0.0_f64, |acc, s| {
            self.followup_cap(s).map(|c| acc.max(s.enroll_time + c))
        })
    }

    /// All event calendar times (entry + event time), sorted ascending.
    pub fn event_calendar_times(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .subjects
            .iter()
            .flat_map(|s| s.event_times.iter().map(move |t| s.enroll_time + t))
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }

    pub fn total_events(&self) -> usize {
        self.subjects.iter().map(|s| s.event_times.len()).sum()
    }

    /// Same dataset with every treatment code removed.
    pub fn blinded(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.subjects {
            s.arm = None;
        }
        out
    }

    /// The data as they would exist at calendar time `s`: later enrollees
    /// dropped, events truncated at follow-up, follow-up frozen as dropout.
    pub fn restricted_to(&self, s: f64) -> Self {
        let subjects = self
            .subjects
            .iter()
            .filter(|r| r.enroll_time < s)
            .map(|r| {
                let (c, k) =
                    observed_followup(&r.event_times, s - r.enroll_time, self.followup_cap(r));
                SubjectRecord {
                    id: r.id.clone(),
                    arm: r.arm,
                    enroll_time: r.enroll_time,
                    event_times: r.event_times[..k].to_vec(),
                    dropout_time: Some(c),
                }
            })
            .collect();
        Self {
            subjects,
            design: self.design,
            admin_end: self.admin_end,
        }
    }
}

/// Follow-up `C` and the number of observed events for a subject whose raw
/// elapsed time since entry is `elapsed`.
///
/// Events within [`TIME_TOLERANCE`] of the bound are observed, and `C` is
/// raised to the last observed event so that `Y_i(t) = I(C_i >= t)` holds at
/// every observed event.
pub(crate) fn observed_followup(events: &[f64], elapsed: f64, cap: Option<f64>) -> (f64, usize) {
    let mut c = match cap {
        Some(cap) => elapsed.min(cap),
        None => elapsed,
    };
    let k = events.partition_point(|&t| t <= c + TIME_TOLERANCE);
    if k > 0 && events[k - 1] > c {
        c = events[k - 1];
    }
    (c, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectView {
    pub id: String,
    pub arm: Option<u8>,
    /// Follow-up `C_i` at the snapshot time, years.
    pub followup: f64,
    /// Event times `<= C_i`.
    pub events: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSnapshot {
    pub calendar_time: f64,
    pub views: Vec<SubjectView>,
    pub n_enrolled: usize,
    pub total_events: usize,
    pub tau_max: f64,
}

impl AnalysisSnapshot {
    pub fn is_blinded(&self) -> bool {
        self.views.iter().any(|v| v.arm.is_none())
    }

    pub fn blinded(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.views {
            v.arm = None;
        }
        out
    }

    /// Build a snapshot directly from views (used for resampling).
    pub fn from_views(calendar_time: f64, views: Vec<SubjectView>) -> Self {
        let total_events = views.iter().map(|v| v.events.len()).sum();
        let tau_max = views.iter().map(|v| v.followup).fold(0.0, f64::max);
        Self {
            calendar_time,
            n_enrolled: views.len(),
            views,
            total_events,
            tau_max,
        }
    }
}

/// Freeze the dataset at calendar time `s`.
pub fn snapshot(dataset: &TrialDataset, s: f64, blinded: bool) -> Result<AnalysisSnapshot> {
    if !s.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "snapshot time {s} is not finite"
        )));
    }
    let views: Vec<SubjectView> = dataset
        .subjects
        .iter()
        .filter(|r| r.enroll_time < s)
        .map(|r| {
            let (c, k) =
                observed_followup(&r.event_times, s - r.enroll_time, dataset.followup_cap(r));
            SubjectView {
                id: r.id.clone(),
                arm: if blinded { None } else { r.arm },
                followup: c,
                events: r.event_times[..k].to_vec(),
            }
        })
        .collect();
    if views.is_empty() {
        return Err(Error::EmptySnapshot(s));
    }
    Ok(AnalysisSnapshot::from_views(s, views))
}

const EVENTS_CSV_HEADER: [&str; 5] = ["id", "arm", "enroll_time", "time", "status"];

pub fn load_dataset(path: &Path, format: DatasetFormat, unit: TimeUnit) -> Result<TrialDataset> {
    match format {
        DatasetFormat::EventsCsv => {
            let file = std::fs::File::open(path)?;
            read_events_csv(file, unit)
        }
    }
}

#[derive(Default)]
struct PendingSubject {
    arm: Option<u8>,
    enroll: f64,
    events: Vec<f64>,
    censor: Option<f64>,
}

/// Parse the `id,arm,enroll_time,time,status` format.
pub fn read_events_csv<R: Read>(reader: R, unit: TimeUnit) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::MalformedRow {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    // a zero-byte file is an empty dataset rather than a bad header
    if header.is_empty() {
        return TrialDataset::new(Vec::new(), None);
    }
    let got: Vec<&str> = header.iter().collect();
    if got != EVENTS_CSV_HEADER {
        return Err(Error::MalformedRow {
            line: 1,
            msg: format!(
                "expected header {}, got {}",
                EVENTS_CSV_HEADER.join(","),
                got.join(",")
            ),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, PendingSubject> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let malformed = |msg: String| Error::MalformedRow { line, msg };
        let num = |field: &str, name: &str| -> Result<f64> {
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(format!("{name} {field:?} is not a finite number")))
        };

        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(malformed("empty id".into()));
        }
        let arm = match &rec[1] {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => return Err(malformed(format!("arm {other:?} is not 0, 1 or empty"))),
        };
        let enroll = unit.to_years(num(&rec[2], "enroll_time")?);
        let time = unit.to_years(num(&rec[3], "time")?);
        let status = match &rec[4] {
            "0" => false,
            "1" => true,
            other => return Err(malformed(format!("status {other:?} is not 0 or 1"))),
        };

        let entry = pending.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            PendingSubject {
                arm,
                enroll,
                ..Default::default()
            }
        });
        if entry.arm != arm {
            return Err(malformed(format!("inconsistent arm for subject {id}")));
        }
        if entry.enroll != enroll {
            return Err(malformed(format!(
                "inconsistent enroll_time for subject {id}"
            )));
        }
        if status {
            entry.events.push(time);
        } else if entry.censor.replace(time).is_some() {
            return Err(Error::DuplicateCensoring { id });
        }
    }

    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let mut p = pending.remove(&id).expect("id recorded in order");
        let censor = p
            .censor
            .ok_or_else(|| Error::MissingCensoring { id: id.clone() })?;
        p.events.sort_by(f64::total_cmp);
        if let Some(&last) = p.events.last() {
            if last > censor {
                return Err(Error::EventAfterCensoring {
                    id,
                    event: last,
                    censor,
                });
            }
        }
        if p.events.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSubject {
                id,
                msg: "duplicate event time".into(),
            });
        }
        subjects.push(SubjectRecord {
            id,
            arm: p.arm,
            enroll_time: p.enroll,
            event_times: p.events,
            dropout_time: Some(censor),
        });
    }
    TrialDataset::new(subjects, None)
}

/// Write the `events_csv` format in years. The censoring row carries each
/// subject's follow-up cap; subjects without one are an error.
pub fn write_events_csv<W: Write>(dataset: &TrialDataset, writer: W, blinded: bool) -> Result<()> {
    write_events_csv_in(dataset, writer, blinded, TimeUnit::Years)
}

/// [`write_events_csv`] with times expressed in `unit`.
pub fn write_events_csv_in<W: Write>(
    dataset: &TrialDataset,
    writer: W,
    blinded: bool,
    unit: TimeUnit,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(EVENTS_CSV_HEADER).map_err(csv_err)?;
    for s in dataset.subjects() {
        let cap = dataset
            .followup_cap(s)
            .ok_or_else(|| Error::InvalidSubject {
                id: s.id.clone(),
                msg: "follow-up end is unknown; cannot write censoring row".into(),
            })?;
        let arm = match (blinded, s.arm) {
            (false, Some(a)) => a.to_string(),
            _ => String::new(),
        };
        let enroll = unit.from_years(s.enroll_time).to_string();
        for &t in &s.event_times {
            w.write_record([
                s.id.as_str(),
                &arm,
                &enroll,
                &unit.from_years(t).to_string(),
                "1",
            ])
            .map_err(csv_err)?;
        }
        w.write_record([
            s.id.as_str(),
            &arm,
            &enroll,
            &unit.from_years(cap).to_string(),
            "0",
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
