//! Seedable generators for heterogeneous populations with a known answer.
//!
//! Each generator returns the dataset together with a [`GroundTruth`] naming
//! the `(x, z)` pair to analyze and the verdict the detector should reach.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Column, Dataset, Kind, VariableSpec};
use crate::detect::{SubgroupTest, Verdict};
use crate::error::{Error, Result};
use crate::session::{SESSION_INDEX, SESSION_LENGTH};
use crate::shuffle::rng;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub generator: String,
    pub seed: u64,
    pub x_name: String,
    pub z_name: String,
    pub expected_verdict: Verdict,
    /// Subgroup test under which `expected_verdict` holds.
    pub subgroup_test: SubgroupTest,
    pub params: serde_json::Value,
    /// Generating subgroup of every row.
    pub hidden_labels: Vec<String>,
}

fn padded_ids(prefix: &str, n: usize) -> impl Fn(usize) -> String + '_ {
    let width = n.to_string().len();
    move |i| format!("{prefix}-{i:0width$}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissionCell {
    pub department: String,
    /// 0 or 1; the trend variable.
    pub group: u8,
    pub applicants: usize,
    pub accepted: usize,
}

impl AdmissionCell {
    pub fn new(department: &str, group: u8, applicants: usize, accepted: usize) -> Self {
        Self {
            department: department.to_string(),
            group,
            applicants,
            accepted,
        }
    }
}

/// Two departments in which group 1 has the higher acceptance rate, while
/// group 1 has the lower rate overall (34/105 against 71/105).
pub fn default_admission_cells() -> Vec<AdmissionCell> {
    vec![
        AdmissionCell::new("A", 1, 100, 30),
        AdmissionCell::new("A", 0, 5, 1),
        AdmissionCell::new("B", 1, 5, 4),
        AdmissionCell::new("B", 0, 100, 70),
    ]
}

pub const ADMISSIONS_X: &str = "applicant_group";
pub const ADMISSIONS_Z: &str = "department";

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Verdict from exact proportions, mirroring the detector's sign test with
/// the default thresholds.
fn admissions_verdict(cells: &[AdmissionCell]) -> Verdict {
    let rate = |cells: &[&AdmissionCell], group: u8| -> Option<(f64, usize, usize)> {
        let (n, k) = cells
            .iter()
            .filter(|c| c.group == group)
            .fold((0, 0), |(n, k), c| (n + c.applicants, k + c.accepted));
        (n > 0).then(|| (k as f64 / n as f64, n, k))
    };
    let all: Vec<&AdmissionCell> = cells.iter().collect();
    let (Some((r1, n1, k1)), Some((r0, n0, k0))) = (rate(&all, 1), rate(&all, 0)) else {
        return Verdict::InsufficientData;
    };
    let (n, k) = (n1 + n0, k1 + k0);
    if k == 0 || k == n {
        return Verdict::InsufficientData;
    }
    let aggregate = sign(r1 - r0);
    if aggregate == 0 {
        return Verdict::NoAggregateTrend;
    }

    let mut departments: Vec<&str> = cells.iter().map(|c| c.department.as_str()).collect();
    departments.sort_unstable();
    departments.dedup();
    let (mut opposite, mut flat, mut same, mut total) = (0usize, 0usize, 0usize, 0usize);
    for dept in departments {
        let rows: Vec<&AdmissionCell> = cells.iter().filter(|c| c.department == dept).collect();
        let (Some((d1, m1, a1)), Some((d0, m0, a0))) = (rate(&rows, 1), rate(&rows, 0)) else {
            continue;
        };
        let (m, a) = (m1 + m0, a1 + a0);
        if a == 0 || a == m {
            continue;
        }
        total += m;
        match sign(d1 - d0) {
            0 => flat += m,
            s if s == aggregate => same += m,
            _ => opposite += m,
        }
    }
    if total == 0 {
        return Verdict::InsufficientData;
    }
    let share = |m: usize| m as f64 / total as f64;
    if share(opposite) >= 0.8 {
        Verdict::Reversal
    } else if share(flat) >= 0.8 {
        Verdict::Disappearance
    } else if share(same) >= 0.8 {
        Verdict::Consistent
    } else {
        Verdict::Mixed
    }
}

/// One row per applicant with exactly the requested cell frequencies. The
/// seed only shuffles the row order; timestamps are one minute apart.
pub fn gen_admissions(cells: &[AdmissionCell], seed: u64) -> Result<(Dataset, GroundTruth)> {
    if cells.is_empty() {
        return Err(Error::InvalidArgument("no admission cells".into()));
    }
    for (i, c) in cells.iter().enumerate() {
        if c.group > 1 {
            return Err(Error::InvalidArgument(format!(
                "cell {}: group must be 0 or 1",
                i + 1
            )));
        }
        if c.applicants == 0 || c.accepted > c.applicants {
            return Err(Error::InvalidArgument(format!(
                "cell {}: need 0 <= accepted <= applicants and applicants > 0, got {}/{}",
                i + 1,
                c.accepted,
                c.applicants
            )));
        }
        if cells[..i]
            .iter()
            .any(|o| o.department == c.department && o.group == c.group)
        {
            return Err(Error::InvalidArgument(format!(
                "duplicate cell for department {} group {}",
                c.department, c.group
            )));
        }
    }

    let mut rows: Vec<(&str, u8, bool)> = cells
        .iter()
        .flat_map(|c| {
            (0..c.applicants).map(move |i| (c.department.as_str(), c.group, i < c.accepted))
        })
        .collect();
    rows.shuffle(&mut rng(seed));

    let id = padded_ids("applicant", rows.len());
    let dataset = Dataset::new(
        vec![
            VariableSpec::actor("applicant_id"),
            VariableSpec::timestamp("t"),
            VariableSpec::covariate(ADMISSIONS_X, Kind::Binary),
            VariableSpec::covariate(ADMISSIONS_Z, Kind::Categorical),
            VariableSpec::outcome("accepted", Kind::Binary),
        ],
        vec![
            Column::Text((1..=rows.len()).map(&id).collect()),
            Column::Numeric((0..rows.len()).map(|i| i as f64 * 60.0).collect()),
            Column::Numeric(rows.iter().map(|r| f64::from(r.1)).collect()),
            Column::Text(rows.iter().map(|r| r.0.to_string()).collect()),
            Column::Numeric(rows.iter().map(|r| if r.2 { 1.0 } else { 0.0 }).collect()),
        ],
    )?;
    let truth = GroundTruth {
        generator: "admissions".into(),
        seed,
        x_name: ADMISSIONS_X.into(),
        z_name: ADMISSIONS_Z.into(),
        expected_verdict: admissions_verdict(cells),
        subgroup_test: SubgroupTest::Sign,
        params: serde_json::json!({ "cells": cells }),
        hidden_labels: rows.iter().map(|r| r.0.to_string()).collect(),
    };
    Ok((dataset, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivorParams {
    pub n_actors: usize,
    pub frac_incorrigible: f64,
    pub p_reoffend: f64,
    pub p_reformed: f64,
    pub periods: usize,
    /// Add the generating subgroup as the categorical covariate `group`.
    /// In real recidivism data this label is unobservable.
    pub expose_subgroup: bool,
}

impl Default for SurvivorParams {
    fn default() -> Self {
        Self {
            n_actors: 10_000,
            frac_incorrigible: 0.5,
            p_reoffend: 0.9,
            p_reformed: 0.0,
            periods: 10,
            expose_subgroup: true,
        }
    }
}

pub const SURVIVOR_X: &str = "period";
pub const SURVIVOR_Z: &str = "group";
const PERIOD_SECONDS: f64 = 30.0 * 86_400.0;

/// Released offenders observed period by period. Each actor reoffends with a
/// constant per-period probability set by its hidden type and leaves the data
/// after reoffending, so the aggregate rate falls over time although no
/// individual's rate changes.
pub fn gen_survivor(params: &SurvivorParams, seed: u64) -> Result<(Dataset, GroundTruth)> {
    let p = params;
    if p.periods < 2 {
        return Err(Error::InvalidArgument("periods must be at least 2".into()));
    }
    if p.n_actors == 0 {
        return Err(Error::InvalidArgument("n_actors must be positive".into()));
    }
    for (name, v) in [
        ("frac_incorrigible", p.frac_incorrigible),
        ("p_reoffend", p.p_reoffend),
        ("p_reformed", p.p_reformed),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!(
                "{name} must lie in [0, 1], got {v}"
            )));
        }
    }

    let mut rng = rng(seed);
    let id = padded_ids("inmate", p.n_actors);
    let (mut actors, mut ts, mut period, mut labels, mut y) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for a in 1..=p.n_actors {
        let incorrigible = rng.gen::<f64>() < p.frac_incorrigible;
        let (label, rate) = if incorrigible {
            ("incorrigible", p.p_reoffend)
        } else {
            ("reformed", p.p_reformed)
        };
        let actor = id(a);
        for t in 1..=p.periods {
            let event = rng.gen::<f64>() < rate;
            actors.push(actor.clone());
            ts.push(t as f64 * PERIOD_SECONDS);
            period.push(t as f64);
            labels.push(label.to_string());
            y.push(if event { 1.0 } else { 0.0 });
            if event {
                break;
            }
        }
    }

    let mut schema = vec![
        VariableSpec::actor("inmate_id"),
        VariableSpec::timestamp("t"),
        VariableSpec::covariate(SURVIVOR_X, Kind::Count),
    ];
    let mut columns = vec![
        Column::Text(actors),
        Column::Numeric(ts),
        Column::Numeric(period),
    ];
    if p.expose_subgroup {
        schema.push(VariableSpec::covariate(SURVIVOR_Z, Kind::Categorical));
        columns.push(Column::Text(labels.clone()));
    }
    schema.push(VariableSpec::outcome("reoffended", Kind::Binary));
    columns.push(Column::Numeric(y));
    let dataset = Dataset::new(schema, columns)?;

    let present: Vec<f64> = if p.frac_incorrigible == 0.0 {
        vec![p.p_reformed]
    } else if p.frac_incorrigible == 1.0 {
        vec![p.p_reoffend]
    } else {
        vec![p.p_reoffend, p.p_reformed]
    };
    let expected_verdict = if present.iter().all(|&r| r == 0.0) || present.iter().all(|&r| r == 1.0)
    {
        Verdict::InsufficientData
    } else if present.len() == 1 || p.p_reoffend == p.p_reformed {
        Verdict::NoAggregateTrend
    } else {
        Verdict::Disappearance
    };

    let truth = GroundTruth {
        generator: "survivor".into(),
        seed,
        x_name: SURVIVOR_X.into(),
        z_name: SURVIVOR_Z.into(),
        expected_verdict,
        subgroup_test: SubgroupTest::Wald,
        params: serde_json::to_value(p).expect("plain struct"),
        hidden_labels: labels,
    };
    Ok((dataset, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionParams {
    pub n_actors: usize,
    pub max_len: usize,
    /// Sessions per actor; all of an actor's sessions share its length.
    pub sessions_per_actor: usize,
    pub base_intercept: f64,
    pub base_per_len: f64,
    pub decline: f64,
    /// Upper bound of within-session gaps, in minutes.
    pub gap_minutes: f64,
}

impl Default for SessionParams {
    fn default() -> Self {
        Self {
            n_actors: 10_000,
            max_len: 5,
            sessions_per_actor: 8,
            base_intercept: 0.25,
            base_per_len: 0.07,
            decline: 0.03,
            gap_minutes: 10.0,
        }
    }
}

impl SessionParams {
    /// Acceptance probability of the `index`-th answer in a session of
    /// `length` answers.
    pub fn accept_probability(&self, index: usize, length: usize) -> f64 {
        self.base_intercept + self.base_per_len * length as f64 - self.decline * index as f64
    }
}

/// Shortest between-session gap, in seconds.
pub const SESSION_BREAK_MIN: f64 = 4.0 * 3600.0;
const SESSION_BREAK_MAX: f64 = 24.0 * 3600.0;

/// Question-answering activity in which later answers in a session are less
/// likely to be accepted, while actors who write longer sessions write better
/// answers throughout.
///
/// Every actor draws one session length uniformly from `1..=max_len` and
/// writes `sessions_per_actor` sessions of that length. Within-session gaps
/// are whole seconds in `[gap_minutes/2, gap_minutes]` minutes and gaps
/// between sessions lie in `[4h, 24h]`, so any timeout in
/// `[gap_minutes, 240)` minutes recovers the sessions exactly.
pub fn gen_sessions(params: &SessionParams, seed: u64) -> Result<(Dataset, GroundTruth)> {
    let p = params;
    if p.n_actors == 0 || p.max_len == 0 || p.sessions_per_actor == 0 {
        return Err(Error::InvalidArgument(
            "n_actors, max_len and sessions_per_actor must be positive".into(),
        ));
    }
    if !(p.gap_minutes > 0.0 && p.gap_minutes * 60.0 < SESSION_BREAK_MIN) {
        return Err(Error::InvalidArgument(format!(
            "gap_minutes must lie in (0, 240), got {}",
            p.gap_minutes
        )));
    }
    for length in 1..=p.max_len {
        for index in 1..=length {
            let q = p.accept_probability(index, length);
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "acceptance probability {q} at index {index}, length {length} is outside (0, 1)"
                )));
            }
        }
    }

    let mut rng = rng(seed);
    let id = padded_ids("user", p.n_actors);
    let gap_hi = (p.gap_minutes * 60.0).floor().max(1.0);
    let gap_lo = (p.gap_minutes * 30.0).floor().max(1.0);
    let (mut actors, mut ts, mut y, mut labels) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for a in 1..=p.n_actors {
        let length = rng.gen_range(1..=p.max_len);
        let actor = id(a);
        let label = format!("L={length}");
        let mut t = rng.gen_range(0.0..86_400.0f64).floor();
        for s in 0..p.sessions_per_actor {
            if s > 0 {
                t += rng.gen_range(SESSION_BREAK_MIN..=SESSION_BREAK_MAX).floor();
            }
            for index in 1..=length {
                if index > 1 {
                    t += rng.gen_range(gap_lo..=gap_hi).floor();
                }
                let accepted = rng.gen::<f64>() < p.accept_probability(index, length);
                actors.push(actor.clone());
                ts.push(t);
                y.push(if accepted { 1.0 } else { 0.0 });
                labels.push(label.clone());
            }
        }
    }

    let dataset = Dataset::new(
        vec![
            VariableSpec::actor("user"),
            VariableSpec::timestamp("ts"),
            VariableSpec::outcome("accepted", Kind::Binary),
        ],
        vec![
            Column::Text(actors),
            Column::Numeric(ts),
            Column::Numeric(y),
        ],
    )?;

    // Averaging the probability over lengths >= t (uniform) gives
    // base_intercept + base_per_len * (t + max_len) / 2 - decline * t.
    let aggregate = sign(p.base_per_len / 2.0 - p.decline);
    let within = sign(-p.decline);
    let expected_verdict = if p.max_len < 2 {
        Verdict::InsufficientData
    } else if aggregate == 0 {
        Verdict::NoAggregateTrend
    } else if within == 0 {
        Verdict::Disappearance
    } else if within == aggregate {
        Verdict::Consistent
    } else {
        Verdict::Reversal
    };

    let truth = GroundTruth {
        generator: "sessions".into(),
        seed,
        x_name: SESSION_INDEX.into(),
        z_name: SESSION_LENGTH.into(),
        expected_verdict,
        subgroup_test: SubgroupTest::Wald,
        params: serde_json::to_value(p).expect("plain struct"),
        hidden_labels: labels,
    };
    Ok((dataset, truth))
}
