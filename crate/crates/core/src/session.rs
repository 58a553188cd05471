//! Inactivity-timeout sessionization.
//!
//! Each actor's events, in time order, are cut into sessions wherever the gap
//! to the previous event is strictly greater than the timeout. A gap exactly
//! equal to the timeout keeps the session open.

use serde::Serialize;

use crate::dataset::{actor_time_order, Column, Dataset, Kind, VariableSpec};
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: f64 = 3600.0;

pub const SESSION_ID: &str = "session_id";
pub const SESSION_INDEX: &str = "session_index";
pub const SESSION_LENGTH: &str = "session_length";

/// Whether `name` is one of the columns derived by [`sessionize`].
pub fn is_session_feature(name: &str) -> bool {
    matches!(name, SESSION_ID | SESSION_INDEX | SESSION_LENGTH)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Session {
    pub id: u64,
    pub actor_id: String,
    pub start_ts: f64,
    pub end_ts: f64,
    /// Rows of [`SessionizedDataset::data`], time-ascending.
    pub row_indices: Vec<usize>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.row_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionizedDataset {
    /// Input rows sorted by `(actor, timestamp)` with `session_id`,
    /// `session_index` and `session_length` count covariates appended.
    pub data: Dataset,
    pub sessions: Vec<Session>,
    pub timeout: f64,
}

/// Splits every actor's stream into sessions. Rows come back sorted by
/// `(actor, timestamp)`; session ids are 1-based and ascend in that order.
/// Existing session columns are recomputed.
pub fn sessionize(d: &Dataset, timeout: f64) -> Result<SessionizedDataset> {
    if !(timeout.is_finite() && timeout > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "timeout must be positive and finite, got {timeout}"
        )));
    }
    let order = actor_time_order(d)?;
    let sorted = d.take(&order);
    let actors = sorted.actor_ids()?;
    let times = sorted.timestamps()?;

    let n = sorted.n_rows();
    let mut sessions: Vec<Session> = Vec::new();
    for row in 0..n {
        let continues =
            row > 0 && actors[row] == actors[row - 1] && times[row] - times[row - 1] <= timeout;
        if continues {
            let current = sessions.last_mut().expect("open session");
            current.end_ts = times[row];
            current.row_indices.push(row);
        } else {
            sessions.push(Session {
                id: sessions.len() as u64 + 1,
                actor_id: actors[row].clone(),
                start_ts: times[row],
                end_ts: times[row],
                row_indices: vec![row],
            });
        }
    }

    let mut ids = vec![0.0; n];
    let mut index = vec![0.0; n];
    let mut length = vec![0.0; n];
    for s in &sessions {
        for (pos, &row) in s.row_indices.iter().enumerate() {
            ids[row] = s.id as f64;
            index[row] = (pos + 1) as f64;
            length[row] = s.len() as f64;
        }
    }

    let data = sorted
        .with_column(
            VariableSpec::covariate(SESSION_ID, Kind::Count),
            Column::Numeric(ids),
        )?
        .with_column(
            VariableSpec::covariate(SESSION_INDEX, Kind::Count),
            Column::Numeric(index),
        )?
        .with_column(
            VariableSpec::covariate(SESSION_LENGTH, Kind::Count),
            Column::Numeric(length),
        )?;

    Ok(SessionizedDataset {
        data,
        sessions,
        timeout,
    })
}
