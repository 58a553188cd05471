use serde::Serialize;
use simpair::{ShuffleReport, SimpsonsPairReport};

pub const SCHEMA_VERSION: u32 = 1;

/// Top-level JSON document written by `detect` and `shuffle-test`. Field
/// order here is the key order on disk.
#[derive(Debug, Serialize)]
pub struct RunReport<I: Serialize> {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub invocation: I,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<SimpsonsPairReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shuffle: Option<ShuffleReport>,
    pub skipped_subgroups: Vec<SkippedEntry>,
    /// Only present with `--timing`; a timed report is not reproducible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_seconds: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct SkippedEntry {
    pub x_name: String,
    pub z_name: String,
    pub label: String,
    pub n: usize,
    pub reason: String,
}

impl<I: Serialize> RunReport<I> {
    pub fn new(command: &'static str, invocation: I) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: "simpair",
            version: env!("CARGO_PKG_VERSION"),
            command,
            invocation,
            pairs: None,
            shuffle: None,
            skipped_subgroups: Vec::new(),
            duration_seconds: None,
        }
    }

    pub fn collect_skipped<'a>(
        &mut self,
        reports: impl IntoIterator<Item = &'a SimpsonsPairReport>,
    ) {
        for r in reports {
            self.skipped_subgroups
                .extend(r.skipped.iter().map(|s| SkippedEntry {
                    x_name: r.x_name.clone(),
                    z_name: r.z_name.clone(),
                    label: s.label.clone(),
                    n: s.n,
                    reason: s.reason.clone(),
                }));
        }
    }
}
