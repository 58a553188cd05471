//! Detection of trend reversals between aggregate and disaggregated data.

pub mod dataset;
pub mod detect;
pub mod error;
pub mod json;
pub mod session;
pub mod shuffle;
pub mod synth;
pub mod trend;

pub use dataset::{load_csv, read_csv, Column, Dataset, Kind, Role, Value, VariableSpec};
pub use detect::{
    analyze_pair, scan, trend_curves, DetectorConfig, SimpsonsPairReport, SubgroupTest, Verdict,
};
pub use error::{Error, Result};
pub use session::{sessionize, SessionizedDataset};
pub use shuffle::{
    shuffle_test, ShuffleReport, ShuffleStrategy, ShuffleTestOptions, ShuffleVerdict,
};
pub use trend::{fit_linear, fit_logistic, Model, TrendFit};
