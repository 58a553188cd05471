//! Simpson's pair detection.
//!
//! For a trend variable `x` and a conditioning variable `z`, the outcome is
//! fitted against `x` over all rows and again inside every subgroup of `z`.
//! Subgroup fits are weighted by size and sorted into three masses (opposite
//! sign, not significant, same sign) that drive the verdict.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Column, Dataset, Kind, Role};
use crate::error::{Error, Result};
use crate::trend::{self, distinct_bins, quantile_bins, Model, TrendFit};

/// How a subgroup slope is judged against the aggregate one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgroupTest {
    /// A subgroup trend counts only when its Wald p-value is below `alpha`;
    /// otherwise it is "insignificant".
    #[default]
    Wald,
    /// Only the sign of the subgroup slope matters; a slope of exactly zero is
    /// "insignificant". Meant for noise-free population tables, where sampling
    /// error does not exist.
    Sign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub k_bins: usize,
    pub min_subgroup_n: usize,
    pub tau_reversal: f64,
    pub tau_disappear: f64,
    #[serde(default)]
    pub subgroup_test: SubgroupTest,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            k_bins: 5,
            min_subgroup_n: 30,
            tau_reversal: 0.8,
            tau_disappear: 0.8,
            subgroup_test: SubgroupTest::Wald,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(what));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.k_bins < 1 {
            return bad("k_bins must be at least 1".into());
        }
        for (name, tau) in [
            ("tau_reversal", self.tau_reversal),
            ("tau_disappear", self.tau_disappear),
        ] {
            if !(tau > 0.0 && tau <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {tau}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Reversal,
    Disappearance,
    Consistent,
    Mixed,
    NoAggregateTrend,
    InsufficientData,
}

impl Verdict {
    /// Reversal or disappearance: the aggregate trend does not survive
    /// disaggregation.
    pub fn is_paradox(self) -> bool {
        matches!(self, Verdict::Reversal | Verdict::Disappearance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Subgroup {
    pub label: String,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedSubgroup {
    pub label: String,
    pub n: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Disaggregation {
    pub subgroups: Vec<Subgroup>,
    pub skipped: Vec<SkippedSubgroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubgroupTrend {
    pub bin_label: String,
    pub n: usize,
    pub weight: f64,
    pub fit: TrendFit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimpsonsPairReport {
    pub x_name: String,
    pub z_name: String,
    pub outcome_name: String,
    pub model: Model,
    pub aggregate: Option<TrendFit>,
    pub subgroups: Vec<SubgroupTrend>,
    pub skipped: Vec<SkippedSubgroup>,
    pub opposite_mass: f64,
    pub insignificant_mass: f64,
    pub same_mass: f64,
    pub verdict: Verdict,
    pub score: f64,
    pub config: DetectorConfig,
    /// p-values are per-fit and not corrected for multiple comparisons.
    pub p_values_adjusted: bool,
    pub diagnostic: Option<String>,
}

/// Partitions the rows by `z`.
///
/// Categorical variables are split by exact value. Count and binary variables
/// are split by exact value when they take at most `k_bins` distinct values,
/// and otherwise (like continuous ones) into quantile bins. Subgroups below
/// `min_subgroup_n` rows are reported as skipped.
pub fn disaggregate(d: &Dataset, z_name: &str, config: &DetectorConfig) -> Result<Disaggregation> {
    config.validate()?;
    let spec = d.spec(z_name)?;
    if spec.role != Role::Covariate {
        return Err(Error::WrongVariable {
            name: z_name.to_string(),
            reason: format!("is the {} variable, not a covariate", spec.role),
        });
    }
    let column = d.column(z_name)?;
    let groups: Vec<(String, Vec<usize>)> = match column {
        Column::Text(values) => {
            let mut by_value: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (row, v) in values.iter().enumerate() {
                by_value.entry(v).or_default().push(row);
            }
            by_value
                .into_iter()
                .map(|(k, rows)| (k.to_string(), rows))
                .collect()
        }
        Column::Numeric(values) => {
            if values.is_empty() {
                Vec::new()
            } else {
                let exact = distinct_bins(values)?;
                let binning = if matches!(spec.kind, Kind::Count | Kind::Binary)
                    && exact.k_effective <= config.k_bins
                {
                    exact
                } else {
                    quantile_bins(values, config.k_bins)?
                };
                binning
                    .labels
                    .iter()
                    .cloned()
                    .zip(binning.members())
                    .filter(|(_, rows)| !rows.is_empty())
                    .collect()
            }
        }
    };

    let mut out = Disaggregation::default();
    for (label, rows) in groups {
        if rows.len() < config.min_subgroup_n {
            out.skipped.push(SkippedSubgroup {
                n: rows.len(),
                reason: format!("fewer than {} rows", config.min_subgroup_n),
                label,
            });
        } else {
            out.subgroups.push(Subgroup { label, rows });
        }
    }
    if out.subgroups.is_empty() {
        return Err(Error::NoQualifyingSubgroups(z_name.to_string()));
    }
    Ok(out)
}

fn check_trend_variable(d: &Dataset, name: &str) -> Result<()> {
    let spec = d.spec(name)?;
    if spec.role != Role::Covariate {
        return Err(Error::WrongVariable {
            name: name.to_string(),
            reason: format!("is the {} variable, not a covariate", spec.role),
        });
    }
    if spec.kind == Kind::Categorical {
        return Err(Error::WrongVariable {
            name: name.to_string(),
            reason: "a categorical variable has no trend".into(),
        });
    }
    Ok(())
}

fn gather(values: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&r| values[r]).collect()
}

/// Fits the aggregate and per-subgroup trends of the outcome against `x`,
/// conditioning on `z`, and classifies the pair.
///
/// Unknown or unusable variable names and invalid configurations are errors.
/// Data that cannot support the fits yields a report with verdict
/// [`Verdict::InsufficientData`] and a diagnostic instead. Subgroups whose own
/// fit is impossible (for instance `x` constant inside the group) are moved to
/// `skipped` and do not count towards the masses.
pub fn analyze_pair(
    d: &Dataset,
    x_name: &str,
    z_name: &str,
    config: &DetectorConfig,
) -> Result<SimpsonsPairReport> {
    config.validate()?;
    if x_name == z_name {
        return Err(Error::InvalidArgument(format!(
            "trend and conditioning variable are both \"{x_name}\""
        )));
    }
    check_trend_variable(d, x_name)?;
    let z_spec = d.spec(z_name)?;
    if z_spec.role != Role::Covariate {
        return Err(Error::WrongVariable {
            name: z_name.to_string(),
            reason: format!("is the {} variable, not a covariate", z_spec.role),
        });
    }

    let outcome = d.outcome_spec();
    let model = Model::for_outcome(outcome.kind);
    let xs = d.numeric(x_name)?;
    let ys = d.outcome_values();

    let mut report = SimpsonsPairReport {
        x_name: x_name.to_string(),
        z_name: z_name.to_string(),
        outcome_name: outcome.name.clone(),
        model,
        aggregate: None,
        subgroups: Vec::new(),
        skipped: Vec::new(),
        opposite_mass: 0.0,
        insignificant_mass: 0.0,
        same_mass: 0.0,
        verdict: Verdict::InsufficientData,
        score: 0.0,
        config: *config,
        p_values_adjusted: false,
        diagnostic: None,
    };

    let aggregate = match trend::fit(model, xs, ys) {
        Ok(f) => f,
        Err(e) => {
            report.diagnostic = Some(format!("aggregate fit: {e}"));
            return Ok(report);
        }
    };
    report.aggregate = Some(aggregate.clone());

    let groups = match disaggregate(d, z_name, config) {
        Ok(g) => g,
        Err(e @ Error::NoQualifyingSubgroups(_)) => {
            report.diagnostic = Some(e.to_string());
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    report.skipped = groups.skipped;

    let mut fitted = Vec::new();
    for g in groups.subgroups {
        match trend::fit(model, &gather(xs, &g.rows), &gather(ys, &g.rows)) {
            Ok(fit) => fitted.push((g.label, g.rows.len(), fit)),
            Err(e) => report.skipped.push(SkippedSubgroup {
                label: g.label,
                n: g.rows.len(),
                reason: e.to_string(),
            }),
        }
    }
    if fitted.is_empty() {
        report.diagnostic = Some("no subgroup supports a trend fit".into());
        return Ok(report);
    }

    let total: usize = fitted.iter().map(|(_, n, _)| n).sum();
    let agg_sign = aggregate.sign();
    let (mut opposite, mut insignificant, mut same) = (0.0, 0.0, 0.0);
    for (label, n, fit) in fitted {
        let weight = n as f64 / total as f64;
        let flat = match config.subgroup_test {
            SubgroupTest::Wald => !fit.is_significant(config.alpha),
            SubgroupTest::Sign => fit.sign() == 0,
        };
        if flat {
            insignificant += weight;
        } else if fit.sign() == agg_sign {
            same += weight;
        } else {
            opposite += weight;
        }
        report.subgroups.push(SubgroupTrend {
            bin_label: label,
            n,
            weight,
            fit,
        });
    }
    report.opposite_mass = opposite;
    report.insignificant_mass = insignificant;
    report.same_mass = same;

    report.verdict = if !aggregate.is_significant(config.alpha) {
        Verdict::NoAggregateTrend
    } else if opposite >= config.tau_reversal {
        Verdict::Reversal
    } else if insignificant >= config.tau_disappear {
        Verdict::Disappearance
    } else if same >= config.tau_reversal {
        Verdict::Consistent
    } else {
        Verdict::Mixed
    };
    report.score = if report.verdict == Verdict::NoAggregateTrend {
        0.0
    } else {
        opposite + 0.5 * insignificant
    };
    Ok(report)
}

/// Analyzes every ordered pair `(x, z)` with `x != z`, best score first.
/// Ties fall back to `(x_name, z_name)` order, so the result does not depend
/// on evaluation order.
pub fn scan(
    d: &Dataset,
    x_candidates: &[String],
    z_candidates: &[String],
    config: &DetectorConfig,
) -> Result<Vec<SimpsonsPairReport>> {
    config.validate()?;
    if x_candidates.is_empty() || z_candidates.is_empty() {
        return Err(Error::InvalidArgument(
            "candidate lists must not be empty".into(),
        ));
    }
    for name in x_candidates {
        check_trend_variable(d, name)?;
    }
    for name in z_candidates {
        let spec = d.spec(name)?;
        if spec.role != Role::Covariate {
            return Err(Error::WrongVariable {
                name: name.clone(),
                reason: format!("is the {} variable, not a covariate", spec.role),
            });
        }
    }
    let pairs: Vec<(&String, &String)> = x_candidates
        .iter()
        .flat_map(|x| z_candidates.iter().map(move |z| (x, z)))
        .filter(|(x, z)| x != z)
        .collect();
    let mut reports = pairs
        .par_iter()
        .map(|(x, z)| analyze_pair(d, x, z, config))
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.x_name.cmp(&b.x_name))
            .then_with(|| a.z_name.cmp(&b.z_name))
    });
    Ok(reports)
}

/// One point of a plot-ready trend curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    /// `"aggregate"` or the subgroup label.
    pub group: String,
    pub x_bin: String,
    pub mean_outcome: f64,
    pub n: usize,
}

/// Mean outcome per `x` bin, over all rows and inside each subgroup of `z`.
/// `x` is binned by exact value when it has at most `max(k_bins, 10)`
/// distinct values, otherwise into `k_bins` quantile bins.
pub fn trend_curves(
    d: &Dataset,
    x_name: &str,
    z_name: &str,
    config: &DetectorConfig,
) -> Result<Vec<CurvePoint>> {
    check_trend_variable(d, x_name)?;
    let xs = d.numeric(x_name)?;
    let ys = d.outcome_values();
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let exact = distinct_bins(xs)?;
    let x_bins = if exact.k_effective <= config.k_bins.max(10) {
        exact
    } else {
        quantile_bins(xs, config.k_bins)?
    };

    let curve = |group: &str, rows: &[usize]| -> Vec<CurvePoint> {
        let mut sums = vec![(0.0, 0usize); x_bins.k_effective];
        for &r in rows {
            let slot = &mut sums[x_bins.assignment[r]];
            slot.0 += ys[r];
            slot.1 += 1;
        }
        sums.into_iter()
            .enumerate()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(bin, (sum, n))| CurvePoint {
                group: group.to_string(),
                x_bin: x_bins.labels[bin].clone(),
                mean_outcome: sum / n as f64,
                n,
            })
            .collect()
    };

    let all: Vec<usize> = (0..d.n_rows()).collect();
    let mut points = curve("aggregate", &all);
    let groups = disaggregate(d, z_name, config)?;
    for g in &groups.subgroups {
        points.extend(curve(&g.label, &g.rows));
    }
    Ok(points)
}
