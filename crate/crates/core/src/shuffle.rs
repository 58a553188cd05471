//! Randomization strategies and the shuffle test.
//!
//! Three ways of destroying one association while keeping the marginal
//! distributions: permuting each actor's inter-event gaps, permuting event
//! attributes inside sessions, and permuting a single column. The shuffle
//! test applies one of them repeatedly and checks whether the aggregate trend
//! survives while the disaggregated trends vanish.
//!
//! Randomness comes from ChaCha8 seeded with a `u64`; permutations are
//! Fisher-Yates shuffles. Replicate `r` of a test seeded with `s` uses
//! [`replicate_seed`]`(s, r)`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{actor_time_order, Column, Dataset, Role};
use crate::detect::{analyze_pair, DetectorConfig, SimpsonsPairReport, Verdict};
use crate::error::{Error, Result};
use crate::session::{is_session_feature, sessionize, SessionizedDataset, DEFAULT_TIMEOUT};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `r`: `splitmix64(seed ^ splitmix64(r))`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    splitmix64(seed ^ splitmix64(r as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    Global,
    PerActor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShuffleStrategy {
    IntervalShuffle,
    WithinSessionShuffle,
    AttributeShuffle { attribute: String, scope: Scope },
}

/// Row groups per actor, in actor order, each group time-ascending.
fn actor_streams(d: &Dataset) -> Result<Vec<Vec<usize>>> {
    let order = actor_time_order(d)?;
    let actors = d.actor_ids()?;
    let mut streams: Vec<Vec<usize>> = Vec::new();
    for (i, &row) in order.iter().enumerate() {
        if i == 0 || actors[row] != actors[order[i - 1]] {
            streams.push(Vec::new());
        }
        streams.last_mut().expect("stream").push(row);
    }
    Ok(streams)
}

/// Permutes every actor's inter-event gaps and rebuilds the timestamps from
/// the actor's first timestamp. Rows stay where they are and keep all other
/// values; only the timestamp column changes.
///
/// The gap multiset is preserved exactly when timestamps are whole numbers
/// (below 2^53), and up to floating-point rounding otherwise.
pub fn shuffle_intervals(d: &Dataset, seed: u64) -> Result<Dataset> {
    let ts_index = d
        .role_index(Role::Timestamp)
        .ok_or(Error::MissingRole(Role::Timestamp))?;
    let streams = actor_streams(d)?;
    let times = d.timestamps()?;
    let mut out = times.to_vec();
    let mut rng = rng(seed);
    for rows in streams {
        let mut gaps: Vec<f64> = rows.windows(2).map(|w| times[w[1]] - times[w[0]]).collect();
        gaps.shuffle(&mut rng);
        let mut t = times[rows[0]];
        for (row, gap) in rows[1..].iter().zip(gaps) {
            t += gap;
            out[*row] = t;
        }
    }
    Ok(d.replace_values(ts_index, Column::Numeric(out)))
}

/// Columns whose values travel together as an event's attribute tuple:
/// every covariate except the session features, plus the outcome.
fn attribute_columns(d: &Dataset) -> Vec<usize> {
    d.schema()
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            (s.role == Role::Covariate && !is_session_feature(&s.name)) || s.role == Role::Outcome
        })
        .map(|(i, _)| i)
        .collect()
}

fn apply_permutation(d: &Dataset, columns: &[usize], perm: &[usize]) -> Dataset {
    let mut out = d.clone();
    for &c in columns {
        out = out.replace_values(c, d.columns()[c].take(perm));
    }
    out
}

/// Permutes the attribute tuples (covariates and outcome) among the rows of
/// each session. Timestamps, actors and session features stay fixed.
pub fn shuffle_within_sessions(sd: &SessionizedDataset, seed: u64) -> Result<Dataset> {
    let mut perm: Vec<usize> = (0..sd.data.n_rows()).collect();
    let mut rng = rng(seed);
    for session in &sd.sessions {
        let mut sources = session.row_indices.clone();
        sources.shuffle(&mut rng);
        for (&target, source) in session.row_indices.iter().zip(sources) {
            perm[target] = source;
        }
    }
    Ok(apply_permutation(
        &sd.data,
        &attribute_columns(&sd.data),
        &perm,
    ))
}

/// Permutes one covariate column over all rows or within each actor's rows.
pub fn shuffle_attribute(d: &Dataset, attribute: &str, scope: Scope, seed: u64) -> Result<Dataset> {
    let index = d
        .index_of(attribute)
        .ok_or_else(|| Error::UnknownVariable(attribute.to_string()))?;
    if d.schema()[index].role != Role::Covariate {
        return Err(Error::WrongVariable {
            name: attribute.to_string(),
            reason: format!(
                "is the {} variable, not a covariate",
                d.schema()[index].role
            ),
        });
    }
    let mut rng = rng(seed);
    let mut perm: Vec<usize> = (0..d.n_rows()).collect();
    match scope {
        Scope::Global => perm.shuffle(&mut rng),
        Scope::PerActor => {
            let actors = d.actor_ids()?;
            let mut by_actor: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (row, a) in actors.iter().enumerate() {
                by_actor.entry(a).or_default().push(row);
            }
            for rows in by_actor.values() {
                let mut sources = rows.clone();
                sources.shuffle(&mut rng);
                for (&target, source) in rows.iter().zip(sources) {
                    perm[target] = source;
                }
            }
        }
    }
    Ok(apply_permutation(d, &[index], &perm))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShuffleTestOptions {
    pub replicates: usize,
    pub seed: u64,
    /// Sessionization timeout in seconds, used whenever sessions are needed.
    pub timeout: f64,
    pub pi_persist: f64,
    pub pi_disappear: f64,
}

impl Default for ShuffleTestOptions {
    fn default() -> Self {
        Self {
            replicates: 50,
            seed: 0,
            timeout: DEFAULT_TIMEOUT,
            pi_persist: 0.9,
            pi_disappear: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShuffleVerdict {
    ParadoxIndicated,
    NotIndicated,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateSummary {
    pub replicate: usize,
    pub seed: u64,
    pub aggregate_slope: Option<f64>,
    pub aggregate_p_value: Option<f64>,
    /// Aggregate trend significant with the original sign.
    pub aggregate_persists: bool,
    pub opposite_mass: f64,
    pub insignificant_mass: f64,
    pub same_mass: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShuffleReport {
    pub strategy: ShuffleStrategy,
    pub replicates: usize,
    pub seed: u64,
    pub timeout: f64,
    pub pi_persist: f64,
    pub pi_disappear: f64,
    pub original: SimpsonsPairReport,
    pub aggregate_persistence: f64,
    pub mean_disappearance_mass: f64,
    pub verdict: ShuffleVerdict,
    pub per_replicate: Vec<ReplicateSummary>,
}

impl ShuffleReport {
    /// Fraction of replicates whose aggregate trend is significant in either
    /// direction.
    pub fn aggregate_significance_rate(&self) -> f64 {
        let alpha = self.original.config.alpha;
        let hits = self
            .per_replicate
            .iter()
            .filter(|r| r.aggregate_p_value.is_some_and(|p| p < alpha))
            .count();
        hits as f64 / self.per_replicate.len() as f64
    }
}

/// Maps the two replicate statistics to a verdict: the paradox is indicated
/// when the aggregate trend persists and the subgroup trends disappear; a
/// trend that does not persist under shuffling is not a paradox artifact;
/// a persisting trend whose subgroup trends also persist is inconclusive.
pub fn shuffle_verdict(
    persistence: f64,
    disappearance: f64,
    opts: &ShuffleTestOptions,
) -> ShuffleVerdict {
    let persists = persistence >= opts.pi_persist;
    let disappears = disappearance >= opts.pi_disappear;
    match (persists, disappears) {
        (true, true) => ShuffleVerdict::ParadoxIndicated,
        (false, _) => ShuffleVerdict::NotIndicated,
        (true, false) => ShuffleVerdict::Inconclusive,
    }
}

fn needs_roles(d: &Dataset, what: &str) -> Result<()> {
    for role in [Role::Actor, Role::Timestamp] {
        if d.role_index(role).is_none() {
            return Err(Error::StrategyMismatch(format!(
                "{what} needs a {role} variable"
            )));
        }
    }
    Ok(())
}

/// Runs `opts.replicates` randomizations of `d` and compares the pair's
/// trends with those of the original data.
///
/// When `x` or `z` names a session feature the data is sessionized with
/// `opts.timeout` first, and again after every interval shuffle, since moving
/// the gaps moves the session boundaries.
pub fn shuffle_test(
    d: &Dataset,
    x_name: &str,
    z_name: &str,
    strategy: &ShuffleStrategy,
    opts: &ShuffleTestOptions,
    config: &DetectorConfig,
) -> Result<ShuffleReport> {
    if opts.replicates < 1 {
        return Err(Error::InvalidArgument(
            "at least one replicate is required".into(),
        ));
    }
    for (name, pi) in [
        ("pi_persist", opts.pi_persist),
        ("pi_disappear", opts.pi_disappear),
    ] {
        if !(0.0..=1.0).contains(&pi) {
            return Err(Error::InvalidArgument(format!(
                "{name} must lie in [0, 1], got {pi}"
            )));
        }
    }
    config.validate()?;

    let session_pair = is_session_feature(x_name) || is_session_feature(z_name);
    let sessionizable =
        d.role_index(Role::Actor).is_some() && d.role_index(Role::Timestamp).is_some();
    match strategy {
        ShuffleStrategy::IntervalShuffle => needs_roles(d, "interval shuffling")?,
        ShuffleStrategy::WithinSessionShuffle => needs_roles(d, "within-session shuffling")?,
        ShuffleStrategy::AttributeShuffle { scope, .. } => {
            if *scope == Scope::PerActor && d.role_index(Role::Actor).is_none() {
                return Err(Error::StrategyMismatch(
                    "per-actor attribute shuffling needs an actor variable".into(),
                ));
            }
        }
    }

    let sessions =
        if sessionizable && (session_pair || *strategy == ShuffleStrategy::WithinSessionShuffle) {
            Some(sessionize(d, opts.timeout)?)
        } else {
            None
        };
    let base = sessions.as_ref().map_or(d, |s| &s.data);

    if let ShuffleStrategy::AttributeShuffle { attribute, .. } = strategy {
        let spec = base.spec(attribute)?;
        if spec.role != Role::Covariate {
            return Err(Error::StrategyMismatch(format!(
                "\"{attribute}\" is not a covariate"
            )));
        }
    }

    let original = analyze_pair(base, x_name, z_name, config)?;
    let original_sign = match (&original.verdict, &original.aggregate) {
        (Verdict::InsufficientData, _) | (_, None) => {
            return Err(Error::InsufficientData(
                original
                    .diagnostic
                    .clone()
                    .unwrap_or_else(|| "pair cannot be analyzed".into()),
            ))
        }
        (_, Some(fit)) => fit.sign(),
    };

    let per_replicate = (0..opts.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(opts.seed, r);
            let shuffled = match strategy {
                ShuffleStrategy::IntervalShuffle => {
                    let moved = shuffle_intervals(base, seed)?;
                    if session_pair {
                        sessionize(&moved, opts.timeout)?.data
                    } else {
                        moved
                    }
                }
                ShuffleStrategy::WithinSessionShuffle => shuffle_within_sessions(
                    sessions.as_ref().expect("sessionized for this strategy"),
                    seed,
                )?,
                ShuffleStrategy::AttributeShuffle { attribute, scope } => {
                    shuffle_attribute(base, attribute, *scope, seed)?
                }
            };
            let report = analyze_pair(&shuffled, x_name, z_name, config)?;
            let aggregate = report.aggregate.as_ref();
            Ok(ReplicateSummary {
                replicate: r,
                seed,
                aggregate_slope: aggregate.map(|f| f.slope),
                aggregate_p_value: aggregate.map(|f| f.p_value),
                aggregate_persists: aggregate.is_some_and(|f| {
                    f.is_significant(config.alpha)
                        && f.sign() == original_sign
                        && original_sign != 0
                }),
                opposite_mass: report.opposite_mass,
                insignificant_mass: report.insignificant_mass,
                same_mass: report.same_mass,
                verdict: report.verdict,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let r = per_replicate.len() as f64;
    let aggregate_persistence = per_replicate
        .iter()
        .filter(|s| s.aggregate_persists)
        .count() as f64
        / r;
    let mean_disappearance_mass = per_replicate
        .iter()
        .map(|s| s.insignificant_mass)
        .sum::<f64>()
        / r;

    Ok(ShuffleReport {
        strategy: strategy.clone(),
        replicates: opts.replicates,
        seed: opts.seed,
        timeout: opts.timeout,
        pi_persist: opts.pi_persist,
        pi_disappear: opts.pi_disappear,
        original,
        aggregate_persistence,
        mean_disappearance_mass,
        verdict: shuffle_verdict(aggregate_persistence, mean_disappearance_mass, opts),
        per_replicate,
    })
}
