mod report;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use simpair::dataset::{format_number, infer_schema, read_header};
use simpair::session::{is_session_feature, SESSION_ID, SESSION_INDEX, SESSION_LENGTH};
use simpair::shuffle::Scope;
use simpair::synth::{self, AdmissionCell, SessionParams, SurvivorParams};
use simpair::{
    load_csv, scan, sessionize, shuffle_test, trend_curves, Column, Dataset, DetectorConfig, Error,
    Role, ShuffleStrategy, ShuffleTestOptions, ShuffleVerdict, SubgroupTest, VariableSpec,
};

use report::RunReport;

#[derive(Debug, Parser)]
#[command(
    name = "simpair",
    version,
    about = "Find trends that reverse or vanish inside subgroups"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split each actor's events into sessions and append session columns.
    Sessionize(SessionizeArgs),
    /// Scan (x, z) pairs for reversals and disappearances.
    Detect(DetectArgs),
    /// Check a pair against randomized copies of the data.
    ShuffleTest(ShuffleArgs),
    /// Write a synthetic dataset and its ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct SessionizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    actor: String,
    #[arg(long)]
    time: String,
    /// Largest gap, in seconds, that keeps two events in one session.
    #[arg(long, default_value_t = 3600.0)]
    timeout: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum TestArg {
    Wald,
    Sign,
}

#[derive(Debug, Args, Serialize)]
struct DetectorArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Quantile bins for numeric z variables.
    #[arg(long, default_value_t = 5)]
    bins: usize,
    /// Subgroups with fewer rows are skipped.
    #[arg(long, default_value_t = 30)]
    min_subgroup: usize,
    #[arg(long, default_value_t = 0.8)]
    tau_reversal: f64,
    #[arg(long, default_value_t = 0.8)]
    tau_disappear: f64,
    /// How subgroup slopes are judged: Wald significance or bare sign.
    #[arg(long, value_enum, default_value_t = TestArg::Wald)]
    subgroup_test: TestArg,
}

impl DetectorArgs {
    fn config(&self) -> DetectorConfig {
        DetectorConfig {
            alpha: self.alpha,
            k_bins: self.bins,
            min_subgroup_n: self.min_subgroup,
            tau_reversal: self.tau_reversal,
            tau_disappear: self.tau_disappear,
            subgroup_test: match self.subgroup_test {
                TestArg::Wald => SubgroupTest::Wald,
                TestArg::Sign => SubgroupTest::Sign,
            },
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct ColumnArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    outcome: String,
    /// Actor column; needed for session features and time-based shuffles.
    #[arg(long)]
    actor: Option<String>,
    /// Timestamp column, in seconds.
    #[arg(long)]
    time: Option<String>,
    /// Session timeout in seconds.
    #[arg(long, default_value_t = 3600.0)]
    timeout: f64,
}

#[derive(Debug, Args, Serialize)]
struct DetectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    columns: ColumnArgs,
    /// Trend variables, comma separated or repeated.
    #[arg(long, required = true, value_delimiter = ',')]
    x: Vec<String>,
    /// Conditioning variables, comma separated or repeated.
    #[arg(long, required = true, value_delimiter = ',')]
    z: Vec<String>,
    #[command(flatten)]
    #[serde(flatten)]
    detector: DetectorArgs,
    /// Directory for per-pair trend curve CSVs.
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Record wall-clock duration in the report.
    #[arg(long)]
    #[serde(skip)]
    timing: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct StrategyArg(ShuffleStrategy);

impl FromStr for StrategyArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let strategy = match s {
            "intervals" => ShuffleStrategy::IntervalShuffle,
            "within-session" => ShuffleStrategy::WithinSessionShuffle,
            _ => {
                let mut parts = s.split(':');
                let (Some("attribute"), Some(col)) = (parts.next(), parts.next()) else {
                    return Err(format!(
                        "unknown strategy \"{s}\"; expected intervals, within-session or attribute:<col>[:per-actor]"
                    ));
                };
                if col.is_empty() {
                    return Err("attribute strategy needs a column name".into());
                }
                let scope = match parts.next() {
                    None | Some("global") => Scope::Global,
                    Some("per-actor") => Scope::PerActor,
                    Some(other) => return Err(format!("unknown attribute scope \"{other}\"")),
                };
                if parts.next().is_some() {
                    return Err(format!("malformed strategy \"{s}\""));
                }
                ShuffleStrategy::AttributeShuffle {
                    attribute: col.to_string(),
                    scope,
                }
            }
        };
        Ok(StrategyArg(strategy))
    }
}

impl Serialize for StrategyArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

#[derive(Debug, Args, Serialize)]
struct ShuffleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    columns: ColumnArgs,
    #[arg(long)]
    x: String,
    #[arg(long)]
    z: String,
    /// intervals, within-session, or attribute:<col>[:per-actor]
    #[arg(long)]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 50)]
    replicates: usize,
    #[arg(long)]
    seed: u64,
    /// Share of replicates whose aggregate trend must persist.
    #[arg(long, default_value_t = 0.9)]
    pi_persist: f64,
    /// Mean subgroup mass that must become insignificant.
    #[arg(long, default_value_t = 0.8)]
    pi_disappear: f64,
    #[command(flatten)]
    #[serde(flatten)]
    detector: DetectorArgs,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    timing: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Generator {
    Admissions,
    Survivor,
    Sessions,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    generator: Generator,
    #[arg(long)]
    seed: u64,
    /// Dataset CSV; the ground truth goes to <stem>.truth.json beside it.
    #[arg(long)]
    output: PathBuf,
    /// admissions: cells as dept:group:applicants:accepted, comma separated.
    #[arg(long, value_delimiter = ',')]
    cells: Vec<String>,
    /// survivor, sessions
    #[arg(long)]
    n_actors: Option<usize>,
    /// survivor
    #[arg(long)]
    frac_incorrigible: Option<f64>,
    /// survivor
    #[arg(long)]
    p_reoffend: Option<f64>,
    /// survivor
    #[arg(long)]
    p_reformed: Option<f64>,
    /// survivor
    #[arg(long)]
    periods: Option<usize>,
    /// survivor: leave the generating subgroup out of the CSV.
    #[arg(long)]
    hide_subgroup: bool,
    /// sessions
    #[arg(long)]
    max_len: Option<usize>,
    /// sessions
    #[arg(long)]
    sessions_per_actor: Option<usize>,
    /// sessions
    #[arg(long)]
    base_intercept: Option<f64>,
    /// sessions
    #[arg(long)]
    base_per_len: Option<f64>,
    /// sessions
    #[arg(long)]
    decline: Option<f64>,
    /// sessions
    #[arg(long)]
    gap_minutes: Option<f64>,
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Sessionize(args) => cmd_sessionize(&args).map(|()| 0),
        Command::Detect(args) => cmd_detect(&args),
        Command::ShuffleTest(args) => cmd_shuffle_test(&args),
        Command::Synth(args) => cmd_synth(&args).map(|()| 0),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("simpair: error: {e}");
            ExitCode::from(1)
        }
    }
}

fn cmd_sessionize(args: &SessionizeArgs) -> CliResult<()> {
    if !(args.timeout > 0.0 && args.timeout.is_finite()) {
        return Err(format!(
            "--timeout must be a positive number of seconds, got {}",
            args.timeout
        )
        .into());
    }
    let mut input = csv::Reader::from_path(&args.input)?;
    let header = input.headers()?.clone();
    let position = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (actor_pos, time_pos) = (position(&args.actor)?, position(&args.time)?);
    let records = input.records().collect::<Result<Vec<_>, _>>()?;

    let mut actors = Vec::with_capacity(records.len());
    let mut times = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        actors.push(record.get(actor_pos).unwrap_or("").to_string());
        let raw = record.get(time_pos).unwrap_or("");
        let t: f64 = raw.trim().parse().map_err(|_| Error::Parse {
            row: i + 1,
            column: args.time.clone(),
            value: raw.to_string(),
        })?;
        times.push(t);
    }
    // The row number rides along as the outcome so the sorted result can be
    // mapped back onto the untouched input records.
    let row_col = "__row";
    let d = Dataset::new(
        vec![
            VariableSpec::actor(args.actor.as_str()),
            VariableSpec::timestamp(args.time.as_str()),
            VariableSpec::outcome(row_col, simpair::Kind::Continuous),
        ],
        vec![
            Column::Text(actors),
            Column::Numeric(times),
            Column::Numeric((0..records.len()).map(|i| i as f64).collect()),
        ],
    )?;
    let sd = sessionize(&d, args.timeout)?;

    let derived = [SESSION_ID, SESSION_INDEX, SESSION_LENGTH];
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| !derived.contains(&&header[i]))
        .collect();
    let mut out = csv::Writer::from_path(&args.output)?;
    let mut head: Vec<&str> = keep.iter().map(|&i| &header[i]).collect();
    head.extend(derived);
    out.write_record(&head)?;
    let rows = sd.data.numeric(row_col)?;
    let derived_cols = derived
        .iter()
        .map(|name| sd.data.numeric(name))
        .collect::<simpair::Result<Vec<_>>>()?;
    for (i, &row) in rows.iter().enumerate() {
        let record = &records[row as usize];
        let mut fields: Vec<String> = keep
            .iter()
            .map(|&c| record.get(c).unwrap_or("").to_string())
            .collect();
        fields.extend(derived_cols.iter().map(|col| format_number(col[i])));
        out.write_record(&fields)?;
    }
    out.flush()?;
    Ok(())
}

/// Loads the named columns with inferred kinds, computing session features
/// that are requested but not present in the file.
fn load_for(columns: &ColumnArgs, covariates: &[String]) -> CliResult<Dataset> {
    let header = read_header(&columns.input)?;
    let mut roles: Vec<(String, Role)> = Vec::new();
    let mut add = |name: &str, role: Role| {
        if !roles.iter().any(|(n, _)| n == name) {
            roles.push((name.to_string(), role));
        }
    };
    if let Some(actor) = &columns.actor {
        add(actor, Role::Actor);
    }
    if let Some(time) = &columns.time {
        add(time, Role::Timestamp);
    }
    let mut derive_sessions = false;
    for name in covariates {
        if is_session_feature(name) && !header.iter().any(|h| h == name) {
            derive_sessions = true;
        } else {
            add(name, Role::Covariate);
        }
    }
    add(&columns.outcome, Role::Outcome);

    if derive_sessions && (columns.actor.is_none() || columns.time.is_none()) {
        return Err("session features need --actor and --time".into());
    }
    let schema = infer_schema(BufReader::new(File::open(&columns.input)?), &roles)?;
    let d = load_csv(&columns.input, &schema)?;
    Ok(if derive_sessions {
        sessionize(&d, columns.timeout)?.data
    } else {
        d
    })
}

fn write_json<T: Serialize>(value: &T, output: Option<&Path>) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match output {
        Some(path) => std::fs::write(path, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_curves(
    d: &Dataset,
    x: &str,
    z: &str,
    config: &DetectorConfig,
    dir: &Path,
) -> CliResult<()> {
    let points = trend_curves(d, x, z, config)?;
    let path = dir.join(format!("{}__{}.csv", file_safe(x), file_safe(z)));
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["pair", "group", "x_bin", "mean_outcome", "n"])?;
    let pair = format!("{x}|{z}");
    for p in points {
        out.write_record([
            pair.as_str(),
            &p.group,
            &p.x_bin,
            &format_number(p.mean_outcome),
            &p.n.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_detect(args: &DetectArgs) -> CliResult<u8> {
    let started = Instant::now();
    let config = args.detector.config();
    config.validate()?;
    let names: Vec<String> = args
        .x
        .iter()
        .chain(&args.z)
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let d = load_for(&args.columns, &names)?;
    let reports = scan(&d, &args.x, &args.z, &config)?;

    if let Some(dir) = &args.curves {
        std::fs::create_dir_all(dir)?;
        for r in &reports {
            write_curves(&d, &r.x_name, &r.z_name, &config, dir)?;
        }
    }

    let paradox = reports.iter().any(|r| r.verdict.is_paradox());
    let mut report = RunReport::new("detect", args);
    report.collect_skipped(&reports);
    report.pairs = Some(reports);
    if args.timing {
        report.duration_seconds = Some(started.elapsed().as_secs_f64());
    }
    write_json(&report, args.output.as_deref())?;
    Ok(if paradox { 2 } else { 0 })
}

fn cmd_shuffle_test(args: &ShuffleArgs) -> CliResult<u8> {
    let started = Instant::now();
    if args.replicates < 1 {
        return Err("--replicates must be at least 1".into());
    }
    let config = args.detector.config();
    config.validate()?;
    let mut names = vec![args.x.clone(), args.z.clone()];
    if let ShuffleStrategy::AttributeShuffle { attribute, .. } = &args.strategy.0 {
        if attribute != &args.columns.outcome && !names.contains(attribute) {
            names.push(attribute.clone());
        }
    }
    let d = load_for(&args.columns, &names)?;

    let opts = ShuffleTestOptions {
        replicates: args.replicates,
        seed: args.seed,
        timeout: args.columns.timeout,
        pi_persist: args.pi_persist,
        pi_disappear: args.pi_disappear,
    };
    let result = shuffle_test(&d, &args.x, &args.z, &args.strategy.0, &opts, &config)?;
    let code = match result.verdict {
        ShuffleVerdict::ParadoxIndicated => 2,
        ShuffleVerdict::NotIndicated => 0,
        ShuffleVerdict::Inconclusive => 3,
    };
    let mut report = RunReport::new("shuffle-test", args);
    report.collect_skipped([&result.original]);
    report.shuffle = Some(result);
    if args.timing {
        report.duration_seconds = Some(started.elapsed().as_secs_f64());
    }
    write_json(&report, args.output.as_deref())?;
    Ok(code)
}

fn parse_cell(s: &str) -> CliResult<AdmissionCell> {
    let parts: Vec<&str> = s.split(':').collect();
    let [dept, group, applicants, accepted] = parts[..] else {
        return Err(format!("cell \"{s}\" is not dept:group:applicants:accepted").into());
    };
    Ok(AdmissionCell {
        department: dept.to_string(),
        group: group.parse()?,
        applicants: applicants.parse()?,
        accepted: accepted.parse()?,
    })
}

fn truth_path(output: &Path) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "synth".into());
    output.with_file_name(format!("{stem}.truth.json"))
}

fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let given = |flags: &[(&str, bool)], generator: &str| -> CliResult<()> {
        match flags.iter().find(|(_, set)| *set) {
            Some((flag, _)) => {
                Err(format!("--{flag} does not apply to the {generator} generator").into())
            }
            None => Ok(()),
        }
    };
    let survivor_flags = [
        ("frac-incorrigible", args.frac_incorrigible.is_some()),
        ("p-reoffend", args.p_reoffend.is_some()),
        ("p-reformed", args.p_reformed.is_some()),
        ("periods", args.periods.is_some()),
        ("hide-subgroup", args.hide_subgroup),
    ];
    let session_flags = [
        ("max-len", args.max_len.is_some()),
        ("sessions-per-actor", args.sessions_per_actor.is_some()),
        ("base-intercept", args.base_intercept.is_some()),
        ("base-per-len", args.base_per_len.is_some()),
        ("decline", args.decline.is_some()),
        ("gap-minutes", args.gap_minutes.is_some()),
    ];
    let cell_flag = [("cells", !args.cells.is_empty())];

    let (data, truth) = match args.generator {
        Generator::Admissions => {
            given(&survivor_flags, "admissions")?;
            given(&session_flags, "admissions")?;
            given(&[("n-actors", args.n_actors.is_some())], "admissions")?;
            let cells = if args.cells.is_empty() {
                synth::default_admission_cells()
            } else {
                args.cells
                    .iter()
                    .map(|c| parse_cell(c))
                    .collect::<CliResult<Vec<_>>>()?
            };
            synth::gen_admissions(&cells, args.seed)?
        }
        Generator::Survivor => {
            given(&session_flags, "survivor")?;
            given(&cell_flag, "survivor")?;
            let base = SurvivorParams::default();
            let params = SurvivorParams {
                n_actors: args.n_actors.unwrap_or(base.n_actors),
                frac_incorrigible: args.frac_incorrigible.unwrap_or(base.frac_incorrigible),
                p_reoffend: args.p_reoffend.unwrap_or(base.p_reoffend),
                p_reformed: args.p_reformed.unwrap_or(base.p_reformed),
                periods: args.periods.unwrap_or(base.periods),
                expose_subgroup: !args.hide_subgroup,
            };
            synth::gen_survivor(&params, args.seed)?
        }
        Generator::Sessions => {
            given(&survivor_flags, "sessions")?;
            given(&cell_flag, "sessions")?;
            let base = SessionParams::default();
            let params = SessionParams {
                n_actors: args.n_actors.unwrap_or(base.n_actors),
                max_len: args.max_len.unwrap_or(base.max_len),
                sessions_per_actor: args.sessions_per_actor.unwrap_or(base.sessions_per_actor),
                base_intercept: args.base_intercept.unwrap_or(base.base_intercept),
                base_per_len: args.base_per_len.unwrap_or(base.base_per_len),
                decline: args.decline.unwrap_or(base.decline),
                gap_minutes: args.gap_minutes.unwrap_or(base.gap_minutes),
            };
            synth::gen_sessions(&params, args.seed)?
        }
    };
    data.save_csv(&args.output)?;
    write_json(&truth, Some(&truth_path(&args.output)))?;
    Ok(())
}
