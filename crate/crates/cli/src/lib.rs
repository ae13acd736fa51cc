//! Command-line pipeline: ingest or synthesize a keystroke log, mix its
//! timing, attack the result, and write deterministic reports.
//!
//! Every command is a pure function of its flags and `--seed`: rerunning
//! with the same arguments reproduces every output byte for byte. Output
//! files are written atomically (temp file + rename) so a crashed run never
//! leaves a half-written report.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use keymix_core::classify::{identity_cv, predict_intervals, soft_trait_cv, ForestParams, ReportRow, TraitKind};
use keymix_core::events::{attach_labels, parse_labels, parse_log, write_log, Session};
use keymix_core::features::FeatureSpec;
use keymix_core::metrics::mutual_information_bits;
use keymix_core::mixes::{
    mix_sessions, IntervalMixParams, MixSpec, DEFAULT_EPS_MS, DEFAULT_U_INIT_MS,
};
use keymix_core::seeding::{derive_seed, hash_str};
use keymix_core::synth::{
    generate_cohort, CharsPerSession, CohortSpec, POPULATION_DU_MEDIAN_MS,
    POPULATION_PP_MEDIAN_MS, STANDARD_DISPERSION,
};
use keymix_core::ClassifyError;

/// Default delay-cap grid, in milliseconds.
pub const DEFAULT_DELAY_GRID: [f64; 6] = [0.0, 50.0, 100.0, 200.0, 500.0, 1000.0];
/// Default interval-mix gain grid; 0 is the unmixed baseline row.
pub const DEFAULT_GAIN_GRID: [f64; 6] = [0.0, 0.1, 0.5, 1.0, 1.5, 2.0];

#[derive(Debug, Parser)]
#[command(name = "keymix", version, about = "Obfuscate keystroke timing and measure what it buys")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply one mix to a log and write the mixed log plus a lag summary.
    Mix(MixArgs),
    /// Run the attack battery over a parameter grid and write report files.
    Eval(EvalArgs),
    /// Estimate interval mutual information over a parameter grid.
    Mi(MiArgs),
}

/// Where the events come from: a log file or a synthesized cohort.
#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Input keystroke log (CSV with header user,session,key,action,time_ms).
    #[arg(value_name = "LOG", required_unless_present = "synth", conflicts_with = "synth")]
    pub input: Option<PathBuf>,

    /// Optional per-user label sidecar (CSV with header
    /// user,age_group,gender,handedness).
    #[arg(long, value_name = "FILE", conflicts_with = "synth")]
    pub labels: Option<PathBuf>,

    /// Synthesize a labeled cohort instead of reading a log, e.g.
    /// users=10,sessions=10,chars=fixed:20,dispersion=0.35.
    #[arg(long, value_name = "SPEC", value_parser = SynthSpec::parse)]
    pub synth: Option<SynthSpec>,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Delay mix with this cap, in ms.
    #[arg(long, value_name = "MS", conflicts_with_all = ["interval", "b"])]
    pub delay: Option<f64>,

    /// Interval mix; requires --b.
    #[arg(long, requires = "b")]
    pub interval: bool,

    /// Interval-mix feedback gain.
    #[arg(long, value_name = "GAIN", requires = "interval")]
    pub b: Option<f64>,

    /// Interval-mix cap floor, in ms.
    #[arg(long, value_name = "MS", default_value_t = DEFAULT_EPS_MS)]
    pub eps: f64,

    /// Interval-mix initial cap, in ms.
    #[arg(long, value_name = "MS", default_value_t = DEFAULT_U_INIT_MS)]
    pub u0: f64,

    /// Master seed for all randomness.
    #[arg(long, env = "KEYMIX_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Re-validate the written outputs (order, bounds, round trip).
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Evaluate the delay mix across the grid.
    #[arg(long, conflicts_with = "interval")]
    pub delay: bool,

    /// Evaluate the interval mix across the grid.
    #[arg(long)]
    pub interval: bool,

    /// Grid of mix parameters (delay caps in ms, or gains).
    #[arg(long, value_name = "V1,V2,...", value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,

    /// Interval-mix cap floor, in ms.
    #[arg(long, value_name = "MS", default_value_t = DEFAULT_EPS_MS)]
    pub eps: f64,

    /// Interval-mix initial cap, in ms.
    #[arg(long, value_name = "MS", default_value_t = DEFAULT_U_INIT_MS)]
    pub u0: f64,

    /// Minimum per-group observations before a feature group stands alone.
    #[arg(long, value_name = "N", default_value_t = 5)]
    pub min_obs: usize,

    /// Trees per random forest.
    #[arg(long, value_name = "N", default_value_t = 200)]
    pub trees: usize,

    /// Independent mix draws averaged into each report row.
    #[arg(long, value_name = "N", default_value_t = 3)]
    pub repeats: usize,

    /// Master seed for all randomness.
    #[arg(long, env = "KEYMIX_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Re-validate the written outputs.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Args)]
pub struct MiArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Analyze the delay mix across the grid.
    #[arg(long, conflicts_with = "interval")]
    pub delay: bool,

    /// Analyze the interval mix across the grid.
    #[arg(long)]
    pub interval: bool,

    /// Grid of mix parameters (delay caps in ms, or gains).
    #[arg(long, value_name = "V1,V2,...", value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,

    /// Interval-mix cap floor, in ms.
    #[arg(long, value_name = "MS", default_value_t = DEFAULT_EPS_MS)]
    pub eps: f64,

    /// Interval-mix initial cap, in ms.
    #[arg(long, value_name = "MS", default_value_t = DEFAULT_U_INIT_MS)]
    pub u0: f64,

    /// Equal-frequency bins per marginal for the MI estimator.
    #[arg(long, value_name = "N", default_value_t = 8)]
    pub bins: usize,

    /// Master seed for all randomness.
    #[arg(long, env = "KEYMIX_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Re-validate the written outputs.
    #[arg(long)]
    pub check: bool,
}

/// Parsed form of the `--synth` argument.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub users: usize,
    pub sessions: usize,
    pub chars: CharsPerSession,
    pub dispersion: f64,
    pub pp_median_ms: f64,
    pub du_median_ms: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            users: 10,
            sessions: 10,
            chars: CharsPerSession::Fixed(30),
            dispersion: STANDARD_DISPERSION,
            pp_median_ms: POPULATION_PP_MEDIAN_MS,
            du_median_ms: POPULATION_DU_MEDIAN_MS,
        }
    }
}

impl SynthSpec {
    /// Parse a comma-separated key=value list. Unset keys keep defaults.
    pub fn parse(s: &str) -> Result<SynthSpec, String> {
        let mut spec = SynthSpec::default();
        for part in s.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {part:?}"))?;
            let bad = |e: &dyn std::fmt::Display| format!("invalid {key}: {e}");
            match key {
                "users" => spec.users = value.parse().map_err(|e| bad(&e))?,
                "sessions" => spec.sessions = value.parse().map_err(|e| bad(&e))?,
                "chars" => {
                    spec.chars = if value == "norm" {
                        CharsPerSession::Normal
                    } else if let Some(k) = value.strip_prefix("fixed:") {
                        CharsPerSession::Fixed(k.parse().map_err(|e| bad(&e))?)
                    } else {
                        return Err(format!(
                            "chars must be fixed:<n> or norm, got {value:?}"
                        ));
                    }
                }
                "dispersion" => spec.dispersion = value.parse().map_err(|e| bad(&e))?,
                "pp" => spec.pp_median_ms = value.parse().map_err(|e| bad(&e))?,
                "du" => spec.du_median_ms = value.parse().map_err(|e| bad(&e))?,
                other => return Err(format!("unknown synth key {other:?}")),
            }
        }
        Ok(spec)
    }

    /// Canonical form, embedded in report provenance.
    pub fn canonical(&self) -> String {
        let chars = match self.chars {
            CharsPerSession::Fixed(k) => format!("fixed:{k}"),
            CharsPerSession::Normal => "norm".into(),
        };
        format!(
            "users={},sessions={},chars={},dispersion={},pp={},du={}",
            self.users, self.sessions, chars, self.dispersion, self.pp_median_ms, self.du_median_ms
        )
    }

    fn to_cohort(&self) -> CohortSpec {
        CohortSpec {
            n_users: self.users,
            sessions_per_user: self.sessions,
            chars: self.chars,
            dispersion: self.dispersion,
            pp_median_ms: self.pp_median_ms,
            du_median_ms: self.du_median_ms,
        }
    }
}

/// Logical run configuration embedded in every JSON report. Holds no
/// filesystem paths, so reruns into different directories stay
/// byte-identical.
#[derive(Debug, Serialize)]
struct Provenance {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    mix: &'static str,
    seed: u64,
    /// "file" or "synthetic".
    source: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    synth: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    param: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    u0_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_observations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trees: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    repeats: Option<usize>,
}

impl Provenance {
    fn new(command: &'static str, mix: &'static str, seed: u64, input: &InputArgs) -> Self {
        Provenance {
            tool: "keymix",
            version: env!("CARGO_PKG_VERSION"),
            command,
            mix,
            seed,
            source: if input.synth.is_some() { "synthetic" } else { "file" },
            synth: input.synth.as_ref().map(SynthSpec::canonical),
            param: None,
            grid: None,
            eps_ms: None,
            u0_ms: None,
            bins: None,
            min_observations: None,
            trees: None,
            repeats: None,
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mix(args) => cmd_mix(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Mi(args) => cmd_mi(&args),
    }
}

/// Which mix a command targets, with interval parameters held constant
/// across the grid.
#[derive(Debug, Clone, Copy)]
enum MixKind {
    Delay,
    Interval { eps_ms: f64, u_init_ms: f64 },
}

impl MixKind {
    fn name(self) -> &'static str {
        match self {
            MixKind::Delay => "delay",
            MixKind::Interval { .. } => "interval",
        }
    }

    fn spec(self, param: f64) -> MixSpec {
        match self {
            MixKind::Delay => MixSpec::delay(param),
            MixKind::Interval { eps_ms, u_init_ms } => MixSpec::Interval(IntervalMixParams {
                b: param,
                eps_ms,
                u_init_ms,
            }),
        }
    }

    fn default_grid(self) -> Vec<f64> {
        match self {
            MixKind::Delay => DEFAULT_DELAY_GRID.to_vec(),
            MixKind::Interval { .. } => DEFAULT_GAIN_GRID.to_vec(),
        }
    }
}

fn load_sessions(input: &InputArgs, seed: u64) -> Result<Vec<Session>> {
    if let Some(spec) = &input.synth {
        return generate_cohort(&spec.to_cohort(), seed).context("generating synthetic cohort");
    }
    let path = input.input.as_ref().expect("clap requires input xor synth");
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading log {}", path.display()))?;
    let mut sessions =
        parse_log(&text).with_context(|| format!("parsing log {}", path.display()))?;
    if let Some(labels_path) = &input.labels {
        let text = fs::read_to_string(labels_path)
            .with_context(|| format!("reading labels {}", labels_path.display()))?;
        let labels = parse_labels(&text)
            .with_context(|| format!("parsing labels {}", labels_path.display()))?;
        attach_labels(&mut sessions, &labels);
    }
    Ok(sessions)
}

fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .context("output path has no file name")?;
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable report");
    s.push('\n');
    s
}

/// Grid-point mix master seed; derived from the parameter so grid points
/// are independent and insertion-order agnostic.
fn grid_seed(seed: u64, label: &str) -> u64 {
    derive_seed(seed, hash_str(label))
}

#[derive(Debug, Serialize)]
struct LagSummary {
    mean_ms: f64,
    max_ms: f64,
    count: usize,
    config: Provenance,
}

fn cmd_mix(args: &MixArgs) -> Result<()> {
    let (kind, param) = match (args.delay, args.interval) {
        (Some(delta), false) => (MixKind::Delay, delta),
        (None, true) => (
            MixKind::Interval {
                eps_ms: args.eps,
                u_init_ms: args.u0,
            },
            args.b.expect("clap: --interval requires --b"),
        ),
        (None, false) => bail!("choose a mix: --delay <MS> or --interval --b <GAIN>"),
        (Some(_), true) => unreachable!("clap rejects --delay with --interval"),
    };

    let sessions = load_sessions(&args.input, args.seed)?;
    if args.input.synth.is_some() {
        atomic_write(&args.out.join("input.csv"), &write_log(&sessions))?;
    }

    let mixed = mix_sessions(&sessions, kind.spec(param), args.seed)
        .context("mixing the event stream")?;
    let mixed_sessions: Vec<Session> = mixed.iter().map(|m| m.session.clone()).collect();
    let lags: Vec<f64> = mixed.iter().flat_map(|m| m.lags.iter().copied()).collect();

    atomic_write(&args.out.join("mixed.csv"), &write_log(&mixed_sessions))?;

    let mut config = Provenance::new("mix", kind.name(), args.seed, &args.input);
    config.param = Some(param);
    if let MixKind::Interval { eps_ms, u_init_ms } = kind {
        config.eps_ms = Some(eps_ms);
        config.u0_ms = Some(u_init_ms);
    }
    let summary = LagSummary {
        mean_ms: if lags.is_empty() {
            0.0
        } else {
            lags.iter().sum::<f64>() / lags.len() as f64
        },
        max_ms: lags.iter().copied().fold(0.0, f64::max),
        count: lags.len(),
        config,
    };
    atomic_write(&args.out.join("lag_summary.json"), &to_json(&summary))?;

    if args.check {
        check_mix_outputs(&sessions, &mixed, kind, param, &args.out)?;
        println!("check ok");
    }
    Ok(())
}

/// Output validators for `mix --check`: exact bound/order invariants on the
/// in-memory result, plus a parse round trip of the written file.
fn check_mix_outputs(
    original: &[Session],
    mixed: &[keymix_core::MixedSession],
    kind: MixKind,
    param: f64,
    out: &Path,
) -> Result<()> {
    for (orig, m) in original.iter().zip(mixed) {
        let mut prev = f64::NEG_INFINITY;
        for (n, (ev_in, ev_out)) in orig.events.iter().zip(&m.session.events).enumerate() {
            if ev_out.time_ms < prev {
                bail!(
                    "order violated in {}/{} at event {n}",
                    orig.user_id,
                    orig.session_id
                );
            }
            prev = ev_out.time_ms;
            let lag = ev_out.time_ms - ev_in.time_ms;
            let ok = match kind {
                MixKind::Delay => (0.0..=param).contains(&lag),
                MixKind::Interval { .. } => lag >= 0.0,
            };
            if !ok {
                bail!(
                    "lag {lag} out of bounds in {}/{} at event {n}",
                    orig.user_id,
                    orig.session_id
                );
            }
        }
    }
    let text = fs::read_to_string(out.join("mixed.csv")).context("re-reading mixed.csv")?;
    let parsed = parse_log(&text).context("re-parsing mixed.csv")?;
    let expected: usize = mixed.iter().map(|m| m.session.events.len()).sum();
    let got: usize = parsed.iter().map(|s| s.events.len()).sum();
    if got != expected {
        bail!("mixed.csv holds {got} events, expected {expected}");
    }
    Ok(())
}

/// Mix every session at one grid value; 0 is the unmixed baseline for both
/// mix kinds. All grid values of one run share a noise stream (common
/// random numbers), so the accuracy and SMAPE trends across the grid are
/// not blurred by resampling noise.
fn mix_grid_point(
    sessions: &[Session],
    kind: MixKind,
    param: f64,
    seed: u64,
    run: &str,
) -> Result<(Vec<Session>, Vec<f64>)> {
    if param == 0.0 {
        let lags = vec![0.0; sessions.iter().map(|s| s.events.len()).sum()];
        return Ok((sessions.to_vec(), lags));
    }
    let master = grid_seed(seed, run);
    let mixed = mix_sessions(sessions, kind.spec(param), master)
        .with_context(|| format!("mixing at {}={param}", kind.name()))?;
    let sessions = mixed.iter().map(|m| m.session.clone()).collect();
    let lags = mixed.iter().flat_map(|m| m.lags.iter().copied()).collect();
    Ok((sessions, lags))
}

fn eval_kind(delay: bool, interval: bool, eps: f64, u0: f64) -> Result<MixKind> {
    match (delay, interval) {
        (true, false) => Ok(MixKind::Delay),
        (false, true) => Ok(MixKind::Interval {
            eps_ms: eps,
            u_init_ms: u0,
        }),
        _ => bail!("choose a mix kind: --delay or --interval"),
    }
}

fn validated_grid(grid: &Option<Vec<f64>>, kind: MixKind) -> Result<Vec<f64>> {
    let grid = grid.clone().unwrap_or_else(|| kind.default_grid());
    if grid.is_empty() {
        bail!("--grid must name at least one value");
    }
    for &v in &grid {
        if !v.is_finite() || v < 0.0 {
            bail!("grid values must be finite and >= 0, got {v}");
        }
    }
    Ok(grid)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let kind = eval_kind(args.delay, args.interval, args.eps, args.u0)?;
    let grid = validated_grid(&args.grid, kind)?;
    let sessions = load_sessions(&args.input, args.seed)?;
    let feature_spec = FeatureSpec {
        min_observations: args.min_obs,
    };

    if args.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let forest = ForestParams {
        n_trees: args.trees,
        seed: grid_seed(args.seed, "eval-forest"),
        ..ForestParams::new(0)
    };

    // One full attack battery against one mixed realization of the corpus.
    let attack = |mixed: &[Session], lags: &[f64], param: f64| -> Result<ReportRow> {
        let mean_lag = if lags.is_empty() {
            0.0
        } else {
            lags.iter().sum::<f64>() / lags.len() as f64
        };
        let acc_identity = identity_cv(mixed, &feature_spec, &forest)
            .with_context(|| format!("identification attack at {}={param}", kind.name()))?;

        let trait_acc = |t: TraitKind| -> Result<Option<f64>> {
            match soft_trait_cv(mixed, t, &feature_spec, &forest) {
                Ok(a) => Ok(Some(a)),
                // An unlabeled or degenerate trait yields a null column, per
                // the report contract; identity is still evaluated.
                Err(
                    ClassifyError::TraitMissing { .. }
                    | ClassifyError::SingleClass
                    | ClassifyError::TraitClassTooSmall { .. },
                ) => Ok(None),
                Err(e) => Err(e).with_context(|| format!("{} attack at {param}", t.name())),
            }
        };
        let acc_age = trait_acc(TraitKind::Age)?;
        let acc_gender = trait_acc(TraitKind::Gender)?;
        let acc_handedness = trait_acc(TraitKind::Handedness)?;

        let mut smape_pp_sum = 0.0;
        let mut smape_du_sum = 0.0;
        let mut predicted = 0usize;
        for s in mixed {
            match predict_intervals(s) {
                Ok((pp, du)) => {
                    smape_pp_sum += pp;
                    smape_du_sum += du;
                    predicted += 1;
                }
                // Sessions under 3 keystrokes carry no prediction signal.
                Err(ClassifyError::TooShortSession { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        if predicted == 0 {
            bail!("no session is long enough for interval prediction");
        }

        Ok(ReportRow {
            param,
            mean_lag,
            acc_identity,
            acc_age,
            acc_gender,
            acc_handedness,
            smape_pp: smape_pp_sum / predicted as f64,
            smape_du: smape_du_sum / predicted as f64,
        })
    };

    let mut rows = Vec::with_capacity(grid.len());
    for &param in &grid {
        // param 0 is the deterministic baseline: every repeat is identical.
        let repeats = if param == 0.0 { 1 } else { args.repeats };
        let mut mean = ReportRow {
            param,
            mean_lag: 0.0,
            acc_identity: 0.0,
            acc_age: Some(0.0),
            acc_gender: Some(0.0),
            acc_handedness: Some(0.0),
            smape_pp: 0.0,
            smape_du: 0.0,
        };
        for rep in 0..repeats {
            let (mixed, lags) =
                mix_grid_point(&sessions, kind, param, args.seed, &format!("eval-mix/rep{rep}"))?;
            let row = attack(&mixed, &lags, param)?;
            let w = repeats as f64;
            mean.mean_lag += row.mean_lag / w;
            mean.acc_identity += row.acc_identity / w;
            mean.smape_pp += row.smape_pp / w;
            mean.smape_du += row.smape_du / w;
            let add = |acc: &mut Option<f64>, v: Option<f64>| {
                *acc = match (*acc, v) {
                    (Some(a), Some(b)) => Some(a + b / w),
                    _ => None,
                };
            };
            add(&mut mean.acc_age, row.acc_age);
            add(&mut mean.acc_gender, row.acc_gender);
            add(&mut mean.acc_handedness, row.acc_handedness);
        }
        rows.push(mean);
    }

    let mut config = Provenance::new("eval", kind.name(), args.seed, &args.input);
    config.grid = Some(grid.clone());
    config.min_observations = Some(args.min_obs);
    config.trees = Some(args.trees);
    config.repeats = Some(args.repeats);
    if let MixKind::Interval { eps_ms, u_init_ms } = kind {
        config.eps_ms = Some(eps_ms);
        config.u0_ms = Some(u_init_ms);
    }

    atomic_write(&args.out.join("report.csv"), &ReportRow::to_csv(&rows))?;
    #[derive(Serialize)]
    struct EvalReport {
        config: Provenance,
        rows: Vec<ReportRow>,
    }
    let report = EvalReport { config, rows };
    atomic_write(&args.out.join("report.json"), &to_json(&report))?;

    if args.check {
        check_eval_outputs(&report.rows, &grid, kind)?;
        println!("check ok");
    }
    Ok(())
}

fn check_eval_outputs(rows: &[ReportRow], grid: &[f64], kind: MixKind) -> Result<()> {
    if rows.len() != grid.len() {
        bail!("{} rows for {} grid values", rows.len(), grid.len());
    }
    for row in rows {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let traits_ok = [row.acc_age, row.acc_gender, row.acc_handedness]
            .iter()
            .all(|a| a.is_none_or(unit));
        let lag_ok = match kind {
            MixKind::Delay => (0.0..=row.param).contains(&row.mean_lag) || row.param == 0.0 && row.mean_lag == 0.0,
            MixKind::Interval { .. } => row.mean_lag >= 0.0,
        };
        if !(unit(row.acc_identity) && traits_ok && unit(row.smape_pp) && unit(row.smape_du)) {
            bail!("report row at param {} has values outside [0,1]", row.param);
        }
        if !lag_ok {
            bail!("mean lag {} out of bounds at param {}", row.mean_lag, row.param);
        }
    }
    Ok(())
}

/// One `mi` report row: dependence between input and output intervals, and
/// between the output intervals of two independently seeded runs.
#[derive(Debug, Serialize)]
pub struct MiRow {
    pub param: f64,
    pub mi_io_bits: f64,
    pub mi_runs_bits: f64,
}

fn cmd_mi(args: &MiArgs) -> Result<()> {
    let kind = eval_kind(args.delay, args.interval, args.eps, args.u0)?;
    let grid = validated_grid(&args.grid, kind)?;
    let sessions = load_sessions(&args.input, args.seed)?;

    let intervals = |set: &[Session]| -> Vec<f64> {
        set.iter().flat_map(|s| s.intervals()).collect()
    };
    let tau_in = intervals(&sessions);

    let mut rows = Vec::with_capacity(grid.len());
    for &param in &grid {
        let (run_a, _) = mix_grid_point(&sessions, kind, param, args.seed, "mi-run-a")?;
        let (run_b, _) = mix_grid_point(&sessions, kind, param, args.seed, "mi-run-b")?;
        let tau_a = intervals(&run_a);
        let tau_b = intervals(&run_b);
        let mi_io = mutual_information_bits(&tau_in, &tau_a, args.bins)
            .with_context(|| format!("MI(in, out) at {}={param}", kind.name()))?;
        let mi_runs = mutual_information_bits(&tau_a, &tau_b, args.bins)
            .with_context(|| format!("MI(run A, run B) at {}={param}", kind.name()))?;
        rows.push(MiRow {
            param,
            mi_io_bits: mi_io,
            mi_runs_bits: mi_runs,
        });
    }

    let mut csv_writer = csv::Writer::from_writer(Vec::new());
    csv_writer
        .write_record(["param", "mi_io_bits", "mi_runs_bits"])
        .expect("in-memory write");
    for row in &rows {
        csv_writer
            .write_record([
                format!("{}", row.param),
                format!("{}", row.mi_io_bits),
                format!("{}", row.mi_runs_bits),
            ])
            .expect("in-memory write");
    }
    let csv_text =
        String::from_utf8(csv_writer.into_inner().expect("in-memory flush")).expect("utf8");
    atomic_write(&args.out.join("mi_report.csv"), &csv_text)?;

    let mut config = Provenance::new("mi", kind.name(), args.seed, &args.input);
    config.grid = Some(grid.clone());
    config.bins = Some(args.bins);
    if let MixKind::Interval { eps_ms, u_init_ms } = kind {
        config.eps_ms = Some(eps_ms);
        config.u0_ms = Some(u_init_ms);
    }
    #[derive(Serialize)]
    struct MiReport {
        config: Provenance,
        rows: Vec<MiRow>,
    }
    let report = MiReport { config, rows };
    atomic_write(&args.out.join("mi_report.json"), &to_json(&report))?;

    if args.check {
        if report.rows.len() != grid.len() {
            bail!("{} rows for {} grid values", report.rows.len(), grid.len());
        }
        for row in &report.rows {
            if !(row.mi_io_bits.is_finite() && row.mi_io_bits >= 0.0)
                || !(row.mi_runs_bits.is_finite() && row.mi_runs_bits >= 0.0)
            {
                bail!("MI out of range at param {}", row.param);
            }
        }
        println!("check ok");
    }
    Ok(())
}
