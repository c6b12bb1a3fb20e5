//! `ehsim`: sleep-time solver and simulator front end.

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ehsim_core::energy::{self, EnergyProfile, HarvesterCurve, SleepSolution};
use ehsim_core::metrics::{format_pdr, import_rows, ExportError, Format, NodeSummary, StageRecord};
use ehsim_core::scenario::{self, expand_sweep, ScenarioFile, ScenarioFileError, SweepAxis, REFERENCE_DURATION_S};
use ehsim_core::sim::{self, ScenarioError, STAGES_FILE, SUMMARY_FILE};

const OUT_DIR_ENV: &str = "EHSIM_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "out";

#[derive(Parser)]
#[command(
    name = "ehsim",
    version,
    about = "Energy budget solver and simulator for batteryless light-harvesting sensor nodes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smallest sleep time that keeps a node energy-neutral.
    Solve(SolveArgs),
    /// Run one scenario and write its summary and traces.
    Simulate(SimulateArgs),
    /// Run a scenario once per value of one parameter.
    Sweep(SweepArgs),
    /// Print the summary table of an earlier run.
    Report(ReportArgs),
    /// List the built-in scenarios, or print one as a scenario file.
    Presets {
        /// Preset to print.
        name: Option<String>,
    },
}

#[derive(Args)]
struct SolveArgs {
    /// Profile preset name or TOML file.
    #[arg(long)]
    profile: String,
    /// Illuminance in lux; needs a harvester curve.
    #[arg(long, conflicts_with = "harvest_mw", required_unless_present = "harvest_mw")]
    lux: Option<f64>,
    /// Harvested power in mW.
    #[arg(long)]
    harvest_mw: Option<f64>,
    /// Harvester preset name or TOML file. Defaults to the curve paired
    /// with a profile preset.
    #[arg(long)]
    harvester: Option<String>,
    /// Fraction the cycle is stretched by. Defaults to 0.05 for the BLE
    /// profile preset and 0 otherwise.
    #[arg(long)]
    margin: Option<f64>,
}

#[derive(Args)]
struct OutputArgs {
    /// Output directory [default: scenario output.dir, else "out"].
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// csv or jsonl [default: scenario output.format, else csv].
    #[arg(long)]
    format: Option<Format>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Preset name or scenario file.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the run length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Preset name or scenario file.
    #[arg(long)]
    scenario: String,
    /// Dotted path into the scenario, e.g. channel.loss.ble_adv.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long)]
    values: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel runs [default: all cores].
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    input: PathBuf,
    /// csv or jsonl [default: whichever summary file exists, csv first]
    #[arg(long)]
    format: Option<Format>,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Infeasible(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Infeasible(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<ScenarioFileError> for CliError {
    fn from(e: ScenarioFileError) -> Self {
        match e {
            ScenarioFileError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ExportError> for CliError {
    fn from(e: ExportError) -> Self {
        CliError::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => solve(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Report(a) => report(&a),
        Command::Presets { name } => presets(name.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn load_profile(arg: &str) -> Result<EnergyProfile, CliError> {
    let profile = match energy::profile_preset(arg) {
        Some(p) => p,
        None => read_toml(Path::new(arg))?,
    };
    profile.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(profile)
}

fn load_harvester(arg: &str) -> Result<HarvesterCurve, CliError> {
    let curve = match energy::harvester_preset(arg) {
        Some(h) => h,
        None => read_toml(Path::new(arg))?,
    };
    curve.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(curve)
}

fn solve(a: &SolveArgs) -> Result<(), CliError> {
    let profile = load_profile(&a.profile)?;
    let (paired_harvester, default_margin) = match a.profile.as_str() {
        energy::BLE_PROFILE_PRESET => (Some(energy::BLE_HARVESTER_PRESET), energy::BLE_DEFAULT_MARGIN),
        energy::LIOT_PROFILE_PRESET => (Some(energy::LIOT_HARVESTER_PRESET), 0.0),
        _ => (None, 0.0),
    };
    let margin = a.margin.unwrap_or(default_margin);
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(CliError::Validation(format!(
            "--margin must be non-negative (got {margin})"
        )));
    }
    let p_harv = match (a.lux, a.harvest_mw) {
        (Some(lux), None) => {
            let name = a
                .harvester
                .as_deref()
                .or(paired_harvester)
                .ok_or_else(|| CliError::Validation("--lux with a custom profile needs --harvester".into()))?;
            if !(lux.is_finite() && lux >= 0.0) {
                return Err(CliError::Validation(format!("--lux must be non-negative (got {lux})")));
            }
            load_harvester(name)?.power_at(lux)
        }
        (None, Some(p)) => p,
        _ => {
            return Err(CliError::Validation(
                "give exactly one of --lux and --harvest-mw".into(),
            ))
        }
    };
    let totals = energy::active_totals(&profile);
    let solution = energy::solve_sleep_time(&profile, p_harv).map_err(|e| CliError::Validation(e.to_string()))?;
    println!("harvest_mw: {p_harv:.6}");
    println!("active_s: {:.6}", totals.t_active_s);
    println!("active_j: {:.9}", totals.e_active_j);
    match solution {
        SleepSolution::Infeasible => Err(CliError::Infeasible(format!(
            "infeasible: harvest {p_harv} mW does not exceed the sleep draw {:.4} mW",
            profile.sleep_power_mw()
        ))),
        SleepSolution::Continuous => {
            println!("t_sleep_s: 0 (harvest covers continuous operation)");
            println!("cycle_s: {:.4}", totals.t_active_s);
            println!("samples_per_8h: {}", (REFERENCE_DURATION_S / totals.t_active_s).floor());
            Ok(())
        }
        SleepSolution::Sleep(t_sleep) => {
            let cycle = (totals.t_active_s + t_sleep) * (1.0 + margin);
            println!("t_sleep_s: {t_sleep:.4}");
            println!("margin: {margin}");
            println!("cycle_s: {cycle:.4}");
            println!("samples_per_8h: {}", (REFERENCE_DURATION_S / cycle).floor());
            Ok(())
        }
    }
}

fn load_scenario(arg: &str) -> Result<ScenarioFile, CliError> {
    match scenario::preset(arg) {
        Some(p) => Ok(p),
        None if Path::new(arg).exists() => Ok(ScenarioFile::load(Path::new(arg))?),
        None => Err(CliError::Io(format!(
            "{arg}: no such file, and not a preset ({})",
            scenario::PRESETS.join(", ")
        ))),
    }
}

fn resolve_output(args: &OutputArgs, file: &ScenarioFile) -> Result<(PathBuf, Format), CliError> {
    let dir = args
        .out
        .clone()
        .or_else(|| file.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let format = match (args.format, &file.output.format) {
        (Some(f), _) => f,
        (None, Some(s)) => s.parse().map_err(CliError::Validation)?,
        (None, None) => Format::default(),
    };
    Ok((dir, format))
}

fn print_table(rows: &[NodeSummary]) {
    println!(
        "{:>6} {:>8} {:>9} {:>6} {:>11}",
        "node", "sent", "received", "pdr", "scap_avg_v"
    );
    for n in rows {
        println!(
            "{:>6} {:>8} {:>9} {:>6} {:>11.3}",
            n.node_id.to_string(),
            n.sent,
            n.received,
            format_pdr(n.pdr),
            n.scap_avg_v
        );
    }
}

fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let mut file = load_scenario(&a.scenario)?;
    if let Some(seed) = a.seed {
        file.seed = seed;
    }
    if let Some(d) = a.duration {
        file.duration_s = d;
    }
    let (dir, format) = resolve_output(&a.output, &file)?;
    let scenario = file.to_scenario()?;
    let out = sim::run(&scenario)?;
    out.write(&dir, format)?;
    print_table(&out.summary.nodes);
    eprintln!("wrote {} ({} events)", dir.display(), out.events_processed);
    Ok(())
}

/// One summary row tagged with the swept value. The CSV writer cannot
/// flatten nested structs, so the summary fields are repeated here.
#[derive(serde::Serialize)]
struct SweepRow<'a> {
    param: &'a str,
    value: String,
    node_id: u32,
    sent: u64,
    received: u64,
    pdr: f64,
    scap_avg_v: f64,
    scap_min_v: f64,
    scap_max_v: f64,
    duration_s: f64,
    seed: u64,
    config_hash: &'a str,
}

fn value_label(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn sweep(a: &SweepArgs) -> Result<(), CliError> {
    let mut base = load_scenario(&a.scenario)?;
    if let Some(seed) = a.seed {
        base.seed = seed;
    }
    let axis: SweepAxis = format!("{}={}", a.param, a.values)
        .parse()
        .map_err(CliError::Validation)?;
    let (dir, format) = resolve_output(&a.output, &base)?;
    // every point is checked before anything runs
    let points = expand_sweep(&base, std::slice::from_ref(&axis))?;
    let scenarios = points
        .iter()
        .map(|(assigned, file)| Ok((assigned[0].1.clone(), file.to_scenario()?)))
        .collect::<Result<Vec<_>, CliError>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Validation(format!("--jobs: {e}")))?;
    let mut results = pool.install(|| {
        scenarios
            .par_iter()
            .map(|(value, s)| sim::run(s).map(|out| (value.clone(), out.summary)))
            .collect::<Result<Vec<_>, _>>()
    })?;
    results.sort_by(|(a, _), (b, _)| match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        _ => value_label(a).cmp(&value_label(b)),
    });

    let mut rows = Vec::new();
    for (value, summary) in &results {
        for node in &summary.nodes {
            rows.push(SweepRow {
                param: &a.param,
                value: value_label(value),
                node_id: node.node_id.0,
                sent: node.sent,
                received: node.received,
                pdr: node.pdr,
                scap_avg_v: node.scap_avg_v,
                scap_min_v: node.scap_min_v,
                scap_max_v: node.scap_max_v,
                duration_s: node.duration_s,
                seed: node.seed,
                config_hash: &node.config_hash,
            });
        }
    }
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(format!("sweep.{}", format.extension()));
    ehsim_core::metrics::export_rows(&rows, format, &path)?;
    println!(
        "{:>12} {:>6} {:>8} {:>9} {:>6}",
        a.param.rsplit('.').next().unwrap_or(&a.param),
        "node",
        "sent",
        "received",
        "pdr"
    );
    for r in &rows {
        println!(
            "{:>12} {:>6} {:>8} {:>9} {:>6}",
            r.value,
            r.node_id,
            r.sent,
            r.received,
            format_pdr(r.pdr)
        );
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn report(a: &ReportArgs) -> Result<(), CliError> {
    let format = a.format.unwrap_or_else(|| {
        let jsonl = a.input.join(format!("{SUMMARY_FILE}.{}", Format::Jsonl.extension()));
        let csv = a.input.join(format!("{SUMMARY_FILE}.{}", Format::Csv.extension()));
        if jsonl.exists() && !csv.exists() {
            Format::Jsonl
        } else {
            Format::Csv
        }
    });
    let file = |stem: &str| a.input.join(format!("{stem}.{}", format.extension()));
    let summary: Vec<NodeSummary> = import_rows(format, &file(SUMMARY_FILE))?;
    print_table(&summary);
    if let Some(first) = summary.first() {
        println!(
            "duration_s {}  seed {}  config {}",
            first.duration_s, first.seed, first.config_hash
        );
    }
    let stages_path = file(STAGES_FILE);
    if stages_path.exists() {
        let stages: Vec<StageRecord> = import_rows(format, &stages_path)?;
        println!();
        println!(
            "{:>6} {:<20} {:>12} {:>12} {:>10}",
            "node", "stage", "time_s", "energy_j", "mean_mw"
        );
        for s in &stages {
            println!(
                "{:>6} {:<20} {:>12.3} {:>12.6} {:>10.4}",
                s.node_id.to_string(),
                s.stage,
                s.time_s,
                s.energy_j,
                s.mean_power_mw
            );
        }
    }
    Ok(())
}

fn presets(name: Option<&str>) -> Result<(), CliError> {
    match name {
        None => {
            for p in scenario::PRESETS {
                println!("{p}");
            }
            Ok(())
        }
        Some(n) => {
            let p = scenario::preset(n).ok_or_else(|| {
                CliError::Validation(format!("unknown preset {n:?}; one of {}", scenario::PRESETS.join(", ")))
            })?;
            print!("{}", p.to_toml());
            Ok(())
        }
    }
}
