//! Argument parsing and command execution for the `dockflight` binary.

pub mod overrides;
pub mod svg;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use dockflight_core::config_opt::{optimize, symmetry_error, OptProblem, OptResult};
use dockflight_core::feasibility::{feasibility_report, yaw_torque_capability, FeasibilityReport};
use dockflight_core::io::{self, AirframeFile, Format, IoError};
use dockflight_core::model::{presets, AirframeModel};
use dockflight_core::sim::telemetry::Table;
use dockflight_core::sim::{run_scenario, ScenarioKind, ScenarioSpec, SimError, Summary};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

// Thresholds applied by --check.
pub const CHECK_ASSEMBLED_F_MIN: f64 = 6.75;
pub const CHECK_ASSEMBLED_TAU_MIN: f64 = 2.52;
pub const CHECK_SYMMETRY: f64 = 0.05;
pub const CHECK_YAW_RATIO: f64 = 4.0;
pub const CHECK_ASSEMBLY_RATE: f64 = 0.86;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("conflicting overrides: {0}")]
    Conflict(String),
    #[error("{0}")]
    File(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    /// Documented process exit code.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::File(_) => 5,
            CliError::Conflict(_) => 6,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::File(_) => "file",
            CliError::Conflict(_) => "conflict",
        }
    }
}

pub const EXIT_CHECK_FAILED: i32 = 4;

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Read { .. } | IoError::Serialize(_) => CliError::File(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dockflight", version, about = "Design, analyse and simulate two tilted-rotor quadrotors that dock in flight")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file (.json or .toml); defaults when absent.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. --set fsm.tolerances.e2_x=0.004 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Exit with code 4 when an acceptance threshold is missed.
    #[arg(long)]
    check: bool,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Search rotor angles for the largest guaranteed margins.
    Optimize(Common),
    /// Guaranteed force and torque margins of an airframe, alone and docked.
    Feasibility {
        /// Unit airframe file; the reference-angle unit when absent.
        #[arg(long)]
        airframe: Option<PathBuf>,
        /// Docked CoG separation (m).
        #[arg(long, default_value_t = presets::DOCKED_SEPARATION)]
        separation: f64,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        check: bool,
    },
    /// Run one scenario and write telemetry and a summary.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Scenario name (circle_unit, circle_assembled, assembly, disassembly, transition_ablation, valve_torque).
        #[arg(long)]
        scenario: Option<String>,
        /// Also write SVG plots.
        #[arg(long)]
        plot: bool,
    },
    /// Run a scenario over seeds and an optional parameter grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<String>,
        /// Number of seeds per grid point.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Grid axis, e.g. --vary disturbance.max_force=0.1,0.2 (repeatable).
        #[arg(long, value_name = "KEY=V1,V2,...")]
        vary: Vec<String>,
        /// Success-rate threshold for --check; scenario default when absent.
        #[arg(long)]
        min_success: Option<f64>,
    },
    /// Draw SVG charts from a telemetry CSV.
    Plot {
        /// Telemetry CSV written by `simulate`.
        csv: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
}

/// The clap command, for help output.
pub fn cli_command() -> clap::Command {
    use clap::CommandFactory;
    Cli::command()
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub params: Vec<(String, Value)>,
    pub spec: ScenarioSpec,
}

#[derive(Debug, Clone)]
pub enum Command {
    Optimize(OptProblem),
    Feasibility { airframe: AirframeModel, source: String, separation: f64 },
    Simulate { spec: ScenarioSpec, plot: bool },
    Sweep { grid: Vec<GridPoint>, seeds: u64, min_success: f64 },
    Plot { table: Table, source: PathBuf },
}

#[derive(Debug, Clone)]
pub struct CommandSpec {
    pub command: Command,
    pub out: PathBuf,
    pub check: bool,
    pub print_config: bool,
}

impl CommandSpec {
    pub fn seed(&self) -> u64 {
        match &self.command {
            Command::Optimize(p) => p.seed,
            Command::Simulate { spec, .. } => spec.seed,
            Command::Sweep { grid, .. } => grid.first().map_or(0, |g| g.spec.seed),
            _ => 0,
        }
    }

    /// The resolved configuration as JSON, for echoing.
    pub fn resolved_config(&self) -> Value {
        match &self.command {
            Command::Optimize(p) => serde_json::to_value(p).expect("serializable"),
            Command::Simulate { spec, .. } => serde_json::to_value(spec).expect("serializable"),
            Command::Sweep { grid, .. } => Value::Array(grid.iter().map(|g| serde_json::to_value(&g.spec).expect("serializable")).collect()),
            Command::Feasibility { airframe, separation, .. } => {
                serde_json::json!({ "airframe": AirframeFile::from_model(airframe), "separation": separation })
            }
            Command::Plot { source, .. } => serde_json::json!({ "csv": source }),
        }
    }
}

fn read_tree(path: Option<&Path>) -> Result<(Value, String), CliError> {
    match path {
        None => Ok((Value::Object(Default::default()), "defaults".into())),
        Some(p) => {
            let name = p.display().to_string();
            if !p.exists() {
                return Err(CliError::File(format!("{name}: file not found")));
            }
            let format = Format::from_path(p).ok_or_else(|| CliError::Config(format!("{name}: unsupported extension (expected .json or .toml)")))?;
            let text = std::fs::read_to_string(p).map_err(|e| CliError::File(format!("{name}: {e}")))?;
            Ok((io::parse_str(&text, format, &name)?, name))
        }
    }
}

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::File(format!("{}: {e}", out.display())))?;
    let meta = std::fs::metadata(out).map_err(|e| CliError::File(format!("{}: {e}", out.display())))?;
    if meta.permissions().readonly() {
        return Err(CliError::File(format!("{}: output directory is not writable", out.display())));
    }
    Ok(())
}

fn scenario_override(name: Option<String>, set: &mut Vec<String>) -> Result<(), CliError> {
    if let Some(n) = name {
        if ScenarioKind::parse(&n).is_none() {
            let known: Vec<&str> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
            return Err(CliError::Config(format!("unknown scenario `{n}` (expected one of {})", known.join(", "))));
        }
        set.insert(0, format!("scenario=\"{n}\""));
    }
    Ok(())
}

fn common_overrides(c: &Common) -> Result<Vec<(String, Value)>, CliError> {
    let mut raw = c.set.clone();
    if let Some(s) = c.seed {
        raw.insert(0, format!("seed={s}"));
    }
    overrides::parse_overrides(&raw)
}

fn grid_axes(vary: &[String]) -> Result<Vec<(String, Vec<Value>)>, CliError> {
    let mut axes: Vec<(String, Vec<Value>)> = Vec::new();
    for v in vary {
        let (key, list) = v.split_once('=').ok_or_else(|| CliError::Config(format!("--vary `{v}` is not KEY=V1,V2,...")))?;
        if axes.iter().any(|(k, _)| k == key) {
            return Err(CliError::Conflict(format!("`{key}` varied twice")));
        }
        let values: Vec<Value> = list.split(',').map(|s| serde_json::from_str(s.trim()).unwrap_or_else(|_| Value::String(s.trim().to_string()))).collect();
        if values.is_empty() {
            return Err(CliError::Config(format!("--vary `{key}` has no values")));
        }
        axes.push((key.to_string(), values));
    }
    Ok(axes)
}

/// Parse and validate arguments (the first element is the program name).
/// Configuration files are read, overrides applied, defaults filled and the
/// result validated; nothing is written except creating the output directory.
pub fn parse_and_validate<I, T>(args: I) -> Result<CommandSpec, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string()))?;
    let spec = match cli.command {
        Sub::Optimize(c) => {
            let ov = common_overrides(&c)?;
            let (tree, origin) = read_tree(c.config.as_deref())?;
            let prob: OptProblem = overrides::resolve(tree, &ov, &origin)?;
            prob.validate().map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
            CommandSpec { command: Command::Optimize(prob), out: c.out, check: c.check, print_config: c.print_config }
        }
        Sub::Feasibility { airframe, separation, out, check } => {
            if !(separation > 0.0) {
                return Err(CliError::Config("separation must be positive".into()));
            }
            let (model, source) = match airframe {
                Some(p) => {
                    if !p.exists() {
                        return Err(CliError::File(format!("{}: file not found", p.display())));
                    }
                    (io::load_airframe(&p)?, p.display().to_string())
                }
                None => (presets::reference_unit(), "reference angles".to_string()),
            };
            CommandSpec { command: Command::Feasibility { airframe: model, source, separation }, out, check, print_config: false }
        }
        Sub::Simulate { common, scenario, plot } => {
            let mut c = common;
            scenario_override(scenario, &mut c.set)?;
            let ov = common_overrides(&c)?;
            let (tree, origin) = read_tree(c.config.as_deref())?;
            let spec: ScenarioSpec = overrides::resolve(tree, &ov, &origin)?;
            spec.validate()?;
            CommandSpec { command: Command::Simulate { spec, plot }, out: c.out, check: c.check, print_config: c.print_config }
        }
        Sub::Sweep { common, scenario, seeds, vary, min_success } => {
            let mut c = common;
            scenario_override(scenario, &mut c.set)?;
            let ov = common_overrides(&c)?;
            let axes = grid_axes(&vary)?;
            if let Some((k, _)) = axes.iter().find(|(k, _)| ov.iter().any(|(o, _)| o == k)) {
                return Err(CliError::Conflict(format!("`{k}` is both set and varied")));
            }
            if seeds == 0 {
                return Err(CliError::Config("--seeds must be at least 1".into()));
            }
            let (tree, origin) = read_tree(c.config.as_deref())?;
            let mut combos: Vec<Vec<(String, Value)>> = vec![Vec::new()];
            for (k, vals) in &axes {
                combos = combos.into_iter().flat_map(|base| vals.iter().map(move |v| [base.clone(), vec![(k.clone(), v.clone())]].concat())).collect();
            }
            let mut grid = Vec::with_capacity(combos.len());
            for params in combos {
                let all: Vec<(String, Value)> = ov.iter().cloned().chain(params.iter().cloned()).collect();
                let spec: ScenarioSpec = overrides::resolve(tree.clone(), &all, &origin)?;
                spec.validate()?;
                grid.push(GridPoint { params, spec });
            }
            let kind = grid[0].spec.scenario;
            let min_success = min_success.unwrap_or(if kind == ScenarioKind::Assembly { CHECK_ASSEMBLY_RATE } else { 1.0 });
            if !(0.0..=1.0).contains(&min_success) {
                return Err(CliError::Config("--min-success must lie in [0, 1]".into()));
            }
            CommandSpec { command: Command::Sweep { grid, seeds, min_success }, out: c.out, check: c.check, print_config: c.print_config }
        }
        Sub::Plot { csv, out } => {
            if !csv.exists() {
                return Err(CliError::File(format!("{}: file not found", csv.display())));
            }
            let text = std::fs::read_to_string(&csv).map_err(|e| CliError::File(format!("{}: {e}", csv.display())))?;
            let table = Table::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", csv.display())))?;
            if table.column("t").is_none() {
                return Err(CliError::Config(format!("{}: no `t` column", csv.display())));
            }
            CommandSpec { command: Command::Plot { table, source: csv }, out, check: false, print_config: false }
        }
    };
    if !spec.print_config {
        ensure_out_dir(&spec.out)?;
    }
    Ok(spec)
}

/// What a command produced.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Short machine-readable text for standard output.
    pub stdout: String,
    /// Missed thresholds; only filled when `--check` was given.
    pub check_failures: Vec<String>,
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn text(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, content).map_err(|e| CliError::File(format!("{}: {e}", path.display())))?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let s = serde_json::to_string_pretty(value).map_err(|e| CliError::File(e.to_string()))? + "\n";
        self.text(name, &s)
    }
}

#[derive(Debug, Serialize)]
struct FeasibilityOutput<'a> {
    schema_version: u32,
    source: &'a str,
    separation: f64,
    unit: FeasibilityReport,
    assembled: FeasibilityReport,
    yaw_capability: YawCapability,
}

#[derive(Debug, Serialize)]
struct YawCapability {
    unit: f64,
    assembled: f64,
    ratio: f64,
}

#[derive(Debug, Serialize)]
struct SweepPointSummary {
    params: serde_json::Map<String, Value>,
    runs: u64,
    successes: u64,
    success_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_altitude_excursion: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SweepOutput {
    schema_version: u32,
    scenario: ScenarioKind,
    seeds: u64,
    min_success: f64,
    points: Vec<SweepPointSummary>,
}

fn optimize_checks(r: &OptResult) -> Vec<String> {
    let mut v = Vec::new();
    if !r.feasible {
        v.push("optimized design violates the hover constraints".to_string());
    }
    if r.assembled_f_min < CHECK_ASSEMBLED_F_MIN {
        v.push(format!("assembled f_min {:.3} N < {CHECK_ASSEMBLED_F_MIN} N", r.assembled_f_min));
    }
    if r.assembled_tau_min < CHECK_ASSEMBLED_TAU_MIN {
        v.push(format!("assembled tau_min {:.4} N m < {CHECK_ASSEMBLED_TAU_MIN} N m", r.assembled_tau_min));
    }
    let sym = symmetry_error(&r.design);
    if sym >= CHECK_SYMMETRY {
        v.push(format!("symmetry error {sym:.4} rad >= {CHECK_SYMMETRY} rad"));
    }
    v
}

fn summary_checks(s: &Summary) -> Vec<String> {
    if s.success {
        Vec::new()
    } else {
        vec![format!("{} seed {}: {}", s.scenario.name(), s.seed, s.failure.as_deref().unwrap_or("unsuccessful"))]
    }
}

/// Run a validated command, writing its artifacts under `spec.out`.
pub fn execute(spec: &CommandSpec) -> Result<Outcome, CliError> {
    if spec.print_config {
        let text = serde_json::to_string_pretty(&spec.resolved_config()).expect("serializable") + "\n";
        return Ok(Outcome { stdout: text, ..Outcome::default() });
    }
    let mut w = Writer { dir: &spec.out, files: Vec::new() };
    let mut failures = Vec::new();
    let stdout;
    match &spec.command {
        Command::Optimize(prob) => {
            w.json("config.resolved.json", prob)?;
            log::info!("optimizing with seed {}", prob.seed);
            let r = optimize(prob);
            let unit = r.unit_model(prob);
            w.json("opt_result.json", &r)?;
            io::write_file(&spec.out.join("airframe.toml"), &AirframeFile::from_model(&unit))?;
            w.files.push(spec.out.join("airframe.toml"));
            failures = optimize_checks(&r);
            stdout = serde_json::to_string(&r).expect("serializable") + "\n";
        }
        Command::Feasibility { airframe, source, separation } => {
            let joined = presets::assembled(airframe, *separation);
            let num = |e: dockflight_core::feasibility::FeasibilityError| CliError::Numerical(e.to_string());
            let unit = feasibility_report(airframe).map_err(num)?;
            let assembled = feasibility_report(&joined).map_err(num)?;
            let (yu, ya) = (yaw_torque_capability(airframe), yaw_torque_capability(&joined));
            let out = FeasibilityOutput {
                schema_version: REPORT_SCHEMA_VERSION,
                source,
                separation: *separation,
                unit,
                assembled,
                yaw_capability: YawCapability { unit: yu, assembled: ya, ratio: ya / yu },
            };
            w.json("feasibility.json", &out)?;
            if !(out.yaw_capability.ratio >= CHECK_YAW_RATIO) {
                failures.push(format!("yaw capability ratio {:.3} < {CHECK_YAW_RATIO}", out.yaw_capability.ratio));
            }
            for (name, r) in [("unit", &out.unit), ("assembled", &out.assembled)] {
                if !(r.f_min > 0.0 && r.tau_min > 0.0) {
                    failures.push(format!("{name} margins not positive (f {:.3}, tau {:.3})", r.f_min, r.tau_min));
                }
            }
            stdout = serde_json::to_string(&out).expect("serializable") + "\n";
        }
        Command::Simulate { spec: s, plot } => {
            w.json("config.resolved.json", s)?;
            let a = run_scenario(s)?;
            let csv = a.csv();
            w.text("telemetry.csv", &csv)?;
            w.text("summary.json", &a.summary_json())?;
            for (name, content) in &a.extra {
                w.text(name, content)?;
            }
            if *plot {
                let table = Table::parse(&csv).map_err(CliError::Numerical)?;
                for (name, svg) in svg::render_all(&table) {
                    w.text(&name, &svg)?;
                }
            }
            failures = summary_checks(&a.summary);
            stdout = serde_json::to_string(&a.summary).expect("serializable") + "\n";
        }
        Command::Sweep { grid, seeds, min_success } => {
            w.json("config.resolved.json", &spec.resolved_config())?;
            let jobs: Vec<(usize, ScenarioSpec)> = grid
                .iter()
                .enumerate()
                .flat_map(|(gi, g)| {
                    (0..*seeds).map(move |k| {
                        let mut s = g.spec.clone();
                        s.seed = g.spec.seed + k;
                        (gi, s)
                    })
                })
                .collect();
            // results come back in job order whatever the thread count
            let results: Vec<Result<Summary, SimError>> = jobs.par_iter().map(|(_, s)| run_scenario(s).map(|a| a.summary)).collect();
            let mut rows = Vec::with_capacity(results.len());
            for r in results {
                rows.push(r?);
            }
            w.text("sweep.csv", &sweep_csv(grid, &jobs, &rows))?;
            let mut points = Vec::new();
            for (gi, g) in grid.iter().enumerate() {
                let mine: Vec<&Summary> = jobs.iter().zip(&rows).filter(|((j, _), _)| *j == gi).map(|(_, s)| s).collect();
                let successes = mine.iter().filter(|s| s.success).count() as u64;
                let rmses: Vec<f64> = mine.iter().filter_map(|s| s.rmse).collect();
                let exc = mine.iter().filter_map(|s| s.max_altitude_excursion).fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v))));
                let rate = successes as f64 / *seeds as f64;
                let params: serde_json::Map<String, Value> = g.params.iter().cloned().collect();
                if rate < *min_success {
                    failures.push(format!("{} {}: success rate {rate:.3} < {min_success}", g.spec.scenario.name(), Value::Object(params.clone())));
                }
                points.push(SweepPointSummary {
                    params,
                    runs: *seeds,
                    successes,
                    success_rate: rate,
                    mean_rmse: (!rmses.is_empty()).then(|| rmses.iter().sum::<f64>() / rmses.len() as f64),
                    max_altitude_excursion: exc,
                });
            }
            let out = SweepOutput { schema_version: REPORT_SCHEMA_VERSION, scenario: grid[0].spec.scenario, seeds: *seeds, min_success: *min_success, points };
            w.json("sweep.json", &out)?;
            stdout = serde_json::to_string(&out).expect("serializable") + "\n";
        }
        Command::Plot { table, .. } => {
            let charts = svg::render_all(table);
            if charts.is_empty() {
                return Err(CliError::Config("no plottable columns in the CSV".into()));
            }
            for (name, svg) in charts {
                w.text(&name, &svg)?;
            }
            stdout = w.files.iter().map(|p| format!("{}\n", p.display())).collect();
        }
    }
    Ok(Outcome { files: w.files, stdout, check_failures: if spec.check { failures } else { Vec::new() } })
}

fn sweep_csv(grid: &[GridPoint], jobs: &[(usize, ScenarioSpec)], rows: &[Summary]) -> String {
    let keys: Vec<&String> = grid.first().map(|g| g.params.iter().map(|(k, _)| k).collect()).unwrap_or_default();
    let metric_keys: std::collections::BTreeSet<&String> = rows.iter().flat_map(|s| s.metrics.keys()).collect();
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let mut out = String::new();
    let mut header: Vec<String> = vec!["point".into()];
    header.extend(keys.iter().map(|k| k.to_string()));
    header.extend(["seed", "success", "simulated_time", "rmse", "max_altitude_excursion", "peak_torque"].map(String::from));
    header.extend(metric_keys.iter().map(|k| k.to_string()));
    header.push("failure".into());
    out.push_str(&header.join(","));
    out.push('\n');
    for ((gi, spec), s) in jobs.iter().zip(rows) {
        let mut r: Vec<String> = vec![gi.to_string()];
        r.extend(grid[*gi].params.iter().map(|(_, v)| v.to_string().replace(',', ";").replace('"', "")));
        r.extend([spec.seed.to_string(), s.success.to_string(), format!("{:.3}", s.simulated_time), cell(s.rmse), cell(s.max_altitude_excursion), cell(s.peak_torque)]);
        r.extend(metric_keys.iter().map(|k| cell(s.metrics.get(*k).copied())));
        let f = s.failure.clone().unwrap_or_default().replace('"', "'");
        r.push(if f.contains(',') { format!("\"{f}\"") } else { f });
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}
