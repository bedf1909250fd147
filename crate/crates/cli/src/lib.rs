//! Command-line front end: suite generation, single simulations and grading
//! runs with report bundles.

pub mod plugin;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use cranebench::controllers::{corpus, corpus_config, make_controller, ControllerConfig};
use cranebench::grading::{
    check_completion, render_report, render_svg, score, CompletionReport, EquilibriumMode, Marks, Rubric,
};
use cranebench::harness::{
    run_suite, simulate, ControllerHooks, ControllerState, HookResult, SimOptions, Trajectory, ZeroController,
};
use cranebench::testcases::{
    default_testcase, generate_suite, PublicTestcase, ShapeFamily, SuiteFile, SuiteSpec, Testcase,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVOCATION: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invocation(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invocation(_) => EXIT_INVOCATION,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.to_path_buf(), message: e.to_string() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cranebench", version, about = "Gantry-crane MPC benchmark harness and grader")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded testcase suite.
    Generate(GenerateArgs),
    /// Run a controller over a suite, grade it and write the report bundle.
    Grade(GradeArgs),
    /// Simulate one testcase and write its trajectory files.
    Simulate(SimulateArgs),
    /// List the built-in controllers.
    List,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub count: usize,
    #[arg(long, default_value_t = ShapeFamily::RegionEllipses)]
    pub family: ShapeFamily,
    /// Suite file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ControllerArgs {
    /// Built-in controller name, `zero`, or `exec:<command>` for a plug-in
    /// process speaking JSON lines on stdin/stdout.
    #[arg(long)]
    pub controller: Option<String>,
    /// Controller configuration JSON; fields left out take the reference
    /// values of its formulation.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Per-testcase wall-clock budget.
    #[arg(long, default_value_t = 120.0)]
    pub watchdog_secs: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GradeArgs {
    #[arg(long)]
    pub suite: PathBuf,
    #[command(flatten)]
    pub controller: ControllerArgs,
    /// Rubric JSON; the built-in rubric when absent.
    #[arg(long)]
    pub rubric: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = default_parallelism())]
    pub parallelism: usize,
    /// Accept equilibrium at any sample instead of only at the final time.
    #[arg(long)]
    pub legacy_equilibrium: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Suite or single-testcase JSON; the family default when absent.
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// Testcase name within the suite; the first one when absent.
    #[arg(long)]
    pub testcase: Option<String>,
    #[arg(long, default_value_t = ShapeFamily::RegionEllipses)]
    pub family: ShapeFamily,
    #[command(flatten)]
    pub controller: ControllerArgs,
    /// Directory for trajectory.{csv,json,svg}.
    #[arg(long)]
    pub out: PathBuf,
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

pub type Factory = Arc<dyn Fn(&PublicTestcase) -> Box<dyn ControllerHooks> + Send + Sync>;

/// Where the controller hooks come from.
#[derive(Clone)]
pub enum ControllerSource {
    Reference(ControllerConfig),
    Zero,
    Exec(String),
    Custom(Factory),
}

impl std::fmt::Debug for ControllerSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControllerSource::Reference(c) => write!(f, "Reference({})", c.formulation),
            ControllerSource::Zero => f.write_str("Zero"),
            ControllerSource::Exec(cmd) => write!(f, "Exec({cmd:?})"),
            ControllerSource::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl ControllerSource {
    /// Resolves `--controller` and `--config`.
    pub fn from_args(args: &ControllerArgs) -> Result<Self, CliError> {
        let config = match &args.config {
            Some(path) => {
                let text = read_file(path)?;
                Some(parse_config(&text).map_err(|e| CliError::Invocation(format!("{}: {e}", path.display())))?)
            }
            None => None,
        };
        let source = match (args.controller.as_deref(), config) {
            (None, None) => ControllerSource::Reference(ControllerConfig::default()),
            (None, Some(c)) => ControllerSource::Reference(c),
            (Some("zero"), None) => ControllerSource::Zero,
            (Some(name), None) if name.starts_with("exec:") => {
                let cmd = name["exec:".len()..].trim();
                if cmd.is_empty() {
                    return Err(CliError::Invocation("exec: needs a command".into()));
                }
                ControllerSource::Exec(cmd.to_string())
            }
            (Some(name), None) => ControllerSource::Reference(corpus_config(name).ok_or_else(|| unknown_controller(name))?),
            (Some(name), Some(c)) => {
                if corpus_config(name).is_none() {
                    return Err(unknown_controller(name));
                }
                if c.formulation.as_str() != name {
                    return Err(CliError::Invocation(format!(
                        "--controller {name} conflicts with formulation {} in --config",
                        c.formulation
                    )));
                }
                ControllerSource::Reference(c)
            }
        };
        if let ControllerSource::Reference(c) = &source {
            c.validate().map_err(|e| CliError::Invocation(e.to_string()))?;
        }
        Ok(source)
    }

    pub fn factory(&self) -> Factory {
        match self.clone() {
            ControllerSource::Reference(config) => Arc::new(move |view: &PublicTestcase| match make_controller(&config, view) {
                Ok(hooks) => hooks,
                Err(e) => Box::new(FailingHooks(e.to_string())) as Box<dyn ControllerHooks>,
            }),
            ControllerSource::Zero => Arc::new(|_: &PublicTestcase| Box::new(ZeroController) as Box<dyn ControllerHooks>),
            ControllerSource::Exec(cmd) => {
                Arc::new(move |_: &PublicTestcase| Box::new(plugin::ExecController::new(cmd.clone())) as Box<dyn ControllerHooks>)
            }
            ControllerSource::Custom(f) => f,
        }
    }
}

fn unknown_controller(name: &str) -> CliError {
    let names: Vec<&str> = corpus().iter().map(|(n, _)| *n).collect();
    CliError::Invocation(format!("unknown controller {name:?}; expected one of {}, zero, exec:<command>", names.join(", ")))
}

/// Config fields default to the reference tuning of the named formulation.
fn parse_config(text: &str) -> Result<ControllerConfig, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let formulation = match value.get("formulation") {
        Some(f) => serde_json::from_value(f.clone()).map_err(|e| e.to_string())?,
        None => ControllerConfig::default().formulation,
    };
    let mut base = serde_json::to_value(ControllerConfig::reference(formulation)).map_err(|e| e.to_string())?;
    let (Some(b), Some(o)) = (base.as_object_mut(), value.as_object()) else {
        return Err("controller config must be a JSON object".into());
    };
    for (k, v) in o {
        if !b.contains_key(k) {
            return Err(format!("unknown config field {k:?}"));
        }
        b.insert(k.clone(), v.clone());
    }
    serde_json::from_value(base).map_err(|e| e.to_string())
}

/// Hooks standing in for a controller that could not be built; the reason
/// surfaces as a setup fault.
struct FailingHooks(String);

impl ControllerHooks for FailingHooks {
    fn setup(&self, _tc: &PublicTestcase) -> HookResult<ControllerState> {
        Err(self.0.clone().into())
    }
    fn target_generator(&self, _: f64, _: &[f64], _: &mut ControllerState) -> HookResult<Vec<f64>> {
        Err(self.0.clone().into())
    }
    fn state_estimator(&self, _: f64, _: &[f64], _: &[f64], _: &mut ControllerState) -> HookResult<Vec<f64>> {
        Err(self.0.clone().into())
    }
    fn mp_controller(&self, _: f64, _: &[f64], _: &[f64], _: &mut ControllerState) -> HookResult<Vec<f64>> {
        Err(self.0.clone().into())
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Accepts a suite file, a bare testcase array, or a single testcase.
pub fn load_suite(path: &Path) -> Result<Vec<Testcase>, CliError> {
    let text = read_file(path)?;
    let invalid = |e: String| CliError::Invocation(format!("{}: {e}", path.display()));
    let suite = if let Ok(f) = serde_json::from_str::<SuiteFile>(&text) {
        f.testcases
    } else if let Ok(v) = serde_json::from_str::<Vec<Testcase>>(&text) {
        v
    } else {
        vec![serde_json::from_str::<Testcase>(&text).map_err(|e| invalid(format!("not a suite or testcase: {e}")))?]
    };
    if suite.is_empty() {
        return Err(invalid("suite contains no testcases".into()));
    }
    for tc in &suite {
        tc.validate().map_err(|e| invalid(e.to_string()))?;
    }
    let mut names: Vec<&str> = suite.iter().map(|t| t.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("testcase names must be unique".into()));
    }
    Ok(suite)
}

fn sim_options(args: &ControllerArgs) -> Result<SimOptions, CliError> {
    if !(args.watchdog_secs > 0.0 && args.watchdog_secs.is_finite()) {
        return Err(CliError::Invocation("--watchdog-secs must be positive".into()));
    }
    Ok(SimOptions { watchdog: Some(Duration::from_secs_f64(args.watchdog_secs)), ..SimOptions::default() })
}

pub fn suite_json(file: &SuiteFile) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(file).expect("suites serialize");
    out.push(b'\n');
    out
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<SuiteFile, CliError> {
    if args.count == 0 {
        return Err(CliError::Invocation("--count must be at least 1".into()));
    }
    let spec = SuiteSpec::new(args.family, args.count, args.seed);
    let testcases = generate_suite(&spec).map_err(|e| CliError::Invocation(e.to_string()))?;
    let file = SuiteFile::new(Some(spec), testcases);
    write_file(&args.out, &suite_json(&file))?;
    Ok(file)
}

#[derive(Debug, Clone)]
pub struct GradeOutcome {
    pub trajectories: Vec<Trajectory>,
    pub reports: Vec<CompletionReport>,
    pub marks: Marks,
}

pub fn cmd_grade(args: &GradeArgs) -> Result<GradeOutcome, CliError> {
    let source = ControllerSource::from_args(&args.controller)?;
    cmd_grade_with(args, &source)
}

/// `cmd_grade` with an already resolved controller; `--controller` and
/// `--config` are ignored.
pub fn cmd_grade_with(args: &GradeArgs, source: &ControllerSource) -> Result<GradeOutcome, CliError> {
    if args.parallelism == 0 {
        return Err(CliError::Invocation("--parallelism must be at least 1".into()));
    }
    let opts = sim_options(&args.controller)?;
    let rubric = match &args.rubric {
        Some(path) => {
            let r: Rubric = serde_json::from_str(&read_file(path)?)
                .map_err(|e| CliError::Invocation(format!("{}: {e}", path.display())))?;
            r.validate().map_err(|e| CliError::Invocation(format!("{}: {e}", path.display())))?;
            r
        }
        None => Rubric::default(),
    };
    let suite = load_suite(&args.suite)?;
    let factory = source.factory();
    let trajectories = run_suite(&suite, &|view: &PublicTestcase| factory(view), args.parallelism, &opts);
    let mode = if args.legacy_equilibrium { EquilibriumMode::Legacy } else { EquilibriumMode::FinalTime };
    let reports: Vec<CompletionReport> =
        suite.iter().zip(&trajectories).map(|(tc, traj)| check_completion(traj, tc, &traj.plant_params, mode)).collect();
    let marks = score(&reports, &rubric).map_err(CliError::Invocation)?;
    let rendered = render_report(&suite, &trajectories, &reports, Some(&marks), &args.out);
    if let Some((path, message)) = rendered.errors.first() {
        return Err(CliError::Io { path: path.clone(), message: message.clone() });
    }
    Ok(GradeOutcome { trajectories, reports, marks })
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Trajectory, CliError> {
    let source = ControllerSource::from_args(&args.controller)?;
    let opts = sim_options(&args.controller)?;
    let tc = match &args.suite {
        None => default_testcase(args.family),
        Some(path) => {
            let suite = load_suite(path)?;
            match &args.testcase {
                None => suite.into_iter().next().expect("load_suite rejects empty suites"),
                Some(name) => suite
                    .into_iter()
                    .find(|t| &t.name == name)
                    .ok_or_else(|| CliError::Invocation(format!("no testcase named {name:?} in {}", path.display())))?,
            }
        }
    };
    let traj = simulate(&tc, source.factory()(&cranebench::testcases::public_view(&tc)), &opts);
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).map_err(|e| CliError::io(&args.out, e))?;
    write_file(&args.out.join("trajectory.csv"), &csv)?;
    let json = traj.to_json().expect("trajectories serialize");
    write_file(&args.out.join("trajectory.json"), json.as_bytes())?;
    write_file(&args.out.join("trajectory.svg"), render_svg(&tc, &traj).as_bytes())?;
    Ok(traj)
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVOCATION } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|f| {
            println!("wrote {} testcases to {}", f.testcases.len(), a.out.display());
        }),
        Command::Grade(a) => cmd_grade(a).map(|g| {
            for (r, m) in g.reports.iter().zip(&g.marks.testcases) {
                let status = if r.overall_ok { "pass" } else { "FAIL" };
                println!("{status} {:<32} {:>6.2} / {:.2}", r.testcase, m.marks, m.max_marks);
            }
            println!("total {:.2} / {:.2}; report in {}", g.marks.total, g.marks.max_total, a.out.display());
        }),
        Command::Simulate(a) => cmd_simulate(a).map(|t| {
            println!("{} samples, {} error events; files in {}", t.len(), t.error_events.len(), a.out.display());
        }),
        Command::List => {
            for (name, c) in corpus() {
                println!("{name:<18} horizon {:>3}, planner {}", c.horizon, if c.planner { "on" } else { "off" });
            }
            println!("{:<18} always zero input", "zero");
            println!("{:<18} plug-in process speaking JSON lines", "exec:<command>");
            Ok(())
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
