use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use locoplan_core::client::{ModelClient, Transcript, TranscriptClient};
use locoplan_core::morphology::Thresholds;
use locoplan_core::planner::{plan, PlannerOption, PlanningContext};
use locoplan_core::sim::scene::{load_scene_file, SceneSnapshot};
use locoplan_core::sim::FailureInjection;
use locoplan_core::{MotionLibrary, SkillPrimitive};

use locoplan_gateway::config::Config;
use locoplan_gateway::experiment::{self, TrialSettings};
use locoplan_gateway::http_client::HttpModelClient;
use locoplan_gateway::metrics::{report_metrics, TrialSummary};
use locoplan_gateway::runlog::load_dir;
use locoplan_gateway::{Gateway, GatewayConfig, RunOptions, RunState, SubmitRequest};

#[derive(Parser)]
#[command(
    name = "locoplan",
    version,
    about = "Plan and run mobile-manipulation tasks from instructions"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "LOCOPLAN_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan an instruction and print the task graph.
    Plan(PlanArgs),
    /// Plan, approve and execute an instruction in simulation.
    Run(RunArgs),
    /// Batch trials over a task manifest.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Metrics over stored runs and batches.
    Report {
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        json: bool,
    },
    #[command(subcommand)]
    Library(LibraryCmd),
    #[command(subcommand)]
    Scene(SceneCmd),
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        /// Answer planning requests from this transcript.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PlanArgs {
    /// Instruction text.
    instruction: String,
    /// Scene file; the configured scene if omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Replay this transcript instead of calling the model endpoint.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Function options to offer the model (default: all).
    #[arg(long = "option", value_parser = parse_option)]
    options: Vec<PlannerOption>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// Execute without asking for approval.
    #[arg(long)]
    auto_approve: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Label for metrics.
    #[arg(long, default_value = "adhoc")]
    task: String,
    #[arg(long, value_enum, default_value_t = Fr::On)]
    fr: Fr,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Fr {
    On,
    Off,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Run seeded trials for every task in a manifest.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, value_enum, default_value_t = Fr::On)]
        fr: Fr,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Only this task.
        #[arg(long)]
        task: Option<String>,
        /// Override every skill's failure probability.
        #[arg(long)]
        failure_prob: Option<f64>,
        /// Batch file name under the data directory (default derives from the settings).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LibraryCmd {
    /// List skills with their signatures.
    List,
    /// Add a skill (JSON file) to a library file, creating it from the bundled library if needed.
    Add {
        skill: PathBuf,
        #[arg(long)]
        library: PathBuf,
    },
    /// Check a library file.
    Validate { library: PathBuf },
}

#[derive(Subcommand)]
enum SceneCmd {
    /// Check a scene file.
    Validate { scene: PathBuf },
}

fn parse_option(s: &str) -> Result<PlannerOption, String> {
    s.parse()
        .map_err(|e: <PlannerOption as std::str::FromStr>::Err| e.to_string())
}

type CliResult = Result<(), String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = Config::load(cli.config.as_deref()).and_then(|config| dispatch(cli.command, &config));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command, config: &Config) -> CliResult {
    match command {
        Command::Plan(args) => cmd_plan(&args, config),
        Command::Run(args) => cmd_run(args, config),
        Command::Experiment(ExperimentCmd::Run {
            manifest,
            trials,
            fr,
            seed,
            task,
            failure_prob,
            out,
        }) => cmd_experiment(config, &manifest, trials, fr, seed, task.as_deref(), failure_prob, out),
        Command::Report { task, json } => cmd_report(config, task.as_deref(), json),
        Command::Library(cmd) => cmd_library(cmd, config),
        Command::Scene(SceneCmd::Validate { scene }) => {
            load_scene_file(&scene).map_err(|e| e.to_string())?;
            println!("{}: ok", scene.display());
            Ok(())
        }
        Command::Serve { bind, transcript } => cmd_serve(config, bind, transcript.as_deref()),
    }
}

fn library(config: &Config) -> Result<MotionLibrary, String> {
    match &config.library {
        Some(p) => MotionLibrary::load_library(p).map_err(|e| e.to_string()),
        None => Ok(MotionLibrary::default_library()),
    }
}

fn thresholds(config: &Config) -> Result<Thresholds, String> {
    config
        .thresholds
        .as_deref()
        .map_or(Ok(Thresholds::default()), Thresholds::load)
}

fn injection(config: &Config) -> Result<FailureInjection, String> {
    config
        .injection
        .as_deref()
        .map_or(Ok(FailureInjection::default()), FailureInjection::load)
}

fn scene(path: Option<&Path>, config: &Config) -> Result<SceneSnapshot, String> {
    let path = path
        .or(config.scene.as_deref())
        .ok_or("no scene given (use --scene or configure one)")?;
    load_scene_file(path).map_err(|e| e.to_string())
}

fn client(transcript: Option<&Path>, config: &Config) -> Result<Arc<dyn ModelClient>, String> {
    match transcript {
        Some(p) => Ok(Arc::new(TranscriptClient::new(Transcript::load(p)?))),
        None => Ok(Arc::new(HttpModelClient::from_config(&config.model)?)),
    }
}

fn options(args: &PlanArgs) -> Vec<PlannerOption> {
    if args.options.is_empty() {
        PlannerOption::ALL.to_vec()
    } else {
        args.options.clone()
    }
}

fn cmd_plan(args: &PlanArgs, config: &Config) -> CliResult {
    let lib = library(config)?;
    let scene = scene(args.scene.as_deref(), config)?;
    let client = client(args.transcript.as_deref(), config)?;
    let ctx = PlanningContext::new(&lib, &scene).with_options(options(args));
    let (graph, rounds) = plan(&args.instruction, &ctx, client.as_ref()).map_err(|e| e.to_string())?;
    eprintln!("valid task graph after {rounds} round(s)");
    println!("{}", graph.to_json());
    Ok(())
}

fn cmd_run(args: RunArgs, config: &Config) -> CliResult {
    let gateway = Gateway::open(GatewayConfig {
        library: library(config)?,
        client: client(args.plan.transcript.as_deref(), config)?,
        thresholds: thresholds(config)?,
        injection: injection(config)?,
        default_scene: scene(args.plan.scene.as_deref(), config)?,
        runs_dir: Some(config.runs_dir()),
    })
    .map_err(|e| e.to_string())?;
    let req = SubmitRequest {
        instruction: args.plan.instruction.clone(),
        scene: None,
        options: RunOptions {
            task: args.task,
            planner_options: options(&args.plan).into_iter().collect(),
            recovery: RunOptions::default().recovery.filter(|_| args.fr == Fr::On),
            ..RunOptions::default()
        },
        seed: args.seed,
        auto_approve: args.auto_approve,
    };
    let id = gateway.submit_instruction(req).map_err(|e| e.to_string())?;
    let record = gateway.get_run(&id).map_err(|e| e.to_string())?;
    println!("run {id}");
    if record.state == RunState::Failed {
        for issue in &record.planning.issues {
            eprintln!("  {issue}");
        }
        return Err(record.error.unwrap_or_else(|| "planning failed".into()));
    }
    if record.state == RunState::AwaitingApproval {
        if let Some(g) = &record.graph {
            println!("{}", g.to_json());
        }
        print!("execute this plan? [y/N] ");
        io::stdout().flush().map_err(|e| e.to_string())?;
        let mut answer = String::new();
        io::stdin().lock().read_line(&mut answer).map_err(|e| e.to_string())?;
        if answer.trim().eq_ignore_ascii_case("y") {
            gateway.approve(&id).map_err(|e| e.to_string())?;
        } else {
            gateway.abort(&id).map_err(|e| e.to_string())?;
        }
    }
    for e in gateway.stream_events(&id, 0).map_err(|e| e.to_string())? {
        println!("{}", serde_json::to_string(&e).expect("event serializes"));
    }
    let state = gateway.wait_terminal(&id, Duration::MAX).map_err(|e| e.to_string())?;
    println!("state {state}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_experiment(
    config: &Config,
    manifest: &Path,
    trials: u64,
    fr: Fr,
    seed: u64,
    task: Option<&str>,
    failure_prob: Option<f64>,
    out: Option<PathBuf>,
) -> CliResult {
    let lib = library(config)?;
    let tasks = experiment::prepare_tasks(manifest, &lib, task).map_err(|e| e.to_string())?;
    let mut settings = TrialSettings::new(trials, seed, fr == Fr::On);
    settings.thresholds = thresholds(config)?;
    settings.injection = FailureInjection {
        rng_seed: seed,
        default_failure_prob: failure_prob.or(injection(config)?.default_failure_prob),
        ..injection(config)?
    };
    settings.injection.validate()?;
    let mut lines = Vec::new();
    for t in &tasks {
        experiment::run_trials(t, &settings, &lib, |l| lines.push(l)).map_err(|e| e.to_string())?;
    }
    let name = out.unwrap_or_else(|| {
        let fr = if fr == Fr::On { "fr-on" } else { "fr-off" };
        PathBuf::from(format!("{}-{fr}-seed{seed}-n{trials}.jsonl", task.unwrap_or("all")))
    });
    let path = config.batches_dir().join(name);
    experiment::write_batch(&path, &lines).map_err(|e| e.to_string())?;
    let summaries: Vec<TrialSummary> = lines.iter().map(|l| l.summary()).collect();
    let report = report_metrics(&summaries, None).map_err(|e| e.to_string())?;
    print!("{}", report.to_table());
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_report(config: &Config, task: Option<&str>, json: bool) -> CliResult {
    let mut summaries: Vec<TrialSummary> = load_dir(&config.runs_dir())
        .map_err(|e| e.to_string())?
        .iter()
        .map(TrialSummary::from)
        .collect();
    let batches = experiment::read_batch_dir(&config.batches_dir()).map_err(|e| e.to_string())?;
    summaries.extend(batches.iter().map(|l| l.summary()));
    let report = report_metrics(&summaries, task).map_err(|e| e.to_string())?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn cmd_library(cmd: LibraryCmd, config: &Config) -> CliResult {
    match cmd {
        LibraryCmd::List => {
            for s in library(config)?.list_skills(None) {
                println!("{}", s.signature());
            }
        }
        LibraryCmd::Add { skill, library } => {
            let mut lib = if library.exists() {
                MotionLibrary::load_library(&library).map_err(|e| e.to_string())?
            } else {
                MotionLibrary::default_library()
            };
            let text = std::fs::read_to_string(&skill).map_err(|e| format!("{}: {e}", skill.display()))?;
            let spec: SkillPrimitive = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", skill.display()))?;
            let name = spec.name.clone();
            lib.register_skill(spec).map_err(|e| e.to_string())?;
            lib.save_library(&library).map_err(|e| e.to_string())?;
            println!("added {name} ({} skills)", lib.len());
        }
        LibraryCmd::Validate { library } => {
            let lib = MotionLibrary::load_library(&library).map_err(|e| e.to_string())?;
            println!("{}: ok ({} skills)", library.display(), lib.len());
        }
    }
    Ok(())
}

fn cmd_serve(config: &Config, bind: Option<String>, transcript: Option<&Path>) -> CliResult {
    // The blocking HTTP client must be built outside the async runtime.
    let client = client(transcript, config)?;
    let gateway = Gateway::open(GatewayConfig {
        library: library(config)?,
        client,
        thresholds: thresholds(config)?,
        injection: injection(config)?,
        default_scene: scene(None, config)?,
        runs_dir: Some(config.runs_dir()),
    })
    .map_err(|e| e.to_string())?;
    let bind = bind.unwrap_or_else(|| config.bind.clone());
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(locoplan_gateway::http::serve(gateway, &bind))
        .map_err(|e| e.to_string())
}
