use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use fly0::grounding::{Grounder, RemoteConfig, RemoteGrounder};
use fly0::harness::{
    aggregate, batch_eval_with, export_trajectory, load_scenario, save_scenario, EpisodeRow, HarnessError,
    MetricsReport, DEFAULT_TRIALS,
};
use fly0::optimizer::audit::{run_audit, AuditConfig};
use fly0::optimizer::CostWeights;
use fly0::pipeline::{mock_grounder, run_episode_logged, NavigatorConfig};
use fly0::simulator::{gen_random_scenario, Scenario, ScenarioParams};

/// Exit status when every episode succeeded.
const EXIT_OK: u8 = 0;
/// Exit status when at least one episode or check failed.
const EXIT_FAILURES: u8 = 1;
/// Exit status for bad arguments, configuration or input files.
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "fly0", version, about = "Vision-language goal grounding and B-spline flight in simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fly one episode and print its report.
    Run(RunArgs),
    /// Evaluate scenarios over repeated seeded trials.
    Batch(BatchArgs),
    /// Write random cluttered scenarios as JSON.
    Gen(GenArgs),
    /// Compare analytic cost gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Evaluate the full stack against variants with components removed.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON navigator configuration; fields override the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pixel noise of the mock grounder (px).
    #[arg(long)]
    pixel_noise: Option<f64>,
    /// Range-proportional depth noise factor.
    #[arg(long)]
    depth_noise: Option<f64>,
    /// Ground the target once instead of every period.
    #[arg(long)]
    no_regrounding: bool,
    /// Modeled grounding latency per query (s).
    #[arg(long)]
    latency: Option<f64>,
    /// Remote grounding endpoint; the simulated oracle is used when unset.
    #[arg(long, env = "FLY0_GROUNDER_URL")]
    grounder_url: Option<String>,
    /// Bearer token sent to the remote endpoint.
    #[arg(long, env = "FLY0_GROUNDER_TOKEN", hide_env_values = true)]
    grounder_token: Option<String>,
    /// Remote request timeout (s).
    #[arg(long, env = "FLY0_GROUNDER_TIMEOUT", default_value_t = 30.0)]
    grounder_timeout: f64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-tick trace CSV. Optimizer traces of every planning cycle go
    /// next to it as `<stem>.plans.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// CSV of the last planned trajectory.
    #[arg(long)]
    export: Option<PathBuf>,
    /// Export sample rate (Hz).
    #[arg(long, default_value_t = 50.0)]
    export_rate: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    ablation: AblationFlags,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct BatchArgs {
    /// Scenario files or directories of `*.json` files.
    #[arg(long, num_args = 1.., required = true)]
    scenarios: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: u32,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    ablation: AblationFlags,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct AblationFlags {
    /// Lift targets at a fixed range instead of reading depth.
    #[arg(long)]
    no_depth: bool,
    /// Fly the straight-line initialization without optimization.
    #[arg(long)]
    no_opt: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Output directory; files are named `scenario_<seed>.json`.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    min_obstacles: Option<usize>,
    #[arg(long)]
    max_obstacles: Option<usize>,
    #[arg(long)]
    world_size: Option<f64>,
    /// Probability that an obstacle is placed across the direct path.
    #[arg(long)]
    corridor_probability: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, num_args = 1.., required = true)]
    scenarios: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: u32,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    /// Write `{"full": report, "no_depth": report, "no_opt": report}` here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    ablation: AblationFlags,
    #[command(flatten)]
    config: ConfigArgs,
}

/// A failure that maps to an exit status.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Episode(_) => Failure::Runtime(e.into()),
            _ => Failure::Config(e.into()),
        }
    }
}

fn config_error(e: anyhow::Error) -> Failure {
    Failure::Config(e)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Batch(args) => cmd_batch(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    match outcome {
        Ok(true) => ExitCode::from(EXIT_OK),
        Ok(false) => ExitCode::from(EXIT_FAILURES),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURES)
        }
    }
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn build_config(args: &ConfigArgs, ablation: &AblationFlags) -> anyhow::Result<NavigatorConfig> {
    let mut config = match &args.config {
        None => NavigatorConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let patch: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let mut doc = serde_json::to_value(NavigatorConfig::default())?;
            merge(&mut doc, patch);
            serde_json::from_value(doc).with_context(|| format!("invalid configuration in {}", path.display()))?
        }
    };
    if let Some(sigma) = args.pixel_noise {
        config.grounding.pixel_noise_sigma = sigma;
    }
    if let Some(eta) = args.depth_noise {
        config.depth_noise = eta;
    }
    if let Some(latency) = args.latency {
        config.grounding.latency_model = latency;
    }
    if args.no_regrounding {
        config.regrounding = false;
    }
    apply_ablation(&mut config, ablation.no_depth, ablation.no_opt);
    config.validate().map_err(anyhow::Error::msg)?;
    Ok(config)
}

fn apply_ablation(config: &mut NavigatorConfig, no_depth: bool, no_opt: bool) {
    if no_depth {
        config.use_depth = false;
    }
    if no_opt {
        config.planner.optimize = false;
    }
}

type GrounderFactory = Box<dyn Fn(&Scenario, &NavigatorConfig, u64) -> Box<dyn Grounder>>;

fn grounder_factory(args: &ConfigArgs) -> anyhow::Result<GrounderFactory> {
    match &args.grounder_url {
        None => Ok(Box::new(|s, c, seed| Box::new(mock_grounder(s, c, seed)))),
        Some(url) => {
            if !(args.grounder_timeout > 0.0 && args.grounder_timeout.is_finite()) {
                bail!("grounder timeout must be positive, got {}", args.grounder_timeout);
            }
            let remote = RemoteConfig {
                url: url.clone(),
                token: args.grounder_token.clone(),
                timeout: Duration::from_secs_f64(args.grounder_timeout),
            };
            Ok(Box::new(move |_, _, _| Box::new(RemoteGrounder::new(remote.clone()))))
        }
    }
}

fn scenario_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn collect_scenarios(inputs: &[PathBuf]) -> Result<Vec<(String, Scenario)>, Failure> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("reading {}", input.display()))
                .map_err(config_error)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    files
        .iter()
        .map(|p| {
            load_scenario(p)
                .map(|s| (scenario_name(p), s))
                .with_context(|| format!("loading {}", p.display()))
                .map_err(config_error)
        })
        .collect()
}

fn emit_report(json: &str, path: Option<&Path>) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, json).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn summary(label: &str, r: &MetricsReport) -> String {
    format!(
        "{label:<10} SR {:6.2}%  NE {:8.3} m  Time {:7.2} s  ({} episodes)",
        r.sr, r.ne_mean, r.time_mean, r.episodes
    )
}

fn cmd_run(args: RunArgs) -> Result<bool, Failure> {
    let config = build_config(&args.config, &args.ablation).map_err(config_error)?;
    let factory = grounder_factory(&args.config).map_err(config_error)?;
    let scenario = load_scenario(&args.scenario)
        .with_context(|| format!("loading {}", args.scenario.display()))
        .map_err(config_error)?;
    let mut grounder = factory(&scenario, &config, args.seed);
    let (result, log) =
        run_episode_logged(&scenario, &config, args.seed, grounder.as_mut()).map_err(anyhow::Error::msg)?;

    if let Some(path) = &args.trace {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        log.write_ticks_csv(BufWriter::new(file))
            .with_context(|| format!("writing {}", path.display()))?;
        let plans_path = path.with_extension("plans.csv");
        let file = File::create(&plans_path).with_context(|| format!("creating {}", plans_path.display()))?;
        log.write_plans_csv(BufWriter::new(file))
            .with_context(|| format!("writing {}", plans_path.display()))?;
    }
    if let Some(path) = &args.export {
        match log.plans.last() {
            Some(plan) => {
                export_trajectory(&plan.trajectory, args.export_rate, path).map_err(anyhow::Error::from)?;
            }
            None => eprintln!("no trajectory was planned; nothing exported"),
        }
    }
    let row = EpisodeRow::new(0, args.seed, &result);
    let report = aggregate(vec![(scenario_name(&args.scenario), vec![row])], &config, 1, args.seed);
    emit_report(&report.to_json(), args.report.as_deref())?;
    eprintln!("{}", summary("run", &report));
    Ok(!report.has_failures())
}

fn cmd_batch(args: BatchArgs) -> Result<bool, Failure> {
    let config = build_config(&args.config, &args.ablation).map_err(config_error)?;
    let factory = grounder_factory(&args.config).map_err(config_error)?;
    let scenarios = collect_scenarios(&args.scenarios)?;
    let report = batch_eval_with(&scenarios, &config, args.trials, args.base_seed, factory.as_ref())?;
    emit_report(&report.to_json(), args.report.as_deref())?;
    eprintln!("{}", summary("batch", &report));
    Ok(!report.has_failures())
}

fn cmd_gen(args: GenArgs) -> Result<bool, Failure> {
    let mut params = ScenarioParams::default();
    if let Some(v) = args.min_obstacles {
        params.min_obstacles = v;
    }
    if let Some(v) = args.max_obstacles {
        params.max_obstacles = v;
    }
    if let Some(v) = args.world_size {
        params.world_size = v;
    }
    if let Some(v) = args.corridor_probability {
        params.corridor_probability = v;
    }
    if let Some(v) = args.delta {
        params.delta = v;
    }
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(config_error)?;
    for seed in args.seed..args.seed.saturating_add(args.count) {
        let scenario = gen_random_scenario(seed, &params)
            .with_context(|| format!("generating seed {seed}"))
            .map_err(config_error)?;
        let path = args.out.join(format!("scenario_{seed}.json"));
        save_scenario(&scenario, &path)?;
        println!("{}", path.display());
    }
    Ok(true)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<bool, Failure> {
    let config = AuditConfig {
        instances: args.instances,
        seed: args.seed,
        tolerance: args.tolerance,
    };
    let report = run_audit(&config, &CostWeights::default()).map_err(|e| config_error(e.into()))?;
    for term in &report.terms {
        println!(
            "{:<3} max relative error {:.3e}  ({} checked, {} skipped)",
            term.term, term.max_relative_error, term.checked, term.skipped
        );
    }
    let worst = report.terms.iter().map(|t| t.max_relative_error).fold(0.0, f64::max);
    println!(
        "{} instances, max relative error {worst:.3e}: {}",
        report.instances,
        if report.passed { "pass" } else { "FAIL" }
    );
    Ok(report.passed)
}

fn cmd_ablate(args: AblateArgs) -> Result<bool, Failure> {
    let base = build_config(&args.config, &AblationFlags { no_depth: false, no_opt: false }).map_err(config_error)?;
    let factory = grounder_factory(&args.config).map_err(config_error)?;
    let scenarios = collect_scenarios(&args.scenarios)?;
    let (no_depth, no_opt) = if args.ablation.no_depth || args.ablation.no_opt {
        (args.ablation.no_depth, args.ablation.no_opt)
    } else {
        (true, true)
    };
    let mut variants = vec![("full", base)];
    if no_depth {
        let mut c = base;
        apply_ablation(&mut c, true, false);
        variants.push(("no_depth", c));
    }
    if no_opt {
        let mut c = base;
        apply_ablation(&mut c, false, true);
        variants.push(("no_opt", c));
    }
    let mut doc = serde_json::Map::new();
    for (label, config) in variants {
        let report = batch_eval_with(&scenarios, &config, args.trials, args.base_seed, factory.as_ref())?;
        println!("{}", summary(label, &report));
        doc.insert(label.to_string(), serde_json::to_value(&report).map_err(anyhow::Error::from)?);
    }
    if let Some(path) = &args.report {
        let mut json = serde_json::to_string_pretty(&Value::Object(doc)).map_err(anyhow::Error::from)?;
        json.push('\n');
        emit_report(&json, Some(path))?;
    }
    Ok(true)
}
