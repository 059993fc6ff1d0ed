use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use veria_core::analytics::{default_lambda_grid, lambda_sweep, report, sweep_svg, AnalyticsError, ReportFormat};
use veria_core::benchmarks::yield_row;
use veria_core::dataset_io::{list_assets, list_manifests, read_log, resolve_sensor, DatasetError, ProviderConfig, RunConfig, RunLayout};
use veria_core::placement::Interval;
use veria_core::pipeline::{build_providers, compose_run, demo_config, generate, load_scenes, write_demo_scenes, PipelineError};
use veria_core::pointcloud::SensorSpec;
use veria_core::providers::stub::{OutcomeModel, StubConfig};

#[derive(Debug, Parser)]
#[command(name = "veria", version, about = "Verified camera/LiDAR object insertion pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize and verify candidates, writing the candidate log and asset database.
    Generate(GenerateArgs),
    /// Insert verified assets into their scenes.
    Compose(ComposeArgs),
    /// Print the yield report for a candidate log.
    Report(ReportArgs),
    /// Recompute yields over a grid of size tolerances.
    Sweep(SweepArgs),
    /// Check a configuration, its providers and optionally a scene directory.
    Validate(ValidateArgs),
    /// Write synthetic scenes and a matching stub configuration.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use stub providers regardless of the configured endpoint.
    #[arg(long)]
    stub: bool,
    /// Overrides the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the size tolerance.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Directory of scene manifests.
    #[arg(long)]
    scenes: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the configured value or the core count.
    #[arg(long)]
    workers: Option<usize>,
    /// Reconstruct semantically rejected candidates too.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    full_marginals: Option<bool>,
    /// Sample the box center height uniformly in [LO, HI] instead of resting on the ground.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    free_z: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct ComposeArgs {
    /// Run configuration; defaults to the config.json stored in the run directory.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Csv,
}

#[derive(Debug, Args)]
struct LogArgs {
    /// Run directory holding candidates.jsonl.
    #[arg(long, conflicts_with = "log", required_unless_present = "log")]
    out: Option<PathBuf>,
    /// Candidate log path.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Minimum point count; defaults to the run config or 5.
    #[arg(long)]
    p_n: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    log: LogArgs,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    log: LogArgs,
    /// Comma-separated tolerances.
    #[arg(long, value_delimiter = ',', conflicts_with = "lambda")]
    grid: Option<Vec<f64>>,
    /// Evaluate a single tolerance.
    #[arg(long)]
    lambda: Option<f64>,
    /// Also write the yield curve as SVG.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Also load every manifest in this directory.
    #[arg(long)]
    scenes: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DemoArgs {
    /// Output directory; receives scenes/ and config.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long, default_value = "nuscenes-32")]
    sensor: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Image resolution relative to 960x540.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, value_delimiter = ',', default_value = "bicycle,motorcycle,construction vehicle")]
    categories: Vec<String>,
    #[arg(long, default_value_t = 10)]
    per_scene: usize,
    /// Stub outcome rates from a reference yield row, as DATASET/VERIFIER/DEPTH
    /// (e.g. nuscenes/qwen3vl/moge2). All candidates pass when omitted.
    #[arg(long)]
    rates: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Unreachable(String),
    Empty(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Unreachable(_) => 3,
            Failure::Empty(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Unreachable(m) | Failure::Empty(m) | Failure::Other(m) => m,
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } => Failure::Other(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Dataset(d) => d.into(),
            PipelineError::ProviderUnreachable(m) => Failure::Unreachable(m),
            PipelineError::Config(m) => Failure::Config(m),
        }
    }
}

impl From<AnalyticsError> for Failure {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::EmptyLog => Failure::Empty(e.to_string()),
            AnalyticsError::MissingRatios(_) => Failure::Other(e.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn apply_overrides(cfg: &mut RunConfig, a: &ConfigArgs) {
    if a.stub && !matches!(cfg.providers, ProviderConfig::Stub(_)) {
        cfg.providers = ProviderConfig::Stub(StubConfig::default());
    }
    if let Some(s) = a.seed {
        cfg.run_seed = s;
    }
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
}

fn cmd_generate(a: GenerateArgs) -> CliResult {
    let mut cfg = load_config(a.cfg.config.as_deref())?;
    apply_overrides(&mut cfg, &a.cfg);
    if let Some(fm) = a.full_marginals {
        cfg.full_marginals = fm;
    }
    if let Some(z) = &a.free_z {
        cfg.placement.free_z = Some(Interval::new(z[0], z[1]));
    }
    if a.workers.is_some() {
        cfg.workers = a.workers;
    }
    cfg.validate()?;
    let scenes = load_scenes(&a.scenes, &cfg)?;
    if scenes.is_empty() {
        return Err(Failure::Config(format!("no scene manifests in {}", a.scenes.display())));
    }
    let providers = build_providers(&cfg)?;
    let workers = cfg.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let layout = RunLayout::new(&a.out);
    let summary = generate(&cfg, providers, &scenes, &layout, workers)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    if summary.log_records == 0 {
        return Err(Failure::Empty("no candidates were logged".into()));
    }
    Ok(())
}

fn cmd_compose(a: ComposeArgs) -> CliResult {
    let layout = RunLayout::new(&a.out);
    let cfg_path = a.config.clone().unwrap_or_else(|| layout.config());
    let mut cfg = RunConfig::load(&cfg_path)?;
    if let Some(s) = a.seed {
        cfg.run_seed = s;
    }
    let scenes = load_scenes(&a.scenes, &cfg)?;
    if list_assets(&layout.assets())?.is_empty() {
        return Err(Failure::Empty(format!("no assets under {}", layout.assets().display())));
    }
    let summary = compose_run(&cfg, &scenes, &layout)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    if summary.inserted == 0 {
        return Err(Failure::Empty("no asset could be inserted".into()));
    }
    Ok(())
}

fn log_inputs(a: &LogArgs) -> Result<(PathBuf, usize), Failure> {
    let (log, cfg_path) = match (&a.log, &a.out) {
        (Some(l), _) => (l.clone(), l.with_file_name("config.json")),
        (None, Some(o)) => {
            let layout = RunLayout::new(o);
            (layout.log(), layout.config())
        }
        (None, None) => unreachable!("clap requires one of --out/--log"),
    };
    let p_n = match a.p_n {
        Some(p) => p,
        None if cfg_path.is_file() => RunConfig::load(&cfg_path)?.p_n,
        None => RunConfig::default().p_n,
    };
    if !log.is_file() {
        return Err(Failure::Empty(format!("no candidate log at {}", log.display())));
    }
    Ok((log, p_n))
}

fn cmd_report(a: ReportArgs) -> CliResult {
    let (log, p_n) = log_inputs(&a.log)?;
    let records = read_log(&log)?;
    let format = match a.format {
        Format::Markdown => ReportFormat::Markdown,
        Format::Csv => ReportFormat::Csv,
    };
    print!("{}", report(&records, format, &default_lambda_grid(), p_n)?);
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> CliResult {
    let (log, p_n) = log_inputs(&a.log)?;
    let records = read_log(&log)?;
    let grid = match (a.grid, a.lambda) {
        (Some(g), _) => g,
        (None, Some(l)) => vec![l],
        (None, None) => default_lambda_grid(),
    };
    if let Some(bad) = grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Failure::Config(format!("tolerance {bad} outside [0, 1]")));
    }
    let points = lambda_sweep(&records, &grid, p_n)?;
    println!("lambda,n,geo,joint,joint_percent");
    for p in &points {
        println!("{:.4},{},{},{},{:.2}", p.lambda, p.n, p.geo, p.joint, p.joint_percent);
    }
    if let Some(path) = a.svg {
        std::fs::write(&path, sweep_svg(&points)).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> CliResult {
    let mut cfg = load_config(a.cfg.config.as_deref())?;
    apply_overrides(&mut cfg, &a.cfg);
    cfg.validate()?;
    println!("ok   config ({} categories, lambda {}, p_n {})", cfg.categories.len(), cfg.lambda, cfg.p_n);
    for id in ["nuscenes-32", "lyft-64"] {
        let s = resolve_sensor(id, &cfg.sensors)?;
        println!("ok   sensor {id} ({} beams)", s.elevations.len());
    }
    for s in &cfg.sensors {
        println!("ok   sensor {} ({} beams)", s.id, s.elevations.len());
    }
    for (name, c) in &cfg.categories {
        match &c.prior {
            Some(p) => println!("ok   prior {name}: {:?}", p),
            None => println!("ok   prior {name}: from describer"),
        }
    }
    build_providers(&cfg)?;
    match &cfg.providers {
        ProviderConfig::Stub(_) => println!("ok   providers: stub"),
        ProviderConfig::Http(e) => println!("ok   providers: {} healthy", e.base_url),
    }
    if let Some(dir) = &a.scenes {
        let manifests = list_manifests(dir)?;
        if manifests.is_empty() {
            return Err(Failure::Config(format!("no scene manifests in {}", dir.display())));
        }
        let scenes = load_scenes(dir, &cfg)?;
        println!("ok   scenes: {} manifests", scenes.len());
    }
    Ok(())
}

fn cmd_demo(a: DemoArgs) -> CliResult {
    if !(a.scale > 0.0 && a.scale <= 4.0) {
        return Err(Failure::Config(format!("scale {} outside (0, 4]", a.scale)));
    }
    let sensor: SensorSpec = resolve_sensor(&a.sensor, &[])?;
    let outcomes = match &a.rates {
        None => OutcomeModel::always_pass(),
        Some(key) => {
            let parts: Vec<&str> = key.split('/').collect();
            let row = match parts.as_slice() {
                [d, v, m] => yield_row(d, v, m),
                _ => None,
            };
            OutcomeModel::from_row(row.ok_or_else(|| Failure::Config(format!("unknown yield row {key:?}")))?)
        }
    };
    let cats: Vec<&str> = a.categories.iter().map(|s| s.trim()).collect();
    let cfg = demo_config(&cats, a.per_scene, outcomes);
    cfg.validate()?;
    let written = write_demo_scenes(&a.out.join("scenes"), a.count, &sensor, a.seed, a.scale)?;
    let cfg_path = a.out.join("config.json");
    veria_core::dataset_io::write_atomic(&cfg_path, serde_json::to_string_pretty(&cfg).expect("config serializes").as_bytes())?;
    println!("wrote {} scenes to {} and {}", written.len(), a.out.join("scenes").display(), cfg_path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Compose(a) => cmd_compose(a),
        Command::Report(a) => cmd_report(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Demo(a) => cmd_demo(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
