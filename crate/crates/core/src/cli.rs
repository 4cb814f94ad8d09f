//! Command-line front end.
//!
//! Options resolve in three layers: built-in defaults, then an optional flat
//! `--config` file, then explicit flags. The fully resolved set, seed
//! included, is written into every artifact.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::config::{apply_gains, apply_runway, resolved, ConfigError, KeyValues};
use crate::control::{GuidanceGains, RunwaySpec};
use crate::dynamics::{Control, DynParams, Trajectory};
use crate::estimation::QualityMonitor;
use crate::harness::{
    compute_metrics, generate_il_dataset, landing_scenario, perturbation_sweep, run_trials,
    tracking_scenario, trial_seeds, write_sweep_csv, write_trials_csv, Maneuver, PerturbationKind,
    PolicySpec, Scenario, SweepLevel, TrialConfig, TrialResult, TrialSim,
};
use crate::link::{
    run_loop, LinkConfig, LoopOptions, MemoryEnd, Mode, PilotScript, Transport, UdpTransport,
};
use crate::percept::{AppearanceRanges, RenderConfig};
use crate::rng::SeedTree;
use crate::sysid::{
    add_state_noise, excitation_flights, fit_params, ExcitationConfig, FitResult,
    StateActionDataset,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(io) => CliError::Runtime(format!("config: {io}")),
            other => CliError::Usage(format!("config: {other}")),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "falconwing",
    version,
    about = "Indoor fixed-wing autonomy toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run tracking or landing trials and write metrics, per-trial rows and trajectories.
    Simulate(SimulateArgs),
    /// Fit dynamics parameters to trajectory CSVs.
    Sysid(SysidArgs),
    /// Success rate of a policy across leader appearance perturbations.
    Sweep(SweepArgs),
    /// Export an imitation-learning dataset flown by the noisy state expert.
    Dataset(DatasetArgs),
    /// Fly one trial through the ground link at 20 Hz and log every tick.
    Linkdemo(LinkdemoArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Root seed; every random stream derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Simulation step (s).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Dynamics parameters: a JSON object or a path to one (fit results accepted).
    #[arg(long)]
    pub params: Option<String>,
    /// Worker threads for independent trials.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Flat key=value file; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// tracking | landing
    #[arg(long)]
    pub task: Option<String>,
    /// left-s-descent | right-s-ascent | right-sharp-climb | straight | all
    #[arg(long)]
    pub maneuver: Option<String>,
    /// state | vision
    #[arg(long)]
    pub policy: Option<String>,
    /// Trials per maneuver.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Leader scale factor in [0.5, 2].
    #[arg(long)]
    pub scale: Option<f64>,
    /// Salt-and-pepper fraction on leader pixels in [0, 0.3].
    #[arg(long = "salt-pepper")]
    pub salt_pepper: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SysidArgs {
    /// Trajectory CSV files to fit.
    #[arg(long, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Generate an excitation dataset into the output directory and fit it.
    #[arg(long)]
    pub generate: bool,
    /// Gaussian state noise added to generated flights.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Multiplier applied to the initial guess.
    #[arg(long = "guess-scale")]
    pub guess_scale: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Comma-separated leader scale levels in [0.5, 2].
    #[arg(long)]
    pub scale: Option<String>,
    /// Comma-separated salt-and-pepper levels in [0, 0.3].
    #[arg(long = "salt-pepper")]
    pub salt_pepper: Option<String>,
    /// Leader maneuver (default straight).
    #[arg(long)]
    pub maneuver: Option<String>,
    /// state | vision (default vision)
    #[arg(long)]
    pub policy: Option<String>,
    /// Trials per level.
    #[arg(long)]
    pub trials: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    /// Number of recorded trajectories.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Leader maneuver (default left-s-descent).
    #[arg(long)]
    pub maneuver: Option<String>,
    /// Std of the noise injected into the expert (throttle, aileron, pitch, yaw).
    #[arg(long = "expert-noise")]
    pub expert_noise: Option<f64>,
    /// Leader scale factor in [0.5, 2].
    #[arg(long)]
    pub scale: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct LinkdemoArgs {
    /// UDP base port; the ground station listens on port + 1.
    #[arg(long)]
    pub port: Option<u16>,
    /// udp | memory
    #[arg(long)]
    pub transport: Option<String>,
    /// Frame drop probability.
    #[arg(long)]
    pub drop: Option<f64>,
    /// Frame latency in ticks.
    #[arg(long)]
    pub latency: Option<usize>,
    /// Simulated duration (s).
    #[arg(long)]
    pub duration: Option<f64>,
    /// Tick at which the pilot switches to manual.
    #[arg(long = "manual-at")]
    pub manual_at: Option<usize>,
    /// Tick at which the pilot hands back to autonomy.
    #[arg(long = "autonomous-at")]
    pub autonomous_at: Option<usize>,
    /// state | vision
    #[arg(long)]
    pub policy: Option<String>,
    /// Leader maneuver (default straight).
    #[arg(long)]
    pub maneuver: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

const COMMON_KEYS: [&str; 5] = ["seed", "out", "dt", "params", "jobs"];

/// Options after merging defaults, config file and flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: &'static str,
    pub seed: u64,
    pub out: PathBuf,
    pub dt: f64,
    pub jobs: usize,
    pub params: DynParams,
    pub gains: GuidanceGains,
    pub runway: RunwaySpec,
    /// Every resolved option as text.
    pub entries: KeyValues,
}

impl RunConfig {
    /// `# key = value` lines for CSV and log headers.
    pub fn header(&self) -> String {
        format!(
            "falconwing {}\n{}",
            self.command,
            self.entries.to_text().trim_end()
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .entries
            .keys()
            .map(|k| (k.to_string(), self.entries.get(k).unwrap_or("").into()))
            .collect();
        serde_json::Value::Object(map)
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        Ok(self.entries.value(key)?)
    }

    fn require(&self, key: &str) -> Result<&str, CliError> {
        self.entries.get(key).ok_or_else(|| {
            let mut cmd = Cli::command();
            cmd.build();
            let usage = cmd
                .find_subcommand_mut(self.command)
                .map(|c| c.render_usage().to_string())
                .unwrap_or_default();
            CliError::Usage(format!(
                "missing required option --{}\n\n{usage}",
                key.replace('_', "-")
            ))
        })
    }
}

/// Parses a parameter JSON object, inline or from a file.
pub fn load_params(source: &str) -> Result<DynParams, CliError> {
    let text = if source.trim_start().starts_with('{') {
        source.to_string()
    } else {
        fs::read_to_string(source)
            .map_err(|e| CliError::Runtime(format!("params file {source}: {e}")))?
    };
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("params: {e}")))?;
    let inner = value.get("params").cloned().unwrap_or(value);
    let params: DynParams =
        serde_json::from_value(inner).map_err(|e| CliError::Usage(format!("params: {e}")))?;
    if !params.is_valid() {
        return Err(CliError::Usage(
            "params: every coefficient must be positive and finite".into(),
        ));
    }
    Ok(params)
}

fn resolve(
    command: &'static str,
    common: &CommonArgs,
    flags: &[(&str, Option<String>)],
    extra: &[&str],
) -> Result<RunConfig, CliError> {
    let mut kv = match &common.config {
        Some(path) => KeyValues::load(path)?,
        None => KeyValues::default(),
    };
    let allowed: Vec<&str> = COMMON_KEYS.iter().chain(extra).copied().collect();
    kv.check_keys(&allowed)?;
    let common_flags = [
        ("seed", common.seed.map(|v| v.to_string())),
        ("out", common.out.as_ref().map(|p| p.display().to_string())),
        ("dt", common.dt.map(|v| v.to_string())),
        ("params", common.params.clone()),
        ("jobs", common.jobs.map(|v| v.to_string())),
    ];
    for (k, v) in common_flags.iter().chain(flags) {
        if let Some(v) = v {
            kv.insert(k, v);
        }
    }
    let seed = kv.value("seed")?.unwrap_or(0);
    let dt: f64 = kv.value("dt")?.unwrap_or(crate::DEFAULT_DT);
    if !(dt > 0.0 && dt <= 0.2) {
        return Err(CliError::Usage(format!("dt must be in (0, 0.2], got {dt}")));
    }
    let jobs = kv.value("jobs")?.unwrap_or(1usize).max(1);
    let out = PathBuf::from(kv.get("out").unwrap_or(command).to_string());
    let params = match kv.get("params") {
        Some(p) => load_params(p)?,
        None => DynParams::reference(),
    };
    let mut gains = GuidanceGains::for_params(&params);
    apply_gains(&mut gains, &kv)?;
    let mut runway = RunwaySpec::default();
    apply_runway(&mut runway, &kv)?;

    let mut entries = kv.clone();
    entries.insert("seed", seed);
    entries.insert("dt", dt);
    entries.insert("jobs", jobs);
    // Where results go does not change them; keep artifacts comparable across directories.
    entries.remove("out");
    if kv.get("params").is_none() {
        entries.insert(
            "params",
            serde_json::to_string(&params).expect("params are serializable"),
        );
    }
    let full = resolved(&gains, &runway);
    for k in full.keys() {
        entries.insert(k, full.get(k).unwrap_or_default());
    }
    Ok(RunConfig {
        command,
        seed,
        out,
        dt,
        jobs,
        params,
        gains,
        runway,
        entries,
    })
}

fn parse_maneuvers(name: &str) -> Result<Vec<Maneuver>, CliError> {
    if name == "all" {
        return Ok(Maneuver::EVALUATION.to_vec());
    }
    Maneuver::parse(name)
        .map(|m| vec![m])
        .ok_or_else(|| CliError::Usage(format!("unknown maneuver `{name}`")))
}

fn parse_policy(name: &str) -> Result<PolicySpec, CliError> {
    match name {
        "state" => Ok(PolicySpec::State),
        "vision" => Ok(PolicySpec::Vision),
        other => Err(CliError::Usage(format!(
            "unknown policy `{other}` (expected state or vision)"
        ))),
    }
}

fn check_range(what: &str, v: f64, range: (f64, f64)) -> Result<f64, CliError> {
    if v.is_finite() && v >= range.0 && v <= range.1 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!(
            "{what} level {v} outside [{}, {}]",
            range.0, range.1
        )))
    }
}

/// Parses a comma-separated level list.
pub fn parse_levels(list: &str, kind: PerturbationKind) -> Result<Vec<SweepLevel>, CliError> {
    let ranges = AppearanceRanges::default();
    let (what, range) = match kind {
        PerturbationKind::Scale => ("scale", ranges.scale),
        PerturbationKind::SaltPepper => ("salt-pepper", ranges.salt_pepper),
    };
    list.split(',')
        .map(|p| {
            let v: f64 = p
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("malformed {what} level `{p}`")))?;
            check_range(what, v, range).map(|value| SweepLevel { kind, value })
        })
        .collect()
}

fn trial_config(cfg: &RunConfig) -> TrialConfig {
    TrialConfig {
        params: cfg.params,
        gains: cfg.gains,
        runway: cfg.runway,
        render: RenderConfig::desk(SeedTree::new(cfg.seed).seed("background")),
        ..TrialConfig::default()
    }
}

fn tracking_scenarios(cfg: &RunConfig, maneuvers: &[Maneuver], trials: usize) -> Vec<Scenario> {
    maneuvers
        .iter()
        .flat_map(|m| {
            trial_seeds(cfg.seed, &format!("tracking/{}", m.name()), trials)
                .into_iter()
                .map(move |s| (*m, s))
        })
        .map(|(m, s)| tracking_scenario(m, s, &cfg.gains, cfg.dt))
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(runtime)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn write_trajectory(path: &Path, traj: &Trajectory, header: &str) -> Result<(), CliError> {
    let mut f = create(path)?;
    traj.write_csv(&mut f, Some(header))?;
    f.flush()?;
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let cfg = resolve(
        "simulate",
        &args.common,
        &[
            ("task", args.task.clone()),
            ("maneuver", args.maneuver.clone()),
            ("policy", args.policy.clone()),
            ("trials", args.trials.map(|v| v.to_string())),
            ("scale", args.scale.map(|v| v.to_string())),
            ("salt_pepper", args.salt_pepper.map(|v| v.to_string())),
        ],
        &[
            "task",
            "maneuver",
            "policy",
            "trials",
            "scale",
            "salt_pepper",
        ],
    )?;
    let mut cfg = cfg;
    let task = cfg.require("task")?.to_string();
    let trials: usize = cfg.get("trials")?.unwrap_or(10);
    if trials == 0 {
        return Err(CliError::Usage("trials must be positive".into()));
    }
    let policy = parse_policy(cfg.entries.get("policy").unwrap_or("state"))?;
    let ranges = AppearanceRanges::default();
    let mut trial_cfg = trial_config(&cfg);
    if let Some(s) = cfg.get::<f64>("scale")? {
        trial_cfg.appearance =
            trial_cfg
                .appearance
                .with_scale(check_range("scale", s, ranges.scale)?);
    }
    if let Some(p) = cfg.get::<f64>("salt_pepper")? {
        trial_cfg.appearance = trial_cfg.appearance.with_salt_pepper(check_range(
            "salt-pepper",
            p,
            ranges.salt_pepper,
        )?);
    }
    let scenarios = match task.as_str() {
        "tracking" => {
            let maneuvers = parse_maneuvers(cfg.require("maneuver")?)?;
            tracking_scenarios(&cfg, &maneuvers, trials)
        }
        "landing" => trial_seeds(cfg.seed, "landing", trials)
            .into_iter()
            .map(|s| landing_scenario(&cfg.runway, s, cfg.dt))
            .collect(),
        other => {
            return Err(CliError::Usage(format!(
                "unknown task `{other}` (expected tracking or landing)"
            )))
        }
    };
    cfg.entries.insert("trials", trials);
    cfg.entries.insert("policy", policy.name());

    let results = run_trials(&scenarios, &policy, &trial_cfg, cfg.jobs);
    let runway = (task == "landing").then_some(&cfg.runway);
    let metrics = compute_metrics(&results, runway).map_err(runtime)?;
    write_outputs(&cfg, &results, &metrics)?;

    println!(
        "{task}: {} trials, SR {:.3}, ATE {}, ALD {}, ART {:.3} ms",
        metrics.trials,
        metrics.sr,
        metrics.ate.map_or("n/a".into(), |v| format!("{v:.1} cm")),
        metrics.ald.map_or("n/a".into(), |v| format!("{v:.1} cm")),
        metrics.art * 1e3
    );
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn write_outputs(
    cfg: &RunConfig,
    results: &[TrialResult],
    metrics: &crate::harness::Metrics,
) -> Result<(), CliError> {
    let traj_dir = cfg.out.join("trajectories");
    fs::create_dir_all(&traj_dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", traj_dir.display())))?;
    write_json(
        &cfg.out.join("metrics.json"),
        &serde_json::json!({
            "seed": cfg.seed,
            "config": cfg.to_json(),
            "metrics": metrics,
        }),
    )?;
    let header = cfg.header();
    let mut f = create(&cfg.out.join("trials.csv"))?;
    write_trials_csv(results, &mut f, Some(&header))?;
    f.flush()?;
    for (i, r) in results.iter().enumerate() {
        let trial_header = format!("{header}\ntrial = {i}\ntrial_seed = {}", r.seed);
        write_trajectory(
            &traj_dir.join(format!("trial_{i:03}_follower.csv")),
            &r.follower,
            &trial_header,
        )?;
        if let Some(l) = &r.leader {
            write_trajectory(
                &traj_dir.join(format!("trial_{i:03}_leader.csv")),
                l,
                &trial_header,
            )?;
        }
    }
    Ok(())
}

pub fn cmd_sysid(args: &SysidArgs) -> Result<(), CliError> {
    let mut cfg = resolve(
        "sysid",
        &args.common,
        &[
            ("noise", args.noise.map(|v| v.to_string())),
            ("guess_scale", args.guess_scale.map(|v| v.to_string())),
        ],
        &["noise", "guess_scale"],
    )?;
    let noise: f64 = cfg.get("noise")?.unwrap_or(0.0);
    let guess_scale: f64 = cfg.get("guess_scale")?.unwrap_or(1.0);
    if !(noise >= 0.0 && noise.is_finite()) || !(guess_scale > 0.0 && guess_scale.is_finite()) {
        return Err(CliError::Usage(
            "noise must be >= 0 and guess-scale > 0".into(),
        ));
    }
    if !args.generate && args.input.is_empty() {
        return Err(CliError::Usage("give --input files or --generate".into()));
    }
    cfg.entries.insert("noise", noise);
    cfg.entries.insert("guess_scale", guess_scale);
    fs::create_dir_all(&cfg.out)?;

    let mut trajectories = Vec::new();
    let mut inputs = args.input.clone();
    if args.generate {
        let tree = SeedTree::new(cfg.seed);
        let exc = ExcitationConfig {
            dt: cfg.dt,
            ..ExcitationConfig::default()
        };
        let flights = excitation_flights(&cfg.params, &exc, &mut tree.stream("excitation"));
        let mut noise_rng = tree.stream("measurement-noise");
        let header = cfg.header();
        for (i, f) in flights.iter().enumerate() {
            let f = if noise > 0.0 {
                add_state_noise(f, noise, &mut noise_rng)
            } else {
                f.clone()
            };
            let path = cfg.out.join(format!("excitation_{i:03}.csv"));
            write_trajectory(&path, &f, &header)?;
            inputs.push(path);
        }
        println!("generated {} excitation flights", flights.len());
    }
    for path in &inputs {
        let file = fs::File::open(path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let traj = Trajectory::read_csv(BufReader::new(file))
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        trajectories.push(traj);
    }
    let dataset = StateActionDataset::from_trajectories(&trajectories);
    let guess = DynParams::reference().scaled(guess_scale);
    let fit: FitResult = fit_params(&dataset, &guess).map_err(runtime)?;

    let mut json = fit.to_json();
    json["seed"] = cfg.seed.into();
    json["config"] = cfg.to_json();
    json["transitions"] = dataset.len().into();
    write_json(&cfg.out.join("fit.json"), &json)?;

    println!("{:<16} {:>12} {:>12}", "parameter", "value", "stderr");
    let values = fit.params.to_array();
    for ((name, v), se) in DynParams::NAMES
        .iter()
        .zip(values)
        .zip(fit.per_param_stderr)
    {
        println!("{name:<16} {v:>12.6} {se:>12.3e}");
    }
    println!(
        "{} transitions, sse {:.3e}, {} iterations, converged {}",
        dataset.len(),
        fit.sse,
        fit.iterations,
        fit.converged
    );
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let mut cfg = resolve(
        "sweep",
        &args.common,
        &[
            ("scale", args.scale.clone()),
            ("salt_pepper", args.salt_pepper.clone()),
            ("maneuver", args.maneuver.clone()),
            ("policy", args.policy.clone()),
            ("trials", args.trials.map(|v| v.to_string())),
        ],
        &["scale", "salt_pepper", "maneuver", "policy", "trials"],
    )?;
    let mut levels = Vec::new();
    if let Some(list) = cfg.entries.get("scale") {
        levels.extend(parse_levels(list, PerturbationKind::Scale)?);
    }
    if let Some(list) = cfg.entries.get("salt_pepper") {
        levels.extend(parse_levels(list, PerturbationKind::SaltPepper)?);
    }
    if levels.is_empty() {
        return Err(CliError::Usage(
            "give --scale and/or --salt-pepper levels".into(),
        ));
    }
    let maneuvers = parse_maneuvers(cfg.entries.get("maneuver").unwrap_or("straight"))?;
    let policy = parse_policy(cfg.entries.get("policy").unwrap_or("vision"))?;
    let trials: usize = cfg.get("trials")?.unwrap_or(10);
    if trials == 0 {
        return Err(CliError::Usage("trials must be positive".into()));
    }
    cfg.entries.insert("trials", trials);
    cfg.entries.insert("policy", policy.name());

    let scenarios = tracking_scenarios(&cfg, &maneuvers, trials);
    let rows = perturbation_sweep(&scenarios, &levels, &policy, &trial_config(&cfg), cfg.jobs);
    fs::create_dir_all(&cfg.out)?;
    let mut f = create(&cfg.out.join("sweep.csv"))?;
    write_sweep_csv(&rows, &mut f, Some(&cfg.header()))?;
    f.flush()?;
    for r in &rows {
        println!(
            "{:?} {:>5}: SR {:.3} over {}",
            r.level.kind, r.level.value, r.sr, r.trials
        );
    }
    Ok(())
}

pub fn cmd_dataset(args: &DatasetArgs) -> Result<(), CliError> {
    let mut cfg = resolve(
        "dataset",
        &args.common,
        &[
            ("trials", args.trials.map(|v| v.to_string())),
            ("maneuver", args.maneuver.clone()),
            ("expert_noise", args.expert_noise.map(|v| v.to_string())),
            ("scale", args.scale.map(|v| v.to_string())),
        ],
        &["trials", "maneuver", "expert_noise", "scale"],
    )?;
    let trials: usize = cfg.get("trials")?.unwrap_or(2);
    let sigma: f64 = cfg.get("expert_noise")?.unwrap_or(0.05);
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(CliError::Usage("expert-noise must be >= 0".into()));
    }
    let maneuvers = parse_maneuvers(cfg.entries.get("maneuver").unwrap_or("left-s-descent"))?;
    let mut trial_cfg = trial_config(&cfg);
    if let Some(s) = cfg.get::<f64>("scale")? {
        let range = AppearanceRanges::default().scale;
        trial_cfg.appearance = trial_cfg
            .appearance
            .with_scale(check_range("scale", s, range)?);
    }
    cfg.entries.insert("trials", trials);
    cfg.entries.insert("expert_noise", sigma);

    let scenarios = tracking_scenarios(&cfg, &maneuvers, trials);
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("run_config.txt"), cfg.entries.to_text())?;
    let manifest =
        generate_il_dataset(&scenarios, &trial_cfg, &[sigma; 4], &cfg.out).map_err(runtime)?;
    println!(
        "{} frames over {} trajectories in {}",
        manifest.rows.len(),
        scenarios.len(),
        cfg.out.display()
    );
    Ok(())
}

pub fn cmd_linkdemo(args: &LinkdemoArgs) -> Result<(), CliError> {
    let mut cfg = resolve(
        "linkdemo",
        &args.common,
        &[
            ("port", args.port.map(|v| v.to_string())),
            ("transport", args.transport.clone()),
            ("drop", args.drop.map(|v| v.to_string())),
            ("latency", args.latency.map(|v| v.to_string())),
            ("duration", args.duration.map(|v| v.to_string())),
            ("manual_at", args.manual_at.map(|v| v.to_string())),
            ("autonomous_at", args.autonomous_at.map(|v| v.to_string())),
            ("policy", args.policy.clone()),
            ("maneuver", args.maneuver.clone()),
        ],
        &[
            "port",
            "transport",
            "drop",
            "latency",
            "duration",
            "manual_at",
            "autonomous_at",
            "policy",
            "maneuver",
        ],
    )?;
    let link = LinkConfig {
        drop_probability: cfg.get("drop")?.unwrap_or(0.0),
        latency_ticks: cfg.get("latency")?.unwrap_or(0),
        seed: SeedTree::new(cfg.seed).seed("link"),
        ..LinkConfig::default()
    };
    if !link.is_valid() {
        return Err(CliError::Usage("drop must be in [0, 1]".into()));
    }
    let duration: f64 = cfg.get("duration")?.unwrap_or(10.0);
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(CliError::Usage("duration must be positive".into()));
    }
    let port: u16 = cfg.get("port")?.unwrap_or(crate::link::DEFAULT_PORT);
    let transport = cfg.entries.get("transport").unwrap_or("udp").to_string();
    let policy = parse_policy(cfg.entries.get("policy").unwrap_or("state"))?;
    let maneuver = parse_maneuvers(cfg.entries.get("maneuver").unwrap_or("straight"))?[0];
    let mut mode_changes = Vec::new();
    if let Some(t) = cfg.get::<usize>("manual_at")? {
        mode_changes.push((t, Mode::Manual));
    }
    if let Some(t) = cfg.get::<usize>("autonomous_at")? {
        mode_changes.push((t, Mode::Autonomous));
    }
    for (k, v) in [
        ("drop", link.drop_probability.to_string()),
        ("latency", link.latency_ticks.to_string()),
        ("duration", duration.to_string()),
        ("port", port.to_string()),
        ("transport", transport.clone()),
        ("policy", policy.name().to_string()),
        ("maneuver", maneuver.name().to_string()),
    ] {
        cfg.entries.insert(k, v);
    }

    let trial_cfg = trial_config(&cfg);
    let seed = trial_seeds(cfg.seed, &format!("tracking/{}", maneuver.name()), 1)[0];
    let scenario = tracking_scenario(maneuver, seed, &cfg.gains, cfg.dt).with_duration(duration);
    let mut policy_impl = policy.build(&scenario.kind, &trial_cfg);
    let trim = Control::new(cfg.gains.trim_throttle, 0.0, 0.0, 0.0);
    let options = LoopOptions {
        pilot: PilotScript {
            mode_changes,
            manual_control: Some(trim),
        },
        degrade: None,
    };

    let (mut air, mut ground): (Box<dyn Transport>, Box<dyn Transport>) = match transport.as_str() {
        "udp" => {
            let (a, g) = UdpTransport::loopback_pair(port)
                .map_err(|e| CliError::Runtime(format!("udp loopback on port {port}: {e}")))?;
            (Box::new(a), Box::new(g))
        }
        "memory" => {
            let (a, g) = MemoryEnd::pair();
            (Box::new(a), Box::new(g))
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown transport `{other}` (expected udp or memory)"
            )))
        }
    };
    let log = run_loop(
        TrialSim::new(&scenario, &trial_cfg),
        policy_impl.as_mut(),
        QualityMonitor::default(),
        &link,
        air.as_mut(),
        ground.as_mut(),
        options,
    );

    fs::create_dir_all(&cfg.out)?;
    let mut f = create(&cfg.out.join("link_log.jsonl"))?;
    serde_json::to_writer(
        &mut f,
        &serde_json::json!({"seed": cfg.seed, "config": cfg.to_json()}),
    )
    .map_err(runtime)?;
    f.write_all(b"\n")?;
    f.write_all(log.to_jsonl().as_bytes())?;
    f.flush()?;
    println!(
        "{} ticks, {} frames dropped, {} safety flags, {} rejected messages",
        log.ticks.len(),
        log.dropped_ticks().len(),
        log.safety_ticks().len(),
        log.rejected_messages
    );
    if log.closed_early {
        return Err(CliError::Runtime(format!(
            "transport closed after {} ticks; partial log written",
            log.ticks.len()
        )));
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sysid(a) => cmd_sysid(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Dataset(a) => cmd_dataset(a),
        Command::Linkdemo(a) => cmd_linkdemo(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
