mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use gridvolt::cicopt::ModelMode;
use gridvolt::netmodel::{generate_feeder, NetworkFile};
use gridvolt::simeng::profiles::{load_series_csv, synthetic_knots, write_knots_csv};
use gridvolt::simeng::{
    baseline_losses_kwh, generate_scenarios, interpolate_profile, run_day, run_sweep, ControlMode,
    Profiles, RunSummary, SigmaReport, SimError, SweepSpec,
};
use gridvolt::Network;
use rayon::prelude::*;
use serde::Serialize;

use config::Config;

#[derive(Parser)]
#[command(
    name = "gridvolt",
    version,
    about = "LV feeder PV inverter control simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one day for one placement scenario.
    Run(Common),
    /// Run every mode over a penetration grid and placement scenarios.
    Sweep(Common),
    /// Compare the linear model against the power-flow oracle.
    Validate(Common),
    /// Write a generated feeder as a network JSON file.
    GenNetwork(GenNetwork),
    /// Write synthetic half-hourly demand and PV profiles.
    GenProfiles(GenProfiles),
}

#[derive(Args, Default)]
struct Common {
    /// JSON configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    network: Option<PathBuf>,
    /// Directory with demand.csv and pv.csv.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    mode: Option<ControlMode>,
    /// Fairness weight for cic-fair.
    #[arg(long)]
    alpha: Option<f64>,
    /// Cable type applied to every line.
    #[arg(long)]
    cable: Option<String>,
    /// Penetration level(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    penetration: Option<Vec<f64>>,
    /// Random placement scenarios per level, in addition to the two clusters.
    #[arg(long)]
    scenarios: Option<usize>,
    /// Scenario id for run and validate.
    #[arg(long)]
    scenario: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, conflicts_with = "unbalanced")]
    balanced: bool,
    #[arg(long)]
    unbalanced: bool,
    /// Also write per-minute solver diagnostics as JSON lines.
    #[arg(long)]
    solver_log: bool,
}

#[derive(Args)]
struct GenNetwork {
    #[arg(long, default_value_t = 30)]
    buses: usize,
    #[arg(long, default_value_t = 0.06)]
    spacing: f64,
    #[arg(long, default_value = "ow95")]
    cable: String,
    #[arg(long, default_value_t = 1)]
    customers_per_bus: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output file.
    #[arg(long, default_value = "network.json")]
    out: PathBuf,
}

#[derive(Args)]
struct GenProfiles {
    #[arg(long, default_value_t = 30)]
    households: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "profiles")]
    out: PathBuf,
}

enum Failure {
    Config(String),
    Simulation(String),
    Output(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Output(_) => 1,
            Failure::Config(_) => 2,
            Failure::Simulation(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Simulation(m) | Failure::Output(m) => m,
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::PowerFlow(_) | SimError::Cic(_) | SimError::Step { .. } => {
                Failure::Simulation(e.to_string())
            }
            SimError::Io(_) => Failure::Output(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn output_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Output(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRIDVOLT_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(c) => prepare(c, Some(ControlMode::Cic)).and_then(|cfg| cmd_run(&cfg)),
        Command::Sweep(c) => prepare(c, None).and_then(|cfg| cmd_sweep(&cfg)),
        Command::Validate(c) => prepare(c, None).and_then(|cfg| cmd_validate(&cfg)),
        Command::GenNetwork(g) => cmd_gen_network(&g),
        Command::GenProfiles(g) => cmd_gen_profiles(&g),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn prepare(c: Common, single_mode: Option<ControlMode>) -> Result<Config, Failure> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p).map_err(Failure::Config)?,
        None => Config::default(),
    };
    if c.network.is_some() {
        cfg.network = c.network;
    }
    if c.profiles.is_some() {
        cfg.profiles = c.profiles;
    }
    if let Some(m) = c.mode {
        cfg.settings.mode = m;
        cfg.modes = Some(vec![m]);
    } else if single_mode.is_none() && cfg.modes.is_none() {
        cfg.modes = Some(vec![
            ControlMode::Legacy,
            ControlMode::Autonomous,
            ControlMode::Cic,
        ]);
    }
    if let Some(a) = c.alpha {
        cfg.settings.fair_alpha = a;
    }
    if c.cable.is_some() {
        cfg.cable = c.cable;
    }
    if c.penetration.is_some() {
        cfg.penetrations = c.penetration;
    }
    if let Some(n) = c.scenarios {
        cfg.scenarios = n;
    }
    if let Some(s) = c.scenario {
        cfg.scenario = s;
    }
    if let Some(s) = c.seed {
        cfg.settings.seed = s;
        cfg.scenario_seed = s;
    }
    if let Some(o) = c.out {
        cfg.out = o;
    }
    if c.jobs.is_some() {
        cfg.jobs = c.jobs;
    }
    if c.balanced {
        cfg.settings.model = ModelMode::Balanced;
    }
    if c.unbalanced {
        cfg.settings.model = ModelMode::Unbalanced;
    }
    cfg.solver_log |= c.solver_log;
    cfg.validate().map_err(Failure::Config)?;
    if let Some(j) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    }
    fs::create_dir_all(&cfg.out).map_err(output_err(&cfg.out))?;
    Ok(cfg)
}

fn load_network(cfg: &Config) -> Result<Network, Failure> {
    let net: Network = match &cfg.network {
        Some(path) => {
            gridvolt::netmodel::load_network(path).map_err(|e| Failure::Config(e.to_string()))?
        }
        None => {
            let f = &cfg.feeder;
            generate_feeder(f.buses, f.spacing_km, &f.cable, f.customers_per_bus, f.seed)
                .map_err(|e| Failure::Config(e.to_string()))?
        }
    };
    match &cfg.cable {
        None => Ok(net),
        Some(cable) => {
            let mut file = net.to_file();
            for line in &mut file.lines {
                line.cable = cable.clone();
            }
            file.into_network()
                .map_err(|e| Failure::Config(e.to_string()))
        }
    }
}

fn load_profiles(cfg: &Config) -> Result<Profiles, Failure> {
    let profiles = match &cfg.profiles {
        None => gridvolt::simeng::synthetic_profiles(cfg.households, cfg.profile_seed),
        Some(dir) => Profiles {
            demand: load_series_csv(&dir.join("demand.csv"))?,
            pv: load_series_csv(&dir.join("pv.csv"))?,
        },
    };
    profiles.validate()?;
    Ok(profiles)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path).map_err(output_err(path))?);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Failure::Output(format!("{}: {e}", path.display())))?;
    writeln!(w).map_err(output_err(path))?;
    w.flush().map_err(output_err(path))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(
        File::create(path).map_err(output_err(path))?,
    ))
}

fn single_penetration(cfg: &Config) -> Result<f64, Failure> {
    match cfg.penetrations.as_deref() {
        None => Ok(0.6),
        Some([p]) => Ok(*p),
        Some(_) => Err(Failure::Config(
            "run takes a single penetration level".into(),
        )),
    }
}

#[derive(Serialize)]
struct RunOutput<'a> {
    network: String,
    settings: &'a gridvolt::simeng::SimSettings,
    summary: RunSummary,
}

fn network_label(cfg: &Config) -> String {
    match &cfg.network {
        Some(p) => p.display().to_string(),
        None => {
            let f = &cfg.feeder;
            format!(
                "generated:{}x{}km:{}:{}",
                f.buses,
                f.spacing_km,
                cfg.cable.as_deref().unwrap_or(&f.cable),
                f.seed
            )
        }
    }
}

fn cmd_run(cfg: &Config) -> Result<(), Failure> {
    let net = load_network(cfg)?;
    let profiles = load_profiles(cfg)?;
    let pen = single_penetration(cfg)?;
    let settings = cfg.settings;
    let scenarios = if pen > 0.0 {
        generate_scenarios(&net, pen, cfg.scenarios, cfg.scenario_seed)?
    } else {
        Vec::new()
    };
    let scenario = if pen > 0.0 {
        Some(scenarios.get(cfg.scenario).ok_or_else(|| {
            Failure::Config(format!(
                "scenario {} out of range (0..{})",
                cfg.scenario,
                scenarios.len()
            ))
        })?)
    } else {
        None
    };
    let pv: &[usize] = scenario.map_or(&[], |s| &s.pv_customers);
    let t0 = Instant::now();
    let baseline = baseline_losses_kwh(&net, &profiles, &settings)?;
    let day = run_day(&net, pv, &profiles, &settings)?;
    log::info!("day simulated in {:.2} s", t0.elapsed().as_secs_f64());
    let summary = RunSummary::from_day(&day, baseline, &settings, scenario)?;

    let out = &cfg.out;
    day.write_csv(create(&out.join("day_result.csv"))?)?;
    day.write_events_csv(create(&out.join("events.csv"))?)?;
    if cfg.solver_log && settings.mode.is_coordinated() {
        day.write_solver_jsonl(create(&out.join("solver.jsonl"))?)?;
    }
    write_json(
        &out.join("summary.json"),
        &RunOutput {
            network: network_label(cfg),
            settings: &settings,
            summary,
        },
    )
}

fn cmd_sweep(cfg: &Config) -> Result<(), Failure> {
    let net = load_network(cfg)?;
    let profiles = load_profiles(cfg)?;
    let spec = SweepSpec {
        modes: cfg.modes.clone().unwrap_or_default(),
        penetrations: cfg
            .penetrations
            .clone()
            .unwrap_or_else(SweepSpec::default_grid),
        n_random: cfg.scenarios,
        scenario_seed: cfg.scenario_seed,
        settings: cfg.settings,
    };
    let t0 = Instant::now();
    let res = run_sweep(&net, &profiles, &spec)?;
    log::info!(
        "{} runs in {:.1} s on {} threads",
        res.rows.len(),
        t0.elapsed().as_secs_f64(),
        rayon::current_num_threads()
    );
    let out = &cfg.out;
    res.write_runs_csv(create(&out.join("sweep_runs.csv"))?)?;
    res.write_comparison_csv(create(&out.join("comparison.csv"))?)?;
    write_json(&out.join("hosting_capacity.json"), &res.hosting)
}

#[derive(Serialize)]
struct ValidationRow {
    model: ModelMode,
    penetration: f64,
    scenario_id: usize,
    #[serde(flatten)]
    sigma: SigmaReport,
    within_bound: bool,
}

#[derive(Serialize)]
struct ValidationOutput {
    network: String,
    sigma_bound: f64,
    rows: Vec<ValidationRow>,
}

const SIGMA_BOUND: f64 = 3e-2;

fn cmd_validate(cfg: &Config) -> Result<(), Failure> {
    let net = load_network(cfg)?;
    let profiles = load_profiles(cfg)?;
    let levels = cfg
        .penetrations
        .clone()
        .unwrap_or_else(|| vec![0.3, 0.6, 0.9]);
    let mut jobs = Vec::new();
    for model in [ModelMode::Balanced, ModelMode::Unbalanced] {
        for &p in &levels {
            if p <= 0.0 {
                return Err(Failure::Config(
                    "validation needs positive penetrations".into(),
                ));
            }
            let sc = generate_scenarios(&net, p, cfg.scenarios, cfg.scenario_seed)?;
            let s = sc.get(cfg.scenario).cloned().ok_or_else(|| {
                Failure::Config(format!(
                    "scenario {} out of range (0..{})",
                    cfg.scenario,
                    sc.len()
                ))
            })?;
            jobs.push((model, s));
        }
    }
    let rows = jobs
        .par_iter()
        .map(|(model, sc)| -> Result<ValidationRow, Failure> {
            let mut settings = cfg.settings;
            settings.model = *model;
            if !settings.mode.is_coordinated() {
                settings.mode = ControlMode::Cic;
            }
            let day = run_day(&net, &sc.pv_customers, &profiles, &settings)?;
            let v_model = day
                .v_model
                .as_ref()
                .expect("coordinated run keeps model voltages");
            let sigma = gridvolt::simeng::relative_error_sigma(v_model, &day.v_oracle)?;
            Ok(ValidationRow {
                model: *model,
                penetration: sc.penetration,
                scenario_id: sc.id,
                within_bound: sigma.sigma <= SIGMA_BOUND,
                sigma,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_json(
        &cfg.out.join("validation.json"),
        &ValidationOutput {
            network: network_label(cfg),
            sigma_bound: SIGMA_BOUND,
            rows,
        },
    )
}

fn cmd_gen_network(g: &GenNetwork) -> Result<(), Failure> {
    let net: Network = generate_feeder(g.buses, g.spacing, &g.cable, g.customers_per_bus, g.seed)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let file: NetworkFile = net.to_file();
    if let Some(dir) = g.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(output_err(dir))?;
    }
    write_json(&g.out, &file)
}

fn cmd_gen_profiles(g: &GenProfiles) -> Result<(), Failure> {
    if g.households == 0 {
        return Err(Failure::Config("households must be positive".into()));
    }
    let (demand, pv) = synthetic_knots(g.households, g.seed);
    for series in demand.iter().chain(&pv) {
        interpolate_profile(series)?;
    }
    fs::create_dir_all(&g.out).map_err(output_err(&g.out))?;
    write_knots_csv(&demand, create(&g.out.join("demand.csv"))?)?;
    write_knots_csv(&pv, create(&g.out.join("pv.csv"))?)?;
    Ok(())
}
