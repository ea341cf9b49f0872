use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use adpmpc::audit::{audit, GridSpec};
use adpmpc::bench::benchmark;
use adpmpc::config::{ScenarioConfig, System};
use adpmpc::export::{write_bench, write_trace_csv};
use adpmpc::pset::{read_region_map, read_riccati_set, write_region_map, write_riccati_set};
use adpmpc::sim::{run_closed_loop, SimTrace};
use adpmpc::{AdpError, RegionRiccatiMap, RiccatiSet, Strategy};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adpmpc", version, about = "ADP-based MPC for a three-tank benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and prune the value-function sets and write them to disk.
    Offline(Common),
    /// Simulate one controller.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "adp1")]
        controller: Strategy,
    },
    /// Check the Lyapunov decrease of the closed loop on a grid.
    Stability {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        controller: Option<Strategy>,
        /// Grid spacing per axis; overrides the points-per-axis setting.
        #[arg(long)]
        grid_step: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
        /// Radius of the ball around the set-point left out of the check.
        #[arg(long)]
        exclusion: Option<f64>,
        /// Log progress while evaluating large grids.
        #[arg(long)]
        progress: bool,
    },
    /// Run every configured controller on the same scenario and compare.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Run strategies concurrently (latency figures become noisier).
        #[arg(long)]
        parallel: bool,
    },
    /// Write per-step CSV traces for plotting.
    Export {
        #[command(flatten)]
        common: Common,
        /// Keep every k-th row.
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file; the built-in default when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory (overrides the scenario's).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Previously written value-function set.
    #[arg(long)]
    pset: Option<PathBuf>,
    /// Previously written region map (needs --pset).
    #[arg(long)]
    regions: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    budget: Option<usize>,
    /// Sampling points per axis when restricting sets to regions.
    #[arg(long)]
    region_grid: Option<usize>,
    #[arg(long)]
    partitions: Option<usize>,
    /// Measurement noise standard deviation, m.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<ScenarioConfig, AdpError> {
        let mut c = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(v) = self.horizon {
            c.synthesis.horizon = v;
        }
        if let Some(v) = self.epsilon {
            c.synthesis.epsilon = v;
        }
        if let Some(v) = self.budget {
            c.synthesis.budget = v;
        }
        if let Some(v) = self.region_grid {
            c.regions.grid = v;
        }
        if let Some(v) = self.partitions {
            c.regions.partitions = v;
        }
        if let Some(v) = self.noise {
            c.simulation.noise_std = v;
        }
        if let Some(v) = self.seed {
            c.simulation.seed = v;
        }
        if let Some(v) = self.duration {
            c.simulation.duration = v;
        }
        if let Some(o) = &self.out {
            c.output.dir = o.display().to_string();
        }
        Ok(c)
    }
}

struct Artifacts {
    sys: System,
    set: Arc<RiccatiSet>,
    regions: Option<Arc<RegionRiccatiMap>>,
    out: PathBuf,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> AdpError + '_ {
    move |e| AdpError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn prepare(common: &Common, need_regions: bool) -> Result<Artifacts, AdpError> {
    let config = common.load()?;
    let out = PathBuf::from(&config.output.dir);
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let echo = out.join("scenario.toml");
    fs::write(&echo, config.to_toml()).map_err(io_err(&echo))?;
    let sys = config.build()?;
    let set = match &common.pset {
        Some(p) => {
            let f = File::open(p).map_err(io_err(p))?;
            let set = read_riccati_set(BufReader::new(f))?;
            if set.fingerprint() != sys.model.fingerprint() {
                return Err(AdpError::FingerprintMismatch {
                    expected: sys.model.fingerprint().to_owned(),
                    found: set.fingerprint().to_owned(),
                });
            }
            set
        }
        None => sys.synthesize()?,
    };
    let regions = match (&common.regions, need_regions) {
        (Some(p), _) => {
            let f = File::open(p).map_err(io_err(p))?;
            Some(read_region_map(BufReader::new(f), &set)?)
        }
        (None, true) => Some(sys.regions(&set)?),
        (None, false) => None,
    };
    Ok(Artifacts {
        sys,
        set: Arc::new(set),
        regions: regions.map(Arc::new),
        out,
    })
}

fn write_with<F>(path: &Path, f: F) -> Result<(), AdpError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn trace_path(out: &Path, s: Strategy) -> PathBuf {
    out.join(format!("trace_{}.csv", s.name()))
}

fn save_trace(a: &Artifacts, trace: &SimTrace, path: &Path) -> Result<(), AdpError> {
    write_trace_csv(trace, a.sys.plant.state_dim(), a.sys.plant.input_dim(), path)
}

/// Exit status for a finished trace: 4 when infeasibility ended it early.
fn trace_status(trace: &SimTrace) -> u8 {
    match &trace.failure {
        None => 0,
        Some(f) if f.contains("no feasible control") => 4,
        Some(_) => 3,
    }
}

fn offline(common: &Common) -> Result<u8, AdpError> {
    let a = prepare(common, true)?;
    let set_path = a.out.join("p1.pset");
    write_with(&set_path, |w| write_riccati_set(&a.set, w))?;
    let map = a.regions.as_ref().expect("regions requested");
    let map_path = a.out.join("p1.regions");
    write_with(&map_path, |w| write_region_map(map, w))?;
    println!("model fingerprint  {}", a.set.fingerprint());
    for l in a.set.level_stats() {
        println!("level {:>2}: {:>7} generated, {:>6} kept", l.level, l.generated, l.kept);
    }
    println!("|P_a|   = {}", a.set.len());
    println!("|P_a_d| = {}", map.domain().len());
    for (j, s) in map.sets().iter().enumerate() {
        println!("region {j}: {} matrices", s.len());
    }
    println!("wrote {} and {}", set_path.display(), map_path.display());
    Ok(0)
}

fn run(common: &Common, strategy: Strategy) -> Result<u8, AdpError> {
    let a = prepare(common, strategy == Strategy::Adp3)?;
    let spec = a.sys.controller(strategy, &a.set, a.regions.as_ref())?;
    let scenario = a.sys.scenario()?;
    let trace = run_closed_loop(&scenario, &spec)?;
    let path = trace_path(&a.out, strategy);
    save_trace(&a, &trace, &path)?;
    let row = adpmpc::bench::summarize(&trace, &spec, &scenario);
    print!("{}", adpmpc::bench::BenchReport { rows: vec![row] }.to_table());
    if let Some(f) = &trace.failure {
        eprintln!("run ended early: {f}");
    }
    println!("wrote {}", path.display());
    Ok(trace_status(&trace))
}

fn stability(
    common: &Common,
    controller: Option<Strategy>,
    grid_step: Option<f64>,
    points: Option<usize>,
    exclusion: Option<f64>,
    progress: bool,
) -> Result<u8, AdpError> {
    let mut config = common.load()?;
    if let Some(s) = controller {
        config.audit.strategy = s;
    }
    let strategy = config.audit.strategy;
    let a = prepare(common, strategy == Strategy::Adp3)?;
    let spec = a.sys.controller(strategy, &a.set, a.regions.as_ref())?;
    let mut cfg = a.sys.audit_config();
    if let Some(h) = grid_step {
        cfg.grid = GridSpec::Step(h);
    } else if let Some(k) = points {
        cfg.grid = GridSpec::PointsPerAxis(k);
    }
    if let Some(r) = exclusion {
        cfg.exclusion_radius = r;
    }
    cfg.progress = progress;
    let report = audit(&cfg, &spec, &a.sys.error_plant)?;
    print!("{report}");
    let path = a.out.join(format!("audit_{}.txt", strategy.name()));
    fs::write(&path, report.to_string()).map_err(io_err(&path))?;
    println!("wrote {}", path.display());
    Ok(0)
}

fn bench(common: &Common, parallel: bool) -> Result<u8, AdpError> {
    let a = prepare(common, true)?;
    let scenario = a.sys.scenario()?;
    let specs = a
        .sys
        .config
        .controller
        .strategies
        .iter()
        .map(|&s| a.sys.controller(s, &a.set, a.regions.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let (report, traces) = benchmark(&scenario, &specs, parallel)?;
    print!("{}", report.to_table());
    let path = a.out.join("bench.csv");
    write_bench(&report, &path)?;
    for (spec, trace) in specs.iter().zip(&traces) {
        save_trace(&a, trace, &trace_path(&a.out, spec.strategy()))?;
    }
    println!("wrote {} and per-strategy traces", path.display());
    Ok(traces.iter().map(trace_status).max().unwrap_or(0))
}

fn export(common: &Common, every: usize) -> Result<u8, AdpError> {
    if every == 0 {
        return Err(AdpError::Config("--every must be at least 1".into()));
    }
    let a = prepare(common, true)?;
    let scenario = a.sys.scenario()?;
    let mut status = 0;
    for &s in &a.sys.config.controller.strategies {
        let spec = a.sys.controller(s, &a.set, a.regions.as_ref())?;
        let mut trace = run_closed_loop(&scenario, &spec)?;
        status = status.max(trace_status(&trace));
        trace.records = trace.records.into_iter().step_by(every).collect();
        let path = trace_path(&a.out, s);
        save_trace(&a, &trace, &path)?;
        println!("wrote {} ({} rows)", path.display(), trace.len());
    }
    Ok(status)
}

fn exit_code(e: &AdpError) -> u8 {
    match e {
        AdpError::Config(_)
        | AdpError::Invalid { .. }
        | AdpError::Dimension { .. }
        | AdpError::UnreachableSetpoint { .. }
        | AdpError::Format { .. }
        | AdpError::FingerprintMismatch { .. } => 2,
        AdpError::Infeasible { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Offline(c) => offline(c),
        Command::Run { common, controller } => run(common, *controller),
        Command::Stability {
            common,
            controller,
            grid_step,
            points,
            exclusion,
            progress,
        } => stability(common, *controller, *grid_step, *points, *exclusion, *progress),
        Command::Bench { common, parallel } => bench(common, *parallel),
        Command::Export { common, every } => export(common, *every),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
