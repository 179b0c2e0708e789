use clap::{Args, Parser, Subcommand, ValueEnum};
use mdpc::io::{
    emit_outputs, generate_synthetic_profile, load_profile_csv, write_sweep_csv, LoadProfile, RunConfig, SweepPoint,
};
use mdpc::sim::{evaluate, run_loadlevel, run_no_battery, run_simulation, SimConfig, SimTrace};
use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

type AnyResult<T> = Result<T, Box<dyn Error + Send + Sync>>;

#[derive(Parser)]
#[command(name = "mdpc", version, about = "Privacy-aware battery control for smart-metered homes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop simulation and write its trace and metrics.
    Simulate(Common),
    /// Sweep the privacy weight and summarize leakage against cost.
    SweepMu {
        #[command(flatten)]
        common: Common,
        /// Weights to evaluate, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0,5,10,15,20,25,30,35,40,45")]
        mus: Vec<f64>,
    },
    /// Run the controller, load leveling and the no-battery reference side by side.
    CompareBaselines(Common),
    /// Write a synthetic load profile.
    GenProfile(Common),
    /// Cross-check the solver and the estimator against independent references.
    Verify {
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Baseline {
    None,
    Loadlevel,
    Nobattery,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    battery_kwh: Option<f64>,
    #[arg(long)]
    battery_kw: Option<f64>,
    #[arg(long)]
    bins_x: Option<usize>,
    #[arg(long)]
    bins_y: Option<usize>,
    #[arg(long, conflicts_with = "rho")]
    epsilon: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Load profile CSV (`timestamp,load_kwh[,gen_kwh]`); synthetic if absent.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Baseline::None)]
    baseline: Baseline,
}

impl Common {
    fn run_config(&self) -> AnyResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.mu {
            cfg.mu = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.battery_kwh {
            cfg.battery_kwh = v;
        }
        if let Some(v) = self.battery_kw {
            cfg.battery_kw = v;
        }
        if let Some(v) = self.bins_x {
            cfg.x_bins = v;
        }
        if let Some(v) = self.bins_y {
            cfg.y_bins = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = Some(v);
            cfg.rho = None;
        }
        if let Some(v) = self.rho {
            cfg.rho = Some(v);
            cfg.epsilon = None;
        }
        if let Some(v) = self.days {
            cfg.days = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn profile(&self, cfg: &RunConfig) -> AnyResult<LoadProfile> {
        Ok(match &self.profile {
            Some(path) => load_profile_csv(path)?,
            None => generate_synthetic_profile(cfg.days, cfg.seed)?,
        })
    }
}

fn run_scheme(baseline: Baseline, profile: &LoadProfile, sim: &SimConfig) -> AnyResult<SimTrace> {
    Ok(match baseline {
        Baseline::None => run_simulation(profile, sim)?,
        Baseline::Loadlevel => run_loadlevel(profile, sim)?,
        Baseline::Nobattery => run_no_battery(profile, &sim.tariff, sim.initial_soc),
    })
}

fn sweep_point(trace: &SimTrace, sim: &SimConfig) -> AnyResult<SweepPoint> {
    let report = evaluate(trace, sim)?;
    Ok(SweepPoint {
        scheme: trace.scheme.name().to_string(),
        mu: sim.mu,
        cumulative_mi_bits: report.cumulative_mi_bits,
        total_cost_chf: report.total_cost_chf,
        total_energy_kwh: report.total_energy_kwh,
    })
}

fn simulate(common: &Common) -> AnyResult<()> {
    let cfg = common.run_config()?;
    let profile = common.profile(&cfg)?;
    let sim = cfg.to_sim_config(&profile)?;
    let trace = run_scheme(common.baseline, &profile, &sim)?;
    let report = evaluate(&trace, &sim)?;
    let prefix = format!("{}_", trace.scheme.name());
    for path in emit_outputs(&trace, &report, &common.out, &prefix)? {
        log::info!("wrote {}", path.display());
    }
    println!(
        "{}: mu {} I_c {:.6} bits, cost {:.4} CHF, energy {:.3} kWh",
        trace.scheme.name(),
        sim.mu,
        report.cumulative_mi_bits,
        report.total_cost_chf,
        report.total_energy_kwh
    );
    Ok(())
}

fn sweep(common: &Common, mus: &[f64]) -> AnyResult<()> {
    let cfg = common.run_config()?;
    let profile = common.profile(&cfg)?;
    let base = cfg.to_sim_config(&profile)?;
    // independent points run in parallel; results keep the input order
    let points: Vec<AnyResult<SweepPoint>> = std::thread::scope(|scope| {
        let handles: Vec<_> = mus
            .iter()
            .map(|&mu| {
                let (profile, sim) = (&profile, SimConfig { mu, ..base.clone() });
                scope.spawn(move || -> AnyResult<SweepPoint> {
                    let trace = run_scheme(common.baseline, profile, &sim)?;
                    sweep_point(&trace, &sim)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("sweep worker panicked".into())))
            .collect()
    });
    let points = points.into_iter().collect::<AnyResult<Vec<_>>>()?;
    std::fs::create_dir_all(&common.out)?;
    let path = common.out.join("sweep.csv");
    write_sweep_csv(&points, &path)?;
    for p in &points {
        println!("{} mu {:>6} I_c {:.6} cost {:.4}", p.scheme, p.mu, p.cumulative_mi_bits, p.total_cost_chf);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn compare(common: &Common) -> AnyResult<()> {
    let cfg = common.run_config()?;
    let profile = common.profile(&cfg)?;
    let sim = cfg.to_sim_config(&profile)?;
    let mut points = Vec::new();
    for baseline in [Baseline::None, Baseline::Loadlevel, Baseline::Nobattery] {
        let trace = run_scheme(baseline, &profile, &sim)?;
        let report = evaluate(&trace, &sim)?;
        emit_outputs(&trace, &report, &common.out, &format!("{}_", trace.scheme.name()))?;
        points.push(sweep_point(&trace, &sim)?);
    }
    let path = common.out.join("comparison.csv");
    write_sweep_csv(&points, &path)?;
    for p in &points {
        println!("{:<10} I_c {:.6} bits, cost {:.4} CHF", p.scheme, p.cumulative_mi_bits, p.total_cost_chf);
    }
    Ok(())
}

fn gen_profile(common: &Common) -> AnyResult<()> {
    let cfg = common.run_config()?;
    let profile = generate_synthetic_profile(cfg.days, cfg.seed)?;
    std::fs::create_dir_all(&common.out)?;
    let path: &Path = &common.out.join("profile.csv");
    profile.write_csv(path)?;
    println!("wrote {} ({} intervals)", path.display(), profile.len());
    Ok(())
}

fn verify(cases: usize, seed: u64) -> AnyResult<bool> {
    let checks = [
        mdpc::verify::check_solver(cases, seed)?,
        mdpc::verify::check_estimator(cases * 5, seed)?,
    ];
    for c in &checks {
        println!(
            "{} {}: {} cases, {} failures, worst discrepancy {:.3e}",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.cases,
            c.failures,
            c.worst
        );
    }
    Ok(checks.iter().all(|c| c.passed()))
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(c) => simulate(c).map(|_| true),
        Command::SweepMu { common, mus } => sweep(common, mus).map(|_| true),
        Command::CompareBaselines(c) => compare(c).map(|_| true),
        Command::GenProfile(c) => gen_profile(c).map(|_| true),
        Command::Verify { cases, seed } => verify(*cases, *seed),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
