use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use platoon_core::io::{load_scenario, write_frequency_csv, write_json, write_trace_csv};
use platoon_core::metrics::{
    first_pulse_onset, perturbation_peaks, perturbation_scenario, sweep, write_sweep_csv, TimeGapSearch, REFERENCE_MIN_TIME_GAPS,
};
use platoon_core::model::{ControlGains, ModelKind, PlatoonScenario, PowertrainParams};
use platoon_core::plot::write_trace_plots;
use platoon_core::profile::SpeedPulse;
use platoon_core::stability::{local_conditions, string_stability_check, FrequencyGrid, GapErrorParams};
use platoon_core::tuner::{ga_optimize, GAConfig, TuningReport};
use platoon_core::{run_platoon, Error, Termination};

/// Tolerance on the reference minimum time gaps in sweep reports (s).
const SWEEP_TOLERANCE: f64 = 0.2;

#[derive(Parser)]
#[command(name = "platoon-lab", version, about = "Truck platoon simulation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[command(allow_negative_numbers = true)]
enum Command {
    /// Run one scenario and write its trace and metrics.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write speed and time-gap SVG plots.
        #[arg(long)]
        plots: bool,
    },
    /// Local and string stability reports for one gain set.
    Stability {
        /// JSON file with gains, or any object carrying a `gains` field.
        #[arg(long)]
        gains: Option<PathBuf>,
        /// Reference gains to use when --gains is absent.
        #[arg(long, default_value = "asym")]
        model: ModelKind,
        #[arg(long)]
        te: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        tg: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        points: usize,
        #[arg(long, default_value_t = 1e-3)]
        omega_min: f64,
        #[arg(long, default_value_t = 1e3)]
        omega_max: f64,
    },
    /// Minimum achievable time gap over a grid of lags and delays.
    Sweep(SweepArgs),
    /// Genetic-algorithm gain tuning on the design profile.
    Tune {
        #[arg(long, default_value = "asym")]
        model: ModelKind,
        #[arg(long, default_value_t = 0.1)]
        te: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// GA configuration JSON; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        generations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leader speed pulse on a constant-speed platoon.
    Perturb {
        #[arg(long, default_value = "asym")]
        model: ModelKind,
        #[arg(long)]
        te: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        tg: f64,
        #[arg(long, default_value_t = 100.0)]
        onset: f64,
        #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
        magnitude: f64,
        /// Time from onset to the pulse extreme (s); recovery takes as long.
        #[arg(long, default_value_t = 2.5)]
        ramp: f64,
        #[arg(long, default_value_t = 300.0)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plots: bool,
    },
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "asym")]
    model: ModelKind,
    /// Comma-separated lags (s). With --delta, all combinations are run.
    /// Without both, the seven reference cells are used.
    #[arg(long, value_delimiter = ',')]
    te: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    delta: Vec<f64>,
    /// Scenario template; the reference schedule when absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Comma-separated time-gap grid (s).
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    // Usage errors share exit code 1 with other configuration errors; 2 means collision.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Simulate { scenario, out, plots } => simulate(&scenario, &out, plots),
        Command::Stability { gains, model, te, delta, tg, out, points, omega_min, omega_max } => {
            let gains = match gains {
                Some(p) => read_gains(&p)?,
                None => ControlGains::reference(model),
            };
            let grid = FrequencyGrid { min: omega_min, max: omega_max, points };
            stability(&gains, te, delta, tg, &grid, &out)
        }
        Command::Sweep(args) => sweep_cmd(args),
        Command::Tune { model, te, delta, config, population, generations, seed, out } => {
            let mut cfg = match config {
                Some(p) => serde_json::from_str::<GAConfig>(&read(&p)?).with_context(|| p.display().to_string())?,
                None => GAConfig::default(),
            };
            if let Some(n) = population {
                cfg.population_size = n;
            }
            if let Some(n) = generations {
                cfg.generations = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let pt = PowertrainParams::new(te, delta);
            let outcome = ga_optimize(&cfg, model, pt)?;
            let report = TuningReport::new(&cfg, model, pt, outcome);
            write_json(&out.join("tuning.json"), &report)?;
            write_json(&out.join("gains.json"), &report.gains)?;
            println!(
                "best fitness {:.6} (feasible {}) k_d {:.4} k_v {:.4} k_c {:.4}",
                report.best.evaluation.fitness,
                report.best.evaluation.feasible,
                report.gains.kd1,
                report.gains.kv,
                report.gains.kc
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Perturb { model, te, delta, tg, onset, magnitude, ramp, duration, out, plots } => {
            let pulse = SpeedPulse { onset, magnitude, ramp };
            let s = perturbation_scenario(model, PowertrainParams::new(te, delta), tg, pulse, duration);
            let s = s.validate()?;
            let trace = run_platoon(&s)?;
            let response = perturbation_peaks(&trace, first_pulse_onset(&s)?);
            write_json(&out.join("perturbation.json"), &response)?;
            write_trace_csv(&out.join("trace.csv"), &trace)?;
            if plots {
                write_trace_plots(&out, &trace)?;
            }
            println!(
                "follower peaks {:?} non-increasing {}",
                response.follower_peaks, response.non_increasing
            );
            Ok(status_code(response.status))
        }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn read_gains(path: &Path) -> anyhow::Result<ControlGains> {
    let value: serde_json::Value =
        serde_json::from_str(&read(path)?).with_context(|| path.display().to_string())?;
    let inner = value.get("gains").cloned().unwrap_or(value);
    let gains: ControlGains = serde_json::from_value(inner).with_context(|| path.display().to_string())?;
    gains.validate()?;
    Ok(gains)
}

fn status_code(status: Termination) -> ExitCode {
    match status {
        Termination::Completed | Termination::Aborted => ExitCode::SUCCESS,
        Termination::Collision => ExitCode::from(2),
        Termination::Diverged => ExitCode::from(3),
    }
}

fn simulate(path: &Path, out: &Path, plots: bool) -> anyhow::Result<ExitCode> {
    let scenario = load_scenario(path)?;
    let trace = run_platoon(&scenario)?;
    write_trace_csv(&out.join("trace.csv"), &trace)?;
    let last = trace.len() - 1;
    let gaps: Vec<f64> = (1..trace.truck_count()).map(|i| trace.gap(i, last)).collect();
    let summary = json!({
        "status": trace.status,
        "end_time_s": trace.end_time,
        "metrics": trace.metrics,
        "final_gaps_m": gaps,
        "final_time_gaps_s": trace.time_gaps(last),
    });
    write_json(&out.join("summary.json"), &summary)?;
    if plots {
        write_trace_plots(out, &trace)?;
    }
    println!(
        "{:?} at {:.3} s, max SSTE {:.3e} s^2 (after warm-up), max SSSE {:.3e} (m/s)^2",
        trace.status, trace.end_time, trace.metrics.max_sste, trace.metrics.max_ssse
    );
    Ok(status_code(trace.status))
}

fn stability(
    gains: &ControlGains,
    te: f64,
    delta: f64,
    tg: f64,
    grid: &FrequencyGrid,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    for (name, v) in [("te", te), ("tg", tg)] {
        if !(v > 0.0 && v.is_finite()) {
            bail!(format!("--{name} must be positive (got {v})"));
        }
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        bail!(format!("--delta must be non-negative (got {delta})"));
    }
    if !grid.is_valid() {
        bail!(format!("invalid frequency grid {grid:?}"));
    }
    let local = local_conditions(gains, te, tg);
    let params = GapErrorParams::from_gains(gains, &PowertrainParams::new(te, delta), tg);
    let string = string_stability_check(&params, grid);
    write_json(&out.join("local.json"), &local)?;
    write_frequency_csv(&out.join("frequency.csv"), &string)?;
    let summary = json!({
        "gains": gains,
        "sup_magnitude": string.sup_magnitude,
        "sup_omega_rad_s": string.sup_omega,
        "margin": string.margin,
        "stable": string.stable,
        "min_y": string.min_y,
        "dc_magnitude": string.dc_magnitude,
        "route_disagreement": string.route_disagreement,
        "eigenvalue_real_parts": local.real_parts,
        "condition_i_holds": local.condition_i_holds,
        "condition_ii_holds": local.condition_ii_holds,
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "sup |G| {:.6} at {:.4} rad/s, stable {}, eigenvalue real parts {:?}",
        string.sup_magnitude, string.sup_omega, string.stable, local.real_parts
    );
    Ok(ExitCode::SUCCESS)
}

fn sweep_cmd(args: SweepArgs) -> anyhow::Result<ExitCode> {
    let cells: Vec<(f64, f64)> = match (args.te.is_empty(), args.delta.is_empty()) {
        (true, true) => REFERENCE_MIN_TIME_GAPS.iter().map(|(c, _)| *c).collect(),
        (false, false) => args.te.iter().flat_map(|&t| args.delta.iter().map(move |&d| (t, d))).collect(),
        _ => bail!("--te and --delta must be given together"),
    };
    if let Some(bad) = cells.iter().find(|(t, d)| !(*t > 0.0 && *d >= 0.0 && t.is_finite() && d.is_finite())) {
        bail!(format!("invalid cell {bad:?}"));
    }
    let template = match &args.scenario {
        Some(p) => load_scenario(p)?,
        None => PlatoonScenario::reference(args.model, PowertrainParams::new(0.1, 0.1), 0.8),
    };
    let mut search = TimeGapSearch::default();
    if !args.grid.is_empty() {
        if args.grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            bail!("grid values must be positive");
        }
        search.grid = args.grid.clone();
    }
    let rows = sweep(&template, args.model, &cells, &search)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let csv_path = args.out.join("sweep.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_sweep_csv(&rows, SWEEP_TOLERANCE, file)?;
    write_json(&args.out.join("sweep.json"), &rows)?;
    for r in &rows {
        let flag = if r.off_target(SWEEP_TOLERANCE) { "  OFF TARGET" } else { "" };
        match r.min_time_gap {
            Some(tg) => println!("T_e {} delta {}: {:.1} s{flag}", r.lag, r.delay, tg),
            None => println!("T_e {} delta {}: not achievable{flag}", r.lag, r.delay),
        }
    }
    Ok(ExitCode::SUCCESS)
}
