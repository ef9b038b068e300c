use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use coopdrive::metrics::{write_csv, NearWaypointTally};
use coopdrive::runner::{run_episode, sweep, Budget, RunConfig, Strategy, SweepAxis};
use coopdrive::world::{resolve_scenario_path, ScenarioConfig};
use coopdrive::Error;

#[derive(Parser, Debug)]
#[command(name = "coopdrive", version, about = "Desk-scale V2X collaborative driving simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one closed-loop episode and write its JSON report.
    Run {
        #[command(flatten)]
        common: Common,
        /// Strategy: no_fusion, late_fusion, codriving_confidence_only or
        /// codriving_driving_request.
        #[arg(long, default_value = "codriving_driving_request")]
        strategy: Strategy,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Report path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one parameter over strategies and seeds; writes CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated axis values. For `rate-sampling`, a single count.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "no_fusion,codriving_confidence_only,codriving_driving_request")]
        strategies: Vec<Strategy>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Seed of the log-uniform rate sample.
        #[arg(long, default_value_t = 0)]
        rate_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Schema-check a scenario file.
    Validate {
        scenario: String,
    },
    /// Near-waypoint object and hazard fractions over one episode.
    Stats {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "no_fusion")]
        strategy: Strategy,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Comma-separated distance thresholds in meters.
        #[arg(long, value_delimiter = ',', default_value = "2,5")]
        delta_w: Vec<f64>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file, or a name looked up in $COOPDRIVE_SCENARIO_DIR and the
    /// bundled scenarios.
    #[arg(long)]
    scenario: String,
    /// Compression exponent k: each link may send floor(cells / 2^k) cells.
    #[arg(long)]
    bandwidth_log2: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    latency_ms: f64,
    /// Translational pose noise in meters.
    #[arg(long, default_value_t = 0.0)]
    pose_sigma_t: f64,
    /// Rotational pose noise in degrees.
    #[arg(long, default_value_t = 0.0)]
    pose_sigma_r: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Axis {
    Bandwidth,
    Latency,
    Pose,
    RateSampling,
}

fn load(arg: &str) -> Result<ScenarioConfig, Error> {
    ScenarioConfig::load(&resolve_scenario_path(arg))
}

fn base_config(c: &Common, strategy: Strategy) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::new(load(&c.scenario)?, strategy);
    if let Some(k) = c.bandwidth_log2 {
        cfg.budget = Budget::CompressionLog2(k);
    }
    cfg.channel.latency_ms = c.latency_ms;
    cfg.channel.pose_sigma_t = c.pose_sigma_t;
    cfg.channel.pose_sigma_r_deg = c.pose_sigma_r;
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    let io = |path: &str, source| Error::Io {
        path: path.to_string(),
        source,
    };
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| io(&p.display().to_string(), e)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| io("<stdout>", e)),
    }
}

fn tally_line(delta: f64, t: &NearWaypointTally) -> String {
    let f = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    let (o, h) = t.fractions();
    format!(
        "{delta}\t{}\t{}\t{}\t{}\t{}\t{}\n",
        t.objects,
        t.objects_near,
        f(o),
        t.hazards,
        t.hazards_near,
        f(h)
    )
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            common,
            strategy,
            seed,
            out,
        } => {
            let mut cfg = base_config(&common, strategy)?;
            cfg.seed = seed;
            let episode = run_episode(&cfg)?;
            emit(out.as_deref(), &episode.report.to_json())
        }
        Command::Sweep {
            common,
            axis,
            values,
            strategies,
            seeds,
            rate_seed,
            out,
        } => {
            let base = base_config(&common, strategies.first().copied().unwrap_or(Strategy::NoFusion))?;
            let axis = match axis {
                Axis::Bandwidth => SweepAxis::Bandwidth(values),
                Axis::Latency => SweepAxis::LatencyMs(values),
                Axis::Pose => SweepAxis::PoseSigma(values),
                Axis::RateSampling => {
                    let count = match values.as_slice() {
                        [n] if *n >= 1.0 && n.fract() == 0.0 => *n as usize,
                        _ => return Err(Error::Config("rate-sampling takes one integer count".into())),
                    };
                    SweepAxis::RateSampling { count, seed: rate_seed }
                }
            };
            let rows = sweep(&base, &axis, &strategies, &seeds)?;
            emit(out.as_deref(), &write_csv(&rows))
        }
        Command::Validate { scenario } => {
            let cfg = load(&scenario)?;
            eprintln!("{}: ok ({} egos, {} actors)", cfg.name, cfg.egos.count, cfg.actors.len());
            Ok(())
        }
        Command::Stats {
            scenario,
            strategy,
            seed,
            delta_w,
        } => {
            let mut cfg = RunConfig::new(load(&scenario)?, strategy);
            cfg.seed = seed;
            cfg.near_deltas_m = delta_w;
            cfg.validate()?;
            let episode = run_episode(&cfg)?;
            let mut text =
                String::from("delta_w\tobjects\tobjects_near\tobject_frac\thazards\thazards_near\thazard_frac\n");
            for (d, t) in &episode.near_waypoints {
                text += &tally_line(*d, t);
            }
            emit(None, &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
