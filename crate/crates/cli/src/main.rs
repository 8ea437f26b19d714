//! `molcom` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration or calibration error, 2 run did
//! not complete or calibration had too few samples, 3 some sweep runs failed.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use molcom::channel::{calibrate_document, RangingModel, Species, StatsDocument, WindowMassTable};
use molcom::config;
use molcom::engine::{self, ChannelMode, SimConfig, REFERENCE_DISTANCES_UM};
use molcom::metrics::{aggregate, compute_metrics, write_csv, MetricModel, RunMetrics, RunStatus};
use molcom::seed::derive_seed;
use molcom::Error;

#[derive(Parser)]
#[command(name = "molcom", version, about = "Molecular communication link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key=value configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one session.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        channel: Option<ChannelArg>,
        /// Channel statistics file; the bundled statistics by default.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Calibrate the statistical channel with the particle engine.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated distances in micrometers.
        #[arg(long, value_delimiter = ',')]
        distances: Option<Vec<f64>>,
        /// Particles released per species and distance.
        #[arg(long, default_value_t = 200_000)]
        samples: u64,
        /// Distance in micrometers where the capture probability is fitted.
        #[arg(long, default_value_t = 26.5)]
        reference_um: f64,
        #[arg(long, default_value = "channel_stats.json")]
        out: PathBuf,
    },
    /// Run every distance with several seeds and aggregate the metrics.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        distances: Option<Vec<f64>>,
        /// Replicates per distance.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, value_enum)]
        channel: Option<ChannelArg>,
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Worker threads.
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Print the smallest reliable control burst per distance.
    RangingTable {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.9)]
        target_pc: f64,
        #[arg(long, value_delimiter = ',')]
        distances: Option<Vec<f64>>,
        /// Window masses to use.
        #[arg(long, value_enum, default_value_t = WindowSource::Reference)]
        window_mass: WindowSource,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelArg {
    Particle,
    Statistical,
}

impl From<ChannelArg> for ChannelMode {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Particle => ChannelMode::Particle,
            ChannelArg::Statistical => ChannelMode::Statistical,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WindowSource {
    /// Reference readings at 26.5 and 61.9 um, interpolated linearly.
    Reference,
    /// Control-species window masses from the channel statistics.
    Calibrated,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::CalibrationFailed { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

type CliResult = Result<u8, Failure>;

fn load_config(common: &Common) -> Result<SimConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| fail(1, format!("{}: {e}", path.display())))?;
            config::parse(&text).map_err(|e| fail(1, format!("{}: {e}", path.display())))?
        }
        None => SimConfig::default(),
    };
    for (i, kv) in common.set.iter().enumerate() {
        cfg = config::parse_onto(cfg, kv).map_err(|e| fail(1, format!("--set #{}: {e}", i + 1)))?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_stats(path: Option<&Path>) -> Result<StatsDocument, Failure> {
    match path {
        Some(p) => StatsDocument::load(p).map_err(|e| fail(1, format!("{}: {e}", p.display()))),
        None => Ok(StatsDocument::bundled()),
    }
}

fn distances_m(list: Option<&[f64]>) -> Vec<f64> {
    list.unwrap_or(&REFERENCE_DISTANCES_UM)
        .iter()
        .map(|&d| d * 1e-6)
        .collect()
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| fail(1, format!("{}: {e}", dir.display())))
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| fail(1, format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| fail(1, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| fail(1, format!("{}: {e}", path.display())))
}

fn metric_model(cfg: &SimConfig) -> MetricModel {
    MetricModel {
        receiver: cfg.rx_geometry,
        fit: cfg.gamma_fit,
    }
}

fn cmd_run(common: &Common, channel: Option<ChannelArg>, stats: Option<&Path>, out: &Path) -> CliResult {
    let mut cfg = load_config(common)?;
    if let Some(c) = channel {
        cfg.channel_mode = c.into();
    }
    let stats = load_stats(stats)?;
    let output = engine::run(&cfg, &stats)?;
    create_dir(out)?;
    output.log.write_ndjson(create_file(&out.join("eventlog.ndjson"))?)?;
    write_json(&out.join("summary.json"), &output.summary)?;
    let metrics = compute_metrics(&output.summary, &metric_model(&cfg))?;
    write_csv(create_file(&out.join("metrics.csv"))?, std::slice::from_ref(&metrics))?;
    let s = &output.summary;
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "status {:?}: delivered {} of {}, c_TX {}, attempts {}, halves {}",
        s.status, s.delivered, s.stop_target, s.c_tx, s.attempts, s.halve_count
    );
    if metrics.complete {
        println!(
            "thr {:.2} molecules/s, rho {:.5}, rho_n {:.4}, oh {:.5}, T_D {:.2} s",
            metrics.throughput,
            metrics.efficiency,
            metrics.normalized_efficiency,
            metrics.overhead,
            metrics.delivery_time
        );
        Ok(0)
    } else {
        Ok(2)
    }
}

fn cmd_calibrate(common: &Common, distances: Option<&[f64]>, samples: u64, reference_um: f64, out: &Path) -> CliResult {
    let cfg = load_config(common)?;
    cfg.validate()?;
    let setup = cfg.calibration_setup();
    let doc = calibrate_document(&setup, reference_um * 1e-6, &distances_m(distances), samples, cfg.seed)?;
    doc.save(out).map_err(|e| fail(1, format!("{}: {e}", out.display())))?;
    println!("p_capture S {:.6}  R {:.6}", doc.p_capture_s, doc.p_capture_r);
    println!(
        "{:>7} {:>7} {:>10} {:>10} {:>10}",
        "species", "d_um", "p_assim", "model", "window"
    );
    for e in &doc.entries {
        let model = setup.model_p_assim(e.species, e.distance_um * 1e-6)?;
        println!(
            "{:>7} {:>7.1} {:>10.6} {:>10.6} {:>10.4}",
            e.species.to_string(),
            e.distance_um,
            e.p_assim,
            model,
            e.window_mass
        );
    }
    Ok(0)
}

struct SweepArgs<'a> {
    distances: Option<&'a [f64]>,
    seeds: u64,
    channel: Option<ChannelArg>,
    stats: Option<&'a Path>,
    parallel: Option<usize>,
    out: &'a Path,
}

fn cmd_sweep(common: &Common, args: SweepArgs<'_>) -> CliResult {
    let mut base = load_config(common)?;
    if let Some(c) = args.channel {
        base.channel_mode = c.into();
    }
    let stats = load_stats(args.stats)?;
    // Replicate i uses the same seed at every distance.
    let configs: Vec<SimConfig> = distances_m(args.distances)
        .into_iter()
        .flat_map(|d| {
            let base = &base;
            (0..args.seeds).map(move |i| SimConfig {
                distance: d,
                seed: derive_seed(base.seed, i),
                ..base.clone()
            })
        })
        .collect();
    let parallel = args
        .parallel
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let results = engine::sweep(&configs, &stats, parallel)?;
    let model = metric_model(&base);
    let mut metrics: Vec<RunMetrics> = Vec::new();
    let mut summaries = Vec::new();
    let mut failed = 0usize;
    for entry in results {
        let cfg = &configs[entry.index];
        match entry.result {
            Ok(summary) => {
                if summary.status != RunStatus::Completed {
                    failed += 1;
                    eprintln!(
                        "run {} (d = {} um, seed {}) ended with {:?}",
                        entry.index, summary.distance_um, cfg.seed, summary.status
                    );
                }
                metrics.push(compute_metrics(&summary, &model)?);
                summaries.push(summary);
            }
            Err(e) => {
                failed += 1;
                eprintln!(
                    "run {} (d = {} um, seed {}) failed: {e}",
                    entry.index,
                    cfg.distance * 1e6,
                    cfg.seed
                );
            }
        }
    }
    create_dir(args.out)?;
    write_csv(create_file(&args.out.join("metrics.csv"))?, &metrics)?;
    write_json(&args.out.join("aggregate.json"), &aggregate(&metrics))?;
    write_json(&args.out.join("summaries.json"), &summaries)?;
    println!("{} runs, {} not completed", configs.len(), failed);
    Ok(if failed > 0 { 3 } else { 0 })
}

fn cmd_ranging_table(
    common: &Common,
    target_pc: f64,
    distances: Option<&[f64]>,
    source: WindowSource,
    stats: Option<&Path>,
) -> CliResult {
    let cfg = load_config(common)?;
    cfg.validate()?;
    let window_mass = match source {
        WindowSource::Reference => WindowMassTable::reference(),
        WindowSource::Calibrated => {
            let doc = load_stats(stats)?;
            let points = doc
                .entries
                .iter()
                .filter(|e| e.species == Species::R)
                .map(|e| (e.distance_um * 1e-6, e.window_mass))
                .collect();
            WindowMassTable::new(points)?
        }
    };
    let model = RangingModel {
        detector: cfg.tx_geometry,
        fit: cfg.gamma_fit,
        window_mass,
        threshold: cfg.tx.codec.detection_threshold,
        increment: cfg.rx.initial_burst,
        max_attempts: cfg.rx.max_attempts,
    };
    println!("{:>7} {:>10} {:>8} {:>8}", "d_um", "p_hit", "window", "burst");
    for d in distances_m(distances) {
        let burst = match model.min_burst_for_reliability(d, target_pc) {
            Ok(b) => b.to_string(),
            Err(Error::BurstOutOfRange { max_burst, .. }) => format!(">{max_burst}"),
            Err(e) => return Err(e.into()),
        };
        println!(
            "{:>7.1} {:>10.6} {:>8.4} {:>8}",
            d * 1e6,
            model.p_hit(d)?,
            model.window_mass.at(d),
            burst
        );
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            common,
            channel,
            stats,
            out,
        } => cmd_run(common, *channel, stats.as_deref(), out),
        Command::Calibrate {
            common,
            distances,
            samples,
            reference_um,
            out,
        } => cmd_calibrate(common, distances.as_deref(), *samples, *reference_um, out),
        Command::Sweep {
            common,
            distances,
            seeds,
            channel,
            stats,
            parallel,
            out,
        } => cmd_sweep(
            common,
            SweepArgs {
                distances: distances.as_deref(),
                seeds: *seeds,
                channel: *channel,
                stats: stats.as_deref(),
                parallel: *parallel,
                out,
            },
        ),
        Command::RangingTable {
            common,
            target_pc,
            distances,
            window_mass,
            stats,
        } => cmd_ranging_table(common, *target_pc, distances.as_deref(), *window_mass, stats.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
