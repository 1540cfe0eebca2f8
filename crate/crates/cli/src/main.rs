use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mcast_core::channel::{generate_channels, ChannelSet};
use mcast_core::harness::{run_campaign, run_oracle, write_oracle_csv, ExperimentConfig};
use mcast_core::mmf::{mmf_solve_traced, DiagnosticRecord};
use mcast_core::qos::write_trace_csv;
use mcast_core::Error;

/// Max-min fair multicast beamforming with a nested SDP-ADMM solver.
#[derive(Parser)]
#[command(name = "mcast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML file mirroring the experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CampaignArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Base seed; sample i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Output directory for CSV artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Also write per-sample diagnostic records.
    #[arg(long)]
    diagnostics: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo campaign.
    Run(CampaignArgs),
    /// Check the solver against the exhaustive grid oracle on small drops.
    Oracle {
        #[command(flatten)]
        args: CampaignArgs,
        /// Grid points per angular dimension.
        #[arg(long)]
        resolution: Option<usize>,
        /// 2 or 3 antennas.
        #[arg(long)]
        antennas: Option<usize>,
    },
    /// Solve a channel set stored in the CSV channel format.
    Replay {
        channels: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the per-iteration solver trace and the diagnostic record.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Write the channels of one seeded drop in the CSV channel format.
    Channels {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

const EXIT_CHECK_FAILED: u8 = 3;

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    match &args.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    }
}

fn campaign_config(args: &CampaignArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(n) = args.samples {
        cfg.num_samples = n;
    }
    if args.out.is_some() {
        cfg.output_dir = args.out.clone();
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    cfg.diagnostics |= args.diagnostics;
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &CampaignArgs) -> Result<ExitCode, Error> {
    let cfg = campaign_config(args)?;
    let campaign = run_campaign(&cfg)?;
    print!("{}", campaign.summary);
    if let Some(rows) = &campaign.oracle {
        let passed = rows.iter().filter(|r| r.passed()).count();
        println!("oracle_passed: {passed}/{}", rows.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn oracle(args: &CampaignArgs, resolution: Option<usize>, antennas: Option<usize>) -> Result<ExitCode, Error> {
    let cfg = campaign_config(args)?;
    let mut oc = cfg.oracle.clone();
    if let Some(seed) = args.seed {
        oc.base_seed = seed;
    }
    if let Some(n) = args.samples {
        oc.instances = n;
    }
    if let Some(r) = resolution {
        oc.resolution = r;
    }
    if let Some(n) = antennas {
        oc.num_antennas = n;
    }
    let rows = run_oracle(&oc, &cfg.scenario, &cfg.mmf)?;
    println!("seed,k,solver_se,oracle_se,bound_se,shortfall,pass");
    for r in &rows {
        println!(
            "{},{},{:.6},{:.6},{:.6},{:+.3e},{}",
            r.seed,
            r.num_ues,
            r.solver_se,
            r.oracle_se,
            r.bound_se,
            r.relative_shortfall,
            r.passed()
        );
    }
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir)?;
        write_oracle_csv(&rows, BufWriter::new(File::create(dir.join("oracle.csv"))?))?;
    }
    let passed = rows.iter().filter(|r| r.passed()).count();
    println!("passed {passed}/{}", rows.len());
    Ok(if passed == rows.len() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_CHECK_FAILED) })
}

#[derive(Serialize)]
struct ReplayReport {
    #[serde(flatten)]
    record: DiagnosticRecord,
    per_ue_se: Vec<f64>,
    /// `[re, im]` pairs.
    beamformer: Vec<[f64; 2]>,
}

fn replay(path: &Path, config: &ConfigArgs, out: Option<&Path>, diagnostics: bool) -> Result<ExitCode, Error> {
    let cfg = load_config(config)?;
    let channels = ChannelSet::read_csv(BufReader::new(File::open(path)?))?;
    let mut trace = Vec::new();
    let result = mmf_solve_traced(&channels, &cfg.mmf, diagnostics.then_some(&mut trace))?;
    println!("ues: {}  antennas: {}", channels.num_ues(), channels.num_antennas());
    println!("min_se_rank1: {:.6}", result.min_se());
    println!("min_se_sdr_bound: {:.6}", result.sdr_upper_bound_se);
    println!("elimination_rounds: {}", result.elimination_rounds);
    println!("outer_iterations: {}", result.total_outer_iterations);
    println!("wall_time_s: {:.4}", result.wall_time);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let report = ReplayReport {
            record: DiagnosticRecord::new(channels.seed(), &result),
            per_ue_se: result.per_ue_se.clone(),
            beamformer: result.beamformer.iter().map(|z| [z.re, z.im]).collect(),
        };
        let mut f = BufWriter::new(File::create(dir.join("result.json"))?);
        serde_json::to_writer_pretty(&mut f, &report)?;
        writeln!(f)?;
        f.flush()?;
        if diagnostics {
            write_trace_csv(&trace, BufWriter::new(File::create(dir.join("trace.csv"))?))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn channels(config: &ConfigArgs, seed: u64, out: &Path) -> Result<ExitCode, Error> {
    let cfg = load_config(config)?;
    let cs = generate_channels(seed, &cfg.scenario)?;
    let mut f = BufWriter::new(File::create(out)?);
    cs.write_csv(&mut f)?;
    f.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Oracle { args, resolution, antennas } => oracle(args, *resolution, *antennas),
        Command::Replay { channels: path, config, out, diagnostics } => {
            replay(path, config, out.as_deref(), *diagnostics)
        }
        Command::Channels { config, seed, out } => channels(config, *seed, out),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidInput(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
