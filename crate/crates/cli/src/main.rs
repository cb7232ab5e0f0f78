use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmlsh::bench::{self, RunConfig, SynthConfig};
use mmlsh::buffer::Strategy;
use mmlsh::Error;

const USAGE_ERROR: u8 = 2;
const DATA_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "mmlsh", version, about = "Object-level LSH search benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the index and frequency profile.
    Build(Opts),
    /// Compute (or reuse) exact answers for the sampled queries.
    Groundtruth(Opts),
    /// Run mmLSH over the sampled queries.
    Query(Opts),
    /// Compare mmLSH with the Borda baselines across k'.
    Compare(Opts),
    /// Replay the query workload under each strategy and buffer size.
    BufferSweep(Opts),
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    objects: Option<PathBuf>,
    /// Generate a synthetic dataset with this many objects.
    #[arg(long)]
    synth_objects: Option<usize>,
    #[arg(long)]
    synth_points: Option<usize>,
    #[arg(long)]
    synth_dim: Option<usize>,
    #[arg(long)]
    synth_spread: Option<f64>,
    #[arg(long)]
    synth_seed: Option<u64>,

    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    groundtruth: Option<PathBuf>,
    /// CSV report path.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Dump every buffer access to this file.
    #[arg(long)]
    trace: Option<PathBuf>,

    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    c: Option<u32>,
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    l: Option<usize>,

    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    k_primes: Option<Vec<usize>>,
    #[arg(long)]
    beta_point: Option<f64>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    points_per_query: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,

    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    #[arg(long)]
    query_splits: Option<usize>,
    #[arg(long)]
    buffer_mb: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    buffer_sizes_mb: Option<Vec<f64>>,
    /// Modeled entries per stored entry.
    #[arg(long)]
    bucket_scale: Option<u64>,
    #[arg(long)]
    seek_ms: Option<f64>,
    #[arg(long)]
    read_mb_per_ms: Option<f64>,
    #[arg(long)]
    ns_per_op: Option<f64>,
    /// Measure the per-operation cost on this machine.
    #[arg(long)]
    calibrate: bool,
    #[arg(long)]
    profile_queries: Option<usize>,
    #[arg(long)]
    profile_regions: Option<usize>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

macro_rules! set {
    ($cfg:ident, $opts:ident, $($field:ident),+) => {
        $( if let Some(v) = $opts.$field.take() { $cfg.$field = v; } )+
    };
}

macro_rules! set_opt {
    ($cfg:ident, $opts:ident, $($field:ident),+) => {
        $( if let Some(v) = $opts.$field.take() { $cfg.$field = Some(v); } )+
    };
}

impl Opts {
    fn resolve(mut self) -> mmlsh::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set_opt!(cfg, self, vectors, objects, output, json, trace, beta, epsilon, gamma, m, l);
        set_opt!(cfg, self, beta_point, points_per_query, ns_per_op);
        set!(cfg, self, index, profile, groundtruth, delta, c, w, k, k_primes, queries, seed);
        set!(cfg, self, strategy, query_splits, buffer_mb, buffer_sizes_mb, bucket_scale);
        set!(cfg, self, seek_ms, read_mb_per_ms, profile_queries, profile_regions);
        cfg.calibrate |= self.calibrate;
        let synth_flag = self.synth_objects.is_some()
            || self.synth_points.is_some()
            || self.synth_dim.is_some()
            || self.synth_spread.is_some()
            || self.synth_seed.is_some();
        if synth_flag {
            let s = cfg.synth.get_or_insert_with(SynthConfig::default);
            if let Some(v) = self.synth_objects {
                s.objects = v;
            }
            if let Some(v) = self.synth_points {
                s.points_per_object = v;
            }
            if let Some(v) = self.synth_dim {
                s.dimension = v;
            }
            if let Some(v) = self.synth_spread {
                s.cluster_spread = v;
            }
            if let Some(v) = self.synth_seed {
                s.seed = v;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(command: Command) -> mmlsh::Result<()> {
    match command {
        Command::Build(o) => {
            let cfg = o.resolve()?;
            println!("{}", bench::cmd_build(&cfg)?);
        }
        Command::Groundtruth(o) => {
            let cfg = o.resolve()?;
            let (gt, reused) = bench::cmd_groundtruth(&cfg)?;
            println!(
                "{} ground truth for {} queries: {}",
                if reused { "reused" } else { "computed" },
                gt.answers.len(),
                cfg.groundtruth.display()
            );
        }
        Command::Query(o) => {
            let cfg = o.resolve()?;
            let report = bench::cmd_query(&cfg)?;
            report.emit()?;
            print!("{}", report.table());
        }
        Command::Compare(o) => {
            let cfg = o.resolve()?;
            let report = bench::cmd_compare(&cfg)?;
            report.emit()?;
            print!("{}", report.table());
        }
        Command::BufferSweep(o) => {
            let cfg = o.resolve()?;
            let report = bench::cmd_buffer_sweep(&cfg)?;
            report.emit()?;
            println!("working set: {:.1} MB", report.working_set_bytes as f64 / bench::MB);
            print!("{}", report.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { DATA_ERROR } else { USAGE_ERROR })
        }
    }
}
