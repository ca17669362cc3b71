use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use aqcep_core::emit::write_pairs_csv;
use aqcep_core::ingest::{InputSpec, LevelPolicy};
use aqcep_core::pipeline::{self, BenchConfig, BenchReport, RunConfig};
use aqcep_core::synth::{generate_pairing, generate_plots, PairingConfig, SynthConfig};
use aqcep_core::validation::{DEFAULT_MAX_KM, DEFAULT_TIME_QUANTUM_SECS};
use aqcep_core::{Catalog, Error};

/// Near-real-time air-quality monitoring over satellite plot feeds.
#[derive(Parser)]
#[command(name = "aqcep", version)]
struct Cli {
    /// Catalog file (pollutants, breakpoints, regions); the built-in one by default.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest plot files and run the CE1/CE2/CE3 cascade.
    Run(RunArgs),
    /// Generate seeded synthetic plot files, optionally with paired station data.
    Synth(SynthArgs),
    /// Correlate a CE3 (or CE1) file against ground stations.
    Validate(ValidateArgs),
    /// Run the cascade over a generated corpus and report timings.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Plot file, `POLLUTANT:UNIT:PATH`, or a directory of `*_<POLLUTANT>_<UNIT>.csv` files.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<String>,
    /// Keep only plots inside this catalog region.
    #[arg(long)]
    region: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// `lowest` (first non-empty level) or a 1-based level number.
    #[arg(long, default_value = "lowest")]
    level_policy: LevelPolicy,
    /// Allowed event-time disorder in seconds.
    #[arg(long, default_value_t = 0)]
    lateness: i64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "morocco")]
    region: String,
    /// Total plots across all pollutants.
    #[arg(long, default_value_t = 150_000)]
    n_plots: usize,
    /// Fraction of rows written with every level empty.
    #[arg(long, default_value_t = 0.0)]
    empty_fraction: f64,
    /// Also write a satellite reference and station series with this expected Pearson r.
    #[arg(long)]
    pair_r: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
}

#[derive(Args)]
struct ValidateArgs {
    /// Emitted CE3 CSV (AQI levels) or CE1 CSV (concentrations).
    #[arg(long)]
    input: PathBuf,
    /// Station CSV: station_id, epoch_time, lat, lon, pollutant, value, unit.
    #[arg(long)]
    stations: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_KM)]
    max_km: f64,
    /// Seconds; timestamps match when equal after truncation to this quantum.
    #[arg(long, default_value_t = DEFAULT_TIME_QUANTUM_SECS)]
    time_quantum: i64,
    /// Directory for the matched-pairs CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "morocco")]
    region: String,
    #[arg(long, default_value_t = 150_000)]
    events: usize,
    /// Working directory for the corpus and outputs; a temporary one by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_catalog(path: Option<&Path>) -> Result<Catalog> {
    match path {
        Some(p) => Catalog::load(p).with_context(|| format!("loading catalog {}", p.display())),
        None => Ok(Catalog::default_catalog()),
    }
}

fn expand_inputs(raw: &[String]) -> Result<Vec<InputSpec>> {
    let mut specs = Vec::new();
    for item in raw {
        let path = Path::new(item);
        if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)
                .with_context(|| format!("reading {}", path.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            for f in files {
                match InputSpec::from_path(&f) {
                    Ok(spec) => specs.push(spec),
                    Err(_) => log::warn!("skipping {}: not a plot file name", f.display()),
                }
            }
        } else {
            match InputSpec::parse(item) {
                Ok(spec) => specs.push(spec),
                Err(_) if !path.exists() && !item.contains(':') => {
                    return Err(Error::Config(format!("input '{item}' does not exist")).into())
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(specs)
}

fn print_report(r: &BenchReport) {
    println!(
        "input_files={} rows_read={} input_events={} ce1={} ce2={} ce3={} output_events={}",
        r.input_files, r.rows_read, r.input_events, r.ce1_events, r.ce2_events, r.ce3_events, r.output_events
    );
    let rss = r
        .peak_rss_bytes
        .map(|b| format!("{:.1} MiB", b as f64 / (1024.0 * 1024.0)))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "wall_time_s={:.3} peak_rss={rss} output_bytes={}",
        r.wall_time_secs, r.output_bytes
    );
}

fn cmd_run(catalog: Catalog, args: RunArgs) -> Result<()> {
    let cfg = RunConfig {
        catalog,
        region: args.region,
        inputs: expand_inputs(&args.input)?,
        out_dir: args.out,
        level_policy: args.level_policy,
        lateness_secs: args.lateness,
    };
    let out = pipeline::run(&cfg)?;
    let i = &out.ingest;
    println!(
        "rows_read={} dropped: malformed={} empty={} range={} bbox={} unit={} unknown={} duplicate={}",
        i.rows_read,
        i.rows_dropped_malformed,
        i.rows_dropped_empty,
        i.rows_dropped_range,
        i.rows_dropped_bbox,
        i.rows_dropped_unit,
        i.rows_dropped_unknown,
        i.rows_dropped_duplicate
    );
    print_report(&out.bench);
    Ok(())
}

fn cmd_synth(catalog: Catalog, args: SynthArgs) -> Result<()> {
    let region = catalog.region(&args.region)?.clone();
    let mut cfg = SynthConfig::new(args.seed, args.n_plots, region.clone());
    cfg.empty_fraction = args.empty_fraction;
    let files = generate_plots(&cfg, &catalog, &args.out)?;
    for f in &files {
        println!("{} rows={}", f.path.display(), f.rows);
    }
    if let Some(r) = args.pair_r {
        anyhow::ensure!(
            (0.0..=1.0).contains(&r),
            Error::Config(format!("--pair-r must be in [0, 1], got {r}"))
        );
        let pairing = PairingConfig::for_target_r(r, args.pairs, region, args.seed);
        let out = generate_pairing(&pairing, &catalog, &args.out)?;
        println!(
            "{} and {} pairs={} expected_r={:.4}",
            out.sat_csv.display(),
            out.station_csv.display(),
            out.pairs,
            pairing.expected_r()
        );
    }
    Ok(())
}

fn cmd_validate(catalog: Catalog, args: ValidateArgs) -> Result<()> {
    let report = pipeline::validate_files(&args.input, &args.stations, &catalog, args.max_km, args.time_quantum)?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("pairs.csv");
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_pairs_csv(BufWriter::new(file), &report.pairs)?;
    }
    println!(
        "mode={} pairs={} r={:.6} unmatched_sat={} unmatched_station={}",
        serde_json::to_value(report.mode)?.as_str().unwrap_or_default(),
        report.pair_count,
        report.r,
        report.unmatched_sat,
        report.unmatched_station
    );
    Ok(())
}

fn cmd_bench(catalog: Catalog, args: BenchArgs) -> Result<()> {
    let tmp;
    let work_dir = match args.out {
        Some(d) => d,
        None => {
            tmp = std::env::temp_dir().join(format!("aqcep-bench-{}", std::process::id()));
            tmp
        }
    };
    let cfg = BenchConfig {
        seed: args.seed,
        n_events: args.events,
        region: args.region,
        work_dir: work_dir.clone(),
    };
    let out = pipeline::bench(&cfg, &catalog)?;
    print_report(&out.bench);
    println!("outputs in {}", work_dir.join("output").display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let catalog = load_catalog(cli.catalog.as_deref())?;
    match cli.command {
        Command::Run(a) => cmd_run(catalog, a),
        Command::Synth(a) => cmd_synth(catalog, a),
        Command::Validate(a) => cmd_validate(catalog, a),
        Command::Bench(a) => cmd_bench(catalog, a),
    }
}

/// 2 for data shortfalls, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InsufficientData(_) | Error::UndefinedCorrelation(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
