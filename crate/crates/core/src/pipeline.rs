//! End-to-end orchestration: ingest on per-file threads, fuse, feed the
//! cascade from a producer thread, and drain complex events to the sinks.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use serde::Serialize;

use crate::catalog::Catalog;
use crate::emit;
use crate::error::{Error, Result};
use crate::ingest::{fuse, ingest_sources, parse_station_csv, IngestReport, InputSpec, LevelPolicy, SourceFilter};
use crate::model::SimpleEvent;
use crate::patterns::{
    build_cascade, AggregateEvent, AirQualityEvent, BreakpointTable, PollutantLevelEvent, CE1_STREAM, CE2_STREAM,
    CE3_STREAM, SIMPLE_STREAM,
};
use crate::synth::{write_plot_files, SynthConfig};
use crate::validation::{station_aqi_levels, validate, ValidationMode, ValidationReport};

pub const CE1_FILE: &str = "ce1_gas_aggregation.csv";
pub const CE2_FILE: &str = "ce2_pollutant_level.csv";
pub const CE3_FILE: &str = "ce3_air_quality.csv";
pub const GEOJSON_FILE: &str = "aqi.geojson";
pub const BENCH_FILE: &str = "bench_report.json";

// events per channel message
const BATCH: usize = 4096;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub catalog: Catalog,
    pub region: Option<String>,
    pub inputs: Vec<InputSpec>,
    pub out_dir: PathBuf,
    pub level_policy: LevelPolicy,
    pub lateness_secs: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BenchReport {
    pub input_files: usize,
    pub rows_read: u64,
    pub input_events: u64,
    pub ce1_events: u64,
    pub ce2_events: u64,
    pub ce3_events: u64,
    pub output_events: u64,
    pub wall_time_secs: f64,
    /// Process high-water mark; absent where the platform does not expose it.
    pub peak_rss_bytes: Option<u64>,
    pub output_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub ingest: IngestReport,
    pub bench: BenchReport,
    pub ce1: Vec<AggregateEvent>,
    pub ce2: Vec<PollutantLevelEvent>,
    pub ce3: Vec<AirQualityEvent>,
    pub files: Vec<PathBuf>,
}

/// Peak resident set size from `/proc/self/status`.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Complex events of one cascade run, in emission order.
#[derive(Debug, Clone, Default)]
pub struct Cascade {
    pub ce1: Vec<AggregateEvent>,
    pub ce2: Vec<PollutantLevelEvent>,
    pub ce3: Vec<AirQualityEvent>,
    pub emitted: u64,
}

/// Feeds time-ordered events through the cascade on a producer/consumer
/// pair and flushes at the last event time.
pub fn run_cascade(catalog: &Catalog, lateness_secs: i64, events: Vec<SimpleEvent>) -> Result<Cascade> {
    let mut engine = build_cascade(catalog, lateness_secs)?;
    let last = events.last().map(SimpleEvent::epoch_time);
    let mut out = Cascade::default();
    let mut sink = |emissions: Vec<crate::engine::Emission>| -> Result<()> {
        for e in emissions {
            match &*e.stream {
                CE1_STREAM => out.ce1.push(AggregateEvent::try_from(&e.event)?),
                CE2_STREAM => out.ce2.push(PollutantLevelEvent::try_from(&e.event)?),
                CE3_STREAM => out.ce3.push(AirQualityEvent::try_from(&e.event)?),
                _ => {}
            }
        }
        Ok(())
    };

    // producer hands immutable batches to the single engine consumer
    let (tx, rx) = mpsc::sync_channel::<Vec<SimpleEvent>>(16);
    std::thread::scope(|s| -> Result<()> {
        s.spawn(move || {
            let mut events = events.into_iter().peekable();
            while events.peek().is_some() {
                let batch: Vec<SimpleEvent> = events.by_ref().take(BATCH).collect();
                if tx.send(batch).is_err() {
                    break;
                }
            }
        });
        for batch in rx {
            for ev in batch {
                sink(engine.on_event(SIMPLE_STREAM, ev))?;
            }
        }
        Ok(())
    })?;
    if let Some(last) = last {
        sink(engine.flush(last))?;
    }
    out.emitted = engine.stats().emitted;
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Runs ingest, the cascade and all sinks, writing CE1/CE2/CE3 CSVs, the
/// GeoJSON layer and a bench report into `out_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let start = Instant::now();
    if cfg.inputs.is_empty() {
        return Err(Error::InsufficientData("no input files".into()));
    }
    for spec in &cfg.inputs {
        if !spec.path.is_file() {
            return Err(Error::Config(format!("input '{}' does not exist", spec.path.display())));
        }
    }
    let region = cfg.region.as_deref().map(|r| cfg.catalog.region(r)).transpose()?;
    let filter = SourceFilter {
        catalog: &cfg.catalog,
        region,
        level_policy: cfg.level_policy,
    };

    let sources = ingest_sources(&cfg.inputs, &filter)?;
    let mut ingest = IngestReport::default();
    let mut streams = Vec::with_capacity(sources.len());
    for (events, report) in sources {
        ingest.add(&report);
        streams.push(events);
    }
    let (events, fused) = fuse(streams);
    ingest.absorb_fuse(&fused);
    debug_assert!(ingest.reconciles());
    let input_events = events.len() as u64;
    log::info!("ingested {} rows into {input_events} events", ingest.rows_read);

    let cascade = run_cascade(&cfg.catalog, cfg.lateness_secs, events)?;

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io {
        path: cfg.out_dir.clone(),
        source: e,
    })?;
    let files: Vec<PathBuf> = [CE1_FILE, CE2_FILE, CE3_FILE, GEOJSON_FILE]
        .iter()
        .map(|f| cfg.out_dir.join(f))
        .collect();
    emit::write_ce1_csv(create(&files[0])?, &cascade.ce1)?;
    emit::write_ce2_csv(create(&files[1])?, &cascade.ce2)?;
    emit::write_ce3_csv(create(&files[2])?, &cascade.ce3)?;
    emit::write_geojson(create(&files[3])?, &cascade.ce3)?;
    let output_bytes = files
        .iter()
        .map(|f| std::fs::metadata(f).map(|m| m.len()).unwrap_or(0))
        .sum();

    let (ce1, ce2, ce3) = (
        cascade.ce1.len() as u64,
        cascade.ce2.len() as u64,
        cascade.ce3.len() as u64,
    );
    debug_assert_eq!(ce1 + ce2 + ce3, cascade.emitted);
    let bench = BenchReport {
        input_files: cfg.inputs.len(),
        rows_read: ingest.rows_read,
        input_events,
        ce1_events: ce1,
        ce2_events: ce2,
        ce3_events: ce3,
        output_events: ce1 + ce2 + ce3,
        wall_time_secs: start.elapsed().as_secs_f64(),
        peak_rss_bytes: peak_rss_bytes(),
        output_bytes,
    };
    let report_path = cfg.out_dir.join(BENCH_FILE);
    serde_json::to_writer_pretty(create(&report_path)?, &bench).map_err(|e| Error::Format(e.to_string()))?;

    Ok(RunOutcome {
        ingest,
        bench,
        ce1: cascade.ce1,
        ce2: cascade.ce2,
        ce3: cascade.ce3,
        files,
    })
}

/// Validates an emitted CE3 (AQI levels) or CE1 (concentrations) file
/// against a station CSV.
pub fn validate_files(
    sat_csv: &Path,
    station_csv: &Path,
    catalog: &Catalog,
    max_km: f64,
    quantum_secs: i64,
) -> Result<ValidationReport> {
    let file = File::open(sat_csv).map_err(|e| Error::Io {
        path: sat_csv.to_path_buf(),
        source: e,
    })?;
    let (mode, sat) = emit::read_sat_points(file, catalog.grid_resolution_deg)?;
    let (obs, report) = parse_station_csv(station_csv, catalog)?;
    if report.dropped() > 0 {
        log::warn!("{} of {} station rows dropped", report.dropped(), report.rows_read);
    }
    let obs = match mode {
        ValidationMode::AqiLevel => {
            let table = BreakpointTable::from_catalog(catalog)?;
            station_aqi_levels(&obs, &table, &catalog.order(), quantum_secs)
        }
        ValidationMode::Concentration => obs,
    };
    validate(mode, &sat, &obs, max_km, quantum_secs)
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub seed: u64,
    pub n_events: usize,
    pub region: String,
    pub work_dir: PathBuf,
}

/// Generates a synthetic corpus of `n_events` plots in the region and
/// runs the full cascade over it.
pub fn bench(cfg: &BenchConfig, catalog: &Catalog) -> Result<RunOutcome> {
    let region = catalog.region(&cfg.region)?.clone();
    let synth = SynthConfig::new(cfg.seed, cfg.n_events, region);
    let input_dir = cfg.work_dir.join("input");
    let plots = write_plot_files(&synth, catalog, &input_dir)?;
    let run_cfg = RunConfig {
        catalog: catalog.clone(),
        region: Some(cfg.region.clone()),
        inputs: plots
            .into_iter()
            .map(|p| InputSpec {
                path: p.path,
                pollutant: p.pollutant,
                unit: p.unit,
            })
            .collect(),
        out_dir: cfg.work_dir.join("output"),
        level_policy: LevelPolicy::default(),
        lateness_secs: 0,
    };
    run(&run_cfg)
}
