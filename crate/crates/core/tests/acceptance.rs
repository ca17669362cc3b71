//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any fails.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use aqcep_core::catalog::LevelSpec;
use aqcep_core::emit::write_geojson;
use aqcep_core::engine::{ComplexEvent, Engine, EngineConfig, Event, Field};
use aqcep_core::ingest::{fuse, ingest_source, InputSpec, LevelPolicy, SourceFilter};
use aqcep_core::patterns::{
    build_aggregation_patterns, build_cascade, build_level_patterns, AirQualityEvent, BreakpointTable, CE1_STREAM,
    CE2_STREAM, CE3_STREAM, SIMPLE_STREAM,
};
use aqcep_core::pipeline::{self, BenchConfig, RunConfig};
use aqcep_core::synth::{generate_pairing, generate_plots, PairingConfig, SynthConfig};
use aqcep_core::units::{column_convert, tca_from_column, vmr_from_tca, ColumnDensity, ColumnUnit};
use aqcep_core::validation::great_circle_km;
use aqcep_core::{Catalog, GeoPoint, GridCell, PollutantId, SimpleEvent};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if let false = $cond {
            return Err(format!($($fmt)+));
        }
    };
}

const RES: f64 = 0.05;

type Cell = (i64, i64);
type Ce1Key = (i64, Cell, PollutantId);

// ---------------------------------------------------------------- 1

fn throughput_envelope() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let catalog = Catalog::default_catalog();
    let started = Instant::now();
    let out = pipeline::bench(
        &BenchConfig {
            seed: 2018,
            n_events: 150_000,
            region: "morocco".into(),
            work_dir: dir.path().to_path_buf(),
        },
        &catalog,
    )
    .map_err(|e| e.to_string())?;
    let total = started.elapsed().as_secs_f64();
    let b = &out.bench;
    ensure!(b.rows_read == 150_000, "rows read {}", b.rows_read);
    ensure!(b.input_events == 150_000, "input events {}", b.input_events);
    let pollutants: std::collections::BTreeSet<_> = out.ce1.iter().map(|e| e.pollutant).collect();
    ensure!(pollutants.len() == 9, "CE1 covers {} pollutants", pollutants.len());
    ensure!(b.ce3_events > 0, "no CE3 output");
    ensure!(
        b.wall_time_secs <= 17.0,
        "pipeline wall time {:.2}s > 17s",
        b.wall_time_secs
    );
    let rss = b.peak_rss_bytes.ok_or("peak RSS unavailable")?;
    ensure!(rss <= 4 << 30, "peak RSS {} bytes > 4 GB", rss);
    Ok(format!(
        "150000 events -> {} complex events; pipeline {:.2}s, {:.2}s including synthesis; peak RSS {:.0} MiB",
        b.output_events,
        b.wall_time_secs,
        total,
        rss as f64 / 1048576.0
    ))
}

// ---------------------------------------------------------------- 2

struct OracleLevels {
    lowers: BTreeMap<PollutantId, Vec<(f64, u8)>>,
}

impl OracleLevels {
    fn new(catalog: &Catalog) -> Self {
        let mut lowers = BTreeMap::new();
        for e in &catalog.pollutants {
            if let LevelSpec::Bands(defs) = &e.levels {
                lowers.insert(e.pollutant.id, defs.iter().map(|d| (d.lower, d.level)).collect());
            }
        }
        OracleLevels { lowers }
    }

    /// Level of the band with the largest lower bound not above `v`.
    fn level(&self, p: PollutantId, v: f64) -> u8 {
        let mut best = (f64::NEG_INFINITY, 0u8);
        for &(lo, level) in &self.lowers[&p] {
            if lo <= v && lo > best.0 {
                best = (lo, level);
            }
        }
        best.1
    }
}

#[derive(Debug, Clone, Copy)]
struct Agg {
    avg: f64,
    min: f64,
    max: f64,
    count: u64,
}

fn cell_center(row: i64, col: i64) -> GeoPoint {
    GeoPoint::new((row as f64 + 0.5) * RES - 90.0, (col as f64 + 0.5) * RES - 180.0).unwrap()
}

fn engine_oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let catalog = Catalog::default_catalog();
    let levels = OracleLevels::new(&catalog);
    let order = catalog.order();
    let windows: BTreeMap<PollutantId, i64> = catalog
        .pollutants
        .iter()
        .map(|e| (e.pollutant.id, e.pollutant.window_hours.seconds()))
        .collect();
    let slide = 1800i64;
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1);
    let (mut ce1_checked, mut ce3_checked) = (0usize, 0usize);

    for trace in 0..100 {
        let n_events = rng.random_range(1..=5000);
        let n_cells = rng.random_range(1..=50);
        let cells: Vec<Cell> = (0..n_cells)
            .map(|_| (rng.random_range(2300..2700), rng.random_range(3300..3700)))
            .collect();
        let t0 = 1_541_635_200 + rng.random_range(0..1800);
        let span = rng.random_range(1800..(36 * 3600));
        let mut raw: Vec<(i64, Cell, PollutantId, f64)> = (0..n_events)
            .map(|_| {
                let p = PollutantId::ALL[rng.random_range(0..9)];
                let top = levels.lowers[&p][5].0;
                let v = if rng.random_bool(0.1) {
                    // land exactly on a boundary now and then
                    levels.lowers[&p][rng.random_range(0..6)].0
                } else {
                    rng.random_range(0.0..top * 1.3)
                };
                (
                    t0 + rng.random_range(0..span),
                    cells[rng.random_range(0..n_cells)],
                    p,
                    v,
                )
            })
            .collect();
        raw.sort_by_key(|e| e.0);

        // engine
        let mut engine = build_cascade(&catalog, 0).map_err(|e| e.to_string())?;
        let mut got1: BTreeMap<Ce1Key, Agg> = BTreeMap::new();
        let mut got3: BTreeMap<(i64, Cell), (u8, PollutantId)> = BTreeMap::new();
        let mut collect = |em: Vec<aqcep_core::engine::Emission>| {
            for e in em {
                let ev = &e.event;
                let cell = (ev.cell.row, ev.cell.col);
                match &*e.stream {
                    CE1_STREAM => {
                        got1.insert(
                            (ev.epoch_time, cell, ev.pollutant.unwrap()),
                            Agg {
                                avg: ev.get(Field::Avg).unwrap(),
                                min: ev.get(Field::Min).unwrap(),
                                max: ev.get(Field::Max).unwrap(),
                                count: ev.get(Field::Count).unwrap() as u64,
                            },
                        );
                    }
                    CE3_STREAM => {
                        got3.insert(
                            (ev.epoch_time, cell),
                            (ev.get(Field::LevelNumber).unwrap() as u8, ev.pollutant.unwrap()),
                        );
                    }
                    _ => {}
                }
            }
        };
        for &(t, (r, c), p, v) in &raw {
            let ev = SimpleEvent::new(t, cell_center(r, c), p, v).unwrap();
            collect(engine.on_event(SIMPLE_STREAM, ev));
        }
        collect(engine.flush(raw.last().unwrap().0));

        // brute-force buffer and scan
        let mut by_key: BTreeMap<(Cell, PollutantId), Vec<(i64, f64)>> = BTreeMap::new();
        for &(t, cell, p, v) in &raw {
            by_key.entry((cell, p)).or_default().push((t, v));
        }
        let mut want1: BTreeMap<Ce1Key, Agg> = BTreeMap::new();
        for (&(cell, p), evs) in &by_key {
            let len = windows[&p];
            let t_min = evs.iter().map(|e| e.0).min().unwrap();
            let t_max = evs.iter().map(|e| e.0).max().unwrap();
            let mut end = (t_min / slide + 1) * slide;
            while end - len <= t_max {
                let inside: Vec<f64> = evs
                    .iter()
                    .filter(|e| e.0 >= end - len && e.0 < end)
                    .map(|e| e.1)
                    .collect();
                if !inside.is_empty() {
                    want1.insert(
                        (end, cell, p),
                        Agg {
                            avg: inside.iter().sum::<f64>() / inside.len() as f64,
                            min: inside.iter().cloned().fold(f64::INFINITY, f64::min),
                            max: inside.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                            count: inside.len() as u64,
                        },
                    );
                }
                end += slide;
            }
        }
        // CE3 at E summarizes the level events stamped in [E - 1800, E)
        let mut want3: BTreeMap<(i64, Cell), (u8, PollutantId)> = BTreeMap::new();
        let mut grouped: BTreeMap<(i64, Cell), Vec<(PollutantId, u8)>> = BTreeMap::new();
        for (&(end, cell, p), a) in &want1 {
            grouped
                .entry((end + slide, cell))
                .or_default()
                .push((p, levels.level(p, a.avg)));
        }
        for (key, mut lv) in grouped {
            lv.sort_by_key(|(p, _)| order.iter().position(|o| o == p).unwrap());
            let mut best = lv[0];
            for &(p, l) in &lv[1..] {
                if l > best.1 {
                    best = (p, l);
                }
            }
            want3.insert(key, (best.1, best.0));
        }

        ensure!(
            got1.len() == want1.len(),
            "trace {trace}: {} CE1 events vs oracle {}",
            got1.len(),
            want1.len()
        );
        for (k, w) in &want1 {
            let g = got1.get(k).ok_or_else(|| format!("trace {trace}: missing CE1 {k:?}"))?;
            ensure!(
                g.min == w.min && g.max == w.max && g.count == w.count,
                "trace {trace}: CE1 {k:?} engine {g:?} oracle {w:?}"
            );
            let rel = (g.avg - w.avg).abs() / w.avg.abs().max(f64::MIN_POSITIVE);
            ensure!(
                g.avg == w.avg || rel <= 1e-9,
                "trace {trace}: CE1 {k:?} avg {} vs {}",
                g.avg,
                w.avg
            );
        }
        ensure!(
            got3 == want3,
            "trace {trace}: CE3 differs ({} vs {} events)",
            got3.len(),
            want3.len()
        );
        ce1_checked += want1.len();
        ce3_checked += want3.len();
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs <= 60.0, "took {secs:.1}s > 60s");
    Ok(format!(
        "100 traces, {ce1_checked} CE1 and {ce3_checked} CE3 events match the oracle in {secs:.2}s"
    ))
}

// ---------------------------------------------------------------- 3

fn pattern_cardinality() -> Outcome {
    let catalog = Catalog::default_catalog();
    let table = BreakpointTable::from_catalog(&catalog).map_err(|e| e.to_string())?;
    let agg = build_aggregation_patterns(&catalog).map_err(|e| e.to_string())?;
    let lvl = build_level_patterns(&catalog, &table).map_err(|e| e.to_string())?;
    ensure!(agg.len() == 9, "{} aggregation patterns", agg.len());
    ensure!(lvl.len() == 54, "{} level patterns", lvl.len());

    let mut engine = Engine::new(EngineConfig::default()).map_err(|e| e.to_string())?;
    engine.register_all(lvl).map_err(|e| e.to_string())?;
    let levels = OracleLevels::new(&catalog);
    let cell = GridCell {
        row: 2515,
        col: 3483,
        resolution_deg: RES,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(54);
    let mut fired = 0;
    for k in 0..10_000 {
        let p = PollutantId::ALL[k % 9];
        let top = levels.lowers[&p][5].0;
        let v = match k % 4 {
            0 => levels.lowers[&p][rng.random_range(0..6)].0,
            1 => rng.random_range(0.0..top * 2.0),
            2 => top * rng.random_range(0.0f64..1.0).powi(6),
            _ => top * 10f64.powf(rng.random_range(0.0..4.0)),
        };
        let ce = ComplexEvent {
            pattern: Arc::from("probe"),
            epoch_time: 1_541_635_200 + k as i64,
            cell,
            pollutant: Some(p),
            fields: vec![(Field::Avg, v)],
            label: None,
        };
        let out = engine.on_event(CE1_STREAM, Event::Complex(ce));
        let ce2: Vec<_> = out.iter().filter(|e| &*e.stream == CE2_STREAM).collect();
        ensure!(ce2.len() == 1, "{p} avg {v}: {} level patterns fired", ce2.len());
        let got = ce2[0].event.get(Field::LevelNumber).unwrap() as u8;
        ensure!(got == levels.level(p, v), "{p} avg {v}: level {got}");
        fired += 1;
    }
    Ok(format!(
        "9 aggregation + 54 level specs; {fired} random averages each fired exactly one level"
    ))
}

// ---------------------------------------------------------------- 4

fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat().to_radians(), b.lat().to_radians());
    let dp = p2 - p1;
    let dl = (b.lon() - a.lon()).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6378.0 * h.sqrt().min(1.0).asin()
}

fn distance_conformance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut n = 0;
    while n < 1000 {
        let a = GeoPoint::new(rng.random_range(-80.0..80.0), rng.random_range(-179.0..179.0)).unwrap();
        let b = GeoPoint::new(
            a.lat() + rng.random_range(-0.9..0.9),
            a.lon() + rng.random_range(-0.9..0.9),
        )
        .unwrap();
        let h = haversine_km(a, b);
        if h >= 100.0 || h == 0.0 {
            continue;
        }
        let d = great_circle_km(a, b);
        worst = worst.max((d - h).abs() / h);
        ensure!(
            great_circle_km(a, a) == 0.0,
            "identical point distance nonzero at {a:?}"
        );
        n += 1;
    }
    ensure!(worst <= 0.005, "worst relative error {worst:e}");
    let deg = great_circle_km(GeoPoint::new(0.0, 0.0).unwrap(), GeoPoint::new(0.0, 1.0).unwrap());
    ensure!((deg - 111.32).abs() <= 0.1, "one degree = {deg} km");
    Ok(format!(
        "1000 pairs < 100 km, worst relative error {worst:.2e}; 1 degree = {deg:.4} km"
    ))
}

// ---------------------------------------------------------------- 5

fn unit_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let units = [ColumnUnit::MoleculesPerCm2, ColumnUnit::KgPerM2, ColumnUnit::Dobson];
    let mut worst_rt = 0.0f64;
    let mut worst_id = 0.0f64;
    for _ in 0..10_000 {
        let v = 10f64.powf(rng.random_range(-6.0..28.0));
        let from = units[rng.random_range(0..3)];
        let to = units[rng.random_range(0..3)];
        let c = ColumnDensity::new(v, from).unwrap();
        let there = column_convert(c, to).map_err(|e| e.to_string())?;
        let back = column_convert(there, from).map_err(|e| e.to_string())?;
        worst_rt = worst_rt.max((back.value - v).abs() / v);

        let kg = ColumnDensity::new(v, ColumnUnit::KgPerM2).unwrap();
        let vmr = vmr_from_tca(tca_from_column(kg).map_err(|e| e.to_string())?, 29.0).map_err(|e| e.to_string())?;
        worst_id = worst_id.max((vmr.value - v / 15800.0).abs() / (v / 15800.0));
    }
    ensure!(worst_rt <= 1e-12, "round trip error {worst_rt:e}");
    ensure!(worst_id <= 1e-12, "identity error {worst_id:e}");
    let anchor = column_convert(
        ColumnDensity::new(2.0e25, ColumnUnit::MoleculesPerCm2).unwrap(),
        ColumnUnit::KgPerM2,
    )
    .map_err(|e| e.to_string())?;
    let back = column_convert(
        ColumnDensity::new(15800.0, ColumnUnit::KgPerM2).unwrap(),
        ColumnUnit::MoleculesPerCm2,
    )
    .map_err(|e| e.to_string())?;
    ensure!(anchor.value == 15800.0, "2e25 molecules/cm2 -> {} kg/m2", anchor.value);
    ensure!(back.value == 2.0e25, "15800 kg/m2 -> {} molecules/cm2", back.value);
    Ok(format!(
        "round trip {worst_rt:.1e}, MW=29 identity {worst_id:.1e}, anchor exact"
    ))
}

// ---------------------------------------------------------------- 6

fn two_pass_r(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Mean and spread of r over repeated draws of the pairing model.
fn monte_carlo_r(cfg: &PairingConfig, trials: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_sd.max(f64::MIN_POSITIVE)).unwrap();
    let rs: Vec<f64> = (0..trials)
        .map(|_| {
            let xs: Vec<f64> = (0..cfg.n_pairs)
                .map(|_| rng.random_range(cfg.sat_range.0..=cfg.sat_range.1))
                .collect();
            let ys: Vec<f64> = xs
                .iter()
                .map(|x| {
                    cfg.a * x
                        + cfg.b
                        + if cfg.noise_sd > 0.0 {
                            noise.sample(&mut rng)
                        } else {
                            0.0
                        }
                })
                .collect();
            two_pass_r(&xs, &ys)
        })
        .collect();
    let mean = rs.iter().sum::<f64>() / trials as f64;
    let sd = (rs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
    (mean, sd)
}

fn correlation_recovery() -> Outcome {
    let catalog = Catalog::default_catalog();
    let region = catalog.region("spain").map_err(|e| e.to_string())?.clone();
    let mut detail = String::new();
    for (k, target) in [1.0, 0.75, 0.0].into_iter().enumerate() {
        let cfg = PairingConfig::for_target_r(target, 1000, region.clone(), 42);
        let (mc_mean, mc_sd) = monte_carlo_r(&cfg, 400, 1000 + k as u64);
        ensure!(
            (mc_mean - target).abs() <= 0.01,
            "target {target}: Monte-Carlo mean r {mc_mean}"
        );
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let files = generate_pairing(&cfg, &catalog, dir.path()).map_err(|e| e.to_string())?;
        let report = pipeline::validate_files(&files.sat_csv, &files.station_csv, &catalog, 1.0, 600)
            .map_err(|e| e.to_string())?;
        ensure!(
            report.pair_count == 1000,
            "target {target}: {} pairs",
            report.pair_count
        );
        ensure!(
            (report.r - target).abs() <= 0.05,
            "target {target}: recovered r {:.4} (Monte-Carlo {mc_mean:.4} +/- {mc_sd:.4})",
            report.r
        );
        let _ = write!(
            detail,
            "r={target}: got {:.4} (MC {mc_mean:.4}+/-{mc_sd:.4}); ",
            report.r
        );
    }
    Ok(detail.trim_end_matches("; ").to_string())
}

// ---------------------------------------------------------------- 7

fn ingest_filter_fidelity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("crafted_CO_ppmv.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut kinds: Vec<u8> = std::iter::repeat_n(0u8, 750)
        .chain(std::iter::repeat_n(1, 150))
        .chain(std::iter::repeat_n(2, 50))
        .chain(std::iter::repeat_n(3, 50))
        .collect();
    kinds.shuffle(&mut rng);
    let mut csv = String::from("EpochTime,DateTime,Longitude,Latitude");
    for l in 1..=12 {
        let _ = write!(csv, ",Level{l}");
    }
    csv.push('\n');
    for (i, kind) in kinds.iter().enumerate() {
        let t = 1_541_635_200 + i as i64 * 7;
        let (lat, lon) = (rng.random_range(28.0..35.0), rng.random_range(-12.0..-2.0));
        let first = match kind {
            0 => format!("{}", 0.1 + i as f64 * 1e-3),
            1 => format!("{}", rng.random_range(50.5..500.0)),
            2 => format!("{}", -rng.random_range(0.01..5.0)),
            _ => "-0.0".to_string(),
        };
        let _ = write!(csv, "{t},,{lon},{lat},{first}");
        for _ in 1..12 {
            csv.push_str(",-0.0");
        }
        csv.push('\n');
    }
    std::fs::write(&path, csv).map_err(|e| e.to_string())?;

    let catalog = Catalog::default_catalog();
    let spec = InputSpec::from_path(&path).map_err(|e| e.to_string())?;
    let filter = SourceFilter {
        catalog: &catalog,
        region: Some(catalog.region("morocco").map_err(|e| e.to_string())?),
        level_policy: LevelPolicy::default(),
    };
    let (events, mut report) = ingest_source(&spec, &filter).map_err(|e| e.to_string())?;
    let (fused, fr) = fuse(vec![events]);
    report.absorb_fuse(&fr);
    ensure!(report.rows_read == 1000, "read {}", report.rows_read);
    ensure!(
        report.rows_dropped_range == 200,
        "range drops {}",
        report.rows_dropped_range
    );
    ensure!(
        report.rows_dropped_empty == 50,
        "empty drops {}",
        report.rows_dropped_empty
    );
    ensure!(report.dropped() == 250, "total drops {} ({report:?})", report.dropped());
    ensure!(
        report.rows_emitted == 750 && fused.len() == 750,
        "emitted {}",
        report.rows_emitted
    );
    ensure!(report.reconciles(), "report does not reconcile: {report:?}");
    Ok("1000 rows: 200 range + 50 empty dropped, 750 emitted, reconciles".into())
}

// ---------------------------------------------------------------- 8

fn output_files(dir: &Path) -> Vec<PathBuf> {
    [
        pipeline::CE1_FILE,
        pipeline::CE2_FILE,
        pipeline::CE3_FILE,
        pipeline::GEOJSON_FILE,
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect()
}

fn synth_and_run(root: &Path, seed: u64, shuffle: Option<u64>) -> Result<PathBuf, String> {
    let catalog = Catalog::default_catalog();
    let region = catalog.region("morocco").map_err(|e| e.to_string())?.clone();
    let input = root.join("input");
    let plots = generate_plots(&SynthConfig::new(seed, 15_000, region), &catalog, &input).map_err(|e| e.to_string())?;
    let mut inputs: Vec<InputSpec> = plots
        .into_iter()
        .map(|p| InputSpec {
            path: p.path,
            pollutant: p.pollutant,
            unit: p.unit,
        })
        .collect();
    if let Some(s) = shuffle {
        inputs.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
    }
    let out = root.join("output");
    pipeline::run(&RunConfig {
        catalog,
        region: Some("morocco".into()),
        inputs,
        out_dir: out.clone(),
        level_policy: LevelPolicy::default(),
        lateness_secs: 0,
    })
    .map_err(|e| e.to_string())?;
    Ok(out)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = synth_and_run(&dir.path().join("a"), 11, None)?;
    let b = synth_and_run(&dir.path().join("b"), 11, None)?;
    let mut bytes = 0;
    for (fa, fb) in output_files(&a).iter().zip(output_files(&b)) {
        let (x, y) = (
            std::fs::read(fa).map_err(|e| e.to_string())?,
            std::fs::read(&fb).map_err(|e| e.to_string())?,
        );
        ensure!(x == y, "{} differs between identical runs", fa.display());
        bytes += x.len();
    }
    for s in [1u64, 2, 3] {
        let c = synth_and_run(&dir.path().join(format!("perm{s}")), 11, Some(s))?;
        for (fa, fc) in output_files(&a).iter().zip(output_files(&c)) {
            let (x, y) = (
                std::fs::read(fa).map_err(|e| e.to_string())?,
                std::fs::read(&fc).map_err(|e| e.to_string())?,
            );
            ensure!(x == y, "{} changes under input permutation {s}", fa.display());
        }
    }
    Ok(format!(
        "two runs byte-identical ({bytes} bytes over 4 files); 3 input permutations identical"
    ))
}

// ---------------------------------------------------------------- 9

fn conforms(text: &str, expected: usize) -> Result<(), String> {
    let gj: geojson::GeoJson = text.parse().map_err(|e: geojson::Error| e.to_string())?;
    let geojson::GeoJson::FeatureCollection(fc) = gj else {
        return Err("not a FeatureCollection".into());
    };
    ensure!(
        fc.features.len() == expected,
        "{} features, expected {expected}",
        fc.features.len()
    );
    for f in &fc.features {
        let g = f.geometry.as_ref().ok_or("feature without geometry")?;
        let geojson::Value::Point(pos) = &g.value else {
            return Err(format!("geometry {} is not a Point", g.value.type_name()));
        };
        ensure!(pos.len() == 2, "position has {} coordinates", pos.len());
        ensure!(
            (-180.0..=180.0).contains(&pos[0]) && (-90.0..=90.0).contains(&pos[1]),
            "bad position {pos:?}"
        );
        let props = f.properties.as_ref().ok_or("feature without properties")?;
        for key in ["epoch_time", "aqi_level", "dominant_pollutant"] {
            ensure!(props.contains_key(key), "missing property {key}");
        }
    }
    // re-serializing through the validator must round-trip
    let again: geojson::GeoJson = geojson::GeoJson::FeatureCollection(fc)
        .to_string()
        .parse()
        .map_err(|e: geojson::Error| e.to_string())?;
    ensure!(
        matches!(again, geojson::GeoJson::FeatureCollection(_)),
        "round trip lost the collection"
    );
    Ok(())
}

fn geojson_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in [0usize, 1, 10_000] {
        let events: Vec<AirQualityEvent> = (0..n)
            .map(|k| AirQualityEvent {
                epoch_time: 1_541_637_000 + (k as i64 / 100) * 1800,
                cell: GridCell {
                    row: rng.random_range(0..3600),
                    col: rng.random_range(0..7200),
                    resolution_deg: RES,
                },
                aqi_level: rng.random_range(1..=6),
                dominant_pollutant: PollutantId::ALL[rng.random_range(0..9)],
            })
            .collect();
        let mut buf = Vec::new();
        write_geojson(&mut buf, &events).map_err(|e| e.to_string())?;
        let text = String::from_utf8(buf).map_err(|e| e.to_string())?;
        conforms(&text, n).map_err(|e| format!("{n} events: {e}"))?;
    }
    Ok("0, 1 and 10000 event collections parse as valid FeatureCollections".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("throughput envelope", throughput_envelope),
        ("engine-oracle equivalence", engine_oracle_equivalence),
        ("pattern cardinality", pattern_cardinality),
        ("great-circle conformance", distance_conformance),
        ("unit-math identities", unit_identities),
        ("correlation recovery", correlation_recovery),
        ("ingest filter fidelity", ingest_filter_fidelity),
        ("determinism", determinism),
        ("GeoJSON validity", geojson_validity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    println!();
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|s| name.contains(s.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} PASS {name} [{secs:.2}s]: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL {name} [{secs:.2}s]: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
