//! Plot and station CSV parsing, quality filters, geographic sub-setting
//! and multi-source fusion into one time-ordered event stream.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::model::{
    is_empty_value, GeoPoint, PlotRecord, PollutantId, SimpleEvent, StationObservation, Variable, EMPTY_SENTINEL,
    LEVEL_COUNT,
};
use crate::units::{normalize_with, RawUnit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityRange {
    pub variable: String,
    pub min: f64,
    pub max: f64,
}

impl QualityRange {
    pub fn validate(&self) -> Result<()> {
        if self.min <= self.max {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "quality range for {}: min {} > max {}",
                self.variable, self.min, self.max
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub name: String,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lat_min <= self.lat_max
            && self.lon_min <= self.lon_max
            && GeoPoint::new(self.lat_min, self.lon_min).is_ok()
            && GeoPoint::new(self.lat_max, self.lon_max).is_ok();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid bounding box '{}'", self.name)))
        }
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.lat_min..=self.lat_max).contains(&p.lat()) && (self.lon_min..=self.lon_max).contains(&p.lon())
    }
}

/// Row accounting for one or more ingested sources.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: u64,
    pub rows_dropped_malformed: u64,
    pub rows_dropped_empty: u64,
    pub rows_dropped_range: u64,
    pub rows_dropped_bbox: u64,
    pub rows_dropped_unit: u64,
    pub rows_dropped_unknown: u64,
    pub rows_dropped_duplicate: u64,
    pub rows_emitted: u64,
}

impl IngestReport {
    pub fn dropped(&self) -> u64 {
        self.rows_dropped_malformed
            + self.rows_dropped_empty
            + self.rows_dropped_range
            + self.rows_dropped_bbox
            + self.rows_dropped_unit
            + self.rows_dropped_unknown
            + self.rows_dropped_duplicate
    }

    pub fn reconciles(&self) -> bool {
        self.rows_read == self.rows_emitted + self.dropped()
    }

    pub fn add(&mut self, o: &IngestReport) {
        self.rows_read += o.rows_read;
        self.rows_dropped_malformed += o.rows_dropped_malformed;
        self.rows_dropped_empty += o.rows_dropped_empty;
        self.rows_dropped_range += o.rows_dropped_range;
        self.rows_dropped_bbox += o.rows_dropped_bbox;
        self.rows_dropped_unit += o.rows_dropped_unit;
        self.rows_dropped_unknown += o.rows_dropped_unknown;
        self.rows_dropped_duplicate += o.rows_dropped_duplicate;
        self.rows_emitted += o.rows_emitted;
    }

    /// Folds the result of [`fuse`] into the summed per-source reports.
    pub fn absorb_fuse(&mut self, fused: &IngestReport) {
        debug_assert_eq!(fused.rows_read, self.rows_emitted);
        self.rows_dropped_duplicate += fused.rows_dropped_duplicate;
        self.rows_emitted = fused.rows_emitted;
    }
}

/// Which altitude slice feeds the cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LevelPolicy {
    #[default]
    LowestNonEmpty,
    /// 0-based slice index.
    Fixed(usize),
}

impl FromStr for LevelPolicy {
    type Err = Error;

    /// `lowest` or a 1-based level number (`3`, `level3`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "lowest" {
            return Ok(LevelPolicy::LowestNonEmpty);
        }
        let digits = s.strip_prefix("level").unwrap_or(&s);
        match digits.parse::<usize>() {
            Ok(n) if (1..=LEVEL_COUNT).contains(&n) => Ok(LevelPolicy::Fixed(n - 1)),
            _ => Err(Error::Config(format!(
                "level policy must be 'lowest' or 1..={LEVEL_COUNT}, got '{s}'"
            ))),
        }
    }
}

/// The value of one slice, or `None` when it is empty.
pub fn filter_empty(rec: &PlotRecord, level_index: usize) -> Option<f64> {
    rec.levels.get(level_index).copied().filter(|v| !is_empty_value(*v))
}

pub fn select_level(rec: &PlotRecord, policy: LevelPolicy) -> Option<f64> {
    match policy {
        LevelPolicy::Fixed(i) => filter_empty(rec, i),
        LevelPolicy::LowestNonEmpty => (0..LEVEL_COUNT).find_map(|i| filter_empty(rec, i)),
    }
}

/// Inclusive range check. Variables without a configured range pass.
pub fn filter_range(value: f64, variable: &str, ranges: &[QualityRange]) -> bool {
    ranges
        .iter()
        .filter(|r| r.variable.eq_ignore_ascii_case(variable))
        .all(|r| r.min <= value && value <= r.max)
}

pub fn filter_bbox(p: GeoPoint, bbox: &BoundingBox) -> bool {
    bbox.contains(p)
}

const PLOT_COLUMNS: [&str; 4] = ["epochtime", "datetime", "longitude", "latitude"];

struct PlotColumns {
    epoch: usize,
    date_time: usize,
    lon: usize,
    lat: usize,
    levels: [usize; LEVEL_COUNT],
    quality: Option<usize>,
}

impl PlotColumns {
    fn locate(headers: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Format(format!("missing required column '{name}'")))
        };
        let mut levels = [0usize; LEVEL_COUNT];
        for (i, slot) in levels.iter_mut().enumerate() {
            *slot = find(&format!("level{}", i + 1))?;
        }
        Ok(PlotColumns {
            epoch: find(PLOT_COLUMNS[0])?,
            date_time: find(PLOT_COLUMNS[1])?,
            lon: find(PLOT_COLUMNS[2])?,
            lat: find(PLOT_COLUMNS[3])?,
            levels,
            quality: find("quality").ok(),
        })
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}

fn parse_epoch(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    let f = s.parse::<f64>().ok()?;
    (f.is_finite() && f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

fn parse_date_time(s: &str) -> std::result::Result<Option<DateTime<Utc>>, ()> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(Some(dt.with_timezone(&Utc)));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(Some(dt.and_utc()));
        }
    }
    Err(())
}

// An empty level cell is the same as the "-0.0" marker.
fn parse_level(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() {
        Some(EMPTY_SENTINEL)
    } else {
        s.parse::<f64>().ok()
    }
}

fn plot_row(cols: &PlotColumns, row: &csv::StringRecord, variable: &Variable) -> Option<PlotRecord> {
    let epoch_time = parse_epoch(row.get(cols.epoch)?)?;
    let date_time = parse_date_time(row.get(cols.date_time)?).ok()?;
    if let Some(dt) = date_time {
        if dt.timestamp() != epoch_time {
            return None;
        }
    }
    let lat = parse_f64(row.get(cols.lat)?)?;
    let lon = parse_f64(row.get(cols.lon)?)?;
    let location = GeoPoint::new(lat, lon).ok()?;
    let mut levels = [EMPTY_SENTINEL; LEVEL_COUNT];
    for (slot, &col) in levels.iter_mut().zip(cols.levels.iter()) {
        *slot = parse_level(row.get(col)?)?;
    }
    let quality = cols
        .quality
        .and_then(|q| row.get(q))
        .map(str::trim)
        .filter(|q| !q.is_empty())
        .map(str::to_owned);
    Some(PlotRecord {
        epoch_time,
        date_time,
        location,
        levels,
        variable: variable.clone(),
        quality,
    })
}

/// Parses a plot CSV from any reader. Malformed rows are counted, not fatal.
pub fn read_plot_csv<R: Read>(reader: R, variable: &Variable) -> Result<(Vec<PlotRecord>, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let cols = PlotColumns::locate(rdr.headers()?)?;
    let mut report = IngestReport::default();
    let mut out = Vec::new();
    for row in rdr.records() {
        report.rows_read += 1;
        match row.ok().and_then(|r| plot_row(&cols, &r, variable)) {
            Some(rec) => out.push(rec),
            None => report.rows_dropped_malformed += 1,
        }
    }
    report.rows_emitted = out.len() as u64;
    Ok((out, report))
}

pub fn parse_plot_csv(path: &Path, variable: &Variable) -> Result<(Vec<PlotRecord>, IngestReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_plot_csv(file, variable).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// A plot file together with the pollutant and unit its values carry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSpec {
    pub path: PathBuf,
    pub pollutant: PollutantId,
    pub unit: RawUnit,
}

impl InputSpec {
    /// Accepts `POLLUTANT:UNIT:PATH`, or a bare path whose file stem ends in
    /// `_<POLLUTANT>_<UNIT>` (e.g. `plots_CO_ppmv.csv`).
    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = s.splitn(3, ':');
        if let (Some(p), Some(u), Some(path)) = (parts.next(), parts.next(), parts.next()) {
            if let (Ok(pollutant), Ok(unit)) = (p.parse(), u.parse()) {
                return Ok(InputSpec {
                    path: PathBuf::from(path),
                    pollutant,
                    unit,
                });
            }
        }
        Self::from_path(Path::new(s))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let tokens: Vec<&str> = stem.split('_').collect();
        // units such as kg_m2 span two tokens
        for unit_len in [1usize, 2] {
            if tokens.len() < unit_len + 1 {
                continue;
            }
            let split = tokens.len() - unit_len;
            let unit = tokens[split..].join("_");
            if let (Ok(pollutant), Ok(unit)) = (tokens[split - 1].parse(), unit.parse()) {
                return Ok(InputSpec {
                    path: path.to_path_buf(),
                    pollutant,
                    unit,
                });
            }
        }
        Err(Error::Config(format!(
            "cannot infer pollutant and unit for '{}'; use POLLUTANT:UNIT:PATH",
            path.display()
        )))
    }
}

/// Per-source settings shared by every input file of a run.
#[derive(Debug, Clone)]
pub struct SourceFilter<'a> {
    pub catalog: &'a Catalog,
    pub region: Option<&'a BoundingBox>,
    pub level_policy: LevelPolicy,
}

/// Turns parsed plot records into simple events, applying the empty,
/// range and bounding-box filters and unit normalization.
pub fn records_to_events(
    records: &[PlotRecord],
    spec_unit: RawUnit,
    pollutant: PollutantId,
    filter: &SourceFilter<'_>,
    report: &mut IngestReport,
) -> Vec<SimpleEvent> {
    let mut out = Vec::with_capacity(records.len());
    let info = filter.catalog.pollutant(pollutant);
    for rec in records {
        let Some(raw) = select_level(rec, filter.level_policy) else {
            report.rows_dropped_empty += 1;
            continue;
        };
        if !filter_range(raw, rec.variable.name(), &filter.catalog.quality_ranges) {
            report.rows_dropped_range += 1;
            continue;
        }
        if let Some(bbox) = filter.region {
            if !filter_bbox(rec.location, bbox) {
                report.rows_dropped_bbox += 1;
                continue;
            }
        }
        let Some(info) = info else {
            report.rows_dropped_unknown += 1;
            continue;
        };
        let value = match normalize_with(raw, spec_unit, info, filter.catalog.dobson_molecules_per_cm2) {
            Ok(v) => v,
            Err(Error::Unit(_)) => {
                report.rows_dropped_unit += 1;
                continue;
            }
            // negative raw value
            Err(_) => {
                report.rows_dropped_range += 1;
                continue;
            }
        };
        match SimpleEvent::new(rec.epoch_time, rec.location, pollutant, value) {
            Ok(e) => out.push(e),
            Err(_) => report.rows_dropped_range += 1,
        }
    }
    report.rows_emitted = out.len() as u64;
    out
}

/// Parses and filters one plot file into simple events.
pub fn ingest_source(spec: &InputSpec, filter: &SourceFilter<'_>) -> Result<(Vec<SimpleEvent>, IngestReport)> {
    let (records, mut report) = parse_plot_csv(&spec.path, &Variable::Pollutant(spec.pollutant))?;
    let events = records_to_events(&records, spec.unit, spec.pollutant, filter, &mut report);
    debug_assert!(report.reconciles());
    Ok((events, report))
}

/// Ingests every source on its own thread. Results keep the input order.
pub fn ingest_sources(specs: &[InputSpec], filter: &SourceFilter<'_>) -> Result<Vec<(Vec<SimpleEvent>, IngestReport)>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = specs
            .iter()
            .map(|spec| s.spawn(move || ingest_source(spec, filter)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ingest worker panicked"))
            .collect()
    })
}

/// Merges sources into one stream ordered by time, then pollutant, lat,
/// lon and value; exact duplicates are dropped.
pub fn fuse(sources: Vec<Vec<SimpleEvent>>) -> (Vec<SimpleEvent>, IngestReport) {
    let mut all: Vec<SimpleEvent> = sources.into_iter().flatten().collect();
    let mut report = IngestReport {
        rows_read: all.len() as u64,
        ..Default::default()
    };
    all.sort_unstable_by(|a, b| a.order_key(b));
    all.dedup_by(|a, b| a.order_key(b).is_eq());
    report.rows_dropped_duplicate = report.rows_read - all.len() as u64;
    report.rows_emitted = all.len() as u64;
    (all, report)
}

const STATION_COLUMNS: [&str; 7] = ["station_id", "epoch_time", "lat", "lon", "pollutant", "value", "unit"];

enum StationRow {
    Ok(StationObservation),
    Malformed,
    Negative,
    Unknown,
    UnitMismatch,
}

fn station_row(cols: &[usize; 7], row: &csv::StringRecord, catalog: &Catalog) -> StationRow {
    let get = |i: usize| row.get(cols[i]).map(str::trim);
    let parsed = (|| {
        let id = get(0)?.to_owned();
        let t = parse_epoch(get(1)?)?;
        let p = GeoPoint::new(parse_f64(get(2)?)?, parse_f64(get(3)?)?).ok()?;
        Some((id, t, p, get(4)?, parse_f64(get(5)?)?, get(6)?))
    })();
    let Some((id, t, p, pollutant, value, unit)) = parsed else {
        return StationRow::Malformed;
    };
    let Some(info) = pollutant
        .parse::<PollutantId>()
        .ok()
        .and_then(|id| catalog.pollutant(id))
    else {
        return StationRow::Unknown;
    };
    if !value.is_finite() {
        return StationRow::Malformed;
    }
    if value < 0.0 {
        return StationRow::Negative;
    }
    if crate::model::EngineUnit::parse(unit) != Some(info.unit) {
        return StationRow::UnitMismatch;
    }
    match StationObservation::new(id, t, p, info.id, value) {
        Ok(o) => StationRow::Ok(o),
        Err(_) => StationRow::Malformed,
    }
}

pub fn read_station_csv<R: Read>(reader: R, catalog: &Catalog) -> Result<(Vec<StationObservation>, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut cols = [0usize; 7];
    for (slot, name) in cols.iter_mut().zip(STATION_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Format(format!("missing required column '{name}'")))?;
    }
    let mut report = IngestReport::default();
    let mut out = Vec::new();
    for row in rdr.records() {
        report.rows_read += 1;
        let Ok(row) = row else {
            report.rows_dropped_malformed += 1;
            continue;
        };
        match station_row(&cols, &row, catalog) {
            StationRow::Ok(o) => out.push(o),
            StationRow::Malformed => report.rows_dropped_malformed += 1,
            StationRow::Negative => report.rows_dropped_range += 1,
            StationRow::Unknown => report.rows_dropped_unknown += 1,
            StationRow::UnitMismatch => report.rows_dropped_unit += 1,
        }
    }
    report.rows_emitted = out.len() as u64;
    Ok((out, report))
}

pub fn parse_station_csv(path: &Path, catalog: &Catalog) -> Result<(Vec<StationObservation>, IngestReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_station_csv(file, catalog)
}
