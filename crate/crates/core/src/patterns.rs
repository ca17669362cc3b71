//! The air-quality cascade built on the engine: gas aggregation (CE1),
//! pollutant level (CE2) and air-quality level (CE3).

use std::sync::Arc;

use serde::Serialize;

use crate::catalog::{BandDef, Catalog, LevelSpec};
use crate::engine::{Aggregate, ComplexEvent, Engine, EngineConfig, Field, KeyBy, PatternSpec, Predicate, WindowSpec};
use crate::error::{Error, Result};
use crate::model::{GridCell, PollutantId};

pub const SIMPLE_STREAM: &str = "simple";
pub const CE1_STREAM: &str = "ce1";
pub const CE2_STREAM: &str = "ce2";
pub const CE3_STREAM: &str = "ce3";

/// Emit interval of the aggregation windows.
pub const AGGREGATION_EMIT_SECS: i64 = 1800;
/// Tumbling window of the air-quality level pattern.
pub const AQI_WINDOW_SECS: i64 = 1800;

pub const LEVEL_COUNT: usize = 6;

pub const LEVEL_NAMES: [&str; LEVEL_COUNT] = [
    "Good",
    "Moderate",
    "Unhealthy for Sensitive Groups",
    "Unhealthy",
    "Very Unhealthy",
    "Hazardous",
];

/// `[lower, upper)`; `upper == None` means unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub lower: f64,
    pub upper: Option<f64>,
    pub level: u8,
    pub name: Arc<str>,
}

impl Band {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && self.upper.is_none_or(|u| v < u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakpointTable {
    entries: Vec<(PollutantId, Vec<Band>)>,
}

impl BreakpointTable {
    /// Validates and normalizes band definitions for one pollutant.
    pub fn bands_from_defs(pollutant: PollutantId, defs: &[BandDef]) -> Result<Vec<Band>> {
        let err = |msg: String| Err(Error::Config(format!("breakpoints for {pollutant}: {msg}")));
        for level in 1..=LEVEL_COUNT as u8 {
            match defs.iter().filter(|d| d.level == level).count() {
                0 => return err(format!("missing level {level} ({})", LEVEL_NAMES[level as usize - 1])),
                1 => {}
                _ => return err(format!("level {level} listed more than once")),
            }
        }
        if defs.len() != LEVEL_COUNT {
            return err(format!("expected {LEVEL_COUNT} bands, got {}", defs.len()));
        }
        for (i, d) in defs.iter().enumerate() {
            if usize::from(d.level) != i + 1 {
                return err(format!(
                    "bands must be listed in level order, found level {} at position {}",
                    d.level,
                    i + 1
                ));
            }
        }
        if defs[0].lower != 0.0 {
            return err(format!("level 1 must start at 0, starts at {}", defs[0].lower));
        }
        let mut bands = Vec::with_capacity(LEVEL_COUNT);
        for (i, d) in defs.iter().enumerate() {
            let next_lower = defs.get(i + 1).map(|n| n.lower);
            let upper = match (d.upper, next_lower) {
                (Some(u), Some(n)) if u != n => {
                    return err(format!(
                        "gap or overlap between level {} (upper {u}) and level {} (lower {n})",
                        d.level,
                        d.level + 1
                    ))
                }
                (Some(u), None) if u.is_finite() => {
                    return err(format!("level {} must be open-ended", d.level));
                }
                (_, n) => n,
            };
            if !d.lower.is_finite() || upper.is_some_and(|u| u <= d.lower) {
                return err(format!("level {} needs lower < upper", d.level));
            }
            bands.push(Band {
                lower: d.lower,
                upper,
                level: d.level,
                name: Arc::from(d.name.as_str()),
            });
        }
        Ok(bands)
    }

    pub fn from_catalog(catalog: &Catalog) -> Result<Self> {
        let mut entries = Vec::new();
        for e in &catalog.pollutants {
            if let LevelSpec::Bands(defs) = &e.levels {
                entries.push((e.pollutant.id, Self::bands_from_defs(e.pollutant.id, defs)?));
            }
        }
        Ok(BreakpointTable { entries })
    }

    pub fn bands(&self, pollutant: PollutantId) -> Option<&[Band]> {
        self.entries
            .iter()
            .find(|(p, _)| *p == pollutant)
            .map(|(_, b)| b.as_slice())
    }

    pub fn pollutants(&self) -> impl Iterator<Item = PollutantId> + '_ {
        self.entries.iter().map(|(p, _)| *p)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelInfo {
    pub level_number: u8,
    pub level_name: Arc<str>,
}

pub fn classify_level(avg: f64, pollutant: PollutantId, table: &BreakpointTable) -> Result<LevelInfo> {
    if !(avg.is_finite() && avg >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "cannot classify {pollutant} average {avg}"
        )));
    }
    let bands = table
        .bands(pollutant)
        .ok_or_else(|| Error::Config(format!("no breakpoints for {pollutant}")))?;
    bands
        .iter()
        .find(|b| b.contains(avg))
        .map(|b| LevelInfo {
            level_number: b.level,
            level_name: b.name.clone(),
        })
        .ok_or_else(|| Error::Config(format!("{pollutant} breakpoints do not cover {avg}")))
}

pub fn aggregation_pattern_name(p: PollutantId) -> String {
    format!("CE1_Aggregation_{p}")
}

/// One windowed AVG/MIN/MAX/COUNT pattern per catalog pollutant.
pub fn build_aggregation_patterns(catalog: &Catalog) -> Result<Vec<PatternSpec>> {
    if catalog.pollutants.is_empty() {
        log::warn!("catalog lists no pollutants; no aggregation patterns built");
    }
    Ok(catalog
        .pollutants
        .iter()
        .map(|e| PatternSpec {
            name: aggregation_pattern_name(e.pollutant.id),
            input: SIMPLE_STREAM.into(),
            output: CE1_STREAM.into(),
            key_by: KeyBy::CellAndPollutant,
            window: WindowSpec::Sliding {
                length_secs: e.pollutant.window_hours.seconds(),
                slide_secs: AGGREGATION_EMIT_SECS,
            },
            value_field: Field::Value,
            aggregates: vec![Aggregate::Avg, Aggregate::Min, Aggregate::Max, Aggregate::Count],
            filters: vec![Predicate::NotEmpty, Predicate::PollutantIs(e.pollutant.id)],
            annotate: vec![],
            label: None,
            tie_order: vec![],
        })
        .collect())
}

/// Six band patterns per pollutant with breakpoints, all publishing to CE2.
pub fn build_level_patterns(catalog: &Catalog, table: &BreakpointTable) -> Result<Vec<PatternSpec>> {
    let mut specs = Vec::new();
    for e in &catalog.pollutants {
        let id = e.pollutant.id;
        if e.levels == LevelSpec::AggregationOnly {
            continue;
        }
        let bands = table
            .bands(id)
            .ok_or_else(|| Error::Config(format!("breakpoint table has no bands for {id}")))?;
        if bands.len() != LEVEL_COUNT {
            return Err(Error::Config(format!(
                "breakpoint table for {id} has {} bands",
                bands.len()
            )));
        }
        for b in bands {
            specs.push(PatternSpec {
                name: format!("CE2_PollutantLevel_{id}_{}", b.level),
                input: CE1_STREAM.into(),
                output: CE2_STREAM.into(),
                key_by: KeyBy::CellAndPollutant,
                window: WindowSpec::PerEvent,
                value_field: Field::Avg,
                aggregates: vec![],
                filters: vec![
                    Predicate::PollutantIs(id),
                    Predicate::Band {
                        field: Field::Avg,
                        lower: b.lower,
                        upper: b.upper,
                    },
                ],
                annotate: vec![(Field::LevelNumber, f64::from(b.level))],
                label: Some(b.name.to_string()),
                tie_order: vec![],
            });
        }
    }
    Ok(specs)
}

/// Highest pollutant level per cell over 30-minute tumbling windows.
pub fn build_aqi_pattern(catalog_order: &[PollutantId]) -> PatternSpec {
    PatternSpec {
        name: "CE3_AirQualityLevel".into(),
        input: CE2_STREAM.into(),
        output: CE3_STREAM.into(),
        key_by: KeyBy::Cell,
        window: WindowSpec::tumbling(AQI_WINDOW_SECS),
        value_field: Field::LevelNumber,
        aggregates: vec![Aggregate::ArgmaxLevel],
        filters: vec![],
        annotate: vec![],
        label: None,
        tie_order: catalog_order.to_vec(),
    }
}

/// Every pattern of the cascade in registration order.
pub fn build_cascade_patterns(catalog: &Catalog) -> Result<Vec<PatternSpec>> {
    let table = BreakpointTable::from_catalog(catalog)?;
    let mut specs = build_aggregation_patterns(catalog)?;
    specs.extend(build_level_patterns(catalog, &table)?);
    specs.push(build_aqi_pattern(&catalog.order()));
    Ok(specs)
}

/// An engine with the full cascade registered.
pub fn build_cascade(catalog: &Catalog, lateness_secs: i64) -> Result<Engine> {
    let mut engine = Engine::new(EngineConfig {
        resolution_deg: catalog.grid_resolution_deg,
        lateness_secs,
    })?;
    engine.register_all(build_cascade_patterns(catalog)?)?;
    Ok(engine)
}

fn missing(what: &str, ce: &ComplexEvent) -> Error {
    Error::Format(format!("complex event '{}' lacks {what}", ce.pattern))
}

/// CE1
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateEvent {
    pub epoch_time: i64,
    pub cell: GridCell,
    pub pollutant: PollutantId,
    pub avg: f64,
    pub min: f64,
    pub max: f64,
    pub count: u64,
}

/// CE2
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PollutantLevelEvent {
    pub epoch_time: i64,
    pub cell: GridCell,
    pub pollutant: PollutantId,
    pub avg: f64,
    pub level_number: u8,
    pub level_name: Arc<str>,
}

/// CE3
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AirQualityEvent {
    pub epoch_time: i64,
    pub cell: GridCell,
    pub aqi_level: u8,
    pub dominant_pollutant: PollutantId,
}

impl TryFrom<&ComplexEvent> for AggregateEvent {
    type Error = Error;

    fn try_from(ce: &ComplexEvent) -> Result<Self> {
        let f = |field: Field, name: &str| ce.get(field).ok_or_else(|| missing(name, ce));
        Ok(AggregateEvent {
            epoch_time: ce.epoch_time,
            cell: ce.cell,
            pollutant: ce.pollutant.ok_or_else(|| missing("pollutant", ce))?,
            avg: f(Field::Avg, "avg")?,
            min: f(Field::Min, "min")?,
            max: f(Field::Max, "max")?,
            count: f(Field::Count, "count")? as u64,
        })
    }
}

impl TryFrom<&ComplexEvent> for PollutantLevelEvent {
    type Error = Error;

    fn try_from(ce: &ComplexEvent) -> Result<Self> {
        Ok(PollutantLevelEvent {
            epoch_time: ce.epoch_time,
            cell: ce.cell,
            pollutant: ce.pollutant.ok_or_else(|| missing("pollutant", ce))?,
            avg: ce.get(Field::Avg).ok_or_else(|| missing("avg", ce))?,
            level_number: ce.get(Field::LevelNumber).ok_or_else(|| missing("level number", ce))? as u8,
            level_name: ce.label.clone().ok_or_else(|| missing("level name", ce))?,
        })
    }
}

impl TryFrom<&ComplexEvent> for AirQualityEvent {
    type Error = Error;

    fn try_from(ce: &ComplexEvent) -> Result<Self> {
        Ok(AirQualityEvent {
            epoch_time: ce.epoch_time,
            cell: ce.cell,
            aqi_level: ce.get(Field::LevelNumber).ok_or_else(|| missing("level number", ce))? as u8,
            dominant_pollutant: ce.pollutant.ok_or_else(|| missing("pollutant", ce))?,
        })
    }
}
