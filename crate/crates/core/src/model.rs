//! Shared domain types: coordinates, the pollutant catalog entries, plot
//! records, simple events and the grid used to key windowed aggregation.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default grid resolution in degrees (roughly 5 km).
pub const DEFAULT_RESOLUTION_DEG: f64 = 0.05;

/// Number of altitude slices carried by every plot row.
pub const LEVEL_COUNT: usize = 12;

/// Marker for an empty level value.
pub const EMPTY_SENTINEL: f64 = -0.0;

/// Returns true for the empty marker (negative zero) and for non-finite values.
pub fn is_empty_value(v: f64) -> bool {
    !v.is_finite() || (v == 0.0 && v.is_sign_negative())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidInput(format!(
                "coordinate out of range: lat {lat}, lon {lon}"
            )));
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Pollutants known to the cascade, in default catalog order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PollutantId {
    Ch4,
    Co,
    Co2,
    Nox,
    No2,
    O3,
    So2,
    Pm25,
    Pm10,
}

impl PollutantId {
    pub const ALL: [PollutantId; 9] = [
        PollutantId::Ch4,
        PollutantId::Co,
        PollutantId::Co2,
        PollutantId::Nox,
        PollutantId::No2,
        PollutantId::O3,
        PollutantId::So2,
        PollutantId::Pm25,
        PollutantId::Pm10,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PollutantId::Ch4 => "CH4",
            PollutantId::Co => "CO",
            PollutantId::Co2 => "CO2",
            PollutantId::Nox => "NOX",
            PollutantId::No2 => "NO2",
            PollutantId::O3 => "O3",
            PollutantId::So2 => "SO2",
            PollutantId::Pm25 => "PM25",
            PollutantId::Pm10 => "PM10",
        }
    }

    pub fn is_particulate(&self) -> bool {
        matches!(self, PollutantId::Pm25 | PollutantId::Pm10)
    }
}

impl fmt::Display for PollutantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PollutantId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, '.' | '_' | ' ' | '-'))
            .collect::<String>()
            .to_ascii_uppercase()
            .replace('₂', "2")
            .replace('₃', "3")
            .replace('₄', "4");
        PollutantId::ALL
            .into_iter()
            .find(|p| p.as_str() == norm)
            .ok_or_else(|| Error::InvalidInput(format!("unknown pollutant '{s}'")))
    }
}

/// The unit a pollutant carries inside the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EngineUnit {
    #[serde(rename = "PPMV")]
    Ppmv,
    #[serde(rename = "UG_M3")]
    UgM3,
}

impl EngineUnit {
    pub fn as_str(&self) -> &'static str {
        match self {
            EngineUnit::Ppmv => "ppmv",
            EngineUnit::UgM3 => "ug/m3",
        }
    }

    pub fn parse(s: &str) -> Option<EngineUnit> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ppmv" | "ppm" => Some(EngineUnit::Ppmv),
            "ug/m3" | "µg/m³" | "µg/m3" | "ug_m3" | "ugm3" => Some(EngineUnit::UgM3),
            _ => None,
        }
    }
}

/// Averaging period of a pollutant's aggregation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum WindowHours {
    One,
    Eight,
    TwentyFour,
}

impl WindowHours {
    pub fn hours(&self) -> u32 {
        match self {
            WindowHours::One => 1,
            WindowHours::Eight => 8,
            WindowHours::TwentyFour => 24,
        }
    }

    pub fn seconds(&self) -> i64 {
        i64::from(self.hours()) * 3600
    }
}

impl TryFrom<u32> for WindowHours {
    type Error = String;

    fn try_from(h: u32) -> std::result::Result<Self, String> {
        match h {
            1 => Ok(WindowHours::One),
            8 => Ok(WindowHours::Eight),
            24 => Ok(WindowHours::TwentyFour),
            other => Err(format!("window_hours must be 1, 8 or 24, got {other}")),
        }
    }
}

impl From<WindowHours> for u32 {
    fn from(w: WindowHours) -> u32 {
        w.hours()
    }
}

/// A catalog pollutant entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Pollutant {
    pub id: PollutantId,
    pub unit: EngineUnit,
    /// g/mol; `None` for particulate matter.
    pub molecular_weight: Option<f64>,
    pub window_hours: WindowHours,
}

impl Pollutant {
    pub fn new(
        id: PollutantId,
        unit: EngineUnit,
        molecular_weight: Option<f64>,
        window_hours: WindowHours,
    ) -> Result<Self> {
        let expected = if id.is_particulate() {
            EngineUnit::UgM3
        } else {
            EngineUnit::Ppmv
        };
        if unit != expected {
            return Err(Error::Config(format!(
                "{id} must use unit {}, got {}",
                expected.as_str(),
                unit.as_str()
            )));
        }
        match molecular_weight {
            Some(mw) if !(mw.is_finite() && mw > 0.0) => {
                return Err(Error::Config(format!("{id}: molecular weight must be > 0")))
            }
            None if !id.is_particulate() => return Err(Error::Config(format!("{id}: gases need a molecular weight"))),
            _ => {}
        }
        Ok(Pollutant {
            id,
            unit,
            molecular_weight,
            window_hours,
        })
    }
}

/// Identifier of the variable a plot file carries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Variable {
    Pollutant(PollutantId),
    Raw(String),
}

impl Variable {
    pub fn name(&self) -> &str {
        match self {
            Variable::Pollutant(p) => p.as_str(),
            Variable::Raw(s) => s,
        }
    }
}

/// One geo-temporal row of a fused satellite CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRecord {
    pub epoch_time: i64,
    pub date_time: Option<chrono::DateTime<chrono::Utc>>,
    pub location: GeoPoint,
    /// Index 0 is the lowest altitude slice.
    pub levels: [f64; LEVEL_COUNT],
    pub variable: Variable,
    pub quality: Option<String>,
}

/// A normalized measurement entering the engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimpleEvent {
    epoch_time: i64,
    location: GeoPoint,
    pollutant: PollutantId,
    value: f64,
}

impl SimpleEvent {
    pub fn new(epoch_time: i64, location: GeoPoint, pollutant: PollutantId, value: f64) -> Result<Self> {
        if is_empty_value(value) {
            return Err(Error::InvalidInput(format!(
                "empty or non-finite value {value} for {pollutant}"
            )));
        }
        if value < 0.0 {
            return Err(Error::InvalidInput(format!("negative value {value} for {pollutant}")));
        }
        Ok(SimpleEvent {
            epoch_time,
            location,
            pollutant,
            value,
        })
    }

    pub fn epoch_time(&self) -> i64 {
        self.epoch_time
    }

    pub fn location(&self) -> GeoPoint {
        self.location
    }

    pub fn pollutant(&self) -> PollutantId {
        self.pollutant
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Total order used to sort and deduplicate fused streams.
    pub fn order_key(&self, other: &Self) -> Ordering {
        self.epoch_time
            .cmp(&other.epoch_time)
            .then(self.pollutant.cmp(&other.pollutant))
            .then(self.location.lat.total_cmp(&other.location.lat))
            .then(self.location.lon.total_cmp(&other.location.lon))
            .then(self.value.total_cmp(&other.value))
    }
}

/// A cell of the regular lat/lon grid.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridCell {
    pub row: i64,
    pub col: i64,
    pub resolution_deg: f64,
}

// Tolerance absorbing decimal representation error in coordinates.
const SNAP_EPS: f64 = 1e-9;

fn snapped_floor(q: f64) -> i64 {
    let r = q.round();
    if (q - r).abs() <= SNAP_EPS * r.abs().max(1.0) {
        r as i64
    } else {
        q.floor() as i64
    }
}

/// Quantizes a point onto the grid.
pub fn cell_of(p: GeoPoint, resolution_deg: f64) -> Result<GridCell> {
    if !(resolution_deg.is_finite() && resolution_deg > 0.0) {
        return Err(Error::InvalidInput(format!(
            "resolution must be > 0, got {resolution_deg}"
        )));
    }
    Ok(GridCell {
        row: snapped_floor((p.lat + 90.0) / resolution_deg),
        col: snapped_floor((p.lon + 180.0) / resolution_deg),
        resolution_deg,
    })
}

impl GridCell {
    pub fn lat_min(&self) -> f64 {
        self.row as f64 * self.resolution_deg - 90.0
    }

    pub fn lon_min(&self) -> f64 {
        self.col as f64 * self.resolution_deg - 180.0
    }

    /// Center of the cell, clamped into the valid coordinate range.
    pub fn center(&self) -> GeoPoint {
        let lat = (self.lat_min() + self.resolution_deg / 2.0).clamp(-90.0, 90.0);
        let lon = (self.lon_min() + self.resolution_deg / 2.0).clamp(-180.0, 180.0);
        GeoPoint { lat, lon }
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        let eps = SNAP_EPS * self.resolution_deg.max(1.0) * 200.0;
        let (lat0, lon0) = (self.lat_min(), self.lon_min());
        p.lat >= lat0 - eps
            && p.lat < lat0 + self.resolution_deg + eps
            && p.lon >= lon0 - eps
            && p.lon < lon0 + self.resolution_deg + eps
    }

    fn res_bits(&self) -> u64 {
        self.resolution_deg.to_bits()
    }
}

impl PartialEq for GridCell {
    fn eq(&self, other: &Self) -> bool {
        self.row == other.row && self.col == other.col && self.res_bits() == other.res_bits()
    }
}

impl Eq for GridCell {}

impl Hash for GridCell {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.row.hash(state);
        self.col.hash(state);
        self.res_bits().hash(state);
    }
}

impl PartialOrd for GridCell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GridCell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.row
            .cmp(&other.row)
            .then(self.col.cmp(&other.col))
            .then(self.resolution_deg.total_cmp(&other.resolution_deg))
    }
}

/// A ground-station measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationObservation {
    pub epoch_time: i64,
    pub location: GeoPoint,
    pub pollutant: PollutantId,
    pub value: f64,
    pub station_id: String,
}

impl StationObservation {
    pub fn new(
        station_id: impl Into<String>,
        epoch_time: i64,
        location: GeoPoint,
        pollutant: PollutantId,
        value: f64,
    ) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidInput(format!(
                "station value must be finite and >= 0, got {value}"
            )));
        }
        Ok(StationObservation {
            epoch_time,
            location,
            pollutant,
            value,
            station_id: station_id.into(),
        })
    }
}
