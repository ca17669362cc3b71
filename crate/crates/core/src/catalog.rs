//! File-based catalog: pollutants, breakpoint bands, regions, quality ranges
//! and grid resolution.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::ingest::{BoundingBox, QualityRange};
use crate::model::{EngineUnit, Pollutant, PollutantId, WindowHours, DEFAULT_RESOLUTION_DEG};
use crate::units::DOBSON_MOLECULES_PER_CM2;

/// The catalog shipped with the crate.
pub const DEFAULT_CATALOG_TOML: &str = include_str!("../catalog/default.toml");

/// One breakpoint band as written in the catalog.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandDef {
    pub lower: f64,
    /// Defaults to the next band's lower bound, or +inf for the last band.
    #[serde(default)]
    pub upper: Option<f64>,
    pub level: u8,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LevelSpec {
    AggregationOnly,
    Bands(Vec<BandDef>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub pollutant: Pollutant,
    pub levels: LevelSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub grid_resolution_deg: f64,
    pub dobson_molecules_per_cm2: f64,
    pub pollutants: Vec<CatalogEntry>,
    pub regions: Vec<BoundingBox>,
    pub quality_ranges: Vec<QualityRange>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    #[serde(default)]
    grid_resolution_deg: Option<f64>,
    #[serde(default)]
    dobson_molecules_per_cm2: Option<f64>,
    #[serde(default)]
    pollutant: Vec<RawPollutant>,
    #[serde(default)]
    region: Vec<BoundingBox>,
    #[serde(default)]
    quality_range: Vec<QualityRange>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPollutant {
    id: PollutantId,
    unit: EngineUnit,
    #[serde(default)]
    molecular_weight: Option<f64>,
    #[serde(default)]
    window_hours: Option<WindowHours>,
    #[serde(default)]
    aggregation_only: bool,
    #[serde(default)]
    bands: Vec<BandDef>,
}

impl Catalog {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawCatalog = toml::from_str(text).map_err(|e| Error::Config(format!("catalog: {e}")))?;

        let grid_resolution_deg = raw.grid_resolution_deg.unwrap_or(DEFAULT_RESOLUTION_DEG);
        if !(grid_resolution_deg.is_finite() && grid_resolution_deg > 0.0) {
            return Err(Error::Config(format!(
                "grid_resolution_deg must be > 0, got {grid_resolution_deg}"
            )));
        }
        let dobson_molecules_per_cm2 = raw.dobson_molecules_per_cm2.unwrap_or(DOBSON_MOLECULES_PER_CM2);
        if !(dobson_molecules_per_cm2.is_finite() && dobson_molecules_per_cm2 > 0.0) {
            return Err(Error::Config("dobson_molecules_per_cm2 must be > 0".into()));
        }

        let mut pollutants: Vec<CatalogEntry> = Vec::with_capacity(raw.pollutant.len());
        for p in raw.pollutant {
            if pollutants.iter().any(|e| e.pollutant.id == p.id) {
                return Err(Error::Config(format!("pollutant {} listed twice", p.id)));
            }
            let window_hours = p
                .window_hours
                .ok_or_else(|| Error::Config(format!("pollutant {} has no window_hours", p.id)))?;
            let pollutant = Pollutant::new(p.id, p.unit, p.molecular_weight, window_hours)?;
            let levels = match (p.aggregation_only, p.bands.is_empty()) {
                (true, true) => LevelSpec::AggregationOnly,
                (true, false) => {
                    return Err(Error::Config(format!(
                        "pollutant {} is aggregation_only but lists bands",
                        p.id
                    )))
                }
                (false, _) => LevelSpec::Bands(p.bands),
            };
            pollutants.push(CatalogEntry { pollutant, levels });
        }

        for r in &raw.region {
            r.validate()?;
        }
        for q in &raw.quality_range {
            q.validate()?;
        }

        Ok(Catalog {
            grid_resolution_deg,
            dobson_molecules_per_cm2,
            pollutants,
            regions: raw.region,
            quality_ranges: raw.quality_range,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn default_catalog() -> Self {
        Self::from_toml_str(DEFAULT_CATALOG_TOML).expect("bundled catalog is valid")
    }

    pub fn pollutant(&self, id: PollutantId) -> Option<&Pollutant> {
        self.pollutants.iter().map(|e| &e.pollutant).find(|p| p.id == id)
    }

    pub fn region(&self, name: &str) -> Result<&BoundingBox> {
        self.regions
            .iter()
            .find(|r| r.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(format!("unknown region '{name}'")))
    }

    /// Pollutant ids in catalog order.
    pub fn order(&self) -> Vec<PollutantId> {
        self.pollutants.iter().map(|e| e.pollutant.id).collect()
    }
}
