//! Trace-gas unit conversions.
//!
//! The mixing-ratio formulas are implemented exactly as published: the
//! volume/mass conversion multiplies by `MW(gas) / MW(air)` and the ratios
//! labelled PPMv carry no 10^6 factor. See [`AS_PUBLISHED_CONVERSIONS`].
//! Breakpoint tables consumed downstream must be expressed in the same
//! convention.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{EngineUnit, Pollutant};

/// Marks that the conversions reproduce the published formulas verbatim,
/// including the gas/air molecular-weight ratio in the mass to volume step
/// and the absence of a 10^6 scaling on dimensionless ratios. Nothing in this
/// module "corrects" them.
pub const AS_PUBLISHED_CONVERSIONS: bool = true;

/// Vertical column of dry air in molecules/cm².
pub const DRY_AIR_VCD_MOLEC: f64 = 2.0e25;
/// The same column expressed in kg/m².
pub const DRY_AIR_TC_KG: f64 = 15_800.0;
/// Molecular weight of dry air, g/mol.
pub const MW_DRY_AIR: f64 = 29.0;

/// Molecules/cm² in one Dobson unit: a 10⁻² mm layer of pure gas at 273.15 K
/// and 1 atm, n = P·h / (k_B·T) = 101325 · 1e-5 / (1.380649e-23 · 273.15) m⁻²,
/// divided by 1e4 for cm².
pub const DOBSON_MOLECULES_PER_CM2: f64 = 2.686_780_111_798_444e16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnUnit {
    MoleculesPerCm2,
    KgPerM2,
    Dobson,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnDensity {
    pub value: f64,
    pub unit: ColumnUnit,
}

impl ColumnDensity {
    pub fn new(value: f64, unit: ColumnUnit) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidInput(format!(
                "column density must be finite and >= 0, got {value}"
            )));
        }
        Ok(ColumnDensity { value, unit })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MixingBasis {
    /// PPMv
    Volume,
    /// PPMm
    Mass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingRatio {
    pub value: f64,
    pub basis: MixingBasis,
}

impl MixingRatio {
    pub fn new(value: f64, basis: MixingBasis) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidInput(format!(
                "mixing ratio must be finite and >= 0, got {value}"
            )));
        }
        Ok(MixingRatio { value, basis })
    }

    pub fn volume(value: f64) -> Result<Self> {
        Self::new(value, MixingBasis::Volume)
    }

    pub fn mass(value: f64) -> Result<Self> {
        Self::new(value, MixingBasis::Mass)
    }
}

fn check_mw(mw_gas: f64) -> Result<()> {
    if mw_gas.is_finite() && mw_gas > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "molecular weight must be > 0, got {mw_gas}"
        )))
    }
}

/// `n_gas / (n_total - n_gas)`.
pub fn vmr_from_amounts(n_gas: f64, n_total: f64) -> Result<MixingRatio> {
    if !(n_gas >= 0.0 && n_total > n_gas && n_total.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "need n_total > n_gas >= 0, got n_gas {n_gas}, n_total {n_total}"
        )));
    }
    MixingRatio::volume(n_gas / (n_total - n_gas))
}

/// `PPMm * MW(gas) / 29`.
pub fn ppmm_to_ppmv(x: MixingRatio, mw_gas: f64) -> Result<MixingRatio> {
    check_mw(mw_gas)?;
    if x.basis != MixingBasis::Mass {
        return Err(Error::Unit("expected a mass mixing ratio (PPMm)".into()));
    }
    MixingRatio::volume(x.value * mw_gas / MW_DRY_AIR)
}

/// Total column averaged: `column[kg/m²] / 15800`.
pub fn tca_from_column(vcd: ColumnDensity) -> Result<MixingRatio> {
    if vcd.unit != ColumnUnit::KgPerM2 {
        return Err(Error::Unit(format!(
            "total column average needs kg/m², got {}",
            vcd.unit
        )));
    }
    MixingRatio::volume(vcd.value / DRY_AIR_TC_KG)
}

/// `TCA * MW(gas) / 29`.
pub fn vmr_from_tca(tca: MixingRatio, mw_gas: f64) -> Result<MixingRatio> {
    check_mw(mw_gas)?;
    if tca.basis != MixingBasis::Volume {
        return Err(Error::Unit("total column average must be volume-based".into()));
    }
    MixingRatio::volume(tca.value * mw_gas / MW_DRY_AIR)
}

// Every column unit is mapped to its fraction of the dry-air column and back.
fn dry_air_fraction(c: ColumnDensity, n_du: f64) -> f64 {
    match c.unit {
        ColumnUnit::MoleculesPerCm2 => c.value / DRY_AIR_VCD_MOLEC,
        ColumnUnit::KgPerM2 => c.value / DRY_AIR_TC_KG,
        ColumnUnit::Dobson => c.value * n_du / DRY_AIR_VCD_MOLEC,
    }
}

fn from_dry_air_fraction(f: f64, unit: ColumnUnit, n_du: f64) -> f64 {
    match unit {
        ColumnUnit::MoleculesPerCm2 => f * DRY_AIR_VCD_MOLEC,
        ColumnUnit::KgPerM2 => f * DRY_AIR_TC_KG,
        ColumnUnit::Dobson => f * DRY_AIR_VCD_MOLEC / n_du,
    }
}

pub fn column_convert(c: ColumnDensity, target: ColumnUnit) -> Result<ColumnDensity> {
    column_convert_with(c, target, DOBSON_MOLECULES_PER_CM2)
}

/// Like [`column_convert`] with an explicit molecules-per-DU anchor.
pub fn column_convert_with(c: ColumnDensity, target: ColumnUnit, n_du: f64) -> Result<ColumnDensity> {
    if !(n_du.is_finite() && n_du > 0.0) {
        return Err(Error::Unit(format!("invalid Dobson anchor {n_du}")));
    }
    let c = ColumnDensity::new(c.value, c.unit)?;
    if c.unit == target {
        return Ok(c);
    }
    ColumnDensity::new(from_dry_air_fraction(dry_air_fraction(c, n_du), target, n_du), target)
}

/// Units a raw plot value may arrive in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RawUnit {
    Ppmv,
    Ppmm,
    MoleculesPerCm2,
    KgPerM2,
    Dobson,
    UgM3,
}

impl RawUnit {
    pub fn as_str(&self) -> &'static str {
        match self {
            RawUnit::Ppmv => "ppmv",
            RawUnit::Ppmm => "ppmm",
            RawUnit::MoleculesPerCm2 => "molec_cm2",
            RawUnit::KgPerM2 => "kg_m2",
            RawUnit::Dobson => "du",
            RawUnit::UgM3 => "ug_m3",
        }
    }

    fn column(&self) -> Option<ColumnUnit> {
        match self {
            RawUnit::MoleculesPerCm2 => Some(ColumnUnit::MoleculesPerCm2),
            RawUnit::KgPerM2 => Some(ColumnUnit::KgPerM2),
            RawUnit::Dobson => Some(ColumnUnit::Dobson),
            _ => None,
        }
    }
}

impl fmt::Display for RawUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for ColumnUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnUnit::MoleculesPerCm2 => "molecules/cm²",
            ColumnUnit::KgPerM2 => "kg/m²",
            ColumnUnit::Dobson => "DU",
        })
    }
}

impl FromStr for RawUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "ppmv" | "vmr" => RawUnit::Ppmv,
            "ppmm" => RawUnit::Ppmm,
            "molec_cm2" | "molecules_cm2" | "molecules/cm2" => RawUnit::MoleculesPerCm2,
            "kg_m2" | "kg/m2" => RawUnit::KgPerM2,
            "du" | "dobson" => RawUnit::Dobson,
            "ug_m3" | "ug/m3" | "µg/m³" => RawUnit::UgM3,
            other => return Err(Error::Unit(format!("unknown unit '{other}'"))),
        })
    }
}

/// Brings a raw value into the pollutant's engine unit.
pub fn normalize_to_engine_unit(raw_value: f64, raw_unit: RawUnit, pollutant: &Pollutant) -> Result<f64> {
    normalize_with(raw_value, raw_unit, pollutant, DOBSON_MOLECULES_PER_CM2)
}

pub fn normalize_with(raw_value: f64, raw_unit: RawUnit, pollutant: &Pollutant, n_du: f64) -> Result<f64> {
    let unsupported = || {
        Error::Unit(format!(
            "{} cannot be converted from {raw_unit} to {}",
            pollutant.id,
            pollutant.unit.as_str()
        ))
    };
    match pollutant.unit {
        EngineUnit::UgM3 => match raw_unit {
            RawUnit::UgM3 => Ok(MixingRatio::volume(raw_value)?.value),
            _ => Err(unsupported()),
        },
        EngineUnit::Ppmv => {
            let mw = pollutant.molecular_weight.ok_or_else(unsupported)?;
            let ratio = match raw_unit {
                RawUnit::Ppmv => MixingRatio::volume(raw_value)?,
                RawUnit::Ppmm => ppmm_to_ppmv(MixingRatio::mass(raw_value)?, mw)?,
                RawUnit::UgM3 => return Err(unsupported()),
                column => {
                    let col = ColumnDensity::new(raw_value, column.column().ok_or_else(unsupported)?)?;
                    let kg = column_convert_with(col, ColumnUnit::KgPerM2, n_du)?;
                    vmr_from_tca(tca_from_column(kg)?, mw)?
                }
            };
            Ok(ratio.value)
        }
    }
}
