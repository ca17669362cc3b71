//! Satellite versus ground-station validation: distance matching on the
//! sphere, time-quantum alignment and Pearson correlation.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{GeoPoint, GridCell, PollutantId, StationObservation};
use crate::patterns::{classify_level, BreakpointTable};

pub const EARTH_RADIUS_KM: f64 = 6378.0;
pub const DEFAULT_MAX_KM: f64 = 1.0;
/// Station reporting cadence.
pub const DEFAULT_TIME_QUANTUM_SECS: i64 = 600;

/// Spherical law of cosines with R = 6378 km. The cosine is clamped to
/// [-1, 1] before `acos`. Near-coincident points carry ~1e-4 km of
/// rounding noise from `acos` near 1; identical points return exactly 0.
pub fn great_circle_km(a: GeoPoint, b: GeoPoint) -> f64 {
    if a == b {
        return 0.0;
    }
    let (lat_a, lat_b) = (a.lat().to_radians(), b.lat().to_radians());
    let dlon = (a.lon() - b.lon()).to_radians();
    let cos_d = lat_a.sin() * lat_b.sin() + lat_a.cos() * lat_b.cos() * dlon.cos();
    cos_d.clamp(-1.0, 1.0).acos() * EARTH_RADIUS_KM
}

/// A satellite-side value to be matched against stations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SatPoint {
    pub epoch_time: i64,
    pub location: GeoPoint,
    pub cell: Option<GridCell>,
    /// When set, only observations of this pollutant can match.
    pub pollutant: Option<PollutantId>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub epoch_time: i64,
    pub sat_value: f64,
    pub station_value: f64,
    pub distance_km: f64,
    pub station_id: String,
    pub cell: Option<GridCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_sat: usize,
    pub unmatched_station: usize,
}

fn sat_key(s: &SatPoint) -> (i64, u64, u64, Option<PollutantId>, u64) {
    (
        s.epoch_time,
        s.location.lat().to_bits(),
        s.location.lon().to_bits(),
        s.pollutant,
        s.value.to_bits(),
    )
}

fn obs_key(o: &StationObservation) -> (&str, i64, u64, u64, PollutantId, u64) {
    (
        o.station_id.as_str(),
        o.epoch_time,
        o.location.lat().to_bits(),
        o.location.lon().to_bits(),
        o.pollutant,
        o.value.to_bits(),
    )
}

/// Greedy nearest-first one-to-one matching of satellite values to station
/// observations within `max_km` and the same `quantum`-truncated time.
/// Distance ties go to the lower station id.
pub fn match_pairs(sat: &[SatPoint], obs: &[StationObservation], max_km: f64, quantum: i64) -> MatchReport {
    let quantum = quantum.max(1);
    let mut by_slot: HashMap<i64, Vec<usize>> = HashMap::new();
    for (j, o) in obs.iter().enumerate() {
        by_slot.entry(o.epoch_time.div_euclid(quantum)).or_default().push(j);
    }

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, s) in sat.iter().enumerate() {
        let Some(slot) = by_slot.get(&s.epoch_time.div_euclid(quantum)) else {
            continue;
        };
        for &j in slot {
            let o = &obs[j];
            if s.pollutant.is_some_and(|p| p != o.pollutant) {
                continue;
            }
            let d = great_circle_km(s.location, o.location);
            if d <= max_km {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| obs_key(&obs[a.2]).cmp(&obs_key(&obs[b.2])))
            .then_with(|| sat_key(&sat[a.1]).cmp(&sat_key(&sat[b.1])))
    });

    let mut sat_used = vec![false; sat.len()];
    let mut obs_used = vec![false; obs.len()];
    let mut pairs = Vec::new();
    for (d, i, j) in candidates {
        if sat_used[i] || obs_used[j] {
            continue;
        }
        sat_used[i] = true;
        obs_used[j] = true;
        pairs.push(MatchedPair {
            epoch_time: sat[i].epoch_time,
            sat_value: sat[i].value,
            station_value: obs[j].value,
            distance_km: d,
            station_id: obs[j].station_id.clone(),
            cell: sat[i].cell,
        });
    }
    pairs.sort_by(|a, b| {
        a.epoch_time
            .cmp(&b.epoch_time)
            .then_with(|| a.station_id.cmp(&b.station_id))
            .then_with(|| a.sat_value.total_cmp(&b.sat_value))
    });
    MatchReport {
        unmatched_sat: sat_used.iter().filter(|u| !**u).count(),
        unmatched_station: obs_used.iter().filter(|u| !**u).count(),
        pairs,
    }
}

/// Sample Pearson correlation of two equal-length series (Welford updates).
pub fn pearson_xy(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidInput("series lengths differ".into()));
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 pairs, got {}",
            xs.len()
        )));
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let n = (k + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation(format!(
            "zero variance (satellite side {sxx}, station side {syy}) over {} pairs",
            xs.len()
        )));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson(pairs: &[MatchedPair]) -> Result<f64> {
    let xs: Vec<f64> = pairs.iter().map(|p| p.sat_value).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.station_value).collect();
    pearson_xy(&xs, &ys)
}

/// What the paired series hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    /// Ordinal AQI levels 1..=6.
    AqiLevel,
    /// Pollutant concentrations in engine units.
    Concentration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub mode: ValidationMode,
    pub pair_count: usize,
    pub r: f64,
    pub pairs: Vec<MatchedPair>,
    pub unmatched_sat: usize,
    pub unmatched_station: usize,
}

pub fn validate(
    mode: ValidationMode,
    sat: &[SatPoint],
    obs: &[StationObservation],
    max_km: f64,
    quantum: i64,
) -> Result<ValidationReport> {
    let m = match_pairs(sat, obs, max_km, quantum);
    if m.pairs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "insufficient pairs: {} matched within {max_km} km ({} satellite, {} station values unmatched)",
            m.pairs.len(),
            m.unmatched_sat,
            m.unmatched_station
        )));
    }
    let r = pearson(&m.pairs)?;
    Ok(ValidationReport {
        mode,
        pair_count: m.pairs.len(),
        r,
        pairs: m.pairs,
        unmatched_sat: m.unmatched_sat,
        unmatched_station: m.unmatched_station,
    })
}

/// Collapses station observations into one AQI level per station and time
/// quantum: pollutant values are averaged within the quantum, classified,
/// and the highest level wins (ties by `order`). Pollutants without
/// breakpoints are ignored. The result carries the level in `value` and the
/// dominant pollutant in `pollutant`.
pub fn station_aqi_levels(
    obs: &[StationObservation],
    table: &BreakpointTable,
    order: &[PollutantId],
    quantum: i64,
) -> Vec<StationObservation> {
    let quantum = quantum.max(1);
    type Group<'a> = (i64, GeoPoint, BTreeMap<PollutantId, Vec<f64>>);
    let mut groups: BTreeMap<(&str, i64), Group<'_>> = BTreeMap::new();
    for o in obs {
        let g = groups
            .entry((o.station_id.as_str(), o.epoch_time.div_euclid(quantum)))
            .or_insert_with(|| (o.epoch_time, o.location, BTreeMap::new()));
        g.0 = g.0.min(o.epoch_time);
        g.2.entry(o.pollutant).or_default().push(o.value);
    }
    let rank = |p: PollutantId| order.iter().position(|o| *o == p).unwrap_or(order.len());
    groups
        .into_iter()
        .filter_map(|((id, _), (t, loc, values))| {
            let best = values
                .iter()
                .filter_map(|(p, vs)| {
                    let avg = vs.iter().sum::<f64>() / vs.len() as f64;
                    classify_level(avg, *p, table).ok().map(|l| (l.level_number, *p))
                })
                .min_by(|a, b| b.0.cmp(&a.0).then(rank(a.1).cmp(&rank(b.1))))?;
            StationObservation::new(id, t, loc, best.1, f64::from(best.0)).ok()
        })
        .collect()
}
