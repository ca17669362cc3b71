//! Output sinks: CE1/CE2/CE3 CSV, the GeoJSON data layer, and readers for
//! emitted CSVs used by validation.

use std::io::{Read, Write};

use chrono::DateTime;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::{GeoPoint, GridCell, PollutantId};
use crate::patterns::{AggregateEvent, AirQualityEvent, PollutantLevelEvent};
use crate::validation::{MatchedPair, SatPoint, ValidationMode};

pub const CE1_HEADER: [&str; 11] = [
    "epoch_time",
    "date_time",
    "latitude",
    "longitude",
    "cell_row",
    "cell_col",
    "pollutant",
    "average",
    "min",
    "max",
    "count",
];

pub const CE2_HEADER: [&str; 10] = [
    "epoch_time",
    "date_time",
    "latitude",
    "longitude",
    "cell_row",
    "cell_col",
    "pollutant",
    "average",
    "level_number",
    "level_name",
];

pub const CE3_HEADER: [&str; 8] = [
    "epoch_time",
    "date_time",
    "latitude",
    "longitude",
    "cell_row",
    "cell_col",
    "aqi_level",
    "dominant_pollutant",
];

/// Formats with 6 significant digits in the style of C's `%g`: fixed
/// notation for exponents in [-5, 6), scientific otherwise, trailing zeros
/// trimmed.
pub fn fmt_sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `YYYY-MM-DDTHH:MM:SSZ`; empty for out-of-range timestamps.
pub fn iso_utc(t: i64) -> String {
    DateTime::from_timestamp(t, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_default()
}

fn geo_cols(t: i64, cell: &GridCell) -> [String; 6] {
    let c = cell.center();
    [
        t.to_string(),
        iso_utc(t),
        fmt_sig6(c.lat()),
        fmt_sig6(c.lon()),
        cell.row.to_string(),
        cell.col.to_string(),
    ]
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_ce1_csv<W: Write>(w: W, events: &[AggregateEvent]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CE1_HEADER).map_err(csv_err)?;
    for e in events {
        let mut row = geo_cols(e.epoch_time, &e.cell).to_vec();
        row.extend([
            e.pollutant.as_str().to_string(),
            fmt_sig6(e.avg),
            fmt_sig6(e.min),
            fmt_sig6(e.max),
            e.count.to_string(),
        ]);
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn write_ce2_csv<W: Write>(w: W, events: &[PollutantLevelEvent]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CE2_HEADER).map_err(csv_err)?;
    for e in events {
        let mut row = geo_cols(e.epoch_time, &e.cell).to_vec();
        row.extend([
            e.pollutant.as_str().to_string(),
            fmt_sig6(e.avg),
            e.level_number.to_string(),
            e.level_name.to_string(),
        ]);
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn write_ce3_csv<W: Write>(w: W, events: &[AirQualityEvent]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CE3_HEADER).map_err(csv_err)?;
    for e in events {
        let mut row = geo_cols(e.epoch_time, &e.cell).to_vec();
        row.extend([e.aqi_level.to_string(), e.dominant_pollutant.as_str().to_string()]);
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Matched pairs of a validation run.
pub fn write_pairs_csv<W: Write>(w: W, pairs: &[MatchedPair]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "epoch_time",
        "station_id",
        "distance_km",
        "sat_value",
        "station_value",
        "cell_row",
        "cell_col",
    ])
    .map_err(csv_err)?;
    for p in pairs {
        let (row, col) = p
            .cell
            .map(|c| (c.row.to_string(), c.col.to_string()))
            .unwrap_or_default();
        out.write_record([
            p.epoch_time.to_string(),
            p.station_id.clone(),
            fmt_sig6(p.distance_km),
            fmt_sig6(p.sat_value),
            fmt_sig6(p.station_value),
            row,
            col,
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))
}

fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// One Point feature per event at the cell center, `[lon, lat]` order.
pub fn geojson_value(events: &[AirQualityEvent]) -> Value {
    let features: Vec<Value> = events
        .iter()
        .map(|e| {
            let c = e.cell.center();
            json!({
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [round6(c.lon()), round6(c.lat())],
                },
                "properties": {
                    "epoch_time": e.epoch_time,
                    "aqi_level": e.aqi_level,
                    "dominant_pollutant": e.dominant_pollutant.as_str(),
                },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn write_geojson<W: Write>(mut w: W, events: &[AirQualityEvent]) -> Result<()> {
    serde_json::to_writer(&mut w, &geojson_value(events)).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::Format(e.to_string()))
}

struct Columns {
    idx: Vec<Option<usize>>,
}

impl Columns {
    fn find(headers: &csv::StringRecord, names: &[&str]) -> Self {
        let idx = names
            .iter()
            .map(|n| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(n)))
            .collect();
        Columns { idx }
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, k: usize, line: u64) -> Result<&'r str> {
        self.idx[k]
            .and_then(|i| rec.get(i))
            .map(str::trim)
            .ok_or_else(|| Error::Format(format!("line {line}: missing column")))
    }

    fn num<T: std::str::FromStr>(&self, rec: &csv::StringRecord, k: usize, line: u64) -> Result<T> {
        let s = self.get(rec, k, line)?;
        s.parse()
            .map_err(|_| Error::Format(format!("line {line}: cannot parse '{s}'")))
    }
}

/// Reads satellite-side values from an emitted CE3 CSV (AQI levels) or a
/// CE1/CE2 CSV (averages). The mode is detected from the header.
/// `resolution_deg` is the grid the file was emitted on.
pub fn read_sat_points<R: Read>(reader: R, resolution_deg: f64) -> Result<(ValidationMode, Vec<SatPoint>)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let has = |n: &str| headers.iter().any(|h| h.trim().eq_ignore_ascii_case(n));
    let mode = if has("aqi_level") {
        ValidationMode::AqiLevel
    } else if has("average") {
        ValidationMode::Concentration
    } else {
        return Err(Error::Format(
            "satellite CSV needs an 'aqi_level' or 'average' column".into(),
        ));
    };
    let value_col = match mode {
        ValidationMode::AqiLevel => "aqi_level",
        ValidationMode::Concentration => "average",
    };
    let cols = Columns::find(
        &headers,
        &[
            "epoch_time",
            "latitude",
            "longitude",
            value_col,
            "pollutant",
            "cell_row",
            "cell_col",
        ],
    );
    for (k, name) in ["epoch_time", "latitude", "longitude"].iter().enumerate() {
        if cols.idx[k].is_none() {
            return Err(Error::Format(format!("satellite CSV lacks column '{name}'")));
        }
    }

    let mut points = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let line = n as u64 + 2;
        let rec = rec?;
        let location = GeoPoint::new(cols.num(&rec, 1, line)?, cols.num(&rec, 2, line)?)?;
        let pollutant = match mode {
            ValidationMode::Concentration => Some(cols.get(&rec, 4, line)?.parse::<PollutantId>()?),
            ValidationMode::AqiLevel => None,
        };
        let cell = match (cols.idx[5], cols.idx[6]) {
            (Some(_), Some(_)) => Some(GridCell {
                row: cols.num(&rec, 5, line)?,
                col: cols.num(&rec, 6, line)?,
                resolution_deg,
            }),
            _ => None,
        };
        points.push(SatPoint {
            epoch_time: cols.num(&rec, 0, line)?,
            location,
            cell,
            pollutant,
            value: cols.num(&rec, 3, line)?,
        });
    }
    Ok((mode, points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cell_of;

    #[test]
    fn sig6_formatting() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(-0.0), "0");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(35.775), "35.775");
        assert_eq!(fmt_sig6(-5.825), "-5.825");
        assert_eq!(fmt_sig6(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_sig6(123456.7), "123457");
        assert_eq!(fmt_sig6(1234567.0), "1.23457e6");
        assert_eq!(fmt_sig6(0.0001234), "0.0001234");
        assert_eq!(fmt_sig6(1.5e-7), "1.5e-7");
        assert_eq!(fmt_sig6(999999.5), "1e6");
    }

    fn aqi(lat: f64, lon: f64, level: u8) -> AirQualityEvent {
        AirQualityEvent {
            epoch_time: 1541637000,
            cell: cell_of(GeoPoint::new(lat, lon).unwrap(), 0.05).unwrap(),
            aqi_level: level,
            dominant_pollutant: PollutantId::Co,
        }
    }

    #[test]
    fn geojson_shapes() {
        let empty = geojson_value(&[]);
        assert_eq!(empty["type"], "FeatureCollection");
        assert_eq!(empty["features"].as_array().unwrap().len(), 0);

        let one = geojson_value(&[aqi(35.76, -5.83, 4)]);
        let f = &one["features"][0];
        let coords = f["geometry"]["coordinates"].as_array().unwrap();
        assert_eq!(coords[0].as_f64().unwrap(), -5.825);
        assert_eq!(coords[1].as_f64().unwrap(), 35.775);
        assert_eq!(f["properties"]["aqi_level"], 4);
        assert_eq!(f["properties"]["dominant_pollutant"], "CO");
    }

    #[test]
    fn ce3_round_trips_through_sat_reader() {
        let events = vec![aqi(35.76, -5.83, 4), aqi(40.4, -3.7, 2)];
        let mut buf = Vec::new();
        write_ce3_csv(&mut buf, &events).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text
            .starts_with("epoch_time,date_time,latitude,longitude,cell_row,cell_col,aqi_level,dominant_pollutant\n"));
        assert!(
            text.contains("1541637000,2018-11-08T00:30:00Z,35.775,-5.825,2515,3483,4,CO"),
            "{text}"
        );
        let (mode, pts) = read_sat_points(buf.as_slice(), 0.05).unwrap();
        assert_eq!(mode, ValidationMode::AqiLevel);
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].value, 4.0);
        let c = events[0].cell.center();
        assert!((pts[0].location.lat() - c.lat()).abs() < 1e-9 && (pts[0].location.lon() - c.lon()).abs() < 1e-9);
        assert_eq!(pts[0].cell, Some(events[0].cell));
    }

    #[test]
    fn ce1_reads_as_concentrations() {
        let ev = AggregateEvent {
            epoch_time: 1800,
            cell: cell_of(GeoPoint::new(40.4, -3.7).unwrap(), 0.05).unwrap(),
            pollutant: PollutantId::No2,
            avg: 0.0425,
            min: 0.01,
            max: 0.09,
            count: 3,
        };
        let mut buf = Vec::new();
        write_ce1_csv(&mut buf, &[ev]).unwrap();
        let (mode, pts) = read_sat_points(buf.as_slice(), 0.05).unwrap();
        assert_eq!(mode, ValidationMode::Concentration);
        assert_eq!((pts[0].pollutant, pts[0].value), (Some(PollutantId::No2), 0.0425));
    }

    #[test]
    fn reader_rejects_unknown_layout() {
        assert!(read_sat_points("a,b\n1,2\n".as_bytes(), 0.05).is_err());
    }
}
