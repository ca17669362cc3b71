//! Seeded synthetic plot feeds standing in for live satellite downlinks,
//! and paired satellite/station series with an analytically known Pearson r.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::catalog::Catalog;
use crate::emit::{fmt_sig6, iso_utc, write_ce1_csv};
use crate::error::{Error, Result};
use crate::ingest::BoundingBox;
use crate::model::{cell_of, EngineUnit, GeoPoint, PollutantId, LEVEL_COUNT};
use crate::patterns::AggregateEvent;
use crate::units::{RawUnit, DRY_AIR_VCD_MOLEC, MW_DRY_AIR};
use crate::validation::EARTH_RADIUS_KM;

/// 2018-11-08T00:00:00Z
pub const DEFAULT_START_EPOCH: i64 = 1_541_635_200;

/// Gaussian plume added on top of the baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hotspot {
    pub lat: f64,
    pub lon: f64,
    pub sigma_deg: f64,
    /// Peak excess as a multiple of the pollutant baseline.
    pub strength: f64,
}

impl Hotspot {
    /// Northern Moroccan coast near Tangier.
    pub fn tangier() -> Self {
        Hotspot {
            lat: 35.76,
            lon: -5.83,
            sigma_deg: 0.4,
            strength: 20.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    /// Total plots across all pollutants.
    pub n_plots: usize,
    pub region: BoundingBox,
    pub hotspots: Vec<Hotspot>,
    pub start_epoch: i64,
    pub span_secs: i64,
    /// Distinct plot locations shared by all pollutants.
    pub n_sites: usize,
    /// Fraction of rows written with every level empty.
    pub empty_fraction: f64,
    /// Noise standard deviation as a fraction of the baseline.
    pub noise_frac: f64,
    pub pollutants: Vec<PollutantId>,
}

impl SynthConfig {
    pub fn new(seed: u64, n_plots: usize, region: BoundingBox) -> Self {
        SynthConfig {
            seed,
            n_plots,
            region,
            hotspots: vec![Hotspot::tangier()],
            start_epoch: DEFAULT_START_EPOCH,
            span_secs: 86_400,
            n_sites: 480,
            empty_fraction: 0.0,
            noise_frac: 0.1,
            pollutants: PollutantId::ALL.to_vec(),
        }
    }
}

/// Typical background level in engine units.
pub fn baseline(p: PollutantId) -> f64 {
    match p {
        PollutantId::Ch4 => 1.9,
        PollutantId::Co => 0.5,
        PollutantId::Co2 => 420.0,
        PollutantId::Nox => 0.03,
        PollutantId::No2 => 0.02,
        PollutantId::O3 => 0.04,
        PollutantId::So2 => 0.01,
        PollutantId::Pm25 => 6.0,
        PollutantId::Pm10 => 25.0,
    }
}

/// Unit the generator writes each pollutant in. CO2 goes out as a column
/// density so runs exercise the conversion path.
pub fn synth_unit(p: PollutantId, engine: EngineUnit) -> RawUnit {
    match (p, engine) {
        (PollutantId::Co2, EngineUnit::Ppmv) => RawUnit::MoleculesPerCm2,
        (_, EngineUnit::Ppmv) => RawUnit::Ppmv,
        (_, EngineUnit::UgM3) => RawUnit::UgM3,
    }
}

/// Inverse of the engine normalization for the units the generator writes.
fn to_raw(v: f64, unit: RawUnit, mw: Option<f64>) -> f64 {
    match (unit, mw) {
        (RawUnit::MoleculesPerCm2, Some(mw)) => v * MW_DRY_AIR / mw * DRY_AIR_VCD_MOLEC,
        _ => v,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotFile {
    pub path: PathBuf,
    pub pollutant: PollutantId,
    pub unit: RawUnit,
    pub rows: usize,
}

pub fn plot_file_name(p: PollutantId, unit: RawUnit) -> String {
    format!("plots_{}_{}.csv", p.as_str(), unit.as_str())
}

fn uniform_point(rng: &mut ChaCha8Rng, b: &BoundingBox) -> (f64, f64) {
    (
        rng.random_range(b.lat_min..=b.lat_max),
        rng.random_range(b.lon_min..=b.lon_max),
    )
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Writes one plot CSV per pollutant into `out_dir`. Output is a pure
/// function of the config and catalog.
pub fn generate_plots(cfg: &SynthConfig, catalog: &Catalog, out_dir: &Path) -> Result<Vec<PlotFile>> {
    if cfg.n_plots == 0 {
        return Err(Error::Config("n_plots must be positive".into()));
    }
    write_plot_files(cfg, catalog, out_dir)
}

/// As `generate_plots`, but zero plots yields header-only files.
pub(crate) fn write_plot_files(cfg: &SynthConfig, catalog: &Catalog, out_dir: &Path) -> Result<Vec<PlotFile>> {
    if cfg.pollutants.is_empty() || cfg.n_sites == 0 || cfg.span_secs <= 0 {
        return Err(Error::Config(
            "synth needs pollutants, sites and a positive span".into(),
        ));
    }
    cfg.region.validate()?;
    std::fs::create_dir_all(out_dir).map_err(write_err(out_dir))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sites: Vec<(f64, f64)> = (0..cfg.n_sites).map(|_| uniform_point(&mut rng, &cfg.region)).collect();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let n = cfg.pollutants.len();
    let mut files = Vec::with_capacity(n);
    for (k, &p) in cfg.pollutants.iter().enumerate() {
        let info = catalog
            .pollutant(p)
            .ok_or_else(|| Error::Config(format!("pollutant {p} not in catalog")))?;
        let unit = synth_unit(p, info.unit);
        let rows = cfg.n_plots / n + usize::from(k < cfg.n_plots % n);
        let base = baseline(p);

        let mut plots: Vec<(i64, usize, f64, bool)> = (0..rows)
            .map(|_| {
                let t = cfg.start_epoch + rng.random_range(0..cfg.span_secs);
                let site = rng.random_range(0..sites.len());
                let (lat, lon) = sites[site];
                let plume: f64 = cfg
                    .hotspots
                    .iter()
                    .map(|h| {
                        let d2 = (lat - h.lat).powi(2) + (lon - h.lon).powi(2);
                        h.strength * (-d2 / (2.0 * h.sigma_deg * h.sigma_deg)).exp()
                    })
                    .sum();
                let v = base * (1.0 + plume + cfg.noise_frac * noise.sample(&mut rng));
                let empty = rng.random_bool(cfg.empty_fraction.clamp(0.0, 1.0));
                (t, site, v.max(0.0) + 0.0, empty)
            })
            .collect();
        plots.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2)));

        let path = out_dir.join(plot_file_name(p, unit));
        let file = File::create(&path).map_err(write_err(&path))?;
        let mut w = BufWriter::new(file);
        let mut header = String::from("EpochTime,DateTime,Longitude,Latitude");
        for l in 1..=LEVEL_COUNT {
            header.push_str(&format!(",Level{l}"));
        }
        writeln!(w, "{header}").map_err(write_err(&path))?;
        for (t, site, v, empty) in &plots {
            let (lat, lon) = sites[*site];
            let first = if *empty {
                "-0.0".to_string()
            } else {
                to_raw(*v, unit, info.molecular_weight).to_string()
            };
            write!(w, "{t},{},{lon},{lat},{first}", iso_utc(*t)).map_err(write_err(&path))?;
            for _ in 1..LEVEL_COUNT {
                w.write_all(b",-0.0").map_err(write_err(&path))?;
            }
            w.write_all(b"\n").map_err(write_err(&path))?;
        }
        w.flush().map_err(write_err(&path))?;
        files.push(PlotFile {
            path,
            pollutant: p,
            unit,
            rows,
        });
    }
    Ok(files)
}

/// Standard deviation of a uniform distribution on `[lo, hi]`.
pub fn uniform_sd(lo: f64, hi: f64) -> f64 {
    (hi - lo) / 12f64.sqrt()
}

/// Pearson r of `(x, a·x + b + e)` with `sd(x) = sigma_sat`, `sd(e) = noise_sd`.
pub fn expected_r(a: f64, sigma_sat: f64, noise_sd: f64) -> f64 {
    let num = a * sigma_sat;
    if num == 0.0 {
        return 0.0;
    }
    num / (num * num + noise_sd * noise_sd).sqrt()
}

/// Noise standard deviation that makes `expected_r` equal `r` (0 < r ≤ 1).
pub fn noise_sd_for(r: f64, a: f64, sigma_sat: f64) -> f64 {
    a.abs() * sigma_sat * (1.0 / (r * r) - 1.0).max(0.0).sqrt()
}

#[derive(Debug, Clone)]
pub struct PairingConfig {
    pub seed: u64,
    pub n_pairs: usize,
    pub pollutant: PollutantId,
    pub a: f64,
    pub b: f64,
    pub noise_sd: f64,
    /// Satellite values are uniform on this range.
    pub sat_range: (f64, f64),
    pub region: BoundingBox,
    pub start_epoch: i64,
    /// One pair per quantum.
    pub quantum_secs: i64,
    /// Station displacement north of the satellite cell center.
    pub offset_km: f64,
    pub n_stations: usize,
}

impl PairingConfig {
    /// NO2 pairing calibrated so the population correlation equals `r`.
    /// `r = 0` uses `a = 0` with unit-scale noise.
    pub fn for_target_r(r: f64, n_pairs: usize, region: BoundingBox, seed: u64) -> Self {
        let sat_range = (0.02, 0.2);
        let sigma = uniform_sd(sat_range.0, sat_range.1);
        let (a, noise_sd) = if r <= 0.0 {
            (0.0, sigma)
        } else {
            (1.0, noise_sd_for(r.min(1.0), 1.0, sigma))
        };
        PairingConfig {
            seed,
            n_pairs,
            pollutant: PollutantId::No2,
            a,
            // keeps the station series well clear of zero
            b: 0.05 + 6.0 * noise_sd,
            noise_sd,
            sat_range,
            region,
            start_epoch: DEFAULT_START_EPOCH,
            quantum_secs: 600,
            offset_km: 0.3,
            n_stations: 12,
        }
    }

    pub fn sat_sd(&self) -> f64 {
        uniform_sd(self.sat_range.0, self.sat_range.1)
    }

    pub fn expected_r(&self) -> f64 {
        expected_r(self.a, self.sat_sd(), self.noise_sd)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairingFiles {
    /// Aggregation-format CSV of satellite reference values.
    pub sat_csv: PathBuf,
    pub station_csv: PathBuf,
    pub pairs: usize,
}

pub const SAT_REFERENCE_FILE: &str = "sat_reference_ce1.csv";
pub const STATION_FILE: &str = "stations.csv";

/// Writes a satellite reference series and a station series with
/// `station = a·sat + b + N(0, noise_sd)`.
pub fn generate_pairing(cfg: &PairingConfig, catalog: &Catalog, out_dir: &Path) -> Result<PairingFiles> {
    if cfg.n_pairs == 0 || cfg.n_stations == 0 || cfg.quantum_secs <= 0 {
        return Err(Error::Config(
            "pairing needs pairs, stations and a positive quantum".into(),
        ));
    }
    if cfg.noise_sd.is_nan() || cfg.noise_sd < 0.0 || cfg.sat_range.0 < 0.0 || cfg.sat_range.1 <= cfg.sat_range.0 {
        return Err(Error::Config(
            "pairing noise must be non-negative and the satellite range increasing".into(),
        ));
    }
    let info = catalog
        .pollutant(cfg.pollutant)
        .ok_or_else(|| Error::Config(format!("pollutant {} not in catalog", cfg.pollutant)))?;
    cfg.region.validate()?;
    std::fs::create_dir_all(out_dir).map_err(write_err(out_dir))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let stations: Vec<GeoPoint> = (0..cfg.n_stations)
        .map(|_| {
            let (lat, lon) = uniform_point(&mut rng, &cfg.region);
            GeoPoint::new(lat, lon)
        })
        .collect::<Result<_>>()?;
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let dlat = (cfg.offset_km / EARTH_RADIUS_KM).to_degrees();

    let mut sat_events = Vec::with_capacity(cfg.n_pairs);
    let station_csv = out_dir.join(STATION_FILE);
    let file = File::create(&station_csv).map_err(write_err(&station_csv))?;
    let mut st = csv::Writer::from_writer(BufWriter::new(file));
    st.write_record(["station_id", "epoch_time", "lat", "lon", "pollutant", "value", "unit"])?;
    for k in 0..cfg.n_pairs {
        let t = cfg.start_epoch + k as i64 * cfg.quantum_secs;
        let s = k % cfg.n_stations;
        let cell = cell_of(stations[s], catalog.grid_resolution_deg)?;
        let center = cell.center();
        let sat: f64 = rng.random_range(cfg.sat_range.0..=cfg.sat_range.1);
        let station = (cfg.a * sat + cfg.b + noise.sample(&mut rng)).max(0.0) + 0.0;
        sat_events.push(AggregateEvent {
            epoch_time: t,
            cell,
            pollutant: cfg.pollutant,
            avg: sat,
            min: sat,
            max: sat,
            count: 1,
        });
        st.write_record([
            format!("ST{s:03}"),
            t.to_string(),
            fmt_sig6(center.lat() + dlat),
            fmt_sig6(center.lon()),
            cfg.pollutant.as_str().to_string(),
            fmt_sig6(station),
            info.unit.as_str().to_string(),
        ])?;
    }
    st.flush().map_err(write_err(&station_csv))?;

    let sat_csv = out_dir.join(SAT_REFERENCE_FILE);
    let file = File::create(&sat_csv).map_err(write_err(&sat_csv))?;
    write_ce1_csv(BufWriter::new(file), &sat_events)?;
    Ok(PairingFiles {
        sat_csv,
        station_csv,
        pairs: cfg.n_pairs,
    })
}
