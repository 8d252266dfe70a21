//! Gauge water levels, flood-extent maps and the wet-surface-ratio (WSR)
//! operator, plus synthesis of noisy observations from a truth run.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::ascii_grid::{AsciiGrid, NODATA};
use crate::domain::{FloodplainZone, Grid};
use crate::error::{Error, Result};
use crate::seeding::{self, purpose};
use crate::swe::{DepthSnapshot, GaugeSeries, TIME_EPS};
use crate::table;

/// Depth at or above which a cell counts as flooded (m).
pub const WET_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct GaugeObservation {
    pub time: f64,
    pub station: String,
    /// Free-surface elevation (m).
    pub eta_obs: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WsrObservation {
    pub time: f64,
    /// 1-based zone identifier.
    pub zone_id: usize,
    pub wsr: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloodExtentMap {
    pub time: f64,
    pub wet_mask: Vec<bool>,
    pub valid_mask: Vec<bool>,
}

impl FloodExtentMap {
    pub fn new(time: f64, wet_mask: Vec<bool>, valid_mask: Vec<bool>) -> Result<Self> {
        if wet_mask.len() != valid_mask.len() {
            return Err(Error::DimensionMismatch(format!(
                "wet mask has {} cells, valid mask {}",
                wet_mask.len(),
                valid_mask.len()
            )));
        }
        if wet_mask.iter().zip(&valid_mask).any(|(&w, &v)| w && !v) {
            return Err(Error::InvalidInput("extent map marks an invalid cell as wet".into()));
        }
        Ok(FloodExtentMap {
            time,
            wet_mask,
            valid_mask,
        })
    }

    /// Thresholds a depth field; cells outside `valid` are left dry and invalid.
    pub fn from_depth(time: f64, depth: &[f64], threshold: f64, valid: Option<&[bool]>) -> Result<Self> {
        let valid_mask = match valid {
            Some(v) => v.to_vec(),
            None => vec![true; depth.len()],
        };
        if valid_mask.len() != depth.len() {
            return Err(Error::DimensionMismatch("valid mask and depth differ in length".into()));
        }
        let wet_mask = depth.iter().zip(&valid_mask).map(|(&h, &v)| v && h >= threshold).collect();
        Self::new(time, wet_mask, valid_mask)
    }

    /// Encodes as 1 wet, 0 dry, nodata invalid.
    pub fn to_ascii(&self, grid: &Grid) -> Result<AsciiGrid> {
        let values = self
            .wet_mask
            .iter()
            .zip(&self.valid_mask)
            .map(|(&w, &v)| match (v, w) {
                (false, _) => NODATA,
                (true, true) => 1.0,
                (true, false) => 0.0,
            })
            .collect();
        AsciiGrid::new(grid.ncols, grid.nrows, grid.cell_size, values)
    }

    pub fn from_ascii(time: f64, ascii: &AsciiGrid, grid: &Grid) -> Result<Self> {
        if ascii.ncols != grid.ncols || ascii.nrows != grid.nrows {
            return Err(Error::DimensionMismatch(format!(
                "extent map is {}x{}, grid {}x{}",
                ascii.ncols, ascii.nrows, grid.ncols, grid.nrows
            )));
        }
        let mut wet = Vec::with_capacity(ascii.values.len());
        let mut valid = Vec::with_capacity(ascii.values.len());
        for &v in &ascii.values {
            if ascii.is_nodata(v) {
                wet.push(false);
                valid.push(false);
            } else if v == 0.0 || v == 1.0 {
                wet.push(v == 1.0);
                valid.push(true);
            } else {
                return Err(Error::InvalidInput(format!("extent map value {v} is not 0, 1 or nodata")));
            }
        }
        Self::new(time, wet, valid)
    }
}

pub fn wsr_of_depth(h: &[f64], zone: &FloodplainZone, wet_threshold: f64) -> Result<f64> {
    let total = zone.cell_count();
    if total == 0 {
        return Err(Error::EmptyZone(zone.zone_id));
    }
    let wet = zone.cells().filter(|&i| h[i] >= wet_threshold).count();
    Ok(wet as f64 / total as f64)
}

/// Wet share of the zone's valid cells.
pub fn wsr_of_extent(map: &FloodExtentMap, zone: &FloodplainZone) -> Result<f64> {
    let (mut wet, mut valid) = (0usize, 0usize);
    for i in zone.cells() {
        if map.valid_mask[i] {
            valid += 1;
            wet += map.wet_mask[i] as usize;
        }
    }
    if valid == 0 {
        return Err(Error::EmptyZone(zone.zone_id));
    }
    Ok(wet as f64 / valid as f64)
}

/// Recorded diagnostics of one run: gauge series plus depth snapshots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub gauges: GaugeSeries,
    pub snapshots: Vec<DepthSnapshot>,
}

impl Trajectory {
    pub fn snapshot(&self, t: f64) -> Option<&DepthSnapshot> {
        self.snapshots.iter().find(|s| (s.time - t).abs() <= TIME_EPS)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSchedule {
    /// Gauge sampling interval (s).
    pub gauge_period: f64,
    pub overpass_times: Vec<f64>,
    pub sigma_wl: f64,
    pub sigma_wsr: f64,
    pub wet_threshold: f64,
}

impl Default for ObservationSchedule {
    fn default() -> Self {
        ObservationSchedule {
            gauge_period: 900.0,
            overpass_times: Vec::new(),
            sigma_wl: 0.05,
            sigma_wsr: 0.05,
            wet_threshold: WET_THRESHOLD,
        }
    }
}

/// One entry of a stacked observation vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Gauge(GaugeObservation),
    Wsr(WsrObservation),
}

impl Observation {
    pub fn time(&self) -> f64 {
        match self {
            Observation::Gauge(o) => o.time,
            Observation::Wsr(o) => o.time,
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            Observation::Gauge(o) => o.eta_obs,
            Observation::Wsr(o) => o.wsr,
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            Observation::Gauge(o) => o.sigma,
            Observation::Wsr(o) => o.sigma,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Observation::Gauge(o) => format!("gauge {} at t = {} s", o.station, o.time),
            Observation::Wsr(o) => format!("WSR zone {} at t = {} s", o.zone_id, o.time),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationSet {
    pub gauges: Vec<GaugeObservation>,
    pub wsr: Vec<WsrObservation>,
    pub extents: Vec<FloodExtentMap>,
}

impl ObservationSet {
    /// Observations with `lo < t <= hi`: gauges first (by time, then station),
    /// then WSR (by time, then zone). Gauges are kept only at multiples of
    /// `gauge_interval`.
    pub fn batch(&self, lo: f64, hi: f64, include_wsr: bool, gauge_interval: f64) -> Vec<Observation> {
        let inside = |t: f64| t > lo + TIME_EPS && t <= hi + TIME_EPS;
        let mut out: Vec<Observation> = self
            .gauges
            .iter()
            .filter(|o| inside(o.time) && on_grid(o.time, gauge_interval))
            .cloned()
            .map(Observation::Gauge)
            .collect();
        if include_wsr {
            out.extend(self.wsr.iter().filter(|o| inside(o.time)).cloned().map(Observation::Wsr));
        }
        out
    }

    pub fn write_dir(&self, dir: &Path, grid: &Grid) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_gauge_obs(&dir.join(GAUGE_OBS_FILE), &self.gauges)?;
        write_wsr_obs(&dir.join(WSR_OBS_FILE), &self.wsr)?;
        for map in &self.extents {
            map.to_ascii(grid)?.write(&dir.join(extent_file_name(map.time)))?;
        }
        Ok(())
    }

    /// Loads a directory written by [`ObservationSet::write_dir`]; extent maps
    /// are found by file name and returned in time order.
    pub fn read_dir(dir: &Path, grid: &Grid) -> Result<Self> {
        let gauges = read_gauge_obs(&dir.join(GAUGE_OBS_FILE))?;
        let wsr = read_wsr_obs(&dir.join(WSR_OBS_FILE))?;
        let mut extents = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(t) = name.strip_prefix("extent_t").and_then(|r| r.strip_suffix(".asc")) {
                let time: f64 = t.parse().map_err(|_| Error::parse(&path, "bad time in file name"))?;
                extents.push(FloodExtentMap::from_ascii(time, &AsciiGrid::read(&path)?, grid)?);
            }
        }
        extents.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(ObservationSet { gauges, wsr, extents })
    }
}

pub const GAUGE_OBS_FILE: &str = "gauge_obs.csv";
pub const WSR_OBS_FILE: &str = "wsr_obs.csv";

pub fn extent_file_name(time: f64) -> String {
    format!("extent_t{time}.asc")
}

fn on_grid(t: f64, interval: f64) -> bool {
    if !(interval > 0.0) {
        return true;
    }
    let k = (t / interval).round();
    (t - k * interval).abs() <= TIME_EPS
}

/// Twin-experiment observations: truth gauges plus Gaussian noise at every
/// gauge sample, and thresholded truth extents (with noisy WSR) at each
/// overpass time.
pub fn synthesize_observations(
    truth: &Trajectory,
    zones: &[FloodplainZone],
    schedule: &ObservationSchedule,
    seed: u64,
    valid: Option<&[bool]>,
) -> Result<ObservationSet> {
    if !(schedule.sigma_wl >= 0.0) || !(schedule.sigma_wsr >= 0.0) {
        return Err(Error::InvalidInput("observation error std-devs must be >= 0".into()));
    }
    let mut set = ObservationSet::default();

    let wl_noise = Normal::new(0.0, schedule.sigma_wl).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = seeding::stream(seed, &[purpose::GAUGE_NOISE]);
    let g = &truth.gauges;
    for (k, &t) in g.times.iter().enumerate() {
        if !on_grid(t, schedule.gauge_period) {
            continue;
        }
        for (s, station) in g.stations.iter().enumerate() {
            set.gauges.push(GaugeObservation {
                time: t,
                station: station.clone(),
                eta_obs: g.eta[s][k] + wl_noise.sample(&mut rng),
                sigma: schedule.sigma_wl,
            });
        }
    }

    let wsr_noise = Normal::new(0.0, schedule.sigma_wsr).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = seeding::stream(seed, &[purpose::WSR_NOISE]);
    for &t in &schedule.overpass_times {
        let snap = truth.snapshot(t).ok_or_else(|| {
            Error::InvalidInput(format!("overpass time {t} s lies outside the recorded truth"))
        })?;
        let map = FloodExtentMap::from_depth(t, &snap.depth, schedule.wet_threshold, valid)?;
        for zone in zones {
            // Zones the map does not see produce no observation.
            let Ok(w) = wsr_of_extent(&map, zone) else { continue };
            set.wsr.push(WsrObservation {
                time: t,
                zone_id: zone.zone_id,
                wsr: (w + wsr_noise.sample(&mut rng)).clamp(0.0, 1.0),
                sigma: schedule.sigma_wsr,
            });
        }
        set.extents.push(map);
    }
    Ok(set)
}

/// Member-side counterpart of each observation, in batch order.
pub fn predict_observations(
    traj: &Trajectory,
    zones: &[FloodplainZone],
    batch: &[Observation],
    wet_threshold: f64,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|obs| match obs {
            Observation::Gauge(o) => traj
                .gauges
                .value(&o.station, o.time)
                .ok_or_else(|| Error::MissingDiagnostic(obs.label())),
            Observation::Wsr(o) => {
                let snap = traj.snapshot(o.time).ok_or_else(|| Error::MissingDiagnostic(obs.label()))?;
                let zone = zones
                    .iter()
                    .find(|z| z.zone_id == o.zone_id)
                    .ok_or_else(|| Error::MissingDiagnostic(obs.label()))?;
                wsr_of_depth(&snap.depth, zone, wet_threshold)
            }
        })
        .collect()
}

const GAUGE_HEADER: [&str; 4] = ["time_s", "station", "eta_m", "sigma_m"];
const WSR_HEADER: [&str; 4] = ["time_s", "zone", "wsr", "sigma"];

pub fn write_gauge_obs(path: &Path, obs: &[GaugeObservation]) -> Result<()> {
    let rows = obs
        .iter()
        .map(|o| vec![o.time.to_string(), o.station.clone(), o.eta_obs.to_string(), o.sigma.to_string()]);
    table::write(path, &GAUGE_HEADER, rows)
}

pub fn read_gauge_obs(path: &Path) -> Result<Vec<GaugeObservation>> {
    table::read(path, &GAUGE_HEADER)?
        .iter()
        .map(|r| {
            Ok(GaugeObservation {
                time: table::field(path, r, 0)?,
                station: table::field(path, r, 1)?,
                eta_obs: table::field(path, r, 2)?,
                sigma: table::field(path, r, 3)?,
            })
        })
        .collect()
}

pub fn write_wsr_obs(path: &Path, obs: &[WsrObservation]) -> Result<()> {
    let rows = obs
        .iter()
        .map(|o| vec![o.time.to_string(), o.zone_id.to_string(), o.wsr.to_string(), o.sigma.to_string()]);
    table::write(path, &WSR_HEADER, rows)
}

pub fn read_wsr_obs(path: &Path) -> Result<Vec<WsrObservation>> {
    table::read(path, &WSR_HEADER)?
        .iter()
        .map(|r| {
            Ok(WsrObservation {
                time: table::field(path, r, 0)?,
                zone_id: table::field(path, r, 1)?,
                wsr: table::field(path, r, 2)?,
                sigma: table::field(path, r, 3)?,
            })
        })
        .collect()
}
