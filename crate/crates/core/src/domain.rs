//! Synthetic catchment: grid geometry, friction zoning, floodplain zones,
//! gauge stations and boundary forcing.
//!
//! The valley runs along +x (increasing column). A meandering channel is cut
//! into a gently tilted floodplain, lined by dykes from `dyke_start_col`
//! downstream. Transverse ridges split the dyked floodplain into five storage
//! compartments, which are the zones used for state correction and wet
//! surface ratios.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const N_SEGMENTS: usize = 6;
pub const N_ZONES: usize = 5;
pub const N_KS: usize = N_SEGMENTS + 1;

/// Regular raster over the valley. Row 0 is the first row written to an
/// ASCII grid; cell `(row, col)` lives at index `row * ncols + col`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub ncols: usize,
    pub nrows: usize,
    pub cell_size: f64,
    pub bed_elevation: Vec<f64>,
    pub channel_mask: Vec<bool>,
    /// 0 for floodplain, 1..=6 for river segments.
    pub segment_id: Vec<u8>,
}

impl Grid {
    pub fn new(
        ncols: usize,
        nrows: usize,
        cell_size: f64,
        bed_elevation: Vec<f64>,
        channel_mask: Vec<bool>,
        segment_id: Vec<u8>,
    ) -> Result<Self> {
        let grid = Grid {
            ncols,
            nrows,
            cell_size,
            bed_elevation,
            channel_mask,
            segment_id,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Flat-bottomed basin with no channel, handy for closed-domain runs.
    pub fn flat(ncols: usize, nrows: usize, cell_size: f64, bed: f64) -> Result<Self> {
        let n = ncols * nrows;
        Grid::new(
            ncols,
            nrows,
            cell_size,
            vec![bed; n],
            vec![false; n],
            vec![0; n],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.ncols < 2 || self.nrows < 2 {
            return Err(Error::InvalidInput(format!(
                "grid must be at least 2x2, got {}x{}",
                self.ncols, self.nrows
            )));
        }
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(Error::InvalidInput(format!(
                "cell size must be positive, got {}",
                self.cell_size
            )));
        }
        let n = self.len();
        if self.bed_elevation.len() != n || self.channel_mask.len() != n || self.segment_id.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "grid fields must all have {n} cells"
            )));
        }
        if let Some(i) = self.bed_elevation.iter().position(|z| !z.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite bed elevation at cell {i}")));
        }
        for (i, (&ch, &seg)) in self.channel_mask.iter().zip(&self.segment_id).enumerate() {
            let ok = if ch {
                (1..=N_SEGMENTS as u8).contains(&seg)
            } else {
                seg == 0
            };
            if !ok {
                return Err(Error::InvalidInput(format!(
                    "cell {i}: channel={ch} inconsistent with segment id {seg}"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.ncols * self.nrows
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.ncols + col
    }

    #[inline]
    pub fn row_col(&self, idx: usize) -> (usize, usize) {
        (idx / self.ncols, idx % self.ncols)
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloodplainZone {
    /// 1-based, matching the dh component it controls.
    pub zone_id: usize,
    pub cell_mask: Vec<bool>,
    pub area: f64,
}

impl FloodplainZone {
    pub fn new(zone_id: usize, cell_mask: Vec<bool>, cell_area: f64) -> Self {
        let area = cell_mask.iter().filter(|&&m| m).count() as f64 * cell_area;
        FloodplainZone {
            zone_id,
            cell_mask,
            area,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.cell_mask.iter().filter(|&&m| m).count()
    }

    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.cell_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaugeStation {
    pub name: String,
    pub cell_index: usize,
    /// Recording period in seconds.
    pub obs_period: f64,
}

/// Piecewise-linear discharge time series at the upstream boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Hydrograph {
    times: Vec<f64>,
    discharge: Vec<f64>,
}

impl Hydrograph {
    pub fn new(times: Vec<f64>, discharge: Vec<f64>) -> Result<Self> {
        if times.len() != discharge.len() || times.len() < 2 {
            return Err(Error::InvalidInput(
                "hydrograph needs at least two (time, Q) knots of matching length".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "hydrograph times must be strictly increasing".into(),
            ));
        }
        if discharge.iter().any(|&q| !(q >= 0.0) || !q.is_finite()) {
            return Err(Error::InvalidInput("hydrograph discharge must be finite and >= 0".into()));
        }
        Ok(Hydrograph { times, discharge })
    }

    pub fn constant(q: f64, t0: f64, t1: f64) -> Result<Self> {
        Hydrograph::new(vec![t0, t1], vec![q, q])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn discharge(&self) -> &[f64] {
        &self.discharge
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn check_span(&self, t: f64) -> Result<()> {
        if t < self.start() || t > self.end() || t.is_nan() {
            return Err(Error::MissingForcing {
                time: t,
                start: self.start(),
                end: self.end(),
            });
        }
        Ok(())
    }

    /// Knot interval `k` such that `times[k] <= t <= times[k + 1]`.
    fn segment(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&x| x <= t);
        k.saturating_sub(1).min(self.times.len() - 2)
    }

    pub fn interpolate(&self, t: f64) -> Result<f64> {
        self.check_span(t)?;
        let k = self.segment(t);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let (q0, q1) = (self.discharge[k], self.discharge[k + 1]);
        if t == t0 {
            return Ok(q0);
        }
        if t == t1 {
            return Ok(q1);
        }
        Ok(q0 + (q1 - q0) * (t - t0) / (t1 - t0))
    }

    /// Exact integral of the piecewise-linear discharge over `[a, b]` (m³).
    pub fn integrate(&self, a: f64, b: f64) -> Result<f64> {
        self.check_span(a)?;
        self.check_span(b)?;
        if b <= a {
            return Ok(0.0);
        }
        let mut total = 0.0;
        let mut k = self.segment(a);
        let mut lo = a;
        let mut q_lo = self.interpolate(a)?;
        loop {
            let hi = self.times[k + 1].min(b);
            let q_hi = if hi == self.times[k + 1] {
                self.discharge[k + 1]
            } else {
                self.interpolate(hi)?
            };
            total += 0.5 * (q_lo + q_hi) * (hi - lo);
            if hi >= b {
                break;
            }
            k += 1;
            lo = hi;
            q_lo = q_hi;
        }
        Ok(total)
    }
}

/// Stage-discharge law `Q = a * max(0, eta - eta0)^b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingCurve {
    pub a: f64,
    pub eta0: f64,
    pub b: f64,
}

impl RatingCurve {
    pub fn new(a: f64, eta0: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) || !(b > 0.0) || !eta0.is_finite() {
            return Err(Error::InvalidInput(format!(
                "rating curve needs a > 0, b > 0, finite eta0 (got a={a}, eta0={eta0}, b={b})"
            )));
        }
        Ok(RatingCurve { a, eta0, b })
    }

    pub fn discharge(&self, eta: f64) -> f64 {
        rating_curve_discharge(eta, self)
    }

    /// dQ/deta, zero below the datum.
    pub fn slope(&self, eta: f64) -> f64 {
        let head = eta - self.eta0;
        if head <= 0.0 {
            0.0
        } else {
            self.a * self.b * head.powf(self.b - 1.0)
        }
    }
}

pub fn rating_curve_discharge(eta: f64, rc: &RatingCurve) -> f64 {
    let head = (eta - rc.eta0).max(0.0);
    rc.a * head.powf(rc.b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryConfig {
    pub inflow_hydrograph: Hydrograph,
    pub rating_curve: RatingCurve,
    pub upstream_cells: Vec<usize>,
    pub downstream_cells: Vec<usize>,
}

impl BoundaryConfig {
    /// Walls everywhere; the hydrograph is never consulted.
    pub fn closed() -> Self {
        BoundaryConfig {
            inflow_hydrograph: Hydrograph::constant(0.0, f64::MIN, f64::MAX).unwrap(),
            rating_curve: RatingCurve::new(1.0, 0.0, 1.0).unwrap(),
            upstream_cells: Vec::new(),
            downstream_cells: Vec::new(),
        }
    }

    pub fn with_hydrograph(&self, hydrograph: Hydrograph) -> Self {
        BoundaryConfig {
            inflow_hydrograph: hydrograph,
            ..self.clone()
        }
    }
}

/// Uncertain quantities the filter corrects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlVector {
    /// Strickler coefficients (m^1/3/s): index 0 floodplain, 1..=6 river segments.
    pub ks: [f64; N_KS],
    /// Multiplier on the upstream hydrograph.
    pub mu: f64,
    /// Water-level corrections (m), one per floodplain zone.
    pub dh: [f64; N_ZONES],
}

impl ControlVector {
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.ks.iter().position(|&k| !(k > 0.0) || !k.is_finite()) {
            return Err(Error::InvalidInput(format!("ks[{i}] must be positive, got {}", self.ks[i])));
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidInput(format!("mu must be positive, got {}", self.mu)));
        }
        if self.dh.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidInput("dh must be finite".into()));
        }
        Ok(())
    }
}

pub fn materialize_friction(grid: &Grid, cv: &ControlVector) -> Vec<f64> {
    grid.segment_id.iter().map(|&s| cv.ks[s as usize]).collect()
}

/// Geometry knobs for [`build_synthetic_catchment`]. Lengths in cells unless
/// suffixed otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct CatchmentSpec {
    pub ncols: usize,
    pub nrows: usize,
    pub cell_size: f64,
    pub valley_slope: f64,
    pub cross_slope: f64,
    pub outlet_elevation: f64,
    pub channel_depth: f64,
    pub channel_width: usize,
    pub dyke_height: f64,
    /// Ridge crest above the dyke crest; ridges are never meant to overtop.
    pub ridge_freeboard: f64,
    pub meander_amplitude: f64,
    pub meander_wavelength: f64,
    pub dyke_start_col: usize,
    pub zone_width: usize,
    pub inflow_half_width: usize,
    /// Strickler value used to derive the downstream rating curve.
    pub rating_ks: f64,
    /// Gauge positions as fractions of the valley length.
    pub gauge_positions: [f64; 3],
    pub gauge_period: f64,
}

impl Default for CatchmentSpec {
    fn default() -> Self {
        CatchmentSpec {
            ncols: 100,
            nrows: 60,
            cell_size: 100.0,
            valley_slope: 3.0e-4,
            cross_slope: 1.0e-3,
            outlet_elevation: 10.0,
            channel_depth: 2.0,
            channel_width: 3,
            dyke_height: 0.6,
            ridge_freeboard: 1.5,
            meander_amplitude: 5.0,
            meander_wavelength: 100.0,
            dyke_start_col: 14,
            zone_width: 10,
            inflow_half_width: 4,
            rating_ks: 40.0,
            gauge_positions: [0.06, 0.58, 0.92],
            gauge_period: 900.0,
        }
    }
}

pub const STATION_NAMES: [&str; 3] = ["upstream", "midstream", "downstream"];

#[derive(Debug, Clone)]
pub struct Catchment {
    pub grid: Grid,
    pub zones: Vec<FloodplainZone>,
    pub stations: Vec<GaugeStation>,
    pub boundary: BoundaryConfig,
    /// Cells raised to the dyke crest.
    pub dyke_mask: Vec<bool>,
}

/// Signed lateral offset of a row centre from the channel centreline, in cells.
fn lateral_offset(spec: &CatchmentSpec, row: usize, col: usize) -> f64 {
    row as f64 + 0.5 - centerline(spec, col as f64 + 0.5)
}

fn centerline(spec: &CatchmentSpec, x_cells: f64) -> f64 {
    spec.nrows as f64 / 2.0 + spec.meander_amplitude * (2.0 * PI * x_cells / spec.meander_wavelength).sin()
}

fn validate_spec(spec: &CatchmentSpec) -> Result<()> {
    if spec.ncols < 20 || spec.nrows < 20 {
        return Err(Error::Config(format!(
            "catchment must be at least 20x20 cells, got {}x{}",
            spec.ncols, spec.nrows
        )));
    }
    let positive = [
        ("cell_size", spec.cell_size),
        ("channel_depth", spec.channel_depth),
        ("meander_wavelength", spec.meander_wavelength),
        ("rating_ks", spec.rating_ks),
        ("gauge_period", spec.gauge_period),
        ("valley_slope", spec.valley_slope),
    ];
    for (name, v) in positive {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
    }
    if spec.dyke_height < 0.0 || spec.cross_slope < 0.0 || spec.meander_amplitude < 0.0 {
        return Err(Error::Config("dyke_height, cross_slope and meander_amplitude must be >= 0".into()));
    }
    if spec.channel_width == 0 || spec.zone_width == 0 {
        return Err(Error::Config("channel_width and zone_width must be >= 1".into()));
    }
    let reach = spec.meander_amplitude + spec.channel_width as f64 / 2.0 + 1.0 + spec.zone_width as f64;
    if spec.nrows as f64 / 2.0 - reach < 1.0 {
        return Err(Error::Config(format!(
            "{} rows cannot hold the channel, dykes and {}-cell zones",
            spec.nrows, spec.zone_width
        )));
    }
    if spec.dyke_start_col + 1 + 2 * N_ZONES > spec.ncols {
        return Err(Error::Config(format!(
            "dyke_start_col {} leaves no room for {N_ZONES} zones",
            spec.dyke_start_col
        )));
    }
    if spec.gauge_positions.iter().any(|p| !(0.0..1.0).contains(p)) {
        return Err(Error::Config("gauge positions must lie in [0, 1)".into()));
    }
    Ok(())
}

pub fn build_synthetic_catchment(spec: &CatchmentSpec, hydrograph: Hydrograph) -> Result<Catchment> {
    validate_spec(spec)?;
    let (ncols, nrows) = (spec.ncols, spec.nrows);
    let n = ncols * nrows;
    let dx = spec.cell_size;
    let half_w = spec.channel_width as f64 / 2.0;
    let length = ncols as f64 * dx;

    // Along-channel arc length at each column centre.
    let mut arc = Vec::with_capacity(ncols);
    let mut s = 0.0;
    for col in 0..ncols {
        let x = col as f64 + 0.5;
        let slope = (centerline(spec, x + 0.5) - centerline(spec, x - 0.5)).abs();
        s += (1.0 + slope * slope).sqrt();
        arc.push(s - 0.5 * (1.0 + slope * slope).sqrt());
    }
    let total_arc = s;
    let segment_of_col = |col: usize| -> u8 {
        let k = (arc[col] / total_arc * N_SEGMENTS as f64).floor() as usize;
        (k.min(N_SEGMENTS - 1) + 1) as u8
    };

    // Zone spans: ridge columns at the start and at the end of each span.
    let zone_start = spec.dyke_start_col + 1;
    let span = (ncols - zone_start) / N_ZONES;
    let mut ridge_cols = vec![spec.dyke_start_col];
    for k in 0..N_ZONES {
        ridge_cols.push(zone_start + (k + 1) * span - 1);
    }
    let zone_of_col = |col: usize| -> Option<usize> {
        if col < zone_start || ridge_cols.contains(&col) {
            return None;
        }
        let k = (col - zone_start) / span;
        (k < N_ZONES).then_some(k)
    };

    let mut bed = vec![0.0; n];
    let mut channel = vec![false; n];
    let mut segment = vec![0u8; n];
    let mut dyke = vec![false; n];
    let mut zone_masks = vec![vec![false; n]; N_ZONES];

    for row in 0..nrows {
        for col in 0..ncols {
            let idx = row * ncols + col;
            let x = (col as f64 + 0.5) * dx;
            let valley = spec.outlet_elevation + spec.valley_slope * (length - x);
            let off = lateral_offset(spec, row, col);
            let dist = off.abs();
            let in_channel = (-half_w..half_w).contains(&off);
            let in_dyke_band = !in_channel && (-half_w - 1.0..half_w + 1.0).contains(&off);
            let dyked = col >= spec.dyke_start_col;
            let crest = valley + spec.dyke_height;

            if in_channel {
                channel[idx] = true;
                segment[idx] = segment_of_col(col);
                bed[idx] = valley - spec.channel_depth;
            } else if in_dyke_band && dyked {
                dyke[idx] = true;
                bed[idx] = crest;
            } else {
                let floodplain = valley + spec.cross_slope * dx * (dist - half_w);
                bed[idx] = if dyked && ridge_cols.contains(&col) {
                    floodplain.max(crest + spec.ridge_freeboard)
                } else {
                    floodplain
                };
                let beyond_dyke = dist - half_w - 1.0;
                if let Some(k) = zone_of_col(col) {
                    if beyond_dyke >= 0.0 && beyond_dyke < spec.zone_width as f64 {
                        zone_masks[k][idx] = true;
                    }
                }
            }
        }
    }

    let grid = Grid::new(ncols, nrows, dx, bed, channel, segment)?;
    let zones: Vec<FloodplainZone> = zone_masks
        .into_iter()
        .enumerate()
        .map(|(k, mask)| FloodplainZone::new(k + 1, mask, grid.cell_area()))
        .collect();
    if let Some(z) = zones.iter().find(|z| z.cell_count() == 0) {
        return Err(Error::EmptyZone(z.zone_id));
    }

    let stations = spec
        .gauge_positions
        .iter()
        .zip(STATION_NAMES)
        .map(|(&frac, name)| {
            let col = ((frac * ncols as f64) as usize).min(ncols - 1);
            let row = centerline(spec, col as f64 + 0.5).floor() as usize;
            let cell_index = grid.index(row, col);
            debug_assert!(grid.channel_mask[cell_index]);
            GaugeStation {
                name: name.to_string(),
                cell_index,
                obs_period: spec.gauge_period,
            }
        })
        .collect();

    let upstream_cells: Vec<usize> = (0..nrows)
        .filter(|&row| lateral_offset(spec, row, 0).abs() < spec.inflow_half_width as f64)
        .map(|row| grid.index(row, 0))
        .collect();
    let downstream_cells: Vec<usize> = (0..nrows)
        .map(|row| grid.index(row, ncols - 1))
        .filter(|&i| grid.channel_mask[i])
        .collect();

    // Wide-channel uniform-flow law at the outlet: Q = ks W sqrt(S) h^(5/3).
    let outlet_bed = downstream_cells
        .iter()
        .map(|&i| grid.bed_elevation[i])
        .fold(f64::INFINITY, f64::min);
    let width_m = downstream_cells.len() as f64 * dx;
    let rating_curve = RatingCurve::new(
        spec.rating_ks * width_m * spec.valley_slope.sqrt(),
        outlet_bed,
        5.0 / 3.0,
    )?;

    Ok(Catchment {
        grid,
        zones,
        stations,
        boundary: BoundaryConfig {
            inflow_hydrograph: hydrograph,
            rating_curve,
            upstream_cells,
            downstream_cells,
        },
        dyke_mask: dyke,
    })
}

/// Base flow plus scaled log-normal pulses, sampled into knots.
#[derive(Debug, Clone, PartialEq)]
pub struct HydrographShape {
    pub base_flow: f64,
    /// (peak time s, peak amplitude m³/s above base, log-width)
    pub pulses: Vec<(f64, f64, f64)>,
    pub duration: f64,
    pub knot_interval: f64,
}

impl Default for HydrographShape {
    fn default() -> Self {
        HydrographShape {
            base_flow: 150.0,
            pulses: vec![(20.0 * 3600.0, 950.0, 0.25), (56.0 * 3600.0, 800.0, 0.12)],
            duration: 84.0 * 3600.0,
            knot_interval: 900.0,
        }
    }
}

impl HydrographShape {
    pub fn discharge_at(&self, t: f64) -> f64 {
        let mut q = self.base_flow;
        if t > 0.0 {
            for &(tp, amp, width) in &self.pulses {
                let z = (t / tp).ln() / width;
                q += amp * (-0.5 * z * z).exp();
            }
        }
        q
    }

    pub fn build(&self) -> Result<Hydrograph> {
        if !(self.duration > 0.0) || !(self.knot_interval > 0.0) {
            return Err(Error::Config("hydrograph duration and knot interval must be positive".into()));
        }
        if self.pulses.iter().any(|&(tp, _, w)| !(tp > 0.0) || !(w > 0.0)) {
            return Err(Error::Config("pulse peak times and widths must be positive".into()));
        }
        let n = (self.duration / self.knot_interval).ceil() as usize;
        let times: Vec<f64> = (0..=n)
            .map(|k| (k as f64 * self.knot_interval).min(self.duration))
            .collect();
        let q = times.iter().map(|&t| self.discharge_at(t)).collect();
        Hydrograph::new(times, q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_catchment() -> Catchment {
        let hydro = HydrographShape::default().build().unwrap();
        build_synthetic_catchment(&CatchmentSpec::default(), hydro).unwrap()
    }

    fn calibrated() -> ControlVector {
        ControlVector {
            ks: [17.0, 45.0, 38.0, 38.0, 40.0, 40.0, 40.0],
            mu: 1.0,
            dh: [0.0; N_ZONES],
        }
    }

    #[test]
    fn default_catchment_contract() {
        let c = default_catchment();
        assert_eq!(c.grid.ncols, 100);
        assert_eq!(c.grid.nrows, 60);
        let mut segs: Vec<u8> = c
            .grid
            .segment_id
            .iter()
            .copied()
            .filter(|&s| s > 0)
            .collect();
        segs.sort_unstable();
        segs.dedup();
        assert_eq!(segs, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(c.zones.len(), 5);
        assert_eq!(c.stations.len(), 3);
        for st in &c.stations {
            assert!(c.grid.channel_mask[st.cell_index], "{} off-channel", st.name);
        }
        // upstream, middle, downstream
        let cols: Vec<usize> = c.stations.iter().map(|s| c.grid.row_col(s.cell_index).1).collect();
        assert!(cols[0] < 20 && cols[1] > 35 && cols[1] < 65 && cols[2] > 80);
        assert!(c.boundary.upstream_cells.len() > c.boundary.downstream_cells.len());
        assert!(c.boundary.upstream_cells.iter().any(|&i| c.grid.channel_mask[i]));
        assert!(c.boundary.upstream_cells.iter().any(|&i| !c.grid.channel_mask[i]));
    }

    #[test]
    fn zones_are_disjoint_floodplain_cells() {
        let c = default_catchment();
        let n = c.grid.len();
        let mut union = vec![false; n];
        let mut total = 0;
        for (a, za) in c.zones.iter().enumerate() {
            total += za.cell_count();
            for i in za.cells() {
                assert!(!c.grid.channel_mask[i]);
                assert!(!c.dyke_mask[i]);
                union[i] = true;
            }
            for zb in &c.zones[a + 1..] {
                assert_eq!(za.cells().filter(|&i| zb.cell_mask[i]).count(), 0);
            }
        }
        assert_eq!(total, union.iter().filter(|&&u| u).count());
    }

    #[test]
    fn segments_are_consecutive_along_channel() {
        let c = default_catchment();
        let g = &c.grid;
        let mut last = 0u8;
        for col in 0..g.ncols {
            let seg = (0..g.nrows)
                .map(|r| g.segment_id[g.index(r, col)])
                .find(|&s| s > 0)
                .expect("every column crosses the channel");
            assert!(seg == last || seg == last + 1, "col {col}: {last} -> {seg}");
            last = seg;
        }
        assert_eq!(last, 6);
    }

    #[test]
    fn dyke_crest_sits_above_bank_by_dyke_height() {
        let mut spec = CatchmentSpec::default();
        let hydro = HydrographShape::default().build().unwrap();
        for height in [0.0, 0.6] {
            spec.dyke_height = height;
            let c = build_synthetic_catchment(&spec, hydro.clone()).unwrap();
            let g = &c.grid;
            let length = g.ncols as f64 * g.cell_size;
            for i in (0..g.len()).filter(|&i| c.dyke_mask[i]) {
                let (_, col) = g.row_col(i);
                let x = (col as f64 + 0.5) * g.cell_size;
                let bank = spec.outlet_elevation + spec.valley_slope * (length - x);
                assert!((g.bed_elevation[i] - bank - height).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_tiny_grids() {
        let spec = CatchmentSpec {
            ncols: 19,
            nrows: 30,
            ..CatchmentSpec::default()
        };
        let hydro = HydrographShape::default().build().unwrap();
        assert!(matches!(
            build_synthetic_catchment(&spec, hydro),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn friction_from_calibrated_controls() {
        let c = default_catchment();
        let field = materialize_friction(&c.grid, &calibrated());
        for (i, &k) in field.iter().enumerate() {
            match c.grid.segment_id[i] {
                0 => assert_eq!(k, 17.0),
                1 => assert_eq!(k, 45.0),
                _ => {}
            }
        }
        let uniform = ControlVector {
            ks: [33.0; N_KS],
            ..calibrated()
        };
        assert!(materialize_friction(&c.grid, &uniform).iter().all(|&k| k == 33.0));
    }

    #[test]
    fn friction_matches_per_cell_lookup() {
        let c = default_catchment();
        let cv = ControlVector {
            ks: [11.0, 21.0, 31.0, 41.0, 51.0, 61.0, 71.0],
            ..calibrated()
        };
        let field = materialize_friction(&c.grid, &cv);
        // Oracle: classify each cell from first principles.
        for row in 0..c.grid.nrows {
            for col in 0..c.grid.ncols {
                let i = c.grid.index(row, col);
                let expected = if c.grid.channel_mask[i] {
                    cv.ks[c.grid.segment_id[i] as usize]
                } else {
                    cv.ks[0]
                };
                assert_eq!(field[i], expected);
            }
        }
        assert_eq!(materialize_friction(&c.grid, &cv), field);
    }

    #[test]
    fn rating_curve_values() {
        let rc = RatingCurve::new(100.0, 5.0, 1.0).unwrap();
        assert_eq!(rating_curve_discharge(5.0, &rc), 0.0);
        assert_eq!(rating_curve_discharge(7.0, &rc), 200.0);
        assert_eq!(rating_curve_discharge(3.0, &rc), 0.0);
        assert!(RatingCurve::new(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn hydrograph_interpolation() {
        let h = Hydrograph::new(vec![0.0, 100.0, 200.0], vec![100.0, 300.0, 50.0]).unwrap();
        assert_eq!(h.interpolate(100.0).unwrap(), 300.0);
        assert_eq!(h.interpolate(50.0).unwrap(), 200.0);
        assert!(matches!(h.interpolate(-1.0), Err(Error::MissingForcing { .. })));
        assert!(h.interpolate(200.1).is_err());
        assert!(Hydrograph::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(Hydrograph::new(vec![0.0, 1.0], vec![-1.0, 1.0]).is_err());
    }

    #[test]
    fn hydrograph_integral_is_exact_for_linear_pieces() {
        let h = Hydrograph::new(vec![0.0, 100.0, 200.0], vec![100.0, 300.0, 50.0]).unwrap();
        // 0..100: 20000, 100..200: 17500
        assert_eq!(h.integrate(0.0, 200.0).unwrap(), 37500.0);
        assert_eq!(h.integrate(50.0, 150.0).unwrap(), 0.5 * (200.0 + 300.0) * 50.0 + 0.5 * (300.0 + 175.0) * 50.0);
        let split = h.integrate(0.0, 37.0).unwrap() + h.integrate(37.0, 200.0).unwrap();
        assert!((split - 37500.0).abs() < 1e-9);
    }

    #[test]
    fn double_peak_shape() {
        let shape = HydrographShape::default();
        let h = shape.build().unwrap();
        let q = h.discharge();
        let peaks: Vec<usize> = (1..q.len() - 1)
            .filter(|&k| q[k] > q[k - 1] && q[k] >= q[k + 1])
            .collect();
        assert_eq!(peaks.len(), 2);
        assert_eq!(q[0], shape.base_flow);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rating_curve_is_monotone(a in 0.1f64..1e3, b in 0.2f64..3.0, eta0 in -10.0f64..10.0,
                                        e1 in -20.0f64..20.0, de in 0.0f64..5.0) {
                let rc = RatingCurve::new(a, eta0, b).unwrap();
                prop_assert!(rc.discharge(e1 + de) >= rc.discharge(e1));
            }

            #[test]
            fn friction_range_is_ks_set(ks in proptest::array::uniform7(1.0f64..80.0)) {
                let c = default_catchment_cached();
                let cv = ControlVector { ks, mu: 1.0, dh: [0.0; N_ZONES] };
                let field = materialize_friction(&c.grid, &cv);
                prop_assert!(field.iter().all(|k| ks.contains(k)));
                prop_assert_eq!(materialize_friction(&c.grid, &cv), field);
            }
        }

        fn default_catchment_cached() -> &'static Catchment {
            use std::sync::OnceLock;
            static C: OnceLock<Catchment> = OnceLock::new();
            C.get_or_init(default_catchment)
        }
    }
}
