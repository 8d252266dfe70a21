//! First-order finite-volume shallow-water solver.
//!
//! Each step applies, in order:
//!
//! 1. an x-sweep then a y-sweep of Rusanov interface fluxes on hydrostatically
//!    reconstructed states (well-balanced over uneven beds, positive depths),
//! 2. a semi-implicit Strickler friction update,
//! 3. an optional leakage sink (used only to build structurally different truths),
//! 4. upstream inflow from the scaled hydrograph and downstream rating-curve
//!    outflow,
//! 5. removal of draining films thinner than the drying threshold.
//!
//! The bed-slope source is folded into the interface fluxes. The `½ g h_i²`
//! pressure term that appears on both faces of a cell cancels within a sweep
//! and is never formed, so a lake at rest produces exactly zero fluxes.

use crate::domain::{materialize_friction, BoundaryConfig, ControlVector, GaugeStation, Grid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub h: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl ModelState {
    pub fn dry(n: usize, t: f64) -> Self {
        ModelState {
            h: vec![0.0; n],
            u: vec![0.0; n],
            v: vec![0.0; n],
            t,
        }
    }

    /// Still water with free surface `eta` wherever the bed lies below it.
    pub fn lake_at_rest(grid: &Grid, eta: f64) -> Self {
        let mut s = ModelState::dry(grid.len(), 0.0);
        for (h, &z) in s.h.iter_mut().zip(&grid.bed_elevation) {
            *h = (eta - z).max(0.0);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Stored water volume (m³).
    pub fn volume(&self, grid: &Grid) -> f64 {
        self.h.iter().sum::<f64>() * grid.cell_area()
    }

    pub fn free_surface(&self, grid: &Grid, idx: usize) -> f64 {
        self.h[idx] + grid.bed_elevation[idx]
    }

    pub fn check_finite(&self, grid: &Grid) -> Result<()> {
        let bad = (0..self.len()).find(|&i| {
            !(self.h[i].is_finite() && self.u[i].is_finite() && self.v[i].is_finite())
        });
        match bad {
            Some(i) => {
                let (row, col) = grid.row_col(i);
                Err(Error::Divergence {
                    row,
                    col,
                    time: self.t,
                })
            }
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub cfl_number: f64,
    pub drying_threshold: f64,
    pub gravity: f64,
    pub max_dt: f64,
    /// Cap on the velocity imposed across the inflow section.
    pub max_inflow_velocity: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            cfl_number: 0.9,
            drying_threshold: 1e-3,
            gravity: 9.81,
            max_dt: 60.0,
            max_inflow_velocity: 3.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_number > 0.0 && self.cfl_number <= 1.0) {
            return Err(Error::Config(format!("cfl_number must be in (0, 1], got {}", self.cfl_number)));
        }
        if !(self.drying_threshold > 0.0) {
            return Err(Error::Config("drying_threshold must be positive".into()));
        }
        if !(self.gravity > 0.0) || !(self.max_dt > 0.0) || !(self.max_inflow_velocity > 0.0) {
            return Err(Error::Config("gravity, max_dt and max_inflow_velocity must be positive".into()));
        }
        Ok(())
    }
}

/// Uniform sink over masked cells (m/s).
#[derive(Debug, Clone, PartialEq)]
pub struct Leakage {
    pub rate: f64,
    pub mask: Vec<bool>,
}

/// Cumulative volumes exchanged through boundaries and sinks (m³).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VolumeBudget {
    pub inflow: f64,
    pub outflow: f64,
    pub clipped: f64,
    pub leaked: f64,
}

impl VolumeBudget {
    fn add(&mut self, other: &VolumeBudget) {
        self.inflow += other.inflow;
        self.outflow += other.outflow;
        self.clipped += other.clipped;
        self.leaked += other.leaked;
    }
}

pub fn compute_stable_dt(state: &ModelState, grid: &Grid, cfg: &SolverConfig) -> f64 {
    let mut max_rate = 0.0f64;
    for i in 0..state.len() {
        let h = state.h[i];
        if h > cfg.drying_threshold {
            let speed = (state.u[i] * state.u[i] + state.v[i] * state.v[i]).sqrt();
            max_rate = max_rate.max(speed + (cfg.gravity * h).sqrt());
        }
    }
    if max_rate == 0.0 {
        return cfg.max_dt;
    }
    (cfg.cfl_number * grid.cell_size / max_rate).min(cfg.max_dt)
}

/// Strickler friction slope `|V| V_c / (K² h^{4/3})` for velocity component `vc`.
pub fn friction_slope(vc: f64, speed: f64, ks: f64, h: f64) -> f64 {
    speed * vc / (ks * ks * h * h.cbrt())
}

/// Divides a wet cell's velocity by `1 + dt g |V| / (K² h^{4/3})`.
#[inline]
pub fn apply_friction(u: &mut f64, v: &mut f64, h: f64, ks: f64, g: f64, dt: f64) {
    let speed = (*u * *u + *v * *v).sqrt();
    if speed == 0.0 || h <= 0.0 {
        return;
    }
    let factor = 1.0 + dt * g * speed / (ks * ks * h * h.cbrt());
    *u /= factor;
    *v /= factor;
}

/// Rusanov flux across one face after hydrostatic reconstruction.
///
/// `cl`/`cr` are the cells' own celerities `sqrt(g h)`. They bound the
/// reconstructed ones from above, so the wave-speed estimate stays safe
/// without two more square roots per face.
///
/// Returns `(mass, normal momentum seen by the left cell, normal momentum seen
/// by the right cell, tangential momentum)`, each with the reconstructed
/// pressure of its own side removed.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn face_flux(
    hl: f64,
    unl: f64,
    utl: f64,
    zl: f64,
    cl: f64,
    hr: f64,
    unr: f64,
    utr: f64,
    zr: f64,
    cr: f64,
    g: f64,
) -> [f64; 4] {
    if hl <= 0.0 && hr <= 0.0 {
        return [0.0; 4];
    }
    let zs = zl.max(zr);
    let hls = (hl + zl - zs).max(0.0);
    let hrs = (hr + zr - zs).max(0.0);
    if hls == 0.0 && hrs == 0.0 {
        return [0.0; 4];
    }
    let a = (unl.abs() + cl).max(unr.abs() + cr);
    let ql = hls * unl;
    let qr = hrs * unr;
    let pl = 0.5 * g * hls * hls;
    let pr = 0.5 * g * hrs * hrs;
    let mass = 0.5 * (ql + qr) - 0.5 * a * (hrs - hls);
    let mom = 0.5 * (ql * unl + pl + qr * unr + pr) - 0.5 * a * (qr - ql);
    let tan = 0.5 * (ql * utl + qr * utr) - 0.5 * a * (hrs * utr - hls * utl);
    [mass, mom - pl, mom - pr, tan]
}

/// Reusable scratch space and per-run forcing for repeated steps.
pub struct Stepper<'a> {
    grid: &'a Grid,
    boundary: &'a BoundaryConfig,
    cfg: SolverConfig,
    friction: Vec<f64>,
    inflow_scale: f64,
    leakage: Option<&'a Leakage>,
    faces: Vec<[f64; 4]>,
    cel: Vec<f64>,
    theta: Vec<f64>,
    prev_h: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        grid: &'a Grid,
        friction: Vec<f64>,
        boundary: &'a BoundaryConfig,
        cfg: SolverConfig,
        inflow_scale: f64,
        leakage: Option<&'a Leakage>,
    ) -> Self {
        let n = grid.len();
        let nfaces = (grid.ncols + 1) * grid.nrows + (grid.nrows + 1) * grid.ncols;
        Stepper {
            grid,
            boundary,
            cfg,
            friction,
            inflow_scale,
            leakage,
            faces: vec![[0.0; 4]; nfaces],
            cel: vec![0.0; n],
            theta: vec![1.0; n],
            prev_h: vec![0.0; n],
        }
    }

    /// Advances `state` by `dt` in place.
    pub fn advance(&mut self, state: &mut ModelState, dt: f64) -> Result<VolumeBudget> {
        let mut budget = VolumeBudget::default();
        self.prev_h.copy_from_slice(&state.h);
        self.sweep_x(state, dt);
        self.sweep_y(state, dt);

        let g = self.cfg.gravity;
        for i in 0..state.len() {
            let h = state.h[i];
            if h > 0.0 {
                apply_friction(&mut state.u[i], &mut state.v[i], h, self.friction[i], g, dt);
            }
        }

        let area = self.grid.cell_area();
        if let Some(leak) = self.leakage {
            let depth = leak.rate * dt;
            for (h, &m) in state.h.iter_mut().zip(&leak.mask) {
                if m && *h > 0.0 {
                    let removed = h.min(depth);
                    *h -= removed;
                    budget.leaked += removed * area;
                }
            }
        }

        self.exchange_boundaries(state, dt, &mut budget)?;

        // Films thinner than the threshold carry no momentum; draining ones vanish.
        let thr = self.cfg.drying_threshold;
        for i in 0..state.len() {
            let h = state.h[i];
            if h < thr {
                state.u[i] = 0.0;
                state.v[i] = 0.0;
                if h > 0.0 && h < self.prev_h[i] {
                    budget.clipped += h * area;
                    state.h[i] = 0.0;
                }
            }
        }

        state.t += dt;
        state.check_finite(self.grid)?;
        Ok(budget)
    }

    fn sweep_x(&mut self, st: &mut ModelState, dt: f64) {
        let (nc, nr) = (self.grid.ncols, self.grid.nrows);
        let z = &self.grid.bed_elevation;
        let g = self.cfg.gravity;
        let lam = dt / self.grid.cell_size;
        let stride = nc + 1;
        let faces = &mut self.faces[..stride * nr];
        for (c, &h) in self.cel.iter_mut().zip(&st.h) {
            *c = (g * h).sqrt();
        }

        for j in 0..nr {
            let base = j * nc;
            let row_faces = &mut faces[j * stride..(j + 1) * stride];
            let (h, u, v) = (&st.h[base..base + nc], &st.u[base..base + nc], &st.v[base..base + nc]);
            let zr = &z[base..base + nc];
            let c = &self.cel[base..base + nc];
            row_faces[0] = face_flux(h[0], -u[0], v[0], zr[0], c[0], h[0], u[0], v[0], zr[0], c[0], g);
            for i in 1..nc {
                row_faces[i] = face_flux(
                    h[i - 1],
                    u[i - 1],
                    v[i - 1],
                    zr[i - 1],
                    c[i - 1],
                    h[i],
                    u[i],
                    v[i],
                    zr[i],
                    c[i],
                    g,
                );
            }
            let l = nc - 1;
            row_faces[nc] = face_flux(h[l], u[l], v[l], zr[l], c[l], h[l], -u[l], v[l], zr[l], c[l], g);

            limit_outflow(row_faces, h, lam, &mut self.theta[base..base + nc], 1);
            for i in 0..nc {
                let (fl, fr) = (row_faces[i], row_faces[i + 1]);
                let idx = base + i;
                let h0 = st.h[idx];
                if h0 <= 0.0 && fl[0] == 0.0 && fr[0] == 0.0 && fl[2] == 0.0 && fr[1] == 0.0 {
                    continue;
                }
                let hn = (h0 - lam * (fr[0] - fl[0])).max(0.0);
                let hu = h0 * st.u[idx] - lam * (fr[1] - fl[2]);
                let hv = h0 * st.v[idx] - lam * (fr[3] - fl[3]);
                set_cell(st, idx, hn, hu, hv, self.cfg.drying_threshold);
            }
        }
    }

    fn sweep_y(&mut self, st: &mut ModelState, dt: f64) {
        let (nc, nr) = (self.grid.ncols, self.grid.nrows);
        let z = &self.grid.bed_elevation;
        let g = self.cfg.gravity;
        let lam = dt / self.grid.cell_size;
        let offset = (nc + 1) * nr;
        let faces = &mut self.faces[offset..offset + (nr + 1) * nc];
        for (c, &h) in self.cel.iter_mut().zip(&st.h) {
            *c = (g * h).sqrt();
        }
        let c = &self.cel;

        // Face row j separates cell rows j - 1 (left) and j (right); normal is +row.
        for i in 0..nc {
            faces[i] = face_flux(st.h[i], -st.v[i], st.u[i], z[i], c[i], st.h[i], st.v[i], st.u[i], z[i], c[i], g);
        }
        for j in 1..nr {
            for i in 0..nc {
                let a = (j - 1) * nc + i;
                let b = j * nc + i;
                faces[j * nc + i] = face_flux(
                    st.h[a], st.v[a], st.u[a], z[a], c[a], st.h[b], st.v[b], st.u[b], z[b], c[b], g,
                );
            }
        }
        for i in 0..nc {
            let a = (nr - 1) * nc + i;
            faces[nr * nc + i] = face_flux(st.h[a], st.v[a], st.u[a], z[a], c[a], st.h[a], -st.v[a], st.u[a], z[a], c[a], g);
        }

        limit_outflow(faces, &st.h, lam, &mut self.theta, nc);
        for idx in 0..nc * nr {
            let (fl, fr) = (faces[idx], faces[idx + nc]);
            let h0 = st.h[idx];
            if h0 <= 0.0 && fl[0] == 0.0 && fr[0] == 0.0 && fl[2] == 0.0 && fr[1] == 0.0 {
                continue;
            }
            let hn = (h0 - lam * (fr[0] - fl[0])).max(0.0);
            let hv = h0 * st.v[idx] - lam * (fr[1] - fl[2]);
            let hu = h0 * st.u[idx] - lam * (fr[3] - fl[3]);
            set_cell(st, idx, hn, hu, hv, self.cfg.drying_threshold);
        }
    }

    fn exchange_boundaries(&self, st: &mut ModelState, dt: f64, budget: &mut VolumeBudget) -> Result<()> {
        let bc = self.boundary;
        let area = self.grid.cell_area();
        let dx = self.grid.cell_size;
        let thr = self.cfg.drying_threshold;

        if !bc.upstream_cells.is_empty() {
            let hydro = &bc.inflow_hydrograph;
            let t0 = st.t;
            // Rounding in t + dt must not step off the end of the forcing.
            let t1 = if st.t + dt > hydro.end() && st.t + dt <= hydro.end() + TIME_EPS {
                hydro.end()
            } else {
                st.t + dt
            };
            let volume = self.inflow_scale * hydro.integrate(t0, t1)?;
            let add = volume / (bc.upstream_cells.len() as f64 * area);
            let mut wet_section = 0.0;
            for &i in &bc.upstream_cells {
                st.h[i] += add;
                wet_section += st.h[i] * dx;
            }
            budget.inflow += volume;
            let q_now = self.inflow_scale * hydro.interpolate(t1)?;
            let u_in = if wet_section > 0.0 {
                (q_now / wet_section).min(self.cfg.max_inflow_velocity)
            } else {
                0.0
            };
            for &i in &bc.upstream_cells {
                if st.h[i] >= thr {
                    st.u[i] = u_in;
                    st.v[i] = 0.0;
                }
            }
        }

        if !bc.downstream_cells.is_empty() {
            let z = &self.grid.bed_elevation;
            let mut stage_sum = 0.0;
            let mut stored = 0.0;
            let mut n_wet = 0usize;
            for &i in &bc.downstream_cells {
                if st.h[i] > 0.0 {
                    stage_sum += st.h[i] + z[i];
                    stored += st.h[i];
                    n_wet += 1;
                }
            }
            if n_wet > 0 {
                let eta = stage_sum / n_wet as f64;
                let rc = &bc.rating_curve;
                let outlet_area = bc.downstream_cells.len() as f64 * area;
                // Linearised implicit outflow keeps the outlet reservoir stable for any dt.
                let q = rc.discharge(eta) / (1.0 + dt * rc.slope(eta) / outlet_area);
                let available = stored * area;
                let out = (q * dt).min(available);
                if out > 0.0 {
                    let keep = 1.0 - out / available;
                    for &i in &bc.downstream_cells {
                        st.h[i] *= keep;
                    }
                    budget.outflow += out;
                }
            }
        }
        Ok(())
    }
}

#[inline(always)]
fn set_cell(st: &mut ModelState, idx: usize, h: f64, hu: f64, hv: f64, thr: f64) {
    st.h[idx] = h;
    if h >= thr {
        st.u[idx] = hu / h;
        st.v[idx] = hv / h;
    } else {
        st.u[idx] = 0.0;
        st.v[idx] = 0.0;
    }
}

/// Scales every face flux by the limiter of its donor cell so no cell can
/// export more water than it holds. Cell `idx` sits between faces `idx` and
/// `idx + step`.
fn limit_outflow(faces: &mut [[f64; 4]], h: &[f64], lam: f64, theta: &mut [f64], step: usize) {
    let ncell = h.len().min(theta.len());
    let mut any = false;
    let pairs = faces[..ncell].iter().zip(&faces[step..step + ncell]);
    for ((t, &hi), (fl, fr)) in theta[..ncell].iter_mut().zip(h).zip(pairs) {
        let export = lam * (fr[0].max(0.0) - fl[0].min(0.0));
        let limited = export > hi;
        any |= limited;
        *t = if limited { hi / export } else { 1.0 };
    }
    if !any {
        return;
    }
    for (idx, &t) in theta[..ncell].iter().enumerate() {
        if t < 1.0 {
            let (left, right) = (idx, idx + step);
            if faces[right][0] > 0.0 {
                scale(&mut faces[right], t);
            }
            if faces[left][0] < 0.0 {
                scale(&mut faces[left], t);
            }
        }
    }
}

#[inline(always)]
fn scale(f: &mut [f64; 4], s: f64) {
    for c in f.iter_mut() {
        *c *= s;
    }
}

/// One solver step with the hydrograph taken at face value.
pub fn step(
    state: &ModelState,
    grid: &Grid,
    friction_field: &[f64],
    bc: &BoundaryConfig,
    cfg: &SolverConfig,
    dt: f64,
) -> Result<ModelState> {
    let mut stepper = Stepper::new(grid, friction_field.to_vec(), bc, *cfg, 1.0, None);
    let mut next = state.clone();
    stepper.advance(&mut next, dt)?;
    Ok(next)
}

/// What to record while integrating a window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordPlan {
    /// Record every station's free surface at multiples of its period.
    pub gauges: bool,
    pub snapshot_times: Vec<f64>,
    /// Also return a copy of the full state at this time.
    pub handoff_time: Option<f64>,
}

impl RecordPlan {
    pub fn none() -> Self {
        RecordPlan::default()
    }
}

/// Free-surface elevation per station, sampled on a shared time axis.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaugeSeries {
    pub stations: Vec<String>,
    pub times: Vec<f64>,
    /// `eta[station][k]` at `times[k]`.
    pub eta: Vec<Vec<f64>>,
}

impl GaugeSeries {
    pub fn new(stations: Vec<String>) -> Self {
        let n = stations.len();
        GaugeSeries {
            stations,
            times: Vec::new(),
            eta: vec![Vec::new(); n],
        }
    }

    pub fn station_index(&self, name: &str) -> Option<usize> {
        self.stations.iter().position(|s| s == name)
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        let k = self.times.partition_point(|&x| x < t - TIME_EPS);
        (k < self.times.len() && (self.times[k] - t).abs() <= TIME_EPS).then_some(k)
    }

    pub fn value(&self, station: &str, t: f64) -> Option<f64> {
        Some(self.eta[self.station_index(station)?][self.time_index(t)?])
    }

    /// Keeps samples with `lo <= t < hi` (or `<= hi` when `inclusive`).
    pub fn slice(&self, lo: f64, hi: f64, inclusive: bool) -> GaugeSeries {
        let keep: Vec<usize> = (0..self.times.len())
            .filter(|&k| {
                let t = self.times[k];
                t >= lo - TIME_EPS && (t < hi - TIME_EPS || (inclusive && t <= hi + TIME_EPS))
            })
            .collect();
        GaugeSeries {
            stations: self.stations.clone(),
            times: keep.iter().map(|&k| self.times[k]).collect(),
            eta: self.eta.iter().map(|s| keep.iter().map(|&k| s[k]).collect()).collect(),
        }
    }

    pub fn extend(&mut self, other: &GaugeSeries) {
        self.times.extend_from_slice(&other.times);
        for (a, b) in self.eta.iter_mut().zip(&other.eta) {
            a.extend_from_slice(b);
        }
    }
}

/// Tolerance when matching recorded and requested times (s).
pub const TIME_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthSnapshot {
    pub time: f64,
    pub depth: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct WindowRun {
    pub state: ModelState,
    pub gauges: GaugeSeries,
    pub snapshots: Vec<DepthSnapshot>,
    pub handoff: Option<ModelState>,
    pub budget: VolumeBudget,
}

/// Forward model for one catchment: shared read-only by every member.
#[derive(Debug, Clone)]
pub struct Model<'a> {
    pub grid: &'a Grid,
    pub boundary: &'a BoundaryConfig,
    pub stations: &'a [GaugeStation],
    pub config: SolverConfig,
    pub leakage: Option<Leakage>,
}

impl<'a> Model<'a> {
    pub fn new(
        grid: &'a Grid,
        boundary: &'a BoundaryConfig,
        stations: &'a [GaugeStation],
        config: SolverConfig,
    ) -> Self {
        Model {
            grid,
            boundary,
            stations,
            config,
            leakage: None,
        }
    }

    /// Integrates from `t0` to `t1` under `cv`'s friction and inflow multiplier.
    /// `cv.dh` is not applied here.
    pub fn run_window(
        &self,
        mut state: ModelState,
        cv: &ControlVector,
        t0: f64,
        t1: f64,
        plan: &RecordPlan,
    ) -> Result<WindowRun> {
        if !(t1 > t0) {
            return Err(Error::InvalidInput(format!("window [{t0}, {t1}] is empty")));
        }
        cv.validate()?;
        if state.len() != self.grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} cells, grid {}",
                state.len(),
                self.grid.len()
            )));
        }
        state.t = t0;

        let events = self.event_times(t0, t1, plan);
        let mut gauges = GaugeSeries::new(self.stations.iter().map(|s| s.name.clone()).collect());
        let mut snapshots = Vec::new();
        let mut handoff = None;
        let mut budget = VolumeBudget::default();
        let period = self.stations.iter().map(|s| s.obs_period).fold(f64::INFINITY, f64::min);

        let friction = materialize_friction(self.grid, cv);
        let mut stepper = Stepper::new(
            self.grid,
            friction,
            self.boundary,
            self.config,
            cv.mu,
            self.leakage.as_ref(),
        );

        let record = |state: &ModelState, t: f64, gauges: &mut GaugeSeries, snapshots: &mut Vec<DepthSnapshot>, handoff: &mut Option<ModelState>| {
            if plan.gauges && is_multiple(t, period) {
                gauges.times.push(t);
                for (k, st) in self.stations.iter().enumerate() {
                    gauges.eta[k].push(state.free_surface(self.grid, st.cell_index));
                }
            }
            if plan.snapshot_times.iter().any(|&s| (s - t).abs() <= TIME_EPS) {
                snapshots.push(DepthSnapshot {
                    time: t,
                    depth: state.h.clone(),
                });
            }
            if plan.handoff_time.is_some_and(|s| (s - t).abs() <= TIME_EPS) {
                *handoff = Some(state.clone());
            }
        };

        record(&state, t0, &mut gauges, &mut snapshots, &mut handoff);
        for &target in events.iter().filter(|&&e| e > t0 + TIME_EPS) {
            while state.t < target - TIME_EPS {
                let stable = compute_stable_dt(&state, self.grid, &self.config);
                let remaining = target - state.t;
                let dt = if remaining <= stable {
                    remaining
                } else if remaining < 2.0 * stable {
                    0.5 * remaining
                } else {
                    stable
                };
                let b = stepper.advance(&mut state, dt)?;
                budget.add(&b);
                if (state.t - target).abs() <= TIME_EPS || dt == remaining {
                    state.t = target;
                }
            }
            record(&state, target, &mut gauges, &mut snapshots, &mut handoff);
        }

        Ok(WindowRun {
            state,
            gauges,
            snapshots,
            handoff,
            budget,
        })
    }

    /// Sorted times the integrator must land on exactly.
    fn event_times(&self, t0: f64, t1: f64, plan: &RecordPlan) -> Vec<f64> {
        let mut ev = vec![t1];
        if plan.gauges {
            let period = self.stations.iter().map(|s| s.obs_period).fold(f64::INFINITY, f64::min);
            if period.is_finite() {
                let mut k = (t0 / period).ceil() as i64;
                loop {
                    let t = k as f64 * period;
                    if t > t1 + TIME_EPS {
                        break;
                    }
                    ev.push(t);
                    k += 1;
                }
            }
        }
        ev.extend(plan.snapshot_times.iter().copied().filter(|&t| t >= t0 - TIME_EPS && t <= t1 + TIME_EPS));
        if let Some(t) = plan.handoff_time {
            if t >= t0 - TIME_EPS && t <= t1 + TIME_EPS {
                ev.push(t);
            }
        }
        ev.sort_by(f64::total_cmp);
        ev.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS);
        ev
    }
}

fn is_multiple(t: f64, period: f64) -> bool {
    if !period.is_finite() || period <= 0.0 {
        return false;
    }
    let k = (t / period).round();
    (t - k * period).abs() <= TIME_EPS
}
