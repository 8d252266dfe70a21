//! Pipeline stages behind the command-line tool. Each stage reads the
//! artifacts of the previous ones from the output directory:
//!
//! ```text
//! <out>/truth/        gauge_<station>.csv, depth_t<s>.asc, manifest.csv
//! <out>/obs/          gauge_obs.csv, wsr_obs.csv, extent_t<s>.asc
//! <out>/runs/<mode>/  controls.csv, innovations.csv, gauge_<station>.csv, depth_t<s>.asc
//! <out>/report/       control_series.csv, rmse.csv, wsr_misfit.csv, scores.csv,
//!                     contingency_<mode>_t<s>.asc
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::ascii_grid::AsciiGrid;
use crate::config::{ExperimentConfig, Mode};
use crate::domain::{build_synthetic_catchment, Catchment, ControlVector, Grid, Hydrograph, N_ZONES};
use crate::enkf::{
    draw_prior_ensemble, read_control_diagnostics, write_control_diagnostics, write_innovation_diagnostics,
    Assimilator, ControlStat, CycleDiagnostics, Ensemble, ALL_CONTROLS,
};
use crate::error::{Error, Result};
use crate::metrics::{contingency, csi, kappa, rmse, wsr_misfit_series, ContingencyCounts, WsrMisfit};
use crate::observation::{
    extent_file_name, synthesize_observations, ObservationSet, Trajectory, GAUGE_OBS_FILE, WSR_OBS_FILE,
};
use crate::swe::{DepthSnapshot, GaugeSeries, Leakage, Model, ModelState, RecordPlan, TIME_EPS};
use crate::table;

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn truth(&self) -> PathBuf {
        self.root.join("truth")
    }

    pub fn obs(&self) -> PathBuf {
        self.root.join("obs")
    }

    pub fn run(&self, mode: Mode) -> PathBuf {
        self.root.join("runs").join(mode.as_str())
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

pub fn gauge_file_name(station: &str) -> String {
    format!("gauge_{station}.csv")
}

pub fn depth_file_name(time: f64) -> String {
    format!("depth_t{time}.asc")
}

pub const CONTROLS_FILE: &str = "controls.csv";
pub const INNOVATIONS_FILE: &str = "innovations.csv";
const MANIFEST_FILE: &str = "manifest.csv";

/// The catchment and models shared by every stage.
pub struct Setup {
    pub config: ExperimentConfig,
    pub catchment: Catchment,
}

impl Setup {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let catchment = build_synthetic_catchment(&config.catchment, config.hydrograph.build()?)?;
        Ok(Setup {
            config: config.clone(),
            catchment,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.catchment.grid
    }

    pub fn station_names(&self) -> Vec<String> {
        self.catchment.stations.iter().map(|s| s.name.clone()).collect()
    }

    pub fn event_end(&self) -> f64 {
        self.config.hydrograph.duration
    }

    pub fn model(&self) -> Model<'_> {
        let c = &self.catchment;
        Model::new(&c.grid, &c.boundary, &c.stations, self.config.solver)
    }

    /// Uniform sink over every floodplain zone, present only in the truth.
    pub fn truth_leakage(&self) -> Option<Leakage> {
        let rate = self.config.truth.leakage_rate;
        if rate == 0.0 {
            return None;
        }
        let mut mask = vec![false; self.grid().len()];
        for z in &self.catchment.zones {
            for i in z.cells() {
                mask[i] = true;
            }
        }
        Some(Leakage { rate, mask })
    }

    pub fn truth_controls(&self) -> ControlVector {
        ControlVector {
            ks: self.config.truth.ks,
            mu: self.config.truth.mu,
            dh: [0.0; N_ZONES],
        }
    }

    /// Forecast controls at the prior mean, without state corrections.
    pub fn prior_mean_controls(&self) -> ControlVector {
        ControlVector {
            dh: [0.0; N_ZONES],
            ..self.config.prior.mean()
        }
    }

    /// Steady base flow from a dry bed up to t = 0.
    pub fn spin_up(&self, cv: &ControlVector, leakage: Option<Leakage>) -> Result<ModelState> {
        let n = self.grid().len();
        let spinup = self.config.spinup;
        if spinup <= 0.0 {
            return Ok(ModelState::dry(n, 0.0));
        }
        let q0 = self.config.hydrograph.discharge_at(0.0);
        let boundary = self
            .catchment
            .boundary
            .with_hydrograph(Hydrograph::constant(q0, -spinup, 0.0)?);
        let c = &self.catchment;
        let mut model = Model::new(&c.grid, &boundary, &c.stations, self.config.solver);
        model.leakage = leakage;
        Ok(model
            .run_window(ModelState::dry(n, -spinup), cv, -spinup, 0.0, &RecordPlan::none())?
            .state)
    }

    fn event_plan(&self) -> RecordPlan {
        RecordPlan {
            gauges: true,
            snapshot_times: self.config.overpass_times.clone(),
            handoff_time: None,
        }
    }
}

pub fn write_trajectory(dir: &Path, traj: &Trajectory, grid: &Grid) -> Result<()> {
    fs::create_dir_all(dir)?;
    let g = &traj.gauges;
    for (s, station) in g.stations.iter().enumerate() {
        let rows = g.times.iter().zip(&g.eta[s]).map(|(t, e)| vec![t.to_string(), e.to_string()]);
        table::write(&dir.join(gauge_file_name(station)), &["time_s", "eta_m"], rows)?;
    }
    for snap in &traj.snapshots {
        AsciiGrid::new(grid.ncols, grid.nrows, grid.cell_size, snap.depth.clone())?
            .write(&dir.join(depth_file_name(snap.time)))?;
    }
    Ok(())
}

fn trajectory_files(dir: &Path, stations: &[String], times: &[f64]) -> Vec<PathBuf> {
    stations
        .iter()
        .map(|s| dir.join(gauge_file_name(s)))
        .chain(times.iter().map(|&t| dir.join(depth_file_name(t))))
        .collect()
}

pub fn read_trajectory(dir: &Path, stations: &[String], snapshot_times: &[f64], grid: &Grid) -> Result<Trajectory> {
    let mut gauges = GaugeSeries::new(stations.to_vec());
    for (s, station) in stations.iter().enumerate() {
        let path = dir.join(gauge_file_name(station));
        let mut times = Vec::new();
        for rec in table::read(&path, &["time_s", "eta_m"])? {
            times.push(table::field::<f64>(&path, &rec, 0)?);
            gauges.eta[s].push(table::field(&path, &rec, 1)?);
        }
        if s == 0 {
            gauges.times = times;
        } else if times != gauges.times {
            return Err(Error::parse(&path, "time axis differs from the other stations"));
        }
    }
    let mut snapshots = Vec::with_capacity(snapshot_times.len());
    for &t in snapshot_times {
        let path = dir.join(depth_file_name(t));
        let ascii = AsciiGrid::read(&path)?;
        if ascii.ncols != grid.ncols || ascii.nrows != grid.nrows {
            return Err(Error::parse(&path, format!("expected a {}x{} grid", grid.ncols, grid.nrows)));
        }
        snapshots.push(DepthSnapshot {
            time: t,
            depth: ascii.values,
        });
    }
    Ok(Trajectory { gauges, snapshots })
}

/// Runs the synthetic truth and writes it under `truth/`.
pub fn cmd_truth(setup: &Setup, layout: &Layout) -> Result<Trajectory> {
    let cv = setup.truth_controls();
    let state = setup.spin_up(&cv, setup.truth_leakage())?;
    let mut model = setup.model();
    model.leakage = setup.truth_leakage();
    let run = model.run_window(state, &cv, 0.0, setup.event_end(), &setup.event_plan())?;
    let traj = Trajectory {
        gauges: run.gauges,
        snapshots: run.snapshots,
    };
    let dir = layout.truth();
    write_trajectory(&dir, &traj, setup.grid())?;

    let t = &setup.config.truth;
    let mut rows: Vec<Vec<String>> = ALL_CONTROLS
        .names()
        .into_iter()
        .zip(ALL_CONTROLS.flatten(&cv))
        .filter(|(name, _)| !name.starts_with("dh"))
        .map(|(name, v)| vec![name, v.to_string()])
        .collect();
    rows.push(vec!["leakage_rate".into(), t.leakage_rate.to_string()]);
    rows.push(vec!["spinup_s".into(), setup.config.spinup.to_string()]);
    rows.push(vec!["event_end_s".into(), setup.event_end().to_string()]);
    rows.push(vec!["volume_leaked_m3".into(), run.budget.leaked.to_string()]);
    for f in trajectory_files(&dir, &setup.station_names(), &setup.config.overpass_times) {
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        rows.push(vec!["file".into(), name]);
    }
    table::write(&dir.join(MANIFEST_FILE), &["key", "value"], rows)?;
    Ok(traj)
}

pub fn read_truth(setup: &Setup, layout: &Layout) -> Result<Trajectory> {
    let dir = layout.truth();
    let missing = missing(trajectory_files(&dir, &setup.station_names(), &setup.config.overpass_times));
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    read_trajectory(&dir, &setup.station_names(), &setup.config.overpass_times, setup.grid())
}

/// Perturbs the stored truth into gauge, WSR and extent observations under `obs/`.
pub fn cmd_synthesize(setup: &Setup, layout: &Layout) -> Result<ObservationSet> {
    let truth = read_truth(setup, layout)?;
    let obs = synthesize_observations(
        &truth,
        &setup.catchment.zones,
        &setup.config.schedule(),
        setup.config.obs_seed,
        None,
    )?;
    obs.write_dir(&layout.obs(), setup.grid())?;
    Ok(obs)
}

fn obs_files(setup: &Setup, layout: &Layout) -> Vec<PathBuf> {
    let dir = layout.obs();
    [dir.join(GAUGE_OBS_FILE), dir.join(WSR_OBS_FILE)]
        .into_iter()
        .chain(setup.config.overpass_times.iter().map(|&t| dir.join(extent_file_name(t))))
        .collect()
}

pub fn read_observations(setup: &Setup, layout: &Layout) -> Result<ObservationSet> {
    let missing = missing(obs_files(setup, layout));
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    ObservationSet::read_dir(&layout.obs(), setup.grid())
}

/// Result of one experiment run, as written under `runs/<mode>/`.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub mode: Mode,
    pub diagnostics: Vec<CycleDiagnostics>,
    /// Ensemble-mean gauges and depth snapshots (the single member for FR).
    pub trajectory: Trajectory,
}

pub fn cmd_run(setup: &Setup, layout: &Layout, mode: Mode) -> Result<RunOutput> {
    let cfg = &setup.config;
    let (diagnostics, trajectory) = if mode == Mode::Fr {
        free_run(setup)?
    } else {
        let obs = read_observations(setup, layout)?;
        let mut controls = draw_prior_ensemble(&cfg.prior, cfg.members, cfg.seed)?;
        if !mode.active().dh {
            for c in &mut controls {
                c.dh = [0.0; N_ZONES];
            }
        }
        let state = setup.spin_up(&setup.prior_mean_controls(), None)?;
        let mut ens = Ensemble::new(controls, state, cfg.seed)?;
        let model = setup.model();
        let assim = Assimilator {
            model: &model,
            zones: &setup.catchment.zones,
            prior: &cfg.prior,
            observations: &obs,
            cycle: cfg.cycle(mode),
            output_times: cfg.overpass_times.clone(),
            event_end: setup.event_end(),
        };
        assim.run(&mut ens, 0.0)?
    };
    let dir = layout.run(mode);
    write_trajectory(&dir, &trajectory, setup.grid())?;
    write_control_diagnostics(&dir.join(CONTROLS_FILE), &diagnostics)?;
    write_innovation_diagnostics(&dir.join(INNOVATIONS_FILE), &diagnostics)?;
    Ok(RunOutput {
        mode,
        diagnostics,
        trajectory,
    })
}

/// One member at the prior mean; its control record shows no update.
fn free_run(setup: &Setup) -> Result<(Vec<CycleDiagnostics>, Trajectory)> {
    let cv = setup.prior_mean_controls();
    let state = setup.spin_up(&cv, None)?;
    let run = setup
        .model()
        .run_window(state, &cv, 0.0, setup.event_end(), &setup.event_plan())?;
    let controls = ALL_CONTROLS
        .names()
        .into_iter()
        .zip(ALL_CONTROLS.flatten(&cv))
        .map(|(variable, v)| ControlStat {
            variable,
            prior_mean: v,
            prior_std: 0.0,
            post_mean: v,
            post_std: 0.0,
        })
        .collect();
    let diag = CycleDiagnostics {
        window_index: 0,
        t0: 0.0,
        t1: setup.event_end(),
        n_gauge: 0,
        n_wsr: 0,
        analysed: false,
        controls,
        gauge_innovation_mean: f64::NAN,
        gauge_innovation_rms: f64::NAN,
        wsr_innovation_mean: f64::NAN,
        wsr_innovation_rms: f64::NAN,
    };
    Ok((
        vec![diag],
        Trajectory {
            gauges: run.gauges,
            snapshots: run.snapshots,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSeriesRow {
    pub mode: Mode,
    pub window_index: usize,
    pub stat: ControlStat,
    /// Known for friction and inflow multiplier, not for state corrections.
    pub truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseRow {
    pub mode: Mode,
    pub station: String,
    pub samples: usize,
    pub vs_obs: f64,
    pub vs_truth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Domain,
    Zones,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Domain => "domain",
            Region::Zones => "zones",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub mode: Mode,
    pub region: Region,
    pub time: f64,
    pub counts: ContingencyCounts,
    /// `None` where the score is undefined for the counts.
    pub csi: Option<f64>,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub controls: Vec<ControlSeriesRow>,
    pub rmse: Vec<RmseRow>,
    pub wsr: Vec<(Mode, WsrMisfit)>,
    pub scores: Vec<ScoreRow>,
}

impl Report {
    pub fn rmse_of(&self, mode: Mode, station: &str) -> Option<&RmseRow> {
        self.rmse.iter().find(|r| r.mode == mode && r.station == station)
    }

    /// Mean CSI over overpass times where it is defined.
    pub fn mean_csi(&self, mode: Mode, region: Region) -> Option<f64> {
        let v: Vec<f64> = self
            .scores
            .iter()
            .filter(|s| s.mode == mode && s.region == region)
            .filter_map(|s| s.csi)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean |WSR misfit| of one zone over all overpass times.
    pub fn mean_abs_wsr_misfit(&self, mode: Mode, zone_id: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .wsr
            .iter()
            .filter(|(m, w)| *m == mode && w.zone_id == zone_id)
            .map(|(_, w)| w.misfit.abs())
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn missing(paths: Vec<PathBuf>) -> Vec<PathBuf> {
    paths.into_iter().filter(|p| !p.exists()).collect()
}

/// Modes with a run directory on disk.
pub fn available_modes(layout: &Layout) -> Vec<Mode> {
    Mode::ALL.into_iter().filter(|&m| layout.run(m).is_dir()).collect()
}

/// Compares runs against the truth and the observations and writes the
/// report tables under `report/`. With `modes` empty, every run on disk is used.
pub fn cmd_verify(setup: &Setup, layout: &Layout, modes: &[Mode]) -> Result<Report> {
    let cfg = &setup.config;
    let stations = setup.station_names();
    let modes = if modes.is_empty() {
        available_modes(layout)
    } else {
        modes.to_vec()
    };

    let mut expected = trajectory_files(&layout.truth(), &stations, &cfg.overpass_times);
    expected.extend(obs_files(setup, layout));
    if modes.is_empty() {
        expected.push(layout.root.join("runs"));
    }
    for &m in &modes {
        let dir = layout.run(m);
        expected.push(dir.join(CONTROLS_FILE));
        expected.extend(trajectory_files(&dir, &stations, &cfg.overpass_times));
    }
    let absent = missing(expected);
    if !absent.is_empty() {
        return Err(Error::MissingArtifacts(absent));
    }

    let truth = read_truth(setup, layout)?;
    let obs = read_observations(setup, layout)?;
    let truth_cv = ALL_CONTROLS.flatten(&setup.truth_controls());
    let names = ALL_CONTROLS.names();
    let zone_cells: Vec<bool> = {
        let mut m = vec![false; setup.grid().len()];
        for z in &setup.catchment.zones {
            for i in z.cells() {
                m[i] = true;
            }
        }
        m
    };

    let report_dir = layout.report();
    fs::create_dir_all(&report_dir)?;
    let mut report = Report::default();
    for &mode in &modes {
        let dir = layout.run(mode);
        for (window_index, stat) in read_control_diagnostics(&dir.join(CONTROLS_FILE))? {
            let truth = names
                .iter()
                .position(|n| *n == stat.variable && !n.starts_with("dh"))
                .map(|k| truth_cv[k]);
            report.controls.push(ControlSeriesRow {
                mode,
                window_index,
                stat,
                truth,
            });
        }

        let run = read_trajectory(&dir, &stations, &cfg.overpass_times, setup.grid())?;
        for (s, station) in stations.iter().enumerate() {
            report.rmse.push(gauge_rmse(mode, station, s, &run.gauges, &truth.gauges, &obs)?);
        }

        for w in wsr_misfit_series(&run, &obs.wsr, &setup.catchment.zones, cfg.wet_threshold)? {
            report.wsr.push((mode, w));
        }

        for map in &obs.extents {
            let snap = run.snapshot(map.time).ok_or_else(|| {
                Error::MissingDiagnostic(format!("{} depth at t = {} s", mode.as_str(), map.time))
            })?;
            let wet: Vec<bool> = snap.depth.iter().map(|&h| h >= cfg.wet_threshold).collect();
            let (cmap, counts) = contingency(&wet, map)?;
            cmap.to_ascii(setup.grid())?
                .write(&report_dir.join(format!("contingency_{}_t{}.asc", mode.as_str(), map.time)))?;
            for (region, counts) in [(Region::Domain, counts), (Region::Zones, cmap.counts_within(&zone_cells))] {
                report.scores.push(ScoreRow {
                    mode,
                    region,
                    time: map.time,
                    counts,
                    csi: csi(&counts).ok(),
                    kappa: kappa(&counts).ok(),
                });
            }
        }
    }
    write_report(&report_dir, &report)?;
    Ok(report)
}

/// RMSE at one station over the run's samples that fall on observation times.
fn gauge_rmse(
    mode: Mode,
    station: &str,
    s: usize,
    run: &GaugeSeries,
    truth: &GaugeSeries,
    obs: &ObservationSet,
) -> Result<RmseRow> {
    let mut sim = Vec::new();
    let mut o = Vec::new();
    let mut tr = Vec::new();
    for g in obs.gauges.iter().filter(|g| g.station == station && g.time > TIME_EPS) {
        let Some(k) = run.time_index(g.time) else { continue };
        let Some(j) = truth.time_index(g.time) else { continue };
        sim.push(run.eta[s][k]);
        o.push(g.eta_obs);
        tr.push(truth.eta[s][j]);
    }
    if sim.is_empty() {
        return Err(Error::MissingDiagnostic(format!(
            "{} gauge {station} shares no times with the observations",
            mode.as_str()
        )));
    }
    Ok(RmseRow {
        mode,
        station: station.to_string(),
        samples: sim.len(),
        vs_obs: rmse(&sim, &o)?,
        vs_truth: rmse(&sim, &tr)?,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

fn write_report(dir: &Path, r: &Report) -> Result<()> {
    table::write(
        &dir.join("control_series.csv"),
        &["mode", "window_index", "variable", "prior_mean", "prior_std", "post_mean", "post_std", "truth"],
        r.controls.iter().map(|c| {
            vec![
                c.mode.as_str().into(),
                c.window_index.to_string(),
                c.stat.variable.clone(),
                c.stat.prior_mean.to_string(),
                c.stat.prior_std.to_string(),
                c.stat.post_mean.to_string(),
                c.stat.post_std.to_string(),
                c.truth.map(|t| t.to_string()).unwrap_or_default(),
            ]
        }),
    )?;
    table::write(
        &dir.join("rmse.csv"),
        &["mode", "station", "samples", "rmse_vs_obs_m", "rmse_vs_truth_m"],
        r.rmse.iter().map(|x| {
            vec![
                x.mode.as_str().into(),
                x.station.clone(),
                x.samples.to_string(),
                x.vs_obs.to_string(),
                x.vs_truth.to_string(),
            ]
        }),
    )?;
    table::write(
        &dir.join("wsr_misfit.csv"),
        &["mode", "zone", "time_s", "observed", "simulated", "misfit"],
        r.wsr.iter().map(|(m, w)| {
            vec![
                m.as_str().into(),
                w.zone_id.to_string(),
                w.time.to_string(),
                w.observed.to_string(),
                w.simulated.to_string(),
                w.misfit.to_string(),
            ]
        }),
    )?;
    table::write(
        &dir.join("scores.csv"),
        &["mode", "region", "time_s", "csi", "kappa", "hits", "misses", "false_alarms", "correct_negatives"],
        r.scores.iter().map(|s| {
            vec![
                s.mode.as_str().into(),
                s.region.as_str().into(),
                s.time.to_string(),
                opt(s.csi),
                opt(s.kappa),
                s.counts.hits.to_string(),
                s.counts.misses.to_string(),
                s.counts.false_alarms.to_string(),
                s.counts.correct_negatives.to_string(),
            ]
        }),
    )?;
    Ok(())
}
