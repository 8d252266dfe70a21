#![allow(dead_code)]

use std::path::{Path, PathBuf};

use floodda::config::ExperimentConfig;

const HOUR: f64 = 3600.0;

/// A scaled-down catchment and a 12 h event: a full pipeline runs in seconds.
pub fn small_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    let cs = &mut c.catchment;
    cs.ncols = 40;
    cs.nrows = 30;
    cs.zone_width = 5;
    cs.dyke_start_col = 8;
    cs.meander_amplitude = 2.0;
    cs.meander_wavelength = 40.0;
    cs.inflow_half_width = 3;
    c.hydrograph.base_flow = 40.0;
    c.hydrograph.pulses = vec![(4.0 * HOUR, 250.0, 0.25), (9.0 * HOUR, 200.0, 0.15)];
    c.hydrograph.duration = 12.0 * HOUR;
    c.spinup = 4.0 * HOUR;
    c.overpass_times = [3.0, 5.0, 8.0, 10.0].iter().map(|h| h * HOUR).collect();
    c.window_length = 4.0 * HOUR;
    c.window_slide = 3.0 * HOUR;
    c.members = 6;
    c.out_dir = out.to_path_buf();
    c.validate().unwrap();
    c
}

/// Every regular file below `root`, as (relative path, bytes), sorted.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
