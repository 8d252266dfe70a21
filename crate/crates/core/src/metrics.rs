//! Verification scores: gauge RMSE, contingency maps, CSI, Cohen's kappa and
//! WSR misfits.

use crate::ascii_grid::{AsciiGrid, NODATA};
use crate::domain::{FloodplainZone, Grid};
use crate::error::{Error, Result};
use crate::observation::{wsr_of_depth, FloodExtentMap, Trajectory, WsrObservation};

pub fn rmse(sim: &[f64], obs: &[f64]) -> Result<f64> {
    if sim.len() != obs.len() {
        return Err(Error::DimensionMismatch(format!("{} simulated vs {} observed values", sim.len(), obs.len())));
    }
    if sim.is_empty() {
        return Err(Error::InvalidInput("RMSE of an empty series".into()));
    }
    let ss: f64 = sim.iter().zip(obs).map(|(s, o)| (s - o) * (s - o)).sum();
    Ok((ss / sim.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContingencyCounts {
    pub hits: u64,
    pub misses: u64,
    pub false_alarms: u64,
    pub correct_negatives: u64,
}

impl ContingencyCounts {
    pub fn total(&self) -> u64 {
        self.hits + self.misses + self.false_alarms + self.correct_negatives
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    CorrectNegative,
    Hit,
    Miss,
    FalseAlarm,
    Invalid,
}

impl Category {
    /// Grid code: 0 correct negative, 1 hit, 2 miss, 3 false alarm, nodata invalid.
    pub fn code(self) -> f64 {
        match self {
            Category::CorrectNegative => 0.0,
            Category::Hit => 1.0,
            Category::Miss => 2.0,
            Category::FalseAlarm => 3.0,
            Category::Invalid => NODATA,
        }
    }

    pub fn from_code(code: f64) -> Option<Self> {
        Some(match code {
            0.0 => Category::CorrectNegative,
            1.0 => Category::Hit,
            2.0 => Category::Miss,
            3.0 => Category::FalseAlarm,
            NODATA => Category::Invalid,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyMap {
    pub cells: Vec<Category>,
}

impl ContingencyMap {
    pub fn counts(&self) -> ContingencyCounts {
        self.counts_where(|_| true)
    }

    /// Counts restricted to cells where `region` is true.
    pub fn counts_within(&self, region: &[bool]) -> ContingencyCounts {
        self.counts_where(|i| region[i])
    }

    fn counts_where(&self, keep: impl Fn(usize) -> bool) -> ContingencyCounts {
        let mut c = ContingencyCounts::default();
        for (i, cat) in self.cells.iter().enumerate() {
            if !keep(i) {
                continue;
            }
            match cat {
                Category::Hit => c.hits += 1,
                Category::Miss => c.misses += 1,
                Category::FalseAlarm => c.false_alarms += 1,
                Category::CorrectNegative => c.correct_negatives += 1,
                Category::Invalid => {}
            }
        }
        c
    }

    pub fn to_ascii(&self, grid: &Grid) -> Result<AsciiGrid> {
        AsciiGrid::new(grid.ncols, grid.nrows, grid.cell_size, self.cells.iter().map(|c| c.code()).collect())
    }

    pub fn from_ascii(ascii: &AsciiGrid) -> Result<Self> {
        let cells = ascii
            .values
            .iter()
            .map(|&v| {
                Category::from_code(v).ok_or_else(|| Error::InvalidInput(format!("{v} is not a contingency code")))
            })
            .collect::<Result<_>>()?;
        Ok(ContingencyMap { cells })
    }
}

pub fn contingency(sim_wet: &[bool], obs: &FloodExtentMap) -> Result<(ContingencyMap, ContingencyCounts)> {
    if sim_wet.len() != obs.wet_mask.len() {
        return Err(Error::DimensionMismatch(format!(
            "simulated mask has {} cells, observed map {}",
            sim_wet.len(),
            obs.wet_mask.len()
        )));
    }
    let cells = sim_wet
        .iter()
        .zip(obs.wet_mask.iter().zip(&obs.valid_mask))
        .map(|(&s, (&o, &valid))| match (valid, s, o) {
            (false, _, _) => Category::Invalid,
            (true, true, true) => Category::Hit,
            (true, false, true) => Category::Miss,
            (true, true, false) => Category::FalseAlarm,
            (true, false, false) => Category::CorrectNegative,
        })
        .collect();
    let map = ContingencyMap { cells };
    let counts = map.counts();
    Ok((map, counts))
}

/// Critical success index `tp / (tp + fn + fp)`.
pub fn csi(c: &ContingencyCounts) -> Result<f64> {
    let denom = c.hits + c.misses + c.false_alarms;
    if denom == 0 {
        return Err(Error::UndefinedScore("CSI"));
    }
    Ok(c.hits as f64 / denom as f64)
}

/// Cohen's kappa: agreement beyond chance over both classes.
pub fn kappa(c: &ContingencyCounts) -> Result<f64> {
    let total = c.total();
    if total == 0 {
        return Err(Error::UndefinedScore("kappa"));
    }
    let n = total as f64;
    let (tp, fnn, fp, tn) = (c.hits as f64, c.misses as f64, c.false_alarms as f64, c.correct_negatives as f64);
    let po = (tp + tn) / n;
    let pe = ((tp + fp) * (tp + fnn) + (fnn + tn) * (fp + tn)) / (n * n);
    if pe == 1.0 {
        return Err(Error::UndefinedScore("kappa"));
    }
    Ok((po - pe) / (1.0 - pe))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WsrMisfit {
    pub zone_id: usize,
    pub time: f64,
    pub observed: f64,
    pub simulated: f64,
    /// Observed minus simulated.
    pub misfit: f64,
}

/// Misfits ordered by zone, then time.
pub fn wsr_misfit_series(
    traj: &Trajectory,
    obs: &[WsrObservation],
    zones: &[FloodplainZone],
    wet_threshold: f64,
) -> Result<Vec<WsrMisfit>> {
    let mut sorted: Vec<&WsrObservation> = obs.iter().collect();
    sorted.sort_by(|a, b| a.zone_id.cmp(&b.zone_id).then(a.time.total_cmp(&b.time)));
    sorted
        .into_iter()
        .map(|o| {
            let snap = traj.snapshot(o.time).ok_or_else(|| {
                Error::MissingDiagnostic(format!("depth snapshot at t = {} s for zone {}", o.time, o.zone_id))
            })?;
            let zone = zones
                .iter()
                .find(|z| z.zone_id == o.zone_id)
                .ok_or_else(|| Error::InvalidInput(format!("unknown zone {}", o.zone_id)))?;
            let simulated = wsr_of_depth(&snap.depth, zone, wet_threshold)?;
            Ok(WsrMisfit {
                zone_id: o.zone_id,
                time: o.time,
                observed: o.wsr,
                simulated,
                misfit: o.wsr - simulated,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::WET_THRESHOLD;
    use crate::swe::DepthSnapshot;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn counts(hits: u64, misses: u64, false_alarms: u64, correct_negatives: u64) -> ContingencyCounts {
        ContingencyCounts {
            hits,
            misses,
            false_alarms,
            correct_negatives,
        }
    }

    #[test]
    fn rmse_hand_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[1.1, 2.1, 3.1], &[1.0, 2.0, 3.0]).unwrap() - 0.1).abs() < 1e-12);
        assert!((rmse(&[1.0, 2.0, 3.0], &[1.0, 1.0, 3.0]).unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn csi_hand_values() {
        assert_eq!(csi(&counts(5, 0, 0, 3)).unwrap(), 1.0);
        assert_eq!(csi(&counts(9, 3, 6, 0)).unwrap(), 0.5);
        assert_eq!(csi(&counts(0, 4, 2, 1)).unwrap(), 0.0);
        assert!(matches!(csi(&counts(0, 0, 0, 9)), Err(Error::UndefinedScore("CSI"))));
    }

    #[test]
    fn kappa_hand_values() {
        assert_eq!(kappa(&counts(4, 0, 0, 5)).unwrap(), 1.0);
        // Simulation all wet, observation wet on half: p_o = p_e = 1/2.
        assert_eq!(kappa(&counts(4, 0, 4, 0)).unwrap(), 0.0);
        assert!(matches!(kappa(&counts(7, 0, 0, 0)), Err(Error::UndefinedScore("kappa"))));
        assert!(kappa(&counts(0, 0, 0, 0)).is_err());
    }

    #[test]
    fn contingency_basic_cases() {
        let obs = FloodExtentMap::new(0.0, vec![false; 4], vec![true; 4]).unwrap();
        let (_, c) = contingency(&[true; 4], &obs).unwrap();
        assert_eq!(c, counts(0, 0, 4, 0));
        let obs = FloodExtentMap::new(0.0, vec![true, false, true, false], vec![true, true, true, false]).unwrap();
        let (map, c) = contingency(&[true, false, true, true], &obs).unwrap();
        assert_eq!(c, counts(2, 0, 0, 1));
        assert_eq!(map.cells[3], Category::Invalid);
        assert!(contingency(&[true], &obs).is_err());
    }

    #[test]
    fn independent_masks_have_near_zero_kappa() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let n = 200_000;
        let sim: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let obs = FloodExtentMap::new(0.0, (0..n).map(|_| rng.random_bool(0.4)).collect(), vec![true; n]).unwrap();
        let (_, c) = contingency(&sim, &obs).unwrap();
        assert!(kappa(&c).unwrap().abs() < 0.01);
    }

    #[test]
    fn contingency_grid_round_trip() {
        let grid = Grid::flat(2, 2, 5.0, 0.0).unwrap();
        let map = ContingencyMap {
            cells: vec![Category::Hit, Category::Invalid, Category::Miss, Category::FalseAlarm],
        };
        let back = ContingencyMap::from_ascii(&AsciiGrid::parse(&map.to_ascii(&grid).unwrap().to_text()).unwrap());
        assert_eq!(back.unwrap(), map);
    }

    fn misfit_fixture() -> (Trajectory, Vec<FloodplainZone>) {
        let depth = vec![0.1, 0.0, 0.2, 0.01, 0.06, 0.0];
        let zones = vec![
            FloodplainZone::new(1, vec![true, true, false, false, false, false], 1.0),
            FloodplainZone::new(2, vec![false, false, true, true, true, true], 1.0),
        ];
        let traj = Trajectory {
            snapshots: vec![DepthSnapshot { time: 60.0, depth }],
            ..Trajectory::default()
        };
        (traj, zones)
    }

    #[test]
    fn misfit_sign_and_composition() {
        let (traj, zones) = misfit_fixture();
        let obs = vec![
            WsrObservation {
                time: 60.0,
                zone_id: 2,
                wsr: 1.0,
                sigma: 0.05,
            },
            WsrObservation {
                time: 60.0,
                zone_id: 1,
                wsr: 0.5,
                sigma: 0.05,
            },
        ];
        let m = wsr_misfit_series(&traj, &obs, &zones, WET_THRESHOLD).unwrap();
        assert_eq!(m[0].zone_id, 1);
        assert_eq!(m[0].misfit, 0.0);
        let direct = 1.0 - wsr_of_depth(&traj.snapshots[0].depth, &zones[1], WET_THRESHOLD).unwrap();
        assert_eq!(m[1].misfit, direct);
        assert!(m[1].misfit > 0.0);

        let late = WsrObservation {
            time: 120.0,
            ..obs[0].clone()
        };
        assert!(matches!(
            wsr_misfit_series(&traj, &[late], &zones, WET_THRESHOLD),
            Err(Error::MissingDiagnostic(_))
        ));
    }

    proptest! {
        #[test]
        fn scores_are_bounded_and_order_free(seed in any::<u64>(), n in 4usize..200) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let sim: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let valid: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
            let wet: Vec<bool> = valid.iter().map(|&v| v && rng.random_bool(0.5)).collect();
            let obs = FloodExtentMap::new(0.0, wet.clone(), valid.clone()).unwrap();
            let (_, c) = contingency(&sim, &obs).unwrap();
            prop_assert_eq!(c.total(), valid.iter().filter(|&&v| v).count() as u64);

            let mut perm: Vec<usize> = (0..n).collect();
            perm.reverse();
            perm.rotate_left(seed as usize % n);
            let sim_p: Vec<bool> = perm.iter().map(|&i| sim[i]).collect();
            let obs_p = FloodExtentMap::new(
                0.0,
                perm.iter().map(|&i| wet[i]).collect(),
                perm.iter().map(|&i| valid[i]).collect(),
            ).unwrap();
            let (_, cp) = contingency(&sim_p, &obs_p).unwrap();
            prop_assert_eq!(c, cp);

            if let Ok(s) = csi(&c) {
                prop_assert!((0.0..=1.0).contains(&s));
            }
            if let Ok(k) = kappa(&c) {
                prop_assert!((-1.0..=1.0).contains(&k));
                let perfect = c.misses == 0 && c.false_alarms == 0;
                let both = c.hits > 0 && c.correct_negatives > 0;
                prop_assert_eq!(k == 1.0, perfect && both);
            }
        }
    }
}
