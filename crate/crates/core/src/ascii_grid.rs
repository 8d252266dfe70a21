//! ESRI ASCII grid reading and writing.
//!
//! Header keys are `ncols`, `nrows`, `xllcorner`, `yllcorner`, `cellsize` and
//! `NODATA_value`, followed by `nrows` lines of `ncols` values, first row on
//! top. Values are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const NODATA: f64 = -9999.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AsciiGrid {
    pub ncols: usize,
    pub nrows: usize,
    pub xllcorner: f64,
    pub yllcorner: f64,
    pub cellsize: f64,
    pub nodata: f64,
    /// Row-major, row 0 first.
    pub values: Vec<f64>,
}

impl AsciiGrid {
    pub fn new(ncols: usize, nrows: usize, cellsize: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != ncols * nrows {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {ncols}x{nrows} grid",
                values.len()
            )));
        }
        Ok(AsciiGrid {
            ncols,
            nrows,
            xllcorner: 0.0,
            yllcorner: 0.0,
            cellsize,
            nodata: NODATA,
            values,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 8 + 128);
        let _ = writeln!(out, "ncols {}", self.ncols);
        let _ = writeln!(out, "nrows {}", self.nrows);
        let _ = writeln!(out, "xllcorner {}", self.xllcorner);
        let _ = writeln!(out, "yllcorner {}", self.yllcorner);
        let _ = writeln!(out, "cellsize {}", self.cellsize);
        let _ = writeln!(out, "NODATA_value {}", self.nodata);
        for row in self.values.chunks(self.ncols) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|msg| Error::parse(path, msg))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut header = |key: &str| -> std::result::Result<String, String> {
            let line = lines.next().ok_or_else(|| format!("missing header `{key}`"))?;
            let mut parts = line.split_whitespace();
            let name = parts.next().unwrap_or_default();
            if !name.eq_ignore_ascii_case(key) {
                return Err(format!("expected header `{key}`, found `{name}`"));
            }
            parts
                .next()
                .map(str::to_string)
                .ok_or_else(|| format!("header `{key}` has no value"))
        };
        let num = |s: String, key: &str| -> std::result::Result<f64, String> {
            s.parse::<f64>().map_err(|e| format!("bad `{key}`: {e}"))
        };
        let ncols: usize = header("ncols")?.parse().map_err(|e| format!("bad ncols: {e}"))?;
        let nrows: usize = header("nrows")?.parse().map_err(|e| format!("bad nrows: {e}"))?;
        let xllcorner = num(header("xllcorner")?, "xllcorner")?;
        let yllcorner = num(header("yllcorner")?, "yllcorner")?;
        let cellsize = num(header("cellsize")?, "cellsize")?;
        let nodata = num(header("NODATA_value")?, "NODATA_value")?;

        let mut values = Vec::with_capacity(ncols * nrows);
        for (r, line) in lines.enumerate() {
            let before = values.len();
            for tok in line.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|e| format!("row {r}: {e}"))?);
            }
            if values.len() - before != ncols {
                return Err(format!("row {r} has {} values, expected {ncols}", values.len() - before));
            }
        }
        if values.len() != ncols * nrows {
            return Err(format!("expected {nrows} rows, found {}", values.len() / ncols.max(1)));
        }
        Ok(AsciiGrid {
            ncols,
            nrows,
            xllcorner,
            yllcorner,
            cellsize,
            nodata,
            values,
        })
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let g = AsciiGrid::new(2, 2, 50.0, vec![1.0, 2.5, NODATA, 0.0]).unwrap();
        let text = g.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "ncols 2");
        assert_eq!(lines[1], "nrows 2");
        assert_eq!(lines[4], "cellsize 50");
        assert_eq!(lines[5], "NODATA_value -9999");
        assert_eq!(lines[6], "1 2.5");
        assert_eq!(lines[7], "-9999 0");
    }

    #[test]
    fn rejects_ragged_rows() {
        let text = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3\n";
        assert!(AsciiGrid::parse(text).is_err());
    }

    #[test]
    fn missing_file_is_missing_artifact() {
        let err = AsciiGrid::read(Path::new("/nonexistent/grid.asc")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)));
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(ncols in 1usize..6, nrows in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..ncols * nrows).map(|_| rng.random_range(-1e4..1e4)).collect();
            let g = AsciiGrid::new(ncols, nrows, 12.5, values).unwrap();
            prop_assert_eq!(AsciiGrid::parse(&g.to_text()).unwrap(), g);
        }
    }
}
