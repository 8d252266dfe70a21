//! Small CSV helpers shared by every artifact reader and writer.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub fn write(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads every record after checking the header matches exactly.
pub fn read(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let found = r.headers().map_err(|e| csv_err(path, e))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::parse(
            path,
            format!("expected header {}, found {}", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    r.records().map(|rec| rec.map_err(|e| csv_err(path, e))).collect()
}

pub fn field<T: FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec
        .get(i)
        .ok_or_else(|| Error::parse(path, format!("line {}: missing column {i}", line(rec))))?;
    raw.trim()
        .parse()
        .map_err(|e| Error::parse(path, format!("line {}: column {i} `{raw}`: {e}", line(rec))))
}

fn line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write(&p, &["a", "b"], vec![vec!["1".into(), "0.1".into()]]).unwrap();
        let rows = read(&p, &["a", "b"]).unwrap();
        assert_eq!(field::<u32>(&p, &rows[0], 0).unwrap(), 1);
        assert_eq!(field::<f64>(&p, &rows[0], 1).unwrap(), 0.1);
        assert!(matches!(read(&p, &["a", "c"]), Err(Error::Parse { .. })));
        assert!(matches!(field::<f64>(&p, &rows[0], 5), Err(Error::Parse { .. })));
    }

    #[test]
    fn absent_file_is_missing_artifact() {
        let err = read(Path::new("/nonexistent/x.csv"), &["a"]).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)));
    }
}
