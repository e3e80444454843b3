use std::path::Path;

use crate::error::{Error, Result};
use crate::features::TimeSeries;
use crate::tensor::Tensor;

const TIME_COLUMN: &str = "time_seconds";

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::format(path.display().to_string(), format!("line {line}: {kind:?}")),
    }
}

/// Writes `time_seconds` followed by one column per channel. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_series(path: &Path, columns: &[String], series: &TimeSeries) -> Result<()> {
    if columns.len() != series.width() {
        return Err(Error::invalid(format!(
            "{} column names for {} channels",
            columns.len(),
            series.width()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = std::iter::once(TIME_COLUMN).chain(columns.iter().map(String::as_str));
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    let c = series.width();
    let mut record = Vec::with_capacity(c + 1);
    for (t, row) in series.times.iter().zip(series.values.data().chunks(c.max(1))) {
        record.clear();
        record.push(t.to_string());
        record.extend(row.iter().map(f64::to_string));
        w.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_series`], returning the channel names.
pub fn read_series(path: &Path) -> Result<(Vec<String>, TimeSeries)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let section = path.display().to_string();
    if header.get(0) != Some(TIME_COLUMN) {
        return Err(Error::format(section, format!("first column must be `{TIME_COLUMN}`")));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let mut fields = rec.iter().map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| Error::format(&section, format!("row {}: bad number `{f}`", i + 1)))
        });
        times.push(fields.next().transpose()?.unwrap_or(f64::NAN));
        for f in fields {
            values.push(f?);
        }
    }
    let values = Tensor::new(vec![times.len(), columns.len()], values)?;
    let series = TimeSeries::new(times, values).map_err(|e| Error::format(section, e.to_string()))?;
    Ok((columns, series))
}

/// Writes a plain numeric matrix with a header row and no time column.
pub fn write_table(path: &Path, columns: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(columns).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(f64::to_string))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let values = Tensor::new(vec![3, 2], vec![0.1, -1e-300, 1.0 / 3.0, 7.0, f64::MAX, 0.0])
            .unwrap();
        let s = TimeSeries::regular(100.0, values).unwrap();
        let names = vec!["x".to_string(), "y".to_string()];
        write_series(&p, &names, &s).unwrap();
        let (cols, back) = read_series(&p).unwrap();
        assert_eq!(cols, names);
        assert_eq!(back, s);
    }

    #[test]
    fn ragged_rows_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, "time_seconds,a\n0,1\n0.01,2,3\n").unwrap();
        assert!(matches!(read_series(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_time_column_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "a,b\n0,1\n").unwrap();
        assert!(matches!(read_series(&p), Err(Error::Format { .. })));
    }
}
