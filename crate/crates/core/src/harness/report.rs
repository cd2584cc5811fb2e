//! Result persistence: CSV tables, JSON manifests and plot-ready data.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ratefit::{RateFit, RatePoint};

/// Formats a float with 17 significant digits (exact f64 round trip).
pub fn format_float(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        // Integers stay readable.
        format!("{x:.1}")
    } else {
        format!("{x:.16e}")
    }
}

/// A named CSV table on disk.
#[derive(Debug, Clone, Serialize)]
pub struct TableRef {
    pub name: String,
    pub path: PathBuf,
}

/// Everything one experiment run leaves behind.
#[derive(Debug, Clone)]
pub struct ResultRecord {
    pub experiment_id: String,
    pub out_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub tables: Vec<TableRef>,
    /// Rate points produced by the rate recipes (any length).
    pub rate_points: Vec<RatePoint>,
    pub rate_fit: Option<RateFit>,
    /// Invariant-check failures; a nonempty list means nonzero exit status.
    pub failures: Vec<String>,
    /// Human-readable summary lines, printed after the run.
    pub summary: Vec<String>,
}

impl ResultRecord {
    pub fn table(&self, name: &str) -> Result<&TableRef> {
        self.tables
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::MissingTable(name.to_string()))
    }
}

/// Writes a CSV file with a header row; numeric cells must already be
/// formatted by [`format_float`].
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text)?;
    Ok(())
}

/// Writes the plot-ready table for a rate experiment: observed points plus
/// the fitted curve `C (log n)^q n^{-p}` when a fit exists. Returns a
/// notice instead of fit columns for degenerate series.
pub fn emit_plotdata(record: &ResultRecord) -> Result<(PathBuf, Option<String>)> {
    if record.rate_points.is_empty() {
        return Err(Error::MissingTable("rate series".to_string()));
    }
    let path = record.out_dir.join("plotdata.csv");
    match &record.rate_fit {
        Some(fit) => {
            let rows: Vec<Vec<String>> = record
                .rate_points
                .iter()
                .map(|p| {
                    let ln_n = (p.n as f64).ln();
                    let fitted = (fit.log_c + fit.q * ln_n.ln() - fit.p * ln_n).exp();
                    vec![
                        p.n.to_string(),
                        format_float(p.value),
                        format_float(p.stderr),
                        format_float(fitted),
                    ]
                })
                .collect();
            write_csv(&path, &["n", "value", "stderr", "fitted"], &rows)?;
            Ok((path, None))
        }
        None => {
            let rows: Vec<Vec<String>> = record
                .rate_points
                .iter()
                .map(|p| {
                    vec![
                        p.n.to_string(),
                        format_float(p.value),
                        format_float(p.stderr),
                    ]
                })
                .collect();
            write_csv(&path, &["n", "value", "stderr"], &rows)?;
            Ok((
                path,
                Some("fewer than 3 points: plot data written without fit columns".to_string()),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [
            0.0,
            1.0,
            -3.5,
            0.341344746068542948585232545632,
            1.23e-17,
            6.022e23,
            f64::MIN_POSITIVE,
        ] {
            let s = format_float(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(x.to_bits(), back.to_bits(), "{x} -> {s}");
        }
    }

    #[test]
    fn plotdata_fitted_matches_exact_model() {
        let dir = tempfile::tempdir().unwrap();
        let points: Vec<RatePoint> = [64usize, 128, 256, 512]
            .iter()
            .map(|&n| RatePoint {
                n,
                value: 10.0 * (n as f64).ln().powi(2) / n as f64,
                stderr: 0.0,
            })
            .collect();
        let series = crate::ratefit::RateSeries::new(points.clone(), "exact").unwrap();
        let fit = crate::ratefit::fit_rate(&series, 2.0).unwrap();
        let record = ResultRecord {
            experiment_id: "test".into(),
            out_dir: dir.path().to_path_buf(),
            manifest_path: dir.path().join("manifest.json"),
            tables: vec![],
            rate_points: points.clone(),
            rate_fit: Some(fit),
            failures: vec![],
            summary: vec![],
        };
        let (path, notice) = emit_plotdata(&record).unwrap();
        assert!(notice.is_none());
        let text = std::fs::read_to_string(path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "n,value,stderr,fitted");
        for (line, p) in lines.zip(&points) {
            let cells: Vec<&str> = line.split(',').collect();
            let value: f64 = cells[1].parse().unwrap();
            let fitted: f64 = cells[3].parse().unwrap();
            assert!((value - fitted).abs() < 1e-10 * value, "{line}");
            assert_eq!(cells[0], p.n.to_string());
        }
    }

    #[test]
    fn plotdata_degenerate_series_notice() {
        let dir = tempfile::tempdir().unwrap();
        let record = ResultRecord {
            experiment_id: "test".into(),
            out_dir: dir.path().to_path_buf(),
            manifest_path: dir.path().join("manifest.json"),
            tables: vec![],
            rate_points: vec![RatePoint {
                n: 64,
                value: 0.1,
                stderr: 0.01,
            }],
            rate_fit: None,
            failures: vec![],
            summary: vec![],
        };
        let (path, notice) = emit_plotdata(&record).unwrap();
        assert!(notice.is_some());
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("n,value,stderr\n"));
    }

    #[test]
    fn missing_series_is_an_error() {
        let record = ResultRecord {
            experiment_id: "test".into(),
            out_dir: PathBuf::from("."),
            manifest_path: PathBuf::from("manifest.json"),
            tables: vec![],
            rate_points: vec![],
            rate_fit: None,
            failures: vec![],
            summary: vec![],
        };
        assert!(matches!(
            emit_plotdata(&record),
            Err(Error::MissingTable(_))
        ));
    }
}
