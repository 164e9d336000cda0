//! CSV and JSON formats shared by the command-line tools.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::correlator::{CoincidenceHistogram, Normalization};
use crate::error::FormatError;

pub const STREAM_HEADER: &str = "channel,time_ns";
pub const HISTOGRAM_HEADER: &str = "tau_ns,counts,g2,norm_err";
pub const SATURATION_HEADER: &str = "power_uW,intensity_cps";
pub const SWEEP_HEADER: &str = "x,value";

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> FormatError {
    FormatError::Parse {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

/// Shortest round-trip decimal form, padded to at least six decimals.
pub fn format_time(t: f64) -> String {
    let mut s = format!("{t}");
    let decimals = match s.find('.') {
        Some(i) => s.len() - i - 1,
        None => {
            s.push('.');
            0
        }
    };
    for _ in decimals..6 {
        s.push('0');
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Data rows with their 1-based line numbers, after checking the header.
fn rows<'a>(
    path: &Path,
    text: &'a str,
    header: &str,
) -> Result<Vec<(usize, Vec<&'a str>)>, FormatError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) => {
            return Err(parse_err(
                path,
                1,
                format!("expected header `{header}`, found `{}`", h.trim()),
            ))
        }
        None => {
            return Err(parse_err(
                path,
                1,
                format!("empty file, expected header `{header}`"),
            ))
        }
    }
    let width = header.split(',').count();
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let fields: Vec<&str> = l.split(',').map(str::trim).collect();
            if fields.len() != width {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("expected {width} fields, found {}", fields.len()),
                ));
            }
            Ok((i + 1, fields))
        })
        .collect()
}

fn number<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    field: &str,
    what: &str,
) -> Result<T, FormatError> {
    field.parse().map_err(|_| {
        parse_err(
            path,
            line,
            format!("{what} `{field}` is not a valid number"),
        )
    })
}

fn finite(path: &Path, line: usize, field: &str, what: &str) -> Result<f64, FormatError> {
    let v: f64 = number(path, line, field, what)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(
            path,
            line,
            format!("{what} `{field}` is not finite"),
        ))
    }
}

pub fn stream_csv(channel: u8, times: &[f64]) -> String {
    let mut out = String::with_capacity(24 * times.len() + 16);
    out.push_str(STREAM_HEADER);
    out.push('\n');
    for &t in times {
        let _ = writeln!(out, "{channel},{}", format_time(t));
    }
    out
}

pub fn write_stream_csv(path: &Path, channel: u8, times: &[f64]) -> Result<(), FormatError> {
    write_text(path, &stream_csv(channel, times))
}

/// Times per channel in file order. Sorting is checked by the consumer.
pub fn read_stream_csv(path: &Path) -> Result<BTreeMap<u8, Vec<f64>>, FormatError> {
    let text = read_text(path)?;
    let mut out: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for (line, f) in rows(path, &text, STREAM_HEADER)? {
        let ch: u8 = number(path, line, f[0], "channel")?;
        let t = finite(path, line, f[1], "time")?;
        if t < 0.0 {
            return Err(parse_err(path, line, format!("negative time {t}")));
        }
        out.entry(ch).or_default().push(t);
    }
    Ok(out)
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn histogram_csv(h: &CoincidenceHistogram) -> String {
    let mut out = String::new();
    out.push_str(HISTOGRAM_HEADER);
    out.push('\n');
    for (i, (c, n)) in h.centers().iter().zip(&h.counts).enumerate() {
        let (g, e) = match &h.norm {
            Some(norm) => (Some(norm.values[i]), Some(norm.errors[i])),
            None => (None, None),
        };
        let _ = writeln!(out, "{c},{n},{},{}", opt_field(g), opt_field(e));
    }
    out
}

pub fn write_histogram_csv(path: &Path, h: &CoincidenceHistogram) -> Result<(), FormatError> {
    write_text(path, &histogram_csv(h))
}

/// Normalised columns may be left empty, but then for every row.
pub fn read_histogram_csv(path: &Path) -> Result<CoincidenceHistogram, FormatError> {
    let text = read_text(path)?;
    let rows = rows(path, &text, HISTOGRAM_HEADER)?;
    let mut centers = Vec::with_capacity(rows.len());
    let mut counts = Vec::with_capacity(rows.len());
    let mut values = Vec::new();
    let mut errors = Vec::new();
    let mut normalized = None;
    for (line, f) in &rows {
        centers.push(finite(path, *line, f[0], "tau")?);
        counts.push(number::<u64>(path, *line, f[1], "counts")?);
        let has = !f[2].is_empty() || !f[3].is_empty();
        if *normalized.get_or_insert(has) != has {
            return Err(parse_err(
                path,
                *line,
                "normalised columns must be filled in every row or none",
            ));
        }
        if has {
            values.push(finite(path, *line, f[2], "g2")?);
            errors.push(finite(path, *line, f[3], "norm_err")?);
        }
    }
    let norm = (normalized == Some(true)).then(|| Normalization {
        upper_limit: counts.iter().map(|&c| c == 0).collect(),
        values,
        errors,
    });
    let last = rows.last().map_or(1, |r| r.0);
    CoincidenceHistogram::from_centers(&centers, counts, norm)
        .map_err(|e| parse_err(path, last, e.to_string()))
}

pub fn saturation_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from(SATURATION_HEADER);
    out.push('\n');
    for (p, i) in points {
        let _ = writeln!(out, "{p},{i}");
    }
    out
}

pub fn read_saturation_csv(path: &Path) -> Result<Vec<(f64, f64)>, FormatError> {
    let text = read_text(path)?;
    rows(path, &text, SATURATION_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            Ok((
                finite(path, line, f[0], "power")?,
                finite(path, line, f[1], "intensity")?,
            ))
        })
        .collect()
}

pub fn sweep_csv<X: std::fmt::Display, Y: std::fmt::Display>(points: &[(X, Y)]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for (x, y) in points {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| FormatError::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlator::normalize_by;
    use proptest::prelude::*;

    #[test]
    fn time_format_pads_decimals() {
        assert_eq!(format_time(1.5), "1.500000");
        assert_eq!(format_time(12.0), "12.000000");
        assert_eq!(format_time(0.1234567891), "0.1234567891");
    }

    #[test]
    fn stream_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let times = vec![0.0, 1.0 / 3.0, 1e9 + 0.125, 1.8e13 + 0.000_1];
        write_stream_csv(&p, 2, &times).unwrap();
        let back = read_stream_csv(&p).unwrap();
        assert_eq!(back[&2], times);
    }

    #[test]
    fn malformed_stream_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "channel,time_ns\n1,0.5\n1,abc\n").unwrap();
        match read_stream_csv(&p) {
            Err(FormatError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&p, "time\n").unwrap();
        assert!(matches!(
            read_stream_csv(&p),
            Err(FormatError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_stream_csv(&dir.path().join("missing.csv")),
            Err(FormatError::Io { .. })
        ));
    }

    #[test]
    fn histogram_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let mut h = CoincidenceHistogram::empty(10.0, 0.5).unwrap();
        h.counts
            .iter_mut()
            .enumerate()
            .for_each(|(i, c)| *c = (i * 7 % 5) as u64);
        h.total_pairs = h.counts.iter().sum();
        write_histogram_csv(&p, &h).unwrap();
        let raw = read_histogram_csv(&p).unwrap();
        assert_eq!(raw.counts, h.counts);
        assert!(raw.norm.is_none());
        let n = normalize_by(&h, 3.0);
        write_histogram_csv(&p, &n).unwrap();
        let back = read_histogram_csv(&p).unwrap();
        assert_eq!(back.norm, n.norm);
        assert_eq!(back.bin_width, 0.5);
    }

    #[test]
    fn saturation_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sat.csv");
        let pts = vec![(0.1, 250.5), (1.0, 1500.0)];
        write_text(&p, &saturation_csv(&pts)).unwrap();
        assert_eq!(read_saturation_csv(&p).unwrap(), pts);
    }

    proptest! {
        #[test]
        fn times_round_trip_exactly(t in 0.0f64..1e14) {
            let s = format_time(t);
            prop_assert!(s.split('.').nth(1).unwrap().len() >= 6);
            prop_assert_eq!(s.parse::<f64>().unwrap(), t);
        }
    }
}
