//! CSV persistence for recordings.
//!
//! Values files use the header `t,x1,...,xD`, noise files `t,w1,...,wD`.
//! `t` starts at 1 and increases by one per row. Numbers are written in the
//! shortest form that parses back to the identical `f64`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::simulate::Recording;

pub fn save_recording(recording: &Recording, path: impl AsRef<Path>) -> Result<()> {
    write_table(recording.values(), "x", path.as_ref())
}

/// Writes the noise companion file. Fails if the recording carries no noise.
pub fn save_noise(recording: &Recording, path: impl AsRef<Path>) -> Result<()> {
    let noise = recording
        .noise()
        .ok_or_else(|| Error::DimensionMismatch("recording carries no noise realization".into()))?;
    write_table(noise, "w", path.as_ref())
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<Recording> {
    Ok(Recording::new(read_table("x", path.as_ref())?))
}

pub fn load_recording_with_noise(
    path: impl AsRef<Path>,
    noise_path: impl AsRef<Path>,
) -> Result<Recording> {
    let values = read_table("x", path.as_ref())?;
    let noise = read_table("w", noise_path.as_ref())?;
    Recording::with_noise(values, noise)
}

pub(crate) fn write_table(m: &DMatrix<f64>, prefix: &str, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = String::from("t");
    for j in 1..=m.ncols() {
        header.push_str(&format!(",{prefix}{j}"));
    }
    writeln!(out, "{header}").map_err(io)?;
    for (r, row) in m.row_iter().enumerate() {
        write!(out, "{}", r + 1).map_err(io)?;
        for v in row.iter() {
            write!(out, ",{v}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn read_table(prefix: &str, path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let line_err = |line: u64, message: String| Error::ParseLine {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| line_err(1, e.to_string()))?,
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: "empty file".into(),
            })
        }
    };
    if header.get(0) != Some("t") {
        return Err(line_err(
            1,
            format!(
                "first column must be `t`, found `{}`",
                header.get(0).unwrap_or("")
            ),
        ));
    }
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(line_err(1, format!("missing column `{prefix}1`")));
    }
    for (j, name) in header.iter().skip(1).enumerate() {
        let expected = format!("{prefix}{}", j + 1);
        if name != expected {
            return Err(line_err(
                1,
                format!("missing column `{expected}` (found `{name}`)"),
            ));
        }
    }

    let mut data: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            line_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != dim + 1 {
            return Err(line_err(
                line,
                format!("expected {} fields, found {}", dim + 1, record.len()),
            ));
        }
        let t: usize = record[0]
            .parse()
            .map_err(|_| line_err(line, format!("invalid time index `{}`", &record[0])))?;
        if t != rows + 1 {
            return Err(line_err(
                line,
                format!(
                    "time column not contiguous: expected t={}, found t={t}",
                    rows + 1
                ),
            ));
        }
        for (j, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                line_err(
                    line,
                    format!("invalid number `{field}` in column `{prefix}{}`", j + 1),
                )
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, dim, &data))
}
