use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DensityField, GridSpec};
use crate::error::{Error, Result};

const FORMAT: &str = "mfclab-field";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    n: usize,
    half_width: f64,
    time: f64,
    encoding: String,
}

/// One JSON header line followed by n³ little-endian f64 values.
pub fn write_field(path: &Path, field: &DensityField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        format: FORMAT.into(),
        n: field.spec.n,
        half_width: field.spec.half_width,
        time: field.time,
        encoding: "f64-le".into(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for v in &field.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<DensityField> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(&line)?;
    if header.format != FORMAT || header.encoding != "f64-le" {
        return Err(Error::Format(format!("{}: not a field file", path.display())));
    }
    let spec = GridSpec { n: header.n, half_width: header.half_width };
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != spec.len() * 8 {
        return Err(Error::Format(format!(
            "{}: expected {} values, found {} bytes",
            path.display(),
            spec.len(),
            bytes.len()
        )));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(DensityField { spec, values, time: header.time })
}

/// Writes the z = 0 plane (nearest node layer) as x, y, value rows.
pub fn write_slice_csv(path: &Path, field: &DensityField) -> Result<()> {
    let spec = field.spec;
    let k = spec.n / 2;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "value"])?;
    for i in 0..spec.n {
        for j in 0..spec.n {
            w.write_record(&[
                format!("{:e}", spec.coord(i)),
                format!("{:e}", spec.coord(j)),
                format!("{:e}", field.values[spec.index(i, j, k)]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
