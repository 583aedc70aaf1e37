//! CSV helpers shared by every emitted report.

use std::io;
use std::path::Path;

/// 17 significant digits; parsing the string returns the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a header and rows, flushing before returning.
pub fn write_rows<P, H, R>(path: P, header: &[H], rows: impl IntoIterator<Item = R>) -> io::Result<()>
where
    P: AsRef<Path>,
    H: AsRef<[u8]>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path).map_err(io::Error::other)?;
    w.write_record(header).map_err(io::Error::other)?;
    for row in rows {
        w.write_record(row).map_err(io::Error::other)?;
    }
    w.flush()
}

/// Reads a CSV into its header and string rows.
pub fn read_rows(path: impl AsRef<Path>) -> io::Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(io::Error::other)?;
    let header = r.headers().map_err(io::Error::other)?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(io::Error::other)?.iter().map(str::to_owned).collect());
    }
    Ok((header, rows))
}
