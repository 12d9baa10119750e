use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

/// Buffered writer on `path`, or on stdout when no path is given.
pub fn open(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Fixed 17-significant-digit rendering used in every CSV.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Comma-joined [`num`] renderings.
pub fn row(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(num).collect::<Vec<_>>().join(",")
}
