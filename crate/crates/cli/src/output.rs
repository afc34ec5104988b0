use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use wavemg::Result;

/// Locale-independent float with 17 significant digits.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| wavemg::Error::Config(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
