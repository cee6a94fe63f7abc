//! Tiny CSV helpers: one header row, floats at 17 significant digits.

use crate::error::Result;
use std::io::Write;
use std::path::Path;

/// Formats a float with 17 significant digits, enough to round-trip f64.
pub fn fmt(v: f64) -> String {
    format!("{:.16e}", v)
}

/// Writes a table with the given header and rows of already formatted cells.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_round_trips() {
        for v in [0.1, -3.25e-9, 1.0 / 3.0, 2.0f64.powi(60)] {
            assert_eq!(fmt(v).parse::<f64>().unwrap(), v);
        }
    }
}
