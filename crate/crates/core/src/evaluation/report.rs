//! CSV output.

use std::io::Write;

use serde::Serialize;

use crate::{Error, Result};

/// Write `rows` as CSV after a `# comment` line.
pub fn write_csv<W: Write, R: Serialize>(mut out: W, comment: &str, rows: &[R]) -> Result<()> {
    for line in comment.lines() {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}
