use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::Trip;
use crate::error::{Error, Result};

/// Writes one trip per line.
pub fn write_jsonl_to<W: Write>(trips: &[Trip], mut out: W) -> Result<()> {
    for trip in trips {
        serde_json::to_writer(&mut out, trip)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads one trip per non-blank line. Errors cite the 1-based line number.
pub fn read_jsonl_from<R: BufRead>(input: R) -> Result<Vec<Trip>> {
    let mut trips = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trip = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        trips.push(trip);
    }
    Ok(trips)
}

pub fn write_jsonl(trips: &[Trip], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl_to(trips, BufWriter::new(File::create(path)?))
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Trip>> {
    read_jsonl_from(BufReader::new(File::open(path)?))
}
