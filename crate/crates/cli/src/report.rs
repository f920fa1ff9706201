//! Run reports and trace CSV.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use soficlab_core::microstate::TraceRow;

pub const CSV_HEADER: [&str; 5] = ["index", "n", "fit_lower", "fit_upper", "pass"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    /// Hex SHA-256 of the config file bytes.
    pub config_digest: String,
    pub config: Value,
    pub op: String,
    pub warnings: Vec<String>,
    pub result: Value,
    /// Excluded from determinism comparisons.
    pub wall_time_ms: u64,
}

impl RunReport {
    pub fn new(config_bytes: &[u8], config: Value, op: &str, warnings: Vec<String>, result: Value, wall_time_ms: u64) -> Self {
        RunReport {
            version: soficlab_core::VERSION.to_string(),
            config_digest: digest(config_bytes),
            config,
            op: op.to_string(),
            warnings,
            result,
            wall_time_ms,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Header line always written, one line per row, LF endings.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> csv::Result<Vec<TraceRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}
