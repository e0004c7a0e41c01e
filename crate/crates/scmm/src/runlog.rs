//! RunLogs as line-delimited JSON: a header line with the seed and the
//! effective configuration, then one line per epoch. Wall-clock timings go to
//! a separate file so that logs of identical runs are byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use scmm_core::training::{EpochRecord, RunLog};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    seed: u64,
    config: Value,
}

pub fn encode_runlog(log: &RunLog, config: &impl Serialize) -> String {
    let header = Header {
        kind: "header".into(),
        seed: log.seed,
        config: serde_json::to_value(config).expect("config serializes"),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in &log.records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_runlog(log: &RunLog, config: &impl Serialize, path: &Path) -> Result<()> {
    fs::write(path, encode_runlog(log, config)).map_err(Error::io(path))
}

/// Parses a RunLog file back into the log and its config snapshot.
pub fn read_runlog(path: &Path) -> Result<(RunLog, Value)> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| Error::format(path, "empty RunLog"))?;
    let header: Header = serde_json::from_str(first).map_err(Error::json(path))?;
    if header.kind != "header" {
        return Err(Error::format(path, "first line is not a header"));
    }
    let records = lines
        .map(|l| serde_json::from_str::<EpochRecord>(l).map_err(Error::json(path)))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        RunLog {
            seed: header.seed,
            records,
        },
        header.config,
    ))
}

/// Per-epoch wall-clock seconds, written next to the RunLog.
pub fn write_timing(epoch_seconds: &[f64], path: &Path) -> Result<()> {
    let total: f64 = epoch_seconds.iter().sum();
    let v = serde_json::json!({ "epoch_seconds": epoch_seconds, "total_seconds": total });
    fs::write(path, format!("{v}\n")).map_err(Error::io(path))
}
