//! Traffic records and the line-delimited JSON format they are stored in.
//!
//! One JSON object per line:
//!
//! ```text
//! {"schema_version":1,"id":17,"timestamp":3605,"block_start":3600,"channel":"ch2","slots":5,
//!  "candidates":[{"campaign":"c7","pctr":0.031,"pcvr":0.08,"bid":1.9,"clicked":false,"converted":false}]}
//! ```
//!
//! Lines are ordered by timestamp. `block_start` is the start of the
//! fifteen-minute window the record belongs to and must equal
//! `timestamp - timestamp % 900`. Days are UTC calendar days counted from
//! timestamp 0.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const BLOCK_SECONDS: u64 = 900;
pub const DAY_SECONDS: u64 = 86_400;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub campaign: String,
    pub pctr: f64,
    pub pcvr: f64,
    pub bid: f64,
    pub clicked: bool,
    pub converted: bool,
}

impl Candidate {
    pub fn ecpm(&self) -> f64 {
        self.bid * self.pctr
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficRecord {
    pub id: u64,
    pub timestamp: u64,
    pub channel: String,
    pub slots: usize,
    pub candidates: Vec<Candidate>,
}

impl TrafficRecord {
    pub fn day(&self) -> u64 {
        self.timestamp / DAY_SECONDS
    }

    pub fn block_start(&self) -> u64 {
        self.timestamp - self.timestamp % BLOCK_SECONDS
    }

    /// Range and uniqueness checks; returns a description of the first problem.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.slots == 0 {
            return Err("slots must be at least 1".into());
        }
        let mut seen = BTreeSet::new();
        for c in &self.candidates {
            if !(0.0..=1.0).contains(&c.pctr) {
                return Err(format!("pctr {} of `{}` outside [0, 1]", c.pctr, c.campaign));
            }
            if !(0.0..=1.0).contains(&c.pcvr) {
                return Err(format!("pcvr {} of `{}` outside [0, 1]", c.pcvr, c.campaign));
            }
            if !(c.bid.is_finite() && c.bid >= 0.0) {
                return Err(format!(
                    "bid {} of `{}` is not a non-negative number",
                    c.bid, c.campaign
                ));
            }
            if !seen.insert(c.campaign.as_str()) {
                return Err(format!("campaign `{}` appears twice", c.campaign));
            }
        }
        Ok(())
    }
}

/// Records sharing one fifteen-minute window.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficBlock {
    pub start: u64,
    pub records: Vec<TrafficRecord>,
}

impl TrafficBlock {
    pub fn contains(&self, timestamp: u64) -> bool {
        (self.start..self.start + BLOCK_SECONDS).contains(&timestamp)
    }
}

/// Groups time-ordered records into consecutive blocks.
pub fn into_blocks(records: impl IntoIterator<Item = TrafficRecord>) -> Result<Vec<TrafficBlock>> {
    let mut blocks: Vec<TrafficBlock> = Vec::new();
    for r in records {
        let start = r.block_start();
        match blocks.last_mut() {
            Some(b) if b.start == start => b.records.push(r),
            Some(b) if b.start > start => {
                return Err(Error::UnorderedBlocks {
                    previous: b.start,
                    found: start,
                })
            }
            _ => blocks.push(TrafficBlock {
                start,
                records: vec![r],
            }),
        }
    }
    Ok(blocks)
}

pub fn record_count(blocks: &[TrafficBlock]) -> usize {
    blocks.iter().map(|b| b.records.len()).sum()
}

/// Wire form of one line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecordLine {
    pub schema_version: u32,
    pub id: u64,
    pub timestamp: u64,
    pub block_start: u64,
    pub channel: String,
    pub slots: usize,
    pub candidates: Vec<Candidate>,
}

impl RecordLine {
    pub fn from_record(r: &TrafficRecord, block_start: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            id: r.id,
            timestamp: r.timestamp,
            block_start,
            channel: r.channel.clone(),
            slots: r.slots,
            candidates: r.candidates.clone(),
        }
    }

    pub fn into_record(self) -> TrafficRecord {
        TrafficRecord {
            id: self.id,
            timestamp: self.timestamp,
            channel: self.channel,
            slots: self.slots,
            candidates: self.candidates,
        }
    }
}

pub fn write_traffic<W: Write>(out: W, blocks: &[TrafficBlock]) -> Result<()> {
    let mut w = BufWriter::new(out);
    for b in blocks {
        for r in &b.records {
            serde_json::to_writer(&mut w, &RecordLine::from_record(r, b.start))?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_traffic(path: &Path, blocks: &[TrafficBlock]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    write_traffic(file, blocks)
}

/// Reads and strictly checks a traffic file: any schema, range or window
/// problem is an error. Use `data_gen::validate_dataset` for a full report.
pub fn read_traffic<R: BufRead>(input: R) -> Result<Vec<TrafficBlock>> {
    let mut blocks: Vec<TrafficBlock> = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line).map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: rec.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let start = rec.block_start;
        let record = rec.into_record();
        if record.block_start() != start {
            return Err(Error::Data(format!(
                "line {}: timestamp {} outside block window starting at {start}",
                n + 1,
                record.timestamp
            )));
        }
        record
            .check()
            .map_err(|msg| Error::Data(format!("line {}: {msg}", n + 1)))?;
        match blocks.last_mut() {
            Some(b) if b.start == start => b.records.push(record),
            Some(b) if b.start > start => {
                return Err(Error::UnorderedBlocks {
                    previous: b.start,
                    found: start,
                })
            }
            _ => blocks.push(TrafficBlock {
                start,
                records: vec![record],
            }),
        }
    }
    Ok(blocks)
}

pub fn load_traffic(path: &Path) -> Result<Vec<TrafficBlock>> {
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_traffic(BufReader::new(file))
}
