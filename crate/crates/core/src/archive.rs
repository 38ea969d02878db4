//! Rollout archives: a header naming the environment config, seed and policy
//! snapshot, followed by one record per environment step.
//!
//! The line-delimited JSON form has a header line
//! `{"kind":"header","format_version","config_hash","seed","checkpoint_id"}` and
//! then one line per step with fields in the order
//! `kind, epoch, t, obs (25 floats, row-major), action (id 0-4), reward, done`,
//! where `reward` is `{collision, speed, lane, total, normalized}`.
//!
//! The binary form is little-endian: magic `BXRA`, version u32, header JSON
//! length u32, header JSON bytes, record count u64, then per record
//! epoch u64, t u64, 25 × f64 observation, action u8, 5 × f64 reward
//! (collision, speed, lane, total, normalized), done u8.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Observation, RewardBreakdown, NUM_ACTIONS, OBS_LEN};
use crate::error::{Error, Result};

pub const ARCHIVE_FORMAT_VERSION: u32 = 1;
pub const BINARY_ARCHIVE_MAGIC: &[u8; 4] = b"BXRA";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub checkpoint_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveRecord {
    pub epoch: u64,
    pub t: u64,
    pub obs: Observation,
    pub action: usize,
    pub reward: RewardBreakdown,
    pub done: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
enum Line {
    Header(ArchiveHeader),
    Step(ArchiveRecord),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutArchive {
    pub header: ArchiveHeader,
    pub records: Vec<ArchiveRecord>,
}

impl RolloutArchive {
    pub fn new(config_hash: String, seed: u64, checkpoint_id: String) -> Self {
        RolloutArchive {
            header: ArchiveHeader {
                format_version: ARCHIVE_FORMAT_VERSION,
                config_hash,
                seed,
                checkpoint_id,
            },
            records: Vec::new(),
        }
    }

    pub fn find(&self, epoch: u64, t: u64) -> Option<&ArchiveRecord> {
        self.records.iter().find(|r| r.epoch == epoch && r.t == t)
    }

    /// Index from (epoch, t) to record position; fails on duplicate keys.
    pub fn index(&self) -> Result<HashMap<(u64, u64), usize>> {
        let mut map = HashMap::with_capacity(self.records.len());
        for (i, r) in self.records.iter().enumerate() {
            if map.insert((r.epoch, r.t), i).is_some() {
                return Err(Error::format(
                    "rollout archive",
                    format!("record {i} repeats epoch {} t {}", r.epoch, r.t),
                ));
            }
        }
        Ok(map)
    }

    /// Episode boundaries as half-open index ranges, split after every `done`.
    pub fn episodes(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for (i, r) in self.records.iter().enumerate() {
            if r.done {
                out.push(start..i + 1);
                start = i + 1;
            }
        }
        if start < self.records.len() {
            out.push(start..self.records.len());
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Line::Header(self.header.clone())).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(&Line::Step(r.clone())).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::format("rollout archive", format!("line {}: {e}", i + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|e| Error::format("rollout archive", format!("line {}: {e}", i + 1)))?;
            match (parsed, i) {
                (Line::Header(h), 0) => header = Some(h),
                (Line::Header(_), _) => {
                    return Err(Error::format(
                        "rollout archive",
                        format!("line {}: header after first line", i + 1),
                    ))
                }
                (Line::Step(r), _) => {
                    if header.is_none() {
                        return Err(Error::format("rollout archive", "missing header line"));
                    }
                    validate_record(&r)
                        .map_err(|reason| Error::format("rollout archive", format!("line {}: {reason}", i + 1)))?;
                    records.push(r);
                }
            }
        }
        let header = header.ok_or_else(|| Error::format("rollout archive", "missing header line"))?;
        check_version(&header)?;
        Ok(RolloutArchive { header, records })
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + self.records.len() * 266);
        out.extend_from_slice(BINARY_ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.epoch.to_le_bytes());
            out.extend_from_slice(&r.t.to_le_bytes());
            for v in r.obs.flat() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(r.action as u8);
            let rw = &r.reward;
            for v in [rw.collision, rw.speed, rw.lane, rw.total, rw.normalized] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(r.done as u8);
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let fail = |reason: String| Error::format("binary rollout archive", reason);
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos + n;
            if end > bytes.len() {
                return Err(fail(format!("truncated at byte {pos}")));
            }
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(4)? != BINARY_ARCHIVE_MAGIC {
            return Err(fail("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != ARCHIVE_FORMAT_VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let header: ArchiveHeader = serde_json::from_slice(take(hlen)?).map_err(|e| fail(e.to_string()))?;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut records = Vec::new();
        for i in 0..count {
            let u64_at = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());
            let f64_at = |s: &[u8]| f64::from_le_bytes(s.try_into().unwrap());
            let epoch = u64_at(take(8)?);
            let t = u64_at(take(8)?);
            let mut flat = [0.0; OBS_LEN];
            for v in &mut flat {
                *v = f64_at(take(8)?);
            }
            let action = take(1)?[0] as usize;
            let mut rw = [0.0; 5];
            for v in &mut rw {
                *v = f64_at(take(8)?);
            }
            let done = match take(1)?[0] {
                0 => false,
                1 => true,
                other => return Err(fail(format!("record {i}: bad done flag {other}"))),
            };
            let record = ArchiveRecord {
                epoch,
                t,
                obs: Observation::from_flat(&flat).expect("length is fixed"),
                action,
                reward: RewardBreakdown {
                    collision: rw[0],
                    speed: rw[1],
                    lane: rw[2],
                    total: rw[3],
                    normalized: rw[4],
                },
                done,
            };
            validate_record(&record).map_err(|reason| fail(format!("record {i}: {reason}")))?;
            records.push(record);
        }
        if pos != bytes.len() {
            return Err(fail("trailing bytes".into()));
        }
        check_version(&header)?;
        Ok(RolloutArchive { header, records })
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_file(path, |w| w.write_all(self.to_jsonl().as_bytes()))
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        write_file(path, |w| w.write_all(&self.to_binary()))
    }

    /// Reads either form, detected by the binary magic.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(BINARY_ARCHIVE_MAGIC) {
            Self::from_binary(&bytes)
        } else {
            Self::from_jsonl(BufReader::new(bytes.as_slice()))
        }
    }
}

fn validate_record(r: &ArchiveRecord) -> std::result::Result<(), String> {
    if r.action >= NUM_ACTIONS {
        return Err(format!("action id {} out of range", r.action));
    }
    if !r.obs.is_valid() {
        return Err("observation entries outside [-1, 1]".into());
    }
    Ok(())
}

fn check_version(h: &ArchiveHeader) -> Result<()> {
    if h.format_version != ARCHIVE_FORMAT_VERSION {
        return Err(Error::format(
            "rollout archive",
            format!("unsupported version {}", h.format_version),
        ));
    }
    Ok(())
}

pub(crate) fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}
