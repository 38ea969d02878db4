use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};

pub const RECORD_DUMP_VERSION: u32 = 1;

/// One buffered transition z = (s, a, r, log π_old, v_old, Â).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub epoch: u64,
    /// Position in the epoch's batch: `env * steps_per_env + step`.
    pub t: u64,
    pub obs: Observation,
    pub action: usize,
    /// The reward the trainer optimized (normalized or raw per config).
    pub reward: f64,
    pub log_prob_old: f64,
    pub value_old: f64,
    /// Raw GAE advantage, before any minibatch normalization.
    pub advantage: f64,
    pub return_to_go: f64,
}

/// All records of one epoch, tagged with the snapshot that collected them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordDump {
    pub format_version: u32,
    pub epoch: u64,
    pub snapshot_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub records: Vec<TrainingRecord>,
}

impl RecordDump {
    /// Gzip-compressed JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::archive::write_file(path, |w| {
            let mut enc = GzEncoder::new(w, Compression::fast());
            serde_json::to_writer(&mut enc, self).map_err(std::io::Error::other)?;
            enc.finish()?.flush()
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        GzDecoder::new(file)
            .read_to_string(&mut text)
            .map_err(|e| Error::io(path, e))?;
        let dump: RecordDump = serde_json::from_str(&text)?;
        if dump.format_version != RECORD_DUMP_VERSION {
            return Err(Error::format(
                "record dump",
                format!("unsupported version {}", dump.format_version),
            ));
        }
        Ok(dump)
    }
}
