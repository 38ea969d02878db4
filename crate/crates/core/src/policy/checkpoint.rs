//! Binary checkpoint files with a JSON sidecar.
//!
//! Layout (little-endian): magic `BXCK`, version u32, input u32, actions u32,
//! activation u32 (0 tanh, 1 relu), hidden layer count u32, each hidden size
//! u32, seed u64, step u64, parameter count u64, then the parameters as f64.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::network::{Activation, NetworkShape, PolicyParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BXCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub seed: u64,
    /// Environment steps consumed when the snapshot was taken.
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub shape: NetworkShape,
    pub seed: u64,
    pub step: u64,
    pub param_count: usize,
    pub params_sha256: String,
    pub snapshot_id: String,
}

impl Checkpoint {
    pub fn new(params: PolicyParams, seed: u64, step: u64) -> Self {
        Checkpoint { params, seed, step }
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            format_version: CHECKPOINT_VERSION,
            shape: self.params.shape().clone(),
            seed: self.seed,
            step: self.step,
            param_count: self.params.len(),
            params_sha256: crate::util::hash_f64s(self.params.values()),
            snapshot_id: self.params.snapshot_id(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = self.params.shape();
        let mut out = Vec::with_capacity(64 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(shape.input as u32).to_le_bytes());
        out.extend_from_slice(&(shape.actions as u32).to_le_bytes());
        let act: u32 = match shape.activation {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        };
        out.extend_from_slice(&act.to_le_bytes());
        out.extend_from_slice(&(shape.hidden.len() as u32).to_le_bytes());
        for h in &shape.hidden {
            out.extend_from_slice(&(*h as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let input = r.u32()? as usize;
        let actions = r.u32()? as usize;
        let activation = match r.u32()? {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            other => return Err(Error::format("checkpoint", format!("unknown activation code {other}"))),
        };
        let n_hidden = r.u32()? as usize;
        if n_hidden > 64 {
            return Err(Error::format("checkpoint", "implausible hidden layer count"));
        }
        let hidden = (0..n_hidden)
            .map(|_| r.u32().map(|h| h as usize))
            .collect::<Result<Vec<_>>>()?;
        let shape = NetworkShape {
            input,
            hidden,
            actions,
            activation,
        };
        shape
            .validate()
            .map_err(|e| Error::format("checkpoint", e.to_string()))?;
        let seed = r.u64()?;
        let step = r.u64()?;
        let n = r.u64()? as usize;
        if n != shape.param_count() {
            return Err(Error::format(
                "checkpoint",
                format!("{n} parameters stored, shape needs {}", shape.param_count()),
            ));
        }
        if r.remaining() != 8 * n {
            return Err(Error::format("checkpoint", "parameter block length mismatch"));
        }
        let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let params = PolicyParams::new(shape, values).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        Ok(Checkpoint { params, seed, step })
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the binary file at `path` and the sidecar at `path.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let side = Self::sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.meta())?;
        fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
    }

    /// Loads the binary file; if a sidecar exists it must agree with the contents.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt = Self::from_bytes(&bytes)?;
        let side = Self::sidecar_path(path);
        if side.exists() {
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let meta: CheckpointMeta = serde_json::from_str(&text)?;
            let actual = ckpt.meta();
            if meta.params_sha256 != actual.params_sha256 {
                return Err(Error::Provenance {
                    expected: meta.params_sha256,
                    actual: actual.params_sha256,
                });
            }
        }
        Ok(ckpt)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let shape = NetworkShape {
            hidden: vec![8, 4],
            ..NetworkShape::default()
        };
        Checkpoint::new(PolicyParams::init(shape, 9).unwrap(), 9, 4096)
    }

    #[test]
    fn header_layout() {
        let b = sample().to_bytes();
        assert_eq!(&b[..4], b"BXCK");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 25);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[24..28].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(b[28..32].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(b[32..40].try_into().unwrap()), 9);
        assert_eq!(u64::from_le_bytes(b[40..48].try_into().unwrap()), 4096);
        let n = u64::from_le_bytes(b[48..56].try_into().unwrap()) as usize;
        assert_eq!(b.len(), 56 + 8 * n);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let b = sample().to_bytes();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { .. })));
        assert!(matches!(
            Checkpoint::from_bytes(&b[..b.len() - 3]),
            Err(Error::Format { .. })
        ));
        let mut v2 = b.clone();
        v2[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(Error::Format { .. })));
    }

    #[test]
    fn save_and_load_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt_0000");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
        let meta: CheckpointMeta =
            serde_json::from_str(&fs::read_to_string(Checkpoint::sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(meta.snapshot_id, c.params.snapshot_id());
        assert_eq!(meta.shape.hidden, vec![8, 4]);
    }

    #[test]
    fn tampered_parameters_fail_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let c = sample();
        c.save(&path).unwrap();
        let mut b = fs::read(&path).unwrap();
        let last = b.len() - 1;
        b[last] ^= 1;
        fs::write(&path, b).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Provenance { .. })));
    }
}
