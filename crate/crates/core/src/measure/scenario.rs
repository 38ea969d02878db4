use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::RolloutArchive;
use crate::env::{Action, Observation};
use crate::error::{Error, Result};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

/// Tolerance on the weight sum of a scenario set.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub obs: Observation,
    pub action: Action,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<String>,
}

/// Weighted (observation, action) pairs; weights are positive and sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub schema_version: u32,
    pub name: String,
    pub entries: Vec<ScenarioEntry>,
    #[serde(default)]
    pub provenance: Provenance,
}

/// One pick from a rollout archive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub epoch: u64,
    pub t: u64,
    pub action: Action,
}

impl ScenarioSet {
    /// Uniformly weighted set over `pairs`.
    pub fn uniform(name: impl Into<String>, pairs: Vec<(Observation, Action)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Contract("scenario set needs at least one entry".into()));
        }
        let w = 1.0 / pairs.len() as f64;
        let set = ScenarioSet {
            schema_version: SCENARIO_SCHEMA_VERSION,
            name: name.into(),
            entries: pairs
                .into_iter()
                .map(|(obs, action)| ScenarioEntry {
                    obs,
                    action,
                    weight: w,
                    group: None,
                    epoch: None,
                    t: None,
                })
                .collect(),
            provenance: Provenance {
                source: "constructed".into(),
                ..Provenance::default()
            },
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::format(
                "scenario file",
                format!("unsupported schema version {}", self.schema_version),
            ));
        }
        if self.entries.is_empty() {
            return Err(Error::Contract(format!("scenario set `{}` is empty", self.name)));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::Contract(format!(
                    "entry {i} of `{}` has weight {}",
                    self.name, e.weight
                )));
            }
            if !e.obs.is_valid() {
                return Err(Error::Contract(format!(
                    "entry {i} of `{}` has an invalid observation",
                    self.name
                )));
            }
        }
        let sum: f64 = self.entries.iter().map(|e| e.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::Contract(format!("weights of `{}` sum to {sum}", self.name)));
        }
        Ok(())
    }

    /// Entries carrying `group`, reweighted uniformly.
    pub fn group(&self, group: &str) -> Result<ScenarioSet> {
        let pairs: Vec<_> = self
            .entries
            .iter()
            .filter(|e| e.group.as_deref() == Some(group))
            .map(|e| (e.obs, e.action))
            .collect();
        let mut set = ScenarioSet::uniform(format!("{}:{group}", self.name), pairs)?;
        set.provenance = self.provenance.clone();
        Ok(set)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: ScenarioSet = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

/// Uniform scenario set from archive picks, with provenance copied from the
/// archive header and each entry tagged with its (epoch, t).
pub fn build_from_rollouts(archive: &RolloutArchive, selections: &[Selection], name: &str) -> Result<ScenarioSet> {
    let index = archive.index()?;
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(selections.len());
    for s in selections {
        if !seen.insert((s.epoch, s.t)) {
            return Err(Error::DuplicateSelection { epoch: s.epoch, t: s.t });
        }
        let i = *index
            .get(&(s.epoch, s.t))
            .ok_or(Error::MissingRecord { epoch: s.epoch, t: s.t })?;
        pairs.push((archive.records[i].obs, s.action));
    }
    let mut set = ScenarioSet::uniform(name, pairs)?;
    for (e, s) in set.entries.iter_mut().zip(selections) {
        e.epoch = Some(s.epoch);
        e.t = Some(s.t);
    }
    set.provenance = Provenance {
        source: "rollout archive".into(),
        checkpoint_id: Some(archive.header.checkpoint_id.clone()),
        config_hash: Some(archive.header.config_hash.clone()),
        seed: Some(archive.header.seed),
        groups: Vec::new(),
    };
    Ok(set)
}
