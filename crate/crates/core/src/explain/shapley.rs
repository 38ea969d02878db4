use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::toy_mdp::{TabularMeasure, TabularPolicy, ToyMdp, TOY_FEATURES};
use crate::env::{Observation, OBS_COLS, OBS_LEN, OBS_ROWS};
use crate::error::{Error, Result};
use crate::measure::BehaviorMeasure;
use crate::policy::{PolicyFunctional, PolicyOutput, PolicyParams};

/// Largest player count handled by exact enumeration.
pub const MAX_EXACT_FEATURES: usize = 20;

/// Default per-feature tolerance when matching dataset observations.
pub const DEFAULT_MATCH_TOLERANCE: f64 = 1e-6;

/// A cooperative game over `n_players`; coalitions are bit masks.
pub trait CoalitionGame: Sync {
    fn n_players(&self) -> usize;
    fn value(&self, coalition: u32) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub features: Vec<String>,
    pub phi: Vec<f64>,
    pub v_empty: f64,
    pub v_full: f64,
    /// True when coalition values come from dataset matching rather than an
    /// exact model.
    pub approximate: bool,
    pub mode: String,
}

impl ShapleyReport {
    /// Σφ − (v(F) − v(∅)); zero up to rounding.
    pub fn efficiency_gap(&self) -> f64 {
        self.phi.iter().sum::<f64>() - (self.v_full - self.v_empty)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,phi\n");
        for (f, p) in self.features.iter().zip(&self.phi) {
            out.push_str(&format!("{f},{p}\n"));
        }
        out
    }
}

/// Exact Shapley values by weighting every marginal contribution with
/// |S|!(n − |S| − 1)!/n!.
pub fn exact_shapley<G: CoalitionGame + ?Sized>(game: &G) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = game.n_players();
    if n > MAX_EXACT_FEATURES {
        return Err(Error::Intractable {
            features: n,
            limit: MAX_EXACT_FEATURES,
        });
    }
    let values = (0..1u32 << n)
        .into_par_iter()
        .map(|c| game.value(c))
        .collect::<Result<Vec<f64>>>()?;
    let fact: Vec<f64> = (0..=n)
        .scan(1.0, |acc, k| {
            if k > 0 {
                *acc *= k as f64;
            }
            Some(*acc)
        })
        .collect();
    let phi = (0..n)
        .map(|i| {
            let bit = 1u32 << i;
            (0..1u32 << n)
                .filter(|c| c & bit == 0)
                .map(|c| {
                    let s = c.count_ones() as usize;
                    fact[s] * fact[n - s - 1] / fact[n] * (values[(c | bit) as usize] - values[c as usize])
                })
                .sum()
        })
        .collect();
    Ok((phi, values))
}

fn report<G: CoalitionGame + ?Sized>(
    game: &G,
    features: Vec<String>,
    mode: &str,
    approximate: bool,
) -> Result<ShapleyReport> {
    let (phi, values) = exact_shapley(game)?;
    Ok(ShapleyReport {
        features,
        phi,
        v_empty: values[0],
        v_full: *values.last().expect("at least the empty coalition"),
        approximate,
        mode: mode.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Tabular mode

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TabularTarget {
    ExpectedReturn,
    Measure(TabularMeasure),
}

/// Players are the toy MDP's binary features; v(C) is the target under π_C.
pub struct TabularGame<'a> {
    pub mdp: &'a ToyMdp,
    pub policy: &'a TabularPolicy,
    pub target: &'a TabularTarget,
}

impl CoalitionGame for TabularGame<'_> {
    fn n_players(&self) -> usize {
        TOY_FEATURES
    }

    fn value(&self, coalition: u32) -> Result<f64> {
        let pi_c = self.mdp.marginalized(self.policy, coalition);
        Ok(match self.target {
            TabularTarget::ExpectedReturn => self.mdp.expected_return(&pi_c),
            TabularTarget::Measure(m) => m.evaluate(&pi_c),
        })
    }
}

pub fn tabular_shapley(mdp: &ToyMdp, policy: &TabularPolicy, target: &TabularTarget) -> Result<ShapleyReport> {
    mdp.validate_policy(policy)?;
    let game = TabularGame { mdp, policy, target };
    let names = (0..TOY_FEATURES).map(|f| format!("f{f}")).collect();
    report(&game, names, "tabular", false)
}

// ---------------------------------------------------------------------------
// Empirical mode

/// How the 25 observation entries are grouped into players.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureGrouping {
    /// One player per observation row (ego, npc0..npc3).
    Rows,
    /// One player per column (presence, x, y, vx, vy).
    Columns,
    /// One player per entry; 25 players, beyond exact enumeration.
    Individual,
    Custom {
        names: Vec<String>,
        groups: Vec<Vec<usize>>,
    },
}

impl FeatureGrouping {
    pub fn groups(&self) -> Result<(Vec<String>, Vec<Vec<usize>>)> {
        const ROWS: [&str; OBS_ROWS] = ["ego", "npc0", "npc1", "npc2", "npc3"];
        const COLS: [&str; OBS_COLS] = ["presence", "x", "y", "vx", "vy"];
        Ok(match self {
            FeatureGrouping::Rows => (
                ROWS.iter().map(|s| s.to_string()).collect(),
                (0..OBS_ROWS)
                    .map(|r| (0..OBS_COLS).map(|c| r * OBS_COLS + c).collect())
                    .collect(),
            ),
            FeatureGrouping::Columns => (
                COLS.iter().map(|s| s.to_string()).collect(),
                (0..OBS_COLS)
                    .map(|c| (0..OBS_ROWS).map(|r| r * OBS_COLS + c).collect())
                    .collect(),
            ),
            FeatureGrouping::Individual => (
                (0..OBS_LEN)
                    .map(|i| format!("{}.{}", ROWS[i / OBS_COLS], COLS[i % OBS_COLS]))
                    .collect(),
                (0..OBS_LEN).map(|i| vec![i]).collect(),
            ),
            FeatureGrouping::Custom { names, groups } => {
                if names.len() != groups.len() || groups.iter().flatten().any(|&i| i >= OBS_LEN) {
                    return Err(Error::Config(
                        "custom grouping needs one name per group and indices below 25".into(),
                    ));
                }
                (names.clone(), groups.clone())
            }
        })
    }
}

/// v(C) = m(π_C), where π_C(a|o) averages π over the dataset observations
/// that agree with o on every entry of the coalition's groups (within
/// `tolerance`). The observation itself always belongs to its pool.
pub struct EmpiricalGame {
    functional: PolicyFunctional,
    stored_outputs: Vec<PolicyOutput>,
    dataset: Vec<[f64; OBS_LEN]>,
    dataset_outputs: Vec<PolicyOutput>,
    groups: Vec<Vec<usize>>,
    tolerance: f64,
}

impl EmpiricalGame {
    pub fn new(
        measure: &BehaviorMeasure,
        params: &PolicyParams,
        dataset: &[Observation],
        groups: Vec<Vec<usize>>,
        tolerance: f64,
    ) -> Result<Self> {
        let functional = measure.functional()?;
        let stored_outputs = functional.observations.iter().map(|o| params.forward(o)).collect();
        Ok(EmpiricalGame {
            stored_outputs,
            dataset: dataset.iter().map(|o| o.flat()).collect(),
            dataset_outputs: dataset.iter().map(|o| params.forward(o)).collect(),
            functional,
            groups,
            tolerance,
        })
    }

    fn marginal_output(&self, index: usize, keys: &[usize]) -> PolicyOutput {
        let o = self.functional.observations[index].flat();
        let own = &self.stored_outputs[index];
        let mut probs = own.action_probs.clone();
        let mut value = own.value;
        let mut count = 1.0;
        for (d, out) in self.dataset.iter().zip(&self.dataset_outputs) {
            if keys.iter().all(|&k| (d[k] - o[k]).abs() <= self.tolerance) {
                probs.iter_mut().zip(&out.action_probs).for_each(|(p, q)| *p += q);
                value += out.value;
                count += 1.0;
            }
        }
        probs.iter_mut().for_each(|p| *p /= count);
        PolicyOutput::from_probs(probs, value / count)
    }
}

impl CoalitionGame for EmpiricalGame {
    fn n_players(&self) -> usize {
        self.groups.len()
    }

    fn value(&self, coalition: u32) -> Result<f64> {
        let keys: Vec<usize> = self
            .groups
            .iter()
            .enumerate()
            .filter(|(g, _)| coalition & (1 << g) != 0)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let outputs: Vec<PolicyOutput> = (0..self.functional.observations.len())
            .map(|i| self.marginal_output(i, &keys))
            .collect();
        self.functional.evaluate_outputs(&outputs)
    }
}

/// Shapley attribution of a behavior measure over observation feature groups,
/// with the marginalized policy estimated from `dataset`.
pub fn empirical_shapley(
    measure: &BehaviorMeasure,
    params: &PolicyParams,
    dataset: &[Observation],
    grouping: &FeatureGrouping,
    tolerance: f64,
) -> Result<ShapleyReport> {
    let (names, groups) = grouping.groups()?;
    if groups.len() > MAX_EXACT_FEATURES {
        return Err(Error::Intractable {
            features: groups.len(),
            limit: MAX_EXACT_FEATURES,
        });
    }
    let game = EmpiricalGame::new(measure, params, dataset, groups, tolerance)?;
    report(&game, names, "empirical", true)
}
