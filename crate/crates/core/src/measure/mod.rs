//! Behavior measures: scalar functionals of the policy over fixed observation
//! sets, their exact gradients, and the bundled collision scenarios.
//!
//! A measure never touches the environment. It is compiled into a
//! [`PolicyFunctional`] over the observations it stores, so the value and the
//! gradient come from the same expression.

mod scenario;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Action, Observation};
use crate::error::{Error, Result};
use crate::policy::{grad_scalar, Expr, GradVector, PolicyFunctional, PolicyParams};

pub use scenario::{
    build_from_rollouts, Provenance, ScenarioEntry, ScenarioSet, Selection, SCENARIO_SCHEMA_VERSION,
    WEIGHT_SUM_TOLERANCE,
};

/// The six collision scenarios as shipped.
pub const COLLISION_FIXTURE_JSON: &str = include_str!("../../fixtures/m_c.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorMeasure {
    pub name: String,
    #[serde(flatten)]
    pub form: MeasureForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum MeasureForm {
    /// Σᵢ wᵢ π(aᵢ | oᵢ)
    MeanActionProb { scenarios: ScenarioSet },
    /// π(a | o_p) − π(a | o_q)
    ObservationContrast {
        o_p: Observation,
        o_q: Observation,
        action: Action,
    },
    /// π(a_p | o) − π(a_q | o)
    ActionContrast { obs: Observation, a_p: Action, a_q: Action },
    /// Σₖ cₖ mₖ
    WeightedCombination { terms: Vec<WeightedTerm> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedTerm {
    pub coef: f64,
    pub measure: BehaviorMeasure,
}

impl BehaviorMeasure {
    pub fn mean_action_prob(scenarios: ScenarioSet) -> Self {
        BehaviorMeasure {
            name: scenarios.name.clone(),
            form: MeasureForm::MeanActionProb { scenarios },
        }
    }

    pub fn observation_contrast(name: impl Into<String>, o_p: Observation, o_q: Observation, action: Action) -> Self {
        BehaviorMeasure {
            name: name.into(),
            form: MeasureForm::ObservationContrast { o_p, o_q, action },
        }
    }

    pub fn action_contrast(name: impl Into<String>, obs: Observation, a_p: Action, a_q: Action) -> Self {
        BehaviorMeasure {
            name: name.into(),
            form: MeasureForm::ActionContrast { obs, a_p, a_q },
        }
    }

    pub fn weighted_combination(name: impl Into<String>, terms: Vec<(f64, BehaviorMeasure)>) -> Self {
        BehaviorMeasure {
            name: name.into(),
            form: MeasureForm::WeightedCombination {
                terms: terms
                    .into_iter()
                    .map(|(coef, measure)| WeightedTerm { coef, measure })
                    .collect(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.form {
            MeasureForm::MeanActionProb { scenarios } => scenarios.validate(),
            MeasureForm::ObservationContrast { o_p, o_q, .. } => {
                if o_p.is_valid() && o_q.is_valid() {
                    Ok(())
                } else {
                    Err(Error::Contract(format!(
                        "`{}` stores an invalid observation",
                        self.name
                    )))
                }
            }
            MeasureForm::ActionContrast { obs, .. } => {
                if obs.is_valid() {
                    Ok(())
                } else {
                    Err(Error::Contract(format!(
                        "`{}` stores an invalid observation",
                        self.name
                    )))
                }
            }
            MeasureForm::WeightedCombination { terms } => {
                if terms.is_empty() {
                    return Err(Error::Contract(format!("combination `{}` has no terms", self.name)));
                }
                for t in terms {
                    if !t.coef.is_finite() {
                        return Err(Error::Contract(format!(
                            "combination `{}` has a non-finite coefficient",
                            self.name
                        )));
                    }
                    t.measure.validate()?;
                }
                Ok(())
            }
        }
    }

    /// Compiles the measure into a functional over its stored observations.
    pub fn functional(&self) -> Result<PolicyFunctional> {
        self.validate()?;
        let mut observations = Vec::new();
        let expr = self.compile(&mut observations);
        Ok(PolicyFunctional::new(observations, expr))
    }

    fn compile(&self, obs: &mut Vec<Observation>) -> Expr {
        let mut push = |o: Observation| {
            obs.push(o);
            obs.len() - 1
        };
        match &self.form {
            MeasureForm::MeanActionProb { scenarios } => Expr::weighted(
                scenarios
                    .entries
                    .iter()
                    .map(|e| (e.weight, Expr::prob(push(e.obs), e.action.id())))
                    .collect(),
            ),
            MeasureForm::ObservationContrast { o_p, o_q, action } => {
                let p = Expr::prob(push(*o_p), action.id());
                let q = Expr::prob(push(*o_q), action.id());
                p.minus(q)
            }
            MeasureForm::ActionContrast { obs: o, a_p, a_q } => {
                let i = push(*o);
                Expr::prob(i, a_p.id()).minus(Expr::prob(i, a_q.id()))
            }
            MeasureForm::WeightedCombination { terms } => {
                Expr::weighted(terms.iter().map(|t| (t.coef, t.measure.compile(obs))).collect())
            }
        }
    }

    pub fn evaluate(&self, params: &PolicyParams) -> Result<f64> {
        self.functional()?.evaluate(params)
    }

    pub fn gradient(&self, params: &PolicyParams) -> Result<GradVector> {
        Ok(self.value_and_gradient(params)?.1)
    }

    pub fn value_and_gradient(&self, params: &PolicyParams) -> Result<(f64, GradVector)> {
        grad_scalar(params, &self.functional()?)
    }

    /// Every observation the measure reads, in compile order.
    pub fn observations(&self) -> Result<Vec<Observation>> {
        Ok(self.functional()?.observations)
    }

    /// Parses either a full measure (has a `form` field) or a bare scenario
    /// set, which is read as a mean-action-probability measure.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let measure = if value.get("form").is_some() {
            serde_json::from_value(value)?
        } else {
            BehaviorMeasure::mean_action_prob(serde_json::from_value(value)?)
        };
        measure.validate()?;
        Ok(measure)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// The six collision scenarios as one uniformly weighted set.
pub fn collision_scenarios() -> ScenarioSet {
    ScenarioSet::from_json(COLLISION_FIXTURE_JSON).expect("bundled fixture is valid")
}

/// m_c: the mean over the LEFT, RIGHT and FASTER groups of the probability of
/// the group's action, each group uniform over its two scenarios.
pub fn collision_measure_fixture() -> BehaviorMeasure {
    let set = collision_scenarios();
    let terms = set
        .provenance
        .groups
        .iter()
        .map(|g| {
            (
                1.0 / 3.0,
                BehaviorMeasure::mean_action_prob(set.group(g).expect("group present")),
            )
        })
        .collect();
    BehaviorMeasure::weighted_combination("m_c", terms)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::archive::{ArchiveRecord, RolloutArchive};
    use crate::env::{RewardBreakdown, OBS_LEN};
    use crate::policy::NetworkShape;

    fn uniform_policy() -> PolicyParams {
        PolicyParams::init(NetworkShape::default(), 0)
            .unwrap()
            .with_zero_policy_head()
    }

    fn trained_like(seed: u64) -> PolicyParams {
        let p = PolicyParams::init(NetworkShape::default(), seed).unwrap();
        let v = p.values().iter().map(|x| x * 30.0).collect();
        p.with_values(v).unwrap()
    }

    fn obs(seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..OBS_LEN)
            .map(|i| if i % 5 == 0 { 1.0 } else { rng.random_range(-1.0..1.0) })
            .collect();
        Observation::from_flat(&v).unwrap()
    }

    #[test]
    fn fixture_spot_rows() {
        let set = collision_scenarios();
        assert_eq!(set.entries.len(), 6);
        assert_eq!(set.entries[1].obs.rows[0], [1.0, 1.0, 0.75, 0.375, 0.0]);
        assert_eq!(set.entries[4].obs.rows[2], [1.0, -0.026, -0.25, 0.013, 0.0]);
        let actions: Vec<_> = set.entries.iter().map(|e| e.action).collect();
        use Action::*;
        assert_eq!(actions, vec![Left, Left, Right, Right, Faster, Faster]);
    }

    #[test]
    fn uniform_policy_gives_one_fifth() {
        let p = uniform_policy();
        assert!((collision_measure_fixture().evaluate(&p).unwrap() - 0.2).abs() < 1e-12);
        let flat = BehaviorMeasure::mean_action_prob(collision_scenarios());
        assert!((flat.evaluate(&p).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn grouped_and_flat_forms_agree() {
        let p = trained_like(3);
        let a = collision_measure_fixture().evaluate(&p).unwrap();
        let b = BehaviorMeasure::mean_action_prob(collision_scenarios())
            .evaluate(&p)
            .unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn contrasts() {
        let p = trained_like(4);
        let o = obs(1);
        let same = BehaviorMeasure::action_contrast("c", o, Action::Left, Action::Left);
        assert_eq!(same.evaluate(&p).unwrap(), 0.0);
        let out = p.forward(&o);
        let c = BehaviorMeasure::action_contrast("c", o, Action::Faster, Action::Idle);
        assert_eq!(c.evaluate(&p).unwrap(), out.action_probs[3] - out.action_probs[1]);
        let q = obs(2);
        let oc = BehaviorMeasure::observation_contrast("o", o, q, Action::Right);
        let expected = out.action_probs[2] - p.forward(&q).action_probs[2];
        assert_eq!(oc.evaluate(&p).unwrap(), expected);
        assert!(oc.evaluate(&p).unwrap().abs() <= 1.0);
    }

    #[test]
    fn linearity_and_homogeneity() {
        let p = trained_like(5);
        let m1 = collision_measure_fixture();
        let m2 = BehaviorMeasure::action_contrast("c", obs(3), Action::Slower, Action::Right);
        let combo = BehaviorMeasure::weighted_combination("k", vec![(0.7, m1.clone()), (-2.5, m2.clone())]);
        let expected = 0.7 * m1.evaluate(&p).unwrap() - 2.5 * m2.evaluate(&p).unwrap();
        assert!((combo.evaluate(&p).unwrap() - expected).abs() < 1e-12);

        let g1 = m1.gradient(&p).unwrap();
        let scaled = BehaviorMeasure::weighted_combination("s", vec![(3.0, m1.clone())]);
        let gs = scaled.gradient(&p).unwrap();
        for (a, b) in gs.as_slice().iter().zip(g1.as_slice()) {
            assert!((a - 3.0 * b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
        let zero = BehaviorMeasure::weighted_combination("z", vec![(1.0, m1.clone()), (0.0, m2)]);
        assert_eq!(zero.gradient(&p).unwrap(), g1);
    }

    #[test]
    fn empty_set_is_a_contract_error() {
        let mut set = collision_scenarios();
        set.entries.clear();
        let m = BehaviorMeasure::mean_action_prob(set);
        assert!(matches!(m.evaluate(&uniform_policy()), Err(Error::Contract(_))));
    }

    #[test]
    fn bad_weights_rejected() {
        let mut set = collision_scenarios();
        set.entries[0].weight = 0.5;
        assert!(set.validate().is_err());
        set.entries[0].weight = -1.0 / 6.0;
        assert!(set.validate().is_err());
    }

    #[test]
    fn json_forms_roundtrip() {
        let m = BehaviorMeasure::weighted_combination(
            "k",
            vec![
                (0.5, collision_measure_fixture()),
                (
                    1.0,
                    BehaviorMeasure::observation_contrast("o", obs(1), obs(2), Action::Idle),
                ),
            ],
        );
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(BehaviorMeasure::from_json(&text).unwrap(), m);
        let bare = BehaviorMeasure::from_json(COLLISION_FIXTURE_JSON).unwrap();
        assert_eq!(bare.name, "m_c");
        assert!(matches!(bare.form, MeasureForm::MeanActionProb { .. }));
    }

    fn archive_with(obs: &[(u64, u64, Observation)]) -> RolloutArchive {
        let mut a = RolloutArchive::new("cfg".into(), 0, "ckpt".into());
        for (epoch, t, o) in obs {
            a.records.push(ArchiveRecord {
                epoch: *epoch,
                t: *t,
                obs: *o,
                action: 1,
                reward: RewardBreakdown::default(),
                done: false,
            });
        }
        a
    }

    #[test]
    fn build_uniform_weights_and_errors() {
        let a = archive_with(&[(0, 0, obs(1)), (0, 1, obs(2)), (1, 0, obs(3))]);
        let sel = [
            Selection {
                epoch: 0,
                t: 1,
                action: Action::Left,
            },
            Selection {
                epoch: 1,
                t: 0,
                action: Action::Right,
            },
        ];
        let set = build_from_rollouts(&a, &sel, "s").unwrap();
        assert_eq!(set.entries.iter().map(|e| e.weight).collect::<Vec<_>>(), vec![0.5, 0.5]);
        assert_eq!(set.entries[1].obs, obs(3));
        assert_eq!(set.provenance.checkpoint_id.as_deref(), Some("ckpt"));

        let dup = [sel[0], sel[0]];
        assert!(matches!(
            build_from_rollouts(&a, &dup, "s"),
            Err(Error::DuplicateSelection { epoch: 0, t: 1 })
        ));
        let missing = [Selection {
            epoch: 9,
            t: 4,
            action: Action::Idle,
        }];
        let err = build_from_rollouts(&a, &missing, "s").unwrap_err();
        assert!(matches!(err, Error::MissingRecord { epoch: 9, t: 4 }));
        assert!(err.to_string().contains("epoch 9, t 4"));
    }

    #[test]
    fn fixture_regenerates_from_archive() {
        let fixture = collision_scenarios();
        let recs: Vec<_> = fixture
            .entries
            .iter()
            .map(|e| (e.epoch.unwrap(), e.t.unwrap(), e.obs))
            .collect();
        let mut a = archive_with(&recs);
        a.records.insert(0, archive_with(&[(0, 0, obs(9))]).records[0].clone());
        let sel: Vec<_> = fixture
            .entries
            .iter()
            .map(|e| Selection {
                epoch: e.epoch.unwrap(),
                t: e.t.unwrap(),
                action: e.action,
            })
            .collect();
        let rebuilt = build_from_rollouts(&a, &sel, "m_c").unwrap();
        for (x, y) in rebuilt.entries.iter().zip(&fixture.entries) {
            assert_eq!(
                (x.obs, x.action, x.weight, x.epoch, x.t),
                (y.obs, y.action, y.weight, y.epoch, y.t)
            );
        }
    }

    #[test]
    fn value_depends_only_on_stored_observations() {
        // Two parameter vectors that differ only in first-layer weights attached
        // to an input coordinate that is zero in every stored observation must
        // give the same value.
        let m = BehaviorMeasure::mean_action_prob(collision_scenarios().group("left").unwrap());
        let stored = m.observations().unwrap();
        let unused: Vec<usize> = (0..OBS_LEN)
            .filter(|&i| stored.iter().all(|o| o.flat()[i] == 0.0))
            .collect();
        assert!(!unused.is_empty());
        let p = trained_like(6);
        let mut v = p.values().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for row in 0..64 {
            for &i in &unused {
                v[row * OBS_LEN + i] = rng.random_range(-5.0..5.0);
            }
        }
        let q = p.with_values(v).unwrap();
        assert_ne!(p, q);
        assert_eq!(m.evaluate(&p).unwrap().to_bits(), m.evaluate(&q).unwrap().to_bits());
    }
}
