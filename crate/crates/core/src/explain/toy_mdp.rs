//! A five-state chain with two actions and three binary state features,
//! solved exactly by linear algebra.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOY_STATES: usize = 5;
pub const TOY_ACTIONS: usize = 2;
pub const TOY_FEATURES: usize = 3;

/// Stochastic policy table π(a|s), rows sum to one.
pub type TabularPolicy = Vec<[f64; TOY_ACTIONS]>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyMdp {
    /// `transitions[s][a][s']`
    pub transitions: Vec<[[f64; TOY_STATES]; TOY_ACTIONS]>,
    pub rewards: Vec<[f64; TOY_ACTIONS]>,
    /// Binary features of each state.
    pub features: Vec<[u8; TOY_FEATURES]>,
    pub initial: [f64; TOY_STATES],
    pub gamma: f64,
}

impl ToyMdp {
    /// Chain 0..4: action 0 moves left, action 1 moves right, each succeeding
    /// with probability 0.8. Reward 1 in the last state, minus 0.05 for moving
    /// right. Features are the binary digits of the state index.
    pub fn chain() -> Self {
        let mut transitions = vec![[[0.0; TOY_STATES]; TOY_ACTIONS]; TOY_STATES];
        let mut rewards = vec![[0.0; TOY_ACTIONS]; TOY_STATES];
        for s in 0..TOY_STATES {
            let left = s.saturating_sub(1);
            let right = (s + 1).min(TOY_STATES - 1);
            transitions[s][0][left] += 0.8;
            transitions[s][0][s] += 0.2;
            transitions[s][1][right] += 0.8;
            transitions[s][1][s] += 0.2;
            let goal = if s == TOY_STATES - 1 { 1.0 } else { 0.0 };
            rewards[s] = [goal, goal - 0.05];
        }
        let features = (0..TOY_STATES)
            .map(|s| [(s & 1) as u8, ((s >> 1) & 1) as u8, ((s >> 2) & 1) as u8])
            .collect();
        ToyMdp {
            transitions,
            rewards,
            features,
            initial: [0.2; TOY_STATES],
            gamma: 0.9,
        }
    }

    pub fn validate_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.len() != TOY_STATES {
            return Err(Error::Contract("tabular policy needs one row per state".into()));
        }
        for (s, row) in policy.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Contract(format!("policy row {s} is not a distribution")));
            }
        }
        Ok(())
    }

    fn state_matrix(&self, policy: &TabularPolicy) -> (DMatrix<f64>, DVector<f64>) {
        let p = DMatrix::from_fn(TOY_STATES, TOY_STATES, |s, s2| {
            (0..TOY_ACTIONS)
                .map(|a| policy[s][a] * self.transitions[s][a][s2])
                .sum()
        });
        let r = DVector::from_fn(TOY_STATES, |s, _| {
            (0..TOY_ACTIONS).map(|a| policy[s][a] * self.rewards[s][a]).sum()
        });
        (p, r)
    }

    fn resolvent(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let m = DMatrix::<f64>::identity(TOY_STATES, TOY_STATES) - p * self.gamma;
        m.try_inverse().expect("I - γP is invertible for γ < 1")
    }

    /// V^π by solving (I − γP_π) V = r_π.
    pub fn state_values(&self, policy: &TabularPolicy) -> Vec<f64> {
        let (p, r) = self.state_matrix(policy);
        (self.resolvent(&p) * r).iter().copied().collect()
    }

    /// J(π) = Σ_s μ₀(s) V^π(s).
    pub fn expected_return(&self, policy: &TabularPolicy) -> f64 {
        self.state_values(policy)
            .iter()
            .zip(&self.initial)
            .map(|(v, m)| v * m)
            .sum()
    }

    /// Normalized discounted occupancy d(s) = (1 − γ) Σ_t γᵗ P(s_t = s).
    pub fn occupancy(&self, policy: &TabularPolicy) -> Vec<f64> {
        let (p, _) = self.state_matrix(policy);
        let mu = DVector::from_row_slice(&self.initial);
        let d = self.resolvent(&p).transpose() * mu * (1.0 - self.gamma);
        d.iter().copied().collect()
    }

    /// π_C(a|s) = Σ_{s'} p(s' | s_C) π(a|s'), where p(s'|s_C) ∝ d(s') over the
    /// states agreeing with s on the features in `coalition` (a bit mask).
    pub fn marginalized(&self, policy: &TabularPolicy, coalition: u32) -> TabularPolicy {
        let d = self.occupancy(policy);
        (0..TOY_STATES)
            .map(|s| {
                let matches: Vec<usize> = (0..TOY_STATES)
                    .filter(|&s2| {
                        (0..TOY_FEATURES)
                            .all(|f| coalition & (1 << f) == 0 || self.features[s][f] == self.features[s2][f])
                    })
                    .collect();
                let z: f64 = matches.iter().map(|&s2| d[s2]).sum();
                let mut row = [0.0; TOY_ACTIONS];
                for (a, slot) in row.iter_mut().enumerate() {
                    *slot = matches.iter().map(|&s2| d[s2] * policy[s2][a]).sum::<f64>() / z;
                }
                row
            })
            .collect()
    }
}

/// Σ w π(a|s) over fixed (state, action, weight) triples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMeasure {
    pub terms: Vec<(usize, usize, f64)>,
}

impl TabularMeasure {
    pub fn evaluate(&self, policy: &TabularPolicy) -> f64 {
        self.terms.iter().map(|&(s, a, w)| w * policy[s][a]).sum()
    }
}
