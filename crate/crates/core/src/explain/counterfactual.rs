use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::measure::BehaviorMeasure;
use crate::policy::{grad_scalar, Expr, PolicyFunctional, PolicyParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterfactualConfig {
    /// Desired measure value m*.
    pub target: f64,
    /// Weight of the KL term.
    pub k: f64,
    /// Steps between resets of the KL pivot to the current parameters.
    pub pivot_every: usize,
    pub steps: usize,
    /// Replace |m − m*| by a Huber penalty with this width.
    pub huber: Option<f64>,
    /// First trial step of the line search.
    pub initial_step: f64,
    /// Sufficient-decrease constant of the line search.
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Stop once the gradient norm falls to this level.
    pub grad_tol: f64,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        CounterfactualConfig {
            target: 0.0,
            k: 1.0,
            pivot_every: 25,
            steps: 200,
            huber: None,
            initial_step: 1.0,
            armijo: 1e-4,
            max_backtracks: 60,
            grad_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    /// Objective against the pivot in force for this step, after the step.
    pub objective: f64,
    pub measure: f64,
    pub kl_to_pivot: f64,
    pub step_size: f64,
    /// The pivot was reset to the parameters at the start of this step.
    pub pivot_reset: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CounterfactualResult {
    #[serde(skip)]
    pub params: Option<PolicyParams>,
    pub snapshot_id: String,
    pub initial_measure: f64,
    pub achieved: f64,
    pub target: f64,
    pub k: f64,
    /// Mean KL(π_θ₀ ‖ π_cf) over the evaluation observations.
    pub kl_from_start: f64,
    /// ‖θ_cf − θ₀‖₂.
    pub displacement: f64,
    pub steps_taken: usize,
    pub stop_reason: String,
    pub trace: Vec<TraceEntry>,
}

/// Expression of mean KL(p_pivot ‖ π_θ) over the observations at
/// `offset..offset + eval.len()`, plus the constant Σ p log p term.
fn kl_expr(pivot: &PolicyParams, eval: &[Observation], offset: usize) -> Expr {
    let n = eval.len() as f64;
    let mut terms = Vec::new();
    let mut constant = 0.0;
    for (i, o) in eval.iter().enumerate() {
        let out = pivot.forward(o);
        for (a, (&p, &lp)) in out.action_probs.iter().zip(&out.log_probs).enumerate() {
            if p > 0.0 {
                terms.push((-p / n, Expr::log_prob(offset + i, a)));
                constant += p * lp / n;
            }
        }
    }
    terms.push((1.0, Expr::constant(constant)));
    Expr::weighted(terms)
}

struct Objective {
    functional: PolicyFunctional,
    measure: PolicyFunctional,
    kl: PolicyFunctional,
}

fn objective(
    measure: &PolicyFunctional,
    pivot: &PolicyParams,
    eval: &[Observation],
    cfg: &CounterfactualConfig,
) -> Objective {
    let offset = measure.observations.len();
    let mut observations = measure.observations.clone();
    observations.extend_from_slice(eval);
    let gap = measure.expr.clone().shifted(-cfg.target);
    let penalty = match cfg.huber {
        Some(d) => gap.huber(d),
        None => gap.abs(),
    };
    let kl = kl_expr(pivot, eval, offset);
    let expr = Expr::weighted(vec![(1.0, penalty), (cfg.k, kl.clone())]);
    let kl_only = PolicyFunctional::new(eval.to_vec(), kl_expr(pivot, eval, 0));
    Objective {
        functional: PolicyFunctional::new(observations, expr),
        measure: measure.clone(),
        kl: kl_only,
    }
}

/// Mean KL(π_a ‖ π_b) over `obs`.
pub fn mean_kl(a: &PolicyParams, b: &PolicyParams, obs: &[Observation]) -> f64 {
    obs.iter()
        .map(|o| {
            let (pa, pb) = (a.forward(o), b.forward(o));
            pa.action_probs
                .iter()
                .zip(pa.log_probs.iter().zip(&pb.log_probs))
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, (la, lb))| p * (la - lb))
                .sum::<f64>()
        })
        .sum::<f64>()
        / obs.len() as f64
}

/// Minimizes |m(π_θ) − m*| + k·KL(π_pivot ‖ π_θ) by gradient descent with a
/// backtracking line search, resetting the pivot every `pivot_every` steps.
/// Entirely offline: only the stored observations are touched.
pub fn counterfactual(
    theta0: &PolicyParams,
    measure: &BehaviorMeasure,
    eval_obs: &[Observation],
    cfg: &CounterfactualConfig,
) -> Result<CounterfactualResult> {
    if eval_obs.is_empty() {
        return Err(Error::Contract(
            "counterfactual needs evaluation observations for the KL term".into(),
        ));
    }
    if !(cfg.k >= 0.0) || cfg.pivot_every == 0 || !cfg.target.is_finite() || !(cfg.initial_step > 0.0) {
        return Err(Error::Config(
            "counterfactual needs k >= 0, pivot_every > 0, a finite target and a positive step".into(),
        ));
    }
    let measure_fn = measure.functional()?;
    let initial_measure = measure_fn.evaluate(theta0)?;
    let mut theta = theta0.clone();
    let mut obj = objective(&measure_fn, theta0, eval_obs, cfg);
    let mut trace = Vec::new();
    let mut step_size = cfg.initial_step;
    let mut stop_reason = "step budget exhausted".to_string();
    let mut steps_taken = 0;

    for step in 0..cfg.steps {
        let reset = step > 0 && step % cfg.pivot_every == 0;
        if reset {
            obj = objective(&measure_fn, &theta, eval_obs, cfg);
            step_size = cfg.initial_step;
        }
        let (f0, grad) = grad_scalar(&theta, &obj.functional)?;
        if !f0.is_finite() || !grad.is_finite() {
            return Err(Error::Diverged(format!(
                "objective {f0} at step {step}; last trace entry {:?}",
                trace.last()
            )));
        }
        let g2 = grad.dot(&grad);
        if g2.sqrt() <= cfg.grad_tol {
            stop_reason = "gradient vanished".into();
            break;
        }
        let mut alpha = step_size;
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let cand = theta.offset_by(&grad, -alpha)?;
            let f = obj.functional.evaluate(&cand)?;
            if f.is_finite() && f <= f0 - cfg.armijo * alpha * g2 {
                accepted = Some((cand, f));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, f)) = accepted else {
            stop_reason = "line search found no decrease".into();
            break;
        };
        theta = next;
        steps_taken += 1;
        trace.push(TraceEntry {
            step,
            objective: f,
            measure: obj.measure.evaluate(&theta)?,
            kl_to_pivot: obj.kl.evaluate(&theta)?,
            step_size: alpha,
            pivot_reset: reset,
        });
        step_size = (alpha * 2.0).min(cfg.initial_step);
    }

    let displacement = theta
        .values()
        .iter()
        .zip(theta0.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(CounterfactualResult {
        snapshot_id: theta.snapshot_id(),
        initial_measure,
        achieved: measure_fn.evaluate(&theta)?,
        target: cfg.target,
        k: cfg.k,
        kl_from_start: mean_kl(theta0, &theta, eval_obs),
        displacement,
        steps_taken,
        stop_reason,
        trace,
        params: Some(theta),
    })
}
