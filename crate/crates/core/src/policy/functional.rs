//! Differentiable scalar functionals of policy outputs over a fixed observation list.
//!
//! An [`Expr`] is compiled into a flat tape; the forward sweep evaluates it from
//! the network outputs, the reverse sweep yields adjoints for every referenced
//! probability, log-probability, logit and value, which are then pushed through
//! the softmax and the network.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::network::{GradVector, PolicyOutput, PolicyParams};
use crate::env::Observation;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Expr {
    Const {
        value: f64,
    },
    /// π(action | observations[obs])
    Prob {
        obs: usize,
        action: usize,
    },
    LogProb {
        obs: usize,
        action: usize,
    },
    Logit {
        obs: usize,
        action: usize,
    },
    Value {
        obs: usize,
    },
    /// Σ cᵢ · eᵢ
    Weighted {
        terms: Vec<(f64, Expr)>,
    },
    Mul {
        a: Box<Expr>,
        b: Box<Expr>,
    },
    Affine {
        scale: f64,
        shift: f64,
        arg: Box<Expr>,
    },
    Log {
        arg: Box<Expr>,
    },
    Exp {
        arg: Box<Expr>,
    },
    Tanh {
        arg: Box<Expr>,
    },
    Relu {
        arg: Box<Expr>,
    },
    /// Subgradient 0 at the kink.
    Abs {
        arg: Box<Expr>,
    },
    /// Smooth |x|: x²/(2δ) inside [-δ, δ], |x| - δ/2 outside.
    Huber {
        delta: f64,
        arg: Box<Expr>,
    },
    /// Subgradient 0 outside the open interval.
    Clip {
        lo: f64,
        hi: f64,
        arg: Box<Expr>,
    },
    Min {
        a: Box<Expr>,
        b: Box<Expr>,
    },
    Max {
        a: Box<Expr>,
        b: Box<Expr>,
    },
    /// Evaluates, but has no usable derivative.
    Round {
        arg: Box<Expr>,
    },
    /// Evaluates, but has no usable derivative.
    Sign {
        arg: Box<Expr>,
    },
}

impl Expr {
    pub fn constant(value: f64) -> Expr {
        Expr::Const { value }
    }

    pub fn prob(obs: usize, action: usize) -> Expr {
        Expr::Prob { obs, action }
    }

    pub fn log_prob(obs: usize, action: usize) -> Expr {
        Expr::LogProb { obs, action }
    }

    pub fn weighted(terms: Vec<(f64, Expr)>) -> Expr {
        Expr::Weighted { terms }
    }

    pub fn scaled(self, c: f64) -> Expr {
        Expr::weighted(vec![(c, self)])
    }

    pub fn minus(self, other: Expr) -> Expr {
        Expr::weighted(vec![(1.0, self), (-1.0, other)])
    }

    pub fn plus(self, other: Expr) -> Expr {
        Expr::weighted(vec![(1.0, self), (1.0, other)])
    }

    pub fn shifted(self, shift: f64) -> Expr {
        Expr::Affine {
            scale: 1.0,
            shift,
            arg: Box::new(self),
        }
    }

    pub fn abs(self) -> Expr {
        Expr::Abs { arg: Box::new(self) }
    }

    pub fn huber(self, delta: f64) -> Expr {
        Expr::Huber {
            delta,
            arg: Box::new(self),
        }
    }
}

/// A scalar built from policy outputs at a fixed list of observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFunctional {
    pub observations: Vec<Observation>,
    pub expr: Expr,
}

impl PolicyFunctional {
    pub fn new(observations: Vec<Observation>, expr: Expr) -> Self {
        PolicyFunctional { observations, expr }
    }

    pub fn evaluate(&self, params: &PolicyParams) -> Result<f64> {
        let tape = Tape::compile(&self.expr, self.observations.len(), params.shape().actions)?;
        let outputs = tape.forward_outputs(params, &self.observations);
        Ok(tape.forward(&outputs).last().copied().unwrap_or(0.0))
    }

    /// Evaluates the expression on given outputs, one per stored observation,
    /// instead of running the network.
    pub fn evaluate_outputs(&self, outputs: &[PolicyOutput]) -> Result<f64> {
        if outputs.len() != self.observations.len() {
            return Err(Error::Contract(format!(
                "{} outputs supplied for {} observations",
                outputs.len(),
                self.observations.len()
            )));
        }
        let actions = outputs.first().map_or(usize::MAX, |o| o.action_probs.len());
        let tape = Tape::compile(&self.expr, self.observations.len(), actions)?;
        let map: BTreeMap<usize, &PolicyOutput> = tape.referenced_obs().into_iter().map(|o| (o, &outputs[o])).collect();
        Ok(tape.forward(&map).last().copied().unwrap_or(0.0))
    }
}

/// Value and exact gradient of `functional` at `params`.
pub fn grad_scalar(params: &PolicyParams, functional: &PolicyFunctional) -> Result<(f64, GradVector)> {
    let tape = Tape::compile(&functional.expr, functional.observations.len(), params.shape().actions)?;
    if let Some(op) = tape.nondifferentiable() {
        return Err(Error::UnsupportedOp(op.to_string()));
    }
    let mut grad = GradVector::zeros(params.len());
    let caches: BTreeMap<usize, _> = tape
        .referenced_obs()
        .into_iter()
        .map(|o| (o, params.forward_input(&functional.observations[o].flat())))
        .collect();
    let outputs: BTreeMap<usize, &PolicyOutput> = caches.iter().map(|(o, c)| (*o, &c.output)).collect();
    let values = tape.forward(&outputs);
    let value = values.last().copied().unwrap_or(0.0);
    let adjoints = tape.backward(&values);

    let actions = params.shape().actions;
    let mut d_logits: BTreeMap<usize, (Vec<f64>, f64)> =
        caches.keys().map(|o| (*o, (vec![0.0; actions], 0.0))).collect();
    for (node, adj) in tape.nodes.iter().zip(&adjoints) {
        let Node::Leaf(leaf) = node else { continue };
        if *adj == 0.0 {
            continue;
        }
        let (obs, action) = (leaf.obs, leaf.action);
        let out = outputs[&obs];
        let entry = d_logits.get_mut(&obs).unwrap();
        match leaf.kind {
            LeafKind::Prob => {
                let pa = out.action_probs[action];
                for (j, d) in entry.0.iter_mut().enumerate() {
                    let delta = if j == action { 1.0 } else { 0.0 };
                    *d += adj * pa * (delta - out.action_probs[j]);
                }
            }
            LeafKind::LogProb => {
                for (j, d) in entry.0.iter_mut().enumerate() {
                    let delta = if j == action { 1.0 } else { 0.0 };
                    *d += adj * (delta - out.action_probs[j]);
                }
            }
            LeafKind::Logit => entry.0[action] += adj,
            LeafKind::Value => entry.1 += adj,
        }
    }
    for (obs, (dl, dv)) in &d_logits {
        params.backward(&caches[obs], dl, *dv, grad.as_mut_slice());
    }
    Ok((value, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum LeafKind {
    Prob,
    LogProb,
    Logit,
    Value,
}

#[derive(Clone, Copy, Debug)]
struct Leaf {
    kind: LeafKind,
    obs: usize,
    action: usize,
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Affine(f64, f64),
    Log,
    Exp,
    Tanh,
    Relu,
    Abs,
    Huber(f64),
    Clip(f64, f64),
    Round,
    Sign,
}

#[derive(Clone, Debug)]
enum Node {
    Const(f64),
    Leaf(Leaf),
    Weighted(Vec<(f64, usize)>),
    Mul(usize, usize),
    Min(usize, usize),
    Max(usize, usize),
    Unary(Unary, usize),
}

/// Topologically ordered node list; the last node is the output.
struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    fn compile(expr: &Expr, n_obs: usize, n_actions: usize) -> Result<Tape> {
        let mut tape = Tape { nodes: Vec::new() };
        tape.push_expr(expr, n_obs, n_actions)?;
        Ok(tape)
    }

    fn push(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    fn push_expr(&mut self, expr: &Expr, n_obs: usize, n_actions: usize) -> Result<usize> {
        let leaf = |kind, obs: usize, action: usize| -> Result<Node> {
            if obs >= n_obs {
                return Err(Error::Contract(format!(
                    "observation index {obs} out of range ({n_obs} stored)"
                )));
            }
            if action >= n_actions {
                return Err(Error::Contract(format!("action index {action} out of range")));
            }
            Ok(Node::Leaf(Leaf { kind, obs, action }))
        };
        let node = match expr {
            Expr::Const { value } => Node::Const(*value),
            Expr::Prob { obs, action } => leaf(LeafKind::Prob, *obs, *action)?,
            Expr::LogProb { obs, action } => leaf(LeafKind::LogProb, *obs, *action)?,
            Expr::Logit { obs, action } => leaf(LeafKind::Logit, *obs, *action)?,
            Expr::Value { obs } => leaf(LeafKind::Value, *obs, 0)?,
            Expr::Weighted { terms } => {
                let mut ids = Vec::with_capacity(terms.len());
                for (c, e) in terms {
                    ids.push((*c, self.push_expr(e, n_obs, n_actions)?));
                }
                Node::Weighted(ids)
            }
            Expr::Mul { a, b } | Expr::Min { a, b } | Expr::Max { a, b } => {
                let ia = self.push_expr(a, n_obs, n_actions)?;
                let ib = self.push_expr(b, n_obs, n_actions)?;
                match expr {
                    Expr::Mul { .. } => Node::Mul(ia, ib),
                    Expr::Min { .. } => Node::Min(ia, ib),
                    _ => Node::Max(ia, ib),
                }
            }
            Expr::Affine { scale, shift, arg } => self.unary(Unary::Affine(*scale, *shift), arg, n_obs, n_actions)?,
            Expr::Log { arg } => self.unary(Unary::Log, arg, n_obs, n_actions)?,
            Expr::Exp { arg } => self.unary(Unary::Exp, arg, n_obs, n_actions)?,
            Expr::Tanh { arg } => self.unary(Unary::Tanh, arg, n_obs, n_actions)?,
            Expr::Relu { arg } => self.unary(Unary::Relu, arg, n_obs, n_actions)?,
            Expr::Abs { arg } => self.unary(Unary::Abs, arg, n_obs, n_actions)?,
            Expr::Huber { delta, arg } => {
                if !(*delta > 0.0) {
                    return Err(Error::Contract("huber delta must be positive".into()));
                }
                self.unary(Unary::Huber(*delta), arg, n_obs, n_actions)?
            }
            Expr::Clip { lo, hi, arg } => self.unary(Unary::Clip(*lo, *hi), arg, n_obs, n_actions)?,
            Expr::Round { arg } => self.unary(Unary::Round, arg, n_obs, n_actions)?,
            Expr::Sign { arg } => self.unary(Unary::Sign, arg, n_obs, n_actions)?,
        };
        Ok(self.push(node))
    }

    fn unary(&mut self, op: Unary, arg: &Expr, n_obs: usize, n_actions: usize) -> Result<Node> {
        Ok(Node::Unary(op, self.push_expr(arg, n_obs, n_actions)?))
    }

    fn nondifferentiable(&self) -> Option<&'static str> {
        self.nodes.iter().find_map(|n| match n {
            Node::Unary(Unary::Round, _) => Some("round"),
            Node::Unary(Unary::Sign, _) => Some("sign"),
            _ => None,
        })
    }

    fn referenced_obs(&self) -> Vec<usize> {
        let mut obs: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf(l) => Some(l.obs),
                _ => None,
            })
            .collect();
        obs.sort_unstable();
        obs.dedup();
        obs
    }

    fn forward_outputs(&self, params: &PolicyParams, observations: &[Observation]) -> BTreeMap<usize, PolicyOutput> {
        self.referenced_obs()
            .into_iter()
            .map(|o| (o, params.forward(&observations[o])))
            .collect()
    }

    fn forward<O: std::borrow::Borrow<PolicyOutput>>(&self, outputs: &BTreeMap<usize, O>) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let x = match node {
                Node::Const(c) => *c,
                Node::Leaf(l) => {
                    let out = outputs[&l.obs].borrow();
                    match l.kind {
                        LeafKind::Prob => out.action_probs[l.action],
                        LeafKind::LogProb => out.log_probs[l.action],
                        LeafKind::Logit => out.logits[l.action],
                        LeafKind::Value => out.value,
                    }
                }
                Node::Weighted(terms) => terms.iter().map(|(c, i)| c * v[*i]).sum(),
                Node::Mul(a, b) => v[*a] * v[*b],
                Node::Min(a, b) => v[*a].min(v[*b]),
                Node::Max(a, b) => v[*a].max(v[*b]),
                Node::Unary(op, a) => {
                    let x = v[*a];
                    match *op {
                        Unary::Affine(s, t) => s * x + t,
                        Unary::Log => x.ln(),
                        Unary::Exp => x.exp(),
                        Unary::Tanh => x.tanh(),
                        Unary::Relu => x.max(0.0),
                        Unary::Abs => x.abs(),
                        Unary::Huber(d) => {
                            if x.abs() <= d {
                                x * x / (2.0 * d)
                            } else {
                                x.abs() - 0.5 * d
                            }
                        }
                        Unary::Clip(lo, hi) => x.clamp(lo, hi),
                        Unary::Round => x.round(),
                        Unary::Sign => {
                            if x == 0.0 {
                                0.0
                            } else {
                                x.signum()
                            }
                        }
                    }
                }
            };
            v.push(x);
        }
        v
    }

    fn backward(&self, values: &[f64]) -> Vec<f64> {
        let mut adj = vec![0.0; self.nodes.len()];
        if let Some(last) = adj.last_mut() {
            *last = 1.0;
        }
        for (i, node) in self.nodes.iter().enumerate().rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match node {
                Node::Const(_) | Node::Leaf(_) => {}
                Node::Weighted(terms) => {
                    for (c, j) in terms {
                        adj[*j] += c * g;
                    }
                }
                Node::Mul(a, b) => {
                    adj[*a] += g * values[*b];
                    adj[*b] += g * values[*a];
                }
                Node::Min(a, b) => {
                    let k = if values[*a] <= values[*b] { *a } else { *b };
                    adj[k] += g;
                }
                Node::Max(a, b) => {
                    let k = if values[*a] >= values[*b] { *a } else { *b };
                    adj[k] += g;
                }
                Node::Unary(op, a) => {
                    let x = values[*a];
                    let y = values[i];
                    let d = match *op {
                        Unary::Affine(s, _) => s,
                        Unary::Log => 1.0 / x,
                        Unary::Exp => y,
                        Unary::Tanh => 1.0 - y * y,
                        Unary::Relu => (x > 0.0) as u8 as f64,
                        Unary::Abs => {
                            if x == 0.0 {
                                0.0
                            } else {
                                x.signum()
                            }
                        }
                        Unary::Huber(d) => (x / d).clamp(-1.0, 1.0),
                        Unary::Clip(lo, hi) => (x > lo && x < hi) as u8 as f64,
                        Unary::Round | Unary::Sign => 0.0,
                    };
                    adj[*a] += g * d;
                }
            }
        }
        adj
    }
}
