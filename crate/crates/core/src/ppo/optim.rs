use super::config::OptimizerMode;
use crate::error::Result;
use crate::policy::{GradVector, PolicyParams};

/// First-order optimizer over the flat parameter vector.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl Optimizer {
    pub fn new(mode: OptimizerMode, lr: f64, adam_eps: f64, n_params: usize) -> Self {
        match mode {
            OptimizerMode::Sgd => Optimizer::Sgd { lr },
            OptimizerMode::Adam => Optimizer::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: adam_eps,
                m: vec![0.0; n_params],
                v: vec![0.0; n_params],
                t: 0,
            },
        }
    }

    /// Parameters after one descent step along `grad`.
    pub fn step(&mut self, params: &PolicyParams, grad: &GradVector) -> Result<PolicyParams> {
        match self {
            Optimizer::Sgd { lr } => params.offset_by(grad, -*lr),
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t);
                let bc2 = 1.0 - beta2.powi(*t);
                let values = params
                    .values()
                    .iter()
                    .zip(grad.as_slice())
                    .zip(m.iter_mut().zip(v.iter_mut()))
                    .map(|((theta, g), (mi, vi))| {
                        *mi = *beta1 * *mi + (1.0 - *beta1) * g;
                        *vi = *beta2 * *vi + (1.0 - *beta2) * g * g;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        theta - *lr * m_hat / (v_hat.sqrt() + *eps)
                    })
                    .collect();
                params.with_values(values)
            }
        }
    }
}

/// Rescales `grad` in place so its norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grad: &mut GradVector, max_norm: Option<f64>) -> f64 {
    let norm = grad.norm();
    if let Some(max) = max_norm {
        if norm > max {
            grad.scale(max / norm);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::NetworkShape;

    fn setup() -> (PolicyParams, GradVector) {
        let shape = NetworkShape {
            hidden: vec![4],
            ..NetworkShape::default()
        };
        let p = PolicyParams::init(shape, 0).unwrap();
        let g = GradVector::from_vec((0..p.len()).map(|i| (i as f64 * 0.37).sin()).collect());
        (p, g)
    }

    #[test]
    fn sgd_is_plain_descent() {
        let (p, g) = setup();
        let q = Optimizer::new(OptimizerMode::Sgd, 0.1, 1e-8, p.len())
            .step(&p, &g)
            .unwrap();
        for ((a, b), gi) in q.values().iter().zip(p.values()).zip(g.as_slice()) {
            assert_eq!(*a, b - 0.1 * gi);
        }
    }

    #[test]
    fn first_adam_step_is_signed_lr() {
        let (p, g) = setup();
        let q = Optimizer::new(OptimizerMode::Adam, 1e-3, 1e-12, p.len())
            .step(&p, &g)
            .unwrap();
        for ((a, b), gi) in q.values().iter().zip(p.values()).zip(g.as_slice()) {
            if gi.abs() > 1e-6 {
                assert!((a - (b - 1e-3 * gi.signum())).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (p, g) = setup();
        for mode in [OptimizerMode::Sgd, OptimizerMode::Adam] {
            let mut opt = Optimizer::new(mode, 0.0, 1e-5, p.len());
            let mut q = p.clone();
            for _ in 0..3 {
                q = opt.step(&q, &g).unwrap();
            }
            assert_eq!(q, p);
        }
    }

    #[test]
    fn clipping_bounds_norm() {
        let (_, mut g) = setup();
        let n = clip_grad_norm(&mut g, Some(0.5));
        assert!(n > 0.5);
        assert!((g.norm() - 0.5).abs() < 1e-12);
    }
}
