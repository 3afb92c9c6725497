//! SGD and Adam with inverse-time learning-rate decay.
//!
//! The rate used by the update with zero-based index `t` is
//! `lr0 / (1 + decay·t)`; `t` counts parameter updates, not epochs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Mlp, ParamGrads};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

/// Optimizer settings, e.g. `Adam(lr = 1e-4, decay = 1e-3)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default)]
    pub decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
}

impl OptimizerSpec {
    pub fn adam(lr: f64, decay: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::Adam,
            lr,
            decay,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn sgd(lr: f64, decay: f64) -> Self {
        OptimizerSpec {
            kind: OptimizerKind::Sgd,
            ..Self::adam(lr, decay)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && self.decay >= 0.0
            && self.decay.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }

    pub fn build<T: Scalar>(&self, net: &Mlp<T>) -> Optimizer<T> {
        match self.kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(net, self)),
            OptimizerKind::Sgd => Optimizer::Sgd(SgdState {
                lr0: self.lr,
                decay: self.decay,
                t: 0,
            }),
        }
    }
}

/// `lr0 / (1 + decay·t)`.
pub fn decayed_lr(lr0: f64, decay: f64, t: u64) -> f64 {
    lr0 / (1.0 + decay * t as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub lr0: f64,
    pub decay: f64,
    pub t: u64,
}

impl SgdState {
    pub fn step<T: Scalar>(&mut self, net: &mut Mlp<T>, grads: &ParamGrads<T>) -> Result<f64> {
        check_congruent(net, grads)?;
        let lr = decayed_lr(self.lr0, self.decay, self.t);
        let lr_t = T::of(lr);
        for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
            for (p, &d) in layer.weights.as_mut_slice().iter_mut().zip(g.weights.as_slice()) {
                *p = *p - lr_t * d;
            }
            for (p, &d) in layer.bias.iter_mut().zip(&g.bias) {
                *p = *p - lr_t * d;
            }
        }
        self.t += 1;
        Ok(lr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: ParamGrads<T>,
    pub v: ParamGrads<T>,
    pub t: u64,
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub decay: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &Mlp<T>, spec: &OptimizerSpec) -> Self {
        AdamState {
            m: ParamGrads::zeros_like(net),
            v: ParamGrads::zeros_like(net),
            t: 0,
            lr0: spec.lr,
            beta1: spec.beta1,
            beta2: spec.beta2,
            decay: spec.decay,
            eps: spec.eps,
        }
    }

    pub fn step(&mut self, net: &mut Mlp<T>, grads: &ParamGrads<T>) -> Result<f64> {
        check_congruent(net, grads)?;
        if !self.m.is_congruent(net) {
            return Err(Error::shape("adam_step", "moment buffers do not match the network"));
        }
        let lr = decayed_lr(self.lr0, self.decay, self.t);
        let step_no = (self.t + 1) as f64;
        let bc1 = T::of(1.0 - self.beta1.powf(step_no));
        let bc2 = T::of(1.0 - self.beta2.powf(step_no));
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one, lr_t, eps) = (T::one(), T::of(lr), T::of(self.eps));

        let update = |p: &mut T, m: &mut T, v: &mut T, g: T| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr_t * m_hat / (v_hat.sqrt() + eps);
        };

        for (((layer, g), m), v) in net
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            let params = layer.weights.as_mut_slice().iter_mut();
            let ms = m.weights.as_mut_slice().iter_mut();
            let vs = v.weights.as_mut_slice().iter_mut();
            for (((p, m), v), &g) in params.zip(ms).zip(vs).zip(g.weights.as_slice()) {
                update(p, m, v, g);
            }
            for (((p, m), v), &g) in layer.bias.iter_mut().zip(&mut m.bias).zip(&mut v.bias).zip(&g.bias) {
                update(p, m, v, g);
            }
        }
        self.t += 1;
        Ok(lr)
    }
}

fn check_congruent<T: Scalar>(net: &Mlp<T>, grads: &ParamGrads<T>) -> Result<()> {
    if grads.is_congruent(net) {
        Ok(())
    } else {
        Err(Error::shape("optimizer step", "gradients do not match the network"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer<T> {
    Adam(AdamState<T>),
    Sgd(SgdState),
}

impl<T: Scalar> Optimizer<T> {
    /// Applies one update; returns the learning rate it used.
    pub fn step(&mut self, net: &mut Mlp<T>, grads: &ParamGrads<T>) -> Result<f64> {
        match self {
            Optimizer::Adam(s) => s.step(net, grads),
            Optimizer::Sgd(s) => s.step(net, grads),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        match self {
            Optimizer::Adam(s) => s.t,
            Optimizer::Sgd(s) => s.t,
        }
    }

    /// Rate the next update will use.
    pub fn current_lr(&self) -> f64 {
        match self {
            Optimizer::Adam(s) => decayed_lr(s.lr0, s.decay, s.t),
            Optimizer::Sgd(s) => decayed_lr(s.lr0, s.decay, s.t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Matrix, RngState};
    use crate::neural::{Activation, DenseLayer, LayerGrads};

    fn scalar_net(w: f64) -> Mlp<f64> {
        Mlp::new(
            vec![DenseLayer {
                weights: Matrix::filled(1, 1, w),
                bias: vec![0.0],
                activation: Activation::Linear,
                dropout: 0.0,
            }],
            1e-7,
        )
        .unwrap()
    }

    fn grads(w: f64, b: f64) -> ParamGrads<f64> {
        ParamGrads {
            layers: vec![LayerGrads {
                weights: Matrix::filled(1, 1, w),
                bias: vec![b],
            }],
        }
    }

    #[test]
    fn sgd_hand_step() {
        let mut net = scalar_net(1.0);
        let mut opt = OptimizerSpec::sgd(0.1, 0.0).build(&net);
        opt.step(&mut net, &grads(2.0, 0.0)).unwrap();
        assert!((net.layers()[0].weights.get(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_lr_is_noop() {
        let mut net = scalar_net(1.0);
        let before = net.clone();
        let mut opt = OptimizerSpec::sgd(0.0, 0.0).build(&net);
        opt.step(&mut net, &grads(2.0, 3.0)).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn sgd_decay_schedule() {
        let mut net = scalar_net(0.0);
        let mut opt = OptimizerSpec::sgd(1.0, 1.0).build(&net);
        assert_eq!(opt.step(&mut net, &grads(1.0, 0.0)).unwrap(), 1.0);
        assert_eq!(opt.step(&mut net, &grads(1.0, 0.0)).unwrap(), 0.5);
        assert!((net.layers()[0].weights.get(0, 0) + 1.5).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_sign_step() {
        let mut rng = RngState::new(4);
        let mut net = Mlp::<f64>::init_glorot(&mut rng, &[3, 4], &[Activation::Linear], &[0.0], 1e-7).unwrap();
        let before = net.params_to_vec();
        let mut g = ParamGrads::zeros_like(&net);
        for (i, v) in g.layers[0].weights.as_mut_slice().iter_mut().enumerate() {
            *v = if i % 2 == 0 { 3.0 } else { -0.5 };
        }
        g.layers[0].bias = vec![1e-2; 4];
        let mut opt = OptimizerSpec::adam(1e-3, 0.0).build(&net);
        opt.step(&mut net, &g).unwrap();
        for ((a, b), d) in net.params_to_vec().iter().zip(&before).zip(g.to_vec()) {
            let moved = a - b;
            assert!((moved + 1e-3 * d.signum()).abs() < 1e-6, "moved {moved} for grad {d}");
        }
    }

    #[test]
    fn adam_zero_grad_counts_step() {
        let mut net = scalar_net(0.7);
        let before = net.clone();
        let mut opt = OptimizerSpec::adam(1e-3, 0.0).build(&net);
        opt.step(&mut net, &grads(0.0, 0.0)).unwrap();
        assert_eq!(net, before);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn schedule_halves_at_thousand_steps() {
        assert_eq!(decayed_lr(1e-4, 1e-3, 0), 1e-4);
        assert!((decayed_lr(1e-4, 1e-3, 1000) - 5e-5).abs() < 1e-18);
        let mut net = scalar_net(0.0);
        let mut opt = OptimizerSpec::adam(1e-4, 1e-3).build(&net);
        for _ in 0..1000 {
            opt.step(&mut net, &grads(1.0, 1.0)).unwrap();
        }
        assert!((opt.current_lr() - 5e-5).abs() < 1e-18);
    }

    #[test]
    fn rejects_mismatched_grads() {
        let mut net = scalar_net(0.0);
        let bad = ParamGrads {
            layers: vec![LayerGrads {
                weights: Matrix::zeros(2, 1),
                bias: vec![0.0],
            }],
        };
        let mut opt = OptimizerSpec::adam(1e-3, 0.0).build(&net);
        assert!(opt.step(&mut net, &bad).is_err());
        let mut opt = OptimizerSpec::sgd(1e-3, 0.0).build(&net);
        assert!(opt.step(&mut net, &bad).is_err());
    }
}
