//! Mini-batch Adam and vanilla SGD with L2 regularization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::nn::{ParamKind, ParamMut};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    l2: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, l2: f64) -> Self {
        Self {
            kind,
            lr,
            l2,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn adam(lr: f64, l2: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr, l2)
    }

    pub fn sgd(lr: f64, l2: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr, l2)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from gradients summed over `batch_size` examples,
    /// then clears the gradients.
    pub fn step(&mut self, model: &mut Model, grads: &mut Model, batch_size: usize) -> Result<()> {
        self.step_params(model.params_mut(), grads.params_mut(), batch_size)
    }

    /// Same as [`Optimizer::step`] over explicit parameter/gradient lists,
    /// which must enumerate matching tensors in the same order.
    pub fn step_params(&mut self, params: Vec<ParamMut<'_>>, grads: Vec<ParamMut<'_>>, batch_size: usize) -> Result<()> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if params.len() != grads.len() {
            return Err(Error::Internal("parameter and gradient lists differ".into()));
        }
        for (p, g) in params.iter().zip(&grads) {
            if p.name != g.name || p.data.len() != g.data.len() {
                return Err(Error::Internal(format!("gradient for `{}` does not match", p.name)));
            }
            if !g.data.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(g.name.clone()));
            }
        }
        if self.kind == OptimizerKind::Adam && self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
            self.second = self.first.clone();
        }

        self.t += 1;
        let inv_batch = 1.0 / batch_size as f64;
        let (lr, l2) = (self.lr, self.l2);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let bias1 = 1.0 - b1.powi(self.t as i32);
        let bias2 = 1.0 - b2.powi(self.t as i32);

        for (idx, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let decay = if p.kind == ParamKind::Bias { 0.0 } else { l2 };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (theta, grad) in p.data.iter_mut().zip(g.data.iter_mut()) {
                        let step = *grad * inv_batch + decay * *theta;
                        *theta -= lr * step;
                        *grad = 0.0;
                    }
                }
                OptimizerKind::Adam => {
                    let m = &mut self.first[idx];
                    let v = &mut self.second[idx];
                    for (((theta, grad), mi), vi) in
                        p.data.iter_mut().zip(g.data.iter_mut()).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        let gt = *grad * inv_batch + decay * *theta;
                        *mi = b1 * *mi + (1.0 - b1) * gt;
                        *vi = b2 * *vi + (1.0 - b2) * gt * gt;
                        let m_hat = *mi / bias1;
                        let v_hat = *vi / bias2;
                        *theta -= lr * m_hat / (v_hat.sqrt() + eps);
                        *grad = 0.0;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar<'a>(name: &str, kind: ParamKind, x: &'a mut f64) -> ParamMut<'a> {
        ParamMut {
            name: name.into(),
            kind,
            dims: vec![],
            data: std::slice::from_mut(x),
        }
    }

    fn run(opt: &mut Optimizer, theta: &mut f64, grad: f64, batch: usize, kind: ParamKind) -> Result<()> {
        let mut g = grad;
        opt.step_params(vec![scalar("w", kind, theta)], vec![scalar("w", kind, &mut g)], batch)?;
        assert_eq!(g, 0.0, "gradient cleared");
        Ok(())
    }

    #[test]
    fn sgd_single_step() {
        let mut theta = 1.0;
        run(&mut Optimizer::sgd(0.1, 0.0), &mut theta, 2.0, 1, ParamKind::Weight).unwrap();
        assert!((theta - 0.8).abs() < 1e-15);
        // gradient is averaged over the batch
        let mut theta = 1.0;
        run(&mut Optimizer::sgd(0.1, 0.0), &mut theta, 2.0, 4, ParamKind::Weight).unwrap();
        assert!((theta - 0.95).abs() < 1e-15);
    }

    /// Reference bias-corrected Adam, written out step by step.
    fn reference_adam(grads: &[f64], lr: f64, theta0: f64) -> f64 {
        let (mut m, mut v, mut theta) = (0.0, 0.0, theta0);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            theta -= lr * m_hat / (v_hat.sqrt() + 1e-8);
        }
        theta
    }

    #[test]
    fn adam_first_step_is_scale_free() {
        for g in [1e-3, 0.5, 7.0, -250.0] {
            let mut theta = 0.3;
            run(&mut Optimizer::adam(0.001, 0.0), &mut theta, g, 1, ParamKind::Weight).unwrap();
            let expected = 0.001 * g.abs() / (g.abs() + 1e-8);
            assert!(((0.3 - theta).abs() - expected).abs() < 1e-15, "g={g}");
            assert!(((0.3 - theta).abs() - 0.001).abs() < 1e-7);
            assert_eq!(theta, reference_adam(&[g], 0.001, 0.3));
        }
    }

    #[test]
    fn adam_matches_reference_trajectory() {
        let grads = [0.5, -0.25, 1.0, 0.0, 3.0, -2.0];
        let mut opt = Optimizer::adam(0.01, 0.0);
        let mut theta = 1.0;
        for &g in &grads {
            run(&mut opt, &mut theta, g, 1, ParamKind::Weight).unwrap();
        }
        assert!((theta - reference_adam(&grads, 0.01, 1.0)).abs() < 1e-15);
        assert_eq!(opt.steps(), grads.len() as u64);
    }

    #[test]
    fn weight_decay_shrinks_monotonically_and_spares_biases() {
        let mut opt = Optimizer::sgd(0.5, 0.1);
        let mut theta = 2.0;
        let mut prev = theta;
        for _ in 0..20 {
            run(&mut opt, &mut theta, 0.0, 1, ParamKind::Weight).unwrap();
            assert!(theta < prev && theta > 0.0);
            prev = theta;
        }
        let mut bias = 2.0;
        run(&mut opt, &mut bias, 0.0, 1, ParamKind::Bias).unwrap();
        assert_eq!(bias, 2.0);
    }

    #[test]
    fn zero_learning_rate_freezes() {
        for mut opt in [Optimizer::sgd(0.0, 1e-6), Optimizer::adam(0.0, 1e-6)] {
            let mut theta = 0.7;
            for g in [1.0, -3.0, 0.2] {
                run(&mut opt, &mut theta, g, 2, ParamKind::Weight).unwrap();
            }
            assert_eq!(theta, 0.7);
        }
    }

    #[test]
    fn non_finite_gradient_aborts_before_update() {
        let mut opt = Optimizer::sgd(0.1, 0.0);
        let mut a = 1.0;
        let mut b = 1.0;
        let mut ga = 1.0;
        let mut gb = f64::NAN;
        let err = opt
            .step_params(
                vec![scalar("ok", ParamKind::Weight, &mut a), scalar("bad", ParamKind::Weight, &mut b)],
                vec![scalar("ok", ParamKind::Weight, &mut ga), scalar("bad", ParamKind::Weight, &mut gb)],
                1,
            )
            .unwrap_err();
        match err {
            Error::NonFinite(name) => assert_eq!(name, "bad"),
            other => panic!("{other}"),
        }
        assert_eq!(a, 1.0);
    }
}
