use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    RmsProp { decay: f64, eps: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn rmsprop() -> Self {
        OptimizerKind::RmsProp { decay: 0.9, eps: 1e-8 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer with per-parameter accumulators. Accumulators are allocated on
/// the first step and must keep the same layout afterwards.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        match kind {
            OptimizerKind::RmsProp { decay, eps } => {
                if !(0.0..1.0).contains(&decay) || eps < 0.0 {
                    return Err(Error::Config("rmsprop decay must be in [0, 1) and eps >= 0".into()));
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps < 0.0 {
                    return Err(Error::Config("adam betas must be in [0, 1) and eps >= 0".into()));
                }
            }
        }
        Ok(Self {
            kind,
            learning_rate,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn rmsprop(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::rmsprop(), learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::adam(), learning_rate)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update. Gradients are validated before any parameter is
    /// touched, so a failed step leaves parameters and state unchanged.
    pub fn step(&mut self, params: &mut [(String, &mut [f64])], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dimension("optimizer gradient list", params.len(), grads.len()));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::dimension(format!("gradient for {name}"), p.len(), g.len()));
            }
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient at {name}[{pos}] = {}",
                    g[pos]
                )));
            }
        }
        if self.first.is_empty() && self.second.is_empty() {
            self.second = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            }
        } else if self.second.len() != grads.len()
            || self.second.iter().zip(grads).any(|(s, g)| s.len() != g.len())
        {
            return Err(Error::Validation(
                "parameter layout changed between optimizer steps".into(),
            ));
        }

        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::RmsProp { decay, eps } => {
                for (((_, p), g), v) in params.iter_mut().zip(grads).zip(&mut self.second) {
                    for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                        *vi = decay * *vi + (1.0 - decay) * gi * gi;
                        *pi -= lr * gi / (*vi + eps).sqrt();
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((((_, p), g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *pi -= lr * m_hat / (v_hat.sqrt() + eps);
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

    fn one(p: &mut [f64]) -> Vec<(String, &mut [f64])> {
        vec![("p".to_string(), p)]
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![0.25, -1.5];
        let mut opt = Optimizer::adam(1e-3).unwrap();
        opt.step(&mut one(&mut p), &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![0.25, -1.5]);
    }

    #[test]
    fn rmsprop_hand_step() {
        let mut p = vec![0.0];
        let mut opt = Optimizer::rmsprop(0.001).unwrap();
        opt.step(&mut one(&mut p), &[vec![1.0]]).unwrap();
        let expected = -0.001 * 1.0 / (0.1f64 * 1.0 + 1e-8).sqrt();
        // 1 − 0.9 is one ulp below 0.1 in binary.
        assert!((p[0] - expected).abs() <= 1e-15 * expected.abs());
    }

    #[test]
    fn quadratic_loss_decreases() {
        // loss = Σ (p_i − c_i)², grad = 2 (p − c)
        let target = [1.0, -2.0, 0.5];
        for kind in [OptimizerKind::rmsprop(), OptimizerKind::adam()] {
            let mut p = vec![0.0; 3];
            let mut opt = Optimizer::new(kind, 0.01).unwrap();
            let loss = |p: &[f64]| p.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let mut prev = loss(&p);
            for _ in 0..100 {
                let g: Vec<f64> = p.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
                opt.step(&mut one(&mut p), &[g]).unwrap();
                let now = loss(&p);
                assert!(now < prev, "{kind:?}: {now} >= {prev}");
                prev = now;
            }
        }
    }

    #[test]
    fn non_finite_gradient_is_reported_with_path() {
        let mut p = vec![1.0, 2.0];
        let mut opt = Optimizer::adam(1e-3).unwrap();
        let err = opt.step(&mut one(&mut p), &[vec![0.0, f64::NAN]]).unwrap_err();
        assert!(err.to_string().contains("p[1]"), "{err}");
        assert_eq!(p, vec![1.0, 2.0]);
    }

    #[test]
    fn rejects_bad_learning_rate() {
        assert!(Optimizer::adam(0.0).is_err());
        assert!(Optimizer::rmsprop(-1.0).is_err());
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = vec![0.3, 0.1];
            let mut opt = Optimizer::adam(1e-3).unwrap();
            for i in 0..50 {
                let g = vec![(i as f64).sin(), p[0] * 0.7];
                opt.step(&mut one(&mut p), &[g]).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }
}
