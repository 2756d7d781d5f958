//! Adam with decoupled weight decay.

use crate::error::{MpcclError, Result};

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

/// One parameter tensor: its values and whether weight decay applies.
pub struct ParamSlot<'a> {
    pub values: &'a mut [f64],
    pub decay: bool,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// `θ ← θ − lr · (m̂ / (√v̂ + eps) + wd · θ)` for decayed slots, without
    /// the decay term otherwise.
    pub fn step(&mut self, slots: Vec<ParamSlot<'_>>, grads: &[&[f64]]) -> Result<()> {
        if slots.len() != grads.len() {
            return Err(MpcclError::Contract(format!(
                "{} parameter slots, {} gradients",
                slots.len(),
                grads.len()
            )));
        }
        if self.moments.is_empty() {
            self.moments = slots
                .iter()
                .map(|s| (vec![0.0; s.values.len()], vec![0.0; s.values.len()]))
                .collect();
        }
        if self.moments.len() != slots.len() {
            return Err(MpcclError::Contract("parameter layout changed between steps".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((slot, g), (m, v)) in slots.into_iter().zip(grads).zip(&mut self.moments) {
            if slot.values.len() != g.len() || m.len() != g.len() {
                return Err(MpcclError::Contract("gradient shape does not match parameter".into()));
            }
            let decay = if slot.decay { self.weight_decay } else { 0.0 };
            for (((x, &gi), mi), vi) in slot.values.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                *x -= self.lr * (update + decay * *x);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_applies_only_decay() {
        let mut opt = AdamW::new(0.1, 0.5);
        let mut w = vec![2.0, -4.0];
        let mut b = vec![1.0];
        opt.step(
            vec![ParamSlot { values: &mut w, decay: true }, ParamSlot { values: &mut b, decay: false }],
            &[&[0.0, 0.0], &[0.0]],
        )
        .unwrap();
        assert_eq!(w, vec![2.0 * (1.0 - 0.05), -4.0 * (1.0 - 0.05)]);
        assert_eq!(b, vec![1.0]);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut opt = AdamW::new(0.0, 1e-2);
        let mut w = vec![0.3, 0.7];
        opt.step(vec![ParamSlot { values: &mut w, decay: true }], &[&[1.0, -2.0]]).unwrap();
        assert_eq!(w, vec![0.3, 0.7]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = AdamW::new(0.01, 0.0);
        let mut w = vec![1.0, 1.0];
        opt.step(vec![ParamSlot { values: &mut w, decay: true }], &[&[3.0, -0.5]]).unwrap();
        assert!((w[0] - 0.99).abs() < 1e-9);
        assert!((w[1] - 1.01).abs() < 1e-9);
    }
}
