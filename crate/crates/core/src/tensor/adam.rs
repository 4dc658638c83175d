use crate::error::{Error, Result};

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    ///
    /// The gradient is checked for NaN/inf before anything is touched. An
    /// all-zero gradient advances the step count and decays the moments but
    /// leaves `params` exactly as they are.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam: {} params, {} grads, state sized for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} is {} at adam step {}",
                grads[i],
                self.t + 1
            )));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let still = grads.iter().all(|&g| g == 0.0);
        let corr1 = 1.0 - b1.powi(self.t as i32);
        let corr2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            if !still {
                let m_hat = self.m[i] / corr1;
                let v_hat = self.v[i] / corr2;
                params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
