/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-15 }
    }
}

impl Adam {
    /// One bias-corrected update of `params` in place. `step` is the 1-based
    /// step count after this update.
    pub fn update(&self, params: &mut [f64], grads: &[f64], first: &mut [f64], second: &mut [f64], step: u64, lr: impl Fn(usize) -> f64) {
        let c1 = 1.0 - self.beta1.powi(step as i32);
        let c2 = 1.0 - self.beta2.powi(step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            first[i] = self.beta1 * first[i] + (1.0 - self.beta1) * g;
            second[i] = self.beta2 * second[i] + (1.0 - self.beta2) * g * g;
            let m = first[i] / c1;
            let v = second[i] / c2;
            params[i] -= lr(i) * m / (v.sqrt() + self.eps);
        }
    }
}

/// Adam state for a flat parameter vector.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub steps: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn step(&mut self, adam: &Adam, params: &mut [f64], grads: &[f64], lr: f64) {
        self.steps += 1;
        adam.update(params, grads, &mut self.first, &mut self.second, self.steps, |_| lr);
    }
}
