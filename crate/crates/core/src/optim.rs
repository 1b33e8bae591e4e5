//! Adaptive-moment gradient descent over a flat parameter vector.

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(learning_rate: f64, param_count: usize) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }

    /// One update step: params -= lr_t * m_hat / (sqrt(v_hat) + eps).
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let lr_t = self.learning_rate * (1.0 - self.beta2.powi(t)).sqrt()
            / (1.0 - self.beta1.powi(t));
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= lr_t * self.m[i] / (self.v[i].sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        // f(x) = (x - 3)^2
        let mut params = vec![0.0];
        let mut adam = Adam::new(0.1, 1);
        for _ in 0..500 {
            let g = 2.0 * (params[0] - 3.0);
            adam.update(&mut params, &[g]);
        }
        assert!((params[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn deterministic_given_same_inputs() {
        let run = || {
            let mut p = vec![1.0, -2.0];
            let mut a = Adam::new(0.05, 2);
            for k in 0..50 {
                let g = vec![p[0] * 0.5 + k as f64 * 0.001, p[1]];
                a.update(&mut p, &g);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
