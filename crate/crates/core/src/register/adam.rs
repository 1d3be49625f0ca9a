/// Adam with the usual defaults (`β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = [1.0, -2.0, 0.0];
        Adam::new(3, 0.01).step(&mut p, &[3.0, -0.5, 0.0]);
        assert!((p[0] - 0.99).abs() < 1e-9 && (p[1] + 1.99).abs() < 1e-9 && p[2] == 0.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = [5.0];
        let mut opt = Adam::new(1, 0.1);
        for _ in 0..500 {
            let g = [2.0 * (p[0] - 1.5)];
            opt.step(&mut p, &g);
        }
        assert!((p[0] - 1.5).abs() < 1e-2);
    }
}
