use crate::error::{dim_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments, one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) || !config.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                config.lr
            )));
        }
        Ok(Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    /// Changes the step size for subsequent updates; moment estimates are kept.
    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        self.config.lr = lr;
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter slice from its gradient slice.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(dim_err!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(dim_err!("optimizer state tracks {} tensors", self.m.len()));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(dim_err!("parameter/gradient length mismatch"));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook scalar Adam, written independently of the vectorized path.
    fn scalar_adam(x0: f64, lr: f64, steps: usize, grad: impl Fn(f64) -> f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = grad(x);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + eps);
            out.push(x);
        }
        out
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut opt = Adam::new(AdamConfig::with_lr(1e-3)).unwrap();
        let mut p = vec![1.0, -2.0, 3.0];
        opt.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let lr = 1e-2;
        let mut opt = Adam::new(AdamConfig::with_lr(lr)).unwrap();
        let mut p = vec![0.0, 0.0];
        opt.step(&mut [&mut p], &[&[0.5, -3.0]]).unwrap();
        assert!((p[0] + lr).abs() < lr * 1e-7);
        assert!((p[1] - lr).abs() < lr * 1e-7);
    }

    #[test]
    fn quadratic_trajectory_matches_scalar_reference() {
        // f(x) = 0.5 * a * (x - c)^2
        let (a, c, lr) = (3.0, 1.5, 0.05);
        let expected = scalar_adam(-2.0, lr, 10, |x| a * (x - c));
        let mut opt = Adam::new(AdamConfig::with_lr(lr)).unwrap();
        let mut p = vec![-2.0];
        for want in expected {
            let g = [a * (p[0] - c)];
            opt.step(&mut [&mut p], &[&g]).unwrap();
            assert!((p[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_nonpositive_lr() {
        assert!(matches!(Adam::new(AdamConfig::with_lr(0.0)), Err(Error::Config(_))));
        assert!(Adam::new(AdamConfig::with_lr(-1e-4)).is_err());
    }
}
