use super::{shape_err, Scalar, Tensor, TensorError};

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter from its gradient.
    pub fn step<F: Scalar>(&mut self, params: &mut [Tensor<F>], grads: &[Tensor<F>]) -> Result<(), TensorError> {
        if params.len() != grads.len() {
            return Err(shape_err(
                "adamw",
                format!("{} params vs {} grads", params.len(), grads.len()),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(shape_err("adamw", format!("{:?} vs {:?}", p.shape(), g.shape())));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel())
        {
            return Err(shape_err("adamw", "parameter set changed between steps"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pi, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = gi.as_f64();
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                let updated = pi.as_f64() * decay - self.lr * mhat / (vhat.sqrt() + self.eps);
                *pi = F::from_f64(updated);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut p = vec![Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let g = vec![Tensor::zeros(&[3])];
        let mut opt = AdamW::new(1e-3, 0.0);
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_sign_sized() {
        let lr = 1e-2;
        let mut p = vec![Tensor::<f64>::from_f64(&[3], &[0.0, 0.0, 0.0]).unwrap()];
        let g = vec![Tensor::from_f64(&[3], &[0.3, -4.0, 1e-3]).unwrap()];
        let mut opt = AdamW::new(lr, 0.0);
        opt.step(&mut p, &g).unwrap();
        // m̂ = g, v̂ = g²: step = -lr·g/(|g| + eps)
        for (pi, gi) in p[0].data().iter().zip(g[0].data()) {
            let want = -lr * gi / (gi.abs() + 1e-8);
            assert!((pi - want).abs() < 1e-15);
            assert!((pi + lr * gi.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn decoupled_decay() {
        let lr = 0.1;
        let mut p = vec![Tensor::<f64>::from_f64(&[2], &[2.0, -1.0]).unwrap()];
        let g = vec![Tensor::zeros(&[2])];
        let mut opt = AdamW::new(lr, 0.01);
        opt.step(&mut p, &g).unwrap();
        assert!((p[0].data()[0] - 2.0 * (1.0 - lr * 0.01)).abs() < 1e-15);
        assert!((p[0].data()[1] + (1.0 - lr * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![Tensor::<f32>::zeros(&[2])];
        let g = vec![Tensor::zeros(&[3])];
        assert!(AdamW::new(1e-3, 0.0).step(&mut p, &g).is_err());
    }
}
