use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied as `theta -= lr * wd * theta`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected update of every parameter.
    pub fn update(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64, cfg: &AdamConfig) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::shape(
                "adam",
                format!("{} params, {} grads, {} moments", params.len(), grads.len(), self.m.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::shape(
                    "adam",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
        let c1 = T::lit(1.0 / (1.0 - cfg.beta1.powi(t)));
        let c2 = T::lit(1.0 / (1.0 - cfg.beta2.powi(t)));
        let (lr_t, eps, decay) = (T::lit(lr), T::lit(cfg.eps), T::lit(lr * cfg.weight_decay));
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (j, &gj) in g.data().iter().enumerate() {
                md[j] = b1 * md[j] + one_b1 * gj;
                vd[j] = b2 * vd[j] + one_b2 * gj * gj;
                let step = lr_t * (md[j] * c1) / ((vd[j] * c2).sqrt() + eps);
                pd[j] = pd[j] - decay * pd[j] - step;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_decay() -> AdamConfig {
        AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_grad_no_decay_is_fixed_point() {
        let mut p = vec![Tensor::<f64>::from_fn(vec![4], |i| i as f64)];
        let before = p.clone();
        let mut st = AdamState::new(&p);
        st.update(&mut p, &[Tensor::zeros(vec![4])], 1e-3, &no_decay()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02, 1e3] {
            let mut p = vec![Tensor::<f64>::scalar(1.0)];
            let mut st = AdamState::new(&p);
            let cfg = AdamConfig { eps: 0.0, ..no_decay() };
            st.update(&mut p, &[Tensor::scalar(g)], 0.1, &cfg).unwrap();
            assert!((p[0].item() - (1.0 - 0.1 * f64::signum(g))).abs() < 1e-12);
        }
    }

    #[test]
    fn decay_only_shrinks() {
        let mut p = vec![Tensor::<f64>::scalar(2.0)];
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig { weight_decay: 0.5, ..AdamConfig::default() };
        st.update(&mut p, &[Tensor::scalar(0.0)], 0.1, &cfg).unwrap();
        assert!((p[0].item() - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut p = vec![Tensor::<f64>::zeros(vec![2])];
        let mut st = AdamState::new(&p);
        assert!(st.update(&mut p, &[Tensor::zeros(vec![3])], 0.1, &no_decay()).is_err());
    }
}
