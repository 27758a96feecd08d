//! Adam optimizer over a network's parameter set.

use super::{ParamSet, Real};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    t: u64,
}

impl Adam {
    pub fn new(lr: Real) -> Adam {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0 }
    }

    /// One update from the accumulated gradients; gradients are consumed
    /// (zeroed) afterwards.
    pub fn step<N: ParamSet>(&mut self, net: &mut N) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (_, p) in net.params_mut() {
            let super::Param { value, grad, m, v } = p;
            ndarray::Zip::from(value).and(grad).and(m).and(v).for_each(|x, g, m, v| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * *g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                *g = 0.0;
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;
    use ndarray::array;

    struct One(Param);
    impl ParamSet for One {
        fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
            vec![("x".into(), &mut self.0)]
        }
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let mut p = One(Param::zeros(1, 1));
        p.0.value[(0, 0)] = 5.0;
        p.0.grad[(0, 0)] = 0.3;
        let mut opt = Adam::new(0.01);
        opt.step(&mut p);
        // With bias correction the first update is -lr * g/|g| (up to eps).
        assert!((p.0.value[(0, 0)] - (5.0 - 0.01)).abs() < 1e-6);
        assert_eq!(p.0.grad[(0, 0)], 0.0, "gradient consumed");
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = One(Param::zeros(1, 2));
        p.0.value = array![[8.0, -6.0]];
        let target = array![[3.0, -1.0]];
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let g = (&p.0.value - &target).mapv(|d| 2.0 * d);
            p.0.grad.assign(&g);
            opt.step(&mut p);
        }
        for (a, b) in p.0.value.iter().zip(target.iter()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }
}
