//! Adam with bias correction and a polynomial decay schedule.

use super::Tensor;
use crate::error::{Error, Result};
use std::collections::BTreeMap;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.99;
const EPS: f64 = 1e-8;

/// Per-parameter first/second moments plus the schedule state.
pub struct OptimizerState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    /// Completed steps; increases by exactly 1 per [`OptimizerState::step`].
    pub t: u64,
    pub lr0: f64,
    pub decay_power: f64,
    pub total_steps: u64,
}

impl OptimizerState {
    pub fn new(params: &BTreeMap<String, Tensor>, lr0: f64, decay_power: f64, total_steps: u64) -> Self {
        let m = params
            .iter()
            .map(|(k, p)| (k.clone(), Tensor::zeros(p.shape())))
            .collect();
        let v = params
            .iter()
            .map(|(k, p)| (k.clone(), Tensor::zeros(p.shape())))
            .collect();
        OptimizerState {
            m,
            v,
            t: 0,
            lr0,
            decay_power,
            total_steps,
        }
    }

    /// lr(t) = lr0 * (1 - t/T)^power; exactly 0 at t = T.
    pub fn lr_at(&self, t: u64) -> f64 {
        let frac = 1.0 - t as f64 / self.total_steps as f64;
        self.lr0 * frac.max(0.0).powf(self.decay_power)
    }

    /// One Adam update over every parameter that has a gradient. A non-finite
    /// gradient rejects the whole step and surfaces the parameter name.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        if self.t >= self.total_steps {
            return Err(Error::ScheduleExhausted {
                t: self.t,
                total: self.total_steps,
            });
        }
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        let lr = self.lr_at(self.t);
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (name, g) in grads {
            let p = match params.get_mut(name) {
                Some(p) => p,
                None => continue,
            };
            let m = self.m.get_mut(name).expect("moment state tracks params");
            let v = self.v.get_mut(name).expect("moment state tracks params");
            debug_assert_eq!(g.shape(), p.shape(), "gradient shape for {name}");
            for ((pv, gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
                *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> BTreeMap<String, Tensor> {
        let mut m = BTreeMap::new();
        m.insert("w".to_string(), Tensor::new(vec![1], vec![v]).unwrap());
        m
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = one_param(0.7);
        let mut opt = OptimizerState::new(&params, 1e-3, 1.5, 10);
        let grads = one_param(0.0);
        opt.step(&mut params, &grads).unwrap();
        assert_eq!(params["w"].data()[0], 0.7);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // bias-corrected m-hat = g, v-hat = g^2, so |update| = lr*|g|/(|g|+eps)
        let mut params = one_param(0.0);
        let lr = 2e-4;
        let mut opt = OptimizerState::new(&params, lr, 1.5, 100);
        let grads = one_param(0.3);
        opt.step(&mut params, &grads).unwrap();
        let expected = lr * 0.3 / (0.3 + EPS);
        assert!((params["w"].data()[0] + expected).abs() < 1e-15);
    }

    #[test]
    fn schedule_hits_zero_at_horizon() {
        let params = one_param(0.0);
        let opt = OptimizerState::new(&params, 2e-4, 1.5, 200);
        assert_eq!(opt.lr_at(200), 0.0);
        assert_eq!(opt.lr_at(0), 2e-4);
        let mid = opt.lr_at(100);
        assert!((mid - 2e-4 * 0.5f64.powf(1.5)).abs() < 1e-18);
    }

    #[test]
    fn non_finite_gradient_rejected_with_name() {
        let mut params = one_param(0.5);
        let mut opt = OptimizerState::new(&params, 1e-3, 1.5, 10);
        let grads = one_param(f64::NAN);
        let err = opt.step(&mut params, &grads).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(params["w"].data()[0], 0.5);
        assert_eq!(opt.t, 0);
    }

    #[test]
    fn step_counter_exhausts() {
        let mut params = one_param(0.0);
        let mut opt = OptimizerState::new(&params, 1e-3, 1.5, 2);
        let grads = one_param(0.1);
        opt.step(&mut params, &grads).unwrap();
        opt.step(&mut params, &grads).unwrap();
        assert!(opt.step(&mut params, &grads).is_err());
    }
}
