use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Parameter, Tensor2};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Bias-corrected Adam moments for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = |p: &Parameter| Tensor2::zeros(p.value.rows(), p.value.cols());
        Self {
            m: store.iter().map(|(_, p)| zeros(p)).collect(),
            v: store.iter().map(|(_, p)| zeros(p)).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update from the gradients accumulated in `store`. `lr` picks
    /// the learning rate per parameter. Nothing is modified when any
    /// gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, lr: impl Fn(&Parameter) -> f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::dim("optimizer state does not match the parameter store"));
        }
        for (_, p) in store.iter() {
            if !p.grad.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: p.name.clone(),
                    step: self.t + 1,
                });
            }
            if !(lr(p) > 0.0) {
                return Err(Error::Config(format!("learning rate for `{}` must be > 0", p.name)));
            }
        }
        self.t += 1;
        let t = self.t as f64;
        let c1 = 1.0 - BETA1.powf(t);
        let c2 = 1.0 - BETA2.powf(t);
        for (i, p) in store.iter_mut().enumerate() {
            let rate = lr(p);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = p.grad.data();
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                *w -= rate * mh / (vh.sqrt() + EPS);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor2::scalar(value));
        s.accumulate(id, &Tensor2::scalar(grad)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(0.7, 0.0);
        let mut a = AdamState::new(&s);
        for _ in 0..5 {
            a.step(&mut s, |_| 1e-3).unwrap();
        }
        assert_eq!(s.iter().next().unwrap().1.value.data()[0], 0.7);
        assert_eq!(a.steps(), 5);
    }

    #[test]
    fn first_step_by_hand() {
        let mut s = store(1.0, 1.0);
        let mut a = AdamState::new(&s);
        a.step(&mut s, |_| 1e-3).unwrap();
        // m̂ = v̂ = 1, so the step is lr · 1 / (1 + ε)
        let w = s.iter().next().unwrap().1.value.data()[0];
        assert!((w - (1.0 - 1e-3 / (1.0 + EPS))).abs() < 1e-15);
        assert!((w - 0.999).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store(1.0, f64::NAN);
        let mut a = AdamState::new(&s);
        match a.step(&mut s, |_| 1e-3) {
            Err(Error::NonFiniteGradient { param, step }) => {
                assert_eq!(param, "w");
                assert_eq!(step, 1);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(s.iter().next().unwrap().1.value.data()[0], 1.0);
    }
}
