//! Adam with bias correction over a named parameter map.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update. Parameters without a gradient are left alone.
    ///
    /// All gradients are checked before anything is modified, so a
    /// non-finite gradient leaves both parameters and moments untouched.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::Numerical(format!("non-finite gradient for parameter {name}")));
            }
            match params.get(name) {
                Some(p) if p.shape() == g.shape() => {}
                Some(p) => {
                    return Err(Error::dim(
                        "adam_step",
                        format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.shape()),
                    ))
                }
                None => return Err(Error::Contract(format!("gradient for unknown parameter {name}"))),
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let (b1, b2) = (self.beta1, self.beta2);
            for (((pi, mi), vi), gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_map(v: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("x".to_string(), Tensor::new(&[1], vec![v]).unwrap())])
    }

    #[test]
    fn zero_gradient_on_fresh_state_changes_nothing() {
        let mut p = scalar_map(1.5);
        let mut st = AdamState::new(0.1);
        st.step(&mut p, &scalar_map(0.0)).unwrap();
        assert_eq!(p["x"].data()[0], 1.5);
        assert_eq!(st.m["x"].data()[0], 0.0);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut p = scalar_map(1.0);
        let mut st = AdamState::new(0.1);
        st.step(&mut p, &scalar_map(2.0)).unwrap();
        let (m, v) = (st.m["x"].data()[0], st.v["x"].data()[0]);
        st.step(&mut p, &scalar_map(0.0)).unwrap();
        assert_eq!(st.m["x"].data()[0], 0.9 * m);
        assert_eq!(st.v["x"].data()[0], 0.999 * v);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = scalar_map(1.0);
        let mut st = AdamState::new(0.01);
        let g = 0.3;
        st.step(&mut p, &scalar_map(g)).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
        let want = 1.0 - 0.01 * g / (g.abs() + 1e-8);
        assert!((p["x"].data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn quadratic_run_converges() {
        let mut p = scalar_map(1.0);
        let mut st = AdamState::new(0.1);
        let mut prev = 1.0f64;
        for i in 0..100 {
            let x = p["x"].data()[0];
            st.step(&mut p, &scalar_map(2.0 * x)).unwrap();
            let now = p["x"].data()[0].abs();
            if i < 8 {
                assert!(now < prev);
            }
            prev = now;
        }
        assert!(prev < 0.05, "{prev}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = scalar_map(1.0);
        let mut st = AdamState::new(0.1);
        let err = st.step(&mut p, &scalar_map(f64::NAN)).unwrap_err();
        assert!(err.to_string().contains("parameter x"));
        assert_eq!(p["x"].data()[0], 1.0);
        assert_eq!(st.step, 0);
    }
}
