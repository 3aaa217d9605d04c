use std::collections::BTreeMap;

use super::tensor::{Scalar, Tensor};
use super::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Tensor<S>>,
    pub v: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Default for AdamState<S> {
    fn default() -> Self {
        Self::new(AdamConfig::default())
    }
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update. Parameters without an entry in `grads`
/// are left untouched, moments included.
pub fn adam_step<'a, S, I>(
    params: I,
    grads: &BTreeMap<String, Tensor<S>>,
    state: &mut AdamState<S>,
    lr: f64,
) -> Result<(), AutodiffError>
where
    S: Scalar,
    I: IntoIterator<Item = (&'a str, &'a mut Tensor<S>)>,
{
    let params: Vec<(&str, &mut Tensor<S>)> = params.into_iter().collect();
    for (name, p) in &params {
        if let Some(g) = grads.get(*name) {
            if g.shape() != p.shape() {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "adam: gradient for {name} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = S::of(1.0 - c.beta1.powi(t));
    let bc2 = S::of(1.0 - c.beta2.powi(t));
    let (b1, b2, eps, lr) = (S::of(c.beta1), S::of(c.beta2), S::of(c.eps), S::of(lr));
    for (name, p) in params {
        let Some(g) = grads.get(name) else {
            continue;
        };
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = b1 * *mi + (S::ONE - b1) * gi;
            *vi = b2 * *vi + (S::ONE - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, t: Tensor<f64>) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([(name.to_string(), t)])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut w = Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let before = w.clone();
        let mut st = AdamState::default();
        adam_step(
            [("w", &mut w)],
            &single("w", Tensor::zeros(&[3])),
            &mut st,
            1e-3,
        )
        .unwrap();
        assert_eq!(w, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut w = Tensor::from_f64(&[3], &[0.0, 0.0, 0.0]).unwrap();
        let g = Tensor::from_f64(&[3], &[5.0, -0.25, 1e3]).unwrap();
        let mut st = AdamState::default();
        adam_step([("w", &mut w)], &single("w", g), &mut st, 1e-3).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε).
        for (&wi, s) in w.data().iter().zip([1.0, -1.0, 1.0]) {
            assert!((wi + 1e-3 * s).abs() < 1e-3 * 1e-6, "{wi}");
        }
    }

    #[test]
    fn decreases_quadratic() {
        let mut w = Tensor::from_f64(&[1], &[1.0]).unwrap();
        let mut st = AdamState::default();
        let mut prev = 1.0;
        for _ in 0..3 {
            let g = Tensor::from_f64(&[1], &[2.0 * w.data()[0]]).unwrap();
            adam_step([("w", &mut w)], &single("w", g), &mut st, 0.1).unwrap();
            let f = w.data()[0] * w.data()[0];
            assert!(f < prev);
            prev = f;
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut w = Tensor::<f64>::zeros(&[2]);
        let mut st = AdamState::default();
        let err = adam_step(
            [("w", &mut w)],
            &single("w", Tensor::zeros(&[3])),
            &mut st,
            1e-3,
        );
        assert!(matches!(err, Err(AutodiffError::ShapeMismatch(_))));
    }
}
