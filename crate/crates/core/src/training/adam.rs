use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied as `lr · weight_decay · θ`, outside the moments.
    pub weight_decay: f64,
}

/// First and second moments per parameter plus the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Matrix>,
    pub v: BTreeMap<String, Matrix>,
}

/// One bias-corrected Adam update. Every gradient is checked for finiteness
/// before any parameter changes, so a rejected step leaves everything as it
/// was.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &BTreeMap<String, Matrix>,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { name: name.clone() });
        }
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("gradient of `{name}` is {:?}, parameter {:?}", g.shape(), p.shape()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (name, g) in grads {
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
        let p = params
            .get_mut(name)
            .expect("checked above that every gradient has a parameter");
        for (((pi, mi), vi), &gi) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mi = hyper.beta1 * *mi + (1.0 - hyper.beta1) * gi;
            *vi = hyper.beta2 * *vi + (1.0 - hyper.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= hyper.lr * (m_hat / (v_hat.sqrt() + hyper.eps) + hyper.weight_decay * *pi);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(lr: f64, wd: f64) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
        }
    }

    fn single(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Matrix::filled(1, 1, value)).unwrap();
        p
    }

    fn grad(value: f64) -> BTreeMap<String, Matrix> {
        BTreeMap::from([("w".to_string(), Matrix::filled(1, 1, value))])
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(0.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &grad(1.0), &mut s, &hyper(0.1, 0.0)).unwrap();
        let w = p.get("w").unwrap().get(0, 0);
        // m̂ = v̂ = 1, so the step is lr·1/(1 + eps)
        assert!((w + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{w}");
        assert!((w + 0.1).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = single(1.5);
        let mut s = AdamState::default();
        for _ in 0..3 {
            adam_step(&mut p, &grad(0.0), &mut s, &hyper(0.1, 0.0)).unwrap();
        }
        assert_eq!(p.get("w").unwrap().get(0, 0), 1.5);
    }

    #[test]
    fn decay_shrinks_towards_zero() {
        let mut p = single(2.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &grad(0.0), &mut s, &hyper(0.1, 0.5)).unwrap();
        assert!((p.get("w").unwrap().get(0, 0) - 1.9).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_leaves_state_untouched() {
        let mut p = single(1.0);
        let mut s = AdamState::default();
        let err = adam_step(&mut p, &grad(f64::NAN), &mut s, &hyper(0.1, 0.0)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { ref name } if name == "w"));
        assert_eq!(s, AdamState::default());
        assert_eq!(p.get("w").unwrap().get(0, 0), 1.0);
    }
}
