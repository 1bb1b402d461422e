use std::collections::BTreeMap;

use super::{ParamSet, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers, lazily shaped from the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub hyper: AdamHyper,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(hyper: AdamHyper) -> Self {
        AdamState {
            step: 0,
            hyper,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update over every parameter. Missing entries
/// in `grads` count as zero gradient.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
) -> Result<(), TensorError> {
    state.step += 1;
    let AdamHyper {
        lr,
        beta1,
        beta2,
        eps,
    } = state.hyper;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);

    for (name, p) in params.iter_mut() {
        let zero;
        let g = match grads.get(name) {
            Some(g) => {
                if g.shape() != p.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "adam_step",
                        details: format!(
                            "gradient for `{name}` has shape {:?}, parameter {:?}",
                            g.shape(),
                            p.shape()
                        ),
                    });
                }
                g
            }
            None => {
                zero = Tensor::zeros(p.shape());
                &zero
            }
        };
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
            vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(vec![1.0, -2.0, 3.0]));
        let mut state = AdamState::new(AdamHyper::default());
        let grads = BTreeMap::new();
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params.get("w").unwrap().data(), &[1.0, -2.0, 3.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // m_hat = v_hat = g at step 1, so the update is lr / (1 + eps).
        let mut params = ParamSet::new();
        params.insert("w", Tensor::scalar(1.0));
        let mut state = AdamState::new(AdamHyper::default());
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(1.0));
        adam_step(&mut params, &grads, &mut state).unwrap();
        let w = params.get("w").unwrap().item();
        assert!((w - 0.999).abs() < 1e-9, "w = {w}");
    }

    #[test]
    fn identical_params_and_grads_update_identically() {
        let mut params = ParamSet::new();
        params.insert("a", Tensor::scalar(0.7));
        params.insert("b", Tensor::scalar(0.7));
        let mut state = AdamState::new(AdamHyper::default());
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), Tensor::scalar(-0.3));
        grads.insert("b".to_string(), Tensor::scalar(-0.3));
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state).unwrap();
        }
        assert_eq!(params.get("a").unwrap(), params.get("b").unwrap());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::vector(vec![1.0, 2.0]));
        let mut state = AdamState::new(AdamHyper::default());
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(1.0));
        assert!(adam_step(&mut params, &grads, &mut state).is_err());
    }
}
