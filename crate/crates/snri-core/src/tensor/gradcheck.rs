//! Central finite-difference oracle. Test support only: it re-runs the
//! forward pass at perturbed parameters and never touches
//! [`Tape::backward`](super::Tape::backward), so it stays an independent
//! check of the reverse sweep.

use std::collections::BTreeMap;

use super::{ParamSet, Tensor};

/// Numerically estimate d(loss)/d(param) for every coordinate of every
/// parameter via central differences with step `eps`.
pub fn finite_diff_grads(
    params: &ParamSet,
    eps: f64,
    mut loss_fn: impl FnMut(&ParamSet) -> f64,
) -> BTreeMap<String, Tensor> {
    let mut scratch = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    let mut out = BTreeMap::new();
    for name in names {
        let numel = params.get(&name).unwrap().numel();
        let mut grad = vec![0.0; numel];
        for i in 0..numel {
            let orig = scratch.get(&name).unwrap().data()[i];
            scratch.get_mut(&name).unwrap().data_mut()[i] = orig + eps;
            let plus = loss_fn(&scratch);
            scratch.get_mut(&name).unwrap().data_mut()[i] = orig - eps;
            let minus = loss_fn(&scratch);
            scratch.get_mut(&name).unwrap().data_mut()[i] = orig;
            grad[i] = (plus - minus) / (2.0 * eps);
        }
        let shape = params.get(&name).unwrap().shape().to_vec();
        out.insert(name, Tensor::new(shape, grad).unwrap());
    }
    out
}

/// |a-b| relative to max(|a|, |b|), floored so that agreement in the
/// finite-difference noise floor does not explode the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Largest coordinate-wise [`rel_err`] across two gradient maps.
pub fn max_rel_err(
    reference: &BTreeMap<String, Tensor>,
    candidate: &BTreeMap<String, Tensor>,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (name, r) in reference {
        let c = candidate
            .get(name)
            .unwrap_or_else(|| panic!("candidate is missing gradient for `{name}`"));
        for (a, b) in r.data().iter().zip(c.data()) {
            worst = worst.max(rel_err(*a, *b));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn finite_differences_match_tape_on_a_small_composite() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::matrix(2, 2, vec![0.3, -0.7, 1.1, 0.4]).unwrap());
        params.insert("b", Tensor::vector(vec![0.2, -0.1]));

        let forward = |p: &ParamSet| -> f64 {
            let mut tape = Tape::new();
            let w = tape.leaf(p.get("w").unwrap().clone(), true);
            let b = tape.leaf(p.get("b").unwrap().clone(), true);
            let x = tape.constant(Tensor::matrix(1, 2, vec![0.5, -1.5]).unwrap());
            let h = tape.matmul(x, w).unwrap();
            let h = tape.add_row(h, b).unwrap();
            let s = tape.sigmoid(h);
            let loss = tape.sum(s);
            tape.value(loss).item()
        };

        let fd = finite_diff_grads(&params, 1e-6, forward);

        let mut tape = Tape::new();
        let w = tape.leaf(params.get("w").unwrap().clone(), true);
        let b = tape.leaf(params.get("b").unwrap().clone(), true);
        let x = tape.constant(Tensor::matrix(1, 2, vec![0.5, -1.5]).unwrap());
        let h = tape.matmul(x, w).unwrap();
        let h = tape.add_row(h, b).unwrap();
        let s = tape.sigmoid(h);
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        let mut tape_grads = BTreeMap::new();
        tape_grads.insert("w".to_string(), grads.get_or_zeros(w, &[2, 2]));
        tape_grads.insert("b".to_string(), grads.get_or_zeros(b, &[2]));

        assert!(max_rel_err(&fd, &tape_grads) < 1e-6);
    }
}
