//! Triple scoring and the two training objectives.

use rand::seq::SliceRandom;
use rand::Rng;

use super::encode::EncodedSubgraph;
use super::{Bound, ModelError};
use crate::tensor::{Tape, Tensor, Var};

/// Linear score over [state(head) (+) state(tail) (+) transformed
/// target-relation embedding (+) subgraph summary], a 5d-wide input.
pub fn score_triple(
    tape: &mut Tape,
    bound: &Bound,
    enc: &EncodedSubgraph,
    target_rel: usize,
) -> Result<Var, ModelError> {
    let head_state = tape.row(enc.node_states, enc.head_local)?;
    let tail_state = tape.row(enc.node_states, enc.tail_local)?;
    let rel_row = tape.row(enc.rel_emb_final, target_rel)?;
    let features = tape.concat_vec(&[head_state, tail_state, rel_row, enc.summary])?;
    Ok(tape.dot(bound.var("w_score"), features)?)
}

/// Margin ranking loss over paired scores: sum of
/// max(0, f_neg - f_pos + margin).
pub fn supervised_loss(
    tape: &mut Tape,
    pos_scores: &[Var],
    neg_scores: &[Var],
    margin: f64,
) -> Result<Var, ModelError> {
    if pos_scores.len() != neg_scores.len() || pos_scores.is_empty() {
        return Err(ModelError::Invalid(format!(
            "supervised loss needs equal non-empty score lists, got {} vs {}",
            pos_scores.len(),
            neg_scores.len()
        )));
    }
    let pos = tape.concat_vec(pos_scores)?;
    let neg = tape.concat_vec(neg_scores)?;
    let diff = tape.sub(neg, pos)?;
    let shifted = tape.add_const(diff, margin);
    let hinge = tape.relu(shifted);
    Ok(tape.sum(hinge))
}

/// Random row permutation used by the corruption function.
pub fn corruption_permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

/// Row-wise shuffle of a feature matrix: structure untouched, node
/// features permuted. Differentiable through the gather.
pub fn corrupt_features<R: Rng>(
    tape: &mut Tape,
    features: Var,
    rng: &mut R,
) -> Result<Var, ModelError> {
    let n = tape.shape(features)[0];
    let perm = corruption_permutation(n, rng);
    Ok(tape.gather_rows(features, perm)?)
}

/// Mutual-information objective: a bilinear discriminator scores
/// (subgraph summary, global summary) pairs, where the global summary
/// is the mean of the batch's positive summaries. Returns
/// -(1/(N+M)) [sum log D(pos) + sum log(1 - D(neg))], to be minimized.
pub fn mi_loss(
    tape: &mut Tape,
    bound: &Bound,
    pos_summaries: &[Var],
    neg_summaries: &[Var],
) -> Result<Var, ModelError> {
    if pos_summaries.is_empty() {
        return Err(ModelError::Invalid(
            "mutual-information loss needs at least one positive summary".into(),
        ));
    }
    let w_mi = bound.var("w_mi");
    let pos = tape.stack_rows(pos_summaries)?;
    let global = tape.mean_rows(pos)?;

    let mut total: Option<Var> = None;
    let add_term = |tape: &mut Tape, term: Var, acc: &mut Option<Var>| -> Result<(), ModelError> {
        *acc = Some(match *acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
        Ok(())
    };

    let pos_proj = tape.matmul(pos, w_mi)?;
    let pos_logits = tape.matvec(pos_proj, global)?;
    let pos_probs = tape.sigmoid(pos_logits);
    let pos_log = tape.log(pos_probs);
    let pos_term = tape.sum(pos_log);
    add_term(tape, pos_term, &mut total)?;

    if !neg_summaries.is_empty() {
        let neg = tape.stack_rows(neg_summaries)?;
        let neg_proj = tape.matmul(neg, w_mi)?;
        let neg_logits = tape.matvec(neg_proj, global)?;
        let neg_probs = tape.sigmoid(neg_logits);
        let flipped = tape.neg(neg_probs);
        let one_minus = tape.add_const(flipped, 1.0);
        let neg_log = tape.log(one_minus);
        let neg_term = tape.sum(neg_log);
        add_term(tape, neg_term, &mut total)?;
    }

    let count = (pos_summaries.len() + neg_summaries.len()) as f64;
    let total = total.expect("at least the positive term");
    Ok(tape.mul_const(total, -1.0 / count))
}

/// Discriminator probabilities outside any tape, for probing a trained
/// model: sigmoid(s^T W g) for each summary s against a global summary g.
pub fn mi_discriminator_probs(w_mi: &Tensor, global: &[f64], summaries: &[Vec<f64>]) -> Vec<f64> {
    let d = global.len();
    summaries
        .iter()
        .map(|s| {
            let mut logit = 0.0;
            for i in 0..d {
                if s[i] != 0.0 {
                    let row = w_mi.row_slice(i);
                    for j in 0..d {
                        logit += s[i] * row[j] * global[j];
                    }
                }
            }
            1.0 / (1.0 + (-logit).exp())
        })
        .collect()
}
