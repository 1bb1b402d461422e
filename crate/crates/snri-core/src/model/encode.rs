//! Forward pass of the subgraph encoder, recorded on a tape.

use rand_chacha::ChaCha8Rng;

use super::paths::{enumerate_paths, RelationPath};
use super::{AblationFlags, Bound, ModelConfig, ModelError};
use crate::kg::{KGraph, Triple};
use crate::subgraph::{positional_onehot, Subgraph};
use crate::tensor::{gru_cell, Tape, Tensor, Var};

/// Dropout on/off. Training mode threads the run RNG through the masks.
pub enum Mode<'r> {
    Eval,
    Train { rng: &'r mut ChaCha8Rng },
}

/// Everything encode needs to know about one target triple.
pub struct EncodeContext<'a> {
    pub graph: &'a KGraph,
    pub subgraph: &'a Subgraph,
    /// Target triple in global entity ids.
    pub target: Triple,
    /// Apply the training-time leakage guard when enumerating paths.
    pub guard_target_tokens: bool,
    /// Seed for the path-cap sampler.
    pub path_seed: u64,
}

/// Tape handles for one encoded subgraph.
pub struct EncodedSubgraph {
    /// Final per-node states (n, d), after the gating unit.
    pub node_states: Var,
    /// Relation embeddings transformed through every layer (2|R|, d).
    pub rel_emb_final: Var,
    /// Mean readout over node states (d,).
    pub subgraph_readout: Var,
    /// Attention-aggregated path representation (d,), zeros when the
    /// path module is ablated.
    pub path_summary: Var,
    /// readout (+) path summary (2d,).
    pub summary: Var,
    pub head_local: usize,
    pub tail_local: usize,
    /// Enumerated (possibly capped) paths, aligned with `path_betas`.
    pub paths: Vec<RelationPath>,
    pub path_betas: Option<Var>,
}

/// Initial node features: an attention-weighted sum of the node's full
/// neighbor relation embeddings (keyed by similarity to the target
/// relation), concatenated with the positional one-hot and projected to
/// width d. Nodes with no incident relations get a zero relation part,
/// as does everything under the `no_nrf` ablation.
pub fn init_node_features(
    tape: &mut Tape,
    bound: &Bound,
    sg: &Subgraph,
    target_rel: usize,
    config: &ModelConfig,
    flags: AblationFlags,
) -> Result<Var, ModelError> {
    let d = config.embed_dim;
    let n = sg.num_nodes();
    let rel_emb = bound.var("rel_emb");
    let target_row = tape.row(rel_emb, target_rel)?;

    let mut rel_parts = Vec::with_capacity(n);
    for local in 0..n {
        let tokens = &sg.neighbor_rels[local];
        if flags.no_nrf || tokens.is_empty() {
            rel_parts.push(tape.constant(Tensor::vector(vec![0.0; d])));
            continue;
        }
        let rows = tape.gather_rows(rel_emb, tokens.clone())?;
        let scores = tape.matvec(rows, target_row)?;
        let alpha = tape.softmax(scores)?;
        rel_parts.push(tape.vecmat(alpha, rows)?);
    }
    let rel_feat = tape.stack_rows(&rel_parts)?;

    let dp = config.pos_dim();
    let mut pos_data = Vec::with_capacity(n * dp);
    for local in 0..n {
        pos_data.extend(positional_onehot(sg, local));
    }
    let pos_feat = tape.constant(Tensor::matrix(n, dp, pos_data).expect("positional shape"));

    let both = tape.concat_cols(&[rel_feat, pos_feat])?;
    Ok(tape.matmul(both, bound.var("w0"))?)
}

/// One message-passing layer. Each directed edge (i, r, j) sends its
/// head an attention-scaled, relation-transformed fusion of relation
/// and tail state (fusion = e_r - h_j, which keeps direction). Every
/// node also applies a learned self transform, so edge-free subgraphs
/// still update. Relation embeddings get their own per-layer transform.
pub fn gnn_layer(
    tape: &mut Tape,
    bound: &Bound,
    edges: &[Triple],
    num_nodes: usize,
    node_states: Var,
    rel_emb: Var,
    target_rel: usize,
    layer: usize,
    config: &ModelConfig,
) -> Result<(Var, Var), ModelError> {
    let d = config.embed_dim;
    let aggregate = if edges.is_empty() {
        tape.constant(Tensor::zeros(&[num_nodes, d]))
    } else {
        let heads: Vec<usize> = edges.iter().map(|e| e.head).collect();
        let tails: Vec<usize> = edges.iter().map(|e| e.tail).collect();
        let rels: Vec<usize> = edges.iter().map(|e| e.rel).collect();
        let n_edges = edges.len();

        let h_heads = tape.gather_rows(node_states, heads.clone())?;
        let h_tails = tape.gather_rows(node_states, tails)?;
        let e_rels = tape.gather_rows(rel_emb, rels.clone())?;
        let e_target = tape.gather_rows(rel_emb, vec![target_rel; n_edges])?;

        let cat = tape.concat_cols(&[h_heads, h_tails, e_rels, e_target])?;
        let pre = tape.matmul(cat, bound.var(&format!("layer{layer}.attn_w1")))?;
        let pre = tape.add_row(pre, bound.var(&format!("layer{layer}.attn_b1")))?;
        let hidden = tape.sigmoid(pre);
        let logits = tape.matvec(hidden, bound.var(&format!("layer{layer}.attn_w2")))?;
        let logits = tape.add_scalar_t(logits, bound.var(&format!("layer{layer}.attn_b2")))?;
        let attention = tape.sigmoid(logits);

        let fused = tape.sub(e_rels, h_tails)?;
        let weighted = tape.scale_rows(fused, attention)?;

        if config.uses_bases() {
            let coef = bound.var(&format!("layer{layer}.msg_coef"));
            let coef_edges = tape.gather_rows(coef, rels)?;
            let mut message: Option<Var> = None;
            for b in 0..config.num_bases {
                let basis = bound.var(&format!("layer{layer}.msg_basis{b}"));
                let transformed = tape.matmul(weighted, basis)?;
                let weights = tape.column(coef_edges, b)?;
                let part = tape.scale_rows(transformed, weights)?;
                message = Some(match message {
                    Some(acc) => tape.add(acc, part)?,
                    None => part,
                });
            }
            tape.scatter_add_rows(message.expect("at least one basis"), heads, num_nodes)?
        } else {
            // Group edges by relation for the per-relation transform.
            let mut by_rel: Vec<Vec<usize>> = vec![Vec::new(); config.num_relations];
            for (pos, e) in edges.iter().enumerate() {
                by_rel[e.rel].push(pos);
            }
            let mut aggregate = tape.constant(Tensor::zeros(&[num_nodes, d]));
            for (rel, positions) in by_rel.into_iter().enumerate() {
                if positions.is_empty() {
                    continue;
                }
                let rel_heads: Vec<usize> = positions.iter().map(|&p| heads[p]).collect();
                let rows = tape.gather_rows(weighted, positions)?;
                let transformed = tape.matmul(rows, bound.var(&format!("layer{layer}.msg_w{rel}")))?;
                let scattered = tape.scatter_add_rows(transformed, rel_heads, num_nodes)?;
                aggregate = tape.add(aggregate, scattered)?;
            }
            aggregate
        }
    };

    let self_msg = tape.matmul(node_states, bound.var(&format!("layer{layer}.w_self")))?;
    let next_states = tape.add(aggregate, self_msg)?;
    let next_rel = tape.matmul(rel_emb, bound.var(&format!("layer{layer}.rel_transform")))?;
    Ok((next_states, next_rel))
}

/// Encode enumerated paths: a recurrent pass over each path's relation
/// embeddings, then attention over paths keyed by the target relation.
/// Returns (path summary, betas). All paths of one triple share a
/// sequence shape, so steps batch as (num_paths, d) matrices.
pub(crate) fn encode_path_set(
    tape: &mut Tape,
    bound: &Bound,
    paths: &[RelationPath],
    target_rel: usize,
    config: &ModelConfig,
) -> Result<(Var, Var), ModelError> {
    let d = config.embed_dim;
    let n_paths = paths.len();
    let rel_emb = bound.var("rel_emb");
    let gru = bound.gru("path_gru");

    let mut steps: Vec<Vec<usize>> = Vec::new();
    if paths[0].from_head.is_some() {
        steps.push(paths.iter().map(|p| p.from_head.expect("uniform shape")).collect());
    }
    steps.push(vec![target_rel; n_paths]);
    if paths[0].from_tail.is_some() {
        steps.push(paths.iter().map(|p| p.from_tail.expect("uniform shape")).collect());
    }

    let mut hidden = tape.constant(Tensor::zeros(&[n_paths, d]));
    for tokens in steps {
        let inputs = tape.gather_rows(rel_emb, tokens)?;
        hidden = gru_cell(tape, inputs, hidden, &gru)?;
    }

    let target_row = tape.row(rel_emb, target_rel)?;
    let logits = tape.matvec(hidden, target_row)?;
    let betas = tape.softmax(logits)?;
    let summary = tape.vecmat(betas, hidden)?;
    Ok((summary, betas))
}

/// Full encode of one subgraph: init features, L message-passing layers
/// with dropout between them in training mode, a per-node gating unit
/// with zero initial hidden state (order-free, so node relabeling
/// cannot change the result), mean readout, and the path summary.
///
/// `corrupt_perm` swaps in a row permutation of the initial features
/// (the corruption used for the mutual-information negatives).
/// `path_override` reuses an already-computed path summary var, which
/// spares the corrupted copy a redundant path pass.
#[allow(clippy::too_many_arguments)]
pub fn encode_subgraph(
    tape: &mut Tape,
    bound: &Bound,
    ctx: &EncodeContext,
    config: &ModelConfig,
    flags: AblationFlags,
    mut mode: Mode,
    corrupt_perm: Option<&[usize]>,
    path_override: Option<(Var, Option<Var>, Vec<RelationPath>)>,
) -> Result<EncodedSubgraph, ModelError> {
    let sg = ctx.subgraph.canonicalize();
    let d = config.embed_dim;
    let n = sg.num_nodes();

    let mut states = init_node_features(tape, bound, &sg, ctx.target.rel, config, flags)?;
    if let Some(perm) = corrupt_perm {
        if perm.len() != n {
            return Err(ModelError::Invalid(format!(
                "corruption permutation has length {}, subgraph has {n} nodes",
                perm.len()
            )));
        }
        states = tape.gather_rows(states, perm.to_vec())?;
    }

    let mut rel_emb = bound.var("rel_emb");
    for layer in 0..config.layers {
        let (next_states, next_rel) = gnn_layer(
            tape,
            bound,
            &sg.edges,
            n,
            states,
            rel_emb,
            ctx.target.rel,
            layer,
            config,
        )?;
        states = next_states;
        rel_emb = next_rel;
        let between_layers = layer + 1 < config.layers;
        if between_layers {
            if let Mode::Train { rng } = &mut mode {
                states = tape.dropout(states, config.dropout, *rng)?;
            }
        }
    }

    let zero_hidden = tape.constant(Tensor::zeros(&[n, d]));
    let node_gru = bound.gru("node_gru");
    let gated = gru_cell(tape, states, zero_hidden, &node_gru)?;
    let readout = tape.mean_rows(gated)?;

    let (path_summary, path_betas, paths) = if flags.no_nrp {
        (
            tape.constant(Tensor::vector(vec![0.0; d])),
            None,
            Vec::new(),
        )
    } else if let Some((summary, betas, paths)) = path_override {
        (summary, betas, paths)
    } else {
        let paths = enumerate_paths(
            ctx.graph,
            &ctx.target,
            ctx.guard_target_tokens,
            config.max_paths,
            ctx.path_seed,
        );
        let (summary, betas) = encode_path_set(tape, bound, &paths, ctx.target.rel, config)?;
        (summary, Some(betas), paths)
    };

    let summary = tape.concat_vec(&[readout, path_summary])?;
    Ok(EncodedSubgraph {
        node_states: gated,
        rel_emb_final: rel_emb,
        subgraph_readout: readout,
        path_summary,
        summary,
        head_local: sg.head_local,
        tail_local: sg.tail_local,
        paths,
        path_betas,
    })
}
