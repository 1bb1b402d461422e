//! Training loop: batch assembly (cached positive subgraphs, fresh
//! negatives), the joint margin + mutual-information objective, Adam,
//! per-epoch validation, and best-checkpoint selection.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::auc_pr;
use crate::kg::{negative_sample, DatasetSplit, KGraph, KgError, Triple};
use crate::model::{
    corruption_permutation, encode_subgraph, init_params, mi_loss, score_triple, supervised_loss,
    AblationFlags, Bound, EncodeContext, Mode, Model, ModelConfig, ModelError,
};
use crate::subgraph::{read_subgraph_cache, write_subgraph_cache, Subgraph};
use crate::tensor::{
    adam_step, fnv1a64, save_checkpoint, AdamHyper, AdamState, Checkpoint, Tape, Tensor,
    TensorError,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("training aborted at epoch {epoch}, batch {batch}: {reason}")]
    Aborted {
        epoch: usize,
        batch: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    /// Margin of the ranking loss.
    pub margin: f64,
    /// Weight of the mutual-information term in the joint objective.
    pub mi_weight: f64,
    pub epochs: usize,
    /// Positive/negative subgraph pairs per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub ablation: AblationFlags,
    /// Fold valid.txt into the training graph for message passing.
    pub merge_valid: bool,
    /// Global L2 gradient clip.
    pub grad_clip: f64,
    pub dataset: Option<String>,
    pub data_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 0.001,
            margin: 10.0,
            mi_weight: 5.0,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            ablation: AblationFlags::default(),
            merge_valid: false,
            grad_clip: 10.0,
            dataset: None,
            data_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    #[serde(rename = "L_sup")]
    pub loss_sup: f64,
    #[serde(rename = "L_MI")]
    pub loss_mi: f64,
    pub valid_auc_pr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Weights of the best validation epoch.
    pub model: Model,
    /// Optimizer state at the end of training (for resumption).
    pub adam: AdamState,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_valid_auc: f64,
}

fn graph_fingerprint(g: &KGraph) -> u64 {
    let mut bytes = Vec::with_capacity(24 + g.triples().len() * 24);
    bytes.extend_from_slice(&(g.num_entities() as u64).to_le_bytes());
    bytes.extend_from_slice(&(g.num_relations() as u64).to_le_bytes());
    for t in g.triples() {
        bytes.extend_from_slice(&(t.head as u64).to_le_bytes());
        bytes.extend_from_slice(&(t.rel as u64).to_le_bytes());
        bytes.extend_from_slice(&(t.tail as u64).to_le_bytes());
    }
    fnv1a64(&bytes)
}

/// Extract subgraphs for `triples` in parallel, reusing an on-disk
/// cache when `cache_dir` is given. The key covers the graph content
/// and every extraction-relevant knob.
fn extract_all(
    model: &Model,
    g: &KGraph,
    triples: &[Triple],
    drop_target: bool,
    cache_dir: Option<&Path>,
    tag: &str,
) -> Result<Vec<Subgraph>, TrainError> {
    let cache_path = cache_dir.map(|dir| {
        let key = format!(
            "{}-{}-{}-{}-{:?}-{}",
            tag,
            graph_fingerprint(g),
            model.config.hops,
            drop_target,
            model.config.max_subgraph_nodes,
            triples.len(),
        );
        dir.join(format!("subgraphs_{:016x}.bin", fnv1a64(key.as_bytes())))
    });
    if let Some(path) = &cache_path {
        if path.exists() {
            match read_subgraph_cache(path) {
                Ok(sgs) if sgs.len() == triples.len() => {
                    log::info!("loaded {} cached subgraphs from {}", sgs.len(), path.display());
                    return Ok(sgs);
                }
                Ok(_) | Err(_) => log::warn!("stale subgraph cache at {}, re-extracting", path.display()),
            }
        }
    }
    let sgs: Vec<Subgraph> = triples
        .par_iter()
        .map(|t| model.extract(g, t, drop_target))
        .collect();
    if let Some(path) = &cache_path {
        fs::create_dir_all(path.parent().expect("cache dir"))?;
        write_subgraph_cache(path, &sgs)?;
    }
    Ok(sgs)
}

/// Validation AUC-PR with one fresh negative per positive. Extraction
/// and scoring parallelize over triples; negatives are seeded per
/// (run seed, epoch, index).
fn validation_auc(
    model: &Model,
    flags: AblationFlags,
    g: &KGraph,
    positives: &[Triple],
    cached: &[Subgraph],
    run_seed: u64,
    epoch: usize,
) -> Result<f64, TrainError> {
    if positives.is_empty() {
        return Ok(f64::NAN);
    }
    let scores: Result<Vec<(f64, f64)>, TrainError> = positives
        .par_iter()
        .zip(cached)
        .enumerate()
        .map(|(idx, (t, sg))| {
            let pos = score_cached(model, flags, g, t, sg, run_seed)?;
            let mut bytes = Vec::with_capacity(32);
            bytes.extend_from_slice(&run_seed.to_le_bytes());
            bytes.extend_from_slice(b"valid");
            bytes.extend_from_slice(&(epoch as u64).to_le_bytes());
            bytes.extend_from_slice(&(idx as u64).to_le_bytes());
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&bytes));
            let neg_triple = negative_sample(t, g, &mut rng);
            let neg = model.score_one(g, &neg_triple, flags, true, run_seed)?;
            Ok((pos, neg))
        })
        .collect();
    let scores = scores?;
    let pos: Vec<f64> = scores.iter().map(|s| s.0).collect();
    let neg: Vec<f64> = scores.iter().map(|s| s.1).collect();
    auc_pr(&pos, &neg).map_err(|e| TrainError::Invalid(e.to_string()))
}

/// Score a triple against an already-extracted subgraph, eval mode.
fn score_cached(
    model: &Model,
    flags: AblationFlags,
    g: &KGraph,
    t: &Triple,
    sg: &Subgraph,
    run_seed: u64,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, &model.params);
    let ctx = EncodeContext {
        graph: g,
        subgraph: sg,
        target: *t,
        guard_target_tokens: true,
        path_seed: Model::path_seed(run_seed, t),
    };
    let enc = encode_subgraph(
        &mut tape,
        &bound,
        &ctx,
        &model.config,
        flags,
        Mode::Eval,
        None,
        None,
    )?;
    let score = score_triple(&mut tape, &bound, &enc, t.rel)?;
    Ok(tape.value(score).item())
}

fn clip_gradients(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) {
    let norm_sq: f64 = grads
        .values()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = norm_sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}

pub fn train(
    config: &TrainConfig,
    split: &DatasetSplit,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    let g = &split.train_graph;
    if g.triples().is_empty() {
        return Err(TrainError::Invalid("training graph has no triples".into()));
    }
    let mut model_config = config.model.clone();
    model_config.num_relations = g.num_relations();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = init_params(&model_config, &mut rng);
    let mut model = Model {
        config: model_config,
        params,
    };
    log::info!(
        "training: {} triples, {} relations, {} parameters, ablation={}",
        g.triples().len(),
        g.num_relations(),
        model.params.total_elements(),
        config.ablation.label()
    );

    let cache_dir = out_dir.map(|d| d.join("cache"));
    let positives: Vec<Triple> = g.triples().to_vec();
    let pos_subgraphs = extract_all(
        &model,
        g,
        &positives,
        true,
        cache_dir.as_deref(),
        "train-pos",
    )?;
    let valid_subgraphs = extract_all(
        &model,
        g,
        &split.valid_triples,
        true,
        cache_dir.as_deref(),
        "valid-pos",
    )?;

    let mut adam = AdamState::new(AdamHyper {
        lr: config.lr,
        ..AdamHyper::default()
    });
    let use_mi = !config.ablation.no_mi && config.mi_weight != 0.0;

    let mut metrics_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(fs::File::create(dir.join("metrics.jsonl"))?)
        }
        None => None,
    };

    let mut epoch_stats = Vec::new();
    let mut best_epoch = 0;
    let mut best_auc = f64::NEG_INFINITY;
    let mut best_params = model.params.clone();

    let mut order: Vec<usize> = (0..positives.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sup_total = 0.0;
        let mut mi_total = 0.0;
        let mut batches = 0usize;

        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.is_empty() {
                log::warn!("skipping empty batch at epoch {epoch}");
                continue;
            }
            let step = run_batch(
                &model, config, g, &positives, &pos_subgraphs, chunk, use_mi, &mut rng,
            )
            .map_err(|e| match e {
                TrainError::Tensor(t) => TrainError::Aborted {
                    epoch,
                    batch: batch_idx,
                    reason: t.to_string(),
                },
                other => other,
            })?;
            let mut grads = step.grads;
            clip_gradients(&mut grads, config.grad_clip);
            adam_step(&mut model.params, &grads, &mut adam)?;
            sup_total += step.loss_sup;
            mi_total += step.loss_mi;
            batches += 1;
        }

        let valid_auc = validation_auc(
            &model,
            config.ablation,
            g,
            &split.valid_triples,
            &valid_subgraphs,
            config.seed,
            epoch,
        )?;
        let stats = EpochStats {
            epoch,
            loss_sup: sup_total / batches.max(1) as f64,
            loss_mi: mi_total / batches.max(1) as f64,
            valid_auc_pr: valid_auc,
        };
        log::info!(
            "epoch {:>3}: sup {:.4}  mi {:.4}  valid auc-pr {:.4}",
            stats.epoch,
            stats.loss_sup,
            stats.loss_mi,
            stats.valid_auc_pr
        );
        if let Some(f) = &mut metrics_file {
            writeln!(f, "{}", serde_json::to_string(&stats).expect("epoch stats"))?;
        }
        if valid_auc.is_nan() && !split.valid_triples.is_empty() {
            return Err(TrainError::Aborted {
                epoch,
                batch: 0,
                reason: "validation metric is NaN".into(),
            });
        }
        if valid_auc > best_auc || split.valid_triples.is_empty() {
            best_auc = valid_auc;
            best_epoch = epoch;
            best_params = model.params.clone();
        }
        epoch_stats.push(stats);
    }

    model.params = best_params;
    if let Some(dir) = out_dir {
        let mut cfg = config.clone();
        cfg.model = model.config.clone();
        let config_json = serde_json::to_string_pretty(&cfg).expect("config json");
        fs::write(dir.join("config.json"), &config_json)?;
        save_checkpoint(
            &dir.join("checkpoint.bin"),
            &Checkpoint {
                params: model.params.clone(),
                adam: Some(adam.clone()),
                config_json,
            },
        )?;
    }

    Ok(TrainOutcome {
        model,
        adam,
        epochs: epoch_stats,
        best_epoch,
        best_valid_auc: best_auc,
    })
}

struct BatchStep {
    grads: BTreeMap<String, Tensor>,
    loss_sup: f64,
    loss_mi: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_batch(
    model: &Model,
    config: &TrainConfig,
    g: &KGraph,
    positives: &[Triple],
    pos_subgraphs: &[Subgraph],
    chunk: &[usize],
    use_mi: bool,
    rng: &mut ChaCha8Rng,
) -> Result<BatchStep, TrainError> {
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, &model.params);
    let mut pos_scores = Vec::with_capacity(chunk.len());
    let mut neg_scores = Vec::with_capacity(chunk.len());
    let mut pos_summaries = Vec::new();
    let mut neg_summaries = Vec::new();

    for &idx in chunk {
        let t = &positives[idx];
        let sg = &pos_subgraphs[idx];
        let ctx = EncodeContext {
            graph: g,
            subgraph: sg,
            target: *t,
            guard_target_tokens: true,
            path_seed: Model::path_seed(config.seed, t),
        };
        let enc = encode_subgraph(
            &mut tape,
            &bound,
            &ctx,
            &model.config,
            config.ablation,
            Mode::Train { rng },
            None,
            None,
        )?;
        pos_scores.push(score_triple(&mut tape, &bound, &enc, t.rel)?);

        let neg_triple = negative_sample(t, g, rng);
        let neg_sg = model.extract(g, &neg_triple, true);
        let neg_ctx = EncodeContext {
            graph: g,
            subgraph: &neg_sg,
            target: neg_triple,
            guard_target_tokens: true,
            path_seed: Model::path_seed(config.seed, &neg_triple),
        };
        let neg_enc = encode_subgraph(
            &mut tape,
            &bound,
            &neg_ctx,
            &model.config,
            config.ablation,
            Mode::Train { rng },
            None,
            None,
        )?;
        neg_scores.push(score_triple(&mut tape, &bound, &neg_enc, neg_triple.rel)?);

        if use_mi {
            let perm = corruption_permutation(sg.num_nodes(), rng);
            let corrupted = encode_subgraph(
                &mut tape,
                &bound,
                &ctx,
                &model.config,
                config.ablation,
                Mode::Train { rng },
                Some(&perm),
                Some((enc.path_summary, enc.path_betas, enc.paths.clone())),
            )?;
            pos_summaries.push(enc.summary);
            neg_summaries.push(corrupted.summary);
        }
    }

    let sup = supervised_loss(&mut tape, &pos_scores, &neg_scores, config.margin)?;
    let (total, mi_value) = if use_mi {
        let mi = mi_loss(&mut tape, &bound, &pos_summaries, &neg_summaries)?;
        let weighted = tape.mul_const(mi, config.mi_weight);
        (tape.add(sup, weighted)?, tape.value(mi).item())
    } else {
        (sup, 0.0)
    };

    let grads = tape.backward(total)?;
    Ok(BatchStep {
        grads: bound.gradient_map(&model.params, &grads),
        loss_sup: tape.value(sup).item(),
        loss_mi: mi_value,
    })
}

/// Load a checkpoint back into a model plus its training config.
pub fn load_model(path: &Path) -> Result<(Model, TrainConfig, Option<AdamState>), TrainError> {
    let ckpt = crate::tensor::load_checkpoint(path)?;
    let config: TrainConfig = serde_json::from_str(&ckpt.config_json)
        .map_err(|e| TrainError::Invalid(format!("bad config block in checkpoint: {e}")))?;
    Ok((
        Model {
            config: config.model.clone(),
            params: ckpt.params,
        },
        config,
        ckpt.adam,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_clip_rescales_large_gradients() {
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), Tensor::vector(vec![30.0, 40.0]));
        clip_gradients(&mut grads, 10.0);
        let g = &grads["a"];
        let norm: f64 = g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 10.0).abs() < 1e-12);
        assert!((g.data()[0] / g.data()[1] - 0.75).abs() < 1e-12);

        let mut small = BTreeMap::new();
        small.insert("a".to_string(), Tensor::vector(vec![0.3, 0.4]));
        clip_gradients(&mut small, 10.0);
        assert_eq!(small["a"].data(), &[0.3, 0.4]);
    }
}
