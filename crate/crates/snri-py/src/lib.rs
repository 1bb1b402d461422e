//! Python bindings: dataset loading, subgraph extraction, training,
//! evaluation, and the ranking metrics, exposed as the `snri_py`
//! extension module.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use snri_core::eval as core_eval;
use snri_core::kg::{self, DatasetSplit, Triple};
use snri_core::model::{AblationFlags, Model, ModelConfig};
use snri_core::subgraph::extract_enclosing;
use snri_core::synthetic::{write_synthetic_dataset, SyntheticConfig};
use snri_core::train::{self, TrainConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// An inductive dataset split: training graph plus a disjoint test
/// graph, with held-out positives for each side.
#[pyclass]
struct Dataset {
    split: DatasetSplit,
}

impl Dataset {
    fn side(&self, test: bool) -> (&kg::KGraph, &[String]) {
        if test {
            (&self.split.test_graph, &self.split.test_entity_names)
        } else {
            (&self.split.train_graph, &self.split.train_entity_names)
        }
    }

    fn resolve(&self, test: bool, head: &str, rel: &str, tail: &str) -> PyResult<Triple> {
        let (_, names) = self.side(test);
        let find_entity = |n: &str| {
            names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| value_err(format!("unknown entity `{n}`")))
        };
        let rel_id = self
            .split
            .rel_names
            .iter()
            .position(|x| x == rel)
            .ok_or_else(|| value_err(format!("unknown relation `{rel}`")))?;
        Ok(Triple {
            head: find_entity(head)?,
            rel: rel_id,
            tail: find_entity(tail)?,
        })
    }
}

#[pymethods]
impl Dataset {
    /// (num_relations, num_nodes, num_triples) of the training graph.
    fn train_stats(&self) -> (usize, usize, usize) {
        kg::stats(&self.split.train_graph)
    }

    /// (num_relations, num_nodes, num_triples) of the test graph.
    fn test_stats(&self) -> (usize, usize, usize) {
        kg::stats(&self.split.test_graph)
    }

    fn num_valid_triples(&self) -> usize {
        self.split.valid_triples.len()
    }

    fn num_test_triples(&self) -> usize {
        self.split.test_triples.len()
    }

    fn relation_names(&self) -> Vec<String> {
        self.split.rel_names.clone()
    }

    /// Directed relation tokens incident to an entity in the full
    /// graph (incoming offset by the relation count).
    #[pyo3(signature = (entity, test=false))]
    fn neighboring_relations(&self, entity: &str, test: bool) -> PyResult<Vec<usize>> {
        let (graph, names) = self.side(test);
        let id = names
            .iter()
            .position(|x| x == entity)
            .ok_or_else(|| value_err(format!("unknown entity `{entity}`")))?;
        Ok(graph.neighboring_relations(id).map_err(value_err)?.to_vec())
    }

    /// Enclosing subgraph around a pair: returns a dict with global
    /// node names, edges, and the double-radius distance labels.
    #[pyo3(signature = (head, tail, hops=3, test=false))]
    fn extract_subgraph<'py>(
        &self,
        py: Python<'py>,
        head: &str,
        tail: &str,
        hops: usize,
        test: bool,
    ) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        use pyo3::types::PyDict;
        let (graph, names) = self.side(test);
        let find = |n: &str| {
            names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| value_err(format!("unknown entity `{n}`")))
        };
        let sg = extract_enclosing(graph, find(head)?, find(tail)?, hops, None);
        let dict = PyDict::new(py);
        let node_names: Vec<&str> = sg.nodes.iter().map(|&g| names[g].as_str()).collect();
        dict.set_item("nodes", node_names)?;
        let edges: Vec<(&str, &str, &str)> = sg
            .edges
            .iter()
            .map(|e| {
                (
                    names[sg.nodes[e.head]].as_str(),
                    self.split.rel_names[e.rel].as_str(),
                    names[sg.nodes[e.tail]].as_str(),
                )
            })
            .collect();
        dict.set_item("edges", edges)?;
        dict.set_item("dist_to_head", sg.dist_to_head.clone())?;
        dict.set_item("dist_to_tail", sg.dist_to_tail.clone())?;
        dict.set_item("hops", sg.hops)?;
        Ok(dict)
    }
}

/// Load `<root>/<name>` and `<root>/<name>_ind`.
#[pyfunction]
#[pyo3(signature = (root, name, merge_valid=false))]
fn load_dataset(root: PathBuf, name: &str, merge_valid: bool) -> PyResult<Dataset> {
    let split = kg::load_dataset(&root, name, merge_valid).map_err(value_err)?;
    Ok(Dataset { split })
}

/// Write the planted-rule synthetic dataset under `root`.
#[pyfunction]
#[pyo3(signature = (root, name="synthetic", entities=1000, test_entities=300, seed=0))]
fn generate_synthetic(
    root: PathBuf,
    name: &str,
    entities: usize,
    test_entities: usize,
    seed: u64,
) -> PyResult<()> {
    let cfg = SyntheticConfig {
        train_entities: entities,
        test_entities,
        ..Default::default()
    };
    write_synthetic_dataset(&root, name, &cfg, seed).map_err(runtime_err)
}

/// A trained model with its configuration.
#[pyclass]
struct TrainedModel {
    model: Model,
    config: TrainConfig,
}

#[pymethods]
impl TrainedModel {
    fn num_parameters(&self) -> usize {
        self.model.params.total_elements()
    }

    /// Score one triple (entity and relation names) against the
    /// training or test graph.
    #[pyo3(signature = (dataset, head, rel, tail, test=true))]
    fn score(
        &self,
        dataset: &Dataset,
        head: &str,
        rel: &str,
        tail: &str,
        test: bool,
    ) -> PyResult<f64> {
        let triple = dataset.resolve(test, head, rel, tail)?;
        let (graph, _) = dataset.side(test);
        self.model
            .score_one(graph, &triple, self.config.ablation, false, self.config.seed)
            .map_err(runtime_err)
    }

    /// Full evaluation on the dataset's test split. Returns a dict with
    /// auc_pr, hits_at_10, and the complete report as JSON.
    #[pyo3(signature = (dataset, candidates=50, seed=0))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: &Dataset,
        candidates: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        use pyo3::types::PyDict;
        let opts = core_eval::EvalOptions {
            num_candidates: candidates,
            seed,
            ..Default::default()
        };
        let report = core_eval::evaluate(
            &self.model,
            self.config.ablation,
            &dataset.split.test_graph,
            &dataset.split.test_triples,
            &dataset.split.rel_names,
            &dataset.split.test_entity_names,
            &opts,
        )
        .map_err(runtime_err)?;
        let dict = PyDict::new(py);
        dict.set_item("auc_pr", report.auc_pr)?;
        dict.set_item("hits_at_10", report.hits_at_10)?;
        dict.set_item("num_triples", report.num_triples)?;
        dict.set_item(
            "report_json",
            serde_json::to_string(&report).map_err(runtime_err)?,
        )?;
        Ok(dict)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let config_json = serde_json::to_string_pretty(&self.config).map_err(runtime_err)?;
        snri_core::tensor::save_checkpoint(
            &path,
            &snri_core::tensor::Checkpoint {
                params: self.model.params.clone(),
                adam: None,
                config_json,
            },
        )
        .map_err(runtime_err)
    }
}

/// Train on a dataset. Returns the best-validation-epoch model.
#[pyfunction]
#[pyo3(signature = (dataset, epochs=30, seed=0, hops=3, embed_dim=32, mi_weight=5.0,
                    margin=10.0, lr=0.001, batch_size=16, flags="", out_dir=None))]
#[allow(clippy::too_many_arguments)]
fn train_model(
    dataset: &Dataset,
    epochs: usize,
    seed: u64,
    hops: usize,
    embed_dim: usize,
    mi_weight: f64,
    margin: f64,
    lr: f64,
    batch_size: usize,
    flags: &str,
    out_dir: Option<PathBuf>,
) -> PyResult<TrainedModel> {
    let config = TrainConfig {
        model: ModelConfig {
            embed_dim,
            hops,
            ..Default::default()
        },
        epochs,
        seed,
        mi_weight,
        margin,
        lr,
        batch_size,
        ablation: AblationFlags::parse_list(flags).map_err(value_err)?,
        ..Default::default()
    };
    let outcome =
        train::train(&config, &dataset.split, out_dir.as_deref()).map_err(runtime_err)?;
    let mut config = config;
    config.model = outcome.model.config.clone();
    Ok(TrainedModel {
        model: outcome.model,
        config,
    })
}

/// Load a checkpoint written by `train_model` or the CLI.
#[pyfunction]
fn load_model(path: PathBuf) -> PyResult<TrainedModel> {
    let (model, config, _) = train::load_model(Path::new(&path)).map_err(value_err)?;
    Ok(TrainedModel { model, config })
}

/// Average precision over pooled positive/negative scores.
#[pyfunction]
fn auc_pr(pos_scores: Vec<f64>, neg_scores: Vec<f64>) -> PyResult<f64> {
    core_eval::auc_pr(&pos_scores, &neg_scores).map_err(value_err)
}

/// 1 if the positive ranks in the top `cutoff` of its candidates
/// (pessimistic ties), else 0.
#[pyfunction]
#[pyo3(signature = (pos_score, candidate_scores, cutoff=10))]
fn hits_at(pos_score: f64, candidate_scores: Vec<f64>, cutoff: usize) -> u8 {
    core_eval::hits_at(pos_score, &candidate_scores, cutoff) as u8
}

#[pymodule]
fn snri_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<TrainedModel>()?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(load_model, m)?)?;
    m.add_function(wrap_pyfunction!(auc_pr, m)?)?;
    m.add_function(wrap_pyfunction!(hits_at, m)?)?;
    Ok(())
}
