//! Inductive link prediction over knowledge graphs.
//!
//! The pipeline scores a candidate triple (head, relation, tail) between
//! entities unseen at training time. It extracts the enclosing subgraph
//! around the pair, keeps each node's complete set of incident relations
//! from the full graph, encodes the subgraph with an attentive relational
//! GNN plus an encoder over relation paths bridging the target nodes, and
//! trains jointly with a margin ranking loss and a subgraph-graph mutual
//! information objective.

pub mod eval;
pub mod kg;
pub mod model;
pub mod subgraph;
pub mod synthetic;
pub mod tensor;
pub mod train;
