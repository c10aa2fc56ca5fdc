//! Knowledge-graph reasoning with a graph-convolutional encoder.
//!
//! The model encodes entities with degree-normalized neighbor aggregation,
//! classifies them with a softmax head and scores triples with a per-relation
//! bilinear form. Training minimizes a negative-sampling cross-entropy plus an
//! optional entity-classification term, using gradients written out by hand
//! and verified against finite differences (see [`gradcheck`]).
//!
//! ```no_run
//! use kgr_core::{io, train, eval};
//!
//! let data = io::synth(200, 3, 4, 42)?;
//! let (params, history) = train::train(&data.graph, &train::TrainConfig::default())?;
//! let report = eval::evaluate_relations(&params, &data.graph, &data.test_triples, &Default::default())?;
//! println!("{} epochs, test auc {}", history.epochs.len(), report.auc);
//! # Ok::<(), kgr_core::Error>(())
//! ```

pub mod cli;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod loss;
pub mod model;
pub mod numeric;
pub mod train;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use graph::{EntityId, KnowledgeGraph, RelationId, Triple};
pub use numeric::Matrix;
