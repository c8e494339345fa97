//! Benchmark-free consistency evaluation for LLMs.
//!
//! A root state (a paragraph or a program) is pushed through pairs of inverse
//! transformations by the model under evaluation. The resulting self-consistency
//! tree is executed against a shared set of test inputs and the end-to-end
//! similarity of its paths is aggregated into tree- and forest-level scores.
//!
//! Module map:
//!
//! * [`tree`] owns the node/edge/tree/forest model, tree generation and path enumeration.
//! * [`transform`] defines the [`transform::Transformer`] capability, LLM-backed and mock.
//! * [`gateway`] is the OpenAI-compatible HTTP client, embedders and response extraction.
//! * [`bench`] generates and persists benchmark files (roots, pairs, test inputs).
//! * [`exec`] runs node content against test inputs via the worker wire protocol.
//! * [`scoring`] holds the similarity metrics, consistency scores, run statistics and correlation.
//! * [`pipeline`] wires everything together for the command-line tool.

pub mod bench;
pub mod exec;
pub mod gateway;
pub mod par;
pub mod pipeline;
pub mod scoring;
pub mod testing;
pub mod transform;
pub mod tree;

pub use tree::{Anchor, Forest, Node, OperationPair, Path, TaskKind, TestInput, Tree};

/// Content stored in a node whose transformation output could not be used.
pub const SENTINEL: &str = "None";
