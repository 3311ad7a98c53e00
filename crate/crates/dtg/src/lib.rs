//! Dependency transformer grammars: syntactic language models that generate
//! sentences jointly with their dependency trees.
//!
//! The crate is organised as a pipeline:
//!
//! * [`treebank`] — dependency trees, CoNLL I/O, projectivity, tree
//!   enumeration and sampling, vocabulary, and subword alignment.
//! * [`transitions`] — generative transition systems (arc-standard,
//!   arc-eager, arc-swift, arc-hybrid), oracles, replay, and legality.
//! * [`attnmask`] — compilation of transition sequences into attention
//!   masks and stack-relative position matrices for a transformer decoder.
//! * [`model`] — a small transformer language model over transition
//!   sequences, with masked attention, relative position biases, manual
//!   backprop, and optimisers.
//! * [`decode`] — constrained sampling, word-synchronous beam search,
//!   marginal sentence probabilities, and proposal reranking.
//! * [`evalharness`] — perplexity, minimal-pair accuracy, surprisal
//!   suites, and unlabelled attachment score.
//! * [`synth`] — a synthetic agreement grammar for end-to-end smoke
//!   training and evaluation.
//! * [`cli`] — the command-line interface used by the `dtg` binary.

pub mod attnmask;
pub mod cli;
pub mod decode;
pub mod evalharness;
pub mod model;
pub mod synth;
pub mod transitions;
pub mod treebank;
