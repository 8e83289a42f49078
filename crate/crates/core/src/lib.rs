//! Supervised process discovery toolkit.
//!
//! Trains graph attention networks on synthetically generated pairs of event
//! logs and workflow nets, then translates unseen logs into sound Petri nets
//! by sequentially selecting candidate places with beam search.
//!
//! The pipeline, end to end:
//!
//! 1. [`synthgen`] generates random block-structured nets and simulates logs.
//! 2. [`behavior`] computes ordering relations over a log and enumerates
//!    candidate places from them.
//! 3. [`discgraph`] encodes log + candidates as a heterogeneous graph.
//! 4. [`neural`] propagates information through the graph and scores
//!    candidates (two attention GCNs, a selection head, a stop head).
//! 5. [`training`] teacher-forces the target place sequence; [`inference`]
//!    decodes unseen logs with beam search and structural pruning.
//! 6. [`conformance`] measures fitness, precision, F-score and simplicity.

pub mod behavior;
pub mod cli;
pub mod conformance;
pub mod discgraph;
pub mod error;
pub mod eventlog;
pub mod inference;
pub mod neural;
pub mod oracles;
pub mod petrinet;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
