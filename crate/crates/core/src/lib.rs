//! Verification of feed-forward ReLU networks by abstraction refinement,
//! optionally combined with tightening of the output property.
//!
//! A query asks whether some input in a box drives the single output of a
//! network strictly above a threshold. [`verify`] answers it directly, with
//! plain abstraction refinement, or with refinement plus tightening.

pub mod abstraction;
pub mod bench;
pub mod bounds;
pub mod error;
pub mod io;
pub mod network;
pub mod oracle;
pub mod preprocess;
pub mod random;
pub mod simplex;
pub mod solver;
pub mod tightening;
pub mod verify;

pub use abstraction::{abstract_to_saturation, AbstractionState};
pub use bounds::{ibp, output_bounds, output_gap, sbt, BoundMethod, Interval};
pub use error::{Error, Result};
pub use network::{Activation, InputBox, Layer, Network, OutputProperty, Query};
pub use preprocess::{preprocess, CategorizedNetwork, Category};
pub use solver::{solve, SolverOptions, Status, Verdict};
pub use tightening::tighten_property;
pub use verify::{verify, Mode, RunStats, VerifyOptions};
