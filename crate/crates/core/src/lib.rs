//! Cost-optimal adjudication of conflicting coreference annotations.
//!
//! Several annotators' chain partitions of one document are merged into a
//! single partition that minimizes disagreement costs, optionally subject
//! to constraints a human adjudicator enforced on an earlier result.
//!
//! The usual path is [`conll`] input, [`instance::build_instance`],
//! [`solver::solve`] and back to [`conll`] output.

pub mod benchgen;
pub mod conll;
pub mod enforcement;
pub mod instance;
pub mod objective;
pub mod oracle;
pub mod pipeline;
pub mod solver;
pub mod span;

pub use conll::{Annotation, Document, Mention};
pub use enforcement::ForcedSpec;
pub use instance::{build_instance, ForcedMode, Instance};
pub use objective::{evaluate, Objective, ObjectiveTag, Solution};
pub use solver::{solve, SolveOutcome, SolverConfig, Status, Strategy};
pub use span::Span;
