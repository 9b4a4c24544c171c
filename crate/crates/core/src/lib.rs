//! Type inference for class and interface names in incomplete Java
//! snippets, combining a knowledge-base constraint solver with a
//! statistical context model in an iterative loop.

pub mod cli;
pub mod constraint;
pub mod corpus;
pub mod eval;
pub mod kb;
pub mod orchestrator;
pub mod snippet;
pub mod stat;

pub use constraint::{ConstraintResult, ExtractOptions};
pub use kb::{KbError, KnowledgeBase};
pub use orchestrator::{run, CombinedResult, RunConfig, RunOutput, Source};
pub use snippet::{tokenize, ApiElement, Snippet};
pub use stat::{CooccurrenceModel, Predictor};
