//! Concrete adapters: child-process clients speaking line-delimited JSON,
//! and deterministic lexical-overlap baselines that need no model.

mod lexical;
mod process;

pub use lexical::{parse_document_blocks, IdentityTranslator, LeadGenerator, LexicalBackend, LexicalJudge, LexicalNli};
pub use process::{LineClient, ProcessGenerator, ProcessJudge, ProcessNli, ProcessQualityEstimator, ProcessTranslator};
