//! Few-shot unit test generation for Python benchmark corpora.
//!
//! The crate implements the whole enhancement pipeline: corpus ingestion
//! and normalization ([`corpus`]), TF-IDF example retrieval ([`retrieval`]),
//! prompt construction ([`promptkit`]), model access with a replay cache
//! ([`modelgw`]), sandboxed validation ([`validator`]), rule-based repair
//! ([`repairer`]), coverage-guided suite optimization ([`optimizer`]), code
//! quality metrics ([`metrics`]) and the stage orchestrator ([`pipeline`]).

pub mod corpus;
pub mod metrics;
pub mod modelgw;
pub mod optimizer;
pub mod pipeline;
pub mod promptkit;
pub mod repairer;
pub mod retrieval;
pub mod syntax;
pub mod validator;
