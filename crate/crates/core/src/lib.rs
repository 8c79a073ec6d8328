//! Structure-aware training data pipeline.
//!
//! Raw documents are chunked into knowledge points ([`corpus`]), organized
//! into a knowledge taxonomy ([`taxonomy`]), rendered as mindmaps
//! ([`mindmap`]) and turned into two kinds of training data: mindmap-conditioned
//! pre-training records with loss masks ([`scpt`]) and structure-grounded QA
//! samples ([`ssft`]). [`eval`] holds the lexical metrics and the
//! log-quadratic scaling curve used to assess trained models.

pub mod corpus;
pub mod eval;
pub mod jsonl;
pub mod llm;
pub mod mindmap;
pub mod prompts;
pub mod scpt;
pub mod seed;
pub mod ssft;
pub mod taxonomy;
pub mod tokenize;
