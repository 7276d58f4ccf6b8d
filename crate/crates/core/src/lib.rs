//! qadistill: distill course textbooks into diverse, style-aligned
//! question-answer corpora with teacher models, optimize the answering
//! prompt with judge-scored reflection and resampling, and benchmark
//! outputs with n-gram metrics and judge scores.
//!
//! Everything runs offline against replay or scripted backends; the HTTP
//! backend speaks the OpenAI-compatible chat-completions protocol when real
//! teachers are configured.

pub mod answer_gen;
pub mod eval_export;
pub mod gateway;
pub mod ingest;
pub mod jsonl;
pub mod judge;
pub mod pipeline;
pub mod prompt_opt;
pub mod prompt_text;
pub mod question_gen;
pub mod sim;
pub mod text_metrics;
pub mod util;
