//! Corpus-to-benchmark toolkit for domain-adapting LLMs to additive
//! manufacturing.
//!
//! The pipeline runs in stages: open-access article bundles are parsed into
//! structured records ([`ingest`]), a subword tokenizer is trained over the
//! corpus ([`tokenizer`]), the `text` / `images` / `vit` dataset
//! configurations are built with corpus statistics ([`dataset`]), visual
//! instruction tuning examples are generated through a chat-completions
//! endpoint ([`llm`], [`vit`]), LoRA adapter math is verified at desk scale
//! ([`lora`]), and served models are scored on the six AM benchmark tasks
//! ([`bench`]).

pub mod bench;
pub mod dataset;
pub mod ingest;
pub mod llm;
pub mod lora;
pub mod par;
pub mod testing;
pub mod tokenizer;
pub mod vit;
