//! Builds the `text` and `images` dataset configurations and the manifest
//! from parsed articles, plus the corpus statistics emitted as CSV.

pub mod stats;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{Article, Journal};
use crate::par;
use crate::tokenizer::TokenizerModel;

pub const DEFAULT_CHUNK_LEN: usize = 2048;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// A fixed-size slice of an article's token stream. All chunks except
/// possibly the last per article have exactly the configured length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextChunk {
    pub chunk_id: String,
    pub token_ids: Vec<u32>,
    pub source_article: String,
    pub split: Option<Split>,
}

/// One figure with a present caption, for the `images` configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageCaptionRecord {
    pub record_id: String,
    pub image_ref: String,
    pub caption: String,
    pub journal: Journal,
    pub source_article: String,
}

/// Per-journal record counts for one configuration.
pub type JournalCounts = BTreeMap<String, usize>;

/// Accounting for everything the builder emitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub text_chunks_by_journal: JournalCounts,
    pub image_records_by_journal: JournalCounts,
    pub vit_examples_by_journal: JournalCounts,
    pub text_tokens: usize,
    pub caption_tokens: usize,
    pub dropped_captionless_figures: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

/// Splits each article's token stream into consecutive chunks of
/// `chunk_len`. The final short chunk is retained; padding is the
/// trainer's concern.
pub fn chunk_corpus(
    articles: &[Article],
    model: &TokenizerModel,
    chunk_len: usize,
) -> Vec<TextChunk> {
    assert!(chunk_len >= 1, "chunk_len must be at least 1");
    let per_article: Vec<Vec<TextChunk>> = par::map(articles, |article| {
        let tokens = model.encode(&article.body_text);
        chunk_tokens(&tokens, &article.article_id, chunk_len)
    });
    per_article.into_iter().flatten().collect()
}

/// Chunks one already-encoded token stream.
pub fn chunk_tokens(tokens: &[u32], article_id: &str, chunk_len: usize) -> Vec<TextChunk> {
    tokens
        .chunks(chunk_len)
        .enumerate()
        .map(|(i, window)| TextChunk {
            chunk_id: format!("{article_id}-c{i:04}"),
            token_ids: window.to_vec(),
            source_article: article_id.to_string(),
            split: None,
        })
        .collect()
}

/// Deterministic seeded shuffle; the first `floor(N * train_fraction)`
/// shuffled chunks become train, the rest val. Chunks are returned in
/// their original order with labels assigned.
pub fn assign_splits(mut chunks: Vec<TextChunk>, train_fraction: f64, seed: u64) -> Vec<TextChunk> {
    assert!(
        train_fraction > 0.0 && train_fraction < 1.0,
        "train_fraction must be in (0, 1)"
    );
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = (chunks.len() as f64 * train_fraction).floor() as usize;
    for (rank, &idx) in order.iter().enumerate() {
        chunks[idx].split = Some(if rank < n_train {
            Split::Train
        } else {
            Split::Val
        });
    }
    chunks
}

/// One record per figure with a present caption; caption-less figures are
/// counted via the returned drop count.
pub fn build_images_config(articles: &[Article]) -> (Vec<ImageCaptionRecord>, usize) {
    let mut records = Vec::new();
    let mut dropped = 0usize;
    for article in articles {
        for figure in &article.figures {
            match &figure.caption {
                Some(caption) => records.push(ImageCaptionRecord {
                    record_id: format!("{}-{}", article.article_id, figure.figure_id),
                    image_ref: figure.image_ref.clone(),
                    caption: caption.clone(),
                    journal: article.journal,
                    source_article: article.article_id.clone(),
                }),
                None => dropped += 1,
            }
        }
    }
    (records, dropped)
}

/// Builds the manifest from emitted records.
pub fn build_manifest(
    chunks: &[TextChunk],
    images: &[ImageCaptionRecord],
    dropped_captionless: usize,
    articles: &[Article],
    model: &TokenizerModel,
    train_fraction: f64,
    seed: u64,
) -> DatasetManifest {
    let journal_of: BTreeMap<&str, Journal> = articles
        .iter()
        .map(|a| (a.article_id.as_str(), a.journal))
        .collect();
    let mut manifest = DatasetManifest {
        train_fraction,
        seed,
        dropped_captionless_figures: dropped_captionless,
        ..Default::default()
    };
    for chunk in chunks {
        if let Some(j) = journal_of.get(chunk.source_article.as_str()) {
            *manifest
                .text_chunks_by_journal
                .entry(j.code().to_string())
                .or_insert(0) += 1;
        }
        manifest.text_tokens += chunk.token_ids.len();
    }
    for record in images {
        *manifest
            .image_records_by_journal
            .entry(record.journal.code().to_string())
            .or_insert(0) += 1;
        manifest.caption_tokens += model.encode(&record.caption).len();
    }
    manifest
}

/// Recomputes the manifest totals from the records and checks they agree.
pub fn audit_manifest(
    manifest: &DatasetManifest,
    chunks: &[TextChunk],
    images: &[ImageCaptionRecord],
    model: &TokenizerModel,
) -> Result<(), String> {
    let text_tokens: usize = chunks.iter().map(|c| c.token_ids.len()).sum();
    if text_tokens != manifest.text_tokens {
        return Err(format!(
            "text token total mismatch: manifest {} vs recomputed {}",
            manifest.text_tokens, text_tokens
        ));
    }
    let chunk_count: usize = manifest.text_chunks_by_journal.values().sum();
    if chunk_count != chunks.len() {
        return Err(format!(
            "chunk count mismatch: manifest {} vs emitted {}",
            chunk_count,
            chunks.len()
        ));
    }
    let image_count: usize = manifest.image_records_by_journal.values().sum();
    if image_count != images.len() {
        return Err(format!(
            "image record count mismatch: manifest {} vs emitted {}",
            image_count,
            images.len()
        ));
    }
    let caption_tokens: usize = images.iter().map(|r| model.encode(&r.caption).len()).sum();
    if caption_tokens != manifest.caption_tokens {
        return Err(format!(
            "caption token total mismatch: manifest {} vs recomputed {}",
            manifest.caption_tokens, caption_tokens
        ));
    }
    Ok(())
}

/// Writes records one JSON object per line.
pub fn write_jsonl<T: Serialize>(records: &[T], path: &Path) -> std::io::Result<()> {
    let mut file = fs::File::create(path)?;
    for record in records {
        writeln!(file, "{}", serde_json::to_string(record).expect("serializes"))?;
    }
    Ok(())
}
