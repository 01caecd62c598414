//! On-disk bundle layout:
//! `<bundle_id>/meta.json` (journal, id), `<bundle_id>/pages/NNN.txt`
//! (zero-padded page index), `<bundle_id>/images/<image_id>.{png,jpg}` and
//! `<bundle_id>/images.json` listing (image_id, page_index, order_on_page).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use super::{Article, ArticleBundle, BundleImage, Journal};

#[derive(Debug, Error)]
pub enum BundleIoError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad metadata in {path}: {reason}")]
    BadMeta { path: String, reason: String },
}

fn io_err(path: &Path, source: std::io::Error) -> BundleIoError {
    BundleIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Deserialize)]
struct Meta {
    id: String,
    journal: String,
}

#[derive(Deserialize)]
struct ImageEntry {
    image_id: String,
    page_index: usize,
    order_on_page: usize,
}

/// Reads one bundle directory into memory.
pub fn load_bundle(dir: &Path) -> Result<ArticleBundle, BundleIoError> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&meta_text).map_err(|e| BundleIoError::BadMeta {
        path: meta_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let journal = Journal::parse(&meta.journal).ok_or_else(|| BundleIoError::BadMeta {
        path: meta_path.display().to_string(),
        reason: format!("unknown journal {:?}", meta.journal),
    })?;

    let pages_dir = dir.join("pages");
    let mut page_files: Vec<_> = match fs::read_dir(&pages_dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect(),
        Err(_) => Vec::new(),
    };
    page_files.sort();
    let mut pages = Vec::with_capacity(page_files.len());
    for p in &page_files {
        pages.push(fs::read_to_string(p).map_err(|e| io_err(p, e))?);
    }

    let images_path = dir.join("images.json");
    let mut images = Vec::new();
    if images_path.exists() {
        let text = fs::read_to_string(&images_path).map_err(|e| io_err(&images_path, e))?;
        let entries: Vec<ImageEntry> =
            serde_json::from_str(&text).map_err(|e| BundleIoError::BadMeta {
                path: images_path.display().to_string(),
                reason: e.to_string(),
            })?;
        for entry in entries {
            let bytes = ["png", "jpg"]
                .iter()
                .map(|ext| dir.join("images").join(format!("{}.{ext}", entry.image_id)))
                .find(|p| p.exists())
                .map(|p| fs::read(&p).map_err(|e| io_err(&p, e)))
                .transpose()?
                .unwrap_or_default();
            images.push(BundleImage {
                image_id: entry.image_id,
                page_index: entry.page_index,
                order_on_page: entry.order_on_page,
                bytes,
            });
        }
    }

    Ok(ArticleBundle {
        bundle_id: meta.id,
        journal,
        pages,
        images,
    })
}

/// Writes one article per line, UTF-8, stable key order.
pub fn write_articles_jsonl(articles: &[Article], path: &Path) -> Result<(), BundleIoError> {
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    for article in articles {
        let line = serde_json::to_string(article).expect("article serializes");
        writeln!(file, "{line}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Reads an `articles.jsonl` file back, skipping blank lines.
pub fn read_articles_jsonl(path: &Path) -> Result<Vec<Article>, BundleIoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| BundleIoError::BadMeta {
                path: path.display().to_string(),
                reason: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ingest_bundle, SegmentationRules};

    fn write_fixture(dir: &Path) {
        fs::create_dir_all(dir.join("pages")).unwrap();
        fs::create_dir_all(dir.join("images")).unwrap();
        fs::write(
            dir.join("meta.json"),
            r#"{"id": "b-test", "journal": "RPJ"}"#,
        )
        .unwrap();
        fs::write(
            dir.join("pages/000.txt"),
            "A Study\nB. Author\nKeywords: LPBF\nFig. 1. A melt pool.",
        )
        .unwrap();
        fs::write(dir.join("pages/001.txt"), "second page text").unwrap();
        fs::write(
            dir.join("images.json"),
            r#"[{"image_id": "im0", "page_index": 0, "order_on_page": 0}]"#,
        )
        .unwrap();
        fs::write(dir.join("images/im0.png"), [1u8, 2, 3]).unwrap();
    }

    #[test]
    fn loads_bundle_directory() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path());
        let bundle = load_bundle(tmp.path()).unwrap();
        assert_eq!(bundle.bundle_id, "b-test");
        assert_eq!(bundle.journal, Journal::RPJ);
        assert_eq!(bundle.pages.len(), 2);
        assert_eq!(bundle.images.len(), 1);
        assert_eq!(bundle.images[0].bytes, vec![1, 2, 3]);

        let article = ingest_bundle(&bundle, &SegmentationRules::default()).unwrap();
        assert_eq!(article.title, "A Study");
        assert_eq!(article.figures.len(), 1);
        assert_eq!(article.figures[0].caption.as_deref(), Some("Fig. 1. A melt pool."));
    }

    #[test]
    fn writes_jsonl_lines() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path());
        let bundle = load_bundle(tmp.path()).unwrap();
        let article = ingest_bundle(&bundle, &SegmentationRules::default()).unwrap();
        let out = tmp.path().join("articles.jsonl");
        write_articles_jsonl(&[article.clone(), article], &out).unwrap();
        let text = fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
}
