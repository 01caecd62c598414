//! Parses raw article bundles (pre-extracted page text plus image blobs)
//! into structured [`Article`] records with metadata, body text, and
//! figure-caption pairs.

mod bundle_io;

pub use bundle_io::{load_bundle, read_articles_jsonl, write_articles_jsonl, BundleIoError};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The four source journals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Journal {
    /// Journal of Additive Manufacturing
    JAM,
    /// Additive Manufacturing Letters
    AML,
    /// Journal of Manufacturing Processes
    JMP,
    /// Rapid Prototyping Journal
    RPJ,
}

impl Journal {
    pub const ALL: [Journal; 4] = [Journal::JAM, Journal::AML, Journal::JMP, Journal::RPJ];

    pub fn parse(s: &str) -> Option<Journal> {
        match s.to_ascii_uppercase().as_str() {
            "JAM" => Some(Journal::JAM),
            "AML" => Some(Journal::AML),
            "JMP" => Some(Journal::JMP),
            "RPJ" => Some(Journal::RPJ),
            _ => None,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Journal::JAM => "JAM",
            Journal::AML => "AML",
            Journal::JMP => "JMP",
            Journal::RPJ => "RPJ",
        }
    }
}

/// One image as listed in the bundle's `images.json`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleImage {
    pub image_id: String,
    pub page_index: usize,
    pub order_on_page: usize,
    pub bytes: Vec<u8>,
}

/// A raw article bundle: ordered page text plus image blobs.
#[derive(Debug, Clone)]
pub struct ArticleBundle {
    pub bundle_id: String,
    pub journal: Journal,
    pub pages: Vec<String>,
    pub images: Vec<BundleImage>,
}

/// A figure paired (where possible) with its caption line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FigureRecord {
    pub figure_id: String,
    pub image_ref: String,
    pub caption: Option<String>,
    pub page_index: usize,
}

/// A parsed article. Metadata extraction is best-effort: missing keywords
/// or unmatched author blocks yield empty fields, never an error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub article_id: String,
    pub journal: Journal,
    pub title: String,
    pub authors: Vec<String>,
    pub keywords: Vec<String>,
    pub body_text: String,
    pub figures: Vec<FigureRecord>,
}

/// Configurable segmentation heuristics.
#[derive(Debug, Clone)]
pub struct SegmentationRules {
    /// Line prefix marking the keyword list.
    pub keyword_marker: String,
    /// Pattern a line must match to count as a figure caption.
    pub caption_pattern: Regex,
    /// Drop everything from the first line matching one of these markers.
    pub strip_references: bool,
    pub reference_markers: Vec<String>,
}

impl Default for SegmentationRules {
    fn default() -> Self {
        SegmentationRules {
            keyword_marker: "Keywords".to_string(),
            caption_pattern: Regex::new(r"^\s*(Fig\.|Figure)\s*\d+").unwrap(),
            strip_references: true,
            reference_markers: vec!["References".to_string(), "Bibliography".to_string()],
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("bundle {0} has no readable pages")]
    EmptyBundle(String),
}

/// Parses a bundle into an [`Article`]. Title is the first non-empty line
/// of page 0; keywords come from the first line starting with the keyword
/// marker; the reference section is stripped per the rules.
pub fn ingest_bundle(
    bundle: &ArticleBundle,
    rules: &SegmentationRules,
) -> Result<Article, IngestError> {
    if bundle.pages.iter().all(|p| p.trim().is_empty()) {
        return Err(IngestError::EmptyBundle(bundle.bundle_id.clone()));
    }

    let page0 = bundle.pages.first().map(String::as_str).unwrap_or("");
    let mut lines0 = page0.lines().filter(|l| !l.trim().is_empty());
    let title = lines0.next().unwrap_or("").trim().to_string();
    let authors = lines0
        .next()
        .map(|l| parse_author_line(l, rules))
        .unwrap_or_default();

    let keywords = bundle
        .pages
        .iter()
        .flat_map(|p| p.lines())
        .find_map(|l| parse_keyword_line(l, &rules.keyword_marker))
        .unwrap_or_default();

    let mut body_lines: Vec<&str> = Vec::new();
    'pages: for page in &bundle.pages {
        for line in page.lines() {
            if rules.strip_references {
                let t = line.trim();
                if rules
                    .reference_markers
                    .iter()
                    .any(|m| t.eq_ignore_ascii_case(m))
                {
                    break 'pages;
                }
            }
            body_lines.push(line);
        }
    }
    let body_text = body_lines.join("\n");

    Ok(Article {
        article_id: bundle.bundle_id.clone(),
        journal: bundle.journal,
        title,
        authors,
        keywords,
        body_text,
        figures: pair_captions_with(bundle, rules),
    })
}

/// A keyword line looks like `Keywords: a; b; c` (or comma-separated).
fn parse_keyword_line(line: &str, marker: &str) -> Option<Vec<String>> {
    let t = line.trim();
    let rest = t.strip_prefix(marker)?;
    let rest = rest.trim_start_matches([':', ' ', '\t']);
    let sep = if rest.contains(';') { ';' } else { ',' };
    let kws: Vec<String> = rest
        .split(sep)
        .map(|k| k.trim().to_string())
        .filter(|k| !k.is_empty())
        .collect();
    Some(kws)
}

/// Best-effort author split on the line after the title. Lines that look
/// like keyword markers or prose paragraphs are rejected.
fn parse_author_line(line: &str, rules: &SegmentationRules) -> Vec<String> {
    let t = line.trim();
    if t.starts_with(&rules.keyword_marker) || t.len() > 200 {
        return Vec::new();
    }
    t.split([';', ','])
        .flat_map(|part| part.split(" and "))
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty())
        .collect()
}

/// Pairs each image on a page with the k-th caption-pattern line of that
/// page, in document order. Images without a matching line get no caption;
/// no caption line is ever assigned twice.
pub fn pair_captions(bundle: &ArticleBundle) -> Vec<FigureRecord> {
    pair_captions_with(bundle, &SegmentationRules::default())
}

pub fn pair_captions_with(bundle: &ArticleBundle, rules: &SegmentationRules) -> Vec<FigureRecord> {
    let mut records = Vec::new();
    for (page_index, page) in bundle.pages.iter().enumerate() {
        let captions: Vec<&str> = page
            .lines()
            .filter(|l| rules.caption_pattern.is_match(l))
            .collect();
        let mut images: Vec<&BundleImage> = bundle
            .images
            .iter()
            .filter(|im| im.page_index == page_index)
            .collect();
        images.sort_by_key(|im| im.order_on_page);
        for (k, image) in images.into_iter().enumerate() {
            let caption = captions
                .get(k)
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty());
            records.push(FigureRecord {
                figure_id: image.image_id.clone(),
                image_ref: image.image_id.clone(),
                caption,
                page_index,
            });
        }
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(pages: Vec<&str>, images: Vec<(&str, usize, usize)>) -> ArticleBundle {
        ArticleBundle {
            bundle_id: "b1".to_string(),
            journal: Journal::JAM,
            pages: pages.into_iter().map(String::from).collect(),
            images: images
                .into_iter()
                .map(|(id, page, ord)| BundleImage {
                    image_id: id.to_string(),
                    page_index: page,
                    order_on_page: ord,
                    bytes: vec![0u8; 4],
                })
                .collect(),
        }
    }

    #[test]
    fn extracts_title_and_keywords() {
        let b = bundle(vec!["Title X\nA. Author\nKeywords: LPBF; melt pool"], vec![]);
        let article = ingest_bundle(&b, &SegmentationRules::default()).unwrap();
        assert_eq!(article.title, "Title X");
        assert_eq!(article.keywords, vec!["LPBF", "melt pool"]);
        assert_eq!(article.authors, vec!["A. Author"]);
    }

    #[test]
    fn missing_keyword_marker_yields_empty_keywords() {
        let b = bundle(vec!["Title\nsome body text without markers"], vec![]);
        let article = ingest_bundle(&b, &SegmentationRules::default()).unwrap();
        assert!(article.keywords.is_empty());
    }

    #[test]
    fn empty_bundle_is_an_error() {
        let b = bundle(vec![], vec![]);
        assert!(matches!(
            ingest_bundle(&b, &SegmentationRules::default()),
            Err(IngestError::EmptyBundle(_))
        ));
        let blank = bundle(vec!["   \n  "], vec![]);
        assert!(ingest_bundle(&blank, &SegmentationRules::default()).is_err());
    }

    #[test]
    fn strips_reference_section() {
        let b = bundle(vec!["Title\nbody line\nReferences\n[1] something"], vec![]);
        let article = ingest_bundle(&b, &SegmentationRules::default()).unwrap();
        assert!(article.body_text.contains("body line"));
        assert!(!article.body_text.contains("[1] something"));
    }

    #[test]
    fn pairs_caption_on_same_page() {
        let b = bundle(
            vec!["Title\nsome text\nFig. 3. Melt pool cross-section."],
            vec![("img-0", 0, 0)],
        );
        let figs = pair_captions(&b);
        assert_eq!(figs.len(), 1);
        assert_eq!(
            figs[0].caption.as_deref(),
            Some("Fig. 3. Melt pool cross-section.")
        );
    }

    #[test]
    fn image_without_caption_line_gets_none() {
        let b = bundle(vec!["Title\nno figures here"], vec![("img-0", 0, 0)]);
        let figs = pair_captions(&b);
        assert_eq!(figs[0].caption, None);
    }

    #[test]
    fn two_images_pair_in_document_order() {
        let b = bundle(
            vec!["Title\nFig. 1. First.\nmore text\nFig. 2. Second."],
            vec![("img-b", 0, 1), ("img-a", 0, 0)],
        );
        let figs = pair_captions(&b);
        assert_eq!(figs[0].image_ref, "img-a");
        assert_eq!(figs[0].caption.as_deref(), Some("Fig. 1. First."));
        assert_eq!(figs[1].image_ref, "img-b");
        assert_eq!(figs[1].caption.as_deref(), Some("Fig. 2. Second."));
    }

    #[test]
    fn no_caption_assigned_twice() {
        let b = bundle(
            vec!["Title\nFig. 1. Only caption."],
            vec![("img-a", 0, 0), ("img-b", 0, 1)],
        );
        let figs = pair_captions(&b);
        let with_caption: Vec<_> = figs.iter().filter(|f| f.caption.is_some()).collect();
        assert_eq!(with_caption.len(), 1);
    }

    #[test]
    fn ingest_is_deterministic() {
        let b = bundle(
            vec!["Title X\nA. Author\nKeywords: LPBF\nFig. 1. A figure."],
            vec![("img-0", 0, 0)],
        );
        let rules = SegmentationRules::default();
        let a1 = ingest_bundle(&b, &rules).unwrap();
        let a2 = ingest_bundle(&b, &rules).unwrap();
        assert_eq!(
            serde_json::to_string(&a1).unwrap(),
            serde_json::to_string(&a2).unwrap()
        );
    }
}
