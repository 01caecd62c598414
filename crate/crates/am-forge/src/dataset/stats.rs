//! Corpus statistics: top keywords, per-journal n-gram frequencies, and the
//! Jaccard vocabulary-overlap matrix. All outputs are plain tables meant
//! for CSV export; plotting is out of scope.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use thiserror::Error;

use crate::ingest::{Article, Journal};
use crate::par;

/// A small default English stopword list; callers may extend or replace it.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "in", "is", "it", "its",
    "of", "on", "that", "the", "this", "to", "was", "were", "which", "with",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("journal group {0} has no text")]
    EmptyVocabulary(String),
}

/// Case-folded exact-match keyword counting over all articles, excluded
/// terms removed before ranking. Articles with no keywords are skipped.
pub fn keyword_top_k(
    articles: &[Article],
    k: usize,
    exclude: &HashSet<String>,
) -> Vec<(String, usize)> {
    assert!(k >= 1, "k must be at least 1");
    let exclude: HashSet<String> = exclude.iter().map(|e| e.to_lowercase()).collect();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for article in articles {
        for kw in &article.keywords {
            let folded = kw.to_lowercase();
            if !folded.is_empty() && !exclude.contains(&folded) {
                *counts.entry(folded).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

/// Lowercased word tokens of a text, alphanumeric runs only.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn ngrams_of(tokens: &[String], n: usize) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.join(" ")).or_insert(0) += 1;
        }
    }
    counts
}

/// Per-journal ranked word n-grams. Any n-gram containing a stopword token
/// or a journal-boilerplate phrase is removed; ties break lexicographically.
pub fn ngram_frequencies(
    articles_by_journal: &BTreeMap<Journal, Vec<&Article>>,
    n: usize,
    stopwords: &HashSet<String>,
    boilerplate: &[String],
) -> BTreeMap<Journal, Vec<(String, usize)>> {
    assert!((1..=5).contains(&n), "n must be in 1..=5");
    let boilerplate: Vec<String> = boilerplate.iter().map(|b| b.to_lowercase()).collect();
    articles_by_journal
        .iter()
        .map(|(&journal, articles)| {
            let partials: Vec<HashMap<String, usize>> = par::map(articles, |article| {
                ngrams_of(&words(&article.body_text), n)
            });
            let mut merged: HashMap<String, usize> = HashMap::new();
            for partial in partials {
                for (gram, c) in partial {
                    *merged.entry(gram).or_insert(0) += c;
                }
            }
            merged.retain(|gram, _| {
                !gram.split(' ').any(|w| stopwords.contains(w))
                    && !boilerplate.iter().any(|b| gram.contains(b.as_str()))
            });
            let mut ranked: Vec<(String, usize)> = merged.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            (journal, ranked)
        })
        .collect()
}

/// Jaccard overlap of lowercased word sets between journal groups.
/// Symmetric with unit diagonal.
pub fn vocabulary_overlap(
    articles_by_journal: &BTreeMap<Journal, Vec<&Article>>,
) -> Result<(Vec<Journal>, Vec<Vec<f64>>), StatsError> {
    let journals: Vec<Journal> = articles_by_journal.keys().copied().collect();
    let vocabs: Vec<HashSet<String>> = journals
        .iter()
        .map(|j| {
            let vocab: HashSet<String> = articles_by_journal[j]
                .iter()
                .flat_map(|a| words(&a.body_text))
                .collect();
            if vocab.is_empty() {
                Err(StatsError::EmptyVocabulary(j.code().to_string()))
            } else {
                Ok(vocab)
            }
        })
        .collect::<Result<_, _>>()?;

    let k = journals.len();
    let mut matrix = vec![vec![0.0; k]; k];
    for i in 0..k {
        matrix[i][i] = 1.0;
        for j in (i + 1)..k {
            let inter = vocabs[i].intersection(&vocabs[j]).count() as f64;
            let union = vocabs[i].union(&vocabs[j]).count() as f64;
            let jaccard = if union == 0.0 { 0.0 } else { inter / union };
            matrix[i][j] = jaccard;
            matrix[j][i] = jaccard;
        }
    }
    Ok((journals, matrix))
}

/// Groups articles by their journal.
pub fn group_by_journal(articles: &[Article]) -> BTreeMap<Journal, Vec<&Article>> {
    let mut grouped: BTreeMap<Journal, Vec<&Article>> = BTreeMap::new();
    for article in articles {
        grouped.entry(article.journal).or_default().push(article);
    }
    grouped
}

/// `keyword,count` CSV.
pub fn write_keyword_csv(ranked: &[(String, usize)], path: &Path) -> csv::Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["keyword", "count"])?;
    for (kw, count) in ranked {
        writer.write_record([kw.as_str(), &count.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

/// `journal,ngram,count` CSV.
pub fn write_ngram_csv(
    ranked: &BTreeMap<Journal, Vec<(String, usize)>>,
    top: usize,
    path: &Path,
) -> csv::Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["journal", "ngram", "count"])?;
    for (journal, grams) in ranked {
        for (gram, count) in grams.iter().take(top) {
            writer.write_record([journal.code(), gram.as_str(), &count.to_string()])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Square overlap matrix CSV with journal codes as header and row labels.
pub fn write_overlap_csv(
    journals: &[Journal],
    matrix: &[Vec<f64>],
    path: &Path,
) -> csv::Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["journal".to_string()];
    header.extend(journals.iter().map(|j| j.code().to_string()));
    writer.write_record(&header)?;
    for (i, journal) in journals.iter().enumerate() {
        let mut row = vec![journal.code().to_string()];
        row.extend(matrix[i].iter().map(|v| format!("{v:.6}")));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn article(id: &str, journal: Journal, keywords: Vec<&str>, body: &str) -> Article {
        Article {
            article_id: id.to_string(),
            journal,
            title: String::new(),
            authors: vec![],
            keywords: keywords.into_iter().map(String::from).collect(),
            body_text: body.to_string(),
            figures: vec![],
        }
    }

    #[test]
    fn counts_keywords_case_folded() {
        let articles = vec![
            article("a1", Journal::JAM, vec!["LPBF"], ""),
            article("a2", Journal::JAM, vec!["LPBF", "binder jet"], ""),
        ];
        let ranked = keyword_top_k(&articles, 10, &HashSet::new());
        assert_eq!(
            ranked,
            vec![("lpbf".to_string(), 2), ("binder jet".to_string(), 1)]
        );
    }

    #[test]
    fn keywordless_corpus_gives_empty_list() {
        let articles = vec![article("a1", Journal::JAM, vec![], "")];
        assert!(keyword_top_k(&articles, 5, &HashSet::new()).is_empty());
    }

    #[test]
    fn excluded_term_never_ranks() {
        let articles = vec![
            article("a1", Journal::JAM, vec!["Additive Manufacturing", "LPBF"], ""),
            article("a2", Journal::AML, vec!["Additive Manufacturing"], ""),
        ];
        let exclude: HashSet<String> = ["Additive Manufacturing".to_string()].into();
        let ranked = keyword_top_k(&articles, 10, &exclude);
        assert!(ranked.iter().all(|(k, _)| k != "additive manufacturing"));
        assert_eq!(ranked, vec![("lpbf".to_string(), 1)]);
    }

    #[test]
    fn bigram_counts_by_hand() {
        let articles = vec![article("a1", Journal::JAM, vec![], "melt pool melt pool")];
        let grouped = group_by_journal(&articles);
        let ranked = ngram_frequencies(&grouped, 2, &HashSet::new(), &[]);
        assert_eq!(
            ranked[&Journal::JAM],
            vec![
                ("melt pool".to_string(), 2),
                ("pool melt".to_string(), 1)
            ]
        );
    }

    #[test]
    fn all_stopwords_gives_empty() {
        let articles = vec![article("a1", Journal::JAM, vec![], "the of the of")];
        let grouped = group_by_journal(&articles);
        let stop: HashSet<String> = ["the".to_string(), "of".to_string()].into();
        let ranked = ngram_frequencies(&grouped, 2, &stop, &[]);
        assert!(ranked[&Journal::JAM].is_empty());
    }

    #[test]
    fn unigrams_equal_word_frequency() {
        let articles = vec![article("a1", Journal::JAM, vec![], "pool the pool melt")];
        let grouped = group_by_journal(&articles);
        let stop: HashSet<String> = ["the".to_string()].into();
        let ranked = ngram_frequencies(&grouped, 1, &stop, &[]);
        assert_eq!(
            ranked[&Journal::JAM],
            vec![("pool".to_string(), 2), ("melt".to_string(), 1)]
        );
    }

    #[test]
    fn jaccard_hand_case() {
        let articles = vec![
            article("a1", Journal::JAM, vec![], "a b c"),
            article("a2", Journal::RPJ, vec![], "b c d"),
        ];
        let grouped = group_by_journal(&articles);
        let (journals, matrix) = vocabulary_overlap(&grouped).unwrap();
        assert_eq!(journals, vec![Journal::JAM, Journal::RPJ]);
        assert!((matrix[0][1] - 0.5).abs() < 1e-12);
        assert_eq!(matrix[0][0], 1.0);
        assert_eq!(matrix[1][0], matrix[0][1]);
    }

    #[test]
    fn identical_and_disjoint_vocabularies() {
        let same = vec![
            article("a1", Journal::JAM, vec![], "x y"),
            article("a2", Journal::RPJ, vec![], "y x"),
        ];
        let (_, m) = vocabulary_overlap(&group_by_journal(&same)).unwrap();
        assert_eq!(m[0][1], 1.0);

        let disjoint = vec![
            article("a1", Journal::JAM, vec![], "x y"),
            article("a2", Journal::RPJ, vec![], "p q"),
        ];
        let (_, m) = vocabulary_overlap(&group_by_journal(&disjoint)).unwrap();
        assert_eq!(m[0][1], 0.0);
    }

    #[test]
    fn empty_journal_text_is_an_error() {
        let articles = vec![article("a1", Journal::JAM, vec![], "   ")];
        let grouped = group_by_journal(&articles);
        assert_eq!(
            vocabulary_overlap(&grouped).unwrap_err(),
            StatsError::EmptyVocabulary("JAM".to_string())
        );
    }

    #[test]
    fn boilerplate_phrase_filtered_from_ngrams() {
        let articles = vec![article(
            "a1",
            Journal::JAM,
            vec![],
            "journal of additive manufacturing melt pool",
        )];
        let grouped = group_by_journal(&articles);
        let ranked = ngram_frequencies(
            &grouped,
            2,
            &HashSet::new(),
            &["journal of".to_string()],
        );
        assert!(ranked[&Journal::JAM]
            .iter()
            .all(|(g, _)| !g.contains("journal of")));
    }
}
