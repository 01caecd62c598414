//! Subword tokenizer: greedy frequency merges over character symbols with a
//! bounded number of operations, byte-fallback vocabulary so every UTF-8
//! string encodes, and a line-oriented model file format.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

/// End-of-word sentinel as written in the model file.
pub const WORD_END_MARK: &str = "</w>";

/// Default special tokens: turn delimiters and end-of-text.
pub const START_OF_TURN: &str = "<start_of_turn>";
pub const END_OF_TURN: &str = "<end_of_turn>";
pub const END_OF_TEXT: &str = "<eot>";

/// A tokenizer symbol. `Text` carries the concatenated characters and
/// whether the symbol absorbs the end-of-word sentinel; `Byte` symbols are
/// the fallback alphabet; `Special` symbols are matched verbatim before
/// word segmentation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Symbol {
    Text { text: String, word_end: bool },
    Byte(u8),
    Special(String),
}

impl Symbol {
    fn text(s: &str) -> Self {
        Symbol::Text {
            text: s.to_string(),
            word_end: false,
        }
    }

    fn word_end() -> Self {
        Symbol::Text {
            text: String::new(),
            word_end: true,
        }
    }

    /// Stable string key used in the vocabulary and the model file.
    pub fn key(&self) -> String {
        match self {
            Symbol::Text { text, word_end } => {
                if *word_end {
                    format!("{text}{WORD_END_MARK}")
                } else {
                    text.clone()
                }
            }
            Symbol::Byte(b) => format!("<0x{b:02X}>"),
            Symbol::Special(s) => s.clone(),
        }
    }
}

/// Ordered merge rules. Each side is a symbol key; the order is the
/// training order and the application order during encoding.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeTable {
    pub merges: Vec<(String, String)>,
    pub num_operations: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("token id {0} out of range (vocabulary size {1})")]
    UnknownTokenId(u32, usize),
    #[error("malformed model file: {0}")]
    MalformedModel(String),
}

/// Greedy frequency merges over character symbols, stopping after
/// `num_operations` merges or earlier when no pair occurs at least twice.
/// Equal frequencies break toward the lexicographically smallest pair of
/// symbol keys.
pub fn train_subword<'a, I>(corpus: I, num_operations: usize) -> MergeTable
where
    I: IntoIterator<Item = (&'a str, u64)>,
{
    // Words as symbol-key sequences with the sentinel appended.
    let mut words: Vec<(Vec<String>, u64)> = corpus
        .into_iter()
        .filter(|(w, _)| !w.is_empty())
        .map(|(w, c)| {
            let mut syms: Vec<String> = w.chars().map(|ch| ch.to_string()).collect();
            syms.push(WORD_END_MARK.to_string());
            (syms, c)
        })
        .collect();

    let mut table = MergeTable {
        merges: Vec::new(),
        num_operations,
    };

    for _ in 0..num_operations {
        let mut counts: HashMap<(String, String), u64> = HashMap::new();
        for (syms, count) in &words {
            for pair in syms.windows(2) {
                *counts
                    .entry((pair[0].clone(), pair[1].clone()))
                    .or_insert(0) += count;
            }
        }
        let Some((best, _)) = counts
            .into_iter()
            .filter(|&(_, c)| c >= 2)
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        else {
            break;
        };
        let joined = format!("{}{}", best.0, best.1);
        for (syms, _) in &mut words {
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == best.0 && syms[i + 1] == best.1 {
                    out.push(joined.clone());
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            *syms = out;
        }
        table.merges.push(best);
    }
    table
}

/// Merge table plus vocabulary and special tokens. Token ids are dense in
/// `[0, vocab_size)`: byte symbols first, then specials, then the merge
/// closure in order of appearance.
#[derive(Debug, Clone)]
pub struct TokenizerModel {
    pub merge_table: MergeTable,
    pub specials: Vec<String>,
    id_of: HashMap<String, u32>,
    symbol_of: Vec<Symbol>,
}

impl TokenizerModel {
    pub fn new(merge_table: MergeTable, specials: Vec<String>) -> Self {
        let mut id_of = HashMap::new();
        let mut symbol_of = Vec::new();
        let add = |sym: Symbol, id_of: &mut HashMap<String, u32>, symbol_of: &mut Vec<Symbol>| {
            let key = sym.key();
            if !id_of.contains_key(&key) {
                id_of.insert(key, symbol_of.len() as u32);
                symbol_of.push(sym);
            }
        };
        for b in 0u16..=255 {
            add(Symbol::Byte(b as u8), &mut id_of, &mut symbol_of);
        }
        for s in &specials {
            add(Symbol::Special(s.clone()), &mut id_of, &mut symbol_of);
        }
        add(Symbol::word_end(), &mut id_of, &mut symbol_of);
        for (left, right) in &merge_table.merges {
            for part in [left.as_str(), right.as_str()] {
                add(key_to_symbol(part), &mut id_of, &mut symbol_of);
            }
            add(
                key_to_symbol(&format!("{left}{right}")),
                &mut id_of,
                &mut symbol_of,
            );
        }
        TokenizerModel {
            merge_table,
            specials,
            id_of,
            symbol_of,
        }
    }

    pub fn with_default_specials(merge_table: MergeTable) -> Self {
        Self::new(
            merge_table,
            vec![
                START_OF_TURN.to_string(),
                END_OF_TURN.to_string(),
                END_OF_TEXT.to_string(),
            ],
        )
    }

    pub fn vocab_size(&self) -> usize {
        self.symbol_of.len()
    }

    /// Vocabulary as key -> id, in id order.
    pub fn vocabulary(&self) -> BTreeMap<String, u32> {
        self.id_of.iter().map(|(k, &v)| (k.clone(), v)).collect()
    }

    /// Splits one word into symbols by applying the merge table in order.
    /// Unknown symbols are left intact here; byte fallback happens at id
    /// lookup.
    pub fn segment_word(&self, word: &str) -> Vec<Symbol> {
        let mut keys: Vec<String> = word.chars().map(|c| c.to_string()).collect();
        keys.push(WORD_END_MARK.to_string());
        for (left, right) in &self.merge_table.merges {
            let mut out = Vec::with_capacity(keys.len());
            let mut i = 0;
            while i < keys.len() {
                if i + 1 < keys.len() && &keys[i] == left && &keys[i + 1] == right {
                    out.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    out.push(keys[i].clone());
                    i += 1;
                }
            }
            keys = out;
        }
        keys.iter().map(|k| key_to_symbol(k)).collect()
    }

    fn push_symbol_ids(&self, sym: &Symbol, out: &mut Vec<u32>) {
        if let Some(&id) = self.id_of.get(&sym.key()) {
            out.push(id);
            return;
        }
        // Byte fallback for symbols outside the vocabulary.
        match sym {
            Symbol::Text { text, word_end } => {
                for b in text.as_bytes() {
                    out.push(self.id_of[&Symbol::Byte(*b).key()]);
                }
                if *word_end {
                    out.push(self.id_of[&Symbol::word_end().key()]);
                }
            }
            Symbol::Byte(b) => out.push(self.id_of[&Symbol::Byte(*b).key()]),
            Symbol::Special(s) => {
                for b in s.as_bytes() {
                    out.push(self.id_of[&Symbol::Byte(*b).key()]);
                }
            }
        }
    }

    /// Encodes arbitrary UTF-8 text. Special tokens are matched verbatim,
    /// words are segmented through the merge table within whitespace
    /// boundaries, whitespace and out-of-vocabulary characters fall back to
    /// byte symbols.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for piece in split_specials(text, &self.specials) {
            match piece {
                Piece::Special(s) => ids.push(self.id_of[s]),
                Piece::Plain(chunk) => {
                    for run in split_runs(chunk) {
                        match run {
                            Run::Word(w) => {
                                for sym in self.segment_word(w) {
                                    self.push_symbol_ids(&sym, &mut ids);
                                }
                            }
                            Run::Whitespace(ws) => {
                                for b in ws.as_bytes() {
                                    ids.push(self.id_of[&Symbol::Byte(*b).key()]);
                                }
                            }
                        }
                    }
                }
            }
        }
        ids
    }

    /// Inverts `encode` exactly.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut bytes: Vec<u8> = Vec::new();
        for &id in ids {
            let sym = self
                .symbol_of
                .get(id as usize)
                .ok_or(TokenizerError::UnknownTokenId(id, self.symbol_of.len()))?;
            match sym {
                Symbol::Text { text, .. } => bytes.extend_from_slice(text.as_bytes()),
                Symbol::Byte(b) => bytes.push(*b),
                Symbol::Special(s) => bytes.extend_from_slice(s.as_bytes()),
            }
        }
        String::from_utf8(bytes)
            .map_err(|e| TokenizerError::MalformedModel(format!("decode produced invalid UTF-8: {e}")))
    }

    /// Serializes the model in the versioned line format.
    pub fn to_model_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "subword-merges v1 {}",
            self.merge_table.num_operations
        );
        for (l, r) in &self.merge_table.merges {
            let _ = writeln!(out, "{l}\t{r}");
        }
        let _ = writeln!(out, "specials:");
        for s in &self.specials {
            let _ = writeln!(out, "{s}");
        }
        out
    }

    pub fn from_model_string(s: &str) -> Result<Self, TokenizerError> {
        let mut lines = s.lines();
        let header = lines
            .next()
            .ok_or_else(|| TokenizerError::MalformedModel("empty file".into()))?;
        let mut parts = header.split(' ');
        if parts.next() != Some("subword-merges") || parts.next() != Some("v1") {
            return Err(TokenizerError::MalformedModel(format!(
                "bad header: {header}"
            )));
        }
        let num_operations: usize = parts
            .next()
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| TokenizerError::MalformedModel("missing num_operations".into()))?;
        let mut merges = Vec::new();
        let mut specials = Vec::new();
        let mut in_specials = false;
        for line in lines {
            if line == "specials:" {
                in_specials = true;
                continue;
            }
            if in_specials {
                if !line.is_empty() {
                    specials.push(line.to_string());
                }
            } else {
                let (l, r) = line.split_once('\t').ok_or_else(|| {
                    TokenizerError::MalformedModel(format!("merge line without tab: {line}"))
                })?;
                merges.push((l.to_string(), r.to_string()));
            }
        }
        Ok(Self::new(
            MergeTable {
                merges,
                num_operations,
            },
            specials,
        ))
    }
}

fn key_to_symbol(key: &str) -> Symbol {
    if let Some(stripped) = key.strip_suffix(WORD_END_MARK) {
        Symbol::Text {
            text: stripped.to_string(),
            word_end: true,
        }
    } else {
        Symbol::text(key)
    }
}

enum Piece<'a> {
    Plain(&'a str),
    Special(&'a str),
}

/// Splits text around verbatim special-token occurrences.
fn split_specials<'a>(text: &'a str, specials: &'a [String]) -> Vec<Piece<'a>> {
    let mut pieces = Vec::new();
    let mut rest = text;
    'outer: while !rest.is_empty() {
        let mut earliest: Option<(usize, &str)> = None;
        for sp in specials {
            if sp.is_empty() {
                continue;
            }
            if let Some(pos) = rest.find(sp.as_str()) {
                if earliest.map_or(true, |(p, _)| pos < p) {
                    earliest = Some((pos, sp));
                }
            }
        }
        match earliest {
            Some((pos, sp)) => {
                if pos > 0 {
                    pieces.push(Piece::Plain(&rest[..pos]));
                }
                pieces.push(Piece::Special(&rest[pos..pos + sp.len()]));
                rest = &rest[pos + sp.len()..];
            }
            None => {
                pieces.push(Piece::Plain(rest));
                break 'outer;
            }
        }
    }
    pieces
}

enum Run<'a> {
    Word(&'a str),
    Whitespace(&'a str),
}

/// Splits a chunk into alternating word and whitespace runs.
fn split_runs(chunk: &str) -> Vec<Run<'_>> {
    let mut runs = Vec::new();
    let mut start = 0;
    let mut ws: Option<bool> = None;
    for (i, ch) in chunk.char_indices() {
        let is_ws = ch.is_whitespace();
        match ws {
            Some(prev) if prev == is_ws => {}
            Some(prev) => {
                let piece = &chunk[start..i];
                runs.push(if prev {
                    Run::Whitespace(piece)
                } else {
                    Run::Word(piece)
                });
                start = i;
                ws = Some(is_ws);
            }
            None => ws = Some(is_ws),
        }
    }
    if let Some(prev) = ws {
        let piece = &chunk[start..];
        runs.push(if prev {
            Run::Whitespace(piece)
        } else {
            Run::Word(piece)
        });
    }
    runs
}
