//! Byte-pair compression and expansion in the style of Gage's original
//! codec: the most frequent adjacent byte pair is repeatedly replaced with a
//! byte that does not occur in the data, and expansion replays the table
//! with an explicit stack in a single pass.

use std::collections::BTreeSet;

use thiserror::Error;

/// One replacement rule: `replacement` stands for the adjacent pair
/// `(left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairEntry {
    pub replacement: u8,
    pub left: u8,
    pub right: u8,
}

/// Replacement rules in creation order, plus the set of byte values the
/// compressor reserved as replacements.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairTable {
    pub entries: Vec<PairEntry>,
    pub reserved: BTreeSet<u8>,
}

impl PairTable {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&self, byte: u8) -> Option<(u8, u8)> {
        self.entries
            .iter()
            .find(|e| e.replacement == byte)
            .map(|e| (e.left, e.right))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExpandError {
    /// A reserved replacement byte appeared in the data without a table
    /// entry defining its pair.
    #[error("replacement byte 0x{0:02x} has no table entry")]
    UnknownByte(u8),
}

/// Counts non-overlapping occurrences of every adjacent pair.
fn pair_counts(data: &[u8]) -> Vec<((u8, u8), usize)> {
    use std::collections::HashMap;
    let mut counts: HashMap<(u8, u8), usize> = HashMap::new();
    // Per-pair index of the last counted occurrence, so "aaa" counts the
    // pair (a,a) once, matching what a replacement pass can actually merge.
    let mut last: HashMap<(u8, u8), usize> = HashMap::new();
    for i in 0..data.len().saturating_sub(1) {
        let pair = (data[i], data[i + 1]);
        if let Some(&j) = last.get(&pair) {
            if j + 1 == i {
                continue;
            }
        }
        last.insert(pair, i);
        *counts.entry(pair).or_insert(0) += 1;
    }
    counts.into_iter().collect()
}

/// Replaces every non-overlapping occurrence of `pair` with `repl`.
fn replace_pair(data: &[u8], pair: (u8, u8), repl: u8) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    let mut i = 0;
    while i < data.len() {
        if i + 1 < data.len() && (data[i], data[i + 1]) == pair {
            out.push(repl);
            i += 2;
        } else {
            out.push(data[i]);
            i += 1;
        }
    }
    out
}

/// Iteratively replaces the most frequent adjacent byte pair (frequency at
/// least 2) with an unused byte. Stops when no pair repeats or every byte
/// value is in use. Equal frequencies are broken toward the
/// lexicographically smallest pair; replacement bytes are allocated from the
/// top of the unused range so original-byte pairs win ties against pairs
/// that contain earlier replacements.
pub fn bpe_compress(data: &[u8]) -> (Vec<u8>, PairTable) {
    let mut current = data.to_vec();
    let mut table = PairTable::default();

    let mut used = [false; 256];
    for &b in &current {
        used[b as usize] = true;
    }

    loop {
        let mut counts = pair_counts(&current);
        counts.retain(|&(_, c)| c >= 2);
        let Some(&(best, _)) = counts
            .iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        else {
            break;
        };
        let Some(repl) = (0u8..=255).rev().find(|&b| !used[b as usize]) else {
            break;
        };
        used[repl as usize] = true;
        current = replace_pair(&current, best, repl);
        table.entries.push(PairEntry {
            replacement: repl,
            left: best.0,
            right: best.1,
        });
        table.reserved.insert(repl);
    }
    (current, table)
}

/// Single-pass stack expansion: literals stream to the output; a
/// replacement byte expands to its pair with the right element pushed for
/// later processing.
pub fn bpe_expand(compressed: &[u8], table: &PairTable) -> Result<Vec<u8>, ExpandError> {
    let mut out = Vec::with_capacity(compressed.len() * 2);
    let mut stack: Vec<u8> = Vec::new();
    let mut input = compressed.iter().copied();

    loop {
        let byte = match stack.pop() {
            Some(b) => b,
            None => match input.next() {
                Some(b) => b,
                None => break,
            },
        };
        match table.lookup(byte) {
            Some((left, right)) => {
                stack.push(right);
                stack.push(left);
            }
            None => {
                if table.reserved.contains(&byte) {
                    return Err(ExpandError::UnknownByte(byte));
                }
                out.push(byte);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compresses_classic_example() {
        // aaabdaaabac -> ZabdZabac -> ZYdZYac -> XdXac
        let (compressed, table) = bpe_compress(b"aaabdaaabac");
        assert_eq!(table.entries.len(), 3);
        let z = table.entries[0];
        let y = table.entries[1];
        let x = table.entries[2];
        assert_eq!((z.left, z.right), (b'a', b'a'));
        assert_eq!((y.left, y.right), (b'a', b'b'));
        assert_eq!((x.left, x.right), (z.replacement, y.replacement));
        assert_eq!(
            compressed,
            vec![x.replacement, b'd', x.replacement, b'a', b'c']
        );
    }

    #[test]
    fn no_repeated_pair_is_a_noop() {
        let (compressed, table) = bpe_compress(b"abcd");
        assert_eq!(compressed, b"abcd");
        assert!(table.is_empty());
    }

    #[test]
    fn empty_input() {
        let (compressed, table) = bpe_compress(b"");
        assert!(compressed.is_empty());
        assert!(table.is_empty());
    }

    #[test]
    fn round_trip_classic() {
        let data = b"aaabdaaabac";
        let (compressed, table) = bpe_compress(data);
        assert_eq!(bpe_expand(&compressed, &table).unwrap(), data);
    }

    #[test]
    fn corrupted_table_reports_unknown_byte() {
        let (compressed, mut table) = bpe_compress(b"aaabdaaabac");
        let dropped = table.entries.pop().unwrap();
        let err = bpe_expand(&compressed, &table).unwrap_err();
        assert_eq!(err, ExpandError::UnknownByte(dropped.replacement));
    }

    proptest! {
        #[test]
        fn round_trip_random(data in proptest::collection::vec(any::<u8>(), 0..300)) {
            let (compressed, table) = bpe_compress(&data);
            prop_assert_eq!(bpe_expand(&compressed, &table).unwrap(), data);
        }

        #[test]
        fn round_trip_low_entropy(data in proptest::collection::vec(0u8..4, 0..400)) {
            let (compressed, table) = bpe_compress(&data);
            prop_assert_eq!(bpe_expand(&compressed, &table).unwrap(), data);
        }
    }
}
