//! Tokenization stack: the byte-pair compression codec and the subword
//! tokenizer trained with a bounded number of merge operations.

pub mod bytepair;
pub mod subword;

pub use bytepair::{bpe_compress, bpe_expand, ExpandError, PairEntry, PairTable};
pub use subword::{
    train_subword, MergeTable, Symbol, TokenizerError, TokenizerModel, END_OF_TEXT, END_OF_TURN,
    START_OF_TURN, WORD_END_MARK,
};
