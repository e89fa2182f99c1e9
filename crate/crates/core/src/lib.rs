//! Adapting a pretrained subword vocabulary to a downstream corpus.
//!
//! The pipeline:
//!
//! 1. [`corpus`] loads text and splits it into words.
//! 2. [`bpe`] trains a domain vocabulary on those words and records merge order.
//! 3. [`adapter`] appends domain tokens to the pretrained vocabulary in merge
//!    order until the fragment score (pieces per word) drops to a threshold.
//! 4. [`embed`] initializes added-token embeddings as the mean of their
//!    pretrained pieces.
//! 5. [`reg`] provides the fine-tuning losses over dual tokenizations, with
//!    analytic gradients checked against finite differences.

pub mod adapter;
pub mod bpe;
pub mod corpus;
pub mod embed;
mod error;
pub mod reg;
pub mod tokenizer;

pub use adapter::{
    adapt_fixed, adapt_vocabulary, fragment_score, tokenization_diff, AdaptConfig, AdaptReport,
    DiffRow, Termination, TracePoint,
};
pub use bpe::{
    load_merges, ordered_subset, save_merges, train_bpe, train_bpe_traced, BpeConfig, DomainVocab,
    MergeList,
};
pub use corpus::{
    load_corpus, pre_tokenize, word_frequencies, CorpusFormat, PreTokenizeOptions,
    PreTokenizedCorpus, RawCorpus,
};
pub use embed::{init_added_embeddings, load_embeddings, save_embeddings, EmbeddingTable};
pub use error::{Error, Result};
pub use tokenizer::{
    load_vocab, merge_vocabs, save_vocab, tokenize_corpus, tokenize_word, TokenizationStats,
    VocabLabel, Vocabulary, WordTokenization,
};
