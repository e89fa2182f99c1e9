//! Vocabularies and greedy longest-match-first subword tokenization.
//!
//! Word-internal pieces carry a continuation prefix (`##` by default), as in
//! BERT `vocab.txt` files. The same tokenizer is used for the pretrained,
//! domain and adapted vocabularies; they differ only in content.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::PreTokenizedCorpus;
use crate::error::{Error, Result};

/// Words longer than this many codepoints tokenize to the unknown token.
pub const MAX_WORD_CHARS: usize = 100;

pub const DEFAULT_CONTINUATION_PREFIX: &str = "##";
pub const DEFAULT_UNK_TOKEN: &str = "[UNK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabLabel {
    Pretrained,
    Domain,
    Adapted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabOptions {
    pub continuation_prefix: String,
    pub unk_token: String,
}

impl Default for VocabOptions {
    fn default() -> Self {
        VocabOptions {
            continuation_prefix: DEFAULT_CONTINUATION_PREFIX.to_owned(),
            unk_token: DEFAULT_UNK_TOKEN.to_owned(),
        }
    }
}

/// An ordered, duplicate-free token list. A token's id is its index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, u32>,
    options: VocabOptions,
    label: VocabLabel,
    // Longest piece body in codepoints; bounds the greedy search window.
    max_piece_chars: usize,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I, label: VocabLabel) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_options(tokens, label, VocabOptions::default())
    }

    pub fn with_options<I, S>(tokens: I, label: VocabLabel, options: VocabOptions) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            id_of: HashMap::new(),
            options,
            label,
            max_piece_chars: 0,
        };
        for (line, token) in tokens.into_iter().enumerate() {
            let token = token.into();
            if token.is_empty() {
                return Err(Error::EmptyToken { line: line + 1 });
            }
            if token.chars().any(char::is_whitespace) {
                return Err(Error::WhitespaceInToken { token });
            }
            if vocab.id_of.contains_key(&token) {
                return Err(Error::DuplicateToken {
                    token,
                    line: line + 1,
                });
            }
            vocab.push_unchecked(token);
        }
        if !vocab.id_of.contains_key(&vocab.options.unk_token) {
            return Err(Error::MissingUnkToken(vocab.options.unk_token.clone()));
        }
        Ok(vocab)
    }

    fn push_unchecked(&mut self, token: String) {
        let body_chars = self.piece_body(&token).0.chars().count();
        self.max_piece_chars = self.max_piece_chars.max(body_chars);
        let id = u32::try_from(self.tokens.len()).expect("vocabulary exceeds u32 ids");
        self.id_of.insert(token.clone(), id);
        self.tokens.push(token);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.id_of.contains_key(token)
    }

    pub fn label(&self) -> VocabLabel {
        self.label
    }

    pub fn with_label(mut self, label: VocabLabel) -> Self {
        self.label = label;
        self
    }

    pub fn options(&self) -> &VocabOptions {
        &self.options
    }

    pub fn continuation_prefix(&self) -> &str {
        &self.options.continuation_prefix
    }

    pub fn unk_token(&self) -> &str {
        &self.options.unk_token
    }

    /// Splits a token into its body and whether it carries the continuation prefix.
    /// A token that is exactly the prefix is treated as a word-initial token.
    pub fn piece_body<'a>(&self, token: &'a str) -> (&'a str, bool) {
        match token.strip_prefix(self.options.continuation_prefix.as_str()) {
            Some(body) if !body.is_empty() => (body, true),
            _ => (token, false),
        }
    }

    /// Tokenizes a word in word-initial position.
    pub fn tokenize_word(&self, word: &str) -> WordTokenization {
        self.tokenize_at(word, false)
    }

    /// Tokenizes `word`; with `continuation` set, the first piece is also
    /// looked up in its continuation form (as if the word were a word suffix).
    pub fn tokenize_at(&self, word: &str, continuation: bool) -> WordTokenization {
        match self.greedy_pieces(word, continuation) {
            Some(pieces) => WordTokenization {
                word: word.to_owned(),
                pieces,
                is_unk: false,
            },
            None => WordTokenization {
                word: word.to_owned(),
                pieces: vec![self.options.unk_token.clone()],
                is_unk: true,
            },
        }
    }

    /// Number of pieces `word` tokenizes into; the unknown token counts as one.
    pub fn piece_count(&self, word: &str) -> usize {
        self.greedy_pieces(word, false).map_or(1, |p| p.len())
    }

    fn greedy_pieces(&self, word: &str, continuation: bool) -> Option<Vec<String>> {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let n_chars = bounds.len() - 1;
        if n_chars > MAX_WORD_CHARS {
            return None;
        }

        let prefix = self.options.continuation_prefix.as_str();
        let mut pieces = Vec::new();
        let mut key = String::with_capacity(word.len() + prefix.len());
        let mut start = 0;
        while start < n_chars {
            let prefixed = start > 0 || continuation;
            let mut end = n_chars.min(start + self.max_piece_chars);
            let mut found = false;
            while end > start {
                key.clear();
                if prefixed {
                    key.push_str(prefix);
                }
                key.push_str(&word[bounds[start]..bounds[end]]);
                if self.id_of.contains_key(key.as_str()) {
                    found = true;
                    break;
                }
                end -= 1;
            }
            if !found {
                return None;
            }
            pieces.push(key.clone());
            start = end;
        }
        Some(pieces)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordTokenization {
    pub word: String,
    pub pieces: Vec<String>,
    pub is_unk: bool,
}

/// Piece counts of a vocabulary over a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenizationStats {
    pub total_subwords: u64,
    pub total_words: u64,
    /// pieces-per-word -> number of word occurrences
    pub per_word_hist: BTreeMap<usize, u64>,
}

impl TokenizationStats {
    /// Average pieces per word.
    pub fn fragment_score(&self) -> f64 {
        self.total_subwords as f64 / self.total_words as f64
    }

    pub fn report(&self) -> StatsReport {
        StatsReport {
            total_words: self.total_words,
            total_subwords: self.total_subwords,
            fragment_score: self.fragment_score(),
            histogram: self.per_word_hist.clone(),
        }
    }
}

/// JSON shape of [`TokenizationStats`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub total_words: u64,
    pub total_subwords: u64,
    pub fragment_score: f64,
    pub histogram: BTreeMap<usize, u64>,
}

pub fn tokenize_word(vocab: &Vocabulary, word: &str) -> WordTokenization {
    vocab.tokenize_word(word)
}

/// Tokenizes every distinct corpus word once and weights by frequency.
pub fn tokenize_corpus(
    vocab: &Vocabulary,
    corpus: &PreTokenizedCorpus,
) -> Result<TokenizationStats> {
    let freq: Vec<(&String, &u64)> = corpus.word_freq().iter().collect();
    if freq.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let counts: Vec<usize> = freq
        .par_iter()
        .map(|(word, _)| vocab.piece_count(word))
        .collect();

    let mut stats = TokenizationStats::default();
    for ((_, &n), pieces) in freq.iter().zip(counts) {
        stats.total_words += n;
        stats.total_subwords += pieces as u64 * n;
        *stats.per_word_hist.entry(pieces).or_insert(0) += n;
    }
    debug_assert_eq!(stats.total_words, corpus.total_words());
    Ok(stats)
}

/// Loads a `vocab.txt` file: one token per line, line index is the id.
pub fn load_vocab(path: impl AsRef<Path>, label: VocabLabel) -> Result<Vocabulary> {
    load_vocab_with(path, label, VocabOptions::default())
}

pub fn load_vocab_with(
    path: impl AsRef<Path>,
    label: VocabLabel,
    options: VocabOptions,
) -> Result<Vocabulary> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Encoding {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })?;
    let lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
    Vocabulary::with_options(lines, label, options)
}

pub fn save_vocab(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for token in &vocab.tokens {
        writeln!(out, "{token}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Appends `additions` to `pretrained`, skipping tokens it already holds.
/// Pretrained ids are unchanged; the result is labelled adapted.
pub fn merge_vocabs(pretrained: &Vocabulary, additions: &[String]) -> Vocabulary {
    let mut merged = pretrained.clone();
    merged.label = VocabLabel::Adapted;
    merged.extend(additions);
    merged
}

impl Vocabulary {
    /// Appends new tokens in order, skipping those already present. Returns
    /// how many were added.
    pub(crate) fn extend(&mut self, additions: &[String]) -> usize {
        let before = self.tokens.len();
        for token in additions {
            if !self.id_of.contains_key(token) {
                debug_assert!(!token.is_empty() && !token.chars().any(char::is_whitespace));
                self.push_unchecked(token.clone());
            }
        }
        self.tokens.len() - before
    }
}
