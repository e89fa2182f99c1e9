//! Corpus loading and word splitting.
//!
//! A "word" is a maximal run of non-whitespace, non-punctuation characters,
//! or a single punctuation character when punctuation splitting is enabled.
//! These words are the unit counted in the fragment score denominator and
//! the training stream for the domain BPE trainer.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};

/// How documents are laid out in a corpus file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One document per line.
    PlainLines,
    /// JSON lines; each record carries its document text in the named field.
    JsonlField(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusSource {
    Path(PathBuf),
    Inline,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCorpus {
    pub documents: Vec<String>,
    pub source: CorpusSource,
}

impl RawCorpus {
    pub fn inline<I, S>(documents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        RawCorpus {
            documents: documents.into_iter().map(Into::into).collect(),
            source: CorpusSource::Inline,
        }
    }
}

/// Options for [`pre_tokenize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreTokenizeOptions {
    pub lowercase: bool,
    pub split_punct: bool,
    /// Keep punctuation words in the output. Only meaningful with `split_punct`.
    pub keep_punct: bool,
}

impl Default for PreTokenizeOptions {
    fn default() -> Self {
        PreTokenizeOptions {
            lowercase: true,
            split_punct: true,
            keep_punct: true,
        }
    }
}

/// A corpus split into words, one sentence per source document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreTokenizedCorpus {
    sentences: Vec<Vec<String>>,
    total_words: u64,
    word_freq: BTreeMap<String, u64>,
}

impl PreTokenizedCorpus {
    /// Builds a corpus from already-split sentences.
    ///
    /// Words must be non-empty and free of whitespace.
    pub fn from_sentences(sentences: Vec<Vec<String>>) -> Result<Self> {
        let mut word_freq = BTreeMap::new();
        let mut total_words = 0u64;
        for word in sentences.iter().flatten() {
            if word.is_empty() {
                return Err(Error::InvalidInput("empty word in sentence".into()));
            }
            if word.chars().any(char::is_whitespace) {
                return Err(Error::InvalidInput(format!(
                    "word {word:?} contains whitespace"
                )));
            }
            *word_freq.entry(word.clone()).or_insert(0) += 1;
            total_words += 1;
        }
        if total_words == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(PreTokenizedCorpus {
            sentences,
            total_words,
            word_freq,
        })
    }

    pub fn sentences(&self) -> &[Vec<String>] {
        &self.sentences
    }

    pub fn total_words(&self) -> u64 {
        self.total_words
    }

    /// Word counts in lexicographic order.
    pub fn word_freq(&self) -> &BTreeMap<String, u64> {
        &self.word_freq
    }
}

/// Reads a corpus file, one document per line or per JSON record.
pub fn load_corpus(path: impl AsRef<Path>, format: &CorpusFormat) -> Result<RawCorpus> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Encoding {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })?;

    let documents = match format {
        CorpusFormat::PlainLines => text.lines().map(str::to_owned).collect(),
        CorpusFormat::JsonlField(field) => {
            let mut docs = Vec::new();
            for (idx, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let location = format!("{}:{}", path.display(), idx + 1);
                let record: serde_json::Value = serde_json::from_str(line)
                    .map_err(|e| Error::format(&location, e.to_string()))?;
                let value = record
                    .get(field)
                    .ok_or_else(|| Error::format(&location, format!("missing field {field:?}")))?;
                let doc = value.as_str().ok_or_else(|| {
                    Error::format(&location, format!("field {field:?} is not a string"))
                })?;
                docs.push(doc.to_owned());
            }
            docs
        }
    };

    Ok(RawCorpus {
        documents,
        source: CorpusSource::Path(path.to_path_buf()),
    })
}

pub fn is_punctuation(c: char) -> bool {
    if c.is_ascii() {
        return c.is_ascii_punctuation();
    }
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

fn split_document(doc: &str, opts: &PreTokenizeOptions) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in doc.split_whitespace() {
        let chunk = if opts.lowercase {
            chunk.to_lowercase()
        } else {
            chunk.to_owned()
        };
        if !opts.split_punct {
            words.push(chunk);
            continue;
        }
        let mut current = String::new();
        for c in chunk.chars() {
            if is_punctuation(c) {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                if opts.keep_punct {
                    words.push(c.to_string());
                }
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

/// Splits every document into words. Sentence `i` corresponds to document `i`.
pub fn pre_tokenize(raw: &RawCorpus, opts: &PreTokenizeOptions) -> Result<PreTokenizedCorpus> {
    if raw.documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sentences: Vec<Vec<String>> = raw
        .documents
        .par_iter()
        .map(|doc| split_document(doc, opts))
        .collect();
    PreTokenizedCorpus::from_sentences(sentences)
}

/// Word counts of a corpus; iteration order is lexicographic.
pub fn word_frequencies(corpus: &PreTokenizedCorpus) -> BTreeMap<String, u64> {
    corpus.word_freq.clone()
}

/// Writes `word<TAB>count` lines in lexicographic word order.
pub fn write_word_freq_tsv<W: Write>(
    corpus: &PreTokenizedCorpus,
    mut out: W,
) -> std::io::Result<()> {
    for (word, count) in &corpus.word_freq {
        writeln!(out, "{word}\t{count}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(corpus: &PreTokenizedCorpus) -> Vec<&str> {
        corpus
            .sentences()
            .iter()
            .flatten()
            .map(String::as_str)
            .collect()
    }

    #[test]
    fn plain_lines_load() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "a b\nc\n").unwrap();
        let raw = load_corpus(f.path(), &CorpusFormat::PlainLines).unwrap();
        assert_eq!(raw.documents, vec!["a b", "c"]);
    }

    #[test]
    fn empty_file_loads_then_fails_downstream() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let raw = load_corpus(f.path(), &CorpusFormat::PlainLines).unwrap();
        assert!(raw.documents.is_empty());
        assert!(matches!(
            pre_tokenize(&raw, &PreTokenizeOptions::default()),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn jsonl_field_projection() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"text":"hi","y":1}}"#).unwrap();
        let raw = load_corpus(f.path(), &CorpusFormat::JsonlField("text".into())).unwrap();
        assert_eq!(raw.documents, vec!["hi"]);
    }

    #[test]
    fn jsonl_errors() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"body":"hi"}}"#).unwrap();
        let err = load_corpus(f.path(), &CorpusFormat::JsonlField("text".into())).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "{{not json").unwrap();
        let err = load_corpus(g.path(), &CorpusFormat::JsonlField("text".into())).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn invalid_utf8_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"ok\n\xff\xfe\n").unwrap();
        let err = load_corpus(f.path(), &CorpusFormat::PlainLines).unwrap_err();
        assert!(matches!(err, Error::Encoding { offset: 3, .. }));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_corpus("/nonexistent/corpus.txt", &CorpusFormat::PlainLines).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn splits_punctuation_and_lowercases() {
        let raw = RawCorpus::inline(["The bluetooth, works!"]);
        let corpus = pre_tokenize(&raw, &PreTokenizeOptions::default()).unwrap();
        assert_eq!(words(&corpus), ["the", "bluetooth", ",", "works", "!"]);
        assert_eq!(corpus.total_words(), 5);
    }

    #[test]
    fn punctuation_opt_out() {
        let raw = RawCorpus::inline(["The bluetooth, works!"]);
        let opts = PreTokenizeOptions {
            keep_punct: false,
            ..Default::default()
        };
        let corpus = pre_tokenize(&raw, &opts).unwrap();
        assert_eq!(words(&corpus), ["the", "bluetooth", "works"]);

        let opts = PreTokenizeOptions {
            lowercase: false,
            split_punct: false,
            keep_punct: true,
        };
        let corpus = pre_tokenize(&raw, &opts).unwrap();
        assert_eq!(words(&corpus), ["The", "bluetooth,", "works!"]);
    }

    #[test]
    fn single_word() {
        let corpus = pre_tokenize(&RawCorpus::inline(["abc"]), &Default::default()).unwrap();
        assert_eq!(words(&corpus), ["abc"]);
        assert_eq!(corpus.total_words(), 1);
    }

    #[test]
    fn whitespace_only_is_empty() {
        let err = pre_tokenize(&RawCorpus::inline(["  \n "]), &Default::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));
    }

    #[test]
    fn unicode_punctuation() {
        let corpus = pre_tokenize(&RawCorpus::inline(["«ok»—fine"]), &Default::default()).unwrap();
        assert_eq!(words(&corpus), ["«", "ok", "»", "—", "fine"]);
    }

    #[test]
    fn frequencies() {
        let corpus =
            PreTokenizedCorpus::from_sentences(vec![vec!["a".into(), "b".into(), "a".into()]])
                .unwrap();
        let freq = word_frequencies(&corpus);
        assert_eq!(freq.get("a"), Some(&2));
        assert_eq!(freq.get("b"), Some(&1));

        let corpus = PreTokenizedCorpus::from_sentences(vec![vec!["x".into(); 3]]).unwrap();
        assert_eq!(word_frequencies(&corpus).get("x"), Some(&3));
        assert_eq!(corpus.total_words(), 3);

        let mut out = Vec::new();
        write_word_freq_tsv(&corpus, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "x\t3\n");
    }

    #[test]
    fn tsv_is_lexicographic() {
        let corpus = pre_tokenize(&RawCorpus::inline(["b a c a"]), &Default::default()).unwrap();
        let mut out = Vec::new();
        write_word_freq_tsv(&corpus, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "a\t2\nb\t1\nc\t1\n");
    }

    proptest! {
        #[test]
        fn counts_consistent_and_idempotent(
            docs in proptest::collection::vec("[a-zA-Zé.,!? \t]{0,40}", 1..8),
            lowercase: bool,
            split_punct: bool,
        ) {
            let opts = PreTokenizeOptions { lowercase, split_punct, keep_punct: true };
            let raw = RawCorpus::inline(docs);
            let Ok(corpus) = pre_tokenize(&raw, &opts) else { return Ok(()); };

            let sum: u64 = corpus.word_freq().values().sum();
            let len: usize = corpus.sentences().iter().map(Vec::len).sum();
            prop_assert_eq!(sum, corpus.total_words());
            prop_assert_eq!(len as u64, corpus.total_words());
            for w in corpus.sentences().iter().flatten() {
                prop_assert!(!w.is_empty());
                prop_assert!(!w.chars().any(char::is_whitespace));
                if lowercase {
                    prop_assert!(!w.chars().any(char::is_uppercase));
                }
            }

            let rejoined = RawCorpus::inline(corpus.sentences().iter().map(|s| s.join(" ")));
            let again = pre_tokenize(&rejoined, &opts).unwrap();
            prop_assert_eq!(again.sentences(), corpus.sentences());
        }
    }
}
