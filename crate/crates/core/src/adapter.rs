//! Fragment score and fragment-score driven vocabulary expansion.
//!
//! The fragment score of a vocabulary on a corpus is the number of pieces it
//! produces divided by the number of words. Adaptation appends domain tokens
//! to the pretrained vocabulary in merge order: `alpha` tokens first, then
//! `beta` at a time while the score stays above `gamma`.

use aho_corasick::AhoCorasick;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bpe::{ordered_subset, DomainVocab, DEFAULT_DOMAIN_VOCAB_SIZE};
use crate::corpus::PreTokenizedCorpus;
use crate::error::{Error, Result};
use crate::tokenizer::{merge_vocabs, tokenize_corpus, VocabLabel, Vocabulary};

pub const DEFAULT_ALPHA: usize = 500;
pub const DEFAULT_BETA: usize = 50;
pub const DEFAULT_GAMMA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Domain tokens added before the first score check.
    pub alpha: usize,
    /// Domain tokens added per iteration.
    pub beta: usize,
    /// Adaptation stops at the first fragment score `<= gamma`.
    pub gamma: f64,
    pub domain_vocab_size: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            domain_vocab_size: DEFAULT_DOMAIN_VOCAB_SIZE,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 1 {
            return Err(Error::InvalidConfig("beta must be at least 1".into()));
        }
        if self.gamma.is_nan() || self.gamma < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "gamma must be >= 1.0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    /// The fragment score reached `gamma`.
    Threshold,
    /// Every merged domain token was added first.
    Exhausted,
    /// A fixed number of tokens was requested; the score guard was skipped.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub tokens_added: usize,
    pub fragment_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    /// Domain tokens taken in merge order.
    pub n_added: usize,
    /// Tokens that were new to the pretrained vocabulary.
    pub n_new: usize,
    pub iterations: usize,
    pub terminated_by: Termination,
    pub score_trace: Vec<TracePoint>,
}

pub fn fragment_score(vocab: &Vocabulary, corpus: &PreTokenizedCorpus) -> Result<f64> {
    Ok(tokenize_corpus(vocab, corpus)?.fragment_score())
}

/// Per-word piece counts that are only recomputed for words a new token can
/// affect: a word's greedy segmentation can change only if it contains the
/// body of an added token as a substring.
struct ScoreCache {
    words: Vec<(String, u64)>,
    pieces: Vec<usize>,
    total_words: u64,
    total_subwords: u64,
}

impl ScoreCache {
    fn new(vocab: &Vocabulary, corpus: &PreTokenizedCorpus) -> Result<Self> {
        let words: Vec<(String, u64)> = corpus
            .word_freq()
            .iter()
            .map(|(w, &n)| (w.clone(), n))
            .collect();
        if words.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let pieces: Vec<usize> = words
            .par_iter()
            .map(|(w, _)| vocab.piece_count(w))
            .collect();
        let mut cache = ScoreCache {
            words,
            pieces,
            total_words: 0,
            total_subwords: 0,
        };
        cache.total_words = cache.words.iter().map(|(_, n)| n).sum();
        cache.total_subwords = cache.sum_subwords();
        Ok(cache)
    }

    fn sum_subwords(&self) -> u64 {
        self.words
            .iter()
            .zip(&self.pieces)
            .map(|((_, n), &p)| n * p as u64)
            .sum()
    }

    fn update(&mut self, vocab: &Vocabulary, added: &[String]) {
        let bodies: Vec<&str> = added.iter().map(|t| vocab.piece_body(t).0).collect();
        if bodies.is_empty() {
            return;
        }
        let matcher = AhoCorasick::new(&bodies).expect("token bodies form a valid automaton");
        let words = &self.words;
        let updates: Vec<(usize, usize)> = (0..words.len())
            .into_par_iter()
            .filter(|&i| matcher.is_match(words[i].0.as_str()))
            .map(|i| (i, vocab.piece_count(&words[i].0)))
            .collect();
        for (i, p) in updates {
            let n = self.words[i].1;
            self.total_subwords = self.total_subwords - n * self.pieces[i] as u64 + n * p as u64;
            self.pieces[i] = p;
        }
    }

    fn score(&self) -> f64 {
        self.total_subwords as f64 / self.total_words as f64
    }
}

fn check_pretrained(pretrained: &Vocabulary) -> Result<()> {
    if pretrained.label() != VocabLabel::Pretrained {
        return Err(Error::InvalidInput(format!(
            "expected a pretrained vocabulary, got {:?}",
            pretrained.label()
        )));
    }
    Ok(())
}

/// Grows `pretrained` with domain tokens until the fragment score on `corpus`
/// drops to `cfg.gamma` or the domain tokens run out.
pub fn adapt_vocabulary(
    pretrained: &Vocabulary,
    domain: &DomainVocab,
    corpus: &PreTokenizedCorpus,
    cfg: &AdaptConfig,
) -> Result<(Vocabulary, AdaptReport)> {
    cfg.validate()?;
    check_pretrained(pretrained)?;
    let available = domain.merged_tokens().len();

    let mut added = cfg.alpha.min(available);
    let initial = ordered_subset(domain, added)?;
    let mut adapted = merge_vocabs(pretrained, &initial);
    let mut cache = ScoreCache::new(&adapted, corpus)?;
    let mut score = cache.score();
    let mut trace = vec![TracePoint {
        tokens_added: added,
        fragment_score: score,
    }];
    let mut iterations = 0;

    while score > cfg.gamma && added < available {
        let next = (added + cfg.beta).min(available);
        let batch = &domain.merged_tokens()[added..next];
        let before = adapted.len();
        adapted.extend(batch);
        let fresh = adapted.tokens()[before..].to_vec();
        cache.update(&adapted, &fresh);
        added = next;
        score = cache.score();
        trace.push(TracePoint {
            tokens_added: added,
            fragment_score: score,
        });
        iterations += 1;
    }

    let terminated_by = if score <= cfg.gamma {
        Termination::Threshold
    } else {
        log::warn!(
            "domain vocabulary exhausted after {added} tokens; fragment score {score:.4} still above {}",
            cfg.gamma
        );
        Termination::Exhausted
    };
    let report = AdaptReport {
        n_added: added,
        n_new: adapted.len() - pretrained.len(),
        iterations,
        terminated_by,
        score_trace: trace,
    };
    Ok((adapted, report))
}

/// Adds exactly the first `n` domain tokens, without the score guard.
pub fn adapt_fixed(
    pretrained: &Vocabulary,
    domain: &DomainVocab,
    corpus: &PreTokenizedCorpus,
    n: usize,
) -> Result<(Vocabulary, AdaptReport)> {
    check_pretrained(pretrained)?;
    let additions = ordered_subset(domain, n)?;
    let adapted = merge_vocabs(pretrained, &additions);
    let score = fragment_score(&adapted, corpus)?;
    let report = AdaptReport {
        n_added: n,
        n_new: adapted.len() - pretrained.len(),
        iterations: 0,
        terminated_by: Termination::Fixed,
        score_trace: vec![TracePoint {
            tokens_added: n,
            fragment_score: score,
        }],
    };
    Ok((adapted, report))
}

/// A word segmented differently by two vocabularies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffRow {
    pub word: String,
    pub count: u64,
    pub pieces_a: Vec<String>,
    pub pieces_b: Vec<String>,
}

impl DiffRow {
    /// `word<TAB>pieces a<TAB>pieces b`, pieces space-separated.
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}",
            self.word,
            self.pieces_a.join(" "),
            self.pieces_b.join(" ")
        )
    }
}

/// Corpus words whose pieces differ between `a` and `b`, most frequent first
/// (ties by word), at most `top` rows when given.
pub fn tokenization_diff(
    a: &Vocabulary,
    b: &Vocabulary,
    corpus: &PreTokenizedCorpus,
    top: Option<usize>,
) -> Vec<DiffRow> {
    let mut rows: Vec<DiffRow> = corpus
        .word_freq()
        .par_iter()
        .filter_map(|(word, &count)| {
            let pa = a.tokenize_word(word).pieces;
            let pb = b.tokenize_word(word).pieces;
            (pa != pb).then(|| DiffRow {
                word: word.clone(),
                count,
                pieces_a: pa,
                pieces_b: pb,
            })
        })
        .collect();
    rows.sort_by(|x, y| y.count.cmp(&x.count).then_with(|| x.word.cmp(&y.word)));
    if let Some(k) = top {
        rows.truncate(k);
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{pre_tokenize, RawCorpus};
    use proptest::prelude::*;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        let mut all = vec!["[UNK]"];
        all.extend_from_slice(tokens);
        Vocabulary::new(all, VocabLabel::Pretrained).unwrap()
    }

    fn domain(merged: &[&str]) -> DomainVocab {
        let mut all = vec!["[UNK]"];
        all.extend_from_slice(merged);
        DomainVocab::from_vocab(Vocabulary::new(all, VocabLabel::Domain).unwrap())
    }

    fn corpus(text: &str) -> PreTokenizedCorpus {
        pre_tokenize(&RawCorpus::inline([text]), &Default::default()).unwrap()
    }

    #[test]
    fn score_examples() {
        let c = corpus("the bluetooth works");
        let v = vocab(&["the", "works", "blue", "##tooth"]);
        assert_eq!(fragment_score(&v, &c).unwrap(), 4.0 / 3.0);
        let whole = vocab(&["the", "works", "bluetooth"]);
        assert_eq!(fragment_score(&whole, &c).unwrap(), 1.0);
        let empty = vocab(&[]);
        assert_eq!(fragment_score(&empty, &c).unwrap(), 1.0);
    }

    #[test]
    fn guard_never_entered() {
        let c = corpus("the bluetooth works");
        let vp = vocab(&["the", "works", "blue", "##tooth"]);
        let dv = domain(&["bluetooth"]);
        let cfg = AdaptConfig {
            alpha: 0,
            beta: 1,
            gamma: 3.0,
            ..Default::default()
        };
        let (va, report) = adapt_vocabulary(&vp, &dv, &c, &cfg).unwrap();
        assert_eq!(va.len(), vp.len());
        assert_eq!(report.n_added, 0);
        assert_eq!(report.iterations, 0);
        assert_eq!(report.terminated_by, Termination::Threshold);
        assert_eq!(report.score_trace[0].fragment_score, 4.0 / 3.0);
    }

    #[test]
    fn unreachable_gamma_exhausts() {
        // no domain token covers "ab", so the score never reaches 1.0
        let c = corpus("ab ab xy");
        let vp = vocab(&["a", "##b", "x", "##y"]);
        let dv = domain(&["xy", "yx", "ba"]);
        let cfg = AdaptConfig {
            alpha: 1,
            beta: 1,
            gamma: 1.0,
            ..Default::default()
        };
        let (_, report) = adapt_vocabulary(&vp, &dv, &c, &cfg).unwrap();
        assert_eq!(report.terminated_by, Termination::Exhausted);
        assert_eq!(report.n_added, 3);
        assert_eq!(report.iterations, 2);
        let scores: Vec<f64> = report
            .score_trace
            .iter()
            .map(|p| p.fragment_score)
            .collect();
        assert_eq!(scores, [5.0 / 3.0; 3]);
    }

    #[test]
    fn alpha_larger_than_domain() {
        let c = corpus("ab");
        let vp = vocab(&["a", "##b"]);
        let dv = domain(&["ab"]);
        let (va, report) = adapt_vocabulary(&vp, &dv, &c, &AdaptConfig::default()).unwrap();
        assert_eq!(report.n_added, 1);
        assert_eq!(report.terminated_by, Termination::Threshold);
        assert_eq!(va.tokenize_word("ab").pieces, ["ab"]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = corpus("ab");
        let vp = vocab(&["a", "##b"]);
        let dv = domain(&["ab"]);
        let bad = AdaptConfig {
            gamma: 0.5,
            ..Default::default()
        };
        assert!(matches!(
            adapt_vocabulary(&vp, &dv, &c, &bad),
            Err(Error::InvalidConfig(_))
        ));
        let bad = AdaptConfig {
            beta: 0,
            ..Default::default()
        };
        assert!(adapt_vocabulary(&vp, &dv, &c, &bad).is_err());
        let not_pretrained = vp.clone().with_label(VocabLabel::Adapted);
        assert!(matches!(
            adapt_vocabulary(&not_pretrained, &dv, &c, &AdaptConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn fixed_override() {
        let c = corpus("ab cd");
        let vp = vocab(&["a", "##b", "c", "##d"]);
        let dv = domain(&["ab", "cd"]);
        let (va, report) = adapt_fixed(&vp, &dv, &c, 1).unwrap();
        assert_eq!(report.n_added, 1);
        assert_eq!(report.terminated_by, Termination::Fixed);
        assert_eq!(va.len(), vp.len() + 1);
        assert_eq!(report.score_trace[0].fragment_score, 1.5);
        assert!(matches!(
            adapt_fixed(&vp, &dv, &c, 3),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn diff_rows() {
        let c = corpus("bluetooth bluetooth the works headset");
        let vp = vocab(&["the", "works", "blue", "##tooth", "heads", "##et"]);
        let va = merge_vocabs(&vp, &["bluetooth".into(), "headset".into()]);
        let rows = tokenization_diff(&vp, &va, &c, None);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].to_tsv(), "bluetooth\tblue ##tooth\tbluetooth");
        assert_eq!(rows[1].word, "headset");
        assert_eq!(tokenization_diff(&vp, &va, &c, Some(1)).len(), 1);
        assert!(tokenization_diff(&vp, &vp, &c, None).is_empty());
    }

    proptest! {
        #[test]
        fn cache_matches_full_recompute(
            base in proptest::collection::btree_set("(##)?[abc]{1,3}", 0..12),
            additions in proptest::collection::vec("(##)?[abc]{2,5}", 0..30),
            words in proptest::collection::vec("[abc]{1,9}", 1..40),
            batch in 1usize..7,
        ) {
            let mut tokens = vec!["[UNK]".to_owned()];
            tokens.extend(base);
            let mut v = Vocabulary::new(tokens, VocabLabel::Pretrained).unwrap();
            let c = PreTokenizedCorpus::from_sentences(vec![words]).unwrap();
            let mut cache = ScoreCache::new(&v, &c).unwrap();
            for chunk in additions.chunks(batch) {
                let before = v.len();
                v.extend(chunk);
                let fresh = v.tokens()[before..].to_vec();
                cache.update(&v, &fresh);
                let full = tokenize_corpus(&v, &c).unwrap();
                prop_assert_eq!(cache.total_subwords, full.total_subwords);
                prop_assert_eq!(cache.score(), full.fragment_score());
            }
        }

        #[test]
        fn loop_postconditions(
            additions in proptest::collection::btree_set("[abc]{2,4}", 0..25),
            words in proptest::collection::vec("[abc]{1,6}", 1..30),
            alpha in 0usize..6,
            beta in 1usize..4,
            gamma in 1.0f64..2.5,
        ) {
            let vp = vocab(&["a", "b", "c", "##a", "##b", "##c"]);
            let merged: Vec<&str> = additions.iter().map(String::as_str).collect();
            let dv = domain(&merged);
            let c = PreTokenizedCorpus::from_sentences(vec![words]).unwrap();
            let cfg = AdaptConfig { alpha, beta, gamma, ..Default::default() };
            let (va, report) = adapt_vocabulary(&vp, &dv, &c, &cfg).unwrap();
            let available = dv.merged_tokens().len();
            let last = report.score_trace.last().unwrap();
            prop_assert_eq!(report.n_added, last.tokens_added);
            prop_assert_eq!(report.score_trace.len(), report.iterations + 1);
            prop_assert!(
                report.n_added == available
                    || (report.n_added >= alpha && (report.n_added - alpha) % beta == 0)
            );
            match report.terminated_by {
                Termination::Threshold => prop_assert!(last.fragment_score <= gamma),
                Termination::Exhausted => prop_assert_eq!(report.n_added, available),
                Termination::Fixed => prop_assert!(false),
            }
            prop_assert_eq!(last.fragment_score, fragment_score(&va, &c).unwrap());
            for p in &report.score_trace {
                prop_assert!(p.fragment_score >= 1.0);
            }
        }
    }
}
