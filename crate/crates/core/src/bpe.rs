//! Byte-pair-encoding trainer for the domain vocabulary.
//!
//! Words are split into codepoint symbols; the first symbol of a word is in
//! word-initial form and the rest carry the continuation prefix. A merge is
//! identified by the bodies of its two symbols and applies at every position,
//! so one merge can produce both `tok` and `##tok`. Only the positional forms
//! actually produced in the corpus enter the vocabulary.
//!
//! Pairs are weighted by word frequency. The most frequent pair wins; ties go
//! to the lexicographically smallest `(left, right)`. Training stops at the
//! target size or when no pair reaches the minimum frequency.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::corpus::PreTokenizedCorpus;
use crate::error::{Error, Result};
use crate::tokenizer::{VocabLabel, VocabOptions, Vocabulary};

pub const DEFAULT_DOMAIN_VOCAB_SIZE: usize = 10_000;
pub const DEFAULT_MIN_PAIR_FREQ: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpeConfig {
    /// Upper bound on the domain vocabulary size, special tokens included.
    pub target_size: usize,
    pub min_pair_freq: u64,
}

impl Default for BpeConfig {
    fn default() -> Self {
        BpeConfig {
            target_size: DEFAULT_DOMAIN_VOCAB_SIZE,
            min_pair_freq: DEFAULT_MIN_PAIR_FREQ,
        }
    }
}

/// Ordered merges. Pairs are stored as `(left, ##right)`: the left body in
/// word-initial form and the right body with the continuation prefix.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergeList {
    merges: Vec<(String, String)>,
    rank_of: HashMap<(String, String), usize>,
    prefix: String,
}

impl MergeList {
    fn new(prefix: &str) -> Self {
        MergeList {
            merges: Vec::new(),
            rank_of: HashMap::new(),
            prefix: prefix.to_owned(),
        }
    }

    fn push(&mut self, left: String, right: String) -> Result<()> {
        let key = (left, right);
        if self.rank_of.contains_key(&key) {
            return Err(Error::format(
                format!("merge {}", self.merges.len()),
                format!("duplicate pair {} {}", key.0, key.1),
            ));
        }
        self.rank_of.insert(key.clone(), self.merges.len());
        self.merges.push(key);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn rank(&self, left: &str, right: &str) -> Option<usize> {
        self.rank_of
            .get(&(left.to_owned(), right.to_owned()))
            .copied()
    }

    /// Bodies (prefix stripped) of the pair at `rank`.
    pub fn bodies(&self, rank: usize) -> (&str, &str) {
        let (l, r) = &self.merges[rank];
        (l.as_str(), &r[self.prefix.len()..])
    }

    /// Body of the token produced by the merge at `rank`.
    pub fn product(&self, rank: usize) -> String {
        let (l, r) = self.bodies(rank);
        format!("{l}{r}")
    }

    /// Segments `word` by replaying every merge in rank order.
    pub fn apply(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        for rank in 0..self.merges.len() {
            let (l, r) = self.bodies(rank);
            let mut i = 0;
            while i + 1 < symbols.len() {
                if symbols[i] == l && symbols[i + 1] == r {
                    let right = symbols.remove(i + 1);
                    symbols[i].push_str(&right);
                }
                i += 1;
            }
        }
        symbols
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                if i == 0 {
                    s
                } else {
                    format!("{}{s}", self.prefix)
                }
            })
            .collect()
    }
}

/// The trained domain vocabulary and its selection order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainVocab {
    pub vocab: Vocabulary,
    /// Alphabet tokens first, then merged tokens in the order they were formed.
    merge_order: Vec<String>,
    n_alphabet: usize,
}

impl DomainVocab {
    /// Rebuilds selection order from a saved domain vocabulary: the unknown
    /// token is skipped, single-codepoint tokens are alphabet, the rest are
    /// merged tokens in file order.
    pub fn from_vocab(vocab: Vocabulary) -> Self {
        let (mut alphabet, mut merged) = (Vec::new(), Vec::new());
        for token in vocab.tokens() {
            if token == vocab.unk_token() {
                continue;
            }
            if vocab.piece_body(token).0.chars().count() == 1 {
                alphabet.push(token.clone());
            } else {
                merged.push(token.clone());
            }
        }
        let n_alphabet = alphabet.len();
        alphabet.extend(merged);
        DomainVocab {
            vocab: vocab.with_label(VocabLabel::Domain),
            merge_order: alphabet,
            n_alphabet,
        }
    }

    pub fn merge_order(&self) -> &[String] {
        &self.merge_order
    }

    pub fn alphabet(&self) -> &[String] {
        &self.merge_order[..self.n_alphabet]
    }

    pub fn merged_tokens(&self) -> &[String] {
        &self.merge_order[self.n_alphabet..]
    }

    /// Checks that every merged token is the product of some merge.
    pub fn check_against(&self, merges: &MergeList) -> Result<()> {
        let products: HashSet<String> = (0..merges.len()).map(|r| merges.product(r)).collect();
        for token in self.merged_tokens() {
            let body = self.vocab.piece_body(token).0;
            if !products.contains(body) {
                return Err(Error::InvalidInput(format!(
                    "domain token {token:?} is not produced by any merge"
                )));
            }
        }
        Ok(())
    }
}

/// First `k` merged tokens in formation order.
pub fn ordered_subset(dv: &DomainVocab, k: usize) -> Result<Vec<String>> {
    let merged = dv.merged_tokens();
    if k > merged.len() {
        return Err(Error::OutOfRange {
            requested: k,
            available: merged.len(),
        });
    }
    Ok(merged[..k].to_vec())
}

/// Extra training outputs, used for verification and diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeTrace {
    /// Pair frequency of each merge at the time it was selected.
    pub frequencies: Vec<u64>,
    /// Final segmentation of every distinct corpus word.
    pub segmentation: BTreeMap<String, Vec<String>>,
}

pub fn train_bpe(corpus: &PreTokenizedCorpus, cfg: &BpeConfig) -> Result<(DomainVocab, MergeList)> {
    train_bpe_traced(corpus, cfg).map(|(dv, merges, _)| (dv, merges))
}

type SymbolId = u32;
type Pair = (SymbolId, SymbolId);

struct Interner {
    strings: Vec<Rc<str>>,
    ids: HashMap<Rc<str>, SymbolId>,
}

impl Interner {
    fn intern(&mut self, s: &str) -> SymbolId {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let rc: Rc<str> = Rc::from(s);
        let id = self.strings.len() as SymbolId;
        self.strings.push(rc.clone());
        self.ids.insert(rc, id);
        id
    }
}

struct Candidate {
    count: u64,
    left: Rc<str>,
    right: Rc<str>,
    pair: Pair,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // Max-heap: higher count first, then lexicographically smaller pair.
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

struct WordState {
    symbols: Vec<SymbolId>,
    freq: u64,
}

/// Positions where a left-to-right, non-overlapping merge of `pair` applies.
fn merge_positions(symbols: &[SymbolId], pair: Pair) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(i);
            i += 2;
        } else {
            i += 1;
        }
    }
    out
}

/// Trains and also returns per-merge frequencies and the final segmentation.
pub fn train_bpe_traced(
    corpus: &PreTokenizedCorpus,
    cfg: &BpeConfig,
) -> Result<(DomainVocab, MergeList, BpeTrace)> {
    let options = VocabOptions::default();
    let prefix = options.continuation_prefix.clone();
    let freq = corpus.word_freq();
    if freq.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut interner = Interner {
        strings: Vec::new(),
        ids: HashMap::new(),
    };
    let mut words: Vec<WordState> = Vec::with_capacity(freq.len());
    let mut alphabet: BTreeSet<String> = BTreeSet::new();
    let mut buf = [0u8; 4];
    for (word, &n) in freq {
        let mut symbols = Vec::new();
        for (i, c) in word.chars().enumerate() {
            let body = c.encode_utf8(&mut buf);
            symbols.push(interner.intern(body));
            alphabet.insert(if i == 0 {
                body.to_owned()
            } else {
                format!("{prefix}{body}")
            });
        }
        words.push(WordState { symbols, freq: n });
    }

    if cfg.target_size <= alphabet.len() {
        return Err(Error::TargetTooSmall {
            target: cfg.target_size,
            alphabet: alphabet.len(),
        });
    }

    let unk = options.unk_token.clone();
    let mut tokens: Vec<String> = Vec::new();
    tokens.push(unk);
    tokens.extend(alphabet.iter().cloned());
    let mut token_set: HashSet<String> = tokens.iter().cloned().collect();
    let n_alphabet = alphabet.len();

    let mut pair_counts: HashMap<Pair, u64> = HashMap::new();
    let mut pair_words: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (idx, w) in words.iter().enumerate() {
        for win in w.symbols.windows(2) {
            let pair = (win[0], win[1]);
            *pair_counts.entry(pair).or_insert(0) += w.freq;
            pair_words.entry(pair).or_default().insert(idx);
        }
    }

    let candidate = |interner: &Interner, pair: Pair, count: u64| Candidate {
        count,
        left: interner.strings[pair.0 as usize].clone(),
        right: interner.strings[pair.1 as usize].clone(),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .map(|(&pair, &count)| candidate(&interner, pair, count))
        .collect();

    let mut merges = MergeList::new(&prefix);
    let mut frequencies = Vec::new();

    while tokens.len() < cfg.target_size {
        let Some(top) = heap.pop() else { break };
        if pair_counts.get(&top.pair).copied().unwrap_or(0) != top.count {
            continue;
        }
        if top.count < cfg.min_pair_freq {
            break;
        }
        let pair = top.pair;
        let mut affected: Vec<usize> = pair_words
            .get(&pair)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        affected.sort_unstable();

        let mut plans: Vec<(usize, Vec<usize>)> = Vec::new();
        let (mut initial_form, mut continuation_form) = (false, false);
        for idx in affected {
            let positions = merge_positions(&words[idx].symbols, pair);
            if positions.is_empty() {
                continue;
            }
            initial_form |= positions[0] == 0;
            continuation_form |= positions.iter().any(|&p| p > 0);
            plans.push((idx, positions));
        }

        let body = format!("{}{}", top.left, top.right);
        let mut new_tokens = Vec::new();
        if initial_form && !token_set.contains(&body) {
            new_tokens.push(body.clone());
        }
        let cont = format!("{prefix}{body}");
        if continuation_form && !token_set.contains(&cont) {
            new_tokens.push(cont);
        }
        if tokens.len() + new_tokens.len() > cfg.target_size {
            break;
        }

        let merged_id = interner.intern(&body);
        let mut delta: HashMap<Pair, i64> = HashMap::new();
        for (idx, positions) in plans {
            let w = &mut words[idx];
            let weight = w.freq as i64;
            for win in w.symbols.windows(2) {
                *delta.entry((win[0], win[1])).or_insert(0) -= weight;
            }
            let mut next = Vec::with_capacity(w.symbols.len() - positions.len());
            let mut pos = positions.iter().peekable();
            let mut i = 0;
            while i < w.symbols.len() {
                if pos.peek() == Some(&&i) {
                    next.push(merged_id);
                    pos.next();
                    i += 2;
                } else {
                    next.push(w.symbols[i]);
                    i += 1;
                }
            }
            w.symbols = next;
            for win in w.symbols.windows(2) {
                let p = (win[0], win[1]);
                *delta.entry(p).or_insert(0) += weight;
                pair_words.entry(p).or_default().insert(idx);
            }
        }

        let mut changed: Vec<(Pair, i64)> = delta.into_iter().filter(|&(_, d)| d != 0).collect();
        changed.sort_unstable();
        for (p, d) in changed {
            let entry = pair_counts.entry(p).or_insert(0);
            *entry = (*entry as i64 + d) as u64;
            let count = *entry;
            if count == 0 {
                pair_counts.remove(&p);
                pair_words.remove(&p);
            } else {
                heap.push(candidate(&interner, p, count));
            }
        }

        merges.push(top.left.to_string(), format!("{prefix}{}", top.right))?;
        frequencies.push(top.count);
        for t in new_tokens {
            token_set.insert(t.clone());
            tokens.push(t);
        }
    }

    let segmentation = freq
        .keys()
        .zip(&words)
        .map(|(word, w)| {
            let pieces = w
                .symbols
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let body = &interner.strings[s as usize];
                    if i == 0 {
                        body.to_string()
                    } else {
                        format!("{prefix}{body}")
                    }
                })
                .collect();
            (word.clone(), pieces)
        })
        .collect();

    let merge_order = tokens[1..].to_vec();
    let vocab = Vocabulary::with_options(tokens, VocabLabel::Domain, options)?;
    let dv = DomainVocab {
        vocab,
        merge_order,
        n_alphabet,
    };
    Ok((
        dv,
        merges,
        BpeTrace {
            frequencies,
            segmentation,
        },
    ))
}

/// Writes one `left right` line per merge, in rank order.
pub fn save_merges(merges: &MergeList, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (l, r) in &merges.merges {
        writeln!(out, "{l} {r}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_merges(path: impl AsRef<Path>) -> Result<MergeList> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => Error::Encoding {
            path: path.to_path_buf(),
            offset: 0,
        },
        _ => Error::io(path, e),
    })?;
    let prefix = VocabOptions::default().continuation_prefix;
    let mut merges = MergeList::new(&prefix);
    for (idx, line) in text.lines().enumerate() {
        let location = format!("{}:{}", path.display(), idx + 1);
        let line = line.strip_suffix('\r').unwrap_or(line);
        let (l, r) = line
            .split_once(' ')
            .ok_or_else(|| Error::format(&location, "expected `left right`"))?;
        let valid_right = r.len() > prefix.len() && r.starts_with(prefix.as_str());
        if l.is_empty() || r.contains(' ') || !valid_right {
            return Err(Error::format(
                &location,
                format!("malformed merge {line:?}"),
            ));
        }
        merges
            .push(l.to_owned(), r.to_owned())
            .map_err(|_| Error::format(&location, format!("duplicate merge {line:?}")))?;
    }
    Ok(merges)
}
