//! Embedding tables and initialization of added-token vectors.
//!
//! Text format (word2vec style): a `count dim` header, then one
//! `token v1 .. vdim` line per token. Values are written with Rust's
//! shortest round-trip float formatting, so save/load is lossless.

use std::io::{BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tokenizer::{VocabLabel, Vocabulary};

pub const DEFAULT_TEST_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: IndexMap<String, Vec<f64>>,
    pub vocab_label: Option<VocabLabel>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: IndexMap::new(),
            vocab_label: None,
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    /// Uniform(-1, 1) vectors for every token of `vocab`, from a seeded generator.
    pub fn random(vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = EmbeddingTable::new(dim);
        for token in vocab.tokens() {
            let v = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            table.vectors.insert(token.clone(), v);
        }
        table.vocab_label = Some(vocab.label());
        table
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.vectors.get_index_of(token)
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.vectors[index]
    }

    pub fn row_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.vectors[index]
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// True when the table holds a vector for every token of `vocab`.
    pub fn covers(&self, vocab: &Vocabulary) -> bool {
        vocab.tokens().iter().all(|t| self.vectors.contains_key(t))
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => Error::Encoding {
            path: path.to_path_buf(),
            offset: 0,
        },
        _ => Error::io(path, e),
    })?;
    let at = |line: usize| format!("{}:{}", path.display(), line);

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(at(1), "missing `count dim` header"))?;
    let mut fields = header.split_whitespace();
    let (count, dim) = match (fields.next(), fields.next(), fields.next()) {
        (Some(c), Some(d), None) => (
            c.parse::<usize>()
                .map_err(|e| Error::format(at(1), format!("bad count: {e}")))?,
            d.parse::<usize>()
                .map_err(|e| Error::format(at(1), format!("bad dim: {e}")))?,
        ),
        _ => return Err(Error::format(at(1), "expected `count dim` header")),
    };

    let mut table = EmbeddingTable::new(dim);
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-empty line has a field");
        let vector = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::format(at(idx + 1), format!("bad value {f:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: vector.len(),
            });
        }
        if table.vectors.insert(token.to_owned(), vector).is_some() {
            return Err(Error::format(
                at(idx + 1),
                format!("duplicate token {token:?}"),
            ));
        }
    }
    if table.len() != count {
        return Err(Error::format(
            at(1),
            format!("header declares {count} vectors, body has {}", table.len()),
        ));
    }
    Ok(table)
}

pub fn save_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{} {}", table.len(), table.dim).map_err(io)?;
    for (token, vector) in &table.vectors {
        write!(out, "{token}").map_err(io)?;
        for x in vector {
            write!(out, " {x:?}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Extends `base` (covering `pretrained`) to cover `adapted`.
///
/// Pretrained tokens keep their vectors. Each added token gets the mean of
/// the vectors of the pieces its body tokenizes into under `pretrained`; a
/// `##`-prefixed addition is tokenized in continuation position.
pub fn init_added_embeddings(
    base: &EmbeddingTable,
    adapted: &Vocabulary,
    pretrained: &Vocabulary,
) -> Result<EmbeddingTable> {
    if adapted.len() < pretrained.len()
        || adapted.tokens()[..pretrained.len()] != *pretrained.tokens()
    {
        return Err(Error::InvalidInput(
            "adapted vocabulary does not extend the pretrained vocabulary".into(),
        ));
    }
    let dim = base.dim;
    let mut out = EmbeddingTable::new(dim);
    out.vocab_label = Some(adapted.label());
    for token in pretrained.tokens() {
        let v = base
            .get(token)
            .ok_or_else(|| Error::MissingBaseVector(token.clone()))?;
        out.vectors.insert(token.clone(), v.to_vec());
    }
    for token in &adapted.tokens()[pretrained.len()..] {
        let (body, continuation) = adapted.piece_body(token);
        let pieces = pretrained.tokenize_at(body, continuation).pieces;
        let vector = |piece: &String| {
            base.get(piece)
                .ok_or_else(|| Error::MissingBaseVector(piece.clone()))
        };
        let mut mean = vector(&pieces[0])?.to_vec();
        for piece in &pieces[1..] {
            for (m, x) in mean.iter_mut().zip(vector(piece)?) {
                *m += x;
            }
        }
        if pieces.len() > 1 {
            let n = pieces.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
        }
        out.vectors.insert(token.clone(), mean);
    }
    Ok(out)
}
