//! One-layer encoder stand-in: embedding lookup, pooling, optional linear
//! classifier. Both tokenizations of a sentence go through the same tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{contrastive_reg_grad, cross_entropy_grad, total_loss, LossConfig};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    /// Representation of the first piece only, like a leading [CLS] position.
    First,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualItem {
    pub pieces_pretrained: Vec<String>,
    pub pieces_adapted: Vec<String>,
    pub label: usize,
}

/// Sentences tokenized with both vocabularies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualBatch {
    pub items: Vec<DualItem>,
}

impl DualBatch {
    pub fn new(items: Vec<DualItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::SizeMismatch(
                "batch must hold at least one item".into(),
            ));
        }
        if items
            .iter()
            .any(|it| it.pieces_pretrained.is_empty() || it.pieces_adapted.is_empty())
        {
            return Err(Error::InvalidInput("batch item without pieces".into()));
        }
        Ok(DualBatch { items })
    }

    /// Tokenizes each sentence (a list of words) under both vocabularies.
    pub fn from_sentences(
        sentences: &[Vec<String>],
        labels: &[usize],
        pretrained: &Vocabulary,
        adapted: &Vocabulary,
    ) -> Result<Self> {
        if sentences.len() != labels.len() {
            return Err(Error::SizeMismatch(format!(
                "{} sentences, {} labels",
                sentences.len(),
                labels.len()
            )));
        }
        let pieces = |vocab: &Vocabulary, words: &[String]| -> Vec<String> {
            words
                .iter()
                .flat_map(|w| vocab.tokenize_word(w).pieces)
                .collect()
        };
        let items = sentences
            .iter()
            .zip(labels)
            .map(|(words, &label)| DualItem {
                pieces_pretrained: pieces(pretrained, words),
                pieces_adapted: pieces(adapted, words),
                label,
            })
            .collect();
        DualBatch::new(items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStandIn {
    /// Covers the adapted vocabulary, and therefore the pretrained one too.
    pub embeddings: EmbeddingTable,
    /// `dim x classes` weights, row per embedding dimension.
    pub classifier: Option<Vec<Vec<f64>>>,
    pub pooling: Pooling,
}

impl EncoderStandIn {
    pub fn random(vocab: &Vocabulary, dim: usize, classes: usize, seed: u64) -> Self {
        let embeddings = EmbeddingTable::random(vocab, dim, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1a5);
        let classifier = (0..dim)
            .map(|_| (0..classes).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        EncoderStandIn {
            embeddings,
            classifier: Some(classifier),
            pooling: Pooling::Mean,
        }
    }

    pub fn classes(&self) -> Option<usize> {
        self.classifier
            .as_ref()
            .and_then(|w| w.first())
            .map(Vec::len)
    }

    fn rows(&self, pieces: &[String]) -> Result<Vec<usize>> {
        let rows: Vec<usize> = pieces
            .iter()
            .map(|p| {
                self.embeddings
                    .index_of(p)
                    .ok_or_else(|| Error::MissingBaseVector(p.clone()))
            })
            .collect::<Result<_>>()?;
        Ok(match self.pooling {
            Pooling::Mean => rows,
            Pooling::First => rows[..1].to_vec(),
        })
    }

    /// Pooled representation of a piece sequence.
    pub fn represent(&self, pieces: &[String]) -> Result<Vec<f64>> {
        Ok(self.pool(&self.rows(pieces)?))
    }

    fn pool(&self, rows: &[usize]) -> Vec<f64> {
        let mut h = vec![0.0; self.embeddings.dim()];
        for &r in rows {
            for (acc, x) in h.iter_mut().zip(self.embeddings.row(r)) {
                *acc += x;
            }
        }
        let n = rows.len() as f64;
        h.iter_mut().for_each(|x| *x /= n);
        h
    }

    fn logits(&self, w: &[Vec<f64>], h: &[f64]) -> Vec<f64> {
        let classes = w[0].len();
        (0..classes)
            .map(|c| h.iter().zip(w).map(|(x, row)| x * row[c]).sum())
            .collect()
    }
}

/// Gradients shaped like the parameters: one row per embedding-table entry
/// (in table order) and the classifier matrix when it is trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embeddings: Vec<Vec<f64>>,
    pub classifier: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub loss: f64,
    pub ce: f64,
    pub reg: f64,
    pub grads: Gradients,
}

struct Pooled {
    rows_a: Vec<Vec<usize>>,
    rows_p: Vec<Vec<usize>>,
    h_a: Vec<Vec<f64>>,
    h_p: Vec<Vec<f64>>,
}

fn pool_batch(batch: &DualBatch, enc: &EncoderStandIn) -> Result<Pooled> {
    let mut pooled = Pooled {
        rows_a: Vec::new(),
        rows_p: Vec::new(),
        h_a: Vec::new(),
        h_p: Vec::new(),
    };
    for item in &batch.items {
        let ra = enc.rows(&item.pieces_adapted)?;
        let rp = enc.rows(&item.pieces_pretrained)?;
        pooled.h_a.push(enc.pool(&ra));
        pooled.h_p.push(enc.pool(&rp));
        pooled.rows_a.push(ra);
        pooled.rows_p.push(rp);
    }
    Ok(pooled)
}

fn check_setup(batch: &DualBatch, enc: &EncoderStandIn, cfg: &LossConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.layer != 0 {
        return Err(Error::InvalidConfig(format!(
            "encoder stand-in has a single layer; layer {} requested",
            cfg.layer
        )));
    }
    if let Some(classes) = enc.classes() {
        if let Some(item) = batch.items.iter().find(|it| it.label >= classes) {
            return Err(Error::InvalidTarget {
                target: item.label,
                classes,
            });
        }
    }
    Ok(())
}

/// Total loss with analytic gradients for every embedding row and the
/// classifier. Without a classifier the cross-entropy term is zero.
pub fn forward_backward(
    batch: &DualBatch,
    enc: &EncoderStandIn,
    cfg: &LossConfig,
) -> Result<ForwardOutput> {
    check_setup(batch, enc, cfg)?;
    let pooled = pool_batch(batch, enc)?;
    let dim = enc.embeddings.dim();
    let b = batch.len();

    let mut d_h_a = vec![vec![0.0; dim]; b];
    let mut d_h_p = vec![vec![0.0; dim]; b];
    let mut d_w = None;

    let ce = match &enc.classifier {
        Some(w) => {
            let logits: Vec<Vec<f64>> = pooled.h_a.iter().map(|h| enc.logits(w, h)).collect();
            let targets: Vec<usize> = batch.items.iter().map(|it| it.label).collect();
            let (ce, d_logits) = cross_entropy_grad(&logits, &targets)?;
            let classes = w[0].len();
            let mut gw = vec![vec![0.0; classes]; dim];
            for i in 0..b {
                for k in 0..dim {
                    for c in 0..classes {
                        gw[k][c] += pooled.h_a[i][k] * d_logits[i][c];
                        d_h_a[i][k] += w[k][c] * d_logits[i][c];
                    }
                }
            }
            if !cfg.freeze_classifier {
                d_w = Some(gw);
            }
            ce
        }
        None => 0.0,
    };

    let reg = contrastive_reg_grad(&pooled.h_a, &pooled.h_p, cfg.tau, cfg.form)?;
    for i in 0..b {
        for k in 0..dim {
            d_h_a[i][k] += cfg.lambda * reg.d_adapted[i][k];
            if !cfg.stop_target {
                d_h_p[i][k] += cfg.lambda * reg.d_pretrained[i][k];
            }
        }
    }

    let mut d_emb = vec![vec![0.0; dim]; enc.embeddings.len()];
    let mut scatter = |rows: &[usize], d_h: &[f64]| {
        let n = rows.len() as f64;
        for &r in rows {
            for (g, d) in d_emb[r].iter_mut().zip(d_h) {
                *g += d / n;
            }
        }
    };
    for i in 0..b {
        scatter(&pooled.rows_a[i], &d_h_a[i]);
        scatter(&pooled.rows_p[i], &d_h_p[i]);
    }

    Ok(ForwardOutput {
        loss: total_loss(ce, reg.loss, cfg.lambda),
        ce,
        reg: reg.loss,
        grads: Gradients {
            embeddings: d_emb,
            classifier: d_w,
        },
    })
}

/// Total loss only, computed without any gradient bookkeeping.
pub fn loss_only(batch: &DualBatch, enc: &EncoderStandIn, cfg: &LossConfig) -> Result<f64> {
    check_setup(batch, enc, cfg)?;
    let pooled = pool_batch(batch, enc)?;
    let ce = match &enc.classifier {
        Some(w) => {
            let logits: Vec<Vec<f64>> = pooled.h_a.iter().map(|h| enc.logits(w, h)).collect();
            let targets: Vec<usize> = batch.items.iter().map(|it| it.label).collect();
            super::cross_entropy(&logits, &targets)?
        }
        None => 0.0,
    };
    let reg = super::contrastive_reg(&pooled.h_a, &pooled.h_p, cfg.tau, cfg.form)?;
    Ok(total_loss(ce, reg, cfg.lambda))
}
