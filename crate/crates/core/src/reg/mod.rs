//! Loss math for fine-tuning with dual tokenization.
//!
//! Every sentence in a batch is tokenized with the pretrained and the adapted
//! vocabulary. The contrastive term pulls the two pooled representations of
//! the same sentence together (cosine similarity, temperature `tau`) against
//! the other sentences in the batch; cross-entropy supervises the
//! adapted-side logits; the total is `ce + lambda * reg`.
//!
//! Two forms of the contrastive term are provided:
//!
//! * [`LossForm::PerSample`]: `-(1/B) sum_i log(r_i)`, the usual InfoNCE mean.
//! * [`LossForm::LogOfSum`]: `-(1/B) log(sum_i r_i)`, with the log outside the
//!   sum. It is zero for uniform similarities and can go negative.
//!
//! where `r_i = exp(s_ii / tau) / sum_j exp(s_ij / tau)` and `s_ij` is the
//! cosine similarity of adapted item `i` and pretrained item `j`.

mod encoder;
pub mod gradcheck;

pub use encoder::{
    forward_backward, loss_only, DualBatch, DualItem, EncoderStandIn, ForwardOutput, Gradients,
    Pooling,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 2.5;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_BATCH_SIZE: usize = 16;

const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossForm {
    PerSample,
    #[serde(rename = "literal")]
    LogOfSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda: f64,
    pub form: LossForm,
    /// Encoder layer whose output is regularized. The stand-in has one layer.
    pub layer: usize,
    /// Treat the pretrained-side representations as constants.
    pub stop_target: bool,
    pub freeze_classifier: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: DEFAULT_TAU,
            lambda: DEFAULT_LAMBDA,
            form: LossForm::PerSample,
            layer: 0,
            stop_target: false,
            freeze_classifier: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::SizeMismatch(format!(
            "vector lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Gradient of `cos(u, v)` with respect to `u`.
fn cosine_grad_u(u: &[f64], v: &[f64], cos: f64) -> Vec<f64> {
    let (nu, nv) = (norm(u), norm(v));
    u.iter()
        .zip(v)
        .map(|(a, b)| b / (nu * nv) - cos * a / (nu * nu))
        .collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn check_pair_sets(h_a: &[Vec<f64>], h_p: &[Vec<f64>]) -> Result<()> {
    if h_a.is_empty() || h_a.len() != h_p.len() {
        return Err(Error::SizeMismatch(format!(
            "need equal non-empty batches, got {} and {}",
            h_a.len(),
            h_p.len()
        )));
    }
    let dim = h_a[0].len();
    if let Some(bad) = h_a.iter().chain(h_p).find(|h| h.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    Ok(())
}

/// Contrastive loss and its gradients with respect to both representation sets.
#[derive(Debug, Clone, PartialEq)]
pub struct RegGrad {
    pub loss: f64,
    pub d_adapted: Vec<Vec<f64>>,
    pub d_pretrained: Vec<Vec<f64>>,
}

pub fn contrastive_reg(
    h_a: &[Vec<f64>],
    h_p: &[Vec<f64>],
    tau: f64,
    form: LossForm,
) -> Result<f64> {
    contrastive_reg_grad(h_a, h_p, tau, form).map(|g| g.loss)
}

pub fn contrastive_reg_grad(
    h_a: &[Vec<f64>],
    h_p: &[Vec<f64>],
    tau: f64,
    form: LossForm,
) -> Result<RegGrad> {
    check_pair_sets(h_a, h_p)?;
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidConfig(format!("tau must be > 0, got {tau}")));
    }
    let b = h_a.len();
    let bf = b as f64;

    let mut sims = vec![vec![0.0; b]; b];
    for i in 0..b {
        for j in 0..b {
            sims[i][j] = cosine_sim(&h_a[i], &h_p[j])?;
        }
    }

    // log r_i = z_ii - logsumexp_j z_ij, softmax rows p_ij
    let mut log_r = vec![0.0; b];
    let mut probs = vec![vec![0.0; b]; b];
    for i in 0..b {
        let z: Vec<f64> = sims[i].iter().map(|s| s / tau).collect();
        let lse = log_sum_exp(&z);
        log_r[i] = z[i] - lse;
        for j in 0..b {
            probs[i][j] = (z[j] - lse).exp();
        }
    }

    // dL/dz_ij = weight_i * (p_ij - delta_ij)
    let (loss, weights): (f64, Vec<f64>) = match form {
        LossForm::PerSample => (-log_r.iter().sum::<f64>() / bf, vec![1.0 / bf; b]),
        LossForm::LogOfSum => {
            let lse = log_sum_exp(&log_r);
            let w = log_r.iter().map(|lr| (lr - lse).exp() / bf).collect();
            (-lse / bf, w)
        }
    };

    let dim = h_a[0].len();
    let mut d_a = vec![vec![0.0; dim]; b];
    let mut d_p = vec![vec![0.0; dim]; b];
    for i in 0..b {
        for j in 0..b {
            let delta = if i == j { 1.0 } else { 0.0 };
            let ds = weights[i] * (probs[i][j] - delta) / tau;
            if ds == 0.0 {
                continue;
            }
            let ga = cosine_grad_u(&h_a[i], &h_p[j], sims[i][j]);
            let gp = cosine_grad_u(&h_p[j], &h_a[i], sims[i][j]);
            for k in 0..dim {
                d_a[i][k] += ds * ga[k];
                d_p[j][k] += ds * gp[k];
            }
        }
    }
    Ok(RegGrad {
        loss,
        d_adapted: d_a,
        d_pretrained: d_p,
    })
}

fn check_logits(logits: &[Vec<f64>], targets: &[usize]) -> Result<usize> {
    if logits.is_empty() || logits.len() != targets.len() {
        return Err(Error::SizeMismatch(format!(
            "{} logit rows for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let classes = logits[0].len();
    if classes < 2 {
        return Err(Error::SizeMismatch(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if let Some(row) = logits.iter().find(|r| r.len() != classes) {
        return Err(Error::DimMismatch {
            expected: classes,
            found: row.len(),
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::InvalidTarget { target: t, classes });
    }
    Ok(classes)
}

/// Mean negative log-softmax of the target class.
pub fn cross_entropy(logits: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    cross_entropy_grad(logits, targets).map(|(loss, _)| loss)
}

/// Cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy_grad(logits: &[Vec<f64>], targets: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    check_logits(logits, targets)?;
    let bf = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &t) in logits.iter().zip(targets) {
        let lse = log_sum_exp(row);
        loss += lse - row[t];
        let g = row
            .iter()
            .enumerate()
            .map(|(c, s)| ((s - lse).exp() - if c == t { 1.0 } else { 0.0 }) / bf)
            .collect();
        grad.push(g);
    }
    Ok((loss / bf, grad))
}

pub fn total_loss(ce: f64, reg: f64, lambda: f64) -> f64 {
    ce + lambda * reg
}
