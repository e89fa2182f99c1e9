//! Central finite-difference check of [`forward_backward`] gradients.
//!
//! Numerical partials are taken from [`loss_only`], which never touches the
//! gradient code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    forward_backward, loss_only, DualBatch, DualItem, EncoderStandIn, LossConfig, LossForm,
};
use crate::error::Result;
use crate::tokenizer::{VocabLabel, Vocabulary};

pub const GRAD_CHECK_EPS: f64 = 1e-5;
pub const GRAD_CHECK_THRESHOLD: f64 = 1e-4;
/// Denominator floor for the relative error, so that partials which are
/// zero in both computations do not divide by zero.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Largest relative error between analytic and central-difference partials
/// over every embedding entry and, when trained, every classifier weight.
pub fn check_instance(
    batch: &DualBatch,
    enc: &EncoderStandIn,
    cfg: &LossConfig,
    eps: f64,
) -> Result<f64> {
    let analytic = forward_backward(batch, enc, cfg)?.grads;
    let mut probe = enc.clone();
    let mut worst: f64 = 0.0;

    for row in 0..enc.embeddings.len() {
        for k in 0..enc.embeddings.dim() {
            let x = enc.embeddings.row(row)[k];
            probe.embeddings.row_mut(row)[k] = x + eps;
            let plus = loss_only(batch, &probe, cfg)?;
            probe.embeddings.row_mut(row)[k] = x - eps;
            let minus = loss_only(batch, &probe, cfg)?;
            probe.embeddings.row_mut(row)[k] = x;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.embeddings[row][k], numeric));
        }
    }

    if let (Some(w), Some(gw)) = (&enc.classifier, &analytic.classifier) {
        for k in 0..w.len() {
            for c in 0..w[k].len() {
                let x = w[k][c];
                let set = |probe: &mut EncoderStandIn, v: f64| {
                    probe.classifier.as_mut().expect("classifier present")[k][c] = v;
                };
                set(&mut probe, x + eps);
                let plus = loss_only(batch, &probe, cfg)?;
                set(&mut probe, x - eps);
                let minus = loss_only(batch, &probe, cfg)?;
                set(&mut probe, x);
                let numeric = (plus - minus) / (2.0 * eps);
                worst = worst.max(relative_error(gw[k][c], numeric));
            }
        }
    }
    Ok(worst)
}

/// A random problem with `B <= 8`, `dim <= 16` and `C <= 5`.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    form: LossForm,
    lambda: f64,
) -> (DualBatch, EncoderStandIn, LossConfig) {
    let b = rng.gen_range(1..=8);
    let dim = rng.gen_range(2..=16);
    let classes = rng.gen_range(2..=5);
    let n_tokens = rng.gen_range(2..=12);

    let mut tokens = vec!["[UNK]".to_owned()];
    tokens.extend((0..n_tokens).map(|i| format!("t{i}")));
    let vocab = Vocabulary::new(tokens.clone(), VocabLabel::Adapted).expect("distinct tokens");

    let pieces = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let len = rng.gen_range(1..=4);
        (0..len)
            .map(|_| tokens[rng.gen_range(0..tokens.len())].clone())
            .collect()
    };
    let items = (0..b)
        .map(|_| DualItem {
            pieces_pretrained: pieces(rng),
            pieces_adapted: pieces(rng),
            label: rng.gen_range(0..classes),
        })
        .collect();
    let batch = DualBatch::new(items).expect("non-empty batch");
    let enc = EncoderStandIn::random(&vocab, dim, classes, rng.gen());
    let cfg = LossConfig {
        tau: rng.gen_range(0.5..3.5),
        lambda,
        form,
        ..LossConfig::default()
    };
    (batch, enc, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub instances: usize,
    pub eps: f64,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Checks `instances` seeded random problems, cycling through both loss
/// forms and `lambda` in {0, 1}.
pub fn run_grad_check(instances: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let form = if i % 2 == 0 {
            LossForm::PerSample
        } else {
            LossForm::LogOfSum
        };
        let lambda = if (i / 2) % 2 == 0 { 1.0 } else { 0.0 };
        let (batch, enc, cfg) = random_instance(&mut rng, form, lambda);
        worst = worst.max(check_instance(&batch, &enc, &cfg, GRAD_CHECK_EPS)?);
    }
    Ok(GradCheckReport {
        instances,
        eps: GRAD_CHECK_EPS,
        max_rel_error: worst,
        threshold: GRAD_CHECK_THRESHOLD,
        pass: worst <= GRAD_CHECK_THRESHOLD,
    })
}
