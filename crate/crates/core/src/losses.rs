//! The four losses of the pipeline: reconstruction cross-entropy,
//! cosine-similarity squared error, classification cross-entropy, and the
//! joint sum of the first two.
//!
//! These are the reference (numeric) implementations used for evaluation
//! and testing; the training path computes the same quantities inside the
//! autodiff graph, and unit tests pin both routes together.

use crate::{Error, Result};

const PROB_EPS: f64 = 1e-12;

/// A batch-averaged loss value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub batch_size: usize,
}

/// Cosine similarity; errors on a zero vector.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Domain(format!(
            "vector length mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain("cosine of a zero vector".into()));
    }
    Ok(dot / (nu * nv))
}

/// Reconstruction loss: mean token-level cross-entropy of the original
/// sequence under the decoder's per-position logits.
pub fn dae_loss(logits: &[Vec<f64>], targets: &[usize]) -> Result<LossValue> {
    if logits.len() != targets.len() {
        return Err(Error::Domain(format!(
            "{} logit positions vs {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::Domain("empty sequence".into()));
    }
    let mut total = 0.0;
    for (row, &t) in logits.iter().zip(targets.iter()) {
        if t >= row.len() {
            return Err(Error::Domain(format!(
                "target id {t} outside vocab of {}",
                row.len()
            )));
        }
        total += log_sum_exp(row) - row[t];
    }
    Ok(LossValue {
        value: total / logits.len() as f64,
        batch_size: logits.len(),
    })
}

/// Squared error between the similarity label and the cosine of the pair.
pub fn cl_loss(u: &[f64], v: &[f64], label: f64) -> Result<LossValue> {
    let cos = cosine(u, v)?;
    Ok(LossValue {
        value: (label - cos) * (label - cos),
        batch_size: 1,
    })
}

/// Batch mean of [`cl_loss`] over (u, v, label) triples.
pub fn cl_loss_batch(pairs: &[(Vec<f64>, Vec<f64>, f64)]) -> Result<LossValue> {
    if pairs.is_empty() {
        return Err(Error::Domain("empty pair batch".into()));
    }
    let mut total = 0.0;
    for (u, v, label) in pairs {
        total += cl_loss(u, v, *label)?.value;
    }
    Ok(LossValue {
        value: total / pairs.len() as f64,
        batch_size: pairs.len(),
    })
}

/// Classification cross-entropy of a probability vector against a target
/// class: `-log p_target`, clamped at 1e-12.
pub fn ce_loss(probs: &[f64], target: usize) -> Result<LossValue> {
    validate_distribution(probs)?;
    if target >= probs.len() {
        return Err(Error::Domain(format!(
            "target {target} outside {} classes",
            probs.len()
        )));
    }
    let p = probs[target];
    let p = if p < PROB_EPS {
        eprintln!("warning: clamping zero probability for target class {target}");
        PROB_EPS
    } else {
        p
    };
    Ok(LossValue { value: -p.ln(), batch_size: 1 })
}

/// One-hot form `-sum_k y_k log p_k`; terms with `y_k == 0` contribute
/// nothing even when `p_k` is zero.
pub fn ce_loss_one_hot(probs: &[f64], y: &[f64]) -> Result<LossValue> {
    validate_distribution(probs)?;
    if probs.len() != y.len() {
        return Err(Error::Domain(format!(
            "{} probabilities vs {} targets",
            probs.len(),
            y.len()
        )));
    }
    let mut total = 0.0;
    for (&p, &yk) in probs.iter().zip(y.iter()) {
        if yk == 0.0 {
            continue;
        }
        let p = if p < PROB_EPS {
            eprintln!("warning: clamping zero probability in one-hot cross-entropy");
            PROB_EPS
        } else {
            p
        };
        total -= yk * p.ln();
    }
    Ok(LossValue { value: total, batch_size: 1 })
}

/// Batch mean of [`ce_loss`] over (probs, target) rows.
pub fn ce_loss_batch(rows: &[(Vec<f64>, usize)]) -> Result<LossValue> {
    if rows.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let mut total = 0.0;
    for (probs, target) in rows {
        total += ce_loss(probs, *target)?.value;
    }
    Ok(LossValue {
        value: total / rows.len() as f64,
        batch_size: rows.len(),
    })
}

/// Unweighted sum of the reconstruction and contrastive parts.
pub fn joint_loss(dae: &LossValue, cl: &LossValue) -> LossValue {
    LossValue {
        value: dae.value + cl.value,
        batch_size: dae.batch_size.max(cl.batch_size),
    }
}

fn validate_distribution(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Domain("empty probability vector".into()));
    }
    if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::Domain("probabilities must be finite and non-negative".into()));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-4 {
        return Err(Error::Domain(format!(
            "probabilities sum to {sum}, not a distribution"
        )));
    }
    Ok(())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}
