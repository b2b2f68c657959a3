use crate::error::{ensure, Result};

/// Cross-entropy of `softmax(scores)` against target index 0, with the
/// max-subtracted log-sum-exp. Returns the loss and the softmax.
pub(crate) fn softmax_xent(scores: &[f64]) -> (f64, Vec<f64>) {
    let (argmax, &max) = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least one score");
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let rest: f64 = exps
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != argmax)
        .map(|(_, e)| e)
        .sum();
    // log Σ exp(s - max) = log(1 + rest), exact near saturation
    let loss = (max - scores[0]) + rest.ln_1p();
    let total = 1.0 + rest;
    (loss, exps.into_iter().map(|e| e / total).collect())
}

/// `-log(e^{s⁺} / (e^{s⁺} + Σ e^{s⁻}))` from precomputed scores.
pub fn loss_from_scores(positive: f64, negatives: &[f64]) -> Result<f64> {
    ensure!(
        !negatives.is_empty(),
        Validation,
        "loss needs at least one negative"
    );
    let mut scores = Vec::with_capacity(negatives.len() + 1);
    scores.push(positive);
    scores.extend_from_slice(negatives);
    Ok(softmax_xent(&scores).0)
}

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Contrastive loss of a rewritten query against one positive and its
/// negatives, scored by dot product.
pub fn loss<V: AsRef<[f32]>>(new_query: &[f32], positive: &[f32], negatives: &[V]) -> Result<f64> {
    ensure!(
        positive.len() == new_query.len()
            && negatives
                .iter()
                .all(|n| n.as_ref().len() == new_query.len()),
        Validation,
        "loss inputs differ in dimension"
    );
    let neg: Vec<f64> = negatives
        .iter()
        .map(|n| dot64(new_query, n.as_ref()))
        .collect();
    loss_from_scores(dot64(new_query, positive), &neg)
}
