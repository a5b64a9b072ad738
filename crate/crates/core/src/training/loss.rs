use ndarray::ArrayView1;

use crate::error::{Error, Result};

/// Softmax cross-entropy of one logit row against a target index.
pub fn cross_entropy(logits: ArrayView1<f64>, target: usize) -> f64 {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// `CE_A + weight_b · CE_B` over whichever targets are present.
pub fn joint_loss(
    a: Option<(ArrayView1<f64>, usize)>,
    b: Option<(ArrayView1<f64>, usize)>,
    weight_b: f64,
) -> Result<f64> {
    if a.is_none() && b.is_none() {
        return Err(Error::Data("no training signal".into()));
    }
    let la = a.map_or(0.0, |(l, t)| cross_entropy(l, t));
    let lb = b.map_or(0.0, |(l, t)| cross_entropy(l, t));
    Ok(la + weight_b * lb)
}
