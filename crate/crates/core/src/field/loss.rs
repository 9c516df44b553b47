/// Predictions are clipped to `[BCE_CLIP, 1 − BCE_CLIP]` before taking logs.
pub const BCE_CLIP: f64 = 1e-7;

/// Mean binary cross-entropy of clipped predictions.
pub fn bce_loss(pred: &[f64], labels: &[u8]) -> f64 {
    debug_assert_eq!(pred.len(), labels.len());
    let sum: f64 = pred
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
            if y != 0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    sum / pred.len().max(1) as f64
}

/// Derivative of one clipped BCE term with respect to the logit. Inside the clip
/// range the logistic and log terms cancel to `p − y`; outside it the clipped loss
/// is constant.
pub(crate) fn dloss_dlogit(p: f64, y: u8) -> f64 {
    if !(BCE_CLIP..=1.0 - BCE_CLIP).contains(&p) {
        0.0
    } else {
        p - f64::from(y.min(1))
    }
}
