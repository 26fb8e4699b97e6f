//! Small numeric helpers shared across modules.

/// ln(2π)
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Numerically stable log(Σ exp(vᵢ)) via max subtraction.
///
/// Returns -∞ for an empty slice or when every entry is -∞.
pub fn logsumexp(vals: &[f64]) -> f64 {
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = vals.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// log(softmax(logits)) with the same max-subtraction trick.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|a| a - lse).collect()
}

/// softmax(logits), renormalized so the weights sum to exactly 1.0.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|a| (a - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for w in &mut out {
        *w /= sum;
    }
    out
}
