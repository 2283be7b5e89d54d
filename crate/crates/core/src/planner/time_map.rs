//! Piece durations as a softmax of free logits, so the total stays fixed.
//!
//! `M` pieces use `M - 1` logits; the last piece carries an implicit zero.

/// Durations `T_i = total · e^{ι_i} / (1 + Σ_j e^{ι_j})`, last piece `e^0`.
pub fn durations(logits: &[f64], total: f64) -> Vec<f64> {
    let top = logits.iter().copied().fold(0.0_f64, f64::max);
    let mut e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    e.push((-top).exp());
    let sum: f64 = e.iter().sum();
    let mut t: Vec<f64> = e.iter().map(|x| total * x / sum).collect();
    // absorb rounding so the pieces add up to the total
    let drift = total - t.iter().sum::<f64>();
    let big = (0..t.len())
        .max_by(|&a, &b| t[a].total_cmp(&t[b]))
        .unwrap_or(0);
    t[big] += drift;
    t
}

/// Pulls `∂J/∂T` back to the logits given the durations from [`durations`].
pub fn logits_gradient(times: &[f64], total: f64, grad_t: &[f64]) -> Vec<f64> {
    let mean: f64 = times.iter().zip(grad_t).map(|(t, g)| t * g).sum::<f64>() / total;
    times[..times.len() - 1]
        .iter()
        .zip(grad_t)
        .map(|(t, g)| t * (g - mean))
        .collect()
}

/// Logits reproducing the given positive durations.
pub fn logits_for(times: &[f64]) -> Vec<f64> {
    let last = *times.last().expect("at least one piece");
    times[..times.len() - 1]
        .iter()
        .map(|t| (t / last).ln())
        .collect()
}
