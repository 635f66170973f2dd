//! Count-based Shannon quantities, in nats.

use std::collections::HashMap;

/// Entropy of a distribution given by non-negative weights (normalized here).
pub fn entropy(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in entropy of a sample of symbols.
pub fn empirical_entropy(xs: &[usize]) -> f64 {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for &x in xs {
        *counts.entry(x).or_default() += 1.0;
    }
    entropy(&counts.into_values().collect::<Vec<_>>())
}

/// Plug-in mutual information of two paired symbol sequences.
pub fn empirical_mutual_information(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "paired sequences differ in length");
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
    }
    let h_joint = entropy(&joint.into_values().collect::<Vec<_>>());
    (empirical_entropy(a) + empirical_entropy(b) - h_joint).max(0.0)
}
