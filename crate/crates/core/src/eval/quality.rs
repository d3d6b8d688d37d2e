//! Token-level greedy-matching F1 between a candidate and a reference text.

use std::collections::HashMap;

use crate::semantic::{alnum_tokens, cosine, EmbeddingProvider, SemanticError};

/// F1 of greedy max-cosine matching over a similarity matrix whose rows are
/// candidate tokens and columns are reference tokens. Negative entries count
/// as zero.
pub fn greedy_f1(sim: &[Vec<f64>]) -> f64 {
    let rows = sim.len();
    let cols = sim.first().map_or(0, Vec::len);
    match (rows, cols) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let precision = sim
        .iter()
        .map(|row| row.iter().copied().map(clamp).fold(0.0, f64::max))
        .sum::<f64>()
        / rows as f64;
    let recall = (0..cols)
        .map(|j| sim.iter().map(|row| clamp(row[j])).fold(0.0, f64::max))
        .sum::<f64>()
        / cols as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Quality retention of `candidate` against `reference`, in [0, 1].
/// Token lists that are identical score exactly 1.
pub fn quality_score(
    candidate: &str,
    reference: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<f64, SemanticError> {
    let cand = alnum_tokens(candidate);
    let refr = alnum_tokens(reference);
    if cand == refr {
        return Ok(1.0);
    }
    if cand.is_empty() || refr.is_empty() {
        return Ok(0.0);
    }

    let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
    for t in cand.iter().chain(refr.iter()) {
        if !cache.contains_key(t.as_str()) {
            cache.insert(t, provider.embed(t)?.values);
        }
    }
    let mut sim = Vec::with_capacity(cand.len());
    for c in &cand {
        let mut row = Vec::with_capacity(refr.len());
        for r in &refr {
            let s = if c == r { 1.0 } else { cosine(&cache[c.as_str()], &cache[r.as_str()])? };
            row.push(s);
        }
        sim.push(row);
    }
    Ok(greedy_f1(&sim).clamp(0.0, 1.0))
}
