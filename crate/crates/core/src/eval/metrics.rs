//! Routing accuracy, per-class precision/recall/F1 and the confusion matrix.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Complexity, ModelTier};

/// `counts[label][predicted]`, both indexed by `Complexity::index()`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        Self { counts }
    }

    pub fn record(&mut self, label: Complexity, routed: ModelTier) {
        self.counts[label.index()][routed.complexity().index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingMetrics {
    pub accuracy: f64,
    pub per_class: BTreeMap<Complexity, ClassMetrics>,
    pub weighted_f1: f64,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics_from_confusion(m: &ConfusionMatrix) -> RoutingMetrics {
    let total = m.total();
    let mut per_class = BTreeMap::new();
    let mut weighted = 0.0;
    for c in Complexity::ALL {
        let i = c.index();
        let tp = m.counts[i][i];
        let predicted: u64 = (0..3).map(|r| m.counts[r][i]).sum();
        let support: u64 = m.counts[i].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        weighted += support as f64 * f1;
        per_class.insert(
            c,
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            },
        );
    }
    RoutingMetrics {
        accuracy: ratio(m.trace(), total),
        per_class,
        weighted_f1: if total == 0 { 0.0 } else { weighted / total as f64 },
        confusion: *m,
    }
}

/// Metrics over `(label, routed tier)` pairs.
pub fn routing_metrics<I>(pairs: I) -> RoutingMetrics
where
    I: IntoIterator<Item = (Complexity, ModelTier)>,
{
    let mut m = ConfusionMatrix::default();
    for (label, tier) in pairs {
        m.record(label, tier);
    }
    metrics_from_confusion(&m)
}
