use std::collections::BTreeMap;

use super::SceneGraph;

/// Log empirical predicate distribution per (subject class, object class).
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyBias {
    pub num_rel_classes: usize,
    rows: BTreeMap<(usize, usize), Vec<f64>>,
}

impl FrequencyBias {
    pub fn empty(num_rel_classes: usize) -> Self {
        Self {
            num_rel_classes,
            rows: BTreeMap::new(),
        }
    }

    /// Row for a class pair; the zero vector for pairs never seen in training.
    pub fn row(&self, subject_class: usize, object_class: usize) -> Vec<f64> {
        self.rows
            .get(&(subject_class, object_class))
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.num_rel_classes])
    }

    pub fn seen_pairs(&self) -> usize {
        self.rows.len()
    }

    pub fn from_rows(num_rel_classes: usize, rows: BTreeMap<(usize, usize), Vec<f64>>) -> Self {
        Self { num_rel_classes, rows }
    }

    pub fn rows(&self) -> impl Iterator<Item = (&(usize, usize), &Vec<f64>)> {
        self.rows.iter()
    }
}

/// Laplace-smoothed (+1) log predicate frequencies from `train`.
pub fn build_frequency_bias(train: &[SceneGraph], num_rel_classes: usize) -> FrequencyBias {
    let mut counts: BTreeMap<(usize, usize), Vec<u64>> = BTreeMap::new();
    for g in train {
        for t in &g.triplets {
            let key = (g.nodes[t.subject].class_label, g.nodes[t.object].class_label);
            let row = counts.entry(key).or_insert_with(|| vec![0; num_rel_classes]);
            if let Some(c) = row.get_mut(t.predicate) {
                *c += 1;
            }
        }
    }
    let rows = counts
        .into_iter()
        .map(|(k, row)| {
            let total = row.iter().sum::<u64>() as f64 + num_rel_classes as f64;
            (k, row.iter().map(|&c| ((c as f64 + 1.0) / total).ln()).collect())
        })
        .collect();
    FrequencyBias { num_rel_classes, rows }
}
