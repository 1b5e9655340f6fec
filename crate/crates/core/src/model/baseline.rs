use std::collections::BTreeMap;

use super::GraphSample;

/// Link predictor from category co-occurrence counts: a pair is linked when
/// more than half of its training occurrences were linked. Pairs never seen
/// in training are predicted unlinked.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StatisticalBaseline {
    /// `(target category, node category) → (linked, total)`.
    counts: BTreeMap<(String, String), (u64, u64)>,
}

impl StatisticalBaseline {
    pub fn fit(samples: &[GraphSample]) -> Self {
        let mut counts: BTreeMap<(String, String), (u64, u64)> = BTreeMap::new();
        for s in samples {
            for (cat, &y) in s.node_categories.iter().zip(&s.labels) {
                let e = counts.entry((s.target_category.clone(), cat.clone())).or_default();
                e.0 += (y > 0.5) as u64;
                e.1 += 1;
            }
        }
        Self { counts }
    }

    /// Empirical link frequency, if the pair was observed.
    pub fn frequency(&self, target: &str, node: &str) -> Option<f64> {
        self.counts
            .get(&(target.to_string(), node.to_string()))
            .map(|&(l, t)| l as f64 / t as f64)
    }

    pub fn observations(&self, target: &str, node: &str) -> u64 {
        self.counts.get(&(target.to_string(), node.to_string())).map_or(0, |c| c.1)
    }

    pub fn predicts_link(&self, target: &str, node: &str) -> bool {
        self.frequency(target, node).is_some_and(|f| f > 0.5)
    }

    /// 0/1 prediction per node of the sample.
    pub fn predict(&self, sample: &GraphSample) -> Vec<f64> {
        sample
            .node_categories
            .iter()
            .map(|c| self.predicts_link(&sample.target_category, c) as u8 as f64)
            .collect()
    }

    /// `((target, node), frequency, observations)` for every observed pair.
    pub fn table(&self) -> impl Iterator<Item = (&(String, String), f64, u64)> {
        self.counts.iter().map(|(k, &(l, t))| (k, l as f64 / t as f64, t))
    }
}
