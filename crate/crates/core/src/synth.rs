//! Clustered synthetic implicit-feedback data for tests and demos.
//!
//! Items are split into taste clusters with a Zipf-like popularity inside
//! each cluster. Every user belongs to one cluster and mostly picks items
//! from it, so a personalized model can beat popularity ranking.

use rand::Rng;

use crate::data::{Dataset, InteractionStore, LoadReport, TestInstance, TEST_NEGATIVES};
use crate::error::{Error, Result};
use crate::tensor::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    /// Inclusive range of training interactions per user.
    pub min_history: usize,
    pub max_history: usize,
    /// Probability that a pick comes from the user's own cluster.
    pub affinity: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 50,
            items: 200,
            clusters: 4,
            min_history: 12,
            max_history: 24,
            affinity: 0.9,
            seed: 7,
        }
    }
}

fn weighted_pick(weights: &[f64], pool: &[usize], rng: &mut SeededRng) -> usize {
    let total: f64 = pool.iter().map(|&j| weights[j]).sum();
    let mut x = rng.rng().gen::<f64>() * total;
    for &j in pool {
        x -= weights[j];
        if x <= 0.0 {
            return j;
        }
    }
    *pool.last().expect("non-empty pool")
}

/// Generates a dataset with one held-out test item and 99 negatives per user.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.clusters == 0 || cfg.items < cfg.max_history + 1 + TEST_NEGATIVES || cfg.min_history == 0 {
        return Err(Error::Config("synthetic config leaves too few items for the protocol".into()));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let cluster_of: Vec<usize> = (0..cfg.items).map(|j| j % cfg.clusters).collect();
    // rank inside the cluster drives popularity
    let weights: Vec<f64> = (0..cfg.items).map(|j| 1.0 / ((j / cfg.clusters) as f64 + 2.0)).collect();
    let members: Vec<Vec<usize>> = (0..cfg.clusters)
        .map(|c| (0..cfg.items).filter(|&j| cluster_of[j] == c).collect())
        .collect();
    let everything: Vec<usize> = (0..cfg.items).collect();

    let mut pairs = Vec::new();
    let mut test = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        let c = u % cfg.clusters;
        let n = cfg.min_history + rng.below(cfg.max_history - cfg.min_history + 1);
        let mut seen: Vec<usize> = Vec::with_capacity(n + 1);
        while seen.len() < n + 1 {
            let pool = if rng.rng().gen::<f64>() < cfg.affinity { &members[c] } else { &everything };
            let j = weighted_pick(&weights, pool, &mut rng);
            if !seen.contains(&j) {
                seen.push(j);
            }
        }
        let positive_item = seen.pop().expect("n + 1 items drawn");
        pairs.extend(seen.iter().map(|&j| (u, j)));
        let mut negative_items = Vec::with_capacity(TEST_NEGATIVES);
        while negative_items.len() < TEST_NEGATIVES {
            let j = rng.below(cfg.items);
            if j != positive_item && !seen.contains(&j) && !negative_items.contains(&j) {
                negative_items.push(j);
            }
        }
        test.push(TestInstance {
            user: u,
            positive_item,
            negative_items,
        });
    }
    let (store, _) = InteractionStore::from_pairs(cfg.users, cfg.items, pairs)?;
    Ok(Dataset {
        store,
        test,
        report: LoadReport::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_data_respects_protocol() {
        let ds = generate(&SynthConfig::default()).unwrap();
        ds.store.check_invariants().unwrap();
        assert_eq!(ds.test.len(), 50);
        for t in &ds.test {
            assert!(!ds.store.contains(t.user, t.positive_item));
            assert!(!t.negative_items.contains(&t.positive_item));
            assert!(t.negative_items.iter().all(|&j| !ds.store.contains(t.user, j)));
        }
        assert_eq!(generate(&SynthConfig::default()).unwrap().store, ds.store);
    }
}
