//! Leave-one-out ranking evaluation with HR@k and NDCG@k.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionStore, TestInstance};
use crate::error::{Error, Result};
use crate::models::Model;

/// Ranked lists are truncated here unless stated otherwise.
pub const DEFAULT_K: usize = 10;

pub trait Scorer: Sync {
    fn score(&self, store: &InteractionStore, user: usize, item: usize) -> Result<f64>;
}

impl Scorer for Model {
    fn score(&self, store: &InteractionStore, user: usize, item: usize) -> Result<f64> {
        Model::score(self, store, user, item)
    }
}

impl<F> Scorer for F
where
    F: Fn(&InteractionStore, usize, usize) -> f64 + Sync,
{
    fn score(&self, store: &InteractionStore, user: usize, item: usize) -> Result<f64> {
        Ok(self(store, user, item))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    /// Candidates by descending score, ties by ascending item id.
    pub items: Vec<usize>,
    /// 1-based rank of the held-out item.
    pub position_of_positive: usize,
}

pub fn rank_candidates(scorer: &dyn Scorer, store: &InteractionStore, instance: &TestInstance) -> Result<RankedList> {
    let mut scored = instance
        .candidates()
        .map(|item| scorer.score(store, instance.user, item).map(|s| (item, s)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|(ia, sa), (ib, sb)| sb.total_cmp(sa).then_with(|| ia.cmp(ib)));
    let position_of_positive = scored
        .iter()
        .position(|&(item, _)| item == instance.positive_item)
        .expect("positive is a candidate")
        + 1;
    Ok(RankedList {
        items: scored.into_iter().map(|(item, _)| item).collect(),
        position_of_positive,
    })
}

pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    debug_assert!(rank >= 1);
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    debug_assert!(rank >= 1);
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    /// `hr[k-1]` is HR@k.
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users: usize,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

impl EvalReport {
    pub fn hr_at(&self, k: usize) -> f64 {
        self.hr[k - 1]
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg[k - 1]
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Monotone in k, bounded in [0,1], HR@k ≥ NDCG@k.
    pub fn check(&self) -> Result<()> {
        let ok_range = |x: f64| (0.0..=1.0).contains(&x);
        let monotone = |xs: &[f64]| xs.windows(2).all(|w| w[0] <= w[1]);
        if !self.hr.iter().chain(&self.ndcg).all(|&x| ok_range(x))
            || !monotone(&self.hr)
            || !monotone(&self.ndcg)
            || self.hr.iter().zip(&self.ndcg).any(|(h, n)| h < n)
        {
            return Err(Error::Internal(format!("inconsistent report {self:?}")));
        }
        Ok(())
    }
}

/// Per-user HR/NDCG for k = 1..=k_max, averaged over instances.
///
/// Ranks are computed in parallel; aggregation goes through an integer
/// histogram of ranks, so the result does not depend on instance order or
/// thread count.
pub fn evaluate(
    scorer: &dyn Scorer,
    store: &InteractionStore,
    instances: &[TestInstance],
    k_max: usize,
) -> Result<EvalReport> {
    if instances.is_empty() {
        return Err(Error::Protocol("no test instances to evaluate".into()));
    }
    if k_max == 0 {
        return Err(Error::Config("k_max must be positive".into()));
    }
    let start = Instant::now();
    let ranks = instances
        .par_iter()
        .map(|inst| rank_candidates(scorer, store, inst).map(|r| r.position_of_positive))
        .collect::<Result<Vec<_>>>()?;
    let mut report = report_from_ranks(&ranks, k_max);
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

pub fn report_from_ranks(ranks: &[usize], k_max: usize) -> EvalReport {
    let mut hist = vec![0usize; k_max + 1];
    for &r in ranks {
        if r <= k_max {
            hist[r] += 1;
        }
    }
    let n = ranks.len() as f64;
    let mut hr = Vec::with_capacity(k_max);
    let mut ndcg = Vec::with_capacity(k_max);
    let (mut hits, mut gain) = (0usize, 0.0);
    for (r, &count) in hist.iter().enumerate().skip(1) {
        hits += count;
        gain += count as f64 * ndcg_at_k(r, r);
        hr.push(hits as f64 / n);
        ndcg.push(gain / n);
    }
    EvalReport {
        epoch: 0,
        split: None,
        hr,
        ndcg,
        users: ranks.len(),
        seconds: 0.0,
        loss: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TEST_NEGATIVES;

    fn instance(user: usize, positive: usize) -> TestInstance {
        TestInstance {
            user,
            positive_item: positive,
            negative_items: (0..=TEST_NEGATIVES).filter(|&j| j != positive).take(TEST_NEGATIVES).collect(),
        }
    }

    fn empty_store() -> InteractionStore {
        InteractionStore::from_pairs(3, 101, []).unwrap().0
    }

    #[test]
    fn metric_examples() {
        assert_eq!(hr_at_k(1, 10), 1.0);
        assert_eq!(hr_at_k(11, 10), 0.0);
        assert_eq!(hr_at_k(10, 10), 1.0);
        assert_eq!(ndcg_at_k(1, 10), 1.0);
        assert_eq!(ndcg_at_k(3, 10), 0.5);
        assert_eq!(ndcg_at_k(11, 10), 0.0);
    }

    #[test]
    fn constant_scorer_uses_item_tiebreak() {
        let store = empty_store();
        let constant = |_: &InteractionStore, _: usize, _: usize| 0.0;
        let r = rank_candidates(&constant, &store, &instance(0, 42)).unwrap();
        assert_eq!(r.position_of_positive, 43);
        assert_eq!(r.items.len(), TEST_NEGATIVES + 1);
        assert_eq!(r.items, (0..=TEST_NEGATIVES).collect::<Vec<_>>());
    }

    #[test]
    fn two_user_average() {
        let rep = report_from_ranks(&[1, 11], 10);
        assert_eq!(rep.hr_at(10), 0.5);
        assert_eq!(rep.ndcg_at(10), 0.5);
        rep.check().unwrap();
    }

    #[test]
    fn oracle_scorer_is_perfect() {
        let store = empty_store();
        let insts = vec![instance(0, 5), instance(1, 77), instance(2, 0)];
        let pos: Vec<usize> = insts.iter().map(|t| t.positive_item).collect();
        let oracle = move |_: &InteractionStore, u: usize, i: usize| if pos[u] == i { 1.0 } else { 0.0 };
        let rep = evaluate(&oracle, &store, &insts, 10).unwrap();
        assert!(rep.hr.iter().chain(&rep.ndcg).all(|&x| x == 1.0));
        assert_eq!(rep.users, 3);
    }

    #[test]
    fn empty_instances_rejected() {
        let store = empty_store();
        let constant = |_: &InteractionStore, _: usize, _: usize| 0.0;
        assert!(matches!(evaluate(&constant, &store, &[], 10), Err(Error::Protocol(_))));
    }

    #[test]
    fn json_keys() {
        let rep = report_from_ranks(&[2], 10);
        let v: serde_json::Value = serde_json::from_str(&rep.to_json_line()).unwrap();
        for key in ["epoch", "hr", "ndcg", "users", "seconds"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["hr"].as_array().unwrap().len(), 10);
    }
}
