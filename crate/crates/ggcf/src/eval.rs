//! Full-catalog top-k ranking evaluation: recall@k and ndcg@k.
//!
//! Every catalog item is scored for each evaluated user, the user's training
//! positives are masked to negative infinity, and the top-k prefix of the
//! resulting ranking is compared against the user's held-out test items.
//! Metrics are averaged over users with at least one test interaction.

use serde::{Deserialize, Serialize};

use crate::error::{GgcfError, Result};
use crate::graph::InteractionSet;
use crate::model::{score, LayerState};

/// Aggregated evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub users_evaluated: usize,
}

/// Descending score, ties broken by ascending item index.
#[inline]
fn rank_cmp(a: &(f64, u32), b: &(f64, u32)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn score_catalog(
    state: &LayerState,
    u: u32,
    train_positives: &[u32],
    lambda: f64,
) -> Result<Vec<(f64, u32)>> {
    let item_count = state.euclid_item.rows();
    let mut scored = Vec::with_capacity(item_count);
    for i in 0..item_count as u32 {
        scored.push((score(state, u, i, lambda)?, i));
    }
    for &i in train_positives {
        scored[i as usize].0 = f64::NEG_INFINITY;
    }
    Ok(scored)
}

/// Rank the full catalog for one user: every item scored, the user's training
/// positives masked below all unmasked items, descending score order with ties
/// broken by ascending item index.
pub fn rank_items(
    state: &LayerState,
    u: u32,
    train_positives: &[u32],
    lambda: f64,
) -> Result<Vec<u32>> {
    let mut scored = score_catalog(state, u, train_positives, lambda)?;
    scored.sort_unstable_by(rank_cmp);
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

/// |top-k hits| / |test_positives|. `test_positives` must be sorted.
pub fn recall_at_k(top_k: &[u32], test_positives: &[u32]) -> Result<f64> {
    if top_k.is_empty() {
        return Err(GgcfError::Config("recall@k needs k >= 1".into()));
    }
    if test_positives.is_empty() {
        return Err(GgcfError::Degenerate(
            "recall over an empty test set is undefined".into(),
        ));
    }
    let hits = top_k
        .iter()
        .filter(|i| test_positives.binary_search(i).is_ok())
        .count();
    Ok(hits as f64 / test_positives.len() as f64)
}

/// Binary-relevance ndcg: DCG sums 1/log2(p+1) over hit positions p (1-based),
/// IDCG truncates the ideal sum at min(k, |test_positives|).
pub fn ndcg_at_k(top_k: &[u32], test_positives: &[u32]) -> Result<f64> {
    if top_k.is_empty() {
        return Err(GgcfError::Config("ndcg@k needs k >= 1".into()));
    }
    if test_positives.is_empty() {
        return Err(GgcfError::Degenerate(
            "ndcg over an empty test set is undefined".into(),
        ));
    }
    let mut dcg = 0.0;
    for (pos, i) in top_k.iter().enumerate() {
        if test_positives.binary_search(i).is_ok() {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal_len = top_k.len().min(test_positives.len());
    let mut idcg = 0.0;
    for p in 1..=ideal_len {
        idcg += 1.0 / ((p + 1) as f64).log2();
    }
    Ok(dcg / idcg)
}

/// Summation that is insensitive to accumulation order beyond ~1e-15 relative.
fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Evaluate recall@k and ndcg@k over all users with at least one test item.
/// `train` supplies per-user masks; `test` supplies held-out positives.
pub fn evaluate(
    state: &LayerState,
    train: &InteractionSet,
    test: &InteractionSet,
    k: usize,
    lambda: f64,
) -> Result<EvalReport> {
    if k < 1 {
        return Err(GgcfError::Config("evaluation needs k >= 1".into()));
    }
    if test.is_empty() {
        return Err(GgcfError::Degenerate("test set is empty".into()));
    }
    let user_count = state.euclid_user.rows();
    let item_count = state.euclid_item.rows();
    if train.user_count() != user_count
        || train.item_count() != item_count
        || test.user_count() != user_count
        || test.item_count() != item_count
    {
        return Err(GgcfError::Dimension(format!(
            "evaluation state is {user_count}x{item_count} but splits are {}x{} / {}x{}",
            train.user_count(),
            train.item_count(),
            test.user_count(),
            test.item_count()
        )));
    }
    let mut recalls = Vec::new();
    let mut ndcgs = Vec::new();
    for u in 0..user_count as u32 {
        let test_items = test.items_of(u);
        if test_items.is_empty() {
            continue;
        }
        let mut scored = score_catalog(state, u, train.items_of(u), lambda)?;
        let kk = k.min(scored.len());
        if kk < scored.len() {
            scored.select_nth_unstable_by(kk - 1, rank_cmp);
            scored.truncate(kk);
        }
        scored.sort_unstable_by(rank_cmp);
        let top_k: Vec<u32> = scored.iter().map(|&(_, i)| i).collect();
        recalls.push(recall_at_k(&top_k, test_items)?);
        ndcgs.push(ndcg_at_k(&top_k, test_items)?);
    }
    if recalls.is_empty() {
        return Err(GgcfError::Degenerate(
            "no user has a non-empty test set".into(),
        ));
    }
    let n = recalls.len() as f64;
    Ok(EvalReport {
        k,
        recall: pairwise_sum(&recalls) / n,
        ndcg: pairwise_sum(&ndcgs) / n,
        users_evaluated: recalls.len(),
    })
}
