use std::collections::{BTreeMap, HashMap};

use super::{FusionError, RankedList};

/// Weighted reciprocal-rank fusion.
///
/// A document scores `sum(w_e / (kappa + rank))` over the lists containing
/// it, ranks starting at 1. Each score is summed in ascending order of its
/// terms, so the result does not depend on list order and equal term
/// multisets give bitwise-equal scores. Output is by descending score, then
/// ascending id.
pub fn rrf_fuse(
    lists: &[&RankedList],
    weights: &BTreeMap<String, f64>,
    kappa: f64,
) -> Result<Vec<(u64, f64)>, FusionError> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(FusionError::InvalidPlan(format!("kappa {kappa} must be positive")));
    }
    let mut terms: HashMap<u64, Vec<f64>> = HashMap::new();
    for list in lists {
        let w = *weights
            .get(&list.embedder)
            .ok_or_else(|| FusionError::MissingWeight(list.embedder.clone()))?;
        for (pos, hit) in list.hits.iter().enumerate() {
            terms
                .entry(hit.id)
                .or_default()
                .push(w / (kappa + (pos + 1) as f64));
        }
    }
    let mut fused: Vec<(u64, f64)> = terms
        .into_iter()
        .map(|(id, mut t)| {
            t.sort_by(f64::total_cmp);
            (id, t.iter().sum())
        })
        .collect();
    fused.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(fused)
}
