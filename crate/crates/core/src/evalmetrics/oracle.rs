//! Exhaustive reference implementations. Exponential in the number of
//! ground-truth triplets per scene; meant for small test corpora.

use std::collections::BTreeMap;

use crate::scenedata::{SceneGraph, Triplet};
use crate::trainer::{PredictionSet, ScenePrediction, ScoredTriplet};

use super::{triplet_matches, WmapMode};

fn ranked(p: &ScenePrediction) -> Vec<ScoredTriplet> {
    let mut v = p.triplets.clone();
    v.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then((a.subject, a.object, a.predicate).cmp(&(b.subject, b.object, b.predicate)))
    });
    v
}

/// Largest number of ground-truth triplets (restricted by `keep`) that can
/// be paired one-to-one with `preds`, by trying every assignment.
pub fn max_matching(
    preds: &[ScoredTriplet],
    classes: &[usize],
    g: &SceneGraph,
    keep: &dyn Fn(&Triplet) -> bool,
    mode: WmapMode,
) -> usize {
    let gts: Vec<&Triplet> = g.triplets.iter().filter(|t| keep(t)).collect();
    fn go(
        k: usize,
        gts: &[&Triplet],
        preds: &[ScoredTriplet],
        used: &mut Vec<bool>,
        classes: &[usize],
        g: &SceneGraph,
        mode: WmapMode,
    ) -> usize {
        if k == gts.len() {
            return 0;
        }
        let mut best = go(k + 1, gts, preds, used, classes, g, mode);
        for p in 0..preds.len() {
            if !used[p] && triplet_matches(&preds[p], classes, g, gts[k], mode) {
                used[p] = true;
                best = best.max(1 + go(k + 1, gts, preds, used, classes, g, mode));
                used[p] = false;
            }
        }
        best
    }
    go(0, &gts, preds, &mut vec![false; preds.len()], classes, g, mode)
}

pub fn recall_at_k(p: &ScenePrediction, g: &SceneGraph, k: usize) -> Option<f64> {
    if g.triplets.is_empty() {
        return None;
    }
    let r = ranked(p);
    let top = &r[..k.min(r.len())];
    Some(max_matching(top, &p.node_classes, g, &|_| true, WmapMode::Rel) as f64 / g.triplets.len() as f64)
}

pub fn corpus_recall_at_k(preds: &PredictionSet, scenes: &[SceneGraph], k: usize) -> Option<f64> {
    let v: Vec<f64> = preds.scenes.iter().zip(scenes).filter_map(|(p, g)| recall_at_k(p, g, k)).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn mean_recall_at_k(preds: &PredictionSet, scenes: &[SceneGraph], k: usize) -> Option<f64> {
    let mut per: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (p, g) in preds.scenes.iter().zip(scenes) {
        let r = ranked(p);
        let top = &r[..k.min(r.len())];
        let mut cats: Vec<usize> = g.triplets.iter().map(|t| t.predicate).collect();
        cats.sort_unstable();
        cats.dedup();
        for c in cats {
            let n = g.triplets.iter().filter(|t| t.predicate == c).count();
            let m = max_matching(top, &p.node_classes, g, &|t| t.predicate == c, WmapMode::Rel);
            per.entry(c).or_default().push(m as f64 / n as f64);
        }
    }
    let means: Vec<f64> = per.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
}

/// Weighted mAP where a prediction counts as a hit exactly when it raises
/// the scene's maximum matching over the predictions ranked before it.
pub fn wmap(preds: &PredictionSet, scenes: &[SceneGraph], mode: WmapMode) -> Option<f64> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, Vec<(f64, bool)>> = BTreeMap::new();
    for (p, g) in preds.scenes.iter().zip(scenes) {
        for t in &g.triplets {
            *counts.entry(t.predicate).or_default() += 1;
        }
        let r = ranked(p);
        let mut prev = 0;
        for k in 1..=r.len() {
            let m = max_matching(&r[..k], &p.node_classes, g, &|_| true, mode);
            rows.entry(r[k - 1].predicate).or_default().push((r[k - 1].score, m > prev));
            prev = m;
        }
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return None;
    }
    let mut out = 0.0;
    for (c, n) in counts {
        let v = rows.remove(&c).unwrap_or_default();
        out += n as f64 / total as f64 * ap(&v, n);
    }
    Some(out)
}

/// Precision at a score threshold counts every prediction scoring at least
/// that much; AP sums recall increments times the best precision at any
/// threshold reaching that recall.
fn ap(rows: &[(f64, bool)], num_gt: usize) -> f64 {
    let mut thresholds: Vec<f64> = rows.iter().map(|r| r.0).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let pr: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&th| {
            let above: Vec<&(f64, bool)> = rows.iter().filter(|r| r.0 >= th).collect();
            let hits = above.iter().filter(|r| r.1).count() as f64;
            (hits / num_gt as f64, hits / above.len() as f64)
        })
        .collect();
    let mut total = 0.0;
    let mut prev = 0.0;
    for (k, &(r, _)) in pr.iter().enumerate() {
        let best = pr[k..].iter().map(|x| x.1).fold(0.0, f64::max);
        total += (r - prev) * best;
        prev = r;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalmetrics::testutil::{prediction, scored, set};
    use crate::scenedata::testutil::{node, scene};

    #[test]
    fn toy_ap_by_hand() {
        let g = scene(
            vec![
                node(0, (0.0, 0.0, 10.0, 10.0), 0),
                node(1, (30.0, 0.0, 40.0, 10.0), 1),
                node(2, (60.0, 0.0, 70.0, 10.0), 2),
            ],
            vec![
                Triplet { subject: 0, object: 1, predicate: 0 },
                Triplet { subject: 1, object: 2, predicate: 0 },
            ],
        );
        let p = prediction(&g, vec![scored(0, 1, 0, 0.9), scored(0, 2, 0, 0.8), scored(1, 2, 0, 0.7)]);
        let v = wmap(&set(vec![p]), std::slice::from_ref(&g), WmapMode::Rel).unwrap();
        assert!((v - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }
}
