//! Recall@K, mean recall, occlusion-split recall, weighted mAP and the
//! weighted final score over ranked triplet predictions.

pub mod oracle;
mod report;

pub use report::{evaluate, MetricsReport, TaskMetrics, RECALL_KS};

use crate::error::{Error, Result};
use crate::scenedata::{iou, SceneGraph, Triplet};
use crate::trainer::{PredictionSet, ScenePrediction, ScoredTriplet};

pub const IOU_THRESHOLD: f64 = 0.5;

/// Which box test a prediction must pass against a ground-truth triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WmapMode {
    /// Subject and object boxes each overlap by at least the threshold.
    Rel,
    /// The union of subject and object boxes overlaps by at least the threshold.
    Phr,
}

impl WmapMode {
    pub fn name(self) -> &'static str {
        match self {
            WmapMode::Rel => "rel",
            WmapMode::Phr => "phr",
        }
    }
}

/// Classes and predicate agree and the mode's box test passes. Predicted
/// nodes sit on the scene's given boxes.
pub fn triplet_matches(
    p: &ScoredTriplet,
    classes: &[usize],
    g: &SceneGraph,
    t: &Triplet,
    mode: WmapMode,
) -> bool {
    if p.predicate != t.predicate
        || classes[p.subject] != g.nodes[t.subject].class_label
        || classes[p.object] != g.nodes[t.object].class_label
    {
        return false;
    }
    let (ps, po) = (&g.nodes[p.subject].bbox, &g.nodes[p.object].bbox);
    let (ts, to) = (&g.nodes[t.subject].bbox, &g.nodes[t.object].bbox);
    match mode {
        WmapMode::Rel => iou(ps, ts) >= IOU_THRESHOLD && iou(po, to) >= IOU_THRESHOLD,
        WmapMode::Phr => iou(&ps.union(po), &ts.union(to)) >= IOU_THRESHOLD,
    }
}

/// Result of matching a ranked prefix against the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Per prediction in rank order: whether it is matched.
    pub hit: Vec<bool>,
    /// Per ground-truth triplet: the matched prediction.
    pub gt_match: Vec<Option<usize>>,
}

/// Rank-order matching: each prediction in turn claims a ground-truth
/// triplet, re-routing earlier claims along an augmenting path when needed.
/// Every prefix therefore holds a maximum matching, and a prediction once
/// matched stays matched.
pub fn match_ranked(pred: &ScenePrediction, g: &SceneGraph, k: usize, mode: WmapMode) -> Matching {
    let top = &pred.triplets[..k.min(pred.triplets.len())];
    let adj: Vec<Vec<usize>> = top
        .iter()
        .map(|p| {
            (0..g.triplets.len())
                .filter(|&t| triplet_matches(p, &pred.node_classes, g, &g.triplets[t], mode))
                .collect()
        })
        .collect();
    let mut gt_match = vec![None; g.triplets.len()];
    let mut hit = vec![false; top.len()];
    for p in 0..top.len() {
        let mut seen = vec![false; g.triplets.len()];
        hit[p] = augment(p, &adj, &mut gt_match, &mut seen);
    }
    Matching { hit, gt_match }
}

fn augment(p: usize, adj: &[Vec<usize>], gt_match: &mut [Option<usize>], seen: &mut [bool]) -> bool {
    for &t in &adj[p] {
        if seen[t] {
            continue;
        }
        seen[t] = true;
        let free = match gt_match[t] {
            None => true,
            Some(q) => augment(q, adj, gt_match, seen),
        };
        if free {
            gt_match[t] = Some(p);
            return true;
        }
    }
    false
}

fn check_lengths(preds: &PredictionSet, scenes: &[SceneGraph]) -> Result<()> {
    if preds.scenes.len() != scenes.len() {
        return Err(Error::dim(&[preds.scenes.len()], &[scenes.len()], "predictions vs scenes"));
    }
    Ok(())
}

fn mean_of(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Fraction of `gt`'s triplets matched by the top `k` predictions; `None`
/// for a scene without ground-truth triplets.
pub fn recall_at_k(pred: &ScenePrediction, gt: &SceneGraph, k: usize) -> Option<f64> {
    if gt.triplets.is_empty() {
        return None;
    }
    let m = match_ranked(pred, gt, k, WmapMode::Rel);
    Some(m.hit.iter().filter(|&&h| h).count() as f64 / gt.triplets.len() as f64)
}

/// Mean per-scene recall over scenes with ground truth; `None` if there are none.
pub fn corpus_recall_at_k(preds: &PredictionSet, scenes: &[SceneGraph], k: usize) -> Result<Option<f64>> {
    check_lengths(preds, scenes)?;
    let v: Vec<f64> = preds
        .scenes
        .iter()
        .zip(scenes)
        .filter_map(|(p, g)| recall_at_k(p, g, k))
        .collect();
    Ok(mean_of(&v))
}

/// Per predicate: mean recall over scenes containing it; then the mean over
/// predicates present in the ground truth.
pub fn mean_recall_at_k(preds: &PredictionSet, scenes: &[SceneGraph], k: usize) -> Result<Option<f64>> {
    check_lengths(preds, scenes)?;
    let mut per_pred: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for (p, g) in preds.scenes.iter().zip(scenes) {
        let m = match_ranked(p, g, k, WmapMode::Rel);
        let mut total: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
        for (t, hit) in g.triplets.iter().zip(&m.gt_match) {
            let e = total.entry(t.predicate).or_default();
            e.0 += hit.is_some() as usize;
            e.1 += 1;
        }
        for (c, (hit, n)) in total {
            per_pred.entry(c).or_default().push(hit as f64 / n as f64);
        }
    }
    let means: Vec<f64> = per_pred.values().filter_map(|v| mean_of(v)).collect();
    Ok(mean_of(&means))
}

/// `(C, S)` recall: triplets with an endpoint overlapping any other node by
/// IoU > 0.5 go to C, the rest to S. Each is averaged over scenes that have
/// triplets in that split; an empty split gives `None`.
pub fn occlusion_split_recall(
    preds: &PredictionSet,
    scenes: &[SceneGraph],
    k: usize,
) -> Result<(Option<f64>, Option<f64>)> {
    check_lengths(preds, scenes)?;
    let (mut c, mut s) = (Vec::new(), Vec::new());
    for (p, g) in preds.scenes.iter().zip(scenes) {
        let m = match_ranked(p, g, k, WmapMode::Rel);
        let (mut ch, mut cn, mut sh, mut sn) = (0usize, 0usize, 0usize, 0usize);
        for (t, hit) in g.triplets.iter().zip(&m.gt_match) {
            if g.is_occluded(t.subject) || g.is_occluded(t.object) {
                cn += 1;
                ch += hit.is_some() as usize;
            } else {
                sn += 1;
                sh += hit.is_some() as usize;
            }
        }
        if cn > 0 {
            c.push(ch as f64 / cn as f64);
        }
        if sn > 0 {
            s.push(sh as f64 / sn as f64);
        }
    }
    Ok((mean_of(&c), mean_of(&s)))
}

/// Area under the precision envelope for one predicate. `ranked` holds
/// `(score, hit)` pairs; equal scores are evaluated as one block so the
/// result does not depend on their order.
pub fn average_precision(ranked: &mut [(f64, bool)], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut seen, mut hits) = (0usize, 0usize);
    let mut k = 0;
    while k < ranked.len() {
        let mut end = k;
        while end < ranked.len() && ranked[end].0 == ranked[k].0 {
            hits += ranked[end].1 as usize;
            end += 1;
        }
        seen += end - k;
        points.push((hits as f64 / num_gt as f64, hits as f64 / seen as f64));
        k = end;
    }
    let mut envelope = 0.0f64;
    for p in points.iter_mut().rev() {
        envelope = envelope.max(p.1);
        p.1 = envelope;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in points {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}

/// Predicate-share weighted mean of per-predicate AP; `None` without ground truth.
pub fn wmap(preds: &PredictionSet, scenes: &[SceneGraph], mode: WmapMode) -> Result<Option<f64>> {
    check_lengths(preds, scenes)?;
    let mut ranked: std::collections::BTreeMap<usize, Vec<(f64, bool)>> = Default::default();
    let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
    for (p, g) in preds.scenes.iter().zip(scenes) {
        for t in &g.triplets {
            *counts.entry(t.predicate).or_default() += 1;
        }
        let m = match_ranked(p, g, p.triplets.len(), mode);
        for (t, &hit) in p.triplets.iter().zip(&m.hit) {
            ranked.entry(t.predicate).or_default().push((t.score, hit));
        }
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return Ok(None);
    }
    let mut out = 0.0;
    for (&c, &n) in &counts {
        let ap = average_precision(ranked.get_mut(&c).map(|v| v.as_mut_slice()).unwrap_or(&mut []), n);
        out += n as f64 / total as f64 * ap;
    }
    Ok(Some(out))
}

/// `0.2 R@50 + 0.4 wmAP_rel + 0.4 wmAP_phr`, in whatever common scale the inputs use.
pub fn score_wtd(r50: f64, wmap_rel: f64, wmap_phr: f64) -> f64 {
    0.2 * r50 + 0.4 * wmap_rel + 0.4 * wmap_phr
}

/// Fraction of nodes whose most probable class is correct, pooled over scenes.
pub fn node_accuracy(preds: &PredictionSet, scenes: &[SceneGraph]) -> Result<Option<f64>> {
    check_lengths(preds, scenes)?;
    let (mut hit, mut n) = (0usize, 0usize);
    for (p, g) in preds.scenes.iter().zip(scenes) {
        for (v, nd) in p.node_scores.iter().zip(&g.nodes) {
            n += 1;
            hit += (crate::trainer::argmax(v) == nd.class_label) as usize;
        }
    }
    Ok((n > 0).then(|| hit as f64 / n as f64))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::trainer::{sort_ranked, Task};

    pub fn scored(subject: usize, object: usize, predicate: usize, score: f64) -> ScoredTriplet {
        ScoredTriplet { subject, object, predicate, score }
    }

    pub fn prediction(g: &SceneGraph, mut triplets: Vec<ScoredTriplet>) -> ScenePrediction {
        sort_ranked(&mut triplets);
        ScenePrediction {
            node_classes: g.nodes.iter().map(|n| n.class_label).collect(),
            node_confidence: vec![1.0; g.len()],
            node_scores: g
                .nodes
                .iter()
                .map(|n| (0..4).map(|c| if c == n.class_label { 1.0 } else { 0.0 }).collect())
                .collect(),
            triplets,
        }
    }

    pub fn set(scenes: Vec<ScenePrediction>) -> PredictionSet {
        PredictionSet { task: Task::Sgcls, scenes }
    }

    /// Perfect predictions: every gt triplet with score 1, nothing else.
    pub fn perfect(g: &SceneGraph) -> ScenePrediction {
        prediction(g, g.triplets.iter().map(|t| scored(t.subject, t.object, t.predicate, 1.0)).collect())
    }
}
