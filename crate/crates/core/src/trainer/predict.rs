use crate::error::Result;
use crate::numcore::Tape;
use crate::scenedata::SceneGraph;

use super::model::{argmax, forward, ModelParams};
use super::{Task, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredTriplet {
    pub subject: usize,
    pub object: usize,
    pub predicate: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePrediction {
    /// `o_i` per node.
    pub node_classes: Vec<usize>,
    /// Probability assigned to `o_i`; 1 for given classes.
    pub node_confidence: Vec<f64>,
    /// Full class distribution per node.
    pub node_scores: Vec<Vec<f64>>,
    /// Ranked by score descending, ties by `(subject, object, predicate)`.
    pub triplets: Vec<ScoredTriplet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub task: Task,
    pub scenes: Vec<ScenePrediction>,
}

/// Builds the ranked output from class distributions and per-pair predicate
/// distributions (background at index 0).
pub fn extract_prediction(
    node_scores: Vec<Vec<f64>>,
    given_classes: Option<&[usize]>,
    pairs: &[(usize, usize)],
    rel_scores: &[Vec<f64>],
) -> ScenePrediction {
    let (node_classes, node_confidence): (Vec<usize>, Vec<f64>) = match given_classes {
        Some(c) => (c.to_vec(), vec![1.0; c.len()]),
        None => node_scores
            .iter()
            .map(|v| {
                let k = argmax(v);
                (k, v[k])
            })
            .unzip(),
    };
    let mut triplets: Vec<ScoredTriplet> = pairs
        .iter()
        .zip(rel_scores)
        .filter(|(_, t)| t.len() > 1)
        .map(|(&(i, j), t)| {
            let e = argmax(&t[1..]);
            ScoredTriplet {
                subject: i,
                object: j,
                predicate: e,
                score: node_confidence[i] * node_confidence[j] * t[e + 1],
            }
        })
        .collect();
    sort_ranked(&mut triplets);
    ScenePrediction {
        node_classes,
        node_confidence,
        node_scores,
        triplets,
    }
}

/// Score descending, then `(subject, object, predicate)` ascending.
pub fn sort_ranked(triplets: &mut [ScoredTriplet]) {
    triplets.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then((a.subject, a.object, a.predicate).cmp(&(b.subject, b.object, b.predicate)))
    });
}

/// Scores every ordered node pair of `g`.
pub fn predict_scene(model: &ModelParams, cfg: &TrainConfig, g: &SceneGraph, task: Task) -> Result<ScenePrediction> {
    let pairs = g.ordered_pairs();
    let mut tape = Tape::new();
    let out = forward(&mut tape, model, cfg, g, &pairs, task)?;
    let node_scores = out.node_scores.iter().map(|&v| tape.value(v).to_vec()).collect();
    let rel_scores: Vec<Vec<f64>> = out.rel_scores.iter().map(|&v| tape.value(v).to_vec()).collect();
    let gt: Vec<usize> = g.nodes.iter().map(|n| n.class_label).collect();
    let given = (task == Task::Predcls).then_some(gt.as_slice());
    Ok(extract_prediction(node_scores, given, &pairs, &rel_scores))
}

pub fn predict(model: &ModelParams, cfg: &TrainConfig, scenes: &[SceneGraph], task: Task) -> Result<PredictionSet> {
    Ok(PredictionSet {
        task,
        scenes: scenes
            .iter()
            .map(|g| predict_scene(model, cfg, g, task))
            .collect::<Result<_>>()?,
    })
}
