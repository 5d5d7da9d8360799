//! Heterophily-aware message passing: tanh sign gates on node pairs and on
//! neighboring relationships, supervised with same/different-class labels.

use rand::Rng;

use crate::error::Result;
use crate::numcore::{linear, InitSpec, Linear, ParamId, ParamStore, Tape, Var};
use crate::rfp::{fuse, EdgeTerm, Fusion};
use crate::scenedata::SceneGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmpParams {
    pub node_hidden: Linear,
    pub node_head: ParamId,
    pub edge_first: Fusion,
    pub edge_second: Fusion,
    pub edge_head: ParamId,
}

impl HmpParams {
    pub fn new<R: Rng>(store: &mut ParamStore, dim: usize, num_classes: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            node_hidden: Linear::new(store, "hmp.node_hidden", dim + 2 * num_classes, dim, false, rng)?,
            node_head: store.register("hmp.node_head", vec![dim], InitSpec::UniformFanIn, rng)?,
            edge_first: Fusion::new(store, "hmp.edge_first", dim, dim, dim, rng)?,
            edge_second: Fusion::new(store, "hmp.edge_second", dim, dim, dim, rng)?,
            edge_head: store.register("hmp.edge_head", vec![dim], InitSpec::UniformFanIn, rng)?,
        })
    }
}

/// `s_ij = tanh(w_s^T ReLU(W_s [x_ij + B_ij, v_i, v_j]))`.
pub fn node_sign(
    tape: &mut Tape,
    store: &ParamStore,
    p: &HmpParams,
    context: Var,
    scores_i: Var,
    scores_j: Var,
) -> Result<Var> {
    let cat = tape.concat(&[context, scores_i, scores_j]);
    let h = linear(tape, store, &p.node_hidden, cat)?;
    let h = tape.relu(h);
    let w = tape.param(store, p.node_head);
    let s = tape.dot(w, h)?;
    Ok(tape.tanh(s))
}

/// `q = tanh(w_q^T ((a * b) * c))`. For a neighbor sharing the subject the
/// inputs are `(x̂_i, x_lj, x_ijl + B_i,lj)`; sharing the object they are
/// `(x_im, x̂_j, x_ijm + B_im,j)`.
pub fn edge_sign(tape: &mut Tape, store: &ParamStore, p: &HmpParams, a: Var, b: Var, c: Var) -> Result<Var> {
    let h = fuse(tape, store, &p.edge_first, a, b)?;
    let h = fuse(tape, store, &p.edge_second, h, c)?;
    let w = tape.param(store, p.edge_head);
    let q = tape.dot(w, h)?;
    Ok(tape.tanh(q))
}

/// Mean binary cross-entropy with `p = (s + 1) / 2`, clamped.
pub fn sign_bce_loss(tape: &mut Tape, signs: &[Var], labels: &[f64]) -> Result<Var> {
    let s = tape.concat(signs);
    tape.sign_bce(s, labels)
}

/// +1 for equal categories, -1 otherwise.
pub fn sign_label(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        -1.0
    }
}

/// Supervision targets for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SignLabels {
    /// `((i, j), y)` for every ordered node pair.
    pub nodes: Vec<((usize, usize), f64)>,
    /// `((candidate, term index), y)` for message terms whose two
    /// relationships both carry a ground-truth predicate.
    pub edges: Vec<((usize, usize), f64)>,
}

pub fn sign_labels(g: &SceneGraph, candidates: &[(usize, usize)], terms: &[Vec<EdgeTerm>]) -> SignLabels {
    let nodes = g
        .ordered_pairs()
        .into_iter()
        .map(|(i, j)| ((i, j), sign_label(g.nodes[i].class_label, g.nodes[j].class_label)))
        .collect();
    let mut edges = Vec::new();
    for (a, (&(i, j), ts)) in candidates.iter().zip(terms).enumerate() {
        let Some(pa) = g.predicate_of(i, j) else { continue };
        for (k, t) in ts.iter().enumerate() {
            let (si, sj) = candidates[t.source];
            if let Some(pb) = g.predicate_of(si, sj) {
                edges.push(((a, k), sign_label(pa, pb)));
            }
        }
    }
    SignLabels { nodes, edges }
}
