use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numcore::{linear, Linear, ParamStore, Tape, Var};

use super::gen::derive_seed;
use super::{Canvas, ObjectNode, SceneGraph};

const UNION_TAG: u64 = 0x75_6e_69_6f_6e;

/// Box geometry normalized to the canvas: x1, y1, x2, y2, relative area.
pub fn node_geometry(n: &ObjectNode, canvas: Canvas) -> [f64; 5] {
    let b = &n.bbox;
    [
        b.x1 / canvas.width,
        b.y1 / canvas.height,
        b.x2 / canvas.width,
        b.y2 / canvas.height,
        b.area() / (canvas.width * canvas.height),
    ]
}

/// Synthetic appearance of the union box over 2 or 3 nodes: area-weighted
/// mean of member appearances plus noise keyed by the (unordered) id set.
pub fn union_appearance(ids: &[usize], g: &SceneGraph) -> Result<Vec<f64>> {
    if !(2..=3).contains(&ids.len()) {
        return Err(Error::Contract(format!("union over {} nodes", ids.len())));
    }
    let mut key: Vec<usize> = ids.to_vec();
    key.sort_unstable();
    if key.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Contract(format!("duplicate ids in union {ids:?}")));
    }
    if let Some(&bad) = key.iter().find(|&&i| i >= g.len()) {
        return Err(Error::Contract(format!("node id {bad} out of range")));
    }
    let dim = g.nodes[key[0]].appearance.len();
    let total_area: f64 = key.iter().map(|&i| g.nodes[i].bbox.area()).sum();
    let mut out = vec![0.0; dim];
    for &i in &key {
        let w = g.nodes[i].bbox.area() / total_area;
        for (o, a) in out.iter_mut().zip(&g.nodes[i].appearance) {
            *o += w * a;
        }
    }
    if g.union_noise > 0.0 {
        let mut parts = vec![g.feature_seed, UNION_TAG];
        parts.extend(key.iter().map(|&i| i as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&parts));
        let normal = Normal::new(0.0, g.union_noise).map_err(|e| Error::Config(e.to_string()))?;
        for o in &mut out {
            *o += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Learnable projections from raw node and union-box inputs to width `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputEncoder {
    pub node_proj: Linear,
    pub union_proj: Linear,
    pub d_app: usize,
    pub num_classes: usize,
}

impl InputEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        d_app: usize,
        num_classes: usize,
        d: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            node_proj: Linear::new(store, "input.node", d_app + num_classes + 5, d, true, rng)?,
            union_proj: Linear::new(store, "input.union", d_app, d, true, rng)?,
            d_app,
            num_classes,
        })
    }

    pub fn union_feature(&self, tape: &mut Tape, store: &ParamStore, appearance: Vec<f64>) -> Result<Var> {
        let a = tape.vector(appearance);
        linear(tape, store, &self.union_proj, a)
    }
}

/// `x_i`: projection of appearance ⊕ detector probabilities ⊕ geometry.
pub fn node_input(
    tape: &mut Tape,
    store: &ParamStore,
    enc: &InputEncoder,
    n: &ObjectNode,
    canvas: Canvas,
) -> Result<Var> {
    if n.appearance.len() != enc.d_app || n.detector_probs.len() != enc.num_classes {
        return Err(Error::dim(
            &[n.appearance.len(), n.detector_probs.len()],
            &[enc.d_app, enc.num_classes],
            "node_input appearance/probabilities",
        ));
    }
    let mut raw = Vec::with_capacity(enc.d_app + enc.num_classes + 5);
    raw.extend_from_slice(&n.appearance);
    raw.extend_from_slice(&n.detector_probs);
    raw.extend_from_slice(&node_geometry(n, canvas));
    let x = tape.vector(raw);
    linear(tape, store, &enc.node_proj, x)
}
