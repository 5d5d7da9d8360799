use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::art::{run_art, ArtParams};
use crate::error::{Error, Result};
use crate::hmp::{edge_sign, node_sign, sign_bce_loss, sign_labels, HmpParams, SignLabels};
use crate::numcore::{ParamStore, Tape, Var};
use crate::rfp::{
    classify_relationships, edge_terms, init_scores, joint_alpha, propagate, relationship_feature, EdgeTerm,
    RelNeighborhood, RfpParams, SharedEnd,
};
use crate::scenedata::{
    derive_seed, encode_spatial, node_input, spatial_binary_maps, union_appearance, BBox, FrequencyBias, GenConfig,
    InputEncoder, PairGrid, SampledPair, SceneGraph, SpatialEncoder,
};

use super::{Task, TrainConfig};

const INIT_TAG: u64 = 0x1417;

/// Sizes fixed by the corpus rather than by the training configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub num_obj_classes: usize,
    pub num_rel_classes: usize,
    pub d_app: usize,
}

impl ModelDims {
    pub fn of(cfg: &GenConfig) -> Self {
        Self {
            num_obj_classes: cfg.num_obj_classes,
            num_rel_classes: cfg.num_rel_classes,
            d_app: cfg.d_app,
        }
    }
}

/// Every learnable tensor of the network plus the fixed frequency prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub store: ParamStore,
    pub input: InputEncoder,
    pub spatial: SpatialEncoder,
    pub art: ArtParams,
    pub hmp: HmpParams,
    pub rfp: RfpParams,
    pub freq: FrequencyBias,
}

impl ModelParams {
    /// Fresh parameters drawn from `cfg.seed`. All modules are registered
    /// regardless of toggles, so runs that differ only in toggles start from
    /// identical weights.
    pub fn new(cfg: &TrainConfig, dims: ModelDims, freq: FrequencyBias) -> Result<Self> {
        cfg.validate()?;
        if freq.num_rel_classes != dims.num_rel_classes {
            return Err(Error::Config(format!(
                "frequency prior has {} predicates, model expects {}",
                freq.num_rel_classes, dims.num_rel_classes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, INIT_TAG]));
        let mut store = ParamStore::new();
        let input = InputEncoder::new(&mut store, dims.d_app, dims.num_obj_classes, cfg.dim, &mut rng)?;
        let spatial = SpatialEncoder::new(&mut store, "spatial", cfg.dim, &mut rng)?;
        let art = ArtParams::new(
            &mut store,
            cfg.dim,
            dims.num_obj_classes,
            cfg.layers,
            cfg.tau,
            cfg.effective_gamma_init(),
            cfg.art,
            &mut rng,
        )?;
        let hmp = HmpParams::new(&mut store, cfg.dim, dims.num_obj_classes, &mut rng)?;
        let rfp = RfpParams::new(&mut store, cfg.dim, dims.num_rel_classes, cfg.beta, cfg.steps, &mut rng)?;
        Ok(Self {
            dims,
            store,
            input,
            spatial,
            art,
            hmp,
            rfp,
            freq,
        })
    }

    /// Errors unless the corpus has the class counts and feature width the
    /// parameters were built for.
    pub fn check_corpus(&self, cfg: &GenConfig) -> Result<()> {
        let want = ModelDims::of(cfg);
        if want != self.dims {
            return Err(Error::Config(format!(
                "checkpoint built for {:?} but corpus has {:?}",
                self.dims, want
            )));
        }
        Ok(())
    }
}

/// Forward-pass results for one scene, all still on the tape.
#[derive(Debug, Clone)]
pub struct SceneOutput {
    pub node_logits: Vec<Var>,
    pub node_scores: Vec<Var>,
    pub candidates: Vec<(usize, usize)>,
    /// Neighbor terms per candidate; all empty with RFP off.
    pub terms: Vec<Vec<EdgeTerm>>,
    pub rel_logits: Vec<Var>,
    pub rel_scores: Vec<Var>,
    /// Node-pair signs in `SceneGraph::ordered_pairs` order; empty with HMP off.
    pub node_signs: Vec<Var>,
    /// Sign per candidate per term; `None` where no sign is computed.
    pub edge_signs: Vec<Vec<Option<Var>>>,
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

struct SceneContext<'a> {
    model: &'a ModelParams,
    g: &'a SceneGraph,
    pair_union: PairGrid<Var>,
    triple_union: HashMap<[usize; 3], Var>,
}

impl SceneContext<'_> {
    fn spatial(&self, tape: &mut Tape, a: &BBox, b: &BBox) -> Result<Var> {
        let maps = spatial_binary_maps(a, b, self.g.canvas)?.to_tape(tape);
        encode_spatial(tape, &self.model.store, &self.model.spatial, maps)
    }

    fn triple(&mut self, tape: &mut Tape, ids: [usize; 3]) -> Result<Var> {
        let mut key = ids;
        key.sort_unstable();
        if let Some(&v) = self.triple_union.get(&key) {
            return Ok(v);
        }
        let app = union_appearance(&key, self.g)?;
        let v = self.model.input.union_feature(tape, &self.model.store, app)?;
        self.triple_union.insert(key, v);
        Ok(v)
    }

    fn edge_sign_inputs(
        &mut self,
        tape: &mut Tape,
        refined: &[Var],
        (i, j): (usize, usize),
        t: &EdgeTerm,
    ) -> Result<(Var, Var, Var)> {
        let boxes: Vec<BBox> = self.g.nodes.iter().map(|n| n.bbox).collect();
        let o = t.other;
        let union = self.triple(tape, [i, j, o])?;
        let (a, b, spatial) = match t.shared {
            SharedEnd::Subject => (
                refined[i],
                *self.pair_union.at(o, j),
                self.spatial(tape, &boxes[i], &boxes[o].union(&boxes[j]))?,
            ),
            SharedEnd::Object => (
                *self.pair_union.at(i, o),
                refined[j],
                self.spatial(tape, &boxes[i].union(&boxes[o]), &boxes[j])?,
            ),
        };
        let c = tape.add(union, spatial)?;
        Ok((a, b, c))
    }
}

/// Runs the network on one scene for the given candidate pairs. With HMP on,
/// the transformer runs once unsigned to get class scores for the sign
/// gates, then again with the gates applied.
pub fn forward(
    tape: &mut Tape,
    model: &ModelParams,
    cfg: &TrainConfig,
    g: &SceneGraph,
    candidates: &[(usize, usize)],
    task: Task,
) -> Result<SceneOutput> {
    let n = g.len();
    if n == 0 {
        return Err(Error::Contract("scene without nodes".into()));
    }
    if let Some(&(i, j)) = candidates.iter().find(|&&(i, j)| i >= n || j >= n || i == j) {
        return Err(Error::Contract(format!("invalid candidate pair ({i}, {j})")));
    }
    let store = &model.store;
    let inputs = g
        .nodes
        .iter()
        .map(|nd| node_input(tape, store, &model.input, nd, g.canvas))
        .collect::<Result<Vec<_>>>()?;
    let mut cx = SceneContext {
        model,
        g,
        pair_union: PairGrid::new(n),
        triple_union: HashMap::new(),
    };
    for i in 0..n {
        for j in i + 1..n {
            let u = model.input.union_feature(tape, store, union_appearance(&[i, j], g)?)?;
            cx.pair_union.set(i, j, u);
            cx.pair_union.set(j, i, u);
        }
    }
    let mut context = PairGrid::new(n);
    for (i, j) in g.ordered_pairs() {
        let b = cx.spatial(tape, &g.nodes[i].bbox, &g.nodes[j].bbox)?;
        context.set(i, j, tape.add(*cx.pair_union.at(i, j), b)?);
    }

    let mut node_signs = Vec::new();
    let art = if cfg.hmp {
        let first = run_art(tape, store, &model.art, &inputs, &context, None)?;
        let mut grid = PairGrid::new(n);
        for (i, j) in g.ordered_pairs() {
            let s = node_sign(tape, store, &model.hmp, *context.at(i, j), first.scores[i], first.scores[j])?;
            grid.set(i, j, s);
            node_signs.push(s);
        }
        run_art(tape, store, &model.art, &inputs, &context, Some(&grid))?
    } else {
        run_art(tape, store, &model.art, &inputs, &context, None)?
    };

    let classes: Vec<usize> = match task {
        Task::Predcls => g.nodes.iter().map(|nd| nd.class_label).collect(),
        Task::Sgcls => art.scores.iter().map(|&v| argmax(tape.value(v))).collect(),
    };

    let mut initial = Vec::with_capacity(candidates.len());
    for &(i, j) in candidates {
        let r = relationship_feature(tape, store, &model.rfp, art.refined[i], art.refined[j], *context.at(i, j))?;
        initial.push(init_scores(tape, store, &model.rfp, r)?);
    }
    let terms = if cfg.rfp {
        edge_terms(candidates, n)
    } else {
        vec![Vec::new(); candidates.len()]
    };
    let mut edge_signs = Vec::with_capacity(candidates.len());
    let mut hoods = Vec::with_capacity(candidates.len());
    for (&(i, j), ts) in candidates.iter().zip(&terms) {
        let alpha = if ts.is_empty() {
            None
        } else {
            Some(joint_alpha(tape, &art.coefficients, i, j)?)
        };
        let mut signs = Vec::with_capacity(ts.len());
        for t in ts {
            signs.push(if cfg.hmp {
                let (a, b, c) = cx.edge_sign_inputs(tape, &art.refined, (i, j), t)?;
                Some(edge_sign(tape, store, &model.hmp, a, b, c)?)
            } else {
                None
            });
        }
        edge_signs.push(signs.clone());
        hoods.push(RelNeighborhood {
            terms: ts.clone(),
            alpha,
            signs,
        });
    }
    let scores = if cfg.rfp {
        propagate(tape, &initial, &hoods, model.rfp.beta, model.rfp.steps)?
    } else {
        initial
    };

    let mut rel_logits = Vec::with_capacity(candidates.len());
    let mut rel_scores = Vec::with_capacity(candidates.len());
    for (&(i, j), &p) in candidates.iter().zip(&scores) {
        let row = model.freq.row(classes[i], classes[j]);
        let (l, t) = classify_relationships(tape, p, &row)?;
        rel_logits.push(l);
        rel_scores.push(t);
    }
    Ok(SceneOutput {
        node_logits: art.logits,
        node_scores: art.scores,
        candidates: candidates.to_vec(),
        terms,
        rel_logits,
        rel_scores,
        node_signs,
        edge_signs,
    })
}

/// Targets for one scene's loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLabels {
    pub nodes: Vec<usize>,
    /// Per candidate: 0 for background, `predicate + 1` otherwise.
    pub relations: Vec<usize>,
    pub signs: SignLabels,
}

pub fn scene_labels(g: &SceneGraph, pairs: &[SampledPair], terms: &[Vec<EdgeTerm>]) -> SceneLabels {
    let candidates: Vec<(usize, usize)> = pairs.iter().map(|p| (p.subject, p.object)).collect();
    SceneLabels {
        nodes: g.nodes.iter().map(|n| n.class_label).collect(),
        relations: pairs.iter().map(|p| p.predicate.map_or(0, |c| c + 1)).collect(),
        signs: sign_labels(g, &candidates, terms),
    }
}

/// Scalar values of each loss term alongside the differentiable total.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub total: Var,
    pub node: f64,
    pub relation: f64,
    pub node_sign: f64,
    pub edge_sign: f64,
}

impl LossBreakdown {
    pub fn value(&self) -> f64 {
        self.node + self.relation + self.node_sign + self.edge_sign
    }
}

fn mean(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let s = tape.add_n(terms)?;
    Ok(tape.scale(s, 1.0 / terms.len() as f64))
}

/// Node and relationship cross-entropies plus both sign BCE terms, unit
/// weights. Terms with nothing to supervise contribute exactly zero.
pub fn total_loss(tape: &mut Tape, out: &SceneOutput, labels: &SceneLabels) -> Result<LossBreakdown> {
    if labels.nodes.len() != out.node_logits.len() || labels.relations.len() != out.rel_logits.len() {
        return Err(Error::dim(
            &[out.node_logits.len(), out.rel_logits.len()],
            &[labels.nodes.len(), labels.relations.len()],
            "loss labels",
        ));
    }
    if out.node_logits.is_empty() {
        return Err(Error::Contract("loss over a scene without nodes".into()));
    }
    let mut parts = Vec::with_capacity(4);
    let ce = out
        .node_logits
        .iter()
        .zip(&labels.nodes)
        .map(|(&l, &y)| tape.cross_entropy(l, y))
        .collect::<Result<Vec<_>>>()?;
    let node = mean(tape, &ce)?;
    parts.push(node);
    let mut breakdown = LossBreakdown {
        total: node,
        node: tape.scalar(node),
        relation: 0.0,
        node_sign: 0.0,
        edge_sign: 0.0,
    };
    if !out.rel_logits.is_empty() {
        let ce = out
            .rel_logits
            .iter()
            .zip(&labels.relations)
            .map(|(&l, &y)| tape.cross_entropy(l, y))
            .collect::<Result<Vec<_>>>()?;
        let rel = mean(tape, &ce)?;
        breakdown.relation = tape.scalar(rel);
        parts.push(rel);
    }
    if !out.node_signs.is_empty() {
        if out.node_signs.len() != labels.signs.nodes.len() {
            return Err(Error::dim(&[out.node_signs.len()], &[labels.signs.nodes.len()], "node sign labels"));
        }
        let ys: Vec<f64> = labels.signs.nodes.iter().map(|&(_, y)| y).collect();
        let l = sign_bce_loss(tape, &out.node_signs, &ys)?;
        breakdown.node_sign = tape.scalar(l);
        parts.push(l);
    }
    let mut edge = Vec::new();
    let mut ys = Vec::new();
    for &((a, k), y) in &labels.signs.edges {
        if let Some(Some(s)) = out.edge_signs.get(a).and_then(|v| v.get(k)) {
            edge.push(*s);
            ys.push(y);
        }
    }
    if !edge.is_empty() {
        let l = sign_bce_loss(tape, &edge, &ys)?;
        breakdown.edge_sign = tape.scalar(l);
        parts.push(l);
    }
    breakdown.total = tape.add_n(&parts)?;
    let v = tape.scalar(breakdown.total);
    if !v.is_finite() {
        return Err(Error::Numeric(format!("non-finite total loss {v}")));
    }
    Ok(breakdown)
}
