//! Seeded synthetic corpus with controllable homophily and occlusion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config;
use crate::error::{Error, Result};
use crate::numcore::softmax_values;

use super::{homophily, homophily_of_classes, iou, BBox, Canvas, ObjectNode, SceneGraph, Triplet};

const PROTO_TAG: u64 = 1;
const TABLE_TAG: u64 = 2;
const PARTNER_TAG: u64 = 3;
const SKELETON_TAG: u64 = 4;
const APPEARANCE_TAG: u64 = 5;
const DETECTOR_TAG: u64 = 6;
const FEATURE_TAG: u64 = 7;

const CANVAS: f64 = 100.0;
const CLASS_CANDIDATES: usize = 8;

/// SplitMix64 fold over `parts`.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 11,
            Split::Val => 12,
            Split::Test => 13,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub num_obj_classes: usize,
    pub num_rel_classes: usize,
    pub d_app: usize,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub test_scenes: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub min_rels: usize,
    pub max_rels: usize,
    /// Target corpus-average homophily.
    pub homophily: f64,
    /// Probability that a placed node is generated as an occluder of an earlier one.
    pub occlusion_rate: f64,
    /// Weight of the occluder's appearance mixed into an occluded node.
    pub mix_weight: f64,
    /// Per-dimension std of appearance noise around the class prototype.
    pub noise: f64,
    /// Probability that a non-copied class is drawn from the partner of an existing class.
    pub partner_affinity: f64,
    pub predicate_noise: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_obj_classes: 10,
            num_rel_classes: 6,
            d_app: 32,
            train_scenes: 500,
            val_scenes: 50,
            test_scenes: 100,
            min_nodes: 4,
            max_nodes: 7,
            min_rels: 2,
            max_rels: 4,
            homophily: 0.2,
            occlusion_rate: 0.15,
            mix_weight: 0.4,
            noise: 0.25,
            partner_affinity: 0.5,
            predicate_noise: 0.1,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_obj_classes == 0 || self.num_rel_classes == 0 || self.d_app == 0 {
            return bad("class counts and d_app must be positive");
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return bad("homophily must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.mix_weight) {
            return bad("mix_weight must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.occlusion_rate)
            || !(0.0..=1.0).contains(&self.partner_affinity)
            || !(0.0..=1.0).contains(&self.predicate_noise)
        {
            return bad("rates must lie in [0, 1]");
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return bad("noise must be non-negative");
        }
        if self.min_nodes < 2 || self.max_nodes < self.min_nodes || self.max_nodes > 16 {
            return bad("node range must satisfy 2 <= min <= max <= 16");
        }
        if self.min_rels == 0 || self.max_rels < self.min_rels {
            return bad("relation range must satisfy 1 <= min <= max");
        }
        let floor = (self.min_nodes..=self.max_nodes)
            .map(|n| min_homophily(n, self.num_obj_classes))
            .fold(f64::INFINITY, f64::min);
        if self.homophily < floor - 0.05 {
            return Err(Error::Config(format!(
                "homophily {} infeasible with {} classes (minimum {floor:.3})",
                self.homophily, self.num_obj_classes
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        config::write_kv(&[
            ("num_obj_classes", self.num_obj_classes.to_string()),
            ("num_rel_classes", self.num_rel_classes.to_string()),
            ("d_app", self.d_app.to_string()),
            ("train_scenes", self.train_scenes.to_string()),
            ("val_scenes", self.val_scenes.to_string()),
            ("test_scenes", self.test_scenes.to_string()),
            ("min_nodes", self.min_nodes.to_string()),
            ("max_nodes", self.max_nodes.to_string()),
            ("min_rels", self.min_rels.to_string()),
            ("max_rels", self.max_rels.to_string()),
            ("homophily", self.homophily.to_string()),
            ("occlusion_rate", self.occlusion_rate.to_string()),
            ("mix_weight", self.mix_weight.to_string()),
            ("noise", self.noise.to_string()),
            ("partner_affinity", self.partner_affinity.to_string()),
            ("predicate_noise", self.predicate_noise.to_string()),
            ("seed", self.seed.to_string()),
        ])
    }

    /// Overrides fields present in `map`; unknown keys are ignored.
    pub fn apply_kv(&mut self, map: &std::collections::BTreeMap<String, String>) -> Result<()> {
        use config::set;
        set(map, "num_obj_classes", &mut self.num_obj_classes)?;
        set(map, "num_rel_classes", &mut self.num_rel_classes)?;
        set(map, "d_app", &mut self.d_app)?;
        set(map, "train_scenes", &mut self.train_scenes)?;
        set(map, "val_scenes", &mut self.val_scenes)?;
        set(map, "test_scenes", &mut self.test_scenes)?;
        set(map, "min_nodes", &mut self.min_nodes)?;
        set(map, "max_nodes", &mut self.max_nodes)?;
        set(map, "min_rels", &mut self.min_rels)?;
        set(map, "max_rels", &mut self.max_rels)?;
        set(map, "homophily", &mut self.homophily)?;
        set(map, "occlusion_rate", &mut self.occlusion_rate)?;
        set(map, "mix_weight", &mut self.mix_weight)?;
        set(map, "noise", &mut self.noise)?;
        set(map, "partner_affinity", &mut self.partner_affinity)?;
        set(map, "predicate_noise", &mut self.predicate_noise)?;
        set(map, "seed", &mut self.seed)?;
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(&config::parse_kv(text)?)?;
        Ok(cfg)
    }

    fn scenes(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_scenes,
            Split::Val => self.val_scenes,
            Split::Test => self.test_scenes,
        }
    }
}

/// Smallest homophily a complete graph on `n` nodes can reach with `c` classes.
fn min_homophily(n: usize, c: usize) -> f64 {
    let q = n / c;
    let r = n % c;
    let same = r * (q + 1) * q + (c - r) * q * q.saturating_sub(1);
    same as f64 / (n * (n - 1)) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: GenConfig,
    pub train: Vec<SceneGraph>,
    pub val: Vec<SceneGraph>,
    pub test: Vec<SceneGraph>,
}

impl Corpus {
    pub fn split(&self, s: Split) -> &[SceneGraph] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, s: Split) -> &mut Vec<SceneGraph> {
        match s {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    /// Mean scene homophily over all splits.
    pub fn mean_homophily(&self) -> Option<f64> {
        let hs: Vec<f64> = Split::ALL
            .iter()
            .flat_map(|&s| self.split(s).iter())
            .filter_map(|g| homophily(g).ok())
            .collect();
        (!hs.is_empty()).then(|| hs.iter().sum::<f64>() / hs.len() as f64)
    }
}

/// Fixed unit-norm appearance prototype per object class.
fn prototypes(cfg: &GenConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, PROTO_TAG]));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..cfg.num_obj_classes)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.d_app).map(|_| normal.sample(&mut rng)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|a| a / norm).collect()
        })
        .collect()
}

/// Base predicate per (subject class, object class).
fn predicate_table(cfg: &GenConfig) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, TABLE_TAG]));
    (0..cfg.num_obj_classes * cfg.num_obj_classes)
        .map(|_| rng.random_range(0..cfg.num_rel_classes))
        .collect()
}

/// Partner class per class; a derangement when more than one class exists.
fn partners(cfg: &GenConfig) -> Vec<usize> {
    let c = cfg.num_obj_classes;
    if c == 1 {
        return vec![0];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, PARTNER_TAG]));
    let shift = rng.random_range(1..c);
    (0..c).map(|k| (k + shift) % c).collect()
}

fn sample_classes<R: Rng>(n: usize, copy_prob: f64, cfg: &GenConfig, partner: &[usize], rng: &mut R) -> Vec<usize> {
    let c = cfg.num_obj_classes;
    let mut out: Vec<usize> = Vec::with_capacity(n);
    for k in 0..n {
        let cls = if k == 0 {
            rng.random_range(0..c)
        } else if rng.random_bool(copy_prob) {
            out[rng.random_range(0..k)]
        } else if rng.random_bool(cfg.partner_affinity) {
            partner[out[rng.random_range(0..k)]]
        } else {
            rng.random_range(0..c)
        };
        out.push(cls);
    }
    out
}

fn distinct_classes<R: Rng>(n: usize, c: usize, rng: &mut R) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..c).collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        if pool.is_empty() {
            pool = (0..c).collect();
        }
        out.push(pool.swap_remove(rng.random_range(0..pool.len())));
    }
    out
}

fn int_box<R: Rng>(rng: &mut R) -> BBox {
    let w = rng.random_range(15..=40) as f64;
    let h = rng.random_range(15..=40) as f64;
    let x1 = rng.random_range(0..=(CANVAS - w) as i64) as f64;
    let y1 = rng.random_range(0..=(CANVAS - h) as i64) as f64;
    BBox { x1, y1, x2: x1 + w, y2: y1 + h }
}

fn occluder_box<R: Rng>(of: &BBox, rng: &mut R) -> BBox {
    for _ in 0..20 {
        let w = (of.width() + rng.random_range(-4..=4) as f64).clamp(8.0, CANVAS);
        let h = (of.height() + rng.random_range(-4..=4) as f64).clamp(8.0, CANVAS);
        let x1 = (of.x1 + rng.random_range(-5..=5) as f64).clamp(0.0, CANVAS - w);
        let y1 = (of.y1 + rng.random_range(-5..=5) as f64).clamp(0.0, CANVAS - h);
        let b = BBox { x1, y1, x2: x1 + w, y2: y1 + h };
        if iou(&b, of) > 0.5 {
            return b;
        }
    }
    *of
}

fn place_boxes<R: Rng>(n: usize, cfg: &GenConfig, rng: &mut R) -> Vec<BBox> {
    let mut boxes: Vec<BBox> = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 && rng.random_bool(cfg.occlusion_rate) {
            let of = boxes[rng.random_range(0..k)];
            boxes.push(occluder_box(&of, rng));
            continue;
        }
        let mut b = int_box(rng);
        for _ in 0..20 {
            if boxes.iter().all(|o| iou(o, &b) <= 0.3) {
                break;
            }
            b = int_box(rng);
        }
        boxes.push(b);
    }
    boxes
}

/// Direction bin of the object relative to the subject: right, left, below, above.
fn geometry_bin(s: &BBox, o: &BBox) -> usize {
    let (sx, sy) = s.center();
    let (ox, oy) = o.center();
    let (dx, dy) = (ox - sx, oy - sy);
    if dx.abs() >= dy.abs() {
        if dx >= 0.0 { 0 } else { 1 }
    } else if dy >= 0.0 {
        2
    } else {
        3
    }
}

fn relations<R: Rng>(boxes: &[BBox], classes: &[usize], cfg: &GenConfig, table: &[usize], rng: &mut R) -> Vec<Triplet> {
    let n = boxes.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (ax, ay) = boxes[i].center();
            let (bx, by) = boxes[j].center();
            pairs.push(((ax - bx).hypot(ay - by), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let count = rng.random_range(cfg.min_rels..=cfg.max_rels).min(pairs.len());
    let mut out: Vec<Triplet> = pairs[..count]
        .iter()
        .map(|&(_, i, j)| {
            let (s, o) = if boxes[j].area() > boxes[i].area() { (j, i) } else { (i, j) };
            let base = table[classes[s] * cfg.num_obj_classes + classes[o]];
            let mut predicate = (base + geometry_bin(&boxes[s], &boxes[o])) % cfg.num_rel_classes;
            if rng.random_bool(cfg.predicate_noise) {
                predicate = rng.random_range(0..cfg.num_rel_classes);
            }
            Triplet { subject: s, object: o, predicate }
        })
        .collect();
    out.sort();
    out
}

/// Regenerates appearance, detector probabilities and union-noise keys for a
/// scene whose boxes and classes are already set. Pure in (cfg, split, index).
pub fn materialize_features(g: &mut SceneGraph, cfg: &GenConfig, split: Split, index: usize) -> Result<()> {
    let protos = prototypes(cfg);
    materialize_with(g, cfg, &protos, split, index)
}

fn materialize_with(
    g: &mut SceneGraph,
    cfg: &GenConfig,
    protos: &[Vec<f64>],
    split: Split,
    index: usize,
) -> Result<()> {
    let normal = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let scene_key = [cfg.seed, split.tag(), index as u64];
    let raw: Vec<Vec<f64>> = g
        .nodes
        .iter()
        .map(|n| {
            if n.class_label >= cfg.num_obj_classes {
                return Err(Error::Config(format!(
                    "class {} out of range for {} classes",
                    n.class_label, cfg.num_obj_classes
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                scene_key[0],
                scene_key[1],
                scene_key[2],
                APPEARANCE_TAG,
                n.id as u64,
                n.class_label as u64,
            ]));
            Ok(protos[n.class_label]
                .iter()
                .map(|p| p + normal.sample(&mut rng))
                .collect())
        })
        .collect::<Result<_>>()?;

    let n = g.nodes.len();
    for i in 0..n {
        let occluders: Vec<usize> = (0..n)
            .filter(|&j| j != i && iou(&g.nodes[i].bbox, &g.nodes[j].bbox) > 0.5)
            .collect();
        let mut a = raw[i].clone();
        if !occluders.is_empty() {
            for (k, v) in a.iter_mut().enumerate() {
                let mean = occluders.iter().map(|&j| raw[j][k]).sum::<f64>() / occluders.len() as f64;
                *v = (1.0 - cfg.mix_weight) * *v + cfg.mix_weight * mean;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
            scene_key[0],
            scene_key[1],
            scene_key[2],
            DETECTOR_TAG,
            i as u64,
        ]));
        let det_noise = Normal::new(0.0, 0.5).expect("fixed std");
        let logits: Vec<f64> = protos
            .iter()
            .map(|p| 4.0 * p.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>() + det_noise.sample(&mut rng))
            .collect();
        g.nodes[i].appearance = a;
        g.nodes[i].detector_probs = softmax_values(&logits);
    }
    g.feature_seed = derive_seed(&[scene_key[0], scene_key[1], scene_key[2], FEATURE_TAG]);
    g.union_noise = cfg.noise * 0.5;
    Ok(())
}

/// Builds train/val/test splits. Deterministic in `cfg`.
pub fn generate_corpus(cfg: &GenConfig) -> Result<Corpus> {
    cfg.validate()?;
    let protos = prototypes(cfg);
    let table = predicate_table(cfg);
    let partner = partners(cfg);
    let mut corpus = Corpus {
        config: cfg.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for split in Split::ALL {
        let mut h_sum = 0.0;
        let mut scenes = Vec::with_capacity(cfg.scenes(split));
        for index in 0..cfg.scenes(split) {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, split.tag(), index as u64, SKELETON_TAG]));
            let n = rng.random_range(cfg.min_nodes..=cfg.max_nodes);

            // pick the candidate assignment that moves the running mean closest to the target
            let mut best: Option<(f64, Vec<usize>, f64)> = None;
            let mut candidates: Vec<Vec<usize>> = (0..CLASS_CANDIDATES)
                .map(|k| {
                    let rho = k as f64 / (CLASS_CANDIDATES - 1) as f64;
                    sample_classes(n, rho, cfg, &partner, &mut rng)
                })
                .collect();
            candidates.push(distinct_classes(n, cfg.num_obj_classes, &mut rng));
            for cand in candidates {
                let h = homophily_of_classes(&cand).unwrap_or(1.0);
                let gap = ((h_sum + h) / (index + 1) as f64 - cfg.homophily).abs();
                if best.as_ref().is_none_or(|b| gap < b.0) {
                    best = Some((gap, cand, h));
                }
            }
            let (_, classes, h) = best.expect("at least one candidate");
            h_sum += h;

            let boxes = place_boxes(n, cfg, &mut rng);
            let triplets = relations(&boxes, &classes, cfg, &table, &mut rng);
            let mut g = SceneGraph {
                canvas: Canvas { width: CANVAS, height: CANVAS },
                nodes: boxes
                    .iter()
                    .zip(&classes)
                    .enumerate()
                    .map(|(id, (b, &c))| ObjectNode {
                        id,
                        bbox: *b,
                        class_label: c,
                        appearance: Vec::new(),
                        detector_probs: Vec::new(),
                    })
                    .collect(),
                triplets,
                feature_seed: 0,
                union_noise: 0.0,
            };
            materialize_with(&mut g, cfg, &protos, split, index)?;
            scenes.push(g);
        }
        *corpus.split_mut(split) = scenes;
    }
    Ok(corpus)
}
