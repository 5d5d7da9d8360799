//! Synthetic scene graphs: boxes, classes, triplets and derived features.

mod features;
mod freq;
mod gen;
mod io;
mod sampling;
mod spatial;

pub use features::{node_geometry, node_input, union_appearance, InputEncoder};
pub use freq::{build_frequency_bias, FrequencyBias};
pub use gen::{derive_seed, generate_corpus, materialize_features, Corpus, GenConfig, Split};
pub use io::{read_corpus_dir, read_split, split_file_name, write_corpus_dir, write_split, CONFIG_FILE};
pub use sampling::{sample_pairs, SampledPair};
pub use spatial::{encode_spatial, spatial_binary_maps, BinaryMaps, SpatialEncoder, GRID};

use crate::error::{Error, Result};

/// Axis-aligned box in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::Contract(format!(
                "degenerate box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Tight box around both inputs.
    pub fn union(&self, o: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(o.x1),
            y1: self.y1.min(o.y1),
            x2: self.x2.max(o.x2),
            y2: self.y2.max(o.y2),
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }

    pub fn within(&self, canvas: Canvas) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= canvas.width && self.y2 <= canvas.height
    }
}

/// Dense table over ordered node pairs `(i, j)`, `i != j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrid<T> {
    n: usize,
    cells: Vec<Option<T>>,
}

impl<T: Clone> PairGrid<T> {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            cells: vec![None; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&T> {
        if i >= self.n || j >= self.n {
            return None;
        }
        self.cells[i * self.n + j].as_ref()
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.cells[i * self.n + j] = Some(v);
    }

    /// Value for `(i, j)`; panics when the cell was never filled.
    pub fn at(&self, i: usize, j: usize) -> &T {
        self.get(i, j)
            .unwrap_or_else(|| panic!("pair ({i}, {j}) missing from grid"))
    }
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Canvas {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectNode {
    pub id: usize,
    pub bbox: BBox,
    pub class_label: usize,
    pub appearance: Vec<f64>,
    pub detector_probs: Vec<f64>,
}

/// Subject-predicate-object triplet. `predicate` indexes foreground
/// categories `0..C_rel`; background pairs are simply absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub subject: usize,
    pub object: usize,
    pub predicate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub canvas: Canvas,
    pub nodes: Vec<ObjectNode>,
    pub triplets: Vec<Triplet>,
    /// Seed keying synthetic union-box appearance noise.
    pub feature_seed: u64,
    pub union_noise: f64,
}

impl SceneGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Neighbors of `i`: every other node in the scene.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(move |&j| j != i)
    }

    /// All ordered pairs `(i, j)` with `i != j`, lexicographic.
    pub fn ordered_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.nodes.len();
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect()
    }

    /// Ground-truth predicate for an ordered pair, if any.
    pub fn predicate_of(&self, i: usize, j: usize) -> Option<usize> {
        self.triplets
            .iter()
            .find(|t| t.subject == i && t.object == j)
            .map(|t| t.predicate)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, n) in self.nodes.iter().enumerate() {
            if n.id != k {
                return Err(Error::Contract(format!("node {k} carries id {}", n.id)));
            }
            if !n.bbox.within(self.canvas) {
                return Err(Error::Contract(format!("node {k} box outside canvas")));
            }
        }
        for t in &self.triplets {
            if t.subject == t.object || t.subject >= self.len() || t.object >= self.len() {
                return Err(Error::Contract(format!("invalid triplet {t:?}")));
            }
        }
        Ok(())
    }

    /// True when node `i` overlaps any other node with IoU above 0.5.
    pub fn is_occluded(&self, i: usize) -> bool {
        self.neighbors(i)
            .any(|j| iou(&self.nodes[i].bbox, &self.nodes[j].bbox) > 0.5)
    }
}

/// Mean over nodes of the fraction of same-class neighbors, on the
/// scene's complete neighborhoods. Nodes without neighbors are skipped.
pub fn homophily(g: &SceneGraph) -> Result<f64> {
    let classes: Vec<usize> = g.nodes.iter().map(|n| n.class_label).collect();
    let neighbors: Vec<Vec<usize>> = (0..g.len()).map(|i| g.neighbors(i).collect()).collect();
    homophily_on(&classes, &neighbors)
}

/// Homophily over an explicit neighbor list.
pub fn homophily_on(classes: &[usize], neighbors: &[Vec<usize>]) -> Result<f64> {
    let mut total = 0.0;
    let mut eligible = 0usize;
    for (i, nb) in neighbors.iter().enumerate() {
        if nb.is_empty() {
            continue;
        }
        let same = nb.iter().filter(|&&j| classes[j] == classes[i]).count();
        total += same as f64 / nb.len() as f64;
        eligible += 1;
    }
    if eligible == 0 {
        return Err(Error::UndefinedMetric(
            "homophily needs at least one node with a neighbor".into(),
        ));
    }
    Ok(total / eligible as f64)
}

/// Homophily of a class assignment on the complete graph.
pub(crate) fn homophily_of_classes(classes: &[usize]) -> Option<f64> {
    let n = classes.len();
    if n < 2 {
        return None;
    }
    let total: f64 = (0..n)
        .map(|i| {
            let same = (0..n).filter(|&j| j != i && classes[j] == classes[i]).count();
            same as f64 / (n - 1) as f64
        })
        .sum();
    Some(total / n as f64)
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn node(id: usize, b: (f64, f64, f64, f64), class: usize) -> ObjectNode {
        ObjectNode {
            id,
            bbox: BBox::new(b.0, b.1, b.2, b.3).unwrap(),
            class_label: class,
            appearance: vec![0.0; 4],
            detector_probs: vec![1.0],
        }
    }

    pub fn scene(nodes: Vec<ObjectNode>, triplets: Vec<Triplet>) -> SceneGraph {
        SceneGraph {
            canvas: Canvas {
                width: 100.0,
                height: 100.0,
            },
            nodes,
            triplets,
            feature_seed: 1,
            union_noise: 0.0,
        }
    }

    pub fn classes_scene(classes: &[usize]) -> SceneGraph {
        let nodes = classes
            .iter()
            .enumerate()
            .map(|(i, &c)| node(i, (i as f64, 0.0, i as f64 + 1.0, 1.0), c))
            .collect();
        scene(nodes, vec![])
    }
}
