use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SceneGraph;

/// Ordered pair chosen for training; `predicate` is `None` for background.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampledPair {
    pub subject: usize,
    pub object: usize,
    pub predicate: Option<usize>,
}

/// All ground-truth pairs plus up to `ratio` times as many background pairs
/// drawn without replacement. Sorted by `(subject, object)`.
pub fn sample_pairs(g: &SceneGraph, ratio: usize, seed: u64) -> Vec<SampledPair> {
    let mut out: Vec<SampledPair> = Vec::new();
    let mut background: Vec<(usize, usize)> = Vec::new();
    for (i, j) in g.ordered_pairs() {
        match g.predicate_of(i, j) {
            Some(p) => out.push(SampledPair { subject: i, object: j, predicate: Some(p) }),
            None => background.push((i, j)),
        }
    }
    let want = (ratio * out.len()).min(background.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in index::sample(&mut rng, background.len(), want) {
        let (i, j) = background[k];
        out.push(SampledPair { subject: i, object: j, predicate: None });
    }
    out.sort_by_key(|p| (p.subject, p.object));
    out
}
