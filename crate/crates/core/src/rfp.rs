//! Relationship feature propagation: fused pair features, initial predicate
//! logits, and teleport-style propagation between relationships that share
//! an endpoint.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{linear, Linear, ParamStore, Tape, Var};
use crate::scenedata::PairGrid;

/// Weight pair of the fusion operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fusion {
    pub left: Linear,
    pub right: Linear,
}

impl Fusion {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_left: usize, in_right: usize, out: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            left: Linear::new(store, &format!("{name}.left"), in_left, out, false, rng)?,
            right: Linear::new(store, &format!("{name}.right"), in_right, out, false, rng)?,
        })
    }
}

/// `ReLU(W_x x + W_y y) - (W_x x - W_y y)^2`.
pub fn fuse(tape: &mut Tape, store: &ParamStore, f: &Fusion, x: Var, y: Var) -> Result<Var> {
    let a = linear(tape, store, &f.left, x)?;
    let b = linear(tape, store, &f.right, y)?;
    let s = tape.add(a, b)?;
    let s = tape.relu(s);
    let d = tape.sub(a, b)?;
    let d2 = tape.mul(d, d)?;
    tape.sub(s, d2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfpParams {
    pub pair_fusion: Fusion,
    pub context_fusion: Fusion,
    pub hidden: Linear,
    pub score: Linear,
    pub beta: f64,
    pub steps: usize,
}

impl RfpParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        dim: usize,
        num_rel_classes: usize,
        beta: f64,
        steps: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self {
            pair_fusion: Fusion::new(store, "rfp.pair_fusion", dim, dim, dim, rng)?,
            context_fusion: Fusion::new(store, "rfp.context_fusion", dim, dim, dim, rng)?,
            hidden: Linear::new(store, "rfp.hidden", dim, dim, false, rng)?,
            score: Linear::new(store, "rfp.score", dim, num_rel_classes + 1, false, rng)?,
            beta,
            steps,
        })
    }
}

pub fn check_beta(beta: f64) -> Result<()> {
    if beta.is_nan() || beta.abs() >= 1.0 {
        return Err(Error::Config(format!("teleport beta must satisfy |beta| < 1, got {beta}")));
    }
    Ok(())
}

/// `r_ij = (x̂_i * x̂_j) * (x_ij + B_ij)`; `context` is the summed pair context.
pub fn relationship_feature(
    tape: &mut Tape,
    store: &ParamStore,
    p: &RfpParams,
    refined_i: Var,
    refined_j: Var,
    context: Var,
) -> Result<Var> {
    let pair = fuse(tape, store, &p.pair_fusion, refined_i, refined_j)?;
    fuse(tape, store, &p.context_fusion, pair, context)
}

/// `p^0 = W_p ReLU(W_r r)`, logits over background plus each predicate.
pub fn init_scores(tape: &mut Tape, store: &ParamStore, p: &RfpParams, r: Var) -> Result<Var> {
    let h = linear(tape, store, &p.hidden, r)?;
    let h = tape.relu(h);
    linear(tape, store, &p.score, h)
}

/// Which endpoint a neighboring relationship shares with `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharedEnd {
    /// `r_il`, reached through `l` in the object's neighborhood.
    Subject,
    /// `r_mj`, reached through `m` in the subject's neighborhood.
    Object,
}

/// One summand of the neighbor message for a candidate pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeTerm {
    /// Index of the neighboring relationship in the candidate list.
    pub source: usize,
    /// Position of its coefficient in the joint normalization.
    pub slot: usize,
    pub shared: SharedEnd,
    /// The node that is not shared (`l` or `m`).
    pub other: usize,
}

/// Message terms for every candidate pair. Slots `0..n-1` hold `c_jl` for
/// `l != j` ascending, slots `n-1..2n-2` hold `c_im` for `m != i` ascending.
/// Only neighbors that are themselves candidates produce terms.
pub fn edge_terms(candidates: &[(usize, usize)], n: usize) -> Vec<Vec<EdgeTerm>> {
    let mut index = PairGrid::new(n);
    for (k, &(i, j)) in candidates.iter().enumerate() {
        index.set(i, j, k);
    }
    candidates
        .iter()
        .map(|&(i, j)| {
            let mut terms = Vec::new();
            for (slot, l) in (0..n).filter(|&l| l != j).enumerate() {
                if l == i {
                    continue;
                }
                if let Some(&source) = index.get(i, l) {
                    terms.push(EdgeTerm { source, slot, shared: SharedEnd::Subject, other: l });
                }
            }
            for (k, m) in (0..n).filter(|&m| m != i).enumerate() {
                if m == j {
                    continue;
                }
                if let Some(&source) = index.get(m, j) {
                    terms.push(EdgeTerm { source, slot: n - 1 + k, shared: SharedEnd::Object, other: m });
                }
            }
            terms
        })
        .collect()
}

/// Softmax over `{c_jl : l != j} ∪ {c_im : m != i}` in slot order.
pub fn joint_alpha(tape: &mut Tape, coefficients: &PairGrid<Var>, i: usize, j: usize) -> Result<Var> {
    let n = coefficients.n();
    let mut cs = Vec::with_capacity(2 * (n - 1));
    cs.extend((0..n).filter(|&l| l != j).map(|l| *coefficients.at(j, l)));
    cs.extend((0..n).filter(|&m| m != i).map(|m| *coefficients.at(i, m)));
    let c = tape.concat(&cs);
    tape.softmax(c)
}

/// Everything propagation needs for one candidate pair.
#[derive(Debug, Clone)]
pub struct RelNeighborhood {
    pub terms: Vec<EdgeTerm>,
    /// Joint normalized coefficients; may be absent when `terms` is empty.
    pub alpha: Option<Var>,
    /// Sign per term; `None` stands for +1.
    pub signs: Vec<Option<Var>>,
}

/// `H = sum q * alpha_slot * p_source` over the pair's terms; zero when isolated.
pub fn neighbor_messages(tape: &mut Tape, hood: &RelNeighborhood, scores: &[Var], width: usize) -> Result<Var> {
    if hood.terms.is_empty() {
        return Ok(tape.zeros(width));
    }
    let alpha = hood
        .alpha
        .ok_or_else(|| Error::Contract("neighbor terms without coefficients".into()))?;
    let mut parts = Vec::with_capacity(hood.terms.len());
    for (t, s) in hood.terms.iter().zip(&hood.signs) {
        let v = tape.scale_by(scores[t.source], alpha, t.slot)?;
        parts.push(match s {
            Some(s) => tape.scale_by(v, *s, 0)?,
            None => v,
        });
    }
    tape.add_n(&parts)
}

/// `p^{k+1} = beta (p^k + H^k) + (1 - beta) p^0`, `steps` times.
pub fn propagate(
    tape: &mut Tape,
    initial: &[Var],
    hoods: &[RelNeighborhood],
    beta: f64,
    steps: usize,
) -> Result<Vec<Var>> {
    check_beta(beta)?;
    if initial.len() != hoods.len() {
        return Err(Error::dim(&[initial.len()], &[hoods.len()], "propagate neighborhoods"));
    }
    if beta == 0.0 || steps == 0 {
        return Ok(initial.to_vec());
    }
    let mut current = initial.to_vec();
    for step in 1..=steps {
        let mut next = Vec::with_capacity(current.len());
        for (k, hood) in hoods.iter().enumerate() {
            if hood.terms.is_empty() {
                // p^0 is a fixed point of the recurrence when H = 0
                next.push(initial[k]);
                continue;
            }
            let width = tape.value(initial[k]).len();
            let h = neighbor_messages(tape, hood, &current, width)?;
            let s = tape.add(current[k], h)?;
            let a = tape.scale(s, beta);
            let b = tape.scale(initial[k], 1.0 - beta);
            let v = tape.add(a, b)?;
            if tape.value(v).iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite relationship score at propagation step {step}"
                )));
            }
            next.push(v);
        }
        current = next;
    }
    Ok(current)
}

/// `t = softmax(p^K + f)`, with no bias on the background logit at index 0.
/// Returns `(logits, t)`.
pub fn classify_relationships(tape: &mut Tape, scores: Var, freq_row: &[f64]) -> Result<(Var, Var)> {
    let width = tape.value(scores).len();
    if width != freq_row.len() + 1 {
        return Err(Error::dim(&[width], &[freq_row.len() + 1], "frequency bias row"));
    }
    let mut bias = Vec::with_capacity(width);
    bias.push(0.0);
    bias.extend_from_slice(freq_row);
    let bias = tape.vector(bias);
    let logits = tape.add(scores, bias)?;
    let t = tape.softmax(logits)?;
    Ok((logits, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{finite_diff_check, Coords};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(store: &mut ParamStore, name: &str, f: impl Fn(usize) -> f64) {
        let id = store.lookup(name).unwrap_or_else(|| panic!("{name}"));
        for (k, v) in store.get_mut(id).array.values_mut().iter_mut().enumerate() {
            *v = f(k);
        }
    }

    fn params(d: usize, c_rel: usize, seed: u64) -> (ParamStore, RfpParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = RfpParams::new(&mut store, d, c_rel, -0.5, 4, &mut rng).unwrap();
        (store, p)
    }

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn fuse_examples() {
        let (mut store, p) = params(1, 2, 0);
        set(&mut store, "rfp.pair_fusion.left.weight", |_| 1.0);
        set(&mut store, "rfp.pair_fusion.right.weight", |_| 1.0);
        let f = p.pair_fusion;
        let mut t = Tape::new();
        let x = t.vector(vec![1.0]);
        let y = t.vector(vec![-1.0]);
        let out = fuse(&mut t, &store, &f, x, y).unwrap();
        assert_eq!(t.value(out), &[-4.0]);
        let out = fuse(&mut t, &store, &f, x, x).unwrap();
        assert_eq!(t.value(out), &[2.0]);
        let neg = t.vector(vec![-3.0]);
        let out = fuse(&mut t, &store, &f, neg, neg).unwrap();
        assert_eq!(t.value(out), &[0.0]);

        set(&mut store, "rfp.pair_fusion.left.weight", |_| 0.0);
        set(&mut store, "rfp.pair_fusion.right.weight", |_| 0.0);
        let mut t = Tape::new();
        let x = t.vector(vec![1.0]);
        let y = t.vector(vec![-1.0]);
        let out = fuse(&mut t, &store, &f, x, y).unwrap();
        assert_eq!(t.value(out), &[0.0]);
    }

    #[test]
    fn fuse_rejects_mismatched_widths() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Fusion::new(&mut store, "f", 2, 3, 4, &mut rng).unwrap();
        let mut t = Tape::new();
        let x = t.vector(vec![1.0, 2.0]);
        assert!(matches!(fuse(&mut t, &store, &f, x, x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn relationship_feature_properties() {
        let d = 4;
        let (store, p) = params(d, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tape::new();
        let a = t.vector(rand_vec(&mut rng, d));
        let b = t.vector(rand_vec(&mut rng, d));
        let c = t.vector(rand_vec(&mut rng, d));
        let ab = relationship_feature(&mut t, &store, &p, a, b, c).unwrap();
        let ba = relationship_feature(&mut t, &store, &p, b, a, c).unwrap();
        assert_ne!(t.value(ab), t.value(ba));

        let mut zero = store.clone();
        zero.iter_mut().for_each(|q| q.array.values_mut().iter_mut().for_each(|v| *v = 0.0));
        let mut t = Tape::new();
        let z = t.zeros(d);
        let r = relationship_feature(&mut t, &zero, &p, z, z, z).unwrap();
        assert_eq!(t.value(r), vec![0.0; d].as_slice());
    }

    #[test]
    fn relationship_feature_gradients() {
        let d = 3;
        let (store, p) = params(d, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b, c) = (rand_vec(&mut rng, d), rand_vec(&mut rng, d), rand_vec(&mut rng, d));
        let rep = finite_diff_check(
            |t, s| {
                let (a, b, c) = (t.vector(a.clone()), t.vector(b.clone()), t.vector(c.clone()));
                let r = relationship_feature(t, s, &p, a, b, c)?;
                let q = t.mul(r, r)?;
                Ok(t.sum(q))
            },
            &store,
            1e-5,
            Coords::All,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn init_scores_examples() {
        let d = 3;
        let c_rel = 4;
        let (mut store, p) = params(d, c_rel, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rv = rand_vec(&mut rng, d);
        let mut t = Tape::new();
        let r = t.vector(rv.clone());
        let out = init_scores(&mut t, &store, &p, r).unwrap();
        assert_eq!(t.value(out).len(), c_rel + 1);

        let val = |name: &str, s: &ParamStore| s.get(s.lookup(name).unwrap()).array.values().to_vec();
        let wr = val("rfp.hidden.weight", &store);
        let wp = val("rfp.score.weight", &store);
        let h: Vec<f64> = wr.chunks(d).map(|row| row.iter().zip(&rv).map(|(a, b)| a * b).sum::<f64>().max(0.0)).collect();
        let want: Vec<f64> = wp.chunks(d).map(|row| row.iter().zip(&h).map(|(a, b)| a * b).sum()).collect();
        for (a, b) in t.value(out).iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }

        set(&mut store, "rfp.score.weight", |_| 0.0);
        let mut t = Tape::new();
        let r = t.vector(rv);
        let out = init_scores(&mut t, &store, &p, r).unwrap();
        assert!(t.value(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edge_terms_follow_printed_indexing() {
        // 3 nodes, candidates (0,1), (0,2), (2,1), (1,0)
        let cands = [(0, 1), (0, 2), (2, 1), (1, 0)];
        let terms = edge_terms(&cands, 3);
        // (0,1): l in N_1 \ {0} = {2} -> p_02 (source 1); m in N_0 \ {1} = {2} -> p_21 (source 2)
        assert_eq!(
            terms[0],
            vec![
                EdgeTerm { source: 1, slot: 1, shared: SharedEnd::Subject, other: 2 },
                EdgeTerm { source: 2, slot: 3, shared: SharedEnd::Object, other: 2 },
            ]
        );
        // (1,0): l = 2 -> p_12 missing; m = 2 -> p_20 missing
        assert!(terms[3].is_empty());
        // isolated pair
        assert!(edge_terms(&[(0, 1)], 5)[0].is_empty());
    }

    fn coefficient_grid(t: &mut Tape, n: usize, rng: &mut ChaCha8Rng) -> (PairGrid<Var>, Vec<f64>) {
        let mut g = PairGrid::new(n);
        let mut raw = vec![0.0; n * n];
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                raw[i * n + j] = rng.random_range(-2.0..2.0);
                g.set(i, j, t.vector(vec![raw[i * n + j]]));
            }
        }
        (g, raw)
    }

    proptest! {
        #[test]
        fn joint_alpha_is_a_distribution(seed in 0u64..500, n in 2usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = Tape::new();
            let (g, _) = coefficient_grid(&mut t, n, &mut rng);
            let a = joint_alpha(&mut t, &g, 0, n - 1).unwrap();
            prop_assert_eq!(t.value(a).len(), 2 * (n - 1));
            prop_assert!((t.value(a).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    fn hoods(t: &mut Tape, cands: &[(usize, usize)], coef: &PairGrid<Var>, signs: Option<f64>) -> Vec<RelNeighborhood> {
        edge_terms(cands, coef.n())
            .into_iter()
            .zip(cands)
            .map(|(terms, &(i, j))| {
                let alpha = (!terms.is_empty()).then(|| joint_alpha(t, coef, i, j).unwrap());
                let signs = terms.iter().map(|_| signs.map(|s| t.vector(vec![s]))).collect();
                RelNeighborhood { terms, alpha, signs }
            })
            .collect()
    }

    #[test]
    fn neighbor_messages_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut t = Tape::new();
        let (coef, raw) = coefficient_grid(&mut t, 3, &mut rng);
        let cands = [(0, 1), (0, 2), (2, 1)];
        let ps: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, 3)).collect();
        let pv: Vec<Var> = ps.iter().map(|p| t.vector(p.clone())).collect();

        let h = hoods(&mut t, &cands, &coef, None);
        let m = neighbor_messages(&mut t, &h[0], &pv, 3).unwrap();
        // by hand: slots hold c_10, c_12, c_01, c_02
        let c = [raw[3], raw[5], raw[1], raw[2]];
        let z: f64 = c.iter().map(|v| v.exp()).sum();
        let a_12 = c[1].exp() / z;
        let a_02 = c[3].exp() / z;
        for k in 0..3 {
            let want = a_12 * ps[1][k] + a_02 * ps[2][k];
            assert!((t.value(m)[k] - want).abs() < 1e-14);
        }

        let h = hoods(&mut t, &cands, &coef, Some(0.0));
        let m = neighbor_messages(&mut t, &h[0], &pv, 3).unwrap();
        assert_eq!(t.value(m), &[0.0, 0.0, 0.0]);

        let lone = hoods(&mut t, &[(0, 1)], &coef, None);
        let m = neighbor_messages(&mut t, &lone[0], &pv[..1], 3).unwrap();
        assert_eq!(t.value(m), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn propagate_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut t = Tape::new();
        let (coef, _) = coefficient_grid(&mut t, 4, &mut rng);
        let all: Vec<(usize, usize)> = (0..4).flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j))).collect();
        let h = hoods(&mut t, &all, &coef, Some(0.3));
        let p0: Vec<Var> = all.iter().map(|_| t.vector(rand_vec(&mut rng, 3))).collect();

        let out = propagate(&mut t, &p0, &h, -0.5, 0).unwrap();
        assert_eq!(out, p0);
        let out = propagate(&mut t, &p0, &h, 0.0, 6).unwrap();
        for (a, b) in out.iter().zip(&p0) {
            assert_eq!(t.value(*a), t.value(*b));
        }

        let lone = hoods(&mut t, &[(0, 1)], &coef, None);
        for beta in [-0.9, -0.5, 0.0, 0.5, 0.9] {
            for k in 1..=8 {
                let out = propagate(&mut t, &p0[..1], &lone, beta, k).unwrap();
                assert_eq!(t.value(out[0]), t.value(p0[0]));
            }
        }
        assert!(matches!(propagate(&mut t, &p0, &h, 1.0, 2), Err(Error::Config(_))));
    }

    #[test]
    fn propagate_matches_teleport_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut t = Tape::new();
        let (coef, raw) = coefficient_grid(&mut t, 3, &mut rng);
        let cands: Vec<(usize, usize)> = (0..3).flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j))).collect();
        let h = hoods(&mut t, &cands, &coef, None);
        let p0v: Vec<Vec<f64>> = cands.iter().map(|_| rand_vec(&mut rng, 2)).collect();
        let p0: Vec<Var> = p0v.iter().map(|p| t.vector(p.clone())).collect();
        let beta = 0.35;
        let out = propagate(&mut t, &p0, &h, beta, 3).unwrap();

        // direct transcription with dense lookups
        let c = |a: usize, b: usize| raw[a * 3 + b];
        let idx = |a: usize, b: usize| cands.iter().position(|&q| q == (a, b));
        let mut p = p0v.clone();
        for _ in 0..3 {
            let mut next = Vec::new();
            for (k, &(i, j)) in cands.iter().enumerate() {
                let mut slots: Vec<(f64, Option<usize>)> = Vec::new();
                for l in (0..3).filter(|&l| l != j) {
                    slots.push((c(j, l), if l != i { idx(i, l) } else { None }));
                }
                for m in (0..3).filter(|&m| m != i) {
                    slots.push((c(i, m), if m != j { idx(m, j) } else { None }));
                }
                let z: f64 = slots.iter().map(|s| s.0.exp()).sum();
                let mut hv = [0.0; 2];
                for (cv, src) in &slots {
                    if let Some(s) = src {
                        for q in 0..2 {
                            hv[q] += cv.exp() / z * p[*s][q];
                        }
                    }
                }
                next.push((0..2).map(|q| beta * (p[k][q] + hv[q]) + (1.0 - beta) * p0v[k][q]).collect::<Vec<f64>>());
            }
            p = next;
        }
        for (a, b) in out.iter().zip(&p) {
            for (x, y) in t.value(*a).iter().zip(b) {
                assert!((x - y).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn propagate_reports_non_finite_step() {
        let mut t = Tape::new();
        let mut coef = PairGrid::new(2);
        coef.set(0, 1, t.vector(vec![0.0]));
        coef.set(1, 0, t.vector(vec![0.0]));
        // build a neighborhood by hand so (0,1) listens to (1,0)
        let alpha = joint_alpha(&mut t, &coef, 0, 1).unwrap();
        let h = vec![
            RelNeighborhood {
                terms: vec![EdgeTerm { source: 1, slot: 0, shared: SharedEnd::Subject, other: 0 }],
                alpha: Some(alpha),
                signs: vec![None],
            },
            RelNeighborhood { terms: vec![], alpha: None, signs: vec![] },
        ];
        let p0 = vec![t.vector(vec![1.0]), t.vector(vec![f64::MAX])];
        match propagate(&mut t, &p0, &h, 0.9, 3) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("step 3"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn classify_examples() {
        let mut t = Tape::new();
        let p = t.vector(vec![0.5, -1.0, 2.0]);
        let (_, a) = classify_relationships(&mut t, p, &[0.0, 0.0]).unwrap();
        let direct = t.softmax(p).unwrap();
        assert_eq!(t.value(a), t.value(direct));
        assert!((t.value(a).iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let near_zero = t.vector(vec![0.01, -0.02, 0.03, 0.0]);
        let (_, a) = classify_relationships(&mut t, near_zero, &[-10.0, 0.0, -10.0]).unwrap();
        let v = t.value(a);
        let best = (0..4).max_by(|&x, &y| v[x].total_cmp(&v[y])).unwrap();
        assert_eq!(best, 2);
        assert!(matches!(classify_relationships(&mut t, p, &[0.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn relationship_loss_gradients() {
        let d = 3;
        let (store, p) = params(d, 2, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 3;
        let xh: Vec<Vec<f64>> = (0..n).map(|_| rand_vec(&mut rng, d)).collect();
        let ctx: Vec<Vec<f64>> = (0..n * n).map(|_| rand_vec(&mut rng, d)).collect();
        let craw: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cands: Vec<(usize, usize)> = vec![(0, 1), (0, 2), (2, 1), (1, 2)];
        let rep = finite_diff_check(
            |t, s| {
                let xs: Vec<Var> = xh.iter().map(|x| t.vector(x.clone())).collect();
                let mut coef = PairGrid::new(n);
                for i in 0..n {
                    for j in (0..n).filter(|&j| j != i) {
                        coef.set(i, j, t.vector(vec![craw[i * n + j]]));
                    }
                }
                let hs = hoods(t, &cands, &coef, Some(-0.4));
                let mut p0 = Vec::new();
                for &(i, j) in &cands {
                    let c = t.vector(ctx[i * n + j].clone());
                    let r = relationship_feature(t, s, &p, xs[i], xs[j], c)?;
                    p0.push(init_scores(t, s, &p, r)?);
                }
                let pk = propagate(t, &p0, &hs, p.beta, 2)?;
                let mut losses = Vec::new();
                for (k, v) in pk.iter().enumerate() {
                    let (logits, _) = classify_relationships(t, *v, &[0.3, -0.2])?;
                    losses.push(t.cross_entropy(logits, k % 3)?);
                }
                t.add_n(&losses)
            },
            &store,
            1e-5,
            Coords::All,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }
}
