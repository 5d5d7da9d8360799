//! Adaptive reweighting transformer: Pre-LN neighbor aggregation with a
//! sign-allowed weighted sum over layer outputs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{
    ffn, layer_norm, linear, Ffn, InitSpec, LayerNorm, Linear, ParamId, ParamStore, Tape, Var, LN_EPS,
};
use crate::scenedata::PairGrid;

/// How the layer weights start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaInit {
    /// `(-tau)^(u-1)`, normalized to unit absolute sum.
    Alternating,
    /// Absolute values of the alternating weights.
    NonNegative,
    /// All weight on the last layer.
    LastLayer,
}

impl GammaInit {
    pub fn name(self) -> &'static str {
        match self {
            GammaInit::Alternating => "alternating",
            GammaInit::NonNegative => "nonnegative",
            GammaInit::LastLayer => "last",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "alternating" => Ok(GammaInit::Alternating),
            "nonnegative" => Ok(GammaInit::NonNegative),
            "last" => Ok(GammaInit::LastLayer),
            other => Err(Error::Config(format!("unknown gamma init `{other}`"))),
        }
    }
}

/// `gamma_u = (-tau)^(u-1) / sum |(-tau)^(u'-1)|` for `u = 1..=layers`.
pub fn init_gamma(tau: f64, layers: usize) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")));
    }
    if layers == 0 {
        return Err(Error::Config("at least one layer is required".into()));
    }
    let terms: Vec<f64> = (0..layers).map(|u| (-tau).powi(u as i32)).collect();
    let norm: f64 = terms.iter().map(|t| t.abs()).sum();
    Ok(terms.into_iter().map(|t| t / norm).collect())
}

pub fn gamma_values(init: GammaInit, tau: f64, layers: usize) -> Result<Vec<f64>> {
    let g = init_gamma(tau, layers)?;
    Ok(match init {
        GammaInit::Alternating => g,
        GammaInit::NonNegative => g.into_iter().map(f64::abs).collect(),
        GammaInit::LastLayer => {
            let mut v = vec![0.0; layers];
            v[layers - 1] = 1.0;
            v
        }
    })
}

/// Layer weights: learned, or frozen outside the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub enum Gamma {
    Learned(ParamId),
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArtLayer {
    pub coef_left: Linear,
    pub coef_right: Linear,
    pub coef_head: ParamId,
    pub message: Linear,
    pub message_norm: LayerNorm,
    pub ffn_norm: LayerNorm,
    pub ffn: Ffn,
}

impl ArtLayer {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            coef_left: Linear::new(store, &format!("{name}.coef_left"), dim, dim, false, rng)?,
            coef_right: Linear::new(store, &format!("{name}.coef_right"), dim, dim, false, rng)?,
            coef_head: store.register(format!("{name}.coef_head"), vec![dim], InitSpec::UniformFanIn, rng)?,
            message: Linear::new(store, &format!("{name}.message"), dim, dim, false, rng)?,
            message_norm: LayerNorm::new(store, &format!("{name}.message_norm"), dim, rng)?,
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), dim, rng)?,
            ffn: Ffn::new(store, &format!("{name}.ffn"), dim, 2 * dim, rng)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtParams {
    pub dim: usize,
    pub layers: Vec<ArtLayer>,
    pub gamma: Gamma,
    pub out_norm: LayerNorm,
    pub classifier: Linear,
}

impl ArtParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        dim: usize,
        num_classes: usize,
        num_layers: usize,
        tau: f64,
        init: GammaInit,
        learn_gamma: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let g = gamma_values(init, tau, num_layers)?;
        let layers = (0..num_layers)
            .map(|u| ArtLayer::new(store, &format!("art.layer{u}"), dim, rng))
            .collect::<Result<_>>()?;
        let gamma = if learn_gamma {
            Gamma::Learned(store.register("art.gamma", vec![num_layers], InitSpec::Explicit(g), rng)?)
        } else {
            Gamma::Fixed(g)
        };
        Ok(Self {
            dim,
            layers,
            gamma,
            out_norm: LayerNorm::new(store, "art.out_norm", dim, rng)?,
            classifier: Linear::new(store, "art.classifier", dim, num_classes, true, rng)?,
        })
    }
}

/// `c_ij = w_c^T (W_c1 x_i ⊙ W_c2 x_j ⊙ (x_ij + B_ij))`. `context` is the
/// already-summed `x_ij + B_ij`.
pub fn contextual_coefficient(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &ArtLayer,
    x_i: Var,
    x_j: Var,
    context: Var,
) -> Result<Var> {
    let left = linear(tape, store, &layer.coef_left, x_i)?;
    let right = linear(tape, store, &layer.coef_right, x_j)?;
    coefficient_from_projections(tape, store, layer, left, right, context)
}

fn coefficient_from_projections(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &ArtLayer,
    left: Var,
    right: Var,
    context: Var,
) -> Result<Var> {
    let h = tape.mul(left, right)?;
    let h = tape.mul(h, context)?;
    let w = tape.param(store, layer.coef_head);
    tape.dot(w, h)
}

/// `ReLU(W_F LN(x_j))`, the message a node sends to its neighbors.
pub fn node_message(tape: &mut Tape, store: &ParamStore, layer: &ArtLayer, x_j: Var) -> Result<Var> {
    let h = layer_norm(tape, store, &layer.message_norm, x_j, LN_EPS)?;
    let h = linear(tape, store, &layer.message, h)?;
    Ok(tape.relu(h))
}

/// `sum_j s_ij * softmax(c)_j * m_j`. A `None` sign stands for +1. With no
/// neighbors the result is the zero vector of length `dim`.
pub fn aggregate(
    tape: &mut Tape,
    dim: usize,
    coefficients: &[Var],
    messages: &[Var],
    signs: &[Option<Var>],
) -> Result<Var> {
    if coefficients.len() != messages.len() || signs.len() != messages.len() {
        return Err(Error::dim(
            &[coefficients.len(), messages.len()],
            &[signs.len()],
            "aggregate neighbor lists",
        ));
    }
    if messages.is_empty() {
        return Ok(tape.zeros(dim));
    }
    let c = tape.concat(coefficients);
    let alpha = tape.softmax(c)?;
    let mut terms = Vec::with_capacity(messages.len());
    for (k, (&m, s)) in messages.iter().zip(signs).enumerate() {
        let t = tape.scale_by(m, alpha, k)?;
        terms.push(match s {
            Some(s) => tape.scale_by(t, *s, 0)?,
            None => t,
        });
    }
    tape.add_n(&terms)
}

/// Node states after one layer plus the coefficients it used.
#[derive(Debug, Clone)]
pub struct LayerOutput {
    pub states: Vec<Var>,
    pub coefficients: PairGrid<Var>,
}

/// `z_i = x_i + F(N_i)`, `x_i' = z_i + FFN(LN(z_i))`, with every other
/// node as a neighbor.
pub fn art_layer(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &ArtLayer,
    states: &[Var],
    context: &PairGrid<Var>,
    signs: Option<&PairGrid<Var>>,
) -> Result<LayerOutput> {
    let n = states.len();
    let dim = tape.value(states[0]).len();
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    let mut messages = Vec::with_capacity(n);
    for &x in states {
        left.push(linear(tape, store, &layer.coef_left, x)?);
        right.push(linear(tape, store, &layer.coef_right, x)?);
        messages.push(node_message(tape, store, layer, x)?);
    }
    let mut coefficients = PairGrid::new(n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut cs = Vec::with_capacity(n - 1);
        let mut ms = Vec::with_capacity(n - 1);
        let mut ss = Vec::with_capacity(n - 1);
        for j in (0..n).filter(|&j| j != i) {
            let c = coefficient_from_projections(tape, store, layer, left[i], right[j], *context.at(i, j))?;
            coefficients.set(i, j, c);
            cs.push(c);
            ms.push(messages[j]);
            ss.push(signs.map(|g| *g.at(i, j)));
        }
        let f = aggregate(tape, dim, &cs, &ms, &ss)?;
        let z = tape.add(states[i], f)?;
        let h = layer_norm(tape, store, &layer.ffn_norm, z, LN_EPS)?;
        let h = ffn(tape, store, &layer.ffn, h)?;
        out.push(tape.add(z, h)?);
    }
    Ok(LayerOutput {
        states: out,
        coefficients,
    })
}

fn gamma_var(tape: &mut Tape, store: &ParamStore, gamma: &Gamma) -> Var {
    match gamma {
        Gamma::Learned(id) => tape.param(store, *id),
        Gamma::Fixed(v) => tape.vector(v.clone()),
    }
}

/// `x̂ = LN(sum_u gamma_u x^u)` for one node, given its per-layer states.
pub fn adaptive_filter(
    tape: &mut Tape,
    store: &ParamStore,
    gamma: Var,
    per_layer: &[Var],
    norm: &LayerNorm,
) -> Result<Var> {
    if tape.value(gamma).len() != per_layer.len() {
        return Err(Error::dim(tape.shape(gamma), &[per_layer.len()], "adaptive_filter layers"));
    }
    let terms = per_layer
        .iter()
        .enumerate()
        .map(|(u, &x)| tape.scale_by(x, gamma, u))
        .collect::<Result<Vec<_>>>()?;
    let s = tape.add_n(&terms)?;
    layer_norm(tape, store, norm, s, LN_EPS)
}

/// Returns `(logits, softmax(logits))` for one node.
pub fn classify_nodes(tape: &mut Tape, store: &ParamStore, classifier: &Linear, refined: Var) -> Result<(Var, Var)> {
    let logits = linear(tape, store, classifier, refined)?;
    let v = tape.softmax(logits)?;
    Ok((logits, v))
}

#[derive(Debug, Clone)]
pub struct ArtOutput {
    /// `x^1 ..= x^U`, one vector per node each.
    pub layers: Vec<Vec<Var>>,
    /// Coefficients of the last layer.
    pub coefficients: PairGrid<Var>,
    pub refined: Vec<Var>,
    pub logits: Vec<Var>,
    pub scores: Vec<Var>,
}

/// Full module: U layers, adaptive filter, node classifier.
pub fn run_art(
    tape: &mut Tape,
    store: &ParamStore,
    params: &ArtParams,
    inputs: &[Var],
    context: &PairGrid<Var>,
    signs: Option<&PairGrid<Var>>,
) -> Result<ArtOutput> {
    if inputs.is_empty() {
        return Err(Error::Contract("scene without nodes".into()));
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    let mut states = inputs.to_vec();
    let mut coefficients = PairGrid::new(inputs.len());
    for layer in &params.layers {
        let out = art_layer(tape, store, layer, &states, context, signs)?;
        states = out.states;
        coefficients = out.coefficients;
        layers.push(states.clone());
    }
    let gamma = gamma_var(tape, store, &params.gamma);
    let mut refined = Vec::with_capacity(inputs.len());
    let mut logits = Vec::with_capacity(inputs.len());
    let mut scores = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let per_layer: Vec<Var> = layers.iter().map(|l| l[i]).collect();
        let x = adaptive_filter(tape, store, gamma, &per_layer, &params.out_norm)?;
        let (l, v) = classify_nodes(tape, store, &params.classifier, x)?;
        refined.push(x);
        logits.push(l);
        scores.push(v);
    }
    Ok(ArtOutput {
        layers,
        coefficients,
        refined,
        logits,
        scores,
    })
}

/// Linearized filter `sum_u gamma_u A^u x` for a row-stochastic neighbor
/// weighting `A` given as `(neighbor, weight)` lists: the message path of
/// the module with normalization, feed-forward and residual branches removed.
pub fn linearized_filter(gamma: &[f64], weights: &[Vec<(usize, f64)>], signal: &[f64]) -> Vec<f64> {
    let mut x = signal.to_vec();
    let mut out = vec![0.0; signal.len()];
    for g in gamma {
        x = weights
            .iter()
            .map(|row| row.iter().map(|&(j, a)| a * x[j]).sum())
            .collect();
        for (o, v) in out.iter_mut().zip(&x) {
            *o += g * v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{finite_diff_check, sgd_momentum_step, Coords, OptimizerState};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(store: &mut ParamStore, name: &str, f: impl Fn(usize) -> f64) {
        let id = store.lookup(name).unwrap_or_else(|| panic!("{name}"));
        for (k, v) in store.get_mut(id).array.values_mut().iter_mut().enumerate() {
            *v = f(k);
        }
    }

    fn zero_all(store: &mut ParamStore) {
        store
            .iter_mut()
            .for_each(|p| p.array.values_mut().iter_mut().for_each(|v| *v = 0.0));
    }

    fn params(dim: usize, classes: usize, layers: usize, seed: u64) -> (ParamStore, ArtParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = ArtParams::new(&mut store, dim, classes, layers, 0.5, GammaInit::Alternating, true, &mut rng).unwrap();
        (store, p)
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(init_gamma(0.5, 1).unwrap(), vec![1.0]);
        let g = init_gamma(0.5, 3).unwrap();
        for (a, b) in g.iter().zip([4.0 / 7.0, -2.0 / 7.0, 1.0 / 7.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let g = init_gamma(0.5, 5).unwrap();
        let want = [0.516129032258, -0.258064516129, 0.129032258065, -0.064516129032, 0.032258064516];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-11);
        }
        assert!(matches!(init_gamma(1.0, 3), Err(Error::Config(_))));
        assert!(matches!(init_gamma(0.0, 3), Err(Error::Config(_))));
        assert!(matches!(init_gamma(0.5, 0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn gamma_signs_and_norm(tau in 0.01f64..0.99, u in 1usize..10) {
            let g = init_gamma(tau, u).unwrap();
            prop_assert!((g.iter().map(|v| v.abs()).sum::<f64>() - 1.0).abs() < 1e-12);
            for (k, v) in g.iter().enumerate() {
                prop_assert_eq!(v.is_sign_positive(), k % 2 == 0);
            }
        }
    }

    #[test]
    fn coefficient_examples() {
        let d = 4;
        let (mut store, p) = params(d, 2, 1, 0);
        let layer = p.layers[0];
        set(&mut store, "art.layer0.coef_left.weight", |k| if k % (d + 1) == 0 { 1.0 } else { 0.0 });
        set(&mut store, "art.layer0.coef_right.weight", |k| if k % (d + 1) == 0 { 1.0 } else { 0.0 });
        set(&mut store, "art.layer0.coef_head", |_| 1.0);
        let mut t = Tape::new();
        let ones = t.vector(vec![1.0; d]);
        let two = t.vector(vec![2.0; d]);
        let c = contextual_coefficient(&mut t, &store, &layer, ones, ones, two).unwrap();
        assert_eq!(t.scalar(c), 2.0 * d as f64);
        let zero = t.zeros(d);
        let c = contextual_coefficient(&mut t, &store, &layer, ones, ones, zero).unwrap();
        assert_eq!(t.scalar(c), 0.0);

        set(&mut store, "art.layer0.coef_head", |_| 0.0);
        let mut t = Tape::new();
        let a = t.vector(vec![0.3, -1.0, 2.0, 0.5]);
        let c = contextual_coefficient(&mut t, &store, &layer, a, a, a).unwrap();
        assert_eq!(t.scalar(c), 0.0);
        let short = t.vector(vec![1.0; 3]);
        assert!(matches!(
            contextual_coefficient(&mut t, &store, &layer, short, a, a),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn aggregate_examples() {
        let mut t = Tape::new();
        let m = t.vector(vec![1.0, -2.0, 3.0]);
        let c = t.vector(vec![0.7]);
        let f = aggregate(&mut t, 3, &[c], &[m], &[None]).unwrap();
        assert_eq!(t.value(f), &[1.0, -2.0, 3.0]);

        let c2 = t.vector(vec![0.7]);
        let f = aggregate(&mut t, 3, &[c, c2], &[m, m], &[None, None]).unwrap();
        assert_eq!(t.value(f), &[1.0, -2.0, 3.0]);

        let s = t.vector(vec![0.0]);
        let f = aggregate(&mut t, 3, &[c, c2], &[m, m], &[Some(s), Some(s)]).unwrap();
        assert_eq!(t.value(f), &[0.0, 0.0, 0.0]);

        let f = aggregate(&mut t, 3, &[], &[], &[]).unwrap();
        assert_eq!(t.value(f), &[0.0, 0.0, 0.0]);
    }

    fn grid(t: &mut Tape, n: usize, d: usize, rng: &mut ChaCha8Rng) -> PairGrid<Var> {
        let mut g = PairGrid::new(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                    g.set(i, j, t.vector(v));
                }
            }
        }
        g
    }

    #[test]
    fn layer_identities() {
        let d = 5;
        let (mut store, p) = params(d, 2, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // zero feed-forward, isolated node
        for name in ["up.weight", "up.bias", "down.weight", "down.bias"] {
            set(&mut store, &format!("art.layer0.ffn.{name}"), |_| 0.0);
        }
        let mut t = Tape::new();
        let x = t.vector(vec![0.5, -1.0, 2.0, 0.0, 1.5]);
        let ctx = PairGrid::new(1);
        let out = art_layer(&mut t, &store, &p.layers[0], &[x], &ctx, None).unwrap();
        assert_eq!(t.value(out.states[0]), t.value(x));

        // all parameters zero, three nodes
        zero_all(&mut store);
        let mut t = Tape::new();
        let xs: Vec<Var> = (0..3)
            .map(|_| t.vector((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let ctx = grid(&mut t, 3, d, &mut rng);
        let out = art_layer(&mut t, &store, &p.layers[0], &xs, &ctx, None).unwrap();
        for (a, b) in out.states.iter().zip(&xs) {
            assert_eq!(t.value(*a), t.value(*b));
        }
    }

    // Plain-f64 transcription of the layer, filter and classifier.
    mod reference {
        pub fn matvec(w: &[f64], x: &[f64]) -> Vec<f64> {
            let cols = x.len();
            w.chunks(cols).map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
        }
        pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + y).collect()
        }
        pub fn ln(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
            let n = x.len() as f64;
            let m = x.iter().sum::<f64>() / n;
            let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
            x.iter()
                .zip(g)
                .zip(b)
                .map(|((a, g), b)| (a - m) / (v + 1e-5).sqrt() * g + b)
                .collect()
        }
        pub fn relu(x: &[f64]) -> Vec<f64> {
            x.iter().map(|a| a.max(0.0)).collect()
        }
    }

    fn value(store: &ParamStore, name: &str) -> Vec<f64> {
        store.get(store.lookup(name).unwrap()).array.values().to_vec()
    }

    fn reference_layer(store: &ParamStore, u: usize, xs: &[Vec<f64>], ctx: &[Vec<Vec<f64>>], signs: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
        use reference::*;
        let p = |s: &str| value(store, &format!("art.layer{u}.{s}"));
        let n = xs.len();
        (0..n)
            .map(|i| {
                let mut c = Vec::new();
                let mut msgs = Vec::new();
                for j in (0..n).filter(|&j| j != i) {
                    let a = matvec(&p("coef_left.weight"), &xs[i]);
                    let b = matvec(&p("coef_right.weight"), &xs[j]);
                    let h: Vec<f64> = (0..a.len()).map(|k| a[k] * b[k] * ctx[i][j][k]).collect();
                    c.push(h.iter().zip(p("coef_head")).map(|(x, w)| x * w).sum::<f64>());
                    let m = relu(&matvec(
                        &p("message.weight"),
                        &ln(&xs[j], &p("message_norm.gain"), &p("message_norm.shift")),
                    ));
                    let s = signs.map_or(1.0, |s| s[i][j]);
                    msgs.push(m.into_iter().map(|v| v * s).collect::<Vec<f64>>());
                }
                let mx = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = c.iter().map(|v| (v - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                let mut f = vec![0.0; xs[i].len()];
                for (w, m) in e.iter().zip(&msgs) {
                    for (fk, mk) in f.iter_mut().zip(m) {
                        *fk += w / z * mk;
                    }
                }
                let zi = add(&xs[i], &f);
                let h = ln(&zi, &p("ffn_norm.gain"), &p("ffn_norm.shift"));
                let h = relu(&add(&matvec(&p("ffn.up.weight"), &h), &p("ffn.up.bias")));
                let h = add(&matvec(&p("ffn.down.weight"), &h), &p("ffn.down.bias"));
                add(&zi, &h)
            })
            .collect()
    }

    fn randomize(store: &mut ParamStore, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in store.iter_mut() {
            p.array
                .values_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.6..0.6));
        }
    }

    fn matches_reference(n: usize, signed: bool, seed: u64) {
        let d = 4;
        let (mut store, p) = params(d, 3, 2, seed);
        randomize(&mut store, seed + 100);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ctx: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
            .collect();
        let signs: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-0.9..0.9)).collect()).collect();

        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.vector(x.clone())).collect();
        let mut cg = PairGrid::new(n);
        let mut sg = PairGrid::new(n);
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                cg.set(i, j, t.vector(ctx[i][j].clone()));
                sg.set(i, j, t.vector(vec![signs[i][j]]));
            }
        }
        let out = run_art(&mut t, &store, &p, &vars, &cg, signed.then_some(&sg)).unwrap();

        let s = signed.then_some(signs.as_slice());
        let l1 = reference_layer(&store, 0, &xs, &ctx, s);
        let l2 = reference_layer(&store, 1, &l1, &ctx, s);
        let g = value(&store, "art.gamma");
        for i in 0..n {
            let mix: Vec<f64> = (0..d).map(|k| g[0] * l1[i][k] + g[1] * l2[i][k]).collect();
            let xh = reference::ln(&mix, &value(&store, "art.out_norm.gain"), &value(&store, "art.out_norm.shift"));
            for (a, b) in t.value(out.refined[i]).iter().zip(&xh) {
                assert!((a - b).abs() < 1e-12, "node {i}: {a} vs {b}");
            }
            for (a, b) in t.value(out.layers[1][i]).iter().zip(&l2[i]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_node_matches_reference() {
        matches_reference(2, false, 3);
        matches_reference(2, true, 4);
    }

    #[test]
    fn three_node_matches_reference() {
        for seed in 0..4 {
            matches_reference(3, false, 10 + seed);
            matches_reference(3, true, 20 + seed);
        }
    }

    #[test]
    fn fixed_last_layer_gamma_reduces_to_plain_stack() {
        let d = 4;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ArtParams::new(&mut store, d, 3, 3, 0.5, GammaInit::LastLayer, false, &mut rng).unwrap();
        assert!(store.lookup("art.gamma").is_none());
        let mut t = Tape::new();
        let xs: Vec<Var> = (0..3).map(|_| t.vector((0..d).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
        let ctx = grid(&mut t, 3, d, &mut rng);
        let out = run_art(&mut t, &store, &p, &xs, &ctx, None).unwrap();
        let gain = t.param(&store, p.out_norm.gain);
        let shift = t.param(&store, p.out_norm.shift);
        for i in 0..3 {
            let direct = t.layer_norm(out.layers[2][i], gain, shift, LN_EPS).unwrap();
            for (a, b) in t.value(direct).iter().zip(t.value(out.refined[i])) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn filter_examples() {
        let d = 3;
        let (store, p) = params(d, 2, 1, 6);
        let mut t = Tape::new();
        let x = t.vector(vec![1.0, 2.0, 4.0]);
        let g = t.vector(vec![1.0]);
        let out = adaptive_filter(&mut t, &store, g, &[x], &p.out_norm).unwrap();
        let direct = layer_norm(&mut t, &store, &p.out_norm, x, LN_EPS).unwrap();
        assert_eq!(t.value(out), t.value(direct));

        let g = t.vector(vec![0.0, 0.0]);
        let y = t.vector(vec![5.0, -1.0, 0.0]);
        let out = adaptive_filter(&mut t, &store, g, &[x, y], &p.out_norm).unwrap();
        // LN of the zero vector is the shift
        assert_eq!(t.value(out), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn gamma_gradient_matches_finite_differences() {
        let d = 4;
        let (mut store, p) = params(d, 3, 3, 8);
        randomize(&mut store, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ctx: Vec<Vec<f64>> = (0..9).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let rep = finite_diff_check(
            |t, s| {
                let vars: Vec<Var> = xs.iter().map(|x| t.vector(x.clone())).collect();
                let mut cg = PairGrid::new(3);
                for i in 0..3 {
                    for j in (0..3).filter(|&j| j != i) {
                        cg.set(i, j, t.vector(ctx[i * 3 + j].clone()));
                    }
                }
                let out = run_art(t, s, &p, &vars, &cg, None)?;
                let losses = (0..3)
                    .map(|i| t.cross_entropy(out.logits[i], i))
                    .collect::<Result<Vec<_>>>()?;
                t.add_n(&losses)
            },
            &store,
            1e-5,
            Coords::All,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let (mut store, p) = params(4, 5, 1, 2);
        set(&mut store, "art.classifier.weight", |_| 0.0);
        let mut t = Tape::new();
        let x = t.vector(vec![1.0, -1.0, 0.5, 3.0]);
        let (_, v) = classify_nodes(&mut t, &store, &p.classifier, x).unwrap();
        assert!(t.value(v).iter().all(|&q| (q - 0.2).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn scores_are_distributions(seed in 0u64..1000) {
            let d = 4;
            let (store, p) = params(d, 4, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = Tape::new();
            let xs: Vec<Var> = (0..3).map(|_| t.vector((0..d).map(|_| rng.random_range(-2.0..2.0)).collect())).collect();
            let ctx = grid(&mut t, 3, d, &mut rng);
            let out = run_art(&mut t, &store, &p, &xs, &ctx, None).unwrap();
            for v in &out.scores {
                prop_assert!((t.value(*v).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let last = &params(d, 4, 2, seed).1;
            prop_assert_eq!(last.layers.len(), 2);
        }
    }

    #[test]
    fn permuting_nodes_permutes_outputs() {
        let d = 4;
        let n = 4;
        let (store, p) = params(d, 3, 2, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ctx: Vec<Vec<f64>> = (0..n * n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let perm = [2usize, 0, 3, 1];
        let run = |order: &[usize]| -> Vec<Vec<f64>> {
            let mut t = Tape::new();
            let vars: Vec<Var> = order.iter().map(|&o| t.vector(xs[o].clone())).collect();
            let mut cg = PairGrid::new(n);
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    cg.set(i, j, t.vector(ctx[order[i] * n + order[j]].clone()));
                }
            }
            let out = run_art(&mut t, &store, &p, &vars, &cg, None).unwrap();
            out.scores.iter().map(|v| t.value(*v).to_vec()).collect()
        };
        let base = run(&[0, 1, 2, 3]);
        let permuted = run(&perm);
        for (k, &o) in perm.iter().enumerate() {
            for (a, b) in permuted[k].iter().zip(&base[o]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn ring(n: usize) -> Vec<Vec<(usize, f64)>> {
        (0..n).map(|i| vec![((i + n - 1) % n, 0.5), ((i + 1) % n, 0.5)]).collect()
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    #[test]
    fn alternating_gamma_is_high_pass_on_a_ring() {
        let n = 12;
        let a = ring(n);
        let constant = vec![1.0; n];
        let alternating: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let g = init_gamma(0.5, 5).unwrap();
        let gain = |g: &[f64], s: &[f64]| norm(&linearized_filter(g, &a, s)) / norm(s);
        assert!(gain(&g, &alternating) >= 2.0 * gain(&g, &constant));
        let abs: Vec<f64> = g.iter().map(|v| v.abs()).collect();
        assert!(gain(&abs, &constant) >= 2.0 * gain(&abs, &alternating));
    }

    #[test]
    fn trained_toy_graph_separates_classes() {
        // two classes, four nodes; each node only sees the other class
        let d = 4;
        let (mut store, p) = params(d, 2, 2, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let labels = [0usize, 1, 0, 1];
        let xs: Vec<Vec<f64>> = labels
            .iter()
            .map(|&c| {
                (0..d)
                    .map(|k| if k == c { 1.0 } else { 0.0 } + rng.random_range(-0.3..0.3))
                    .collect()
            })
            .collect();
        let ctx: Vec<Vec<f64>> = (0..16).map(|_| (0..d).map(|_| rng.random_range(-0.5..0.5)).collect()).collect();
        let mut opt = OptimizerState::new(&store, 0.05, 0.9);
        let forward = |t: &mut Tape, s: &ParamStore| {
            let vars: Vec<Var> = xs.iter().map(|x| t.vector(x.clone())).collect();
            let mut cg = PairGrid::new(4);
            for i in 0..4 {
                for j in (0..4).filter(|&j| j != i) {
                    cg.set(i, j, t.vector(ctx[i * 4 + j].clone()));
                }
            }
            run_art(t, s, &p, &vars, &cg, None).unwrap()
        };
        for _ in 0..60 {
            store.zero_grad();
            let mut t = Tape::new();
            let out = forward(&mut t, &store);
            let losses: Vec<Var> = (0..4).map(|i| t.cross_entropy(out.logits[i], labels[i]).unwrap()).collect();
            let loss = t.add_n(&losses).unwrap();
            t.backward(loss).unwrap().accumulate_into(&mut store);
            sgd_momentum_step(&mut opt, &mut store);
        }
        let mut t = Tape::new();
        let out = forward(&mut t, &store);
        let correct = (0..4)
            .filter(|&i| {
                let v = t.value(out.scores[i]);
                (v[1] > v[0]) == (labels[i] == 1)
            })
            .count();
        assert!(correct as f64 / 4.0 >= 0.9);
    }
}
