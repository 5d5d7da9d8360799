//! Shared neural building blocks on top of the tape.

use rand::Rng;

use crate::error::Result;

use super::array::{InitSpec, ParamId, ParamStore};
use super::tape::{Tape, Var};

pub const LN_EPS: f64 = 1e-5;

/// Affine map `W x + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.register(
            format!("{name}.weight"),
            vec![out_dim, in_dim],
            InitSpec::UniformFanIn,
            rng,
        )?;
        let bias = if bias {
            Some(store.register(format!("{name}.bias"), vec![out_dim], InitSpec::Zeros, rng)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn out_dim(&self, store: &ParamStore) -> usize {
        store.get(self.weight).array.shape()[0]
    }
}

pub fn linear(tape: &mut Tape, store: &ParamStore, lin: &Linear, x: Var) -> Result<Var> {
    let w = tape.param(store, lin.weight);
    let y = tape.matvec(w, x)?;
    match lin.bias {
        Some(b) => {
            let b = tape.param(store, b);
            tape.add(y, b)
        }
        None => Ok(y),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            gain: store.register(format!("{name}.gain"), vec![dim], InitSpec::Ones, rng)?,
            shift: store.register(format!("{name}.shift"), vec![dim], InitSpec::Zeros, rng)?,
        })
    }
}

pub fn layer_norm(tape: &mut Tape, store: &ParamStore, ln: &LayerNorm, x: Var, eps: f64) -> Result<Var> {
    let g = tape.param(store, ln.gain);
    let b = tape.param(store, ln.shift);
    tape.layer_norm(x, g, b, eps)
}

/// Position-wise feed-forward block: linear, ReLU, linear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ffn {
    pub up: Linear,
    pub down: Linear,
}

impl Ffn {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true, rng)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true, rng)?,
        })
    }
}

pub fn ffn(tape: &mut Tape, store: &ParamStore, f: &Ffn, x: Var) -> Result<Var> {
    let h = linear(tape, store, &f.up, x)?;
    let h = tape.relu(h);
    linear(tape, store, &f.down, h)
}

pub fn relu(tape: &mut Tape, x: Var) -> Var {
    tape.relu(x)
}

pub fn tanh_act(tape: &mut Tape, x: Var) -> Var {
    tape.tanh(x)
}

pub fn softmax(tape: &mut Tape, x: Var) -> Result<Var> {
    tape.softmax(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::array::InitSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn explicit_linear(store: &mut ParamStore, w: Vec<f64>, shape: [usize; 2], b: Vec<f64>, tag: &str) -> Linear {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let weight = store
            .register(format!("{tag}.w"), shape.to_vec(), InitSpec::Explicit(w), &mut rng)
            .unwrap();
        let bias = store
            .register(format!("{tag}.b"), vec![shape[0]], InitSpec::Explicit(b), &mut rng)
            .unwrap();
        Linear { weight, bias: Some(bias) }
    }

    #[test]
    fn linear_identity_and_hand_product() {
        let mut store = ParamStore::new();
        let id = explicit_linear(&mut store, vec![1.0, 0.0, 0.0, 1.0], [2, 2], vec![0.0, 0.0], "id");
        let m = explicit_linear(&mut store, vec![1.0, 1.0, 0.0, 1.0], [2, 2], vec![1.0, 0.0], "m");
        let mut t = Tape::new();
        let x = t.vector(vec![3.0, -1.0]);
        let y = linear(&mut t, &store, &id, x).unwrap();
        assert_eq!(t.value(y), &[3.0, -1.0]);
        let x = t.vector(vec![1.0, 2.0]);
        let y = linear(&mut t, &store, &m, x).unwrap();
        assert_eq!(t.value(y), &[4.0, 2.0]);
    }

    #[test]
    fn linear_shape_mismatch() {
        let mut store = ParamStore::new();
        let l = explicit_linear(&mut store, vec![0.0; 6], [2, 3], vec![0.0; 2], "l");
        let mut t = Tape::new();
        let x = t.vector(vec![1.0, 2.0]);
        let err = linear(&mut t, &store, &l, x).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn layer_norm_examples() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ln3 = LayerNorm::new(&mut store, "ln3", 3, &mut rng).unwrap();
        let ln1 = LayerNorm::new(&mut store, "ln1", 1, &mut rng).unwrap();
        let mut t = Tape::new();
        let x = t.vector(vec![5.0, 5.0, 5.0]);
        let y = layer_norm(&mut t, &store, &ln3, x, LN_EPS).unwrap();
        assert!(t.value(y).iter().all(|v| v.abs() < 1e-12));
        let x = t.vector(vec![1.0, 2.0, 3.0]);
        let y = layer_norm(&mut t, &store, &ln3, x, LN_EPS).unwrap();
        let expect = 1.0 / (2.0f64 / 3.0 + LN_EPS).sqrt();
        let v = t.value(y);
        assert!((v[0] + expect).abs() < 1e-12 && v[1].abs() < 1e-12 && (v[2] - expect).abs() < 1e-12);
        assert!((v[2] - 1.2247).abs() < 1e-4);
        let x = t.vector(vec![0.0]);
        let y = layer_norm(&mut t, &store, &ln1, x, LN_EPS).unwrap();
        assert_eq!(t.value(y), &[0.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.vector(vec![0.0, 0.0]);
        let y = softmax(&mut t, x).unwrap();
        assert_eq!(t.value(y), &[0.5, 0.5]);
        let x = t.vector(vec![1f64.ln(), 3f64.ln()]);
        let y = softmax(&mut t, x).unwrap();
        assert!((t.value(y)[0] - 0.25).abs() < 1e-15 && (t.value(y)[1] - 0.75).abs() < 1e-15);
        let x = t.vector(vec![7.0]);
        let y = softmax(&mut t, x).unwrap();
        assert_eq!(t.value(y), &[1.0]);
        let x = t.vector(vec![]);
        assert!(matches!(softmax(&mut t, x), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn ffn_examples() {
        let mut store = ParamStore::new();
        let up = explicit_linear(&mut store, vec![1.0, 0.0, 0.0, 1.0], [2, 2], vec![0.0; 2], "up");
        let down = explicit_linear(&mut store, vec![1.0, 0.0, 0.0, 1.0], [2, 2], vec![0.0; 2], "down");
        let f = Ffn { up, down };
        let mut t = Tape::new();
        let x = t.vector(vec![1.0, -1.0]);
        let y = ffn(&mut t, &store, &f, x).unwrap();
        assert_eq!(t.value(y), &[1.0, 0.0]);
        let x = t.vector(vec![0.0, 0.0]);
        let y = ffn(&mut t, &store, &f, x).unwrap();
        assert_eq!(t.value(y), &[0.0, 0.0]);

        let up3 = explicit_linear(&mut store, vec![0.0; 6], [3, 2], vec![0.0; 3], "up3");
        let bad = Ffn { up: up3, down };
        let x = t.vector(vec![1.0, 1.0]);
        assert!(matches!(ffn(&mut t, &store, &bad, x), Err(crate::Error::Dimension { .. })));
    }

    #[test]
    fn activations() {
        let mut t = Tape::new();
        let x = t.vector(vec![-2.0, 0.0, 3.0]);
        let y = relu(&mut t, x);
        assert_eq!(t.value(y), &[0.0, 0.0, 3.0]);
        let x = t.vector(vec![0.0, 1000.0, -1000.0]);
        let y = tanh_act(&mut t, x);
        let v = t.value(y);
        assert_eq!(v[0], 0.0);
        assert!(v[1] < 1.0 && v[1].is_finite());
        assert!(v[2] > -1.0);
    }
}
