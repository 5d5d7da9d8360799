//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the tape in reverse and accumulates vector-Jacobian products.
//! Parameters enter the tape by copy and their gradients are written back
//! into the owning [`ParamStore`].

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::array::{ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Largest magnitude emitted by `tanh`; keeps outputs strictly inside (-1, 1).
pub const TANH_BOUND: f64 = 1.0 - f64::EPSILON;

/// Probability clamp used by the sign BCE.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddN(Vec<Var>),
    ScaleConst(Var, f64),
    ScaleElem { x: Var, s: Var, k: usize },
    MatVec { w: Var, x: Var },
    Relu(Var),
    Tanh(Var),
    Sum(Var),
    Dot(Var, Var),
    Softmax(Var),
    CrossEntropy { logits: Var, target: usize },
    LayerNorm { x: Var, gain: Var, shift: Var },
    Concat(Vec<Var>),
    Conv2d(ConvSpec),
    SignBce { s: Var, labels: Vec<f64> },
}

#[derive(Debug, Clone)]
struct ConvSpec {
    x: Var,
    w: Var,
    b: Var,
    cin: usize,
    h: usize,
    wd: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    // op-specific forward cache (softmax probs, normalized inputs)
    cache: Vec<f64>,
    needs_grad: bool,
}

/// One forward computation graph. Confined to a single thread while in use.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    loaded: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Tape::backward`], indexed by tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.get_mut(pid).array.accumulate_grad(g);
            }
        }
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: impl IntoIterator<Item = f64>, n: usize) {
    let buf = dst.get_or_insert_with(|| vec![0.0; n]);
    for (d, s) in buf.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, cache: Vec<f64>) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Dot(a, b) => {
                self.ng(*a) || self.ng(*b)
            }
            Op::AddN(vs) | Op::Concat(vs) => vs.iter().any(|v| self.ng(*v)),
            Op::ScaleConst(x, _)
            | Op::Relu(x)
            | Op::Tanh(x)
            | Op::Sum(x)
            | Op::Softmax(x)
            | Op::CrossEntropy { logits: x, .. }
            | Op::SignBce { s: x, .. } => self.ng(*x),
            Op::ScaleElem { x, s, .. } => self.ng(*x) || self.ng(*s),
            Op::MatVec { w, x } => self.ng(*w) || self.ng(*x),
            Op::LayerNorm { x, gain, shift } => self.ng(*x) || self.ng(*gain) || self.ng(*shift),
            Op::Conv2d(c) => self.ng(c.x) || self.ng(c.w) || self.ng(c.b),
        };
        self.nodes.push(Node {
            value,
            shape,
            op,
            cache,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::dim(&shape, &[values.len()], "constant"));
        }
        Ok(self.push(values, shape, Op::Leaf, Vec::new()))
    }

    pub fn vector(&mut self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.push(values, vec![n], Op::Leaf, Vec::new())
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.vector(vec![0.0; n])
    }

    /// Copies a parameter onto the tape. Each parameter is loaded once per
    /// tape; later calls return the same handle, so a tape must only ever
    /// read from one store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.loaded.get(&id) {
            return v;
        }
        let arr = &store.get(id).array;
        let v = self.push(
            arr.values().to_vec(),
            arr.shape().to_vec(),
            Op::Param(id),
            Vec::new(),
        );
        self.loaded.insert(id, v);
        v
    }

    fn same_len(&self, a: Var, b: Var, ctx: &'static str) -> Result<usize> {
        let (la, lb) = (self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        if la != lb {
            return Err(Error::dim(self.shape(a), self.shape(b), ctx));
        }
        Ok(la)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "add")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(v, shape, Op::Add(a, b), Vec::new()))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "sub")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(v, shape, Op::Sub(a, b), Vec::new()))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "mul")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(v, shape, Op::Mul(a, b), Vec::new()))
    }

    /// Sum of equally shaped arrays. An empty list is an error; callers
    /// that may sum nothing should handle that case themselves.
    pub fn add_n(&mut self, vs: &[Var]) -> Result<Var> {
        let first = *vs
            .first()
            .ok_or_else(|| Error::Domain("add_n over an empty list".into()))?;
        let n = self.value(first).len();
        let mut out = vec![0.0; n];
        for &v in vs {
            self.same_len(first, v, "add_n")?;
            for (o, x) in out.iter_mut().zip(self.value(v)) {
                *o += x;
            }
        }
        let shape = self.shape(first).to_vec();
        Ok(self.push(out, shape, Op::AddN(vs.to_vec()), Vec::new()))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).iter().map(|a| a * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(v, shape, Op::ScaleConst(x, c), Vec::new())
    }

    /// `s[k] * x` where `s` is any array on the tape.
    pub fn scale_by(&mut self, x: Var, s: Var, k: usize) -> Result<Var> {
        let sl = self.value(s).len();
        if k >= sl {
            return Err(Error::dim(self.shape(s), &[k], "scale_by index"));
        }
        let c = self.value(s)[k];
        let v = self.value(x).iter().map(|a| a * c).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(v, shape, Op::ScaleElem { x, s, k }, Vec::new()))
    }

    /// `w · x` for `w` of shape `[out, in]` and `x` of length `in`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let ws = self.shape(w);
        if ws.len() != 2 || ws[1] != self.value(x).len() {
            return Err(Error::dim(ws, self.shape(x), "matvec"));
        }
        let (rows, cols) = (ws[0], ws[1]);
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        let out: Vec<f64> = (0..rows)
            .map(|r| {
                wv[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(xv)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(self.push(out, vec![rows], Op::MatVec { w, x }, Vec::new()))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|a| a.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push(v, shape, Op::Relu(x), Vec::new())
    }

    /// Hyperbolic tangent, clamped so outputs stay strictly inside (-1, 1).
    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self
            .value(x)
            .iter()
            .map(|a| a.tanh().clamp(-TANH_BOUND, TANH_BOUND))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(v, shape, Op::Tanh(x), Vec::new())
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![s], vec![1], Op::Sum(x), Vec::new())
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "dot")?;
        let s = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        Ok(self.push(vec![s], vec![1], Op::Dot(a, b), Vec::new()))
    }

    /// Softmax over a vector, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::Domain("softmax over an empty axis".into()));
        }
        let p = softmax_values(xv);
        let shape = self.shape(x).to_vec();
        Ok(self.push(p, shape, Op::Softmax(x), Vec::new()))
    }

    /// `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.value(logits);
        if target >= lv.len() {
            return Err(Error::Contract(format!(
                "cross-entropy target {target} out of range for {} classes",
                lv.len()
            )));
        }
        let m = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + lv.iter().map(|a| (a - m).exp()).sum::<f64>().ln();
        let loss = lse - lv[target];
        let p = softmax_values(lv);
        Ok(self.push(vec![loss], vec![1], Op::CrossEntropy { logits, target }, p))
    }

    /// Layer normalization over the whole vector, then `gain ⊙ x̂ + shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let n = self.same_len(x, gain, "layer_norm gain")?;
        self.same_len(x, shift, "layer_norm shift")?;
        if n == 0 {
            return Err(Error::Domain("layer_norm over an empty axis".into()));
        }
        let xv = self.value(x);
        let mean = xv.iter().sum::<f64>() / n as f64;
        let var = xv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        let mut cache: Vec<f64> = xv.iter().map(|a| (a - mean) * rstd).collect();
        let out = cache
            .iter()
            .zip(self.value(gain))
            .zip(self.value(shift))
            .map(|((h, g), b)| h * g + b)
            .collect();
        cache.push(rstd);
        let shape = self.shape(x).to_vec();
        Ok(self.push(out, shape, Op::LayerNorm { x, gain, shift }, cache))
    }

    pub fn concat(&mut self, vs: &[Var]) -> Var {
        let mut out = Vec::new();
        for &v in vs {
            out.extend_from_slice(self.value(v));
        }
        let n = out.len();
        self.push(out, vec![n], Op::Concat(vs.to_vec()), Vec::new())
    }

    /// 2-D convolution over `x: [cin, h, w]` with `w: [cout, cin, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] {
            return Err(Error::dim(&xs, &ws, "conv2d"));
        }
        let (cin, h, wd) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        if self.value(b).len() != cout {
            return Err(Error::dim(&ws, self.shape(b), "conv2d bias"));
        }
        if h + 2 * pad < k || wd + 2 * pad < k || stride == 0 {
            return Err(Error::dim(&xs, &ws, "conv2d kernel larger than input"));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let spec = ConvSpec {
            x,
            w,
            b,
            cin,
            h,
            wd,
            cout,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut out = vec![0.0; cout * ho * wo];
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bv[co];
                    for (ci, ky, kx, iy, ix) in spec.taps(oy, ox) {
                        acc += wv[((co * cin + ci) * k + ky) * k + kx] * xv[(ci * h + iy) * wd + ix];
                    }
                    out[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        Ok(self.push(out, vec![cout, ho, wo], Op::Conv2d(spec), Vec::new()))
    }

    /// Mean BCE between signs `s ∈ (-1, 1)` and labels in {-1, 1},
    /// with `p = (s + 1) / 2` clamped to `[1e-7, 1 - 1e-7]`.
    pub fn sign_bce(&mut self, s: Var, labels: &[f64]) -> Result<Var> {
        let n = self.value(s).len();
        if n != labels.len() {
            return Err(Error::dim(self.shape(s), &[labels.len()], "sign_bce labels"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::Contract(format!("sign label {bad} not in {{-1, 1}}")));
        }
        if n == 0 {
            return Err(Error::Domain("sign_bce over an empty set".into()));
        }
        let total: f64 = self
            .value(s)
            .iter()
            .zip(labels)
            .map(|(&sv, &y)| {
                let p = ((sv + 1.0) / 2.0).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                let t = (y + 1.0) / 2.0;
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        Ok(self.push(
            vec![total / n as f64],
            vec![1],
            Op::SignBce {
                s,
                labels: labels.to_vec(),
            },
            Vec::new(),
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.shape
            )));
        }
        if !node.value[0].is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {}", node.value[0])));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut params = Vec::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => params.push((*pid, idx)),
                Op::Add(a, b) => {
                    self.send(&mut grads, *a, g.iter().copied());
                    self.send(&mut grads, *b, g.iter().copied());
                }
                Op::Sub(a, b) => {
                    self.send(&mut grads, *a, g.iter().copied());
                    self.send(&mut grads, *b, g.iter().map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.send(&mut grads, *a, g.iter().zip(bv).map(|(g, y)| g * y));
                    self.send(&mut grads, *b, g.iter().zip(av).map(|(g, x)| g * x));
                }
                Op::AddN(vs) => {
                    for v in vs {
                        self.send(&mut grads, *v, g.iter().copied());
                    }
                }
                Op::ScaleConst(x, c) => {
                    self.send(&mut grads, *x, g.iter().map(|v| v * c));
                }
                Op::ScaleElem { x, s, k } => {
                    let c = self.value(*s)[*k];
                    let xv = self.value(*x);
                    let ds: f64 = g.iter().zip(xv).map(|(g, a)| g * a).sum();
                    self.send(&mut grads, *x, g.iter().map(|v| v * c));
                    if self.ng(*s) {
                        let n = self.value(*s).len();
                        let buf = grads[s.0].get_or_insert_with(|| vec![0.0; n]);
                        buf[*k] += ds;
                    }
                }
                Op::MatVec { w, x } => {
                    let ws = self.shape(*w);
                    let (rows, cols) = (ws[0], ws[1]);
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    if self.ng(*w) {
                        let buf = grads[w.0].get_or_insert_with(|| vec![0.0; rows * cols]);
                        for r in 0..rows {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            for (b, xc) in buf[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                *b += gr * xc;
                            }
                        }
                    }
                    if self.ng(*x) {
                        let buf = grads[x.0].get_or_insert_with(|| vec![0.0; cols]);
                        for r in 0..rows {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            for (b, wc) in buf.iter_mut().zip(&wv[r * cols..(r + 1) * cols]) {
                                *b += gr * wc;
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    self.send(
                        &mut grads,
                        *x,
                        g.iter().zip(xv).map(|(g, a)| if *a > 0.0 { *g } else { 0.0 }),
                    );
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    self.send(&mut grads, *x, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)));
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    self.send(&mut grads, *x, std::iter::repeat_n(g[0], n));
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.send(&mut grads, *a, bv.iter().map(|y| g[0] * y));
                    self.send(&mut grads, *b, av.iter().map(|x| g[0] * x));
                }
                Op::Softmax(x) => {
                    let p = &node.value;
                    let gp: f64 = g.iter().zip(p).map(|(g, p)| g * p).sum();
                    self.send(&mut grads, *x, g.iter().zip(p).map(|(g, p)| p * (g - gp)));
                }
                Op::CrossEntropy { logits, target } => {
                    let p = &node.cache;
                    let t = *target;
                    self.send(
                        &mut grads,
                        *logits,
                        p.iter()
                            .enumerate()
                            .map(|(i, p)| g[0] * (p - if i == t { 1.0 } else { 0.0 })),
                    );
                }
                Op::LayerNorm { x, gain, shift } => {
                    let n = g.len();
                    let xhat = &node.cache[..n];
                    let rstd = node.cache[n];
                    let gv = self.value(*gain);
                    self.send(&mut grads, *shift, g.iter().copied());
                    self.send(&mut grads, *gain, g.iter().zip(xhat).map(|(g, h)| g * h));
                    if self.ng(*x) {
                        let dxhat: Vec<f64> = g.iter().zip(gv).map(|(g, w)| g * w).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dh =
                            dxhat.iter().zip(xhat).map(|(d, h)| d * h).sum::<f64>() / n as f64;
                        self.send(
                            &mut grads,
                            *x,
                            dxhat
                                .iter()
                                .zip(xhat)
                                .map(|(d, h)| rstd * (d - mean_d - h * mean_dh)),
                        );
                    }
                }
                Op::Concat(vs) => {
                    let mut off = 0;
                    for v in vs {
                        let n = self.value(*v).len();
                        self.send(&mut grads, *v, g[off..off + n].iter().copied());
                        off += n;
                    }
                }
                Op::Conv2d(c) => {
                    let xv = self.value(c.x);
                    let wv = self.value(c.w);
                    let mut gx = vec![0.0; xv.len()];
                    let mut gw = vec![0.0; wv.len()];
                    let mut gb = vec![0.0; c.cout];
                    for co in 0..c.cout {
                        for oy in 0..c.ho {
                            for ox in 0..c.wo {
                                let go = g[(co * c.ho + oy) * c.wo + ox];
                                if go == 0.0 {
                                    continue;
                                }
                                gb[co] += go;
                                for (ci, ky, kx, iy, ix) in c.taps(oy, ox) {
                                    let wi = ((co * c.cin + ci) * c.k + ky) * c.k + kx;
                                    let xi = (ci * c.h + iy) * c.wd + ix;
                                    gw[wi] += go * xv[xi];
                                    gx[xi] += go * wv[wi];
                                }
                            }
                        }
                    }
                    self.send(&mut grads, c.x, gx);
                    self.send(&mut grads, c.w, gw);
                    self.send(&mut grads, c.b, gb);
                }
                Op::SignBce { s, labels } => {
                    let sv = self.value(*s);
                    let n = labels.len() as f64;
                    self.send(
                        &mut grads,
                        *s,
                        sv.iter().zip(labels).map(|(&sv, &y)| {
                            let raw = (sv + 1.0) / 2.0;
                            if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&raw) {
                                return 0.0;
                            }
                            let t = (y + 1.0) / 2.0;
                            let dp = -(t / raw) + (1.0 - t) / (1.0 - raw);
                            g[0] * dp * 0.5 / n
                        }),
                    );
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params })
    }

    fn send(&self, grads: &mut [Option<Vec<f64>>], to: Var, g: impl IntoIterator<Item = f64>) {
        if self.ng(to) {
            let n = self.nodes[to.0].value.len();
            add_into(&mut grads[to.0], g, n);
        }
    }
}

impl ConvSpec {
    /// In-bounds (cin, ky, kx, iy, ix) taps feeding output cell (oy, ox).
    fn taps(&self, oy: usize, ox: usize) -> impl Iterator<Item = (usize, usize, usize, usize, usize)> + '_ {
        let k = self.k;
        (0..self.cin).flat_map(move |ci| {
            (0..k).flat_map(move |ky| {
                (0..k).filter_map(move |kx| {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                    if iy < 0 || ix < 0 || iy as usize >= self.h || ix as usize >= self.wd {
                        None
                    } else {
                        Some((ci, ky, kx, iy as usize, ix as usize))
                    }
                })
            })
        })
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax_values(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|a| (a - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|a| a / z).collect()
}
