use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major `f64` array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffArray {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl DiffArray {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::dim(&shape, &[values.len()], "array values"));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![0.0; self.values.len()]);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn accumulate_grad(&mut self, g: &[f64]) {
        if !self.requires_grad {
            return;
        }
        let buf = self.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (b, v) in buf.iter_mut().zip(g) {
            *b += v;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale_grad(&mut self, factor: f64) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    /// Uniform in +-sqrt(6 / (fan_in + fan_out)).
    UniformFanIn,
    Zeros,
    Ones,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub id: String,
    pub array: DiffArray,
    pub init_spec: InitSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named collection of learnable tensors. Ids are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor and draws its initial values from `rng`.
    pub fn register<R: Rng>(
        &mut self,
        id: impl Into<String>,
        shape: Vec<usize>,
        init: InitSpec,
        rng: &mut R,
    ) -> Result<ParamId> {
        let id = id.into();
        if self.index.contains_key(&id) {
            return Err(Error::Contract(format!("duplicate parameter id `{id}`")));
        }
        let n: usize = shape.iter().product();
        let values = match &init {
            InitSpec::UniformFanIn => {
                let (fan_out, fan_in) = match shape.as_slice() {
                    [o, i] => (*o, *i),
                    [o, rest @ ..] => (*o, rest.iter().product()),
                    [] => (1, 1),
                };
                // conv kernels count spatial taps on both fans
                let taps = if shape.len() > 2 { shape[2..].iter().product() } else { 1 };
                let bound = (6.0 / (fan_in + fan_out * taps) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            InitSpec::Zeros => vec![0.0; n],
            InitSpec::Ones => vec![1.0; n],
            InitSpec::Explicit(v) => {
                if v.len() != n {
                    return Err(Error::dim(&shape, &[v.len()], "explicit init"));
                }
                v.clone()
            }
        };
        let array = DiffArray::new(shape, values)?.with_grad();
        let pid = ParamId(self.params.len());
        self.index.insert(id.clone(), pid.0);
        self.params.push(ParamTensor {
            id,
            array,
            init_spec: init,
        });
        Ok(pid)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.array.zero_grad());
    }

    /// Euclidean norm over every stored gradient.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.array.grad())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their joint norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let f = max_norm / norm;
            self.params.iter_mut().for_each(|p| p.array.scale_grad(f));
        }
        norm
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.array.len()).sum()
    }

    /// Replaces all values from `other`, which must have the same ids and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .lookup(&p.id)
                .ok_or_else(|| Error::Config(format!("missing parameter `{}`", p.id)))?;
            let src = &other.get(src).array;
            if src.shape() != p.array.shape() {
                return Err(Error::dim(p.array.shape(), src.shape(), "load_values"));
            }
            p.array.values_mut().copy_from_slice(src.values());
        }
        Ok(())
    }
}
