//! Named parameter collections and their initialization.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    /// Logical extents as stored in checkpoints (a bias is rank 1).
    pub dims: Vec<usize>,
    pub value: Tensor<T>,
}

/// Ordered, uniquely named parameter set (network weights).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Maps logical dims of rank <= 4 onto the 4-D tensor layout. Rank-1 values
/// become per-channel `(1, C, 1, 1)`.
pub fn shape_for_dims(dims: &[usize]) -> Result<Shape> {
    Ok(match *dims {
        [] => Shape::SCALAR,
        [c] => Shape::new(1, c, 1, 1),
        [h, w] => Shape::new(1, 1, h, w),
        [c, h, w] => Shape::new(1, c, h, w),
        [n, c, h, w] => Shape::new(n, c, h, w),
        _ => bail!(Shape, "rank {} parameters are not supported", dims.len()),
    })
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), index: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: &[usize], value: Tensor<T>) -> Result<()> {
        let name = name.into();
        let shape = shape_for_dims(dims)?;
        if value.shape() != shape {
            bail!(Shape, "{name}: dims {dims:?} do not match tensor {}", value.shape());
        }
        if self.index.contains_key(&name) {
            bail!(Format, "duplicate parameter name {name}");
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, dims: dims.to_vec(), value });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<T>> {
        self.entries.iter()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = self.position(name)?;
        Some(&mut self.entries[i].value)
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry<T>> {
        self.entries.iter_mut()
    }

    /// Total number of scalars across every parameter.
    pub fn count_params(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), dims: e.dims.clone(), value: e.value.cast() })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Entries whose names start with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for e in self.entries.iter().filter(|e| e.name.starts_with(prefix)) {
            out.insert(e.name.clone(), &e.dims, e.value.clone()).expect("names unique in source");
        }
        out
    }

    /// Fills a store shaped like `template` from `self`, requiring every name
    /// with identical extents. Extra entries in `self` are ignored.
    pub fn conform_to(&self, template: &ParamStore<T>) -> Result<ParamStore<T>> {
        let mut out = ParamStore::new();
        for e in template.iter() {
            let Some(i) = self.position(&e.name) else {
                bail!(Shape, "missing parameter {}", e.name);
            };
            let src = &self.entries[i];
            if src.dims != e.dims {
                bail!(Shape, "{}: expected {:?}, found {:?}", e.name, e.dims, src.dims);
            }
            out.insert(e.name.clone(), &e.dims, src.value.clone())?;
        }
        Ok(out)
    }

    /// Stable 64-bit fingerprint of names and value bits (FNV-1a).
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        for e in &self.entries {
            h.write(e.name.as_bytes());
            for v in e.value.data() {
                h.write(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h.finish()
    }

    /// Registers every parameter on `tape`. With `trainable = false` they
    /// are constants and receive no gradient.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound<'_, T> {
        let vars = self.entries.iter().map(|e| tape.leaf(e.value.clone(), trainable)).collect();
        Bound { store: self, vars }
    }
}

/// Parameters of a store registered on a tape.
pub struct Bound<'a, T> {
    store: &'a ParamStore<T>,
    vars: Vec<Var>,
}

impl<T: Scalar> Bound<'_, T> {
    pub fn var(&self, name: &str) -> Result<Var> {
        match self.store.position(name) {
            Some(i) => Ok(self.vars[i]),
            None => bail!(Shape, "network expects parameter {name}, not present in weights"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in store order; zeros for parameters that did not take part.
    pub fn gradients(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Per-parameter RNG derived from the run seed and the parameter name, so a
/// weight's initial value does not depend on construction order.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Fnv::new();
    h.write(&seed.to_le_bytes());
    h.write(name.as_bytes());
    ChaCha8Rng::seed_from_u64(h.finish())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    /// `U(-b, b)` with `b = gain * sqrt(6 / fan_in)`.
    HeUniform { fan_in: usize, gain: f64 },
    /// 1x1 fusion kernel `(out, in)`: identity on the first `out` inputs,
    /// scaled He-uniform on the rest.
    IdentityPlus { gain: f64 },
}

pub fn init_tensor<T: Scalar>(shape: Shape, init: Init, rng: &mut ChaCha8Rng) -> Tensor<T> {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Const(v) => Tensor::full(shape, T::from_f64(v)),
        Init::HeUniform { fan_in, gain } => {
            let bound = gain * num_traits::Float::sqrt(6.0 / fan_in.max(1) as f64);
            let data = (0..shape.numel()).map(|_| T::from_f64(rng.random_range(-bound..=bound))).collect();
            Tensor::new(shape, data).expect("numel matches")
        }
        Init::IdentityPlus { gain } => {
            let (out, inp) = (shape.n, shape.c * shape.h * shape.w);
            let bound = gain * num_traits::Float::sqrt(6.0 / inp.max(1) as f64);
            let mut data = Vec::with_capacity(shape.numel());
            for o in 0..out {
                for i in 0..inp {
                    let v = if i < out {
                        if i == o {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        rng.random_range(-bound..=bound)
                    };
                    data.push(T::from_f64(v));
                }
            }
            Tensor::new(shape, data).expect("numel matches")
        }
    }
}

/// Incremental construction of a network's parameter set.
pub struct StoreBuilder<T> {
    pub store: ParamStore<T>,
    seed: u64,
}

impl<T: Scalar> StoreBuilder<T> {
    pub fn new(seed: u64) -> Self {
        StoreBuilder { store: ParamStore::new(), seed }
    }

    pub fn add(&mut self, name: &str, dims: &[usize], init: Init) -> Result<()> {
        let shape = shape_for_dims(dims)?;
        let mut rng = param_rng(self.seed, name);
        let value = init_tensor(shape, init, &mut rng);
        self.store.insert(name.to_string(), dims, value)
    }

    /// `{prefix}/kernel` (He-uniform scaled by `gain`) and a zero `{prefix}/bias`.
    pub fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize, gain: f64) -> Result<()> {
        let init = if gain == 0.0 { Init::Zeros } else { Init::HeUniform { fan_in: cin * k * k, gain } };
        self.add(&alloc::format!("{prefix}/kernel"), &[cout, cin, k, k], init)?;
        self.add(&alloc::format!("{prefix}/bias"), &[cout], Init::Zeros)
    }

    pub fn layer_norm(&mut self, prefix: &str, channels: usize, scale: f64) -> Result<()> {
        self.add(&alloc::format!("{prefix}/scale"), &[channels], Init::Const(scale))?;
        self.add(&alloc::format!("{prefix}/shift"), &[channels], Init::Zeros)
    }

    pub fn finish(self) -> ParamStore<T> {
        self.store
    }
}
