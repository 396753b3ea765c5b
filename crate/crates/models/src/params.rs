//! Named trainable tensors with seeded initialization and safetensors (de)serialization.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
}

struct Inner {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

/// Shared parameter table; [`ParamStore::pp`] hands out prefixed views of the same table.
#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    prefix: String,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                vars: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            })),
            prefix: String::new(),
        }
    }

    pub fn pp(&self, name: impl std::fmt::Display) -> Self {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Self {
            inner: self.inner.clone(),
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Creates the parameter, or returns the existing one when the name is already taken.
    pub fn get(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = self.full_name(name);
        let mut inner = self.inner.lock().unwrap();
        if let Some(v) = inner.vars.get(&full) {
            if v.dims() != shape {
                return Err(Error::Weights(format!(
                    "{full}: requested shape {shape:?}, stored {:?}",
                    v.dims()
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut inner.rng) as f32).collect()
            }
            Init::FanIn(fan_in) => {
                let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| inner.rng.gen_range(-b..b) as f32).collect()
            }
        };
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &Device::Cpu)?)?;
        let t = var.as_tensor().clone();
        inner.vars.insert(full, var);
        Ok(t)
    }

    /// Variables whose name starts with this store's prefix.
    pub fn vars(&self) -> Vec<Var> {
        self.named_vars().into_values().collect()
    }

    pub fn named_vars(&self) -> BTreeMap<String, Var> {
        let inner = self.inner.lock().unwrap();
        inner
            .vars
            .iter()
            .filter(|(k, _)| self.prefix.is_empty() || k.starts_with(&format!("{}.", self.prefix)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.vars().iter().map(|v| v.elem_count()).sum()
    }

    /// Deep copy of all values (names keep their prefixes).
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.named_vars()
            .into_iter()
            .map(|(k, v)| Ok((k, v.as_tensor().copy()?)))
            .collect()
    }

    /// Overwrites every variable from `values`; all names and shapes are checked first.
    pub fn restore(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        let vars = self.named_vars();
        for (k, v) in &vars {
            let t = values
                .get(k)
                .ok_or_else(|| Error::Weights(format!("missing tensor `{k}`")))?;
            if t.dims() != v.dims() {
                return Err(Error::Weights(format!(
                    "{k}: stored shape {:?}, model expects {:?}",
                    t.dims(),
                    v.dims()
                )));
            }
        }
        for (k, v) in &vars {
            v.set(&values[k].to_dtype(DType::F32)?)?;
        }
        Ok(())
    }

    pub fn to_safetensors(&self) -> Result<Vec<u8>> {
        let snap = self.snapshot()?;
        Ok(safetensors::serialize(snap.iter(), None)?)
    }

    pub fn load_safetensors(&self, bytes: &[u8]) -> Result<()> {
        let map = candle_core::safetensors::load_buffer(bytes, &Device::Cpu)?;
        self.restore(&map.into_iter().collect())
    }

    /// Copies values from `other` for every name present in both stores, after stripping the
    /// respective prefixes. Returns the number of copied tensors.
    pub fn copy_matching(&self, other: &ParamStore) -> Result<usize> {
        let strip = |s: &ParamStore, k: &str| -> String {
            if s.prefix.is_empty() {
                k.to_string()
            } else {
                k[s.prefix.len() + 1..].to_string()
            }
        };
        let src: BTreeMap<String, Var> = other
            .named_vars()
            .into_iter()
            .map(|(k, v)| (strip(other, &k), v))
            .collect();
        let mut n = 0;
        for (k, v) in self.named_vars() {
            if let Some(s) = src.get(&strip(self, &k)) {
                if s.dims() == v.dims() {
                    v.set(&s.as_tensor().copy()?)?;
                    n += 1;
                }
            }
        }
        Ok(n)
    }
}
