// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde_json::{json, Map, Value};

use super::{NnError, Tensor};

const SEED_KEY: &str = "rng_seed";
const ARCH_KEY: &str = "arch";

/// Named tensors plus the seed that initialized them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    entries: BTreeMap<String, Tensor>,
    rng_seed: u64,
    arch: Map<String, Value>,
}

impl ModelParameters {
    pub fn new(rng_seed: u64) -> Self {
        ModelParameters {
            entries: BTreeMap::new(),
            rng_seed,
            arch: Map::new(),
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn arch(&self) -> &Map<String, Value> {
        &self.arch
    }

    pub fn set_arch(&mut self, key: &str, value: impl Into<Value>) {
        self.arch.insert(key.to_string(), value.into());
    }

    pub fn arch_usize(&self, key: &str) -> Result<usize, NnError> {
        self.arch
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| NnError::Format(format!("missing arch field `{key}`")))
    }

    pub fn arch_str(&self, key: &str) -> Option<&str> {
        self.arch.get(key).and_then(Value::as_str)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), NnError> {
        let name = name.into();
        if name == SEED_KEY || name == ARCH_KEY {
            return Err(NnError::Format(format!("`{name}` is a reserved key")));
        }
        if self.entries.contains_key(&name) {
            return Err(NnError::Format(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NnError> {
        self.entries
            .get(name)
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NnError> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn size(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        for (name, t) in &self.entries {
            obj.insert(
                name.clone(),
                json!({ "shape": t.shape(), "data": t.data() }),
            );
        }
        obj.insert(SEED_KEY.into(), json!(self.rng_seed));
        obj.insert(ARCH_KEY.into(), Value::Object(self.arch.clone()));
        Value::Object(obj)
    }

    pub fn from_json(value: &Value) -> Result<Self, NnError> {
        let obj = value
            .as_object()
            .ok_or_else(|| NnError::Format("model file must be a JSON object".into()))?;
        let rng_seed = obj
            .get(SEED_KEY)
            .and_then(Value::as_u64)
            .ok_or_else(|| NnError::Format("missing `rng_seed`".into()))?;
        let arch = match obj.get(ARCH_KEY) {
            Some(Value::Object(m)) => m.clone(),
            None => Map::new(),
            Some(_) => return Err(NnError::Format("`arch` must be an object".into())),
        };
        let mut params = ModelParameters {
            entries: BTreeMap::new(),
            rng_seed,
            arch,
        };
        for (name, entry) in obj {
            if name == SEED_KEY || name == ARCH_KEY {
                continue;
            }
            let bad = || NnError::Format(format!("parameter `{name}` needs `shape` and `data`"));
            let shape = entry
                .get("shape")
                .and_then(Value::as_array)
                .ok_or_else(bad)?
                .iter()
                .map(|v| v.as_u64().map(|n| n as usize))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(bad)?;
            let data = entry
                .get("data")
                .and_then(Value::as_array)
                .ok_or_else(bad)?
                .iter()
                .map(Value::as_f64)
                .collect::<Option<Vec<_>>>()
                .ok_or_else(bad)?;
            params
                .entries
                .insert(name.clone(), Tensor::new(shape, data)?);
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, serde_json::to_string(&self.to_json())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&serde_json::from_str(&text)?)
    }
}

/// Seeded parameter initializer.
pub struct Initializer {
    rng: SplitMix64,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: SplitMix64::seed_from_u64(seed),
        }
    }

    /// Uniform in `(-r, r)` with `r = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(&mut self, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
        let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-r..r)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape product matches")
    }

    /// Glorot matrix `[rows, cols]` with `fan_in = cols`, `fan_out = rows`.
    pub fn matrix(&mut self, rows: usize, cols: usize) -> Tensor {
        self.glorot(&[rows, cols], cols, rows)
    }
}

/// Gradient accumulator keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    entries: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero-initialized slot for `name`, created on first use.
    pub fn slot(&mut self, name: &str, shape: &[usize]) -> &mut Tensor {
        self.entries
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(shape))
    }

    pub fn add(&mut self, name: &str, grad: &Tensor) -> Result<(), NnError> {
        self.slot(name, grad.shape()).add_assign(grad)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.entries.insert(name.into(), grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn merge(&mut self, other: Gradients) -> Result<(), NnError> {
        for (name, g) in other.entries {
            match self.entries.get_mut(&name) {
                Some(existing) => existing.add_assign(&g)?,
                None => {
                    self.entries.insert(name, g);
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.entries.values_mut() {
            g.scale(k);
        }
    }
}
