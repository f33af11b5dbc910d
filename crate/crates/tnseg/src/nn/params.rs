//! Parameter creation with deterministic, name-keyed initialization.
//!
//! Trainable parameters live in a [`candle_nn::VarMap`] so the optimizer and
//! checkpointing can enumerate them by name. Frozen parameters (the backbone)
//! are plain tensors kept outside the var map; they can never receive
//! gradients and are checksummed for the frozen-weights invariant.
//!
//! Initialization draws from a ChaCha stream seeded by `(seed, name)`, so a
//! parameter's initial value depends only on its name and the global seed,
//! not on construction order.

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::VarMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Normal with explicit standard deviation.
    Normal(f64),
    /// He/Kaiming normal, std = sqrt(2 / fan_in). `fan_in` is the product of
    /// all dimensions except the last.
    HeNormal,
    /// Xavier/Glorot normal, std = sqrt(2 / (fan_in + fan_out)).
    XavierNormal,
}

fn rng_for(seed: u64, name: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}

/// Standard normal via Box-Muller, driven by the name-keyed stream.
fn sample_normal(rng: &mut ChaCha12Rng, n: usize, std: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(r * theta.cos() * std);
        if out.len() < n {
            out.push(r * theta.sin() * std);
        }
    }
    out
}

fn init_data(seed: u64, name: &str, shape: &[usize], init: Init) -> Vec<f64> {
    let n: usize = shape.iter().product();
    let fan_in: usize = shape[..shape.len().saturating_sub(1)]
        .iter()
        .product::<usize>()
        .max(1);
    let fan_out = *shape.last().unwrap_or(&1);
    match init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::Const(c) => vec![c; n],
        Init::Normal(std) => sample_normal(&mut rng_for(seed, name), n, std),
        Init::HeNormal => {
            let std = (2.0 / fan_in as f64).sqrt();
            sample_normal(&mut rng_for(seed, name), n, std)
        }
        Init::XavierNormal => {
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            sample_normal(&mut rng_for(seed, name), n, std)
        }
    }
}

fn tensor_from_f64(data: Vec<f64>, shape: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
    let t = Tensor::from_vec(data, shape, device)?;
    Ok(t.to_dtype(dtype)?)
}

/// Factory for trainable parameters backed by a [`VarMap`].
pub struct ParamFactory {
    varmap: VarMap,
    seed: u64,
    dtype: DType,
    device: Device,
}

impl ParamFactory {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            varmap: VarMap::new(),
            seed,
            dtype,
            device,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    /// Create (or error on duplicate) a named trainable parameter and return
    /// its tensor handle.
    pub fn var(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let data = init_data(self.seed, name, shape, init);
        let t = tensor_from_f64(data, shape, self.dtype, &self.device)?;
        self.register(name, t)
    }

    /// Create a named trainable parameter from explicit values.
    pub fn var_from_vec(&self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "parameter {name}: {} values for shape {shape:?}",
                data.len()
            )));
        }
        let t = tensor_from_f64(data, shape, self.dtype, &self.device)?;
        self.register(name, t)
    }

    fn register(&self, name: &str, t: Tensor) -> Result<Tensor> {
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        let mut data = self.varmap.data().lock().unwrap();
        if data.contains_key(name) {
            return Err(Error::state(format!("duplicate parameter name {name}")));
        }
        data.insert(name.to_string(), var);
        Ok(handle)
    }

    /// Names of all registered parameters, sorted.
    pub fn names(&self) -> Vec<String> {
        let data = self.varmap.data().lock().unwrap();
        let mut names: Vec<String> = data.keys().cloned().collect();
        names.sort();
        names
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let data = self.varmap.data().lock().unwrap();
        data.values().map(|v| v.as_tensor().elem_count()).sum()
    }
}

/// Factory and container for frozen (non-trainable) parameters.
///
/// Tensors here are plain `Tensor`s: they are not variables, so backward
/// passes cannot produce gradients for them and no optimizer can touch them.
pub struct FrozenStore {
    tensors: std::sync::Mutex<BTreeMap<String, Tensor>>,
    seed: u64,
    dtype: DType,
    device: Device,
}

impl FrozenStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            tensors: std::sync::Mutex::new(BTreeMap::new()),
            seed,
            dtype,
            device,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn tensor(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let data = init_data(self.seed, name, shape, init);
        let t = tensor_from_f64(data, shape, self.dtype, &self.device)?;
        let mut map = self.tensors.lock().unwrap();
        if map.contains_key(name) {
            return Err(Error::state(format!("duplicate frozen tensor name {name}")));
        }
        map.insert(name.to_string(), t.clone());
        Ok(t)
    }

    /// Insert an externally loaded tensor (e.g. from a weights file).
    pub fn insert(&self, name: &str, t: Tensor) -> Result<Tensor> {
        let mut map = self.tensors.lock().unwrap();
        map.insert(name.to_string(), t.clone());
        Ok(t)
    }

    pub fn get(&self, name: &str) -> Option<Tensor> {
        self.tensors.lock().unwrap().get(name).cloned()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.lock().unwrap().keys().cloned().collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors
            .lock()
            .unwrap()
            .values()
            .map(|t| t.elem_count())
            .sum()
    }

    /// SHA-256 over (name, raw bytes) of every tensor in name order.
    ///
    /// Two stores compare equal iff every tensor is bitwise identical, which
    /// is the frozen-weights invariant checked around training steps.
    pub fn checksum(&self) -> Result<[u8; 32]> {
        let map = self.tensors.lock().unwrap();
        let mut hasher = Sha256::new();
        for (name, t) in map.iter() {
            hasher.update(name.as_bytes());
            let flat = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for v in flat {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        Ok(out)
    }

    /// Save all tensors to a safetensors file.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let map = self.tensors.lock().unwrap();
        let pairs: Vec<(String, Tensor)> = map.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        candle_core::safetensors::save(&pairs.into_iter().collect(), path)?;
        Ok(())
    }

    /// Load tensors from a safetensors file, replacing the current contents.
    pub fn load(&self, path: &std::path::Path) -> Result<()> {
        let loaded = candle_core::safetensors::load(path, &self.device)?;
        let mut map = self.tensors.lock().unwrap();
        map.clear();
        for (k, v) in loaded {
            map.insert(k, v.to_dtype(self.dtype)?);
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}
