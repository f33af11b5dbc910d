//! Small neural-network building blocks on top of candle tensors.
//!
//! Everything here is shared between the frozen backbone and the trainable
//! branches; the [`ParamSource`] trait decides whether a layer's weights are
//! registered as trainable variables or as frozen tensors.

pub mod conv;
pub mod params;

use candle_core::{DType, Device, Tensor};

pub use conv::{conv2d_nhwc, depth_to_space, grad_or_zeros, space_to_depth};
pub use params::{FrozenStore, Init, ParamFactory};

use crate::error::Result;

/// Anything that can mint named parameters: trainable or frozen.
pub trait ParamSource {
    fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor>;
    fn param_from_vec(&self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<Tensor>;
    fn device(&self) -> &Device;
    fn dtype(&self) -> DType;
}

impl ParamSource for ParamFactory {
    fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.var(name, shape, init)
    }
    fn param_from_vec(&self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        self.var_from_vec(name, shape, data)
    }
    fn device(&self) -> &Device {
        ParamFactory::device(self)
    }
    fn dtype(&self) -> DType {
        ParamFactory::dtype(self)
    }
}

impl ParamSource for FrozenStore {
    fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.tensor(name, shape, init)
    }
    fn param_from_vec(&self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = candle_core::Tensor::from_vec(data, shape, self.device())?.to_dtype(DType::F32)?;
        self.insert(name, t)
    }
    fn device(&self) -> &Device {
        FrozenStore::device(self)
    }
    fn dtype(&self) -> DType {
        DType::F32
    }
}

/// Pointwise activation used by blocks in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Relu,
    Gelu,
    /// `x * sigmoid(1.702 * x)`, the activation CLIP-style towers use.
    QuickGelu,
}

impl Act {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Act::Relu => Ok(x.relu()?),
            Act::Gelu => Ok(x.gelu_erf()?),
            Act::QuickGelu => {
                let s = candle_nn::ops::sigmoid(&(x * 1.702)?)?;
                Ok(x.mul(&s)?)
            }
        }
    }
}

/// Dense layer; weight layout `(in, out)` so activations right-multiply.
#[derive(Clone)]
pub struct Linear {
    w: Tensor,
    b: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &dyn ParamSource, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::with_init(ps, name, in_dim, out_dim, Init::XavierNormal, true)
    }

    pub fn with_init(
        ps: &dyn ParamSource,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        bias: bool,
    ) -> Result<Self> {
        let w = ps.param(&format!("{name}.weight"), &[in_dim, out_dim], init)?;
        let b = if bias {
            Some(ps.param(&format!("{name}.bias"), &[out_dim], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.w)?;
        match &self.b {
            Some(b) => Ok(y.broadcast_add(b)?),
            None => Ok(y),
        }
    }

    pub fn weight(&self) -> &Tensor {
        &self.w
    }
}

/// Layer norm over the trailing (channel) dimension.
#[derive(Clone)]
pub struct LayerNorm {
    inner: candle_nn::LayerNorm,
}

impl LayerNorm {
    pub fn new(ps: &dyn ParamSource, name: &str, dim: usize) -> Result<Self> {
        let w = ps.param(&format!("{name}.weight"), &[dim], Init::Ones)?;
        let b = ps.param(&format!("{name}.bias"), &[dim], Init::Zeros)?;
        Ok(Self {
            inner: candle_nn::LayerNorm::new(w, b, 1e-5),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        use candle_nn::Module;
        Ok(self.inner.forward(x)?)
    }
}

/// NHWC convolution layer backed by the gemm fast path.
#[derive(Clone)]
pub struct Conv2d {
    w: Tensor,
    b: Option<Tensor>,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    pub fn new(
        ps: &dyn ParamSource,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let w = ps.param(
            &format!("{name}.weight"),
            &[k * k * c_in, c_out],
            Init::HeNormal,
        )?;
        let b = Some(ps.param(&format!("{name}.bias"), &[c_out], Init::Zeros)?);
        Ok(Self { w, b, k, stride, pad })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d_nhwc(x, &self.w, self.k, self.stride, self.pad)?;
        match &self.b {
            Some(b) => Ok(y.broadcast_add(b)?),
            None => Ok(y),
        }
    }
}

/// Stride-`s`, kernel-`s` transposed convolution: a dense map to `s*s*c_out`
/// followed by pixel shuffling. Upsamples spatial dims by `s` exactly.
#[derive(Clone)]
pub struct ConvTranspose {
    lin: Linear,
    s: usize,
}

impl ConvTranspose {
    pub fn new(ps: &dyn ParamSource, name: &str, c_in: usize, c_out: usize, s: usize) -> Result<Self> {
        let lin = Linear::with_init(ps, name, c_in, s * s * c_out, Init::XavierNormal, true)?;
        Ok(Self { lin, s })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        depth_to_space(&self.lin.forward(x)?, self.s)
    }
}

/// Multi-head self-attention over `(batch, tokens, dim)`.
#[derive(Clone)]
pub struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    head_dim: usize,
    causal: bool,
}

impl SelfAttention {
    pub fn new(ps: &dyn ParamSource, name: &str, dim: usize, heads: usize, causal: bool) -> Result<Self> {
        if dim % heads != 0 {
            return Err(crate::error::Error::config(format!(
                "attention dim {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(ps, &format!("{name}.q"), dim, dim)?,
            k: Linear::new(ps, &format!("{name}.k"), dim, dim)?,
            v: Linear::new(ps, &format!("{name}.v"), dim, dim)?,
            o: Linear::new(ps, &format!("{name}.out"), dim, dim)?,
            heads,
            head_dim: dim / heads,
            causal,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        Ok(x.reshape((b, t, self.heads, self.head_dim))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let q = self.split_heads(&self.q.forward(x)?)?;
        let k = self.split_heads(&self.k.forward(x)?)?;
        let v = self.split_heads(&self.v.forward(x)?)?;
        let scale = (self.head_dim as f64).powf(-0.5);
        let mut att = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * scale)?;
        if self.causal {
            let mask: Vec<f32> = (0..t)
                .flat_map(|i| (0..t).map(move |j| if j > i { f32::NEG_INFINITY } else { 0.0 }))
                .collect();
            let mask = Tensor::from_vec(mask, (t, t), x.device())?.to_dtype(x.dtype())?;
            att = att.broadcast_add(&mask)?;
        }
        let att = candle_nn::ops::softmax(&att, candle_core::D::Minus1)?;
        let y = att.matmul(&v)?;
        let y = y.transpose(1, 2)?.contiguous()?.reshape((b, t, d))?;
        self.o.forward(&y)
    }
}

/// Pre-norm transformer block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
#[derive(Clone)]
pub struct TransformerBlock {
    ln1: LayerNorm,
    attn: SelfAttention,
    ln2: LayerNorm,
    fc: Linear,
    proj: Linear,
    act: Act,
}

impl TransformerBlock {
    pub fn new(
        ps: &dyn ParamSource,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        act: Act,
        causal: bool,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), dim)?,
            attn: SelfAttention::new(ps, &format!("{name}.attn"), dim, heads, causal)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), dim)?,
            fc: Linear::new(ps, &format!("{name}.mlp.fc"), dim, dim * mlp_ratio)?,
            proj: Linear::new(ps, &format!("{name}.mlp.proj"), dim * mlp_ratio, dim)?,
            act,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = (x + self.attn.forward(&self.ln1.forward(x)?)?)?;
        let m = self.proj.forward(&self.act.apply(&self.fc.forward(&self.ln2.forward(&h)?)?)?)?;
        Ok((h + m)?)
    }
}
