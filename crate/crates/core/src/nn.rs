//! Named parameter storage and the small set of layers the networks use.
//!
//! Trainable parameters are candle [`Var`]s registered in a [`ParamStore`]
//! under dotted names. Layers hold tensor handles that share storage with
//! those vars, so an in-place optimizer update through the store is visible
//! to every layer. Frozen networks build their layers from plain tensors and
//! never appear in a gradient graph.

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor, Var, D};
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.vars.len())
            .field("dtype", &self.dtype)
            .finish()
    }
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn register(&mut self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::InvalidArgument(format!("parameter `{name}` registered twice")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(handle)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Detached copies of every parameter, keyed by name.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().detach().copy()?)))
            .collect()
    }

    /// Overwrite every parameter from `tensors[prefix + name]`.
    pub fn assign(&self, tensors: &HashMap<String, Tensor>, prefix: &str) -> Result<()> {
        for (name, var) in &self.vars {
            let key = format!("{prefix}{name}");
            let t = tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{key}` has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Set every parameter whose name starts with `prefix` to zero.
    pub fn zero_prefix(&self, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (name, var) in self.vars.range(prefix.to_string()..) {
            if !name.starts_with(prefix) {
                break;
            }
            var.set(&var.zeros_like()?)?;
            n += 1;
        }
        Ok(n)
    }

    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in &self.vars {
            h.update(name.as_bytes());
            h.update(tensor_le_bytes(var.as_tensor())?);
        }
        Ok(hex(&h.finalize()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn tensor_le_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => flat
            .to_vec1::<f64>()?
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect(),
        _ => flat
            .to_dtype(DType::F32)?
            .to_vec1::<f32>()?
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect(),
    })
}

/// He-normal draw for a layer with the given fan-in.
fn he_normal(rng: &mut RngStream, n: usize, fan_in: usize) -> Vec<f64> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        rng: &mut RngStream,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = c_in * kernel * kernel;
        let weight = store.register(
            &format!("{name}.weight"),
            he_normal(rng, c_out * fan_in, fan_in),
            &[c_out, c_in, kernel, kernel],
        )?;
        let bias = if bias {
            Some(store.register(&format!("{name}.bias"), vec![0.0; c_out], &[c_out])?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        add_channel_bias(y, self.bias.as_ref())
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        rng: &mut RngStream,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        bias: bool,
    ) -> Result<Self> {
        // each output pixel sees roughly c_in * k^2 / s^2 inputs
        let fan_in = (c_in * kernel * kernel / (stride * stride)).max(1);
        let weight = store.register(
            &format!("{name}.weight"),
            he_normal(rng, c_in * c_out * kernel * kernel, fan_in),
            &[c_in, c_out, kernel, kernel],
        )?;
        let bias = if bias {
            Some(store.register(&format!("{name}.bias"), vec![0.0; c_out], &[c_out])?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(
            &self.weight,
            self.padding,
            self.output_padding,
            self.stride,
            1,
        )?;
        add_channel_bias(y, self.bias.as_ref())
    }
}

fn add_channel_bias(y: Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    match bias {
        Some(b) => {
            let c = b.dim(0)?;
            Ok(y.broadcast_add(&b.reshape((1, c, 1, 1))?)?)
        }
        None => Ok(y),
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut RngStream,
        name: &str,
        d_in: usize,
        d_out: usize,
        gain: f64,
    ) -> Result<Self> {
        let values = he_normal(rng, d_in * d_out, d_in)
            .into_iter()
            .map(|v| v * gain)
            .collect();
        let weight = store.register(&format!("{name}.weight"), values, &[d_out, d_in])?;
        let bias = store.register(&format!("{name}.bias"), vec![0.0; d_out], &[d_out])?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// Per-sample, per-channel normalization over the spatial dims with a
/// learned affine.
#[derive(Clone, Debug)]
pub struct InstanceNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl InstanceNorm {
    pub fn init(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.register(&format!("{name}.gamma"), vec![1.0; channels], &[channels])?,
            beta: store.register(&format!("{name}.beta"), vec![0.0; channels], &[channels])?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let flat = x.reshape((b, c, h * w))?;
        let mean = flat.mean_keepdim(D::Minus1)?;
        let centered = flat.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let normed = normed.reshape((b, c, h, w))?;
        let gamma = self.gamma.reshape((1, c, 1, 1))?;
        let beta = self.beta.reshape((1, c, 1, 1))?;
        Ok(normed.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    if slope == 0.0 {
        return Ok(x.relu()?);
    }
    let zeros = x.zeros_like()?;
    Ok((x.maximum(&zeros)? + (x.minimum(&zeros)? * slope)?)?)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

/// Fail with [`Error::NonFiniteActivation`] if `t` holds a NaN or infinity.
pub fn ensure_finite(t: &Tensor, stage: &str) -> Result<()> {
    let flat = t.flatten_all()?;
    let finite = match t.dtype() {
        DType::F64 => flat.to_vec1::<f64>()?.iter().all(|v| v.is_finite()),
        _ => flat.to_dtype(DType::F32)?.to_vec1::<f32>()?.iter().all(|v| v.is_finite()),
    };
    if finite {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation(stage.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_prefix_only_touches_matching_names() {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = RngStream::seed_from_u64(0);
        let a = Conv2d::init(&mut store, &mut rng, "block.1", 2, 2, 3, 1, 1, true).unwrap();
        let b = Conv2d::init(&mut store, &mut rng, "block.10", 2, 2, 3, 1, 1, true).unwrap();
        assert_eq!(store.zero_prefix("block.1.").unwrap(), 2);
        let sum = |t: &Tensor| t.abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(sum(&a.weight), 0.0);
        assert!(sum(&b.weight) > 0.0);
    }

    #[test]
    fn instance_norm_standardizes_each_channel() {
        let mut store = ParamStore::new(DType::F64);
        let norm = InstanceNorm::init(&mut store, "n", 2).unwrap();
        let x = Tensor::arange(0f64, 32.0, &Device::Cpu)
            .unwrap()
            .reshape((2, 2, 2, 4))
            .unwrap();
        let y = norm.forward(&x).unwrap();
        let flat = y.reshape((4, 8)).unwrap();
        let means: Vec<f64> = flat.mean(1).unwrap().to_vec1().unwrap();
        assert!(means.iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn softplus_is_stable() {
        let x = Tensor::new(&[-1000f64, 0.0, 1000.0], &Device::Cpu).unwrap();
        let y: Vec<f64> = softplus(&x).unwrap().to_vec1().unwrap();
        assert!(y[0].abs() < 1e-300);
        assert!((y[1] - 2f64.ln()).abs() < 1e-12);
        assert!((y[2] - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_detection() {
        let ok = Tensor::new(&[[1f32, 2.0]], &Device::Cpu).unwrap();
        assert!(ensure_finite(&ok, "x").is_ok());
        let bad = Tensor::new(&[[1f32, f32::NAN]], &Device::Cpu).unwrap();
        assert!(ensure_finite(&bad, "x").is_err());
    }

    #[test]
    fn var_updates_are_visible_through_layer_handles() {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = RngStream::seed_from_u64(0);
        let lin = Linear::init(&mut store, &mut rng, "fc", 3, 2, 1.0).unwrap();
        store.get("fc.bias").unwrap().set(&Tensor::new(&[5f32, 6.0], &Device::Cpu).unwrap()).unwrap();
        let b: Vec<f32> = lin.bias.to_vec1().unwrap();
        assert_eq!(b, vec![5.0, 6.0]);
    }
}
