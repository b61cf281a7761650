//! Frozen image descriptor networks.
//!
//! Two implementations sit behind [`Backbone`]: a pretrained 50-layer
//! residual classifier loaded from a safetensors file (torchvision parameter
//! names), and a small seeded convnet that needs no download. Both hold plain
//! tensors, never vars, so no optimizer can reach them.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{images_to_tensor, Image};
use crate::nn::{hex, tensor_le_bytes, Conv2d, Linear};
use crate::rng;

pub const RESNET50_DIM: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Reference,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub weights_path: Option<PathBuf>,
    pub dim: usize,
    /// Seed of the test backbone's frozen random weights.
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            kind: BackboneKind::Test,
            weights_path: None,
            dim: 64,
            seed: 0,
        }
    }
}

/// Pooled image vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    pub values: Vec<f32>,
}

pub trait Backbone: Send + Sync {
    fn dim(&self) -> usize;
    fn input_size(&self) -> usize;
    fn kind(&self) -> BackboneKind;
    /// `N × 3 × S × S` in `[-1, 1]` to `N × dim`.
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
    fn checksum(&self) -> Result<String>;
}

fn check_input(x: &Tensor, size: usize) -> Result<()> {
    let (_, c, h, w) = x.dims4()?;
    if c != 3 || h != size || w != size {
        return Err(Error::dims(format!(
            "backbone expects 3x{size}x{size} inputs, got {c}x{h}x{w}"
        )));
    }
    Ok(())
}

pub fn extract_batch(images: &[Image], backbone: &dyn Backbone) -> Result<Tensor> {
    let x = images_to_tensor(images, DType::F32, &Device::Cpu)?;
    Ok(backbone.forward(&x)?.detach())
}

pub fn extract_descriptor(img: &Image, backbone: &dyn Backbone) -> Result<Descriptor> {
    let d = extract_batch(std::slice::from_ref(img), backbone)?;
    Ok(Descriptor {
        values: d.squeeze(0)?.to_vec1()?,
    })
}

fn checksum_tensors<'a>(tensors: impl Iterator<Item = (&'a str, &'a Tensor)>) -> Result<String> {
    let mut h = Sha256::new();
    for (name, t) in tensors {
        h.update(name.as_bytes());
        h.update(tensor_le_bytes(t)?);
    }
    Ok(hex(&h.finalize()))
}

/// Three stride-2 convolutions with ReLU, then global average pooling.
pub struct TestBackbone {
    convs: Vec<Conv2d>,
    dim: usize,
    input_size: usize,
}

impl TestBackbone {
    pub fn new(dim: usize, seed: u64, input_size: usize) -> Result<Self> {
        use rand::Rng;
        let mut rng = rng::stream(seed, rng::tag::BACKBONE_INIT, 0);
        let widths = [3, 16, 32, dim];
        let mut convs = Vec::new();
        for pair in widths.windows(2) {
            let (cin, cout) = (pair[0], pair[1]);
            let fan_in = (cin * 9) as f32;
            let bound = (6.0 / fan_in).sqrt();
            let w: Vec<f32> = (0..cout * cin * 9).map(|_| rng.gen_range(-bound..bound)).collect();
            let b: Vec<f32> = (0..cout).map(|_| rng.gen_range(-0.1..0.1)).collect();
            convs.push(Conv2d {
                weight: Tensor::from_vec(w, (cout, cin, 3, 3), &Device::Cpu)?,
                bias: Some(Tensor::from_vec(b, cout, &Device::Cpu)?),
                stride: 2,
                padding: 1,
            });
        }
        Ok(Self {
            convs,
            dim,
            input_size,
        })
    }
}

impl Backbone for TestBackbone {
    fn dim(&self) -> usize {
        self.dim
    }

    fn input_size(&self) -> usize {
        self.input_size
    }

    fn kind(&self) -> BackboneKind {
        BackboneKind::Test
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_input(x, self.input_size)?;
        let mut h = x.to_dtype(DType::F32)?;
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
        }
        Ok(h.mean(D::Minus1)?.mean(D::Minus1)?)
    }

    fn checksum(&self) -> Result<String> {
        let mut named = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            named.push((format!("conv{i}.weight"), &c.weight));
            if let Some(b) = &c.bias {
                named.push((format!("conv{i}.bias"), b));
            }
        }
        checksum_tensors(named.iter().map(|(n, t)| (n.as_str(), *t)))
    }
}

/// Inference-mode batch norm folded to a per-channel scale and shift.
struct FrozenBn {
    scale: Tensor,
    shift: Tensor,
}

impl FrozenBn {
    fn load(w: &HashMap<String, Tensor>, name: &str) -> Result<Self> {
        let get = |s: &str| fetch(w, &format!("{name}.{s}"));
        let gamma = get("weight")?;
        let beta = get("bias")?;
        let mean = get("running_mean")?;
        let var = get("running_var")?;
        let scale = gamma.div(&(var + 1e-5)?.sqrt()?)?;
        let shift = beta.sub(&mean.mul(&scale)?)?;
        let c = scale.dim(0)?;
        Ok(Self {
            scale: scale.reshape((1, c, 1, 1))?,
            shift: shift.reshape((1, c, 1, 1))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_mul(&self.scale)?.broadcast_add(&self.shift)?)
    }
}

fn fetch(w: &HashMap<String, Tensor>, name: &str) -> Result<Tensor> {
    w.get(name)
        .ok_or_else(|| Error::WeightsUnavailable(format!("tensor `{name}` missing from weights file")))?
        .to_dtype(DType::F32)
        .map_err(Error::from)
}

fn frozen_conv(w: &HashMap<String, Tensor>, name: &str, stride: usize, padding: usize) -> Result<Conv2d> {
    Ok(Conv2d {
        weight: fetch(w, &format!("{name}.weight"))?,
        bias: None,
        stride,
        padding,
    })
}

struct Bottleneck {
    conv1: Conv2d,
    bn1: FrozenBn,
    conv2: Conv2d,
    bn2: FrozenBn,
    conv3: Conv2d,
    bn3: FrozenBn,
    downsample: Option<(Conv2d, FrozenBn)>,
}

impl Bottleneck {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x)?)?.relu()?;
        let h = self.bn2.forward(&self.conv2.forward(&h)?)?.relu()?;
        let h = self.bn3.forward(&self.conv3.forward(&h)?)?;
        let skip = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?)?,
            None => x.clone(),
        };
        Ok((h + skip)?.relu()?)
    }
}

const STAGES: [(usize, usize); 4] = [(3, 64), (4, 128), (6, 256), (3, 512)];
const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// 50-layer bottleneck residual network (torchvision layout), frozen.
pub struct ResNet50 {
    stem: Conv2d,
    stem_bn: FrozenBn,
    blocks: Vec<Bottleneck>,
    fc: Option<Linear>,
    input_size: usize,
    tensors: Vec<(String, Tensor)>,
}

impl ResNet50 {
    pub fn load(path: &Path, input_size: usize) -> Result<Self> {
        if !path.exists() {
            return Err(Error::WeightsUnavailable(format!(
                "weights file {} not found",
                path.display()
            )));
        }
        let w = candle_core::safetensors::load(path, &Device::Cpu)?;
        Self::from_tensors(&w, input_size)
    }

    pub fn from_tensors(w: &HashMap<String, Tensor>, input_size: usize) -> Result<Self> {
        let stem = Conv2d {
            stride: 2,
            padding: 3,
            ..frozen_conv(w, "conv1", 2, 3)?
        };
        let stem_bn = FrozenBn::load(w, "bn1")?;
        let mut blocks = Vec::new();
        let mut in_ch = 64;
        for (li, &(count, width)) in STAGES.iter().enumerate() {
            for bi in 0..count {
                let p = format!("layer{}.{bi}", li + 1);
                let stride = if bi == 0 && li > 0 { 2 } else { 1 };
                let downsample = if bi == 0 {
                    Some((
                        frozen_conv(w, &format!("{p}.downsample.0"), stride, 0)?,
                        FrozenBn::load(w, &format!("{p}.downsample.1"))?,
                    ))
                } else {
                    None
                };
                blocks.push(Bottleneck {
                    conv1: frozen_conv(w, &format!("{p}.conv1"), 1, 0)?,
                    bn1: FrozenBn::load(w, &format!("{p}.bn1"))?,
                    conv2: frozen_conv(w, &format!("{p}.conv2"), stride, 1)?,
                    bn2: FrozenBn::load(w, &format!("{p}.bn2"))?,
                    conv3: frozen_conv(w, &format!("{p}.conv3"), 1, 0)?,
                    bn3: FrozenBn::load(w, &format!("{p}.bn3"))?,
                    downsample,
                });
                in_ch = width * 4;
            }
        }
        let fc = match (w.get("fc.weight"), w.get("fc.bias")) {
            (Some(weight), Some(bias)) => Some(Linear {
                weight: weight.to_dtype(DType::F32)?,
                bias: bias.to_dtype(DType::F32)?,
            }),
            _ => None,
        };
        if let Some(fc) = &fc {
            let (_, fc_in) = fc.weight.dims2()?;
            if fc_in != in_ch {
                return Err(Error::WeightsUnavailable(format!(
                    "classifier layer expects {fc_in} features, trunk produces {in_ch}"
                )));
            }
        }
        let last = blocks.last().expect("four stages");
        let (trunk_out, ..) = last.conv3.weight.dims4()?;
        if trunk_out != RESNET50_DIM {
            return Err(Error::WeightsUnavailable(format!(
                "pooled width is {trunk_out}, expected {RESNET50_DIM}"
            )));
        }
        let mut tensors: Vec<(String, Tensor)> = w.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        tensors.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self {
            stem,
            stem_bn,
            blocks,
            fc,
            input_size,
            tensors,
        })
    }

    /// He-initialized weights with unit batch-norm statistics, in the
    /// torchvision naming scheme. Used to exercise the loader offline.
    pub fn random_weights(seed: u64, with_fc: bool) -> Result<HashMap<String, Tensor>> {
        use rand_distr::{Distribution, Normal};
        let mut rng = rng::stream(seed, rng::tag::BACKBONE_INIT, 1);
        let mut w = HashMap::new();
        let mut conv = |w: &mut HashMap<String, Tensor>, name: &str, cout: usize, cin: usize, k: usize| -> Result<()> {
            let std = (2.0 / (cin * k * k) as f32).sqrt();
            let dist = Normal::new(0.0f32, std).expect("finite std");
            let v: Vec<f32> = (0..cout * cin * k * k).map(|_| dist.sample(&mut rng)).collect();
            w.insert(format!("{name}.weight"), Tensor::from_vec(v, (cout, cin, k, k), &Device::Cpu)?);
            Ok(())
        };
        let bn = |w: &mut HashMap<String, Tensor>, name: &str, c: usize| -> Result<()> {
            let ones = Tensor::ones(c, DType::F32, &Device::Cpu)?;
            let zeros = Tensor::zeros(c, DType::F32, &Device::Cpu)?;
            w.insert(format!("{name}.weight"), ones.clone());
            w.insert(format!("{name}.bias"), zeros.clone());
            w.insert(format!("{name}.running_mean"), zeros);
            w.insert(format!("{name}.running_var"), ones);
            Ok(())
        };
        conv(&mut w, "conv1", 64, 3, 7)?;
        bn(&mut w, "bn1", 64)?;
        let mut in_ch = 64;
        for (li, &(count, width)) in STAGES.iter().enumerate() {
            for bi in 0..count {
                let p = format!("layer{}.{bi}", li + 1);
                conv(&mut w, &format!("{p}.conv1"), width, in_ch, 1)?;
                bn(&mut w, &format!("{p}.bn1"), width)?;
                conv(&mut w, &format!("{p}.conv2"), width, width, 3)?;
                bn(&mut w, &format!("{p}.bn2"), width)?;
                conv(&mut w, &format!("{p}.conv3"), width * 4, width, 1)?;
                bn(&mut w, &format!("{p}.bn3"), width * 4)?;
                if bi == 0 {
                    conv(&mut w, &format!("{p}.downsample.0"), width * 4, in_ch, 1)?;
                    bn(&mut w, &format!("{p}.downsample.1"), width * 4)?;
                }
                in_ch = width * 4;
            }
        }
        if with_fc {
            let dist = Normal::new(0.0f32, 0.01).expect("finite std");
            let v: Vec<f32> = (0..1000 * in_ch).map(|_| dist.sample(&mut rng)).collect();
            w.insert("fc.weight".into(), Tensor::from_vec(v, (1000, in_ch), &Device::Cpu)?);
            w.insert("fc.bias".into(), Tensor::zeros(1000, DType::F32, &Device::Cpu)?);
        }
        Ok(w)
    }

    fn normalize_input(&self, x: &Tensor) -> Result<Tensor> {
        let unit = ((x.to_dtype(DType::F32)? + 1.0)? * 0.5)?;
        let mean = Tensor::new(&IMAGENET_MEAN, &Device::Cpu)?.reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&IMAGENET_STD, &Device::Cpu)?.reshape((1, 3, 1, 1))?;
        Ok(unit.broadcast_sub(&mean)?.broadcast_div(&std)?)
    }

    pub fn pooled(&self, x: &Tensor) -> Result<Tensor> {
        check_input(x, self.input_size)?;
        let h = self.normalize_input(x)?;
        let h = self.stem_bn.forward(&self.stem.forward(&h)?)?.relu()?;
        // edge replication is neutral for max pooling
        let h = h.pad_with_same(2, 1, 1)?.pad_with_same(3, 1, 1)?;
        let mut h = h.max_pool2d_with_stride((3, 3), (2, 2))?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        Ok(h.mean(D::Minus1)?.mean(D::Minus1)?)
    }

    pub fn has_classifier(&self) -> bool {
        self.fc.is_some()
    }

    /// Class logits from the pretrained classification layer.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let fc = self
            .fc
            .as_ref()
            .ok_or_else(|| Error::WeightsUnavailable("weights file has no classification layer".into()))?;
        fc.forward(&self.pooled(x)?)
    }
}

impl Backbone for ResNet50 {
    fn dim(&self) -> usize {
        RESNET50_DIM
    }

    fn input_size(&self) -> usize {
        self.input_size
    }

    fn kind(&self) -> BackboneKind {
        BackboneKind::Reference
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.pooled(x)
    }

    fn checksum(&self) -> Result<String> {
        checksum_tensors(self.tensors.iter().map(|(n, t)| (n.as_str(), t)))
    }
}

pub fn load_backbone(cfg: &BackboneConfig, input_size: usize) -> Result<Box<dyn Backbone>> {
    match cfg.kind {
        BackboneKind::Test => Ok(Box::new(TestBackbone::new(cfg.dim, cfg.seed, input_size)?)),
        BackboneKind::Reference => {
            if cfg.dim != RESNET50_DIM {
                return Err(Error::config(
                    "backbone.dim",
                    format!("reference backbone produces {RESNET50_DIM} features, config says {}", cfg.dim),
                ));
            }
            let path = cfg.weights_path.as_ref().ok_or_else(|| {
                Error::config("backbone.weights_path", "required when backbone.kind = \"reference\"")
            })?;
            Ok(Box::new(ResNet50::load(path, input_size)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_backbone_is_deterministic() {
        let bb = TestBackbone::new(64, 3, 32).unwrap();
        let img = Image::from_fn(32, 32, |y, x| [y as f32 / 32.0, x as f32 / 32.0, 0.5]);
        let a = extract_descriptor(&img, &bb).unwrap();
        let b = extract_descriptor(&img, &bb).unwrap();
        assert_eq!(a.values.len(), 64);
        assert_eq!(a, b);
        assert_eq!(bb.checksum().unwrap(), TestBackbone::new(64, 3, 32).unwrap().checksum().unwrap());
        assert_ne!(bb.checksum().unwrap(), TestBackbone::new(64, 4, 32).unwrap().checksum().unwrap());
    }

    #[test]
    fn constant_inputs_share_the_bias_pathway() {
        let bb = TestBackbone::new(16, 0, 32).unwrap();
        // all-zero network input is the mid-gray storage image
        let gray = Image::filled(32, 32, [0.5; 3]);
        let batch = extract_batch(&[gray.clone(), gray.clone(), gray], &bb).unwrap();
        let rows: Vec<Vec<f32>> = batch.to_vec2().unwrap();
        assert_eq!(rows[0], rows[1]);
        assert_eq!(rows[1], rows[2]);

        let zero = Tensor::zeros((1, 3, 32, 32), DType::F32, &Device::Cpu).unwrap();
        let first = bb.convs[0].forward(&zero).unwrap().relu().unwrap();
        let bias: Vec<f32> = bb.convs[0].bias.as_ref().unwrap().relu().unwrap().to_vec1().unwrap();
        let per_channel: Vec<Vec<f32>> = first.squeeze(0).unwrap().flatten_from(1).unwrap().to_vec2().unwrap();
        for (plane, b) in per_channel.iter().zip(&bias) {
            assert!(plane.iter().all(|v| v == b));
        }
        let direct: Vec<f32> = bb.forward(&zero).unwrap().squeeze(0).unwrap().to_vec1().unwrap();
        assert_eq!(rows[0], direct);
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let bb = TestBackbone::new(8, 0, 32).unwrap();
        let img = Image::zeros(16, 16);
        assert!(matches!(extract_descriptor(&img, &bb), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn resnet50_loads_from_safetensors_and_pools_to_2048() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resnet50.safetensors");
        let w = ResNet50::random_weights(0, true).unwrap();
        candle_core::safetensors::save(&w, &path).unwrap();
        let net = ResNet50::load(&path, 64).unwrap();
        assert_eq!(net.dim(), RESNET50_DIM);
        let img = Image::from_fn(64, 64, |y, x| [y as f32 / 64.0, x as f32 / 64.0, 0.3]);
        let d = extract_descriptor(&img, &net).unwrap();
        assert_eq!(d.values.len(), 2048);
        assert!(d.values.iter().all(|v| v.is_finite()));
        let x = images_to_tensor(&[img], DType::F32, &Device::Cpu).unwrap();
        assert_eq!(net.logits(&x).unwrap().dims(), &[1, 1000]);
    }

    #[test]
    fn missing_weights_are_reported() {
        let cfg = BackboneConfig {
            kind: BackboneKind::Reference,
            weights_path: Some("/nonexistent/resnet50.safetensors".into()),
            dim: RESNET50_DIM,
            seed: 0,
        };
        assert!(matches!(load_backbone(&cfg, 256), Err(Error::WeightsUnavailable(_))));
        let cfg = BackboneConfig { dim: 64, ..cfg };
        assert!(matches!(load_backbone(&cfg, 256), Err(Error::Config { .. })));
    }
}
