//! Two-headed discriminator: a shared convolutional trunk, then one linear
//! layer whose first output is the real/fake logit and whose remaining
//! outputs are identity-class logits.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, Conv2d, Linear, ParamStore};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// One conv + max-pool stage per entry.
    pub trunk_channels: Vec<usize>,
    /// Filled from the dataset manifest when absent.
    pub num_classes: Option<usize>,
    pub input_size: usize,
    /// 0 gives a plain ReLU.
    pub leaky_slope: f64,
    /// Also apply the class loss to generated images, labelled with the
    /// source identity.
    pub classify_fake: bool,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            trunk_channels: vec![64, 128, 256, 512, 512],
            num_classes: None,
            input_size: 256,
            leaky_slope: 0.2,
            classify_fake: false,
            seed: 0,
        }
    }
}

impl DiscriminatorConfig {
    pub fn miniature(num_classes: usize) -> Self {
        Self {
            trunk_channels: vec![16, 32, 32],
            num_classes: Some(num_classes),
            input_size: 32,
            ..Self::default()
        }
    }

    pub fn feature_side(&self) -> usize {
        self.input_size >> self.trunk_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.trunk_channels.is_empty() || self.trunk_channels.contains(&0) {
            return Err(Error::config(
                "discriminator.trunk_channels",
                "need at least one stage with positive width",
            ));
        }
        let stages = self.trunk_channels.len();
        if self.input_size == 0 || self.input_size % (1 << stages) != 0 {
            return Err(Error::config(
                "discriminator.input_size",
                format!("{} is not divisible by 2^{stages}", self.input_size),
            ));
        }
        match self.num_classes {
            Some(n) if n >= 2 => {}
            Some(n) => {
                return Err(Error::config(
                    "discriminator.num_classes",
                    format!("need at least 2 identities, got {n}"),
                ))
            }
            None => {
                return Err(Error::config(
                    "discriminator.num_classes",
                    "unset and no dataset to infer it from",
                ))
            }
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::config("discriminator.leaky_slope", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DiscOutput {
    /// `N` real/fake logits.
    pub realness: Tensor,
    /// `N × num_classes` identity logits.
    pub class_logits: Tensor,
}

pub struct Discriminator {
    cfg: DiscriminatorConfig,
    num_classes: usize,
    store: ParamStore,
    trunk: Vec<Conv2d>,
    head: Linear,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let num_classes = cfg.num_classes.unwrap_or_default();
        let mut store = ParamStore::new(dtype);
        let mut rng = rng::stream(cfg.seed, rng::tag::DISCRIMINATOR_INIT, 0);
        let mut trunk = Vec::new();
        let mut cin = 3;
        for (i, &cout) in cfg.trunk_channels.iter().enumerate() {
            trunk.push(Conv2d::init(
                &mut store,
                &mut rng,
                &format!("trunk.{i}"),
                cin,
                cout,
                3,
                1,
                1,
                true,
            )?);
            cin = cout;
        }
        let side = cfg.feature_side();
        let head = Linear::init(
            &mut store,
            &mut rng,
            "head",
            cin * side * side,
            1 + num_classes,
            0.1,
        )?;
        Ok(Self {
            cfg,
            num_classes,
            store,
            trunk,
            head,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn discriminate(&self, x: &Tensor) -> Result<DiscOutput> {
        let (_, c, h, w) = x.dims4()?;
        let s = self.cfg.input_size;
        if c != 3 || h != s || w != s {
            return Err(Error::dims(format!(
                "discriminator expects 3x{s}x{s} images, got {c}x{h}x{w}"
            )));
        }
        let mut h = x.to_dtype(self.store.dtype())?;
        for conv in &self.trunk {
            h = leaky_relu(&conv.forward(&h)?, self.cfg.leaky_slope)?.max_pool2d(2)?;
        }
        let logits = self.head.forward(&h.flatten_from(1)?)?;
        Ok(DiscOutput {
            realness: logits.narrow(1, 0, 1)?.squeeze(1)?,
            class_logits: logits.narrow(1, 1, self.num_classes)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn head_shapes() {
        let d = Discriminator::new(DiscriminatorConfig::miniature(7), DType::F32).unwrap();
        let x = Tensor::zeros((3, 3, 32, 32), DType::F32, &Device::Cpu).unwrap();
        let out = d.discriminate(&x).unwrap();
        assert_eq!(out.realness.dims(), &[3]);
        assert_eq!(out.class_logits.dims(), &[3, 7]);
    }

    #[test]
    fn default_trunk_reaches_eight_by_eight() {
        let cfg = DiscriminatorConfig {
            num_classes: Some(751),
            ..Default::default()
        };
        assert_eq!(cfg.feature_side(), 8);
        let d = Discriminator::new(cfg, DType::F32).unwrap();
        let x = Tensor::zeros((1, 3, 256, 256), DType::F32, &Device::Cpu).unwrap();
        let out = d.discriminate(&x).unwrap();
        assert_eq!(out.class_logits.dims(), &[1, 751]);
    }

    #[test]
    fn wrong_resolution_is_rejected() {
        let d = Discriminator::new(DiscriminatorConfig::miniature(4), DType::F32).unwrap();
        let x = Tensor::zeros((1, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(d.discriminate(&x), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn missing_class_count_is_a_config_error() {
        let cfg = DiscriminatorConfig::default();
        assert!(matches!(
            Discriminator::new(cfg, DType::F32),
            Err(Error::Config { ref key, .. }) if key == "discriminator.num_classes"
        ));
    }

    #[test]
    fn deterministic_init() {
        let a = Discriminator::new(DiscriminatorConfig::miniature(3), DType::F32).unwrap();
        let b = Discriminator::new(DiscriminatorConfig::miniature(3), DType::F32).unwrap();
        assert_eq!(a.params().checksum().unwrap(), b.params().checksum().unwrap());
    }

    #[test]
    fn permuting_the_batch_permutes_the_outputs() {
        let d = Discriminator::new(DiscriminatorConfig::miniature(5), DType::F32).unwrap();
        let x = Tensor::rand(-1f32, 1f32, (4, 3, 32, 32), &Device::Cpu).unwrap();
        let perm = Tensor::new(&[2u32, 0, 3, 1], &Device::Cpu).unwrap();
        let a = d.discriminate(&x).unwrap();
        let b = d.discriminate(&x.index_select(&perm, 0).unwrap()).unwrap();
        let expect = a.class_logits.contiguous().unwrap().index_select(&perm, 0).unwrap();
        assert_eq!(expect.to_vec2::<f32>().unwrap(), b.class_logits.to_vec2::<f32>().unwrap());
        let expect = a.realness.contiguous().unwrap().index_select(&perm, 0).unwrap();
        assert_eq!(expect.to_vec1::<f32>().unwrap(), b.realness.to_vec1::<f32>().unwrap());
    }
}
