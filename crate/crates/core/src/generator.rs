//! Pose-transformational generator.
//!
//! `(descriptor, pose)` is concatenated and projected to a small seed feature
//! map, passed through a convolutional stem, a stack of residual blocks, and a
//! transposed-convolution head that doubles resolution per stage up to the
//! output size. Each residual block computes `y = F(x) + x` with
//! `F = up(relu(norm(down(x))))`, a stride-2 convolution followed by a
//! stride-2 transposed convolution.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::backbone::Descriptor;
use crate::error::{Error, Result};
use crate::image::{tensor_to_images, Image};
use crate::nn::{ensure_finite, Conv2d, ConvTranspose2d, InstanceNorm, Linear, ParamStore};
use crate::pose::{PoseVector, NUM_JOINTS};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Instance,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_res_blocks: usize,
    /// Channel width of the stem and every residual block.
    pub base_channels: usize,
    /// Seed feature map `[height, width, channels]`.
    pub latent_map: [usize; 3],
    pub output_size: usize,
    pub descriptor_dim: usize,
    pub pose_include_confidence: bool,
    pub norm: NormKind,
    /// Floor for the halving channel schedule of the upsampling head.
    pub min_channels: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_res_blocks: 9,
            base_channels: 128,
            latent_map: [8, 8, 64],
            output_size: 256,
            descriptor_dim: 64,
            pose_include_confidence: true,
            norm: NormKind::Instance,
            min_channels: 8,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// 4×4×8 seed map, two blocks, 32×32 output.
    pub fn miniature(descriptor_dim: usize) -> Self {
        Self {
            num_res_blocks: 2,
            base_channels: 16,
            latent_map: [4, 4, 8],
            output_size: 32,
            descriptor_dim,
            ..Self::default()
        }
    }

    pub fn pose_dim(&self) -> usize {
        if self.pose_include_confidence {
            NUM_JOINTS * 3
        } else {
            NUM_JOINTS * 2
        }
    }

    pub fn input_dim(&self) -> usize {
        self.descriptor_dim + self.pose_dim()
    }

    pub fn seed_len(&self) -> usize {
        self.latent_map.iter().product()
    }

    pub fn upsample_stages(&self) -> Result<usize> {
        let [h0, w0, _] = self.latent_map;
        if h0 != w0 {
            return Err(Error::config("generator.latent_map", "seed map must be square"));
        }
        let mut size = h0;
        let mut stages = 0;
        while size < self.output_size {
            size *= 2;
            stages += 1;
        }
        if size != self.output_size {
            return Err(Error::config(
                "generator.output_size",
                format!("{} is not {h0} times a power of two", self.output_size),
            ));
        }
        Ok(stages)
    }

    pub fn head_channels(&self) -> Result<Vec<usize>> {
        let n = self.upsample_stages()?;
        Ok((0..n)
            .map(|i| (self.base_channels >> (i + 1)).max(self.min_channels))
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        let [h0, _, c0] = self.latent_map;
        if self.num_res_blocks < 1 {
            return Err(Error::config("generator.num_res_blocks", "must be at least 1"));
        }
        if h0 < 2 || h0 % 2 != 0 {
            return Err(Error::config(
                "generator.latent_map",
                "seed map side must be even so residual blocks can halve it",
            ));
        }
        if c0 == 0 || self.base_channels == 0 || self.min_channels == 0 {
            return Err(Error::config("generator.base_channels", "channel counts must be positive"));
        }
        if self.descriptor_dim == 0 {
            return Err(Error::config("generator.descriptor_dim", "must be positive"));
        }
        self.upsample_stages()?;
        Ok(())
    }
}

/// One residual block: `y = F(x) + x`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub down: Conv2d,
    pub norm: Option<InstanceNorm>,
    pub up: ConvTranspose2d,
    pub channels: usize,
}

impl ResBlock {
    /// The residual branch `F`.
    pub fn branch(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.down.forward(x)?;
        if let Some(norm) = &self.norm {
            h = norm.forward(&h)?;
        }
        self.up.forward(&h.relu()?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.channels || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dims(format!(
                "residual block over {} channels got a {c}x{h}x{w} map",
                self.channels
            )));
        }
        Ok((self.branch(x)? + x)?)
    }
}

pub fn res_block_forward(x: &Tensor, block: &ResBlock) -> Result<Tensor> {
    block.forward(x)
}

struct UpStage {
    up: ConvTranspose2d,
    norm: Option<InstanceNorm>,
}

pub struct Generator {
    cfg: GeneratorConfig,
    store: ParamStore,
    projection: Linear,
    stem: Conv2d,
    stem_norm: Option<InstanceNorm>,
    blocks: Vec<ResBlock>,
    head: Vec<UpStage>,
    out: Conv2d,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(dtype);
        let mut rng = rng::stream(cfg.seed, rng::tag::GENERATOR_INIT, 0);
        let norm = cfg.norm == NormKind::Instance;
        let c = cfg.base_channels;
        let [_, _, c0] = cfg.latent_map;

        let projection = Linear::init(
            &mut store,
            &mut rng,
            "projection",
            cfg.input_dim(),
            cfg.seed_len(),
            std::f64::consts::FRAC_1_SQRT_2,
        )?;
        // convolutions feeding a norm carry no bias: the norm would cancel it
        let stem = Conv2d::init(&mut store, &mut rng, "stem.conv", c0, c, 3, 1, 1, !norm)?;
        let stem_norm = norm
            .then(|| InstanceNorm::init(&mut store, "stem.norm", c))
            .transpose()?;

        let mut blocks = Vec::with_capacity(cfg.num_res_blocks);
        for k in 0..cfg.num_res_blocks {
            let p = format!("blocks.{k}");
            let down = Conv2d::init(&mut store, &mut rng, &format!("{p}.down"), c, c, 3, 2, 1, !norm)?;
            let bnorm = norm
                .then(|| InstanceNorm::init(&mut store, &format!("{p}.norm"), c))
                .transpose()?;
            let up = ConvTranspose2d::init(&mut store, &mut rng, &format!("{p}.up"), c, c, 3, 2, 1, 1, true)?;
            blocks.push(ResBlock {
                down,
                norm: bnorm,
                up,
                channels: c,
            });
        }

        let mut head = Vec::new();
        let mut cin = c;
        for (i, cout) in cfg.head_channels()?.into_iter().enumerate() {
            let up = ConvTranspose2d::init(
                &mut store,
                &mut rng,
                &format!("head.{i}.up"),
                cin,
                cout,
                3,
                2,
                1,
                1,
                !norm,
            )?;
            let hnorm = norm
                .then(|| InstanceNorm::init(&mut store, &format!("head.{i}.norm"), cout))
                .transpose()?;
            head.push(UpStage { up, norm: hnorm });
            cin = cout;
        }
        let out = Conv2d::init(&mut store, &mut rng, "out.conv", cin, 3, 3, 1, 1, true)?;
        Ok(Self {
            cfg,
            store,
            projection,
            stem,
            stem_norm,
            blocks,
            head,
            out,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn blocks(&self) -> &[ResBlock] {
        &self.blocks
    }

    /// Zero every parameter of block `k`'s residual branch.
    pub fn zero_block_branch(&self, k: usize) -> Result<usize> {
        if k >= self.blocks.len() {
            return Err(Error::InvalidArgument(format!("no residual block {k}")));
        }
        self.store.zero_prefix(&format!("blocks.{k}."))
    }

    /// Batched pose conditioning tensor `N × pose_dim`.
    pub fn pose_tensor(&self, poses: &[PoseVector]) -> Result<Tensor> {
        let rows: Vec<f32> = poses
            .iter()
            .flat_map(|p| p.conditioning(self.cfg.pose_include_confidence))
            .collect();
        Ok(Tensor::from_vec(rows, (poses.len(), self.cfg.pose_dim()), &Device::Cpu)?.to_dtype(self.dtype())?)
    }

    /// Concatenate descriptor and pose, project, and reshape to the seed map.
    pub fn merge_inputs(&self, descriptor: &Tensor, pose: &Tensor) -> Result<Tensor> {
        let (b, d) = descriptor.dims2()?;
        let (bp, p) = pose.dims2()?;
        if d != self.cfg.descriptor_dim || p != self.cfg.pose_dim() || b != bp {
            return Err(Error::dims(format!(
                "generator expects {}-d descriptors and {}-d poses, got {b}x{d} and {bp}x{p}",
                self.cfg.descriptor_dim,
                self.cfg.pose_dim()
            )));
        }
        let dtype = self.dtype();
        let z = Tensor::cat(&[descriptor.to_dtype(dtype)?, pose.to_dtype(dtype)?], 1)?;
        let [h0, w0, c0] = self.cfg.latent_map;
        Ok(self.projection.forward(&z)?.reshape((b, c0, h0, w0))?)
    }

    /// `N × 3 × S × S` output in `[-1, 1]`.
    pub fn forward(&self, descriptor: &Tensor, pose: &Tensor) -> Result<Tensor> {
        let mut h = self.stem.forward(&self.merge_inputs(descriptor, pose)?)?;
        if let Some(norm) = &self.stem_norm {
            h = norm.forward(&h)?;
        }
        h = h.relu()?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        ensure_finite(&h, "residual blocks")?;
        for stage in &self.head {
            h = stage.up.forward(&h)?;
            if let Some(norm) = &stage.norm {
                h = norm.forward(&h)?;
            }
            h = h.relu()?;
        }
        let y = self.out.forward(&h)?.tanh()?;
        ensure_finite(&y, "output head")?;
        Ok(y)
    }

    pub fn generate(&self, descriptor: &Descriptor, pose: &PoseVector) -> Result<Image> {
        let d = Tensor::from_slice(&descriptor.values, (1, descriptor.values.len()), &Device::Cpu)?;
        let p = self.pose_tensor(std::slice::from_ref(pose))?;
        let y = self.forward(&d, &p)?;
        Ok(tensor_to_images(&y)?.remove(0))
    }
}
