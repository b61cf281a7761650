//! Adversarial training: losses, learning-rate schedule, the alternating
//! update step, the epoch loop, and training checkpoints.

use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::Augmenter;
use crate::backbone::{Backbone, BackboneConfig};
use crate::checkpoint;
use crate::dataset::{Dataset, Sample, TrainingPair};
use crate::discriminator::{DiscOutput, Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::image::images_to_tensor;
use crate::nn::{hex, softplus, tensor_le_bytes};
use crate::optim::Adam;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvForm {
    /// `-log σ(D(G(z)))`
    NonSaturating,
    /// `log(1 - σ(D(G(z))))`
    Saturating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub batch_size: usize,
    pub lambda_rec: f64,
    pub adv_form: AdvForm,
    pub epochs: u64,
    /// Stop after this many steps in total, even mid-epoch.
    pub max_steps: Option<u64>,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lr0: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            decay_factor: 10.0,
            decay_every: 20,
            batch_size: 32,
            lambda_rec: 10.0,
            adv_form: AdvForm::NonSaturating,
            epochs: 40,
            max_steps: None,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::config("trainer.lr0", "must be positive"));
        }
        if self.decay_every < 1 {
            return Err(Error::config("trainer.decay_every", "must be at least 1"));
        }
        if !(self.decay_factor >= 1.0) {
            return Err(Error::config("trainer.decay_factor", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("trainer.batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("trainer.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("trainer.beta2", "must lie in [0, 1)"));
        }
        if !(self.lambda_rec >= 0.0) {
            return Err(Error::config("trainer.lambda_rec", "must be non-negative"));
        }
        Ok(())
    }
}

/// `lr0 / decay_factor^floor(epoch / decay_every)`
pub fn lr_schedule(epoch: u64, cfg: &TrainerConfig) -> f64 {
    let decades = (epoch / cfg.decay_every.max(1)).min(i32::MAX as u64) as i32;
    cfg.lr0 / cfg.decay_factor.powi(decades)
}

pub struct GeneratorLoss {
    pub total: Tensor,
    /// `lambda_rec · MSE`
    pub rec: f64,
    pub adv: f64,
}

pub struct DiscriminatorLoss {
    pub total: Tensor,
    pub bce: f64,
    pub cce: f64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::dims(format!("MSE over {:?} and {:?}", a.dims(), b.dims())));
    }
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// `lambda_rec · MSE(generated, target)` plus the adversarial term on the
/// discriminator's view of the fakes, omitted when `disc_on_fake` is `None`.
pub fn generator_loss(
    generated: &Tensor,
    target: &Tensor,
    disc_on_fake: Option<&DiscOutput>,
    cfg: &TrainerConfig,
) -> Result<GeneratorLoss> {
    let rec = (mse(generated, &target.to_dtype(generated.dtype())?)? * cfg.lambda_rec)?;
    let mut total = rec.clone();
    let mut adv_value = 0.0;
    if let Some(out) = disc_on_fake {
        let adv = match cfg.adv_form {
            AdvForm::NonSaturating => softplus(&out.realness.neg()?)?.mean_all()?,
            AdvForm::Saturating => softplus(&out.realness)?.mean_all()?.neg()?,
        };
        adv_value = scalar(&adv)?;
        total = (total + adv.to_dtype(rec.dtype())?)?;
    }
    Ok(GeneratorLoss {
        rec: scalar(&rec)?,
        adv: adv_value,
        total,
    })
}

fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, c) = logits.dims2()?;
    if n != labels.len() {
        return Err(Error::dims(format!("{n} logit rows for {} labels", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: c,
        });
    }
    let targets: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    let targets = Tensor::from_vec(targets, n, logits.device())?;
    Ok(candle_nn::loss::cross_entropy(logits, &targets)?)
}

/// `BCE(real, 1) + BCE(fake, 0) + CCE(real classes, labels)`, plus the
/// class term on fakes when `fake_labels` is given.
pub fn discriminator_loss(
    real: &DiscOutput,
    fake: &DiscOutput,
    labels: &[usize],
    fake_labels: Option<&[usize]>,
) -> Result<DiscriminatorLoss> {
    let bce = (softplus(&real.realness.neg()?)?.mean_all()? + softplus(&fake.realness)?.mean_all()?)?;
    let mut cce = cross_entropy(&real.class_logits, labels)?;
    if let Some(fl) = fake_labels {
        cce = (cce + cross_entropy(&fake.class_logits, fl)?)?;
    }
    Ok(DiscriminatorLoss {
        bce: scalar(&bce)?,
        cce: scalar(&cce)?,
        total: (bce + cce)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub epoch: u64,
    pub step: u64,
    pub lr: f64,
    pub d_bce: f64,
    pub d_cce: f64,
    pub g_rec: f64,
    pub g_adv: f64,
}

impl StepLosses {
    const WIDTH: usize = 7;

    fn to_row(self) -> [f64; Self::WIDTH] {
        [
            self.epoch as f64,
            self.step as f64,
            self.lr,
            self.d_bce,
            self.d_cce,
            self.g_rec,
            self.g_adv,
        ]
    }

    fn from_row(r: &[f64]) -> Self {
        Self {
            epoch: r[0] as u64,
            step: r[1] as u64,
            lr: r[2],
            d_bce: r[3],
            d_cce: r[4],
            g_rec: r[5],
            g_adv: r[6],
        }
    }
}

pub const LOSS_CSV_HEADER: &str = "epoch,step,lr,L_D_bce,L_D_cce,L_G_rec,L_G_adv";

pub fn losses_csv(history: &[StepLosses]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for h in history {
        s.push_str(&format!(
            "{},{},{:e},{},{},{},{}\n",
            h.epoch, h.step, h.lr, h.d_bce, h.d_cce, h.g_rec, h.g_adv
        ));
    }
    s
}

/// Everything needed to continue training bit-identically.
pub struct TrainingState {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g_opt: Adam,
    pub d_opt: Adam,
    pub backbone: BackboneConfig,
    pub trainer: TrainerConfig,
    /// Current epoch (completed epochs).
    pub epoch: u64,
    /// Pairs of the current epoch already consumed.
    pub position: u64,
    /// Completed steps.
    pub step: u64,
    pub history: Vec<StepLosses>,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    kind: String,
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    backbone: BackboneConfig,
    trainer: TrainerConfig,
    epoch: u64,
    position: u64,
    step: u64,
    g_adam_steps: u64,
    d_adam_steps: u64,
}

/// Generator-side view of a training checkpoint.
#[derive(Deserialize)]
struct GeneratorMeta {
    generator: GeneratorConfig,
    backbone: BackboneConfig,
}

const G: &str = "generator/";
const D: &str = "discriminator/";
const G_OPT: &str = "generator_adam/";
const D_OPT: &str = "discriminator_adam/";
const HISTORY: &str = "loss_history";

impl TrainingState {
    pub fn new(
        generator: GeneratorConfig,
        discriminator: DiscriminatorConfig,
        backbone: BackboneConfig,
        trainer: TrainerConfig,
    ) -> Result<Self> {
        trainer.validate()?;
        if generator.descriptor_dim != backbone.dim {
            return Err(Error::config(
                "generator.descriptor_dim",
                format!(
                    "{} does not match backbone.dim = {}",
                    generator.descriptor_dim, backbone.dim
                ),
            ));
        }
        if generator.output_size != discriminator.input_size {
            return Err(Error::config(
                "discriminator.input_size",
                format!(
                    "{} does not match generator.output_size = {}",
                    discriminator.input_size, generator.output_size
                ),
            ));
        }
        let generator = Generator::new(generator, DType::F32)?;
        let discriminator = Discriminator::new(discriminator, DType::F32)?;
        let g_opt = Adam::new(generator.params(), trainer.beta1, trainer.beta2, trainer.adam_eps)?;
        let d_opt = Adam::new(discriminator.params(), trainer.beta1, trainer.beta2, trainer.adam_eps)?;
        Ok(Self {
            generator,
            discriminator,
            g_opt,
            d_opt,
            backbone,
            trainer,
            epoch: 0,
            position: 0,
            step: 0,
            history: Vec::new(),
        })
    }

    fn tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut t = BTreeMap::new();
        for (k, v) in self.generator.params().snapshot()? {
            t.insert(format!("{G}{k}"), v);
        }
        for (k, v) in self.discriminator.params().snapshot()? {
            t.insert(format!("{D}{k}"), v);
        }
        t.extend(self.g_opt.state_tensors(G_OPT));
        t.extend(self.d_opt.state_tensors(D_OPT));
        let rows: Vec<f64> = self.history.iter().flat_map(|h| h.to_row()).collect();
        t.insert(
            HISTORY.into(),
            Tensor::from_vec(rows, (self.history.len(), StepLosses::WIDTH), &Device::Cpu)?,
        );
        Ok(t)
    }

    fn meta(&self) -> StateMeta {
        StateMeta {
            kind: "training_state".into(),
            generator: self.generator.config().clone(),
            discriminator: self.discriminator.config().clone(),
            backbone: self.backbone.clone(),
            trainer: self.trainer.clone(),
            epoch: self.epoch,
            position: self.position,
            step: self.step,
            g_adam_steps: self.g_opt.steps(),
            d_adam_steps: self.d_opt.steps(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        checkpoint::encode(&self.tensors()?, &self.meta())
    }

    pub fn save(&self, path: &Path) -> Result<Vec<u8>> {
        checkpoint::save(path, &self.tensors()?, &self.meta())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, tensors): (StateMeta, _) = checkpoint::decode(bytes)?;
        Self::restore(meta, tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, tensors): (StateMeta, _) = checkpoint::load(path)?;
        Self::restore(meta, tensors)
    }

    fn restore(meta: StateMeta, tensors: HashMap<String, Tensor>) -> Result<Self> {
        let mut s = Self::new(meta.generator, meta.discriminator, meta.backbone, meta.trainer)?;
        s.generator.params().assign(&tensors, G)?;
        s.discriminator.params().assign(&tensors, D)?;
        s.g_opt.load_state(&tensors, G_OPT, meta.g_adam_steps)?;
        s.d_opt.load_state(&tensors, D_OPT, meta.d_adam_steps)?;
        let hist = tensors
            .get(HISTORY)
            .ok_or_else(|| Error::Checkpoint("missing loss history".into()))?;
        s.history = hist
            .to_dtype(DType::F64)?
            .to_vec2::<f64>()?
            .iter()
            .map(|r| StepLosses::from_row(r))
            .collect();
        s.epoch = meta.epoch;
        s.position = meta.position;
        s.step = meta.step;
        Ok(s)
    }

    /// Hash over every parameter, optimizer moment, counter, and loss
    /// record.
    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, t) in self.tensors()? {
            h.update(name.as_bytes());
            h.update(tensor_le_bytes(&t)?);
        }
        for c in [self.epoch, self.position, self.step, self.g_opt.steps(), self.d_opt.steps()] {
            h.update(c.to_le_bytes());
        }
        Ok(hex(&h.finalize()))
    }
}

/// Rebuild the generator and its descriptor configuration from a training
/// checkpoint.
pub fn load_generator(path: &Path) -> Result<(Generator, BackboneConfig, String)> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })?;
    let (meta, tensors): (GeneratorMeta, _) = checkpoint::decode(&bytes)?;
    let g = Generator::new(meta.generator, DType::F32)?;
    g.params().assign(&tensors, G)?;
    Ok((g, meta.backbone, checkpoint::archive_id(&bytes)))
}

/// Tensors for one batch: descriptors of the sources, target poses, target
/// images, identity labels.
pub struct Batch {
    pub descriptors: Tensor,
    pub poses: Tensor,
    pub targets: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(samples: &[Sample], generator: &Generator, backbone: &dyn Backbone) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let sources: Vec<_> = samples.iter().map(|s| s.source.clone()).collect();
        let targets: Vec<_> = samples.iter().map(|s| s.target.clone()).collect();
        let poses: Vec<_> = samples.iter().map(|s| s.target_pose.clone()).collect();
        let descriptors = crate::backbone::extract_batch(&sources, backbone)?;
        Ok(Self {
            descriptors,
            poses: generator.pose_tensor(&poses)?,
            targets: images_to_tensor(&targets, generator.dtype(), &Device::Cpu)?,
            labels: samples.iter().map(|s| s.identity).collect(),
        })
    }
}

fn check_finite(losses: &StepLosses) -> Result<()> {
    let vals = [losses.d_bce, losses.d_cce, losses.g_rec, losses.g_adv];
    if vals.iter().all(|v| v.is_finite()) {
        return Ok(());
    }
    Err(Error::NonFiniteLoss {
        epoch: losses.epoch,
        step: losses.step,
        components: format!(
            "L_D_bce={} L_D_cce={} L_G_rec={} L_G_adv={}",
            losses.d_bce, losses.d_cce, losses.g_rec, losses.g_adv
        ),
    })
}

/// One discriminator update on the detached fakes, then one generator
/// update against the updated discriminator.
pub fn train_step(state: &mut TrainingState, batch: &Batch) -> Result<StepLosses> {
    let cfg = state.trainer.clone();
    let lr = lr_schedule(state.epoch, &cfg);
    let fake = state.generator.forward(&batch.descriptors, &batch.poses)?;

    let classify_fake = state.discriminator.config().classify_fake;
    let real_out = state.discriminator.discriminate(&batch.targets)?;
    let fake_out = state.discriminator.discriminate(&fake.detach())?;
    let d_loss = discriminator_loss(
        &real_out,
        &fake_out,
        &batch.labels,
        classify_fake.then_some(batch.labels.as_slice()),
    )?;
    let mut losses = StepLosses {
        epoch: state.epoch,
        step: state.step,
        lr,
        d_bce: d_loss.bce,
        d_cce: d_loss.cce,
        g_rec: f64::NAN,
        g_adv: f64::NAN,
    };
    if !(d_loss.bce.is_finite() && d_loss.cce.is_finite()) {
        check_finite(&losses)?;
    }
    let grads = d_loss.total.backward()?;
    state.d_opt.step(state.discriminator.params(), &grads, lr)?;

    let fake_view = state.discriminator.discriminate(&fake)?;
    let g_loss = generator_loss(&fake, &batch.targets, Some(&fake_view), &cfg)?;
    losses.g_rec = g_loss.rec;
    losses.g_adv = g_loss.adv;
    check_finite(&losses)?;
    let grads = g_loss.total.backward()?;
    state.g_opt.step(state.generator.params(), &grads, lr)?;

    state.step += 1;
    state.history.push(losses);
    Ok(losses)
}

/// Pair visiting order for `epoch`.
pub fn epoch_order(n_pairs: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_pairs).collect();
    order.shuffle(&mut rng::stream(seed, rng::tag::EPOCH_ORDER, epoch));
    order
}

pub struct Trainer<'a> {
    pub dataset: &'a Dataset,
    pub pairs: &'a [TrainingPair],
    pub backbone: &'a dyn Backbone,
    pub augmenter: &'a Augmenter,
    /// Checkpoints and `losses.csv` are written here when set.
    pub out_dir: Option<PathBuf>,
}

impl Trainer<'_> {
    /// Samples at `positions` of `epoch`'s order, loaded in parallel in a
    /// fixed order.
    pub fn samples(&self, state: &TrainingState, order: &[usize], range: std::ops::Range<usize>) -> Result<Vec<Sample>> {
        let n = self.pairs.len() as u64;
        let epoch = state.epoch;
        let augment = state.trainer.augment;
        range
            .into_par_iter()
            .map(|pos| {
                let pair = self.pairs[order[pos]];
                self.dataset
                    .load_sample(pair, self.augmenter, augment, epoch * n + pos as u64)
            })
            .collect()
    }

    /// Run epochs until `trainer.epochs` or `trainer.max_steps`, writing a
    /// checkpoint at the end of every epoch (and on an early stop).
    pub fn fit(&self, mut state: TrainingState) -> Result<TrainingState> {
        if self.pairs.is_empty() {
            return Err(Error::InvalidArgument("no training pairs".into()));
        }
        let cfg = state.trainer.clone();
        let n = self.pairs.len();
        while state.epoch < cfg.epochs {
            let order = epoch_order(n, cfg.seed, state.epoch);
            while (state.position as usize) < n {
                if cfg.max_steps.is_some_and(|m| state.step >= m) {
                    self.checkpoint(&state, "latest")?;
                    return Ok(state);
                }
                let start = state.position as usize;
                let end = (start + cfg.batch_size).min(n);
                let samples = self.samples(&state, &order, start..end)?;
                let batch = Batch::new(&samples, &state.generator, self.backbone)?;
                let l = train_step(&mut state, &batch)?;
                state.position = end as u64;
                log::debug!(
                    "epoch {} step {} L_D={:.4}+{:.4} L_G={:.4}+{:.4}",
                    l.epoch,
                    l.step,
                    l.d_bce,
                    l.d_cce,
                    l.g_rec,
                    l.g_adv
                );
            }
            state.epoch += 1;
            state.position = 0;
            log::info!("finished epoch {} at step {}", state.epoch, state.step);
            self.checkpoint(&state, &format!("epoch_{:04}", state.epoch))?;
        }
        self.checkpoint(&state, "latest")?;
        Ok(state)
    }

    fn checkpoint(&self, state: &TrainingState, name: &str) -> Result<()> {
        let Some(dir) = &self.out_dir else {
            return Ok(());
        };
        state.save(&dir.join("checkpoints").join(format!("{name}.safetensors")))?;
        let mut f = std::fs::File::create(dir.join("losses.csv"))?;
        f.write_all(losses_csv(&state.history).as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentConfig;
    use crate::backbone::TestBackbone;
    use crate::dataset::{build_pairs, make_synthetic_dataset};

    fn t(v: &[f32], shape: &[usize]) -> Tensor {
        Tensor::from_slice(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn schedule_values() {
        let cfg = TrainerConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 2e-4);
        assert_eq!(lr_schedule(19, &cfg), 2e-4);
        assert_eq!(lr_schedule(20, &cfg), 2e-5);
        assert_eq!(lr_schedule(45, &cfg), 2e-6);
    }

    #[test]
    fn constant_offset_reconstruction() {
        let target = Tensor::zeros((2, 3, 4, 4), DType::F32, &Device::Cpu).unwrap();
        let gen = (&target + 0.1).unwrap();
        let cfg = TrainerConfig {
            lambda_rec: 1.0,
            ..Default::default()
        };
        let l = generator_loss(&gen, &target, None, &cfg).unwrap();
        assert!((l.rec - 0.01).abs() < 1e-7, "{}", l.rec);
        let cfg2 = TrainerConfig {
            lambda_rec: 2.0,
            ..Default::default()
        };
        let l2 = generator_loss(&gen, &target, None, &cfg2).unwrap();
        assert_eq!(l2.rec, 2.0 * l.rec);
    }

    #[test]
    fn fooled_discriminator_and_exact_reconstruction_give_near_zero() {
        let target = Tensor::ones((1, 3, 2, 2), DType::F32, &Device::Cpu).unwrap();
        let out = DiscOutput {
            realness: t(&[40.0], &[1]),
            class_logits: t(&[0.0, 0.0], &[1, 2]),
        };
        let l = generator_loss(&target, &target, Some(&out), &TrainerConfig::default()).unwrap();
        let total = scalar(&l.total).unwrap();
        assert!((0.0..1e-12).contains(&total));
    }

    #[test]
    fn discriminator_loss_oracles() {
        let half = DiscOutput {
            realness: t(&[0.0, 0.0], &[2]),
            class_logits: t(&[0.0; 10], &[2, 5]),
        };
        let l = discriminator_loss(&half, &half, &[0, 4], None).unwrap();
        assert!((l.bce - 2.0 * std::f64::consts::LN_2).abs() < 1e-6);
        assert!((l.cce - 5f64.ln()).abs() < 1e-6);

        let real = DiscOutput {
            realness: t(&[50.0], &[1]),
            class_logits: t(&[60.0, 0.0, 0.0], &[1, 3]),
        };
        let fake = DiscOutput {
            realness: t(&[-50.0], &[1]),
            class_logits: t(&[0.0, 0.0, 0.0], &[1, 3]),
        };
        let l = discriminator_loss(&real, &fake, &[0], None).unwrap();
        assert!(scalar(&l.total).unwrap() < 1e-12);

        assert!(matches!(
            discriminator_loss(&real, &fake, &[3], None),
            Err(Error::LabelOutOfRange { label: 3, num_classes: 3 })
        ));
    }

    #[test]
    fn saturating_form_is_log_one_minus_sigma() {
        let out = DiscOutput {
            realness: t(&[0.0], &[1]),
            class_logits: t(&[0.0, 0.0], &[1, 2]),
        };
        let x = Tensor::zeros((1, 3, 2, 2), DType::F32, &Device::Cpu).unwrap();
        let cfg = TrainerConfig {
            adv_form: AdvForm::Saturating,
            ..Default::default()
        };
        let l = generator_loss(&x, &x, Some(&out), &cfg).unwrap();
        assert!((l.adv - 0.5f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn csv_header_and_rows() {
        let h = StepLosses {
            epoch: 1,
            step: 7,
            lr: 2e-5,
            d_bce: 1.0,
            d_cce: 2.0,
            g_rec: 3.0,
            g_adv: 4.0,
        };
        let csv = losses_csv(&[h]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), LOSS_CSV_HEADER);
        assert_eq!(lines.next().unwrap(), "1,7,2e-5,1,2,3,4");
    }

    fn tiny_setup() -> (Dataset, Vec<TrainingPair>, TestBackbone, Augmenter, TrainingState) {
        let synth = make_synthetic_dataset(2, 3, 5, (32, 32)).unwrap();
        let ds = synth.into_dataset().unwrap();
        let pairs = build_pairs(&ds.index, 0.0).unwrap();
        let backbone = TestBackbone::new(8, 0, 32).unwrap();
        let aug = Augmenter::new(AugmentConfig {
            distortion_magnitude: 1.0,
            ..AugmentConfig::identity(32)
        })
        .unwrap();
        let trainer = TrainerConfig {
            batch_size: 4,
            epochs: 2,
            ..Default::default()
        };
        let state = TrainingState::new(
            GeneratorConfig::miniature(8),
            DiscriminatorConfig::miniature(2),
            BackboneConfig {
                dim: 8,
                ..Default::default()
            },
            trainer,
        )
        .unwrap();
        (ds, pairs, backbone, aug, state)
    }

    #[test]
    fn step_updates_generator_not_backbone_and_is_deterministic() {
        let (ds, pairs, backbone, aug, mut a) = tiny_setup();
        let (_, _, _, _, mut b) = tiny_setup();
        let tr = Trainer {
            dataset: &ds,
            pairs: &pairs,
            backbone: &backbone,
            augmenter: &aug,
            out_dir: None,
        };
        let order = epoch_order(pairs.len(), 0, 0);
        let samples = tr.samples(&a, &order, 0..4).unwrap();
        let g0 = a.generator.params().checksum().unwrap();
        let bb0 = backbone.checksum().unwrap();
        let batch = Batch::new(&samples, &a.generator, &backbone).unwrap();
        train_step(&mut a, &batch).unwrap();
        train_step(&mut b, &batch).unwrap();
        assert_ne!(a.generator.params().checksum().unwrap(), g0);
        assert_eq!(backbone.checksum().unwrap(), bb0);
        assert_eq!(a.checksum().unwrap(), b.checksum().unwrap());
        assert_eq!(a.history.len(), 1);
        train_step(&mut a, &batch).unwrap();
        assert_eq!(a.history.len(), 2);
    }

    #[test]
    fn discriminator_alone_drives_its_loss_down_against_a_frozen_generator() {
        let (ds, pairs, backbone, aug, mut state) = tiny_setup();
        let tr = Trainer {
            dataset: &ds,
            pairs: &pairs,
            backbone: &backbone,
            augmenter: &aug,
            out_dir: None,
        };
        let order = epoch_order(pairs.len(), 0, 0);
        let samples = tr.samples(&state, &order, 0..4).unwrap();
        let batch = Batch::new(&samples, &state.generator, &backbone).unwrap();
        let g0 = state.generator.params().checksum().unwrap();
        let fake = state.generator.forward(&batch.descriptors, &batch.poses).unwrap().detach();
        let mut losses = Vec::new();
        for _ in 0..50 {
            let real = state.discriminator.discriminate(&batch.targets).unwrap();
            let fake_out = state.discriminator.discriminate(&fake).unwrap();
            let l = discriminator_loss(&real, &fake_out, &batch.labels, None).unwrap();
            losses.push(scalar(&l.total).unwrap());
            let grads = l.total.backward().unwrap();
            state.d_opt.step(state.discriminator.params(), &grads, 2e-4).unwrap();
        }
        assert!(losses[49] < losses[0], "{losses:?}");
        assert_eq!(state.generator.params().checksum().unwrap(), g0);
    }

    #[test]
    fn round_trip_bytes_and_resume() {
        let (ds, pairs, backbone, aug, state) = tiny_setup();
        let tr = Trainer {
            dataset: &ds,
            pairs: &pairs,
            backbone: &backbone,
            augmenter: &aug,
            out_dir: None,
        };
        let mut short = state;
        short.trainer.max_steps = Some(5);
        let short = tr.fit(short).unwrap();
        assert_eq!(short.step, 5);
        let bytes = short.to_bytes().unwrap();
        let mut resumed = TrainingState::from_bytes(&bytes).unwrap();
        assert_eq!(resumed.to_bytes().unwrap(), bytes);
        resumed.trainer.max_steps = None;
        let resumed = tr.fit(resumed).unwrap();

        let (_, _, _, _, full) = tiny_setup();
        let full = tr.fit(full).unwrap();
        assert_eq!(full.step, resumed.step);
        assert_eq!(full.checksum().unwrap(), resumed.checksum().unwrap());
        // the lr column follows the schedule
        for h in &full.history {
            assert_eq!(h.lr, lr_schedule(h.epoch, &full.trainer));
        }
    }
}
