//! SSIM, Inception Score, the classifiers that feed IS, and the evaluation
//! driver that produces a [`MetricsReport`].

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{erase_rect, EraseFill, Rect};
use crate::backbone::{extract_batch, Backbone, ResNet50};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::image::{images_to_tensor, Image};
use crate::nn::{Conv2d, Linear, ParamStore};
use crate::optim::Adam;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the image encoding.
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64], c1: f64, c2: f64) -> f64 {
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(a, h, w, k);
    let mu_b = filter_valid(b, h, w, k);
    let aa = filter_valid(&prod(a, a), h, w, k);
    let bb = filter_valid(&prod(b, b), h, w, k);
    let ab = filter_valid(&prod(a, b), h, w, k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / mu_a.len() as f64
}

/// Mean SSIM over valid sliding windows, per channel, averaged over
/// channels.
pub fn ssim(x: &Image, y: &Image, cfg: &SsimConfig) -> Result<f64> {
    if x.dims() != y.dims() {
        return Err(Error::dims(format!("SSIM of {:?} and {:?} images", x.dims(), y.dims())));
    }
    let (h, w) = x.dims();
    if h < cfg.window || w < cfg.window {
        return Err(Error::dims(format!("{h}x{w} image is smaller than the {0}x{0} window", cfg.window)));
    }
    let k = gaussian_kernel(cfg.window, cfg.sigma);
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let mut sum = 0.0;
    for c in 0..3 {
        let a: Vec<f64> = x.channel(c).into_iter().map(f64::from).collect();
        let b: Vec<f64> = y.channel(c).into_iter().map(f64::from).collect();
        sum += ssim_plane(&a, &b, h, w, &k, c1, c2);
    }
    Ok(sum / 3.0)
}

/// `(mean, std)` over `splits` contiguous splits of
/// `exp(mean_i KL(p(y|x_i) || p(y)))`. The std is the population std.
pub fn inception_score(probs: &[Vec<f64>], splits: usize) -> Result<(f64, f64)> {
    if splits == 0 || probs.len() < splits {
        return Err(Error::InvalidArgument(format!(
            "{} rows cannot form {splits} splits",
            probs.len()
        )));
    }
    let c = probs[0].len();
    for (row, p) in probs.iter().enumerate() {
        let sum: f64 = p.iter().sum();
        if p.len() != c || (sum - 1.0).abs() > 1e-6 || p.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::RowNotNormalized { row, sum });
        }
    }
    let n = probs.len();
    let mut scores = Vec::with_capacity(splits);
    let mut start = 0;
    for s in 0..splits {
        let len = n / splits + usize::from(s < n % splits);
        let part = &probs[start..start + len];
        start += len;
        let mut marginal = vec![0.0; c];
        for p in part {
            for (m, v) in marginal.iter_mut().zip(p) {
                *m += v;
            }
        }
        marginal.iter_mut().for_each(|m| *m /= len as f64);
        let mean_kl: f64 = part
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&marginal)
                    .filter(|(v, _)| **v > 0.0)
                    .map(|(v, m)| v * (v.ln() - m.ln()))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / len as f64;
        scores.push(mean_kl.exp());
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

pub trait Classifier: Send + Sync {
    fn num_classes(&self) -> usize;
    fn input_size(&self) -> usize;
    /// Human-readable label stored in reports.
    fn name(&self) -> String;
    /// `N × 3 × S × S` in `[-1, 1]` to `N × C` logits.
    fn logits(&self, x: &Tensor) -> Result<Tensor>;
}

/// Softmax rows, computed in f64.
pub fn classify_for_is(images: &[Image], classifier: &dyn Classifier) -> Result<Vec<Vec<f64>>> {
    let s = classifier.input_size();
    let resized: Vec<Image> = images.iter().map(|i| i.resize(s, s)).collect();
    let mut rows = Vec::with_capacity(images.len());
    for chunk in resized.chunks(32) {
        let x = images_to_tensor(chunk, DType::F32, &Device::Cpu)?;
        let logits = classifier.logits(&x)?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        for l in logits {
            let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            rows.push(e.into_iter().map(|v| v / z).collect());
        }
    }
    Ok(rows)
}

impl Classifier for ResNet50 {
    fn num_classes(&self) -> usize {
        1000
    }

    fn input_size(&self) -> usize {
        Backbone::input_size(self)
    }

    fn name(&self) -> String {
        "reference-resnet50".into()
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        ResNet50::logits(self, x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTraining {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Training stops once train accuracy reaches this.
    pub target_accuracy: f64,
    pub seed: u64,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            batch_size: 16,
            lr: 3e-3,
            target_accuracy: 0.95,
            seed: 0,
        }
    }
}

/// Small convnet identity classifier trained on real dataset images.
pub struct IdentityClassifier {
    store: ParamStore,
    convs: Vec<Conv2d>,
    head: Linear,
    input_size: usize,
    num_classes: usize,
}

impl IdentityClassifier {
    pub fn new(input_size: usize, num_classes: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(DType::F32);
        let mut r = rng::stream(seed, rng::tag::CLASSIFIER_INIT, 0);
        let convs = vec![
            Conv2d::init(&mut store, &mut r, "conv0", 3, 16, 3, 2, 1, true)?,
            Conv2d::init(&mut store, &mut r, "conv1", 16, 32, 3, 2, 1, true)?,
        ];
        let head = Linear::init(&mut store, &mut r, "head", 32, num_classes, 1.0)?;
        Ok(Self {
            store,
            convs,
            head,
            input_size,
            num_classes,
        })
    }

    /// Train with Adam until train accuracy reaches the target or the epoch
    /// budget runs out. Returns the final train accuracy.
    pub fn fit(&self, images: &[Image], labels: &[usize], cfg: &ClassifierTraining) -> Result<f64> {
        if images.len() != labels.len() || images.is_empty() {
            return Err(Error::InvalidArgument("classifier needs one label per image".into()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: self.num_classes,
            });
        }
        let s = self.input_size;
        let resized: Vec<Image> = images.iter().map(|i| i.resize(s, s)).collect();
        let mut opt = Adam::new(&self.store, 0.9, 0.999, 1e-8)?;
        let mut acc = self.accuracy(&resized, labels)?;
        for epoch in 0..cfg.max_epochs {
            if acc >= cfg.target_accuracy {
                break;
            }
            let mut order: Vec<usize> = (0..images.len()).collect();
            order.shuffle(&mut rng::stream(cfg.seed, rng::tag::CLASSIFIER_ORDER, epoch as u64));
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let batch: Vec<Image> = chunk.iter().map(|&i| resized[i].clone()).collect();
                let x = images_to_tensor(&batch, DType::F32, &Device::Cpu)?;
                let y: Vec<u32> = chunk.iter().map(|&i| labels[i] as u32).collect();
                let y = Tensor::from_vec(y, chunk.len(), &Device::Cpu)?;
                let loss = candle_nn::loss::cross_entropy(&self.logits(&x)?, &y)?;
                opt.step(&self.store, &loss.backward()?, cfg.lr)?;
            }
            acc = self.accuracy(&resized, labels)?;
        }
        Ok(acc)
    }

    pub fn accuracy(&self, images: &[Image], labels: &[usize]) -> Result<f64> {
        let probs = classify_for_is(images, self)?;
        let correct = probs
            .iter()
            .zip(labels)
            .filter(|(p, &l)| {
                let best = p
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i);
                best == Some(l)
            })
            .count();
        Ok(correct as f64 / labels.len() as f64)
    }
}

impl Classifier for IdentityClassifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_size(&self) -> usize {
        self.input_size
    }

    fn name(&self) -> String {
        format!("synthetic-identity-{}", self.num_classes)
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for c in &self.convs {
            h = c.forward(&h)?.relu()?;
        }
        self.head.forward(&h.mean((2, 3))?)
    }
}

/// Produces one image per sample, in order.
pub trait Synthesizer: Sync {
    fn synthesize(&self, samples: &[Sample]) -> Result<Vec<Image>>;
    fn id(&self) -> String;
}

pub struct GeneratorSynthesizer<'a> {
    pub generator: &'a Generator,
    pub backbone: &'a dyn Backbone,
    pub checkpoint_id: String,
}

impl Synthesizer for GeneratorSynthesizer<'_> {
    fn synthesize(&self, samples: &[Sample]) -> Result<Vec<Image>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(16) {
            let sources: Vec<Image> = chunk.iter().map(|s| s.source.clone()).collect();
            let poses: Vec<_> = chunk.iter().map(|s| s.target_pose.clone()).collect();
            let d = extract_batch(&sources, self.backbone)?;
            let y = self.generator.forward(&d, &self.generator.pose_tensor(&poses)?)?;
            out.extend(crate::image::tensor_to_images(&y)?);
        }
        Ok(out)
    }

    fn id(&self) -> String {
        self.checkpoint_id.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub ssim: SsimConfig,
    pub is_splits: usize,
    pub classifier: ClassifierKind,
    /// Weights with a classification head, for the reference classifier.
    pub classifier_weights: Option<std::path::PathBuf>,
    pub classifier_training: ClassifierTraining,
    /// Corrupt evaluation sources with one erased rectangle each.
    pub occlude_inputs: bool,
    /// Area fraction of the occluding rectangle.
    pub occlusion_area: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Identity classifier trained on the evaluation set's real images.
    Identity,
    Reference,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ssim: SsimConfig::default(),
            is_splits: 10,
            classifier: ClassifierKind::Identity,
            classifier_weights: None,
            classifier_training: ClassifierTraining::default(),
            occlude_inputs: false,
            occlusion_area: 0.15,
            seed: 0,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.is_splits == 0 {
            return Err(Error::config("metrics.is_splits", "must be at least 1"));
        }
        if self.ssim.window == 0 || !(self.ssim.k1 > 0.0 && self.ssim.k2 > 0.0) {
            return Err(Error::config("metrics.ssim", "window must be positive and K1, K2 > 0"));
        }
        if !(0.0..1.0).contains(&self.occlusion_area) {
            return Err(Error::config("metrics.occlusion_area", "must lie in [0, 1)"));
        }
        if self.classifier == ClassifierKind::Reference && self.classifier_weights.is_none() {
            return Err(Error::config(
                "metrics.classifier_weights",
                "the reference classifier needs a weights file",
            ));
        }
        Ok(())
    }
}

/// Overwrite a square-ish centered-random rectangle of `area` fraction in
/// each source with noise, deterministically per sample index.
pub fn occlude_sources(samples: &mut [Sample], area: f64, seed: u64) {
    samples.par_iter_mut().enumerate().for_each(|(i, s)| {
        let mut r = rng::stream(seed, rng::tag::EVAL_OCCLUSION, i as u64);
        let (h, w) = s.source.dims();
        let side_h = ((h as f64 * area.sqrt()).round() as usize).clamp(1, h);
        let side_w = ((w as f64 * area.sqrt()).round() as usize).clamp(1, w);
        let rect = Rect {
            y: r.gen_range(0..=h - side_h),
            x: r.gen_range(0..=w - side_w),
            height: side_h,
            width: side_w,
        };
        s.source = erase_rect(&s.source, rect, EraseFill::PerPixel, &mut r);
    });
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub is_mean: f64,
    pub is_std: f64,
    pub is_splits: usize,
    pub n_images: usize,
    pub classifier: String,
    pub checkpoint_id: String,
    pub config: serde_json::Value,
}

impl MetricsReport {
    /// Text table with the SSIM and IS columns.
    pub fn table(&self, label: &str) -> String {
        let w = label.len().max(5);
        let rule = format!("{}+-------+----------------", "-".repeat(w + 2));
        format!(
            "{:<w$}  | SSIM  | IS\n{rule}\n{:<w$}  | {:.3} | {:.3} ± {:.3}\n\n{} images, IS classifier {}, {} splits, checkpoint {}\n",
            "Model",
            label,
            self.ssim_mean,
            self.is_mean,
            self.is_std,
            self.n_images,
            self.classifier,
            self.is_splits,
            self.checkpoint_id,
        )
    }
}

/// Synthesize every sample's target, score SSIM against the ground truth
/// and IS over the generated set.
pub fn evaluate(
    samples: &[Sample],
    synth: &dyn Synthesizer,
    classifier: &dyn Classifier,
    cfg: &MetricsConfig,
    config_echo: serde_json::Value,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no evaluation samples".into()));
    }
    let generated = synth.synthesize(samples)?;
    if generated.len() != samples.len() {
        return Err(Error::dims(format!(
            "{} images synthesized for {} samples",
            generated.len(),
            samples.len()
        )));
    }
    let scores: Vec<f64> = generated
        .par_iter()
        .zip(samples.par_iter())
        .map(|(g, s)| ssim(g, &s.target, &cfg.ssim))
        .collect::<Result<_>>()?;
    let n = scores.len() as f64;
    let ssim_mean = scores.iter().sum::<f64>() / n;
    let ssim_std = (scores.iter().map(|s| (s - ssim_mean).powi(2)).sum::<f64>() / n).sqrt();
    let probs = classify_for_is(&generated, classifier)?;
    let splits = cfg.is_splits.min(generated.len());
    let (is_mean, is_std) = inception_score(&probs, splits)?;
    Ok(MetricsReport {
        ssim_mean,
        ssim_std,
        is_mean,
        is_std,
        is_splits: splits,
        n_images: generated.len(),
        classifier: classifier.name(),
        checkpoint_id: synth.id(),
        config: config_echo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_synthetic_dataset;
    use crate::pose::PoseVector;
    use proptest::prelude::*;
    use rand::Rng;

    fn noise_image(h: usize, w: usize, seed: u64) -> Image {
        let mut r = rng::stream(seed, 1000, 0);
        Image::from_fn(h, w, |_, _| [r.gen(), r.gen(), r.gen()])
    }

    #[test]
    fn self_similarity_is_one() {
        for s in 0..5 {
            let x = noise_image(24, 20, s);
            let v = ssim(&x, &x, &SsimConfig::default()).unwrap();
            assert!((v - 1.0).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn constant_images_closed_form() {
        let a = Image::filled(16, 16, [0.5; 3]);
        let b = Image::filled(16, 16, [0.25; 3]);
        let v = ssim(&a, &b, &SsimConfig::default()).unwrap();
        let expected = (2.0 * 0.5 * 0.25 + 1e-4) / (0.25 + 0.0625 + 1e-4);
        assert!((v - expected).abs() < 1e-4, "{v} vs {expected}");
    }

    #[test]
    fn ssim_decreases_with_noise() {
        let x = noise_image(32, 32, 1);
        let mut means = Vec::new();
        for sigma in [0.02f32, 0.1, 0.3] {
            let mut total = 0.0;
            for seed in 0..10 {
                let n = noise_image(32, 32, 100 + seed);
                let mut y = x.clone();
                for (v, e) in y.data_mut().iter_mut().zip(n.data()) {
                    *v += sigma * (e - 0.5);
                }
                total += ssim(&x, &y, &SsimConfig::default()).unwrap();
            }
            means.push(total / 10.0);
        }
        assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    }

    #[test]
    fn ssim_rejects_mismatch() {
        let a = Image::zeros(16, 16);
        let b = Image::zeros(16, 17);
        assert!(matches!(ssim(&a, &b, &SsimConfig::default()), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn is_oracles() {
        let rows = vec![vec![0.2, 0.3, 0.5]; 20];
        assert_eq!(inception_score(&rows, 10).unwrap().0, 1.0);
        let onehot: Vec<Vec<f64>> = (0..70)
            .map(|i| {
                let mut r = vec![0.0; 7];
                r[i % 7] = 1.0;
                r
            })
            .collect();
        let (m, _) = inception_score(&onehot, 1).unwrap();
        assert!((m - 7.0).abs() < 1e-9);
    }

    #[test]
    fn is_rejects_unnormalized() {
        let rows = vec![vec![0.2, 0.3], vec![0.5, 0.5]];
        assert!(matches!(
            inception_score(&rows, 1),
            Err(Error::RowNotNormalized { row: 0, .. })
        ));
    }

    proptest! {
        #[test]
        fn ssim_symmetric(seed in 0u64..1000) {
            let a = noise_image(16, 16, seed);
            let b = noise_image(16, 16, seed + 1);
            let cfg = SsimConfig::default();
            prop_assert!((ssim(&a, &b, &cfg).unwrap() - ssim(&b, &a, &cfg).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn is_bounded(raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), 4..30), splits in 1usize..4) {
            let rows: Vec<Vec<f64>> = raw
                .into_iter()
                .map(|r| {
                    let r: Vec<f64> = r.into_iter().map(|v| v + 1e-3).collect();
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(|v| v / s).collect()
                })
                .collect();
            let (m, _) = inception_score(&rows, splits).unwrap();
            prop_assert!(m >= 1.0 - 1e-6 && m <= 5.0 + 1e-6);
        }
    }

    struct Copier;

    impl Synthesizer for Copier {
        fn synthesize(&self, samples: &[Sample]) -> Result<Vec<Image>> {
            Ok(samples.iter().map(|s| s.target.clone()).collect())
        }

        fn id(&self) -> String {
            "copy-target".into()
        }
    }

    struct Constant;

    impl Synthesizer for Constant {
        fn synthesize(&self, samples: &[Sample]) -> Result<Vec<Image>> {
            Ok(samples.iter().map(|s| Image::filled(s.target.height(), s.target.width(), [0.3, 0.6, 0.9])).collect())
        }

        fn id(&self) -> String {
            "constant".into()
        }
    }

    fn samples() -> Vec<Sample> {
        let synth = make_synthetic_dataset(3, 4, 2, (32, 32)).unwrap();
        synth
            .images
            .iter()
            .zip(&synth.index.entries)
            .map(|(img, e)| Sample {
                source: img.clone(),
                target_pose: PoseVector::from_values(vec![0.0; 75]).unwrap(),
                target: img.clone(),
                identity: e.identity,
            })
            .collect()
    }

    #[test]
    fn classifier_learns_synthetic_identities_and_rows_sum_to_one() {
        let s = samples();
        let images: Vec<Image> = s.iter().map(|x| x.target.clone()).collect();
        let labels: Vec<usize> = s.iter().map(|x| x.identity).collect();
        let c = IdentityClassifier::new(32, 3, 0).unwrap();
        let acc = c.fit(&images, &labels, &ClassifierTraining::default()).unwrap();
        assert!(acc >= 0.95, "accuracy {acc}");
        let rows = classify_for_is(&[images[0].clone(), images[0].clone()], &c).unwrap();
        assert_eq!(rows[0], rows[1]);
        assert!((rows[0].iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn oracle_and_constant_synthesizers() {
        let s = samples();
        let c = IdentityClassifier::new(32, 3, 0).unwrap();
        let cfg = MetricsConfig::default();
        let r = evaluate(&s, &Copier, &c, &cfg, serde_json::json!({"k": 1})).unwrap();
        assert!((r.ssim_mean - 1.0).abs() < 1e-9);
        assert_eq!(r.checkpoint_id, "copy-target");
        assert_eq!(r.config["k"], 1);
        let r = evaluate(&s, &Constant, &c, &cfg, serde_json::Value::Null).unwrap();
        assert!((r.is_mean - 1.0).abs() < 1e-3);
        assert!(r.table("Ours").contains("SSIM"));
    }
}
