//! Command-line front end. [`run`] maps every outcome to an exit code:
//! 0 success, 1 runtime error, 2 usage error, 3 configuration error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::augment::{preview_panels, resize_and_pad, tile_grid, AugmentConfig, Augmenter};
use crate::backbone::{extract_descriptor, load_backbone, ResNet50};
use crate::config::{load_config, RunConfig};
use crate::dataset::{
    build_pairs, make_synthetic_dataset, pairs_from_tsv, pairs_to_tsv, Dataset, DatasetIndex, Sample, TrainingPair,
    MANIFEST_NAME,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{
    evaluate, occlude_sources, Classifier, ClassifierKind, GeneratorSynthesizer, IdentityClassifier,
};
use crate::pose::{load_keypoints, normalize_pose};
use crate::trainer::{load_generator, Trainer, TrainingState};

pub const PAIRS_NAME: &str = "pairs.tsv";

#[derive(Parser, Debug)]
#[command(name = "ptgan", version, about = "Pose-guided person image synthesis")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set trainer.epochs=5`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic stick-figure dataset with manifest and keypoints.
    SynthData {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        identities: usize,
        #[arg(long, default_value_t = 6)]
        per_identity: usize,
        /// Image side; defaults to augment.image_size.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Build same-identity training pairs from a manifest.
    PairsBuild {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a grid of augmentation panels for one image.
    AugmentPreview {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the generator and discriminator.
    Train {
        /// Ablation arm: no augmentation of source images.
        #[arg(long)]
        no_augment: bool,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Synthesize one image from a source image and a target pose.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint with SSIM and Inception Score.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Erase one rectangle from every source before synthesis.
        #[arg(long)]
        occlude: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => 3,
                _ => 1,
            }
        }
    }
}

fn configure_threads(workers: usize) {
    if workers > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    configure_threads(cfg.runtime.workers);
    match cli.command {
        Command::SynthData {
            out,
            identities,
            per_identity,
            size,
        } => synth_data(&cfg, out, identities, per_identity, size),
        Command::PairsBuild { manifest, out } => pairs_build(&cfg, manifest, out),
        Command::AugmentPreview { image, index, out } => augment_preview(&cfg, &image, index, out),
        Command::Train { no_augment, resume } => {
            if no_augment {
                cfg.trainer.augment = false;
            }
            train(cfg, resume)
        }
        Command::Generate {
            checkpoint,
            image,
            pose,
            out,
        } => generate(&checkpoint, &image, &pose, &out),
        Command::Evaluate {
            checkpoint,
            manifest,
            pairs,
            occlude,
            report,
        } => {
            if occlude {
                cfg.metrics.occlude_inputs = true;
            }
            evaluate_cmd(&cfg, &checkpoint, manifest, pairs, report)
        }
    }
}

fn synth_data(cfg: &RunConfig, out: Option<PathBuf>, ids: usize, per: usize, size: Option<usize>) -> Result<()> {
    let dir = out.unwrap_or_else(|| cfg.paths.data_dir.clone());
    let side = size.unwrap_or(cfg.augment.image_size);
    let synth = make_synthetic_dataset(ids, per, cfg.seed, (side, side))?;
    let index = synth.write_to(&dir)?;
    println!(
        "wrote {} images of {} identities to {}",
        index.entries.len(),
        index.num_identities,
        dir.display()
    );
    Ok(())
}

fn manifest_path(cfg: &RunConfig, manifest: Option<PathBuf>) -> PathBuf {
    manifest.unwrap_or_else(|| cfg.paths.data_dir.join(MANIFEST_NAME))
}

fn read_pairs(cfg: &RunConfig, index: &DatasetIndex, pairs: Option<PathBuf>) -> Result<Vec<TrainingPair>> {
    let path = pairs.unwrap_or_else(|| index.root.join(PAIRS_NAME));
    if path.exists() {
        let text = std::fs::read_to_string(&path)?;
        pairs_from_tsv(index, &text, &path)
    } else {
        build_pairs(index, cfg.dataset.pair_min_pose_distance)
    }
}

fn pairs_build(cfg: &RunConfig, manifest: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let index = DatasetIndex::load_manifest(&manifest_path(cfg, manifest))?;
    let pairs = build_pairs(&index, cfg.dataset.pair_min_pose_distance)?;
    let out = out.unwrap_or_else(|| index.root.join(PAIRS_NAME));
    std::fs::write(&out, pairs_to_tsv(&index, &pairs))?;
    println!("wrote {} pairs to {}", pairs.len(), out.display());
    Ok(())
}

fn augment_preview(cfg: &RunConfig, image: &Path, index: u64, out: Option<PathBuf>) -> Result<()> {
    let img = Image::load_png(image)?;
    let panels = preview_panels(&img, &cfg.augment, index)?;
    let names: Vec<&str> = panels.iter().map(|(n, _)| *n).collect();
    let grid = tile_grid(&panels.into_iter().map(|(_, i)| i).collect::<Vec<_>>(), 4)?;
    let out = out.unwrap_or_else(|| cfg.paths.out_dir.join("augment_preview.png"));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    grid.save_png(&out)?;
    println!("wrote {} ({})", out.display(), names.join(", "));
    Ok(())
}

fn train(mut cfg: RunConfig, resume: Option<PathBuf>) -> Result<()> {
    let index = DatasetIndex::load_manifest(&manifest_path(&cfg, None))?;
    cfg.resolve_num_classes(index.num_identities)?;
    let pairs = read_pairs(&cfg, &index, None)?;
    let dataset = Dataset::load(index)?;
    let state = match resume {
        Some(path) => {
            let mut s = TrainingState::load(&path)?;
            // the run length may be extended; everything else comes from the checkpoint
            s.trainer.epochs = cfg.trainer.epochs;
            s.trainer.max_steps = cfg.trainer.max_steps;
            s
        }
        None => TrainingState::new(
            cfg.generator.clone(),
            cfg.discriminator.clone(),
            cfg.backbone.clone(),
            cfg.trainer.clone(),
        )?,
    };
    let image_size = state.generator.config().output_size;
    let backbone = load_backbone(&state.backbone, image_size)?;
    let augmenter = Augmenter::new(AugmentConfig {
        image_size,
        ..cfg.augment.clone()
    })?;
    std::fs::create_dir_all(&cfg.paths.out_dir)?;
    std::fs::write(cfg.paths.out_dir.join("config.toml"), cfg.to_toml())?;
    let trainer = Trainer {
        dataset: &dataset,
        pairs: &pairs,
        backbone: backbone.as_ref(),
        augmenter: &augmenter,
        out_dir: Some(cfg.paths.out_dir.clone()),
    };
    let state = trainer.fit(state)?;
    let last = state.history.last();
    println!(
        "trained {} steps over {} epochs ({} pairs, augmentation {}); last L_G_rec {}; checkpoints in {}",
        state.step,
        state.epoch,
        pairs.len(),
        if state.trainer.augment { "on" } else { "off" },
        last.map(|l| format!("{:.5}", l.g_rec)).unwrap_or_else(|| "n/a".into()),
        cfg.paths.out_dir.join("checkpoints").display()
    );
    Ok(())
}

fn generate(checkpoint: &Path, image: &Path, pose: &Path, out: &Path) -> Result<()> {
    let (generator, backbone_cfg, id) = load_generator(checkpoint)?;
    let size = generator.config().output_size;
    let backbone = load_backbone(&backbone_cfg, size)?;
    let src = resize_and_pad(&Image::load_png(image)?, (size, size))?;
    let descriptor = extract_descriptor(&src, backbone.as_ref())?;
    let pose = normalize_pose(&load_keypoints(pose)?)?;
    let img = generator.generate(&descriptor, &pose)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    img.save_png(out)?;
    println!("wrote {size}x{size} image {} (checkpoint {id})", out.display());
    Ok(())
}

fn evaluate_cmd(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest: Option<PathBuf>,
    pairs: Option<PathBuf>,
    report: Option<PathBuf>,
) -> Result<()> {
    let (generator, backbone_cfg, id) = load_generator(checkpoint)?;
    let size = generator.config().output_size;
    let backbone = load_backbone(&backbone_cfg, size)?;
    let index = DatasetIndex::load_manifest(&manifest_path(cfg, manifest))?;
    let pairs = read_pairs(cfg, &index, pairs)?;
    let dataset = Dataset::load(index)?;
    let canonical = Augmenter::new(AugmentConfig::identity(size))?;
    let mut samples: Vec<Sample> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| dataset.load_sample(*p, &canonical, false, i as u64))
        .collect::<Result<_>>()?;
    if cfg.metrics.occlude_inputs {
        occlude_sources(&mut samples, cfg.metrics.occlusion_area, cfg.seed);
    }

    let classifier: Box<dyn Classifier> = match cfg.metrics.classifier {
        ClassifierKind::Identity => {
            let c = IdentityClassifier::new(size, dataset.index.num_identities, cfg.seed)?;
            let labels: Vec<usize> = (0..dataset.len()).map(|i| dataset.identity(i)).collect();
            let acc = c.fit(dataset.images(), &labels, &cfg.metrics.classifier_training)?;
            log::info!("identity classifier train accuracy {acc:.3}");
            Box::new(c)
        }
        ClassifierKind::Reference => {
            let path = cfg.metrics.classifier_weights.as_ref().expect("validated");
            let net = ResNet50::load(path, 224)?;
            if !net.has_classifier() {
                return Err(Error::WeightsUnavailable(format!(
                    "{} has no fc layer for classification",
                    path.display()
                )));
            }
            Box::new(net)
        }
    };
    let synth = GeneratorSynthesizer {
        generator: &generator,
        backbone: backbone.as_ref(),
        checkpoint_id: id,
    };
    let echo = serde_json::json!({
        "run": serde_json::to_value(cfg)?,
        "generator": serde_json::to_value(generator.config())?,
        "backbone": serde_json::to_value(&backbone_cfg)?,
        "checkpoint_path": checkpoint.display().to_string(),
        "n_pairs": pairs.len(),
    });
    let r = evaluate(&samples, &synth, classifier.as_ref(), &cfg.metrics, echo)?;
    let path = report.unwrap_or_else(|| cfg.paths.out_dir.join("metrics.json"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&path, serde_json::to_string_pretty(&r)?)?;
    let label = if cfg.metrics.occlude_inputs { "Ours (occluded inputs)" } else { "Ours" };
    print!("{}", r.table(label));
    println!("report written to {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(run(["ptgan", "train", "--bogus"]), 2);
        assert_eq!(run(["ptgan"]), 2);
    }

    #[test]
    fn bad_config_exits_three() {
        assert_eq!(run(["ptgan", "--set", "trainer.batch_size=0", "pairs-build"]), 3);
        assert_eq!(run(["ptgan", "--set", "nonsense=1", "pairs-build"]), 3);
    }

    #[test]
    fn missing_manifest_is_a_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("none.tsv");
        assert_eq!(run(["ptgan", "pairs-build", "--manifest", m.to_str().unwrap()]), 1);
    }
}
