//! Image + keypoint indices, same-identity training pairs, and a procedural
//! stick-figure dataset that labels its own poses.

use std::collections::HashMap;
use std::f32::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::augment::Augmenter;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::pose::{self, Joint, Keypoint, PoseKeypoints, PoseVector, NUM_JOINTS};
use crate::rng;

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub image_path: PathBuf,
    pub identity: usize,
    pub keypoints_path: PathBuf,
    pub keypoints: PoseKeypoints,
}

/// Entries plus the directory their relative paths are resolved against.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
    pub num_identities: usize,
}

impl DatasetIndex {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<IndexEntry>) -> Self {
        let num_identities = entries.iter().map(|e| e.identity + 1).max().unwrap_or(0);
        Self {
            root: root.into(),
            entries,
            num_identities,
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Read a manifest of `image_path<TAB>identity_id<TAB>keypoint_path`
    /// lines. Blank lines and `#` comments are skipped.
    pub fn load_manifest(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| Error::Manifest {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [image, identity, keypoints] = fields[..] else {
                return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            let identity: usize = identity
                .trim()
                .parse()
                .map_err(|_| bad(format!("identity `{identity}` is not a non-negative integer")))?;
            let keypoints_path = PathBuf::from(keypoints);
            let kp = pose::load_keypoints(&if keypoints_path.is_absolute() {
                keypoints_path.clone()
            } else {
                root.join(&keypoints_path)
            })?;
            entries.push(IndexEntry {
                image_path: PathBuf::from(image),
                identity,
                keypoints_path,
                keypoints: kp,
            });
        }
        Ok(Self::new(root, entries))
    }

    pub fn manifest_string(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                format!(
                    "{}\t{}\t{}\n",
                    e.image_path.display(),
                    e.identity,
                    e.keypoints_path.display()
                )
            })
            .collect()
    }

    pub fn entry_by_image(&self, image_path: &Path) -> Option<usize> {
        self.entries.iter().position(|e| e.image_path == image_path)
    }
}

/// Indices into [`DatasetIndex::entries`] for the appearance source and the
/// pose/ground-truth target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TrainingPair {
    pub source: usize,
    pub target: usize,
}

/// All ordered same-identity pairs of distinct entries whose poses differ by
/// more than `min_pose_distance`, grouped by identity and ordered by image
/// path. Poses with no jointly visible joint count as different.
pub fn build_pairs(index: &DatasetIndex, min_pose_distance: f32) -> Result<Vec<TrainingPair>> {
    let poses = index
        .entries
        .iter()
        .map(|e| pose::normalize_pose(&e.keypoints))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..index.entries.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&index.entries[a], &index.entries[b]);
        (ea.identity, &ea.image_path, a).cmp(&(eb.identity, &eb.image_path, b))
    });
    let mut pairs = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let id = index.entries[order[start]].identity;
        let end = start
            + order[start..]
                .iter()
                .take_while(|&&i| index.entries[i].identity == id)
                .count();
        let group = &order[start..end];
        for &a in group {
            for &b in group {
                if a == b || index.entries[a].image_path == index.entries[b].image_path {
                    continue;
                }
                let d = match pose::pose_distance(&poses[a], &poses[b]) {
                    Ok(d) => d,
                    Err(Error::NoSharedVisibleJoints) => f32::INFINITY,
                    Err(e) => return Err(e),
                };
                if d > min_pose_distance {
                    pairs.push(TrainingPair { source: a, target: b });
                }
            }
        }
        start = end;
    }
    Ok(pairs)
}

pub fn pairs_to_tsv(index: &DatasetIndex, pairs: &[TrainingPair]) -> String {
    pairs
        .iter()
        .map(|p| {
            format!(
                "{}\t{}\t{}\n",
                index.entries[p.source].image_path.display(),
                index.entries[p.target].image_path.display(),
                index.entries[p.source].identity
            )
        })
        .collect()
}

/// Parse a pair list written by [`pairs_to_tsv`] back into entry indices.
pub fn pairs_from_tsv(index: &DatasetIndex, text: &str, path: &Path) -> Result<Vec<TrainingPair>> {
    let lookup: HashMap<&Path, usize> = index
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.image_path.as_path(), i))
        .collect();
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 {
            return Err(bad("expected source and target image paths".into()));
        }
        let find = |p: &str| {
            lookup
                .get(Path::new(p))
                .copied()
                .ok_or_else(|| bad(format!("`{p}` is not in the manifest")))
        };
        let (source, target) = (find(fields[0])?, find(fields[1])?);
        if index.entries[source].identity != index.entries[target].identity || source == target {
            return Err(bad("pair must join two distinct images of one identity".into()));
        }
        pairs.push(TrainingPair { source, target });
    }
    Ok(pairs)
}

/// One generator training example.
#[derive(Clone, Debug)]
pub struct Sample {
    pub source: Image,
    pub target_pose: PoseVector,
    pub target: Image,
    pub identity: usize,
}

/// An index with every image decoded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub index: DatasetIndex,
    images: Vec<Image>,
    poses: Vec<PoseVector>,
}

impl Dataset {
    pub fn load(index: DatasetIndex) -> Result<Self> {
        let images = index
            .entries
            .par_iter()
            .map(|e| Image::load_png(&index.resolve(&e.image_path)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(index, images)
    }

    pub fn from_parts(index: DatasetIndex, images: Vec<Image>) -> Result<Self> {
        if images.len() != index.entries.len() {
            return Err(Error::dims(format!(
                "{} images for {} index entries",
                images.len(),
                index.entries.len()
            )));
        }
        let poses = index
            .entries
            .iter()
            .map(|e| pose::normalize_pose(&e.keypoints))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            index,
            images,
            poses,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn pose(&self, i: usize) -> &PoseVector {
        &self.poses[i]
    }

    pub fn identity(&self, i: usize) -> usize {
        self.index.entries[i].identity
    }

    /// Source through the full augmenter (or only resize-and-pad when
    /// `augment` is false); target through resize-and-pad only; pose from
    /// the target's keypoints.
    pub fn load_sample(
        &self,
        pair: TrainingPair,
        augmenter: &Augmenter,
        augment: bool,
        sample_index: u64,
    ) -> Result<Sample> {
        if pair.source == pair.target {
            return Err(Error::InvalidArgument("pair source and target coincide".into()));
        }
        let src = &self.images[pair.source];
        let source = if augment {
            augmenter.apply(src, sample_index)?
        } else {
            augmenter.canonical(src)?
        };
        Ok(Sample {
            source,
            target_pose: self.poses[pair.target].clone(),
            target: augmenter.canonical(&self.images[pair.target])?,
            identity: self.index.entries[pair.source].identity,
        })
    }
}

/// Per-identity appearance of a synthetic person.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityAttributes {
    pub torso_color: [f32; 3],
    pub limb_color: [f32; 3],
    /// Head radius as a fraction of image height.
    pub head_radius: f32,
    pub background: [f32; 3],
}

const SKIN: [f32; 3] = [0.93, 0.78, 0.64];

impl IdentityAttributes {
    fn draw(rng: &mut rng::RngStream) -> Self {
        let mut color = || [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
        let torso_color = color();
        let limb_color = color();
        let shade: f32 = rng.gen_range(0.1..0.9);
        let tint: f32 = rng.gen_range(-0.05..0.05);
        Self {
            torso_color,
            limb_color,
            head_radius: rng.gen_range(0.045..0.07),
            background: [shade + tint, shade, shade - tint],
        }
    }
}

/// Joint angles of a synthetic pose, in radians measured from straight down
/// and positive away from the body midline.
#[derive(Clone, Debug, PartialEq)]
pub struct StickPose {
    pub center_x: f32,
    pub lean: f32,
    pub head_tilt: f32,
    pub arms: [(f32, f32); 2],
    pub legs: [(f32, f32); 2],
}

impl StickPose {
    pub fn draw(rng: &mut rng::RngStream) -> Self {
        let deg = PI / 180.0;
        let mut arm = || (rng.gen_range(-10.0..150.0) * deg, rng.gen_range(-60.0..90.0) * deg);
        let arms = [arm(), arm()];
        let mut leg = || (rng.gen_range(-8.0..40.0) * deg, rng.gen_range(-40.0..10.0) * deg);
        let legs = [leg(), leg()];
        Self {
            center_x: rng.gen_range(0.42..0.58),
            lean: rng.gen_range(-0.04..0.04),
            head_tilt: rng.gen_range(-15.0..15.0) * deg,
            arms,
            legs,
        }
    }

    /// Joint positions in unit image coordinates `(x, y)`.
    pub fn joints(&self) -> [[f32; 2]; NUM_JOINTS] {
        let mut j = [[0.0f32; 2]; NUM_JOINTS];
        let add = |p: [f32; 2], d: [f32; 2]| [p[0] + d[0], p[1] + d[1]];
        let dir = |angle: f32, side: f32| [angle.sin() * side, angle.cos()];
        let scale = |d: [f32; 2], s: f32| [d[0] * s, d[1] * s];

        let neck = [self.center_x, 0.25];
        let mid_hip = [self.center_x + self.lean, 0.55];
        j[Joint::Neck as usize] = neck;
        j[Joint::MidHip as usize] = mid_hip;

        let up = [self.head_tilt.sin(), -self.head_tilt.cos()];
        let nose = add(neck, scale(up, 0.085));
        j[Joint::Nose as usize] = nose;
        j[Joint::REye as usize] = add(nose, [-0.018, -0.015]);
        j[Joint::LEye as usize] = add(nose, [0.018, -0.015]);
        j[Joint::REar as usize] = add(nose, [-0.04, 0.0]);
        j[Joint::LEar as usize] = add(nose, [0.04, 0.0]);

        // person's right side appears on the image's left
        let sides = [-1.0f32, 1.0];
        let shoulders = [Joint::RShoulder, Joint::LShoulder];
        let elbows = [Joint::RElbow, Joint::LElbow];
        let wrists = [Joint::RWrist, Joint::LWrist];
        let hips = [Joint::RHip, Joint::LHip];
        let knees = [Joint::RKnee, Joint::LKnee];
        let ankles = [Joint::RAnkle, Joint::LAnkle];
        let big_toes = [Joint::RBigToe, Joint::LBigToe];
        let small_toes = [Joint::RSmallToe, Joint::LSmallToe];
        let heels = [Joint::RHeel, Joint::LHeel];
        for k in 0..2 {
            let s = sides[k];
            let shoulder = add(neck, [0.09 * s, 0.01]);
            let (upper, lower) = self.arms[k];
            let elbow = add(shoulder, scale(dir(upper, s), 0.13));
            let wrist = add(elbow, scale(dir(upper + lower, s), 0.12));
            j[shoulders[k] as usize] = shoulder;
            j[elbows[k] as usize] = elbow;
            j[wrists[k] as usize] = wrist;

            let hip = add(mid_hip, [0.05 * s, 0.0]);
            let (thigh, shin) = self.legs[k];
            let knee = add(hip, scale(dir(thigh, s), 0.16));
            let ankle = add(knee, scale(dir(thigh + shin, s), 0.15));
            j[hips[k] as usize] = hip;
            j[knees[k] as usize] = knee;
            j[ankles[k] as usize] = ankle;
            j[big_toes[k] as usize] = add(ankle, [0.03 * s, 0.02]);
            j[small_toes[k] as usize] = add(ankle, [0.045 * s, 0.015]);
            j[heels[k] as usize] = add(ankle, [-0.01 * s, 0.012]);
        }
        for p in &mut j {
            p[0] = p[0].clamp(0.0, 1.0);
            p[1] = p[1].clamp(0.0, 1.0);
        }
        j
    }
}

struct Canvas {
    img: Image,
}

impl Canvas {
    fn blend(&mut self, y: usize, x: usize, color: [f32; 3], alpha: f32) {
        if alpha <= 0.0 {
            return;
        }
        let p = self.img.pixel(y, x);
        let mix = |i: usize| p[i] + (color[i] - p[i]) * alpha.min(1.0);
        self.img.set_pixel(y, x, [mix(0), mix(1), mix(2)]);
    }

    /// Anti-aliased capsule between two points (pixel units).
    fn capsule(&mut self, a: [f32; 2], b: [f32; 2], radius: f32, color: [f32; 3]) {
        let (h, w) = self.img.dims();
        let pad = radius + 1.0;
        let x0 = (a[0].min(b[0]) - pad).floor().max(0.0) as usize;
        let x1 = ((a[0].max(b[0]) + pad).ceil() as usize).min(w);
        let y0 = (a[1].min(b[1]) - pad).floor().max(0.0) as usize;
        let y1 = ((a[1].max(b[1]) + pad).ceil() as usize).min(h);
        let ab = [b[0] - a[0], b[1] - a[1]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        for y in y0..y1 {
            for x in x0..x1 {
                let p = [x as f32 + 0.5, y as f32 + 0.5];
                let ap = [p[0] - a[0], p[1] - a[1]];
                let t = if len2 > 0.0 {
                    ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let dx = ap[0] - t * ab[0];
                let dy = ap[1] - t * ab[1];
                let d = (dx * dx + dy * dy).sqrt();
                self.blend(y, x, color, (radius + 0.5 - d).clamp(0.0, 1.0));
            }
        }
    }
}

/// Render one synthetic person and its pixel-space keypoints.
pub fn render_person(
    attrs: &IdentityAttributes,
    pose: &StickPose,
    dims: (usize, usize),
) -> Result<(Image, PoseKeypoints)> {
    let (h, w) = dims;
    let unit = pose.joints();
    let px = |j: Joint| [unit[j as usize][0] * w as f32, unit[j as usize][1] * h as f32];
    let mut canvas = Canvas {
        img: Image::filled(h, w, attrs.background),
    };
    let hf = h as f32;
    let limb_r = 0.022 * hf;
    for (a, b, c) in [
        (Joint::RHip, Joint::RKnee, Joint::RAnkle),
        (Joint::LHip, Joint::LKnee, Joint::LAnkle),
        (Joint::RShoulder, Joint::RElbow, Joint::RWrist),
        (Joint::LShoulder, Joint::LElbow, Joint::LWrist),
    ] {
        canvas.capsule(px(a), px(b), limb_r, attrs.limb_color);
        canvas.capsule(px(b), px(c), limb_r, attrs.limb_color);
    }
    canvas.capsule(px(Joint::Neck), px(Joint::MidHip), 0.055 * hf, attrs.torso_color);
    canvas.capsule(px(Joint::RShoulder), px(Joint::LShoulder), 0.03 * hf, attrs.torso_color);
    canvas.capsule(px(Joint::RHip), px(Joint::LHip), 0.03 * hf, attrs.torso_color);
    let nose = px(Joint::Nose);
    canvas.capsule(nose, nose, attrs.head_radius * hf, SKIN);

    let mut img = canvas.img;
    img.quantize_u8();
    let mut joints = [Keypoint::default(); NUM_JOINTS];
    for (k, u) in joints.iter_mut().zip(unit.iter()) {
        *k = Keypoint::new(u[0] * w as f32, u[1] * h as f32, 1.0);
    }
    Ok((img, PoseKeypoints::new(joints, dims)?))
}

/// A rendered synthetic dataset held in memory.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub index: DatasetIndex,
    pub images: Vec<Image>,
    pub attributes: Vec<IdentityAttributes>,
    pub poses: Vec<StickPose>,
}

pub fn make_synthetic_dataset(
    n_identities: usize,
    images_per_identity: usize,
    seed: u64,
    dims: (usize, usize),
) -> Result<SyntheticDataset> {
    if n_identities < 1 {
        return Err(Error::InvalidArgument("need at least one identity".into()));
    }
    if images_per_identity < 2 {
        return Err(Error::InvalidArgument("need at least two images per identity".into()));
    }
    if dims.0 < 8 || dims.1 < 8 {
        return Err(Error::InvalidArgument("synthetic images must be at least 8x8".into()));
    }
    let attributes: Vec<IdentityAttributes> = (0..n_identities)
        .map(|i| IdentityAttributes::draw(&mut rng::stream(seed, rng::tag::SYNTH_IDENTITY, i as u64)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..n_identities)
        .flat_map(|i| (0..images_per_identity).map(move |k| (i, k)))
        .collect();
    let rendered = jobs
        .par_iter()
        .map(|&(i, k)| {
            let n = (i * images_per_identity + k) as u64;
            let pose = StickPose::draw(&mut rng::stream(seed, rng::tag::SYNTH_POSE, n));
            let (img, kp) = render_person(&attributes[i], &pose, dims)?;
            Ok((img, kp, pose))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut entries = Vec::with_capacity(jobs.len());
    let mut images = Vec::with_capacity(jobs.len());
    let mut poses = Vec::with_capacity(jobs.len());
    for (&(i, k), (img, kp, pose)) in jobs.iter().zip(rendered) {
        entries.push(IndexEntry {
            image_path: PathBuf::from(format!("images/id{i:03}_{k:03}.png")),
            identity: i,
            keypoints_path: PathBuf::from(format!("keypoints/id{i:03}_{k:03}_keypoints.json")),
            keypoints: kp,
        });
        images.push(img);
        poses.push(pose);
    }
    Ok(SyntheticDataset {
        index: DatasetIndex::new(".", entries),
        images,
        attributes,
        poses,
    })
}

impl SyntheticDataset {
    /// Write PNGs, keypoint files, and the manifest under `dir`; returns the
    /// index rooted there.
    pub fn write_to(&self, dir: &Path) -> Result<DatasetIndex> {
        std::fs::create_dir_all(dir.join("images"))?;
        std::fs::create_dir_all(dir.join("keypoints"))?;
        self.index
            .entries
            .par_iter()
            .zip(self.images.par_iter())
            .map(|(e, img)| {
                img.save_png(&dir.join(&e.image_path))?;
                std::fs::write(dir.join(&e.keypoints_path), e.keypoints.to_json())?;
                Ok(())
            })
            .collect::<Result<()>>()?;
        std::fs::write(dir.join(MANIFEST_NAME), self.index.manifest_string())?;
        Ok(DatasetIndex {
            root: dir.to_path_buf(),
            ..self.index.clone()
        })
    }

    pub fn into_dataset(self) -> Result<Dataset> {
        Dataset::from_parts(self.index, self.images)
    }
}
