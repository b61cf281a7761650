//! Seeded image augmentation.
//!
//! Each stochastic transform is split into a parameter draw and a pure
//! application so the two can be tested separately. [`Augmenter`] chains the
//! canonical resize-and-pad with the stochastic transforms, giving every
//! transform its own random stream keyed by `(seed, sample index)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use crate::rng::{self, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Erase,
    Crop,
    Distort,
    Jitter,
    Flip,
}

impl AugmentOp {
    fn stream_tag(self) -> u64 {
        match self {
            AugmentOp::Erase => rng::tag::ERASE,
            AugmentOp::Crop => rng::tag::CROP,
            AugmentOp::Distort => rng::tag::DISTORT,
            AugmentOp::Jitter => rng::tag::JITTER,
            AugmentOp::Flip => rng::tag::FLIP,
        }
    }
}

/// How an erased patch is filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EraseFill {
    /// Independent uniform noise per pixel and channel.
    PerPixel,
    /// One random color for the whole patch.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterStrength {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue_degrees: f32,
}

impl Default for JitterStrength {
    fn default() -> Self {
        Self {
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue_degrees: 18.0,
        }
    }
}

impl JitterStrength {
    pub fn off() -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue_degrees: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Side length of the canonical square every image is resized and padded to.
    pub image_size: usize,
    pub erase_prob: f32,
    pub erase_area_range: [f32; 2],
    pub erase_aspect_range: [f32; 2],
    pub erase_fill: EraseFill,
    pub crop_scale_range: [f32; 2],
    pub jitter: JitterStrength,
    pub flip_prob: f32,
    pub distortion_grid: usize,
    pub distortion_magnitude: f32,
    pub seed: u64,
    pub order: Vec<AugmentOp>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            erase_prob: 0.5,
            erase_area_range: [0.02, 0.2],
            erase_aspect_range: [0.3, 3.3],
            erase_fill: EraseFill::PerPixel,
            crop_scale_range: [0.8, 1.0],
            jitter: JitterStrength::default(),
            flip_prob: 0.5,
            distortion_grid: 10,
            distortion_magnitude: 8.0,
            seed: 0,
            order: vec![
                AugmentOp::Erase,
                AugmentOp::Crop,
                AugmentOp::Distort,
                AugmentOp::Jitter,
                AugmentOp::Flip,
            ],
        }
    }
}

impl AugmentConfig {
    /// Every stochastic transform disabled; the pipeline reduces to
    /// resize-and-pad.
    pub fn identity(image_size: usize) -> Self {
        Self {
            image_size,
            erase_prob: 0.0,
            crop_scale_range: [1.0, 1.0],
            jitter: JitterStrength::off(),
            flip_prob: 0.0,
            distortion_magnitude: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(format!("augment.{key}"), msg));
        if self.image_size == 0 {
            return bad("image_size", "must be positive");
        }
        for (key, p) in [("erase_prob", self.erase_prob), ("flip_prob", self.flip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(key, "probability must lie in [0, 1]");
            }
        }
        let [a0, a1] = self.erase_area_range;
        if !(a0 > 0.0 && a0 <= a1 && a1 < 1.0) {
            return bad("erase_area_range", "need 0 < min <= max < 1");
        }
        let [r0, r1] = self.erase_aspect_range;
        if !(r0 > 0.0 && r0 <= r1) {
            return bad("erase_aspect_range", "need 0 < min <= max");
        }
        let [c0, c1] = self.crop_scale_range;
        if !(c0 > 0.0 && c0 <= c1 && c1 <= 1.0) {
            return bad("crop_scale_range", "need 0 < min <= max <= 1");
        }
        let j = &self.jitter;
        if [j.brightness, j.contrast, j.saturation, j.hue_degrees]
            .iter()
            .any(|s| !(*s >= 0.0))
        {
            return bad("jitter", "strengths must be non-negative");
        }
        if j.brightness > 1.0 || j.contrast > 1.0 || j.saturation > 1.0 {
            return bad("jitter", "relative strengths above 1 would allow negative factors");
        }
        if self.distortion_grid < 2 {
            return bad("distortion_grid", "must be at least 2");
        }
        if !(self.distortion_magnitude >= 0.0) {
            return bad("distortion_magnitude", "must be non-negative");
        }
        Ok(())
    }
}

/// Scale the longer side to the target and zero-pad the remainder
/// symmetrically.
pub fn resize_and_pad(img: &Image, target: (usize, usize)) -> Result<Image> {
    if img.is_empty() {
        return Err(Error::EmptyImage);
    }
    let (th, tw) = target;
    if img.dims() == target {
        return Ok(img.clone());
    }
    let (h, w) = img.dims();
    let scale = (th as f64 / h as f64).min(tw as f64 / w as f64);
    let nh = ((h as f64 * scale).round() as usize).clamp(1, th);
    let nw = ((w as f64 * scale).round() as usize).clamp(1, tw);
    let resized = img.resize(nh, nw);
    if (nh, nw) == target {
        return Ok(resized);
    }
    let oy = (th - nh) / 2;
    let ox = (tw - nw) / 2;
    let mut out = Image::zeros(th, tw);
    for y in 0..nh {
        for x in 0..nw {
            out.set_pixel(y + oy, x + ox, resized.pixel(y, x));
        }
    }
    Ok(out)
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

pub fn draw_erase_rect(h: usize, w: usize, rng: &mut RngStream, cfg: &AugmentConfig) -> Rect {
    let [a0, a1] = cfg.erase_area_range;
    let [r0, r1] = cfg.erase_aspect_range;
    let area = rng.gen_range(a0..=a1) as f64 * (h * w) as f64;
    let aspect = rng.gen_range((r0 as f64).ln()..=(r1 as f64).ln()).exp();
    let ph = ((area * aspect).sqrt().round() as usize).clamp(1, h);
    let pw = ((area / aspect).sqrt().round() as usize).clamp(1, w);
    let y = rng.gen_range(0..=h - ph);
    let x = rng.gen_range(0..=w - pw);
    Rect {
        y,
        x,
        height: ph,
        width: pw,
    }
}

pub fn erase_rect(img: &Image, rect: Rect, fill: EraseFill, rng: &mut RngStream) -> Image {
    let mut out = img.clone();
    let constant: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    for y in rect.y..rect.y + rect.height {
        for x in rect.x..rect.x + rect.width {
            let v = match fill {
                EraseFill::PerPixel => [rng.gen(), rng.gen(), rng.gen()],
                EraseFill::Constant => constant,
            };
            out.set_pixel(y, x, v);
        }
    }
    out
}

pub fn random_erase(img: &Image, rng: &mut RngStream, cfg: &AugmentConfig) -> Image {
    if img.is_empty() || rng.gen::<f32>() >= cfg.erase_prob {
        return img.clone();
    }
    let rect = draw_erase_rect(img.height(), img.width(), rng, cfg);
    erase_rect(img, rect, cfg.erase_fill, rng)
}

/// Crop `rect` and rescale it back to the full image size.
pub fn crop_and_rescale(img: &Image, rect: Rect) -> Image {
    if (rect.height, rect.width) == img.dims() {
        return img.clone();
    }
    img.resample_window(
        rect.y as f32,
        rect.x as f32,
        rect.height as f32,
        rect.width as f32,
        img.height(),
        img.width(),
    )
}

pub fn random_crop_upscale(img: &Image, rng: &mut RngStream, cfg: &AugmentConfig) -> Image {
    if img.is_empty() {
        return img.clone();
    }
    let (h, w) = img.dims();
    let [s0, s1] = cfg.crop_scale_range;
    let s = rng.gen_range(s0..=s1);
    let ch = ((h as f32 * s).round() as usize).clamp(1, h);
    let cw = ((w as f32 * s).round() as usize).clamp(1, w);
    let y = rng.gen_range(0..=h - ch);
    let x = rng.gen_range(0..=w - cw);
    crop_and_rescale(
        img,
        Rect {
            y,
            x,
            height: ch,
            width: cw,
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterFactors {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue_degrees: f32,
}

impl JitterFactors {
    pub const IDENTITY: JitterFactors = JitterFactors {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue_degrees: 0.0,
    };
}

pub fn draw_jitter(rng: &mut RngStream, strength: &JitterStrength) -> JitterFactors {
    let mut around = |center: f32, s: f32| {
        if s > 0.0 {
            center + rng.gen_range(-s..=s)
        } else {
            center
        }
    };
    JitterFactors {
        brightness: around(1.0, strength.brightness),
        contrast: around(1.0, strength.contrast),
        saturation: around(1.0, strength.saturation),
        hue_degrees: around(0.0, strength.hue_degrees),
    }
}

#[inline]
fn luma(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h / 6.0, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Brightness, contrast, saturation, then hue; clamped to `[0, 1]` after
/// each stage.
pub fn apply_jitter(img: &Image, f: JitterFactors) -> Image {
    let mut out = img.clone();
    let clamp = |v: f32| v.clamp(0.0, 1.0);
    if f.brightness != 1.0 {
        for v in out.data_mut() {
            *v = clamp(*v * f.brightness);
        }
    }
    if f.contrast != 1.0 {
        let n = (out.height() * out.width()) as f64;
        let mean = (out
            .data()
            .chunks_exact(CHANNELS)
            .map(|p| luma([p[0], p[1], p[2]]) as f64)
            .sum::<f64>()
            / n) as f32;
        for v in out.data_mut() {
            *v = clamp(mean + (*v - mean) * f.contrast);
        }
    }
    if f.saturation != 1.0 {
        for p in out.data_mut().chunks_exact_mut(CHANNELS) {
            let gray = luma([p[0], p[1], p[2]]);
            for v in p.iter_mut() {
                *v = clamp(gray + (*v - gray) * f.saturation);
            }
        }
    }
    if f.hue_degrees != 0.0 {
        let shift = f.hue_degrees / 360.0;
        for p in out.data_mut().chunks_exact_mut(CHANNELS) {
            let [h, s, v] = rgb_to_hsv([p[0], p[1], p[2]]);
            let rgb = hsv_to_rgb([h + shift, s, v]);
            for (dst, src) in p.iter_mut().zip(rgb) {
                *dst = clamp(src);
            }
        }
    }
    out
}

pub fn jitter(img: &Image, rng: &mut RngStream, cfg: &AugmentConfig) -> Image {
    apply_jitter(img, draw_jitter(rng, &cfg.jitter))
}

pub fn flip_horizontal(img: &Image) -> Image {
    let w = img.width();
    Image::from_fn(img.height(), w, |y, x| img.pixel(y, w - 1 - x))
}

pub fn horizontal_flip(img: &Image, rng: &mut RngStream, cfg: &AugmentConfig) -> Image {
    if rng.gen::<f32>() < cfg.flip_prob {
        flip_horizontal(img)
    } else {
        img.clone()
    }
}

/// Control-point displacements `(dy, dx)` on a `grid × grid` lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct DistortionLattice {
    pub grid: usize,
    pub offsets: Vec<[f32; 2]>,
}

pub fn draw_lattice(rng: &mut RngStream, grid: usize, magnitude: f32) -> DistortionLattice {
    let offsets = (0..grid * grid)
        .map(|_| {
            if magnitude > 0.0 {
                [
                    rng.gen_range(-magnitude..=magnitude),
                    rng.gen_range(-magnitude..=magnitude),
                ]
            } else {
                [0.0, 0.0]
            }
        })
        .collect();
    DistortionLattice { grid, offsets }
}

#[inline]
fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

fn lattice_coord(p: usize, extent: usize, grid: usize) -> (usize, f32) {
    let g = p as f32 * (grid - 1) as f32 / (extent.max(2) - 1) as f32;
    let i = (g.floor() as usize).min(grid - 2);
    (i, smoothstep(g - i as f32))
}

/// Warp by the lattice displacement field, interpolated with smoothstep
/// weights between control points. Samples falling outside the frame are
/// edge-clamped.
pub fn warp_with_lattice(img: &Image, lattice: &DistortionLattice) -> Image {
    let (h, w) = img.dims();
    let g = lattice.grid;
    let at = |i: usize, j: usize| lattice.offsets[i * g + j];
    Image::from_fn(h, w, |y, x| {
        let (iy, ty) = lattice_coord(y, h, g);
        let (ix, tx) = lattice_coord(x, w, g);
        let mut d = [0.0f32; 2];
        for k in 0..2 {
            let top = at(iy, ix)[k] + (at(iy, ix + 1)[k] - at(iy, ix)[k]) * tx;
            let bottom = at(iy + 1, ix)[k] + (at(iy + 1, ix + 1)[k] - at(iy + 1, ix)[k]) * tx;
            d[k] = top + (bottom - top) * ty;
        }
        img.sample_bilinear(y as f32 + d[0], x as f32 + d[1])
    })
}

pub fn random_distortion(img: &Image, rng: &mut RngStream, cfg: &AugmentConfig) -> Image {
    if img.is_empty() {
        return img.clone();
    }
    let lattice = draw_lattice(rng, cfg.distortion_grid, cfg.distortion_magnitude);
    warp_with_lattice(img, &lattice)
}

/// Canonical resize-and-pad followed by the configured stochastic transforms.
#[derive(Clone, Debug)]
pub struct Augmenter {
    cfg: AugmentConfig,
}

pub fn compose_pipeline(cfg: AugmentConfig) -> Result<Augmenter> {
    Augmenter::new(cfg)
}

impl Augmenter {
    pub fn new(cfg: AugmentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.cfg
    }

    pub fn canonical(&self, img: &Image) -> Result<Image> {
        resize_and_pad(img, (self.cfg.image_size, self.cfg.image_size))
    }

    pub fn apply_op(&self, op: AugmentOp, img: &Image, sample_index: u64) -> Image {
        let mut rng = rng::stream(self.cfg.seed, op.stream_tag(), sample_index);
        let cfg = &self.cfg;
        match op {
            AugmentOp::Erase => random_erase(img, &mut rng, cfg),
            AugmentOp::Crop => random_crop_upscale(img, &mut rng, cfg),
            AugmentOp::Distort => random_distortion(img, &mut rng, cfg),
            AugmentOp::Jitter => jitter(img, &mut rng, cfg),
            AugmentOp::Flip => horizontal_flip(img, &mut rng, cfg),
        }
    }

    pub fn apply(&self, img: &Image, sample_index: u64) -> Result<Image> {
        let mut out = self.canonical(img)?;
        for &op in &self.cfg.order {
            out = self.apply_op(op, &out, sample_index);
        }
        Ok(out)
    }
}

/// The augmentation gallery: original, erase, crop, distortion, brightness,
/// contrast, saturation, flip. Every stochastic panel is forced on.
pub fn preview_panels(
    img: &Image,
    cfg: &AugmentConfig,
    sample_index: u64,
) -> Result<Vec<(&'static str, Image)>> {
    let base = resize_and_pad(img, (cfg.image_size, cfg.image_size))?;
    let stream = |tag| rng::stream(cfg.seed, tag, sample_index);
    let (h, w) = base.dims();

    let rect = draw_erase_rect(h, w, &mut stream(rng::tag::ERASE), cfg);
    let erased = erase_rect(&base, rect, cfg.erase_fill, &mut stream(rng::tag::ERASE));

    let forced_crop = AugmentConfig {
        crop_scale_range: [cfg.crop_scale_range[0], cfg.crop_scale_range[0]],
        ..cfg.clone()
    };
    let cropped = random_crop_upscale(&base, &mut stream(rng::tag::CROP), &forced_crop);
    let distorted = random_distortion(&base, &mut stream(rng::tag::DISTORT), cfg);

    let j = &cfg.jitter;
    let one = |brightness, contrast, saturation| JitterFactors {
        brightness,
        contrast,
        saturation,
        hue_degrees: 0.0,
    };
    let bright = apply_jitter(&base, one(1.0 + j.brightness, 1.0, 1.0));
    let contrast = apply_jitter(&base, one(1.0, 1.0 + j.contrast, 1.0));
    let saturation = apply_jitter(&base, one(1.0, 1.0, 1.0 + j.saturation));
    let flipped = flip_horizontal(&base);

    Ok(vec![
        ("original", base),
        ("erase", erased),
        ("crop", cropped),
        ("distortion", distorted),
        ("brightness", bright),
        ("contrast", contrast),
        ("saturation", saturation),
        ("flip", flipped),
    ])
}

/// Tile equally sized images into a grid with a 2-pixel white gutter.
pub fn tile_grid(images: &[Image], cols: usize) -> Result<Image> {
    let first = images.first().ok_or(Error::EmptyImage)?;
    let (h, w) = first.dims();
    let cols = cols.max(1);
    let rows = images.len().div_ceil(cols);
    let gutter = 2;
    let gh = rows * h + (rows + 1) * gutter;
    let gw = cols * w + (cols + 1) * gutter;
    let mut out = Image::filled(gh, gw, [1.0; 3]);
    for (k, img) in images.iter().enumerate() {
        if img.dims() != (h, w) {
            return Err(Error::dims("grid tiles must share dimensions"));
        }
        let oy = gutter + (k / cols) * (h + gutter);
        let ox = gutter + (k % cols) * (w + gutter);
        for y in 0..h {
            for x in 0..w {
                out.set_pixel(oy + y, ox + x, img.pixel(y, x));
            }
        }
    }
    Ok(out)
}
