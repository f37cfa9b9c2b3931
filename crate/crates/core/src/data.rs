//! Synthetic exposure brackets with controllable foreground motion,
//! dataset directory I/O, and crop/flip/rotate augmentation.
//!
//! Dataset layout: one subdirectory per sample holding `ldr_1.png`,
//! `ldr_2.png`, `ldr_3.png` (16-bit PNG, short to long exposure),
//! `exposures.txt` (three EV biases, one per line, strictly increasing)
//! and `gt.f32` (magic `FHDR`, version, channel/height/width u32 LE, then
//! little-endian f32 samples in channel-major order).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hdr::{exposure_times_from_biases, BracketSample, REFERENCE_FRAME};
use crate::tensor::{Shape, Tensor};

/// Quantization levels of stored LDR frames (16-bit).
pub const LDR_LEVELS: f64 = 65535.0;

const HDR_MAGIC: &[u8; 4] = b"FHDR";
const HDR_VERSION: u32 = 1;

/// Foreground primitive painted over the background.
#[derive(Clone, Debug, PartialEq)]
pub enum ShapeKind {
    Circle,
    Rect,
}

/// One foreground object with its per-frame motion.
#[derive(Clone, Debug)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Centre (y, x) in pixels at the reference frame.
    pub center: (f64, f64),
    /// Radius (circles) or half extents (rects), in pixels.
    pub size: (f64, f64),
    /// Per-channel linear radiance painted inside the shape.
    pub radiance: Vec<f64>,
    /// Per-frame displacement (dy, dx); zero for the reference frame.
    pub displacement: [(f64, f64); 3],
}

/// Smooth per-channel affine background gradient.
#[derive(Clone, Debug)]
pub struct BackgroundSpec {
    pub base: Vec<f64>,
    pub slope_y: Vec<f64>,
    pub slope_x: Vec<f64>,
    /// Radiance floor keeping the background strictly positive.
    pub floor: f64,
}

/// Deterministic description of one synthetic scene.
#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub background: BackgroundSpec,
    pub shapes: Vec<ShapeSpec>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Config(format!(
                "degenerate canvas {}x{}x{}",
                self.channels, self.height, self.width
            )));
        }
        for (i, s) in self.shapes.iter().enumerate() {
            if s.radiance.len() != self.channels {
                return Err(Error::Config(format!(
                    "shape {i} has {} radiance channels, scene has {}",
                    s.radiance.len(),
                    self.channels
                )));
            }
            if s.radiance.iter().any(|&r| r < 0.0) {
                return Err(Error::Config(format!("shape {i} has negative radiance")));
            }
            if s.displacement[REFERENCE_FRAME] != (0.0, 0.0) {
                return Err(Error::Config(format!(
                    "shape {i} displaces the reference frame"
                )));
            }
        }
        Ok(())
    }

    /// Randomized scene: smooth background, a handful of moving shapes, one
    /// very bright core (saturating even the short exposure) and one dark
    /// hole (underflowing even the long one).
    pub fn random(seed: u64, height: usize, width: usize, channels: usize) -> Self {
        Self::random_with_motion(seed, height, width, channels, 6.0)
    }

    pub fn random_with_motion(
        seed: u64,
        height: usize,
        width: usize,
        channels: usize,
        max_displacement: f64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chan = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> Vec<f64> {
            (0..channels).map(|_| rng.gen_range(lo..hi)).collect()
        };
        let background = BackgroundSpec {
            base: chan(&mut rng, 0.02, 0.08),
            slope_y: chan(&mut rng, -0.04, 0.15),
            slope_x: chan(&mut rng, -0.04, 0.15),
            floor: 1e-4,
        };

        let displaced = |rng: &mut ChaCha8Rng| {
            let mut displacement = [(0.0, 0.0); 3];
            for (f, d) in displacement.iter_mut().enumerate() {
                if f != REFERENCE_FRAME {
                    *d = (
                        rng.gen_range(-max_displacement..=max_displacement),
                        rng.gen_range(-max_displacement..=max_displacement),
                    );
                }
            }
            displacement
        };

        // Painter order: mid-radiance movers, then the dark hole, then the
        // bright core on top so neither marker can be buried.
        let (h, w) = (height as f64, width as f64);
        let mut shapes = Vec::new();
        for _ in 0..4 {
            let kind = if rng.gen_bool(0.5) {
                ShapeKind::Circle
            } else {
                ShapeKind::Rect
            };
            let center = (rng.gen_range(0.1..0.9) * h, rng.gen_range(0.1..0.9) * w);
            let size = (
                rng.gen_range(0.06..0.22) * h,
                rng.gen_range(0.06..0.22) * w,
            );
            let scale = 10f64.powf(rng.gen_range(-1.3..0.5));
            let radiance = chan(&mut rng, 0.6, 1.4)
                .iter()
                .map(|v| v * scale)
                .collect();
            let displacement = displaced(&mut rng);
            shapes.push(ShapeSpec {
                kind,
                center,
                size,
                radiance,
                displacement,
            });
        }
        // Dark hole in the lower-right quadrant: radiance exactly zero, so
        // even the long exposure quantizes to black there.
        shapes.push(ShapeSpec {
            kind: ShapeKind::Circle,
            center: (rng.gen_range(0.6..0.85) * h, rng.gen_range(0.6..0.85) * w),
            size: (
                rng.gen_range(0.08..0.15) * h,
                rng.gen_range(0.08..0.15) * w,
            ),
            radiance: vec![0.0; channels],
            displacement: displaced(&mut rng),
        });
        // Bright core in the upper-left quadrant. Kept under ~0.5% of the
        // canvas so the 99th-percentile normalization cannot absorb it, and
        // radiant enough to clip even the short exposure afterwards.
        let core_r = rng.gen_range(0.02..0.04) * h.min(w);
        shapes.push(ShapeSpec {
            kind: ShapeKind::Circle,
            center: (rng.gen_range(0.15..0.35) * h, rng.gen_range(0.15..0.35) * w),
            size: (core_r, core_r),
            radiance: chan(&mut rng, 80.0, 150.0),
            displacement: displaced(&mut rng),
        });

        SceneSpec {
            seed,
            height,
            width,
            channels,
            background,
            shapes,
        }
    }
}

/// Composes the scene radiance with every shape displaced for `frame`.
pub fn compose_scene(spec: &SceneSpec, frame: usize) -> Result<Tensor> {
    spec.validate()?;
    let shape = Shape::new(1, spec.channels, spec.height, spec.width);
    let bg = &spec.background;
    Ok(Tensor::from_fn(shape, |_, c, y, x| {
        let fy = y as f64 / spec.height as f64;
        let fx = x as f64 / spec.width as f64;
        let mut v = (bg.base[c] + bg.slope_y[c] * fy + bg.slope_x[c] * fx).max(bg.floor);
        for s in &spec.shapes {
            let (dy, dx) = s.displacement[frame];
            let cy = s.center.0 + dy;
            let cx = s.center.1 + dx;
            let inside = match s.kind {
                ShapeKind::Circle => {
                    let ny = (y as f64 - cy) / s.size.0;
                    let nx = (x as f64 - cx) / s.size.1;
                    ny * ny + nx * nx <= 1.0
                }
                ShapeKind::Rect => {
                    (y as f64 - cy).abs() <= s.size.0 && (x as f64 - cx).abs() <= s.size.1
                }
            };
            if inside {
                v = s.radiance[c];
            }
        }
        v
    }))
}

/// Reference-frame radiance of the scene (all displacements zero).
pub fn synth_scene(spec: &SceneSpec) -> Result<Tensor> {
    compose_scene(spec, REFERENCE_FRAME)
}

fn percentile99(data: &[f64]) -> f64 {
    let mut sorted: Vec<f64> = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((sorted.len() - 1) as f64 * 0.99).round() as usize;
    sorted[idx]
}

/// Quantizes to the stored LDR grid.
fn quantize_ldr(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * LDR_LEVELS).round() / LDR_LEVELS
}

/// Renders the three exposures of a scene. Each frame re-composes the
/// scene with its own shape displacements, exposes with `t = 2^bias`,
/// gamma-encodes, clamps and quantizes. The ground truth is the
/// zero-displacement radiance normalized so the reference exposure maps
/// its 99th percentile to one (frames are rendered in the same normalized
/// units, which keeps the bracket exposure-consistent).
pub fn render_bracket(spec: &SceneSpec, biases: [f64; 3], gamma: f64) -> Result<BracketSample> {
    if gamma <= 0.0 {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    if !(biases[0] < biases[1] && biases[1] < biases[2]) {
        return Err(Error::Config(format!(
            "EV biases must be strictly increasing, got {biases:?}"
        )));
    }
    let times = exposure_times_from_biases(biases);
    let reference = synth_scene(spec)?;
    let t_ref = times[REFERENCE_FRAME];
    let exposed: Vec<f64> = reference.data().iter().map(|&h| h * t_ref).collect();
    let q99 = percentile99(&exposed).max(1e-12);
    let norm = 1.0 / q99;

    let mut ldr = Vec::with_capacity(3);
    for (frame, &t) in times.iter().enumerate() {
        let radiance = if frame == REFERENCE_FRAME {
            reference.clone()
        } else {
            compose_scene(spec, frame)?
        };
        ldr.push(radiance.map(|h| quantize_ldr((h * norm * t).powf(1.0 / gamma))));
    }

    // Store the ground truth on the f32 grid so file round trips are exact.
    let gt = reference.map(|h| (h * norm) as f32 as f64);
    let sample = BracketSample {
        ldr: [ldr[0].clone(), ldr[1].clone(), ldr[2].clone()],
        exposure_times: times,
        gt_hdr: Some(gt),
    };
    sample.validate()?;
    Ok(sample)
}

/// Pixel counts documenting that the bracket really brackets: how much of
/// the short frame is saturated and how much of the long frame underflows.
pub struct BracketStats {
    pub saturated_short: usize,
    pub underflow_long: usize,
}

pub fn bracket_stats(sample: &BracketSample) -> BracketStats {
    BracketStats {
        saturated_short: sample.ldr[0].data().iter().filter(|&&v| v >= 1.0).count(),
        underflow_long: sample.ldr[2].data().iter().filter(|&&v| v <= 0.0).count(),
    }
}

// ---------------------------------------------------------------------------
// Dataset directory I/O
// ---------------------------------------------------------------------------

fn ldr_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("ldr_{}.png", i + 1))
}

fn tensor_to_png(t: &Tensor, path: &Path) -> Result<()> {
    let s = t.shape();
    let (h, w) = (s.height as u32, s.width as u32);
    let to_u16 = |v: f64| (v.clamp(0.0, 1.0) * LDR_LEVELS).round() as u16;
    let ok = match s.channels {
        1 => {
            let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w, h);
            for (x, y, px) in buf.enumerate_pixels_mut() {
                *px = image::Luma([to_u16(t.at(0, 0, y as usize, x as usize))]);
            }
            image::DynamicImage::ImageLuma16(buf).save(path)
        }
        3 => {
            let mut buf = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(w, h);
            for (x, y, px) in buf.enumerate_pixels_mut() {
                *px = image::Rgb([
                    to_u16(t.at(0, 0, y as usize, x as usize)),
                    to_u16(t.at(0, 1, y as usize, x as usize)),
                    to_u16(t.at(0, 2, y as usize, x as usize)),
                ]);
            }
            image::DynamicImage::ImageRgb16(buf).save(path)
        }
        other => {
            return Err(Error::Config(format!(
                "LDR images must have 1 or 3 channels, got {other}"
            )))
        }
    };
    ok.map_err(|e| Error::parse(path, format!("png encode failed: {e}")))
}

fn png_to_tensor(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::parse(path, format!("png decode failed: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma16(buf) => Ok(Tensor::from_fn(
            Shape::new(1, 1, h, w),
            |_, _, y, x| buf.get_pixel(x as u32, y as u32).0[0] as f64 / LDR_LEVELS,
        )),
        image::DynamicImage::ImageRgb16(buf) => Ok(Tensor::from_fn(
            Shape::new(1, 3, h, w),
            |_, c, y, x| buf.get_pixel(x as u32, y as u32).0[c] as f64 / LDR_LEVELS,
        )),
        other => {
            let buf = other.into_rgb16();
            Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
                buf.get_pixel(x as u32, y as u32).0[c] as f64 / LDR_LEVELS
            }))
        }
    }
}

/// Writes the float raster format described in the module docs.
pub fn save_hdr(t: &Tensor, path: &Path) -> Result<()> {
    let s = t.shape();
    let mut bytes = Vec::with_capacity(20 + 4 * s.numel());
    bytes.extend_from_slice(HDR_MAGIC);
    bytes.extend_from_slice(&HDR_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(s.channels as u32).to_le_bytes());
    bytes.extend_from_slice(&(s.height as u32).to_le_bytes());
    bytes.extend_from_slice(&(s.width as u32).to_le_bytes());
    for &v in t.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn load_hdr(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[0..4] != HDR_MAGIC {
        return Err(Error::parse(path, "not an FHDR float raster"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != HDR_VERSION {
        return Err(Error::parse(path, format!("unsupported version {version}")));
    }
    let (c, h, w) = (word(8) as usize, word(12) as usize, word(16) as usize);
    let numel = c * h * w;
    if bytes.len() != 20 + 4 * numel {
        return Err(Error::parse(
            path,
            format!("expected {} data bytes, found {}", 4 * numel, bytes.len() - 20),
        ));
    }
    let data: Vec<f64> = bytes[20..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(Shape::new(1, c, h, w), data)
}

/// Writes via a temp file and rename so aborts never leave partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_sample(sample: &BracketSample, dir: &Path) -> Result<()> {
    sample.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, ldr) in sample.ldr.iter().enumerate() {
        tensor_to_png(ldr, &ldr_path(dir, i))?;
    }
    let biases: Vec<String> = sample
        .exposure_times
        .iter()
        .map(|t| format!("{}", t.log2()))
        .collect();
    let path = dir.join("exposures.txt");
    write_atomic(&path, format!("{}\n", biases.join("\n")).as_bytes())?;
    if let Some(gt) = &sample.gt_hdr {
        save_hdr(gt, &dir.join("gt.f32"))?;
    }
    Ok(())
}

fn parse_exposures(path: &Path) -> Result<[f64; 3]> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != 3 {
        return Err(Error::parse(
            path,
            format!("expected exactly 3 EV biases, found {} lines", lines.len()),
        ));
    }
    let mut biases = [0.0; 3];
    for (i, line) in lines.iter().enumerate() {
        biases[i] = line
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1)))?;
    }
    if !(biases[0] < biases[1] && biases[1] < biases[2]) {
        return Err(Error::parse(
            path,
            format!("EV biases must be strictly increasing, got {biases:?}"),
        ));
    }
    Ok(biases)
}

pub fn load_sample(dir: &Path) -> Result<BracketSample> {
    let biases = parse_exposures(&dir.join("exposures.txt"))?;
    let mut ldr = Vec::with_capacity(3);
    for i in 0..3 {
        ldr.push(png_to_tensor(&ldr_path(dir, i))?);
    }
    let shape = ldr[0].shape();
    for (i, t) in ldr.iter().enumerate() {
        if t.shape() != shape {
            return Err(Error::Shape(format!(
                "{}: LDR frame {} has shape {} but frame 1 has {shape}",
                dir.display(),
                i + 1,
                t.shape()
            )));
        }
    }
    let gt_path = dir.join("gt.f32");
    let gt_hdr = if gt_path.exists() {
        let gt = load_hdr(&gt_path)?;
        if gt.shape() != shape {
            return Err(Error::Shape(format!(
                "{}: ground truth shape {} does not match LDR shape {shape}",
                dir.display(),
                gt.shape()
            )));
        }
        Some(gt)
    } else {
        None
    };
    let sample = BracketSample {
        ldr: [ldr[0].clone(), ldr[1].clone(), ldr[2].clone()],
        exposure_times: exposure_times_from_biases(biases),
        gt_hdr,
    };
    sample.validate()?;
    Ok(sample)
}

/// Sample subdirectories of a dataset root in deterministic (sorted) order.
pub fn list_samples(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() && path.join("exposures.txt").exists() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn load_dataset(root: &Path) -> Result<Vec<(String, BracketSample)>> {
    let dirs = list_samples(root)?;
    if dirs.is_empty() {
        return Err(Error::Config(format!(
            "no samples found under {}",
            root.display()
        )));
    }
    let mut out = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push((name, load_sample(&dir)?));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// One rigid augmentation: crop window, then optional horizontal flip,
/// then a quarter-turn rotation count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub off_y: usize,
    pub off_x: usize,
    pub hflip: bool,
    /// Clockwise quarter turns in `0..4`.
    pub rot: u8,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        off_y: 0,
        off_x: 0,
        hflip: false,
        rot: 0,
    };

    pub fn sample(rng: &mut ChaCha8Rng, h: usize, w: usize, crop: usize) -> Self {
        Augmentation {
            off_y: rng.gen_range(0..=h - crop),
            off_x: rng.gen_range(0..=w - crop),
            hflip: rng.gen_bool(0.5),
            rot: rng.gen_range(0..4u8),
        }
    }
}

pub fn flip_h(t: &Tensor) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(s, |b, c, y, x| t.at(b, c, y, s.width - 1 - x))
}

pub fn flip_v(t: &Tensor) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(s, |b, c, y, x| t.at(b, c, s.height - 1 - y, x))
}

/// Clockwise rotation by `k` quarter turns (square inputs only for k odd).
pub fn rot90(t: &Tensor, k: u8) -> Tensor {
    let s = t.shape();
    match k % 4 {
        0 => t.clone(),
        1 => Tensor::from_fn(Shape::new(s.batch, s.channels, s.width, s.height), |b, c, y, x| {
            t.at(b, c, s.height - 1 - x, y)
        }),
        2 => Tensor::from_fn(s, |b, c, y, x| t.at(b, c, s.height - 1 - y, s.width - 1 - x)),
        _ => Tensor::from_fn(Shape::new(s.batch, s.channels, s.width, s.height), |b, c, y, x| {
            t.at(b, c, x, s.width - 1 - y)
        }),
    }
}

/// Applies crop + flip + rotation to one image.
pub fn apply_augmentation(t: &Tensor, aug: &Augmentation, crop: usize) -> Tensor {
    let s = t.shape();
    let cropped = Tensor::from_fn(Shape::new(s.batch, s.channels, crop, crop), |b, c, y, x| {
        t.at(b, c, y + aug.off_y, x + aug.off_x)
    });
    let flipped = if aug.hflip { flip_h(&cropped) } else { cropped };
    rot90(&flipped, aug.rot)
}

/// Applies one jointly sampled rigid transform to all three LDR frames and
/// the ground truth. Deterministic given the seed.
pub fn crop_augment(sample: &BracketSample, crop: usize, seed: u64) -> Result<BracketSample> {
    let s = sample.ldr[0].shape();
    if crop == 0 || crop % 8 != 0 {
        return Err(Error::Geometry(format!(
            "crop must be a positive multiple of 8, got {crop}"
        )));
    }
    if crop > s.height || crop > s.width {
        return Err(Error::Geometry(format!(
            "crop {crop} exceeds image extents {}x{}",
            s.height, s.width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aug = Augmentation::sample(&mut rng, s.height, s.width, crop);
    Ok(apply_to_sample(sample, &aug, crop))
}

/// Applies a fixed augmentation to every image of the sample.
pub fn apply_to_sample(sample: &BracketSample, aug: &Augmentation, crop: usize) -> BracketSample {
    BracketSample {
        ldr: [
            apply_augmentation(&sample.ldr[0], aug, crop),
            apply_augmentation(&sample.ldr[1], aug, crop),
            apply_augmentation(&sample.ldr[2], aug, crop),
        ],
        exposure_times: sample.exposure_times,
        gt_hdr: sample
            .gt_hdr
            .as_ref()
            .map(|gt| apply_augmentation(gt, aug, crop)),
    }
}

// ---------------------------------------------------------------------------
// Padding helpers shared by evaluation and inference
// ---------------------------------------------------------------------------

/// Pads spatial extents up to the next multiple of `m` by edge replication.
pub fn pad_to_multiple(t: &Tensor, m: usize) -> Tensor {
    let s = t.shape();
    let ph = s.height.div_ceil(m) * m;
    let pw = s.width.div_ceil(m) * m;
    if ph == s.height && pw == s.width {
        return t.clone();
    }
    Tensor::from_fn(Shape::new(s.batch, s.channels, ph, pw), |b, c, y, x| {
        t.at(b, c, y.min(s.height - 1), x.min(s.width - 1))
    })
}

/// Crops back to the original top-left window.
pub fn crop_to(t: &Tensor, height: usize, width: usize) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(Shape::new(s.batch, s.channels, height, width), |b, c, y, x| {
        t.at(b, c, y, x)
    })
}
