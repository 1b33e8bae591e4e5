//! Synthetic multi-species dataset generation plus on-disk ingestion,
//! augmentation and split management. Bona-fide videos are a smooth
//! low-frequency pattern with mild pixel noise; each attack species applies
//! its own localized perturbation on top of the same process. Every
//! video's randomness derives from the dataset seed and the video's own
//! identity, so bona-fide content never depends on the species roster.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::density::Frame;
use crate::error::{Error, Result};
use crate::rng;

/// Rectangular pixel region; the config surface for species masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.y && i < self.y + self.height && j >= self.x && j < self.x + self.width
    }

    fn validate(&self, frame_h: usize, frame_w: usize) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("species region must be non-empty"));
        }
        if self.y + self.height > frame_h || self.x + self.width > frame_w {
            return Err(Error::invalid(format!(
                "region {}x{}+{}+{} exceeds frame bounds {}x{}",
                self.width, self.height, self.x, self.y, frame_w, frame_h
            )));
        }
        Ok(())
    }
}

/// How a species perturbs the bona-fide process inside its region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    /// Blur toward the local average: overly smooth texture.
    Smoothing,
    /// Extra independent pixel noise: corrupted texture.
    NoiseInjection,
    /// Replace with a high-frequency stripe texture.
    TextureSwap,
}

/// One attack species: where it acts, how, and how strongly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeciesSpec {
    pub name: String,
    pub region: Region,
    pub kind: PerturbationKind,
    /// Blend factor / noise scale; 0 leaves frames untouched.
    pub strength: f64,
    /// Advisory difficulty knob recorded in the manifest (lower strength
    /// usually means harder to detect).
    pub difficulty: f64,
    pub count: usize,
}

/// Generation parameters for a synthetic dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub bf_count: usize,
    pub species: Vec<SpeciesSpec>,
    pub seed: u64,
}

impl SynthConfig {
    /// Desk-scale default: 16x16 frames, 8 per video, 40 bona-fide videos
    /// and five strongly separable species of 20 videos each.
    pub fn default_desk() -> Self {
        SynthConfig {
            height: 16,
            width: 16,
            frames: 8,
            bf_count: 40,
            species: default_species(16, 16, false),
            seed: 1,
        }
    }

    /// Same roster but the last species is deliberately weak, for the
    /// worst-case emphasis and few-shot scenarios.
    pub fn default_desk_with_hard_species() -> Self {
        SynthConfig {
            species: default_species(16, 16, true),
            ..Self::default_desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 {
            return Err(Error::invalid("frames must be at least 4x4"));
        }
        if self.frames == 0 {
            return Err(Error::invalid("videos need at least one frame"));
        }
        if self.bf_count == 0 {
            return Err(Error::invalid("bona-fide count must be at least 1"));
        }
        let mut names = BTreeSet::new();
        for s in &self.species {
            if s.count == 0 {
                return Err(Error::invalid(format!("species '{}' has zero videos", s.name)));
            }
            if !(s.strength >= 0.0) {
                return Err(Error::invalid("species strength must be >= 0"));
            }
            if !names.insert(s.name.clone()) {
                return Err(Error::invalid(format!("duplicate species name '{}'", s.name)));
            }
            s.region.validate(self.height, self.width)?;
        }
        Ok(())
    }
}

/// The default five-species roster; regions tile different parts of the
/// frame so each species has a recognizable signature.
pub fn default_species(h: usize, w: usize, hard_last: bool) -> Vec<SpeciesSpec> {
    let half_w = w / 2;
    let half_h = h / 2;
    let quarter = (h / 4).max(2);
    let mut species = vec![
        SpeciesSpec {
            name: "print".into(),
            region: Region { x: 2, y: 2, width: w - 4, height: half_h },
            kind: PerturbationKind::Smoothing,
            strength: 1.0,
            difficulty: 0.2,
            count: 20,
        },
        SpeciesSpec {
            name: "replay".into(),
            region: Region { x: half_w, y: 0, width: w - half_w, height: h },
            kind: PerturbationKind::TextureSwap,
            strength: 1.0,
            difficulty: 0.2,
            count: 20,
        },
        SpeciesSpec {
            name: "mask".into(),
            region: Region { x: 0, y: 0, width: w, height: half_h },
            kind: PerturbationKind::NoiseInjection,
            strength: 1.2,
            difficulty: 0.3,
            count: 20,
        },
        SpeciesSpec {
            name: "makeup".into(),
            region: Region { x: 1, y: half_h, width: half_w, height: h - half_h - 1 },
            kind: PerturbationKind::Smoothing,
            strength: 0.8,
            difficulty: 0.4,
            count: 20,
        },
        SpeciesSpec {
            name: "partial".into(),
            region: Region { x: half_w, y: half_h, width: quarter, height: quarter },
            kind: PerturbationKind::NoiseInjection,
            strength: 0.9,
            difficulty: 0.5,
            count: 20,
        },
    ];
    if hard_last {
        let last = species.last_mut().unwrap();
        last.strength = 0.35;
        last.difficulty = 0.9;
    }
    species
}

/// One video entry in the dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    /// None for bona fide.
    pub species: Option<String>,
    /// "train" | "dev" | "test" for bona fide; "attack" for attack videos
    /// (protocols assign attack roles at run time).
    pub split: String,
    pub path: String,
}

/// Dataset manifest: generation parameters plus one record per video.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub seed: u64,
    pub videos: Vec<VideoRecord>,
}

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

fn bilinear_base(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
    // coarse 4x4 control grid per channel, upsampled smoothly
    const C: usize = 4;
    let mut coarse = [[[0.0f64; C]; C]; 3];
    for ch in coarse.iter_mut() {
        for row in ch.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(60.0..190.0);
            }
        }
    }
    let mut base = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            let fy = i as f64 / (h - 1).max(1) as f64 * (C - 1) as f64;
            let fx = j as f64 / (w - 1).max(1) as f64 * (C - 1) as f64;
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(C - 1), (x0 + 1).min(C - 1));
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            for c in 0..3 {
                let g = &coarse[c];
                let top = g[y0][x0] * (1.0 - tx) + g[y0][x1] * tx;
                let bottom = g[y1][x0] * (1.0 - tx) + g[y1][x1] * tx;
                base[(i, j, c)] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    base
}

const BF_NOISE_SIGMA: f64 = 4.0;

fn bf_video(h: usize, w: usize, t: usize, rng: &mut ChaCha8Rng) -> Vec<Frame> {
    let base = bilinear_base(h, w, rng);
    let noise = Normal::new(0.0, BF_NOISE_SIGMA).unwrap();
    (0..t)
        .map(|_| {
            let mut pixels = Array3::zeros((h, w, 3));
            for i in 0..h {
                for j in 0..w {
                    for c in 0..3 {
                        let v = base[(i, j, c)] + noise.sample(rng);
                        pixels[(i, j, c)] = v.clamp(0.0, 255.0) as u8;
                    }
                }
            }
            Frame { pixels }
        })
        .collect()
}

fn apply_perturbation(frame: &mut Frame, spec: &SpeciesSpec, rng: &mut ChaCha8Rng) {
    let (h, w, _) = frame.pixels.dim();
    let alpha = spec.strength.min(1.0);
    match spec.kind {
        PerturbationKind::Smoothing => {
            let original = frame.pixels.mapv(f64::from);
            for i in 0..h {
                for j in 0..w {
                    if !spec.region.contains(i, j) {
                        continue;
                    }
                    for c in 0..3 {
                        // 3x3 box average, clamped at the borders
                        let mut acc = 0.0;
                        let mut count = 0.0;
                        for di in -1i64..=1 {
                            for dj in -1i64..=1 {
                                let si = i as i64 + di;
                                let sj = j as i64 + dj;
                                if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                                    acc += original[(si as usize, sj as usize, c)];
                                    count += 1.0;
                                }
                            }
                        }
                        let blurred = acc / count;
                        let v = (1.0 - alpha) * original[(i, j, c)] + alpha * blurred;
                        frame.pixels[(i, j, c)] = v.clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
        PerturbationKind::NoiseInjection => {
            let sigma = spec.strength * 25.0;
            if sigma <= 0.0 {
                return;
            }
            let noise = Normal::new(0.0, sigma).unwrap();
            for i in 0..h {
                for j in 0..w {
                    if !spec.region.contains(i, j) {
                        continue;
                    }
                    for c in 0..3 {
                        let v = f64::from(frame.pixels[(i, j, c)]) + noise.sample(rng);
                        frame.pixels[(i, j, c)] = v.clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
        PerturbationKind::TextureSwap => {
            for i in 0..h {
                for j in 0..w {
                    if !spec.region.contains(i, j) {
                        continue;
                    }
                    let stripe = if i % 2 == 0 { 1.0 } else { -1.0 };
                    for c in 0..3 {
                        let texture = 128.0 + stripe * 45.0;
                        let v = (1.0 - alpha) * f64::from(frame.pixels[(i, j, c)]) + alpha * texture;
                        frame.pixels[(i, j, c)] = v.clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
    }
}

fn attack_video(config: &SynthConfig, spec: &SpeciesSpec, rng: &mut ChaCha8Rng) -> Vec<Frame> {
    let mut frames = bf_video(config.height, config.width, config.frames, rng);
    for frame in frames.iter_mut() {
        apply_perturbation(frame, spec, rng);
    }
    frames
}

fn write_video(dir: &Path, frames: &[Frame]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, frame) in frames.iter().enumerate() {
        let (h, w, _) = frame.pixels.dim();
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for i in 0..h {
            for j in 0..w {
                img.put_pixel(
                    j as u32,
                    i as u32,
                    image::Rgb([
                        frame.pixels[(i, j, 0)],
                        frame.pixels[(i, j, 1)],
                        frame.pixels[(i, j, 2)],
                    ]),
                );
            }
        }
        let path = dir.join(format!("frame_{t}.png"));
        img.save(&path)
            .map_err(|e| Error::format(&path, e.to_string()))?;
    }
    Ok(())
}

/// Deterministic bona-fide split assignment: roughly 80/10/10 by a seeded
/// shuffle that depends only on the seed and the bona-fide count.
fn bf_splits(bf_count: usize, seed: u64) -> Vec<&'static str> {
    let mut rng = rng::stream(seed, "bf-split");
    let mut order: Vec<usize> = (0..bf_count).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let dev = (bf_count / 10).max(1);
    let test = (bf_count / 10).max(1);
    let train = bf_count.saturating_sub(dev + test).max(1);
    let mut splits = vec!["train"; bf_count];
    for (rank, &vid) in order.iter().enumerate() {
        splits[vid] = if rank < train {
            "train"
        } else if rank < train + dev {
            "dev"
        } else {
            "test"
        };
    }
    splits
}

/// Generate a dataset on disk: `manifest.json` plus `videos/<id>/frame_<t>.png`.
pub fn generate(config: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let videos_dir = out_dir.join("videos");

    let mut records = Vec::new();
    let splits = bf_splits(config.bf_count, config.seed);
    for i in 0..config.bf_count {
        let id = format!("bf_{i:03}");
        let mut vid_rng = rng::stream(config.seed, &format!("bf-video-{i}"));
        let frames = bf_video(config.height, config.width, config.frames, &mut vid_rng);
        write_video(&videos_dir.join(&id), &frames)?;
        records.push(VideoRecord {
            id: id.clone(),
            species: None,
            split: splits[i].to_string(),
            path: format!("videos/{id}"),
        });
    }
    for spec in &config.species {
        for i in 0..spec.count {
            let id = format!("{}_{i:03}", spec.name);
            let mut vid_rng = rng::stream(config.seed, &format!("species-{}-{i}", spec.name));
            let frames = attack_video(config, spec, &mut vid_rng);
            write_video(&videos_dir.join(&id), &frames)?;
            records.push(VideoRecord {
                id: id.clone(),
                species: Some(spec.name.clone()),
                split: "attack".to_string(),
                path: format!("videos/{id}"),
            });
        }
    }

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        height: config.height,
        width: config.width,
        frames: config.frames,
        seed: config.seed,
        videos: records,
    };
    let manifest_path = out_dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

/// Handle over an on-disk dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

impl Dataset {
    pub fn species_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .manifest
            .videos
            .iter()
            .filter_map(|v| v.species.clone())
            .collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn bf_ids(&self, split: &str) -> Vec<String> {
        self.manifest
            .videos
            .iter()
            .filter(|v| v.species.is_none() && v.split == split)
            .map(|v| v.id.clone())
            .collect()
    }

    pub fn attack_ids(&self, species: &str) -> Vec<String> {
        self.manifest
            .videos
            .iter()
            .filter(|v| v.species.as_deref() == Some(species))
            .map(|v| v.id.clone())
            .collect()
    }

    pub fn record(&self, id: &str) -> Result<&VideoRecord> {
        self.manifest
            .videos
            .iter()
            .find(|v| v.id == id)
            .ok_or_else(|| Error::invalid(format!("unknown video id '{id}'")))
    }

    /// Read all frames of one video.
    pub fn load_video(&self, id: &str) -> Result<Vec<Frame>> {
        let record = self.record(id)?;
        let dir = self.root.join(&record.path);
        let mut frames = Vec::with_capacity(self.manifest.frames);
        for t in 0..self.manifest.frames {
            let path = dir.join(format!("frame_{t}.png"));
            let img = image::open(&path)
                .map_err(|e| Error::format(&path, e.to_string()))?
                .to_rgb8();
            let (w, h) = img.dimensions();
            let mut pixels = Array3::zeros((h as usize, w as usize, 3));
            for (x, y, px) in img.enumerate_pixels() {
                for c in 0..3 {
                    pixels[(y as usize, x as usize, c)] = px.0[c];
                }
            }
            frames.push(Frame { pixels });
        }
        Ok(frames)
    }
}

/// Open a dataset directory, validating the manifest invariants and that
/// every referenced video directory exists.
pub fn load(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::format(
            &manifest_path,
            format!("unsupported manifest version {}", manifest.version),
        ));
    }
    let mut seen = BTreeSet::new();
    for v in &manifest.videos {
        if !seen.insert(v.id.clone()) {
            return Err(Error::format(
                &manifest_path,
                format!("duplicate video id '{}'", v.id),
            ));
        }
        let video_dir = dir.join(&v.path);
        let first_frame = video_dir.join("frame_0.png");
        if !first_frame.exists() {
            return Err(Error::format(
                &first_frame,
                "referenced video frame does not exist",
            ));
        }
    }
    Ok(Dataset {
        manifest,
        root: dir.to_path_buf(),
    })
}

/// Mirror frames left-right.
pub fn horizontal_flip(frame: &Frame) -> Frame {
    let (h, w, _) = frame.pixels.dim();
    let mut pixels = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                pixels[(i, j, c)] = frame.pixels[(i, w - 1 - j, c)];
            }
        }
    }
    Frame { pixels }
}

/// One augmented view of a training video: a random contiguous temporal
/// segment (at least half the video) with an optional horizontal flip.
/// Test videos pass through whole and unflipped.
pub fn augment(frames: &[Frame], rng: &mut ChaCha8Rng) -> Result<Vec<Frame>> {
    if frames.is_empty() {
        return Err(Error::invalid("cannot augment an empty video"));
    }
    let t = frames.len();
    let min_len = (t / 2).max(1);
    let len = rng.gen_range(min_len..=t);
    let start = rng.gen_range(0..=t - len);
    let flip = rng.gen::<bool>();
    let segment = &frames[start..start + len];
    Ok(if flip {
        segment.iter().map(horizontal_flip).collect()
    } else {
        segment.to_vec()
    })
}

#[cfg(test)]
mod tests;
