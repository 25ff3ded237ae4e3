//! CIFAR-10/100 binary records, normalization and augmentation.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ImageSet;
use crate::error::{Error, Result};

pub const SIDE: usize = 32;
pub const PIXELS: usize = 3 * SIDE * SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "cifar10" => Ok(Self::Cifar10),
            "cifar100" => Ok(Self::Cifar100),
            other => Err(Error::Input(format!(
                "unknown dataset `{other}` (expected cifar10 or cifar100)"
            ))),
        }
    }

    pub fn label_bytes(self) -> usize {
        match self {
            Self::Cifar10 => 1,
            Self::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + PIXELS
    }

    /// Classes of the (fine) label.
    pub fn num_classes(self) -> usize {
        match self {
            Self::Cifar10 => 10,
            Self::Cifar100 => 100,
        }
    }

    fn coarse_classes(self) -> usize {
        20
    }

    /// Split files, relative to the data directory.
    pub fn split_files(self, train: bool) -> Vec<&'static str> {
        match (self, train) {
            (Self::Cifar10, true) => vec![
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            (Self::Cifar10, false) => vec!["test_batch.bin"],
            (Self::Cifar100, true) => vec!["train.bin"],
            (Self::Cifar100, false) => vec!["test.bin"],
        }
    }

    /// Extracted-archive subdirectory name.
    fn archive_dir(self) -> &'static str {
        match self {
            Self::Cifar10 => "cifar-10-batches-bin",
            Self::Cifar100 => "cifar-100-binary",
        }
    }
}

/// One raw record: labels plus channel-planar 8-bit pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    /// CIFAR-100 only.
    pub coarse: Option<u8>,
    pub pixels: Vec<u8>,
}

/// Parses an in-memory file. Errors carry the byte offset of the problem.
pub fn parse_cifar(bytes: &[u8], variant: CifarVariant) -> Result<Vec<CifarRecord>> {
    let rl = variant.record_len();
    if !bytes.len().is_multiple_of(rl) {
        return Err(Error::Format {
            offset: (bytes.len() - bytes.len() % rl) as u64,
            message: format!(
                "file length {} is not a multiple of the {rl}-byte record size",
                bytes.len()
            ),
        });
    }
    bytes
        .chunks_exact(rl)
        .enumerate()
        .map(|(i, rec)| {
            let offset = (i * rl) as u64;
            let check = |value: u8, classes: usize, at: u64| {
                if (value as usize) < classes {
                    Ok(value)
                } else {
                    Err(Error::Format {
                        offset: at,
                        message: format!("label {value} out of range for {classes} classes"),
                    })
                }
            };
            let (coarse, label) = match variant {
                CifarVariant::Cifar10 => (None, check(rec[0], 10, offset)?),
                CifarVariant::Cifar100 => (
                    Some(check(rec[0], variant.coarse_classes(), offset)?),
                    check(rec[1], 100, offset + 1)?,
                ),
            };
            Ok(CifarRecord {
                label,
                coarse,
                pixels: rec[variant.label_bytes()..].to_vec(),
            })
        })
        .collect()
}

/// Serializes records in the binary layout `parse_cifar` reads.
pub fn write_cifar(records: &[CifarRecord], variant: CifarVariant) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(records.len() * variant.record_len());
    for (i, r) in records.iter().enumerate() {
        if r.pixels.len() != PIXELS {
            return Err(Error::Input(format!("record {i} has {} pixel bytes", r.pixels.len())));
        }
        match variant {
            CifarVariant::Cifar10 => out.push(r.label),
            CifarVariant::Cifar100 => {
                out.push(r.coarse.unwrap_or(0));
                out.push(r.label);
            }
        }
        out.extend_from_slice(&r.pixels);
    }
    Ok(out)
}

pub fn read_cifar<P: AsRef<Path>>(paths: &[P], variant: CifarVariant) -> Result<Vec<CifarRecord>> {
    let mut all = Vec::new();
    for p in paths {
        let bytes = std::fs::read(p.as_ref())
            .map_err(|e| Error::Input(format!("cannot read {}: {e}", p.as_ref().display())))?;
        all.extend(parse_cifar(&bytes, variant).map_err(|e| match e {
            Error::Format { offset, message } => Error::Format {
                offset,
                message: format!("{}: {message}", p.as_ref().display()),
            },
            other => other,
        })?);
    }
    Ok(all)
}

/// Locates the split files under `dir` (or its extracted-archive subdirectory).
pub fn split_paths(dir: &Path, variant: CifarVariant, train: bool) -> Result<Vec<PathBuf>> {
    for base in [dir.to_path_buf(), dir.join(variant.archive_dir())] {
        let paths: Vec<PathBuf> = variant.split_files(train).iter().map(|f| base.join(f)).collect();
        if paths.iter().all(|p| p.is_file()) {
            return Ok(paths);
        }
    }
    Err(Error::Input(format!(
        "no {} {} split under {}",
        match variant {
            CifarVariant::Cifar10 => "cifar10",
            CifarVariant::Cifar100 => "cifar100",
        },
        if train { "train" } else { "test" },
        dir.display()
    )))
}

/// Per-channel mean and standard deviation of pixels scaled to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl ChannelStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn compute(records: &[CifarRecord]) -> Self {
        let plane = SIDE * SIDE;
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        for r in records {
            for c in 0..3 {
                for &p in &r.pixels[c * plane..(c + 1) * plane] {
                    let v = p as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let n = (records.len() * plane).max(1) as f64;
        let mut stats = Self::identity();
        for c in 0..3 {
            let m = sum[c] / n;
            stats.mean[c] = m as f32;
            stats.std[c] = ((sq[c] / n - m * m).max(0.0).sqrt() as f32).max(1e-6);
        }
        stats
    }

    pub fn normalize(&self, pixels: &[u8]) -> Vec<f32> {
        let plane = SIDE * SIDE;
        pixels
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let c = i / plane;
                (p as f32 / 255.0 - self.mean[c]) / self.std[c]
            })
            .collect()
    }
}

/// Scales and normalizes records into an image set of (fine) labels.
pub fn to_image_set(records: &[CifarRecord], variant: CifarVariant, stats: &ChannelStats) -> ImageSet {
    let mut data = Vec::with_capacity(records.len() * PIXELS);
    for r in records {
        data.extend(stats.normalize(&r.pixels));
    }
    ImageSet {
        shape: [3, SIDE, SIDE],
        data,
        labels: records.iter().map(|r| r.label as usize).collect(),
        num_classes: variant.num_classes(),
    }
}

/// Crop placement and mirroring applied by `augment`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    /// Top-left corner of the crop inside the 4-pixel zero-padded image, 0..=8.
    pub dy: usize,
    pub dx: usize,
    pub flip: bool,
}

impl AugmentDraw {
    pub const PAD: usize = 4;

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            dy: rng.random_range(0..=2 * Self::PAD),
            dx: rng.random_range(0..=2 * Self::PAD),
            flip: rng.random_bool(0.5),
        }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}

/// Zero-pad by 4, crop back to the original size at the drawn offset, then
/// optionally mirror horizontally. `image` is C×H×W channel-planar.
pub fn augment_with(image: &[f32], channels: usize, side: usize, draw: AugmentDraw) -> Vec<f32> {
    let pad = AugmentDraw::PAD as isize;
    let mut out = vec![0.0; image.len()];
    for c in 0..channels {
        for y in 0..side {
            let sy = y as isize + draw.dy as isize - pad;
            if sy < 0 || sy >= side as isize {
                continue;
            }
            for x in 0..side {
                let ox = if draw.flip { side - 1 - x } else { x };
                let sx = x as isize + draw.dx as isize - pad;
                if sx < 0 || sx >= side as isize {
                    continue;
                }
                out[(c * side + y) * side + ox] = image[(c * side + sy as usize) * side + sx as usize];
            }
        }
    }
    out
}

pub fn augment(image: &[f32], channels: usize, side: usize, seed: u64) -> Vec<f32> {
    augment_with(image, channels, side, AugmentDraw::from_seed(seed))
}

/// Parameters of the class-structured synthetic generator (pixel units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Spread of each class prototype around mid-grey.
    pub prototype_std: f64,
    /// Per-pixel noise added to every image.
    pub noise_std: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            prototype_std: 12.0,
            noise_std: 70.0,
        }
    }
}

/// Class-structured synthetic records: each class has a smooth random
/// prototype and every image is its prototype plus pixel noise.
pub fn synthetic_records(count: usize, spec: SyntheticSpec, seed: u64) -> Vec<CifarRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse = Normal::new(0.0f64, spec.prototype_std).expect("valid normal");
    let prototypes: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let grid: Vec<f64> = (0..3 * 16).map(|_| coarse.sample(&mut rng)).collect();
            (0..PIXELS)
                .map(|i| {
                    let (c, y, x) = (i / (SIDE * SIDE), (i / SIDE) % SIDE, i % SIDE);
                    128.0 + grid[c * 16 + (y / 8) * 4 + x / 8]
                })
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0f64, spec.noise_std).expect("valid normal");
    (0..count)
        .map(|i| {
            let label = i % spec.classes;
            let pixels = prototypes[label]
                .iter()
                .map(|&p| (p + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
                .collect();
            CifarRecord {
                label: label as u8,
                coarse: None,
                pixels,
            }
        })
        .collect()
}
