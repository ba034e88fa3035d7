use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

/// Per-channel CIFAR-10 training-set statistics.
pub const CIFAR_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];

/// Padding used by the random-crop augmentation.
pub const CROP_PAD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    pub const CIFAR10: Normalization = Normalization {
        mean: CIFAR_MEAN,
        std: CIFAR_STD,
    };

    /// Centres the synthetic gratings, whose pixels sit around 0.5.
    pub const SYNTHETIC: Normalization = Normalization {
        mean: [0.5; 3],
        std: [0.25; 3],
    };
}

/// Labelled `[3, H, W]` images in `[0, 1]`. Normalization, when present,
/// is applied as batches are assembled so the stored pixels stay raw.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub image_size: usize,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(
        images: Vec<Tensor>,
        labels: Vec<usize>,
        num_classes: usize,
        image_size: usize,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::contract(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::contract(format!(
                "label {bad} outside {num_classes} classes"
            )));
        }
        let want = [3, image_size, image_size];
        if let Some(img) = images.iter().find(|t| t.shape() != want) {
            return Err(Error::shape(format!(
                "image of shape {:?} in a {image_size}px dataset",
                img.shape()
            )));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            image_size,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn with_normalization(mut self, n: Option<Normalization>) -> Self {
        self.normalization = n;
        self
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone_meta()
        }
    }

    /// Samples in the order given by `indices`.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            images: Vec::new(),
            labels: Vec::new(),
            num_classes: self.num_classes,
            image_size: self.image_size,
            normalization: self.normalization,
        }
    }

    /// `[B, 3, H, W]` batch plus labels for `indices`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        self.assemble(indices, None)
    }

    /// Like [`Dataset::batch`] with a random horizontal flip and a random
    /// crop from the zero-padded image.
    pub fn batch_augmented(&self, indices: &[usize], rng: &mut ChaCha8Rng) -> (Tensor, Vec<usize>) {
        self.assemble(indices, Some(rng))
    }

    fn assemble(&self, indices: &[usize], mut rng: Option<&mut ChaCha8Rng>) -> (Tensor, Vec<usize>) {
        let s = self.image_size;
        let plane = s * s;
        let mut data = Vec::with_capacity(indices.len() * 3 * plane);
        for &i in indices {
            let src = self.images[i].data();
            let (flip, dy, dx) = match rng.as_deref_mut() {
                Some(r) => (
                    r.gen_bool(0.5),
                    r.gen_range(0..=2 * CROP_PAD) as isize - CROP_PAD as isize,
                    r.gen_range(0..=2 * CROP_PAD) as isize - CROP_PAD as isize,
                ),
                None => (false, 0, 0),
            };
            for c in 0..3 {
                let (mean, std) = match self.normalization {
                    Some(n) => (n.mean[c], n.std[c]),
                    None => (0.0, 1.0),
                };
                for y in 0..s {
                    for x in 0..s {
                        let sx = if flip { s - 1 - x } else { x } as isize + dx;
                        let sy = y as isize + dy;
                        let v = if (0..s as isize).contains(&sx) && (0..s as isize).contains(&sy) {
                            src[c * plane + sy as usize * s + sx as usize]
                        } else {
                            0.0
                        };
                        data.push((v - mean) / std);
                    }
                }
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let t = Tensor::new(vec![indices.len(), 3, s, s], data).expect("batch shape");
        (t, labels)
    }
}

/// Parse one CIFAR-10 binary batch. Pixels are scaled to `[0, 1]` and the
/// dataset carries the CIFAR normalization constants.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        let offset = (bytes.len() / CIFAR_RECORD * CIFAR_RECORD) as u64;
        return Err(Error::Format {
            offset,
            message: format!(
                "truncated record: {} trailing bytes, records are {CIFAR_RECORD} bytes",
                bytes.len() % CIFAR_RECORD
            ),
        });
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(images.capacity());
    for (r, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Format {
                offset: (r * CIFAR_RECORD) as u64,
                message: format!("label {label} is not below {CIFAR_CLASSES}"),
            });
        }
        labels.push(label);
        let pixels = record[1..].iter().map(|&b| f64::from(b) / 255.0).collect();
        images.push(Tensor::new(vec![3, CIFAR_SIDE, CIFAR_SIDE], pixels)?);
    }
    Ok(Dataset::new(images, labels, CIFAR_CLASSES, CIFAR_SIDE)?
        .with_normalization(Some(Normalization::CIFAR10)))
}

/// Load a CIFAR-10 binary file, or every `*.bin` batch in a directory in
/// name order.
pub fn load_cifar10(path: &Path) -> Result<Dataset> {
    if path.is_file() {
        return parse_cifar10(&fs::read(path)?);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    files.sort();
    concat_files(&files, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Standard split of an extracted `cifar-10-batches-bin` directory: the five
/// `data_batch_*.bin` files for training, `test_batch.bin` for testing.
pub fn load_cifar10_split(dir: &Path, split: Split) -> Result<Dataset> {
    let nested = dir.join("cifar-10-batches-bin");
    let dir = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let files: Vec<PathBuf> = match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    concat_files(&files, &dir)
}

fn concat_files(files: &[PathBuf], dir: &Path) -> Result<Dataset> {
    if files.is_empty() {
        return Err(Error::config(format!("no CIFAR-10 batches in {}", dir.display())));
    }
    let mut out: Option<Dataset> = None;
    for f in files {
        let bytes = fs::read(f).map_err(|e| {
            Error::config(format!("cannot read {}: {e}", f.display()))
        })?;
        let d = parse_cifar10(&bytes).map_err(|e| match e {
            Error::Format { offset, message } => Error::Format {
                offset,
                message: format!("{}: {message}", f.display()),
            },
            other => other,
        })?;
        match &mut out {
            None => out = Some(d),
            Some(acc) => {
                acc.images.extend(d.images);
                acc.labels.extend(d.labels);
            }
        }
    }
    Ok(out.expect("at least one file"))
}

/// Deterministic oriented-grating dataset. Class `k` is a sinusoidal grating
/// at angle `kπ/classes` with a class-specific phase; contrast, a small phase
/// jitter, a colour tint and Gaussian pixel noise vary per sample. Labels
/// cycle through the classes so every prefix is balanced.
pub fn gen_synthetic(seed: u64, n: usize, classes: usize, image_size: usize) -> Result<Dataset> {
    gen_synthetic_with(seed, n, classes, image_size, SyntheticParams::default())
}

/// Seeds of the standard synthetic train and eval splits. They are fixed
/// so that the training seed only moves the model.
pub const SYNTHETIC_TRAIN_SEED: u64 = 1;
pub const SYNTHETIC_EVAL_SEED: u64 = 2;

/// Standard 10-class 32 px synthetic splits.
pub fn synthetic_splits(train_n: usize, eval_n: usize) -> Result<(Dataset, Dataset)> {
    Ok((
        gen_synthetic(SYNTHETIC_TRAIN_SEED, train_n, 10, 32)?,
        gen_synthetic(SYNTHETIC_EVAL_SEED, eval_n, 10, 32)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    /// Grating cycles across the image.
    pub cycles: f64,
    pub noise_std: f64,
    /// Phase jitter amplitude in radians.
    pub jitter: f64,
    pub min_contrast: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            cycles: 3.0,
            noise_std: 0.45,
            jitter: 0.6,
            min_contrast: 0.2,
        }
    }
}

pub fn gen_synthetic_with(
    seed: u64,
    n: usize,
    classes: usize,
    image_size: usize,
    params: SyntheticParams,
) -> Result<Dataset> {
    if classes == 0 || classes > 10 {
        return Err(Error::config(format!("synthetic data supports 1..=10 classes, got {classes}")));
    }
    if image_size == 0 {
        return Err(Error::config("image size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.noise_std.max(0.0)).expect("finite std");
    let s = image_size as f64;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        let theta = k as f64 * PI / classes as f64;
        let phase = k as f64 * 2.0 * PI / classes as f64 + rng.gen_range(-params.jitter..=params.jitter);
        let contrast = rng.gen_range(params.min_contrast..=1.0);
        let tint: [f64; 3] = [rng.gen_range(0.6..=1.0), rng.gen_range(0.6..=1.0), rng.gen_range(0.6..=1.0)];
        let (ct, st) = (theta.cos(), theta.sin());
        let mut data = Vec::with_capacity(3 * image_size * image_size);
        for tone in tint {
            for y in 0..image_size {
                for x in 0..image_size {
                    let u = (x as f64 - s / 2.0) * ct + (y as f64 - s / 2.0) * st;
                    let wave = (2.0 * PI * params.cycles * u / s + phase).sin();
                    let v = 0.5 + 0.5 * contrast * tone * wave + noise.sample(&mut rng);
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
        images.push(Tensor::new(vec![3, image_size, image_size], data)?);
        labels.push(k);
    }
    Ok(Dataset::new(images, labels, classes, image_size)?.with_normalization(Some(Normalization::SYNTHETIC)))
}
