//! Datasets: directory-of-PPM loading, the synthetic bright-quadrant set used
//! for desk-scale verification, and stratified splitting.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ppm;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Images (each [H,W,3], values in [0,1]) with integer labels and class names.
#[derive(Debug, Clone)]
pub struct LabeledDataset<S: Scalar> {
    pub images: Vec<Tensor<S>>,
    pub labels: Vec<usize>,
    pub label_map: Vec<String>,
}

impl<S: Scalar> LabeledDataset<S> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    /// Stack a set of samples into one [B,H,W,3] batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<S>, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let dims = self.images[indices[0]].dims().to_vec();
        let mut data = Vec::with_capacity(indices.len() * self.images[indices[0]].numel());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let img = &self.images[i];
            if img.dims() != dims {
                return Err(Error::Dimension(format!(
                    "sample {i} has shape {}, batch expects {:?}",
                    img.shape(),
                    dims
                )));
            }
            data.extend_from_slice(img.data());
            labels.push(self.labels[i]);
        }
        let shape = Shape::new(vec![indices.len(), dims[0], dims[1], dims[2]])?;
        Ok((Tensor::from_vec(shape, data)?, labels))
    }
}

/// Nearest-neighbor resize on raw RGB bytes (indices floor-scaled).
fn resize_nearest(img: &ppm::RgbImage, size: usize) -> Vec<u8> {
    let mut out = vec![0u8; size * size * 3];
    for y in 0..size {
        let sy = (y * img.height / size).min(img.height - 1);
        for x in 0..size {
            let sx = (x * img.width / size).min(img.width - 1);
            let src = (sy * img.width + sx) * 3;
            let dst = (y * size + x) * 3;
            out[dst..dst + 3].copy_from_slice(&img.pixels[src..src + 3]);
        }
    }
    out
}

fn image_to_tensor<S: Scalar>(bytes: &[u8], h: usize, w: usize) -> Result<Tensor<S>> {
    let data: Vec<S> = bytes
        .iter()
        .map(|&b| S::from_f64(b as f64 / 255.0))
        .collect();
    Tensor::from_vec(Shape::new(vec![h, w, 3])?, data)
}

pub fn tensor_to_rgb_bytes<S: Scalar>(t: &Tensor<S>) -> Vec<u8> {
    t.data()
        .iter()
        .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Load `root/<class_name>/<image>.ppm`, classes and files in lexicographic
/// order, pixels scaled to [0,1], everything resized to
/// `expected_size`×`expected_size` (nearest neighbor) when needed.
pub fn load_dataset<S: Scalar>(root: &Path, expected_size: usize) -> Result<LabeledDataset<S>> {
    let mut class_dirs: Vec<(String, std::path::PathBuf)> = Vec::new();
    let entries =
        std::fs::read_dir(root).map_err(|e| Error::io(root.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root.display().to_string(), e))?;
        if entry.path().is_dir() {
            class_dirs.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    if class_dirs.is_empty() {
        return Err(Error::Data(format!(
            "{}: no class subdirectories",
            root.display()
        )));
    }
    class_dirs.sort_by(|a, b| a.0.cmp(&b.0));

    let mut ds = LabeledDataset {
        images: Vec::new(),
        labels: Vec::new(),
        label_map: class_dirs.iter().map(|(n, _)| n.clone()).collect(),
    };
    for (label, (name, dir)) in class_dirs.iter().enumerate() {
        let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir.display().to_string(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file() && p.extension().map(|e| e == "ppm").unwrap_or(false)
            })
            .collect();
        files.sort();
        if files.is_empty() {
            log::warn!("class directory `{name}` is empty; class retained");
        }
        for file in files {
            let img = ppm::read_ppm(&file)?;
            let tensor = if img.width == expected_size && img.height == expected_size {
                image_to_tensor(&img.pixels, img.height, img.width)?
            } else {
                let resized = resize_nearest(&img, expected_size);
                image_to_tensor(&resized, expected_size, expected_size)?
            };
            ds.images.push(tensor);
            ds.labels.push(label);
        }
    }
    Ok(ds)
}

/// Recipe for the linearly separable verification set: class k gets a bright
/// (0.9) quadrant at position k mod 4 on a dark (0.1) background, plus
/// Gaussian noise clamped to [0,1].
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.num_classes < 2 {
            violations.push(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.image_size < 16 {
            violations.push(format!("image_size must be >= 16, got {}", self.image_size));
        }
        if self.samples_per_class == 0 {
            violations.push("samples_per_class must be >= 1".into());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(violations.join("; ")))
        }
    }
}

/// Quadrant bounds (y range, x range) for quadrant q of an n×n image:
/// 0 = top-left, 1 = bottom-left, 2 = top-right, 3 = bottom-right.
/// Consecutive classes differ vertically first, so horizontal-flip
/// augmentation never maps one 2-class pattern onto the other.
pub fn quadrant_bounds(q: usize, n: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let half = n / 2;
    match q % 4 {
        0 => (0..half, 0..half),
        1 => (half..n, 0..half),
        2 => (0..half, half..n),
        _ => (half..n, half..n),
    }
}

pub fn generate_synthetic<S: Scalar>(spec: &SyntheticSpec) -> Result<LabeledDataset<S>> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let n = spec.image_size;
    let mut ds = LabeledDataset {
        images: Vec::with_capacity(spec.num_classes * spec.samples_per_class),
        labels: Vec::with_capacity(spec.num_classes * spec.samples_per_class),
        label_map: (0..spec.num_classes).map(|k| format!("class_{k}")).collect(),
    };
    for class in 0..spec.num_classes {
        let (ys, xs) = quadrant_bounds(class, n);
        for _ in 0..spec.samples_per_class {
            let mut data = vec![S::zero(); n * n * 3];
            for y in 0..n {
                for x in 0..n {
                    let base = if ys.contains(&y) && xs.contains(&x) {
                        0.9
                    } else {
                        0.1
                    };
                    for ch in 0..3 {
                        let noise = if spec.noise_std > 0.0 {
                            rng.next_normal() * spec.noise_std
                        } else {
                            0.0
                        };
                        data[(y * n + x) * 3 + ch] = S::from_f64((base + noise).clamp(0.0, 1.0));
                    }
                }
            }
            ds.images
                .push(Tensor::from_vec(Shape::new(vec![n, n, 3])?, data)?);
            ds.labels.push(class);
        }
    }
    Ok(ds)
}

/// Seeded stratified split: per class, shuffle its sample indices and send
/// floor(fraction·n_k) to the training side. Classes with a single sample go
/// entirely to training (with a warning).
pub fn split<S: Scalar>(
    ds: &LabeledDataset<S>,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset<S>, LabeledDataset<S>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in 0..ds.num_classes() {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        if idx.len() < 2 {
            if !idx.is_empty() {
                log::warn!(
                    "class `{}` has {} sample(s); all assigned to train",
                    ds.label_map[class],
                    idx.len()
                );
            }
            train_idx.extend(idx);
            continue;
        }
        rng.shuffle(&mut idx);
        let take = (train_fraction * idx.len() as f64).floor() as usize;
        train_idx.extend_from_slice(&idx[..take]);
        test_idx.extend_from_slice(&idx[take..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let subset = |indices: &[usize]| LabeledDataset {
        images: indices.iter().map(|&i| ds.images[i].clone()).collect(),
        labels: indices.iter().map(|&i| ds.labels[i]).collect(),
        label_map: ds.label_map.clone(),
    };
    Ok((subset(&train_idx), subset(&test_idx)))
}
