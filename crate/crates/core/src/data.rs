//! MNIST IDX ingestion and an offline MNIST-like generator.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Dataset, Targets};
use crate::numerics::{Matrix, RngState};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;
pub const CLASSES: usize = 10;

/// Images as columns of a `784 × count` matrix with pixels in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct MnistSplit {
    pub images: Matrix,
    pub labels: Vec<usize>,
}

impl MnistSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn into_dataset(self) -> Dataset {
        Dataset {
            inputs: self.images,
            targets: Targets::Classes(self.labels),
        }
    }
}

fn truncated(path: &Path, what: &str) -> Error {
    Error::Io(std::io::Error::new(
        std::io::ErrorKind::UnexpectedEof,
        format!("{}: truncated {what}", path.display()),
    ))
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| truncated(path, "header"))
}

fn read_images(path: &Path) -> Result<(usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let magic = read_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let count = read_u32(&bytes, 4, path)? as usize;
    let rows = read_u32(&bytes, 8, path)? as usize;
    let cols = read_u32(&bytes, 12, path)? as usize;
    if rows != SIDE || cols != SIDE {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("images are {rows}x{cols}, expected {SIDE}x{SIDE}"),
        });
    }
    let body = &bytes[16..];
    if body.len() < count * PIXELS {
        return Err(truncated(path, "pixel data"));
    }
    Ok((count, body[..count * PIXELS].to_vec()))
}

fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    let magic = read_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let count = read_u32(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(truncated(path, "label data"));
    }
    if let Some(bad) = body[..count].iter().find(|&&l| l as usize >= CLASSES) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("label {bad} out of range"),
        });
    }
    Ok(body[..count].to_vec())
}

/// Reads an IDX image file and its label file.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<MnistSplit> {
    let (count, pixels) = read_images(images.as_ref())?;
    let labels = read_labels(labels.as_ref())?;
    if labels.len() != count {
        return Err(Error::Consistency(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    let images = Matrix::from_fn(PIXELS, count, |p, i| pixels[i * PIXELS + p] as f64 / 255.0);
    Ok(MnistSplit {
        images,
        labels: labels.into_iter().map(usize::from).collect(),
    })
}

/// Encodes a split back to IDX bytes (pixels rounded to the nearest byte).
pub fn encode_idx(split: &MnistSplit) -> (Vec<u8>, Vec<u8>) {
    let n = split.len();
    let mut img = Vec::with_capacity(16 + n * PIXELS);
    for v in [IMAGE_MAGIC, n as u32, SIDE as u32, SIDE as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for i in 0..n {
        for p in 0..PIXELS {
            img.push((split.images.get(p, i) * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    let mut lab = Vec::with_capacity(8 + n);
    for v in [LABEL_MAGIC, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(split.labels.iter().map(|&l| l as u8));
    (img, lab)
}

/// Ten fixed stroke prototypes on the 28×28 grid, each drawn as a sum of
/// Gaussian blobs along a random polyline.
fn prototypes(rng: &mut RngState) -> Vec<Vec<f64>> {
    (0..CLASSES)
        .map(|_| {
            let n_pts = 4 + rng.below(3) as usize;
            let pts: Vec<(f64, f64)> = (0..n_pts)
                .map(|_| (6.0 + 16.0 * rng.next_f64(), 6.0 + 16.0 * rng.next_f64()))
                .collect();
            let mut img = vec![0.0; PIXELS];
            for seg in pts.windows(2) {
                for s in 0..12 {
                    let u = s as f64 / 11.0;
                    let cx = seg[0].0 + u * (seg[1].0 - seg[0].0);
                    let cy = seg[0].1 + u * (seg[1].1 - seg[0].1);
                    for (p, v) in img.iter_mut().enumerate() {
                        let (r, c) = ((p / SIDE) as f64, (p % SIDE) as f64);
                        let d2 = (r - cy).powi(2) + (c - cx).powi(2);
                        *v += (-d2 / 2.0).exp();
                    }
                }
            }
            let peak = img.iter().copied().fold(0.0, f64::max);
            img.iter().map(|v| (v / peak).min(1.0)).collect()
        })
        .collect()
}

/// MNIST-shaped synthetic digits: each class has a stroke prototype; samples
/// are randomly shifted by up to two pixels, scaled in intensity and
/// corrupted by pixel noise, then clipped to `[0, 1]`.
///
/// `proto_seed` fixes the class prototypes so that train and test splits
/// drawn with different `seed`s share the same classes.
pub fn synthetic_mnist(count: usize, proto_seed: u64, seed: u64) -> MnistSplit {
    let protos = prototypes(&mut RngState::new(proto_seed));
    let mut rng = RngState::new(seed);
    let mut labels = Vec::with_capacity(count);
    let mut images = Matrix::zeros(PIXELS, count);
    for i in 0..count {
        let class = rng.below(CLASSES as u64) as usize;
        labels.push(class);
        let dr = rng.below(5) as isize - 2;
        let dc = rng.below(5) as isize - 2;
        let gain = 0.7 + 0.3 * rng.next_f64();
        for p in 0..PIXELS {
            let (r, c) = ((p / SIDE) as isize - dr, (p % SIDE) as isize - dc);
            let base = if (0..SIDE as isize).contains(&r) && (0..SIDE as isize).contains(&c) {
                protos[class][r as usize * SIDE + c as usize]
            } else {
                0.0
            };
            let v = gain * base + 0.15 * rng.normal();
            images.set(p, i, v.clamp(0.0, 1.0));
        }
    }
    MnistSplit { images, labels }
}
