//! Benchmark inputs: seeded Gaussian blobs and IDX (MNIST-style) files.

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    /// The first `n` rows.
    pub fn head(&self, n: usize) -> Result<(ArrayView2<'_, f64>, &[f64])> {
        if n > self.n_samples() {
            return Err(Error::DatasetTooSmall {
                available: self.n_samples(),
                requested: n,
            });
        }
        Ok((self.x.slice(s![..n, ..]), &self.y[..n]))
    }
}

/// `n` points in `n_features` dimensions from `n_classes` unit-variance
/// Gaussian blobs whose centres are drawn from `N(0, center_spread²)`.
/// Labels are drawn uniformly.
pub fn gaussian_blobs(
    n: usize,
    n_features: usize,
    n_classes: usize,
    center_spread: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..n_classes * n_features)
        .map(|_| center_spread * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut x = Array2::zeros((n, n_features));
    let mut y = Vec::with_capacity(n);
    for mut row in x.outer_iter_mut() {
        let class = rng.random_range(0..n_classes.max(1));
        for (f, v) in row.iter_mut().enumerate() {
            *v = centers[class * n_features + f] + rng.sample::<f64, _>(StandardNormal);
        }
        y.push(class as f64);
    }
    Dataset { x, y }
}

/// The default benchmark dataset: ten heavily overlapping classes in eight
/// dimensions, which makes fully grown trees deep with small leaves.
pub fn benchmark_blobs(n: usize, seed: u64) -> Dataset {
    gaussian_blobs(n, 8, 10, 1.0, seed)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("truncated header at byte {at}"),
        })
}

fn idx_payload<'a>(bytes: &'a [u8], path: &Path, magic: u32) -> Result<(Vec<usize>, &'a [u8])> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("bad IDX magic {found:#010x}, expected {magic:#010x}"),
        });
    }
    let n_dims = (magic & 0xff) as usize;
    let dims = (0..n_dims)
        .map(|d| be_u32(bytes, 4 + 4 * d, path).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * n_dims;
    let len: usize = dims.iter().product();
    let payload = bytes.get(start..start + len).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("expected {len} data bytes"),
    })?;
    Ok((dims, payload))
}

/// Load an IDX image file (`0x00000803`, unsigned bytes) and its label file
/// (`0x00000801`). Pixels become features in row-major order. `limit`
/// keeps only the first rows.
pub fn load_idx(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Dataset> {
    let image_bytes = fs::read(images)?;
    let label_bytes = fs::read(labels)?;
    let (dims, pixels) = idx_payload(&image_bytes, images, IDX_IMAGES_MAGIC)?;
    let (ldims, label_data) = idx_payload(&label_bytes, labels, IDX_LABELS_MAGIC)?;
    let (count, width) = (dims[0], dims[1] * dims[2]);
    if ldims[0] != count {
        return Err(Error::ShapeMismatch {
            what: "IDX label count",
            expected: count,
            found: ldims[0],
        });
    }
    let n = limit.map_or(count, |l| l.min(count));
    if n == 0 || width == 0 {
        return Err(Error::EmptyInput("IDX dataset"));
    }
    let x = Array2::from_shape_fn((n, width), |(i, j)| f64::from(pixels[i * width + j]));
    let y = label_data[..n].iter().map(|&l| f64::from(l)).collect();
    Ok(Dataset { x, y })
}
