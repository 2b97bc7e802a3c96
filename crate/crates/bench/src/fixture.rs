//! Synthetic IDX image sets shaped like MNIST, for tests and offline runs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mso_core::objectives::idx::{write_idx_images, write_idx_labels};

use crate::BenchError;

/// Writes `train-images-idx3-ubyte` and `train-labels-idx1-ubyte` with `n`
/// 28×28 images into `dir`. Digit `c` is a bright bar at a class-specific
/// row and column plus uniform noise, so classes are separable.
pub fn write_synthetic_mnist(dir: &Path, n: usize, seed: u64) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 10) as u8;
        let mut img = vec![0u8; 28 * 28];
        for p in img.iter_mut() {
            *p = rng.random_range(0..40);
        }
        let row = 3 + 2 * label as usize;
        let col = 24 - 2 * label as usize;
        for j in 4..24 {
            img[row * 28 + j] = rng.random_range(180..=255);
            img[j * 28 + col] = rng.random_range(120..=255);
        }
        images.push(img);
        labels.push(label);
    }
    write_idx_images(dir.join("train-images-idx3-ubyte"), 28, 28, &images)?;
    write_idx_labels(dir.join("train-labels-idx1-ubyte"), &labels)?;
    Ok(())
}
