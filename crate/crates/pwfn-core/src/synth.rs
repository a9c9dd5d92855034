//! Procedural test images: smooth gradients, low-frequency sinusoids and a
//! soft blob per image, so fixtures need no external downloads.

use crate::image::{save_image, ImageBatch, ImageError, Role};
use crate::tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub fn synth_image<T: Scalar>(h: usize, w: usize, rng: &mut impl Rng) -> Tensor<T> {
    let n_waves = 3;
    let waves: Vec<(f64, f64, f64, f64, usize)> = (0..n_waves)
        .map(|_| {
            (
                rng.gen_range(0.2..0.8) / w as f64 * 2.0 * std::f64::consts::PI * rng.gen_range(1.0..4.0),
                rng.gen_range(0.2..0.8) / h as f64 * 2.0 * std::f64::consts::PI * rng.gen_range(1.0..4.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.05..0.18),
                rng.gen_range(0..3usize),
            )
        })
        .collect();
    let blob = (
        rng.gen_range(0.2..0.8) * w as f64,
        rng.gen_range(0.2..0.8) * h as f64,
        rng.gen_range(0.1..0.3) * w as f64,
        rng.gen_range(-0.25..0.25),
    );
    let (gx, gy) = (
        rng.gen_range(-0.3..0.3) / w as f64,
        rng.gen_range(-0.3..0.3) / h as f64,
    );
    let base: [f64; 3] = [
        rng.gen_range(0.3..0.7),
        rng.gen_range(0.3..0.7),
        rng.gen_range(0.3..0.7),
    ];
    Tensor::from_fn(vec![1, 3, h, w], |i| {
        let c = i / (h * w);
        let y = (i / w) % h;
        let x = i % w;
        let mut v = base[c] + gx * x as f64 + gy * y as f64;
        for &(fx, fy, phase, amp, ch) in &waves {
            if ch == c || ch == 2 {
                v += amp * (fx * x as f64 + fy * y as f64 + phase).sin();
            }
        }
        let (cx, cy, r, amp) = blob;
        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        v += amp * (-d2 / (2.0 * r * r)).exp();
        T::from_f64(v.clamp(0.0, 1.0))
    })
}

pub fn synth_batch<T: Scalar>(n: usize, h: usize, w: usize, seed: u64) -> ImageBatch<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * 3 * h * w);
    for _ in 0..n {
        data.extend_from_slice(synth_image::<T>(h, w, &mut rng).data());
    }
    ImageBatch::new(
        Tensor::new(vec![n, 3, h, w], data).expect("consistent synth shape"),
        Role::Cover,
    )
    .expect("synth shape is valid")
}

/// Write `n` synthetic PNGs into `dir` and return their paths.
pub fn write_synth_dataset(
    dir: &Path,
    n: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<Vec<PathBuf>, ImageError> {
    std::fs::create_dir_all(dir).map_err(|source| ImageError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let batch = synth_batch::<f32>(n, h, w, seed);
    let mut paths = Vec::with_capacity(n);
    for i in 0..n {
        let path = dir.join(format!("synth_{i:04}.png"));
        save_image(&batch, i, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_in_range_and_deterministic() {
        let a = synth_batch::<f64>(2, 32, 32, 9);
        let b = synth_batch::<f64>(2, 32, 32, 9);
        assert_eq!(a.tensor().data(), b.tensor().data());
        assert!(a
            .tensor()
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn different_seeds_differ() {
        let a = synth_batch::<f64>(1, 32, 32, 1);
        let b = synth_batch::<f64>(1, 32, 32, 2);
        assert_ne!(a.tensor().data(), b.tensor().data());
    }
}
