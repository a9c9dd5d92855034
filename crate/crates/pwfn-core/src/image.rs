//! Image batches and PNG/PPM ingestion.

use crate::tensor::{resample_bilinear, Scalar, Tensor, TensorError};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no readable images in {0}")]
    EmptyDirectory(PathBuf),
    #[error("decode error on {path}: {msg}")]
    Decode { path: PathBuf, msg: String },
    #[error("image batch must be (B,3,H,W) with H,W >= 16, got {0:?}")]
    BadShape(Vec<usize>),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// What an image batch holds in the watermarking pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Cover,
    Encoded,
    Noised,
    Residual,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Cover => "cover",
            Role::Encoded => "encoded",
            Role::Noised => "noised",
            Role::Residual => "residual",
        }
    }
}

/// A batch of RGB images in (B,3,H,W) layout with values nominally in
/// [0,1]. Training-time tensors may transiently leave the range; I/O always
/// clamps.
#[derive(Clone, Debug)]
pub struct ImageBatch<T> {
    tensor: Tensor<T>,
    role: Role,
}

impl<T: Scalar> ImageBatch<T> {
    pub fn new(tensor: Tensor<T>, role: Role) -> Result<Self, ImageError> {
        let s = tensor.shape();
        if s.len() != 4 || s[1] != 3 || s[2] < 16 || s[3] < 16 {
            return Err(ImageError::BadShape(s.to_vec()));
        }
        Ok(Self { tensor, role })
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn batch(&self) -> usize {
        self.tensor.dim(0)
    }

    pub fn height(&self) -> usize {
        self.tensor.dim(2)
    }

    pub fn width(&self) -> usize {
        self.tensor.dim(3)
    }

    /// One image of the batch as its own single-image batch.
    pub fn single(&self, index: usize) -> Result<Self, ImageError> {
        let (c, h, w) = (3, self.height(), self.width());
        let plane = c * h * w;
        let data = self.tensor.data()[index * plane..(index + 1) * plane].to_vec();
        Ok(Self {
            tensor: Tensor::new(vec![1, c, h, w], data)?,
            role: self.role,
        })
    }

    pub fn clamp_for_io(&self) -> Self {
        Self {
            tensor: self
                .tensor
                .map(|v| v.max(T::zero()).min(T::one())),
            role: self.role,
        }
    }
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(e) if e == "png" || e == "ppm"
    )
}

/// Load every PNG/PPM under `dir` (lexicographic by file name), bilinearly
/// resized to `target_h x target_w` and scaled to [0,1]. Grayscale inputs
/// are replicated to three channels. Unreadable files are skipped with a
/// warning on stderr; an empty result is an error.
pub fn load_images<T: Scalar>(
    dir: &Path,
    target_h: usize,
    target_w: usize,
) -> Result<ImageBatch<T>, ImageError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| ImageError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();

    let mut planes: Vec<T> = Vec::new();
    let mut count = 0usize;
    for path in &files {
        match load_one::<T>(path, target_h, target_w) {
            Ok(img) => {
                planes.extend_from_slice(img.data());
                count += 1;
            }
            Err(err) => {
                eprintln!("warning: skipping {}: {err}", path.display());
            }
        }
    }
    if count == 0 {
        return Err(ImageError::EmptyDirectory(dir.to_path_buf()));
    }
    let tensor = Tensor::new(vec![count, 3, target_h, target_w], planes)?;
    ImageBatch::new(tensor, Role::Cover)
}

/// Load a single image file to a (1,3,H,W) tensor in [0,1].
pub fn load_one<T: Scalar>(
    path: &Path,
    target_h: usize,
    target_w: usize,
) -> Result<Tensor<T>, ImageError> {
    let img = image::open(path).map_err(|e| ImageError::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![T::zero(); 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[c * h * w + y * w + x] = T::from_f64(px.0[c] as f64 / 255.0);
        }
    }
    let t = Tensor::new(vec![1, 3, h, w], data)?;
    Ok(resample_bilinear(&t, target_h, target_w)?)
}

/// Save one image of a batch as an 8-bit PNG. Values are clamped to [0,1]
/// and quantized with round-half-up.
pub fn save_image<T: Scalar>(
    batch: &ImageBatch<T>,
    index: usize,
    path: &Path,
) -> Result<(), ImageError> {
    let img = batch.single(index)?.clamp_for_io();
    let (h, w) = (img.height(), img.width());
    let t = img.tensor();
    let mut out = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                quantize(t.at4(0, 0, y, x)),
                quantize(t.at4(0, 1, y, x)),
                quantize(t.at4(0, 2, y, x)),
            ];
            out.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    out.save(path).map_err(|e| ImageError::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn quantize<T: Scalar>(v: T) -> u8 {
    let scaled = (v.to_f64() * 255.0).round();
    scaled.clamp(0.0, 255.0) as u8
}

/// Amplified difference view: `clamp(0.5 + gain * (encoded - cover), 0, 1)`.
pub fn residual_visual<T: Scalar>(
    cover: &ImageBatch<T>,
    encoded: &ImageBatch<T>,
    gain: f64,
) -> Result<ImageBatch<T>, ImageError> {
    if cover.tensor().shape() != encoded.tensor().shape() {
        return Err(ImageError::BadShape(encoded.tensor().shape().to_vec()));
    }
    let g = T::from_f64(gain);
    let half = T::from_f64(0.5);
    let data: Vec<T> = cover
        .tensor()
        .data()
        .iter()
        .zip(encoded.tensor().data())
        .map(|(&c, &e)| (half + g * (e - c)).max(T::zero()).min(T::one()))
        .collect();
    let tensor = Tensor::new(cover.tensor().shape().to_vec(), data)?;
    ImageBatch::new(tensor, Role::Residual)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(h: usize, w: usize, f: impl FnMut(usize) -> f64) -> ImageBatch<f64> {
        ImageBatch::new(Tensor::from_fn(vec![1, 3, h, w], f), Role::Cover).unwrap()
    }

    #[test]
    fn batch_shape_validated() {
        assert!(ImageBatch::new(Tensor::<f64>::zeros(vec![1, 3, 16, 16]), Role::Cover).is_ok());
        assert!(ImageBatch::new(Tensor::<f64>::zeros(vec![1, 1, 16, 16]), Role::Cover).is_err());
        assert!(ImageBatch::new(Tensor::<f64>::zeros(vec![1, 3, 8, 16]), Role::Cover).is_err());
    }

    #[test]
    fn mid_gray_rounds_half_up() {
        assert_eq!(quantize(0.5f64), 128);
        assert_eq!(quantize(0.0f64), 0);
        assert_eq!(quantize(1.0f64), 255);
        assert_eq!(quantize(1.5f64), 255);
        assert_eq!(quantize(-0.25f64), 0);
    }

    #[test]
    fn save_load_roundtrip_within_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let img = batch(16, 16, |i| (i % 97) as f64 / 96.0);
        let path = dir.path().join("a.png");
        save_image(&img, 0, &path).unwrap();
        let back: Tensor<f64> = load_one(&path, 16, 16).unwrap();
        let max = img
            .tensor()
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max <= 1.0 / 255.0 + 1e-9, "max diff {max}");
    }

    #[test]
    fn directory_loading_sorted_and_resized() {
        let dir = tempfile::tempdir().unwrap();
        for (name, level) in [("b.png", 0.25), ("a.png", 0.75)] {
            let img = batch(32, 32, |_| level);
            save_image(&img, 0, &dir.path().join(name)).unwrap();
        }
        let loaded: ImageBatch<f64> = load_images(dir.path(), 16, 16).unwrap();
        assert_eq!(loaded.tensor().shape(), &[2, 3, 16, 16]);
        // Lexicographic: a.png (0.75) first.
        assert!((loaded.tensor().at4(0, 0, 4, 4) - 0.75).abs() < 2.0 / 255.0);
        assert!((loaded.tensor().at4(1, 0, 4, 4) - 0.25).abs() < 2.0 / 255.0);
    }

    #[test]
    fn empty_directory_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_images::<f64>(dir.path(), 16, 16),
            Err(ImageError::EmptyDirectory(_))
        ));
    }

    #[test]
    fn grayscale_replicates_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let mut gray = image::GrayImage::new(20, 20);
        for p in gray.pixels_mut() {
            p.0 = [100];
        }
        gray.save(&path).unwrap();
        let t: Tensor<f64> = load_one(&path, 16, 16).unwrap();
        for c in 0..3 {
            assert!((t.at4(0, c, 8, 8) - 100.0 / 255.0).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_visual_gray_when_identical() {
        let img = batch(16, 16, |i| (i % 7) as f64 / 7.0);
        let vis = residual_visual(&img, &img, 5.0).unwrap();
        assert!(vis.tensor().data().iter().all(|&v| v == 0.5));
        assert_eq!(vis.role(), Role::Residual);
    }

    #[test]
    fn residual_visual_clamps() {
        let a = batch(16, 16, |_| 0.2);
        let mut td = a.tensor().clone();
        td.data_mut()[0] = 0.5; // one pixel brighter
        let b = ImageBatch::new(td, Role::Encoded).unwrap();
        let vis = residual_visual(&a, &b, 5.0).unwrap();
        assert_eq!(vis.tensor().data()[0], 1.0);
        assert_eq!(vis.tensor().data()[1], 0.5);
    }
}
