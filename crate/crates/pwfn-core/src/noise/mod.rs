//! The distortion pool: differentiable train-time attacks plus a bit-exact
//! eval-time JPEG codec.
//!
//! Every operation maps an encoded image var to a distorted var of the same
//! shape. Randomness always comes from an explicitly passed RNG so runs are
//! reproducible.

pub mod jpeg;

use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum NoiseError {
    #[error("unknown noise spec '{0}'")]
    UnknownSpec(String),
    #[error("{kind}: intensity {value} outside {range}")]
    BadIntensity {
        kind: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("crop rectangle side rounds to zero")]
    DegenerateRect,
    #[error("downscaled dimension would be smaller than 2")]
    TooSmallResize,
    #[error("real JPEG is eval-only and cannot run in a gradient context")]
    EvalOnly,
    #[error("noise pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    Identity,
    Dropout,
    Cropout,
    Crop,
    GaussianBlur,
    GaussianNoise,
    Resize,
    JpegSim,
    JpegReal,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Identity => "identity",
            NoiseKind::Dropout => "dropout",
            NoiseKind::Cropout => "cropout",
            NoiseKind::Crop => "crop",
            NoiseKind::GaussianBlur => "blur",
            NoiseKind::GaussianNoise => "gnoise",
            NoiseKind::Resize => "resize",
            NoiseKind::JpegSim => "jpeg_sim",
            NoiseKind::JpegReal => "jpeg",
        }
    }
}

/// One distortion: a kind plus its intensity. Intensity semantics per kind:
/// replacement probability (dropout), kept-area ratio (cropout/crop), sigma
/// (blur/gnoise), scale (resize), quality (jpeg_sim/jpeg).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub intensity: f64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, intensity: f64) -> Result<Self, NoiseError> {
        let spec = Self { kind, intensity };
        spec.validate()?;
        Ok(spec)
    }

    pub fn identity() -> Self {
        Self {
            kind: NoiseKind::Identity,
            intensity: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        let v = self.intensity;
        let bad = |kind: &'static str, range: &'static str| NoiseError::BadIntensity {
            kind,
            value: v,
            range,
        };
        match self.kind {
            NoiseKind::Identity => Ok(()),
            NoiseKind::Dropout => (0.0..=1.0)
                .contains(&v)
                .then_some(())
                .ok_or(bad("dropout", "[0,1]")),
            NoiseKind::Cropout | NoiseKind::Crop => (v > 0.0 && v <= 1.0)
                .then_some(())
                .ok_or(bad("crop/cropout", "(0,1]")),
            NoiseKind::GaussianBlur => (v > 0.0).then_some(()).ok_or(bad("blur", "(0,inf)")),
            NoiseKind::GaussianNoise => (v >= 0.0).then_some(()).ok_or(bad("gnoise", "[0,inf)")),
            NoiseKind::Resize => (v > 0.0 && v <= 1.0)
                .then_some(())
                .ok_or(bad("resize", "(0,1]")),
            NoiseKind::JpegSim | NoiseKind::JpegReal => (1.0..=100.0)
                .contains(&v)
                .then_some(())
                .ok_or(bad("jpeg", "[1,100]")),
        }
    }

    /// Parse the CLI/config syntax, e.g. `identity`, `dropout:0.3`,
    /// `blur:2.0`, `jpeg_sim:50`, `jpeg:50`.
    pub fn parse(s: &str) -> Result<Self, NoiseError> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s, None),
        };
        let kind = match name {
            "identity" => NoiseKind::Identity,
            "dropout" => NoiseKind::Dropout,
            "cropout" => NoiseKind::Cropout,
            "crop" => NoiseKind::Crop,
            "blur" => NoiseKind::GaussianBlur,
            "gnoise" => NoiseKind::GaussianNoise,
            "resize" => NoiseKind::Resize,
            "jpeg_sim" => NoiseKind::JpegSim,
            "jpeg" => NoiseKind::JpegReal,
            _ => return Err(NoiseError::UnknownSpec(s.to_string())),
        };
        let intensity = match (kind, arg) {
            (NoiseKind::Identity, None) => 0.0,
            (NoiseKind::Identity, Some(_)) => return Err(NoiseError::UnknownSpec(s.to_string())),
            (_, Some(a)) => a
                .parse::<f64>()
                .map_err(|_| NoiseError::UnknownSpec(s.to_string()))?,
            (_, None) => return Err(NoiseError::UnknownSpec(s.to_string())),
        };
        Self::new(kind, intensity)
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NoiseKind::Identity => write!(f, "identity"),
            _ => write!(f, "{}:{}", self.kind.as_str(), self.intensity),
        }
    }
}

/// Non-empty list of distortions sampled uniformly, one per mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePool {
    specs: Vec<NoiseSpec>,
}

impl NoisePool {
    pub fn new(specs: Vec<NoiseSpec>) -> Result<Self, NoiseError> {
        if specs.is_empty() {
            return Err(NoiseError::EmptyPool);
        }
        Ok(Self { specs })
    }

    /// Parse a comma-separated spec list.
    pub fn parse(s: &str) -> Result<Self, NoiseError> {
        let specs = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(NoiseSpec::parse)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(specs)
    }

    pub fn specs(&self) -> &[NoiseSpec] {
        &self.specs
    }

    pub fn sample(&self, rng: &mut impl Rng) -> NoiseSpec {
        self.specs[rng.gen_range(0..self.specs.len())]
    }
}

impl fmt::Display for NoisePool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.specs.iter().map(|s| s.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// An axis-aligned rectangle kept by crop-style distortions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

/// Rectangle of area about `keep_ratio * h * w`: each side is
/// `round(dim * sqrt(ratio))` (half rounds up), position uniform.
pub fn crop_rect(
    h: usize,
    w: usize,
    keep_ratio: f64,
    rng: &mut impl Rng,
) -> Result<Rect, NoiseError> {
    let side = keep_ratio.sqrt();
    let rh = (h as f64 * side).round() as usize;
    let rw = (w as f64 * side).round() as usize;
    if rh == 0 || rw == 0 {
        return Err(NoiseError::DegenerateRect);
    }
    let rh = rh.min(h);
    let rw = rw.min(w);
    let y0 = rng.gen_range(0..=h - rh);
    let x0 = rng.gen_range(0..=w - rw);
    Ok(Rect {
        y0,
        x0,
        h: rh,
        w: rw,
    })
}

/// Normalized 1-D Gaussian kernel; size is `2*ceil(2*sigma) + 1`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (2.0 * sigma).ceil() as usize;
    let k = 2 * radius + 1;
    let mut out = vec![0.0; k];
    let mut sum = 0.0;
    for (i, v) in out.iter_mut().enumerate() {
        let d = i as f64 - radius as f64;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *v;
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

fn shape4(tape: &Tape<impl Scalar>, v: Var) -> (usize, usize, usize, usize) {
    let s = tape.shape(v);
    (s[0], s[1], s[2], s[3])
}

/// Replace each pixel (all channels together) by the cover pixel with
/// probability `p`; gradients flow only through retained pixels.
pub fn dropout_mix<T: Scalar>(
    tape: &mut Tape<T>,
    encoded: Var,
    cover: Var,
    p: f64,
    rng: &mut impl Rng,
) -> Result<Var, NoiseError> {
    let (b, c, h, w) = shape4(tape, encoded);
    if p == 0.0 {
        return Ok(encoded);
    }
    let mut keep = vec![T::one(); b * c * h * w];
    let mut repl = vec![T::zero(); b * c * h * w];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                if rng.gen::<f64>() < p {
                    for ci in 0..c {
                        let idx = ((bi * c + ci) * h + y) * w + x;
                        keep[idx] = T::zero();
                        repl[idx] = T::one();
                    }
                }
            }
        }
    }
    let shape = vec![b, c, h, w];
    let keep_t = Tensor::new(shape.clone(), keep)?;
    let repl_t = Tensor::new(shape, repl)?;
    let keep_v = tape.constant(&keep_t);
    let repl_v = tape.constant(&repl_t);
    let kept = tape.mul(encoded, keep_v)?;
    let mixed = tape.mul(cover, repl_v)?;
    Ok(tape.add(kept, mixed)?)
}

fn rect_mask<T: Scalar>(b: usize, c: usize, h: usize, w: usize, rect: Rect, inside: T, outside: T) -> Tensor<T> {
    Tensor::from_fn(vec![b, c, h, w], |i| {
        let y = (i / w) % h;
        let x = i % w;
        let in_rect =
            y >= rect.y0 && y < rect.y0 + rect.h && x >= rect.x0 && x < rect.x0 + rect.w;
        if in_rect {
            inside
        } else {
            outside
        }
    })
}

/// Keep a random rectangle of encoded content, replace the outside with the
/// cover image.
pub fn cropout_mix<T: Scalar>(
    tape: &mut Tape<T>,
    encoded: Var,
    cover: Var,
    keep_ratio: f64,
    rng: &mut impl Rng,
) -> Result<Var, NoiseError> {
    if keep_ratio == 1.0 {
        return Ok(encoded);
    }
    let (b, c, h, w) = shape4(tape, encoded);
    let rect = crop_rect(h, w, keep_ratio, rng)?;
    let keep = rect_mask(b, c, h, w, rect, T::one(), T::zero());
    let repl = rect_mask(b, c, h, w, rect, T::zero(), T::one());
    let keep_v = tape.constant(&keep);
    let repl_v = tape.constant(&repl);
    let kept = tape.mul(encoded, keep_v)?;
    let mixed = tape.mul(cover, repl_v)?;
    Ok(tape.add(kept, mixed)?)
}

/// Keep a random rectangle; zero-fill the rest (output keeps full size so
/// downstream shapes stay static).
pub fn crop_keep<T: Scalar>(
    tape: &mut Tape<T>,
    encoded: Var,
    keep_ratio: f64,
    rng: &mut impl Rng,
) -> Result<Var, NoiseError> {
    if keep_ratio == 1.0 {
        return Ok(encoded);
    }
    let (b, c, h, w) = shape4(tape, encoded);
    let rect = crop_rect(h, w, keep_ratio, rng)?;
    let keep = rect_mask(b, c, h, w, rect, T::one(), T::zero());
    let keep_v = tape.constant(&keep);
    Ok(tape.mul(encoded, keep_v)?)
}

/// Depthwise Gaussian blur with reflect padding; kernel size
/// `2*ceil(2*sigma) + 1`, weights normalized to sum 1.
pub fn gaussian_blur<T: Scalar>(
    tape: &mut Tape<T>,
    encoded: Var,
    sigma: f64,
) -> Result<Var, NoiseError> {
    let kernel = gaussian_kernel(sigma);
    let k = kernel.len();
    let r = k / 2;
    let kt: Vec<T> = kernel.iter().map(|&v| T::from_f64(v)).collect();
    let col = Tensor::new(vec![k, 1], kt.clone())?;
    let row = Tensor::new(vec![1, k], kt)?;
    let col_v = tape.constant(&col);
    let row_v = tape.constant(&row);
    let padded = tape.reflect_pad(encoded, r, r)?;
    let vert = tape.depthwise_conv2d(padded, col_v)?;
    Ok(tape.depthwise_conv2d(vert, row_v)?)
}

/// Additive i.i.d. Gaussian pixel noise; the gradient is the identity.
pub fn gaussian_noise<T: Scalar>(
    tape: &mut Tape<T>,
    encoded: Var,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<Var, NoiseError> {
    if sigma == 0.0 {
        return Ok(encoded);
    }
    let shape = tape.shape(encoded).to_vec();
    let dist = Normal::new(0.0, sigma).expect("positive sigma");
    let noise = Tensor::from_fn(shape, |_| T::from_f64(dist.sample(rng)));
    let noise_v = tape.constant(&noise);
    Ok(tape.add(encoded, noise_v)?)
}

/// Bilinear downscale by `scale` then bilinear upscale back to the original
/// size.
pub fn resize_cycle<T: Scalar>(
    tape: &mut Tape<T>,
    encoded: Var,
    scale: f64,
) -> Result<Var, NoiseError> {
    let (_, _, h, w) = shape4(tape, encoded);
    if scale == 1.0 {
        return Ok(encoded);
    }
    let dh = (h as f64 * scale).round() as usize;
    let dw = (w as f64 * scale).round() as usize;
    if dh < 2 || dw < 2 {
        return Err(NoiseError::TooSmallResize);
    }
    let down = tape.bilinear_resize(encoded, dh, dw)?;
    Ok(tape.bilinear_resize(down, h, w)?)
}

/// Apply one distortion. `cover` is consumed by the mixing kinds; real JPEG
/// refuses to run when `encoded` participates in gradients.
pub fn apply<T: Scalar>(
    tape: &mut Tape<T>,
    spec: NoiseSpec,
    encoded: Var,
    cover: Var,
    rng: &mut impl Rng,
) -> Result<Var, NoiseError> {
    spec.validate()?;
    match spec.kind {
        NoiseKind::Identity => Ok(encoded),
        NoiseKind::Dropout => dropout_mix(tape, encoded, cover, spec.intensity, rng),
        NoiseKind::Cropout => cropout_mix(tape, encoded, cover, spec.intensity, rng),
        NoiseKind::Crop => crop_keep(tape, encoded, spec.intensity, rng),
        NoiseKind::GaussianBlur => gaussian_blur(tape, encoded, spec.intensity),
        NoiseKind::GaussianNoise => gaussian_noise(tape, encoded, spec.intensity, rng),
        NoiseKind::Resize => resize_cycle(tape, encoded, spec.intensity),
        NoiseKind::JpegSim => jpeg::jpeg_sim(tape, encoded, spec.intensity as u32),
        NoiseKind::JpegReal => {
            if tape.needs_grad(encoded) {
                return Err(NoiseError::EvalOnly);
            }
            let out = jpeg::jpeg_real(&tape.value(encoded), spec.intensity as u32)?;
            Ok(tape.constant(&out))
        }
    }
}

/// Apply a distortion to plain tensors (no gradient tracking); the common
/// path for evaluation and sweeps.
pub fn apply_plain<T: Scalar>(
    spec: NoiseSpec,
    encoded: &Tensor<T>,
    cover: &Tensor<T>,
    rng: &mut impl Rng,
) -> Result<Tensor<T>, NoiseError> {
    let mut tape = Tape::new();
    let e = tape.constant(encoded);
    let c = tape.constant(cover);
    let out = apply(&mut tape, spec, e, c, rng)?;
    Ok(tape.value(out))
}

/// Pick one spec uniformly for the whole mini-batch, apply it, and report
/// which was chosen.
pub fn sample_and_apply<T: Scalar>(
    tape: &mut Tape<T>,
    pool: &NoisePool,
    encoded: Var,
    cover: Var,
    rng: &mut impl Rng,
) -> Result<(Var, NoiseSpec), NoiseError> {
    let spec = pool.sample(rng);
    let out = apply(tape, spec, encoded, cover, rng)?;
    Ok((out, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_pair<T: Scalar>(tape: &mut Tape<T>, h: usize, w: usize) -> (Var, Var) {
        let enc = Tensor::from_fn(vec![1, 3, h, w], |i| T::from_f64(((i * 31) % 97) as f64 / 97.0));
        let cov = Tensor::from_fn(vec![1, 3, h, w], |i| T::from_f64(((i * 17) % 89) as f64 / 89.0));
        (tape.constant(&enc), tape.constant(&cov))
    }

    #[test]
    fn spec_syntax_roundtrip() {
        for s in [
            "identity",
            "dropout:0.3",
            "cropout:0.3",
            "crop:0.035",
            "blur:2",
            "gnoise:0.05",
            "resize:0.8",
            "jpeg_sim:50",
            "jpeg:50",
        ] {
            let spec = NoiseSpec::parse(s).unwrap();
            assert_eq!(NoiseSpec::parse(&spec.to_string()).unwrap(), spec);
        }
        assert!(NoiseSpec::parse("sharpen:2").is_err());
        assert!(NoiseSpec::parse("dropout:1.5").is_err());
        assert!(NoiseSpec::parse("jpeg:0").is_err());
    }

    #[test]
    fn identity_passthrough() {
        let mut tape = Tape::<f64>::new();
        let (enc, cov) = test_pair(&mut tape, 16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = apply(&mut tape, NoiseSpec::identity(), enc, cov, &mut rng).unwrap();
        assert_eq!(tape.data(out), tape.data(enc));
    }

    #[test]
    fn zero_intensity_kinds_are_identities() {
        let mut tape = Tape::<f64>::new();
        let (enc, cov) = test_pair(&mut tape, 16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let before = tape.data(enc).to_vec();
        for spec in [
            NoiseSpec {
                kind: NoiseKind::Dropout,
                intensity: 0.0,
            },
            NoiseSpec {
                kind: NoiseKind::Cropout,
                intensity: 1.0,
            },
            NoiseSpec {
                kind: NoiseKind::Crop,
                intensity: 1.0,
            },
            NoiseSpec {
                kind: NoiseKind::GaussianNoise,
                intensity: 0.0,
            },
            NoiseSpec {
                kind: NoiseKind::Resize,
                intensity: 1.0,
            },
        ] {
            let out = apply(&mut tape, spec, enc, cov, &mut rng).unwrap();
            let max = tape
                .data(out)
                .iter()
                .zip(&before)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max < 1e-6, "{spec} not identity: {max}");
        }
    }

    #[test]
    fn dropout_extremes() {
        let mut tape = Tape::<f64>::new();
        let (enc, cov) = test_pair(&mut tape, 16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let all = dropout_mix(&mut tape, enc, cov, 1.0, &mut rng).unwrap();
        assert_eq!(tape.data(all), tape.data(cov));
    }

    #[test]
    fn dropout_rate_monte_carlo() {
        // 1e6 pixels, p = 0.3: replaced fraction within +/- 1%.
        let mut tape = Tape::<f64>::new();
        let enc = Tensor::full(vec![1, 1, 1000, 1000], 1.0);
        let cov = Tensor::full(vec![1, 1, 1000, 1000], 0.0);
        let e = tape.constant(&enc);
        let c = tape.constant(&cov);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = dropout_mix(&mut tape, e, c, 0.3, &mut rng).unwrap();
        let replaced = tape.data(out).iter().filter(|&&v| v == 0.0).count();
        let frac = replaced as f64 / 1e6;
        assert!((frac - 0.3).abs() < 0.01, "replaced fraction {frac}");
    }

    #[test]
    fn cropout_with_equal_images_is_identity() {
        let mut tape = Tape::<f64>::new();
        let enc = Tensor::from_fn(vec![1, 3, 16, 16], |i| (i % 13) as f64);
        let e = tape.constant(&enc);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = cropout_mix(&mut tape, e, e, 0.3, &mut rng).unwrap();
        assert_eq!(tape.data(out), tape.data(e));
    }

    #[test]
    fn rect_sizes_match_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = crop_rect(128, 128, 0.30, &mut rng).unwrap();
        assert_eq!((r.h, r.w), (70, 70));
        let r = crop_rect(128, 128, 0.035, &mut rng).unwrap();
        assert_eq!((r.h, r.w), (24, 24));
        assert_eq!(r.h * r.w, 576);
    }

    #[test]
    fn crop_zeroes_outside_and_counts() {
        let mut tape = Tape::<f64>::new();
        let enc = Tensor::full(vec![1, 1, 128, 128], 1.0);
        let e = tape.constant(&enc);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let out = crop_keep(&mut tape, e, 0.035, &mut rng).unwrap();
        let kept = tape.data(out).iter().filter(|&&v| v != 0.0).count();
        assert_eq!(kept, 576);
    }

    #[test]
    fn blur_kernel_analytic() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 9);
        let sum: f64 = k.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // Matches the normalized analytic Gaussian.
        let raw: Vec<f64> = (0..9)
            .map(|i| (-((i as f64 - 4.0).powi(2)) / (2.0 * 4.0)).exp())
            .collect();
        let rsum: f64 = raw.iter().sum();
        for (a, b) in k.iter().zip(raw.iter().map(|v| v / rsum)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let mut tape = Tape::<f64>::new();
        let enc = Tensor::full(vec![1, 3, 16, 16], 0.42);
        let e = tape.constant(&enc);
        let out = gaussian_blur(&mut tape, e, 2.0).unwrap();
        assert_eq!(tape.shape(out), &[1, 3, 16, 16]);
        for &v in tape.data(out) {
            assert!((v - 0.42).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_noise_statistics() {
        let mut tape = Tape::<f64>::new();
        let enc = Tensor::zeros(vec![1, 1, 1000, 1000]);
        let e = tape.constant(&enc);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let out = gaussian_noise(&mut tape, e, 0.1, &mut rng).unwrap();
        let data = tape.data(out);
        let n = data.len() as f64;
        let mean: f64 = data.iter().sum::<f64>() / n;
        let var: f64 = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * 0.1 / 1000.0, "mean {mean}");
        assert!((var.sqrt() - 0.1).abs() / 0.1 < 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn resize_cycle_constant_unchanged() {
        let mut tape = Tape::<f64>::new();
        let enc = Tensor::full(vec![1, 3, 16, 16], 0.37);
        let e = tape.constant(&enc);
        let out = resize_cycle(&mut tape, e, 0.8).unwrap();
        assert_eq!(tape.shape(out), &[1, 3, 16, 16]);
        for &v in tape.data(out) {
            assert!((v - 0.37).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let run = || {
            let mut tape = Tape::<f64>::new();
            let (enc, cov) = test_pair(&mut tape, 16, 16);
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let out = dropout_mix(&mut tape, enc, cov, 0.3, &mut rng).unwrap();
            tape.data(out).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn pool_sampling_uniform() {
        let pool =
            NoisePool::parse("identity,dropout:0.3,crop:0.035,blur:2.0,resize:0.8,jpeg_sim:50")
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..6000 {
            let s = pool.sample(&mut rng);
            *counts.entry(s.kind.as_str()).or_insert(0usize) += 1;
        }
        for (_, &c) in counts.iter() {
            assert!((c as i64 - 1000).abs() <= 100, "count {c}");
        }
        let singleton = NoisePool::parse("blur:1.0").unwrap();
        for _ in 0..10 {
            assert_eq!(singleton.sample(&mut rng).kind, NoiseKind::GaussianBlur);
        }
    }

    #[test]
    fn jpeg_real_rejected_in_grad_context() {
        let mut tape = Tape::<f64>::new();
        let enc = Tensor::full(vec![1, 3, 16, 16], 0.5);
        let e = tape.leaf(&enc, true);
        let c = tape.constant(&enc);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = NoiseSpec::parse("jpeg:50").unwrap();
        assert!(matches!(
            apply(&mut tape, spec, e, c, &mut rng),
            Err(NoiseError::EvalOnly)
        ));
    }
}
