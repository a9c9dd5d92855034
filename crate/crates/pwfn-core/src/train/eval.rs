//! Frozen-parameter evaluation: embed/extract round trips under the
//! distortion pool, and single sweep points for robustness curves.

use super::TrainError;
use crate::image::{ImageBatch, Role};
use crate::metrics::{bit_accuracy, psnr, ssim};
use crate::model::{hard_threshold, MessageBits, WatermarkModel};
use crate::noise::{apply_plain, NoisePool, NoiseSpec};
use crate::tensor::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic seed derivation for independent evaluation draws.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut z = 0x9E3779B97F4A7C15u64;
    for &p in parts {
        z ^= p.wrapping_add(0x9E3779B97F4A7C15).wrapping_add(z << 6);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, Copy)]
pub struct EvalReport {
    pub psnr: f64,
    pub ssim: f64,
    pub bar_identity: f64,
    pub bar_pool: f64,
    pub n_images: usize,
    pub seed: u64,
}

fn repeat_batch(t: &Tensor<f32>, times: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(t.numel() * times);
    for _ in 0..times {
        data.extend_from_slice(t.data());
    }
    let mut shape = t.shape().to_vec();
    shape[0] = times;
    Tensor::new(shape, data).expect("replicated shape is consistent")
}

fn slice_batch(t: &Tensor<f32>, index: usize) -> Tensor<f32> {
    let plane: usize = t.shape()[1..].iter().product();
    let mut shape = t.shape().to_vec();
    shape[0] = 1;
    Tensor::new(
        shape,
        t.data()[index * plane..(index + 1) * plane].to_vec(),
    )
    .expect("slice shape is consistent")
}

fn stack_batch(parts: &[Tensor<f32>]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(parts.len() * parts[0].numel());
    for p in parts {
        data.extend_from_slice(p.data());
    }
    let mut shape = parts[0].shape().to_vec();
    shape[0] = parts.len();
    Tensor::new(shape, data).expect("stacked shape is consistent")
}

fn random_messages(model: &WatermarkModel, count: usize, seed: u64) -> MessageBits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MessageBits::random(count, model.config().message_len, &mut rng)
}

/// Mean embedding quality and recovery accuracy over a held-out image set:
/// PSNR/SSIM between cover and encoded, bit accuracy with no distortion and
/// averaged over every pool entry (fresh distortion draw per sample).
pub fn evaluate(
    model: &WatermarkModel,
    store: &ParamStore<f32>,
    holdout: &ImageBatch<f32>,
    pool: &NoisePool,
    messages_per_image: usize,
    seed: u64,
) -> Result<EvalReport, TrainError> {
    let n = holdout.batch();
    let m = messages_per_image;
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut bar_id_sum = 0.0;
    let mut bar_pool_sum = 0.0;
    let mut pairs = 0usize;

    for i in 0..n {
        let cover = slice_batch(holdout.tensor(), i);
        let cover_rep = repeat_batch(&cover, m);
        let messages = random_messages(model, m, mix_seed(&[seed, i as u64, 0xA11CE]));
        let encoded = model.embed(store, &cover_rep, &messages)?;

        let cover_img = ImageBatch::new(cover_rep.clone(), Role::Cover)?;
        let encoded_img = ImageBatch::new(encoded.clone(), Role::Encoded)?;
        for j in 0..m {
            let a = cover_img.single(j)?;
            let b = encoded_img.single(j)?;
            psnr_sum += psnr(&a, &b)?;
            ssim_sum += ssim(&a, &b)?;
            pairs += 1;
        }

        let (_, got) = model.extract(store, &encoded)?;
        bar_id_sum += bit_accuracy(&messages, &got)? * m as f64;

        for (k, &spec) in pool.specs().iter().enumerate() {
            let noised_parts: Vec<Tensor<f32>> = (0..m)
                .map(|j| {
                    let enc_j = slice_batch(&encoded, j);
                    let cov_j = slice_batch(&cover_rep, j);
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                        seed, i as u64, j as u64, k as u64,
                    ]));
                    apply_plain(spec, &enc_j, &cov_j, &mut rng)
                })
                .collect::<Result<_, _>>()?;
            let noised = stack_batch(&noised_parts);
            let (_, got) = model.extract(store, &noised)?;
            bar_pool_sum += bit_accuracy(&messages, &got)? * m as f64;
        }
    }

    let total = pairs as f64;
    Ok(EvalReport {
        psnr: psnr_sum / total,
        ssim: ssim_sum / total,
        bar_identity: bar_id_sum / total,
        bar_pool: bar_pool_sum / (total * pool.specs().len() as f64),
        n_images: n,
        seed,
    })
}

/// One robustness sweep point.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub kind: String,
    pub intensity: f64,
    pub bar_mean: f64,
    pub bar_std: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub n: usize,
    pub seed: u64,
}

impl SweepRow {
    pub fn csv_header() -> &'static str {
        "noise_kind,intensity,bar_mean,bar_std,psnr,ssim,n,seed"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.4},{:.6},{},{}",
            self.kind,
            self.intensity,
            self.bar_mean,
            self.bar_std,
            self.psnr,
            self.ssim,
            self.n,
            self.seed
        )
    }
}

/// Evaluate one distortion at one intensity over images x messages; BAR is
/// per-sample (independent distortion draws), PSNR/SSIM compare cover and
/// encoded.
pub fn sweep_point(
    model: &WatermarkModel,
    store: &ParamStore<f32>,
    covers: &ImageBatch<f32>,
    spec: NoiseSpec,
    messages_per_image: usize,
    seed: u64,
) -> Result<SweepRow, TrainError> {
    let n = covers.batch();
    let m = messages_per_image;
    let mut bars: Vec<f64> = Vec::with_capacity(n * m);
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;

    let spec_tag = mix_seed(&[spec.kind.as_str().len() as u64, spec.intensity.to_bits()]);
    for i in 0..n {
        let cover = slice_batch(covers.tensor(), i);
        let cover_rep = repeat_batch(&cover, m);
        let messages = random_messages(model, m, mix_seed(&[seed, i as u64, 0xA11CE]));
        let encoded = model.embed(store, &cover_rep, &messages)?;

        let cover_img = ImageBatch::new(cover_rep.clone(), Role::Cover)?;
        let encoded_img = ImageBatch::new(encoded.clone(), Role::Encoded)?;
        for j in 0..m {
            psnr_sum += psnr(&cover_img.single(j)?, &encoded_img.single(j)?)?;
            ssim_sum += ssim(&cover_img.single(j)?, &encoded_img.single(j)?)?;
        }

        let noised_parts: Vec<Tensor<f32>> = (0..m)
            .map(|j| {
                let enc_j = slice_batch(&encoded, j);
                let cov_j = slice_batch(&cover_rep, j);
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                    seed, spec_tag, i as u64, j as u64,
                ]));
                apply_plain(spec, &enc_j, &cov_j, &mut rng)
            })
            .collect::<Result<_, _>>()?;
        let noised = stack_batch(&noised_parts);
        let (_, got) = model.extract(store, &noised)?;
        for j in 0..m {
            bars.push(bit_accuracy(&messages.single(j), &got.single(j))?);
        }
    }

    let count = bars.len() as f64;
    let mean = bars.iter().sum::<f64>() / count;
    let var = bars.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / count;
    Ok(SweepRow {
        kind: spec.kind.as_str().to_string(),
        intensity: spec.intensity,
        bar_mean: mean,
        bar_std: var.sqrt(),
        psnr: psnr_sum / count,
        ssim: ssim_sum / count,
        n: bars.len(),
        seed,
    })
}
