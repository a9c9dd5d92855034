//! JPEG distortions: a differentiable coefficient-masking surrogate used in
//! training, and a real quantize/dequantize codec for evaluation.
//!
//! Both share the same blockwise DCT and BT.601 full-range color transform
//! with 4:4:4 sampling, so the pair differs only in how coefficients are
//! attenuated. The surrogate zeroes every coefficient whose quality-scaled
//! quantization step exceeds [`MASK_STEP_THRESHOLD`] and keeps the rest
//! untouched, which leaves usable gradients everywhere; the real codec
//! rounds every coefficient to its quantization grid.

use super::NoiseError;
use crate::tensor::{transform_block, Scalar, Tape, Tensor, TensorError, Var, BLOCK};

/// Base luminance quantization table (8x8, row-major).
pub const BASE_LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Base chrominance quantization table (8x8, row-major).
pub const BASE_CHROMA: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Coefficients whose scaled quantization step exceeds this are zeroed by
/// the training surrogate. At quality 50 the scale factor is 100, so the
/// base tables apply unchanged and steps above 30 are masked.
pub const MASK_STEP_THRESHOLD: u16 = 30;

/// Quality-to-scale factor: `5000/q` below 50, `200 - 2q` at and above.
pub fn ijg_scale(quality: u32) -> u32 {
    let q = quality.clamp(1, 100);
    if q < 50 {
        5000 / q
    } else {
        200 - 2 * q
    }
}

/// Scale a base table by quality, clamping each step into [1, 255].
pub fn scaled_quant_table(base: &[u16; 64], quality: u32) -> [u16; 64] {
    let scale = ijg_scale(quality);
    let mut out = [0u16; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = (((b as u32 * scale) + 50) / 100).clamp(1, 255) as u16;
    }
    out
}

// BT.601 full-range RGB <-> YCbCr. Chroma offsets are folded in so every
// channel is centered on zero for the DCT, matching the usual -128 level
// shift of the byte-valued codec.
const RGB_TO_YCC: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.168_735_892, -0.331_264_108, 0.5],
    [0.5, -0.418_687_589, -0.081_312_411],
];
const YCC_TO_RGB: [[f64; 3]; 3] = [
    [1.0, 0.0, 1.402],
    [1.0, -0.344_136_286, -0.714_136_286],
    [1.0, 1.772, 0.0],
];
const CENTER: [f64; 3] = [-0.5, 0.0, 0.0];
// Every inverse row carries Y with weight 1, so undoing the level shift
// after the matrix adds 0.5 to each RGB channel.
const UNCENTER: [f64; 3] = [0.5, 0.0, 0.0];
const UNCENTER_RGB: [f64; 3] = [0.5, 0.5, 0.5];

fn pad_to_block<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<(Var, usize, usize), TensorError> {
    let s = tape.shape(x);
    let (h, w) = (s[2], s[3]);
    let ph = (BLOCK - h % BLOCK) % BLOCK;
    let pw = (BLOCK - w % BLOCK) % BLOCK;
    if ph == 0 && pw == 0 {
        return Ok((x, h, w));
    }
    let padded = tape.reflect_pad_asym(x, (ph / 2, ph - ph / 2), (pw / 2, pw - pw / 2))?;
    Ok((padded, h, w))
}

fn crop_back<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    orig_h: usize,
    orig_w: usize,
) -> Result<Var, TensorError> {
    let s = tape.shape(x);
    let (h, w) = (s[2], s[3]);
    if h == orig_h && w == orig_w {
        return Ok(x);
    }
    let off_h = (h - orig_h) / 2;
    let off_w = (w - orig_w) / 2;
    let row = tape.narrow(x, 2, off_h, orig_h)?;
    tape.narrow(row, 3, off_w, orig_w)
}

/// 0/1 mask over one tiled plane for the given table and quality.
fn mask_for(table: &[u16; 64], quality: u32) -> [f64; 64] {
    let steps = scaled_quant_table(table, quality);
    let mut m = [0.0; 64];
    for (o, &s) in m.iter_mut().zip(&steps) {
        *o = if s <= MASK_STEP_THRESHOLD { 1.0 } else { 0.0 };
    }
    m
}

/// Differentiable JPEG surrogate: color transform, blockwise DCT, zero out
/// heavily-quantized frequencies, inverse transform. Linear end to end, so
/// gradients flow to every kept coefficient.
pub fn jpeg_sim<T: Scalar>(
    tape: &mut Tape<T>,
    encoded: Var,
    quality: u32,
) -> Result<Var, NoiseError> {
    if !(1..=100).contains(&quality) {
        return Err(NoiseError::BadIntensity {
            kind: "jpeg_sim",
            value: quality as f64,
            range: "[1,100]",
        });
    }
    let (padded, oh, ow) = pad_to_block(tape, encoded)?;
    let ycc = tape.channel_mix(padded, RGB_TO_YCC, CENTER)?;
    let coeffs = tape.dct8x8(ycc, false)?;

    let s = tape.shape(coeffs).to_vec();
    let (b, h, w) = (s[0], s[2], s[3]);
    let luma = mask_for(&BASE_LUMA, quality);
    let chroma = mask_for(&BASE_CHROMA, quality);
    let mask = Tensor::from_fn(vec![b, 3, h, w], |i| {
        let c = (i / (h * w)) % 3;
        let y = (i / w) % h;
        let x = i % w;
        let entry = (y % BLOCK) * BLOCK + (x % BLOCK);
        let m = if c == 0 { luma[entry] } else { chroma[entry] };
        T::from_f64(m)
    });
    let mask_v = tape.constant(&mask);
    let masked = tape.mul(coeffs, mask_v)?;

    let back = tape.dct8x8(masked, true)?;
    let rgb = tape.channel_mix(back, YCC_TO_RGB, UNCENTER_RGB)?;
    Ok(crop_back(tape, rgb, oh, ow)?)
}

/// Real JPEG round trip (quantize with rounding, dequantize) on plain data;
/// deterministic and eval-only.
pub fn jpeg_real<T: Scalar>(image: &Tensor<T>, quality: u32) -> Result<Tensor<T>, NoiseError> {
    if !(1..=100).contains(&quality) {
        return Err(NoiseError::BadIntensity {
            kind: "jpeg",
            value: quality as f64,
            range: "[1,100]",
        });
    }
    let s = image.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(NoiseError::Tensor(TensorError::ShapeMismatch {
            op: "jpeg_real",
            expected: "(B,3,H,W)".into(),
            got: s.to_vec(),
        }));
    }
    let (b, h, w) = (s[0], s[2], s[3]);
    let ph = (BLOCK - h % BLOCK) % BLOCK;
    let pw = (BLOCK - w % BLOCK) % BLOCK;
    let (fh, fw) = (h + ph, w + pw);
    let reflect = |i: isize, n: usize| -> usize {
        if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * n - 2 - i as usize
        } else {
            i as usize
        }
    };

    let q_luma = scaled_quant_table(&BASE_LUMA, quality);
    let q_chroma = scaled_quant_table(&BASE_CHROMA, quality);

    let mut out = Tensor::zeros(s.to_vec());
    for bi in 0..b {
        // Color transform into centered YCbCr planes, padded to block size,
        // in byte units for the quantizer.
        let mut planes = vec![0.0f64; 3 * fh * fw];
        for fy in 0..fh {
            let sy = reflect(fy as isize - (ph / 2) as isize, h);
            for fx in 0..fw {
                let sx = reflect(fx as isize - (pw / 2) as isize, w);
                let r = image.at4(bi, 0, sy, sx).to_f64();
                let g = image.at4(bi, 1, sy, sx).to_f64();
                let bl = image.at4(bi, 2, sy, sx).to_f64();
                for (c, row) in RGB_TO_YCC.iter().enumerate() {
                    let v = row[0] * r + row[1] * g + row[2] * bl + CENTER[c];
                    planes[c * fh * fw + fy * fw + fx] = v * 255.0;
                }
            }
        }

        let mut blk = [0.0f64; 64];
        let mut freq = [0.0f64; 64];
        for c in 0..3 {
            let table = if c == 0 { &q_luma } else { &q_chroma };
            let plane = &mut planes[c * fh * fw..(c + 1) * fh * fw];
            for by in (0..fh).step_by(BLOCK) {
                for bx in (0..fw).step_by(BLOCK) {
                    for y in 0..BLOCK {
                        for x in 0..BLOCK {
                            blk[y * BLOCK + x] = plane[(by + y) * fw + bx + x];
                        }
                    }
                    transform_block(&blk, false, &mut freq);
                    for (f, &q) in freq.iter_mut().zip(table.iter()) {
                        let qf = q as f64;
                        *f = (*f / qf).round() * qf;
                    }
                    transform_block(&freq, true, &mut blk);
                    for y in 0..BLOCK {
                        for x in 0..BLOCK {
                            plane[(by + y) * fw + bx + x] = blk[y * BLOCK + x];
                        }
                    }
                }
            }
        }

        // Back to RGB in [0,1], cropping the padding away.
        let off_h = ph / 2;
        let off_w = pw / 2;
        for y in 0..h {
            for x in 0..w {
                let idx = (y + off_h) * fw + x + off_w;
                let yv = planes[idx] / 255.0;
                let cb = planes[fh * fw + idx] / 255.0;
                let cr = planes[2 * fh * fw + idx] / 255.0;
                let ycc = [yv + UNCENTER[0], cb, cr];
                for (c, row) in YCC_TO_RGB.iter().enumerate() {
                    let v = row[0] * ycc[0] + row[1] * ycc[1] + row[2] * ycc[2];
                    let plane = 3 * h * w * bi + c * h * w;
                    out.data_mut()[plane + y * w + x] = T::from_f64(v.clamp(0.0, 1.0));
                }
            }
        }
    }
    Ok(out)
}
