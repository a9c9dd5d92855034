//! 2-D convolution (cross-correlation) via im2col plus matmul, and a
//! shared-kernel depthwise convolution used by the blur distortion.

use super::linalg::{matmul_acc, matmul_at_b_acc, transpose};
use super::tape::{BackFn, Tape, Var};
use super::{Scalar, TensorError};
use rayon::prelude::*;

#[derive(Clone, Copy)]
struct ConvDims {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims(
    xs: &[usize],
    ws: &[usize],
    stride: usize,
    pad: usize,
) -> Result<ConvDims, TensorError> {
    if xs.len() != 4 || ws.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            expected: "x (B,C,H,W) and w (O,C,k,k)".into(),
            got: if xs.len() != 4 { xs.to_vec() } else { ws.to_vec() },
        });
    }
    if ws[2] != ws[3] {
        return Err(TensorError::InvalidArg {
            op: "conv2d",
            msg: format!("kernel must be square, got {}x{}", ws[2], ws[3]),
        });
    }
    if xs[1] != ws[1] {
        return Err(TensorError::DimMismatch {
            op: "conv2d",
            axis: 1,
            left: xs[1],
            right: ws[1],
        });
    }
    let (c, h, w, o, k) = (xs[1], xs[2], xs[3], ws[0], ws[2]);
    if k < 1 || stride < 1 {
        return Err(TensorError::InvalidArg {
            op: "conv2d",
            msg: "kernel size and stride must be >= 1".into(),
        });
    }
    let span_h = (h + 2 * pad).checked_sub(k).ok_or(TensorError::InvalidArg {
        op: "conv2d",
        msg: format!("kernel {k} larger than padded input height {}", h + 2 * pad),
    })?;
    let span_w = (w + 2 * pad).checked_sub(k).ok_or(TensorError::InvalidArg {
        op: "conv2d",
        msg: format!("kernel {k} larger than padded input width {}", w + 2 * pad),
    })?;
    if span_h % stride != 0 || span_w % stride != 0 {
        return Err(TensorError::InvalidArg {
            op: "conv2d",
            msg: format!(
                "output size not integral: (dim + 2*{pad} - {k}) must divide stride {stride}"
            ),
        });
    }
    let (oh, ow) = (span_h / stride + 1, span_w / stride + 1);
    Ok(ConvDims {
        c,
        h,
        w,
        o,
        k,
        stride,
        pad,
        oh,
        ow,
    })
}

fn im2col<T: Scalar>(x: &[T], d: ConvDims, col: &mut [T]) {
    let ColP { k, oh, ow, .. } = ColP::from(d);
    let plane = d.h * d.w;
    for c in 0..d.c {
        let xc = &x[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    let dst = row + oy * ow;
                    if iy < 0 || iy >= d.h as isize {
                        col[dst..dst + ow].fill(T::zero());
                        continue;
                    }
                    let xrow = &xc[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..ow {
                        let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                        col[dst + ox] = if ix < 0 || ix >= d.w as isize {
                            T::zero()
                        } else {
                            xrow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_acc<T: Scalar>(col: &[T], d: ConvDims, dx: &mut [T]) {
    let ColP { k, oh, ow, .. } = ColP::from(d);
    let plane = d.h * d.w;
    for c in 0..d.c {
        let xc = &mut dx[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let src = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            xc[iy as usize * d.w + ix as usize] += col[src + ox];
                        }
                    }
                }
            }
        }
    }
}

struct ColP {
    k: usize,
    oh: usize,
    ow: usize,
}

impl From<ConvDims> for ColP {
    fn from(d: ConvDims) -> Self {
        ColP {
            k: d.k,
            oh: d.oh,
            ow: d.ow,
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation of `x (B,C,H,W)` with `w (O,C,k,k)` plus `bias (O)`.
    /// The output size `(dim + 2*padding - k)/stride + 1` must be integral.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(w)?;
        self.check(bias)?;
        let xs = self.nodes[x.index].shape.clone();
        let ws = self.nodes[w.index].shape.clone();
        let d = conv_dims(&xs, &ws, stride, padding)?;
        if self.nodes[bias.index].shape != [d.o] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                expected: format!("bias ({})", d.o),
                got: self.nodes[bias.index].shape.clone(),
            });
        }
        let b = xs[0];
        let xd = &self.nodes[x.index].data;
        let wd = &self.nodes[w.index].data;
        let bd = &self.nodes[bias.index].data;
        let (ckk, ohw) = (d.c * d.k * d.k, d.oh * d.ow);
        let in_plane = d.c * d.h * d.w;
        let out_plane = d.o * ohw;
        let mut data = vec![T::zero(); b * out_plane];
        data.par_chunks_mut(out_plane)
            .zip(xd.par_chunks(in_plane))
            .for_each(|(out_img, x_img)| {
                let mut col = vec![T::zero(); ckk * ohw];
                im2col(x_img, d, &mut col);
                matmul_acc(wd, &col, d.o, ckk, ohw, out_img);
                for (oc, chunk) in out_img.chunks_mut(ohw).enumerate() {
                    let bv = bd[oc];
                    for v in chunk.iter_mut() {
                        *v += bv;
                    }
                }
            });
        let needs = self.any_needs_grad(&[x, w, bias]);
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, nodes, sink| {
                let xd = &nodes[x.index].data;
                let wd = &nodes[w.index].data;
                let want_x = sink.wants(x);
                let want_w = sink.wants(w);
                let parts: Vec<(Vec<T>, Vec<T>)> = gout
                    .par_chunks(out_plane)
                    .zip(xd.par_chunks(in_plane))
                    .map(|(g_img, x_img)| {
                        let mut col = vec![T::zero(); ckk * ohw];
                        im2col(x_img, d, &mut col);
                        let dx_img = if want_x {
                            let mut dcol = vec![T::zero(); ckk * ohw];
                            matmul_at_b_acc(wd, g_img, d.o, ckk, ohw, &mut dcol);
                            let mut dx = vec![T::zero(); in_plane];
                            col2im_acc(&dcol, d, &mut dx);
                            dx
                        } else {
                            Vec::new()
                        };
                        let dw_img = if want_w {
                            let colt = transpose(&col, ckk, ohw);
                            let mut dw = vec![T::zero(); d.o * ckk];
                            matmul_acc(g_img, &colt, d.o, ohw, ckk, &mut dw);
                            dw
                        } else {
                            Vec::new()
                        };
                        (dx_img, dw_img)
                    })
                    .collect();
                if want_x {
                    sink.accum(x, |g| {
                        for (bi, (dx_img, _)) in parts.iter().enumerate() {
                            let dst = &mut g[bi * in_plane..(bi + 1) * in_plane];
                            for (a, &v) in dst.iter_mut().zip(dx_img) {
                                *a += v;
                            }
                        }
                    });
                }
                if want_w {
                    sink.accum(w, |g| {
                        for (_, dw_img) in &parts {
                            for (a, &v) in g.iter_mut().zip(dw_img) {
                                *a += v;
                            }
                        }
                    });
                }
                if sink.wants(bias) {
                    sink.accum(bias, |g| {
                        for g_img in gout.chunks(out_plane) {
                            for (oc, chunk) in g_img.chunks(ohw).enumerate() {
                                let mut acc = T::zero();
                                for &v in chunk {
                                    acc += v;
                                }
                                g[oc] += acc;
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        Ok(self.push(data, vec![b, d.o, d.oh, d.ow], needs, bk))
    }

    /// Valid (no padding, stride 1) convolution of every channel with one
    /// shared `(kh, kw)` kernel.
    pub fn depthwise_conv2d(&mut self, x: Var, kernel: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(kernel)?;
        let xs = self.nodes[x.index].shape.clone();
        let ks = self.nodes[kernel.index].shape.clone();
        if xs.len() != 4 || ks.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "depthwise_conv2d",
                expected: "x (B,C,H,W) and kernel (kh,kw)".into(),
                got: if xs.len() != 4 { xs } else { ks },
            });
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (kh, kw) = (ks[0], ks[1]);
        if kh > h || kw > w {
            return Err(TensorError::EmptyOutput {
                op: "depthwise_conv2d",
            });
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let kd = self.nodes[kernel.index].data.clone();
        let xd = &self.nodes[x.index].data;
        let mut data = vec![T::zero(); b * c * oh * ow];
        for (plane_out, plane_in) in data.chunks_mut(oh * ow).zip(xd.chunks(h * w)) {
            for ki in 0..kh {
                for kj in 0..kw {
                    let kv = kd[ki * kw + kj];
                    if kv == T::zero() {
                        continue;
                    }
                    for oy in 0..oh {
                        let src = &plane_in[(oy + ki) * w + kj..(oy + ki) * w + kj + ow];
                        let dst = &mut plane_out[oy * ow..(oy + 1) * ow];
                        for (o, &s) in dst.iter_mut().zip(src) {
                            *o += kv * s;
                        }
                    }
                }
            }
        }
        let needs = self.any_needs_grad(&[x, kernel]);
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, nodes, sink| {
                if sink.wants(x) {
                    let kd = &nodes[kernel.index].data;
                    sink.accum(x, |g| {
                        for (plane_g, plane_out) in g.chunks_mut(h * w).zip(gout.chunks(oh * ow)) {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let kv = kd[ki * kw + kj];
                                    if kv == T::zero() {
                                        continue;
                                    }
                                    for oy in 0..oh {
                                        for ox in 0..ow {
                                            plane_g[(oy + ki) * w + (ox + kj)] +=
                                                kv * plane_out[oy * ow + ox];
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
                if sink.wants(kernel) {
                    let xd = &nodes[x.index].data;
                    sink.accum(kernel, |g| {
                        for (plane_in, plane_out) in xd.chunks(h * w).zip(gout.chunks(oh * ow)) {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let mut acc = T::zero();
                                    for oy in 0..oh {
                                        for ox in 0..ow {
                                            acc += plane_in[(oy + ki) * w + (ox + kj)]
                                                * plane_out[oy * ow + ox];
                                        }
                                    }
                                    g[ki * kw + kj] += acc;
                                }
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        Ok(self.push(data, vec![b, c, oh, ow], needs, bk))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Tape, Tensor};

    #[test]
    fn identity_kernel_is_identity() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::from_fn(vec![1, 1, 3, 3], |i| i as f64), false);
        let w = tape.leaf(&Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(), false);
        let b = tape.leaf(&Tensor::zeros(vec![1]), false);
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.data(y), tape.data(x));
    }

    #[test]
    fn all_ones_window_sums() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::full(vec![1, 1, 3, 3], 1.0), false);
        let w = tape.leaf(&Tensor::full(vec![1, 1, 3, 3], 1.0), false);
        let b = tape.leaf(&Tensor::zeros(vec![1]), false);
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
        assert_eq!(tape.data(y), &[9.0]);
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::zeros(vec![1, 3, 4, 4]), false);
        let w = tape.leaf(&Tensor::zeros(vec![2, 2, 3, 3]), false);
        let b = tape.leaf(&Tensor::zeros(vec![2]), false);
        let err = tape.conv2d(x, w, b, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("axis 1"), "{msg}");
    }

    #[test]
    fn non_integral_output_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::zeros(vec![1, 1, 16, 16]), false);
        let w = tape.leaf(&Tensor::zeros(vec![1, 1, 3, 3]), false);
        let b = tape.leaf(&Tensor::zeros(vec![1]), false);
        assert!(tape.conv2d(x, w, b, 2, 1).is_err());
    }

    #[test]
    fn strided_4x4_halves_even_dims() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::zeros(vec![2, 3, 16, 16]), false);
        let w = tape.leaf(&Tensor::zeros(vec![5, 3, 4, 4]), false);
        let b = tape.leaf(&Tensor::zeros(vec![5]), false);
        let y = tape.conv2d(x, w, b, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[2, 5, 8, 8]);
    }

    #[test]
    fn depthwise_impulse_reproduces_kernel() {
        let mut tape = Tape::<f64>::new();
        let mut img = Tensor::zeros(vec![1, 1, 5, 5]);
        img.data_mut()[2 * 5 + 2] = 1.0;
        let x = tape.leaf(&img, false);
        let k = tape.leaf(
            &Tensor::new(vec![3, 3], (1..=9).map(|v| v as f64).collect()).unwrap(),
            false,
        );
        let y = tape.depthwise_conv2d(x, k).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 3, 3]);
        // Cross-correlation with a centered impulse yields the kernel
        // rotated by 180 degrees.
        assert_eq!(
            tape.data(y),
            &[9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0]
        );
    }
}
