//! Pooling, padding and resampling ops.

use super::tape::{BackFn, Tape, Var};
use super::{Scalar, Tensor, TensorError};

/// Per-output-pixel source taps for 1-D bilinear resampling with the
/// half-pixel-center convention. Resampling to the same size is exact
/// identity (`w0 = 1`, `x0 = x`).
pub(crate) fn bilinear_taps(in_dim: usize, out_dim: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = in_dim as f64 / out_dim as f64;
    (0..out_dim)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let src = src.max(0.0).min(in_dim as f64 - 1.0);
            let x0 = src.floor() as usize;
            let x1 = (x0 + 1).min(in_dim - 1);
            let frac = src - x0 as f64;
            (x0, x1, 1.0 - frac, frac)
        })
        .collect()
}

/// Bilinear resample of a plain (B,C,H,W) tensor, shared by the tape op and
/// image ingestion.
pub fn bilinear_resize_tensor<T: Scalar>(
    x: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>, TensorError> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "bilinear_resize",
            expected: "(B,C,H,W)".into(),
            got: s.to_vec(),
        });
    }
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::EmptyOutput {
            op: "bilinear_resize",
        });
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let mut out = Tensor::zeros(vec![b, c, out_h, out_w]);
    let od = out.data_mut();
    for (plane_out, plane_in) in od.chunks_mut(out_h * out_w).zip(x.data().chunks(h * w)) {
        bilinear_plane(plane_in, w, &ty, &tx, plane_out);
    }
    Ok(out)
}

fn bilinear_plane<T: Scalar>(
    plane_in: &[T],
    w: usize,
    ty: &[(usize, usize, f64, f64)],
    tx: &[(usize, usize, f64, f64)],
    plane_out: &mut [T],
) {
    let ow = tx.len();
    for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
            let v = plane_in[y0 * w + x0].to_f64() * (wy0 * wx0)
                + plane_in[y0 * w + x1].to_f64() * (wy0 * wx1)
                + plane_in[y1 * w + x0].to_f64() * (wy1 * wx0)
                + plane_in[y1 * w + x1].to_f64() * (wy1 * wx1);
            plane_out[oy * ow + ox] = T::from_f64(v);
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Reflect (mirror without repeating the edge) padding of the two
    /// spatial dimensions, same amount on both sides of each axis.
    pub fn reflect_pad(&mut self, x: Var, pad_h: usize, pad_w: usize) -> Result<Var, TensorError> {
        self.reflect_pad_asym(x, (pad_h, pad_h), (pad_w, pad_w))
    }

    /// Reflect padding with independent (before, after) amounts per axis.
    pub fn reflect_pad_asym(
        &mut self,
        x: Var,
        pad_h: (usize, usize),
        pad_w: (usize, usize),
    ) -> Result<Var, TensorError> {
        self.check(x)?;
        let s = self.nodes[x.index].shape.clone();
        if s.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "reflect_pad",
                expected: "(B,C,H,W)".into(),
                got: s,
            });
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let max_h = pad_h.0.max(pad_h.1);
        let max_w = pad_w.0.max(pad_w.1);
        if max_h >= h || max_w >= w {
            return Err(TensorError::InvalidArg {
                op: "reflect_pad",
                msg: format!("padding ({max_h},{max_w}) must be smaller than dims ({h},{w})"),
            });
        }
        let (nh, nw) = (h + pad_h.0 + pad_h.1, w + pad_w.0 + pad_w.1);
        let reflect = |i: isize, n: usize| -> usize {
            if i < 0 {
                (-i) as usize
            } else if i as usize >= n {
                2 * n - 2 - i as usize
            } else {
                i as usize
            }
        };
        let xd = &self.nodes[x.index].data;
        let mut data = vec![T::zero(); b * c * nh * nw];
        for (plane_out, plane_in) in data.chunks_mut(nh * nw).zip(xd.chunks(h * w)) {
            for ny in 0..nh {
                let sy = reflect(ny as isize - pad_h.0 as isize, h);
                for nx in 0..nw {
                    let sx = reflect(nx as isize - pad_w.0 as isize, w);
                    plane_out[ny * nw + nx] = plane_in[sy * w + sx];
                }
            }
        }
        let needs = self.nodes[x.index].needs_grad;
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, _nodes, sink| {
                sink.accum(x, |g| {
                    for (plane_g, plane_out) in g.chunks_mut(h * w).zip(gout.chunks(nh * nw)) {
                        for ny in 0..nh {
                            let sy = reflect(ny as isize - pad_h.0 as isize, h);
                            for nx in 0..nw {
                                let sx = reflect(nx as isize - pad_w.0 as isize, w);
                                plane_g[sy * w + sx] += plane_out[ny * nw + nx];
                            }
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.push(data, vec![b, c, nh, nw], needs, bk))
    }

    /// Average pooling with square window `k` and the given stride; the
    /// output size must be integral.
    pub fn avg_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var, TensorError> {
        self.check(x)?;
        let s = self.nodes[x.index].shape.clone();
        if s.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "avg_pool2d",
                expected: "(B,C,H,W)".into(),
                got: s,
            });
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        if k == 0 || stride == 0 || k > h || k > w {
            return Err(TensorError::EmptyOutput { op: "avg_pool2d" });
        }
        if (h - k) % stride != 0 || (w - k) % stride != 0 {
            return Err(TensorError::InvalidArg {
                op: "avg_pool2d",
                msg: "output size not integral".into(),
            });
        }
        let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
        let inv = T::from_f64(1.0 / (k * k) as f64);
        let xd = &self.nodes[x.index].data;
        let mut data = vec![T::zero(); b * c * oh * ow];
        for (plane_out, plane_in) in data.chunks_mut(oh * ow).zip(xd.chunks(h * w)) {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for ky in 0..k {
                        for kx in 0..k {
                            acc += plane_in[(oy * stride + ky) * w + ox * stride + kx];
                        }
                    }
                    plane_out[oy * ow + ox] = acc * inv;
                }
            }
        }
        let needs = self.nodes[x.index].needs_grad;
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, _nodes, sink| {
                sink.accum(x, |g| {
                    for (plane_g, plane_out) in g.chunks_mut(h * w).zip(gout.chunks(oh * ow)) {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = plane_out[oy * ow + ox] * inv;
                                for ky in 0..k {
                                    for kx in 0..k {
                                        plane_g[(oy * stride + ky) * w + ox * stride + kx] += gv;
                                    }
                                }
                            }
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.push(data, vec![b, c, oh, ow], needs, bk))
    }

    /// Spatial mean per channel: (B,C,H,W) -> (B,C).
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let s = self.nodes[x.index].shape.clone();
        if s.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "global_avg_pool",
                expected: "(B,C,H,W)".into(),
                got: s,
            });
        }
        let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
        let inv = T::from_f64(1.0 / hw as f64);
        let xd = &self.nodes[x.index].data;
        let data: Vec<T> = xd
            .chunks(hw)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        let needs = self.nodes[x.index].needs_grad;
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, _nodes, sink| {
                sink.accum(x, |g| {
                    for (plane_g, &go) in g.chunks_mut(hw).zip(gout) {
                        let gv = go * inv;
                        for v in plane_g.iter_mut() {
                            *v += gv;
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.push(data, vec![b, c], needs, bk))
    }

    /// Pixel replication by integer factors per spatial axis.
    pub fn nearest_upsample(&mut self, x: Var, fy: usize, fx: usize) -> Result<Var, TensorError> {
        self.check(x)?;
        let s = self.nodes[x.index].shape.clone();
        if s.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "nearest_upsample",
                expected: "(B,C,H,W)".into(),
                got: s,
            });
        }
        if fy == 0 || fx == 0 {
            return Err(TensorError::EmptyOutput {
                op: "nearest_upsample",
            });
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (nh, nw) = (h * fy, w * fx);
        let xd = &self.nodes[x.index].data;
        let mut data = vec![T::zero(); b * c * nh * nw];
        for (plane_out, plane_in) in data.chunks_mut(nh * nw).zip(xd.chunks(h * w)) {
            for ny in 0..nh {
                let sy = ny / fy;
                for nx in 0..nw {
                    plane_out[ny * nw + nx] = plane_in[sy * w + nx / fx];
                }
            }
        }
        let needs = self.nodes[x.index].needs_grad;
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, _nodes, sink| {
                sink.accum(x, |g| {
                    for (plane_g, plane_out) in g.chunks_mut(h * w).zip(gout.chunks(nh * nw)) {
                        for ny in 0..nh {
                            let sy = ny / fy;
                            for nx in 0..nw {
                                plane_g[sy * w + nx / fx] += plane_out[ny * nw + nx];
                            }
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.push(data, vec![b, c, nh, nw], needs, bk))
    }

    /// Differentiable bilinear resize to an explicit output size.
    pub fn bilinear_resize(
        &mut self,
        x: Var,
        out_h: usize,
        out_w: usize,
    ) -> Result<Var, TensorError> {
        self.check(x)?;
        let s = self.nodes[x.index].shape.clone();
        if s.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "bilinear_resize",
                expected: "(B,C,H,W)".into(),
                got: s,
            });
        }
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::EmptyOutput {
                op: "bilinear_resize",
            });
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let xd = &self.nodes[x.index].data;
        let mut data = vec![T::zero(); b * c * out_h * out_w];
        for (plane_out, plane_in) in data.chunks_mut(out_h * out_w).zip(xd.chunks(h * w)) {
            bilinear_plane(plane_in, w, &ty, &tx, plane_out);
        }
        let needs = self.nodes[x.index].needs_grad;
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, _nodes, sink| {
                sink.accum(x, |g| {
                    for (plane_g, plane_out) in
                        g.chunks_mut(h * w).zip(gout.chunks(out_h * out_w))
                    {
                        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                                let go = plane_out[oy * tx.len() + ox];
                                plane_g[y0 * w + x0] += go * T::from_f64(wy0 * wx0);
                                plane_g[y0 * w + x1] += go * T::from_f64(wy0 * wx1);
                                plane_g[y1 * w + x0] += go * T::from_f64(wy1 * wx0);
                                plane_g[y1 * w + x1] += go * T::from_f64(wy1 * wx1);
                            }
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.push(data, vec![b, c, out_h, out_w], needs, bk))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Tape, Tensor};
    use super::*;

    #[test]
    fn gap_of_constant_channels() {
        let mut data = Vec::new();
        for c in 0..3 {
            data.extend(std::iter::repeat(c as f64 * 0.25).take(16));
        }
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::new(vec![1, 3, 4, 4], data).unwrap(), false);
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.shape(y), &[1, 3]);
        for (c, &v) in tape.data(y).iter().enumerate() {
            assert!((v - c as f64 * 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_upsample_block_replicates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(
            &Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            false,
        );
        let y = tape.nearest_upsample(x, 2, 2).unwrap();
        assert_eq!(
            tape.data(y),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn same_size_bilinear_is_identity() {
        let t = Tensor::<f64>::from_fn(vec![1, 1, 5, 7], |i| (i as f64).sin());
        let r = bilinear_resize_tensor(&t, 5, 7).unwrap();
        assert_eq!(r.data(), t.data());
    }

    #[test]
    fn reflect_pad_mirrors_without_edge_repeat() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(
            &Tensor::new(vec![1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            false,
        );
        let y = tape.reflect_pad(x, 0, 2).unwrap();
        assert_eq!(tape.data(y), &[3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn zero_output_dim_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::zeros(vec![1, 1, 4, 4]), false);
        assert!(tape.bilinear_resize(x, 0, 2).is_err());
    }

    #[test]
    fn avg_pool_means() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::from_fn(vec![1, 1, 2, 2], |i| i as f64), false);
        let y = tape.avg_pool2d(x, 2, 2).unwrap();
        assert_eq!(tape.data(y), &[1.5]);
    }
}
