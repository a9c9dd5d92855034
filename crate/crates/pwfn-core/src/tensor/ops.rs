//! Elementwise, shape and loss operations.

use super::tape::{BackFn, Tape, Var};
use super::{Scalar, TensorError};

/// How two operand shapes line up: identical, or one side broadcast from a
/// leading batch dimension of 1. No other broadcasting is supported.
#[derive(Clone, Copy, PartialEq)]
enum Pairing {
    Same,
    LhsBatchOne,
    RhsBatchOne,
}

fn pair_shapes(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<(Pairing, Vec<usize>), TensorError> {
    if a == b {
        return Ok((Pairing::Same, a.to_vec()));
    }
    if a.len() == b.len() && a.len() >= 2 && a[1..] == b[1..] {
        if a[0] == 1 {
            return Ok((Pairing::LhsBatchOne, b.to_vec()));
        }
        if b[0] == 1 {
            return Ok((Pairing::RhsBatchOne, a.to_vec()));
        }
    }
    let axis = a
        .iter()
        .zip(b.iter())
        .position(|(x, y)| x != y)
        .unwrap_or(0);
    Err(TensorError::DimMismatch {
        op,
        axis,
        left: a.get(axis).copied().unwrap_or(0),
        right: b.get(axis).copied().unwrap_or(0),
    })
}

impl<T: Scalar> Tape<T> {
    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        back: impl Fn(Pairing, Var, Var) -> BackFn<T>,
    ) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(b)?;
        let (pairing, out_shape) =
            pair_shapes(op, &self.nodes[a.index].shape, &self.nodes[b.index].shape)?;
        let (ad, bd) = (&self.nodes[a.index].data, &self.nodes[b.index].data);
        let data = match pairing {
            Pairing::Same => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Pairing::LhsBatchOne => {
                let chunk = ad.len();
                bd.chunks(chunk)
                    .flat_map(|bc| ad.iter().zip(bc).map(|(&x, &y)| f(x, y)))
                    .collect()
            }
            Pairing::RhsBatchOne => {
                let chunk = bd.len();
                ad.chunks(chunk)
                    .flat_map(|ac| ac.iter().zip(bd).map(|(&x, &y)| f(x, y)))
                    .collect()
            }
        };
        let needs = self.any_needs_grad(&[a, b]);
        let bk = if needs {
            Some(back(pairing, a, b))
        } else {
            None
        };
        Ok(self.push(data, out_shape, needs, bk))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(
            "add",
            a,
            b,
            |x, y| x + y,
            |pairing, a, b| {
                Box::new(move |gout, _nodes, sink| {
                    accum_bcast(sink, a, pairing != Pairing::LhsBatchOne, gout, None);
                    accum_bcast(sink, b, pairing != Pairing::RhsBatchOne, gout, None);
                })
            },
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(
            "sub",
            a,
            b,
            |x, y| x - y,
            |pairing, a, b| {
                Box::new(move |gout, _nodes, sink| {
                    accum_bcast(sink, a, pairing != Pairing::LhsBatchOne, gout, None);
                    let neg: Vec<T> = gout.iter().map(|&g| -g).collect();
                    accum_bcast(sink, b, pairing != Pairing::RhsBatchOne, &neg, None);
                })
            },
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(
            "mul",
            a,
            b,
            |x, y| x * y,
            |pairing, a, b| {
                Box::new(move |gout, nodes, sink| {
                    let (ad, bd) = (&nodes[a.index].data, &nodes[b.index].data);
                    if sink.wants(a) {
                        let da: Vec<T> = match pairing {
                            Pairing::LhsBatchOne => gout
                                .chunks(ad.len())
                                .zip(bd.chunks(ad.len()))
                                .fold(vec![T::zero(); ad.len()], |mut acc, (gc, bc)| {
                                    for ((av, &g), &y) in acc.iter_mut().zip(gc).zip(bc) {
                                        *av += g * y;
                                    }
                                    acc
                                }),
                            Pairing::RhsBatchOne => gout
                                .chunks(bd.len())
                                .flat_map(|gc| gc.iter().zip(bd).map(|(&g, &y)| g * y))
                                .collect(),
                            Pairing::Same => {
                                gout.iter().zip(bd).map(|(&g, &y)| g * y).collect()
                            }
                        };
                        sink.add_slice(a, &da);
                    }
                    if sink.wants(b) {
                        let db: Vec<T> = match pairing {
                            Pairing::RhsBatchOne => gout
                                .chunks(bd.len())
                                .zip(ad.chunks(bd.len()))
                                .fold(vec![T::zero(); bd.len()], |mut acc, (gc, ac)| {
                                    for ((bv, &g), &x) in acc.iter_mut().zip(gc).zip(ac) {
                                        *bv += g * x;
                                    }
                                    acc
                                }),
                            Pairing::LhsBatchOne => gout
                                .chunks(ad.len())
                                .flat_map(|gc| gc.iter().zip(ad).map(|(&g, &x)| g * x))
                                .collect(),
                            Pairing::Same => {
                                gout.iter().zip(ad).map(|(&g, &x)| g * x).collect()
                            }
                        };
                        sink.add_slice(b, &db);
                    }
                })
            },
        )
    }

    fn unary(
        &mut self,
        v: Var,
        f: impl Fn(T) -> T,
        back: impl Fn(Var, Var) -> BackFn<T>,
    ) -> Result<Var, TensorError> {
        self.check(v)?;
        let data: Vec<T> = self.nodes[v.index].data.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[v.index].shape.clone();
        let needs = self.nodes[v.index].needs_grad;
        let out_index = self.nodes.len();
        let out = Var {
            tape: v.tape,
            index: out_index,
        };
        let bk = if needs { Some(back(v, out)) } else { None };
        Ok(self.push(data, shape, needs, bk))
    }

    pub fn add_scalar(&mut self, v: Var, c: T) -> Result<Var, TensorError> {
        self.unary(
            v,
            |x| x + c,
            |v, _| Box::new(move |gout, _nodes, sink| sink.add_slice(v, gout)),
        )
    }

    pub fn mul_scalar(&mut self, v: Var, c: T) -> Result<Var, TensorError> {
        self.unary(
            v,
            |x| x * c,
            |v, _| {
                Box::new(move |gout, _nodes, sink| {
                    sink.accum(v, |g| {
                        for (gi, &go) in g.iter_mut().zip(gout) {
                            *gi += go * c;
                        }
                    })
                })
            },
        )
    }

    pub fn neg(&mut self, v: Var) -> Result<Var, TensorError> {
        self.mul_scalar(v, -T::one())
    }

    pub fn relu(&mut self, v: Var) -> Result<Var, TensorError> {
        self.unary(
            v,
            |x| if x > T::zero() { x } else { T::zero() },
            |v, _| {
                Box::new(move |gout, nodes, sink| {
                    let xd = &nodes[v.index].data;
                    sink.accum(v, |g| {
                        for ((gi, &go), &x) in g.iter_mut().zip(gout).zip(xd) {
                            if x > T::zero() {
                                *gi += go;
                            }
                        }
                    })
                })
            },
        )
    }

    pub fn leaky_relu(&mut self, v: Var, slope: T) -> Result<Var, TensorError> {
        self.unary(
            v,
            |x| if x > T::zero() { x } else { slope * x },
            move |v, _| {
                Box::new(move |gout, nodes, sink| {
                    let xd = &nodes[v.index].data;
                    sink.accum(v, |g| {
                        for ((gi, &go), &x) in g.iter_mut().zip(gout).zip(xd) {
                            *gi += if x > T::zero() { go } else { go * slope };
                        }
                    })
                })
            },
        )
    }

    pub fn sigmoid(&mut self, v: Var) -> Result<Var, TensorError> {
        self.unary(
            v,
            |x| T::one() / (T::one() + (-x).exp()),
            |v, out| {
                Box::new(move |gout, nodes, sink| {
                    let s = &nodes[out.index].data;
                    sink.accum(v, |g| {
                        for ((gi, &go), &sv) in g.iter_mut().zip(gout).zip(s) {
                            *gi += go * sv * (T::one() - sv);
                        }
                    })
                })
            },
        )
    }

    pub fn tanh(&mut self, v: Var) -> Result<Var, TensorError> {
        self.unary(
            v,
            |x| x.tanh(),
            |v, out| {
                Box::new(move |gout, nodes, sink| {
                    let t = &nodes[out.index].data;
                    sink.accum(v, |g| {
                        for ((gi, &go), &tv) in g.iter_mut().zip(gout).zip(t) {
                            *gi += go * (T::one() - tv * tv);
                        }
                    })
                })
            },
        )
    }

    pub fn reshape(&mut self, v: Var, shape: impl Into<Vec<usize>>) -> Result<Var, TensorError> {
        self.check(v)?;
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        let node = &self.nodes[v.index];
        if expected != node.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ShapeData {
                shape,
                expected,
                got: node.data.len(),
            });
        }
        let data = node.data.clone();
        let needs = node.needs_grad;
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, _nodes, sink| {
                sink.add_slice(v, gout);
            }))
        } else {
            None
        };
        Ok(self.push(data, shape, needs, bk))
    }

    /// Concatenate along `axis`; every other dimension must agree.
    pub fn concat(&mut self, vars: &[Var], axis: usize) -> Result<Var, TensorError> {
        if vars.is_empty() {
            return Err(TensorError::InvalidArg {
                op: "concat",
                msg: "no inputs".into(),
            });
        }
        for &v in vars {
            self.check(v)?;
        }
        let first = self.nodes[vars[0].index].shape.clone();
        if axis >= first.len() {
            return Err(TensorError::InvalidArg {
                op: "concat",
                msg: format!("axis {axis} out of range for rank {}", first.len()),
            });
        }
        let mut axis_total = 0usize;
        for &v in vars {
            let s = &self.nodes[v.index].shape;
            if s.len() != first.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    expected: format!("rank {}", first.len()),
                    got: s.clone(),
                });
            }
            for (d, (&a, &b)) in first.iter().zip(s.iter()).enumerate() {
                if d != axis && a != b {
                    return Err(TensorError::DimMismatch {
                        op: "concat",
                        axis: d,
                        left: a,
                        right: b,
                    });
                }
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let out_numel = outer * axis_total * inner;
        let mut data = vec![T::zero(); out_numel];
        let mut offset = 0usize;
        let mut spans = Vec::with_capacity(vars.len());
        for &v in vars {
            let s = &self.nodes[v.index].shape;
            let len = s[axis];
            let src = &self.nodes[v.index].data;
            for o in 0..outer {
                let dst_start = (o * axis_total + offset) * inner;
                let src_start = o * len * inner;
                data[dst_start..dst_start + len * inner]
                    .copy_from_slice(&src[src_start..src_start + len * inner]);
            }
            spans.push((v, offset, len));
            offset += len;
        }
        let needs = self.any_needs_grad(vars);
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, _nodes, sink| {
                for &(v, off, len) in &spans {
                    sink.accum(v, |g| {
                        for o in 0..outer {
                            let src_start = (o * axis_total + off) * inner;
                            let dst_start = o * len * inner;
                            for i in 0..len * inner {
                                g[dst_start + i] += gout[src_start + i];
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        Ok(self.push(data, out_shape, needs, bk))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(
        &mut self,
        v: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, TensorError> {
        self.check(v)?;
        let shape = self.nodes[v.index].shape.clone();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(TensorError::InvalidArg {
                op: "narrow",
                msg: format!("axis {axis} range {start}..{} on {shape:?}", start + len),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut out_shape = shape;
        out_shape[axis] = len;
        let src = &self.nodes[v.index].data;
        let mut data = vec![T::zero(); outer * len * inner];
        for o in 0..outer {
            let src_start = (o * full + start) * inner;
            let dst_start = o * len * inner;
            data[dst_start..dst_start + len * inner]
                .copy_from_slice(&src[src_start..src_start + len * inner]);
        }
        let needs = self.nodes[v.index].needs_grad;
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, _nodes, sink| {
                sink.accum(v, |g| {
                    for o in 0..outer {
                        let dst_start = (o * full + start) * inner;
                        let src_start = o * len * inner;
                        for i in 0..len * inner {
                            g[dst_start + i] += gout[src_start + i];
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.push(data, out_shape, needs, bk))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, v: Var) -> Result<Var, TensorError> {
        self.check(v)?;
        let s: T = self.nodes[v.index].data.iter().copied().sum();
        let needs = self.nodes[v.index].needs_grad;
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, _nodes, sink| {
                let g0 = gout[0];
                sink.accum(v, |g| {
                    for gi in g.iter_mut() {
                        *gi += g0;
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.push(vec![s], vec![1], needs, bk))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, v: Var) -> Result<Var, TensorError> {
        self.check(v)?;
        let n = self.nodes[v.index].data.len();
        if n == 0 {
            return Err(TensorError::EmptyOutput { op: "mean" });
        }
        let inv = T::from_f64(1.0 / n as f64);
        let s = self.sum(v)?;
        self.mul_scalar(s, inv)
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check(a)?;
        self.check(b)?;
        if self.nodes[a.index].shape != self.nodes[b.index].shape {
            return Err(TensorError::ShapeMismatch {
                op: "mse",
                expected: format!("{:?}", self.nodes[a.index].shape),
                got: self.nodes[b.index].shape.clone(),
            });
        }
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Numerically stable mean binary cross-entropy on logits.
    /// Targets must be exactly 0 or 1.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var, TensorError> {
        self.check(logits)?;
        self.check(targets)?;
        if self.nodes[logits.index].shape != self.nodes[targets.index].shape {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                expected: format!("{:?}", self.nodes[logits.index].shape),
                got: self.nodes[targets.index].shape.clone(),
            });
        }
        if self.nodes[targets.index]
            .data
            .iter()
            .any(|&t| t != T::zero() && t != T::one())
        {
            return Err(TensorError::InvalidArg {
                op: "bce_with_logits",
                msg: "targets must be 0 or 1".into(),
            });
        }
        let n = self.nodes[logits.index].data.len();
        let inv_n = T::from_f64(1.0 / n as f64);
        let total: T = self.nodes[logits.index]
            .data
            .iter()
            .zip(&self.nodes[targets.index].data)
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln())
            .sum();
        let loss = total * inv_n;
        let needs = self.any_needs_grad(&[logits, targets]);
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, nodes, sink| {
                let g0 = gout[0] * inv_n;
                let zd = &nodes[logits.index].data;
                let td = &nodes[targets.index].data;
                if sink.wants(logits) {
                    sink.accum(logits, |g| {
                        for ((gi, &z), &t) in g.iter_mut().zip(zd).zip(td) {
                            let s = T::one() / (T::one() + (-z).exp());
                            *gi += g0 * (s - t);
                        }
                    });
                }
                if sink.wants(targets) {
                    sink.accum(targets, |g| {
                        for (gi, &z) in g.iter_mut().zip(zd) {
                            *gi += -g0 * z;
                        }
                    });
                }
            }))
        } else {
            None
        };
        Ok(self.push(vec![loss], vec![1], needs, bk))
    }

    /// Multiply each channel of `x` (B,C,H,W) by a per-sample gate (B,C).
    pub fn scale_channels(&mut self, x: Var, gate: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(gate)?;
        let xs = self.nodes[x.index].shape.clone();
        let gs = self.nodes[gate.index].shape.clone();
        if xs.len() != 4 || gs.len() != 2 || xs[0] != gs[0] || xs[1] != gs[1] {
            return Err(TensorError::ShapeMismatch {
                op: "scale_channels",
                expected: format!("x (B,C,H,W) with gate (B,C); x = {xs:?}"),
                got: gs,
            });
        }
        let (b, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let xd = &self.nodes[x.index].data;
        let gd = &self.nodes[gate.index].data;
        let mut data = vec![T::zero(); xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let gv = gd[bi * c + ci];
                let base = (bi * c + ci) * hw;
                for i in 0..hw {
                    data[base + i] = xd[base + i] * gv;
                }
            }
        }
        let needs = self.any_needs_grad(&[x, gate]);
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, nodes, sink| {
                let xd = &nodes[x.index].data;
                let gd = &nodes[gate.index].data;
                if sink.wants(x) {
                    sink.accum(x, |g| {
                        for bi in 0..b {
                            for ci in 0..c {
                                let gv = gd[bi * c + ci];
                                let base = (bi * c + ci) * hw;
                                for i in 0..hw {
                                    g[base + i] += gout[base + i] * gv;
                                }
                            }
                        }
                    });
                }
                if sink.wants(gate) {
                    sink.accum(gate, |g| {
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * hw;
                                let mut acc = T::zero();
                                for i in 0..hw {
                                    acc += gout[base + i] * xd[base + i];
                                }
                                g[bi * c + ci] += acc;
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        Ok(self.push(data, xs, needs, bk))
    }

    /// Fixed 3x3 linear color transform with per-channel offsets:
    /// `out[co] = sum_ci m[co][ci] * x[ci] + off[co]`.
    pub fn channel_mix(
        &mut self,
        x: Var,
        m: [[f64; 3]; 3],
        off: [f64; 3],
    ) -> Result<Var, TensorError> {
        self.check(x)?;
        let xs = self.nodes[x.index].shape.clone();
        if xs.len() != 4 || xs[1] != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "channel_mix",
                expected: "(B,3,H,W)".into(),
                got: xs,
            });
        }
        let (b, hw) = (xs[0], xs[2] * xs[3]);
        let mt: Vec<T> = m
            .iter()
            .flat_map(|r| r.iter().map(|&v| T::from_f64(v)))
            .collect();
        let ot: Vec<T> = off.iter().map(|&v| T::from_f64(v)).collect();
        let xd = &self.nodes[x.index].data;
        let mut data = vec![T::zero(); xd.len()];
        for bi in 0..b {
            let base = bi * 3 * hw;
            for i in 0..hw {
                let (r, g, bl) = (xd[base + i], xd[base + hw + i], xd[base + 2 * hw + i]);
                for co in 0..3 {
                    data[base + co * hw + i] =
                        mt[co * 3] * r + mt[co * 3 + 1] * g + mt[co * 3 + 2] * bl + ot[co];
                }
            }
        }
        let needs = self.nodes[x.index].needs_grad;
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, _nodes, sink| {
                sink.accum(x, |g| {
                    for bi in 0..b {
                        let base = bi * 3 * hw;
                        for i in 0..hw {
                            for ci in 0..3 {
                                let mut acc = T::zero();
                                for co in 0..3 {
                                    acc += mt[co * 3 + ci] * gout[base + co * hw + i];
                                }
                                g[base + ci * hw + i] += acc;
                            }
                        }
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.push(data, xs, needs, bk))
    }
}

/// Accumulate `gout` into `v`, collapsing the leading batch axis when the
/// operand was broadcast from batch size 1.
fn accum_bcast<T: Scalar>(
    sink: &mut super::tape::GradSink<'_, T>,
    v: Var,
    direct: bool,
    gout: &[T],
    _marker: Option<()>,
) {
    if direct {
        sink.add_slice(v, gout);
    } else {
        sink.accum(v, |g| {
            for chunk in gout.chunks(g.len()) {
                for (gi, &go) in g.iter_mut().zip(chunk) {
                    *gi += go;
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Tape, Tensor};

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(
            &Tensor::new(vec![1, 4], vec![0.0, -1.0, 2.0, -2.0]).unwrap(),
            false,
        );
        let s = tape.sigmoid(x).unwrap();
        assert_eq!(tape.data(s)[0], 0.5);
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.data(r), &[0.0, 0.0, 2.0, 0.0]);
        let l = tape.leaky_relu(x, 0.2).unwrap();
        assert!((l, tape.data(l)[3] - (-0.4)).1.abs() < 1e-12);
    }

    #[test]
    fn add_broadcast_leading_batch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(
            &Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            true,
        );
        let b = tape.leaf(&Tensor::new(vec![1, 2], vec![10.0, 20.0]).unwrap(), true);
        let y = tape.add(a, b).unwrap();
        assert_eq!(tape.data(y), &[11.0, 22.0, 13.0, 24.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(b).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn mismatched_shapes_error() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(&Tensor::zeros(vec![2, 3]), false);
        let b = tape.leaf(&Tensor::zeros(vec![2, 4]), false);
        assert!(tape.add(a, b).is_err());
    }

    #[test]
    fn concat_then_narrow_roundtrip() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(&Tensor::from_fn(vec![2, 3, 2, 2], |i| i as f64), true);
        let b = tape.leaf(&Tensor::from_fn(vec![2, 3, 2, 2], |i| -(i as f64)), true);
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[2, 6, 2, 2]);
        let a2 = tape.narrow(c, 1, 0, 3).unwrap();
        let b2 = tape.narrow(c, 1, 3, 3).unwrap();
        assert_eq!(tape.data(a2), tape.data(a));
        assert_eq!(tape.data(b2), tape.data(b));
        // Gradient of sum splits into all-ones per input.
        let s = tape.sum(c).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(a).unwrap().iter().all(|&g| g == 1.0));
        assert!(tape.grad(b).unwrap().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn mse_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::new(vec![2], vec![0.0, 0.0]).unwrap(), false);
        let y = tape.leaf(&Tensor::new(vec![2], vec![1.0, 1.0]).unwrap(), false);
        let m = tape.mse(x, y).unwrap();
        assert_eq!(tape.scalar_value(m), 1.0);
        let m0 = tape.mse(x, x).unwrap();
        assert_eq!(tape.scalar_value(m0), 0.0);
    }

    #[test]
    fn bce_at_zero_logit() {
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(&Tensor::scalar(0.0), false);
        let t = tape.leaf(&Tensor::scalar(1.0), false);
        let l = tape.bce_with_logits(z, t).unwrap();
        assert!((tape.scalar_value(l) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_soft_targets() {
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(&Tensor::scalar(0.0), false);
        let t = tape.leaf(&Tensor::scalar(0.5), false);
        assert!(tape.bce_with_logits(z, t).is_err());
    }

    #[test]
    fn mse_gradient_matches_analytic_2x2() {
        // Linear map out = x W^T with W rows as output units, then
        // mse(out, 0). Hand-worked gradient: [[3,3],[7,7]].
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap(), false);
        let w = tape.leaf(
            &Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            true,
        );
        let b = tape.leaf(&Tensor::zeros(vec![2]), false);
        let out = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.data(out), &[3.0, 7.0]);
        let y = tape.leaf(&Tensor::zeros(vec![1, 2]), false);
        let loss = tape.mse(out, y).unwrap();
        assert_eq!(tape.scalar_value(loss), 29.0);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[3.0, 3.0, 7.0, 7.0]);
    }
}
