//! Orthonormal 8x8 blockwise DCT-II as a differentiable op.
//!
//! With the orthonormal basis matrix `D`, the forward transform of a block
//! `X` is `D X D^T` and the inverse is `D^T X D`; each is the other's exact
//! adjoint, which is also the backward rule.

use super::tape::{BackFn, Tape, Var};
use super::{Scalar, TensorError};

pub const BLOCK: usize = 8;

/// Orthonormal DCT-II basis for N = 8.
pub fn dct_basis() -> [[f64; BLOCK]; BLOCK] {
    let mut d = [[0.0; BLOCK]; BLOCK];
    let n = BLOCK as f64;
    for (u, row) in d.iter_mut().enumerate() {
        let alpha = if u == 0 {
            (1.0 / n).sqrt()
        } else {
            (2.0 / n).sqrt()
        };
        for (i, v) in row.iter_mut().enumerate() {
            *v = alpha
                * ((2.0 * i as f64 + 1.0) * u as f64 * std::f64::consts::PI / (2.0 * n)).cos();
        }
    }
    d
}

/// `out = D block D^T` (forward) or `D^T block D` (inverse) on one 8x8 block.
pub fn transform_block(block: &[f64; 64], inverse: bool, out: &mut [f64; 64]) {
    let d = dct_basis();
    let mut tmp = [0.0; 64];
    // tmp = M block, with M = D or D^T
    for r in 0..BLOCK {
        for c in 0..BLOCK {
            let mut acc = 0.0;
            for k in 0..BLOCK {
                let m = if inverse { d[k][r] } else { d[r][k] };
                acc += m * block[k * BLOCK + c];
            }
            tmp[r * BLOCK + c] = acc;
        }
    }
    // out = tmp M^T
    for r in 0..BLOCK {
        for c in 0..BLOCK {
            let mut acc = 0.0;
            for k in 0..BLOCK {
                let m = if inverse { d[k][c] } else { d[c][k] };
                acc += tmp[r * BLOCK + k] * m;
            }
            out[r * BLOCK + c] = acc;
        }
    }
}

fn transform_planes<T: Scalar>(data: &[T], h: usize, w: usize, inverse: bool, out: &mut [T]) {
    let mut blk = [0.0f64; 64];
    let mut res = [0.0f64; 64];
    for (plane_out, plane_in) in out.chunks_mut(h * w).zip(data.chunks(h * w)) {
        for by in (0..h).step_by(BLOCK) {
            for bx in (0..w).step_by(BLOCK) {
                for y in 0..BLOCK {
                    for x in 0..BLOCK {
                        blk[y * BLOCK + x] = plane_in[(by + y) * w + bx + x].to_f64();
                    }
                }
                transform_block(&blk, inverse, &mut res);
                for y in 0..BLOCK {
                    for x in 0..BLOCK {
                        plane_out[(by + y) * w + bx + x] = T::from_f64(res[y * BLOCK + x]);
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Blockwise 8x8 DCT (or inverse DCT) over each channel plane. Spatial
    /// dimensions must be multiples of 8.
    pub fn dct8x8(&mut self, x: Var, inverse: bool) -> Result<Var, TensorError> {
        self.check(x)?;
        let s = self.nodes[x.index].shape.clone();
        if s.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "dct8x8",
                expected: "(B,C,H,W)".into(),
                got: s,
            });
        }
        let (h, w) = (s[2], s[3]);
        if h % BLOCK != 0 || w % BLOCK != 0 {
            return Err(TensorError::InvalidArg {
                op: "dct8x8",
                msg: format!("spatial dims ({h},{w}) must be multiples of 8"),
            });
        }
        let xd = &self.nodes[x.index].data;
        let mut data = vec![T::zero(); xd.len()];
        transform_planes(xd, h, w, inverse, &mut data);
        let needs = self.nodes[x.index].needs_grad;
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, _nodes, sink| {
                sink.accum(x, |g| {
                    let mut dg = vec![T::zero(); gout.len()];
                    transform_planes(gout, h, w, !inverse, &mut dg);
                    for (gi, &v) in g.iter_mut().zip(&dg) {
                        *gi += v;
                    }
                });
            }))
        } else {
            None
        };
        Ok(self.push(data, s, needs, bk))
    }
}
