//! Small dense matmul kernels and the affine (linear) op.

use super::tape::{BackFn, Tape, Var};
use super::{Scalar, TensorError};

/// C[m,n] += A[m,k] @ B[k,n], row-major. Accumulation order is fixed, so
/// results are deterministic.
pub(super) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// C[k,n] += A^T @ B where A is [m,k] and B is [m,n].
pub(super) fn matmul_at_b_acc<T: Scalar>(
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    c: &mut [T],
) {
    debug_assert_eq!(c.len(), k * n);
    for p in 0..m {
        let arow = &a[p * k..(p + 1) * k];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

pub(super) fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

impl<T: Scalar> Tape<T> {
    /// Affine map: `x (B,N) @ w^T (N,M) + bias (M)` -> `(B,M)`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(w)?;
        self.check(bias)?;
        let xs = self.nodes[x.index].shape.clone();
        let ws = self.nodes[w.index].shape.clone();
        let bs = self.nodes[bias.index].shape.clone();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                expected: format!("x (B,N) with w (M,N); x = {xs:?}"),
                got: ws,
            });
        }
        let (b, n, m) = (xs[0], xs[1], ws[0]);
        if bs != [m] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                expected: format!("bias ({m})"),
                got: bs,
            });
        }
        let xd = &self.nodes[x.index].data;
        let wd = &self.nodes[w.index].data;
        let bd = &self.nodes[bias.index].data;
        let mut data = vec![T::zero(); b * m];
        // out = x @ w^T: rows of w are output units.
        let wt = transpose(wd, m, n);
        matmul_acc(xd, &wt, b, n, m, &mut data);
        for row in data.chunks_mut(m) {
            for (o, &bv) in row.iter_mut().zip(bd) {
                *o += bv;
            }
        }
        let needs = self.any_needs_grad(&[x, w, bias]);
        let bk: Option<BackFn<T>> = if needs {
            Some(Box::new(move |gout, nodes, sink| {
                let xd = &nodes[x.index].data;
                let wd = &nodes[w.index].data;
                if sink.wants(x) {
                    // dX = g (B,M) @ W (M,N)
                    let mut dx = vec![T::zero(); b * n];
                    matmul_acc(gout, wd, b, m, n, &mut dx);
                    sink.add_slice(x, &dx);
                }
                if sink.wants(w) {
                    // dW = g^T (M,B) @ X (B,N)
                    let mut dw = vec![T::zero(); m * n];
                    matmul_at_b_acc(gout, xd, b, m, n, &mut dw);
                    sink.add_slice(w, &dw);
                }
                if sink.wants(bias) {
                    sink.accum(bias, |g| {
                        for row in gout.chunks(m) {
                            for (gi, &gv) in g.iter_mut().zip(row) {
                                *gi += gv;
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        Ok(self.push(data, vec![b, m], needs, bk))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Tape, Tensor};

    #[test]
    fn identity_weight_passthrough() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(
            &Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            false,
        );
        let w = tape.leaf(
            &Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            false,
        );
        let b = tape.leaf(&Tensor::zeros(vec![2]), false);
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.data(y), tape.data(x));
    }

    #[test]
    fn hand_arithmetic() {
        // [1,2] with rows [1,1] and [0,1] -> [3,2].
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(), false);
        let w = tape.leaf(
            &Tensor::new(vec![2, 2], vec![1.0, 1.0, 0.0, 1.0]).unwrap(),
            false,
        );
        let b = tape.leaf(&Tensor::zeros(vec![2]), false);
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.data(y), &[3.0, 2.0]);
    }

    #[test]
    fn inner_dim_mismatch_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::zeros(vec![1, 3]), false);
        let w = tape.leaf(&Tensor::zeros(vec![2, 2]), false);
        let b = tape.leaf(&Tensor::zeros(vec![2]), false);
        assert!(tape.linear(x, w, b).is_err());
    }
}
