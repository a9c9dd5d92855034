//! The recording tape: op graph construction and reverse-mode backward.

use super::param::{ParamId, ParamStore};
use super::{Scalar, Tensor, TensorError};
use std::sync::atomic::{AtomicU64, Ordering};

static TAPE_IDS: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    pub(super) tape: u64,
    pub(super) index: usize,
}

pub(super) struct Node<T> {
    pub data: Vec<T>,
    pub shape: Vec<usize>,
    pub needs_grad: bool,
}

pub(super) type BackFn<T> = Box<dyn FnOnce(&[T], &[Node<T>], &mut GradSink<'_, T>)>;

/// Gradient accumulator handed to backward rules. Contributions for variables
/// that do not require gradients are silently dropped.
pub struct GradSink<'a, T: Scalar> {
    grads: &'a mut [Option<Vec<T>>],
    nodes: &'a [Node<T>],
}

impl<'a, T: Scalar> GradSink<'a, T> {
    /// Accumulate into the gradient buffer of `v` (allocated on first use).
    pub fn accum(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.index].needs_grad {
            return;
        }
        let n = self.nodes[v.index].data.len();
        let slot = self.grads[v.index].get_or_insert_with(|| vec![T::zero(); n]);
        f(slot);
    }

    pub fn add_slice(&mut self, v: Var, delta: &[T]) {
        self.accum(v, |g| {
            for (gi, di) in g.iter_mut().zip(delta) {
                *gi += *di;
            }
        });
    }

    pub fn wants(&self, v: Var) -> bool {
        self.nodes[v.index].needs_grad
    }
}

/// Define-by-run op recorder. Rebuilt for every forward pass; `backward`
/// may run exactly once per tape.
pub struct Tape<T: Scalar> {
    id: u64,
    pub(super) nodes: Vec<Node<T>>,
    pub(super) backs: Vec<Option<BackFn<T>>>,
    param_leaves: Vec<(ParamId, Var)>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backs: Vec::new(),
            param_leaves: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub(super) fn check(&self, v: Var) -> Result<(), TensorError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(())
    }

    pub(super) fn push(
        &mut self,
        data: Vec<T>,
        shape: Vec<usize>,
        needs_grad: bool,
        back: Option<BackFn<T>>,
    ) -> Var {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced on tape (shape {shape:?})"
        );
        let index = self.nodes.len();
        self.nodes.push(Node {
            data,
            shape,
            needs_grad,
        });
        self.backs.push(if needs_grad { back } else { None });
        Var {
            tape: self.id,
            index,
        }
    }

    /// New leaf from a tensor value, optionally participating in gradients.
    pub fn leaf(&mut self, t: &Tensor<T>, requires_grad: bool) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), requires_grad, None)
    }

    /// Constant leaf (never receives gradients).
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn zeros(&mut self, shape: impl Into<Vec<usize>>) -> Var {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        self.push(vec![T::zero(); n], shape, false, None)
    }

    /// Constant tensor filled with one value.
    pub fn full_like(&mut self, shape: &[usize], value: T) -> Var {
        let n: usize = shape.iter().product();
        self.push(vec![value; n], shape.to_vec(), false, None)
    }

    /// Read a named parameter onto the tape. Trainable reads are registered
    /// so their gradients can be harvested after `backward`.
    pub fn param(
        &mut self,
        store: &ParamStore<T>,
        id: ParamId,
        trainable: bool,
    ) -> Result<Var, TensorError> {
        let p = store.get(id)?;
        let v = self.leaf(p.value(), trainable);
        if trainable {
            self.param_leaves.push((id, v));
        }
        Ok(v)
    }

    /// Copy of `v`'s value that does not propagate gradients.
    pub fn detach(&mut self, v: Var) -> Result<Var, TensorError> {
        self.check(v)?;
        let (data, shape) = {
            let n = &self.nodes[v.index];
            (n.data.clone(), n.shape.clone())
        };
        Ok(self.push(data, shape, false, None))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.index].shape
    }

    pub fn data(&self, v: Var) -> &[T] {
        &self.nodes[v.index].data
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.index];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node shape is consistent")
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.index].data[0]
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.index].needs_grad
    }

    pub(super) fn any_needs_grad(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.index].needs_grad)
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate for every
    /// reachable variable created with `requires_grad`.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        self.check(loss)?;
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if self.nodes[loss.index].data.len() != 1 {
            return Err(TensorError::NonScalarLoss(
                self.nodes[loss.index].shape.clone(),
            ));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.index] = Some(vec![T::one()]);

        for i in (0..=loss.index).rev() {
            if grads[i].is_none() {
                continue;
            }
            let Some(back) = self.backs[i].take() else {
                continue;
            };
            let gout = grads[i].take().expect("checked above");
            {
                let mut sink = GradSink {
                    grads: &mut grads,
                    nodes: &self.nodes,
                };
                back(&gout, &self.nodes, &mut sink);
            }
            grads[i] = Some(gout);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of `v` after `backward`; `None` when no gradient flowed.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.index).and_then(|g| g.as_deref())
    }

    /// Harvested parameter gradients, summed across all trainable reads of
    /// the same parameter. Parameters read but unreached by the loss get
    /// explicit zero gradients.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<T>)> {
        let mut out: Vec<(ParamId, Vec<T>)> = Vec::new();
        for &(id, v) in &self.param_leaves {
            let numel = self.nodes[v.index].data.len();
            let g = self
                .grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![T::zero(); numel]);
            match out.iter_mut().find(|(pid, _)| *pid == id) {
                Some((_, acc)) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += *b;
                    }
                }
                None => out.push((id, g)),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        // f(x) = x^2 at x = 3 has gradient 6.
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::scalar(3.0), true);
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_twice_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::scalar(1.0), true);
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(TensorError::TapeConsumed)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::zeros(vec![2, 2]), true);
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn foreign_var_rejected() {
        let mut a = Tape::<f64>::new();
        let mut b = Tape::<f64>::new();
        let x = a.leaf(&Tensor::scalar(1.0), true);
        assert!(matches!(b.detach(x), Err(TensorError::ForeignVar)));
    }

    #[test]
    fn disconnected_param_gets_zero_grad() {
        let mut store = ParamStore::<f64>::new();
        let used = store.add("used", Tensor::scalar(2.0)).unwrap();
        let unused = store.add("unused", Tensor::scalar(5.0)).unwrap();
        let mut tape = Tape::new();
        let u = tape.param(&store, used, true).unwrap();
        let _n = tape.param(&store, unused, true).unwrap();
        let loss = tape.mul(u, u).unwrap();
        tape.backward(loss).unwrap();
        let grads = tape.param_grads();
        let gu = &grads.iter().find(|(id, _)| *id == used).unwrap().1;
        let gn = &grads.iter().find(|(id, _)| *id == unused).unwrap().1;
        assert_eq!(gu[0], 4.0);
        assert_eq!(gn[0], 0.0);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&Tensor::scalar(3.0), true);
        let d = tape.detach(x).unwrap();
        let y = tape.mul(d, d).unwrap();
        tape.backward(y).unwrap();
        assert!(tape.grad(x).is_none());
    }
}
