//! Parameterized building blocks and the forward context.

use crate::tensor::{Init, ParamId, ParamStore, Scalar, Tape, TensorError, Var};
use rand::Rng;
use std::collections::HashMap;

/// Binds a tape to a parameter store for one forward pass. Each parameter
/// is read onto the tape at most once; `trainable` decides whether those
/// reads participate in gradients.
pub struct Ctx<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    store: &'a ParamStore<T>,
    trainable: bool,
    memo: HashMap<ParamId, Var>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, store: &'a ParamStore<T>, trainable: bool) -> Self {
        Self {
            tape,
            store,
            trainable,
            memo: HashMap::new(),
        }
    }

    pub fn p(&mut self, id: ParamId) -> Result<Var, TensorError> {
        if let Some(&v) = self.memo.get(&id) {
            return Ok(v);
        }
        let v = self.tape.param(self.store, id, self.trainable)?;
        self.memo.insert(id, v);
        Ok(v)
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    stride: usize,
    padding: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        init: Init,
    ) -> Result<Self, TensorError> {
        let weight = store.add_init(format!("{name}.weight"), vec![cout, cin, k, k], init, rng)?;
        let bias = store.add_init(format!("{name}.bias"), vec![cout], Init::Zero, rng)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn kaiming(cin: usize, k: usize) -> Init {
        Init::Kaiming {
            fan_in: cin * k * k,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var, TensorError> {
        let w = cx.p(self.weight)?;
        let b = cx.p(self.bias)?;
        cx.tape.conv2d(x, w, b, self.stride, self.padding)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        n_in: usize,
        n_out: usize,
        init: Init,
    ) -> Result<Self, TensorError> {
        let weight = store.add_init(format!("{name}.weight"), vec![n_out, n_in], init, rng)?;
        let bias = store.add_init(format!("{name}.bias"), vec![n_out], Init::Zero, rng)?;
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var, TensorError> {
        let w = cx.p(self.weight)?;
        let b = cx.p(self.bias)?;
        cx.tape.linear(x, w, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Squeeze-and-excitation: global average pool, two-layer gate with a
/// sigmoid, channel-wise rescale. Output gates are strictly inside (0,1).
#[derive(Clone, Debug)]
pub struct SeBlock {
    fc1: LinearLayer,
    fc2: LinearLayer,
}

impl SeBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Result<Self, TensorError> {
        let hidden = (channels / reduction).max(1);
        let fc1 = LinearLayer::new(
            store,
            rng,
            &format!("{name}.fc1"),
            channels,
            hidden,
            Init::Kaiming { fan_in: channels },
        )?;
        let fc2 = LinearLayer::new(
            store,
            rng,
            &format!("{name}.fc2"),
            hidden,
            channels,
            Init::Kaiming { fan_in: hidden },
        )?;
        Ok(Self { fc1, fc2 })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var, TensorError> {
        let squeezed = cx.tape.global_avg_pool(x)?;
        let h = self.fc1.forward(cx, squeezed)?;
        let h = cx.tape.relu(h)?;
        let h = self.fc2.forward(cx, h)?;
        let gates = cx.tape.sigmoid(h)?;
        cx.tape.scale_channels(x, gates)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.fc1.params().to_vec();
        v.extend(self.fc2.params());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn se_gates_stay_in_unit_interval_and_keep_shape() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let se = SeBlock::new(&mut store, &mut rng, "se", 5, 8).unwrap();
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &store, false);
        let x = cx
            .tape
            .leaf(&Tensor::from_fn(vec![2, 5, 4, 4], |i| (i % 9) as f64 - 4.0), false);
        let y = se.forward(&mut cx, x).unwrap();
        assert_eq!(tape.shape(y), &[2, 5, 4, 4]);
        // Gates in (0,1) can only shrink magnitudes.
        let xv = tape.data(x).to_vec();
        for (o, i) in tape.data(y).iter().zip(&xv) {
            assert!(o.abs() <= i.abs() + 1e-12);
        }
    }
}
