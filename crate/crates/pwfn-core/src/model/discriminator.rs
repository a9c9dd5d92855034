//! Patch discriminator: three strided conv blocks into a 1-channel logit
//! map, so each logit judges one receptive-field patch. The head starts at
//! zero (all-zero logits before training).

use super::layers::{Conv2dLayer, Ctx, LEAKY_SLOPE};
use super::{ModelConfig, ModelError};
use crate::tensor::{Init, ParamId, ParamStore, Scalar, Var};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct DiscriminatorNet {
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
    conv3: Conv2dLayer,
    head: Conv2dLayer,
}

impl DiscriminatorNet {
    pub fn new<T: Scalar>(
        cfg: &ModelConfig,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        let p = cfg.base_channels;
        let conv1 = Conv2dLayer::new(
            store,
            rng,
            "discriminator.conv1",
            3,
            p,
            4,
            2,
            1,
            Conv2dLayer::kaiming(3, 4),
        )?;
        let conv2 = Conv2dLayer::new(
            store,
            rng,
            "discriminator.conv2",
            p,
            2 * p,
            4,
            2,
            1,
            Conv2dLayer::kaiming(p, 4),
        )?;
        let conv3 = Conv2dLayer::new(
            store,
            rng,
            "discriminator.conv3",
            2 * p,
            4 * p,
            4,
            2,
            1,
            Conv2dLayer::kaiming(2 * p, 4),
        )?;
        let head = Conv2dLayer::new(store, rng, "discriminator.head", 4 * p, 1, 3, 1, 1, Init::Zero)?;
        Ok(Self {
            conv1,
            conv2,
            conv3,
            head,
        })
    }

    /// Patch logit map, (B,1,H/8,W/8).
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, image: Var) -> Result<Var, ModelError> {
        let slope = T::from_f64(LEAKY_SLOPE);
        let d1 = self.conv1.forward(cx, image)?;
        let d1 = cx.tape.leaky_relu(d1, slope)?;
        let d2 = self.conv2.forward(cx, d1)?;
        let d2 = cx.tape.leaky_relu(d2, slope)?;
        let d3 = self.conv3.forward(cx, d2)?;
        let d3 = cx.tape.leaky_relu(d3, slope)?;
        Ok(self.head.forward(cx, d3)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.conv1.params().to_vec();
        v.extend(self.conv2.params());
        v.extend(self.conv3.params());
        v.extend(self.head.params());
        v
    }
}
