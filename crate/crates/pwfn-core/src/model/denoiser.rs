//! Residual-predicting denoiser: a small U-Net followed by an FCN head.
//!
//! The network sees the distorted image and learns to predict the embedding
//! residual (encoded minus cover). The head starts at zero, so before any
//! training the prediction is exactly the zero residual.

use super::layers::{Conv2dLayer, Ctx, LEAKY_SLOPE};
use super::{ModelConfig, ModelError};
use crate::tensor::{Init, ParamId, ParamStore, Scalar, Var};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct DenoiserNet {
    enc0: Conv2dLayer,
    down1: Conv2dLayer,
    down2: Conv2dLayer,
    up1: Conv2dLayer,
    up0: Conv2dLayer,
    fcn: Conv2dLayer,
    head: Conv2dLayer,
}

impl DenoiserNet {
    pub fn new<T: Scalar>(
        cfg: &ModelConfig,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        let u = cfg.base_channels;
        let enc0 = Conv2dLayer::new(
            store,
            rng,
            "denoiser.enc0",
            3,
            u,
            3,
            1,
            1,
            Conv2dLayer::kaiming(3, 3),
        )?;
        let down1 = Conv2dLayer::new(
            store,
            rng,
            "denoiser.down1",
            u,
            2 * u,
            4,
            2,
            1,
            Conv2dLayer::kaiming(u, 4),
        )?;
        let down2 = Conv2dLayer::new(
            store,
            rng,
            "denoiser.down2",
            2 * u,
            4 * u,
            4,
            2,
            1,
            Conv2dLayer::kaiming(2 * u, 4),
        )?;
        let up1 = Conv2dLayer::new(
            store,
            rng,
            "denoiser.up1",
            6 * u,
            2 * u,
            3,
            1,
            1,
            Conv2dLayer::kaiming(6 * u, 3),
        )?;
        let up0 = Conv2dLayer::new(
            store,
            rng,
            "denoiser.up0",
            3 * u,
            u,
            3,
            1,
            1,
            Conv2dLayer::kaiming(3 * u, 3),
        )?;
        let fcn = Conv2dLayer::new(
            store,
            rng,
            "denoiser.fcn",
            u,
            u,
            3,
            1,
            1,
            Conv2dLayer::kaiming(u, 3),
        )?;
        let head = Conv2dLayer::new(store, rng, "denoiser.head", u, 3, 3, 1, 1, Init::Zero)?;
        Ok(Self {
            enc0,
            down1,
            down2,
            up1,
            up0,
            fcn,
            head,
        })
    }

    /// Predicted embedding residual, same shape as the input image.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, noised: Var) -> Result<Var, ModelError> {
        let slope = T::from_f64(LEAKY_SLOPE);
        let e0 = self.enc0.forward(cx, noised)?;
        let e0 = cx.tape.leaky_relu(e0, slope)?;
        let e1 = self.down1.forward(cx, e0)?;
        let e1 = cx.tape.leaky_relu(e1, slope)?;
        let e2 = self.down2.forward(cx, e1)?;
        let e2 = cx.tape.leaky_relu(e2, slope)?;

        let u1 = cx.tape.nearest_upsample(e2, 2, 2)?;
        let u1 = cx.tape.concat(&[u1, e1], 1)?;
        let u1 = self.up1.forward(cx, u1)?;
        let u1 = cx.tape.leaky_relu(u1, slope)?;

        let u0 = cx.tape.nearest_upsample(u1, 2, 2)?;
        let u0 = cx.tape.concat(&[u0, e0], 1)?;
        let u0 = self.up0.forward(cx, u0)?;
        let u0 = cx.tape.leaky_relu(u0, slope)?;

        let f = self.fcn.forward(cx, u0)?;
        let f = cx.tape.leaky_relu(f, slope)?;
        Ok(self.head.forward(cx, f)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.enc0.params().to_vec();
        v.extend(self.down1.params());
        v.extend(self.down2.params());
        v.extend(self.up1.params());
        v.extend(self.up0.params());
        v.extend(self.fcn.params());
        v.extend(self.head.params());
        v
    }
}
