//! Message decoder over the stitched 6-channel input (predicted residual
//! concatenated with the distorted image).
//!
//! The trunk downsamples to a small grid before pooling and interleaves
//! fixed coordinate channels: global pooling is permutation-invariant over
//! space, so without a position signal the pooled features could not tell
//! which region carried which part of the message.

use super::layers::{Conv2dLayer, Ctx, LinearLayer, LEAKY_SLOPE};
use super::{ModelConfig, ModelError};
use crate::tensor::{Init, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::Rng;

/// Two constant channels holding x/y coordinates in [-1, 1].
fn coord_channels<T: Scalar>(cx: &mut Ctx<T>, b: usize, h: usize, w: usize) -> Var {
    let t = Tensor::from_fn(vec![b, 2, h, w], |i| {
        let c = (i / (h * w)) % 2;
        let y = (i / w) % h;
        let x = i % w;
        let (pos, n) = if c == 0 { (x, w) } else { (y, h) };
        T::from_f64(if n > 1 {
            2.0 * pos as f64 / (n - 1) as f64 - 1.0
        } else {
            0.0
        })
    });
    cx.tape.constant(&t)
}

#[derive(Clone, Debug)]
pub struct DecoderNet {
    conv1: Conv2dLayer,
    downs: Vec<Conv2dLayer>,
    conv_grid: Conv2dLayer,
    head: LinearLayer,
}

impl DecoderNet {
    pub fn new<T: Scalar>(
        cfg: &ModelConfig,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        let d = cfg.base_channels;
        let conv1 = Conv2dLayer::new(
            store,
            rng,
            "decoder.conv1",
            6,
            d,
            3,
            1,
            1,
            Conv2dLayer::kaiming(6, 3),
        )?;
        // Halve the spatial size until the grid is at most 8x8; the first
        // stage also absorbs the coordinate channels, the last widens.
        let mut downs = Vec::new();
        let mut spatial = cfg.image_size;
        let mut idx = 0usize;
        while spatial > 8 {
            spatial /= 2;
            let last = spatial <= 8;
            let cin = if idx == 0 { d + 2 } else { d };
            let cout = if last { 2 * d } else { d };
            downs.push(Conv2dLayer::new(
                store,
                rng,
                &format!("decoder.down{idx}"),
                cin,
                cout,
                4,
                2,
                1,
                Conv2dLayer::kaiming(cin, 4),
            )?);
            idx += 1;
        }
        let conv_grid = Conv2dLayer::new(
            store,
            rng,
            "decoder.grid",
            2 * d + 2,
            4 * d,
            3,
            1,
            1,
            Conv2dLayer::kaiming(2 * d + 2, 3),
        )?;
        let head = LinearLayer::new(
            store,
            rng,
            "decoder.head",
            4 * d,
            cfg.message_len,
            Init::Kaiming { fan_in: 4 * d },
        )?;
        Ok(Self {
            conv1,
            downs,
            conv_grid,
            head,
        })
    }

    /// Soft scores in (0,1) per message bit.
    pub fn forward<T: Scalar>(
        &self,
        cx: &mut Ctx<T>,
        residual: Var,
        noised: Var,
    ) -> Result<Var, ModelError> {
        let stitched = cx.tape.concat(&[residual, noised], 1)?;
        let slope = T::from_f64(LEAKY_SLOPE);
        let mut x = self.conv1.forward(cx, stitched)?;
        x = cx.tape.leaky_relu(x, slope)?;
        for (i, down) in self.downs.iter().enumerate() {
            if i == 0 {
                let s = cx.tape.shape(x).to_vec();
                let pos = coord_channels(cx, s[0], s[2], s[3]);
                x = cx.tape.concat(&[x, pos], 1)?;
            }
            x = down.forward(cx, x)?;
            x = cx.tape.leaky_relu(x, slope)?;
        }
        let s = cx.tape.shape(x).to_vec();
        let pos = coord_channels(cx, s[0], s[2], s[3]);
        x = cx.tape.concat(&[x, pos], 1)?;
        x = self.conv_grid.forward(cx, x)?;
        x = cx.tape.leaky_relu(x, slope)?;
        let pooled = cx.tape.global_avg_pool(x)?;
        let logits = self.head.forward(cx, pooled)?;
        Ok(cx.tape.sigmoid(logits)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.conv1.params().to_vec();
        for d in &self.downs {
            v.extend(d.params());
        }
        v.extend(self.conv_grid.params());
        v.extend(self.head.params());
        v
    }
}
