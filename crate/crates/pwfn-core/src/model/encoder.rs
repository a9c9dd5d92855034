//! Message-embedding encoder.
//!
//! The message is dispersed by a linear layer onto a 16x16 grid, replicated
//! up to image size, concatenated with convolutional features of the cover,
//! optionally gated by a squeeze-and-excitation block, and turned into an
//! additive residual by the convolutional trunk. The final head starts at
//! zero so an untrained encoder returns the cover unchanged.

use super::layers::{Conv2dLayer, Ctx, LinearLayer, SeBlock, LEAKY_SLOPE};
use super::{ModelConfig, ModelError};
use crate::tensor::{Init, ParamId, ParamStore, Scalar, Var};
use rand::Rng;

pub const MSG_GRID: usize = 16;

#[derive(Clone, Debug)]
pub struct EncoderNet {
    msg_linear: LinearLayer,
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
    se: Option<SeBlock>,
    conv3: Conv2dLayer,
    conv4: Conv2dLayer,
    head: Conv2dLayer,
    message_len: usize,
}

impl EncoderNet {
    pub fn new<T: Scalar>(
        cfg: &ModelConfig,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        let c = cfg.base_channels;
        let grid = MSG_GRID * MSG_GRID;
        let msg_linear = LinearLayer::new(
            store,
            rng,
            "encoder.msg_linear",
            cfg.message_len,
            grid,
            Init::Kaiming {
                fan_in: cfg.message_len,
            },
        )?;
        let conv1 = Conv2dLayer::new(
            store,
            rng,
            "encoder.conv1",
            3,
            c,
            3,
            1,
            1,
            Conv2dLayer::kaiming(3, 3),
        )?;
        let conv2 = Conv2dLayer::new(
            store,
            rng,
            "encoder.conv2",
            c,
            c,
            3,
            1,
            1,
            Conv2dLayer::kaiming(c, 3),
        )?;
        let se = if cfg.use_se {
            Some(SeBlock::new(
                store,
                rng,
                "encoder.se",
                c + 1,
                cfg.se_reduction,
            )?)
        } else {
            None
        };
        let conv3 = Conv2dLayer::new(
            store,
            rng,
            "encoder.conv3",
            c + 1,
            c,
            3,
            1,
            1,
            Conv2dLayer::kaiming(c + 1, 3),
        )?;
        let conv4 = Conv2dLayer::new(
            store,
            rng,
            "encoder.conv4",
            c,
            c,
            3,
            1,
            1,
            Conv2dLayer::kaiming(c, 3),
        )?;
        let head = Conv2dLayer::new(store, rng, "encoder.head", c, 3, 3, 1, 1, Init::Zero)?;
        Ok(Self {
            msg_linear,
            conv1,
            conv2,
            se,
            conv3,
            conv4,
            head,
            message_len: cfg.message_len,
        })
    }

    /// Disperse message bits into a (B,1,H,W) spatial map: linear to the
    /// 16x16 grid, then nearest-neighbor replication to image size.
    pub fn message_map<T: Scalar>(
        &self,
        cx: &mut Ctx<T>,
        message: Var,
        h: usize,
        w: usize,
    ) -> Result<Var, ModelError> {
        if h % MSG_GRID != 0 || w % MSG_GRID != 0 {
            return Err(ModelError::SizeNotMultiple(h, w));
        }
        let s = cx.tape.shape(message).to_vec();
        if s.len() != 2 || s[1] != self.message_len {
            return Err(ModelError::MessageLength {
                expected: self.message_len,
                got: s.last().copied().unwrap_or(0),
            });
        }
        let b = s[0];
        let lin = self.msg_linear.forward(cx, message)?;
        let grid = cx.tape.reshape(lin, vec![b, 1, MSG_GRID, MSG_GRID])?;
        Ok(cx
            .tape
            .nearest_upsample(grid, h / MSG_GRID, w / MSG_GRID)?)
    }

    /// Embed a message: `encoded = cover + trunk(cover, message)`.
    pub fn forward<T: Scalar>(
        &self,
        cx: &mut Ctx<T>,
        cover: Var,
        message: Var,
    ) -> Result<Var, ModelError> {
        let s = cx.tape.shape(cover).to_vec();
        let (h, w) = (s[2], s[3]);
        let msg = self.message_map(cx, message, h, w)?;
        let slope = T::from_f64(LEAKY_SLOPE);
        let b1 = self.conv1.forward(cx, cover)?;
        let b1 = cx.tape.leaky_relu(b1, slope)?;
        let b2 = self.conv2.forward(cx, b1)?;
        let b2 = cx.tape.leaky_relu(b2, slope)?;
        let fused = cx.tape.concat(&[b2, msg], 1)?;
        let gated = match &self.se {
            Some(se) => se.forward(cx, fused)?,
            None => fused,
        };
        let b3 = self.conv3.forward(cx, gated)?;
        let b3 = cx.tape.leaky_relu(b3, slope)?;
        let b4 = self.conv4.forward(cx, b3)?;
        let b4 = cx.tape.leaky_relu(b4, slope)?;
        let delta = self.head.forward(cx, b4)?;
        Ok(cx.tape.add(cover, delta)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.msg_linear.params().to_vec();
        v.extend(self.conv1.params());
        v.extend(self.conv2.params());
        if let Some(se) = &self.se {
            v.extend(se.params());
        }
        v.extend(self.conv3.params());
        v.extend(self.conv4.params());
        v.extend(self.head.params());
        v
    }
}
