//! The four watermarking networks and their losses.

mod bits;
mod decoder;
mod denoiser;
mod discriminator;
mod encoder;
pub mod layers;
pub mod losses;

pub use bits::{hard_threshold, MessageBits};
pub use decoder::DecoderNet;
pub use denoiser::DenoiserNet;
pub use discriminator::DiscriminatorNet;
pub use encoder::{EncoderNet, MSG_GRID};
pub use layers::{Ctx, SeBlock};

use crate::tensor::{ParamId, ParamStore, Scalar, Tape, Tensor, TensorError, Var};
use rand::Rng;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("image size {0}x{1} must be a multiple of 16")]
    SizeNotMultiple(usize, usize),
    #[error("message length mismatch: model expects {expected}, got {got}")]
    MessageLength { expected: usize, got: usize },
    #[error("message length {0} exceeds the {max} dispersion slots", max = MSG_GRID * MSG_GRID)]
    MessageTooLong(usize),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// What the decoder's leading 3 channels carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderInput {
    /// The predicted embedding residual (default).
    Residual,
    /// The denoised image, i.e. distorted input minus predicted residual.
    Denoised,
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub image_size: usize,
    pub message_len: usize,
    pub base_channels: usize,
    pub se_reduction: usize,
    pub use_se: bool,
    pub use_denoiser: bool,
    pub decoder_input: DecoderInput,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            message_len: 30,
            base_channels: 64,
            se_reduction: 8,
            use_se: true,
            use_denoiser: true,
            decoder_input: DecoderInput::Residual,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.image_size % 16 != 0 || self.image_size < 16 {
            return Err(ModelError::SizeNotMultiple(self.image_size, self.image_size));
        }
        if self.message_len == 0 || self.message_len > MSG_GRID * MSG_GRID {
            return Err(ModelError::MessageTooLong(self.message_len));
        }
        if self.base_channels < 2 {
            return Err(ModelError::BadConfig("base_channels must be >= 2".into()));
        }
        if self.se_reduction == 0 {
            return Err(ModelError::BadConfig("se_reduction must be >= 1".into()));
        }
        Ok(())
    }
}

/// Encoder, optional denoiser, decoder and discriminator over one shared
/// parameter store.
pub struct WatermarkModel {
    cfg: ModelConfig,
    pub encoder: EncoderNet,
    pub denoiser: Option<DenoiserNet>,
    pub decoder: DecoderNet,
    pub discriminator: DiscriminatorNet,
}

impl WatermarkModel {
    pub fn new<T: Scalar>(
        cfg: ModelConfig,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let encoder = EncoderNet::new(&cfg, store, rng)?;
        let denoiser = if cfg.use_denoiser {
            Some(DenoiserNet::new(&cfg, store, rng)?)
        } else {
            None
        };
        let decoder = DecoderNet::new(&cfg, store, rng)?;
        let discriminator = DiscriminatorNet::new(&cfg, store, rng)?;
        Ok(Self {
            cfg,
            encoder,
            denoiser,
            decoder,
            discriminator,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn encode<T: Scalar>(
        &self,
        cx: &mut Ctx<T>,
        cover: Var,
        message: Var,
    ) -> Result<Var, ModelError> {
        self.encoder.forward(cx, cover, message)
    }

    /// Predicted embedding residual; exactly zero (constant) without a
    /// denoiser, which degenerates the pipeline to a plain
    /// encoder-noise-decoder model.
    pub fn predict_residual<T: Scalar>(
        &self,
        cx: &mut Ctx<T>,
        noised: Var,
    ) -> Result<Var, ModelError> {
        match &self.denoiser {
            Some(net) => net.forward(cx, noised),
            None => {
                let shape = cx.tape.shape(noised).to_vec();
                Ok(cx.tape.zeros(shape))
            }
        }
    }

    /// Decoder scores from a residual prediction and the distorted image.
    pub fn decode<T: Scalar>(
        &self,
        cx: &mut Ctx<T>,
        residual: Var,
        noised: Var,
    ) -> Result<Var, ModelError> {
        let lead = match self.cfg.decoder_input {
            DecoderInput::Residual => residual,
            DecoderInput::Denoised => cx.tape.sub(noised, residual)?,
        };
        self.decoder.forward(cx, lead, noised)
    }

    /// Full extraction path: predict the residual, then decode.
    pub fn extract_scores<T: Scalar>(
        &self,
        cx: &mut Ctx<T>,
        image: Var,
    ) -> Result<Var, ModelError> {
        let residual = self.predict_residual(cx, image)?;
        self.decode(cx, residual, image)
    }

    pub fn discriminate<T: Scalar>(
        &self,
        cx: &mut Ctx<T>,
        image: Var,
    ) -> Result<Var, ModelError> {
        self.discriminator.forward(cx, image)
    }

    /// Both adversarial losses on one tape: the discriminator loss sees the
    /// encoded image detached, so its gradient cannot reach the encoder.
    pub fn discriminator_losses<T: Scalar>(
        &self,
        cx: &mut Ctx<T>,
        cover: Var,
        encoded: Var,
    ) -> Result<(Var, Var), ModelError> {
        let real_logits = self.discriminate(cx, cover)?;
        let detached = cx.tape.detach(encoded)?;
        let fake_detached = self.discriminate(cx, detached)?;
        let fake_live = self.discriminate(cx, encoded)?;
        Ok(losses::adversarial_from_logits(
            cx.tape,
            real_logits,
            fake_detached,
            fake_live,
        )?)
    }

    /// Parameters of the generator side (encoder, denoiser, decoder).
    pub fn gen_params(&self) -> Vec<ParamId> {
        let mut v = self.encoder.params();
        if let Some(d) = &self.denoiser {
            v.extend(d.params());
        }
        v.extend(self.decoder.params());
        v
    }

    pub fn disc_params(&self) -> Vec<ParamId> {
        self.discriminator.params()
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        let mut v = self.gen_params();
        v.extend(self.disc_params());
        v
    }

    /// Plain-tensor embedding (frozen parameters).
    pub fn embed<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        cover: &Tensor<T>,
        bits: &MessageBits,
    ) -> Result<Tensor<T>, ModelError> {
        if bits.len() != self.cfg.message_len {
            return Err(ModelError::MessageLength {
                expected: self.cfg.message_len,
                got: bits.len(),
            });
        }
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, store, false);
        let cover_v = cx.tape.constant(cover);
        let msg_v = {
            let t = bits.to_tensor::<T>();
            cx.tape.constant(&t)
        };
        let encoded = self.encode(&mut cx, cover_v, msg_v)?;
        Ok(tape.value(encoded))
    }

    /// Plain-tensor extraction: soft scores plus thresholded bits.
    pub fn extract<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        image: &Tensor<T>,
    ) -> Result<(Tensor<T>, MessageBits), ModelError> {
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, store, false);
        let img_v = cx.tape.constant(image);
        let scores = self.extract_scores(&mut cx, img_v)?;
        let scores_t = tape.value(scores);
        let bits = hard_threshold(&scores_t);
        Ok((scores_t, bits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg(size: usize) -> ModelConfig {
        ModelConfig {
            image_size: size,
            message_len: 4,
            base_channels: 4,
            se_reduction: 4,
            ..ModelConfig::default()
        }
    }

    fn build(size: usize) -> (WatermarkModel, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let model = WatermarkModel::new(tiny_cfg(size), &mut store, &mut rng).unwrap();
        (model, store)
    }

    #[test]
    fn shapes_preserved_across_sizes() {
        for size in [16usize, 32, 48] {
            let (model, store) = build(size);
            let cover = Tensor::<f64>::from_fn(vec![2, 3, size, size], |i| {
                ((i * 13) % 97) as f64 / 97.0
            });
            let msg = MessageBits::from_bits(vec![1, 0, 1, 1, 0, 1, 0, 0], 2, 4).unwrap();
            let mut tape = Tape::new();
            let mut cx = Ctx::new(&mut tape, &store, false);
            let c = cx.tape.constant(&cover);
            let m = {
                let t = msg.to_tensor::<f64>();
                cx.tape.constant(&t)
            };
            let encoded = model.encode(&mut cx, c, m).unwrap();
            assert_eq!(cx.tape.shape(encoded), &[2, 3, size, size]);
            let residual = model.predict_residual(&mut cx, encoded).unwrap();
            assert_eq!(cx.tape.shape(residual), &[2, 3, size, size]);
            let scores = model.decode(&mut cx, residual, encoded).unwrap();
            assert_eq!(cx.tape.shape(scores), &[2, 4]);
            let logits = model.discriminate(&mut cx, encoded).unwrap();
            let ls = cx.tape.shape(logits).to_vec();
            assert_eq!(ls[..2], [2, 1]);
            assert!(ls[2] >= 2 && ls[3] >= 2);
        }
    }

    #[test]
    fn zero_init_head_returns_cover() {
        let (model, store) = build(16);
        let cover =
            Tensor::<f64>::from_fn(vec![1, 3, 16, 16], |i| ((i * 7) % 31) as f64 / 31.0);
        let msg = MessageBits::from_bits(vec![1, 0, 1, 1], 1, 4).unwrap();
        let encoded = model.embed(&store, &cover, &msg).unwrap();
        assert_eq!(encoded.data(), cover.data());
    }

    #[test]
    fn untrained_denoiser_predicts_zero_on_zero_input() {
        let (model, store) = build(16);
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &store, false);
        let zeros = cx.tape.zeros(vec![1, 3, 16, 16]);
        let residual = model.predict_residual(&mut cx, zeros).unwrap();
        assert!(tape.data(residual).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scores_strictly_inside_unit_interval() {
        let (model, store) = build(16);
        let img = Tensor::<f64>::from_fn(vec![3, 3, 16, 16], |i| ((i * 11) % 23) as f64 / 23.0);
        let (scores, bits) = model.extract(&store, &img).unwrap();
        assert_eq!(scores.shape(), &[3, 4]);
        assert!(scores.data().iter().all(|&s| s > 0.0 && s < 1.0));
        assert_eq!(bits.batch(), 3);
    }

    #[test]
    fn message_maps_differ_for_different_messages() {
        let (model, store) = build(32);
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &store, false);
        let m1 = MessageBits::from_bits(vec![1, 0, 1, 1], 1, 4).unwrap();
        let m2 = MessageBits::from_bits(vec![0, 1, 0, 0], 1, 4).unwrap();
        let t1 = m1.to_tensor::<f64>();
        let t2 = m2.to_tensor::<f64>();
        let v1 = cx.tape.constant(&t1);
        let v2 = cx.tape.constant(&t2);
        let map1 = model.encoder.message_map(&mut cx, v1, 32, 32).unwrap();
        let map2 = model.encoder.message_map(&mut cx, v2, 32, 32).unwrap();
        assert_eq!(tape.shape(map1), &[1, 1, 32, 32]);
        assert_ne!(tape.data(map1), tape.data(map2));
    }

    #[test]
    fn zero_message_zero_bias_gives_zero_map() {
        let (model, store) = build(32);
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &store, false);
        let zero_msg = Tensor::<f64>::zeros(vec![1, 4]);
        let v = cx.tape.constant(&zero_msg);
        let map = model.encoder.message_map(&mut cx, v, 32, 32).unwrap();
        assert!(tape.data(map).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn non_multiple_of_16_rejected() {
        let (model, store) = build(16);
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &store, false);
        let msg = Tensor::<f64>::zeros(vec![1, 4]);
        let v = cx.tape.constant(&msg);
        assert!(matches!(
            model.encoder.message_map(&mut cx, v, 24, 24),
            Err(ModelError::SizeNotMultiple(24, 24))
        ));
    }

    #[test]
    fn untrained_disc_losses_are_analytic() {
        let (model, store) = build(16);
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &store, false);
        let cover = cx.tape.full_like(&[1, 3, 16, 16], 0.5);
        let encoded = cx.tape.full_like(&[1, 3, 16, 16], 0.6);
        let (d_loss, g_adv) = model.discriminator_losses(&mut cx, cover, encoded).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((tape.scalar_value(d_loss) - 2.0 * ln2).abs() < 1e-12);
        assert!((tape.scalar_value(g_adv) - ln2).abs() < 1e-12);
    }

    #[test]
    fn disc_loss_gradient_does_not_reach_encoder() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = WatermarkModel::new(tiny_cfg(16), &mut store, &mut rng).unwrap();
        // Give the zero-initialized heads nonzero weights so real and fake
        // activations actually differ.
        for name in ["encoder.head.weight", "discriminator.head.weight"] {
            let id = store.find(name).unwrap();
            let p = store.get_mut(id).unwrap().value_mut();
            for (i, v) in p.data_mut().iter_mut().enumerate() {
                *v = ((i % 5) as f64 - 2.0) * 0.01;
            }
        }
        let cover = Tensor::from_fn(vec![1, 3, 16, 16], |i| ((i * 3) % 17) as f64 / 17.0);
        let msg = MessageBits::from_bits(vec![1, 0, 0, 1], 1, 4).unwrap();
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &store, true);
        let c = cx.tape.constant(&cover);
        let m = {
            let t = msg.to_tensor::<f64>();
            cx.tape.constant(&t)
        };
        let encoded = model.encode(&mut cx, c, m).unwrap();
        let (d_loss, _g) = model.discriminator_losses(&mut cx, c, encoded).unwrap();
        tape.backward(d_loss).unwrap();
        let grads = tape.param_grads();
        for id in model.encoder.params() {
            let g = &grads.iter().find(|(pid, _)| *pid == id).unwrap().1;
            assert!(g.iter().all(|&v| v == 0.0), "encoder param got d_loss gradient");
        }
        // The discriminator itself must learn from it.
        let any_disc = model.disc_params().iter().any(|id| {
            grads
                .iter()
                .find(|(pid, _)| pid == id)
                .map(|(_, g)| g.iter().any(|&v| v != 0.0))
                .unwrap_or(false)
        });
        assert!(any_disc);
    }
}
