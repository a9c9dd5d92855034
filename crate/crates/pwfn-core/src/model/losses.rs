//! Per-network training losses.

use crate::tensor::{Scalar, Tape, TensorError, Var};

/// Pixel fidelity of the embedding: mean squared error between the encoded
/// and cover images.
pub fn encoder_loss<T: Scalar>(
    tape: &mut Tape<T>,
    encoded: Var,
    cover: Var,
) -> Result<Var, TensorError> {
    tape.mse(encoded, cover)
}

/// Residual prediction loss: squared Frobenius distance between the
/// prediction and the true embedding residual, summed over the batch and
/// scaled by `1/(2N)`.
pub fn denoiser_loss<T: Scalar>(
    tape: &mut Tape<T>,
    predicted: Var,
    encoded: Var,
    cover: Var,
) -> Result<Var, TensorError> {
    let n = tape.shape(predicted)[0];
    let target = tape.sub(encoded, cover)?;
    let diff = tape.sub(predicted, target)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq)?;
    tape.mul_scalar(total, T::from_f64(1.0 / (2.0 * n as f64)))
}

/// Message loss on soft scores: squared error against the bit pattern,
/// normalized by the message length (and averaged over the batch).
pub fn decoder_loss<T: Scalar>(
    tape: &mut Tape<T>,
    message: Var,
    scores: Var,
) -> Result<Var, TensorError> {
    let shape = tape.shape(scores).to_vec();
    if tape.shape(message) != shape {
        return Err(TensorError::ShapeMismatch {
            op: "decoder_loss",
            expected: format!("{:?}", shape),
            got: tape.shape(message).to_vec(),
        });
    }
    let (b, l) = (shape[0], shape[1]);
    let diff = tape.sub(message, scores)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq)?;
    tape.mul_scalar(total, T::from_f64(1.0 / (l as f64 * b as f64)))
}

/// Patch-level adversarial losses from precomputed logit maps:
/// `d_loss = BCE(real -> 1) + BCE(fake -> 0)`, and the non-saturating
/// generator term `g_adv = BCE(fake -> 1)`. The caller is responsible for
/// detaching the fake input on the discriminator side.
pub fn adversarial_from_logits<T: Scalar>(
    tape: &mut Tape<T>,
    real_logits: Var,
    fake_logits_detached: Var,
    fake_logits_live: Var,
) -> Result<(Var, Var), TensorError> {
    let real_shape = tape.shape(real_logits).to_vec();
    let ones = tape.full_like(&real_shape, T::one());
    let zeros = tape.full_like(&real_shape, T::zero());
    let real_term = tape.bce_with_logits(real_logits, ones)?;
    let fake_term = tape.bce_with_logits(fake_logits_detached, zeros)?;
    let d_loss = tape.add(real_term, fake_term)?;
    let ones2 = tape.full_like(&real_shape, T::one());
    let g_adv = tape.bce_with_logits(fake_logits_live, ones2)?;
    Ok((d_loss, g_adv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn encoder_loss_fixtures() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(&Tensor::full(vec![1, 3, 2, 2], 0.4), false);
        let b = tape.leaf(&Tensor::full(vec![1, 3, 2, 2], 0.5), false);
        let same = encoder_loss(&mut tape, a, a).unwrap();
        assert_eq!(tape.scalar_value(same), 0.0);
        let l = encoder_loss(&mut tape, a, b).unwrap();
        assert!((tape.scalar_value(l) - 0.01).abs() < 1e-12);
        let sym = encoder_loss(&mut tape, b, a).unwrap();
        assert_eq!(tape.scalar_value(l), tape.scalar_value(sym));
    }

    #[test]
    fn denoiser_loss_fixture_exact() {
        // Prediction off by a uniform +1 on a 1x3x2x2 batch: 12 unit errors
        // over 2N = 2 gives exactly 6.
        let mut tape = Tape::<f64>::new();
        let cover = tape.leaf(&Tensor::full(vec![1, 3, 2, 2], 0.25), false);
        let encoded = tape.leaf(&Tensor::full(vec![1, 3, 2, 2], 0.5), false);
        let pred = tape.leaf(&Tensor::full(vec![1, 3, 2, 2], 1.25), false);
        let l = denoiser_loss(&mut tape, pred, encoded, cover).unwrap();
        assert_eq!(tape.scalar_value(l), 6.0);
        // Perfect prediction is exactly zero.
        let perfect = tape.leaf(&Tensor::full(vec![1, 3, 2, 2], 0.25), false);
        let l0 = denoiser_loss(&mut tape, perfect, encoded, cover).unwrap();
        assert_eq!(tape.scalar_value(l0), 0.0);
    }

    #[test]
    fn denoiser_loss_replication_invariant() {
        let mut tape = Tape::<f64>::new();
        let mk = |n: usize, v: f64| Tensor::from_fn(vec![n, 3, 2, 2], |i| v + (i % 12) as f64 * 0.01);
        let c1 = tape.leaf(&mk(1, 0.1), false);
        let e1 = tape.leaf(&mk(1, 0.3), false);
        let p1 = tape.leaf(&mk(1, 0.7), false);
        let l1 = denoiser_loss(&mut tape, p1, e1, c1).unwrap();
        let c2 = tape.leaf(&mk(2, 0.1), false);
        let e2 = tape.leaf(&mk(2, 0.3), false);
        let p2 = tape.leaf(&mk(2, 0.7), false);
        let l2 = denoiser_loss(&mut tape, p2, e2, c2).unwrap();
        assert!((tape.scalar_value(l1) - tape.scalar_value(l2)).abs() < 1e-12);
    }

    #[test]
    fn decoder_loss_fixtures() {
        let mut tape = Tape::<f64>::new();
        let msg = tape.leaf(&Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap(), false);
        let mid = tape.leaf(&Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap(), false);
        let l = decoder_loss(&mut tape, msg, mid).unwrap();
        assert_eq!(tape.scalar_value(l), 0.25);
        let exact = decoder_loss(&mut tape, msg, msg).unwrap();
        assert_eq!(tape.scalar_value(exact), 0.0);
        let comp = tape.leaf(&Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap(), false);
        let worst = decoder_loss(&mut tape, msg, comp).unwrap();
        assert_eq!(tape.scalar_value(worst), 1.0);
    }
}
