//! Binary messages and the hard decision rule.

use crate::tensor::{Scalar, Tensor, TensorError};
use rand::Rng;
use std::fmt;

/// A batch of binary messages, strictly 0/1 at this interface; soft scores
/// live in decoder outputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageBits {
    batch: usize,
    len: usize,
    bits: Vec<u8>,
}

impl MessageBits {
    pub fn from_bits(bits: Vec<u8>, batch: usize, len: usize) -> Result<Self, TensorError> {
        if bits.len() != batch * len || bits.iter().any(|&b| b > 1) {
            return Err(TensorError::InvalidArg {
                op: "message_bits",
                msg: "bits must be 0/1 with batch*len entries".into(),
            });
        }
        Ok(Self { batch, len, bits })
    }

    /// Uniform i.i.d. fair-coin messages.
    pub fn random(batch: usize, len: usize, rng: &mut impl Rng) -> Self {
        let bits = (0..batch * len)
            .map(|_| if rng.gen::<bool>() { 1u8 } else { 0 })
            .collect();
        Self { batch, len, bits }
    }

    /// Parse a single message from `0`/`1` characters, e.g. "10110100".
    pub fn parse_binary(s: &str) -> Result<Self, TensorError> {
        let bits: Vec<u8> = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                _ => Err(TensorError::InvalidArg {
                    op: "message_bits",
                    msg: format!("invalid bit character '{c}'"),
                }),
            })
            .collect::<Result<_, _>>()?;
        let len = bits.len();
        Self::from_bits(bits, 1, len)
    }

    /// Parse a single message of `len` bits from a hex string (big-endian
    /// within each nibble), e.g. "a5" -> 10100101.
    pub fn parse_hex(s: &str, len: usize) -> Result<Self, TensorError> {
        let s = s.trim().trim_start_matches("0x");
        let mut bits = Vec::with_capacity(s.len() * 4);
        for c in s.chars() {
            let nibble = c.to_digit(16).ok_or_else(|| TensorError::InvalidArg {
                op: "message_bits",
                msg: format!("invalid hex character '{c}'"),
            })?;
            for shift in (0..4).rev() {
                bits.push(((nibble >> shift) & 1) as u8);
            }
        }
        if bits.len() < len {
            return Err(TensorError::InvalidArg {
                op: "message_bits",
                msg: format!("hex provides {} bits, need {len}", bits.len()),
            });
        }
        bits.truncate(len);
        Self::from_bits(bits, 1, len)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn row(&self, index: usize) -> &[u8] {
        &self.bits[index * self.len..(index + 1) * self.len]
    }

    /// Single-row view as its own message.
    pub fn single(&self, index: usize) -> Self {
        Self {
            batch: 1,
            len: self.len,
            bits: self.row(index).to_vec(),
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(vec![self.batch, self.len], |i| {
            if self.bits[i] == 1 {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}

impl fmt::Display for MessageBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, row) in self.bits.chunks(self.len).enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            for b in row {
                write!(f, "{b}")?;
            }
        }
        Ok(())
    }
}

/// Scores strictly greater than 0.5 become 1; 0.5 and below become 0.
pub fn hard_threshold<T: Scalar>(scores: &Tensor<T>) -> MessageBits {
    let half = T::from_f64(0.5);
    let bits = scores
        .data()
        .iter()
        .map(|&s| if s > half { 1u8 } else { 0 })
        .collect();
    MessageBits {
        batch: scores.dim(0),
        len: scores.dim(1),
        bits,
    }
}
