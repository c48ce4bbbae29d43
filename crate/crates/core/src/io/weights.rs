//! Binary weight-memory images.
//!
//! An image is the concatenation of one block per neuron in loading order.
//! Each word is a little-endian two's-complement integer occupying
//! `ceil(total_bits / 8)` bytes, sign-extended from `total_bits`. A basal
//! block holds the weights in input order followed by the bias.

use crate::fixedpoint::{FxSample, QFormat};
use crate::neuron::MAX_FAN_IN;

use super::IoError;

/// Words per weight-memory block: 1023 weights and one bias.
pub const BLOCK_CAPACITY: usize = MAX_FAN_IN + 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightImage {
    pub fmt: QFormat,
    pub blocks: Vec<Vec<FxSample>>,
}

pub fn word_bytes(fmt: QFormat) -> usize {
    fmt.total_bits().div_ceil(8) as usize
}

impl WeightImage {
    pub fn new(fmt: QFormat, blocks: Vec<Vec<FxSample>>) -> Result<Self, IoError> {
        let image = WeightImage { fmt, blocks };
        image.check_capacity(BLOCK_CAPACITY)?;
        Ok(image)
    }

    pub fn check_capacity(&self, capacity: usize) -> Result<(), IoError> {
        for (block, words) in self.blocks.iter().enumerate() {
            if words.len() > capacity {
                return Err(IoError::BlockCapacity {
                    block,
                    words: words.len(),
                    capacity,
                });
            }
            if let Some(w) = words.iter().find(|w| w.fmt() != self.fmt) {
                return Err(crate::fixedpoint::FxError::FormatMismatch(self.fmt, w.fmt()).into());
            }
        }
        Ok(())
    }

    pub fn word_count(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = word_bytes(self.fmt);
        let mut out = Vec::with_capacity(self.word_count() * n);
        for w in self.blocks.iter().flatten() {
            out.extend_from_slice(&w.raw().to_le_bytes()[..n]);
        }
        out
    }

    /// Splits `bytes` into blocks of the given word counts.
    pub fn from_bytes(bytes: &[u8], fmt: QFormat, block_words: &[usize]) -> Result<Self, IoError> {
        let n = word_bytes(fmt);
        for (block, &words) in block_words.iter().enumerate() {
            if words > BLOCK_CAPACITY {
                return Err(IoError::BlockCapacity {
                    block,
                    words,
                    capacity: BLOCK_CAPACITY,
                });
            }
        }
        let needed = block_words.iter().sum::<usize>() * n;
        if bytes.len() < needed {
            return Err(IoError::Truncated {
                needed,
                found: bytes.len(),
            });
        }
        if bytes.len() > needed {
            return Err(IoError::TrailingBytes {
                found: bytes.len() - needed,
            });
        }
        let shift = 32 - 8 * n as u32;
        let mut chunks = bytes.chunks_exact(n);
        let mut blocks = Vec::with_capacity(block_words.len());
        for &words in block_words {
            let mut block = Vec::with_capacity(words);
            for chunk in chunks.by_ref().take(words) {
                let mut buf = [0u8; 4];
                buf[..n].copy_from_slice(chunk);
                let raw = (i32::from_le_bytes(buf) << shift) >> shift;
                block.push(FxSample::from_raw(raw as i64, fmt)?);
            }
            blocks.push(block);
        }
        Ok(WeightImage { fmt, blocks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoint::fx_from_real;

    #[test]
    fn one_neuron_bytes() {
        let fmt = QFormat::Q3_12;
        let image = WeightImage::new(fmt, vec![vec![fx_from_real(1.0, fmt), fx_from_real(0.5, fmt)]]).unwrap();
        assert_eq!(image.to_bytes(), vec![0x00, 0x10, 0x00, 0x08]);
        assert_eq!(WeightImage::from_bytes(&image.to_bytes(), fmt, &[2]).unwrap(), image);
    }

    #[test]
    fn narrow_words_are_sign_extended() {
        let fmt = QFormat::Q3_7;
        let image = WeightImage::new(fmt, vec![vec![FxSample::min(fmt), FxSample::max(fmt)]]).unwrap();
        assert_eq!(image.to_bytes(), vec![0x00, 0xFC, 0xFF, 0x03]);
        assert_eq!(WeightImage::from_bytes(&image.to_bytes(), fmt, &[2]).unwrap(), image);
        // 0x0400 is not a sign-extended 11-bit word.
        assert!(WeightImage::from_bytes(&[0x00, 0x04], fmt, &[1]).is_err());
    }

    #[test]
    fn capacity_and_length_errors() {
        let fmt = QFormat::Q3_12;
        let big = vec![FxSample::zero(fmt); BLOCK_CAPACITY + 1];
        assert!(matches!(WeightImage::new(fmt, vec![big]), Err(IoError::BlockCapacity { .. })));
        assert!(WeightImage::new(fmt, vec![vec![FxSample::zero(fmt); BLOCK_CAPACITY]]).is_ok());
        assert!(matches!(
            WeightImage::from_bytes(&[0; 3], fmt, &[2]),
            Err(IoError::Truncated { needed: 4, found: 3 })
        ));
        assert!(matches!(WeightImage::from_bytes(&[0; 6], fmt, &[2]), Err(IoError::TrailingBytes { found: 2 })));
        assert!(matches!(
            WeightImage::from_bytes(&vec![0; 2050], fmt, &[1025]),
            Err(IoError::BlockCapacity { .. })
        ));
    }

    #[test]
    fn wide_formats_use_more_bytes() {
        let fmt = QFormat::with_three_int_bits(24).unwrap();
        assert_eq!(word_bytes(fmt), 3);
        let image = WeightImage::new(fmt, vec![vec![fx_from_real(-1.25, fmt), FxSample::max(fmt)]]).unwrap();
        assert_eq!(WeightImage::from_bytes(&image.to_bytes(), fmt, &[2]).unwrap(), image);
    }
}
