//! Signed two's-complement Q-format arithmetic.
//!
//! The format is runtime data, so the 16-bit Q3.12 datapath and the 11-bit
//! Q3.7 deployment format share one code path. Every operation works on the
//! raw integer and reproduces the saturating adder and truncating multiplier
//! of the hardware bit for bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FxError {
    #[error("invalid Q-format: {total_bits} total bits with {frac_bits} fraction bits")]
    InvalidFormat { total_bits: u32, frac_bits: u32 },
    #[error("format mismatch: {0} vs {1}")]
    FormatMismatch(QFormat, QFormat),
    #[error("raw value {raw} does not fit in {fmt}")]
    RawOutOfRange { raw: i64, fmt: QFormat },
    #[error("malformed fixed-point literal `{0}`")]
    BadLiteral(String),
}

/// Signed fixed-point layout: one sign bit, `total_bits - 1 - frac_bits`
/// integer bits and `frac_bits` fraction bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "QFormatRepr", into = "QFormatRepr")]
pub struct QFormat {
    total_bits: u32,
    frac_bits: u32,
}

#[derive(Serialize, Deserialize)]
struct QFormatRepr {
    total_bits: u32,
    frac_bits: u32,
}

impl TryFrom<QFormatRepr> for QFormat {
    type Error = FxError;
    fn try_from(r: QFormatRepr) -> Result<Self, FxError> {
        QFormat::new(r.total_bits, r.frac_bits)
    }
}

impl From<QFormat> for QFormatRepr {
    fn from(q: QFormat) -> Self {
        QFormatRepr {
            total_bits: q.total_bits,
            frac_bits: q.frac_bits,
        }
    }
}

impl QFormat {
    /// 16-bit datapath format of the prototype.
    pub const Q3_12: QFormat = QFormat {
        total_bits: 16,
        frac_bits: 12,
    };
    /// 11-bit deployment format.
    pub const Q3_7: QFormat = QFormat {
        total_bits: 11,
        frac_bits: 7,
    };

    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self, FxError> {
        if !(2..=32).contains(&total_bits) || frac_bits + 1 > total_bits {
            return Err(FxError::InvalidFormat {
                total_bits,
                frac_bits,
            });
        }
        Ok(QFormat {
            total_bits,
            frac_bits,
        })
    }

    /// Format with three integer bits and `total_bits - 4` fraction bits,
    /// the family used by the bit-width sweep.
    pub fn with_three_int_bits(total_bits: u32) -> Result<Self, FxError> {
        if total_bits < 4 {
            return Err(FxError::InvalidFormat {
                total_bits,
                frac_bits: 0,
            });
        }
        QFormat::new(total_bits, total_bits - 4)
    }

    pub fn total_bits(self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    pub fn int_bits(self) -> u32 {
        self.total_bits - 1 - self.frac_bits
    }

    pub fn max_raw(self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    pub fn min_raw(self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    /// Value of one least-significant bit.
    pub fn precision(self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn max_value(self) -> f64 {
        self.max_raw() as f64 * self.precision()
    }

    pub fn min_value(self) -> f64 {
        self.min_raw() as f64 * self.precision()
    }

    /// Raw encoding of 1.0, if the format can represent it.
    pub fn one_raw(self) -> Option<i64> {
        let one = 1i64 << self.frac_bits;
        (one <= self.max_raw()).then_some(one)
    }

    pub fn contains_raw(self, raw: i64) -> bool {
        raw >= self.min_raw() && raw <= self.max_raw()
    }

    /// Number of hex digits used by the golden-vector text form.
    pub fn hex_digits(self) -> usize {
        self.total_bits.div_ceil(4) as usize
    }

    fn mask(self) -> u64 {
        (1u64 << self.total_bits) - 1
    }

    /// Reinterpret the low `total_bits` bits of `v` as a signed value.
    fn wrap(self, v: i64) -> i64 {
        let shift = 64 - self.total_bits;
        (v << shift) >> shift
    }

    fn saturate(self, v: i64) -> (i32, OverflowFlag) {
        if v > self.max_raw() {
            (self.max_raw() as i32, OverflowFlag::Positive)
        } else if v < self.min_raw() {
            (self.min_raw() as i32, OverflowFlag::Negative)
        } else {
            (v as i32, OverflowFlag::None)
        }
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}.{}", self.int_bits(), self.frac_bits)
    }
}

impl FromStr for QFormat {
    type Err = FxError;

    /// Accepts `Q3.12`, `Q3,12` or `3.12`.
    fn from_str(s: &str) -> Result<Self, FxError> {
        let bad = || FxError::BadLiteral(s.to_string());
        let body = s.trim().trim_start_matches(['Q', 'q']);
        let (int, frac) = body.split_once(['.', ',']).ok_or_else(bad)?;
        let int: u32 = int.trim().parse().map_err(|_| bad())?;
        let frac: u32 = frac.trim().parse().map_err(|_| bad())?;
        QFormat::new(int + frac + 1, frac)
    }
}

/// Result of overflow detection in the adder or multiplier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum OverflowFlag {
    #[default]
    None,
    Positive,
    Negative,
}

impl OverflowFlag {
    pub fn occurred(self) -> bool {
        self != OverflowFlag::None
    }
}

/// Product requantization applied by the multiplier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MulQuant {
    /// Arithmetic shift right by `frac_bits`, then saturate. Keeps the format closed.
    #[default]
    Shift,
    /// Keep the upper `total_bits` bits of the double-width product, reinterpreted
    /// in the operand format. Only useful for comparing against raw hardware traces.
    UpperHalf,
}

impl FromStr for MulQuant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "shift" => Ok(MulQuant::Shift),
            "upper-half" => Ok(MulQuant::UpperHalf),
            other => Err(format!("unknown multiplier quantization `{other}`")),
        }
    }
}

/// A fixed-point number: raw two's-complement integer plus its format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FxSample {
    raw: i32,
    fmt: QFormat,
}

impl FxSample {
    pub fn from_raw(raw: i64, fmt: QFormat) -> Result<Self, FxError> {
        if !fmt.contains_raw(raw) {
            return Err(FxError::RawOutOfRange { raw, fmt });
        }
        Ok(FxSample {
            raw: raw as i32,
            fmt,
        })
    }

    pub fn zero(fmt: QFormat) -> Self {
        FxSample { raw: 0, fmt }
    }

    pub fn max(fmt: QFormat) -> Self {
        FxSample {
            raw: fmt.max_raw() as i32,
            fmt,
        }
    }

    pub fn min(fmt: QFormat) -> Self {
        FxSample {
            raw: fmt.min_raw() as i32,
            fmt,
        }
    }

    pub fn raw(self) -> i32 {
        self.raw
    }

    pub fn fmt(self) -> QFormat {
        self.fmt
    }

    pub fn is_zero(self) -> bool {
        self.raw == 0
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 * self.fmt.precision()
    }

    /// Golden-vector text form, e.g. `0x7FFF` for Q3.12 or `0x3FF` for Q3.7.
    pub fn to_hex(self) -> String {
        let bits = (self.raw as i64 as u64) & self.fmt.mask();
        format!("0x{:0width$X}", bits, width = self.fmt.hex_digits())
    }

    pub fn from_hex(s: &str, fmt: QFormat) -> Result<Self, FxError> {
        let digits = s
            .trim()
            .strip_prefix("0x")
            .or_else(|| s.trim().strip_prefix("0X"))
            .ok_or_else(|| FxError::BadLiteral(s.to_string()))?;
        let bits =
            u64::from_str_radix(digits, 16).map_err(|_| FxError::BadLiteral(s.to_string()))?;
        if bits > fmt.mask() {
            return Err(FxError::BadLiteral(s.to_string()));
        }
        Ok(FxSample {
            raw: fmt.wrap(bits as i64) as i32,
            fmt,
        })
    }
}

impl fmt::Display for FxSample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

fn same_fmt(a: FxSample, b: FxSample) -> Result<QFormat, FxError> {
    if a.fmt != b.fmt {
        return Err(FxError::FormatMismatch(a.fmt, b.fmt));
    }
    Ok(a.fmt)
}

/// Nearest representable value (ties to even), saturating outside the range.
/// NaN maps to zero.
pub fn fx_from_real(x: f64, fmt: QFormat) -> FxSample {
    if x.is_nan() {
        return FxSample::zero(fmt);
    }
    let scaled = (x * (fmt.frac_bits as f64).exp2()).round_ties_even();
    let raw = if scaled >= fmt.max_raw() as f64 {
        fmt.max_raw()
    } else if scaled <= fmt.min_raw() as f64 {
        fmt.min_raw()
    } else {
        scaled as i64
    };
    FxSample {
        raw: raw as i32,
        fmt,
    }
}

/// Two's-complement add with the hardware overflow rule: a positive pair that
/// wraps negative yields the format maximum, a negative pair that wraps
/// positive yields the format minimum.
pub fn fx_add(a: FxSample, b: FxSample) -> Result<(FxSample, OverflowFlag), FxError> {
    let fmt = same_fmt(a, b)?;
    let wrapped = fmt.wrap(a.raw as i64 + b.raw as i64);
    let (raw, flag) = if a.raw >= 0 && b.raw >= 0 && wrapped < 0 {
        (fmt.max_raw(), OverflowFlag::Positive)
    } else if a.raw < 0 && b.raw < 0 && wrapped >= 0 {
        (fmt.min_raw(), OverflowFlag::Negative)
    } else {
        (wrapped, OverflowFlag::None)
    };
    Ok((
        FxSample {
            raw: raw as i32,
            fmt,
        },
        flag,
    ))
}

/// Negation; the format minimum saturates to the maximum.
pub fn fx_neg(a: FxSample) -> FxSample {
    let (raw, _) = a.fmt.saturate(-(a.raw as i64));
    FxSample { raw, fmt: a.fmt }
}

/// `a - b` as `a + (-b)` through the saturating adder.
pub fn fx_sub(a: FxSample, b: FxSample) -> Result<(FxSample, OverflowFlag), FxError> {
    same_fmt(a, b)?;
    fx_add(a, fx_neg(b))
}

/// Multiply with the format-preserving shift requantization.
pub fn fx_mul(a: FxSample, b: FxSample) -> Result<(FxSample, OverflowFlag), FxError> {
    fx_mul_with(a, b, MulQuant::Shift)
}

pub fn fx_mul_with(
    a: FxSample,
    b: FxSample,
    quant: MulQuant,
) -> Result<(FxSample, OverflowFlag), FxError> {
    let fmt = same_fmt(a, b)?;
    let product = a.raw as i64 * b.raw as i64;
    let shifted = match quant {
        MulQuant::Shift => product >> fmt.frac_bits,
        MulQuant::UpperHalf => product >> fmt.total_bits,
    };
    let (raw, flag) = fmt.saturate(shifted);
    Ok((FxSample { raw, fmt }, flag))
}

/// Absolute value; the format minimum saturates to the maximum.
pub fn fx_abs(a: FxSample) -> FxSample {
    if a.raw < 0 {
        fx_neg(a)
    } else {
        a
    }
}

/// Doubling by a one-bit left shift, saturating.
pub fn fx_shl1(a: FxSample) -> (FxSample, OverflowFlag) {
    let (raw, flag) = a.fmt.saturate((a.raw as i64) << 1);
    (FxSample { raw, fmt: a.fmt }, flag)
}

pub fn fx_clamp(a: FxSample, lo: FxSample, hi: FxSample) -> Result<FxSample, FxError> {
    same_fmt(a, lo)?;
    same_fmt(a, hi)?;
    Ok(FxSample {
        raw: a.raw.clamp(lo.raw, hi.raw),
        fmt: a.fmt,
    })
}

/// Convert to another format: round to nearest (ties to even) on dropped
/// fraction bits, saturate on range.
pub fn fx_requantize(a: FxSample, to: QFormat) -> FxSample {
    let raw = a.raw as i64;
    let value = if to.frac_bits >= a.fmt.frac_bits {
        let shift = to.frac_bits - a.fmt.frac_bits;
        // i64 holds 32-bit values shifted by up to 31 bits.
        raw << shift
    } else {
        let shift = a.fmt.frac_bits - to.frac_bits;
        let q = raw >> shift;
        let rem = raw - (q << shift);
        let half = 1i64 << (shift - 1);
        if rem > half || (rem == half && q & 1 == 1) {
            q + 1
        } else {
            q
        }
    };
    let (raw, _) = to.saturate(value);
    FxSample { raw, fmt: to }
}
