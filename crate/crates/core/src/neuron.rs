//! Two-point CCPU and the point-neuron baseline.
//!
//! A CCPU integrates its receptive field (basal MAC plus bias) into a drive
//! `r`, sums three context pathways into `c`, and passes both through the
//! modulatory transfer `p(r*(r + 2c) + c + c*|r|)`. The rearranged form needs
//! two multipliers and equals `r^2 + 2rc + c(1 + |r|)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::{
    fx_abs, fx_add, fx_clamp, fx_from_real, fx_mul_with, fx_shl1, FxError, FxSample, MulQuant,
    QFormat,
};
use crate::trace::ActivityTrace;

/// Weight-memory capacity: 1023 weights plus one bias word.
pub const MAX_FAN_IN: usize = 1023;

/// Upper clip of the activation block and bound of the integrated context.
pub const CLIP: f64 = 6.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuronError {
    #[error(transparent)]
    Fx(#[from] FxError),
    #[error("input length {got} does not match {expected} weights")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fan-in {0} exceeds weight-memory capacity of {MAX_FAN_IN}")]
    Capacity(usize),
    #[error("{0} transfer is not available in fixed-point mode")]
    UnsupportedMode(TransferKind),
    #[error("half-Gaussian width must be positive, got {0}")]
    BadSigma(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    Relu6Hardware,
    HalfGaussianReference,
    PointBaseline,
}

impl std::fmt::Display for TransferKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransferKind::Relu6Hardware => "relu6",
            TransferKind::HalfGaussianReference => "half-gaussian",
            TransferKind::PointBaseline => "point",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferMode {
    pub kind: TransferKind,
    /// Width of the half-Gaussian filter; unused by the other kinds.
    pub sigma: f64,
}

impl TransferMode {
    pub const DEFAULT_SIGMA: f64 = 2.0;

    pub fn relu6() -> Self {
        TransferMode {
            kind: TransferKind::Relu6Hardware,
            sigma: Self::DEFAULT_SIGMA,
        }
    }

    pub fn half_gaussian(sigma: f64) -> Result<Self, NeuronError> {
        if !(sigma > 0.0) {
            return Err(NeuronError::BadSigma(sigma));
        }
        Ok(TransferMode {
            kind: TransferKind::HalfGaussianReference,
            sigma,
        })
    }

    pub fn point() -> Self {
        TransferMode {
            kind: TransferKind::PointBaseline,
            sigma: Self::DEFAULT_SIGMA,
        }
    }
}

/// Parameters of one neuron. Context weight groups are empty for point neurons.
#[derive(Clone, Debug, PartialEq)]
pub struct CcpuSpec {
    pub basal_weights: Vec<FxSample>,
    pub bias: FxSample,
    pub ctx_weights_proximal: Vec<FxSample>,
    pub ctx_weights_distal: Vec<FxSample>,
    pub ctx_weights_universal: Vec<FxSample>,
    pub mode: TransferMode,
}

impl CcpuSpec {
    pub fn fmt(&self) -> QFormat {
        self.bias.fmt()
    }

    pub fn fan_in(&self) -> usize {
        self.basal_weights.len()
    }

    pub fn validate(&self) -> Result<(), NeuronError> {
        if self.basal_weights.len() > MAX_FAN_IN {
            return Err(NeuronError::Capacity(self.basal_weights.len()));
        }
        if self.mode.kind == TransferKind::HalfGaussianReference && !(self.mode.sigma > 0.0) {
            return Err(NeuronError::BadSigma(self.mode.sigma));
        }
        let fmt = self.fmt();
        let all = self
            .basal_weights
            .iter()
            .chain(&self.ctx_weights_proximal)
            .chain(&self.ctx_weights_distal)
            .chain(&self.ctx_weights_universal);
        for w in all {
            if w.fmt() != fmt {
                return Err(FxError::FormatMismatch(fmt, w.fmt()).into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeuronOutput {
    pub value: FxSample,
    pub fired: bool,
    pub r_drive: FxSample,
    pub c_drive: FxSample,
}

fn check_len(expected: usize, got: usize) -> Result<(), NeuronError> {
    if expected != got {
        return Err(NeuronError::LengthMismatch { expected, got });
    }
    Ok(())
}

/// Receptive-field MAC with the default multiplier.
pub fn mac_rf(
    inputs: &[FxSample],
    spec: &CcpuSpec,
    trace: &mut ActivityTrace,
) -> Result<FxSample, NeuronError> {
    mac_rf_with(inputs, spec, MulQuant::Shift, trace)
}

/// Accumulates `input * weight` in input order, then adds the bias last.
/// Zero inputs are skipped and cost nothing; the bias fetch always counts.
pub fn mac_rf_with(
    inputs: &[FxSample],
    spec: &CcpuSpec,
    quant: MulQuant,
    trace: &mut ActivityTrace,
) -> Result<FxSample, NeuronError> {
    check_len(spec.basal_weights.len(), inputs.len())?;
    let mut acc = FxSample::zero(spec.fmt());
    for (&x, &w) in inputs.iter().zip(&spec.basal_weights) {
        if x.is_zero() {
            trace.record_skip();
            continue;
        }
        let (p, _) = fx_mul_with(x, w, quant)?;
        acc = fx_add(acc, p)?.0;
        trace.record_synapse();
    }
    acc = fx_add(acc, spec.bias)?.0;
    trace.record_synapse();
    Ok(acc)
}

/// Weighted sum over a context pathway, zero-skipping like the basal MAC but
/// without a bias word.
pub fn context_mac(
    inputs: &[FxSample],
    weights: &[FxSample],
    fmt: QFormat,
    quant: MulQuant,
    trace: &mut ActivityTrace,
) -> Result<FxSample, NeuronError> {
    check_len(weights.len(), inputs.len())?;
    let mut acc = FxSample::zero(fmt);
    for (&x, &w) in inputs.iter().zip(weights) {
        trace.record_context(!x.is_zero());
        if x.is_zero() {
            continue;
        }
        let (p, _) = fx_mul_with(x, w, quant)?;
        acc = fx_add(acc, p)?.0;
    }
    Ok(acc)
}

fn clip_bounds(fmt: QFormat) -> (FxSample, FxSample) {
    (fx_from_real(-CLIP, fmt), fx_from_real(CLIP, fmt))
}

/// Integrated context: saturating adder chain `cp + cd + cu`, then a signed
/// clamp to [-6, 6].
pub fn integrate_context(
    cp: FxSample,
    cd: FxSample,
    cu: FxSample,
) -> Result<FxSample, NeuronError> {
    let (s, _) = fx_add(cp, cd)?;
    let (s, _) = fx_add(s, cu)?;
    let (lo, hi) = clip_bounds(s.fmt());
    Ok(fx_clamp(s, lo, hi)?)
}

/// Rearranged modulatory drive `r*(r + 2c) + c + c*|r|` on the fixed-point datapath.
pub fn modulatory_drive(r: FxSample, c: FxSample, quant: MulQuant) -> Result<FxSample, NeuronError> {
    let (two_c, _) = fx_shl1(c);
    let (r_plus, _) = fx_add(r, two_c)?;
    let (m1, _) = fx_mul_with(r, r_plus, quant)?;
    let (m2, _) = fx_mul_with(c, fx_abs(r), quant)?;
    let (t, _) = fx_add(m1, c)?;
    let (t, _) = fx_add(t, m2)?;
    Ok(t)
}

/// Unrearranged drive `r^2 + 2rc + c(1 + |r|)` with three multipliers, used
/// to cross-check the rearrangement.
pub fn modulatory_drive_direct(
    r: FxSample,
    c: FxSample,
    quant: MulQuant,
) -> Result<FxSample, NeuronError> {
    let fmt = r.fmt();
    let one = fx_from_real(1.0, fmt);
    let (r2, _) = fx_mul_with(r, r, quant)?;
    let (two_r, _) = fx_shl1(r);
    let (rc2, _) = fx_mul_with(two_r, c, quant)?;
    let (one_abs, _) = fx_add(one, fx_abs(r))?;
    let (c_term, _) = fx_mul_with(c, one_abs, quant)?;
    let (t, _) = fx_add(r2, rc2)?;
    let (t, _) = fx_add(t, c_term)?;
    Ok(t)
}

/// Activation block: ReLU with the positive side clipped at 6.
pub fn activation(m: FxSample) -> FxSample {
    let fmt = m.fmt();
    let hi = fx_from_real(CLIP, fmt);
    // Bounds share the format, so the clamp cannot fail.
    fx_clamp(m, FxSample::zero(fmt), hi).expect("bounds share the format")
}

pub fn modulatory_transfer(
    r: FxSample,
    c: FxSample,
    mode: TransferMode,
) -> Result<FxSample, NeuronError> {
    modulatory_transfer_with(r, c, mode, MulQuant::Shift)
}

pub fn modulatory_transfer_with(
    r: FxSample,
    c: FxSample,
    mode: TransferMode,
    quant: MulQuant,
) -> Result<FxSample, NeuronError> {
    match mode.kind {
        TransferKind::Relu6Hardware => Ok(activation(modulatory_drive(r, c, quant)?)),
        TransferKind::PointBaseline => Ok(r),
        TransferKind::HalfGaussianReference => Err(NeuronError::UnsupportedMode(mode.kind)),
    }
}

/// Full CCPU evaluation on the fixed-point datapath.
pub fn ccpu_forward(
    inputs: &[FxSample],
    cp: FxSample,
    cd: FxSample,
    cu: FxSample,
    spec: &CcpuSpec,
    trace: &mut ActivityTrace,
) -> Result<NeuronOutput, NeuronError> {
    ccpu_forward_with(inputs, cp, cd, cu, spec, MulQuant::Shift, trace)
}

pub fn ccpu_forward_with(
    inputs: &[FxSample],
    cp: FxSample,
    cd: FxSample,
    cu: FxSample,
    spec: &CcpuSpec,
    quant: MulQuant,
    trace: &mut ActivityTrace,
) -> Result<NeuronOutput, NeuronError> {
    if spec.mode.kind == TransferKind::HalfGaussianReference {
        return Err(NeuronError::UnsupportedMode(spec.mode.kind));
    }
    let r = mac_rf_with(inputs, spec, quant, trace)?;
    let c = integrate_context(cp, cd, cu)?;
    let m = modulatory_transfer_with(r, c, spec.mode, quant)?;
    Ok(finish(activation(m), r, c, trace))
}

/// Point neuron: activation of the receptive-field sum, contexts ignored.
pub fn point_forward(
    inputs: &[FxSample],
    spec: &CcpuSpec,
    trace: &mut ActivityTrace,
) -> Result<NeuronOutput, NeuronError> {
    point_forward_with(inputs, spec, MulQuant::Shift, trace)
}

pub fn point_forward_with(
    inputs: &[FxSample],
    spec: &CcpuSpec,
    quant: MulQuant,
    trace: &mut ActivityTrace,
) -> Result<NeuronOutput, NeuronError> {
    let r = mac_rf_with(inputs, spec, quant, trace)?;
    Ok(finish(activation(r), r, FxSample::zero(r.fmt()), trace))
}

fn finish(value: FxSample, r: FxSample, c: FxSample, trace: &mut ActivityTrace) -> NeuronOutput {
    let fired = !value.is_zero();
    trace.record_neuron(fired);
    NeuronOutput {
        value,
        fired,
        r_drive: r,
        c_drive: c,
    }
}

/// Float reference forms of the transfer and their derivatives.
pub mod reference {
    use super::{TransferKind, TransferMode, CLIP};

    /// `r*(r + 2c) + c + c*|r|`.
    pub fn drive(r: f64, c: f64) -> f64 {
        r * (r + 2.0 * c) + c + c * r.abs()
    }

    /// `r^2 + 2rc + c(1 + |r|)`.
    pub fn drive_direct(r: f64, c: f64) -> f64 {
        r * r + 2.0 * r * c + c * (1.0 + r.abs())
    }

    /// Partial derivatives `(dT/dr, dT/dc)`; uses sign(0) = 0 at the kink.
    pub fn drive_grad(r: f64, c: f64) -> (f64, f64) {
        let sign = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        (2.0 * r + 2.0 * c + c * sign, 2.0 * r + 1.0 + r.abs())
    }

    pub fn relu6(t: f64) -> f64 {
        t.clamp(0.0, CLIP)
    }

    pub fn relu6_grad(t: f64) -> f64 {
        if t > 0.0 && t < CLIP {
            1.0
        } else {
            0.0
        }
    }

    /// Smooth gate with the support and range of ReLU6:
    /// 0 for `t <= 0`, else `6 * (1 - exp(-t^2 / (2 sigma^2)))`.
    pub fn half_gaussian(t: f64, sigma: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            CLIP * (1.0 - (-t * t / (2.0 * sigma * sigma)).exp())
        }
    }

    pub fn half_gaussian_grad(t: f64, sigma: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            let s2 = sigma * sigma;
            CLIP * t / s2 * (-t * t / (2.0 * s2)).exp()
        }
    }

    /// Gate `p` applied to a drive (or to `r` directly for point neurons).
    pub fn gate(t: f64, mode: TransferMode) -> f64 {
        match mode.kind {
            TransferKind::HalfGaussianReference => half_gaussian(t, mode.sigma),
            TransferKind::Relu6Hardware | TransferKind::PointBaseline => relu6(t),
        }
    }

    pub fn gate_grad(t: f64, mode: TransferMode) -> f64 {
        match mode.kind {
            TransferKind::HalfGaussianReference => half_gaussian_grad(t, mode.sigma),
            TransferKind::Relu6Hardware | TransferKind::PointBaseline => relu6_grad(t),
        }
    }

    pub fn transfer(r: f64, c: f64, mode: TransferMode) -> f64 {
        match mode.kind {
            TransferKind::PointBaseline => relu6(r),
            _ => gate(drive(r, c), mode),
        }
    }

    pub fn logistic(x: f64) -> f64 {
        if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        }
    }
}
