mod common;

use ccpu::fixedpoint::fx_from_real;
use ccpu::neuron::{
    ccpu_forward, modulatory_drive, modulatory_drive_direct, modulatory_transfer, reference, CcpuSpec,
    TransferMode,
};
use ccpu::{ActivityTrace, FxSample, MulQuant, QFormat};
use common::drive_fits;
use proptest::prelude::*;

fn q12(raw: i64) -> FxSample {
    FxSample::from_raw(raw, QFormat::Q3_12).unwrap()
}

#[test]
fn drive_forms_agree_within_two_ulp_on_q3_7() {
    let fmt = QFormat::Q3_7;
    let mut checked = 0;
    for a in fmt.min_raw()..=fmt.max_raw() {
        for b in fmt.min_raw()..=fmt.max_raw() {
            let r = FxSample::from_raw(a, fmt).unwrap();
            let c = FxSample::from_raw(b, fmt).unwrap();
            if !drive_fits(r.to_f64(), c.to_f64(), fmt) {
                continue;
            }
            checked += 1;
            let x = modulatory_drive(r, c, MulQuant::Shift).unwrap().raw();
            let y = modulatory_drive_direct(r, c, MulQuant::Shift).unwrap().raw();
            assert!((x - y).abs() <= 2, "r={r} c={c}: {x} vs {y}");
        }
    }
    assert!(checked > 100_000, "{checked}");
}

#[test]
fn zero_context_gives_clamped_square() {
    let zero = FxSample::zero(QFormat::Q3_12);
    for raw in -0x8000i64..=0x7FFF {
        let r = q12(raw);
        let got = modulatory_transfer(r, zero, TransferMode::relu6()).unwrap();
        let sq = ((raw * raw) >> 12).min(6 << 12);
        assert_eq!(got.raw() as i64, sq, "r={r}");
    }
}

/// For r < 0 the drive is r^2 + c(1 + r), so negative context can only
/// silence when r^2 / (1 + r) <= 6, i.e. r > 3 - sqrt(15).
#[test]
fn suppression_is_reachable_where_algebra_allows() {
    let fmt = QFormat::Q3_12;
    let zero = FxSample::zero(fmt);
    let r_min = 3.0 - 15f64.sqrt();
    for raw in (-(2 << 12)..=(2 << 12)).step_by(17) {
        let r = q12(raw);
        let rf = r.to_f64();
        let silenced_float = (1..=600).any(|k| reference::transfer(rf, -(k as f64) / 100.0, TransferMode::relu6()) == 0.0);
        if rf > r_min + 0.01 {
            assert!(silenced_float, "r={r}");
            let silenced = (1..=6 * 64)
                .map(|k| fx_from_real(-(k as f64) / 64.0, fmt))
                .any(|c| modulatory_transfer(r, c, TransferMode::relu6()).unwrap() == zero);
            assert!(silenced, "r={r}");
        } else if rf < r_min - 0.01 {
            assert!(!silenced_float, "r={r}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    // Q3.12 grid values are short dyadic rationals, so every float operation
    // below is exact and equality is equality of rationals.
    #[test]
    fn rearranged_drive_is_exact_on_dyadic_grid(a in -0x8000i64..=0x7FFF, b in -0x8000i64..=0x7FFF) {
        let (r, c) = (q12(a).to_f64(), q12(b).to_f64());
        prop_assert_eq!(reference::drive(r, c), reference::drive_direct(r, c));
    }

    #[test]
    fn drive_increases_with_context_for_nonnegative_r(r in 0.0f64..6.0, c in -6.0f64..6.0, dc in 1e-3f64..1.0) {
        prop_assert!(reference::drive(r, c + dc) > reference::drive(r, c));
    }

    #[test]
    fn fired_iff_nonzero(weights in prop::collection::vec(-0x8000i64..=0x7FFF, 1..20),
                         bias in -0x8000i64..=0x7FFF, cp in -0x8000i64..=0x7FFF) {
        let fmt = QFormat::Q3_12;
        let spec = CcpuSpec {
            basal_weights: weights.iter().map(|&w| q12(w / 4)).collect(),
            bias: q12(bias),
            ctx_weights_proximal: vec![],
            ctx_weights_distal: vec![],
            ctx_weights_universal: vec![],
            mode: TransferMode::relu6(),
        };
        let inputs: Vec<FxSample> = weights.iter().map(|&w| q12(w)).collect();
        let mut t = ActivityTrace::new();
        let out = ccpu_forward(&inputs, q12(cp), FxSample::zero(fmt), FxSample::zero(fmt), &spec, &mut t).unwrap();
        prop_assert_eq!(out.fired, !out.value.is_zero());
        prop_assert_eq!(t.neurons_fired, out.fired as u64);
        let nonzero = inputs.iter().filter(|x| !x.is_zero()).count() as u64;
        prop_assert_eq!(t.synapse_events, nonzero + 1);
        prop_assert!(out.value.to_f64() >= 0.0 && out.value.to_f64() <= 6.0);
    }
}
