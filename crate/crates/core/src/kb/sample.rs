//! Legal and boundary-violating value generation for single parameters.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use super::{Dtype, ParameterSpec, ValueRange};
use crate::literal::{ArgValue, Literal};

/// Token used as the illegal probe for enum parameters; never a member.
pub const BOUNDARY_PROBE: &str = "___bc_probe";

/// The open side of a half-bounded range is capped at `bound ± OPEN_SPAN`
/// (scaled up for large bounds) for legal sampling.
const OPEN_SPAN: f64 = 10.0;

/// Sampled floats are rounded to this many decimals.
const FLOAT_DECIMALS: i32 = 4;

const LEGAL_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parameter `{param}` cannot be sampled: {reason}")]
pub struct NotSampleable {
    pub param: String,
    pub reason: &'static str,
}

fn not_sampleable(p: &ParameterSpec, reason: &'static str) -> NotSampleable {
    NotSampleable { param: p.name.clone(), reason }
}

fn round_float(v: f64) -> f64 {
    let scale = 10f64.powi(FLOAT_DECIMALS);
    let r = (v * scale).round() / scale;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Closed numeric window used for legal sampling.
fn sampling_window(range: &ValueRange) -> (f64, f64) {
    let span = |b: f64| OPEN_SPAN.max(b.abs());
    match (range.low, range.high) {
        (Some(lo), Some(hi)) => (lo, hi),
        (Some(lo), None) => (lo, lo + span(lo)),
        (None, Some(hi)) => (hi - span(hi), hi),
        (None, None) => (-OPEN_SPAN, OPEN_SPAN),
    }
}

/// Integer window honouring bound inclusivity; `None` if it is empty.
fn int_window(range: &ValueRange) -> Option<(i64, i64)> {
    let (lo, hi) = sampling_window(range);
    let mut lo_i = lo.ceil();
    if range.low == Some(lo) && !range.low_inclusive && lo_i == lo {
        lo_i += 1.0;
    }
    let mut hi_i = hi.floor();
    if range.high == Some(hi) && !range.high_inclusive && hi_i == hi {
        hi_i -= 1.0;
    }
    (lo_i <= hi_i).then_some((lo_i as i64, hi_i as i64))
}

/// A value satisfying the parameter's dtype and range or enum membership.
///
/// Parameters with no documented range, no enum and no boolean dtype fall
/// back to their literal default; without one they are not sampleable.
pub fn sample_legal_value<R: Rng + ?Sized>(param: &ParameterSpec, rng: &mut R) -> Result<Literal, NotSampleable> {
    if let Some(members) = param.enum_values.as_deref().filter(|m| !m.is_empty()) {
        return Ok(members.choose(rng).expect("non-empty").clone());
    }
    match (param.dtype, &param.range) {
        (Dtype::Boolean, _) => Ok(Literal::Bool(rng.gen_bool(0.5))),
        (Dtype::Int, Some(range)) => {
            let (lo, hi) = int_window(range).ok_or_else(|| not_sampleable(param, "range holds no integer"))?;
            Ok(Literal::Int(rng.gen_range(lo..=hi)))
        }
        (Dtype::Float, Some(range)) => {
            let (lo, hi) = sampling_window(range);
            for _ in 0..LEGAL_ATTEMPTS {
                let v = if lo == hi { lo } else { round_float(rng.gen_range(lo..=hi)) };
                if range.contains(v) {
                    return Ok(Literal::Float(v));
                }
            }
            Err(not_sampleable(param, "no representable legal float found"))
        }
        _ => match &param.default {
            Some(ArgValue::Lit(l)) => Ok(l.clone()),
            _ => Err(not_sampleable(param, "range is not documented and there is no enum or default")),
        },
    }
}

/// An illegal value just outside the documented legal range.
///
/// Numeric probes sit on the illegal side of a finite bound: integers exactly
/// one step past it, floats within `0.1 * max(1, |bound|)` of it. Enum
/// parameters get [`BOUNDARY_PROBE`].
pub fn sample_illegal_boundary_value<R: Rng + ?Sized>(
    param: &ParameterSpec,
    rng: &mut R,
) -> Result<Literal, NotSampleable> {
    if param.enum_values.as_deref().map(|m| !m.is_empty()).unwrap_or(false) {
        return Ok(Literal::Str(BOUNDARY_PROBE.to_string()));
    }
    let range = match (param.dtype, &param.range) {
        (Dtype::Int | Dtype::Float, Some(r)) => r,
        _ => return Err(not_sampleable(param, "no finite bound is documented")),
    };
    let below = match (range.low, range.high) {
        (Some(_), Some(_)) => rng.gen_bool(0.5),
        (Some(_), None) => true,
        (None, Some(_)) => false,
        (None, None) => return Err(not_sampleable(param, "no finite bound is documented")),
    };
    let value = if param.dtype == Dtype::Int {
        Literal::Int(if below {
            let lo = range.low.expect("checked");
            if range.low_inclusive {
                lo.ceil() as i64 - 1
            } else {
                lo.floor() as i64
            }
        } else {
            let hi = range.high.expect("checked");
            if range.high_inclusive {
                hi.floor() as i64 + 1
            } else {
                hi.ceil() as i64
            }
        })
    } else {
        let bound = if below { range.low } else { range.high }.expect("checked");
        let delta = 0.1 * bound.abs().max(1.0);
        // Offsets start at 5% of delta so that rounding never lands on the bound.
        let offset = round_float(delta * rng.gen_range(0.05..=1.0)).max(10f64.powi(-FLOAT_DECIMALS));
        Literal::Float(round_float(if below { bound - offset } else { bound + offset }))
    };
    Ok(value)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::kb::ValueRange;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn range(s: &str) -> ValueRange {
        ValueRange::parse(s).unwrap().unwrap()
    }

    #[test]
    fn float_in_unit_interval() {
        let p = ParameterSpec::new("rate", Dtype::Float).with_range(range("[0, 1]"));
        let mut r = rng();
        for _ in 0..500 {
            let v = sample_legal_value(&p, &mut r).unwrap().as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn booleans_and_enums() {
        let mut r = rng();
        let b = ParameterSpec::new("use_bias", Dtype::Boolean);
        assert!(matches!(sample_legal_value(&b, &mut r).unwrap(), Literal::Bool(_)));
        let act = ParameterSpec::new("activation", Dtype::String)
            .with_enum(vec![Literal::Str("tanh".into()), Literal::None]);
        for _ in 0..20 {
            let v = sample_legal_value(&act, &mut r).unwrap();
            assert!(v == Literal::Str("tanh".into()) || v == Literal::None);
        }
        assert_eq!(sample_illegal_boundary_value(&act, &mut r).unwrap(), Literal::Str(BOUNDARY_PROBE.into()));
    }

    #[test]
    fn unknown_range_is_not_sampleable() {
        let mut r = rng();
        let p = ParameterSpec::new("filters", Dtype::Int);
        assert!(sample_legal_value(&p, &mut r).is_err());
        assert!(sample_illegal_boundary_value(&p, &mut r).is_err());
        let with_default = p.clone().with_default(ArgValue::Lit(Literal::Int(32)));
        assert_eq!(sample_legal_value(&with_default, &mut r).unwrap(), Literal::Int(32));
        assert!(sample_illegal_boundary_value(&ParameterSpec::new("b", Dtype::Boolean), &mut r).is_err());
    }

    #[test]
    fn boundary_probes() {
        let mut r = rng();
        let rate = ParameterSpec::new("rate", Dtype::Float).with_range(range("[0, inf)"));
        let v = sample_illegal_boundary_value(&rate, &mut r).unwrap().as_f64().unwrap();
        assert!((-0.1..0.0).contains(&v), "{v}");
        let k = ParameterSpec::new("kernel_size", Dtype::Int).with_range(range(">= 1"));
        assert_eq!(sample_illegal_boundary_value(&k, &mut r).unwrap(), Literal::Int(0));
        let open = ParameterSpec::new("units", Dtype::Int).with_range(range("(0, inf)"));
        assert_eq!(sample_illegal_boundary_value(&open, &mut r).unwrap(), Literal::Int(0));
        let upper = ParameterSpec::new("p", Dtype::Int).with_range(range("x <= 8"));
        assert_eq!(sample_illegal_boundary_value(&upper, &mut r).unwrap(), Literal::Int(9));
    }

    fn arb_range() -> impl Strategy<Value = ValueRange> {
        let bound = prop_oneof![(-1000i32..1000).prop_map(|v| v as f64), (-100.0f64..100.0).prop_map(round_float)];
        (proptest::option::of(bound.clone()), proptest::option::of(bound), any::<bool>(), any::<bool>())
            .prop_filter_map("need a bound and a non-empty window", |(lo, hi, li, hi_inc)| {
                let (lo, hi) = match (lo, hi) {
                    (Some(a), Some(b)) if a > b => (Some(b), Some(a)),
                    (None, None) => (Some(0.0), None),
                    other => other,
                };
                let r = ValueRange { low: lo, high: hi, low_inclusive: li, high_inclusive: hi_inc }.normalized();
                if let (Some(a), Some(b)) = (r.low, r.high) {
                    if b - a < 2.0 {
                        return None;
                    }
                }
                Some(r)
            })
    }

    proptest! {
        #[test]
        fn legal_samples_pass_and_probes_fail(r in arb_range(), is_int in any::<bool>(), seed in any::<u64>()) {
            let dtype = if is_int { Dtype::Int } else { Dtype::Float };
            let p = ParameterSpec::new("p", dtype).with_range(r);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let legal = sample_legal_value(&p, &mut rng).unwrap();
            prop_assert!(p.admits(&legal), "{legal:?} should be legal for {r:?}");
            let illegal = sample_illegal_boundary_value(&p, &mut rng).unwrap();
            prop_assert!(!p.admits(&illegal), "{illegal:?} should be illegal for {r:?}");
            let v = illegal.as_f64().unwrap();
            let dist = [r.low, r.high].into_iter().flatten().map(|b| (v - b).abs()).fold(f64::INFINITY, f64::min);
            if is_int {
                // One integer step past the nearest legal integer.
                prop_assert!(dist <= 1.0 + 1e-9, "int probe {v} too far from {r:?}");
            } else {
                let budget = [r.low, r.high].into_iter().flatten().map(|b| 0.1 * b.abs().max(1.0)).fold(0.0, f64::max);
                prop_assert!(dist <= budget + 1e-9, "float probe {v} outside budget for {r:?}");
            }
        }
    }
}
