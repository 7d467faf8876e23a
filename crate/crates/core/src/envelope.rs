//! Arrival-envelope algebra.
//!
//! A leaky-bucket regulated flow with peak rate `P`, burst `σ` and sustained
//! rate `ρ` never emits more than `A*(t) = min(P·t, σ + ρ·t)` bits in any
//! window of length `t`. [`PiecewiseEnvelope`] represents such concave
//! piecewise-linear curves as a minimum of affine segments, and
//! [`StatEnvelope`] is the Hoeffding effective envelope of a set of
//! independent regulated flows:
//!
//! ```text
//! G(t) = min( Σ A*_i(t),  Σ ρ_i·t + sqrt( ln(1/ε)/2 · Σ A*_i(t)² ) )
//! ```
//!
//! Units are fixed: seconds, bits, bits/second.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ids::FlowId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvelopeError {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("envelope list is empty")]
    Empty,
    #[error("envelope needs at least one segment")]
    NoSegments,
}

fn invalid(name: &'static str, value: f64, reason: &'static str) -> EnvelopeError {
    EnvelopeError::InvalidParameter {
        name,
        value,
        reason,
    }
}

/// Peak rate of a regulated flow. `Unbounded` drops the peak segment entirely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PeakRate {
    Finite(f64),
    Unbounded,
}

impl PeakRate {
    /// Maps `+inf` to [`PeakRate::Unbounded`].
    pub fn from_f64(rate: f64) -> Self {
        if rate == f64::INFINITY {
            PeakRate::Unbounded
        } else {
            PeakRate::Finite(rate)
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            PeakRate::Finite(r) => Some(r),
            PeakRate::Unbounded => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl fmt::Display for PeakRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PeakRate::Finite(r) => write!(f, "{r}"),
            PeakRate::Unbounded => f.write_str("unbounded"),
        }
    }
}

// On the wire an unbounded peak is `null` (or absent); `inf` is accepted on input.
impl Serialize for PeakRate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.finite().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PeakRate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Option::<f64>::deserialize(d)?
            .map(PeakRate::from_f64)
            .unwrap_or(PeakRate::Unbounded))
    }
}

/// Leaky-bucket traffic contract plus the flow's QoS targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub flow_id: FlowId,
    #[serde(default = "unbounded")]
    pub peak_rate: PeakRate,
    pub sustained_rate: f64,
    pub burst: f64,
    pub epsilon: f64,
    pub app_delay_bound: f64,
}

fn unbounded() -> PeakRate {
    PeakRate::Unbounded
}

impl FlowSpec {
    pub fn new(
        flow_id: impl Into<FlowId>,
        peak_rate: PeakRate,
        sustained_rate: f64,
        burst: f64,
        epsilon: f64,
        app_delay_bound: f64,
    ) -> Result<Self, EnvelopeError> {
        let spec = FlowSpec {
            flow_id: flow_id.into(),
            peak_rate,
            sustained_rate,
            burst,
            epsilon,
            app_delay_bound,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), EnvelopeError> {
        validate_bucket(self.peak_rate, self.burst, self.sustained_rate)?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid("epsilon", self.epsilon, "must lie in (0, 1)"));
        }
        if !(self.app_delay_bound > 0.0) || !self.app_delay_bound.is_finite() {
            return Err(invalid(
                "app_delay_bound",
                self.app_delay_bound,
                "must be positive and finite",
            ));
        }
        Ok(())
    }

    /// The flow's deterministic arrival envelope `A*(t)`.
    pub fn envelope(&self) -> PiecewiseEnvelope {
        leaky_bucket_envelope(self.peak_rate, self.burst, self.sustained_rate)
            .expect("FlowSpec invariants guarantee a valid bucket")
    }
}

fn validate_bucket(peak: PeakRate, burst: f64, sustained: f64) -> Result<(), EnvelopeError> {
    if !(sustained > 0.0) || !sustained.is_finite() {
        return Err(invalid(
            "sustained_rate",
            sustained,
            "must be positive and finite",
        ));
    }
    if !(burst >= 0.0) || !burst.is_finite() {
        return Err(invalid("burst", burst, "must be non-negative and finite"));
    }
    if let PeakRate::Finite(p) = peak {
        if !(p >= sustained) || !p.is_finite() {
            return Err(invalid(
                "peak_rate",
                p,
                "must be finite and at least the sustained rate",
            ));
        }
    }
    Ok(())
}

/// One affine piece `offset + rate·t` of a concave envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub offset: f64,
    pub rate: f64,
}

impl Segment {
    pub fn new(offset: f64, rate: f64) -> Self {
        Segment { offset, rate }
    }

    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        self.offset + self.rate * t
    }
}

/// Curves a FIFO delay analysis can be run against.
pub trait ArrivalEnvelope {
    /// Envelope value at `t ≥ 0`. Callers guarantee the domain.
    fn value_at(&self, t: f64) -> f64;

    /// Slope as `t → ∞`; must stay below the service rate for stability.
    fn long_run_rate(&self) -> f64;

    /// Points where the curve is not smooth, in increasing order.
    fn kinks(&self) -> Vec<f64>;

    /// Exact representation, when the curve is piecewise linear.
    fn as_piecewise(&self) -> Option<&PiecewiseEnvelope> {
        None
    }
}

/// Concave, nondecreasing, piecewise-linear envelope in canonical form:
/// segments sorted by strictly decreasing rate and strictly increasing
/// offset, each attaining the minimum on an interval of positive length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseEnvelope {
    segments: Vec<Segment>,
}

impl PiecewiseEnvelope {
    /// Builds the lower envelope `min_k (offset_k + rate_k·t)` over `t ≥ 0`,
    /// discarding segments that never attain the minimum.
    pub fn from_segments(mut segments: Vec<Segment>) -> Result<Self, EnvelopeError> {
        if segments.is_empty() {
            return Err(EnvelopeError::NoSegments);
        }
        for s in &segments {
            if !(s.offset >= 0.0) || !s.offset.is_finite() {
                return Err(invalid("offset", s.offset, "must be non-negative and finite"));
            }
            if !(s.rate >= 0.0) || !s.rate.is_finite() {
                return Err(invalid("rate", s.rate, "must be non-negative and finite"));
            }
        }
        segments.sort_by(|a, b| {
            b.rate
                .total_cmp(&a.rate)
                .then_with(|| a.offset.total_cmp(&b.offset))
        });
        segments.dedup_by(|later, earlier| later.rate == earlier.rate);

        let mut hull: Vec<Segment> = Vec::with_capacity(segments.len());
        for seg in segments {
            while let Some(&top) = hull.last() {
                // Lower rate and no larger offset: dominates `top` on all of t ≥ 0.
                if seg.offset <= top.offset {
                    hull.pop();
                    continue;
                }
                if hull.len() >= 2 {
                    let prev = hull[hull.len() - 2];
                    if crossing(&top, &seg) <= crossing(&prev, &top) {
                        hull.pop();
                        continue;
                    }
                }
                break;
            }
            hull.push(seg);
        }
        Ok(PiecewiseEnvelope { segments: hull })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Times at which consecutive segments hand over, strictly increasing.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.segments
            .windows(2)
            .map(|w| crossing(&w[0], &w[1]))
            .collect()
    }

    pub fn min_offset(&self) -> f64 {
        self.segments[0].offset
    }

    pub fn eval(&self, t: f64) -> Result<f64, EnvelopeError> {
        check_time(t)?;
        Ok(self.value_at(t))
    }

    /// Index of the segment active at `t`, given precomputed breakpoints.
    fn active_segment(&self, breakpoints: &[f64], t: f64) -> Segment {
        self.segments[breakpoints.partition_point(|&b| b <= t)]
    }
}

/// Crossing time of a higher-rate segment `a` with a lower-rate segment `b`.
#[inline]
fn crossing(a: &Segment, b: &Segment) -> f64 {
    (b.offset - a.offset) / (a.rate - b.rate)
}

fn check_time(t: f64) -> Result<(), EnvelopeError> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid("t", t, "evaluation time must be non-negative and finite"));
    }
    Ok(())
}

impl ArrivalEnvelope for PiecewiseEnvelope {
    #[inline]
    fn value_at(&self, t: f64) -> f64 {
        self.segments
            .iter()
            .map(|s| s.at(t))
            .fold(f64::INFINITY, f64::min)
    }

    fn long_run_rate(&self) -> f64 {
        self.segments[self.segments.len() - 1].rate
    }

    fn kinks(&self) -> Vec<f64> {
        self.breakpoints()
    }

    fn as_piecewise(&self) -> Option<&PiecewiseEnvelope> {
        Some(self)
    }
}

impl<'de> Deserialize<'de> for PiecewiseEnvelope {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            segments: Vec<Segment>,
        }
        let raw = Raw::deserialize(d)?;
        PiecewiseEnvelope::from_segments(raw.segments).map_err(serde::de::Error::custom)
    }
}

/// Regulator envelope `min(P·t, σ + ρ·t)`.
///
/// With an unbounded peak only the `(σ, ρ)` segment remains; with `P = ρ`
/// the peak segment dominates everywhere and `σ` is never expressed.
pub fn leaky_bucket_envelope(
    peak_rate: PeakRate,
    burst: f64,
    sustained_rate: f64,
) -> Result<PiecewiseEnvelope, EnvelopeError> {
    validate_bucket(peak_rate, burst, sustained_rate)?;
    let mut segments = vec![Segment::new(burst, sustained_rate)];
    if let PeakRate::Finite(p) = peak_rate {
        segments.push(Segment::new(0.0, p));
    }
    PiecewiseEnvelope::from_segments(segments)
}

/// Checked evaluation for any envelope.
pub fn eval_envelope<E: ArrivalEnvelope + ?Sized>(env: &E, t: f64) -> Result<f64, EnvelopeError> {
    check_time(t)?;
    Ok(env.value_at(t))
}

/// Pointwise sum of concave envelopes, re-canonicalized.
pub fn sum_envelopes(envs: &[PiecewiseEnvelope]) -> Result<PiecewiseEnvelope, EnvelopeError> {
    if envs.is_empty() {
        return Err(EnvelopeError::Empty);
    }
    // Fixed summation order keeps the result independent of argument order.
    let mut envs: Vec<&PiecewiseEnvelope> = envs.iter().collect();
    envs.sort_by_key(|e| segment_key(e));
    let member_bps: Vec<Vec<f64>> = envs.iter().map(|e| e.breakpoints()).collect();
    let mut starts: Vec<f64> = member_bps.iter().flatten().copied().collect();
    starts.push(0.0);
    starts.sort_by(f64::total_cmp);
    starts.dedup();

    // On each interval between consecutive breakpoints the sum is affine.
    let pieces = starts
        .iter()
        .map(|&s| {
            envs.iter()
                .zip(&member_bps)
                .map(|(env, bps)| env.active_segment(bps, s))
                .fold(Segment::new(0.0, 0.0), |acc, seg| {
                    Segment::new(acc.offset + seg.offset, acc.rate + seg.rate)
                })
        })
        .collect();
    PiecewiseEnvelope::from_segments(pieces)
}

fn segment_key(env: &PiecewiseEnvelope) -> Vec<(u64, u64)> {
    env.segments
        .iter()
        .map(|s| (s.offset.to_bits(), s.rate.to_bits()))
        .collect()
}

/// Hoeffding effective envelope of independent regulated flows.
#[derive(Debug, Clone, PartialEq)]
pub struct StatEnvelope {
    deterministic: PiecewiseEnvelope,
    /// Distinct member envelopes with their multiplicity.
    members: Vec<(PiecewiseEnvelope, u32)>,
    mean_rate_sum: f64,
    epsilon: f64,
    scale: f64,
}

impl StatEnvelope {
    pub fn deterministic_part(&self) -> &PiecewiseEnvelope {
        &self.deterministic
    }

    pub fn mean_rate_sum(&self) -> f64 {
        self.mean_rate_sum
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn member_count(&self) -> usize {
        self.members.iter().map(|(_, n)| *n as usize).sum()
    }

    /// `Σ A*_i(t)²`.
    pub fn sum_of_squares(&self, t: f64) -> f64 {
        self.members
            .iter()
            .map(|(env, n)| {
                let a = env.value_at(t);
                f64::from(*n) * a * a
            })
            .sum()
    }

    /// The unclamped Hoeffding term `Σρ_i·t + sqrt(ln(1/ε)/2 · ΣA*_i(t)²)`.
    pub fn hoeffding_at(&self, t: f64) -> f64 {
        self.mean_rate_sum * t + (self.scale * self.sum_of_squares(t)).sqrt()
    }

    pub fn eval(&self, t: f64) -> Result<f64, EnvelopeError> {
        eval_envelope(self, t)
    }
}

impl ArrivalEnvelope for StatEnvelope {
    fn value_at(&self, t: f64) -> f64 {
        self.deterministic.value_at(t).min(self.hoeffding_at(t))
    }

    fn long_run_rate(&self) -> f64 {
        self.mean_rate_sum
    }

    fn kinks(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self.deterministic.breakpoints();
        for (env, _) in &self.members {
            k.extend(env.breakpoints());
        }
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }
}

pub(crate) fn check_probability(name: &'static str, p: f64) -> Result<(), EnvelopeError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(name, p, "must lie in (0, 1)"));
    }
    Ok(())
}

/// Effective envelope of the flow set at violation probability `epsilon`.
pub fn effective_envelope(specs: &[FlowSpec], epsilon: f64) -> Result<StatEnvelope, EnvelopeError> {
    if specs.is_empty() {
        return Err(EnvelopeError::Empty);
    }
    check_probability("epsilon", epsilon)?;
    effective_envelope_of(specs.iter(), epsilon)
}

pub(crate) fn effective_envelope_of<'a>(
    specs: impl Iterator<Item = &'a FlowSpec>,
    epsilon: f64,
) -> Result<StatEnvelope, EnvelopeError> {
    // Group by bucket parameters so homogeneous populations evaluate in O(1).
    let mut groups: BTreeMap<(u64, u64, u64), (PiecewiseEnvelope, u32)> = BTreeMap::new();
    let mut mean_rate_sum = 0.0;
    for spec in specs {
        spec.validate()?;
        mean_rate_sum += spec.sustained_rate;
        let key = (
            spec.peak_rate.as_f64().to_bits(),
            spec.burst.to_bits(),
            spec.sustained_rate.to_bits(),
        );
        groups
            .entry(key)
            .and_modify(|(_, n)| *n += 1)
            .or_insert_with(|| (spec.envelope(), 1));
    }
    if groups.is_empty() {
        return Err(EnvelopeError::Empty);
    }
    let members: Vec<(PiecewiseEnvelope, u32)> = groups.into_values().collect();
    let deterministic = sum_grouped(&members)?;
    Ok(StatEnvelope {
        deterministic,
        members,
        mean_rate_sum,
        epsilon,
        scale: (1.0 / epsilon).ln() / 2.0,
    })
}

pub(crate) fn sum_grouped(members: &[(PiecewiseEnvelope, u32)]) -> Result<PiecewiseEnvelope, EnvelopeError> {
    let scaled: Vec<PiecewiseEnvelope> = members
        .iter()
        .map(|(env, n)| {
            let k = f64::from(*n);
            PiecewiseEnvelope::from_segments(
                env.segments()
                    .iter()
                    .map(|s| Segment::new(s.offset * k, s.rate * k))
                    .collect(),
            )
        })
        .collect::<Result<_, _>>()?;
    sum_envelopes(&scaled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(peak: PeakRate, burst: f64, rate: f64) -> FlowSpec {
        FlowSpec::new("f", peak, rate, burst, 1e-6, 1.0).unwrap()
    }

    /// Independent evaluator: minimum over the raw regulator constraints.
    fn direct(peak: PeakRate, burst: f64, rate: f64, t: f64) -> f64 {
        let bucket = burst + rate * t;
        match peak {
            PeakRate::Finite(p) => bucket.min(p * t),
            PeakRate::Unbounded => bucket,
        }
    }

    #[test]
    fn leaky_bucket_two_segments_and_breakpoint() {
        let env = leaky_bucket_envelope(PeakRate::Finite(2e6), 1e5, 1e6).unwrap();
        assert_eq!(
            env.segments(),
            &[Segment::new(0.0, 2e6), Segment::new(1e5, 1e6)]
        );
        assert_eq!(env.breakpoints(), vec![0.1]);
        // Grid oracle: the two raw constraints swap order exactly once, at 0.1 s.
        let steps = 100_000;
        let mut last_peak_active = None;
        for i in 0..=steps {
            let t = 0.2 * i as f64 / steps as f64;
            if 2e6 * t < 1e5 + 1e6 * t {
                last_peak_active = Some(t);
            }
        }
        assert!((last_peak_active.unwrap() - 0.1).abs() <= 0.2 / steps as f64);
    }

    #[test]
    fn leaky_bucket_unbounded_peak_single_segment() {
        let env = leaky_bucket_envelope(PeakRate::Unbounded, 1e3, 1e4).unwrap();
        assert_eq!(env.segments(), &[Segment::new(1e3, 1e4)]);
        assert!(env.breakpoints().is_empty());
    }

    #[test]
    fn leaky_bucket_degenerate_peak_equals_rate() {
        let env = leaky_bucket_envelope(PeakRate::Finite(1e6), 5e4, 1e6).unwrap();
        assert_eq!(env.segments(), &[Segment::new(0.0, 1e6)]);
        for i in 0..100 {
            let t = i as f64 * 0.037;
            assert_eq!(env.value_at(t), 1e6 * t);
        }
    }

    #[test]
    fn leaky_bucket_rejects_bad_parameters() {
        assert!(leaky_bucket_envelope(PeakRate::Finite(1e6), 1.0, 0.0).is_err());
        assert!(leaky_bucket_envelope(PeakRate::Finite(1e6), -1.0, 1e5).is_err());
        assert!(leaky_bucket_envelope(PeakRate::Finite(1e4), 1.0, 1e5).is_err());
        assert!(leaky_bucket_envelope(PeakRate::Unbounded, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn eval_examples() {
        let env = leaky_bucket_envelope(PeakRate::Finite(2e6), 1e5, 1e6).unwrap();
        assert_eq!(env.eval(0.05).unwrap(), 1e5);
        assert_eq!(env.eval(0.0).unwrap(), 0.0);
        let single = leaky_bucket_envelope(PeakRate::Unbounded, 1e3, 1e4).unwrap();
        assert_eq!(single.eval(1.0).unwrap(), 1.1e4);
        assert_eq!(single.eval(0.0).unwrap(), single.min_offset());
        assert!(env.eval(-1e-9).is_err());
        assert!(env.eval(f64::NAN).is_err());
    }

    #[test]
    fn canonical_form_drops_dominated_segments() {
        let env = PiecewiseEnvelope::from_segments(vec![
            Segment::new(10.0, 1.0),
            Segment::new(0.0, 5.0),
            Segment::new(100.0, 2.0), // never minimal
            Segment::new(3.0, 5.0),   // same rate, larger offset
            Segment::new(20.0, 1.0),  // same rate, larger offset
        ])
        .unwrap();
        assert_eq!(env.segments(), &[Segment::new(0.0, 5.0), Segment::new(10.0, 1.0)]);
        // A segment touching the envelope at a single point is removed.
        let touching = PiecewiseEnvelope::from_segments(vec![
            Segment::new(0.0, 2.0),
            Segment::new(1.0, 1.0),
            Segment::new(0.5, 1.5),
        ])
        .unwrap();
        assert_eq!(touching.segments(), &[Segment::new(0.0, 2.0), Segment::new(1.0, 1.0)]);
        assert!(PiecewiseEnvelope::from_segments(vec![]).is_err());
        assert!(PiecewiseEnvelope::from_segments(vec![Segment::new(-1.0, 1.0)]).is_err());
    }

    #[test]
    fn sum_examples() {
        let a = leaky_bucket_envelope(PeakRate::Unbounded, 1e3, 1e4).unwrap();
        let two = sum_envelopes(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(two.segments(), &[Segment::new(2e3, 2e4)]);

        let b = leaky_bucket_envelope(PeakRate::Finite(2e6), 1e5, 1e6).unwrap();
        let s = sum_envelopes(&[b.clone(), a.clone()]).unwrap();
        assert_eq!(s.value_at(0.05), 1.015e5);
        // Grid oracle: the canonical sum matches member-wise addition.
        for i in 0..=10_000 {
            let t = i as f64 * 1e-4;
            let want = b.value_at(t) + a.value_at(t);
            assert!((s.value_at(t) - want).abs() <= 1e-9 * want.max(1.0));
        }
        assert_eq!(sum_envelopes(std::slice::from_ref(&b)).unwrap(), b);
        assert_eq!(sum_envelopes(&[]), Err(EnvelopeError::Empty));
    }

    #[test]
    fn effective_envelope_multiplexing_gain() {
        let specs: Vec<FlowSpec> = (0..100)
            .map(|i| {
                FlowSpec::new(format!("f{i}"), PeakRate::Unbounded, 1e4, 1e3, 1e-6, 1.0).unwrap()
            })
            .collect();
        let g = effective_envelope(&specs, 1e-6).unwrap();
        // Hand value: sqrt(0.5 · ln(1e6) · 100 · (1e3)²).
        let hand = (0.5 * (1e6f64).ln() * 100.0 * 1e6).sqrt();
        assert!((hand - 26283.0).abs() < 1.0, "hand value {hand}");
        assert!((g.value_at(0.0) - hand).abs() <= 1e-9 * hand);
        assert_eq!(g.deterministic_part().value_at(0.0), 1e5);
        assert_eq!(g.member_count(), 100);
        assert_eq!(g.mean_rate_sum(), 1e6);
    }

    #[test]
    fn effective_envelope_single_flow_clamps() {
        let s = spec(PeakRate::Finite(2e6), 1e5, 1e6);
        let g = effective_envelope(std::slice::from_ref(&s), 1e-3).unwrap();
        let a = s.envelope();
        for i in 0..1000 {
            let t = i as f64 * 1e-3;
            assert_eq!(g.value_at(t), a.value_at(t));
        }
    }

    #[test]
    fn effective_envelope_epsilon_near_one_tends_to_mean() {
        let specs: Vec<FlowSpec> = (0..10)
            .map(|i| FlowSpec::new(format!("f{i}"), PeakRate::Unbounded, 1e4, 1e3, 0.5, 1.0).unwrap())
            .collect();
        let g = effective_envelope(&specs, 0.99).unwrap();
        let t = 1.0;
        let mean = 1e5 * t;
        let slack = g.value_at(t) - mean;
        assert!(slack > 0.0);
        assert!(slack < 0.25 * (g.deterministic_part().value_at(t) - mean));
        let tighter = effective_envelope(&specs, 0.999999).unwrap();
        assert!(tighter.value_at(t) - mean < slack);
    }

    #[test]
    fn effective_envelope_rejects_bad_epsilon() {
        let s = spec(PeakRate::Unbounded, 1.0, 1.0);
        assert!(effective_envelope(std::slice::from_ref(&s), 0.0).is_err());
        assert!(effective_envelope(std::slice::from_ref(&s), 1.0).is_err());
        assert!(effective_envelope(&[], 0.5).is_err());
    }

    #[test]
    fn peak_rate_serde_uses_null_for_unbounded() {
        let s = spec(PeakRate::Unbounded, 1.0, 2.0);
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"peak_rate\":null"), "{json}");
        let back: FlowSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn bucket() -> impl Strategy<Value = (PeakRate, f64, f64)> {
            (1e2f64..1e6, 0.0f64..1e5, prop::option::of(1.0f64..50.0)).prop_map(|(rho, sigma, k)| {
                let peak = match k {
                    Some(k) => PeakRate::Finite(rho * k),
                    None => PeakRate::Unbounded,
                };
                (peak, sigma, rho)
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn sum_matches_direct_evaluator(flows in prop::collection::vec(bucket(), 1..=5)) {
                let envs: Vec<_> = flows.iter()
                    .map(|&(p, s, r)| leaky_bucket_envelope(p, s, r).unwrap())
                    .collect();
                let sum = sum_envelopes(&envs).unwrap();
                let horizon = 2.0;
                for i in 0..10_000 {
                    let t = horizon * i as f64 / 10_000.0;
                    let want: f64 = flows.iter().map(|&(p, s, r)| direct(p, s, r, t)).sum();
                    let got = sum.value_at(t);
                    prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0),
                        "t={} got={} want={}", t, got, want);
                }
            }

            #[test]
            fn concave_and_nondecreasing(flows in prop::collection::vec(bucket(), 1..=5),
                                         t1 in 0.0f64..5.0, dt in 1e-6f64..5.0) {
                let envs: Vec<_> = flows.iter()
                    .map(|&(p, s, r)| leaky_bucket_envelope(p, s, r).unwrap())
                    .collect();
                let sum = sum_envelopes(&envs).unwrap();
                let t2 = t1 + dt;
                let (v1, v2) = (sum.value_at(t1), sum.value_at(t2));
                prop_assert!(v1 <= v2);
                let mid = sum.value_at(0.5 * (t1 + t2));
                prop_assert!(mid >= 0.5 * (v1 + v2) - 1e-9 * v2.max(1.0));
                let segs = sum.segments();
                for w in segs.windows(2) {
                    prop_assert!(w[0].rate > w[1].rate && w[0].offset < w[1].offset);
                }
            }

            #[test]
            fn sum_commutes_and_associates(flows in prop::collection::vec(bucket(), 3)) {
                let envs: Vec<_> = flows.iter()
                    .map(|&(p, s, r)| leaky_bucket_envelope(p, s, r).unwrap())
                    .collect();
                let abc = sum_envelopes(&envs).unwrap();
                let cba = sum_envelopes(&[envs[2].clone(), envs[1].clone(), envs[0].clone()]).unwrap();
                prop_assert_eq!(&abc, &cba);
                let ab = sum_envelopes(&envs[..2]).unwrap();
                let ab_c = sum_envelopes(&[ab, envs[2].clone()]).unwrap();
                for i in 0..200 {
                    let t = i as f64 * 0.01;
                    prop_assert!((ab_c.value_at(t) - abc.value_at(t)).abs() <= 1e-9 * abc.value_at(t).max(1.0));
                }
            }

            #[test]
            fn effective_envelope_is_clamped_and_scaled(
                (p, s, r) in bucket(), n in 1u32..60, eps in 1e-8f64..0.9, t in 0.0f64..10.0
            ) {
                let specs: Vec<FlowSpec> = (0..n)
                    .map(|i| FlowSpec::new(format!("f{i}"), p, r, s, 0.5, 1.0).unwrap())
                    .collect();
                let g = effective_envelope(&specs, eps).unwrap();
                let det = sum_envelopes(&specs.iter().map(|f| f.envelope()).collect::<Vec<_>>()).unwrap();
                let v = g.value_at(t);
                prop_assert!(v <= g.deterministic_part().value_at(t));
                prop_assert!(v <= det.value_at(t) * (1.0 + 1e-12));
                prop_assert!(v >= 0.0);
                let single = leaky_bucket_envelope(p, s, r).unwrap().value_at(t);
                prop_assert!(v <= f64::from(n) * single * (1.0 + 1e-12));
                prop_assert!(v >= f64::from(n) * r * t * (1.0 - 1e-12));
            }
        }
    }
}
