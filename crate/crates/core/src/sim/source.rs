//! Packet emission schedules. Times are relative to the source's start and
//! non-decreasing; a packet is counted as emitted once its last bit is out.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::envelope::{FlowSpec, PeakRate};
use crate::scenario::Traffic;

/// Independent generator for the component named `label`.
pub fn stream_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(label.as_bytes()));
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

pub trait PacketSource {
    /// Next emission time, or `None` once nothing is left at or before `limit`.
    fn next_time(&mut self, limit: f64) -> Option<f64>;
}

/// Envelope-extremal source: packet `k` leaves as soon as `(k+1)·L` bits
/// fit under `min(P·t, σ + ρ·t)`.
#[derive(Debug, Clone)]
pub struct GreedySource {
    peak: PeakRate,
    burst: f64,
    rate: f64,
    size: f64,
    emitted: u64,
}

impl GreedySource {
    pub fn new(flow: &FlowSpec, packet_size: f64) -> Self {
        GreedySource {
            peak: flow.peak_rate,
            burst: flow.burst,
            rate: flow.sustained_rate,
            size: packet_size,
            emitted: 0,
        }
    }
}

impl PacketSource for GreedySource {
    fn next_time(&mut self, limit: f64) -> Option<f64> {
        let bits = (self.emitted + 1) as f64 * self.size;
        let bucket = ((bits - self.burst) / self.rate).max(0.0);
        let t = match self.peak {
            PeakRate::Finite(p) => bucket.max(bits / p),
            PeakRate::Unbounded => bucket,
        };
        if t > limit {
            return None;
        }
        self.emitted += 1;
        Some(t)
    }
}

/// Exponential on/off source sending at peak rate while on, shaped by a
/// `(σ, ρ)` token bucket that starts full and by peak-rate spacing.
#[derive(Debug, Clone)]
pub struct OnOffSource {
    rng: ChaCha8Rng,
    on: Option<Exp<f64>>,
    off: Option<Exp<f64>>,
    peak: f64,
    burst: f64,
    rate: f64,
    size: f64,
    // Raw generator: the current on period and the on-time accumulated
    // before it, so partial packets carry over between periods.
    on_start: f64,
    on_end: f64,
    credit_at_start: f64,
    next_credit: f64,
    // Shaper.
    tokens: f64,
    token_time: f64,
    last_out: f64,
    started: bool,
}

impl OnOffSource {
    pub fn new(flow: &FlowSpec, packet_size: f64, on_mean: f64, off_mean: f64, rng: ChaCha8Rng) -> Self {
        let exp = |mean: f64| (mean > 0.0).then(|| Exp::new(1.0 / mean).expect("positive rate"));
        OnOffSource {
            rng,
            on: exp(on_mean),
            off: exp(off_mean),
            peak: flow.peak_rate.finite().expect("on/off sources need a finite peak rate"),
            burst: flow.burst,
            rate: flow.sustained_rate,
            size: packet_size,
            on_start: 0.0,
            on_end: 0.0,
            credit_at_start: 0.0,
            next_credit: packet_size / flow.peak_rate.finite().unwrap_or(f64::INFINITY),
            tokens: flow.burst,
            token_time: 0.0,
            last_out: 0.0,
            started: false,
        }
    }

    fn sample(&mut self, on: bool) -> f64 {
        let dist = if on { self.on } else { self.off };
        dist.map_or(0.0, |d| d.sample(&mut self.rng))
    }

    fn next_raw(&mut self, limit: f64) -> Option<f64> {
        self.on?;
        if !self.started {
            self.started = true;
            self.on_start = self.sample(false);
            self.on_end = self.on_start + self.sample(true);
        }
        loop {
            if self.on_start > limit {
                return None;
            }
            let t = self.on_start + (self.next_credit - self.credit_at_start);
            if t <= self.on_end {
                self.next_credit += self.size / self.peak;
                return Some(t);
            }
            self.credit_at_start += self.on_end - self.on_start;
            self.on_start = self.on_end + self.sample(false);
            self.on_end = self.on_start + self.sample(true);
        }
    }
}

impl PacketSource for OnOffSource {
    fn next_time(&mut self, limit: f64) -> Option<f64> {
        let raw = self.next_raw(limit)?;
        let mut t = raw.max(self.last_out + self.size / self.peak);
        let mut tokens = (self.tokens + self.rate * (t - self.token_time)).min(self.burst);
        if tokens < self.size {
            t += (self.size - tokens) / self.rate;
            tokens = self.size;
        }
        if t > limit {
            return None;
        }
        self.tokens = tokens - self.size;
        self.token_time = t;
        self.last_out = t;
        Some(t)
    }
}

#[derive(Debug, Clone)]
pub struct NoTraffic;

impl PacketSource for NoTraffic {
    fn next_time(&mut self, _limit: f64) -> Option<f64> {
        None
    }
}

pub fn make_source(flow: &FlowSpec, traffic: Traffic, packet_size: f64, seed: u64) -> Box<dyn PacketSource> {
    match traffic {
        Traffic::Greedy => Box::new(GreedySource::new(flow, packet_size)),
        Traffic::OnOff { on_mean, off_mean } => {
            let rng = stream_rng(seed, &format!("source:{}", flow.flow_id));
            Box::new(OnOffSource::new(flow, packet_size, on_mean, off_mean, rng))
        }
        Traffic::None => Box::new(NoTraffic),
    }
}

/// First `n` emission times of the greedy source (fewer if it is exhausted).
pub fn greedy_schedule(flow: &FlowSpec, packet_size: f64, n: usize) -> Vec<f64> {
    let mut src = GreedySource::new(flow, packet_size);
    std::iter::from_fn(|| src.next_time(f64::INFINITY)).take(n).collect()
}

/// First `n` emission times of an on/off source seeded with `seed`.
pub fn onoff_schedule(flow: &FlowSpec, packet_size: f64, on_mean: f64, off_mean: f64, seed: u64, n: usize) -> Vec<f64> {
    let mut src = OnOffSource::new(flow, packet_size, on_mean, off_mean, stream_rng(seed, flow.flow_id.as_str()));
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        match src.next_time(f64::MAX) {
            Some(t) => out.push(t),
            None => break,
        }
    }
    out
}

/// Largest `emitted(t) − A*(t)` over the emission instants, where
/// `emitted(t)` counts whole packets out by `t`. Non-positive iff the
/// schedule conforms at every instant (the count only jumps at emissions).
pub fn conformance_excess(flow: &FlowSpec, packet_size: f64, times: &[f64]) -> f64 {
    let env = flow.envelope();
    let mut worst = f64::NEG_INFINITY;
    let mut i = 0;
    while i < times.len() {
        let t = times[i];
        while i + 1 < times.len() && times[i + 1] == t {
            i += 1;
        }
        let bits = (i + 1) as f64 * packet_size;
        let allowed = env.eval(t).expect("t ≥ 0");
        worst = worst.max(bits - allowed);
        i += 1;
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    const L: f64 = 12_000.0;

    fn flow(peak: PeakRate, sigma: f64, rho: f64) -> FlowSpec {
        FlowSpec::new("f", peak, rho, sigma, 0.01, 1.0).unwrap()
    }

    #[test]
    fn burst_then_sustained() {
        let f = flow(PeakRate::Unbounded, 3.0 * L, L);
        assert_eq!(greedy_schedule(&f, L, 6), vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_burst_is_periodic() {
        let f = flow(PeakRate::Unbounded, 0.0, 2.0 * L);
        assert_eq!(greedy_schedule(&f, L, 4), vec![0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn finite_peak_spaces_the_burst() {
        let f = flow(PeakRate::Finite(2e6), 1e5, 1e6);
        let s = greedy_schedule(&f, L, 20);
        assert_eq!(s[0], L / 2e6);
        assert!(s.windows(2).all(|w| w[1] - w[0] >= L / 2e6 - 1e-15));
        assert!(conformance_excess(&f, L, &s) <= 1e-6);
    }

    #[test]
    fn zero_on_mean_emits_nothing() {
        let f = flow(PeakRate::Finite(1e6), 1.2e5, 1e5);
        assert!(onoff_schedule(&f, L, 0.0, 1.0, 1, 10).is_empty());
    }

    #[test]
    fn onoff_mean_rate_matches_the_smaller_of_shaper_and_source() {
        // Unshaped mean 1e6·0.1/1.2 ≈ 8.33e4 < ρ.
        let f = flow(PeakRate::Finite(1e6), 1.2e5, 1e5);
        let n = 1_000_000;
        let s = onoff_schedule(&f, L, 0.1, 1.1, 7, n);
        let rate = n as f64 * L / s[n - 1];
        let expected = (1e6 * 0.1 / 1.2f64).min(1e5);
        assert!((rate / expected - 1.0).abs() < 0.05, "rate {rate} vs {expected}");

        // Unshaped mean 5e5 > ρ = 1e5: the shaper binds.
        let tight = flow(PeakRate::Finite(1e6), 1.2e5, 1e5);
        let s = onoff_schedule(&tight, L, 1.0, 1.0, 7, 100_000);
        let rate = s.len() as f64 * L / s[s.len() - 1];
        assert!((rate / 1e5 - 1.0).abs() < 0.05, "rate {rate}");
    }

    #[test]
    fn streams_are_independent_of_other_labels() {
        let mut a = stream_rng(5, "source:a");
        let mut a2 = stream_rng(5, "source:a");
        let mut b = stream_rng(5, "source:b");
        let x: u64 = a.random();
        assert_eq!(x, a2.random::<u64>());
        assert_ne!(x, b.random::<u64>());
    }

    proptest! {
        #[test]
        fn greedy_conforms(ratio in prop::option::of(1.0f64..20.0), sigma in 0.0f64..1e6, rho in 1e3f64..1e6) {
            let peak = ratio.map_or(PeakRate::Unbounded, |r| PeakRate::Finite(r * rho));
            let f = flow(peak, sigma, rho);
            let s = greedy_schedule(&f, L, 2_000);
            prop_assert!(conformance_excess(&f, L, &s) <= 1e-9 * (2_000.0 * L));
        }

        #[test]
        fn onoff_conforms(seed in any::<u64>(), on in 0.01f64..2.0, off in 0.0f64..2.0, rho in 1e4f64..1e6, extra in 0.0f64..1e6) {
            let f = flow(PeakRate::Finite(2e6), L + extra, rho);
            let s = onoff_schedule(&f, L, on, off, seed, 2_000);
            prop_assert!(s.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(conformance_excess(&f, L, &s) <= 1e-9 * (2_000.0 * L));
        }
    }
}
