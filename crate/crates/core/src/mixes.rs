//! Timing mixes: randomized per-event delays that obfuscate inter-event
//! intervals while preserving event order and content.
//!
//! Both strategies are order-preserving streaming state machines: events
//! enter in generation order and leave in the same order, each delayed by a
//! fresh random draw. The *delay mix* draws each event's delay uniformly
//! from a window whose lower edge is pushed up just enough to keep output
//! order consistent, and whose upper edge is a fixed cap. The *interval
//! mix* draws each output inter-event interval uniformly below an adaptive
//! cap that a feedback gain steers toward the input rate, releasing an
//! event no earlier than it was generated.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::events::Session;
use crate::seeding::{derive_seed, hash_str};

/// Default floor for the interval mix's adaptive cap, in milliseconds.
pub const DEFAULT_EPS_MS: f64 = 1.0;
/// Default initial value of the interval mix's adaptive cap, in milliseconds.
pub const DEFAULT_U_INIT_MS: f64 = 100.0;

#[derive(Debug, Error)]
pub enum MixError {
    #[error("invalid mix parameter: {0}")]
    BadParam(String),
    #[error("event {index}: time decreases ({prev} -> {next})")]
    UnsortedTimes { index: usize, prev: f64, next: f64 },
    #[error("event {index}: time is not finite")]
    NonFiniteTime { index: usize },
    #[error("event {index}: noise sample {value} outside [{lo}, {hi}]")]
    NoiseOutOfBounds {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
}

/// Source of uniform noise for the mixes.
///
/// `uniform(lo, hi)` must return a value in `[lo, hi]`; when `lo == hi` the
/// only valid sample is `lo`. The mix steps re-check every sample and reject
/// out-of-range values, so a misbehaving source fails loudly instead of
/// silently breaking the output invariants.
pub trait Noise {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64;
}

/// RNG-backed noise source; the production path. Identical seeds yield
/// identical draw sequences.
pub struct UniformNoise<R: Rng>(pub R);

impl UniformNoise<ChaCha8Rng> {
    pub fn seeded(seed: u64) -> Self {
        UniformNoise(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl<R: Rng> Noise for UniformNoise<R> {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            lo
        } else {
            self.0.random_range(lo..=hi)
        }
    }
}

/// Replays a fixed sample sequence; for tests and trace reproduction.
/// Panics when exhausted.
pub struct ScriptedNoise {
    values: VecDeque<f64>,
}

impl ScriptedNoise {
    pub fn new(values: impl IntoIterator<Item = f64>) -> Self {
        ScriptedNoise {
            values: values.into_iter().collect(),
        }
    }
}

impl Noise for ScriptedNoise {
    fn uniform(&mut self, _lo: f64, _hi: f64) -> f64 {
        self.values.pop_front().expect("scripted noise exhausted")
    }
}

/// Delay mix parameters: the fixed delay cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayMixParams {
    pub delta_ms: f64,
}

impl DelayMixParams {
    pub fn new(delta_ms: f64) -> Self {
        DelayMixParams { delta_ms }
    }

    fn validate(&self) -> Result<(), MixError> {
        if !self.delta_ms.is_finite() || self.delta_ms < 0.0 {
            return Err(MixError::BadParam(format!(
                "delta_ms must be >= 0, got {}",
                self.delta_ms
            )));
        }
        Ok(())
    }
}

/// Interval mix parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalMixParams {
    /// Feedback gain steering the cap toward the input rate. Zero freezes
    /// the cap at `u_init_ms`.
    pub b: f64,
    /// Floor for the adaptive cap, in milliseconds. Must be positive.
    pub eps_ms: f64,
    /// Initial cap, in milliseconds. Must be at least `eps_ms`.
    pub u_init_ms: f64,
}

impl IntervalMixParams {
    pub fn new(b: f64) -> Self {
        IntervalMixParams {
            b,
            eps_ms: DEFAULT_EPS_MS,
            u_init_ms: DEFAULT_U_INIT_MS,
        }
    }

    fn validate(&self) -> Result<(), MixError> {
        if !self.b.is_finite() || self.b < 0.0 {
            return Err(MixError::BadParam(format!("b must be >= 0, got {}", self.b)));
        }
        if !self.eps_ms.is_finite() || self.eps_ms <= 0.0 {
            return Err(MixError::BadParam(format!(
                "eps_ms must be > 0, got {}",
                self.eps_ms
            )));
        }
        if !self.u_init_ms.is_finite() || self.u_init_ms < self.eps_ms {
            return Err(MixError::BadParam(format!(
                "u_init_ms must be >= eps_ms ({}), got {}",
                self.eps_ms, self.u_init_ms
            )));
        }
        Ok(())
    }
}

/// One released event from a delay-mix step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayStep {
    pub arrival_time: f64,
    /// The delay drawn for this event; always in `[lower_bound, delta_ms]`.
    pub delay: f64,
    /// Smallest delay that keeps arrivals ordered, given the previous draw.
    pub lower_bound: f64,
}

/// Streaming state of the delay mix: the previous draw and generation time.
#[derive(Debug, Clone, Default)]
pub struct DelayMixState {
    prev_delay: f64,
    prev_gen_time: Option<f64>,
    count: usize,
}

impl DelayMixState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Delay one event: draw delta_n ~ U[l_n, delta_ms] with
    /// l_n = max(delta_{n-1} - tau_n, 0) and release at gen_time + delta_n.
    ///
    /// The first event's preceding interval is treated as infinite, so its
    /// window floor is zero. The floor never exceeds the cap (each draw is
    /// at most the cap, and the floor is at most the previous draw), so the
    /// window is never empty and arrivals are non-decreasing.
    pub fn step(
        &mut self,
        params: &DelayMixParams,
        gen_time: f64,
        noise: &mut dyn Noise,
    ) -> Result<DelayStep, MixError> {
        params.validate()?;
        let index = self.count;
        check_gen_time(gen_time, self.prev_gen_time, index)?;
        let lower_bound = match self.prev_gen_time {
            None => 0.0,
            Some(prev) => (self.prev_delay - (gen_time - prev)).max(0.0),
        };
        debug_assert!(lower_bound <= params.delta_ms);
        let delay = draw(noise, index, lower_bound, params.delta_ms)?;
        self.prev_delay = delay;
        self.prev_gen_time = Some(gen_time);
        self.count += 1;
        Ok(DelayStep {
            arrival_time: gen_time + delay,
            delay,
            lower_bound,
        })
    }
}

/// One released event from an interval-mix step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalStep {
    pub arrival_time: f64,
    /// Cap that bounded this event's interval draw.
    pub cap: f64,
}

/// Streaming state of the interval mix: the adaptive cap and the previous
/// arrival time.
#[derive(Debug, Clone)]
pub struct IntervalMixState {
    u: f64,
    prev_arrival: Option<f64>,
    count: usize,
    prev_gen_time: Option<f64>,
}

impl IntervalMixState {
    pub fn new(params: &IntervalMixParams) -> Self {
        IntervalMixState {
            u: params.u_init_ms,
            prev_arrival: None,
            count: 0,
            prev_gen_time: None,
        }
    }

    /// Release one event. The first event passes through untouched; each
    /// later event arrives a fresh interval tau_n ~ U[0, u_n] after the
    /// previous arrival, but never before its own generation time. The cap
    /// then adapts by `u += b * (gen_time - tentative)` and is floored at
    /// `eps_ms`: running ahead of the input shrinks it, lagging grows it,
    /// so the output rate tracks the input rate while each interval stays
    /// an independent uniform draw.
    pub fn step(
        &mut self,
        params: &IntervalMixParams,
        gen_time: f64,
        noise: &mut dyn Noise,
    ) -> Result<IntervalStep, MixError> {
        params.validate()?;
        let index = self.count;
        check_gen_time(gen_time, self.prev_gen_time, index)?;
        let cap = self.u;
        let arrival_time = match self.prev_arrival {
            None => gen_time,
            Some(prev) => {
                let tau = draw(noise, index, 0.0, cap)?;
                let tentative = prev + tau;
                self.u = (self.u + params.b * (gen_time - tentative)).max(params.eps_ms);
                tentative.max(gen_time)
            }
        };
        self.prev_arrival = Some(arrival_time);
        self.prev_gen_time = Some(gen_time);
        self.count += 1;
        Ok(IntervalStep { arrival_time, cap })
    }
}

/// A mix strategy with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixSpec {
    Delay(DelayMixParams),
    Interval(IntervalMixParams),
}

impl MixSpec {
    pub fn delay(delta_ms: f64) -> Self {
        MixSpec::Delay(DelayMixParams::new(delta_ms))
    }

    pub fn interval(b: f64) -> Self {
        MixSpec::Interval(IntervalMixParams::new(b))
    }
}

/// Delay-mix trace over a whole schedule: arrival times plus per-event
/// delays and window floors, kept for diagnostics and verification.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayMixTrace {
    pub times: Vec<f64>,
    pub delays: Vec<f64>,
    pub lower_bounds: Vec<f64>,
}

/// Interval-mix trace over a whole schedule: arrival times plus the cap in
/// effect at each event. The first event is released immediately; its entry
/// records the initial cap.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMixTrace {
    pub times: Vec<f64>,
    pub caps: Vec<f64>,
}

/// Run the delay mix over a sorted schedule of generation times.
pub fn delay_mix(
    times: &[f64],
    params: DelayMixParams,
    noise: &mut dyn Noise,
) -> Result<DelayMixTrace, MixError> {
    params.validate()?;
    let mut state = DelayMixState::new();
    let mut trace = DelayMixTrace {
        times: Vec::with_capacity(times.len()),
        delays: Vec::with_capacity(times.len()),
        lower_bounds: Vec::with_capacity(times.len()),
    };
    for &t in times {
        let step = state.step(&params, t, noise)?;
        trace.times.push(step.arrival_time);
        trace.delays.push(step.delay);
        trace.lower_bounds.push(step.lower_bound);
    }
    Ok(trace)
}

/// Run the interval mix over a sorted schedule of generation times.
pub fn interval_mix(
    times: &[f64],
    params: IntervalMixParams,
    noise: &mut dyn Noise,
) -> Result<IntervalMixTrace, MixError> {
    params.validate()?;
    let mut state = IntervalMixState::new(&params);
    let mut trace = IntervalMixTrace {
        times: Vec::with_capacity(times.len()),
        caps: Vec::with_capacity(times.len()),
    };
    for &t in times {
        let step = state.step(&params, t, noise)?;
        trace.times.push(step.arrival_time);
        trace.caps.push(step.cap);
    }
    Ok(trace)
}

/// A mixed session together with its per-event lags.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSession {
    pub session: Session,
    /// Lag of each event: arrival time minus generation time.
    pub lags: Vec<f64>,
}

/// Push every event of a session (presses and releases alike, in global
/// time order) through one shared mix state. Key symbols, actions, and
/// event count are unchanged; only times move.
pub fn apply_mix(
    session: &Session,
    spec: MixSpec,
    noise: &mut dyn Noise,
) -> Result<MixedSession, MixError> {
    let times: Vec<f64> = session.events.iter().map(|e| e.time_ms).collect();
    let mixed_times = match spec {
        MixSpec::Delay(params) => delay_mix(&times, params, noise)?.times,
        MixSpec::Interval(params) => interval_mix(&times, params, noise)?.times,
    };
    let lags = mixed_times
        .iter()
        .zip(&times)
        .map(|(m, o)| m - o)
        .collect();
    let mut session = session.clone();
    for (ev, &t) in session.events.iter_mut().zip(&mixed_times) {
        ev.time_ms = t;
    }
    Ok(MixedSession { session, lags })
}

/// Mix one session, deriving its noise stream from the master seed and the
/// session identity so each session gets an independent, reproducible
/// stream regardless of processing order.
pub fn mix_session(
    session: &Session,
    spec: MixSpec,
    master_seed: u64,
) -> Result<MixedSession, MixError> {
    let seed = derive_seed(
        derive_seed(master_seed, hash_str(&session.user_id)),
        hash_str(&session.session_id),
    );
    let mut noise = UniformNoise::seeded(seed);
    apply_mix(session, spec, &mut noise)
}

/// Mix a batch of sessions with per-session derived noise streams.
pub fn mix_sessions(
    sessions: &[Session],
    spec: MixSpec,
    master_seed: u64,
) -> Result<Vec<MixedSession>, MixError> {
    sessions
        .iter()
        .map(|s| mix_session(s, spec, master_seed))
        .collect()
}

fn check_gen_time(gen_time: f64, prev: Option<f64>, index: usize) -> Result<(), MixError> {
    if !gen_time.is_finite() {
        return Err(MixError::NonFiniteTime { index });
    }
    if let Some(prev) = prev {
        if gen_time < prev {
            return Err(MixError::UnsortedTimes {
                index,
                prev,
                next: gen_time,
            });
        }
    }
    Ok(())
}

fn draw(noise: &mut dyn Noise, index: usize, lo: f64, hi: f64) -> Result<f64, MixError> {
    let value = noise.uniform(lo, hi);
    if value < lo || value > hi {
        return Err(MixError::NoiseOutOfBounds {
            index,
            value,
            lo,
            hi,
        });
    }
    Ok(value)
}
