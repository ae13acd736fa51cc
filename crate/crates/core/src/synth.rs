//! Seeded synthetic keystroke cohorts, for desk-scale experiments without
//! third-party datasets.
//!
//! Users are modeled with lognormal press-press and duration distributions.
//! A dispersion knob scales how far individual users stray from the
//! population medians: at zero every user shares one profile (the
//! indistinguishable-population limit), larger values separate users. A
//! Poisson mode generates memoryless streams for the rate-based anonymity
//! arguments.

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal, Normal};
use thiserror::Error;

use crate::events::{Action, AgeGroup, Gender, Handedness, KeyEvent, Labels, Session};
use crate::seeding::{derive_seed, hash_str};

/// Population median press-press latency. Plumbing constant; experiments
/// depend only on relative user separability, never on this exact value.
pub const POPULATION_PP_MEDIAN_MS: f64 = 200.0;
/// Population median hold duration. Plumbing constant, as above.
pub const POPULATION_DU_MEDIAN_MS: f64 = 90.0;

/// Within-user spread of log press-press latencies at dispersion zero.
/// Latencies vary a lot within a typist (digraphs, pauses), so per-session
/// latency means are coarse; holds are tight, so hold features carry the
/// fine-grained, obfuscation-sensitive part of the identity signal.
const BASE_PP_LOG_SD: f64 = 0.5;
/// Within-user spread of log durations at dispersion zero.
const BASE_DU_LOG_SD: f64 = 0.18;

/// Letters by English text frequency (percent), plus the space bar at the
/// end. Used to draw key symbols so group features stay realistic.
const KEY_WEIGHTS: [(&str, f64); 27] = [
    ("e", 12.70),
    ("t", 9.06),
    ("a", 8.17),
    ("o", 7.51),
    ("i", 6.97),
    ("n", 6.75),
    ("s", 6.33),
    ("h", 6.09),
    ("r", 5.99),
    ("d", 4.25),
    ("l", 4.03),
    ("c", 2.78),
    ("u", 2.76),
    ("m", 2.41),
    ("w", 2.36),
    ("f", 2.23),
    ("g", 2.02),
    ("y", 1.97),
    ("p", 1.93),
    ("b", 1.49),
    ("v", 0.98),
    ("k", 0.77),
    ("j", 0.15),
    ("x", 0.15),
    ("q", 0.10),
    ("z", 0.07),
    // Scaled so spaces make up ~17% of keys overall.
    ("space", 20.6),
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("need at least 2 users, got {got}")]
    TooFewUsers { got: usize },
    #[error("need at least 1 session per user, got {got}")]
    NoSessions { got: usize },
    #[error("sessions need at least 2 keystrokes, got {got}")]
    TooFewChars { got: usize },
    #[error("invalid parameter: {0}")]
    BadParam(String),
}

/// Session length model, in keystrokes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CharsPerSession {
    Fixed(usize),
    /// Normal(123, 38), truncated below at 20.
    Normal,
}

/// Cohort shape and population parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortSpec {
    pub n_users: usize,
    pub sessions_per_user: usize,
    pub chars: CharsPerSession,
    /// User-level spread around the population medians; zero makes all
    /// users identical.
    pub dispersion: f64,
    pub pp_median_ms: f64,
    pub du_median_ms: f64,
}

impl CohortSpec {
    pub fn new(n_users: usize, sessions_per_user: usize, chars: CharsPerSession) -> Self {
        CohortSpec {
            n_users,
            sessions_per_user,
            chars,
            dispersion: STANDARD_DISPERSION,
            pp_median_ms: POPULATION_PP_MEDIAN_MS,
            du_median_ms: POPULATION_DU_MEDIAN_MS,
        }
    }

    /// The short-fixed-text cohort used throughout the evaluation suite:
    /// 10 users, 10 sessions each, 30 keystrokes per session.
    pub fn standard() -> Self {
        CohortSpec::new(10, 10, CharsPerSession::Fixed(30))
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.n_users < 2 {
            return Err(SynthError::TooFewUsers { got: self.n_users });
        }
        if self.sessions_per_user < 1 {
            return Err(SynthError::NoSessions {
                got: self.sessions_per_user,
            });
        }
        if let CharsPerSession::Fixed(k) = self.chars {
            if k < 2 {
                return Err(SynthError::TooFewChars { got: k });
            }
        }
        if !self.dispersion.is_finite() || self.dispersion < 0.0 {
            return Err(SynthError::BadParam(format!(
                "dispersion must be >= 0, got {}",
                self.dispersion
            )));
        }
        if !(self.pp_median_ms > 0.0) || !(self.du_median_ms > 0.0) {
            return Err(SynthError::BadParam(format!(
                "medians must be > 0, got pp={} du={}",
                self.pp_median_ms, self.du_median_ms
            )));
        }
        Ok(())
    }
}

/// Default user-level dispersion: separable but far from trivially so at
/// 30-keystroke samples, mirroring short-fixed-text difficulty.
pub const STANDARD_DISPERSION: f64 = 0.18;

/// One user's timing model and traits.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub user_id: String,
    pub pp_log_mean: f64,
    pub pp_log_sd: f64,
    pub du_log_mean: f64,
    pub du_log_sd: f64,
    pub labels: Labels,
}

/// Draw the per-user profiles for a cohort. Traits are assigned
/// deterministically by user index so every cohort has both age groups,
/// both genders, and (from 5 users up) both handedness classes.
pub fn user_profiles(spec: &CohortSpec, seed: u64) -> Result<Vec<UserProfile>, SynthError> {
    spec.validate()?;
    let mut profiles = Vec::with_capacity(spec.n_users);
    for i in 0..spec.n_users {
        let user_id = format!("u{i:02}");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            hash_str(&format!("profile/{user_id}")),
        ));
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let z: [f64; 4] = std::array::from_fn(|_| normal.sample(&mut rng));
        let d = spec.dispersion;
        profiles.push(UserProfile {
            user_id,
            // Identity lives mostly in hold durations: per-user latency
            // medians overlap heavily (latencies are content-driven), while
            // hold medians separate users at the tens-of-ms scale.
            pp_log_mean: spec.pp_median_ms.ln() + 0.4 * d * z[0],
            du_log_mean: spec.du_median_ms.ln() + d * z[1],
            pp_log_sd: BASE_PP_LOG_SD * (0.5 * d * z[2]).exp(),
            du_log_sd: BASE_DU_LOG_SD * (0.5 * d * z[3]).exp(),
            labels: Labels {
                age_group: Some(if i % 2 == 0 {
                    AgeGroup::Under30
                } else {
                    AgeGroup::Over30
                }),
                gender: Some(if (i / 2) % 2 == 0 {
                    Gender::Male
                } else {
                    Gender::Female
                }),
                handedness: Some(if i % 5 == 4 {
                    Handedness::Left
                } else {
                    Handedness::Right
                }),
            },
        });
    }
    Ok(profiles)
}

/// Generate a labeled cohort. Fully deterministic given the seed; per-user
/// and per-session streams are derived independently, so changing cohort
/// shape does not reshuffle unrelated sessions.
pub fn generate_cohort(spec: &CohortSpec, seed: u64) -> Result<Vec<Session>, SynthError> {
    let profiles = user_profiles(spec, seed)?;
    let keys = WeightedIndex::new(KEY_WEIGHTS.iter().map(|(_, w)| *w))
        .expect("static positive weights");
    let mut sessions = Vec::with_capacity(spec.n_users * spec.sessions_per_user);
    for profile in &profiles {
        for s in 0..spec.sessions_per_user {
            let session_id = format!("s{s:02}");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                hash_str(&format!("session/{}/{}", profile.user_id, session_id)),
            ));
            let n_chars = draw_chars(spec.chars, &mut rng);
            sessions.push(generate_session(
                profile,
                &session_id,
                n_chars,
                &keys,
                &mut rng,
            ));
        }
    }
    Ok(sessions)
}

fn draw_chars(chars: CharsPerSession, rng: &mut ChaCha8Rng) -> usize {
    match chars {
        CharsPerSession::Fixed(k) => k,
        CharsPerSession::Normal => {
            let normal = Normal::new(123.0f64, 38.0).expect("static params");
            loop {
                let v: f64 = normal.sample(rng);
                if v.round() >= 20.0 {
                    return v.round() as usize;
                }
            }
        }
    }
}

fn generate_session(
    profile: &UserProfile,
    session_id: &str,
    n_chars: usize,
    keys: &WeightedIndex<f64>,
    rng: &mut ChaCha8Rng,
) -> Session {
    let pp = LogNormal::new(profile.pp_log_mean, profile.pp_log_sd).expect("valid profile");
    let du = LogNormal::new(profile.du_log_mean, profile.du_log_sd).expect("valid profile");
    let mut events = Vec::with_capacity(2 * n_chars);
    let mut press_time = 0.0;
    for j in 0..n_chars {
        if j > 0 {
            press_time += pp.sample(rng);
        }
        let key = KEY_WEIGHTS[keys.sample(rng)].0;
        let release_time = press_time + du.sample(rng);
        for (action, t) in [(Action::Press, press_time), (Action::Release, release_time)] {
            events.push(KeyEvent {
                time_ms: t,
                action,
                key: key.into(),
                user_id: profile.user_id.clone(),
                session_id: session_id.into(),
            });
        }
    }
    Session::new(&profile.user_id, session_id, events, profile.labels)
        .expect("generated sessions satisfy the invariants")
}

/// Generate one memoryless event stream: `n_events` events whose
/// inter-event intervals are iid exponential with the given rate. Events
/// alternate press and release of a single key, so the stream is a valid
/// session while every gap keeps the Poisson distribution.
pub fn generate_poisson_stream(
    rate_per_ms: f64,
    n_events: usize,
    seed: u64,
) -> Result<Session, SynthError> {
    if !(rate_per_ms > 0.0) || !rate_per_ms.is_finite() {
        return Err(SynthError::BadParam(format!(
            "rate must be > 0, got {rate_per_ms}"
        )));
    }
    if n_events < 2 {
        return Err(SynthError::BadParam(format!(
            "need at least 2 events, got {n_events}"
        )));
    }
    let exp = Exp::new(rate_per_ms).expect("validated rate");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, hash_str("poisson")));
    let user_id = "poisson";
    let session_id = format!("seed{seed}");
    let mut events = Vec::with_capacity(n_events);
    let mut t = 0.0;
    for n in 0..n_events {
        if n > 0 {
            t += exp.sample(&mut rng);
        }
        events.push(KeyEvent {
            time_ms: t,
            action: if n % 2 == 0 {
                Action::Press
            } else {
                Action::Release
            },
            key: "a".into(),
            user_id: user_id.into(),
            session_id: session_id.clone(),
        });
    }
    Ok(Session::new(user_id, session_id, events, Labels::default())
        .expect("alternating stream satisfies the invariants"))
}
