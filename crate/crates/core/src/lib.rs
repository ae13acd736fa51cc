//! Keystroke timing obfuscation and its evaluation.
//!
//! The crate has two halves. The first obfuscates: keystroke event streams
//! are pushed through one of two order-preserving timing mixes
//! ([`mixes::delay_mix`], [`mixes::interval_mix`]) that randomize when each
//! event becomes visible without touching its content. The second measures
//! what that buys: identification and soft-trait attacks with an in-crate
//! random forest ([`classify`]), interval predictability ([`classify::predict_intervals`]),
//! mutual information and anonymity entropy ([`metrics`]), and the mean lag
//! paid for the obfuscation. Synthetic cohorts ([`synth`]) make the whole
//! pipeline runnable at desk scale with a single seed.

pub mod classify;
pub mod events;
pub mod features;
pub mod metrics;
pub mod mixes;
pub mod seeding;
pub mod synth;

pub use classify::{
    identity_cv, predict_intervals, soft_trait_cv, train_forest, ClassifyError, Forest,
    ForestParams, ReportRow, TraitKind,
};
pub use events::{
    pair_keystrokes, parse_labels, parse_log, write_labels, write_log, EventError, KeyEvent,
    Keystroke, Labels, Session,
};
pub use features::{extract_features, FeatureError, FeatureSpec, FeatureVector};
pub use metrics::{
    anonymity_rate_bits, mean_lag, mutual_information_bits, smape, MetricError,
};
pub use mixes::{
    apply_mix, delay_mix, interval_mix, mix_session, mix_sessions, DelayMixParams,
    IntervalMixParams, MixError, MixSpec, MixedSession, Noise, ScriptedNoise, UniformNoise,
};
pub use synth::{
    generate_cohort, generate_poisson_stream, CharsPerSession, CohortSpec, SynthError,
};
