//! Fixed-length timing features with a fallback hierarchy.
//!
//! Each session becomes a 16-dimensional vector: for each key group in
//! {all keys, space, frequent letters, other} (in that order), the mean and
//! population standard deviation of hold durations (DU) and of press-press
//! latencies (PP), laid out as `[du_mean, du_sd, pp_mean, pp_sd]` per group.
//!
//! Short samples rarely populate every group, so statistics for a group
//! with fewer than `min_observations` values fall back to the all-keys
//! group, and to unconditional all-keys statistics if even that group is
//! under-populated. Every feature carries a flag recording which level
//! supplied it.

use thiserror::Error;

use crate::events::{pair_keystrokes, press_press_latencies, Keystroke, Session};

/// Press-press latencies above this are treated as pauses and clipped.
pub const PP_CLIP_MS: f64 = 5000.0;

/// The ten most frequent letters of English text, grouped as one unit so
/// short samples still populate it.
pub const FREQUENT_LETTERS: [&str; 10] = ["e", "t", "a", "o", "i", "n", "s", "h", "r", "d"];

/// Key symbol of the space bar in the log format.
pub const SPACE_KEY: &str = "space";

/// Number of features per session: 4 groups x 2 channels x 2 statistics.
pub const FEATURE_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("need at least 2 keystrokes, session {user}/{session} has {got}")]
    TooFewKeystrokes {
        user: String,
        session: String,
        got: usize,
    },
    #[error("min_observations must be >= 1, got {got}")]
    BadSpec { got: usize },
}

/// Key groups, ordered as they appear in the feature vector. `AllKeys` is
/// the root of the fallback hierarchy; the remaining three partition the
/// key space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyGroup {
    AllKeys,
    Space,
    FrequentLetters,
    Other,
}

pub const KEY_GROUPS: [KeyGroup; 4] = [
    KeyGroup::AllKeys,
    KeyGroup::Space,
    KeyGroup::FrequentLetters,
    KeyGroup::Other,
];

impl KeyGroup {
    /// The leaf group owning a key symbol.
    pub fn leaf_of(key: &str) -> KeyGroup {
        if key == SPACE_KEY {
            KeyGroup::Space
        } else if FREQUENT_LETTERS
            .iter()
            .any(|l| key.eq_ignore_ascii_case(l))
        {
            KeyGroup::FrequentLetters
        } else {
            KeyGroup::Other
        }
    }
}

/// Which hierarchy level supplied a feature value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    /// The group's own observations met the floor.
    Own,
    /// Inherited from the all-keys group, which met the floor.
    Ancestor,
    /// Even all-keys was under the floor; its unconditional statistics
    /// were used as a last resort.
    Global,
}

/// Extraction parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSpec {
    /// Minimum observations a group needs before its own statistics are
    /// trusted.
    pub min_observations: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec { min_observations: 5 }
    }
}

/// A session's feature values with per-feature provenance flags.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub sources: Vec<FeatureSource>,
}

fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Extract the fixed-length feature vector of one session.
///
/// PP latencies are computed between consecutive keystrokes, clipped at
/// [`PP_CLIP_MS`], and credited to the *arriving* keystroke's group; DU
/// values are credited to their own key's group. Features depend only on
/// time differences, never on absolute timestamps.
pub fn extract_features(
    session: &Session,
    spec: &FeatureSpec,
) -> Result<FeatureVector, FeatureError> {
    if spec.min_observations < 1 {
        return Err(FeatureError::BadSpec {
            got: spec.min_observations,
        });
    }
    let keystrokes = pair_keystrokes(session).keystrokes;
    if keystrokes.len() < 2 {
        return Err(FeatureError::TooFewKeystrokes {
            user: session.user_id.clone(),
            session: session.session_id.clone(),
            got: keystrokes.len(),
        });
    }

    let pp_all: Vec<f64> = press_press_latencies(&keystrokes)
        .into_iter()
        .map(|pp| pp.min(PP_CLIP_MS))
        .collect();
    let du_all: Vec<f64> = keystrokes.iter().map(Keystroke::duration).collect();

    let group_values = |group: KeyGroup| -> (Vec<f64>, Vec<f64>) {
        if group == KeyGroup::AllKeys {
            return (du_all.clone(), pp_all.clone());
        }
        let du = keystrokes
            .iter()
            .filter(|k| KeyGroup::leaf_of(&k.key) == group)
            .map(Keystroke::duration)
            .collect();
        let pp = pp_all
            .iter()
            .zip(keystrokes.iter().skip(1))
            .filter(|(_, k)| KeyGroup::leaf_of(&k.key) == group)
            .map(|(&pp, _)| pp)
            .collect();
        (du, pp)
    };

    let m = spec.min_observations;
    let root_qualifies = |xs: &[f64]| xs.len() >= m;

    let mut values = Vec::with_capacity(FEATURE_LEN);
    let mut sources = Vec::with_capacity(FEATURE_LEN);
    for group in KEY_GROUPS {
        let (du, pp) = group_values(group);
        for (own, root) in [(&du, &du_all), (&pp, &pp_all)] {
            let (stats, source) = if own.len() >= m {
                (mean_and_sd(own), FeatureSource::Own)
            } else if group != KeyGroup::AllKeys && root_qualifies(root) {
                (mean_and_sd(root), FeatureSource::Ancestor)
            } else {
                (mean_and_sd(root), FeatureSource::Global)
            };
            values.push(stats.0);
            values.push(stats.1);
            sources.push(source);
            sources.push(source);
        }
    }
    debug_assert_eq!(values.len(), FEATURE_LEN);
    Ok(FeatureVector { values, sources })
}

/// Render feature rows as CSV: `session_id` then numbered columns.
pub fn features_to_csv(rows: &[(String, FeatureVector)]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["session_id".to_owned()];
    header.extend((0..FEATURE_LEN).map(|i| format!("f{i}")));
    writer.write_record(&header).expect("in-memory write");
    for (id, fv) in rows {
        let mut record = vec![id.clone()];
        record.extend(fv.values.iter().map(|v| format!("{v}")));
        writer.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf8")
}
