//! Attack battery: who typed a sample (identification), what they are like
//! (soft traits), and when the next event comes (interval prediction).

mod forest;
mod report;

pub use forest::{train_forest, Forest, ForestParams};
pub use report::ReportRow;

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::events::{
    durations, pair_keystrokes, press_press_latencies, AgeGroup, Gender, Handedness, Session,
};
use crate::features::{extract_features, FeatureError, FeatureSpec};
use crate::metrics::smape;
use crate::seeding::{derive_seed, hash_str};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("feature matrix has {rows} rows but {labels} labels")]
    ShapeMismatch { rows: usize, labels: usize },
    #[error("feature matrix rows have inconsistent lengths")]
    RaggedMatrix,
    #[error("non-finite feature value")]
    NonFiniteFeature,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("need at least 2 users, got {got}")]
    TooFewUsers { got: usize },
    #[error("user {user} has {got} session(s); cross-validation needs at least 2")]
    TooFewSessions { user: String, got: usize },
    #[error("user {user} is missing the {trait_name} label")]
    TraitMissing { user: String, trait_name: String },
    #[error("trait class {class} has {users} user(s); leave-one-user-out needs at least 2")]
    TraitClassTooSmall { class: String, users: usize },
    #[error("session {user}/{session} has {got} keystrokes; interval prediction needs at least 3")]
    TooShortSession {
        user: String,
        session: String,
        got: usize,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// A soft-biometric classification target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraitKind {
    Age,
    Gender,
    Handedness,
}

impl TraitKind {
    pub fn name(self) -> &'static str {
        match self {
            TraitKind::Age => "age_group",
            TraitKind::Gender => "gender",
            TraitKind::Handedness => "handedness",
        }
    }

    /// Class index of a session's label, if present.
    pub fn class_of(self, session: &Session) -> Option<usize> {
        match self {
            TraitKind::Age => session.labels.age_group.map(|v| match v {
                AgeGroup::Under30 => 0,
                AgeGroup::Over30 => 1,
            }),
            TraitKind::Gender => session.labels.gender.map(|v| match v {
                Gender::Male => 0,
                Gender::Female => 1,
            }),
            TraitKind::Handedness => session.labels.handedness.map(|v| match v {
                Handedness::Left => 0,
                Handedness::Right => 1,
            }),
        }
    }
}

/// Feature matrix plus per-session user ids, shared by both CV drivers.
struct Extracted {
    x: Vec<Vec<f64>>,
    users: Vec<String>,
}

fn extract_all(sessions: &[Session], spec: &FeatureSpec) -> Result<Extracted, ClassifyError> {
    let mut x = Vec::with_capacity(sessions.len());
    let mut users = Vec::with_capacity(sessions.len());
    for s in sessions {
        x.push(extract_features(s, spec)?.values);
        users.push(s.user_id.clone());
    }
    Ok(Extracted { x, users })
}

/// Session indices per user, in first-appearance order of the users.
fn sessions_by_user(users: &[String]) -> Vec<(String, Vec<usize>)> {
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, u) in users.iter().enumerate() {
        if !map.contains_key(u) {
            order.push(u.clone());
        }
        map.entry(u.clone()).or_default().push(i);
    }
    order
        .into_iter()
        .map(|u| {
            let idx = map.remove(&u).expect("grouped above");
            (u, idx)
        })
        .collect()
}

fn accuracy(forest: &Forest, x: &[Vec<f64>], y: &[usize], test: &[usize]) -> (usize, usize) {
    let correct = test
        .iter()
        .filter(|&&i| forest.predict(&x[i]) == y[i])
        .count();
    (correct, test.len())
}

/// Identification attack: stratified k-fold cross-validation over sessions,
/// with the user as the class.
///
/// Folds are built per user: each user's sessions are shuffled with a seed
/// derived from that user's id, then dealt round-robin, so every fold holds
/// a proportional share of every user. The fold count is 10, reduced to the
/// smallest per-user session count when users have fewer than 10 sessions.
/// Returns the mean of per-fold accuracies.
pub fn identity_cv(
    sessions: &[Session],
    spec: &FeatureSpec,
    params: &ForestParams,
) -> Result<f64, ClassifyError> {
    let data = extract_all(sessions, spec)?;
    let by_user = sessions_by_user(&data.users);
    if by_user.len() < 2 {
        return Err(ClassifyError::TooFewUsers {
            got: by_user.len(),
        });
    }
    for (user, idx) in &by_user {
        if idx.len() < 2 {
            return Err(ClassifyError::TooFewSessions {
                user: user.clone(),
                got: idx.len(),
            });
        }
    }
    let n_folds = by_user
        .iter()
        .map(|(_, idx)| idx.len())
        .min()
        .expect("nonempty")
        .min(10);

    // Class index = position of the user in first-appearance order.
    let class_of: BTreeMap<&str, usize> = by_user
        .iter()
        .enumerate()
        .map(|(c, (u, _))| (u.as_str(), c))
        .collect();
    let y: Vec<usize> = data.users.iter().map(|u| class_of[u.as_str()]).collect();

    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); n_folds];
    for (user, idx) in &by_user {
        let mut shuffled = idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            params.seed,
            hash_str(&format!("fold/{user}")),
        ));
        shuffled.shuffle(&mut rng);
        for (k, &i) in shuffled.iter().enumerate() {
            folds[k % n_folds].push(i);
        }
    }

    let mut fold_accuracies = Vec::with_capacity(n_folds);
    for (f, test) in folds.iter().enumerate() {
        let in_test = |i: &usize| test.contains(i);
        let train: Vec<usize> = (0..data.x.len()).filter(|i| !in_test(i)).collect();
        let x_train: Vec<Vec<f64>> = train.iter().map(|&i| data.x[i].clone()).collect();
        let y_train: Vec<usize> = train.iter().map(|&i| y[i]).collect();
        let fold_params = ForestParams {
            seed: derive_seed(params.seed, hash_str(&format!("fold-forest/{f}"))),
            ..*params
        };
        let forest = train_forest(&x_train, &y_train, &fold_params)?;
        let (correct, total) = accuracy(&forest, &data.x, &y, test);
        fold_accuracies.push(correct as f64 / total as f64);
    }
    Ok(fold_accuracies.iter().sum::<f64>() / n_folds as f64)
}

/// Soft-trait attack: leave-one-user-out cross-validation.
///
/// Each round holds out every session of one user and trains on the rest of
/// the population; class proportions in the training set are left as they
/// fall. Returns pooled accuracy over all held-out sessions. Errors if any
/// user lacks the trait or any trait class has fewer than 2 users.
pub fn soft_trait_cv(
    sessions: &[Session],
    trait_kind: TraitKind,
    spec: &FeatureSpec,
    params: &ForestParams,
) -> Result<f64, ClassifyError> {
    let data = extract_all(sessions, spec)?;
    let by_user = sessions_by_user(&data.users);
    if by_user.len() < 2 {
        return Err(ClassifyError::TooFewUsers {
            got: by_user.len(),
        });
    }

    let mut y = vec![0usize; sessions.len()];
    let mut users_per_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (user, idx) in &by_user {
        let class = trait_kind
            .class_of(&sessions[idx[0]])
            .ok_or_else(|| ClassifyError::TraitMissing {
                user: user.clone(),
                trait_name: trait_kind.name().into(),
            })?;
        users_per_class.entry(class).or_default().push(user);
        for &i in idx {
            y[i] = class;
        }
    }
    if users_per_class.len() < 2 {
        return Err(ClassifyError::SingleClass);
    }
    for (class, users) in &users_per_class {
        if users.len() < 2 {
            return Err(ClassifyError::TraitClassTooSmall {
                class: format!("{}={}", trait_kind.name(), class),
                users: users.len(),
            });
        }
    }

    let mut correct = 0usize;
    let mut total = 0usize;
    for (user, test) in &by_user {
        let in_test = |i: &usize| test.contains(i);
        let train: Vec<usize> = (0..data.x.len()).filter(|i| !in_test(i)).collect();
        let x_train: Vec<Vec<f64>> = train.iter().map(|&i| data.x[i].clone()).collect();
        let y_train: Vec<usize> = train.iter().map(|&i| y[i]).collect();
        let round_params = ForestParams {
            seed: derive_seed(params.seed, hash_str(&format!("louo/{user}"))),
            ..*params
        };
        let forest = train_forest(&x_train, &y_train, &round_params)?;
        let (c, t) = accuracy(&forest, &data.x, &y, test);
        correct += c;
        total += t;
    }
    Ok(correct as f64 / total as f64)
}

/// Interval prediction with a running mean: each PP and DU value from the
/// second onward is predicted as the mean of all earlier values. Returns
/// `(smape_pp, smape_du)`.
pub fn predict_intervals(session: &Session) -> Result<(f64, f64), ClassifyError> {
    let keystrokes = pair_keystrokes(session).keystrokes;
    if keystrokes.len() < 3 {
        return Err(ClassifyError::TooShortSession {
            user: session.user_id.clone(),
            session: session.session_id.clone(),
            got: keystrokes.len(),
        });
    }
    let pp = press_press_latencies(&keystrokes);
    let du = durations(&keystrokes);
    Ok((running_mean_smape(&pp), running_mean_smape(&du)))
}

fn running_mean_smape(xs: &[f64]) -> f64 {
    let mut predictions = Vec::with_capacity(xs.len() - 1);
    let mut sum = xs[0];
    for (n, &x) in xs.iter().enumerate().skip(1) {
        predictions.push(sum / n as f64);
        sum += x;
    }
    smape(&predictions, &xs[1..]).expect("aligned nonempty slices")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Action, KeyEvent, Labels};
    use crate::synth::{generate_cohort, CharsPerSession, CohortSpec};

    fn quick_params(seed: u64) -> ForestParams {
        ForestParams {
            n_trees: 60,
            ..ForestParams::new(seed)
        }
    }

    /// Constant-timing session for a hand-built user.
    fn timed_session(user: &str, sess: &str, pp: f64, du: f64, labels: Labels) -> Session {
        let mut events = Vec::new();
        for i in 0..12 {
            let t = i as f64 * pp;
            for (action, dt) in [(Action::Press, 0.0), (Action::Release, du)] {
                events.push(KeyEvent {
                    time_ms: t + dt,
                    action,
                    key: "e".into(),
                    user_id: user.into(),
                    session_id: sess.into(),
                });
            }
        }
        Session::new(user, sess, events, labels).unwrap()
    }

    #[test]
    fn separable_users_are_identified() {
        let spec = CohortSpec {
            dispersion: 1.0,
            ..CohortSpec::new(5, 10, CharsPerSession::Fixed(30))
        };
        let sessions = generate_cohort(&spec, 17).unwrap();
        let acc = identity_cv(&sessions, &FeatureSpec::default(), &quick_params(1)).unwrap();
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn identity_cv_requires_two_sessions_per_user() {
        let sessions = vec![
            timed_session("u1", "s1", 100.0, 50.0, Labels::default()),
            timed_session("u2", "s1", 200.0, 70.0, Labels::default()),
            timed_session("u2", "s2", 200.0, 70.0, Labels::default()),
        ];
        assert!(matches!(
            identity_cv(&sessions, &FeatureSpec::default(), &quick_params(1)),
            Err(ClassifyError::TooFewSessions { got: 1, .. })
        ));
    }

    #[test]
    fn identity_cv_is_deterministic() {
        let spec = CohortSpec {
            dispersion: 0.5,
            ..CohortSpec::new(4, 6, CharsPerSession::Fixed(15))
        };
        let sessions = generate_cohort(&spec, 23).unwrap();
        let a = identity_cv(&sessions, &FeatureSpec::default(), &quick_params(2)).unwrap();
        let b = identity_cv(&sessions, &FeatureSpec::default(), &quick_params(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn permuted_identity_scores_at_chance() {
        // Separable users, but each session's claimed identity is drawn by a
        // fixed permutation of the session list: accuracy falls to ~1/U.
        let spec = CohortSpec {
            dispersion: 1.0,
            ..CohortSpec::new(10, 30, CharsPerSession::Fixed(20))
        };
        let mut sessions = generate_cohort(&spec, 31).unwrap();
        let mut claimed: Vec<String> = sessions.iter().map(|s| s.user_id.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        claimed.shuffle(&mut rng);
        for (s, user) in sessions.iter_mut().zip(claimed) {
            // Session ids must stay unique per (user, session) pair.
            s.session_id = format!("{}-{}", s.user_id, s.session_id);
            s.user_id = user;
        }
        let acc = identity_cv(&sessions, &FeatureSpec::default(), &quick_params(3)).unwrap();
        assert!((acc - 0.1).abs() <= 0.05, "accuracy {acc}");
    }

    #[test]
    fn correlated_trait_is_recovered() {
        let mut sessions = Vec::new();
        for (i, pp) in [100.0, 110.0, 120.0, 300.0, 310.0, 320.0].into_iter().enumerate() {
            let labels = Labels {
                age_group: Some(if pp < 200.0 {
                    AgeGroup::Under30
                } else {
                    AgeGroup::Over30
                }),
                ..Labels::default()
            };
            for s in 0..3 {
                sessions.push(timed_session(
                    &format!("u{i}"),
                    &format!("s{s}"),
                    pp + s as f64,
                    50.0,
                    labels,
                ));
            }
        }
        let acc = soft_trait_cv(
            &sessions,
            TraitKind::Age,
            &FeatureSpec::default(),
            &quick_params(4),
        )
        .unwrap();
        assert!(acc >= 0.9, "accuracy {acc}");
    }

    #[test]
    fn trait_errors_are_reported() {
        let labeled = Labels {
            age_group: Some(AgeGroup::Under30),
            ..Labels::default()
        };
        let sessions = vec![
            timed_session("u1", "s1", 100.0, 50.0, labeled),
            timed_session("u2", "s1", 200.0, 60.0, Labels::default()),
        ];
        assert!(matches!(
            soft_trait_cv(
                &sessions,
                TraitKind::Age,
                &FeatureSpec::default(),
                &quick_params(5)
            ),
            Err(ClassifyError::TraitMissing { .. })
        ));

        let one_user = vec![timed_session("u1", "s1", 100.0, 50.0, labeled)];
        assert!(matches!(
            soft_trait_cv(
                &one_user,
                TraitKind::Age,
                &FeatureSpec::default(),
                &quick_params(5)
            ),
            Err(ClassifyError::TooFewUsers { got: 1 })
        ));

        // Two users share a class; the other class has a single user.
        let over = Labels {
            age_group: Some(AgeGroup::Over30),
            ..Labels::default()
        };
        let sessions = vec![
            timed_session("u1", "s1", 100.0, 50.0, labeled),
            timed_session("u2", "s1", 120.0, 50.0, labeled),
            timed_session("u3", "s1", 300.0, 70.0, over),
        ];
        assert!(matches!(
            soft_trait_cv(
                &sessions,
                TraitKind::Age,
                &FeatureSpec::default(),
                &quick_params(5)
            ),
            Err(ClassifyError::TraitClassTooSmall { users: 1, .. })
        ));
    }

    #[test]
    fn constant_intervals_predict_perfectly() {
        let session = timed_session("u1", "s1", 150.0, 90.0, Labels::default());
        let (pp, du) = predict_intervals(&session).unwrap();
        assert_eq!(pp, 0.0);
        assert_eq!(du, 0.0);
    }

    #[test]
    fn two_interval_example_matches_hand_computation() {
        // Presses at 0, 100, 300: PP = [100, 200]; one prediction of 100
        // against an actual 200 gives SMAPE 100/300.
        let mut events = Vec::new();
        for &t in &[0.0, 100.0, 300.0] {
            for (action, dt) in [(Action::Press, 0.0), (Action::Release, 40.0)] {
                events.push(KeyEvent {
                    time_ms: t + dt,
                    action,
                    key: "a".into(),
                    user_id: "u1".into(),
                    session_id: "s1".into(),
                });
            }
        }
        let session = Session::new("u1", "s1", events, Labels::default()).unwrap();
        let (pp, du) = predict_intervals(&session).unwrap();
        assert!((pp - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(du, 0.0);
    }

    #[test]
    fn prediction_is_translation_invariant() {
        use crate::events::{parse_log, write_log};
        let spec = CohortSpec::new(2, 1, CharsPerSession::Fixed(25));
        let sessions = generate_cohort(&spec, 41).unwrap();
        // Quantize to integer times so the shift is exactly representable.
        let session = &parse_log(&write_log(&sessions)).unwrap()[0];
        let mut shifted = session.clone();
        for ev in &mut shifted.events {
            ev.time_ms += 98_765.0;
        }
        assert_eq!(
            predict_intervals(session).unwrap(),
            predict_intervals(&shifted).unwrap()
        );
    }

    #[test]
    fn short_sessions_are_rejected() {
        let mut events = Vec::new();
        for &t in &[0.0, 100.0] {
            for (action, dt) in [(Action::Press, 0.0), (Action::Release, 40.0)] {
                events.push(KeyEvent {
                    time_ms: t + dt,
                    action,
                    key: "a".into(),
                    user_id: "u1".into(),
                    session_id: "s1".into(),
                });
            }
        }
        let session = Session::new("u1", "s1", events, Labels::default()).unwrap();
        assert!(matches!(
            predict_intervals(&session),
            Err(ClassifyError::TooShortSession { got: 2, .. })
        ));
    }
}
