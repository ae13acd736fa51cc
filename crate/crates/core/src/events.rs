//! Keystroke event data model and log ingestion.
//!
//! A log is a CSV stream of press/release events with millisecond
//! timestamps, grouped into per-user [`Session`]s. Times are integer
//! milliseconds on disk and real-valued in memory, so mixed streams keep
//! their sub-millisecond structure until they are written back out.

use std::collections::HashMap;

use thiserror::Error;

/// Column order of the event log format. Fixed; both reader and writer use it.
pub const LOG_HEADER: [&str; 5] = ["user", "session", "key", "action", "time_ms"];

/// Column order of the optional per-user label sidecar.
pub const LABELS_HEADER: [&str; 4] = ["user", "age_group", "gender", "handedness"];

#[derive(Debug, Error)]
pub enum EventError {
    #[error("line {line}: {msg}")]
    MalformedRow { line: u64, msg: String },
    #[error("line {line}: negative time {time_ms}")]
    NegativeTime { line: u64, time_ms: i64 },
    #[error("unmatched release of key {key:?} at {time_ms} ms (session {user}/{session})")]
    UnmatchedRelease {
        key: String,
        time_ms: f64,
        user: String,
        session: String,
    },
    #[error("expected header {expected:?}, got {got:?}")]
    BadHeader { expected: String, got: String },
    #[error("session {user}/{session} contains no complete keystroke")]
    NoKeystrokes { user: String, session: String },
    #[error("event at {time_ms} ms has negative timestamp (session {user}/{session})")]
    NegativeEventTime {
        time_ms: f64,
        user: String,
        session: String,
    },
}

/// Key press or key release.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Press,
    Release,
}

impl Action {
    fn code(self) -> &'static str {
        match self {
            Action::Press => "P",
            Action::Release => "R",
        }
    }
}

/// One key press or release.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyEvent {
    /// Event time in milliseconds. Integer-valued when read from a log.
    pub time_ms: f64,
    pub action: Action,
    /// Opaque key symbol, e.g. `"a"` or `"space"`.
    pub key: String,
    pub user_id: String,
    pub session_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgeGroup {
    Under30,
    Over30,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gender {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Handedness {
    Left,
    Right,
}

/// Optional soft-biometric labels for one user.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Labels {
    pub age_group: Option<AgeGroup>,
    pub gender: Option<Gender>,
    pub handedness: Option<Handedness>,
}

/// Ordered event sequence for one user sample; the unit of classification.
///
/// Invariants, enforced at construction:
/// - events sorted by time, ties keeping ingestion order;
/// - all times non-negative;
/// - every release matched by an earlier unreleased press of the same key;
/// - at least one complete keystroke.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub user_id: String,
    pub session_id: String,
    pub events: Vec<KeyEvent>,
    pub labels: Labels,
}

impl Session {
    /// Build a session from events in ingestion order. Sorts stably by time
    /// and validates the session invariants.
    pub fn new(
        user_id: impl Into<String>,
        session_id: impl Into<String>,
        mut events: Vec<KeyEvent>,
        labels: Labels,
    ) -> Result<Self, EventError> {
        let user_id = user_id.into();
        let session_id = session_id.into();
        events.sort_by(|a, b| a.time_ms.partial_cmp(&b.time_ms).expect("finite times"));
        let session = Session {
            user_id,
            session_id,
            events,
            labels,
        };
        session.validate()?;
        Ok(session)
    }

    fn validate(&self) -> Result<(), EventError> {
        let mut open: HashMap<&str, u32> = HashMap::new();
        let mut complete = 0usize;
        for ev in &self.events {
            if ev.time_ms < 0.0 || !ev.time_ms.is_finite() {
                return Err(EventError::NegativeEventTime {
                    time_ms: ev.time_ms,
                    user: self.user_id.clone(),
                    session: self.session_id.clone(),
                });
            }
            match ev.action {
                Action::Press => *open.entry(&ev.key).or_insert(0) += 1,
                Action::Release => {
                    let n = open.entry(&ev.key).or_insert(0);
                    if *n == 0 {
                        return Err(EventError::UnmatchedRelease {
                            key: ev.key.clone(),
                            time_ms: ev.time_ms,
                            user: self.user_id.clone(),
                            session: self.session_id.clone(),
                        });
                    }
                    *n -= 1;
                    complete += 1;
                }
            }
        }
        if complete == 0 {
            return Err(EventError::NoKeystrokes {
                user: self.user_id.clone(),
                session: self.session_id.clone(),
            });
        }
        Ok(())
    }

    /// Inter-event intervals tau_n = t_n - t_{n-1} for n >= 1. The interval
    /// before the first event is undefined and not represented.
    pub fn intervals(&self) -> Vec<f64> {
        self.events
            .windows(2)
            .map(|w| w[1].time_ms - w[0].time_ms)
            .collect()
    }
}

/// One matched press/release pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Keystroke {
    pub press_time: f64,
    pub release_time: f64,
    pub key: String,
}

impl Keystroke {
    /// Hold duration DU = release - press.
    pub fn duration(&self) -> f64 {
        self.release_time - self.press_time
    }
}

/// Result of [`pair_keystrokes`]: matched pairs plus a count of press events
/// that never saw a release (truncated samples).
#[derive(Debug, Clone, PartialEq)]
pub struct PairedKeystrokes {
    pub keystrokes: Vec<Keystroke>,
    pub dropped_presses: usize,
}

/// Match each press to the next release of the same key (per-key FIFO).
///
/// Output is ordered by press time; unmatched trailing presses are dropped
/// and counted rather than treated as errors, since sliced free-text samples
/// routinely truncate mid-hold.
pub fn pair_keystrokes(session: &Session) -> PairedKeystrokes {
    let mut pending: HashMap<&str, Vec<(usize, f64)>> = HashMap::new();
    let mut strokes: Vec<(usize, Keystroke)> = Vec::new();
    let mut press_seq = 0usize;
    for ev in &session.events {
        match ev.action {
            Action::Press => {
                pending
                    .entry(&ev.key)
                    .or_default()
                    .push((press_seq, ev.time_ms));
                press_seq += 1;
            }
            Action::Release => {
                // Session invariants guarantee a pending press exists.
                let queue = pending.get_mut(ev.key.as_str()).expect("validated session");
                let (seq, press_time) = queue.remove(0);
                strokes.push((
                    seq,
                    Keystroke {
                        press_time,
                        release_time: ev.time_ms,
                        key: ev.key.clone(),
                    },
                ));
            }
        }
    }
    let dropped = pending.values().map(Vec::len).sum();
    strokes.sort_by(|a, b| {
        a.1.press_time
            .partial_cmp(&b.1.press_time)
            .expect("finite times")
            .then(a.0.cmp(&b.0))
    });
    PairedKeystrokes {
        keystrokes: strokes.into_iter().map(|(_, k)| k).collect(),
        dropped_presses: dropped,
    }
}

/// Press-press latencies PP_n between consecutive keystrokes.
pub fn press_press_latencies(keystrokes: &[Keystroke]) -> Vec<f64> {
    keystrokes
        .windows(2)
        .map(|w| w[1].press_time - w[0].press_time)
        .collect()
}

/// Hold durations DU_n of each keystroke.
pub fn durations(keystrokes: &[Keystroke]) -> Vec<f64> {
    keystrokes.iter().map(Keystroke::duration).collect()
}

/// Parse an event log.
///
/// Expects the header `user,session,key,action,time_ms` with `action` in
/// `{P, R}` and `time_ms` a non-negative integer. Sessions are grouped by
/// `(user, session)` in order of first appearance; events within a session
/// are sorted by time with file order breaking ties.
pub fn parse_log(text: &str) -> Result<Vec<Session>, EventError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    check_header(&mut reader, &LOG_HEADER)?;

    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: HashMap<(String, String), Vec<KeyEvent>> = HashMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| EventError::MalformedRow {
            line: e.position().map_or(0, csv::Position::line),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, csv::Position::line);
        if record.len() != LOG_HEADER.len() {
            return Err(EventError::MalformedRow {
                line,
                msg: format!("expected {} fields, got {}", LOG_HEADER.len(), record.len()),
            });
        }
        let action = match &record[3] {
            "P" => Action::Press,
            "R" => Action::Release,
            other => {
                return Err(EventError::MalformedRow {
                    line,
                    msg: format!("action must be P or R, got {other:?}"),
                })
            }
        };
        let time_ms: i64 = record[4].parse().map_err(|_| EventError::MalformedRow {
            line,
            msg: format!("time_ms must be an integer, got {:?}", &record[4]),
        })?;
        if time_ms < 0 {
            return Err(EventError::NegativeTime { line, time_ms });
        }
        let key = (record[0].to_owned(), record[1].to_owned());
        let event = KeyEvent {
            time_ms: time_ms as f64,
            action,
            key: record[2].to_owned(),
            user_id: key.0.clone(),
            session_id: key.1.clone(),
        };
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(event);
    }

    order
        .into_iter()
        .map(|key| {
            let events = groups.remove(&key).expect("grouped above");
            Session::new(key.0, key.1, events, Labels::default())
        })
        .collect()
}

/// Parse the label sidecar `user,age_group,gender,handedness`.
/// Empty fields mean "unknown" and map to `None`.
pub fn parse_labels(text: &str) -> Result<HashMap<String, Labels>, EventError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    check_header(&mut reader, &LABELS_HEADER)?;

    let mut out = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| EventError::MalformedRow {
            line: e.position().map_or(0, csv::Position::line),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, csv::Position::line);
        if record.len() != LABELS_HEADER.len() {
            return Err(EventError::MalformedRow {
                line,
                msg: format!(
                    "expected {} fields, got {}",
                    LABELS_HEADER.len(),
                    record.len()
                ),
            });
        }
        let labels = Labels {
            age_group: parse_enum(&record[1], line, &[("under30", AgeGroup::Under30), ("over30", AgeGroup::Over30)])?,
            gender: parse_enum(&record[2], line, &[("male", Gender::Male), ("female", Gender::Female)])?,
            handedness: parse_enum(&record[3], line, &[("left", Handedness::Left), ("right", Handedness::Right)])?,
        };
        out.insert(record[0].to_owned(), labels);
    }
    Ok(out)
}

fn parse_enum<T: Copy>(
    field: &str,
    line: u64,
    variants: &[(&str, T)],
) -> Result<Option<T>, EventError> {
    if field.is_empty() {
        return Ok(None);
    }
    variants
        .iter()
        .find(|(name, _)| *name == field)
        .map(|(_, v)| Some(*v))
        .ok_or_else(|| EventError::MalformedRow {
            line,
            msg: format!(
                "unknown label {field:?}, expected one of {:?} or empty",
                variants.iter().map(|(n, _)| *n).collect::<Vec<_>>()
            ),
        })
}

/// Attach sidecar labels to sessions by user id. Users absent from the map
/// keep their current labels.
pub fn attach_labels(sessions: &mut [Session], labels: &HashMap<String, Labels>) {
    for session in sessions {
        if let Some(l) = labels.get(&session.user_id) {
            session.labels = *l;
        }
    }
}

/// Serialize sessions to log CSV. Times are rounded to whole milliseconds;
/// integer-valued sessions round-trip through [`parse_log`] bit-exactly.
pub fn write_log(sessions: &[Session]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(LOG_HEADER).expect("in-memory write");
    for session in sessions {
        for ev in &session.events {
            writer
                .write_record([
                    session.user_id.as_str(),
                    session.session_id.as_str(),
                    ev.key.as_str(),
                    ev.action.code(),
                    &format!("{}", ev.time_ms.round() as i64),
                ])
                .expect("in-memory write");
        }
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf8")
}

/// Serialize one sidecar row per user, in order of first appearance.
pub fn write_labels(sessions: &[Session]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(LABELS_HEADER).expect("in-memory write");
    let mut seen: Vec<&str> = Vec::new();
    for session in sessions {
        if seen.contains(&session.user_id.as_str()) {
            continue;
        }
        seen.push(&session.user_id);
        let l = session.labels;
        writer
            .write_record([
                session.user_id.as_str(),
                match l.age_group {
                    Some(AgeGroup::Under30) => "under30",
                    Some(AgeGroup::Over30) => "over30",
                    None => "",
                },
                match l.gender {
                    Some(Gender::Male) => "male",
                    Some(Gender::Female) => "female",
                    None => "",
                },
                match l.handedness {
                    Some(Handedness::Left) => "left",
                    Some(Handedness::Right) => "right",
                    None => "",
                },
            ])
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf8")
}

fn check_header<R: std::io::Read>(
    reader: &mut csv::Reader<R>,
    expected: &[&str],
) -> Result<(), EventError> {
    let got = reader.headers().map_err(|e| EventError::MalformedRow {
        line: 1,
        msg: e.to_string(),
    })?;
    if got.iter().collect::<Vec<_>>() != expected {
        return Err(EventError::BadHeader {
            expected: expected.join(","),
            got: got.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn press(t: f64, key: &str) -> KeyEvent {
        KeyEvent {
            time_ms: t,
            action: Action::Press,
            key: key.into(),
            user_id: "u1".into(),
            session_id: "s1".into(),
        }
    }

    fn release(t: f64, key: &str) -> KeyEvent {
        KeyEvent {
            time_ms: t,
            action: Action::Release,
            key: key.into(),
            user_id: "u1".into(),
            session_id: "s1".into(),
        }
    }

    #[test]
    fn parse_single_keystroke() {
        let text = "user,session,key,action,time_ms\nu1,s1,a,P,0\nu1,s1,a,R,90\n";
        let sessions = parse_log(text).unwrap();
        assert_eq!(sessions.len(), 1);
        let paired = pair_keystrokes(&sessions[0]);
        assert_eq!(paired.keystrokes.len(), 1);
        assert_eq!(paired.keystrokes[0].duration(), 90.0);
        assert_eq!(paired.dropped_presses, 0);
    }

    #[test]
    fn tie_preserves_file_order() {
        let text = "user,session,key,action,time_ms\n\
                    u1,s1,a,P,5\nu1,s1,b,P,5\nu1,s1,a,R,9\nu1,s1,b,R,9\n";
        let sessions = parse_log(text).unwrap();
        let keys: Vec<&str> = sessions[0]
            .events
            .iter()
            .map(|e| e.key.as_str())
            .collect();
        assert_eq!(keys, ["a", "b", "a", "b"]);
    }

    #[test]
    fn unmatched_release_is_an_error() {
        let text = "user,session,key,action,time_ms\nu1,s1,a,R,10\n";
        match parse_log(text) {
            Err(EventError::UnmatchedRelease { key, time_ms, .. }) => {
                assert_eq!(key, "a");
                assert_eq!(time_ms, 10.0);
            }
            other => panic!("expected unmatched release, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "user,session,key,action,time_ms\nu1,s1,a,P,0\nu1,s1,a,X,5\n";
        match parse_log(text) {
            Err(EventError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed row, got {other:?}"),
        }
    }

    #[test]
    fn negative_time_is_an_error() {
        let text = "user,session,key,action,time_ms\nu1,s1,a,P,-4\n";
        match parse_log(text) {
            Err(EventError::NegativeTime { time_ms, .. }) => assert_eq!(time_ms, -4),
            other => panic!("expected negative time, got {other:?}"),
        }
    }

    #[test]
    fn non_integer_time_is_malformed() {
        let text = "user,session,key,action,time_ms\nu1,s1,a,P,1.5\n";
        assert!(matches!(
            parse_log(text),
            Err(EventError::MalformedRow { .. })
        ));
    }

    #[test]
    fn pairing_press_times_give_pp_latencies() {
        // Press stream at t = [0,5,7,11,14]; intervals 5,2,4,3.
        let mut events = Vec::new();
        for (i, t) in [0.0, 5.0, 7.0, 11.0, 14.0].into_iter().enumerate() {
            let key = format!("k{i}");
            events.push(press(t, &key));
            events.push(release(t + 1.0, &key));
        }
        let session = Session::new("u1", "s1", events, Labels::default()).unwrap();
        let paired = pair_keystrokes(&session);
        let pp = press_press_latencies(&paired.keystrokes);
        assert_eq!(pp, vec![5.0, 2.0, 4.0, 3.0]);
    }

    #[test]
    fn single_keystroke_has_no_pp() {
        let session = Session::new(
            "u1",
            "s1",
            vec![press(0.0, "a"), release(50.0, "a")],
            Labels::default(),
        )
        .unwrap();
        let paired = pair_keystrokes(&session);
        assert!(press_press_latencies(&paired.keystrokes).is_empty());
    }

    #[test]
    fn interleaved_keys_pair_independently() {
        // aP(0) bP(3) aR(8) bR(9) -> (a: 0-8), (b: 3-9), PP = [3].
        let session = Session::new(
            "u1",
            "s1",
            vec![press(0.0, "a"), press(3.0, "b"), release(8.0, "a"), release(9.0, "b")],
            Labels::default(),
        )
        .unwrap();
        let paired = pair_keystrokes(&session);
        assert_eq!(paired.keystrokes.len(), 2);
        assert_eq!(paired.keystrokes[0].key, "a");
        assert_eq!(paired.keystrokes[0].duration(), 8.0);
        assert_eq!(paired.keystrokes[1].key, "b");
        assert_eq!(paired.keystrokes[1].duration(), 6.0);
        assert_eq!(press_press_latencies(&paired.keystrokes), vec![3.0]);
    }

    #[test]
    fn trailing_press_is_dropped_with_count() {
        let session = Session::new(
            "u1",
            "s1",
            vec![press(0.0, "a"), release(5.0, "a"), press(9.0, "b")],
            Labels::default(),
        )
        .unwrap();
        let paired = pair_keystrokes(&session);
        assert_eq!(paired.keystrokes.len(), 1);
        assert_eq!(paired.dropped_presses, 1);
    }

    #[test]
    fn same_key_overlap_pairs_fifo() {
        // Auto-repeat style: aP(0) aP(4) aR(10) aR(12).
        let session = Session::new(
            "u1",
            "s1",
            vec![press(0.0, "a"), press(4.0, "a"), release(10.0, "a"), release(12.0, "a")],
            Labels::default(),
        )
        .unwrap();
        let paired = pair_keystrokes(&session);
        assert_eq!(paired.keystrokes[0].duration(), 10.0);
        assert_eq!(paired.keystrokes[1].duration(), 8.0);
    }

    #[test]
    fn write_empty_is_header_only() {
        assert_eq!(write_log(&[]), "user,session,key,action,time_ms\n");
    }

    #[test]
    fn labels_round_trip() {
        let text = "user,age_group,gender,handedness\nu1,under30,female,right\nu2,,male,\n";
        let labels = parse_labels(text).unwrap();
        assert_eq!(labels["u1"].age_group, Some(AgeGroup::Under30));
        assert_eq!(labels["u1"].gender, Some(Gender::Female));
        assert_eq!(labels["u2"].age_group, None);
        assert_eq!(labels["u2"].gender, Some(Gender::Male));
        assert_eq!(labels["u2"].handedness, None);
    }

    #[test]
    fn unknown_label_token_is_an_error() {
        let text = "user,age_group,gender,handedness\nu1,teen,male,right\n";
        assert!(matches!(
            parse_labels(text),
            Err(EventError::MalformedRow { line: 2, .. })
        ));
    }

    /// Random valid session with integer times, for round-trip checks.
    fn random_session(rng: &mut ChaCha8Rng, user: &str, sess: &str) -> Session {
        let n_keys = rng.random_range(1..=12usize);
        let mut events = Vec::new();
        let mut t = 0i64;
        for i in 0..n_keys {
            let key = ["a", "e", "space", "q,z", "\"k\""][rng.random_range(0..5usize)];
            let _ = i;
            t += rng.random_range(0..=400i64);
            let du = rng.random_range(1..=250i64);
            events.push(KeyEvent {
                time_ms: t as f64,
                action: Action::Press,
                key: key.into(),
                user_id: user.into(),
                session_id: sess.into(),
            });
            events.push(KeyEvent {
                time_ms: (t + du) as f64,
                action: Action::Release,
                key: key.into(),
                user_id: user.into(),
                session_id: sess.into(),
            });
        }
        Session::new(user, sess, events, Labels::default()).unwrap()
    }

    #[test]
    fn round_trip_many_random_sessions() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut batch = Vec::new();
        for i in 0..10_000usize {
            batch.push(random_session(
                &mut rng,
                &format!("u{}", i % 89),
                &format!("s{i}"),
            ));
            if batch.len() == 50 {
                let parsed = parse_log(&write_log(&batch)).unwrap();
                assert_eq!(parsed, batch);
                batch.clear();
            }
        }
        if !batch.is_empty() {
            let parsed = parse_log(&write_log(&batch)).unwrap();
            assert_eq!(parsed, batch);
        }
    }

    #[test]
    fn write_then_parse_is_identity_on_table_trace() {
        let mut events = Vec::new();
        for (i, t) in [3.0, 11.0, 12.0, 16.0, 20.0].into_iter().enumerate() {
            let key = format!("k{i}");
            events.push(press(t, &key));
            events.push(release(t + 40.0, &key));
        }
        let session = Session::new("u1", "s1", events, Labels::default()).unwrap();
        let sessions = vec![session];
        assert_eq!(parse_log(&write_log(&sessions)).unwrap(), sessions);
    }
}
