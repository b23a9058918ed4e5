//! Session data model: the activity-type taxonomy, events, sessions, and
//! weekly groupings shared by ingestion, the model, and scoring.
//!
//! Times are absolute epoch seconds (f64); durations are seconds. Sessions
//! travel between pipeline stages as JSONL, one session per line:
//!
//! ```text
//! {"user":"u1","k":3,"label":"benign","events":[{"t":1000.0,"a":0}, ...]}
//! ```

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of real activity types in the taxonomy; softmax alphabet size.
pub const TYPE_COUNT: usize = 19;

const TYPE_NAMES: [&str; TYPE_COUNT] = [
    "Weekday Logon",
    "Afterhour Weekday Logon",
    "Weekend Logon",
    "Logoff",
    "Send Internal Email",
    "Send External Email",
    "View Internal Email",
    "View External Email",
    "WWW Visit",
    "WWW Download",
    "WWW Upload",
    "Weekday Device Connect",
    "Afterhour Weekday Device Connect",
    "Weekend Device Connect",
    "Disconnect Device",
    "Open doc/jpg/txt/zip File",
    "Copy doc/jpg/txt/zip File",
    "Write doc/jpg/txt/zip File",
    "Delete doc/jpg/txt/zip File",
];

/// One of the 19 taxonomy types, or a reserved sequence marker (ids 19/20,
/// never serialized into sessions and excluded from the softmax alphabet).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActivityType(u8);

/// Decoder start-of-sequence marker.
pub const START_MARKER: ActivityType = ActivityType(19);
/// Decoder end-of-sequence marker.
pub const END_MARKER: ActivityType = ActivityType(20);

impl ActivityType {
    pub fn new(id: usize) -> Result<Self> {
        if id >= TYPE_COUNT {
            return Err(Error::Contract(format!(
                "activity type id {id} outside the {TYPE_COUNT}-type taxonomy"
            )));
        }
        Ok(ActivityType(id as u8))
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            START_MARKER => "<start>",
            END_MARKER => "<end>",
            ActivityType(id) => TYPE_NAMES[id as usize],
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        TYPE_NAMES
            .iter()
            .position(|&n| n == name)
            .map(|id| ActivityType(id as u8))
            .ok_or_else(|| Error::Contract(format!("unknown activity type name {name:?}")))
    }

    pub fn all() -> impl Iterator<Item = ActivityType> {
        (0..TYPE_COUNT as u8).map(ActivityType)
    }

    /// Logon variants open a session.
    pub fn is_logon(self) -> bool {
        matches!(self.0, 0 | 1 | 2)
    }

    /// Logoff closes a session and doubles as the decoder's end token.
    pub fn is_logoff(self) -> bool {
        self.0 == 3
    }

    pub fn is_marker(self) -> bool {
        self.0 >= TYPE_COUNT as u8
    }

    /// True for ids that may appear inside a serialized session.
    pub fn is_valid_event_type(self) -> bool {
        !self.is_marker()
    }
}

impl fmt::Display for ActivityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// FNV-1a over the taxonomy names; stored in checkpoints so a model is
/// never scored against sessions encoded with a different taxonomy.
pub fn taxonomy_hash() -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for name in TYPE_NAMES {
        for byte in name.bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash ^= b'\n' as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "t")]
    pub time: f64,
    #[serde(rename = "a")]
    pub activity: ActivityType,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malicious,
    Unknown,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Benign => "benign",
            Label::Malicious => "malicious",
            Label::Unknown => "unknown",
        })
    }
}

impl std::str::FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "benign" => Ok(Label::Benign),
            "malicious" => Ok(Label::Malicious),
            "unknown" => Ok(Label::Unknown),
            other => Err(Error::Validation(format!("unknown label {other:?}"))),
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// A logon-to-logoff run of events for one user. `k` is the session's index
/// in the user's chronological session list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub user: String,
    pub k: u32,
    pub label: Label,
    /// Set by sessionization when the run did not terminate in a Logoff
    /// (or started without a Logon) and had to be closed implicitly.
    #[serde(default, skip_serializing_if = "is_false")]
    pub ill_formed: bool,
    pub events: Vec<Event>,
}

impl Session {
    pub fn start(&self) -> f64 {
        self.events.first().map(|e| e.time).unwrap_or(f64::NAN)
    }

    pub fn end(&self) -> f64 {
        self.events.last().map(|e| e.time).unwrap_or(f64::NAN)
    }

    /// Session length d^k = t_T - t_1.
    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn types(&self) -> Vec<ActivityType> {
        self.events.iter().map(|e| e.activity).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.events.len() < 2 {
            return Err(Error::Contract(format!(
                "session {}#{} has {} events, need at least 2",
                self.user,
                self.k,
                self.events.len()
            )));
        }
        for event in &self.events {
            if !event.time.is_finite() {
                return Err(Error::Contract(format!(
                    "session {}#{} has non-finite event time",
                    self.user, self.k
                )));
            }
            if !event.activity.is_valid_event_type() {
                return Err(Error::Contract(format!(
                    "session {}#{} contains reserved marker type {}",
                    self.user,
                    self.k,
                    event.activity.id()
                )));
            }
        }
        if self.events.windows(2).any(|w| w[0].time > w[1].time) {
            return Err(Error::Contract(format!(
                "session {}#{} has decreasing event times",
                self.user, self.k
            )));
        }
        if !self.ill_formed {
            if !self.events[0].activity.is_logon() {
                return Err(Error::Contract(format!(
                    "session {}#{} does not start with a Logon variant",
                    self.user, self.k
                )));
            }
            if !self.events.last().unwrap().activity.is_logoff() {
                return Err(Error::Contract(format!(
                    "session {}#{} does not end with Logoff",
                    self.user, self.k
                )));
            }
        }
        Ok(())
    }

    /// Inter-activity durations [t_2 - t_1, ..., t_T - t_{T-1}]; length
    /// T - 1. (The duration input paired with the first event is 0 by
    /// convention; that lives in the embedding call, not here.)
    pub fn inter_activity_durations(&self) -> Result<Vec<f64>> {
        if self.events.windows(2).any(|w| w[0].time > w[1].time) {
            return Err(Error::Contract(format!(
                "session {}#{}: events not sorted by time",
                self.user, self.k
            )));
        }
        Ok(self
            .events
            .windows(2)
            .map(|w| w[1].time - w[0].time)
            .collect())
    }
}

/// Interval between a session and the previous session of the same user;
/// absent for the user's first known session.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionGap {
    pub preceding: Option<f64>,
}

impl SessionGap {
    pub fn none() -> Self {
        SessionGap { preceding: None }
    }

    pub fn between(prev: &Session, cur: &Session) -> Result<Self> {
        let gap = cur.start() - prev.end();
        if !(gap >= 0.0) {
            return Err(Error::Contract(format!(
                "sessions overlap: {}#{} starts {gap:.3}s before {}#{} ends",
                cur.user, cur.k, prev.user, prev.k
            )));
        }
        Ok(SessionGap { preceding: Some(gap) })
    }
}

/// One user's sessions within one ISO week, each paired with its gap to the
/// true previous session (which may lie in an earlier week).
#[derive(Clone, Debug, PartialEq)]
pub struct WeekSequence {
    pub user: String,
    pub iso_year: i32,
    pub iso_week: u32,
    pub entries: Vec<(Session, SessionGap)>,
}

// ── JSONL interchange ──

pub fn write_sessions_jsonl(path: &Path, sessions: &[Session]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for session in sessions {
        serde_json::to_writer(&mut out, session)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sessions_jsonl(path: &Path) -> Result<Vec<Session>> {
    let file = std::fs::File::open(path)?;
    let mut sessions = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let session: Session = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), lineno + 1),
            message: e.to_string(),
        })?;
        session.validate().map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), lineno + 1),
            message: e.to_string(),
        })?;
        sessions.push(session);
    }
    Ok(sessions)
}
