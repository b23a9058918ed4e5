//! Parsing CERT-style activity logs (logon/email/http/device/file CSVs)
//! into per-user event streams.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{FixedOffset, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{sessionize, SessionizeStats, TimeRules};
use crate::error::{Error, Result};
use crate::sessions::{ActivityType, Event, Label, Session};

const TIMESTAMP_FORMAT: &str = "%m/%d/%Y %H:%M:%S";

/// Which of the five CERT log files a CSV is, detected from its file stem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum LogSource {
    Logon,
    Email,
    Http,
    Device,
    File,
}

impl LogSource {
    pub const ALL: [LogSource; 5] = [
        LogSource::Logon,
        LogSource::Email,
        LogSource::Http,
        LogSource::Device,
        LogSource::File,
    ];

    pub fn from_stem(stem: &str) -> Option<LogSource> {
        match stem.to_ascii_lowercase().as_str() {
            "logon" => Some(LogSource::Logon),
            "email" => Some(LogSource::Email),
            "http" => Some(LogSource::Http),
            "device" => Some(LogSource::Device),
            "file" => Some(LogSource::File),
            _ => None,
        }
    }

    pub fn stem(self) -> &'static str {
        match self {
            LogSource::Logon => "logon",
            LogSource::Email => "email",
            LogSource::Http => "http",
            LogSource::Device => "device",
            LogSource::File => "file",
        }
    }

    fn required_columns(self) -> &'static [&'static str] {
        match self {
            LogSource::Email => &["date", "user", "activity", "to", "cc", "bcc", "from"],
            _ => &["date", "user", "activity"],
        }
    }
}

/// Site conventions needed to map raw rows onto activity types: the clock
/// rules and the email domain that counts as internal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertConfig {
    pub rules: TimeRules,
    pub internal_domain: String,
}

impl Default for CertConfig {
    fn default() -> Self {
        CertConfig { rules: TimeRules::default(), internal_domain: "dtaa.com".into() }
    }
}

impl CertConfig {
    pub fn validate(&self) -> Result<()> {
        self.rules.validate()?;
        if self.internal_domain.trim().is_empty() {
            return Err(Error::Validation("internal_domain is empty".into()));
        }
        Ok(())
    }

    fn domain_suffix(&self) -> String {
        format!("@{}", self.internal_domain.trim_start_matches('@').to_ascii_lowercase())
    }
}

/// Row accounting for one parse run. `rows_read` counts data rows, of which
/// `rows_skipped` were malformed; every kept row became exactly one event.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub rows_read: usize,
    pub rows_skipped: usize,
    pub events: usize,
    pub users: usize,
}

/// Parses the given CSVs (any subset of the five CERT logs, detected by file
/// stem) into one time-sorted event stream per user. Malformed rows are
/// skipped and counted; an unrecognized activity string is an error.
pub fn parse_logs<P: AsRef<Path>>(
    paths: &[P],
    cfg: &CertConfig,
) -> Result<(BTreeMap<String, Vec<Event>>, ParseStats)> {
    cfg.validate()?;
    let mut ordered: Vec<(LogSource, &Path)> = Vec::with_capacity(paths.len());
    for p in paths {
        let path = p.as_ref();
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Validation(format!("path {} has no file stem", path.display())))?;
        let source = LogSource::from_stem(stem).ok_or_else(|| {
            Error::Validation(format!(
                "unrecognized log file {:?}; expected one of logon/email/http/device/file",
                stem
            ))
        })?;
        ordered.push((source, path));
    }
    ordered.sort_by_key(|&(source, _)| source);

    let mut streams: BTreeMap<String, Vec<Event>> = BTreeMap::new();
    let mut stats = ParseStats::default();
    for (source, path) in ordered {
        parse_one(source, path, cfg, &mut streams, &mut stats)?;
    }
    for events in streams.values_mut() {
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
    }
    stats.users = streams.len();
    stats.events = streams.values().map(Vec::len).sum();
    Ok((streams, stats))
}

/// Convenience wrapper over [`parse_logs`] that picks up whichever of the
/// five standard files exist in `dir`.
pub fn parse_log_dir(
    dir: &Path,
    cfg: &CertConfig,
) -> Result<(BTreeMap<String, Vec<Event>>, ParseStats)> {
    let mut paths: Vec<PathBuf> = Vec::new();
    for source in LogSource::ALL {
        let candidate = dir.join(format!("{}.csv", source.stem()));
        if candidate.is_file() {
            paths.push(candidate);
        }
    }
    if paths.is_empty() {
        return Err(Error::Validation(format!(
            "no logon/email/http/device/file CSVs found in {}",
            dir.display()
        )));
    }
    parse_logs(&paths, cfg)
}

/// Sessionizes every user's stream, labelling each user via `labeler`.
/// Output is ordered by user id regardless of how the work is scheduled.
pub fn sessionize_streams(
    streams: &BTreeMap<String, Vec<Event>>,
    labeler: impl Fn(&str) -> Label + Sync,
) -> Result<(Vec<Session>, SessionizeStats)> {
    use rayon::prelude::*;

    let users: Vec<(&String, &Vec<Event>)> = streams.iter().collect();
    let per_user: Vec<(Vec<Session>, SessionizeStats)> = users
        .par_iter()
        .map(|(user, events)| sessionize(user, labeler(user), events))
        .collect::<Result<_>>()?;

    let mut sessions = Vec::new();
    let mut stats = SessionizeStats::default();
    for (user_sessions, user_stats) in per_user {
        sessions.extend(user_sessions);
        stats.merge(&user_stats);
    }
    Ok((sessions, stats))
}

fn parse_one(
    source: LogSource,
    path: &Path,
    cfg: &CertConfig,
    streams: &mut BTreeMap<String, Vec<Event>>,
    stats: &mut ParseStats,
) -> Result<()> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let mut cols = BTreeMap::new();
    for &name in source.required_columns() {
        match column(name) {
            Some(i) => {
                cols.insert(name, i);
            }
            None => {
                return Err(Error::Parse {
                    location: path.display().to_string(),
                    message: format!("{} log is missing required column {name:?}", source.stem()),
                })
            }
        }
    }

    let offset = FixedOffset::east_opt(cfg.rules.utc_offset_secs).expect("validated offset");
    let domain_suffix = cfg.domain_suffix();

    for (line, record) in reader.records().enumerate() {
        let location = || format!("{}:{}", path.display(), line + 2);
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                stats.rows_read += 1;
                stats.rows_skipped += 1;
                log::warn!("{}: unreadable row skipped", location());
                continue;
            }
        };
        stats.rows_read += 1;

        let cell = |name: &str| cols.get(name).and_then(|&i| record.get(i)).map(str::trim);
        let (date, user, activity) = match (cell("date"), cell("user"), cell("activity")) {
            (Some(d), Some(u), Some(a)) if !u.is_empty() => (d, u, a),
            _ => {
                stats.rows_skipped += 1;
                log::warn!("{}: missing date/user/activity, row skipped", location());
                continue;
            }
        };
        let time = match NaiveDateTime::parse_from_str(date, TIMESTAMP_FORMAT)
            .ok()
            .and_then(|naive| naive.and_local_timezone(offset).single())
        {
            Some(dt) => dt.timestamp() as f64,
            None => {
                stats.rows_skipped += 1;
                log::warn!("{}: unparseable timestamp {date:?}, row skipped", location());
                continue;
            }
        };

        let email_internal = source == LogSource::Email
            && ["to", "cc", "bcc", "from"].iter().all(|&field| {
                cell(field).unwrap_or("").split(';').all(|address| {
                    let address = address.trim();
                    address.is_empty() || address.to_ascii_lowercase().ends_with(&domain_suffix)
                })
            });
        let activity_type = classify(source, activity, time, &cfg.rules, email_internal)
            .map_err(|message| Error::Parse { location: location(), message })?;
        streams
            .entry(user.to_string())
            .or_default()
            .push(Event { time, activity: activity_type });
    }
    Ok(())
}

fn classify(
    source: LogSource,
    activity: &str,
    time: f64,
    rules: &TimeRules,
    email_internal: bool,
) -> std::result::Result<ActivityType, String> {
    let verb = activity.to_ascii_lowercase();
    let id = match source {
        LogSource::Logon => match verb.as_str() {
            "logon" => return Ok(rules.logon_variant(time)),
            "logoff" => 3,
            _ => return Err(unknown(source, activity)),
        },
        LogSource::Email => match (verb.as_str(), email_internal) {
            ("send", true) => 4,
            ("send", false) => 5,
            ("view", true) => 6,
            ("view", false) => 7,
            _ => return Err(unknown(source, activity)),
        },
        LogSource::Http => match verb.as_str() {
            "www visit" | "visit" => 8,
            "www download" | "download" => 9,
            "www upload" | "upload" => 10,
            _ => return Err(unknown(source, activity)),
        },
        LogSource::Device => match verb.as_str() {
            "connect" => return Ok(rules.device_connect_variant(time)),
            "disconnect" => 14,
            _ => return Err(unknown(source, activity)),
        },
        LogSource::File => match verb.as_str() {
            "file open" | "open" => 15,
            "file copy" | "copy" => 16,
            "file write" | "write" => 17,
            "file delete" | "delete" => 18,
            _ => return Err(unknown(source, activity)),
        },
    };
    Ok(ActivityType::new(id).expect("taxonomy id"))
}

fn unknown(source: LogSource, activity: &str) -> String {
    format!("unknown {} activity {activity:?}", source.stem())
}
