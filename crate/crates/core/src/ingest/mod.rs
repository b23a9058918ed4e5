//! Turning raw activity logs into sessions and weekly sequences.
//!
//! Two sources share this plumbing: CERT-style CSV logs (`cert`) and a
//! synthetic generator (`synth`) that produces the same session format for
//! desk-scale experiments.

pub mod cert;
pub mod synth;

use chrono::{DateTime, Datelike, FixedOffset, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sessions::{ActivityType, Event, Label, Session, SessionGap, WeekSequence};

/// Clock conventions for classifying events: the work-hours window and the
/// fixed UTC offset of the site's local time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeRules {
    pub work_start_hour: u32,
    pub work_end_hour: u32,
    pub utc_offset_secs: i32,
}

impl Default for TimeRules {
    fn default() -> Self {
        TimeRules { work_start_hour: 8, work_end_hour: 17, utc_offset_secs: 0 }
    }
}

impl TimeRules {
    pub fn validate(&self) -> Result<()> {
        if self.work_start_hour >= self.work_end_hour || self.work_end_hour > 24 {
            return Err(Error::Validation(format!(
                "work hours {}..{} invalid",
                self.work_start_hour, self.work_end_hour
            )));
        }
        if self.utc_offset_secs.abs() >= 24 * 3600 {
            return Err(Error::Validation(format!(
                "utc offset {}s out of range",
                self.utc_offset_secs
            )));
        }
        Ok(())
    }

    pub fn local(&self, epoch: f64) -> DateTime<FixedOffset> {
        let offset = FixedOffset::east_opt(self.utc_offset_secs).expect("validated offset");
        DateTime::from_timestamp(epoch.floor() as i64, 0)
            .expect("finite epoch seconds")
            .with_timezone(&offset)
    }

    pub fn is_weekend(&self, epoch: f64) -> bool {
        let wd = self.local(epoch).weekday();
        wd == chrono::Weekday::Sat || wd == chrono::Weekday::Sun
    }

    pub fn is_work_hours(&self, epoch: f64) -> bool {
        let hour = self.local(epoch).hour();
        hour >= self.work_start_hour && hour < self.work_end_hour
    }

    /// Weekday/afterhour/weekend logon variant for a logon at `epoch`.
    pub fn logon_variant(&self, epoch: f64) -> ActivityType {
        let id = if self.is_weekend(epoch) {
            2
        } else if self.is_work_hours(epoch) {
            0
        } else {
            1
        };
        ActivityType::new(id).expect("taxonomy id")
    }

    /// Weekday/afterhour/weekend device-connect variant.
    pub fn device_connect_variant(&self, epoch: f64) -> ActivityType {
        let id = if self.is_weekend(epoch) {
            13
        } else if self.is_work_hours(epoch) {
            11
        } else {
            12
        };
        ActivityType::new(id).expect("taxonomy id")
    }

    pub fn iso_week(&self, epoch: f64) -> (i32, u32) {
        let week = self.local(epoch).iso_week();
        (week.year(), week.week())
    }
}

/// Bookkeeping from sessionization; `emitted_events + dropped_events`
/// always equals the input event count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionizeStats {
    pub input_events: usize,
    pub emitted_events: usize,
    pub dropped_events: usize,
    pub sessions: usize,
    pub ill_formed_sessions: usize,
    pub dropped_runs: usize,
}

impl SessionizeStats {
    pub fn merge(&mut self, other: &SessionizeStats) {
        self.input_events += other.input_events;
        self.emitted_events += other.emitted_events;
        self.dropped_events += other.dropped_events;
        self.sessions += other.sessions;
        self.ill_formed_sessions += other.ill_formed_sessions;
        self.dropped_runs += other.dropped_runs;
    }
}

/// Splits one user's time-sorted event stream into sessions: a session
/// opens at each Logon-class event and closes at the next Logoff. Runs that
/// start without a Logon or never reach a Logoff are closed implicitly (at
/// the next Logon or at stream end) and flagged ill-formed. Runs of fewer
/// than two events are dropped and counted.
pub fn sessionize(
    user: &str,
    label: Label,
    events: &[Event],
) -> Result<(Vec<Session>, SessionizeStats)> {
    if events.windows(2).any(|w| w[0].time > w[1].time) {
        return Err(Error::Contract(format!("events for user {user:?} not sorted by time")));
    }
    let mut stats = SessionizeStats { input_events: events.len(), ..Default::default() };
    let mut sessions: Vec<Session> = Vec::new();

    let mut run: Vec<Event> = Vec::new();
    let mut run_opened_by_logon = false;

    let flush = |run: &mut Vec<Event>,
                     well_formed: bool,
                     sessions: &mut Vec<Session>,
                     stats: &mut SessionizeStats| {
        if run.is_empty() {
            return;
        }
        if run.len() < 2 {
            stats.dropped_events += run.len();
            stats.dropped_runs += 1;
        } else {
            stats.emitted_events += run.len();
            stats.sessions += 1;
            if !well_formed {
                stats.ill_formed_sessions += 1;
            }
            sessions.push(Session {
                user: user.to_string(),
                k: (sessions.len()) as u32,
                label,
                ill_formed: !well_formed,
                events: std::mem::take(run),
            });
            return;
        }
        run.clear();
    };

    for &event in events {
        if event.activity.is_logon() {
            // Whatever was accumulating never reached its Logoff.
            flush(&mut run, false, &mut sessions, &mut stats);
            run.push(event);
            run_opened_by_logon = true;
        } else if event.activity.is_logoff() {
            run.push(event);
            flush(&mut run, run_opened_by_logon, &mut sessions, &mut stats);
            run_opened_by_logon = false;
        } else {
            run.push(event);
        }
    }
    flush(&mut run, false, &mut sessions, &mut stats);

    debug_assert_eq!(stats.emitted_events + stats.dropped_events, stats.input_events);
    Ok((sessions, stats))
}

/// Buckets each user's sessions by the ISO week of their first event. Gaps
/// are computed against the true previous session even when it falls in an
/// earlier week; a user's first known session has no gap.
pub fn weekly_sequences(sessions: &[Session], rules: &TimeRules) -> Result<Vec<WeekSequence>> {
    use std::collections::BTreeMap;

    let mut by_user: BTreeMap<&str, Vec<&Session>> = BTreeMap::new();
    for session in sessions {
        by_user.entry(&session.user).or_default().push(session);
    }

    let mut weeks: Vec<WeekSequence> = Vec::new();
    for (user, user_sessions) in by_user {
        if user_sessions.windows(2).any(|w| w[0].start() > w[1].start()) {
            return Err(Error::Contract(format!(
                "sessions for user {user:?} not sorted by start time"
            )));
        }
        let mut current: Option<WeekSequence> = None;
        let mut prev: Option<&Session> = None;
        for session in user_sessions {
            let gap = match prev {
                None => SessionGap::none(),
                Some(p) => SessionGap::between(p, session)?,
            };
            let (iso_year, iso_week) = rules.iso_week(session.start());
            let belongs = current
                .as_ref()
                .map(|w| w.iso_year == iso_year && w.iso_week == iso_week)
                .unwrap_or(false);
            if !belongs {
                if let Some(done) = current.take() {
                    weeks.push(done);
                }
                current = Some(WeekSequence {
                    user: user.to_string(),
                    iso_year,
                    iso_week,
                    entries: Vec::new(),
                });
            }
            current
                .as_mut()
                .unwrap()
                .entries
                .push((session.clone(), gap));
            prev = Some(session);
        }
        if let Some(done) = current.take() {
            weeks.push(done);
        }
    }
    Ok(weeks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sessions::ActivityType;
    use proptest::prelude::*;

    fn ev(time: f64, id: usize) -> Event {
        Event { time, activity: ActivityType::new(id).unwrap() }
    }

    #[test]
    fn time_rules_classify_logons() {
        let rules = TimeRules::default();
        // 2010-01-05 09:00 UTC is a Tuesday.
        let tuesday_nine = 1262682000.0;
        assert_eq!(rules.logon_variant(tuesday_nine).id(), 0);
        // Tuesday 19:00.
        assert_eq!(rules.logon_variant(tuesday_nine + 10.0 * 3600.0).id(), 1);
        // 2010-01-09 03:00 UTC is a Saturday.
        let saturday_three = 1263006000.0;
        assert_eq!(rules.logon_variant(saturday_three).id(), 2);
        assert_eq!(rules.device_connect_variant(saturday_three).id(), 13);
        assert_eq!(rules.device_connect_variant(tuesday_nine).id(), 11);
    }

    #[test]
    fn work_hours_boundaries_are_start_inclusive_end_exclusive() {
        let rules = TimeRules::default();
        // 2010-01-05 00:00 UTC, a Tuesday.
        let midnight = 1262649600.0;
        assert!(!rules.is_work_hours(midnight + 7.0 * 3600.0 + 3599.0));
        assert!(rules.is_work_hours(midnight + 8.0 * 3600.0));
        assert!(rules.is_work_hours(midnight + 16.0 * 3600.0 + 3599.0));
        assert!(!rules.is_work_hours(midnight + 17.0 * 3600.0));
    }

    #[test]
    fn timezone_offset_shifts_classification() {
        let rules = TimeRules { utc_offset_secs: -5 * 3600, ..TimeRules::default() };
        // 2010-01-05 13:00 UTC = 08:00 local (UTC-5), a Tuesday.
        let t = 1262696400.0;
        assert!(rules.is_work_hours(t));
        assert!(!rules.is_work_hours(t - 1.0));
    }

    #[test]
    fn sessionize_simple_session() {
        let events = [ev(0.0, 0), ev(10.0, 4), ev(20.0, 3)];
        let (sessions, stats) = sessionize("u", Label::Benign, &events).unwrap();
        assert_eq!(sessions.len(), 1);
        assert!(!sessions[0].ill_formed);
        assert_eq!(sessions[0].events.len(), 3);
        assert_eq!(stats.emitted_events, 3);
        assert_eq!(stats.dropped_events, 0);
    }

    #[test]
    fn sessionize_auto_closes_on_nested_logon() {
        let events = [ev(0.0, 0), ev(1.0, 4), ev(2.0, 0), ev(3.0, 8), ev(4.0, 3)];
        let (sessions, stats) = sessionize("u", Label::Benign, &events).unwrap();
        assert_eq!(sessions.len(), 2);
        assert!(sessions[0].ill_formed);
        assert_eq!(sessions[0].events.len(), 2);
        assert!(!sessions[1].ill_formed);
        assert_eq!(sessions[1].events.len(), 3);
        assert_eq!(stats.ill_formed_sessions, 1);
        assert_eq!(sessions[0].k, 0);
        assert_eq!(sessions[1].k, 1);
    }

    #[test]
    fn sessionize_orphans_before_logon_and_after_logoff() {
        // Pre-logon activity becomes an ill-formed run closed at the logon;
        // post-logoff activity dangles to stream end.
        let events = [ev(0.0, 8), ev(1.0, 8), ev(2.0, 0), ev(3.0, 3), ev(4.0, 4), ev(5.0, 8)];
        let (sessions, stats) = sessionize("u", Label::Benign, &events).unwrap();
        assert_eq!(sessions.len(), 3);
        assert!(sessions[0].ill_formed);
        assert!(!sessions[1].ill_formed);
        assert!(sessions[2].ill_formed);
        assert_eq!(stats.emitted_events, 6);
    }

    #[test]
    fn sessionize_drops_short_runs_with_counts() {
        // The lone trailing Logoff forms a 1-event run.
        let events = [ev(0.0, 0), ev(1.0, 3), ev(2.0, 3)];
        let (sessions, stats) = sessionize("u", Label::Benign, &events).unwrap();
        assert_eq!(sessions.len(), 1);
        assert_eq!(stats.dropped_events, 1);
        assert_eq!(stats.dropped_runs, 1);
        assert_eq!(stats.emitted_events + stats.dropped_events, stats.input_events);
    }

    #[test]
    fn sessionize_rejects_unsorted_input() {
        let events = [ev(5.0, 0), ev(1.0, 3)];
        assert!(sessionize("u", Label::Benign, &events).is_err());
    }

    #[test]
    fn weekly_sequences_buckets_by_iso_week() {
        let rules = TimeRules::default();
        // 2010-01-06 is a Wednesday (ISO week 1 of 2010).
        let wed = 1262736000.0;
        let mk = |k: u32, start: f64| crate::sessions::tests::make_session(
            "u",
            k,
            &[(start, 0), (start + 100.0, 3)],
        );
        let sessions = vec![mk(0, wed), mk(1, wed + 3600.0), mk(2, wed + 7200.0)];
        let weeks = weekly_sequences(&sessions, &rules).unwrap();
        assert_eq!(weeks.len(), 1);
        assert_eq!(weeks[0].entries.len(), 3);
        assert_eq!(weeks[0].entries[0].1.preceding, None);
        assert_eq!(weeks[0].entries[1].1.preceding, Some(3500.0));
    }

    #[test]
    fn weekly_sequences_split_at_week_boundary_but_keep_true_gaps() {
        let rules = TimeRules::default();
        // 2010-01-10 23:00 UTC is a Sunday (week 1); 01:00 Monday is week 2.
        let sunday = 1263164400.0;
        let monday = sunday + 2.0 * 3600.0;
        let mk = |k: u32, start: f64| crate::sessions::tests::make_session(
            "u",
            k,
            &[(start, 0), (start + 600.0, 3)],
        );
        let sessions = vec![mk(0, sunday), mk(1, monday)];
        let weeks = weekly_sequences(&sessions, &rules).unwrap();
        assert_eq!(weeks.len(), 2);
        assert_eq!(weeks[0].iso_week, 1);
        assert_eq!(weeks[1].iso_week, 2);
        // Gap crosses the bucket boundary: 2h minus the 600s session.
        assert_eq!(weeks[1].entries[0].1.preceding, Some(2.0 * 3600.0 - 600.0));
    }

    #[test]
    fn weekly_sequences_reject_overlapping_sessions() {
        let rules = TimeRules::default();
        let mk = |k: u32, start: f64| crate::sessions::tests::make_session(
            "u",
            k,
            &[(start, 0), (start + 1000.0, 3)],
        );
        let sessions = vec![mk(0, 0.0), mk(1, 500.0)];
        assert!(weekly_sequences(&sessions, &rules).is_err());
    }

    proptest! {
        #[test]
        fn sessionize_bookkeeping_balances(ids in prop::collection::vec(0usize..19, 0..200)) {
            let events: Vec<Event> = ids
                .iter()
                .enumerate()
                .map(|(i, &id)| ev(i as f64, id))
                .collect();
            let (sessions, stats) = sessionize("u", Label::Unknown, &events).unwrap();
            let emitted: usize = sessions.iter().map(|s| s.events.len()).sum();
            prop_assert_eq!(emitted, stats.emitted_events);
            prop_assert_eq!(stats.emitted_events + stats.dropped_events, stats.input_events);
            prop_assert_eq!(sessions.len(), stats.sessions);
            for (i, s) in sessions.iter().enumerate() {
                prop_assert_eq!(s.k as usize, i);
                prop_assert!(s.validate().is_ok());
            }
        }
    }
}
