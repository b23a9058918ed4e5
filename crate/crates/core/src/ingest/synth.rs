//! Synthetic session corpora: benign users with a daily work rhythm and a
//! configurable activity mixture, plus "insider" users whose mixture,
//! tempo, session durations, and gaps are shifted. Deterministic under a
//! seed, so generated datasets are reproducible byte for byte.

use std::path::{Path, PathBuf};

use rand::distributions::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::TimeRules;
use crate::error::{Error, Result};
use crate::sessions::{write_sessions_jsonl, ActivityType, Event, Label, Session};

/// First activity id the interior Markov chain can emit (Send Internal
/// Email); logon variants and Logoff are reserved for session boundaries.
pub const INTERIOR_BASE: usize = 4;
/// Number of interior activity types (ids 4..=18).
pub const INTERIOR_COUNT: usize = 15;

/// 2020-01-06 00:00:00 UTC, a Monday.
pub const DEFAULT_START_EPOCH: f64 = 1_578_268_800.0;

/// One population's behavior: when sessions start, how long they last, and
/// how activity unfolds inside them (a Markov chain over the 15 interior
/// types with per-type exponential dwell times, in seconds).
///
/// With `daily_rhythm` the user starts one session per day, at a normally
/// distributed local hour; without it each session starts a log-normal gap
/// after the previous one ends, drifting freely around the clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub start_hour_mean: f64,
    pub start_hour_std: f64,
    pub daily_rhythm: bool,
    pub skip_weekends: bool,
    pub session_duration_ln_mean: f64,
    pub session_duration_ln_std: f64,
    pub gap_ln_mean: f64,
    pub gap_ln_std: f64,
    pub initial_mix: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
    pub mean_dwell_secs: Vec<f64>,
}

fn normalized(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

fn stochastic_rows(base: &[f64], self_bonus: f64) -> Vec<Vec<f64>> {
    (0..base.len())
        .map(|i| {
            let mut row = base.to_vec();
            row[i] += self_bonus * base[i];
            normalized(&row)
        })
        .collect()
}

impl ProfileConfig {
    /// Office-hours population: one ~2 h session per day starting around
    /// 09:15, dominated by web visits, internal email, and document opens.
    pub fn benign() -> Self {
        let base = [
            8.0,  // Send Internal Email
            2.0,  // Send External Email
            10.0, // View Internal Email
            3.0,  // View External Email
            12.0, // WWW Visit
            2.0,  // WWW Download
            0.5,  // WWW Upload
            1.0,  // Weekday Device Connect
            0.0,  // Afterhour Weekday Device Connect
            0.25, // Weekend Device Connect
            1.0,  // Disconnect Device
            8.0,  // Open File
            1.0,  // Copy File
            4.0,  // Write File
            0.5,  // Delete File
        ];
        ProfileConfig {
            start_hour_mean: 9.25,
            start_hour_std: 0.5,
            daily_rhythm: true,
            skip_weekends: false,
            session_duration_ln_mean: 7200f64.ln(),
            session_duration_ln_std: 0.3,
            gap_ln_mean: 79_200f64.ln(),
            gap_ln_std: 0.4,
            initial_mix: normalized(&base),
            transitions: stochastic_rows(&base, 1.0),
            mean_dwell_secs: vec![
                300.0, 360.0, 200.0, 240.0, 150.0, 240.0, 300.0, 360.0, 360.0, 360.0, 180.0,
                240.0, 260.0, 360.0, 200.0,
            ],
        }
    }

    /// Exfiltration-flavored population: short, fast sessions at arbitrary
    /// hours, heavy on copies, uploads, deletes, and off-hours device use.
    pub fn malicious() -> Self {
        let base = [
            0.5,  // Send Internal Email
            2.0,  // Send External Email
            1.0,  // View Internal Email
            2.0,  // View External Email
            2.0,  // WWW Visit
            4.0,  // WWW Download
            8.0,  // WWW Upload
            1.0,  // Weekday Device Connect
            6.0,  // Afterhour Weekday Device Connect
            4.0,  // Weekend Device Connect
            3.0,  // Disconnect Device
            4.0,  // Open File
            10.0, // Copy File
            2.0,  // Write File
            6.0,  // Delete File
        ];
        ProfileConfig {
            start_hour_mean: 22.5,
            start_hour_std: 1.0,
            daily_rhythm: false,
            skip_weekends: false,
            session_duration_ln_mean: 720f64.ln(),
            session_duration_ln_std: 0.4,
            gap_ln_mean: 10_800f64.ln(),
            gap_ln_std: 0.5,
            initial_mix: normalized(&base),
            transitions: stochastic_rows(&base, 0.5),
            mean_dwell_secs: vec![
                60.0, 60.0, 45.0, 45.0, 40.0, 60.0, 90.0, 60.0, 60.0, 60.0, 30.0, 40.0, 45.0,
                60.0, 40.0,
            ],
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let probs = |label: &str, row: &[f64]| -> Result<()> {
            if row.len() != INTERIOR_COUNT {
                return Err(Error::Validation(format!(
                    "{name}.{label} has {} entries, expected {INTERIOR_COUNT}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::Validation(format!("{name}.{label} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "{name}.{label} sums to {sum}, expected 1 within 1e-9"
                )));
            }
            Ok(())
        };
        probs("initial_mix", &self.initial_mix)?;
        if self.transitions.len() != INTERIOR_COUNT {
            return Err(Error::Validation(format!(
                "{name}.transitions has {} rows, expected {INTERIOR_COUNT}",
                self.transitions.len()
            )));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            probs(&format!("transitions[{i}]"), row)?;
        }
        if self.mean_dwell_secs.len() != INTERIOR_COUNT {
            return Err(Error::Validation(format!(
                "{name}.mean_dwell_secs has {} entries, expected {INTERIOR_COUNT}",
                self.mean_dwell_secs.len()
            )));
        }
        if self.mean_dwell_secs.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::Validation(format!("{name}.mean_dwell_secs must be positive")));
        }
        for (label, value) in [
            ("start_hour_std", self.start_hour_std),
            ("session_duration_ln_std", self.session_duration_ln_std),
            ("gap_ln_std", self.gap_ln_std),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::Validation(format!("{name}.{label} must be finite and >= 0")));
            }
        }
        if !(0.0..24.0).contains(&self.start_hour_mean) {
            return Err(Error::Validation(format!("{name}.start_hour_mean must be in [0, 24)")));
        }
        Ok(())
    }
}

/// Shape of a generated corpus: a benign-only training population plus a
/// test population mixing held-out benign users with malicious ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub rules: TimeRules,
    pub start_epoch: f64,
    pub n_benign_users: usize,
    pub sessions_per_user: usize,
    pub n_test_benign_users: usize,
    pub test_sessions_per_user: usize,
    pub n_malicious_users: usize,
    pub malicious_sessions_per_user: usize,
    pub benign: ProfileConfig,
    pub malicious: ProfileConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            rules: TimeRules::default(),
            start_epoch: DEFAULT_START_EPOCH,
            n_benign_users: 8,
            sessions_per_user: 6,
            n_test_benign_users: 3,
            test_sessions_per_user: 6,
            n_malicious_users: 2,
            malicious_sessions_per_user: 6,
            benign: ProfileConfig::benign(),
            malicious: ProfileConfig::malicious(),
        }
    }
}

/// Files written by [`SynthConfig::generate_to_dir`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthPaths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub labels: PathBuf,
}

/// A generated corpus, sessions ordered by user then chronologically.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub train: Vec<Session>,
    pub test: Vec<Session>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.rules.validate()?;
        self.benign.validate("benign")?;
        self.malicious.validate("malicious")?;
        if !self.start_epoch.is_finite() {
            return Err(Error::Validation("start_epoch must be finite".into()));
        }
        if self.n_benign_users == 0 || self.sessions_per_user == 0 {
            return Err(Error::Validation("training population is empty".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SynthOutput> {
        self.validate()?;
        let mut train = Vec::new();
        for i in 0..self.n_benign_users {
            train.extend(self.user_sessions(
                &format!("train-{i:04}"),
                "train",
                i,
                Label::Benign,
                &self.benign,
                self.sessions_per_user,
            )?);
        }
        let mut test = Vec::new();
        for i in 0..self.n_test_benign_users {
            test.extend(self.user_sessions(
                &format!("test-{i:04}"),
                "test",
                i,
                Label::Benign,
                &self.benign,
                self.test_sessions_per_user,
            )?);
        }
        for i in 0..self.n_malicious_users {
            test.extend(self.user_sessions(
                &format!("mal-{i:04}"),
                "malicious",
                i,
                Label::Malicious,
                &self.malicious,
                self.malicious_sessions_per_user,
            )?);
        }
        Ok(SynthOutput { train, test })
    }

    pub fn generate_to_dir(&self, dir: &Path) -> Result<SynthPaths> {
        let output = self.generate()?;
        std::fs::create_dir_all(dir)?;
        let paths = SynthPaths {
            train: dir.join("train.jsonl"),
            test: dir.join("test.jsonl"),
            labels: dir.join("labels.csv"),
        };
        write_sessions_jsonl(&paths.train, &output.train)?;
        write_sessions_jsonl(&paths.test, &output.test)?;
        let mut writer = csv::Writer::from_path(&paths.labels)
            .map_err(|e| Error::Parse { location: paths.labels.display().to_string(), message: e.to_string() })?;
        writer
            .write_record(["user", "k", "label"])
            .and_then(|_| {
                output.test.iter().try_for_each(|s| {
                    writer.write_record([s.user.as_str(), &s.k.to_string(), &s.label.to_string()])
                })
            })
            .and_then(|_| writer.flush().map_err(csv::Error::from))
            .map_err(|e| Error::Parse { location: paths.labels.display().to_string(), message: e.to_string() })?;
        Ok(paths)
    }

    fn user_sessions(
        &self,
        user: &str,
        group: &str,
        index: usize,
        label: Label,
        profile: &ProfileConfig,
        count: usize,
    ) -> Result<Vec<Session>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, group, index));
        let bad_dist = |what: &str| Error::Validation(format!("{what} distribution is invalid"));
        let duration_dist =
            LogNormal::new(profile.session_duration_ln_mean, profile.session_duration_ln_std)
                .map_err(|_| bad_dist("session duration"))?;
        let gap_dist = LogNormal::new(profile.gap_ln_mean, profile.gap_ln_std)
            .map_err(|_| bad_dist("session gap"))?;
        let start_hour_dist = Normal::new(profile.start_hour_mean, profile.start_hour_std)
            .map_err(|_| bad_dist("start hour"))?;
        let initial = WeightedIndex::new(&profile.initial_mix)
            .map_err(|e| Error::Validation(format!("initial_mix: {e}")))?;
        let rows: Vec<WeightedIndex<f64>> = profile
            .transitions
            .iter()
            .enumerate()
            .map(|(i, row)| {
                WeightedIndex::new(row)
                    .map_err(|e| Error::Validation(format!("transitions[{i}]: {e}")))
            })
            .collect::<Result<_>>()?;
        let dwells: Vec<Exp<f64>> = profile
            .mean_dwell_secs
            .iter()
            .map(|&mean| Exp::new(1.0 / mean).map_err(|_| bad_dist("dwell")))
            .collect::<Result<_>>()?;

        let mut sessions = Vec::with_capacity(count);
        let mut cursor = self.start_epoch;
        for k in 0..count {
            let start = if profile.daily_rhythm {
                let hour = start_hour_dist.sample(&mut rng).clamp(0.0, 23.75);
                let mut candidate = local_midnight(cursor, &self.rules) + hour * 3600.0;
                while candidate <= cursor {
                    candidate += 86_400.0;
                }
                if profile.skip_weekends {
                    while self.rules.is_weekend(candidate) {
                        candidate += 86_400.0;
                    }
                }
                candidate
            } else {
                cursor + gap_dist.sample(&mut rng)
            };
            let end = start + duration_dist.sample(&mut rng);

            let mut events =
                vec![Event { time: start, activity: self.rules.logon_variant(start) }];
            let mut state = initial.sample(&mut rng);
            let mut t = start;
            loop {
                t += dwells[state].sample(&mut rng);
                if t >= end {
                    break;
                }
                events.push(Event {
                    time: t,
                    activity: ActivityType::new(INTERIOR_BASE + state).expect("interior id"),
                });
                state = rows[state].sample(&mut rng);
            }
            events.push(Event {
                time: end,
                activity: ActivityType::new(3).expect("logoff id"),
            });

            sessions.push(Session {
                user: user.to_string(),
                k: k as u32,
                label,
                ill_formed: false,
                events,
            });
            cursor = end;
        }
        Ok(sessions)
    }
}

/// Per-user stream seed: FNV-1a over the corpus seed, population tag, and
/// user index, so adding users or reordering groups never reshuffles the
/// randomness of existing ones.
fn derive_seed(seed: u64, group: &str, index: usize) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash = (hash ^ b as u64).wrapping_mul(PRIME);
        }
    };
    eat(&seed.to_le_bytes());
    eat(group.as_bytes());
    eat(&(index as u64).to_le_bytes());
    hash
}

fn local_midnight(epoch: f64, rules: &TimeRules) -> f64 {
    let offset = chrono::FixedOffset::east_opt(rules.utc_offset_secs).expect("validated offset");
    rules
        .local(epoch)
        .date_naive()
        .and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_local_timezone(offset)
        .single()
        .expect("fixed offsets are unambiguous")
        .timestamp() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{sessionize, weekly_sequences};
    use std::collections::BTreeSet;

    fn one_hot(index: usize) -> Vec<f64> {
        let mut v = vec![0.0; INTERIOR_COUNT];
        v[index] = 1.0;
        v
    }

    #[test]
    fn default_profiles_validate() {
        SynthConfig::default().validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic_and_byte_identical() {
        let cfg = SynthConfig::default();
        let a = cfg.generate().unwrap();
        let b = cfg.generate().unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let first = cfg.generate_to_dir(&dir.path().join("one")).unwrap();
        let second = cfg.generate_to_dir(&dir.path().join("two")).unwrap();
        for (x, y) in [
            (&first.train, &second.train),
            (&first.test, &second.test),
            (&first.labels, &second.labels),
        ] {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = SynthConfig::default().generate().unwrap();
        let b = SynthConfig { seed: 8, ..SynthConfig::default() }.generate().unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn no_malicious_users_means_all_benign_labels() {
        let cfg = SynthConfig { n_malicious_users: 0, ..SynthConfig::default() };
        let output = cfg.generate().unwrap();
        assert!(output.test.iter().all(|s| s.label == Label::Benign));
        assert_eq!(output.test.len(), cfg.n_test_benign_users * cfg.test_sessions_per_user);
    }

    #[test]
    fn sessions_are_well_formed_and_chronological() {
        let output = SynthConfig::default().generate().unwrap();
        for sessions in [&output.train, &output.test] {
            for s in sessions {
                s.validate().unwrap();
                assert!(s.events.len() >= 2);
                assert!(s.events[0].activity.is_logon());
                assert!(s.events.last().unwrap().activity.is_logoff());
                for e in &s.events[1..s.events.len() - 1] {
                    let id = e.activity.id();
                    assert!((INTERIOR_BASE..INTERIOR_BASE + INTERIOR_COUNT).contains(&id));
                }
            }
        }
    }

    #[test]
    fn benign_rhythm_starts_in_the_morning_window() {
        let cfg = SynthConfig::default();
        let output = cfg.generate().unwrap();
        for s in &output.train {
            let local = cfg.rules.local(s.start());
            let hour = chrono::Timelike::hour(&local);
            assert!(
                (7..=12).contains(&hour),
                "benign session started at local hour {hour}"
            );
        }
    }

    #[test]
    fn flattened_streams_sessionize_back_losslessly() {
        let cfg = SynthConfig::default();
        let output = cfg.generate().unwrap();
        let user_sessions: Vec<&Session> =
            output.train.iter().filter(|s| s.user == "train-0000").collect();
        assert!(!user_sessions.is_empty());
        let flat: Vec<Event> =
            user_sessions.iter().flat_map(|s| s.events.iter().copied()).collect();
        let (rebuilt, stats) = sessionize("train-0000", Label::Benign, &flat).unwrap();
        assert_eq!(stats.input_events, flat.len());
        assert_eq!(stats.emitted_events, flat.len());
        assert_eq!(stats.dropped_events, 0);
        assert_eq!(stats.ill_formed_sessions, 0);
        assert_eq!(rebuilt.len(), user_sessions.len());
        for (rebuilt, original) in rebuilt.iter().zip(&user_sessions) {
            assert_eq!(&rebuilt.events, &original.events);
            assert_eq!(rebuilt.k, original.k);
        }
    }

    #[test]
    fn iid_mixture_histogram_matches_within_3_sigma() {
        // With every transition row equal to the initial mix the interior
        // types are i.i.d., so per-type counts are Binomial(N, p).
        let mut mix = vec![0.0; INTERIOR_COUNT];
        mix[2] = 0.35; // View Internal Email
        mix[4] = 0.4;  // WWW Visit
        mix[11] = 0.2; // Open File
        mix[13] = 0.05; // Write File
        let profile = ProfileConfig {
            initial_mix: mix.clone(),
            transitions: vec![mix.clone(); INTERIOR_COUNT],
            mean_dwell_secs: vec![150.0; INTERIOR_COUNT],
            ..ProfileConfig::benign()
        };
        let cfg = SynthConfig {
            n_benign_users: 25,
            sessions_per_user: 10,
            n_test_benign_users: 0,
            n_malicious_users: 0,
            benign: profile,
            ..SynthConfig::default()
        };
        let output = cfg.generate().unwrap();

        let mut counts = [0usize; INTERIOR_COUNT];
        for s in &output.train {
            for e in &s.events[1..s.events.len() - 1] {
                counts[e.activity.id() - INTERIOR_BASE] += 1;
            }
        }
        let n: usize = counts.iter().sum();
        assert!(n >= 10_000, "only {n} interior events");
        for (i, (&count, &p)) in counts.iter().zip(&mix).enumerate() {
            if p == 0.0 {
                assert_eq!(count, 0, "structural zero type {i} was emitted");
            } else {
                let mean = n as f64 * p;
                let sigma = (n as f64 * p * (1.0 - p)).sqrt();
                assert!(
                    (count as f64 - mean).abs() <= 3.0 * sigma,
                    "type {i}: count {count}, expected {mean:.1} ± {:.1}",
                    3.0 * sigma
                );
            }
        }
    }

    #[test]
    fn one_hot_transitions_walk_the_configured_cycle() {
        // Open File -> Copy File -> WWW Upload -> Open File ...
        let cycle = [11usize, 12, 6];
        let mut transitions = vec![one_hot(0); INTERIOR_COUNT];
        transitions[11] = one_hot(12);
        transitions[12] = one_hot(6);
        transitions[6] = one_hot(11);
        let profile = ProfileConfig {
            initial_mix: one_hot(11),
            transitions,
            mean_dwell_secs: vec![60.0; INTERIOR_COUNT],
            ..ProfileConfig::benign()
        };
        let cfg = SynthConfig {
            n_benign_users: 3,
            n_test_benign_users: 0,
            n_malicious_users: 0,
            benign: profile,
            ..SynthConfig::default()
        };
        let output = cfg.generate().unwrap();
        for s in &output.train {
            let interior: Vec<usize> = s.events[1..s.events.len() - 1]
                .iter()
                .map(|e| e.activity.id() - INTERIOR_BASE)
                .collect();
            for (j, &state) in interior.iter().enumerate() {
                assert_eq!(state, cycle[j % cycle.len()]);
            }
        }
    }

    #[test]
    fn dwell_times_average_to_the_configured_mean() {
        let profile = ProfileConfig {
            initial_mix: one_hot(4),
            transitions: vec![one_hot(4); INTERIOR_COUNT],
            mean_dwell_secs: vec![150.0; INTERIOR_COUNT],
            ..ProfileConfig::benign()
        };
        let cfg = SynthConfig {
            n_benign_users: 20,
            sessions_per_user: 10,
            n_test_benign_users: 0,
            n_malicious_users: 0,
            benign: profile,
            ..SynthConfig::default()
        };
        let output = cfg.generate().unwrap();
        let mut gaps = Vec::new();
        for s in &output.train {
            for w in s.events[..s.events.len() - 1].windows(2) {
                gaps.push(w[1].time - w[0].time);
            }
        }
        // Interior gaps are Exp(mean 150); truncation at session end only
        // discards the final overshoot, which windows() already excludes...
        // except the gap into Logoff, dropped via the slice above.
        let n = gaps.len() as f64;
        let mean = gaps.iter().sum::<f64>() / n;
        let tolerance = 4.0 * 150.0 / n.sqrt();
        assert!(
            (mean - 150.0).abs() <= tolerance,
            "dwell mean {mean:.2} outside 150 ± {tolerance:.2} (n = {n})"
        );
    }

    #[test]
    fn weekly_buckets_match_direct_count() {
        let cfg = SynthConfig::default();
        let output = cfg.generate().unwrap();
        let mut all = output.train.clone();
        all.extend(output.test.clone());

        let buckets: BTreeSet<(String, i32, u32)> = all
            .iter()
            .map(|s| {
                let (year, week) = cfg.rules.iso_week(s.start());
                (s.user.clone(), year, week)
            })
            .collect();
        let weeks = weekly_sequences(&all, &cfg.rules).unwrap();
        assert_eq!(weeks.len(), buckets.len());
        assert_eq!(
            weeks.iter().map(|w| w.entries.len()).sum::<usize>(),
            all.len()
        );
        for w in &weeks {
            assert!(buckets.contains(&(w.user.clone(), w.iso_year, w.iso_week)));
        }
    }

    #[test]
    fn separated_populations_differ_in_tempo() {
        let cfg = SynthConfig::default();
        let output = cfg.generate().unwrap();
        let mean_duration = |sessions: &[&Session]| {
            sessions.iter().map(|s| s.duration()).sum::<f64>() / sessions.len() as f64
        };
        let benign: Vec<&Session> =
            output.test.iter().filter(|s| s.label == Label::Benign).collect();
        let malicious: Vec<&Session> =
            output.test.iter().filter(|s| s.label == Label::Malicious).collect();
        assert!(mean_duration(&benign) > 4.0 * mean_duration(&malicious));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut bad_row = ProfileConfig::benign();
        bad_row.transitions[3][0] += 0.5;
        assert!(bad_row.validate("p").is_err());

        let mut bad_dwell = ProfileConfig::benign();
        bad_dwell.mean_dwell_secs[0] = 0.0;
        assert!(bad_dwell.validate("p").is_err());

        let mut bad_mix = ProfileConfig::benign();
        bad_mix.initial_mix = vec![0.5; 2];
        assert!(bad_mix.validate("p").is_err());
    }

    #[test]
    fn labels_file_lists_every_test_session() {
        let cfg = SynthConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let paths = cfg.generate_to_dir(dir.path()).unwrap();
        let body = std::fs::read_to_string(&paths.labels).unwrap();
        let mut lines = body.lines();
        assert_eq!(lines.next(), Some("user,k,label"));
        let expected = cfg.n_test_benign_users * cfg.test_sessions_per_user
            + cfg.n_malicious_users * cfg.malicious_sessions_per_user;
        assert_eq!(lines.clone().count(), expected);
        assert!(lines.any(|l| l.starts_with("mal-0000,") && l.ends_with(",malicious")));
    }
}
