//! Per-session scoring of a test corpus. Every session with a true
//! predecessor gets the four raw sub-scores: activity types from a free
//! decode, activity times from teacher forcing, and gap/duration from the
//! upper level walked week by week exactly as in training. Users are
//! independent, so they are scored in parallel.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::{weekly_sequences, TimeRules};
use crate::model::lower::{decode_session, encode_session, teacher_forced_durations};
use crate::model::upper::{predict_gap_and_duration, UpperState};
use crate::model::HierModel;
use crate::scoring::{
    combine, score_activity_time, score_activity_types, score_duration, score_gap, Alpha,
    FraudReport, SubScoreStats, SubScores,
};
use crate::sessions::{Label, Session};

const SECS_PER_HOUR: f64 = 3600.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub rules: TimeRules,
    /// Decode cutoff for score_a; generous relative to realistic session
    /// lengths so truncation stays rare.
    pub max_decode_len: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig { rules: TimeRules::default(), max_decode_len: 100 }
    }
}

/// Raw sub-scores of one session (time scores in hours).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoredSession {
    pub user: String,
    pub k: u32,
    pub label: Label,
    pub raw: SubScores,
}

/// Scores every session that has a predecessor in `sessions`; a user's
/// first known session is context only. Sessions shorter than 2 events are
/// skipped as scoring targets (and as decode contexts).
pub fn score_sessions(
    model: &HierModel,
    sessions: &[Session],
    cfg: &ScoreConfig,
) -> Result<Vec<ScoredSession>> {
    model.validate()?;
    let mut users: BTreeMap<&str, Vec<&Session>> = BTreeMap::new();
    let mut skipped = 0usize;
    for session in sessions {
        if session.events.len() < 2 {
            skipped += 1;
            continue;
        }
        users.entry(session.user.as_str()).or_default().push(session);
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} sessions shorter than 2 events");
    }
    let users: Vec<(&str, Vec<&Session>)> = users.into_iter().collect();
    let mut per_user: Vec<Vec<ScoredSession>> = users
        .into_par_iter()
        .map(|(_, list)| score_user(model, &list, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_user.drain(..).flatten().collect())
}

fn score_user(
    model: &HierModel,
    sessions: &[&Session],
    cfg: &ScoreConfig,
) -> Result<Vec<ScoredSession>> {
    let owned: Vec<Session> = sessions.iter().map(|&s| s.clone()).collect();
    let weeks = weekly_sequences(&owned, &cfg.rules)?;
    let mut scored = Vec::new();
    let mut prev: Option<&Session> = None;
    let mut prev_encoding = None;
    for week in &weeks {
        let mut state = UpperState::fresh(model);
        for (cur, gap) in &week.entries {
            let (Some(prev_session), Some(gap_secs)) = (prev, gap.preceding) else {
                prev = Some(cur);
                prev_encoding = Some(encode_session(model, cur)?);
                continue;
            };
            let prev_enc = match prev_encoding.take() {
                Some(enc) => enc,
                None => encode_session(model, prev_session)?,
            };
            let cur_enc = encode_session(model, cur)?;

            let predicted = decode_session(model, prev_session, cfg.max_decode_len)?;
            let a = score_activity_types(cur, &predicted)?;

            let forced = teacher_forced_durations(model, prev_session, cur)?;
            let mut observed = vec![0.0];
            observed.extend(cur.inter_activity_durations()?);
            let t = score_activity_time(&observed, &forced)? / SECS_PER_HOUR;

            let prediction = predict_gap_and_duration(
                model,
                &mut state,
                prev_enc.h_last(),
                cur_enc.h_first(),
            )?;
            let delta = score_gap(gap_secs, prediction.gap_secs) / SECS_PER_HOUR;
            let d = score_duration(cur.duration(), prediction.duration_secs) / SECS_PER_HOUR;

            scored.push(ScoredSession {
                user: cur.user.clone(),
                k: cur.k,
                label: cur.label,
                raw: SubScores { a, t, d, delta },
            });
            prev = Some(cur);
            prev_encoding = Some(cur_enc);
        }
    }
    Ok(scored)
}

/// Final reports: raw sub-scores standardized when `stats` is given, then
/// combined with `alpha`. The stored sub-scores are the ones fs was
/// computed from.
pub fn to_reports(
    scored: &[ScoredSession],
    stats: Option<&SubScoreStats>,
    alpha: Alpha,
) -> Result<Vec<FraudReport>> {
    alpha.validate()?;
    scored
        .iter()
        .map(|s| {
            let sub = match stats {
                Some(stats) => stats.standardize(s.raw),
                None => s.raw,
            };
            Ok(FraudReport {
                user: s.user.clone(),
                k: s.k,
                scores: sub,
                fs: combine(sub, alpha)?,
                label: s.label,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelDims, NormScales};
    use crate::scoring::RobustScale;
    use crate::sessions::tests::make_session;

    fn dims() -> ModelDims {
        ModelDims {
            type_count: crate::sessions::TYPE_COUNT,
            embed_dim: 5,
            hidden_dim: 7,
            upper_in: 4,
            upper_hidden: 6,
        }
    }

    fn scales() -> NormScales {
        NormScales { intra_secs: 60.0, gap_secs: 7200.0, duration_secs: 3600.0 }
    }

    fn zero_upper_model(seed: u64) -> HierModel {
        let mut model = HierModel::init(dims(), scales(), seed).unwrap();
        for (_, tensor) in model.upper.iter_mut() {
            tensor.data_mut().fill(0.0);
        }
        model
    }

    fn day_sessions(user: &str, count: usize) -> Vec<Session> {
        let day = 86_400.0;
        (0..count)
            .map(|k| {
                let start = k as f64 * day;
                make_session(
                    user,
                    k as u32,
                    &[(start, 0), (start + 200.0, 8), (start + 600.0, 3)],
                )
            })
            .collect()
    }

    #[test]
    fn first_session_is_context_only() {
        let model = zero_upper_model(1);
        let sessions = day_sessions("u", 3);
        let scored = score_sessions(&model, &sessions, &ScoreConfig::default()).unwrap();
        let keys: Vec<(String, u32)> =
            scored.iter().map(|s| (s.user.clone(), s.k)).collect();
        assert_eq!(keys, vec![("u".into(), 1), ("u".into(), 2)]);
    }

    #[test]
    fn zero_upper_weights_give_hand_computable_time_scores() {
        let model = zero_upper_model(2);
        let sessions = day_sessions("u", 2);
        let scored = score_sessions(&model, &sessions, &ScoreConfig::default()).unwrap();
        assert_eq!(scored.len(), 1);
        let s = &scored[0];
        let observed_gap = 86_400.0 - 600.0;
        let expected_delta = (observed_gap - 7200.0) / 3600.0;
        let expected_d = (3600.0 - 600.0) / 3600.0;
        assert!((s.raw.delta - expected_delta).abs() < 1e-6, "delta {}", s.raw.delta);
        assert!((s.raw.d - expected_d).abs() < 1e-6, "d {}", s.raw.d);
        assert!(s.raw.a >= 0.0 && s.raw.a <= 1.0);
        assert!(s.raw.t >= 0.0);
    }

    #[test]
    fn upper_state_resets_at_week_boundaries() {
        let mut model = HierModel::init(dims(), scales(), 3).unwrap();
        model.randomize(33, 0.7);
        let day = 86_400.0;
        let sessions = vec![
            make_session("u", 0, &[(0.0, 0), (60.0, 8), (600.0, 3)]),
            make_session("u", 1, &[(day, 0), (day + 90.0, 15), (day + 700.0, 3)]),
            make_session(
                "u",
                2,
                &[(8.0 * day, 0), (8.0 * day + 120.0, 4), (8.0 * day + 500.0, 3)],
            ),
        ];
        let cfg = ScoreConfig::default();
        let scored = score_sessions(&model, &sessions, &cfg).unwrap();
        assert_eq!(scored.len(), 2);

        let enc1 = encode_session(&model, &sessions[1]).unwrap();
        let enc2 = encode_session(&model, &sessions[2]).unwrap();
        let mut fresh = UpperState::fresh(&model);
        let prediction = predict_gap_and_duration(
            &model,
            &mut fresh,
            enc1.h_last(),
            enc2.h_first(),
        )
        .unwrap();
        let observed_gap = 8.0 * day - (day + 700.0);
        let expected_delta = (observed_gap - prediction.gap_secs).abs() / 3600.0;
        let expected_d =
            (sessions[2].duration() - prediction.duration_secs).abs() / 3600.0;
        assert!((scored[1].raw.delta - expected_delta).abs() < 1e-12);
        assert!((scored[1].raw.d - expected_d).abs() < 1e-12);
    }

    #[test]
    fn scoring_is_deterministic_and_parallel_order_stable() {
        let mut model = HierModel::init(dims(), scales(), 4).unwrap();
        model.randomize(44, 0.5);
        let mut sessions = Vec::new();
        for user in ["carol", "alice", "bob"] {
            sessions.extend(day_sessions(user, 3));
        }
        let cfg = ScoreConfig::default();
        let a = score_sessions(&model, &sessions, &cfg).unwrap();
        let b = score_sessions(&model, &sessions, &cfg).unwrap();
        assert_eq!(a, b);
        let users: Vec<&str> = a.iter().map(|s| s.user.as_str()).collect();
        assert_eq!(users, vec!["alice", "alice", "bob", "bob", "carol", "carol"]);
    }

    #[test]
    fn short_sessions_are_skipped_everywhere() {
        let model = zero_upper_model(5);
        let mut sessions = day_sessions("u", 3);
        sessions.push(Session {
            ill_formed: true,
            ..make_session("u", 3, &[(4.0 * 86_400.0, 0)])
        });
        let scored = score_sessions(&model, &sessions, &ScoreConfig::default()).unwrap();
        assert_eq!(scored.len(), 2);
        assert!(scored.iter().all(|s| s.k != 3));
    }

    #[test]
    fn reports_wire_standardization_and_exact_weighted_sum() {
        let scored = vec![
            ScoredSession {
                user: "u".into(),
                k: 1,
                label: Label::Benign,
                raw: SubScores { a: 0.5, t: 3.0, d: 5.0, delta: 7.0 },
            },
        ];
        let stats = SubScoreStats {
            t: RobustScale { median: 1.0, iqr: 2.0 },
            d: RobustScale { median: 1.0, iqr: 4.0 },
            delta: RobustScale { median: 9.0, iqr: 1.0 },
        };
        let alpha = Alpha::default();

        let raw_reports = to_reports(&scored, None, alpha).unwrap();
        assert_eq!(raw_reports[0].scores, scored[0].raw);
        assert_eq!(raw_reports[0].fs, 0.5 + 5.0 + 7.0);

        let std_reports = to_reports(&scored, Some(&stats), alpha).unwrap();
        assert_eq!(std_reports[0].scores.t, 1.0);
        assert_eq!(std_reports[0].scores.d, 1.0);
        assert_eq!(std_reports[0].scores.delta, 0.0);
        assert_eq!(std_reports[0].fs, 0.5 + 1.0 + 0.0);

        assert!(to_reports(&scored, None, Alpha { d: -2.0, ..alpha }).is_err());
    }
}
