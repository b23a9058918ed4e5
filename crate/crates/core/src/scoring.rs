//! Per-session fraudulence sub-scores and their weighted combination into
//! one ranking score. The activity-type score is a BLEU complement, the
//! three time scores are absolute errors in hours; before combining, the
//! time scores are standardized against their benign-training distribution
//! (median/IQR) so fixed unit weights act on comparable scales.

use std::collections::HashMap;
use std::hash::Hash;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PredictedSession;
use crate::sessions::{Label, Session};

/// Sentence-level BLEU with clipped n-gram precisions for
/// n = 1..min(max_n, |hypothesis|), add-one smoothing on any zero-count
/// precision, and brevity penalty min(1, e^(1 − |ref|/|hyp|)).
pub fn bleu<T: Eq + Hash>(reference: &[T], hypothesis: &[T], max_n: usize) -> Result<f64> {
    if reference.is_empty() || hypothesis.is_empty() {
        return Err(Error::Contract(format!(
            "bleu needs non-empty sequences, got reference {} and hypothesis {}",
            reference.len(),
            hypothesis.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::Contract("bleu needs max_n of at least 1".into()));
    }
    let orders = max_n.min(hypothesis.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let mut ref_counts: HashMap<&[T], usize> = HashMap::new();
        for gram in reference.windows(n) {
            *ref_counts.entry(gram).or_default() += 1;
        }
        let mut hyp_counts: HashMap<&[T], usize> = HashMap::new();
        for gram in hypothesis.windows(n) {
            *hyp_counts.entry(gram).or_default() += 1;
        }
        let total: usize = hypothesis.len() - n + 1;
        let matched: usize = hyp_counts
            .iter()
            .map(|(gram, count)| (*count).min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = if matched == 0 {
            1.0 / (total + 1) as f64
        } else {
            matched as f64 / total as f64
        };
        log_sum += precision.ln();
    }
    let brevity =
        (1.0 - reference.len() as f64 / hypothesis.len() as f64).exp().min(1.0);
    Ok(brevity * (log_sum / orders as f64).exp())
}

/// score_a = 1 − BLEU of the predicted against the observed activity
/// types, up to 4-grams.
pub fn score_activity_types(observed: &Session, predicted: &PredictedSession) -> Result<f64> {
    let reference: Vec<_> = observed.events.iter().map(|e| e.activity).collect();
    Ok(1.0 - bleu(&reference, &predicted.types, 4)?)
}

/// score_t: mean absolute error between observed and teacher-forced
/// predicted inter-activity durations (index-aligned).
pub fn score_activity_time(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() {
        return Err(Error::Contract(format!(
            "duration vectors must align: observed {} vs predicted {}",
            observed.len(),
            predicted.len()
        )));
    }
    if observed.is_empty() {
        return Err(Error::Contract("duration vectors are empty".into()));
    }
    let total: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (o - p).abs())
        .sum();
    Ok(total / observed.len() as f64)
}

/// score_Δ: absolute error of the predicted inter-session gap.
pub fn score_gap(observed: f64, predicted: f64) -> f64 {
    (observed - predicted).abs()
}

/// score_d: absolute error of the predicted session duration.
pub fn score_duration(observed: f64, predicted: f64) -> f64 {
    (observed - predicted).abs()
}

/// Weights of Eq.-23-style combination, defaulting to the published
/// (1, 0, 1, 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Alpha {
    pub a: f64,
    pub t: f64,
    pub d: f64,
    pub delta: f64,
}

impl Default for Alpha {
    fn default() -> Self {
        Alpha { a: 1.0, t: 0.0, d: 1.0, delta: 1.0 }
    }
}

impl Alpha {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("a", self.a), ("t", self.t), ("d", self.d), ("delta", self.delta)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Validation(format!(
                    "alpha weight {name} must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// The four sub-scores of one session, in the raw units produced by the
/// scorers (score_a unitless in [0, 1], the rest in hours) or in
/// standardized units after [`SubScoreStats::standardize`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubScores {
    pub a: f64,
    pub t: f64,
    pub d: f64,
    pub delta: f64,
}

/// Robust location/scale of one sub-score over the benign training set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustScale {
    pub median: f64,
    pub iqr: f64,
}

/// Divisor floor: a degenerate benign score distribution (IQR 0) must not
/// turn standardization into division by zero.
const IQR_FLOOR: f64 = 1e-9;

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl RobustScale {
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Contract("cannot fit a scale to zero samples".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite score sample {bad}")));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(RobustScale {
            median: quantile(&sorted, 0.5),
            iqr: quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
        })
    }

    /// Centered, scaled, and clamped at zero: deviations below the benign
    /// median carry no fraudulence signal.
    pub fn apply(&self, x: f64) -> f64 {
        ((x - self.median) / self.iqr.max(IQR_FLOOR)).max(0.0)
    }
}

/// Standardization parameters for the three time sub-scores, fit on the
/// benign training set. score_a is already unit-scaled and passes through.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubScoreStats {
    pub t: RobustScale,
    pub d: RobustScale,
    pub delta: RobustScale,
}

impl SubScoreStats {
    pub fn fit(scores: &[SubScores]) -> Result<Self> {
        let collect = |pick: fn(&SubScores) -> f64| -> Vec<f64> {
            scores.iter().map(pick).collect()
        };
        Ok(SubScoreStats {
            t: RobustScale::fit(&collect(|s| s.t))?,
            d: RobustScale::fit(&collect(|s| s.d))?,
            delta: RobustScale::fit(&collect(|s| s.delta))?,
        })
    }

    pub fn standardize(&self, raw: SubScores) -> SubScores {
        SubScores {
            a: raw.a,
            t: self.t.apply(raw.t),
            d: self.d.apply(raw.d),
            delta: self.delta.apply(raw.delta),
        }
    }
}

/// fs = α_a·a + α_t·t + α_d·d + α_Δ·Δ over whatever units `sub` is in.
pub fn combine(sub: SubScores, alpha: Alpha) -> Result<f64> {
    alpha.validate()?;
    Ok(alpha.a * sub.a + alpha.t * sub.t + alpha.d * sub.d + alpha.delta * sub.delta)
}

/// One scored session as written to the report CSV. `scores` holds the
/// values fs was computed from (standardized unless raw mode was chosen).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FraudReport {
    pub user: String,
    pub k: u32,
    pub scores: SubScores,
    pub fs: f64,
    pub label: Label,
}

pub fn write_fraud_reports_csv(path: &Path, reports: &[FraudReport]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "user,k,score_a,score_t,score_d,score_delta,fs,label")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.user, r.k, r.scores.a, r.scores.t, r.scores.d, r.scores.delta, r.fs, r.label
        )?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StopReason;
    use crate::sessions::tests::make_session;
    use crate::sessions::ActivityType;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bleu_of_identical_sequences_is_one() {
        let seq = [1usize, 5, 9, 2, 2, 7];
        assert!((bleu(&seq, &seq, 4).unwrap() - 1.0).abs() < 1e-15);
        let two = [3usize, 4];
        assert!((bleu(&two, &two, 4).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bleu_matches_hand_counted_example() {
        let reference = ['a', 'b', 'c', 'd'];
        let hypothesis = ['a', 'b', 'c'];
        let got = bleu(&reference, &hypothesis, 2).unwrap();
        let expected = (1.0f64 - 4.0 / 3.0).exp();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.7165).abs() < 1e-4);
    }

    #[test]
    fn bleu_of_disjoint_sequences_is_the_smoothed_floor() {
        let reference: Vec<usize> = (0..10).collect();
        let hypothesis: Vec<usize> = (100..110).collect();
        let got = bleu(&reference, &hypothesis, 4).unwrap();
        let expected =
            (1.0 / 11.0 * 1.0 / 10.0 * 1.0 / 9.0 * 1.0 / 8.0f64).powf(0.25);
        assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");
        assert!(got < 0.15);
    }

    #[test]
    fn bleu_smooths_only_zero_count_orders() {
        let reference = ['a', 'b'];
        let hypothesis = ['a', 'c'];
        let got = bleu(&reference, &hypothesis, 2).unwrap();
        assert!((got - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bleu_rejects_empty_input_and_zero_orders() {
        let seq = [1usize, 2];
        let empty: [usize; 0] = [];
        assert!(bleu(&empty, &seq, 4).is_err());
        assert!(bleu(&seq, &empty, 4).is_err());
        assert!(bleu(&seq, &seq, 0).is_err());
    }

    #[test]
    fn bleu_brevity_penalty_never_rewards_long_hypotheses() {
        let reference = ['a', 'b', 'c'];
        let hypothesis = ['a', 'b', 'c', 'c', 'b'];
        let got = bleu(&reference, &hypothesis, 1).unwrap();
        assert!((got - 3.0 / 5.0).abs() < 1e-12);
    }

    fn predicted(types: &[usize]) -> PredictedSession {
        PredictedSession {
            types: types.iter().map(|&t| ActivityType::new(t).unwrap()).collect(),
            durations_secs: vec![0.0; types.len()],
            stop_reason: StopReason::EndToken,
        }
    }

    #[test]
    fn activity_score_is_zero_for_exact_prediction_and_bounded() {
        let observed = make_session("u", 0, &[(0.0, 0), (10.0, 8), (20.0, 3)]);
        let exact = predicted(&[0, 8, 3]);
        assert!(score_activity_types(&observed, &exact).unwrap().abs() < 1e-15);

        let disjoint = predicted(&[5, 6, 7]);
        let score = score_activity_types(&observed, &disjoint).unwrap();
        assert!(score > 0.5 && score <= 1.0);
    }

    #[test]
    fn corrupting_more_tokens_never_lowers_the_mean_activity_score() {
        let observed = make_session(
            "u",
            0,
            &[
                (0.0, 0),
                (10.0, 8),
                (20.0, 8),
                (30.0, 15),
                (40.0, 16),
                (50.0, 8),
                (60.0, 4),
                (70.0, 5),
                (80.0, 15),
                (90.0, 17),
                (100.0, 8),
                (110.0, 3),
            ],
        );
        let base: Vec<usize> = observed.events.iter().map(|e| e.activity.id()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut means = Vec::new();
        for corruptions in 0..=6 {
            let mut total = 0.0;
            for _ in 0..100 {
                let mut types = base.clone();
                let mut positions: Vec<usize> = (0..types.len()).collect();
                positions.shuffle(&mut rng);
                for &pos in positions.iter().take(corruptions) {
                    let mut replacement = rng.gen_range(4..=18);
                    while replacement == types[pos] {
                        replacement = rng.gen_range(4..=18);
                    }
                    types[pos] = replacement;
                }
                total += score_activity_types(&observed, &predicted(&types)).unwrap();
            }
            means.push(total / 100.0);
        }
        for pair in means.windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-9,
                "corruption means decreased: {means:?}"
            );
        }
    }

    #[test]
    fn time_score_matches_hand_example_and_scales() {
        assert!((score_activity_time(&[1.0, 5.0], &[2.0, 3.0]).unwrap() - 1.5).abs() < 1e-15);
        assert!(score_activity_time(&[1.0], &[1.0, 2.0]).is_err());
        assert!(score_activity_time(&[], &[]).is_err());

        let observed = [0.5, 2.0, 4.5];
        let predicted = [1.0, 1.0, 6.0];
        let c = 3.7;
        let scaled_obs: Vec<f64> = observed.iter().map(|x| c * x).collect();
        let scaled_pred: Vec<f64> = predicted.iter().map(|x| c * x).collect();
        let base = score_activity_time(&observed, &predicted).unwrap();
        let scaled = score_activity_time(&scaled_obs, &scaled_pred).unwrap();
        assert!((scaled - c * base).abs() < 1e-12);
    }

    #[test]
    fn gap_and_duration_scores_are_symmetric_absolute_errors() {
        assert_eq!(score_gap(100.0, 40.0), 60.0);
        assert_eq!(score_gap(40.0, 100.0), 60.0);
        assert_eq!(score_duration(7.0, 7.0), 0.0);
        assert_eq!(score_duration(2.5, 4.0), score_duration(4.0, 2.5));
    }

    #[test]
    fn robust_scale_centers_clamps_and_survives_degenerate_samples() {
        let scale = RobustScale::fit(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(scale.median, 3.0);
        assert_eq!(scale.iqr, 2.0);
        assert_eq!(scale.apply(5.0), 1.0);
        assert_eq!(scale.apply(3.0), 0.0);
        assert_eq!(scale.apply(1.0), 0.0);

        let flat = RobustScale::fit(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(flat.apply(2.0), 0.0);
        assert!(flat.apply(3.0).is_finite());
        assert!(flat.apply(3.0) > 0.0);

        assert!(RobustScale::fit(&[]).is_err());
        assert!(RobustScale::fit(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn standardization_passes_activity_score_through() {
        let benign = [
            SubScores { a: 0.1, t: 1.0, d: 2.0, delta: 3.0 },
            SubScores { a: 0.2, t: 2.0, d: 3.0, delta: 4.0 },
            SubScores { a: 0.3, t: 3.0, d: 4.0, delta: 5.0 },
        ];
        let stats = SubScoreStats::fit(&benign).unwrap();
        let raw = SubScores { a: 0.9, t: 3.0, d: 4.0, delta: 2.0 };
        let std = stats.standardize(raw);
        assert_eq!(std.a, raw.a);
        assert_eq!(std.t, 1.0);
        assert_eq!(std.d, 1.0);
        assert_eq!(std.delta, 0.0);
    }

    #[test]
    fn combine_is_the_exact_weighted_sum() {
        let sub = SubScores { a: 0.25, t: 1.5, d: 2.0, delta: 0.5 };
        let fs = combine(sub, Alpha::default()).unwrap();
        assert_eq!(fs, 0.25 + 2.0 + 0.5);

        assert_eq!(combine(SubScores { a: 0.0, t: 0.0, d: 0.0, delta: 0.0 }, Alpha::default())
            .unwrap(), 0.0);
        assert!(combine(sub, Alpha { a: -1.0, ..Alpha::default() }).is_err());
        assert!(combine(sub, Alpha { t: f64::NAN, ..Alpha::default() }).is_err());
    }

    #[test]
    fn fs_ranking_follows_score_a_when_other_weights_vanish() {
        let alpha = Alpha { a: 1.0, t: 0.0, d: 0.0, delta: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let subs: Vec<SubScores> = (0..50)
            .map(|_| SubScores {
                a: rng.gen_range(0.0..1.0),
                t: rng.gen_range(0.0..10.0),
                d: rng.gen_range(0.0..10.0),
                delta: rng.gen_range(0.0..10.0),
            })
            .collect();
        let mut by_fs: Vec<usize> = (0..subs.len()).collect();
        by_fs.sort_by(|&i, &j| {
            combine(subs[i], alpha).unwrap().total_cmp(&combine(subs[j], alpha).unwrap())
        });
        let mut by_a: Vec<usize> = (0..subs.len()).collect();
        by_a.sort_by(|&i, &j| subs[i].a.total_cmp(&subs[j].a));
        assert_eq!(by_fs, by_a);
    }

    #[test]
    fn fs_ranking_is_invariant_to_scaling_all_weights() {
        let alpha = Alpha::default();
        let scaled = Alpha { a: 3.0, t: 0.0, d: 3.0, delta: 3.0 };
        let subs = [
            SubScores { a: 0.5, t: 1.0, d: 0.1, delta: 2.0 },
            SubScores { a: 0.1, t: 5.0, d: 3.0, delta: 0.0 },
            SubScores { a: 0.9, t: 0.0, d: 1.0, delta: 1.0 },
        ];
        for pair in subs.windows(2) {
            let base = combine(pair[0], alpha).unwrap() < combine(pair[1], alpha).unwrap();
            let scal = combine(pair[0], scaled).unwrap() < combine(pair[1], scaled).unwrap();
            assert_eq!(base, scal);
        }
    }

    #[test]
    fn fraud_report_csv_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fraud_reports.csv");
        let reports = vec![
            FraudReport {
                user: "alice".into(),
                k: 3,
                scores: SubScores { a: 0.25, t: 1.5, d: 0.0, delta: 2.0 },
                fs: 2.25,
                label: Label::Benign,
            },
            FraudReport {
                user: "mallory".into(),
                k: 1,
                scores: SubScores { a: 0.75, t: 4.0, d: 1.0, delta: 0.5 },
                fs: 2.25,
                label: Label::Malicious,
            },
        ];
        write_fraud_reports_csv(&path, &reports).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "user,k,score_a,score_t,score_d,score_delta,fs,label\n\
             alice,3,0.25,1.5,0,2,2.25,benign\n\
             mallory,1,0.75,4,1,0.5,2.25,malicious\n"
        );
    }
}
