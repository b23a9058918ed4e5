//! ROC/AUC and the end-to-end experiment harness: generate or load a
//! dataset, train on the benign split, score the test split, and write a
//! plot-ready report directory.
//!
//! AUC uses the Mann–Whitney formulation, P(score_pos > score_neg) +
//! ½·P(tie), computed from midranks with exact half-integer arithmetic so
//! it equals brute-force pair counting bit for bit.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::synth::SynthConfig;
use crate::model::score::{score_sessions, to_reports, ScoreConfig, ScoredSession};
use crate::model::train::{train, CurvePoint, TrainConfig};
use crate::scoring::{Alpha, FraudReport, SubScoreStats, SubScores};
use crate::sessions::{read_sessions_jsonl, Label, Session};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocCurve {
    /// Decision thresholds, descending; the leading point is the empty
    /// prediction at +∞.
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
}

/// ROC curve and AUC for scores against binary labels (true = positive).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "scores and labels must align: {} vs {}",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("cannot rank a NaN score ({bad})")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Validation(format!(
            "ROC needs both classes, got {positives} positive and {negatives} negative"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));

    let mut thresholds = vec![f64::INFINITY];
    let mut tpr = vec![0.0];
    let mut fpr = vec![0.0];
    let mut tp = 0usize;
    let mut fp = 0usize;
    // Midranks over descending order: a tie group occupying positions
    // i+1..=i+g (1-based) has midrank (2i + g + 1)/2. Ranks from the
    // ascending side are (n+1) minus these, accounted for below.
    let mut desc_rank_sum_pos = 0.0;
    let mut at = 0usize;
    while at < order.len() {
        let score = scores[order[at]];
        let mut group_end = at;
        while group_end < order.len() && scores[order[group_end]] == score {
            group_end += 1;
        }
        let group = &order[at..group_end];
        let group_pos = group.iter().filter(|&&i| labels[i]).count();
        let midrank = (2 * at + (group_end - at) + 1) as f64 / 2.0;
        desc_rank_sum_pos += midrank * group_pos as f64;
        tp += group_pos;
        fp += group.len() - group_pos;
        thresholds.push(score);
        tpr.push(tp as f64 / positives as f64);
        fpr.push(fp as f64 / negatives as f64);
        at = group_end;
    }

    let n = scores.len() as f64;
    let p = positives as f64;
    let asc_rank_sum_pos = p * (n + 1.0) - desc_rank_sum_pos;
    let auc = (asc_rank_sum_pos - p * (p + 1.0) / 2.0) / (p * negatives as f64);
    Ok(RocCurve { thresholds, tpr, fpr, auc })
}

/// Where the experiment's sessions come from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic { synth: SynthConfig },
    Files { train: PathBuf, test: PathBuf },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub score: ScoreConfig,
    #[serde(default)]
    pub alpha: Alpha,
    /// Combine raw sub-scores instead of standardizing them against the
    /// benign training distribution.
    #[serde(default)]
    pub raw_scores: bool,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    /// (score name, AUC) in report order: score_a, score_t, score_d,
    /// score_delta, fs.
    pub aucs: Vec<(String, f64)>,
    pub reports: Vec<FraudReport>,
    pub curve: Vec<CurvePoint>,
    pub out_dir: PathBuf,
}

/// Label counts over sessions that will actually receive scores: at least
/// 2 events and not the user's first such session.
struct ScorableCounts {
    benign: usize,
    malicious: usize,
    unknown: usize,
}

fn scorable_label_counts(sessions: &[Session]) -> ScorableCounts {
    let mut per_user: BTreeMap<&str, Vec<&Session>> = BTreeMap::new();
    for session in sessions {
        if session.events.len() >= 2 {
            per_user.entry(session.user.as_str()).or_default().push(session);
        }
    }
    let mut counts = ScorableCounts { benign: 0, malicious: 0, unknown: 0 };
    for list in per_user.values_mut() {
        list.sort_by(|a, b| a.start().total_cmp(&b.start()));
        for session in list.iter().skip(1) {
            match session.label {
                Label::Benign => counts.benign += 1,
                Label::Malicious => counts.malicious += 1,
                Label::Unknown => counts.unknown += 1,
            }
        }
    }
    counts
}

fn load_sessions(source: &DataSource) -> Result<(Vec<Session>, Vec<Session>)> {
    match source {
        DataSource::Synthetic { synth } => {
            let output = synth.generate()?;
            Ok((output.train, output.test))
        }
        DataSource::Files { train, test } => {
            Ok((read_sessions_jsonl(train)?, read_sessions_jsonl(test)?))
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn roc_csv(curve: &RocCurve) -> String {
    let mut text = String::from("fpr,tpr\n");
    for (fpr, tpr) in curve.fpr.iter().zip(&curve.tpr) {
        text.push_str(&format!("{fpr},{tpr}\n"));
    }
    text
}

fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut text = String::from("stage,epoch,train_nll,holdout_nll\n");
    for point in curve {
        text.push_str(&format!(
            "{},{},{},{}\n",
            point.stage,
            point.epoch,
            point.train_nll,
            fmt_opt(point.holdout_nll)
        ));
    }
    text
}

fn reports_csv(reports: &[FraudReport]) -> String {
    let mut text = String::from("user,k,score_a,score_t,score_d,score_delta,fs,label\n");
    for r in reports {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.user, r.k, r.scores.a, r.scores.t, r.scores.d, r.scores.delta, r.fs, r.label
        ));
    }
    text
}

/// Writes every staged file, removing all of them again if any write
/// fails, so a failed run leaves no half-written report directory.
fn write_all_or_clean(out_dir: &Path, files: &[(String, String)]) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut written: Vec<PathBuf> = Vec::new();
    for (name, contents) in files {
        let path = out_dir.join(name);
        let attempt = std::fs::File::create(&path)
            .and_then(|mut f| f.write_all(contents.as_bytes()));
        match attempt {
            Ok(()) => written.push(path),
            Err(e) => {
                for path in written {
                    let _ = std::fs::remove_file(path);
                }
                return Err(e.into());
            }
        }
    }
    Ok(())
}

/// Runs the full pipeline and writes config.json, aucs.csv,
/// roc_<scorename>.csv per score, fraud_reports.csv, and
/// training_curve.csv into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    cfg.train.validate()?;
    cfg.alpha.validate()?;
    let (train_sessions, test_sessions) = load_sessions(&cfg.source)?;

    let scorable = scorable_label_counts(&test_sessions);
    if scorable.malicious == 0 || scorable.benign == 0 {
        return Err(Error::Validation(format!(
            "test split must contain scorable sessions of both labels \
             (got {} benign, {} malicious)",
            scorable.benign, scorable.malicious
        )));
    }
    if scorable.unknown > 0 {
        return Err(Error::Validation(format!(
            "{} scorable test sessions have no ground-truth label",
            scorable.unknown
        )));
    }

    let trained = train(&train_sessions, &cfg.train)?;

    let stats: Option<SubScoreStats> = if cfg.raw_scores {
        None
    } else {
        let benign_scores = score_sessions(&trained.model, &train_sessions, &cfg.score)?;
        let raw: Vec<SubScores> = benign_scores.iter().map(|s| s.raw).collect();
        Some(SubScoreStats::fit(&raw)?)
    };

    let scored: Vec<ScoredSession> =
        score_sessions(&trained.model, &test_sessions, &cfg.score)?;
    let reports = to_reports(&scored, stats.as_ref(), cfg.alpha)?;

    let labels: Vec<bool> = reports.iter().map(|r| r.label == Label::Malicious).collect();
    let picks: [(&str, fn(&FraudReport) -> f64); 5] = [
        ("score_a", |r| r.scores.a),
        ("score_t", |r| r.scores.t),
        ("score_d", |r| r.scores.d),
        ("score_delta", |r| r.scores.delta),
        ("fs", |r| r.fs),
    ];
    let mut aucs = Vec::new();
    let mut files: Vec<(String, String)> = Vec::new();
    files.push(("config.json".into(), serde_json::to_string_pretty(cfg)? + "\n"));
    for (name, pick) in picks {
        let values: Vec<f64> = reports.iter().map(pick).collect();
        let curve = roc_auc(&values, &labels)?;
        files.push((format!("roc_{name}.csv"), roc_csv(&curve)));
        aucs.push((name.to_string(), curve.auc));
    }
    let mut auc_csv = String::from("score,auc\n");
    for (name, auc) in &aucs {
        auc_csv.push_str(&format!("{name},{auc}\n"));
    }
    files.push(("aucs.csv".into(), auc_csv));
    files.push(("fraud_reports.csv".into(), reports_csv(&reports)));
    files.push(("training_curve.csv".into(), curve_csv(&trained.curve)));
    write_all_or_clean(out_dir, &files)?;

    Ok(ExperimentOutcome {
        aucs,
        reports,
        curve: trained.curve,
        out_dir: out_dir.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use crate::model::train::StageConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair_counting_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0u64;
        let mut ties = 0u64;
        let mut pairs = 0u64;
        for (i, &si) in scores.iter().enumerate() {
            if !labels[i] {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] {
                    continue;
                }
                pairs += 1;
                if si > sj {
                    wins += 1;
                } else if si == sj {
                    ties += 1;
                }
            }
        }
        (wins as f64 + 0.5 * ties as f64) / pairs as f64
    }

    #[test]
    fn perfect_separation_gives_auc_one() {
        let curve = roc_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap();
        assert_eq!(curve.auc, 1.0);
        assert_eq!(curve.thresholds, vec![f64::INFINITY, 0.9, 0.8, 0.1]);
        assert_eq!(curve.tpr, vec![0.0, 0.5, 1.0, 1.0]);
        assert_eq!(curve.fpr, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn all_ties_give_auc_half() {
        let curve = roc_auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(curve.auc, 0.5);
        assert_eq!(curve.tpr, vec![0.0, 1.0]);
        assert_eq!(curve.fpr, vec![0.0, 1.0]);
    }

    #[test]
    fn matches_pair_counting_exactly_with_heavy_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for round in 0..5 {
            let n = 200;
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.gen_range(0..20) as f64) / 7.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
                continue;
            }
            let curve = roc_auc(&scores, &labels).unwrap();
            assert_eq!(
                curve.auc,
                pair_counting_auc(&scores, &labels),
                "round {round}"
            );
        }
    }

    #[test]
    fn trapezoid_area_matches_auc_for_tie_free_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..150).map(|i| i as f64 + rng.gen_range(0.0..0.5)).collect();
        let labels: Vec<bool> = (0..150).map(|_| rng.gen_bool(0.4)).collect();
        let curve = roc_auc(&scores, &labels).unwrap();
        let mut area = 0.0;
        for i in 1..curve.fpr.len() {
            area += (curve.fpr[i] - curve.fpr[i - 1]) * (curve.tpr[i] + curve.tpr[i - 1]) / 2.0;
        }
        assert!((area - curve.auc).abs() < 1e-12, "{area} vs {}", curve.auc);
    }

    #[test]
    fn swapping_labels_flips_the_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scores: Vec<f64> = (0..80).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<bool> = (0..80).map(|_| rng.gen_bool(0.5)).collect();
        let flipped: Vec<bool> = labels.iter().map(|&l| !l).collect();
        let auc = roc_auc(&scores, &labels).unwrap().auc;
        let auc_flipped = roc_auc(&scores, &flipped).unwrap().auc;
        assert!((auc + auc_flipped - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_is_invariant_under_strictly_increasing_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let scores: Vec<f64> = (0..60).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let labels: Vec<bool> = (0..60).map(|_| rng.gen_bool(0.5)).collect();
        let transformed: Vec<f64> = scores.iter().map(|&s| (s / 2.0).exp()).collect();
        let a = roc_auc(&scores, &labels).unwrap().auc;
        let b = roc_auc(&transformed, &labels).unwrap().auc;
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[false, false]),
            Err(Error::Validation(_))
        ));
        assert!(roc_auc(&[0.1], &[true, false]).is_err());
        assert!(roc_auc(&[f64::NAN, 0.2], &[true, false]).is_err());
    }

    fn smoke_config(out_seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            source: DataSource::Synthetic {
                synth: SynthConfig {
                    seed: out_seed,
                    n_benign_users: 6,
                    sessions_per_user: 4,
                    n_test_benign_users: 3,
                    test_sessions_per_user: 4,
                    n_malicious_users: 2,
                    malicious_sessions_per_user: 4,
                    ..SynthConfig::default()
                },
            },
            train: TrainConfig {
                seed: 13,
                dims: ModelDims {
                    type_count: crate::sessions::TYPE_COUNT,
                    embed_dim: 5,
                    hidden_dim: 6,
                    upper_in: 4,
                    upper_hidden: 5,
                },
                stage1: StageConfig { epochs: 2, learning_rate: 2e-3 },
                stage2: StageConfig { epochs: 2, learning_rate: 2e-3 },
                holdout_frac: 0.15,
                ..TrainConfig::default()
            },
            score: ScoreConfig::default(),
            alpha: Alpha::default(),
            raw_scores: false,
        }
    }

    #[test]
    fn zero_malicious_test_split_fails_before_training() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("report");
        let mut cfg = smoke_config(19);
        if let DataSource::Synthetic { synth } = &mut cfg.source {
            synth.n_malicious_users = 0;
        }
        let err = run_experiment(&cfg, &out).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        assert!(!out.exists());
    }

    #[test]
    fn experiment_writes_the_full_report_directory_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_config(29);

        let out_a = dir.path().join("a");
        let outcome = run_experiment(&cfg, &out_a).unwrap();
        let names: Vec<&str> = outcome.aucs.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["score_a", "score_t", "score_d", "score_delta", "fs"]);
        assert!(outcome.aucs.iter().all(|(_, a)| (0.0..=1.0).contains(a)));
        assert!(!outcome.reports.is_empty());
        for file in [
            "config.json",
            "aucs.csv",
            "roc_score_a.csv",
            "roc_score_t.csv",
            "roc_score_d.csv",
            "roc_score_delta.csv",
            "roc_fs.csv",
            "fraud_reports.csv",
            "training_curve.csv",
        ] {
            assert!(out_a.join(file).exists(), "missing {file}");
        }
        let roc = std::fs::read_to_string(out_a.join("roc_fs.csv")).unwrap();
        assert!(roc.starts_with("fpr,tpr\n0,0\n"));

        let out_b = dir.path().join("b");
        run_experiment(&cfg, &out_b).unwrap();
        for file in ["aucs.csv", "fraud_reports.csv", "training_curve.csv"] {
            assert_eq!(
                std::fs::read(out_a.join(file)).unwrap(),
                std::fs::read(out_b.join(file)).unwrap(),
                "{file} differs between identical runs"
            );
        }
    }
}
