//! Two-stage trainer. Stage 1 fits the intra-session level on
//! consecutive-session pairs, one Adam step per user-week batch. Stage 2
//! encodes every involved session once with the trained (now frozen) lower
//! level and fits the upper level on weekly gap/duration sequences. Both
//! stages hold out a fraction of batches for early stopping and restore the
//! best parameters seen.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{weekly_sequences, TimeRules};
use crate::model::lower::{pairs_loss, session_nll};
use crate::model::upper::{week_inputs, weeks_loss, weeks_nll, WeekInputs};
use crate::model::{HierModel, ModelDims, NormScales};
use crate::neural::{Adam, AdamConfig, GradMap, ParamSet};
use crate::sessions::{Label, Session};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig { epochs: 30, learning_rate: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub dims: ModelDims,
    pub rules: TimeRules,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    /// Fraction of batches held out for early stopping; 0 disables it.
    pub holdout_frac: f64,
    /// Epochs without holdout improvement tolerated before stopping.
    pub patience: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            dims: ModelDims::default(),
            rules: TimeRules::default(),
            stage1: StageConfig::default(),
            stage2: StageConfig::default(),
            holdout_frac: 0.1,
            patience: 3,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.rules.validate()?;
        for (name, stage) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            if stage.epochs == 0 {
                return Err(Error::Validation(format!("{name}.epochs must be at least 1")));
            }
            if !(stage.learning_rate > 0.0) || !stage.learning_rate.is_finite() {
                return Err(Error::Validation(format!(
                    "{name}.learning_rate must be positive and finite, got {}",
                    stage.learning_rate
                )));
            }
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return Err(Error::Validation(format!(
                "holdout_frac must lie in [0, 1), got {}",
                self.holdout_frac
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Validation(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }

    fn adam(&self, stage: &StageConfig) -> AdamConfig {
        AdamConfig {
            learning_rate: stage.learning_rate,
            clip_norm: Some(self.clip_norm),
            ..AdamConfig::default()
        }
    }
}

/// One row of the training curve; `holdout_nll` is absent when no batches
/// were held out. Both losses are means per likelihood term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub stage: u8,
    pub epoch: usize,
    pub train_nll: f64,
    pub holdout_nll: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: HierModel,
    pub curve: Vec<CurvePoint>,
    /// Snapshot of the lower parameters the moment stage 1 finished; stage
    /// 2 must leave them untouched, so `model.lower` stays bit-identical.
    pub stage1_lower: ParamSet,
}

struct PairBatch<'a> {
    user: &'a str,
    iso_year: i32,
    iso_week: u32,
    pairs: Vec<(&'a Session, &'a Session)>,
    events: usize,
}

impl PairBatch<'_> {
    fn describe(&self) -> String {
        format!("{} {}-W{:02}", self.user, self.iso_year, self.iso_week)
    }
}

fn scale_grads(grads: &mut GradMap, factor: f64) {
    for grad in grads.values_mut() {
        for g in grad.iter_mut() {
            *g *= factor;
        }
    }
}

fn with_context(err: Error, stage: u8, epoch: usize, batch: &str) -> Error {
    match err {
        Error::Numeric(msg) => {
            Error::Numeric(format!("stage {stage} epoch {epoch} batch {batch}: {msg}"))
        }
        other => other,
    }
}

fn pair_batches<'a>(corpus: &'a [Session], rules: &TimeRules) -> Vec<PairBatch<'a>> {
    let mut users: BTreeMap<&str, Vec<&Session>> = BTreeMap::new();
    for session in corpus {
        users.entry(session.user.as_str()).or_default().push(session);
    }
    let mut batches: Vec<PairBatch<'a>> = Vec::new();
    let mut skipped = 0usize;
    for (user, sessions) in &mut users {
        sessions.sort_by(|a, b| a.start().total_cmp(&b.start()));
        for pair in sessions.windows(2) {
            let (prev, cur) = (pair[0], pair[1]);
            if prev.events.len() < 2 || cur.events.len() < 2 {
                skipped += 1;
                continue;
            }
            let (iso_year, iso_week) = rules.iso_week(cur.start());
            match batches.last_mut() {
                Some(last)
                    if last.user == *user
                        && (last.iso_year, last.iso_week) == (iso_year, iso_week) =>
                {
                    last.pairs.push((prev, cur));
                    last.events += cur.events.len();
                }
                _ => batches.push(PairBatch {
                    user,
                    iso_year,
                    iso_week,
                    pairs: vec![(prev, cur)],
                    events: cur.events.len(),
                }),
            }
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} session pairs shorter than 2 events");
    }
    batches
}

/// Splits `0..n` into (train, holdout) index sets. The holdout size is
/// floor(n·frac), never the whole set.
fn split_indices(n: usize, frac: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let holdout_len = ((n as f64 * frac).floor() as usize).min(n.saturating_sub(1));
    let holdout = indices.split_off(n - holdout_len);
    (indices, holdout)
}

/// Generic early-stopped epoch loop shared by both stages. `step` runs one
/// optimizer step on a batch and returns (total NLL, term count);
/// `evaluate` does the same read-only for holdout batches. `select` picks
/// the parameter half the stage trains, for checkpointing and restoring
/// the best epoch.
#[allow(clippy::too_many_arguments)]
fn run_stage<S, E>(
    stage: u8,
    cfg: &TrainConfig,
    stage_cfg: &StageConfig,
    model: &mut HierModel,
    select: fn(&mut HierModel) -> &mut ParamSet,
    n_batches: usize,
    rng: &mut ChaCha8Rng,
    curve: &mut Vec<CurvePoint>,
    mut step: S,
    mut evaluate: E,
) -> Result<()>
where
    S: FnMut(&mut HierModel, usize, usize) -> Result<(f64, usize)>,
    E: FnMut(&HierModel, usize) -> Result<(f64, usize)>,
{
    let (mut train_idx, holdout_idx) = split_indices(n_batches, cfg.holdout_frac, rng);
    let mut best: Option<(f64, ParamSet)> = None;
    let mut stall = 0usize;
    for epoch in 1..=stage_cfg.epochs {
        train_idx.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut term_count = 0usize;
        for &index in &train_idx {
            let (loss, terms) = step(model, index, epoch)?;
            loss_sum += loss;
            term_count += terms;
        }
        let train_nll = loss_sum / term_count as f64;
        let holdout_nll = if holdout_idx.is_empty() {
            None
        } else {
            let mut loss_sum = 0.0;
            let mut term_count = 0usize;
            for &index in &holdout_idx {
                let (loss, terms) = evaluate(model, index)?;
                loss_sum += loss;
                term_count += terms;
            }
            Some(loss_sum / term_count as f64)
        };
        curve.push(CurvePoint { stage, epoch, train_nll, holdout_nll });
        log::info!(
            "stage {stage} epoch {epoch}: train {train_nll:.4}{}",
            match holdout_nll {
                Some(h) => format!(", holdout {h:.4}"),
                None => String::new(),
            }
        );
        if let Some(holdout) = holdout_nll {
            match &best {
                Some((best_nll, _)) if holdout >= *best_nll => {
                    stall += 1;
                    if stall > cfg.patience {
                        log::info!(
                            "stage {stage}: stopping after {epoch} epochs, \
                             no improvement in {stall}"
                        );
                        break;
                    }
                }
                _ => {
                    best = Some((holdout, select(model).clone()));
                    stall = 0;
                }
            }
        }
    }
    if let Some((_, best_params)) = best {
        *select(model) = best_params;
    }
    Ok(())
}

/// Trains both levels on a benign corpus: normalization scales and fresh
/// parameters from the corpus and seed, stage 1 on session pairs, stage 2
/// on weekly sequences with the lower level frozen.
pub fn train(corpus: &[Session], cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Validation("training corpus is empty".into()));
    }
    if let Some(bad) = corpus.iter().find(|s| s.label != Label::Benign) {
        return Err(Error::Validation(format!(
            "training corpus must be benign only; session {}#{} is labeled {:?}",
            bad.user, bad.k, bad.label
        )));
    }

    let scales = NormScales::from_corpus(corpus)?;
    let mut model = HierModel::init(cfg.dims, scales, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::new();

    let batches = pair_batches(corpus, &cfg.rules);
    if batches.is_empty() {
        return Err(Error::Validation(
            "training corpus has no usable consecutive-session pairs".into(),
        ));
    }
    log::info!(
        "stage 1: {} pair batches, {} pairs",
        batches.len(),
        batches.iter().map(|b| b.pairs.len()).sum::<usize>()
    );
    let mut optimizer = Adam::new(cfg.adam(&cfg.stage1), &model.lower);
    run_stage(
        1,
        cfg,
        &cfg.stage1,
        &mut model,
        |m| &mut m.lower,
        batches.len(),
        &mut rng,
        &mut curve,
        |model, index, epoch| {
            let batch = &batches[index];
            let (loss, events, mut grads) = pairs_loss(model, &batch.pairs)
                .map_err(|e| with_context(e, 1, epoch, &batch.describe()))?;
            scale_grads(&mut grads, 1.0 / events as f64);
            optimizer.step(&mut model.lower, &grads)?;
            Ok((loss, events))
        },
        |model, index| {
            let batch = &batches[index];
            let mut loss = 0.0;
            let mut events = 0usize;
            for &(prev, cur) in &batch.pairs {
                loss += session_nll(model, prev, cur)?;
                events += cur.events.len();
            }
            Ok((loss, events))
        },
    )?;

    let stage1_lower = model.lower.clone();

    let weeks = weekly_sequences(corpus, &cfg.rules)?;
    let mut week_batches: Vec<(WeekInputs, String)> = Vec::new();
    {
        let mut prev_user: Option<&str> = None;
        let mut prev_session: Option<&Session> = None;
        for week in &weeks {
            if prev_user != Some(week.user.as_str()) {
                prev_session = None;
                prev_user = Some(week.user.as_str());
            }
            let inputs = week_inputs(&model, week, prev_session)?;
            if !inputs.entries.is_empty() {
                let tag = format!("{} {}-W{:02}", week.user, week.iso_year, week.iso_week);
                week_batches.push((inputs, tag));
            }
            prev_session = week.entries.last().map(|(s, _)| s);
        }
    }
    if week_batches.is_empty() {
        return Err(Error::Validation(
            "training corpus has no weeks with a defined session gap".into(),
        ));
    }
    log::info!(
        "stage 2: {} week batches, {} scored sessions",
        week_batches.len(),
        week_batches.iter().map(|(w, _)| w.entries.len()).sum::<usize>()
    );
    let mut optimizer = Adam::new(cfg.adam(&cfg.stage2), &model.upper);
    run_stage(
        2,
        cfg,
        &cfg.stage2,
        &mut model,
        |m| &mut m.upper,
        week_batches.len(),
        &mut rng,
        &mut curve,
        |model, index, epoch| {
            let (inputs, tag) = &week_batches[index];
            let (loss, terms, mut grads) = weeks_loss(model, std::slice::from_ref(inputs))
                .map_err(|e| with_context(e, 2, epoch, tag))?;
            scale_grads(&mut grads, 1.0 / terms as f64);
            optimizer.step(&mut model.upper, &grads)?;
            Ok((loss, terms))
        },
        |model, index| {
            let (inputs, _) = &week_batches[index];
            weeks_nll(model, std::slice::from_ref(inputs))
        },
    )?;

    Ok(TrainOutput { model, curve, stage1_lower })
}
