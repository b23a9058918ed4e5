//! Randomized finite-difference audit of both training losses, shared by
//! the `grad-check` subcommand and the acceptance tests.
//!
//! Each seed draws fresh model parameters and a fresh session fixture, so
//! repeated runs probe different points of both loss surfaces. Parameters
//! are drawn at generic magnitudes rather than near the initialization,
//! and the week carries enough entries that the upper recurrence
//! contributes gradient over several unroll steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::lower::pairs_loss;
use crate::model::upper::{week_inputs, weeks_loss};
use crate::model::{HierModel, ModelDims, NormScales};
use crate::neural::{check_gradients, GradCheckConfig, GradCheckReport};
use crate::sessions::{ActivityType, Event, Label, Session, SessionGap, WeekSequence};

#[derive(Clone, Debug)]
pub struct GradSuiteOutcome {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn random_session(rng: &mut ChaCha8Rng, k: u32, start: f64) -> Result<Session> {
    let mut events = vec![Event {
        time: start,
        activity: ActivityType::new(rng.gen_range(0..3))?,
    }];
    let mut t = start;
    for _ in 0..rng.gen_range(1..=3usize) {
        t += rng.gen_range(20.0..200.0);
        events.push(Event {
            time: t,
            activity: ActivityType::new(rng.gen_range(4..19))?,
        });
    }
    t += rng.gen_range(20.0..200.0);
    events.push(Event { time: t, activity: ActivityType::new(3)? });
    Ok(Session {
        user: "probe".into(),
        k,
        label: Label::Benign,
        ill_formed: false,
        events,
    })
}

/// Runs both gradient suites at one random draw. The returned reports
/// carry per-coordinate failures; `GradCheckReport::passed` gates them at
/// the default 1e-4 relative tolerance.
pub fn gradient_suites(seed: u64) -> Result<Vec<GradSuiteOutcome>> {
    let dims = ModelDims {
        embed_dim: 3,
        hidden_dim: 4,
        upper_in: 3,
        upper_hidden: 3,
        ..ModelDims::default()
    };
    let scales = NormScales { intra_secs: 60.0, gap_secs: 3600.0, duration_secs: 1800.0 };
    let mut model = HierModel::init(dims, scales, seed)?;
    model.randomize(seed.wrapping_mul(0x9e37_79b9).wrapping_add(1), 0.7);

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let mut sessions = vec![random_session(&mut rng, 0, 0.0)?];
    for k in 1..5u32 {
        let gap = rng.gen_range(600.0..7200.0);
        let start = sessions.last().expect("nonempty").end() + gap;
        sessions.push(random_session(&mut rng, k, start)?);
    }
    let pairs: Vec<(&Session, &Session)> =
        sessions.windows(2).map(|w| (&w[0], &w[1])).collect();

    let lower = check_gradients(&model.lower, &GradCheckConfig::default(), |params| {
        let candidate = HierModel { lower: params.clone(), ..model.clone() };
        let (loss, _, grads) = pairs_loss(&candidate, &pairs)?;
        Ok((loss, grads))
    })?;

    let week = WeekSequence {
        user: sessions[0].user.clone(),
        iso_year: 2010,
        iso_week: 1,
        entries: sessions
            .windows(2)
            .map(|w| Ok((w[1].clone(), SessionGap::between(&w[0], &w[1])?)))
            .collect::<Result<Vec<_>>>()?,
    };
    let inputs = week_inputs(&model, &week, Some(&sessions[0]))?;
    let upper = check_gradients(&model.upper, &GradCheckConfig::default(), |params| {
        let candidate = HierModel { upper: params.clone(), ..model.clone() };
        let (loss, _, grads) = weeks_loss(&candidate, std::slice::from_ref(&inputs))?;
        Ok((loss, grads))
    })?;

    Ok(vec![
        GradSuiteOutcome { name: "intra-session", report: lower },
        GradSuiteOutcome { name: "inter-session", report: upper },
    ])
}
