//! The two-level session model. The lower level is a seq2seq marked
//! temporal point process over the activities inside a session: an encoder
//! LSTM summarizes the previous session, a decoder LSTM predicts the next
//! session's activity types (softmax head) and inter-activity durations
//! (exponential-affine intensity head). The upper level is an LSTM over the
//! sequence of session gaps and session durations, with one intensity head
//! for each. Training is two-stage: the lower level first, then the upper
//! level with the lower level frozen.

pub mod checkpoint;
pub mod gradsuite;
pub mod lower;
pub mod score;
pub mod train;
pub mod upper;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{GradMap, Gradients, NodeId, ParamSet, Tape, Tensor};
use crate::sessions::{ActivityType, Session, TYPE_COUNT};

/// Layer widths. `upper_in` is the width of the projected inputs the upper
/// LSTM consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub type_count: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub upper_in: usize,
    pub upper_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            type_count: TYPE_COUNT,
            embed_dim: 50,
            hidden_dim: 100,
            upper_in: 50,
            upper_hidden: 100,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.type_count != TYPE_COUNT {
            return Err(Error::Validation(format!(
                "type_count {} does not match the {TYPE_COUNT}-type taxonomy",
                self.type_count
            )));
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("upper_in", self.upper_in),
            ("upper_hidden", self.upper_hidden),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Corpus-level duration scales, in seconds. Inter-activity durations,
/// session gaps, and session durations are divided by these before touching
/// any exp() so the heads operate near unit scale; predictions are
/// multiplied back out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormScales {
    pub intra_secs: f64,
    pub gap_secs: f64,
    pub duration_secs: f64,
}

impl NormScales {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("intra_secs", self.intra_secs),
            ("gap_secs", self.gap_secs),
            ("duration_secs", self.duration_secs),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Validation(format!("scale {name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    /// Means measured over a training corpus: of inter-activity durations,
    /// of gaps between a user's consecutive sessions, and of session
    /// durations.
    pub fn from_corpus(sessions: &[Session]) -> Result<NormScales> {
        use std::collections::BTreeMap;

        if sessions.is_empty() {
            return Err(Error::Validation("cannot derive scales from an empty corpus".into()));
        }
        let mut intra_sum = 0.0;
        let mut intra_n = 0usize;
        let mut duration_sum = 0.0;
        let mut by_user: BTreeMap<&str, Vec<&Session>> = BTreeMap::new();
        for s in sessions {
            s.validate()?;
            for d in s.inter_activity_durations()? {
                intra_sum += d;
                intra_n += 1;
            }
            duration_sum += s.duration();
            by_user.entry(&s.user).or_default().push(s);
        }
        let mut gap_sum = 0.0;
        let mut gap_n = 0usize;
        for user_sessions in by_user.values() {
            for w in user_sessions.windows(2) {
                let gap = w[1].start() - w[0].end();
                if gap < 0.0 {
                    return Err(Error::Contract(format!(
                        "sessions of user {:?} overlap or are unsorted",
                        w[0].user
                    )));
                }
                gap_sum += gap;
                gap_n += 1;
            }
        }
        if gap_n == 0 {
            return Err(Error::Validation(
                "no user has two consecutive sessions; gap scale is undefined".into(),
            ));
        }
        let scales = NormScales {
            intra_secs: intra_sum / intra_n as f64,
            gap_secs: gap_sum / gap_n as f64,
            duration_secs: duration_sum / sessions.len() as f64,
        };
        scales.validate()?;
        Ok(scales)
    }
}

/// How a free-running decode ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EndToken,
    MaxLength,
}

/// A free-running decode of the next session: predicted activity types and
/// the expected duration preceding each, in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedSession {
    pub types: Vec<ActivityType>,
    pub durations_secs: Vec<f64>,
    pub stop_reason: StopReason,
}

/// The full parameter state. Lower-level and upper-level parameters live in
/// separate sets so stage-2 training can run an optimizer over the upper
/// set while the lower set stays untouched.
#[derive(Clone, Debug)]
pub struct HierModel {
    pub dims: ModelDims,
    pub scales: NormScales,
    pub lower: ParamSet,
    pub upper: ParamSet,
}

pub(crate) const LOWER_NAMES: [&str; 13] = [
    "embed.w_em",
    "embed.w_dur",
    "enc.w_ih",
    "enc.w_hh",
    "enc.b",
    "dec.w_ih",
    "dec.w_hh",
    "dec.b",
    "mark.w",
    "mark.b",
    "time.v",
    "time.b",
    "time.u",
];

pub(crate) const UPPER_NAMES: [&str; 10] = [
    "proj.u",
    "lstm.w_ih",
    "lstm.w_hh",
    "lstm.b",
    "gap_head.v",
    "gap_head.b",
    "gap_head.u",
    "dur_head.v",
    "dur_head.b",
    "dur_head.u",
];

impl HierModel {
    /// Fresh model: matrices uniform in ±1/√fan_in, biases and intensity
    /// slopes zero (so every head starts as a unit-rate exponential over
    /// normalized durations).
    pub fn init(dims: ModelDims, scales: NormScales, seed: u64) -> Result<HierModel> {
        dims.validate()?;
        scales.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = dims.type_count;
        let e = dims.embed_dim;
        let h = dims.hidden_dim;
        let p = dims.upper_in;
        let uh = dims.upper_hidden;

        let mut lower = ParamSet::new();
        let mat = |set: &mut ParamSet, name: &str, rows: usize, cols: usize,
                       rng: &mut ChaCha8Rng|
         -> Result<()> {
            let bound = 1.0 / (cols as f64).sqrt();
            set.insert(name, Tensor::uniform(vec![rows, cols], bound, rng))
        };
        mat(&mut lower, "embed.w_em", a, e, &mut rng)?;
        lower.insert(
            "embed.w_dur",
            Tensor::uniform(vec![e], 1.0 / (e as f64).sqrt(), &mut rng),
        )?;
        mat(&mut lower, "enc.w_ih", 4 * h, e, &mut rng)?;
        mat(&mut lower, "enc.w_hh", 4 * h, h, &mut rng)?;
        lower.insert("enc.b", Tensor::zeros(vec![4 * h]))?;
        mat(&mut lower, "dec.w_ih", 4 * h, e, &mut rng)?;
        mat(&mut lower, "dec.w_hh", 4 * h, h, &mut rng)?;
        lower.insert("dec.b", Tensor::zeros(vec![4 * h]))?;
        mat(&mut lower, "mark.w", a, h, &mut rng)?;
        lower.insert("mark.b", Tensor::zeros(vec![a]))?;
        lower.insert(
            "time.v",
            Tensor::uniform(vec![h], 1.0 / (h as f64).sqrt(), &mut rng),
        )?;
        lower.insert("time.b", Tensor::zeros(vec![1]))?;
        lower.insert("time.u", Tensor::zeros(vec![1]))?;

        let mut upper = ParamSet::new();
        mat(&mut upper, "proj.u", p, h, &mut rng)?;
        mat(&mut upper, "lstm.w_ih", 4 * uh, p, &mut rng)?;
        mat(&mut upper, "lstm.w_hh", 4 * uh, uh, &mut rng)?;
        upper.insert("lstm.b", Tensor::zeros(vec![4 * uh]))?;
        for head in ["gap_head", "dur_head"] {
            upper.insert(
                format!("{head}.v"),
                Tensor::uniform(vec![uh], 1.0 / (uh as f64).sqrt(), &mut rng),
            )?;
            upper.insert(format!("{head}.b"), Tensor::zeros(vec![1]))?;
            upper.insert(format!("{head}.u"), Tensor::zeros(vec![1]))?;
        }

        Ok(HierModel { dims, scales, lower, upper })
    }

    /// Redraws every parameter uniform in ±`scale`, leaving shapes alone.
    /// Gradient verification needs a generic point like this: at a fresh
    /// init the hidden states sit near zero and some recurrent-weight
    /// gradients fall below what central differences can resolve.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for set in [&mut self.lower, &mut self.upper] {
            for (_, tensor) in set.iter_mut() {
                for v in tensor.data_mut() {
                    *v = rng.gen_range(-scale..=scale);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.scales.validate()?;
        let a = self.dims.type_count;
        let e = self.dims.embed_dim;
        let h = self.dims.hidden_dim;
        let p = self.dims.upper_in;
        let uh = self.dims.upper_hidden;
        let expect: [(&str, &ParamSet, &str, Vec<usize>); 23] = [
            ("lower", &self.lower, "embed.w_em", vec![a, e]),
            ("lower", &self.lower, "embed.w_dur", vec![e]),
            ("lower", &self.lower, "enc.w_ih", vec![4 * h, e]),
            ("lower", &self.lower, "enc.w_hh", vec![4 * h, h]),
            ("lower", &self.lower, "enc.b", vec![4 * h]),
            ("lower", &self.lower, "dec.w_ih", vec![4 * h, e]),
            ("lower", &self.lower, "dec.w_hh", vec![4 * h, h]),
            ("lower", &self.lower, "dec.b", vec![4 * h]),
            ("lower", &self.lower, "mark.w", vec![a, h]),
            ("lower", &self.lower, "mark.b", vec![a]),
            ("lower", &self.lower, "time.v", vec![h]),
            ("lower", &self.lower, "time.b", vec![1]),
            ("lower", &self.lower, "time.u", vec![1]),
            ("upper", &self.upper, "proj.u", vec![p, h]),
            ("upper", &self.upper, "lstm.w_ih", vec![4 * uh, p]),
            ("upper", &self.upper, "lstm.w_hh", vec![4 * uh, uh]),
            ("upper", &self.upper, "lstm.b", vec![4 * uh]),
            ("upper", &self.upper, "gap_head.v", vec![uh]),
            ("upper", &self.upper, "gap_head.b", vec![1]),
            ("upper", &self.upper, "gap_head.u", vec![1]),
            ("upper", &self.upper, "dur_head.v", vec![uh]),
            ("upper", &self.upper, "dur_head.b", vec![1]),
            ("upper", &self.upper, "dur_head.u", vec![1]),
        ];
        for (set_name, set, name, shape) in expect {
            let tensor = set.require(name)?;
            if tensor.shape() != shape.as_slice() {
                return Err(Error::dimension(
                    format!("{set_name}.{name}"),
                    format!("{shape:?}"),
                    format!("{:?}", tensor.shape()),
                ));
            }
        }
        Ok(())
    }

    /// d_j per event: 0 for the session's first event, then the time since
    /// the previous event, divided by the inter-activity scale.
    pub(crate) fn normalized_event_durations(&self, s: &Session) -> Result<Vec<f64>> {
        let mut durations = vec![0.0];
        for d in s.inter_activity_durations()? {
            durations.push(d / self.scales.intra_secs);
        }
        Ok(durations)
    }
}

/// Leaf bookkeeping for one tape: which node holds which named parameter.
pub(crate) struct LeafMap {
    ids: Vec<(String, NodeId)>,
}

impl LeafMap {
    pub(crate) fn new(tape: &mut Tape, params: &ParamSet) -> LeafMap {
        LeafMap {
            ids: params
                .iter()
                .map(|(name, tensor)| (name.to_string(), tape.leaf(tensor)))
                .collect(),
        }
    }

    pub(crate) fn id(&self, name: &str) -> NodeId {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("no leaf registered for parameter {name:?}"))
            .1
    }

    pub(crate) fn grads(&self, gradients: &mut Gradients) -> GradMap {
        self.ids
            .iter()
            .map(|(name, id)| (name.clone(), gradients.take(*id)))
            .collect()
    }
}
