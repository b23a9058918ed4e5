//! Lower level: the within-session seq2seq marked TPP.
//!
//! The encoder LSTM consumes the previous session's (type, duration)
//! events. The decoder starts from the encoder's final state, takes the
//! embedded last event of the previous session as its first input, and at
//! each step feeds one hidden state to two heads: a softmax over the 19
//! activity types and an exponential-affine intensity over the duration
//! until the next activity. Teacher forcing drives both training and
//! per-event time predictions; free-running greedy decode produces the
//! predicted type sequence used by the type-anomaly score.

use super::{HierModel, LeafMap, PredictedSession, StopReason};
use crate::error::{Error, Result};
use crate::neural::lstm::{self, LstmNodes};
use crate::neural::{GradMap, NodeId, Tape};
use crate::sessions::{ActivityType, Session};
use crate::tpp;

/// Plain-forward encoder output: hidden states per event plus the final
/// cell state (needed to seed the decoder).
#[derive(Clone, Debug)]
pub struct SessionEncoding {
    pub states: Vec<Vec<f64>>,
    pub c_last: Vec<f64>,
}

impl SessionEncoding {
    pub fn h_first(&self) -> &[f64] {
        self.states.first().expect("encoding is never empty")
    }

    pub fn h_last(&self) -> &[f64] {
        self.states.last().expect("encoding is never empty")
    }
}

/// Mutable decoder state for step-by-step use.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// x = w_dur · d + W_em[a], with d already normalized.
pub fn embed_event(model: &HierModel, activity: ActivityType, d_norm: f64) -> Result<Vec<f64>> {
    if !activity.is_valid_event_type() {
        return Err(Error::Contract(format!(
            "cannot embed non-event type id {}",
            activity.id()
        )));
    }
    let w_em = model.lower.require("embed.w_em")?;
    let w_dur = model.lower.require("embed.w_dur")?;
    Ok(w_em
        .row(activity.id())
        .iter()
        .zip(w_dur.data())
        .map(|(&em, &wd)| wd * d_norm + em)
        .collect())
}

/// Runs the encoder over a session's embedded events.
pub fn encode_session(model: &HierModel, session: &Session) -> Result<SessionEncoding> {
    if session.events.is_empty() {
        return Err(Error::Contract(format!(
            "cannot encode empty session {}#{}",
            session.user, session.k
        )));
    }
    let durations = model.normalized_event_durations(session)?;
    let w_ih = model.lower.require("enc.w_ih")?;
    let w_hh = model.lower.require("enc.w_hh")?;
    let b = model.lower.require("enc.b")?;
    let hidden = model.dims.hidden_dim;
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut states = Vec::with_capacity(session.events.len());
    for (event, &d) in session.events.iter().zip(&durations) {
        let x = embed_event(model, event.activity, d)?;
        let (h_new, c_new) = lstm::step(w_ih, w_hh, b, &x, &h, &c);
        h = h_new;
        c = c_new;
        states.push(h.clone());
    }
    Ok(SessionEncoding { states, c_last: c })
}

/// Advances the decoder by one embedded event; returns the new state, the
/// mark logits, and the hidden state both heads read.
pub fn decoder_step(
    model: &HierModel,
    prev_type: ActivityType,
    prev_d_norm: f64,
    state: &DecoderState,
) -> Result<(DecoderState, Vec<f64>, Vec<f64>)> {
    if state.h.len() != model.dims.hidden_dim || state.c.len() != model.dims.hidden_dim {
        return Err(Error::Contract(format!(
            "decoder state width {} does not match hidden_dim {}",
            state.h.len(),
            model.dims.hidden_dim
        )));
    }
    let x = embed_event(model, prev_type, prev_d_norm)?;
    let (h, c) = lstm::step(
        model.lower.require("dec.w_ih")?,
        model.lower.require("dec.w_hh")?,
        model.lower.require("dec.b")?,
        &x,
        &state.h,
        &state.c,
    );
    let logits = mark_logits(model, &h)?;
    Ok((DecoderState { h: h.clone(), c }, logits, h))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

fn mark_logits(model: &HierModel, h: &[f64]) -> Result<Vec<f64>> {
    let w = model.lower.require("mark.w")?;
    let b = model.lower.require("mark.b")?;
    let mut logits = crate::neural::tensor::matvec(w, h);
    for (l, &bias) in logits.iter_mut().zip(b.data()) {
        *l += bias;
    }
    Ok(logits)
}

fn time_intercept(model: &HierModel, h: &[f64]) -> Result<f64> {
    let v = model.lower.require("time.v")?;
    let b = model.lower.require("time.b")?;
    Ok(crate::neural::tensor::dot(v.data(), h) + b.item())
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Teacher-forced negative log-likelihood of `cur` given `prev`: the sum
/// over cur's events of -log P(type) - log f(duration).
pub fn session_nll(model: &HierModel, prev: &Session, cur: &Session) -> Result<f64> {
    Ok(session_nll_terms(model, prev, cur)?.iter().sum())
}

/// Per-event NLL contributions, in event order. The sum over a prefix
/// equals the NLL of the truncated session: the decoder only ever sees the
/// consumed prefix.
pub(crate) fn session_nll_terms(
    model: &HierModel,
    prev: &Session,
    cur: &Session,
) -> Result<Vec<f64>> {
    let mut graph = LowerGraph::new(model);
    let terms = graph.pair_terms(prev, cur)?;
    Ok(terms
        .iter()
        .map(|&(mark, time)| {
            graph.tape.scalar_value(mark) + graph.tape.scalar_value(time)
        })
        .collect())
}

/// Batched loss + gradients for stage-1 training: total NLL over all pairs,
/// the number of target events, and gradients of the total with respect to
/// every lower parameter.
pub(crate) fn pairs_loss(
    model: &HierModel,
    pairs: &[(&Session, &Session)],
) -> Result<(f64, usize, GradMap)> {
    if pairs.is_empty() {
        return Err(Error::Contract("empty pair batch".into()));
    }
    let mut graph = LowerGraph::new(model);
    let mut terms = Vec::new();
    let mut events = 0usize;
    for &(prev, cur) in pairs {
        for (mark, time) in graph.pair_terms(prev, cur)? {
            terms.push(mark);
            terms.push(time);
        }
        events += cur.events.len();
    }
    let loss = graph.tape.sum(terms);
    let value = graph.tape.scalar_value(loss);
    let mut gradients = graph.tape.backward(loss)?;
    Ok((value, events, graph.leaves.grads(&mut gradients)))
}

/// Free-running greedy decode: argmax type and expected duration at each
/// step, fed back as the next input, until a Logoff-class type or max_len.
pub fn decode_session(
    model: &HierModel,
    prev: &Session,
    max_len: usize,
) -> Result<PredictedSession> {
    if max_len == 0 {
        return Err(Error::Contract("max_len must be at least 1".into()));
    }
    let durations = model.normalized_event_durations(prev)?;
    let encoding = encode_session(model, prev)?;
    let mut state = DecoderState {
        h: encoding.h_last().to_vec(),
        c: encoding.c_last.clone(),
    };
    let last = prev.events.last().expect("encoded session is non-empty");
    let mut input = (last.activity, *durations.last().expect("non-empty durations"));

    let u = model.lower.require("time.u")?.item();
    let mut types = Vec::new();
    let mut durations_secs = Vec::new();
    let mut stop_reason = StopReason::MaxLength;
    for _ in 0..max_len {
        let (next_state, logits, h) = decoder_step(model, input.0, input.1, &state)?;
        state = next_state;
        let predicted = ActivityType::new(argmax(&logits))
            .expect("mark head has one logit per valid type");
        let s = time_intercept(model, &h)?;
        let expected = tpp::expected_duration(s, u)?;
        types.push(predicted);
        durations_secs.push(expected.value * model.scales.intra_secs);
        if predicted.is_logoff() {
            stop_reason = StopReason::EndToken;
            break;
        }
        input = (predicted, expected.value);
    }
    Ok(PredictedSession { types, durations_secs, stop_reason })
}

/// Teacher-forced expected durations, one per event of `cur`, in seconds:
/// the time-head prediction aligned index-by-index with the observed
/// durations.
pub fn teacher_forced_durations(
    model: &HierModel,
    prev: &Session,
    cur: &Session,
) -> Result<Vec<f64>> {
    prev.validate()?;
    cur.validate()?;
    let prev_durations = model.normalized_event_durations(prev)?;
    let cur_durations = model.normalized_event_durations(cur)?;
    let encoding = encode_session(model, prev)?;
    let mut state = DecoderState {
        h: encoding.h_last().to_vec(),
        c: encoding.c_last.clone(),
    };
    let last = prev.events.last().expect("validated session is non-empty");
    let mut input = (last.activity, *prev_durations.last().expect("non-empty durations"));

    let u = model.lower.require("time.u")?.item();
    let mut predictions = Vec::with_capacity(cur.events.len());
    for (event, &d) in cur.events.iter().zip(&cur_durations) {
        let (next_state, _, h) = decoder_step(model, input.0, input.1, &state)?;
        state = next_state;
        let s = time_intercept(model, &h)?;
        predictions.push(tpp::expected_duration(s, u)?.value * model.scales.intra_secs);
        input = (event.activity, d);
    }
    Ok(predictions)
}

/// Tape-side construction of the lower-level graph, shared by the NLL value
/// path and the training path so both see identical arithmetic.
pub(crate) struct LowerGraph<'m> {
    model: &'m HierModel,
    pub(crate) tape: Tape,
    pub(crate) leaves: LeafMap,
    w_em: NodeId,
    w_dur: NodeId,
    enc: LstmNodes,
    dec: LstmNodes,
    mark_w: NodeId,
    mark_b: NodeId,
    time_v: NodeId,
    time_b: NodeId,
    time_u: NodeId,
}

impl<'m> LowerGraph<'m> {
    pub(crate) fn new(model: &'m HierModel) -> LowerGraph<'m> {
        let mut tape = Tape::new();
        let leaves = LeafMap::new(&mut tape, &model.lower);
        let enc = LstmNodes {
            w_ih: leaves.id("enc.w_ih"),
            w_hh: leaves.id("enc.w_hh"),
            b: leaves.id("enc.b"),
        };
        let dec = LstmNodes {
            w_ih: leaves.id("dec.w_ih"),
            w_hh: leaves.id("dec.w_hh"),
            b: leaves.id("dec.b"),
        };
        LowerGraph {
            model,
            w_em: leaves.id("embed.w_em"),
            w_dur: leaves.id("embed.w_dur"),
            enc,
            dec,
            mark_w: leaves.id("mark.w"),
            mark_b: leaves.id("mark.b"),
            time_v: leaves.id("time.v"),
            time_b: leaves.id("time.b"),
            time_u: leaves.id("time.u"),
            tape,
            leaves,
        }
    }

    fn embed(&mut self, activity: ActivityType, d_norm: f64) -> Result<NodeId> {
        if !activity.is_valid_event_type() {
            return Err(Error::Contract(format!(
                "cannot embed non-event type id {}",
                activity.id()
            )));
        }
        let row = self.tape.row(self.w_em, activity.id(), self.model.dims.embed_dim);
        let timed = self.tape.scale(self.w_dur, d_norm);
        Ok(self.tape.add(row, timed))
    }

    pub(crate) fn encode(&mut self, session: &Session) -> Result<(NodeId, NodeId)> {
        if session.events.is_empty() {
            return Err(Error::Contract(format!(
                "cannot encode empty session {}#{}",
                session.user, session.k
            )));
        }
        let durations = self.model.normalized_event_durations(session)?;
        let hidden = self.model.dims.hidden_dim;
        let mut h = self.tape.constant(vec![0.0; hidden]);
        let mut c = self.tape.constant(vec![0.0; hidden]);
        for (event, &d) in session.events.iter().zip(&durations) {
            let x = self.embed(event.activity, d)?;
            let (h_new, c_new) = lstm::step_tape(&mut self.tape, &self.enc, x, h, c);
            h = h_new;
            c = c_new;
        }
        Ok((h, c))
    }

    /// One (mark, time) pair of scalar NLL terms per event of `cur`.
    pub(crate) fn pair_terms(
        &mut self,
        prev: &Session,
        cur: &Session,
    ) -> Result<Vec<(NodeId, NodeId)>> {
        prev.validate()?;
        cur.validate()?;
        let prev_durations = self.model.normalized_event_durations(prev)?;
        let cur_durations = self.model.normalized_event_durations(cur)?;
        let (mut h, mut c) = self.encode(prev)?;

        let last = prev.events.last().expect("validated session is non-empty");
        let mut input =
            self.embed(last.activity, *prev_durations.last().expect("non-empty"))?;
        let mut terms = Vec::with_capacity(cur.events.len());
        for (event, &d) in cur.events.iter().zip(&cur_durations) {
            let (h_new, c_new) = lstm::step_tape(&mut self.tape, &self.dec, input, h, c);
            h = h_new;
            c = c_new;
            let scores = self.tape.matvec(self.mark_w, h);
            let logits = self.tape.add(scores, self.mark_b);
            let log_p = self.tape.log_softmax_pick(logits, event.activity.id());
            let mark_term = self.tape.neg(log_p);

            let vh = self.tape.dot(self.time_v, h);
            let s = self.tape.add(vh, self.time_b);
            let log_f = self.tape.tpp_log_density(s, self.time_u, d);
            let time_term = self.tape.neg(log_f);

            terms.push((mark_term, time_term));
            input = self.embed(event.activity, d)?;
        }
        Ok(terms)
    }
}
