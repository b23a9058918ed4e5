//! Upper level: an LSTM over the sequence of session gaps and session
//! durations. Each scored session contributes two steps: the projected
//! final hidden state of the previous session's encoding (after which the
//! gap head scores the inter-session gap Δ) and the projected first hidden
//! state of the current session's encoding (after which the duration head
//! scores the session duration d). State carries across sessions within a
//! week and resets at week boundaries.

use super::lower::encode_session;
use super::{HierModel, LeafMap};
use crate::error::{Error, Result};
use crate::neural::lstm::{self, LstmNodes};
use crate::neural::tensor::{dot, matvec};
use crate::neural::{GradMap, NodeId, Tape};
use crate::sessions::{Session, WeekSequence};
use crate::tpp;

/// Eq.-style inputs: x_gap from the previous session's last hidden state,
/// x_dur from the current session's first hidden state, both through the
/// shared projection.
pub fn upper_inputs(
    model: &HierModel,
    h_last_prev: &[f64],
    h_first_cur: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let u = model.upper.require("proj.u")?;
    if h_last_prev.len() != model.dims.hidden_dim || h_first_cur.len() != model.dims.hidden_dim {
        return Err(Error::dimension(
            "upper_inputs hidden states",
            model.dims.hidden_dim.to_string(),
            format!("{} and {}", h_last_prev.len(), h_first_cur.len()),
        ));
    }
    Ok((matvec(u, h_last_prev), matvec(u, h_first_cur)))
}

/// Mutable upper LSTM state for step-by-step scoring.
#[derive(Clone, Debug)]
pub struct UpperState {
    h: Vec<f64>,
    c: Vec<f64>,
}

impl UpperState {
    /// Fresh zeros; use at the start of each week.
    pub fn fresh(model: &HierModel) -> UpperState {
        UpperState {
            h: vec![0.0; model.dims.upper_hidden],
            c: vec![0.0; model.dims.upper_hidden],
        }
    }
}

/// Expected gap and duration for one session, de-normalized to seconds.
/// Truncation flags mark quadrature that hit its horizon cap, in which case
/// the value is a lower bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapDurationPrediction {
    pub gap_secs: f64,
    pub gap_truncated: bool,
    pub duration_secs: f64,
    pub duration_truncated: bool,
}

fn head_intercept(model: &HierModel, head: &str, h: &[f64]) -> Result<(f64, f64)> {
    let v = model.upper.require(&format!("{head}.v"))?;
    let b = model.upper.require(&format!("{head}.b"))?;
    let u = model.upper.require(&format!("{head}.u"))?;
    Ok((dot(v.data(), h) + b.item(), u.item()))
}

fn advance(model: &HierModel, state: &mut UpperState, x: &[f64]) -> Result<()> {
    let (h, c) = lstm::step(
        model.upper.require("lstm.w_ih")?,
        model.upper.require("lstm.w_hh")?,
        model.upper.require("lstm.b")?,
        x,
        &state.h,
        &state.c,
    );
    state.h = h;
    state.c = c;
    Ok(())
}

/// Advances the upper state through one session's two inputs and returns
/// the expected gap and duration, each conditioned exactly as the
/// corresponding likelihood term is.
pub fn predict_gap_and_duration(
    model: &HierModel,
    state: &mut UpperState,
    h_last_prev: &[f64],
    h_first_cur: &[f64],
) -> Result<GapDurationPrediction> {
    let (x_gap, x_dur) = upper_inputs(model, h_last_prev, h_first_cur)?;
    advance(model, state, &x_gap)?;
    let (s_gap, u_gap) = head_intercept(model, "gap_head", &state.h)?;
    let gap = tpp::expected_duration(s_gap, u_gap)?;
    advance(model, state, &x_dur)?;
    let (s_dur, u_dur) = head_intercept(model, "dur_head", &state.h)?;
    let duration = tpp::expected_duration(s_dur, u_dur)?;
    Ok(GapDurationPrediction {
        gap_secs: gap.value * model.scales.gap_secs,
        gap_truncated: gap.truncated,
        duration_secs: duration.value * model.scales.duration_secs,
        duration_truncated: duration.truncated,
    })
}

/// One scored session, ready for the upper tape: normalized gap and
/// duration targets plus the two (frozen) encoder states feeding the
/// projection.
#[derive(Clone, Debug)]
pub(crate) struct UpperEntry {
    pub gap_norm: f64,
    pub dur_norm: f64,
    pub h_last_prev: Vec<f64>,
    pub h_first_cur: Vec<f64>,
}

/// The scored entries of one week, in order. The upper LSTM state is fresh
/// at the start of the week.
#[derive(Clone, Debug, Default)]
pub(crate) struct WeekInputs {
    pub entries: Vec<UpperEntry>,
}

/// Builds [`WeekInputs`] from a week of sessions, encoding each involved
/// session with the (frozen) lower encoder. `prev` must be the session
/// preceding the week's first entry whenever that entry has a defined gap.
pub(crate) fn week_inputs(
    model: &HierModel,
    week: &WeekSequence,
    prev: Option<&Session>,
) -> Result<WeekInputs> {
    let mut entries = Vec::new();
    let mut prev_h_last: Option<Vec<f64>> = match prev {
        Some(p) => Some(encode_session(model, p)?.h_last().to_vec()),
        None => None,
    };
    for (i, (session, gap)) in week.entries.iter().enumerate() {
        let encoding = encode_session(model, session)?;
        if let Some(gap_secs) = gap.preceding {
            let h_last_prev = prev_h_last.take().ok_or_else(|| {
                Error::Contract(format!(
                    "week {}-W{} of {:?}: entry {i} has a gap but no previous session",
                    week.iso_year, week.iso_week, week.user
                ))
            })?;
            entries.push(UpperEntry {
                gap_norm: gap_secs / model.scales.gap_secs,
                dur_norm: session.duration() / model.scales.duration_secs,
                h_last_prev,
                h_first_cur: encoding.h_first().to_vec(),
            });
        }
        prev_h_last = Some(encoding.h_last().to_vec());
    }
    Ok(WeekInputs { entries })
}

/// Negative log-likelihood of a week's gaps and durations (two density
/// terms per scored session). `prev` is the session before the week's first
/// entry, if any.
pub fn inter_session_nll(
    model: &HierModel,
    week: &WeekSequence,
    prev: Option<&Session>,
) -> Result<f64> {
    let inputs = week_inputs(model, week, prev)?;
    if inputs.entries.is_empty() {
        return Err(Error::Contract(format!(
            "week {}-W{} of {:?} has no session with a defined gap",
            week.iso_year, week.iso_week, week.user
        )));
    }
    let mut graph = UpperGraph::new(model);
    let terms = graph.week_terms(&inputs);
    let loss = graph.tape.sum(terms);
    Ok(graph.tape.scalar_value(loss))
}

/// Forward-only total NLL and term count over prepared weeks; used for
/// holdout evaluation where gradients would be wasted work.
pub(crate) fn weeks_nll(model: &HierModel, weeks: &[WeekInputs]) -> Result<(f64, usize)> {
    let mut graph = UpperGraph::new(model);
    let mut terms = Vec::new();
    for week in weeks {
        terms.extend(graph.week_terms(week));
    }
    if terms.is_empty() {
        return Err(Error::Contract("no scored sessions in week batch".into()));
    }
    let count = terms.len();
    let loss = graph.tape.sum(terms);
    Ok((graph.tape.scalar_value(loss), count))
}

/// Batched loss + gradients for stage-2 training: total NLL over all
/// weeks, the number of density terms, and gradients with respect to the
/// upper parameters only — the lower level is consumed as constants, so its
/// parameters receive no gradient at all.
pub(crate) fn weeks_loss(
    model: &HierModel,
    weeks: &[WeekInputs],
) -> Result<(f64, usize, GradMap)> {
    let mut graph = UpperGraph::new(model);
    let mut terms = Vec::new();
    for week in weeks {
        terms.extend(graph.week_terms(week));
    }
    if terms.is_empty() {
        return Err(Error::Contract("no scored sessions in week batch".into()));
    }
    let count = terms.len();
    let loss = graph.tape.sum(terms);
    let value = graph.tape.scalar_value(loss);
    let mut gradients = graph.tape.backward(loss)?;
    Ok((value, count, graph.leaves.grads(&mut gradients)))
}

#[derive(Clone, Copy)]
struct HeadNodes {
    v: NodeId,
    b: NodeId,
    u: NodeId,
}

pub(crate) struct UpperGraph<'m> {
    model: &'m HierModel,
    pub(crate) tape: Tape,
    pub(crate) leaves: LeafMap,
    proj: NodeId,
    lstm: LstmNodes,
    gap_head: HeadNodes,
    dur_head: HeadNodes,
}

impl<'m> UpperGraph<'m> {
    pub(crate) fn new(model: &'m HierModel) -> UpperGraph<'m> {
        let mut tape = Tape::new();
        let leaves = LeafMap::new(&mut tape, &model.upper);
        UpperGraph {
            model,
            proj: leaves.id("proj.u"),
            lstm: LstmNodes {
                w_ih: leaves.id("lstm.w_ih"),
                w_hh: leaves.id("lstm.w_hh"),
                b: leaves.id("lstm.b"),
            },
            gap_head: HeadNodes {
                v: leaves.id("gap_head.v"),
                b: leaves.id("gap_head.b"),
                u: leaves.id("gap_head.u"),
            },
            dur_head: HeadNodes {
                v: leaves.id("dur_head.v"),
                b: leaves.id("dur_head.b"),
                u: leaves.id("dur_head.u"),
            },
            tape,
            leaves,
        }
    }

    fn head_term(&mut self, head: HeadNodes, h: NodeId, target: f64) -> NodeId {
        let vh = self.tape.dot(head.v, h);
        let s = self.tape.add(vh, head.b);
        let log_f = self.tape.tpp_log_density(s, head.u, target);
        self.tape.neg(log_f)
    }

    /// Two scalar NLL terms per scored session, state fresh at week start.
    pub(crate) fn week_terms(&mut self, week: &WeekInputs) -> Vec<NodeId> {
        let hidden = self.model.dims.upper_hidden;
        let mut h = self.tape.constant(vec![0.0; hidden]);
        let mut c = self.tape.constant(vec![0.0; hidden]);
        let mut terms = Vec::with_capacity(2 * week.entries.len());
        for entry in &week.entries {
            let h_prev = self.tape.constant(entry.h_last_prev.clone());
            let x_gap = self.tape.matvec(self.proj, h_prev);
            let (h_new, c_new) = lstm::step_tape(&mut self.tape, &self.lstm, x_gap, h, c);
            h = h_new;
            c = c_new;
            terms.push(self.head_term(self.gap_head, h, entry.gap_norm));

            let h_cur = self.tape.constant(entry.h_first_cur.clone());
            let x_dur = self.tape.matvec(self.proj, h_cur);
            let (h_new, c_new) = lstm::step_tape(&mut self.tape, &self.lstm, x_dur, h, c);
            h = h_new;
            c = c_new;
            terms.push(self.head_term(self.dur_head, h, entry.dur_norm));
        }
        terms
    }
}
