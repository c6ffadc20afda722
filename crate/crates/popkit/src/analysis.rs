//! Combinatorial path machinery: b-bottleneck detection, the waiting-time
//! floor that bottlenecks force, the small-count transition ordering, and
//! the two path surgeries (append / adjust) built on that ordering.
//!
//! Throughout, a path window is a concrete transition sequence from a start
//! configuration to an end configuration. The ordering machinery partitions
//! the alphabet by thresholds (b1, b2): Delta holds the states that drop
//! from count >= b2 at the start to <= b1 at the end, Gamma the rest.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::{Configuration, Protocol, StateId, Transition};
use crate::sim::Trace;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("path is invalid: input counts go negative at position {0}")]
    InvalidWindow(usize),
    #[error("threshold b2 = {b2} must exceed |alphabet| * b1 = {states} * {b1}")]
    ThresholdTooLow { b1: u64, b2: u64, states: usize

},
    #[error("path contains a {b}-bottleneck at position {position}; no ordering exists")]
    BottleneckPresent { b: u64, position: usize },
    #[error("no eliminating transition found for the remaining small-count states; the ordering construction should always succeed on a bottleneck-free window")]
    OrderingFailure,
    #[error("adjustment target has nonzero count on state index {0}, which is outside Delta")]
    TargetOffDelta(StateId),
    #[error("only {available} occurrences of the eliminating transition for state index {state} are available but {needed} removals are required; rerecord the window with b2 >= {suggested_b2}")]
    InsufficientOccurrences { state: StateId, needed: u64, available: u64, suggested_b2: u64 },
    #[error("surgery produced an invalid path at position {0}; this is a bug")]
    SurgeryValidationFailed(usize),
}

/// A concrete transition sequence with its start and end configurations.
#[derive(Debug, Clone)]
pub struct PathWindow {
    pub start: Configuration,
    pub transitions: Vec<Transition>,
    pub end: Configuration,
}

impl PathWindow {
    pub fn new(start: Configuration, transitions: Vec<Transition>) -> Result<Self, AnalysisError> {
        match validate_path(&start, &transitions) {
            Ok(end) => Ok(PathWindow { start, transitions, end }),
            Err(pos) => Err(AnalysisError::InvalidWindow(pos)),
        }
    }

    /// The non-null transitions of a recorded trace as a path window.
    pub fn from_trace(tr: &Trace) -> Self {
        PathWindow {
            start: tr.initial.clone(),
            transitions: tr.steps.iter().map(|s| s.transition).collect(),
            end: tr.final_config.clone(),
        }
    }

    /// Configurations along the path: start first, end last.
    pub fn configs(&self) -> Vec<Configuration> {
        let mut out = Vec::with_capacity(self.transitions.len() + 1);
        let mut c = self.start.clone();
        out.push(c.clone());
        for t in &self.transitions {
            c.apply_in_place(t);
            out.push(c.clone());
        }
        out
    }
}

/// Small/large count thresholds; b2 doubles as the bottleneck parameter.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdParams {
    pub b1: u64,
    pub b2: u64,
}

/// An ordering d1..dk of the states that drop from large to small count
/// along a path, with one eliminating transition per state.
#[derive(Debug, Clone)]
pub struct OrderingResult {
    /// d1..dk: states with start count >= b2 and end count <= b1.
    pub delta: Vec<StateId>,
    /// The complement of delta, in declaration order.
    pub gamma: Vec<StateId>,
    /// alphas[i] has the form d_i, s_i -> o_i, o'_i with s_i, o_i, o'_i
    /// outside {d_1..d_i}.
    pub alphas: Vec<Transition>,
    /// How often alphas[i] occurs in the whole path.
    pub occurrence_counts: Vec<u64>,
    pub params: ThresholdParams,
}

impl OrderingResult {
    /// s_i: the input of alphas[i] that is not d_i.
    pub fn partner(&self, i: usize) -> StateId {
        let t = self.alphas[i];
        if t.r1 == self.delta[i] {
            t.r2
        } else {
            t.r1
        }
    }

    pub fn render(&self, p: &Protocol) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self.delta.iter().map(|&d| p.states()[d].as_str()).collect();
        out.push_str(&format!("ordering: {}\n", names.join(", ")));
        for i in 0..self.delta.len() {
            out.push_str(&format!(
                "  d{} = {}: {} ({} occurrences)\n",
                i + 1,
                p.states()[self.delta[i]],
                self.alphas[i].display(p.states()),
                self.occurrence_counts[i]
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurgeryKind {
    Append,
    Adjust,
}

/// A planned path modification together with the modified path itself.
#[derive(Debug, Clone)]
pub struct SurgeryPlan {
    pub kind: SurgeryKind,
    /// Append: per-i repetition counts c_i (all >= 0). Adjust: signed
    /// per-i adjustments (positive = that many removals of alphas[i],
    /// negative = appended copies).
    pub reps: Vec<i64>,
    /// Append: the appended-inputs vector e = sum of {c_i s_i}. Adjust:
    /// the requested target counts on Delta.
    pub extra: Configuration,
    /// Context agents needed so the modified path stays valid from
    /// start + padding; zero for append surgery.
    pub padding: Configuration,
    /// Net final counts of the modified path replayed from the original
    /// start alone (signed bookkeeping, excluding padding): zero on Delta
    /// for append, the target on Delta for adjust.
    pub result_gamma: Vec<i64>,
    /// The modified path, from start + extra (append) or start + padding
    /// (adjust).
    pub path: PathWindow,
}

impl SurgeryPlan {
    pub fn render(&self, p: &Protocol, o: &OrderingResult) -> String {
        let mut out = o.render(p);
        for i in 0..o.delta.len() {
            let action = match self.kind {
                SurgeryKind::Append => format!("append {}", self.reps[i]),
                SurgeryKind::Adjust if self.reps[i] >= 0 => format!("remove {}", self.reps[i]),
                SurgeryKind::Adjust => format!("append {}", -self.reps[i]),
            };
            out.push_str(&format!(
                "  {}: {} x {}\n",
                p.states()[o.delta[i]],
                action,
                o.alphas[i].display(p.states())
            ));
        }
        out.push_str(&format!("e: {}\n", p.format_config(&self.extra)));
        out.push_str(&format!("p: {}\n", p.format_config(&self.padding)));
        let gamma: Vec<String> = (0..self.result_gamma.len())
            .filter(|&s| self.result_gamma[s] != 0)
            .map(|s| format!("{} {}", self.result_gamma[s], p.states()[s]))
            .collect();
        out.push_str(&format!("result: {{{}}}\n", gamma.join(", ")));
        out
    }
}

/// Replays `transitions` from `start`; returns the final configuration or
/// the first position where an input count would go negative.
pub fn validate_path(start: &Configuration, transitions: &[Transition]) -> Result<Configuration, usize> {
    let mut c = start.clone();
    for (i, t) in transitions.iter().enumerate() {
        if !c.can_apply(t) {
            return Err(i);
        }
        c.apply_in_place(t);
    }
    Ok(c)
}

/// Positions where the applied transition is a b-bottleneck: both of its
/// input states have count <= b in the configuration it is applied to.
pub fn find_bottlenecks(w: &PathWindow, b: u64) -> Vec<(usize, Transition)> {
    let mut out = Vec::new();
    let mut c = w.start.clone();
    for (i, t) in w.transitions.iter().enumerate() {
        if c.count(t.r1) <= b && c.count(t.r2) <= b {
            out.push((i, *t));
        }
        c.apply_in_place(t);
    }
    out
}

/// Parallel-time floor forced by a b-bottleneck on every path:
/// (n - 1) / (2 (b |alphabet|)^2).
pub fn bottleneck_lower_bound(b: u64, state_count: usize, n: u64) -> f64 {
    (n - 1) as f64 / (2.0 * ((b * state_count as u64) as f64).powi(2))
}

/// Orders the states that fall from count >= b2 to <= b1 along a
/// b2-bottleneck-free window, pairing each with an eliminating transition
/// d_i, s_i -> o_i, o'_i whose other input and outputs all come later in
/// the ordering (or lie outside Delta).
///
/// Construction, following the existence proof: working backwards from
/// d_k, track the potential Phi_i = total count over the still-unordered
/// states. After the last configuration where Phi_i >= b2, every
/// Phi_i-decreasing transition must consume exactly one unordered state
/// with partner and outputs outside the unordered set (anything else would
/// be a b2-bottleneck or not decrease Phi_i); at least b2 - |alphabet|*b1
/// such instances exist, so some type repeats often. We pick the type with
/// the most instances in that suffix (most removal headroom for surgery).
pub fn transition_ordering(
    w: &PathWindow,
    t: ThresholdParams,
) -> Result<OrderingResult, AnalysisError> {
    // Report a bottleneck before anything else: the ordering's guarantees
    // are void on such windows no matter the thresholds.
    if let Some(&(position, _)) = find_bottlenecks(w, t.b2).first() {
        return Err(AnalysisError::BottleneckPresent { b: t.b2, position });
    }
    let states = w.start.num_states();
    if t.b2 <= states as u64 * t.b1 {
        return Err(AnalysisError::ThresholdTooLow { b1: t.b1, b2: t.b2, states });
    }

    let configs = w.configs();
    let mut remaining: Vec<StateId> = (0..states)
        .filter(|&d| w.start.count(d) >= t.b2 && w.end.count(d) <= t.b1)
        .collect();
    let gamma: Vec<StateId> = (0..states).filter(|s| !remaining.contains(s)).collect();

    let mut order_rev: Vec<StateId> = Vec::new();
    let mut alphas_rev: Vec<Transition> = Vec::new();
    while !remaining.is_empty() {
        let phi = |c: &Configuration| -> u64 { remaining.iter().map(|&d| c.count(d)).sum() };
        let last_big = (0..configs.len())
            .rev()
            .find(|&i| phi(&configs[i]) >= t.b2)
            .ok_or(AnalysisError::OrderingFailure)?;
        // Qualifying transitions in the suffix: exactly one input among the
        // unordered states, neither output among them (these are precisely
        // the transitions that decrease Phi, by exactly 1).
        let mut candidates: HashMap<Transition, u64> = HashMap::new();
        for tr in &w.transitions[last_big..] {
            let inputs_in =
                remaining.contains(&tr.r1) as u8 + remaining.contains(&tr.r2) as u8;
            let outputs_in =
                remaining.contains(&tr.p1) as u8 + remaining.contains(&tr.p2) as u8;
            if inputs_in == 1 && outputs_in == 0 {
                *candidates.entry(*tr).or_insert(0) += 1;
            }
        }
        let (&alpha, _) = candidates
            .iter()
            .max_by_key(|(tr, &count)| (count, std::cmp::Reverse(**tr)))
            .ok_or(AnalysisError::OrderingFailure)?;
        let d = if remaining.contains(&alpha.r1) { alpha.r1 } else { alpha.r2 };
        remaining.retain(|&s| s != d);
        order_rev.push(d);
        alphas_rev.push(alpha);
    }

    let delta: Vec<StateId> = order_rev.into_iter().rev().collect();
    let alphas: Vec<Transition> = alphas_rev.into_iter().rev().collect();
    let occurrence_counts: Vec<u64> = alphas
        .iter()
        .map(|a| w.transitions.iter().filter(|t| *t == a).count() as u64)
        .collect();
    Ok(OrderingResult { delta, gamma, alphas, occurrence_counts, params: t })
}

/// Appends c_i copies of each eliminating transition so that every state
/// in Delta ends at count 0, supplying the consumed partners via the extra
/// configuration e. The repetition counts follow the chain
/// c_i = end(d_i) + sum over j < i of the copies of d_i that the c_j
/// appended outputs produce.
pub fn append_surgery(w: &PathWindow, o: &OrderingResult) -> Result<SurgeryPlan, AnalysisError> {
    let k = o.delta.len();
    let mut reps: Vec<u64> = Vec::with_capacity(k);
    for &d in &o.delta {
        let mut c = w.end.count(d);
        for (&r, t) in reps.iter().zip(&o.alphas) {
            c += r * ((t.p1 == d) as u64 + (t.p2 == d) as u64);
        }
        reps.push(c);
    }

    let mut extra = Configuration::zero(w.start.num_states());
    for (i, &r) in reps.iter().enumerate() {
        extra.set(o.partner(i), extra.count(o.partner(i)) + r);
    }

    let mut transitions = w.transitions.clone();
    for (a, &r) in o.alphas.iter().zip(&reps) {
        transitions.extend(std::iter::repeat_n(*a, r as usize));
    }
    let mut start = w.start.clone();
    start.add(&extra);
    let end = validate_path(&start, &transitions)
        .map_err(AnalysisError::SurgeryValidationFailed)?;
    for &d in &o.delta {
        if end.count(d) != 0 {
            return Err(AnalysisError::SurgeryValidationFailed(transitions.len()));
        }
    }

    // the appended inputs e are fully consumed, so the net result is `end`
    let result_gamma: Vec<i64> =
        (0..w.start.num_states()).map(|s| end.count(s) as i64).collect();
    Ok(SurgeryPlan {
        kind: SurgeryKind::Append,
        reps: reps.iter().map(|&c| c as i64).collect(),
        extra,
        padding: Configuration::zero(w.start.num_states()),
        result_gamma,
        path: PathWindow { start, transitions, end },
    })
}

/// Adjusts the path so every state in Delta ends at exactly the target
/// count, by removing (latest first) or appending copies of each
/// eliminating transition in ordering order. Because each alpha_i only
/// touches d_i among the already-processed states, one pass settles all of
/// Delta. Intermediate deficits caused by the edits are covered by a
/// padding configuration computed from an exact replay.
pub fn adjust_surgery(
    w: &PathWindow,
    o: &OrderingResult,
    target: &Configuration,
) -> Result<SurgeryPlan, AnalysisError> {
    let states = w.start.num_states();
    for s in 0..states {
        if target.count(s) > 0 && !o.delta.contains(&s) {
            return Err(AnalysisError::TargetOffDelta(s));
        }
    }
    let k = o.delta.len();
    let cb = o
        .delta
        .iter()
        .map(|&d| (target.count(d) as i64 - w.end.count(d) as i64).unsigned_abs())
        .max()
        .unwrap_or(0);

    let mut path = w.transitions.clone();
    let mut current: Vec<i64> = w.end.counts().iter().map(|&c| c as i64).collect();
    let mut reps: Vec<i64> = Vec::with_capacity(k);
    for (&d, &a) in o.delta.iter().zip(&o.alphas) {
        let delta_i = target.count(d) as i64 - current[d];
        reps.push(delta_i);
        let adjust_counts = |current: &mut Vec<i64>, sign: i64| {
            current[a.r1] += sign;
            current[a.r2] += sign;
            current[a.p1] -= sign;
            current[a.p2] -= sign;
        };
        if delta_i > 0 {
            // each removal leaves one more d_i unconsumed
            let positions: Vec<usize> =
                (0..path.len()).filter(|&j| path[j] == a).collect();
            let needed = delta_i as u64;
            if (positions.len() as u64) < needed {
                let suggested_b2 = k as u64 * o.params.b1
                    + 3u64.saturating_pow(k.saturating_sub(1) as u32)
                        * cb
                        * (states * states) as u64;
                return Err(AnalysisError::InsufficientOccurrences {
                    state: d,
                    needed,
                    available: positions.len() as u64,
                    suggested_b2,
                });
            }
            for &j in positions.iter().rev().take(needed as usize) {
                path.remove(j);
                adjust_counts(&mut current, 1);
            }
        } else {
            for _ in 0..(-delta_i) {
                path.push(a);
                adjust_counts(&mut current, -1);
            }
        }
    }
    for (i, &d) in o.delta.iter().enumerate() {
        debug_assert_eq!(current[d], target.count(d) as i64, "d{} settled", i + 1);
    }

    // padding: per-state maximum deficit over a signed replay from start
    let mut run: Vec<i64> = w.start.counts().iter().map(|&c| c as i64).collect();
    let mut deficit: Vec<i64> = vec![0; states];
    for t in &path {
        run[t.r1] -= 1;
        run[t.r2] -= 1;
        deficit[t.r1] = deficit[t.r1].max(-run[t.r1]);
        deficit[t.r2] = deficit[t.r2].max(-run[t.r2]);
        run[t.p1] += 1;
        run[t.p2] += 1;
    }
    let padding = Configuration::new(deficit.iter().map(|&d| d.max(0) as u64).collect());

    let mut start = w.start.clone();
    start.add(&padding);
    let end =
        validate_path(&start, &path).map_err(AnalysisError::SurgeryValidationFailed)?;
    Ok(SurgeryPlan {
        kind: SurgeryKind::Adjust,
        reps,
        extra: target.clone(),
        padding,
        result_gamma: run,
        path: PathWindow { start, transitions: path, end },
    })
}
