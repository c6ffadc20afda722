//! Uniform-random pairwise scheduler.
//!
//! Each interaction draws an ordered pair of distinct agents uniformly from
//! the n(n-1) possibilities and applies the (possibly null) transition for
//! their states. Parallel time is interactions (nulls included) divided
//! by n.
//!
//! `step` performs one literal interaction. `run_trial` simulates whole
//! trials; it skips runs of null interactions in one exactly-distributed
//! geometric jump (the configuration cannot change during them), which is
//! what makes populations of 2^16 agents simulable in milliseconds.

use std::collections::HashSet;
use std::sync::Arc;

use once_cell::sync::Lazy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::builtins::ConfigPredicate;
use crate::model::{Configuration, ModelError, Protocol, Transition};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("population must contain at least 2 agents, got {0}")]
    PopulationTooSmall(u64),
    #[error("membership stop condition was built for n = {expected} but the trial uses n = {got}")]
    MembershipMismatch { expected: u64, got: u64 },
}

/// When to end a trial (checked on the initial configuration and after
/// every configuration change).
#[derive(Clone)]
pub enum StopCondition {
    /// Named analytic predicate over the current configuration.
    Predicate { name: String, test: ConfigPredicate },
    /// Membership in a precomputed configuration set (e.g. the Q-stable
    /// set from exact verification); only valid for the matching n.
    Membership { n: u64, set: Arc<HashSet<Configuration>> },
    /// Every state of the alphabet has count >= beta * n.
    Density(f64),
    /// Run until the interaction budget alone ends the trial.
    Cap,
}

impl StopCondition {
    pub fn is_hit(&self, c: &Configuration) -> bool {
        match self {
            StopCondition::Predicate { test, .. } => test(c),
            StopCondition::Membership { set, .. } => set.contains(c),
            StopCondition::Density(beta) => {
                let bound = beta * c.n() as f64;
                c.counts().iter().all(|&k| k as f64 >= bound)
            }
            StopCondition::Cap => false,
        }
    }

    /// Label used in CSV output.
    pub fn kind_label(&self) -> String {
        match self {
            StopCondition::Predicate { name, .. } => format!("predicate:{name}"),
            StopCondition::Membership { .. } => "membership".to_string(),
            StopCondition::Density(beta) => format!("density:{beta}"),
            StopCondition::Cap => "cap".to_string(),
        }
    }
}

/// One recorded non-null interaction. `index` is the 1-based position of
/// the interaction in the trial; gaps between consecutive indices are null
/// interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceStep {
    pub index: u64,
    pub transition: Transition,
}

/// A recorded trial: the initial configuration plus every non-null
/// interaction. Null interactions are counted (they appear in
/// `interactions_total` and in index gaps) but not stored.
#[derive(Debug, Clone)]
pub struct Trace {
    pub initial: Configuration,
    pub steps: Vec<TraceStep>,
    pub interactions_total: u64,
    pub final_config: Configuration,
    pub timed_out: bool,
}

impl Trace {
    pub fn parallel_time(&self) -> f64 {
        self.interactions_total as f64 / self.initial.n() as f64
    }

    /// Initial configuration followed by the configuration after each
    /// recorded step.
    pub fn configs(&self) -> Vec<Configuration> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut c = self.initial.clone();
        out.push(c.clone());
        for s in &self.steps {
            c.apply_in_place(&s.transition);
            out.push(c.clone());
        }
        out
    }
}

/// Mean parallel time over independent trials.
#[derive(Debug, Clone)]
pub struct TimeEstimate {
    pub trials: u64,
    pub mean_parallel_time: f64,
    pub std_error: f64,
    pub per_trial_times: Vec<f64>,
    pub timeouts: u64,
}

/// Default interaction budget when the caller does not supply one.
pub fn default_cap(n: u64) -> u64 {
    10_000u64.saturating_mul(n).saturating_mul(n)
}

/// RNG for trial `trial` of a run seeded with `seed`: one base key, one
/// independent stream per trial, so trials are reproducible in any order.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial + 1);
    rng
}

/// Shared worker pool; POPKIT_THREADS caps its size.
pub fn thread_pool() -> &'static rayon::ThreadPool {
    static POOL: Lazy<rayon::ThreadPool> = Lazy::new(|| {
        let threads = std::env::var("POPKIT_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("failed to build worker pool")
    });
    &POOL
}

/// State of the agent at position `idx` when agents are laid out by state
/// in declaration order.
fn state_at(counts: &[u64], mut idx: u64) -> usize {
    for (s, &k) in counts.iter().enumerate() {
        if idx < k {
            return s;
        }
        idx -= k;
    }
    unreachable!("agent index out of range")
}

/// One literal interaction: draw two distinct agents uniformly at random
/// and apply their transition. Returns the next configuration and the
/// applied transition (`None` marks a null interaction).
pub fn step<R: Rng>(
    c: &Configuration,
    p: &Protocol,
    rng: &mut R,
) -> Result<(Configuration, Option<Transition>), SimError> {
    let n = c.n();
    if n < 2 {
        return Err(SimError::PopulationTooSmall(n));
    }
    let a = state_at(c.counts(), rng.gen_range(0..n));
    // Second draw excludes the first agent: remove it from its state's pool.
    let mut rest: Vec<u64> = c.counts().to_vec();
    rest[a] -= 1;
    let b = state_at(&rest, rng.gen_range(0..n - 1));
    let t = p.lookup(a, b);
    if t.is_null() {
        Ok((c.clone(), None))
    } else {
        Ok((c.apply(&t)?, Some(t)))
    }
}

/// Integer sampling weight of `t` in `c`: the number of ordered agent
/// pairs whose states form `t`'s input pair.
fn ordered_pair_weight(c: &Configuration, t: &Transition) -> u64 {
    if t.r1 == t.r2 {
        let k = c.count(t.r1);
        k * k.saturating_sub(1)
    } else {
        2 * c.count(t.r1) * c.count(t.r2)
    }
}

/// Simulates one trial from the protocol's initial configuration until
/// `stop` is satisfied or `cap` interactions have elapsed (flagged as a
/// timeout, including the case where no transition can ever fire again).
pub fn run_trial<R: Rng>(
    p: &Protocol,
    n: u64,
    stop: &StopCondition,
    rng: &mut R,
    cap: u64,
) -> Result<Trace, SimError> {
    if let StopCondition::Membership { n: expected, .. } = stop {
        if *expected != n {
            return Err(SimError::MembershipMismatch { expected: *expected, got: n });
        }
    }
    let initial = p.eval_init(n)?;
    let mut c = initial.clone();
    let mut steps: Vec<TraceStep> = Vec::new();
    let mut interactions: u64 = 0;
    let mut timed_out = false;
    let ordered_pairs = n.saturating_mul(n.saturating_sub(1));
    let mut weights: Vec<u64> = vec![0; p.transitions().len()];

    loop {
        if stop.is_hit(&c) {
            break;
        }
        if interactions >= cap {
            timed_out = true;
            break;
        }
        let remaining = cap - interactions;

        let mut total: u64 = 0;
        for (w, t) in weights.iter_mut().zip(p.transitions()) {
            *w = ordered_pair_weight(&c, t);
            total += *w;
        }
        if total == 0 {
            // Silent configuration: every future interaction is null.
            interactions = cap;
            timed_out = true;
            break;
        }

        // Length of the null run before the next non-null interaction is
        // geometric with success probability q; sample it in one draw.
        let q = total as f64 / ordered_pairs as f64;
        let nulls = if q >= 1.0 {
            0.0
        } else {
            let u = 1.0 - rng.gen::<f64>(); // in (0, 1]
            (u.ln() / (-q).ln_1p()).floor()
        };
        if nulls.is_nan() || nulls > (remaining - 1) as f64 {
            // The budget runs out inside the null run.
            interactions = cap;
            timed_out = true;
            break;
        }
        interactions += nulls as u64 + 1;

        // Pick the non-null transition proportionally to its pair weight.
        let mut pick = rng.gen_range(0..total);
        let mut chosen = p.transitions()[0];
        for (t, w) in p.transitions().iter().zip(&weights) {
            if pick < *w {
                chosen = *t;
                break;
            }
            pick -= w;
        }
        c.apply_in_place(&chosen);
        steps.push(TraceStep { index: interactions, transition: chosen });
    }

    Ok(Trace { initial, steps, interactions_total: interactions, final_config: c, timed_out })
}

/// Mean parallel time to `stop` over independent seeded trials, run
/// concurrently with per-trial RNG substreams and the default budget.
pub fn estimate_time(
    p: &Protocol,
    n: u64,
    trials: u64,
    stop: &StopCondition,
    seed: u64,
) -> Result<TimeEstimate, SimError> {
    let results: Result<Vec<(f64, bool)>, SimError> = thread_pool().install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(seed, t);
                let tr = run_trial(p, n, stop, &mut rng, default_cap(n))?;
                Ok((tr.parallel_time(), tr.timed_out))
            })
            .collect()
    });
    let results = results?;
    let per_trial_times: Vec<f64> = results.iter().map(|r| r.0).collect();
    let timeouts = results.iter().filter(|r| r.1).count() as u64;
    let mean = per_trial_times.iter().sum::<f64>() / per_trial_times.len().max(1) as f64;
    let std_error = if per_trial_times.len() > 1 {
        let var = per_trial_times.iter().map(|t| (t - mean).powi(2)).sum::<f64>()
            / (per_trial_times.len() - 1) as f64;
        (var / per_trial_times.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok(TimeEstimate { trials, mean_parallel_time: mean, std_error, per_trial_times, timeouts })
}

/// Interaction index after which the leader-set sum never changes again
/// within the trace: 0 if it is constant throughout, `None` if it changes
/// at the trace's very last interaction (nothing after it confirms
/// convergence).
pub fn convergence_point(tr: &Trace, p: &Protocol) -> Option<u64> {
    let mut c = tr.initial.clone();
    let mut leaders = p.leader_count(&c);
    let mut last_change: u64 = 0;
    for s in &tr.steps {
        c.apply_in_place(&s.transition);
        let now = p.leader_count(&c);
        if now != leaders {
            last_change = s.index;
            leaders = now;
        }
    }
    if last_change != 0 && last_change == tr.interactions_total {
        None
    } else {
        Some(last_change)
    }
}

/// First interaction index whose configuration has every state of the
/// alphabet at count >= beta * n (0 for the initial configuration).
pub fn density_hit(tr: &Trace, beta: f64) -> Option<u64> {
    let n = tr.initial.n();
    let bound = beta * n as f64;
    let dense = |c: &Configuration| c.counts().iter().all(|&k| k as f64 >= bound);
    if dense(&tr.initial) {
        return Some(0);
    }
    let mut c = tr.initial.clone();
    for s in &tr.steps {
        c.apply_in_place(&s.transition);
        if dense(&c) {
            return Some(s.index);
        }
    }
    None
}
