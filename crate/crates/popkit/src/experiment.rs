//! Experiment orchestration: per-n trial batches, scaling fits on log-log
//! data, speed-fault and convergence/stabilization statistics, and CSV
//! emission.

use rayon::prelude::*;
use thiserror::Error;

use crate::builtins::leader_producing_transitions;
use crate::model::Protocol;
use crate::sim::{
    convergence_point, run_trial, thread_pool, trial_rng, SimError, StopCondition,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("timeout rate at n = {n} is {timeouts}/{trials}, above the 1% budget")]
    TimeoutRateExceeded { n: u64, timeouts: u64, trials: u64 },
    #[error("scaling fit needs at least 3 points with distinct n, got {0}")]
    NotEnoughPoints(usize),
    #[error("scaling fit needs positive time values, got {0}")]
    NonpositiveTime(f64),
}

/// Everything kept from one trial after its trace is folded away.
#[derive(Debug, Clone)]
pub struct TrialSummary {
    pub trial: u64,
    pub interactions: u64,
    pub parallel_time: f64,
    pub timed_out: bool,
    /// Firings of leader-producing transitions; more than one is a speed
    /// fault (the election happened twice).
    pub leader_births: u64,
    /// Interaction index after which the leader count never changed.
    pub converged_at: Option<u64>,
}

impl TrialSummary {
    pub fn speed_fault(&self) -> bool {
        self.leader_births > 1
    }
}

/// Per-population-size aggregate of an experiment.
#[derive(Debug, Clone)]
pub struct PerN {
    pub n: u64,
    pub mean_parallel_time: f64,
    pub std_error: f64,
    pub timeouts: u64,
    pub speed_faults: u64,
    /// Among non-speed-fault, non-timeout trials: how many converged
    /// strictly before they stabilized (stopped).
    pub converged_strictly_before_stop: u64,
    pub clean_trials: u64,
    pub trials: Vec<TrialSummary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub protocol: String,
    pub per_n: Vec<PerN>,
    /// Log-log slope fit over the per-n means; present with >= 3 sizes.
    pub fit: Option<Fit>,
}

#[derive(Debug, Clone, Copy)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit in log space.
    pub residual: f64,
}

/// Ordinary least squares of log(time) against log(n).
pub fn scaling_fit(points: &[(f64, f64)]) -> Result<Fit, ExperimentError> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    if xs.len() < 3 {
        return Err(ExperimentError::NotEnoughPoints(xs.len()));
    }
    for &(_, t) in points {
        if t <= 0.0 {
            return Err(ExperimentError::NonpositiveTime(t));
        }
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(n, t)| (n.ln(), t.ln())).collect();
    let m = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let intercept = (sy - slope * sx) / m;
    let residual = (logs
        .iter()
        .map(|&(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(Fit { slope, intercept, residual })
}

/// Runs `trials` seeded trials at every population size, folding each trace
/// into a summary as soon as it finishes. Fails if any size times out in
/// more than 1% of its trials.
pub fn run_experiment(
    p: &Protocol,
    label: &str,
    ns: &[u64],
    trials: u64,
    stop: &StopCondition,
    seed: u64,
    cap: impl Fn(u64) -> u64,
) -> Result<ExperimentResult, ExperimentError> {
    let births = leader_producing_transitions(p);
    let mut per_n = Vec::with_capacity(ns.len());
    for &n in ns {
        let budget = cap(n);
        let summaries: Result<Vec<TrialSummary>, SimError> = thread_pool().install(|| {
            (0..trials)
                .into_par_iter()
                .map(|trial| {
                    let mut rng = trial_rng(seed, trial);
                    let tr = run_trial(p, n, stop, &mut rng, budget)?;
                    let leader_births = tr
                        .steps
                        .iter()
                        .filter(|s| births.contains(&s.transition))
                        .count() as u64;
                    Ok(TrialSummary {
                        trial,
                        interactions: tr.interactions_total,
                        parallel_time: tr.parallel_time(),
                        timed_out: tr.timed_out,
                        leader_births,
                        converged_at: convergence_point(&tr, p),
                    })
                })
                .collect()
        });
        let summaries = summaries?;
        let timeouts = summaries.iter().filter(|s| s.timed_out).count() as u64;
        if timeouts * 100 > trials {
            return Err(ExperimentError::TimeoutRateExceeded { n, timeouts, trials });
        }
        let mean = summaries.iter().map(|s| s.parallel_time).sum::<f64>()
            / summaries.len().max(1) as f64;
        let std_error = if summaries.len() > 1 {
            let var = summaries
                .iter()
                .map(|s| (s.parallel_time - mean).powi(2))
                .sum::<f64>()
                / (summaries.len() - 1) as f64;
            (var / summaries.len() as f64).sqrt()
        } else {
            0.0
        };
        let speed_faults = summaries.iter().filter(|s| s.speed_fault()).count() as u64;
        let clean: Vec<&TrialSummary> = summaries
            .iter()
            .filter(|s| !s.speed_fault() && !s.timed_out)
            .collect();
        let converged_strictly_before_stop = clean
            .iter()
            .filter(|s| matches!(s.converged_at, Some(c) if c < s.interactions))
            .count() as u64;
        per_n.push(PerN {
            n,
            mean_parallel_time: mean,
            std_error,
            timeouts,
            speed_faults,
            converged_strictly_before_stop,
            clean_trials: clean.len() as u64,
            trials: summaries,
        });
    }
    let points: Vec<(f64, f64)> =
        per_n.iter().map(|p| (p.n as f64, p.mean_parallel_time)).collect();
    let fit = if per_n.len() >= 3 { Some(scaling_fit(&points)?) } else { None };
    Ok(ExperimentResult { protocol: label.to_string(), per_n, fit })
}

pub const TRIALS_CSV_HEADER: &str =
    "protocol,n,seed,trial,stop_kind,interactions,parallel_time,converged_at,timed_out";

/// One CSV row per trial, in trial order; byte-deterministic for a fixed
/// invocation.
pub fn trials_csv(
    protocol: &str,
    n: u64,
    seed: u64,
    stop_kind: &str,
    rows: &[TrialSummary],
) -> String {
    let mut out = String::from(TRIALS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let converged = r.converged_at.map(|c| c.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{protocol},{n},{seed},{trial},{stop_kind},{interactions},{time},{converged},{timed_out}\n",
            trial = r.trial,
            interactions = r.interactions,
            time = r.parallel_time,
            timed_out = r.timed_out,
        ));
    }
    out
}
