//! Command-line front end: simulation, exact verification, hitting times,
//! path analysis, and scaling experiments over built-in or file-defined
//! protocols.
//!
//! Exit codes: 0 success, 1 verification/analysis failure, 2 usage or
//! input errors.

use std::collections::HashSet;
use std::fs;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use popkit::analysis::{
    bottleneck_lower_bound, find_bottlenecks, transition_ordering, ThresholdParams,
};
use popkit::analysis::{adjust_surgery, append_surgery, PathWindow};
use popkit::builtins::{builtin, stability_predicate, BUILTIN_NAMES};
use popkit::experiment::{run_experiment, trials_csv, TRIALS_CSV_HEADER};
use popkit::sim::{default_cap, run_trial, trial_rng, StopCondition};
use popkit::verify::{check_stable_election, exact_expected_time, explore, export_text};
use popkit::{parse_protocol, Configuration, Protocol};

const DEFAULT_NODE_CAP: usize = 5_000_000;

#[derive(Parser)]
#[command(name = "popkit", about = "Population protocol workbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ProtoArgs {
    /// `builtin:NAME` (simple, example1, example2, broken) or a file path
    #[arg(long)]
    protocol: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded trials and report per-trial interaction counts
    Simulate {
        #[command(flatten)]
        proto: ProtoArgs,
        /// Population size(s): `N` or `A..B:STEP` or `A..B:xK`
        #[arg(long)]
        n: String,
        #[arg(long, default_value_t = 1)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `predicate:NAME`, `membership`, `density:BETA`, or `cap`
        #[arg(long)]
        stop: Option<String>,
        /// Interaction budget per trial (default 10^4 * n^2)
        #[arg(long)]
        cap: Option<u64>,
        /// Write the per-trial CSV here instead of stdout
        #[arg(long)]
        out: Option<String>,
    },
    /// Exact expected parallel time to a stable-leader configuration
    Exact {
        #[command(flatten)]
        proto: ProtoArgs,
        #[arg(long)]
        n: u64,
    },
    /// Check stable leader election by exhaustive reachability
    Verify {
        #[command(flatten)]
        proto: ProtoArgs,
        #[arg(long)]
        n: u64,
        /// Write the reachability graph as text
        #[arg(long)]
        out: Option<String>,
    },
    /// Find b-bottlenecks along one recorded trial
    Bottleneck {
        #[command(flatten)]
        proto: ProtoArgs,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Bottleneck threshold: both inputs at count <= b
        #[arg(long)]
        b: u64,
        #[arg(long)]
        stop: Option<String>,
        #[arg(long)]
        cap: Option<u64>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Order the states that drain from >= b2 to <= b1 along one trial
    Order {
        #[command(flatten)]
        proto: ProtoArgs,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        b1: u64,
        #[arg(long)]
        b2: u64,
        #[arg(long)]
        stop: Option<String>,
        #[arg(long)]
        cap: Option<u64>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Ordering plus an append-surgery plan that zeroes the drained states
    Surgery {
        #[command(flatten)]
        proto: ProtoArgs,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        b1: u64,
        #[arg(long)]
        b2: u64,
        #[arg(long)]
        stop: Option<String>,
        #[arg(long)]
        cap: Option<u64>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Trials over an n-grid with a log-log scaling fit and fault counts
    Experiment {
        #[command(flatten)]
        proto: ProtoArgs,
        #[arg(long)]
        n: String,
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        stop: Option<String>,
        #[arg(long)]
        cap: Option<u64>,
        #[arg(long)]
        out: Option<String>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
    fn failure(msg: impl Into<String>) -> Self {
        CliError::Failure(msg.into())
    }
}

/// Loaded protocol plus the label used in reports and CSV rows.
struct Loaded {
    protocol: Protocol,
    label: String,
    /// builtin name when the protocol came from `builtin:`
    builtin: Option<String>,
}

fn load_protocol(spec: &str) -> Result<Loaded, CliError> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        let protocol = builtin(name).ok_or_else(|| {
            CliError::usage(format!(
                "unknown builtin {name:?}; available: {}",
                BUILTIN_NAMES.join(", ")
            ))
        })?;
        return Ok(Loaded { protocol, label: name.to_string(), builtin: Some(name.to_string()) });
    }
    let src = fs::read_to_string(spec)
        .map_err(|e| CliError::usage(format!("cannot read {spec}: {e}")))?;
    let protocol =
        parse_protocol(&src).map_err(|e| CliError::usage(format!("{spec}: {e}")))?;
    let label = std::path::Path::new(spec)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| spec.to_string());
    Ok(Loaded { protocol, label, builtin: None })
}

/// `N`, `A..B:STEP` (additive), or `A..B:xK` (multiplicative).
fn parse_n_grid(spec: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::usage(format!("cannot parse --n {spec:?}: expected N, A..B:STEP, or A..B:xK"));
    if let Ok(n) = spec.parse::<u64>() {
        return Ok(vec![n]);
    }
    let (range, step) = match spec.split_once(':') {
        Some((r, s)) => (r, Some(s)),
        None => (spec, None),
    };
    let (a, b) = range.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.parse().map_err(|_| bad())?;
    let b: u64 = b.parse().map_err(|_| bad())?;
    if a == 0 || a > b {
        return Err(bad());
    }
    let mut out = Vec::new();
    match step {
        Some(s) if s.starts_with('x') => {
            let k: u64 = s[1..].parse().map_err(|_| bad())?;
            if k < 2 {
                return Err(bad());
            }
            let mut n = a;
            while n <= b {
                out.push(n);
                match n.checked_mul(k) {
                    Some(m) => n = m,
                    None => break,
                }
            }
        }
        step => {
            let s: u64 = step.map(|s| s.parse().map_err(|_| bad())).transpose()?.unwrap_or(1);
            if s == 0 {
                return Err(bad());
            }
            let mut n = a;
            while n <= b {
                out.push(n);
                n = match n.checked_add(s) {
                    Some(m) => m,
                    None => break,
                };
            }
        }
    }
    Ok(out)
}

/// Builds the stop condition. `membership` needs a concrete n because the
/// stable-leader set is computed by exhaustive reachability at that size.
fn build_stop(
    spec: Option<&str>,
    loaded: &Loaded,
    n_for_membership: Option<u64>,
) -> Result<StopCondition, CliError> {
    let default = loaded.builtin.clone().map(|b| format!("predicate:{b}"));
    let spec = match (spec, &default) {
        (Some(s), _) => s.to_string(),
        (None, Some(d)) => d.clone(),
        (None, None) => "membership".to_string(),
    };
    if let Some(name) = spec.strip_prefix("predicate:") {
        let test = stability_predicate(name, &loaded.protocol).ok_or_else(|| {
            CliError::usage(format!(
                "no analytic predicate {name:?} applies to this protocol"
            ))
        })?;
        return Ok(StopCondition::Predicate { name: name.to_string(), test });
    }
    if let Some(beta) = spec.strip_prefix("density:") {
        let beta: f64 = beta
            .parse()
            .map_err(|_| CliError::usage(format!("bad density threshold {beta:?}")))?;
        if !(0.0..=1.0).contains(&beta) {
            return Err(CliError::usage("density threshold must be in [0, 1]"));
        }
        return Ok(StopCondition::Density(beta));
    }
    match spec.as_str() {
        "cap" => Ok(StopCondition::Cap),
        "membership" => {
            let n = n_for_membership
                .ok_or_else(|| CliError::usage("membership stop needs a single --n"))?;
            let (g, verdict) = graph_and_verdict(loaded, n)?;
            let set: HashSet<Configuration> = (0..g.len())
                .filter(|&v| verdict.stable_leader_nodes[v])
                .map(|v| g.nodes[v].clone())
                .collect();
            Ok(StopCondition::Membership { n, set: Arc::new(set) })
        }
        other => Err(CliError::usage(format!("unknown stop condition {other:?}"))),
    }
}

fn init_config(loaded: &Loaded, n: u64) -> Result<Configuration, CliError> {
    loaded
        .protocol
        .eval_init(n)
        .map_err(|e| CliError::usage(format!("n = {n} is not a legal population size: {e}")))
}

fn graph_and_verdict(
    loaded: &Loaded,
    n: u64,
) -> Result<(popkit::verify::ReachabilityGraph, popkit::verify::StabilityVerdict), CliError> {
    let root = init_config(loaded, n)?;
    let g = explore(&loaded.protocol, &root, DEFAULT_NODE_CAP)
        .map_err(|e| CliError::failure(e.to_string()))?;
    let verdict = check_stable_election(&g, &loaded.protocol);
    Ok((g, verdict))
}

fn emit(out: Option<&str>, body: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, body)
            .map_err(|e| CliError::usage(format!("cannot write {path}: {e}"))),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

/// Runs one recorded trial and packages it as a path window for analysis.
fn recorded_window(
    loaded: &Loaded,
    n: u64,
    seed: u64,
    stop: Option<&str>,
    cap: Option<u64>,
) -> Result<PathWindow, CliError> {
    let stop = build_stop(stop, loaded, Some(n))?;
    let budget = cap.unwrap_or_else(|| default_cap(n));
    init_config(loaded, n)?;
    let mut rng = trial_rng(seed, 0);
    let tr = run_trial(&loaded.protocol, n, &stop, &mut rng, budget)
        .map_err(|e| CliError::failure(e.to_string()))?;
    if tr.timed_out {
        return Err(CliError::failure(format!(
            "trial timed out after {} interactions; raise --cap or loosen --stop",
            tr.interactions_total
        )));
    }
    Ok(PathWindow::from_trace(&tr))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { proto, n, trials, seed, stop, cap, out } => {
            let loaded = load_protocol(&proto.protocol)?;
            let ns = parse_n_grid(&n)?;
            let single = (ns.len() == 1).then(|| ns[0]);
            let stop = build_stop(stop.as_deref(), &loaded, single)?;
            let capf = |n: u64| cap.unwrap_or_else(|| default_cap(n));
            for &n in &ns {
                init_config(&loaded, n)?;
            }
            let r = run_experiment(&loaded.protocol, &loaded.label, &ns, trials, &stop, seed, capf)
                .map_err(|e| CliError::failure(e.to_string()))?;
            let mut csv = String::from(TRIALS_CSV_HEADER);
            csv.push('\n');
            for pn in &r.per_n {
                let block = trials_csv(&loaded.label, pn.n, seed, &stop.kind_label(), &pn.trials);
                csv.push_str(block.split_once('\n').map(|(_, rest)| rest).unwrap_or(""));
                eprintln!(
                    "n = {:6}: mean parallel time {:.4} (se {:.4}), {} timeout(s) over {} trial(s)",
                    pn.n, pn.mean_parallel_time, pn.std_error, pn.timeouts, trials
                );
            }
            emit(out.as_deref(), &csv)
        }
        Command::Exact { proto, n } => {
            let loaded = load_protocol(&proto.protocol)?;
            let (g, verdict) = graph_and_verdict(&loaded, n)?;
            let targets: HashSet<usize> =
                (0..g.len()).filter(|&v| verdict.stable_leader_nodes[v]).collect();
            if targets.is_empty() {
                return Err(CliError::failure(
                    "no stable-leader configuration is reachable",
                ));
            }
            let times = exact_expected_time(&g, &targets);
            let t = times[g.root];
            if !t.is_finite() {
                return Err(CliError::failure(
                    "expected time from the initial configuration is infinite",
                ));
            }
            println!("{t:.6}");
            Ok(())
        }
        Command::Verify { proto, n, out } => {
            let loaded = load_protocol(&proto.protocol)?;
            let (g, verdict) = graph_and_verdict(&loaded, n)?;
            if let Some(path) = &out {
                emit(Some(path), &export_text(&g, &loaded.protocol))?;
            }
            println!(
                "{}: n = {n}, {} reachable configuration(s), def2_holds={}",
                loaded.label,
                g.len(),
                verdict.def2_holds
            );
            match verdict.witness {
                None => Ok(()),
                Some(w) => Err(CliError::failure(format!(
                    "witness: {} cannot reach a stable configuration with exactly one leader",
                    loaded.protocol.format_config(&w)
                ))),
            }
        }
        Command::Bottleneck { proto, n, seed, b, stop, cap, out } => {
            let loaded = load_protocol(&proto.protocol)?;
            let w = recorded_window(&loaded, n, seed, stop.as_deref(), cap)?;
            let hits = find_bottlenecks(&w, b);
            let mut csv = String::from("position,transition\n");
            for (pos, t) in &hits {
                csv.push_str(&format!("{pos},{}\n", t.display(loaded.protocol.states())));
            }
            println!(
                "{}: {} of {} recorded transition(s) are {b}-bottlenecks; if every path \
                 to the target has one, expected parallel time >= {:.4}",
                loaded.label,
                hits.len(),
                w.transitions.len(),
                bottleneck_lower_bound(b, loaded.protocol.num_states(), n)
            );
            emit(out.as_deref(), &csv)
        }
        Command::Order { proto, n, seed, b1, b2, stop, cap, out } => {
            let loaded = load_protocol(&proto.protocol)?;
            let w = recorded_window(&loaded, n, seed, stop.as_deref(), cap)?;
            let o = transition_ordering(&w, ThresholdParams { b1, b2 })
                .map_err(|e| CliError::failure(e.to_string()))?;
            println!(
                "{}: ordered {} drained state(s) against {} kept state(s)",
                loaded.label,
                o.delta.len(),
                o.gamma.len()
            );
            emit(out.as_deref(), &o.render(&loaded.protocol))
        }
        Command::Surgery { proto, n, seed, b1, b2, stop, cap, out } => {
            let loaded = load_protocol(&proto.protocol)?;
            let w = recorded_window(&loaded, n, seed, stop.as_deref(), cap)?;
            let o = transition_ordering(&w, ThresholdParams { b1, b2 })
                .map_err(|e| CliError::failure(e.to_string()))?;
            let append = append_surgery(&w, &o).map_err(|e| CliError::failure(e.to_string()))?;
            let zero = Configuration::new(vec![0; loaded.protocol.num_states()]);
            let adjust = adjust_surgery(&w, &o, &zero)
                .map_err(|e| CliError::failure(e.to_string()))?;
            let mut body = o.render(&loaded.protocol);
            body.push('\n');
            body.push_str(&append.render(&loaded.protocol, &o));
            body.push('\n');
            body.push_str(&adjust.render(&loaded.protocol, &o));
            println!(
                "{}: append plan consumes extra {}, adjust-to-zero plan pads with {}",
                loaded.label,
                loaded.protocol.format_config(&append.extra),
                loaded.protocol.format_config(&adjust.padding)
            );
            emit(out.as_deref(), &body)
        }
        Command::Experiment { proto, n, trials, seed, stop, cap, out } => {
            let loaded = load_protocol(&proto.protocol)?;
            let ns = parse_n_grid(&n)?;
            let single = (ns.len() == 1).then(|| ns[0]);
            let stop = build_stop(stop.as_deref(), &loaded, single)?;
            let capf = |n: u64| cap.unwrap_or_else(|| default_cap(n));
            for &n in &ns {
                init_config(&loaded, n)?;
            }
            let r = run_experiment(&loaded.protocol, &loaded.label, &ns, trials, &stop, seed, capf)
                .map_err(|e| CliError::failure(e.to_string()))?;
            let mut csv = String::from(TRIALS_CSV_HEADER);
            csv.push('\n');
            for pn in &r.per_n {
                let block = trials_csv(&loaded.label, pn.n, seed, &stop.kind_label(), &pn.trials);
                csv.push_str(block.split_once('\n').map(|(_, rest)| rest).unwrap_or(""));
                println!(
                    "n = {:6}: mean parallel time {:.4} (se {:.4}), speed faults {}/{}, \
                     converged-before-stop {}/{} clean trial(s), {} timeout(s)",
                    pn.n,
                    pn.mean_parallel_time,
                    pn.std_error,
                    pn.speed_faults,
                    trials,
                    pn.converged_strictly_before_stop,
                    pn.clean_trials,
                    pn.timeouts
                );
            }
            if let Some(fit) = r.fit {
                println!(
                    "log-log fit: slope {:.4}, intercept {:.4}, rms residual {:.4}",
                    fit.slope, fit.intercept, fit.residual
                );
            }
            emit(out.as_deref(), &csv)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failure(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}
