//! Core model: protocols, configurations, transitions, interaction
//! probabilities.
//!
//! A protocol is a finite state alphabet together with a symmetric
//! deterministic transition function over unordered state pairs. Pairs
//! without an explicit rule are null transitions: the agents meet but do
//! not change state. Configurations are count vectors over the alphabet;
//! agents are anonymous, so counts describe the system completely.

use std::collections::HashMap;

use thiserror::Error;

/// Index into a protocol's state alphabet.
pub type StateId = usize;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("population must contain at least {needed} agents, got {got}")]
    PopulationTooSmall { needed: u64, got: u64 },
    #[error("transition {0} not applicable: insufficient input counts")]
    Inapplicable(String),
    #[error("init expressions sum to {sum} but population is {n}")]
    InitSumMismatch { sum: i64, n: u64 },
    #[error("init expression for state `{state}` evaluates to negative value {value}")]
    InitNegative { state: String, value: i64 },
    #[error("init balance term is negative: explicit terms sum to {sum} > n = {n}")]
    InitNegativeBalance { sum: i64, n: u64 },
    #[error("init exponent overflow evaluating floor(n^({a}/{b})) at n = {n}")]
    InitOverflow { n: u64, a: u32, b: u32 },
}

/// A transition `r1,r2 -> p1,p2`. Inputs and outputs are each stored
/// sorted, which makes the unordered-pair semantics explicit and lets
/// transitions be compared and hashed directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transition {
    pub r1: StateId,
    pub r2: StateId,
    pub p1: StateId,
    pub p2: StateId,
}

impl Transition {
    pub fn new(r1: StateId, r2: StateId, p1: StateId, p2: StateId) -> Self {
        let (r1, r2) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let (p1, p2) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        Transition { r1, r2, p1, p2 }
    }

    /// True iff applying the transition leaves every count unchanged.
    pub fn is_null(&self) -> bool {
        (self.r1, self.r2) == (self.p1, self.p2)
    }

    /// Net count change of state `s` under one application.
    pub fn net(&self, s: StateId) -> i64 {
        let mut d = 0i64;
        if self.p1 == s {
            d += 1;
        }
        if self.p2 == s {
            d += 1;
        }
        if self.r1 == s {
            d -= 1;
        }
        if self.r2 == s {
            d -= 1;
        }
        d
    }

    /// True iff one application strictly decreases the count of `s`.
    pub fn consumes(&self, s: StateId) -> bool {
        self.net(s) < 0
    }

    /// True iff one application strictly increases the count of `s`.
    pub fn produces(&self, s: StateId) -> bool {
        self.net(s) > 0
    }

    pub fn display(&self, states: &[String]) -> String {
        format!(
            "{} {} -> {} {}",
            states[self.r1], states[self.r2], states[self.p1], states[self.p2]
        )
    }
}

/// A count vector over the protocol's state alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    counts: Vec<u64>,
}

impl Configuration {
    pub fn new(counts: Vec<u64>) -> Self {
        Configuration { counts }
    }

    pub fn zero(num_states: usize) -> Self {
        Configuration { counts: vec![0; num_states] }
    }

    pub fn count(&self, s: StateId) -> u64 {
        self.counts[s]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn num_states(&self) -> usize {
        self.counts.len()
    }

    /// Total agent count (the 1-norm).
    pub fn n(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn set(&mut self, s: StateId, count: u64) {
        self.counts[s] = count;
    }

    pub fn add(&mut self, other: &Configuration) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
    }

    /// True iff `t`'s input multiset is available (c(r) >= 2 when r1 = r2).
    pub fn can_apply(&self, t: &Transition) -> bool {
        if t.r1 == t.r2 {
            self.counts[t.r1] >= 2
        } else {
            self.counts[t.r1] >= 1 && self.counts[t.r2] >= 1
        }
    }

    /// Returns `c - {r1,r2} + {p1,p2}`.
    pub fn apply(&self, t: &Transition) -> Result<Configuration, ModelError> {
        if !self.can_apply(t) {
            return Err(ModelError::Inapplicable(format!("{:?}", t)));
        }
        let mut out = self.clone();
        out.apply_in_place(t);
        Ok(out)
    }

    /// In-place variant for hot loops; caller must have checked `can_apply`.
    pub fn apply_in_place(&mut self, t: &Transition) {
        self.counts[t.r1] -= 1;
        self.counts[t.r2] -= 1;
        self.counts[t.p1] += 1;
        self.counts[t.p2] += 1;
    }
}

/// Probability that the next uniformly random agent pair has state multiset
/// `{t.r1, t.r2}`. Both orders of a mixed pair are counted, matching a draw
/// of two distinct agents from the n(n-1) ordered pairs.
pub fn pair_probability(c: &Configuration, t: &Transition) -> Result<f64, ModelError> {
    let n = c.n();
    if n < 2 {
        return Err(ModelError::PopulationTooSmall { needed: 2, got: n });
    }
    let pairs = (n as f64) * ((n - 1) as f64);
    let w = if t.r1 == t.r2 {
        let b = c.count(t.r1) as f64;
        b * (b - 1.0)
    } else {
        2.0 * c.count(t.r1) as f64 * c.count(t.r2) as f64
    };
    Ok(w / pairs)
}

/// Per-state initial-count expression. `Rest` is the balance term: the
/// population size minus every explicit term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitExpr {
    Lit(u64),
    N,
    /// floor(n^(a/b))
    FloorPow(u32, u32),
    Add(Box<InitExpr>, Box<InitExpr>),
    Sub(Box<InitExpr>, Box<InitExpr>),
    Rest,
}

impl InitExpr {
    pub fn contains_rest(&self) -> bool {
        match self {
            InitExpr::Rest => true,
            InitExpr::Add(a, b) | InitExpr::Sub(a, b) => a.contains_rest() || b.contains_rest(),
            _ => false,
        }
    }

    fn eval(&self, n: u64) -> Result<i64, ModelError> {
        Ok(match self {
            InitExpr::Lit(v) => *v as i64,
            InitExpr::N => n as i64,
            InitExpr::FloorPow(a, b) => floor_pow(n, *a, *b)? as i64,
            InitExpr::Add(x, y) => x.eval(n)? + y.eval(n)?,
            InitExpr::Sub(x, y) => x.eval(n)? - y.eval(n)?,
            InitExpr::Rest => unreachable!("rest handled by eval_init"),
        })
    }
}

/// Largest k with k^b <= n^a, i.e. floor(n^(a/b)).
fn floor_pow(n: u64, a: u32, b: u32) -> Result<u64, ModelError> {
    let target = (n as u128)
        .checked_pow(a)
        .ok_or(ModelError::InitOverflow { n, a, b })?;
    let (mut lo, mut hi) = (0u64, n.max(1));
    // invariant: lo^b <= n^a < (hi+1)^b
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        match (mid as u128).checked_pow(b) {
            Some(p) if p <= target => lo = mid,
            _ => hi = mid - 1,
        }
    }
    Ok(lo)
}

/// A population protocol: state alphabet, symmetric transition table,
/// initial-configuration expressions, leader-state set, and the
/// distinguished transition subset Q.
#[derive(Debug, Clone)]
pub struct Protocol {
    states: Vec<String>,
    transitions: Vec<Transition>,
    delta: HashMap<(StateId, StateId), (StateId, StateId)>,
    init: Vec<(StateId, InitExpr)>,
    leader_set: Vec<StateId>,
    q_set: Vec<Transition>,
}

impl Protocol {
    /// Assembles a protocol from parsed parts. `q_set = None` derives Q as
    /// the transitions that alter the total leader count.
    pub fn assemble(
        states: Vec<String>,
        transitions: Vec<Transition>,
        init: Vec<(StateId, InitExpr)>,
        leader_set: Vec<StateId>,
        q_set: Option<Vec<Transition>>,
    ) -> Self {
        let mut delta = HashMap::new();
        for t in &transitions {
            delta.insert((t.r1, t.r2), (t.p1, t.p2));
        }
        let mut p = Protocol { states, transitions, delta, init, leader_set, q_set: Vec::new() };
        p.q_set = q_set.unwrap_or_else(|| p.derive_leader_q());
        p
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_id(&self, name: &str) -> Option<StateId> {
        self.states.iter().position(|s| s == name)
    }

    /// Non-null transitions in declaration order.
    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn leader_set(&self) -> &[StateId] {
        &self.leader_set
    }

    pub fn q_set(&self) -> &[Transition] {
        &self.q_set
    }

    pub fn init_exprs(&self) -> &[(StateId, InitExpr)] {
        &self.init
    }

    /// The (possibly null) transition for the unordered pair `{a, b}`.
    pub fn lookup(&self, a: StateId, b: StateId) -> Transition {
        let key = if a <= b { (a, b) } else { (b, a) };
        match self.delta.get(&key) {
            Some(&(p1, p2)) => Transition::new(key.0, key.1, p1, p2),
            None => Transition::new(key.0, key.1, key.0, key.1),
        }
    }

    /// Non-null transitions applicable in `c`, in declaration order.
    pub fn enabled_transitions(&self, c: &Configuration) -> Vec<Transition> {
        self.transitions.iter().filter(|t| c.can_apply(t)).copied().collect()
    }

    /// Evaluates the initial configuration for a population of `n` agents.
    pub fn eval_init(&self, n: u64) -> Result<Configuration, ModelError> {
        let mut counts = vec![0u64; self.states.len()];
        let mut explicit_sum: i64 = 0;
        let mut rest_state: Option<StateId> = None;
        for (s, expr) in &self.init {
            if expr.contains_rest() {
                rest_state = Some(*s);
                continue;
            }
            let v = expr.eval(n)?;
            if v < 0 {
                return Err(ModelError::InitNegative {
                    state: self.states[*s].clone(),
                    value: v,
                });
            }
            counts[*s] = v as u64;
            explicit_sum += v;
        }
        match rest_state {
            Some(s) => {
                if explicit_sum > n as i64 {
                    return Err(ModelError::InitNegativeBalance { sum: explicit_sum, n });
                }
                counts[s] = n - explicit_sum as u64;
            }
            None => {
                if explicit_sum != n as i64 {
                    return Err(ModelError::InitSumMismatch { sum: explicit_sum, n });
                }
            }
        }
        Ok(Configuration::new(counts))
    }

    /// Total count over the leader set.
    pub fn leader_count(&self, c: &Configuration) -> u64 {
        self.leader_set.iter().map(|&s| c.count(s)).sum()
    }

    /// Non-null transitions whose application changes the leader-set sum.
    /// This is the default Q when the protocol file omits `q:` lines.
    pub fn derive_leader_q(&self) -> Vec<Transition> {
        self.transitions
            .iter()
            .filter(|t| self.leader_set.iter().map(|&s| t.net(s)).sum::<i64>() != 0)
            .copied()
            .collect()
    }

    /// Serializes `c` as `{count state, ...}`, declaration order, zeros omitted.
    pub fn format_config(&self, c: &Configuration) -> String {
        let parts: Vec<String> = (0..self.states.len())
            .filter(|&s| c.count(s) > 0)
            .map(|s| format!("{} {}", c.count(s), self.states[s]))
            .collect();
        format!("{{{}}}", parts.join(", "))
    }
}
