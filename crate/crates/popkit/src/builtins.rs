//! Built-in protocol library.
//!
//! Four protocols ship with the binary:
//!
//! * `simple` — one transition `l l -> l f` from an all-`l` start; elects a
//!   leader in linear parallel time.
//! * `example1` — seeds `floor(n^(1/4))` contenders `r`; the first `r r`
//!   meeting creates the leader, epidemics of `k` absorb the rest. Converges
//!   in sublinear time but a second `r r` firing (a speed fault) creates two
//!   leaders that take linear time to merge.
//! * `example2` — contenders `r` disable the two initial leaders into `l'`;
//!   two disabled leaders merge back into one `l`.
//! * `broken` — `l l -> f f` destroys both leaders; fails stable election.

use std::sync::Arc;

use crate::model::{Configuration, Protocol, Transition};
use crate::parse::parse_protocol;

pub const SIMPLE_SRC: &str = "\
# One-transition leader election: start all leaders, pairs demote one side.
states: l f
init: l = n
leader: l
transition: l l -> l f
";

pub const EXAMPLE1_SRC: &str = "\
# Sublinear-time election: sparse contenders r, leader born from the first
# r r meeting, epidemic state k retires the remaining contenders.
states: r x l k
init: r = floor(n^(1/4)); x = rest
leader: l
transition: r r -> l k
transition: r k -> k k
transition: x k -> k k
transition: l l -> l k
";

pub const EXAMPLE2_SRC: &str = "\
# Two seeded leaders are disabled into l' while contenders r survive;
# disabled leaders merge back into a single l.
states: l l' r x k
init: l = 2; r = floor(n^(1/2)); x = rest
leader: l
transition: r l -> r l'
transition: l' x -> l' k
transition: k x -> k k
transition: k r -> k k
transition: l' l' -> l k
";

pub const BROKEN_SRC: &str = "\
# Deliberately faulty: leader pairs annihilate, so {all f} is a dead end.
states: l f
init: l = n
leader: l
transition: l l -> f f
";

pub const BUILTIN_NAMES: [&str; 4] = ["simple", "example1", "example2", "broken"];

pub fn builtin_source(name: &str) -> Option<&'static str> {
    match name {
        "simple" => Some(SIMPLE_SRC),
        "example1" => Some(EXAMPLE1_SRC),
        "example2" => Some(EXAMPLE2_SRC),
        "broken" => Some(BROKEN_SRC),
        _ => None,
    }
}

pub fn builtin(name: &str) -> Option<Protocol> {
    builtin_source(name).map(|src| parse_protocol(src).expect("built-in protocol must parse"))
}

/// Shareable configuration predicate used as a simulation stop condition.
pub type ConfigPredicate = Arc<dyn Fn(&Configuration) -> bool + Send + Sync>;

/// Analytic stable-leader predicate for a built-in protocol, resolved
/// against `p`'s state names (so it also applies to a file protocol that
/// uses the same names). Each predicate holds exactly on the configurations
/// that are Q-stable with leader count 1:
///
/// * `simple`: l = 1. No transition creates an `l`, so a lone leader is
///   permanent, while two enable `l l -> l f`.
/// * `example1`: l = 1 and r <= 1. `r` is never produced, and a second `l`
///   requires an `r r` meeting.
/// * `example2`: l = 1, r = 0, l' <= 1. `r` is never produced; with no `r`
///   left `l` cannot be disabled and no further `l'` can appear, and a lone
///   `l'` can never find a merge partner. (With r = 0, two `l'` would still
///   enable the leader-creating merge, hence l' <= 1.)
/// * `broken`: l = 1. A lone leader is permanent here too; the protocol's
///   defect is that l = 0 is also absorbing.
pub fn stability_predicate(name: &str, p: &Protocol) -> Option<ConfigPredicate> {
    match name {
        "simple" | "broken" => {
            let l = p.state_id("l")?;
            Some(Arc::new(move |c: &Configuration| c.count(l) == 1))
        }
        "example1" => {
            let l = p.state_id("l")?;
            let r = p.state_id("r")?;
            Some(Arc::new(move |c: &Configuration| c.count(l) == 1 && c.count(r) <= 1))
        }
        "example2" => {
            let l = p.state_id("l")?;
            let lp = p.state_id("l'")?;
            let r = p.state_id("r")?;
            Some(Arc::new(move |c: &Configuration| {
                c.count(l) == 1 && c.count(r) == 0 && c.count(lp) <= 1
            }))
        }
        _ => None,
    }
}

/// Non-null transitions that strictly increase the leader-set sum. A trial
/// has a speed fault when one of these fires more than once (for `example1`
/// that is a second `r r -> l k`, which forces a slow `l l -> l k` cleanup).
pub fn leader_producing_transitions(p: &Protocol) -> Vec<Transition> {
    p.transitions()
        .iter()
        .filter(|t| p.leader_set().iter().map(|&s| t.net(s)).sum::<i64>() > 0)
        .copied()
        .collect()
}

/// Smallest population size whose initial configuration is well defined
/// (all explicit terms nonnegative and summing to at most n).
pub fn min_legal_n(p: &Protocol) -> u64 {
    (1..=1_048_576).find(|&n| p.eval_init(n).is_ok()).unwrap_or(1)
}
