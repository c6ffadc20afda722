//! Exact verification on small populations.
//!
//! Builds the explicit graph of every configuration reachable from a root,
//! computes Q-stable sets (configurations from which no Q-transition can
//! ever fire), checks stable leader election, and solves the first-step
//! equations for exact expected hitting times. Agents are anonymous, so
//! nodes are keyed by their count vector; no further symmetry reduction
//! exists.

use std::collections::{HashMap, HashSet, VecDeque};

use thiserror::Error;

use crate::model::{pair_probability, Configuration, Protocol, Transition};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("reachable configuration count exceeds the node cap of {cap}; exact verification is infeasible at this population size")]
    NodeCapExceeded { cap: usize },
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub transition: Transition,
    pub target: usize,
    pub probability: f64,
}

/// All configurations reachable from `root`, with per-edge transition
/// labels and probabilities. Null interactions are folded into a per-node
/// self-loop probability instead of being stored as edges.
#[derive(Debug, Clone)]
pub struct ReachabilityGraph {
    pub nodes: Vec<Configuration>,
    index: HashMap<Configuration, usize>,
    pub edges: Vec<Vec<Edge>>,
    pub self_loop: Vec<f64>,
    pub root: usize,
}

impl ReachabilityGraph {
    pub fn node_index(&self, c: &Configuration) -> Option<usize> {
        self.index.get(c).copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reverse adjacency: for each node, the nodes with an edge into it.
    fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut preds = vec![Vec::new(); self.nodes.len()];
        for (v, out) in self.edges.iter().enumerate() {
            for e in out {
                preds[e.target].push(v);
            }
        }
        preds
    }

    /// Nodes from which some node in `seeds` is reachable (seeds included),
    /// optionally treating nodes in `absorbing` as having no out-edges.
    fn backward_closure(&self, seeds: &[usize], absorbing: Option<&[bool]>) -> Vec<bool> {
        let preds = self.predecessors();
        let mut seen = vec![false; self.nodes.len()];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &s in seeds {
            if !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            for &u in &preds[v] {
                if seen[u] {
                    continue;
                }
                if let Some(abs) = absorbing {
                    // an absorbing node keeps its seeded status but its
                    // out-edges do not count as reaching anything
                    if abs[u] {
                        continue;
                    }
                }
                seen[u] = true;
                queue.push_back(u);
            }
        }
        seen
    }
}

/// Breadth-first closure of `root` under the protocol's non-null
/// transitions. Errors (never truncates) when more than `node_cap`
/// configurations are found.
pub fn explore(
    p: &Protocol,
    root: &Configuration,
    node_cap: usize,
) -> Result<ReachabilityGraph, VerifyError> {
    let mut nodes = vec![root.clone()];
    let mut index = HashMap::from([(root.clone(), 0usize)]);
    let mut edges: Vec<Vec<Edge>> = Vec::new();
    let mut self_loop: Vec<f64> = Vec::new();
    let mut next = 0usize;
    while next < nodes.len() {
        let c = nodes[next].clone();
        let mut out = Vec::new();
        let mut non_null = 0.0;
        for t in p.enabled_transitions(&c) {
            let probability = pair_probability(&c, &t).unwrap_or(0.0);
            let succ = c.apply(&t).expect("enabled transition must apply");
            let target = match index.get(&succ) {
                Some(&i) => i,
                None => {
                    if nodes.len() >= node_cap {
                        return Err(VerifyError::NodeCapExceeded { cap: node_cap });
                    }
                    let i = nodes.len();
                    nodes.push(succ.clone());
                    index.insert(succ, i);
                    i
                }
            };
            non_null += probability;
            out.push(Edge { transition: t, target, probability });
        }
        edges.push(out);
        self_loop.push(1.0 - non_null);
        next += 1;
    }
    Ok(ReachabilityGraph { nodes, index, edges, self_loop, root: 0 })
}

/// Nodes from which no configuration enabling a transition in `q` is
/// reachable: the complement of the backward closure of the Q-enabled
/// nodes.
pub fn q_stable_set(g: &ReachabilityGraph, q: &[Transition]) -> Vec<bool> {
    let seeds: Vec<usize> = (0..g.len())
        .filter(|&v| q.iter().any(|t| g.nodes[v].can_apply(t)))
        .collect();
    let unstable = g.backward_closure(&seeds, None);
    unstable.iter().map(|&b| !b).collect()
}

/// Outcome of a stable-leader-election check on a complete graph.
#[derive(Debug, Clone)]
pub struct StabilityVerdict {
    pub q_stable_nodes: Vec<bool>,
    pub stable_leader_nodes: Vec<bool>,
    pub def2_holds: bool,
    /// A reachable configuration from which no stable-leader configuration
    /// is reachable, when the check fails.
    pub witness: Option<Configuration>,
}

/// Checks stable leader election: every reachable configuration must be
/// able to reach a Q-stable configuration whose leader-set sum is 1.
pub fn check_stable_election(g: &ReachabilityGraph, p: &Protocol) -> StabilityVerdict {
    let q_stable_nodes = q_stable_set(g, p.q_set());
    let stable_leader_nodes: Vec<bool> = (0..g.len())
        .map(|v| q_stable_nodes[v] && p.leader_count(&g.nodes[v]) == 1)
        .collect();
    let seeds: Vec<usize> = (0..g.len()).filter(|&v| stable_leader_nodes[v]).collect();
    let can_reach = g.backward_closure(&seeds, None);
    // Prefer a witness that has already settled (Q-stable with the wrong
    // leader count): it shows the failure most directly.
    let witness_idx = (0..g.len())
        .find(|&v| !can_reach[v] && q_stable_nodes[v])
        .or_else(|| (0..g.len()).find(|&v| !can_reach[v]));
    StabilityVerdict {
        q_stable_nodes,
        stable_leader_nodes,
        def2_holds: witness_idx.is_none(),
        witness: witness_idx.map(|v| g.nodes[v].clone()),
    }
}

/// LU factorization with partial pivoting, factors stored in place.
struct Lu {
    a: Vec<Vec<f64>>,
    piv: Vec<usize>,
}

impl Lu {
    // index-based elimination: rows k and i are borrowed simultaneously
    #[allow(clippy::needless_range_loop)]
    fn factor(mut a: Vec<Vec<f64>>) -> Lu {
        let m = a.len();
        let mut piv: Vec<usize> = (0..m).collect();
        for k in 0..m {
            let best = (k..m).max_by(|&i, &j| {
                a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap()
            });
            let best = best.unwrap();
            a.swap(k, best);
            piv.swap(k, best);
            let pivot = a[k][k];
            for i in k + 1..m {
                let f = a[i][k] / pivot;
                a[i][k] = f;
                for j in k + 1..m {
                    a[i][j] -= f * a[k][j];
                }
            }
        }
        Lu { a, piv }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let m = b.len();
        let mut x: Vec<f64> = self.piv.iter().map(|&i| b[i]).collect();
        for i in 0..m {
            for j in 0..i {
                x[i] -= self.a[i][j] * x[j];
            }
        }
        for i in (0..m).rev() {
            for j in i + 1..m {
                x[i] -= self.a[i][j] * x[j];
            }
            x[i] /= self.a[i][i];
        }
        x
    }
}

/// Exact expected parallel time from every node to the `target` node set,
/// by solving the first-step equations with null self-loops folded in
/// analytically. Nodes that may avoid the target forever get infinity;
/// targets are treated as absorbing.
///
/// The solve uses dense elimination plus iterative refinement, driving the
/// relative residual below 1e-9.
pub fn exact_expected_time(g: &ReachabilityGraph, target: &HashSet<usize>) -> Vec<f64> {
    let m = g.len();
    let n = g.nodes[g.root].n() as f64;
    let absorbing: Vec<bool> = (0..m).map(|v| target.contains(&v)).collect();

    // Finite expected time iff every forward-reachable node (with targets
    // absorbing) can itself reach the target.
    let seeds: Vec<usize> = target.iter().copied().collect();
    let can_reach = g.backward_closure(&seeds, Some(&absorbing));
    let doomed: Vec<usize> = (0..m).filter(|&v| !can_reach[v]).collect();
    let tainted = g.backward_closure(&doomed, Some(&absorbing));

    let unknowns: Vec<usize> =
        (0..m).filter(|&v| !absorbing[v] && !tainted[v]).collect();
    let col: HashMap<usize, usize> =
        unknowns.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let k = unknowns.len();

    // (1 - self_loop) * E[v] - sum over non-target successors p_e * E[u] = 1
    let mut a = vec![vec![0.0f64; k]; k];
    let b = vec![1.0f64; k];
    for (i, &v) in unknowns.iter().enumerate() {
        a[i][i] = 1.0 - g.self_loop[v];
        for e in &g.edges[v] {
            if let Some(&j) = col.get(&e.target) {
                a[i][j] -= e.probability;
            }
        }
    }

    let mut times = vec![f64::INFINITY; m];
    for &v in target {
        times[v] = 0.0;
    }
    if k > 0 {
        let residual = |x: &[f64]| -> Vec<f64> {
            (0..k)
                .map(|i| b[i] - (0..k).map(|j| a[i][j] * x[j]).sum::<f64>())
                .collect()
        };
        let lu = Lu::factor(a.clone());
        let mut x = lu.solve(&b);
        for _ in 0..20 {
            let r = residual(&x);
            let rel = r.iter().map(|v| v.abs()).fold(0.0, f64::max)
                / x.iter().map(|v| v.abs()).fold(1.0, f64::max);
            if rel <= 1e-12 {
                break;
            }
            let d = lu.solve(&r);
            for (xi, di) in x.iter_mut().zip(&d) {
                *xi += di;
            }
        }
        for (i, &v) in unknowns.iter().enumerate() {
            times[v] = x[i] / n;
        }
    }
    times
}

/// Nodes reachable from the root along paths whose every transition is
/// applied with both input counts above `b` (i.e. avoiding b-bottlenecks).
pub fn bottleneck_free_reachable(g: &ReachabilityGraph, b: u64) -> Vec<bool> {
    let mut seen = vec![false; g.len()];
    let mut queue = VecDeque::from([g.root]);
    seen[g.root] = true;
    while let Some(v) = queue.pop_front() {
        for e in &g.edges[v] {
            let c = &g.nodes[v];
            let t = &e.transition;
            let bottleneck = c.count(t.r1) <= b && c.count(t.r2) <= b;
            if !bottleneck && !seen[e.target] {
                seen[e.target] = true;
                queue.push_back(e.target);
            }
        }
    }
    seen
}

/// Adjacency-list text export: one node per line,
/// `index | {config} | (transition -> index, prob)*`.
pub fn export_text(g: &ReachabilityGraph, p: &Protocol) -> String {
    let mut out = String::new();
    for (v, c) in g.nodes.iter().enumerate() {
        let edges: Vec<String> = g.edges[v]
            .iter()
            .map(|e| {
                format!("({} -> {}, {:.6})", e.transition.display(p.states()), e.target, e.probability)
            })
            .collect();
        out.push_str(&format!("{} | {} | {}\n", v, p.format_config(c), edges.join(" ")));
    }
    out
}
