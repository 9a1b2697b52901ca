//! Barbs and weak barbed bisimilarity on bounded state graphs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::ast::{Message, Name, Process, Program};
use crate::congruence::NormalForm;
use crate::eval::{evaluate, Registry};
use crate::reduction::{Engine, Exploration, Limits, Mode, ReductionError, RuleLabel, StateGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Capability {
    B,
    C,
}

/// Readiness to communicate on `channel` in the given mode at `location`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Barb {
    pub channel: Name,
    pub mode: Capability,
    pub location: Name,
}

impl fmt::Display for Barb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {:?})@{}", self.channel, self.mode, self.location)
    }
}

pub type BarbSet = BTreeSet<Barb>;

/// Barbs of a state; agent calls are unfolded as needed.
pub fn barbs(nf: &NormalForm, p: &Program) -> BarbSet {
    barbs_with(nf, p, &Registry::from_program(p))
}

pub fn barbs_with(nf: &NormalForm, p: &Program, r: &Registry) -> BarbSet {
    let hidden = nf.restricted();
    let mut out = BarbSet::new();
    for (l, q) in &nf.located {
        let mut raw = BTreeSet::new();
        BarbWalk { p, r, visiting: BTreeSet::new(), bound: Vec::new(), calls: 0 }.visit(q, &mut raw);
        out.extend(
            raw.into_iter()
                .filter(|(a, _)| !hidden.contains(a))
                .map(|(channel, mode)| Barb { channel, mode, location: l.clone() }),
        );
    }
    out
}

/// Unfoldings allowed while collecting the barbs of one located process.
const MAX_BARB_UNFOLDS: usize = 4096;

struct BarbWalk<'a> {
    p: &'a Program,
    r: &'a Registry,
    visiting: BTreeSet<(Name, Vec<Message>)>,
    bound: Vec<Name>,
    calls: usize,
}

impl BarbWalk<'_> {
    fn visit(&mut self, q: &Process, out: &mut BTreeSet<(Name, Capability)>) {
        match q {
            Process::Nil => {}
            Process::Output { chan, .. } => {
                out.insert((chan.clone(), Capability::B));
                out.insert((chan.clone(), Capability::C));
            }
            Process::BInput { chan, .. } => {
                out.insert((chan.clone(), Capability::B));
            }
            Process::CInput { chan, .. } => {
                out.insert((chan.clone(), Capability::C));
            }
            Process::Par(a, b) | Process::Sum(a, b) => {
                self.visit(a, out);
                self.visit(b, out);
            }
            Process::Match { left, right, body } | Process::Mismatch { left, right, body } => {
                if let (Ok(a), Ok(b)) = (evaluate(left, self.r), evaluate(right, self.r)) {
                    if (a == b) == matches!(q, Process::Match { .. }) {
                        self.visit(body, out);
                    }
                }
            }
            Process::New { name, body, .. } => {
                let mut inner = BTreeSet::new();
                self.bound.push(name.clone());
                self.visit(body, &mut inner);
                self.bound.pop();
                out.extend(inner.into_iter().filter(|(a, _)| a != name));
            }
            Process::Call { agent, args } => {
                let key = (agent.clone(), self.abstract_bound(args));
                if self.visiting.contains(&key) || self.calls >= MAX_BARB_UNFOLDS {
                    return;
                }
                let Some(def) = self.p.agents.get(agent) else { return };
                let Ok(body) = def.instantiate(args) else { return };
                self.calls += 1;
                self.visiting.insert(key.clone());
                self.visit(&body, out);
                self.visiting.remove(&key);
            }
        }
    }

    /// Arguments with enclosing restricted names replaced by placeholders in
    /// order of appearance; such names never show up as barbs.
    fn abstract_bound(&self, args: &[Message]) -> Vec<Message> {
        let mut map = BTreeMap::new();
        for m in args {
            for x in m.free_names() {
                if self.bound.contains(&x) && !map.contains_key(&x) {
                    let placeholder = Name::new(format!("%b{}", map.len()));
                    map.insert(x, placeholder);
                }
            }
        }
        args.iter().map(|m| m.rename(&map)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BarbMode {
    /// Related states exhibit the same immediate barbs.
    #[default]
    Strict,
    /// A barb of one side is reachable from the other.
    Weak,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BisimError {
    #[error("programs declare different selectors or constructors")]
    SignatureMismatch,
    #[error(transparent)]
    Reduction(#[from] ReductionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Left,
    Right,
}

/// A weak barbed bisimulation between the two state graphs, given as
/// pairs (left state, right state); read symmetrically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub pairs: BTreeSet<(usize, usize)>,
}

impl Witness {
    pub fn contains(&self, s: usize, t: usize) -> bool {
        self.pairs.contains(&(s, t))
    }

    /// Check the transfer and barb conditions on the relation itself.
    pub fn is_closed(&self, g1: &StateGraph, g2: &StateGraph, b1: &[BarbSet], b2: &[BarbSet], mode: BarbMode) -> bool {
        let reach1 = reachability(g1);
        let reach2 = reachability(g2);
        let adj1 = g1.adjacency();
        let adj2 = g2.adjacency();
        let weak1 = weak_barbs(&reach1, b1);
        let weak2 = weak_barbs(&reach2, b2);
        self.pairs.iter().all(|&(s, t)| {
            let barbs_ok = match mode {
                BarbMode::Strict => b1[s] == b2[t],
                BarbMode::Weak => b1[s].is_subset(&weak2[t]) && b2[t].is_subset(&weak1[s]),
            };
            let left_moves = adj1[s].iter().all(|&s2| reach2[t].iter().any(|&t2| self.contains(s2, t2)));
            let right_moves = adj2[t].iter().all(|&t2| reach1[s].iter().any(|&s2| self.contains(s2, t2)));
            barbs_ok && left_moves && right_moves
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict")]
pub enum BisimVerdict {
    Bisimilar { witness: Witness },
    /// `trace` leads from the initial state of `side` to a state that the
    /// other side cannot match.
    Distinguished { side: Side, trace: Vec<RuleLabel>, reason: String },
    Inconclusive { reason: String },
}

impl BisimVerdict {
    pub fn class(&self) -> &'static str {
        match self {
            BisimVerdict::Bisimilar { .. } => "Bisimilar",
            BisimVerdict::Distinguished { .. } => "Distinguished",
            BisimVerdict::Inconclusive { .. } => "Inconclusive",
        }
    }
}

/// Build both state graphs (exhaustive mode, reduced exploration) and decide
/// weak barbed bisimilarity of the initial states.
pub fn weak_barbed_bisim(p1: &Program, p2: &Program, limits: Limits, mode: BarbMode) -> Result<BisimVerdict, BisimError> {
    weak_barbed_bisim_with(p1, p2, limits, mode, Exploration::Reduced)
}

pub fn weak_barbed_bisim_with(
    p1: &Program,
    p2: &Program,
    limits: Limits,
    mode: BarbMode,
    how: Exploration,
) -> Result<BisimVerdict, BisimError> {
    if p1.selectors != p2.selectors || p1.constructors != p2.constructors {
        return Err(BisimError::SignatureMismatch);
    }
    let g1 = Engine::new(p1, Mode::Exhaustive, limits).explore(how)?;
    let g2 = Engine::new(p2, Mode::Exhaustive, limits).explore(how)?;
    Ok(compare_graphs(&g1, p1, &g2, p2, mode))
}

/// Strongly connected components in reverse topological order.
fn sccs(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let (mut index, mut low, mut on) = (vec![usize::MAX; n], vec![0; n], vec![false; n]);
    let (mut stack, mut out, mut next) = (Vec::new(), Vec::new(), 0);
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on[root] = true;
        while let Some(&mut (v, ref mut i)) = call.last_mut() {
            if *i < adj[v].len() {
                let w = adj[v][*i];
                *i += 1;
                if index[w] == usize::MAX {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on[w] = true;
                    call.push((w, 0));
                } else if on[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(u, _)) = call.last() {
                    low[u] = low[u].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    out.push(comp);
                }
            }
        }
    }
    out
}

/// For each state, the set of states reachable in zero or more steps.
fn reachability(g: &StateGraph) -> Vec<Vec<usize>> {
    reach_from(&g.adjacency())
}

fn reach_from(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let comps = sccs(adj);
    let mut comp_of = vec![0; adj.len()];
    for (c, members) in comps.iter().enumerate() {
        members.iter().for_each(|&v| comp_of[v] = c);
    }
    let mut reach: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); comps.len()];
    for (c, members) in comps.iter().enumerate() {
        let mut set: BTreeSet<usize> = members.iter().copied().collect();
        for &v in members {
            for &w in &adj[v] {
                if comp_of[w] != c {
                    set.extend(reach[comp_of[w]].iter().copied());
                }
            }
        }
        reach[c] = set;
    }
    (0..adj.len()).map(|v| reach[comp_of[v]].iter().copied().collect()).collect()
}

fn weak_barbs(reach: &[Vec<usize>], b: &[BarbSet]) -> Vec<BarbSet> {
    reach.iter().map(|rs| rs.iter().flat_map(|&s| b[s].iter().cloned()).collect()).collect()
}

/// Decide weak barbed bisimilarity of the initial states of two explored
/// graphs by partition refinement on their disjoint union.
pub fn compare_graphs(g1: &StateGraph, p1: &Program, g2: &StateGraph, p2: &Program, mode: BarbMode) -> BisimVerdict {
    let max = g1.limits.max_states.max(g2.limits.max_states);
    if g1.states.len().saturating_mul(g2.states.len()) > max.saturating_mul(max) {
        return BisimVerdict::Inconclusive { reason: "product of state spaces exceeds the limit".into() };
    }
    let r1 = Registry::from_program(p1);
    let b1: Vec<BarbSet> = g1.states.iter().map(|s| barbs_with(s, p1, &r1)).collect();
    let r2 = Registry::from_program(p2);
    let b2: Vec<BarbSet> = g2.states.iter().map(|s| barbs_with(s, p2, &r2)).collect();
    let n1 = g1.states.len();
    let n = n1 + g2.states.len();
    let mut adj = g1.adjacency();
    adj.extend(g2.adjacency().into_iter().map(|v| v.into_iter().map(|w| w + n1).collect::<Vec<_>>()));
    let reach = reach_from(&adj);
    let all_barbs: Vec<BarbSet> = b1.iter().chain(b2.iter()).cloned().collect();
    let initial_key: Vec<BarbSet> = match mode {
        BarbMode::Strict => all_barbs.clone(),
        BarbMode::Weak => weak_barbs(&reach, &all_barbs),
    };
    let mut class = renumber(&initial_key);
    let mut history = vec![class.clone()];
    loop {
        let sigs: Vec<(usize, BTreeSet<usize>)> =
            (0..n).map(|s| (class[s], reach[s].iter().map(|&t| class[t]).collect())).collect();
        let next = renumber(&sigs);
        let stable = count(&next) == count(&class);
        class = next;
        if stable {
            break;
        }
        history.push(class.clone());
    }
    let (i1, i2) = (g1.initial, n1 + g2.initial);
    let truncated = g1.truncated || g2.truncated;
    if class[i1] == class[i2] {
        if truncated {
            return BisimVerdict::Inconclusive { reason: "state graph truncated by exploration limits".into() };
        }
        let mut pairs = BTreeSet::new();
        for s in 0..n1 {
            for t in 0..g2.states.len() {
                if class[s] == class[n1 + t] {
                    pairs.insert((s, t));
                }
            }
        }
        return BisimVerdict::Bisimilar { witness: Witness { pairs } };
    }
    if truncated && !truncation_safe(g1, g2, &initial_key, mode, i1, i2) {
        return BisimVerdict::Inconclusive { reason: "state graph truncated by exploration limits".into() };
    }
    explain(g1, g2, &all_barbs, &reach, &history, i1, i2, n1, mode)
}

/// Whether the initial barbs alone separate the two sides even though
/// exploration was cut short. Immediate barbs are exact; weak barbs only
/// on a side explored completely.
fn truncation_safe(g1: &StateGraph, g2: &StateGraph, key: &[BarbSet], mode: BarbMode, i1: usize, i2: usize) -> bool {
    match mode {
        BarbMode::Strict => key[i1] != key[i2],
        BarbMode::Weak => {
            (!g2.truncated && !key[i1].is_subset(&key[i2])) || (!g1.truncated && !key[i2].is_subset(&key[i1]))
        }
    }
}

fn renumber<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut ids: BTreeMap<K, usize> = BTreeMap::new();
    keys.iter()
        .map(|k| {
            let next = ids.len();
            *ids.entry(k.clone()).or_insert(next)
        })
        .collect()
}

fn count(class: &[usize]) -> usize {
    class.iter().collect::<BTreeSet<_>>().len()
}

#[allow(clippy::too_many_arguments)]
fn explain(
    g1: &StateGraph,
    g2: &StateGraph,
    all: &[BarbSet],
    reach: &[Vec<usize>],
    history: &[Vec<usize>],
    i1: usize,
    i2: usize,
    n1: usize,
    mode: BarbMode,
) -> BisimVerdict {
    let round = history.iter().position(|c| c[i1] != c[i2]).unwrap_or(history.len() - 1);
    if round == 0 {
        let weak = |s: usize| -> BarbSet { reach[s].iter().flat_map(|&t| all[t].iter().cloned()).collect() };
        let (k1, k2) = match mode {
            BarbMode::Strict => (all[i1].clone(), all[i2].clone()),
            BarbMode::Weak => (weak(i1), weak(i2)),
        };
        let left = k1.difference(&k2).next();
        let right = k2.difference(&k1).next();
        // A weak barb missing from a truncated side might lie beyond the cut.
        let prefer_right = mode == BarbMode::Weak && g2.truncated && right.is_some() && !g1.truncated;
        let (side, barb) = match (left, prefer_right) {
            (Some(b), false) => (Side::Left, b.clone()),
            _ => (Side::Right, right.expect("barb sets differ").clone()),
        };
        return BisimVerdict::Distinguished { side, trace: Vec::new(), reason: format!("unmatched barb {barb}") };
    }
    // A class reachable from one initial state at the previous round but not
    // from the other.
    let prev = &history[round - 1];
    let blocks = |s: usize| -> BTreeSet<usize> { reach[s].iter().map(|&t| prev[t]).collect() };
    let (r1, r2) = (blocks(i1), blocks(i2));
    let (side, target_block) = match r1.difference(&r2).next() {
        Some(b) => (Side::Left, *b),
        None => (Side::Right, *r2.difference(&r1).next().expect("signatures differ")),
    };
    let (g, offset) = if side == Side::Left { (g1, 0) } else { (g2, n1) };
    let trace = path_to(g, |s| prev[s + offset] == target_block);
    BisimVerdict::Distinguished {
        side,
        trace,
        reason: format!("no weak move of the other side reaches a state equivalent to the end of this trace (refinement round {round})"),
    }
}

fn path_to(g: &StateGraph, goal: impl Fn(usize) -> bool) -> Vec<RuleLabel> {
    let mut parent: HashMap<usize, (usize, RuleLabel)> = HashMap::new();
    let mut queue = std::collections::VecDeque::from([g.initial]);
    let mut seen = BTreeSet::from([g.initial]);
    while let Some(s) = queue.pop_front() {
        if goal(s) {
            let mut trace = Vec::new();
            let mut cur = s;
            while let Some((p, l)) = parent.get(&cur) {
                trace.push(l.clone());
                cur = *p;
            }
            trace.reverse();
            return trace;
        }
        for e in g.successors_of(s) {
            if seen.insert(e.to) {
                parent.insert(e.to, (s, e.label.clone()));
                queue.push_back(e.to);
            }
        }
    }
    Vec::new()
}
