//! Generators for the hierarchical aggregation protocol, its flattening and
//! the electoral system, plus outcome checkers over their state graphs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::ast::{Message, Name, Process, Program};
use crate::congruence::NormalForm;
use crate::eval::{check_idempotent, Registry, SelectorFn};
use crate::parser::{parse_program, print_message, ParseError};
use crate::reduction::{RuleLabel, StateGraph};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("selection `{0}` is not idempotent")]
    NotIdempotent(Name),
    #[error("generated program does not parse: {0}")]
    Parse(#[from] ParseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounds {
    Once,
    Repeat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafBody {
    Inert,
    /// Re-emit the decision on the free channel `echo`.
    Echo,
}

/// A tree of aggregating centrals over leaves. Level `j` (root is level 0)
/// has fan-out `branching[j]`; a shorter list repeats its last entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HierarchySpec {
    pub depth: usize,
    pub branching: Vec<usize>,
    pub rounds: Rounds,
    pub selection: Name,
    pub leaf_body: LeafBody,
    /// Bound of every internal channel; defaults to the largest fan-out.
    pub bound: Option<u32>,
    /// Location of the root central.
    pub root: Name,
}

impl HierarchySpec {
    pub fn new(depth: usize, branching: Vec<usize>) -> HierarchySpec {
        HierarchySpec {
            depth,
            branching,
            rounds: Rounds::Once,
            selection: Name::new("min"),
            leaf_body: LeafBody::Echo,
            bound: None,
            root: Name::new("c"),
        }
    }

    pub fn fanout(&self, level: usize) -> usize {
        let b = &self.branching;
        b.get(level).or(b.last()).copied().unwrap_or(1)
    }

    pub fn total_leaves(&self) -> usize {
        (0..=self.depth).map(|j| self.fanout(j)).product()
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.branching.is_empty() || self.branching.contains(&0) {
            return Err(ProtocolError::Spec("every fan-out must be at least 1".into()));
        }
        let max = (0..=self.depth).map(|j| self.fanout(j)).max().unwrap_or(1);
        if let Some(b) = self.bound {
            if b == 0 || (b as usize) < max {
                return Err(ProtocolError::Spec(format!("bound {b} is below the fan-out {max}")));
            }
        }
        let sel = SelectorFn::by_name(self.selection.as_str())
            .ok_or_else(|| ProtocolError::Spec(format!("unknown selection `{}`", self.selection)))?;
        let mut r = Registry::default();
        r.selectors.insert(self.selection.clone(), sel);
        let universe: Vec<Message> = (1..=6).map(|i| Message::Var(Name::new(i.to_string()))).collect();
        let verdict = check_idempotent(&r, &self.selection, &universe, 4, 300, 0).expect("selection is registered");
        if !verdict.passed() {
            return Err(ProtocolError::NotIdempotent(self.selection.clone()));
        }
        Ok(())
    }

    fn effective_bound(&self) -> u32 {
        self.bound.unwrap_or_else(|| (0..=self.depth).map(|j| self.fanout(j)).max().unwrap_or(1) as u32)
    }
}

/// The one-level equivalent: every leaf attached to a single hub.
pub fn flatten_spec(spec: &HierarchySpec, hub: &Name) -> HierarchySpec {
    let total = spec.total_leaves();
    HierarchySpec {
        depth: 0,
        branching: vec![total],
        bound: Some(spec.bound.map_or(total as u32, |b| b.max(total as u32))),
        root: hub.clone(),
        ..spec.clone()
    }
}

struct Gen<'a> {
    spec: &'a HierarchySpec,
    next_leaf: usize,
    bound: u32,
}

impl Gen<'_> {
    fn leaf(&mut self, up: &str, down: &str) -> (String, String) {
        self.next_leaf += 1;
        let i = self.next_leaf;
        let loc = format!("l{i}");
        let proc = match (self.spec.rounds, self.spec.leaf_body) {
            (Rounds::Once, LeafBody::Inert) => format!("{up}!<{i}>.0 | {down}?<z>(z).0"),
            (Rounds::Once, LeafBody::Echo) => format!("{up}!<{i}>.0 | {down}?<z>(z).echo!<z>.0"),
            (Rounds::Repeat, LeafBody::Inert) => format!("Leaf({up}, {down}, {i})"),
            (Rounds::Repeat, LeafBody::Echo) => format!("Leaf({up}, {down}, {i}, echo)"),
        };
        (loc.clone(), format!("{loc}::[{proc}]"))
    }

    // Subtree rooted at a central at `level` whose parent channels are given
    // (`None` for the root).
    fn central(&mut self, loc: &str, level: usize, parent: Option<(&str, &str)>) -> String {
        let (u, d) = (format!("u_{loc}"), format!("d_{loc}"));
        let sel = &self.spec.selection;
        let body = match (parent, self.spec.rounds) {
            (Some((pu, pd)), Rounds::Once) => format!("{u}?*<x>(x) as S. {pu}!<{sel}{{S}}>.0 | {pd}?<z>(z).{d}!<z>.0"),
            (Some((pu, pd)), Rounds::Repeat) => format!("Mid({u}, {d}, {pu}, {pd})"),
            (None, Rounds::Once) => {
                format!("new b : B<Data> bound 1 in ({u}?*<x>(x) as S. b!<{sel}{{S}}>.0 | b?<z>(z).{d}!<z>.0)")
            }
            (None, Rounds::Repeat) => format!("new b : B<Data> bound 1 in Root({u}, {d}, b)"),
        };
        let mut parts = vec![format!("{loc}::[{body}]")];
        for j in 0..self.spec.fanout(level) {
            let (child, text) = if level == self.spec.depth {
                self.leaf(&u, &d)
            } else {
                let child = format!("{loc}{j}");
                let text = self.central(&child, level + 1, Some((&u, &d)));
                (child, text)
            };
            parts.push(format!("{child} <-> {loc}"));
            parts.push(format!("({text})"));
        }
        let b = self.bound;
        format!("new {u} : C<Data> bound {b} in new {d} : B<Data> bound {b} in ({})", parts.join(" | "))
    }
}

/// Source text of the hierarchical protocol.
pub fn hierarchy_source(spec: &HierarchySpec) -> Result<String, ProtocolError> {
    spec.validate()?;
    let mut src = String::new();
    let sel = &spec.selection;
    writeln!(src, "-- hierarchical aggregation, depth {}, {} leaves", spec.depth, spec.total_leaves()).unwrap();
    writeln!(src, "selector {sel}").unwrap();
    if spec.leaf_body == LeafBody::Echo {
        writeln!(src, "type echo : B<Data>").unwrap();
    }
    if spec.rounds == Rounds::Repeat {
        match spec.leaf_body {
            LeafBody::Inert => writeln!(src, "agent Leaf(up, down, v) = up!<v>.0 | down?<z>(z).Leaf(up, down, v)"),
            LeafBody::Echo => writeln!(
                src,
                "agent Leaf(up, down, v, echo) = up!<v>.0 | down?<z>(z).(echo!<z>.0 | Leaf(up, down, v, echo))"
            ),
        }
        .unwrap();
        writeln!(src, "agent Mid(u, d, pu, pd) = u?*<x>(x) as S. pu!<{sel}{{S}}>.0 | pd?<z>(z).(d!<z>.0 | Mid(u, d, pu, pd))")
            .unwrap();
        writeln!(src, "agent Root(u, d, b) = u?*<x>(x) as S. b!<{sel}{{S}}>.0 | b?<z>(z).(d!<z>.0 | Root(u, d, b))").unwrap();
    }
    let mut g = Gen { spec, next_leaf: 0, bound: spec.effective_bound() };
    let net = g.central(spec.root.as_str(), 0, None);
    writeln!(src, "net = {net}").unwrap();
    Ok(src)
}

pub fn gen_hierarchical(spec: &HierarchySpec) -> Result<Program, ProtocolError> {
    Ok(parse_program(&hierarchy_source(spec)?)?)
}

/// The flattened protocol: the same leaves attached directly to `hub`.
pub fn flatten(spec: &HierarchySpec, hub: &Name) -> Result<Program, ProtocolError> {
    gen_hierarchical(&flatten_spec(spec, hub))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ElectoralSpec {
    pub participants: usize,
    /// Number of collection rounds before the announcement.
    pub rounds: usize,
}

pub fn electoral_source(spec: &ElectoralSpec) -> Result<String, ProtocolError> {
    let n = spec.participants;
    if n < 2 {
        return Err(ProtocolError::Spec("an electoral system needs at least two participants".into()));
    }
    if spec.rounds == 0 {
        return Err(ProtocolError::Spec("at least one collection round is needed".into()));
    }
    let mut src = String::new();
    writeln!(src, "-- electoral system, {n} participants").unwrap();
    writeln!(src, "channel a bound {n}").unwrap();
    writeln!(src, "type a : C<Data>").unwrap();
    writeln!(src, "selector elect").unwrap();
    writeln!(src, "constructor chosen").unwrap();
    writeln!(src, "agent Id(a, i) = a!<i>.Id(a, i)").unwrap();
    let mut parts = Vec::new();
    for i in 1..=n {
        for j in i + 1..=n {
            parts.push(format!("p{i} <-> p{j}"));
        }
    }
    for i in 1..=n {
        let mut body = String::new();
        for r in 1..=spec.rounds {
            write!(body, "a?*<x>(x) as S{r}. ").unwrap();
        }
        let picks: Vec<String> = (1..=spec.rounds).map(|r| format!("elect{{S{r}}}")).collect();
        write!(body, "a!<chosen(elect{{{{{i}, {}}}}})>.0", picks.join(", ")).unwrap();
        parts.push(format!("p{i}::[Id(a, {i}) | {body}]"));
    }
    writeln!(src, "net = {}", parts.join(" | ")).unwrap();
    Ok(src)
}

pub fn gen_electoral(spec: &ElectoralSpec) -> Result<Program, ProtocolError> {
    Ok(parse_program(&electoral_source(spec)?)?)
}

// Outcome checks.

/// Payloads of pending outputs on `chan` in a state.
pub fn pending_outputs(nf: &NormalForm, chan: &str) -> BTreeSet<(Name, Message)> {
    nf.located
        .iter()
        .filter_map(|(l, p)| match p {
            Process::Output { chan: c, msg, .. } if c.as_str() == chan => Some((l.clone(), msg.clone())),
            _ => None,
        })
        .collect()
}

fn announcement(nf: &NormalForm, at: &Name) -> Option<Message> {
    nf.located.iter().find_map(|(l, p)| match p {
        Process::Output { chan, msg: msg @ Message::Cons(f, _), .. }
            if l == at && chan.as_str() == "a" && f.as_str() == "chosen" =>
        {
            Some(msg.clone())
        }
        _ => None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ElectoralOutcome {
    pub states: usize,
    pub maximal_computations_ok: bool,
    /// Distinct announced values over all computations.
    pub announced: BTreeSet<String>,
    /// A maximal computation violating uniqueness or completion.
    pub counterexample: Option<Vec<RuleLabel>>,
}

/// Check every maximal computation of an acyclic electoral state graph:
/// all participants announce, and they announce the same value.
pub fn check_electoral(g: &StateGraph, participants: usize) -> Result<ElectoralOutcome, ProtocolError> {
    let adj = g.adjacency();
    let order = topological_order(&adj).ok_or_else(|| ProtocolError::Spec("state graph has a cycle".into()))?;
    type Ann = BTreeMap<Name, Message>;
    // Announcement maps reachable at each state, with a predecessor for
    // trace reconstruction.
    let mut reach: Vec<BTreeMap<Ann, Option<(usize, usize, Ann)>>> = vec![BTreeMap::new(); g.states.len()];
    reach[g.initial].insert(Ann::new(), None);
    let edges_from: Vec<Vec<usize>> = {
        let mut v = vec![Vec::new(); g.states.len()];
        for (i, e) in g.edges.iter().enumerate() {
            v[e.from].push(i);
        }
        v
    };
    for &s in &order {
        let maps: Vec<Ann> = reach[s].keys().cloned().collect();
        for &ei in &edges_from[s] {
            let e = &g.edges[ei];
            for m in &maps {
                let mut next = m.clone();
                if let RuleLabel::Coll { receiver, .. } = &e.label {
                    if let Some(v) = announcement(&g.states[e.to], receiver) {
                        next.insert(receiver.clone(), v);
                    }
                }
                reach[e.to].entry(next).or_insert(Some((s, ei, m.clone())));
            }
        }
    }
    let mut announced = BTreeSet::new();
    let mut counterexample = None;
    for s in g.terminal_states() {
        for m in reach[s].keys() {
            announced.extend(m.values().map(print_message));
            let values: BTreeSet<&Message> = m.values().collect();
            if (m.len() != participants || values.len() != 1) && counterexample.is_none() {
                let mut trace = Vec::new();
                let (mut cur, mut map) = (s, m.clone());
                while let Some(Some((p, ei, pm))) = reach[cur].get(&map).cloned() {
                    trace.push(g.edges[ei].label.clone());
                    cur = p;
                    map = pm;
                }
                trace.reverse();
                counterexample = Some(trace);
            }
        }
    }
    Ok(ElectoralOutcome {
        states: g.states.len(),
        maximal_computations_ok: counterexample.is_none() && !g.truncated,
        announced,
        counterexample,
    })
}

fn topological_order(adj: &[Vec<usize>]) -> Option<Vec<usize>> {
    let mut indeg = vec![0usize; adj.len()];
    adj.iter().flatten().for_each(|&t| indeg[t] += 1);
    let mut ready: Vec<usize> = (0..adj.len()).filter(|&s| indeg[s] == 0).collect();
    let mut order = Vec::new();
    while let Some(s) = ready.pop() {
        order.push(s);
        for &t in &adj[s] {
            indeg[t] -= 1;
            if indeg[t] == 0 {
                ready.push(t);
            }
        }
    }
    (order.len() == adj.len()).then_some(order)
}

/// Decisions echoed by leaves in the terminal states of a hierarchy graph.
pub fn terminal_decisions(g: &StateGraph) -> BTreeSet<Message> {
    g.terminal_states()
        .into_iter()
        .flat_map(|s| pending_outputs(&g.states[s], "echo").into_iter().map(|(_, m)| m))
        .collect()
}
