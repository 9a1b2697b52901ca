//! Reduction over normal forms: broadcast, local and collection steps,
//! successor enumeration, seeded random runs and bounded state graphs.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::ast::{AstError, Message, Name, NameSet, Pattern, Process, Program, Subst};
use crate::congruence::{canonicalize, normalize_with, NormalForm, Restriction};
use crate::eval::{evaluate, match_broadcast, match_collection, EvalError, Registry};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReductionError {
    #[error("unknown agent `{0}`")]
    UnknownAgent(Name),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Ast(#[from] AstError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Maximal deliveries and collections (capped by the bound).
    #[default]
    Default,
    /// Every admissible delivered set and collected set.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(tag = "rule")]
pub enum RuleLabel {
    Broad { chan: Name, sender: Name, receivers: Vec<Name> },
    Local { chan: Name, location: Name },
    Coll { chan: Name, receiver: Name, senders: Vec<Name> },
}

impl RuleLabel {
    pub fn chan(&self) -> &Name {
        match self {
            RuleLabel::Broad { chan, .. } | RuleLabel::Local { chan, .. } | RuleLabel::Coll { chan, .. } => chan,
        }
    }
}

impl fmt::Display for RuleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[Name]| v.iter().map(Name::as_str).collect::<Vec<_>>().join(", ");
        match self {
            RuleLabel::Broad { chan, sender, receivers } => write!(f, "Broad {chan} {sender} -> {{{}}}", join(receivers)),
            RuleLabel::Local { chan, location } => write!(f, "Local {chan} @ {location}"),
            RuleLabel::Coll { chan, receiver, senders } => write!(f, "Coll {chan} {{{}}} -> {receiver}", join(senders)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Limits {
    pub max_states: usize,
    /// Agent unfoldings allowed along any path from the initial state.
    pub unfold_budget: usize,
    pub max_steps: usize,
}

impl Default for Limits {
    fn default() -> Limits {
        Limits { max_states: 50_000, unfold_budget: 32, max_steps: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub label: RuleLabel,
    pub target: NormalForm,
    /// Agent unfoldings consumed by this step.
    pub unfolds: usize,
    /// Located entries of the source state that took part.
    pub entries: Vec<usize>,
    /// Broadcast inputs (channel, location) the step makes available, named
    /// as in the source state.
    pub exposed_inputs: BTreeSet<(Name, Name)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Expansion {
    pub transitions: Vec<Transition>,
    /// Some redex was not explored because the unfolding budget ran out.
    pub budget_hit: bool,
}

#[derive(Debug, Clone)]
enum Kind {
    Out { chan: Name, msg: Message },
    BIn { chan: Name, pattern: Pattern },
    CIn { chan: Name, pattern: Pattern, setvar: Name },
}

/// A prefix available in a located entry, with what remains of the entry
/// once it fires.
#[derive(Debug, Clone)]
struct Action {
    entry: usize,
    kind: Kind,
    cont: Process,
    residual: Vec<Process>,
    extra: Vec<Restriction>,
    unfolds: usize,
}

impl Action {
    fn remainder(&self, cont: Process) -> Process {
        let mut ps = vec![cont];
        ps.extend(self.residual.iter().cloned());
        Process::par_all(ps)
    }
}

/// Agent unfoldings made while extracting the actions of one entry.
#[derive(Debug, Default)]
struct Unfolding {
    stack: Vec<(Name, Vec<Message>)>,
    total: usize,
}

const MAX_UNFOLDS_PER_ENTRY: usize = 4096;

/// Reduction engine for one program.
#[derive(Debug, Clone)]
pub struct Engine {
    pub program: Program,
    pub registry: Registry,
    pub mode: Mode,
    pub limits: Limits,
}

impl Engine {
    pub fn new(program: &Program, mode: Mode, limits: Limits) -> Engine {
        Engine { program: program.clone(), registry: Registry::from_program(program), mode, limits }
    }

    pub fn initial(&self) -> NormalForm {
        normalize_with(self.program.network(), &self.registry)
    }

    fn bound(&self, nf: &NormalForm, extra: &[Restriction], chan: &Name, l: &Name) -> usize {
        if let Some(r) = nf.restriction(chan).or_else(|| extra.iter().find(|r| &r.name == chan)) {
            return r.bound.cap(l);
        }
        self.program.channel_bound(chan).cap(l)
    }

    fn extract(
        &self,
        entry: usize,
        p: &Process,
        residual: &[Process],
        extra: &[Restriction],
        unfolds: usize,
        calls: &mut Unfolding,
        out: &mut Vec<Action>,
        budget_hit: &mut bool,
    ) -> Result<(), ReductionError> {
        let mut push = |kind: Kind, cont: &Process| {
            out.push(Action {
                entry,
                kind,
                cont: cont.clone(),
                residual: residual.to_vec(),
                extra: extra.to_vec(),
                unfolds,
            })
        };
        match p {
            Process::Nil => {}
            Process::Output { chan, msg, cont } => {
                let msg = evaluate(msg, &self.registry)?;
                push(Kind::Out { chan: chan.clone(), msg }, cont);
            }
            Process::BInput { chan, pattern, cont } => push(Kind::BIn { chan: chan.clone(), pattern: pattern.clone() }, cont),
            Process::CInput { chan, pattern, setvar, cont } => push(
                Kind::CIn { chan: chan.clone(), pattern: pattern.clone(), setvar: setvar.clone() },
                cont,
            ),
            Process::Sum(a, b) => {
                self.extract(entry, a, residual, extra, unfolds, calls, out, budget_hit)?;
                self.extract(entry, b, residual, extra, unfolds, calls, out, budget_hit)?;
            }
            Process::Par(..) => {
                let mut parts = Vec::new();
                split_par(p, &mut parts);
                for i in 0..parts.len() {
                    let mut rest = residual.to_vec();
                    rest.extend(parts.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| (*q).clone()));
                    self.extract(entry, parts[i], &rest, extra, unfolds, calls, out, budget_hit)?;
                }
            }
            Process::Match { left, right, body } | Process::Mismatch { left, right, body } => {
                let (Ok(a), Ok(b)) = (evaluate(left, &self.registry), evaluate(right, &self.registry)) else {
                    return Ok(());
                };
                if (a == b) == matches!(p, Process::Match { .. }) {
                    self.extract(entry, body, residual, extra, unfolds, calls, out, budget_hit)?;
                }
            }
            Process::New { name, bound, ty, body } => {
                let fresh = Name::fresh();
                let body = body.rename(&std::collections::BTreeMap::from([(name.clone(), fresh.clone())]));
                let mut extra = extra.to_vec();
                extra.push(Restriction { name: fresh, bound: bound.clone(), ty: ty.clone() });
                self.extract(entry, &body, residual, &extra, unfolds, calls, out, budget_hit)?;
            }
            Process::Call { agent, args } => {
                // Meeting the same call again before any prefix is unguarded
                // recursion, which only multiplies copies.
                let key = (agent.clone(), args.clone());
                if unfolds >= self.limits.unfold_budget || calls.stack.contains(&key) || calls.total >= MAX_UNFOLDS_PER_ENTRY {
                    *budget_hit = true;
                    return Ok(());
                }
                let def = self.program.agents.get(agent).ok_or_else(|| ReductionError::UnknownAgent(agent.clone()))?;
                let body = def.instantiate(args)?;
                calls.stack.push(key);
                calls.total += 1;
                let result = self.extract(entry, &body, residual, extra, unfolds + 1, calls, out, budget_hit);
                calls.stack.pop();
                result?;
            }
        }
        Ok(())
    }

    fn actions(&self, nf: &NormalForm) -> Result<(Vec<Action>, bool), ReductionError> {
        let mut out = Vec::new();
        let mut hit = false;
        for (i, (_, p)) in nf.located.iter().enumerate() {
            self.extract(i, p, &[], &[], 0, &mut Unfolding::default(), &mut out, &mut hit)?;
        }
        Ok((out, hit))
    }

    /// All one-step successors of a canonical state.
    pub fn expand(&self, nf: &NormalForm) -> Result<Expansion, ReductionError> {
        let (actions, budget_hit) = self.actions(nf)?;
        let loc = |a: &Action| &nf.located[a.entry].0;
        let mut seen = BTreeSet::new();
        let mut transitions = Vec::new();
        let mut emit = |label: RuleLabel, fired: Vec<(&Action, Process)>| -> Result<(), ReductionError> {
            let target = self.fire(nf, &fired);
            let unfolds = fired.iter().map(|(a, _)| a.unfolds).sum();
            if seen.insert((label.clone(), target.clone())) {
                let entries = fired.iter().map(|(a, _)| a.entry).collect();
                let mut exposed = Vec::new();
                let mut hit = false;
                for (a, cont) in &fired {
                    self.extract(a.entry, &a.remainder(cont.clone()), &[], &a.extra, 0, &mut Unfolding::default(), &mut exposed, &mut hit)?;
                }
                let exposed_inputs = exposed
                    .iter()
                    .filter_map(|a| match &a.kind {
                        Kind::BIn { chan, .. } => Some((chan.clone(), nf.located[a.entry].0.clone())),
                        _ => None,
                    })
                    .collect();
                transitions.push(Transition { label, target, unfolds, entries, exposed_inputs });
            }
            Ok(())
        };

        for send in &actions {
            let Kind::Out { chan, msg } = &send.kind else { continue };
            let l = loc(send);
            // Broadcast: one matching input per connected location.
            let mut by_loc: Vec<(Name, Vec<(&Action, Subst)>)> = Vec::new();
            for recv in &actions {
                let Kind::BIn { chan: c, pattern } = &recv.kind else { continue };
                let m = loc(recv);
                if c != chan || !nf.connectivity.contains(l, m) {
                    continue;
                }
                let Some(theta) = match_broadcast(msg, pattern) else { continue };
                match by_loc.iter_mut().find(|(n, _)| n == m) {
                    Some((_, v)) => v.push((recv, theta)),
                    None => by_loc.push((m.clone(), vec![(recv, theta)])),
                }
            }
            by_loc.sort_by(|a, b| a.0.cmp(&b.0));
            if !by_loc.is_empty() {
                let beta = self.bound(nf, &send.extra, chan, l);
                let k = by_loc.len().min(beta);
                for subset in subsets_of_size(by_loc.len(), k) {
                    assert!(subset.len() <= beta, "broadcast exceeds the bound");
                    let groups: Vec<&Vec<(&Action, Subst)>> = subset.iter().map(|&i| &by_loc[i].1).collect();
                    for choice in product(&groups.iter().map(|g| g.len()).collect::<Vec<_>>()) {
                        let mut fired = vec![(send, send.cont.clone())];
                        for (g, &c) in groups.iter().zip(&choice) {
                            let (recv, theta) = &g[c];
                            fired.push((recv, recv.cont.subst(theta)?));
                        }
                        let receivers = subset.iter().map(|&i| by_loc[i].0.clone()).collect();
                        emit(RuleLabel::Broad { chan: chan.clone(), sender: l.clone(), receivers }, fired)?;
                    }
                }
            }
            // Local: an input in another entry at the same location.
            for recv in &actions {
                let Kind::BIn { chan: c, pattern } = &recv.kind else { continue };
                if c != chan || recv.entry == send.entry || loc(recv) != l {
                    continue;
                }
                let Some(theta) = match_broadcast(msg, pattern) else { continue };
                let fired = vec![(send, send.cont.clone()), (recv, recv.cont.subst(&theta)?)];
                emit(RuleLabel::Local { chan: chan.clone(), location: l.clone() }, fired)?;
            }
        }

        for recv in &actions {
            let Kind::CIn { chan, pattern, setvar } = &recv.kind else { continue };
            let m = loc(recv);
            let mut by_loc: Vec<(Name, Vec<(&Action, &Message)>)> = Vec::new();
            for send in &actions {
                let Kind::Out { chan: c, msg } = &send.kind else { continue };
                let l = loc(send);
                if c != chan || !nf.connectivity.contains(l, m) || match_broadcast(msg, pattern).is_none() {
                    continue;
                }
                match by_loc.iter_mut().find(|(n, _)| n == l) {
                    Some((_, v)) => v.push((send, msg)),
                    None => by_loc.push((l.clone(), vec![(send, msg)])),
                }
            }
            if by_loc.is_empty() {
                continue;
            }
            by_loc.sort_by(|a, b| a.0.cmp(&b.0));
            let beta = self.bound(nf, &recv.extra, chan, m);
            let sizes: Vec<usize> = match self.mode {
                Mode::Default => vec![by_loc.len().min(beta)],
                Mode::Exhaustive => (1..=by_loc.len().min(beta)).collect(),
            };
            for k in sizes {
                for subset in subsets_of_size(by_loc.len(), k) {
                    assert!(!subset.is_empty() && subset.len() <= beta, "collection exceeds the bound");
                    let groups: Vec<&Vec<(&Action, &Message)>> = subset.iter().map(|&i| &by_loc[i].1).collect();
                    for choice in product(&groups.iter().map(|g| g.len()).collect::<Vec<_>>()) {
                        let chosen: Vec<(&Action, &Message)> = groups.iter().zip(&choice).map(|(g, &c)| g[c]).collect();
                        let msgs: Vec<Message> = chosen.iter().map(|(_, msg)| (*msg).clone()).collect();
                        let bag = match_collection(&msgs, pattern)?.expect("each sender matches");
                        let mut fired = vec![(recv, recv.cont.subst(&Subst::single(setvar.clone(), bag))?)];
                        fired.extend(chosen.iter().map(|(s, _)| (*s, s.cont.clone())));
                        let senders = subset.iter().map(|&i| by_loc[i].0.clone()).collect();
                        emit(RuleLabel::Coll { chan: chan.clone(), receiver: m.clone(), senders }, fired)?;
                    }
                }
            }
        }
        transitions.sort_by(|a, b| (&a.label, &a.target).cmp(&(&b.label, &b.target)));
        Ok(Expansion { transitions, budget_hit })
    }

    // Replace each fired entry by its continuation and residual.
    fn fire(&self, nf: &NormalForm, fired: &[(&Action, Process)]) -> NormalForm {
        let mut located = nf.located.clone();
        let mut restrictions = nf.restrictions.clone();
        for (a, cont) in fired {
            located[a.entry].1 = a.remainder(cont.clone());
            restrictions.extend(a.extra.iter().cloned());
        }
        let raw = NormalForm { restrictions, connectivity: nf.connectivity.clone(), located };
        canonicalize(raw, &self.registry)
    }

    pub fn successors(&self, nf: &NormalForm) -> Result<Vec<(RuleLabel, NormalForm)>, ReductionError> {
        Ok(self.expand(nf)?.transitions.into_iter().map(|t| (t.label, t.target)).collect())
    }
}

fn split_par<'a>(p: &'a Process, out: &mut Vec<&'a Process>) {
    match p {
        Process::Par(a, b) => {
            split_par(a, out);
            split_par(b, out);
        }
        q => out.push(q),
    }
}

/// Index subsets of `0..n` with exactly `k` elements, in lexicographic order.
pub fn subsets_of_size(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= n {
        go(0, n, k, &mut Vec::new(), &mut out);
    }
    out
}

fn product(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &s in sizes {
        out = out.into_iter().flat_map(|v| (0..s).map(move |i| {
            let mut w = v.clone();
            w.push(i);
            w
        })).collect();
    }
    out
}

/// Successors of a state under a program's declarations.
pub fn successors(nf: &NormalForm, p: &Program, mode: Mode) -> Result<Vec<(RuleLabel, NormalForm)>, ReductionError> {
    Engine::new(p, mode, Limits::default()).successors(nf)
}

pub type Trace = Vec<(RuleLabel, NormalForm)>;

/// Seeded random execution: a uniformly chosen successor at each step.
pub fn run(p: &Program, seed: u64, max_steps: usize, mode: Mode) -> Result<Trace, ReductionError> {
    let engine = Engine::new(p, mode, Limits { max_steps, ..Limits::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = engine.initial();
    let mut trace = Vec::new();
    for _ in 0..max_steps {
        let mut next = engine.successors(&state)?;
        if next.is_empty() {
            break;
        }
        let (label, target) = next.swap_remove(rng.gen_range(0..next.len()));
        state = target.clone();
        trace.push((label, target));
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub from: usize,
    pub label: RuleLabel,
    pub to: usize,
}

#[derive(Debug, Clone)]
pub struct StateGraph {
    pub states: Vec<NormalForm>,
    pub edges: Vec<Edge>,
    pub initial: usize,
    pub truncated: bool,
    pub limits: Limits,
}

#[derive(Serialize)]
struct GraphExport<'a> {
    states: Vec<String>,
    edges: &'a [Edge],
    initial: usize,
    truncated: bool,
    limits: Limits,
}

impl StateGraph {
    pub fn successors_of(&self, s: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == s)
    }

    /// Adjacency lists indexed by state.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.states.len()];
        for e in &self.edges {
            adj[e.from].push(e.to);
        }
        adj
    }

    /// States without outgoing edges.
    pub fn terminal_states(&self) -> Vec<usize> {
        let adj = self.adjacency();
        (0..self.states.len()).filter(|&s| adj[s].is_empty()).collect()
    }

    pub fn to_json(&self) -> String {
        let export = GraphExport {
            states: self.states.iter().map(|s| s.to_string()).collect(),
            edges: &self.edges,
            initial: self.initial,
            truncated: self.truncated,
            limits: self.limits,
        };
        serde_json::to_string_pretty(&export).expect("graph serializes")
    }

    pub fn to_dot(&self) -> String {
        let esc = |s: &str| s.replace('\\', "\\\\").replace('"', "\\\"");
        let mut out = String::from("digraph states {\n  node [shape=box, fontname=\"monospace\"];\n");
        for (i, s) in self.states.iter().enumerate() {
            let style = if i == self.initial { ", penwidth=2" } else { "" };
            out.push_str(&format!("  s{i} [label=\"{}\"{style}];\n", esc(&s.to_string())));
        }
        for e in &self.edges {
            out.push_str(&format!("  s{} -> s{} [label=\"{}\"];\n", e.from, e.to, esc(&e.label.to_string())));
        }
        out.push_str("}\n");
        out
    }
}

/// Breadth-first exploration of the reachable canonical states.
pub fn state_graph(p: &Program, limits: Limits, mode: Mode) -> Result<StateGraph, ReductionError> {
    Engine::new(p, mode, limits).state_graph()
}

impl Engine {
    pub fn state_graph(&self) -> Result<StateGraph, ReductionError> {
        let init = self.initial();
        let mut index: HashMap<NormalForm, usize> = HashMap::new();
        let mut states = vec![init.clone()];
        let mut spent = vec![0usize];
        index.insert(init, 0);
        let mut edges = Vec::new();
        let mut truncated = false;
        let mut queue = VecDeque::from([0usize]);
        while let Some(s) = queue.pop_front() {
            let engine = Engine {
                limits: Limits { unfold_budget: self.limits.unfold_budget.saturating_sub(spent[s]), ..self.limits },
                ..self.clone()
            };
            let exp = engine.expand(&states[s])?;
            truncated |= exp.budget_hit;
            for t in exp.transitions {
                let cost = spent[s] + t.unfolds;
                let to = match index.get(&t.target) {
                    Some(&to) => {
                        if cost < spent[to] {
                            spent[to] = cost;
                        }
                        to
                    }
                    None => {
                        if states.len() >= self.limits.max_states {
                            truncated = true;
                            continue;
                        }
                        let to = states.len();
                        index.insert(t.target.clone(), to);
                        states.push(t.target);
                        spent.push(cost);
                        queue.push_back(to);
                        to
                    }
                };
                edges.push(Edge { from: s, label: t.label, to });
            }
        }
        Ok(StateGraph { states, edges, initial: 0, truncated, limits: self.limits })
    }
}

/// How much of the exhaustive state graph to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Exploration {
    /// Every reachable state and transition.
    Full,
    /// Independent invisible steps prioritised and dead prefixes dropped.
    #[default]
    Reduced,
}

/// Exhaustive exploration that keeps a single step wherever a state has an
/// invisible step independent of every other behaviour. The result is a
/// subgraph of the full state graph, branching bisimilar to it with barbs as
/// state labels.
pub fn reduced_state_graph(p: &Program, limits: Limits) -> Result<StateGraph, ReductionError> {
    Engine::new(p, Mode::Exhaustive, limits).reduced_state_graph()
}

impl Engine {
    pub fn explore(&self, how: Exploration) -> Result<StateGraph, ReductionError> {
        match how {
            Exploration::Full => self.state_graph(),
            Exploration::Reduced => self.reduced_state_graph(),
        }
    }

    pub fn reduced_state_graph(&self) -> Result<StateGraph, ReductionError> {
        let init = self.collect_garbage(self.initial());
        let mut index: HashMap<NormalForm, usize> = HashMap::new();
        let mut states = vec![init.clone()];
        let mut spent = vec![0usize];
        let mut on_stack = vec![true];
        index.insert(init, 0);
        let mut edges = Vec::new();
        let mut truncated = false;
        let mut stack: Vec<(usize, std::vec::IntoIter<Transition>)> = Vec::new();
        let first = self.chosen_transitions(&states[0], 0, &index, &on_stack, &mut truncated)?;
        stack.push((0, first.into_iter()));
        while let Some((s, iter)) = stack.last_mut() {
            let s = *s;
            let Some(t) = iter.next() else {
                on_stack[s] = false;
                stack.pop();
                continue;
            };
            let cost = spent[s] + t.unfolds;
            let to = match index.get(&t.target) {
                Some(&to) => {
                    spent[to] = spent[to].min(cost);
                    to
                }
                None => {
                    if states.len() >= self.limits.max_states {
                        truncated = true;
                        continue;
                    }
                    let to = states.len();
                    index.insert(t.target.clone(), to);
                    states.push(t.target);
                    spent.push(cost);
                    on_stack.push(true);
                    let budget = self.limits.unfold_budget.saturating_sub(cost);
                    let engine = Engine { limits: Limits { unfold_budget: budget, ..self.limits }, ..self.clone() };
                    let next = engine.chosen_transitions(&states[to], to, &index, &on_stack, &mut truncated)?;
                    stack.push((to, next.into_iter()));
                    to
                }
            };
            edges.push(Edge { from: s, label: t.label, to });
        }
        edges.sort_by_key(|e| e.from);
        Ok(StateGraph { states, edges, initial: 0, truncated, limits: self.limits })
    }

    /// Drop prefixes on restricted channels that can never fire: every entry
    /// mentioning the channel is an output on it, or every one is an input
    /// on it. Unused restrictions go too.
    pub fn collect_garbage(&self, mut nf: NormalForm) -> NormalForm {
        let subject = |p: &Process| match p {
            Process::Output { chan, .. } => Some((chan.clone(), true)),
            Process::BInput { chan, .. } | Process::CInput { chan, .. } => Some((chan.clone(), false)),
            _ => None,
        };
        let mut changed = false;
        loop {
            let names: Vec<NameSet> = nf.located.iter().map(|(_, p)| p.free_names()).collect();
            let dead: BTreeSet<Name> = nf
                .restrictions
                .iter()
                .map(|r| &r.name)
                .filter(|c| {
                    let mut polarity = None;
                    nf.located.iter().zip(&names).filter(|(_, fn_)| fn_.contains(*c)).all(|((_, p), _)| {
                        match subject(p) {
                            Some((chan, out)) if &chan == *c => *polarity.get_or_insert(out) == out,
                            _ => false,
                        }
                    }) && polarity.is_some()
                })
                .cloned()
                .collect();
            if dead.is_empty() {
                break;
            }
            changed = true;
            for (_, p) in &mut nf.located {
                if subject(p).is_some_and(|(chan, _)| dead.contains(&chan)) {
                    *p = Process::Nil;
                }
            }
        }
        let used: NameSet = nf.located.iter().flat_map(|(_, p)| p.free_names()).collect();
        let before = nf.restrictions.len();
        nf.restrictions.retain(|r| used.contains(&r.name));
        if changed || nf.restrictions.len() != before {
            canonicalize(nf, &self.registry)
        } else {
            nf
        }
    }

    fn chosen_transitions(
        &self,
        nf: &NormalForm,
        id: usize,
        index: &HashMap<NormalForm, usize>,
        on_stack: &[bool],
        truncated: &mut bool,
    ) -> Result<Vec<Transition>, ReductionError> {
        let mut exp = self.expand(nf)?;
        for t in &mut exp.transitions {
            t.target = self.collect_garbage(std::mem::take(&mut t.target));
        }
        *truncated |= exp.budget_hit;
        if exp.budget_hit {
            return Ok(exp.transitions);
        }
        let (actions, _) = self.actions(nf)?;
        let mut per_entry = vec![0usize; nf.located.len()];
        actions.iter().for_each(|a| per_entry[a.entry] += 1);
        let before: BTreeSet<(Name, Name)> = actions
            .iter()
            .filter_map(|a| match &a.kind {
                Kind::BIn { chan, .. } => Some((chan.clone(), nf.located[a.entry].0.clone())),
                _ => None,
            })
            .collect();
        let restricted = nf.restricted();
        let barbs_here = crate::bisim::barbs_with(nf, &self.program, &self.registry);
        for t in &exp.transitions {
            let c = t.label.chan();
            let independent = restricted.contains(c)
                && t.entries.iter().all(|&e| per_entry[e] == 1)
                && exp.transitions.iter().filter(|u| u.label.chan() == c).count() == 1
                && nf.located.iter().enumerate().all(|(j, (_, q))| t.entries.contains(&j) || !q.free_names().contains(c));
            if !independent || index.get(&t.target).is_some_and(|&to| to == id || on_stack[to]) {
                continue;
            }
            if !t.exposed_inputs.is_subset(&before) || crate::bisim::barbs_with(&t.target, &self.program, &self.registry) != barbs_here {
                continue;
            }
            return Ok(vec![t.clone()]);
        }
        Ok(exp.transitions)
    }
}
