//! Structural congruence as a normalizer: networks are brought to the form
//! `(new m..)(C | l1[P1] | ... | lk[Pk])` with canonical restricted names,
//! sorted components and canonical located processes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::ast::{alpha_canonical_process, Bound, Message, Name, NameSet, Network, Process};
use crate::eval::{evaluate_partial, Registry};
use crate::typesys::Type;

/// Directed connectivity atoms `l -> m`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Connectivity(pub BTreeSet<(Name, Name)>);

impl Connectivity {
    pub fn contains(&self, l: &Name, m: &Name) -> bool {
        self.0.contains(&(l.clone(), m.clone()))
    }

    pub fn insert(&mut self, l: Name, m: Name) {
        self.0.insert((l, m));
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Name, Name)> {
        self.0.iter()
    }
}

pub fn connected(c: &Connectivity, l: &Name, m: &Name) -> bool {
    c.contains(l, m)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Restriction {
    pub name: Name,
    pub bound: Bound,
    pub ty: Option<Type>,
}

/// Restrictions around connectivity and located processes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NormalForm {
    pub restrictions: Vec<Restriction>,
    pub connectivity: Connectivity,
    /// Sorted; no entry is a parallel composition or a restriction, and a
    /// `0` entry only appears for a location with no other entries.
    pub located: Vec<(Name, Process)>,
}

impl NormalForm {
    /// The network this normal form stands for.
    pub fn denote(&self) -> Network {
        let mut parts: Vec<Network> = self.connectivity.iter().map(|(l, m)| Network::Near(l.clone(), m.clone())).collect();
        parts.extend(self.located.iter().map(|(l, p)| Network::Located(l.clone(), p.clone())));
        let mut net = Network::par_all(parts);
        for r in self.restrictions.iter().rev() {
            net = Network::New { name: r.name.clone(), bound: r.bound.clone(), ty: r.ty.clone(), body: Box::new(net) };
        }
        net
    }

    pub fn restricted(&self) -> NameSet {
        self.restrictions.iter().map(|r| r.name.clone()).collect()
    }

    pub fn restriction(&self, x: &Name) -> Option<&Restriction> {
        self.restrictions.iter().find(|r| &r.name == x)
    }

    pub fn free_names(&self) -> NameSet {
        self.denote().free_names()
    }

    /// Shape invariants of a canonical normal form.
    pub fn check_invariants(&self) -> Result<(), String> {
        let restricted = self.restricted();
        if restricted.len() != self.restrictions.len() {
            return Err("duplicate restricted name".into());
        }
        for r in &self.restrictions {
            if !r.name.as_str().starts_with('#') {
                return Err(format!("restricted name `{}` is not canonical", r.name));
            }
        }
        let mut sorted = self.located.clone();
        sorted.sort();
        if sorted != self.located {
            return Err("located components are not sorted".into());
        }
        for (l, p) in &self.located {
            match p {
                Process::Par(..) => return Err(format!("parallel composition at top of `{l}`")),
                Process::New { .. } => return Err(format!("restriction at top of `{l}`")),
                Process::Nil if self.located.iter().filter(|(m, _)| m == l).count() > 1 => {
                    return Err(format!("redundant `0` at `{l}`"))
                }
                _ => {}
            }
            if alpha_canonical_process(p) != *p {
                return Err(format!("process at `{l}` is not alpha-canonical"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for NormalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", crate::parser::print_network(&self.denote()))
    }
}

/// Normal form with respect to the shipped builtin registry.
pub fn normalize(n: &Network) -> NormalForm {
    normalize_with(n, &Registry::builtins())
}

pub fn normalize_with(n: &Network, r: &Registry) -> NormalForm {
    let mut raw = NormalForm { restrictions: Vec::new(), connectivity: Connectivity::default(), located: Vec::new() };
    lift(n, &BTreeMap::new(), &mut raw);
    canonicalize(raw, r)
}

// Push restrictions outwards, renaming each bound name to a fresh one so
// that scope extension cannot capture.
fn lift(n: &Network, env: &BTreeMap<Name, Name>, out: &mut NormalForm) {
    let r = |x: &Name| env.get(x).cloned().unwrap_or_else(|| x.clone());
    match n {
        Network::Located(l, p) => out.located.push((r(l), p.rename(env))),
        Network::Near(l, m) => out.connectivity.insert(r(l), r(m)),
        Network::Par(a, b) => {
            lift(a, env, out);
            lift(b, env, out);
        }
        Network::New { name, bound, ty, body } => {
            let fresh = Name::fresh();
            let bound = Bound {
                default: bound.default,
                at: bound.at.iter().map(|(l, k)| (r(l), *k)).collect(),
            };
            out.restrictions.push(Restriction { name: fresh.clone(), bound, ty: ty.clone() });
            let mut inner = env.clone();
            inner.insert(name.clone(), fresh);
            lift(body, &inner, out);
        }
    }
}

/// Bring an arbitrary (not necessarily canonical) normal form to canonical
/// shape: split and lift located entries, canonicalize processes, then
/// assign canonical restricted names.
pub fn canonicalize(mut nf: NormalForm, r: &Registry) -> NormalForm {
    let mut work: Vec<(Name, Process)> = std::mem::take(&mut nf.located);
    let mut entries = Vec::new();
    while let Some((l, p)) = work.pop() {
        match canonical_process(&p, r) {
            Process::Par(a, b) => {
                work.push((l.clone(), *a));
                work.push((l, *b));
            }
            Process::New { name, bound, ty, body } => {
                let fresh = Name::fresh();
                let map = BTreeMap::from([(name, fresh.clone())]);
                nf.restrictions.push(Restriction { name: fresh, bound, ty });
                work.push((l, body.rename(&map)));
            }
            q => entries.push((l, q)),
        }
    }
    nf.located = prune_nil(entries);
    let mut current = assign_names(nf, r);
    for _ in 0..8 {
        let next = assign_names(current.clone(), r);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn prune_nil(entries: Vec<(Name, Process)>) -> Vec<(Name, Process)> {
    let busy: BTreeSet<Name> =
        entries.iter().filter(|(_, p)| *p != Process::Nil).map(|(l, _)| l.clone()).collect();
    let mut seen_nil = BTreeSet::new();
    entries
        .into_iter()
        .filter(|(l, p)| *p != Process::Nil || (!busy.contains(l) && seen_nil.insert(l.clone())))
        .collect()
}

fn masked(x: &Name, restricted: &NameSet) -> Name {
    if restricted.contains(x) {
        Name::new("#?")
    } else {
        x.clone()
    }
}

fn mask_map(restricted: &NameSet) -> BTreeMap<Name, Name> {
    restricted.iter().map(|x| (x.clone(), Name::new("#?"))).collect()
}

fn assign_names(nf: NormalForm, r: &Registry) -> NormalForm {
    let restricted = nf.restricted();
    let mask = mask_map(&restricted);
    let mut located = nf.located;
    located.sort_by_cached_key(|(l, p)| (masked(l, &restricted), p.rename(&mask), l.clone(), p.clone()));

    let mut order: Vec<Name> = Vec::new();
    let mut seen = NameSet::new();
    let mut note = |x: &Name, order: &mut Vec<Name>| {
        if restricted.contains(x) && seen.insert(x.clone()) {
            order.push(x.clone());
        }
    };
    for (l, p) in &located {
        note(l, &mut order);
        p.visit_names(&mut |x| note(x, &mut order));
    }
    let mut near: Vec<(Name, Name)> = nf.connectivity.0.into_iter().collect();
    near.sort_by_key(|(l, m)| (masked(l, &restricted), masked(m, &restricted), l.clone(), m.clone()));
    for (l, m) in &near {
        note(l, &mut order);
        note(m, &mut order);
    }
    let mut unused: Vec<&Restriction> = nf.restrictions.iter().filter(|x| !seen.contains(&x.name)).collect();
    unused.sort_by_key(|x| {
        let b = Bound {
            default: x.bound.default,
            at: x.bound.at.iter().map(|(l, k)| (masked(l, &restricted), *k)).collect(),
        };
        (b, x.ty.clone())
    });
    let unused: Vec<Name> = unused.into_iter().map(|x| x.name.clone()).collect();
    order.extend(unused);

    let rename: BTreeMap<Name, Name> =
        order.iter().enumerate().map(|(i, x)| (x.clone(), Name::new(format!("#{i}")))).collect();
    let rn = |x: &Name| rename.get(x).cloned().unwrap_or_else(|| x.clone());
    let connectivity = Connectivity(near.iter().map(|(l, m)| (rn(l), rn(m))).collect());
    let by_name: BTreeMap<&Name, &Restriction> = nf.restrictions.iter().map(|x| (&x.name, x)).collect();
    let restrictions = order
        .iter()
        .map(|x| {
            let old = by_name[x];
            Restriction {
                name: rn(x),
                bound: Bound { default: old.bound.default, at: old.bound.at.iter().map(|(l, k)| (rn(l), *k)).collect() },
                ty: old.ty.clone(),
            }
        })
        .collect();
    let moved: BTreeMap<Name, Name> = rename.into_iter().filter(|(x, y)| x != y).collect();
    let mut located: Vec<(Name, Process)> = located
        .into_iter()
        .map(|(l, p)| {
            let l = moved.get(&l).cloned().unwrap_or(l);
            if p.free_names().iter().any(|x| moved.contains_key(x)) {
                (l, canonical_process(&p.rename(&moved), r))
            } else {
                (l, p)
            }
        })
        .collect();
    located.sort();
    NormalForm { restrictions, connectivity, located }
}

fn is_binder(x: &Name) -> bool {
    x.as_str().starts_with('%')
}

fn closed(m: &Message) -> bool {
    let mut ok = true;
    m.visit_names(&mut |x| ok &= !is_binder(x));
    ok && !m.contains_select() && !matches!(m, Message::SetVar(_))
}

/// Canonical representative of a process up to the process-level laws:
/// alpha-canonical binders, evaluated messages and guards, decided guards
/// removed, symmetric guards oriented, `|` and `+` operands sorted, `0`
/// dropped from parallel compositions.
pub fn canonical_process(p: &Process, r: &Registry) -> Process {
    canon(&alpha_canonical_process(p), r)
}

fn eval(m: &Message, r: &Registry) -> Message {
    evaluate_partial(m, r, &is_binder)
}

fn canon(p: &Process, r: &Registry) -> Process {
    match p {
        Process::Nil | Process::Call { .. } => match p {
            Process::Call { agent, args } => {
                Process::Call { agent: agent.clone(), args: args.iter().map(|m| eval(m, r)).collect() }
            }
            _ => Process::Nil,
        },
        Process::Output { chan, msg, cont } => {
            Process::Output { chan: chan.clone(), msg: eval(msg, r), cont: Box::new(canon(cont, r)) }
        }
        Process::BInput { chan, pattern, cont } => {
            Process::BInput { chan: chan.clone(), pattern: pattern.clone(), cont: Box::new(canon(cont, r)) }
        }
        Process::CInput { chan, pattern, setvar, cont } => Process::CInput {
            chan: chan.clone(),
            pattern: pattern.clone(),
            setvar: setvar.clone(),
            cont: Box::new(canon(cont, r)),
        },
        Process::New { name, bound, ty, body } => {
            Process::New { name: name.clone(), bound: bound.clone(), ty: ty.clone(), body: Box::new(canon(body, r)) }
        }
        Process::Match { left, right, body } => {
            let (a, b) = (eval(left, r), eval(right, r));
            if a == b {
                return canon(body, r);
            }
            let (left, right) = if a <= b { (a, b) } else { (b, a) };
            Process::Match { left, right, body: Box::new(canon(body, r)) }
        }
        Process::Mismatch { left, right, body } => {
            let (a, b) = (eval(left, r), eval(right, r));
            if a != b && closed(&a) && closed(&b) {
                return canon(body, r);
            }
            let (left, right) = if a <= b { (a, b) } else { (b, a) };
            Process::Mismatch { left, right, body: Box::new(canon(body, r)) }
        }
        Process::Par(..) => {
            let mut ops = Vec::new();
            flatten_par(p, &mut ops);
            let mut ops: Vec<Process> =
                ops.into_iter().map(|q| canon(q, r)).flat_map(split_par).filter(|q| *q != Process::Nil).collect();
            ops.sort();
            Process::par_all(ops)
        }
        Process::Sum(..) => {
            let mut ops = Vec::new();
            flatten_sum(p, &mut ops);
            let mut ops: Vec<Process> = ops.into_iter().map(|q| canon(q, r)).flat_map(split_sum).collect();
            ops.sort();
            Process::sum_all(ops)
        }
    }
}

fn flatten_par<'a>(p: &'a Process, out: &mut Vec<&'a Process>) {
    match p {
        Process::Par(a, b) => {
            flatten_par(a, out);
            flatten_par(b, out);
        }
        q => out.push(q),
    }
}

fn flatten_sum<'a>(p: &'a Process, out: &mut Vec<&'a Process>) {
    match p {
        Process::Sum(a, b) => {
            flatten_sum(a, out);
            flatten_sum(b, out);
        }
        q => out.push(q),
    }
}

fn split_par(p: Process) -> Vec<Process> {
    match p {
        Process::Par(a, b) => {
            let mut v = split_par(*a);
            v.extend(split_par(*b));
            v
        }
        q => vec![q],
    }
}

fn split_sum(p: Process) -> Vec<Process> {
    match p {
        Process::Sum(a, b) => {
            let mut v = split_sum(*a);
            v.extend(split_sum(*b));
            v
        }
        q => vec![q],
    }
}

/// Sound check for structural congruence: equal canonical normal forms.
pub fn cong_equiv(n1: &Network, n2: &Network) -> bool {
    normalize(n1) == normalize(n2)
}

pub fn cong_equiv_with(n1: &Network, n2: &Network, r: &Registry) -> bool {
    normalize_with(n1, r) == normalize_with(n2, r)
}
