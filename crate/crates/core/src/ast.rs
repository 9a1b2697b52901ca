//! Syntactic categories of the calculus: names, messages, patterns,
//! processes, networks and programs, together with name hygiene
//! (free names, substitution, renaming, alpha-canonical forms).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::eval::{ConstructorFn, SelectorFn};
use crate::typesys::Type;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AstError {
    #[error("pattern binder `{0}` occurs more than once")]
    DuplicateBinder(Name),
    #[error("pattern binder `{0}` does not occur in the pattern body")]
    UnusedBinder(Name),
    #[error("ill-sorted substitution: {0}")]
    IllSorted(String),
    #[error("bound for `{0}` must be at least 1")]
    ZeroBound(String),
}

/// An identifier drawn from an unbounded namespace.
///
/// Names starting with `%` or `#` are reserved for canonical binders and
/// names starting with `$` for internally generated fresh names; none of
/// them may occur free in a user program.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Name(Arc<str>);

static FRESH: AtomicU64 = AtomicU64::new(0);

impl Name {
    pub fn new(s: impl AsRef<str>) -> Name {
        let s = s.as_ref();
        assert!(!s.is_empty(), "names are nonempty");
        Name(Arc::from(s))
    }

    /// A globally fresh name; never produced by the parser.
    pub fn fresh() -> Name {
        let n = FRESH.fetch_add(1, AtomicOrdering::Relaxed);
        Name::new(format!("${n}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_reserved(&self) -> bool {
        matches!(self.0.as_bytes()[0], b'%' | b'#' | b'$')
    }

    pub fn is_numeric(&self) -> bool {
        self.0.bytes().all(|b| b.is_ascii_digit())
    }

    fn numeric_key(&self) -> &str {
        let t = self.0.trim_start_matches('0');
        if t.is_empty() {
            "0"
        } else {
            t
        }
    }
}

/// Numeric identifiers sort first and numerically; everything else
/// lexicographically.
impl Ord for Name {
    fn cmp(&self, other: &Self) -> Ordering {
        let digit = |n: &Name| n.0.as_bytes().first().is_some_and(u8::is_ascii_digit);
        if !digit(self) && !digit(other) {
            return self.0.cmp(&other.0);
        }
        match (self.is_numeric(), other.is_numeric()) {
            (true, true) => {
                let (a, b) = (self.numeric_key(), other.numeric_key());
                a.len().cmp(&b.len()).then_with(|| a.cmp(b)).then_with(|| self.0.cmp(&other.0))
            }
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            (false, false) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for Name {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Name {
    fn from(s: &str) -> Name {
        Name::new(s)
    }
}

impl Serialize for Name {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

pub type NameSet = BTreeSet<Name>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Message {
    Var(Name),
    SetVar(Name),
    /// Arity is always at least two.
    Tuple(Vec<Message>),
    Select(Name, MultisetExpr),
    Cons(Name, Box<Message>),
    /// An instantiated multiset value (what a set variable becomes after a
    /// collection). Elements are kept sorted.
    Bag(Vec<Message>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MultisetExpr {
    /// Elements are kept sorted so that equality is multiset equality.
    Literal(Vec<Message>),
    Var(Name),
}

impl MultisetExpr {
    pub fn literal(mut items: Vec<Message>) -> MultisetExpr {
        items.sort();
        MultisetExpr::Literal(items)
    }
}

impl Message {
    pub fn var(s: &str) -> Message {
        Message::Var(Name::new(s))
    }

    pub fn tuple(items: Vec<Message>) -> Message {
        assert!(items.len() >= 2, "tuples have arity at least two");
        Message::Tuple(items)
    }

    pub fn cons(f: &str, m: Message) -> Message {
        Message::Cons(Name::new(f), Box::new(m))
    }

    pub fn bag(mut items: Vec<Message>) -> Message {
        items.sort();
        Message::Bag(items)
    }

    pub fn as_name(&self) -> Option<&Name> {
        match self {
            Message::Var(n) => Some(n),
            _ => None,
        }
    }

    pub fn free_names(&self) -> NameSet {
        let mut out = NameSet::new();
        self.collect_names(&mut out);
        out
    }

    pub(crate) fn collect_names(&self, out: &mut NameSet) {
        match self {
            Message::Var(n) | Message::SetVar(n) => {
                out.insert(n.clone());
            }
            Message::Tuple(ms) | Message::Bag(ms) => ms.iter().for_each(|m| m.collect_names(out)),
            Message::Select(_, e) => match e {
                MultisetExpr::Literal(ms) => ms.iter().for_each(|m| m.collect_names(out)),
                MultisetExpr::Var(s) => {
                    out.insert(s.clone());
                }
            },
            Message::Cons(_, m) => m.collect_names(out),
        }
    }

    /// Pre-order traversal over every name occurrence.
    pub fn visit_names(&self, f: &mut dyn FnMut(&Name)) {
        match self {
            Message::Var(n) | Message::SetVar(n) => f(n),
            Message::Tuple(ms) | Message::Bag(ms) => ms.iter().for_each(|m| m.visit_names(f)),
            Message::Select(_, MultisetExpr::Literal(ms)) => ms.iter().for_each(|m| m.visit_names(f)),
            Message::Select(_, MultisetExpr::Var(s)) => f(s),
            Message::Cons(_, m) => m.visit_names(f),
        }
    }

    pub fn contains_select(&self) -> bool {
        match self {
            Message::Select(..) => true,
            Message::Var(_) | Message::SetVar(_) => false,
            Message::Tuple(ms) | Message::Bag(ms) => ms.iter().any(Message::contains_select),
            Message::Cons(_, m) => m.contains_select(),
        }
    }

    /// Selector and constructor symbols used in the message.
    pub fn visit_symbols(&self, sel: &mut dyn FnMut(&Name), cons: &mut dyn FnMut(&Name)) {
        match self {
            Message::Var(_) | Message::SetVar(_) => {}
            Message::Tuple(ms) | Message::Bag(ms) => ms.iter().for_each(|m| m.visit_symbols(sel, cons)),
            Message::Select(g, e) => {
                sel(g);
                if let MultisetExpr::Literal(ms) = e {
                    ms.iter().for_each(|m| m.visit_symbols(sel, cons));
                }
            }
            Message::Cons(c, m) => {
                cons(c);
                m.visit_symbols(sel, cons);
            }
        }
    }

    /// Renames name occurrences (no binders occur inside messages).
    pub fn rename(&self, map: &BTreeMap<Name, Name>) -> Message {
        if map.is_empty() {
            return self.clone();
        }
        let r = |n: &Name| map.get(n).cloned().unwrap_or_else(|| n.clone());
        match self {
            Message::Var(n) => Message::Var(r(n)),
            Message::SetVar(n) => Message::SetVar(r(n)),
            Message::Tuple(ms) => Message::Tuple(ms.iter().map(|m| m.rename(map)).collect()),
            Message::Bag(ms) => Message::bag(ms.iter().map(|m| m.rename(map)).collect()),
            Message::Select(g, MultisetExpr::Literal(ms)) => {
                Message::Select(g.clone(), MultisetExpr::literal(ms.iter().map(|m| m.rename(map)).collect()))
            }
            Message::Select(g, MultisetExpr::Var(s)) => Message::Select(g.clone(), MultisetExpr::Var(r(s))),
            Message::Cons(f, m) => Message::Cons(f.clone(), Box::new(m.rename(map))),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Message::Var(_) | Message::SetVar(_) => 1,
            Message::Tuple(ms) | Message::Bag(ms) => 1 + ms.iter().map(Message::size).sum::<usize>(),
            Message::Select(_, MultisetExpr::Literal(ms)) => 1 + ms.iter().map(Message::size).sum::<usize>(),
            Message::Select(_, MultisetExpr::Var(_)) => 2,
            Message::Cons(_, m) => 1 + m.size(),
        }
    }
}

/// A finite map from names to messages, applied simultaneously.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Subst(pub BTreeMap<Name, Message>);

impl Subst {
    pub fn new() -> Subst {
        Subst::default()
    }

    pub fn single(x: Name, m: Message) -> Subst {
        let mut s = Subst::new();
        s.insert(x, m);
        s
    }

    pub fn insert(&mut self, x: Name, m: Message) {
        self.0.insert(x, m);
    }

    pub fn get(&self, x: &Name) -> Option<&Message> {
        self.0.get(x)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn domain(&self) -> impl Iterator<Item = &Name> {
        self.0.keys()
    }

    pub fn range_names(&self) -> NameSet {
        let mut out = NameSet::new();
        for m in self.0.values() {
            m.collect_names(&mut out);
        }
        out
    }

    fn without(&self, xs: &[Name]) -> Subst {
        let mut s = self.clone();
        for x in xs {
            s.0.remove(x);
        }
        s
    }

    /// Value for a name in a position that needs a plain name (channels,
    /// locations).
    fn name_at(&self, n: &Name) -> Result<Name, AstError> {
        match self.0.get(n) {
            None => Ok(n.clone()),
            Some(Message::Var(m)) => Ok(m.clone()),
            Some(other) => Err(AstError::IllSorted(format!("`{n}` is used as a name but is bound to `{other:?}`"))),
        }
    }
}

/// Simultaneous substitution on a message.
pub fn apply_subst(m: &Message, s: &Subst) -> Result<Message, AstError> {
    if s.is_empty() {
        return Ok(m.clone());
    }
    Ok(match m {
        Message::Var(x) => match s.get(x) {
            None => m.clone(),
            Some(Message::Bag(_)) => {
                return Err(AstError::IllSorted(format!("multiset substituted for first-order name `{x}`")))
            }
            Some(v) => v.clone(),
        },
        Message::SetVar(x) => match s.get(x) {
            None => m.clone(),
            Some(Message::Bag(items)) => Message::Bag(items.clone()),
            Some(Message::SetVar(y)) | Some(Message::Var(y)) => Message::SetVar(y.clone()),
            Some(v) => return Err(AstError::IllSorted(format!("set variable `{x}` bound to non-multiset `{v:?}`"))),
        },
        Message::Tuple(ms) => Message::Tuple(ms.iter().map(|m| apply_subst(m, s)).collect::<Result<_, _>>()?),
        Message::Bag(ms) => Message::bag(ms.iter().map(|m| apply_subst(m, s)).collect::<Result<_, _>>()?),
        Message::Cons(f, inner) => Message::Cons(f.clone(), Box::new(apply_subst(inner, s)?)),
        Message::Select(g, MultisetExpr::Literal(ms)) => Message::Select(
            g.clone(),
            MultisetExpr::literal(ms.iter().map(|m| apply_subst(m, s)).collect::<Result<_, _>>()?),
        ),
        Message::Select(g, MultisetExpr::Var(x)) => match s.get(x) {
            None => m.clone(),
            Some(Message::Bag(items)) => Message::Select(g.clone(), MultisetExpr::Literal(items.clone())),
            Some(Message::SetVar(y)) | Some(Message::Var(y)) => Message::Select(g.clone(), MultisetExpr::Var(y.clone())),
            Some(v) => return Err(AstError::IllSorted(format!("set variable `{x}` bound to non-multiset `{v:?}`"))),
        },
    })
}

/// An input pattern `<x1,...,xn>M`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pattern {
    pub binders: Vec<Name>,
    pub body: Message,
}

impl Pattern {
    pub fn new(binders: Vec<Name>, body: Message) -> Result<Pattern, AstError> {
        let mut seen = NameSet::new();
        let fns = body.free_names();
        for b in &binders {
            if !seen.insert(b.clone()) {
                return Err(AstError::DuplicateBinder(b.clone()));
            }
            if !fns.contains(b) {
                return Err(AstError::UnusedBinder(b.clone()));
            }
        }
        Ok(Pattern { binders, body })
    }

    /// Names of the body that are not binders.
    pub fn free_names(&self) -> NameSet {
        let mut out = self.body.free_names();
        for b in &self.binders {
            out.remove(b);
        }
        out
    }
}

/// Per-location communication bound: explicit entries plus a default;
/// `None` means unbounded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize)]
pub struct Bound {
    pub default: Option<u32>,
    pub at: BTreeMap<Name, u32>,
}

impl Bound {
    pub fn unbounded() -> Bound {
        Bound::default()
    }

    pub fn uniform(k: u32) -> Bound {
        Bound { default: Some(k), at: BTreeMap::new() }
    }

    pub fn validate(&self) -> Result<(), AstError> {
        if self.default == Some(0) {
            return Err(AstError::ZeroBound("default".into()));
        }
        if let Some((l, _)) = self.at.iter().find(|(_, k)| **k == 0) {
            return Err(AstError::ZeroBound(l.to_string()));
        }
        Ok(())
    }

    /// Bound at a location; `None` is unbounded.
    pub fn at_location(&self, l: &Name) -> Option<u32> {
        self.at.get(l).copied().or(self.default)
    }

    /// Cap as a plain count.
    pub fn cap(&self, l: &Name) -> usize {
        self.at_location(l).map(|k| k as usize).unwrap_or(usize::MAX)
    }

    fn rename(&self, map: &BTreeMap<Name, Name>) -> Bound {
        if self.at.is_empty() {
            return self.clone();
        }
        Bound {
            default: self.default,
            at: self.at.iter().map(|(l, k)| (map.get(l).cloned().unwrap_or_else(|| l.clone()), *k)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Process {
    Nil,
    Output { chan: Name, msg: Message, cont: Box<Process> },
    BInput { chan: Name, pattern: Pattern, cont: Box<Process> },
    /// Pattern binders scope over the pattern only; the set variable scopes
    /// over the continuation.
    CInput { chan: Name, pattern: Pattern, setvar: Name, cont: Box<Process> },
    New { name: Name, bound: Bound, ty: Option<Type>, body: Box<Process> },
    Match { left: Message, right: Message, body: Box<Process> },
    Mismatch { left: Message, right: Message, body: Box<Process> },
    Par(Box<Process>, Box<Process>),
    Sum(Box<Process>, Box<Process>),
    Call { agent: Name, args: Vec<Message> },
}

impl Process {
    pub fn output(chan: &str, msg: Message, cont: Process) -> Process {
        Process::Output { chan: Name::new(chan), msg, cont: Box::new(cont) }
    }

    pub fn par(a: Process, b: Process) -> Process {
        Process::Par(Box::new(a), Box::new(b))
    }

    pub fn sum(a: Process, b: Process) -> Process {
        Process::Sum(Box::new(a), Box::new(b))
    }

    /// Right-nested parallel composition; empty is `0`.
    pub fn par_all(mut ps: Vec<Process>) -> Process {
        let Some(mut acc) = ps.pop() else { return Process::Nil };
        while let Some(p) = ps.pop() {
            acc = Process::par(p, acc);
        }
        acc
    }

    pub fn sum_all(mut ps: Vec<Process>) -> Process {
        let Some(mut acc) = ps.pop() else { return Process::Nil };
        while let Some(p) = ps.pop() {
            acc = Process::sum(p, acc);
        }
        acc
    }

    pub fn free_names(&self) -> NameSet {
        let mut out = NameSet::new();
        self.collect_free(&mut out);
        out
    }

    fn collect_free(&self, out: &mut NameSet) {
        match self {
            Process::Nil => {}
            Process::Output { chan, msg, cont } => {
                out.insert(chan.clone());
                msg.collect_names(out);
                cont.collect_free(out);
            }
            Process::BInput { chan, pattern, cont } => {
                out.insert(chan.clone());
                out.extend(pattern.free_names());
                let mut inner = cont.free_names();
                for b in &pattern.binders {
                    inner.remove(b);
                }
                out.extend(inner);
            }
            Process::CInput { chan, pattern, setvar, cont } => {
                out.insert(chan.clone());
                out.extend(pattern.free_names());
                let mut inner = cont.free_names();
                inner.remove(setvar);
                out.extend(inner);
            }
            Process::New { name, bound, body, .. } => {
                out.extend(bound.at.keys().cloned());
                let mut inner = body.free_names();
                inner.remove(name);
                out.extend(inner);
            }
            Process::Match { left, right, body } | Process::Mismatch { left, right, body } => {
                left.collect_names(out);
                right.collect_names(out);
                body.collect_free(out);
            }
            Process::Par(a, b) | Process::Sum(a, b) => {
                a.collect_free(out);
                b.collect_free(out);
            }
            Process::Call { args, .. } => args.iter().for_each(|m| m.collect_names(out)),
        }
    }

    /// Pre-order traversal over name occurrences, binders included.
    pub fn visit_names(&self, f: &mut dyn FnMut(&Name)) {
        match self {
            Process::Nil => {}
            Process::Output { chan, msg, cont } => {
                f(chan);
                msg.visit_names(f);
                cont.visit_names(f);
            }
            Process::BInput { chan, pattern, cont } => {
                f(chan);
                pattern.body.visit_names(f);
                cont.visit_names(f);
            }
            Process::CInput { chan, pattern, cont, .. } => {
                f(chan);
                pattern.body.visit_names(f);
                cont.visit_names(f);
            }
            Process::New { bound, body, .. } => {
                bound.at.keys().for_each(&mut *f);
                body.visit_names(f);
            }
            Process::Match { left, right, body } | Process::Mismatch { left, right, body } => {
                left.visit_names(f);
                right.visit_names(f);
                body.visit_names(f);
            }
            Process::Par(a, b) | Process::Sum(a, b) => {
                a.visit_names(f);
                b.visit_names(f);
            }
            Process::Call { args, .. } => args.iter().for_each(|m| m.visit_names(f)),
        }
    }

    /// Every message occurring in the process (outputs, guards, call
    /// arguments and pattern bodies).
    pub fn visit_messages(&self, f: &mut dyn FnMut(&Message)) {
        match self {
            Process::Nil => {}
            Process::Output { msg, cont, .. } => {
                f(msg);
                cont.visit_messages(f);
            }
            Process::BInput { pattern, cont, .. } | Process::CInput { pattern, cont, .. } => {
                f(&pattern.body);
                cont.visit_messages(f);
            }
            Process::New { body, .. } => body.visit_messages(f),
            Process::Match { left, right, body } | Process::Mismatch { left, right, body } => {
                f(left);
                f(right);
                body.visit_messages(f);
            }
            Process::Par(a, b) | Process::Sum(a, b) => {
                a.visit_messages(f);
                b.visit_messages(f);
            }
            Process::Call { args, .. } => args.iter().for_each(|m| f(m)),
        }
    }

    /// Capture-avoiding renaming of free names.
    pub fn rename(&self, map: &BTreeMap<Name, Name>) -> Process {
        let s = Subst(map.iter().map(|(k, v)| (k.clone(), Message::Var(v.clone()))).collect());
        self.subst(&s).expect("renaming is always well-sorted")
    }

    /// Capture-avoiding simultaneous substitution.
    pub fn subst(&self, s: &Subst) -> Result<Process, AstError> {
        if s.is_empty() {
            return Ok(self.clone());
        }
        let range = s.range_names();
        self.subst_inner(s, &range)
    }

    fn subst_inner(&self, s: &Subst, range: &NameSet) -> Result<Process, AstError> {
        if s.is_empty() {
            return Ok(self.clone());
        }
        Ok(match self {
            Process::Nil => Process::Nil,
            Process::Output { chan, msg, cont } => Process::Output {
                chan: s.name_at(chan)?,
                msg: apply_subst(msg, s)?,
                cont: Box::new(cont.subst_inner(s, range)?),
            },
            Process::BInput { chan, pattern, cont } => {
                let chan = s.name_at(chan)?;
                let (binders, body, cont) = freshen_binders(&pattern.binders, &pattern.body, cont, range);
                let inner = s.without(&binders);
                Process::BInput {
                    chan,
                    pattern: Pattern { body: apply_subst(&body, &inner)?, binders },
                    cont: Box::new(cont.subst_inner(&inner, range)?),
                }
            }
            Process::CInput { chan, pattern, setvar, cont } => {
                let chan = s.name_at(chan)?;
                let (binders, body) = freshen_pattern(&pattern.binders, &pattern.body, range);
                let pat_s = s.without(&binders);
                let (setvar, cont) = freshen_one(setvar, cont, range);
                let inner = s.without(std::slice::from_ref(&setvar));
                Process::CInput {
                    chan,
                    pattern: Pattern { body: apply_subst(&body, &pat_s)?, binders },
                    setvar,
                    cont: Box::new(cont.subst_inner(&inner, range)?),
                }
            }
            Process::New { name, bound, ty, body } => {
                let bound = subst_bound(bound, s)?;
                let (name, body) = freshen_one(name, body, range);
                let inner = s.without(std::slice::from_ref(&name));
                Process::New { name, bound, ty: ty.clone(), body: Box::new(body.subst_inner(&inner, range)?) }
            }
            Process::Match { left, right, body } => Process::Match {
                left: apply_subst(left, s)?,
                right: apply_subst(right, s)?,
                body: Box::new(body.subst_inner(s, range)?),
            },
            Process::Mismatch { left, right, body } => Process::Mismatch {
                left: apply_subst(left, s)?,
                right: apply_subst(right, s)?,
                body: Box::new(body.subst_inner(s, range)?),
            },
            Process::Par(a, b) => Process::par(a.subst_inner(s, range)?, b.subst_inner(s, range)?),
            Process::Sum(a, b) => Process::sum(a.subst_inner(s, range)?, b.subst_inner(s, range)?),
            Process::Call { agent, args } => Process::Call {
                agent: agent.clone(),
                args: args.iter().map(|m| apply_subst(m, s)).collect::<Result<_, _>>()?,
            },
        })
    }

    /// Whether the syntax tree ends in a construct that extends maximally to
    /// the right (restriction), so that printing it as an operand needs
    /// parentheses.
    pub fn ends_open(&self) -> bool {
        match self {
            Process::New { .. } => true,
            Process::Output { cont, .. } | Process::BInput { cont, .. } | Process::CInput { cont, .. } => {
                cont.ends_open()
            }
            Process::Match { body, .. } | Process::Mismatch { body, .. } => body.ends_open(),
            Process::Par(_, b) | Process::Sum(_, b) => b.ends_open(),
            _ => false,
        }
    }
}

fn subst_bound(b: &Bound, s: &Subst) -> Result<Bound, AstError> {
    if b.at.is_empty() {
        return Ok(b.clone());
    }
    let mut at = BTreeMap::new();
    for (l, k) in &b.at {
        at.insert(s.name_at(l)?, *k);
    }
    Ok(Bound { default: b.default, at })
}

fn freshen_pattern(binders: &[Name], body: &Message, avoid: &NameSet) -> (Vec<Name>, Message) {
    if binders.iter().all(|b| !avoid.contains(b)) {
        return (binders.to_vec(), body.clone());
    }
    let mut map = BTreeMap::new();
    let fresh: Vec<Name> = binders
        .iter()
        .map(|b| {
            if avoid.contains(b) {
                let f = Name::fresh();
                map.insert(b.clone(), f.clone());
                f
            } else {
                b.clone()
            }
        })
        .collect();
    (fresh, body.rename(&map))
}

fn freshen_binders(
    binders: &[Name],
    body: &Message,
    cont: &Process,
    avoid: &NameSet,
) -> (Vec<Name>, Message, Process) {
    if binders.iter().all(|b| !avoid.contains(b)) {
        return (binders.to_vec(), body.clone(), cont.clone());
    }
    let mut map = BTreeMap::new();
    let fresh: Vec<Name> = binders
        .iter()
        .map(|b| {
            if avoid.contains(b) {
                let f = Name::fresh();
                map.insert(b.clone(), f.clone());
                f
            } else {
                b.clone()
            }
        })
        .collect();
    (fresh, body.rename(&map), cont.rename(&map))
}

fn freshen_one(x: &Name, body: &Process, avoid: &NameSet) -> (Name, Process) {
    if !avoid.contains(x) {
        return (x.clone(), body.clone());
    }
    let f = Name::fresh();
    let map = BTreeMap::from([(x.clone(), f.clone())]);
    (f, body.rename(&map))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Network {
    Located(Name, Process),
    Par(Box<Network>, Box<Network>),
    New { name: Name, bound: Bound, ty: Option<Type>, body: Box<Network> },
    /// Connectivity atom `l -> m`.
    Near(Name, Name),
}

impl Network {
    pub fn located(l: &str, p: Process) -> Network {
        Network::Located(Name::new(l), p)
    }

    pub fn par(a: Network, b: Network) -> Network {
        Network::Par(Box::new(a), Box::new(b))
    }

    pub fn near(l: &str, m: &str) -> Network {
        Network::Near(Name::new(l), Name::new(m))
    }

    /// Right-nested composition of a nonempty list.
    pub fn par_all(mut ns: Vec<Network>) -> Network {
        let mut acc = ns.pop().expect("par_all needs at least one network");
        while let Some(n) = ns.pop() {
            acc = Network::par(n, acc);
        }
        acc
    }

    pub fn free_names(&self) -> NameSet {
        match self {
            Network::Located(l, p) => {
                let mut out = p.free_names();
                out.insert(l.clone());
                out
            }
            Network::Par(a, b) => {
                let mut out = a.free_names();
                out.extend(b.free_names());
                out
            }
            Network::New { name, bound, body, .. } => {
                let mut out = body.free_names();
                out.remove(name);
                out.extend(bound.at.keys().cloned());
                out
            }
            Network::Near(l, m) => NameSet::from([l.clone(), m.clone()]),
        }
    }

    pub fn rename(&self, map: &BTreeMap<Name, Name>) -> Network {
        let r = |n: &Name| map.get(n).cloned().unwrap_or_else(|| n.clone());
        match self {
            Network::Located(l, p) => Network::Located(r(l), p.rename(map)),
            Network::Par(a, b) => Network::par(a.rename(map), b.rename(map)),
            Network::Near(l, m) => Network::Near(r(l), r(m)),
            Network::New { name, bound, ty, body } => {
                let bound = bound.rename(map);
                let range: NameSet = map.values().cloned().collect();
                let (name, body) = if range.contains(name) {
                    let f = Name::fresh();
                    (f.clone(), body.rename(&BTreeMap::from([(name.clone(), f)])))
                } else {
                    (name.clone(), (**body).clone())
                };
                let mut inner = map.clone();
                inner.remove(&name);
                Network::New { name, bound, ty: ty.clone(), body: Box::new(body.rename(&inner)) }
            }
        }
    }

    pub fn visit_processes(&self, f: &mut dyn FnMut(&Name, &Process)) {
        match self {
            Network::Located(l, p) => f(l, p),
            Network::Par(a, b) => {
                a.visit_processes(f);
                b.visit_processes(f);
            }
            Network::New { body, .. } => body.visit_processes(f),
            Network::Near(..) => {}
        }
    }

    pub fn ends_open(&self) -> bool {
        matches!(self, Network::New { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentDef {
    pub name: Name,
    pub params: Vec<Name>,
    pub body: Process,
}

impl AgentDef {
    /// Instantiate the body with the given arguments.
    pub fn instantiate(&self, args: &[Message]) -> Result<Process, AstError> {
        if args.len() != self.params.len() {
            return Err(AstError::IllSorted(format!(
                "agent `{}` expects {} arguments, got {}",
                self.name,
                self.params.len(),
                args.len()
            )));
        }
        let s = Subst(self.params.iter().cloned().zip(args.iter().cloned()).collect());
        self.body.subst(&s)
    }
}

/// A complete program: signature, declarations, agents and the network.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub constructors: BTreeMap<Name, ConstructorFn>,
    pub selectors: BTreeMap<Name, SelectorFn>,
    pub channels: BTreeMap<Name, Bound>,
    pub types: BTreeMap<Name, Type>,
    pub agents: BTreeMap<Name, AgentDef>,
    pub net: Option<Network>,
}

impl Program {
    pub fn network(&self) -> &Network {
        self.net.as_ref().expect("program has a network")
    }

    /// Bound of a free channel at a location.
    pub fn channel_bound(&self, chan: &Name) -> Bound {
        self.channels.get(chan).cloned().unwrap_or_default()
    }
}

// Alpha-canonical forms.

fn level_name(k: usize) -> Name {
    Name::new(format!("%{k}"))
}

/// Renames every binder to a name determined by its binding depth, so that
/// alpha-equivalent networks become syntactically identical.
pub fn alpha_canonical(n: &Network) -> Network {
    alpha_net(n, 0, &BTreeMap::new())
}

pub fn alpha_canonical_process(p: &Process) -> Process {
    alpha_proc(p, 0, &BTreeMap::new())
}

fn lookup(env: &BTreeMap<Name, Name>, n: &Name) -> Name {
    env.get(n).cloned().unwrap_or_else(|| n.clone())
}

fn alpha_net(n: &Network, level: usize, env: &BTreeMap<Name, Name>) -> Network {
    match n {
        Network::Located(l, p) => Network::Located(lookup(env, l), alpha_proc(p, level, env)),
        Network::Par(a, b) => Network::par(alpha_net(a, level, env), alpha_net(b, level, env)),
        Network::Near(l, m) => Network::Near(lookup(env, l), lookup(env, m)),
        Network::New { name, bound, ty, body } => {
            let mut inner = env.clone();
            let fresh = level_name(level);
            inner.insert(name.clone(), fresh.clone());
            Network::New {
                name: fresh,
                bound: bound.rename(env),
                ty: ty.clone(),
                body: Box::new(alpha_net(body, level + 1, &inner)),
            }
        }
    }
}

fn alpha_proc(p: &Process, level: usize, env: &BTreeMap<Name, Name>) -> Process {
    match p {
        Process::Nil => Process::Nil,
        Process::Output { chan, msg, cont } => Process::Output {
            chan: lookup(env, chan),
            msg: msg.rename(env),
            cont: Box::new(alpha_proc(cont, level, env)),
        },
        Process::BInput { chan, pattern, cont } => {
            let mut inner = env.clone();
            let binders: Vec<Name> = pattern
                .binders
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let f = level_name(level + i);
                    inner.insert(b.clone(), f.clone());
                    f
                })
                .collect();
            let next = level + binders.len();
            Process::BInput {
                chan: lookup(env, chan),
                pattern: Pattern { body: pattern.body.rename(&inner), binders },
                cont: Box::new(alpha_proc(cont, next, &inner)),
            }
        }
        Process::CInput { chan, pattern, setvar, cont } => {
            let mut pat_env = env.clone();
            let binders: Vec<Name> = pattern
                .binders
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let f = level_name(level + i);
                    pat_env.insert(b.clone(), f.clone());
                    f
                })
                .collect();
            let mut inner = env.clone();
            let sv = level_name(level);
            inner.insert(setvar.clone(), sv.clone());
            Process::CInput {
                chan: lookup(env, chan),
                pattern: Pattern { body: pattern.body.rename(&pat_env), binders },
                setvar: sv,
                cont: Box::new(alpha_proc(cont, level + 1, &inner)),
            }
        }
        Process::New { name, bound, ty, body } => {
            let mut inner = env.clone();
            let fresh = level_name(level);
            inner.insert(name.clone(), fresh.clone());
            Process::New {
                name: fresh,
                bound: bound.rename(env),
                ty: ty.clone(),
                body: Box::new(alpha_proc(body, level + 1, &inner)),
            }
        }
        Process::Match { left, right, body } => Process::Match {
            left: left.rename(env),
            right: right.rename(env),
            body: Box::new(alpha_proc(body, level, env)),
        },
        Process::Mismatch { left, right, body } => Process::Mismatch {
            left: left.rename(env),
            right: right.rename(env),
            body: Box::new(alpha_proc(body, level, env)),
        },
        Process::Par(a, b) => Process::par(alpha_proc(a, level, env), alpha_proc(b, level, env)),
        Process::Sum(a, b) => Process::sum(alpha_proc(a, level, env), alpha_proc(b, level, env)),
        Process::Call { agent, args } => {
            Process::Call { agent: agent.clone(), args: args.iter().map(|m| m.rename(env)).collect() }
        }
    }
}

/// Alpha-canonical form of a whole program (network and agent bodies).
pub fn alpha_canonical_program(p: &Program) -> Program {
    let mut out = p.clone();
    out.net = p.net.as_ref().map(alpha_canonical);
    for def in out.agents.values_mut() {
        let env: BTreeMap<Name, Name> =
            def.params.iter().enumerate().map(|(i, x)| (x.clone(), Name::new(format!("%p{i}")))).collect();
        def.body = alpha_proc(&def.body, 0, &env);
        def.params = (0..def.params.len()).map(|i| Name::new(format!("%p{i}"))).collect();
    }
    out
}
