//! Channel type discipline: broadcast versus collection channels,
//! multisets, products, locations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::ast::{AgentDef, Message, MultisetExpr, Name, Network, Process, Program};
use crate::congruence::NormalForm;
use crate::eval::{ConstructorFn, SelectorFn};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Arity {
    Exact(usize),
    /// Unknown at check time; the arity of collected multisets.
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Type {
    ChanC(Box<Type>),
    ChanB(Box<Type>),
    Multiset(Box<Type>, Arity),
    Product(Vec<Type>),
    Arrow(Box<Type>, Box<Type>),
    Loc,
    Base(Name),
}

pub const AMBIENT_BASE: &str = "Data";

impl Type {
    pub fn ambient() -> Type {
        Type::Base(Name::new(AMBIENT_BASE))
    }

    pub fn chan_b(t: Type) -> Type {
        Type::ChanB(Box::new(t))
    }

    pub fn chan_c(t: Type) -> Type {
        Type::ChanC(Box::new(t))
    }

    pub fn multiset(t: Type, k: Arity) -> Type {
        Type::Multiset(Box::new(t), k)
    }

    pub fn arrow(a: Type, b: Type) -> Type {
        Type::Arrow(Box::new(a), Box::new(b))
    }

    /// `found` can be used where `self` is expected: equality, except that a
    /// multiset of unknown arity accepts any exact arity.
    pub fn accepts(&self, found: &Type) -> bool {
        match (self, found) {
            (Type::Multiset(a, Arity::Any), Type::Multiset(b, _)) => a.accepts(b),
            (Type::Multiset(a, ka), Type::Multiset(b, kb)) => ka == kb && a.accepts(b),
            (Type::Product(xs), Type::Product(ys)) => {
                xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| x.accepts(y))
            }
            (Type::ChanB(a), Type::ChanB(b)) | (Type::ChanC(a), Type::ChanC(b)) => a == b,
            _ => self == found,
        }
    }

    fn unify_with(&self, other: &Type) -> Option<Type> {
        if self.accepts(other) {
            Some(self.clone())
        } else if other.accepts(self) {
            Some(other.clone())
        } else {
            None
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::ChanC(t) => write!(f, "C<{t}>"),
            Type::ChanB(t) => write!(f, "B<{t}>"),
            Type::Multiset(t, Arity::Exact(k)) => write!(f, "{{{t}}}{k}"),
            Type::Multiset(t, Arity::Any) => write!(f, "{{{t}}}*"),
            Type::Product(ts) => {
                write!(f, "(")?;
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{t}")?;
                }
                write!(f, ")")
            }
            Type::Arrow(a, b) => match **a {
                Type::Arrow(..) => write!(f, "({a}) -> {b}"),
                _ => write!(f, "{a} -> {b}"),
            },
            Type::Loc => write!(f, "Loc"),
            Type::Base(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("unbound symbol `{0}`")]
    Unbound(Name),
    #[error("{context}: expected {expected}, found {found}")]
    Mismatch { context: String, expected: Type, found: Type },
    #[error("channel `{chan}` has type {ty} but is used for {usage}")]
    ModeMisuse { chan: Name, ty: Type, usage: &'static str },
    #[error("`{0}` has type {1}, which is not a channel type")]
    NotChannel(Name, Type),
    #[error("`{0}` is used as a location but has type {1}")]
    NotLoc(Name, Type),
    #[error("multiset elements disagree: {0} and {1}")]
    MultisetElements(Type, Type),
    #[error("selector `{0}` expects a multiset of arity {1:?}, found {2:?}")]
    ArityMismatch(Name, Arity, Arity),
    #[error("`{0}` is not a function symbol of arrow type")]
    NotArrow(Name),
    #[error("unknown agent `{0}`")]
    UnboundAgent(Name),
    #[error("agent `{0}` expects {1} arguments, got {2}")]
    AgentArity(Name, usize, usize),
    #[error("cannot type pattern: {0}")]
    Pattern(String),
    #[error("empty multiset literal")]
    EmptyMultiset,
}

/// Type environment over names, selectors and constructors.
#[derive(Debug, Clone, Default)]
pub struct TypeEnv {
    pub names: BTreeMap<Name, Type>,
    /// Declared types of selectors and constructors.
    pub symbols: BTreeMap<Name, Type>,
    /// Builtin behaviour of symbols without declared types.
    pub selectors: BTreeMap<Name, SelectorFn>,
    pub constructors: BTreeMap<Name, ConstructorFn>,
    /// Type given to undeclared names; `None` makes them unbound.
    pub default: Option<Type>,
    pub agents: BTreeMap<Name, AgentDef>,
}

/// Agents assumed well-typed (coinductive hypothesis for recursion).
pub type AgentSet = BTreeSet<Name>;

impl TypeEnv {
    pub fn new() -> TypeEnv {
        TypeEnv::default()
    }

    pub fn with(mut self, x: &str, t: Type) -> TypeEnv {
        self.names.insert(Name::new(x), t);
        self
    }

    pub fn with_symbol(mut self, g: &str, t: Type) -> TypeEnv {
        self.symbols.insert(Name::new(g), t);
        self
    }

    /// Environment for a program: declared types, location defaulting for
    /// names in location position, the ambient base type elsewhere.
    pub fn for_program(p: &Program) -> TypeEnv {
        let mut env = TypeEnv {
            names: BTreeMap::new(),
            symbols: BTreeMap::new(),
            selectors: p.selectors.clone(),
            constructors: p.constructors.clone(),
            default: Some(Type::ambient()),
            agents: p.agents.clone(),
        };
        for (n, t) in &p.types {
            if p.selectors.contains_key(n) || p.constructors.contains_key(n) {
                env.symbols.insert(n.clone(), t.clone());
            } else {
                env.names.insert(n.clone(), t.clone());
            }
        }
        if let Some(net) = &p.net {
            let mut locs = BTreeSet::new();
            location_names(net, &mut locs);
            for l in locs {
                env.names.entry(l).or_insert(Type::Loc);
            }
        }
        env
    }

    fn lookup(&self, x: &Name) -> Result<Type, TypeError> {
        self.names.get(x).cloned().or_else(|| self.default.clone()).ok_or_else(|| TypeError::Unbound(x.clone()))
    }

    fn extend(&self, x: &Name, t: Type) -> TypeEnv {
        let mut e = self.clone();
        e.names.insert(x.clone(), t);
        e
    }
}

fn location_names(n: &Network, out: &mut BTreeSet<Name>) {
    match n {
        Network::Located(l, _) => {
            out.insert(l.clone());
        }
        Network::Near(l, m) => {
            out.insert(l.clone());
            out.insert(m.clone());
        }
        Network::Par(a, b) => {
            location_names(a, out);
            location_names(b, out);
        }
        Network::New { body, .. } => location_names(body, out),
    }
}

pub fn type_of_message(env: &TypeEnv, m: &Message) -> Result<Type, TypeError> {
    match m {
        Message::Var(x) => env.lookup(x),
        Message::SetVar(s) => match env.lookup(s)? {
            t @ Type::Multiset(..) => Ok(t),
            other => Err(TypeError::Mismatch {
                context: format!("set variable `{s}`"),
                expected: Type::multiset(other.clone(), Arity::Any),
                found: other,
            }),
        },
        Message::Tuple(ms) => Ok(Type::Product(ms.iter().map(|x| type_of_message(env, x)).collect::<Result<_, _>>()?)),
        Message::Bag(ms) => multiset_literal(env, ms),
        Message::Select(g, e) => {
            let et = match e {
                MultisetExpr::Literal(ms) => multiset_literal(env, ms)?,
                MultisetExpr::Var(s) => type_of_message(env, &Message::SetVar(s.clone()))?,
            };
            let Type::Multiset(elem, arity) = et else { unreachable!() };
            select_type(env, g, *elem, arity)
        }
        Message::Cons(f, arg) => {
            let at = type_of_message(env, arg)?;
            cons_type(env, f, at)
        }
    }
}

fn multiset_literal(env: &TypeEnv, ms: &[Message]) -> Result<Type, TypeError> {
    let mut it = ms.iter();
    let first = it.next().ok_or(TypeError::EmptyMultiset)?;
    let mut t = type_of_message(env, first)?;
    for m in it {
        let u = type_of_message(env, m)?;
        t = t.unify_with(&u).ok_or_else(|| TypeError::MultisetElements(t.clone(), u))?;
    }
    Ok(Type::multiset(t, Arity::Exact(ms.len())))
}

fn select_type(env: &TypeEnv, g: &Name, elem: Type, arity: Arity) -> Result<Type, TypeError> {
    if let Some(sig) = env.symbols.get(g) {
        let Type::Arrow(dom, cod) = sig else { return Err(TypeError::NotArrow(g.clone())) };
        let Type::Multiset(want, want_k) = &**dom else { return Err(TypeError::NotArrow(g.clone())) };
        if !want.accepts(&elem) {
            return Err(TypeError::Mismatch { context: format!("argument of `{g}`"), expected: (**want).clone(), found: elem });
        }
        if *want_k != Arity::Any && *want_k != arity {
            return Err(TypeError::ArityMismatch(g.clone(), want_k.clone(), arity));
        }
        return Ok((**cod).clone());
    }
    match env.selectors.get(g) {
        Some(SelectorFn::Min) | Some(SelectorFn::Elect) => Ok(elem),
        Some(SelectorFn::Find { .. }) => match elem {
            Type::Product(ts) => Ok(ts[0].clone()),
            other => Err(TypeError::Mismatch {
                context: format!("argument of `{g}`"),
                expected: Type::Product(vec![Type::ambient(), Type::ambient()]),
                found: other,
            }),
        },
        Some(SelectorFn::Card) => Ok(Type::ambient()),
        None => Err(TypeError::Unbound(g.clone())),
    }
}

fn cons_type(env: &TypeEnv, f: &Name, at: Type) -> Result<Type, TypeError> {
    if let Some(sig) = env.symbols.get(f) {
        let Type::Arrow(dom, cod) = sig else { return Err(TypeError::NotArrow(f.clone())) };
        if !dom.accepts(&at) {
            return Err(TypeError::Mismatch { context: format!("argument of `{f}`"), expected: (**dom).clone(), found: at });
        }
        return Ok((**cod).clone());
    }
    match env.constructors.get(f) {
        Some(ConstructorFn::Chosen) => Ok(at),
        Some(ConstructorFn::First) => match at {
            Type::Product(ts) if ts.len() == 2 => Ok(ts[0].clone()),
            other => Err(TypeError::Mismatch {
                context: format!("argument of `{f}`"),
                expected: Type::Product(vec![Type::ambient(), Type::ambient()]),
                found: other,
            }),
        },
        _ => Err(TypeError::Unbound(f.clone())),
    }
}

/// Type the binders of a pattern body against the expected payload type.
fn bind_pattern(
    env: &TypeEnv,
    body: &Message,
    binders: &[Name],
    expected: &Type,
    out: &mut BTreeMap<Name, Type>,
) -> Result<(), TypeError> {
    match body {
        Message::Var(x) if binders.contains(x) => match out.get(x) {
            Some(prev) if prev != expected => Err(TypeError::Pattern(format!("binder `{x}` used at {prev} and {expected}"))),
            _ => {
                out.insert(x.clone(), expected.clone());
                Ok(())
            }
        },
        Message::Tuple(ms) => match expected {
            Type::Product(ts) if ts.len() == ms.len() => {
                ms.iter().zip(ts).try_for_each(|(m, t)| bind_pattern(env, m, binders, t, out))
            }
            _ => Err(TypeError::Pattern(format!("tuple of arity {} against {expected}", ms.len()))),
        },
        Message::Cons(f, inner) => {
            if let Some(Type::Arrow(dom, cod)) = env.symbols.get(f) {
                if !expected.accepts(cod) {
                    return Err(TypeError::Mismatch {
                        context: format!("pattern `{f}(..)`"),
                        expected: expected.clone(),
                        found: (**cod).clone(),
                    });
                }
                return bind_pattern(env, inner, binders, dom, out);
            }
            match env.constructors.get(f) {
                Some(ConstructorFn::Chosen) => bind_pattern(env, inner, binders, expected, out),
                _ => Err(TypeError::Pattern(format!("cannot invert constructor `{f}`"))),
            }
        }
        other => {
            let t = type_of_message(env, other)?;
            if expected.accepts(&t) {
                Ok(())
            } else {
                Err(TypeError::Mismatch { context: "pattern".into(), expected: expected.clone(), found: t })
            }
        }
    }
}

fn channel_payload(env: &TypeEnv, chan: &Name) -> Result<(Type, bool), TypeError> {
    match env.lookup(chan)? {
        Type::ChanB(t) => Ok((*t, true)),
        Type::ChanC(t) => Ok((*t, false)),
        other => Err(TypeError::NotChannel(chan.clone(), other)),
    }
}

fn restricted_type(ty: &Option<Type>, used_as_location: bool) -> Type {
    match ty {
        Some(t) => t.clone(),
        None if used_as_location => Type::Loc,
        None => Type::ambient(),
    }
}

pub fn check_process(env: &TypeEnv, agents: &AgentSet, p: &Process) -> Result<(), TypeError> {
    match p {
        Process::Nil => Ok(()),
        Process::Output { chan, msg, cont } => {
            let (payload, _) = channel_payload(env, chan)?;
            let t = type_of_message(env, msg)?;
            if !payload.accepts(&t) {
                return Err(TypeError::Mismatch { context: format!("output on `{chan}`"), expected: payload, found: t });
            }
            check_process(env, agents, cont)
        }
        Process::BInput { chan, pattern, cont } => {
            let (payload, broadcast) = channel_payload(env, chan)?;
            if !broadcast {
                return Err(TypeError::ModeMisuse { chan: chan.clone(), ty: env.lookup(chan)?, usage: "broadcast input" });
            }
            let mut binds = BTreeMap::new();
            let pat_env = binder_env(env, &pattern.binders);
            bind_pattern(&pat_env, &pattern.body, &pattern.binders, &payload, &mut binds)?;
            let mut inner = env.clone();
            inner.names.extend(binds);
            check_process(&inner, agents, cont)
        }
        Process::CInput { chan, pattern, setvar, cont } => {
            let (payload, broadcast) = channel_payload(env, chan)?;
            if broadcast {
                return Err(TypeError::ModeMisuse { chan: chan.clone(), ty: env.lookup(chan)?, usage: "collection input" });
            }
            let mut binds = BTreeMap::new();
            let pat_env = binder_env(env, &pattern.binders);
            bind_pattern(&pat_env, &pattern.body, &pattern.binders, &payload, &mut binds)?;
            let inner = env.extend(setvar, Type::multiset(payload, Arity::Any));
            check_process(&inner, agents, cont)
        }
        Process::New { name, ty, body, .. } => {
            let t = restricted_type(ty, false);
            check_process(&env.extend(name, t), agents, body)
        }
        Process::Match { left, right, body } | Process::Mismatch { left, right, body } => {
            let a = type_of_message(env, left)?;
            let b = type_of_message(env, right)?;
            if a.unify_with(&b).is_none() {
                return Err(TypeError::Mismatch { context: "guard".into(), expected: a, found: b });
            }
            check_process(env, agents, body)
        }
        Process::Par(a, b) | Process::Sum(a, b) => {
            check_process(env, agents, a)?;
            check_process(env, agents, b)
        }
        Process::Call { agent, args } => {
            let arg_types: Vec<Type> = args.iter().map(|m| type_of_message(env, m)).collect::<Result<_, _>>()?;
            if agents.contains(agent) {
                return Ok(());
            }
            let def = env.agents.get(agent).ok_or_else(|| TypeError::UnboundAgent(agent.clone()))?;
            if def.params.len() != args.len() {
                return Err(TypeError::AgentArity(agent.clone(), def.params.len(), args.len()));
            }
            let mut inner = env.clone();
            for (x, t) in def.params.iter().zip(arg_types) {
                inner.names.insert(x.clone(), t);
            }
            let mut theta = agents.clone();
            theta.insert(agent.clone());
            check_process(&inner, &theta, &def.body)
        }
    }
}

// Pattern binders shadow outer declarations while the pattern is typed.
fn binder_env(env: &TypeEnv, binders: &[Name]) -> TypeEnv {
    if binders.iter().all(|b| !env.names.contains_key(b)) {
        return env.clone();
    }
    let mut e = env.clone();
    for b in binders {
        e.names.remove(b);
    }
    e
}

pub fn check_network(env: &TypeEnv, n: &Network) -> Result<(), TypeError> {
    match n {
        Network::Located(l, p) => {
            match env.lookup(l)? {
                Type::Loc => {}
                other => return Err(TypeError::NotLoc(l.clone(), other)),
            }
            check_process(env, &AgentSet::new(), p)
        }
        Network::Near(l, m) => {
            for x in [l, m] {
                match env.lookup(x)? {
                    Type::Loc => {}
                    other => return Err(TypeError::NotLoc(x.clone(), other)),
                }
            }
            Ok(())
        }
        Network::Par(a, b) => {
            check_network(env, a)?;
            check_network(env, b)
        }
        Network::New { name, ty, body, .. } => {
            let mut locs = BTreeSet::new();
            location_names(body, &mut locs);
            let t = restricted_type(ty, locs.contains(name));
            check_network(&env.extend(name, t), body)
        }
    }
}

pub fn check_program(p: &Program) -> Result<(), TypeError> {
    check_network(&TypeEnv::for_program(p), p.network())
}

/// Type-check a reachable state under the program's environment.
pub fn check_normal_form(env: &TypeEnv, nf: &NormalForm) -> Result<(), TypeError> {
    check_network(env, &nf.denote())
}
