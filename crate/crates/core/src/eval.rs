//! Message evaluation, pattern matching and the builtin constructor and
//! selector registry.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::ast::{Message, MultisetExpr, Name, Pattern, Program, Subst};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("selector `{0}` applied to the uninstantiated set variable `{1}`")]
    UnresolvedSetVar(Name, Name),
    #[error("selector `{0}` applied to an empty multiset")]
    EmptyMultiset(Name),
    #[error("unknown selector `{0}`")]
    UnknownSelector(Name),
    #[error("set variable `{0}` used as a message before it was instantiated")]
    FreeSetVar(Name),
    #[error("collection over an empty candidate multiset")]
    EmptyCollection,
}

/// Builtin multiset selectors a declared selector name can be bound to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum SelectorFn {
    /// Least element under the name order.
    Min,
    /// Least `chosen(m)` if one is present, otherwise the least element.
    Elect,
    /// `target` if some element is a tuple whose first component is
    /// `target`, otherwise `fallback`.
    Find { target: Name, fallback: Name },
    /// Number of elements, as a numeric name. Not idempotent.
    Card,
}

impl SelectorFn {
    /// Resolve a selector declared without an explicit binding.
    pub fn by_name(name: &str) -> Option<SelectorFn> {
        match name {
            "min" => Some(SelectorFn::Min),
            "elect" => Some(SelectorFn::Elect),
            "card" => Some(SelectorFn::Card),
            "find_a" => Some(SelectorFn::Find { target: Name::new("a"), fallback: Name::new("k") }),
            _ => None,
        }
    }

    /// Whether the selector accepts multisets of any size.
    pub fn is_arity_polymorphic(&self) -> bool {
        true
    }
}

/// Builtin rewrite behaviour of a constructor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ConstructorFn {
    /// No rewrite rule; applications are normal.
    Inert,
    /// `first((x, y)) ~> x`.
    First,
    /// Announcement wrapper; `chosen(chosen(x)) ~> chosen(x)`.
    Chosen,
}

impl ConstructorFn {
    pub fn by_name(name: &str) -> Option<ConstructorFn> {
        match name {
            "first" => Some(ConstructorFn::First),
            "chosen" => Some(ConstructorFn::Chosen),
            "inert" => Some(ConstructorFn::Inert),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Registry {
    pub constructors: BTreeMap<Name, ConstructorFn>,
    pub selectors: BTreeMap<Name, SelectorFn>,
}

impl Registry {
    pub fn from_program(p: &Program) -> Registry {
        Registry { constructors: p.constructors.clone(), selectors: p.selectors.clone() }
    }

    /// Every shipped builtin under its default name.
    pub fn builtins() -> Registry {
        let mut r = Registry::default();
        for c in ["first", "chosen"] {
            r.constructors.insert(Name::new(c), ConstructorFn::by_name(c).unwrap());
        }
        for s in ["min", "elect", "card", "find_a"] {
            r.selectors.insert(Name::new(s), SelectorFn::by_name(s).unwrap());
        }
        r
    }

    fn constructor(&self, f: &Name) -> ConstructorFn {
        self.constructors.get(f).cloned().unwrap_or(ConstructorFn::Inert)
    }

    fn is_chosen(&self, m: &Message) -> bool {
        matches!(m, Message::Cons(c, _) if self.constructor(c) == ConstructorFn::Chosen)
    }

    /// Apply a registered selector to a multiset of normal messages.
    pub fn apply_selector(&self, g: &Name, items: &[Message]) -> Result<Message, EvalError> {
        let sel = self.selectors.get(g).ok_or_else(|| EvalError::UnknownSelector(g.clone()))?;
        if items.is_empty() {
            return Err(EvalError::EmptyMultiset(g.clone()));
        }
        Ok(match sel {
            SelectorFn::Min => items.iter().min().unwrap().clone(),
            SelectorFn::Elect => match items.iter().filter(|m| self.is_chosen(m)).min() {
                Some(c) => c.clone(),
                None => items.iter().min().unwrap().clone(),
            },
            SelectorFn::Find { target, fallback } => {
                let hit = items.iter().any(|m| match m {
                    Message::Tuple(ms) => ms[0].as_name() == Some(target),
                    _ => false,
                });
                Message::Var(if hit { target.clone() } else { fallback.clone() })
            }
            SelectorFn::Card => Message::Var(Name::new(items.len().to_string())),
        })
    }

    fn rewrite_constructor(&self, f: &Name, arg: Message) -> Message {
        match (self.constructor(f), arg) {
            (ConstructorFn::First, Message::Tuple(mut ms)) if ms.len() == 2 => ms.swap_remove(0),
            (ConstructorFn::Chosen, inner) if self.is_chosen(&inner) => inner,
            (_, arg) => Message::Cons(f.clone(), Box::new(arg)),
        }
    }
}

/// Evaluate a closed message to its normal form.
pub fn evaluate(m: &Message, r: &Registry) -> Result<Message, EvalError> {
    eval_inner(m, r, None)
}

/// Evaluate as far as possible without knowing the values of names for
/// which `unknown` holds; selectors over such names are left in place.
/// Never fails: stuck subterms are returned unevaluated.
pub fn evaluate_partial(m: &Message, r: &Registry, unknown: &dyn Fn(&Name) -> bool) -> Message {
    eval_inner(m, r, Some(unknown)).unwrap_or_else(|_| m.clone())
}

fn eval_inner(m: &Message, r: &Registry, unknown: Option<&dyn Fn(&Name) -> bool>) -> Result<Message, EvalError> {
    Ok(match m {
        Message::Var(_) => m.clone(),
        Message::SetVar(s) => {
            if unknown.is_some() {
                m.clone()
            } else {
                return Err(EvalError::FreeSetVar(s.clone()));
            }
        }
        Message::Tuple(ms) => Message::Tuple(ms.iter().map(|x| eval_inner(x, r, unknown)).collect::<Result<_, _>>()?),
        Message::Bag(ms) => Message::bag(ms.iter().map(|x| eval_inner(x, r, unknown)).collect::<Result<_, _>>()?),
        Message::Cons(f, arg) => {
            let arg = eval_inner(arg, r, unknown)?;
            r.rewrite_constructor(f, arg)
        }
        Message::Select(g, MultisetExpr::Var(s)) => match unknown {
            Some(_) => m.clone(),
            None => return Err(EvalError::UnresolvedSetVar(g.clone(), s.clone())),
        },
        Message::Select(g, MultisetExpr::Literal(ms)) => {
            let items: Vec<Message> = ms.iter().map(|x| eval_inner(x, r, unknown)).collect::<Result<_, _>>()?;
            let stuck = match unknown {
                Some(u) => items.iter().any(|x| !is_ground(x, u)),
                None => false,
            };
            if stuck {
                Message::Select(g.clone(), MultisetExpr::literal(items))
            } else {
                let out = r.apply_selector(g, &items)?;
                eval_inner(&out, r, unknown)?
            }
        }
    })
}

fn is_ground(m: &Message, unknown: &dyn Fn(&Name) -> bool) -> bool {
    match m {
        Message::Var(n) => !unknown(n),
        Message::SetVar(_) | Message::Select(..) => false,
        Message::Tuple(ms) | Message::Bag(ms) => ms.iter().all(|x| is_ground(x, unknown)),
        Message::Cons(_, x) => is_ground(x, unknown),
    }
}

/// Whether `m` admits no further evaluation step.
pub fn is_normal(m: &Message, r: &Registry) -> bool {
    match evaluate(m, r) {
        Ok(v) => &v == m,
        Err(_) => false,
    }
}

/// Match a normal candidate against a pattern, returning the substitution
/// for the pattern binders.
pub fn match_broadcast(candidate: &Message, p: &Pattern) -> Option<Subst> {
    let mut theta = Subst::new();
    if unify(&p.body, candidate, &p.binders, &mut theta) {
        Some(theta)
    } else {
        None
    }
}

fn unify(pat: &Message, cand: &Message, binders: &[Name], theta: &mut Subst) -> bool {
    match pat {
        Message::Var(x) if binders.contains(x) => {
            if matches!(cand, Message::Bag(_)) {
                return false;
            }
            match theta.get(x) {
                Some(prev) => prev == cand,
                None => {
                    theta.insert(x.clone(), cand.clone());
                    true
                }
            }
        }
        Message::Tuple(ps) => match cand {
            Message::Tuple(cs) if cs.len() == ps.len() => {
                ps.iter().zip(cs).all(|(p, c)| unify(p, c, binders, theta))
            }
            _ => false,
        },
        Message::Cons(f, p) => match cand {
            Message::Cons(g, c) if f == g => unify(p, c, binders, theta),
            _ => false,
        },
        _ => pat == cand,
    }
}

/// Every element must match the pattern; the whole multiset (with
/// multiplicity) becomes the value of the set variable.
pub fn match_collection(candidates: &[Message], p: &Pattern) -> Result<Option<Message>, EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::EmptyCollection);
    }
    if candidates.iter().all(|c| match_broadcast(c, p).is_some()) {
        Ok(Some(Message::bag(candidates.to_vec())))
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdempotencyVerdict {
    Pass { families_checked: u64 },
    Counterexample(Vec<Vec<Message>>),
}

impl IdempotencyVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, IdempotencyVerdict::Pass { .. })
    }
}

fn law_holds(r: &Registry, g: &Name, family: &[Vec<Message>]) -> Result<bool, EvalError> {
    let mut heads = Vec::with_capacity(family.len());
    for s in family {
        heads.push(r.apply_selector(g, s)?);
    }
    let lhs = r.apply_selector(g, &heads)?;
    let union: Vec<Message> = family.iter().flatten().cloned().collect();
    Ok(lhs == r.apply_selector(g, &union)?)
}

/// Random check of `g({g(S1),...,g(Sk)}) = g(S1 + ... + Sk)` over
/// multisets drawn from `universe`.
pub fn check_idempotent(
    r: &Registry,
    g: &Name,
    universe: &[Message],
    max_size: usize,
    trials: usize,
    seed: u64,
) -> Result<IdempotencyVerdict, EvalError> {
    if !r.selectors.contains_key(g) {
        return Err(EvalError::UnknownSelector(g.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let k = rng.gen_range(1..=4);
        let family: Vec<Vec<Message>> = (0..k)
            .map(|_| {
                let size = rng.gen_range(1..=max_size.max(1));
                (0..size).map(|_| universe[rng.gen_range(0..universe.len())].clone()).collect()
            })
            .collect();
        if !law_holds(r, g, &family)? {
            return Ok(IdempotencyVerdict::Counterexample(family));
        }
    }
    Ok(IdempotencyVerdict::Pass { families_checked: trials as u64 })
}

/// Exhaustive check over every family (up to reordering) of at most
/// `max_family` nonempty multisets of size at most `max_size` over
/// `universe` (at most 16 elements).
pub fn check_idempotent_exhaustive(
    r: &Registry,
    g: &Name,
    universe: &[Message],
    max_size: usize,
    max_family: usize,
) -> Result<IdempotencyVerdict, EvalError> {
    assert!(universe.len() <= 16 && max_size * max_family < 256);
    if !r.selectors.contains_key(g) {
        return Err(EvalError::UnknownSelector(g.clone()));
    }
    let mut sets: Vec<Vec<u8>> = Vec::new();
    multisets(universe.len(), max_size, &mut vec![0; universe.len()], 0, 0, &mut sets);
    let to_items = |counts: &[u8]| -> Vec<Message> {
        counts.iter().enumerate().flat_map(|(i, c)| std::iter::repeat(universe[i].clone()).take(*c as usize)).collect()
    };
    let pack = |counts: &[u8]| counts.iter().fold(0u128, |acc, c| (acc << 8) | *c as u128);

    // Value table: distinct selector results, indexed.
    let mut values: Vec<Message> = Vec::new();
    let mut value_ix: HashMap<Message, u32> = HashMap::new();
    let mut intern = |m: Message, values: &mut Vec<Message>| -> u32 {
        *value_ix.entry(m.clone()).or_insert_with(|| {
            values.push(m);
            (values.len() - 1) as u32
        })
    };
    let mut head = Vec::with_capacity(sets.len());
    for s in &sets {
        let v = r.apply_selector(g, &to_items(s))?;
        head.push(intern(v, &mut values));
    }
    let mut union_memo: HashMap<u128, u32> = HashMap::new();
    let mut lhs_memo: HashMap<Vec<u32>, u32> = HashMap::new();
    let mut checked = 0u64;
    let mut idx = vec![0usize; max_family];
    let mut counts = vec![0u8; universe.len()];
    for k in 1..=max_family {
        // nondecreasing index tuples of length k
        idx[..k].iter_mut().for_each(|i| *i = 0);
        loop {
            counts.iter_mut().for_each(|c| *c = 0);
            for &i in &idx[..k] {
                for (c, d) in counts.iter_mut().zip(&sets[i]) {
                    *c += d;
                }
            }
            let key = pack(&counts);
            let rhs = match union_memo.get(&key) {
                Some(v) => *v,
                None => {
                    let v = r.apply_selector(g, &to_items(&counts))?;
                    let v = intern(v, &mut values);
                    union_memo.insert(key, v);
                    v
                }
            };
            let mut hs: Vec<u32> = idx[..k].iter().map(|&i| head[i]).collect();
            hs.sort_unstable();
            let lhs = match lhs_memo.get(&hs) {
                Some(v) => *v,
                None => {
                    let items: Vec<Message> = hs.iter().map(|&h| values[h as usize].clone()).collect();
                    let v = r.apply_selector(g, &items)?;
                    let v = intern(v, &mut values);
                    lhs_memo.insert(hs, v);
                    v
                }
            };
            checked += 1;
            if lhs != rhs {
                return Ok(IdempotencyVerdict::Counterexample(idx[..k].iter().map(|&i| to_items(&sets[i])).collect()));
            }
            // advance
            let mut pos = k;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                if idx[pos] + 1 < sets.len() {
                    idx[pos] += 1;
                    let v = idx[pos];
                    idx[pos + 1..k].iter_mut().for_each(|i| *i = v);
                    pos = usize::MAX;
                    break;
                }
            }
            if pos != usize::MAX {
                break;
            }
        }
    }
    Ok(IdempotencyVerdict::Pass { families_checked: checked })
}

fn multisets(n: usize, max: usize, cur: &mut Vec<u8>, pos: usize, total: usize, out: &mut Vec<Vec<u8>>) {
    if pos == n {
        if total > 0 {
            out.push(cur.clone());
        }
        return;
    }
    for c in 0..=(max - total) {
        cur[pos] = c as u8;
        multisets(n, max, cur, pos + 1, total + c, out);
    }
    cur[pos] = 0;
}
