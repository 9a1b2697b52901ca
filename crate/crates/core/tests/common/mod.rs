//! Seeded random programs for property tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use bbc::ast::{AgentDef, Bound, Message, MultisetExpr, Name, Network, Pattern, Process, Program};
use bbc::eval::{ConstructorFn, Registry, SelectorFn};
use bbc::typesys::Type;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LOCATIONS: [&str; 3] = ["l1", "l2", "l3"];
const DATA: [&str; 5] = ["m", "n", "k", "1", "2"];

fn n(s: &str) -> Name {
    Name::new(s)
}

#[derive(Clone, Default)]
pub struct Scope {
    vars: Vec<Name>,
    setvars: Vec<Name>,
    /// Channels usable for broadcast input (typed mode) or any channel.
    bchans: Vec<Name>,
    /// Channels usable for collection input (typed mode).
    cchans: Vec<Name>,
    /// Location binding this process, which local restrictions must avoid.
    location: Option<Name>,
    /// Inside an agent body: only parameters and local binders may occur.
    closed: bool,
}

pub struct Gen {
    pub rng: ChaCha8Rng,
    typed: bool,
    max_depth: usize,
    fresh: usize,
}

impl Gen {
    /// Programs over the whole syntax; many are ill-typed.
    pub fn new(seed: u64) -> Gen {
        Gen { rng: ChaCha8Rng::seed_from_u64(seed), typed: false, max_depth: 5, fresh: 0 }
    }

    /// Programs that type-check: declared channel types, data payloads.
    pub fn typed(seed: u64) -> Gen {
        Gen { typed: true, ..Gen::new(seed) }
    }

    fn fresh(&mut self, base: &str) -> Name {
        self.fresh += 1;
        n(&format!("{base}{}", self.fresh))
    }

    fn pick<'a>(&mut self, xs: &'a [Name]) -> &'a Name {
        xs.choose(&mut self.rng).expect("nonempty pool")
    }

    fn coin(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p)
    }

    fn data(&mut self, sc: &Scope) -> Message {
        let mut pool: Vec<Name> = if sc.closed { Vec::new() } else { DATA.iter().map(|s| n(s)).collect() };
        pool.extend(sc.vars.iter().cloned());
        if !self.typed {
            pool.extend(sc.bchans.iter().cloned());
        }
        Message::Var(self.pick(&pool).clone())
    }

    pub fn message(&mut self, sc: &Scope, depth: usize) -> Message {
        let leaf = depth == 0 || self.coin(0.45);
        if leaf {
            return self.data(sc);
        }
        let choice = self.rng.gen_range(0..if self.typed { 2 } else { 6 });
        match choice {
            0 => {
                let items: Vec<Message> = (0..self.rng.gen_range(1..=3)).map(|_| self.message(sc, depth - 1)).collect();
                Message::Select(n(if self.typed { "min" } else { ["min", "card", "elect"][self.rng.gen_range(0..3)] }), MultisetExpr::literal(items))
            }
            1 if !sc.setvars.is_empty() => Message::Select(n("min"), MultisetExpr::Var(self.pick(&sc.setvars).clone())),
            1 => self.data(sc),
            2 => Message::tuple((0..self.rng.gen_range(2..=3)).map(|_| self.message(sc, depth - 1)).collect()),
            3 => Message::Cons(n(["f", "first", "chosen"][self.rng.gen_range(0..3)]), Box::new(self.message(sc, depth - 1))),
            4 => Message::bag((0..self.rng.gen_range(1..=2)).map(|_| self.data(sc)).collect()),
            _ if !sc.setvars.is_empty() => Message::SetVar(self.pick(&sc.setvars).clone()),
            _ => self.data(sc),
        }
    }

    /// A closed message over data names and the free channels.
    pub fn ground_message(&mut self, depth: usize) -> Message {
        let sc = self.base_scope();
        self.message(&sc, depth)
    }

    fn pattern(&mut self, sc: &Scope) -> Pattern {
        let x = self.fresh("x");
        if self.typed || self.coin(0.5) {
            return Pattern::new(vec![x.clone()], Message::Var(x)).unwrap();
        }
        if self.coin(0.5) {
            let y = self.fresh("y");
            return Pattern::new(vec![x.clone(), y.clone()], Message::tuple(vec![Message::Var(x), Message::Var(y)])).unwrap();
        }
        let fixed = self.data(&Scope { vars: Vec::new(), ..sc.clone() });
        Pattern::new(vec![x.clone()], Message::tuple(vec![Message::Var(x), fixed])).unwrap()
    }

    fn chan_for_output(&mut self, sc: &Scope) -> Name {
        let mut pool = sc.bchans.clone();
        pool.extend(sc.cchans.iter().cloned());
        if !self.typed {
            pool.extend(sc.vars.iter().cloned());
        }
        self.pick(&pool).clone()
    }

    pub fn process(&mut self, sc: &Scope, depth: usize, agents: &[(Name, usize)]) -> Process {
        if depth == 0 || self.coin(0.15) {
            return if !agents.is_empty() && self.coin(0.3) { self.call(sc, agents) } else { Process::Nil };
        }
        let d = depth - 1;
        match self.rng.gen_range(0..10) {
            0 | 1 => {
                let chan = self.chan_for_output(sc);
                let msg = self.message(sc, 2);
                Process::Output { chan, msg, cont: Box::new(self.process(sc, d, agents)) }
            }
            2 | 3 => {
                let chan = self.pick(&sc.bchans.clone()).clone();
                let pattern = self.pattern(sc);
                let mut inner = sc.clone();
                inner.vars.extend(pattern.binders.iter().cloned());
                Process::BInput { chan, pattern, cont: Box::new(self.process(&inner, d, agents)) }
            }
            4 if self.typed && sc.cchans.is_empty() => Process::Nil,
            4 => {
                let pool = if self.typed { sc.cchans.clone() } else { sc.bchans.clone() };
                let chan = self.pick(&pool).clone();
                let pattern = self.pattern(sc);
                let setvar = self.fresh("S");
                let mut inner = sc.clone();
                inner.setvars.push(setvar.clone());
                Process::CInput { chan, pattern, setvar, cont: Box::new(self.process(&inner, d, agents)) }
            }
            5 => {
                let name = self.fresh("r");
                let collect = self.typed && self.coin(0.5);
                let ty = if self.typed {
                    Some(if collect { Type::chan_c(Type::ambient()) } else { Type::chan_b(Type::ambient()) })
                } else {
                    None
                };
                let mut inner = sc.clone();
                if collect {
                    inner.cchans.push(name.clone());
                } else {
                    inner.bchans.push(name.clone());
                }
                let bound = self.bound(sc.closed);
                Process::New { name, bound, ty, body: Box::new(self.process(&inner, d, agents)) }
            }
            6 => {
                let (left, right) = (self.message(sc, 1), self.message(sc, 1));
                let body = Box::new(self.process(sc, d, agents));
                if self.coin(0.5) {
                    Process::Match { left, right, body }
                } else {
                    Process::Mismatch { left, right, body }
                }
            }
            7 | 8 => Process::par(self.process(sc, d, agents), self.process(sc, d, agents)),
            _ => Process::sum(self.process(sc, d, agents), self.process(sc, d, agents)),
        }
    }

    fn call(&mut self, sc: &Scope, agents: &[(Name, usize)]) -> Process {
        let (agent, arity) = agents.choose(&mut self.rng).unwrap().clone();
        // Agents take a broadcast channel first, then data.
        let mut args = vec![Message::Var(self.pick(&sc.bchans.clone()).clone())];
        args.extend((1..arity).map(|_| self.data(sc)));
        Process::Call { agent, args }
    }

    fn bound(&mut self, closed: bool) -> Bound {
        match self.rng.gen_range(0..4) {
            0 => Bound::unbounded(),
            1 if !closed => {
                let mut b = Bound::uniform(self.rng.gen_range(1..=3));
                b.at.insert(n(LOCATIONS[self.rng.gen_range(0..3)]), self.rng.gen_range(1..=2));
                b
            }
            _ => Bound::uniform(self.rng.gen_range(1..=3)),
        }
    }

    fn base_scope(&self) -> Scope {
        Scope {
            bchans: vec![n("a"), n("c")],
            cchans: if self.typed { vec![n("b")] } else { Vec::new() },
            ..Scope::default()
        }
    }

    pub fn network(&mut self, depth: usize, agents: &[(Name, usize)]) -> Network {
        let sc = self.base_scope();
        self.network_in(&sc, depth, agents)
    }

    fn network_in(&mut self, sc: &Scope, depth: usize, agents: &[(Name, usize)]) -> Network {
        let l = n(LOCATIONS[self.rng.gen_range(0..3)]);
        if depth == 0 {
            return Network::Located(l.clone(), self.process(&Scope { location: Some(l), ..sc.clone() }, 1, agents));
        }
        match self.rng.gen_range(0..8) {
            0 | 1 => {
                let p = self.process(&Scope { location: Some(l.clone()), ..sc.clone() }, depth.min(self.max_depth), agents);
                Network::Located(l, p)
            }
            2 => {
                let m = loop {
                    let m = n(LOCATIONS[self.rng.gen_range(0..3)]);
                    if m != l {
                        break m;
                    }
                };
                Network::Near(l, m)
            }
            3 => {
                let name = self.fresh("w");
                let ty = self.typed.then(|| Type::chan_b(Type::ambient()));
                let mut inner = sc.clone();
                inner.bchans.push(name.clone());
                let bound = self.bound(false);
                Network::New { name, bound, ty, body: Box::new(self.network_in(&inner, depth - 1, agents)) }
            }
            _ => Network::par(self.network_in(sc, depth - 1, agents), self.network_in(sc, depth - 1, agents)),
        }
    }

    /// Senders linked to a receiver on a shared free channel, so that at
    /// least one communication is enabled.
    fn exchange(&mut self, agents: &[(Name, usize)]) -> Network {
        let base = self.base_scope();
        let collect = if self.typed { self.coin(0.4) } else { self.coin(0.3) };
        let chan = if self.typed && collect { n("b") } else { self.pick(&base.bchans.clone()).clone() };
        let mut locs: Vec<Name> = LOCATIONS.iter().map(|s| n(s)).collect();
        locs.shuffle(&mut self.rng);
        let receiver = locs[0].clone();
        let senders = if collect { self.rng.gen_range(1..=2) } else { 1 };
        let mut parts = Vec::new();
        for l in &locs[1..=senders] {
            let msg = self.message(&base, 1);
            let cont = self.process(&base, 2, agents);
            parts.push(Network::Located(l.clone(), Process::Output { chan: chan.clone(), msg, cont: Box::new(cont) }));
            parts.push(Network::Near(l.clone(), receiver.clone()));
        }
        let x = self.fresh("x");
        let pattern = Pattern::new(vec![x.clone()], Message::Var(x.clone())).unwrap();
        let mut inner = base.clone();
        let input = if collect {
            let setvar = self.fresh("S");
            inner.setvars.push(setvar.clone());
            let cont = self.process(&inner, 2, agents);
            Process::CInput { chan, pattern, setvar, cont: Box::new(cont) }
        } else {
            inner.vars.push(x);
            let cont = self.process(&inner, 2, agents);
            Process::BInput { chan, pattern, cont: Box::new(cont) }
        };
        parts.push(Network::Located(receiver, input));
        Network::par_all(parts)
    }

    /// A program with declarations, up to two agents and a network.
    pub fn program(&mut self) -> Program {
        let mut p = Program::default();
        p.selectors.insert(n("min"), SelectorFn::Min);
        p.channels.insert(n("a"), Bound::uniform(2));
        p.channels.insert(n("b"), Bound::uniform(self.rng.gen_range(1..=3)));
        if self.typed {
            p.types.insert(n("a"), Type::chan_b(Type::ambient()));
            p.types.insert(n("b"), Type::chan_c(Type::ambient()));
            p.types.insert(n("c"), Type::chan_b(Type::ambient()));
        } else {
            p.selectors.insert(n("card"), SelectorFn::Card);
            p.selectors.insert(n("elect"), SelectorFn::Elect);
            p.constructors.insert(n("f"), ConstructorFn::Inert);
            p.constructors.insert(n("first"), ConstructorFn::First);
            p.constructors.insert(n("chosen"), ConstructorFn::Chosen);
        }
        let mut agents: Vec<(Name, usize)> = Vec::new();
        for (i, name) in ["A", "B"].iter().enumerate() {
            if !self.coin(0.5) {
                continue;
            }
            let arity = 2 + i;
            let params: Vec<Name> = std::iter::once(n("ch")).chain((1..arity).map(|j| n(&format!("v{j}")))).collect();
            let sc = Scope { vars: params[1..].to_vec(), bchans: vec![n("ch")], closed: true, ..Scope::default() };
            agents.push((n(name), arity));
            let body = self.process(&sc, 3, &agents);
            p.agents.insert(n(name), AgentDef { name: n(name), params, body });
        }
        // A recursive sender so that some state graphs are infinite.
        if self.coin(0.3) {
            let params = vec![n("ch"), n("v")];
            let body = Process::Output {
                chan: n("ch"),
                msg: Message::Var(n("v")),
                cont: Box::new(Process::Call { agent: n("Rep"), args: vec![Message::Var(n("ch")), Message::Var(n("v"))] }),
            };
            p.agents.insert(n("Rep"), AgentDef { name: n("Rep"), params, body });
            agents.push((n("Rep"), 2));
        }
        let mut parts = Vec::new();
        if self.coin(0.7) {
            parts.push(self.exchange(&agents));
        }
        for _ in 0..self.rng.gen_range(1..=3) {
            let depth = self.rng.gen_range(0..self.max_depth);
            parts.push(self.network(depth, &agents));
        }
        for l in LOCATIONS {
            for m in LOCATIONS {
                if l != m && self.coin(0.4) {
                    parts.push(Network::near(l, m));
                }
            }
        }
        p.net = Some(Network::par_all(parts));
        p
    }
}

/// A structurally congruent variant built from random applications of the
/// congruence laws: commutativity and associativity of `|` and `+`, `0`
/// units, alpha-conversion, located-parallel splitting, scope extrusion and
/// guard symmetry.
pub fn congruent_variant(net: &Network, rng: &mut ChaCha8Rng) -> Network {
    let mut fresh = 0usize;
    vary_net(net, rng, &mut fresh)
}

fn vary_net(n_: &Network, rng: &mut ChaCha8Rng, fresh: &mut usize) -> Network {
    match n_ {
        Network::Par(a, b) => {
            let (a, b) = (vary_net(a, rng, fresh), vary_net(b, rng, fresh));
            match rng.gen_range(0..3) {
                0 => Network::par(b, a),
                1 => match a {
                    Network::Par(x, y) => Network::par(*x, Network::par(*y, b)),
                    a => Network::par(a, b),
                },
                _ => Network::par(a, b),
            }
        }
        Network::Located(l, p) => {
            let p = vary_proc(p, rng, fresh);
            match p {
                Process::Par(x, y) if rng.gen_bool(0.5) => {
                    Network::par(Network::Located(l.clone(), *x), Network::Located(l.clone(), *y))
                }
                Process::New { name, bound, ty, body } if &name != l && rng.gen_bool(0.5) => {
                    Network::New { name, bound, ty, body: Box::new(Network::Located(l.clone(), *body)) }
                }
                p => Network::Located(l.clone(), p),
            }
        }
        Network::New { name, bound, ty, body } => {
            *fresh += 1;
            let y = Name::new(format!("z{fresh}"));
            let body = vary_net(body, rng, fresh).rename(&BTreeMap::from([(name.clone(), y.clone())]));
            let bound_renamed = bound.clone();
            Network::New { name: y, bound: bound_renamed, ty: ty.clone(), body: Box::new(body) }
        }
        Network::Near(..) => n_.clone(),
    }
}

fn vary_proc(p: &Process, rng: &mut ChaCha8Rng, fresh: &mut usize) -> Process {
    let rename_binder = |x: &Name, body: &Process, fresh: &mut usize| -> (Name, Process) {
        *fresh += 1;
        let y = Name::new(format!("{}q{fresh}", x.as_str().trim_end_matches(char::is_numeric)));
        (y.clone(), body.rename(&BTreeMap::from([(x.clone(), y)])))
    };
    let out = match p {
        Process::Nil | Process::Call { .. } => p.clone(),
        Process::Output { chan, msg, cont } => {
            Process::Output { chan: chan.clone(), msg: msg.clone(), cont: Box::new(vary_proc(cont, rng, fresh)) }
        }
        Process::BInput { chan, pattern, cont } => {
            let cont = vary_proc(cont, rng, fresh);
            Process::BInput { chan: chan.clone(), pattern: pattern.clone(), cont: Box::new(cont) }
        }
        Process::CInput { chan, pattern, setvar, cont } => {
            let cont = vary_proc(cont, rng, fresh);
            let (s2, cont) = rename_binder(setvar, &cont, fresh);
            Process::CInput { chan: chan.clone(), pattern: pattern.clone(), setvar: s2, cont: Box::new(cont) }
        }
        Process::New { name, bound, ty, body } => {
            let body = vary_proc(body, rng, fresh);
            let (y, body) = rename_binder(name, &body, fresh);
            Process::New { name: y, bound: bound.clone(), ty: ty.clone(), body: Box::new(body) }
        }
        Process::Match { left, right, body } => {
            let body = Box::new(vary_proc(body, rng, fresh));
            if rng.gen_bool(0.5) {
                Process::Match { left: right.clone(), right: left.clone(), body }
            } else {
                Process::Match { left: left.clone(), right: right.clone(), body }
            }
        }
        Process::Mismatch { left, right, body } => {
            let body = Box::new(vary_proc(body, rng, fresh));
            Process::Mismatch { left: right.clone(), right: left.clone(), body }
        }
        Process::Par(a, b) => {
            let (a, b) = (vary_proc(a, rng, fresh), vary_proc(b, rng, fresh));
            if rng.gen_bool(0.5) {
                Process::par(b, a)
            } else {
                Process::par(a, b)
            }
        }
        Process::Sum(a, b) => {
            let (a, b) = (vary_proc(a, rng, fresh), vary_proc(b, rng, fresh));
            if rng.gen_bool(0.5) {
                Process::sum(b, a)
            } else {
                Process::sum(a, b)
            }
        }
    };
    if rng.gen_bool(0.1) {
        Process::par(out, Process::Nil)
    } else {
        out
    }
}

/// Name of a generated location, for tests that need one.
pub fn some_location() -> Name {
    n(LOCATIONS[0])
}

/// The builtins plus the inert constructor `f` the generator uses.
pub fn registry() -> Registry {
    let mut r = Registry::builtins();
    r.constructors.insert(n("f"), ConstructorFn::Inert);
    r
}

/// No guard, selector or constructor application occurs, so canonicalization cannot
/// erase names by evaluation.
pub fn evaluation_free(net: &Network) -> bool {
    let mut ok = true;
    net.visit_processes(&mut |_, p| ok &= process_evaluation_free(p));
    ok
}

fn process_evaluation_free(p: &Process) -> bool {
    let mut symbols = 0;
    p.visit_messages(&mut |m| {
        let mut sel = 0;
        let mut cons = 0;
        m.visit_symbols(&mut |_| sel += 1, &mut |_| cons += 1);
        symbols += sel + cons;
    });
    symbols == 0 && match p {
        Process::Match { .. } | Process::Mismatch { .. } => false,
        Process::Nil | Process::Call { .. } => true,
        Process::Output { cont, .. } | Process::BInput { cont, .. } | Process::CInput { cont, .. } => {
            process_evaluation_free(cont)
        }
        Process::New { body, .. } => process_evaluation_free(body),
        Process::Par(a, b) | Process::Sum(a, b) => process_evaluation_free(a) && process_evaluation_free(b),
    }
}
