//! Concrete syntax: lexer, recursive-descent parser with load-time semantic
//! checks, and a pretty-printer whose output re-parses to an
//! alpha-equivalent program.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::ast::{AgentDef, Bound, Message, MultisetExpr, Name, NameSet, Network, Pattern, Process, Program};
use crate::eval::{ConstructorFn, SelectorFn};
use crate::typesys::{Arity, Type};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
    pub expected: Vec<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)?;
        if !self.expected.is_empty() {
            write!(f, " (expected {})", self.expected.join(", "))?;
        }
        Ok(())
    }
}

const KEYWORDS: &[&str] = &["channel", "agent", "selector", "constructor", "type", "net", "new", "in", "as", "bound", "inf"];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Sym(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Sym(s) => write!(f, "`{s}`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

// Longest symbols first so that maximal munch works.
const SYMBOLS: &[&str] = &[
    "<->", "::", "->", "?*", "!=", "!", "?", "<", ">", "(", ")", "[", "]", "{", "}", ",", ".", "=", "|", "+", ":", "*",
];

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '%' | '#' | '$')
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '\'')
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if is_ident_start(c) {
            let start = i;
            i += 1;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            out.push(Token { tok: Tok::Ident(s), line, col });
            col += i - start;
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                out.push(Token { tok: Tok::Sym(s), line, col });
                i += s.len();
                col += s.len();
            }
            None => {
                return Err(ParseError { line, col, message: format!("unexpected character `{c}`"), expected: vec![] })
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct Pos {
    line: usize,
    col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Scope {
    Name,
    SetVar,
}

struct Parser {
    toks: Vec<Token>,
    i: usize,
    scope: Vec<(String, Scope)>,
    calls: Vec<(Name, usize, Pos)>,
    selector_uses: Vec<(Name, Pos)>,
    constructor_uses: Vec<(Name, Pos)>,
    in_pattern: bool,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn pos(&self) -> Pos {
        let t = &self.toks[self.i];
        Pos { line: t.line, col: t.col }
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].tok.clone();
        if self.i < self.toks.len() - 1 {
            self.i += 1;
        }
        t
    }

    fn error_at(&self, pos: Pos, message: impl Into<String>) -> ParseError {
        ParseError { line: pos.line, col: pos.col, message: message.into(), expected: vec![] }
    }

    fn unexpected(&self, expected: &[&str]) -> ParseError {
        let pos = self.pos();
        ParseError {
            line: pos.line,
            col: pos.col,
            message: format!("unexpected {}", self.peek()),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(t) if *t == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(t) if t == k)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.unexpected(&[s]))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.is_kw(k) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&[k]))
        }
    }

    fn name(&mut self) -> PResult<Name> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(Name::new(s))
            }
            _ => Err(self.unexpected(&["name"])),
        }
    }

    fn int(&mut self) -> PResult<u32> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Ident(s) if s.chars().all(|c| c.is_ascii_digit()) => {
                self.bump();
                s.parse().map_err(|_| self.error_at(pos, "integer out of range"))
            }
            _ => Err(self.unexpected(&["integer"])),
        }
    }

    fn lookup_scope(&self, x: &str) -> Option<&Scope> {
        self.scope.iter().rev().find(|(n, _)| n == x).map(|(_, s)| s)
    }

    fn with_scope<T>(&mut self, names: &[(Name, Scope)], f: impl FnOnce(&mut Self) -> PResult<T>) -> PResult<T> {
        let depth = self.scope.len();
        self.scope.extend(names.iter().map(|(n, s)| (n.as_str().to_string(), s.clone())));
        let r = f(self);
        self.scope.truncate(depth);
        r
    }

    // Declarations.

    fn program(&mut self) -> PResult<Program> {
        let mut prog = Program::default();
        let mut agent_pos = BTreeMap::new();
        loop {
            let pos = self.pos();
            if self.is_kw("channel") {
                self.bump();
                let a = self.name()?;
                let b = if self.is_kw("bound") { self.boundspec()? } else { Bound::unbounded() };
                if prog.channels.insert(a.clone(), b).is_some() {
                    return Err(self.error_at(pos, format!("channel `{a}` declared twice")));
                }
            } else if self.is_kw("agent") {
                self.bump();
                let name = self.name()?;
                self.expect_sym("(")?;
                let params = if self.is_sym(")") { vec![] } else { self.names()? };
                self.expect_sym(")")?;
                self.expect_sym("=")?;
                if params.iter().collect::<BTreeSet<_>>().len() != params.len() {
                    return Err(self.error_at(pos, format!("agent `{name}` has duplicate parameters")));
                }
                let scope: Vec<(Name, Scope)> = params.iter().map(|p| (p.clone(), Scope::Name)).collect();
                let body = self.with_scope(&scope, |p| p.process())?;
                let extra: Vec<String> =
                    body.free_names().difference(&params.iter().cloned().collect()).map(|n| n.to_string()).collect();
                if !extra.is_empty() {
                    return Err(self.error_at(
                        pos,
                        format!("agent `{name}` has free names that are not parameters: {}", extra.join(", ")),
                    ));
                }
                if prog.agents.contains_key(&name) {
                    return Err(self.error_at(pos, format!("agent `{name}` defined twice")));
                }
                agent_pos.insert(name.clone(), pos);
                prog.agents.insert(name.clone(), AgentDef { name, params, body });
            } else if self.is_kw("selector") {
                self.bump();
                let g = self.name()?;
                let f = if self.eat_sym("=") {
                    self.selector_builtin()?
                } else {
                    SelectorFn::by_name(g.as_str())
                        .ok_or_else(|| self.error_at(pos, format!("selector `{g}` is not a builtin; bind it with `=`")))?
                };
                if prog.selectors.insert(g.clone(), f).is_some() {
                    return Err(self.error_at(pos, format!("selector `{g}` declared twice")));
                }
            } else if self.is_kw("constructor") {
                self.bump();
                let f = self.name()?;
                let c = if self.eat_sym("=") {
                    let bpos = self.pos();
                    let b = self.name()?;
                    ConstructorFn::by_name(b.as_str())
                        .ok_or_else(|| self.error_at(bpos, format!("unknown constructor builtin `{b}`")))?
                } else {
                    ConstructorFn::by_name(f.as_str()).unwrap_or(ConstructorFn::Inert)
                };
                if prog.constructors.insert(f.clone(), c).is_some() {
                    return Err(self.error_at(pos, format!("constructor `{f}` declared twice")));
                }
            } else if self.is_kw("type") {
                self.bump();
                let x = self.name()?;
                self.expect_sym(":")?;
                let t = self.ty()?;
                if prog.types.insert(x.clone(), t).is_some() {
                    return Err(self.error_at(pos, format!("type of `{x}` declared twice")));
                }
            } else if self.is_kw("net") {
                self.bump();
                self.expect_sym("=")?;
                prog.net = Some(self.network()?);
                if *self.peek() != Tok::Eof {
                    return Err(self.unexpected(&["end of input"]));
                }
                break;
            } else {
                return Err(self.unexpected(&["channel", "agent", "selector", "constructor", "type", "net"]));
            }
        }
        self.resolve(&mut prog)?;
        Ok(prog)
    }

    fn selector_builtin(&mut self) -> PResult<SelectorFn> {
        let pos = self.pos();
        let b = self.name()?;
        if b.as_str() == "find" {
            self.expect_sym("(")?;
            let target = self.name()?;
            self.expect_sym(",")?;
            let fallback = self.name()?;
            self.expect_sym(")")?;
            return Ok(SelectorFn::Find { target, fallback });
        }
        SelectorFn::by_name(b.as_str()).ok_or_else(|| self.error_at(pos, format!("unknown selector builtin `{b}`")))
    }

    // Deferred checks: calls, symbols.
    fn resolve(&mut self, prog: &mut Program) -> PResult<()> {
        for (a, arity, pos) in &self.calls {
            match prog.agents.get(a) {
                None => return Err(self.error_at(*pos, format!("unknown agent `{a}`"))),
                Some(def) if def.params.len() != *arity => {
                    return Err(self.error_at(
                        *pos,
                        format!("agent `{a}` expects {} arguments, got {arity}", def.params.len()),
                    ))
                }
                _ => {}
            }
        }
        for (g, pos) in &self.selector_uses {
            if !prog.selectors.contains_key(g) {
                match SelectorFn::by_name(g.as_str()) {
                    Some(f) => {
                        prog.selectors.insert(g.clone(), f);
                    }
                    None => return Err(self.error_at(*pos, format!("unknown selector `{g}`"))),
                }
            }
        }
        for (f, pos) in &self.constructor_uses {
            if !prog.constructors.contains_key(f) {
                match ConstructorFn::by_name(f.as_str()) {
                    Some(c) if c != ConstructorFn::Inert => {
                        prog.constructors.insert(f.clone(), c);
                    }
                    _ => return Err(self.error_at(*pos, format!("unknown constructor `{f}`"))),
                }
            }
        }
        let net = prog.network();
        for x in net.free_names() {
            if x.is_reserved() {
                return Err(self.error_at(Pos { line: 1, col: 1 }, format!("reserved name `{x}` occurs free")));
            }
        }
        check_network(net).map_err(|m| self.error_at(Pos { line: 1, col: 1 }, m))?;
        for def in prog.agents.values() {
            check_process(&def.body, None).map_err(|m| self.error_at(Pos { line: 1, col: 1 }, m))?;
        }
        Ok(())
    }

    fn boundspec(&mut self) -> PResult<Bound> {
        let pos = self.pos();
        self.expect_kw("bound")?;
        let default = if self.is_kw("inf") {
            self.bump();
            None
        } else {
            Some(self.int()?)
        };
        let mut at = BTreeMap::new();
        if self.eat_sym("{") {
            loop {
                let l = self.name()?;
                self.expect_sym(":")?;
                let k = self.int()?;
                at.insert(l, k);
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym("}")?;
        }
        let b = Bound { default, at };
        b.validate().map_err(|e| self.error_at(pos, e.to_string()))?;
        Ok(b)
    }

    fn names(&mut self) -> PResult<Vec<Name>> {
        let mut v = vec![self.name()?];
        while self.eat_sym(",") {
            v.push(self.name()?);
        }
        Ok(v)
    }

    // Types.

    fn ty(&mut self) -> PResult<Type> {
        let a = self.ty_atom()?;
        if self.eat_sym("->") {
            return Ok(Type::arrow(a, self.ty()?));
        }
        Ok(a)
    }

    fn ty_atom(&mut self) -> PResult<Type> {
        if self.eat_sym("(") {
            let mut ts = vec![self.ty()?];
            while self.eat_sym(",") {
                ts.push(self.ty()?);
            }
            self.expect_sym(")")?;
            return Ok(if ts.len() == 1 { ts.pop().unwrap() } else { Type::Product(ts) });
        }
        if self.eat_sym("{") {
            let t = self.ty()?;
            self.expect_sym("}")?;
            let k = if self.eat_sym("*") { Arity::Any } else { Arity::Exact(self.int()? as usize) };
            return Ok(Type::multiset(t, k));
        }
        let n = self.name()?;
        match n.as_str() {
            "Loc" => Ok(Type::Loc),
            "B" | "C" if self.is_sym("<") => {
                self.bump();
                let t = self.ty()?;
                self.expect_sym(">")?;
                Ok(if n.as_str() == "B" { Type::chan_b(t) } else { Type::chan_c(t) })
            }
            _ => Ok(Type::Base(n)),
        }
    }

    fn restriction_head(&mut self) -> PResult<(Name, Option<Type>, Bound)> {
        self.expect_kw("new")?;
        let x = self.name()?;
        let ty = if self.eat_sym(":") { Some(self.ty()?) } else { None };
        let b = if self.is_kw("bound") { self.boundspec()? } else { Bound::unbounded() };
        self.expect_kw("in")?;
        Ok((x, ty, b))
    }

    // Networks.

    fn network(&mut self) -> PResult<Network> {
        let first = self.netatom()?;
        if self.eat_sym("|") {
            return Ok(Network::par(first, self.network()?));
        }
        Ok(first)
    }

    fn netatom(&mut self) -> PResult<Network> {
        if self.is_kw("new") {
            let (name, ty, bound) = self.restriction_head()?;
            let body = self.with_scope(&[(name.clone(), Scope::Name)], |p| p.network())?;
            return Ok(Network::New { name, bound, ty, body: Box::new(body) });
        }
        if self.eat_sym("(") {
            let n = self.network()?;
            self.expect_sym(")")?;
            return Ok(n);
        }
        let pos = self.pos();
        let l = self.name()?;
        if self.eat_sym("::") {
            self.expect_sym("[")?;
            let p = self.process()?;
            self.expect_sym("]")?;
            return Ok(Network::Located(l, p));
        }
        let both = if self.eat_sym("->") {
            false
        } else if self.eat_sym("<->") {
            true
        } else {
            return Err(self.unexpected(&["::", "->", "<->"]));
        };
        let m = self.name()?;
        if l == m {
            return Err(self.error_at(pos, format!("connectivity atom `{l} -> {l}` is reflexive")));
        }
        Ok(if both {
            Network::par(Network::Near(l.clone(), m.clone()), Network::Near(m, l))
        } else {
            Network::Near(l, m)
        })
    }

    // Processes.

    fn process(&mut self) -> PResult<Process> {
        let first = self.sum()?;
        if self.eat_sym("|") {
            return Ok(Process::par(first, self.process()?));
        }
        Ok(first)
    }

    fn sum(&mut self) -> PResult<Process> {
        let first = self.prefix()?;
        if self.eat_sym("+") {
            return Ok(Process::sum(first, self.sum()?));
        }
        Ok(first)
    }

    fn continuation(&mut self) -> PResult<Process> {
        if self.eat_sym(".") {
            self.prefix()
        } else {
            Ok(Process::Nil)
        }
    }

    fn prefix(&mut self) -> PResult<Process> {
        if self.is_kw("new") {
            let (name, ty, bound) = self.restriction_head()?;
            let body = self.with_scope(&[(name.clone(), Scope::Name)], |p| p.process())?;
            return Ok(Process::New { name, bound, ty, body: Box::new(body) });
        }
        if self.eat_sym("(") {
            let p = self.process()?;
            self.expect_sym(")")?;
            return Ok(p);
        }
        if self.eat_sym("[") {
            let left = self.msg()?;
            let eq = if self.eat_sym("=") {
                true
            } else if self.eat_sym("!=") {
                false
            } else {
                return Err(self.unexpected(&["=", "!="]));
            };
            let right = self.msg()?;
            self.expect_sym("]")?;
            let body = Box::new(self.prefix()?);
            return Ok(if eq { Process::Match { left, right, body } } else { Process::Mismatch { left, right, body } });
        }
        if self.is_kw("0") {
            self.bump();
            return Ok(Process::Nil);
        }
        let pos = self.pos();
        let a = self.name()?;
        if self.eat_sym("!") {
            self.expect_sym("<")?;
            let msg = self.msg()?;
            self.expect_sym(">")?;
            let cont = self.continuation()?;
            return Ok(Process::Output { chan: a, msg, cont: Box::new(cont) });
        }
        let collect = if self.eat_sym("?") {
            false
        } else if self.eat_sym("?*") {
            true
        } else if self.eat_sym("(") {
            let args = if self.is_sym(")") { vec![] } else { self.msgs()? };
            self.expect_sym(")")?;
            self.calls.push((a.clone(), args.len(), pos));
            return Ok(Process::Call { agent: a, args });
        } else {
            return Err(self.unexpected(&["!", "?", "?*", "("]));
        };
        self.expect_sym("<")?;
        let binders = if self.is_sym(">") { vec![] } else { self.names()? };
        self.expect_sym(">")?;
        let bscope: Vec<(Name, Scope)> = binders.iter().map(|b| (b.clone(), Scope::Name)).collect();
        let body = self.with_scope(&bscope, |p| {
            p.in_pattern = true;
            let r = p.pattern_body();
            p.in_pattern = false;
            r
        })?;
        let pattern = Pattern::new(binders, body).map_err(|e| self.error_at(pos, e.to_string()))?;
        if pattern.body.contains_select() {
            return Err(self.error_at(pos, "selector application inside a pattern"));
        }
        if collect {
            self.expect_kw("as")?;
            let s = self.name()?;
            self.expect_sym(".")?;
            let cont = self.with_scope(&[(s.clone(), Scope::SetVar)], |p| p.prefix())?;
            Ok(Process::CInput { chan: a, pattern, setvar: s, cont: Box::new(cont) })
        } else {
            let cont = self.with_scope(&bscope, |p| p.continuation())?;
            Ok(Process::BInput { chan: a, pattern, cont: Box::new(cont) })
        }
    }

    // `(M)` or `(M1, ..., Mk)` as sugar for a tuple body.
    fn pattern_body(&mut self) -> PResult<Message> {
        self.expect_sym("(")?;
        let mut ms = self.msgs()?;
        self.expect_sym(")")?;
        Ok(if ms.len() == 1 { ms.pop().unwrap() } else { Message::Tuple(ms) })
    }

    // Messages.

    fn msgs(&mut self) -> PResult<Vec<Message>> {
        let mut v = vec![self.msg()?];
        while self.eat_sym(",") {
            v.push(self.msg()?);
        }
        Ok(v)
    }

    fn msg(&mut self) -> PResult<Message> {
        if self.eat_sym("(") {
            let mut ms = self.msgs()?;
            self.expect_sym(")")?;
            return Ok(if ms.len() == 1 { ms.pop().unwrap() } else { Message::Tuple(ms) });
        }
        if self.eat_sym("{") {
            let ms = self.msgs()?;
            self.expect_sym("}")?;
            return Ok(Message::bag(ms));
        }
        let pos = self.pos();
        let x = self.name()?;
        if self.eat_sym("(") {
            let mut ms = self.msgs()?;
            self.expect_sym(")")?;
            let arg = if ms.len() == 1 { ms.pop().unwrap() } else { Message::Tuple(ms) };
            self.constructor_uses.push((x.clone(), pos));
            return Ok(Message::Cons(x, Box::new(arg)));
        }
        if self.eat_sym("{") {
            if self.in_pattern {
                return Err(self.error_at(pos, "selector application inside a pattern"));
            }
            let e = if self.eat_sym("{") {
                let ms = self.msgs()?;
                self.expect_sym("}")?;
                MultisetExpr::literal(ms)
            } else {
                let ms = self.msgs()?;
                match ms.as_slice() {
                    [Message::SetVar(s)] => MultisetExpr::Var(s.clone()),
                    _ => MultisetExpr::literal(ms),
                }
            };
            self.expect_sym("}")?;
            self.selector_uses.push((x.clone(), pos));
            return Ok(Message::Select(x, e));
        }
        Ok(match self.lookup_scope(x.as_str()) {
            Some(Scope::SetVar) => Message::SetVar(x),
            _ => Message::Var(x),
        })
    }
}

// Structural checks that need the whole tree.

fn check_network(n: &Network) -> Result<(), String> {
    match n {
        Network::Located(l, p) => check_process(p, Some(l)),
        Network::Par(a, b) => {
            check_network(a)?;
            check_network(b)
        }
        Network::New { body, .. } => check_network(body),
        Network::Near(..) => Ok(()),
    }
}

fn check_process(p: &Process, loc: Option<&Name>) -> Result<(), String> {
    match p {
        Process::Nil | Process::Call { .. } => Ok(()),
        Process::Output { cont, .. } | Process::BInput { cont, .. } | Process::CInput { cont, .. } => {
            check_process(cont, loc)
        }
        Process::New { name, body, .. } => {
            if Some(name) == loc {
                return Err(format!("restriction of `{name}` inside its own location `{name}`"));
            }
            check_process(body, loc)
        }
        Process::Match { body, .. } | Process::Mismatch { body, .. } => check_process(body, loc),
        Process::Par(a, b) | Process::Sum(a, b) => {
            check_process(a, loc)?;
            check_process(b, loc)
        }
    }
}

pub fn parse_program(src: &str) -> Result<Program, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        i: 0,
        scope: Vec::new(),
        calls: Vec::new(),
        selector_uses: Vec::new(),
        constructor_uses: Vec::new(),
        in_pattern: false,
    };
    p.program()
}

/// Parse `src` as the network of a program with no declarations.
pub fn parse_network(src: &str) -> Result<Network, ParseError> {
    Ok(parse_program(&format!("net = {src}"))?.net.expect("parsed programs have a network"))
}

// Printing.

pub fn print_message(m: &Message) -> String {
    let mut s = String::new();
    write_message(&mut s, m);
    s
}

fn write_list(s: &mut String, ms: &[Message]) {
    for (i, m) in ms.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        write_message(s, m);
    }
}

fn write_message(s: &mut String, m: &Message) {
    match m {
        Message::Var(x) | Message::SetVar(x) => s.push_str(x.as_str()),
        Message::Tuple(ms) => {
            s.push('(');
            write_list(s, ms);
            s.push(')');
        }
        Message::Bag(ms) => {
            s.push('{');
            write_list(s, ms);
            s.push('}');
        }
        Message::Select(g, MultisetExpr::Var(v)) => {
            s.push_str(&format!("{g}{{{v}}}"));
        }
        Message::Select(g, MultisetExpr::Literal(ms)) => {
            s.push_str(&format!("{g}{{{{"));
            write_list(s, ms);
            s.push_str("}}");
        }
        Message::Cons(f, arg) => {
            s.push_str(f.as_str());
            s.push('(');
            write_message(s, arg);
            s.push(')');
        }
    }
}

fn print_bound(b: &Bound) -> String {
    if b.default.is_none() && b.at.is_empty() {
        return String::new();
    }
    let mut s = match b.default {
        Some(k) => format!(" bound {k}"),
        None => " bound inf".to_string(),
    };
    if !b.at.is_empty() {
        let entries: Vec<String> = b.at.iter().map(|(l, k)| format!("{l}: {k}")).collect();
        s.push_str(&format!(" {{{}}}", entries.join(", ")));
    }
    s
}

fn print_restriction_head(name: &Name, ty: &Option<Type>, bound: &Bound) -> String {
    let ty = ty.as_ref().map(|t| format!(" : {t}")).unwrap_or_default();
    format!("new {name}{ty}{} in ", print_bound(bound))
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Level {
    Par,
    Sum,
    Prefix,
}

pub fn print_process(p: &Process) -> String {
    let mut s = String::new();
    write_process(&mut s, p, Level::Par);
    s
}

fn write_process(s: &mut String, p: &Process, ctx: Level) {
    let own = match p {
        Process::Par(..) => Level::Par,
        Process::Sum(..) => Level::Sum,
        _ => Level::Prefix,
    };
    if own < ctx {
        s.push('(');
        write_process(s, p, Level::Par);
        s.push(')');
        return;
    }
    match p {
        Process::Nil => s.push('0'),
        Process::Output { chan, msg, cont } => {
            s.push_str(&format!("{chan}!<"));
            write_message(s, msg);
            s.push_str(">.");
            write_process(s, cont, Level::Prefix);
        }
        Process::BInput { chan, pattern, cont } => {
            write_input_head(s, chan, "?", pattern);
            s.push('.');
            write_process(s, cont, Level::Prefix);
        }
        Process::CInput { chan, pattern, setvar, cont } => {
            write_input_head(s, chan, "?*", pattern);
            s.push_str(&format!(" as {setvar}. "));
            write_process(s, cont, Level::Prefix);
        }
        Process::New { name, bound, ty, body } => {
            s.push_str(&print_restriction_head(name, ty, bound));
            write_process(s, body, Level::Par);
        }
        Process::Match { left, right, body } | Process::Mismatch { left, right, body } => {
            let op = if matches!(p, Process::Match { .. }) { "=" } else { "!=" };
            s.push('[');
            write_message(s, left);
            s.push_str(&format!(" {op} "));
            write_message(s, right);
            s.push(']');
            write_process(s, body, Level::Prefix);
        }
        Process::Par(a, b) | Process::Sum(a, b) => {
            let (op, lvl) = if own == Level::Par { (" | ", Level::Sum) } else { (" + ", Level::Prefix) };
            // A left operand must not swallow the rest, and must not be the
            // same operator (the parser nests to the right).
            if a.ends_open() || std::mem::discriminant(&**a) == std::mem::discriminant(p) {
                s.push('(');
                write_process(s, a, Level::Par);
                s.push(')');
            } else {
                write_process(s, a, lvl);
            }
            s.push_str(op);
            write_process(s, b, own);
        }
        Process::Call { agent, args } => {
            s.push_str(agent.as_str());
            s.push('(');
            write_list(s, args);
            s.push(')');
        }
    }
}

fn write_input_head(s: &mut String, chan: &Name, op: &str, pattern: &Pattern) {
    let binders: Vec<&str> = pattern.binders.iter().map(Name::as_str).collect();
    s.push_str(&format!("{chan}{op}<{}>(", binders.join(", ")));
    match &pattern.body {
        Message::Tuple(ms) => write_list(s, ms),
        m => write_message(s, m),
    }
    s.push(')');
}

pub fn print_network(n: &Network) -> String {
    let mut s = String::new();
    write_network(&mut s, n);
    s
}

fn write_network(s: &mut String, n: &Network) {
    match n {
        Network::Located(l, p) => {
            s.push_str(&format!("{l}::["));
            write_process(s, p, Level::Par);
            s.push(']');
        }
        Network::Near(l, m) => s.push_str(&format!("{l} -> {m}")),
        Network::New { name, bound, ty, body } => {
            s.push_str(&print_restriction_head(name, ty, bound));
            write_network(s, body);
        }
        Network::Par(a, b) => {
            if a.ends_open() || matches!(**a, Network::Par(..)) {
                s.push('(');
                write_network(s, a);
                s.push(')');
            } else {
                write_network(s, a);
            }
            s.push_str(" | ");
            write_network(s, b);
        }
    }
}

fn print_selector(f: &SelectorFn) -> String {
    match f {
        SelectorFn::Min => "min".into(),
        SelectorFn::Elect => "elect".into(),
        SelectorFn::Card => "card".into(),
        SelectorFn::Find { target, fallback } => format!("find({target}, {fallback})"),
    }
}

fn print_constructor(c: &ConstructorFn) -> &'static str {
    match c {
        ConstructorFn::Inert => "inert",
        ConstructorFn::First => "first",
        ConstructorFn::Chosen => "chosen",
    }
}

pub fn pretty_print(p: &Program) -> String {
    let mut out = String::new();
    for (f, c) in &p.constructors {
        out.push_str(&format!("constructor {f} = {}\n", print_constructor(c)));
    }
    for (g, f) in &p.selectors {
        out.push_str(&format!("selector {g} = {}\n", print_selector(f)));
    }
    for (a, b) in &p.channels {
        let spec = print_bound(b);
        out.push_str(&format!("channel {a}{}\n", if spec.is_empty() { " bound inf".to_string() } else { spec }));
    }
    for (x, t) in &p.types {
        out.push_str(&format!("type {x} : {t}\n"));
    }
    for def in p.agents.values() {
        let params: Vec<&str> = def.params.iter().map(Name::as_str).collect();
        out.push_str(&format!("agent {}({}) = {}\n", def.name, params.join(", "), print_process(&def.body)));
    }
    if let Some(n) = &p.net {
        out.push_str(&format!("net = {}\n", print_network(n)));
    }
    out
}

/// Names bound anywhere in the program's network (useful for generators).
pub fn bound_names(n: &Network) -> NameSet {
    let mut out = NameSet::new();
    fn go(n: &Network, out: &mut NameSet) {
        match n {
            Network::New { name, body, .. } => {
                out.insert(name.clone());
                go(body, out);
            }
            Network::Par(a, b) => {
                go(a, out);
                go(b, out);
            }
            _ => {}
        }
    }
    go(n, &mut out);
    out
}
