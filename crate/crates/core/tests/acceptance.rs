//! Acceptance suite: one line per criterion. Runs as a plain binary so the
//! report is always printed.

mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use bbc::ast::{alpha_canonical_program, Message, Name, Program};
use bbc::bisim::{barbs, compare_graphs, weak_barbed_bisim, BarbMode, BisimVerdict};
use bbc::congruence::{cong_equiv_with, normalize_with};
use bbc::eval::{check_idempotent_exhaustive, Registry};
use bbc::parser::{parse_network, parse_program, pretty_print};
use bbc::protocol::{check_electoral, flatten, gen_electoral, gen_hierarchical, ElectoralSpec, HierarchySpec, Rounds};
use bbc::reduction::{state_graph, successors, Engine, Exploration, Limits, Mode, RuleLabel};
use bbc::typesys::{check_network, check_normal_form, check_program, TypeEnv};
use common::{congruent_variant, evaluation_free, Gen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Criteria that fail for documented reasons. The suite still fails if one
/// of them starts passing, so the list cannot go stale.
const EXPECTED_FAILURES: &[u32] = &[7, 8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome { pass: true, detail: detail.into() }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome { pass: false, detail: detail.into() }
}

/// Fail with a message unless `cond` holds.
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return fail(format!($($msg)+));
        }
    };
}

fn corpus_dir() -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "corpus"].iter().collect()
}

fn load(file: &str) -> Program {
    parse_program(&std::fs::read_to_string(corpus_dir().join(file)).unwrap()).unwrap()
}

fn names(xs: &[&str]) -> Vec<Name> {
    xs.iter().map(Name::new).collect()
}

fn criterion_1() -> Outcome {
    let p = load("sec33.bbc");
    let r = Registry::from_program(&p);
    let initial = normalize_with(p.network(), &r);
    let expected = parse_network("l1 -> l3 | l2 -> l3 | l1::[0] | l2::[0] | l3::[d!<a>.0]").unwrap();
    let default = successors(&initial, &p, Mode::Default).unwrap();
    ensure!(default.len() == 1, "default mode has {} successors", default.len());
    let (label, residual) = &default[0];
    let coll = RuleLabel::Coll { chan: Name::new("a"), receiver: Name::new("l3"), senders: names(&["l1", "l2"]) };
    ensure!(*label == coll, "unexpected label {label}");
    ensure!(cong_equiv_with(&residual.denote(), &expected, &r), "residual {residual} differs");
    let exhaustive = successors(&initial, &p, Mode::Exhaustive).unwrap();
    ensure!(exhaustive.iter().all(|(l, _)| matches!(l, RuleLabel::Coll { .. })), "a non-collection successor");
    let matching = exhaustive.iter().filter(|(_, t)| cong_equiv_with(&t.denote(), &expected, &r)).count();
    ensure!(matching == 1, "{matching} exhaustive successors match the residual");
    pass(format!(
        "one Coll {{l1, l2}} -> l3 successor (default mode) with residual l3::[d!<a>.0]; exhaustive mode adds the {} partial collections",
        exhaustive.len() - 1
    ))
}

fn criterion_2() -> Outcome {
    let (mut evaluation_free_count, mut count) = (0, 0);
    for seed in 0..1200u64 {
        let p = if seed % 2 == 0 { Gen::typed(seed).program() } else { Gen::new(seed).program() };
        let r = Registry::from_program(&p);
        let net = p.network();
        let nf = normalize_with(net, &r);
        ensure!(nf.check_invariants().is_ok(), "seed {seed}: {:?}", nf.check_invariants());
        ensure!(cong_equiv_with(net, &nf.denote(), &r), "seed {seed}: not congruent to its normal form");
        let (before, after) = (net.free_names(), nf.free_names());
        // Evaluation may erase names and introduce numerals; without it the
        // sets must agree exactly.
        ensure!(after.iter().all(|x| before.contains(x) || x.is_numeric()), "seed {seed}: new free names");
        if evaluation_free(net) {
            ensure!(before == after, "seed {seed}: free names {before:?} became {after:?}");
            evaluation_free_count += 1;
        }
        count += 1;
    }
    pass(format!("{count} networks; free names identical on the {evaluation_free_count} without evaluable terms"))
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Every subset of `items` with a size in `sizes`, as sorted vectors.
fn subsets(items: &[Name], sizes: impl Fn(usize) -> bool) -> BTreeSet<Vec<Name>> {
    (0u32..1 << items.len())
        .filter(|m| sizes(m.count_ones() as usize))
        .map(|m| (0..items.len()).filter(|i| m & (1 << i) != 0).map(|i| items[i].clone()).collect())
        .collect()
}

fn criterion_3() -> Outcome {
    let mut checked = 0;
    for beta in 1..=3usize {
        for r in 1..=4usize {
            let locs: Vec<Name> = (1..=r).map(|i| Name::new(format!("m{i}"))).collect();
            let k = r.min(beta);

            let mut src = format!("channel a bound {beta}\nnet = s::[a!<v>.0]");
            for l in &locs {
                src += &format!(" | s -> {l} | {l}::[a?<x>(x).0]");
            }
            let p = parse_program(&src).unwrap();
            let nf = normalize_with(p.network(), &Registry::from_program(&p));
            let succ = successors(&nf, &p, Mode::Exhaustive).unwrap();
            ensure!(succ.len() == binomial(r, k), "broadcast beta={beta} r={r}: {} successors", succ.len());
            let mut delivered = BTreeSet::new();
            for (label, _) in &succ {
                let RuleLabel::Broad { receivers, .. } = label else { return fail(format!("unexpected {label}")) };
                ensure!(receivers.len() == k, "broadcast beta={beta} r={r}: delivered to {}", receivers.len());
                delivered.insert(receivers.clone());
            }
            ensure!(delivered == subsets(&locs, |n| n == k), "broadcast beta={beta} r={r}: wrong receiver sets");

            let mut src = format!("channel a bound {beta}\nnet = m::[a?*<x>(x) as S. 0]");
            for (i, l) in locs.iter().enumerate() {
                src += &format!(" | {l} -> m | {l}::[a!<v{i}>.0]");
            }
            let p = parse_program(&src).unwrap();
            let nf = normalize_with(p.network(), &Registry::from_program(&p));
            let collected = |mode| -> Option<BTreeSet<Vec<Name>>> {
                successors(&nf, &p, mode)
                    .unwrap()
                    .into_iter()
                    .map(|(label, _)| match label {
                        RuleLabel::Coll { senders, .. } => Some(senders),
                        _ => None,
                    })
                    .collect()
            };
            let Some(all) = collected(Mode::Exhaustive) else { return fail("non-collection step") };
            ensure!(all == subsets(&locs, |n| n >= 1 && n <= beta), "collection beta={beta} r={r}: wrong sender sets");
            let Some(default) = collected(Mode::Default) else { return fail("non-collection step") };
            ensure!(!default.is_empty(), "collection beta={beta} r={r}: no default step");
            ensure!(default.iter().all(|k2| k2.len() == k), "collection beta={beta} r={r}: default size");
            checked += 1;
        }
    }
    pass(format!("{checked} (bound, counterpart) combinations for each of broadcast and collection, exact counts"))
}

fn criterion_4() -> Outcome {
    let limits = Limits { max_states: 5_000, ..Limits::default() };
    let mut programs: Vec<(String, Program)> = Vec::new();
    for entry in std::fs::read_dir(corpus_dir()).unwrap() {
        let path = entry.unwrap().path();
        let p = parse_program(&std::fs::read_to_string(&path).unwrap()).unwrap();
        if check_program(&p).is_ok() {
            programs.push((path.file_name().unwrap().to_string_lossy().into_owned(), p));
        }
    }
    for (depth, branching) in [(0, vec![2]), (1, vec![2]), (1, vec![3, 1])] {
        let s = HierarchySpec::new(depth, branching.clone());
        programs.push((format!("hierarchy {depth} {branching:?}"), gen_hierarchical(&s).unwrap()));
        programs.push((format!("flat {depth} {branching:?}"), flatten(&s, &Name::new("hub")).unwrap()));
        let s = HierarchySpec { rounds: Rounds::Repeat, ..s };
        programs.push((format!("repeating hierarchy {depth} {branching:?}"), gen_hierarchical(&s).unwrap()));
    }
    for n in 2..=3 {
        programs.push((format!("electoral {n}"), gen_electoral(&ElectoralSpec { participants: n, rounds: 1 }).unwrap()));
    }
    let fixed = programs.len();
    let mut seed = 0u64;
    while programs.len() < fixed + 600 {
        let p = Gen::typed(seed).program();
        if check_program(&p).is_ok() {
            programs.push((format!("random typed seed {seed}"), p));
        }
        seed += 1;
    }
    let mut states = 0;
    for (i, (what, p)) in programs.iter().enumerate() {
        let env = TypeEnv::for_program(p);
        let limits = if i < fixed { limits } else { Limits { max_states: 300, ..limits } };
        for mode in [Mode::Default, Mode::Exhaustive] {
            let g = match state_graph(p, limits, mode) {
                Ok(g) => g,
                Err(e) => return fail(format!("{what}: {e}")),
            };
            for s in &g.states {
                if let Err(e) = check_normal_form(&env, s) {
                    return fail(format!("{what} ({mode:?}): state {s} is ill-typed: {e}"));
                }
            }
            states += g.states.len();
        }
    }
    pass(format!(
        "{} well-typed programs ({fixed} corpus and protocol, the rest random), {states} states, no violations",
        programs.len()
    ))
}

fn criterion_5() -> Outcome {
    let mut details = Vec::new();
    for (depth, branching) in [(1, vec![2]), (2, vec![2, 2])] {
        let start = Instant::now();
        let s = HierarchySpec::new(depth, branching.clone());
        let h = gen_hierarchical(&s).unwrap();
        let f = flatten(&s, &Name::new("hub")).unwrap();
        let gh = Engine::new(&h, Mode::Exhaustive, Limits::default()).explore(Exploration::Reduced).unwrap();
        let gf = Engine::new(&f, Mode::Exhaustive, Limits::default()).explore(Exploration::Reduced).unwrap();
        ensure!(!gh.truncated && !gf.truncated, "depth {depth}: truncated graphs");
        let weak = compare_graphs(&gh, &h, &gf, &f, BarbMode::Weak);
        let strict = compare_graphs(&gh, &h, &gf, &f, BarbMode::Strict);
        let elapsed = start.elapsed();
        ensure!(weak.class() == "Bisimilar", "depth {depth} {branching:?}: weak verdict {weak:?}");
        ensure!(elapsed < Duration::from_secs(120), "depth {depth}: took {elapsed:?}");
        let strict_note = match &strict {
            BisimVerdict::Distinguished { side, trace, reason } => {
                format!("strict: Distinguished ({side:?} after {} steps, {reason})", trace.len())
            }
            other => format!("strict: {}", other.class()),
        };
        details.push(format!(
            "depth {depth} {branching:?}: weak Bisimilar ({} vs {} states, {:.1}s), {strict_note}",
            gh.states.len(),
            gf.states.len(),
            elapsed.as_secs_f64()
        ));
    }
    let s = HierarchySpec::new(1, vec![2]);
    let h = gen_hierarchical(&s).unwrap();
    let f = flatten(&s, &Name::new("hub")).unwrap();
    let v = weak_barbed_bisim(&h, &f, Limits::default(), BarbMode::Weak).unwrap();
    ensure!(v.class() == "Bisimilar", "weak_barbed_bisim entry point: {}", v.class());
    pass(details.join("; "))
}

fn criterion_6() -> Outcome {
    let r = Registry::builtins();
    let numerals: Vec<Message> = (1..=6).map(|i| Message::var(&i.to_string())).collect();
    let mut electoral: Vec<Message> = (1..=4).map(|i| Message::var(&i.to_string())).collect();
    electoral.extend([Message::cons("chosen", Message::var("1")), Message::cons("chosen", Message::var("2"))]);
    let mut details = Vec::new();
    for (g, universe) in [("min", &numerals), ("elect", &electoral)] {
        match check_idempotent_exhaustive(&r, &Name::new(g), universe, 4, 4).unwrap() {
            bbc::eval::IdempotencyVerdict::Pass { families_checked } => details.push(format!("{g}: {families_checked} families")),
            bbc::eval::IdempotencyVerdict::Counterexample(c) => return fail(format!("{g}: counterexample {c:?}")),
        }
    }
    let card = check_idempotent_exhaustive(&r, &Name::new("card"), &numerals, 4, 4).unwrap();
    ensure!(!card.passed(), "the non-idempotent control `card` passed");
    pass(format!("{}; control `card` rejected", details.join(", ")))
}

fn criterion_7() -> Outcome {
    let mut details = Vec::new();
    let mut failures = Vec::new();
    for n in 2..=3 {
        let p = gen_electoral(&ElectoralSpec { participants: n, rounds: 1 }).unwrap();
        for mode in [Mode::Exhaustive, Mode::Default] {
            let g = state_graph(&p, Limits::default(), mode).unwrap();
            ensure!(!g.truncated, "n={n}: infinite or truncated graph");
            let outcome = check_electoral(&g, n).unwrap();
            let tag = format!("n={n} {mode:?}");
            if outcome.maximal_computations_ok {
                details.push(format!("{tag} ok ({} states)", outcome.states));
            } else if mode == Mode::Exhaustive {
                let trace: Vec<String> = outcome.counterexample.unwrap_or_default().iter().map(|l| l.to_string()).collect();
                failures.push(format!("{tag}: disagreement after [{}]", trace.join("; ")));
            } else {
                failures.push(format!("{tag}: disagreement"));
            }
        }
    }
    if failures.is_empty() {
        pass(details.join(", "))
    } else {
        fail(format!("{}; passing: {}", failures.join(", "), details.join(", ")))
    }
}

fn criterion_8() -> Outcome {
    let (mut typed_ok, mut repaired) = (0, Vec::new());
    for seed in 0..1200u64 {
        let p = if seed % 2 == 0 { Gen::typed(seed).program() } else { Gen::new(seed).program() };
        let r = Registry::from_program(&p);
        let env = TypeEnv::for_program(&p);
        let net = p.network();
        let nf = normalize_with(net, &r);
        let variant = congruent_variant(net, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        ensure!(cong_equiv_with(net, &variant, &r), "seed {seed}: variant not congruent");
        let b = barbs(&nf, &p);
        let verdict = check_network(&env, net).is_ok();
        ensure!(barbs(&normalize_with(&variant, &r), &p) == b, "seed {seed}: barbs of the variant changed");
        ensure!(barbs(&normalize_with(&nf.denote(), &r), &p) == b, "seed {seed}: barbs of the normal form changed");
        ensure!(check_network(&env, &variant).is_ok() == verdict, "seed {seed}: type verdict of the variant changed");
        match (verdict, check_network(&env, &nf.denote()).is_ok()) {
            (true, false) => return fail(format!("seed {seed}: normal form of a well-typed network is ill-typed")),
            (false, true) => repaired.push(seed),
            _ => {}
        }
        typed_ok += verdict as usize;
    }
    let summary = format!(
        "1200 networks ({typed_ok} well-typed): barbs invariant under variants and normal forms, type verdict invariant under structural variants and preserved from well-typed networks to their normal forms"
    );
    if repaired.is_empty() {
        return pass(summary);
    }
    let shown: Vec<String> = repaired.iter().take(5).map(|s| s.to_string()).collect();
    fail(format!(
        "{summary}; but {} ill-typed networks have a well-typed normal form because resolving an ill-typed guard removes it (seeds {}, ...)",
        repaired.len(),
        shown.join(", ")
    ))
}

fn criterion_9() -> Outcome {
    let mut programs: Vec<Program> = (0..1200u64)
        .map(|seed| if seed % 2 == 0 { Gen::typed(seed).program() } else { Gen::new(seed).program() })
        .collect();
    programs.push(gen_hierarchical(&HierarchySpec::new(2, vec![2, 2])).unwrap());
    programs.push(gen_electoral(&ElectoralSpec { participants: 3, rounds: 2 }).unwrap());
    for (i, p) in programs.iter().enumerate() {
        let text = pretty_print(p);
        let q = match parse_program(&text) {
            Ok(q) => q,
            Err(e) => return fail(format!("program {i}: {e}")),
        };
        ensure!(alpha_canonical_program(&q) == alpha_canonical_program(p), "program {i} changed:\n{text}");
    }
    pass(format!("{} programs, zero failures", programs.len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome, Option<Duration>); 9] = [
        (1, "worked collection example", criterion_1, Some(Duration::from_secs(1))),
        (2, "normal forms", criterion_2, Some(Duration::from_secs(30))),
        (3, "bound enforcement", criterion_3, None),
        (4, "subject reduction", criterion_4, None),
        (5, "hierarchical vs flat aggregation", criterion_5, None),
        (6, "idempotent selection", criterion_6, None),
        (7, "electoral agreement", criterion_7, Some(Duration::from_secs(60))),
        (8, "congruence invariance of barbs and typing", criterion_8, None),
        (9, "parser round trip", criterion_9, None),
    ];
    let mut unexpected = Vec::new();
    for (id, title, run, budget) in criteria {
        let start = Instant::now();
        let mut outcome = run();
        let elapsed = start.elapsed();
        if let Some(budget) = budget.filter(|b| elapsed > *b) {
            outcome = fail(format!("took {elapsed:?}, budget {budget:?}; {}", outcome.detail));
        }
        let expected_fail = EXPECTED_FAILURES.contains(&id);
        let status = match (outcome.pass, expected_fail) {
            (true, _) => "PASS",
            (false, true) => "FAIL (expected, see design notes)",
            (false, false) => "FAIL",
        };
        println!("criterion {id} {status}: {title}: {} [{:.2}s]", outcome.detail, elapsed.as_secs_f64());
        if outcome.pass == expected_fail {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected results for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
