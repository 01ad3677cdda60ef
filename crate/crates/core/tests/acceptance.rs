//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! The expected values here come from oracles written against raw set
//! memberships and trace records, not from the library's own checkers.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cesim::check::Answer;
use cesim::harness::{self, Run};
use cesim::markers::{self, MarkerRun};
use cesim::osp2::{osp_route, RoutingInput};
use cesim::pairing::pair;
use cesim::pinball::{verify_lowness_restraint, Pinball};
use cesim::scenario::{Construction, Scenario};
use cesim::trace::{self, Action, RouteCase, Skeleton, TraceEvent};
use cesim::tree::{CodingBlocks, TreeRun, Variant};
use cesim::tree15;
use cesim::universe::{EState, Element, SetHandle, Stage, Universe};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PINBALL_CORPUS: u64 = 50;
const PINBALL_HORIZON: Stage = 500;
const TREE_CORPUS: u64 = 50;
const TREE_HORIZON: Stage = 160;
const MARKER_CORPUS: u64 = 50;
const MARKER_HORIZON: Stage = 120;

struct Outcome {
    ok: bool,
    detail: String,
    problems: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            ok: true,
            detail: String::new(),
            problems: Vec::new(),
        }
    }

    fn fail(&mut self, msg: impl Into<String>) {
        self.ok = false;
        if self.problems.len() < 5 {
            self.problems.push(msg.into());
        }
    }

    fn require(&mut self, cond: bool, msg: impl FnOnce() -> String) {
        if !cond {
            self.fail(msg());
        }
    }
}

struct PinCase {
    sc: Scenario,
    pb: Pinball,
    elapsed: Duration,
    suite_failures: Vec<String>,
}

fn pinball_corpus() -> Vec<PinCase> {
    (0..PINBALL_CORPUS)
        .map(|seed| {
            let sc =
                harness::generate(Construction::Pinball, seed, PINBALL_HORIZON).expect("generate");
            let t = Instant::now();
            let pb = Pinball::run(&sc).expect("pinball run");
            let suite = harness::run_invariant_suite(&Run::Pinball(Box::new(pb.clone())), &sc);
            let elapsed = t.elapsed();
            let suite_failures = suite
                .iter()
                .filter(|r| !r.passed())
                .map(|r| r.name.clone())
                .collect();
            PinCase {
                sc,
                pb,
                elapsed,
                suite_failures,
            }
        })
        .collect()
}

// ----- set-level oracles -----

fn entry(u: &Universe, h: SetHandle, x: Element) -> Option<Stage> {
    u.set(h).unwrap().entry(x)
}

fn member_at(u: &Universe, h: SetHandle, x: Element, s: Stage) -> bool {
    entry(u, h, x).is_some_and(|t| t <= s)
}

fn mask(u: &Universe, fam: &[SetHandle], x: Element, s: Stage) -> u64 {
    fam.iter()
        .enumerate()
        .filter(|(_, &h)| member_at(u, h, x, s))
        .map(|(i, _)| 1u64 << i)
        .sum()
}

fn state(
    u: &Universe,
    sigma: &[SetHandle],
    tau: &[SetHandle],
    e: u32,
    x: Element,
    s: Stage,
) -> EState {
    let n = e as usize + 1;
    EState {
        e,
        sigma: mask(u, &sigma[..n], x, s),
        tau: mask(u, &tau[..n], x, s),
    }
}

/// (state, entry stage) → count, for entrants after stage 0.
fn census(
    u: &Universe,
    target: SetHandle,
    sigma: &[SetHandle],
    tau: &[SetHandle],
    e: u32,
) -> BTreeMap<(EState, Stage), usize> {
    let mut out = BTreeMap::new();
    for (x, t) in u.set(target).unwrap().iter() {
        if t > 0 {
            *out.entry((state(u, sigma, tau, e, x, t - 1), t))
                .or_default() += 1;
        }
    }
    out
}

/// `U↘V` straight from the definition: some `s < h` with `x ∈ U_{s+1} − V_s`,
/// and `x` eventually in `V`.
fn before_then(u: &Universe, a: SetHandle, b: SetHandle, h: Stage) -> Vec<Element> {
    u.set(a)
        .unwrap()
        .iter()
        .map(|(x, _)| x)
        .filter(|&x| entry(u, b, x).is_some())
        .filter(|&x| (0..h).any(|s| member_at(u, a, x, s + 1) && !member_at(u, b, x, s)))
        .collect()
}

fn handles(pb: &Pinball, f: impl Fn(&Pinball, u32) -> SetHandle) -> Vec<SetHandle> {
    (0..pb.width()).map(|e| f(pb, e)).collect()
}

// ----- criteria -----

fn c1_gateway(corpus: &[PinCase]) -> Outcome {
    let mut o = Outcome::new();
    let mut entrants = 0;
    let mut worst = Duration::ZERO;
    for case in corpus {
        let pb = &case.pb;
        let u = pb.universe();
        worst = worst.max(case.elapsed);
        o.require(case.suite_failures.is_empty(), || {
            format!(
                "seed {:?}: suite fails {:?}",
                case.sc.seed, case.suite_failures
            )
        });
        o.require(case.elapsed < Duration::from_secs(10), || {
            format!("seed {:?} took {:?}", case.sc.seed, case.elapsed)
        });
        let (us, vh, uh, vs) = (
            handles(pb, Pinball::u),
            handles(pb, Pinball::v_hat),
            handles(pb, Pinball::u_hat),
            handles(pb, Pinball::v),
        );
        for e in 0..pb.width() {
            let left = census(u, pb.a(), &us, &vh, e);
            let right = census(u, pb.a_hat(), &uh, &vs, e);
            entrants += left.values().sum::<usize>();
            if left != right {
                let diff = left
                    .iter()
                    .find(|(k, v)| right.get(k) != Some(v))
                    .map(|(k, v)| format!("{} at stage {}: {v} vs {:?}", k.0, k.1, right.get(k)))
                    .or_else(|| {
                        right
                            .keys()
                            .find(|k| !left.contains_key(k))
                            .map(|k| format!("{} at {}", k.0, k.1))
                    });
                o.fail(format!(
                    "seed {:?} level {e}: {}",
                    case.sc.seed,
                    diff.unwrap_or_default()
                ));
            }
        }
    }
    o.require(entrants > 0, || "corpus produced no entrants".into());
    o.detail = format!("{} scenarios at horizon {PINBALL_HORIZON}, {entrants} entrant classifications, slowest {worst:.2?}", corpus.len());
    o
}

fn c2_pigeonhole(corpus: &[PinCase]) -> Outcome {
    let mut o = Outcome::new();
    let mut firings = 0;
    for case in corpus {
        let pb = &case.pb;
        let u = pb.universe();
        let (us, vh) = (handles(pb, Pinball::u), handles(pb, Pinball::v_hat));
        for ev in pb.events() {
            let Action::Dump {
                i,
                x0,
                k0,
                x1,
                k1,
                witnesses,
                ..
            } = &ev.action
            else {
                continue;
            };
            firings += 1;
            let seed = case.sc.seed;
            o.require(witnesses.len() as u32 == 4u32.pow(i + 1) + 1, || {
                format!(
                    "seed {seed:?} stage {}: {} witnesses at gate {i}",
                    ev.stage,
                    witnesses.len()
                )
            });
            let mut groups: BTreeMap<EState, Vec<(Element, u32)>> = BTreeMap::new();
            for w in witnesses {
                let st = state(u, &us, &vh, *i, w.x, ev.stage - 1);
                o.require(st == w.state, || {
                    format!("seed {seed:?}: recorded state of {} differs", w.x)
                });
                groups.entry(st).or_default().push((w.x, w.k));
            }
            o.require(groups.len() <= 4usize.pow(i + 1), || {
                format!("seed {seed:?}: more than 4^(i+1) states")
            });
            o.require(groups.values().any(|g| g.len() >= 2), || {
                format!("seed {seed:?}: no same-state pair")
            });
            let same = groups
                .values()
                .any(|g| g.contains(&(*x0, *k0)) && g.contains(&(*x1, *k1)));
            o.require(same, || {
                format!(
                    "seed {seed:?} stage {}: ({x0},{x1}) not in one state",
                    ev.stage
                )
            });
            o.require(k0 < k1, || {
                format!("seed {seed:?} stage {}: k0={k0} ≥ k1={k1}", ev.stage)
            });
        }
    }
    o.require(firings > 0, || "no case-4B firings in the corpus".into());
    o.detail = format!("{firings} case-4B firings checked");
    o
}

/// A pinball run in which a dump injures a live jump computation, so the
/// trace has every record kind the restraint audit reads.
fn injuring_scenario() -> Scenario {
    let mut text = String::from(
        "construction pinball\nhorizon 300\nlevels 1\nfunctional 9 1 400\nfunctional 0 150 3\n",
    );
    text.push_str("set 0 20@40 33@60 47@80\nset 1 21@45 50@90\n");
    Scenario::parse(&text).unwrap()
}

fn hand_mutations(events: &[TraceEvent]) -> Vec<(String, Vec<TraceEvent>)> {
    let mut out = Vec::new();
    let pos = |p: &dyn Fn(&Action) -> bool| events.iter().position(|e| p(&e.action));
    let mut push = |name: &str, at: Option<usize>, f: &dyn Fn(&mut Vec<TraceEvent>, usize)| {
        if let Some(at) = at {
            let mut ev = events.to_vec();
            f(&mut ev, at);
            if ev != events {
                out.push((name.to_string(), ev));
            }
        }
    };
    let appoint = pos(&|a| matches!(a, Action::Appoint { .. }));
    let dump = pos(&|a| matches!(a, Action::Dump { .. }));
    let diverge = pos(&|a| matches!(a, Action::Diverge { .. }));
    let converge = pos(&|a| matches!(a, Action::Converge { .. }));
    let reset = pos(&|a| matches!(a, Action::Reset { .. }));
    push("partner moved to zero", appoint, &|ev, at| {
        if let Action::Appoint {
            partner, restraint, ..
        } = &mut ev[at].action
        {
            *restraint = 5;
            *partner = 5;
        }
    });
    push("restraint understated", appoint, &|ev, at| {
        if let Action::Appoint { restraint, .. } = &mut ev[at].action {
            *restraint = restraint.wrapping_sub(1);
        }
    });
    push("dump swaps x0 and x1", dump, &|ev, at| {
        if let Action::Dump { x0, x1, .. } = &mut ev[at].action {
            std::mem::swap(x0, x1);
        }
    });
    push("Â-entrant set to the old partner", dump, &|ev, at| {
        if let Action::Dump {
            a_hat, old_partner, ..
        } = &mut ev[at].action
        {
            *a_hat = *old_partner;
        }
    });
    push("injury record removed", diverge, &|ev, at| {
        ev.remove(at);
    });
    push(
        "injury attributed to the wrong element",
        diverge,
        &|ev, at| {
            if let Action::Diverge { use_, by, .. } = &mut ev[at].action {
                *by = *use_ + 7;
            }
        },
    );
    push(
        "computation converges again while live",
        converge,
        &|ev, at| {
            let mut dup = ev[at].clone();
            dup.stage = ev.last().unwrap().stage;
            ev.push(dup);
        },
    );
    push("jump reset dropped", converge, &|ev, at| {
        let stage = ev[at].stage;
        ev.retain(|e| !(e.stage == stage && matches!(e.action, Action::Reset { .. })));
    });
    push("reset renumbered", reset, &|ev, at| {
        if let Action::Reset { n, .. } = &mut ev[at].action {
            *n = 0;
        }
    });
    push("init record removed", Some(0), &|ev, _| {
        ev.remove(0);
    });
    out
}

fn c3_restraint(corpus: &[PinCase]) -> Outcome {
    let mut o = Outcome::new();
    for case in corpus {
        let r = verify_lowness_restraint(case.pb.events());
        o.require(r.passed(), || {
            format!("seed {:?}: {:?}", case.sc.seed, r.first())
        });
    }
    let special = Pinball::run(&injuring_scenario()).unwrap();
    let clean = verify_lowness_restraint(special.events());
    o.require(clean.passed(), || {
        format!("injuring scenario: {:?}", clean.first())
    });
    o.require(
        special
            .events()
            .iter()
            .any(|e| matches!(e.action, Action::Diverge { .. })),
        || "injuring scenario never injures".into(),
    );
    let mut seeded: Vec<(String, Vec<TraceEvent>)> = hand_mutations(special.events());
    for case in corpus.iter().take(5) {
        seeded.extend(hand_mutations(case.pb.events()));
        seeded.extend(
            harness::pinball_mutations(case.pb.events())
                .into_iter()
                .map(|m| (m.name, m.events)),
        );
    }
    let missed: Vec<&String> = seeded
        .iter()
        .filter(|(_, ev)| verify_lowness_restraint(ev).passed())
        .map(|(n, _)| n)
        .collect();
    o.require(seeded.len() >= 20, || {
        format!("only {} mutations", seeded.len())
    });
    for m in &missed {
        o.fail(format!("undetected mutation: {m}"));
    }
    o.detail = format!(
        "{} clean traces, {}/{} seeded violations detected",
        corpus.len() + 1,
        seeded.len() - missed.len(),
        seeded.len()
    );
    o
}

fn c4_skeleton(corpus: &[PinCase]) -> Outcome {
    let mut o = Outcome::new();
    let (mut sets, mut required) = (0, 0);
    for case in corpus {
        let pb = &case.pb;
        let h = pb.stage();
        // Positions replayed from the trace: first stage each element reached gate g, and removal.
        let mut reached: BTreeMap<Element, BTreeMap<u32, Stage>> = BTreeMap::new();
        let mut removed: BTreeMap<Element, Stage> = BTreeMap::new();
        let mut u_rec: BTreeMap<u32, BTreeMap<Element, Stage>> = BTreeMap::new();
        for ev in pb.events() {
            match &ev.action {
                Action::Place { x } => {
                    reached.entry(*x).or_default().entry(0).or_insert(ev.stage);
                }
                Action::Move { x, gate, .. } => {
                    reached
                        .entry(*x)
                        .or_default()
                        .entry(*gate)
                        .or_insert(ev.stage);
                }
                Action::Dump { x0, .. } => {
                    removed.entry(*x0).or_insert(ev.stage);
                }
                Action::Skeleton {
                    family: Skeleton::U,
                    e,
                    x,
                } => {
                    u_rec.entry(*e).or_default().insert(*x, ev.stage);
                }
                _ => {}
            }
        }
        for (&e, script) in &case.sc.sets {
            if script.is_empty() {
                continue;
            }
            sets += 1;
            let seed = case.sc.seed;
            let u_e = u_rec.remove(&e).unwrap_or_default();
            for (&x, &tu) in &u_e {
                let ok = script.get(&x).is_some_and(|&tw| tw < tu);
                o.require(ok, || {
                    format!("seed {seed:?}: {x} ∈ U_{e} at {tu} without prior W_{e} entry")
                });
            }
            for (&x, &tw) in script {
                let gate_stage = reached
                    .get(&x)
                    .and_then(|m| m.range(e..).map(|(_, &t)| t).min());
                let left = removed.get(&x).copied();
                let passed = [gate_stage, left].into_iter().flatten().min();
                if let Some(p) = passed {
                    if tw.max(p) < h {
                        required += 1;
                        o.require(u_e.contains_key(&x), || {
                            format!("seed {seed:?}: {x} ∈ W_{e} passed G_{e} at {p} but ∉ U_{e}")
                        });
                    }
                }
            }
            let rep = pb.verify_skeleton(e).unwrap();
            o.require(rep.unclassified.is_empty(), || {
                format!("seed {seed:?}: unclassified {:?}", rep.unclassified)
            });
            let lib_u: BTreeSet<Element> = pb.universe().set(pb.u(e)).unwrap().members();
            o.require(lib_u == u_e.keys().copied().collect(), || {
                format!("seed {seed:?}: U_{e} differs from its trace")
            });
        }
    }
    o.require(required > 0, || "no element ever passed a gate".into());
    o.detail = format!(
        "{sets} scripted sets, {required} forced U-memberships, zero unclassified residuals"
    );
    o
}

fn c5_coding() -> Outcome {
    let mut o = Outcome::new();
    let mut runs = 0;
    for c in [Construction::Tree15, Construction::Osp2] {
        for seed in 0..TREE_CORPUS {
            let sc = harness::generate(c, seed, TREE_HORIZON).unwrap();
            match TreeRun::run(&sc) {
                Ok(run) => {
                    runs += 1;
                    let coded = run
                        .events()
                        .iter()
                        .filter(|e| matches!(e.action, Action::Code { .. }))
                        .count();
                    let due = sc.oracle.values().filter(|&&t| t < TREE_HORIZON).count();
                    o.require(coded == due, || {
                        format!(
                            "{} seed {seed}: {coded} codings for {due} entries",
                            c.name()
                        )
                    });
                }
                Err(e) => o.fail(format!("{} seed {seed}: {e}", c.name())),
            }
        }
    }
    let (t15, o2) = (
        CodingBlocks::new(Variant::Tree15),
        CodingBlocks::new(Variant::Osp2),
    );
    for k in 1..=1_000_000u128 {
        let tri = k * (k + 1) / 2;
        let tri1 = (k + 1) * (k + 2) / 2;
        if tri >= 2 * k * k || tri + tri1 >= 6 * k * k {
            o.fail(format!("inequality fails at k={k}"));
            break;
        }
        if k % 9973 == 1 {
            let k64 = k as u64;
            o.require(
                t15.size(k64) as u128 == 2 * k * k && o2.size(k64) as u128 == 6 * k * k,
                || format!("block sizes at k={k}"),
            );
            o.require(
                t15.prohibited_bound(k64) as u128 == tri
                    && o2.prohibited_bound(k64) as u128 == tri + tri1,
                || format!("prohibition bounds at k={k}"),
            );
        }
    }
    o.detail =
        format!("{runs} tree runs without starvation; both inequalities hold for 1 ≤ k ≤ 10^6");
    o
}

fn c6_reductions() -> Outcome {
    let mut o = Outcome::new();
    let (mut tree_settled, mut tree_yes, mut mk_settled, mut mk_yes) = (0, 0, 0, 0);
    for seed in 0..TREE_CORPUS {
        let sc = harness::generate(Construction::Tree15, seed, TREE_HORIZON).unwrap();
        let run = TreeRun::run(&sc).unwrap();
        let a = run.universe().set(run.a()).unwrap().members();
        for k in 0..40u64 {
            if let Some(b) = tree15::reduction_d_from_a(&run, k).settled() {
                tree_settled += 1;
                tree_yes += b as usize;
                let truth = sc.oracle.get(&k).is_some_and(|&t| t < TREE_HORIZON);
                o.require(b == truth, || {
                    format!("tree15 seed {seed}: {k} ∈ D answered {b}")
                });
            }
        }
        let mut xs: BTreeSet<Element> = (0..=TREE_HORIZON as Element).collect();
        xs.extend(&a);
        xs.extend(run.witnesses().keys());
        for x in xs {
            if let Some(b) = tree15::reduction_a_from_d(&run, x).settled() {
                tree_settled += 1;
                tree_yes += b as usize;
                o.require(b == a.contains(&x), || {
                    format!("tree15 seed {seed}: {x} ∈ A answered {b}")
                });
            }
        }
    }
    for seed in 0..MARKER_CORPUS {
        let sc = harness::generate(Construction::Markers, seed, MARKER_HORIZON).unwrap();
        let run = MarkerRun::run(&sc).unwrap();
        let a = run.universe().set(run.a()).unwrap().members();
        for y in 0..=MARKER_HORIZON as Element + 5 {
            if let Some(b) = markers::reduction_a_from_b(&run, y).settled() {
                mk_settled += 1;
                mk_yes += b as usize;
                o.require(b == a.contains(&y), || {
                    format!("markers seed {seed}: {y} ∈ A answered {b}")
                });
            }
        }
        for b in 0..=MARKER_HORIZON as Element {
            let ans = markers::reduction_b_from_a(&run, b);
            if let Some(v) = ans.settled() {
                mk_settled += 1;
                mk_yes += v as usize;
                let truth = sc.oracle.get(&b).is_some_and(|&t| t < MARKER_HORIZON);
                o.require(v == truth, || {
                    format!("markers seed {seed}: {b} ∈ B answered {v}")
                });
            }
            if ans == Answer::Undetermined
                && sc.oracle.get(&b).is_some_and(|&t| t + 1 < MARKER_HORIZON)
            {
                o.fail(format!(
                    "markers seed {seed}: {b} entered B early yet stays undetermined"
                ));
            }
        }
    }
    o.require(tree_yes > 0 && mk_yes > 0, || {
        "no positive settled answers".into()
    });
    o.detail = format!(
        "tree15 {TREE_CORPUS} scenarios, {tree_settled} settled ({tree_yes} yes); markers {MARKER_CORPUS} scenarios, {mk_settled} settled ({mk_yes} yes); all agree"
    );
    o
}

/// Case selection as a decision table, independent of the library.
fn route_by_hand(r: &RoutingInput) -> RouteCase {
    let budget_left = r.budget_used < r.i as u64 + 1;
    match (
        r.in_x_i || r.in_a || !budget_left,
        r.inactive_low,
        r.f_has_inactive,
        r.open_slot,
    ) {
        (false, _, _, _) => RouteCase::A,
        (true, true, false, _) => RouteCase::B,
        (true, false, false, true) => RouteCase::C,
        _ => RouteCase::D,
    }
}

fn c7_osp() -> Outcome {
    let mut o = Outcome::new();
    let (mut stages_checked, mut routed) = (0usize, 0usize);
    for seed in 0..TREE_CORPUS {
        let sc = harness::generate(Construction::Osp2, seed, TREE_HORIZON).unwrap();
        let run = TreeRun::run(&sc).unwrap();
        let h = run.stage();
        let mut f: BTreeMap<u32, BTreeMap<Element, Stage>> = BTreeMap::new();
        let mut g: BTreeMap<u32, BTreeMap<Element, Stage>> = BTreeMap::new();
        let mut a: BTreeMap<Element, Stage> = BTreeMap::new();
        let mut codes: BTreeMap<Element, (u64, Stage)> = BTreeMap::new();
        for ev in run.events() {
            match &ev.action {
                Action::Route { i, x, case } => {
                    routed += 1;
                    let side = if *case == RouteCase::D {
                        &mut g
                    } else {
                        &mut f
                    };
                    side.entry(*i).or_default().insert(*x, ev.stage);
                }
                Action::Permit { x, .. } | Action::Code { x, .. } => {
                    a.entry(*x).or_insert(ev.stage);
                }
                Action::Witness { node, e, x, .. } => {
                    codes.insert(*x, (pair(node.len() as u64, *e as u64), ev.stage));
                }
                _ => {}
            }
        }
        for i in 0..run.width() {
            let (fi, gi) = (
                f.remove(&i).unwrap_or_default(),
                g.remove(&i).unwrap_or_default(),
            );
            for x in fi.keys() {
                o.require(!gi.contains_key(x), || {
                    format!("seed {seed}: {x} ∈ W_f({i}) ∩ W_g({i})")
                });
            }
            for s in 0..=h {
                stages_checked += 1;
                let free = fi
                    .iter()
                    .filter(|&(_, &t)| t <= s)
                    .filter(|&(x, _)| !codes.get(x).is_some_and(|&(c, t)| c < i as u64 && t <= s))
                    .filter(|&(x, _)| !a.get(x).is_some_and(|&t| t <= s))
                    .count();
                o.require(free <= i as usize + 1, || {
                    format!("seed {seed} stage {s}: budget {free} > {}", i + 1)
                });
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x05b2);
    let mut seen = BTreeSet::new();
    for n in 0..10_000 {
        let r = RoutingInput {
            i: rng.gen_range(0..6),
            in_x_i: rng.gen(),
            in_a: rng.gen(),
            budget_used: rng.gen_range(0..8),
            inactive_low: rng.gen(),
            f_has_inactive: rng.gen(),
            open_slot: rng.gen(),
        };
        let (lib, ours) = (osp_route(&r), route_by_hand(&r));
        seen.insert(lib);
        o.require(lib == ours, || {
            format!("input {n} {r:?}: library {lib:?}, reference {ours:?}")
        });
    }
    o.require(seen.len() == 4, || {
        format!("random inputs reached only {seen:?}")
    });
    o.require(routed > 0, || "no routing in the corpus".into());
    o.detail = format!("{TREE_CORPUS} osp2 runs, {routed} routings, {stages_checked} (i, stage) budget checks; 10^4 differential inputs agree");
    o
}

/// Oracle for the scripted `Φ_i^B(x)`: the computations live at the horizon,
/// by replaying stamps directly. A script at stamp `t` lands at oracle stage
/// `t + 1` unless a computation for the same input is still live there; a
/// `B` stamp `t'` kills computations with use `≥ b` that landed before `t' + 1`.
fn permanent_by_hand(sc: &Scenario) -> BTreeMap<u32, BTreeSet<u64>> {
    let h = sc.horizon;
    let kill = |landed: Stage, use_: u64| {
        sc.oracle
            .iter()
            .filter(|&(&b, &t)| b <= use_ && t + 1 > landed && t < h)
            .map(|(_, &t)| t + 1)
            .min()
    };
    let mut scripts = sc.functionals.clone();
    scripts.sort_by_key(|f| f.stage);
    let mut live: BTreeMap<(u32, u64), (Stage, Option<Stage>)> = BTreeMap::new();
    for f in scripts {
        let q = f.stage + 1;
        if q > h {
            continue;
        }
        let alive = live
            .get(&(f.index, f.arg))
            .is_some_and(|&(_, dies)| dies.is_none_or(|d| d > q));
        if !alive {
            live.insert((f.index, f.arg), (q, kill(q, f.use_)));
        }
    }
    let mut out: BTreeMap<u32, BTreeSet<u64>> = BTreeMap::new();
    for ((i, x), (_, dies)) in live {
        if dies.is_none() {
            out.entry(i).or_default().insert(x);
        }
    }
    out
}

/// Scripted marker scenarios with a designed number of permanent
/// convergences for index 0: `perm` stay, `hurt` are injured, and `back`
/// of the injured converge again afterwards with a safe use.
fn designed_marker(perm: u64, hurt: u64, back: u64) -> (Scenario, usize) {
    let mut text = String::from("construction markers\nhorizon 80\n");
    let mut stage = 1;
    for x in 0..perm {
        text.push_str(&format!("functional 0 {x} {stage} {x}\n"));
        stage += 1;
    }
    for x in perm..perm + hurt {
        text.push_str(&format!("functional 0 {x} {stage} {}\n", 40 + x));
        stage += 1;
    }
    // A distractor on another index, injured as well.
    text.push_str(&format!("functional 1 0 {stage} 60\n"));
    stage += 1;
    if hurt > 0 {
        text.push_str(&format!("oracle {}@{}\n", 40 + perm, stage));
        stage += 2;
    }
    for x in perm..perm + back.min(hurt) {
        text.push_str(&format!("functional 0 {x} {stage} {}\n", x % 30));
        stage += 1;
    }
    (
        Scenario::parse(&text).unwrap(),
        (perm + back.min(hurt)) as usize,
    )
}

fn check_correspondence(o: &mut Outcome, sc: &Scenario, label: &str) -> usize {
    let run = MarkerRun::run(sc).unwrap();
    let want = permanent_by_hand(sc);
    let a = run.universe().set(run.a()).unwrap().members();
    // From the trace alone: marker stays, and which computations were injured after placement.
    let mut stays: Vec<(u32, u64, Element, Stage)> = Vec::new();
    let mut injured_after: Vec<(u32, u64, Stage)> = Vec::new();
    for ev in run.events() {
        match ev.action {
            Action::PlaceM { i, x, y, .. } => stays.push((i, x, y, ev.stage)),
            Action::OracleDiverge { i, x, .. } => injured_after.push((i, x, ev.stage)),
            _ => {}
        }
    }
    let indices: BTreeSet<u32> = sc.functionals.iter().map(|f| f.index).collect();
    let mut total = 0;
    for i in indices {
        let perm = want.get(&i).cloned().unwrap_or_default();
        let wfi: BTreeSet<Element> = stays.iter().filter(|s| s.0 == i).map(|s| s.2).collect();
        let attributable = stays
            .iter()
            .filter(|&&(i2, x, y, _)| i2 == i && perm.contains(&x) && !a.contains(&y))
            .count();
        let free = wfi.iter().filter(|y| !a.contains(y)).count();
        o.require(attributable == perm.len() && free == perm.len(), || {
            format!(
                "{label} i={i}: c={} attributable={attributable} |wfi∩Ā|={free}",
                perm.len()
            )
        });
        for &(i2, x, y, placed) in &stays {
            let hurt = injured_after
                .iter()
                .any(|&(i3, x3, t)| i3 == i2 && x3 == x && t > placed);
            if i2 == i && hurt {
                o.require(a.contains(&y), || {
                    format!("{label}: injured Φ_{i}({x}) left {y} outside A")
                });
            }
        }
        let lib = markers::inf_correspondence(&run, i);
        o.require(lib.permanent == perm.len(), || {
            format!("{label} i={i}: library counts {}", lib.permanent)
        });
        total += perm.len();
    }
    total
}

fn c8_markers() -> Outcome {
    let mut o = Outcome::new();
    let mut scenarios = 0;
    let mut permanent = 0;
    for perm in 0..4 {
        for hurt in 0..4 {
            for back in 0..=hurt.min(2) {
                let (sc, c) = designed_marker(perm, hurt, back);
                let label = format!("designed({perm},{hurt},{back})");
                let got = permanent_by_hand(&sc).get(&0).map_or(0, BTreeSet::len);
                o.require(got == c, || {
                    format!("{label}: oracle finds {got}, design says {c}")
                });
                permanent += check_correspondence(&mut o, &sc, &label);
                scenarios += 1;
            }
        }
    }
    for seed in 0..30 {
        let sc = harness::generate(Construction::Markers, seed, MARKER_HORIZON).unwrap();
        permanent += check_correspondence(&mut o, &sc, &format!("seed {seed}"));
        scenarios += 1;
    }
    o.require(scenarios >= 30, || format!("only {scenarios} scenarios"));
    o.detail = format!("{scenarios} scenarios, {permanent} permanent convergences matched exactly");
    o
}

fn c9_determinism() -> Outcome {
    let mut o = Outcome::new();
    let mut pairs = 0;
    let plan = [
        (Construction::Pinball, 300),
        (Construction::Tree15, 120),
        (Construction::Osp2, 120),
        (Construction::Markers, 100),
    ];
    for (c, h) in plan {
        for seed in 0..6 {
            let sc = harness::generate(c, seed, h).unwrap();
            let label = format!("{} seed {seed}", c.name());
            let text = harness::run(&sc).unwrap().trace_text();
            o.require(text == harness::run(&sc).unwrap().trace_text(), || {
                format!("{label}: rerun differs")
            });
            let reread = Scenario::parse(&sc.render()).unwrap();
            o.require(text == harness::run(&reread).unwrap().trace_text(), || {
                format!("{label}: file round-trip differs")
            });
            let parsed = trace::parse_text(&text).unwrap();
            o.require(trace::to_text(&parsed) == text, || {
                format!("{label}: trace text does not round-trip")
            });
            for short in [0, 1, 2, h / 7, h / 3, h / 2, h - 1] {
                pairs += 1;
                let t = harness::run(&sc.truncated(short)).unwrap().trace_text();
                o.require(text.starts_with(&t), || {
                    format!("{label}: horizon {short} is not a prefix of {h}")
                });
                match trace::diff_replays(&text, &t) {
                    trace::DiffReport::Prefix {
                        longer_is_left: true,
                        next_stage,
                        ..
                    } => o.require(next_stage.is_some_and(|s| s > short), || {
                        format!("{label}: prefix ends early")
                    }),
                    trace::DiffReport::Identical => {}
                    other => o.fail(format!("{label}: diff says {other:?}")),
                }
            }
        }
    }
    o.detail = format!("24 scenarios byte-identical on rerun and round-trip; {pairs} horizon pairs prefix-consistent");
    o
}

fn c10_extension(corpus: &[PinCase]) -> Outcome {
    let mut o = Outcome::new();
    let mut checked = 0;
    for case in corpus {
        let pb = &case.pb;
        let u = pb.universe();
        for n in 0..pb.width() {
            checked += 2;
            let hat = before_then(u, pb.a_hat(), pb.u_hat(n), pb.stage());
            let plain = before_then(u, pb.a(), pb.v_hat(n), pb.stage());
            o.require(hat.is_empty(), || {
                format!("seed {:?}: Â↘Û_{n} ∋ {hat:?}", case.sc.seed)
            });
            o.require(plain.is_empty(), || {
                format!("seed {:?}: A↘V̂_{n} ∋ {plain:?}", case.sc.seed)
            });
        }
        let lib = pb.extension_hypotheses().unwrap();
        o.require(lib.passed(), || {
            format!(
                "seed {:?}: library reports {:?}",
                case.sc.seed,
                lib.violations.first()
            )
        });
    }
    o.detail = format!("{checked} (run, n, side) hypotheses checked");
    o
}

fn main() -> ExitCode {
    let t = Instant::now();
    let corpus = pinball_corpus();
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("exact gateway matching", Box::new(|| c1_gateway(&corpus))),
        ("pigeonhole mechanism", Box::new(|| c2_pigeonhole(&corpus))),
        ("restraint audit", Box::new(|| c3_restraint(&corpus))),
        ("skeleton surrogate", Box::new(|| c4_skeleton(&corpus))),
        ("coding feasibility", Box::new(c5_coding)),
        ("reduction agreement", Box::new(c6_reductions)),
        ("outer splitting partition", Box::new(c7_osp)),
        ("marker correspondence", Box::new(c8_markers)),
        ("determinism and prefix property", Box::new(c9_determinism)),
        ("extension hypotheses", Box::new(|| c10_extension(&corpus))),
    ];
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        let tag = if o.ok { "PASS" } else { "FAIL" };
        println!("[{tag}] {:>2}. {name}: {}", n + 1, o.detail);
        for p in &o.problems {
            println!("        {p}");
        }
        failed += !o.ok as usize;
    }
    println!(
        "{} of {} criteria passed in {:.1?}",
        criteria.len() - failed,
        criteria.len(),
        t.elapsed()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
