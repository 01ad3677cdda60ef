//! Semilow₂ with the outer splitting property but not semilow₁.₅.
//!
//! The construction itself lives in [`crate::tree`]; this module holds the
//! splitting invariants and the semilow₂ certificate.

use std::collections::{BTreeMap, BTreeSet};

use crate::check::CheckResult;
use crate::error::Result;
use crate::node::Node;
use crate::scenario::{Scenario, Verdict};
use crate::trace::{Action, RouteCase, TraceEvent};
use crate::tree::{Status, TreeRun};
use crate::universe::{Element, Stage};

pub use crate::tree::{osp_route, RoutingInput};

pub fn run(sc: &Scenario) -> Result<TreeRun> {
    TreeRun::run(sc)
}

/// Trace-only routing checks for index `i`: every element routed once,
/// and case (b) used at most once.
pub fn audit_routes(events: &[TraceEvent], i: u32) -> CheckResult {
    let mut r = CheckResult::new(format!("osp2/routes[{i}]"));
    let mut seen: BTreeSet<Element> = BTreeSet::new();
    let mut b_count = 0;
    for ev in events {
        let Action::Route { i: i2, x, case } = &ev.action else {
            continue;
        };
        if *i2 != i {
            continue;
        }
        if !seen.insert(*x) {
            r.fail(ev.stage, format!("{x} routed twice for W_{i}"));
        }
        if *case == RouteCase::B {
            b_count += 1;
            if b_count > 1 {
                r.fail(ev.stage, format!("case (b) acted again for W_{i} with {x}"));
            }
        }
    }
    r
}

/// The splitting laws for `W_i`, checked at every stage.
pub fn osp_invariants(run: &TreeRun, i: u32) -> CheckResult {
    let mut r = audit_routes(run.events(), i);
    r.name = format!("osp2/split[{i}]");
    let (Some(f), Some(g)) = (run.w_f(i), run.w_g(i)) else {
        return r;
    };
    let u = run.universe();
    let (f, g, w) = (
        u.set(f).expect("own"),
        u.set(g).expect("own"),
        u.set(run.w(i)).expect("own"),
    );
    for (x, t) in f.iter().chain(g.iter()) {
        if !w.contains_at(x, t) {
            r.fail(t, format!("{x} routed for W_{i} before it entered W_{i}"));
        }
    }
    for (x, t) in f.iter() {
        if let Some(t2) = g.entry(x) {
            r.fail(t.max(t2), format!("{x} is in both W_f({i}) and W_g({i})"));
        }
    }
    for (x, t) in w.iter() {
        if t < run.stage() && !f.contains(x) && !g.contains(x) {
            r.fail(t + 1, format!("{x} ∈ W_{i} was never routed"));
        }
    }
    let in_x_at = |x: Element, s: Stage| {
        run.witnesses()
            .get(&x)
            .is_some_and(|w| w.code() < i as u64 && w.appointed <= s)
    };
    // Per slot incarnation, the (c)-routed members still outside A.
    let mut c_routed: BTreeMap<u32, Vec<Element>> = BTreeMap::new();
    if let Some(routes) = run.routes(i) {
        for (&x, &(case, _)) in routes {
            if case == RouteCase::C {
                if let Some(wi) = run.witnesses().get(&x) {
                    c_routed.entry(wi.handle.index).or_default().push(x);
                }
            }
        }
    }
    for s in 0..=run.stage() {
        let used = f
            .members_at(s)
            .filter(|&x| !in_x_at(x, s) && !run.in_a_at(x, s))
            .count();
        if used > i as usize + 1 {
            r.fail(
                s,
                format!("|W_f({i}) − (X_{i} ∪ A)| = {used} exceeds {}", i + 1),
            );
        }
        for (h, xs) in &c_routed {
            let live = xs
                .iter()
                .filter(|&&x| f.contains_at(x, s) && !run.in_a_at(x, s))
                .count();
            if live > 1 {
                r.fail(
                    s,
                    format!("{live} case-(c) elements of one S (handle {h}) outside A"),
                );
            }
        }
    }
    r
}

/// Where a node sits relative to the declared true path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    OnPath,
    Right,
    /// Extends the declared path; the verdict says nothing about it.
    Beyond,
}

pub fn side_of(node: &Node, path: &Node) -> Side {
    if node.is_prefix_of(path) {
        Side::OnPath
    } else if node.left_of(path) {
        Side::Left
    } else if path.left_of(node) {
        Side::Right
    } else {
        Side::Beyond
    }
}

/// Witnesses of `(α, e)` still outside `A` at some reset stage of that slot.
fn reset_survivors(run: &TreeRun, node: Node, e: u32) -> BTreeSet<Element> {
    let Some(slot) = run.slot(node, e) else {
        return BTreeSet::new();
    };
    let mut out = BTreeSet::new();
    for &t in &slot.resets {
        for (&x, w) in run.witnesses() {
            if w.node == node && w.e == e && w.appointed <= t && !w.in_a_at(t) {
                out.insert(x);
            }
        }
    }
    out
}

/// The finite-horizon `W_{m(j)}`: the part of `Y^j ∩ Ā` the verdict says
/// to collect. Returns the set and notes on nodes it could not place.
pub fn assemble_wm(run: &TreeRun, verdict: &Verdict, j: u32) -> (BTreeSet<Element>, Vec<String>) {
    let mut wm = BTreeSet::new();
    let mut notes = Vec::new();
    for &node in run.nodes() {
        if node.len() as u32 > j {
            continue;
        }
        match side_of(&node, &verdict.path) {
            Side::Left => {}
            Side::Beyond => notes.push(format!("{node} extends the declared path; skipped")),
            Side::Right => {
                for &e in run.indices() {
                    wm.extend(reset_survivors(run, node, e));
                }
            }
            Side::OnPath => {
                let Some(&(d, infinite)) = verdict.nodes.get(&node) else {
                    notes.push(format!("no designation for {node}; skipped"));
                    continue;
                };
                for &e in run.indices().iter().filter(|&&e| e > d) {
                    wm.extend(reset_survivors(run, node, e));
                }
                if infinite {
                    wm.extend(
                        run.witnesses()
                            .iter()
                            .filter(|(_, w)| {
                                w.node == node && w.e == d && w.status != Status::Enumerated
                            })
                            .map(|(&x, _)| x),
                    );
                }
            }
        }
    }
    (wm, notes)
}

#[derive(Debug, Clone)]
pub struct Semilow2Report {
    pub j: u32,
    pub w_cap_abar: usize,
    pub w_cap_abar_y: usize,
    pub expansionary: usize,
    pub wm: BTreeSet<Element>,
    pub check: CheckResult,
}

/// Checks a candidate `W_{m(j)}` against the assembly rule: nothing required
/// is missing, nothing is outside `Y^j ∩ Ā`.
pub fn audit_wm(run: &TreeRun, verdict: &Verdict, j: u32, wm: &BTreeSet<Element>) -> CheckResult {
    let mut r = CheckResult::new(format!("osp2/wm[{j}]"));
    let (want, _) = assemble_wm(run, verdict, j);
    for x in want.difference(wm) {
        r.fail(
            run.stage(),
            format!("{x} belongs in W_m({j}) but is missing"),
        );
    }
    for &x in wm {
        match run.witnesses().get(&x) {
            Some(w) if w.h() <= j => {}
            _ => r.fail(run.stage(), format!("{x} ∈ W_m({j}) is not in Y^{j}")),
        }
        if run.in_a(x) {
            r.fail(run.stage(), format!("{x} ∈ W_m({j}) is in A"));
        }
    }
    r
}

/// `None` when the scenario declares no verdict.
pub fn semilow2_certificate(
    run: &TreeRun,
    verdict: Option<&Verdict>,
    j: u32,
) -> Option<Semilow2Report> {
    let verdict = verdict?;
    let (wm, notes) = assemble_wm(run, verdict, j);
    let mut check = audit_wm(run, verdict, j, &wm);
    check.name = format!("osp2/semilow2[{j}]");
    for n in notes {
        check.note(n);
    }
    let members: BTreeSet<Element> = if j < run.width() {
        run.universe().set(run.w(j)).expect("own").members()
    } else {
        BTreeSet::new()
    };
    let abar: Vec<Element> = members.iter().copied().filter(|&x| !run.in_a(x)).collect();
    let y = |x: &Element| run.witnesses().get(x).is_some_and(|w| w.h() <= j);
    let w_cap_abar_y = abar.iter().filter(|x| y(x)).count();
    let expansionary = run.expansionary_stages(j).len();
    check.note(format!(
        "|W_{j}∩Ā|={} |W_{j}∩Ā∩Y^{j}|={w_cap_abar_y} expansionary={expansionary} |W_m|={} |W_{j}∩W_m|={}",
        abar.len(),
        wm.len(),
        members.intersection(&wm).count()
    ));
    Some(Semilow2Report {
        j,
        w_cap_abar: abar.len(),
        w_cap_abar_y,
        expansionary,
        wm,
        check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree15::audit_tree;

    fn scenario(body: &str) -> Scenario {
        Scenario::parse(&format!("construction osp2\n{body}")).unwrap()
    }

    #[test]
    fn witness_use_is_the_functional_use() {
        let run = run(&scenario("horizon 12\nlevels 1\nfunctional 0 2 5\n")).unwrap();
        let uses: Vec<u64> = run
            .events()
            .iter()
            .filter_map(|e| {
                if let Action::Witness { use_, .. } = e.action {
                    Some(use_)
                } else {
                    None
                }
            })
            .collect();
        assert!(!uses.is_empty());
        assert!(uses.iter().all(|&u| u == 5));
    }

    #[test]
    fn fresh_elements_fill_the_budget_then_go_to_g() {
        let run = run(&scenario(
            "horizon 6\nlevels 1\nset 1 10@1 11@1 12@1 13@2\n",
        ))
        .unwrap();
        let routes = run.routes(1).unwrap();
        assert_eq!(routes[&10].0, RouteCase::A);
        assert_eq!(routes[&11].0, RouteCase::A);
        assert_eq!(routes[&12].0, RouteCase::D);
        assert_eq!(routes[&13].0, RouteCase::D);
        assert!(osp_invariants(&run, 1).passed());
    }

    #[test]
    fn k_zero_is_feasible() {
        let run = run(&scenario("horizon 6\nlevels 1\nset 0 0@1\noracle 0@2\n")).unwrap();
        assert!(run.coded(0).is_some());
        for r in audit_tree(&run) {
            assert!(r.passed(), "{r:?}");
        }
    }
}
