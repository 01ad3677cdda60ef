//! Semilow₁.₅ but not semilow: the first tree construction, its reductions
//! and certificate, and the trace audits shared with `osp2`.

use std::collections::{BTreeMap, BTreeSet};

use crate::check::{Answer, CheckResult};
use crate::error::Result;
use crate::node::Node;
use crate::oracle::UseRule;
use crate::pairing::{pair, row_of};
use crate::scenario::Scenario;
use crate::trace::{Action, AllowVia, SlotResetCause, StepId, TraceEvent};
use crate::tree::{Status, TreeRun, Variant};
use crate::universe::{Element, Stage};

pub use crate::tree::{build_coding_blocks, CodingBlocks};

pub fn run(sc: &Scenario) -> Result<TreeRun> {
    TreeRun::run(sc)
}

/// `k ∈ D` iff some element of `F_k` is in `A`.
pub fn reduction_d_from_a(run: &TreeRun, k: u64) -> Answer {
    if run.oracle().entry(k).is_some_and(|q| q > run.stage()) {
        return Answer::Undetermined;
    }
    Answer::from_bool(run.blocks().elements(k).any(|x| run.in_a(x)))
}

/// Decides `x ∈ A` from `D` and a finite run of the construction.
pub fn reduction_a_from_d(run: &TreeRun, x: Element) -> Answer {
    let oracle = run.oracle();
    if row_of(x) == 0 {
        let Some(k) = run.blocks().block_of(x) else {
            return Answer::No;
        };
        return match oracle.entry(k) {
            None => Answer::No,
            Some(q) if q > run.stage() => Answer::Undetermined,
            Some(q) => Answer::from_bool(run.in_a_at(x, q)),
        };
    }
    // A witness is appointed at some stage s + 1 with x > s, so by stage x.
    let Some(w) = run.witnesses().get(&x).filter(|w| w.appointed as u64 <= x) else {
        return if (run.stage() as u64) < x {
            Answer::Undetermined
        } else {
            Answer::No
        };
    };
    let changes: Vec<Stage> = oracle
        .members()
        .filter(|&(d, _)| UseRule::Below.injures(d, w.use_))
        .map(|(_, q)| q)
        .collect();
    if changes.iter().any(|&q| q > run.stage()) {
        return Answer::Undetermined;
    }
    let settled = changes.into_iter().max().unwrap_or(0);
    Answer::from_bool(run.in_a_at(x, settled))
}

/// The witness ledgers `Y_h` and `Z_h`, keyed by element with `h`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledgers {
    /// Witnesses with their level and appointment stage.
    pub y: BTreeMap<Element, (u32, Stage)>,
    /// Witnesses that became inactive without entering `A`, with the stage.
    pub z: BTreeMap<Element, (u32, Stage)>,
}

impl Ledgers {
    pub fn from_run(run: &TreeRun) -> Self {
        let mut l = Ledgers::default();
        for (&x, w) in run.witnesses() {
            l.y.insert(x, (w.h(), w.appointed));
            if w.status == Status::Inactive {
                l.z.insert(x, (w.h(), w.changed));
            }
        }
        l
    }

    pub fn z_upto(&self, j: u32) -> BTreeSet<Element> {
        self.z
            .iter()
            .filter(|(_, (h, _))| *h <= j)
            .map(|(&x, _)| x)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Semilow15Report {
    pub j: u32,
    /// `|W_j ∩ Ā|` at the horizon.
    pub w_cap_abar: usize,
    pub expansionary: usize,
    /// `|W_j ∩ Z^j|`.
    pub w_cap_z: usize,
    pub check: CheckResult,
}

/// Counters behind "W_j ∩ Ā is infinite iff there are infinitely many
/// expansionary stages or W_j ∩ Z^j is infinite", with the finite facts that
/// make the equivalence go.
pub fn semilow15_certificate(run: &TreeRun, ledgers: &Ledgers, j: u32) -> Semilow15Report {
    let mut check = CheckResult::new(format!("tree/semilow15[{j}]"));
    let h = run.stage();
    let members: BTreeSet<Element> = if j < run.width() {
        run.universe().set(run.w(j)).expect("own handle").members()
    } else {
        BTreeSet::new()
    };
    let z = ledgers.z_upto(j);
    for &x in &z {
        if run.in_a(x) {
            check.fail(ledgers.z[&x].1, format!("{x} ∈ Z^{j} but it is in A"));
        }
        if !ledgers.y.contains_key(&x) {
            check.fail(ledgers.z[&x].1, format!("{x} ∈ Z^{j} was never a witness"));
        }
    }
    let expansions = run.expansionary_stages(j);
    for &s in expansions {
        for x in run.free_at(j, s) {
            if !run.in_a(x) && !members.contains(&x) {
                check.fail(
                    s,
                    format!("{x} counted at an expansionary stage is not in W_{j}"),
                );
            }
        }
    }
    let w_cap_abar = members.iter().filter(|&&x| !run.in_a(x)).count();
    let w_cap_z = members.iter().filter(|x| z.contains(x)).count();
    check.note(format!(
        "|W_{j}∩Ā|={w_cap_abar} expansionary={} |W_{j}∩Z^{j}|={w_cap_z} at {h}",
        expansions.len()
    ));
    Semilow15Report {
        j,
        w_cap_abar,
        expansionary: expansions.len(),
        w_cap_z,
        check,
    }
}

/// Trace audits for either tree construction.
pub fn audit_tree(run: &TreeRun) -> Vec<CheckResult> {
    audit_tree_trace(run, run.events())
}

/// As [`audit_tree`], reading `events` in place of the run's own trace.
pub fn audit_tree_trace(run: &TreeRun, events: &[TraceEvent]) -> Vec<CheckResult> {
    vec![
        audit_freshness(events),
        audit_permitting(run, events),
        audit_resets(events),
        audit_one_shot(events),
        audit_ledgers(run, events),
        audit_coding(run, events),
    ]
}

/// New witnesses exceed the stage, come from their row and increase.
pub fn audit_freshness(events: &[TraceEvent]) -> CheckResult {
    let mut r = CheckResult::new("tree/freshness");
    let mut last: Option<Element> = None;
    for ev in events {
        let Action::Witness { node, e, x, .. } = &ev.action else {
            continue;
        };
        let t = ev.stage;
        if *x < t as Element {
            r.fail(t, format!("witness {x} is not above stage {}", t - 1));
        }
        if row_of(*x) != pair(node.heap_number(), *e as u64) {
            r.fail(t, format!("witness {x} is outside row ⟨{node},{e}⟩"));
        }
        if last.is_some_and(|l| *x <= l) {
            r.fail(t, format!("witness {x} is not fresh"));
        }
        last = Some(*x);
    }
    r
}

/// Per stage: the `D` changes, the permitted elements, and a snapshot of active uses.
type StageEntrants = (Vec<Element>, BTreeSet<Element>, BTreeMap<Element, u64>);

/// Replays active witnesses and checks that `A` gets exactly the permitted ones.
pub fn audit_permitting(run: &TreeRun, events: &[TraceEvent]) -> CheckResult {
    let mut r = CheckResult::new("tree/permitting");
    let mut active: BTreeMap<Element, u64> = BTreeMap::new();
    let mut per_slot: BTreeMap<(Node, u32), usize> = BTreeMap::new();
    let mut slot_of: BTreeMap<Element, (Node, u32)> = BTreeMap::new();
    let mut by_stage: BTreeMap<Stage, StageEntrants> = BTreeMap::new();
    let tree15 = run.variant() == Variant::Tree15;
    for ev in events {
        let t = ev.stage;
        match &ev.action {
            Action::Witness {
                node, e, x, use_, ..
            } => {
                let c = per_slot.entry((*node, *e)).or_default();
                *c += 1;
                if tree15 && *c > 1 {
                    r.fail(
                        t,
                        format!("P_{{{},{e}}}^{node} holds two active witnesses", node.len()),
                    );
                }
                active.insert(*x, *use_);
                slot_of.insert(*x, (*node, *e));
            }
            Action::SlotReset { deactivated, .. } => {
                for x in deactivated {
                    if active.remove(x).is_none() {
                        r.fail(t, format!("reset deactivated {x}, which was not active"));
                    }
                    if let Some(k) = slot_of.get(x) {
                        *per_slot.entry(*k).or_default() -= 1;
                    }
                }
            }
            Action::Oracle { d } => {
                let entry = by_stage
                    .entry(t)
                    .or_insert_with(|| (Vec::new(), BTreeSet::new(), active.clone()));
                entry.0.push(*d);
            }
            Action::Permit { x, use_, d, .. } => {
                if !run.oracle().changes_at(t).contains(d) {
                    r.fail(
                        t,
                        format!("{x} permitted by {d}, which did not enter D at this stage"),
                    );
                }
                if d >= use_ {
                    r.fail(
                        t,
                        format!("{x} permitted by {d} at or above its use {use_}"),
                    );
                }
                if active.remove(x).is_none() {
                    r.fail(t, format!("{x} entered A without being an active witness"));
                }
                if let Some(k) = slot_of.get(x) {
                    *per_slot.entry(*k).or_default() -= 1;
                }
                if let Some(entry) = by_stage.get_mut(&t) {
                    entry.1.insert(*x);
                }
            }
            _ => {}
        }
    }
    for (t, (ds, got, snapshot)) in by_stage {
        let least = ds.iter().copied().min().unwrap_or(u64::MAX);
        for (x, u) in snapshot {
            if least < u && !got.contains(&x) {
                r.fail(
                    t,
                    format!("{x} (use {u}) was permitted by {least} but stayed out of A"),
                );
            }
        }
    }
    let a = run.universe().set(run.a()).expect("own handle");
    let mut sources: BTreeSet<(Element, Stage)> = BTreeSet::new();
    for ev in events {
        match &ev.action {
            Action::Permit { x, .. } | Action::Code { x, .. } => {
                sources.insert((*x, ev.stage));
            }
            _ => {}
        }
    }
    for (x, t) in a.iter() {
        if !sources.contains(&(x, t)) {
            r.fail(t, format!("{x} entered A with no recorded reason"));
        }
    }
    r
}

/// Every reset bumps `n` by one and carries a cause matching its step.
pub fn audit_resets(events: &[TraceEvent]) -> CheckResult {
    let mut r = CheckResult::new("tree/resets");
    let mut n: BTreeMap<(Node, u32), u32> = BTreeMap::new();
    for ev in events {
        let Action::SlotReset {
            node,
            e,
            n: m,
            cause,
            ..
        } = &ev.action
        else {
            continue;
        };
        let before = n.insert((*node, *e), *m).unwrap_or(0);
        if *m != before + 1 {
            r.fail(
                ev.stage,
                format!(
                    "P_{{{},{e}}}^{node}: n went from {before} to {m}",
                    node.len()
                ),
            );
        }
        let ok = matches!(
            (cause, ev.step),
            (SlotResetCause::Expansion(_), StepId::T1 | StepId::O1)
                | (SlotResetCause::Ell(_), StepId::T4 | StepId::O4)
                | (SlotResetCause::Split(_), StepId::O6)
        );
        if !ok {
            r.fail(
                ev.stage,
                format!("reset cause {cause:?} recorded under {:?}", ev.step),
            );
        }
        match cause {
            SlotResetCause::Expansion(j) if node.bit(*j as usize) != Some(true) => r.fail(
                ev.stage,
                format!("{node} reset by expansion of W_{j} without guessing finitely many"),
            ),
            SlotResetCause::Ell(e0) if e0 >= e => r.fail(
                ev.stage,
                format!("ℓ flip of {e0} reset P_{{{},{e}}}^{node}", node.len()),
            ),
            _ => {}
        }
    }
    r
}

/// Step 2 acts at most once per `(j, N, β)`.
pub fn audit_one_shot(events: &[TraceEvent]) -> CheckResult {
    let mut r = CheckResult::new("tree/one-shot");
    let mut seen = BTreeSet::new();
    for ev in events {
        if let Action::Allow {
            j,
            via: AllowVia::OneShot { n, node },
        } = &ev.action
        {
            if !seen.insert((*j, *n, *node)) {
                r.fail(ev.stage, format!("Step 2 repeated for ({j}, {n}, {node})"));
            }
        }
    }
    r
}

/// `Z_h ⊆ Y_h ∩ Ā`: deactivated witnesses never enter `A`, and witnesses
/// never change node.
pub fn audit_ledgers(run: &TreeRun, events: &[TraceEvent]) -> CheckResult {
    let mut r = CheckResult::new("tree/ledgers");
    let mut home: BTreeMap<Element, (Node, u32)> = BTreeMap::new();
    let mut z: BTreeSet<Element> = BTreeSet::new();
    for ev in events {
        match &ev.action {
            Action::Witness { node, e, x, .. } => {
                if home.insert(*x, (*node, *e)).is_some() {
                    r.fail(ev.stage, format!("{x} appointed twice"));
                }
            }
            Action::SlotReset {
                node,
                e,
                deactivated,
                ..
            } => {
                for x in deactivated {
                    if home.get(x) != Some(&(*node, *e)) {
                        r.fail(
                            ev.stage,
                            format!("{x} deactivated by a slot it does not belong to"),
                        );
                    }
                    z.insert(*x);
                }
            }
            Action::Permit { x, .. } if z.contains(x) => {
                r.fail(ev.stage, format!("{x} ∈ Z entered A"));
            }
            _ => {}
        }
    }
    for x in z {
        if run.in_a(x) {
            r.fail(run.stage(), format!("{x} ∈ Z is in A at the horizon"));
        }
    }
    r
}

/// Coding events use `F_k` for a fresh `k ∈ D` and avoid what they must.
pub fn audit_coding(run: &TreeRun, events: &[TraceEvent]) -> CheckResult {
    let mut r = CheckResult::new("tree/coding");
    let blocks = run.blocks();
    let mut coded = BTreeSet::new();
    for ev in events {
        let Action::Code { k, x, avoided } = &ev.action else {
            continue;
        };
        if blocks.block_of(*x) != Some(*k) {
            r.fail(ev.stage, format!("{x} codes {k} but is not in F_{k}"));
        }
        if !run.oracle().changes_at(ev.stage).contains(k) {
            r.fail(ev.stage, format!("{k} coded without entering D"));
        }
        if avoided.contains(x) {
            r.fail(ev.stage, format!("{x} codes {k} although prohibited"));
        }
        if !coded.insert(*k) {
            r.fail(ev.stage, format!("{k} coded twice"));
        }
        if avoided.len() as u64 > blocks.prohibited_bound(*k) {
            r.fail(
                ev.stage,
                format!("{} prohibitions for {k} exceed the bound", avoided.len()),
            );
        }
    }
    for k in run
        .oracle()
        .members()
        .filter(|&(_, q)| q <= run.stage())
        .map(|(k, _)| k)
    {
        if !coded.contains(&k) {
            r.fail(run.stage(), format!("{k} ∈ D was never coded"));
        }
    }
    r
}

/// Disallows with no later re-allowance before the horizon.
pub fn unanswered_disallows(events: &[TraceEvent]) -> Vec<(u32, Stage)> {
    let mut open: BTreeMap<u32, Stage> = BTreeMap::new();
    for ev in events {
        match &ev.action {
            Action::Disallow { j, .. } => {
                open.entry(*j).or_insert(ev.stage);
            }
            Action::Allow { j, .. } => {
                open.remove(j);
            }
            _ => {}
        }
    }
    open.into_iter().collect()
}

/// The Step 1 and Step 2 events with the step ids and per-variant details
/// (reset counts, deactivated witnesses) stripped.
pub fn step12_projection(events: &[TraceEvent]) -> Vec<String> {
    events
        .iter()
        .filter(|ev| matches!(ev.step, StepId::T1 | StepId::T2 | StepId::O1 | StepId::O2))
        .map(|ev| match &ev.action {
            Action::SlotReset { node, e, cause, .. } => {
                format!("{} reset {node}/{e} {cause:?}", ev.stage)
            }
            other => format!(
                "{} {}",
                ev.stage,
                serde_json::to_string(other).expect("serializable")
            ),
        })
        .collect()
}
