//! Run orchestration, the invariant suite, census tables, seeded scenario
//! generation and trace mutation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::check::{Answer, CheckResult};
use crate::error::Result;
use crate::markers::{self, MarkerRun};
use crate::node::Node;
use crate::osp2;
use crate::pinball::{self, Pinball};
use crate::scenario::{Construction, FunctionalScript, Growth, GuesserMode, Scenario, Verdict};
use crate::trace::{self, Action, ResetCause, TraceEvent};
use crate::tree::{Status, TreeRun};
use crate::tree15::{self, Ledgers};
use crate::universe::{EState, Element, Stage};

/// A finished run of any construction.
#[derive(Debug, Clone)]
pub enum Run {
    Pinball(Box<Pinball>),
    Tree(Box<TreeRun>),
    Markers(Box<MarkerRun>),
}

pub fn run(sc: &Scenario) -> Result<Run> {
    Ok(match sc.construction {
        Construction::Pinball => Run::Pinball(Box::new(Pinball::run(sc)?)),
        Construction::Tree15 | Construction::Osp2 => Run::Tree(Box::new(TreeRun::run(sc)?)),
        Construction::Markers => Run::Markers(Box::new(MarkerRun::run(sc)?)),
    })
}

impl Run {
    pub fn events(&self) -> &[TraceEvent] {
        match self {
            Run::Pinball(r) => r.events(),
            Run::Tree(r) => r.events(),
            Run::Markers(r) => r.events(),
        }
    }

    pub fn trace_text(&self) -> String {
        trace::to_text(self.events())
    }

    pub fn stage(&self) -> Stage {
        match self {
            Run::Pinball(r) => r.stage(),
            Run::Tree(r) => r.stage(),
            Run::Markers(r) => r.stage(),
        }
    }

    /// Final constructed sets by name, with entry stages.
    pub fn final_sets(&self) -> BTreeMap<&'static str, BTreeMap<Element, Stage>> {
        let collect =
            |u: &crate::universe::Universe, h| u.set(h).expect("own handle").iter().collect();
        let mut out = BTreeMap::new();
        match self {
            Run::Pinball(r) => {
                out.insert("A", collect(r.universe(), r.a()));
                out.insert("A_hat", collect(r.universe(), r.a_hat()));
            }
            Run::Tree(r) => {
                out.insert("A", collect(r.universe(), r.a()));
            }
            Run::Markers(r) => {
                out.insert("A", collect(r.universe(), r.a()));
            }
        }
        out
    }
}

/// Rebuilds the constructed sets from enumeration records alone.
pub fn replay(events: &[TraceEvent]) -> BTreeMap<&'static str, BTreeMap<Element, Stage>> {
    let mut out: BTreeMap<&'static str, BTreeMap<Element, Stage>> = BTreeMap::new();
    out.insert("A", BTreeMap::new());
    let put = |out: &mut BTreeMap<&'static str, BTreeMap<Element, Stage>>, name, x, t| {
        out.entry(name).or_default().entry(x).or_insert(t);
    };
    for ev in events {
        match &ev.action {
            Action::Init { .. } if ev.step == crate::trace::StepId::P0 => {
                out.entry("A_hat").or_default();
            }
            Action::Dump { x0, a_hat, .. } => {
                put(&mut out, "A", *x0, ev.stage);
                put(&mut out, "A_hat", *a_hat, ev.stage);
            }
            Action::Permit { x, .. } | Action::Code { x, .. } => put(&mut out, "A", *x, ev.stage),
            Action::MarkerDump { y, .. } => put(&mut out, "A", *y, ev.stage),
            _ => {}
        }
    }
    out
}

/// Trace ordering and replay: records are ordered by stage and reproduce
/// the run's final sets.
pub fn check_replay(run: &Run, events: &[TraceEvent]) -> CheckResult {
    let mut r = CheckResult::new("trace/replay");
    for w in events.windows(2) {
        if w[1].stage < w[0].stage {
            r.fail(
                w[1].stage,
                format!(
                    "record at stage {} follows stage {}",
                    w[1].stage, w[0].stage
                ),
            );
        }
    }
    let got = replay(events);
    for (name, want) in run.final_sets() {
        let empty = BTreeMap::new();
        let have = got.get(name).unwrap_or(&empty);
        for (&x, &t) in want.iter() {
            if have.get(&x) != Some(&t) {
                r.fail(
                    t,
                    format!("{x} entered {name} at {t}; replay gives {:?}", have.get(&x)),
                );
            }
        }
        for (&x, &t) in have.iter() {
            if !want.contains_key(&x) {
                r.fail(t, format!("replay puts {x} into {name}, the run does not"));
            }
        }
    }
    r
}

/// Every module's checks for a finished run.
pub fn run_invariant_suite(run: &Run, sc: &Scenario) -> Vec<CheckResult> {
    suite_on(run, sc, run.events())
}

/// The suite with trace-reading checks fed `events` instead of the run's
/// own trace. Mutated traces go through here.
pub fn suite_on(run: &Run, sc: &Scenario, events: &[TraceEvent]) -> Vec<CheckResult> {
    let mut out = vec![check_replay(run, events)];
    match run {
        Run::Pinball(pb) => pinball_suite(pb, sc, events, &mut out),
        Run::Tree(tr) => tree_suite(tr, sc, events, &mut out),
        Run::Markers(mr) => {
            out.push(markers::audit_marker_trace(mr, events));
            let indices: BTreeSet<u32> = mr.oracle().keys().map(|(i, _)| i).collect();
            out.extend(
                indices
                    .into_iter()
                    .map(|i| markers::inf_correspondence(mr, i).check),
            );
            out.push(marker_reductions(mr));
        }
    }
    out
}

fn failed(name: &str, err: crate::Error) -> CheckResult {
    let mut r = CheckResult::new(name);
    r.fail(0, err.to_string());
    r
}

fn pinball_suite(pb: &Pinball, sc: &Scenario, events: &[TraceEvent], out: &mut Vec<CheckResult>) {
    let mut gw = CheckResult::new("pinball/gateway");
    for e in 0..pb.width() {
        match pb.gateway(e) {
            Ok(rep) => {
                for row in rep.rows.iter().filter(|r| r.left != r.right) {
                    gw.fail(
                        pb.stage(),
                        format!("{}: |D^A|={} |D^Â|={}", row.state, row.left, row.right),
                    );
                }
            }
            Err(err) => gw.fail(0, err.to_string()),
        }
    }
    match pb.stagewise_mismatch() {
        Ok(Some(m)) => gw.fail(m.stage, format!("{}: {} vs {}", m.state, m.left, m.right)),
        Ok(None) => {}
        Err(err) => gw.fail(0, err.to_string()),
    }
    out.push(gw);
    out.push(pinball::audit_pigeonhole(events));
    out.push(pinball::verify_lowness_restraint(events));
    out.push(pinball::audit_pool(events));
    out.push(
        pb.partner_check()
            .unwrap_or_else(|e| failed("pinball/partners", e)),
    );
    let mut sk = CheckResult::new("pinball/skeleton");
    for (&e, script) in &sc.sets {
        if script.is_empty() {
            continue;
        }
        match pb.verify_skeleton(e) {
            Ok(rep) => {
                for x in &rep.unsound {
                    sk.fail(pb.stage(), format!("{x} ∈ U_{e} − W_{e}"));
                }
                for x in &rep.missing {
                    sk.fail(
                        pb.stage(),
                        format!("{x} passed G_{e} or left but is not in U_{e}"),
                    );
                }
                for x in &rep.unclassified {
                    sk.fail(pb.stage(), format!("{x} ∈ W_{e} − U_{e} is unclassified"));
                }
            }
            Err(err) => sk.fail(0, err.to_string()),
        }
    }
    out.push(sk);
    let mut ext = CheckResult::new("pinball/extension");
    match pb.extension_hypotheses() {
        Ok(rep) => {
            for v in rep.violations {
                let side = if v.hat_side {
                    format!("Â↘Û_{}", v.n)
                } else {
                    format!("A↘V̂_{}", v.n)
                };
                ext.fail(v.target_entry, format!("{} ∈ {side}", v.element));
            }
        }
        Err(err) => ext.fail(0, err.to_string()),
    }
    out.push(ext);
}

fn tree_suite(tr: &TreeRun, sc: &Scenario, events: &[TraceEvent], out: &mut Vec<CheckResult>) {
    out.extend(tree15::audit_tree_trace(tr, events));
    match sc.construction {
        Construction::Tree15 => {
            let ledgers = Ledgers::from_run(tr);
            for j in 0..tr.width() {
                out.push(tree15::semilow15_certificate(tr, &ledgers, j).check);
            }
            out.push(tree_reductions(tr));
        }
        _ => {
            for i in 0..tr.width() {
                let mut r = osp2::osp_invariants(tr, i);
                let routes = osp2::audit_routes(events, i);
                r.violations.extend(routes.violations);
                out.push(r);
            }
            for j in 0..tr.width() {
                if let Some(rep) = osp2::semilow2_certificate(tr, sc.verdict.as_ref(), j) {
                    out.push(rep.check);
                }
            }
        }
    }
}

/// Counts of reduction queries, split by outcome.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Agreement {
    pub settled: usize,
    pub undetermined: usize,
    pub disagree: usize,
}

fn tally(
    r: &mut CheckResult,
    agg: &mut Agreement,
    what: &str,
    answer: Answer,
    truth: bool,
    stage: Stage,
) {
    match answer.settled() {
        None => agg.undetermined += 1,
        Some(b) => {
            agg.settled += 1;
            if b != truth {
                agg.disagree += 1;
                r.fail(
                    stage,
                    format!("{what}: reduction says {b}, the sets say {truth}"),
                );
            }
        }
    }
}

/// Both tree15 reductions against `D` and `A` over every query the run can reach.
pub fn tree_reduction_agreement(tr: &TreeRun) -> (CheckResult, Agreement) {
    let mut r = CheckResult::new("tree15/reductions");
    let mut agg = Agreement::default();
    let h = tr.stage();
    let d_max = tr.oracle().members().map(|(d, _)| d).max().unwrap_or(0);
    let blocks = tr.blocks();
    let mut k = 0;
    while k <= d_max + 2 || blocks.start(k) <= h as u64 {
        let truth = tr.oracle().contains_at(k, h);
        tally(
            &mut r,
            &mut agg,
            &format!("{k} ∈ D"),
            tree15::reduction_d_from_a(tr, k),
            truth,
            h,
        );
        k += 1;
    }
    let a_max = tr
        .universe()
        .set(tr.a())
        .expect("own")
        .members()
        .last()
        .copied()
        .unwrap_or(0);
    let mut xs: BTreeSet<Element> = (0..=a_max.min(4 * h as Element)).collect();
    xs.extend(tr.witnesses().keys());
    xs.extend(tr.universe().set(tr.a()).expect("own").members());
    for x in xs {
        tally(
            &mut r,
            &mut agg,
            &format!("{x} ∈ A"),
            tree15::reduction_a_from_d(tr, x),
            tr.in_a(x),
            h,
        );
    }
    r.note(format!(
        "{} settled, {} undetermined",
        agg.settled, agg.undetermined
    ));
    (r, agg)
}

fn tree_reductions(tr: &TreeRun) -> CheckResult {
    tree_reduction_agreement(tr).0
}

/// Both marker reductions against `A` and `B`.
pub fn marker_reduction_agreement(mr: &MarkerRun) -> (CheckResult, Agreement) {
    let mut r = CheckResult::new("markers/reductions");
    let mut agg = Agreement::default();
    let h = mr.stage();
    for y in 0..=h as Element + 2 {
        tally(
            &mut r,
            &mut agg,
            &format!("{y} ∈ A"),
            markers::reduction_a_from_b(mr, y),
            mr.in_a(y),
            h,
        );
    }
    let b_max = mr.oracle().members().map(|(b, _)| b).max().unwrap_or(0);
    for b in 0..=b_max.max(h as Element) {
        let truth = mr.oracle().contains_at(b, h);
        tally(
            &mut r,
            &mut agg,
            &format!("{b} ∈ B"),
            markers::reduction_b_from_a(mr, b),
            truth,
            h,
        );
    }
    r.note(format!(
        "{} settled, {} undetermined",
        agg.settled, agg.undetermined
    ));
    (r, agg)
}

fn marker_reductions(mr: &MarkerRun) -> CheckResult {
    marker_reduction_agreement(mr).0
}

/// Keeps results whose name starts with one of `patterns`; all when empty.
pub fn select(results: Vec<CheckResult>, patterns: &[String]) -> Vec<CheckResult> {
    if patterns.is_empty() {
        return results;
    }
    results
        .into_iter()
        .filter(|r| patterns.iter().any(|p| r.name.starts_with(p.as_str())))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub check: String,
    pub stage: Stage,
    pub message: String,
}

/// One entry per failing check, at its first violating stage.
pub fn failures(results: &[CheckResult]) -> Vec<Failure> {
    results
        .iter()
        .filter_map(|r| {
            r.first().map(|v| Failure {
                check: r.name.clone(),
                stage: v.stage,
                message: v.msg.clone(),
            })
        })
        .collect()
}

/// Textual census tables.
pub fn census(run: &Run) -> Result<String> {
    let mut out = String::new();
    match run {
        Run::Pinball(pb) => {
            for e in 0..pb.width() {
                let rep = pb.gateway(e)?;
                writeln!(out, "level {e}").ok();
                writeln!(out, "  {:<24} {:>6} {:>6}", "state", "D^A", "D^Â").ok();
                for row in &rep.rows {
                    writeln!(
                        out,
                        "  {:<24} {:>6} {:>6}",
                        row.state.to_string(),
                        row.left,
                        row.right
                    )
                    .ok();
                }
            }
            let closures = pinball::gate_closures(pb.events());
            writeln!(out, "gate closures {}", closures.len()).ok();
        }
        Run::Tree(tr) => {
            writeln!(
                out,
                "{:>3} {:>6} {:>6} {:>6} {:>6}",
                "j", "|W|", "|W∩Ā|", "exp", "wit"
            )
            .ok();
            for j in 0..tr.width() {
                let w = tr.universe().set(tr.w(j))?.members();
                let abar = w.iter().filter(|&&x| !tr.in_a(x)).count();
                let wit = tr.witnesses().values().filter(|w| w.h() == j).count();
                writeln!(
                    out,
                    "{j:>3} {:>6} {abar:>6} {:>6} {wit:>6}",
                    w.len(),
                    tr.expansionary_stages(j).len()
                )
                .ok();
            }
            let mut status: BTreeMap<&str, usize> = BTreeMap::new();
            for w in tr.witnesses().values() {
                let key = match w.status {
                    Status::Active => "active",
                    Status::Inactive => "inactive",
                    Status::Enumerated => "enumerated",
                };
                *status.entry(key).or_default() += 1;
            }
            writeln!(out, "witnesses {status:?}").ok();
            writeln!(out, "|A| = {}", tr.universe().set(tr.a())?.len()).ok();
        }
        Run::Markers(mr) => {
            writeln!(out, "{:>3} {:>6} {:>6} {:>6}", "i", "conv", "|wfi|", "∩Ā").ok();
            let indices: BTreeSet<u32> = mr.oracle().keys().map(|(i, _)| i).collect();
            for i in indices {
                let rep = markers::inf_correspondence(mr, i);
                let w = markers::wfi(mr, i);
                let abar = w.iter().filter(|&&y| !mr.in_a(y)).count();
                writeln!(out, "{i:>3} {:>6} {:>6} {abar:>6}", rep.permanent, w.len()).ok();
            }
            writeln!(out, "|A| = {}", mr.universe().set(mr.a())?.len()).ok();
        }
    }
    Ok(out)
}

// ----- generation -----

/// A random scenario within the construction's preconditions. The seed is
/// recorded in the scenario and affects nothing but the scripts.
pub fn generate(construction: Construction, seed: u64, horizon: Stage) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sc = Scenario::new(construction, horizon);
    sc.seed = Some(seed);
    match construction {
        Construction::Pinball => gen_pinball(&mut sc, &mut rng),
        Construction::Tree15 | Construction::Osp2 => gen_tree(&mut sc, &mut rng)?,
        Construction::Markers => gen_markers(&mut sc, &mut rng),
    }
    // Canonical form: what a file round-trip would give.
    Scenario::parse(&sc.render())
}

fn stage_in(rng: &mut ChaCha8Rng, lo: Stage, hi: Stage) -> Stage {
    if lo >= hi {
        hi
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn gen_pinball(sc: &mut Scenario, rng: &mut ChaCha8Rng) {
    let h = sc.horizon;
    sc.levels = rng.gen_range(1..=2);
    let width = sc.levels + rng.gen_range(0..=1);
    for e in 0..width {
        let mut set = BTreeMap::new();
        for _ in 0..rng.gen_range(0..=h / 6 + 1) {
            let x = rng.gen_range(1..=h.max(1)) as Element;
            let t = stage_in(rng, x as Stage, h);
            set.entry(x).or_insert(t);
        }
        sc.sets.insert(e, set);
    }
    for _ in 0..rng.gen_range(0..=4) {
        let f = FunctionalScript {
            stage: stage_in(rng, 1, h),
            index: rng.gen_range(0..4),
            arg: 0,
            use_: rng.gen_range(0..=h as u64 / 3),
        };
        if !sc.functionals.contains(&f) {
            sc.functionals.push(f);
        }
    }
    for i in 0..sc.levels {
        let mode = match rng.gen_range(0..6) {
            0 => GuesserMode::Const(true),
            1 | 2 => GuesserMode::Track {
                lag: rng.gen_range(1..=3),
            },
            _ => GuesserMode::Track { lag: 0 },
        };
        sc.guessers.insert(i, mode);
    }
}

fn gen_tree(sc: &mut Scenario, rng: &mut ChaCha8Rng) -> Result<()> {
    let h = sc.horizon;
    sc.levels = rng.gen_range(1..=3);
    let width = sc.levels + rng.gen_range(0..=1);
    for e in 0..width {
        let mut set = BTreeMap::new();
        for _ in 0..rng.gen_range(0..=h / 8 + 1) {
            set.entry(rng.gen_range(0..4 * h as Element))
                .or_insert(stage_in(rng, 1, h));
        }
        sc.sets.insert(e, set);
    }
    for _ in 0..rng.gen_range(0..=h / 10 + 1) {
        sc.oracle
            .entry(rng.gen_range(0..12))
            .or_insert(stage_in(rng, 1, h));
    }
    for _ in 0..rng.gen_range(0..=4) {
        let f = FunctionalScript {
            stage: stage_in(rng, 1, h),
            index: rng.gen_range(0..width),
            arg: 0,
            use_: rng.gen_range(1..=16),
        };
        if !sc.functionals.contains(&f) {
            sc.functionals.push(f);
        }
    }
    if sc.construction == Construction::Osp2 {
        for j in 0..sc.levels {
            let g = match rng.gen_range(0..4) {
                0 => Growth::Never,
                1 => Growth::Burst(rng.gen_range(1..=4)),
                _ => Growth::Every(rng.gen_range(1..=5)),
            };
            sc.growth.insert(j, g);
        }
    } else {
        for j in 0..sc.levels {
            if rng.gen_bool(0.3) {
                sc.guessers.insert(
                    j,
                    GuesserMode::Track {
                        lag: rng.gen_range(1..=2),
                    },
                );
            }
        }
    }
    // Second pass: feed some early witnesses back into the W_j so that
    // expansionary stages and permitting actually happen. The first run is
    // unchanged up to the cut, so those witnesses still exist.
    let cut = h / 2;
    let first = TreeRun::run(&sc.truncated(cut))?;
    let mut early: Vec<Element> = first.witnesses().keys().copied().collect();
    early.shuffle(rng);
    for x in early.into_iter().take(rng.gen_range(0..=6)) {
        let j = rng.gen_range(0..width);
        let t = stage_in(rng, cut + 1, h);
        if sc.sets.values().all(|s| !s.contains_key(&x)) {
            sc.sets.entry(j).or_default().insert(x, t);
        }
    }
    if sc.construction == Construction::Osp2 {
        let done = TreeRun::run(sc)?;
        let path = done.paths().last().copied().unwrap_or_default();
        let mut v = Verdict {
            path,
            nodes: BTreeMap::new(),
        };
        let mut node = Node::default();
        loop {
            let inf = done
                .witnesses()
                .values()
                .any(|w| w.node == node && w.e == 0 && w.status != Status::Enumerated);
            v.nodes.insert(node, (0, inf));
            if node.len() >= path.len() {
                break;
            }
            node = path.prefix(node.len() + 1);
        }
        sc.verdict = Some(v);
    }
    Ok(())
}

fn gen_markers(sc: &mut Scenario, rng: &mut ChaCha8Rng) {
    let h = sc.horizon;
    let spread = (h as u64 / 3).max(4);
    for _ in 0..rng.gen_range(0..=h / 5 + 1) {
        sc.oracle
            .entry(rng.gen_range(0..spread))
            .or_insert(stage_in(rng, 1, h));
    }
    let mut stages: Vec<Stage> = (0..=h).collect();
    stages.shuffle(rng);
    let count = rng.gen_range(0..=(h as usize / 2).max(1)).min(stages.len());
    for &t in &stages[..count] {
        sc.functionals.push(FunctionalScript {
            stage: t,
            index: rng.gen_range(0..3),
            arg: rng.gen_range(0..4),
            use_: rng.gen_range(0..spread),
        });
    }
}

// ----- mutation -----

/// A trace edited to break exactly one rule.
#[derive(Debug, Clone)]
pub struct Mutation {
    pub name: String,
    pub events: Vec<TraceEvent>,
}

fn edit(events: &[TraceEvent], name: String, at: usize, f: impl FnOnce(&mut Action)) -> Mutation {
    let mut events = events.to_vec();
    f(&mut events[at].action);
    Mutation { name, events }
}

fn drop_at(events: &[TraceEvent], name: String, at: usize) -> Mutation {
    let mut events = events.to_vec();
    events.remove(at);
    Mutation { name, events }
}

fn live_uses(events: &[TraceEvent], upto: usize) -> BTreeMap<u32, u64> {
    let mut live = BTreeMap::new();
    for ev in &events[..upto] {
        match ev.action {
            Action::Converge { j, use_ } => {
                live.insert(j, use_);
            }
            Action::Diverge { j, .. } => {
                live.remove(&j);
            }
            _ => {}
        }
    }
    live
}

/// Restraint-breaking edits of a pinball trace, one per applicable site kind.
pub fn pinball_mutations(events: &[TraceEvent]) -> Vec<Mutation> {
    let mut out = Vec::new();
    let find = |p: &dyn Fn(&Action) -> bool| events.iter().position(|e| p(&e.action));
    if let Some(at) = find(&|a| matches!(a, Action::Appoint { .. })) {
        out.push(edit(
            events,
            "appoint: wrong recorded restraint".into(),
            at,
            |a| {
                if let Action::Appoint { restraint, .. } = a {
                    *restraint += 1;
                }
            },
        ));
        out.push(edit(events, "appoint: stale threshold".into(), at, |a| {
            if let Action::Appoint { threshold, .. } = a {
                *threshold += 1;
            }
        }));
        out.push(edit(events, "appoint: stale n".into(), at, |a| {
            if let Action::Appoint { n, .. } = a {
                *n += 1;
            }
        }));
    }
    let restrained = events
        .iter()
        .position(|e| matches!(e.action, Action::Appoint { restraint, .. } if restraint > 0));
    if let Some(at) = restrained {
        out.push(edit(
            events,
            "appoint: partner under the restraint".into(),
            at,
            |a| {
                if let Action::Appoint {
                    partner, restraint, ..
                } = a
                {
                    *partner = *restraint;
                }
            },
        ));
    }
    if let Some(at) = find(&|a| matches!(a, Action::Dump { .. })) {
        let live = live_uses(events, at);
        out.push(edit(
            events,
            "dump: Â-entrant is not the appointed partner".into(),
            at,
            |a| {
                if let Action::Dump { a_hat, .. } = a {
                    *a_hat += 1;
                }
            },
        ));
        out.push(edit(
            events,
            "dump: A-entrant is not a witness".into(),
            at,
            |a| {
                if let Action::Dump { x0, .. } = a {
                    *x0 = Element::MAX;
                }
            },
        ));
        out.push(edit(
            events,
            "dump: pairs with a non-witness".into(),
            at,
            |a| {
                if let Action::Dump { x1, .. } = a {
                    *x1 = Element::MAX;
                }
            },
        ));
        let shielded = events.iter().enumerate().find_map(|(i, e)| match e.action {
            Action::Dump { a_hat, .. } => live_uses(events, i)
                .values()
                .copied()
                .find(|&u| u < a_hat)
                .map(|u| (i, u)),
            _ => None,
        });
        if let Some((at, u)) = shielded {
            out.push(edit(
                events,
                "dump: Â-entrant moved below a live use".into(),
                at,
                |a| {
                    if let Action::Dump { a_hat, .. } = a {
                        *a_hat = u;
                    }
                },
            ));
        }
        // A fresh low-index computation right before the dump, never reset for.
        let mut ev = events.to_vec();
        let stage = ev[at].stage;
        let j = (0..)
            .find(|j| !live.contains_key(j))
            .expect("some free index");
        let big = Element::MAX / 2;
        ev.insert(
            at,
            TraceEvent {
                stage,
                module: ev[at].module,
                step: crate::trace::StepId::P3,
                action: Action::Converge { j, use_: big },
            },
        );
        out.push(Mutation {
            name: "dump: injures an unrestrained new computation".into(),
            events: ev,
        });
    }
    if let Some(at) = find(&|a| matches!(a, Action::Diverge { .. })) {
        out.push(drop_at(
            events,
            "diverge: injured computation kept alive".into(),
            at,
        ));
        out.push(edit(events, "diverge: wrong use".into(), at, |a| {
            if let Action::Diverge { use_, .. } = a {
                *use_ += 1;
            }
        }));
        out.push(edit(
            events,
            "diverge: injured from above its use".into(),
            at,
            |a| {
                if let Action::Diverge { use_, by, .. } = a {
                    *by = *use_ + 1;
                }
            },
        ));
    }
    if let Some(at) = find(&|a| {
        matches!(
            a,
            Action::Reset {
                cause: ResetCause::Jump(_),
                ..
            }
        )
    }) {
        out.push(drop_at(events, "reset: owed jump reset missing".into(), at));
        out.push(edit(events, "reset: counter skips".into(), at, |a| {
            if let Action::Reset { n, .. } = a {
                *n += 1;
            }
        }));
    }
    let cancelling = find(&|a| {
        matches!(
            a,
            Action::Reset {
                cancelled: Some(_),
                ..
            }
        )
    });
    if let Some(at) = cancelling {
        out.push(edit(events, "reset: keeps its witness".into(), at, |a| {
            if let Action::Reset { cancelled, .. } = a {
                *cancelled = None;
            }
        }));
    }
    if let Some(at) = find(&|a| matches!(a, Action::Converge { .. })) {
        let mut ev = events.to_vec();
        let dup = ev[at].clone();
        ev.insert(at + 1, dup);
        out.push(Mutation {
            name: "converge: reported twice".into(),
            events: ev,
        });
    }
    out
}

/// Edits of tree, osp2 and marker traces, each breaking one audited rule.
pub fn trace_mutations(events: &[TraceEvent]) -> Vec<Mutation> {
    let mut out = Vec::new();
    let find = |p: &dyn Fn(&Action) -> bool| events.iter().position(|e| p(&e.action));
    if let Some(at) = find(&|a| matches!(a, Action::Route { .. })) {
        let mut ev = events.to_vec();
        let dup = ev[at].clone();
        ev.insert(at + 1, dup);
        out.push(Mutation {
            name: "route: double-routed element".into(),
            events: ev,
        });
    }
    let witnesses: Vec<usize> = events
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e.action, Action::Witness { .. }))
        .map(|(i, _)| i)
        .collect();
    if let [first, .., last] = witnesses[..] {
        let Action::Witness { x: old, .. } = events[first].action else {
            unreachable!()
        };
        out.push(edit(events, "witness: reused element".into(), last, |a| {
            if let Action::Witness { x, .. } = a {
                *x = old;
            }
        }));
    }
    if let Some(at) = find(&|a| matches!(a, Action::Permit { .. })) {
        out.push(drop_at(
            events,
            "permit: enumeration missing from trace".into(),
            at,
        ));
        out.push(edit(
            events,
            "permit: oracle change above the use".into(),
            at,
            |a| {
                if let Action::Permit { d, use_, .. } = a {
                    *d = *use_ + 1;
                }
            },
        ));
    }
    if let Some(at) = find(&|a| matches!(a, Action::Code { .. })) {
        out.push(edit(
            events,
            "code: element outside its block".into(),
            at,
            |a| {
                if let Action::Code { x, .. } = a {
                    *x = Element::MAX;
                }
            },
        ));
    }
    if let Some(at) = find(&|a| matches!(a, Action::SlotReset { .. })) {
        out.push(edit(events, "slot reset: counter skips".into(), at, |a| {
            if let Action::SlotReset { n, .. } = a {
                *n += 1;
            }
        }));
    }
    if let Some(at) = find(&|a| matches!(a, Action::MarkerDump { .. })) {
        out.push(edit(
            events,
            "marker: dumped by a change above its use".into(),
            at,
            |a| {
                if let Action::MarkerDump { b, use_, .. } = a {
                    *b = *use_ + 1;
                }
            },
        ));
        out.push(drop_at(
            events,
            "marker: dump missing from trace".into(),
            at,
        ));
    }
    if let Some(at) = find(&|a| matches!(a, Action::PlaceM { .. })) {
        out.push(edit(
            events,
            "marker: placed on a stale element".into(),
            at,
            |a| {
                if let Action::PlaceM { y, .. } = a {
                    *y = 0;
                }
            },
        ));
    }
    if let Some(at) = find(&|a| matches!(a, Action::PlaceGamma { .. })) {
        let mut ev = events.to_vec();
        let dup = ev[at].clone();
        ev.insert(at + 1, dup);
        out.push(Mutation {
            name: "marker: Γ placed twice".into(),
            events: ev,
        });
    }
    out
}

/// Stages at which `census` would list a state; for reports.
pub fn states_seen(run: &Pinball, e: u32) -> Result<BTreeSet<EState>> {
    let rep = run.gateway(e)?;
    Ok(rep.rows.into_iter().map(|r| r.state).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_pinball_is_empty_and_passes() {
        let sc = Scenario::parse("construction pinball\nhorizon 10\n").unwrap();
        let run = run(&sc).unwrap();
        let sets = run.final_sets();
        assert!(sets["A"].is_empty() && sets["A_hat"].is_empty());
        for r in run_invariant_suite(&run, &sc) {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn horizon_zero_is_init_only() {
        for c in ["pinball\nhorizon 0\nlevels 1", "markers\nhorizon 0"] {
            let sc = Scenario::parse(&format!("construction {c}\n")).unwrap();
            assert_eq!(run(&sc).unwrap().events().len(), 1);
        }
    }

    #[test]
    fn generation_is_seeded() {
        for c in [
            Construction::Pinball,
            Construction::Tree15,
            Construction::Osp2,
            Construction::Markers,
        ] {
            let a = generate(c, 11, 60).unwrap();
            assert_eq!(a, generate(c, 11, 60).unwrap());
            assert_ne!(a.render(), generate(c, 12, 60).unwrap().render());
        }
    }

    #[test]
    fn select_by_prefix() {
        let rs = vec![
            CheckResult::new("pinball/pool"),
            CheckResult::new("trace/replay"),
        ];
        let kept = select(rs, &["pinball".to_string()]);
        assert_eq!(kept.len(), 1);
    }
}
