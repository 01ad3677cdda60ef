//! The marker construction realizing `Inf^B ≤₁ Inf(Ā)`.
//!
//! Each convergent `Φ_i^B(x)` keeps a marker `M_⟨i,x⟩` on some element of
//! `Ā`; each `b ∉ B` keeps a marker `Γ_b`. When `b` enters `B`, every marker
//! whose use is at least `b` is dumped, taking its element into `A`.

use std::collections::{BTreeMap, BTreeSet};

use crate::check::{Answer, CheckResult};
use crate::error::{Error, Result};
use crate::oracle::{Oracle, UseRule};
use crate::scenario::{Construction, Scenario};
use crate::trace::{Action, MarkerKey, Module, StepId, TraceEvent};
use crate::universe::{Element, SetHandle, Side, Stage, Universe};

/// One marker's stay on one element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub marker: MarkerKey,
    pub y: Element,
    pub use_: u64,
    pub placed: Stage,
    /// Stage at which it was dumped, taking `y` into `A`.
    pub dumped: Option<Stage>,
}

#[derive(Debug, Clone)]
pub struct MarkerRun {
    horizon: Stage,
    stage: Stage,
    universe: Universe,
    a: SetHandle,
    oracle: Oracle,
    placements: Vec<Placement>,
    /// Current marker → index into `placements`.
    current: BTreeMap<MarkerKey, usize>,
    marked: BTreeMap<Element, MarkerKey>,
    events: Vec<TraceEvent>,
}

impl MarkerRun {
    pub fn new(sc: &Scenario) -> Result<Self> {
        if sc.construction != Construction::Markers {
            return Err(Error::Scenario {
                line: 0,
                msg: format!("{} is not markers", sc.construction.name()),
            });
        }
        let mut universe = Universe::new(sc.horizon);
        let a = universe.constructed(Side::Plain);
        let mut run = MarkerRun {
            horizon: sc.horizon,
            stage: 0,
            universe,
            a,
            oracle: Oracle::new(&sc.oracle, &sc.functionals, UseRule::AtOrBelow),
            placements: Vec::new(),
            current: BTreeMap::new(),
            marked: BTreeMap::new(),
            events: Vec::new(),
        };
        run.emit(
            StepId::K0,
            Action::Init {
                levels: 0,
                sets: 0,
                sizes: Vec::new(),
            },
        );
        Ok(run)
    }

    pub fn run(sc: &Scenario) -> Result<Self> {
        let mut run = MarkerRun::new(sc)?;
        while run.stage < run.horizon {
            run.step()?;
        }
        Ok(run)
    }

    fn emit(&mut self, step: StepId, action: Action) {
        self.events.push(TraceEvent {
            stage: self.stage,
            module: Module::Markers,
            step,
            action,
        });
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn a(&self) -> SetHandle {
        self.a
    }

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }

    pub fn placements(&self) -> &[Placement] {
        &self.placements
    }

    pub fn in_a(&self, y: Element) -> bool {
        self.universe.set(self.a).is_ok_and(|a| a.contains(y))
    }

    /// Where `marker` currently sits.
    pub fn position(&self, marker: MarkerKey) -> Option<Element> {
        self.current.get(&marker).map(|&p| self.placements[p].y)
    }

    pub fn step(&mut self) -> Result<()> {
        if self.stage >= self.horizon {
            return Err(Error::ClockExhausted(self.horizon));
        }
        self.stage += 1;
        let t = self.stage;
        self.dump(t)?;
        self.place_m(t);
        self.place_gamma(t);
        Ok(())
    }

    /// Step 1.
    fn dump(&mut self, t: Stage) -> Result<()> {
        let Some(&b) = self.oracle.changes_at(t).first() else {
            return Ok(());
        };
        let injured: Vec<(u32, u64, u64)> = self
            .oracle
            .keys()
            .flat_map(|(i, x)| self.oracle.history(i, x).iter())
            .filter(|c| c.injured.is_some_and(|(q, _)| q == t))
            .map(|c| (c.index, c.arg, c.use_))
            .collect();
        for (i, x, use_) in injured {
            self.emit(StepId::K1, Action::OracleDiverge { i, x, use_, b });
        }
        let doomed: Vec<(MarkerKey, usize)> = self
            .current
            .iter()
            .filter(|(_, &p)| self.placements[p].use_ >= b)
            .map(|(&k, &p)| (k, p))
            .collect();
        let mut doomed = doomed;
        doomed.sort_by_key(|&(_, p)| self.placements[p].y);
        for (key, p) in doomed {
            let pl = &mut self.placements[p];
            pl.dumped = Some(t);
            let (y, use_) = (pl.y, pl.use_);
            self.current.remove(&key);
            self.marked.remove(&y);
            self.universe.enumerate(self.a, y, t)?;
            self.emit(
                StepId::K1,
                Action::MarkerDump {
                    y,
                    marker: key,
                    use_,
                    b,
                },
            );
        }
        Ok(())
    }

    /// Least `y > t` in `Ā` carrying no marker.
    fn free_target(&self, t: Stage) -> Element {
        (t as Element + 1..)
            .find(|y| !self.in_a(*y) && !self.marked.contains_key(y))
            .expect("unbounded search")
    }

    fn put(&mut self, marker: MarkerKey, use_: u64, t: Stage) -> Element {
        let y = self.free_target(t);
        self.current.insert(marker, self.placements.len());
        self.placements.push(Placement {
            marker,
            y,
            use_,
            placed: t,
            dumped: None,
        });
        self.marked.insert(y, marker);
        y
    }

    /// Step 2.
    fn place_m(&mut self, t: Stage) {
        let live: Vec<(u32, u64, u64)> = self
            .oracle
            .keys()
            .filter_map(|(i, x)| self.oracle.live(i, x, t).map(|c| (i, x, c.use_)))
            .filter(|&(i, x, _)| !self.current.contains_key(&MarkerKey::M { i, x }))
            .collect();
        for (i, x, use_) in live {
            let y = self.put(MarkerKey::M { i, x }, use_, t);
            self.emit(StepId::K2, Action::PlaceM { i, x, y, use_ });
        }
    }

    /// Step 3.
    fn place_gamma(&mut self, t: Stage) {
        let b = (0..)
            .find(|&b| {
                !self.oracle.contains_at(b, t)
                    && !self.current.contains_key(&MarkerKey::Gamma { b })
            })
            .expect("unbounded search");
        let y = self.put(MarkerKey::Gamma { b }, b, t);
        self.emit(StepId::K3, Action::PlaceGamma { b, y });
    }
}

/// `y ∈ A`, decided from `B` and the construction up to stage `y`.
pub fn reduction_a_from_b(run: &MarkerRun, y: Element) -> Answer {
    if (run.stage() as Element) < y {
        return Answer::Undetermined;
    }
    // Markers land on y only at stages t < y, and at most once.
    let Some(p) = run
        .placements()
        .iter()
        .find(|p| p.y == y && (p.placed as Element) < y)
    else {
        return Answer::No;
    };
    let changes: Vec<Stage> = run
        .oracle()
        .members()
        .filter(|&(b, _)| b <= p.use_)
        .map(|(_, q)| q)
        .collect();
    if changes.iter().any(|&q| q > run.stage()) {
        return Answer::Undetermined;
    }
    Answer::from_bool(changes.iter().any(|&q| q > p.placed))
}

/// `b ∈ B`, decided from `A` by racing `b`'s entry against a `Γ_b` at rest in `Ā`.
pub fn reduction_b_from_a(run: &MarkerRun, b: Element) -> Answer {
    let entry = run.oracle().entry(b);
    if entry.is_some_and(|q| q > run.stage()) {
        return Answer::Undetermined;
    }
    let gammas: Vec<&Placement> = run
        .placements()
        .iter()
        .filter(|p| p.marker == MarkerKey::Gamma { b })
        .collect();
    for s in 1..=run.stage() {
        if entry.is_some_and(|q| q <= s) {
            return Answer::Yes;
        }
        let resting = gammas
            .iter()
            .any(|p| p.placed <= s && p.dumped.is_none_or(|d| d > s) && !run.in_a(p.y));
        if resting {
            return Answer::No;
        }
    }
    Answer::Undetermined
}

/// Every element ever carrying an `M_⟨i,·⟩` marker.
pub fn wfi(run: &MarkerRun, i: u32) -> BTreeSet<Element> {
    run.placements()
        .iter()
        .filter(|p| matches!(p.marker, MarkerKey::M { i: i2, .. } if i2 == i))
        .map(|p| p.y)
        .collect()
}

#[derive(Debug, Clone)]
pub struct CorrespondenceReport {
    pub i: u32,
    /// Computations `Φ_i^B(x)` convergent at the horizon.
    pub permanent: usize,
    /// Elements of `wfi(i) ∩ Ā` carrying the marker of such a computation.
    pub attributed: usize,
    pub check: CheckResult,
}

pub fn inf_correspondence(run: &MarkerRun, i: u32) -> CorrespondenceReport {
    let mut check = CheckResult::new(format!("markers/inf[{i}]"));
    let h = run.stage();
    let oracle = run.oracle();
    let permanent: BTreeSet<u64> = oracle
        .keys()
        .filter(|&(i2, x)| i2 == i && oracle.live(i2, x, h).is_some())
        .map(|(_, x)| x)
        .collect();
    let rest: BTreeMap<Element, u64> = permanent
        .iter()
        .filter_map(|&x| run.position(MarkerKey::M { i, x }).map(|y| (y, x)))
        .collect();
    let free: BTreeSet<Element> = wfi(run, i).into_iter().filter(|&y| !run.in_a(y)).collect();
    for &x in &permanent {
        if run.position(MarkerKey::M { i, x }).is_none() {
            check.fail(h, format!("Φ_{i}^B({x}) converges but has no marker"));
        }
    }
    for y in &free {
        if !rest.contains_key(y) {
            check.fail(
                h,
                format!("{y} ∈ wfi({i}) ∩ Ā carries no permanent computation"),
            );
        }
    }
    for p in run.placements() {
        let MarkerKey::M { i: i2, x } = p.marker else {
            continue;
        };
        if i2 != i {
            continue;
        }
        let comp = oracle
            .history(i, x)
            .iter()
            .find(|c| c.converged <= p.placed && c.live_at(p.placed));
        if comp.is_some_and(|c| c.injured.is_some_and(|(q, _)| q <= h)) && !run.in_a(p.y) {
            check.fail(
                h,
                format!("marker of an injured Φ_{i}^B({x}) left {} outside A", p.y),
            );
        }
    }
    let attributed = rest.keys().filter(|y| free.contains(y)).count();
    if attributed != permanent.len() {
        check.fail(
            h,
            format!(
                "{} permanent computations but {attributed} attributed elements",
                permanent.len()
            ),
        );
    }
    CorrespondenceReport {
        i,
        permanent: permanent.len(),
        attributed,
        check,
    }
}

/// Trace-level marker invariants.
pub fn audit_markers(run: &MarkerRun) -> CheckResult {
    audit_marker_trace(run, run.events())
}

/// As [`audit_markers`], reading `events` in place of the run's own trace.
pub fn audit_marker_trace(run: &MarkerRun, events: &[TraceEvent]) -> CheckResult {
    let mut r = CheckResult::new("markers/invariants");
    let mut current: BTreeMap<MarkerKey, (Element, u64)> = BTreeMap::new();
    let mut on: BTreeMap<Element, MarkerKey> = BTreeMap::new();
    let oracle = run.oracle();
    for ev in events {
        let t = ev.stage;
        let mut place = |key: MarkerKey, y: Element, use_: u64, r: &mut CheckResult| {
            if y <= t as Element {
                r.fail(t, format!("{key:?} placed on {y}, not above {t}"));
            }
            if current.insert(key, (y, use_)).is_some() {
                r.fail(t, format!("second current {key:?}"));
            }
            if on.insert(y, key).is_some() {
                r.fail(t, format!("{y} carries two markers"));
            }
            if run.universe().set(run.a()).expect("own").contains_at(y, t) {
                r.fail(t, format!("{key:?} placed on {y} ∈ A"));
            }
        };
        match &ev.action {
            Action::PlaceM { i, x, y, use_ } => {
                place(MarkerKey::M { i: *i, x: *x }, *y, *use_, &mut r)
            }
            Action::PlaceGamma { b, y } => {
                if oracle.contains_at(*b, t) {
                    r.fail(t, format!("Γ_{b} placed while {b} ∈ B"));
                }
                place(MarkerKey::Gamma { b: *b }, *y, *b, &mut r)
            }
            Action::MarkerDump { y, marker, use_, b } => {
                match current.remove(marker) {
                    Some((y2, u2)) if y2 == *y && u2 == *use_ => {}
                    _ => r.fail(
                        t,
                        format!("dump of {marker:?} at {y} does not match its placement"),
                    ),
                }
                on.remove(y);
                if use_ < b {
                    r.fail(t, format!("{marker:?} with use {use_} dumped by {b}"));
                }
                if !oracle.changes_at(t).contains(b) {
                    r.fail(t, format!("dump attributed to {b}, which did not enter B"));
                }
            }
            _ => {}
        }
    }
    // Every entrant of A was dumped; every marker that should have been dumped was.
    let dumped: BTreeSet<(Element, Stage)> = run
        .placements()
        .iter()
        .filter_map(|p| p.dumped.map(|d| (p.y, d)))
        .collect();
    for (y, t) in run.universe().set(run.a()).expect("own").iter() {
        if !dumped.contains(&(y, t)) {
            r.fail(t, format!("{y} entered A without a marker dump"));
        }
    }
    for p in run.placements() {
        let first_kill = oracle
            .members()
            .filter(|&(b, q)| b <= p.use_ && q > p.placed)
            .map(|(_, q)| q)
            .min();
        if p.dumped != first_kill.filter(|&q| q <= run.stage()) {
            r.fail(
                p.placed,
                format!(
                    "{:?} on {}: dumped {:?}, expected {:?}",
                    p.marker, p.y, p.dumped, first_kill
                ),
            );
        }
    }
    r
}
