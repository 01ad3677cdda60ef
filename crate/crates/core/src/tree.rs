//! The tree-of-strategies engine shared by the `tree15` and `osp2`
//! constructions.
//!
//! Both build `A` from a scripted oracle `D` by nonlow permitting. Nodes `α`
//! of length `h` guess, bit by bit, whether `W_j − (Y^j ∪ A)` has infinitely
//! many expansionary stages; requirement `P_{h,e}^α` appoints witnesses from
//! row `⟨f(α), e⟩` and dumps them into `A` only when `D` changes below their
//! use. The two variants differ in how witnesses are appointed and released,
//! and `osp2` adds an outer splitting of every `W_i` into `W_f(i) ⊔ W_g(i)`.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::guesser::{guess, TruthLog};
use crate::node::Node;
use crate::oracle::{Oracle, UseRule};
use crate::pairing::{least_in_row_above, pair, unpair};
use crate::scenario::{Construction, Growth, GuesserMode, Scenario, SlotKey};
use crate::trace::{Action, AllowVia, Module, RouteCase, SlotResetCause, StepId, TraceEvent};
use crate::universe::{Element, SetHandle, SetKind, Side, Stage, Universe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Tree15,
    Osp2,
}

impl Variant {
    fn module(self) -> Module {
        match self {
            Variant::Tree15 => Module::Tree15,
            Variant::Osp2 => Module::Osp2,
        }
    }

    fn step(self, n: u8) -> StepId {
        use StepId::*;
        let (t, o) = match n {
            0 => (T0, O0),
            1 => (T1, O1),
            2 => (T2, O2),
            3 => (T3, O3),
            4 => (T4, O4),
            5 => (T5, O5),
            6 => (T6, O6),
            _ => (T6, O7),
        };
        match self {
            Variant::Tree15 => t,
            Variant::Osp2 => o,
        }
    }

    /// The step that codes `D` into `A`.
    fn coding_step(self) -> StepId {
        match self {
            Variant::Tree15 => StepId::T6,
            Variant::Osp2 => StepId::O7,
        }
    }
}

/// The coding blocks `F_k`, disjoint runs of row 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodingBlocks {
    variant: Variant,
}

impl CodingBlocks {
    pub fn new(variant: Variant) -> Self {
        Self { variant }
    }

    pub fn size(&self, k: u64) -> u64 {
        match (self.variant, k) {
            (Variant::Tree15, 0) => 1,
            (Variant::Osp2, 0) => 2,
            (Variant::Tree15, k) => 2 * k * k,
            (Variant::Osp2, k) => 6 * k * k,
        }
    }

    /// Position within row 0 of the first element of `F_k`.
    pub fn start(&self, k: u64) -> u64 {
        if k == 0 {
            return 0;
        }
        // Σ_{k'<k, k'≥1} c·k'^2 = c·(k−1)k(2k−1)/6, saturating for huge k
        let k = k as u128;
        let sq = (k - 1) * k * (2 * k - 1) / 6;
        let start = match self.variant {
            Variant::Tree15 => 1 + 2 * sq,
            Variant::Osp2 => 2 + 6 * sq,
        };
        u64::try_from(start).unwrap_or(u64::MAX)
    }

    pub fn elements(&self, k: u64) -> impl Iterator<Item = Element> {
        let a = self.start(k);
        (a..a + self.size(k)).map(|x| pair(x, 0))
    }

    /// The `k` with `x ∈ F_k`. Every row-0 element lies in exactly one block.
    pub fn block_of(&self, x: Element) -> Option<u64> {
        let (c, row) = unpair(x);
        if row != 0 {
            return None;
        }
        let (mut lo, mut hi) = (0u64, 1u64);
        while self.start(hi) <= c && self.start(hi) < u64::MAX {
            lo = hi;
            hi *= 2;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.start(mid) <= c {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    }

    /// Upper bound on the elements coding `k` must avoid.
    pub fn prohibited_bound(&self, k: u64) -> u64 {
        let tri = k * (k + 1) / 2;
        match self.variant {
            Variant::Tree15 => tri,
            Variant::Osp2 => tri + (k + 1) * (k + 2) / 2,
        }
    }
}

/// `F_0, …, F_kmax` as explicit lists.
pub fn build_coding_blocks(variant: Variant, kmax: u64) -> Vec<Vec<Element>> {
    let b = CodingBlocks::new(variant);
    (0..=kmax).map(|k| b.elements(k).collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Active,
    /// Reset without entering `A`; these make up the `Z` sets.
    Inactive,
    Enumerated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WitnessInfo {
    pub node: Node,
    pub e: u32,
    pub n: u32,
    pub use_: u64,
    pub appointed: Stage,
    pub handle: SetHandle,
    pub status: Status,
    /// Stage of the last status change.
    pub changed: Stage,
}

impl WitnessInfo {
    pub fn h(&self) -> u32 {
        self.node.len() as u32
    }

    /// `⟨h, e⟩`.
    pub fn code(&self) -> u64 {
        pair(self.h() as u64, self.e as u64)
    }

    pub fn in_a_at(&self, s: Stage) -> bool {
        self.status == Status::Enumerated && self.changed <= s
    }

    pub fn inactive_at(&self, s: Stage) -> bool {
        self.status == Status::Inactive && self.changed <= s
    }
}

#[derive(Debug, Clone)]
pub struct Slot {
    pub n: u32,
    pub handle: SetHandle,
    /// Stage at which the current incarnation began.
    pub born: Stage,
    pub ell: bool,
    /// `P_{h,e}^α` holds an active witness (tree15 only uses this).
    pub active: bool,
    /// Stage `s` of the last witness added, 0 if none.
    pub last_add: Stage,
    pub resets: Vec<Stage>,
    truth: TruthLog,
}

/// One row of the Step 6 routing decision, with every fact it depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RoutingInput {
    pub i: u32,
    pub in_x_i: bool,
    pub in_a: bool,
    /// `|W_f(i) − (X_i ∪ A)|`.
    pub budget_used: u64,
    /// `x` is an inactive witness for some `⟨h,e⟩ < i`.
    pub inactive_low: bool,
    pub f_has_inactive: bool,
    /// `x` lies in a current `S_{h,e}^α`, `⟨h,e⟩ < i`, disjoint from `W_f(i)`.
    pub open_slot: bool,
}

/// Step 6: the first of cases (a)–(d) that applies.
pub fn osp_route(r: &RoutingInput) -> RouteCase {
    if !r.in_x_i && !r.in_a && r.budget_used < r.i as u64 + 1 {
        RouteCase::A
    } else if r.inactive_low && !r.f_has_inactive {
        RouteCase::B
    } else if !r.f_has_inactive && r.open_slot {
        RouteCase::C
    } else {
        RouteCase::D
    }
}

#[derive(Debug, Clone)]
pub struct TreeRun {
    variant: Variant,
    horizon: Stage,
    stage: Stage,
    levels: u32,
    width: u32,
    nodes: Vec<Node>,
    indices: Vec<u32>,
    /// Not yet instantiated requirements, latest first.
    pending: Vec<(Stage, u32)>,
    universe: Universe,
    w: Vec<SetHandle>,
    a: SetHandle,
    f_sets: Vec<SetHandle>,
    g_sets: Vec<SetHandle>,
    oracle: Oracle,
    slots: BTreeMap<(Node, u32), Slot>,
    witnesses: BTreeMap<Element, WitnessInfo>,
    max_witness: Element,
    delta: Vec<Node>,
    record: Vec<u64>,
    expansions: Vec<Vec<Stage>>,
    allows: Vec<bool>,
    disallow_n: Vec<Option<u64>>,
    one_shots: BTreeSet<(u32, u64, Node)>,
    last_allowed: BTreeMap<Node, Stage>,
    blocks: CodingBlocks,
    coded: BTreeMap<u64, Element>,
    routed: Vec<BTreeMap<Element, (RouteCase, Stage)>>,
    modes: Vec<GuesserMode>,
    points: BTreeMap<SlotKey, BTreeMap<Stage, bool>>,
    growth: Vec<Growth>,
    himage: BTreeMap<SlotKey, BTreeSet<Stage>>,
    events: Vec<TraceEvent>,
}

impl TreeRun {
    pub fn new(sc: &Scenario) -> Result<Self> {
        let variant = match sc.construction {
            Construction::Tree15 => Variant::Tree15,
            Construction::Osp2 => Variant::Osp2,
            other => {
                return Err(Error::Scenario {
                    line: 0,
                    msg: format!("{} is not a tree construction", other.name()),
                })
            }
        };
        let levels = sc.levels;
        let width = sc.sets.keys().next_back().map_or(0, |&e| e + 1).max(levels);
        let mut universe = Universe::new(sc.horizon);
        let mut w = Vec::new();
        for j in 0..width {
            let script: Vec<(Element, Stage)> = sc
                .sets
                .get(&j)
                .map(|m| m.iter().map(|(&x, &t)| (x, t)).collect())
                .unwrap_or_default();
            w.push(universe.register_set(SetKind::Scripted, Side::Plain, &script)?);
        }
        let a = universe.constructed(Side::Plain);
        let (mut f_sets, mut g_sets) = (Vec::new(), Vec::new());
        if variant == Variant::Osp2 {
            for _ in 0..width {
                f_sets.push(universe.constructed(Side::Plain));
                g_sets.push(universe.constructed(Side::Plain));
            }
        }
        let nodes = Node::all_below(levels as usize);
        // Requirement `e` gets its slots at the first stage a `Φ_e` is scripted.
        let mut first: BTreeMap<u32, Stage> = BTreeMap::new();
        for f in &sc.functionals {
            let t = first.entry(f.index).or_insert(f.stage);
            *t = (*t).min(f.stage);
        }
        let mut pending: Vec<(Stage, u32)> = first.into_iter().map(|(e, t)| (t, e)).collect();
        pending.sort_unstable_by(|a, b| b.cmp(a));
        let indices = Vec::new();
        let slots = BTreeMap::new();
        let oracle = Oracle::new(&sc.oracle, &sc.functionals, UseRule::Below);
        let mut run = TreeRun {
            variant,
            horizon: sc.horizon,
            stage: 0,
            levels,
            width,
            nodes,
            indices,
            pending,
            universe,
            w,
            a,
            f_sets,
            g_sets,
            oracle,
            slots,
            witnesses: BTreeMap::new(),
            max_witness: 0,
            delta: Vec::new(),
            record: Vec::new(),
            expansions: vec![Vec::new(); width as usize],
            allows: vec![true; width as usize],
            disallow_n: vec![None; width as usize],
            one_shots: BTreeSet::new(),
            last_allowed: BTreeMap::new(),
            blocks: CodingBlocks::new(variant),
            coded: BTreeMap::new(),
            routed: vec![BTreeMap::new(); width as usize],
            modes: (0..levels).map(|h| sc.guesser(h)).collect(),
            points: sc.guesses.clone(),
            growth: (0..levels)
                .map(|h| sc.growth.get(&h).copied().unwrap_or_default())
                .collect(),
            himage: sc.himage.clone(),
            events: Vec::new(),
        };
        run.record = (0..width).map(|j| run.free_at(j, 0).len() as u64).collect();
        let sizes = (0..levels).map(|h| 1u64 << h).collect();
        run.emit(
            run.variant.step(0),
            Action::Init {
                levels,
                sets: width,
                sizes,
            },
        );
        Ok(run)
    }

    pub fn run(sc: &Scenario) -> Result<Self> {
        let mut run = TreeRun::new(sc)?;
        while run.stage < run.horizon {
            run.step()?;
        }
        Ok(run)
    }

    fn emit(&mut self, step: StepId, action: Action) {
        self.events.push(TraceEvent {
            stage: self.stage,
            module: self.variant.module(),
            step,
            action,
        });
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn horizon(&self) -> Stage {
        self.horizon
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
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

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }

    pub fn blocks(&self) -> CodingBlocks {
        self.blocks
    }

    pub fn a(&self) -> SetHandle {
        self.a
    }

    pub fn w(&self, j: u32) -> SetHandle {
        self.w[j as usize]
    }

    pub fn w_f(&self, i: u32) -> Option<SetHandle> {
        self.f_sets.get(i as usize).copied()
    }

    pub fn w_g(&self, i: u32) -> Option<SetHandle> {
        self.g_sets.get(i as usize).copied()
    }

    pub fn witnesses(&self) -> &BTreeMap<Element, WitnessInfo> {
        &self.witnesses
    }

    pub fn slot(&self, node: Node, e: u32) -> Option<&Slot> {
        self.slots.get(&(node, e))
    }

    pub fn slots(&self) -> impl Iterator<Item = (&(Node, u32), &Slot)> {
        self.slots.iter()
    }

    /// `δ_s` for every completed `s`.
    pub fn paths(&self) -> &[Node] {
        &self.delta
    }

    pub fn expansionary_stages(&self, j: u32) -> &[Stage] {
        self.expansions.get(j as usize).map_or(&[], Vec::as_slice)
    }

    pub fn allows(&self, j: u32) -> bool {
        self.allows.get(j as usize).copied().unwrap_or(true)
    }

    /// The element of `F_k` that coded `k`, if any.
    pub fn coded(&self, k: u64) -> Option<Element> {
        self.coded.get(&k).copied()
    }

    pub fn routes(&self, i: u32) -> Option<&BTreeMap<Element, (RouteCase, Stage)>> {
        self.routed.get(i as usize)
    }

    pub fn in_a(&self, x: Element) -> bool {
        self.universe.set(self.a).is_ok_and(|s| s.contains(x))
    }

    pub fn in_a_at(&self, x: Element, s: Stage) -> bool {
        self.universe.set(self.a).is_ok_and(|a| a.contains_at(x, s))
    }

    /// `x ∈ Y^j` at stage `s`.
    pub fn in_y_at(&self, j: u32, x: Element, s: Stage) -> bool {
        self.witnesses
            .get(&x)
            .is_some_and(|w| w.h() <= j && w.appointed <= s)
    }

    /// `(W_j − (Y^j ∪ A))[s]` in increasing order.
    pub fn free_at(&self, j: u32, s: Stage) -> Vec<Element> {
        let Ok(w) = self.universe.set(self.w[j as usize]) else {
            return Vec::new();
        };
        w.members_at(s)
            .filter(|&x| !self.in_a_at(x, s) && !self.in_y_at(j, x, s))
            .collect()
    }

    /// `X_i`: witnesses, so far, of any `P_{h,e}` with `⟨h,e⟩ < i`.
    fn in_x(&self, i: u32, x: Element) -> bool {
        self.witnesses.get(&x).is_some_and(|w| w.code() < i as u64)
    }

    /// `W_f(i) − (X_i ∪ A)` now, in increasing order.
    pub fn f_budget(&self, i: u32) -> Vec<Element> {
        let Some(f) = self.w_f(i) else {
            return Vec::new();
        };
        let set = self.universe.set(f).expect("own handle");
        set.members()
            .into_iter()
            .filter(|&x| !self.in_x(i, x) && !self.in_a(x))
            .collect()
    }

    fn slot_key(node: Node, e: u32, n: u32) -> SlotKey {
        SlotKey::Tree { node, e, n }
    }

    fn h_guess(&self, node: Node, e: u32, q: Stage, completed: Stage) -> bool {
        let slot = &self.slots[&(node, e)];
        let key = Self::slot_key(node, e, slot.n);
        let mode = self.modes[node.len()];
        guess(mode, self.points.get(&key), &slot.truth, q, completed)
    }

    /// `|W_{h(r(α,e,n)), t}| > |W_{h(r(α,e,n)), t−1}|`.
    fn h_image_grows(&self, node: Node, e: u32, t: Stage) -> bool {
        let slot = &self.slots[&(node, e)];
        if let Some(pts) = self.himage.get(&Self::slot_key(node, e, slot.n)) {
            return pts.contains(&t);
        }
        match self.growth[node.len()] {
            Growth::Never => false,
            Growth::Every(p) => p > 0 && t.is_multiple_of(p),
            Growth::Burst(c) => t > slot.born && t - slot.born <= c,
        }
    }

    /// `x` lies in the current `S` of some slot with code below `i` that
    /// `W_f(i)` does not meet.
    fn in_open_slot(&self, i: u32, x: Element, f: &BTreeSet<Element>) -> bool {
        let Some(w) = self.witnesses.get(&x) else {
            return false;
        };
        if w.code() >= i as u64 {
            return false;
        }
        let slot = &self.slots[&(w.node, w.e)];
        if slot.handle != w.handle {
            return false;
        }
        !f.iter()
            .any(|y| self.witnesses.get(y).is_some_and(|v| v.handle == w.handle))
    }

    pub fn step(&mut self) -> Result<()> {
        if self.stage >= self.horizon {
            return Err(Error::ClockExhausted(self.horizon));
        }
        let s = self.stage;
        self.stage += 1;
        let t = self.stage;
        self.instantiate(t);
        self.step1(s);
        self.step2();
        self.step3(s, t);
        self.step4(s, t);
        self.step5(s, t);
        if self.variant == Variant::Osp2 {
            self.step6_route(t);
        }
        self.code(s, t)?;
        self.finish_stage(t);
        Ok(())
    }

    fn instantiate(&mut self, t: Stage) {
        while let Some(&(first, e)) = self.pending.last() {
            if first > t {
                break;
            }
            self.pending.pop();
            for &node in &self.nodes {
                let slot = Slot {
                    n: 0,
                    handle: self.universe.constructed(Side::Plain),
                    born: t,
                    ell: false,
                    active: false,
                    last_add: 0,
                    resets: Vec::new(),
                    truth: TruthLog::default(),
                };
                self.slots.insert((node, e), slot);
            }
            let at = self.indices.partition_point(|&e2| e2 < e);
            self.indices.insert(at, e);
        }
    }

    fn reset_slot(&mut self, node: Node, e: u32, cause: SlotResetCause, step: StepId) {
        let t = self.stage;
        let handle = self.universe.constructed(Side::Plain);
        let slot = self.slots.get_mut(&(node, e)).expect("slot exists");
        slot.n += 1;
        slot.handle = handle;
        slot.born = t;
        slot.ell = false;
        slot.active = false;
        slot.truth = TruthLog::default();
        slot.resets.push(t);
        let n = slot.n;
        let mut deactivated = Vec::new();
        for (&x, w) in self.witnesses.iter_mut() {
            if w.node == node && w.e == e && w.status == Status::Active {
                w.status = Status::Inactive;
                w.changed = t;
                deactivated.push(x);
            }
        }
        self.emit(
            step,
            Action::SlotReset {
                node,
                e,
                n,
                cause,
                deactivated,
            },
        );
    }

    /// Step 1: react to expansionary stages reached at stage `s`.
    fn step1(&mut self, s: Stage) {
        let step = self.variant.step(1);
        for j in 0..self.width {
            if self.expansions[j as usize].last() != Some(&s) || s == 0 {
                continue;
            }
            let size = self.record[j as usize];
            self.emit(step, Action::Expansion { j, size });
            if j + 1 >= self.levels {
                continue;
            }
            if !self.allows[j as usize] {
                self.allows[j as usize] = true;
                self.emit(
                    step,
                    Action::Allow {
                        j,
                        via: AllowVia::Expansion,
                    },
                );
            }
            let targets: Vec<Node> = self
                .nodes
                .iter()
                .copied()
                .filter(|n| n.len() > j as usize && n.bit(j as usize) == Some(true))
                .collect();
            for node in targets {
                for e in self.indices.clone() {
                    self.reset_slot(node, e, SlotResetCause::Expansion(j), step);
                }
            }
        }
    }

    fn node_allowed(&self, node: &Node) -> bool {
        (0..node.len()).all(|j| node.bit(j) == Some(true) || self.allows[j])
    }

    /// Step 2: one-shot re-allowance per `(j, N, β)`.
    fn step2(&mut self) {
        let step = self.variant.step(2);
        for j in 0..self.levels.min(self.width) {
            let (false, Some(n)) = (self.allows[j as usize], self.disallow_n[j as usize]) else {
                continue;
            };
            let pick = self
                .nodes
                .iter()
                .copied()
                .filter(|b| b.len() == j as usize)
                .find(|b| self.node_allowed(b) && !self.one_shots.contains(&(j, n, *b)));
            if let Some(node) = pick {
                self.one_shots.insert((j, n, node));
                self.allows[j as usize] = true;
                self.emit(
                    step,
                    Action::Allow {
                        j,
                        via: AllowVia::OneShot { n, node },
                    },
                );
            }
        }
    }

    /// `δ_s` from the expansionary stages up to `s`.
    fn path_at(&self, s: Stage) -> Node {
        let len = (s as usize).min(self.levels.saturating_sub(1) as usize);
        let mut delta = Node::ROOT;
        for j in 0..len {
            let lo = self
                .delta
                .iter()
                .rposition(|d| delta.is_prefix_of(d))
                .unwrap_or(0) as Stage;
            let fresh = self
                .expansions
                .get(j)
                .is_some_and(|ex| ex.iter().any(|&q| q > lo && q <= s));
            delta = delta.child(!fresh);
        }
        delta
    }

    fn eligible(&self, node: &Node, s: Stage, delta: &Node) -> bool {
        if node.len() > s as usize || !self.node_allowed(node) {
            return false;
        }
        if node.is_prefix_of(delta) {
            return true;
        }
        if !node.left_of(delta) {
            return false;
        }
        let Some(s_alpha) = self.delta[..s as usize]
            .iter()
            .rposition(|d| node.is_prefix_of(d))
        else {
            return false;
        };
        self.last_allowed
            .get(node)
            .is_none_or(|&t| t < s_alpha as Stage)
    }

    /// The condition on every `e' < e` shared by both variants.
    fn lower_indices_ok(&self, node: Node, e: u32, s: Stage) -> bool {
        let last = self.slots[&(node, e)].last_add;
        self.indices.iter().take_while(|&&e2| e2 < e).all(|&e2| {
            let conv = self.oracle.live(e2, 0, s).is_some();
            let ell = self.slots[&(node, e2)].ell;
            conv == ell || (conv && self.oracle.convergences_between(e2, 0, last, s) >= e as usize)
        })
    }

    /// Step 3: appoint witnesses along and left of `δ_s`.
    fn step3(&mut self, s: Stage, t: Stage) {
        let step = self.variant.step(3);
        let delta = self.path_at(s);
        self.delta.push(delta);
        self.emit(step, Action::Path { delta });
        for node in self.nodes.clone() {
            if !self.eligible(&node, s, &delta) {
                continue;
            }
            self.last_allowed.insert(node, s);
            let chosen: Vec<(u32, u64)> = self
                .indices
                .iter()
                .copied()
                .filter(|&e| e < s)
                .filter_map(|e| {
                    let comp = self.oracle.live(e, 0, s)?;
                    let slot = &self.slots[&(node, e)];
                    let ok = match self.variant {
                        Variant::Tree15 => !slot.active && !self.h_guess(node, e, s, s),
                        Variant::Osp2 => !slot.ell,
                    };
                    (ok && self.lower_indices_ok(node, e, s)).then_some((e, comp.use_))
                })
                .collect();
            for (e, comp_use) in chosen {
                let row = pair(node.heap_number(), e as u64);
                let x = least_in_row_above(row, self.max_witness.max(s as Element));
                self.max_witness = x;
                let use_ = match self.variant {
                    Variant::Tree15 => s as u64,
                    Variant::Osp2 => comp_use,
                };
                let slot = self.slots.get_mut(&(node, e)).expect("slot exists");
                slot.active = true;
                slot.last_add = s;
                let (n, handle) = (slot.n, slot.handle);
                self.universe
                    .enumerate(handle, x, t)
                    .expect("constructed handle");
                self.witnesses.insert(
                    x,
                    WitnessInfo {
                        node,
                        e,
                        n,
                        use_,
                        appointed: t,
                        handle,
                        status: Status::Active,
                        changed: t,
                    },
                );
                self.emit(
                    step,
                    Action::Witness {
                        node,
                        e,
                        n,
                        x,
                        use_,
                        handle: handle.index,
                    },
                );
            }
        }
    }

    /// The current `S_{h,e}^α` meets `Ā`.
    fn has_free_witness(&self, node: Node, e: u32) -> bool {
        let handle = self.slots[&(node, e)].handle;
        self.witnesses
            .values()
            .any(|w| w.handle == handle && w.status != Status::Enumerated)
    }

    /// Step 4: flip `ℓ_α(e)` to 1 for the least applicable `e` per node.
    fn step4(&mut self, s: Stage, t: Stage) {
        let step = self.variant.step(4);
        for node in self.nodes.clone() {
            let pick = self.indices.iter().copied().find(|&e| {
                let slot = &self.slots[&(node, e)];
                !slot.ell
                    && match self.variant {
                        Variant::Tree15 => slot.active && self.h_guess(node, e, t, s),
                        Variant::Osp2 => {
                            self.has_free_witness(node, e) && self.h_image_grows(node, e, t)
                        }
                    }
            });
            let Some(e) = pick else { continue };
            self.slots.get_mut(&(node, e)).expect("slot exists").ell = true;
            self.emit(
                step,
                Action::Ell {
                    node,
                    e,
                    value: true,
                },
            );
            for e2 in self.indices.clone().into_iter().filter(|&e2| e2 > e) {
                self.reset_slot(node, e2, SlotResetCause::Ell(e), step);
            }
        }
    }

    /// Step 5: permitted witnesses enter `A`; injured `L_j` disallow.
    fn step5(&mut self, s: Stage, t: Stage) {
        let step = self.variant.step(5);
        let changes = self.oracle.changes_at(t).to_vec();
        for &d in &changes {
            self.emit(step, Action::Oracle { d });
        }
        let Some(&least) = changes.first() else {
            return;
        };
        let permitted: Vec<(Element, WitnessInfo)> = self
            .witnesses
            .iter()
            .filter(|(_, w)| w.status == Status::Active && least < w.use_)
            .map(|(&x, w)| (x, *w))
            .collect();
        if permitted.is_empty() {
            return;
        }
        let free: Vec<Vec<Element>> = (0..self.width).map(|j| self.free_at(j, s)).collect();
        for (x, w) in &permitted {
            self.universe
                .enumerate(self.a, *x, t)
                .expect("constructed handle");
            let info = self.witnesses.get_mut(x).expect("witness");
            info.status = Status::Enumerated;
            info.changed = t;
            self.emit(
                step,
                Action::Permit {
                    node: w.node,
                    e: w.e,
                    x: *x,
                    use_: w.use_,
                    d: least,
                },
            );
            let slot = self.slots.get_mut(&(w.node, w.e)).expect("slot exists");
            if slot.handle == w.handle {
                if self.variant == Variant::Tree15 {
                    slot.active = false;
                }
                if slot.ell {
                    slot.ell = false;
                    self.emit(
                        step,
                        Action::Ell {
                            node: w.node,
                            e: w.e,
                            value: false,
                        },
                    );
                }
            }
        }
        let entrants: BTreeSet<Element> = permitted.iter().map(|(x, _)| *x).collect();
        for j in 0..self.width {
            let list = &free[j as usize];
            let Some(pos) = list.iter().position(|x| entrants.contains(x)) else {
                continue;
            };
            let n = pos as u64;
            self.allows[j as usize] = false;
            self.disallow_n[j as usize] = Some(n);
            self.emit(step, Action::Disallow { j, n });
        }
    }

    /// Step 6 of `osp2`: split each `W_i` into `W_f(i) ⊔ W_g(i)`.
    fn step6_route(&mut self, t: Stage) {
        let step = StepId::O6;
        for i in 0..self.width {
            let pending: Vec<Element> = self
                .universe
                .set(self.w[i as usize])
                .expect("own handle")
                .members_at(t)
                .filter(|x| !self.routed[i as usize].contains_key(x))
                .collect();
            for x in pending {
                let input = self.routing_input(i, x);
                let case = osp_route(&input);
                let target = if case.to_f() {
                    self.f_sets[i as usize]
                } else {
                    self.g_sets[i as usize]
                };
                self.universe
                    .enumerate(target, x, t)
                    .expect("constructed handle");
                self.routed[i as usize].insert(x, (case, t));
                self.emit(step, Action::Route { i, x, case });
                if case == RouteCase::A {
                    let targets: Vec<(Node, u32)> = self
                        .slots
                        .keys()
                        .copied()
                        .filter(|(node, e)| pair(node.len() as u64, *e as u64) >= i as u64)
                        .collect();
                    for (node, e) in targets {
                        self.reset_slot(node, e, SlotResetCause::Split(i), step);
                    }
                }
            }
        }
    }

    pub fn routing_input(&self, i: u32, x: Element) -> RoutingInput {
        let f: BTreeSet<Element> = self
            .universe
            .set(self.f_sets[i as usize])
            .expect("own handle")
            .members();
        let f_has_inactive = f.iter().any(|y| {
            self.witnesses
                .get(y)
                .is_some_and(|w| w.status == Status::Inactive)
        });
        let inactive_low = self
            .witnesses
            .get(&x)
            .is_some_and(|w| w.status == Status::Inactive && w.code() < i as u64);
        RoutingInput {
            i,
            in_x_i: self.in_x(i, x),
            in_a: self.in_a(x),
            budget_used: self.f_budget(i).len() as u64,
            inactive_low,
            f_has_inactive,
            open_slot: self.in_open_slot(i, x, &f),
        }
    }

    /// Coding: each `k ∈ D_{s+1} − D_s` sends one unprohibited `F_k` element into `A`.
    fn code(&mut self, s: Stage, t: Stage) -> Result<()> {
        let step = self.variant.coding_step();
        for k in self.oracle.changes_at(t).to_vec() {
            let mut avoided: BTreeSet<Element> = BTreeSet::new();
            for m in 1..=k {
                let j = k - m;
                if j < self.width as u64 {
                    avoided.extend(self.free_at(j as u32, s).into_iter().take(m as usize));
                }
            }
            if self.variant == Variant::Osp2 {
                for i in 0..k.saturating_add(1).min(self.width as u64) as u32 {
                    avoided.extend(self.f_budget(i).into_iter().take(i as usize + 1));
                }
            }
            let Some(x) = self
                .blocks
                .elements(k)
                .find(|x| !avoided.contains(x) && !self.in_a(*x))
            else {
                return Err(Error::CodingStarved { stage: t, k });
            };
            self.universe.enumerate(self.a, x, t)?;
            self.coded.insert(k, x);
            let avoided: Vec<Element> = avoided
                .into_iter()
                .filter(|y| self.blocks.block_of(*y) == Some(k))
                .collect();
            self.emit(step, Action::Code { k, x, avoided });
        }
        Ok(())
    }

    fn finish_stage(&mut self, t: Stage) {
        for j in 0..self.width {
            let size = self.free_at(j, t).len() as u64;
            if size > self.record[j as usize] {
                self.record[j as usize] = size;
                self.expansions[j as usize].push(t);
            }
        }
        let keys: Vec<(Node, u32)> = self.slots.keys().copied().collect();
        for (node, e) in keys {
            let truth = self.has_free_witness(node, e);
            self.slots
                .get_mut(&(node, e))
                .expect("slot exists")
                .truth
                .record(t, truth);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_sizes() {
        let b = CodingBlocks::new(Variant::Tree15);
        assert_eq!(b.elements(0).collect::<Vec<_>>(), vec![pair(0, 0)]);
        assert_eq!(b.size(3), 18);
        let o = CodingBlocks::new(Variant::Osp2);
        assert_eq!(o.size(0), 2);
        assert_eq!(o.size(2), 24);
    }

    #[test]
    fn blocks_tile_row_zero() {
        for v in [Variant::Tree15, Variant::Osp2] {
            let b = CodingBlocks::new(v);
            let mut seen = BTreeSet::new();
            for k in 0..=10 {
                for x in b.elements(k) {
                    assert!(seen.insert(x));
                    assert_eq!(b.block_of(x), Some(k));
                }
            }
            // Contiguous: the blocks cover an initial segment of row 0.
            let n = seen.len() as u64;
            assert!(seen.iter().copied().eq((0..n).map(|c| pair(c, 0))));
        }
    }

    #[test]
    fn block_of_far_elements_terminates() {
        let b = CodingBlocks::new(Variant::Osp2);
        assert!(b
            .block_of(u64::MAX)
            .is_none_or(|k| b.start(k) <= unpair(u64::MAX).0));
        let far = pair(u32::MAX as u64, 0);
        let k = b.block_of(far).unwrap();
        assert!(b.start(k) <= u32::MAX as u64 && b.start(k + 1) > u32::MAX as u64);
    }

    #[test]
    fn route_first_match() {
        let base = RoutingInput {
            i: 1,
            in_x_i: false,
            in_a: false,
            budget_used: 0,
            inactive_low: true,
            f_has_inactive: false,
            open_slot: true,
        };
        assert_eq!(osp_route(&base), RouteCase::A);
        assert_eq!(
            osp_route(&RoutingInput {
                budget_used: 2,
                ..base
            }),
            RouteCase::B
        );
        let c = RoutingInput {
            budget_used: 2,
            inactive_low: false,
            ..base
        };
        assert_eq!(osp_route(&c), RouteCase::C);
        assert_eq!(
            osp_route(&RoutingInput {
                open_slot: false,
                ..c
            }),
            RouteCase::D
        );
    }
}
