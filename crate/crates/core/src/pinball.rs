//! The two-machine pinball construction.
//!
//! Elements flow up two corridors of gates, `M` for plain elements and `M̂`
//! for their hat copies, matched in pairs by `m`. Requirement `P_i` owns gate
//! `G_i` and fills `4^(i+1) + 1` witness slots there; once every slot holds a
//! witness and its guesser says so, two witnesses in the same i-state are
//! dumped, one into `A` and the partner of the other into `Â`, so entry
//! states match exactly. A scripted jump functional `Φ^Â_j(j)` restrains `Â`.
//!
//! Within a stage the order is: place, new jump computations, gates in
//! ascending `i`, skeleton enumeration, movement. Skeleton enumeration runs
//! after the dumps so an element never enters `Â` and `Û_n` (or `A` and
//! `V̂_n`) in the same stage.

use std::collections::{BTreeMap, BTreeSet};

use crate::check::CheckResult;
use crate::error::Result;
use crate::guesser::{guess, TruthLog};
use crate::scenario::{GuesserMode, Scenario, SlotKey};
use crate::trace::{Action, Module, ResetCause, Skeleton, StepId, TraceEvent, WitnessState};
use crate::universe::{
    check_extension_hypotheses, check_gateway_matching, first_stagewise_mismatch, EState, Element,
    ExtensionReport, Family, GatewayReport, SetHandle, SetKind, Side, Stage, StageMismatch,
    Universe,
};

/// Number of witness slots at gate `i`.
pub fn slot_count(i: u32) -> u32 {
    4u32.pow(i + 1) + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pos {
    Unplaced,
    At(u32),
    Removed,
}

impl Pos {
    pub fn gate(self) -> Option<u32> {
        match self {
            Pos::At(g) => Some(g),
            _ => None,
        }
    }
}

/// One incarnation of `S_k^i`.
#[derive(Debug, Clone)]
pub struct Slot {
    pub n: u32,
    pub handle: SetHandle,
    /// The member of `S_k^i ∩ Ā`, if any.
    pub current: Option<Element>,
    truth: TruthLog,
}

#[derive(Debug, Clone, Copy, Default)]
struct Gate {
    closed: bool,
    high_water: Option<Element>,
}

#[derive(Debug, Clone)]
pub struct Pinball {
    universe: Universe,
    horizon: Stage,
    stage: Stage,
    levels: u32,
    w: Vec<SetHandle>,
    u: Vec<SetHandle>,
    v: Vec<SetHandle>,
    u_hat: Vec<SetHandle>,
    v_hat: Vec<SetHandle>,
    a: SetHandle,
    a_hat: SetHandle,
    plain: Vec<Pos>,
    hat: Vec<Pos>,
    partner: Vec<Option<Element>>,
    partner_inv: Vec<Option<Element>>,
    arrival: Vec<Stage>,
    visited: Vec<u32>,
    rematched: Vec<u32>,
    gates: Vec<Gate>,
    slots: Vec<Vec<Slot>>,
    witness_of: BTreeMap<Element, (u32, u32)>,
    live: BTreeMap<u32, u64>,
    jumps: BTreeMap<Stage, Vec<(u32, u64)>>,
    modes: Vec<GuesserMode>,
    points: BTreeMap<SlotKey, BTreeMap<Stage, bool>>,
    events: Vec<TraceEvent>,
}

impl Pinball {
    pub fn new(sc: &Scenario) -> Result<Self> {
        let horizon = sc.horizon;
        let levels = sc.levels;
        let width = sc
            .sets
            .keys()
            .next_back()
            .map_or(0, |&e| e + 1)
            .max(levels)
            .max(1);
        let mut universe = Universe::new(horizon);
        universe.set_element_bound(horizon as Element);
        let mut w = Vec::new();
        for e in 0..width {
            let script: Vec<(Element, Stage)> = sc
                .sets
                .get(&e)
                .map(|m| m.iter().map(|(&x, &t)| (x, t)).collect())
                .unwrap_or_default();
            w.push(universe.register_set(SetKind::Scripted, Side::Plain, &script)?);
        }
        let mut fam = |side| {
            (0..width)
                .map(|_| universe.constructed(side))
                .collect::<Vec<_>>()
        };
        let u = fam(Side::Plain);
        let v_hat = fam(Side::Plain);
        let u_hat = fam(Side::Hat);
        let v = fam(Side::Hat);
        let a = universe.constructed(Side::Plain);
        let a_hat = universe.constructed(Side::Hat);
        let mut slots = Vec::new();
        for i in 0..levels {
            let row = (0..slot_count(i))
                .map(|_| Slot {
                    n: 0,
                    handle: universe.constructed(Side::Plain),
                    current: None,
                    truth: TruthLog::default(),
                })
                .collect();
            slots.push(row);
        }
        let mut jumps: BTreeMap<Stage, Vec<(u32, u64)>> = BTreeMap::new();
        for f in &sc.functionals {
            jumps.entry(f.stage).or_default().push((f.index, f.use_));
        }
        let cap = horizon as usize + 1;
        let mut pb = Pinball {
            universe,
            horizon,
            stage: 0,
            levels,
            w,
            u,
            v,
            u_hat,
            v_hat,
            a,
            a_hat,
            plain: vec![Pos::Unplaced; cap],
            hat: vec![Pos::Unplaced; cap],
            partner: vec![None; cap],
            partner_inv: vec![None; cap],
            arrival: vec![0; cap],
            visited: vec![0; cap],
            rematched: vec![0; cap],
            gates: vec![Gate::default(); levels as usize],
            slots,
            witness_of: BTreeMap::new(),
            live: BTreeMap::new(),
            jumps,
            modes: (0..levels).map(|i| sc.guesser(i)).collect(),
            points: sc.guesses.clone(),
            events: Vec::new(),
        };
        pb.emit(
            StepId::P0,
            Action::Init {
                levels,
                sets: width,
                sizes: (0..levels).map(|i| slot_count(i) as u64).collect(),
            },
        );
        Ok(pb)
    }

    pub fn run(sc: &Scenario) -> Result<Self> {
        let mut pb = Pinball::new(sc)?;
        while pb.stage < pb.horizon {
            pb.step()?;
        }
        Ok(pb)
    }

    fn emit(&mut self, step: StepId, action: Action) {
        self.events.push(TraceEvent {
            stage: self.stage,
            module: Module::Pinball,
            step,
            action,
        });
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    /// Number of indices in every skeleton family.
    pub fn width(&self) -> u32 {
        self.w.len() as u32
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }

    pub fn a(&self) -> SetHandle {
        self.a
    }

    pub fn a_hat(&self) -> SetHandle {
        self.a_hat
    }

    pub fn w(&self, e: u32) -> SetHandle {
        self.w[e as usize]
    }

    pub fn u(&self, e: u32) -> SetHandle {
        self.u[e as usize]
    }

    pub fn v(&self, e: u32) -> SetHandle {
        self.v[e as usize]
    }

    pub fn u_hat(&self, e: u32) -> SetHandle {
        self.u_hat[e as usize]
    }

    pub fn v_hat(&self, e: u32) -> SetHandle {
        self.v_hat[e as usize]
    }

    /// σ over `U_i`, τ over `V̂_i`.
    pub fn plain_family(&self) -> Family {
        Family {
            sigma: self.u.clone(),
            tau: self.v_hat.clone(),
        }
    }

    /// σ over `Û_i`, τ over `V_i`.
    pub fn hat_family(&self) -> Family {
        Family {
            sigma: self.u_hat.clone(),
            tau: self.v.clone(),
        }
    }

    pub fn position(&self, x: Element) -> Pos {
        self.plain.get(x as usize).copied().unwrap_or(Pos::Unplaced)
    }

    pub fn hat_position(&self, x: Element) -> Pos {
        self.hat.get(x as usize).copied().unwrap_or(Pos::Unplaced)
    }

    pub fn partner(&self, x: Element) -> Option<Element> {
        self.partner.get(x as usize).copied().flatten()
    }

    pub fn gate_open(&self, i: u32) -> bool {
        self.gates.get(i as usize).is_none_or(|g| !g.closed)
    }

    pub fn is_witness(&self, x: Element) -> bool {
        self.witness_of.contains_key(&x)
    }

    pub fn slot(&self, i: u32, k: u32) -> &Slot {
        &self.slots[i as usize][k as usize]
    }

    /// `r(j, s)`: the largest use of a live `Φ^Â_{j'}(j')` with `j' ≤ j`.
    pub fn restraint(&self, j: u32) -> u64 {
        self.live.range(..=j).map(|(_, &u)| u).max().unwrap_or(0)
    }

    fn i_state(&self, i: u32, x: Element, s: Stage) -> Result<EState> {
        self.universe.estate(i, x, s, &self.plain_family())
    }

    pub fn step(&mut self) -> Result<()> {
        let s = self.stage;
        let t = self.universe_advance()?;
        self.place(s);
        self.new_jumps(s);
        for i in 0..self.levels {
            self.gate_step(i, s, t)?;
        }
        self.skeleton(s, t)?;
        self.advance_elements(t);
        for row in &mut self.slots {
            for slot in row.iter_mut() {
                slot.truth.record(t, slot.current.is_some());
            }
        }
        Ok(())
    }

    fn universe_advance(&mut self) -> Result<Stage> {
        if self.stage >= self.horizon {
            return Err(crate::Error::ClockExhausted(self.horizon));
        }
        self.stage += 1;
        Ok(self.stage)
    }

    /// Step 1.
    fn place(&mut self, s: Stage) {
        let x = s as usize;
        self.plain[x] = Pos::At(0);
        self.hat[x] = Pos::At(0);
        self.partner[x] = Some(s as Element);
        self.partner_inv[x] = Some(s as Element);
        self.arrival[x] = self.stage;
        self.visited[x] = 1;
        self.emit(StepId::P1, Action::Place { x: s as Element });
    }

    /// Step 3: computations stamped `s` are `Φ^Â_j(j)[s]`.
    fn new_jumps(&mut self, s: Stage) {
        let Some(list) = self.jumps.get(&s).cloned() else {
            return;
        };
        let mut least: Option<u32> = None;
        for (j, use_) in list {
            if self.live.contains_key(&j) {
                continue;
            }
            self.live.insert(j, use_);
            self.emit(StepId::P3, Action::Converge { j, use_ });
            least = Some(least.map_or(j, |l| l.min(j)));
        }
        let Some(j) = least else { return };
        for i in 0..self.levels {
            for k in 0..slot_count(i) {
                if k + i + self.slots[i as usize][k as usize].n >= j {
                    self.reset_slot(i, k, ResetCause::Jump(j), StepId::P3);
                }
            }
        }
    }

    fn reset_slot(&mut self, i: u32, k: u32, cause: ResetCause, step: StepId) {
        let handle = self.universe.constructed(Side::Plain);
        let slot = &mut self.slots[i as usize][k as usize];
        slot.n += 1;
        slot.handle = handle;
        slot.truth = TruthLog::default();
        let cancelled = slot.current.take();
        let n = slot.n;
        if let Some(x) = cancelled {
            self.witness_of.remove(&x);
        }
        self.emit(
            step,
            Action::Reset {
                i,
                k,
                n,
                cause,
                cancelled,
            },
        );
    }

    fn phi(&self, i: u32, k: u32, s: Stage) -> bool {
        let slot = &self.slots[i as usize][k as usize];
        let key = SlotKey::Pinball { i, k, n: slot.n };
        guess(
            self.modes[i as usize],
            self.points.get(&key),
            &slot.truth,
            s,
            s,
        )
    }

    /// Step 4 for requirement `i`: Case 4A, else Case 4B.
    fn gate_step(&mut self, i: u32, s: Stage, t: Stage) -> Result<()> {
        let count = slot_count(i);
        let row = &self.slots[i as usize];
        let deficient = row.iter().position(|sl| sl.current.is_none());
        let guesses: Vec<bool> = (0..count).map(|k| self.phi(i, k, s)).collect();
        let closed = self.gates[i as usize].closed;
        if let Some(k) = deficient {
            let agree = (0..count as usize)
                .all(|k| guesses[k] == self.slots[i as usize][k].current.is_some());
            if closed || agree {
                self.fill(i, k as u32, t);
            }
            return Ok(());
        }
        if guesses.iter().all(|&g| g) {
            self.dump(i, s, t)?;
        }
        Ok(())
    }

    /// Case 4A.
    fn fill(&mut self, i: u32, k: u32, t: Stage) {
        if !self.gates[i as usize].closed {
            self.gates[i as usize].closed = true;
            self.emit(StepId::P4A, Action::Gate { i, open: false });
        }
        let n = self.slots[i as usize][k as usize].n;
        let threshold = i + k + n;
        let restraint = self.restraint(threshold);
        let hw = self.gates[i as usize].high_water;
        let above = |y: Element| hw.is_none_or(|h| y > h);
        let pick = (0..self.stage as usize).map(|x| x as Element).find(|&x| {
            let y = self.partner(x).unwrap_or(0);
            self.position(x) == Pos::At(i)
                && !self.is_witness(x)
                && above(x)
                && above(y)
                && y > restraint
        });
        let Some(x) = pick else { return };
        let y = self.partner(x).expect("on-machine elements are matched");
        let slot = &mut self.slots[i as usize][k as usize];
        slot.current = Some(x);
        let handle = slot.handle;
        self.universe
            .enumerate(handle, x, t)
            .expect("slot handles are constructed");
        self.witness_of.insert(x, (i, k));
        let g = &mut self.gates[i as usize];
        g.high_water = Some(hw.unwrap_or(0).max(x).max(y));
        self.emit(
            StepId::P4A,
            Action::Appoint {
                i,
                k,
                n,
                threshold,
                x,
                partner: y,
                restraint,
                handle: handle.index,
            },
        );
        if k == slot_count(i) - 1 {
            self.gates[i as usize].closed = false;
            self.emit(StepId::P4A, Action::Gate { i, open: true });
        }
    }

    /// Case 4B. States are read at stage `s`, the end of the previous stage.
    fn dump(&mut self, i: u32, s: Stage, t: Stage) -> Result<()> {
        let mut witnesses = Vec::new();
        for (k, slot) in self.slots[i as usize].iter().enumerate() {
            let x = slot.current.expect("every slot is filled");
            witnesses.push(WitnessState {
                k: k as u32,
                x,
                state: self.i_state(i, x, s)?,
            });
        }
        let mut by_x = witnesses.clone();
        by_x.sort_by_key(|w| w.x);
        let (w0, w1) = by_x
            .iter()
            .find_map(|w0| {
                by_x.iter()
                    .find(|w1| w1.x != w0.x && w1.state == w0.state)
                    .map(|w1| (*w0, *w1))
            })
            .expect("pigeonhole: more witnesses than i-states");
        let (x0, x1) = (w0.x, w1.x);
        let old_partner = self.partner(x0).expect("witness is on the machine");
        let a_hat = self.partner(x1).expect("witness is on the machine");
        self.emit(
            StepId::P4B,
            Action::Dump {
                i,
                x0,
                k0: w0.k,
                x1,
                k1: w1.k,
                a_hat,
                old_partner,
                witnesses,
            },
        );
        self.universe.enumerate(self.a, x0, t)?;
        self.universe.enumerate(self.a_hat, a_hat, t)?;
        self.plain[x0 as usize] = Pos::Removed;
        self.hat[a_hat as usize] = Pos::Removed;
        self.partner[x0 as usize] = None;
        self.partner_inv[a_hat as usize] = None;
        self.partner[x1 as usize] = Some(old_partner);
        self.partner_inv[old_partner as usize] = Some(x1);
        self.rematched[x1 as usize] += 1;
        let injured: Vec<(u32, u64)> = self
            .live
            .iter()
            .filter(|(_, &u)| a_hat <= u)
            .map(|(&j, &u)| (j, u))
            .collect();
        for (j, use_) in injured {
            self.live.remove(&j);
            self.emit(StepId::P4B, Action::Diverge { j, use_, by: a_hat });
        }
        self.witness_of.remove(&x0);
        self.slots[i as usize][w0.k as usize].current = None;
        for k in w0.k + 1..slot_count(i) {
            self.reset_slot(i, k, ResetCause::Dump, StepId::P4B);
        }
        Ok(())
    }

    /// Step 2, including the mirror rules for `Û` and `V̂`.
    fn skeleton(&mut self, s: Stage, t: Stage) -> Result<()> {
        for e in 0..self.width() {
            let members: Vec<Element> = self
                .universe
                .set(self.w[e as usize])?
                .members_at(s)
                .collect();
            for x in members {
                let reached = |p: Pos| match p {
                    Pos::At(g) => g >= e,
                    Pos::Removed => true,
                    Pos::Unplaced => false,
                };
                if reached(self.position(x)) && self.universe.enumerate(self.u[e as usize], x, t)? {
                    self.emit(
                        StepId::P2,
                        Action::Skeleton {
                            family: Skeleton::U,
                            e,
                            x,
                        },
                    );
                }
                if reached(self.hat_position(x))
                    && self.universe.enumerate(self.v[e as usize], x, t)?
                {
                    self.emit(
                        StepId::P2,
                        Action::Skeleton {
                            family: Skeleton::V,
                            e,
                            x,
                        },
                    );
                }
            }
            let in_u: Vec<Element> = self
                .universe
                .set(self.u[e as usize])?
                .members_at(t)
                .collect();
            for x in in_u {
                if let (Pos::At(_), Some(y)) = (self.position(x), self.partner(x)) {
                    if self.universe.enumerate(self.u_hat[e as usize], y, t)? {
                        self.emit(
                            StepId::P2,
                            Action::Skeleton {
                                family: Skeleton::UHat,
                                e,
                                x: y,
                            },
                        );
                    }
                }
            }
            let in_v: Vec<Element> = self
                .universe
                .set(self.v[e as usize])?
                .members_at(t)
                .collect();
            for y in in_v {
                let back = self.partner_inv.get(y as usize).copied().flatten();
                if let (Pos::At(_), Some(x)) = (self.hat_position(y), back) {
                    if self.universe.enumerate(self.v_hat[e as usize], x, t)? {
                        self.emit(
                            StepId::P2,
                            Action::Skeleton {
                                family: Skeleton::VHat,
                                e,
                                x,
                            },
                        );
                    }
                }
            }
        }
        Ok(())
    }

    /// Step 5.
    fn advance_elements(&mut self, t: Stage) {
        for x in 0..self.stage as Element {
            let Pos::At(g) = self.position(x) else {
                continue;
            };
            let y = self.partner(x).expect("on-machine elements are matched");
            if !self.gate_open(g) || self.is_witness(x) || x <= g as Element || y <= g as Element {
                continue;
            }
            self.plain[x as usize] = Pos::At(g + 1);
            self.hat[y as usize] = Pos::At(g + 1);
            self.arrival[x as usize] = t;
            self.visited[x as usize] += 1;
            self.emit(
                StepId::P5,
                Action::Move {
                    x,
                    partner: y,
                    gate: g + 1,
                },
            );
        }
    }

    // ----- post-run checks -----

    /// Censuses of `A` and `Â` at level `e`.
    pub fn gateway(&self, e: u32) -> Result<GatewayReport> {
        let ca = self
            .universe
            .entry_census(self.a, e, &self.plain_family())?;
        let cb = self
            .universe
            .entry_census(self.a_hat, e, &self.hat_family())?;
        check_gateway_matching(&ca, &cb, 0)
    }

    /// First stage and level at which the entry censuses differ, if any.
    pub fn stagewise_mismatch(&self) -> Result<Option<StageMismatch>> {
        for e in 0..self.width() {
            let ca = self
                .universe
                .entry_census(self.a, e, &self.plain_family())?;
            let cb = self
                .universe
                .entry_census(self.a_hat, e, &self.hat_family())?;
            if let Some(m) = first_stagewise_mismatch(&ca, &cb)? {
                return Ok(Some(m));
            }
        }
        Ok(None)
    }

    pub fn extension_hypotheses(&self) -> Result<ExtensionReport> {
        check_extension_hypotheses(&self.universe, self.a, self.a_hat, &self.u_hat, &self.v_hat)
    }

    /// Matched on-machine pairs must share a gate and a full e-state.
    pub fn partner_check(&self) -> Result<CheckResult> {
        let mut r = CheckResult::new("pinball/partners");
        let top = self.width() - 1;
        let mut seen = BTreeSet::new();
        for x in 0..self.stage as Element {
            let Pos::At(g) = self.position(x) else {
                continue;
            };
            let Some(y) = self.partner(x) else {
                r.fail(self.stage, format!("{x} on the machine without a partner"));
                continue;
            };
            if !seen.insert(y) {
                r.fail(self.stage, format!("hat element {y} matched twice"));
            }
            if self.hat_position(y) != Pos::At(g) {
                r.fail(
                    self.stage,
                    format!("{x} at G_{g} but its partner {y} is not"),
                );
            }
            let sx = self
                .universe
                .estate(top, x, self.stage, &self.plain_family())?;
            let sy = self
                .universe
                .estate(top, y, self.stage, &self.hat_family())?;
            if sx != sy {
                r.fail(
                    self.stage,
                    format!("{x} in state {sx}, partner {y} in state {sy}"),
                );
            }
            if self.rematched[x as usize] > self.visited[x as usize] {
                r.fail(
                    self.stage,
                    format!("{x} rematched more often than gates visited"),
                );
            }
        }
        Ok(r)
    }

    pub fn verify_skeleton(&self, e: u32) -> Result<SkeletonReport> {
        let mut rep = SkeletonReport {
            e,
            ..Default::default()
        };
        if e >= self.width() {
            return Ok(rep);
        }
        let h = self.stage;
        let w = self.universe.set(self.w[e as usize])?;
        let u = self.universe.set(self.u[e as usize])?;
        for (x, tu) in u.iter() {
            match w.entry(x) {
                Some(tw) if tw < tu => {}
                _ => rep.unsound.push(x),
            }
        }
        for (x, tw) in w.iter() {
            if u.contains(x) {
                continue;
            }
            let class = match self.position(x) {
                Pos::Unplaced => Some(Residual::InTransit),
                _ if tw >= h => Some(Residual::InTransit),
                Pos::Removed => None,
                Pos::At(g) if g >= e => {
                    (self.arrival[x as usize] == h && g == e).then_some(Residual::InTransit)
                }
                Pos::At(g) => {
                    let y = self.partner(x).unwrap_or(0);
                    if self.is_witness(x) {
                        Some(Residual::Witness)
                    } else if x <= g as Element || y <= g as Element {
                        Some(Residual::Small)
                    } else if !self.gate_open(g) {
                        Some(Residual::ClosedGate)
                    } else if self.arrival[x as usize] == h {
                        Some(Residual::InTransit)
                    } else {
                        rep.unclassified.push(x);
                        continue;
                    }
                }
            };
            match class {
                Some(c) => rep.residual.entry(c).or_default().push(x),
                None => rep.missing.push(x),
            }
        }
        Ok(rep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Residual {
    /// Currently a witness below `G_e`.
    Witness,
    /// `x ≤ g` or `m(x) ≤ g` at its gate `g`; it can never move on.
    Small,
    /// Held at a closed gate.
    ClosedGate,
    /// Not yet on the machine, or it moved during the final stage.
    InTransit,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkeletonReport {
    pub e: u32,
    /// `U_e` members not in `W_e` one stage earlier.
    pub unsound: Vec<Element>,
    /// `W_e` members that passed `G_e` or left the machine but are not in `U_e`.
    pub missing: Vec<Element>,
    pub residual: BTreeMap<Residual, Vec<Element>>,
    pub unclassified: Vec<Element>,
}

impl SkeletonReport {
    pub fn passed(&self) -> bool {
        self.unsound.is_empty() && self.missing.is_empty() && self.unclassified.is_empty()
    }
}

// ----- trace audits -----

struct Replay {
    sizes: Vec<u32>,
    n: BTreeMap<(u32, u32), u32>,
}

impl Replay {
    fn from_init(events: &[TraceEvent]) -> Option<Replay> {
        match events.first().map(|e| &e.action) {
            Some(Action::Init { sizes, .. }) => Some(Replay {
                sizes: sizes.iter().map(|&s| s as u32).collect(),
                n: BTreeMap::new(),
            }),
            _ => None,
        }
    }

    fn n(&self, i: u32, k: u32) -> u32 {
        self.n.get(&(i, k)).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Appointment {
    threshold: u32,
    partner: Element,
}

/// Lowness restraint audit over a pinball trace.
///
/// Recomputes `r(j, s)` from the jump events, checks every appointment
/// against it, checks that each `Â`-entrant is the appointed partner of its
/// witness, and that no entrant injures a live `Φ^Â_{j'}(j')` with `j'` at
/// most its witness's threshold. New computations must be followed by the
/// resets Step 3 requires.
pub fn verify_lowness_restraint(events: &[TraceEvent]) -> CheckResult {
    let mut r = CheckResult::new("pinball/restraint");
    let Some(mut rp) = Replay::from_init(events) else {
        r.fail(0, "trace does not start with an init record");
        return r;
    };
    let mut live: BTreeMap<u32, u64> = BTreeMap::new();
    let mut appointed: BTreeMap<Element, Appointment> = BTreeMap::new();
    let mut slot_of: BTreeMap<(u32, u32), Element> = BTreeMap::new();
    // Slots that must be reset at the current stage, keyed by stage.
    let mut owed: BTreeMap<(u32, u32), (Stage, u32)> = BTreeMap::new();
    let mut stage = 0;
    let restraint =
        |live: &BTreeMap<u32, u64>, j: u32| live.range(..=j).map(|(_, &u)| u).max().unwrap_or(0);
    let settle =
        |owed: &mut BTreeMap<(u32, u32), (Stage, u32)>, r: &mut CheckResult, upto: Stage| {
            owed.retain(|&(i, k), &mut (t, j)| {
                if t < upto {
                    r.fail(t, format!("Φ^Â_{j} converged but S_{k}^{i} was not reset"));
                    false
                } else {
                    true
                }
            });
        };
    for ev in events {
        if ev.stage != stage {
            settle(&mut owed, &mut r, ev.stage);
            stage = ev.stage;
        }
        match &ev.action {
            Action::Converge { j, use_ } => {
                if live.contains_key(j) {
                    r.fail(
                        stage,
                        format!("Φ^Â_{j} reported converging while already live"),
                    );
                }
                live.insert(*j, *use_);
                for (i, &count) in rp.sizes.iter().enumerate() {
                    for k in 0..count {
                        let i = i as u32;
                        if k + i + rp.n(i, k) >= *j {
                            owed.entry((i, k)).or_insert((stage, *j));
                        }
                    }
                }
            }
            Action::Diverge { j, use_, by } => match live.remove(j) {
                Some(u) if u == *use_ && by <= use_ => {}
                Some(u) => r.fail(stage, format!("Φ^Â_{j} (use {u}) reported injured by {by}")),
                None => r.fail(stage, format!("Φ^Â_{j} diverged while not live")),
            },
            Action::Reset {
                i,
                k,
                n,
                cause,
                cancelled,
            } => {
                if *n != rp.n(*i, *k) + 1 {
                    r.fail(
                        stage,
                        format!("S_{k}^{i} reset to n={n} from n={}", rp.n(*i, *k)),
                    );
                }
                rp.n.insert((*i, *k), *n);
                if matches!(cause, ResetCause::Jump(_)) {
                    owed.remove(&(*i, *k));
                }
                if let Some(x) = slot_of.remove(&(*i, *k)) {
                    appointed.remove(&x);
                    if *cancelled != Some(x) {
                        r.fail(
                            stage,
                            format!("reset of S_{k}^{i} did not cancel witness {x}"),
                        );
                    }
                }
            }
            Action::Appoint {
                i,
                k,
                n,
                threshold,
                x,
                partner,
                restraint: rec,
                ..
            } => {
                if *n != rp.n(*i, *k) || *threshold != i + k + n {
                    r.fail(
                        stage,
                        format!("appointment to S_{k}^{i} has stale threshold {threshold}"),
                    );
                }
                let want = restraint(&live, *threshold);
                if *rec != want {
                    r.fail(
                        stage,
                        format!("appointment of {x} recorded r={rec}, replay gives {want}"),
                    );
                }
                if *partner <= want {
                    r.fail(
                        stage,
                        format!("witness {x} has partner {partner} ≤ r({threshold})={want}"),
                    );
                }
                appointed.insert(
                    *x,
                    Appointment {
                        threshold: *threshold,
                        partner: *partner,
                    },
                );
                slot_of.insert((*i, *k), *x);
            }
            Action::Dump {
                i,
                x0,
                k0,
                x1,
                a_hat,
                ..
            } => {
                match appointed.get(x1) {
                    None => r.fail(
                        stage,
                        format!("Â-entrant {a_hat} pairs with non-witness {x1}"),
                    ),
                    Some(ap) => {
                        if ap.partner != *a_hat {
                            r.fail(
                                stage,
                                format!(
                                    "Â-entrant {a_hat} is not {x1}'s appointed partner {}",
                                    ap.partner
                                ),
                            );
                        }
                        for (&j, &u) in &live {
                            if *a_hat <= u && j <= ap.threshold {
                                r.fail(stage, format!(
                                    "Â-entrant {a_hat} injures Φ^Â_{j} (use {u}) protected by threshold {}",
                                    ap.threshold
                                ));
                            }
                        }
                    }
                }
                if appointed.remove(x0).is_none() {
                    r.fail(stage, format!("A-entrant {x0} is not a witness"));
                }
                slot_of.remove(&(*i, *k0));
            }
            _ => {}
        }
    }
    settle(&mut owed, &mut r, Stage::MAX);
    // Computations an entrant should have killed must not stay live.
    let mut live: BTreeMap<u32, u64> = BTreeMap::new();
    let mut pending: Option<(Stage, Element)> = None;
    for ev in events {
        if let Some((t, y)) = pending {
            if !matches!(ev.action, Action::Diverge { .. }) || ev.stage != t {
                for (&j, &u) in &live {
                    if y <= u {
                        r.fail(t, format!("Φ^Â_{j} (use {u}) survived Â-entrant {y}"));
                    }
                }
                pending = None;
            }
        }
        match &ev.action {
            Action::Converge { j, use_ } => {
                live.insert(*j, *use_);
            }
            Action::Diverge { j, .. } => {
                live.remove(j);
            }
            Action::Dump { a_hat, .. } => pending = Some((ev.stage, *a_hat)),
            _ => {}
        }
    }
    if let Some((t, y)) = pending {
        for (&j, &u) in &live {
            if y <= u {
                r.fail(t, format!("Φ^Â_{j} (use {u}) survived Â-entrant {y}"));
            }
        }
    }
    r
}

/// Every Case 4B firing pairs two witnesses in one i-state, picks the least
/// such `x_0` and least `x_1`, and has `k_0 < k_1`.
pub fn audit_pigeonhole(events: &[TraceEvent]) -> CheckResult {
    let mut r = CheckResult::new("pinball/pigeonhole");
    let mut firings = 0;
    for ev in events {
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
        let t = ev.stage;
        if witnesses.len() as u32 != slot_count(*i) {
            r.fail(
                t,
                format!(
                    "{} witnesses at gate {i}, expected {}",
                    witnesses.len(),
                    slot_count(*i)
                ),
            );
            continue;
        }
        let ks: BTreeSet<u32> = witnesses.iter().map(|w| w.k).collect();
        if ks.len() != witnesses.len() {
            r.fail(t, "witness slots repeat");
        }
        let states: BTreeSet<EState> = witnesses.iter().map(|w| w.state).collect();
        if states.len() > 4usize.pow(i + 1) {
            r.fail(
                t,
                format!("{} distinct {i}-states exceed 4^{}", states.len(), i + 1),
            );
        }
        let mut sorted = witnesses.clone();
        sorted.sort_by_key(|w| w.x);
        let want = sorted.iter().find_map(|a| {
            sorted
                .iter()
                .find(|b| b.x != a.x && b.state == a.state)
                .map(|b| (a.x, a.k, b.x, b.k))
        });
        match want {
            None => r.fail(t, "no same-state pair among the witnesses"),
            Some(w) if w != (*x0, *k0, *x1, *k1) => r.fail(
                t,
                format!("selected ({x0},{x1}) but the rule gives ({},{})", w.0, w.2),
            ),
            Some(_) => {}
        }
        if k0 >= k1 {
            r.fail(t, format!("k0={k0} is not below k1={k1}"));
        }
    }
    r.note(format!("{firings} case-4B firings"));
    r
}

/// Witness uniqueness per slot, reset accounting, and rematch bounds.
pub fn audit_pool(events: &[TraceEvent]) -> CheckResult {
    let mut r = CheckResult::new("pinball/pool");
    let Some(mut rp) = Replay::from_init(events) else {
        r.fail(0, "trace does not start with an init record");
        return r;
    };
    let mut current: BTreeMap<(u32, u32), Element> = BTreeMap::new();
    let mut visits: BTreeMap<Element, u32> = BTreeMap::new();
    let mut rematches: BTreeMap<Element, u32> = BTreeMap::new();
    let mut hat_visits: BTreeMap<Element, u32> = BTreeMap::new();
    let mut hat_rematches: BTreeMap<Element, u32> = BTreeMap::new();
    for ev in events {
        let t = ev.stage;
        match &ev.action {
            Action::Place { x } => {
                visits.insert(*x, 1);
                hat_visits.insert(*x, 1);
            }
            Action::Move { x, partner, .. } => {
                *visits.entry(*x).or_default() += 1;
                *hat_visits.entry(*partner).or_default() += 1;
            }
            Action::Appoint { i, k, x, .. } => {
                if let Some(old) = current.insert((*i, *k), *x) {
                    r.fail(
                        t,
                        format!("S_{k}^{i} already holds {old} ∉ A when {x} arrives"),
                    );
                }
            }
            Action::Reset {
                i,
                k,
                n,
                cause,
                cancelled,
            } => {
                let before = rp.n(*i, *k);
                if *n != before + 1 {
                    r.fail(t, format!("S_{k}^{i}: n jumped from {before} to {n}"));
                }
                let step_ok = matches!(
                    (cause, ev.step),
                    (ResetCause::Jump(_), StepId::P3) | (ResetCause::Dump, StepId::P4B)
                );
                if !step_ok {
                    r.fail(
                        t,
                        format!(
                            "S_{k}^{i} reset with cause {cause:?} under step {:?}",
                            ev.step
                        ),
                    );
                }
                rp.n.insert((*i, *k), *n);
                if current.remove(&(*i, *k)) != *cancelled {
                    r.fail(t, format!("reset of S_{k}^{i} cancelled the wrong witness"));
                }
            }
            Action::Dump {
                i,
                k0,
                x0,
                x1,
                old_partner,
                ..
            } => {
                if current.remove(&(*i, *k0)) != Some(*x0) {
                    r.fail(t, format!("{x0} is not the witness of S_{k0}^{i}"));
                }
                let c = rematches.entry(*x1).or_default();
                *c += 1;
                if *c > visits.get(x1).copied().unwrap_or(0) {
                    r.fail(t, format!("{x1} rematched more often than gates visited"));
                }
                let c = hat_rematches.entry(*old_partner).or_default();
                *c += 1;
                if *c > hat_visits.get(old_partner).copied().unwrap_or(0) {
                    r.fail(
                        t,
                        format!("hat {old_partner} rematched more often than gates visited"),
                    );
                }
            }
            _ => {}
        }
    }
    r
}

/// Gate closures and whether each reopened before the horizon.
pub fn gate_closures(events: &[TraceEvent]) -> Vec<(u32, Stage, Option<Stage>)> {
    let mut out = Vec::new();
    let mut open: BTreeMap<u32, usize> = BTreeMap::new();
    for ev in events {
        if let Action::Gate { i, open: o } = ev.action {
            if o {
                if let Some(idx) = open.remove(&i) {
                    let entry: &mut (u32, Stage, Option<Stage>) = &mut out[idx];
                    entry.2 = Some(ev.stage);
                }
            } else {
                open.insert(i, out.len());
                out.push((i, ev.stage, None));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Construction;

    fn scenario(text: &str) -> Scenario {
        Scenario::parse(&format!("construction pinball\n{text}")).unwrap()
    }

    #[test]
    fn stage_zero_is_initialization_only() {
        let pb = Pinball::run(&scenario("horizon 0\nlevels 2\n")).unwrap();
        assert_eq!(pb.events().len(), 1);
        assert!(pb.gate_open(0) && pb.gate_open(1));
        assert_eq!(pb.slot(1, 16).n, 0);
    }

    #[test]
    fn idle_run_moves_everything_up() {
        let mut sc = Scenario::new(Construction::Pinball, 12);
        sc.guessers.insert(0, GuesserMode::Const(false));
        let pb = Pinball::run(&sc).unwrap();
        for x in 0..12u64 {
            // Element x arrives at stage x+1 and climbs one gate per stage up to G_x.
            let g = (pb.stage() as u64 - x).min(x) as u32;
            assert_eq!(pb.position(x), Pos::At(g), "element {x}");
            assert_eq!(pb.partner(x), Some(x));
        }
    }

    #[test]
    fn jump_at_zero_resets_every_slot() {
        let pb = Pinball::run(&scenario(
            "horizon 3\nlevels 1\nfunctional 0 1 4\nguesser 0 const 0\n",
        ))
        .unwrap();
        for k in 0..5 {
            assert_eq!(pb.slot(0, k).n, 1);
        }
        assert_eq!(pb.restraint(0), 4);
        assert_eq!(pb.restraint(7), 4);
    }

    #[test]
    fn skeleton_picks_up_passing_elements() {
        let pb = Pinball::run(&scenario("horizon 12\nlevels 0\nset 0 5@1\n")).unwrap();
        assert!(pb.universe().set(pb.u(0)).unwrap().contains(5));
        assert!(pb.verify_skeleton(0).unwrap().passed());
    }

    #[test]
    fn restraint_steers_the_choice() {
        // Candidates at G_0 are elements placed early; restraint 10 rules out small partners.
        let pb = Pinball::run(&scenario(
            "horizon 14\nlevels 1\nfunctional 4 0 10\nguesser 0 track 0\n",
        ))
        .unwrap();
        for ev in pb.events() {
            if let Action::Appoint {
                partner, restraint, ..
            } = ev.action
            {
                assert!(partner > restraint);
            }
        }
    }

    #[test]
    fn tracking_guesser_produces_dumps_with_matching() {
        let sc = scenario(
            "horizon 120\nlevels 1\nset 0 9@3 11@5 14@20 15@21 30@22 31@40\nguesser 0 track 0\n",
        );
        let pb = Pinball::run(&sc).unwrap();
        let dumps = pb
            .events()
            .iter()
            .filter(|e| matches!(e.action, Action::Dump { .. }))
            .count();
        assert!(dumps > 0);
        assert_eq!(pb.stagewise_mismatch().unwrap(), None);
        assert!(pb.extension_hypotheses().unwrap().passed());
        assert!(audit_pigeonhole(pb.events()).passed());
        assert!(verify_lowness_restraint(pb.events()).passed());
        assert!(audit_pool(pb.events()).passed());
        assert!(pb.partner_check().unwrap().passed());
        for e in 0..pb.width() {
            let rep = pb.verify_skeleton(e).unwrap();
            assert!(rep.passed(), "{rep:?}");
        }
    }
}
