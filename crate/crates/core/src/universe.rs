//! The closed universe of stagewise set enumerations.
//!
//! Every set a run talks about lives in one registry: the scripted inputs
//! standing in for the listing `{W_e}`, and every set a construction builds.
//! Index functions that would normally come from the recursion theorem are
//! just registry allocation here.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Stage = u32;
pub type Element = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Scripted,
    Constructed,
}

/// Which copy of ω a set lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Plain,
    Hat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SetHandle {
    pub index: u32,
    pub kind: SetKind,
    pub side: Side,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageClock {
    current: Stage,
    horizon: Stage,
}

impl StageClock {
    pub fn new(horizon: Stage) -> Self {
        Self {
            current: 0,
            horizon,
        }
    }

    pub fn current(&self) -> Stage {
        self.current
    }

    pub fn horizon(&self) -> Stage {
        self.horizon
    }

    pub fn done(&self) -> bool {
        self.current >= self.horizon
    }

    /// Moves to the next stage and returns it.
    pub fn advance(&mut self) -> Result<Stage> {
        if self.current >= self.horizon {
            return Err(Error::ClockExhausted(self.horizon));
        }
        self.current += 1;
        Ok(self.current)
    }
}

/// A monotone enumeration: each member carries the stage at which it entered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedSet {
    handle: SetHandle,
    members: BTreeMap<Element, Stage>,
}

impl StagedSet {
    pub fn handle(&self) -> SetHandle {
        self.handle
    }

    pub fn entry(&self, x: Element) -> Option<Stage> {
        self.members.get(&x).copied()
    }

    pub fn contains_at(&self, x: Element, s: Stage) -> bool {
        matches!(self.members.get(&x), Some(&t) if t <= s)
    }

    /// Final membership, i.e. at the horizon.
    pub fn contains(&self, x: Element) -> bool {
        self.members.contains_key(&x)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len_at(&self, s: Stage) -> usize {
        self.members.values().filter(|&&t| t <= s).count()
    }

    /// `(element, entry stage)` pairs in element order.
    pub fn iter(&self) -> impl Iterator<Item = (Element, Stage)> + '_ {
        self.members.iter().map(|(&x, &t)| (x, t))
    }

    pub fn members_at(&self, s: Stage) -> impl Iterator<Item = Element> + '_ {
        self.members
            .iter()
            .filter(move |(_, &t)| t <= s)
            .map(|(&x, _)| x)
    }

    pub fn members(&self) -> BTreeSet<Element> {
        self.members.keys().copied().collect()
    }
}

/// Membership masks `⟨e, σ, τ⟩`; bit `i` of `sigma` is membership in the
/// `i`-th set of the σ-family, likewise for `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EState {
    pub e: u32,
    pub sigma: u64,
    pub tau: u64,
}

impl EState {
    /// All `4^(e+1)` states at level `e`.
    pub fn all(e: u32) -> impl Iterator<Item = EState> {
        let width = 1u64 << (e + 1);
        (0..width).flat_map(move |sigma| (0..width).map(move |tau| EState { e, sigma, tau }))
    }
}

impl fmt::Display for EState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits = |m: u64| {
            (0..=self.e)
                .filter(|i| m >> i & 1 == 1)
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(
            f,
            "<{},{{{}}},{{{}}}>",
            self.e,
            bits(self.sigma),
            bits(self.tau)
        )
    }
}

/// The two families an e-state is read from. On the plain side σ reads
/// `U_i` and τ reads `V̂_i`; on the hat side σ reads `Û_i` and τ reads `V_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Family {
    pub sigma: Vec<SetHandle>,
    pub tau: Vec<SetHandle>,
}

impl Family {
    pub fn levels(&self) -> u32 {
        self.sigma.len().min(self.tau.len()) as u32
    }
}

/// Entrants of a target set, partitioned by their e-state one stage before entry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntryCensus {
    pub e: u32,
    pub classes: BTreeMap<EState, Vec<(Element, Stage)>>,
}

impl EntryCensus {
    pub fn total(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn count(&self, state: &EState) -> usize {
        self.classes.get(state).map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone)]
pub struct Universe {
    horizon: Stage,
    element_bound: Option<Element>,
    sets: Vec<StagedSet>,
}

impl Universe {
    pub fn new(horizon: Stage) -> Self {
        Self {
            horizon,
            element_bound: None,
            sets: Vec::new(),
        }
    }

    pub fn horizon(&self) -> Stage {
        self.horizon
    }

    /// Restricts the elements `estate` will answer for.
    pub fn set_element_bound(&mut self, bound: Element) {
        self.element_bound = Some(bound);
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn register_set(
        &mut self,
        kind: SetKind,
        side: Side,
        script: &[(Element, Stage)],
    ) -> Result<SetHandle> {
        let index = self.sets.len() as u32;
        let handle = SetHandle { index, kind, side };
        let mut members = BTreeMap::new();
        if kind == SetKind::Scripted {
            for &(x, t) in script {
                if t > self.horizon {
                    return Err(Error::BeyondHorizon {
                        stage: t,
                        horizon: self.horizon,
                    });
                }
                if members.insert(x, t).is_some() {
                    return Err(Error::DuplicateEntry { index, element: x });
                }
            }
        }
        self.sets.push(StagedSet { handle, members });
        Ok(handle)
    }

    pub fn constructed(&mut self, side: Side) -> SetHandle {
        self.register_set(SetKind::Constructed, side, &[])
            .expect("empty script is valid")
    }

    pub fn set(&self, h: SetHandle) -> Result<&StagedSet> {
        self.sets
            .get(h.index as usize)
            .ok_or(Error::UnknownHandle(h.index))
    }

    /// Adds `x` to a constructed set at `stage`. Returns false if already a member.
    pub fn enumerate(&mut self, h: SetHandle, x: Element, stage: Stage) -> Result<bool> {
        if stage > self.horizon {
            return Err(Error::BeyondHorizon {
                stage,
                horizon: self.horizon,
            });
        }
        let set = self
            .sets
            .get_mut(h.index as usize)
            .ok_or(Error::UnknownHandle(h.index))?;
        if set.handle.kind != SetKind::Constructed {
            return Err(Error::NotConstructed(h.index));
        }
        if set.members.contains_key(&x) {
            return Ok(false);
        }
        set.members.insert(x, stage);
        Ok(true)
    }

    /// `{ x | ∃s < horizon : x ∈ U_{s+1} and x ∉ V_s }`.
    pub fn before(&self, u: SetHandle, v: SetHandle) -> Result<BTreeSet<Element>> {
        let (us, vs) = (self.set(u)?, self.set(v)?);
        let mut out = BTreeSet::new();
        for (x, tu) in us.iter() {
            // Least admissible s is max(tu - 1, 0); it works iff x ∉ V_s and s < horizon.
            let s = tu.saturating_sub(1);
            let outside_v = vs.entry(x).is_none_or(|tv| tv > s);
            if s < self.horizon && outside_v {
                out.insert(x);
            }
        }
        Ok(out)
    }

    /// `before(U, V) ∩ V`: enters U first, then V.
    pub fn before_then(&self, u: SetHandle, v: SetHandle) -> Result<BTreeSet<Element>> {
        let vs = self.set(v)?;
        Ok(self
            .before(u, v)?
            .into_iter()
            .filter(|&x| vs.contains(x))
            .collect())
    }

    pub fn estate(&self, e: u32, x: Element, s: Stage, family: &Family) -> Result<EState> {
        if let Some(bound) = self.element_bound {
            if x > bound {
                return Err(Error::ElementOutOfRange { x, bound });
            }
        }
        self.estate_unbounded(e, x, s, family)
    }

    /// Entrants of `target` at stages `s + 1 >= 1`, keyed by their state at `s`.
    /// Members present from stage 0 did not enter at any `s + 1` and are skipped.
    pub fn entry_census(&self, target: SetHandle, e: u32, family: &Family) -> Result<EntryCensus> {
        let mut census = EntryCensus {
            e,
            classes: BTreeMap::new(),
        };
        for (x, t) in self.set(target)?.iter() {
            if t == 0 {
                continue;
            }
            let state = self.estate_unbounded(e, x, t - 1, family)?;
            census.classes.entry(state).or_default().push((x, t));
        }
        for list in census.classes.values_mut() {
            list.sort_by_key(|&(x, t)| (t, x));
        }
        Ok(census)
    }

    fn estate_unbounded(&self, e: u32, x: Element, s: Stage, family: &Family) -> Result<EState> {
        if e >= family.levels() {
            return Err(Error::LevelOutOfRange {
                e,
                available: family.levels(),
            });
        }
        let mut state = EState {
            e,
            sigma: 0,
            tau: 0,
        };
        for i in 0..=e as usize {
            if self.set(family.sigma[i])?.contains_at(x, s) {
                state.sigma |= 1 << i;
            }
            if self.set(family.tau[i])?.contains_at(x, s) {
                state.tau |= 1 << i;
            }
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayRow {
    pub state: EState,
    pub left: usize,
    pub right: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayReport {
    pub e: u32,
    pub slack: usize,
    pub rows: Vec<GatewayRow>,
}

impl GatewayReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| !r.flagged)
    }

    pub fn exact(&self) -> bool {
        self.rows.iter().all(|r| r.left == r.right)
    }
}

/// Flags states where one side is empty and the other exceeds `slack`.
pub fn check_gateway_matching(
    a: &EntryCensus,
    b: &EntryCensus,
    slack: usize,
) -> Result<GatewayReport> {
    if a.e != b.e {
        return Err(Error::MismatchedLevels {
            left: a.e,
            right: b.e,
        });
    }
    let states: BTreeSet<EState> = a.classes.keys().chain(b.classes.keys()).copied().collect();
    let rows = states
        .into_iter()
        .map(|state| {
            let (left, right) = (a.count(&state), b.count(&state));
            let flagged = (left == 0 && right > slack) || (right == 0 && left > slack);
            GatewayRow {
                state,
                left,
                right,
                flagged,
            }
        })
        .collect();
    Ok(GatewayReport {
        e: a.e,
        slack,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageMismatch {
    pub stage: Stage,
    pub state: EState,
    pub left: usize,
    pub right: usize,
}

/// First stage at which the cumulative per-state counts of two censuses differ.
pub fn first_stagewise_mismatch(a: &EntryCensus, b: &EntryCensus) -> Result<Option<StageMismatch>> {
    if a.e != b.e {
        return Err(Error::MismatchedLevels {
            left: a.e,
            right: b.e,
        });
    }
    let mut events: BTreeMap<Stage, Vec<(EState, bool)>> = BTreeMap::new();
    for (census, left) in [(a, true), (b, false)] {
        for (state, list) in &census.classes {
            for &(_, t) in list {
                events.entry(t).or_default().push((*state, left));
            }
        }
    }
    let mut counts: BTreeMap<EState, (usize, usize)> = BTreeMap::new();
    for (stage, list) in events {
        for &(state, left) in &list {
            let c = counts.entry(state).or_default();
            if left {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
        for &(state, _) in &list {
            let (l, r) = counts[&state];
            if l != r {
                return Ok(Some(StageMismatch {
                    stage,
                    state,
                    left: l,
                    right: r,
                }));
            }
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HypothesisViolation {
    /// `true` for `Â↘Û_n`, `false` for `A↘V̂_n`.
    pub hat_side: bool,
    pub n: u32,
    pub element: Element,
    pub target_entry: Stage,
    pub family_entry: Stage,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtensionReport {
    pub checked: u32,
    pub violations: Vec<HypothesisViolation>,
}

impl ExtensionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Verifies `Â↘Û_n = ∅ = A↘V̂_n` for every registered `n`.
pub fn check_extension_hypotheses(
    u: &Universe,
    a: SetHandle,
    a_hat: SetHandle,
    u_hat: &[SetHandle],
    v_hat: &[SetHandle],
) -> Result<ExtensionReport> {
    let mut report = ExtensionReport::default();
    let mut scan = |target: SetHandle, fam: &[SetHandle], hat_side: bool| -> Result<()> {
        for (n, &h) in fam.iter().enumerate() {
            report.checked += 1;
            for x in u.before_then(target, h)? {
                report.violations.push(HypothesisViolation {
                    hat_side,
                    n: n as u32,
                    element: x,
                    target_entry: u.set(target)?.entry(x).unwrap_or(0),
                    family_entry: u.set(h)?.entry(x).unwrap_or(0),
                });
            }
        }
        Ok(())
    };
    scan(a_hat, u_hat, true)?;
    scan(a, v_hat, false)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scripted(u: &mut Universe, script: &[(Element, Stage)]) -> SetHandle {
        u.register_set(SetKind::Scripted, Side::Plain, script)
            .unwrap()
    }

    #[test]
    fn registration_is_sequential() {
        let mut u = Universe::new(10);
        let a = scripted(&mut u, &[]);
        let b = scripted(&mut u, &[]);
        assert_eq!((a.index, b.index), (0, 1));
        assert!(u.set(a).unwrap().is_empty());
    }

    #[test]
    fn script_membership_by_stage() {
        let mut u = Universe::new(10);
        let h = scripted(&mut u, &[(5, 3)]);
        let s = u.set(h).unwrap();
        assert!(!s.contains_at(5, 2));
        assert!(s.contains_at(5, 3));
    }

    #[test]
    fn duplicate_and_late_entries_rejected() {
        let mut u = Universe::new(10);
        assert!(matches!(
            u.register_set(SetKind::Scripted, Side::Plain, &[(1, 2), (1, 4)]),
            Err(Error::DuplicateEntry { element: 1, .. })
        ));
        assert!(matches!(
            u.register_set(SetKind::Scripted, Side::Plain, &[(1, 11)]),
            Err(Error::BeyondHorizon { .. })
        ));
    }

    #[test]
    fn scripted_sets_are_read_only() {
        let mut u = Universe::new(10);
        let h = scripted(&mut u, &[]);
        assert_eq!(u.enumerate(h, 1, 1), Err(Error::NotConstructed(0)));
    }

    #[test]
    fn before_examples() {
        let mut u = Universe::new(10);
        let a = scripted(&mut u, &[(7, 2)]);
        let b = scripted(&mut u, &[(7, 5)]);
        assert!(u.before(a, b).unwrap().contains(&7));
        assert!(u.before_then(a, b).unwrap().contains(&7));
        assert!(!u.before_then(b, a).unwrap().contains(&7));
        let same = scripted(&mut u, &[(1, 1), (2, 4), (3, 9)]);
        assert_eq!(
            u.before(same, same).unwrap(),
            u.set(same).unwrap().members()
        );
        let empty = scripted(&mut u, &[]);
        assert!(u.before(empty, a).unwrap().is_empty());
        assert!(u.before_then(a, empty).unwrap().is_empty());
    }

    #[test]
    fn estate_counts_and_masks() {
        assert_eq!(EState::all(0).count(), 4);
        for e in 0..=3u32 {
            let all: BTreeSet<_> = EState::all(e).collect();
            assert_eq!(all.len(), 4usize.pow(e + 1));
        }
        let mut u = Universe::new(10);
        let u0 = scripted(&mut u, &[(4, 2)]);
        let v0 = scripted(&mut u, &[]);
        let fam = Family {
            sigma: vec![u0],
            tau: vec![v0],
        };
        assert_eq!(
            u.estate(0, 4, 1, &fam).unwrap(),
            EState {
                e: 0,
                sigma: 0,
                tau: 0
            }
        );
        assert_eq!(
            u.estate(0, 4, 2, &fam).unwrap(),
            EState {
                e: 0,
                sigma: 1,
                tau: 0
            }
        );
        assert!(u.estate(1, 4, 2, &fam).is_err());
    }

    #[test]
    fn census_single_entrant() {
        let mut u = Universe::new(10);
        let t = scripted(&mut u, &[(3, 4)]);
        let u0 = scripted(&mut u, &[]);
        let v0 = scripted(&mut u, &[]);
        let fam = Family {
            sigma: vec![u0],
            tau: vec![v0],
        };
        let c = u.entry_census(t, 0, &fam).unwrap();
        assert_eq!(c.classes.len(), 1);
        assert_eq!(
            c.classes[&EState {
                e: 0,
                sigma: 0,
                tau: 0
            }],
            vec![(3, 4)]
        );
    }

    #[test]
    fn gateway_flags_one_sided_states() {
        let st = EState {
            e: 0,
            sigma: 1,
            tau: 0,
        };
        let mut a = EntryCensus {
            e: 0,
            classes: BTreeMap::new(),
        };
        a.classes.insert(st, vec![(1, 1), (2, 2), (3, 3)]);
        let b = EntryCensus {
            e: 0,
            classes: BTreeMap::new(),
        };
        let r = check_gateway_matching(&a, &b, 0).unwrap();
        assert!(!r.passed());
        assert!(check_gateway_matching(&b, &b, 0).unwrap().passed());
        let c = EntryCensus {
            e: 1,
            classes: BTreeMap::new(),
        };
        assert!(check_gateway_matching(&a, &c, 0).is_err());
    }

    #[test]
    fn adversarial_extension_violation() {
        let mut u = Universe::new(10);
        let a = scripted(&mut u, &[]);
        let a_hat = u
            .register_set(SetKind::Scripted, Side::Hat, &[(9, 3)])
            .unwrap();
        let u_hat = u
            .register_set(SetKind::Scripted, Side::Hat, &[(9, 5)])
            .unwrap();
        let v_hat = scripted(&mut u, &[]);
        let r = check_extension_hypotheses(&u, a, a_hat, &[u_hat], &[v_hat]).unwrap();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].element, 9);
        assert!(r.violations[0].hat_side);
    }
}
