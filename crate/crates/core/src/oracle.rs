//! Scripted oracles (`D` or `B`) and the functionals computed from them.
//!
//! Inputs are stamped in script time. An input stamped `t` belongs to oracle
//! stage `t + 1`, so the construction's stage `s + 1` sees exactly the
//! inputs stamped `s` as the fresh change `X_{s+1} − X_s`, and a computation
//! stamped `t` converges at oracle stage `t + 1` from `X_{t+1}`.

use std::collections::BTreeMap;

use crate::scenario::FunctionalScript;
use crate::universe::{Element, Stage};

/// When an oracle change injures a computation with use `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UseRule {
    /// The computation read `X↾u`; a change at `d < u` injures it.
    Below,
    /// The use is the largest position read; a change at `d ≤ u` injures it.
    AtOrBelow,
}

impl UseRule {
    pub fn injures(self, d: Element, use_: u64) -> bool {
        match self {
            UseRule::Below => d < use_,
            UseRule::AtOrBelow => d <= use_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Computation {
    pub index: u32,
    pub arg: u64,
    pub converged: Stage,
    pub use_: u64,
    /// Oracle stage and element of the change that killed it.
    pub injured: Option<(Stage, Element)>,
}

impl Computation {
    pub fn live_at(&self, s: Stage) -> bool {
        self.converged <= s && self.injured.is_none_or(|(q, _)| q > s)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Oracle {
    entered: BTreeMap<Element, Stage>,
    by_stage: BTreeMap<Stage, Vec<Element>>,
    computations: BTreeMap<(u32, u64), Vec<Computation>>,
}

impl Oracle {
    pub fn new(
        script: &BTreeMap<Element, Stage>,
        functionals: &[FunctionalScript],
        rule: UseRule,
    ) -> Self {
        let entered: BTreeMap<Element, Stage> = script.iter().map(|(&x, &t)| (x, t + 1)).collect();
        let mut by_stage: BTreeMap<Stage, Vec<Element>> = BTreeMap::new();
        for (&x, &q) in &entered {
            by_stage.entry(q).or_default().push(x);
        }
        let mut computations: BTreeMap<(u32, u64), Vec<Computation>> = BTreeMap::new();
        let mut sorted = functionals.to_vec();
        sorted.sort();
        for f in sorted {
            let p = f.stage + 1;
            let list = computations.entry((f.index, f.arg)).or_default();
            if list.iter().any(|c| c.live_at(p)) {
                continue;
            }
            let injured = by_stage.range(p + 1..).find_map(|(&q, ds)| {
                ds.iter()
                    .copied()
                    .filter(|&d| rule.injures(d, f.use_))
                    .min()
                    .map(|d| (q, d))
            });
            list.push(Computation {
                index: f.index,
                arg: f.arg,
                converged: p,
                use_: f.use_,
                injured,
            });
        }
        Self {
            entered,
            by_stage,
            computations,
        }
    }

    /// Oracle stage at which `x` entered, if ever.
    pub fn entry(&self, x: Element) -> Option<Stage> {
        self.entered.get(&x).copied()
    }

    pub fn contains_at(&self, x: Element, s: Stage) -> bool {
        self.entry(x).is_some_and(|q| q <= s)
    }

    /// `X_s − X_{s−1}` in increasing order.
    pub fn changes_at(&self, s: Stage) -> &[Element] {
        self.by_stage.get(&s).map_or(&[], Vec::as_slice)
    }

    pub fn members(&self) -> impl Iterator<Item = (Element, Stage)> + '_ {
        self.entered.iter().map(|(&x, &q)| (x, q))
    }

    pub fn live(&self, index: u32, arg: u64, s: Stage) -> Option<&Computation> {
        self.computations
            .get(&(index, arg))?
            .iter()
            .find(|c| c.live_at(s))
    }

    pub fn history(&self, index: u32, arg: u64) -> &[Computation] {
        self.computations
            .get(&(index, arg))
            .map_or(&[], Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.computations.keys().copied()
    }

    /// Computations for `(index, arg)` that converged at a stage in `(lo, hi]`.
    pub fn convergences_between(&self, index: u32, arg: u64, lo: Stage, hi: Stage) -> usize {
        self.history(index, arg)
            .iter()
            .filter(|c| c.converged > lo && c.converged <= hi)
            .count()
    }

    /// Computations whose first stage is exactly `s`.
    pub fn converging_at(&self, s: Stage) -> Vec<&Computation> {
        self.computations
            .values()
            .flatten()
            .filter(|c| c.converged == s)
            .collect()
    }

    /// Largest oracle stage at which an element injuring use `u` entered.
    pub fn last_change_injuring(&self, use_: u64, rule: UseRule) -> Option<Stage> {
        self.entered
            .iter()
            .filter(|(&d, _)| rule.injures(d, use_))
            .map(|(_, &q)| q)
            .max()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(index: u32, arg: u64, stage: Stage, use_: u64) -> FunctionalScript {
        FunctionalScript {
            stage,
            index,
            arg,
            use_,
        }
    }

    #[test]
    fn stamps_shift_by_one() {
        let d: BTreeMap<_, _> = [(4, 2), (9, 6)].into_iter().collect();
        let o = Oracle::new(&d, &[], UseRule::Below);
        assert_eq!(o.changes_at(3), &[4]);
        assert!(!o.contains_at(4, 2));
        assert!(o.contains_at(4, 3));
    }

    #[test]
    fn injury_and_reconvergence() {
        let d: BTreeMap<_, _> = [(3, 4), (20, 8)].into_iter().collect();
        let scripts = [f(0, 0, 1, 5), f(0, 0, 2, 7), f(0, 0, 6, 9)];
        let o = Oracle::new(&d, &scripts, UseRule::Below);
        let h = o.history(0, 0);
        // The stage-2 script is ignored: the first computation is still live.
        assert_eq!(h.len(), 2);
        assert_eq!(h[0].injured, Some((5, 3)));
        assert_eq!(h[1].converged, 7);
        assert_eq!(h[1].injured, None);
        assert!(o.live(0, 0, 4).is_some());
        assert!(o.live(0, 0, 5).is_none());
        assert_eq!(o.convergences_between(0, 0, 0, 10), 2);
    }

    #[test]
    fn rules_differ_at_the_use() {
        let d: BTreeMap<_, _> = [(5, 3)].into_iter().collect();
        let s = [f(0, 0, 0, 5)];
        assert!(Oracle::new(&d, &s, UseRule::Below).history(0, 0)[0]
            .injured
            .is_none());
        assert!(Oracle::new(&d, &s, UseRule::AtOrBelow).history(0, 0)[0]
            .injured
            .is_some());
    }

    #[test]
    fn same_stage_change_does_not_injure() {
        let d: BTreeMap<_, _> = [(1, 4)].into_iter().collect();
        let o = Oracle::new(&d, &[f(0, 0, 4, 9)], UseRule::Below);
        assert!(o.history(0, 0)[0].injured.is_none());
    }
}
