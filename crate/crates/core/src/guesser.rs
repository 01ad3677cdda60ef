//! Scripted guessers `φ_i(·, s)` and `h(·, s)`.

use std::collections::BTreeMap;

use crate::scenario::GuesserMode;
use crate::universe::Stage;

/// End-of-stage history of a boolean, recorded as change points.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TruthLog {
    changes: Vec<(Stage, bool)>,
}

impl TruthLog {
    pub fn record(&mut self, stage: Stage, value: bool) {
        if self.at(stage) != value {
            self.changes.push((stage, value));
        }
    }

    /// Value at the end of stage `s`; false before the first record.
    pub fn at(&self, s: Stage) -> bool {
        self.changes
            .iter()
            .rev()
            .find(|(t, _)| *t <= s)
            .is_some_and(|&(_, v)| v)
    }
}

/// Evaluates a guesser at query time `q`, with `completed` the last finished
/// stage. Explicit points win over the mode; they form a step function that
/// is 0 before the first point.
pub fn guess(
    mode: GuesserMode,
    points: Option<&BTreeMap<Stage, bool>>,
    truth: &TruthLog,
    q: Stage,
    completed: Stage,
) -> bool {
    if let Some(pts) = points {
        return pts.range(..=q).next_back().is_some_and(|(_, &v)| v);
    }
    match mode {
        GuesserMode::Const(v) => v,
        GuesserMode::Track { lag } => match q.min(completed).checked_sub(lag) {
            Some(t) => truth.at(t),
            None => false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracking_with_lag() {
        let mut log = TruthLog::default();
        log.record(3, true);
        log.record(4, true);
        log.record(7, false);
        let m = GuesserMode::Track { lag: 1 };
        assert!(!guess(m, None, &log, 3, 10));
        assert!(guess(m, None, &log, 4, 10));
        assert!(guess(m, None, &log, 7, 10));
        assert!(!guess(m, None, &log, 8, 10));
        // Queries past the completed stage see only completed stages.
        assert!(guess(GuesserMode::Track { lag: 0 }, None, &log, 9, 5));
    }

    #[test]
    fn explicit_points_override() {
        let pts: BTreeMap<Stage, bool> = [(5, true), (9, false)].into_iter().collect();
        let log = TruthLog::default();
        let m = GuesserMode::Const(true);
        assert!(!guess(m, Some(&pts), &log, 4, 20));
        assert!(guess(m, Some(&pts), &log, 5, 20));
        assert!(!guess(m, Some(&pts), &log, 12, 20));
    }
}
