//! Shared report types for invariant checkers.

use std::fmt;

use crate::universe::Stage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub stage: Stage,
    pub msg: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.msg)
    }
}

/// Outcome of one named checker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub name: String,
    pub violations: Vec<Violation>,
    /// Free-form counters the checker wants to surface.
    pub notes: Vec<String>,
}

impl CheckResult {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            violations: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn fail(&mut self, stage: Stage, msg: impl Into<String>) {
        self.violations.push(Violation {
            stage,
            msg: msg.into(),
        });
    }

    pub fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first(&self) -> Option<&Violation> {
        self.violations.iter().min_by_key(|v| v.stage)
    }
}

/// Result of a reduction query at finite horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Yes,
    No,
    /// The facts the reduction relies on are not settled by the horizon.
    Undetermined,
}

impl Answer {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Answer::Yes
        } else {
            Answer::No
        }
    }

    pub fn settled(self) -> Option<bool> {
        match self {
            Answer::Yes => Some(true),
            Answer::No => Some(false),
            Answer::Undetermined => None,
        }
    }
}
