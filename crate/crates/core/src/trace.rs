//! Line-delimited trace records.
//!
//! Each record is one JSON object with the fields `stage`, `module`, `step`,
//! `action` and `payload`, always in that order. Two conforming runs of the
//! same scenario must produce byte-identical trace text.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::node::Node;
use crate::universe::{EState, Element, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    Pinball,
    Tree15,
    Osp2,
    Markers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepId {
    P0,
    P1,
    P2,
    P3,
    P4A,
    P4B,
    P5,
    T0,
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    O0,
    O1,
    O2,
    O3,
    O4,
    O5,
    O6,
    O7,
    K0,
    K1,
    K2,
    K3,
}

/// Which skeleton family a pinball Step 2 enumeration went into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skeleton {
    U,
    V,
    UHat,
    VHat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetCause {
    /// A new jump computation `Φ^Â_j(j)` appeared.
    Jump(u32),
    /// Case 4B reset everything above `k_0`.
    Dump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessState {
    pub k: u32,
    pub x: Element,
    pub state: EState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllowVia {
    Expansion,
    OneShot { n: u64, node: Node },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotResetCause {
    /// Step 1: a new expansionary stage for `W_j` while `α(j) = 1`.
    Expansion(u32),
    /// Step 4: `ℓ_α(e)` flipped to 1 for this smaller `e`.
    Ell(u32),
    /// Step 6 case (a) for this `i`.
    Split(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteCase {
    A,
    B,
    C,
    D,
}

impl RouteCase {
    pub fn to_f(self) -> bool {
        self != RouteCase::D
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerKey {
    M { i: u32, x: u64 },
    Gamma { b: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "payload", rename_all = "snake_case")]
pub enum Action {
    Init {
        levels: u32,
        sets: u32,
        sizes: Vec<u64>,
    },

    // pinball
    Place {
        x: Element,
    },
    Skeleton {
        family: Skeleton,
        e: u32,
        x: Element,
    },
    Converge {
        j: u32,
        #[serde(rename = "use")]
        use_: u64,
    },
    Diverge {
        j: u32,
        #[serde(rename = "use")]
        use_: u64,
        by: Element,
    },
    Reset {
        i: u32,
        k: u32,
        n: u32,
        cause: ResetCause,
        cancelled: Option<Element>,
    },
    Gate {
        i: u32,
        open: bool,
    },
    Appoint {
        i: u32,
        k: u32,
        n: u32,
        threshold: u32,
        x: Element,
        partner: Element,
        restraint: u64,
        handle: u32,
    },
    Dump {
        i: u32,
        x0: Element,
        k0: u32,
        x1: Element,
        k1: u32,
        a_hat: Element,
        old_partner: Element,
        witnesses: Vec<WitnessState>,
    },
    Move {
        x: Element,
        partner: Element,
        gate: u32,
    },

    // tree15 and osp2
    Path {
        delta: Node,
    },
    Expansion {
        j: u32,
        size: u64,
    },
    Allow {
        j: u32,
        via: AllowVia,
    },
    SlotReset {
        node: Node,
        e: u32,
        n: u32,
        cause: SlotResetCause,
        deactivated: Vec<Element>,
    },
    Witness {
        node: Node,
        e: u32,
        n: u32,
        x: Element,
        #[serde(rename = "use")]
        use_: u64,
        handle: u32,
    },
    Ell {
        node: Node,
        e: u32,
        value: bool,
    },
    Oracle {
        d: Element,
    },
    Permit {
        node: Node,
        e: u32,
        x: Element,
        #[serde(rename = "use")]
        use_: u64,
        d: Element,
    },
    Disallow {
        j: u32,
        n: u64,
    },
    Code {
        k: u64,
        x: Element,
        avoided: Vec<Element>,
    },
    Route {
        i: u32,
        x: Element,
        case: RouteCase,
    },

    // markers
    OracleDiverge {
        i: u32,
        x: u64,
        #[serde(rename = "use")]
        use_: u64,
        b: Element,
    },
    MarkerDump {
        y: Element,
        marker: MarkerKey,
        #[serde(rename = "use")]
        use_: u64,
        b: Element,
    },
    PlaceM {
        i: u32,
        x: u64,
        y: Element,
        #[serde(rename = "use")]
        use_: u64,
    },
    PlaceGamma {
        b: Element,
        y: Element,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub stage: Stage,
    pub module: Module,
    pub step: StepId,
    #[serde(flatten)]
    pub action: Action,
}

impl TraceEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace events always serialize")
    }
}

/// Renders a trace as newline-terminated JSON lines.
pub fn to_text(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        out.push_str(&ev.to_line());
        out.push('\n');
    }
    out
}

pub fn parse_text(text: &str) -> Result<Vec<TraceEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Trace {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiffReport {
    Identical,
    /// One trace is a strict prefix of the other; `next_stage` is the stage
    /// of the first record only the longer one has.
    Prefix {
        longer_is_left: bool,
        common: usize,
        next_stage: Option<Stage>,
    },
    Divergent {
        line: usize,
        stage: Option<Stage>,
        left: String,
        right: String,
    },
}

fn stage_of(line: &str) -> Option<Stage> {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()?
        .get("stage")?
        .as_u64()
        .map(|s| s as Stage)
}

/// Compares two trace texts record by record.
pub fn diff_replays(left: &str, right: &str) -> DiffReport {
    let (a, b): (Vec<&str>, Vec<&str>) = (left.lines().collect(), right.lines().collect());
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        if x != y {
            return DiffReport::Divergent {
                line: i + 1,
                stage: stage_of(x).or_else(|| stage_of(y)),
                left: x.to_string(),
                right: y.to_string(),
            };
        }
    }
    match a.len().cmp(&b.len()) {
        std::cmp::Ordering::Equal => DiffReport::Identical,
        std::cmp::Ordering::Greater => DiffReport::Prefix {
            longer_is_left: true,
            common: b.len(),
            next_stage: stage_of(a[b.len()]),
        },
        std::cmp::Ordering::Less => DiffReport::Prefix {
            longer_is_left: false,
            common: a.len(),
            next_stage: stage_of(b[a.len()]),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_order_is_fixed() {
        let ev = TraceEvent {
            stage: 3,
            module: Module::Pinball,
            step: StepId::P4A,
            action: Action::Gate { i: 0, open: false },
        };
        assert_eq!(
            ev.to_line(),
            r#"{"stage":3,"module":"pinball","step":"P4A","action":"gate","payload":{"i":0,"open":false}}"#
        );
    }

    #[test]
    fn round_trip_through_text() {
        let events = vec![
            TraceEvent {
                stage: 0,
                module: Module::Tree15,
                step: StepId::T0,
                action: Action::Init {
                    levels: 2,
                    sets: 1,
                    sizes: vec![1, 2],
                },
            },
            TraceEvent {
                stage: 4,
                module: Module::Tree15,
                step: StepId::T1,
                action: Action::SlotReset {
                    node: "01".parse().unwrap(),
                    e: 1,
                    n: 2,
                    cause: SlotResetCause::Expansion(0),
                    deactivated: vec![17],
                },
            },
            TraceEvent {
                stage: 5,
                module: Module::Markers,
                step: StepId::K1,
                action: Action::MarkerDump {
                    y: 9,
                    marker: MarkerKey::Gamma { b: 2 },
                    use_: 2,
                    b: 1,
                },
            },
        ];
        let text = to_text(&events);
        assert_eq!(parse_text(&text).unwrap(), events);
    }

    #[test]
    fn diff_kinds() {
        let a = "{\"stage\":1}\n{\"stage\":2}\n";
        let b = "{\"stage\":1}\n";
        assert_eq!(diff_replays(a, a), DiffReport::Identical);
        assert_eq!(
            diff_replays(a, b),
            DiffReport::Prefix {
                longer_is_left: true,
                common: 1,
                next_stage: Some(2)
            }
        );
        let c = "{\"stage\":1}\n{\"stage\":3}\n";
        assert!(matches!(
            diff_replays(a, c),
            DiffReport::Divergent {
                line: 2,
                stage: Some(2),
                ..
            }
        ));
    }
}
