use crate::universe::{Element, Stage};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("unknown set handle {0}")]
    UnknownHandle(u32),
    #[error("set {index}: element {element} scripted twice")]
    DuplicateEntry { index: u32, element: Element },
    #[error("stage {stage} lies beyond horizon {horizon}")]
    BeyondHorizon { stage: Stage, horizon: Stage },
    #[error("set {0} is scripted and cannot be enumerated by a construction")]
    NotConstructed(u32),
    #[error("level {e} requested but only {available} indices are registered")]
    LevelOutOfRange { e: u32, available: u32 },
    #[error("element {x} exceeds the configured bound {bound}")]
    ElementOutOfRange { x: Element, bound: Element },
    #[error("stage clock already at horizon {0}")]
    ClockExhausted(Stage),
    #[error("censuses taken at different levels ({left} vs {right})")]
    MismatchedLevels { left: u32, right: u32 },
    #[error("stage {stage}: no eligible element of F_{k} for coding")]
    CodingStarved { stage: Stage, k: u64 },
    #[error("line {line}: {msg}")]
    Scenario { line: usize, msg: String },
    #[error("trace line {line}: {msg}")]
    Trace { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
