//! Scenario files.
//!
//! A scenario is a small line-oriented text document. `#` starts a comment.
//! The first two directives must be `construction` and `horizon`; every
//! other directive may appear in any order and is stored canonically, so
//! `parse(render(s)) == s`.
//!
//! ```text
//! construction pinball          # pinball | tree15 | osp2 | markers
//! horizon 500
//! seed 7                        # provenance of generated files only
//! levels 2                      # requirements (pinball) or tree depth
//! set 0 5@3 9@4                 # W_0 gets 5 at stage 3, 9 at stage 4
//! oracle 2@10 0@31              # D (tree15, osp2) or B (markers)
//! functional 0 12 40            # index, stage, use
//! functional 1 3 12 40          # markers: i, x, stage, use
//! guesser 0 track 1             # track <lag> | const <0|1>
//! guess 0.2.1 40 1              # slot, stage, value
//! hgrowth 1 every 3             # never | every <p> | burst <c>
//! himage 01.0.2 17 18           # explicit growth stages for one slot
//! verdict 01                    # declared true path
//! verdict-node 0 1 1            # node, designated e, S infinite?
//! ```
//!
//! Pinball slots are written `i.k.n`; tree slots `node.e.n` with `~` for
//! the root.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::node::Node;
use crate::universe::{Element, Stage};

/// Largest number of pinball requirements (`4^5 + 1` slots at the top level).
pub const MAX_PINBALL_LEVELS: u32 = 5;
/// Largest strategy tree depth.
pub const MAX_TREE_LEVELS: u32 = 8;
/// Largest scripted set index.
pub const MAX_SET_INDEX: u32 = 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Construction {
    Pinball,
    Tree15,
    Osp2,
    Markers,
}

impl Construction {
    pub fn name(self) -> &'static str {
        match self {
            Construction::Pinball => "pinball",
            Construction::Tree15 => "tree15",
            Construction::Osp2 => "osp2",
            Construction::Markers => "markers",
        }
    }

    fn is_tree(self) -> bool {
        matches!(self, Construction::Tree15 | Construction::Osp2)
    }
}

impl FromStr for Construction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "pinball" => Construction::Pinball,
            "tree15" => Construction::Tree15,
            "osp2" => Construction::Osp2,
            "markers" => Construction::Markers,
            _ => return Err(format!("unknown construction `{s}`")),
        })
    }
}

/// A scripted convergence. `arg` is the input `x` for marker functionals
/// `Φ_i^B(x)` and 0 otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FunctionalScript {
    pub stage: Stage,
    pub index: u32,
    pub arg: u64,
    pub use_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GuesserMode {
    /// Reports the true value as it stood `lag` completed stages ago.
    Track {
        lag: u32,
    },
    Const(bool),
}

impl Default for GuesserMode {
    fn default() -> Self {
        GuesserMode::Track { lag: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotKey {
    Pinball { i: u32, k: u32, n: u32 },
    Tree { node: Node, e: u32, n: u32 },
}

impl std::fmt::Display for SlotKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SlotKey::Pinball { i, k, n } => write!(f, "{i}.{k}.{n}"),
            SlotKey::Tree { node, e, n } if node.is_root() => write!(f, "~.{e}.{n}"),
            SlotKey::Tree { node, e, n } => write!(f, "{node}.{e}.{n}"),
        }
    }
}

/// How the sets `W_{h(r(α,e,n))}` grow, per tree level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Growth {
    #[default]
    Never,
    /// Grows at every stage divisible by the period.
    Every(u32),
    /// Grows at the first `c` stages after the slot's incarnation began.
    Burst(u32),
}

/// Declared true path and per-node designations standing in for a `0''` oracle.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Verdict {
    pub path: Node,
    /// node → (designated e, whether `S_{h,e}^α ∩ Ā` is infinite)
    pub nodes: BTreeMap<Node, (u32, bool)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub construction: Construction,
    pub horizon: Stage,
    pub seed: Option<u64>,
    pub levels: u32,
    pub sets: BTreeMap<u32, BTreeMap<Element, Stage>>,
    pub oracle: BTreeMap<Element, Stage>,
    pub functionals: Vec<FunctionalScript>,
    pub guessers: BTreeMap<u32, GuesserMode>,
    pub guesses: BTreeMap<SlotKey, BTreeMap<Stage, bool>>,
    pub growth: BTreeMap<u32, Growth>,
    pub himage: BTreeMap<SlotKey, BTreeSet<Stage>>,
    pub verdict: Option<Verdict>,
}

impl Scenario {
    pub fn new(construction: Construction, horizon: Stage) -> Self {
        Self {
            construction,
            horizon,
            seed: None,
            levels: 0,
            sets: BTreeMap::new(),
            oracle: BTreeMap::new(),
            functionals: Vec::new(),
            guessers: BTreeMap::new(),
            guesses: BTreeMap::new(),
            growth: BTreeMap::new(),
            himage: BTreeMap::new(),
            verdict: None,
        }
    }

    pub fn guesser(&self, level: u32) -> GuesserMode {
        self.guessers.get(&level).copied().unwrap_or_default()
    }

    /// The same scenario cut down to a smaller horizon. Scripts stamped past
    /// the new horizon are dropped, so runs stay prefix-consistent.
    pub fn truncated(&self, horizon: Stage) -> Scenario {
        let mut s = self.clone();
        s.horizon = horizon;
        for set in s.sets.values_mut() {
            set.retain(|_, t| *t <= horizon);
        }
        s.oracle.retain(|_, t| *t <= horizon);
        s.functionals.retain(|f| f.stage <= horizon);
        for pts in s.guesses.values_mut() {
            pts.retain(|t, _| *t <= horizon);
        }
        s.guesses.retain(|_, p| !p.is_empty());
        for pts in s.himage.values_mut() {
            pts.retain(|t| *t <= horizon);
        }
        s.himage.retain(|_, p| !p.is_empty());
        s
    }

    pub fn parse(text: &str) -> Result<Scenario> {
        Parser::default().run(text)
    }

    pub fn load(path: &std::path::Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Scenario {
            line: 0,
            msg: format!("{}: {e}", path.display()),
        })?;
        Scenario::parse(&text)
    }

    /// Canonical text form.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let stamp = |pairs: &mut dyn Iterator<Item = (Element, Stage)>| {
            pairs.map(|(x, t)| format!(" {x}@{t}")).collect::<String>()
        };
        let _ = writeln!(out, "construction {}", self.construction.name());
        let _ = writeln!(out, "horizon {}", self.horizon);
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "seed {seed}");
        }
        if self.construction != Construction::Markers {
            let _ = writeln!(out, "levels {}", self.levels);
        }
        for (e, set) in &self.sets {
            let _ = writeln!(
                out,
                "set {e}{}",
                stamp(&mut set.iter().map(|(&x, &t)| (x, t)))
            );
        }
        if !self.oracle.is_empty() {
            let _ = writeln!(
                out,
                "oracle{}",
                stamp(&mut self.oracle.iter().map(|(&x, &t)| (x, t)))
            );
        }
        for f in &self.functionals {
            if self.construction == Construction::Markers {
                let _ = writeln!(
                    out,
                    "functional {} {} {} {}",
                    f.index, f.arg, f.stage, f.use_
                );
            } else {
                let _ = writeln!(out, "functional {} {} {}", f.index, f.stage, f.use_);
            }
        }
        for (level, mode) in &self.guessers {
            match mode {
                GuesserMode::Track { lag } => writeln!(out, "guesser {level} track {lag}"),
                GuesserMode::Const(v) => writeln!(out, "guesser {level} const {}", *v as u8),
            }
            .unwrap();
        }
        for (slot, pts) in &self.guesses {
            for (t, v) in pts {
                let _ = writeln!(out, "guess {slot} {t} {}", *v as u8);
            }
        }
        for (level, g) in &self.growth {
            match g {
                Growth::Never => writeln!(out, "hgrowth {level} never"),
                Growth::Every(p) => writeln!(out, "hgrowth {level} every {p}"),
                Growth::Burst(c) => writeln!(out, "hgrowth {level} burst {c}"),
            }
            .unwrap();
        }
        for (slot, stages) in &self.himage {
            let list: String = stages.iter().map(|t| format!(" {t}")).collect();
            let _ = writeln!(out, "himage {slot}{list}");
        }
        if let Some(v) = &self.verdict {
            let path = if v.path.is_root() {
                "~".to_string()
            } else {
                v.path.to_string()
            };
            let _ = writeln!(out, "verdict {path}");
            for (node, (e, inf)) in &v.nodes {
                let name = if node.is_root() {
                    "~".to_string()
                } else {
                    node.to_string()
                };
                let _ = writeln!(out, "verdict-node {name} {e} {}", *inf as u8);
            }
        }
        out
    }
}

#[derive(Default)]
struct Parser {
    construction: Option<Construction>,
    horizon: Option<Stage>,
    levels: Option<u32>,
    line: usize,
}

impl Parser {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Scenario {
            line: self.line,
            msg: msg.into(),
        })
    }

    fn num<T: FromStr>(&self, tok: Option<&&str>, what: &str) -> Result<T> {
        match tok {
            None => self.err(format!("missing {what}")),
            Some(t) => t.parse().or_else(|_| self.err(format!("bad {what} `{t}`"))),
        }
    }

    fn stage(&self, tok: Option<&&str>) -> Result<Stage> {
        let t: Stage = self.num(tok, "stage")?;
        let h = self.horizon.unwrap_or(Stage::MAX);
        if t > h {
            return self.err(format!("stage {t} exceeds horizon {h}"));
        }
        Ok(t)
    }

    fn bit(&self, tok: Option<&&str>) -> Result<bool> {
        match tok.copied() {
            Some("0") => Ok(false),
            Some("1") => Ok(true),
            other => self.err(format!("expected 0 or 1, found {:?}", other.unwrap_or(""))),
        }
    }

    fn stamped(&self, toks: &[&str], into: &mut BTreeMap<Element, Stage>) -> Result<()> {
        for tok in toks {
            let Some((x, t)) = tok.split_once('@') else {
                return self.err(format!("expected element@stage, found `{tok}`"));
            };
            let x: Element = self.num(Some(&x), "element")?;
            let t = self.stage(Some(&t))?;
            if into.insert(x, t).is_some() {
                return self.err(format!("element {x} scripted twice"));
            }
        }
        Ok(())
    }

    fn slot(&self, tok: Option<&&str>) -> Result<SlotKey> {
        let Some(tok) = tok else {
            return self.err("missing slot");
        };
        let parts: Vec<&str> = tok.split('.').collect();
        if parts.len() != 3 {
            return self.err(format!("slot `{tok}` must have three dot-separated parts"));
        }
        let e = self.num(parts.get(1), "slot index")?;
        let n = self.num(parts.get(2), "slot incarnation")?;
        match self.construction {
            Some(Construction::Pinball) => {
                let i: u32 = self.num(parts.first(), "requirement")?;
                Ok(SlotKey::Pinball { i, k: e, n })
            }
            Some(c) if c.is_tree() => {
                let node: Node = parts[0].parse().or_else(|m: String| self.err(m))?;
                Ok(SlotKey::Tree { node, e, n })
            }
            _ => self.err("slots are not used by this construction"),
        }
    }

    fn node(&self, tok: Option<&&str>) -> Result<Node> {
        match tok {
            None => self.err("missing node"),
            Some(t) => t.parse().or_else(|m: String| self.err(m)),
        }
    }

    fn require(&self, allowed: &[Construction], directive: &str) -> Result<()> {
        let c = self.construction.expect("checked by caller");
        if allowed.contains(&c) {
            Ok(())
        } else {
            self.err(format!("`{directive}` is not valid for {}", c.name()))
        }
    }

    fn run(mut self, text: &str) -> Result<Scenario> {
        use Construction::*;
        let mut sc: Option<Scenario> = None;
        for (idx, raw) in text.lines().enumerate() {
            self.line = idx + 1;
            let body = raw.split('#').next().unwrap_or("");
            let toks: Vec<&str> = body.split_whitespace().collect();
            let Some((&head, rest)) = toks.split_first() else {
                continue;
            };
            match head {
                "construction" => {
                    if self.construction.is_some() {
                        return self.err("construction given twice");
                    }
                    let c = match rest.first() {
                        Some(n) => n.parse().or_else(|m: String| self.err(m))?,
                        None => return self.err("missing construction name"),
                    };
                    self.construction = Some(c);
                    continue;
                }
                _ if self.construction.is_none() => {
                    return self.err("the first directive must be `construction`");
                }
                "horizon" => {
                    if self.horizon.is_some() {
                        return self.err("horizon given twice");
                    }
                    let h: Stage = self.num(rest.first(), "horizon")?;
                    self.horizon = Some(h);
                    sc = Some(Scenario::new(self.construction.unwrap(), h));
                    continue;
                }
                _ if self.horizon.is_none() => {
                    return self.err("`horizon` must precede scripts");
                }
                _ => {}
            }
            let s = sc.as_mut().unwrap();
            match head {
                "seed" => s.seed = Some(self.num(rest.first(), "seed")?),
                "levels" => {
                    self.require(&[Pinball, Tree15, Osp2], head)?;
                    let l: u32 = self.num(rest.first(), "levels")?;
                    let max = if s.construction == Pinball {
                        MAX_PINBALL_LEVELS
                    } else {
                        MAX_TREE_LEVELS
                    };
                    if l > max {
                        return self.err(format!("levels {l} exceeds the limit {max}"));
                    }
                    if s.construction.is_tree() && l == 0 {
                        return self.err("a strategy tree needs at least one level");
                    }
                    self.levels = Some(l);
                    s.levels = l;
                }
                "set" => {
                    self.require(&[Pinball, Tree15, Osp2], head)?;
                    let e: u32 = self.num(rest.first(), "set index")?;
                    if e > MAX_SET_INDEX {
                        return self.err(format!("set index {e} exceeds {MAX_SET_INDEX}"));
                    }
                    let mut fresh = s.sets.remove(&e).unwrap_or_default();
                    self.stamped(&rest[1..], &mut fresh)?;
                    s.sets.insert(e, fresh);
                }
                "oracle" => {
                    self.require(&[Tree15, Osp2, Markers], head)?;
                    self.stamped(rest, &mut s.oracle)?;
                }
                "functional" => {
                    let f = if s.construction == Markers {
                        if rest.len() != 4 {
                            return self.err("marker functionals take: i x stage use");
                        }
                        FunctionalScript {
                            index: self.num(rest.first(), "index")?,
                            arg: self.num(rest.get(1), "argument")?,
                            stage: self.stage(rest.get(2))?,
                            use_: self.num(rest.get(3), "use")?,
                        }
                    } else {
                        if rest.len() != 3 {
                            return self.err("functionals take: index stage use");
                        }
                        FunctionalScript {
                            index: self.num(rest.first(), "index")?,
                            arg: 0,
                            stage: self.stage(rest.get(1))?,
                            use_: self.num(rest.get(2), "use")?,
                        }
                    };
                    if s.construction == Markers && s.functionals.iter().any(|g| g.stage == f.stage)
                    {
                        return self.err(format!(
                            "two marker convergences stamped at stage {}",
                            f.stage
                        ));
                    }
                    if s.functionals.contains(&f) {
                        return self.err("functional line repeated");
                    }
                    s.functionals.push(f);
                }
                "guesser" => {
                    self.require(&[Pinball, Tree15], head)?;
                    let level: u32 = self.num(rest.first(), "level")?;
                    let mode = match rest.get(1).copied() {
                        Some("track") => GuesserMode::Track {
                            lag: self.num(rest.get(2), "lag")?,
                        },
                        Some("const") => GuesserMode::Const(self.bit(rest.get(2))?),
                        _ => {
                            return self.err("guesser mode must be `track <lag>` or `const <0|1>`")
                        }
                    };
                    if s.guessers.insert(level, mode).is_some() {
                        return self.err(format!("guesser {level} given twice"));
                    }
                }
                "guess" => {
                    self.require(&[Pinball, Tree15], head)?;
                    let slot = self.slot(rest.first())?;
                    let t = self.stage(rest.get(1))?;
                    let v = self.bit(rest.get(2))?;
                    if s.guesses.entry(slot).or_default().insert(t, v).is_some() {
                        return self.err(format!("slot {slot} guessed twice at stage {t}"));
                    }
                }
                "hgrowth" => {
                    self.require(&[Osp2], head)?;
                    let level: u32 = self.num(rest.first(), "level")?;
                    let g = match rest.get(1).copied() {
                        Some("never") => Growth::Never,
                        Some("every") => {
                            let p: u32 = self.num(rest.get(2), "period")?;
                            if p == 0 {
                                return self.err("period must be positive");
                            }
                            Growth::Every(p)
                        }
                        Some("burst") => Growth::Burst(self.num(rest.get(2), "burst length")?),
                        _ => return self.err("hgrowth mode must be never, every <p> or burst <c>"),
                    };
                    if s.growth.insert(level, g).is_some() {
                        return self.err(format!("hgrowth {level} given twice"));
                    }
                }
                "himage" => {
                    self.require(&[Osp2], head)?;
                    let slot = self.slot(rest.first())?;
                    let entry = s.himage.entry(slot).or_default();
                    for tok in &rest[1..] {
                        entry.insert(self.stage(Some(tok))?);
                    }
                }
                "verdict" => {
                    self.require(&[Osp2], head)?;
                    let path = self.node(rest.first())?;
                    let v = s.verdict.get_or_insert_with(Verdict::default);
                    v.path = path;
                }
                "verdict-node" => {
                    self.require(&[Osp2], head)?;
                    let node = self.node(rest.first())?;
                    let e: u32 = self.num(rest.get(1), "designated e")?;
                    let inf = self.bit(rest.get(2))?;
                    let v = s.verdict.get_or_insert_with(Verdict::default);
                    v.nodes.insert(node, (e, inf));
                }
                other => return self.err(format!("unknown directive `{other}`")),
            }
        }
        self.line = 0;
        let Some(mut s) = sc else {
            return self.err(if self.construction.is_none() {
                "empty scenario"
            } else {
                "missing horizon"
            });
        };
        if s.construction.is_tree() && self.levels.is_none() {
            return self.err("missing `levels`");
        }
        if s.construction.is_tree() {
            if let Some(v) = &s.verdict {
                if v.path.len() > s.levels as usize {
                    return self.err("verdict path is deeper than the tree");
                }
            }
        }
        s.functionals.sort();
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
construction osp2
horizon 40
levels 2
set 1 4@3 9@2
oracle 0@5
functional 0 3 11
hgrowth 0 every 3
himage 01.0.2 17 18
verdict 0
verdict-node ~ 1 1
";

    #[test]
    fn minimal_pinball_loads() {
        let s = Scenario::parse("construction pinball\nhorizon 10\nlevels 1\n").unwrap();
        assert_eq!(s.horizon, 10);
        assert!(s.sets.is_empty());
    }

    #[test]
    fn round_trip() {
        let s = Scenario::parse(SAMPLE).unwrap();
        let again = Scenario::parse(&s.render()).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.render(), again.render());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e =
            Scenario::parse("construction tree15\nhorizon 5\nlevels 1\nset 0 3@9\n").unwrap_err();
        assert_eq!(
            e,
            Error::Scenario {
                line: 4,
                msg: "stage 9 exceeds horizon 5".into()
            }
        );
        let e = Scenario::parse("horizon 5\n").unwrap_err();
        assert!(matches!(e, Error::Scenario { line: 1, .. }));
        let e = Scenario::parse(
            "construction markers\nhorizon 9\nfunctional 0 1 2 3\nfunctional 1 1 2 5\n",
        )
        .unwrap_err();
        assert!(matches!(e, Error::Scenario { line: 4, .. }));
        let e =
            Scenario::parse("construction pinball\nhorizon 9\nlevels 1\noracle 1@2\n").unwrap_err();
        assert!(matches!(e, Error::Scenario { line: 4, .. }));
    }

    #[test]
    fn truncation_drops_late_scripts() {
        let s = Scenario::parse(SAMPLE).unwrap().truncated(3);
        assert_eq!(s.sets[&1].len(), 2);
        assert!(s.oracle.is_empty());
        assert!(s.himage.is_empty());
    }
}
