//! Nodes of the binary strategy tree.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Longest node the tree supports.
pub const MAX_DEPTH: u8 = 16;

/// A binary string `α`; bit `j` of `bits` is `α(j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Node {
    len: u8,
    bits: u32,
}

#[allow(clippy::len_without_is_empty)]
impl Node {
    pub const ROOT: Node = Node { len: 0, bits: 0 };

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_root(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, j: usize) -> Option<bool> {
        (j < self.len()).then(|| self.bits >> j & 1 == 1)
    }

    pub fn child(&self, b: bool) -> Node {
        assert!(self.len < MAX_DEPTH, "tree depth exceeded");
        Node {
            len: self.len + 1,
            bits: self.bits | (b as u32) << self.len,
        }
    }

    pub fn prefix(&self, n: usize) -> Node {
        let n = n.min(self.len());
        let mask = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
        Node {
            len: n as u8,
            bits: self.bits & mask,
        }
    }

    pub fn is_prefix_of(&self, other: &Node) -> bool {
        self.len <= other.len && other.prefix(self.len()) == *self
    }

    /// `self` is left of `other`: at the first difference `self` has 0 and `other` 1.
    pub fn left_of(&self, other: &Node) -> bool {
        let common = self.len.min(other.len) as usize;
        (0..common)
            .find(|&j| self.bit(j) != other.bit(j))
            .is_some_and(|j| self.bit(j) == Some(false))
    }

    /// Heap numbering: root 1, children `2n` and `2n + 1`.
    pub fn heap_number(&self) -> u64 {
        (0..self.len()).fold(1u64, |f, j| 2 * f + self.bit(j).unwrap() as u64)
    }

    /// All nodes of length `< depth` in length-lexicographic order.
    pub fn all_below(depth: usize) -> Vec<Node> {
        let mut out = vec![Node::ROOT];
        let mut i = 0;
        while i < out.len() {
            let n = out[i];
            if n.len() + 1 < depth {
                out.push(n.child(false));
                out.push(n.child(true));
            }
            i += 1;
        }
        out.retain(|n| n.len() < depth);
        out
    }
}

impl Ord for Node {
    /// Length first, then left to right.
    fn cmp(&self, other: &Self) -> Ordering {
        (self.len, self.heap_number()).cmp(&(other.len, other.heap_number()))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.len() {
            f.write_str(if self.bit(j).unwrap() { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Node {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = if s == "~" { "" } else { s };
        if s.len() > MAX_DEPTH as usize {
            return Err(format!("node `{s}` is deeper than {MAX_DEPTH}"));
        }
        let mut n = Node::ROOT;
        for c in s.chars() {
            n = match c {
                '0' => n.child(false),
                '1' => n.child(true),
                _ => return Err(format!("node `{s}` is not a binary string")),
            };
        }
        Ok(n)
    }
}

impl Serialize for Node {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Node {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(s: &str) -> Node {
        s.parse().unwrap()
    }

    #[test]
    fn heap_numbers() {
        assert_eq!(Node::ROOT.heap_number(), 1);
        assert_eq!(n("0").heap_number(), 2);
        assert_eq!(n("1").heap_number(), 3);
        assert_eq!(n("01").heap_number(), 5);
        assert_eq!(n("10").heap_number(), 6);
    }

    #[test]
    fn ordering_and_position() {
        let all = Node::all_below(3);
        let names: Vec<String> = all.iter().map(|x| x.to_string()).collect();
        assert_eq!(names, ["", "0", "1", "00", "01", "10", "11"]);
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, all);
        assert!(n("0").left_of(&n("1")));
        assert!(n("01").left_of(&n("1")));
        assert!(!n("0").left_of(&n("01")));
        assert!(!n("1").left_of(&n("0")));
        assert!(n("0").is_prefix_of(&n("01")));
        assert!(Node::ROOT.is_prefix_of(&n("1")));
        assert_eq!(n("0110").prefix(2), n("01"));
    }

    #[test]
    fn text_round_trip() {
        for x in Node::all_below(5) {
            assert_eq!(x.to_string().parse::<Node>().unwrap(), x);
        }
        assert_eq!("~".parse::<Node>().unwrap(), Node::ROOT);
        assert!("012".parse::<Node>().is_err());
    }
}
