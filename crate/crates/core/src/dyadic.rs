//! Finite dyadic tree over the unit interval `[0, 1)`.
//!
//! Intervals are identified by `(level, index)`; the interval `(ℓ, k)` is
//! `[k·2^-ℓ, (k+1)·2^-ℓ)`. Nodes of a tree of depth `N` are also numbered
//! breadth-first by [`DyadicInterval::node_id`], so that the internal
//! intervals (levels `0..N`) occupy ids `0..2^N - 1` and the leaves follow.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(u32, u64)", into = "(u32, u64)")]
pub struct DyadicInterval {
    pub level: u32,
    pub index: u64,
}

impl From<(u32, u64)> for DyadicInterval {
    fn from((level, index): (u32, u64)) -> Self {
        Self { level, index }
    }
}

impl From<DyadicInterval> for (u32, u64) {
    fn from(i: DyadicInterval) -> Self {
        (i.level, i.index)
    }
}

impl PartialOrd for DyadicInterval {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Breadth-first order.
impl Ord for DyadicInterval {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.level, self.index).cmp(&(other.level, other.index))
    }
}

impl DyadicInterval {
    pub const ROOT: Self = Self { level: 0, index: 0 };

    pub fn new(level: u32, index: u64) -> Result<Self> {
        if level >= 63 || index >= (1u64 << level) {
            return Err(Error::InvalidInput(format!(
                "index {index} is not valid at level {level}"
            )));
        }
        Ok(Self { level, index })
    }

    /// Inverse of [`Self::node_id`].
    pub fn from_node_id(id: usize) -> Self {
        let level = (id + 1).ilog2();
        Self {
            level,
            index: (id + 1 - (1usize << level)) as u64,
        }
    }

    pub fn node_id(&self) -> usize {
        (1usize << self.level) - 1 + self.index as usize
    }

    /// `|I| = 2^-level`, exact in binary floating point.
    pub fn measure(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn left(&self) -> f64 {
        self.index as f64 * self.measure()
    }

    pub fn is_root(&self) -> bool {
        self.level == 0
    }

    pub fn parent(&self) -> Option<Self> {
        (self.level > 0).then(|| Self {
            level: self.level - 1,
            index: self.index >> 1,
        })
    }

    /// The interval `k` levels above, `ancestor(I, 0) = I`.
    pub fn ancestor(&self, k: u32) -> Result<Self> {
        if k > self.level {
            return Err(Error::OutOfTree {
                interval: *self,
                depth: self.level,
            });
        }
        Ok(Self {
            level: self.level - k,
            index: self.index >> k,
        })
    }

    /// `(I₋, I₊)` without any depth check.
    pub fn halves(&self) -> (Self, Self) {
        let level = self.level + 1;
        (
            Self {
                level,
                index: 2 * self.index,
            },
            Self {
                level,
                index: 2 * self.index + 1,
            },
        )
    }

    /// True iff `other ⊆ self`.
    pub fn contains(&self, other: &Self) -> bool {
        other.level >= self.level && other.index >> (other.level - self.level) == self.index
    }

    /// Edge count of the shortest path between the two nodes.
    pub fn tree_distance(&self, other: &Self) -> u32 {
        let (mut a, mut b) = (*self, *other);
        let mut steps = 0;
        while a.level > b.level {
            a = a.parent().expect("level > 0");
            steps += 1;
        }
        while b.level > a.level {
            b = b.parent().expect("level > 0");
            steps += 1;
        }
        while a != b {
            a = a.parent().expect("distinct nodes share the root");
            b = b.parent().expect("distinct nodes share the root");
            steps += 2;
        }
        steps
    }

    /// Leaves of a depth-`depth` tree inside this interval, as a half-open
    /// range of leaf indices.
    pub fn leaf_range(&self, depth: u32) -> std::ops::Range<usize> {
        debug_assert!(self.level <= depth);
        let shift = depth - self.level;
        let start = (self.index as usize) << shift;
        start..start + (1usize << shift)
    }
}

/// Depth of the truncated tree; leaves live at level `depth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub depth: u32,
}

impl TreeConfig {
    pub const MAX_DEPTH: u32 = 20;

    pub fn new(depth: u32) -> Result<Self> {
        if depth == 0 || depth > Self::MAX_DEPTH {
            return Err(Error::BadParams(format!(
                "depth must be in 1..={}, got {depth}",
                Self::MAX_DEPTH
            )));
        }
        Ok(Self { depth })
    }

    pub fn leaf_count(&self) -> usize {
        1 << self.depth
    }

    /// Number of internal (Haar-carrying) intervals, levels `0..depth`.
    pub fn internal_count(&self) -> usize {
        (1 << self.depth) - 1
    }

    /// All nodes, levels `0..=depth`.
    pub fn node_count(&self) -> usize {
        (1 << (self.depth + 1)) - 1
    }

    pub fn in_tree(&self, i: &DyadicInterval) -> bool {
        i.level <= self.depth && i.index < (1u64 << i.level)
    }

    pub fn check(&self, i: &DyadicInterval) -> Result<()> {
        if self.in_tree(i) {
            Ok(())
        } else {
            Err(Error::OutOfTree {
                interval: *i,
                depth: self.depth,
            })
        }
    }

    pub fn children(&self, i: &DyadicInterval) -> Result<(DyadicInterval, DyadicInterval)> {
        self.check(i)?;
        if i.level >= self.depth {
            return Err(Error::LeafHasNoChildren(*i));
        }
        Ok(i.halves())
    }

    /// Breadth-first enumeration of every node.
    pub fn intervals(&self) -> impl Iterator<Item = DyadicInterval> {
        (0..self.node_count()).map(DyadicInterval::from_node_id)
    }

    pub fn internal_intervals(&self) -> impl Iterator<Item = DyadicInterval> {
        (0..self.internal_count()).map(DyadicInterval::from_node_id)
    }

    pub fn level(&self, level: u32) -> impl Iterator<Item = DyadicInterval> {
        (0..(1u64 << level)).map(move |index| DyadicInterval { level, index })
    }

    pub fn leaves(&self) -> impl Iterator<Item = DyadicInterval> {
        self.level(self.depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(level: u32, index: u64) -> DyadicInterval {
        DyadicInterval { level, index }
    }

    #[test]
    fn ancestors() {
        assert_eq!(iv(2, 3).ancestor(0).unwrap(), iv(2, 3));
        assert_eq!(iv(2, 3).ancestor(2).unwrap(), iv(0, 0));
        assert_eq!(iv(3, 5).ancestor(1).unwrap(), iv(2, 2));
        assert!(matches!(iv(1, 0).ancestor(2), Err(Error::OutOfTree { .. })));
    }

    #[test]
    fn children() {
        let tree = TreeConfig::new(3).unwrap();
        assert_eq!(tree.children(&iv(0, 0)).unwrap(), (iv(1, 0), iv(1, 1)));
        assert_eq!(tree.children(&iv(1, 1)).unwrap(), (iv(2, 2), iv(2, 3)));
        assert_eq!(tree.children(&iv(2, 0)).unwrap(), (iv(3, 0), iv(3, 1)));
        assert!(matches!(
            tree.children(&iv(3, 0)),
            Err(Error::LeafHasNoChildren(_))
        ));
    }

    #[test]
    fn distances() {
        let i = iv(2, 1);
        assert_eq!(i.tree_distance(&i), 0);
        assert_eq!(iv(1, 0).tree_distance(&iv(1, 1)), 2);
        assert_eq!(iv(1, 0).tree_distance(&iv(2, 2)), 3);
    }

    #[test]
    fn containment() {
        assert!(iv(0, 0).contains(&iv(3, 5)));
        assert!(!iv(1, 0).contains(&iv(1, 1)));
        assert!(iv(2, 1).contains(&iv(2, 1)));
        assert!(!iv(2, 1).contains(&iv(1, 0)));
    }

    #[test]
    fn node_ids_are_breadth_first() {
        let tree = TreeConfig::new(4).unwrap();
        for (id, i) in tree.intervals().enumerate() {
            assert_eq!(i.node_id(), id);
            assert_eq!(DyadicInterval::from_node_id(id), i);
        }
        assert_eq!(
            tree.internal_intervals().last().unwrap(),
            iv(3, 7),
            "internal ids stop right before the leaves"
        );
    }

    #[test]
    fn leaf_measures_sum_to_one() {
        for depth in 1..=10 {
            let tree = TreeConfig::new(depth).unwrap();
            let total: f64 = tree.leaves().map(|l| l.measure()).sum();
            assert_eq!(total, 1.0);
        }
    }

    #[test]
    fn serializes_as_pair() {
        let s = serde_json::to_string(&iv(3, 5)).unwrap();
        assert_eq!(s, "[3,5]");
        let back: DyadicInterval = serde_json::from_str(&s).unwrap();
        assert_eq!(back, iv(3, 5));
    }

    #[test]
    fn metric_axioms_exhaustive() {
        for depth in 1..=4 {
            let tree = TreeConfig::new(depth).unwrap();
            let nodes: Vec<_> = tree.intervals().collect();
            for a in &nodes {
                if let Some(p) = a.parent() {
                    assert_eq!(a.tree_distance(&p), 1);
                }
                if a.level < depth {
                    let (l, r) = a.halves();
                    assert_eq!(l.tree_distance(&r), 2);
                }
                for b in &nodes {
                    let dab = a.tree_distance(b);
                    assert_eq!(dab, b.tree_distance(a));
                    assert_eq!(dab == 0, a == b);
                    if a.contains(b) && b.contains(a) {
                        assert_eq!(a, b);
                    }
                    if b.level >= a.level {
                        assert_eq!(
                            a.contains(b),
                            b.ancestor(b.level - a.level).unwrap() == *a
                        );
                    }
                    for c in &nodes {
                        assert!(a.tree_distance(c) <= dab + b.tree_distance(c));
                    }
                }
            }
        }
    }
}
