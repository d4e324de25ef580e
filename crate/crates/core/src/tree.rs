//! Mother trees, rooted subtrees and vectors on them.
//!
//! Nodes are addressed by `u64` keys. For time axes the key packs
//! `(level, position)` so that key order is breadth-first order; for space
//! axes the key is the vertex id, which orders parents before children.

use std::collections::BTreeSet;

use crate::ops;
use crate::time_bases::{key_level, Family, TimeIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AxisId {
    Time(Family),
    Space(u64),
    Unary,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TreeError {
    #[error("vectors live on different mother trees ({0:?} vs {1:?})")]
    Mismatch(AxisId, AxisId),
    #[error("refinement exceeded the level cap {0}")]
    Limit(u32),
}

/// A (lazily grown) mother tree.
pub trait Axis {
    fn id(&self) -> AxisId;
    fn roots(&self) -> Vec<u64>;
    fn level(&self, key: u64) -> u32;
    fn parents(&self, key: u64, out: &mut Vec<u64>);
    /// May materialize children on first request.
    fn children(&mut self, key: u64, out: &mut Vec<u64>);
}

/// Time mother tree of one wavelet family; parents and children are computed
/// arithmetically from `(level, position)`.
#[derive(Debug, Clone, Copy)]
pub struct TimeAxis(pub Family);

impl Axis for TimeAxis {
    fn id(&self) -> AxisId {
        AxisId::Time(self.0)
    }

    fn roots(&self) -> Vec<u64> {
        self.0.roots().iter().map(|r| r.key()).collect()
    }

    fn level(&self, key: u64) -> u32 {
        key_level(key)
    }

    fn parents(&self, key: u64, out: &mut Vec<u64>) {
        self.0.for_each_parent(TimeIndex::from_key(key), |p| out.push(p.key()));
    }

    fn children(&mut self, key: u64, out: &mut Vec<u64>) {
        self.0.for_each_child(TimeIndex::from_key(key), |c| out.push(c.key()));
    }
}

/// Chain `0 → 1 → 2 → …`; the key is the level.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnaryAxis;

impl Axis for UnaryAxis {
    fn id(&self) -> AxisId {
        AxisId::Unary
    }

    fn roots(&self) -> Vec<u64> {
        vec![0]
    }

    fn level(&self, key: u64) -> u32 {
        key as u32
    }

    fn parents(&self, key: u64, out: &mut Vec<u64>) {
        if key > 0 {
            out.push(key - 1);
        }
    }

    fn children(&mut self, key: u64, out: &mut Vec<u64>) {
        out.push(key + 1);
    }
}

/// Tree with one real per node, keys sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeVector {
    pub axis: AxisId,
    pub keys: Vec<u64>,
    pub vals: Vec<f64>,
}

impl TreeVector {
    pub fn new(axis: AxisId) -> Self {
        TreeVector { axis, keys: Vec::new(), vals: Vec::new() }
    }

    pub fn from_pairs(axis: AxisId, mut pairs: Vec<(u64, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        pairs.dedup_by_key(|p| p.0);
        let (keys, vals) = pairs.into_iter().unzip();
        TreeVector { axis, keys, vals }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, key: u64) -> Option<f64> {
        self.keys.binary_search(&key).ok().map(|i| self.vals[i])
    }

    pub fn pairs(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.keys.iter().copied().zip(self.vals.iter().copied())
    }
}

/// `dst := dst ∪ src`, combining values on shared nodes.
///
/// Both key lists are sorted, so a single simultaneous sweep suffices.
pub fn union_into(dst: &mut TreeVector, src: &TreeVector, combine: impl Fn(f64, f64) -> f64) -> Result<(), TreeError> {
    if dst.axis != src.axis {
        return Err(TreeError::Mismatch(dst.axis, src.axis));
    }
    if src.is_empty() {
        return Ok(());
    }
    let n = dst.len() + src.len();
    let mut keys = Vec::with_capacity(n);
    let mut vals = Vec::with_capacity(n);
    let (mut i, mut j) = (0, 0);
    while i < dst.len() || j < src.len() {
        ops::add(1);
        if j >= src.len() || (i < dst.len() && dst.keys[i] < src.keys[j]) {
            keys.push(dst.keys[i]);
            vals.push(dst.vals[i]);
            i += 1;
        } else if i >= dst.len() || src.keys[j] < dst.keys[i] {
            keys.push(src.keys[j]);
            vals.push(src.vals[j]);
            j += 1;
        } else {
            keys.push(dst.keys[i]);
            vals.push(combine(dst.vals[i], src.vals[j]));
            i += 1;
            j += 1;
        }
    }
    dst.keys = keys;
    dst.vals = vals;
    Ok(())
}

/// Level-ordered node sequence (stable counting sort on the level).
pub fn bfs<A: Axis + ?Sized>(axis: &A, keys: &[u64]) -> Vec<u64> {
    let levels: Vec<u32> = keys.iter().map(|&k| axis.level(k)).collect();
    let top = levels.iter().copied().max().unwrap_or(0) as usize;
    let mut start = vec![0usize; top + 2];
    for &l in &levels {
        start[l as usize + 1] += 1;
    }
    for l in 0..=top {
        start[l + 1] += start[l];
    }
    let mut out = vec![0u64; keys.len()];
    for (&k, &l) in keys.iter().zip(&levels) {
        out[start[l as usize]] = k;
        start[l as usize] += 1;
    }
    ops::add(keys.len() as u64);
    out
}

/// Whether `keys` is closed under taking parents.
pub fn is_tree<A: Axis + ?Sized>(axis: &A, keys: &[u64]) -> bool {
    let set: BTreeSet<u64> = keys.iter().copied().collect();
    let roots: BTreeSet<u64> = axis.roots().into_iter().collect();
    let mut buf = Vec::new();
    keys.iter().all(|&k| {
        buf.clear();
        axis.parents(k, &mut buf);
        if buf.is_empty() {
            return roots.contains(&k);
        }
        buf.iter().all(|p| set.contains(p))
    })
}

/// Extends `keys` by every mother-tree node accepted by `keep` whose parents
/// are all present. Roots are always included. Fails once a node deeper
/// than `max_level` would be added.
pub fn deep_refine<A: Axis + ?Sized>(
    axis: &mut A,
    keys: &mut Vec<u64>,
    keep: impl Fn(u64) -> bool,
    max_level: u32,
) -> Result<(), TreeError> {
    let mut set: BTreeSet<u64> = keys.iter().copied().collect();
    set.extend(axis.roots());
    let mut buckets: Vec<Vec<u64>> = Vec::new();
    for &k in &set {
        let l = axis.level(k) as usize;
        if buckets.len() <= l {
            buckets.resize(l + 1, Vec::new());
        }
        buckets[l].push(k);
    }
    let (mut kids, mut pars) = (Vec::new(), Vec::new());
    let mut l = 0;
    while l < buckets.len() {
        let level = std::mem::take(&mut buckets[l]);
        for &k in &level {
            kids.clear();
            axis.children(k, &mut kids);
            for &c in &kids {
                if set.contains(&c) || !keep(c) {
                    continue;
                }
                pars.clear();
                axis.parents(c, &mut pars);
                if pars.iter().all(|p| set.contains(p)) {
                    let cl = axis.level(c);
                    if cl > max_level {
                        return Err(TreeError::Limit(max_level));
                    }
                    set.insert(c);
                    if buckets.len() <= cl as usize {
                        buckets.resize(cl as usize + 1, Vec::new());
                    }
                    buckets[cl as usize].push(c);
                }
            }
        }
        l += 1;
    }
    *keys = set.into_iter().collect();
    Ok(())
}

/// Keys of a tree on `axis` split by level: `ranges[l]` indexes the slice of
/// level-`l` keys in a level-sorted key list.
pub fn level_ranges(levels: impl Iterator<Item = u32>) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (i, l) in levels.enumerate() {
        while out.len() <= l as usize {
            out.push((i, i));
        }
        out[l as usize].1 = i + 1;
    }
    out
}
