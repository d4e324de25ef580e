//! Linear-time helpers on sorted sparse vectors.
//!
//! Every multiscale routine produces positions that are sorted up to a
//! bounded displacement (masks have bounded width and move monotonically with
//! the source index). The helpers below exploit that instead of hashing.

use crate::ops;

/// Sparse vector sorted by position.
pub type Sparse = Vec<(u64, f64)>;

/// Accumulates `(pos, value)` pairs arriving in nearly sorted order.
///
/// Each push may land at most a few slots before the current end; the
/// backward scan is bounded by that displacement.
#[derive(Debug, Default, Clone)]
pub struct NearlySorted {
    pub items: Sparse,
}

impl NearlySorted {
    pub fn with_capacity(n: usize) -> Self {
        NearlySorted { items: Vec::with_capacity(n) }
    }

    #[inline]
    pub fn push(&mut self, pos: u64, val: f64) {
        ops::add(1);
        let items = &mut self.items;
        let mut i = items.len();
        while i > 0 && items[i - 1].0 > pos {
            i -= 1;
        }
        if i > 0 && items[i - 1].0 == pos {
            items[i - 1].1 += val;
        } else {
            items.insert(i, (pos, val));
        }
    }

    pub fn finish(self) -> Sparse {
        self.items
    }
}

/// Same as [`NearlySorted`] but for bare positions (set union).
#[derive(Debug, Default, Clone)]
pub struct NearlySortedSet {
    pub items: Vec<u64>,
}

impl NearlySortedSet {
    #[inline]
    pub fn push(&mut self, pos: u64) {
        ops::add(1);
        let items = &mut self.items;
        let mut i = items.len();
        while i > 0 && items[i - 1] > pos {
            i -= 1;
        }
        if !(i > 0 && items[i - 1] == pos) {
            items.insert(i, pos);
        }
    }
}

/// Merge two sorted sparse vectors, adding values at shared positions.
pub fn merge_add(a: &[(u64, f64)], b: &[(u64, f64)]) -> Sparse {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let (pa, pb) = (a[i].0, b[j].0);
        if pa < pb {
            out.push(a[i]);
            i += 1;
        } else if pb < pa {
            out.push(b[j]);
            j += 1;
        } else {
            out.push((pa, a[i].1 + b[j].1));
            i += 1;
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    ops::add((a.len() + b.len()) as u64);
    out
}

/// Merge two sorted position lists into their sorted union.
pub fn merge_union(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    ops::add((a.len() + b.len()) as u64);
    out
}

/// Forward-only lookup into a sorted sparse vector.
///
/// Queries must have nondecreasing lower bounds (passed to [`Cursor::seek`]);
/// within one seek window lookups scan a bounded number of entries.
pub struct Cursor<'a> {
    data: &'a [(u64, f64)],
    at: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(data: &'a [(u64, f64)]) -> Self {
        Cursor { data, at: 0 }
    }

    /// Move to the first entry with position `>= lo`.
    #[inline]
    pub fn seek(&mut self, lo: u64) {
        while self.at < self.data.len() && self.data[self.at].0 < lo {
            self.at += 1;
            ops::add(1);
        }
    }

    /// Value at `pos` (zero if absent), scanning forward from the seek point.
    #[inline]
    pub fn get(&self, pos: u64) -> f64 {
        let mut i = self.at;
        while i < self.data.len() && self.data[i].0 < pos {
            i += 1;
        }
        ops::add(1);
        if i < self.data.len() && self.data[i].0 == pos {
            self.data[i].1
        } else {
            0.0
        }
    }
}

/// Disjoint half-open intervals `[lo, hi)` in units of a common level,
/// sorted ascending.
#[derive(Debug, Default, Clone)]
pub struct IntervalUnion {
    pub spans: Vec<(u64, u64)>,
}

impl IntervalUnion {
    /// Build from intervals whose left ends are nondecreasing.
    pub fn from_monotone(it: impl IntoIterator<Item = (u64, u64)>) -> Self {
        let mut spans: Vec<(u64, u64)> = Vec::new();
        for (lo, hi) in it {
            ops::add(1);
            match spans.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => spans.push((lo, hi)),
            }
        }
        IntervalUnion { spans }
    }

    pub fn union(&self, other: &IntervalUnion) -> IntervalUnion {
        let mut merged = Vec::with_capacity(self.spans.len() + other.spans.len());
        let (a, b) = (&self.spans, &other.spans);
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            if j >= b.len() || (i < a.len() && a[i].0 <= b[j].0) {
                merged.push(a[i]);
                i += 1;
            } else {
                merged.push(b[j]);
                j += 1;
            }
        }
        IntervalUnion::from_monotone(merged)
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

/// Membership sweep against an [`IntervalUnion`]; queries must have
/// nondecreasing left ends.
pub struct Sweep<'a> {
    spans: &'a [(u64, u64)],
    at: usize,
}

impl<'a> Sweep<'a> {
    pub fn new(u: &'a IntervalUnion) -> Self {
        Sweep { spans: &u.spans, at: 0 }
    }

    /// Whether `[lo, hi)` meets the union with positive length.
    #[inline]
    pub fn meets(&mut self, lo: u64, hi: u64) -> bool {
        while self.at < self.spans.len() && self.spans[self.at].1 <= lo {
            self.at += 1;
            ops::add(1);
        }
        ops::add(1);
        self.at < self.spans.len() && self.spans[self.at].0 < hi
    }
}

/// LSD radix sort of `u128` keys, followed by deduplication.
pub fn radix_sort_dedup(keys: &mut Vec<u128>) {
    let n = keys.len();
    ops::add(n as u64);
    if n < 256 {
        keys.sort_unstable();
        keys.dedup();
        return;
    }
    let (mut or, mut and) = (0u128, !0u128);
    for &k in keys.iter() {
        or |= k;
        and &= k;
    }
    let varying = or ^ and;
    let mut buf = vec![0u128; n];
    for digit in 0..16 {
        let shift = digit * 8;
        if (varying >> shift) & 0xff == 0 {
            continue;
        }
        ops::add(n as u64);
        let mut count = [0usize; 257];
        for &k in keys.iter() {
            count[((k >> shift) & 0xff) as usize + 1] += 1;
        }
        for b in 0..256 {
            count[b + 1] += count[b];
        }
        for &k in keys.iter() {
            let b = ((k >> shift) & 0xff) as usize;
            buf[count[b]] = k;
            count[b] += 1;
        }
        std::mem::swap(keys, &mut buf);
    }
    keys.dedup();
}

/// Stable permutation sorting `keys` ascending (LSD radix on varying bytes).
pub fn radix_argsort(keys: &[u64]) -> Vec<u32> {
    let n = keys.len();
    ops::add(n as u64);
    let mut idx: Vec<u32> = (0..n as u32).collect();
    if n < 256 {
        idx.sort_by_key(|&i| keys[i as usize]);
        return idx;
    }
    let (mut or, mut and) = (0u64, !0u64);
    for &k in keys {
        or |= k;
        and &= k;
    }
    let varying = or ^ and;
    let mut buf = vec![0u32; n];
    for digit in 0..8 {
        let shift = digit * 8;
        if (varying >> shift) & 0xff == 0 {
            continue;
        }
        ops::add(n as u64);
        let mut count = [0usize; 257];
        for &i in &idx {
            count[((keys[i as usize] >> shift) & 0xff) as usize + 1] += 1;
        }
        for b in 0..256 {
            count[b + 1] += count[b];
        }
        for &i in &idx {
            let b = ((keys[i as usize] >> shift) & 0xff) as usize;
            buf[count[b]] = i;
            count[b] += 1;
        }
        std::mem::swap(&mut idx, &mut buf);
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nearly_sorted_accumulates() {
        let mut acc = NearlySorted::default();
        for &(p, v) in &[(0, 1.0), (2, 1.0), (1, 1.0), (2, 2.0), (5, 1.0), (3, 1.0)] {
            acc.push(p, v);
        }
        assert_eq!(acc.finish(), vec![(0, 1.0), (1, 1.0), (2, 3.0), (3, 1.0), (5, 1.0)]);
    }

    #[test]
    fn interval_sweep() {
        let u = IntervalUnion::from_monotone([(0, 2), (1, 3), (5, 6)]);
        assert_eq!(u.spans, vec![(0, 3), (5, 6)]);
        let mut s = Sweep::new(&u);
        assert!(s.meets(0, 1));
        assert!(!s.meets(3, 5));
        assert!(s.meets(4, 8));
        assert!(!s.meets(6, 9));
    }

    #[test]
    fn radix_matches_std_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut v: Vec<u128> =
            (0..5000).map(|_| (rng.gen_range(0..300u128) << 64) | rng.gen_range(0..900u128)).collect();
        let mut w = v.clone();
        radix_sort_dedup(&mut v);
        w.sort_unstable();
        w.dedup();
        assert_eq!(v, w);
    }

    #[test]
    fn argsort_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let keys: Vec<u64> = (0..5000).map(|_| rng.gen_range(0..300u64) << 20).collect();
        let idx = radix_argsort(&keys);
        for w in idx.windows(2) {
            let (a, b) = (w[0] as usize, w[1] as usize);
            assert!(keys[a] < keys[b] || (keys[a] == keys[b] && a < b));
        }
    }
}
