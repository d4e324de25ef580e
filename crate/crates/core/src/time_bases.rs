//! Multilevel systems on the time interval I = [0,1].
//!
//! Three families share one index layout `(level, position)`:
//!
//! * [`Family::ThreePoint`]: continuous piecewise-linear wavelets built from
//!   three nodal hats (trial side).
//! * [`Family::Ortho`]: the L2-orthonormal discontinuous piecewise-linear
//!   wavelets (test side).
//! * [`Family::Hat`]: the hierarchical hat basis, used to interpolate data.
//!
//! Level-0 wavelets coincide with the level-0 scaling functions. Supports are
//! stored as exact dyadic intervals so overlap tests never suffer float ties.

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Deepest level any routine will touch; keys reserve 8 bits for the level.
pub const MAX_LEVEL: u32 = 48;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BasisError {
    #[error("index ({level},{pos}) is not a valid {family:?} index")]
    Range { family: Family, level: u32, pos: u64 },
    #[error("evaluation point {0} lies outside [0,1]")]
    Domain(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    ThreePoint,
    Ortho,
    Hat,
}

/// Single-scale systems underlying the families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scaling {
    /// Continuous nodal hats `φ_(ℓ,n)`, `0 ≤ n ≤ 2^ℓ`.
    Nodal,
    /// Discontinuous linears, two per subinterval, `0 ≤ n < 2^(ℓ+1)`.
    Dg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeIndex {
    pub level: u32,
    pub pos: u64,
}

impl TimeIndex {
    pub const fn new(level: u32, pos: u64) -> Self {
        TimeIndex { level, pos }
    }

    /// Packed key; sorting keys sorts by level first, then position.
    #[inline]
    pub const fn key(self) -> u64 {
        ((self.level as u64) << 56) | self.pos
    }

    #[inline]
    pub const fn from_key(key: u64) -> Self {
        TimeIndex { level: (key >> 56) as u32, pos: key & ((1u64 << 56) - 1) }
    }
}

#[inline]
pub const fn key_level(key: u64) -> u32 {
    (key >> 56) as u32
}

#[inline]
pub const fn key_pos(key: u64) -> u64 {
    key & ((1u64 << 56) - 1)
}

/// Closed dyadic interval `[lo, hi]·2^(-level)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub lo: u64,
    pub hi: u64,
    pub level: u32,
}

impl Interval {
    pub fn new(lo: u64, hi: u64, level: u32) -> Self {
        debug_assert!(lo < hi);
        Interval { lo, hi, level }
    }

    /// Endpoints expressed at a finer (or equal) level.
    #[inline]
    pub fn at(self, level: u32) -> (u64, u64) {
        let s = level - self.level;
        (self.lo << s, self.hi << s)
    }

    /// Intersection with positive measure.
    pub fn overlaps(self, other: Interval) -> bool {
        let l = self.level.max(other.level);
        let (a, b) = self.at(l);
        let (c, d) = other.at(l);
        a < d && c < b
    }

    pub fn contains_interval(self, other: Interval) -> bool {
        let l = self.level.max(other.level);
        let (a, b) = self.at(l);
        let (c, d) = other.at(l);
        a <= c && d <= b
    }

    pub fn left(self) -> f64 {
        self.lo as f64 / (1u64 << self.level) as f64
    }

    pub fn right(self) -> f64 {
        self.hi as f64 / (1u64 << self.level) as f64
    }
}

/// At most four `(scaling position, coefficient)` pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mask {
    entries: [(u64, f64); 4],
    len: usize,
}

impl Mask {
    fn from_slice(items: &[(u64, f64)]) -> Self {
        let mut entries = [(0, 0.0); 4];
        entries[..items.len()].copy_from_slice(items);
        Mask { entries, len: items.len() }
    }

    #[inline]
    pub fn entries(&self) -> &[(u64, f64)] {
        &self.entries[..self.len]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Smallest position in the mask (entries are stored ascending).
    #[inline]
    pub fn first(&self) -> u64 {
        self.entries[0].0
    }
}

impl Scaling {
    pub fn count(self, level: u32) -> u64 {
        match self {
            Scaling::Nodal => (1u64 << level) + 1,
            Scaling::Dg => 1u64 << (level + 1),
        }
    }

    /// Elements (subintervals of length 2^-level) carrying `φ_(level,n)`,
    /// as a half-open range `[first, last)`.
    #[inline]
    pub fn element_range(self, level: u32, n: u64) -> (u64, u64) {
        match self {
            Scaling::Nodal => {
                let m = 1u64 << level;
                (n.saturating_sub(1), if n < m { n + 1 } else { m })
            }
            Scaling::Dg => (n / 2, n / 2 + 1),
        }
    }

    /// Support of `φ_(level,n)` in units of 2^-level.
    #[inline]
    pub fn support(self, level: u32, n: u64) -> (u64, u64) {
        self.element_range(level, n)
    }

    /// Limits of `φ_(level,n)` at the two ends of element `k`, taken from
    /// inside the element.
    #[inline]
    pub fn on_element(self, _level: u32, n: u64, k: u64) -> (f64, f64) {
        match self {
            Scaling::Nodal => {
                if k + 1 == n {
                    (0.0, 1.0)
                } else if k == n {
                    (1.0, 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Scaling::Dg => {
                if k != n / 2 {
                    (0.0, 0.0)
                } else if n.is_multiple_of(2) {
                    (1.0, 1.0)
                } else {
                    (-SQRT_3, SQRT_3)
                }
            }
        }
    }

    /// Column of the prolongation matrix: `φ_(fine-1,n)` in terms of `Φ_fine`.
    pub fn refine_mask(self, fine: u32, n: u64) -> Mask {
        debug_assert!(fine >= 1);
        match self {
            Scaling::Nodal => {
                let last = 1u64 << fine;
                let c = 2 * n;
                if c == 0 {
                    Mask::from_slice(&[(0, 1.0), (1, 0.5)])
                } else if c == last {
                    Mask::from_slice(&[(c - 1, 0.5), (c, 1.0)])
                } else {
                    Mask::from_slice(&[(c - 1, 0.5), (c, 1.0), (c + 1, 0.5)])
                }
            }
            Scaling::Dg => {
                let b = 4 * (n / 2);
                if n.is_multiple_of(2) {
                    Mask::from_slice(&[(b, 1.0), (b + 2, 1.0)])
                } else {
                    let h = 0.5 * SQRT_3;
                    Mask::from_slice(&[(b, -h), (b + 1, 0.5), (b + 2, h), (b + 3, 0.5)])
                }
            }
        }
    }

    /// Positions `n` at level `fine-1` whose refinement mask touches the
    /// fine position `m`, as an inclusive range.
    pub fn refine_rows(self, m: u64) -> (u64, u64) {
        match self {
            Scaling::Nodal => (m.saturating_sub(1) / 2, m.div_ceil(2)),
            Scaling::Dg => {
                let b = 2 * (m / 4);
                (b, b + 1)
            }
        }
    }

    /// Point value of `φ_(level,n)`; right limit at interior jumps, left
    /// limit at t = 1.
    pub fn eval(self, level: u32, n: u64, t: f64) -> f64 {
        let m = (1u64 << level) as f64;
        match self {
            Scaling::Nodal => (1.0 - (t * m - n as f64).abs()).max(0.0),
            Scaling::Dg => {
                let cells = 1u64 << level;
                let k = ((t * m).floor() as u64).min(cells - 1);
                if k != n / 2 {
                    return 0.0;
                }
                if n.is_multiple_of(2) {
                    1.0
                } else {
                    let s = t * m - k as f64;
                    SQRT_3 * (2.0 * s - 1.0)
                }
            }
        }
    }
}

impl Family {
    pub fn scaling(self) -> Scaling {
        match self {
            Family::ThreePoint | Family::Hat => Scaling::Nodal,
            Family::Ortho => Scaling::Dg,
        }
    }

    /// Number of wavelets on `level`.
    pub fn count(self, level: u32) -> u64 {
        if level == 0 {
            return 2;
        }
        match self {
            Family::ThreePoint | Family::Hat => 1u64 << (level - 1),
            Family::Ortho => 1u64 << level,
        }
    }

    pub fn is_valid(self, idx: TimeIndex) -> bool {
        idx.level <= MAX_LEVEL && idx.pos < self.count(idx.level)
    }

    fn check(self, idx: TimeIndex) -> Result<(), BasisError> {
        if self.is_valid(idx) {
            Ok(())
        } else {
            Err(BasisError::Range { family: self, level: idx.level, pos: idx.pos })
        }
    }

    pub fn roots(self) -> [TimeIndex; 2] {
        [TimeIndex::new(0, 0), TimeIndex::new(0, 1)]
    }

    /// Coefficients of the wavelet in the scaling basis of its own level.
    pub fn mask(self, idx: TimeIndex) -> Result<Mask, BasisError> {
        self.check(idx)?;
        Ok(self.mask_unchecked(idx.level, idx.pos))
    }

    #[inline]
    pub fn mask_unchecked(self, level: u32, n: u64) -> Mask {
        if level == 0 {
            return Mask::from_slice(&[(n, 1.0)]);
        }
        match self {
            Family::ThreePoint => {
                let s = (2f64).powf(level as f64 / 2.0);
                let last = (1u64 << (level - 1)) - 1;
                if level == 1 {
                    Mask::from_slice(&[(0, -s), (1, s), (2, -s)])
                } else if n == 0 {
                    Mask::from_slice(&[(0, -s), (1, s), (2, -0.5 * s)])
                } else if n == last {
                    let e = 1u64 << level;
                    Mask::from_slice(&[(e - 2, -0.5 * s), (e - 1, s), (e, -s)])
                } else {
                    Mask::from_slice(&[(2 * n, -0.5 * s), (2 * n + 1, s), (2 * n + 2, -0.5 * s)])
                }
            }
            Family::Ortho => {
                let c = (2f64).powf((level as f64 - 1.0) / 2.0);
                let b = 4 * (n / 2);
                let h = 0.5 * SQRT_3 * c;
                if n.is_multiple_of(2) {
                    Mask::from_slice(&[(b, -0.5 * c), (b + 1, -h), (b + 2, 0.5 * c), (b + 3, -h)])
                } else {
                    Mask::from_slice(&[(b + 1, -c), (b + 3, c)])
                }
            }
            Family::Hat => Mask::from_slice(&[(2 * n + 1, 1.0)]),
        }
    }

    /// `S(λ) = supp ψ_λ` in units of `2^-level`.
    #[inline]
    pub fn support_units(self, level: u32, n: u64) -> (u64, u64) {
        if level == 0 {
            return (0, 1);
        }
        match self {
            Family::ThreePoint => {
                let e = 1u64 << level;
                if level == 1 {
                    (0, 2)
                } else if n == 0 {
                    (0, 3)
                } else if n == (1u64 << (level - 1)) - 1 {
                    (e - 3, e)
                } else {
                    (2 * n - 1, 2 * n + 3)
                }
            }
            Family::Ortho => {
                let k = n / 2;
                (2 * k, 2 * k + 2)
            }
            Family::Hat => (2 * n, 2 * n + 2),
        }
    }

    pub fn support(self, idx: TimeIndex) -> Interval {
        let (lo, hi) = self.support_units(idx.level, idx.pos);
        Interval::new(lo, hi, idx.level)
    }

    /// Parents: indices one level up whose supports overlap with positive
    /// measure. Roots have none.
    pub fn parents(self, idx: TimeIndex) -> Vec<TimeIndex> {
        if idx.level == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(3);
        self.for_each_parent(idx, |p| out.push(p));
        out
    }

    #[inline]
    pub fn for_each_parent(self, idx: TimeIndex, mut f: impl FnMut(TimeIndex)) {
        if idx.level == 0 {
            return;
        }
        let pl = idx.level - 1;
        let me = self.support(idx);
        let (lo, hi) = self.candidate_range(pl, idx.pos / 2, 3);
        for p in lo..=hi {
            let cand = TimeIndex::new(pl, p);
            if self.support(cand).overlaps(me) {
                f(cand);
            }
        }
    }

    /// Indices on `level` whose supports meet `iv` in positive measure, in
    /// increasing position. Supports are monotone in the position, so the
    /// first one is found by bisection.
    pub fn for_each_overlapping(self, level: u32, iv: Interval, mut f: impl FnMut(TimeIndex)) {
        let lv = level.max(iv.level);
        let (a, b) = iv.at(lv);
        let at = |n: u64| self.support(TimeIndex::new(level, n)).at(lv);
        let (mut lo, mut hi) = (0, self.count(level));
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if at(mid).1 <= a {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let mut n = lo;
        while n < self.count(level) && at(n).0 < b {
            f(TimeIndex::new(level, n));
            n += 1;
        }
    }

    /// Children: indices one level down whose supports overlap.
    pub fn children(self, idx: TimeIndex) -> Vec<TimeIndex> {
        let mut out = Vec::with_capacity(6);
        self.for_each_child(idx, |c| out.push(c));
        out
    }

    #[inline]
    pub fn for_each_child(self, idx: TimeIndex, mut f: impl FnMut(TimeIndex)) {
        let cl = idx.level + 1;
        if cl > MAX_LEVEL {
            return;
        }
        let me = self.support(idx);
        let centre = if idx.level == 0 { 0 } else { 2 * idx.pos };
        let (lo, hi) = self.candidate_range(cl, centre, 5);
        for c in lo..=hi {
            let cand = TimeIndex::new(cl, c);
            if self.support(cand).overlaps(me) {
                f(cand);
            }
        }
    }

    fn candidate_range(self, level: u32, centre: u64, radius: u64) -> (u64, u64) {
        let count = self.count(level);
        let lo = centre.saturating_sub(radius);
        let hi = (centre + radius).min(count - 1);
        (lo.min(count - 1), hi)
    }

    /// Point value of the wavelet at `t`.
    pub fn evaluate(self, idx: TimeIndex, t: f64) -> Result<f64, BasisError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(BasisError::Domain(t));
        }
        let mask = self.mask(idx)?;
        let sc = self.scaling();
        Ok(mask.entries().iter().map(|&(m, c)| c * sc.eval(idx.level, m, t)).sum())
    }

    /// Value at `t = 0` (used by the trace form and the initial datum).
    pub fn value_at_zero(self, idx: TimeIndex) -> f64 {
        self.evaluate(idx, 0.0).unwrap_or(0.0)
    }
}

/// Node of the hierarchical hat `ψ_λ` (its peak).
pub fn hat_node(idx: TimeIndex) -> f64 {
    if idx.level == 0 {
        idx.pos as f64
    } else {
        (2 * idx.pos + 1) as f64 / (1u64 << idx.level) as f64
    }
}

/// Dual functional of the hierarchical hat basis: point value at the peak
/// minus the mean of the values at the two ends of its support.
pub fn hat_dual(idx: TimeIndex, f: impl Fn(f64) -> f64) -> f64 {
    if idx.level == 0 {
        return f(idx.pos as f64);
    }
    let h = 1.0 / (1u64 << idx.level) as f64;
    let x = hat_node(idx);
    f(x) - 0.5 * (f(x - h) + f(x + h))
}

/// Coarse-to-fine sample used by tests: the `2^level + 1` grid points.
pub fn grid(level: u32) -> Vec<f64> {
    let m = 1u64 << level;
    (0..=m).map(|k| k as f64 / m as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-13
    }

    #[test]
    fn threepoint_level_one_mask() {
        let m = Family::ThreePoint.mask(TimeIndex::new(1, 0)).unwrap();
        let e = m.entries();
        assert_eq!(e.len(), 3);
        assert!(close(e[0].1, -SQRT_2) && close(e[1].1, SQRT_2) && close(e[2].1, -SQRT_2));
        assert_eq!((e[0].0, e[1].0, e[2].0), (0, 1, 2));
    }

    #[test]
    fn level_zero_is_identity() {
        let m = Family::ThreePoint.mask(TimeIndex::new(0, 0)).unwrap();
        assert_eq!(m.entries(), &[(0, 1.0)]);
    }

    #[test]
    fn interior_threepoint_mask() {
        let s = 2f64.powf(1.5);
        let m = Family::ThreePoint.mask(TimeIndex::new(3, 1)).unwrap();
        assert_eq!(m.entries(), &[(2, -0.5 * s), (3, s), (4, -0.5 * s)]);
    }

    #[test]
    fn boundary_threepoint_values() {
        let s = 2.0;
        let v: Vec<f64> =
            (0..4).map(|k| Family::ThreePoint.evaluate(TimeIndex::new(2, 0), k as f64 / 4.0).unwrap()).collect();
        assert!(close(v[0], -s) && close(v[1], s) && close(v[2], -0.5 * s) && close(v[3], 0.0));
    }

    #[test]
    fn invalid_index_is_range_error() {
        assert!(Family::ThreePoint.mask(TimeIndex::new(2, 2)).is_err());
        assert!(Family::Ortho.mask(TimeIndex::new(1, 2)).is_err());
        assert!(Family::Hat.evaluate(TimeIndex::new(0, 0), 1.5).is_err());
    }

    #[test]
    fn point_values() {
        assert!(close(Family::ThreePoint.evaluate(TimeIndex::new(1, 0), 0.0).unwrap(), -SQRT_2));
        assert!(close(Family::ThreePoint.evaluate(TimeIndex::new(0, 0), 0.0).unwrap(), 1.0));
        assert!(close(Family::Ortho.evaluate(TimeIndex::new(0, 1), 0.75).unwrap(), SQRT_3 / 2.0));
    }

    #[test]
    fn ortho_level_one_shapes() {
        // Continuous V-shaped wavelet and the discontinuous one, normalised.
        let f = |n, t| Family::Ortho.evaluate(TimeIndex::new(1, n), t).unwrap();
        assert!(close(f(1, 0.0), SQRT_3) && close(f(1, 1.0), SQRT_3));
        assert!(close(f(1, 0.5), -SQRT_3));
        assert!(close(f(0, 0.0), 1.0) && close(f(0, 0.5), 2.0) && close(f(0, 1.0), -1.0));
        assert!((f(0, 0.4999999) + 2.0).abs() < 1e-5);
    }

    #[test]
    fn ortho_dilation_rule() {
        let c = SQRT_2;
        for &t in &[0.0, 0.1, 0.2, 0.3, 0.45] {
            let direct = Family::Ortho.evaluate(TimeIndex::new(2, 0), t).unwrap();
            let scaled = c * Family::Ortho.evaluate(TimeIndex::new(1, 0), 2.0 * t).unwrap();
            assert!(close(direct, scaled));
        }
        assert!(close(Family::Ortho.evaluate(TimeIndex::new(2, 0), 0.75).unwrap(), 0.0));
    }

    #[test]
    fn parent_child_examples() {
        let p = Family::ThreePoint.parents(TimeIndex::new(2, 0));
        assert_eq!(p, vec![TimeIndex::new(1, 0)]);
        let c = Family::ThreePoint.children(TimeIndex::new(1, 0));
        assert_eq!(c, vec![TimeIndex::new(2, 0), TimeIndex::new(2, 1)]);
        let p = Family::Ortho.parents(TimeIndex::new(1, 0));
        assert_eq!(p, vec![TimeIndex::new(0, 0), TimeIndex::new(0, 1)]);
        assert!(Family::ThreePoint.parents(TimeIndex::new(0, 0)).is_empty());
    }

    #[test]
    fn parent_child_relation_is_mutual() {
        for fam in [Family::ThreePoint, Family::Ortho, Family::Hat] {
            for l in 0..6 {
                for n in 0..fam.count(l) {
                    let i = TimeIndex::new(l, n);
                    for c in fam.children(i) {
                        assert!(fam.parents(c).contains(&i), "{fam:?} {i:?} -> {c:?}");
                    }
                    for p in fam.parents(i) {
                        assert!(fam.children(p).contains(&i));
                    }
                }
            }
        }
    }

    #[test]
    fn hat_dual_examples() {
        assert!(close(hat_dual(TimeIndex::new(0, 0), |_| 3.5), 3.5));
        assert!(close(hat_dual(TimeIndex::new(1, 0), |t| t), 0.0));
        assert!(close(hat_dual(TimeIndex::new(2, 0), |t| t * t), -1.0 / 16.0));
    }

    #[test]
    fn keys_sort_by_level_then_position() {
        let a = TimeIndex::new(1, 7).key();
        let b = TimeIndex::new(2, 0).key();
        assert!(a < b);
        assert_eq!(TimeIndex::from_key(b), TimeIndex::new(2, 0));
    }
}
