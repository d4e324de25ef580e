//! Double-trees: finite subsets of a product of two mother trees whose
//! fibers in either coordinate are trees, and tensor-product operators
//! applied on them.
//!
//! Nodes are stored once, sorted time-major (axis 0, then axis 1); a
//! permutation gives the axis-1-major view. A node is identified by its
//! slot, so several value vectors can overlay one tree.

use std::ops::Range;

use crate::matvec::{apply_tree, Part, TimeForm};
use crate::ops;
use crate::sorted::{merge_union, radix_argsort, radix_sort_dedup};
use crate::space::{
    apply_form_ss, apply_form_ss_masked, hb_to_ss, hb_to_ss_transpose, hb_to_ss_unmasked, triangulation, Marks, Mesh,
    SpaceForm, Vid,
};
use crate::time_bases::{Family, TimeIndex};
use crate::tree::{Axis, TimeAxis};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DoubleTreeError {
    #[error("the coarse double-tree is not contained in the enlarged one")]
    NotSubset,
    #[error("marked node ({0}, {1}) is not in the enlarged double-tree minus the current one")]
    BadMark(u64, u64),
    #[error("ancestor ({0}, {1}) is missing from the enlarged double-tree")]
    MissingAncestor(u64, u64),
}

#[inline]
fn pack(t: u64, s: u64) -> u128 {
    ((t as u128) << 64) | s as u128
}

#[inline]
fn unpack(k: u128) -> (u64, u64) {
    ((k >> 64) as u64, k as u64)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DoubleTree {
    pairs: Vec<(u64, u64)>,
    p0: Vec<u64>,
    p0_start: Vec<u32>,
    t_rank: Vec<u32>,
    p1: Vec<u64>,
    p1_start: Vec<u32>,
    by_space: Vec<u32>,
}

impl DoubleTree {
    /// Builds from arbitrary pairs (duplicates removed).
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, u64)>) -> Self {
        let mut keys: Vec<u128> = pairs.into_iter().map(|(t, s)| pack(t, s)).collect();
        radix_sort_dedup(&mut keys);
        Self::from_sorted(keys.into_iter().map(unpack).collect())
    }

    fn from_packed(mut keys: Vec<u128>) -> Self {
        radix_sort_dedup(&mut keys);
        Self::from_sorted(keys.into_iter().map(unpack).collect())
    }

    /// Builds from pairs already sorted time-major without duplicates.
    pub fn from_sorted(pairs: Vec<(u64, u64)>) -> Self {
        debug_assert!(pairs.windows(2).all(|w| w[0] < w[1]));
        let n = pairs.len();
        let (mut p0, mut p0_start, mut t_rank) = (Vec::new(), Vec::new(), Vec::with_capacity(n));
        for (i, &(t, _)) in pairs.iter().enumerate() {
            if p0.last() != Some(&t) {
                p0.push(t);
                p0_start.push(i as u32);
            }
            t_rank.push(p0.len() as u32 - 1);
        }
        p0_start.push(n as u32);
        let skeys: Vec<u64> = pairs.iter().map(|p| p.1).collect();
        let by_space = radix_argsort(&skeys);
        let (mut p1, mut p1_start) = (Vec::new(), Vec::new());
        for (i, &slot) in by_space.iter().enumerate() {
            let s = skeys[slot as usize];
            if p1.last() != Some(&s) {
                p1.push(s);
                p1_start.push(i as u32);
            }
        }
        p1_start.push(n as u32);
        ops::add(2 * n as u64);
        DoubleTree { pairs, p0, p0_start, t_rank, p1, p1_start, by_space }
    }

    /// All pairs of axis roots.
    pub fn roots(ax0: &impl Axis, ax1: &impl Axis) -> Self {
        let r1 = ax1.roots();
        Self::from_pairs(ax0.roots().into_iter().flat_map(|t| r1.iter().map(move |&s| (t, s))))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(u64, u64)] {
        &self.pairs
    }

    pub fn pair(&self, slot: usize) -> (u64, u64) {
        self.pairs[slot]
    }

    /// `P₀Λ`, sorted.
    pub fn project0(&self) -> &[u64] {
        &self.p0
    }

    /// `P₁Λ`, sorted.
    pub fn project1(&self) -> &[u64] {
        &self.p1
    }

    /// Slots of the axis-1 fiber at `project0()[i]`; contiguous, sorted by axis-1 key.
    pub fn fiber1(&self, i: usize) -> Range<usize> {
        self.p0_start[i] as usize..self.p0_start[i + 1] as usize
    }

    /// Slots of the axis-0 fiber at `project1()[j]`, sorted by axis-0 key.
    pub fn fiber0(&self, j: usize) -> &[u32] {
        &self.by_space[self.p1_start[j] as usize..self.p1_start[j + 1] as usize]
    }

    /// Axis-1 keys of the fiber at axis-0 key `t` (empty when absent).
    pub fn fiber1_keys(&self, t: u64) -> Vec<u64> {
        match self.p0.binary_search(&t) {
            Ok(i) => self.pairs[self.fiber1(i)].iter().map(|p| p.1).collect(),
            Err(_) => Vec::new(),
        }
    }

    /// Axis-0 keys of the fiber at axis-1 key `s` (empty when absent).
    pub fn fiber0_keys(&self, s: u64) -> Vec<u64> {
        match self.p1.binary_search(&s) {
            Ok(j) => self.fiber0(j).iter().map(|&k| self.pairs[k as usize].0).collect(),
            Err(_) => Vec::new(),
        }
    }

    /// Index of `slot`'s axis-0 key in `project0()`.
    pub fn time_rank(&self, slot: usize) -> usize {
        self.t_rank[slot] as usize
    }

    pub fn slot(&self, t: u64, s: u64) -> Option<usize> {
        let i = self.p0.binary_search(&t).ok()?;
        let r = self.fiber1(i);
        self.pairs[r.clone()].binary_search_by(|p| p.1.cmp(&s)).ok().map(|k| r.start + k)
    }

    pub fn contains(&self, t: u64, s: u64) -> bool {
        self.slot(t, s).is_some()
    }

    /// Whether every fiber is closed under parents.
    pub fn is_double_tree(&self, ax0: &impl Axis, ax1: &impl Axis) -> bool {
        let mut par = Vec::new();
        self.pairs.iter().all(|&(t, s)| {
            par.clear();
            ax0.parents(t, &mut par);
            if !par.iter().all(|&p| self.contains(p, s)) {
                return false;
            }
            par.clear();
            ax1.parents(s, &mut par);
            par.iter().all(|&p| self.contains(t, p))
        })
    }

    pub fn union(&self, other: &DoubleTree) -> DoubleTree {
        let mut out = Vec::with_capacity(self.len() + other.len());
        let (a, b) = (&self.pairs, &other.pairs);
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
        ops::add(out.len() as u64);
        DoubleTree::from_sorted(out)
    }

    /// Pairs satisfying `keep`, in order.
    pub fn filter(&self, mut keep: impl FnMut(u64, u64) -> bool) -> DoubleTree {
        DoubleTree::from_sorted(self.pairs.iter().copied().filter(|&(t, s)| keep(t, s)).collect())
    }

    /// For each slot of `self`, the slot of the same pair in `sup`
    /// (`None` if absent). Merge-join on the sorted pair lists.
    pub fn embed_into(&self, sup: &DoubleTree) -> Vec<Option<u32>> {
        let mut out = Vec::with_capacity(self.len());
        let mut j = 0;
        for p in &self.pairs {
            while j < sup.pairs.len() && sup.pairs[j] < *p {
                j += 1;
            }
            out.push((j < sup.pairs.len() && sup.pairs[j] == *p).then_some(j as u32));
        }
        ops::add((self.len() + sup.len()) as u64);
        out
    }

    /// Values on `self` moved to `to` (zero where absent).
    pub fn transfer(&self, vals: &[f64], to: &DoubleTree) -> Vec<f64> {
        let mut out = vec![0.0; to.len()];
        for (v, slot) in vals.iter().zip(self.embed_into(to)) {
            if let Some(s) = slot {
                out[s as usize] = *v;
            }
        }
        out
    }

    /// Smallest double-tree containing `pairs`: ancestors are generated one
    /// total level at a time, so each pair is deduplicated exactly once.
    pub fn closure(pairs: impl IntoIterator<Item = (u64, u64)>, ax0: &impl Axis, ax1: &impl Axis) -> DoubleTree {
        let mut buckets: Vec<Vec<u128>> = Vec::new();
        let push = |buckets: &mut Vec<Vec<u128>>, t: u64, s: u64| {
            let l = (ax0.level(t) + ax1.level(s)) as usize;
            if buckets.len() <= l {
                buckets.resize(l + 1, Vec::new());
            }
            buckets[l].push(pack(t, s));
        };
        for (t, s) in pairs {
            push(&mut buckets, t, s);
        }
        let mut all: Vec<u128> = Vec::new();
        let mut par = Vec::new();
        for l in (0..buckets.len()).rev() {
            let mut level = std::mem::take(&mut buckets[l]);
            radix_sort_dedup(&mut level);
            for &k in &level {
                let (t, s) = unpack(k);
                par.clear();
                ax0.parents(t, &mut par);
                for &p in &par {
                    push(&mut buckets, p, s);
                }
                par.clear();
                ax1.parents(s, &mut par);
                for &p in &par {
                    push(&mut buckets, t, p);
                }
            }
            ops::add(level.len() as u64);
            all.extend(level);
        }
        DoubleTree::from_packed(all)
    }
}

/// For each key of `a`, the index range of keys in `b` at level
/// `level(a) + shift` whose supports meet that of `a` in positive measure.
///
/// Both lists are level-major with supports moving monotonically in the
/// position, so one pointer per level suffices.
pub fn overlap_windows(a: &[u64], fa: Family, b: &[u64], fb: Family, shift: u32) -> Vec<(u32, u32)> {
    let ranges = crate::tree::level_ranges(b.iter().map(|&k| TimeIndex::from_key(k).level));
    let mut ptr: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    let mut out = Vec::with_capacity(a.len());
    for &ka in a {
        let ia = TimeIndex::from_key(ka);
        let l = (ia.level + shift) as usize;
        if l >= ranges.len() {
            out.push((0, 0));
            continue;
        }
        let sa = fa.support(ia);
        let end = ranges[l].1;
        let mut p = ptr[l];
        while p < end {
            let sb = fb.support(TimeIndex::from_key(b[p]));
            let lv = sa.level.max(sb.level);
            if sb.at(lv).1 > sa.at(lv).0 {
                break;
            }
            p += 1;
        }
        ptr[l] = p;
        let mut q = p;
        while q < end {
            let sb = fb.support(TimeIndex::from_key(b[q]));
            let lv = sa.level.max(sb.level);
            if sb.at(lv).0 >= sa.at(lv).1 {
                break;
            }
            q += 1;
        }
        ops::add((q - p + 1) as u64);
        out.push((p as u32, q as u32));
    }
    out
}

/// `Σ`: for every `λ ∈ P₀Λ`, the union of the test fibers `Λ̆_{1,μ}` over
/// test indices `μ` one level finer whose supports meet that of `λ`.
pub fn generate_sigma(form0: TimeForm, test: &DoubleTree, trial: &DoubleTree) -> DoubleTree {
    let win = overlap_windows(&trial.p0, form0.trial, &test.p0, form0.test, 1);
    let mut pairs = Vec::new();
    for (i, &lam) in trial.p0.iter().enumerate() {
        let (p, q) = win[i];
        let mut acc: Vec<u64> = Vec::new();
        for m in p as usize..q as usize {
            let fib: Vec<u64> = test.pairs[test.fiber1(m)].iter().map(|x| x.1).collect();
            acc = if acc.is_empty() { fib } else { merge_union(&acc, &fib) };
        }
        pairs.extend(acc.into_iter().map(|s| (lam, s)));
    }
    close_axis0(pairs.into_iter().map(|(t, s)| pack(t, s)).collect(), &TimeAxis(form0.trial))
}

/// `Θ`: for every `ν ∈ P₁Λ`, the test indices `μ ∈ P₀Λ̆` of the same level
/// as, and overlapping, some `γ` in the trial fiber `Λ_{0,ν}`.
pub fn generate_theta(form0: TimeForm, test: &DoubleTree, trial: &DoubleTree) -> DoubleTree {
    let win = overlap_windows(&trial.p0, form0.trial, &test.p0, form0.test, 0);
    let mut keys: Vec<u128> = Vec::new();
    for (j, &nu) in trial.p1.iter().enumerate() {
        let mut cur: Option<(u32, u32)> = None;
        let emit = |r: (u32, u32), keys: &mut Vec<u128>| {
            for m in r.0..r.1 {
                keys.push(pack(test.p0[m as usize], nu));
            }
        };
        for &slot in trial.fiber0(j) {
            let w = win[trial.t_rank[slot as usize] as usize];
            if w.0 == w.1 {
                continue;
            }
            cur = match cur {
                Some(c) if w.0 <= c.1 => Some((c.0, c.1.max(w.1))),
                Some(c) => {
                    emit(c, &mut keys);
                    Some(w)
                }
                None => Some(w),
            };
        }
        if let Some(c) = cur {
            emit(c, &mut keys);
        }
    }
    close_axis0(keys, &TimeAxis(form0.test))
}

/// Adds the axis-0 ancestors of every pair. Axis-1 fibers of `Σ` and `Θ`
/// are unions of trees already; with overlap-defined time parents the
/// axis-0 fibers may miss ancestors, whose rows are exact all the same.
pub(crate) fn close_axis0(keys: Vec<u128>, ax0: &TimeAxis) -> DoubleTree {
    let mut buckets: Vec<Vec<u128>> = Vec::new();
    for k in keys {
        let l = ax0.level(unpack(k).0) as usize;
        if buckets.len() <= l {
            buckets.resize(l + 1, Vec::new());
        }
        buckets[l].push(k);
    }
    let mut all = Vec::new();
    let mut par = Vec::new();
    for l in (0..buckets.len()).rev() {
        let mut level = std::mem::take(&mut buckets[l]);
        radix_sort_dedup(&mut level);
        if l > 0 {
            for &k in &level {
                let (t, s) = unpack(k);
                par.clear();
                ax0.parents(t, &mut par);
                buckets[l - 1].extend(par.iter().map(|&p| pack(p, s)));
            }
        }
        ops::add(level.len() as u64);
        all.extend(level);
    }
    DoubleTree::from_packed(all)
}

/// Applies a one-dimensional operator between fibers.
pub trait FiberOp {
    /// `out[i] = Σ_j A[out_keys[i], input[j].0] · input[j].1`, restricted to
    /// the blocks selected by `part`.
    fn apply(&mut self, part: Part, out_keys: &[u64], input: &[(u64, f64)], out: &mut [f64]);
}

/// Time operator on wavelet trees.
#[derive(Debug, Clone, Copy)]
pub struct TimeOp(pub TimeForm);

impl FiberOp for TimeOp {
    fn apply(&mut self, part: Part, out_keys: &[u64], input: &[(u64, f64)], out: &mut [f64]) {
        if input.is_empty() {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        out.copy_from_slice(&apply_tree(self.0, part, out_keys, input));
    }
}

/// Space operator in the hierarchical basis on vertex trees, evaluated on
/// the triangulation generated by the union of input and output vertices.
#[derive(Debug)]
pub struct SpaceOp<'m> {
    pub mesh: &'m Mesh,
    pub form: SpaceForm,
    /// Keep boundary trial coefficients (interpolated data); test rows on
    /// the boundary still vanish.
    pub trial_free: bool,
    marks: Marks,
    verts: Vec<Vid>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl<'m> SpaceOp<'m> {
    pub fn new(mesh: &'m Mesh, form: SpaceForm) -> Self {
        SpaceOp { mesh, form, trial_free: false, marks: Marks::new(), verts: Vec::new(), x: Vec::new(), y: Vec::new() }
    }

    pub fn with_free_trial(mesh: &'m Mesh, form: SpaceForm) -> Self {
        SpaceOp { trial_free: true, ..Self::new(mesh, form) }
    }
}

/// Sorted union of root vertices and two sorted key lists.
fn vertex_union(roots: &[Vid], a: impl Iterator<Item = u64>, b: &[u64], out: &mut Vec<Vid>) {
    let a: Vec<u64> = a.collect();
    let ab = merge_union(&a, b);
    let r: Vec<u64> = roots.iter().map(|&v| v as u64).collect();
    out.clear();
    out.extend(merge_union(&r, &ab).into_iter().map(|v| v as Vid));
}

impl FiberOp for SpaceOp<'_> {
    fn apply(&mut self, part: Part, out_keys: &[u64], input: &[(u64, f64)], out: &mut [f64]) {
        assert_eq!(part, Part::Full, "space operators are applied in full");
        if input.is_empty() {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let mesh = self.mesh;
        vertex_union(mesh.root_vertices(), input.iter().map(|p| p.0), out_keys, &mut self.verts);
        self.marks.load(mesh, &self.verts);
        let n = self.verts.len();
        self.x.clear();
        self.x.resize(n, 0.0);
        self.y.clear();
        self.y.resize(n, 0.0);
        for &(k, v) in input {
            self.x[self.marks.get(k as Vid).unwrap() as usize] = v;
        }
        let elems = triangulation(mesh, &self.marks);
        if self.trial_free {
            hb_to_ss_unmasked(mesh, &self.verts, &self.marks, &mut self.x);
            apply_form_ss_masked(mesh, &elems, &self.marks, self.form, [true, false], &self.x, &mut self.y);
        } else {
            hb_to_ss(mesh, &self.verts, &self.marks, &mut self.x);
            apply_form_ss(mesh, &elems, &self.marks, self.form, &self.x, &mut self.y);
        }
        hb_to_ss_transpose(mesh, &self.verts, &self.marks, &mut self.y);
        for (o, &k) in out.iter_mut().zip(out_keys) {
            *o = self.y[self.marks.get(k as Vid).unwrap() as usize];
        }
    }
}

/// Auxiliary double-trees for applying `A₀ ⊗ A₁` from a trial to a test tree.
#[derive(Debug, Clone)]
pub struct TensorPlan {
    pub sigma: DoubleTree,
    pub theta: DoubleTree,
}

impl TensorPlan {
    pub fn new(form0: TimeForm, test: &DoubleTree, trial: &DoubleTree) -> Self {
        TensorPlan { sigma: generate_sigma(form0, test, trial), theta: generate_theta(form0, test, trial) }
    }
}

/// Reusable gather buffers.
#[derive(Default)]
struct Buf {
    keys: Vec<u64>,
    input: Vec<(u64, f64)>,
    out: Vec<f64>,
}

/// `out += R_Λ̆ (A₀ ⊗ A₁) I_Λ c` by the four fiber passes.
#[allow(clippy::too_many_arguments)]
pub fn apply_tensor(
    op0: &mut impl FiberOp,
    op1: &mut impl FiberOp,
    test: &DoubleTree,
    trial: &DoubleTree,
    c: &[f64],
    plan: &TensorPlan,
    out: &mut [f64],
) {
    assert_eq!(c.len(), trial.len());
    assert_eq!(out.len(), test.len());
    let (sigma, theta) = (&plan.sigma, &plan.theta);
    let mut b = Buf::default();

    // s = R_Σ (Id ⊗ A₁) I_Λ c, one axis-1 fiber per λ ∈ P₀Σ.
    let mut s = vec![0.0; sigma.len()];
    let mut i = 0;
    for (k, &lam) in sigma.p0.iter().enumerate() {
        while trial.p0[i] < lam {
            i += 1;
        }
        let r = trial.fiber1(i);
        b.input.clear();
        b.input.extend(r.clone().map(|q| (trial.pairs[q].1, c[q])));
        let rs = sigma.fiber1(k);
        b.keys.clear();
        b.keys.extend(sigma.pairs[rs.clone()].iter().map(|p| p.1));
        op1.apply(Part::Full, &b.keys, &b.input, &mut s[rs]);
    }

    // l = R_Λ̆ (L₀ ⊗ Id) I_Σ s, one axis-0 fiber per ν ∈ P₁Λ̆ ∩ P₁Σ.
    let mut l = vec![0.0; test.len()];
    let mut j = 0;
    for (k, &nu) in test.p1.iter().enumerate() {
        while j < sigma.p1.len() && sigma.p1[j] < nu {
            j += 1;
        }
        if j == sigma.p1.len() || sigma.p1[j] != nu {
            continue;
        }
        gather0(sigma, j, &s, &mut b.input);
        let slots = test.fiber0(k);
        b.keys.clear();
        b.keys.extend(slots.iter().map(|&q| test.pairs[q as usize].0));
        b.out.resize(slots.len(), 0.0);
        op0.apply(Part::Lower, &b.keys, &b.input, &mut b.out);
        for (&q, &v) in slots.iter().zip(&b.out) {
            l[q as usize] = v;
        }
    }

    // t = R_Θ (U₀ ⊗ Id) I_Λ c, one axis-0 fiber per ν ∈ P₁Θ.
    let mut t = vec![0.0; theta.len()];
    let mut j = 0;
    for (k, &nu) in theta.p1.iter().enumerate() {
        while trial.p1[j] < nu {
            j += 1;
        }
        gather0(trial, j, c, &mut b.input);
        let slots = theta.fiber0(k);
        b.keys.clear();
        b.keys.extend(slots.iter().map(|&q| theta.pairs[q as usize].0));
        b.out.resize(slots.len(), 0.0);
        op0.apply(Part::Upper, &b.keys, &b.input, &mut b.out);
        for (&q, &v) in slots.iter().zip(&b.out) {
            t[q as usize] = v;
        }
    }

    // out += R_Λ̆ (Id ⊗ A₁) I_Θ t + l, one axis-1 fiber per μ ∈ P₀Λ̆ ∩ P₀Θ.
    let mut i = 0;
    for (k, &mu) in test.p0.iter().enumerate() {
        while i < theta.p0.len() && theta.p0[i] < mu {
            i += 1;
        }
        if i == theta.p0.len() || theta.p0[i] != mu {
            continue;
        }
        let r = theta.fiber1(i);
        b.input.clear();
        b.input.extend(r.map(|q| (theta.pairs[q].1, t[q])));
        let rt = test.fiber1(k);
        b.keys.clear();
        b.keys.extend(test.pairs[rt.clone()].iter().map(|p| p.1));
        b.out.resize(rt.len(), 0.0);
        op1.apply(Part::Full, &b.keys, &b.input, &mut b.out);
        for (q, &v) in rt.zip(&b.out) {
            out[q] += v;
        }
    }
    for (o, v) in out.iter_mut().zip(&l) {
        *o += v;
    }
    ops::add((sigma.len() + theta.len() + 2 * test.len() + trial.len()) as u64);
}

fn gather0(tree: &DoubleTree, j: usize, vals: &[f64], input: &mut Vec<(u64, f64)>) {
    input.clear();
    input.extend(tree.fiber0(j).iter().map(|&q| (tree.pairs[q as usize].0, vals[q as usize])));
}

/// Outcome of [`refine_from_marked`].
#[derive(Debug, Clone)]
pub struct Refined {
    pub tree: DoubleTree,
    /// Largest number of times any node of the enlarged tree was visited.
    pub max_visits: u8,
}

/// Smallest double-tree containing `lam` and the marked slots of `big`.
///
/// Nodes of `lam` are first marked inside `big`; then the ancestors of the
/// marked nodes are traversed level by level (finest first) until already
/// marked nodes are met.
pub fn refine_from_marked(
    lam: &DoubleTree,
    big: &DoubleTree,
    marked: &[usize],
    ax0: &impl Axis,
    ax1: &impl Axis,
) -> Result<Refined, DoubleTreeError> {
    let mut inside = vec![false; big.len()];
    let mut visits = vec![0u8; big.len()];
    for slot in lam.embed_into(big) {
        let s = slot.ok_or(DoubleTreeError::NotSubset)? as usize;
        inside[s] = true;
        visits[s] += 1;
    }
    let level = |q: usize| {
        let (t, s) = big.pairs[q];
        (ax0.level(t) + ax1.level(s)) as usize
    };
    let mut queued = vec![false; big.len()];
    let mut buckets: Vec<Vec<usize>> = Vec::new();
    let enqueue = |buckets: &mut Vec<Vec<usize>>, queued: &mut Vec<bool>, q: usize| {
        let l = level(q);
        if buckets.len() <= l {
            buckets.resize(l + 1, Vec::new());
        }
        buckets[l].push(q);
        queued[q] = true;
    };
    for &q in marked {
        if q >= big.len() || inside[q] {
            let (t, s) = big.pairs.get(q).copied().unwrap_or((u64::MAX, u64::MAX));
            return Err(DoubleTreeError::BadMark(t, s));
        }
        if !queued[q] {
            enqueue(&mut buckets, &mut queued, q);
        }
    }
    let mut par = Vec::new();
    for l in (0..buckets.len()).rev() {
        let level_nodes = std::mem::take(&mut buckets[l]);
        for q in level_nodes {
            visits[q] += 1;
            inside[q] = true;
            let (t, s) = big.pairs[q];
            par.clear();
            ax0.parents(t, &mut par);
            let split = par.len();
            ax1.parents(s, &mut par);
            for (k, &p) in par.iter().enumerate() {
                let (pt, ps) = if k < split { (p, s) } else { (t, p) };
                let pq = big.slot(pt, ps).ok_or(DoubleTreeError::MissingAncestor(pt, ps))?;
                if !inside[pq] && !queued[pq] {
                    enqueue(&mut buckets, &mut queued, pq);
                }
            }
        }
    }
    ops::add(big.len() as u64);
    let tree = DoubleTree::from_sorted(big.pairs.iter().zip(&inside).filter(|p| *p.1).map(|p| *p.0).collect());
    Ok(Refined { tree, max_visits: visits.into_iter().max().unwrap_or(0) })
}

/// Smallest `L ≥ 1` such that for every `(λ, ν)` and every ancestor `ν̃` of
/// `ν` exactly `L` generations up, all `(λ̆, ν̃)` with `λ̆` a parent of `λ`
/// are present. Brute force.
pub fn gradedness(lam: &DoubleTree, ax0: &impl Axis, ax1: &impl Axis) -> u32 {
    let max_gen = lam.p1.iter().map(|&s| ax1.level(s)).max().unwrap_or(0);
    let mut par = Vec::new();
    let mut tpar = Vec::new();
    'outer: for l in 1..=max_gen.max(1) {
        for &(t, s) in &lam.pairs {
            tpar.clear();
            ax0.parents(t, &mut tpar);
            if tpar.is_empty() {
                continue;
            }
            let mut anc = vec![s];
            for _ in 0..l {
                let mut next = Vec::new();
                for &a in &anc {
                    par.clear();
                    ax1.parents(a, &mut par);
                    next.extend_from_slice(&par);
                }
                next.sort_unstable();
                next.dedup();
                anc = next;
            }
            for &a in &anc {
                if !tpar.iter().all(|&p| lam.contains(p, a)) {
                    continue 'outer;
                }
            }
        }
        return l;
    }
    max_gen.max(1)
}
