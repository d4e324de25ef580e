//! Linear-complexity application of local bilinear forms in one time axis.
//!
//! For trees `Λ` (trial) and `Λ̆` (test) the routines here compute
//! `(AΨ|_Λ)(Ψ̆|_Λ̆)c`, its level-upper part and its strictly-lower part by a
//! downward sweep that converts wavelets into single-scale functions level by
//! level and an upward sweep that restricts the result back.

use crate::ops;
use crate::sorted::{merge_add, merge_union, Cursor, IntervalUnion, NearlySorted, NearlySortedSet, Sparse, Sweep};
use crate::time_bases::{key_level, key_pos, Family, Scaling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FormKind {
    /// `∫ u v`
    Mass,
    /// `∫ u' v`
    Deriv,
    /// `∫ u v'`
    DerivAdj,
    /// `u(0) v(0)`
    Trace,
}

/// A local bilinear form on `[0,1]` between a trial and a test family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeForm {
    pub kind: FormKind,
    pub trial: Family,
    pub test: Family,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatvecError {
    #[error("tree node on level {found} passed to a call expecting levels >= {expected}")]
    Level { expected: u32, found: u32 },
    #[error("recursion must start at level >= 1")]
    StartLevel,
}

impl TimeForm {
    pub const fn new(kind: FormKind, trial: Family, test: Family) -> Self {
        TimeForm { kind, trial, test }
    }

    /// The form with arguments swapped: `(A'v)(u) = (Au)(v)`.
    pub fn transpose(self) -> Self {
        let kind = match self.kind {
            FormKind::Deriv => FormKind::DerivAdj,
            FormKind::DerivAdj => FormKind::Deriv,
            k => k,
        };
        TimeForm { kind, trial: self.test, test: self.trial }
    }

    pub fn is_symmetric(self) -> bool {
        matches!(self.kind, FormKind::Mass | FormKind::Trace)
    }

    /// Contribution of element `k` on `level`, given the limits of the trial
    /// function `u` and the test function `v` at both element ends.
    #[inline]
    pub fn element(self, level: u32, k: u64, u: (f64, f64), v: (f64, f64)) -> f64 {
        match self.kind {
            FormKind::Mass => {
                let h = 1.0 / (1u64 << level) as f64;
                h / 6.0 * (2.0 * u.0 * v.0 + u.0 * v.1 + u.1 * v.0 + 2.0 * u.1 * v.1)
            }
            FormKind::Deriv => 0.5 * (u.1 - u.0) * (v.0 + v.1),
            FormKind::DerivAdj => 0.5 * (v.1 - v.0) * (u.0 + u.1),
            FormKind::Trace => {
                if k == 0 {
                    u.0 * v.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `e = (AΦ_ℓ|_Π)(Φ̆_ℓ|_Π̆) d` for single-level sets.
///
/// `pi` holds trial scaling positions with coefficients, `pi_test` the test
/// scaling positions; both sorted. The result is aligned with `pi_test`.
pub fn apply_single_scale(form: TimeForm, level: u32, pi: &[(u64, f64)], pi_test: &[u64]) -> Vec<f64> {
    let trial = form.trial.scaling();
    let test = form.test.scaling();
    // Element-wise traces of the input; element ranges move monotonically
    // with the position, so the list stays sorted.
    let mut elems: Vec<(u64, f64, f64)> = Vec::with_capacity(2 * pi.len());
    for &(n, d) in pi {
        let (a, b) = trial.element_range(level, n);
        for k in a..b {
            let (l, r) = trial.on_element(level, n, k);
            match elems.last_mut() {
                Some(last) if last.0 == k => {
                    last.1 += d * l;
                    last.2 += d * r;
                }
                _ => elems.push((k, d * l, d * r)),
            }
        }
    }
    ops::add(2 * pi.len() as u64);
    let mut out = vec![0.0; pi_test.len()];
    let mut at = 0;
    for (slot, &m) in out.iter_mut().zip(pi_test) {
        let (a, b) = test.element_range(level, m);
        while at < elems.len() && elems[at].0 < a {
            at += 1;
        }
        let mut j = at;
        let mut s = 0.0;
        while j < elems.len() && elems[j].0 < b {
            let (k, ul, ur) = elems[j];
            s += form.element(level, k, (ul, ur), test.on_element(level, m, k));
            j += 1;
        }
        *slot = s;
    }
    ops::add(2 * pi_test.len() as u64);
    out
}

/// Split of `Π̆` against the wavelets `Λ_ℓ`: entries of `Π̆` whose support
/// meets `∪ S(μ)` go to `B`, the rest to `A`. Returns `(A, B)`.
pub fn construct_pi_b(
    test_scaling: Scaling,
    trial: Family,
    level: u32,
    pi_test: &[u64],
    lam_level: &[u64],
) -> (Vec<u64>, Vec<u64>) {
    let flags = pi_b_flags(test_scaling, trial, level, pi_test, lam_level.iter().copied());
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (&p, &inb) in pi_test.iter().zip(&flags) {
        if inb {
            b.push(p)
        } else {
            a.push(p)
        }
    }
    (a, b)
}

fn wavelet_union(fam: Family, level: u32, positions: impl Iterator<Item = u64>) -> IntervalUnion {
    IntervalUnion::from_monotone(positions.map(|n| fam.support_units(level, n)))
}

/// Coarse scaling supports expressed in units of the next finer level.
fn coarse_support(sc: Scaling, level: u32, n: u64) -> (u64, u64) {
    let (a, b) = sc.support(level - 1, n);
    (2 * a, 2 * b)
}

fn pi_b_flags(
    test_scaling: Scaling,
    trial: Family,
    level: u32,
    pi_test: &[u64],
    lam_level: impl Iterator<Item = u64>,
) -> Vec<bool> {
    let u = wavelet_union(trial, level, lam_level);
    let mut sweep = Sweep::new(&u);
    pi_test
        .iter()
        .map(|&p| {
            let (a, b) = coarse_support(test_scaling, level, p);
            sweep.meets(a, b)
        })
        .collect()
}

/// `p d`: coarse scaling coefficients on level `fine-1` into `Φ_fine`.
fn prolong(sc: Scaling, fine: u32, d: impl Iterator<Item = (u64, f64)>) -> Sparse {
    let mut acc = NearlySorted::default();
    for (n, v) in d {
        for &(m, c) in sc.refine_mask(fine, n).entries() {
            acc.push(m, c * v);
        }
    }
    acc.finish()
}

/// `q c`: wavelet coefficients on `level` into `Φ_level`.
fn wavelets_to_scaling(fam: Family, level: u32, c: impl Iterator<Item = (u64, f64)>) -> Sparse {
    let mut acc = NearlySorted::default();
    for (n, v) in c {
        for &(m, w) in fam.mask_unchecked(level, n).entries() {
            acc.push(m, w * v);
        }
    }
    acc.finish()
}

fn refine_support(sc: Scaling, fine: u32, coarse: impl Iterator<Item = u64>) -> Vec<u64> {
    let mut acc = NearlySortedSet::default();
    for n in coarse {
        for &(m, _) in sc.refine_mask(fine, n).entries() {
            acc.push(m);
        }
    }
    acc.items
}

fn wavelet_support(fam: Family, level: u32, w: impl Iterator<Item = u64>) -> Vec<u64> {
    let mut acc = NearlySortedSet::default();
    for n in w {
        for &(m, _) in fam.mask_unchecked(level, n).entries() {
            acc.push(m);
        }
    }
    acc.items
}

/// `p̆ᵀ e̲` evaluated at the coarse positions `coarse`.
fn restrict(sc: Scaling, fine: u32, coarse: &[u64], fine_vals: &[(u64, f64)]) -> Vec<f64> {
    let mut cur = Cursor::new(fine_vals);
    coarse
        .iter()
        .map(|&n| {
            let m = sc.refine_mask(fine, n);
            cur.seek(m.first());
            m.entries().iter().map(|&(pos, c)| c * cur.get(pos)).sum()
        })
        .collect()
}

/// `q̆ᵀ e̲` evaluated at the wavelets `w` of `level`.
fn restrict_wavelets(fam: Family, level: u32, w: &[u64], fine_vals: &[(u64, f64)]) -> Vec<f64> {
    let mut cur = Cursor::new(fine_vals);
    w.iter()
        .map(|&n| {
            let m = fam.mask_unchecked(level, n);
            cur.seek(m.first());
            m.entries().iter().map(|&(pos, c)| c * cur.get(pos)).sum()
        })
        .collect()
}

/// Level slices of a key list sorted by level-major keys.
struct Levels<'a, T> {
    items: &'a [T],
    key: fn(&T) -> u64,
    at: usize,
}

impl<'a, T> Levels<'a, T> {
    fn new(items: &'a [T], key: fn(&T) -> u64) -> Self {
        Levels { items, key, at: 0 }
    }

    /// Range of level-`l` items; calls must come with increasing `l`.
    fn take(&mut self, l: u32) -> (usize, usize) {
        while self.at < self.items.len() && key_level((self.key)(&self.items[self.at])) < l {
            self.at += 1;
        }
        let start = self.at;
        while self.at < self.items.len() && key_level((self.key)(&self.items[self.at])) == l {
            self.at += 1;
        }
        (start, self.at)
    }

    fn rest_empty(&self) -> bool {
        self.at >= self.items.len()
    }
}

fn check_levels(start: u32, keys: impl Iterator<Item = u64>) -> Result<(), MatvecError> {
    if start == 0 {
        return Err(MatvecError::StartLevel);
    }
    for k in keys {
        let l = key_level(k);
        if l < start {
            return Err(MatvecError::Level { expected: start, found: l });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Sweep2 {
    Full,
    Upper,
}

struct Frame {
    level: u32,
    pi_test: Vec<u64>,
    in_b: Vec<bool>,
    pi: Sparse,
    lam_test: (usize, usize),
}

/// Output of [`eval`] and [`evalupp`]: `e` aligned with `Π̆`, `f` with `Λ̆`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub e: Vec<f64>,
    pub f: Vec<f64>,
}

fn eval_impl(
    form: TimeForm,
    mode: Sweep2,
    start: u32,
    pi_test: &[u64],
    lam_test: &[u64],
    pi: &[(u64, f64)],
    lam: &[(u64, f64)],
) -> Result<EvalOutput, MatvecError> {
    check_levels(start, lam_test.iter().copied().chain(lam.iter().map(|p| p.0)))?;
    let test_sc = form.test.scaling();
    let trial_sc = form.trial.scaling();
    let mut f = vec![0.0; lam_test.len()];
    let mut lt_levels = Levels::new(lam_test, |k| *k);
    let mut l_levels = Levels::new(lam, |p| p.0);

    let mut frames: Vec<Frame> = Vec::new();
    let mut cur_test: Vec<u64> = pi_test.to_vec();
    let mut cur_pi: Sparse = pi.to_vec();
    let mut level = start;
    loop {
        if cur_test.is_empty() && lt_levels.rest_empty() {
            break;
        }
        let lt = lt_levels.take(level);
        let lr = l_levels.take(level);
        let lt_pos = || lam_test[lt.0..lt.1].iter().map(|&k| key_pos(k));
        let l_pos = || lam[lr.0..lr.1].iter().map(|p| (key_pos(p.0), p.1));

        let in_b = pi_b_flags(test_sc, form.trial, level, &cur_test, l_pos().map(|p| p.0));
        let b_iter = || cur_test.iter().zip(&in_b).filter(|x| *x.1).map(|x| *x.0);

        let next_test =
            merge_union(&refine_support(test_sc, level, b_iter()), &wavelet_support(form.test, level, lt_pos()));
        let from_c = wavelets_to_scaling(form.trial, level, l_pos());
        let next_pi = match mode {
            Sweep2::Upper => from_c,
            Sweep2::Full => {
                // Π_B: coarse trial functions seen by Λ̆_ℓ or by Π̆_B.
                let seen = wavelet_union(form.test, level, lt_pos())
                    .union(&IntervalUnion::from_monotone(b_iter().map(|p| coarse_support(test_sc, level, p))));
                let mut sweep = Sweep::new(&seen);
                let kept = cur_pi.iter().copied().filter(|&(n, _)| {
                    let (a, b) = coarse_support(trial_sc, level, n);
                    sweep.meets(a, b)
                });
                merge_add(&prolong(trial_sc, level, kept), &from_c)
            }
        };
        frames.push(Frame {
            level,
            pi_test: std::mem::replace(&mut cur_test, next_test),
            in_b,
            pi: std::mem::replace(&mut cur_pi, next_pi),
            lam_test: lt,
        });
        level += 1;
    }

    // Upward sweep: `below` holds e̲ on the finer frame's Π̆.
    let mut below: Sparse = Vec::new();
    let mut e_top = Vec::new();
    while let Some(fr) = frames.pop() {
        let lvl = fr.level;
        let (a, b) = fr.lam_test;
        let fl =
            restrict_wavelets(form.test, lvl, &lam_test[a..b].iter().map(|&k| key_pos(k)).collect::<Vec<_>>(), &below);
        f[a..b].copy_from_slice(&fl);

        let b_set: Vec<u64> = fr.pi_test.iter().zip(&fr.in_b).filter(|x| *x.1).map(|x| *x.0).collect();
        let from_below = restrict(test_sc, lvl, &b_set, &below);
        let mut e = vec![0.0; fr.pi_test.len()];
        match mode {
            Sweep2::Full => {
                let a_set: Vec<u64> = fr.pi_test.iter().zip(&fr.in_b).filter(|x| !*x.1).map(|x| *x.0).collect();
                let ea = apply_single_scale(form, lvl - 1, &fr.pi, &a_set);
                let (mut ia, mut ib) = (0, 0);
                for (slot, &inb) in e.iter_mut().zip(&fr.in_b) {
                    if inb {
                        *slot = from_below[ib];
                        ib += 1;
                    } else {
                        *slot = ea[ia];
                        ia += 1;
                    }
                }
            }
            Sweep2::Upper => {
                e = apply_single_scale(form, lvl - 1, &fr.pi, &fr.pi_test);
                let mut ib = 0;
                for (slot, &inb) in e.iter_mut().zip(&fr.in_b) {
                    if inb {
                        *slot += from_below[ib];
                        ib += 1;
                    }
                }
            }
        }
        ops::add(fr.pi_test.len() as u64);
        if frames.is_empty() {
            e_top = e;
        } else {
            below = fr.pi_test.into_iter().zip(e).collect();
        }
    }
    if e_top.is_empty() && !pi_test.is_empty() {
        e_top = vec![0.0; pi_test.len()];
    }
    Ok(EvalOutput { e: e_top, f })
}

/// `e = (Au)(Φ̆|_Π̆)`, `f = (Au)(Ψ̆|_Λ̆)` with `u = dᵀΦ|_Π + cᵀΨ|_Λ`.
///
/// `Π̆`, `Π` are scaling positions on `level-1`; `Λ̆`, `Λ` are `level`-trees
/// given as sorted packed keys.
pub fn eval(
    form: TimeForm,
    level: u32,
    pi_test: &[u64],
    lam_test: &[u64],
    pi: &[(u64, f64)],
    lam: &[(u64, f64)],
) -> Result<EvalOutput, MatvecError> {
    eval_impl(form, Sweep2::Full, level, pi_test, lam_test, pi, lam)
}

/// As [`eval`] for `e`, but `f` only collects `(Aψ_μ)(ψ̆_λ)c_μ` with
/// `|λ| ≤ |μ|`.
pub fn evalupp(
    form: TimeForm,
    level: u32,
    pi_test: &[u64],
    lam_test: &[u64],
    pi: &[(u64, f64)],
    lam: &[(u64, f64)],
) -> Result<EvalOutput, MatvecError> {
    eval_impl(form, Sweep2::Upper, level, pi_test, lam_test, pi, lam)
}

/// `f = (AΦ|_Π d)(Ψ̆|_Λ̆) + L c` with `L` the part `|λ| > |μ|`.
pub fn evallow(
    form: TimeForm,
    level: u32,
    lam_test: &[u64],
    pi: &[(u64, f64)],
    lam: &[(u64, f64)],
) -> Result<Vec<f64>, MatvecError> {
    check_levels(level, lam_test.iter().copied().chain(lam.iter().map(|p| p.0)))?;
    let trial_sc = form.trial.scaling();
    let mut f = vec![0.0; lam_test.len()];
    let mut lt_levels = Levels::new(lam_test, |k| *k);
    let mut l_levels = Levels::new(lam, |p| p.0);
    let mut cur_pi: Sparse = pi.to_vec();
    let mut level = level;
    while !lt_levels.rest_empty() {
        let lt = lt_levels.take(level);
        let lr = l_levels.take(level);
        let lt_pos: Vec<u64> = lam_test[lt.0..lt.1].iter().map(|&k| key_pos(k)).collect();

        let seen = wavelet_union(form.test, level, lt_pos.iter().copied());
        let mut sweep = Sweep::new(&seen);
        let kept = cur_pi.iter().copied().filter(|&(n, _)| {
            let (a, b) = coarse_support(trial_sc, level, n);
            sweep.meets(a, b)
        });
        let pd = prolong(trial_sc, level, kept);
        let fine_test = wavelet_support(form.test, level, lt_pos.iter().copied());
        let e = apply_single_scale(form, level, &pd, &fine_test);
        let e: Sparse = fine_test.into_iter().zip(e).collect();
        let fl = restrict_wavelets(form.test, level, &lt_pos, &e);
        f[lt.0..lt.1].copy_from_slice(&fl);

        let from_c = wavelets_to_scaling(form.trial, level, lam[lr.0..lr.1].iter().map(|p| (key_pos(p.0), p.1)));
        cur_pi = merge_add(&pd, &from_c);
        level += 1;
    }
    Ok(f)
}

/// Which part of `(AΨ|_Λ)(Ψ̆|_Λ̆)` to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Full,
    Upper,
    Lower,
}

/// Applies the chosen part of `(AΨ|_Λ)(Ψ̆|_Λ̆)` to `c`, where `Λ` and `Λ̆`
/// are full trees (with level-0 roots) given as sorted packed keys.
/// The result is aligned with `lam_test`.
pub fn apply_tree(form: TimeForm, part: Part, lam_test: &[u64], lam: &[(u64, f64)]) -> Vec<f64> {
    let split_t = lam_test.partition_point(|&k| key_level(k) == 0);
    let split = lam.partition_point(|p| key_level(p.0) == 0);
    let roots_test: Vec<u64> = lam_test[..split_t].iter().map(|&k| key_pos(k)).collect();
    let roots: Sparse = lam[..split].iter().map(|p| (key_pos(p.0), p.1)).collect();
    let (rest_t, rest) = (&lam_test[split_t..], &lam[split..]);
    match part {
        Part::Full | Part::Upper => {
            let out = if part == Part::Full {
                eval(form, 1, &roots_test, rest_t, &roots, rest)
            } else {
                evalupp(form, 1, &roots_test, rest_t, &roots, rest)
            }
            .expect("levels are consistent by construction");
            let mut v = out.e;
            v.extend(out.f);
            v
        }
        Part::Lower => {
            let mut v = vec![0.0; split_t];
            v.extend(evallow(form, 1, rest_t, &roots, rest).expect("levels are consistent by construction"));
            v
        }
    }
}
