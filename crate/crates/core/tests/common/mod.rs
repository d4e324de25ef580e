//! Brute-force oracles and random instance generators shared by the
//! integration tests. Nothing here calls the fast kernels.

#![allow(dead_code, clippy::needless_range_loop)]

pub mod fem;
pub mod kron;

use stheat::matvec::{FormKind, Part, TimeForm};
use stheat::time_bases::{key_level, Family, TimeIndex};
use stheat::tree::{deep_refine, TimeAxis};

pub fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn unit(seed: u64, key: u64) -> f64 {
    (splitmix(seed ^ splitmix(key)) >> 11) as f64 / (1u64 << 53) as f64
}

/// Random tree: a child joins with probability `p` (biased towards `t = 0`
/// when `graded`), truncated in breadth-first order to `max_nodes`.
pub fn random_time_tree(fam: Family, seed: u64, max_level: u32, p: f64, graded: bool, max_nodes: usize) -> Vec<u64> {
    let mut keys = Vec::new();
    let keep = |k: u64| {
        let i = TimeIndex::from_key(k);
        if i.level > max_level {
            return false;
        }
        let q = if graded {
            let s = fam.support(i);
            if s.left() < 0.5f64.powi(i.level as i32 / 2) {
                0.97
            } else {
                p * 0.5
            }
        } else {
            p
        };
        unit(seed, k) < q
    };
    deep_refine(&mut TimeAxis(fam), &mut keys, keep, 40).unwrap();
    keys.truncate(max_nodes);
    keys
}

pub fn random_values(seed: u64, keys: &[u64]) -> Vec<(u64, f64)> {
    keys.iter().map(|&k| (k, 2.0 * unit(seed ^ 0xABCD, k) - 1.0)).collect()
}

/// Left, middle and right values of a wavelet on every level-`fine` element
/// of its support, recovered from point evaluations at interior points.
pub fn element_values(fam: Family, key: u64, fine: u32) -> (u64, Vec<(f64, f64, f64)>) {
    let i = TimeIndex::from_key(key);
    let s = fam.support(i);
    let (a, b) = s.at(fine);
    let h = 1.0 / (1u64 << fine) as f64;
    let vals = (a..b)
        .map(|k| {
            let x1 = (k as f64 + 0.25) * h;
            let x2 = (k as f64 + 0.75) * h;
            let f1 = fam.evaluate(i, x1).unwrap();
            let f2 = fam.evaluate(i, x2).unwrap();
            let slope = 2.0 * (f2 - f1);
            let left = f1 - 0.25 * slope;
            (left, left + 0.5 * slope, left + slope)
        })
        .collect();
    (a, vals)
}

/// `(Aψ_μ)(ψ̆_λ)` by exact quadrature (Simpson on products of linears).
pub fn dense_entry(form: TimeForm, test_key: u64, trial_key: u64, fine: u32) -> f64 {
    if form.kind == FormKind::Trace {
        let u = form.trial.evaluate(TimeIndex::from_key(trial_key), 0.0).unwrap();
        let v = form.test.evaluate(TimeIndex::from_key(test_key), 0.0).unwrap();
        return u * v;
    }
    let (a, uv) = element_values(form.trial, trial_key, fine);
    let (b, vv) = element_values(form.test, test_key, fine);
    let h = 1.0 / (1u64 << fine) as f64;
    let lo = a.max(b);
    let hi = (a + uv.len() as u64).min(b + vv.len() as u64);
    let mut s = 0.0;
    for k in lo..hi.max(lo) {
        let u = uv[(k - a) as usize];
        let v = vv[(k - b) as usize];
        s += match form.kind {
            FormKind::Mass => h / 6.0 * (u.0 * v.0 + 4.0 * u.1 * v.1 + u.2 * v.2),
            FormKind::Deriv => (u.2 - u.0) / h * h / 6.0 * (v.0 + 4.0 * v.1 + v.2),
            FormKind::DerivAdj => (v.2 - v.0) / h * h / 6.0 * (u.0 + 4.0 * u.1 + u.2),
            FormKind::Trace => unreachable!(),
        };
    }
    s
}

pub fn max_level(keys: impl Iterator<Item = u64>) -> u32 {
    keys.map(key_level).max().unwrap_or(0)
}

pub fn dense_matrix(form: TimeForm, lam_test: &[u64], lam: &[u64]) -> Vec<Vec<f64>> {
    let fine = max_level(lam_test.iter().chain(lam).copied()).max(1);
    lam_test.iter().map(|&t| lam.iter().map(|&m| dense_entry(form, t, m, fine)).collect()).collect()
}

pub fn dense_apply(form: TimeForm, part: Part, lam_test: &[u64], lam: &[(u64, f64)]) -> Vec<f64> {
    dense_apply_with_scale(form, part, lam_test, lam).0
}

/// Dense product together with `max_i Σ_j |a_ij c_j|` over the whole row,
/// the magnitude that bounds the rounding error of any summation order.
pub fn dense_apply_with_scale(form: TimeForm, part: Part, lam_test: &[u64], lam: &[(u64, f64)]) -> (Vec<f64>, f64) {
    let keys: Vec<u64> = lam.iter().map(|p| p.0).collect();
    let m = dense_matrix(form, lam_test, &keys);
    let mut scale = 0.0f64;
    let out = lam_test
        .iter()
        .zip(&m)
        .map(|(&t, row)| {
            let (mut s, mut a_abs) = (0.0, 0.0);
            for (a, &(k, c)) in row.iter().zip(lam) {
                let keep = match part {
                    Part::Full => true,
                    Part::Upper => key_level(t) <= key_level(k),
                    Part::Lower => key_level(t) > key_level(k),
                };
                if keep {
                    s += a * c;
                }
                a_abs += (a * c).abs();
            }
            scale = scale.max(a_abs);
            s
        })
        .collect();
    (out, scale)
}

/// `‖a − b‖∞ / max(‖b‖∞, floor)`; `floor` is the magnitude of the summed
/// terms so that cancellation to zero does not inflate the ratio.
pub fn rel_err_floor(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(floor, f64::max);
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// `‖a − b‖∞ / ‖b‖∞` (absolute when `b` vanishes).
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn chol_factor(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                assert!(s > 0.0, "matrix is not positive definite");
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    l
}

/// Solves `L Lᵀ x = b`.
pub fn chol_apply(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

/// Symmetric positive definite dense solve (Cholesky).
pub fn spd_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    chol_apply(&chol_factor(a), b)
}

/// Eigenvalues of a symmetric matrix (cyclic Jacobi).
pub fn sym_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// All indices of `fam` up to `level`, as packed keys.
pub fn all_keys(fam: Family, level: u32) -> Vec<u64> {
    (0..=level).flat_map(|l| (0..fam.count(l)).map(move |n| TimeIndex::new(l, n).key())).collect()
}

/// Random vertex tree: a child joins with probability `p`, or `0.95` within
/// distance `focus` of the origin, until `max_nodes` vertices are taken.
pub fn random_vertex_tree(
    mesh: &mut stheat::space::Mesh,
    seed: u64,
    max_gen: u32,
    p: f64,
    focus: f64,
    max_nodes: usize,
) -> Vec<u32> {
    let mut set: std::collections::BTreeSet<u32> = mesh.root_vertices().iter().copied().collect();
    let mut level: Vec<u32> = set.iter().copied().collect();
    for _ in 0..max_gen {
        let mut next = Vec::new();
        for &v in &level {
            for c in mesh.vertex_children(v) {
                if set.contains(&c) || set.len() >= max_nodes {
                    continue;
                }
                let cv = mesh.vertex(c);
                let q = if (cv.x * cv.x + cv.y * cv.y).sqrt() < focus { 0.95 } else { p };
                if unit(seed, c as u64) < q && cv.parents().all(|w| set.contains(&w)) {
                    set.insert(c);
                    next.push(c);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        level = next;
    }
    set.into_iter().collect()
}
