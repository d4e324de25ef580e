//! Dense Kronecker oracles for tensor-product operators.

use super::fem::*;
use super::{dense_matrix, random_time_tree, random_vertex_tree, rel_err_floor, unit};
use stheat::double_tree::{apply_tensor, DoubleTree, SpaceOp, TensorPlan, TimeOp};
use stheat::matvec::TimeForm;
use stheat::space::*;
use stheat::time_bases::Family;
use stheat::tree::{Axis, TimeAxis};

/// Dense `(A₀ ⊗ A₁)` between two pair lists, given dense factors over the
/// projections.
pub fn kron_apply(
    a0: &dyn Fn(u64, u64) -> f64,
    a1: &dyn Fn(u64, u64) -> f64,
    test: &DoubleTree,
    trial: &DoubleTree,
    c: &[f64],
) -> (Vec<f64>, f64) {
    let mut scale = 0.0f64;
    let out = test
        .pairs()
        .iter()
        .map(|&(mu, nu)| {
            let (mut s, mut abs) = (0.0, 0.0);
            for (&(lam, gam), &x) in trial.pairs().iter().zip(c) {
                let v = a0(mu, lam) * a1(nu, gam) * x;
                s += v;
                abs += v.abs();
            }
            scale = scale.max(abs);
            s
        })
        .collect();
    (out, scale)
}

pub fn lookup(keys_r: &[u64], keys_c: &[u64], m: Vec<Vec<f64>>) -> impl Fn(u64, u64) -> f64 {
    let (r, c) = (keys_r.to_vec(), keys_c.to_vec());
    move |i, j| m[r.binary_search(&i).unwrap()][c.binary_search(&j).unwrap()]
}

pub fn random_coeffs(seed: u64, n: usize) -> Vec<f64> {
    (0..n).map(|i| 2.0 * unit(seed, i as u64) - 1.0).collect()
}

/// Dense hierarchical space matrix between two vertex trees.
pub fn dense_space(mesh: &Mesh, test: &[u64], trial: &[u64], form: SpaceForm) -> impl Fn(u64, u64) -> f64 {
    let mut all: Vec<Vid> = mesh.root_vertices().to_vec();
    all.extend(test.iter().chain(trial).map(|&k| k as Vid));
    all.sort_unstable();
    all.dedup();
    let mut marks = Marks::new();
    marks.load(mesh, &all);
    let elems = triangulation(mesh, &marks);
    let t = dense_hb(mesh, &all);
    let k = dense_nodal(mesh, &all, &elems, form.stiff, form.mass);
    let g = matmul(&transpose(&t), &matmul(&k, &t));
    let keys: Vec<u64> = all.iter().map(|&v| v as u64).collect();
    lookup(&keys, &keys, g)
}

/// Dense `S = B'A_Y⁻¹B + G_t⊗M_x` over the interior slots of `trial`, with
/// `B = D_t⊗M_x + M_t⊗A_x` and `A_Y = M_Ξ⊗A_x` on `test`. Returns the
/// interior trial slots and the matrix.
pub fn dense_schur(mesh: &Mesh, trial: &DoubleTree, test: &DoubleTree) -> (Vec<usize>, Vec<Vec<f64>>) {
    use stheat::heat::{D_T, G_T, M_T, TEST};
    use stheat::matvec::{FormKind, TimeForm};
    let interior = |t: &DoubleTree| -> Vec<usize> {
        (0..t.len()).filter(|&i| !mesh.vertex(t.pair(i).1 as Vid).boundary).collect()
    };
    let (jt, jy) = (interior(trial), interior(test));
    let (p0t, p0y) = (trial.project0(), test.project0());
    let d = lookup(p0y, p0t, super::dense_matrix(D_T, p0y, p0t));
    let m = lookup(p0y, p0t, super::dense_matrix(M_T, p0y, p0t));
    let g = lookup(p0t, p0t, super::dense_matrix(G_T, p0t, p0t));
    let mxi_form = TimeForm::new(FormKind::Mass, TEST, TEST);
    let mxi = lookup(p0y, p0y, super::dense_matrix(mxi_form, p0y, p0y));
    let all: Vec<u64> = {
        let mut v: Vec<u64> = trial.project1().iter().chain(test.project1()).copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let mx = dense_space(mesh, &all, &all, SpaceForm::MASS);
    let ax = dense_space(mesh, &all, &all, SpaceForm::STIFFNESS);

    let b: Vec<Vec<f64>> = jy
        .iter()
        .map(|&i| {
            let (mu, nu) = test.pair(i);
            jt.iter()
                .map(|&j| {
                    let (la, ga) = trial.pair(j);
                    d(mu, la) * mx(nu, ga) + m(mu, la) * ax(nu, ga)
                })
                .collect()
        })
        .collect();
    let ay: Vec<Vec<f64>> = jy
        .iter()
        .map(|&i| {
            let (mu, nu) = test.pair(i);
            jy.iter()
                .map(|&k| {
                    let (mu2, nu2) = test.pair(k);
                    mxi(mu, mu2) * ax(nu, nu2)
                })
                .collect()
        })
        .collect();
    let l = super::chol_factor(&ay);
    let bt = transpose(&b);
    let z: Vec<Vec<f64>> = bt.iter().map(|col| super::chol_apply(&l, col)).collect();
    let s: Vec<Vec<f64>> = jt
        .iter()
        .enumerate()
        .map(|(r, &i)| {
            let (la, ga) = trial.pair(i);
            jt.iter()
                .enumerate()
                .map(|(c, &j)| {
                    let (la2, ga2) = trial.pair(j);
                    let bz: f64 = bt[r].iter().zip(&z[c]).map(|(x, y)| x * y).sum();
                    bz + g(la, la2) * mx(ga, ga2)
                })
                .collect()
        })
        .collect();
    (jt, s)
}

/// Random double-tree: pairs of two random trees kept with a probability
/// that decays with the total level, then closed.
pub fn random_double_tree<A0: Axis, A1: Axis>(
    ax0: &A0,
    t: &[u64],
    ax1: &A1,
    s: &[u64],
    seed: u64,
    budget: u32,
) -> DoubleTree {
    let mut pairs = Vec::new();
    for &a in t {
        for &b in s {
            let l = ax0.level(a) + ax1.level(b);
            let q = if l <= budget { 0.7 } else { 0.08 };
            if unit(seed, a.wrapping_mul(0x1000_0001) ^ b) < q {
                pairs.push((a, b));
            }
        }
    }
    DoubleTree::closure(pairs, ax0, ax1)
}

pub fn time_tree(fam: Family, seed: u64, n: usize) -> Vec<u64> {
    random_time_tree(fam, seed, 7, 0.6, seed.is_multiple_of(2), n)
}

pub fn check_time_space(form0: TimeForm, form1: SpaceForm, domain: Domain, seed: u64) -> f64 {
    let mut mesh = Mesh::new(domain);
    let s = random_vertex_tree(&mut mesh, seed, 8, 0.7, 0.3, 40);
    let st = random_vertex_tree(&mut mesh, seed + 5, 8, 0.7, 0.3, 40);
    let s: Vec<u64> = s.into_iter().map(u64::from).collect();
    let st: Vec<u64> = st.into_iter().map(u64::from).collect();
    let (ax0, bx0) = (TimeAxis(form0.trial), TimeAxis(form0.test));
    let t = time_tree(form0.trial, seed, 30);
    let tt = time_tree(form0.test, seed + 2, 30);
    let trial = random_double_tree(&ax0, &t, &mesh, &s, seed, 5);
    let test = random_double_tree(&bx0, &tt, &mesh, &st, seed + 4, 5);
    let c = random_coeffs(seed, trial.len());

    let plan = TensorPlan::new(form0, &test, &trial);
    let mut out = vec![0.0; test.len()];
    let mut op1 = SpaceOp::new(&mesh, form1);
    apply_tensor(&mut TimeOp(form0), &mut op1, &test, &trial, &c, &plan, &mut out);

    let a0 = lookup(test.project0(), trial.project0(), dense_matrix(form0, test.project0(), trial.project0()));
    let a1 = dense_space(&mesh, test.project1(), trial.project1(), form1);
    let (want, scale) = kron_apply(&a0, &a1, &test, &trial, &c);
    rel_err_floor(&out, &want, scale)
}
