//! Adaptive space-time solver for the heat equation `∂ₜu − Δu = g`,
//! `u(0) = u₀`, on `I × Ω` with homogeneous Dirichlet data.
//!
//! Trial functions are three-point wavelets in time times hierarchical hats
//! in space, indexed by a double-tree `Λ^δ`; test functions are orthonormal
//! wavelets in time times hats, indexed by `Λ_Y`. The discrete problem is
//! the Schur system `S u = f` with `S = B'K_Y B + γ₀'γ₀`, solved by PCG.
//!
//! Vectors live on the full double-trees including boundary vertices; the
//! boundary entries are kept at zero, and dimensions count interior pairs.

use std::time::Instant;

use crate::double_tree::{
    apply_tensor, close_axis0, refine_from_marked, DoubleTree, DoubleTreeError, SpaceOp, TensorPlan, TimeOp,
};
use crate::matvec::{FormKind, TimeForm};
use crate::ops;
use crate::sorted::merge_union;
use crate::space::{
    apply_form_ss, apply_form_ss_masked, chol_solve, cholesky, hb_to_ss_inverse_transpose, hb_to_ss_unmasked,
    modified_transpose, ss_to_hb, triangulation, Domain, Eid, Marks, Mesh, Multigrid, SpaceError, SpaceForm, Vid,
};
use crate::time_bases::{hat_dual, Family, TimeIndex};
use crate::tree::{Axis, TimeAxis};

pub const TRIAL: Family = Family::ThreePoint;
pub const TEST: Family = Family::Ortho;

pub const D_T: TimeForm = TimeForm::new(FormKind::Deriv, TRIAL, TEST);
pub const M_T: TimeForm = TimeForm::new(FormKind::Mass, TRIAL, TEST);
pub const G_T: TimeForm = TimeForm::new(FormKind::Trace, TRIAL, TRIAL);
const M_HAT: TimeForm = TimeForm::new(FormKind::Mass, Family::Hat, TEST);

#[derive(Debug, thiserror::Error)]
pub enum HeatError {
    #[error("non-finite value in PCG at iteration {0}")]
    NonFinite(usize),
    #[error("PCG did not reach {target:e} within {iters} iterations (last {beta:e})")]
    NoConvergence { iters: usize, beta: f64, target: f64 },
    #[error("solve step did not settle within {0} PCG restarts")]
    InnerLoop(usize),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    DoubleTree(#[from] DoubleTreeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Smooth,
    MovingPeak,
    Cylinder,
    Singular,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 4] =
        [ProblemKind::Smooth, ProblemKind::MovingPeak, ProblemKind::Cylinder, ProblemKind::Singular];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Smooth => "smooth",
            ProblemKind::MovingPeak => "moving-peak",
            ProblemKind::Cylinder => "cylinder",
            ProblemKind::Singular => "singular",
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ProblemKind::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<_> = ProblemKind::ALL.iter().map(|p| p.name()).collect();
            format!("unknown problem '{s}' (expected one of: {})", names.join(", "))
        })
    }
}

/// Data `(Ω, g, u₀)` of a heat problem; `g` and `u₀` must be continuous.
pub trait HeatData {
    fn domain(&self) -> Domain;
    fn g(&self, t: f64, x: f64, y: f64) -> f64;
    fn u0(&self, x: f64, y: f64) -> f64;
}

/// One of the benchmark problems, with the exact solution where known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Problem {
    pub kind: ProblemKind,
}

impl Problem {
    pub fn new(kind: ProblemKind) -> Self {
        Problem { kind }
    }

    pub fn exact(&self, t: f64, x: f64, y: f64) -> Option<f64> {
        let p = x * (1.0 - x) * y * (1.0 - y);
        match self.kind {
            ProblemKind::Smooth => Some((1.0 + t * t) * p),
            ProblemKind::MovingPeak => Some(p * (-100.0 * ((x - t).powi(2) + (y - t).powi(2))).exp()),
            _ => None,
        }
    }
}

impl HeatData for Problem {
    fn domain(&self) -> Domain {
        match self.kind {
            ProblemKind::Smooth | ProblemKind::MovingPeak => Domain::UnitSquare,
            ProblemKind::Cylinder | ProblemKind::Singular => Domain::LShape,
        }
    }

    fn g(&self, t: f64, x: f64, y: f64) -> f64 {
        let (a, b) = (x * (1.0 - x), y * (1.0 - y));
        match self.kind {
            ProblemKind::Smooth => 2.0 * t * a * b + (1.0 + t * t) * 2.0 * (a + b),
            ProblemKind::MovingPeak => {
                let (dx, dy) = (x - t, y - t);
                let e = (-100.0 * (dx * dx + dy * dy)).exp();
                let ut = 200.0 * a * b * (dx + dy);
                let lap = -2.0 * (a + b) - 400.0 * ((1.0 - 2.0 * x) * b * dx + a * (1.0 - 2.0 * y) * dy)
                    + a * b * (40000.0 * (dx * dx + dy * dy) - 400.0);
                e * (ut - lap)
            }
            ProblemKind::Cylinder => {
                if x * x + y * y < 0.25 {
                    t
                } else {
                    0.0
                }
            }
            ProblemKind::Singular => 0.0,
        }
    }

    fn u0(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            ProblemKind::Smooth | ProblemKind::MovingPeak => self.exact(0.0, x, y).unwrap(),
            ProblemKind::Cylinder => 0.0,
            ProblemKind::Singular => 1.0,
        }
    }
}

/// Adds, for every pair, the pairs with a time child and those with a
/// space descendant up to two generations down, and closes the result.
pub fn enlarge(lam: &DoubleTree, mesh: &mut Mesh) -> DoubleTree {
    let tax = TimeAxis(TRIAL);
    let mut buf = Vec::new();
    let tkids: Vec<Vec<u64>> = lam
        .project0()
        .iter()
        .map(|&t| {
            buf.clear();
            TimeAxis(TRIAL).children(t, &mut buf);
            buf.clone()
        })
        .collect();
    let skids: Vec<Vec<u64>> = lam
        .project1()
        .iter()
        .map(|&s| {
            let kids = mesh.vertex_children(s as Vid);
            let mut all: Vec<u64> = kids.iter().map(|&c| c as u64).collect();
            for c in kids {
                all.extend(mesh.vertex_children(c).into_iter().map(u64::from));
            }
            all.sort_unstable();
            all.dedup();
            all
        })
        .collect();
    let mut pairs: Vec<(u64, u64)> = lam.pairs().to_vec();
    for (j, &s) in lam.project1().iter().enumerate() {
        for &q in lam.fiber0(j) {
            let t = lam.pair(q as usize).0;
            pairs.extend(tkids[lam.time_rank(q as usize)].iter().map(|&c| (c, s)));
            pairs.extend(skids[j].iter().map(|&c| (t, c)));
        }
    }
    ops::add(pairs.len() as u64);
    DoubleTree::closure(pairs, &tax, &*mesh)
}

/// `Λ_Y`: for each `(λ, ν)`, the pairs `(μ, ν)` with `μ` a test wavelet on
/// the level of `λ` whose support meets that of `λ`.
pub fn derive_test_set(lam: &DoubleTree) -> DoubleTree {
    let mut keys: Vec<u128> = Vec::new();
    let mut cur: Vec<u64> = Vec::new();
    for (j, &s) in lam.project1().iter().enumerate() {
        cur.clear();
        for &q in lam.fiber0(j) {
            let l = TimeIndex::from_key(lam.pair(q as usize).0);
            TEST.for_each_overlapping(l.level, TRIAL.support(l), |m| cur.push(m.key()));
        }
        cur.sort_unstable();
        cur.dedup();
        keys.extend(cur.iter().map(|&m| ((m as u128) << 64) | s as u128));
    }
    close_axis0(keys, &TimeAxis(TEST))
}

/// Index sets of one discretization: `Λ^δ`, its enlargement, and the test set.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub lam: DoubleTree,
    pub big: DoubleTree,
    pub test: DoubleTree,
}

impl Discretization {
    pub fn new(lam: DoubleTree, mesh: &mut Mesh) -> Self {
        let big = enlarge(&lam, mesh);
        let test = derive_test_set(&big);
        Discretization { lam, big, test }
    }

    /// Initial discretization: the root pairs, enlarged once.
    pub fn initial(mesh: &mut Mesh) -> Self {
        let roots = DoubleTree::roots(&TimeAxis(TRIAL), &*mesh);
        Discretization::new(enlarge(&roots, mesh), mesh)
    }
}

/// Number of pairs whose space vertex is interior.
pub fn interior_dim(tree: &DoubleTree, mesh: &Mesh) -> usize {
    tree.pairs().iter().filter(|p| !mesh.vertex(p.1 as Vid).boundary).count()
}

fn zero_boundary(tree: &DoubleTree, mesh: &Mesh, v: &mut [f64]) {
    for (x, p) in v.iter_mut().zip(tree.pairs()) {
        if mesh.vertex(p.1 as Vid).boundary {
            *x = 0.0;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How spatial blocks are inverted in the preconditioners.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inversion {
    /// `cycles` multiplicative V-cycles.
    Multigrid { cycles: usize },
    /// Dense Cholesky per block (small instances only).
    Exact,
}

#[derive(Debug, Clone)]
enum BlockSolver {
    Mg(Multigrid),
    Dense { idx: Vec<usize>, chol: Vec<Vec<f64>>, n: usize },
}

impl BlockSolver {
    fn build(
        mesh: &Mesh,
        verts: &[Vid],
        form: SpaceForm,
        inv: Inversion,
        marks: &mut Marks,
    ) -> Result<Self, SpaceError> {
        match inv {
            Inversion::Multigrid { .. } => Ok(BlockSolver::Mg(Multigrid::new(mesh, verts, form, marks)?)),
            Inversion::Exact => {
                marks.load(mesh, verts);
                let elems = triangulation(mesh, marks);
                let n = verts.len();
                let idx: Vec<usize> = (0..n).filter(|&i| !mesh.vertex(verts[i]).boundary).collect();
                let mut a = vec![vec![0.0; idx.len()]; idx.len()];
                let (mut e, mut col) = (vec![0.0; n], vec![0.0; n]);
                for (c, &j) in idx.iter().enumerate() {
                    e[j] = 1.0;
                    apply_form_ss(mesh, &elems, marks, form, &e, &mut col);
                    e[j] = 0.0;
                    for (r, &i) in idx.iter().enumerate() {
                        a[r][c] = col[i];
                    }
                }
                let chol = cholesky(&a).ok_or(SpaceError::SingularCoarse)?;
                Ok(BlockSolver::Dense { idx, chol, n })
            }
        }
    }

    fn solve(&self, f: &[f64], inv: Inversion) -> Vec<f64> {
        match (self, inv) {
            (BlockSolver::Mg(mg), Inversion::Multigrid { cycles }) => mg.solve(f, cycles),
            (BlockSolver::Dense { idx, chol, n }, _) => {
                let rhs: Vec<f64> = idx.iter().map(|&i| f[i]).collect();
                let mut u = vec![0.0; *n];
                for (&i, v) in idx.iter().zip(chol_solve(chol, &rhs)) {
                    u[i] = v;
                }
                u
            }
            _ => unreachable!("block solver built for a different inversion"),
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    start: usize,
    verts: Vec<Vid>,
    pos: Vec<u32>,
    solver: BlockSolver,
    elems: Vec<Eid>,
}

/// Block-diagonal spatial preconditioner over the time-index fibers of a
/// double-tree: `K_Y` (blocks `≈ A⁻¹`) or `K_X` (blocks `K A K` with
/// `K ≈ (A + 2^{|λ|} M)⁻¹`).
#[derive(Debug, Clone)]
pub struct BlockPrecond {
    blocks: Vec<Block>,
    shifted: bool,
    inv: Inversion,
    marks: Marks,
    len: usize,
}

impl BlockPrecond {
    /// Test-side preconditioner `K_Y`.
    pub fn test_side(mesh: &Mesh, tree: &DoubleTree, inv: Inversion) -> Result<Self, SpaceError> {
        Self::build(mesh, tree, inv, false)
    }

    /// Trial-side preconditioner `K_X`.
    pub fn trial_side(mesh: &Mesh, tree: &DoubleTree, inv: Inversion) -> Result<Self, SpaceError> {
        Self::build(mesh, tree, inv, true)
    }

    fn build(mesh: &Mesh, tree: &DoubleTree, inv: Inversion, shifted: bool) -> Result<Self, SpaceError> {
        let roots: Vec<u64> = mesh.root_vertices().iter().map(|&v| v as u64).collect();
        let mut marks = Marks::new();
        let mut blocks = Vec::with_capacity(tree.project0().len());
        for (i, &t) in tree.project0().iter().enumerate() {
            let r = tree.fiber1(i);
            let keys: Vec<u64> = tree.pairs()[r.clone()].iter().map(|p| p.1).collect();
            let all = merge_union(&roots, &keys);
            let verts: Vec<Vid> = all.iter().map(|&v| v as Vid).collect();
            let mut pos = Vec::with_capacity(keys.len());
            let mut k = 0;
            for &key in &keys {
                while all[k] < key {
                    k += 1;
                }
                pos.push(k as u32);
            }
            let form = if shifted {
                SpaceForm::shifted((1u64 << TimeIndex::from_key(t).level) as f64)
            } else {
                SpaceForm::STIFFNESS
            };
            let solver = BlockSolver::build(mesh, &verts, form, inv, &mut marks)?;
            let elems = if shifted {
                marks.load(mesh, &verts);
                triangulation(mesh, &marks)
            } else {
                Vec::new()
            };
            blocks.push(Block { start: r.start, verts, pos, solver, elems });
        }
        Ok(BlockPrecond { blocks, shifted, inv, marks, len: tree.len() })
    }

    pub fn apply(&mut self, mesh: &Mesh, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.len);
        let mut out = vec![0.0; x.len()];
        let mut buf = Vec::new();
        let mut ay = Vec::new();
        for b in &self.blocks {
            buf.clear();
            buf.resize(b.verts.len(), 0.0);
            for (k, &p) in b.pos.iter().enumerate() {
                buf[p as usize] = x[b.start + k];
            }
            self.marks.load(mesh, &b.verts);
            hb_to_ss_inverse_transpose(mesh, &b.verts, &self.marks, &mut buf);
            let mut u = b.solver.solve(&buf, self.inv);
            if self.shifted {
                ay.resize(u.len(), 0.0);
                apply_form_ss(mesh, &b.elems, &self.marks, SpaceForm::STIFFNESS, &u, &mut ay);
                u = b.solver.solve(&ay, self.inv);
            }
            ss_to_hb(mesh, &b.verts, &self.marks, &mut u);
            for (k, &p) in b.pos.iter().enumerate() {
                out[b.start + k] = u[p as usize];
            }
        }
        out
    }
}

/// `v ↦ B'K_Y B v + γ₀'γ₀ v` from a trial double-tree through the test set.
pub struct Schur<'a> {
    mesh: &'a Mesh,
    pub trial: &'a DoubleTree,
    pub test: &'a DoubleTree,
    plan_b: TensorPlan,
    plan_bt: TensorPlan,
    plan_g: TensorPlan,
    mass: SpaceOp<'a>,
    stiff: SpaceOp<'a>,
}

impl<'a> Schur<'a> {
    pub fn new(mesh: &'a Mesh, trial: &'a DoubleTree, test: &'a DoubleTree) -> Self {
        Schur {
            mesh,
            trial,
            test,
            plan_b: TensorPlan::new(M_T, test, trial),
            plan_bt: TensorPlan::new(M_T.transpose(), trial, test),
            plan_g: TensorPlan::new(G_T, trial, trial),
            mass: SpaceOp::new(mesh, SpaceForm::MASS),
            stiff: SpaceOp::new(mesh, SpaceForm::STIFFNESS),
        }
    }

    /// `B v` on the test set.
    pub fn apply_b(&mut self, v: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.test.len()];
        apply_tensor(&mut TimeOp(D_T), &mut self.mass, self.test, self.trial, v, &self.plan_b, &mut w);
        apply_tensor(&mut TimeOp(M_T), &mut self.stiff, self.test, self.trial, v, &self.plan_b, &mut w);
        w
    }

    /// `B' w` on the trial set.
    pub fn apply_bt(&mut self, w: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.trial.len()];
        apply_tensor(&mut TimeOp(D_T.transpose()), &mut self.mass, self.trial, self.test, w, &self.plan_bt, &mut v);
        apply_tensor(&mut TimeOp(M_T.transpose()), &mut self.stiff, self.trial, self.test, w, &self.plan_bt, &mut v);
        v
    }

    /// `γ₀'γ₀ v`.
    pub fn apply_gamma0(&mut self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.trial.len()];
        apply_tensor(&mut TimeOp(G_T), &mut self.mass, self.trial, self.trial, v, &self.plan_g, &mut out);
        out
    }

    pub fn apply(&mut self, ky: &mut BlockPrecond, v: &[f64]) -> Vec<f64> {
        let w = self.apply_b(v);
        let z = ky.apply(self.mesh, &w);
        let mut out = self.apply_bt(&z);
        for (o, g) in out.iter_mut().zip(self.apply_gamma0(v)) {
            *o += g;
        }
        zero_boundary(self.trial, self.mesh, &mut out);
        out
    }
}

/// Dual functional of the hierarchical hat at `v`: point value minus the
/// mean over its godparents.
pub fn space_dual(mesh: &Mesh, v: Vid, f: impl Fn(f64, f64) -> f64) -> f64 {
    let p = mesh.vertex(v);
    let mut s = f(p.x, p.y);
    if let Some(gp) = p.godparents {
        for g in gp {
            let q = mesh.vertex(g);
            s -= 0.5 * f(q.x, q.y);
        }
    }
    s
}

/// Right-hand side ingredients built from interpolants of `g` and `u₀` on
/// the enlarged double-tree.
#[derive(Debug, Clone)]
pub struct Rhs {
    /// `f` on the enlarged trial set.
    pub f_big: Vec<f64>,
    /// `E_Y'g` on the test set.
    pub g_test: Vec<f64>,
    /// `‖u₀‖²` of the interpolant.
    pub u0_norm2: f64,
}

pub fn assemble_rhs(
    mesh: &Mesh,
    disc: &Discretization,
    problem: &dyn HeatData,
    schur_big: &mut Schur,
    ky: &mut BlockPrecond,
) -> Rhs {
    let big = &disc.big;
    let gvec: Vec<f64> = big
        .pairs()
        .iter()
        .map(|&(t, s)| hat_dual(TimeIndex::from_key(t), |tt| space_dual(mesh, s as Vid, |x, y| problem.g(tt, x, y))))
        .collect();
    ops::add(9 * big.len() as u64);
    let plan = TensorPlan::new(M_HAT, &disc.test, big);
    let mut g_test = vec![0.0; disc.test.len()];
    let mut mass_free = SpaceOp::with_free_trial(mesh, SpaceForm::MASS);
    apply_tensor(&mut TimeOp(M_HAT), &mut mass_free, &disc.test, big, &gvec, &plan, &mut g_test);
    let z = ky.apply(mesh, &g_test);
    let mut f_big = schur_big.apply_bt(&z);

    // γ₀'u₀: σ_λ(0) times the mass moments of the interpolant of u₀.
    let verts_keys = merge_union(&mesh.root_vertices().iter().map(|&v| v as u64).collect::<Vec<_>>(), big.project1());
    let verts: Vec<Vid> = verts_keys.iter().map(|&v| v as Vid).collect();
    let mut marks = Marks::new();
    marks.load(mesh, &verts);
    let mut u0: Vec<f64> = verts.iter().map(|&v| space_dual(mesh, v, |x, y| problem.u0(x, y))).collect();
    hb_to_ss_unmasked(mesh, &verts, &marks, &mut u0);
    let elems = triangulation(mesh, &marks);
    let mut w = vec![0.0; verts.len()];
    apply_form_ss_masked(mesh, &elems, &marks, SpaceForm::MASS, [false, false], &u0, &mut w);
    let u0_norm2 = dot(&u0, &w);
    apply_form_ss_masked(mesh, &elems, &marks, SpaceForm::MASS, [true, false], &u0, &mut w);
    crate::space::hb_to_ss_transpose(mesh, &verts, &marks, &mut w);
    for (k, &(t, s)) in big.pairs().iter().enumerate() {
        let s0 = TRIAL.value_at_zero(TimeIndex::from_key(t));
        if s0 != 0.0 {
            f_big[k] += s0 * w[marks.get(s as Vid).unwrap() as usize];
        }
    }
    zero_boundary(big, mesh, &mut f_big);
    Rhs { f_big, g_test, u0_norm2 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgOutcome {
    pub iters: usize,
    /// Algebraic error estimator `√((f − Su)(K(f − Su)))` of the returned iterate.
    pub beta: f64,
}

/// Preconditioned conjugate gradients from the iterate in `u`, stopped as
/// soon as the algebraic estimator drops to `target`.
pub fn pcg(
    mut apply_s: impl FnMut(&[f64]) -> Vec<f64>,
    mut apply_k: impl FnMut(&[f64]) -> Vec<f64>,
    f: &[f64],
    u: &mut [f64],
    target: f64,
    max_iter: usize,
) -> Result<PcgOutcome, HeatError> {
    let su = apply_s(u);
    let mut r: Vec<f64> = f.iter().zip(&su).map(|(a, b)| a - b).collect();
    let mut z = apply_k(&r);
    let mut rz = dot(&r, &z);
    let mut p = z.clone();
    for it in 0..=max_iter {
        let beta = rz.abs().sqrt();
        if !beta.is_finite() {
            return Err(HeatError::NonFinite(it));
        }
        if beta <= target {
            return Ok(PcgOutcome { iters: it, beta });
        }
        if it == max_iter {
            return Err(HeatError::NoConvergence { iters: it, beta, target });
        }
        let sp = apply_s(&p);
        let alpha = rz / dot(&p, &sp);
        for ((ui, ri), (pi, spi)) in u.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&sp)) {
            *ui += alpha * pi;
            *ri -= alpha * spi;
        }
        z = apply_k(&r);
        let rz_new = dot(&r, &z);
        let gamma = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + gamma * *pi;
        }
    }
    unreachable!()
}

/// `1/√(1 + 4^{|λ| − gen ν})`.
pub fn estimator_weight(time_level: u32, gen: u32) -> f64 {
    1.0 / (1.0 + 4f64.powi(time_level as i32 - gen as i32)).sqrt()
}

/// Residual in the two-level basis on `Λ^δ̲₀ \ Λ^δ₀`.
#[derive(Debug, Clone, Default)]
pub struct Estimate {
    /// Slots in the enlarged double-tree.
    pub slots: Vec<usize>,
    pub values: Vec<f64>,
    pub norm: f64,
}

/// `r = e_λν (f − S P u)(σ_λ ⊗ ψ̂_ν)` over the pairs added by enlargement.
pub fn estimate(
    mesh: &Mesh,
    disc: &Discretization,
    schur_big: &mut Schur,
    ky: &mut BlockPrecond,
    f_big: &[f64],
    u: &[f64],
) -> Estimate {
    let pu = disc.lam.transfer(u, &disc.big);
    two_level_residual(mesh, disc, schur_big, ky, f_big, &pu)
}

/// As [`estimate`] for an iterate already given on the enlarged set.
pub fn two_level_residual(
    mesh: &Mesh,
    disc: &Discretization,
    schur_big: &mut Schur,
    ky: &mut BlockPrecond,
    f_big: &[f64],
    pu: &[f64],
) -> Estimate {
    let big = &disc.big;
    let su = schur_big.apply(ky, pu);
    let mut res: Vec<f64> = f_big.iter().zip(&su).map(|(a, b)| a - b).collect();
    let roots: Vec<u64> = mesh.root_vertices().iter().map(|&v| v as u64).collect();
    let mut marks = Marks::new();
    let mut buf = Vec::new();
    for i in 0..big.project0().len() {
        let r = big.fiber1(i);
        let keys: Vec<u64> = big.pairs()[r.clone()].iter().map(|p| p.1).collect();
        let all = merge_union(&roots, &keys);
        let verts: Vec<Vid> = all.iter().map(|&v| v as Vid).collect();
        marks.load(mesh, &verts);
        buf.clear();
        buf.resize(verts.len(), 0.0);
        for (q, &k) in r.clone().zip(&keys) {
            buf[marks.get(k as Vid).unwrap() as usize] = res[q];
        }
        modified_transpose(mesh, &verts, &marks, &mut buf);
        for (q, &k) in r.zip(&keys) {
            res[q] = buf[marks.get(k as Vid).unwrap() as usize];
        }
    }
    let mut inside = vec![false; big.len()];
    for s in disc.lam.embed_into(big).into_iter().flatten() {
        inside[s as usize] = true;
    }
    let mut est = Estimate::default();
    for (q, &(t, s)) in big.pairs().iter().enumerate() {
        let v = mesh.vertex(s as Vid);
        if inside[q] || v.boundary {
            continue;
        }
        let e = estimator_weight(TimeIndex::from_key(t).level, v.gen);
        est.slots.push(q);
        est.values.push(e * res[q]);
    }
    est.norm = dot(&est.values, &est.values).sqrt();
    est
}

/// Smallest set of entries carrying a `θ` fraction of the norm; larger
/// magnitudes first, ties by position.
pub fn dorfler_mark(values: &[f64], theta: f64) -> Vec<usize> {
    let total: f64 = values.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    let goal = theta * theta * total;
    let mut acc = 0.0;
    let mut out = Vec::new();
    for i in order {
        if acc >= goal || values[i] == 0.0 {
            break;
        }
        acc += values[i] * values[i];
        out.push(i);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Config {
    pub theta: f64,
    pub xi: f64,
    pub max_dofs: usize,
    pub inversion: Inversion,
    /// Hard cap on loop iterations.
    pub max_iterations: usize,
    pub max_pcg: usize,
    pub max_restarts: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            theta: 0.5,
            xi: 0.5,
            max_dofs: 10_000,
            inversion: Inversion::Multigrid { cycles: 2 },
            max_iterations: 200,
            max_pcg: 500,
            max_restarts: 100,
        }
    }
}

/// One row of the loop log.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Record {
    pub iteration: usize,
    pub dim_x: usize,
    pub dim_xbar: usize,
    pub dim_y: usize,
    pub residual_norm: f64,
    pub beta: f64,
    pub pcg_iters: usize,
    pub solve_ms: f64,
    pub estimate_ms: f64,
    pub mark_ms: f64,
    pub refine_ms: f64,
    pub opcount_solve: u64,
    pub opcount_estimate: u64,
}

/// Final state of an adaptive run.
#[derive(Debug)]
pub struct Outcome {
    pub records: Vec<Record>,
    pub mesh: Mesh,
    pub disc: Discretization,
    pub u: Vec<f64>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// The adaptive loop: solve to a tolerance tied to the estimator, estimate,
/// mark, refine. `on_record` sees every row as soon as it is complete.
pub fn adaptive_loop(
    problem: &dyn HeatData,
    cfg: &Config,
    mut on_record: impl FnMut(&Record),
) -> Result<Outcome, HeatError> {
    let mut mesh = Mesh::new(problem.domain());
    let mut disc = Discretization::initial(&mut mesh);
    let mut u = vec![0.0; disc.lam.len()];
    let mut t_delta: Option<f64> = None;
    let mut records = Vec::new();
    for iteration in 0..cfg.max_iterations {
        let mut rec = Record {
            iteration,
            dim_x: interior_dim(&disc.lam, &mesh),
            dim_xbar: interior_dim(&disc.big, &mesh),
            dim_y: interior_dim(&disc.test, &mesh),
            ..Record::default()
        };
        let (marked, next) = {
            let mesh = &mesh;
            let clock = Instant::now();
            let ops0 = ops::get();
            let mut ky = BlockPrecond::test_side(mesh, &disc.test, cfg.inversion)?;
            let mut kx = BlockPrecond::trial_side(mesh, &disc.lam, cfg.inversion)?;
            let mut small = Schur::new(mesh, &disc.lam, &disc.test);
            let mut big = Schur::new(mesh, &disc.big, &disc.test);
            let rhs = assemble_rhs(mesh, &disc, problem, &mut big, &mut ky);
            let f = disc.big.transfer(&rhs.f_big, &disc.lam);
            let mut t = match t_delta {
                Some(t) => t,
                None => {
                    let kg = ky.apply(mesh, &rhs.g_test);
                    (dot(&rhs.g_test, &kg) + rhs.u0_norm2).max(0.0).sqrt()
                }
            };
            let mut est_ops = 0;
            let mut est_ms = 0.0;
            let mut est;
            let mut restarts = 0;
            loop {
                let out = pcg(|v| small.apply(&mut ky, v), |r| kx.apply(mesh, r), &f, &mut u, t / 2.0, cfg.max_pcg)?;
                rec.pcg_iters += out.iters;
                t = out.beta;
                let ce = Instant::now();
                let (e, n) = ops::measure(|| estimate(mesh, &disc, &mut big, &mut ky, &rhs.f_big, &u));
                est_ops += n;
                est_ms += ms(ce);
                est = e;
                let e_delta = est.norm + t;
                restarts += 1;
                if t <= cfg.xi * e_delta {
                    t_delta = Some(e_delta);
                    break;
                }
                if restarts >= cfg.max_restarts {
                    return Err(HeatError::InnerLoop(restarts));
                }
            }
            rec.residual_norm = est.norm;
            rec.beta = t;
            rec.estimate_ms = est_ms;
            rec.solve_ms = ms(clock) - est_ms;
            rec.opcount_estimate = est_ops;
            rec.opcount_solve = ops::get() - ops0 - est_ops;

            let clock = Instant::now();
            let j = dorfler_mark(&est.values, cfg.theta);
            let marked: Vec<usize> = j.into_iter().map(|i| est.slots[i]).collect();
            rec.mark_ms = ms(clock);
            let next = if marked.is_empty() || rec.dim_x >= cfg.max_dofs || iteration + 1 == cfg.max_iterations {
                None
            } else {
                let clock = Instant::now();
                let r = refine_from_marked(&disc.lam, &disc.big, &marked, &TimeAxis(TRIAL), mesh)?;
                rec.refine_ms = ms(clock);
                Some(r.tree)
            };
            (marked, next)
        };
        let _ = marked;
        let Some(lam) = next else {
            on_record(&rec);
            records.push(rec);
            break;
        };
        let clock = Instant::now();
        u = disc.lam.transfer(&u, &lam);
        disc = Discretization::new(lam, &mut mesh);
        rec.refine_ms += ms(clock);
        on_record(&rec);
        records.push(rec);
    }
    Ok(Outcome { records, mesh, disc, u })
}
