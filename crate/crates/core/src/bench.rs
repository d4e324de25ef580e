//! Operation-count benchmarks for the tree and tensor kernels on uniform
//! and graded index sets.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::double_tree::{apply_tensor, DoubleTree, SpaceOp, TensorPlan, TimeOp};
use crate::heat::{derive_test_set, D_T, G_T, M_T, TRIAL};
use crate::matvec::{apply_tree, Part, TimeForm};
use crate::ops;
use crate::space::{Domain, Mesh, SpaceForm, Vid};
use crate::time_bases::{Family, TimeIndex};
use crate::tree::{Axis, TimeAxis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Uniform,
    /// Refined towards `t = 0` (and the re-entrant corner in space).
    Graded,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Uniform => "uniform",
            Shape::Graded => "graded",
        }
    }
}

/// Grows from the roots through children accepted by `keep`, then closes
/// the result under parents.
fn grow_closed<A: Axis>(axis: &mut A, keep: impl Fn(&A, u64) -> bool) -> Vec<u64> {
    let mut set: BTreeSet<u64> = axis.roots().into_iter().collect();
    let mut stack: Vec<u64> = set.iter().copied().collect();
    let mut buf = Vec::new();
    while let Some(k) = stack.pop() {
        buf.clear();
        axis.children(k, &mut buf);
        for &c in &buf {
            if keep(axis, c) && set.insert(c) {
                stack.push(c);
            }
        }
    }
    let mut stack: Vec<u64> = set.iter().copied().collect();
    while let Some(k) = stack.pop() {
        buf.clear();
        axis.parents(k, &mut buf);
        for &p in &buf {
            if set.insert(p) {
                stack.push(p);
            }
        }
    }
    set.into_iter().collect()
}

/// Time tree of `fam` up to `level`; graded trees keep wavelets whose
/// support starts before `2^{-l/2}`, plus their ancestors.
pub fn time_tree(fam: Family, shape: Shape, level: u32) -> Vec<u64> {
    let keep = move |_: &TimeAxis, k: u64| {
        let i = TimeIndex::from_key(k);
        i.level <= level && (shape == Shape::Uniform || fam.support(i).left() < 0.5f64.powf(i.level as f64 / 2.0))
    };
    let mut keys = grow_closed(&mut TimeAxis(fam), keep);
    keys.sort_by_key(|&k| (TimeIndex::from_key(k).level, k));
    keys
}

/// Vertex tree up to generation `gen`; graded trees keep vertices within
/// `2^{-g/4}` of the origin, plus their ancestors.
pub fn vertex_tree(mesh: &mut Mesh, shape: Shape, gen: u32) -> Vec<Vid> {
    if shape == Shape::Uniform {
        let mut v = mesh.uniform_vertices(gen);
        v.sort_unstable();
        return v;
    }
    let keep = |m: &Mesh, k: u64| {
        let p = m.vertex(k as Vid);
        p.gen <= gen && (p.x * p.x + p.y * p.y).sqrt() < 0.5f64.powf(p.gen as f64 / 4.0)
    };
    grow_closed(mesh, keep).into_iter().map(|k| k as Vid).collect()
}

/// `{(λ, ν) : |λ| + gen ν ≤ level}` over trees of the given shape.
pub fn space_time_tree(mesh: &mut Mesh, shape: Shape, level: u32) -> DoubleTree {
    let t = time_tree(TRIAL, shape, level);
    let s = vertex_tree(mesh, shape, level);
    let mut pairs = Vec::new();
    for &a in &t {
        let la = TimeIndex::from_key(a).level;
        for &b in &s {
            if la + mesh.vertex(b).gen <= level {
                pairs.push((a, b as u64));
            }
        }
    }
    DoubleTree::from_pairs(pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub kernel: String,
    pub shape: Shape,
    pub n: usize,
    pub ops: u64,
    pub ms: f64,
}

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Ops of the full, upper and lower tree applications of `form` on trees
/// of the given shape, with `n` the total number of trial and test nodes.
pub fn bench_tree_form(form: TimeForm, shape: Shape, level: u32, seed: u64) -> Vec<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trial = time_tree(form.trial, shape, level);
    let test = time_tree(form.test, shape, level);
    let c: Vec<(u64, f64)> = trial.iter().copied().zip(random_values(&mut rng, trial.len())).collect();
    let n = trial.len() + test.len();
    [(Part::Full, "eval"), (Part::Upper, "evalupp"), (Part::Lower, "evallow")]
        .into_iter()
        .map(|(part, name)| {
            let clock = Instant::now();
            let (_, ops) = ops::measure(|| apply_tree(form, part, &test, &c));
            BenchRow { kernel: format!("{name}:{form:?}"), shape, n, ops, ms: clock.elapsed().as_secs_f64() * 1e3 }
        })
        .collect()
}

/// Ops of `B = D_t⊗M_x + M_t⊗A_x` from a space-time tree onto its test set,
/// including the construction of the intermediate trees.
pub fn bench_tensor(shape: Shape, level: u32, seed: u64) -> BenchRow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = match shape {
        Shape::Uniform => Domain::UnitSquare,
        Shape::Graded => Domain::LShape,
    };
    let mut mesh = Mesh::new(domain);
    let trial = space_time_tree(&mut mesh, shape, level);
    let test = derive_test_set(&trial);
    let c = random_values(&mut rng, trial.len());
    let mut out = vec![0.0; test.len()];
    let clock = Instant::now();
    let (_, ops) = ops::measure(|| {
        let plan = TensorPlan::new(M_T, &test, &trial);
        apply_tensor(&mut TimeOp(D_T), &mut SpaceOp::new(&mesh, SpaceForm::MASS), &test, &trial, &c, &plan, &mut out);
        apply_tensor(
            &mut TimeOp(M_T),
            &mut SpaceOp::new(&mesh, SpaceForm::STIFFNESS),
            &test,
            &trial,
            &c,
            &plan,
            &mut out,
        );
    });
    BenchRow {
        kernel: "apply_tensor:B".into(),
        shape,
        n: trial.len() + test.len(),
        ops,
        ms: clock.elapsed().as_secs_f64() * 1e3,
    }
}

/// Levels whose trees span roughly `10³..10⁶` nodes.
pub fn tree_levels(shape: Shape) -> std::ops::RangeInclusive<u32> {
    match shape {
        Shape::Uniform => 9..=19,
        Shape::Graded => 16..=36,
    }
}

pub fn tensor_levels(shape: Shape) -> std::ops::RangeInclusive<u32> {
    match shape {
        Shape::Uniform => 6..=15,
        Shape::Graded => 6..=26,
    }
}

/// The full kernel table: every tree form and the tensor operator over
/// both shapes.
pub fn kernel_bench(seed: u64, mut on_row: impl FnMut(&BenchRow)) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for shape in [Shape::Uniform, Shape::Graded] {
        for form in [M_T, D_T, G_T] {
            for level in tree_levels(shape).step_by(2) {
                for r in bench_tree_form(form, shape, level, seed) {
                    on_row(&r);
                    rows.push(r);
                }
            }
        }
        for level in tensor_levels(shape).step_by(if shape == Shape::Uniform { 1 } else { 2 }) {
            let r = bench_tensor(shape, level, seed);
            on_row(&r);
            rows.push(r);
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{is_vertex_tree, Marks};
    use crate::tree::is_tree;

    #[test]
    fn generated_sets_are_trees() {
        for shape in [Shape::Uniform, Shape::Graded] {
            for fam in [Family::ThreePoint, Family::Ortho] {
                let t = time_tree(fam, shape, 12);
                assert!(is_tree(&TimeAxis(fam), &t));
            }
            for domain in [Domain::UnitSquare, Domain::LShape] {
                let mut mesh = Mesh::new(domain);
                let v = vertex_tree(&mut mesh, shape, 12);
                assert!(is_vertex_tree(&mesh, &v, &mut Marks::new()));
            }
        }
    }

    #[test]
    fn graded_sets_grow_geometrically() {
        let small = time_tree(Family::ThreePoint, Shape::Graded, 12).len();
        let large = time_tree(Family::ThreePoint, Shape::Graded, 20).len();
        assert!(large > 8 * small, "{small} -> {large}");
        let mut mesh = Mesh::new(Domain::LShape);
        let small = vertex_tree(&mut mesh, Shape::Graded, 8).len();
        let large = vertex_tree(&mut mesh, Shape::Graded, 16).len();
        assert!(large > 8 * small, "{small} -> {large}");
    }
}
