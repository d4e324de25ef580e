//! Newest-vertex-bisection meshes and hierarchical bases in two dimensions.
//!
//! The [`Mesh`] is the mother tree of all triangles reachable from the
//! initial triangulation by bisection. Elements and vertices are created on
//! demand; a conforming triangulation is identified with its vertex set,
//! which is closed under taking parents.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::ops;
use crate::tree::{Axis, AxisId};

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

pub type Vid = u32;
pub type Eid = u32;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// `(0,1)²` split by one diagonal into two triangles.
    UnitSquare,
    /// `(-1,1)² \ [0,1)×(-1,0]`, three unit squares each split by the
    /// diagonal through the re-entrant corner.
    LShape,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpaceError {
    #[error("coarse matrix is singular")]
    SingularCoarse,
    #[error("vertex {0} is not part of the mesh")]
    UnknownVertex(Vid),
}

#[derive(Debug, Clone)]
pub struct Vertex {
    pub x: f64,
    pub y: f64,
    pub gen: u32,
    parents: [Vid; 2],
    pub godparents: Option<[Vid; 2]>,
    pub boundary: bool,
    /// Elements of generation `gen` containing the vertex: the support of
    /// its hierarchical hat.
    pub patch: Vec<Eid>,
    /// Integral of the hierarchical hat (patch area / 3).
    pub hat_integral: f64,
}

impl Vertex {
    pub fn parents(&self) -> impl Iterator<Item = Vid> + '_ {
        self.parents.iter().copied().filter(|&p| p != NONE)
    }
}

#[derive(Debug, Clone)]
pub struct Element {
    /// `v[2]` is the newest vertex; `v[0]v[1]` the refinement edge.
    pub v: [Vid; 3],
    pub gen: u32,
    pub parent: Option<Eid>,
    pub children: Option<[Eid; 2]>,
    pub midpoint: Option<Vid>,
    /// Boundary flag of the edge opposite `v[i]`.
    bnd: [bool; 3],
}

#[derive(Debug, Clone)]
pub struct Mesh {
    uid: u64,
    pub domain: Domain,
    pub verts: Vec<Vertex>,
    pub elems: Vec<Element>,
    roots: Vec<Eid>,
    root_verts: Vec<Vid>,
    edges: HashMap<(u32, Vid, Vid), [Eid; 2]>,
}

#[inline]
fn edge_key(gen: u32, a: Vid, b: Vid) -> (u32, Vid, Vid) {
    if a < b {
        (gen, a, b)
    } else {
        (gen, b, a)
    }
}

impl Mesh {
    pub fn new(domain: Domain) -> Self {
        let (pts, tris): (Vec<(f64, f64)>, Vec<[Vid; 3]>) = match domain {
            Domain::UnitSquare => (vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)], vec![[0, 2, 1], [2, 0, 3]]),
            Domain::LShape => (
                vec![
                    (0.0, 0.0),
                    (1.0, 0.0),
                    (1.0, 1.0),
                    (0.0, 1.0),
                    (-1.0, 1.0),
                    (-1.0, 0.0),
                    (-1.0, -1.0),
                    (0.0, -1.0),
                ],
                vec![[0, 2, 1], [2, 0, 3], [0, 4, 3], [4, 0, 5], [0, 6, 5], [6, 0, 7]],
            ),
        };
        let mut mesh = Mesh {
            uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
            domain,
            verts: Vec::new(),
            elems: Vec::new(),
            roots: Vec::new(),
            root_verts: (0..pts.len() as Vid).collect(),
            edges: HashMap::new(),
        };
        for &(x, y) in &pts {
            mesh.verts.push(Vertex {
                x,
                y,
                gen: 0,
                parents: [NONE; 2],
                godparents: None,
                boundary: true,
                patch: Vec::new(),
                hat_integral: 0.0,
            });
        }
        // Edges used by one triangle only lie on the boundary.
        let mut count: HashMap<(Vid, Vid), u32> = HashMap::new();
        for t in &tris {
            for i in 0..3 {
                let k = edge_key(0, t[(i + 1) % 3], t[(i + 2) % 3]);
                *count.entry((k.1, k.2)).or_default() += 1;
            }
        }
        for t in &tris {
            let mut bnd = [false; 3];
            for (i, b) in bnd.iter_mut().enumerate() {
                let k = edge_key(0, t[(i + 1) % 3], t[(i + 2) % 3]);
                *b = count[&(k.1, k.2)] == 1;
            }
            let id = mesh.push_element(*t, 0, None, bnd);
            mesh.roots.push(id);
        }
        for v in mesh.verts.iter_mut() {
            v.boundary = false;
        }
        for t in &tris {
            for i in 0..3 {
                let k = edge_key(0, t[(i + 1) % 3], t[(i + 2) % 3]);
                if count[&(k.1, k.2)] == 1 {
                    mesh.verts[k.1 as usize].boundary = true;
                    mesh.verts[k.2 as usize].boundary = true;
                }
            }
        }
        let root_ids = mesh.roots.clone();
        for e in root_ids {
            let v = mesh.elems[e as usize].v;
            for &w in &v {
                mesh.verts[w as usize].patch.push(e);
            }
        }
        for v in 0..pts.len() {
            mesh.verts[v].hat_integral = mesh.patch_area(v as Vid) / 3.0;
        }
        mesh
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn roots(&self) -> &[Eid] {
        &self.roots
    }

    pub fn root_vertices(&self) -> &[Vid] {
        &self.root_verts
    }

    pub fn num_vertices(&self) -> usize {
        self.verts.len()
    }

    pub fn vertex(&self, v: Vid) -> &Vertex {
        &self.verts[v as usize]
    }

    pub fn element(&self, e: Eid) -> &Element {
        &self.elems[e as usize]
    }

    fn push_element(&mut self, v: [Vid; 3], gen: u32, parent: Option<Eid>, bnd: [bool; 3]) -> Eid {
        let id = self.elems.len() as Eid;
        self.elems.push(Element { v, gen, parent, children: None, midpoint: None, bnd });
        for i in 0..3 {
            let slot = self.edges.entry(edge_key(gen, v[(i + 1) % 3], v[(i + 2) % 3])).or_insert([NONE; 2]);
            if slot[0] == NONE {
                slot[0] = id;
            } else {
                slot[1] = id;
            }
        }
        id
    }

    pub fn area(&self, e: Eid) -> f64 {
        let [a, b, c] = self.elems[e as usize].v.map(|v| &self.verts[v as usize]);
        0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)).abs()
    }

    fn patch_area(&self, v: Vid) -> f64 {
        self.verts[v as usize].patch.iter().map(|&e| self.area(e)).sum()
    }

    /// Same-generation element sharing edge `ab` with `t`, instantiating it
    /// if necessary. `None` on the boundary.
    fn neighbor(&mut self, t: Eid, a: Vid, b: Vid) -> Option<Eid> {
        let el = &self.elems[t as usize];
        let gen = el.gen;
        let local = (0..3).find(|&i| {
            let (p, q) = (el.v[(i + 1) % 3], el.v[(i + 2) % 3]);
            (p == a && q == b) || (p == b && q == a)
        })?;
        if el.bnd[local] {
            return None;
        }
        let lookup = |m: &Mesh| {
            m.edges.get(&edge_key(gen, a, b)).and_then(|s| {
                if s[0] == t {
                    (s[1] != NONE).then_some(s[1])
                } else {
                    Some(s[0])
                }
            })
        };
        if let Some(n) = lookup(self) {
            return Some(n);
        }
        // The edge is an undivided edge of the parent; refine the parent's
        // neighbour across it.
        let q = self.elems[t as usize].parent.expect("interior root edges are registered twice");
        let n = self.neighbor(q, a, b)?;
        self.bisect(n);
        lookup(self)
    }

    /// Bisects `t` together with its neighbour across the refinement edge.
    pub fn bisect(&mut self, t: Eid) {
        if self.elems[t as usize].children.is_some() {
            return;
        }
        let [v0, v1, _] = self.elems[t as usize].v;
        let partner = self.neighbor(t, v0, v1);
        if self.elems[t as usize].children.is_some() {
            return;
        }
        let gen = self.elems[t as usize].gen + 1;
        let (p0, p1) = (&self.verts[v0 as usize], &self.verts[v1 as usize]);
        let (x, y) = (0.5 * (p0.x + p1.x), 0.5 * (p0.y + p1.y));
        let m = self.verts.len() as Vid;
        let mut parents = [self.elems[t as usize].v[2], NONE];
        if let Some(p) = partner {
            parents[1] = self.elems[p as usize].v[2];
        }
        if parents[1] != NONE && parents[1] < parents[0] {
            parents.swap(0, 1);
        }
        self.verts.push(Vertex {
            x,
            y,
            gen,
            parents,
            godparents: Some(if v0 < v1 { [v0, v1] } else { [v1, v0] }),
            boundary: partner.is_none(),
            patch: Vec::new(),
            hat_integral: 0.0,
        });
        for e in std::iter::once(t).chain(partner) {
            let el = self.elems[e as usize].clone();
            let [w0, w1, w2] = el.v;
            // Child A = (w0, w2, m), child B = (w2, w1, m).
            let a = self.push_element([w0, w2, m], gen, Some(e), [false, el.bnd[2], el.bnd[1]]);
            let b = self.push_element([w2, w1, m], gen, Some(e), [el.bnd[2], false, el.bnd[0]]);
            let el = &mut self.elems[e as usize];
            el.children = Some([a, b]);
            el.midpoint = Some(m);
            self.verts[m as usize].patch.extend([a, b]);
        }
        self.verts[m as usize].hat_integral = self.patch_area(m) / 3.0;
        ops::add(1);
    }

    /// Children of `v` in the vertex mother tree (materialized on demand).
    pub fn vertex_children(&mut self, v: Vid) -> Vec<Vid> {
        let patch = self.verts[v as usize].patch.clone();
        let mut out: Vec<Vid> = patch
            .into_iter()
            .map(|e| {
                self.bisect(e);
                self.elems[e as usize].midpoint.unwrap()
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Elements of generation `gen(v) - 1` whose bisection created `v`.
    pub fn creators(&self, v: Vid) -> Vec<Eid> {
        let mut out: Vec<Eid> =
            self.verts[v as usize].patch.iter().filter_map(|&e| self.elems[e as usize].parent).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Vertex set of `g` uniform refinements: every vertex up to generation `g`.
    pub fn uniform_vertices(&mut self, g: u32) -> Vec<Vid> {
        let mut set: Vec<Vid> = self.root_verts.clone();
        let mut frontier = set.clone();
        for _ in 0..g {
            let mut next = Vec::new();
            for &v in &frontier {
                next.extend(self.vertex_children(v));
            }
            next.sort_unstable();
            next.dedup();
            set.extend(&next);
            frontier = next;
        }
        set.sort_unstable();
        set.dedup();
        set
    }

    /// Plain-text dump: `v x y gen` lines followed by `t i j k gen` lines of
    /// the triangulation with vertex set `verts` (newest vertex last).
    pub fn dump(&self, verts: &[Vid], marks: &mut Marks) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        marks.load(self, verts);
        for &v in verts {
            let p = &self.verts[v as usize];
            let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.gen);
        }
        for e in triangulation(self, marks) {
            let el = &self.elems[e as usize];
            let [i, j, k] = el.v.map(|v| marks.get(v).unwrap());
            let _ = writeln!(s, "t {i} {j} {k} {}", el.gen);
        }
        s
    }
}

/// The vertex mother tree as an [`Axis`]; keys are vertex ids.
impl Axis for Mesh {
    fn id(&self) -> AxisId {
        AxisId::Space(self.uid)
    }

    fn roots(&self) -> Vec<u64> {
        self.root_verts.iter().map(|&v| v as u64).collect()
    }

    fn level(&self, key: u64) -> u32 {
        self.verts[key as usize].gen
    }

    fn parents(&self, key: u64, out: &mut Vec<u64>) {
        out.extend(self.verts[key as usize].parents().map(|p| p as u64));
    }

    fn children(&mut self, key: u64, out: &mut Vec<u64>) {
        out.extend(self.vertex_children(key as Vid).into_iter().map(|c| c as u64));
    }
}

/// Scratch map from vertex ids to local slots, reset in O(1) by an epoch.
#[derive(Debug, Default, Clone)]
pub struct Marks {
    stamp: Vec<u32>,
    slot: Vec<u32>,
    epoch: u32,
}

impl Marks {
    pub fn new() -> Self {
        Marks::default()
    }

    pub fn clear(&mut self, n: usize) {
        if self.stamp.len() < n {
            self.stamp.resize(n, 0);
            self.slot.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
    }

    #[inline]
    pub fn set(&mut self, v: Vid, slot: u32) {
        self.stamp[v as usize] = self.epoch;
        self.slot[v as usize] = slot;
    }

    #[inline]
    pub fn get(&self, v: Vid) -> Option<u32> {
        let i = v as usize;
        (i < self.stamp.len() && self.stamp[i] == self.epoch).then(|| self.slot[i])
    }

    /// Marks `verts` with their positions.
    pub fn load(&mut self, mesh: &Mesh, verts: &[Vid]) {
        self.clear(mesh.num_vertices());
        for (i, &v) in verts.iter().enumerate() {
            self.set(v, i as u32);
        }
        ops::add(verts.len() as u64);
    }
}

/// Leaves of the element forest below the marked vertex set: an element is
/// refined exactly when its midpoint is marked.
pub fn triangulation(mesh: &Mesh, marks: &Marks) -> Vec<Eid> {
    let mut out = Vec::new();
    let mut stack: Vec<Eid> = mesh.roots.iter().rev().copied().collect();
    while let Some(e) = stack.pop() {
        ops::add(1);
        let el = &mesh.elems[e as usize];
        match (el.midpoint, el.children) {
            (Some(m), Some([a, b])) if marks.get(m).is_some() => {
                stack.push(b);
                stack.push(a);
            }
            _ => out.push(e),
        }
    }
    out
}

/// Smallest parent-closed superset of `verts` (always containing the roots).
pub fn nvb_closure(mesh: &Mesh, verts: &[Vid], marks: &mut Marks) -> Vec<Vid> {
    marks.clear(mesh.num_vertices());
    let mut out: Vec<Vid> = Vec::with_capacity(verts.len());
    let mut stack: Vec<Vid> = verts.iter().copied().chain(mesh.root_verts.iter().copied()).collect();
    while let Some(v) = stack.pop() {
        if marks.get(v).is_some() {
            continue;
        }
        marks.set(v, 0);
        out.push(v);
        stack.extend(mesh.verts[v as usize].parents());
    }
    out.sort_unstable();
    out
}

/// Whether `verts` (sorted) is closed under parents and contains the roots.
pub fn is_vertex_tree(mesh: &Mesh, verts: &[Vid], marks: &mut Marks) -> bool {
    marks.load(mesh, verts);
    mesh.root_verts.iter().all(|&r| marks.get(r).is_some())
        && verts.iter().all(|&v| mesh.verts[v as usize].parents().all(|p| marks.get(p).is_some()))
}

/// Hierarchical to nodal coefficients, in place (`verts` sorted, marks
/// loaded with positions). Boundary entries are forced to zero.
pub fn hb_to_ss(mesh: &Mesh, verts: &[Vid], marks: &Marks, x: &mut [f64]) {
    for (i, &v) in verts.iter().enumerate() {
        let p = &mesh.verts[v as usize];
        if p.boundary {
            x[i] = 0.0;
            continue;
        }
        if let Some([a, b]) = p.godparents {
            x[i] += 0.5 * (x[marks.get(a).unwrap() as usize] + x[marks.get(b).unwrap() as usize]);
        }
    }
    ops::add(verts.len() as u64);
}

/// As [`hb_to_ss`] but keeping boundary values (for interpolants of data
/// that need not vanish on the boundary).
pub fn hb_to_ss_unmasked(mesh: &Mesh, verts: &[Vid], marks: &Marks, x: &mut [f64]) {
    for (i, &v) in verts.iter().enumerate() {
        if let Some([a, b]) = mesh.verts[v as usize].godparents {
            x[i] += 0.5 * (x[marks.get(a).unwrap() as usize] + x[marks.get(b).unwrap() as usize]);
        }
    }
    ops::add(verts.len() as u64);
}

/// Transpose of [`hb_to_ss`]: nodal functionals to hierarchical ones.
pub fn hb_to_ss_transpose(mesh: &Mesh, verts: &[Vid], marks: &Marks, y: &mut [f64]) {
    for (i, &v) in verts.iter().enumerate().rev() {
        let p = &mesh.verts[v as usize];
        if p.boundary {
            y[i] = 0.0;
            continue;
        }
        if let Some([a, b]) = p.godparents {
            let h = 0.5 * y[i];
            for g in [a, b] {
                if !mesh.verts[g as usize].boundary {
                    y[marks.get(g).unwrap() as usize] += h;
                }
            }
        }
    }
    ops::add(verts.len() as u64);
}

/// Inverse of [`hb_to_ss`].
pub fn ss_to_hb(mesh: &Mesh, verts: &[Vid], marks: &Marks, x: &mut [f64]) {
    for (i, &v) in verts.iter().enumerate().rev() {
        let p = &mesh.verts[v as usize];
        if p.boundary {
            x[i] = 0.0;
            continue;
        }
        if let Some([a, b]) = p.godparents {
            x[i] -= 0.5 * (x[marks.get(a).unwrap() as usize] + x[marks.get(b).unwrap() as usize]);
        }
    }
    ops::add(verts.len() as u64);
}

/// Inverse of [`hb_to_ss_transpose`].
pub fn hb_to_ss_inverse_transpose(mesh: &Mesh, verts: &[Vid], marks: &Marks, y: &mut [f64]) {
    for (i, &v) in verts.iter().enumerate() {
        let p = &mesh.verts[v as usize];
        if p.boundary {
            y[i] = 0.0;
            continue;
        }
        if let Some([a, b]) = p.godparents {
            let h = 0.5 * y[i];
            for g in [a, b] {
                if !mesh.verts[g as usize].boundary {
                    y[marks.get(g).unwrap() as usize] -= h;
                }
            }
        }
    }
    ops::add(verts.len() as u64);
}

/// Spatial bilinear forms: `stiff·∫∇u·∇v + mass·∫uv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceForm {
    pub stiff: f64,
    pub mass: f64,
}

impl SpaceForm {
    pub const STIFFNESS: SpaceForm = SpaceForm { stiff: 1.0, mass: 0.0 };
    pub const MASS: SpaceForm = SpaceForm { stiff: 0.0, mass: 1.0 };

    pub fn shifted(shift: f64) -> Self {
        SpaceForm { stiff: 1.0, mass: shift }
    }

    /// Element matrix on the triangle with the given corners.
    pub fn element_matrix(self, p: [(f64, f64); 3]) -> [[f64; 3]; 3] {
        let edge = |i: usize| {
            let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
            (b.0 - a.0, b.1 - a.1)
        };
        let e = [edge(0), edge(1), edge(2)];
        let det = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
        let area = 0.5 * det.abs();
        let mut k = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let stiff = (e[i].0 * e[j].0 + e[i].1 * e[j].1) / (4.0 * area);
                let mass = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                k[i][j] = self.stiff * stiff + self.mass * mass;
            }
        }
        k
    }
}

/// Corners of an element.
pub fn corners(mesh: &Mesh, e: Eid) -> [(f64, f64); 3] {
    mesh.elems[e as usize].v.map(|v| {
        let p = &mesh.verts[v as usize];
        (p.x, p.y)
    })
}

/// `y = (form Φ)(Φ) x` on the triangulation `elems` with nodal values `x`
/// aligned with the marked vertex slots. Boundary rows and columns vanish.
pub fn apply_form_ss(mesh: &Mesh, elems: &[Eid], marks: &Marks, form: SpaceForm, x: &[f64], y: &mut [f64]) {
    apply_form_ss_masked(mesh, elems, marks, form, [true, true], x, y);
}

/// As [`apply_form_ss`], with `mask[0]` (rows) and `mask[1]` (columns)
/// choosing which sides drop boundary vertices.
pub fn apply_form_ss_masked(
    mesh: &Mesh,
    elems: &[Eid],
    marks: &Marks,
    form: SpaceForm,
    mask: [bool; 2],
    x: &[f64],
    y: &mut [f64],
) {
    y.iter_mut().for_each(|v| *v = 0.0);
    for &e in elems {
        let el = &mesh.elems[e as usize];
        let loc = el.v.map(|v| marks.get(v).unwrap() as usize);
        let bnd = el.v.map(|v| mesh.verts[v as usize].boundary);
        let k = form.element_matrix(corners(mesh, e));
        for i in 0..3 {
            if mask[0] && bnd[i] {
                continue;
            }
            let mut s = 0.0;
            for j in 0..3 {
                if !(mask[1] && bnd[j]) {
                    s += k[i][j] * x[loc[j]];
                }
            }
            y[loc[i]] += s;
        }
    }
    ops::add(9 * elems.len() as u64);
}

/// Coefficient transform for the modified hierarchical basis
/// `ψ̂_ν = ψ_ν − (Σ_p ∫ψ_ν/∫ψ_p ψ_p)/#P` over the interior parents `P`.
/// Maps `ψ̂` coefficients to `ψ` coefficients, in place.
pub fn modified_to_hb(mesh: &Mesh, verts: &[Vid], marks: &Marks, x: &mut [f64]) {
    let src = x.to_vec();
    for (i, &v) in verts.iter().enumerate() {
        for_each_modifier(mesh, v, |p, w| {
            let j = marks.get(p).unwrap() as usize;
            x[j] -= w * src[i];
        });
    }
    ops::add(verts.len() as u64);
}

/// Inverse of [`modified_to_hb`].
pub fn hb_to_modified(mesh: &Mesh, verts: &[Vid], marks: &Marks, x: &mut [f64]) {
    for (i, &v) in verts.iter().enumerate().rev() {
        let xi = x[i];
        for_each_modifier(mesh, v, |p, w| {
            let j = marks.get(p).unwrap() as usize;
            x[j] += w * xi;
        });
    }
    ops::add(verts.len() as u64);
}

/// Transpose of [`modified_to_hb`]: functionals on `ψ` to functionals on `ψ̂`.
pub fn modified_transpose(mesh: &Mesh, verts: &[Vid], marks: &Marks, y: &mut [f64]) {
    let src = y.to_vec();
    for (i, &v) in verts.iter().enumerate() {
        for_each_modifier(mesh, v, |p, w| {
            y[i] -= w * src[marks.get(p).unwrap() as usize];
        });
    }
    ops::add(verts.len() as u64);
}

/// Calls `f(p, ∫ψ_ν/∫ψ_p / #P)` for every interior parent `p` of `v`.
#[inline]
pub fn for_each_modifier(mesh: &Mesh, v: Vid, mut f: impl FnMut(Vid, f64)) {
    let vert = &mesh.verts[v as usize];
    if vert.boundary || vert.gen == 0 {
        return;
    }
    let count = vert.parents().filter(|&p| !mesh.verts[p as usize].boundary).count();
    if count == 0 {
        return;
    }
    for p in vert.parents() {
        let pv = &mesh.verts[p as usize];
        if !pv.boundary {
            f(p, vert.hat_integral / pv.hat_integral / count as f64);
        }
    }
}

/// Multiplicative V-cycle on a locally refined mesh; smoothing on level `k`
/// touches only the new vertices of generation `k` and their godparents.
#[derive(Debug, Clone)]
pub struct Multigrid {
    n: usize,
    levels: Vec<MgLevel>,
    coarse_idx: Vec<usize>,
    coarse_chol: Vec<Vec<f64>>,
    form: SpaceForm,
    interior: Vec<bool>,
    pos: Vec<(f64, f64)>,
    /// Local corners of the finest triangulation.
    corners: Vec<[u32; 3]>,
}

/// Level `k`: new vertices with their godparents, and the level-`k` matrix
/// rows (off-diagonal part in CSR form) of the vertices smoothed there.
#[derive(Debug, Clone, Default)]
struct MgLevel {
    new: Vec<[u32; 3]>,
    smooth: Vec<u32>,
    row_start: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl MgLevel {
    #[inline]
    fn row(&self, s: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_start[s] as usize, self.row_start[s + 1] as usize);
        self.cols[a..b].iter().zip(&self.vals[a..b]).map(|(&j, &v)| (j as usize, v))
    }
}

impl Multigrid {
    /// Hierarchy for the triangulation with vertex set `verts` (sorted).
    pub fn new(mesh: &Mesh, verts: &[Vid], form: SpaceForm, marks: &mut Marks) -> Result<Self, SpaceError> {
        marks.load(mesh, verts);
        let n = verts.len();
        let interior: Vec<bool> = verts.iter().map(|&v| !mesh.verts[v as usize].boundary).collect();
        let top = verts.iter().map(|&v| mesh.verts[v as usize].gen).max().unwrap_or(0) as usize;
        let mut by_gen: Vec<Vec<usize>> = vec![Vec::new(); top + 1];
        for (i, &v) in verts.iter().enumerate() {
            by_gen[mesh.verts[v as usize].gen as usize].push(i);
        }
        // Current patches of the level-k triangulations.
        let mut patch: Vec<Vec<[usize; 3]>> = vec![Vec::new(); n];
        let mut cur: Vec<[usize; 3]> = Vec::new();
        let add = |patch: &mut Vec<Vec<[usize; 3]>>, t: [usize; 3]| {
            for &w in &t {
                patch[w].push(t);
            }
        };
        let remove = |patch: &mut Vec<Vec<[usize; 3]>>, t: [usize; 3]| {
            for &w in &t {
                let p = &mut patch[w];
                if let Some(pos) = p.iter().position(|x| *x == t) {
                    p.swap_remove(pos);
                }
            }
        };
        let loc = |v: Vid| marks.get(v).ok_or(SpaceError::UnknownVertex(v)).map(|s| s as usize);
        let mut pos = vec![(0.0, 0.0); n];
        for (i, &v) in verts.iter().enumerate() {
            pos[i] = (mesh.verts[v as usize].x, mesh.verts[v as usize].y);
        }
        for &e in &mesh.roots {
            let t = mesh.elems[e as usize].v;
            let t = [loc(t[0])?, loc(t[1])?, loc(t[2])?];
            add(&mut patch, t);
            cur.push(t);
        }
        let row_of = |patch: &Vec<Vec<[usize; 3]>>, i: usize| -> (Vec<(usize, f64)>, f64) {
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(8);
            let mut diag = 0.0;
            for t in &patch[i] {
                let k = form.element_matrix([pos[t[0]], pos[t[1]], pos[t[2]]]);
                let a = t.iter().position(|&w| w == i).unwrap();
                for b in 0..3 {
                    let j = t[b];
                    if j == i {
                        diag += k[a][b];
                    } else if interior[j] {
                        match row.iter_mut().find(|r| r.0 == j) {
                            Some(r) => r.1 += k[a][b],
                            None => row.push((j, k[a][b])),
                        }
                    }
                }
            }
            (row, diag)
        };

        let mut levels = vec![MgLevel::default()];
        for gen_k in by_gen.iter().skip(1) {
            let mut lvl = MgLevel { row_start: vec![0], ..MgLevel::default() };
            for &i in gen_k {
                let v = verts[i];
                let [a, b] = mesh.verts[v as usize].godparents.expect("non-root vertex");
                let (a, b) = (loc(a)?, loc(b)?);
                lvl.new.push([i as u32, a as u32, b as u32]);
                for c in mesh.creators(v) {
                    let t = mesh.elems[c as usize].v;
                    let t = [loc(t[0])?, loc(t[1])?, loc(t[2])?];
                    remove(&mut patch, t);
                    add(&mut patch, [t[0], t[2], i]);
                    add(&mut patch, [t[2], t[1], i]);
                }
            }
            let mut smooth: Vec<u32> = lvl.new.iter().flatten().copied().filter(|&i| interior[i as usize]).collect();
            smooth.sort_unstable();
            smooth.dedup();
            for &i in &smooth {
                let (row, d) = row_of(&patch, i as usize);
                for (j, a) in row {
                    lvl.cols.push(j as u32);
                    lvl.vals.push(a);
                }
                lvl.row_start.push(lvl.cols.len() as u32);
                lvl.diag.push(d);
            }
            lvl.smooth = smooth;
            for v in [&mut lvl.cols, &mut lvl.row_start, &mut lvl.smooth] {
                v.shrink_to_fit();
            }
            lvl.vals.shrink_to_fit();
            lvl.diag.shrink_to_fit();
            lvl.new.shrink_to_fit();
            ops::add(4 * lvl.new.len() as u64);
            levels.push(lvl);
        }

        // Dense Cholesky on the initial triangulation.
        let coarse_idx: Vec<usize> = by_gen[0].iter().copied().filter(|&i| interior[i]).collect();
        let nc = coarse_idx.len();
        let mut a0 = vec![vec![0.0; nc]; nc];
        for &e in &mesh.roots {
            let t = mesh.elems[e as usize].v.map(|v| marks.get(v).unwrap() as usize);
            let k = form.element_matrix([pos[t[0]], pos[t[1]], pos[t[2]]]);
            for a in 0..3 {
                for b in 0..3 {
                    if let (Some(i), Some(j)) =
                        (coarse_idx.iter().position(|&c| c == t[a]), coarse_idx.iter().position(|&c| c == t[b]))
                    {
                        a0[i][j] += k[a][b];
                    }
                }
            }
        }
        let coarse_chol = cholesky(&a0).ok_or(SpaceError::SingularCoarse)?;

        let corners = triangulation(mesh, marks)
            .iter()
            .map(|&e| mesh.elems[e as usize].v.map(|v| marks.get(v).unwrap()))
            .collect();
        Ok(Multigrid { n, levels, coarse_idx, coarse_chol, form, interior, pos, corners })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn form(&self) -> SpaceForm {
        self.form
    }

    /// `y = A x` on the finest triangulation (nodal coefficients).
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.corners {
            let t = t.map(|i| i as usize);
            let k = self.form.element_matrix(t.map(|i| self.pos[i]));
            for a in 0..3 {
                if !self.interior[t[a]] {
                    continue;
                }
                let mut s = 0.0;
                for b in 0..3 {
                    if self.interior[t[b]] {
                        s += k[a][b] * x[t[b]];
                    }
                }
                y[t[a]] += s;
            }
        }
        ops::add(9 * self.corners.len() as u64);
    }

    /// One V-cycle applied to the nodal residual `r`.
    pub fn vcycle(&self, rhs: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = rhs.iter().zip(&self.interior).map(|(&v, &i)| if i { v } else { 0.0 }).collect();
        let mut saved: Vec<Vec<f64>> = Vec::with_capacity(self.levels.len());
        let mut corr: Vec<Vec<f64>> = Vec::with_capacity(self.levels.len());
        for lvl in self.levels.iter().skip(1).rev() {
            saved.push(lvl.smooth.iter().map(|&i| r[i as usize]).collect());
            let mut e = Vec::with_capacity(lvl.smooth.len());
            for (s, &i) in lvl.smooth.iter().enumerate() {
                let i = i as usize;
                let d = r[i] / lvl.diag[s];
                r[i] = 0.0;
                for (j, a) in lvl.row(s) {
                    r[j] -= d * a;
                }
                e.push(d);
            }
            corr.push(e);
            for &[i, a, b] in &lvl.new {
                let h = 0.5 * r[i as usize];
                r[a as usize] += h;
                r[b as usize] += h;
            }
            ops::add((lvl.smooth.len() * 8 + lvl.new.len()) as u64);
        }
        let mut u = vec![0.0; self.n];
        let rc: Vec<f64> = self.coarse_idx.iter().map(|&i| r[i]).collect();
        let uc = chol_solve(&self.coarse_chol, &rc);
        for (&i, v) in self.coarse_idx.iter().zip(uc) {
            u[i] = v;
        }
        for lvl in self.levels.iter().skip(1) {
            let r0 = saved.pop().unwrap();
            let e = corr.pop().unwrap();
            for &[i, a, b] in &lvl.new {
                let (i, a, b) = (i as usize, a as usize, b as usize);
                u[i] = if self.interior[i] { 0.5 * (u[a] + u[b]) } else { 0.0 };
            }
            for (&i, &d) in lvl.smooth.iter().zip(&e) {
                u[i as usize] += d;
            }
            for s in (0..lvl.smooth.len()).rev() {
                let i = lvl.smooth[s] as usize;
                let mut res = r0[s] - lvl.diag[s] * u[i];
                for (j, a) in lvl.row(s) {
                    res -= a * u[j];
                }
                u[i] += res / lvl.diag[s];
            }
            ops::add((lvl.smooth.len() * 8 + lvl.new.len()) as u64);
        }
        u
    }

    /// `cycles` V-cycles for `A u = f` from a zero start.
    pub fn solve(&self, f: &[f64], cycles: usize) -> Vec<f64> {
        let mut u = self.vcycle(f);
        let mut au = vec![0.0; self.n];
        for _ in 1..cycles {
            self.apply(&u, &mut au);
            let r: Vec<f64> = f.iter().zip(&au).map(|(a, b)| a - b).collect();
            let du = self.vcycle(&r);
            u.iter_mut().zip(du).for_each(|(a, b)| *a += b);
        }
        u
    }
}

/// Lower Cholesky factor; `None` when not positive definite.
pub fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s = a[i][j] - l[i][..j].iter().zip(&l[j][..j]).map(|(x, y)| x * y).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

pub fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i][k] * y[k];
        }
        y[i] /= l[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k][i] * y[k];
        }
        y[i] /= l[i][i];
    }
    y
}
