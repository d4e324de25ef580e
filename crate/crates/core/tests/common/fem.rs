//! Dense finite element oracles built from point evaluation and gradients.

use std::collections::HashMap;

use stheat::space::*;

/// Barycentric coordinate of corner `i` of `e` at `(x, y)`.
pub fn barycentric(mesh: &Mesh, e: Eid, x: f64, y: f64) -> [f64; 3] {
    let p = corners(mesh, e);
    let det = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
    let l1 = ((x - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (y - p[0].1)) / det;
    let l2 = ((p[1].0 - p[0].0) * (y - p[0].1) - (x - p[0].0) * (p[1].1 - p[0].1)) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Hierarchical hat of `v` evaluated at a point, from its generation patch.
pub fn hat_at(mesh: &Mesh, v: Vid, x: f64, y: f64) -> f64 {
    for &e in &mesh.vertex(v).patch {
        let b = barycentric(mesh, e, x, y);
        if b.iter().all(|&c| c > -1e-12) {
            let i = mesh.element(e).v.iter().position(|&w| w == v).unwrap();
            return b[i];
        }
    }
    0.0
}

/// Dense `T[i][j] = ψ_j(x_i)` over interior vertices.
pub fn dense_hb(mesh: &Mesh, verts: &[Vid]) -> Vec<Vec<f64>> {
    verts
        .iter()
        .map(|&i| {
            let p = mesh.vertex(i);
            verts
                .iter()
                .map(|&j| if p.boundary || mesh.vertex(j).boundary { 0.0 } else { hat_at(mesh, j, p.x, p.y) })
                .collect()
        })
        .collect()
}

/// Dense nodal matrix from gradients of barycentric coordinates.
pub fn dense_nodal(mesh: &Mesh, verts: &[Vid], elems: &[Eid], stiff: f64, mass: f64) -> Vec<Vec<f64>> {
    let loc: HashMap<Vid, usize> = verts.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let n = verts.len();
    let mut a = vec![vec![0.0; n]; n];
    for &e in elems {
        let p = corners(mesh, e);
        let jac = [[p[1].0 - p[0].0, p[2].0 - p[0].0], [p[1].1 - p[0].1, p[2].1 - p[0].1]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let area = det.abs() / 2.0;
        // Rows of J^{-T} applied to reference gradients (-1,-1), (1,0), (0,1).
        let inv = [[jac[1][1] / det, -jac[0][1] / det], [-jac[1][0] / det, jac[0][0] / det]];
        let rg = [(-1.0, -1.0), (1.0, 0.0), (0.0, 1.0)];
        let g: Vec<(f64, f64)> =
            rg.iter().map(|&(a, b)| (inv[0][0] * a + inv[1][0] * b, inv[0][1] * a + inv[1][1] * b)).collect();
        let v = mesh.element(e).v;
        for i in 0..3 {
            for j in 0..3 {
                if mesh.vertex(v[i]).boundary || mesh.vertex(v[j]).boundary {
                    continue;
                }
                let m = if i == j { area / 6.0 } else { area / 12.0 };
                a[loc[&v[i]]][loc[&v[j]]] += stiff * area * (g[i].0 * g[j].0 + g[i].1 * g[j].1) + mass * m;
            }
        }
    }
    a
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = b[0].len();
    a.iter().map(|r| (0..n).map(|j| r.iter().zip(b).map(|(x, row)| x * row[j]).sum()).collect()).collect()
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}
