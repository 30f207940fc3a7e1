//! Procedural meshes used as fixtures by tests, the self-test and examples.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Point2, Point3, Vector3};

use crate::mesh::{grid_triangles, TriMesh};

/// Closed unit cube `[0,1]^3` with outward-facing triangles.
pub fn unit_cube() -> TriMesh {
    let v: Vec<Point3<f64>> = (0..8)
        .map(|i| Point3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
        .collect();
    let quads = [
        [0, 2, 3, 1], // z = 0
        [4, 5, 7, 6], // z = 1
        [0, 1, 5, 4], // y = 0
        [2, 6, 7, 3], // y = 1
        [0, 4, 6, 2], // x = 0
        [1, 3, 7, 5], // x = 1
    ];
    let tris = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    TriMesh::new(v, tris).expect("valid cube")
}

/// Unit-radius icosphere centered at the origin, outward oriented.
pub fn icosphere(subdivisions: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Vector3::new(c[0], c[1], c[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh::new(verts.into_iter().map(Point3::from).collect(), faces).expect("valid icosphere")
}

/// Closed torus around the z axis with tube radius `minor`.
pub fn torus(major: f64, minor: f64, segments: usize, sides: usize) -> TriMesh {
    let mut verts = Vec::with_capacity(segments * sides);
    for i in 0..segments {
        let u = 2.0 * PI * i as f64 / segments as f64;
        for j in 0..sides {
            let v = 2.0 * PI * j as f64 / sides as f64;
            let r = major + minor * v.cos();
            verts.push(Point3::new(r * u.cos(), r * u.sin(), minor * v.sin()));
        }
    }
    let idx = |i: usize, j: usize| (i % segments) * sides + (j % sides);
    let mut tris = Vec::with_capacity(2 * segments * sides);
    for i in 0..segments {
        for j in 0..sides {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            tris.push([a, b, c]);
            tris.push([a, c, d]);
        }
    }
    TriMesh::new(verts, tris).expect("valid torus")
}

/// Open cylinder patch of radius `radius` around the z axis covering
/// `angle` radians and height `height`, with UVs spanning `[0,1]^2` and
/// analytic outward normals.
pub fn cylinder_patch(radius: f64, angle: f64, height: f64, nu: usize, nv: usize) -> TriMesh {
    let mut verts = Vec::new();
    let mut uvs = Vec::new();
    let mut normals = Vec::new();
    for j in 0..=nv {
        for i in 0..=nu {
            let (u, v) = (i as f64 / nu as f64, j as f64 / nv as f64);
            let a = u * angle;
            verts.push(Point3::new(radius * a.cos(), radius * a.sin(), v * height));
            uvs.push(Point2::new(u, v));
            normals.push(Vector3::new(a.cos(), a.sin(), 0.0));
        }
    }
    // u runs counter-clockwise around +z and v runs up, so (u, v, n) is right-handed
    TriMesh::new(verts, grid_triangles(nu + 1, nv + 1))
        .and_then(|m| m.with_uvs(uvs))
        .and_then(|m| m.with_normals(normals))
        .expect("valid cylinder patch")
}

/// Height field `z = f(x, y)` over `[0,1]^2` sampled on a `cells x cells` grid.
pub fn height_field(cells: usize, f: impl Fn(f64, f64) -> f64) -> TriMesh {
    let n = cells + 1;
    let mut verts = Vec::with_capacity(n * n);
    let mut uvs = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (i as f64 / cells as f64, j as f64 / cells as f64);
            verts.push(Point3::new(x, y, f(x, y)));
            uvs.push(Point2::new(x, y));
        }
    }
    TriMesh::new(verts, grid_triangles(n, n))
        .and_then(|m| m.with_uvs(uvs))
        .expect("valid height field")
}

/// Polar disk patch of radius `radius` centered at `(cx, cy)` with
/// `rings` concentric rings of `segments` vertices, lifted by `height(r)`.
/// Triangles are counter-clockwise seen from +z, so the boundary loop runs
/// counter-clockwise.
pub fn disk_patch(
    center: Point2<f64>,
    radius: f64,
    rings: usize,
    segments: usize,
    height: impl Fn(f64) -> f64,
) -> TriMesh {
    let mut verts = vec![Point3::new(center.x, center.y, height(0.0))];
    for k in 1..=rings {
        let r = radius * k as f64 / rings as f64;
        for s in 0..segments {
            let a = 2.0 * PI * s as f64 / segments as f64;
            verts.push(Point3::new(center.x + r * a.cos(), center.y + r * a.sin(), height(r)));
        }
    }
    let ring = |k: usize, s: usize| 1 + (k - 1) * segments + s % segments;
    let mut tris = Vec::new();
    for s in 0..segments {
        tris.push([0, ring(1, s), ring(1, s + 1)]);
    }
    for k in 1..rings {
        for s in 0..segments {
            let (a, b) = (ring(k, s), ring(k, s + 1));
            let (c, d) = (ring(k + 1, s + 1), ring(k + 1, s));
            tris.push([a, d, c]);
            tris.push([a, c, b]);
        }
    }
    TriMesh::new(verts, tris).expect("valid disk patch")
}

/// Gaussian bump `0.2 exp(-50 ((u - 0.5)^2 + (v - 0.5)^2))` used by the fitting fixtures.
pub fn gaussian_bump(u: f64, v: f64) -> f64 {
    0.2 * (-50.0 * ((u - 0.5).powi(2) + (v - 0.5).powi(2))).exp()
}

/// Analytic unit normal of the Gaussian bump surface.
pub fn gaussian_bump_normal(u: f64, v: f64) -> Vector3<f64> {
    let h = gaussian_bump(u, v);
    let dx = -100.0 * (u - 0.5) * h;
    let dy = -100.0 * (v - 0.5) * h;
    Vector3::new(-dx, -dy, 1.0).normalize()
}
