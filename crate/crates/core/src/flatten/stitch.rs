use std::collections::VecDeque;

use nalgebra::{Point2, Point3, Vector2};

use super::{FlattenError, Plane};
use crate::mesh::{boundary_loops, grid_triangles, laplacian_smooth, select_near_boundary, BoundaryLoop, TriMesh};

/// Boundary vertices may sit this far off the tile plane.
const COPLANAR_TOLERANCE: f64 = 1e-6;
/// Grid cells are grown by this much before the polygon overlap test.
const CELL_SLACK: f64 = 1e-9;

/// Similarity from model space into the tile frame: the plane's `(t, b, n)`
/// become `(x, y, z)`, scaled by `scale`, with `center` sent to `(0.5, 0.5, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileFrame {
    pub plane: Plane,
    pub center: Point3<f64>,
    pub scale: f64,
}

impl TileFrame {
    /// Frame that centers the bounding box of `boundary` (in plane
    /// coordinates) on the tile and scales its larger side to `footprint`.
    pub fn fit(plane: &Plane, boundary: &[Point3<f64>], footprint: f64) -> Result<Self, FlattenError> {
        if !(footprint > 0.0 && footprint <= 1.0) {
            return Err(FlattenError::InvalidParameter(format!("footprint {footprint} outside (0, 1]")));
        }
        let anchor = Point3::from(plane.normal * plane.offset);
        let (mut lo, mut hi) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
        for p in boundary {
            let d = p - anchor;
            let uv = Vector2::new(d.dot(&plane.tangent), d.dot(&plane.bitangent));
            lo = lo.inf(&uv);
            hi = hi.sup(&uv);
        }
        let extent = (hi - lo).max();
        if !(extent > 0.0) {
            return Err(FlattenError::RankDeficient);
        }
        let mid = (lo + hi) * 0.5;
        Ok(Self {
            plane: *plane,
            center: anchor + plane.tangent * mid.x + plane.bitangent * mid.y,
            scale: footprint / extent,
        })
    }

    pub fn to_tile(&self, p: &Point3<f64>) -> Point3<f64> {
        let d = (p - self.center) * self.scale;
        Point3::new(
            0.5 + d.dot(&self.plane.tangent),
            0.5 + d.dot(&self.plane.bitangent),
            d.dot(&self.plane.normal),
        )
    }

    pub fn from_tile(&self, p: &Point3<f64>) -> Point3<f64> {
        let d = self.plane.tangent * (p.x - 0.5) + self.plane.bitangent * (p.y - 0.5) + self.plane.normal * p.z;
        self.center + d / self.scale
    }
}

/// Result of placing a part on a square tile.
#[derive(Debug, Clone)]
pub struct Stitched {
    pub mesh: TriMesh,
    /// Part boundary, in output vertex indices.
    pub part_loop: Vec<usize>,
    /// Boundary of the hole cut into the grid, in output vertex indices.
    pub hole_loop: Vec<usize>,
    pub annulus_triangles: usize,
    /// Index of the first part vertex in the output.
    pub part_offset: usize,
}

/// Places a flattened part (tile frame, boundary on `z = 0`) onto a regular
/// `tile_resolution x tile_resolution` grid over the unit square.
///
/// Grid cells whose closed square meets the part's boundary polygon are
/// removed. Cells pinched diagonally against the removed set and kept cells
/// enclosed by it are removed as well, so that the hole is bounded by one
/// simple loop. That loop is joined to the part's boundary by a band of
/// triangles built by greedy shortest-diagonal zippering.
pub fn stitch_to_square(part: &TriMesh, tile_resolution: usize, margin: f64) -> Result<Stitched, FlattenError> {
    if tile_resolution < 3 {
        return Err(FlattenError::InvalidParameter(format!("tile resolution {tile_resolution} < 3")));
    }
    if !(0.0..0.5).contains(&margin) {
        return Err(FlattenError::InvalidParameter(format!("margin {margin} outside [0, 0.5)")));
    }
    let mut loops = boundary_loops(part)?;
    if loops.len() != 1 {
        return Err(FlattenError::BoundaryCount(loops.len()));
    }
    let mut part_loop = loops.remove(0).vertices;
    for &v in &part_loop {
        let z = part.vertices()[v].z;
        if z.abs() > COPLANAR_TOLERANCE {
            return Err(FlattenError::NotCoplanar { vertex: v, distance: z.abs() });
        }
    }
    let mut part = part.clone();
    let polygon = |l: &[usize], m: &TriMesh| -> Vec<Point2<f64>> {
        l.iter().map(|&v| Point2::new(m.vertices()[v].x, m.vertices()[v].y)).collect()
    };
    if signed_area(&polygon(&part_loop, &part)) < 0.0 {
        part = part.flipped();
        part_loop = boundary_loops(&part)?.remove(0).vertices;
    }
    let poly = polygon(&part_loop, &part);
    check_simple(&poly)?;
    let (lo, hi) = (margin, 1.0 - margin);
    if part.vertices().iter().any(|p| p.x < lo || p.x > hi || p.y < lo || p.y > hi) {
        return Err(FlattenError::FootprintExceedsTile);
    }

    let r = tile_resolution;
    let h = 1.0 / r as f64;
    let mut removed = vec![false; r * r];
    for j in 0..r {
        for i in 0..r {
            let cell_lo = Point2::new(i as f64 * h - CELL_SLACK, j as f64 * h - CELL_SLACK);
            let cell_hi = Point2::new((i + 1) as f64 * h + CELL_SLACK, (j + 1) as f64 * h + CELL_SLACK);
            removed[j * r + i] = cell_meets_polygon(&cell_lo, &cell_hi, &poly);
        }
    }
    clean_hole(&mut removed, r);
    let touches_border = (0..r).any(|k| removed[k] || removed[(r - 1) * r + k] || removed[k * r] || removed[k * r + r - 1]);
    if touches_border {
        return Err(FlattenError::FootprintExceedsTile);
    }

    // grid vertices that belong to kept cells, compactly indexed
    let n = r + 1;
    let all_tris = grid_triangles(n, n);
    let mut remap = vec![usize::MAX; n * n];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for c in 0..r * r {
        if removed[c] {
            continue;
        }
        for tri in &all_tris[2 * c..2 * c + 2] {
            let mut out = [0; 3];
            for (k, &v) in tri.iter().enumerate() {
                if remap[v] == usize::MAX {
                    remap[v] = vertices.len();
                    vertices.push(Point3::new((v % n) as f64 * h, (v / n) as f64 * h, 0.0));
                }
                out[k] = remap[v];
            }
            triangles.push(out);
        }
    }
    let grid = TriMesh::new(vertices.clone(), triangles.clone())?;
    let hole_loop = {
        let loops = boundary_loops(&grid)?;
        let area = |l: &BoundaryLoop| signed_area(&polygon(&l.vertices, &grid));
        loops
            .into_iter()
            .filter(|l| area(l) < 0.0)
            .max_by_key(|l| l.len())
            .ok_or(FlattenError::FootprintExceedsTile)?
            .vertices
    };

    let part_offset = vertices.len();
    vertices.extend_from_slice(part.vertices());
    triangles.extend(part.triangles().iter().map(|t| [t[0] + part_offset, t[1] + part_offset, t[2] + part_offset]));
    let part_loop: Vec<usize> = part_loop.iter().map(|v| v + part_offset).collect();

    let annulus = zipper(&vertices, &hole_loop, &part_loop);
    let annulus_triangles = annulus.len();
    triangles.extend(annulus);
    let uvs = vertices.iter().map(|p| Point2::new(p.x, p.y)).collect();
    let mesh = TriMesh::new(vertices, triangles)?.with_uvs(uvs)?;
    Ok(Stitched { mesh, part_loop, hole_loop, annulus_triangles, part_offset })
}

fn signed_area(poly: &[Point2<f64>]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p.x * q.y - q.x * p.y
        })
        .sum::<f64>()
}

fn orient(a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: &Point2<f64>, b: &Point2<f64>, p: &Point2<f64>) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed segment intersection.
fn segments_meet(a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>, d: &Point2<f64>) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0)) && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0)) {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

fn check_simple(poly: &[Point2<f64>]) -> Result<(), FlattenError> {
    let n = poly.len();
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_meet(&poly[i], &poly[(i + 1) % n], &poly[j], &poly[(j + 1) % n]) {
                return Err(FlattenError::SelfIntersecting(i, j));
            }
        }
    }
    Ok(())
}

fn point_in_polygon(p: &Point2<f64>, poly: &[Point2<f64>]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn cell_meets_polygon(lo: &Point2<f64>, hi: &Point2<f64>, poly: &[Point2<f64>]) -> bool {
    let inside_cell = |p: &Point2<f64>| p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
    if poly.iter().any(inside_cell) {
        return true;
    }
    let corners = [*lo, Point2::new(hi.x, lo.y), *hi, Point2::new(lo.x, hi.y)];
    if corners.iter().any(|c| point_in_polygon(c, poly)) {
        return true;
    }
    let n = poly.len();
    (0..n).any(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        (0..4).any(|k| segments_meet(&a, &b, &corners[k], &corners[(k + 1) % 4]))
    })
}

/// Removes diagonal pinches and enclosed islands from a cell mask until the
/// removed region is a single simply connected, edge-connected hole.
fn clean_hole(removed: &mut [bool], r: usize) {
    loop {
        let mut changed = false;
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let c = [j * r + i, j * r + i + 1, (j + 1) * r + i, (j + 1) * r + i + 1];
                let m = c.map(|k| removed[k]);
                let pinch = (m[0] && m[3] && !m[1] && !m[2]) || (m[1] && m[2] && !m[0] && !m[3]);
                if pinch {
                    for k in c {
                        removed[k] = true;
                    }
                    changed = true;
                }
            }
        }
        // kept cells not edge-connected to the tile border join the hole
        let mut reach = vec![false; r * r];
        let mut queue = VecDeque::new();
        for k in 0..r {
            for c in [k, (r - 1) * r + k, k * r, k * r + r - 1] {
                if !removed[c] && !reach[c] {
                    reach[c] = true;
                    queue.push_back(c);
                }
            }
        }
        while let Some(c) = queue.pop_front() {
            let (i, j) = (c % r, c / r);
            let mut nb = Vec::with_capacity(4);
            if i > 0 {
                nb.push(c - 1);
            }
            if i + 1 < r {
                nb.push(c + 1);
            }
            if j > 0 {
                nb.push(c - r);
            }
            if j + 1 < r {
                nb.push(c + r);
            }
            for d in nb {
                if !removed[d] && !reach[d] {
                    reach[d] = true;
                    queue.push_back(d);
                }
            }
        }
        for c in 0..r * r {
            if !removed[c] && !reach[c] {
                removed[c] = true;
                changed = true;
            }
        }
        if !changed {
            return;
        }
    }
}

fn tri_area(v: &[Point3<f64>], t: &[usize; 3]) -> f64 {
    let (a, b, c) = (v[t[0]], v[t[1]], v[t[2]]);
    0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x))
}

/// Triangulates the band between the hole loop (clockwise, as left by the
/// grid) and the part loop (counter-clockwise). Both are walked clockwise;
/// every step consumes one edge of one loop, so the band has exactly
/// `|hole| + |part|` triangles.
///
/// The greedy walk advances along the loop whose new diagonal is shorter,
/// unless that would produce an inverted triangle. If it still gets stuck,
/// a dynamic program over the same walk picks the shortest total diagonal
/// length among bands whose triangles are all positively oriented.
fn zipper(v: &[Point3<f64>], hole: &[usize], part: &[usize]) -> Vec<[usize; 3]> {
    let outer: Vec<usize> = hole.to_vec();
    let inner: Vec<usize> = part.iter().rev().copied().collect();
    let dist = |a: usize, b: usize| (v[a] - v[b]).norm_squared();
    let mut starts = Vec::with_capacity(outer.len() * inner.len());
    for (i, &h) in outer.iter().enumerate() {
        for (j, &q) in inner.iter().enumerate() {
            starts.push((dist(h, q), i, j));
        }
    }
    starts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (_, i0, j0) = starts[0];
    let greedy = zipper_greedy(v, &outer, &inner, i0, j0);
    if greedy.iter().all(|t| tri_area(v, t) > 0.0) {
        return greedy;
    }
    for &(_, i, j) in starts.iter().take(16) {
        if let Some(band) = zipper_dp(v, &outer, &inner, i, j) {
            return band;
        }
    }
    log::warn!("stitch: no fold-free band found; keeping the greedy band");
    greedy
}

fn zipper_greedy(v: &[Point3<f64>], outer: &[usize], inner: &[usize], i0: usize, j0: usize) -> Vec<[usize; 3]> {
    let (n, m) = (outer.len(), inner.len());
    let dist = |a: usize, b: usize| (v[a] - v[b]).norm_squared();
    let (mut a, mut b) = (0, 0);
    let mut out = Vec::with_capacity(n + m);
    while a < n || b < m {
        let h = outer[(i0 + a) % n];
        let h1 = outer[(i0 + a + 1) % n];
        let q = inner[(j0 + b) % m];
        let q1 = inner[(j0 + b + 1) % m];
        let adv_outer = [h1, h, q];
        let adv_inner = [q, q1, h];
        let take_outer = if a == n {
            false
        } else if b == m {
            true
        } else {
            let prefer_outer = dist(h1, q) <= dist(h, q1);
            match (tri_area(v, &adv_outer) > 0.0, tri_area(v, &adv_inner) > 0.0) {
                (true, false) => true,
                (false, true) => false,
                _ => prefer_outer,
            }
        };
        if take_outer {
            out.push(adv_outer);
            a += 1;
        } else {
            out.push(adv_inner);
            b += 1;
        }
    }
    out
}

fn zipper_dp(v: &[Point3<f64>], outer: &[usize], inner: &[usize], i0: usize, j0: usize) -> Option<Vec<[usize; 3]>> {
    let (n, m) = (outer.len(), inner.len());
    let h = |a: usize| outer[(i0 + a) % n];
    let q = |b: usize| inner[(j0 + b) % m];
    let len = |a: usize, b: usize| (v[h(a)] - v[q(b)]).norm();
    let idx = |a: usize, b: usize| a * (m + 1) + b;
    let mut cost = vec![f64::INFINITY; (n + 1) * (m + 1)];
    // true when the state was reached by advancing the outer loop
    let mut from_outer = vec![false; (n + 1) * (m + 1)];
    cost[0] = 0.0;
    for a in 0..=n {
        for b in 0..=m {
            let c = cost[idx(a, b)];
            if !c.is_finite() {
                continue;
            }
            if a < n {
                let t = [h(a + 1), h(a), q(b)];
                let next = c + len(a + 1, b);
                if tri_area(v, &t) > 0.0 && next < cost[idx(a + 1, b)] {
                    cost[idx(a + 1, b)] = next;
                    from_outer[idx(a + 1, b)] = true;
                }
            }
            if b < m {
                let t = [q(b), q(b + 1), h(a)];
                let next = c + len(a, b + 1);
                if tri_area(v, &t) > 0.0 && next < cost[idx(a, b + 1)] {
                    cost[idx(a, b + 1)] = next;
                    from_outer[idx(a, b + 1)] = false;
                }
            }
        }
    }
    if !cost[idx(n, m)].is_finite() {
        return None;
    }
    let mut out = Vec::with_capacity(n + m);
    let (mut a, mut b) = (n, m);
    while a > 0 || b > 0 {
        if from_outer[idx(a, b)] {
            a -= 1;
            out.push([h(a + 1), h(a), q(b)]);
        } else {
            b -= 1;
            out.push([q(b), q(b + 1), h(a)]);
        }
    }
    out.reverse();
    Some(out)
}

/// Laplacian smoothing of the vertices within `rings` edge hops of the seam,
/// never moving the outer edge of the tile.
pub fn smooth_seam(stitched: &Stitched, rings: usize, lambda: f64, iterations: usize) -> Result<TriMesh, FlattenError> {
    let seam = BoundaryLoop {
        vertices: stitched.hole_loop.iter().chain(&stitched.part_loop).copied().collect(),
    };
    let on_edge = |p: &Point3<f64>| p.x <= 0.0 || p.x >= 1.0 || p.y <= 0.0 || p.y >= 1.0;
    let verts = stitched.mesh.vertices();
    let subset: Vec<usize> = select_near_boundary(&stitched.mesh, &seam, rings)?
        .into_iter()
        .filter(|&v| !on_edge(&verts[v]))
        .collect();
    Ok(laplacian_smooth(&stitched.mesh, &subset, iterations, lambda)?)
}

/// Similarity about the in-plane vertex centroid `c`:
/// `xy -> xy + t + (s R - I)(xy - c)` and `z -> z + (s - 1) z`.
///
/// The result must stay inside the unit tile.
pub fn augment(part: &TriMesh, translation: Vector2<f64>, scale: f64, rotation: f64) -> Result<TriMesh, FlattenError> {
    if !(scale > 0.0 && scale.is_finite()) || !rotation.is_finite() || !translation.iter().all(|t| t.is_finite()) {
        return Err(FlattenError::InvalidParameter(format!(
            "augment(scale {scale}, rotation {rotation}, translation {translation:?})"
        )));
    }
    if translation == Vector2::zeros() && scale == 1.0 && rotation == 0.0 {
        return Ok(part.clone());
    }
    let verts = part.vertices();
    let c = verts.iter().map(|p| Vector2::new(p.x, p.y)).sum::<Vector2<f64>>() / verts.len() as f64;
    let (s, co) = rotation.sin_cos();
    let m = nalgebra::Matrix2::new(scale * co - 1.0, -scale * s, scale * s, scale * co - 1.0);
    let pos: Vec<Point3<f64>> = verts
        .iter()
        .map(|p| {
            let xy = Vector2::new(p.x, p.y);
            let d = translation + m * (xy - c);
            Point3::new(p.x + d.x, p.y + d.y, p.z + (scale - 1.0) * p.z)
        })
        .collect();
    if pos.iter().any(|p| p.x < 0.0 || p.x > 1.0 || p.y < 0.0 || p.y > 1.0) {
        return Err(FlattenError::FootprintExceedsTile);
    }
    Ok(part.with_positions(pos)?)
}
