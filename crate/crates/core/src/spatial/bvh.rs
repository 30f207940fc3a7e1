use nalgebra::{Point3, Vector3};

use super::Aabb;
use crate::mesh::TriMesh;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub direction: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub triangle: usize,
    /// Barycentric weights of the second and third triangle vertices.
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestHit {
    pub point: Point3<f64>,
    pub triangle: usize,
    pub distance_squared: f64,
}

#[derive(Debug, Clone)]
pub(crate) enum BvhNode {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl BvhNode {
    pub(crate) fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { bounds, .. } | BvhNode::Inner { bounds, .. } => bounds,
        }
    }
}

/// Bounding volume hierarchy over the triangles of a mesh.
///
/// Node boxes are padded by a small relative margin so that box tests never
/// reject a hit the exact triangle test would accept. Hits are ordered by
/// `(t, triangle index)`, which makes traversal results identical to a
/// brute-force scan over all triangles.
#[derive(Debug, Clone)]
pub struct Bvh {
    triangles: Vec<[Point3<f64>; 3]>,
    pub(crate) order: Vec<usize>,
    pub(crate) nodes: Vec<BvhNode>,
}

impl Bvh {
    pub fn new(mesh: &TriMesh) -> Self {
        let tris = (0..mesh.triangle_count()).map(|t| mesh.triangle_points(t)).collect();
        Self::from_triangles(tris)
    }

    pub fn from_triangles(triangles: Vec<[Point3<f64>; 3]>) -> Self {
        let pad = 1e-9 * Aabb::from_points(triangles.iter().flatten()).diagonal().max(1e-300);
        let centroids: Vec<Point3<f64>> = triangles
            .iter()
            .map(|[a, b, c]| Point3::from((a.coords + b.coords + c.coords) / 3.0))
            .collect();
        let mut bvh = Self {
            order: (0..triangles.len()).collect(),
            triangles,
            nodes: Vec::new(),
        };
        if !bvh.triangles.is_empty() {
            bvh.build(0, bvh.triangles.len(), &centroids, pad);
        }
        bvh
    }

    pub fn triangle(&self, t: usize) -> &[Point3<f64>; 3] {
        &self.triangles[t]
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    fn build(&mut self, start: usize, end: usize, centroids: &[Point3<f64>], pad: f64) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &t in &self.order[start..end] {
            for p in &self.triangles[t] {
                bounds.grow(p);
            }
            cbounds.grow(&centroids[t]);
        }
        let bounds = bounds.padded(pad);
        let id = self.nodes.len();
        let extent = cbounds.extent();
        let axis = (0..3).max_by(|&a, &b| extent[a].total_cmp(&extent[b])).unwrap();
        if end - start <= LEAF_SIZE || extent[axis] <= 0.0 {
            self.nodes.push(BvhNode::Leaf { bounds, start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        self.nodes.push(BvhNode::Leaf { bounds, start: 0, end: 0 });
        let left = self.build(start, mid, centroids, pad);
        let right = self.build(mid, end, centroids, pad);
        self.nodes[id] = BvhNode::Inner { bounds, left, right };
        id
    }

    /// Nearest hit with `t > t_min`.
    pub fn intersect(&self, ray: &Ray, t_min: f64) -> Option<RayHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<RayHit> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let limit = best.map_or(f64::INFINITY, |h| h.t);
            match slab_entry(node.bounds(), ray) {
                Some(t_enter) if t_enter <= limit => {}
                _ => continue,
            }
            match *node {
                BvhNode::Leaf { start, end, .. } => {
                    for &t in &self.order[start..end] {
                        if let Some(hit) = ray_triangle(ray, &self.triangles[t], t, t_min) {
                            if better_hit(&hit, &best) {
                                best = Some(hit);
                            }
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best
    }

    /// Brute-force reference: tests every triangle.
    pub fn intersect_brute_force(&self, ray: &Ray, t_min: f64) -> Option<RayHit> {
        let mut best = None;
        for (t, tri) in self.triangles.iter().enumerate() {
            if let Some(hit) = ray_triangle(ray, tri, t, t_min) {
                if better_hit(&hit, &best) {
                    best = Some(hit);
                }
            }
        }
        best
    }

    /// Closest surface point to `p`, ties broken by lowest triangle index.
    pub fn closest_point(&self, p: &Point3<f64>) -> Option<ClosestHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<ClosestHit> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let limit = best.map_or(f64::INFINITY, |h| h.distance_squared);
            if node.bounds().distance_squared(p) > limit {
                continue;
            }
            match *node {
                BvhNode::Leaf { start, end, .. } => {
                    for &t in &self.order[start..end] {
                        let q = closest_point_on_triangle(p, &self.triangles[t]);
                        let d = (q - p).norm_squared();
                        let better = match best {
                            None => true,
                            Some(b) => d < b.distance_squared || (d == b.distance_squared && t < b.triangle),
                        };
                        if better {
                            best = Some(ClosestHit { point: q, triangle: t, distance_squared: d });
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().distance_squared(p);
                    let dr = self.nodes[right].bounds().distance_squared(p);
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best
    }
}

fn better_hit(hit: &RayHit, best: &Option<RayHit>) -> bool {
    match best {
        None => true,
        Some(b) => hit.t < b.t || (hit.t == b.t && hit.triangle < b.triangle),
    }
}

/// Entry parameter of the ray into the box, or `None` on a miss.
fn slab_entry(b: &Aabb, ray: &Ray) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        let o = ray.origin[k];
        let d = ray.direction[k];
        if d == 0.0 {
            if o < b.min[k] || o > b.max[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let (mut a, mut c) = ((b.min[k] - o) * inv, (b.max[k] - o) * inv);
        if a > c {
            std::mem::swap(&mut a, &mut c);
        }
        t0 = t0.max(a);
        t1 = t1.min(c);
        if t0 > t1 {
            return None;
        }
    }
    Some(t0)
}

/// Two-sided Möller–Trumbore intersection; edges and vertices count as hits.
pub fn ray_triangle(ray: &Ray, tri: &[Point3<f64>; 3], id: usize, t_min: f64) -> Option<RayHit> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = ray.direction.cross(&e2);
    let det = e1.dot(&p);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.direction.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    if t > t_min {
        Some(RayHit { t, triangle: id, u, v })
    } else {
        None
    }
}

/// Closest point on a triangle (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Point3<f64>, tri: &[Point3<f64>; 3]) -> Point3<f64> {
    let (a, b, c) = (tri[0], tri[1], tri[2]);
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}
