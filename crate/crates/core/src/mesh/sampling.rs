use nalgebra::{Point3, Vector3};

use super::{MeshError, TriMesh, NORMAL_TOLERANCE};
use crate::rng::{seeded, unit_f64};

/// Triangles whose area falls below this are skipped during sampling.
pub const MIN_SAMPLE_AREA: f64 = 1e-12;

/// Point cloud with one unit normal per point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OrientedPointSet {
    points: Vec<Point3<f64>>,
    normals: Vec<Vector3<f64>>,
}

impl OrientedPointSet {
    pub fn new(points: Vec<Point3<f64>>, normals: Vec<Vector3<f64>>) -> Result<Self, MeshError> {
        if points.len() != normals.len() {
            return Err(MeshError::PointNormalMismatch {
                points: points.len(),
                normals: normals.len(),
            });
        }
        if let Some(i) = normals
            .iter()
            .position(|n| (n.norm() - 1.0).abs() > NORMAL_TOLERANCE)
        {
            return Err(MeshError::NonUnitNormal(i));
        }
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(MeshError::NonFinite(i));
        }
        Ok(Self { points, normals })
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the points whose index satisfies `keep`, preserving order.
    pub fn filter_indexed(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let mut out = Self::default();
        for i in 0..self.len() {
            if keep(i) {
                out.points.push(self.points[i]);
                out.normals.push(self.normals[i]);
            }
        }
        out
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: indices.iter().map(|&i| self.normals[i]).collect(),
        }
    }
}

/// Diagnostics from [`sample_surface`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleStats {
    /// Triangles below [`MIN_SAMPLE_AREA`] that were never sampled.
    pub skipped_triangles: Vec<usize>,
}

/// Draws `n` area-weighted samples from the mesh surface.
///
/// The stream is ChaCha8 seeded through `seed_from_u64(seed)`. Each sample
/// consumes three 64-bit draws, each mapped to `[0,1)` as `(x >> 11) * 2^-53`:
/// the first picks the triangle by inverse CDF over cumulative areas, the other
/// two place the point with the square-root barycentric warp
/// `(1 - sqrt(r1), sqrt(r1) (1 - r2), sqrt(r1) r2)`. Normals are face normals.
pub fn sample_surface(
    mesh: &TriMesh,
    n: usize,
    seed: u64,
) -> Result<(OrientedPointSet, SampleStats), MeshError> {
    if n == 0 {
        return Err(MeshError::NoSamples);
    }
    let mut stats = SampleStats::default();
    let mut cumulative = Vec::with_capacity(mesh.triangle_count());
    let mut eligible = Vec::with_capacity(mesh.triangle_count());
    let mut total = 0.0;
    for t in 0..mesh.triangle_count() {
        let area = mesh.triangle_area(t);
        if area < MIN_SAMPLE_AREA {
            stats.skipped_triangles.push(t);
            continue;
        }
        total += area;
        cumulative.push(total);
        eligible.push(t);
    }
    if eligible.is_empty() || total <= 0.0 {
        return Err(MeshError::ZeroArea);
    }
    if !stats.skipped_triangles.is_empty() {
        log::warn!(
            "sample_surface: skipped {} near-zero-area triangles",
            stats.skipped_triangles.len()
        );
    }

    let mut rng = seeded(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let target = unit_f64(&mut rng) * total;
        let k = cumulative
            .partition_point(|&c| c <= target)
            .min(eligible.len() - 1);
        let t = eligible[k];
        let r1 = unit_f64(&mut rng).sqrt();
        let r2 = unit_f64(&mut rng);
        let [a, b, c] = mesh.triangle_points(t);
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        points.push(Point3::from(a.coords * wa + b.coords * wb + c.coords * wc));
        normals.push(mesh.face_normal(t));
    }
    Ok((OrientedPointSet { points, normals }, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn triangle() -> TriMesh {
        TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(2.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.5),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn single_triangle_points_inside() {
        let m = triangle();
        let (s, _) = sample_surface(&m, 100, 7).unwrap();
        assert_eq!(s.len(), 100);
        let n = m.face_normal(0);
        for (p, pn) in s.points().iter().zip(s.normals()) {
            assert_eq!(*pn, n);
            assert!((p - m.vertices()[0]).dot(&n).abs() < 1e-12);
            // barycentric solve in the triangle plane
            let [a, b, c] = m.triangle_points(0);
            let (e1, e2, d) = (b - a, c - a, p - a);
            let (d00, d01, d11) = (e1.dot(&e1), e1.dot(&e2), e2.dot(&e2));
            let (d20, d21) = (d.dot(&e1), d.dot(&e2));
            let den = d00 * d11 - d01 * d01;
            let v = (d11 * d20 - d01 * d21) / den;
            let w = (d00 * d21 - d01 * d20) / den;
            assert!(v >= -1e-12 && w >= -1e-12 && v + w <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn area_ratio_within_binomial_bound() {
        // areas 9 : 1
        let m = TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(3.0, 0.0, 0.0),
                Point3::new(0.0, 3.0, 0.0),
                Point3::new(10.0, 0.0, 0.0),
                Point3::new(11.0, 0.0, 0.0),
                Point3::new(10.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let n = 10_000usize;
        let (s, _) = sample_surface(&m, n, 3).unwrap();
        let big = s.points().iter().filter(|p| p.x < 5.0).count() as f64;
        let (pr, nn) = (0.9, n as f64);
        let sigma = (nn * pr * (1.0 - pr)).sqrt();
        assert!((big - nn * pr).abs() < 3.0 * sigma, "{big}");
    }

    #[test]
    fn deterministic_per_seed() {
        let m = triangle();
        let a = sample_surface(&m, 50, 11).unwrap().0;
        let b = sample_surface(&m, 50, 11).unwrap().0;
        let c = sample_surface(&m, 50, 12).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_triangles_skipped_and_zero_area_rejected() {
        let m = TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(2.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 1, 3]],
        )
        .unwrap();
        let (s, stats) = sample_surface(&m, 20, 1).unwrap();
        assert_eq!(stats.skipped_triangles, vec![0]);
        assert!(s.points().iter().all(|p| p.y >= 0.0));
        let flat = TriMesh::new(m.vertices().to_vec(), vec![[0, 1, 2]]).unwrap();
        assert!(matches!(sample_surface(&flat, 5, 1), Err(MeshError::ZeroArea)));
        assert!(matches!(sample_surface(&m, 0, 1), Err(MeshError::NoSamples)));
    }

    proptest! {
        #[test]
        fn samples_lie_on_host_plane(seed in 0u64..1000, z in -1.0f64..1.0) {
            let m = TriMesh::new(
                vec![Point3::new(0.0, 0.0, z), Point3::new(1.0, 0.2, 0.0), Point3::new(0.3, 1.0, 2.0 * z)],
                vec![[0, 1, 2]],
            ).unwrap();
            let (s, _) = sample_surface(&m, 64, seed).unwrap();
            let n = m.face_normal(0);
            for p in s.points() {
                prop_assert!((p - m.vertices()[0]).dot(&n).abs() < 1e-7);
            }
        }
    }
}
