//! Vector displacement map images: storage, the raw `.vdmf` format, bilinear
//! sampling and stamping onto plane tiles or UV-mapped meshes.
//!
//! Pixel `(i, j)` sits at the uv center `((i + .5)/R, (j + .5)/R)`, so `i`
//! runs along u and `j` along v. Its value is a displacement in the tile frame
//! `(t, b, n)` measured in units of the tile side.

use std::path::Path;

use nalgebra::{Point2, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{grid_triangles, MeshError, TriMesh};

pub const MAGIC: &[u8; 4] = b"VDMF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 12;

/// Pixel coordinates this close to an integer are treated as that integer.
const CENTER_SNAP: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum VdmError {
    #[error("bad magic bytes {0:?}, expected \"VDMF\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated VDM file: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} unexpected bytes after the metadata block")]
    TrailingBytes(usize),
    #[error("pixel {pixel} holds a non-finite value")]
    NonFinite { pixel: usize },
    #[error("invalid resolution {0}")]
    InvalidResolution(usize),
    #[error("expected {expected} pixels, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("subdivision must be at least 2, got {0}")]
    InvalidSubdivision(usize),
    #[error("UV region must have min < max")]
    InvalidRegion,
    #[error("base mesh has no UVs")]
    MissingUvs,
    #[error("no tangent frame at vertices {vertices:?}")]
    DegenerateFrame { vertices: Vec<usize> },
    #[error("metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VdmMetadata {
    pub source: String,
    pub seed: Option<u64>,
    /// Unit of the stored displacements.
    pub amplitude: String,
}

impl Default for VdmMetadata {
    fn default() -> Self {
        Self { source: String::new(), seed: None, amplitude: "tile_side".into() }
    }
}

/// Square grid of `(t, b, n)` displacements stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct VdmImage {
    resolution: usize,
    data: Vec<[f32; 3]>,
    metadata: VdmMetadata,
}

#[inline]
fn lerp(a: f64, b: f64, f: f64) -> f64 {
    if f == 0.0 {
        a
    } else if f == 1.0 {
        b
    } else {
        a + f * (b - a)
    }
}

/// Cell index and fraction for a uv coordinate along one axis.
fn axis(u: f64, r: usize) -> (usize, f64) {
    let mut x = u.clamp(0.0, 1.0) * r as f64 - 0.5;
    let near = x.round();
    if (x - near).abs() < CENTER_SNAP {
        x = near;
    }
    let i = (x.floor().max(0.0) as usize).min(r.saturating_sub(2));
    (i, x - i as f64)
}

impl VdmImage {
    pub fn new(resolution: usize, data: Vec<[f32; 3]>, metadata: VdmMetadata) -> Result<Self, VdmError> {
        if resolution == 0 {
            return Err(VdmError::InvalidResolution(resolution));
        }
        let expected = resolution
            .checked_mul(resolution)
            .ok_or(VdmError::InvalidResolution(resolution))?;
        if data.len() != expected {
            return Err(VdmError::SizeMismatch { expected, actual: data.len() });
        }
        if let Some(pixel) = data.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(VdmError::NonFinite { pixel });
        }
        Ok(Self { resolution, data, metadata })
    }

    pub fn constant(resolution: usize, value: [f32; 3]) -> Result<Self, VdmError> {
        Self::new(resolution, vec![value; resolution * resolution], VdmMetadata::default())
    }

    pub fn zeros(resolution: usize) -> Result<Self, VdmError> {
        Self::constant(resolution, [0.0; 3])
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn data(&self) -> &[[f32; 3]] {
        &self.data
    }

    pub fn metadata(&self) -> &VdmMetadata {
        &self.metadata
    }

    pub fn with_metadata(mut self, metadata: VdmMetadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn pixel(&self, i: usize, j: usize) -> [f32; 3] {
        self.data[j * self.resolution + i]
    }

    fn value(&self, i: usize, j: usize) -> Vector3<f64> {
        let p = self.pixel(i, j);
        Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }

    /// Bilinear reconstruction through the pixel centers.
    ///
    /// `uv` is clamped to `[0,1]^2`. In the half-pixel border outside the
    /// outermost centers the nearest cell is extended linearly, so the field is
    /// one bilinear patch per cell all the way to the tile edge. At a pixel
    /// center the stored value is returned exactly.
    pub fn sample(&self, uv: Point2<f64>) -> Vector3<f64> {
        let r = self.resolution;
        if r == 1 {
            return self.value(0, 0);
        }
        let (i, fx) = axis(uv.x, r);
        let (j, fy) = axis(uv.y, r);
        let (a, b) = (self.value(i, j), self.value(i + 1, j));
        let (c, d) = (self.value(i, j + 1), self.value(i + 1, j + 1));
        Vector3::from_fn(|k, _| lerp(lerp(a[k], b[k], fx), lerp(c[k], d[k], fx), fy))
    }

    pub fn max_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|p| Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64).norm())
            .fold(0.0, f64::max)
    }

    /// Mean Euclidean distance between corresponding pixels.
    pub fn mean_pixel_difference(&self, other: &VdmImage) -> Result<f64, VdmError> {
        if other.resolution != self.resolution {
            return Err(VdmError::SizeMismatch { expected: self.data.len(), actual: other.data.len() });
        }
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (0..3).map(|k| (a[k] as f64 - b[k] as f64).powi(2)).sum::<f64>().sqrt())
            .sum();
        Ok(total / self.data.len() as f64)
    }

    /// Serializes to the `.vdmf` layout: `"VDMF" | u32 version | u32 R |
    /// 3 R^2 f32 | u32 n | n bytes of JSON metadata`, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.metadata).expect("metadata serializes");
        let mut out = Vec::with_capacity(HEADER_LEN + 12 * self.data.len() + 4 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        for p in &self.data {
            for c in p {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, VdmError> {
        let need = |expected: usize| {
            if bytes.len() < expected {
                Err(VdmError::Truncated { expected, actual: bytes.len() })
            } else {
                Ok(())
            }
        };
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        need(4)?;
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(VdmError::BadMagic(magic));
        }
        need(HEADER_LEN)?;
        let version = u32_at(4);
        if version != VERSION {
            return Err(VdmError::UnsupportedVersion(version));
        }
        let r = u32_at(8) as usize;
        let pixels = r.checked_mul(r).filter(|_| r > 0).ok_or(VdmError::InvalidResolution(r))?;
        let payload_end = HEADER_LEN + 12 * pixels;
        need(payload_end + 4)?;
        let data: Vec<[f32; 3]> = bytes[HEADER_LEN..payload_end]
            .chunks_exact(12)
            .map(|px| {
                let f = |k: usize| f32::from_le_bytes(px[4 * k..4 * k + 4].try_into().expect("4 bytes"));
                [f(0), f(1), f(2)]
            })
            .collect();
        let json_len = u32_at(payload_end) as usize;
        let end = payload_end + 4 + json_len;
        need(end)?;
        if bytes.len() > end {
            return Err(VdmError::TrailingBytes(bytes.len() - end));
        }
        let metadata: VdmMetadata = serde_json::from_slice(&bytes[payload_end + 4..end])?;
        Self::new(r, data, metadata)
    }
}

pub fn write_vdm(vdm: &VdmImage, path: impl AsRef<Path>) -> Result<(), VdmError> {
    std::fs::write(path, vdm.to_bytes())?;
    Ok(())
}

pub fn read_vdm(path: impl AsRef<Path>) -> Result<VdmImage, VdmError> {
    VdmImage::from_bytes(&std::fs::read(path)?)
}

/// Bilinear resample at the pixel centers of a new resolution in `[16, 4096]`.
pub fn resample(vdm: &VdmImage, resolution: usize) -> Result<VdmImage, VdmError> {
    if !(16..=4096).contains(&resolution) {
        return Err(VdmError::InvalidResolution(resolution));
    }
    let r = resolution as f64;
    let data = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| {
            let uv = Point2::new(((k % resolution) as f64 + 0.5) / r, ((k / resolution) as f64 + 0.5) / r);
            let v = vdm.sample(uv);
            [v.x as f32, v.y as f32, v.z as f32]
        })
        .collect();
    VdmImage::new(resolution, data, vdm.metadata.clone())
}

/// Stamps the VDM on the tile `[0,1]^2` in the frame `t = +x`, `b = +y`, `n = +z`.
///
/// The grid has `subdivision x subdivision` vertices placed at the cell
/// centers `((i + .5)/s, (j + .5)/s)`; with `s` equal to the VDM resolution
/// every vertex lands on a pixel center. UVs are stored.
pub fn apply_to_plane(vdm: &VdmImage, subdivision: usize) -> Result<TriMesh, VdmError> {
    let s = subdivision;
    if s < 2 {
        return Err(VdmError::InvalidSubdivision(s));
    }
    let uvs: Vec<Point2<f64>> = (0..s * s)
        .map(|k| Point2::new(((k % s) as f64 + 0.5) / s as f64, ((k / s) as f64 + 0.5) / s as f64))
        .collect();
    let vertices = uvs
        .par_iter()
        .map(|uv| Point3::new(uv.x, uv.y, 0.0) + vdm.sample(*uv))
        .collect();
    Ok(TriMesh::new(vertices, grid_triangles(s, s))?.with_uvs(uvs)?)
}

/// Rectangle in UV space that the stamp covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UvRegion {
    pub min: Point2<f64>,
    pub max: Point2<f64>,
}

impl UvRegion {
    pub fn unit() -> Self {
        Self { min: Point2::origin(), max: Point2::new(1.0, 1.0) }
    }

    pub fn contains(&self, uv: &Point2<f64>) -> bool {
        (self.min.x..=self.max.x).contains(&uv.x) && (self.min.y..=self.max.y).contains(&uv.y)
    }

    pub fn normalize(&self, uv: &Point2<f64>) -> Point2<f64> {
        Point2::new((uv.x - self.min.x) / (self.max.x - self.min.x), (uv.y - self.min.y) / (self.max.y - self.min.y))
    }
}

/// Per-vertex orthonormal `(T, B, N)` frames from UV derivatives.
///
/// `T` and `B` are the area-weighted averages of the per-triangle `dP/du` and
/// `dP/dv` over incident triangles with nonzero UV area. `N` is the stored
/// normal if present, otherwise the area-weighted face normal. `T` is
/// Gram-Schmidt orthonormalized against `N`, and `B = +-N x T` keeps the sign
/// of the UV bitangent. Vertices outside `wanted` get `None`.
pub fn tangent_frames(
    mesh: &TriMesh,
    wanted: &[bool],
) -> Result<Vec<Option<[Vector3<f64>; 3]>>, VdmError> {
    let uvs = mesh.uvs().ok_or(VdmError::MissingUvs)?;
    let n = mesh.vertex_count();
    let mut tan = vec![Vector3::zeros(); n];
    let mut bit = vec![Vector3::zeros(); n];
    let mut covered = vec![false; n];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if !tri.iter().any(|&v| wanted[v]) {
            continue;
        }
        let [p0, p1, p2] = mesh.triangle_points(t);
        let (e1, e2) = (p1 - p0, p2 - p0);
        let (d1, d2) = (uvs[tri[1]] - uvs[tri[0]], uvs[tri[2]] - uvs[tri[0]]);
        let det = d1.x * d2.y - d2.x * d1.y;
        let scale = d1.norm() * d2.norm();
        if det.abs() <= 1e-12 * scale || scale == 0.0 {
            continue;
        }
        let area = mesh.triangle_area(t);
        let dpdu = (e1 * d2.y - e2 * d1.y) / det;
        let dpdv = (e2 * d1.x - e1 * d2.x) / det;
        for &v in tri {
            tan[v] += dpdu * area;
            bit[v] += dpdv * area;
            covered[v] = true;
        }
    }
    let normals = match mesh.normals() {
        Some(ns) => ns.to_vec(),
        None => mesh.area_weighted_normals(),
    };
    let mut bad = Vec::new();
    let frames = (0..n)
        .map(|v| {
            if !wanted[v] {
                return None;
            }
            let nv = normals[v];
            let t = tan[v] - nv * nv.dot(&tan[v]);
            if !covered[v] || nv.norm() == 0.0 || t.norm() <= 1e-12 * tan[v].norm().max(f64::MIN_POSITIVE) {
                bad.push(v);
                return None;
            }
            let nv = nv.normalize();
            let t = t.normalize();
            let b = nv.cross(&t);
            let b = if b.dot(&bit[v]) < 0.0 { -b } else { b };
            Some([t, b, nv])
        })
        .collect();
    if bad.is_empty() {
        Ok(frames)
    } else {
        Err(VdmError::DegenerateFrame { vertices: bad })
    }
}

/// Displaces every vertex whose uv lies in `region` by
/// `amplitude (d_t T + d_b B + d_n N)`, with `d` sampled at the
/// region-normalized uv and `(T, B, N)` from [`tangent_frames`].
///
/// Stored normals are dropped when any vertex moves.
pub fn apply_to_mesh(vdm: &VdmImage, base: &TriMesh, region: UvRegion, amplitude: f64) -> Result<TriMesh, VdmError> {
    if !(region.min.x < region.max.x && region.min.y < region.max.y) {
        return Err(VdmError::InvalidRegion);
    }
    let uvs = base.uvs().ok_or(VdmError::MissingUvs)?;
    let wanted: Vec<bool> = uvs.iter().map(|uv| region.contains(uv)).collect();
    let frames = tangent_frames(base, &wanted)?;
    let positions: Vec<Point3<f64>> = base
        .vertices()
        .par_iter()
        .zip(uvs.par_iter().zip(frames.par_iter()))
        .map(|(p, (uv, frame))| match frame {
            Some([t, b, n]) => {
                let d = vdm.sample(region.normalize(uv));
                p + (t * d.x + b * d.y + n * d.z) * amplitude
            }
            None => *p,
        })
        .collect();
    let moved = positions.iter().zip(base.vertices()).any(|(a, b)| a != b);
    let out = base.with_positions(positions)?;
    Ok(if moved { out.without_normals() } else { out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, uniform, unit_f64};
    use crate::shapes::cylinder_patch;
    use proptest::prelude::*;

    fn random_vdm(r: usize, seed: u64) -> VdmImage {
        let mut rng = seeded(seed);
        let data = (0..r * r)
            .map(|_| [0; 3].map(|_: i32| uniform(&mut rng, -0.3, 0.3) as f32))
            .collect();
        VdmImage::new(r, data, VdmMetadata { source: "test".into(), seed: Some(seed), ..Default::default() }).unwrap()
    }

    #[test]
    fn sample_hits_pixel_centers_exactly() {
        let v = random_vdm(17, 1);
        for j in 0..17 {
            for i in 0..17 {
                let uv = Point2::new((i as f64 + 0.5) / 17.0, (j as f64 + 0.5) / 17.0);
                let p = v.pixel(i, j);
                assert_eq!(v.sample(uv), Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64));
            }
        }
    }

    #[test]
    fn sample_midway_is_mean() {
        let v = random_vdm(8, 2);
        for i in 0..7 {
            let uv = Point2::new((i as f64 + 1.0) / 8.0, 3.5 / 8.0);
            let (a, b) = (v.pixel(i, 3), v.pixel(i + 1, 3));
            let s = v.sample(uv);
            for k in 0..3 {
                assert!((s[k] - (a[k] as f64 + b[k] as f64) / 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_image_is_constant_everywhere() {
        let v = VdmImage::constant(5, [0.1, -0.2, 0.3]).unwrap();
        let mut rng = seeded(3);
        let c = Vector3::new(0.1f32 as f64, -0.2f32 as f64, 0.3f32 as f64);
        for _ in 0..200 {
            let uv = Point2::new(uniform(&mut rng, -0.2, 1.2), uniform(&mut rng, -0.2, 1.2));
            assert_eq!(v.sample(uv), c);
        }
        for r in [16, 33, 128] {
            let up = resample(&v, r).unwrap();
            assert!(up.data().iter().all(|p| *p == [0.1, -0.2, 0.3]));
        }
    }

    #[test]
    fn resample_same_resolution_is_identity() {
        let v = random_vdm(64, 4);
        assert_eq!(resample(&v, 64).unwrap(), v);
        assert!(matches!(resample(&v, 8), Err(VdmError::InvalidResolution(8))));
    }

    #[test]
    fn upsampled_pixels_sample_the_old_field() {
        let v = random_vdm(64, 5);
        let up = resample(&v, 128).unwrap();
        for j in 0..128 {
            for i in 0..128 {
                let b = v.sample(Point2::new((i as f64 + 0.5) / 128.0, (j as f64 + 0.5) / 128.0));
                let a = up.pixel(i, j);
                assert!((0..3).all(|k| (a[k] as f64 - b[k]).abs() < 1e-6), "pixel ({i},{j})");
            }
        }
    }

    #[test]
    fn affine_field_survives_upsampling() {
        let f = |u: f64, v: f64| [0.1 + 0.2 * u - 0.3 * v, -0.05 * u, 0.25 * v];
        let data = (0..32 * 32)
            .map(|k| f(((k % 32) as f64 + 0.5) / 32.0, ((k / 32) as f64 + 0.5) / 32.0).map(|x| x as f32))
            .collect();
        let v = VdmImage::new(32, data, VdmMetadata::default()).unwrap();
        let up = resample(&v, 96).unwrap();
        let mut rng = seeded(8);
        for _ in 0..500 {
            let uv = Point2::new(unit_f64(&mut rng), unit_f64(&mut rng));
            let (a, b) = (up.sample(uv), f(uv.x, uv.y));
            assert!((0..3).all(|k| (a[k] - b[k]).abs() < 1e-6), "{uv}");
        }
    }

    #[test]
    fn bytes_roundtrip_bitwise() {
        let v = random_vdm(64, 6);
        let bytes = v.to_bytes();
        assert_eq!(&bytes[..4], b"VDMF");
        assert_eq!(bytes.len(), 12 + 12 * 64 * 64 + 4 + serde_json::to_vec(v.metadata()).unwrap().len());
        let back = VdmImage::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert!(back.data().iter().zip(v.data()).all(|(a, b)| (0..3).all(|k| a[k].to_bits() == b[k].to_bits())));
        assert_eq!(back, v);
    }

    #[test]
    fn pixel_offsets_follow_layout() {
        let v = random_vdm(16, 7);
        let bytes = v.to_bytes();
        let (i, j) = (5, 9);
        let at = 12 + 4 * 3 * (j * 16 + i);
        let t = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        assert_eq!(t.to_bits(), v.pixel(i, j)[0].to_bits());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = random_vdm(16, 8).to_bytes();
        for cut in [0, 3, 11, 100, bytes.len() - 1] {
            let err = VdmImage::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, VdmError::Truncated { .. }), "cut {cut}: {err}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(VdmImage::from_bytes(&bad), Err(VdmError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(VdmImage::from_bytes(&bad), Err(VdmError::UnsupportedVersion(2))));
        let mut bad = bytes.clone();
        bad[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(VdmImage::from_bytes(&bad), Err(VdmError::NonFinite { pixel: 0 })));
        let mut bad = bytes;
        bad.push(0);
        assert!(matches!(VdmImage::from_bytes(&bad), Err(VdmError::TrailingBytes(1))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vdmf");
        let v = random_vdm(32, 9);
        write_vdm(&v, &path).unwrap();
        assert_eq!(read_vdm(&path).unwrap(), v);
    }

    #[test]
    fn apply_to_plane_basic_cases() {
        let flat = apply_to_plane(&VdmImage::zeros(16).unwrap(), 16).unwrap();
        assert!(flat.vertices().iter().all(|p| p.z == 0.0));
        for (p, uv) in flat.vertices().iter().zip(flat.uvs().unwrap()) {
            assert_eq!((p.x, p.y), (uv.x, uv.y));
        }
        let lifted = apply_to_plane(&VdmImage::constant(16, [0.0, 0.0, 0.25]).unwrap(), 10).unwrap();
        for (a, b) in lifted.vertices().iter().zip(apply_to_plane(&VdmImage::zeros(16).unwrap(), 10).unwrap().vertices()) {
            assert_eq!(*a - *b, Vector3::new(0.0, 0.0, 0.25));
        }
        assert!(matches!(apply_to_plane(&VdmImage::zeros(16).unwrap(), 1), Err(VdmError::InvalidSubdivision(1))));
    }

    #[test]
    fn zero_vdm_leaves_mesh_bitwise_unchanged() {
        let base = cylinder_patch(1.0, 1.5, 2.0, 20, 10);
        let out = apply_to_mesh(&VdmImage::zeros(16).unwrap(), &base, UvRegion::unit(), 3.0).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn flat_square_matches_apply_to_plane() {
        let v = random_vdm(32, 10);
        let base = apply_to_plane(&VdmImage::zeros(32).unwrap(), 32).unwrap();
        let stamped = apply_to_mesh(&v, &base, UvRegion::unit(), 1.0).unwrap();
        let direct = apply_to_plane(&v, 32).unwrap();
        for (a, b) in stamped.vertices().iter().zip(direct.vertices()) {
            assert!((a - b).amax() < 1e-7);
        }
    }

    #[test]
    fn cylinder_constant_normal_offset() {
        let h = 0.05;
        let base = cylinder_patch(1.3, 2.0, 1.0, 30, 12);
        let out = apply_to_mesh(&VdmImage::constant(16, [0.0, 0.0, h as f32]).unwrap(), &base, UvRegion::unit(), 1.0).unwrap();
        let h = h as f32 as f64;
        for ((a, b), n) in out.vertices().iter().zip(base.vertices()).zip(base.normals().unwrap()) {
            assert!((a - (b + n * h)).norm() < 1e-6);
            // the analytic cylinder normal is radial
            let radial = Vector3::new(b.x, b.y, 0.0).normalize();
            assert!((n - radial).norm() < 1e-12);
        }
    }

    #[test]
    fn region_restricts_and_normalizes() {
        let base = apply_to_plane(&VdmImage::zeros(16).unwrap(), 16).unwrap();
        let region = UvRegion { min: Point2::new(0.25, 0.25), max: Point2::new(0.75, 0.75) };
        let out = apply_to_mesh(&VdmImage::constant(16, [0.0, 0.0, 1.0]).unwrap(), &base, region, 0.5).unwrap();
        for ((a, b), uv) in out.vertices().iter().zip(base.vertices()).zip(base.uvs().unwrap()) {
            let expected = if region.contains(uv) { 0.5 } else { 0.0 };
            assert_eq!(a.z - b.z, expected);
        }
        let bad = UvRegion { min: Point2::new(0.5, 0.0), max: Point2::new(0.5, 1.0) };
        assert!(matches!(apply_to_mesh(&VdmImage::zeros(16).unwrap(), &base, bad, 1.0), Err(VdmError::InvalidRegion)));
        assert!(matches!(
            apply_to_mesh(&VdmImage::zeros(16).unwrap(), &crate::shapes::unit_cube(), UvRegion::unit(), 1.0),
            Err(VdmError::MissingUvs)
        ));
    }

    #[test]
    fn degenerate_uv_frames_are_listed() {
        let base = apply_to_plane(&VdmImage::zeros(16).unwrap(), 3).unwrap();
        let collapsed = base.clone().with_uvs(vec![Point2::new(0.5, 0.5); 9]).unwrap();
        match apply_to_mesh(&VdmImage::zeros(16).unwrap(), &collapsed, UvRegion::unit(), 1.0) {
            Err(VdmError::DegenerateFrame { vertices }) => assert_eq!(vertices, (0..9).collect::<Vec<_>>()),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn application_is_linear_in_amplitude(seed in 0u64..1000, a1 in -2.0f64..2.0, a2 in -2.0f64..2.0) {
            let v = random_vdm(16, seed);
            let base = cylinder_patch(1.0, 1.0, 1.0, 12, 6);
            let p1 = apply_to_mesh(&v, &base, UvRegion::unit(), a1).unwrap();
            let p2 = apply_to_mesh(&v, &base, UvRegion::unit(), a2).unwrap();
            let p12 = apply_to_mesh(&v, &base, UvRegion::unit(), a1 + a2).unwrap();
            for (((x, y), z), b) in p12.vertices().iter().zip(p1.vertices()).zip(p2.vertices()).zip(base.vertices()) {
                prop_assert!((x - (y + (z - b))).amax() < 1e-9);
            }
        }

        #[test]
        fn interior_samples_stay_within_pixel_range(seed in 0u64..1000, u in 0.0f64..1.0, v in 0.0f64..1.0) {
            let img = random_vdm(16, seed);
            let band = |x: f64| 0.5 / 16.0 + x * (15.0 / 16.0);
            let s = img.sample(Point2::new(band(u), band(v)));
            for k in 0..3 {
                let lo = img.data().iter().map(|p| p[k] as f64).fold(f64::INFINITY, f64::min);
                let hi = img.data().iter().map(|p| p[k] as f64).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(s[k] >= lo - 1e-12 && s[k] <= hi + 1e-12);
            }
        }
    }
}
