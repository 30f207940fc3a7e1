//! Orthographic ray-cast renders: camera-space normal maps and gray shading.
//!
//! A pose looks at `target` from the direction
//! `back = (-sin az cos el, sin el, cos az cos el)`, so `(0, 0)` looks down
//! `-z`, positive azimuth swings the camera towards `-x` and positive
//! elevation raises it. The image plane spans `right = (cos az, 0, sin az)`
//! and `up = back x right`; row 0 is the top of the image.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deformfit::chamfer_loss;
use crate::mesh::{sample_surface, MeshError, TriMesh};
use crate::spatial::{Aabb, Bvh, Ray, RayHit};

pub const DEFAULT_RESOLUTION: usize = 320;
pub const DEFAULT_FRAME_WIDTH: f64 = 1.5;
pub const MAX_RESOLUTION: usize = 8192;

/// Encoded normal of background pixels: camera-space `(0, 0, 1)`.
pub const BACKGROUND_NORMAL: [f32; 3] = [0.5, 0.5, 1.0];
pub const BACKGROUND_GRAY: f32 = 0.5;
pub const MIN_SHADE: f32 = 0.2;

/// `(elevation, azimuth)` in degrees of the six poses normal maps are generated at.
pub const GENERATION_POSES: [(f64, f64); 6] = [(0.0, -60.0), (0.0, -30.0), (0.0, 30.0), (0.0, 60.0), (45.0, 0.0), (-45.0, 0.0)];

/// `(elevation, azimuth)` in degrees of the thirteen evaluation poses.
pub const EVALUATION_POSES: [(f64, f64); 13] = [
    (0.0, 60.0),
    (0.0, -60.0),
    (0.0, 45.0),
    (0.0, -45.0),
    (0.0, 30.0),
    (0.0, -30.0),
    (60.0, 0.0),
    (-60.0, 0.0),
    (45.0, 0.0),
    (-45.0, 0.0),
    (30.0, 0.0),
    (-30.0, 0.0),
    (0.0, 0.0),
];

const NRMF_MAGIC: &[u8; 4] = b"NRMF";
const NRMF_VERSION: u32 = 1;
const NRMF_HEADER: usize = 16;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("pose (elevation {elevation}, azimuth {azimuth}) outside [-90, 90] x [-180, 180]")]
    InvalidPose { elevation: f64, azimuth: f64 },
    #[error("resolution {0} outside [1, 8192]")]
    InvalidResolution(usize),
    #[error("frame width {0} must be positive")]
    InvalidFrameWidth(f64),
    #[error("light direction must be a unit vector")]
    InvalidLight,
    #[error("interpolated shading needs per-vertex normals")]
    MissingNormals,
    #[error("not a normal-map dump (bad magic)")]
    BadMagic,
    #[error("unsupported normal-map dump version {0}")]
    UnsupportedVersion(u32),
    #[error("normal-map dump truncated: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("image encoding failed: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub elevation: f64,
    pub azimuth: f64,
    /// Side of the square orthographic frame, in model units.
    pub frame_width: f64,
    pub resolution: usize,
    pub target: Point3<f64>,
}

/// Orthonormal camera basis in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraFrame {
    pub right: Vector3<f64>,
    pub up: Vector3<f64>,
    /// From the target towards the camera; rays travel along `-back`.
    pub back: Vector3<f64>,
}

impl CameraPose {
    /// Pose with default frame width, resolution and target `(0.5, 0.5, 0)` (the tile center).
    pub fn new(elevation: f64, azimuth: f64) -> Result<Self, RenderError> {
        let pose = Self {
            elevation,
            azimuth,
            frame_width: DEFAULT_FRAME_WIDTH,
            resolution: DEFAULT_RESOLUTION,
            target: Point3::new(0.5, 0.5, 0.0),
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn with_frame(mut self, target: Point3<f64>, frame_width: f64, resolution: usize) -> Result<Self, RenderError> {
        self.target = target;
        self.frame_width = frame_width;
        self.resolution = resolution;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !((-90.0..=90.0).contains(&self.elevation) && (-180.0..=180.0).contains(&self.azimuth)) {
            return Err(RenderError::InvalidPose { elevation: self.elevation, azimuth: self.azimuth });
        }
        if !(1..=MAX_RESOLUTION).contains(&self.resolution) {
            return Err(RenderError::InvalidResolution(self.resolution));
        }
        if !(self.frame_width > 0.0 && self.frame_width.is_finite()) {
            return Err(RenderError::InvalidFrameWidth(self.frame_width));
        }
        Ok(())
    }

    pub fn frame(&self) -> CameraFrame {
        let (se, ce) = self.elevation.to_radians().sin_cos();
        let (sa, ca) = self.azimuth.to_radians().sin_cos();
        let back = Vector3::new(-sa * ce, se, ca * ce);
        let right = Vector3::new(ca, 0.0, sa);
        CameraFrame { right, up: back.cross(&right), back }
    }

    /// World-to-camera rotation; rows are `right`, `up`, `back`.
    pub fn view_matrix(&self) -> Matrix3<f64> {
        let f = self.frame();
        Matrix3::from_rows(&[f.right.transpose(), f.up.transpose(), f.back.transpose()])
    }

    fn ray(&self, frame: &CameraFrame, row: usize, col: usize, distance: f64) -> Ray {
        let n = self.resolution as f64;
        let x = ((col as f64 + 0.5) / n - 0.5) * self.frame_width;
        let y = (0.5 - (row as f64 + 0.5) / n) * self.frame_width;
        Ray {
            origin: self.target + frame.right * x + frame.up * y + frame.back * distance,
            direction: -frame.back,
        }
    }

    /// Continuous pixel coordinates `(col, row)` of a world point; pixel centers sit at `k + 0.5`.
    pub fn project(&self, p: &Point3<f64>) -> (f64, f64) {
        let f = self.frame();
        let d = p - self.target;
        let n = self.resolution as f64;
        ((d.dot(&f.right) / self.frame_width + 0.5) * n, (0.5 - d.dot(&f.up) / self.frame_width) * n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseKind {
    Generation,
    Evaluation,
}

/// The fixed camera poses, with default frame and resolution.
pub fn standard_poses(kind: PoseKind) -> Vec<CameraPose> {
    let list: &[(f64, f64)] = match kind {
        PoseKind::Generation => &GENERATION_POSES,
        PoseKind::Evaluation => &EVALUATION_POSES,
    };
    list.iter()
        .map(|&(el, az)| CameraPose::new(el, az).expect("standard poses are in range"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NormalMode {
    /// Geometric normal of the hit triangle.
    #[default]
    Face,
    /// Barycentric blend of the stored vertex normals, renormalized.
    Interpolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Traversal {
    #[default]
    Bvh,
    /// Tests every triangle per ray; the reference for BVH traversal.
    BruteForce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RenderOptions {
    pub normals: NormalMode,
    pub traversal: Traversal,
}

/// Nearest hit of one pixel ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit {
    pub point: Point3<f64>,
    pub triangle: usize,
    /// Unit world-space normal, flipped to face the camera.
    pub normal: Vector3<f64>,
}

/// A mesh prepared for repeated rendering.
#[derive(Debug, Clone)]
pub struct Scene<'a> {
    mesh: &'a TriMesh,
    bvh: Bvh,
    bounds: Aabb,
}

impl<'a> Scene<'a> {
    pub fn new(mesh: &'a TriMesh) -> Result<Self, RenderError> {
        if mesh.triangle_count() == 0 {
            return Err(RenderError::EmptyMesh);
        }
        Ok(Self { mesh, bvh: Bvh::new(mesh), bounds: mesh.bounding_box() })
    }

    /// Casts one ray per pixel, row-major from the top-left.
    pub fn cast(&self, pose: &CameraPose, options: RenderOptions) -> Result<Vec<Option<PixelHit>>, RenderError> {
        pose.validate()?;
        let normals = match options.normals {
            NormalMode::Face => None,
            NormalMode::Interpolated => Some(self.mesh.normals().ok_or(RenderError::MissingNormals)?),
        };
        let frame = pose.frame();
        // start every ray outside the bounding sphere of the mesh
        let distance = (self.bounds.center() - pose.target).norm() + self.bounds.diagonal() + 1.0;
        let n = pose.resolution;
        Ok((0..n * n)
            .into_par_iter()
            .map(|k| {
                let ray = pose.ray(&frame, k / n, k % n, distance);
                let hit = match options.traversal {
                    Traversal::Bvh => self.bvh.intersect(&ray, 0.0),
                    Traversal::BruteForce => self.bvh.intersect_brute_force(&ray, 0.0),
                }?;
                Some(self.shade_hit(&ray, &hit, &frame, normals))
            })
            .collect())
    }

    fn shade_hit(&self, ray: &Ray, hit: &RayHit, frame: &CameraFrame, normals: Option<&[Vector3<f64>]>) -> PixelHit {
        let n = match normals {
            None => self.mesh.face_normal(hit.triangle),
            Some(vn) => {
                let [a, b, c] = self.mesh.triangles()[hit.triangle];
                (vn[a] * (1.0 - hit.u - hit.v) + vn[b] * hit.u + vn[c] * hit.v).normalize()
            }
        };
        let normal = if n.dot(&frame.back) < 0.0 { -n } else { n };
        PixelHit { point: ray.origin + ray.direction * hit.t, triangle: hit.triangle, normal }
    }
}

/// `H x W` camera-space normals encoded as `(n + 1) / 2`, row-major from the top-left.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    data: Vec<[f32; 3]>,
}

impl NormalMap {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 3]>) -> Option<Self> {
        (data.len() == width * height).then_some(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[f32; 3]] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        self.data[row * self.width + col]
    }

    /// Camera-space normal `2 rgb - 1`.
    pub fn decoded(&self, row: usize, col: usize) -> Vector3<f64> {
        let [r, g, b] = self.pixel(row, col);
        Vector3::new(r as f64, g as f64, b as f64) * 2.0 - Vector3::repeat(1.0)
    }

    /// Raw dump: `NRMF`, then version, height and width as u32, then f32 RGB, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(NRMF_HEADER + 12 * self.data.len());
        out.extend_from_slice(NRMF_MAGIC);
        for v in [NRMF_VERSION, self.height as u32, self.width as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in self.data.iter().flatten() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RenderError> {
        if bytes.len() < NRMF_HEADER {
            return Err(RenderError::Truncated { expected: NRMF_HEADER, actual: bytes.len() });
        }
        if &bytes[..4] != NRMF_MAGIC {
            return Err(RenderError::BadMagic);
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != NRMF_VERSION {
            return Err(RenderError::UnsupportedVersion(version));
        }
        let (height, width) = (word(8) as usize, word(12) as usize);
        let expected = NRMF_HEADER + 12 * width * height;
        if bytes.len() != expected {
            return Err(RenderError::Truncated { expected, actual: bytes.len() });
        }
        let data = bytes[NRMF_HEADER..]
            .chunks_exact(12)
            .map(|c| {
                let f = |i: usize| f32::from_le_bytes(c[i..i + 4].try_into().expect("4 bytes"));
                [f(0), f(4), f(8)]
            })
            .collect();
        Ok(Self { width, height, data })
    }

    pub fn write_raw(&self, path: &Path) -> Result<(), RenderError> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn read_raw(path: &Path) -> Result<Self, RenderError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// 8-bit RGB preview.
    pub fn save_png(&self, path: &Path) -> Result<(), RenderError> {
        let bytes: Vec<u8> = self.data.iter().flatten().map(|&c| to_u8(c)).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer matches dimensions")
            .save(path)
            .map_err(|e| RenderError::Image(e.to_string()))
    }
}

/// Row-major gray levels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RenderError> {
        let bytes: Vec<u8> = self.data.iter().map(|&c| to_u8(c)).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer matches dimensions")
            .save(path)
            .map_err(|e| RenderError::Image(e.to_string()))
    }
}

fn to_u8(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(n: &Vector3<f64>, frame: &CameraFrame) -> [f32; 3] {
    let cam = [n.dot(&frame.right), n.dot(&frame.up), n.dot(&frame.back)];
    cam.map(|c| ((c + 1.0) * 0.5) as f32)
}

pub fn render_normals(mesh: &TriMesh, pose: &CameraPose) -> Result<NormalMap, RenderError> {
    render_normals_with(&Scene::new(mesh)?, pose, RenderOptions::default())
}

pub fn render_normals_with(scene: &Scene, pose: &CameraPose, options: RenderOptions) -> Result<NormalMap, RenderError> {
    let frame = pose.frame();
    let data = scene
        .cast(pose, options)?
        .iter()
        .map(|h| h.as_ref().map_or(BACKGROUND_NORMAL, |h| encode(&h.normal, &frame)))
        .collect();
    Ok(NormalMap { width: pose.resolution, height: pose.resolution, data })
}

/// Lambertian shading `0.2 + 0.8 max(0, n . l)` with `l` pointing towards the light.
pub fn render_gray(mesh: &TriMesh, pose: &CameraPose, light: &Vector3<f64>) -> Result<GrayImage, RenderError> {
    render_gray_with(&Scene::new(mesh)?, pose, light, RenderOptions::default())
}

pub fn render_gray_with(
    scene: &Scene,
    pose: &CameraPose,
    light: &Vector3<f64>,
    options: RenderOptions,
) -> Result<GrayImage, RenderError> {
    if !((light.norm() - 1.0).abs() < 1e-6) {
        return Err(RenderError::InvalidLight);
    }
    let shade = MIN_SHADE as f64;
    let data = scene
        .cast(pose, options)?
        .iter()
        .map(|h| h.as_ref().map_or(BACKGROUND_GRAY, |h| (shade + (1.0 - shade) * h.normal.dot(light).max(0.0)) as f32))
        .collect();
    Ok(GrayImage { width: pose.resolution, height: pose.resolution, data })
}

/// Symmetric Chamfer between `samples` area-uniform surface samples of each
/// mesh, both drawn with `seed`.
pub fn chamfer_metric(a: &TriMesh, b: &TriMesh, samples: usize, seed: u64) -> Result<f64, RenderError> {
    if a.triangle_count() == 0 || b.triangle_count() == 0 {
        return Err(RenderError::EmptyMesh);
    }
    let (pa, _) = sample_surface(a, samples, seed)?;
    let (pb, _) = sample_surface(b, samples, seed)?;
    Ok(chamfer_loss(pa.points(), pb.points()).expect("nonempty samples").loss)
}

#[cfg(test)]
mod tests;
