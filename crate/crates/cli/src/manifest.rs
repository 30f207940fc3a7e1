//! End-to-end runs over a directory of inputs.
//!
//! A manifest is JSON. Paths are relative to the manifest's directory:
//!
//! ```json
//! {
//!   "seed": 1,
//!   "output_dir": "out",
//!   "parts": [
//!     { "name": "nose", "mesh": "head.obj", "keypoints": "nose.keypoints.json" },
//!     { "name": "bump", "tile": "bump_tile.ply" }
//!   ],
//!   "fit": { "epochs": 3000, "width": 64 },
//!   "vdm_resolution": 256,
//!   "render": { "poses": "generation", "resolution": 320 }
//! }
//! ```
//!
//! A `mesh` + `keypoints` entry is lassoed, flattened and stitched onto a tile,
//! then the seam is smoothed (top-level `"seam": { "rings", "iterations",
//! "lambda" }`, default 2, 3, 0.5). A `tile` entry starts from an existing
//! tile mesh. The tile mesh itself is the fit target (multi-view
//! reconstruction is outside this tool). The VDM is then applied to a plane
//! and rendered.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use vdmforge::deformfit::{FitConfig, FitTarget};
use vdmforge::flatten::{flatten_part, smooth_seam, stitch_to_square};
use vdmforge::render::{render_normals_with, standard_poses, PoseKind, RenderOptions, Scene};
use vdmforge::vdm::{apply_to_plane, write_vdm};

use crate::args::ManifestArgs;
use crate::commands::{fit_vdm, frame_json, lasso_part, pose_name, read_mesh, write_mesh, KeypointFile};
use crate::record::{read_json, write_json, RunRecord};
use crate::{at, lib, CliError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PartSource {
    Lasso { mesh: PathBuf, keypoints: PathBuf },
    Tile { tile: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    #[serde(flatten)]
    pub source: PartSource,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub poses: PoseKind,
    pub resolution: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { poses: PoseKind::Generation, resolution: vdmforge::render::DEFAULT_RESOLUTION }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SeamSmoothing {
    pub rings: usize,
    pub iterations: usize,
    pub lambda: f64,
}

impl Default for SeamSmoothing {
    fn default() -> Self {
        Self { rings: 2, iterations: 3, lambda: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub parts: Vec<ManifestEntry>,
    #[serde(default = "default_footprint")]
    pub footprint: f64,
    #[serde(default = "default_tile_resolution")]
    pub tile_resolution: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Laplacian seam smoothing after stitching; 0 rings disables it.
    #[serde(default)]
    pub seam: SeamSmoothing,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default = "default_vdm_resolution")]
    pub vdm_resolution: usize,
    /// Renders of the VDM applied to a plane; skipped when null.
    #[serde(default)]
    pub render: Option<RenderSettings>,
}

fn default_footprint() -> f64 {
    0.8
}

fn default_tile_resolution() -> usize {
    64
}

fn default_margin() -> f64 {
    0.05
}

fn default_vdm_resolution() -> usize {
    256
}

#[derive(Debug, Clone, Serialize)]
pub struct PartOutcome {
    pub name: String,
    pub tile: PathBuf,
    pub vdm: PathBuf,
    pub report: PathBuf,
    pub final_loss: f64,
    pub heldout_chamfer: f64,
}

pub fn command(a: &ManifestArgs) -> Result<RunRecord, CliError> {
    let mut rec = RunRecord::new("manifest");
    let manifest: Manifest = read_json(&a.manifest)?;
    rec.input(&a.manifest)?;
    let root = a.manifest.parent().unwrap_or(Path::new("."));
    let (outcomes, inputs, outputs) = run_manifest(&manifest, root)?;
    for p in &inputs {
        rec.input(p)?;
    }
    for p in &outputs {
        rec.output(p)?;
    }
    let summary_path = root.join(&manifest.output_dir).join("manifest_report.json");
    write_json(&summary_path, &outcomes)?;
    rec.output(&summary_path)?;
    rec.seed = Some(manifest.seed);
    rec.config = serde_json::to_value(&manifest).expect("serializable");
    rec.summary = json!({ "parts": outcomes });
    Ok(rec)
}

/// Runs every entry; returns outcomes plus the input and output files touched.
pub fn run_manifest(manifest: &Manifest, root: &Path) -> Result<(Vec<PartOutcome>, Vec<PathBuf>, Vec<PathBuf>), CliError> {
    let out_root = root.join(&manifest.output_dir);
    let (mut inputs, mut outputs, mut outcomes) = (Vec::new(), Vec::new(), Vec::new());
    let mut fit = manifest.fit.clone();
    fit.seed = manifest.seed;
    for entry in &manifest.parts {
        let dir = out_root.join(&entry.name);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let tile_path = dir.join("tile.ply");
        let tile = match &entry.source {
            PartSource::Tile { tile } => {
                let path = root.join(tile);
                inputs.push(path.clone());
                read_mesh(&path)?
            }
            PartSource::Lasso { mesh, keypoints } => {
                let (mesh_path, keys_path) = (root.join(mesh), root.join(keypoints));
                inputs.extend([mesh_path.clone(), keys_path.clone()]);
                let keys: KeypointFile = read_json(&keys_path)?;
                let (part, _) = lasso_part(&read_mesh(&mesh_path)?, &keys)?;
                let part_path = dir.join("part.ply");
                write_mesh(&part, &part_path)?;
                let (flat, frame) = flatten_part(part, manifest.footprint).map_err(lib)?;
                let flat_path = dir.join("flat.ply");
                write_mesh(&flat, &flat_path)?;
                let frame_path = dir.join("frame.json");
                write_json(&frame_path, &frame_json(&frame))?;
                let stitched = stitch_to_square(&flat, manifest.tile_resolution, manifest.margin).map_err(lib)?;
                outputs.extend([part_path, flat_path, frame_path]);
                let seam = manifest.seam;
                if seam.rings > 0 {
                    smooth_seam(&stitched, seam.rings, seam.lambda, seam.iterations).map_err(lib)?
                } else {
                    stitched.mesh
                }
            }
        };
        write_mesh(&tile, &tile_path)?;
        outputs.push(tile_path.clone());

        let (vdm, report) = fit_vdm(&FitTarget::Mesh(tile), &fit, manifest.vdm_resolution)?;
        let (vdm_path, report_path) = (dir.join("vdm.vdmf"), dir.join("fit_report.json"));
        write_vdm(&vdm, &vdm_path).map_err(at(&vdm_path))?;
        write_json(&report_path, &report)?;
        outputs.extend([vdm_path.clone(), report_path.clone()]);

        if let Some(settings) = &manifest.render {
            let applied = apply_to_plane(&vdm, manifest.vdm_resolution).map_err(lib)?;
            let applied_path = dir.join("applied.ply");
            write_mesh(&applied, &applied_path)?;
            outputs.push(applied_path);
            let scene = Scene::new(&applied).map_err(lib)?;
            for (i, pose) in standard_poses(settings.poses).iter().enumerate() {
                let pose = pose.with_frame(pose.target, pose.frame_width, settings.resolution).map_err(lib)?;
                let map = render_normals_with(&scene, &pose, RenderOptions::default()).map_err(lib)?;
                let path = dir.join(format!("{}.nrmf", pose_name(i, &pose)));
                map.write_raw(&path).map_err(at(&path))?;
                outputs.push(path);
            }
        }
        outcomes.push(PartOutcome {
            name: entry.name.clone(),
            tile: tile_path,
            vdm: vdm_path,
            report: report_path,
            final_loss: report.metrics.final_loss,
            heldout_chamfer: report.metrics.heldout_chamfer,
        });
    }
    Ok((outcomes, inputs, outputs))
}
