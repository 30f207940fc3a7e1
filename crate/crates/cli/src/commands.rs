use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Point2, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use vdmforge::deformfit::{extract_vdm, fit_from_scratch, FitConfig, FitReport, FitTarget, SquareEmbedding};
use vdmforge::flatten::{augment, flatten_part, smooth_seam, stitch_to_square, TileFrame};
use vdmforge::lasso::{dense_loop, extract_part, flood_select, voxelize_surface, Voxel};
use vdmforge::mesh::{load_mesh, load_points, sample_surface, save_mesh, save_points, MeshFormat};
use vdmforge::render::{
    render_gray_with, render_normals_with, standard_poses, CameraPose, NormalMode, PoseKind, RenderOptions, Scene,
};
use vdmforge::rng::{seeded, uniform};
use vdmforge::vdm::{apply_to_mesh, apply_to_plane, read_vdm, write_vdm, UvRegion, VdmImage, VdmMetadata};
use vdmforge::winding::filter_interior;
use vdmforge::TriMesh;

use crate::args::*;
use crate::record::{read_json, write_json, RunRecord};
use crate::{at, lib, manifest, selftest, CliError};

pub fn dispatch(command: &Command) -> Result<RunRecord, CliError> {
    match command {
        Command::ExtractPart(a) => extract_part_cmd(a),
        Command::FilterInterior(a) => filter_interior_cmd(a),
        Command::Flatten(a) => flatten_cmd(a),
        Command::Stitch(a) => stitch_cmd(a),
        Command::Augment(a) => augment_cmd(a),
        Command::FitVdm(a) => fit_vdm_cmd(a),
        Command::ApplyVdm(a) => apply_vdm_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Sample(a) => sample_cmd(a),
        Command::Selftest(a) => selftest::command(a),
        Command::Manifest(a) => manifest::command(a),
    }
}

pub fn read_mesh(path: &Path) -> Result<TriMesh, CliError> {
    load_mesh(path).map_err(at(path))
}

/// Writes OBJ or binary PLY according to the extension.
pub fn write_mesh(mesh: &TriMesh, path: &Path) -> Result<(), CliError> {
    let format = MeshFormat::from_path(path)
        .ok_or_else(|| CliError::Usage(format!("{}: mesh output must end in .obj or .ply", path.display())))?;
    save_mesh(mesh, path, format).map_err(at(path))
}

/// Voxel lasso description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFile {
    pub resolution: usize,
    /// Loop keypoints, in order around the part.
    pub keypoints: Vec<Voxel>,
    /// A voxel on the part side of the loop.
    pub seed: Voxel,
    #[serde(default = "default_dilation")]
    pub dilation: usize,
}

fn default_dilation() -> usize {
    1
}

/// Voxelizes, closes the keypoint loop, floods from the seed and cuts the part.
pub fn lasso_part(mesh: &TriMesh, keys: &KeypointFile) -> Result<(TriMesh, usize), CliError> {
    let grid = voxelize_surface(mesh, keys.resolution).map_err(lib)?;
    let lasso = dense_loop(&grid, &keys.keypoints).map_err(lib)?;
    let region: BTreeSet<Voxel> = flood_select(&grid, &lasso, keys.seed, keys.dilation).map_err(lib)?;
    let part = extract_part(mesh, &region, &grid).map_err(lib)?;
    Ok((part, region.len()))
}

fn extract_part_cmd(a: &ExtractPartArgs) -> Result<RunRecord, CliError> {
    let mut rec = RunRecord::new("extract-part");
    let mesh = read_mesh(&a.mesh)?;
    let keys: KeypointFile = read_json(&a.keypoints)?;
    let (part, region) = lasso_part(&mesh, &keys)?;
    write_mesh(&part, &a.output)?;
    rec.input(&a.mesh)?;
    rec.input(&a.keypoints)?;
    rec.output(&a.output)?;
    rec.config = serde_json::to_value(&keys).expect("serializable");
    rec.summary = json!({ "region_voxels": region, "triangles": part.triangle_count() });
    Ok(rec)
}

fn filter_interior_cmd(a: &FilterInteriorArgs) -> Result<RunRecord, CliError> {
    let mut rec = RunRecord::new("filter-interior");
    let points = load_points(&a.points).map_err(at(&a.points))?;
    let mesh = read_mesh(&a.mesh)?;
    let kept = filter_interior(&points, &mesh, a.threshold).map_err(lib)?;
    save_points(&kept, &a.output).map_err(at(&a.output))?;
    rec.input(&a.points)?;
    rec.input(&a.mesh)?;
    rec.output(&a.output)?;
    rec.config = json!({ "threshold": a.threshold });
    rec.summary = json!({ "input_points": points.len(), "kept_points": kept.len() });
    Ok(rec)
}

pub fn frame_json(frame: &TileFrame) -> Value {
    let v = |x: &Vector3<f64>| [x.x, x.y, x.z];
    json!({
        "center": [frame.center.x, frame.center.y, frame.center.z],
        "scale": frame.scale,
        "normal": v(&frame.plane.normal),
        "offset": frame.plane.offset,
        "tangent": v(&frame.plane.tangent),
        "bitangent": v(&frame.plane.bitangent),
    })
}

fn flatten_cmd(a: &FlattenArgs) -> Result<RunRecord, CliError> {
    let mut rec = RunRecord::new("flatten");
    let part = read_mesh(&a.part)?;
    let (flat, frame) = flatten_part(part, a.footprint).map_err(lib)?;
    write_mesh(&flat, &a.output)?;
    rec.input(&a.part)?;
    rec.output(&a.output)?;
    if let Some(path) = &a.frame {
        write_json(path, &frame_json(&frame))?;
        rec.output(path)?;
    }
    rec.config = json!({ "footprint": a.footprint });
    rec.summary = json!({ "frame": frame_json(&frame) });
    Ok(rec)
}

fn stitch_cmd(a: &StitchArgs) -> Result<RunRecord, CliError> {
    let mut rec = RunRecord::new("stitch");
    let part = read_mesh(&a.part)?;
    let stitched = stitch_to_square(&part, a.tile_resolution, a.margin).map_err(lib)?;
    let mesh = if a.smooth_rings > 0 {
        smooth_seam(&stitched, a.smooth_rings, a.smooth_lambda, a.smooth_iterations).map_err(lib)?
    } else {
        stitched.mesh.clone()
    };
    write_mesh(&mesh, &a.output)?;
    rec.input(&a.part)?;
    rec.output(&a.output)?;
    rec.config = json!({
        "tile_resolution": a.tile_resolution,
        "margin": a.margin,
        "smooth_rings": a.smooth_rings,
        "smooth_iterations": a.smooth_iterations,
        "smooth_lambda": a.smooth_lambda,
    });
    rec.summary = json!({
        "hole_loop": stitched.hole_loop.len(),
        "part_loop": stitched.part_loop.len(),
        "annulus_triangles": stitched.annulus_triangles,
    });
    Ok(rec)
}

/// Augmentation parameters: explicit values, or draws from a stream seeded by `seed`.
pub fn augmentation(seed: u64, translation: Option<[f64; 2]>, scale: Option<f64>, rotation: Option<f64>) -> (Vector2<f64>, f64, f64) {
    let mut rng = seeded(seed);
    let t = Vector2::new(uniform(&mut rng, -0.05, 0.05), uniform(&mut rng, -0.05, 0.05));
    let s = uniform(&mut rng, 0.9, 1.1);
    let r = uniform(&mut rng, -PI, PI);
    (translation.map_or(t, |[x, y]| Vector2::new(x, y)), scale.unwrap_or(s), rotation.unwrap_or(r))
}

fn augment_cmd(a: &AugmentArgs) -> Result<RunRecord, CliError> {
    let mut rec = RunRecord::new("augment");
    let part = read_mesh(&a.part)?;
    let (t, s, r) = augmentation(a.seed, a.translation, a.scale, a.rotation);
    let out = augment(&part, t, s, r).map_err(lib)?;
    write_mesh(&out, &a.output)?;
    rec.seed = Some(a.seed);
    rec.input(&a.part)?;
    rec.output(&a.output)?;
    rec.config = json!({ "translation": [t.x, t.y], "scale": s, "rotation": r });
    Ok(rec)
}

/// Meshes become [`FitTarget::Mesh`]; a PLY without faces is read as an oriented point cloud.
pub fn read_target(path: &Path) -> Result<FitTarget, CliError> {
    match load_mesh(path) {
        Ok(mesh) => Ok(FitTarget::Mesh(mesh)),
        Err(mesh_err) => match load_points(path) {
            Ok(points) => Ok(FitTarget::Points(points)),
            Err(_) => Err(at(path)(mesh_err)),
        },
    }
}

/// Defaults, then the config file, then flags.
pub fn fit_config(a: &FitVdmArgs) -> Result<FitConfig, CliError> {
    let mut cfg: FitConfig = match &a.config {
        Some(path) => read_json(path)?,
        None => FitConfig::default(),
    };
    cfg.seed = a.seed;
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.width, a.width);
    set(&mut cfg.grid_samples_per_step, a.grid_samples);
    set(&mut cfg.target_samples_per_step, a.target_samples);
    set(&mut cfg.boundary_samples_per_step, a.boundary_samples);
    set(&mut cfg.init.epochs, a.init_epochs);
    if let Some(lr) = a.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(w) = a.boundary_weight {
        cfg.boundary_weight = w;
    }
    cfg.validate().map_err(lib)?;
    Ok(cfg)
}

/// Fits from scratch in the tile frame and extracts the VDM.
pub fn fit_vdm(target: &FitTarget, cfg: &FitConfig, resolution: usize) -> Result<(VdmImage, FitReport), CliError> {
    let emb = SquareEmbedding::canonical();
    let (field, report) = fit_from_scratch(target, &emb, cfg).map_err(lib)?;
    let vdm = extract_vdm(&field, &emb, resolution).map_err(lib)?;
    let metadata = VdmMetadata { seed: Some(cfg.seed), ..vdm.metadata().clone() };
    Ok((vdm.with_metadata(metadata), report))
}

pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn fit_vdm_cmd(a: &FitVdmArgs) -> Result<RunRecord, CliError> {
    let mut rec = RunRecord::new("fit-vdm");
    let cfg = fit_config(a)?;
    let target = read_target(&a.target)?;
    let (vdm, report) = fit_vdm(&target, &cfg, a.resolution)?;
    write_vdm(&vdm, &a.output).map_err(at(&a.output))?;
    let report_path = a.report.clone().unwrap_or_else(|| with_suffix(&a.output, ".report.json"));
    write_json(&report_path, &report)?;
    rec.seed = Some(a.seed);
    rec.input(&a.target)?;
    if let Some(c) = &a.config {
        rec.input(c)?;
    }
    rec.output(&a.output)?;
    rec.output(&report_path)?;
    rec.config = json!({ "fit": cfg, "resolution": a.resolution });
    rec.summary = serde_json::to_value(&report.metrics).expect("serializable");
    Ok(rec)
}

fn apply_vdm_cmd(a: &ApplyVdmArgs) -> Result<RunRecord, CliError> {
    let mut rec = RunRecord::new("apply-vdm");
    let vdm = read_vdm(&a.vdm).map_err(at(&a.vdm))?;
    rec.input(&a.vdm)?;
    let out = match &a.base {
        Some(base_path) => {
            let base = read_mesh(base_path)?;
            rec.input(base_path)?;
            let region = match a.region {
                Some([u0, v0, u1, v1]) => UvRegion { min: Point2::new(u0, v0), max: Point2::new(u1, v1) },
                None => UvRegion::unit(),
            };
            apply_to_mesh(&vdm, &base, region, a.amplitude).map_err(lib)?
        }
        None => {
            if a.region.is_some() || a.amplitude != 1.0 {
                return Err(CliError::Usage("--region and --amplitude need --base".into()));
            }
            apply_to_plane(&vdm, a.subdivision).map_err(lib)?
        }
    };
    write_mesh(&out, &a.output)?;
    rec.output(&a.output)?;
    rec.config = json!({ "subdivision": a.subdivision, "region": a.region, "amplitude": a.amplitude });
    rec.summary = json!({ "vertices": out.vertex_count(), "resolution": vdm.resolution() });
    Ok(rec)
}

fn parse_pose_list(s: &str) -> Result<Vec<(f64, f64)>, CliError> {
    s.split(',')
        .map(|p| {
            let (el, az) = p
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("pose {p:?} is not `elevation:azimuth`")))?;
            let num = |x: &str| x.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("pose {p:?}: {e}")));
            Ok((num(el)?, num(az)?))
        })
        .collect()
}

pub fn pose_name(index: usize, pose: &CameraPose) -> String {
    format!("{index:02}_el{}_az{}", pose.elevation, pose.azimuth)
}

fn render_cmd(a: &RenderArgs) -> Result<RunRecord, CliError> {
    let mut rec = RunRecord::new("render");
    let mesh = read_mesh(&a.mesh)?;
    rec.input(&a.mesh)?;
    let target = Point3::from(a.target);
    let base: Vec<(f64, f64)> = match &a.pose {
        Some(list) => parse_pose_list(list)?,
        None => {
            let kind = match a.poses {
                PoseSet::Generation => PoseKind::Generation,
                PoseSet::Evaluation => PoseKind::Evaluation,
            };
            standard_poses(kind).iter().map(|p| (p.elevation, p.azimuth)).collect()
        }
    };
    let poses = base
        .iter()
        .map(|&(el, az)| CameraPose::new(el, az)?.with_frame(target, a.frame_width, a.resolution))
        .collect::<Result<Vec<_>, _>>()
        .map_err(lib)?;
    let options = RenderOptions {
        normals: match a.normals {
            NormalSource::Face => NormalMode::Face,
            NormalSource::Interpolated => NormalMode::Interpolated,
        },
        ..RenderOptions::default()
    };
    fs::create_dir_all(&a.output_dir).map_err(|e| CliError::io(&a.output_dir, e))?;
    let scene = Scene::new(&mesh).map_err(lib)?;
    for (i, pose) in poses.iter().enumerate() {
        let name = pose_name(i, pose);
        if matches!(a.shading, ShadingKind::Normals | ShadingKind::Both) {
            let map = render_normals_with(&scene, pose, options).map_err(lib)?;
            let raw = a.output_dir.join(format!("{name}.nrmf"));
            let png = a.output_dir.join(format!("{name}.png"));
            map.write_raw(&raw).map_err(at(&raw))?;
            map.save_png(&png).map_err(at(&png))?;
            rec.output(&raw)?;
            rec.output(&png)?;
        }
        if matches!(a.shading, ShadingKind::Gray | ShadingKind::Both) {
            let light = a.light.map_or(pose.frame().back, |l| Vector3::from(l).normalize());
            let img = render_gray_with(&scene, pose, &light, options).map_err(lib)?;
            let png = a.output_dir.join(format!("{name}_gray.png"));
            img.save_png(&png).map_err(at(&png))?;
            rec.output(&png)?;
        }
    }
    rec.config = json!({
        "poses": base,
        "resolution": a.resolution,
        "frame_width": a.frame_width,
        "target": a.target,
        "normals": format!("{:?}", options.normals),
        "light": a.light,
    });
    Ok(rec)
}

fn sample_cmd(a: &SampleArgs) -> Result<RunRecord, CliError> {
    let mut rec = RunRecord::new("sample");
    let mesh = read_mesh(&a.mesh)?;
    let (points, stats) = sample_surface(&mesh, a.count, a.seed).map_err(lib)?;
    save_points(&points, &a.output).map_err(at(&a.output))?;
    rec.seed = Some(a.seed);
    rec.input(&a.mesh)?;
    rec.output(&a.output)?;
    rec.config = json!({ "count": a.count });
    rec.summary = json!({ "skipped_triangles": stats.skipped_triangles.len() });
    Ok(rec)
}
