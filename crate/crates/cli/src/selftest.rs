//! The acceptance criteria, each checked against an independent oracle.
//!
//! Used by the `selftest` command and by the `acceptance` test target.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Point2, Point3, Rotation3, Vector3};
use serde::Serialize;
use serde_json::json;
use vdmforge::deformfit::{
    chamfer_loss, chamfer_loss_brute_force, extract_vdm, fit_from_scratch, gradient_check, FitConfig, FitTarget,
    SquareEmbedding,
};
use vdmforge::flatten::{deform_to_boundary, project_boundary, PartPatch};
use vdmforge::lasso::{dense_loop, flood_select, shortest_path, voxelize_surface, Voxel, VoxelGrid};
use vdmforge::mesh::{load_mesh, save_mesh, unit_grid, MeshFormat, OrientedPointSet};
use vdmforge::render::{
    render_normals_with, standard_poses, CameraPose, NormalMode, PoseKind, RenderOptions, Scene, Traversal,
};
use vdmforge::rng::{index, seeded, uniform, unit_f64, Rng};
use vdmforge::shapes::{disk_patch, gaussian_bump, gaussian_bump_normal, height_field, icosphere, torus, unit_cube};
use vdmforge::vdm::{apply_to_plane, read_vdm, write_vdm, VdmImage, VdmMetadata};
use vdmforge::winding::{winding_number, WindingTree};
use vdmforge::TriMesh;

use crate::args::SelftestArgs;
use crate::record::{write_json, RunRecord};
use crate::{lib, CliError};

/// Hidden width used by the fitting criteria (the default 512 is too slow for a desk machine).
pub const FIT_WIDTH: usize = 64;

pub const CRITERIA: [(u32, &str); 10] = [
    (1, "gradient-preserving deformation vs dense least squares"),
    (2, "objective gradient vs central differences"),
    (3, "kd-tree Chamfer vs brute force"),
    (4, "identity fit"),
    (5, "Gaussian bump roundtrip"),
    (6, "winding-number classification"),
    (7, "voxel lasso paths and partition"),
    (8, "camera pose lists"),
    (9, "renderer analytic checks"),
    (10, "format and fit reproducibility"),
];

#[derive(Debug, Clone)]
pub struct Settings {
    pub fit_width: usize,
    pub identity_epochs: usize,
    pub bump_epochs: usize,
    /// Scratch directory for file round trips.
    pub work_dir: PathBuf,
}

impl Settings {
    pub fn new(work_dir: &Path) -> Self {
        Self { fit_width: FIT_WIDTH, identity_epochs: 500, bump_epochs: 3000, work_dir: work_dir.to_path_buf() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "criterion {:>2} {verdict} [{:.1} s] {}: {}", self.id, self.seconds, self.name, self.detail)
    }
}

type Check = Result<(bool, String), CliError>;

pub fn run_criterion(id: u32, settings: &Settings) -> CriterionResult {
    let name = CRITERIA.iter().find(|c| c.0 == id).map_or("unknown", |c| c.1);
    let started = Instant::now();
    let outcome = match id {
        1 => deformation_oracle(),
        2 => gradient_oracle(),
        3 => chamfer_oracle(),
        4 => identity_fit(settings),
        5 => bump_roundtrip(settings),
        6 => winding_suite(),
        7 => lasso_suite(),
        8 => pose_lists(),
        9 => renderer_checks(),
        10 => reproducibility(settings),
        _ => Ok((false, "no such criterion".into())),
    };
    let seconds = started.elapsed().as_secs_f64();
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult { id, name, passed, detail, seconds }
}

pub fn command(a: &SelftestArgs) -> Result<RunRecord, CliError> {
    let mut rec = RunRecord::new("selftest");
    let dir = tempfile::tempdir().map_err(|e| CliError::io(Path::new("<tempdir>"), e))?;
    let settings = Settings { fit_width: a.fit_width, ..Settings::new(dir.path()) };
    let ids: Vec<u32> = if a.only.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { a.only.clone() };
    let mut results = Vec::new();
    for id in ids {
        let r = run_criterion(id, &settings);
        println!("{r}");
        results.push(r);
    }
    if let Some(path) = &a.output {
        write_json(path, &results)?;
        rec.output(path)?;
    }
    rec.config = json!({ "fit_width": settings.fit_width, "identity_epochs": settings.identity_epochs, "bump_epochs": settings.bump_epochs });
    rec.summary = serde_json::to_value(&results).expect("serializable");
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::CriteriaFailed { failed });
    }
    Ok(rec)
}

fn max_diff(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// 1

fn random_patch(rng: &mut Rng, k: usize) -> Result<PartPatch, CliError> {
    let mesh = if k % 2 == 0 {
        let g = unit_grid(3 + index(rng, 4));
        let amp = uniform(rng, 0.05, 0.4);
        let pos = g
            .vertices()
            .iter()
            .map(|p| {
                let h = amp * (std::f64::consts::PI * p.x).sin() * (std::f64::consts::PI * p.y).sin();
                p + Vector3::new(uniform(rng, -0.03, 0.03), uniform(rng, -0.03, 0.03), h + uniform(rng, -0.02, 0.02))
            })
            .collect();
        g.with_positions(pos).map_err(lib)?
    } else {
        let (rings, segments) = (2 + index(rng, 2), 8 + index(rng, 5));
        let amp = uniform(rng, -0.3, 0.3);
        let d = disk_patch(Point2::new(0.5, 0.5), 0.4, rings, segments, |r| amp * (1.0 - (r / 0.4).powi(2)));
        let pos = d
            .vertices()
            .iter()
            .map(|p| p + Vector3::new(uniform(rng, -0.01, 0.01), uniform(rng, -0.01, 0.01), uniform(rng, -0.02, 0.02)))
            .collect();
        d.with_positions(pos).map_err(lib)?
    };
    let rot = Rotation3::from_scaled_axis(Vector3::new(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)));
    let pos = mesh.vertices().iter().map(|p| rot * p).collect();
    PartPatch::new(mesh.with_positions(pos).map_err(lib)?).map_err(lib)
}

/// Least squares over the edge-difference equations with the boundary moved to the right-hand side.
fn dense_deformation(patch: &PartPatch, bprime: &[Point3<f64>]) -> Vec<Point3<f64>> {
    let x = patch.mesh().vertices();
    let mut out = x.to_vec();
    let mut fixed: Vec<Option<Point3<f64>>> = vec![None; x.len()];
    for (&v, p) in patch.boundary().vertices.iter().zip(bprime) {
        fixed[v] = Some(*p);
        out[v] = *p;
    }
    let column: HashMap<usize, usize> = patch.interior().iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let edges = patch.edges();
    for c in 0..3 {
        let mut m = DMatrix::zeros(edges.len(), column.len());
        let mut r = DVector::zeros(edges.len());
        for (e, &[p, q]) in edges.iter().enumerate() {
            r[e] = x[p][c] - x[q][c];
            for (v, sign) in [(p, 1.0), (q, -1.0)] {
                match column.get(&v) {
                    Some(&i) => m[(e, i)] += sign,
                    None => r[e] -= sign * fixed[v].expect("boundary vertex")[c],
                }
            }
        }
        let sol = m.svd(true, true).solve(&r, 1e-14).expect("svd solve");
        for (&v, &i) in &column {
            out[v][c] = sol[i];
        }
    }
    out
}

fn deformation_oracle() -> Check {
    let started = Instant::now();
    let mut rng = seeded(101);
    let (mut worst, mut exact, mut largest) = (0.0f64, 0.0f64, 0);
    for k in 0..20 {
        let patch = random_patch(&mut rng, k)?;
        largest = largest.max(patch.interior().len());
        let plane = patch.boundary_plane().map_err(lib)?;
        let bprime = project_boundary(&patch, &plane);
        let out = deform_to_boundary(&patch, &bprime).map_err(lib)?;
        worst = worst.max(max_diff(out.vertices(), &dense_deformation(&patch, &bprime)));

        let b = patch.boundary_points();
        let same = deform_to_boundary(&patch, &b).map_err(lib)?;
        exact = exact.max(max_diff(same.vertices(), patch.mesh().vertices()));
        let t = Vector3::new(uniform(&mut rng, -2.0, 2.0), uniform(&mut rng, -2.0, 2.0), uniform(&mut rng, -2.0, 2.0));
        let moved: Vec<Point3<f64>> = b.iter().map(|p| p + t).collect();
        let shifted = deform_to_boundary(&patch, &moved).map_err(lib)?;
        let expected: Vec<Point3<f64>> = patch.mesh().vertices().iter().map(|p| p + t).collect();
        exact = exact.max(max_diff(shifted.vertices(), &expected));
    }
    let secs = started.elapsed().as_secs_f64();
    Ok((
        worst < 1e-7 && exact < 1e-9 && largest <= 30 && secs < 10.0,
        format!("max |solver - dense| {worst:.2e} (< 1e-7), identity/translation {exact:.2e} (< 1e-9), up to {largest} interior vertices, {secs:.2} s (< 10 s)"),
    ))
}

// ---------------------------------------------------------------------------
// 2

fn gradient_oracle() -> Check {
    let started = Instant::now();
    let check = gradient_check(16, 100, 1e-4, 2).map_err(lib)?;
    let secs = started.elapsed().as_secs_f64();
    Ok((
        check.probes == 100 && check.max_relative_error < 1e-4 && secs < 60.0,
        format!(
            "{} probes, max relative error {:.2e} (< 1e-4), {} redrawn at kinks, {secs:.1} s (< 60 s)",
            check.probes, check.max_relative_error, check.redrawn
        ),
    ))
}

// ---------------------------------------------------------------------------
// 3

fn chamfer_oracle() -> Check {
    let started = Instant::now();
    let mut rng = seeded(303);
    let cloud = |rng: &mut Rng| -> Vec<Point3<f64>> {
        (0..50).map(|_| Point3::new(unit_f64(rng), unit_f64(rng), unit_f64(rng))).collect()
    };
    let mut mismatches = 0;
    for _ in 0..50 {
        let (p, q) = (cloud(&mut rng), cloud(&mut rng));
        let fast = chamfer_loss(&p, &q).expect("nonempty");
        let slow = chamfer_loss_brute_force(&p, &q).expect("nonempty");
        if fast.loss != slow.loss || fast.p_to_q != slow.p_to_q || fast.q_to_p != slow.q_to_p || fast.grad != slow.grad {
            mismatches += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Ok((
        mismatches == 0 && secs < 5.0,
        format!("{mismatches} of 50 instances differ in value, pairing or gradient; {secs:.2} s (< 5 s)"),
    ))
}

// ---------------------------------------------------------------------------
// 4, 5

fn identity_fit(s: &Settings) -> Check {
    let started = Instant::now();
    let cfg = FitConfig { epochs: s.identity_epochs, width: s.fit_width, seed: 4, ..FitConfig::default() };
    let (_, report) = fit_from_scratch(&FitTarget::Mesh(unit_grid(1)), &SquareEmbedding::canonical(), &cfg).map_err(lib)?;
    let secs = started.elapsed().as_secs_f64();
    let m = &report.metrics;
    Ok((
        m.heldout_chamfer < 1e-6 && secs < 180.0,
        format!(
            "width {}, {} epochs: held-out Chamfer {:.3e} side^2 (< 1e-6), point-to-point {:.3e}, {secs:.0} s (< 180 s)",
            s.fit_width, s.identity_epochs, m.heldout_chamfer, m.heldout_point_chamfer
        ),
    ))
}

fn bump_samples(n: usize, seed: u64) -> Result<OrientedPointSet, CliError> {
    let mut rng = seeded(seed);
    let (mut pts, mut nrm) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let (u, v) = (unit_f64(&mut rng), unit_f64(&mut rng));
        pts.push(Point3::new(u, v, gaussian_bump(u, v)));
        nrm.push(gaussian_bump_normal(u, v));
    }
    OrientedPointSet::new(pts, nrm).map_err(lib)
}

fn bump_roundtrip(s: &Settings) -> Check {
    let started = Instant::now();
    let target = FitTarget::Split { train: bump_samples(100_000, 51)?, heldout: bump_samples(100_000, 52)? };
    let cfg = FitConfig { epochs: s.bump_epochs, width: s.fit_width, seed: 5, ..FitConfig::default() };
    let emb = SquareEmbedding::canonical();
    let (field, report) = fit_from_scratch(&target, &emb, &cfg).map_err(lib)?;
    let vdm = extract_vdm(&field, &emb, 256).map_err(lib)?;
    let plane = apply_to_plane(&vdm, 256).map_err(lib)?;
    let vertical = plane.vertices().iter().map(|p| (p.z - gaussian_bump(p.x, p.y)).abs()).sum::<f64>()
        / plane.vertex_count() as f64;
    let secs = started.elapsed().as_secs_f64();
    let chamfer = report.metrics.heldout_chamfer;
    Ok((
        vertical < 5e-3 && chamfer < 1e-4 && secs < 900.0,
        format!(
            "width {}, {} epochs: mean vertical error {vertical:.3e} side (< 5e-3), held-out Chamfer {chamfer:.3e} side^2 (< 1e-4), {secs:.0} s (< 900 s)",
            s.fit_width, s.bump_epochs
        ),
    ))
}

// ---------------------------------------------------------------------------
// 6

fn winding_suite() -> Check {
    let started = Instant::now();
    let cube_sd = |p: &Point3<f64>| {
        let d = p.coords.map(|c| (c - 0.5).abs() - 0.5);
        let outside = d.map(|c| c.max(0.0)).norm();
        outside + d.max().min(0.0)
    };
    let sphere_sd = |p: &Point3<f64>| p.coords.norm() - 1.0;
    let (major, minor) = (0.6, 0.25);
    let torus_sd = move |p: &Point3<f64>| ((p.x.hypot(p.y) - major).powi(2) + p.z * p.z).sqrt() - minor;
    type Sdf<'a> = &'a dyn Fn(&Point3<f64>) -> f64;
    let cases: [(&str, TriMesh, Sdf); 3] = [
        ("cube", unit_cube(), &cube_sd),
        ("icosphere", icosphere(3), &sphere_sd),
        ("torus", torus(major, minor, 64, 32), &torus_sd),
    ];
    let mut rng = seeded(606);
    let mut parts = Vec::new();
    let mut all_ok = true;
    for (name, mesh, sdf) in cases {
        let tree = WindingTree::new(&mesh);
        let bb = mesh.bounding_box();
        let (lo, hi) = (bb.min - Vector3::repeat(0.2), bb.max + Vector3::repeat(0.2));
        let (mut wrong, mut accel_err, mut probes) = (0, 0.0f64, 0);
        while probes < 1000 {
            let q = Point3::new(uniform(&mut rng, lo.x, hi.x), uniform(&mut rng, lo.y, hi.y), uniform(&mut rng, lo.z, hi.z));
            // keep clear of the gap between the faceted mesh and the analytic surface
            let d = sdf(&q);
            if d.abs() < 0.02 {
                continue;
            }
            probes += 1;
            let truth = if d < 0.0 { 1.0 } else { 0.0 };
            let w = winding_number(&mesh, &q).map_err(lib)?;
            if (w - truth).abs() >= 1e-6 {
                wrong += 1;
            }
            accel_err = accel_err.max((tree.evaluate(&q).map_err(lib)? - w).abs());
        }
        all_ok &= wrong == 0 && accel_err < 1e-4;
        parts.push(format!("{name}: {wrong} misclassified, accelerated error {accel_err:.1e}"));
    }
    let secs = started.elapsed().as_secs_f64();
    Ok((all_ok && secs < 30.0, format!("{} (1000 probes each), {secs:.1} s (< 30 s)", parts.join("; "))))
}

// ---------------------------------------------------------------------------
// 7

/// Single-source distances over the explicit 26-neighbor edge list.
fn bellman_ford(grid: &VoxelGrid, src: Voxel) -> HashMap<Voxel, f64> {
    let vox = grid.occupied();
    let pos: HashMap<Voxel, usize> = vox.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let mut edges = Vec::new();
    for (i, a) in vox.iter().enumerate() {
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(&j) = pos.get(&Voxel::new(a.0[0] + dx, a.0[1] + dy, a.0[2] + dz)) {
                        if i != j {
                            edges.push((i, j, ((dx * dx + dy * dy + dz * dz) as f64).sqrt()));
                        }
                    }
                }
            }
        }
    }
    let mut d = vec![f64::INFINITY; vox.len()];
    d[pos[&src]] = 0.0;
    for _ in 0..vox.len() {
        let mut changed = false;
        for &(i, j, w) in &edges {
            if d[i] + w < d[j] {
                d[j] = d[i] + w;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    vox.iter().copied().zip(d).collect()
}

fn random_surface(rng: &mut Rng, k: usize) -> Result<VoxelGrid, CliError> {
    let base = match k % 3 {
        0 => icosphere(2),
        1 => torus(0.7, 0.3, 32, 16),
        _ => unit_cube(),
    };
    let rot = Rotation3::from_scaled_axis(Vector3::new(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)));
    let mesh = base.with_positions(base.vertices().iter().map(|p| rot * p).collect()).map_err(lib)?;
    voxelize_surface(&mesh, 12 + index(rng, 21)).map_err(lib)
}

fn lasso_paths() -> Result<(bool, String), CliError> {
    let mut rng = seeded(707);
    let (mut loops, mut segments, mut worst, mut redraws, mut max_res) = (0, 0, 0.0f64, 0, 0);
    for k in 0..10 {
        let grid = random_surface(&mut rng, k)?;
        max_res = max_res.max(grid.resolution());
        let lasso = loop {
            let keys: Vec<Voxel> = (0..4).map(|_| grid.occupied()[index(&mut rng, grid.len())]).collect();
            match dense_loop(&grid, &keys) {
                Ok(l) => break Some((keys, l)),
                Err(_) if redraws < 500 => redraws += 1,
                Err(_) => break None,
            }
        };
        let Some((keys, l)) = lasso else {
            return Ok((false, format!("no valid loop found on surface {k}")));
        };
        loops += 1;
        for (i, cost) in l.segment_costs.iter().enumerate() {
            let oracle = bellman_ford(&grid, keys[i])[&keys[(i + 1) % keys.len()]];
            worst = worst.max((cost - oracle).abs());
            let (_, direct) = shortest_path(&grid, keys[i], keys[(i + 1) % keys.len()]).map_err(lib)?;
            worst = worst.max((direct - oracle).abs());
            segments += 1;
        }
        worst = worst.max((l.length() - l.segment_costs.iter().sum::<f64>()).abs());
    }
    Ok((
        worst < 1e-9 && max_res <= 32,
        format!("{loops} loops / {segments} segments on surfaces up to {max_res}^3, max |cost - Bellman-Ford| {worst:.1e} ({redraws} keypoint redraws)"),
    ))
}

fn partition_fixtures() -> Result<(bool, String), CliError> {
    let slab = VoxelGrid::from_occupancy(16, Point3::origin(), 1.0, (0..16).flat_map(|x| (0..16).map(move |y| Voxel::new(x, y, 0))))
        .map_err(lib)?;
    let cube = voxelize_surface(&unit_cube(), 20).map_err(lib)?;
    let sphere = voxelize_surface(&icosphere(3), 24).map_err(lib)?;
    let near = |g: &VoxelGrid, p: [f64; 3]| g.nearest_occupied(&Point3::from(p)).expect("occupied");
    let ring = |g: &VoxelGrid, pts: &[[f64; 3]]| pts.iter().map(|p| near(g, *p)).collect::<Vec<_>>();
    let six: Vec<[f64; 3]> = (0..6)
        .map(|k| {
            let a = k as f64 * std::f64::consts::PI / 3.0;
            [a.cos(), a.sin(), 0.0]
        })
        .collect();
    let fixtures = [
        ("slab", &slab, vec![Voxel::new(2, 2, 0), Voxel::new(13, 2, 0), Voxel::new(13, 13, 0), Voxel::new(2, 13, 0)], Voxel::new(7, 7, 0), Voxel::new(0, 0, 0), 0),
        (
            "cube",
            &cube,
            ring(&cube, &[[0.0, 0.0, 0.5], [1.0, 0.0, 0.5], [1.0, 1.0, 0.5], [0.0, 1.0, 0.5]]),
            near(&cube, [0.5, 0.5, 1.0]),
            near(&cube, [0.5, 0.5, 0.0]),
            1,
        ),
        ("sphere", &sphere, ring(&sphere, &six), near(&sphere, [0.0, 0.0, 1.0]), near(&sphere, [0.0, 0.0, -1.0]), 1),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, grid, keys, inside_seed, outside_seed, dilation) in fixtures {
        let l = dense_loop(grid, &keys).map_err(lib)?;
        let inside = flood_select(grid, &l, inside_seed, dilation).map_err(lib)?;
        let outside = flood_select(grid, &l, outside_seed, dilation).map_err(lib)?;
        let mut union: BTreeSet<Voxel> = inside.union(&outside).copied().collect();
        union.extend(l.voxels.iter().copied());
        let all: BTreeSet<Voxel> = grid.occupied().iter().copied().collect();
        let holds = union == all && !inside.contains(&outside_seed) && !outside.contains(&inside_seed);
        ok &= holds;
        parts.push(format!("{name} {}/{}/{} of {}", inside.len(), outside.len(), l.voxels.len(), all.len()));
    }
    Ok((ok, format!("partition {} ({})", if ok { "holds" } else { "violated" }, parts.join(", "))))
}

fn lasso_suite() -> Check {
    let started = Instant::now();
    let (paths_ok, paths) = lasso_paths()?;
    let (part_ok, part) = partition_fixtures()?;
    let secs = started.elapsed().as_secs_f64();
    Ok((paths_ok && part_ok && secs < 30.0, format!("{paths}; {part}; {secs:.1} s (< 30 s)")))
}

// ---------------------------------------------------------------------------
// 8

fn pose_lists() -> Check {
    let generation: Vec<(f64, f64)> = vec![(0.0, -60.0), (0.0, -30.0), (0.0, 30.0), (0.0, 60.0), (45.0, 0.0), (-45.0, 0.0)];
    let evaluation: Vec<(f64, f64)> = vec![
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
    let key = |v: &[(f64, f64)]| -> BTreeSet<(i64, i64)> { v.iter().map(|&(e, a)| (e as i64, a as i64)).collect() };
    let list = |k| standard_poses(k).iter().map(|p| (p.elevation, p.azimuth)).collect::<Vec<_>>();
    let (g, e) = (list(PoseKind::Generation), list(PoseKind::Evaluation));
    let ok = g == generation && e.len() == 13 && key(&e) == key(&evaluation) && e.contains(&(0.0, 0.0));
    Ok((ok, format!("{} generation poses, {} evaluation poses, lists {}", g.len(), e.len(), if ok { "match" } else { "differ" })))
}

// ---------------------------------------------------------------------------
// 9

fn renderer_checks() -> Check {
    let started = Instant::now();
    let defaults = RenderOptions::default();

    let plane = unit_grid(4);
    let scene = Scene::new(&plane).map_err(lib)?;
    let pose = CameraPose::new(0.0, 0.0).map_err(lib)?.with_frame(Point3::new(0.5, 0.5, 0.0), 1.5, 64).map_err(lib)?;
    let hits = scene.cast(&pose, defaults).map_err(lib)?;
    let map = render_normals_with(&scene, &pose, defaults).map_err(lib)?;
    let covered = hits.iter().filter(|h| h.is_some()).count();
    let frontal_ok = covered > 0 && map.data().iter().all(|px| *px == [0.5, 0.5, 1.0]);

    let sphere = icosphere(5);
    let radial = sphere.vertices().iter().map(|v| v.coords.normalize()).collect();
    let sphere = sphere.with_normals(radial).map_err(lib)?;
    let scene = Scene::new(&sphere).map_err(lib)?;
    let interpolated = RenderOptions { normals: NormalMode::Interpolated, ..defaults };
    let (mut smooth_err, mut face_excess, mut face_err) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for (el, az) in [(0.0, 0.0), (30.0, -45.0), (-60.0, 120.0)] {
        let pose = CameraPose::new(el, az).map_err(lib)?.with_frame(Point3::origin(), 2.5, 128).map_err(lib)?;
        let view = pose.view_matrix();
        let hits = scene.cast(&pose, interpolated).map_err(lib)?;
        let smooth = render_normals_with(&scene, &pose, interpolated).map_err(lib)?;
        let faceted = render_normals_with(&scene, &pose, defaults).map_err(lib)?;
        for (k, h) in hits.iter().enumerate() {
            let Some(h) = h else { continue };
            let analytic = view * h.point.coords.normalize();
            smooth_err = smooth_err.max((smooth.decoded(k / 128, k % 128) - analytic).norm());
            let e = (faceted.decoded(k / 128, k % 128) - analytic).norm();
            face_err = face_err.max(e);
            face_excess = face_excess.max(e - circumradius(&sphere.triangle_points(h.triangle)));
        }
    }

    let mut rng = seeded(909);
    let mut identical = true;
    for _ in 0..3 {
        let (mut vertices, mut triangles) = (Vec::new(), Vec::new());
        for t in 0..200 {
            let c = Vector3::new(unit_f64(&mut rng), unit_f64(&mut rng), uniform(&mut rng, -0.5, 0.5));
            for _ in 0..3 {
                let j = Vector3::new(uniform(&mut rng, -0.2, 0.2), uniform(&mut rng, -0.2, 0.2), uniform(&mut rng, -0.2, 0.2));
                vertices.push(Point3::from(c + j));
            }
            triangles.push([3 * t, 3 * t + 1, 3 * t + 2]);
        }
        let soup = TriMesh::new(vertices, triangles).map_err(lib)?;
        let scene = Scene::new(&soup).map_err(lib)?;
        for (el, az) in [(0.0, 0.0), (45.0, 30.0)] {
            let pose = CameraPose::new(el, az).map_err(lib)?.with_frame(Point3::new(0.5, 0.5, 0.0), 1.6, 64).map_err(lib)?;
            let brute = RenderOptions { traversal: Traversal::BruteForce, ..defaults };
            let a = render_normals_with(&scene, &pose, defaults).map_err(lib)?;
            let b = render_normals_with(&scene, &pose, brute).map_err(lib)?;
            identical &= a.to_bytes() == b.to_bytes();
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Ok((
        frontal_ok && smooth_err < 1e-3 && face_excess <= 1e-6 && identical && secs < 60.0,
        format!(
            "frontal plane uniform: {frontal_ok} ({covered} px); sphere interpolated-normal error {smooth_err:.2e} (< 1e-3), \
             face-normal error {face_err:.2e} within facet circumradius bound: {}; BVH == brute force at 64x64: {identical}; {secs:.1} s (< 60 s)",
            face_excess <= 1e-6
        ),
    ))
}

fn circumradius(tri: &[Point3<f64>; 3]) -> f64 {
    let (a, b, c) = ((tri[1] - tri[2]).norm(), (tri[0] - tri[2]).norm(), (tri[0] - tri[1]).norm());
    let area = (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm() / 2.0;
    a * b * c / (4.0 * area)
}

// ---------------------------------------------------------------------------
// 10

fn reproducibility(s: &Settings) -> Check {
    let dir = &s.work_dir;
    let mut rng = seeded(1010);
    let data: Vec<[f32; 3]> = (0..32 * 32).map(|_| [0, 1, 2].map(|_| uniform(&mut rng, -0.5, 0.5) as f32)).collect();
    let vdm = VdmImage::new(32, data, VdmMetadata { source: "selftest".into(), seed: Some(7), ..VdmMetadata::default() })
        .map_err(lib)?;
    let vdm_path = dir.join("roundtrip.vdmf");
    write_vdm(&vdm, &vdm_path).map_err(lib)?;
    let vdm_ok = read_vdm(&vdm_path).map_err(lib)?.to_bytes() == vdm.to_bytes()
        && std::fs::read(&vdm_path).map_err(|e| CliError::io(&vdm_path, e))? == vdm.to_bytes();

    let mesh = torus(0.5, 0.2, 24, 12);
    let (a, b) = (dir.join("a.ply"), dir.join("b.ply"));
    save_mesh(&mesh, &a, MeshFormat::PlyBinary).map_err(lib)?;
    let loaded = load_mesh(&a).map_err(lib)?;
    save_mesh(&loaded, &b, MeshFormat::PlyBinary).map_err(lib)?;
    let read = |p: &Path| std::fs::read(p).map_err(|e| CliError::io(p, e));
    let ply_ok = read(&a)? == read(&b)? && loaded.vertices() == mesh.vertices() && loaded.triangles() == mesh.triangles();

    let target = dir.join("bump_tile.ply");
    save_mesh(&height_field(32, gaussian_bump), &target, MeshFormat::PlyBinary).map_err(lib)?;
    let fit_once = |name: &str| -> Result<(i32, PathBuf), CliError> {
        let out = dir.join(name);
        let args = [
            "vdmforge", "--threads", "1", "fit-vdm", "--seed", "3", "--width", "64", "--epochs", "8",
            "--grid-samples", "1024", "--target-samples", "1024", "--boundary-samples", "64", "--resolution", "32",
        ];
        let mut argv: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        argv.extend(["--target".into(), target.display().to_string(), "--output".into(), out.display().to_string()]);
        Ok((crate::run(argv), out))
    };
    let (code_a, out_a) = fit_once("fit_a.vdmf")?;
    let (code_b, out_b) = fit_once("fit_b.vdmf")?;
    let fit_ok = code_a == 0 && code_b == 0 && read(&out_a)? == read(&out_b)?;
    Ok((
        vdm_ok && ply_ok && fit_ok,
        format!("vdmf bitwise roundtrip: {vdm_ok}; binary PLY bitwise roundtrip: {ply_ok}; fit-vdm twice (seed 3, 1 thread) byte-identical: {fit_ok}"),
    ))
}
