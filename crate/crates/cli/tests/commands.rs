//! Command wrappers against direct library calls, exit codes and run-records.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::Point3;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;
use vdmforge::lasso::voxelize_surface;
use vdmforge::mesh::{load_mesh, load_points, sample_surface, save_mesh, save_points, MeshFormat};
use vdmforge::render::{render_normals, standard_poses, CameraPose, NormalMap, PoseKind};
use vdmforge::shapes::{gaussian_bump, height_field, icosphere};
use vdmforge::vdm::{read_vdm, write_vdm, VdmImage};
use vdmforge_cli::commands::KeypointFile;
use vdmforge_cli::{run, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

fn vdmforge(args: &[&str]) -> i32 {
    run(std::iter::once("vdmforge").chain(args.iter().copied()))
}

fn bump_tile(dir: &TempDir) -> PathBuf {
    let path = p(dir, "bump.ply");
    save_mesh(&height_field(48, gaussian_bump), &path, MeshFormat::PlyBinary).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn sample_matches_library_bitwise() {
    let dir = TempDir::new().unwrap();
    let mesh = bump_tile(&dir);
    let out = p(&dir, "cli.ply");
    assert_eq!(vdmforge(&["sample", "--mesh", &s(&mesh), "--count", "500", "--seed", "9", "--output", &s(&out)]), EXIT_OK);
    let (direct, _) = sample_surface(&load_mesh(&mesh).unwrap(), 500, 9).unwrap();
    let reference = p(&dir, "lib.ply");
    save_points(&direct, &reference).unwrap();
    assert_eq!(fs::read(&out).unwrap(), fs::read(&reference).unwrap());
}

#[test]
fn sample_is_independent_of_thread_count() {
    let dir = TempDir::new().unwrap();
    let mesh = bump_tile(&dir);
    let outputs: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|t| {
            let out = p(&dir, &format!("t{t}.ply"));
            let code = vdmforge(&["--threads", t, "sample", "--mesh", &s(&mesh), "--count", "2000", "--seed", "1", "--output", &s(&out)]);
            assert_eq!(code, EXIT_OK);
            fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn render_matches_library() {
    let dir = TempDir::new().unwrap();
    let mesh = bump_tile(&dir);
    let out = p(&dir, "renders");
    let code = vdmforge(&["render", "--mesh", &s(&mesh), "--output-dir", &s(&out), "--resolution", "40", "--shading", "both"]);
    assert_eq!(code, EXIT_OK);
    let m = load_mesh(&mesh).unwrap();
    for (i, pose) in standard_poses(PoseKind::Generation).iter().enumerate() {
        let pose = pose.with_frame(pose.target, pose.frame_width, 40).unwrap();
        let name = format!("{i:02}_el{}_az{}", pose.elevation, pose.azimuth);
        let dumped = NormalMap::read_raw(&out.join(format!("{name}.nrmf"))).unwrap();
        assert_eq!(dumped, render_normals(&m, &pose).unwrap(), "{name}");
        assert!(out.join(format!("{name}.png")).exists());
        assert!(out.join(format!("{name}_gray.png")).exists());
    }
}

#[test]
fn explicit_poses_replace_the_standard_set() {
    let dir = TempDir::new().unwrap();
    let mesh = bump_tile(&dir);
    let out = p(&dir, "renders");
    let code = vdmforge(&["render", "--mesh", &s(&mesh), "--output-dir", &s(&out), "--resolution", "16", "--pose", "10:-20,0:0"]);
    assert_eq!(code, EXIT_OK);
    let pose = CameraPose::new(10.0, -20.0).unwrap().with_frame(Point3::new(0.5, 0.5, 0.0), 1.5, 16).unwrap();
    let dumped = NormalMap::read_raw(&out.join("00_el10_az-20.nrmf")).unwrap();
    assert_eq!(dumped, render_normals(&load_mesh(&mesh).unwrap(), &pose).unwrap());
    assert!(out.join("01_el0_az0.nrmf").exists());
    let nrmf = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "nrmf"));
    assert_eq!(nrmf.count(), 2);
}

#[test]
fn zero_vdm_leaves_base_mesh_in_place() {
    let dir = TempDir::new().unwrap();
    let base = bump_tile(&dir);
    let vdm = p(&dir, "zero.vdmf");
    write_vdm(&VdmImage::zeros(32).unwrap(), &vdm).unwrap();
    let out = p(&dir, "applied.ply");
    assert_eq!(vdmforge(&["apply-vdm", "--vdm", &s(&vdm), "--base", &s(&base), "--output", &s(&out)]), EXIT_OK);
    let (a, b) = (load_mesh(&base).unwrap(), load_mesh(&out).unwrap());
    assert_eq!(a.triangles(), b.triangles());
    let err = a.vertices().iter().zip(b.vertices()).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max);
    assert!(err < 1e-9, "{err}");
}

#[test]
fn apply_vdm_plane_rejects_region_without_base() {
    let dir = TempDir::new().unwrap();
    let vdm = p(&dir, "zero.vdmf");
    write_vdm(&VdmImage::zeros(16).unwrap(), &vdm).unwrap();
    let out = p(&dir, "plane.obj");
    assert_eq!(vdmforge(&["apply-vdm", "--vdm", &s(&vdm), "--subdivision", "8", "--output", &s(&out)]), EXIT_OK);
    assert_eq!(load_mesh(&out).unwrap().vertex_count(), 64);
    let code = vdmforge(&["apply-vdm", "--vdm", &s(&vdm), "--region", "0,0,0.5,0.5", "--output", &s(&out)]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn run_record_hashes_inputs_and_outputs() {
    let dir = TempDir::new().unwrap();
    let mesh = bump_tile(&dir);
    let out = p(&dir, "pts.ply");
    assert_eq!(vdmforge(&["sample", "--mesh", &s(&mesh), "--count", "100", "--seed", "2", "--output", &s(&out)]), EXIT_OK);
    let record = json(&p(&dir, "pts.ply.run.json"));
    assert_eq!(record["command"], "sample");
    assert_eq!(record["seed"], 2);
    let sha = |path: &Path| hex::encode(Sha256::digest(fs::read(path).unwrap()));
    assert_eq!(record["inputs"][0]["sha256"], sha(&mesh));
    assert_eq!(record["outputs"][0]["sha256"], sha(&out));

    let explicit = p(&dir, "elsewhere.json");
    let code = vdmforge(&["--record", &s(&explicit), "sample", "--mesh", &s(&mesh), "--count", "100", "--seed", "2", "--output", &s(&out)]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(json(&explicit)["outputs"][0]["sha256"], sha(&out));
}

#[test]
fn lasso_flatten_stitch_and_augment_chain() {
    let dir = TempDir::new().unwrap();
    let sphere = icosphere(3);
    let mesh = p(&dir, "sphere.obj");
    save_mesh(&sphere, &mesh, MeshFormat::Obj).unwrap();
    let grid = voxelize_surface(&sphere, 24).unwrap();
    let near = |x: f64, y: f64, z: f64| grid.nearest_occupied(&Point3::new(x, y, z)).unwrap();
    let r = 0.75f64.sqrt();
    let keys = KeypointFile {
        resolution: 24,
        keypoints: (0..6)
            .map(|k| {
                let a = k as f64 * std::f64::consts::FRAC_PI_3;
                near(r * a.cos(), r * a.sin(), 0.5)
            })
            .collect(),
        seed: near(0.0, 0.0, 1.0),
        dilation: 1,
    };
    let keys_path = p(&dir, "cap.keypoints.json");
    fs::write(&keys_path, serde_json::to_vec(&keys).unwrap()).unwrap();

    let part = p(&dir, "part.ply");
    assert_eq!(vdmforge(&["extract-part", "--mesh", &s(&mesh), "--keypoints", &s(&keys_path), "--output", &s(&part)]), EXIT_OK);
    let cap = load_mesh(&part).unwrap();
    assert!(cap.vertices().iter().all(|v| v.z > 0.2), "part reaches below the loop");
    assert!(cap.triangle_count() < sphere.triangle_count() / 2);

    let (flat, frame) = (p(&dir, "flat.ply"), p(&dir, "frame.json"));
    let code = vdmforge(&["flatten", "--part", &s(&part), "--output", &s(&flat), "--frame", &s(&frame)]);
    assert_eq!(code, EXIT_OK);
    assert!(json(&frame).is_object());

    let moved = p(&dir, "moved.ply");
    assert_eq!(vdmforge(&["augment", "--part", &s(&flat), "--seed", "4", "--output", &s(&moved)]), EXIT_OK);
    let drawn = &json(&p(&dir, "moved.ply.run.json"))["config"];
    let scale = drawn["scale"].as_f64().unwrap();
    assert!((0.9..=1.1).contains(&scale), "{drawn}");

    let tile = p(&dir, "tile.ply");
    let code = vdmforge(&["stitch", "--part", &s(&flat), "--tile-resolution", "16", "--smooth-rings", "2", "--output", &s(&tile)]);
    assert_eq!(code, EXIT_OK);
    let tile = load_mesh(&tile).unwrap();
    assert!(tile.vertex_count() > flat_vertex_count(&flat));
    let bb = tile.bounding_box();
    assert!(bb.min.x > -1e-9 && bb.max.x < 1.0 + 1e-9 && bb.min.y > -1e-9 && bb.max.y < 1.0 + 1e-9);
}

fn flat_vertex_count(path: &Path) -> usize {
    load_mesh(path).unwrap().vertex_count()
}

#[test]
fn filter_interior_keeps_outside_points() {
    let dir = TempDir::new().unwrap();
    let sphere = icosphere(2);
    let mesh = p(&dir, "sphere.ply");
    save_mesh(&sphere, &mesh, MeshFormat::PlyBinary).unwrap();
    let (outer, _) = sample_surface(&sphere.with_positions(sphere.vertices().iter().map(|v| v * 2.0).collect()).unwrap(), 50, 1).unwrap();
    let (inner, _) = sample_surface(&sphere.with_positions(sphere.vertices().iter().map(|v| v * 0.5).collect()).unwrap(), 70, 2).unwrap();
    let both = vdmforge::OrientedPointSet::new(
        outer.points().iter().chain(inner.points()).copied().collect(),
        outer.normals().iter().chain(inner.normals()).copied().collect(),
    )
    .unwrap();
    let cloud = p(&dir, "cloud.ply");
    save_points(&both, &cloud).unwrap();
    let out = p(&dir, "kept.ply");
    assert_eq!(vdmforge(&["filter-interior", "--points", &s(&cloud), "--mesh", &s(&mesh), "--output", &s(&out)]), EXIT_OK);
    assert_eq!(load_points(&out).unwrap().points(), outer.points());
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(vdmforge(&["no-such-command"]), EXIT_USAGE);
    assert_eq!(vdmforge(&["sample", "--mesh", "x.ply"]), EXIT_USAGE);
    assert_eq!(vdmforge(&["--threads", "0", "selftest", "--only", "8"]), EXIT_USAGE);
    assert_eq!(vdmforge(&["--help"]), EXIT_OK);
}

#[test]
fn errors_print_json_on_stderr() {
    let dir = TempDir::new().unwrap();
    let missing = p(&dir, "missing.ply");
    let out = Command::new(env!("CARGO_BIN_EXE_vdmforge"))
        .args(["sample", "--mesh", &s(&missing), "--count", "10", "--seed", "1", "--output", &s(&p(&dir, "o.ply"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_DATA));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "data");
    assert_eq!(err["error"]["code"], EXIT_DATA);
    assert!(err["error"]["message"].as_str().unwrap().contains("missing.ply"));

    let bad = p(&dir, "bad.vdmf");
    fs::write(&bad, b"not a vdm").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_vdmforge"))
        .args(["apply-vdm", "--vdm", &s(&bad), "--output", &s(&p(&dir, "o.obj"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_DATA));
    assert!(serde_json::from_slice::<Value>(&out.stderr).is_ok());
}

#[test]
fn divergent_fit_exits_with_four() {
    let dir = TempDir::new().unwrap();
    let tile = bump_tile(&dir);
    let config = p(&dir, "fit.json");
    fs::write(&config, br#"{ "learning_rate": 1e300 }"#).unwrap();
    let code = vdmforge(&[
        "fit-vdm", "--target", &s(&tile), "--seed", "1", "--output", &s(&p(&dir, "v.vdmf")), "--config", &s(&config),
        "--width", "64", "--epochs", "5", "--grid-samples", "256", "--target-samples", "256", "--boundary-samples", "32",
    ]);
    assert_eq!(code, EXIT_NUMERICAL);
}

#[test]
fn manifest_runs_a_bump_tile_end_to_end() {
    let dir = TempDir::new().unwrap();
    bump_tile(&dir);
    let manifest = p(&dir, "manifest.json");
    fs::write(
        &manifest,
        br#"{
            "seed": 11,
            "output_dir": "out",
            "parts": [{ "name": "bump", "tile": "bump.ply" }],
            "fit": { "epochs": 600, "width": 64 },
            "vdm_resolution": 64,
            "render": { "poses": "generation", "resolution": 24 }
        }"#,
    )
    .unwrap();
    assert_eq!(vdmforge(&["manifest", "--manifest", &s(&manifest)]), EXIT_OK);
    let part = dir.path().join("out/bump");
    let report = json(&part.join("fit_report.json"));
    let heldout = report["metrics"]["heldout_chamfer"].as_f64().unwrap();
    assert!(heldout < 1e-4, "held-out Chamfer {heldout}");
    assert_eq!(read_vdm(part.join("vdm.vdmf")).unwrap().resolution(), 64);
    let renders = fs::read_dir(&part).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "nrmf"));
    assert_eq!(renders.count(), 6);
    let summary = json(&dir.path().join("out/manifest_report.json"));
    assert_eq!(summary[0]["name"], "bump");
}
