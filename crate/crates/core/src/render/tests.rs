use nalgebra::{Matrix3, Point3, Vector3};
use proptest::prelude::*;

use super::*;
use crate::mesh::unit_grid;
use crate::rng::{seeded, uniform};
use crate::shapes::{icosphere, torus, unit_cube};

fn sphere_scene_pose(resolution: usize) -> CameraPose {
    CameraPose::new(0.0, 0.0).unwrap().with_frame(Point3::origin(), 2.5, resolution).unwrap()
}

fn radial_sphere(subdivisions: usize) -> TriMesh {
    let mesh = icosphere(subdivisions);
    let normals = mesh.vertices().iter().map(|v| v.coords.normalize()).collect();
    mesh.with_normals(normals).unwrap()
}

fn circumradius(tri: &[Point3<f64>; 3]) -> f64 {
    let (a, b, c) = ((tri[1] - tri[2]).norm(), (tri[0] - tri[2]).norm(), (tri[0] - tri[1]).norm());
    let area = (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm() / 2.0;
    a * b * c / (4.0 * area)
}

#[test]
fn generation_poses_are_the_six_listed() {
    let poses = standard_poses(PoseKind::Generation);
    let got: Vec<(f64, f64)> = poses.iter().map(|p| (p.elevation, p.azimuth)).collect();
    assert_eq!(got, vec![(0.0, -60.0), (0.0, -30.0), (0.0, 30.0), (0.0, 60.0), (45.0, 0.0), (-45.0, 0.0)]);
}

#[test]
fn evaluation_poses_are_the_thirteen_listed() {
    let poses = standard_poses(PoseKind::Evaluation);
    assert_eq!(poses.len(), 13);
    let mut got: Vec<(i32, i32)> = poses.iter().map(|p| (p.elevation as i32, p.azimuth as i32)).collect();
    got.sort_unstable();
    let mut expected = vec![(0, 0)];
    for a in [30, 45, 60] {
        expected.extend([(0, a), (0, -a), (a, 0), (-a, 0)]);
    }
    expected.sort_unstable();
    assert_eq!(got, expected);
    assert!(poses.iter().all(|p| p.resolution == DEFAULT_RESOLUTION));
}

#[test]
fn view_matrices_match_hand_computation() {
    let close = |a: Matrix3<f64>, b: Matrix3<f64>| (a - b).abs().max() < 1e-12;
    let m = |el, az| CameraPose::new(el, az).unwrap().view_matrix();
    assert!(close(m(0.0, 0.0), Matrix3::identity()));
    #[rustfmt::skip]
    let side = Matrix3::new(
        0.0, 0.0, 1.0,
        0.0, 1.0, 0.0,
        -1.0, 0.0, 0.0,
    );
    assert!(close(m(0.0, 90.0), side), "{}", m(0.0, 90.0));
    #[rustfmt::skip]
    let top = Matrix3::new(
        1.0, 0.0, 0.0,
        0.0, 0.0, -1.0,
        0.0, 1.0, 0.0,
    );
    assert!(close(m(90.0, 0.0), top), "{}", m(90.0, 0.0));
}

#[test]
fn pose_ranges_are_checked() {
    assert!(matches!(CameraPose::new(91.0, 0.0), Err(RenderError::InvalidPose { .. })));
    assert!(matches!(CameraPose::new(0.0, -180.5), Err(RenderError::InvalidPose { .. })));
    let p = CameraPose::new(0.0, 0.0).unwrap();
    assert!(matches!(p.with_frame(Point3::origin(), 0.0, 8), Err(RenderError::InvalidFrameWidth(_))));
    assert!(matches!(p.with_frame(Point3::origin(), 1.0, 0), Err(RenderError::InvalidResolution(0))));
}

#[test]
fn frontal_plane_renders_uniform_normal() {
    let pose = CameraPose::new(0.0, 0.0).unwrap().with_frame(Point3::new(0.5, 0.5, 0.0), 1.5, 96).unwrap();
    for mesh in [unit_grid(4), unit_grid(4).flipped()] {
        let scene = Scene::new(&mesh).unwrap();
        let hits = scene.cast(&pose, RenderOptions::default()).unwrap();
        let map = render_normals_with(&scene, &pose, RenderOptions::default()).unwrap();
        let covered = hits.iter().filter(|h| h.is_some()).count();
        // the unit square covers (1 / 1.5)^2 of the frame
        assert!((covered as f64 / (96.0 * 96.0) - 1.0 / 2.25).abs() < 0.02);
        assert!(map.data().iter().all(|px| *px == [0.5, 0.5, 1.0]));
    }
}

#[test]
fn rotated_plane_encodes_analytic_normal() {
    let mesh = unit_grid(2);
    let pose = CameraPose::new(0.0, 30.0).unwrap().with_frame(Point3::new(0.5, 0.5, 0.0), 1.5, 64).unwrap();
    let scene = Scene::new(&mesh).unwrap();
    let hits = scene.cast(&pose, RenderOptions::default()).unwrap();
    let map = render_normals(&mesh, &pose).unwrap();
    let expected = [0.75, 0.5, (1.0 + 30f64.to_radians().cos()) / 2.0];
    let mut covered = 0;
    for (h, px) in hits.iter().zip(map.data()) {
        if h.is_some() {
            covered += 1;
            for k in 0..3 {
                assert!((px[k] as f64 - expected[k]).abs() < 1.0 / 255.0, "{px:?}");
            }
        }
    }
    assert!(covered > 100);
}

#[test]
fn interpolated_sphere_normals_match_radial_direction() {
    let mesh = radial_sphere(5);
    let scene = Scene::new(&mesh).unwrap();
    let opts = RenderOptions { normals: NormalMode::Interpolated, ..RenderOptions::default() };
    for (el, az) in [(0.0, 0.0), (30.0, -45.0), (-60.0, 120.0)] {
        let pose = CameraPose::new(el, az).unwrap().with_frame(Point3::origin(), 2.5, 96).unwrap();
        let hits = scene.cast(&pose, opts).unwrap();
        let map = render_normals_with(&scene, &pose, opts).unwrap();
        let view = pose.view_matrix();
        let mut worst = 0.0f64;
        for (k, h) in hits.iter().enumerate() {
            if let Some(h) = h {
                let analytic = view * h.point.coords.normalize();
                worst = worst.max((map.decoded(k / 96, k % 96) - analytic).norm());
            }
        }
        assert!(worst < 1e-3, "pose ({el}, {az}): {worst}");
    }
}

#[test]
fn face_normals_on_sphere_stay_within_facet_bound() {
    let mesh = icosphere(4);
    let scene = Scene::new(&mesh).unwrap();
    let pose = sphere_scene_pose(96);
    let hits = scene.cast(&pose, RenderOptions::default()).unwrap();
    let map = render_normals_with(&scene, &pose, RenderOptions::default()).unwrap();
    let view = pose.view_matrix();
    for (k, h) in hits.iter().enumerate() {
        let Some(h) = h else { continue };
        let decoded = map.decoded(k / 96, k % 96);
        let face = view * mesh.face_normal(h.triangle);
        assert!((decoded - face).norm() < 1e-6);
        // angle between a facet normal and the radial direction at any point of it
        let bound = 1.05 * circumradius(&mesh.triangle_points(h.triangle)) + 1e-6;
        assert!((decoded - view * h.point.coords.normalize()).norm() < bound);
    }
}

#[test]
fn closed_meshes_never_face_away() {
    let mut shifted_torus = torus(0.35, 0.12, 48, 24);
    shifted_torus = shifted_torus
        .with_positions(shifted_torus.vertices().iter().map(|v| v + Vector3::new(0.5, 0.5, 0.0)).collect())
        .unwrap();
    let mut cube = unit_cube();
    cube = cube.with_positions(cube.vertices().iter().map(|v| v + Vector3::new(0.0, 0.0, -0.5)).collect()).unwrap();
    for mesh in [shifted_torus, cube, icosphere(2).flipped()] {
        let scene = Scene::new(&mesh).unwrap();
        for pose in standard_poses(PoseKind::Evaluation) {
            let pose = pose.with_frame(pose.target, 2.0, 48).unwrap();
            let map = render_normals_with(&scene, &pose, RenderOptions::default()).unwrap();
            for r in 0..48 {
                for c in 0..48 {
                    let n = map.decoded(r, c);
                    assert!(n.z >= 0.0 && n.norm() <= 1.0 + 1e-3, "{n}");
                }
            }
        }
    }
}

#[test]
fn bvh_render_matches_brute_force() {
    for seed in 0..4 {
        let mut rng = seeded(seed);
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for t in 0..150 {
            let c = Vector3::new(uniform(&mut rng, 0.0, 1.0), uniform(&mut rng, 0.0, 1.0), uniform(&mut rng, -0.5, 0.5));
            for _ in 0..3 {
                vertices.push(Point3::from(c + Vector3::new(uniform(&mut rng, -0.2, 0.2), uniform(&mut rng, -0.2, 0.2), uniform(&mut rng, -0.2, 0.2))));
            }
            triangles.push([3 * t, 3 * t + 1, 3 * t + 2]);
        }
        let mesh = TriMesh::new(vertices, triangles).unwrap();
        let scene = Scene::new(&mesh).unwrap();
        for (el, az) in [(0.0, 0.0), (45.0, 0.0), (0.0, -60.0)] {
            let pose = CameraPose::new(el, az).unwrap().with_frame(Point3::new(0.5, 0.5, 0.0), 1.6, 64).unwrap();
            let fast = scene.cast(&pose, RenderOptions::default()).unwrap();
            let slow = scene.cast(&pose, RenderOptions { traversal: Traversal::BruteForce, ..RenderOptions::default() }).unwrap();
            assert_eq!(fast, slow);
            let a = render_normals_with(&scene, &pose, RenderOptions::default()).unwrap();
            let b = render_normals_with(&scene, &pose, RenderOptions { traversal: Traversal::BruteForce, ..RenderOptions::default() }).unwrap();
            assert_eq!(a.to_bytes(), b.to_bytes());
        }
    }
}

#[test]
fn gray_plane_shades_extremes() {
    let mesh = unit_grid(2);
    let pose = CameraPose::new(0.0, 0.0).unwrap().with_frame(Point3::new(0.5, 0.5, 0.0), 2.0, 32).unwrap();
    let toward = render_gray(&mesh, &pose, &Vector3::z()).unwrap();
    let behind = render_gray(&mesh, &pose, &-Vector3::z()).unwrap();
    let hits = Scene::new(&mesh).unwrap().cast(&pose, RenderOptions::default()).unwrap();
    for (k, h) in hits.iter().enumerate() {
        let (a, b) = (toward.data()[k], behind.data()[k]);
        match h {
            Some(_) => assert_eq!((a, b), (1.0, MIN_SHADE)),
            None => assert_eq!((a, b), (BACKGROUND_GRAY, BACKGROUND_GRAY)),
        }
    }
}

#[test]
fn sphere_highlight_sits_where_normal_meets_light() {
    let mesh = icosphere(6);
    let scene = Scene::new(&mesh).unwrap();
    let pose = sphere_scene_pose(128);
    for light in [Vector3::new(0.3, 0.4, 1.0), Vector3::new(-0.5, -0.2, 0.8), Vector3::new(0.0, 0.0, 1.0)] {
        let light = light.normalize();
        let img = render_gray_with(&scene, &pose, &light, RenderOptions::default()).unwrap();
        let best = img.data().iter().copied().fold(f32::MIN, f32::max);
        let (mut sc, mut sr, mut count) = (0.0, 0.0, 0.0);
        for r in 0..128 {
            for c in 0..128 {
                if img.pixel(r, c) == best {
                    sc += c as f64 + 0.5;
                    sr += r as f64 + 0.5;
                    count += 1.0;
                }
            }
        }
        let (ec, er) = pose.project(&Point3::from(light));
        let off = ((sc / count - ec).powi(2) + (sr / count - er).powi(2)).sqrt();
        assert!(off <= 1.0, "light {light}: highlight {off} px from analytic");
    }
}

#[test]
fn gray_rejects_non_unit_light() {
    let pose = CameraPose::new(0.0, 0.0).unwrap();
    assert!(matches!(render_gray(&unit_grid(1), &pose, &Vector3::new(0.0, 0.0, 2.0)), Err(RenderError::InvalidLight)));
}

#[test]
fn interpolated_mode_needs_normals() {
    let mesh = unit_grid(1);
    let scene = Scene::new(&mesh).unwrap();
    let opts = RenderOptions { normals: NormalMode::Interpolated, ..RenderOptions::default() };
    assert!(matches!(scene.cast(&CameraPose::new(0.0, 0.0).unwrap(), opts), Err(RenderError::MissingNormals)));
}

#[test]
fn raw_dump_round_trips_bitwise() {
    let mesh = radial_sphere(2);
    let pose = sphere_scene_pose(40);
    let map = render_normals(&mesh, &pose).unwrap();
    let bytes = map.to_bytes();
    assert_eq!(&bytes[..4], b"NRMF");
    assert_eq!(bytes.len(), 16 + 40 * 40 * 12);
    let back = NormalMap::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back, map);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("n.nrmf");
    map.write_raw(&path).unwrap();
    assert_eq!(NormalMap::read_raw(&path).unwrap(), map);
    map.save_png(&dir.path().join("n.png")).unwrap();
    render_gray(&mesh, &pose, &Vector3::z()).unwrap().save_png(&dir.path().join("g.png")).unwrap();
}

#[test]
fn corrupt_dumps_are_rejected() {
    let map = NormalMap::new(2, 1, vec![[0.5, 0.5, 1.0]; 2]).unwrap();
    let bytes = map.to_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(NormalMap::from_bytes(&bad), Err(RenderError::BadMagic)));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(NormalMap::from_bytes(&bad), Err(RenderError::UnsupportedVersion(9))));
    assert!(matches!(NormalMap::from_bytes(&bytes[..bytes.len() - 1]), Err(RenderError::Truncated { .. })));
    assert!(matches!(NormalMap::from_bytes(&bytes[..3]), Err(RenderError::Truncated { .. })));
}

#[test]
fn chamfer_metric_of_identical_meshes_is_zero() {
    let mesh = icosphere(2);
    assert_eq!(chamfer_metric(&mesh, &mesh, 2000, 5).unwrap(), 0.0);
}

#[test]
fn chamfer_metric_of_offset_square_is_twice_squared_offset() {
    let a = unit_grid(3);
    let d = 0.1;
    let b = a.with_positions(a.vertices().iter().map(|v| v + Vector3::new(0.0, 0.0, d)).collect()).unwrap();
    let m = chamfer_metric(&a, &b, 20_000, 3).unwrap();
    assert!((m / (2.0 * d * d) - 1.0).abs() < 0.05, "{m}");
}

#[test]
fn chamfer_metric_is_symmetric_across_seeds() {
    let a = icosphere(2);
    let b = a.with_positions(a.vertices().iter().map(|v| Point3::from(v.coords * 1.2)).collect()).unwrap();
    let ab = chamfer_metric(&a, &b, 20_000, 1).unwrap();
    let ba = chamfer_metric(&b, &a, 20_000, 2).unwrap();
    assert!((ab / ba - 1.0).abs() < 0.05, "{ab} vs {ba}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn renders_do_not_depend_on_thread_count(el in -90.0f64..90.0, az in -180.0f64..180.0) {
        let mesh = icosphere(2);
        let scene = Scene::new(&mesh).unwrap();
        let pose = CameraPose::new(el, az).unwrap().with_frame(Point3::origin(), 2.5, 24).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = render_normals_with(&scene, &pose, RenderOptions::default()).unwrap();
        let b = pool.install(|| render_normals_with(&scene, &pose, RenderOptions::default())).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn camera_frame_is_right_handed_orthonormal(el in -90.0f64..=90.0, az in -180.0f64..=180.0) {
        let v = CameraPose::new(el, az).unwrap().view_matrix();
        prop_assert!((v * v.transpose() - Matrix3::identity()).abs().max() < 1e-12);
        prop_assert!((v.determinant() - 1.0).abs() < 1e-12);
    }
}
