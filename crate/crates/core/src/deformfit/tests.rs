use std::sync::OnceLock;

use nalgebra::{Point2, Point3, Vector3};

use super::*;
use crate::shapes::{gaussian_bump, gaussian_bump_normal};
use crate::vdm::apply_to_plane;

const INIT_WIDTH: usize = 64;

fn initialized() -> &'static (DeformField, InitReport) {
    static CELL: OnceLock<(DeformField, InitReport)> = OnceLock::new();
    CELL.get_or_init(|| {
        let field = DeformField::new(INIT_WIDTH, 5).unwrap();
        init_to_plane(field, &SquareEmbedding::canonical(), &InitConfig::default()).unwrap()
    })
}

fn bump_points(n: usize, seed: u64) -> OrientedPointSet {
    let mut rng = seeded(seed);
    let (mut p, mut nrm) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let (u, v) = (unit_f64(&mut rng), unit_f64(&mut rng));
        p.push(Point3::new(u, v, gaussian_bump(u, v)));
        nrm.push(gaussian_bump_normal(u, v));
    }
    OrientedPointSet::new(p, nrm).unwrap()
}

#[test]
fn objective_gradient_matches_central_differences() {
    let check = gradient_check(16, 100, 1e-4, 2024).unwrap();
    assert_eq!(check.probes, 100);
    assert!(check.max_relative_error < 1e-4, "{check:?}");
}

#[test]
fn init_reaches_validation_threshold() {
    let (_, report) = initialized();
    assert!(report.validation_mse < 1e-5, "{}", report.validation_mse);
    assert_eq!(report.loss_trace.len(), report.epochs_run + 1);
}

#[test]
fn init_maps_corners_to_square_corners() {
    let (field, _) = initialized();
    let emb = SquareEmbedding::canonical();
    for c in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        let p = Point2::new(c.0, c.1);
        let d = (field.forward_point(p).unwrap() - emb.proj(p)).norm();
        assert!(d < 1e-2 * emb.side, "corner {c:?} off by {d}");
    }
}

#[test]
fn init_then_extract_is_near_zero() {
    let (field, _) = initialized();
    let vdm = extract_vdm(field, &SquareEmbedding::canonical(), 64).unwrap();
    assert!(vdm.max_norm() < 1e-2, "{}", vdm.max_norm());
}

#[test]
fn init_loss_moving_average_does_not_increase() {
    let (_, report) = initialized();
    let ma: Vec<f64> = report.loss_trace.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    for (k, w) in ma.windows(2).enumerate() {
        assert!(w[1] <= w[0], "moving average rises at epoch {}: {} -> {}", k + 10, w[0], w[1]);
    }
}

#[test]
fn init_failure_reports_final_loss() {
    let field = DeformField::new(16, 1).unwrap();
    let config = InitConfig { epochs: 3, ..InitConfig::default() };
    match init_to_plane(field, &SquareEmbedding::canonical(), &config) {
        Err(FitError::InitNotConverged { loss, threshold }) => {
            assert!(loss > threshold && loss.is_finite());
        }
        other => panic!("expected InitNotConverged, got {other:?}"),
    }
}

#[test]
fn extract_of_offset_field_is_exact() {
    let emb = SquareEmbedding::canonical();
    let c = Vector3::new(0.25, -0.125, 0.0625);
    let vdm = extract_vdm_with(|pts| Ok(pts.iter().map(|p| emb.proj(*p) + c).collect()), &emb, 32).unwrap();
    for px in vdm.data() {
        assert_eq!(*px, [0.25, -0.125, 0.0625]);
    }
}

#[test]
fn extract_expresses_offset_in_tile_frame() {
    let center = Point3::new(1.0, 2.0, 3.0);
    let plane = crate::flatten::Plane::new(&center, Vector3::x());
    let emb = SquareEmbedding::new(plane, 2.0, center).unwrap();
    let c = emb.plane.tangent * 0.5 + emb.plane.normal * 0.25;
    let vdm = extract_vdm_with(|pts| Ok(pts.iter().map(|p| emb.proj(*p) + c).collect()), &emb, 16).unwrap();
    for px in vdm.data() {
        let d = Vector3::new(px[0] as f64 - 0.25, px[1] as f64, px[2] as f64 - 0.125);
        assert!(d.norm() < 1e-6, "{px:?}");
    }
}

#[test]
fn extract_rejects_out_of_range_resolution() {
    let f = DeformField::zeros(8).unwrap();
    let emb = SquareEmbedding::canonical();
    for r in [0, 15, 4097] {
        assert!(matches!(extract_vdm(&f, &emb, r), Err(FitError::InvalidResolution(x)) if x == r));
    }
    assert!(extract_vdm(&f, &emb, 16).is_ok());
}

#[test]
fn extract_then_apply_reproduces_forward() {
    let emb = SquareEmbedding::canonical();
    let mut field = DeformField::new(16, 3).unwrap();
    field.params_mut().iter_mut().for_each(|p| *p *= 0.5);
    let r = 40;
    let vdm = extract_vdm(&field, &emb, r).unwrap();
    let mesh = apply_to_plane(&vdm, r).unwrap();
    let expected = field.forward(&cell_centers(r)).unwrap();
    for (v, e) in mesh.vertices().iter().zip(&expected) {
        assert!((v - e).norm() < 1e-6, "{v} vs {e}");
    }
}

#[test]
fn fit_is_deterministic() {
    let target = FitTarget::Points(bump_points(500, 8));
    let config = FitConfig {
        epochs: 6,
        width: 16,
        grid_samples_per_step: 64,
        target_samples_per_step: 128,
        boundary_samples_per_step: 16,
        seed: 9,
        ..FitConfig::default()
    };
    let emb = SquareEmbedding::canonical();
    let field = DeformField::new(16, 4).unwrap();
    let (fa, ra) = fit(field.clone(), &target, &emb, &config).unwrap();
    let (fb, rb) = fit(field, &target, &emb, &config).unwrap();
    assert_eq!(ra.loss_trace, rb.loss_trace);
    assert_eq!(ra.metrics, rb.metrics);
    assert_eq!(fa.params(), fb.params());
    assert_eq!(ra.loss_trace.len(), 6);
}

#[test]
fn fit_reduces_loss_on_bump() {
    let (field, _) = initialized();
    let target = FitTarget::Points(bump_points(4000, 12));
    let config = FitConfig {
        epochs: 60,
        width: INIT_WIDTH,
        grid_samples_per_step: 1024,
        target_samples_per_step: 1024,
        boundary_samples_per_step: 128,
        seed: 2,
        ..FitConfig::default()
    };
    let (_, report) = fit(field.clone(), &target, &SquareEmbedding::canonical(), &config).unwrap();
    let head: f64 = report.chamfer_trace[..5].iter().sum();
    let tail: f64 = report.chamfer_trace[55..].iter().sum();
    assert!(tail < 0.8 * head, "{head} -> {tail}");
}

#[test]
fn fit_reports_step_of_non_finite_loss() {
    let target = FitTarget::Points(bump_points(100, 1));
    let config = FitConfig { epochs: 3, width: 8, learning_rate: 1e300, ..FitConfig::default() };
    let err = fit(DeformField::new(8, 1).unwrap(), &target, &SquareEmbedding::canonical(), &config).unwrap_err();
    assert!(err.is_numerical(), "{err}");
}

#[test]
fn point_targets_split_without_overlap() {
    let pts = bump_points(1000, 3);
    let (train, held) = FitTarget::Points(pts.clone()).prepare(7).unwrap();
    assert_eq!((train.len(), held.len()), (800, 200));
    let mut all: Vec<[u64; 3]> = train
        .points()
        .iter()
        .chain(held.points())
        .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
        .collect();
    all.sort_unstable();
    all.dedup();
    assert_eq!(all.len(), 1000);
    let again = FitTarget::Points(pts).prepare(7).unwrap();
    assert_eq!(again.1.points(), held.points());
}

#[test]
fn empty_targets_are_rejected() {
    let empty = OrientedPointSet::new(vec![], vec![]).unwrap();
    let one = bump_points(1, 1);
    assert!(matches!(FitTarget::Points(one.clone()).prepare(0), Err(FitError::EmptyTarget)));
    assert!(matches!(FitTarget::Split { train: one, heldout: empty }.prepare(0), Err(FitError::EmptyTarget)));
}

#[test]
fn mesh_targets_sample_train_and_heldout_independently() {
    let mesh = crate::shapes::height_field(8, |_, _| 0.0);
    let (train, held) = FitTarget::Mesh(mesh).prepare(1).unwrap();
    assert_eq!((train.len(), held.len()), (MESH_TARGET_SAMPLES, MESH_TARGET_SAMPLES));
    assert_ne!(train.points()[0], held.points()[0]);
}

#[test]
fn config_validation() {
    assert!(FitConfig::default().validate().is_ok());
    let bad = [
        FitConfig { learning_rate: 0.0, ..FitConfig::default() },
        FitConfig { epochs: 0, ..FitConfig::default() },
        FitConfig { grid_samples_per_step: 0, ..FitConfig::default() },
        FitConfig { beta2: 1.0, ..FitConfig::default() },
        FitConfig { boundary_weight: -1.0, ..FitConfig::default() },
        FitConfig { width: 0, ..FitConfig::default() },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(FitError::InvalidConfig(_))), "{c:?}");
    }
}

#[test]
fn embedding_round_trips_local_vectors() {
    let center = Point3::new(0.0, 1.0, -2.0);
    let plane = crate::flatten::Plane::new(&center, Vector3::new(1.0, 2.0, 2.0).normalize());
    let emb = SquareEmbedding::new(plane, 3.0, center).unwrap();
    let d = Vector3::new(0.3, -0.2, 0.7);
    assert!((emb.to_local(&emb.from_local(&d)) - d).norm() < 1e-12);
    assert!((emb.proj(Point2::new(0.5, 0.5)) - center).norm() < 1e-12);
    assert!(SquareEmbedding::new(plane, 0.0, center).is_err());
}

#[test]
fn stratified_grid_has_one_point_per_cell() {
    let pts = stratified_grid(&mut seeded(1), 70);
    assert_eq!(pts.len(), 70);
    let mut cells = vec![0; 64];
    for p in &pts[..64] {
        cells[(p.y * 8.0) as usize * 8 + (p.x * 8.0) as usize] += 1;
    }
    assert!(cells.iter().all(|&c| c == 1));
}

#[test]
fn boundary_samples_lie_on_square_boundary() {
    for p in boundary_samples(&mut seeded(2), 200) {
        let on_edge = [p.x, p.y, 1.0 - p.x, 1.0 - p.y].iter().any(|&c| c == 0.0);
        assert!(on_edge && (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y), "{p}");
    }
}
