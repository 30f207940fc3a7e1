//! Stage-to-stage checks over the public API.

use nalgebra::{Point2, Point3};
use vdmforge::flatten::{flatten_part, stitch_to_square};
use vdmforge::lasso::{dense_loop, extract_part, flood_select, voxelize_surface};
use vdmforge::mesh::{boundary_loops, sample_surface};
use vdmforge::shapes::{gaussian_bump, icosphere};
use vdmforge::vdm::{apply_to_plane, VdmImage, VdmMetadata};
use vdmforge::winding::filter_interior;

fn sphere_cap() -> vdmforge::TriMesh {
    let sphere = icosphere(3);
    let grid = voxelize_surface(&sphere, 24).unwrap();
    let near = |x: f64, y: f64, z: f64| grid.nearest_occupied(&Point3::new(x, y, z)).unwrap();
    let r = 0.75f64.sqrt();
    let keys: Vec<_> = (0..6)
        .map(|k| {
            let a = k as f64 * std::f64::consts::FRAC_PI_3;
            near(r * a.cos(), r * a.sin(), 0.5)
        })
        .collect();
    let lasso = dense_loop(&grid, &keys).unwrap();
    let region = flood_select(&grid, &lasso, near(0.0, 0.0, 1.0), 1).unwrap();
    extract_part(&sphere, &region, &grid).unwrap()
}

#[test]
fn lassoed_cap_flattens_and_stitches_into_a_disk() {
    let cap = sphere_cap();
    assert_eq!(boundary_loops(&cap).unwrap().len(), 1);
    assert_eq!(cap.euler_characteristic(), 1);

    let (flat, _) = flatten_part(cap, 0.8).unwrap();
    let rim = &boundary_loops(&flat).unwrap()[0];
    let rim_z = rim.vertices.iter().map(|&v| flat.vertices()[v].z.abs()).fold(0.0, f64::max);
    assert!(rim_z < 1e-9, "rim off the tile plane by {rim_z}");
    // the cap bulges out of the tile, not into it
    assert!(flat.vertices().iter().any(|v| v.z > 0.05));

    let tile = stitch_to_square(&flat, 32, 0.05).unwrap().mesh;
    assert_eq!(tile.euler_characteristic(), 1);
    let loops = boundary_loops(&tile).unwrap();
    assert_eq!(loops.len(), 1);
    let on_edge = |p: &Point3<f64>| [p.x, 1.0 - p.x, p.y, 1.0 - p.y].iter().any(|d| d.abs() < 1e-12);
    assert!(loops[0].vertices.iter().all(|&v| on_edge(&tile.vertices()[v])));
}

#[test]
fn surface_samples_of_a_closed_mesh_survive_interior_filtering() {
    let sphere = icosphere(3);
    let (points, _) = sample_surface(&sphere, 3000, 12).unwrap();
    let kept = filter_interior(&points, &sphere, 0.5).unwrap();
    assert_eq!(kept.points(), points.points());
}

#[test]
fn sampled_bump_vdm_reproduces_the_bump_on_a_plane() {
    let r = 64;
    let data = (0..r * r)
        .map(|k| {
            let (u, v) = (((k % r) as f64 + 0.5) / r as f64, ((k / r) as f64 + 0.5) / r as f64);
            [0.0, 0.0, gaussian_bump(u, v) as f32]
        })
        .collect();
    let vdm = VdmImage::new(r, data, VdmMetadata::default()).unwrap();
    let plane = apply_to_plane(&vdm, r).unwrap();
    let uvs = plane.uvs().unwrap();
    for (p, uv) in plane.vertices().iter().zip(uvs) {
        assert_eq!(Point2::new(p.x, p.y), *uv);
        assert!((p.z - gaussian_bump(uv.x, uv.y)).abs() < 1e-7);
    }
}
