use super::*;
use crate::math::matrix_to_quat;
use crate::math::quat_to_matrix;
use crate::primitives::{cube_points, icosphere, sphere_points};

fn radial_errors(mesh: &ColoredMesh) -> (f64, f64) {
    let errs: Vec<f64> = mesh
        .vertices
        .iter()
        .map(|v| (Vec3::from(*v).norm() - 1.0).abs())
        .collect();
    (
        errs.iter().sum::<f64>() / errs.len() as f64,
        errs.iter().cloned().fold(0.0, f64::max),
    )
}

fn sphere_set(n: usize) -> OrientedPointSet {
    let (p, nrm) = sphere_points(n, 1.0);
    OrientedPointSet::new(p, nrm).unwrap()
}

fn opts(res: usize) -> ExtractOptions {
    ExtractOptions {
        resolution: res,
        ..Default::default()
    }
}

#[test]
fn sphere_is_recovered_at_moderate_resolution() {
    let e = reconstruct_surface(&sphere_set(4000), &opts(48)).unwrap();
    let (mean, max) = radial_errors(&e.mesh);
    assert!(mean < 0.02 && max < 0.05, "mean {mean} max {max}");
    assert!(!e.inverted);
    e.mesh.validate().unwrap();
    let report = e.mesh.manifold_report();
    assert_eq!((report.boundary_edges, report.non_manifold_edges), (0, 0));
    assert!(e.mesh.degenerate_triangles().is_empty());
    let vol = e.mesh.signed_volume();
    assert!(
        (vol / (4.0 / 3.0 * std::f64::consts::PI) - 1.0).abs() < 0.05,
        "{vol}"
    );
}

#[test]
fn flipped_normals_give_inside_out_surface() {
    let (p, n) = sphere_points(3000, 1.0);
    let flipped: Vec<[f64; 3]> = n.iter().map(|v| v.map(|c| -c)).collect();
    let e = reconstruct_surface(&OrientedPointSet::new(p, flipped).unwrap(), &opts(40)).unwrap();
    assert!(e.inverted);
    assert!(e.mesh.signed_volume() < 0.0);
}

#[test]
fn cube_volume_is_close_to_one() {
    let (p, n) = cube_points(30, 1.0);
    let e = reconstruct_surface(&OrientedPointSet::new(p, n).unwrap(), &opts(48)).unwrap();
    let v = e.mesh.signed_volume();
    assert!((v - 1.0).abs() < 0.1, "{v}");
}

#[test]
fn extraction_is_translation_equivariant() {
    let base = sphere_set(2000);
    let shift = [0.37, -1.2, 2.05];
    let a = reconstruct_surface(&base, &opts(32)).unwrap();
    let b = reconstruct_surface(&base.translated(shift), &opts(32)).unwrap();
    assert_eq!(a.mesh.triangles.len(), b.mesh.triangles.len());
    for (p, q) in a.mesh.vertices.iter().zip(&b.mesh.vertices) {
        for k in 0..3 {
            assert!((p[k] + shift[k] - q[k]).abs() <= a.grid_spacing);
        }
    }
}

#[test]
fn too_few_or_coplanar_points_are_rejected() {
    let few = sphere_set(50);
    assert!(matches!(
        reconstruct_surface(&few, &opts(32)),
        Err(ExtractError::TooFewPoints { got: 50, .. })
    ));
    let plane: Vec<[f64; 3]> = (0..400)
        .map(|i| [(i % 20) as f64 * 0.1, (i / 20) as f64 * 0.1, 0.0])
        .collect();
    let normals = vec![[0.0, 0.0, 1.0]; 400];
    let set = OrientedPointSet::new(plane, normals).unwrap();
    assert!(matches!(
        reconstruct_surface(&set, &opts(32)),
        Err(ExtractError::Coplanar(_))
    ));
}

#[test]
fn zero_normal_is_invalid() {
    let (p, mut n) = sphere_points(200, 1.0);
    n[3] = [0.0; 3];
    assert!(OrientedPointSet::new(p, n).is_err());
}

fn surfels_on_sphere(n: usize, color: impl Fn(&[f64; 3]) -> [f64; 3]) -> SurfelCloud2D {
    let (p, nrm) = sphere_points(n, 1.0);
    let mut s = SurfelCloud2D::default();
    for (p, nv) in p.iter().zip(&nrm) {
        let frame = crate::math::frame_from_normal(&Vec3::from(*nv));
        s.push(*p, color(p), 0.8, [0.03, 0.03], matrix_to_quat(&frame));
    }
    s
}

#[test]
fn uniform_surfel_color_propagates() {
    let s = surfels_on_sphere(1500, |_| [0.2, 0.6, 0.9]);
    let e = extract_mesh(&s, &opts(32)).unwrap();
    for c in &e.mesh.colors {
        for k in 0..3 {
            assert!((c[k] - [0.2, 0.6, 0.9][k]).abs() < 1e-9);
        }
    }
    for i in 0..s.len() {
        assert!((quat_to_matrix(s.rotations[i]).column(2).norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn coincident_isolated_surfel_dominates() {
    let mut s = surfels_on_sphere(200, |_| [0.0, 0.0, 1.0]);
    s.push(
        [5.0, 5.0, 5.0],
        [1.0, 0.5, 0.0],
        0.9,
        [0.1, 0.1],
        [1.0, 0.0, 0.0, 0.0],
    );
    let c = color_vertices(&[[5.0, 5.0, 5.0]], &s, 8, Execution::Sequential);
    for k in 0..3 {
        assert!((c[0][k] - [1.0, 0.5, 0.0][k]).abs() < 1e-3);
    }
}

#[test]
fn two_color_sphere_has_narrow_seam() {
    let s = surfels_on_sphere(4000, |p| {
        if p[2] > 0.0 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        }
    });
    let spacing = (4.0 * std::f64::consts::PI / 4000.0).sqrt();
    let mesh = icosphere(4, 1.0, [0.5; 3]);
    let colors = color_vertices(&mesh.vertices, &s, 8, Execution::Parallel);
    for (v, c) in mesh.vertices.iter().zip(&colors) {
        if v[2].abs() > 1.5 * spacing {
            let want = if v[2] > 0.0 {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 0.0, 1.0]
            };
            for k in 0..3 {
                assert!((c[k] - want[k]).abs() < 1e-2, "z={} {c:?}", v[2]);
            }
        }
    }
}

#[test]
fn decimation_meets_budget_and_stays_closed() {
    let m = icosphere(4, 1.0, [0.5; 3]);
    let (v, t) = decimate(&m.vertices, &m.triangles, 1000, 0.0);
    let mut out = ColoredMesh::new(v.clone(), vec![[0.5; 3]; v.len()], t);
    out.remove_unreferenced_vertices();
    assert!(out.triangles.len() <= 1000);
    let r = out.manifold_report();
    assert_eq!((r.boundary_edges, r.non_manifold_edges), (0, 0));
    assert!((out.signed_volume() - m.signed_volume()).abs() / m.signed_volume() < 0.05);
    let (same_v, same_t) = decimate(&m.vertices, &m.triangles, 1_000_000, 0.0);
    assert_eq!((same_v, same_t), (m.vertices.clone(), m.triangles.clone()));
}

#[test]
fn largest_component_drops_islands() {
    let big = icosphere(1, 1.0, [0.5; 3]);
    let small = icosphere(0, 0.1, [0.5; 3]);
    let offset = big.vertices.len() as u32;
    let mut tris = big.triangles.clone();
    tris.extend(small.triangles.iter().map(|t| t.map(|i| i + offset)));
    let kept = largest_component(big.vertices.len() + small.vertices.len(), &tris);
    assert_eq!(kept, big.triangles);
}

#[test]
fn parallel_and_sequential_extraction_agree() {
    let pts = sphere_set(1500);
    let a = reconstruct_surface(
        &pts,
        &ExtractOptions {
            execution: Execution::Parallel,
            ..opts(28)
        },
    )
    .unwrap();
    let b = reconstruct_surface(
        &pts,
        &ExtractOptions {
            execution: Execution::Sequential,
            ..opts(28)
        },
    )
    .unwrap();
    assert_eq!(a.mesh, b.mesh);
}
