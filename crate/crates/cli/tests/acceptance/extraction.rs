//! Surface extraction on analytic point sets.

use meshsplat::extract::{reconstruct_surface, ExtractOptions, OrientedPointSet};
use meshsplat::math::v3;
use meshsplat::primitives::{cube_points, sphere_points};
use meshsplat::ColoredMesh;

use super::Outcome;

fn options(resolution: usize) -> ExtractOptions {
    ExtractOptions {
        resolution,
        max_triangles: None,
        ..Default::default()
    }
}

fn radial(mesh: &ColoredMesh) -> (f64, f64) {
    let errs: Vec<f64> = mesh
        .vertices
        .iter()
        .map(|v| (v3(*v).norm() - 1.0).abs())
        .collect();
    (
        errs.iter().sum::<f64>() / errs.len() as f64,
        errs.iter().cloned().fold(0.0, f64::max),
    )
}

pub fn run() -> Outcome {
    let (p, n) = sphere_points(10_000, 1.0);
    let sphere = OrientedPointSet::new(p, n).unwrap();
    let mut means = Vec::new();
    let mut last = (f64::NAN, f64::NAN);
    for res in [32, 64, 128] {
        let e = reconstruct_surface(&sphere, &options(res)).unwrap();
        last = radial(&e.mesh);
        means.push(last.0);
    }
    let monotone = means.windows(2).all(|w| w[1] < w[0]);

    let (p, n) = cube_points(60, 1.0);
    let cube = reconstruct_surface(&OrientedPointSet::new(p, n).unwrap(), &options(128)).unwrap();
    let volume = cube.mesh.signed_volume();

    let (mean, max) = last;
    Outcome::new(
        mean < 0.02 && max < 0.05 && (volume - 1.0).abs() < 0.1 && monotone,
        format!(
            "sphere at 128: mean {mean:.4}, max {max:.4}; cube volume {volume:.4}; mean error by resolution 32/64/128: {}",
            means.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>().join(" > ")
        ),
    )
}
