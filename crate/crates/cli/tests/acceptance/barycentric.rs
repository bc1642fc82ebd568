//! Barycentric binding of Gaussians to triangles.

use meshsplat::bind::apply_deformation;
use meshsplat::math::{quat_to_matrix, v3, Mat3, Vec3};
use meshsplat::BoundAsset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradients::random_bound;
use super::{random_rigid, Outcome};

const TOLERANCE: f64 = 1e-9;
const TRIALS: usize = 20;

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            let w: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let s: f64 = w.iter().sum();
            w.map(|v| v / s)
        })
        .collect()
}

fn positions(asset: &BoundAsset, vertices: &[[f64; 3]]) -> Vec<Vec3> {
    apply_deformation(asset, vertices, None)
        .unwrap()
        .positions
        .iter()
        .map(|p| v3(*p))
        .collect()
}

/// Barycentric coordinates of `p` in triangle `(a, b, c)` from signed areas.
fn coordinates(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> [f64; 3] {
    let n = (b - a).cross(&(c - a));
    let area = n.dot(&n);
    [
        (b - p).cross(&(c - p)).dot(&n) / area,
        (c - p).cross(&(a - p)).dot(&n) / area,
        (a - p).cross(&(b - p)).dot(&n) / area,
    ]
}

fn host(asset: &BoundAsset, vertices: &[[f64; 3]], i: usize) -> [Vec3; 3] {
    asset.mesh.triangles[i / asset.weights.len()].map(|k| v3(vertices[k as usize]))
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut convex, mut rigid, mut linear, mut round_trip) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for trial in 0..TRIALS {
        let mut asset = random_bound(&mut rng, 6);
        if trial % 2 == 1 {
            asset.weights = random_weights(&mut rng, 5);
            let n = asset.triangle_count() * 5;
            asset.colors = vec![[0.5; 3]; n];
            asset.opacity_logits = vec![0.0; n];
            asset.rotations = vec![[1.0, 0.0]; n];
            asset.log_scales = vec![[-2.0; 3]; n];
        }
        let verts = asset.mesh.vertices.clone();
        let base = positions(&asset, &verts);

        for (i, p) in base.iter().enumerate() {
            let [a, b, c] = host(&asset, &verts, i);
            let w = coordinates(p, &a, &b, &c);
            let expected = asset.weights[i % asset.weights.len()];
            // inside the triangle: all coordinates in [0, 1] and summing to 1
            let outside = w
                .iter()
                .map(|v| (-v).max(v - 1.0).max(0.0))
                .fold(0.0, f64::max);
            convex = convex.max(outside).max((w.iter().sum::<f64>() - 1.0).abs());
            for k in 0..3 {
                round_trip = round_trip.max((w[k] - expected[k]).abs());
            }
        }

        let (rot, trans) = random_rigid(&mut rng);
        let moved: Vec<[f64; 3]> = verts
            .iter()
            .map(|v| (rot * v3(*v) + trans).into())
            .collect();
        let cloud = apply_deformation(&asset, &verts, None).unwrap();
        let cloud_moved = apply_deformation(&asset, &moved, None).unwrap();
        for i in 0..cloud.len() {
            let expect = rot * v3(cloud.positions[i]) + trans;
            rigid = rigid.max((expect - v3(cloud_moved.positions[i])).amax());
            let r0: Mat3 = quat_to_matrix(cloud.rotations[i]);
            let r1: Mat3 = quat_to_matrix(cloud_moved.rotations[i]);
            rigid = rigid.max((rot * r0 - r1).amax());
            let s = cloud.log_scales[i];
            rigid = rigid.max(
                (0..3)
                    .map(|k| (s[k] - cloud_moved.log_scales[i][k]).abs())
                    .fold(0.0, f64::max),
            );
        }

        let other: Vec<[f64; 3]> = verts
            .iter()
            .map(|v| v.map(|c| c + rng.random_range(-0.3..0.3)))
            .collect();
        let (x, y) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mixed: Vec<[f64; 3]> = verts
            .iter()
            .zip(&other)
            .map(|(a, b)| std::array::from_fn(|k| x * a[k] + y * b[k]))
            .collect();
        let p_other = positions(&asset, &other);
        let p_mixed = positions(&asset, &mixed);
        for i in 0..base.len() {
            linear = linear.max((base[i] * x + p_other[i] * y - p_mixed[i]).amax());
        }
    }
    let worst = convex.max(rigid).max(linear).max(round_trip);
    Outcome::new(
        worst <= TOLERANCE,
        format!(
            "{TRIALS} assets: convexity {convex:.1e}, rigid {rigid:.1e}, linearity {linear:.1e}, round trip {round_trip:.1e}"
        ),
    )
}
