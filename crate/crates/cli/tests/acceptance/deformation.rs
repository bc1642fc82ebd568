//! Rigid playback of a deformation stream against a moved camera.

use meshsplat::bind::{build_bound_asset, DeformationPlayer, DeformationStream};
use meshsplat::math::v3;
use meshsplat::primitives::icosphere;
use meshsplat::raster::{render, RenderOptions};
use meshsplat::CameraPose;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{random_rigid, Outcome};

const TOLERANCE: f64 = 1e-5;
const FRAMES: usize = 8;

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mesh = icosphere(2, 0.8, [0.5; 3]);
    for (v, c) in mesh.vertices.iter().zip(mesh.colors.iter_mut()) {
        *c = [
            0.5 + 0.4 * (3.0 * v[0]).sin(),
            0.5 + 0.4 * (2.0 * v[1]).cos(),
            0.5 + 0.4 * v[2],
        ];
    }
    let mut asset = build_bound_asset(&mesh, 3).unwrap();
    for (r, s) in asset.rotations.iter_mut().zip(asset.log_scales.iter_mut()) {
        let a: f64 = rng.random_range(-3.0..3.0);
        *r = [a.cos(), a.sin()];
        s[0] += rng.random_range(-0.3..0.3);
    }
    let rest = asset.mesh.vertices.clone();
    let motions: Vec<_> = (0..FRAMES).map(|_| random_rigid(&mut rng)).collect();
    let mut stream = DeformationStream::new(rest.len());
    for (f, (rot, trans)) in motions.iter().enumerate() {
        let moved: Vec<[f64; 3]> = rest.iter().map(|v| (rot * v3(*v) + trans).into()).collect();
        stream.push(f as f32 / 30.0, &moved).unwrap();
    }
    let stream = DeformationStream::from_bytes(&stream.to_bytes()).unwrap();

    let opts = RenderOptions::default();
    let mut player = DeformationPlayer::new(&asset).unwrap();
    let mut worst = 0.0f64;
    for (f, (rot, trans)) in motions.iter().enumerate() {
        let pose = CameraPose::new(
            4.0,
            rng.random_range(-180.0..180.0),
            rng.random_range(40.0..140.0),
            49.1,
            128,
            128,
        );
        let cam = pose.camera().unwrap();
        // The stream stores f32 vertices; the camera follows that exact motion.
        let played = render(&player.pose(&stream.frame(f)).unwrap(), &cam, &opts)
            .unwrap()
            .color;
        let moved_cam = cam.composed_with_rigid(rot, trans);
        let rest_cloud = meshsplat::bind::apply_deformation(&asset, &rest, None).unwrap();
        let reposed = render(&rest_cloud, &moved_cam, &opts).unwrap().color;
        let mean = played
            .data
            .iter()
            .zip(&reposed.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / played.data.len() as f64;
        worst = worst.max(mean);
    }
    Outcome::new(
        worst < TOLERANCE,
        format!("{FRAMES} rigid frames, worst mean pixel difference {worst:.2e}"),
    )
}
