use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::StageConfig;
use crate::scene::CameraPose;

/// Independent random streams per iteration and batch slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Camera = 0,
    Guidance = 1,
}

/// Deterministic generator for one `(iteration, view)` slot of a run.
pub fn slot_rng(seed: u64, iteration: usize, view: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 16) | ((view as u64 & 0x7fff) << 1) | stream as u64);
    rng
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

/// Orbit pose with radius, azimuth and elevation drawn uniformly from the
/// configured ranges, at the render resolution.
pub fn sample_camera(config: &StageConfig, rng: &mut impl Rng) -> CameraPose {
    let radius = uniform(rng, config.radius);
    let azimuth = uniform(rng, config.azimuth);
    let elevation = uniform(rng, config.elevation);
    let r = config.render_resolution;
    CameraPose::new(radius, azimuth, elevation, config.fov, r, r)
}

/// Pose for view `view` of iteration `iteration`.
pub fn camera_for(config: &StageConfig, iteration: usize, view: usize) -> CameraPose {
    sample_camera(
        config,
        &mut slot_rng(config.seed, iteration, view, Stream::Camera),
    )
}

/// Evenly spread evaluation poses that the sampler is unlikely to hit
/// exactly: two elevation rings, azimuths offset by half a step.
pub fn held_out_poses(count: usize, radius: f64, fov: f64, size: usize) -> Vec<CameraPose> {
    let per_ring = count.div_ceil(2).max(1);
    (0..count)
        .map(|i| {
            let ring = i / per_ring;
            let k = i % per_ring;
            let azimuth = -180.0 + (k as f64 + 0.5 + 0.25 * ring as f64) * 360.0 / per_ring as f64;
            let elevation = if ring == 0 { 65.0 } else { 115.0 };
            CameraPose::new(radius, azimuth, elevation, fov, size, size)
        })
        .collect()
}
