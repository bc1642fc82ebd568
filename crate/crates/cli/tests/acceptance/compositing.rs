//! Tiled renderer against a per-pixel reference written from the
//! compositing equation alone.

use meshsplat::math::{v3, Mat3, Vec3};
use meshsplat::raster::{render, RenderOptions, LOW_PASS_VARIANCE, MAX_ALPHA, MIN_TRANSMITTANCE};
use meshsplat::{Camera, CameraPose, GaussianCloud3D, Image, SurfelCloud2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradients::{random_cloud, random_surfels};
use super::Outcome;

const SCENES: usize = 50;
const TOLERANCE: f64 = 1e-5;
const WIDTH: usize = 64;
const HEIGHT: usize = 48;

/// One primitive's contribution at a pixel: sort depth, alpha, color.
type Hit = (f64, f64, [f64; 3]);

fn blend(mut hits: Vec<(usize, Hit)>, bg: [f64; 3]) -> [f64; 3] {
    hits.sort_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)));
    let mut c = [0.0; 3];
    let mut t = 1.0;
    for (_, (_, alpha, col)) in hits {
        let a = alpha.min(MAX_ALPHA);
        for k in 0..3 {
            c[k] += col[k] * a * t;
        }
        t *= 1.0 - a;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    std::array::from_fn(|k| c[k] + t * bg[k])
}

fn clamp(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| v.clamp(0.0, 1.0))
}

fn reference_gaussians(cloud: &GaussianCloud3D, cam: &Camera, opts: &RenderOptions) -> Image {
    let cutoff = opts.extent_sigma * opts.extent_sigma;
    // (mean, inverse screen covariance, depth) per visible Gaussian
    let mut splats = Vec::new();
    for i in 0..cloud.len() {
        let t = cam.rotation * v3(cloud.positions[i]) + cam.translation;
        if t.z <= opts.near {
            continue;
        }
        let j = screen_jacobian(cam, &t);
        let w = j * cam.rotation;
        let s = w * cloud.covariance(i) * w.transpose();
        let (a, b, c) = (
            s[(0, 0)] + LOW_PASS_VARIANCE,
            s[(0, 1)],
            s[(1, 1)] + LOW_PASS_VARIANCE,
        );
        let det = a * c - b * b;
        let mean = [cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy];
        splats.push((i, mean, [c / det, -b / det, a / det], t.z));
    }
    let mut img = Image::zeros(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let hits = splats
                .iter()
                .filter_map(|&(i, m, q, depth)| {
                    let (dx, dy): (f64, f64) = (px - m[0], py - m[1]);
                    let r = q[0] * dx * dx + 2.0 * q[1] * dx * dy + q[2] * dy * dy;
                    (r <= cutoff).then(|| {
                        (
                            i,
                            (
                                depth,
                                cloud.opacity(i) * (-0.5 * r).exp(),
                                clamp(cloud.colors[i]),
                            ),
                        )
                    })
                })
                .collect();
            img.set_pixel(x, y, blend(hits, opts.background));
        }
    }
    img
}

/// Rows of `∂(u, v)/∂t` for the pinhole projection, padded to 3×3.
fn screen_jacobian(cam: &Camera, t: &Vec3) -> Mat3 {
    let iz = 1.0 / t.z;
    Mat3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * t.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * t.y * iz * iz,
        0.0,
        0.0,
        0.0,
    )
}

fn reference_surfels(s: &SurfelCloud2D, cam: &Camera, opts: &RenderOptions) -> Image {
    let cutoff = opts.extent_sigma * opts.extent_sigma;
    let origin = cam.center();
    let visible: Vec<usize> = (0..s.len())
        .filter(|&i| (cam.rotation * v3(s.positions[i]) + cam.translation).z > opts.near)
        .collect();
    let mut img = Image::zeros(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let dir = cam.ray_direction(x as f64 + 0.5, y as f64 + 0.5);
            let hits = visible
                .iter()
                .filter_map(|&i| {
                    let f = s.frame(i);
                    let n: Vec3 = f.column(2).into();
                    let rel = v3(s.positions[i]) - origin;
                    let tau = n.dot(&rel) / n.dot(&dir);
                    if !(tau > opts.near) {
                        return None;
                    }
                    let off = dir * tau - rel;
                    let sc = s.scale(i);
                    let u = f.column(0).dot(&off) / sc[0];
                    let v = f.column(1).dot(&off) / sc[1];
                    let r = u * u + v * v;
                    (r <= cutoff).then(|| {
                        (
                            i,
                            (tau, s.opacity(i) * (-0.5 * r).exp(), clamp(s.colors[i])),
                        )
                    })
                })
                .collect();
            img.set_pixel(x, y, blend(hits, opts.background));
        }
    }
    img
}

fn max_diff(a: &Image, b: &Image) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut covered = 0usize;
    for scene in 0..SCENES {
        let opts = RenderOptions {
            background: [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            ],
            ..Default::default()
        };
        let pose = CameraPose::new(
            rng.random_range(2.5..5.0),
            rng.random_range(-180.0..180.0),
            rng.random_range(20.0..160.0),
            rng.random_range(30.0..70.0),
            WIDTH,
            HEIGHT,
        );
        let cam = pose.camera().unwrap();
        let n = rng.random_range(1..=60);
        let (tiled, reference) = if scene % 2 == 0 {
            let mut c = random_cloud(&mut rng, n);
            // some dense, near-opaque clusters to reach the alpha ceiling
            // and early termination
            for o in c.opacity_logits.iter_mut().step_by(3) {
                *o = rng.random_range(2.0..8.0);
            }
            (
                render(&c, &cam, &opts).unwrap().color,
                reference_gaussians(&c, &cam, &opts),
            )
        } else {
            let mut s = random_surfels(&mut rng, n);
            for o in s.opacity_logits.iter_mut().step_by(3) {
                *o = rng.random_range(2.0..8.0);
            }
            (
                render(&s, &cam, &opts).unwrap().color,
                reference_surfels(&s, &cam, &opts),
            )
        };
        covered += reference
            .data
            .chunks(3)
            .filter(|p| p.iter().zip(&opts.background).any(|(a, b)| a != b))
            .count();
        worst = worst.max(max_diff(&tiled, &reference));
    }
    Outcome::new(
        worst < TOLERANCE,
        format!("{SCENES} scenes ({covered} covered pixels), max abs pixel difference {worst:.2e}"),
    )
}
