//! Analytic render gradients against central finite differences.

use meshsplat::exec::Execution;
use meshsplat::optimize::Trainable;
use meshsplat::raster::{render, render_backward, RenderOptions, RenderTarget};
use meshsplat::scene::weight_template;
use meshsplat::{
    BoundAsset, Camera, CameraPose, ColoredMesh, GaussianCloud3D, Image, SurfelCloud2D,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Outcome;

const SIZE: usize = 32;
/// Decreasing central-difference steps. A per-pixel depth-order swap
/// within a step adds a jump `J / 2h`; it shows up as disagreement between
/// consecutive steps and is skipped by refining.
const STEPS: [f64; 4] = [1e-5, 1e-6, 1e-7, 1e-8];
const AGREEMENT: f64 = 1e-5;
const TOLERANCE: f64 = 1e-3;
const SCENES: usize = 10;

// A wide cutoff makes the truncation jump (~exp(-32)) invisible to the
// difference quotient.
fn options() -> RenderOptions {
    RenderOptions {
        extent_sigma: 8.0,
        background: [0.2, 0.3, 0.4],
        execution: Execution::Sequential,
        ..Default::default()
    }
}

struct Probe {
    color: Image,
    alpha: Vec<f64>,
}

impl Probe {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let color = Image::from_data(
            SIZE,
            SIZE,
            (0..SIZE * SIZE * 3)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        );
        let alpha = (0..SIZE * SIZE)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Probe { color, alpha }
    }

    fn loss(&self, t: &RenderTarget) -> f64 {
        let c: f64 = t
            .color
            .data
            .iter()
            .zip(&self.color.data)
            .map(|(a, b)| a * b)
            .sum();
        c + t
            .alpha
            .iter()
            .zip(&self.alpha)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    }
}

fn camera(rng: &mut ChaCha8Rng) -> Camera {
    CameraPose::new(
        4.0,
        rng.random_range(-180.0..180.0),
        rng.random_range(40.0..140.0),
        45.0,
        SIZE,
        SIZE,
    )
    .camera()
    .unwrap()
}

fn quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    [
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ]
}

fn point(rng: &mut ChaCha8Rng, r: f64) -> [f64; 3] {
    [
        rng.random_range(-r..r),
        rng.random_range(-r..r),
        rng.random_range(-r..r),
    ]
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
    ]
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> GaussianCloud3D {
    let mut c = GaussianCloud3D::default();
    for _ in 0..n {
        let s = [
            rng.random_range(0.08..0.4),
            rng.random_range(0.08..0.4),
            rng.random_range(0.08..0.4),
        ];
        c.push(
            point(rng, 0.8),
            color(rng),
            rng.random_range(0.2..0.7),
            s,
            quat(rng),
        );
    }
    // Raw, unnormalized quaternions exercise the normalization chain.
    for q in &mut c.rotations {
        *q = q.map(|v| v * 1.7);
    }
    c
}

pub fn random_surfels(rng: &mut ChaCha8Rng, n: usize) -> SurfelCloud2D {
    let mut c = SurfelCloud2D::default();
    for _ in 0..n {
        let s = [rng.random_range(0.1..0.45), rng.random_range(0.1..0.45)];
        c.push(
            point(rng, 0.8),
            color(rng),
            rng.random_range(0.2..0.7),
            s,
            quat(rng),
        );
    }
    c
}

pub fn random_bound(rng: &mut ChaCha8Rng, triangles: usize) -> BoundAsset {
    let vertices: Vec<[f64; 3]> = (0..triangles + 2).map(|_| point(rng, 0.9)).collect();
    let tris: Vec<[u32; 3]> = (0..triangles as u32).map(|t| [t, t + 1, t + 2]).collect();
    let mesh = ColoredMesh::new(vertices.clone(), vec![[0.5; 3]; vertices.len()], tris);
    let weights = weight_template(3).unwrap();
    let n = triangles * weights.len();
    BoundAsset {
        mesh,
        weights,
        colors: (0..n).map(|_| color(rng)).collect(),
        opacity_logits: (0..n).map(|_| rng.random_range(-1.2..0.8)).collect(),
        rotations: (0..n)
            .map(|_| {
                let a: f64 = rng.random_range(-3.0..3.0);
                [a.cos(), a.sin()]
            })
            .collect(),
        log_scales: (0..n)
            .map(|_| {
                [
                    rng.random_range(-2.3..-1.0),
                    rng.random_range(-2.3..-1.0),
                    rng.random_range(-3.0..-1.5),
                ]
            })
            .collect(),
    }
}

/// Worst relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`
/// per group.
fn check<T: Trainable>(scene: &T, cam: &Camera, probe: &Probe) -> Vec<(&'static str, f64)>
where
    T::Gradients: Send,
{
    let opts = options();
    let analytic = T::flatten_gradients(
        render_backward(scene, cam, &opts, &probe.color, Some(&probe.alpha)).unwrap(),
    );
    let eval = |s: &T| probe.loss(&render(s, cam, &opts).unwrap());
    let mut out = Vec::new();
    for (g, name) in T::GROUPS.iter().enumerate() {
        let len = scene.groups()[g].len();
        let mut diff = 0.0;
        let mut an = 0.0;
        let mut nu = 0.0;
        for i in 0..len {
            let fd = |h: f64| {
                let mut plus = scene.clone();
                plus.groups_mut()[g][i] += h;
                let mut minus = scene.clone();
                minus.groups_mut()[g][i] -= h;
                (eval(&plus) - eval(&minus)) / (2.0 * h)
            };
            let estimates: Vec<f64> = STEPS.iter().map(|&h| fd(h)).collect();
            let numeric = estimates
                .windows(2)
                .find(|w| (w[0] - w[1]).abs() <= AGREEMENT * (1.0 + w[1].abs()))
                .map_or(estimates[1], |w| w[1]);
            let a = analytic[g][i];
            diff += (a - numeric).powi(2);
            an += a * a;
            nu += numeric * numeric;
        }
        let scale = an.sqrt().max(nu.sqrt());
        out.push((
            *name,
            if scale < 1e-9 {
                0.0
            } else {
                diff.sqrt() / scale
            },
        ));
    }
    out
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut note = |kind: &str, errs: Vec<(&'static str, f64)>| {
        for (g, e) in errs {
            let key = format!("{kind}.{g}");
            match worst.iter_mut().find(|(k, _)| *k == key) {
                Some((_, w)) => *w = w.max(e),
                None => worst.push((key, e)),
            }
        }
    };
    for _ in 0..SCENES {
        let cam = camera(&mut rng);
        let probe = Probe::random(&mut rng);
        let n = rng.random_range(8..=20);
        note("gaussians", check(&random_cloud(&mut rng, n), &cam, &probe));
        note("surfels", check(&random_surfels(&mut rng, n), &cam, &probe));
        note("bound", check(&random_bound(&mut rng, n / 3), &cam, &probe));
    }
    let (key, max) =
        worst
            .iter()
            .cloned()
            .fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    Outcome::new(
        max < TOLERANCE && worst.iter().all(|(_, e)| e.is_finite()),
        format!(
            "{} groups over {SCENES} scenes per kind, worst relative error {max:.2e} ({key})",
            worst.len()
        ),
    )
}
