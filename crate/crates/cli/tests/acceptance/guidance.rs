//! Score-distillation identities.

use meshsplat::guidance::{
    cfg_combine, ddim_denoise, ddim_invert, ism_update, sds_update, GuidanceError, NoiseSchedule,
    ScoreProvider, ToyDiffusion,
};
use meshsplat::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Outcome;

const ROUND_TRIP: f64 = 1e-5;

struct Fixed(Image);

impl ScoreProvider for Fixed {
    fn predict_noise(&self, _: &Image, _: usize, _: &str) -> Result<Image, GuidanceError> {
        Ok(self.0.clone())
    }
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    Image::from_data(
        w,
        h,
        (0..w * h * 3)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

fn max_abs(img: &Image) -> f64 {
    img.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

fn max_diff(a: &Image, b: &Image) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn run() -> Outcome {
    let s = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures = Vec::new();
    let (mut sds, mut ism, mut cfg, mut ddim) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);

    for _ in 0..20 {
        let x = random_image(&mut rng, 8, 6);
        let eps = random_image(&mut rng, 8, 6);
        let t = rng.random_range(1..=1000);
        let scale = rng.random_range(1.0..20.0);

        let u = sds_update(&s, &x, &Fixed(eps.clone()), "a chair", scale, t, &eps, 1.0).unwrap();
        sds = sds.max(max_abs(&u.gradient));

        let mean: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let same = ToyDiffusion::new(s.clone(), mean, mean, rng.random_range(0.01..0.5));
        let u = ism_update(&s, &x, &same, "a chair", scale, t, 0, 1, &eps, 1.0).unwrap();
        ism = ism.max(max_abs(&u.gradient));
        let constant = Fixed(random_image(&mut rng, 8, 6));
        let delta = rng.random_range(0..t);
        let u = ism_update(&s, &x, &constant, "a chair", scale, t, delta, 3, &eps, 1.0).unwrap();
        ism = ism.max(max_abs(&u.gradient));

        let c = random_image(&mut rng, 8, 6);
        let un = random_image(&mut rng, 8, 6);
        cfg = cfg.max(max_diff(&cfg_combine(&c, &un, 1.0).unwrap(), &c));
        cfg = cfg.max(max_diff(&cfg_combine(&un, &un, scale).unwrap(), &un));
        let toy = ToyDiffusion::new(s.clone(), mean, [0.3, 0.5, 0.7], 0.1);
        let guided = toy.predict_guided(&x, t, "a chair", 1.0).unwrap();
        cfg = cfg.max(max_diff(
            &guided,
            &toy.predict_noise(&x, t, "a chair").unwrap(),
        ));

        let toy = ToyDiffusion::new(s.clone(), mean, mean.map(|v| 1.0 - v), 1e-4);
        let from = rng.random_range(200..=1000);
        let delta = rng.random_range(1..=from - 100);
        let x_t = random_image(&mut rng, 2, 2);
        let x_s = ddim_denoise(&s, &x_t, from, delta, delta, &toy).unwrap();
        let back = ddim_invert(&s, &x_s, from - delta, delta, delta, &toy).unwrap();
        ddim = ddim.max(max_diff(&back, &x_t));
    }
    if sds != 0.0 {
        failures.push("sds");
    }
    if ism != 0.0 {
        failures.push("ism");
    }
    if cfg > 1e-15 {
        failures.push("cfg");
    }
    if !(ddim < ROUND_TRIP) {
        failures.push("ddim");
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "sds {sds:.1e}, ism {ism:.1e}, cfg {cfg:.1e}, ddim round trip {ddim:.1e}{}",
            failed(&failures)
        ),
    )
}

fn failed(names: &[&str]) -> String {
    if names.is_empty() {
        String::new()
    } else {
        format!(" (failed: {})", names.join(", "))
    }
}
