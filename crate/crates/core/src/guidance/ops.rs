use crate::image::Image;

use super::{GuidanceError, GuidanceUpdate, NoiseSchedule, ScoreProvider};

fn check_shape(a: &Image, b: &Image) -> Result<(), GuidanceError> {
    if !a.same_shape(b) {
        return Err(GuidanceError::ShapeMismatch {
            expected: (a.width, a.height),
            actual: (b.width, b.height),
        });
    }
    Ok(())
}

fn check_finite(what: &'static str, img: &Image) -> Result<(), GuidanceError> {
    if !img.is_finite() {
        return Err(GuidanceError::NonFinite(what));
    }
    Ok(())
}

fn zip(a: &Image, b: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
    Image::from_data(
        a.width,
        a.height,
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

/// `x_t = √ᾱ_t·x + √(1−ᾱ_t)·ε`.
pub fn add_noise(
    schedule: &NoiseSchedule,
    x: &Image,
    t: usize,
    eps: &Image,
) -> Result<Image, GuidanceError> {
    schedule.check(t)?;
    check_shape(x, eps)?;
    let (a, s) = (schedule.alpha_bar(t).sqrt(), schedule.sigma(t));
    Ok(zip(x, eps, |x, e| a * x + s * e))
}

/// `ε̂_uncond + scale·(ε̂_cond − ε̂_uncond)`.
pub fn cfg_combine(cond: &Image, uncond: &Image, scale: f64) -> Result<Image, GuidanceError> {
    check_shape(cond, uncond)?;
    Ok(zip(cond, uncond, |c, u| u + scale * (c - u)))
}

/// One deterministic DDIM move from level `from` to level `to` with a given
/// noise estimate. Works in both directions and is exactly inverted by the
/// opposite move with the same estimate.
pub fn ddim_step(
    schedule: &NoiseSchedule,
    x: &Image,
    from: usize,
    to: usize,
    eps: &Image,
) -> Result<Image, GuidanceError> {
    schedule.check(from)?;
    schedule.check(to)?;
    check_shape(x, eps)?;
    let (af, sf) = (schedule.alpha_bar(from).sqrt(), schedule.sigma(from));
    let (at, st) = (schedule.alpha_bar(to).sqrt(), schedule.sigma(to));
    Ok(zip(x, eps, |x, e| {
        let x0 = (x - sf * e) / af;
        at * x0 + st * e
    }))
}

fn stride_levels(from: usize, to: usize, strides: usize) -> Vec<usize> {
    let n = strides.max(1).min(from.abs_diff(to).max(1));
    (0..=n)
        .map(|k| {
            let f = k as f64 / n as f64;
            (from as f64 + f * (to as f64 - from as f64)).round() as usize
        })
        .collect()
}

/// DDIM inversion from level `s` to `s + delta` using unconditional
/// predictions, split into `strides` equal moves.
pub fn ddim_invert(
    schedule: &NoiseSchedule,
    x_s: &Image,
    s: usize,
    delta: usize,
    strides: usize,
    provider: &dyn ScoreProvider,
) -> Result<Image, GuidanceError> {
    schedule.check(s)?;
    schedule.check(s + delta)?;
    run_ddim(
        schedule,
        x_s,
        &stride_levels(s, s + delta, strides),
        provider,
    )
}

/// Deterministic DDIM sampling from level `t` down to `t − delta`.
pub fn ddim_denoise(
    schedule: &NoiseSchedule,
    x_t: &Image,
    t: usize,
    delta: usize,
    strides: usize,
    provider: &dyn ScoreProvider,
) -> Result<Image, GuidanceError> {
    schedule.check(t)?;
    let s = t
        .checked_sub(delta)
        .ok_or(GuidanceError::LevelOutOfRange { t: delta, max: t })?;
    run_ddim(schedule, x_t, &stride_levels(t, s, strides), provider)
}

fn run_ddim(
    schedule: &NoiseSchedule,
    x: &Image,
    levels: &[usize],
    provider: &dyn ScoreProvider,
) -> Result<Image, GuidanceError> {
    let mut x = x.clone();
    for w in levels.windows(2) {
        if w[0] == w[1] {
            continue;
        }
        let eps = provider.predict_noise(&x, w[0], "")?;
        check_shape(&x, &eps)?;
        check_finite("noise prediction", &eps)?;
        x = ddim_step(schedule, &x, w[0], w[1], &eps)?;
    }
    Ok(x)
}

/// `w·(ε̂(x_t; y, t) − ε)` with `x_t` built from `x` and the given noise.
#[allow(clippy::too_many_arguments)]
pub fn sds_update(
    schedule: &NoiseSchedule,
    x: &Image,
    provider: &dyn ScoreProvider,
    prompt: &str,
    cfg: f64,
    t: usize,
    eps: &Image,
    weight: f64,
) -> Result<GuidanceUpdate, GuidanceError> {
    let x_t = add_noise(schedule, x, t, eps)?;
    let pred = provider.predict_guided(&x_t, t, prompt, cfg)?;
    check_shape(x, &pred)?;
    check_finite("noise prediction", &pred)?;
    let gradient = zip(&pred, eps, |p, e| weight * (p - e));
    Ok(GuidanceUpdate::new(gradient, Some(t), None))
}

/// Interval score update: `w·(ε̂(x_t; y, t) − ε̂(x_s; ∅, s))` where `x_s` is
/// `x` noised to `s = t − δ` and `x_t` is its DDIM inversion.
#[allow(clippy::too_many_arguments)]
pub fn ism_update(
    schedule: &NoiseSchedule,
    x: &Image,
    provider: &dyn ScoreProvider,
    prompt: &str,
    cfg: f64,
    t: usize,
    delta: usize,
    strides: usize,
    eps: &Image,
    weight: f64,
) -> Result<GuidanceUpdate, GuidanceError> {
    schedule.check(t)?;
    let s = t
        .checked_sub(delta)
        .ok_or(GuidanceError::LevelOutOfRange { t: delta, max: t })?;
    let x_s = add_noise(schedule, x, s, eps)?;
    let eps_s = provider.predict_noise(&x_s, s, "")?;
    check_shape(x, &eps_s)?;
    check_finite("noise prediction", &eps_s)?;
    let x_t = if delta == 0 {
        x_s.clone()
    } else {
        let levels = stride_levels(s, t, strides);
        let mut cur = ddim_step(schedule, &x_s, s, levels[1], &eps_s)?;
        for w in levels[1..].windows(2) {
            let e = provider.predict_noise(&cur, w[0], "")?;
            check_finite("noise prediction", &e)?;
            cur = ddim_step(schedule, &cur, w[0], w[1], &e)?;
        }
        cur
    };
    let eps_t = provider.predict_guided(&x_t, t, prompt, cfg)?;
    check_shape(x, &eps_t)?;
    check_finite("noise prediction", &eps_t)?;
    let gradient = zip(&eps_t, &eps_s, |a, b| weight * (a - b));
    Ok(GuidanceUpdate::new(gradient, Some(t), Some(s)))
}

/// `x − x_ref`, the gradient of `½‖x − x_ref‖²`.
pub fn photometric_update(x: &Image, reference: &Image) -> Result<GuidanceUpdate, GuidanceError> {
    check_shape(x, reference)?;
    check_finite("reference", reference)?;
    let mut u = GuidanceUpdate::new(zip(x, reference, |a, b| a - b), None, None);
    u.loss = 0.5 * u.gradient.data.iter().map(|d| d * d).sum::<f64>()
        / u.gradient.data.len().max(1) as f64;
    Ok(u)
}
