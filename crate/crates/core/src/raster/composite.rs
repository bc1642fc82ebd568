//! Tile binning, front-to-back compositing, and its reverse-mode pass.

use super::fragment::{Footprint, FragmentGrad, SplatFragment};
use super::sort::{depth_key, radix_sort};
use super::{RenderError, RenderOptions, RenderTarget, MAX_ALPHA, MIN_TRANSMITTANCE};
use crate::exec::map_range;
use crate::image::Image;
use crate::math::Vec3;
use crate::scene::Camera;

/// Fragment lists per screen tile, each sorted by center depth.
#[derive(Debug, Clone)]
pub struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn build(
        fragments: &[SplatFragment],
        width: usize,
        height: usize,
        tile_size: usize,
    ) -> TileBins {
        let tiles_x = width.div_ceil(tile_size);
        let tiles_y = height.div_ceil(tile_size);
        let mut keyed: Vec<Vec<(u64, u32)>> = vec![Vec::new(); tiles_x * tiles_y];
        for (i, f) in fragments.iter().enumerate() {
            let r = f.rect;
            for ty in r.y0 / tile_size..=(r.y1 - 1) / tile_size {
                for tx in r.x0 / tile_size..=(r.x1 - 1) / tile_size {
                    keyed[ty * tiles_x + tx].push((depth_key(f.depth.max(0.0)), i as u32));
                }
            }
        }
        let lists = keyed
            .into_iter()
            .map(|mut l| {
                radix_sort(&mut l);
                l.into_iter().map(|(_, i)| i).collect()
            })
            .collect();
        TileBins {
            tile_size,
            tiles_x,
            tiles_y,
            lists,
        }
    }

    fn tile_pixels(
        &self,
        tile: usize,
        width: usize,
        height: usize,
    ) -> (usize, usize, usize, usize) {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (
            x0,
            (x0 + self.tile_size).min(width),
            y0,
            (y0 + self.tile_size).min(height),
        )
    }
}

/// One fragment's contribution to one pixel, in compositing order.
#[derive(Debug, Clone, Copy)]
struct Contrib {
    /// Position in the tile list.
    slot: u32,
    alpha: f64,
    falloff: f64,
    clamped: bool,
    transmittance: f64,
    depth: f64,
    uv: [f64; 2],
}

struct PixelContext {
    center: Vec3,
    ray: Vec3,
    px: f64,
    py: f64,
}

/// Falloff of a fragment at a pixel: `(G, depth, (u, v))`, or `None` outside
/// the cutoff extent.
#[inline]
fn evaluate(
    f: &SplatFragment,
    ctx: &PixelContext,
    cutoff2: f64,
    near: f64,
) -> Option<(f64, f64, [f64; 2])> {
    match &f.footprint {
        Footprint::Ellipse { conic, .. } => {
            let dx = ctx.px - f.mean[0];
            let dy = ctx.py - f.mean[1];
            let q = conic[0] * dx * dx + 2.0 * conic[1] * dx * dy + conic[2] * dy * dy;
            if q > cutoff2 {
                return None;
            }
            Some(((-0.5 * q).exp(), f.depth, [dx, dy]))
        }
        Footprint::Surfel {
            center,
            tu,
            tv,
            normal,
            scale,
        } => {
            let nd = normal.dot(&ctx.ray);
            if nd == 0.0 {
                return None;
            }
            let delta = center - ctx.center;
            let tau = normal.dot(&delta) / nd;
            if !(tau > near) {
                return None;
            }
            let w = ctx.ray * tau - delta;
            let u = tu.dot(&w) / scale[0];
            let v = tv.dot(&w) / scale[1];
            let r2 = u * u + v * v;
            if !(r2 <= cutoff2) {
                return None;
            }
            Some(((-0.5 * r2).exp(), tau, [u, v]))
        }
    }
}

/// Builds the ordered contributor list of one pixel and returns the final
/// transmittance. Shared by the forward and backward passes so both see the
/// exact same sequence.
fn pixel_contribs(
    frags: &[SplatFragment],
    list: &[u32],
    per_pixel_sort: bool,
    ctx: &PixelContext,
    opts: &RenderOptions,
    out: &mut Vec<Contrib>,
) -> f64 {
    out.clear();
    let cutoff2 = opts.extent_sigma * opts.extent_sigma;
    let mut t = 1.0;
    if per_pixel_sort {
        for (slot, &fi) in list.iter().enumerate() {
            if let Some((g, depth, uv)) = evaluate(&frags[fi as usize], ctx, cutoff2, opts.near) {
                out.push(Contrib {
                    slot: slot as u32,
                    alpha: 0.0,
                    falloff: g,
                    clamped: false,
                    transmittance: 0.0,
                    depth,
                    uv,
                });
            }
        }
        out.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.slot.cmp(&b.slot)));
        let mut keep = out.len();
        for (k, c) in out.iter_mut().enumerate() {
            let raw = frags[list[c.slot as usize] as usize].opacity * c.falloff;
            c.clamped = raw > MAX_ALPHA;
            c.alpha = raw.min(MAX_ALPHA);
            c.transmittance = t;
            t *= 1.0 - c.alpha;
            if t < MIN_TRANSMITTANCE {
                keep = k + 1;
                break;
            }
        }
        out.truncate(keep);
    } else {
        for (slot, &fi) in list.iter().enumerate() {
            let f = &frags[fi as usize];
            let Some((g, depth, uv)) = evaluate(f, ctx, cutoff2, opts.near) else {
                continue;
            };
            let raw = f.opacity * g;
            let alpha = raw.min(MAX_ALPHA);
            out.push(Contrib {
                slot: slot as u32,
                alpha,
                falloff: g,
                clamped: raw > MAX_ALPHA,
                transmittance: t,
                depth,
                uv,
            });
            t *= 1.0 - alpha;
            if t < MIN_TRANSMITTANCE {
                break;
            }
        }
    }
    t
}

fn has_surfels(frags: &[SplatFragment]) -> bool {
    frags
        .iter()
        .any(|f| matches!(f.footprint, Footprint::Surfel { .. }))
}

/// Front-to-back alpha compositing of projected fragments.
pub fn composite(
    fragments: &[SplatFragment],
    camera: &Camera,
    opts: &RenderOptions,
) -> Result<RenderTarget, RenderError> {
    if let Some(f) = fragments.iter().find(|f| !f.is_finite()) {
        return Err(RenderError::NonFiniteFragment { index: f.source });
    }
    let (w, h) = (camera.width, camera.height);
    let bins = TileBins::build(fragments, w, h, opts.tile_size);
    let surfels = has_surfels(fragments);
    let center = camera.center();
    let bg = opts.background;
    let tiles = map_range(opts.execution, bins.lists.len(), |tile| {
        let (x0, x1, y0, y1) = bins.tile_pixels(tile, w, h);
        let list = &bins.lists[tile];
        let mut contribs = Vec::new();
        let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if list.is_empty() {
                    out.push((bg, 0.0, 0.0));
                    continue;
                }
                let ctx = PixelContext {
                    center,
                    ray: camera.ray_direction(px, py),
                    px,
                    py,
                };
                let t_final = pixel_contribs(fragments, list, surfels, &ctx, opts, &mut contribs);
                let mut color = [0.0; 3];
                let mut depth = 0.0;
                for c in &contribs {
                    let f = &fragments[list[c.slot as usize] as usize];
                    let wgt = c.alpha * c.transmittance;
                    for k in 0..3 {
                        color[k] += f.color[k] * wgt;
                    }
                    depth += c.depth * wgt;
                }
                for k in 0..3 {
                    color[k] += t_final * bg[k];
                }
                out.push((color, 1.0 - t_final, depth));
            }
        }
        out
    });
    let mut target = RenderTarget {
        color: Image::zeros(w, h),
        alpha: vec![0.0; w * h],
        depth: vec![0.0; w * h],
        background: bg,
    };
    for (tile, pixels) in tiles.into_iter().enumerate() {
        let (x0, x1, y0, y1) = bins.tile_pixels(tile, w, h);
        let mut it = pixels.into_iter();
        for y in y0..y1 {
            for x in x0..x1 {
                let (c, a, d) = it.next().expect("tile pixel count");
                target.color.set_pixel(x, y, c);
                target.alpha[y * w + x] = a;
                target.depth[y * w + x] = d;
            }
        }
    }
    Ok(target)
}

/// Reverse-mode pass of [`composite`]: gradients of the loss with respect
/// to every fragment's compositing inputs, given gradients on the color
/// image and optionally the alpha image.
///
/// The forward pass is recomputed per tile; per-tile gradients are merged
/// in tile order so the result does not depend on scheduling.
pub fn composite_backward(
    fragments: &[SplatFragment],
    camera: &Camera,
    opts: &RenderOptions,
    d_color: &Image,
    d_alpha: Option<&[f64]>,
) -> Result<Vec<FragmentGrad>, RenderError> {
    let (w, h) = (camera.width, camera.height);
    if d_color.width != w || d_color.height != h {
        return Err(RenderError::ShapeMismatch {
            expected: (w, h),
            actual: (d_color.width, d_color.height),
        });
    }
    if let Some(a) = d_alpha {
        if a.len() != w * h {
            return Err(RenderError::ShapeMismatch {
                expected: (w, h),
                actual: (a.len(), 1),
            });
        }
    }
    if let Some(f) = fragments.iter().find(|f| !f.is_finite()) {
        return Err(RenderError::NonFiniteFragment { index: f.source });
    }
    let bins = TileBins::build(fragments, w, h, opts.tile_size);
    let surfels = has_surfels(fragments);
    let center = camera.center();
    let bg = opts.background;
    let locals = map_range(opts.execution, bins.lists.len(), |tile| {
        let list = &bins.lists[tile];
        let mut local = vec![FragmentGrad::default(); list.len()];
        if list.is_empty() {
            return local;
        }
        let (x0, x1, y0, y1) = bins.tile_pixels(tile, w, h);
        let mut contribs = Vec::new();
        for y in y0..y1 {
            for x in x0..x1 {
                let dc = d_color.pixel(x, y);
                let da = d_alpha.map_or(0.0, |a| a[y * w + x]);
                if dc == [0.0; 3] && da == 0.0 {
                    continue;
                }
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let ctx = PixelContext {
                    center,
                    ray: camera.ray_direction(px, py),
                    px,
                    py,
                };
                let t_final = pixel_contribs(fragments, list, surfels, &ctx, opts, &mut contribs);
                let mut behind = [t_final * bg[0], t_final * bg[1], t_final * bg[2]];
                for c in contribs.iter().rev() {
                    let f = &fragments[list[c.slot as usize] as usize];
                    let g = &mut local[c.slot as usize];
                    let wgt = c.alpha * c.transmittance;
                    let inv = 1.0 / (1.0 - c.alpha);
                    let mut d_alpha_i = da * t_final * inv;
                    for k in 0..3 {
                        g.color[k] += dc[k] * wgt;
                        d_alpha_i += dc[k] * (f.color[k] * c.transmittance - behind[k] * inv);
                        behind[k] += f.color[k] * wgt;
                    }
                    if c.clamped {
                        continue;
                    }
                    g.opacity += d_alpha_i * c.falloff;
                    let d_falloff = d_alpha_i * f.opacity;
                    accumulate_falloff(f, &ctx, c, d_falloff, g);
                }
            }
        }
        local
    });
    let mut grads = vec![FragmentGrad::default(); fragments.len()];
    for (tile, local) in locals.into_iter().enumerate() {
        for (slot, g) in local.iter().enumerate() {
            grads[bins.lists[tile][slot] as usize].add(g);
        }
    }
    Ok(grads)
}

/// Chains `dL/dG` into the fragment's footprint parameters.
#[inline]
fn accumulate_falloff(
    f: &SplatFragment,
    ctx: &PixelContext,
    c: &Contrib,
    d_falloff: f64,
    g: &mut FragmentGrad,
) {
    match &f.footprint {
        Footprint::Ellipse { conic, .. } => {
            let [dx, dy] = c.uv;
            let dq = -0.5 * c.falloff * d_falloff;
            g.conic[0] += dq * dx * dx;
            g.conic[1] += dq * 2.0 * dx * dy;
            g.conic[2] += dq * dy * dy;
            // d = pixel - mean
            g.mean[0] -= dq * 2.0 * (conic[0] * dx + conic[1] * dy);
            g.mean[1] -= dq * 2.0 * (conic[1] * dx + conic[2] * dy);
        }
        Footprint::Surfel {
            center,
            tu,
            tv,
            normal,
            scale,
        } => {
            let [u, v] = c.uv;
            let gu = -c.falloff * u * d_falloff;
            let gv = -c.falloff * v * d_falloff;
            let delta = center - ctx.center;
            let tau = c.depth;
            let nd = normal.dot(&ctx.ray);
            let w = ctx.ray * tau - delta;
            let gw = tu * (gu / scale[0]) + tv * (gv / scale[1]);
            let g_tau = gw.dot(&ctx.ray);
            let g_delta = -gw + normal * (g_tau / nd);
            let g_normal = -w * (g_tau / nd);
            let g_tu = w * (gu / scale[0]);
            let g_tv = w * (gv / scale[1]);
            for k in 0..3 {
                g.center[k] += g_delta[k];
                g.tu[k] += g_tu[k];
                g.tv[k] += g_tv[k];
                g.normal[k] += g_normal[k];
            }
            g.log_scale[0] -= gu * u;
            g.log_scale[1] -= gv * v;
        }
    }
}
