//! Built-in assets, addressed as `builtin:<name>[:<detail>]` wherever a
//! file path is accepted.

use anyhow::Result;
use meshsplat::optimize::{init_surfels, StageConfig};
use meshsplat::primitives::{box_mesh, icosphere};
use meshsplat::{ColoredMesh, SurfelCloud2D};

use crate::usage;

pub const PREFIX: &str = "builtin:";
const GRAY: [f64; 3] = [0.5; 3];

pub fn is_builtin(s: &str) -> bool {
    s.starts_with(PREFIX)
}

/// Smooth color field used by the textured ground truth.
pub fn sphere_texture(p: [f64; 3]) -> [f64; 3] {
    [
        0.5 + 0.35 * (2.0 * p[0]).sin(),
        0.5 + 0.35 * (3.0 * p[1] + p[2]).cos(),
        0.45 + 0.3 * p[2],
    ]
}

/// Dense unit-sphere surfel scene (2562 surfels) colored by [`sphere_texture`].
pub fn textured_sphere() -> SurfelCloud2D {
    let mut s = init_surfels(&icosphere(4, 1.0, GRAY), &StageConfig::default())
        .expect("icosphere is valid");
    for i in 0..s.len() {
        s.colors[i] = sphere_texture(s.positions[i]);
        s.opacity_logits[i] = 3.0;
    }
    s
}

/// `builtin:sphere[:subdivisions]` (gray unit icosphere, default 3) or
/// `builtin:cube[:cells]`.
pub fn builtin_mesh(spec: &str) -> Result<ColoredMesh> {
    let rest = spec.strip_prefix(PREFIX).unwrap_or(spec);
    let mut parts = rest.splitn(2, ':');
    let name = parts.next().unwrap_or_default();
    let detail = parts
        .next()
        .map(|d| {
            d.parse::<usize>()
                .map_err(|_| usage(format!("bad detail `{d}` in `{spec}`")))
        })
        .transpose()?;
    match name {
        "sphere" => Ok(icosphere(detail.unwrap_or(3).min(6), 1.0, GRAY)),
        "cube" => Ok(box_mesh([0.7; 3], detail.unwrap_or(8).max(1), GRAY)),
        other => Err(usage(format!("unknown built-in mesh `{other}`"))),
    }
}
