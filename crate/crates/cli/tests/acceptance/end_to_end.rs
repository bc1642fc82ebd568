//! Two-stage reconstruction of a textured sphere from photometric references.

use std::path::Path;

use meshsplat::optimize::{held_out_poses, mean_psnr, BindingMode};
use meshsplat::raster::render;
use meshsplat::Camera;
use meshsplat_cli::commands;
use meshsplat_cli::config::PipelineConfig;
use meshsplat_cli::fixtures::textured_sphere;

use super::Outcome;

const STAGE1_PSNR: f64 = 28.0;
const STAGE2_PSNR: f64 = 30.0;
const BOUND_MARGIN: f64 = 1.0;

pub fn run() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/oracle-sphere.toml");
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::load(Some(&path), &[]).unwrap();
    cfg.output = tmp.path().to_path_buf();
    cfg.validate().unwrap();

    let truth = textured_sphere();
    let opts = cfg.stage2.render;
    let poses = held_out_poses(8, 4.5, cfg.stage1.fov, cfg.stage1.render_resolution);
    let reference = |c: &Camera| Ok(render(&truth, c, &opts)?.color);

    let s1 = commands::stage1(&cfg, None).unwrap();
    let p1 = mean_psnr(
        |c| Ok(render(&s1.surfels, c, &opts)?.color),
        reference,
        &poses,
    )
    .unwrap();

    let bound = commands::stage2(&cfg, Some(&s1.extraction.mesh), None).unwrap();
    let p_bound = mean_psnr(
        |c| Ok(bound.asset.render(c, &opts)?.color),
        reference,
        &poses,
    )
    .unwrap();

    let mut free_cfg = cfg.clone();
    free_cfg.stage2.mode = BindingMode::Free;
    free_cfg.output = tmp.path().join("free");
    let free = commands::stage2(&free_cfg, Some(&s1.extraction.mesh), None).unwrap();
    let p_free = mean_psnr(
        |c| Ok(free.asset.render(c, &opts)?.color),
        reference,
        &poses,
    )
    .unwrap();

    let margin = p_bound - p_free;
    let absolute = p1 > STAGE1_PSNR && p_bound > STAGE2_PSNR;
    Outcome {
        passed: absolute && margin >= BOUND_MARGIN,
        detail: format!(
            "stage1 {p1:.2} dB (> {STAGE1_PSNR}), stage2 bound {p_bound:.2} dB (> {STAGE2_PSNR}), free {p_free:.2} dB, bound - free {margin:+.2} dB (>= {BOUND_MARGIN})"
        ),
        known_shortfall: absolute,
    }
}
