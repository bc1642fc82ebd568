//! The pipeline commands. Each writes its artifacts under the configured
//! output directory together with a resolved-config snapshot.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use meshsplat::bind::DeformationPlayer;
use meshsplat::extract::extract_mesh;
use meshsplat::optimize::{
    resume_stage1, resume_stage2, run_stage1, run_stage2, AssetState, Checkpoint, LossRecord,
    Observer, OptimizeError, Stage1Output, Stage2Asset, Stage2Output, StageKind,
};
use meshsplat::raster::{render, RenderOptions};
use meshsplat::{BoundAsset, CameraPose, ColoredMesh, GaussianCloud3D, Image};

use crate::config::{load_input_mesh, PipelineConfig, TurntableConfig};
use crate::{io, usage};

pub const CHECKPOINT_FILE: &str = "checkpoint.gdck";
pub const LOSS_FILE: &str = "loss.csv";
pub const TURNTABLE_FILE: &str = "turntable.png";
pub const CONFIG_SNAPSHOT: &str = "config.resolved.toml";

/// Something the commands can render.
pub enum Asset {
    Surfels(meshsplat::SurfelCloud2D),
    Cloud(GaussianCloud3D),
    Bound(BoundAsset),
}

impl Asset {
    pub fn render(&self, pose: &CameraPose, opts: &RenderOptions) -> Result<Image> {
        let cam = pose.camera()?;
        Ok(match self {
            Asset::Surfels(s) => render(s, &cam, opts)?.color,
            Asset::Cloud(c) => render(c, &cam, opts)?.color,
            Asset::Bound(b) => render(b, &cam, opts)?.color,
        })
    }

    /// A bound asset when a sidecar sits next to `path`, otherwise a
    /// Gaussian PLY.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(usage(format!(
                "asset path {} does not exist",
                path.display()
            )));
        }
        if io::sidecar_path(path).exists() {
            Ok(Asset::Bound(io::load_bound(path)?))
        } else {
            Ok(Asset::Cloud(io::load_gaussians(path)?))
        }
    }
}

/// `frames` views around the vertical axis at a fixed elevation, side by side.
pub fn turntable(
    asset: &Asset,
    t: &TurntableConfig,
    fov: f64,
    opts: &RenderOptions,
) -> Result<Image> {
    let frames = (0..t.frames)
        .map(|i| {
            let az = -180.0 + 360.0 * i as f64 / t.frames as f64;
            asset.render(
                &CameraPose::new(t.radius, az, t.elevation, fov, t.size, t.size),
                opts,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(io::hstack(&frames))
}

/// Logs progress and writes periodic checkpoints.
struct Progress {
    label: &'static str,
    dir: PathBuf,
    every: usize,
}

impl Observer for Progress {
    fn record(&mut self, r: &LossRecord) {
        if self.every > 0 && r.iteration % self.every == 0 {
            log::info!(
                "{} iteration {}: loss {:.4e}, mean |update| {:.4e}",
                self.label,
                r.iteration,
                r.loss,
                r.mean_update
            );
        }
    }

    fn checkpoint(&mut self, c: &Checkpoint) -> Result<(), OptimizeError> {
        c.save(&self.dir.join(CHECKPOINT_FILE))
            .map_err(|e| OptimizeError::Checkpoint(format!("{}: {e}", self.dir.display())))
    }
}

fn write_common(dir: &Path, history: &[LossRecord], checkpoint: &Checkpoint) -> Result<()> {
    io::write_bytes(&dir.join(LOSS_FILE), io::loss_csv(history).as_bytes())?;
    io::write_bytes(&dir.join(CHECKPOINT_FILE), &checkpoint.to_bytes())
}

/// Saves the checkpoint carried by an aborted run before passing the error on.
fn keep_abort_checkpoint<T>(dir: &Path, r: Result<T, OptimizeError>) -> Result<T> {
    r.map_err(|e| {
        if let Some(c) = e.checkpoint() {
            let path = dir.join(CHECKPOINT_FILE);
            match c.save(&path) {
                Ok(()) => log::error!("run aborted; checkpoint written to {}", path.display()),
                Err(w) => log::error!("run aborted and the checkpoint could not be written: {w}"),
            }
        }
        anyhow::Error::new(e)
    })
}

pub fn snapshot(cfg: &PipelineConfig) -> Result<()> {
    io::write_bytes(&cfg.output.join(CONFIG_SNAPSHOT), cfg.to_toml().as_bytes())
}

fn input_mesh(cfg: &PipelineConfig) -> Result<ColoredMesh> {
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| usage("no input mesh given (set `input` or pass --input)"))?;
    load_input_mesh(input)
}

pub fn stage1(cfg: &PipelineConfig, resume: Option<&Path>) -> Result<Stage1Output> {
    let dir = cfg.output.join("stage1");
    let guidance = cfg.guidance(&cfg.stage1)?;
    let mut progress = Progress {
        label: "stage1",
        dir: dir.clone(),
        every: 100,
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let out = match resume {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            keep_abort_checkpoint(
                &dir,
                resume_stage1(c, &cfg.export, guidance.as_ref(), &mut progress),
            )?
        }
        None => {
            let mesh = input_mesh(cfg)?;
            keep_abort_checkpoint(
                &dir,
                run_stage1(
                    &mesh,
                    &cfg.stage1,
                    &cfg.export,
                    guidance.as_ref(),
                    &mut progress,
                ),
            )?
        }
    };
    if out.extraction.inverted {
        log::warn!("exported surface is inside out");
    }
    io::save_mesh(&dir.join("mesh.ply"), &out.extraction.mesh)?;
    io::save_gaussians(&dir.join("surfels.ply"), &out.surfels.to_gaussians(0.01))?;
    write_common(&dir, &out.history, &out.checkpoint)?;
    let strip = turntable(
        &Asset::Surfels(out.surfels.clone()),
        &cfg.turntable,
        cfg.stage1.fov,
        &cfg.stage1.render,
    )?;
    io::save_png(&dir.join(TURNTABLE_FILE), &strip)?;
    log::info!(
        "stage1: {} surfels, mesh with {} vertices and {} triangles",
        out.surfels.len(),
        out.extraction.mesh.vertices.len(),
        out.extraction.mesh.triangles.len()
    );
    Ok(out)
}

pub fn stage2(
    cfg: &PipelineConfig,
    mesh: Option<&ColoredMesh>,
    resume: Option<&Path>,
) -> Result<Stage2Output> {
    let dir = cfg.output.join("stage2");
    let guidance = cfg.guidance(&cfg.stage2)?;
    let mut progress = Progress {
        label: "stage2",
        dir: dir.clone(),
        every: 100,
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let out = match resume {
        Some(p) => keep_abort_checkpoint(
            &dir,
            resume_stage2(Checkpoint::load(p)?, guidance.as_ref(), &mut progress),
        )?,
        None => {
            let loaded;
            let mesh = match mesh {
                Some(m) => m,
                None => {
                    loaded = input_mesh(cfg)?;
                    &loaded
                }
            };
            keep_abort_checkpoint(
                &dir,
                run_stage2(mesh, &cfg.stage2, guidance.as_ref(), &mut progress),
            )?
        }
    };
    let asset = match &out.asset {
        Stage2Asset::Bound(b) => {
            io::save_bound(&dir.join("bound.ply"), b)?;
            Asset::Bound(b.clone())
        }
        Stage2Asset::Free(c) => {
            io::save_gaussians(&dir.join("free.ply"), c)?;
            Asset::Cloud(c.clone())
        }
    };
    write_common(&dir, &out.history, &out.checkpoint)?;
    io::save_png(
        &dir.join(TURNTABLE_FILE),
        &turntable(&asset, &cfg.turntable, cfg.stage2.fov, &cfg.stage2.render)?,
    )?;
    log::info!("stage2: {} Gaussians", out.asset.len());
    Ok(out)
}

pub fn full(cfg: &PipelineConfig) -> Result<(Stage1Output, Stage2Output)> {
    let s1 = stage1(cfg, None)?;
    let s2 = stage2(cfg, Some(&s1.extraction.mesh), None)?;
    Ok((s1, s2))
}

/// Writes one PNG per stream frame into `out_dir`, posing the bound asset
/// on each frame's vertices.
pub fn animate(
    asset_path: &Path,
    stream_path: &Path,
    out_dir: &Path,
    pose: &CameraPose,
    opts: &RenderOptions,
) -> Result<usize> {
    let Asset::Bound(asset) = Asset::load(asset_path)? else {
        return Err(usage(format!(
            "{} is not a bound asset (no sidecar)",
            asset_path.display()
        )));
    };
    if !stream_path.exists() {
        return Err(usage(format!(
            "frames path {} does not exist",
            stream_path.display()
        )));
    }
    let stream = io::load_stream(stream_path)?;
    let mut player = DeformationPlayer::new(&asset)?;
    let cam = pose.camera()?;
    for f in 0..stream.len() {
        let cloud = player.pose(&stream.frame(f))?;
        io::save_png(
            &out_dir.join(format!("frame_{f:04}.png")),
            &render(&cloud, &cam, opts)?.color,
        )?;
    }
    Ok(stream.len())
}

/// Converts a checkpoint or asset into viewer files at `out`:
/// stage-1 checkpoints give the extracted mesh, bound assets are baked to a
/// Gaussian PLY, free clouds are copied.
pub fn export(source: &Path, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    if !source.exists() {
        return Err(usage(format!(
            "export source {} does not exist",
            source.display()
        )));
    }
    let bytes = io::read_bytes(source)?;
    if bytes.starts_with(meshsplat::optimize::CHECKPOINT_MAGIC) {
        let c = Checkpoint::from_bytes(&bytes)?;
        return match (c.stage, c.asset) {
            (StageKind::Stage1, AssetState::Surfels(s)) => {
                io::save_mesh(out, &extract_mesh(&s, &cfg.export)?.mesh)
            }
            (_, AssetState::Bound(b)) => io::save_bound(out, &b),
            (_, AssetState::Free(g)) => io::save_gaussians(out, &g),
            (_, AssetState::Surfels(s)) => io::save_gaussians(out, &s.to_gaussians(0.01)),
        };
    }
    match Asset::load(source)? {
        Asset::Bound(b) => io::save_gaussians(
            out,
            &meshsplat::bind::apply_deformation(&b, &b.mesh.vertices, None)?,
        ),
        Asset::Cloud(c) => io::save_gaussians(out, &c),
        Asset::Surfels(s) => io::save_gaussians(out, &s.to_gaussians(0.01)),
    }
}
