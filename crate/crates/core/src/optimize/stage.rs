use crate::bind::{apply_deformation, build_bound_asset, laplacian_penalty};
use crate::exec::map_range;
use crate::extract::{extract_mesh, ExtractOptions, Extraction};
use crate::guidance::{Guidance, GuidanceView};
use crate::image::Image;
use crate::math::{frame_from_normal, matrix_to_quat, v3, Vec3};
use crate::raster::{
    composite, composite_backward, render, RenderError, RenderOptions, RenderTarget,
};
use crate::scene::{BoundAsset, CameraPose, ColoredMesh, GaussianCloud3D, SurfelCloud2D};
use crate::spatial::KdTree;

use super::{
    camera_for, slot_rng, AdamState, AssetState, BindingMode, Checkpoint, OptimizeError,
    StageConfig, StageKind, Stream, Trainable,
};

const MID_GRAY: [f64; 3] = [0.5; 3];

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    /// Batch mean of the guidance loss proxy.
    pub loss: f64,
    /// Batch mean of `mean |update|`.
    pub mean_update: f64,
    /// Position learning rate of the stage.
    pub lr: f64,
}

/// Receives progress from a running stage.
pub trait Observer {
    fn record(&mut self, _record: &LossRecord) {}
    fn checkpoint(&mut self, _checkpoint: &Checkpoint) -> Result<(), OptimizeError> {
        Ok(())
    }
}

impl Observer for () {}

struct Session<A> {
    stage: StageKind,
    config: StageConfig,
    asset: A,
    adam: AdamState,
    iteration: usize,
    history: Vec<LossRecord>,
    rest: Vec<[f64; 3]>,
    neighbors: Vec<Vec<u32>>,
}

impl<A: Trainable> Session<A>
where
    A::Gradients: Send,
{
    fn new(stage: StageKind, config: StageConfig, asset: A) -> Self {
        let adam = AdamState::new(&asset.group_sizes());
        Self {
            stage,
            config,
            asset,
            adam,
            iteration: 0,
            history: Vec::new(),
            rest: Vec::new(),
            neighbors: Vec::new(),
        }
    }

    fn from_checkpoint(c: Checkpoint) -> Result<Self, OptimizeError> {
        let asset = A::from_state(c.asset).ok_or_else(|| {
            OptimizeError::Checkpoint("asset kind does not match the stage".into())
        })?;
        let sizes = asset.group_sizes();
        let moments: Vec<usize> = c.adam.first.iter().map(|m| m.len()).collect();
        if sizes != moments || c.adam.second.iter().map(|m| m.len()).collect::<Vec<_>>() != sizes {
            return Err(OptimizeError::Checkpoint(format!(
                "Adam moments {moments:?} do not match parameters {sizes:?}"
            )));
        }
        c.config.validate()?;
        Ok(Self {
            stage: c.stage,
            config: c.config,
            asset,
            adam: c.adam,
            iteration: c.iteration,
            history: c.history,
            rest: c.rest_vertices,
            neighbors: Vec::new(),
        })
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            stage: self.stage,
            config: self.config.clone(),
            iteration: self.iteration,
            asset: self.asset.to_state(),
            rest_vertices: self.rest.clone(),
            adam: self.adam.clone(),
            history: self.history.clone(),
        }
    }

    fn learning_rates(&self) -> Vec<f64> {
        let mut lrs = A::learning_rates(&self.config.learning_rates);
        if self.stage == StageKind::Stage2 && self.config.mode == BindingMode::FrozenPositions {
            lrs[0] = 0.0;
        }
        lrs
    }

    fn view_gradient(
        &self,
        guidance: &dyn Guidance,
        view: usize,
    ) -> Result<(Vec<Vec<f64>>, f64, f64), OptimizeError> {
        let cfg = &self.config;
        let it = self.iteration;
        let pose = camera_for(cfg, it, view);
        let cam = pose.camera()?;
        let frags = self.asset.project(&cam, &cfg.render)?;
        let target = composite(&frags, &cam, &cfg.render)?;
        let g = cfg.guidance_resolution;
        let small = target.color.area_downsample(g, g);
        let gview = GuidanceView {
            pose,
            iteration: it,
            total_iterations: cfg.iterations,
        };
        let mut rng = slot_rng(cfg.seed, it, view, Stream::Guidance);
        let update = guidance
            .update(&small, &gview, &mut rng)
            .map_err(|source| OptimizeError::Guidance {
                iteration: it,
                source,
            })?;
        let r = cfg.render_resolution;
        let d_color = update.gradient.area_downsample_transpose(r, r);
        let fg = composite_backward(&frags, &cam, &cfg.render, &d_color, None)?;
        let grads = self.asset.backward(&cam, &frags, &fg, &cfg.render)?;
        Ok((A::flatten_gradients(grads), update.loss, update.mean_abs))
    }

    /// One full iteration; parameters are untouched when it fails.
    fn step(&mut self, guidance: &dyn Guidance) -> Result<LossRecord, OptimizeError> {
        let batch = self.config.batch_size;
        let views = map_range(self.config.batch_execution, batch, |v| {
            self.view_gradient(guidance, v)
        });
        let mut total: Option<Vec<Vec<f64>>> = None;
        let (mut loss, mut mean_update) = (0.0, 0.0);
        for v in views {
            let (g, l, m) = v?;
            loss += l;
            mean_update += m;
            match &mut total {
                None => total = Some(g),
                Some(t) => {
                    for (tg, gg) in t.iter_mut().zip(&g) {
                        for (a, b) in tg.iter_mut().zip(gg) {
                            *a += b;
                        }
                    }
                }
            }
        }
        let inv = 1.0 / batch as f64;
        let mut grads = total.expect("batch is not empty");
        for x in grads.iter_mut().flatten() {
            *x *= inv;
        }
        loss *= inv;
        mean_update *= inv;
        if !(mean_update <= self.config.max_update) {
            return Err(OptimizeError::Exploding {
                iteration: self.iteration,
                mean_update,
            });
        }
        if !self.rest.is_empty() && self.config.laplacian_weight > 0.0 {
            let vertices: Vec<[f64; 3]> = grads_rows(self.asset.groups()[0]);
            let mut vg = grads_rows(&grads[0]);
            laplacian_penalty(
                &vertices,
                &self.rest,
                &self.neighbors,
                self.config.laplacian_weight,
                &mut vg,
            );
            grads[0] = vg.into_flattened();
        }
        let lrs = self.learning_rates();
        let lr = lrs[0];
        self.adam.step(&mut self.asset.groups_mut(), &grads, &lrs)?;
        self.asset.project_parameters(&self.config.projection());
        let record = LossRecord {
            iteration: self.iteration,
            loss,
            mean_update,
            lr,
        };
        self.history.push(record);
        self.iteration += 1;
        Ok(record)
    }

    fn run(
        &mut self,
        guidance: &dyn Guidance,
        observer: &mut dyn Observer,
        mut after_step: impl FnMut(&mut Self),
    ) -> Result<(), OptimizeError> {
        while self.iteration < self.config.iterations {
            match self.step(guidance) {
                Ok(record) => observer.record(&record),
                Err(e) => {
                    let checkpoint = Box::new(self.checkpoint());
                    return Err(OptimizeError::Aborted {
                        checkpoint,
                        source: Box::new(e),
                    });
                }
            }
            after_step(self);
            let every = self.config.checkpoint_interval;
            if every > 0 && self.iteration % every == 0 && self.iteration < self.config.iterations {
                observer.checkpoint(&self.checkpoint())?;
            }
        }
        Ok(())
    }
}

fn grads_rows(v: &[f64]) -> Vec<[f64; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Surfels on the mesh vertices: vertex colors (mid-gray when the mesh has
/// none), tangent planes from the vertex normals, isotropic scale from the
/// mean distance to the three nearest vertices.
pub fn init_surfels(
    mesh: &ColoredMesh,
    config: &StageConfig,
) -> Result<SurfelCloud2D, OptimizeError> {
    let mut mesh = mesh.clone();
    if mesh.colors.is_empty() {
        mesh.colors = vec![MID_GRAY; mesh.vertices.len()];
    }
    mesh.validate()?;
    if mesh.vertices.len() < 2 {
        return Err(OptimizeError::Config(format!(
            "initial mesh has {} vertices",
            mesh.vertices.len()
        )));
    }
    let normals = mesh.vertex_normals();
    let (lo, hi) = mesh.bounds();
    let center = (lo + hi) * 0.5;
    let tree = KdTree::new(&mesh.vertices);
    let k = 4.min(mesh.vertices.len());
    let mut spacing: Vec<f64> = mesh
        .vertices
        .iter()
        .map(|p| {
            let nn = tree.knn(p, k);
            let d: Vec<f64> = nn.iter().skip(1).map(|(_, d2)| d2.sqrt()).collect();
            d.iter().sum::<f64>() / d.len() as f64
        })
        .collect();
    let positive: Vec<f64> = spacing.iter().copied().filter(|&d| d > 0.0).collect();
    let fallback = if positive.is_empty() {
        1e-3 * (hi - lo).norm().max(1e-6)
    } else {
        positive.iter().sum::<f64>() / positive.len() as f64
    };
    for d in &mut spacing {
        if *d <= 0.0 {
            *d = fallback;
        }
    }
    let mut surfels = SurfelCloud2D::default();
    for (i, p) in mesh.vertices.iter().enumerate() {
        let mut n = normals[i];
        if n.norm() == 0.0 {
            n = v3(*p) - center;
            if n.norm() == 0.0 {
                n = Vec3::z();
            }
        }
        let q = matrix_to_quat(&frame_from_normal(&n));
        let s = config.init_scale_factor * spacing[i];
        surfels.push(*p, mesh.colors[i], config.init_opacity, [s, s], q);
    }
    Ok(surfels)
}

pub struct Stage1Output {
    pub surfels: SurfelCloud2D,
    pub extraction: Extraction,
    pub history: Vec<LossRecord>,
    pub checkpoint: Checkpoint,
}

fn prune(session: &mut Session<SurfelCloud2D>) {
    let cfg = &session.config;
    if cfg.prune_interval == 0 || session.iteration % cfg.prune_interval != 0 {
        return;
    }
    let keep: Vec<bool> = (0..session.asset.len())
        .map(|i| session.asset.opacity(i) >= cfg.prune_threshold)
        .collect();
    let removed = keep.iter().filter(|&&k| !k).count();
    if removed > 0 {
        log::info!("iteration {}: pruned {removed} surfels", session.iteration);
        session.asset.retain_mask(&keep);
        session.adam.retain_rows(&keep, SurfelCloud2D::COLS);
    }
}

fn finish_stage1(
    session: Session<SurfelCloud2D>,
    export: &ExtractOptions,
) -> Result<Stage1Output, OptimizeError> {
    let checkpoint = session.checkpoint();
    let extraction = extract_mesh(&session.asset, export)?;
    Ok(Stage1Output {
        surfels: session.asset,
        extraction,
        history: session.history,
        checkpoint,
    })
}

/// Surfel optimization from an initial mesh, then mesh export.
pub fn run_stage1(
    mesh: &ColoredMesh,
    config: &StageConfig,
    export: &ExtractOptions,
    guidance: &dyn Guidance,
    observer: &mut dyn Observer,
) -> Result<Stage1Output, OptimizeError> {
    config.validate()?;
    let surfels = init_surfels(mesh, config)?;
    let mut session = Session::new(StageKind::Stage1, config.clone(), surfels);
    session.run(guidance, observer, prune)?;
    finish_stage1(session, export)
}

pub fn resume_stage1(
    checkpoint: Checkpoint,
    export: &ExtractOptions,
    guidance: &dyn Guidance,
    observer: &mut dyn Observer,
) -> Result<Stage1Output, OptimizeError> {
    if checkpoint.stage != StageKind::Stage1 {
        return Err(OptimizeError::Checkpoint("not a stage 1 checkpoint".into()));
    }
    let mut session = Session::<SurfelCloud2D>::from_checkpoint(checkpoint)?;
    session.run(guidance, observer, prune)?;
    finish_stage1(session, export)
}

/// Result of stage 2: bound Gaussians, or free ones for the unbound ablation.
#[derive(Debug, Clone, PartialEq)]
pub enum Stage2Asset {
    Bound(BoundAsset),
    Free(GaussianCloud3D),
}

impl Stage2Asset {
    pub fn render(
        &self,
        camera: &crate::scene::Camera,
        opts: &RenderOptions,
    ) -> Result<RenderTarget, RenderError> {
        match self {
            Stage2Asset::Bound(b) => render(b, camera, opts),
            Stage2Asset::Free(c) => render(c, camera, opts),
        }
    }

    /// Free-cloud view of the asset (bound Gaussians posed on their mesh).
    pub fn to_cloud(&self) -> GaussianCloud3D {
        match self {
            Stage2Asset::Bound(b) => {
                apply_deformation(b, &b.mesh.vertices, None).expect("asset matches its own mesh")
            }
            Stage2Asset::Free(c) => c.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Stage2Asset::Bound(b) => b.len(),
            Stage2Asset::Free(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct Stage2Output {
    pub asset: Stage2Asset,
    pub history: Vec<LossRecord>,
    pub checkpoint: Checkpoint,
}

fn run_bound(
    mut session: Session<BoundAsset>,
    guidance: &dyn Guidance,
    observer: &mut dyn Observer,
) -> Result<Stage2Output, OptimizeError> {
    session.neighbors = session.asset.mesh.vertex_neighbors();
    session.run(guidance, observer, |_| {})?;
    let checkpoint = session.checkpoint();
    Ok(Stage2Output {
        asset: Stage2Asset::Bound(session.asset),
        history: session.history,
        checkpoint,
    })
}

fn run_free(
    mut session: Session<GaussianCloud3D>,
    guidance: &dyn Guidance,
    observer: &mut dyn Observer,
) -> Result<Stage2Output, OptimizeError> {
    session.run(guidance, observer, |_| {})?;
    let checkpoint = session.checkpoint();
    Ok(Stage2Output {
        asset: Stage2Asset::Free(session.asset),
        history: session.history,
        checkpoint,
    })
}

/// Bound-Gaussian enhancement of a colored mesh (from stage 1 or any
/// external source). `config.mode` selects the ablation.
pub fn run_stage2(
    mesh: &ColoredMesh,
    config: &StageConfig,
    guidance: &dyn Guidance,
    observer: &mut dyn Observer,
) -> Result<Stage2Output, OptimizeError> {
    config.validate()?;
    let asset = build_bound_asset(mesh, config.gaussians_per_triangle)?;
    match config.mode {
        BindingMode::Bound | BindingMode::FrozenPositions => {
            let mut session = Session::new(StageKind::Stage2, config.clone(), asset);
            session.rest = session.asset.mesh.vertices.clone();
            run_bound(session, guidance, observer)
        }
        BindingMode::Free => {
            let cloud = apply_deformation(&asset, &asset.mesh.vertices, None)?;
            run_free(
                Session::new(StageKind::Stage2, config.clone(), cloud),
                guidance,
                observer,
            )
        }
    }
}

pub fn resume_stage2(
    checkpoint: Checkpoint,
    guidance: &dyn Guidance,
    observer: &mut dyn Observer,
) -> Result<Stage2Output, OptimizeError> {
    if checkpoint.stage != StageKind::Stage2 {
        return Err(OptimizeError::Checkpoint("not a stage 2 checkpoint".into()));
    }
    match checkpoint.asset {
        AssetState::Bound(_) => {
            run_bound(Session::from_checkpoint(checkpoint)?, guidance, observer)
        }
        AssetState::Free(_) => run_free(Session::from_checkpoint(checkpoint)?, guidance, observer),
        AssetState::Surfels(_) => Err(OptimizeError::Checkpoint(
            "stage 2 checkpoint holds surfels".into(),
        )),
    }
}

/// Mean PSNR of `render(poses)` against a reference renderer.
pub fn mean_psnr(
    render_fn: impl Fn(&crate::scene::Camera) -> Result<Image, RenderError>,
    reference: impl Fn(&crate::scene::Camera) -> Result<Image, RenderError>,
    poses: &[CameraPose],
) -> Result<f64, OptimizeError> {
    let mut total = 0.0;
    for pose in poses {
        let cam = pose.camera()?;
        total += render_fn(&cam)?.psnr(&reference(&cam)?);
    }
    Ok(total / poses.len().max(1) as f64)
}
