//! Pipeline configuration: a TOML file, dotted-key overrides and
//! validation.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use meshsplat::extract::ExtractOptions;
use meshsplat::guidance::{
    Guidance, NoiseSchedule, PhotometricOracle, ReferenceSource, RemoteProvider, RenderedReference,
    ScoreGuidance, ScoreMode, ScoreProvider, ScoreSettings, ToyDiffusion, Weighting,
};
use meshsplat::optimize::{GuidanceKind, StageConfig};
use meshsplat::ColoredMesh;
use serde::{Deserialize, Serialize};

use crate::fixtures::{builtin_mesh, is_builtin, textured_sphere};
use crate::{io, usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    /// Photometric references rendered from a ground-truth asset: a
    /// Gaussian PLY, a colored mesh PLY (bound with 6 Gaussians per
    /// triangle) or `builtin:textured-sphere`.
    Oracle { path: String },
    /// Closed-form Gaussian-data diffusion in image space.
    Toy {
        #[serde(default = "default_cond")]
        cond_mean: [f64; 3],
        #[serde(default = "default_uncond")]
        uncond_mean: [f64; 3],
        #[serde(default = "default_variance")]
        variance: f64,
    },
    /// Score server speaking the framed protocol.
    Remote {
        address: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_cond() -> [f64; 3] {
    [0.7, 0.4, 0.3]
}
fn default_uncond() -> [f64; 3] {
    [0.5; 3]
}
fn default_variance() -> f64 {
    0.05
}
fn default_timeout() -> u64 {
    120
}

impl ProviderSpec {
    /// `oracle:<path>`, `toy` or `remote:<host>:<port>`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "toy" {
            return Ok(ProviderSpec::Toy {
                cond_mean: default_cond(),
                uncond_mean: default_uncond(),
                variance: default_variance(),
            });
        }
        if let Some(path) = s.strip_prefix("oracle:") {
            return Ok(ProviderSpec::Oracle { path: path.into() });
        }
        if let Some(addr) = s.strip_prefix("remote:") {
            if addr
                .rsplit_once(':')
                .is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok())
            {
                return Ok(ProviderSpec::Remote {
                    address: addr.into(),
                    timeout_secs: default_timeout(),
                });
            }
            return Err(usage(format!(
                "remote provider needs host:port, got `{addr}`"
            )));
        }
        Err(usage(format!(
            "provider must be `oracle:<path>`, `toy` or `remote:<host>:<port>`, got `{s}`"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurntableConfig {
    pub frames: usize,
    pub size: usize,
    /// Polar angle in degrees; 90 looks horizontally.
    pub elevation: f64,
    pub radius: f64,
}

impl Default for TurntableConfig {
    fn default() -> Self {
        Self {
            frames: 24,
            size: 128,
            elevation: 90.0,
            radius: 4.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Initial mesh: a PLY path or `builtin:sphere[:n]` / `builtin:cube[:n]`.
    pub input: Option<String>,
    pub output: PathBuf,
    /// Text prompt for score providers.
    pub prompt: String,
    pub provider: ProviderSpec,
    pub export: ExtractOptions,
    pub turntable: TurntableConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: PathBuf::from("out"),
            prompt: String::new(),
            provider: ProviderSpec::parse("toy").expect("valid"),
            export: ExtractOptions::default(),
            turntable: TurntableConfig::default(),
            stage1: StageConfig::default(),
            stage2: StageConfig::default(),
        }
    }
}

/// Parses a command-line value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value` in a TOML table, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| usage(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(usage(format!("bad key `{key}`")));
    }
    let mut t = table;
    for p in &path[..path.len() - 1] {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| usage(format!("`{p}` in `{key}` is not a table")))?;
    }
    t.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl PipelineConfig {
    /// Reads `path` (or starts from defaults), applies overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                if !p.exists() {
                    return Err(usage(format!("config file {} does not exist", p.display())));
                }
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| usage(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table)
            .try_into::<PipelineConfig>()
            .map_err(|e| usage(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks stage settings, provider/guidance pairing and that referenced
    /// files exist.
    pub fn validate(&self) -> Result<()> {
        for (name, stage) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            stage
                .validate()
                .map_err(|e| usage(format!("{name}: {e}")))?;
            let photometric = stage.guidance == GuidanceKind::Photometric;
            let oracle = matches!(self.provider, ProviderSpec::Oracle { .. });
            if photometric != oracle {
                return Err(usage(format!(
                    "{name}: photometric guidance needs an oracle provider and score guidance needs a score provider"
                )));
            }
        }
        if let Some(input) = &self.input {
            check_source("input", input)?;
        }
        if let ProviderSpec::Oracle { path } = &self.provider {
            check_source("oracle", path)?;
        }
        if let ProviderSpec::Toy { variance, .. } = self.provider {
            if !(variance > 0.0) {
                return Err(usage(format!(
                    "toy variance must be positive, got {variance}"
                )));
            }
        }
        let t = &self.turntable;
        if t.frames == 0
            || t.size < 8
            || !(t.radius > 0.0)
            || !(t.elevation > 0.0 && t.elevation < 180.0)
        {
            return Err(usage(format!("invalid turntable settings {t:?}")));
        }
        if self.export.resolution < 8 {
            return Err(usage(format!(
                "export resolution {} is too small",
                self.export.resolution
            )));
        }
        Ok(())
    }

    /// Guidance for one stage.
    pub fn guidance(&self, stage: &StageConfig) -> Result<Box<dyn Guidance>> {
        let settings = ScoreSettings {
            prompt: self.prompt.clone(),
            cfg: stage.cfg,
            t_range: stage.t_range,
            weighting: Weighting::Unit,
            anneal: stage.anneal,
        };
        let mode = match stage.guidance {
            GuidanceKind::Sds => ScoreMode::Sds,
            GuidanceKind::Ism { delta, strides } => ScoreMode::Ism { delta, strides },
            GuidanceKind::Photometric => {
                let ProviderSpec::Oracle { path } = &self.provider else {
                    return Err(usage("photometric guidance needs an oracle provider"));
                };
                let source = reference_source(path, stage)?;
                return Ok(Box::new(PhotometricOracle::new(source)));
            }
        };
        let schedule = NoiseSchedule::default();
        let provider: Arc<dyn ScoreProvider> = match &self.provider {
            ProviderSpec::Toy {
                cond_mean,
                uncond_mean,
                variance,
            } => Arc::new(ToyDiffusion::new(
                schedule.clone(),
                *cond_mean,
                *uncond_mean,
                *variance,
            )),
            ProviderSpec::Remote {
                address,
                timeout_secs,
            } => Arc::new(
                RemoteProvider::new(address.clone())
                    .with_timeout(Duration::from_secs(*timeout_secs)),
            ),
            ProviderSpec::Oracle { .. } => {
                return Err(usage("score guidance needs a toy or remote provider"))
            }
        };
        Ok(Box::new(ScoreGuidance {
            provider,
            schedule,
            mode,
            settings,
        }))
    }
}

fn check_source(what: &str, s: &str) -> Result<()> {
    if is_builtin(s) {
        if s == "builtin:textured-sphere" || builtin_mesh(s).is_ok() {
            return Ok(());
        }
        return Err(usage(format!("{what}: unknown built-in `{s}`")));
    }
    if !Path::new(s).exists() {
        return Err(usage(format!("{what} path {s} does not exist")));
    }
    Ok(())
}

/// Loads an initial mesh from a file or a built-in.
pub fn load_input_mesh(s: &str) -> Result<ColoredMesh> {
    if is_builtin(s) {
        return builtin_mesh(s);
    }
    if !Path::new(s).exists() {
        return Err(usage(format!("input path {s} does not exist")));
    }
    io::load_mesh(Path::new(s))
}

fn reference_source(path: &str, stage: &StageConfig) -> Result<Arc<dyn ReferenceSource>> {
    let options = stage.render;
    let render_size = stage.render_resolution;
    if path == "builtin:textured-sphere" {
        return Ok(Arc::new(RenderedReference {
            scene: textured_sphere(),
            render_size,
            options,
        }));
    }
    if is_builtin(path) {
        let mesh = builtin_mesh(path)?;
        let scene = meshsplat::bind::build_bound_asset(&mesh, 6)?;
        return Ok(Arc::new(RenderedReference {
            scene,
            render_size,
            options,
        }));
    }
    let p = Path::new(path);
    let ply = io::ply::PlyFile::from_bytes(&io::read_bytes(p)?)
        .with_context(|| format!("parsing {path}"))?;
    if ply.element("face").is_some_and(|f| f.count > 0) {
        let scene = meshsplat::bind::build_bound_asset(&io::mesh_from_ply(&ply)?, 6)?;
        Ok(Arc::new(RenderedReference {
            scene,
            render_size,
            options,
        }))
    } else {
        let scene = io::load_gaussians(p)?;
        Ok(Arc::new(RenderedReference {
            scene,
            render_size,
            options,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = PipelineConfig::default();
        let text = c.to_toml();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = PipelineConfig::load(
            None,
            &[
                "stage1.iterations=12".into(),
                "stage2.mode=\"free\"".into(),
                "export.max_triangles=0".into(),
                "stage1.render.background=[1.0, 1.0, 1.0]".into(),
                "input=builtin:sphere".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.stage1.iterations, 12);
        assert_eq!(c.stage2.mode, meshsplat::optimize::BindingMode::Free);
        assert_eq!(c.export.max_triangles, None);
        assert_eq!(c.stage1.render.background, [1.0; 3]);
        assert_eq!(c.input.as_deref(), Some("builtin:sphere"));
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let e = PipelineConfig::load(None, &["stage1.iterationz=3".into()]).unwrap_err();
        assert_eq!(crate::exit_code(&e), 2);
        let e = PipelineConfig::load(Some(Path::new("/nonexistent/c.toml")), &[]).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/c.toml"));
    }

    #[test]
    fn provider_flag_forms() {
        assert!(matches!(
            ProviderSpec::parse("oracle:a.ply").unwrap(),
            ProviderSpec::Oracle { .. }
        ));
        assert!(matches!(
            ProviderSpec::parse("remote:localhost:7000").unwrap(),
            ProviderSpec::Remote { .. }
        ));
        assert!(ProviderSpec::parse("remote:localhost").is_err());
        assert!(ProviderSpec::parse("magic").is_err());
    }

    #[test]
    fn validation_pairs_guidance_with_provider() {
        let mut c = PipelineConfig {
            input: Some("builtin:sphere".into()),
            ..Default::default()
        };
        c.validate().unwrap();
        c.stage1.guidance = GuidanceKind::Photometric;
        assert!(c.validate().is_err());
        c.provider = ProviderSpec::Oracle {
            path: "builtin:textured-sphere".into(),
        };
        c.stage2.guidance = GuidanceKind::Photometric;
        c.validate().unwrap();
        c.input = Some("/missing/mesh.ply".into());
        let e = c.validate().unwrap_err();
        assert!(e.to_string().contains("/missing/mesh.ply"));
        assert_eq!(crate::exit_code(&e), 2);
    }
}
