use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use meshsplat::CameraPose;
use meshsplat_cli::config::{PipelineConfig, ProviderSpec};
use meshsplat_cli::{commands, exit_code, io, usage};

#[derive(Parser)]
#[command(
    name = "meshsplat",
    version,
    about = "Two-stage mesh-bound Gaussian splatting pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set stage1.iterations=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for both stages.
    #[arg(long)]
    seed: Option<u64>,
    /// `oracle:<path>`, `toy` or `remote:<host>:<port>`.
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initial mesh (PLY path or `builtin:sphere`).
    #[arg(long)]
    input: Option<String>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct ViewArgs {
    #[arg(long, default_value_t = 4.5)]
    radius: f64,
    #[arg(long, default_value_t = 0.0)]
    azimuth: f64,
    #[arg(long, default_value_t = 90.0)]
    elevation: f64,
    #[arg(long, default_value_t = 49.1)]
    fov: f64,
    #[arg(long, default_value_t = 256)]
    size: usize,
}

impl ViewArgs {
    fn pose(&self) -> CameraPose {
        CameraPose::new(
            self.radius,
            self.azimuth,
            self.elevation,
            self.fov,
            self.size,
            self.size,
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Optimize surfels from the input mesh and export a colored mesh.
    Stage1 {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from a stage-1 checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Bind Gaussians to the input mesh and optimize them.
    Stage2 {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Stage 1 followed by stage 2 on the exported mesh.
    Full {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Render an asset (Gaussian PLY, or bound mesh with sidecar) to PNG.
    Render {
        #[arg(long)]
        asset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
        /// Render a 24-frame turntable strip instead of one view.
        #[arg(long)]
        turntable: bool,
    },
    /// Play a deformation stream on a bound asset, one PNG per frame.
    Animate {
        #[arg(long)]
        asset: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
    },
    /// Convert a checkpoint or asset into viewer files.
    Export {
        /// Checkpoint or asset file.
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Config supplying the extraction settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Check a config file and referenced paths.
    ValidateConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn resolve(args: &ConfigArgs) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(args.config.as_deref(), &args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.stage1.seed = seed;
        cfg.stage2.seed = seed;
    }
    if let Some(p) = &args.provider {
        cfg.provider = ProviderSpec::parse(p)?;
    }
    if let Some(o) = &args.out {
        cfg.output = o.clone();
    }
    if let Some(i) = &args.input {
        cfg.input = Some(i.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Resolves the config; `None` means it was printed and the command is done.
fn prepare(args: &ConfigArgs) -> Result<Option<PipelineConfig>> {
    let cfg = resolve(args)?;
    if args.print_config {
        print!("{}", cfg.to_toml());
        return Ok(None);
    }
    commands::snapshot(&cfg)?;
    Ok(Some(cfg))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stage1 { cfg, resume } => {
            if let Some(c) = prepare(&cfg)? {
                commands::stage1(&c, resume.as_deref())?;
            }
        }
        Command::Stage2 { cfg, resume } => {
            if let Some(c) = prepare(&cfg)? {
                commands::stage2(&c, None, resume.as_deref())?;
            }
        }
        Command::Full { cfg } => {
            if let Some(c) = prepare(&cfg)? {
                commands::full(&c)?;
            }
        }
        Command::Render {
            asset,
            out,
            view,
            turntable,
        } => {
            let a = commands::Asset::load(&asset)?;
            let opts = meshsplat::RenderOptions::default();
            let img = if turntable {
                let t = meshsplat_cli::config::TurntableConfig {
                    size: view.size,
                    radius: view.radius,
                    elevation: view.elevation,
                    ..Default::default()
                };
                commands::turntable(&a, &t, view.fov, &opts)?
            } else {
                a.render(&view.pose(), &opts)?
            };
            io::save_png(&out, &img)?;
        }
        Command::Animate {
            asset,
            frames,
            out,
            view,
        } => {
            let n = commands::animate(
                &asset,
                &frames,
                &out,
                &view.pose(),
                &meshsplat::RenderOptions::default(),
            )?;
            log::info!("wrote {n} frames to {}", out.display());
        }
        Command::Export {
            from,
            out,
            config,
            overrides,
        } => {
            let c = PipelineConfig::load(config.as_deref(), &overrides)?;
            commands::export(&from, &out, &c)?;
        }
        Command::ValidateConfig { cfg } => {
            if cfg.config.is_none() {
                return Err(usage("validate-config needs --config"));
            }
            let c = resolve(&cfg)?;
            if cfg.print_config {
                print!("{}", c.to_toml());
            } else {
                println!("config ok");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
