//! Command-line front end. Exit codes: 0 success, 1 invalid input, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    fetch_manifest_depths, load_background, placement_overlay, run_generate, BackgroundManifest, CameraSpec,
    GenerationConfig, PipelineError, RunOptions,
};
use crate::background::write_pfm;
use crate::depth_client::DepthServiceConfig;
use crate::extraction::{extract_foreground, load_foreground, save_foreground, ExtractionParams};
use crate::imagebuf::{save_gray_png, RgbImage};
use crate::renderer::{render, RenderOptions};
use crate::splat_io::load_splat_ply;

#[derive(Debug, Parser)]
#[command(name = "splatsynth", version, about = "Synthetic segmentation data from Gaussian Splatting objects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Isolate the foreground object of a captured splat scene.
    Extract {
        splat: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Object name; defaults to the file stem.
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML file with extraction parameters.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Analyze every background of a manifest and cache the results.
    AnalyzeBg {
        manifest: PathBuf,
        #[arg(long, default_value = ".splatsynth-cache")]
        cache: PathBuf,
    },
    /// Draw sampled placement positions over each background.
    PreviewPlacements {
        manifest: PathBuf,
        #[arg(short, default_value_t = 1000)]
        n: usize,
        #[arg(short, long, default_value = "previews")]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".splatsynth-cache")]
        cache: PathBuf,
    },
    /// Render an extracted foreground: colour and alpha PNG plus depth PFM.
    Render {
        foreground: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(short, long, default_value = "render")]
        output: PathBuf,
    },
    /// Generate a dataset from a config file.
    Generate {
        #[arg(required_unless_present = "print_config")]
        config: Option<PathBuf>,
        /// Regenerate images that already exist.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        workers: Option<usize>,
        /// Print the effective configuration (defaults when no file is given) and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Fill `service` depth entries of a manifest from the depth service.
    FetchDepth {
        manifest: PathBuf,
        #[arg(long)]
        url: Option<String>,
        #[arg(long)]
        timeout: Option<f64>,
        #[arg(long)]
        retries: Option<u32>,
        #[arg(long)]
        token: Option<String>,
    },
}

fn require_file(path: &Path, what: &str) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::ConfigInvalid(format!("{what} {} does not exist", path.display())))
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| PipelineError::ConfigInvalid(format!("{}: {e}", path.display())))
}

fn runtime(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Image {
        index: 0,
        message: e.to_string(),
    }
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Extract {
            splat,
            output,
            name,
            seed,
            params,
        } => {
            require_file(&splat, "splat file")?;
            let params: ExtractionParams = match params {
                Some(p) => read_toml(&p)?,
                None => ExtractionParams::default(),
            };
            let name = name.unwrap_or_else(|| {
                splat
                    .file_stem()
                    .map_or_else(|| "object".into(), |s| s.to_string_lossy().into_owned())
            });
            let wrap = |source| PipelineError::Extraction {
                name: name.clone(),
                source,
            };
            let model = load_splat_ply(&splat).map_err(|e| wrap(e.into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let extraction = extract_foreground(&model, &name, &params, &mut rng).map_err(wrap)?;
            let path = save_foreground(&extraction, &params, &output, &name).map_err(wrap)?;
            let c = extraction.counts;
            println!(
                "{}: {} -> {} (plane) -> {} (statistical) -> {} (cluster)",
                path.display(),
                c.input,
                c.after_plane,
                c.after_statistical,
                c.after_cluster
            );
        }
        Command::AnalyzeBg { manifest, cache } => {
            let m = BackgroundManifest::load(&manifest)?;
            let params = crate::background::BackgroundParams::default();
            for e in &m.entries {
                let scene = load_background(e, &params, Some(&cache))?;
                println!(
                    "{}: {} support planes, up {:.3?}",
                    e.image.display(),
                    scene.planes.len(),
                    scene.up_axis.as_slice()
                );
            }
        }
        Command::PreviewPlacements {
            manifest,
            n,
            output,
            seed,
            cache,
        } => {
            let m = BackgroundManifest::load(&manifest)?;
            let params = crate::background::BackgroundParams::default();
            fs::create_dir_all(&output).map_err(runtime)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (i, e) in m.entries.iter().enumerate() {
                let scene = load_background(e, &params, Some(&cache))?;
                if scene.planes.is_empty() {
                    eprintln!("{}: no support planes", e.image.display());
                    continue;
                }
                let img = placement_overlay(&scene, n, &mut rng)?;
                let path = output.join(format!("preview_{i:03}.png"));
                img.save_png(&path).map_err(runtime)?;
                println!("{}", path.display());
            }
        }
        Command::Render {
            foreground,
            camera,
            output,
        } => {
            require_file(&foreground, "foreground")?;
            let spec: CameraSpec = read_toml(&camera)?;
            let cam = spec.to_camera()?;
            let model = match load_foreground(&foreground) {
                Ok((obj, _)) => obj.model,
                Err(_) => load_splat_ply(&foreground).map_err(runtime)?,
            };
            let out = render(&model, &cam, &RenderOptions::default());
            fs::create_dir_all(&output).map_err(runtime)?;
            let color = RgbImage {
                width: out.width,
                height: out.height,
                data: out.color.clone(),
            };
            color.save_png(output.join("color.png")).map_err(runtime)?;
            save_gray_png(&out.alpha, out.width, out.height, output.join("alpha.png")).map_err(runtime)?;
            let file = fs::File::create(output.join("depth.pfm")).map_err(runtime)?;
            write_pfm(std::io::BufWriter::new(file), out.width, out.height, &out.depth).map_err(runtime)?;
            println!("{}", output.display());
        }
        Command::Generate {
            config,
            force,
            workers,
            print_config,
        } => {
            let cfg = match &config {
                Some(p) => {
                    if !p.is_file() {
                        return Err(PipelineError::ConfigInvalid(format!("config file {} does not exist", p.display())));
                    }
                    GenerationConfig::load(p)?
                }
                None => GenerationConfig::default(),
            };
            if print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let (summary, timings) = run_generate(&cfg, RunOptions { force, workers })?;
            eprintln!(
                "extraction {:.2?}, backgrounds {:.2?}, composition {:.2?}",
                timings.extraction, timings.background, timings.composition
            );
            println!(
                "{} images, {} annotations ({} rejected placements, {} dropped objects)",
                summary.images, summary.annotations, summary.rejections, summary.dropped
            );
        }
        Command::FetchDepth {
            manifest,
            url,
            timeout,
            retries,
            token,
        } => {
            require_file(&manifest, "manifest")?;
            let mut cfg = DepthServiceConfig::default().with_env_override();
            if let Some(u) = url {
                cfg.base_url = u;
            }
            if let Some(t) = timeout {
                cfg.timeout_secs = t;
            }
            if let Some(r) = retries {
                cfg.retries = r;
            }
            cfg.bearer_token = token.or(cfg.bearer_token);
            cfg.validate().map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
            let report = fetch_manifest_depths(&manifest, &cfg)?;
            println!("{} fetched, {} failed", report.fetched.len(), report.failed.len());
            if let Some((path, err)) = report.failed.first() {
                return Err(runtime(format!("{}: {err}", path.display())));
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
