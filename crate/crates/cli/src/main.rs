//! `aberlab` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure, 1 anything
//! else (I/O).

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aberlab::aberration::{
    generate_profile, measure_correlation_length, measure_strength, ProfileSpec,
};
use aberlab::beamform::{das, RfImage};
use aberlab::bmode::{envelope, export_bmode, log_compress};
use aberlab::correction::{correct_beamsum, correct_fxpf};
use aberlab::dataset::{self, evaluate_image, DatasetManifest, MANIFEST_FILE};
use aberlab::learn::{train_noise2noise, write_history_csv, LossKind, ToyModel};
use aberlab::metrics::RegionSpec;
use aberlab::phantom::Phantom;
use aberlab::probe::{ImagingGrid, Pulse};
use aberlab::wavesim::{simulate_fsa, synthesize_planewave, ChannelData};
use aberlab::{io, AberrationProfile, Field};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::CliConfig;

#[derive(Parser)]
#[command(
    name = "aberlab",
    version,
    about = "Plane-wave phase-aberration toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed overriding every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random aberration profile.
    Profile {
        /// RMS delay, ns.
        #[arg(long)]
        strength: f64,
        /// Autocorrelation FWHM, mm.
        #[arg(long)]
        correlation_length: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a scatterer phantom.
    Phantom {
        #[arg(long, value_enum, default_value = "contrast")]
        kind: SceneKind,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate plane-wave channel data for a phantom.
    Sim {
        #[arg(long)]
        phantom: PathBuf,
        /// Transmit aberration profile.
        #[arg(long)]
        tx_profile: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also store the full-synthetic-aperture traces.
        #[arg(long)]
        fsa_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Delay-and-sum beamforming.
    Das {
        #[arg(long)]
        channel: PathBuf,
        /// Receive aberration present in the data.
        #[arg(long)]
        rx_profile: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Aberration correction.
    Correct {
        #[arg(value_enum)]
        method: CorrectionMethod,
        #[arg(long)]
        channel: PathBuf,
        #[arg(long)]
        rx_profile: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the beamsum delay estimate.
        #[arg(long)]
        estimate_out: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Contrast, speckle SNR and gCNR of an RF image.
    Metrics {
        #[arg(long)]
        image: PathBuf,
        /// Cyst region `x,z,radius` in mm; repeatable. Regions from the
        /// configuration are used when absent.
        #[arg(long, value_parser = parse_cyst)]
        cyst: Vec<RegionSpec>,
        /// Write the JSON result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Build or evaluate a dataset.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Train a small model noise2noise-style on aberrated versions.
    TrainToy {
        #[arg(long, value_enum, default_value = "adaptive-mixed")]
        loss: LossArg,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_enum, default_value = "conv")]
        model: ModelArg,
        /// Dataset whose scene supplies the versions.
        #[arg(long, conflicts_with = "images")]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        scene: usize,
        /// RF image files to use as versions.
        #[arg(long, num_args = 1..)]
        images: Vec<PathBuf>,
        /// History CSV (epoch, alpha, loss).
        #[arg(long)]
        history: PathBuf,
        /// Trained model JSON.
        #[arg(long)]
        model_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Log-compress an RF image and write it as PNG or PGM.
    ExportBmode {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60.0)]
        dynamic_range: f64,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum DatasetAction {
    /// Generate scenes and aberrated versions per the plan in `--config`.
    Build {
        /// Output directory (overrides the plan).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent scenes (overrides the environment variable).
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run every correction method on a dataset and report metrics.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone)]
struct GridArgs {
    /// First image depth, mm.
    #[arg(long, default_value_t = 10.0)]
    z_start: f64,
    /// Last image depth, mm.
    #[arg(long, default_value_t = 50.0)]
    z_end: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKind {
    Contrast,
    Speckle,
    Resolution,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorrectionMethod {
    Beamsum,
    Fxpf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    MseRf,
    MseBmode,
    AdaptiveMixed,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::MseRf => LossKind::MseRf,
            LossArg::MseBmode => LossKind::MseBmode,
            LossArg::AdaptiveMixed => LossKind::AdaptiveMixed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Conv,
    BiasOnly,
}

fn parse_cyst(s: &str) -> Result<RegionSpec, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, z, r] if r > 0.0 => Ok(RegionSpec::cyst(x, z, r)),
        _ => Err("expected x,z,radius with radius > 0".to_owned()),
    }
}

fn load(common: &Common) -> Result<CliConfig> {
    let mut cfg = match &common.config {
        Some(path) => CliConfig::read(path)?,
        None => CliConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.apply_seed(seed);
    }
    cfg.probe.validate()?;
    Ok(cfg)
}

fn read_profile(path: Option<&Path>) -> Result<Option<AberrationProfile>> {
    Ok(path.map(io::read_json).transpose()?)
}

fn grid_for(cfg: &CliConfig, args: &GridArgs) -> Result<ImagingGrid> {
    Ok(match &cfg.grid {
        Some(g) => g.clone(),
        None => ImagingGrid::for_probe(&cfg.probe, args.z_start, args.z_end)?,
    })
}

fn write_json_out<V: serde::Serialize>(value: &V, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => io::write_json(path, value)?,
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Profile {
            strength,
            correlation_length,
            out,
            common,
        } => {
            let cfg = load(&common)?;
            let spec = ProfileSpec {
                strength,
                correlation_length,
                seed: cfg.seed,
            };
            let p = generate_profile(&spec, &cfg.probe)?;
            io::write_json(&out, &p)?;
            println!(
                "strength {:.3} ns, correlation length {:.3} mm",
                measure_strength(&p),
                measure_correlation_length(&p).unwrap_or(f64::NAN)
            );
        }
        Command::Phantom { kind, out, common } => {
            let cfg = load(&common)?;
            let scene = cfg.scene_of(match kind {
                SceneKind::Contrast => config::Scene::Contrast,
                SceneKind::Speckle => config::Scene::Speckle,
                SceneKind::Resolution => config::Scene::Resolution,
            });
            let p = scene.build(&cfg.probe, cfg.seed)?;
            p.write(&out)?;
            println!("{} scatterers", p.len());
        }
        Command::Sim {
            phantom,
            tx_profile,
            out,
            fsa_out,
            common,
        } => {
            let cfg = load(&common)?;
            let ph = Phantom::read(&phantom)?;
            let tx = read_profile(tx_profile.as_deref())?;
            let fsa =
                simulate_fsa::<f32>(&ph, &cfg.probe, &Pulse::for_probe(&cfg.probe), &cfg.sim)?;
            if let Some(path) = fsa_out {
                fsa.write(&path)?;
            }
            synthesize_planewave(&fsa, tx.as_ref())?.write(&out)?;
        }
        Command::Das {
            channel,
            rx_profile,
            out,
            grid,
            common,
        } => {
            let cfg = load(&common)?;
            let ch = ChannelData::<f32>::read(&channel)?;
            let rx = read_profile(rx_profile.as_deref())?;
            let g = grid_for(&cfg, &grid)?;
            das(&ch, &cfg.probe, &g, rx.as_ref(), &cfg.das)?.write(&out)?;
        }
        Command::Correct {
            method,
            channel,
            rx_profile,
            out,
            estimate_out,
            grid,
            common,
        } => {
            let cfg = load(&common)?;
            let ch = ChannelData::<f32>::read(&channel)?;
            let rx = read_profile(rx_profile.as_deref())?;
            let g = grid_for(&cfg, &grid)?;
            match method {
                CorrectionMethod::Beamsum => {
                    let (img, est) =
                        correct_beamsum(&ch, &cfg.probe, &g, rx.as_ref(), &cfg.beamsum)?;
                    img.write(&out)?;
                    if let Some(path) = estimate_out {
                        io::write_json(&path, &est.profile)?;
                    }
                    let flagged = est.flagged.len();
                    println!("{flagged} channels flagged as unreliable");
                }
                CorrectionMethod::Fxpf => {
                    if estimate_out.is_some() {
                        bail!(aberlab::Error::Invalid(
                            "--estimate-out applies to beamsum only".into()
                        ));
                    }
                    correct_fxpf(&ch, &cfg.probe, &g, rx.as_ref(), &cfg.fxpf)?.write(&out)?;
                }
            }
        }
        Command::Metrics {
            image,
            cyst,
            out,
            common,
        } => {
            let cfg = load(&common)?;
            let img = RfImage::<f32>::read(&image)?;
            let regions = if cyst.is_empty() {
                cfg.regions.clone()
            } else {
                cyst
            };
            if regions.is_empty() {
                bail!(aberlab::Error::Invalid(
                    "no regions: pass --cyst or set regions in the config".into()
                ));
            }
            write_json_out(&evaluate_image(&img, &regions)?, out.as_deref())?;
        }
        Command::Dataset { action } => match action {
            DatasetAction::Build {
                out,
                workers,
                common,
            } => {
                let cfg = load(&common)?;
                let mut plan = cfg.plan.clone();
                plan.probe = cfg.probe.clone();
                if let Some(dir) = out {
                    plan.output_dir = dir;
                }
                let workers = workers.unwrap_or_else(dataset::worker_count);
                let m = dataset::build_dataset_with_workers(&plan, workers)?;
                println!(
                    "{} scenes x {} versions written to {}",
                    m.sets.len(),
                    plan.versions,
                    plan.output_dir.display()
                );
            }
            DatasetAction::Run {
                dataset: dir,
                out,
                common,
            } => {
                let cfg = load(&common)?;
                let report = dataset::run_pipeline(&dir, &cfg.pipeline)?;
                io::write_json(&out, &report)?;
                let failures: usize = report.frames.iter().filter(|f| f.error.is_some()).count();
                println!(
                    "{} frames evaluated, {failures} failed",
                    report.frames.len()
                );
            }
        },
        Command::TrainToy {
            loss,
            epochs,
            model,
            dataset,
            scene,
            images,
            history,
            model_out,
            common,
        } => {
            let cfg = load(&common)?;
            let mut spec = cfg.train.clone();
            if let Some(e) = epochs {
                spec.epochs = e;
            }
            let versions = training_versions(dataset.as_deref(), scene, &images)?;
            let (rows, cols) = versions[0].shape();
            let m = match model {
                ModelArg::Conv => ToyModel::default_conv(spec.seed),
                ModelArg::BiasOnly => ToyModel::bias_only(rows, cols, 0.05, spec.seed)?,
            };
            let outcome = train_noise2noise(m, &versions, &spec, loss.into())?;
            write_history_csv(&outcome.history, &history)?;
            if let Some(path) = model_out {
                io::write_json(&path, &outcome.model)?;
            }
            if outcome.diverged {
                bail!(aberlab::Error::Numerical(format!(
                    "training diverged after {} epochs",
                    outcome.history.len()
                )));
            }
            if let Some(last) = outcome.history.last() {
                println!("final loss {:.6e} at epoch {}", last.loss, last.epoch);
            }
        }
        Command::ExportBmode {
            image,
            out,
            dynamic_range,
            common,
        } => {
            load(&common)?;
            let img = RfImage::<f32>::read(&image)?;
            let b = log_compress(&envelope(&img)?, dynamic_range)?;
            export_bmode(&b, Some(&img.grid), &out)?;
        }
    }
    Ok(())
}

/// Loads RF images as f64 fields scaled by their common RMS.
fn training_versions(
    dataset: Option<&Path>,
    scene: usize,
    images: &[PathBuf],
) -> Result<Vec<Field<f64>>> {
    let paths: Vec<PathBuf> = match dataset {
        Some(dir) => {
            let m = DatasetManifest::read(&dir.join(MANIFEST_FILE))?;
            let set =
                m.sets.iter().find(|s| s.scene_id == scene).ok_or_else(|| {
                    aberlab::Error::Invalid(format!("dataset has no scene {scene}"))
                })?;
            set.aberrated_refs
                .iter()
                .map(|r| dir.join(&r.rf_file))
                .collect()
        }
        None => images.to_vec(),
    };
    if paths.len() < 2 {
        bail!(aberlab::Error::Invalid(
            "training needs at least two images".into()
        ));
    }
    let mut fields = paths
        .iter()
        .map(|p| Ok(RfImage::<f32>::read(p)?.samples.cast::<f64>()))
        .collect::<Result<Vec<Field<f64>>>>()?;
    let n: usize = fields.iter().map(|f| f.as_slice().len()).sum();
    let rms = (fields
        .iter()
        .flat_map(|f| f.as_slice())
        .map(|v| v * v)
        .sum::<f64>()
        / n as f64)
        .sqrt();
    if !(rms > 0.0) {
        bail!(aberlab::Error::Numerical(
            "training images are all zero".into()
        ));
    }
    fields.iter_mut().for_each(|f| f.scale(1.0 / rms));
    Ok(fields)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<aberlab::Error>()) {
        Some(e) if e.is_validation() => 2,
        Some(aberlab::Error::Numerical(_)) => 3,
        Some(aberlab::Error::Fxpf(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli).context("aberlab failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
