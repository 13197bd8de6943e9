//! Dataset generation and batch evaluation.
//!
//! A dataset directory holds one sub-directory per scene with the phantom,
//! the aberration-free channel data and image, and for every aberrated
//! version its profile, channel data and image. `manifest.json` at the root
//! lists everything with paths relative to the root and is written last.
//!
//! All randomness derives from the plan's master seed: scene `s` uses
//! `derive_seed(master, [s, 0])` for its phantom and version `v` (1-based)
//! uses `derive_seed(master, [s, v])`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aberration::{generate_profile, AberrationProfile, ProfileSpec};
use crate::beamform::{das, DasOptions, RfImage};
use crate::bmode::envelope;
use crate::correction::{correct_beamsum, correct_fxpf, BeamsumConfig};
use crate::io::{self, FORMAT_VERSION};
use crate::metrics::{self, RegionSpec, Summary};
use crate::phantom::{
    contrast_phantom_with, resolution_test_phantom, uniform_speckle, Extent, Feature, Phantom,
    SpeckleSpec,
};
use crate::probe::{ImagingGrid, Pulse, TransducerConfig};
use crate::seed::{derive_seed, stream};
use crate::wavesim::{simulate_fsa, synthesize_planewave, ChannelData, SimOptions};
use crate::{Error, Result};
use fxpf::FxpfConfig;

/// Environment variable bounding the number of scenes built concurrently.
pub const WORKERS_ENV: &str = "ABERLAB_WORKERS";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSpec {
    /// Speckle with the two anechoic cysts.
    Contrast {
        speckle: SpeckleSpec,
    },
    Speckle {
        speckle: SpeckleSpec,
    },
    /// Point-target grid.
    Resolution {
        extent: Extent,
    },
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec::Contrast {
            speckle: SpeckleSpec::default(),
        }
    }
}

impl SceneSpec {
    pub fn extent(&self) -> Extent {
        match self {
            SceneSpec::Contrast { speckle } | SceneSpec::Speckle { speckle } => speckle.extent,
            SceneSpec::Resolution { extent } => *extent,
        }
    }

    pub fn build(&self, cfg: &TransducerConfig, seed: u64) -> Result<Phantom> {
        let pulse = Pulse::for_probe(cfg);
        match self {
            SceneSpec::Contrast { speckle } => contrast_phantom_with(cfg, &pulse, speckle, seed),
            SceneSpec::Speckle { speckle } => {
                uniform_speckle(&speckle.extent, speckle.density_per_cell, cfg, &pulse, seed)
            }
            SceneSpec::Resolution { extent } => resolution_test_phantom(extent),
        }
    }
}

/// Ranges the per-version profile statistics are drawn from, uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AberrationRange {
    /// RMS delay, ns.
    pub strength: (f64, f64),
    /// Correlation length, mm.
    pub correlation_length: (f64, f64),
}

impl Default for AberrationRange {
    fn default() -> Self {
        Self {
            strength: (20.0, 80.0),
            correlation_length: (4.0, 9.0),
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::invalid(format!(
            "{name} range ({lo}, {hi}) is invalid"
        )));
    }
    Ok(())
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Das,
    Beamsum,
    Fxpf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Das => "das",
            Method::Beamsum => "beamsum",
            Method::Fxpf => "fxpf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub probe: TransducerConfig,
    pub scene: SceneSpec,
    pub scenes: usize,
    /// Aberrated versions per scene.
    pub versions: usize,
    pub aberration: AberrationRange,
    /// Image grid; `None` uses the probe grid over the phantom's depth range.
    pub grid: Option<ImagingGrid>,
    pub sim: SimOptions,
    pub das: DasOptions,
    pub methods: Vec<Method>,
    /// Metric regions; empty derives cyst regions from the phantom.
    pub regions: Vec<RegionSpec>,
    pub beamsum: BeamsumConfig,
    pub fxpf: FxpfConfig,
    pub output_dir: PathBuf,
    pub master_seed: u64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            probe: TransducerConfig::default_l11_5v(),
            scene: SceneSpec::default(),
            scenes: 1,
            versions: 2,
            aberration: AberrationRange::default(),
            grid: None,
            sim: SimOptions::default(),
            das: DasOptions::default(),
            methods: vec![Method::Das, Method::Beamsum, Method::Fxpf],
            regions: Vec::new(),
            beamsum: BeamsumConfig::default(),
            fxpf: FxpfConfig::default(),
            output_dir: PathBuf::from("dataset"),
            master_seed: 0,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.probe.validate()?;
        self.scene.extent().validate()?;
        if self.scenes == 0 {
            return Err(Error::invalid("plan needs at least one scene"));
        }
        if self.versions < 2 {
            return Err(Error::invalid(
                "plan needs at least two aberrated versions per scene",
            ));
        }
        check_range("strength", self.aberration.strength)?;
        check_range("correlation_length", self.aberration.correlation_length)?;
        if self.aberration.correlation_length.0 <= 0.0 {
            return Err(Error::invalid("correlation length must be > 0"));
        }
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        self.beamsum.validate()?;
        self.fxpf.validate()?;
        Ok(())
    }

    pub fn image_grid(&self) -> Result<ImagingGrid> {
        match &self.grid {
            Some(g) => Ok(g.clone()),
            None => {
                let e = self.scene.extent();
                ImagingGrid::for_probe(&self.probe, e.z_min(), e.z_max())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AberratedRef {
    pub version_id: usize,
    pub rf_file: String,
    pub profile_file: String,
    /// Aberrated plane-wave channel data, kept so corrections can be rerun.
    pub channel_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSet {
    pub scene_id: usize,
    pub phantom_ref: String,
    pub non_aberrated_ref: String,
    pub non_aberrated_channel_ref: String,
    pub aberrated_refs: Vec<AberratedRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub master_seed: u64,
    pub probe: TransducerConfig,
    pub grid: ImagingGrid,
    pub sets: Vec<SceneSet>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = io::read_json(path)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Format {
                path: path.to_owned(),
                msg: format!(
                    "format version {} is not {FORMAT_VERSION}",
                    m.format_version
                ),
            });
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    /// Checks that every referenced file exists, images match the grid and
    /// every scene has the same number of versions.
    pub fn validate(&self, root: &Path) -> Result<()> {
        self.grid.validate()?;
        let expected = vec![self.grid.column_count, self.grid.row_count];
        let versions = self.sets.first().map_or(0, |s| s.aberrated_refs.len());
        for set in &self.sets {
            if set.aberrated_refs.len() != versions {
                return Err(Error::invalid(format!(
                    "scene {} has {} versions, expected {versions}",
                    set.scene_id,
                    set.aberrated_refs.len()
                )));
            }
            let mut images = vec![&set.non_aberrated_ref];
            images.extend(set.aberrated_refs.iter().map(|r| &r.rf_file));
            for rel in images {
                let sc: io::Sidecar = io::read_json(&root.join(rel))?;
                if sc.shape != expected {
                    return Err(Error::Format {
                        path: root.join(rel),
                        msg: format!(
                            "shape {:?} differs from the manifest grid {expected:?}",
                            sc.shape
                        ),
                    });
                }
                require_file(&io::data_path(&root.join(rel)))?;
            }
            let mut others = vec![&set.phantom_ref, &set.non_aberrated_channel_ref];
            others.extend(
                set.aberrated_refs
                    .iter()
                    .flat_map(|r| [&r.profile_file, &r.channel_file]),
            );
            for rel in others {
                require_file(&root.join(rel))?;
            }
        }
        Ok(())
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file is missing"),
        ))
    }
}

/// Worker count from [`WORKERS_ENV`], else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn build_dataset(plan: &ExperimentPlan) -> Result<DatasetManifest> {
    build_dataset_with_workers(plan, worker_count())
}

/// Generates every scene with at most `workers` threads and writes the
/// manifest. Output bytes do not depend on `workers`.
pub fn build_dataset_with_workers(
    plan: &ExperimentPlan,
    workers: usize,
) -> Result<DatasetManifest> {
    plan.validate()?;
    let grid = plan.image_grid()?;
    let root = &plan.output_dir;
    io::ensure_dir(root)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))?;
    let sets = pool.install(|| {
        (0..plan.scenes)
            .into_par_iter()
            .map(|s| build_scene(plan, &grid, s))
            .collect::<Result<Vec<_>>>()
    })?;
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        master_seed: plan.master_seed,
        probe: plan.probe.clone(),
        grid,
        sets,
    };
    manifest.write(&root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn scene_dir_name(scene: usize) -> String {
    format!("scene_{scene:04}")
}

/// Builds one scene in a scratch directory and renames it into place; the
/// scratch directory is removed on failure.
fn build_scene(plan: &ExperimentPlan, grid: &ImagingGrid, scene: usize) -> Result<SceneSet> {
    let name = scene_dir_name(scene);
    let final_dir = plan.output_dir.join(&name);
    let scratch = plan.output_dir.join(format!(".{name}.partial"));
    if scratch.exists() {
        fs::remove_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;
    }
    io::ensure_dir(&scratch)?;
    match write_scene(plan, grid, scene, &scratch, &name) {
        Ok(set) => {
            if final_dir.exists() {
                fs::remove_dir_all(&final_dir).map_err(|e| Error::io(&final_dir, e))?;
            }
            fs::rename(&scratch, &final_dir).map_err(|e| Error::io(&final_dir, e))?;
            Ok(set)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&scratch);
            Err(e)
        }
    }
}

fn write_scene(
    plan: &ExperimentPlan,
    grid: &ImagingGrid,
    scene: usize,
    dir: &Path,
    name: &str,
) -> Result<SceneSet> {
    let cfg = &plan.probe;
    let s = scene as u64;
    let phantom = plan
        .scene
        .build(cfg, derive_seed(plan.master_seed, &[s, 0]))?;
    let pulse = Pulse::for_probe(cfg);
    let fsa = simulate_fsa::<f32>(&phantom, cfg, &pulse, &plan.sim)?;
    let rel = |file: &str| format!("{name}/{file}");

    phantom.write(&dir.join("phantom.json"))?;
    let clean = synthesize_planewave(&fsa, None)?;
    clean.write(&dir.join("clean_channel.json"))?;
    das(&clean, cfg, grid, None, &plan.das)?.write(&dir.join("clean_rf.json"))?;

    let mut refs = Vec::with_capacity(plan.versions);
    for v in 1..=plan.versions {
        let vseed = derive_seed(plan.master_seed, &[s, v as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(vseed, &[stream::SPEC]));
        let spec = ProfileSpec {
            strength: draw(&mut rng, plan.aberration.strength),
            correlation_length: draw(&mut rng, plan.aberration.correlation_length),
            seed: derive_seed(vseed, &[stream::PROFILE]),
        };
        let profile = generate_profile(&spec, cfg)?;
        let channel = synthesize_planewave(&fsa, Some(&profile))?;
        let img = das(&channel, cfg, grid, Some(&profile), &plan.das)?;
        let stem = format!("v{v:03}");
        io::write_json(&dir.join(format!("{stem}_profile.json")), &profile)?;
        channel.write(&dir.join(format!("{stem}_channel.json")))?;
        img.write(&dir.join(format!("{stem}_rf.json")))?;
        refs.push(AberratedRef {
            version_id: v,
            rf_file: rel(&format!("{stem}_rf.json")),
            profile_file: rel(&format!("{stem}_profile.json")),
            channel_file: rel(&format!("{stem}_channel.json")),
        });
    }
    Ok(SceneSet {
        scene_id: scene,
        phantom_ref: rel("phantom.json"),
        non_aberrated_ref: rel("clean_rf.json"),
        non_aberrated_channel_ref: rel("clean_channel.json"),
        aberrated_refs: refs,
    })
}

/// Metrics of one image in one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub contrast_db: f64,
    /// Speckle SNR of the background region.
    pub speckle_snr: f64,
    pub gcnr: f64,
}

pub fn evaluate_image(img: &RfImage<f32>, regions: &[RegionSpec]) -> Result<Vec<RegionMetrics>> {
    let env = envelope(img)?;
    regions
        .iter()
        .map(|r| {
            Ok(RegionMetrics {
                contrast_db: metrics::contrast(&env, &img.grid, r)?.db,
                speckle_snr: metrics::speckle_snr(&env, &img.grid, &r.background)?,
                gcnr: metrics::gcnr(&env, &img.grid, r)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub scene_id: usize,
    /// `None` for the aberration-free frame.
    pub version_id: Option<usize>,
    pub method: Method,
    pub metrics: Vec<RegionMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    pub region: usize,
    pub contrast_db: Option<Summary>,
    pub speckle_snr: Option<Summary>,
    pub gcnr: Option<Summary>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub frames: Vec<FrameReport>,
    /// Statistics over the aberrated frames, per method and region.
    pub aggregates: Vec<MethodAggregate>,
}

/// Options of [`run_pipeline`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub methods: Vec<Method>,
    /// Empty derives cyst regions from each scene's phantom.
    pub regions: Vec<RegionSpec>,
    pub das: DasOptions,
    pub beamsum: BeamsumConfig,
    pub fxpf: FxpfConfig,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            methods: vec![Method::Das, Method::Beamsum, Method::Fxpf],
            regions: Vec::new(),
            das: DasOptions::default(),
            beamsum: BeamsumConfig::default(),
            fxpf: FxpfConfig::default(),
        }
    }
}

impl From<&ExperimentPlan> for PipelineOptions {
    fn from(plan: &ExperimentPlan) -> Self {
        Self {
            methods: plan.methods.clone(),
            regions: plan.regions.clone(),
            das: plan.das,
            beamsum: plan.beamsum.clone(),
            fxpf: plan.fxpf.clone(),
        }
    }
}

fn cyst_regions(phantom: &Phantom) -> Vec<RegionSpec> {
    phantom
        .features
        .iter()
        .filter_map(|f| match *f {
            Feature::Cyst { x, z, radius } => Some(RegionSpec::cyst(x, z, radius)),
            Feature::Point { .. } => None,
        })
        .collect()
}

/// Image of one frame by `method`. `profile` is the receive aberration
/// physically present in the channel data.
pub fn apply_method(
    method: Method,
    channel: &ChannelData<f32>,
    cfg: &TransducerConfig,
    grid: &ImagingGrid,
    profile: Option<&AberrationProfile>,
    opts: &PipelineOptions,
) -> Result<RfImage<f32>> {
    match method {
        Method::Das => das(channel, cfg, grid, profile, &opts.das),
        Method::Beamsum => Ok(correct_beamsum(channel, cfg, grid, profile, &opts.beamsum)?.0),
        Method::Fxpf => correct_fxpf(channel, cfg, grid, profile, &opts.fxpf),
    }
}

/// Runs every method on every frame of the dataset at `root` and scores the
/// results. Per-frame failures are recorded and skipped.
pub fn run_pipeline(root: &Path, opts: &PipelineOptions) -> Result<PipelineReport> {
    let manifest = DatasetManifest::read(&root.join(MANIFEST_FILE))?;
    manifest.validate(root)?;
    let cfg = &manifest.probe;
    let grid = &manifest.grid;
    let mut frames = Vec::new();
    let mut region_count = opts.regions.len();
    for set in &manifest.sets {
        let regions = if opts.regions.is_empty() {
            cyst_regions(&Phantom::read(&root.join(&set.phantom_ref))?)
        } else {
            opts.regions.clone()
        };
        if regions.is_empty() {
            return Err(Error::invalid(format!(
                "scene {} has no metric regions",
                set.scene_id
            )));
        }
        region_count = region_count.max(regions.len());
        let mut jobs: Vec<(Option<usize>, PathBuf, Option<PathBuf>)> =
            vec![(None, root.join(&set.non_aberrated_channel_ref), None)];
        jobs.extend(set.aberrated_refs.iter().map(|r| {
            (
                Some(r.version_id),
                root.join(&r.channel_file),
                Some(root.join(&r.profile_file)),
            )
        }));
        for (version_id, channel_path, profile_path) in jobs {
            let channel = ChannelData::<f32>::read(&channel_path)?;
            let profile: Option<AberrationProfile> =
                profile_path.as_deref().map(io::read_json).transpose()?;
            for &method in &opts.methods {
                let result = apply_method(method, &channel, cfg, grid, profile.as_ref(), opts)
                    .and_then(|img| evaluate_image(&img, &regions));
                let (metrics, error) = match result {
                    Ok(m) => (m, None),
                    Err(e) => {
                        log::warn!(
                            "scene {} version {version_id:?} {}: {e}",
                            set.scene_id,
                            method.name()
                        );
                        (Vec::new(), Some(e.to_string()))
                    }
                };
                frames.push(FrameReport {
                    scene_id: set.scene_id,
                    version_id,
                    method,
                    metrics,
                    error,
                });
            }
        }
    }
    let aggregates = aggregate(&frames, &opts.methods, region_count);
    Ok(PipelineReport { frames, aggregates })
}

/// Per-method, per-region statistics over the aberrated frames.
pub fn aggregate(
    frames: &[FrameReport],
    methods: &[Method],
    regions: usize,
) -> Vec<MethodAggregate> {
    let mut out = Vec::new();
    for &method in methods {
        let selected: Vec<&FrameReport> = frames
            .iter()
            .filter(|f| f.method == method && f.version_id.is_some())
            .collect();
        let failures = selected.iter().filter(|f| f.error.is_some()).count();
        for region in 0..regions {
            let values = |pick: fn(&RegionMetrics) -> f64| -> Vec<f64> {
                selected
                    .iter()
                    .filter_map(|f| f.metrics.get(region).map(pick))
                    .collect()
            };
            out.push(MethodAggregate {
                method,
                region,
                contrast_db: metrics::summarize(&values(|m| m.contrast_db)),
                speckle_snr: metrics::summarize(&values(|m| m.speckle_snr)),
                gcnr: metrics::summarize(&values(|m| m.gcnr)),
                failures,
            });
        }
    }
    out
}
