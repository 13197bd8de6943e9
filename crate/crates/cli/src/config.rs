//! The JSON file accepted by `--config`. Every section is optional; each
//! subcommand reads the sections it needs.

use std::path::Path;

use aberlab::correction::BeamsumConfig;
use aberlab::dataset::{ExperimentPlan, PipelineOptions, SceneSpec};
use aberlab::learn::TrainSpec;
use aberlab::metrics::RegionSpec;
use aberlab::phantom::{Extent, SpeckleSpec};
use aberlab::probe::{ImagingGrid, TransducerConfig};
use aberlab::{io, DasOptions, FxpfConfig, SimOptions};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub seed: u64,
    pub probe: TransducerConfig,
    pub speckle: SpeckleSpec,
    /// Phantom box of the resolution scene.
    pub resolution_extent: Extent,
    pub sim: SimOptions,
    /// Image grid; `None` uses the probe grid between `--z-start` and `--z-end`.
    pub grid: Option<ImagingGrid>,
    pub das: DasOptions,
    pub beamsum: BeamsumConfig,
    pub fxpf: FxpfConfig,
    pub regions: Vec<RegionSpec>,
    pub train: TrainSpec,
    pub plan: ExperimentPlan,
    pub pipeline: PipelineOptions,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            probe: TransducerConfig::default_l11_5v(),
            speckle: SpeckleSpec::default(),
            resolution_extent: Extent::default(),
            sim: SimOptions::default(),
            grid: None,
            das: DasOptions::default(),
            beamsum: BeamsumConfig::default(),
            fxpf: FxpfConfig::default(),
            regions: Vec::new(),
            train: TrainSpec::default(),
            plan: ExperimentPlan::default(),
            pipeline: PipelineOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Scene {
    Contrast,
    Speckle,
    Resolution,
}

impl CliConfig {
    pub fn read(path: &Path) -> aberlab::Result<Self> {
        io::read_json(path)
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.plan.master_seed = seed;
    }

    pub fn scene_of(&self, kind: Scene) -> SceneSpec {
        match kind {
            Scene::Contrast => SceneSpec::Contrast {
                speckle: self.speckle,
            },
            Scene::Speckle => SceneSpec::Speckle {
                speckle: self.speckle,
            },
            Scene::Resolution => SceneSpec::Resolution {
                extent: self.resolution_extent,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let c: CliConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c.probe, TransducerConfig::default_l11_5v());
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn unknown_sections_are_rejected() {
        assert!(serde_json::from_str::<CliConfig>(r#"{"probes": {}}"#).is_err());
    }

    #[test]
    fn seed_reaches_every_section() {
        let mut c = CliConfig::default();
        c.apply_seed(42);
        assert_eq!((c.seed, c.train.seed, c.plan.master_seed), (42, 42, 42));
    }
}
