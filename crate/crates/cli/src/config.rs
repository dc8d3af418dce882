use std::path::{Path, PathBuf};

use fallsense::corpus::CorpusOptions;
use fallsense::error::{Error, Result};
use fallsense::features::StillnessConfig;
use fallsense::fdnn::FdnnConfig;
use fallsense::kan::{CvPlan, HyperGrid, KanConfig};
use fallsense::orientation::FilterConfig;
use fallsense::selection::SelectionConfig;
use fallsense::sisfall::CalibrationSpec;
use fallsense::streaming::StreamConfig;
use fallsense::synthetic::SyntheticCorpusConfig;
use serde::{Deserialize, Serialize};

/// Everything a run needs. Missing fields take their defaults, so an empty
/// `{}` file (or no file at all) is a complete configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    /// Defaults to `<dataset_root>/annotations.csv`.
    pub annotations: Option<PathBuf>,
    /// Defaults to `<dataset_root>/subjects.csv`.
    pub subjects: Option<PathBuf>,
    /// Master seed, copied into every seeded component on resolution.
    pub seed: u64,
    pub calibration: CalibrationSpec,
    pub filter: FilterConfig,
    pub stillness: StillnessConfig,
    pub selection: SelectionConfig,
    /// Train / validation / test fractions of the fall trials.
    pub split: [f64; 3],
    pub fdnn: FdnnConfig,
    pub kan: KanConfig,
    pub cv_plan: CvPlan,
    pub cv_grid: HyperGrid,
    pub stream: StreamConfig,
    pub synth: SyntheticCorpusConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let filter = FilterConfig {
            vertical_axis: [0.0, 1.0, 0.0],
            ..FilterConfig::default()
        };
        Self {
            dataset_root: None,
            annotations: None,
            subjects: None,
            seed: 0,
            calibration: CalibrationSpec::default(),
            filter,
            stillness: StillnessConfig::default(),
            selection: SelectionConfig::default(),
            split: [0.6, 0.2, 0.2],
            fdnn: FdnnConfig::default(),
            kan: KanConfig::default(),
            cv_plan: CvPlan::default(),
            cv_grid: HyperGrid::default(),
            stream: StreamConfig {
                filter,
                ..StreamConfig::default()
            },
            synth: SyntheticCorpusConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Applies command-line overrides and propagates the master seed and the
    /// filter settings so the snapshot alone reproduces the run.
    pub fn resolve(mut self, seed: Option<u64>, root: Option<PathBuf>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if root.is_some() {
            self.dataset_root = root;
        }
        self.fdnn.seed = self.seed;
        self.kan.seed = self.seed;
        self.synth.seed = self.seed;
        self.stream.filter = self.filter;
        self.calibration.validate()?;
        self.filter.validate()?;
        self.fdnn.validate()?;
        self.kan.validate()?;
        self.cv_plan.validate()?;
        Ok(self)
    }

    pub fn root(&self) -> Result<&Path> {
        self.dataset_root
            .as_deref()
            .ok_or_else(|| fallsense::error::invalid("no dataset root: pass <ROOT> or set dataset_root in the config"))
    }

    pub fn annotations_path(&self) -> Result<PathBuf> {
        Ok(match &self.annotations {
            Some(p) => p.clone(),
            None => self.root()?.join("annotations.csv"),
        })
    }

    pub fn subjects_path(&self) -> Result<PathBuf> {
        Ok(match &self.subjects {
            Some(p) => p.clone(),
            None => self.root()?.join("subjects.csv"),
        })
    }

    pub fn corpus_options(&self) -> Result<CorpusOptions> {
        Ok(CorpusOptions {
            root: self.root()?.to_path_buf(),
            subjects: self.subjects_path()?,
            annotations: self.annotations_path()?,
            calibration: self.calibration,
            filter: self.filter,
            stillness: self.stillness,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}
