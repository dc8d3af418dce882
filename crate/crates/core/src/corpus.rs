use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::features::{build_feature_frames, extract_fall_segment, FallSegment, FeatureFrame, StillnessConfig};
use crate::orientation::{track_orientation, FilterConfig};
use crate::sisfall::{
    check_profiles, import_annotations, load_subjects, load_trial, AnnotatedTrial, AnnotationTable, CalibrationSpec,
    SubjectId, SubjectProfile, TrialId,
};

/// Where a corpus lives and how its trials are turned into features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusOptions {
    pub root: PathBuf,
    pub subjects: PathBuf,
    pub annotations: PathBuf,
    pub calibration: CalibrationSpec,
    pub filter: FilterConfig,
    pub stillness: StillnessConfig,
}

impl CorpusOptions {
    /// `subjects.csv` and `annotations.csv` inside `root`, SisFall axis
    /// conventions (device y along the trunk).
    pub fn at(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        Self {
            subjects: root.join("subjects.csv"),
            annotations: root.join("annotations.csv"),
            root,
            calibration: CalibrationSpec::default(),
            filter: FilterConfig {
                vertical_axis: [0.0, 1.0, 0.0],
                ..FilterConfig::default()
            },
            stillness: StillnessConfig::default(),
        }
    }
}

/// Trial files, subject profiles and fall annotations of one corpus.
/// Trials are loaded on demand so memory stays bounded by the worker count.
pub struct Corpus {
    pub options: CorpusOptions,
    pub profiles: BTreeMap<SubjectId, SubjectProfile>,
    pub annotations: AnnotationTable,
    pub trials: Vec<(TrialId, PathBuf)>,
}

impl Corpus {
    pub fn open(options: &CorpusOptions) -> Result<Self> {
        let root = &options.root;
        let mut trials = Vec::new();
        let subjects = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        for entry in subjects {
            let dir = entry.map_err(|e| Error::io(root, e))?.path();
            if !dir.is_dir() {
                continue;
            }
            for f in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let path = f.map_err(|e| Error::io(&dir, e))?.path();
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
                if let Ok(id) = TrialId::from_filename(name) {
                    trials.push((id, path));
                }
            }
        }
        trials.sort();
        if trials.is_empty() {
            return Err(invalid(format!("no trial files under {}", root.display())));
        }
        let profiles = load_subjects(&options.subjects)?;
        check_profiles(trials.iter().map(|t| &t.0), &profiles)?;
        let annotations = AnnotationTable::load(&options.annotations)?;
        Ok(Self {
            options: options.clone(),
            profiles,
            annotations,
            trials,
        })
    }

    pub fn subjects(&self) -> Vec<SubjectId> {
        let mut s: Vec<SubjectId> = self.trials.iter().map(|t| t.0.subject.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    /// Fall trials that carry an annotation.
    pub fn annotated_falls(&self) -> Vec<TrialId> {
        self.ids(true)
            .into_iter()
            .filter(|id| !self.annotations.spans(id).is_empty())
            .collect()
    }

    pub fn ids(&self, falls: bool) -> Vec<TrialId> {
        self.trials
            .iter()
            .filter(|t| t.0.activity.is_fall() == falls)
            .map(|t| t.0.clone())
            .collect()
    }

    pub fn find(&self, id: &TrialId) -> Result<&PathBuf> {
        self.trials
            .iter()
            .find(|t| &t.0 == id)
            .map(|t| &t.1)
            .ok_or_else(|| invalid(format!("trial {id} is not in the corpus")))
    }

    pub fn profile(&self, id: &TrialId) -> &SubjectProfile {
        &self.profiles[&id.subject]
    }

    pub fn load(&self, id: &TrialId) -> Result<AnnotatedTrial> {
        let (_, samples) = load_trial(self.find(id)?, &self.options.calibration)?;
        import_annotations(id, samples, &self.annotations)
    }

    /// Offline orientation and the per-sample feature frames of a trial.
    pub fn frames(&self, trial: &AnnotatedTrial) -> Result<Vec<FeatureFrame>> {
        let track = track_orientation(&trial.samples, &self.options.filter)?;
        build_feature_frames(trial, self.profile(&trial.id), &track)
    }

    pub fn segment(&self, id: &TrialId) -> Result<FallSegment> {
        let trial = self.load(id)?;
        let frames = self.frames(&trial)?;
        extract_fall_segment(&trial, &frames, &self.options.stillness)
    }

    /// Fall segments of every annotated fall trial. Fall trials without an
    /// annotation are skipped and reported.
    pub fn segments(&self) -> Result<(Vec<FallSegment>, Vec<TrialId>)> {
        let (annotated, missing): (Vec<TrialId>, Vec<TrialId>) = self
            .ids(true)
            .into_iter()
            .partition(|id| !self.annotations.spans(id).is_empty());
        for id in &missing {
            log::warn!("{id}: fall trial without annotation, skipped");
        }
        let segs = annotated.par_iter().map(|id| self.segment(id)).collect::<Result<Vec<_>>>()?;
        Ok((segs, missing))
    }

    /// Applies `f` to every listed trial in parallel, preserving order.
    pub fn map_trials<T, F>(&self, ids: &[TrialId], f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(AnnotatedTrial, Vec<FeatureFrame>) -> Result<T> + Sync,
    {
        ids.par_iter()
            .map(|id| {
                let trial = self.load(id)?;
                let frames = self.frames(&trial)?;
                f(trial, frames)
            })
            .collect()
    }
}
