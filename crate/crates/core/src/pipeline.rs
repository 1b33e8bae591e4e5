//! End-to-end pipeline: dataset synthesis or ingestion, density fitting,
//! extraction, feature fitting, protocol evaluation, and artifact
//! management. Every stage writes its outputs under the run directory; a
//! failed stage leaves a `<stage>.partial` marker and aborts with the
//! stage name and cause.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::TrainConfig;
use crate::dataset::{self, Dataset, SynthConfig};
use crate::density::{self, DensityConfig, DensityModel, Frame};
use crate::error::{Error, Result};
use crate::eval::protocol::{
    fit_front_end, run_protocol, EvalReport, Protocol, ProtocolContext, RoleLog, ScoredRecord,
};
use crate::extract::{extract_dataset, save_extracted};
use crate::features;

/// Feature-stage options.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// PCA component count; defaults to min(train samples - 1, dimension).
    pub m: Option<usize>,
    /// Augmented variants per training video at extraction time.
    pub augment_per_video: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            m: None,
            augment_per_video: 2,
        }
    }
}

/// One-class options.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OneClassConfig {
    pub tail_fraction: f64,
}

impl Default for OneClassConfig {
    fn default() -> Self {
        OneClassConfig { tail_fraction: 0.1 }
    }
}

/// Which manifest split feeds each fit stage. "test" is never allowed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitRoles {
    pub density: String,
    pub pixel_stats: String,
    pub feature_stats: String,
}

impl Default for FitRoles {
    fn default() -> Self {
        FitRoles {
            density: "train".into(),
            pixel_stats: "train".into(),
            feature_stats: "dev".into(),
        }
    }
}

/// Full run configuration with defaults for every section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Existing dataset directory; ignored when `synth` is set.
    pub data_dir: Option<PathBuf>,
    /// Generate a synthetic dataset into the run directory first.
    pub synth: Option<SynthConfig>,
    pub density: DensityConfig,
    pub features: FeatureConfig,
    pub oneclass: OneClassConfig,
    pub classifier: TrainConfig,
    pub protocols: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            data_dir: None,
            synth: Some(SynthConfig::default_desk()),
            density: DensityConfig::default(),
            features: FeatureConfig::default(),
            oneclass: OneClassConfig::default(),
            classifier: TrainConfig {
                epochs: 60,
                hidden: 32,
                batch_size: 64,
                ..TrainConfig::default()
            },
            protocols: vec!["known".into(), "loo".into()],
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Validate before any compute; violations are config errors (exit 2).
    pub fn validate(&self) -> Result<()> {
        if self.synth.is_none() && self.data_dir.is_none() {
            return Err(Error::config("either synth or data_dir must be given"));
        }
        if let Some(synth) = &self.synth {
            synth.validate().map_err(|e| Error::config(e.to_string()))?;
        }
        for p in &self.protocols {
            Protocol::parse(p)?;
        }
        let roles = FitRoles::default();
        for (name, split) in [
            ("density", &roles.density),
            ("pixel_stats", &roles.pixel_stats),
            ("feature_stats", &roles.feature_stats),
        ] {
            if split == "test" {
                return Err(Error::config(format!(
                    "fit stage '{name}' must not consume the test split"
                )));
            }
        }
        self.validate_roles(&roles)
    }

    fn validate_roles(&self, roles: &FitRoles) -> Result<()> {
        for (name, split) in [
            ("density", roles.density.as_str()),
            ("pixel_stats", roles.pixel_stats.as_str()),
            ("feature_stats", roles.feature_stats.as_str()),
        ] {
            if split == "test" {
                return Err(Error::config(format!(
                    "fit stage '{name}' must not consume the test split"
                )));
            }
            if !matches!(split, "train" | "dev") {
                return Err(Error::config(format!(
                    "fit stage '{name}' references unknown split '{split}'"
                )));
            }
        }
        Ok(())
    }
}

fn stage<T>(out_dir: &Path, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    match f() {
        Ok(v) => Ok(v),
        Err(e) => {
            let marker = out_dir.join(format!("{name}.partial"));
            let _ = fs::write(&marker, format!("stage '{name}' failed: {e}\n"));
            Err(Error::stage(name, e))
        }
    }
}

/// Fit the density model on the training bona-fide videos of a dataset.
pub fn fit_density_on_dataset(
    dataset: &Dataset,
    config: &DensityConfig,
    role_log: &mut RoleLog,
) -> Result<DensityModel> {
    let ids = dataset.bf_ids("train");
    if ids.is_empty() {
        return Err(Error::invalid("dataset has no training bona-fide videos"));
    }
    role_log.record("fit:density", ids.iter().cloned());
    let videos: Vec<Vec<Frame>> = ids
        .iter()
        .map(|id| dataset.load_video(id))
        .collect::<Result<_>>()?;
    let groups: Vec<Vec<&Frame>> = videos.iter().map(|v| v.iter().collect()).collect();
    density::fit_density_grouped(&groups, config)
}

/// Write the three score CSVs for one protocol's scored records. For
/// leave-one-out style protocols a bona-fide video is scored once per
/// trial; the trial name disambiguates.
pub fn write_score_csvs(dir: &Path, protocol_id: &str, records: &[ScoredRecord]) -> Result<()> {
    let multi_trial = records
        .windows(2)
        .any(|w| w[0].trial != w[1].trial);
    let row_id = |r: &ScoredRecord| {
        if multi_trial {
            format!("{}@{}", r.video_id, r.trial)
        } else {
            r.video_id.clone()
        }
    };
    let mut oneclass = String::from("video_id,species,p_ll,p_energy,p_pa\n");
    let mut clf = String::from("video_id,species,p_pa\n");
    let mut fused = String::from("video_id,species,p_d,p_o,p_fused\n");
    for r in records {
        let id = row_id(r);
        let sp = r.species.clone().unwrap_or_else(|| "bf".to_string());
        oneclass.push_str(&format!(
            "{id},{sp},{},{},{}\n",
            r.p_ll, r.p_energy, r.p_oneclass
        ));
        clf.push_str(&format!("{id},{sp},{}\n", r.p_clf));
        fused.push_str(&format!("{id},{sp},{},{},{}\n", r.p_clf, r.p_oneclass, r.p_fused));
    }
    for (name, content) in [
        (format!("scores_{protocol_id}_oneclass.csv"), oneclass),
        (format!("scores_{protocol_id}_clf.csv"), clf),
        (format!("scores_{protocol_id}_fused.csv"), fused),
    ] {
        let path = dir.join(name);
        fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<PathBuf> {
    let path = dir.join(format!("eval_{}.json", report.protocol));
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

    // DET points as TSV per detector/species for plotting
    let det_dir = dir.join("det");
    fs::create_dir_all(&det_dir).map_err(|e| Error::io(&det_dir, e))?;
    for det in &report.detectors {
        for sp in &det.species {
            let mut tsv = String::from("threshold\tapcer\tbpcer\n");
            for p in &sp.det {
                tsv.push_str(&format!("{}\t{}\t{}\n", p.threshold, p.apcer, p.bpcer));
            }
            let path = det_dir.join(format!(
                "{}_{}_{}.tsv",
                report.protocol, det.detector, sp.species
            ));
            fs::write(&path, tsv).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(path)
}

/// Outputs of a full pipeline run.
#[derive(Debug)]
pub struct RunArtifacts {
    pub dataset_dir: PathBuf,
    pub density_path: PathBuf,
    pub features_path: PathBuf,
    pub oneclass_path: PathBuf,
    pub reports: Vec<(Protocol, EvalReport, PathBuf)>,
}

/// Execute the full pipeline into `out_dir`.
pub fn run_pipeline(config: &RunConfig, out_dir: &Path) -> Result<RunArtifacts> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    // resolved-config snapshot for provenance
    let snapshot = out_dir.join("resolved_config.json");
    let json = serde_json::to_string_pretty(config)
        .map_err(|e| Error::format(&snapshot, e.to_string()))?;
    fs::write(&snapshot, json).map_err(|e| Error::io(&snapshot, e))?;

    let mut role_log = RoleLog::default();

    let dataset = stage(out_dir, "synth", || match &config.synth {
        Some(synth) => {
            let dir = out_dir.join("dataset");
            dataset::generate(synth, &dir)?;
            dataset::load(&dir)
        }
        None => dataset::load(config.data_dir.as_ref().expect("validated")),
    })?;

    let density_path = out_dir.join("density.density");
    let model = stage(out_dir, "train-density", || {
        let model = fit_density_on_dataset(&dataset, &config.density, &mut role_log)?;
        density::io::save(&model, &density_path)?;
        Ok(model)
    })?;

    let extracted_dir = out_dir.join("extracted");
    let extracted = stage(out_dir, "extract", || {
        let extracted = extract_dataset(
            &dataset,
            &model,
            config.features.augment_per_video,
            config.seed,
        )?;
        save_extracted(&extracted, &extracted_dir)?;
        Ok(extracted)
    })?;

    let features_path = out_dir.join("features.features");
    let oneclass_path = out_dir.join("oneclass.json");
    let front_end = stage(out_dir, "fit-features", || {
        let front_end = fit_front_end(
            &extracted,
            config.features.m,
            config.oneclass.tail_fraction,
            &mut role_log,
        )?;
        features::io::save(&front_end.features, &features_path)?;
        front_end.oneclass.save(&oneclass_path)?;
        Ok(front_end)
    })?;

    let mut reports = Vec::new();
    for name in &config.protocols {
        let protocol = Protocol::parse(name)?;
        let (report, path) = stage(out_dir, &format!("eval-{name}"), || {
            let ctx = ProtocolContext {
                extracted: &extracted,
                front_end: &front_end,
                clf_config: TrainConfig {
                    seed: config.seed,
                    ..config.classifier.clone()
                },
            };
            let (report, records) = run_protocol(&ctx, protocol, config.seed, &mut role_log)?;
            let path = write_report(out_dir, &report)?;
            write_score_csvs(out_dir, &report.protocol, &records)?;
            Ok((report, path))
        })?;
        reports.push((protocol, report, path));
    }

    // machine check of the data-role separation, then persist the log
    stage(out_dir, "role-check", || {
        role_log.check_split_discipline(&extracted)?;
        let path = out_dir.join("role_log.json");
        let json = serde_json::to_string_pretty(&role_log)
            .map_err(|e| Error::format(&path, e.to_string()))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    })?;

    Ok(RunArtifacts {
        dataset_dir: dataset.root.clone(),
        density_path,
        features_path,
        oneclass_path,
        reports,
    })
}

