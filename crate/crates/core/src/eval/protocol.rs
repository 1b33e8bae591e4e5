//! Protocol orchestration: fit the bona-fide front end once, then train and
//! score the discriminative classifier per protocol (known split,
//! leave-one-out, few-shot), assemble per-species metrics for all three
//! detectors, and summarize each by its worst species.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{self, BfReference, EmbeddingNetwork, TrainConfig, BF_LABEL};
use crate::error::{Error, Result};
use crate::extract::ExtractedVideo;
use crate::features::{
    project, AnomalyFeature, FeaturePipeline, FeatureStandardizer, PcaModel, PixelStandardizer,
};
use crate::fusion::fuse;
use crate::oneclass::OneClassModel;
use crate::rng;

use super::metrics::{acer_at_apcer, det_curve, eer, mpa_eer, DetPoint};

/// Evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Train on half of each species' videos, test the rest.
    Known,
    /// For each species, train on all the others and test on it.
    LeaveOneOut,
    /// Leave-one-out plus k held-out videos moved into training.
    FewShot(usize),
}

impl Protocol {
    pub fn id(&self) -> String {
        match self {
            Protocol::Known => "known".into(),
            Protocol::LeaveOneOut => "loo".into(),
            Protocol::FewShot(k) => format!("fewshot{k}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "known" => Ok(Protocol::Known),
            "loo" => Ok(Protocol::LeaveOneOut),
            "fewshot1" => Ok(Protocol::FewShot(1)),
            "fewshot5" => Ok(Protocol::FewShot(5)),
            other => Err(Error::config(format!("unknown protocol '{other}'"))),
        }
    }
}

/// Which detector a report section describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    OneClass,
    Discriminative,
    Fused,
}

impl DetectorKind {
    pub fn id(&self) -> &'static str {
        match self {
            DetectorKind::OneClass => "oneclass",
            DetectorKind::Discriminative => "discriminative",
            DetectorKind::Fused => "fused",
        }
    }
}

/// The attack-agnostic front end, fitted once per dataset: density-model
/// features, PCA pipeline, and one-class model.
#[derive(Debug, Clone)]
pub struct FrontEnd {
    pub features: FeaturePipeline,
    pub oneclass: OneClassModel,
}

/// Fit the feature pipeline on training bona fide, standardize against
/// validation bona fide, and fit the one-class Gaussians on validation
/// bona fide. Records which video ids each fit consumed.
pub fn fit_front_end(
    extracted: &[ExtractedVideo],
    m: Option<usize>,
    tail_fraction: f64,
    role_log: &mut RoleLog,
) -> Result<FrontEnd> {
    let train_bf: Vec<&ExtractedVideo> = extracted
        .iter()
        .filter(|v| v.species.is_none() && v.split == "train")
        .collect();
    let dev_bf: Vec<&ExtractedVideo> = extracted
        .iter()
        .filter(|v| v.species.is_none() && v.split == "dev")
        .collect();
    if train_bf.len() < 2 {
        return Err(Error::invalid("need at least 2 training bona-fide videos"));
    }
    if dev_bf.len() < 2 {
        return Err(Error::invalid("need at least 2 validation bona-fide videos"));
    }
    role_log.record("fit:pixel-standardizer", train_bf.iter().map(|v| v.id.clone()));
    role_log.record("fit:pca", train_bf.iter().map(|v| v.id.clone()));
    role_log.record("fit:feature-standardizer", dev_bf.iter().map(|v| v.id.clone()));
    role_log.record("fit:one-class", dev_bf.iter().map(|v| v.id.clone()));

    let train_grids: Vec<ndarray::Array3<f64>> =
        train_bf.iter().map(|v| v.grid.clone()).collect();
    let pixel = PixelStandardizer::fit(&train_grids)?;
    let standardized: Vec<Vec<f64>> = train_grids
        .iter()
        .map(|g| Ok(pixel.transform(g)?.iter().copied().collect()))
        .collect::<Result<_>>()?;
    let d = standardized[0].len();
    let n = standardized.len();
    let m = m.unwrap_or_else(|| (n - 1).min(d)).min(n.min(d));
    let pca = PcaModel::fit(&standardized, m)?;

    let dev_features: Vec<AnomalyFeature> = dev_bf
        .iter()
        .map(|v| {
            let grid = pixel.transform(&v.grid)?;
            let flat: Vec<f64> = grid.iter().copied().collect();
            project(&pca, &flat)
        })
        .collect::<Result<_>>()?;
    let feature = FeatureStandardizer::fit(&dev_features)?;
    let pipeline = FeaturePipeline { pixel, pca, feature };

    let dev_standardized: Vec<AnomalyFeature> = dev_bf
        .iter()
        .map(|v| pipeline.features_for_grid(&v.grid))
        .collect::<Result<_>>()?;
    let dev_lls: Vec<f64> = dev_bf.iter().map(|v| v.aggregate_ll).collect();
    let oneclass = OneClassModel::fit(&dev_standardized, &dev_lls, tail_fraction)?;

    Ok(FrontEnd {
        features: pipeline,
        oneclass,
    })
}

/// Which video ids each fit operation consumed; the split-discipline check
/// runs against the manifest.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RoleLog {
    pub consumed: BTreeMap<String, Vec<String>>,
}

impl RoleLog {
    pub fn record(&mut self, fit: &str, ids: impl Iterator<Item = String>) {
        let mut v: Vec<String> = ids.collect();
        v.sort();
        self.consumed.entry(fit.to_string()).or_default().extend(v);
    }

    /// No fit operation may ever consume a test bona-fide video.
    pub fn check_split_discipline(&self, extracted: &[ExtractedVideo]) -> Result<()> {
        let test_bf: std::collections::BTreeSet<&str> = extracted
            .iter()
            .filter(|v| v.species.is_none() && v.split == "test")
            .map(|v| v.id.as_str())
            .collect();
        for (fit, ids) in &self.consumed {
            for id in ids {
                if test_bf.contains(id.as_str()) {
                    return Err(Error::invalid(format!(
                        "split discipline violated: {fit} consumed test bona-fide video {id}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-species metrics for one detector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeciesReport {
    pub species: String,
    pub eer: f64,
    pub acer_at_apcer5: f64,
    pub bpcer_at_apcer5: f64,
    pub det: Vec<DetPoint>,
}

/// One detector's section of an evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorReport {
    pub detector: String,
    pub species: Vec<SpeciesReport>,
    pub mpa_eer: f64,
}

/// Full evaluation report for one protocol run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub seed: u64,
    pub detectors: Vec<DetectorReport>,
    pub model_fingerprints: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn detector(&self, kind: DetectorKind) -> &DetectorReport {
        self.detectors
            .iter()
            .find(|d| d.detector == kind.id())
            .expect("report carries all detector kinds")
    }
}

pub fn fingerprint(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn network_fingerprint(net: &EmbeddingNetwork, reference: &BfReference) -> String {
    let mut bytes = Vec::new();
    for p in net.params_flat() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    for c in &reference.centroid {
        bytes.extend_from_slice(&c.to_le_bytes());
    }
    fingerprint(&bytes)
}

/// Scores of one test item under one trial's classifier.
#[derive(Debug, Clone)]
pub struct ScoredRecord {
    pub video_id: String,
    /// None for bona fide.
    pub species: Option<String>,
    /// Which trained classifier produced p_clf ("known" or the held-out
    /// species of a leave-one-out trial).
    pub trial: String,
    /// Bona-fide likelihood of the aggregated log-likelihood measure.
    pub p_ll: f64,
    /// Bona-fide likelihood of the anomaly-energy measure.
    pub p_energy: f64,
    pub p_oneclass: f64,
    pub p_clf: f64,
    pub p_fused: f64,
}

/// Everything needed to evaluate protocols on one dataset.
pub struct ProtocolContext<'a> {
    pub extracted: &'a [ExtractedVideo],
    pub front_end: &'a FrontEnd,
    pub clf_config: TrainConfig,
}

impl<'a> ProtocolContext<'a> {
    fn by_id(&self, id: &str) -> &ExtractedVideo {
        self.extracted
            .iter()
            .find(|v| v.id == id)
            .expect("video id from the same extraction set")
    }

    fn species_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .extracted
            .iter()
            .filter_map(|v| v.species.clone())
            .collect();
        names.sort();
        names.dedup();
        names
    }

    fn standardized_feature(&self, grid: &ndarray::Array3<f64>) -> Result<AnomalyFeature> {
        self.front_end.features.features_for_grid(grid)
    }

    /// Whole-video standardized feature vectors (the classifier input).
    fn whole_feature(&self, video: &ExtractedVideo) -> Result<Vec<f64>> {
        Ok(self.standardized_feature(&video.grid)?.values().to_vec())
    }

    /// Training views of one video: the whole video plus its augmented
    /// variants.
    fn training_features(&self, video: &ExtractedVideo) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![self.whole_feature(video)?];
        for aug in &video.augmented {
            out.push(self.standardized_feature(aug)?.values().to_vec());
        }
        Ok(out)
    }

    /// (p_ll, p_energy, attack probability) of the one-class model.
    fn one_class_score(&self, video: &ExtractedVideo) -> Result<(f64, f64, f64)> {
        let feature = self.standardized_feature(&video.grid)?;
        let (p_ll, p_energy) = self
            .front_end
            .oneclass
            .measure_likelihoods(&feature, video.aggregate_ll)?;
        let p = self
            .front_end
            .oneclass
            .score(&feature, video.aggregate_ll)?
            .value();
        Ok((p_ll, p_energy, p))
    }

    /// Train one classifier on the given training video ids (bona fide and
    /// attacks with augmentation) and score the given test ids.
    fn train_and_score(
        &self,
        train_attack_ids: &[String],
        test_ids: &[String],
        species_index: &BTreeMap<String, usize>,
        seed: u64,
        role_log_entries: &mut Vec<(String, Vec<String>)>,
        trial: &str,
    ) -> Result<(Vec<ScoredRecord>, String)> {
        // classifier training data: train+dev bona fide plus known attacks
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut consumed = Vec::new();
        for video in self.extracted.iter().filter(|v| {
            v.species.is_none() && (v.split == "train" || v.split == "dev")
        }) {
            for f in self.training_features(video)? {
                features.push(f);
                labels.push(BF_LABEL);
            }
            consumed.push(video.id.clone());
        }
        for id in train_attack_ids {
            let video = self.by_id(id);
            let species = video.species.as_ref().expect("attack video has a species");
            let label = species_index[species] + 1;
            for f in self.training_features(video)? {
                features.push(f);
                labels.push(label);
            }
            consumed.push(video.id.clone());
        }
        role_log_entries.push((format!("fit:classifier:{trial}"), consumed));

        let validation_bf: Vec<Vec<f64>> = self
            .extracted
            .iter()
            .filter(|v| v.species.is_none() && v.split == "dev")
            .map(|v| self.whole_feature(v))
            .collect::<Result<_>>()?;

        let config = TrainConfig {
            seed: rng::derive_seed(seed, trial),
            ..self.clf_config.clone()
        };
        let (net, reference, _) = classifier::train(&features, &labels, &validation_bf, &config)?;
        let fp = network_fingerprint(&net, &reference);

        let scored = test_ids
            .iter()
            .map(|id| {
                let video = self.by_id(id);
                let p_clf = classifier::score(&net, &reference, &self.whole_feature(video)?)?.value();
                let (p_ll, p_energy, p_oc) = self.one_class_score(video)?;
                let p_fused = fuse(p_clf, p_oc)?.p_fused;
                Ok(ScoredRecord {
                    video_id: video.id.clone(),
                    species: video.species.clone(),
                    trial: trial.to_string(),
                    p_ll,
                    p_energy,
                    p_oneclass: p_oc,
                    p_clf,
                    p_fused,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((scored, fp))
    }
}

fn species_metrics(
    bf: &[f64],
    attack: &[f64],
    species: &str,
) -> Result<SpeciesReport> {
    let (acer, bpcer) = acer_at_apcer(bf, attack, 0.05)?;
    Ok(SpeciesReport {
        species: species.to_string(),
        eer: eer(bf, attack)?,
        acer_at_apcer5: acer,
        bpcer_at_apcer5: bpcer,
        det: det_curve(bf, attack)?,
    })
}

fn assemble_detector_report(
    detector: DetectorKind,
    per_species: &BTreeMap<String, (Vec<f64>, Vec<f64>)>,
) -> Result<DetectorReport> {
    let mut species_reports = Vec::new();
    for (name, (bf, attack)) in per_species {
        species_reports.push(species_metrics(bf, attack, name)?);
    }
    let eers: Vec<f64> = species_reports.iter().map(|s| s.eer).collect();
    Ok(DetectorReport {
        detector: detector.id().to_string(),
        species: species_reports,
        mpa_eer: mpa_eer(&eers)?,
    })
}

type SpeciesScores = BTreeMap<String, (Vec<f64>, Vec<f64>)>;

fn push_scores(
    maps: &mut [&mut SpeciesScores; 3],
    items: &[ScoredRecord],
    only_species: Option<&str>,
) {
    for item in items {
        let values = [item.p_oneclass, item.p_clf, item.p_fused];
        match &item.species {
            None => {
                for (map, v) in maps.iter_mut().zip(values) {
                    if let Some(target) = only_species {
                        map.entry(target.to_string()).or_default().0.push(v);
                    } else {
                        for entry in map.values_mut() {
                            entry.0.push(v);
                        }
                    }
                }
            }
            Some(s) => {
                if only_species.map_or(true, |t| t == s) {
                    for (map, v) in maps.iter_mut().zip(values) {
                        map.entry(s.clone()).or_default().1.push(v);
                    }
                }
            }
        }
    }
}

/// Run one protocol: the full report (all three detectors) plus every test
/// item's scores under its trial's classifier.
pub fn run_protocol(
    ctx: &ProtocolContext<'_>,
    protocol: Protocol,
    seed: u64,
    role_log: &mut RoleLog,
) -> Result<(EvalReport, Vec<ScoredRecord>)> {
    let species = ctx.species_names();
    if species.is_empty() {
        return Err(Error::invalid("dataset has no attack species"));
    }
    let species_index: BTreeMap<String, usize> = species
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();
    let bf_test_ids: Vec<String> = ctx
        .extracted
        .iter()
        .filter(|v| v.species.is_none() && v.split == "test")
        .map(|v| v.id.clone())
        .collect();
    if bf_test_ids.is_empty() {
        return Err(Error::invalid("dataset has no test bona-fide videos"));
    }

    let mut oc_scores: SpeciesScores = BTreeMap::new();
    let mut clf_scores: SpeciesScores = BTreeMap::new();
    let mut fused_scores: SpeciesScores = BTreeMap::new();
    let mut fingerprints = BTreeMap::new();
    let mut role_entries: Vec<(String, Vec<String>)> = Vec::new();
    let mut all_records: Vec<ScoredRecord> = Vec::new();

    match protocol {
        Protocol::Known => {
            // per species: half the videos train, half test
            let mut train_ids = Vec::new();
            let mut test_ids = bf_test_ids.clone();
            for s in &species {
                let ids: Vec<String> = ctx
                    .extracted
                    .iter()
                    .filter(|v| v.species.as_deref() == Some(s.as_str()))
                    .map(|v| v.id.clone())
                    .collect();
                if ids.len() < 2 {
                    return Err(Error::invalid(format!(
                        "known protocol needs at least 2 videos of species '{s}'"
                    )));
                }
                let mut order_rng = rng::stream(seed, &format!("known-split-{s}"));
                let order = classifier::shuffled_indices(ids.len(), &mut order_rng);
                let half = ids.len() / 2;
                for (rank, &idx) in order.iter().enumerate() {
                    if rank < half {
                        train_ids.push(ids[idx].clone());
                    } else {
                        test_ids.push(ids[idx].clone());
                    }
                }
                oc_scores.insert(s.clone(), Default::default());
                clf_scores.insert(s.clone(), Default::default());
                fused_scores.insert(s.clone(), Default::default());
            }
            let (items, fp) = ctx.train_and_score(
                &train_ids,
                &test_ids,
                &species_index,
                seed,
                &mut role_entries,
                "known",
            )?;
            fingerprints.insert("classifier:known".to_string(), fp);
            push_scores(
                &mut [&mut oc_scores, &mut clf_scores, &mut fused_scores],
                &items,
                None,
            );
            all_records.extend(items);
        }
        Protocol::LeaveOneOut | Protocol::FewShot(_) => {
            if species.len() < 2 {
                return Err(Error::invalid(
                    "leave-one-out requires at least 2 attack species",
                ));
            }
            let k = match protocol {
                Protocol::FewShot(k) => k,
                _ => 0,
            };
            // one classifier per held-out species; trials run in parallel
            let trials: Vec<(String, Vec<ScoredRecord>, String, Vec<(String, Vec<String>)>)> =
                species
                    .par_iter()
                    .map(|held_out| {
                        let mut local_roles = Vec::new();
                        let mut train_ids: Vec<String> = ctx
                            .extracted
                            .iter()
                            .filter(|v| {
                                v.species
                                    .as_deref()
                                    .is_some_and(|s| s != held_out.as_str())
                            })
                            .map(|v| v.id.clone())
                            .collect();
                        let held_ids: Vec<String> = ctx
                            .extracted
                            .iter()
                            .filter(|v| v.species.as_deref() == Some(held_out.as_str()))
                            .map(|v| v.id.clone())
                            .collect();
                        let mut test_ids = bf_test_ids.clone();
                        if k > 0 {
                            if held_ids.len() <= k {
                                return Err(Error::invalid(format!(
                                    "few-shot({k}) needs more than {k} videos of species '{held_out}'"
                                )));
                            }
                            let mut shot_rng =
                                rng::stream(seed, &format!("fewshot-{k}-{held_out}"));
                            let order =
                                classifier::shuffled_indices(held_ids.len(), &mut shot_rng);
                            for (rank, &idx) in order.iter().enumerate() {
                                if rank < k {
                                    train_ids.push(held_ids[idx].clone());
                                } else {
                                    test_ids.push(held_ids[idx].clone());
                                }
                            }
                        } else {
                            test_ids.extend(held_ids.iter().cloned());
                        }
                        let trial = format!("{}-{held_out}", protocol.id());
                        let (items, fp) = ctx.train_and_score(
                            &train_ids,
                            &test_ids,
                            &species_index,
                            seed,
                            &mut local_roles,
                            &trial,
                        )?;
                        Ok((held_out.clone(), items, fp, local_roles))
                    })
                    .collect::<Result<Vec<_>>>()?;

            for (held_out, items, fp, local_roles) in trials {
                fingerprints.insert(format!("classifier:{}:{held_out}", protocol.id()), fp);
                role_entries.extend(local_roles);
                oc_scores.insert(held_out.clone(), Default::default());
                clf_scores.insert(held_out.clone(), Default::default());
                fused_scores.insert(held_out.clone(), Default::default());
                push_scores(
                    &mut [&mut oc_scores, &mut clf_scores, &mut fused_scores],
                    &items,
                    Some(&held_out),
                );
                all_records.extend(items);
            }
        }
    }

    for (fit, ids) in role_entries {
        role_log.record(&fit, ids.into_iter());
    }
    role_log.check_split_discipline(ctx.extracted)?;

    let detectors = vec![
        assemble_detector_report(DetectorKind::OneClass, &oc_scores)?,
        assemble_detector_report(DetectorKind::Discriminative, &clf_scores)?,
        assemble_detector_report(DetectorKind::Fused, &fused_scores)?,
    ];
    Ok((
        EvalReport {
            protocol: protocol.id(),
            seed,
            detectors,
            model_fingerprints: fingerprints,
        },
        all_records,
    ))
}
