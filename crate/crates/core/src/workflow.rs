//! End-to-end workflows: data generation, training of all networks, and the
//! four-row ablation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, SegSpec};
use crate::detector::{train_detector, DetectorConfig, DetectorNet};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate_cases, AblationReport, AblationRow, Prediction, ABLATION_ROWS};
use crate::nn::checkpoint::{load_into, read_manifest, save_checkpoint};
use crate::phantom::{generate_dataset, Dataset, LabeledCase, PhantomParams};
use crate::pipeline::{finish_stages, segment_stages, Models, PipelineConfig, StageFlags, StageTimings};
use crate::segnet::{train_segnet, ContextMode, SegNet, SegNetConfig};
use crate::train::{detector_patches, lesion_samples, liver_samples, LesionScheme};
use crate::volume::Mask;

pub fn generate_data(cfg: &RunConfig) -> Result<Dataset> {
    let params: Vec<PhantomParams> = cfg
        .data
        .seeds
        .iter()
        .map(|&seed| PhantomParams {
            seed,
            ..cfg.data.phantom.clone()
        })
        .collect();
    generate_dataset(&params, cfg.data.split, cfg.data.split_seed)
}

/// Losses recorded while training.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<f64>,
}

fn train_seg(spec: &SegSpec, samples: &[crate::segnet::TrainSample]) -> Result<(SegNet<f32>, TrainLog)> {
    let mut net = SegNet::new(spec.net.clone(), spec.init_seed)?;
    let epochs = train_segnet(&mut net, samples, &spec.train)?;
    Ok((net, TrainLog { epochs }))
}

pub fn train_liver(cfg: &RunConfig, cases: &[LabeledCase]) -> Result<(SegNet<f32>, TrainLog)> {
    train_seg(&cfg.liver, &liver_samples(cases, cfg.pipeline.liver_context)?)
}

/// Cascade lesion net: liver-masked loss and the pipeline's context mode.
pub fn train_lesion(cfg: &RunConfig, cases: &[LabeledCase]) -> Result<(SegNet<f32>, TrainLog)> {
    let k = cfg.lesion.net.divisor();
    let s = lesion_samples(cases, cfg.pipeline.bbox_margin, k, cfg.pipeline.lesion_context, LesionScheme::LiverMasked)?;
    train_seg(&cfg.lesion, &s)
}

/// Baseline lesion net: single-slice input, per-volume weights, no mask.
pub fn train_baseline(cfg: &RunConfig, cases: &[LabeledCase]) -> Result<(SegNet<f32>, TrainLog)> {
    let k = cfg.baseline.net.divisor();
    let s = lesion_samples(cases, cfg.pipeline.bbox_margin, k, ContextMode::Single, LesionScheme::PerVolume)?;
    train_seg(&cfg.baseline, &s)
}

pub fn train_detector_net(cfg: &RunConfig, cases: &[LabeledCase]) -> Result<(DetectorNet<f32>, TrainLog)> {
    let set = detector_patches(cases, cfg.pipeline.bbox_margin)?;
    log::info!("detector patches: {} positive, {} negative", set.positives.len(), set.negatives.len());
    let mut net = DetectorNet::new(cfg.detector.net.clone(), cfg.detector.init_seed)?;
    let epochs = train_detector(&mut net, &set, &cfg.detector.train)?;
    Ok((net, TrainLog { epochs }))
}

/// Every checkpoint the ablation needs.
pub struct Trained {
    pub liver: SegNet<f32>,
    pub lesion: SegNet<f32>,
    pub baseline: SegNet<f32>,
    pub detector: DetectorNet<f32>,
}

pub const LIVER_DIR: &str = "liver";
pub const LESION_DIR: &str = "lesion";
pub const BASELINE_DIR: &str = "baseline";
pub const DETECTOR_DIR: &str = "detector";

pub fn train_all(cfg: &RunConfig, cases: &[LabeledCase]) -> Result<Trained> {
    let (liver, _) = train_liver(cfg, cases)?;
    let (lesion, _) = train_lesion(cfg, cases)?;
    let (baseline, _) = train_baseline(cfg, cases)?;
    let (detector, _) = train_detector_net(cfg, cases)?;
    Ok(Trained {
        liver,
        lesion,
        baseline,
        detector,
    })
}

pub fn save_segnet(net: &SegNet<f32>, dir: &Path) -> Result<()> {
    let hyper = serde_json::to_value(net.config()).expect("config serializes");
    save_checkpoint(net, "segnet", hyper, dir)
}

pub fn load_segnet(dir: &Path) -> Result<SegNet<f32>> {
    let m = read_manifest(dir)?;
    let cfg: SegNetConfig = serde_json::from_value(m.hyper).map_err(|e| Error::json(dir.join("manifest.json"), e))?;
    let mut net = SegNet::new(cfg, 0)?;
    load_into(&mut net, dir, "segnet")?;
    Ok(net)
}

pub fn save_detector(net: &DetectorNet<f32>, dir: &Path) -> Result<()> {
    let hyper = serde_json::to_value(net.config()).expect("config serializes");
    save_checkpoint(net, "detector", hyper, dir)
}

pub fn load_detector(dir: &Path) -> Result<DetectorNet<f32>> {
    let m = read_manifest(dir)?;
    let cfg: DetectorConfig = serde_json::from_value(m.hyper).map_err(|e| Error::json(dir.join("manifest.json"), e))?;
    let mut net = DetectorNet::new(cfg, 0)?;
    load_into(&mut net, dir, "detector")?;
    Ok(net)
}

impl Trained {
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_segnet(&self.liver, &dir.join(LIVER_DIR))?;
        save_segnet(&self.lesion, &dir.join(LESION_DIR))?;
        save_segnet(&self.baseline, &dir.join(BASELINE_DIR))?;
        save_detector(&self.detector, &dir.join(DETECTOR_DIR))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            liver: load_segnet(&dir.join(LIVER_DIR))?,
            lesion: load_segnet(&dir.join(LESION_DIR))?,
            baseline: load_segnet(&dir.join(BASELINE_DIR))?,
            detector: load_detector(&dir.join(DETECTOR_DIR))?,
        })
    }
}

/// Ablation output: the report plus the masks of every row, keyed by case id.
pub struct Ablation {
    pub report: AblationReport,
    pub predictions: Vec<BTreeMap<String, Prediction>>,
}

/// Scores the four ablation rows on `cases`. Rows 2 to 4 share one cascade
/// lesion map per case and only toggle the detector and CRF stages.
pub fn ablation_run(cfg: &RunConfig, models: &Trained, cases: &[LabeledCase]) -> Result<Ablation> {
    let base_cfg = PipelineConfig {
        lesion_context: ContextMode::Single,
        stages: StageFlags {
            detector: false,
            crf: false,
        },
        ..cfg.pipeline.clone()
    };
    let toggles = [(false, false), (true, false), (true, true)];
    let per_case: Vec<Vec<Prediction>> = cases
        .par_iter()
        .map(|case| {
            let mut t = StageTimings::default();
            let shape = case.image.shape();
            let mut rows = Vec::with_capacity(4);
            let baseline = Models {
                liver: &models.liver,
                lesion: &models.baseline,
                detector: None,
            };
            let (_, liver, crop) = segment_stages(&case.image, &baseline, &base_cfg, &mut t)?;
            let empty = || Mask::zeros(shape, case.image.spacing());
            rows.push(Prediction {
                lesion: match &crop {
                    Some(c) => finish_stages(shape, c, None, &cfg.crf, &base_cfg, &mut t)?.1,
                    None => empty()?,
                },
                liver: liver.clone(),
            });
            let cascade = Models {
                liver: &models.liver,
                lesion: &models.lesion,
                detector: Some(&models.detector),
            };
            let (_, liver, crop) = segment_stages(&case.image, &cascade, &cfg.pipeline, &mut t)?;
            for (detector, crf) in toggles {
                let row_cfg = PipelineConfig {
                    stages: StageFlags { detector, crf },
                    ..cfg.pipeline.clone()
                };
                let lesion = match &crop {
                    Some(c) => finish_stages(shape, c, Some(&models.detector), &cfg.crf, &row_cfg, &mut t)?.1,
                    None => empty()?,
                };
                rows.push(Prediction {
                    liver: liver.clone(),
                    lesion,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let mut report = AblationReport::default();
    let mut predictions = Vec::with_capacity(4);
    for (r, name) in ABLATION_ROWS.iter().enumerate() {
        let preds: BTreeMap<String, Prediction> = cases
            .iter()
            .zip(&per_case)
            .map(|(c, rows)| (c.case_id.clone(), rows[r].clone()))
            .collect();
        let scores = evaluate_cases(cases, &preds)?;
        report.rows.push(AblationRow {
            config: name.to_string(),
            summary: aggregate(&scores),
            cases: scores,
        });
        predictions.push(preds);
    }
    Ok(Ablation { report, predictions })
}

/// Writes `ablation.csv`, `ablation.txt` and `ablation.json` into `dir`.
pub fn write_report(report: &AblationReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("ablation.csv", report.to_csv())?;
    write("ablation.txt", report.to_table())?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::json(dir.join("ablation.json"), e))?;
    write("ablation.json", json)
}
