//! `cascade-seg` command line. Every subcommand reads a JSON run config,
//! applies `--set` overrides and writes the resolved config next to its
//! outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::crf::refine_masked;
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate_cases, Prediction};
use crate::overlay::{write_overlays, OverlayInputs};
use crate::phantom::{read_dataset, write_dataset, Dataset, LabeledCase};
use crate::pipeline::{crop_mask, crop_volume, liver_bbox_3d, run_pipeline, threshold_mask, uncrop_volume, Bbox3, Models, PipelineStatus, StageTimings};
use crate::rvol;
use crate::volume::preprocess;
use crate::workflow::{self, Trained};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "CASCADE_SEG_THREADS";
/// Name of the resolved config written into every output directory.
pub const RESOLVED_CONFIG: &str = "run_config.json";

#[derive(Parser, Debug)]
#[command(name = "cascade-seg", version, about = "Cascaded liver and lesion segmentation on CT phantoms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override a config value, e.g. `pipeline.liver_threshold=0.4`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Worker threads (falls back to CASCADE_SEG_THREADS)
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct DataArg {
    /// Dataset directory written by `gen-data`
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the phantom dataset
    GenData(Common),
    /// Train the liver network
    TrainLiver {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Train the cascade lesion network and the baseline lesion network
    TrainLesion {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Train the patch detector
    TrainDetector {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Run the pipeline on the test split
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Directory holding liver/, lesion/ and detector/ checkpoints
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// CRF-refine the lesion probabilities of a prediction directory
    RefineCrf {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Score a prediction directory against the test split
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Four-row ablation; generates data and trains when not supplied
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Per-slice PPM overlays of one case
    Overlay {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        case: String,
    },
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Param(_) | Error::Range(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Format { .. } | Error::Json { .. } => EXIT_IO,
        _ => EXIT_FAILURE,
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::GenData(c) => c,
        Command::TrainLiver { common, .. }
        | Command::TrainLesion { common, .. }
        | Command::TrainDetector { common, .. }
        | Command::Predict { common, .. }
        | Command::RefineCrf { common, .. }
        | Command::Evaluate { common, .. }
        | Command::Ablate { common, .. }
        | Command::Overlay { common, .. } => common,
    }
}

/// `--threads`, else `CASCADE_SEG_THREADS`, else rayon's default.
pub fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a count")))?),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(Error::Config("thread count must be positive".into()));
    }
    Ok(n)
}

fn execute(cmd: Command) -> Result<()> {
    let c = common(&cmd).clone();
    if !c.config.exists() {
        return Err(Error::Config(format!("config file {} not found", c.config.display())));
    }
    let cfg = RunConfig::load(&c.config)?.with_overrides(&c.sets)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(c.threads)? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cmd, &cfg, c.out.as_deref()))
}

fn out_dir(out: Option<&Path>, default: &str) -> Result<PathBuf> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn need_dir(dir: &Path, what: &str) -> Result<()> {
    if dir.join("manifest.json").exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("no trained {what} checkpoint at {}", dir.display())))
    }
}

#[derive(Serialize)]
struct CaseSidecar<'a> {
    case_id: &'a str,
    status: PipelineStatus,
    bbox: Option<Bbox3>,
    timings: StageTimings,
    config: &'a RunConfig,
}

fn dispatch(cmd: Command, cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    match cmd {
        Command::GenData(_) => {
            let dir = out_dir(out, "data")?;
            let ds = workflow::generate_data(cfg)?;
            write_dataset(&ds, &dir)?;
            cfg.save(&dir.join(RESOLVED_CONFIG))?;
            println!("{} train, {} val, {} test cases in {}", ds.train.len(), ds.val.len(), ds.test.len(), dir.display());
        }
        Command::TrainLiver { data, .. } => {
            let dir = out_dir(out, "checkpoints")?;
            let ds = read_dataset(&data.data)?;
            let (net, log) = workflow::train_liver(cfg, &ds.train)?;
            workflow::save_segnet(&net, &dir.join(workflow::LIVER_DIR))?;
            write_json(&log, &dir.join("liver_log.json"))?;
            cfg.save(&dir.join(RESOLVED_CONFIG))?;
        }
        Command::TrainLesion { data, .. } => {
            let dir = out_dir(out, "checkpoints")?;
            let ds = read_dataset(&data.data)?;
            let (net, log) = workflow::train_lesion(cfg, &ds.train)?;
            workflow::save_segnet(&net, &dir.join(workflow::LESION_DIR))?;
            write_json(&log, &dir.join("lesion_log.json"))?;
            let (net, log) = workflow::train_baseline(cfg, &ds.train)?;
            workflow::save_segnet(&net, &dir.join(workflow::BASELINE_DIR))?;
            write_json(&log, &dir.join("baseline_log.json"))?;
            cfg.save(&dir.join(RESOLVED_CONFIG))?;
        }
        Command::TrainDetector { data, .. } => {
            let dir = out_dir(out, "checkpoints")?;
            let ds = read_dataset(&data.data)?;
            let (net, log) = workflow::train_detector_net(cfg, &ds.train)?;
            workflow::save_detector(&net, &dir.join(workflow::DETECTOR_DIR))?;
            write_json(&log, &dir.join("detector_log.json"))?;
            cfg.save(&dir.join(RESOLVED_CONFIG))?;
        }
        Command::Predict { data, checkpoints, .. } => {
            let ck = checkpoints.ok_or_else(|| Error::Config("predict needs --checkpoints".into()))?;
            need_dir(&ck.join(workflow::LIVER_DIR), "liver")?;
            need_dir(&ck.join(workflow::LESION_DIR), "lesion")?;
            let detector = if cfg.pipeline.stages.detector {
                need_dir(&ck.join(workflow::DETECTOR_DIR), "detector")?;
                Some(workflow::load_detector(&ck.join(workflow::DETECTOR_DIR))?)
            } else {
                None
            };
            let liver = workflow::load_segnet(&ck.join(workflow::LIVER_DIR))?;
            let lesion = workflow::load_segnet(&ck.join(workflow::LESION_DIR))?;
            let models = Models {
                liver: &liver,
                lesion: &lesion,
                detector: detector.as_ref(),
            };
            let dir = out_dir(out, "predictions")?;
            let ds = read_dataset(&data.data)?;
            for case in &ds.test {
                let o = run_pipeline(&case.image, &models, &cfg.crf, &cfg.pipeline)?;
                let id = &case.case_id;
                rvol::write_mask(&o.liver_mask, &dir.join(format!("{id}_liverpred")))?;
                rvol::write_volume(&o.lesion_prob, &dir.join(format!("{id}_lesionprob")))?;
                rvol::write_mask(&o.lesion_mask, &dir.join(format!("{id}_lesionpred")))?;
                if let Some(d) = &o.detections {
                    write_json(&d.slices(), &dir.join(format!("{id}_detections.json")))?;
                }
                let side = CaseSidecar {
                    case_id: id,
                    status: o.status,
                    bbox: o.bbox,
                    timings: o.timings,
                    config: cfg,
                };
                write_json(&side, &dir.join(format!("{id}.json")))?;
            }
            cfg.save(&dir.join(RESOLVED_CONFIG))?;
            println!("predicted {} cases into {}", ds.test.len(), dir.display());
        }
        Command::RefineCrf { data, pred, .. } => {
            let dir = out_dir(out, "refined")?;
            let ds = read_dataset(&data.data)?;
            for case in &ds.test {
                let id = &case.case_id;
                let prob = rvol::read_volume(&pred.join(format!("{id}_lesionprob")))?;
                let liver = rvol::read_mask(&pred.join(format!("{id}_liverpred")))?;
                let refined = match liver_bbox_3d(&liver, cfg.pipeline.bbox_margin) {
                    Ok(b) => {
                        let img = crop_volume(&preprocess(&case.image)?, &b)?;
                        let sup = crop_mask(&liver, &b)?;
                        let q = refine_masked(&crop_volume(&prob, &b)?, &img, Some(&sup), &cfg.crf)?;
                        uncrop_volume(&q, &b, prob.shape(), 0.0)?
                    }
                    Err(Error::EmptyMask) => prob.clone(),
                    Err(e) => return Err(e),
                };
                let lesion = threshold_mask(&refined, cfg.pipeline.lesion_threshold)?.and(&liver)?;
                rvol::write_mask(&liver, &dir.join(format!("{id}_liverpred")))?;
                rvol::write_volume(&refined, &dir.join(format!("{id}_lesionprob")))?;
                rvol::write_mask(&lesion, &dir.join(format!("{id}_lesionpred")))?;
            }
            cfg.save(&dir.join(RESOLVED_CONFIG))?;
        }
        Command::Evaluate { data, pred, .. } => {
            let dir = out_dir(out, "evaluation")?;
            let ds = read_dataset(&data.data)?;
            let preds = read_predictions(&ds.test, &pred)?;
            let scores = evaluate_cases(&ds.test, &preds)?;
            let summary = aggregate(&scores);
            write_json(&scores, &dir.join("scores.json"))?;
            write_json(&summary, &dir.join("summary.json"))?;
            cfg.save(&dir.join(RESOLVED_CONFIG))?;
            println!(
                "liver dice {:.4}  lesion dice {:.4} (global {:.4})  lesion precision {:.4}",
                summary.mean_dice_liver, summary.mean_dice_lesion, summary.global_dice_lesion, summary.lesion_precision
            );
        }
        Command::Ablate { data, checkpoints, .. } => {
            let dir = out_dir(out, "ablation")?;
            let ds = match data {
                Some(d) => read_dataset(&d)?,
                None => workflow::generate_data(cfg)?,
            };
            let models = match checkpoints {
                Some(ck) => {
                    for sub in [workflow::LIVER_DIR, workflow::LESION_DIR, workflow::BASELINE_DIR, workflow::DETECTOR_DIR] {
                        need_dir(&ck.join(sub), sub)?;
                    }
                    Trained::load(&ck)?
                }
                None => {
                    let t = workflow::train_all(cfg, &ds.train)?;
                    t.save(&dir.join("checkpoints"))?;
                    t
                }
            };
            let ab = workflow::ablation_run(cfg, &models, &ds.test)?;
            workflow::write_report(&ab.report, &dir)?;
            cfg.save(&dir.join(RESOLVED_CONFIG))?;
            print!("{}", ab.report.to_table());
        }
        Command::Overlay { data, pred, case, .. } => {
            let dir = out_dir(out, "overlay")?;
            let ds = read_dataset(&data.data)?;
            let c = find_case(&ds, &case)?;
            let loaded = match &pred {
                Some(p) if !rvol::rvol_paths(&p.join(format!("{case}_liverpred"))).0.exists() => {
                    return Err(Error::MissingPrediction(case));
                }
                Some(p) => Some((
                    rvol::read_mask(&p.join(format!("{case}_liverpred")))?,
                    rvol::read_mask(&p.join(format!("{case}_lesionpred")))?,
                )),
                None => None,
            };
            let detections = match &pred {
                Some(p) => read_detections(p, &case, loaded.as_ref().map(|l| &l.0), cfg.pipeline.bbox_margin)?,
                None => None,
            };
            let inputs = OverlayInputs {
                image: &c.image,
                gt_liver: &c.liver,
                gt_lesion: &c.lesion,
                pred_liver: loaded.as_ref().map(|l| &l.0),
                pred_lesion: loaded.as_ref().map(|l| &l.1),
                detections: detections.as_ref().map(|(d, b)| (d, *b)),
            };
            let files = write_overlays(&inputs, &dir, &case)?;
            println!("wrote {} overlays to {}", files.len(), dir.display());
        }
    }
    Ok(())
}

fn find_case<'a>(ds: &'a Dataset, id: &str) -> Result<&'a LabeledCase> {
    ds.all()
        .find(|c| c.case_id == id)
        .ok_or_else(|| Error::Config(format!("case {id:?} is not in the dataset")))
}

fn read_predictions(cases: &[LabeledCase], dir: &Path) -> Result<BTreeMap<String, Prediction>> {
    let mut out = BTreeMap::new();
    for c in cases {
        let id = &c.case_id;
        let liver = dir.join(format!("{id}_liverpred"));
        if !rvol::rvol_paths(&liver).0.exists() {
            return Err(Error::MissingPrediction(id.clone()));
        }
        out.insert(
            id.clone(),
            Prediction {
                liver: rvol::read_mask(&liver)?,
                lesion: rvol::read_mask(&dir.join(format!("{id}_lesionpred")))?,
            },
        );
    }
    Ok(out)
}

fn read_detections(
    dir: &Path,
    id: &str,
    liver: Option<&crate::volume::Mask>,
    margin: usize,
) -> Result<Option<(crate::detector::DetectionMask, Bbox3)>> {
    let path = dir.join(format!("{id}_detections.json"));
    let (Some(liver), true) = (liver, path.exists()) else {
        return Ok(None);
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let slices: Vec<crate::detector::SliceDetections> = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    let b = liver_bbox_3d(liver, margin)?;
    Ok(Some((crate::detector::DetectionMask::from_slices(b.shape(), &slices), b)))
}
