//! Trains reduced networks, runs the full cascade on one test phantom and
//! writes the predictions (RVOL) and per-slice overlays (PPM).
//!
//!     cargo run --release --example cascade_pipeline -- /tmp/cascade_out

use std::path::PathBuf;

use cascade_seg::config::RunConfig;
use cascade_seg::eval::dice;
use cascade_seg::overlay::{write_overlays, OverlayInputs};
use cascade_seg::pipeline::{run_pipeline, Models};
use cascade_seg::rvol::write_mask;
use cascade_seg::volume::preprocess;
use cascade_seg::workflow::{generate_data, train_all};

fn main() -> cascade_seg::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cascade_out"));
    let sets: Vec<String> = [
        "data.seeds=[1,2,3,4,5,6,7,8,9,10]",
        "data.split=[0.7,0.1]",
        "liver.train.epochs=4",
        "lesion.train.epochs=8",
        "baseline.train.epochs=1",
        "detector.train.steps=150",
    ]
    .map(String::from)
    .to_vec();
    let cfg = RunConfig::default().with_overrides(&sets)?;
    let data = generate_data(&cfg)?;
    let trained = train_all(&cfg, &data.train)?;

    let case = &data.test[0];
    let models = Models {
        liver: &trained.liver,
        lesion: &trained.lesion,
        detector: Some(&trained.detector),
    };
    let res = run_pipeline(&case.image, &models, &cfg.crf, &cfg.pipeline)?;
    println!("{}: status {:?}, box {:?}", case.case_id, res.status, res.bbox);
    println!("liver Dice {:.4}, lesion Dice {:.4}", dice(&res.liver_mask, &case.liver)?, dice(&res.lesion_mask, &case.lesion)?);
    println!("detector kept {} windows", res.detections.as_ref().map_or(0, |d| d.count()));
    println!("{:?}", res.timings);

    write_mask(&res.liver_mask, &out.join(format!("{}_liverpred", case.case_id)))?;
    write_mask(&res.lesion_mask, &out.join(format!("{}_lesionpred", case.case_id)))?;
    let image = preprocess(&case.image)?;
    let inputs = OverlayInputs {
        image: &image,
        gt_liver: &case.liver,
        gt_lesion: &case.lesion,
        pred_liver: Some(&res.liver_mask),
        pred_lesion: Some(&res.lesion_mask),
        detections: res.detections.as_ref().zip(res.bbox),
    };
    let written = write_overlays(&inputs, &out.join("overlay"), &case.case_id)?;
    println!("{} overlays in {}", written.len(), out.join("overlay").display());
    Ok(())
}
