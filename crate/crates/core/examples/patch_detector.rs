//! Lays the 50x50 window grid over ground-truth crops, trains the patch
//! classifier and reports its accuracy on held-out windows.

use cascade_seg::detector::{train_detector, DetectorConfig, DetectorNet, DetectorTrainConfig, PATCH};
use cascade_seg::phantom::{generate_phantom, PhantomParams};
use cascade_seg::train::detector_patches;

fn main() -> cascade_seg::Result<()> {
    let make = |seeds: std::ops::Range<u64>| -> cascade_seg::Result<Vec<_>> {
        seeds.map(|seed| generate_phantom(&PhantomParams { seed, ..Default::default() }, &format!("case_{seed:03}"))).collect()
    };
    let train = detector_patches(&make(1..13)?, 4)?;
    let test = detector_patches(&make(200..206)?, 4)?;
    println!("train windows: {} positive, {} negative", train.positives.len(), train.negatives.len());

    let mut net = DetectorNet::new(DetectorConfig::default(), 3)?;
    let cfg = DetectorTrainConfig {
        steps: 200,
        ..Default::default()
    };
    let losses = train_detector(&mut net, &train, &cfg)?;
    println!("loss {:.3} -> {:.3}", losses[0], losses[losses.len() - 1]);

    let acc = |patches: &[Vec<f32>], want: bool| -> cascade_seg::Result<f64> {
        let hits = patches
            .iter()
            .map(|p| Ok((net.probability(p, PATCH)? >= 0.5) == want))
            .collect::<cascade_seg::Result<Vec<bool>>>()?;
        Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len().max(1) as f64)
    };
    println!("held-out accuracy: positives {:.3}, negatives {:.3}", acc(&test.positives, true)?, acc(&test.negatives, false)?);
    Ok(())
}
