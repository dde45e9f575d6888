//! Trains a small liver segmenter on a handful of phantoms and scores it on
//! held-out ones.

use cascade_seg::eval::dice;
use cascade_seg::phantom::{generate_phantom, LabeledCase, PhantomParams};
use cascade_seg::pipeline::threshold_mask;
use cascade_seg::segnet::{train_segnet, ContextMode, SegNet, SegNetConfig, SegTrainConfig};
use cascade_seg::train::liver_samples;
use cascade_seg::volume::preprocess;

fn cases(seeds: std::ops::Range<u64>) -> cascade_seg::Result<Vec<LabeledCase>> {
    seeds
        .map(|seed| {
            let p = PhantomParams {
                seed,
                ..Default::default()
            };
            generate_phantom(&p, &format!("case_{seed:03}"))
        })
        .collect()
}

fn main() -> cascade_seg::Result<()> {
    let train = cases(1..6)?;
    let test = cases(100..103)?;
    let samples = liver_samples(&train, ContextMode::Stack3)?;

    let mut net = SegNet::new(
        SegNetConfig {
            stage_channels: vec![8, 16, 16, 32],
            ..Default::default()
        },
        1,
    )?;
    let cfg = SegTrainConfig {
        epochs: 3,
        ..Default::default()
    };
    for (epoch, loss) in train_segnet(&mut net, &samples, &cfg)?.iter().enumerate() {
        println!("epoch {epoch}: loss {loss:.4}");
    }

    for case in &test {
        let prob = net.predict_volume(&preprocess(&case.image)?, None, ContextMode::Stack3)?;
        let d = dice(&threshold_mask(&prob, 0.5)?, &case.liver)?;
        println!("{}: liver Dice {d:.4}", case.case_id);
    }
    Ok(())
}
