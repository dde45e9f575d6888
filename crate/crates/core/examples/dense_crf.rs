//! Cleans up a noisy lesion probability map with the dense CRF, and compares
//! mean-field inference with the exact MAP labeling on a tiny model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cascade_seg::crf::{build_crf, exhaustive_map, mean_field_infer, refine, CrfParams};
use cascade_seg::eval::dice;
use cascade_seg::pipeline::threshold_mask;
use cascade_seg::volume::{Mask, Volume};

fn main() -> cascade_seg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shape = [8, 24, 24];
    let [nz, ny, nx] = shape;
    let mut truth = vec![0u8; nz * ny * nx];
    let mut image = vec![0.7f32; nz * ny * nx];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let d2 = (z as f32 - 4.0).powi(2) + (y as f32 - 12.0).powi(2) + (x as f32 - 12.0).powi(2);
                if d2 < 25.0 {
                    truth[(z * ny + y) * nx + x] = 1;
                    image[(z * ny + y) * nx + x] = 0.3;
                }
            }
        }
    }
    // a blurred, noisy classifier output
    let prob: Vec<f32> = truth
        .iter()
        .map(|&t| (if t == 1 { 0.7 } else { 0.3 } + rng.random_range(-0.35..0.35f32)).clamp(0.0, 1.0))
        .collect();
    let noisy_img: Vec<f32> = image.iter().map(|v| v + rng.random_range(-0.05..0.05f32)).collect();
    let truth = Mask::new(shape, [1.0; 3], truth)?;
    let prob = Volume::new(shape, [1.0; 3], prob)?;
    let image = Volume::new(shape, [1.0; 3], noisy_img)?;

    let params = CrfParams {
        w_app: 1.0,
        w_smooth: 0.5,
        ..Default::default()
    };
    let refined = refine(&prob, &image, &params)?;
    println!("Dice before CRF {:.4}", dice(&threshold_mask(&prob, 0.5)?, &truth)?);
    println!("Dice after CRF  {:.4}", dice(&threshold_mask(&refined, 0.5)?, &truth)?);

    let tiny = [1, 3, 4];
    let p = Volume::new(tiny, [1.0; 3], (0..12).map(|_| rng.random_range(0.2..0.8)).collect())?;
    let i = Volume::new(tiny, [1.0; 3], (0..12).map(|_| rng.random()).collect())?;
    let model = build_crf(
        &p,
        &i,
        &CrfParams {
            w_smooth: 2.0,
            iterations: 50,
            ..Default::default()
        },
    )?;
    let mf = mean_field_infer(&model)?.labels();
    let (map, e) = exhaustive_map(&model)?;
    println!("mean field {mf:?} energy {:.4}", model.energy(&mf)?);
    println!("exact MAP  {map:?} energy {e:.4}");
    Ok(())
}
