//! Finite-difference gradient checks of both networks, in double precision
//! and for the single-precision training path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cascade_seg::detector::{DetectorConfig, DetectorNet};
use cascade_seg::nn::gradcheck::GradCheckConfig;
use cascade_seg::nn::Tensor4;
use cascade_seg::segnet::{SegNet, SegNetConfig};

fn main() -> cascade_seg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SegNetConfig {
        stage_channels: vec![4, 6, 8],
        convs_per_stage: 1,
        side_output_channels: 2,
        ..Default::default()
    };
    let x = Tensor4::from_vec(1, 3, 8, 8, (0..192).map(|_| rng.random::<f32>()).collect())?;
    let target: Vec<u8> = (0..192).map(|_| rng.random_bool(0.3) as u8).collect();
    let mask: Vec<u8> = (0..192).map(|_| rng.random_bool(0.8) as u8).collect();

    let net = SegNet::<f64>::new(cfg.clone(), 1)?;
    let r = net.grad_check(&x.cast(), &target, Some(&mask), 0.3, &GradCheckConfig::f64_default())?;
    println!("segnet   f64: max rel err {:.2e} over {} coords (skipped {})", r.max_rel_error, r.checked, r.skipped);
    let r = net.cast::<f32>().grad_check_f32(&x, &target, Some(&mask), 0.3, &GradCheckConfig::f32_default())?;
    println!("segnet   f32: max rel err {:.2e} over {} coords", r.max_rel_error, r.checked);

    let det = DetectorNet::<f32>::new(
        DetectorConfig {
            stage_channels: vec![3, 4, 4],
            ..Default::default()
        },
        2,
    )?;
    let patches = Tensor4::from_vec(2, 1, 16, 16, (0..512).map(|_| rng.random::<f32>()).collect())?;
    let r = det.grad_check_f32(&patches, &[1, 0], &GradCheckConfig::f32_default())?;
    println!("detector f32: max rel err {:.2e} over {} coords", r.max_rel_error, r.checked);
    Ok(())
}
