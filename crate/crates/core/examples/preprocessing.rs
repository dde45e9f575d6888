//! Windowing, normalization, 3-slice context stacking and the liver box crop
//! on one phantom.

use cascade_seg::phantom::{generate_phantom, PhantomParams};
use cascade_seg::pipeline::{crop_volume, liver_bbox_3d, pad_to_multiple};
use cascade_seg::volume::{context_indices, preprocess, stack_context_slices, HU_WINDOW_HI, HU_WINDOW_LO};

fn main() -> cascade_seg::Result<()> {
    let case = generate_phantom(&PhantomParams::default(), "demo")?;
    let (lo, hi) = case.image.min_max();
    println!("raw range        [{lo:.1}, {hi:.1}] HU");

    let img = preprocess(&case.image)?;
    let (lo, hi) = img.min_max();
    println!("window           [{HU_WINDOW_LO}, {HU_WINDOW_HI}] HU -> [{lo}, {hi}]");

    // first and last slices repeat themselves as neighbours
    for z in [0, img.nz() / 2, img.nz() - 1] {
        let slab = stack_context_slices(&img, z)?;
        println!("slice {z:>2} context  {:?}, {} values", context_indices(img.nz(), z), slab.data.len());
    }

    let b = liver_bbox_3d(&case.liver, 4)?;
    let crop = crop_volume(&img, &b)?;
    let padded = pad_to_multiple(&crop, 8)?;
    println!("liver box        {b:?}");
    println!("crop {:?} padded to {:?}", crop.shape(), padded.shape());
    Ok(())
}
