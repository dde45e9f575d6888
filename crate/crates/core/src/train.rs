//! Training-set assembly for the three networks from labeled cases.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::PatchSet;
use crate::error::Result;
use crate::phantom::LabeledCase;
use crate::pipeline::{crop_mask, crop_volume, liver_bbox_3d, pad_mask_to_multiple, pad_to_multiple};
use crate::segnet::{compute_class_weights, mask_planes, slab_tensor, volume_class_weight, ContextMode, Target, TrainSample};
use crate::volume::{preprocess, Mask, Volume};

/// How the lesion network's loss is balanced and supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LesionScheme {
    /// One weight for the training set (liver voxels of lesion slices) and
    /// loss restricted to the ground-truth liver.
    LiverMasked,
    /// A weight per volume and loss over the whole crop.
    PerVolume,
}

/// Preprocessed image, liver and lesion cropped to the ground-truth liver box.
pub struct CaseCrop {
    pub image: Volume,
    pub liver: Mask,
    pub lesion: Mask,
}

pub fn crop_case(case: &LabeledCase, margin: usize) -> Result<CaseCrop> {
    let b = liver_bbox_3d(&case.liver, margin)?;
    Ok(CaseCrop {
        image: crop_volume(&preprocess(&case.image)?, &b)?,
        liver: crop_mask(&case.liver, &b)?,
        lesion: crop_mask(&case.lesion, &b)?,
    })
}

fn slab_samples(image: &Volume, target: &Mask, support: Option<&Mask>, w: f64, mode: ContextMode) -> Result<Vec<TrainSample>> {
    let mut out = Vec::with_capacity(image.nz());
    for z in 0..image.nz() {
        let idx = mode.indices(image.nz(), z);
        let mask = support.map(|s| mask_planes(s, idx));
        if mask.as_ref().is_some_and(|m| !m.contains(&1)) {
            continue;
        }
        out.push(TrainSample {
            input: slab_tensor(&mode.slab(image, z)?),
            target: mask_planes(target, idx),
            mask,
            w,
        });
    }
    Ok(out)
}

/// Every slice of every case, full field of view, dataset-level weight.
pub fn liver_samples(cases: &[LabeledCase], mode: ContextMode) -> Result<Vec<TrainSample>> {
    let w = compute_class_weights(cases, Target::Liver, false)?.w;
    let per_case = cases
        .par_iter()
        .map(|c| slab_samples(&preprocess(&c.image)?, &c.liver, None, w, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_case.into_iter().flatten().collect())
}

/// Slices of the liver-box crops, padded to `divisor`.
pub fn lesion_samples(cases: &[LabeledCase], margin: usize, divisor: usize, mode: ContextMode, scheme: LesionScheme) -> Result<Vec<TrainSample>> {
    let shared = match scheme {
        LesionScheme::LiverMasked => Some(compute_class_weights(cases, Target::Lesion, true)?.w),
        LesionScheme::PerVolume => None,
    };
    let per_case = cases
        .par_iter()
        .map(|c| {
            let crop = crop_case(c, margin)?;
            let image = pad_to_multiple(&crop.image, divisor)?;
            let lesion = pad_mask_to_multiple(&crop.lesion, divisor)?;
            match shared {
                Some(w) => {
                    let liver = pad_mask_to_multiple(&crop.liver, divisor)?;
                    slab_samples(&image, &lesion, Some(&liver), w, mode)
                }
                None => slab_samples(&image, &lesion, None, volume_class_weight(&crop.lesion).w, mode),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_case.into_iter().flatten().collect())
}

/// Detector windows from the ground-truth liver crops.
pub fn detector_patches(cases: &[LabeledCase], margin: usize) -> Result<PatchSet> {
    let mut set = PatchSet::default();
    for c in cases {
        let crop = crop_case(c, margin)?;
        set.add_case(&crop.image, &crop.liver, &crop.lesion)?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomParams};

    fn case(seed: u64) -> LabeledCase {
        let p = PhantomParams {
            shape: [6, 32, 32],
            lesion_radius_range: (2.0, 3.0),
            seed,
            ..Default::default()
        };
        generate_phantom(&p, "c").unwrap()
    }

    #[test]
    fn sample_shapes() {
        let cases = [case(1), case(2)];
        let liver = liver_samples(&cases, ContextMode::Stack3).unwrap();
        assert_eq!(liver.len(), 12);
        assert!(liver.iter().all(|s| s.mask.is_none() && s.input.h == 32));
        let les = lesion_samples(&cases, 2, 8, ContextMode::Stack3, LesionScheme::LiverMasked).unwrap();
        assert!(!les.is_empty());
        for s in &les {
            assert_eq!(s.input.h % 8, 0);
            assert_eq!(s.input.w % 8, 0);
            let m = s.mask.as_ref().unwrap();
            assert!(m.contains(&1));
            assert_eq!(m.len(), s.target.len());
        }
        let w0 = les[0].w;
        assert!(les.iter().all(|s| s.w == w0));
        let base = lesion_samples(&cases, 2, 8, ContextMode::Single, LesionScheme::PerVolume).unwrap();
        assert!(base.iter().all(|s| s.mask.is_none()));
    }
}
