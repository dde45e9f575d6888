//! Cascade: liver segmentation, 3D liver box, cropped lesion segmentation,
//! detection masking, CRF refinement, then back to full size.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::crf::{refine_masked, CrfParams};
use crate::detector::{detect, mask_segmentation, DetectionMask, DetectorNet};
use crate::error::{Error, Result};
use crate::segnet::{ContextMode, SegNet};
use crate::volume::{preprocess, Mask, Shape3, Volume};

/// Half-open voxel bounds `[z0, z1) x [y0, y1) x [x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bbox3 {
    pub z0: usize,
    pub z1: usize,
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Bbox3 {
    pub fn full(shape: Shape3) -> Self {
        Self {
            z0: 0,
            z1: shape[0],
            y0: 0,
            y1: shape[1],
            x0: 0,
            x1: shape[2],
        }
    }

    pub fn shape(&self) -> Shape3 {
        [self.z1 - self.z0, self.y1 - self.y0, self.x1 - self.x0]
    }

    pub fn check(&self, shape: Shape3) -> Result<()> {
        let ok = [(self.z0, self.z1), (self.y0, self.y1), (self.x0, self.x1)]
            .iter()
            .zip(shape)
            .all(|(&(lo, hi), d)| lo < hi && hi <= d);
        if ok {
            Ok(())
        } else {
            Err(Error::Bounds(format!("{self:?} does not fit in {shape:?}")))
        }
    }
}

/// Optional lesion stages, toggled per ablation row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFlags {
    pub detector: bool,
    pub crf: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub liver_threshold: f32,
    pub bbox_margin: usize,
    pub lesion_threshold: f32,
    pub detector_threshold: f32,
    pub stages: StageFlags,
    pub liver_context: ContextMode,
    pub lesion_context: ContextMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            liver_threshold: 0.5,
            bbox_margin: 4,
            lesion_threshold: 0.5,
            detector_threshold: 0.5,
            stages: StageFlags {
                detector: true,
                crf: true,
            },
            liver_context: ContextMode::Stack3,
            lesion_context: ContextMode::Stack3,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("liver_threshold", self.liver_threshold),
            ("lesion_threshold", self.lesion_threshold),
            ("detector_threshold", self.detector_threshold),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Range(format!("{name} must lie in (0, 1), got {t}")));
            }
        }
        Ok(())
    }
}

/// `1` where `prob >= t`.
pub fn threshold_mask(prob: &Volume, t: f32) -> Result<Mask> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Range(format!("threshold must lie in (0, 1), got {t}")));
    }
    let data = prob.data().iter().map(|&p| (p >= t) as u8).collect();
    Mask::new(prob.shape(), prob.spacing(), data)
}

/// Tightest box around the mask, grown by `margin` and clamped to the volume.
pub fn liver_bbox_3d(liver: &Mask, margin: usize) -> Result<Bbox3> {
    let [nz, ny, nx] = liver.shape();
    let (mut lo, mut hi) = ([usize::MAX; 3], [0usize; 3]);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if liver.get(z, y, x) {
                    for (a, v) in [z, y, x].into_iter().enumerate() {
                        lo[a] = lo[a].min(v);
                        hi[a] = hi[a].max(v + 1);
                    }
                }
            }
        }
    }
    if lo[0] == usize::MAX {
        return Err(Error::EmptyMask);
    }
    let dims = liver.shape();
    let lo = lo.map(|v| v.saturating_sub(margin));
    let hi: [usize; 3] = std::array::from_fn(|a| (hi[a] + margin).min(dims[a]));
    Ok(Bbox3 {
        z0: lo[0],
        z1: hi[0],
        y0: lo[1],
        y1: hi[1],
        x0: lo[2],
        x1: hi[2],
    })
}

fn crop_raw<T: Copy>(data: &[T], shape: Shape3, b: &Bbox3) -> Vec<T> {
    let mut out = Vec::with_capacity(b.shape().iter().product());
    for z in b.z0..b.z1 {
        for y in b.y0..b.y1 {
            let row = (z * shape[1] + y) * shape[2];
            out.extend_from_slice(&data[row + b.x0..row + b.x1]);
        }
    }
    out
}

pub fn crop_volume(vol: &Volume, b: &Bbox3) -> Result<Volume> {
    b.check(vol.shape())?;
    Volume::new(b.shape(), vol.spacing(), crop_raw(vol.data(), vol.shape(), b))
}

pub fn crop_mask(mask: &Mask, b: &Bbox3) -> Result<Mask> {
    b.check(mask.shape())?;
    Mask::new(b.shape(), mask.spacing(), crop_raw(mask.data(), mask.shape(), b))
}

fn pad_raw<T: Copy>(data: &[T], shape: Shape3, ny: usize, nx: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(shape[0] * ny * nx);
    for z in 0..shape[0] {
        for y in 0..ny {
            let row = (z * shape[1] + y.min(shape[1] - 1)) * shape[2];
            for x in 0..nx {
                out.push(data[row + x.min(shape[2] - 1)]);
            }
        }
    }
    out
}

fn padded_dims(shape: Shape3, multiple: usize) -> (usize, usize) {
    (shape[1].div_ceil(multiple) * multiple, shape[2].div_ceil(multiple) * multiple)
}

/// Grows y and x to the next multiple by replicating the last row and column.
pub fn pad_to_multiple(vol: &Volume, multiple: usize) -> Result<Volume> {
    let (ny, nx) = padded_dims(vol.shape(), multiple.max(1));
    Volume::new([vol.nz(), ny, nx], vol.spacing(), pad_raw(vol.data(), vol.shape(), ny, nx))
}

pub fn pad_mask_to_multiple(mask: &Mask, multiple: usize) -> Result<Mask> {
    let s = mask.shape();
    let (ny, nx) = padded_dims(s, multiple.max(1));
    Mask::new([s[0], ny, nx], mask.spacing(), pad_raw(mask.data(), s, ny, nx))
}

fn uncrop_raw<T: Copy>(data: &[T], cshape: Shape3, b: &Bbox3, full: Shape3, fill: T) -> Result<Vec<T>> {
    b.check(full)?;
    let bs = b.shape();
    if cshape[0] != bs[0] || cshape[1] < bs[1] || cshape[2] < bs[2] {
        return Err(Error::Shape(format!("cropped {cshape:?} cannot hold box {bs:?}")));
    }
    let mut out = vec![fill; full.iter().product()];
    for z in 0..bs[0] {
        for y in 0..bs[1] {
            let src = (z * cshape[1] + y) * cshape[2];
            let dst = ((z + b.z0) * full[1] + y + b.y0) * full[2] + b.x0;
            out[dst..dst + bs[2]].copy_from_slice(&data[src..src + bs[2]]);
        }
    }
    Ok(out)
}

/// Places a crop back at its box. A crop larger than the box (padding) is
/// truncated to the box.
pub fn uncrop_volume(cropped: &Volume, b: &Bbox3, full: Shape3, fill: f32) -> Result<Volume> {
    Volume::new(full, cropped.spacing(), uncrop_raw(cropped.data(), cropped.shape(), b, full, fill)?)
}

pub fn uncrop_mask(cropped: &Mask, b: &Bbox3, full: Shape3) -> Result<Mask> {
    Mask::new(full, cropped.spacing(), uncrop_raw(cropped.data(), cropped.shape(), b, full, 0)?)
}

/// Removes padding added by [`pad_to_multiple`].
pub fn unpad(vol: &Volume, shape: Shape3) -> Result<Volume> {
    crop_volume(vol, &Bbox3::full(shape))
}

/// Trained networks used by [`run_pipeline`].
pub struct Models<'a> {
    pub liver: &'a SegNet<f32>,
    pub lesion: &'a SegNet<f32>,
    pub detector: Option<&'a DetectorNet<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStatus {
    Ok,
    EmptyLiver,
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub liver: f64,
    pub lesion: f64,
    pub detector: f64,
    pub crf: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub liver_prob: Volume,
    pub liver_mask: Mask,
    pub lesion_prob: Volume,
    pub lesion_mask: Mask,
    pub bbox: Option<Bbox3>,
    /// Detections in crop coordinates.
    pub detections: Option<DetectionMask>,
    pub status: PipelineStatus,
    pub timings: StageTimings,
}

/// Lesion probabilities inside the crop before the optional stages.
pub struct CropStage {
    pub bbox: Bbox3,
    pub image: Volume,
    pub liver: Mask,
    pub prob: Volume,
}

/// Stages 1 to 4: liver probabilities, liver mask, box and the cropped lesion
/// probabilities restricted to the predicted liver. `None` when the predicted
/// liver is empty.
pub fn segment_stages(vol: &Volume, models: &Models, cfg: &PipelineConfig, t: &mut StageTimings) -> Result<(Volume, Mask, Option<CropStage>)> {
    cfg.validate()?;
    let clock = Instant::now();
    let img = preprocess(vol)?;
    let liver_prob = models.liver.predict_volume(&img, None, cfg.liver_context)?;
    let liver_mask = threshold_mask(&liver_prob, cfg.liver_threshold)?;
    t.liver = clock.elapsed().as_secs_f64();
    let bbox = match liver_bbox_3d(&liver_mask, cfg.bbox_margin) {
        Ok(b) => b,
        Err(Error::EmptyMask) => {
            log::warn!("predicted liver is empty; lesion mask left empty");
            return Ok((liver_prob, liver_mask, None));
        }
        Err(e) => return Err(e),
    };
    let clock = Instant::now();
    let image = crop_volume(&img, &bbox)?;
    let liver = crop_mask(&liver_mask, &bbox)?;
    let k = models.lesion.config().divisor();
    let padded = pad_to_multiple(&image, k)?;
    let liver_padded = pad_mask_to_multiple(&liver, k)?;
    let prob = models.lesion.predict_volume(&padded, Some(&liver_padded), cfg.lesion_context)?;
    let prob = unpad(&prob, image.shape())?;
    t.lesion = clock.elapsed().as_secs_f64();
    Ok((liver_prob, liver_mask, Some(CropStage { bbox, image, liver, prob })))
}

/// Stages 5 to 8 on a cropped lesion map.
pub fn finish_stages(
    full: Shape3,
    crop: &CropStage,
    detector: Option<&DetectorNet<f32>>,
    crf: &CrfParams,
    cfg: &PipelineConfig,
    t: &mut StageTimings,
) -> Result<(Volume, Mask, Option<DetectionMask>)> {
    let mut prob = crop.prob.clone();
    let mut detections = None;
    if cfg.stages.detector {
        let net = detector.ok_or_else(|| Error::Config("detector stage enabled without a detector".into()))?;
        let clock = Instant::now();
        let det = detect(&crop.image, &crop.liver, net, cfg.detector_threshold)?;
        prob = mask_segmentation(&prob, &det)?;
        detections = Some(det);
        t.detector = clock.elapsed().as_secs_f64();
    }
    if cfg.stages.crf {
        let clock = Instant::now();
        prob = refine_masked(&prob, &crop.image, Some(&crop.liver), crf)?;
        t.crf = clock.elapsed().as_secs_f64();
    }
    let lesion = threshold_mask(&prob, cfg.lesion_threshold)?.and(&crop.liver)?;
    Ok((uncrop_volume(&prob, &crop.bbox, full, 0.0)?, uncrop_mask(&lesion, &crop.bbox, full)?, detections))
}

/// Full cascade on a raw (unclipped, unnormalized) volume.
pub fn run_pipeline(vol: &Volume, models: &Models, crf: &CrfParams, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let mut timings = StageTimings::default();
    let (liver_prob, liver_mask, crop) = segment_stages(vol, models, cfg, &mut timings)?;
    let Some(crop) = crop else {
        let empty = Mask::zeros(vol.shape(), vol.spacing())?;
        return Ok(PipelineOutput {
            liver_prob,
            liver_mask,
            lesion_prob: Volume::filled(vol.shape(), vol.spacing(), 0.0)?,
            lesion_mask: empty,
            bbox: None,
            detections: None,
            status: PipelineStatus::EmptyLiver,
            timings,
        });
    };
    let (lesion_prob, lesion_mask, detections) = finish_stages(vol.shape(), &crop, models.detector, crf, cfg, &mut timings)?;
    Ok(PipelineOutput {
        liver_prob,
        liver_mask,
        lesion_prob,
        lesion_mask,
        bbox: Some(crop.bbox),
        detections,
        status: PipelineStatus::Ok,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segnet::SegNetConfig;

    fn vol(shape: Shape3, f: impl Fn(usize) -> f32) -> Volume {
        Volume::new(shape, [1.0; 3], (0..shape.iter().product()).map(f).collect()).unwrap()
    }

    #[test]
    fn threshold_convention() {
        let half = vol([1, 2, 2], |_| 0.5);
        assert!(threshold_mask(&half, 0.5).unwrap().data().iter().all(|&v| v == 1));
        let zero = vol([1, 2, 2], |_| 0.0);
        assert_eq!(threshold_mask(&zero, 0.5).unwrap().count(), 0);
        assert!(matches!(threshold_mask(&zero, 1.0), Err(Error::Range(_))));
        assert!(matches!(threshold_mask(&zero, 0.0), Err(Error::Range(_))));
    }

    #[test]
    fn bbox_single_voxel() {
        let mut data = vec![0u8; 512];
        data[(2 * 8 + 3) * 8 + 4] = 1;
        let m = Mask::new([8, 8, 8], [1.0; 3], data).unwrap();
        let b = liver_bbox_3d(&m, 0).unwrap();
        assert_eq!((b.z0, b.z1, b.y0, b.y1, b.x0, b.x1), (2, 3, 3, 4, 4, 5));
        let b = liver_bbox_3d(&m, 2).unwrap();
        assert_eq!((b.z0, b.z1, b.y0, b.y1, b.x0, b.x1), (0, 5, 1, 6, 2, 7));
        let empty = Mask::zeros([8, 8, 8], [1.0; 3]).unwrap();
        assert!(matches!(liver_bbox_3d(&empty, 1), Err(Error::EmptyMask)));
    }

    #[test]
    fn crop_round_trip_and_padding() {
        let v = vol([3, 20, 20], |i| i as f32);
        let b = Bbox3 {
            z0: 1,
            z1: 3,
            y0: 4,
            y1: 11,
            x0: 5,
            x1: 18,
        };
        let c = crop_volume(&v, &b).unwrap();
        assert_eq!(c.shape(), [2, 7, 13]);
        let p = pad_to_multiple(&c, 8).unwrap();
        assert_eq!(p.shape(), [2, 8, 16]);
        assert_eq!(p.get(0, 7, 15), c.get(0, 6, 12));
        let back = uncrop_volume(&p, &b, v.shape(), 0.0).unwrap();
        for z in 0..3 {
            for y in 0..20 {
                for x in 0..20 {
                    let inside = (1..3).contains(&z) && (4..11).contains(&y) && (5..18).contains(&x);
                    assert_eq!(back.get(z, y, x), if inside { v.get(z, y, x) } else { 0.0 });
                }
            }
        }
        assert_eq!(crop_volume(&v, &Bbox3::full(v.shape())).unwrap(), v);
        let bad = Bbox3 { x1: 21, ..b };
        assert!(matches!(crop_volume(&v, &bad), Err(Error::Bounds(_))));
    }

    #[test]
    fn mask_round_trip() {
        let m = Mask::new([2, 6, 6], [1.0; 3], (0..72).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
        let b = Bbox3 {
            z0: 0,
            z1: 2,
            y0: 1,
            y1: 4,
            x0: 2,
            x1: 6,
        };
        let back = uncrop_mask(&pad_mask_to_multiple(&crop_mask(&m, &b).unwrap(), 8).unwrap(), &b, m.shape()).unwrap();
        for z in 0..2 {
            for y in 0..6 {
                for x in 0..6 {
                    let inside = (1..4).contains(&y) && x >= 2;
                    assert_eq!(back.get(z, y, x), inside && m.get(z, y, x));
                }
            }
        }
    }

    fn tiny_net(seed: u64) -> SegNet<f32> {
        SegNet::new(
            SegNetConfig {
                stage_channels: vec![4, 4],
                convs_per_stage: 1,
                side_output_channels: 2,
                ..Default::default()
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn lesion_inside_liver_and_detector_subtractive() {
        let v = vol([4, 16, 16], |i| ((i * 37) % 200) as f32 - 50.0);
        let mut liver = tiny_net(1);
        // bias the fused output high so the whole volume counts as liver
        liver.fuse_bias.value[0] = 6.0;
        let mut lesion = tiny_net(2);
        lesion.fuse_bias.value[0] = 0.3;
        let det = DetectorNet::new(Default::default(), 3).unwrap();
        let models = Models {
            liver: &liver,
            lesion: &lesion,
            detector: Some(&det),
        };
        let crf = CrfParams::default();
        let mut cfg = PipelineConfig::default();
        cfg.stages.crf = false;
        cfg.stages.detector = false;
        let off = run_pipeline(&v, &models, &crf, &cfg).unwrap();
        assert!(off.lesion_mask.is_subset_of(&off.liver_mask));
        assert!(off.lesion_mask.any());
        cfg.stages.detector = true;
        let on = run_pipeline(&v, &models, &crf, &cfg).unwrap();
        assert!(on.lesion_mask.is_subset_of(&off.lesion_mask));
        cfg.stages.crf = true;
        let all = run_pipeline(&v, &models, &crf, &cfg).unwrap();
        assert!(all.lesion_mask.is_subset_of(&all.liver_mask));
    }

    #[test]
    fn empty_liver_degrades() {
        let v = vol([2, 16, 16], |i| i as f32);
        let mut liver = tiny_net(1);
        liver.fuse_bias.value[0] = -20.0;
        let lesion = tiny_net(2);
        let models = Models {
            liver: &liver,
            lesion: &lesion,
            detector: None,
        };
        let out = run_pipeline(&v, &models, &CrfParams::default(), &PipelineConfig::default()).unwrap();
        assert_eq!(out.status, PipelineStatus::EmptyLiver);
        assert!(!out.lesion_mask.any());
        assert!(out.bbox.is_none());
    }
}
