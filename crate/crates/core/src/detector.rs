//! Sliding-window lesion detector used to suppress false-positive lesion
//! pixels.
//!
//! Windows of 50x50 pixels are laid on a stride-50 grid anchored at the origin
//! of the liver crop. A window is used when at least a quarter of it is liver
//! and is labeled positive when it holds at least 50 lesion pixels. The
//! classifier sees the window plus a 15 pixel margin (80x80).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::gradcheck::{check_model, check_model_against, Fingerprint, GradCheckConfig, GradCheckReport};
use crate::nn::layers::{
    global_avg_pool, global_avg_pool_backward, maxpool2, maxpool2_backward, relu, relu_backward, sigmoid_scalar, ConvCache,
    PoolCache,
};
use crate::nn::{accumulate, bce_with_logits, scale_grads, sgd_step, Affine, Conv2d, Grads, Model, Param, Scalar, Tensor4};
use crate::volume::{Mask, Volume};

pub const WINDOW: usize = 50;
pub const STRIDE: usize = 50;
pub const MARGIN: usize = 15;
pub const PATCH: usize = WINDOW + 2 * MARGIN;
/// 25% of a 50x50 window.
pub const MIN_LIVER_PIXELS: usize = 625;
pub const MIN_LESION_PIXELS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub y0: i64,
    pub x0: i64,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn contains(&self, y: i64, x: i64) -> bool {
        y >= self.y0 && y < self.y0 + self.h as i64 && x >= self.x0 && x < self.x0 + self.w as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchLabel {
    Positive,
    Negative,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub slice_index: usize,
    pub core: Rect,
    pub padded: Rect,
    pub label: PatchLabel,
    pub liver_overlap: f64,
    pub liver_pixel_count: usize,
    pub lesion_pixel_count: usize,
}

impl PatchRecord {
    pub fn included(&self) -> bool {
        self.label != PatchLabel::Excluded
    }
}

/// Grid windows of one slice. Windows that touch no liver pixel are omitted;
/// windows with some liver but under 25% are kept with label `Excluded`.
pub fn enumerate_patches(liver: &[u8], lesion: &[u8], h: usize, w: usize, slice_index: usize) -> Result<Vec<PatchRecord>> {
    if liver.len() != h * w || lesion.len() != h * w {
        return Err(Error::Shape(format!(
            "planes of {} and {} pixels for a {h}x{w} slice",
            liver.len(),
            lesion.len()
        )));
    }
    let mut out = Vec::new();
    for y0 in (0..).step_by(STRIDE).take_while(|y| y + WINDOW <= h) {
        for x0 in (0..).step_by(STRIDE).take_while(|x| x + WINDOW <= w) {
            let (mut liv, mut les) = (0, 0);
            for y in y0..y0 + WINDOW {
                let row = y * w;
                liv += liver[row + x0..row + x0 + WINDOW].iter().filter(|&&v| v != 0).count();
                les += lesion[row + x0..row + x0 + WINDOW].iter().filter(|&&v| v != 0).count();
            }
            if liv == 0 {
                continue;
            }
            let label = if liv < MIN_LIVER_PIXELS {
                PatchLabel::Excluded
            } else if les >= MIN_LESION_PIXELS {
                PatchLabel::Positive
            } else {
                PatchLabel::Negative
            };
            let core = Rect {
                y0: y0 as i64,
                x0: x0 as i64,
                h: WINDOW,
                w: WINDOW,
            };
            out.push(PatchRecord {
                slice_index,
                core,
                padded: Rect {
                    y0: core.y0 - MARGIN as i64,
                    x0: core.x0 - MARGIN as i64,
                    h: PATCH,
                    w: PATCH,
                },
                label,
                liver_overlap: liv as f64 / (WINDOW * WINDOW) as f64,
                liver_pixel_count: liv,
                lesion_pixel_count: les,
            });
        }
    }
    Ok(out)
}

/// The 80x80 classifier input for `record`, replicating edge pixels where the
/// margin leaves the plane.
pub fn extract_padded_window(image: &[f32], h: usize, w: usize, record: &PatchRecord) -> Result<Vec<f32>> {
    if image.len() != h * w {
        return Err(Error::Shape(format!("{} pixels for a {h}x{w} plane", image.len())));
    }
    let c = record.core;
    if c.y0 < 0 || c.x0 < 0 || c.y0 as usize + c.h > h || c.x0 as usize + c.w > w {
        return Err(Error::Bounds(format!("core window {c:?} outside {h}x{w} plane")));
    }
    let p = record.padded;
    let mut out = Vec::with_capacity(p.h * p.w);
    for dy in 0..p.h as i64 {
        let y = (p.y0 + dy).clamp(0, h as i64 - 1) as usize;
        for dx in 0..p.w as i64 {
            let x = (p.x0 + dx).clamp(0, w as i64 - 1) as usize;
            out.push(image[y * w + x]);
        }
    }
    Ok(out)
}

fn rotate90(p: &[f32], n: usize) -> Vec<f32> {
    // counter-clockwise: out[y][x] = in[x][n-1-y]
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            out[y * n + x] = p[x * n + (n - 1 - y)];
        }
    }
    out
}

fn flip_horizontal(p: &[f32], n: usize) -> Vec<f32> {
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            out[y * n + x] = p[y * n + (n - 1 - x)];
        }
    }
    out
}

/// The dihedral orbit of a square patch: rotations by 0, 90, 180, 270 degrees,
/// then the same four applied after a horizontal flip. Element 0 is the input.
pub fn augment8(patch: &[f32], h: usize, w: usize) -> Result<Vec<Vec<f32>>> {
    if h != w || patch.len() != h * w {
        return Err(Error::Shape(format!("augment8 needs a square patch, got {h}x{w} with {} values", patch.len())));
    }
    let mut out = Vec::with_capacity(8);
    for start in [patch.to_vec(), flip_horizontal(patch, h)] {
        let mut cur = start;
        for _ in 0..4 {
            let next = rotate90(&cur, h);
            out.push(cur);
            cur = next;
        }
    }
    Ok(out)
}

/// Applies dihedral element `k` (as ordered by [`augment8`]).
pub fn dihedral(patch: &[f32], n: usize, k: usize) -> Vec<f32> {
    let mut cur = if k >= 4 { flip_horizontal(patch, n) } else { patch.to_vec() };
    for _ in 0..k % 4 {
        cur = rotate90(&cur, n);
    }
    cur
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub stage_channels: Vec<usize>,
    /// Fixed input transform `(x - input_center) * input_scale`.
    pub input_center: f64,
    pub input_scale: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            stage_channels: vec![8, 16, 16],
            input_center: 0.5,
            input_scale: 4.0,
        }
    }
}

/// Plain CNN: three (3x3 conv, ReLU, 2x2 max-pool) stages, global average
/// pooling and an affine layer to one logit.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorNet<T> {
    config: DetectorConfig,
    convs: Vec<Conv2d<T>>,
    pub head: Affine<T>,
}

pub struct DetectorCache<T> {
    convs: Vec<ConvCache<T>>,
    acts: Vec<Tensor4<T>>,
    pools: Vec<PoolCache>,
    pooled_hw: (usize, usize),
    features: Tensor4<T>,
}

impl<T: Scalar> DetectorCache<T> {
    pub fn pattern(&self) -> u64 {
        let mut fp = Fingerprint::default();
        for (a, p) in self.acts.iter().zip(&self.pools) {
            fp.push_positive(&a.data);
            fp.push_indices(p.argmax());
        }
        fp.finish()
    }
}

impl<T: Scalar> DetectorNet<T> {
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        if config.stage_channels.is_empty() || config.stage_channels.contains(&0) {
            return Err(Error::Config("detector needs positive stage channel counts".into()));
        }
        if !(config.input_scale.is_finite() && config.input_scale != 0.0 && config.input_center.is_finite()) {
            return Err(Error::Config("detector input transform must be finite with a nonzero scale".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        let mut in_c = 1;
        for &c in &config.stage_channels {
            convs.push(Conv2d::new(in_c, c, 3, 1, 1, &mut rng));
            in_c = c;
        }
        Ok(Self {
            head: Affine::new(in_c, 1, &mut rng),
            convs,
            config,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn cast<U: Scalar>(&self) -> DetectorNet<U> {
        DetectorNet {
            config: self.config.clone(),
            convs: self
                .convs
                .iter()
                .map(|c| Conv2d {
                    in_c: c.in_c,
                    out_c: c.out_c,
                    k: c.k,
                    stride: c.stride,
                    pad: c.pad,
                    weight: c.weight.cast(),
                    bias: c.bias.cast(),
                })
                .collect(),
            head: Affine {
                in_f: self.head.in_f,
                out_f: 1,
                weight: self.head.weight.cast(),
                bias: self.head.bias.cast(),
            },
        }
    }

    /// Logits for a batch of single-channel patches (`n x 1 x H x W`).
    pub fn forward(&self, x: &Tensor4<T>) -> Result<(Vec<T>, DetectorCache<T>)> {
        if x.c != 1 {
            return Err(Error::Shape(format!("detector expects 1 channel, got {}", x.c)));
        }
        let mut cache = DetectorCache {
            convs: Vec::new(),
            acts: Vec::new(),
            pools: Vec::new(),
            pooled_hw: (0, 0),
            features: Tensor4::zeros(1, 1, 1, 1),
        };
        let (c, k) = (T::from_f64(self.config.input_center), T::from_f64(self.config.input_scale));
        let mut h = x.clone();
        h.data.iter_mut().for_each(|v| *v = (*v - c) * k);
        for conv in &self.convs {
            let (pre, cc) = conv.forward(&h)?;
            let a = relu(&pre);
            let (p, pc) = maxpool2(&a)?;
            cache.convs.push(cc);
            cache.acts.push(a);
            cache.pools.push(pc);
            h = p;
        }
        cache.pooled_hw = (h.h, h.w);
        let feat = global_avg_pool(&h);
        let logits = self.head.forward(&feat)?;
        cache.features = feat;
        Ok((logits.data, cache))
    }

    pub fn backward(&self, cache: &DetectorCache<T>, d_logits: &[T]) -> Grads<T> {
        let mut conv_grads: Vec<_> = self.convs.iter().map(|c| c.zero_grads()).collect();
        let mut head_grads = self.head.zero_grads();
        let n = d_logits.len();
        let gout = Tensor4 {
            n,
            c: 1,
            h: 1,
            w: 1,
            data: d_logits.to_vec(),
        };
        let d_feat = self.head.backward(&cache.features, &gout, &mut head_grads);
        let mut g = global_avg_pool_backward(&d_feat, cache.pooled_hw.0, cache.pooled_hw.1);
        for k in (0..self.convs.len()).rev() {
            g = maxpool2_backward(&cache.pools[k], &g);
            g = relu_backward(&cache.acts[k], &g);
            match self.convs[k].backward(&cache.convs[k], &g, &mut conv_grads[k], k > 0) {
                Some(gi) => g = gi,
                None => break,
            }
        }
        let mut grads = Vec::new();
        for cg in conv_grads {
            grads.push(cg.weight);
            grads.push(cg.bias);
        }
        grads.push(head_grads.weight);
        grads.push(head_grads.bias);
        grads
    }

    /// Mean unweighted BCE on logits and its parameter gradients.
    pub fn loss_and_grads(&self, x: &Tensor4<T>, labels: &[u8]) -> Result<(f64, Grads<T>, u64)> {
        let (logits, cache) = self.forward(x)?;
        let (loss, d) = bce_with_logits(&logits, labels)?;
        Ok((loss, self.backward(&cache, &d), cache.pattern()))
    }

    pub fn grad_check(&self, x: &Tensor4<T>, labels: &[u8], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
        check_model(self, |m: &DetectorNet<T>| m.loss_and_grads(x, labels), cfg)
    }
}

impl<T: Scalar> Model<T> for DetectorNet<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut v = Vec::new();
        for (k, c) in self.convs.iter().enumerate() {
            v.push((format!("stage{k}.conv.weight"), &c.weight));
            v.push((format!("stage{k}.conv.bias"), &c.bias));
        }
        v.push(("head.weight".into(), &self.head.weight));
        v.push(("head.bias".into(), &self.head.bias));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for c in &mut self.convs {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        v.push(&mut self.head.weight);
        v.push(&mut self.head.bias);
        v
    }
}

fn patch_tensor(p: &[f32], n: usize) -> Tensor4<f32> {
    Tensor4 {
        n: 1,
        c: 1,
        h: n,
        w: n,
        data: p.to_vec(),
    }
}

impl DetectorNet<f32> {
    pub fn grad_check_f32(&self, x: &Tensor4<f32>, labels: &[u8], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
        let x64 = x.cast::<f64>();
        check_model_against(
            self,
            |m: &DetectorNet<f32>| m.loss_and_grads(x, labels),
            &self.cast::<f64>(),
            |m: &DetectorNet<f64>| m.loss_and_grads(&x64, labels),
            cfg,
        )
    }

    /// Unhealthiness probability of one square patch.
    pub fn probability(&self, patch: &[f32], n: usize) -> Result<f32> {
        let (logits, _) = self.forward(&patch_tensor(patch, n))?;
        Ok(sigmoid_scalar(logits[0]))
    }

    /// One SGD step on `(patch, label)` pairs; per-sample gradients are summed
    /// in batch order. Returns the mean pre-step loss.
    pub fn train_batch(&mut self, batch: &[(Vec<f32>, u8)], n: usize, lr: f64, momentum: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Param("empty detector batch".into()));
        }
        let net = &*self;
        let results: Vec<(f64, Grads<f32>)> = batch
            .par_iter()
            .map(|(p, y)| net.loss_and_grads(&patch_tensor(p, n), &[*y]).map(|(l, g, _)| (l, g)))
            .collect::<Result<_>>()?;
        let mut grads = self.zero_grads();
        let mut loss = 0.0;
        for (l, g) in &results {
            accumulate(&mut grads, g);
            loss += l;
        }
        scale_grads(&mut grads, 1.0 / batch.len() as f32);
        sgd_step(&mut self.params_mut(), &grads, lr, momentum)?;
        Ok(loss / batch.len() as f64)
    }
}

/// Labeled 80x80 patches ready for training.
#[derive(Debug, Clone, Default)]
pub struct PatchSet {
    pub positives: Vec<Vec<f32>>,
    pub negatives: Vec<Vec<f32>>,
}

impl PatchSet {
    /// Adds every included window of a cropped case.
    pub fn add_case(&mut self, image: &Volume, liver: &Mask, lesion: &Mask) -> Result<()> {
        let (h, w) = (image.ny(), image.nx());
        for z in 0..image.nz() {
            for r in enumerate_patches(liver.slice(z), lesion.slice(z), h, w, z)? {
                let patch = extract_padded_window(image.slice(z), h, w, &r)?;
                match r.label {
                    PatchLabel::Positive => self.positives.push(patch),
                    PatchLabel::Negative => self.negatives.push(patch),
                    PatchLabel::Excluded => {}
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Patches of each class per batch.
    pub per_class: usize,
    /// The learning rate is multiplied by `lr_decay` every `decay_every` steps.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub seed: u64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            lr: 0.02,
            momentum: 0.9,
            per_class: 32,
            lr_decay: 0.7,
            decay_every: 100,
            seed: 11,
        }
    }
}

/// Draws a class-balanced batch: `per_class` positives then `per_class`
/// negatives, each drawn with replacement and passed through a random
/// dihedral transform.
pub fn balanced_batch(set: &PatchSet, per_class: usize, rng: &mut impl Rng) -> Result<Vec<(Vec<f32>, u8)>> {
    if set.positives.is_empty() {
        return Err(Error::ClassMissing("positive"));
    }
    if set.negatives.is_empty() {
        return Err(Error::ClassMissing("negative"));
    }
    let mut batch = Vec::with_capacity(2 * per_class);
    for (pool, label) in [(&set.positives, 1u8), (&set.negatives, 0u8)] {
        for _ in 0..per_class {
            let p = &pool[rng.random_range(0..pool.len())];
            batch.push((dihedral(p, PATCH, rng.random_range(0..8)), label));
        }
    }
    Ok(batch)
}

/// Returns the loss of every step.
pub fn train_detector(net: &mut DetectorNet<f32>, set: &PatchSet, cfg: &DetectorTrainConfig) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut lr = cfg.lr;
    for step in 0..cfg.steps {
        if step > 0 && cfg.decay_every > 0 && step % cfg.decay_every == 0 {
            lr *= cfg.lr_decay;
        }
        let batch = balanced_batch(set, cfg.per_class, &mut rng)?;
        let loss = net.train_batch(&batch, PATCH, lr, cfg.momentum)?;
        if step % 25 == 0 {
            log::debug!("detector step {step}: loss {loss:.4}");
        }
        history.push(loss);
    }
    Ok(history)
}

/// Positively classified core windows per slice of a liver crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMask {
    pub shape: [usize; 3],
    pub positives: Vec<Vec<Rect>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceDetections {
    pub slice: usize,
    pub positives: Vec<[i64; 2]>,
}

impl DetectionMask {
    pub fn empty(shape: [usize; 3]) -> Self {
        Self {
            shape,
            positives: vec![Vec::new(); shape[0]],
        }
    }

    pub fn count(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    /// Union of positive cores as a binary plane stack.
    pub fn to_planes(&self) -> Vec<u8> {
        let [nz, ny, nx] = self.shape;
        let mut out = vec![0u8; nz * ny * nx];
        for (z, rects) in self.positives.iter().enumerate() {
            for r in rects {
                let (y0, y1) = (r.y0.clamp(0, ny as i64) as usize, (r.y0 + r.h as i64).clamp(0, ny as i64) as usize);
                let (x0, x1) = (r.x0.clamp(0, nx as i64) as usize, (r.x0 + r.w as i64).clamp(0, nx as i64) as usize);
                for y in y0..y1 {
                    let row = (z * ny + y) * nx;
                    out[row + x0..row + x1].fill(1);
                }
            }
        }
        out
    }

    /// Per-slice dump: `{"slice": i, "positives": [[y0, x0], ...]}`.
    pub fn slices(&self) -> Vec<SliceDetections> {
        self.positives
            .iter()
            .enumerate()
            .map(|(slice, r)| SliceDetections {
                slice,
                positives: r.iter().map(|r| [r.y0, r.x0]).collect(),
            })
            .collect()
    }

    /// Inverse of [`DetectionMask::slices`].
    pub fn from_slices(shape: [usize; 3], slices: &[SliceDetections]) -> Self {
        let mut m = Self::empty(shape);
        for s in slices.iter().filter(|s| s.slice < shape[0]) {
            m.positives[s.slice] = s
                .positives
                .iter()
                .map(|&[y0, x0]| Rect { y0, x0, h: WINDOW, w: WINDOW })
                .collect();
        }
        m
    }
}

/// Classifies every included window of a cropped volume; windows with
/// probability `>= threshold` are positive.
pub fn detect(image: &Volume, liver: &Mask, net: &DetectorNet<f32>, threshold: f32) -> Result<DetectionMask> {
    if image.shape() != liver.shape() {
        return Err(Error::Shape(format!("image {:?} vs liver {:?}", image.shape(), liver.shape())));
    }
    let (h, w) = (image.ny(), image.nx());
    let zeros = vec![0u8; h * w];
    let positives = (0..image.nz())
        .into_par_iter()
        .map(|z| {
            let mut hits = Vec::new();
            for r in enumerate_patches(liver.slice(z), &zeros, h, w, z)? {
                if !r.included() {
                    continue;
                }
                let patch = extract_padded_window(image.slice(z), h, w, &r)?;
                if net.probability(&patch, PATCH)? >= threshold {
                    hits.push(r.core);
                }
            }
            Ok(hits)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionMask {
        shape: image.shape(),
        positives,
    })
}

/// Zeroes every probability outside the positive core windows of its slice.
pub fn mask_segmentation(prob: &Volume, det: &DetectionMask) -> Result<Volume> {
    if prob.shape() != det.shape {
        return Err(Error::Shape(format!("probabilities {:?} vs detections {:?}", prob.shape(), det.shape)));
    }
    let keep = det.to_planes();
    let data = prob.data().iter().zip(&keep).map(|(&p, &k)| if k == 1 { p } else { 0.0 }).collect();
    Volume::new(prob.shape(), prob.spacing(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_with(h: usize, w: usize, rect: (usize, usize, usize, usize), count: usize) -> Vec<u8> {
        // fills `count` pixels of the rectangle in row-major order
        let (y0, x0, rh, rw) = rect;
        let mut p = vec![0u8; h * w];
        let mut left = count;
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                if left > 0 {
                    p[y * w + x] = 1;
                    left -= 1;
                }
            }
        }
        p
    }

    #[test]
    fn liver_threshold_boundary() {
        let les = vec![0u8; 100 * 100];
        let r = enumerate_patches(&plane_with(100, 100, (0, 0, 50, 50), 624), &les, 100, 100, 0).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].label, PatchLabel::Excluded);
        let r = enumerate_patches(&plane_with(100, 100, (0, 0, 50, 50), 625), &les, 100, 100, 0).unwrap();
        assert_eq!(r[0].label, PatchLabel::Negative);
        assert_eq!(r[0].liver_overlap, 0.25);
    }

    #[test]
    fn lesion_threshold_boundary() {
        let liv = vec![1u8; 100 * 100];
        let r = enumerate_patches(&liv, &plane_with(100, 100, (50, 50, 50, 50), 49), 100, 100, 3).unwrap();
        assert_eq!(r.len(), 4);
        assert_eq!(r[3].label, PatchLabel::Negative);
        assert_eq!(r[3].lesion_pixel_count, 49);
        let r = enumerate_patches(&liv, &plane_with(100, 100, (50, 50, 50, 50), 50), 100, 100, 3).unwrap();
        assert_eq!(r[3].label, PatchLabel::Positive);
        assert_eq!((r[3].core.y0, r[3].core.x0, r[3].slice_index), (50, 50, 3));
        assert_eq!((r[3].padded.y0, r[3].padded.h), (35, 80));
    }

    #[test]
    fn empty_liver_and_partial_windows() {
        assert!(enumerate_patches(&[0; 40000], &[0; 40000], 200, 200, 0).unwrap().is_empty());
        // 120 wide: only two full columns of windows fit
        let r = enumerate_patches(&vec![1; 120 * 120], &vec![0; 120 * 120], 120, 120, 0).unwrap();
        assert_eq!(r.len(), 4);
        assert!(enumerate_patches(&[1; 10], &[0; 9], 2, 5, 0).is_err());
    }

    #[test]
    fn padded_window_interior_and_corner() {
        let (h, w) = (200, 200);
        let img: Vec<f32> = (0..h * w).map(|i| i as f32).collect();
        let liv = vec![1u8; h * w];
        let recs = enumerate_patches(&liv, &vec![0; h * w], h, w, 0).unwrap();
        let center = recs.iter().find(|r| r.core.y0 == 50 && r.core.x0 == 100).unwrap();
        let p = extract_padded_window(&img, h, w, center).unwrap();
        assert_eq!(p.len(), 6400);
        assert_eq!(p[0], img[35 * w + 85]);
        assert_eq!(p[79 * 80 + 79], img[114 * w + 164]);

        let corner = &recs[0];
        let p = extract_padded_window(&img, h, w, corner).unwrap();
        for dy in 0..80 {
            for dx in 0..80 {
                let y = (dy as i64 - 15).max(0) as usize;
                let x = (dx as i64 - 15).max(0) as usize;
                assert_eq!(p[dy * 80 + dx], img[y * w + x]);
            }
        }
        let mut bad = corner.clone();
        bad.core.x0 = 160;
        assert!(matches!(extract_padded_window(&img, h, w, &bad), Err(Error::Bounds(_))));
        assert!(extract_padded_window(&[1.0; 2500], 50, 50, &recs[0]).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn augment_is_the_dihedral_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 6;
        let p: Vec<f32> = (0..n * n).map(|_| rng.random()).collect();
        let orbit = augment8(&p, n, n).unwrap();
        assert_eq!(orbit[0], p);
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(orbit[i], orbit[j]);
            }
            assert_eq!(orbit[i], dihedral(&p, n, i));
            for q in augment8(&orbit[i], n, n).unwrap() {
                assert!(orbit.contains(&q));
            }
        }
        assert!(augment8(&[1.0; 9], 3, 3).unwrap().iter().all(|q| q == &vec![1.0; 9]));
        assert!(augment8(&[1.0; 6], 2, 3).is_err());
    }

    #[test]
    fn detector_shapes_and_gradients() {
        let net = DetectorNet::<f64>::new(DetectorConfig::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor4::from_vec(2, 1, 16, 16, (0..512).map(|_| rng.random::<f64>()).collect()).unwrap();
        let (logits, _) = net.forward(&x).unwrap();
        assert_eq!(logits.len(), 2);
        let r = net.grad_check(&x, &[1, 0], &GradCheckConfig::f64_default()).unwrap();
        assert!(r.passed, "{r:?}");
        let r = net.cast::<f32>().grad_check_f32(&x.cast(), &[1, 0], &GradCheckConfig::f32_default()).unwrap();
        assert!(r.passed, "{r:?}");
    }

    fn toy_set() -> PatchSet {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut set = PatchSet::default();
        for i in 0..20 {
            let noisy = |base: f32, rng: &mut ChaCha8Rng| (0..PATCH * PATCH).map(|_| base + 0.1 * rng.random::<f32>()).collect();
            if i < 4 {
                set.positives.push(noisy(0.8, &mut rng));
            }
            set.negatives.push(noisy(0.2, &mut rng));
        }
        set
    }

    #[test]
    fn batches_are_balanced() {
        let set = toy_set();
        for seed in 0..5 {
            let b = balanced_batch(&set, 32, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(b.iter().filter(|(_, y)| *y == 1).count(), 32);
            assert_eq!(b.iter().filter(|(_, y)| *y == 0).count(), 32);
        }
        let no_pos = PatchSet {
            positives: vec![],
            negatives: set.negatives.clone(),
        };
        assert!(matches!(balanced_batch(&no_pos, 32, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::ClassMissing(_))));
    }

    #[test]
    fn separable_toy_data_is_learned() {
        let set = toy_set();
        let mut net = DetectorNet::<f32>::new(DetectorConfig::default(), 1).unwrap();
        let cfg = DetectorTrainConfig {
            steps: 60,
            per_class: 8,
            ..Default::default()
        };
        train_detector(&mut net, &set, &cfg).unwrap();
        let correct = set.positives.iter().filter(|p| net.probability(p, PATCH).unwrap() >= 0.5).count()
            + set.negatives.iter().filter(|p| net.probability(p, PATCH).unwrap() < 0.5).count();
        assert!(correct as f64 / 24.0 > 0.95, "{correct}/24");
    }

    #[test]
    fn zero_head_detects_every_included_window() {
        let mut net = DetectorNet::<f32>::new(DetectorConfig::default(), 1).unwrap();
        net.head.weight.value.fill(0.0);
        net.head.bias.value.fill(0.0);
        let shape = [2, 100, 100];
        let img = Volume::filled(shape, [1.0; 3], 0.3).unwrap();
        let liver = Mask::ones(shape, [1.0; 3]).unwrap();
        let det = detect(&img, &liver, &net, 0.5).unwrap();
        assert_eq!(det.count(), 8);
        let empty = detect(&img, &Mask::zeros(shape, [1.0; 3]).unwrap(), &net, 0.5).unwrap();
        assert_eq!(empty.count(), 0);
        assert!(mask_segmentation(&img, &empty).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masking_keeps_only_positive_cores() {
        let shape = [1, 120, 120];
        let prob = Volume::filled(shape, [1.0; 3], 0.7).unwrap();
        let mut det = DetectionMask::empty(shape);
        det.positives[0].push(Rect { y0: 50, x0: 0, h: 50, w: 50 });
        let out = mask_segmentation(&prob, &det).unwrap();
        for y in 0..120 {
            for x in 0..120 {
                let inside = (50..100).contains(&y) && x < 50;
                assert_eq!(out.get(0, y, x), if inside { 0.7 } else { 0.0 });
            }
        }
        let json = serde_json::to_string(&det.slices()).unwrap();
        assert_eq!(json, r#"[{"slice":0,"positives":[[50,0]]}]"#);
    }
}
