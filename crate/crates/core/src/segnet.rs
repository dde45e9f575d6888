//! Fully convolutional segmenter with one supervised side output per stage.
//!
//! The base network is a stack of stages (3x3 conv + ReLU blocks separated by
//! 2x2 max pooling). Every stage feeds a side head that predicts logits at
//! that stage's resolution; the side logits are upsampled to full resolution
//! and mixed by learned scalar weights into the fused prediction. Training
//! supervises the fused map and every side map.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::gradcheck::{check_model, check_model_against, Fingerprint, GradCheckConfig, GradCheckReport};
use crate::nn::layers::{
    bilinear_upsample, bilinear_upsample_backward, maxpool2, maxpool2_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, ConvCache, PoolCache,
};
use crate::nn::{accumulate, scale_grads, sgd_step, weighted_masked_bce, Conv2d, ConvGrads, Grads, LossSpec, Model, Param, Scalar, Tensor4};
use crate::phantom::LabeledCase;
use crate::volume::{replicate_slice, stack_context_slices, ContextSlab, Mask, Volume};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegNetConfig {
    pub stage_channels: Vec<usize>,
    pub convs_per_stage: usize,
    pub side_output_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        Self {
            stage_channels: vec![8, 16, 32, 64],
            convs_per_stage: 2,
            side_output_channels: 4,
            in_channels: 3,
            out_channels: 3,
        }
    }
}

impl SegNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() < 2 {
            return Err(Error::Config("a segmentation net needs at least two stages".into()));
        }
        if self.stage_channels.contains(&0) || self.convs_per_stage == 0 || self.side_output_channels == 0 {
            return Err(Error::Config("channel and conv counts must be positive".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("input and output channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Spatial dimensions must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.stage_channels.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SideHead<T> {
    reduce: Conv2d<T>,
    score: Conv2d<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegNet<T> {
    config: SegNetConfig,
    stages: Vec<Vec<Conv2d<T>>>,
    sides: Vec<SideHead<T>>,
    /// One mixing weight per side output, shared across output channels.
    pub fuse_weight: Param<T>,
    pub fuse_bias: Param<T>,
}

/// Forward activations needed by the loss and by backward.
#[derive(Debug, Clone)]
pub struct SegOutput<T> {
    pub fused_logits: Tensor4<T>,
    pub fused_prob: Tensor4<T>,
    pub side_logits: Vec<Tensor4<T>>,
    pub side_probs: Vec<Tensor4<T>>,
}

#[derive(Debug, Clone)]
pub struct SegCache<T> {
    pools: Vec<Option<PoolCache>>,
    convs: Vec<Vec<(ConvCache<T>, Tensor4<T>)>>,
    sides: Vec<(ConvCache<T>, ConvCache<T>)>,
    upsampled: Vec<Tensor4<T>>,
}

impl<T: Scalar> SegCache<T> {
    /// Fingerprint of every ReLU state and pooling winner.
    pub fn pattern(&self) -> u64 {
        let mut fp = Fingerprint::default();
        for (stage, pool) in self.convs.iter().zip(&self.pools) {
            if let Some(p) = pool {
                fp.push_indices(p.argmax());
            }
            for (_, out) in stage {
                fp.push_positive(&out.data);
            }
        }
        fp.finish()
    }
}

/// Per-sample loss breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegLoss {
    pub total: f64,
    pub fused: f64,
}

pub fn build_segnet<T: Scalar>(config: SegNetConfig, seed: u64) -> Result<SegNet<T>> {
    SegNet::new(config, seed)
}

impl<T: Scalar> SegNet<T> {
    pub fn new(config: SegNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::new();
        let mut sides = Vec::new();
        let mut in_c = config.in_channels;
        for &c in &config.stage_channels {
            let mut convs = Vec::new();
            for j in 0..config.convs_per_stage {
                convs.push(Conv2d::new(if j == 0 { in_c } else { c }, c, 3, 1, 1, &mut rng));
            }
            stages.push(convs);
            sides.push(SideHead {
                reduce: Conv2d::new(c, config.side_output_channels, 3, 1, 1, &mut rng),
                score: Conv2d::new(config.side_output_channels, config.out_channels, 1, 1, 0, &mut rng),
            });
            in_c = c;
        }
        let k = config.stage_channels.len();
        Ok(Self {
            fuse_weight: Param::new(vec![k], vec![T::from_f64(1.0 / k as f64); k]),
            fuse_bias: Param::zeros(vec![1]),
            config,
            stages,
            sides,
        })
    }

    pub fn config(&self) -> &SegNetConfig {
        &self.config
    }

    pub fn num_side_outputs(&self) -> usize {
        self.sides.len()
    }

    pub fn cast<U: Scalar>(&self) -> SegNet<U> {
        let conv = |c: &Conv2d<T>| Conv2d {
            in_c: c.in_c,
            out_c: c.out_c,
            k: c.k,
            stride: c.stride,
            pad: c.pad,
            weight: c.weight.cast(),
            bias: c.bias.cast(),
        };
        SegNet {
            config: self.config.clone(),
            stages: self.stages.iter().map(|s| s.iter().map(conv).collect()).collect(),
            sides: self
                .sides
                .iter()
                .map(|s| SideHead {
                    reduce: conv(&s.reduce),
                    score: conv(&s.score),
                })
                .collect(),
            fuse_weight: self.fuse_weight.cast(),
            fuse_bias: self.fuse_bias.cast(),
        }
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let d = self.config.divisor();
        if !h.is_multiple_of(d) || !w.is_multiple_of(d) || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} must be a positive multiple of {d} for {} stages",
                self.stages.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<(SegOutput<T>, SegCache<T>)> {
        if x.c != self.config.in_channels {
            return Err(Error::Shape(format!("expected {} input channels, got {}", self.config.in_channels, x.c)));
        }
        self.check_input(x.h, x.w)?;
        let mut cache = SegCache {
            pools: Vec::new(),
            convs: Vec::new(),
            sides: Vec::new(),
            upsampled: Vec::new(),
        };
        let mut side_logits = Vec::new();
        let mut h = x.clone();
        for (k, (stage, side)) in self.stages.iter().zip(&self.sides).enumerate() {
            if k > 0 {
                let (p, pc) = maxpool2(&h)?;
                h = p;
                cache.pools.push(Some(pc));
            } else {
                cache.pools.push(None);
            }
            let mut convs = Vec::new();
            for conv in stage {
                let (pre, cc) = conv.forward(&h)?;
                h = relu(&pre);
                convs.push((cc, h.clone()));
            }
            cache.convs.push(convs);
            let (r, rc) = side.reduce.forward(&h)?;
            let (s, sc) = side.score.forward(&r)?;
            cache.sides.push((rc, sc));
            cache.upsampled.push(if k == 0 { s.clone() } else { bilinear_upsample(&s, 1 << k)? });
            side_logits.push(s);
        }
        let mut fused = Tensor4::zeros(x.n, self.config.out_channels, x.h, x.w);
        fused.data.fill(self.fuse_bias.value[0]);
        for (alpha, up) in self.fuse_weight.value.iter().zip(&cache.upsampled) {
            for (f, &u) in fused.data.iter_mut().zip(&up.data) {
                *f += *alpha * u;
            }
        }
        let out = SegOutput {
            fused_prob: sigmoid(&fused),
            fused_logits: fused,
            side_probs: side_logits.iter().map(sigmoid).collect(),
            side_logits,
        };
        Ok((out, cache))
    }

    /// Backpropagates gradients of the loss with respect to the fused and
    /// side *probabilities* into parameter gradients (in `params()` order).
    pub fn backward(&self, out: &SegOutput<T>, cache: &SegCache<T>, d_fused: &Tensor4<T>, d_sides: &[Option<Tensor4<T>>]) -> Result<Grads<T>> {
        let k_stages = self.stages.len();
        let d_logit = sigmoid_backward(&out.fused_prob, d_fused);
        let mut d_alpha = vec![T::ZERO; k_stages];
        for (k, up) in cache.upsampled.iter().enumerate() {
            d_alpha[k] = up.data.iter().zip(&d_logit.data).map(|(&u, &g)| u * g).sum();
        }
        let d_beta: T = d_logit.data.iter().copied().sum();

        let mut stage_grads: Vec<Vec<ConvGrads<T>>> =
            self.stages.iter().map(|s| s.iter().map(|c| c.zero_grads()).collect()).collect();
        let mut side_grads: Vec<(ConvGrads<T>, ConvGrads<T>)> =
            self.sides.iter().map(|s| (s.reduce.zero_grads(), s.score.zero_grads())).collect();

        let mut carry: Option<Tensor4<T>> = None;
        for k in (0..k_stages).rev() {
            let alpha = self.fuse_weight.value[k];
            let side_logit = &out.side_logits[k];
            let mut d_side = d_logit.map(|g| g * alpha);
            if k > 0 {
                d_side = bilinear_upsample_backward(&d_side, side_logit.h, side_logit.w, 1 << k)?;
            }
            if let Some(Some(ds)) = d_sides.get(k) {
                d_side.add_assign(&sigmoid_backward(&out.side_probs[k], ds));
            }
            let (rc, sc) = &cache.sides[k];
            let side = &self.sides[k];
            let d_r = side.score.backward(sc, &d_side, &mut side_grads[k].1, true).expect("input grad requested");
            let mut g = side.reduce.backward(rc, &d_r, &mut side_grads[k].0, true).expect("input grad requested");
            if let Some(c) = carry.take() {
                g.add_assign(&c);
            }
            for j in (0..self.stages[k].len()).rev() {
                let (cc, act) = &cache.convs[k][j];
                g = relu_backward(act, &g);
                let first = k == 0 && j == 0;
                match self.stages[k][j].backward(cc, &g, &mut stage_grads[k][j], !first) {
                    Some(gi) => g = gi,
                    None => break,
                }
            }
            if k > 0 {
                let pc = cache.pools[k].as_ref().expect("pooled stage");
                carry = Some(maxpool2_backward(pc, &g));
            }
        }

        let mut grads = Vec::new();
        for stage in stage_grads {
            for cg in stage {
                grads.push(cg.weight);
                grads.push(cg.bias);
            }
        }
        for (r, s) in side_grads {
            grads.push(r.weight);
            grads.push(r.bias);
            grads.push(s.weight);
            grads.push(s.bias);
        }
        grads.push(d_alpha);
        grads.push(vec![d_beta]);
        Ok(grads)
    }

    /// Deep-supervised loss and parameter gradients for one batch.
    ///
    /// `target` and `mask` follow the output layout `n x out_channels x H x W`.
    /// Side outputs are compared against nearest-neighbour downsampled targets;
    /// a side term whose downsampled mask has no support is dropped.
    pub fn loss_and_grads(&self, x: &Tensor4<T>, target: &[u8], mask: Option<&[u8]>, w: f64) -> Result<(SegLoss, Grads<T>, u64)> {
        let (out, cache) = self.forward(x)?;
        let (fused, d_fused) = weighted_masked_bce(&out.fused_prob, target, &LossSpec::new(w, mask)?)?;
        let mut total = fused;
        let mut d_sides = Vec::new();
        for (k, sp) in out.side_probs.iter().enumerate() {
            let f = 1usize << k;
            let t_k = downsample_nearest(target, x.n * sp.c, x.h, x.w, f);
            let m_k = mask.map(|m| downsample_nearest(m, x.n * sp.c, x.h, x.w, f));
            if m_k.as_ref().is_some_and(|m| !m.contains(&1)) {
                d_sides.push(None);
                continue;
            }
            let (l, d) = weighted_masked_bce(sp, &t_k, &LossSpec::new(w, m_k.as_deref())?)?;
            total += l;
            d_sides.push(Some(d));
        }
        let grads = self.backward(&out, &cache, &d_fused, &d_sides)?;
        Ok((SegLoss { total, fused }, grads, cache.pattern()))
    }

    /// Finite-difference check of the full deep-supervised loss gradient.
    pub fn grad_check(&self, x: &Tensor4<T>, target: &[u8], mask: Option<&[u8]>, w: f64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
        check_model(self, |m: &SegNet<T>| m.loss_and_grads(x, target, mask, w).map(|(l, g, p)| (l.total, g, p)), cfg)
    }
}

impl<T: Scalar> Model<T> for SegNet<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut v = Vec::new();
        for (k, stage) in self.stages.iter().enumerate() {
            for (j, c) in stage.iter().enumerate() {
                v.push((format!("stage{k}.conv{j}.weight"), &c.weight));
                v.push((format!("stage{k}.conv{j}.bias"), &c.bias));
            }
        }
        for (k, s) in self.sides.iter().enumerate() {
            v.push((format!("side{k}.reduce.weight"), &s.reduce.weight));
            v.push((format!("side{k}.reduce.bias"), &s.reduce.bias));
            v.push((format!("side{k}.score.weight"), &s.score.weight));
            v.push((format!("side{k}.score.bias"), &s.score.bias));
        }
        v.push(("fuse.weight".into(), &self.fuse_weight));
        v.push(("fuse.bias".into(), &self.fuse_bias));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for stage in &mut self.stages {
            for c in stage {
                v.push(&mut c.weight);
                v.push(&mut c.bias);
            }
        }
        for s in &mut self.sides {
            v.push(&mut s.reduce.weight);
            v.push(&mut s.reduce.bias);
            v.push(&mut s.score.weight);
            v.push(&mut s.score.bias);
        }
        v.push(&mut self.fuse_weight);
        v.push(&mut self.fuse_bias);
        v
    }
}

/// Nearest-neighbour downsampling of `planes` stacked `h x w` planes by
/// `factor`, keeping the top-left sample of every block.
pub fn downsample_nearest(data: &[u8], planes: usize, h: usize, w: usize, factor: usize) -> Vec<u8> {
    if factor == 1 {
        return data.to_vec();
    }
    let (ho, wo) = (h / factor, w / factor);
    let mut out = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        for y in 0..ho {
            for x in 0..wo {
                out.push(data[(p * h + y * factor) * w + x * factor]);
            }
        }
    }
    out
}

/// Which label a segmenter is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Liver,
    Lesion,
}

/// Normalized foreground weight `w` of the balanced loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w: f64,
}

/// Dataset-level class balance.
///
/// The foreground term is the foreground voxel fraction over the slices that
/// contain foreground; the background term is computed the same way over
/// slices that contain background. With `restrict_to_liver`, only voxels
/// inside the ground-truth liver are counted. `w = fg / (fg + bg)`.
pub fn compute_class_weights(cases: &[LabeledCase], target: Target, restrict_to_liver: bool) -> Result<ClassWeights> {
    let (mut fg, mut fg_total, mut bg, mut bg_total) = (0u64, 0u64, 0u64, 0u64);
    for case in cases {
        let labels = match target {
            Target::Liver => &case.liver,
            Target::Lesion => &case.lesion,
        };
        for z in 0..labels.shape()[0] {
            let lab = labels.slice(z);
            let (f, t) = if restrict_to_liver {
                let liv = case.liver.slice(z);
                let f = lab.iter().zip(liv).filter(|(&a, &l)| a == 1 && l == 1).count();
                (f as u64, liv.iter().filter(|&&l| l == 1).count() as u64)
            } else {
                (lab.iter().filter(|&&a| a == 1).count() as u64, lab.len() as u64)
            };
            if f > 0 {
                fg += f;
                fg_total += t;
            }
            if t > f {
                bg += t - f;
                bg_total += t;
            }
        }
    }
    if fg_total == 0 {
        return Err(Error::EmptyForeground);
    }
    if bg_total == 0 {
        return Err(Error::Param("no slice contains the background class".into()));
    }
    let fg_term = fg as f64 / fg_total as f64;
    let bg_term = bg as f64 / bg_total as f64;
    Ok(ClassWeights {
        w: fg_term / (fg_term + bg_term),
    })
}

/// Per-volume balance: the foreground fraction of the whole volume, clamped
/// away from 0 and 1 so volumes without foreground still train.
pub fn volume_class_weight(labels: &Mask) -> ClassWeights {
    let frac = labels.count() as f64 / labels.len() as f64;
    ClassWeights {
        w: frac.clamp(1e-3, 1.0 - 1e-3),
    }
}

/// How the three input channels are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    /// Slices `i-1, i, i+1` (edge replicated).
    Stack3,
    /// Slice `i` in all three channels.
    Single,
}

impl ContextMode {
    pub fn from_slices(n: usize) -> Result<Self> {
        match n {
            3 => Ok(ContextMode::Stack3),
            1 => Ok(ContextMode::Single),
            _ => Err(Error::Config(format!("context_slices must be 1 or 3, got {n}"))),
        }
    }

    pub fn slab(self, vol: &Volume, z: usize) -> Result<ContextSlab> {
        match self {
            ContextMode::Stack3 => stack_context_slices(vol, z),
            ContextMode::Single => replicate_slice(vol, z),
        }
    }

    /// Source slice per channel, for building matching targets.
    pub fn indices(self, nz: usize, z: usize) -> [usize; 3] {
        match self {
            ContextMode::Stack3 => crate::volume::context_indices(nz, z),
            ContextMode::Single => [z; 3],
        }
    }
}

pub fn slab_tensor(slab: &ContextSlab) -> Tensor4<f32> {
    Tensor4 {
        n: 1,
        c: 3,
        h: slab.ny,
        w: slab.nx,
        data: slab.data.clone(),
    }
}

/// Gathers the mask planes matching a slab's channels.
pub fn mask_planes(mask: &Mask, idx: [usize; 3]) -> Vec<u8> {
    idx.iter().flat_map(|&z| mask.slice(z).iter().copied()).collect()
}

/// One training example: a slab, its 3-plane target, optional loss support
/// and its class weight.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Tensor4<f32>,
    pub target: Vec<u8>,
    pub mask: Option<Vec<u8>>,
    pub w: f64,
}

impl SegNet<f32> {
    /// Checks this network's single-precision gradient against central
    /// differences of a double-precision copy.
    pub fn grad_check_f32(&self, x: &Tensor4<f32>, target: &[u8], mask: Option<&[u8]>, w: f64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
        let x64 = x.cast::<f64>();
        check_model_against(
            self,
            |m: &SegNet<f32>| m.loss_and_grads(x, target, mask, w).map(|(l, g, p)| (l.total, g, p)),
            &self.cast::<f64>(),
            |m: &SegNet<f64>| m.loss_and_grads(&x64, target, mask, w).map(|(l, g, p)| (l.total, g, p)),
            cfg,
        )
    }

    /// Fused and side probabilities for a single slab.
    pub fn forward_slab(&self, slab: &ContextSlab) -> Result<SegOutput<f32>> {
        Ok(self.forward(&slab_tensor(slab))?.0)
    }

    /// One SGD step on a batch; gradients are averaged over samples in input
    /// order. Returns the mean pre-step loss.
    pub fn train_batch(&mut self, batch: &[TrainSample], lr: f64, momentum: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Param("empty training batch".into()));
        }
        let net = &*self;
        let results: Vec<(SegLoss, Grads<f32>)> = batch
            .par_iter()
            .map(|s| net.loss_and_grads(&s.input, &s.target, s.mask.as_deref(), s.w).map(|(l, g, _)| (l, g)))
            .collect::<Result<_>>()?;
        let mut grads = self.zero_grads();
        let mut loss = 0.0;
        for (l, g) in &results {
            accumulate(&mut grads, g);
            loss += l.total;
        }
        if batch.len() > 1 {
            scale_grads(&mut grads, 1.0 / batch.len() as f32);
        }
        sgd_step(&mut self.params_mut(), &grads, lr, momentum)?;
        Ok(loss / batch.len() as f64)
    }

    /// Single-slab training step. `liver_mask`, when given, restricts the
    /// loss (and therefore every gradient) to its voxels.
    pub fn train_step(
        &mut self,
        slab: &ContextSlab,
        target: &[u8],
        weights: ClassWeights,
        liver_mask: Option<&[u8]>,
        lr: f64,
        momentum: f64,
    ) -> Result<f64> {
        if liver_mask.is_some_and(|m| !m.contains(&1)) {
            return Err(Error::DegenerateMask);
        }
        let sample = TrainSample {
            input: slab_tensor(slab),
            target: target.to_vec(),
            mask: liver_mask.map(<[u8]>::to_vec),
            w: weights.w,
        };
        self.train_batch(std::slice::from_ref(&sample), lr, momentum)
    }

    /// Slice-by-slice prediction keeping the central output channel. Voxels
    /// outside `liver_mask` are set to 0.
    pub fn predict_volume(&self, vol: &Volume, liver_mask: Option<&Mask>, mode: ContextMode) -> Result<Volume> {
        self.check_input(vol.ny(), vol.nx())?;
        if let Some(m) = liver_mask {
            if m.shape() != vol.shape() {
                return Err(Error::Shape(format!("mask {:?} vs volume {:?}", m.shape(), vol.shape())));
            }
        }
        let planes: Vec<Vec<f32>> = (0..vol.nz())
            .into_par_iter()
            .map(|z| {
                let out = self.forward_slab(&mode.slab(vol, z)?)?;
                let mut plane = out.fused_prob.plane(0, 1).to_vec();
                if let Some(m) = liver_mask {
                    for (p, &l) in plane.iter_mut().zip(m.slice(z)) {
                        if l == 0 {
                            *p = 0.0;
                        }
                    }
                }
                Ok(plane)
            })
            .collect::<Result<_>>()?;
        Volume::from_planes(&planes, vol.ny(), vol.nx(), vol.spacing())
    }
}

/// Optimizer settings for [`train_segnet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegTrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            momentum: 0.9,
            epochs: 8,
            batch_size: 4,
            lr_decay: 0.85,
            seed: 7,
        }
    }
}

/// Mini-batch SGD over `samples`, reshuffled every epoch from `cfg.seed`.
/// Returns the mean loss of each epoch.
pub fn train_segnet(net: &mut SegNet<f32>, samples: &[TrainSample], cfg: &SegTrainConfig) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Param("no training samples".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.lr;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            total += net.train_batch(&batch, lr, cfg.momentum)?;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::debug!("segnet epoch {epoch}: loss {mean:.5} (lr {lr:.4})");
        history.push(mean);
        lr *= cfg.lr_decay;
    }
    Ok(history)
}
