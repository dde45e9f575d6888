use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor4};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Class-balance weight and optional loss support for
/// `-(1-w)·y·ln p - w·(1-y)·ln(1-p)`.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec<'a> {
    pub w: f64,
    /// Same layout as the prediction; voxels with 0 contribute neither loss nor gradient.
    pub mask: Option<&'a [u8]>,
}

impl<'a> LossSpec<'a> {
    pub fn new(w: f64, mask: Option<&'a [u8]>) -> Result<Self> {
        if !(w > 0.0 && w < 1.0) {
            return Err(Error::Range(format!("class weight must lie in (0, 1), got {w}")));
        }
        Ok(Self { w, mask })
    }

    pub fn unweighted() -> Self {
        Self { w: 0.5, mask: None }
    }
}

/// Weighted binary cross-entropy averaged over the unmasked voxels.
///
/// Returns the loss (accumulated in `f64`) and its gradient with respect to
/// `pred`. The gradient is written only at unmasked voxels, so it is exactly
/// zero wherever the mask is 0. Clamped probabilities pass the gradient
/// through as if unclamped.
pub fn weighted_masked_bce<T: Scalar>(pred: &Tensor4<T>, target: &[u8], spec: &LossSpec) -> Result<(f64, Tensor4<T>)> {
    if target.len() != pred.len() {
        return Err(Error::Shape(format!("target has {} values, prediction {}", target.len(), pred.len())));
    }
    if let Some(m) = spec.mask {
        if m.len() != pred.len() {
            return Err(Error::Shape(format!("mask has {} values, prediction {}", m.len(), pred.len())));
        }
    }
    let count = match spec.mask {
        Some(m) => m.iter().filter(|&&v| v != 0).count(),
        None => pred.len(),
    };
    if count == 0 {
        return Err(Error::DegenerateMask);
    }
    let (w, inv) = (spec.w, 1.0 / count as f64);
    let mut grad = Tensor4::zeros(pred.n, pred.c, pred.h, pred.w);
    let mut loss = 0.0f64;
    for i in 0..pred.len() {
        if spec.mask.is_some_and(|m| m[i] == 0) {
            continue;
        }
        let p = pred.data[i].to_f64().clamp(PROB_EPS, 1.0 - PROB_EPS);
        let (term, d) = if target[i] != 0 {
            (-(1.0 - w) * p.ln(), -(1.0 - w) / p)
        } else {
            (-w * (1.0 - p).ln(), w / (1.0 - p))
        };
        loss += term;
        grad.data[i] = T::from_f64(d * inv);
    }
    Ok((loss * inv, grad))
}

/// Unweighted binary cross-entropy on raw logits, averaged over samples.
/// Returns the loss and the gradient `(sigmoid(x) - y) / n` per logit.
pub fn bce_with_logits<T: Scalar>(logits: &[T], targets: &[u8]) -> Result<(f64, Vec<T>)> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::Shape(format!("{} logits for {} targets", logits.len(), targets.len())));
    }
    let inv = 1.0 / logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &y) in logits.iter().zip(targets) {
        let (x, y) = (x.to_f64(), (y != 0) as u8 as f64);
        // softplus(x) - y·x, written to stay finite for large |x|
        loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        grad.push(T::from_f64((1.0 / (1.0 + (-x).exp()) - y) * inv));
    }
    Ok((loss * inv, grad))
}
