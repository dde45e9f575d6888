//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{Grads, Model, Scalar};

/// Result of evaluating a differentiable function at one point.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub loss: f64,
    pub grad: Vec<T>,
    /// Fingerprint of the piecewise-linear regime (ReLU on/off states, pooling
    /// winners). Finite differences are only meaningful when both probes stay
    /// in the regime of the base point.
    pub pattern: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Denominator floor of the relative error, guarding near-zero gradients.
    pub floor: f64,
    pub samples: usize,
    pub max_attempts: usize,
    pub seed: u64,
}

impl GradCheckConfig {
    /// Tolerances for a single-precision model probed through a
    /// double-precision reference (see [`check_model_against`]).
    pub fn f32_default() -> Self {
        Self {
            eps: 1e-3,
            tol: 1e-3,
            floor: 1e-2,
            samples: 40,
            max_attempts: 2000,
            seed: 0,
        }
    }

    pub fn f64_default() -> Self {
        Self {
            eps: 1e-6,
            tol: 1e-6,
            floor: 1e-2,
            samples: 40,
            max_attempts: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates rejected because a probe crossed a non-differentiable point.
    pub skipped: usize,
    /// `(coordinate, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of `f` at `x0` with central differences on
/// a random subset of coordinates.
pub fn check_vector<T: Scalar>(
    x0: &[T],
    f: impl Fn(&[T]) -> Result<Evaluation<T>>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let base = f(x0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let order = sample(&mut rng, x0.len(), x0.len().min(cfg.max_attempts));
    let want = cfg.samples.min(x0.len());
    let mut report = GradCheckReport::default();
    let mut x = x0.to_vec();
    for i in order.iter() {
        if report.checked == want {
            break;
        }
        let orig = x0[i];
        x[i] = T::from_f64(orig.to_f64() + cfg.eps);
        let hi_step = x[i].to_f64() - orig.to_f64();
        let plus = f(&x)?;
        x[i] = T::from_f64(orig.to_f64() - cfg.eps);
        let lo_step = orig.to_f64() - x[i].to_f64();
        let minus = f(&x)?;
        x[i] = orig;
        if plus.pattern != base.pattern || minus.pattern != base.pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.loss - minus.loss) / (hi_step + lo_step);
        let analytic = base.grad[i].to_f64();
        let err = relative_error(analytic, numeric, cfg.floor);
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((i, analytic, numeric));
        }
        report.checked += 1;
    }
    report.passed = report.checked == want && report.max_rel_error <= cfg.tol;
    Ok(report)
}

/// Flattens all model parameters into one vector.
pub fn flatten_params<T: Scalar, M: Model<T>>(model: &M) -> Vec<T> {
    model.params().iter().flat_map(|(_, p)| p.value.iter().copied()).collect()
}

/// Writes a flat vector produced by [`flatten_params`] back into the model.
pub fn unflatten_params<T: Scalar, M: Model<T>>(model: &mut M, flat: &[T]) {
    let mut off = 0;
    for p in model.params_mut() {
        let n = p.len();
        p.value.copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

pub fn flatten_grads<T: Scalar>(g: &Grads<T>) -> Vec<T> {
    g.iter().flatten().copied().collect()
}

/// Finite-difference check of a model's parameter gradient. `eval` computes
/// the loss, gradients and regime fingerprint for a given parameter setting.
pub fn check_model<T, M>(
    model: &M,
    eval: impl Fn(&M) -> Result<(f64, Grads<T>, u64)>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Scalar,
    M: Model<T> + Clone,
{
    let x0 = flatten_params(model);
    check_vector(
        &x0,
        |x| {
            let mut m = model.clone();
            unflatten_params(&mut m, x);
            let (loss, grads, pattern) = eval(&m)?;
            Ok(Evaluation {
                loss,
                grad: flatten_grads(&grads),
                pattern,
            })
        },
        cfg,
    )
}

/// Checks the gradient `eval` computes for `model` against central
/// differences of `reference`, a copy of the same model in another precision
/// (typically `f64` for an `f32` model). Probing in single precision drowns
/// the difference quotient in rounding noise; the gradient under test is
/// still the one produced by `model`'s own arithmetic.
pub fn check_model_against<T, U, M, R>(
    model: &M,
    eval: impl Fn(&M) -> Result<(f64, Grads<T>, u64)>,
    reference: &R,
    ref_eval: impl Fn(&R) -> Result<(f64, Grads<U>, u64)>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Scalar,
    U: Scalar,
    M: Model<T>,
    R: Model<U> + Clone,
{
    let analytic: Vec<U> = flatten_grads(&eval(model)?.1).into_iter().map(|g| U::from_f64(g.to_f64())).collect();
    let x0 = flatten_params(reference);
    if x0.len() != analytic.len() {
        return Err(crate::error::Error::Shape(format!(
            "reference has {} parameters, model gradient {}",
            x0.len(),
            analytic.len()
        )));
    }
    check_vector(
        &x0,
        |x| {
            let mut m = reference.clone();
            unflatten_params(&mut m, x);
            let (loss, _, pattern) = ref_eval(&m)?;
            Ok(Evaluation {
                loss,
                grad: analytic.clone(),
                pattern,
            })
        },
        cfg,
    )
}

/// Order-sensitive 64-bit FNV-1a accumulator for regime fingerprints.
#[derive(Debug, Clone, Copy)]
pub struct Fingerprint(u64);

impl Default for Fingerprint {
    fn default() -> Self {
        Fingerprint(0xcbf2_9ce4_8422_2325)
    }
}

impl Fingerprint {
    pub fn push(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn push_positive<T: Scalar>(&mut self, xs: &[T]) {
        let mut word = 0u64;
        for (i, &v) in xs.iter().enumerate() {
            word = (word << 1) | (v > T::ZERO) as u64;
            if i % 64 == 63 {
                self.push(word);
                word = 0;
            }
        }
        self.push(word);
    }

    pub fn push_indices(&mut self, idx: &[u32]) {
        for &i in idx {
            self.push(i as u64);
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(x: &[f64]) -> Result<Evaluation<f64>> {
        Ok(Evaluation {
            loss: x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum(),
            grad: x.iter().enumerate().map(|(i, v)| 2.0 * (i as f64 + 1.0) * v).collect(),
            pattern: 0,
        })
    }

    #[test]
    fn exact_gradient_passes() {
        let x = vec![0.3, -1.2, 2.0, 0.7];
        let r = check_vector(&x, quad, &GradCheckConfig::f64_default()).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn linear_function_is_at_noise_level() {
        let w = [0.5, -2.0, 3.25];
        let f = |x: &[f64]| {
            Ok(Evaluation {
                loss: x.iter().zip(&w).map(|(a, b)| a * b).sum(),
                grad: w.to_vec(),
                pattern: 0,
            })
        };
        let r = check_vector(&[1.0, 2.0, 3.0], f, &GradCheckConfig::f64_default()).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn doubled_gradient_fails() {
        let bad = |x: &[f64]| {
            let mut e = quad(x)?;
            e.grad.iter_mut().for_each(|g| *g *= 2.0);
            Ok(e)
        };
        let r = check_vector(&[0.3, -1.2, 2.0], bad, &GradCheckConfig::f64_default()).unwrap();
        assert!(!r.passed);
        assert!(r.max_rel_error > 0.4);
    }

    #[test]
    fn regime_changes_are_skipped() {
        // |x| has a kink at 0; the probe around 1e-9 crosses it.
        let f = |x: &[f64]| {
            Ok(Evaluation {
                loss: x[0].abs(),
                grad: vec![x[0].signum()],
                pattern: (x[0] > 0.0) as u64,
            })
        };
        let r = check_vector(&[1e-9], f, &GradCheckConfig::f64_default()).unwrap();
        assert_eq!(r.skipped, 1);
        assert!(!r.passed);
    }
}
