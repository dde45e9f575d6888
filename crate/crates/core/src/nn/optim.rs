use crate::error::{Error, Result};
use crate::nn::{Grads, Param, Scalar};

/// One SGD-with-momentum update: `v <- momentum·v + g`, `p <- p - lr·v`.
pub fn sgd_step<T: Scalar>(params: &mut [&mut Param<T>], grads: &Grads<T>, lr: f64, momentum: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Range(format!("learning rate must be positive, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Range(format!("momentum must lie in [0, 1), got {momentum}")));
    }
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::Shape("gradient buffers do not match parameters".into()));
    }
    let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
    for (p, g) in params.iter_mut().zip(grads) {
        for ((v, x), &gi) in p.velocity.iter_mut().zip(p.value.iter_mut()).zip(g) {
            *v = mu * *v + gi;
            *x -= lr * *v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(steps: &[f64], lr: f64, mu: f64) -> f64 {
        let mut p = Param::<f64>::zeros(vec![1]);
        for &g in steps {
            sgd_step(&mut [&mut p], &vec![vec![g]], lr, mu).unwrap();
        }
        p.value[0]
    }

    #[test]
    fn plain_step() {
        assert!((run(&[1.0], 0.1, 0.0) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = Param::new(vec![2], vec![0.25f32, -3.0]);
        sgd_step(&mut [&mut p], &vec![vec![0.0, 0.0]], 0.5, 0.9).unwrap();
        assert_eq!(p.value, vec![0.25, -3.0]);
    }

    #[test]
    fn momentum_recurrence_unrolled() {
        // v1 = 1, p1 = -1; v2 = 0.9 + 1 = 1.9, p2 = -1 - 1.9
        assert!((run(&[1.0, 1.0], 1.0, 0.9) + 2.9).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let mut p = Param::<f32>::zeros(vec![1]);
        assert!(sgd_step(&mut [&mut p], &vec![vec![1.0]], 0.0, 0.0).is_err());
        assert!(sgd_step(&mut [&mut p], &vec![vec![1.0]], 0.1, 1.0).is_err());
        assert!(sgd_step(&mut [&mut p], &vec![vec![1.0, 2.0]], 0.1, 0.0).is_err());
    }
}
