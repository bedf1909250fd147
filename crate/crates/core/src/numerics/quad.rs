//! Composite quadrature on uniformly spaced samples.

use thiserror::Error;

use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuadratureError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("Simpson's rule needs an odd sample count (even interval count), got {0} samples")]
    EvenSampleCount(usize),
}

/// Left Riemann sum over `samples.len() - 1` intervals.
pub fn quad_riemann<T: Scalar>(samples: &[T], h: T) -> Result<T, QuadratureError> {
    if samples.len() < 2 {
        return Err(QuadratureError::TooFewSamples { needed: 2, got: samples.len() });
    }
    let sum = samples[..samples.len() - 1].iter().fold(T::zero(), |acc, &v| acc + v);
    Ok(sum * h)
}

pub fn quad_trapezoid<T: Scalar>(samples: &[T], h: T) -> Result<T, QuadratureError> {
    let n = samples.len();
    if n < 2 {
        return Err(QuadratureError::TooFewSamples { needed: 2, got: n });
    }
    let inner = samples[1..n - 1].iter().fold(T::zero(), |acc, &v| acc + v);
    Ok(h * ((samples[0] + samples[n - 1]) * lit(0.5) + inner))
}

pub fn quad_simpson<T: Scalar>(samples: &[T], h: T) -> Result<T, QuadratureError> {
    let n = samples.len();
    if n < 3 {
        return Err(QuadratureError::TooFewSamples { needed: 3, got: n });
    }
    if n % 2 == 0 {
        return Err(QuadratureError::EvenSampleCount(n));
    }
    let mut acc = samples[0] + samples[n - 1];
    for (i, &v) in samples.iter().enumerate().take(n - 1).skip(1) {
        acc += v * if i % 2 == 1 { lit(4.0) } else { lit(2.0) };
    }
    Ok(acc * h / lit(3.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> (Vec<f64>, f64) {
        let h = (b - a) / (n - 1) as f64;
        ((0..n).map(|i| f(a + h * i as f64)).collect(), h)
    }

    #[test]
    fn constant_integrand() {
        let (s, h) = sample(|_| 1.0, 0.0, 1.0, 11);
        assert_relative_eq!(quad_riemann(&s, h).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(quad_trapezoid(&s, h).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(quad_simpson(&s, h).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn simpson_cubic_exact() {
        let (s, h) = sample(|t| t * t * t, 0.0, 1.0, 11);
        assert!((quad_simpson(&s, h).unwrap() - 0.25).abs() <= 1e-12);
    }

    #[test]
    fn simpson_rejects_even_count() {
        let (s, h) = sample(|t| t, 0.0, 1.0, 10);
        assert_eq!(quad_simpson(&s, h), Err(QuadratureError::EvenSampleCount(10)));
    }

    #[test]
    fn too_few_samples() {
        assert!(quad_trapezoid(&[1.0], 0.1).is_err());
        assert!(quad_riemann::<f64>(&[], 0.1).is_err());
    }

    #[test]
    fn convergence_orders_on_sine() {
        let err = |n: usize, rule: fn(&[f64], f64) -> Result<f64, QuadratureError>| {
            let (s, h) = sample(f64::sin, 0.0, std::f64::consts::PI, n);
            (rule(&s, h).unwrap() - 2.0).abs()
        };
        let trap_ratio = err(17, quad_trapezoid) / err(33, quad_trapezoid);
        let simp_ratio = err(17, quad_simpson) / err(33, quad_simpson);
        assert!((trap_ratio.log2() - 2.0).abs() < 0.1, "{trap_ratio}");
        assert!((simp_ratio.log2() - 4.0).abs() < 0.1, "{simp_ratio}");
    }
}
