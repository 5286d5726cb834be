//! Log-space special functions and categorical sampling.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("log multivariate gamma undefined: need a > (dim-1)/2, got dim={dim}, a={a}")]
pub struct DomainError {
    pub dim: usize,
    pub a: f64,
}

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `log Γ_dim(a) = dim(dim−1)/4 · log π + Σ_{j=1..dim} log Γ(a + (1−j)/2)`.
pub fn log_multigamma(dim: usize, a: f64) -> Result<f64, DomainError> {
    if dim == 0 || !(a > (dim as f64 - 1.0) / 2.0) {
        return Err(DomainError { dim, a });
    }
    let m = dim as f64;
    let head = m * (m - 1.0) / 4.0 * std::f64::consts::PI.ln();
    Ok(head
        + (1..=dim)
            .map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0))
            .sum::<f64>())
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalize log-weights into probabilities.
pub fn normalize_log(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Draw an index proportionally to `exp(log_weights)` with one uniform.
pub fn sample_log_categorical<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    debug_assert!(!log_weights.is_empty());
    let probs = normalize_log(log_weights);
    sample_categorical(&probs, rng)
}

/// Draw an index from probabilities summing to one (or to any positive total).
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // u landed on the rounding slack: take the last index with positive mass
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Gumbel-max draw: argmax of `log_weights + Gumbel noise`.
pub fn sample_gumbel_max<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &lw) in log_weights.iter().enumerate() {
        let u: f64 = rng.random::<f64>();
        // u ∈ [0,1): guard the log(0)
        let g = -(-(u.max(f64::MIN_POSITIVE)).ln()).ln();
        let v = lw + g;
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn multigamma_reduces_to_scalar_gamma() {
        assert!(log_multigamma(1, 2.0).unwrap().abs() < 1e-15);
        let expected = 0.5 * std::f64::consts::PI.ln() + ln_gamma(2.0) + ln_gamma(1.5);
        assert!((log_multigamma(2, 2.0).unwrap() - expected).abs() < 1e-14);
        assert!(log_multigamma(1, 0.3).is_ok());
        assert!(log_multigamma(1, -1.0).is_err());
        assert!(log_multigamma(3, 1.0).is_err());
    }

    #[test]
    fn lse_matches_direct() {
        let xs = [0.1f64.ln(), 0.2f64.ln(), 0.7f64.ln()];
        assert!(log_sum_exp(&xs).abs() < 1e-15);
        let p = normalize_log(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn samplers_follow_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lw = [0.2f64.ln(), 0.8f64.ln()];
        let n = 20000;
        let a = (0..n).filter(|_| sample_log_categorical(&lw, &mut rng) == 1).count();
        let b = (0..n).filter(|_| sample_gumbel_max(&lw, &mut rng) == 1).count();
        for c in [a, b] {
            let f = c as f64 / n as f64;
            assert!((f - 0.8).abs() < 0.02, "{f}");
        }
    }
}
