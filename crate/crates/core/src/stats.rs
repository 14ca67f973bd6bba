//! Truncated-normal helper shared by the theta discretization and the
//! scenario generator.

use statrs::distribution::{ContinuousCDF, Normal};

/// A normal distribution truncated to (lower, +inf).
#[derive(Debug, Clone)]
pub(crate) struct TruncatedNormal {
    inner: Normal,
    /// CDF mass of the parent normal below the truncation point.
    below: f64,
}

impl TruncatedNormal {
    /// Truncates `N(mu, sigma^2)` to `(lower, +inf)`. Panics if sigma <= 0
    /// or the truncation removes essentially all mass.
    pub fn new(mu: f64, sigma: f64, lower: f64) -> Self {
        let inner = Normal::new(mu, sigma).expect("valid normal parameters");
        let below = inner.cdf(lower);
        assert!(below < 1.0 - 1e-300, "truncation leaves no mass");
        Self { inner, below }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if self.below >= 1.0 {
            return 1.0;
        }
        ((self.inner.cdf(x) - self.below) / (1.0 - self.below)).clamp(0.0, 1.0)
    }

    /// Inverse CDF; `p` outside [0, 1] is clamped.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let parent_p = self.below + p * (1.0 - self.below);
        // inverse_cdf saturates at +-inf for p in {0, 1}.
        self.inner.inverse_cdf(parent_p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
    }
}
