//! Small numeric helpers: running moments with exact pooling, weighted
//! decay merges, and the standard normal CDF.

/// Sum-of-squared-deviations accumulator (Welford form).
///
/// `merge` implements the pairwise update, so pooling two accumulators is
/// exactly equivalent to accumulating the concatenated samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningMoments {
    pub weight: f64,
    pub mean: f64,
    /// Weighted sum of squared deviations from the mean.
    pub m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        RunningMoments { weight: 0.0, mean: 0.0, m2: 0.0 }
    }

    pub fn from_samples(samples: &[f64]) -> Self {
        let mut m = RunningMoments::new();
        for &x in samples {
            m.push(x);
        }
        m
    }

    pub fn push(&mut self, x: f64) {
        self.weight += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.weight;
        self.m2 += delta * (x - self.mean);
    }

    /// Merge another accumulator, optionally decaying this one's weight
    /// first. `decay = 1` is exact pooling.
    pub fn merge(&mut self, other: &RunningMoments, decay: f64) {
        self.weight *= decay;
        self.m2 *= decay;
        if other.weight == 0.0 {
            return;
        }
        if self.weight == 0.0 {
            *self = *other;
            return;
        }
        let total = self.weight + other.weight;
        let delta = other.mean - self.mean;
        self.mean += delta * other.weight / total;
        self.m2 += other.m2 + delta * delta * self.weight * other.weight / total;
        self.weight = total;
    }

    /// Unbiased sample variance (weight > 1 required, else 0).
    pub fn variance(&self) -> f64 {
        if self.weight > 1.0 {
            self.m2 / (self.weight - 1.0)
        } else {
            0.0
        }
    }
}

/// Median of a slice (lower middle for even lengths, so the result is
/// always an observed value).
pub fn median_lower(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty());
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[(v.len() - 1) / 2]
}

/// CDF of the standard normal distribution.
pub fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// PDF of the normal distribution with the given mean and std deviation.
pub fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}
