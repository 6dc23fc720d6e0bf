//! Long-run behavior of the urn process: the Beta limit law, goodness of fit
//! of simulated endpoints against it, and martingale diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::UrnParams;
use crate::special::regularized_incomplete_beta;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::param("a", format!("must be positive, got {a}")));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::param("b", format!("must be positive, got {b}")));
        }
        Ok(Self { a, b })
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn variance(&self) -> f64 {
        let s = self.a + self.b;
        self.a * self.b / (s * s * (s + 1.0))
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        beta_cdf(self, x)
    }
}

/// Limit law of `p_i`: `Beta(b0 / k, r0 / k)`.
pub fn limit_beta_params(urn: &UrnParams) -> BetaParams {
    BetaParams {
        a: urn.b0 / urn.k,
        b: urn.r0 / urn.k,
    }
}

pub fn beta_cdf(params: &BetaParams, x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::ProbabilityOutOfRange(x));
    }
    Ok(regularized_incomplete_beta(params.a, params.b, x))
}

/// Sorted sample of values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = samples.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::ProbabilityOutOfRange(bad));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn histogram(&self, bins: usize) -> Result<Vec<f64>> {
        unit_histogram(&self.samples, bins)
    }
}

/// Bin masses over `[0, 1]` in `bins` equal-width bins. The last bin is closed
/// on the right; values outside the interval land in the end bins.
pub fn unit_histogram(values: &[f64], bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::param("bins", "must be at least 1"));
    }
    if values.is_empty() {
        return Err(Error::Empty("histogram sample"));
    }
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = ((v.max(0.0) * bins as f64) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let n = values.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// One-sample two-sided Kolmogorov–Smirnov distance to `cdf`.
pub fn ks_statistic<F>(dist: &EmpiricalDistribution, cdf: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if dist.is_empty() {
        return Err(Error::Empty("empirical distribution"));
    }
    let n = dist.count() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in dist.samples().iter().enumerate() {
        let f = cdf(x);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d = d.max(above.abs()).max(below.abs());
    }
    Ok(d)
}

/// Two-sample Kolmogorov–Smirnov distance between empirical CDFs.
pub fn ks_two_sample(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("empirical distribution"));
    }
    let (xs, ys) = (a.samples(), b.samples());
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
}

pub fn sample_moments(dist: &EmpiricalDistribution) -> Result<Moments> {
    moments(dist.samples())
}

pub(crate) fn moments(xs: &[f64]) -> Result<Moments> {
    if xs.len() < 2 {
        return Err(Error::param(
            "samples",
            format!("variance needs at least 2 samples, got {}", xs.len()),
        ));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok(Moments {
        mean,
        variance: ss / (n - 1.0),
    })
}

/// z-score of the endpoint mean against the starting probability.
///
/// Under the martingale property `E(p_N) = p_1`, so the statistic is
/// asymptotically standard normal. A zero standard error with a matching
/// mean yields 0; with a differing mean it yields a signed infinity.
pub fn martingale_check(endpoints: &[f64], p1: f64) -> Result<f64> {
    let m = moments(endpoints)?;
    let constant = endpoints.iter().all(|&x| x == endpoints[0]);
    let (diff, se) = if constant {
        (endpoints[0] - p1, 0.0)
    } else {
        (m.mean - p1, (m.variance / endpoints.len() as f64).sqrt())
    };
    if se == 0.0 {
        return Ok(if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        });
    }
    Ok(diff / se)
}
