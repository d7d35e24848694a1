//! Robust Wald-type detector.
//!
//! Pipeline for one angle bin: `α̂ = vᴴy/‖v‖²`, residual `y − α̂·v`, banded
//! Toeplitz estimate `Σ̂` of the residual covariance, `σ̂ = √(vᴴΣ̂v)/‖v‖²`,
//! statistic `Λ = 2|α̂|²/σ̂²` compared with `λ = −2 ln P_FA`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("steering vector has zero norm")]
    ZeroVector,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("bandwidth {bandwidth} must be below the sample length {len}")]
    Bandwidth { bandwidth: usize, len: usize },
    #[error("sigma_hat must be positive (got {0})")]
    Sigma(f64),
    #[error("false-alarm probability must lie in (0, 1] (got {0})")]
    Probability(f64),
}

/// Relative floor on `vᴴΣ̂v`, in units of `‖v‖²·ĉ[0]`.
/// Relative residual power below which an estimate is treated as noiseless.
pub const RESIDUAL_FLOOR: f64 = 1e-24;

pub const QF_FLOOR: f64 = 1e-12;

/// Lag window applied to the sample autocorrelation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Taper {
    /// `1 − m/(J+1)`.
    Bartlett,
    /// Parzen window on `x = m/(J+1)`.
    #[default]
    Parzen,
    /// Plain truncation; the implied spectrum may go negative.
    Rectangular,
}

impl Taper {
    pub fn weight(self, lag: usize, bandwidth: usize) -> f64 {
        let x = lag as f64 / (bandwidth + 1) as f64;
        match self {
            Taper::Bartlett => 1.0 - x,
            Taper::Parzen if x <= 0.5 => 1.0 - 6.0 * x * x + 6.0 * x * x * x,
            Taper::Parzen => 2.0 * (1.0 - x).powi(3),
            Taper::Rectangular => 1.0,
        }
    }
}

/// `J = ⌈N^{1/3}⌉`.
pub fn default_bandwidth(len: usize) -> usize {
    let mut j = (len as f64).cbrt().round() as usize;
    // fix up rounding of the cube root
    while j * j * j < len {
        j += 1;
    }
    while j > 0 && (j - 1) * (j - 1) * (j - 1) >= len {
        j -= 1;
    }
    j
}

/// Banded Toeplitz covariance estimate stored as tapered lags `ĉ[0..=J]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    lags: Vec<Complex64>,
    len: usize,
}

impl CovarianceEstimate {
    pub fn from_lags(lags: Vec<Complex64>, len: usize) -> Self {
        assert!(!lags.is_empty(), "at least lag 0 is required");
        Self { lags, len }
    }

    pub fn identity(len: usize) -> Self {
        Self::from_lags(vec![Complex64::new(1.0, 0.0)], len)
    }

    pub fn lags(&self) -> &[Complex64] {
        &self.lags
    }

    pub fn bandwidth(&self) -> usize {
        self.lags.len() - 1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Lag-0 power `ĉ[0]`.
    pub fn power(&self) -> f64 {
        self.lags[0].re
    }

    /// Zero (or negative) lag-0 power: the residual carried no disturbance.
    pub fn is_degenerate(&self) -> bool {
        !(self.power() > 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_lags(self.lags.iter().map(|z| z * factor).collect(), self.len)
    }

    /// Lag-wise average of estimates sharing a bandwidth and length.
    pub fn pooled(estimates: &[CovarianceEstimate]) -> Option<Self> {
        let first = estimates.first()?;
        let mut lags = vec![Complex64::new(0.0, 0.0); first.lags.len()];
        for est in estimates {
            assert_eq!(est.lags.len(), lags.len(), "bandwidth mismatch in pooling");
            for (acc, z) in lags.iter_mut().zip(&est.lags) {
                *acc += z;
            }
        }
        let n = estimates.len() as f64;
        Some(Self::from_lags(
            lags.into_iter().map(|z| z / n).collect(),
            first.len,
        ))
    }

    /// `vᴴΣ̂v` evaluated in `O(N·J)` from the banded lags, before clamping.
    pub fn raw_quadratic_form(&self, v: &[Complex64]) -> f64 {
        let n = v.len();
        let norm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let mut total = self.lags[0].re * norm2;
        for (m, c) in self.lags.iter().enumerate().skip(1) {
            if m >= n {
                break;
            }
            // Σ_k conj(v[k+m])·v[k]
            let s: Complex64 = v[m..].iter().zip(v).map(|(a, b)| a.conj() * b).sum();
            total += 2.0 * (c * s).re;
        }
        total
    }

    /// `vᴴΣ̂v` clamped below at `QF_FLOOR·‖v‖²·ĉ[0]`.
    ///
    /// For a degenerate estimate (`ĉ[0] ≤ 0`) the floor uses the smallest
    /// positive double in place of `ĉ[0]`.
    pub fn quadratic_form(&self, v: &[Complex64]) -> f64 {
        let norm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let power = if self.is_degenerate() {
            f64::MIN_POSITIVE
        } else {
            self.power()
        };
        let floor = QF_FLOOR * norm2 * power;
        self.raw_quadratic_form(v).max(floor)
    }
}

/// Least-squares coefficient `α̂ = vᴴy / ‖v‖²`.
pub fn estimate_alpha(y: &[Complex64], v: &[Complex64]) -> Result<Complex64, DetectorError> {
    if y.len() != v.len() {
        return Err(DetectorError::LengthMismatch(y.len(), v.len()));
    }
    let norm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    if !(norm2 > 0.0) {
        return Err(DetectorError::ZeroVector);
    }
    let dot: Complex64 = v.iter().zip(y).map(|(a, b)| a.conj() * b).sum();
    Ok(dot / norm2)
}

/// Tapered sample autocorrelation
/// `ĉ[m] = w[m]·(1/(N−m))·Σ_n r[n+m]·r*[n]`, `m = 0..=J`.
pub fn estimate_covariance(
    residual: &[Complex64],
    bandwidth: usize,
    taper: Taper,
) -> Result<CovarianceEstimate, DetectorError> {
    let n = residual.len();
    if bandwidth >= n {
        return Err(DetectorError::Bandwidth { bandwidth, len: n });
    }
    let lags = (0..=bandwidth)
        .map(|m| {
            let acc: Complex64 = residual[m..]
                .iter()
                .zip(residual)
                .map(|(a, b)| a * b.conj())
                .sum();
            let c = acc / (n - m) as f64;
            if m == 0 {
                Complex64::new(c.re, 0.0)
            } else {
                c * taper.weight(m, bandwidth)
            }
        })
        .collect();
    Ok(CovarianceEstimate::from_lags(lags, n))
}

pub fn quadratic_form(est: &CovarianceEstimate, v: &[Complex64]) -> f64 {
    est.quadratic_form(v)
}

/// `σ̂ = √(vᴴΣ̂v) / ‖v‖²`.
pub fn sigma_hat(est: &CovarianceEstimate, v: &[Complex64]) -> Result<f64, DetectorError> {
    if est.len() != v.len() {
        return Err(DetectorError::LengthMismatch(est.len(), v.len()));
    }
    let norm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    if !(norm2 > 0.0) {
        return Err(DetectorError::ZeroVector);
    }
    Ok(est.quadratic_form(v).sqrt() / norm2)
}

/// `Λ = 2|α̂|² / σ̂²`.
pub fn wald_statistic(alpha_hat: Complex64, sigma_hat: f64) -> Result<f64, DetectorError> {
    if !(sigma_hat > 0.0) {
        return Err(DetectorError::Sigma(sigma_hat));
    }
    Ok(2.0 * alpha_hat.norm_sqr() / (sigma_hat * sigma_hat))
}

/// `λ = −2 ln P_FA`.
pub fn threshold_from_pfa(p_fa: f64) -> Result<f64, DetectorError> {
    if !(p_fa > 0.0 && p_fa <= 1.0) {
        return Err(DetectorError::Probability(p_fa));
    }
    // -0.0 for p_fa = 1
    Ok((-2.0 * p_fa.ln()).max(0.0))
}

/// Marcum Q function of order one, `Q₁(a, b)`.
///
/// Evaluated as the Poisson mixture
/// `Q₁(a,b) = Σ_k Pois(k; a²/2)·P[Pois(b²/2) ≤ k]`, with both Poisson
/// masses computed in log space so large arguments do not underflow.
pub fn marcum_q1(a: f64, b: f64) -> f64 {
    let a = a.max(0.0);
    let b = b.max(0.0);
    if b == 0.0 {
        return 1.0;
    }
    let mu_a = 0.5 * a * a;
    let mu_b = 0.5 * b * b;
    if mu_a == 0.0 {
        return (-mu_b).exp();
    }
    // Q₁ = Σ_k Pois(k; mu_a)·P[Pois(mu_b) ≤ k]; the complement uses the
    // upper tail so that values near 1 keep full relative precision.
    let (lo, hi_a) = poisson_window(mu_a);
    let hi = hi_a.max(poisson_window(mu_b).1) + 1;
    let pb = poisson_pmf(mu_b, hi);
    let mut cdf = Vec::with_capacity(hi + 1);
    let mut acc = 0.0;
    for p in &pb {
        acc += p;
        cdf.push(acc);
    }
    let mut sf = vec![0.0; hi + 1];
    for k in (0..hi).rev() {
        sf[k] = sf[k + 1] + pb[k + 1];
    }
    let pa = poisson_pmf(mu_a, hi_a);
    let (mut direct, mut complement) = (0.0, 0.0);
    for k in lo..=hi_a {
        direct += pa[k] * cdf[k];
        complement += pa[k] * sf[k];
    }
    let q = if direct <= 0.5 { direct } else { 1.0 - complement };
    q.clamp(0.0, 1.0)
}

/// Index range outside of which Poisson(mu) mass is negligible at f64 precision.
fn poisson_window(mu: f64) -> (usize, usize) {
    let sd = mu.sqrt();
    let lo = (mu - 12.0 * sd - 40.0).floor().max(0.0) as usize;
    let hi = (mu + 12.0 * sd + 40.0).ceil() as usize;
    (lo, hi)
}

/// Poisson(mu) probabilities for `k = 0..=hi`, evaluated in log space.
fn poisson_pmf(mu: f64, hi: usize) -> Vec<f64> {
    let ln_mu = mu.ln();
    let mut ln_fact = 0.0;
    (0..=hi)
        .map(|k| {
            if k > 0 {
                ln_fact += (k as f64).ln();
            }
            (k as f64 * ln_mu - mu - ln_fact).exp()
        })
        .collect()
}

/// Asymptotic detection probability `Q₁(√(2|α̂|²/σ̂²), √λ)`.
pub fn approx_pd(alpha_hat: Complex64, sigma_hat: f64, lambda: f64) -> Result<f64, DetectorError> {
    let zeta = wald_statistic(alpha_hat, sigma_hat)?;
    Ok(marcum_q1(zeta.sqrt(), lambda.max(0.0).sqrt()))
}

/// Detector settings shared by every bin test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Toeplitz bandwidth `J`; `None` selects `⌈N^{1/3}⌉`.
    #[serde(default)]
    pub bandwidth: Option<usize>,
    #[serde(default)]
    pub taper: Taper,
    /// Threshold `λ`.
    pub lambda: f64,
}

impl DetectorConfig {
    pub fn from_pfa(p_fa: f64) -> Result<Self, DetectorError> {
        Ok(Self {
            bandwidth: None,
            taper: Taper::default(),
            lambda: threshold_from_pfa(p_fa)?,
        })
    }

    pub fn bandwidth_for(&self, len: usize) -> usize {
        self.bandwidth.unwrap_or_else(|| default_bandwidth(len))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub statistic: f64,
    pub alpha_hat: Complex64,
    pub sigma_hat: f64,
    pub detected: bool,
    pub threshold: f64,
    /// Residual carried no disturbance power; the quadratic-form floor set `σ̂`.
    pub degenerate: bool,
}

/// Full test of `y` against the signature `v`.
pub fn run_detector(
    y: &[Complex64],
    v: &[Complex64],
    cfg: &DetectorConfig,
) -> Result<DetectionReport, DetectorError> {
    detect_with_estimate(y, v, cfg).map(|(report, _)| report)
}

/// As [`run_detector`], also returning the residual covariance estimate.
pub fn detect_with_estimate(
    y: &[Complex64],
    v: &[Complex64],
    cfg: &DetectorConfig,
) -> Result<(DetectionReport, CovarianceEstimate), DetectorError> {
    let alpha_hat = estimate_alpha(y, v)?;
    let residual: Vec<Complex64> = y.iter().zip(v).map(|(a, b)| a - alpha_hat * b).collect();
    let est = estimate_covariance(&residual, cfg.bandwidth_for(y.len()), cfg.taper)?;
    let sigma = sigma_hat(&est, v)?;
    // a residual at rounding level relative to the input carries no noise information
    let input_power = y.iter().map(|z| z.norm_sqr()).sum::<f64>() / y.len() as f64;
    let degenerate = est.is_degenerate() || est.power() <= RESIDUAL_FLOOR * input_power;
    let report = report_from(alpha_hat, sigma, cfg.lambda, degenerate);
    Ok((report, est))
}

/// Test against an externally supplied covariance estimate.
pub fn detect_with_covariance(
    y: &[Complex64],
    v: &[Complex64],
    est: &CovarianceEstimate,
    lambda: f64,
) -> Result<DetectionReport, DetectorError> {
    let alpha_hat = estimate_alpha(y, v)?;
    let sigma = sigma_hat(est, v)?;
    Ok(report_from(alpha_hat, sigma, lambda, est.is_degenerate()))
}

fn report_from(alpha_hat: Complex64, sigma: f64, lambda: f64, degenerate: bool) -> DetectionReport {
    let statistic = if sigma > 0.0 {
        2.0 * alpha_hat.norm_sqr() / (sigma * sigma)
    } else if alpha_hat.norm_sqr() > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    DetectionReport {
        statistic,
        alpha_hat,
        sigma_hat: sigma,
        detected: statistic >= lambda,
        threshold: lambda,
        degenerate,
    }
}
