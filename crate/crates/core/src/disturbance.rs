//! Disturbance generation: AR(p) processes driven by heavy-tailed circular
//! complex innovations, plus the true autocovariance of a configured model.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DisturbanceError {
    #[error("complex-t shape must exceed 1 (got {0})")]
    TailShape(f64),
    #[error("generalized-Gaussian shape must be positive (got {0})")]
    GgShape(f64),
    #[error("innovation power must be non-negative and finite (got {0})")]
    Power(f64),
    #[error("AR model is not stable: companion spectral radius {0:.6} >= 1")]
    Unstable(f64),
}

/// Distribution family of the circular innovations `w_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InnovationKind {
    /// Compound-Gaussian complex t with shape `mu > 1`.
    ComplexT { shape: f64 },
    ComplexGaussian,
    /// Circular density proportional to `exp(-(|w|²/s)^shape)`.
    GeneralizedGaussian { shape: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnovationSpec {
    #[serde(flatten)]
    pub kind: InnovationKind,
    /// `E|w|² = σ_w²`.
    pub power: f64,
}

impl InnovationSpec {
    pub fn complex_t(shape: f64, power: f64) -> Result<Self, DisturbanceError> {
        let spec = Self {
            kind: InnovationKind::ComplexT { shape },
            power,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(power: f64) -> Result<Self, DisturbanceError> {
        let spec = Self {
            kind: InnovationKind::ComplexGaussian,
            power,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn generalized_gaussian(shape: f64, power: f64) -> Result<Self, DisturbanceError> {
        let spec = Self {
            kind: InnovationKind::GeneralizedGaussian { shape },
            power,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DisturbanceError> {
        if !(self.power >= 0.0) || !self.power.is_finite() {
            return Err(DisturbanceError::Power(self.power));
        }
        match self.kind {
            InnovationKind::ComplexT { shape } if !(shape > 1.0) => {
                Err(DisturbanceError::TailShape(shape))
            }
            InnovationKind::GeneralizedGaussian { shape } if !(shape > 0.0) => {
                Err(DisturbanceError::GgShape(shape))
            }
            _ => Ok(()),
        }
    }

    /// Scale parameter `ξ = μ / (σ_w²·(μ−1))` of the complex-t density.
    pub fn t_scale(&self) -> Option<f64> {
        match self.kind {
            InnovationKind::ComplexT { shape } => Some(shape / (self.power * (shape - 1.0))),
            _ => None,
        }
    }

    /// Build a reusable sampler; the per-kind constants are computed once.
    pub fn sampler(&self) -> InnovationSampler {
        let mixing = match self.kind {
            InnovationKind::ComplexT { shape } => {
                Mixing::InverseGamma(Gamma::new(shape, 1.0).expect("validated shape"), self.power * (shape - 1.0))
            }
            InnovationKind::ComplexGaussian => Mixing::None,
            InnovationKind::GeneralizedGaussian { shape } => {
                // |w|² = s·G^{1/shape}, G ~ Gamma(1/shape, 1), E|w|² = s·Γ(2/shape)/Γ(1/shape).
                let s = self.power * (ln_gamma(1.0 / shape) - ln_gamma(2.0 / shape)).exp();
                Mixing::Radial(Gamma::new(1.0 / shape, 1.0).expect("validated shape"), s, 1.0 / shape)
            }
        };
        InnovationSampler {
            power: self.power,
            mixing,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Mixing {
    None,
    /// Texture `τ = scale / G` with `G ~ Gamma(μ, 1)`.
    InverseGamma(Gamma<f64>, f64),
    /// Modulus drawn directly: `|w|² = scale·G^exponent`.
    Radial(Gamma<f64>, f64, f64),
}

#[derive(Debug, Clone, Copy)]
pub struct InnovationSampler {
    power: f64,
    mixing: Mixing,
}

impl InnovationSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        match self.mixing {
            Mixing::None => standard_complex_normal(rng) * self.power.sqrt(),
            Mixing::InverseGamma(g, scale) => {
                let tau = scale / g.sample(rng);
                standard_complex_normal(rng) * tau.sqrt()
            }
            Mixing::Radial(g, scale, exponent) => {
                let modulus_sq = scale * g.sample(rng).powf(exponent);
                let phase = rng.random::<f64>() * 2.0 * PI;
                Complex64::from_polar(modulus_sq.sqrt(), phase)
            }
        }
    }
}

/// `CN(0, 1)`: independent real and imaginary parts with variance 1/2.
pub fn standard_complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn sample_innovation<R: Rng + ?Sized>(spec: &InnovationSpec, rng: &mut R) -> Complex64 {
    spec.sampler().sample(rng)
}

/// Stable AR(p) model `c_n = Σ ρ_i c_{n−i} + w_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    coefficients: Vec<Complex64>,
    innovation: InnovationSpec,
    burn_in: usize,
}

pub const DEFAULT_BURN_IN: usize = 1000;

impl ArModel {
    pub fn new(
        coefficients: Vec<Complex64>,
        innovation: InnovationSpec,
        burn_in: usize,
    ) -> Result<Self, DisturbanceError> {
        innovation.validate()?;
        let radius = check_stability(&coefficients);
        if radius >= 1.0 {
            return Err(DisturbanceError::Unstable(radius));
        }
        Ok(Self {
            coefficients,
            innovation,
            burn_in,
        })
    }

    /// Build the model whose characteristic polynomial is `∏(1 − p_i z⁻¹)`.
    pub fn from_poles(
        poles: &[Complex64],
        innovation: InnovationSpec,
        burn_in: usize,
    ) -> Result<Self, DisturbanceError> {
        Self::new(coefficients_from_poles(poles), innovation, burn_in)
    }

    pub fn white(innovation: InnovationSpec) -> Result<Self, DisturbanceError> {
        Self::new(Vec::new(), innovation, 0)
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn innovation(&self) -> &InnovationSpec {
        &self.innovation
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn with_innovation(&self, innovation: InnovationSpec) -> Result<Self, DisturbanceError> {
        Self::new(self.coefficients.clone(), innovation, self.burn_in)
    }

    pub fn generate<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<Complex64> {
        generate_ar(self, len, rng)
    }
}

/// AR coefficients `ρ` such that `1 − Σ ρ_i z⁻ⁱ = ∏(1 − p_i z⁻¹)`.
pub fn coefficients_from_poles(poles: &[Complex64]) -> Vec<Complex64> {
    let mut poly = vec![Complex64::new(1.0, 0.0)];
    for &p in poles {
        let mut next = vec![Complex64::new(0.0, 0.0); poly.len() + 1];
        for (i, &c) in poly.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * p;
        }
        poly = next;
    }
    poly[1..].iter().map(|c| -c).collect()
}

/// Disturbance poles used by the study cases: magnitudes and normalized
/// frequencies of the six-pole clutter model, `m·exp(−j·2π·f)`.
pub fn reference_poles() -> Vec<Complex64> {
    [
        (0.5, 0.4),
        (0.6, 0.2),
        (0.7, 0.0),
        (0.4, 0.1),
        (0.5, 0.3),
        (0.6, 0.35),
    ]
    .iter()
    .map(|&(m, f)| Complex64::from_polar(m, -2.0 * PI * f))
    .collect()
}

/// Largest eigenvalue modulus of the AR companion matrix (0 for order 0).
pub fn check_stability(coefficients: &[Complex64]) -> f64 {
    let p = coefficients.len();
    if coefficients.iter().all(|c| c.norm() == 0.0) {
        return 0.0;
    }
    if p == 1 {
        return coefficients[0].norm();
    }
    let mut companion = DMatrix::<Complex64>::zeros(p, p);
    for (j, &c) in coefficients.iter().enumerate() {
        companion[(0, j)] = c;
    }
    for i in 1..p {
        companion[(i, i - 1)] = Complex64::new(1.0, 0.0);
    }
    match companion
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .and_then(|s| s.eigenvalues())
    {
        Some(ev) => ev.iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => gelfand_radius(companion),
    }
}

/// Spectral radius from `‖A^(2^k)‖^(1/2^k)` with per-step renormalisation.
fn gelfand_radius(mut a: DMatrix<Complex64>) -> f64 {
    let mut log_scale = 0.0;
    let mut power = 1.0;
    for _ in 0..40 {
        let n = a.norm();
        if n == 0.0 {
            return 0.0;
        }
        a /= Complex64::new(n, 0.0);
        log_scale = 2.0 * (log_scale + n.ln());
        a = &a * &a;
        power *= 2.0;
    }
    ((log_scale + a.norm().ln()) / power).exp()
}

/// Samples `n = 1..len` of the AR recursion after `burn_in` warm-up steps
/// started from zero initial conditions.
pub fn generate_ar<R: Rng + ?Sized>(model: &ArModel, len: usize, rng: &mut R) -> Vec<Complex64> {
    let sampler = model.innovation.sampler();
    let p = model.order();
    let total = model.burn_in + len;
    let mut out = Vec::with_capacity(total);
    for n in 0..total {
        let mut c = sampler.sample(rng);
        for (i, rho) in model.coefficients.iter().enumerate().take(n.min(p)) {
            c += rho * out[n - 1 - i];
        }
        out.push(c);
    }
    out.split_off(model.burn_in)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AutocovarianceSource {
    AnalyticSolve,
    MonteCarlo,
}

/// Lags `r[m] = E[c_{n+m}·c_n*]`, `m = 0..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocovarianceSequence {
    pub lags: Vec<Complex64>,
    pub source: AutocovarianceSource,
}

impl AutocovarianceSequence {
    pub fn power(&self) -> f64 {
        self.lags[0].re
    }
}

/// Exact autocovariance through the impulse response: `r[m] = σ_w² Σ_k h[k+m]·h*[k]`.
///
/// The response is truncated once its tail energy falls below 1e-18 of the
/// accumulated energy.
pub fn true_autocovariance(model: &ArModel, max_lag: usize) -> AutocovarianceSequence {
    let h = impulse_response(model.coefficients());
    let sigma2 = model.innovation.power;
    let lags = (0..=max_lag)
        .map(|m| {
            let acc: Complex64 = h.iter().skip(m).zip(&h).map(|(a, b)| a * b.conj()).sum();
            acc * sigma2
        })
        .collect();
    AutocovarianceSequence {
        lags,
        source: AutocovarianceSource::AnalyticSolve,
    }
}

fn impulse_response(coefficients: &[Complex64]) -> Vec<Complex64> {
    let p = coefficients.len();
    let mut h: Vec<Complex64> = vec![Complex64::new(1.0, 0.0)];
    let mut energy = 1.0;
    let mut quiet = 0usize;
    while h.len() < 1_000_000 {
        let n = h.len();
        let mut next = Complex64::new(0.0, 0.0);
        for (i, rho) in coefficients.iter().enumerate().take(n.min(p)) {
            next += rho * h[n - 1 - i];
        }
        energy += next.norm_sqr();
        h.push(next);
        if next.norm_sqr() < 1e-18 * energy {
            quiet += 1;
            // p consecutive negligible samples means the recursion has died out.
            if quiet > p.max(1) {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    h
}

/// Sample autocovariance of one long simulated run (`1/(n−m)` normalization).
pub fn empirical_autocovariance<R: Rng + ?Sized>(
    model: &ArModel,
    max_lag: usize,
    samples: usize,
    rng: &mut R,
) -> AutocovarianceSequence {
    let c = generate_ar(model, samples, rng);
    let lags = (0..=max_lag)
        .map(|m| {
            let acc: Complex64 = c[m..].iter().zip(&c).map(|(a, b)| a * b.conj()).sum();
            acc / (samples - m) as f64
        })
        .collect();
    AutocovarianceSequence {
        lags,
        source: AutocovarianceSource::MonteCarlo,
    }
}
