//! Co-located MIMO array model: steering vectors, transmit waveform matrices
//! and the virtual-channel vectors seen by the detector.
//!
//! Both arrays are uniform linear arrays. Element `n` carries the phase
//! `exp(j·2π·d·n·sin θ)` where `d` is the element spacing in wavelengths,
//! so the default half-wavelength spacing gives `exp(j·π·n·sin θ)`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("angle {0} rad is outside [-pi/2, pi/2]")]
    AngleOutOfRange(f64),
    #[error("invalid array configuration: {0}")]
    InvalidArray(String),
    #[error("invalid angle grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    /// Element spacing in wavelengths.
    #[serde(default = "default_spacing")]
    pub element_spacing: f64,
    /// Total transmit power `P_T` (linear).
    pub total_power: f64,
}

fn default_spacing() -> f64 {
    0.5
}

impl ArrayConfig {
    pub fn new(n_tx: usize, n_rx: usize, total_power: f64) -> Result<Self, SignalError> {
        let cfg = Self {
            n_tx,
            n_rx,
            element_spacing: default_spacing(),
            total_power,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.n_tx == 0 || self.n_rx == 0 {
            return Err(SignalError::InvalidArray(
                "n_tx and n_rx must be at least 1".into(),
            ));
        }
        if !(self.total_power > 0.0) || !self.total_power.is_finite() {
            return Err(SignalError::InvalidArray(
                "total_power must be positive".into(),
            ));
        }
        if !(self.element_spacing > 0.0) {
            return Err(SignalError::InvalidArray(
                "element_spacing must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of virtual channels `N = N_T·N_R`.
    pub fn n_virtual(&self) -> usize {
        self.n_tx * self.n_rx
    }
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            n_tx: 100,
            n_rx: 100,
            element_spacing: 0.5,
            total_power: 1.0,
        }
    }
}

/// Uniform partition of the azimuth field of view into `n_bins` half-open bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleGrid {
    /// Lower edge of the field of view, radians.
    pub fov_min: f64,
    /// Upper edge (exclusive), radians.
    pub fov_max: f64,
    pub n_bins: usize,
}

impl Default for AngleGrid {
    fn default() -> Self {
        Self {
            fov_min: -FRAC_PI_2,
            fov_max: FRAC_PI_2,
            n_bins: 100,
        }
    }
}

impl AngleGrid {
    pub fn new(fov_min: f64, fov_max: f64, n_bins: usize) -> Result<Self, SignalError> {
        let grid = Self {
            fov_min,
            fov_max,
            n_bins,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.n_bins == 0 {
            return Err(SignalError::InvalidGrid("n_bins must be at least 1".into()));
        }
        if !(self.fov_min < self.fov_max) {
            return Err(SignalError::InvalidGrid("fov_min must be below fov_max".into()));
        }
        if self.fov_min < -FRAC_PI_2 - 1e-12 || self.fov_max > FRAC_PI_2 + 1e-12 {
            return Err(SignalError::InvalidGrid(
                "field of view must lie within [-pi/2, pi/2]".into(),
            ));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.fov_max - self.fov_min) / self.n_bins as f64
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.fov_min + (bin as f64 + 0.5) * self.bin_width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins).map(|k| self.center(k)).collect()
    }

    /// Bin containing `theta`, or `None` outside `[fov_min, fov_max)`.
    ///
    /// A point on a bin edge belongs to the bin whose lower edge it is. The
    /// fractional position is snapped to the nearest integer when it lies
    /// within 1e-9 of an edge so that rounding in `atan2` cannot move exact
    /// edge points.
    pub fn bin_of_angle(&self, theta: f64) -> Option<usize> {
        if !theta.is_finite() {
            return None;
        }
        let mut pos = (theta - self.fov_min) / self.bin_width();
        let nearest = pos.round();
        if (pos - nearest).abs() < 1e-9 {
            pos = nearest;
        }
        if pos < 0.0 {
            return None;
        }
        let bin = pos.floor() as usize;
        (bin < self.n_bins).then_some(bin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Transmit,
    Receive,
}

fn check_angle(theta: f64) -> Result<(), SignalError> {
    if theta.is_finite() && (-FRAC_PI_2 - 1e-12..=FRAC_PI_2 + 1e-12).contains(&theta) {
        Ok(())
    } else {
        Err(SignalError::AngleOutOfRange(theta))
    }
}

pub fn steering_vector(
    cfg: &ArrayConfig,
    theta: f64,
    side: Side,
) -> Result<Vec<Complex64>, SignalError> {
    check_angle(theta)?;
    let n = match side {
        Side::Transmit => cfg.n_tx,
        Side::Receive => cfg.n_rx,
    };
    let step = 2.0 * PI * cfg.element_spacing * theta.sin();
    Ok((0..n)
        .map(|k| Complex64::from_polar(1.0, step * k as f64))
        .collect())
}

/// Square `N_T × N_T` complex waveform matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl WaveformMatrix {
    pub fn from_entries(dim: usize, entries: Vec<Complex64>) -> Self {
        assert_eq!(entries.len(), dim * dim, "waveform matrix must be square");
        Self { dim, entries }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_entries(dim, vec![Complex64::new(0.0, 0.0); dim * dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim + col]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    /// `trace(W·Wᴴ)`, i.e. the squared Frobenius norm.
    pub fn trace_power(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `Wᵀ·a`.
    pub fn transpose_mul(&self, a: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(a.len(), self.dim);
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim];
        for (row, &ar) in a.iter().enumerate() {
            let line = &self.entries[row * self.dim..(row + 1) * self.dim];
            for (o, &w) in out.iter_mut().zip(line) {
                *o += w * ar;
            }
        }
        out
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|&z| z * factor).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

/// Beam-focused waveform `W = (√P_T / N_T)·a_T*(θ)·a_Tᵀ(θ)`.
///
/// This is the rank-one square root of `(P_T/N_T)·a_T*·a_Tᵀ`; it satisfies
/// `Wᵀ·a_T(θ) = √P_T·a_T(θ)` and attains the maximal gain `P_T·N_T` at `θ`.
pub fn directed_waveform(cfg: &ArrayConfig, theta: f64) -> Result<WaveformMatrix, SignalError> {
    let a = steering_vector(cfg, theta, Side::Transmit)?;
    let n = cfg.n_tx;
    let scale = cfg.total_power.sqrt() / n as f64;
    let mut entries = Vec::with_capacity(n * n);
    for ai in &a {
        let left = ai.conj() * scale;
        entries.extend(a.iter().map(|&aj| left * aj));
    }
    Ok(WaveformMatrix::from_entries(n, entries))
}

/// `W_orth = √(P_T/N_T)·I`.
pub fn orthogonal_waveform(cfg: &ArrayConfig) -> WaveformMatrix {
    let n = cfg.n_tx;
    let diag = Complex64::new((cfg.total_power / n as f64).sqrt(), 0.0);
    let mut w = WaveformMatrix::zeros(n);
    for k in 0..n {
        w.entries[k * n + k] = diag;
    }
    w
}

/// `v = (Wᵀ·a_T(θ)) ⊗ a_R(θ)`, index `i·N_R + j` for transmit `i`, receive `j`.
pub fn virtual_channel(
    w: &WaveformMatrix,
    theta: f64,
    cfg: &ArrayConfig,
) -> Result<Vec<Complex64>, SignalError> {
    if w.dim() != cfg.n_tx {
        return Err(SignalError::InvalidArray(format!(
            "waveform dimension {} does not match n_tx {}",
            w.dim(),
            cfg.n_tx
        )));
    }
    let a_t = steering_vector(cfg, theta, Side::Transmit)?;
    let a_r = steering_vector(cfg, theta, Side::Receive)?;
    let tx = w.transpose_mul(&a_t);
    let mut v = Vec::with_capacity(cfg.n_virtual());
    for t in &tx {
        v.extend(a_r.iter().map(|&r| t * r));
    }
    Ok(v)
}

/// Transmit beampattern `a_Tᵀ(θ)·W·Wᴴ·a_T*(θ) = ‖Wᴴ·a_T*(θ)‖²`.
pub fn beam_gain(w: &WaveformMatrix, theta: f64, cfg: &ArrayConfig) -> Result<f64, SignalError> {
    // Wᴴ a* = conj(Wᵀ a), so the gain equals ‖Wᵀ a‖².
    let a = steering_vector(cfg, theta, Side::Transmit)?;
    Ok(w.transpose_mul(&a).iter().map(|z| z.norm_sqr()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ArrayConfig {
        ArrayConfig::new(8, 5, 2.5).unwrap()
    }

    #[test]
    fn broadside_steering_is_all_ones() {
        let a = steering_vector(&small(), 0.0, Side::Transmit).unwrap();
        assert!(a.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn steering_norm_and_thirty_degrees() {
        let cfg = small();
        let a = steering_vector(&cfg, 0.37, Side::Transmit).unwrap();
        let norm: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 8.0).abs() < 1e-12);
        let a30 = steering_vector(&cfg, 30f64.to_radians(), Side::Receive).unwrap();
        assert_eq!(a30.len(), 5);
        assert!((a30[1] - Complex64::new(0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn steering_rejects_out_of_range_angle() {
        assert!(matches!(
            steering_vector(&small(), 2.0, Side::Transmit),
            Err(SignalError::AngleOutOfRange(_))
        ));
    }

    #[test]
    fn directed_waveform_properties() {
        let cfg = small();
        let theta = -0.3;
        let w = directed_waveform(&cfg, theta).unwrap();
        assert!((w.trace_power() - cfg.total_power).abs() < 1e-9 * cfg.total_power);
        let g = beam_gain(&w, theta, &cfg).unwrap();
        assert!((g - cfg.total_power * 8.0).abs() < 1e-9 * g);

        // W·Wᴴ = (P_T/N_T)·a*·aᵀ
        let a = steering_vector(&cfg, theta, Side::Transmit).unwrap();
        let n = cfg.n_tx;
        for i in 0..n {
            for j in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    acc += w.get(i, k) * w.get(j, k).conj();
                }
                let expected = a[i].conj() * a[j] * (cfg.total_power / n as f64);
                assert!((acc - expected).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn directed_waveform_special_cases() {
        let single = ArrayConfig::new(1, 3, 4.0).unwrap();
        let w = directed_waveform(&single, 0.4).unwrap();
        assert!((w.get(0, 0) - Complex64::new(2.0, 0.0)).norm() < 1e-12);
        assert_eq!(w, orthogonal_waveform(&single));

        let unit = ArrayConfig::new(4, 1, 1.0).unwrap();
        let w0 = directed_waveform(&unit, 0.0).unwrap();
        assert!(w0
            .entries()
            .iter()
            .all(|z| (z - Complex64::new(0.25, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn orthogonal_waveform_properties() {
        let cfg = ArrayConfig::new(100, 2, 1.0).unwrap();
        let w = orthogonal_waveform(&cfg);
        assert!((w.get(3, 3).re - 0.1).abs() < 1e-15);
        assert_eq!(w.get(3, 4), Complex64::new(0.0, 0.0));
        assert!((w.trace_power() - 1.0).abs() < 1e-9);
        for theta in [-1.2, -0.2, 0.0, 0.9] {
            assert!((beam_gain(&w, theta, &cfg).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn virtual_channel_norms() {
        let cfg = small();
        let theta = 0.21;
        let wd = directed_waveform(&cfg, theta).unwrap();
        let v = virtual_channel(&wd, theta, &cfg).unwrap();
        assert_eq!(v.len(), 40);
        let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        assert!((n2 - cfg.total_power * 40.0).abs() < 1e-9 * n2);

        let wo = orthogonal_waveform(&cfg);
        let vo = virtual_channel(&wo, theta, &cfg).unwrap();
        let n2o: f64 = vo.iter().map(|z| z.norm_sqr()).sum();
        assert!((n2o - cfg.total_power * 5.0).abs() < 1e-9 * n2o);
    }

    #[test]
    fn scalar_array_virtual_channel() {
        let cfg = ArrayConfig::new(1, 1, 9.0).unwrap();
        let w = orthogonal_waveform(&cfg);
        let v = virtual_channel(&w, 0.3, &cfg).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v[0] - Complex64::new(3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_waveform_has_zero_gain() {
        let cfg = small();
        assert_eq!(beam_gain(&WaveformMatrix::zeros(8), 0.1, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn grid_binning() {
        let grid = AngleGrid::default();
        assert!((grid.bin_width() - 1.8f64.to_radians()).abs() < 1e-15);
        assert_eq!(grid.bin_of_angle(-FRAC_PI_2), Some(0));
        assert_eq!(grid.bin_of_angle(FRAC_PI_2), None);
        assert_eq!(grid.bin_of_angle(0.0), Some(50));
        assert_eq!(grid.bin_of_angle((-45f64).to_radians()), Some(25));
        for k in 0..grid.n_bins {
            assert_eq!(grid.bin_of_angle(grid.center(k)), Some(k));
        }
        let c = grid.centers();
        assert!(c.windows(2).all(|w| w[1] > w[0]));
    }
}
