//! Ground-truth world: target kinematics, azimuth binning, the range law of
//! the target amplitude, and synthesis of received scans.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disturbance::{generate_ar, ArModel};
use crate::mimo_signal::{virtual_channel, AngleGrid, ArrayConfig, SignalError, WaveformMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvironmentError {
    #[error("target at ({x}, {y}) km is outside the field of view")]
    OutOfView { x: f64, y: f64 },
    #[error("target range must be positive")]
    ZeroRange,
    #[error("invalid model parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Hidden kinematic state `[x, Vx, y, Vy]` in km and km/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TargetState {
    pub x: f64,
    pub vx: f64,
    pub y: f64,
    pub vy: f64,
}

impl TargetState {
    pub const fn new(x: f64, vx: f64, y: f64, vy: f64) -> Self {
        Self { x, vx, y, vy }
    }

    pub fn from_array(s: [f64; 4]) -> Self {
        Self::new(s[0], s[1], s[2], s[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.vx, self.y, self.vy]
    }

    pub fn range(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn azimuth(&self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// White-acceleration motion model with scan interval `dt` and process
/// noise standard deviation `sigma_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionModel {
    /// Scan interval, seconds.
    pub dt: f64,
    pub sigma_s: f64,
}

impl MotionModel {
    pub fn new(dt: f64, sigma_s: f64) -> Result<Self, EnvironmentError> {
        let m = Self { dt, sigma_s };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), EnvironmentError> {
        if !(self.dt > 0.0) || !(self.sigma_s >= 0.0) {
            return Err(EnvironmentError::Invalid(
                "dt must be positive and sigma_s non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Block-diagonal `A` with blocks `[[1, dt], [0, 1]]`.
    pub fn transition_matrix(&self) -> [[f64; 4]; 4] {
        let dt = self.dt;
        [
            [1.0, dt, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, dt],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// Block `G` with columns `[dt²/2, dt]ᵀ`.
    pub fn noise_gain(&self) -> [[f64; 2]; 4] {
        let dt = self.dt;
        [[0.5 * dt * dt, 0.0], [dt, 0.0], [0.0, 0.5 * dt * dt], [0.0, dt]]
    }

    /// `A·s`.
    pub fn predict(&self, s: &TargetState) -> TargetState {
        TargetState::new(s.x + self.dt * s.vx, s.vx, s.y + self.dt * s.vy, s.vy)
    }

    /// `A·s + G·w`, `w ~ N(0, σ_s²·I₂)`.
    pub fn step<R: Rng + ?Sized>(&self, s: &TargetState, rng: &mut R) -> TargetState {
        let mut next = self.predict(s);
        if self.sigma_s > 0.0 {
            let wx: f64 = StandardNormal.sample(rng);
            let wy: f64 = StandardNormal.sample(rng);
            let (wx, wy) = (wx * self.sigma_s, wy * self.sigma_s);
            let half = 0.5 * self.dt * self.dt;
            next.x += half * wx;
            next.vx += self.dt * wx;
            next.y += half * wy;
            next.vy += self.dt * wy;
        }
        next
    }
}

pub fn transition<R: Rng + ?Sized>(s: &TargetState, model: &MotionModel, rng: &mut R) -> TargetState {
    model.step(s, rng)
}

/// Target amplitude law `|α(R)| = ref_amplitude·(ref_range/R)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RcsModel {
    pub ref_amplitude: f64,
    /// Reference range, km.
    pub ref_range: f64,
}

impl RcsModel {
    pub fn new(ref_amplitude: f64, ref_range: f64) -> Result<Self, EnvironmentError> {
        if !(ref_amplitude > 0.0) || !(ref_range > 0.0) {
            return Err(EnvironmentError::Invalid(
                "reference amplitude and range must be positive".into(),
            ));
        }
        Ok(Self {
            ref_amplitude,
            ref_range,
        })
    }

    /// Amplitude that gives `snr_db` relative to `noise_power` at `range`.
    pub fn calibrated(range: f64, snr_db: f64, noise_power: f64) -> Result<Self, EnvironmentError> {
        if !(noise_power > 0.0) {
            return Err(EnvironmentError::Invalid("noise power must be positive".into()));
        }
        let amp2 = noise_power * 10f64.powf(snr_db / 10.0);
        Self::new(amp2.sqrt(), range)
    }

    pub fn amplitude_at(&self, range: f64) -> Result<f64, EnvironmentError> {
        if !(range > 0.0) {
            return Err(EnvironmentError::ZeroRange);
        }
        let ratio = self.ref_range / range;
        Ok(self.ref_amplitude * ratio * ratio)
    }

    /// Invert the law: `R = ref_range·√(ref_amplitude/|α|)`.
    pub fn range_for_amplitude(&self, amplitude: f64) -> Option<f64> {
        (amplitude > 0.0).then(|| self.ref_range * (self.ref_amplitude / amplitude).sqrt())
    }
}

pub fn get_angle_bin(x: f64, y: f64, grid: &AngleGrid) -> Result<usize, EnvironmentError> {
    if x == 0.0 && y == 0.0 {
        return Err(EnvironmentError::ZeroRange);
    }
    grid.bin_of_angle(y.atan2(x))
        .ok_or(EnvironmentError::OutOfView { x, y })
}

/// `α = |α(R)|·e^{jφ}`, `φ ~ U(0, 2π)`.
pub fn get_rcs<R: Rng + ?Sized>(
    s: &TargetState,
    model: &RcsModel,
    rng: &mut R,
) -> Result<Complex64, EnvironmentError> {
    let amp = model.amplitude_at(s.range())?;
    let phase = rng.random::<f64>() * 2.0 * PI;
    Ok(Complex64::from_polar(amp, phase))
}

/// `10·log₁₀(|α(R)|² / noise_power)`.
pub fn snr_db(s: &TargetState, rcs: &RcsModel, noise_power: f64) -> Result<f64, EnvironmentError> {
    let amp = rcs.amplitude_at(s.range())?;
    Ok(10.0 * (amp * amp / noise_power).log10())
}

/// What actually happened during one scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanTruth {
    pub alpha: Option<Complex64>,
    pub target_bin: Option<usize>,
    pub illuminated_bin: Option<usize>,
}

/// Which angle the target's echo is steered from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSteering {
    /// The center of the bin containing the target: `y = α·v_l + c`.
    #[default]
    BinCenter,
    /// The target's exact azimuth, including the beampattern loss between
    /// the bin center and the target.
    TrueAngle,
}

/// Radar world shared by every scan of a trial.
#[derive(Debug, Clone)]
pub struct RadarScene {
    pub array: ArrayConfig,
    pub grid: AngleGrid,
    pub disturbance: ArModel,
    pub rcs: RcsModel,
    pub steering: TargetSteering,
}

impl RadarScene {
    /// Received vector `y = α·v(W, θ) + c` for a target at `target` (or
    /// `y = c` when absent), `θ` chosen by the steering model. Each call
    /// draws a fresh disturbance run.
    pub fn synthesize_scan<R: Rng + ?Sized>(
        &self,
        w: &WaveformMatrix,
        target: Option<&TargetState>,
        illuminated_bin: Option<usize>,
        rng: &mut R,
    ) -> Result<(Vec<Complex64>, ScanTruth), EnvironmentError> {
        let mut y = generate_ar(&self.disturbance, self.array.n_virtual(), rng);
        let mut truth = ScanTruth {
            alpha: None,
            target_bin: None,
            illuminated_bin,
        };
        if let Some(s) = target {
            let alpha = get_rcs(s, &self.rcs, rng)?;
            let theta = s.azimuth();
            truth.alpha = Some(alpha);
            truth.target_bin = self.grid.bin_of_angle(theta);
            let echo_angle = match self.steering {
                TargetSteering::BinCenter => truth.target_bin.map(|b| self.grid.center(b)),
                TargetSteering::TrueAngle => {
                    (theta.abs() <= std::f64::consts::FRAC_PI_2).then_some(theta)
                }
            };
            if let Some(angle) = echo_angle {
                let v = virtual_channel(w, angle, &self.array)?;
                for (yi, vi) in y.iter_mut().zip(&v) {
                    *yi += alpha * vi;
                }
            }
        }
        Ok((y, truth))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noiseless_kinematics() {
        let m = MotionModel::new(1.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s0 = TargetState::new(60.0, 0.2, -60.0, 0.2);
        let s1 = transition(&s0, &m, &mut rng);
        assert!((s1.x - 60.2).abs() < 1e-12 && (s1.y + 59.8).abs() < 1e-12);
        assert_eq!((s1.vx, s1.vy), (0.2, 0.2));
        let still = TargetState::new(3.0, 0.0, 4.0, 0.0);
        assert_eq!(transition(&still, &m, &mut rng), still);
    }

    #[test]
    fn block_matrices() {
        let m = MotionModel::new(2.0, 0.1).unwrap();
        let a = m.transition_matrix();
        assert_eq!(a[0], [1.0, 2.0, 0.0, 0.0]);
        assert_eq!(a[3], [0.0, 0.0, 0.0, 1.0]);
        let g = m.noise_gain();
        assert_eq!(g[0], [2.0, 0.0]);
        assert_eq!(g[3], [0.0, 2.0]);
    }

    #[test]
    fn angle_bins() {
        let grid = AngleGrid::default();
        assert_eq!(get_angle_bin(60.0, -60.0, &grid), Ok(25));
        assert_eq!(get_angle_bin(1.0, 0.0, &grid), Ok(50));
        assert!(matches!(
            get_angle_bin(-1.0, 0.5, &grid),
            Err(EnvironmentError::OutOfView { .. })
        ));
        assert_eq!(get_angle_bin(0.0, 0.0, &grid), Err(EnvironmentError::ZeroRange));
        // a point on the edge between bins 50 and 51
        let edge = grid.fov_min + 51.0 * grid.bin_width();
        assert_eq!(get_angle_bin(edge.cos(), edge.sin(), &grid), Ok(51));
    }

    #[test]
    fn range_law() {
        let rcs = RcsModel::new(0.3, 50.0).unwrap();
        assert!((rcs.amplitude_at(50.0).unwrap() - 0.3).abs() < 1e-15);
        assert!((rcs.amplitude_at(100.0).unwrap() - 0.075).abs() < 1e-15);
        assert_eq!(rcs.amplitude_at(0.0), Err(EnvironmentError::ZeroRange));
        let r = rcs.range_for_amplitude(0.075).unwrap();
        assert!((r - 100.0).abs() < 1e-12);
    }

    #[test]
    fn rcs_phase_and_modulus() {
        let rcs = RcsModel::new(2.0, 10.0).unwrap();
        let s = TargetState::new(6.0, 0.0, 8.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<_> = (0..2000).map(|_| get_rcs(&s, &rcs, &mut rng).unwrap()).collect();
        assert!(draws.iter().all(|a| (a.norm() - 2.0).abs() < 1e-12));
        let mean = draws.iter().sum::<Complex64>() / 2000.0;
        assert!(mean.norm() < 0.15);
    }

    #[test]
    fn snr_examples() {
        let rcs = RcsModel::calibrated(84.853, -17.0, 12.8).unwrap();
        let s0 = TargetState::new(60.0, 0.2, -60.0, 0.2);
        let start = snr_db(&s0, &rcs, 12.8).unwrap();
        assert!((start + 17.0).abs() < 1e-3);
        let unit = RcsModel::new(2.0, 1.0).unwrap();
        assert!(snr_db(&TargetState::new(1.0, 0.0, 0.0, 0.0), &unit, 4.0).unwrap().abs() < 1e-12);
        let end = TargetState::new(80.0, 0.2, -40.0, 0.2);
        let drop = snr_db(&end, &rcs, 12.8).unwrap() - start;
        assert!((drop - 40.0 * (84.853 / end.range()).log10()).abs() < 1e-3);
        assert!((drop + 0.92).abs() < 0.01, "{drop}");
    }
}
