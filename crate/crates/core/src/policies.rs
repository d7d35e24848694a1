//! Beam-selection policies and the start-up acquisition that turns the first
//! detection into an initial belief and per-bin noise table.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{
    detect_with_estimate, sigma_hat, CovarianceEstimate, DetectionReport, DetectorConfig,
    DetectorError,
};
use crate::environment::{get_angle_bin, EnvironmentError, MotionModel, RadarScene, TargetState};
use crate::mimo_signal::{
    directed_waveform, orthogonal_waveform, virtual_channel, AngleGrid, SignalError,
    WaveformMatrix,
};
use crate::par::{map_indexed, Execution};
use crate::pomcp::{amplitude_step, seed_particles, BeliefSet, PomcpError};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no confirmed detection after {scans} acquisition scans")]
    AcquisitionFailed { scans: usize },
    #[error("unknown policy '{0}' (expected pomcp, particle_filter, oracle or orthogonal)")]
    UnknownPolicy(String),
    #[error(transparent)]
    Pomcp(#[from] PomcpError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Pomcp,
    ParticleFilter,
    Oracle,
    Orthogonal,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Pomcp,
        PolicyKind::ParticleFilter,
        PolicyKind::Oracle,
        PolicyKind::Orthogonal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Pomcp => "pomcp",
            PolicyKind::ParticleFilter => "particle_filter",
            PolicyKind::Oracle => "oracle",
            PolicyKind::Orthogonal => "orthogonal",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == norm || (norm == "pf" && *k == PolicyKind::ParticleFilter))
            .ok_or_else(|| PolicyError::UnknownPolicy(s.to_string()))
    }
}

/// Virtual-channel vectors of every bin for both waveform families.
#[derive(Debug, Clone)]
pub struct BeamBank {
    directed: Vec<Vec<Complex64>>,
    orthogonal: Vec<Vec<Complex64>>,
    orthogonal_w: WaveformMatrix,
}

impl BeamBank {
    pub fn new(scene: &RadarScene) -> Result<Self, SignalError> {
        let orthogonal_w = orthogonal_waveform(&scene.array);
        let centers = scene.grid.centers();
        let mut directed = Vec::with_capacity(centers.len());
        let mut orthogonal = Vec::with_capacity(centers.len());
        for &theta in &centers {
            let w = directed_waveform(&scene.array, theta)?;
            directed.push(virtual_channel(&w, theta, &scene.array)?);
            orthogonal.push(virtual_channel(&orthogonal_w, theta, &scene.array)?);
        }
        Ok(Self {
            directed,
            orthogonal,
            orthogonal_w,
        })
    }

    pub fn directed(&self, bin: usize) -> &[Complex64] {
        &self.directed[bin]
    }

    pub fn orthogonal(&self, bin: usize) -> &[Complex64] {
        &self.orthogonal[bin]
    }

    pub fn orthogonal_waveform(&self) -> &WaveformMatrix {
        &self.orthogonal_w
    }
}

/// The physical radar: world model, precomputed beams and detector settings.
#[derive(Debug, Clone)]
pub struct RadarSystem {
    pub scene: RadarScene,
    pub beams: BeamBank,
    pub detector: DetectorConfig,
    /// Bins of the orthogonal scan are tested in parallel under `Parallel`.
    pub execution: Execution,
}

impl RadarSystem {
    pub fn new(scene: RadarScene, detector: DetectorConfig, execution: Execution) -> Result<Self, PolicyError> {
        let beams = BeamBank::new(&scene)?;
        Ok(Self {
            scene,
            beams,
            detector,
            execution,
        })
    }

    /// Illuminate `bin` with the directed waveform and test that bin.
    pub fn directed_scan<R: Rng + ?Sized>(
        &self,
        bin: usize,
        target: Option<&TargetState>,
        rng: &mut R,
    ) -> Result<(DetectionReport, CovarianceEstimate), PolicyError> {
        let w = directed_waveform(&self.scene.array, self.scene.grid.center(bin))?;
        let (y, _) = self.scene.synthesize_scan(&w, target, Some(bin), rng)?;
        Ok(detect_with_estimate(&y, self.beams.directed(bin), &self.detector)?)
    }

    /// Transmit the orthogonal waveform and test every bin.
    pub fn orthogonal_scan<R: Rng + ?Sized>(
        &self,
        target: Option<&TargetState>,
        rng: &mut R,
    ) -> Result<Vec<(DetectionReport, CovarianceEstimate)>, PolicyError> {
        let (y, _) = self
            .scene
            .synthesize_scan(self.beams.orthogonal_waveform(), target, None, rng)?;
        let results = map_indexed(self.execution, self.scene.grid.n_bins, |l| {
            detect_with_estimate(&y, self.beams.orthogonal(l), &self.detector)
        });
        Ok(results.into_iter().collect::<Result<Vec<_>, _>>()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    pub max_scans: usize,
    /// Spread of seeded particle ranges around the amplitude-derived range, km.
    pub range_std: f64,
    /// Seeded velocities are uniform on `[-v_max, v_max]²`, km/s.
    pub v_max: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            max_scans: 20,
            range_std: 2.0,
            v_max: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AcquisitionResult {
    pub belief: BeliefSet<TargetState>,
    pub sigma_table: Vec<f64>,
    pub beta_table: Vec<f64>,
    pub covariance: CovarianceEstimate,
    pub scans_used: usize,
    pub detected_bin: usize,
    pub alpha_hat: Complex64,
    pub range_seed: f64,
    /// Whether the detection came from the orthogonal phase.
    pub orthogonal_hit: bool,
}

/// Orthogonal search with directed confirmation, then a directed sweep in
/// order of integrated orthogonal evidence. The target is held at `truth`
/// for the whole phase.
pub fn acquire<R: Rng + ?Sized>(
    system: &RadarSystem,
    truth: Option<&TargetState>,
    cfg: &AcquisitionConfig,
    n_particles: usize,
    rng: &mut R,
) -> Result<AcquisitionResult, PolicyError> {
    let n_bins = system.scene.grid.n_bins;
    let mut residuals = Vec::new();
    let mut integrated = vec![0.0; n_bins];
    let mut scans = 0;
    let mut hit = None;

    'search: for _ in 0..cfg.max_scans {
        let results = system.orthogonal_scan(truth, rng)?;
        scans += 1;
        let best = (0..n_bins)
            .max_by(|&a, &b| results[a].0.statistic.total_cmp(&results[b].0.statistic))
            .unwrap_or(0);
        residuals.push(results[best].1.clone());
        for (acc, (r, _)) in integrated.iter_mut().zip(&results) {
            *acc += finite_or_max(r.statistic);
        }
        let mut fired: Vec<usize> = (0..n_bins).filter(|&l| results[l].0.detected).collect();
        fired.sort_by(|&a, &b| results[b].0.statistic.total_cmp(&results[a].0.statistic));
        for bin in fired {
            let (report, est) = system.directed_scan(bin, truth, rng)?;
            scans += 1;
            residuals.push(est);
            if report.detected {
                hit = Some((bin, report.alpha_hat, true));
                break 'search;
            }
        }
    }

    if hit.is_none() {
        let mut order: Vec<usize> = (0..n_bins).collect();
        order.sort_by(|&a, &b| integrated[b].total_cmp(&integrated[a]));
        for bin in order {
            let (report, est) = system.directed_scan(bin, truth, rng)?;
            scans += 1;
            residuals.push(est);
            if report.detected {
                hit = Some((bin, report.alpha_hat, false));
                break;
            }
        }
    }

    let Some((bin, alpha_hat, orthogonal_hit)) = hit else {
        return Err(PolicyError::AcquisitionFailed { scans });
    };
    let covariance = CovarianceEstimate::pooled(&residuals).expect("at least one scan");
    let sigma_table = (0..n_bins)
        .map(|l| sigma_hat(&covariance, system.beams.directed(l)))
        .collect::<Result<Vec<_>, _>>()?;
    let beta_table = sigma_table.iter().map(|&s| amplitude_step(s)).collect();
    let range_seed = system
        .scene
        .rcs
        .range_for_amplitude(alpha_hat.norm())
        .unwrap_or(system.scene.rcs.ref_range);
    let particles = seed_particles(
        &system.scene.grid,
        bin,
        range_seed,
        cfg.range_std,
        cfg.v_max,
        n_particles,
        rng,
    );
    Ok(AcquisitionResult {
        belief: BeliefSet::new(particles)?,
        sigma_table,
        beta_table,
        covariance,
        scans_used: scans,
        detected_bin: bin,
        alpha_hat,
        range_seed,
        orthogonal_hit,
    })
}

fn finite_or_max(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        f64::MAX / 1e6
    }
}

/// Particle mean propagated one step by the deterministic part of the motion.
pub fn pf_predict(belief: &BeliefSet<TargetState>, motion: &MotionModel) -> TargetState {
    motion.predict(&belief.mean())
}

/// Bin of the predicted position; positions outside the field of view map
/// to the nearest edge bin.
pub fn pf_policy_step(belief: &BeliefSet<TargetState>, grid: &AngleGrid, motion: &MotionModel) -> usize {
    let p = pf_predict(belief, motion);
    nearest_bin(p.y.atan2(p.x), grid)
}

pub fn nearest_bin(theta: f64, grid: &AngleGrid) -> usize {
    if let Some(bin) = grid.bin_of_angle(theta) {
        return bin;
    }
    if theta < grid.fov_min {
        0
    } else {
        grid.n_bins - 1
    }
}

/// True bin of the next state; `None` means the target has left the view.
pub fn oracle_policy_step(next: &TargetState, grid: &AngleGrid) -> Option<usize> {
    get_angle_bin(next.x, next.y, grid).ok()
}
