//! Experiment orchestration: configuration, the per-scan tracking loop,
//! seeded Monte Carlo over trials, metrics and file export.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{threshold_from_pfa, DetectorConfig, DetectorError, Taper};
use crate::disturbance::{
    coefficients_from_poles, reference_poles, true_autocovariance, ArModel, DisturbanceError,
    InnovationSpec, DEFAULT_BURN_IN,
};
use crate::environment::{
    get_angle_bin, snr_db, EnvironmentError, MotionModel, RadarScene, RcsModel, TargetState,
    TargetSteering,
};
use crate::mimo_signal::{AngleGrid, ArrayConfig, SignalError};
use crate::par::{map_indexed, with_threads, Execution};
use crate::policies::{
    acquire, oracle_policy_step, pf_policy_step, AcquisitionConfig, PolicyError, PolicyKind,
    RadarSystem,
};
use crate::pomcp::{
    discretize_observation, update_belief, Observation, Planner, PomcpError, PomcpParams,
    RadarGenerator, UpdateOutcome,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot parse configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Pomcp(#[from] PomcpError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Disturbance(#[from] DisturbanceError),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> HarnessError {
    let context = context.into();
    move |source| HarnessError::Io { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub fov_min_deg: f64,
    pub fov_max_deg: f64,
    pub n_bins: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            fov_min_deg: -90.0,
            fov_max_deg: 90.0,
            n_bins: 100,
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<AngleGrid, SignalError> {
        AngleGrid::new(self.fov_min_deg.to_radians(), self.fov_max_deg.to_radians(), self.n_bins)
    }
}

/// AR disturbance. Give either `poles` as `[magnitude, turns]` pairs (pole
/// `m·e^{-j2π·turns}`) or `coefficients` as `[re, im]` pairs; with neither,
/// the reference six-pole model is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poles: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<[f64; 2]>>,
    pub innovation: InnovationSpec,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self {
            poles: Some(
                reference_poles()
                    .iter()
                    .map(|p| [p.norm(), -p.arg() / (2.0 * PI)])
                    .map(|pair| pair.map(|v| (v * 1e12).round() / 1e12 + 0.0))
                    .collect(),
            ),
            coefficients: None,
            innovation: InnovationSpec::complex_t(2.0, 1.0).expect("valid default"),
            burn_in: DEFAULT_BURN_IN,
        }
    }
}

impl DisturbanceConfig {
    pub fn build(&self) -> Result<ArModel, HarnessError> {
        let coefficients = match (&self.poles, &self.coefficients) {
            (Some(_), Some(_)) => {
                return Err(HarnessError::Config(
                    "disturbance: give poles or coefficients, not both".into(),
                ))
            }
            (Some(poles), None) => coefficients_from_poles(
                &poles
                    .iter()
                    .map(|&[m, f]| Complex64::from_polar(m, -2.0 * PI * f))
                    .collect::<Vec<_>>(),
            ),
            (None, Some(c)) => c.iter().map(|&[re, im]| Complex64::new(re, im)).collect(),
            (None, None) => coefficients_from_poles(&reference_poles()),
        };
        Ok(ArModel::new(coefficients, self.innovation, self.burn_in)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// `[x, vx, y, vy]` in km and km/s.
    pub initial_state: [f64; 4],
    /// Scan interval, s.
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub sigma_s: f64,
    /// SNR `|α|²/r[0]` at the initial range.
    #[serde(default = "default_snr")]
    pub initial_snr_db: f64,
    #[serde(default)]
    pub steering: TargetSteering,
}

fn default_dt() -> f64 {
    1.0
}

fn default_snr() -> f64 {
    -17.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub p_fa: f64,
    pub taper: Taper,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<usize>,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            p_fa: 1e-4,
            taper: Taper::default(),
            bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyKind>,
    pub n_trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub t_max: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub array: ArrayConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub disturbance: DisturbanceConfig,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub pomcp: PomcpParams,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
}

fn default_name() -> String {
    "custom".into()
}

fn default_policies() -> Vec<PolicyKind> {
    PolicyKind::ALL.to_vec()
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// Trials, planner simulations and particles used by the desk-scale presets.
pub const DESK_TRIALS: usize = 25;
pub const DESK_SIMULATIONS: usize = 2000;

impl ExperimentConfig {
    fn study(name: &str, initial_state: [f64; 4], sigma_s: f64) -> Self {
        Self {
            name: name.into(),
            policies: default_policies(),
            n_trials: 250,
            base_seed: 1,
            t_max: 100,
            output: PathBuf::from("results").join(name),
            threads: 0,
            array: ArrayConfig::default(),
            grid: GridConfig::default(),
            disturbance: DisturbanceConfig::default(),
            scenario: ScenarioConfig {
                initial_state,
                dt: 1.0,
                sigma_s,
                initial_snr_db: -17.0,
                steering: TargetSteering::default(),
            },
            detector: DetectorSection::default(),
            pomcp: PomcpParams::default(),
            acquisition: AcquisitionConfig::default(),
        }
    }

    /// Fast, manoeuvring target.
    pub fn case1() -> Self {
        Self::study("case1", [60.0, 0.2, -60.0, 0.2], 0.03)
    }

    /// Faster, steadier target moving away.
    pub fn case2() -> Self {
        Self::study("case2", [60.0, 0.35, -60.0, 0.35], 0.005)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "case1" => Some(Self::case1()),
            "case2" => Some(Self::case2()),
            _ => None,
        }
    }

    /// Scale down to the desk budget.
    pub fn desk(mut self) -> Self {
        self.n_trials = DESK_TRIALS;
        self.pomcp.n_sim = DESK_SIMULATIONS;
        self.pomcp.n_particles = DESK_SIMULATIONS;
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.t_max == 0 {
            return Err(HarnessError::Config("t_max must be >= 1".into()));
        }
        if self.n_trials == 0 {
            return Err(HarnessError::Config("n_trials must be >= 1".into()));
        }
        if self.policies.is_empty() {
            return Err(HarnessError::Config("at least one policy is required".into()));
        }
        if self.scenario.initial_state.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::Config("initial state must be finite".into()));
        }
        if !(self.acquisition.v_max >= 0.0 && self.acquisition.range_std >= 0.0) {
            return Err(HarnessError::Config("acquisition spreads must be non-negative".into()));
        }
        self.array.validate()?;
        self.grid.build()?;
        self.disturbance.build()?;
        MotionModel::new(self.scenario.dt, self.scenario.sigma_s)?;
        threshold_from_pfa(self.detector.p_fa)?;
        self.pomcp.validate()?;
        let s0 = TargetState::from_array(self.scenario.initial_state);
        get_angle_bin(s0.x, s0.y, &self.grid.build()?)?;
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_trials as u64)
            .map(|i| self.base_seed.wrapping_add(i))
            .collect()
    }
}

/// Everything a trial needs, built once from a configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub system: RadarSystem,
    pub motion: MotionModel,
    /// Lag-0 power `r[0]` of the disturbance.
    pub noise_power: f64,
    pub lambda: f64,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, HarnessError> {
        Self::with_execution(config, Execution::Parallel)
    }

    pub fn with_execution(config: ExperimentConfig, execution: Execution) -> Result<Self, HarnessError> {
        config.validate()?;
        let disturbance = config.disturbance.build()?;
        let noise_power = true_autocovariance(&disturbance, 0).power();
        let s0 = TargetState::from_array(config.scenario.initial_state);
        // a noiseless model has no SNR scale; calibrate against unit power
        let reference_power = if noise_power > 0.0 { noise_power } else { 1.0 };
        let rcs = RcsModel::calibrated(s0.range(), config.scenario.initial_snr_db, reference_power)?;
        let lambda = threshold_from_pfa(config.detector.p_fa)?;
        let detector = DetectorConfig {
            bandwidth: config.detector.bandwidth,
            taper: config.detector.taper,
            lambda,
        };
        let scene = RadarScene {
            array: config.array,
            grid: config.grid.build()?,
            disturbance,
            rcs,
            steering: config.scenario.steering,
        };
        let system = RadarSystem::new(scene, detector, execution)?;
        let motion = MotionModel::new(config.scenario.dt, config.scenario.sigma_s)?;
        Ok(Self {
            config,
            system,
            motion,
            noise_power,
            lambda,
        })
    }

    pub fn initial_state(&self) -> TargetState {
        TargetState::from_array(self.config.scenario.initial_state)
    }

    /// Ground-truth states `s_0..s_{t_max}` for a trial seed.
    pub fn trajectory(&self, seed: u64) -> Vec<TargetState> {
        let mut rng = stream(seed, TRAJECTORY_STREAM);
        let mut states = Vec::with_capacity(self.config.t_max + 1);
        states.push(self.initial_state());
        for _ in 0..self.config.t_max {
            let next = self.motion.step(states.last().expect("non-empty"), &mut rng);
            states.push(next);
        }
        states
    }

    /// SNR in dB of a state, `|α(R)|²/r[0]`.
    pub fn snr_db(&self, s: &TargetState) -> Option<f64> {
        snr_db(s, &self.system.scene.rcs, self.noise_power).ok()
    }
}

const TRAJECTORY_STREAM: u64 = 0;
const SENSOR_STREAM: u64 = 1;
const AGENT_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One scan of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub trial: usize,
    pub t: usize,
    pub policy: PolicyKind,
    pub x: f64,
    pub vx: f64,
    pub y: f64,
    pub vy: f64,
    pub est_x: Option<f64>,
    pub est_vx: Option<f64>,
    pub est_y: Option<f64>,
    pub est_vy: Option<f64>,
    pub chosen_bin: Option<usize>,
    pub true_bin: usize,
    pub statistic: f64,
    /// The test fired in the bin that contains the target.
    pub detected: bool,
    pub alpha_abs: f64,
    pub snr_db: f64,
    pub reward: f64,
}

/// Per-step CSV header, in column order.
pub const RECORD_COLUMNS: [&str; 18] = [
    "trial", "t", "policy", "x", "vx", "y", "vy", "est_x", "est_vx", "est_y", "est_vy",
    "chosen_bin", "true_bin", "statistic", "detected", "alpha_abs", "snr_db", "reward",
];

impl StepRecord {
    pub fn estimate(&self) -> Option<TargetState> {
        Some(TargetState::new(self.est_x?, self.est_vx?, self.est_y?, self.est_vy?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Complete,
    AcquisitionFailed,
    OutOfView,
    TrackLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub policy: PolicyKind,
    pub seed: u64,
    pub status: TrialStatus,
    pub steps: usize,
    pub acquisition_scans: usize,
    pub acquisition_bin: Option<usize>,
    /// Belief updates that needed jitter or reseeding.
    pub reinvigorations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub summary: TrialSummary,
    pub steps: Vec<StepRecord>,
}

impl TrialRecord {
    pub fn is_truncated(&self) -> bool {
        self.summary.status != TrialStatus::Complete
    }
}

/// Acquire, then per scan: choose a bin, illuminate it, test it, and fold the
/// discretized outcome into the belief.
pub fn run_trial(
    exp: &Experiment,
    policy: PolicyKind,
    trial: usize,
    seed: u64,
) -> Result<TrialRecord, HarnessError> {
    let cfg = &exp.config;
    let grid = &exp.system.scene.grid;
    let truth = exp.trajectory(seed);
    let mut sensor = stream(seed, SENSOR_STREAM);
    let mut agent = stream(seed, AGENT_STREAM);
    let mut summary = TrialSummary {
        trial,
        policy,
        seed,
        status: TrialStatus::Complete,
        steps: 0,
        acquisition_scans: 0,
        acquisition_bin: None,
        reinvigorations: 0,
    };
    let mut steps = Vec::with_capacity(cfg.t_max);
    let row = |t: usize, s: &TargetState, true_bin: usize| StepRecord {
        trial,
        t,
        policy,
        x: s.x,
        vx: s.vx,
        y: s.y,
        vy: s.vy,
        est_x: None,
        est_vx: None,
        est_y: None,
        est_vy: None,
        chosen_bin: None,
        true_bin,
        statistic: 0.0,
        detected: false,
        alpha_abs: 0.0,
        snr_db: exp.snr_db(s).unwrap_or(f64::NAN),
        reward: 0.0,
    };

    if policy == PolicyKind::Orthogonal {
        for (t, s) in truth.iter().enumerate().skip(1) {
            let Some(true_bin) = oracle_policy_step(s, grid) else {
                summary.status = TrialStatus::OutOfView;
                break;
            };
            let results = exp.system.orthogonal_scan(Some(s), &mut sensor)?;
            let report = &results[true_bin].0;
            let mut r = row(t, s, true_bin);
            r.statistic = report.statistic;
            r.detected = report.detected;
            r.alpha_abs = report.alpha_hat.norm();
            steps.push(r);
        }
        summary.steps = steps.len();
        return Ok(TrialRecord { summary, steps });
    }

    let acq = match acquire(
        &exp.system,
        Some(&truth[0]),
        &cfg.acquisition,
        cfg.pomcp.n_particles,
        &mut sensor,
    ) {
        Ok(acq) => acq,
        Err(PolicyError::AcquisitionFailed { scans }) => {
            summary.status = TrialStatus::AcquisitionFailed;
            summary.acquisition_scans = scans;
            return Ok(TrialRecord { summary, steps });
        }
        Err(e) => return Err(e.into()),
    };
    summary.acquisition_scans = acq.scans_used;
    summary.acquisition_bin = Some(acq.detected_bin);

    let generator = RadarGenerator::new(
        exp.motion,
        *grid,
        exp.system.scene.rcs,
        acq.sigma_table.clone(),
        exp.lambda,
        cfg.pomcp.k_max,
        cfg.acquisition.v_max,
        cfg.acquisition.range_std,
    )?;
    let planner = Planner::new(&generator, cfg.pomcp)?;
    let mut belief = acq.belief;

    for (t, s) in truth.iter().enumerate().skip(1) {
        let Some(true_bin) = oracle_policy_step(s, grid) else {
            summary.status = TrialStatus::OutOfView;
            break;
        };
        let bin = match policy {
            PolicyKind::Pomcp => planner.solve(&belief, &mut agent)?,
            PolicyKind::ParticleFilter => pf_policy_step(&belief, grid, &exp.motion),
            PolicyKind::Oracle => true_bin,
            PolicyKind::Orthogonal => unreachable!("handled above"),
        };
        let (report, _) = exp.system.directed_scan(bin, Some(s), &mut sensor)?;
        let obs = if report.detected {
            discretize_observation(report.alpha_hat.norm(), generator.beta[bin], cfg.pomcp.k_max)
        } else {
            Observation::Empty
        };
        let mut r = row(t, s, true_bin);
        r.chosen_bin = Some(bin);
        r.statistic = report.statistic;
        r.detected = report.detected && bin == true_bin;
        r.alpha_abs = report.alpha_hat.norm();
        r.reward = if bin == true_bin { 1.0 } else { 0.0 };

        match update_belief(&generator, &belief, bin, &obs, cfg.pomcp.n_particles, &mut agent) {
            Ok(update) => {
                if update.outcome != UpdateOutcome::Exact {
                    summary.reinvigorations += 1;
                }
                belief = update.belief;
            }
            Err(PomcpError::TrackLoss { .. }) => {
                summary.status = TrialStatus::TrackLoss;
                steps.push(r);
                break;
            }
            Err(e) => return Err(e.into()),
        }
        let est = belief.mean();
        r.est_x = Some(est.x);
        r.est_vx = Some(est.vx);
        r.est_y = Some(est.y);
        r.est_vy = Some(est.vy);
        steps.push(r);
    }
    summary.steps = steps.len();
    Ok(TrialRecord { summary, steps })
}

/// Per-step aggregate for one policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub policy: PolicyKind,
    pub t: usize,
    /// Empty when no trial has an estimate at this step.
    pub rmse_pos: Option<f64>,
    pub rmse_vel: Option<f64>,
    pub pd: f64,
    /// Trials contributing an estimate at this step.
    pub n_valid: usize,
    pub n_trials: usize,
}

pub const METRICS_COLUMNS: [&str; 7] = ["policy", "t", "rmse_pos", "rmse_vel", "pd", "n_valid", "n_trials"];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSeries {
    pub policy: PolicyKind,
    pub rows: Vec<MetricsRow>,
}

impl MetricsSeries {
    pub fn pd(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.pd).collect()
    }

    pub fn mean_pd(&self, steps: std::ops::RangeInclusive<usize>) -> f64 {
        let sel: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| steps.contains(&r.t))
            .map(|r| r.pd)
            .collect();
        sel.iter().sum::<f64>() / sel.len().max(1) as f64
    }

    pub fn rmse_pos(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.rmse_pos).collect()
    }
}

/// Per-step position and velocity RMSE over the records that carry a belief
/// estimate. Index `t - 1` holds step `t`; `None` marks a step with no
/// estimate.
pub fn compute_rmse(records: &[StepRecord], t_max: usize) -> Vec<(Option<f64>, Option<f64>, usize)> {
    let mut sorted: Vec<&StepRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.t, r.trial));
    let mut out = vec![(0.0, 0.0, 0usize); t_max];
    for r in sorted {
        if r.t == 0 || r.t > t_max {
            continue;
        }
        if let Some(e) = r.estimate() {
            let slot = &mut out[r.t - 1];
            slot.0 += (e.x - r.x).powi(2) + (e.y - r.y).powi(2);
            slot.1 += (e.vx - r.vx).powi(2) + (e.vy - r.vy).powi(2);
            slot.2 += 1;
        }
    }
    out.into_iter()
        .map(|(p, v, n)| {
            if n == 0 {
                (None, None, 0)
            } else {
                (Some((p / n as f64).sqrt()), Some((v / n as f64).sqrt()), n)
            }
        })
        .collect()
}

/// Metrics of one policy over its trials. Missing rows (truncation) count as
/// non-detections; RMSE uses only steps that carry an estimate.
pub fn compute_metrics(policy: PolicyKind, trials: &[&TrialRecord], t_max: usize) -> MetricsSeries {
    let records: Vec<StepRecord> = trials
        .iter()
        .flat_map(|tr| tr.steps.iter().copied())
        .collect();
    let rmse = compute_rmse(&records, t_max);
    let mut detections = vec![0usize; t_max];
    for r in &records {
        if r.detected && r.t >= 1 && r.t <= t_max {
            detections[r.t - 1] += 1;
        }
    }
    let n_trials = trials.len();
    let rows = (1..=t_max)
        .map(|t| {
            let (rmse_pos, rmse_vel, n_valid) = rmse[t - 1];
            MetricsRow {
                policy,
                t,
                rmse_pos,
                rmse_vel,
                pd: detections[t - 1] as f64 / n_trials.max(1) as f64,
                n_valid,
                n_trials,
            }
        })
        .collect();
    MetricsSeries { policy, rows }
}

#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub trials: Vec<TrialRecord>,
    pub metrics: Vec<MetricsSeries>,
}

impl MonteCarloResult {
    pub fn metrics_for(&self, policy: PolicyKind) -> Option<&MetricsSeries> {
        self.metrics.iter().find(|m| m.policy == policy)
    }

    pub fn records(&self) -> impl Iterator<Item = &StepRecord> {
        self.trials.iter().flat_map(|t| t.steps.iter())
    }
}

/// Every (policy, trial) pair, trial seed `base_seed + index`. Trials run
/// in parallel; results are collected in (policy, trial) order.
pub fn run_monte_carlo(exp: &Experiment) -> Result<MonteCarloResult, HarnessError> {
    let cfg = &exp.config;
    let seeds = cfg.seeds();
    let jobs: Vec<(PolicyKind, usize)> = cfg
        .policies
        .iter()
        .flat_map(|&p| (0..cfg.n_trials).map(move |i| (p, i)))
        .collect();
    let outcomes = with_threads(cfg.threads, || {
        map_indexed(exp.system.execution, jobs.len(), |j| {
            let (policy, i) = jobs[j];
            run_trial(exp, policy, i, seeds[i])
        })
    });
    let trials = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
    let metrics = cfg
        .policies
        .iter()
        .map(|&p| {
            let mine: Vec<&TrialRecord> = trials.iter().filter(|t| t.summary.policy == p).collect();
            compute_metrics(p, &mine, cfg.t_max)
        })
        .collect();
    Ok(MonteCarloResult { trials, metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub name: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub p_fa: f64,
    pub lambda: f64,
    pub noise_power: f64,
    pub rcs_ref_amplitude: f64,
    pub rcs_ref_range_km: f64,
    pub snr_definition: String,
    pub detection_definition: String,
    pub truncation_rule: String,
    pub status_counts: BTreeMap<String, BTreeMap<String, usize>>,
}

impl RunMetadata {
    pub fn new(exp: &Experiment, trials: &[TrialRecord]) -> Self {
        let mut status_counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for t in trials {
            let status = serde_json::to_value(t.summary.status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            *status_counts
                .entry(t.summary.policy.name().to_string())
                .or_default()
                .entry(status)
                .or_default() += 1;
        }
        Self {
            name: exp.config.name.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: exp.config.clone(),
            seeds: exp.config.seeds(),
            p_fa: exp.config.detector.p_fa,
            lambda: exp.lambda,
            noise_power: exp.noise_power,
            rcs_ref_amplitude: exp.system.scene.rcs.ref_amplitude,
            rcs_ref_range_km: exp.system.scene.rcs.ref_range,
            snr_definition: "10*log10(|alpha(R)|^2 / r[0]), r[0] the lag-0 power of the AR disturbance".into(),
            detection_definition: "statistic >= lambda in the bin containing the target".into(),
            truncation_rule: "truncated trials count as non-detections in pd and are excluded from rmse at steps they did not reach".into(),
            status_counts,
        }
    }
}

pub const RECORDS_FILE: &str = "records.csv";
pub const TRIALS_FILE: &str = "trials.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const METADATA_FILE: &str = "metadata.json";

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), HarnessError> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(fs::File::create(path).map_err(io_err(format!("creating {}", path.display())))?);
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(format!("writing {}", path.display())))?;
    Ok(())
}

pub fn write_records(path: &Path, records: &[StepRecord]) -> Result<(), HarnessError> {
    write_rows(path, &RECORD_COLUMNS, records)
}

pub fn write_metrics(path: &Path, metrics: &[MetricsSeries]) -> Result<(), HarnessError> {
    let rows: Vec<MetricsRow> = metrics.iter().flat_map(|m| m.rows.iter().copied()).collect();
    write_rows(path, &METRICS_COLUMNS, &rows)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err)
}

pub fn read_records(path: &Path) -> Result<Vec<StepRecord>, HarnessError> {
    read_rows(path)
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialSummary>, HarnessError> {
    read_rows(path)
}

/// Metrics grouped back into per-policy series in file order.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsSeries>, HarnessError> {
    let rows: Vec<MetricsRow> = read_rows(path)?;
    let mut out: Vec<MetricsSeries> = Vec::new();
    for row in rows {
        match out.last_mut() {
            Some(m) if m.policy == row.policy => m.rows.push(row),
            _ => out.push(MetricsSeries {
                policy: row.policy,
                rows: vec![row],
            }),
        }
    }
    Ok(out)
}

/// Writes records, trial summaries, metrics and metadata into `dir`.
pub fn export_results(
    dir: &Path,
    exp: &Experiment,
    result: &MonteCarloResult,
) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    let records: Vec<StepRecord> = result.records().copied().collect();
    write_records(&dir.join(RECORDS_FILE), &records)?;
    let summaries: Vec<TrialSummary> = result.trials.iter().map(|t| t.summary.clone()).collect();
    write_rows(
        &dir.join(TRIALS_FILE),
        &[
            "trial",
            "policy",
            "seed",
            "status",
            "steps",
            "acquisition_scans",
            "acquisition_bin",
            "reinvigorations",
        ],
        &summaries,
    )?;
    write_metrics(&dir.join(METRICS_FILE), &result.metrics)?;
    let meta = RunMetadata::new(exp, &result.trials);
    let path = dir.join(METADATA_FILE);
    let text = serde_json::to_string_pretty(&meta)?;
    fs::write(&path, text + "\n").map_err(io_err(format!("writing {}", path.display())))?;
    Ok(())
}
