//! Online POMDP planning by Monte-Carlo tree search over action/observation
//! histories, with unweighted particle beliefs updated by rejection sampling.
//!
//! The planner only sees the world through [`Generative`], so the same code
//! drives the radar model and small enumerable test problems.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disturbance::standard_complex_normal;
use crate::environment::{get_angle_bin, get_rcs, MotionModel, RcsModel, TargetState};
use crate::mimo_signal::AngleGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PomcpError {
    #[error("belief set is empty")]
    EmptyBelief,
    #[error("invalid planner parameter: {0}")]
    Params(String),
    #[error("no noise-level entry for bin {0}")]
    MissingSigma(usize),
    #[error("belief update stalled after {proposals} proposals")]
    TrackLoss { proposals: usize },
}

/// Black-box simulator `(s, a) -> (s', o, r)`.
pub trait Generative {
    type State: Clone;
    type Obs: Clone + Ord;

    fn num_actions(&self) -> usize;

    fn step<R: Rng + ?Sized>(
        &self,
        s: &Self::State,
        action: usize,
        rng: &mut R,
    ) -> (Self::State, Self::Obs, f64);

    /// Small random move used to refill a deprived belief.
    fn perturb<R: Rng + ?Sized>(&self, s: &Self::State, _rng: &mut R) -> Self::State {
        s.clone()
    }

    /// Fresh particles consistent with a single observation, if the model can
    /// invert it; `prior` is the belief the update started from.
    fn reseed<R: Rng + ?Sized>(
        &self,
        _prior: &BeliefSet<Self::State>,
        _action: usize,
        _obs: &Self::Obs,
        _n: usize,
        _rng: &mut R,
    ) -> Option<Vec<Self::State>> {
        None
    }
}

/// Discretized radar observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Observation {
    Empty,
    Detected { amplitude_bin: u32 },
}

impl Observation {
    pub fn is_detected(&self) -> bool {
        matches!(self, Observation::Detected { .. })
    }
}

/// Amplitude discretization step `√3·σ̂`: the estimate lands within one
/// step of the true modulus with probability at least 0.95.
pub fn amplitude_step(sigma_hat: f64) -> f64 {
    3f64.sqrt() * sigma_hat
}

/// `k = min(floor(amplitude / beta), k_max)`.
pub fn discretize_observation(amplitude: f64, beta: f64, k_max: u32) -> Observation {
    let k = (amplitude.max(0.0) / beta).floor();
    let k = if k.is_nan() { 0 } else { k.min(k_max as f64) as u32 };
    Observation::Detected { amplitude_bin: k }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History<O> {
    steps: Vec<(usize, O)>,
}

impl<O> History<O> {
    pub fn new() -> Self {
        Self { steps: Vec::new() }
    }

    pub fn push(&mut self, action: usize, obs: O) {
        self.steps.push((action, obs));
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[(usize, O)] {
        &self.steps
    }
}

/// Unweighted particle approximation of the belief.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefSet<S> {
    particles: Vec<S>,
}

impl<S: Clone> BeliefSet<S> {
    pub fn new(particles: Vec<S>) -> Result<Self, PomcpError> {
        if particles.is_empty() {
            return Err(PomcpError::EmptyBelief);
        }
        Ok(Self { particles })
    }

    pub fn particles(&self) -> &[S] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &S {
        &self.particles[rng.random_range(0..self.particles.len())]
    }
}

impl BeliefSet<TargetState> {
    pub fn mean(&self) -> TargetState {
        let n = self.particles.len() as f64;
        let mut acc = [0.0; 4];
        for p in &self.particles {
            for (a, v) in acc.iter_mut().zip(p.to_array()) {
                *a += v;
            }
        }
        TargetState::from_array(acc.map(|a| a / n))
    }
}

/// Planner settings. `max_depth = None` leaves only the discount cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PomcpParams {
    pub n_sim: usize,
    pub n_particles: usize,
    pub ucb_c: f64,
    pub gamma: f64,
    pub max_depth: Option<usize>,
    pub epsilon: f64,
    pub k_max: u32,
}

impl Default for PomcpParams {
    fn default() -> Self {
        Self {
            n_sim: 10_000,
            n_particles: 10_000,
            ucb_c: SQRT_2,
            gamma: 0.8,
            max_depth: Some(2),
            epsilon: 0.01,
            k_max: 64,
        }
    }
}

impl PomcpParams {
    pub fn validate(&self) -> Result<(), PomcpError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(PomcpError::Params(format!("gamma {} not in (0, 1)", self.gamma)));
        }
        if self.n_sim == 0 || self.n_particles == 0 {
            return Err(PomcpError::Params("n_sim and n_particles must be >= 1".into()));
        }
        if !(self.ucb_c >= 0.0) {
            return Err(PomcpError::Params("ucb_c must be non-negative".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(PomcpError::Params("epsilon must be non-negative".into()));
        }
        Ok(())
    }

    /// True once a node at `depth` no longer contributes.
    pub fn is_cutoff(&self, depth: usize) -> bool {
        if self.max_depth.is_some_and(|d| depth >= d) {
            return true;
        }
        self.gamma.powi(depth as i32) < self.epsilon
    }

    /// First depth at which the search stops.
    pub fn horizon(&self) -> usize {
        (0..).find(|&d| self.is_cutoff(d)).unwrap_or(0)
    }

    /// Upper bound on any return with rewards in `[0, 1]`.
    pub fn max_return(&self) -> f64 {
        (0..self.horizon()).map(|d| self.gamma.powi(d as i32)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionNode<O> {
    pub visits: u64,
    /// Sum of backed-up returns; `value` is `total / visits`.
    pub total: f64,
    pub value: f64,
    pub children: BTreeMap<O, usize>,
}

impl<O> ActionNode<O> {
    fn new() -> Self {
        Self {
            visits: 0,
            total: 0.0,
            value: 0.0,
            children: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryNode<S, O> {
    pub visits: u64,
    pub value: f64,
    pub particles: Vec<S>,
    /// Empty until the node is first descended through.
    pub actions: Vec<ActionNode<O>>,
}

impl<S, O> HistoryNode<S, O> {
    fn new() -> Self {
        Self {
            visits: 0,
            value: 0.0,
            particles: Vec::new(),
            actions: Vec::new(),
        }
    }

    pub fn is_expanded(&self) -> bool {
        !self.actions.is_empty()
    }
}

/// Arena-allocated search tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTree<S, O> {
    nodes: Vec<HistoryNode<S, O>>,
}

impl<S: Clone, O: Clone + Ord> SearchTree<S, O> {
    pub fn new(root_particles: Vec<S>, n_actions: usize) -> Self {
        let mut root = HistoryNode::new();
        root.particles = root_particles;
        root.actions = (0..n_actions).map(|_| ActionNode::new()).collect();
        Self { nodes: vec![root] }
    }

    pub fn root(&self) -> &HistoryNode<S, O> {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &HistoryNode<S, O> {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[HistoryNode<S, O>] {
        &self.nodes
    }

    /// Root action with the largest value, lowest index on ties.
    pub fn best_action(&self) -> usize {
        argmax_first(self.root().actions.iter().map(|a| a.value))
    }

    fn add_node(&mut self) -> usize {
        self.nodes.push(HistoryNode::new());
        self.nodes.len() - 1
    }
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// `argmax_a Q(h,a) + c·√(ln N(h) / N(h,a))`; unvisited actions first.
pub fn ucb1_select<O>(actions: &[ActionNode<O>], parent_visits: u64, c: f64) -> usize {
    if let Some(i) = actions.iter().position(|a| a.visits == 0) {
        return i;
    }
    let ln_n = (parent_visits.max(1) as f64).ln();
    argmax_first(
        actions
            .iter()
            .map(|a| a.value + c * (ln_n / a.visits as f64).sqrt()),
    )
}

/// Planner bound to one generative model.
pub struct Planner<'g, G: Generative> {
    pub model: &'g G,
    pub params: PomcpParams,
}

impl<'g, G: Generative> Planner<'g, G> {
    pub fn new(model: &'g G, params: PomcpParams) -> Result<Self, PomcpError> {
        params.validate()?;
        Ok(Self { model, params })
    }

    /// Runs `n_sim` simulations from the belief and returns the tree.
    pub fn search<R: Rng + ?Sized>(
        &self,
        belief: &BeliefSet<G::State>,
        rng: &mut R,
    ) -> Result<SearchTree<G::State, G::Obs>, PomcpError> {
        if belief.is_empty() {
            return Err(PomcpError::EmptyBelief);
        }
        let mut tree = SearchTree::new(belief.particles().to_vec(), self.model.num_actions());
        for _ in 0..self.params.n_sim {
            let s = belief.sample(rng).clone();
            self.simulate(&mut tree, s, 0, 0, rng);
        }
        Ok(tree)
    }

    pub fn solve<R: Rng + ?Sized>(
        &self,
        belief: &BeliefSet<G::State>,
        rng: &mut R,
    ) -> Result<usize, PomcpError> {
        Ok(self.search(belief, rng)?.best_action())
    }

    pub fn simulate<R: Rng + ?Sized>(
        &self,
        tree: &mut SearchTree<G::State, G::Obs>,
        s: G::State,
        node: usize,
        depth: usize,
        rng: &mut R,
    ) -> f64 {
        if self.params.is_cutoff(depth) {
            return 0.0;
        }
        if !tree.nodes[node].is_expanded() {
            tree.nodes[node].actions = (0..self.model.num_actions()).map(|_| ActionNode::new()).collect();
        }
        let h = &tree.nodes[node];
        let action = ucb1_select(&h.actions, h.visits, self.params.ucb_c);
        let (next, obs, reward) = self.model.step(&s, action, rng);

        let child = tree.nodes[node].actions[action].children.get(&obs).copied();
        let ret = match child {
            Some(c) => reward + self.params.gamma * self.simulate(tree, next, c, depth + 1, rng),
            None => {
                let c = tree.add_node();
                tree.nodes[node].actions[action].children.insert(obs, c);
                let tail = self.rollout(&next, depth + 1, rng);
                tree.nodes[c].particles.push(next);
                reward + self.params.gamma * tail
            }
        };

        let h = &mut tree.nodes[node];
        if depth != 0 {
            h.particles.push(s);
        }
        h.visits += 1;
        h.value += (ret - h.value) / h.visits as f64;
        let a = &mut h.actions[action];
        a.visits += 1;
        a.total += ret;
        a.value = a.total / a.visits as f64;
        ret
    }

    /// Discounted return of a uniform random policy.
    pub fn rollout<R: Rng + ?Sized>(&self, s: &G::State, depth: usize, rng: &mut R) -> f64 {
        let n = self.model.num_actions();
        let mut state = s.clone();
        let mut ret = 0.0;
        let mut discount = 1.0;
        let mut d = depth;
        while !self.params.is_cutoff(d) {
            let a = rng.random_range(0..n);
            let (next, _, r) = self.model.step(&state, a, rng);
            ret += discount * r;
            discount *= self.params.gamma;
            state = next;
            d += 1;
        }
        ret
    }
}

/// How a belief update reached full size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOutcome {
    /// Every particle is a matching generator successor.
    Exact,
    /// Matching successors were topped up with jittered copies.
    Jittered,
    /// No successor matched; the belief was rebuilt from the observation.
    Reseeded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefUpdate<S> {
    pub belief: BeliefSet<S>,
    pub outcome: UpdateOutcome,
    pub proposals: usize,
}

/// Proposals allowed per requested particle before the stall path.
pub const PROPOSALS_PER_PARTICLE: usize = 100;

/// Rejection sampling through the generator: keep successors whose simulated
/// observation equals `obs` until `n_particles` are accepted.
pub fn update_belief<G: Generative, R: Rng + ?Sized>(
    model: &G,
    belief: &BeliefSet<G::State>,
    action: usize,
    obs: &G::Obs,
    n_particles: usize,
    rng: &mut R,
) -> Result<BeliefUpdate<G::State>, PomcpError> {
    if belief.is_empty() {
        return Err(PomcpError::EmptyBelief);
    }
    let budget = PROPOSALS_PER_PARTICLE * n_particles;
    let mut accepted = Vec::with_capacity(n_particles);
    let mut proposals = 0;
    while accepted.len() < n_particles && proposals < budget {
        proposals += 1;
        let (next, o, _) = model.step(belief.sample(rng), action, rng);
        if &o == obs {
            accepted.push(next);
        }
    }
    if accepted.len() == n_particles {
        return Ok(BeliefUpdate {
            belief: BeliefSet { particles: accepted },
            outcome: UpdateOutcome::Exact,
            proposals,
        });
    }

    if accepted.is_empty() {
        // second pass from jittered predecessors
        let mut tries = 0;
        while accepted.is_empty() && tries < budget {
            tries += 1;
            let s = model.perturb(belief.sample(rng), rng);
            let (next, o, _) = model.step(&s, action, rng);
            if &o == obs {
                accepted.push(next);
            }
        }
        proposals += tries;
    }

    if accepted.is_empty() {
        return match model.reseed(belief, action, obs, n_particles, rng) {
            Some(particles) if particles.len() == n_particles => Ok(BeliefUpdate {
                belief: BeliefSet { particles },
                outcome: UpdateOutcome::Reseeded,
                proposals,
            }),
            _ => Err(PomcpError::TrackLoss { proposals }),
        };
    }

    let seeds = accepted.len();
    while accepted.len() < n_particles {
        let pick = accepted[rng.random_range(0..seeds)].clone();
        accepted.push(model.perturb(&pick, rng));
    }
    Ok(BeliefUpdate {
        belief: BeliefSet { particles: accepted },
        outcome: UpdateOutcome::Jittered,
        proposals,
    })
}

/// Particles with azimuth uniform in `bin`, range `N(range, range_std²)`
/// and velocities uniform on `[-v_max, v_max]²`.
pub fn seed_particles<R: Rng + ?Sized>(
    grid: &AngleGrid,
    bin: usize,
    range: f64,
    range_std: f64,
    v_max: f64,
    n: usize,
    rng: &mut R,
) -> Vec<TargetState> {
    let lo = grid.fov_min + bin as f64 * grid.bin_width();
    let width = grid.bin_width();
    let spread = Normal::new(range, range_std.max(0.0)).expect("finite spread");
    (0..n)
        .map(|_| {
            let theta = lo + rng.random::<f64>() * width;
            let r = spread.sample(rng).abs().max(f64::MIN_POSITIVE);
            let vx = rng.random_range(-v_max..=v_max);
            let vy = rng.random_range(-v_max..=v_max);
            TargetState::new(r * theta.cos(), vx, r * theta.sin(), vy)
        })
        .collect()
}

/// Planner-side radar model: beam choice is the action, the observation is
/// the thresholded and discretized amplitude estimate of the illuminated bin.
#[derive(Debug, Clone)]
pub struct RadarGenerator {
    pub motion: MotionModel,
    pub grid: AngleGrid,
    pub rcs: RcsModel,
    /// Per-bin standard deviation of the amplitude estimate.
    pub sigma: Vec<f64>,
    /// Per-bin amplitude discretization step.
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub k_max: u32,
    /// Velocity bound for seeded particles, km/s.
    pub v_max: f64,
    /// Range spread of seeded particles, km.
    pub range_std: f64,
}

impl RadarGenerator {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        motion: MotionModel,
        grid: AngleGrid,
        rcs: RcsModel,
        sigma: Vec<f64>,
        lambda: f64,
        k_max: u32,
        v_max: f64,
        range_std: f64,
    ) -> Result<Self, PomcpError> {
        if sigma.len() != grid.n_bins {
            return Err(PomcpError::MissingSigma(sigma.len().min(grid.n_bins)));
        }
        if let Some(i) = sigma.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(PomcpError::MissingSigma(i));
        }
        let beta = sigma.iter().map(|&s| amplitude_step(s)).collect();
        Ok(Self {
            motion,
            grid,
            rcs,
            sigma,
            beta,
            lambda,
            k_max,
            v_max,
            range_std,
        })
    }

    /// Simulated observation of a target at `s` when bin `action` is lit.
    pub fn observe<R: Rng + ?Sized>(&self, s: &TargetState, action: usize, rng: &mut R) -> (Observation, f64) {
        match get_angle_bin(s.x, s.y, &self.grid) {
            Ok(bin) if bin == action => {}
            _ => return (Observation::Empty, 0.0),
        }
        let Ok(alpha) = get_rcs(s, &self.rcs, rng) else {
            return (Observation::Empty, 1.0);
        };
        let sigma = self.sigma[action];
        let alpha_hat = alpha + standard_complex_normal(rng) * sigma;
        let statistic = if sigma > 0.0 {
            2.0 * alpha_hat.norm_sqr() / (sigma * sigma)
        } else {
            f64::INFINITY
        };
        let obs = if statistic >= self.lambda {
            discretize_observation(alpha_hat.norm(), self.beta[action], self.k_max)
        } else {
            Observation::Empty
        };
        (obs, 1.0)
    }

    pub fn seed_particles<R: Rng + ?Sized>(
        &self,
        bin: usize,
        range: f64,
        n: usize,
        rng: &mut R,
    ) -> Vec<TargetState> {
        seed_particles(&self.grid, bin, range, self.range_std, self.v_max, n, rng)
    }

    /// Range implied by an amplitude bin: midpoint amplitude inverted through
    /// the range law.
    pub fn range_from_observation(&self, bin: usize, obs: &Observation) -> Option<f64> {
        match obs {
            Observation::Detected { amplitude_bin } => {
                let amp = (*amplitude_bin as f64 + 0.5) * self.beta[bin];
                self.rcs.range_for_amplitude(amp)
            }
            Observation::Empty => None,
        }
    }
}

impl Generative for RadarGenerator {
    type State = TargetState;
    type Obs = Observation;

    fn num_actions(&self) -> usize {
        self.grid.n_bins
    }

    fn step<R: Rng + ?Sized>(&self, s: &TargetState, action: usize, rng: &mut R) -> (TargetState, Observation, f64) {
        let next = self.motion.step(s, rng);
        let (obs, reward) = self.observe(&next, action, rng);
        (next, obs, reward)
    }

    fn perturb<R: Rng + ?Sized>(&self, s: &TargetState, rng: &mut R) -> TargetState {
        let pos_std = s.range() * self.grid.bin_width();
        let vel_std = 0.05 * self.v_max;
        let mut draw = |std: f64| -> f64 {
            let z: f64 = rand_distr::StandardNormal.sample(rng);
            z * std
        };
        TargetState::new(
            s.x + draw(pos_std),
            s.vx + draw(vel_std),
            s.y + draw(pos_std),
            s.vy + draw(vel_std),
        )
    }

    /// Predicted particles moved onto the detected bin, keeping their own
    /// range and velocity. The amplitude is not trusted here: a detection no
    /// particle explains is often leakage from the neighbouring bin.
    fn reseed<R: Rng + ?Sized>(
        &self,
        prior: &BeliefSet<TargetState>,
        action: usize,
        obs: &Observation,
        n: usize,
        rng: &mut R,
    ) -> Option<Vec<TargetState>> {
        if !obs.is_detected() || action >= self.grid.n_bins {
            return None;
        }
        let lo = self.grid.fov_min + action as f64 * self.grid.bin_width();
        let width = self.grid.bin_width();
        Some(
            (0..n)
                .map(|_| {
                    let s = self.motion.step(prior.sample(rng), rng);
                    let theta = lo + rng.random::<f64>() * width;
                    let r = s.range();
                    TargetState::new(r * theta.cos(), s.vx, r * theta.sin(), s.vy)
                })
                .collect(),
        )
    }
}
