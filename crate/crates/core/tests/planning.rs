use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cogradar::environment::{MotionModel, RcsModel, TargetState};
use cogradar::mimo_signal::AngleGrid;
use cogradar::policies::{nearest_bin, oracle_policy_step, pf_policy_step, pf_predict};
use cogradar::pomcp::{
    update_belief, BeliefSet, Generative, Planner, PomcpParams, RadarGenerator, SearchTree, UpdateOutcome,
};

/// Stateless bandit: action `a` pays `means[a] + shift` with probability
/// one half, otherwise `shift`; the observation is the payout bit.
struct Bandit {
    means: Vec<f64>,
    shift: f64,
}

impl Generative for Bandit {
    type State = ();
    type Obs = bool;

    fn num_actions(&self) -> usize {
        self.means.len()
    }

    fn step<R: Rng + ?Sized>(&self, _: &(), a: usize, rng: &mut R) -> ((), bool, f64) {
        let hit = rng.random::<bool>();
        ((), hit, self.shift + if hit { 2.0 * self.means[a] } else { 0.0 })
    }
}

/// Three-state chain with a binary noisy sensor.
struct Chain;

const CHAIN_T: [[[f64; 3]; 3]; 2] = [
    [[0.6, 0.3, 0.1], [0.2, 0.6, 0.2], [0.1, 0.3, 0.6]],
    [[0.3, 0.4, 0.3], [0.5, 0.3, 0.2], [0.2, 0.2, 0.6]],
];
const CHAIN_OBS: [f64; 3] = [0.85, 0.4, 0.1];

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

impl Generative for Chain {
    type State = usize;
    type Obs = bool;

    fn num_actions(&self) -> usize {
        2
    }

    fn step<R: Rng + ?Sized>(&self, s: &usize, a: usize, rng: &mut R) -> (usize, bool, f64) {
        let next = categorical(&CHAIN_T[a][*s], rng);
        let obs = rng.random::<f64>() < CHAIN_OBS[next];
        (next, obs, (next == 2 * a) as u8 as f64)
    }
}

fn params(n_sim: usize, depth: usize) -> PomcpParams {
    PomcpParams {
        n_sim,
        n_particles: 100,
        max_depth: Some(depth),
        ..PomcpParams::default()
    }
}

fn check_tree<S: Clone, O: Clone + Ord>(tree: &SearchTree<S, O>) -> Result<(), TestCaseError> {
    for node in tree.nodes() {
        if node.actions.is_empty() {
            continue;
        }
        let total: u64 = node.actions.iter().map(|a| a.visits).sum();
        prop_assert_eq!(total, node.visits);
        for a in &node.actions {
            for &child in a.children.values() {
                prop_assert!(tree.node(child).visits <= a.visits);
            }
        }
    }
    Ok(())
}

#[test]
fn bandit_prefers_the_best_arm() {
    let model = Bandit {
        means: vec![0.2, 0.9, 0.5],
        shift: 0.0,
    };
    let planner = Planner::new(&model, params(3000, 1)).unwrap();
    let belief = BeliefSet::new(vec![()]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(planner.solve(&belief, &mut rng).unwrap(), 1);
}

#[test]
fn radar_planner_points_at_the_occupied_bin() {
    let grid = AngleGrid::default();
    let generator = RadarGenerator::new(
        MotionModel::new(1.0, 0.0).unwrap(),
        grid,
        RcsModel::new(1.0, 84.853).unwrap(),
        vec![0.05; grid.n_bins],
        18.42,
        64,
        0.5,
        2.0,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let theta = grid.center(40);
    let particles = (0..200)
        .map(|_| TargetState::new(80.0 * theta.cos(), rng.random_range(-0.01..0.01), 80.0 * theta.sin(), 0.0))
        .collect();
    let belief = BeliefSet::new(particles).unwrap();
    let planner = Planner::new(&generator, params(1500, 2)).unwrap();
    assert_eq!(planner.solve(&belief, &mut rng).unwrap(), 40);
}

#[test]
fn uniform_rollout_hits_one_bin_in_a_hundred() {
    let grid = AngleGrid::default();
    let generator = RadarGenerator::new(
        MotionModel::new(1.0, 0.0).unwrap(),
        grid,
        RcsModel::new(1.0, 84.853).unwrap(),
        vec![0.05; grid.n_bins],
        18.42,
        64,
        0.5,
        2.0,
    )
    .unwrap();
    let p = params(1, 2);
    let planner = Planner::new(&generator, p).unwrap();
    let s = TargetState::new(60.0, 0.0, -60.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 200_000;
    let mean = (0..n).map(|_| planner.rollout(&s, 0, &mut rng)).sum::<f64>() / n as f64;
    let expected = (1.0 + p.gamma) / 100.0;
    assert!((mean - expected).abs() < 0.08 * expected, "{mean} vs {expected}");
}

#[test]
fn chain_belief_update_matches_bayes() {
    let prior = [0.2, 0.5, 0.3];
    let (a, o) = (1, true);
    let mut exact = [0.0; 3];
    for (sp, e) in exact.iter_mut().enumerate() {
        *e = CHAIN_OBS[sp] * (0..3).map(|s| prior[s] * CHAIN_T[a][s][sp]).sum::<f64>();
    }
    let z: f64 = exact.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 20_000;
    let belief = BeliefSet::new((0..n).map(|_| categorical(&prior, &mut rng)).collect()).unwrap();
    let up = update_belief(&Chain, &belief, a, &o, n, &mut rng).unwrap();
    assert_eq!(up.outcome, UpdateOutcome::Exact);
    let mut hist = [0.0; 3];
    for &s in up.belief.particles() {
        hist[s] += 1.0 / n as f64;
    }
    let tv: f64 = 0.5 * (0..3).map(|i| (hist[i] - exact[i] / z).abs()).sum::<f64>();
    assert!(tv < 0.015, "TV {tv}");
}

#[test]
fn pf_and_oracle_bin_choices() {
    let grid = AngleGrid::default();
    let motion = MotionModel::new(1.0, 0.0).unwrap();
    let theta = grid.center(30);
    let s = TargetState::new(50.0 * theta.cos(), 0.0, 50.0 * theta.sin(), 0.0);
    let belief = BeliefSet::new(vec![s; 5]).unwrap();
    assert_eq!(pf_policy_step(&belief, &grid, &motion), 30);
    assert_eq!(oracle_policy_step(&s, &grid), Some(30));
    assert_eq!(oracle_policy_step(&TargetState::new(-5.0, 0.0, 1.0, 0.0), &grid), None);
    assert_eq!(nearest_bin(2.0, &grid), 99);
    assert_eq!(nearest_bin(-2.0, &grid), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn search_tree_counts_are_consistent(seed in 0u64..1000, n_sim in 1usize..400, depth in 1usize..4) {
        let planner = Planner::new(&Chain, params(n_sim, depth)).unwrap();
        let belief = BeliefSet::new(vec![0, 1, 2]).unwrap();
        let tree = planner.search(&belief, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(tree.root().visits, n_sim as u64);
        check_tree(&tree)?;
        let p = params(n_sim, depth);
        for a in &tree.root().actions {
            prop_assert!(a.value >= -1e-12 && a.value <= p.max_return() + 1e-12);
        }
    }

    #[test]
    fn reward_shift_keeps_the_choice(seed in 0u64..1000, shift in -8i32..8) {
        // dyadic rewards and discount keep the summed returns exact, so ties
        // survive the shift
        let base = Bandit { means: vec![0.25, 0.625, 0.375, 0.125], shift: 0.0 };
        let moved = Bandit { means: base.means.clone(), shift: f64::from(shift) };
        let belief = BeliefSet::new(vec![()]).unwrap();
        let p = PomcpParams { gamma: 0.5, ..params(300, 2) };
        let a = Planner::new(&base, p).unwrap().solve(&belief, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = Planner::new(&moved, p).unwrap().solve(&belief, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn pf_prediction_is_linear_in_the_particles(
        pts in prop::collection::vec(prop::array::uniform4(-100.0f64..100.0), 1..20),
        offset in prop::array::uniform4(-10.0f64..10.0),
    ) {
        let motion = MotionModel::new(2.0, 0.3).unwrap();
        let belief = BeliefSet::new(pts.iter().map(|&p| TargetState::from_array(p)).collect()).unwrap();
        let shifted = BeliefSet::new(
            pts.iter().map(|p| TargetState::from_array([0, 1, 2, 3].map(|i| p[i] + offset[i]))).collect(),
        )
        .unwrap();
        let a = pf_predict(&belief, &motion).to_array();
        let b = pf_predict(&shifted, &motion).to_array();
        let d = motion.predict(&TargetState::from_array(offset)).to_array();
        for i in 0..4 {
            prop_assert!((b[i] - a[i] - d[i]).abs() < 1e-9 * (1.0 + a[i].abs()));
        }
    }
}
