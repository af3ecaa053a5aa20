//! Rollouts, the training loop, the linear critic and evaluation.
//!
//! Each update samples a task from `mu`, collects a batch of generalized
//! trajectories with the current policy, estimates the gradient and takes one
//! ascent step on the skill and hyperplane blocks together.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::envs::{Environment, FeatureBuilder, TaskDescriptor, TaskSuite};
use crate::error::{domain_err, AsapError, Result};
use crate::gradient::{estimate_gradient, Baseline, BaselineKind, ReturnMode, ReturnSpec, SkillScore, TaskWeighting};
use crate::params::{Dims, GeneralizedStep, GeneralizedTrajectory, ParamVector, Parameters, SkillIndex};
use crate::policy::AsapPolicy;
use crate::Rng64;

/// Independent generator for item `index` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, index: u64) -> Rng64 {
    let mut rng = Rng64::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Rolls out one episode: at every step a skill is drawn from the partitions,
/// then an action from that skill. Stops at a terminal state or after
/// `horizon` steps.
pub fn run_trial(
    env: &dyn Environment,
    task: &TaskDescriptor,
    policy: &AsapPolicy,
    rng: &mut Rng64,
    horizon: usize,
) -> Result<GeneralizedTrajectory> {
    if horizon == 0 {
        return domain_err("horizon must be positive");
    }
    let mut state = env.reset(rng);
    let mut steps = Vec::with_capacity(horizon.min(256));
    let mut terminated = false;
    for _ in 0..horizon {
        let (skill, action) = policy.sample(&state, task, rng)?;
        let tr = env.step(&state, action, rng)?;
        steps.push(GeneralizedStep {
            state: std::mem::replace(&mut state, tr.next_state.clone()),
            action,
            skill,
            reward: tr.reward,
            next_state: tr.next_state,
        });
        if tr.done {
            terminated = true;
            break;
        }
    }
    GeneralizedTrajectory::new(steps, task.clone(), terminated)
}

// ---------------------------------------------------------------------------
// Critic
// ---------------------------------------------------------------------------

/// Linear state-value critic trained by TD(0) on the hyperplane state
/// features (task descriptor excluded).
#[derive(Clone, Debug)]
pub struct LinearCritic {
    pub weights: Vec<f64>,
    pub learning_rate: f64,
    features: FeatureBuilder,
}

impl LinearCritic {
    pub fn new(features: FeatureBuilder, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return domain_err(format!("critic learning rate must be positive, got {learning_rate}"));
        }
        Ok(LinearCritic { weights: vec![0.0; features.state_feature_dim()], learning_rate, features })
    }

    pub fn predict(&self, state: &[f64]) -> f64 {
        crate::policy::dot(&self.weights, &self.features.state_features(state))
    }

    /// TD(0) sweep over one trajectory: `w += lr * delta_t * f(x_t)`.
    pub fn update(&mut self, traj: &GeneralizedTrajectory, gamma: f64) {
        let last = traj.len() - 1;
        for (t, s) in traj.steps().iter().enumerate() {
            let f = self.features.state_features(&s.state);
            let v = crate::policy::dot(&self.weights, &f);
            let v_next = if t == last && traj.terminated() { 0.0 } else { self.predict(&s.next_state) };
            let delta = s.reward + gamma * v_next - v;
            self.weights.iter_mut().zip(&f).for_each(|(w, x)| *w += self.learning_rate * delta * x);
        }
    }

    pub fn updated(&self, traj: &GeneralizedTrajectory, gamma: f64) -> LinearCritic {
        let mut c = self.clone();
        c.update(traj, gamma);
        c
    }

    /// Reward-to-go at step `t` minus the critic's value of `x_t`. Episodes cut
    /// off by the horizon are bootstrapped with the critic's value of the last state.
    pub fn advantage(&self, traj: &GeneralizedTrajectory, t: usize, gamma: f64) -> f64 {
        let spec = ReturnSpec {
            gamma,
            mode: ReturnMode::RewardToGo,
            baseline: BaselineKind::LinearCritic,
            bootstrap_truncated: true,
            skill_score: SkillScore::Sampled,
        };
        crate::gradient::step_weights(traj, &spec, Some(self))[t]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

impl Baseline for LinearCritic {
    fn value(&self, state: &[f64]) -> f64 {
        self.predict(state)
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Multiplier applied to both block step sizes at update `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule {
    Constant,
    /// `c / (t0 + k)`.
    RobbinsMonro { c: f64, t0: f64 },
}

impl StepSchedule {
    pub fn factor(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Constant => 1.0,
            StepSchedule::RobbinsMonro { c, t0 } => c / (t0 + k as f64),
        }
    }

    /// `eta_k -> 0` and `sum_k eta_k = inf`. For `c / (t0 + k)` with `c, t0 > 0`
    /// both hold: the terms vanish and the tail is a harmonic series.
    pub fn satisfies_robbins_monro(&self) -> bool {
        match *self {
            StepSchedule::Constant => false,
            StepSchedule::RobbinsMonro { c, t0 } => c > 0.0 && t0 > 0.0 && c.is_finite() && t0.is_finite(),
        }
    }

    /// A number of updates after which the partial sum of factors is at least
    /// `bound`, from `sum_{k<n} c/(t0+k) >= c ln((t0+n)/t0)`.
    pub fn updates_to_exceed(&self, bound: f64) -> Option<u64> {
        match *self {
            StepSchedule::Constant => Some(bound.max(0.0).ceil() as u64),
            StepSchedule::RobbinsMonro { c, t0 } if self.satisfies_robbins_monro() => {
                let n = t0 * ((bound / c).exp() - 1.0);
                (n.is_finite() && n < u64::MAX as f64).then(|| n.max(0.0).ceil() as u64)
            }
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            StepSchedule::Constant => Ok(()),
            s if s.satisfies_robbins_monro() => Ok(()),
            _ => domain_err("robbins-monro schedule needs c > 0 and t0 > 0"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskBatching {
    /// One task drawn from `mu` per update batch.
    PerUpdate,
    /// Every episode in a batch draws its own task.
    PerEpisode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub eta_theta: f64,
    pub eta_beta: f64,
    pub schedule: StepSchedule,
    pub episodes_per_update: usize,
    pub max_episodes: usize,
    pub returns: ReturnSpec,
    pub convergence_tol: f64,
    /// Number of consecutive updates with `|delta omega|_inf < tol` that counts as converged.
    pub convergence_window: usize,
    pub critic_lr: f64,
    pub task_batching: TaskBatching,
    /// Evaluate every this many training episodes; 0 evaluates only at the start and end.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Overrides each world's horizon when set.
    pub horizon: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta_theta: 3e-4,
            eta_beta: 5e-5,
            schedule: StepSchedule::Constant,
            episodes_per_update: 10,
            max_episodes: 20_000,
            returns: ReturnSpec {
                gamma: 0.99,
                mode: ReturnMode::RewardToGo,
                baseline: BaselineKind::LinearCritic,
                bootstrap_truncated: true,
                skill_score: SkillScore::Marginal,
            },
            convergence_tol: 1e-7,
            convergence_window: 50,
            critic_lr: 0.01,
            task_batching: TaskBatching::PerUpdate,
            eval_every: 1000,
            eval_episodes: 100,
            horizon: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.eta_theta) || !finite_nonneg(self.eta_beta) {
            return domain_err("step sizes must be finite and non-negative");
        }
        self.schedule.validate()?;
        if self.episodes_per_update == 0 || self.eval_episodes == 0 {
            return domain_err("episodes_per_update and eval_episodes must be positive");
        }
        if !(self.convergence_tol > 0.0) || self.convergence_window == 0 {
            return domain_err("convergence tolerance and window must be positive");
        }
        if self.returns.baseline == BaselineKind::LinearCritic && !(self.critic_lr > 0.0) {
            return domain_err("critic learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.returns.gamma) {
            return domain_err("gamma must lie in [0,1]");
        }
        if self.horizon == Some(0) {
            return domain_err("horizon must be positive");
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Curves and evaluation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub mean_return: f64,
    pub std_return: f64,
    pub success_rate: f64,
    /// Fraction of steps spent in each skill.
    pub skill_usage: Vec<f64>,
}

impl EvalSummary {
    /// Entropy (nats) of the skill-usage histogram.
    pub fn skill_entropy(&self) -> f64 {
        -self.skill_usage.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    /// Mixture of per-task summaries with the given weights.
    pub fn combine(parts: &[(f64, &EvalSummary)]) -> EvalSummary {
        let n = parts.first().map_or(0, |(_, s)| s.skill_usage.len());
        let mut mean = 0.0;
        let mut second = 0.0;
        let mut success = 0.0;
        let mut usage = vec![0.0; n];
        for (w, s) in parts {
            mean += w * s.mean_return;
            second += w * (s.std_return.powi(2) + s.mean_return.powi(2));
            success += w * s.success_rate;
            usage.iter_mut().zip(&s.skill_usage).for_each(|(u, v)| *u += w * v);
        }
        EvalSummary {
            mean_return: mean,
            std_return: (second - mean * mean).max(0.0).sqrt(),
            success_rate: success,
            skill_usage: usage,
        }
    }
}

/// Stochastic rollouts of the current policy without any update.
pub fn evaluate(
    policy: &AsapPolicy,
    env: &dyn Environment,
    task: &TaskDescriptor,
    episodes: usize,
    rng: &mut Rng64,
) -> Result<EvalSummary> {
    evaluate_seeded(policy, env, task, episodes, rng.random(), None)
}

/// Episode `e` uses stream `e` of `seed`, so results do not depend on thread scheduling.
pub fn evaluate_seeded(
    policy: &AsapPolicy,
    env: &dyn Environment,
    task: &TaskDescriptor,
    episodes: usize,
    seed: u64,
    horizon: Option<usize>,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return domain_err("evaluation needs at least one episode");
    }
    let horizon = horizon.unwrap_or_else(|| env.horizon());
    let trajs: Vec<GeneralizedTrajectory> = (0..episodes as u64)
        .into_par_iter()
        .map(|e| run_trial(env, task, policy, &mut stream_rng(seed, e), horizon))
        .collect::<Result<_>>()?;
    let returns: Vec<f64> = trajs.iter().map(GeneralizedTrajectory::total_reward).collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let mut usage = vec![0.0; policy.params.dims().num_skills()];
    let mut steps = 0usize;
    for g in &trajs {
        for s in g.steps() {
            usage[s.skill.0] += 1.0;
        }
        steps += g.len();
    }
    usage.iter_mut().for_each(|u| *u /= steps as f64);
    Ok(EvalSummary {
        mean_return: mean,
        std_return: var.sqrt(),
        success_rate: trajs.iter().filter(|g| g.terminated()).count() as f64 / n,
        skill_usage: usage,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRecord {
    pub episode: usize,
    pub summary: EvalSummary,
}

/// Evaluation records ordered by training episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearningCurve {
    records: Vec<CurveRecord>,
}

impl LearningCurve {
    pub fn push(&mut self, episode: usize, summary: EvalSummary) -> Result<()> {
        if let Some(last) = self.records.last() {
            if episode <= last.episode {
                return domain_err(format!("curve episode {episode} does not follow {}", last.episode));
            }
        }
        self.records.push(CurveRecord { episode, summary });
        Ok(())
    }

    pub fn records(&self) -> &[CurveRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&CurveRecord> {
        self.records.last()
    }

    /// Mean returns smoothed by a trailing moving average over `window` records.
    pub fn smoothed_returns(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        (0..self.records.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                let s = &self.records[lo..=i];
                s.iter().map(|r| r.summary.mean_return).sum::<f64>() / s.len() as f64
            })
            .collect()
    }

    /// First episode index at which the smoothed mean return reaches `threshold`.
    pub fn episodes_to_threshold(&self, threshold: f64, window: usize) -> Option<usize> {
        self.smoothed_returns(window)
            .iter()
            .position(|r| *r >= threshold)
            .map(|i| self.records[i].episode)
    }

    /// CSV with columns `episode,mean_return,std_return,success_rate,skill_entropy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,mean_return,std_return,success_rate,skill_entropy\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.episode,
                r.summary.mean_return,
                r.summary.std_return,
                r.summary.success_rate,
                r.summary.skill_entropy()
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Parameters: initialisation, flipping, reference policies
// ---------------------------------------------------------------------------

/// Arbitrary starting model: skill entries uniform in (-0.1, 0.1), hyperplane
/// entries uniform in (-1, 1) with magnitudes below 0.1 redrawn.
pub fn misspecified_init(dims: Dims, rng: &mut Rng64) -> Parameters {
    let mut omega = Vec::with_capacity(dims.param_count());
    for _ in 0..dims.theta_len() {
        omega.push(rng.random_range(-0.1..0.1));
    }
    for _ in 0..dims.beta_len() {
        let v = loop {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() >= 0.1 {
                break v;
            }
        };
        omega.push(v);
    }
    Parameters::new(dims, ParamVector(omega)).expect("length matches dims")
}

/// Grid points per axis used to decide where a hyperplane cuts the state space.
const CROSSING_GRID: usize = 21;
/// Smallest share of the state grid each side of an initial hyperplane must hold.
pub const MIN_SIDE_FRACTION: f64 = 0.2;

/// Like [`misspecified_init`], but each hyperplane is redrawn until both of
/// its sides hold at least [`MIN_SIDE_FRACTION`] of `[0,1]^2` for every task
/// of the suite. A hyperplane that misses the square, or clips a corner the
/// agent never visits, gives one skill almost everywhere with an
/// exponentially small hyperplane gradient.
pub fn misspecified_init_for(suite: &TaskSuite, hyperplanes: usize, rng: &mut Rng64) -> Result<Parameters> {
    let dims = suite.features.dims(hyperplanes)?;
    let mut params = misspecified_init(dims, rng);
    let grid: Vec<[f64; 2]> = (0..CROSSING_GRID * CROSSING_GRID)
        .map(|n| {
            let step = 1.0 / (CROSSING_GRID - 1) as f64;
            [(n % CROSSING_GRID) as f64 * step, (n / CROSSING_GRID) as f64 * step]
        })
        .collect();
    let psis: Vec<Vec<Vec<f64>>> = suite
        .distribution
        .tasks()
        .iter()
        .map(|(task, _)| grid.iter().map(|x| suite.features.psi(x, task)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    for k in 0..hyperplanes {
        for _ in 0..10_000 {
            let beta = params.beta(k);
            let crosses = psis.iter().all(|task_psis| {
                let signs = task_psis.iter().map(|psi| crate::policy::dot(beta, psi) > 0.0);
                let share = signs.filter(|s| *s).count() as f64 / task_psis.len() as f64;
                (MIN_SIDE_FRACTION..=1.0 - MIN_SIDE_FRACTION).contains(&share)
            });
            if crosses {
                break;
            }
            for v in params.beta_mut(k) {
                *v = loop {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    if v.abs() >= 0.1 {
                        break v;
                    }
                };
            }
        }
    }
    Ok(params)
}

/// Negates every hyperplane; skill columns are untouched. Skill `i`'s
/// partition becomes that of skill `2^K - 1 - i`.
pub fn flip_hyperplanes(params: &Parameters) -> Parameters {
    let mut out = params.clone();
    let start = params.dims().theta_len();
    out.omega_mut()[start..].iter_mut().for_each(|v| *v = -*v);
    out
}

/// Sets skill column `i` so that its tabular Gibbs policy equals `probs`
/// (up to the temperature).
pub fn set_skill_distribution(params: &mut Parameters, skill: SkillIndex, probs: &[f64], alpha_theta: f64) {
    for (t, p) in params.theta_mut(skill).iter_mut().zip(probs) {
        *t = p.ln() / alpha_theta;
    }
}

/// Action mixes over `[N, S, E, W]` used by the hand-built reference policies.
pub mod reference {
    pub const NORTH_EAST: [f64; 4] = [0.49, 0.01, 0.49, 0.01];
    pub const NORTH_WEST: [f64; 4] = [0.49, 0.01, 0.01, 0.49];
    /// Middle room of 3R: mostly east, sliding down the far wall to the low doorway.
    pub const EAST_SOUTH: [f64; 4] = [0.02, 0.144, 0.816, 0.02];
    /// Outer rooms of 3R: mostly east with enough north to reach the high doorway and the goal.
    pub const EAST_NORTH: [f64; 4] = [0.288, 0.02, 0.672, 0.02];
    /// Hyperplane weight scale; with `alpha_beta = 20` a state half a step
    /// from the boundary already has probability above 0.999.
    pub const HYPERPLANE_SCALE: f64 = 15.0;
}

/// Hand-constructed approximately optimal single-hyperplane model for a
/// built-in suite (`K = 1`).
///
/// - `2R`: boundary `x + y = 0.95`, a diagonal through the doorway. Skill 0
///   heads north-east below it, skill 1 north-west above it. The diagonal
///   also catches walks that drift east of the doorway and turns them back.
/// - `flipped2R`: the mirror image, skills mirrored.
/// - `3R`: boundary `sin(3 pi x) = 0`; skill 1 heads east-north-east in the
///   outer rooms, skill 0 east-south-east in the middle room.
pub fn reference_parameters(suite: &TaskSuite, alpha_theta: f64) -> Result<Parameters> {
    use reference::*;
    let dims = suite.features.dims(1)?;
    let mut p = Parameters::zeros(dims);
    let s = HYPERPLANE_SCALE;
    let mirror = |v: [f64; 4]| [v[0], v[1], v[3], v[2]];
    match suite.name.as_str() {
        "2R" => {
            set_skill_distribution(&mut p, SkillIndex(0), &NORTH_EAST, alpha_theta);
            set_skill_distribution(&mut p, SkillIndex(1), &NORTH_WEST, alpha_theta);
            p.beta_mut(0).copy_from_slice(&[-0.95 * s, s, s]);
        }
        "flipped2R" => {
            set_skill_distribution(&mut p, SkillIndex(0), &mirror(NORTH_EAST), alpha_theta);
            set_skill_distribution(&mut p, SkillIndex(1), &mirror(NORTH_WEST), alpha_theta);
            p.beta_mut(0).copy_from_slice(&[0.05 * s, -s, s]);
        }
        "3R" => {
            set_skill_distribution(&mut p, SkillIndex(0), &EAST_SOUTH, alpha_theta);
            set_skill_distribution(&mut p, SkillIndex(1), &EAST_NORTH, alpha_theta);
            p.beta_mut(0).copy_from_slice(&[0.0, s]);
        }
        other => {
            return Err(AsapError::Config(format!("no reference model for suite '{other}'")));
        }
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Parameters,
    /// Evaluation curve combined across tasks with weights `mu(m)`.
    pub curve: LearningCurve,
    /// One curve per task, in suite order.
    pub task_curves: Vec<(String, LearningCurve)>,
    pub episodes: usize,
    pub updates: usize,
    pub converged: bool,
}

/// Progress notifications from [`train_with`].
pub enum TrainEvent<'a> {
    Update { update: usize, episodes: usize, params: &'a Parameters },
    Evaluation { episode: usize, summary: &'a EvalSummary },
}

pub fn train(config: &TrainConfig, suite: &TaskSuite, initial: AsapPolicy) -> Result<TrainOutcome> {
    train_with(config, suite, initial, &mut |_| {})
}

/// Runs the ASAP loop until `max_episodes` or convergence.
pub fn train_with(
    config: &TrainConfig,
    suite: &TaskSuite,
    initial: AsapPolicy,
    on_event: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut policy = initial;
    let dims = *policy.params.dims();
    if dims.d_phi != suite.features.d_phi() || dims.d_psi != suite.features.d_psi() {
        return Err(AsapError::Dimension("initial parameters do not match the suite features".into()));
    }
    let mu = &suite.distribution;
    let mut task_rng = stream_rng(config.seed, 0);
    let eval_seed = config.seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut critic = match config.returns.baseline {
        BaselineKind::LinearCritic => Some(LinearCritic::new(suite.features.clone(), config.critic_lr)?),
        BaselineKind::None => None,
    };

    let mut task_curves: Vec<(String, LearningCurve)> =
        mu.tasks().iter().map(|(t, _)| (t.env_id.clone(), LearningCurve::default())).collect();
    let mut curve = LearningCurve::default();
    let record = |policy: &AsapPolicy,
                      episode: usize,
                      curve: &mut LearningCurve,
                      task_curves: &mut Vec<(String, LearningCurve)>,
                      on_event: &mut dyn FnMut(TrainEvent<'_>)|
     -> Result<()> {
        let mut parts = Vec::with_capacity(mu.len());
        for (i, (task, w)) in mu.tasks().iter().enumerate() {
            let s = evaluate_seeded(policy, &suite.worlds[i], task, config.eval_episodes, eval_seed, config.horizon)?;
            task_curves[i].1.push(episode, s.clone())?;
            parts.push((*w, s));
        }
        let refs: Vec<(f64, &EvalSummary)> = parts.iter().map(|(w, s)| (*w, s)).collect();
        let combined = EvalSummary::combine(&refs);
        on_event(TrainEvent::Evaluation { episode, summary: &combined });
        curve.push(episode, combined)
    };
    record(&policy, 0, &mut curve, &mut task_curves, on_event)?;

    let mut episodes = 0usize;
    let mut updates = 0usize;
    let mut quiet_updates = 0usize;
    let mut converged = false;
    let mut next_eval = if config.eval_every > 0 { config.eval_every } else { usize::MAX };
    let (theta_len, z) = (dims.theta_len(), dims.param_count());

    while episodes < config.max_episodes && !converged {
        let batch = config.episodes_per_update.min(config.max_episodes - episodes);
        let tasks: Vec<usize> = match config.task_batching {
            TaskBatching::PerUpdate => vec![mu.sample_index(&mut task_rng); batch],
            TaskBatching::PerEpisode => (0..batch).map(|_| mu.sample_index(&mut task_rng)).collect(),
        };
        let trajs: Vec<GeneralizedTrajectory> = tasks
            .par_iter()
            .enumerate()
            .map(|(b, &ti)| {
                let world = &suite.worlds[ti];
                let mut rng = stream_rng(config.seed, 1 + (episodes + b) as u64);
                run_trial(world, &mu.tasks()[ti].0, &policy, &mut rng, config.horizon.unwrap_or(world.horizon()))
            })
            .collect::<Result<_>>()?;

        let baseline = critic.as_ref().map(|c| c as &dyn Baseline);
        let grad = estimate_gradient(&trajs, &policy, &config.returns, baseline, TaskWeighting::Empirical)?;
        if let Some(c) = critic.as_mut() {
            for g in &trajs {
                c.update(g, config.returns.gamma);
            }
        }

        let previous = policy.params.clone();
        let factor = config.schedule.factor(updates);
        let (eta_t, eta_b) = (config.eta_theta * factor, config.eta_beta * factor);
        let mut max_delta = 0.0f64;
        for (j, (w, g)) in policy.params.omega_mut().iter_mut().zip(&grad).enumerate().take(z) {
            let step = if j < theta_len { eta_t * g } else { eta_b * g };
            *w += step;
            max_delta = max_delta.max(step.abs());
        }
        episodes += batch;
        updates += 1;

        if !policy.params.is_finite() || !max_delta.is_finite() || critic.as_ref().is_some_and(|c| !c.is_finite()) {
            return Err(AsapError::Divergence {
                episodes,
                reason: "parameters became non-finite".into(),
                last_finite: Box::new(previous),
            });
        }
        on_event(TrainEvent::Update { update: updates, episodes, params: &policy.params });

        quiet_updates = if max_delta < config.convergence_tol { quiet_updates + 1 } else { 0 };
        converged = quiet_updates >= config.convergence_window;

        if episodes >= next_eval {
            record(&policy, episodes, &mut curve, &mut task_curves, on_event)?;
            while next_eval <= episodes {
                next_eval += config.eval_every;
            }
        }
    }
    if curve.last().is_some_and(|r| r.episode < episodes) {
        record(&policy, episodes, &mut curve, &mut task_curves, on_event)?;
    }

    Ok(TrainOutcome { params: policy.params, curve, task_curves, episodes, updates, converged })
}
