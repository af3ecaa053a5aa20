//! Closed-form score functions of the ASAP policy and the Monte-Carlo
//! policy-gradient estimator built from them.
//!
//! For one step the score is `grad_omega log[p(i_t | x_t, m) sigma_{theta_{i_t}}(a_t | x_t)]`.
//! Only the executed skill's column and the `K` hyperplane columns can be
//! non-zero.

use rayon::prelude::*;
use serde::Serialize;

use crate::envs::{TaskDescriptor, TaskDistribution};
use crate::error::{dim_err, domain_err, AsapError, Result};
use crate::params::{GeneralizedStep, GeneralizedTrajectory, SkillIndex};
use crate::policy::{dot, sigmoid, softmax, AsapPolicy};

/// Margins `|alpha_beta psi^T beta_k|` above this are treated as saturated.
pub const SATURATION_MARGIN: f64 = 30.0;

/// Default finite-difference step.
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Floor on the denominator of relative errors.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// `alpha_theta (phi_{x,a} - E_{b ~ sigma}[phi_{x,b}])`.
pub fn grad_log_intra(
    theta_i: &[f64],
    state: &[f64],
    action: usize,
    features: &crate::envs::FeatureBuilder,
    alpha_theta: f64,
) -> Result<Vec<f64>> {
    let d = features.d_phi();
    let n = features.num_actions();
    if theta_i.len() != d {
        return dim_err(format!("skill column has {} entries, phi has {d}", theta_i.len()));
    }
    if action >= n {
        return domain_err(format!("action {action} out of range"));
    }
    let phi = features.phi_all(state);
    let logits: Vec<f64> = phi.chunks_exact(d).map(|row| alpha_theta * dot(row, theta_i)).collect();
    let sigma = softmax(&logits)?;
    let mut g = phi[action * d..(action + 1) * d].to_vec();
    for (row, p) in phi.chunks_exact(d).zip(&sigma) {
        g.iter_mut().zip(row).for_each(|(gj, f)| *gj -= p * f);
    }
    g.iter_mut().for_each(|gj| *gj *= alpha_theta);
    Ok(g)
}

/// Score of hyperplane `k` for the observed bit: `+alpha psi (1 - p_k)` when
/// the bit is 1 and `-alpha psi p_k` when it is 0, with `p_k = p_k(b_k = 1)`.
pub fn grad_log_hyperplane(beta_k: &[f64], psi: &[f64], alpha_beta: f64, bit: u8) -> Result<Vec<f64>> {
    if beta_k.len() != psi.len() {
        return dim_err(format!("hyperplane has {} entries, features have {}", beta_k.len(), psi.len()));
    }
    let z = alpha_beta * dot(beta_k, psi);
    if !z.is_finite() {
        return Err(AsapError::Numeric(format!("hyperplane margin is {z}")));
    }
    let factor = match bit {
        1 => alpha_beta * sigmoid(-z),
        0 => -alpha_beta * sigmoid(z),
        b => return domain_err(format!("bit must be 0 or 1, got {b}")),
    };
    Ok(psi.iter().map(|p| factor * p).collect())
}

/// Dense score vector with the same layout as the parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct StepScoreGradient {
    pub grad: Vec<f64>,
}

/// `log[p(i | x, m) sigma_{theta_i}(a | x)]`.
pub fn log_step_prob(
    policy: &AsapPolicy,
    state: &[f64],
    task: &TaskDescriptor,
    skill: SkillIndex,
    action: usize,
) -> Result<f64> {
    let p_skill = policy.skill_distribution(state, task)?.prob(skill);
    let p_action = policy.action_distribution(skill, state)?.probs[action];
    Ok(p_skill.ln() + p_action.ln())
}

/// Adds `weight * grad log[p(i_t) sigma(a_t)]` to `out` (length `Z`).
pub fn accumulate_step_score(
    policy: &AsapPolicy,
    step: &GeneralizedStep,
    task: &TaskDescriptor,
    weight: f64,
    out: &mut [f64],
) -> Result<()> {
    let dims = *policy.params.dims();
    if out.len() != dims.param_count() {
        return dim_err(format!("gradient buffer has length {}, expected {}", out.len(), dims.param_count()));
    }
    if step.skill.0 >= dims.num_skills() || step.action >= dims.num_actions {
        return domain_err(format!("step has skill {} / action {} out of range", step.skill, step.action));
    }
    let g_theta = grad_log_intra(
        policy.params.theta(step.skill),
        &step.state,
        step.action,
        &policy.features,
        policy.temps.alpha_theta,
    )?;
    out[dims.theta_range(step.skill)].iter_mut().zip(&g_theta).for_each(|(o, g)| *o += weight * g);
    let psi = policy.features.psi(&step.state, task)?;
    for k in 0..dims.hyperplanes {
        let g_beta = grad_log_hyperplane(policy.params.beta(k), &psi, policy.temps.alpha_beta, step.skill.bit(k))?;
        out[dims.beta_range(k)].iter_mut().zip(&g_beta).for_each(|(o, g)| *o += weight * g);
    }
    Ok(())
}

/// Adds `weight * grad log pi(a_t | x_t, m)` for the marginal action probability.
/// This is the sampled-skill score averaged over the posterior
/// `p(i | x, m) sigma_i(a | x) / pi(a | x, m)`, so the executed skill index is not used.
pub fn accumulate_marginal_step_score(
    policy: &AsapPolicy,
    step: &GeneralizedStep,
    task: &TaskDescriptor,
    weight: f64,
    out: &mut [f64],
) -> Result<()> {
    let skills = policy.skill_distribution(&step.state, task)?;
    let joint: Vec<f64> = (0..skills.probs.len())
        .map(|i| Ok(skills.probs[i] * policy.action_distribution(SkillIndex(i), &step.state)?.probs[step.action]))
        .collect::<Result<_>>()?;
    let total: f64 = joint.iter().sum();
    if !(total > 0.0) {
        return Err(AsapError::Numeric(format!("marginal action probability is {total}")));
    }
    let mut s = step.clone();
    for (i, j) in joint.iter().enumerate() {
        if *j > 0.0 {
            s.skill = SkillIndex(i);
            accumulate_step_score(policy, &s, task, weight * j / total, out)?;
        }
    }
    Ok(())
}

pub fn grad_log_step(policy: &AsapPolicy, step: &GeneralizedStep, task: &TaskDescriptor) -> Result<StepScoreGradient> {
    let mut grad = vec![0.0; policy.params.dims().param_count()];
    accumulate_step_score(policy, step, task, 1.0, &mut grad)?;
    Ok(StepScoreGradient { grad })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ReturnMode {
    /// Every step is weighted by the whole discounted return `sum_j gamma^j r_j`.
    FullReturn,
    /// Step `t` is weighted by `sum_{j>=t} gamma^(j-t) r_j` minus an optional baseline.
    RewardToGo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BaselineKind {
    None,
    LinearCritic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReturnSpec {
    pub gamma: f64,
    pub mode: ReturnMode,
    pub baseline: BaselineKind,
    /// Append `gamma^(T-t) V(x_T)` to the reward-to-go of episodes cut off by
    /// the horizon. Only applies when a baseline is supplied.
    pub bootstrap_truncated: bool,
    pub skill_score: SkillScore,
}

/// Which log-probability the estimator differentiates at each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SkillScore {
    /// `log p(i_t | x_t, m) + log sigma_{i_t}(a_t | x_t)` with the executed skill.
    Sampled,
    /// `log pi(a_t | x_t, m)`, summing the skill out. Same expectation, lower variance.
    Marginal,
}

impl ReturnSpec {
    pub fn new(gamma: f64, mode: ReturnMode, baseline: BaselineKind) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return domain_err(format!("gamma must lie in [0,1], got {gamma}"));
        }
        Ok(ReturnSpec { gamma, mode, baseline, bootstrap_truncated: false, skill_score: SkillScore::Sampled })
    }

    pub fn with_skill_score(mut self, score: SkillScore) -> Self {
        self.skill_score = score;
        self
    }

    pub fn with_truncation_bootstrap(mut self, on: bool) -> Self {
        self.bootstrap_truncated = on;
        self
    }

    pub fn full_return(gamma: f64) -> Result<Self> {
        Self::new(gamma, ReturnMode::FullReturn, BaselineKind::None)
    }
}

/// State-value estimate subtracted from the reward-to-go.
pub trait Baseline: Sync {
    fn value(&self, state: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> Baseline for F {
    fn value(&self, state: &[f64]) -> f64 {
        self(state)
    }
}

/// Per-step weights `G_t` used by the estimator.
pub fn step_weights(traj: &GeneralizedTrajectory, spec: &ReturnSpec, baseline: Option<&dyn Baseline>) -> Vec<f64> {
    match spec.mode {
        ReturnMode::FullReturn => vec![traj.discounted_return(spec.gamma); traj.len()],
        ReturnMode::RewardToGo => {
            let tail = match baseline {
                Some(b) if spec.bootstrap_truncated && !traj.terminated() => {
                    b.value(&traj.steps()[traj.len() - 1].next_state)
                }
                _ => 0.0,
            };
            let mut g = traj.rewards_to_go_from(spec.gamma, tail);
            if let Some(b) = baseline {
                g.iter_mut().zip(traj.steps()).for_each(|(gt, s)| *gt -= b.value(&s.state));
            }
            g
        }
    }
}

/// `sum_t grad Z(x_t, i_t, a_t) G_t` for one trajectory.
pub fn trajectory_score(
    policy: &AsapPolicy,
    traj: &GeneralizedTrajectory,
    spec: &ReturnSpec,
    baseline: Option<&dyn Baseline>,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; policy.params.dims().param_count()];
    for (step, w) in traj.steps().iter().zip(step_weights(traj, spec, baseline)) {
        if w != 0.0 {
            match spec.skill_score {
                SkillScore::Sampled => accumulate_step_score(policy, step, traj.task(), w, &mut out)?,
                SkillScore::Marginal => accumulate_marginal_step_score(policy, step, traj.task(), w, &mut out)?,
            }
        }
    }
    Ok(out)
}

/// How per-task averages are combined.
#[derive(Clone, Copy, Debug)]
pub enum TaskWeighting<'a> {
    /// Weight each task by its share of the trajectories (unbiased when tasks are drawn from `mu`).
    Empirical,
    /// Weight by `mu(m)`, renormalised over the tasks present.
    Explicit(&'a TaskDistribution),
}

/// Nested average `< sum_m < sum_t grad Z G_t > >`: trajectories are grouped by
/// task, averaged within each task, then combined across tasks.
///
/// Per-trajectory work runs in parallel; the reduction order is fixed so the
/// result does not depend on scheduling.
pub fn estimate_gradient(
    trajectories: &[GeneralizedTrajectory],
    policy: &AsapPolicy,
    spec: &ReturnSpec,
    baseline: Option<&dyn Baseline>,
    weighting: TaskWeighting<'_>,
) -> Result<Vec<f64>> {
    if trajectories.is_empty() {
        return domain_err("cannot estimate a gradient from zero trajectories");
    }
    let scores: Vec<Vec<f64>> = trajectories
        .par_iter()
        .map(|g| trajectory_score(policy, g, spec, baseline))
        .collect::<Result<_>>()?;

    let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
    for (n, g) in trajectories.iter().enumerate() {
        let id = g.task().env_id.as_str();
        match groups.iter_mut().find(|(gid, _)| *gid == id) {
            Some((_, members)) => members.push(n),
            None => groups.push((id, vec![n])),
        }
    }

    let weights: Vec<f64> = match weighting {
        TaskWeighting::Empirical => {
            groups.iter().map(|(_, m)| m.len() as f64 / trajectories.len() as f64).collect()
        }
        TaskWeighting::Explicit(mu) => {
            let raw: Vec<f64> = groups
                .iter()
                .map(|(id, _)| {
                    mu.weight_of(id).ok_or_else(|| AsapError::Domain(format!("task '{id}' is not in the distribution")))
                })
                .collect::<Result<_>>()?;
            let total: f64 = raw.iter().sum();
            if !(total > 0.0) {
                return domain_err("sampled tasks all have zero weight");
            }
            raw.iter().map(|w| w / total).collect()
        }
    };

    let z = policy.params.dims().param_count();
    let mut grad = vec![0.0; z];
    for ((_, members), w) in groups.iter().zip(weights) {
        let mut mean = vec![0.0; z];
        for &n in members {
            mean.iter_mut().zip(&scores[n]).for_each(|(m, s)| *m += s);
        }
        let scale = w / members.len() as f64;
        grad.iter_mut().zip(&mean).for_each(|(g, m)| *g += scale * m);
    }
    Ok(grad)
}

/// One coordinate of a gradient check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoordinateReport {
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub saturated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckSummary {
    /// Worst relative error over non-saturated coordinates.
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
    pub checked: usize,
    pub saturated: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<CoordinateReport>,
    pub summary: GradCheckSummary,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.summary.max_rel_error
    }

    pub fn any_saturated(&self) -> bool {
        self.summary.saturated > 0
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `probe` at `omega`.
///
/// Coordinates flagged in `saturated` are differenced and reported but left
/// out of the worst-case error.
pub fn finite_diff_check(
    omega: &[f64],
    probe: impl Fn(&[f64]) -> Result<f64>,
    analytic: &[f64],
    eps: f64,
    saturated: &[bool],
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return domain_err(format!("finite-difference step must be positive, got {eps}"));
    }
    if analytic.len() != omega.len() || saturated.len() != omega.len() {
        return dim_err("analytic gradient, saturation mask and parameters must have equal length");
    }
    let mut x = omega.to_vec();
    let mut entries = Vec::with_capacity(omega.len());
    for j in 0..omega.len() {
        let orig = x[j];
        x[j] = orig + eps;
        let fp = probe(&x)?;
        x[j] = orig - eps;
        let fm = probe(&x)?;
        x[j] = orig;
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(AsapError::Numeric(format!("probe returned a non-finite value at coordinate {j}")));
        }
        let numeric = (fp - fm) / (2.0 * eps);
        entries.push(CoordinateReport {
            coordinate: j,
            analytic: analytic[j],
            numeric,
            rel_error: relative_error(analytic[j], numeric),
            saturated: saturated[j],
        });
    }
    let mut worst: Option<&CoordinateReport> = None;
    for e in entries.iter().filter(|e| !e.saturated) {
        if worst.is_none_or(|w| e.rel_error > w.rel_error) {
            worst = Some(e);
        }
    }
    let summary = GradCheckSummary {
        max_rel_error: worst.map_or(0.0, |w| w.rel_error),
        worst_coordinate: worst.map(|w| w.coordinate),
        checked: entries.iter().filter(|e| !e.saturated).count(),
        saturated: entries.iter().filter(|e| e.saturated).count(),
    };
    Ok(GradCheckReport { entries, summary })
}

/// Marks the hyperplane coordinates whose margin at `(x, m)` is saturated.
pub fn saturation_mask(policy: &AsapPolicy, state: &[f64], task: &TaskDescriptor) -> Result<Vec<bool>> {
    let dims = *policy.params.dims();
    let psi = policy.features.psi(state, task)?;
    let mut mask = vec![false; dims.param_count()];
    for k in 0..dims.hyperplanes {
        let z = policy.temps.alpha_beta * dot(policy.params.beta(k), &psi);
        if z.abs() > SATURATION_MARGIN {
            mask[dims.beta_range(k)].fill(true);
        }
    }
    Ok(mask)
}

/// Checks `analytic` (defaults to [`grad_log_step`]) for one `(x, m, i, a)`
/// against central differences of [`log_step_prob`].
pub fn check_step_gradient(
    policy: &AsapPolicy,
    step: &GeneralizedStep,
    task: &TaskDescriptor,
    eps: f64,
    analytic: Option<&[f64]>,
) -> Result<GradCheckReport> {
    let owned;
    let analytic = match analytic {
        Some(a) => a,
        None => {
            owned = grad_log_step(policy, step, task)?.grad;
            &owned
        }
    };
    let mask = saturation_mask(policy, &step.state, task)?;
    let probe = |omega: &[f64]| -> Result<f64> {
        let mut p = policy.clone();
        p.params.omega_mut().copy_from_slice(omega);
        log_step_prob(&p, &step.state, task, step.skill, step.action)
    };
    finite_diff_check(policy.params.omega().as_slice(), probe, analytic, eps, &mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_phi_tabular_actions, build_psi_linear, FeatureBuilder};
    use crate::params::{Dims, ParamVector, Parameters, Temperatures};
    use crate::Rng64;
    use rand::{Rng, SeedableRng};

    fn policy(k: usize, omega: Option<Vec<f64>>, temps: Temperatures) -> AsapPolicy {
        let f = FeatureBuilder::new(build_phi_tabular_actions(4).unwrap(), build_psi_linear(), 0);
        let dims = f.dims(k).unwrap();
        let params = match omega {
            Some(o) => Parameters::new(dims, ParamVector(o)).unwrap(),
            None => Parameters::zeros(dims),
        };
        AsapPolicy::new(params, temps, f).unwrap()
    }

    fn task() -> TaskDescriptor {
        TaskDescriptor::new("t", vec![])
    }

    fn step(skill: usize, action: usize, reward: f64) -> GeneralizedStep {
        GeneralizedStep {
            state: vec![0.3, 0.8],
            action,
            skill: SkillIndex(skill),
            reward,
            next_state: vec![0.3, 0.85],
        }
    }

    #[test]
    fn intra_gradient_at_zero_parameters() {
        let f = FeatureBuilder::new(build_phi_tabular_actions(4).unwrap(), build_psi_linear(), 0);
        let g = grad_log_intra(&[0.0; 4], &[0.5, 0.5], 2, &f, 1.0).unwrap();
        assert_eq!(g, vec![-0.25, -0.25, 0.75, -0.25]);
    }

    #[test]
    fn intra_gradient_with_one_action_is_zero() {
        #[derive(Debug)]
        struct One;
        impl crate::envs::ActionFeatures for One {
            fn dim(&self) -> usize {
                2
            }
            fn num_actions(&self) -> usize {
                1
            }
            fn write(&self, s: &[f64], _a: usize, out: &mut [f64]) {
                out.copy_from_slice(&s[..2]);
            }
        }
        let f = FeatureBuilder::new(std::sync::Arc::new(One), build_psi_linear(), 0);
        assert_eq!(grad_log_intra(&[0.7, -1.0], &[0.5, 0.25], 0, &f, 2.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hyperplane_gradient_at_zero() {
        let psi = [1.0, 0.4, 0.6];
        assert_eq!(grad_log_hyperplane(&[0.0; 3], &psi, 20.0, 1).unwrap(), vec![10.0, 4.0, 6.0]);
        assert_eq!(grad_log_hyperplane(&[0.0; 3], &psi, 20.0, 0).unwrap(), vec![-10.0, -4.0, -6.0]);
        assert!(grad_log_hyperplane(&[0.0; 3], &psi, 20.0, 2).is_err());
        assert!(grad_log_hyperplane(&[0.0; 2], &psi, 20.0, 1).is_err());
    }

    #[test]
    fn hyperplane_gradient_matches_closed_form() {
        let mut rng = Rng64::seed_from_u64(8);
        for _ in 0..100 {
            let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let psi = [1.0, rng.random(), rng.random()];
            let a = 3.0;
            let z = a * dot(&beta, &psi);
            let e = (-z).exp();
            let g1 = grad_log_hyperplane(&beta, &psi, a, 1).unwrap();
            let g0 = grad_log_hyperplane(&beta, &psi, a, 0).unwrap();
            for j in 0..3 {
                let c1 = a * psi[j] * e / (1.0 + e);
                let c0 = -a * psi[j] + a * psi[j] * e / (1.0 + e);
                assert!((g1[j] - c1).abs() < 1e-12);
                assert!((g0[j] - c0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_gradient_composition_at_zero() {
        let temps = Temperatures::new(1.0, 20.0).unwrap();
        let p = policy(1, None, temps);
        let g = grad_log_step(&p, &step(1, 0, 0.0), &task()).unwrap().grad;
        assert_eq!(&g[0..4], &[0.0; 4]);
        assert_eq!(&g[4..8], &[0.75, -0.25, -0.25, -0.25]);
        assert_eq!(&g[8..11], &[10.0, 3.0, 8.0]);
    }

    #[test]
    fn non_executed_columns_are_exactly_zero() {
        let mut rng = Rng64::seed_from_u64(2);
        for k in 1..=3 {
            let dims = Dims::new(4, 3, k, 4).unwrap();
            let omega = (0..dims.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = policy(k, Some(omega), Temperatures::default());
            for i in 0..dims.num_skills() {
                let g = grad_log_step(&p, &step(i, 3, 0.0), &task()).unwrap().grad;
                for j in 0..dims.num_skills() {
                    if j != i {
                        assert!(g[dims.theta_range(SkillIndex(j))].iter().all(|v| *v == 0.0));
                    }
                }
                let nonzero = g.iter().filter(|v| **v != 0.0).count();
                assert!(nonzero <= dims.d_phi + dims.d_psi * k);
            }
        }
    }

    #[test]
    fn quadratic_probe_is_exact() {
        let omega = vec![0.3, -1.2, 2.5, 0.01];
        let analytic: Vec<f64> = omega.iter().map(|v| 2.0 * v).collect();
        let r = finite_diff_check(&omega, |w| Ok(w.iter().map(|v| v * v).sum()), &analytic, 1e-5, &[false; 4])
            .unwrap();
        assert!(r.max_rel_error() < 1e-9, "{}", r.max_rel_error());
    }

    #[test]
    fn checker_rejects_bad_inputs() {
        let omega = vec![0.0; 2];
        assert!(finite_diff_check(&omega, |_| Ok(0.0), &[0.0; 2], 0.0, &[false; 2]).is_err());
        assert!(finite_diff_check(&omega, |_| Ok(f64::NAN), &[0.0; 2], 1e-5, &[false; 2]).is_err());
        assert!(finite_diff_check(&omega, |_| Ok(0.0), &[0.0; 3], 1e-5, &[false; 2]).is_err());
    }

    #[test]
    fn log_policy_probe_self_test() {
        let mut rng = Rng64::seed_from_u64(4);
        let dims = Dims::new(4, 3, 2, 4).unwrap();
        let omega = (0..dims.param_count()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let p = policy(2, Some(omega), Temperatures::new(1.0, 2.0).unwrap());
        let r = check_step_gradient(&p, &step(2, 1, 0.0), &task(), 1e-5, None).unwrap();
        assert!(!r.any_saturated());
        assert!(r.max_rel_error() < 1e-5, "{}", r.max_rel_error());
    }

    #[test]
    fn saturated_coordinates_are_flagged_not_failed() {
        let dims = Dims::new(4, 3, 1, 4).unwrap();
        let mut omega = vec![0.1; dims.param_count()];
        omega[dims.beta_range(0)].copy_from_slice(&[4.0, 0.0, 0.0]);
        let p = policy(1, Some(omega), Temperatures::new(1.0, 20.0).unwrap());
        let r = check_step_gradient(&p, &step(0, 1, 0.0), &task(), 1e-5, None).unwrap();
        assert!(r.any_saturated());
        assert_eq!(r.summary.saturated, 3);
        assert!(r.entries[dims.beta_range(0)].iter().all(|e| e.saturated));
        assert!(r.max_rel_error() < 1e-5);
    }

    #[test]
    fn zero_rewards_give_zero_gradient() {
        let p = policy(1, Some(vec![0.2; 11]), Temperatures::default());
        let g = GeneralizedTrajectory::new(vec![step(0, 1, 0.0), {
            let mut s = step(1, 2, 0.0);
            s.state = vec![0.3, 0.85];
            s
        }], task(), false)
        .unwrap();
        for mode in [ReturnMode::FullReturn, ReturnMode::RewardToGo] {
            let spec = ReturnSpec::new(0.9, mode, BaselineKind::None).unwrap();
            let est = estimate_gradient(std::slice::from_ref(&g), &p, &spec, None, TaskWeighting::Empirical).unwrap();
            assert!(est.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn single_step_trajectory_is_reward_times_score() {
        let p = policy(1, Some((0..11).map(|j| j as f64 * 0.1 - 0.5).collect()), Temperatures::new(1.0, 2.0).unwrap());
        let s = step(1, 3, 2.5);
        let g = GeneralizedTrajectory::new(vec![s.clone()], task(), true).unwrap();
        let score = grad_log_step(&p, &s, &task()).unwrap().grad;
        for mode in [ReturnMode::FullReturn, ReturnMode::RewardToGo] {
            let spec = ReturnSpec::new(0.37, mode, BaselineKind::None).unwrap();
            let est = estimate_gradient(std::slice::from_ref(&g), &p, &spec, None, TaskWeighting::Empirical).unwrap();
            for (e, sc) in est.iter().zip(&score) {
                assert!((e - 2.5 * sc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        let p = policy(1, None, Temperatures::default());
        let spec = ReturnSpec::full_return(1.0).unwrap();
        assert!(estimate_gradient(&[], &p, &spec, None, TaskWeighting::Empirical).is_err());
        assert!(ReturnSpec::full_return(1.5).is_err());
    }

    #[test]
    fn nested_average_weights_tasks() {
        let p = policy(1, Some(vec![0.1; 11]), Temperatures::new(1.0, 2.0).unwrap());
        let traj = |id: &str, r: f64| {
            GeneralizedTrajectory::new(vec![step(0, 0, r)], TaskDescriptor::new(id, vec![]), true).unwrap()
        };
        let batch = vec![traj("a", 1.0), traj("a", 3.0), traj("b", 10.0)];
        let spec = ReturnSpec::full_return(1.0).unwrap();
        let score = grad_log_step(&p, &step(0, 0, 0.0), &task()).unwrap().grad;

        // Empirical weights reduce to the flat mean over trajectories.
        let emp = estimate_gradient(&batch, &p, &spec, None, TaskWeighting::Empirical).unwrap();
        for (e, s) in emp.iter().zip(&score) {
            assert!((e - s * 14.0 / 3.0).abs() < 1e-12);
        }
        let mu = TaskDistribution::new(vec![
            (TaskDescriptor::new("a", vec![]), 0.5),
            (TaskDescriptor::new("b", vec![]), 0.5),
        ])
        .unwrap();
        let exp = estimate_gradient(&batch, &p, &spec, None, TaskWeighting::Explicit(&mu)).unwrap();
        for (e, s) in exp.iter().zip(&score) {
            assert!((e - s * (0.5 * 2.0 + 0.5 * 10.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_score_matches_log_pi_differences() {
        let mut rng = Rng64::seed_from_u64(21);
        for k in 1..=2 {
            let n = policy(k, None, Temperatures::new(1.0, 2.0).unwrap()).params.dims().param_count();
            let omega: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pol = policy(k, Some(omega.clone()), Temperatures::new(1.0, 2.0).unwrap());
            let st = step(0, 2, 0.0);
            let mut g = vec![0.0; n];
            accumulate_marginal_step_score(&pol, &st, &task(), 1.0, &mut g).unwrap();
            let eps = 1e-6;
            for j in 0..n {
                let at = |d: f64| {
                    let mut o = omega.clone();
                    o[j] += d;
                    policy(k, Some(o), Temperatures::new(1.0, 2.0).unwrap()).action_prob(&st.state, &task(), 2).unwrap().ln()
                };
                let fd = (at(eps) - at(-eps)) / (2.0 * eps);
                assert!((g[j] - fd).abs() < 1e-7, "K={k} entry {j}: {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn truncated_episodes_bootstrap_from_last_state() {
        let mut second = step(0, 0, -1.0);
        second.state = vec![0.3, 0.85];
        second.next_state = vec![0.3, 0.9];
        let steps = vec![step(0, 0, -1.0), second];
        let traj = GeneralizedTrajectory::new(steps.clone(), task(), false).unwrap();
        let v = |_: &[f64]| -10.0;
        let spec = ReturnSpec::new(0.5, ReturnMode::RewardToGo, BaselineKind::LinearCritic).unwrap();
        assert_eq!(step_weights(&traj, &spec, Some(&v)), vec![-1.5 + 10.0, -1.0 + 10.0]);
        let boot = spec.with_truncation_bootstrap(true);
        assert_eq!(step_weights(&traj, &boot, Some(&v)), vec![-1.5 - 2.5 + 10.0, -1.0 - 5.0 + 10.0]);
        let done = GeneralizedTrajectory::new(steps, task(), true).unwrap();
        assert_eq!(step_weights(&done, &boot, Some(&v)), vec![-1.5 + 10.0, -1.0 + 10.0]);
    }
}
