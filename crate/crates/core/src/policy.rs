//! Hyperplane activations, the Bernoulli skill likelihood, the Gibbs
//! intra-skill policy and their mixture.

use rand::Rng;

use crate::envs::{FeatureBuilder, TaskDescriptor};
use crate::error::{dim_err, domain_err, AsapError, Result};
use crate::params::{Parameters, SkillIndex, Temperatures};
use crate::Rng64;

/// Tolerance on the total mass of a stored distribution.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Logistic sigmoid evaluated without overflow for any finite `z`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `psi^T beta_k`.
pub fn hyperplane_margin(beta_k: &[f64], psi: &[f64]) -> Result<f64> {
    if beta_k.len() != psi.len() {
        return dim_err(format!("hyperplane has {} entries, features have {}", beta_k.len(), psi.len()));
    }
    let m = dot(beta_k, psi);
    if !m.is_finite() {
        return Err(AsapError::Numeric(format!("hyperplane margin is {m}")));
    }
    Ok(m)
}

/// `p_k(b_k = 1 | x, m) = 1 / (1 + exp(-alpha_beta psi^T beta_k))`.
pub fn hyperplane_activation(beta_k: &[f64], psi: &[f64], alpha_beta: f64) -> Result<f64> {
    if !(alpha_beta > 0.0) {
        return domain_err(format!("alpha_beta must be positive, got {alpha_beta}"));
    }
    Ok(sigmoid(alpha_beta * hyperplane_margin(beta_k, psi)?))
}

fn validate_probs(probs: &[f64], what: &str) -> Result<()> {
    if probs.is_empty() {
        return domain_err(format!("{what} has no outcomes"));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return domain_err(format!("{what} has a negative or non-finite entry"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return domain_err(format!("{what} sums to {total}"));
    }
    Ok(())
}

/// Draws an index by inverse CDF over `probs`.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng64) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver of mass above the last cumulative value.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// `p(i | x, m)` over all `2^K` skills.
#[derive(Clone, Debug, PartialEq)]
pub struct SkillDistribution {
    pub probs: Vec<f64>,
}

impl SkillDistribution {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        validate_probs(&probs, "skill distribution")?;
        Ok(SkillDistribution { probs })
    }

    pub fn prob(&self, i: SkillIndex) -> f64 {
        self.probs[i.0]
    }

    pub fn argmax(&self) -> SkillIndex {
        SkillIndex(argmax(&self.probs))
    }

    pub fn sample(&self, rng: &mut Rng64) -> SkillIndex {
        SkillIndex(sample_categorical(&self.probs, rng))
    }
}

/// `sigma_theta(a | x)` over the finite action set.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        validate_probs(&probs, "action distribution")?;
        Ok(ActionDistribution { probs })
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn sample(&self, rng: &mut Rng64) -> usize {
        sample_categorical(&self.probs, rng)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn sample_skill(dist: &SkillDistribution, rng: &mut Rng64) -> SkillIndex {
    dist.sample(rng)
}

pub fn sample_action(dist: &ActionDistribution, rng: &mut Rng64) -> usize {
    dist.sample(rng)
}

/// Bernoulli skill likelihood: `p(i) = prod_k p_k(b_k = i_k)`.
///
/// `beta` yields the `K` hyperplane columns in order.
pub fn skill_likelihood<'a>(
    beta: impl IntoIterator<Item = &'a [f64]>,
    psi: &[f64],
    alpha_beta: f64,
) -> Result<SkillDistribution> {
    let mut probs = vec![1.0];
    for beta_k in beta {
        if !(alpha_beta > 0.0) {
            return domain_err(format!("alpha_beta must be positive, got {alpha_beta}"));
        }
        let z = alpha_beta * hyperplane_margin(beta_k, psi)?;
        let (p0, p1) = (sigmoid(-z), sigmoid(z));
        // Indices with bit k clear come first, then those with it set.
        let low: Vec<f64> = probs.iter().map(|p| p * p0).collect();
        let high = probs.iter().map(|p| p * p1);
        probs = low.into_iter().chain(high).collect();
    }
    Ok(SkillDistribution { probs })
}

/// Gibbs policy of one skill, computed with max-subtraction.
pub fn intra_skill_probs(
    theta_i: &[f64],
    state: &[f64],
    features: &FeatureBuilder,
    alpha_theta: f64,
) -> Result<ActionDistribution> {
    let n = features.num_actions();
    if n == 0 {
        return domain_err("empty action set");
    }
    if theta_i.len() != features.d_phi() {
        return dim_err(format!("skill column has {} entries, phi has {}", theta_i.len(), features.d_phi()));
    }
    if !(alpha_theta > 0.0) {
        return domain_err(format!("alpha_theta must be positive, got {alpha_theta}"));
    }
    let mut phi = vec![0.0; features.d_phi()];
    let mut logits = Vec::with_capacity(n);
    for a in 0..n {
        features.phi_into(state, a, &mut phi);
        logits.push(alpha_theta * dot(&phi, theta_i));
    }
    Ok(ActionDistribution { probs: softmax(&logits)? })
}

pub(crate) fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(AsapError::Numeric(format!("softmax logits contain non-finite values ({max})")));
    }
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// The ASAP policy: parameters, temperatures and the features they act on.
#[derive(Clone, Debug)]
pub struct AsapPolicy {
    pub params: Parameters,
    pub temps: Temperatures,
    pub features: FeatureBuilder,
}

impl AsapPolicy {
    pub fn new(params: Parameters, temps: Temperatures, features: FeatureBuilder) -> Result<Self> {
        let d = params.dims();
        if d.d_phi != features.d_phi() || d.d_psi != features.d_psi() || d.num_actions != features.num_actions() {
            return dim_err(format!(
                "parameters (d_phi={}, d_psi={}, actions={}) do not match features (d_phi={}, d_psi={}, actions={})",
                d.d_phi,
                d.d_psi,
                d.num_actions,
                features.d_phi(),
                features.d_psi(),
                features.num_actions()
            ));
        }
        Ok(AsapPolicy { params, temps, features })
    }

    pub fn hyperplanes(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.params.dims().hyperplanes).map(move |k| self.params.beta(k))
    }

    pub fn skill_distribution(&self, state: &[f64], task: &TaskDescriptor) -> Result<SkillDistribution> {
        let psi = self.features.psi(state, task)?;
        skill_likelihood(self.hyperplanes(), &psi, self.temps.alpha_beta)
    }

    pub fn action_distribution(&self, skill: SkillIndex, state: &[f64]) -> Result<ActionDistribution> {
        if skill.0 >= self.params.dims().num_skills() {
            return domain_err(format!("skill {skill} out of range"));
        }
        intra_skill_probs(self.params.theta(skill), state, &self.features, self.temps.alpha_theta)
    }

    /// Marginal `pi(a | x, m) = sum_i p(i | x, m) sigma_{theta_i}(a | x)`.
    pub fn action_prob(&self, state: &[f64], task: &TaskDescriptor, action: usize) -> Result<f64> {
        if action >= self.features.num_actions() {
            return domain_err(format!("action {action} out of range"));
        }
        let skills = self.skill_distribution(state, task)?;
        let mut total = 0.0;
        for (i, p) in skills.probs.iter().enumerate() {
            total += p * self.action_distribution(SkillIndex(i), state)?.probs[action];
        }
        Ok(total)
    }

    /// Marginal action distribution at `(x, m)`.
    pub fn marginal_actions(&self, state: &[f64], task: &TaskDescriptor) -> Result<Vec<f64>> {
        let skills = self.skill_distribution(state, task)?;
        let mut out = vec![0.0; self.features.num_actions()];
        for (i, p) in skills.probs.iter().enumerate() {
            let sigma = self.action_distribution(SkillIndex(i), state)?;
            out.iter_mut().zip(&sigma.probs).for_each(|(o, s)| *o += p * s);
        }
        Ok(out)
    }

    /// Hierarchical draw: skill from the partitions, then action from that skill.
    pub fn sample(&self, state: &[f64], task: &TaskDescriptor, rng: &mut Rng64) -> Result<(SkillIndex, usize)> {
        let skill = self.skill_distribution(state, task)?.sample(rng);
        let action = self.action_distribution(skill, state)?.sample(rng);
        Ok((skill, action))
    }
}

pub fn asap_action_prob(policy: &AsapPolicy, state: &[f64], task: &TaskDescriptor, action: usize) -> Result<f64> {
    policy.action_prob(state, task, action)
}
