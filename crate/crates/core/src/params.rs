//! Parameter containers, skill-index arithmetic and trajectory records.
//!
//! The learned object is a single flat vector `omega` holding the skill
//! matrix followed by the hyperplane matrix. The layout is frozen:
//!
//! ```text
//! omega = [ theta_0 | theta_1 | ... | theta_{2^K-1} | beta_1 | ... | beta_K ]
//!           d_phi     d_phi           d_phi           d_psi          d_psi
//! ```
//!
//! Gradient vectors and checkpoints use the same ordering.

use std::fmt;
use std::ops::{Deref, Range};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::TaskDescriptor;
use crate::error::{dim_err, domain_err, AsapError, Result};

/// Default cap on the number of hyperplanes; `2^K` skills are allocated.
pub const MAX_HYPERPLANES: usize = 16;

/// Dimension bookkeeping for one ASAP model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Length of the state-action feature vector.
    pub d_phi: usize,
    /// Length of the hyperplane feature vector (state features plus task descriptor).
    pub d_psi: usize,
    /// Number of skill hyperplanes `K`.
    pub hyperplanes: usize,
    pub num_actions: usize,
}

impl Dims {
    pub fn new(d_phi: usize, d_psi: usize, hyperplanes: usize, num_actions: usize) -> Result<Self> {
        Self::with_cap(d_phi, d_psi, hyperplanes, num_actions, MAX_HYPERPLANES)
    }

    /// Same as [`Dims::new`] with an explicit cap on `K`.
    pub fn with_cap(
        d_phi: usize,
        d_psi: usize,
        hyperplanes: usize,
        num_actions: usize,
        cap: usize,
    ) -> Result<Self> {
        if d_phi == 0 || d_psi == 0 || hyperplanes == 0 || num_actions == 0 {
            return dim_err(format!(
                "all dimensions must be positive (d_phi={d_phi}, d_psi={d_psi}, K={hyperplanes}, actions={num_actions})"
            ));
        }
        if hyperplanes > cap || hyperplanes >= usize::BITS as usize {
            return domain_err(format!("K={hyperplanes} exceeds the hyperplane cap {cap}"));
        }
        Ok(Dims { d_phi, d_psi, hyperplanes, num_actions })
    }

    pub fn num_skills(&self) -> usize {
        1usize << self.hyperplanes
    }

    /// Length of `vec(Theta)`.
    pub fn theta_len(&self) -> usize {
        self.d_phi * self.num_skills()
    }

    /// Length of `vec(beta)`.
    pub fn beta_len(&self) -> usize {
        self.d_psi * self.hyperplanes
    }

    /// Total parameter count `Z = d_phi * 2^K + d_psi * K`.
    pub fn param_count(&self) -> usize {
        self.theta_len() + self.beta_len()
    }

    /// Index range of skill `i`'s column inside `omega`.
    pub fn theta_range(&self, skill: SkillIndex) -> Range<usize> {
        let start = skill.0 * self.d_phi;
        start..start + self.d_phi
    }

    /// Index range of hyperplane `k` (zero-based) inside `omega`.
    pub fn beta_range(&self, k: usize) -> Range<usize> {
        let start = self.theta_len() + k * self.d_psi;
        start..start + self.d_psi
    }
}

/// Index of a skill, an integer in `[0, 2^K)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SkillIndex(pub usize);

impl SkillIndex {
    /// Value of bit `k` (zero-based, least significant first).
    #[inline]
    pub fn bit(self, k: usize) -> u8 {
        ((self.0 >> k) & 1) as u8
    }

    /// Index whose bits are all inverted, `2^K - 1 - i`.
    pub fn complement(self, hyperplanes: usize) -> SkillIndex {
        SkillIndex((1usize << hyperplanes) - 1 - self.0)
    }
}

impl fmt::Display for SkillIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Encodes the hyperplane bits `b_1..b_K` as `sum_k 2^(k-1) b_k`; `bits[0]` is `b_1`.
pub fn skill_index_from_bits(bits: &[u8], hyperplanes: usize) -> Result<SkillIndex> {
    if bits.len() != hyperplanes {
        return dim_err(format!("expected {hyperplanes} bits, got {}", bits.len()));
    }
    let mut index = 0usize;
    for (k, &b) in bits.iter().enumerate() {
        match b {
            0 => {}
            1 => index |= 1 << k,
            other => return domain_err(format!("bit {k} has value {other}, expected 0 or 1")),
        }
    }
    Ok(SkillIndex(index))
}

/// Inverse of [`skill_index_from_bits`].
pub fn bits_from_index(index: SkillIndex, hyperplanes: usize) -> Result<Vec<u8>> {
    if hyperplanes >= usize::BITS as usize || index.0 >= (1usize << hyperplanes) {
        return domain_err(format!("skill index {index} is out of range for K={hyperplanes}"));
    }
    Ok((0..hyperplanes).map(|k| index.bit(k)).collect())
}

/// A dense matrix stored column by column.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ColumnMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ColumnMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return dim_err(format!("column {j} has length {}, expected {rows}", c.len()));
            }
            if let Some(v) = c.iter().find(|v| !v.is_finite()) {
                return Err(AsapError::Numeric(format!("column {j} contains {v}")));
            }
            data.extend_from_slice(c);
        }
        Ok(ColumnMatrix { rows, cols: columns.len(), data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.rows.max(1)).take(self.cols)
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        self.columns().map(<[f64]>::to_vec).collect()
    }

    /// Column-major flattening.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// `Theta`: one column of intra-skill parameters per skill.
#[derive(Clone, Debug, PartialEq)]
pub struct SkillMatrix(ColumnMatrix);

/// `beta`: one column per skill hyperplane.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperplaneMatrix(ColumnMatrix);

macro_rules! matrix_newtype {
    ($name:ident, $what:literal) => {
        impl $name {
            pub fn zeros(rows: usize, cols: usize) -> Self {
                $name(ColumnMatrix::zeros(rows, cols))
            }

            #[doc = concat!("Builds the matrix from ", $what, " columns.")]
            pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
                ColumnMatrix::from_columns(rows, columns).map($name)
            }

            pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
                self.0.column_mut(j)
            }
        }

        impl Deref for $name {
            type Target = ColumnMatrix;
            fn deref(&self) -> &ColumnMatrix {
                &self.0
            }
        }
    };
}

matrix_newtype!(SkillMatrix, "skill");
matrix_newtype!(HyperplaneMatrix, "hyperplane");

/// Flat parameter vector `omega = [vec(Theta), vec(beta)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn pack(theta: &SkillMatrix, beta: &HyperplaneMatrix) -> ParamVector {
        let mut v = Vec::with_capacity(theta.as_slice().len() + beta.as_slice().len());
        v.extend_from_slice(theta.as_slice());
        v.extend_from_slice(beta.as_slice());
        ParamVector(v)
    }

    pub fn unpack(&self, dims: &Dims) -> Result<(SkillMatrix, HyperplaneMatrix)> {
        if self.0.len() != dims.param_count() {
            return dim_err(format!(
                "parameter vector has length {}, expected Z={}",
                self.0.len(),
                dims.param_count()
            ));
        }
        let (t, b) = self.0.split_at(dims.theta_len());
        let theta = SkillMatrix(ColumnMatrix {
            rows: dims.d_phi,
            cols: dims.num_skills(),
            data: t.to_vec(),
        });
        let beta = HyperplaneMatrix(ColumnMatrix {
            rows: dims.d_psi,
            cols: dims.hyperplanes,
            data: b.to_vec(),
        });
        Ok((theta, beta))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Parameters together with the dimensions that give them shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    dims: Dims,
    omega: ParamVector,
}

impl Parameters {
    pub fn new(dims: Dims, omega: ParamVector) -> Result<Self> {
        if omega.len() != dims.param_count() {
            return dim_err(format!(
                "parameter vector has length {}, expected Z={}",
                omega.len(),
                dims.param_count()
            ));
        }
        Ok(Parameters { dims, omega })
    }

    pub fn zeros(dims: Dims) -> Self {
        Parameters { dims, omega: ParamVector(vec![0.0; dims.param_count()]) }
    }

    pub fn from_matrices(dims: Dims, theta: &SkillMatrix, beta: &HyperplaneMatrix) -> Result<Self> {
        if theta.rows() != dims.d_phi || theta.cols() != dims.num_skills() {
            return dim_err(format!(
                "skill matrix is {}x{}, expected {}x{}",
                theta.rows(),
                theta.cols(),
                dims.d_phi,
                dims.num_skills()
            ));
        }
        if beta.rows() != dims.d_psi || beta.cols() != dims.hyperplanes {
            return dim_err(format!(
                "hyperplane matrix is {}x{}, expected {}x{}",
                beta.rows(),
                beta.cols(),
                dims.d_psi,
                dims.hyperplanes
            ));
        }
        Ok(Parameters { dims, omega: ParamVector::pack(theta, beta) })
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn omega(&self) -> &ParamVector {
        &self.omega
    }

    pub fn omega_mut(&mut self) -> &mut [f64] {
        &mut self.omega.0
    }

    pub fn into_omega(self) -> ParamVector {
        self.omega
    }

    pub fn theta(&self, skill: SkillIndex) -> &[f64] {
        &self.omega.0[self.dims.theta_range(skill)]
    }

    pub fn theta_mut(&mut self, skill: SkillIndex) -> &mut [f64] {
        let r = self.dims.theta_range(skill);
        &mut self.omega.0[r]
    }

    /// Hyperplane `k`, zero-based.
    pub fn beta(&self, k: usize) -> &[f64] {
        &self.omega.0[self.dims.beta_range(k)]
    }

    pub fn beta_mut(&mut self, k: usize) -> &mut [f64] {
        let r = self.dims.beta_range(k);
        &mut self.omega.0[r]
    }

    pub fn theta_block(&self) -> &[f64] {
        &self.omega.0[..self.dims.theta_len()]
    }

    pub fn beta_block(&self) -> &[f64] {
        &self.omega.0[self.dims.theta_len()..]
    }

    pub fn skill(&self, index: SkillIndex) -> Skill<'_> {
        Skill { index, theta: self.theta(index), termination_prob: 1.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.omega.0.iter().all(|v| v.is_finite())
    }

    pub fn matrices(&self) -> (SkillMatrix, HyperplaneMatrix) {
        self.omega.unpack(&self.dims).expect("length checked at construction")
    }
}

/// A skill: intra-skill parameters and a termination probability.
///
/// Skills are re-selected at every step, so `termination_prob` is 1 unless
/// set otherwise; it is carried but not used for multi-step commitment.
#[derive(Clone, Copy, Debug)]
pub struct Skill<'a> {
    pub index: SkillIndex,
    pub theta: &'a [f64],
    pub termination_prob: f64,
}

impl<'a> Skill<'a> {
    pub fn with_termination(mut self, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return domain_err(format!("termination probability {p} not in [0,1]"));
        }
        self.termination_prob = p;
        Ok(self)
    }
}

/// Gibbs temperature for the intra-skill policies and sigmoid temperature
/// for the hyperplanes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Temperatures {
    pub alpha_theta: f64,
    pub alpha_beta: f64,
}

impl Temperatures {
    pub fn new(alpha_theta: f64, alpha_beta: f64) -> Result<Self> {
        if !(alpha_theta > 0.0 && alpha_theta.is_finite()) || !(alpha_beta > 0.0 && alpha_beta.is_finite()) {
            return domain_err(format!(
                "temperatures must be finite and positive (alpha_theta={alpha_theta}, alpha_beta={alpha_beta})"
            ));
        }
        Ok(Temperatures { alpha_theta, alpha_beta })
    }
}

impl Default for Temperatures {
    fn default() -> Self {
        Temperatures { alpha_theta: 1.0, alpha_beta: 20.0 }
    }
}

/// One step `(x_t, a_t, i_t, r_t, x_{t+1})` of a generalized trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedStep {
    pub state: Vec<f64>,
    pub action: usize,
    pub skill: SkillIndex,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// A rollout that records the executed skill alongside each transition.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedTrajectory {
    steps: Vec<GeneralizedStep>,
    task: TaskDescriptor,
    /// Whether the episode ended in a terminal state rather than at the horizon.
    terminated: bool,
}

impl GeneralizedTrajectory {
    pub fn new(steps: Vec<GeneralizedStep>, task: TaskDescriptor, terminated: bool) -> Result<Self> {
        if steps.is_empty() {
            return domain_err("a trajectory needs at least one step");
        }
        for (t, w) in steps.windows(2).enumerate() {
            if w[0].next_state != w[1].state {
                return domain_err(format!("steps {t} and {} do not chain", t + 1));
            }
        }
        Ok(GeneralizedTrajectory { steps, task, terminated })
    }

    pub fn steps(&self) -> &[GeneralizedStep] {
        &self.steps
    }

    pub fn task(&self) -> &TaskDescriptor {
        &self.task
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Undiscounted sum of rewards.
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// `sum_t gamma^t r_t`.
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.steps.iter().rev().fold(0.0, |acc, s| s.reward + gamma * acc)
    }

    /// Discounted reward-to-go `G_t = sum_{j>=t} gamma^(j-t) r_j` for every step.
    pub fn rewards_to_go(&self, gamma: f64) -> Vec<f64> {
        self.rewards_to_go_from(gamma, 0.0)
    }

    /// Rewards-to-go with `tail` standing in for the value after the last step.
    pub fn rewards_to_go_from(&self, gamma: f64, tail: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.steps.len()];
        let mut acc = tail;
        for (t, s) in self.steps.iter().enumerate().rev() {
            acc = s.reward + gamma * acc;
            out[t] = acc;
        }
        out
    }
}

/// JSON checkpoint: dimensions, both parameter matrices and temperatures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dims: Dims,
    /// One inner array per skill column.
    pub theta: Vec<Vec<f64>>,
    /// One inner array per hyperplane column.
    pub beta: Vec<Vec<f64>>,
    pub temperatures: Temperatures,
}

impl Checkpoint {
    pub fn new(params: &Parameters, temperatures: Temperatures) -> Self {
        let (theta, beta) = params.matrices();
        Checkpoint {
            dims: *params.dims(),
            theta: theta.to_nested(),
            beta: beta.to_nested(),
            temperatures,
        }
    }

    /// Validates shapes and rebuilds the parameter vector.
    pub fn parameters(&self) -> Result<Parameters> {
        let d = &self.dims;
        let dims = Dims::new(d.d_phi, d.d_psi, d.hyperplanes, d.num_actions)?;
        if self.theta.len() != dims.num_skills() {
            return dim_err(format!(
                "checkpoint has {} skill columns, expected {}",
                self.theta.len(),
                dims.num_skills()
            ));
        }
        if self.beta.len() != dims.hyperplanes {
            return dim_err(format!(
                "checkpoint has {} hyperplane columns, expected {}",
                self.beta.len(),
                dims.hyperplanes
            ));
        }
        let theta = SkillMatrix::from_columns(dims.d_phi, &self.theta)?;
        let beta = HyperplaneMatrix::from_columns(dims.d_psi, &self.beta)?;
        Temperatures::new(self.temperatures.alpha_theta, self.temperatures.alpha_beta)?;
        Parameters::from_matrices(dims, &theta, &beta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        ck.parameters()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
