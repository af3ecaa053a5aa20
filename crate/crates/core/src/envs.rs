//! Continuous room-navigation MDPs, feature builders and task distributions.
//!
//! Every world lives in the unit square. The agent moves a fixed distance in
//! one of the four cardinal directions; a move that would leave the square or
//! cross a wall segment is cancelled and the agent stays put.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, domain_err, AsapError, Result};
use crate::params::Dims;
use crate::Rng64;

/// The four cardinal moves. The discriminant is the action id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    North = 0,
    South = 1,
    East = 2,
    West = 3,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::North, Direction::South, Direction::East, Direction::West];

    pub fn from_action(action: usize) -> Option<Direction> {
        Self::ALL.get(action).copied()
    }

    pub fn delta(self) -> [f64; 2] {
        match self {
            Direction::North => [0.0, 1.0],
            Direction::South => [0.0, -1.0],
            Direction::East => [1.0, 0.0],
            Direction::West => [-1.0, 0.0],
        }
    }

    /// Left-right mirror image.
    pub fn mirrored(self) -> Direction {
        match self {
            Direction::East => Direction::West,
            Direction::West => Direction::East,
            d => d,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Direction::North => "N",
            Direction::South => "S",
            Direction::East => "E",
            Direction::West => "W",
        };
        f.write_str(s)
    }
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

/// Identifies one MDP: a name plus the `z` descriptor entries appended to the
/// hyperplane features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub env_id: String,
    pub descriptor: Vec<f64>,
}

impl TaskDescriptor {
    pub fn new(env_id: impl Into<String>, descriptor: Vec<f64>) -> Self {
        TaskDescriptor { env_id: env_id.into(), descriptor }
    }

    pub fn z(&self) -> usize {
        self.descriptor.len()
    }
}

/// Discrete distribution `mu(m)` over tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDistribution {
    tasks: Vec<(TaskDescriptor, f64)>,
}

impl TaskDistribution {
    pub fn new(tasks: Vec<(TaskDescriptor, f64)>) -> Result<Self> {
        if tasks.is_empty() {
            return domain_err("task distribution is empty");
        }
        let z = tasks[0].0.z();
        if tasks.iter().any(|(t, _)| t.z() != z) {
            return dim_err("all task descriptors must have the same length");
        }
        if tasks.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return domain_err("task weights must be finite and non-negative");
        }
        let total: f64 = tasks.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return domain_err(format!("task weights sum to {total}, expected 1"));
        }
        Ok(TaskDistribution { tasks })
    }

    pub fn single(task: TaskDescriptor) -> Self {
        TaskDistribution { tasks: vec![(task, 1.0)] }
    }

    pub fn tasks(&self) -> &[(TaskDescriptor, f64)] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn weight_of(&self, env_id: &str) -> Option<f64> {
        self.tasks.iter().find(|(t, _)| t.env_id == env_id).map(|(_, w)| *w)
    }

    /// Draws a task position by inverse CDF.
    pub fn sample_index(&self, rng: &mut Rng64) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, (_, w)) in self.tasks.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.tasks.iter().rposition(|(_, w)| *w > 0.0).unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

/// State-action features `phi_{x,a}` for the intra-skill policies.
pub trait ActionFeatures: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn write(&self, state: &[f64], action: usize, out: &mut [f64]);
}

/// State part of the hyperplane features `psi_{x,m}`; the task descriptor is
/// appended by [`FeatureBuilder`].
pub trait StateFeatures: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn write(&self, state: &[f64], out: &mut [f64]);
}

/// One-hot action indicator; the intra-skill policy becomes a categorical
/// distribution that ignores the state.
#[derive(Clone, Copy, Debug)]
pub struct TabularActions {
    pub num_actions: usize,
}

impl ActionFeatures for TabularActions {
    fn dim(&self) -> usize {
        self.num_actions
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn write(&self, _state: &[f64], action: usize, out: &mut [f64]) {
        out.fill(0.0);
        out[action] = 1.0;
    }
}

/// `[1, x_1, ..., x_n]`.
#[derive(Clone, Copy, Debug)]
pub struct LinearStateFeatures {
    pub state_dim: usize,
}

impl StateFeatures for LinearStateFeatures {
    fn dim(&self) -> usize {
        self.state_dim + 1
    }

    fn write(&self, state: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        out[1..].copy_from_slice(&state[..self.state_dim]);
    }
}

/// `[1, sin(pi * x . a)]` for a fixed frequency vector `a`.
#[derive(Clone, Debug)]
pub struct FourierStateFeatures {
    pub frequency: Vec<f64>,
}

impl StateFeatures for FourierStateFeatures {
    fn dim(&self) -> usize {
        2
    }

    fn write(&self, state: &[f64], out: &mut [f64]) {
        let dot: f64 = self.frequency.iter().zip(state).map(|(a, x)| a * x).sum();
        out[0] = 1.0;
        out[1] = (std::f64::consts::PI * dot).sin();
    }
}

/// Builds `phi_{x,a}` and `psi_{x,m}` for one task suite.
#[derive(Clone, Debug)]
pub struct FeatureBuilder {
    phi: Arc<dyn ActionFeatures>,
    psi: Arc<dyn StateFeatures>,
    task_dim: usize,
}

impl FeatureBuilder {
    pub fn new(phi: Arc<dyn ActionFeatures>, psi: Arc<dyn StateFeatures>, task_dim: usize) -> Self {
        FeatureBuilder { phi, psi, task_dim }
    }

    pub fn d_phi(&self) -> usize {
        self.phi.dim()
    }

    pub fn d_psi(&self) -> usize {
        self.psi.dim() + self.task_dim
    }

    pub fn task_dim(&self) -> usize {
        self.task_dim
    }

    pub fn num_actions(&self) -> usize {
        self.phi.num_actions()
    }

    /// Model dimensions for `hyperplanes` skill hyperplanes.
    pub fn dims(&self, hyperplanes: usize) -> Result<Dims> {
        Dims::new(self.d_phi(), self.d_psi(), hyperplanes, self.num_actions())
    }

    pub fn phi_into(&self, state: &[f64], action: usize, out: &mut [f64]) {
        self.phi.write(state, action, out);
    }

    pub fn phi(&self, state: &[f64], action: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.d_phi()];
        self.phi_into(state, action, &mut v);
        v
    }

    /// All action features stacked row by row (`num_actions * d_phi`).
    pub fn phi_all(&self, state: &[f64]) -> Vec<f64> {
        let d = self.d_phi();
        let mut v = vec![0.0; d * self.num_actions()];
        for (a, row) in v.chunks_exact_mut(d).enumerate() {
            self.phi_into(state, a, row);
        }
        v
    }

    pub fn psi_into(&self, state: &[f64], task: &TaskDescriptor, out: &mut [f64]) -> Result<()> {
        if task.z() != self.task_dim {
            return dim_err(format!(
                "task '{}' has a {}-entry descriptor, features expect {}",
                task.env_id,
                task.z(),
                self.task_dim
            ));
        }
        let s = self.psi.dim();
        self.psi.write(state, &mut out[..s]);
        out[s..].copy_from_slice(&task.descriptor);
        Ok(())
    }

    pub fn psi(&self, state: &[f64], task: &TaskDescriptor) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.d_psi()];
        self.psi_into(state, task, &mut v)?;
        Ok(v)
    }

    /// State features without the task descriptor; used by the critic.
    pub fn state_features(&self, state: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.psi.dim()];
        self.psi.write(state, &mut v);
        v
    }

    pub fn state_feature_dim(&self) -> usize {
        self.psi.dim()
    }
}

pub fn build_phi_tabular_actions(num_actions: usize) -> Result<Arc<dyn ActionFeatures>> {
    if num_actions < 2 {
        return domain_err(format!("tabular action features need at least 2 actions, got {num_actions}"));
    }
    Ok(Arc::new(TabularActions { num_actions }))
}

/// `psi = [1, x_agent, y_agent]`.
pub fn build_psi_linear() -> Arc<dyn StateFeatures> {
    Arc::new(LinearStateFeatures { state_dim: 2 })
}

/// `psi = [1, sin(pi * (3 x_agent + 0 y_agent))]`.
pub fn build_psi_fourier() -> Arc<dyn StateFeatures> {
    Arc::new(FourierStateFeatures { frequency: vec![3.0, 0.0] })
}

// ---------------------------------------------------------------------------
// Environment interface
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// An episodic MDP with a finite action set.
pub trait Environment: Send + Sync {
    fn num_actions(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset(&self, rng: &mut Rng64) -> Vec<f64>;
    fn step(&self, state: &[f64], action: usize, rng: &mut Rng64) -> Result<Transition>;
}

// ---------------------------------------------------------------------------
// Room worlds
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Goal {
    pub fn contains(&self, p: &[f64]) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Start {
    Fixed { point: [f64; 2] },
    /// Uniform over an axis-aligned box, resampled away from the goal.
    Uniform { min: [f64; 2], max: [f64; 2] },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rewards {
    pub step: f64,
    pub goal: f64,
}

fn default_step_length() -> f64 {
    0.05
}

/// World definition file contents.
///
/// Walls and doorways are segments `[x1, y1, x2, y2]`; every doorway must lie
/// on a wall and is removed from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub walls: Vec<[f64; 4]>,
    pub doorways: Vec<[f64; 4]>,
    pub goal: Goal,
    pub start: Start,
    pub rewards: Rewards,
    pub horizon: usize,
    #[serde(default = "default_step_length")]
    pub step_length: f64,
    #[serde(default)]
    pub motion_noise: f64,
}

impl WorldSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Mirror image about the vertical line `x = 0.5`.
    pub fn mirrored_left_right(&self) -> WorldSpec {
        let seg = |s: &[f64; 4]| [1.0 - s[0], s[1], 1.0 - s[2], s[3]];
        let start = match self.start {
            Start::Fixed { point } => Start::Fixed { point: [1.0 - point[0], point[1]] },
            Start::Uniform { min, max } => Start::Uniform {
                min: [1.0 - max[0], min[1]],
                max: [1.0 - min[0], max[1]],
            },
        };
        WorldSpec {
            walls: self.walls.iter().map(seg).collect(),
            doorways: self.doorways.iter().map(seg).collect(),
            goal: Goal { center: [1.0 - self.goal.center[0], self.goal.center[1]], ..self.goal },
            start,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Segment {
    a: [f64; 2],
    b: [f64; 2],
}

impl Segment {
    fn from_array(s: &[f64; 4]) -> Self {
        Segment { a: [s[0], s[1]], b: [s[2], s[3]] }
    }

    fn is_horizontal(&self) -> bool {
        self.a[1] == self.b[1]
    }

    fn is_vertical(&self) -> bool {
        self.a[0] == self.b[0]
    }

    fn length(&self) -> f64 {
        ((self.b[0] - self.a[0]).powi(2) + (self.b[1] - self.a[1]).powi(2)).sqrt()
    }
}

fn orient(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
}

fn on_segment(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> bool {
    q[0] <= p[0].max(r[0]) && q[0] >= p[0].min(r[0]) && q[1] <= p[1].max(r[1]) && q[1] >= p[1].min(r[1])
}

/// Closed segment intersection (touching counts).
fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, p1, q2))
        || (d2 == 0.0 && on_segment(q1, p2, q2))
        || (d3 == 0.0 && on_segment(p1, q1, p2))
        || (d4 == 0.0 && on_segment(p1, q2, p2))
}

/// Splits an axis-aligned wall into its solid pieces after removing doorways.
fn cut_doorways(wall: Segment, doorways: &[Segment]) -> Result<Vec<Segment>> {
    let (axis, fixed) = if wall.is_horizontal() {
        (0, 1)
    } else if wall.is_vertical() {
        (1, 0)
    } else {
        return domain_err("walls must be axis-aligned");
    };
    let (lo, hi) = (wall.a[axis].min(wall.b[axis]), wall.a[axis].max(wall.b[axis]));
    let mut gaps: Vec<(f64, f64)> = doorways
        .iter()
        .filter(|d| {
            d.a[fixed] == wall.a[fixed]
                && d.b[fixed] == wall.a[fixed]
                && d.a[axis].min(d.b[axis]) >= lo
                && d.a[axis].max(d.b[axis]) <= hi
        })
        .map(|d| (d.a[axis].min(d.b[axis]), d.a[axis].max(d.b[axis])))
        .collect();
    gaps.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut pieces = Vec::new();
    let mut cursor = lo;
    for (g0, g1) in gaps {
        if g0 > cursor {
            pieces.push((cursor, g0));
        }
        cursor = cursor.max(g1);
    }
    if cursor < hi {
        pieces.push((cursor, hi));
    }
    Ok(pieces
        .into_iter()
        .map(|(u, v)| {
            let mut a = wall.a;
            let mut b = wall.a;
            a[axis] = u;
            b[axis] = v;
            Segment { a, b }
        })
        .collect())
}

/// A continuous 2D navigation MDP on the unit square.
#[derive(Clone, Debug)]
pub struct RoomWorld {
    spec: WorldSpec,
    solid: Vec<Segment>,
    noise: Option<Normal<f64>>,
}

impl RoomWorld {
    pub fn new(spec: WorldSpec) -> Result<Self> {
        let in_unit = |p: [f64; 2]| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]);
        if !in_unit(spec.goal.center) || !(spec.goal.radius > 0.0) {
            return domain_err("goal must lie inside the unit square with a positive radius");
        }
        if !(spec.step_length > 0.0) || !(spec.motion_noise >= 0.0) {
            return domain_err("step length must be positive and motion noise non-negative");
        }
        if spec.horizon == 0 {
            return domain_err("horizon must be positive");
        }
        match spec.start {
            Start::Fixed { point } if !in_unit(point) => return domain_err("start point outside the unit square"),
            Start::Uniform { min, max } if !(in_unit(min) && in_unit(max) && min[0] <= max[0] && min[1] <= max[1]) => {
                return domain_err("start box must be a non-empty box inside the unit square")
            }
            _ => {}
        }
        let walls: Vec<Segment> = spec.walls.iter().map(Segment::from_array).collect();
        let doorways: Vec<Segment> = spec.doorways.iter().map(Segment::from_array).collect();
        for d in &doorways {
            let width = d.length();
            if !(width > 0.0) {
                return domain_err("doorway gaps must be non-empty");
            }
            if spec.step_length >= width {
                return domain_err(format!("step length {} is not below doorway width {width}", spec.step_length));
            }
            let on_wall = walls.iter().any(|w| {
                !cut_doorways(*w, std::slice::from_ref(d)).map(|p| p.len() == 1 && p[0] == *w).unwrap_or(true)
            });
            if !on_wall {
                return domain_err("every doorway must lie on a wall");
            }
        }
        let mut solid = Vec::new();
        for w in walls {
            solid.extend(cut_doorways(w, &doorways)?);
        }
        let noise = if spec.motion_noise > 0.0 {
            Some(Normal::new(0.0, spec.motion_noise).map_err(|e| AsapError::Domain(e.to_string()))?)
        } else {
            None
        };
        Ok(RoomWorld { spec, solid, noise })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn goal(&self) -> &Goal {
        &self.spec.goal
    }

    /// Solid wall pieces as `[x1, y1, x2, y2]`.
    pub fn solid_walls(&self) -> Vec<[f64; 4]> {
        self.solid.iter().map(|s| [s.a[0], s.a[1], s.b[0], s.b[1]]).collect()
    }

    pub fn in_bounds(p: &[f64]) -> bool {
        p.len() == 2 && (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])
    }

    /// Whether the straight move from `from` to `to` touches a solid wall.
    pub fn blocked(&self, from: &[f64], to: &[f64]) -> bool {
        let p = [from[0], from[1]];
        let q = [to[0], to[1]];
        self.solid.iter().any(|s| segments_intersect(p, q, s.a, s.b))
    }

    /// One transition. A state already inside the goal is absorbing.
    pub fn step_world(&self, state: &[f64], action: usize, rng: &mut Rng64) -> Result<Transition> {
        if !Self::in_bounds(state) {
            return domain_err(format!("state {state:?} is outside the unit square"));
        }
        let dir = Direction::from_action(action)
            .ok_or_else(|| AsapError::Domain(format!("action {action} is not a cardinal move")))?;
        if self.spec.goal.contains(state) {
            return Ok(Transition { next_state: state.to_vec(), reward: self.spec.rewards.goal, done: true });
        }
        let [dx, dy] = dir.delta();
        let mut proposed = [state[0] + self.spec.step_length * dx, state[1] + self.spec.step_length * dy];
        if let Some(n) = &self.noise {
            proposed[0] += n.sample(rng);
            proposed[1] += n.sample(rng);
        }
        let next = if Self::in_bounds(&proposed) && !self.blocked(state, &proposed) {
            proposed.to_vec()
        } else {
            state.to_vec()
        };
        if self.spec.goal.contains(&next) {
            Ok(Transition { next_state: next, reward: self.spec.rewards.goal, done: true })
        } else {
            Ok(Transition { next_state: next, reward: self.spec.rewards.step, done: false })
        }
    }

    /// Breadth-first search over the lattice reachable from `start` by
    /// noise-free moves. Returns the shortest number of moves to the goal.
    pub fn shortest_path_len(&self, start: &[f64]) -> Option<usize> {
        let h = self.spec.step_length;
        let key = |p: &[f64]| (((p[0] - start[0]) / h).round() as i64, ((p[1] - start[1]) / h).round() as i64);
        let mut seen = std::collections::HashSet::new();
        let mut queue = VecDeque::new();
        seen.insert(key(start));
        queue.push_back((start.to_vec(), 0usize));
        while let Some((p, d)) = queue.pop_front() {
            if self.spec.goal.contains(&p) {
                return Some(d);
            }
            for dir in Direction::ALL {
                let [dx, dy] = dir.delta();
                let q = [p[0] + h * dx, p[1] + h * dy];
                if Self::in_bounds(&q) && !self.blocked(&p, &q) && seen.insert(key(&q)) {
                    queue.push_back((q.to_vec(), d + 1));
                }
            }
        }
        None
    }
}

impl Environment for RoomWorld {
    fn num_actions(&self) -> usize {
        Direction::ALL.len()
    }

    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn reset(&self, rng: &mut Rng64) -> Vec<f64> {
        match self.spec.start {
            Start::Fixed { point } => point.to_vec(),
            Start::Uniform { min, max } => loop {
                let p = vec![rng.random_range(min[0]..=max[0]), rng.random_range(min[1]..=max[1])];
                if !self.spec.goal.contains(&p) {
                    return p;
                }
            },
        }
    }

    fn step(&self, state: &[f64], action: usize, rng: &mut Rng64) -> Result<Transition> {
        self.step_world(state, action, rng)
    }
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

/// Named collection of worlds, the distribution over them, and features.
#[derive(Clone, Debug)]
pub struct TaskSuite {
    pub name: String,
    pub worlds: Vec<RoomWorld>,
    pub distribution: TaskDistribution,
    pub features: FeatureBuilder,
}

impl TaskSuite {
    /// Position of the task with the given id.
    pub fn task_index(&self, env_id: &str) -> Option<usize> {
        self.distribution.tasks().iter().position(|(t, _)| t.env_id == env_id)
    }

    pub fn task(&self, i: usize) -> &TaskDescriptor {
        &self.distribution.tasks()[i].0
    }

    /// Replaces the world of a single-task suite.
    pub fn with_world(mut self, spec: WorldSpec) -> Result<Self> {
        if self.worlds.len() != 1 {
            return Err(AsapError::Config(format!(
                "suite '{}' has {} worlds; a world file can only replace the world of a single-task suite",
                self.name,
                self.worlds.len()
            )));
        }
        self.worlds[0] = RoomWorld::new(spec)?;
        Ok(self)
    }
}

pub const SUITE_NAMES: [&str; 4] = ["2R", "flipped2R", "3R", "multitask-2R-pair"];

const DOORWAY_WIDTH: f64 = 0.2;

/// Default two-room layout: a horizontal wall at `y = 0.5` with a centred
/// doorway, start in the lower-left corner and goal in the upper-left corner.
pub fn two_rooms_spec() -> WorldSpec {
    let d0 = 0.5 - DOORWAY_WIDTH / 2.0;
    let d1 = 0.5 + DOORWAY_WIDTH / 2.0;
    WorldSpec {
        walls: vec![[0.0, 0.5, 1.0, 0.5]],
        doorways: vec![[d0, 0.5, d1, 0.5]],
        goal: Goal { center: [0.05, 0.95], radius: 0.05 },
        start: Start::Fixed { point: [0.125, 0.125] },
        rewards: Rewards { step: -1.0, goal: 100.0 },
        horizon: 200,
        step_length: 0.05,
        motion_noise: 0.0,
    }
}

/// Two rooms mirrored left to right: start lower-right, goal upper-right.
pub fn flipped_two_rooms_spec() -> WorldSpec {
    two_rooms_spec().mirrored_left_right()
}

/// Three rooms split by vertical walls at `x = 1/3` and `x = 2/3`. The first
/// doorway sits above the second, so the outer rooms both want east-and-north
/// and the middle room wants east-and-south.
pub fn three_rooms_spec() -> WorldSpec {
    let (w1, w2) = (1.0 / 3.0, 2.0 / 3.0);
    WorldSpec {
        walls: vec![[w1, 0.0, w1, 1.0], [w2, 0.0, w2, 1.0]],
        doorways: vec![[w1, 0.6, w1, 0.6 + DOORWAY_WIDTH], [w2, 0.2, w2, 0.2 + DOORWAY_WIDTH]],
        goal: Goal { center: [0.75, 0.5], radius: 0.1 },
        start: Start::Fixed { point: [0.25, 0.55] },
        rewards: Rewards { step: -1.0, goal: 100.0 },
        horizon: 200,
        step_length: 0.05,
        motion_noise: 0.0,
    }
}

pub fn make_task_suite(name: &str) -> Result<TaskSuite> {
    let phi = build_phi_tabular_actions(Direction::ALL.len())?;
    let single = |id: &str, spec: WorldSpec, psi: Arc<dyn StateFeatures>| -> Result<TaskSuite> {
        Ok(TaskSuite {
            name: name.to_string(),
            worlds: vec![RoomWorld::new(spec)?],
            distribution: TaskDistribution::single(TaskDescriptor::new(id, vec![])),
            features: FeatureBuilder::new(phi.clone(), psi, 0),
        })
    };
    match name {
        "2R" => single("2R", two_rooms_spec(), build_psi_linear()),
        "flipped2R" => single("flipped2R", flipped_two_rooms_spec(), build_psi_linear()),
        "3R" => single("3R", three_rooms_spec(), build_psi_fourier()),
        "multitask-2R-pair" => Ok(TaskSuite {
            name: name.to_string(),
            worlds: vec![RoomWorld::new(two_rooms_spec())?, RoomWorld::new(flipped_two_rooms_spec())?],
            distribution: TaskDistribution::new(vec![
                (TaskDescriptor::new("2R", vec![0.0]), 0.5),
                (TaskDescriptor::new("flipped2R", vec![1.0]), 0.5),
            ])?,
            features: FeatureBuilder::new(phi, build_psi_linear(), 1),
        }),
        other => Err(AsapError::Config(format!(
            "unknown suite '{other}' (known: {})",
            SUITE_NAMES.join(", ")
        ))),
    }
}
