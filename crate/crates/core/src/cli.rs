//! Experiment runner: config files, partition maps, artifacts and the
//! `train`, `eval`, `gradcheck`, `flip` and `plot-partitions` subcommands.
//!
//! Exit codes: 0 success, 1 check failure, 2 input error, 3 divergence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::Serialize;

use crate::envs::{make_task_suite, TaskDescriptor, TaskSuite, WorldSpec};
use crate::error::{AsapError, Result};
use crate::gradient::{
    check_step_gradient, BaselineKind, GradCheckReport, ReturnMode, ReturnSpec, SkillScore, DEFAULT_EPSILON,
    SATURATION_MARGIN,
};
use crate::learner::{
    evaluate_seeded, flip_hyperplanes, misspecified_init_for, reference_parameters, stream_rng, train_with,
    EvalSummary, StepSchedule, TaskBatching, TrainConfig, TrainEvent,
};
use crate::params::{Checkpoint, GeneralizedStep, Parameters, SkillIndex, Temperatures};
use crate::policy::AsapPolicy;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Exit code for an error raised while running a subcommand.
pub fn exit_code(err: &AsapError) -> i32 {
    match err {
        AsapError::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_INPUT,
    }
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

/// Sections of a flat `key = value` file. Lines starting with `#` or `;` are
/// comments; keys outside any section are rejected.
pub fn parse_ini(text: &str) -> Result<BTreeMap<String, BTreeMap<String, String>>> {
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut section: Option<String> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_string();
            out.entry(name.clone()).or_default();
            section = Some(name);
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(AsapError::Config(format!("line {}: expected key = value, got '{line}'", n + 1)));
        };
        let Some(sec) = &section else {
            return Err(AsapError::Config(format!("line {}: key outside a section", n + 1)));
        };
        let v = v.split(" #").next().unwrap_or("").trim();
        if out.get_mut(sec).unwrap().insert(k.trim().to_string(), v.to_string()).is_some() {
            return Err(AsapError::Config(format!("line {}: duplicate key '{}'", n + 1, k.trim())));
        }
    }
    Ok(out)
}

/// Where the initial parameters of a training run come from.
#[derive(Clone, Debug, PartialEq)]
pub enum InitSource {
    Misspecified,
    Reference,
    Checkpoint(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckSettings {
    pub samples: usize,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings { samples: 100, epsilon: DEFAULT_EPSILON, tolerance: 1e-5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub suite: String,
    /// Optional world file replacing the suite's single world.
    pub world: Option<PathBuf>,
    pub hyperplanes: usize,
    pub temperatures: Temperatures,
    pub train: TrainConfig,
    pub init: InitSource,
    /// Write a checkpoint every this many updates; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub out_dir: Option<PathBuf>,
    pub resolution: usize,
    pub gradcheck: GradCheckSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            suite: "2R".into(),
            world: None,
            hyperplanes: 1,
            temperatures: Temperatures::default(),
            train: TrainConfig::default(),
            init: InitSource::Misspecified,
            checkpoint_every: 0,
            out_dir: None,
            resolution: 40,
            gradcheck: GradCheckSettings::default(),
        }
    }
}

struct Section<'a> {
    name: &'a str,
    entries: BTreeMap<String, String>,
}

impl Section<'_> {
    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| AsapError::Config(format!("[{}] {key}: cannot parse '{v}'", self.name))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(AsapError::Config(format!("[{}] unknown key '{k}'", self.name))),
            None => Ok(()),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| AsapError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // Relative paths inside a config are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(w) = cfg.world.as_mut() {
            rebase(w);
        }
        if let InitSource::Checkpoint(p) = &mut cfg.init {
            rebase(p);
        }
        if let Some(o) = cfg.out_dir.as_mut() {
            rebase(o);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = parse_ini(text)?;
        let mut section = |name: &'static str| Section { name, entries: ini.remove(name).unwrap_or_default() };
        let d = ExperimentConfig::default();
        let dt = &d.train;

        let mut s = section("experiment");
        let suite = s.parse("suite", d.suite.clone())?;
        let world = s.take("world").map(PathBuf::from);
        let hyperplanes = s.parse("hyperplanes", d.hyperplanes)?;
        let seed = s.parse("seed", dt.seed)?;
        let out_dir = s.take("out_dir").map(PathBuf::from);
        let init = match s.take("init").as_deref() {
            None | Some("misspecified") => InitSource::Misspecified,
            Some("reference") => InitSource::Reference,
            Some(other) => match other.strip_prefix("checkpoint:") {
                Some(p) => InitSource::Checkpoint(PathBuf::from(p.trim())),
                None => {
                    return Err(AsapError::Config(format!(
                        "[experiment] init: expected misspecified, reference or checkpoint:<path>, got '{other}'"
                    )))
                }
            },
        };
        let checkpoint_every = s.parse("checkpoint_every", d.checkpoint_every)?;
        let resolution = s.parse("resolution", d.resolution)?;
        s.finish()?;

        let mut s = section("temperatures");
        let temperatures = Temperatures::new(
            s.parse("alpha_theta", d.temperatures.alpha_theta)?,
            s.parse("alpha_beta", d.temperatures.alpha_beta)?,
        )
        .map_err(|e| AsapError::Config(e.to_string()))?;
        s.finish()?;

        let mut s = section("train");
        let schedule = match s.parse("schedule", "constant".to_string())?.as_str() {
            "constant" => StepSchedule::Constant,
            "robbins-monro" => StepSchedule::RobbinsMonro { c: s.parse("rm_c", 1.0)?, t0: s.parse("rm_t0", 1.0)? },
            other => return Err(AsapError::Config(format!("[train] schedule: unknown '{other}'"))),
        };
        let mode = match s.parse("return_mode", "reward-to-go".to_string())?.as_str() {
            "reward-to-go" => ReturnMode::RewardToGo,
            "full-return" => ReturnMode::FullReturn,
            other => return Err(AsapError::Config(format!("[train] return_mode: unknown '{other}'"))),
        };
        let baseline = match s.parse("baseline", "linear-critic".to_string())?.as_str() {
            "linear-critic" => BaselineKind::LinearCritic,
            "none" => BaselineKind::None,
            other => return Err(AsapError::Config(format!("[train] baseline: unknown '{other}'"))),
        };
        let task_batching = match s.parse("task_batching", "per-update".to_string())?.as_str() {
            "per-update" => TaskBatching::PerUpdate,
            "per-episode" => TaskBatching::PerEpisode,
            other => return Err(AsapError::Config(format!("[train] task_batching: unknown '{other}'"))),
        };
        let horizon = match s.take("horizon") {
            None => None,
            Some(v) => Some(v.parse().map_err(|_| AsapError::Config(format!("[train] horizon: cannot parse '{v}'")))?),
        };
        let gamma = s.parse("gamma", dt.returns.gamma)?;
        let bootstrap = s.parse("bootstrap_truncated", dt.returns.bootstrap_truncated)?;
        let skill_score = match s.take("skill_score").as_deref() {
            None => dt.returns.skill_score,
            Some("marginal") => SkillScore::Marginal,
            Some("sampled") => SkillScore::Sampled,
            Some(other) => return Err(AsapError::Config(format!("[train] skill_score: unknown '{other}'"))),
        };
        let train = TrainConfig {
            eta_theta: s.parse("eta_theta", dt.eta_theta)?,
            eta_beta: s.parse("eta_beta", dt.eta_beta)?,
            schedule,
            episodes_per_update: s.parse("episodes_per_update", dt.episodes_per_update)?,
            max_episodes: s.parse("max_episodes", dt.max_episodes)?,
            returns: ReturnSpec::new(gamma, mode, baseline)
                .map_err(|e| AsapError::Config(e.to_string()))?
                .with_truncation_bootstrap(bootstrap)
                .with_skill_score(skill_score),
            convergence_tol: s.parse("convergence_tol", dt.convergence_tol)?,
            convergence_window: s.parse("convergence_window", dt.convergence_window)?,
            critic_lr: s.parse("critic_lr", dt.critic_lr)?,
            task_batching,
            eval_every: s.parse("eval_every", dt.eval_every)?,
            eval_episodes: s.parse("eval_episodes", dt.eval_episodes)?,
            horizon,
            seed,
        };
        s.finish()?;
        train.validate().map_err(|e| AsapError::Config(e.to_string()))?;

        let mut s = section("gradcheck");
        let gradcheck = GradCheckSettings {
            samples: s.parse("samples", d.gradcheck.samples)?,
            epsilon: s.parse("epsilon", d.gradcheck.epsilon)?,
            tolerance: s.parse("tolerance", d.gradcheck.tolerance)?,
        };
        s.finish()?;

        if let Some(name) = ini.keys().next() {
            return Err(AsapError::Config(format!("unknown section [{name}]")));
        }
        let cfg = ExperimentConfig {
            suite,
            world,
            hyperplanes,
            temperatures,
            train,
            init,
            checkpoint_every,
            out_dir,
            resolution,
            gradcheck,
        };
        cfg.suite()?;
        if cfg.hyperplanes == 0 || cfg.hyperplanes > crate::params::MAX_HYPERPLANES {
            return Err(AsapError::Config(format!("hyperplanes must be in 1..={}", crate::params::MAX_HYPERPLANES)));
        }
        Ok(cfg)
    }

    /// The suite named by the config, with its world replaced when a world file is given.
    pub fn suite(&self) -> Result<TaskSuite> {
        let suite = make_task_suite(&self.suite)?;
        match &self.world {
            None => Ok(suite),
            Some(path) => suite.with_world(WorldSpec::load(path)?),
        }
    }

    pub fn initial_parameters(&self, suite: &TaskSuite) -> Result<Parameters> {
        let params = match &self.init {
            InitSource::Misspecified => {
                misspecified_init_for(suite, self.hyperplanes, &mut stream_rng(self.train.seed, u64::MAX))?
            }
            InitSource::Reference => reference_parameters(suite, self.temperatures.alpha_theta)?,
            InitSource::Checkpoint(path) => Checkpoint::load(path)?.parameters()?,
        };
        let want = suite.features.dims(params.dims().hyperplanes)?;
        if *params.dims() != want || params.dims().hyperplanes != self.hyperplanes {
            return Err(AsapError::Config(format!(
                "initial parameters have dims {:?}, suite '{}' with K={} needs {:?}",
                params.dims(),
                suite.name,
                self.hyperplanes,
                suite.features.dims(self.hyperplanes)?
            )));
        }
        Ok(params)
    }

    /// `--out`, then the config's `out_dir`, then `ASAP_OUT_DIR`, then `asap-out`.
    pub fn resolve_out_dir(&self, flag: Option<&Path>) -> PathBuf {
        resolve_out_dir(flag.map(Path::to_path_buf).or_else(|| self.out_dir.clone()))
    }
}

pub fn resolve_out_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os("ASAP_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("asap-out"))
}

// ---------------------------------------------------------------------------
// Partition maps
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionCell {
    pub row: usize,
    pub col: usize,
    pub skill: SkillIndex,
    pub skill_prob: f64,
    pub action: usize,
}

/// Argmax skill, its probability and the argmax action of that skill at the
/// centre of each cell of a `resolution x resolution` grid. Row 0 is the
/// bottom of the square.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionMap {
    pub resolution: usize,
    pub cells: Vec<PartitionCell>,
}

pub const MIN_RESOLUTION: usize = 8;

impl PartitionMap {
    pub fn compute(policy: &AsapPolicy, task: &TaskDescriptor, resolution: usize) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(AsapError::Config(format!("resolution must be at least {MIN_RESOLUTION}, got {resolution}")));
        }
        let mut cells = Vec::with_capacity(resolution * resolution);
        for row in 0..resolution {
            for col in 0..resolution {
                let x = [Self::centre(col, resolution), Self::centre(row, resolution)];
                let dist = policy.skill_distribution(&x, task)?;
                let skill = dist.argmax();
                let action = policy.action_distribution(skill, &x)?.argmax();
                cells.push(PartitionCell { row, col, skill, skill_prob: dist.prob(skill), action });
            }
        }
        Ok(PartitionMap { resolution, cells })
    }

    pub fn centre(i: usize, resolution: usize) -> f64 {
        (i as f64 + 0.5) / resolution as f64
    }

    pub fn cell(&self, row: usize, col: usize) -> &PartitionCell {
        &self.cells[row * self.resolution + col]
    }

    /// Cell counts per skill index, sorted by decreasing count.
    pub fn skill_counts(&self) -> Vec<(SkillIndex, usize)> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for c in &self.cells {
            *counts.entry(c.skill.0).or_default() += 1;
        }
        let mut v: Vec<(SkillIndex, usize)> = counts.into_iter().map(|(s, n)| (SkillIndex(s), n)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0 .0.cmp(&b.0 .0)));
        v
    }

    /// Fraction of cells held by the `n` most frequent skills.
    pub fn coverage_of_top(&self, n: usize) -> f64 {
        self.skill_counts().iter().take(n).map(|(_, c)| *c).sum::<usize>() as f64 / self.cells.len() as f64
    }

    /// Number of 4-connected components of the cells assigned to `skill`.
    pub fn connected_components(&self, skill: SkillIndex) -> usize {
        let r = self.resolution;
        let mut seen = vec![false; r * r];
        let mut components = 0;
        for start in 0..r * r {
            if seen[start] || self.cells[start].skill != skill {
                continue;
            }
            components += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(n) = stack.pop() {
                let (row, col) = (n / r, n % r);
                let mut push = |m: usize| {
                    if !seen[m] && self.cells[m].skill == skill {
                        seen[m] = true;
                        stack.push(m);
                    }
                };
                if row > 0 {
                    push(n - r);
                }
                if row + 1 < r {
                    push(n + r);
                }
                if col > 0 {
                    push(n - 1);
                }
                if col + 1 < r {
                    push(n + 1);
                }
            }
        }
        components
    }

    /// Largest number of connected components over all skills present.
    pub fn max_components(&self) -> usize {
        self.skill_counts().iter().map(|(s, _)| self.connected_components(*s)).max().unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,x,y,skill,skill_prob,action\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.row,
                c.col,
                Self::centre(c.col, self.resolution),
                Self::centre(c.row, self.resolution),
                c.skill.0,
                c.skill_prob,
                c.action
            );
        }
        out
    }

    /// Parses [`PartitionMap::to_csv`] output.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |n: usize| AsapError::Config(format!("partition csv line {}: malformed", n + 1));
        let mut cells = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(n));
            }
            cells.push(PartitionCell {
                row: f[0].parse().map_err(|_| bad(n))?,
                col: f[1].parse().map_err(|_| bad(n))?,
                skill: SkillIndex(f[4].parse().map_err(|_| bad(n))?),
                skill_prob: f[5].parse().map_err(|_| bad(n))?,
                action: f[6].parse().map_err(|_| bad(n))?,
            });
        }
        let resolution = (cells.len() as f64).sqrt().round() as usize;
        if resolution * resolution != cells.len() {
            return Err(AsapError::Config("partition csv is not a square grid".into()));
        }
        Ok(PartitionMap { resolution, cells })
    }

    /// SVG drawing: one fill per skill, an arrow for each cell's action, walls and goal on top.
    pub fn to_svg(&self, world: Option<&WorldSpec>) -> String {
        let size = SVG_SIZE;
        let cell = size / self.resolution as f64;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">"
        );
        let _ = writeln!(s, "<g id=\"cells\">");
        for c in &self.cells {
            let x = c.col as f64 * cell;
            let y = size - (c.row + 1) as f64 * cell;
            let _ = writeln!(
                s,
                "<rect x=\"{x:.3}\" y=\"{y:.3}\" width=\"{cell:.3}\" height=\"{cell:.3}\" fill=\"{}\" data-row=\"{}\" data-col=\"{}\" data-skill=\"{}\" data-action=\"{}\"/>",
                skill_color(c.skill),
                c.row,
                c.col,
                c.skill.0,
                c.action
            );
        }
        let _ = writeln!(s, "</g>\n<g id=\"arrows\" stroke=\"#ffffff\" fill=\"#ffffff\" stroke-width=\"{:.3}\">", cell * 0.08);
        for c in &self.cells {
            let cx = (c.col as f64 + 0.5) * cell;
            let cy = size - (c.row as f64 + 0.5) * cell;
            let [dx, dy] = crate::envs::Direction::from_action(c.action).map_or([0.0, 0.0], |d| d.delta());
            let len = cell * 0.35;
            let (tx, ty) = (cx + dx / 0.05 * len, cy - dy / 0.05 * len);
            let (px, py) = (-(ty - cy) * 0.4, (tx - cx) * 0.4);
            let (bx, by) = (cx + (tx - cx) * 0.3, cy + (ty - cy) * 0.3);
            let _ = writeln!(
                s,
                "<line x1=\"{:.3}\" y1=\"{:.3}\" x2=\"{bx:.3}\" y2=\"{by:.3}\"/><polygon points=\"{tx:.3},{ty:.3} {:.3},{:.3} {:.3},{:.3}\"/>",
                cx - (tx - cx),
                cy - (ty - cy),
                bx + px,
                by + py,
                bx - px,
                by - py
            );
        }
        let _ = writeln!(s, "</g>");
        if let Some(w) = world {
            let _ = writeln!(
                s,
                "<g id=\"walls\" stroke=\"#000000\" stroke-width=\"{:.3}\" stroke-linecap=\"square\">",
                size * 0.008
            );
            for seg in crate::envs::RoomWorld::new(w.clone()).map(|r| r.solid_walls()).unwrap_or_default() {
                let _ = writeln!(
                    s,
                    "<line x1=\"{:.3}\" y1=\"{:.3}\" x2=\"{:.3}\" y2=\"{:.3}\"/>",
                    seg[0] * size,
                    size - seg[1] * size,
                    seg[2] * size,
                    size - seg[3] * size
                );
            }
            let _ = writeln!(s, "</g>");
            let _ = writeln!(
                s,
                "<circle id=\"goal\" cx=\"{:.3}\" cy=\"{:.3}\" r=\"{:.3}\" fill=\"none\" stroke=\"#000000\" stroke-width=\"{:.3}\"/>",
                w.goal.center[0] * size,
                size - w.goal.center[1] * size,
                w.goal.radius * size,
                size * 0.006
            );
        }
        let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{size}\" height=\"{size}\" fill=\"none\" stroke=\"#000000\" stroke-width=\"{:.3}\"/>", size * 0.01);
        s.push_str("</svg>\n");
        s
    }
}

pub const SVG_SIZE: f64 = 400.0;

pub const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

pub fn skill_color(skill: SkillIndex) -> &'static str {
    PALETTE[skill.0 % PALETTE.len()]
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EvalJson<'a> {
    mean_return: f64,
    std: f64,
    success_rate: f64,
    skill_usage: &'a [f64],
    #[serde(skip_serializing_if = "Vec::is_empty")]
    tasks: Vec<TaskEvalJson<'a>>,
}

#[derive(Serialize)]
struct TaskEvalJson<'a> {
    env_id: &'a str,
    mean_return: f64,
    std: f64,
    success_rate: f64,
    skill_usage: &'a [f64],
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn policy_from_checkpoint(checkpoint: &Path, suite: &TaskSuite) -> Result<AsapPolicy> {
    let ck = Checkpoint::load(checkpoint)?;
    let params = ck.parameters()?;
    AsapPolicy::new(params, ck.temperatures, suite.features.clone())
}

/// File-name-safe form of a task id.
fn slug(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub fn write_partition_artifacts(policy: &AsapPolicy, suite: &TaskSuite, resolution: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let many = suite.distribution.len() > 1;
    for (i, (task, _)) in suite.distribution.tasks().iter().enumerate() {
        let map = PartitionMap::compute(policy, task, resolution)?;
        let stem = if many { format!("partitions_{}", slug(&task.env_id)) } else { "partitions".into() };
        let svg = out.join(format!("{stem}.svg"));
        let csv = out.join(format!("{stem}.csv"));
        write_file(&svg, &map.to_svg(Some(suite.worlds[i].spec())))?;
        write_file(&csv, &map.to_csv())?;
        written.extend([svg, csv]);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
}

/// Trains from a config; writes `curve.csv` (plus one curve per task for
/// multitask suites), `checkpoint.json` and the final partition map.
pub fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = args.episodes {
        cfg.train.max_episodes = e;
    }
    let out = cfg.resolve_out_dir(args.out.as_deref());
    run_training(&cfg, &out)
}

pub fn run_training(cfg: &ExperimentConfig, out: &Path) -> Result<i32> {
    fs::create_dir_all(out)?;
    let suite = cfg.suite()?;
    let params = cfg.initial_parameters(&suite)?;
    let checkpoint_path = out.join("checkpoint.json");
    if cfg.train.max_episodes == 0 {
        Checkpoint::new(&params, cfg.temperatures).save(&checkpoint_path)?;
        println!("episodes=0 checkpoint={}", checkpoint_path.display());
        return Ok(EXIT_OK);
    }
    let policy = AsapPolicy::new(params, cfg.temperatures, suite.features.clone())?;
    let mut write_err: Option<AsapError> = None;
    let every = cfg.checkpoint_every;
    let result = train_with(&cfg.train, &suite, policy, &mut |ev| {
        if let TrainEvent::Update { update, params, .. } = ev {
            if every > 0 && update % every == 0 && write_err.is_none() {
                if let Err(e) = Checkpoint::new(params, cfg.temperatures).save(&checkpoint_path) {
                    write_err = Some(e);
                }
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    let outcome = match result {
        Ok(o) => o,
        Err(AsapError::Divergence { episodes, reason, last_finite }) => {
            Checkpoint::new(&last_finite, cfg.temperatures).save(&checkpoint_path)?;
            eprintln!("diverged after {episodes} episodes: {reason}; last finite checkpoint saved");
            return Ok(EXIT_DIVERGED);
        }
        Err(e) => return Err(e),
    };
    write_file(&out.join("curve.csv"), &outcome.curve.to_csv())?;
    if outcome.task_curves.len() > 1 {
        for (id, curve) in &outcome.task_curves {
            write_file(&out.join(format!("curve_{}.csv", slug(id))), &curve.to_csv())?;
        }
    }
    Checkpoint::new(&outcome.params, cfg.temperatures).save(&checkpoint_path)?;
    let policy = AsapPolicy::new(outcome.params.clone(), cfg.temperatures, suite.features.clone())?;
    write_partition_artifacts(&policy, &suite, cfg.resolution, out)?;
    let last = outcome.curve.last().expect("curve has an initial record");
    println!(
        "episodes={} updates={} converged={} mean_return={:.3} success_rate={:.3}",
        outcome.episodes, outcome.updates, outcome.converged, last.summary.mean_return, last.summary.success_rate
    );
    Ok(EXIT_OK)
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub suite: String,
    pub world: Option<PathBuf>,
    pub episodes: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

/// Evaluates a checkpoint; writes `eval.json`.
pub fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let mut suite = make_task_suite(&args.suite)?;
    if let Some(w) = &args.world {
        suite = suite.with_world(WorldSpec::load(w)?)?;
    }
    let policy = policy_from_checkpoint(&args.checkpoint, &suite)?;
    let summaries: Vec<EvalSummary> = suite
        .distribution
        .tasks()
        .iter()
        .enumerate()
        .map(|(i, (task, _))| evaluate_seeded(&policy, &suite.worlds[i], task, args.episodes, args.seed, None))
        .collect::<Result<_>>()?;
    let parts: Vec<(f64, &EvalSummary)> =
        suite.distribution.tasks().iter().map(|(_, w)| *w).zip(summaries.iter()).collect();
    let combined = EvalSummary::combine(&parts);
    let tasks = if summaries.len() > 1 {
        suite
            .distribution
            .tasks()
            .iter()
            .zip(&summaries)
            .map(|((t, _), s)| TaskEvalJson {
                env_id: &t.env_id,
                mean_return: s.mean_return,
                std: s.std_return,
                success_rate: s.success_rate,
                skill_usage: &s.skill_usage,
            })
            .collect()
    } else {
        Vec::new()
    };
    let json = serde_json::to_string_pretty(&EvalJson {
        mean_return: combined.mean_return,
        std: combined.std_return,
        success_rate: combined.success_rate,
        skill_usage: &combined.skill_usage,
        tasks,
    })?;
    let out = resolve_out_dir(args.out.clone());
    write_file(&out.join("eval.json"), &(json.clone() + "\n"))?;
    println!("{json}");
    Ok(EXIT_OK)
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckArgs {
    pub config: PathBuf,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckSample {
    pub sample: usize,
    pub state: Vec<f64>,
    pub env_id: String,
    pub skill: usize,
    pub action: usize,
    pub report: GradCheckReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckOutcome {
    pub passed: bool,
    pub tolerance: f64,
    pub worst_rel_error: f64,
    pub worst_sample: Option<usize>,
    pub worst_coordinate: Option<usize>,
    pub saturated_coordinates: usize,
    pub samples: Vec<GradcheckSample>,
}

/// Hook replacing the analytic step gradient, used to check that a wrong
/// gradient is caught.
pub type AnalyticOverride<'a> = &'a dyn Fn(&AsapPolicy, &GeneralizedStep, &TaskDescriptor) -> Result<Vec<f64>>;

/// Random parameters, state, task, skill and action per sample; compares the
/// closed-form step score with central differences of `log P`.
///
/// Parameters are drawn so every margin `alpha_beta psi^T beta_k` stays well
/// inside the saturation threshold, which keeps all coordinates checkable.
pub fn run_gradcheck(
    suite: &TaskSuite,
    hyperplanes: usize,
    temps: Temperatures,
    settings: &GradCheckSettings,
    seed: u64,
    analytic: Option<AnalyticOverride<'_>>,
) -> Result<GradcheckOutcome> {
    let dims = suite.features.dims(hyperplanes)?;
    let mut rng = stream_rng(seed, 7);
    let mut samples = Vec::with_capacity(settings.samples);
    let psi_bound: f64 = (0..64)
        .flat_map(|n| {
            let x = [(n % 8) as f64 / 7.0, (n / 8) as f64 / 7.0];
            suite.distribution.tasks().iter().map(move |(t, _)| (x, t))
        })
        .map(|(x, t)| suite.features.psi(&x, t).map(|p| p.iter().map(|v| v.abs()).sum::<f64>()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(1.0, f64::max);
    // |alpha_beta psi^T beta| <= alpha_beta * max|beta| * |psi|_1 <= SATURATION_MARGIN / 3.
    let beta_scale = SATURATION_MARGIN / (3.0 * temps.alpha_beta * psi_bound);
    for n in 0..settings.samples {
        let mut params = Parameters::zeros(dims);
        let theta_len = dims.theta_len();
        for (j, w) in params.omega_mut().iter_mut().enumerate() {
            *w = if j < theta_len { rng.random_range(-2.0..2.0) } else { rng.random_range(-beta_scale..beta_scale) };
        }
        let policy = AsapPolicy::new(params, temps, suite.features.clone())?;
        let state = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let task_ix = rng.random_range(0..suite.distribution.len());
        let task = suite.distribution.tasks()[task_ix].0.clone();
        let step = GeneralizedStep {
            state: state.clone(),
            action: rng.random_range(0..dims.num_actions),
            skill: SkillIndex(rng.random_range(0..dims.num_skills())),
            reward: 0.0,
            next_state: state.clone(),
        };
        let grad = match analytic {
            Some(f) => Some(f(&policy, &step, &task)?),
            None => None,
        };
        let report = check_step_gradient(&policy, &step, &task, settings.epsilon, grad.as_deref())?;
        samples.push(GradcheckSample {
            sample: n,
            state,
            env_id: task.env_id.clone(),
            skill: step.skill.0,
            action: step.action,
            report,
        });
    }
    let worst = samples
        .iter()
        .max_by(|a, b| a.report.max_rel_error().total_cmp(&b.report.max_rel_error()));
    let worst_rel_error = worst.map_or(0.0, |s| s.report.max_rel_error());
    Ok(GradcheckOutcome {
        passed: worst_rel_error <= settings.tolerance,
        tolerance: settings.tolerance,
        worst_rel_error,
        worst_sample: worst.map(|s| s.sample),
        worst_coordinate: worst.and_then(|s| s.report.summary.worst_coordinate),
        saturated_coordinates: samples.iter().map(|s| s.report.summary.saturated).sum(),
        samples,
    })
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<i32> {
    cmd_gradcheck_with(args, None)
}

/// [`cmd_gradcheck`] with an optional replacement for the analytic gradient.
/// Writes `gradcheck.json`; exit 0 iff the worst relative error is within tolerance.
pub fn cmd_gradcheck_with(args: &GradcheckArgs, analytic: Option<AnalyticOverride<'_>>) -> Result<i32> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(n) = args.samples {
        cfg.gradcheck.samples = n;
    }
    let seed = args.seed.unwrap_or(cfg.train.seed);
    let suite = cfg.suite()?;
    let outcome = run_gradcheck(&suite, cfg.hyperplanes, cfg.temperatures, &cfg.gradcheck, seed, analytic)?;
    let out = cfg.resolve_out_dir(args.out.as_deref());
    write_file(&out.join("gradcheck.json"), &(serde_json::to_string_pretty(&outcome)? + "\n"))?;
    println!(
        "gradcheck samples={} worst_rel_error={:e} tolerance={:e} saturated={}",
        outcome.samples.len(),
        outcome.worst_rel_error,
        outcome.tolerance,
        outcome.saturated_coordinates
    );
    if outcome.passed {
        return Ok(EXIT_OK);
    }
    if let Some(s) = outcome.worst_sample.map(|i| &outcome.samples[i]) {
        let entry = s.report.summary.worst_coordinate.and_then(|c| s.report.entries.iter().find(|e| e.coordinate == c));
        eprintln!("tolerance exceeded at sample {}: {}", s.sample, serde_json::to_string(&entry)?);
    }
    Ok(EXIT_CHECK_FAILED)
}

/// Negates the hyperplanes of a checkpoint.
pub fn cmd_flip(input: &Path, output: &Path) -> Result<i32> {
    let ck = Checkpoint::load(input)?;
    let flipped = flip_hyperplanes(&ck.parameters()?);
    Checkpoint::new(&flipped, ck.temperatures).save(output)?;
    Ok(EXIT_OK)
}

#[derive(Clone, Debug)]
pub struct PlotArgs {
    pub checkpoint: PathBuf,
    pub suite: String,
    pub world: Option<PathBuf>,
    pub resolution: usize,
    pub out: Option<PathBuf>,
}

/// Writes `partitions.svg` and `partitions.csv` (one pair per task for multitask suites).
pub fn cmd_plot_partitions(args: &PlotArgs) -> Result<i32> {
    if args.resolution < MIN_RESOLUTION {
        return Err(AsapError::Config(format!("resolution must be at least {MIN_RESOLUTION}")));
    }
    let mut suite = make_task_suite(&args.suite)?;
    if let Some(w) = &args.world {
        suite = suite.with_world(WorldSpec::load(w)?)?;
    }
    let policy = policy_from_checkpoint(&args.checkpoint, &suite)?;
    let out = resolve_out_dir(args.out.clone());
    for p in write_partition_artifacts(&policy, &suite, args.resolution, &out)? {
        println!("{}", p.display());
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ini_sections_and_comments() {
        let ini = parse_ini("# top\n[a]\nx = 1\n; c\ny=two # trailing\n[b]\n").unwrap();
        assert_eq!(ini["a"]["x"], "1");
        assert_eq!(ini["a"]["y"], "two");
        assert!(ini["b"].is_empty());
        assert!(parse_ini("x = 1").is_err());
        assert!(parse_ini("[a]\nnot a pair").is_err());
        assert!(parse_ini("[a]\nx=1\nx=2").is_err());
    }

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = ExperimentConfig::parse("[experiment]\nsuite = 3R\nhyperplanes = 2\n[train]\neta_beta = 0.5\nschedule = robbins-monro\nrm_c = 2\nrm_t0 = 10\n").unwrap();
        assert_eq!(cfg.suite, "3R");
        assert_eq!(cfg.hyperplanes, 2);
        assert_eq!(cfg.train.eta_beta, 0.5);
        assert_eq!(cfg.train.schedule, StepSchedule::RobbinsMonro { c: 2.0, t0: 10.0 });
        assert_eq!(cfg.train.eta_theta, TrainConfig::default().eta_theta);
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn config_rejects_bad_input() {
        for text in [
            "[experiment]\nsuite = 5R\n",
            "[experiment]\nbogus = 1\n",
            "[nowhere]\nx = 1\n",
            "[train]\ngamma = 1.5\n",
            "[train]\neta_theta = abc\n",
            "[temperatures]\nalpha_beta = 0\n",
            "[experiment]\nhyperplanes = 0\n",
            "[experiment]\ninit = sideways\n",
        ] {
            assert!(matches!(ExperimentConfig::parse(text), Err(AsapError::Config(_))), "{text}");
        }
    }

    fn two_region_policy() -> (AsapPolicy, TaskSuite) {
        let suite = make_task_suite("2R").unwrap();
        let p = reference_parameters(&suite, 1.0).unwrap();
        (AsapPolicy::new(p, Temperatures::default(), suite.features.clone()).unwrap(), suite)
    }

    #[test]
    fn partition_map_csv_round_trip() {
        let (policy, suite) = two_region_policy();
        let map = PartitionMap::compute(&policy, suite.task(0), 12).unwrap();
        let back = PartitionMap::from_csv(&map.to_csv()).unwrap();
        assert_eq!(map, back);
        assert!(map.cells.iter().all(|c| (0.0..=1.0).contains(&c.skill_prob)));
        assert!(PartitionMap::compute(&policy, suite.task(0), 4).is_err());
    }

    #[test]
    fn components_of_stripes() {
        let r = 8;
        let cells = (0..r * r)
            .map(|n| {
                let (row, col) = (n / r, n % r);
                let skill = SkillIndex(usize::from((col / 2) % 2 == 1));
                PartitionCell { row, col, skill, skill_prob: 1.0, action: 0 }
            })
            .collect();
        let map = PartitionMap { resolution: r, cells };
        assert_eq!(map.connected_components(SkillIndex(0)), 2);
        assert_eq!(map.connected_components(SkillIndex(1)), 2);
        assert_eq!(map.connected_components(SkillIndex(3)), 0);
        assert_eq!(map.coverage_of_top(1), 0.5);
    }

    #[test]
    fn svg_is_well_formed() {
        let (policy, suite) = two_region_policy();
        let map = PartitionMap::compute(&policy, suite.task(0), 10).unwrap();
        let svg = map.to_svg(Some(suite.worlds[0].spec()));
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.root_element().attribute("viewBox"), Some("0 0 400 400"));
        let rects = doc.descendants().filter(|n| n.attribute("data-skill").is_some()).count();
        assert_eq!(rects, 100);
    }

    #[test]
    fn out_dir_precedence() {
        let cfg = ExperimentConfig { out_dir: Some("from-config".into()), ..ExperimentConfig::default() };
        assert_eq!(cfg.resolve_out_dir(Some(Path::new("flag"))), PathBuf::from("flag"));
        assert_eq!(cfg.resolve_out_dir(None), PathBuf::from("from-config"));
    }

    #[test]
    fn exit_codes() {
        let d = AsapError::Divergence {
            episodes: 1,
            reason: "x".into(),
            last_finite: Box::new(Parameters::zeros(crate::params::Dims::new(1, 1, 1, 2).unwrap())),
        };
        assert_eq!(exit_code(&d), EXIT_DIVERGED);
        assert_eq!(exit_code(&AsapError::Config("x".into())), EXIT_INPUT);
    }
}
