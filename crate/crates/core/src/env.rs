//! Goal-conditioned routing environment.
//!
//! The agent moves cell to cell along traffic-graph edges, choosing one of
//! six hex directions and one of five speed levels per step. Rewards combine
//! graph progress, traffic frequency, wind exposure, fuel, travel time and a
//! per-step base penalty, rescaled by task length.

use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine, initial_heading, KMH_PER_KNOT};
use crate::hexworld::{CellId, Direction, WorldGrid};
use crate::scalar::Real;
use crate::traffic::TrafficGraph;
use crate::wind::{WindField, WindSample};
use crate::GeoCoord;

pub const N_MANEUVERS: usize = 6;
pub const N_DYNAMIC: usize = 4;
pub const N_GOAL: usize = 4;
pub const OBS_DIM: usize = N_DYNAMIC + N_GOAL;
pub const LOG_EPSILON: f64 = 1e-5;

/// Start-goal pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Task {
    pub start: CellId,
    pub goal: CellId,
}

impl Task {
    pub const fn new(start: CellId, goal: CellId) -> Self {
        Self { start, goal }
    }

    pub fn reversed(self) -> Self {
        Self { start: self.goal, goal: self.start }
    }
}

/// Edge attribute used as the frequency signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreqSource {
    #[default]
    Count,
    Prob,
}

/// Adjacency used for the goal distance `D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceTopology {
    #[default]
    Graph,
    Lattice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub history_len: usize,
    pub horizon_factor: usize,
    /// Knots.
    pub speed_levels: Vec<f64>,
    /// m/s.
    pub wind_threshold: f64,
    pub wind_penalty: f64,
    /// `(cubic coefficient, wind coefficient)` of the fuel model.
    pub fuel_coeffs: (f64, f64),
    pub drag_coeff: f64,
    /// Multiplier on fuel use and travel time in their penalties.
    pub penalty_scale: f64,
    pub progress_coeff: f64,
    pub freq_divisor: f64,
    pub freq_cap: f64,
    pub base_penalty: f64,
    pub invalid_penalty: f64,
    /// Task defining the scaling reference; `None` scales by the current task
    /// itself (identity).
    pub ref_task: Option<Task>,
    pub masking_enabled: bool,
    pub freq_source: FreqSource,
    pub distance_topology: DistanceTopology,
    /// Drop the progress and frequency terms.
    pub penalty_only: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            history_len: 8,
            horizon_factor: 5,
            speed_levels: vec![8.0, 11.0, 14.0, 18.0, 22.0],
            wind_threshold: 10.0,
            wind_penalty: -1.0,
            fuel_coeffs: (0.05, 0.02),
            drag_coeff: 0.5,
            penalty_scale: 0.001,
            progress_coeff: 2.0,
            freq_divisor: 5.0,
            freq_cap: 0.5,
            base_penalty: -1.0,
            invalid_penalty: -1900.0,
            ref_task: None,
            masking_enabled: true,
            freq_source: FreqSource::Count,
            distance_topology: DistanceTopology::Graph,
            penalty_only: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.history_len == 0 {
            return bad("history_len must be positive");
        }
        if self.horizon_factor == 0 {
            return bad("horizon_factor must be positive");
        }
        if self.speed_levels.is_empty() || self.speed_levels.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("speed_levels must be non-empty and positive");
        }
        if !(self.freq_divisor > 0.0) {
            return bad("freq_divisor must be positive");
        }
        Ok(())
    }

    /// Length of the history-augmented state vector.
    pub fn history_dim(&self) -> usize {
        self.history_len * N_DYNAMIC + N_GOAL
    }

    pub fn state_dim(&self, with_history: bool) -> usize {
        if with_history {
            self.history_dim()
        } else {
            OBS_DIM
        }
    }

    pub fn n_speeds(&self) -> usize {
        self.speed_levels.len()
    }

    /// Index of the level closest to `knots`; ties go to the lower level.
    pub fn snap_speed(&self, knots: f64) -> usize {
        let mut best = 0;
        for (i, s) in self.speed_levels.iter().enumerate() {
            if (s - knots).abs() < (self.speed_levels[best] - knots).abs() {
                best = i;
            }
        }
        best
    }
}

/// `(x - x_min) / (x_max - x_min)` clamped to [0, 1].
pub fn normalize_position<T: Real>(x: T, x_min: T, x_max: T) -> Result<T> {
    if !(x_max > x_min) {
        return Err(Error::DegenerateRange { min: x_min.to_f64_lossy(), max: x_max.to_f64_lossy() });
    }
    Ok(((x - x_min) / (x_max - x_min)).max(T::zero()).min(T::one()))
}

/// Log-scaled min-max normalisation for skewed non-negative quantities.
pub fn normalize_log<T: Real>(y: T, y_min: T, y_max: T) -> Result<T> {
    if !(y_max > y_min && y_min >= T::zero()) {
        return Err(Error::DegenerateRange { min: y_min.to_f64_lossy(), max: y_max.to_f64_lossy() });
    }
    let eps = T::lit(LOG_EPSILON);
    let lo = (y_min + eps).log10();
    let v = ((y.max(T::zero()) + eps).log10() - lo) / ((y_max + eps).log10() - lo);
    Ok(v.max(T::zero()).min(T::one()))
}

/// Maps an angle in [-pi, pi] to [0, 1].
pub fn normalize_wind_dir<T: Real>(theta: T) -> T {
    let pi = T::PI();
    ((theta + pi) / (pi + pi)).max(T::zero()).min(T::one())
}

/// Headwind resistance factor `1 + c (1 - cos(heading - wind_dir))`.
pub fn drag<T: Real>(heading: T, wind_dir: T, coeff: T) -> T {
    T::one() + coeff * (T::one() - (heading - wind_dir).cos())
}

/// Cubic speed law with headwind drag, in fuel units.
pub fn fuel_use<T: Real>(speed_knots: T, heading: T, wind: &WindSample<T>, coeffs: (T, T), drag_coeff: T) -> T {
    coeffs.0 * speed_knots.powi(3) * drag(heading, wind.direction, drag_coeff) + coeffs.1 * wind.speed
}

/// `clip(ln(1 + w) / divisor, 0, cap)`.
pub fn frequency_reward<T: Real>(weight: T, divisor: T, cap: T) -> T {
    ((T::one() + weight.max(T::zero())).ln() / divisor).max(T::zero()).min(cap)
}

/// Softmax over `logits` restricted to entries where `mask` is true.
pub fn masked_distribution<T: Real>(logits: &[T], mask: &[bool]) -> Result<Vec<T>> {
    if logits.len() != mask.len() {
        return Err(Error::InvalidAction(format!("{} logits for {} mask entries", logits.len(), mask.len())));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(l, _)| *l)
        .fold(None, |acc: Option<T>, l| Some(acc.map_or(l, |a| a.max(l))))
        .ok_or_else(|| Error::InvalidAction("every action is masked".into()))?;
    let mut p: Vec<T> = logits.iter().zip(mask).map(|(l, &m)| if m { (*l - max).exp() } else { T::zero() }).collect();
    let total: T = p.iter().copied().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

/// `r_raw / D(task) * D(ref)`.
pub fn scale_reward(r_raw: f64, d_task: u32, d_ref: u32) -> Result<f64> {
    if d_task == 0 || d_ref == 0 {
        return Err(Error::InvalidTask("scaling needs positive task distances".into()));
    }
    Ok(r_raw / d_task as f64 * d_ref as f64)
}

/// Normalised observation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Observation {
    pub lat_norm: f64,
    pub lon_norm: f64,
    pub speed_norm: f64,
    pub wind_dir_norm: f64,
    pub start_lat_norm: f64,
    pub start_lon_norm: f64,
    pub goal_lat_norm: f64,
    pub goal_lon_norm: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [
            self.lat_norm,
            self.lon_norm,
            self.speed_norm,
            self.wind_dir_norm,
            self.start_lat_norm,
            self.start_lon_norm,
            self.goal_lat_norm,
            self.goal_lon_norm,
        ]
    }

    pub fn dynamic(&self) -> [f64; N_DYNAMIC] {
        [self.lat_norm, self.lon_norm, self.speed_norm, self.wind_dir_norm]
    }

    pub fn goal(&self) -> [f64; N_GOAL] {
        [self.start_lat_norm, self.start_lon_norm, self.goal_lat_norm, self.goal_lon_norm]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub maneuver: usize,
    pub speed: usize,
}

impl Action {
    pub const fn new(maneuver: usize, speed: usize) -> Self {
        Self { maneuver, speed }
    }
}

/// Valid maneuvers; every speed level is always valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActionMask {
    pub maneuver: [bool; N_MANEUVERS],
}

impl ActionMask {
    pub fn valid_count(&self) -> usize {
        self.maneuver.iter().filter(|&&m| m).count()
    }

    pub fn any(&self) -> bool {
        self.maneuver.iter().any(|&m| m)
    }

    pub fn all() -> Self {
        Self { maneuver: [true; N_MANEUVERS] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RewardBreakdown {
    pub r_prog: f64,
    pub r_freq: f64,
    pub r_wind: f64,
    pub r_fuel: f64,
    pub r_eta: f64,
    pub r_base: f64,
    pub r_raw: f64,
    pub r_scaled: f64,
    /// Scaled sum of the penalty terms alone (or the invalid-action penalty).
    pub r_penalty_scaled: f64,
    pub fuel_use: f64,
    /// Minutes.
    pub travel_time: f64,
}

/// Everything [`step_reward`] needs about one move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionContext {
    pub d_from: u32,
    pub d_to: u32,
    pub edge_weight: f64,
    pub wind: WindSample,
    pub speed_knots: f64,
    pub heading: f64,
    pub distance_km: f64,
}

/// Unscaled reward terms of one valid move (`r_scaled` left at zero).
pub fn step_reward(cfg: &EnvConfig, ctx: &TransitionContext) -> RewardBreakdown {
    let travel_time = ctx.distance_km / (ctx.speed_knots * KMH_PER_KNOT) * 60.0;
    let fuel = fuel_use(ctx.speed_knots, ctx.heading, &ctx.wind, cfg.fuel_coeffs, cfg.drag_coeff);
    let (r_prog, r_freq) = if cfg.penalty_only {
        (0.0, 0.0)
    } else {
        (
            cfg.progress_coeff * (ctx.d_from as f64 - ctx.d_to as f64),
            frequency_reward(ctx.edge_weight, cfg.freq_divisor, cfg.freq_cap),
        )
    };
    let r_wind = if ctx.wind.speed > cfg.wind_threshold { cfg.wind_penalty } else { 0.0 };
    let r_fuel = -cfg.penalty_scale * fuel;
    let r_eta = -cfg.penalty_scale * travel_time;
    let r_base = cfg.base_penalty;
    RewardBreakdown {
        r_prog,
        r_freq,
        r_wind,
        r_fuel,
        r_eta,
        r_base,
        r_raw: r_prog + r_freq + r_wind + r_fuel + r_eta + r_base,
        fuel_use: fuel,
        travel_time,
        ..Default::default()
    }
}

/// Immutable world shared by environment instances.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: WorldGrid,
    pub graph: TrafficGraph,
    pub wind: WindField,
}

impl Scenario {
    pub fn new(grid: WorldGrid, graph: TrafficGraph, wind: WindField) -> Result<Self> {
        for c in graph.nodes() {
            if !grid.contains(c) {
                return Err(Error::UnknownCell(c));
            }
        }
        if graph.node_count() == 0 {
            return Err(Error::Config("traffic graph has no nodes".into()));
        }
        Ok(Self { grid, graph, wind })
    }

    /// Checks that a task can be played in this scenario.
    pub fn validate_task(&self, task: Task) -> Result<()> {
        if task.start == task.goal {
            return Err(Error::InvalidTask("start equals goal".into()));
        }
        self.graph.hop_distance(task.start, task.goal).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Extents {
    lat: (f64, f64),
    lon: (f64, f64),
    speed: (f64, f64),
}

fn padded(lo: f64, hi: f64, pad: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - pad, hi + pad)
    }
}

impl Extents {
    fn compute(graph: &TrafficGraph, levels: &[f64]) -> Self {
        let (mut lat, mut lon) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
        for c in graph.nodes() {
            let p = graph.center(c).expect("graph node has a centre");
            lat = (lat.0.min(p.lat), lat.1.max(p.lat));
            lon = (lon.0.min(p.lon), lon.1.max(p.lon));
        }
        let smin = levels.iter().copied().fold(f64::INFINITY, f64::min);
        let smax = levels.iter().copied().fold(0.0, f64::max);
        let speed = if smax > smin { (smin, smax) } else { (0.0, smax) };
        Self { lat: padded(lat.0, lat.1, 1e-3), lon: padded(lon.0, lon.1, 1e-3), speed }
    }
}

/// Per-step extras beyond the scalar reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub breakdown: RewardBreakdown,
    pub cell: CellId,
    pub reached_goal: bool,
    pub invalid_action: bool,
    /// No valid maneuver remained under masking.
    pub dead_end: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub history: Vec<f64>,
    pub mask: ActionMask,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }

    pub fn state(&self, with_history: bool) -> Vec<f64> {
        if with_history {
            self.history.clone()
        } else {
            self.obs.to_array().to_vec()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResetOutcome {
    pub obs: Observation,
    pub history: Vec<f64>,
    pub mask: ActionMask,
}

impl ResetOutcome {
    pub fn state(&self, with_history: bool) -> Vec<f64> {
        if with_history {
            self.history.clone()
        } else {
            self.obs.to_array().to_vec()
        }
    }
}

/// One row of an episode trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub cell: CellId,
    pub speed_knots: f64,
    pub breakdown: RewardBreakdown,
}

#[derive(Debug, Clone)]
struct Episode {
    task: Task,
    cur: CellId,
    prev: Option<CellId>,
    steps: usize,
    horizon: usize,
    clock_h: f64,
    speed_knots: f64,
    dist: Arc<HashMap<CellId, u32>>,
    d_task: u32,
    d_ref: u32,
    history: VecDeque<[f64; N_DYNAMIC]>,
    obs: Observation,
    mask: ActionMask,
    done: bool,
    route: Vec<CellId>,
    trace: Vec<TraceRow>,
}

/// Single-threaded episode runner over a shared [`Scenario`].
#[derive(Debug, Clone)]
pub struct Env {
    scenario: Arc<Scenario>,
    cfg: EnvConfig,
    extents: Extents,
    day_starts: Vec<i64>,
    dist_cache: HashMap<CellId, Arc<HashMap<CellId, u32>>>,
    episode: Option<Episode>,
}

impl Env {
    pub fn new(scenario: Arc<Scenario>, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        if let Some(r) = cfg.ref_task {
            scenario.validate_task(r)?;
        }
        let extents = Extents::compute(&scenario.graph, &cfg.speed_levels);
        let day_starts = scenario.wind.day_starts();
        Ok(Self { scenario, cfg, extents, day_starts, dist_cache: HashMap::new(), episode: None })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    /// Goal distances in the configured topology.
    pub fn distances_to(&mut self, goal: CellId) -> Result<Arc<HashMap<CellId, u32>>> {
        if let Some(d) = self.dist_cache.get(&goal) {
            return Ok(d.clone());
        }
        let d = Arc::new(match self.cfg.distance_topology {
            DistanceTopology::Graph => self.scenario.graph.hop_distances_to(goal)?,
            DistanceTopology::Lattice => self.scenario.grid.lattice_hop_distances(goal)?,
        });
        self.dist_cache.insert(goal, d.clone());
        Ok(d)
    }

    pub fn task_distance(&mut self, task: Task) -> Result<u32> {
        self.distances_to(task.goal)?
            .get(&task.start)
            .copied()
            .ok_or(Error::Unreachable { from: task.start, to: task.goal })
    }

    fn episode(&self) -> Result<&Episode> {
        self.episode.as_ref().ok_or(Error::EpisodeOver)
    }

    pub fn task(&self) -> Option<Task> {
        self.episode.as_ref().map(|e| e.task)
    }

    pub fn current_cell(&self) -> Option<CellId> {
        self.episode.as_ref().map(|e| e.cur)
    }

    pub fn previous_cell(&self) -> Option<CellId> {
        self.episode.as_ref().and_then(|e| e.prev)
    }

    pub fn steps(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.steps)
    }

    pub fn horizon(&self) -> Option<usize> {
        self.episode.as_ref().map(|e| e.horizon)
    }

    /// Hours since the Unix epoch.
    pub fn clock_hours(&self) -> Option<f64> {
        self.episode.as_ref().map(|e| e.clock_h)
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_none_or(|e| e.done)
    }

    pub fn mask(&self) -> Result<ActionMask> {
        Ok(self.episode()?.mask)
    }

    pub fn observation(&self) -> Result<Observation> {
        Ok(self.episode()?.obs)
    }

    pub fn history_state(&self) -> Result<Vec<f64>> {
        Ok(history_vector(self.episode()?))
    }

    pub fn state(&self, with_history: bool) -> Result<Vec<f64>> {
        let e = self.episode()?;
        Ok(if with_history { history_vector(e) } else { e.obs.to_array().to_vec() })
    }

    pub fn route(&self) -> &[CellId] {
        self.episode.as_ref().map_or(&[], |e| &e.route)
    }

    pub fn trace(&self) -> &[TraceRow] {
        self.episode.as_ref().map_or(&[], |e| &e.trace)
    }

    pub fn reset(&mut self, task: Task, episode_seed: u64) -> Result<ResetOutcome> {
        self.scenario.validate_task(task)?;
        let dist = self.distances_to(task.goal)?;
        let d_task = *dist.get(&task.start).ok_or(Error::Unreachable { from: task.start, to: task.goal })?;
        let d_ref = match self.cfg.ref_task {
            Some(r) => self.task_distance(r)?,
            None => d_task,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let clock_h = self.day_starts[rng.gen_range(0..self.day_starts.len())] as f64;
        let speed_knots = self.cfg.speed_levels.iter().copied().fold(f64::INFINITY, f64::min);
        let mut ep = Episode {
            task,
            cur: task.start,
            prev: None,
            steps: 0,
            horizon: self.cfg.horizon_factor * d_task as usize,
            clock_h,
            speed_knots,
            dist,
            d_task,
            d_ref,
            history: VecDeque::with_capacity(self.cfg.history_len),
            obs: Observation::default(),
            mask: ActionMask::default(),
            done: false,
            route: vec![task.start],
            trace: Vec::new(),
        };
        ep.obs = self.observe(&ep)?;
        for _ in 0..self.cfg.history_len {
            ep.history.push_back(ep.obs.dynamic());
        }
        ep.mask = self.compute_mask(&ep);
        let out = ResetOutcome { obs: ep.obs, history: history_vector(&ep), mask: ep.mask };
        self.episode = Some(ep);
        Ok(out)
    }

    fn wind_at(&self, cell: CellId, clock_h: f64) -> Result<WindSample> {
        let t = clock_h.min(self.scenario.wind.last_hour() as f64);
        self.scenario.wind.sample(cell, t)
    }

    fn observe(&self, ep: &Episode) -> Result<Observation> {
        let g = &self.scenario.graph;
        let x = &self.extents;
        let pos = |c: CellId| -> Result<(f64, f64)> {
            let p = g.center(c)?;
            Ok((normalize_position(p.lat, x.lat.0, x.lat.1)?, normalize_position(p.lon, x.lon.0, x.lon.1)?))
        };
        let (lat, lon) = pos(ep.cur)?;
        let (slat, slon) = pos(ep.task.start)?;
        let (glat, glon) = pos(ep.task.goal)?;
        let wind = self.wind_at(ep.cur, ep.clock_h)?;
        Ok(Observation {
            lat_norm: lat,
            lon_norm: lon,
            speed_norm: normalize_log(ep.speed_knots, x.speed.0, x.speed.1)?,
            wind_dir_norm: normalize_wind_dir(wind.direction),
            start_lat_norm: slat,
            start_lon_norm: slon,
            goal_lat_norm: glat,
            goal_lon_norm: glon,
        })
    }

    /// Graph successors that are not an immediate backtrack.
    fn admissible(&self, ep: &Episode) -> [bool; N_MANEUVERS] {
        self.scenario.graph.successors(ep.cur).map(|n| n.is_some() && n != ep.prev)
    }

    fn compute_mask(&self, ep: &Episode) -> ActionMask {
        let mut maneuver = self.admissible(ep);
        if ep.steps == 0 {
            let edges: Vec<_> = self.scenario.graph.neighbor_edges(ep.cur).collect();
            if edges.len() == N_MANEUVERS {
                let mut lowest = edges[0];
                for e in &edges[1..] {
                    if e.2.prob_weight < lowest.2.prob_weight {
                        lowest = *e;
                    }
                }
                maneuver[lowest.0.index()] = false;
            }
        }
        ActionMask { maneuver }
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        let speed = *self
            .cfg
            .speed_levels
            .get(action.speed)
            .ok_or_else(|| Error::InvalidAction(format!("speed index {}", action.speed)))?;
        let dir = Direction::from_index(action.maneuver)
            .ok_or_else(|| Error::InvalidAction(format!("maneuver index {}", action.maneuver)))?;
        self.step_raw(dir, speed)
    }

    /// Steps with an arbitrary positive speed instead of a level index.
    pub fn step_raw(&mut self, dir: Direction, speed_knots: f64) -> Result<StepOutcome> {
        if !(speed_knots.is_finite() && speed_knots > 0.0) {
            return Err(Error::InvalidAction(format!("speed {speed_knots} kn")));
        }
        let mut ep = self.episode.take().ok_or(Error::EpisodeOver)?;
        if ep.done {
            self.episode = Some(ep);
            return Err(Error::EpisodeOver);
        }
        let result = self.advance(&mut ep, dir, speed_knots);
        self.episode = Some(ep);
        result
    }

    fn advance(&self, ep: &mut Episode, dir: Direction, speed_knots: f64) -> Result<StepOutcome> {
        let d = dir.index();
        if self.cfg.masking_enabled && !ep.mask.maneuver[d] {
            return Err(Error::InvalidAction(format!("maneuver {d} is masked")));
        }
        if !self.admissible(ep)[d] {
            ep.done = true;
            ep.steps += 1;
            let p = self.cfg.invalid_penalty;
            let breakdown = RewardBreakdown { r_scaled: p, r_penalty_scaled: p, ..Default::default() };
            ep.trace.push(TraceRow { step: ep.steps, cell: ep.cur, speed_knots, breakdown });
            return Ok(StepOutcome {
                obs: ep.obs,
                history: history_vector(ep),
                mask: ep.mask,
                reward: p,
                terminated: true,
                truncated: false,
                info: StepInfo { breakdown, cell: ep.cur, reached_goal: false, invalid_action: true, dead_end: false },
            });
        }
        let g = &self.scenario.graph;
        let next = ep.cur.step(dir);
        let edge = *g.edge(ep.cur, next).expect("admissible move follows an edge");
        let (a, b) = (g.center(ep.cur)?, g.center(next)?);
        let ctx = TransitionContext {
            d_from: ep.dist[&ep.cur],
            d_to: ep.dist[&next],
            edge_weight: match self.cfg.freq_source {
                FreqSource::Count => edge.count as f64,
                FreqSource::Prob => edge.prob_weight,
            },
            wind: self.wind_at(ep.cur, ep.clock_h)?,
            speed_knots,
            heading: initial_heading(a, b),
            distance_km: haversine(a, b),
        };
        let mut breakdown = step_reward(&self.cfg, &ctx);
        breakdown.r_scaled = scale_reward(breakdown.r_raw, ep.d_task, ep.d_ref)?;
        let penalties = breakdown.r_wind + breakdown.r_fuel + breakdown.r_eta + breakdown.r_base;
        breakdown.r_penalty_scaled = scale_reward(penalties, ep.d_task, ep.d_ref)?;

        ep.steps += 1;
        ep.clock_h += breakdown.travel_time / 60.0;
        ep.prev = Some(ep.cur);
        ep.cur = next;
        ep.speed_knots = speed_knots;
        ep.route.push(next);
        ep.trace.push(TraceRow { step: ep.steps, cell: next, speed_knots, breakdown });
        ep.obs = self.observe(ep)?;
        ep.history.pop_front();
        ep.history.push_back(ep.obs.dynamic());
        ep.mask = self.compute_mask(ep);

        let reached_goal = next == ep.task.goal;
        let dead_end = !reached_goal && self.cfg.masking_enabled && !ep.mask.any();
        let truncated = !reached_goal && (ep.steps >= ep.horizon || dead_end);
        ep.done = reached_goal || truncated;
        Ok(StepOutcome {
            obs: ep.obs,
            history: history_vector(ep),
            mask: ep.mask,
            reward: breakdown.r_scaled,
            terminated: reached_goal,
            truncated,
            info: StepInfo { breakdown, cell: next, reached_goal, invalid_action: false, dead_end },
        })
    }
}

fn history_vector(ep: &Episode) -> Vec<f64> {
    let mut v: Vec<f64> = ep.history.iter().flatten().copied().collect();
    v.extend_from_slice(&ep.obs.goal());
    v
}

/// Writes `step,cell_q,cell_r,speed_knots,r_prog,r_freq,r_wind,r_fuel,r_eta,r_base,r_scaled`.
pub fn write_trace_csv<W: Write>(writer: W, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "step", "cell_q", "cell_r", "speed_knots", "r_prog", "r_freq", "r_wind", "r_fuel", "r_eta", "r_base", "r_scaled",
    ])?;
    for row in trace {
        let b = &row.breakdown;
        w.write_record(&[
            row.step.to_string(),
            row.cell.q.to_string(),
            row.cell.r.to_string(),
            row.speed_knots.to_string(),
            b.r_prog.to_string(),
            b.r_freq.to_string(),
            b.r_wind.to_string(),
            b.r_fuel.to_string(),
            b.r_eta.to_string(),
            b.r_base.to_string(),
            b.r_scaled.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// GeoJSON Feature with a LineString through the cell centres.
pub fn route_geojson(grid: &WorldGrid, route: &[CellId], properties: serde_json::Map<String, serde_json::Value>) -> Result<String> {
    let coords = route
        .iter()
        .map(|c| grid.center(*c).map(|p: GeoCoord| vec![p.lon, p.lat]))
        .collect::<Result<Vec<_>>>()?;
    let feature = geojson::Feature {
        bbox: None,
        geometry: Some(geojson::Geometry::new(geojson::Value::LineString(coords))),
        id: None,
        properties: Some(properties),
        foreign_members: None,
    };
    Ok(geojson::GeoJson::Feature(feature).to_string())
}
