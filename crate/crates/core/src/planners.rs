//! Classical routing baselines and a replay scorer that drives the
//! environment along a fixed route.

use std::io::Write;
use std::sync::Arc;

use crate::env::{Env, EnvConfig, RewardBreakdown, Scenario, Task};
use crate::error::{Error, Result};
use crate::geo::{haversine, KMH_PER_KNOT};
use crate::hexworld::CellId;
use crate::traffic::{Path, SearchOutcome, TrafficGraph};

/// A route that may stop short of its goal.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRoute {
    pub cells: Vec<CellId>,
    pub complete: bool,
    /// Sum of edge costs along `cells`.
    pub total_cost: f64,
}

impl PlannedRoute {
    pub fn hops(&self) -> usize {
        self.cells.len().saturating_sub(1)
    }
}

impl From<Path> for PlannedRoute {
    fn from(p: Path) -> Self {
        Self { cells: p.cells, complete: true, total_cost: p.total_cost }
    }
}

pub fn route_cost(graph: &TrafficGraph, cells: &[CellId]) -> Result<f64> {
    cells.windows(2).enumerate().try_fold(0.0, |acc, (i, w)| {
        graph.edge(w[0], w[1]).map(|e| acc + e.cost).ok_or(Error::BrokenRoute(i))
    })
}

/// Myopic descent on graph hop distance without immediate backtracking;
/// ties go to the lowest direction index.
pub fn greedy_route(graph: &TrafficGraph, task: Task, max_steps: usize) -> Result<PlannedRoute> {
    let dist = graph.hop_distances_to(task.goal)?;
    if !graph.contains(task.start) {
        return Err(Error::UnknownNode(task.start));
    }
    let mut cells = vec![task.start];
    let mut prev: Option<CellId> = None;
    let mut cur = task.start;
    while cur != task.goal && cells.len() <= max_steps {
        let next = graph
            .successors(cur)
            .into_iter()
            .flatten()
            .filter(|n| Some(*n) != prev)
            .filter_map(|n| dist.get(&n).map(|d| (*d, n)))
            .min_by_key(|(d, _)| *d);
        match next {
            Some((_, n)) => {
                prev = Some(cur);
                cur = n;
                cells.push(n);
            }
            None => break,
        }
    }
    let total_cost = route_cost(graph, &cells)?;
    Ok(PlannedRoute { complete: cur == task.goal, cells, total_cost })
}

pub fn dijkstra_route(graph: &TrafficGraph, task: Task) -> Result<SearchOutcome> {
    graph.search(task.start, task.goal, |_, _, e| e.cost, |_| 0.0)
}

/// A* with the straight-line travel time at the fastest edge speed as the
/// heuristic.
pub fn astar_route(graph: &TrafficGraph, task: Task) -> Result<SearchOutcome> {
    let goal = graph.center(task.goal)?;
    let vmax = graph.max_speed() * KMH_PER_KNOT;
    graph.search(
        task.start,
        task.goal,
        |_, _, e| e.cost,
        |c| if vmax > 0.0 { graph.center(c).map_or(0.0, |p| haversine(p, goal) / vmax) } else { 0.0 },
    )
}

/// Speeds used when replaying a route.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum SpeedPolicy {
    /// Edge mean speed snapped to the nearest level.
    #[default]
    Snap,
    /// Edge mean speed as is.
    Raw,
    /// One level index for every step.
    Fixed(usize),
    /// Explicit knots per step.
    PerStep(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayResult {
    pub total_return: f64,
    pub steps: usize,
    pub complete: bool,
    pub trace: Vec<RewardBreakdown>,
}

/// Drives a fresh environment (masking off) along `route` and sums the
/// scaled rewards it emits. Stops early if the episode ends.
pub fn replay_score(
    scenario: Arc<Scenario>,
    cfg: &EnvConfig,
    task: Task,
    route: &[CellId],
    speeds: &SpeedPolicy,
    episode_seed: u64,
) -> Result<ReplayResult> {
    if route.first() != Some(&task.start) {
        return Err(Error::BrokenRoute(0));
    }
    for (i, w) in route.windows(2).enumerate() {
        if scenario.graph.edge(w[0], w[1]).is_none() {
            return Err(Error::BrokenRoute(i));
        }
    }
    if task.start == task.goal {
        return Ok(ReplayResult { total_return: 0.0, steps: 0, complete: true, trace: Vec::new() });
    }
    let cfg = EnvConfig { masking_enabled: false, ..cfg.clone() };
    let mut env = Env::new(scenario.clone(), cfg.clone())?;
    env.reset(task, episode_seed)?;
    let mut out = ReplayResult { total_return: 0.0, steps: 0, complete: false, trace: Vec::new() };
    for (i, w) in route.windows(2).enumerate() {
        let dir = w[0].direction_to(w[1]).ok_or(Error::BrokenRoute(i))?;
        let knots = match speeds {
            SpeedPolicy::Snap => cfg.speed_levels[cfg.snap_speed(edge_speed(&scenario, w[0], w[1]))],
            SpeedPolicy::Raw => edge_speed(&scenario, w[0], w[1]),
            SpeedPolicy::Fixed(k) => *cfg
                .speed_levels
                .get(*k)
                .ok_or_else(|| Error::InvalidAction(format!("speed index {k}")))?,
            SpeedPolicy::PerStep(v) => *v.get(i).ok_or_else(|| Error::Config(format!("no speed for step {i}")))?,
        };
        let step = env.step_raw(dir, knots)?;
        out.total_return += step.reward;
        out.steps += 1;
        out.trace.push(step.info.breakdown);
        if step.done() {
            out.complete = step.info.reached_goal;
            break;
        }
    }
    Ok(out)
}

fn edge_speed(scenario: &Scenario, a: CellId, b: CellId) -> f64 {
    scenario.graph.edge(a, b).map_or(0.0, |e| e.mean_speed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Baseline {
    Greedy,
    Dijkstra,
    AStar,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::Greedy, Baseline::Dijkstra, Baseline::AStar];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Greedy => "greedy",
            Baseline::Dijkstra => "dijkstra",
            Baseline::AStar => "astar",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == s)
    }

    /// Greedy gets the environment's horizon as its step budget.
    pub fn plan(self, graph: &TrafficGraph, task: Task, max_steps: usize) -> Result<PlannedRoute> {
        match self {
            Baseline::Greedy => greedy_route(graph, task, max_steps),
            Baseline::Dijkstra => dijkstra_route(graph, task).map(|o| o.path.into()),
            Baseline::AStar => astar_route(graph, task).map(|o| o.path.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub task_id: usize,
    pub method: String,
    pub total_return: f64,
    pub steps: usize,
    pub complete: bool,
    pub route: Vec<CellId>,
}

/// Plans and replays every baseline on every task.
pub fn run_baselines(
    scenario: Arc<Scenario>,
    cfg: &EnvConfig,
    tasks: &[Task],
    speeds: &SpeedPolicy,
    episode_seed: u64,
) -> Result<Vec<BaselineRow>> {
    let mut rows = Vec::new();
    for (task_id, task) in tasks.iter().enumerate() {
        let d = scenario.graph.hop_distance(task.start, task.goal)? as usize;
        for b in Baseline::ALL {
            let plan = b.plan(&scenario.graph, *task, cfg.horizon_factor * d)?;
            let r = replay_score(scenario.clone(), cfg, *task, &plan.cells, speeds, episode_seed)?;
            rows.push(BaselineRow {
                task_id,
                method: b.name().to_string(),
                total_return: r.total_return,
                steps: r.steps,
                complete: plan.complete && r.complete,
                route: plan.cells,
            });
        }
    }
    Ok(rows)
}

/// Writes `task_id,method,return,steps,complete`.
pub fn write_baseline_csv<W: Write>(writer: W, rows: &[BaselineRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["task_id", "method", "return", "steps", "complete"])?;
    for r in rows {
        w.write_record(&[
            r.task_id.to_string(),
            r.method.clone(),
            r.total_return.to_string(),
            r.steps.to_string(),
            r.complete.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
