mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hexnav::env::{route_geojson, write_trace_csv};
use hexnav::fixtures::{gulf_mini, gulf_mini_wind, GulfMiniLayout};
use hexnav::hexworld::LandMask;
use hexnav::planners::{run_baselines, write_baseline_csv, Baseline, BaselineRow, SpeedPolicy};
use hexnav::traffic::{read_trajectories_csv, resample, write_trajectories_csv};
use hexnav::wind::{hourly, parse_hour};
use hexnav::{build_graph, build_world, load_wind, synth_wind, BBox, CellId, Scenario, Task, TaskSet, TrafficGraph, WorldGrid};
use hexnav_learn::trainer::{tail_stats, write_metrics_csv};
use hexnav_learn::{evaluate_policy, Checkpoint, Trainer, Variant};
use serde_json::json;

use config::RunConfig;

/// Hex-lattice vessel routing: world, wind and traffic-graph generation,
/// masked actor-critic training, evaluation and export.
#[derive(Debug, Parser)]
#[command(name = "hexnav", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Hex world grids.
    #[command(subcommand)]
    World(WorldCmd),
    /// Hourly wind fields.
    #[command(subcommand)]
    Wind(WindCmd),
    /// Traffic graphs.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Train a policy variant.
    Train(TrainArgs),
    /// Evaluate a checkpoint and/or baselines on a task set.
    Eval(EvalArgs),
    /// Export bundled data or an episode trace.
    #[command(subcommand)]
    Export(ExportCmd),
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Subcommand)]
enum WorldCmd {
    /// Build a grid over a bounding box, dropping land cells.
    Gen(WorldGenArgs),
}

#[derive(Debug, Args)]
struct WorldGenArgs {
    /// Build the bundled gulf-mini world instead.
    #[arg(long)]
    fixture: bool,
    /// lon_min,lat_min,lon_max,lat_max
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    bbox: Option<Vec<f64>>,
    #[arg(long)]
    cell_km: Option<f64>,
    /// GeoJSON land polygons.
    #[arg(long, conflicts_with = "land_raster")]
    land_geojson: Option<PathBuf>,
    /// CSV `lat,lon,is_water` raster.
    #[arg(long)]
    land_raster: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum WindCmd {
    /// Synthesize an hourly field over a world.
    Synth(WindSynthArgs),
    /// Validate a wind CSV against a world.
    Load(WindLoadArgs),
}

#[derive(Debug, Args)]
struct WindSynthArgs {
    #[arg(long)]
    world: Option<PathBuf>,
    /// Use the gulf-mini storm layout (the world must be gulf-mini).
    #[arg(long)]
    fixture: bool,
    /// First hour, ISO-8601.
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    hours: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    base: Option<f64>,
    #[arg(long)]
    gust: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct WindLoadArgs {
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
}

#[derive(Debug, Subcommand)]
enum GraphCmd {
    /// Build a traffic graph from a trajectory CSV.
    Build(GraphBuildArgs),
}

#[derive(Debug, Args)]
struct GraphBuildArgs {
    #[arg(long)]
    world: Option<PathBuf>,
    /// CSV `vessel_id,timestamp,lat,lon,sog,cog`.
    #[arg(long)]
    trajectories: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Seconds between resampled points; 0 uses the input as is.
    #[arg(long)]
    resample_secs: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    wind: Option<PathBuf>,
    /// CSV `start_q,start_r,goal_q,goal_r`.
    #[arg(long)]
    tasks: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// `masked` or `unmasked`, optionally suffixed with `-history` and/or `-rnd`.
    #[arg(long, default_value = "masked")]
    variant: String,
    /// Drop the progress and frequency reward terms.
    #[arg(long)]
    penalty_only: bool,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// greedy, dijkstra, astar or all.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report CSV.
    #[arg(long)]
    out: PathBuf,
    /// Directory for one GeoJSON route per task and method.
    #[arg(long)]
    routes_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ExportCmd {
    /// Write the gulf-mini world, graph, wind, trajectories and tasks.
    Fixture {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run one greedy episode of a checkpoint and write its trace and route.
    Trace(TraceArgs),
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Row of the task file to run.
    #[arg(long, default_value_t = 0)]
    task_index: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    out_geojson: PathBuf,
}

/// Usage problems exit with 2, everything else with 1.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// The flag value, else the config value; the file must exist.
fn input(flag: &Option<PathBuf>, cfg: &Option<PathBuf>, name: &str) -> Result<PathBuf, Failure> {
    let p = flag.clone().or_else(|| cfg.clone()).ok_or_else(|| usage(format!("missing --{name} (or paths.{name})")))?;
    if !p.is_file() {
        return Err(usage(format!("input file not found: {}", p.display())));
    }
    Ok(p)
}

fn existing(p: &Path) -> Result<&Path, Failure> {
    if p.is_file() {
        Ok(p)
    } else {
        Err(usage(format!("input file not found: {}", p.display())))
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    use std::io::Write;
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn load_world(path: &Path) -> anyhow::Result<WorldGrid> {
    WorldGrid::from_json(&read(path)?).with_context(|| format!("parsing world {}", path.display()))
}

struct Loaded {
    scenario: Arc<Scenario>,
    tasks: TaskSet,
}

fn load_scenario(args: &ScenarioArgs, cfg: &RunConfig) -> Result<Loaded, Failure> {
    let world = input(&args.world, &cfg.paths.world, "world")?;
    let graph = input(&args.graph, &cfg.paths.graph, "graph")?;
    let wind = input(&args.wind, &cfg.paths.wind, "wind")?;
    let tasks = input(&args.tasks, &cfg.paths.tasks, "tasks")?;
    let grid = load_world(&world)?;
    let graph = TrafficGraph::from_json(&read(&graph)?, &grid).with_context(|| format!("parsing graph {}", graph.display()))?;
    let wind = load_wind(&grid, BufReader::new(File::open(&wind).context("opening wind")?))
        .with_context(|| format!("loading wind {}", wind.display()))?;
    let tasks = TaskSet::read_csv(BufReader::new(File::open(&tasks).context("opening tasks")?))
        .with_context(|| format!("loading tasks {}", tasks.display()))?;
    let scenario = Arc::new(Scenario::new(grid, graph, wind).context("assembling scenario")?);
    Ok(Loaded { scenario, tasks })
}

fn cmd_world(a: &WorldGenArgs, cfg: &RunConfig) -> CmdResult {
    let grid = if a.fixture {
        hexnav::fixtures::gulf_mini_world(&GulfMiniLayout::new())
    } else {
        let b = match a.bbox.as_deref() {
            Some(&[a, b, c, d]) => Some([a, b, c, d]),
            Some(v) => return Err(usage(format!("--bbox takes 4 values, got {}", v.len()))),
            None => cfg.world.bbox,
        };
        let b = b.ok_or_else(|| usage("world gen needs --bbox (or world.bbox) or --fixture"))?;
        let bbox = BBox::new(b[0], b[1], b[2], b[3]).map_err(|e| usage(e.to_string()))?;
        let geojson = a.land_geojson.clone().or_else(|| cfg.world.land_geojson.clone());
        let raster = a.land_raster.clone().or_else(|| cfg.world.land_raster.clone());
        let land = match (geojson, raster) {
            (Some(_), Some(_)) => return Err(usage("give either a GeoJSON or a raster land mask, not both")),
            (Some(p), None) => LandMask::from_geojson_str(&read(existing(&p)?)?).context("parsing land GeoJSON")?,
            (None, Some(p)) => LandMask::from_raster_csv(BufReader::new(File::open(existing(&p)?).context("opening raster")?))
                .context("parsing land raster")?,
            (None, None) => LandMask::AllWater,
        };
        build_world(bbox, a.cell_km.unwrap_or(cfg.world.cell_size_km), &land).context("building world")?
    };
    write(&a.out, &grid.to_json().context("serializing world")?)?;
    println!("cells: {}", grid.len());
    Ok(())
}

fn cmd_wind(c: &WindCmd, cfg: &RunConfig) -> CmdResult {
    match c {
        WindCmd::Synth(a) => {
            let world = input(&a.world, &cfg.paths.world, "world")?;
            let grid = load_world(&world)?;
            let w = &cfg.wind;
            let start = parse_hour(a.start.as_deref().unwrap_or(&w.start)).map_err(|e| usage(e.to_string()))?;
            let hours = hourly(start, a.hours.unwrap_or(w.hours));
            let seed = a.seed.unwrap_or(w.seed);
            let field = if a.fixture {
                if a.start.is_some() || a.hours.is_some() || a.base.is_some() || a.gust.is_some() {
                    return Err(usage("--fixture fixes the period and speeds; only --seed applies"));
                }
                gulf_mini_wind(&grid, &GulfMiniLayout::new(), seed).context("synthesizing fixture wind")?
            } else {
                synth_wind(&grid, &hours, seed, a.base.unwrap_or(w.base_speed), a.gust.unwrap_or(w.gust))
                    .context("synthesizing wind")?
            };
            field.write_csv(create(&a.out)?).context("writing wind")?;
            println!("wind hours: {}, cells: {}", field.hours().len(), field.cells().len());
        }
        WindCmd::Load(a) => {
            let world = input(&a.world, &cfg.paths.world, "world")?;
            let grid = load_world(&world)?;
            let field = load_wind(&grid, BufReader::new(File::open(existing(&a.input)?).context("opening wind")?))
                .context("loading wind")?;
            println!(
                "wind hours: {} ({} .. {}), cells: {}",
                field.hours().len(),
                hexnav::wind::hour_to_iso(field.first_hour()),
                hexnav::wind::hour_to_iso(field.last_hour()),
                field.cells().len()
            );
        }
    }
    Ok(())
}

fn cmd_graph(c: &GraphCmd, cfg: &RunConfig) -> CmdResult {
    let GraphCmd::Build(a) = c;
    let world = input(&a.world, &cfg.paths.world, "world")?;
    let traj = input(&a.trajectories, &cfg.paths.trajectories, "trajectories")?;
    let grid = load_world(&world)?;
    let trajectories =
        read_trajectories_csv(BufReader::new(File::open(&traj).context("opening trajectories")?)).context("parsing trajectories")?;
    let interval = a.resample_secs.unwrap_or(cfg.graph.resample_secs);
    if !(interval >= 0.0 && interval.is_finite()) {
        return Err(usage(format!("resample interval must be >= 0, got {interval}")));
    }
    let mut dropped = 0;
    let trajectories: Vec<_> = if interval > 0.0 {
        trajectories
            .iter()
            .filter_map(|t| resample(t, interval).map_err(|_| dropped += 1).ok())
            .collect()
    } else {
        trajectories
    };
    let (graph, report) = build_graph(&grid, &trajectories, a.lambda.unwrap_or(cfg.graph.lambda)).context("building graph")?;
    write(&a.out, &graph.to_json().context("serializing graph")?)?;
    println!(
        "trajectories: {} (dropped {dropped}), transitions: {}, gaps: {}, nodes: {}, edges: {}",
        report.trajectories,
        report.transitions,
        report.gaps,
        graph.node_count(),
        graph.edge_count()
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs, cfg: &RunConfig) -> CmdResult {
    let variant = Variant::parse(&a.variant).ok_or_else(|| usage(format!("unknown variant {:?}", a.variant)))?;
    let out_dir = a.out_dir.clone().or_else(|| cfg.paths.out_dir.clone()).ok_or_else(|| usage("missing --out-dir (or paths.out_dir)"))?;
    let loaded = load_scenario(&a.scenario, cfg)?;
    let mut env_cfg = cfg.env.clone();
    env_cfg.penalty_only |= a.penalty_only;
    let mut train_cfg = cfg.train.clone();
    if let Some(s) = a.steps {
        train_cfg.total_steps = s;
    }
    if let Some(s) = a.seed {
        train_cfg.seed = s;
    }
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut trainer = Trainer::<f64>::new(loaded.scenario, env_cfg, loaded.tasks, train_cfg, variant).context("setting up training")?;
    let ckpt_dir = out_dir.clone();
    let result = trainer.run(|c| c.save(ckpt_dir.join(format!("checkpoint-{}.json", c.global_step))));
    write_metrics_csv(create(&out_dir.join("metrics.csv"))?, trainer.episodes()).context("writing metrics")?;
    if let Err(e) = result {
        return Err(anyhow::Error::new(e).context("training aborted; last good checkpoint written").into());
    }
    trainer.checkpoint().save(out_dir.join("checkpoint.json")).context("writing checkpoint")?;
    let s = tail_stats(trainer.episodes(), 100);
    println!(
        "variant: {}, steps: {}, episodes: {}, last-{} mean return: {:.3}, completion: {:.1}%",
        variant.name(),
        trainer.global_step(),
        trainer.episodes().len(),
        s.episodes,
        s.mean_return,
        100.0 * s.completion_rate
    );
    Ok(())
}

fn write_route(dir: &Path, grid: &WorldGrid, task_id: usize, method: &str, route: &[CellId], ret: f64) -> anyhow::Result<()> {
    let props = json!({ "task_id": task_id, "method": method, "return": ret, "hops": route.len().saturating_sub(1) });
    let serde_json::Value::Object(props) = props else { unreachable!("object literal") };
    let text = route_geojson(grid, route, props)?;
    write(&dir.join(format!("task{task_id}-{method}.geojson")), &text)
}

fn cmd_eval(a: &EvalArgs, cfg: &RunConfig) -> CmdResult {
    if a.checkpoint.is_none() && a.baseline.is_none() {
        return Err(usage("eval needs --checkpoint and/or --baseline"));
    }
    let baselines: Vec<Baseline> = match a.baseline.as_deref() {
        None => Vec::new(),
        Some("all") => Baseline::ALL.to_vec(),
        Some(name) => vec![Baseline::parse(name).ok_or_else(|| usage(format!("unknown baseline {name:?}")))?],
    };
    let ckpt = match &a.checkpoint {
        Some(p) => Some(Checkpoint::<f64>::load(existing(p)?).context("loading checkpoint")?),
        None => None,
    };
    let loaded = load_scenario(&a.scenario, cfg)?;
    let tasks = loaded.tasks.tasks();
    let seed = a.seed.unwrap_or(cfg.eval.seed);
    let env_cfg = ckpt.as_ref().map_or_else(|| cfg.env.clone(), |c| c.env_config.clone());
    let mut rows: Vec<BaselineRow> = Vec::new();
    if let Some(ck) = &ckpt {
        let report = evaluate_policy(ck, loaded.scenario.clone(), tasks, a.episodes.unwrap_or(cfg.eval.episodes), seed)
            .context("evaluating checkpoint")?;
        for t in &report.per_task {
            rows.push(BaselineRow {
                task_id: t.task_id,
                method: ck.variant.name(),
                total_return: t.mean,
                steps: t.route.len().saturating_sub(1),
                complete: t.completion_rate == 1.0,
                route: t.route.clone(),
            });
        }
        println!("agent {}: mean return {:.3} +- {:.3}", ck.variant.name(), report.mean, report.std);
    }
    if !baselines.is_empty() {
        let all = run_baselines(loaded.scenario.clone(), &env_cfg, tasks, &SpeedPolicy::Snap, seed).context("running baselines")?;
        rows.extend(all.into_iter().filter(|r| baselines.iter().any(|b| b.name() == r.method)));
    }
    write_baseline_csv(create(&a.out)?, &rows).context("writing report")?;
    if let Some(dir) = &a.routes_dir {
        for r in &rows {
            write_route(dir, &loaded.scenario.grid, r.task_id, &r.method, &r.route, r.total_return)?;
        }
    }
    for r in &rows {
        println!("task {} {}: return {:.3}, steps {}, complete {}", r.task_id, r.method, r.total_return, r.steps, r.complete);
    }
    Ok(())
}

fn cmd_export(c: &ExportCmd, cfg: &RunConfig) -> CmdResult {
    match c {
        ExportCmd::Fixture { out_dir } => {
            let g = gulf_mini();
            let sc = &g.scenario;
            write(&out_dir.join("world.json"), &sc.grid.to_json().context("serializing world")?)?;
            write(&out_dir.join("graph.json"), &sc.graph.to_json().context("serializing graph")?)?;
            sc.wind.write_csv(create(&out_dir.join("wind.csv"))?).context("writing wind")?;
            write_trajectories_csv(create(&out_dir.join("trajectories.csv"))?, &g.trajectories).context("writing trajectories")?;
            let tasks = TaskSet::new(g.tasks.clone()).context("building task set")?;
            tasks.write_csv(create(&out_dir.join("tasks.csv"))?).context("writing tasks")?;
            println!(
                "cells: {}, nodes: {}, edges: {}, wind hours: {}, trajectories: {}, tasks: {}",
                sc.grid.len(),
                sc.graph.node_count(),
                sc.graph.edge_count(),
                sc.wind.hours().len(),
                g.trajectories.len(),
                g.tasks.len()
            );
        }
        ExportCmd::Trace(a) => {
            let ck = Checkpoint::<f64>::load(existing(&a.checkpoint)?).context("loading checkpoint")?;
            let loaded = load_scenario(&a.scenario, cfg)?;
            let task: Task = loaded
                .tasks
                .get(a.task_index)
                .ok_or_else(|| usage(format!("task index {} out of range ({} tasks)", a.task_index, loaded.tasks.len())))?;
            let report = evaluate_policy(&ck, loaded.scenario.clone(), &[task], 1, a.seed).context("running episode")?;
            let t = &report.per_task[0];
            write_trace_csv(create(&a.out_csv)?, &t.trace).context("writing trace")?;
            let props = json!({ "task_index": a.task_index, "method": ck.variant.name(), "return": t.mean });
            let serde_json::Value::Object(props) = props else { unreachable!("object literal") };
            write(&a.out_geojson, &route_geojson(&loaded.scenario.grid, &t.route, props).context("route GeoJSON")?)?;
            println!("steps: {}, return: {:.3}, reached goal: {}", t.trace.len(), t.mean, t.completion_rate == 1.0);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(existing(p)?).map_err(usage)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::World(WorldCmd::Gen(a)) => cmd_world(a, &cfg),
        Command::Wind(c) => cmd_wind(c, &cfg),
        Command::Graph(c) => cmd_graph(c, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Export(c) => cmd_export(c, &cfg),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
