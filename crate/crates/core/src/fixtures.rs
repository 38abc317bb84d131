//! Bundled synthetic worlds for tests, demos and the acceptance suite.
//!
//! "gulf-mini" is a ~200-cell study area with three traffic corridors, each
//! traversed in both directions (six tasks). The middle corridor splits
//! around a U-shaped island into a busy, fast northern channel and a sparse,
//! slow, storm-exposed southern one. Short anchorage spurs near every
//! corridor end are dead ends for a non-backtracking agent.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Scenario, Task};
use crate::error::Result;
use crate::geo::{initial_heading, KMH_PER_KNOT};
use crate::hexworld::{build_world, BBox, CellId, Direction, LandMask, LandPolygon, WorldGrid, DEFAULT_CELL_SIZE_KM};
use crate::traffic::{build_graph, GraphBuilder, TrafficGraph, Trajectory, TrajectoryPoint, DEFAULT_RELIABILITY_LAMBDA};
use crate::wind::{hourly, synth_wind, WindField};
use crate::GeoCoord;

/// lon_min, lat_min, lon_max, lat_max
pub const GULF_MINI_BBOX: [f64; 4] = [-64.9, 47.3, -63.4, 48.0];
/// 2024-08-01T00:00Z in hours since the epoch.
pub const AUGUST_2024_START_HOUR: i64 = 478_464;
pub const AUGUST_HOURS: usize = 31 * 24;
pub const GULF_MINI_WIND_SEED: u64 = 2024;
/// Added to the wind speed over the southern island channel, m/s.
pub const STORM_BOOST: f64 = 8.0;

/// Lattice cells on the straight line from `a` to `b`, both included.
pub fn hex_line(a: CellId, b: CellId) -> Vec<CellId> {
    let n = a.lattice_distance(b);
    if n == 0 {
        return vec![a];
    }
    let (aq, ar, bq, br) = (a.q as f64, a.r as f64, b.q as f64, b.r as f64);
    (0..=n)
        .map(|i| {
            // nudge off exact ties so rounding is consistent
            let t = i as f64 / n as f64;
            let q = aq + (bq - aq) * t + 1e-6;
            let r = ar + (br - ar) * t + 1e-6;
            cube_round(q, r)
        })
        .collect()
}

fn cube_round(q: f64, r: f64) -> CellId {
    let s = -q - r;
    let (mut rq, mut rr, rs) = (q.round(), r.round(), s.round());
    let (dq, dr, ds) = ((rq - q).abs(), (rr - r).abs(), (rs - s).abs());
    if dq > dr && dq > ds {
        rq = -rr - rs;
    } else if dr > ds {
        rr = -rq - rs;
    }
    CellId::new(rq as i32, rr as i32)
}

/// Concatenated hex lines through consecutive waypoints.
pub fn polyline(waypoints: &[CellId]) -> Vec<CellId> {
    let mut out = vec![waypoints[0]];
    for w in waypoints.windows(2) {
        out.extend(hex_line(w[0], w[1]).into_iter().skip(1));
    }
    out
}

/// Mirror image across the lattice's east-west axis.
pub fn mirror(c: CellId) -> CellId {
    CellId::new(c.q + c.r, -c.r)
}

const fn c(q: i32, r: i32) -> CellId {
    CellId::new(q, r)
}

/// Shared western and eastern legs of the island corridor.
const ISLAND_WEST: [CellId; 2] = [c(-8, 0), c(-4, 0)];
const ISLAND_EAST: [CellId; 2] = [c(4, 0), c(8, 0)];
/// Waypoints of the northern channel between the legs; the southern channel
/// is its mirror image.
const NORTH_CHANNEL: [CellId; 4] = [c(-4, 0), c(-4, 2), c(2, 2), c(4, 0)];
const NORTH_CORRIDOR: [CellId; 4] = [c(-10, 5), c(-6, 5), c(-3, 4), c(2, 4)];
const NORTH_CORRIDOR_END: CellId = c(5, 5);

/// Geometry, traffic and tasks of the bundled world.
#[derive(Debug, Clone)]
pub struct GulfMiniLayout {
    pub land: Vec<CellId>,
    pub island_north: Vec<CellId>,
    pub island_south: Vec<CellId>,
    pub north: Vec<CellId>,
    pub south: Vec<CellId>,
    pub connector: Vec<CellId>,
    /// (attachment cell, spur cells outward)
    pub spurs: Vec<(CellId, Vec<CellId>)>,
}

impl GulfMiniLayout {
    pub fn new() -> Self {
        let island = |channel: &[CellId]| {
            let mut p = polyline(&ISLAND_WEST);
            p.extend(polyline(channel).into_iter().skip(1));
            p.extend(polyline(&ISLAND_EAST).into_iter().skip(1));
            p
        };
        let island_north = island(&NORTH_CHANNEL);
        let south_channel: Vec<CellId> = NORTH_CHANNEL.iter().map(|x| mirror(*x)).collect();
        let island_south = island(&south_channel);
        let mut nw = NORTH_CORRIDOR.to_vec();
        nw.push(NORTH_CORRIDOR_END);
        let north = polyline(&nw);
        let south: Vec<CellId> = north.iter().map(|x| mirror(*x)).collect();
        let connector = polyline(&[c(-9, 5), c(-6, 0), mirror(c(-9, 5))]);

        let mut land = Vec::new();
        for q in -2..=2 {
            land.push(c(q, 1));
        }
        for q in -1..=3 {
            land.push(c(q, -1));
        }
        land.extend([c(1, 0), c(2, 0)]);

        let mut spurs = vec![
            (c(-7, 0), vec![c(-8, 1), c(-9, 2)]),
            (c(7, 0), vec![c(8, -1), c(9, -2)]),
        ];
        for (attach, cells) in [(c(-9, 5), [c(-9, 6), c(-10, 6)]), (c(4, 5), [c(4, 6), c(3, 6)])] {
            spurs.push((attach, cells.to_vec()));
            spurs.push((mirror(attach), cells.iter().map(|x| mirror(*x)).collect()));
        }
        Self { land, island_north, island_south, north, south, connector, spurs }
    }

    pub fn tasks(&self) -> Vec<Task> {
        let ends = |p: &[CellId]| Task::new(p[0], p[p.len() - 1]);
        let a = ends(&self.island_north);
        let b = ends(&self.north);
        let s = ends(&self.south);
        vec![a, a.reversed(), b, b.reversed(), s, s.reversed()]
    }

    /// Cells of the storm-exposed southern channel (excluding shared legs).
    pub fn storm_cells(&self) -> BTreeSet<CellId> {
        let shared: BTreeSet<CellId> = self.island_north.iter().copied().collect();
        self.island_south.iter().copied().filter(|x| !shared.contains(x)).collect()
    }
}

impl Default for GulfMiniLayout {
    fn default() -> Self {
        Self::new()
    }
}

/// Small hexagons (in lon/lat) around the given lattice cells.
pub fn cell_polygons(lattice: &WorldGrid, cells: &[CellId]) -> Vec<LandPolygon> {
    let circum_km = 0.5 * lattice.cell_size_km();
    cells
        .iter()
        .map(|cell| {
            let ctr = lattice.lattice_center(*cell);
            let km_lat = crate::geo::EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
            let km_lon = km_lat * ctr.lat.to_radians().cos();
            let ring = (0..6)
                .map(|k| {
                    let a = std::f64::consts::PI / 3.0 * k as f64 + std::f64::consts::PI / 6.0;
                    (ctr.lon + circum_km * a.cos() / km_lon, ctr.lat + circum_km * a.sin() / km_lat)
                })
                .collect();
            LandPolygon::new(ring)
        })
        .collect()
}

pub fn gulf_mini_bbox() -> BBox {
    let [a, b, c, d] = GULF_MINI_BBOX;
    BBox::new(a, b, c, d).expect("valid fixture bbox")
}

pub fn gulf_mini_land_mask(layout: &GulfMiniLayout) -> LandMask {
    let open = build_world(gulf_mini_bbox(), DEFAULT_CELL_SIZE_KM, &LandMask::AllWater).expect("open water");
    LandMask::Polygons(cell_polygons(&open, &layout.land))
}

pub fn gulf_mini_world(layout: &GulfMiniLayout) -> WorldGrid {
    build_world(gulf_mini_bbox(), DEFAULT_CELL_SIZE_KM, &gulf_mini_land_mask(layout)).expect("fixture world")
}

/// Trajectory sampled every `interval_s` along straight legs between the
/// centres of consecutive cells.
pub fn track_through_cells(
    id: &str,
    grid: &WorldGrid,
    cells: &[CellId],
    sog: f64,
    t0: f64,
    interval_s: f64,
) -> Result<Trajectory> {
    let mut points = Vec::new();
    let mut t = t0;
    for w in cells.windows(2) {
        let (a, b) = (grid.center(w[0])?, grid.center(w[1])?);
        let km = crate::geo::haversine(a, b);
        let secs = km / (sog * KMH_PER_KNOT) * 3600.0;
        let heading = initial_heading(a, b);
        let cog = (90.0 - heading.to_degrees()).rem_euclid(360.0);
        let n = (secs / interval_s).ceil().max(1.0) as usize;
        for k in 0..n {
            let f = k as f64 / n as f64;
            let pos = GeoCoord::new(a.lat + (b.lat - a.lat) * f, a.lon + (b.lon - a.lon) * f);
            points.push(TrajectoryPoint { t, pos, sog, cog });
            t += secs / n as f64;
        }
    }
    let last = grid.center(cells[cells.len() - 1])?;
    let cog = points.last().map_or(0.0, |p| p.cog);
    points.push(TrajectoryPoint { t, pos: last, sog, cog });
    Trajectory::new(id, points)
}

/// Replaces some hops `a -> b` with `a -> x -> b` through a shared neighbour.
fn with_detours(grid: &WorldGrid, path: &[CellId], avoid: &BTreeSet<CellId>, p: f64, rng: &mut ChaCha8Rng) -> Vec<CellId> {
    let mut out = vec![path[0]];
    for (i, w) in path.windows(2).enumerate() {
        // keep both ends of the corridor clean
        if i > 1 && i + 3 < path.len() && rng.gen_bool(p) {
            let mut shared: Vec<CellId> = Direction::ALL
                .iter()
                .map(|d| w[0].step(*d))
                .filter(|x| x.is_adjacent(w[1]) && grid.contains(*x) && !avoid.contains(x) && !path.contains(x))
                .collect();
            shared.sort();
            if let Some(x) = shared.choose(rng) {
                out.push(*x);
            }
        }
        out.push(w[1]);
    }
    out
}

/// Synthetic AIS traffic of the bundled world.
pub fn gulf_mini_trajectories(grid: &WorldGrid, layout: &GulfMiniLayout, seed: u64) -> Result<Vec<Trajectory>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut avoid: BTreeSet<CellId> = layout.storm_cells();
    for (_, s) in &layout.spurs {
        avoid.extend(s.iter().copied());
    }
    avoid.extend(layout.connector.iter().copied());
    let mut out = Vec::new();
    let mut t0 = 1_709_251_200.0; // 2024-03-01
    let mut push = |id: String, cells: &[CellId], sog: f64, out: &mut Vec<Trajectory>| -> Result<()> {
        out.push(track_through_cells(&id, grid, cells, sog, t0, 60.0)?);
        t0 += 7_200.0;
        Ok(())
    };
    for (name, path, vessels) in [("island", &layout.island_north, 10), ("north", &layout.north, 8), ("south", &layout.south, 8)] {
        for k in 0..vessels {
            for (dir, p) in [("e", path.clone()), ("w", path.iter().rev().copied().collect::<Vec<_>>())] {
                let cells = with_detours(grid, &p, &avoid, 0.12, &mut rng);
                let sog = rng.gen_range(12.0..16.0);
                push(format!("{name}-{dir}-{k}"), &cells, sog, &mut out)?;
            }
        }
    }
    let south = &layout.island_south;
    let rev: Vec<CellId> = south.iter().rev().copied().collect();
    push("storm-e-0".into(), south, rng.gen_range(7.5..9.0), &mut out)?;
    push("storm-w-0".into(), &rev, rng.gen_range(7.5..9.0), &mut out)?;
    let rev: Vec<CellId> = layout.connector.iter().rev().copied().collect();
    push("link-s-0".into(), &layout.connector, 10.0, &mut out)?;
    push("link-n-0".into(), &rev, 10.0, &mut out)?;
    for (i, (attach, spur)) in layout.spurs.iter().enumerate() {
        let mut visit = vec![*attach];
        visit.extend(spur.iter().copied());
        visit.extend(spur.iter().rev().skip(1).copied());
        visit.push(*attach);
        for k in 0..2 {
            push(format!("anchorage-{i}-{k}"), &visit, rng.gen_range(6.0..9.0), &mut out)?;
        }
    }
    Ok(out)
}

/// August-2024 hourly wind: smooth synthetic field plus a storm over the
/// southern island channel.
pub fn gulf_mini_wind(grid: &WorldGrid, layout: &GulfMiniLayout, seed: u64) -> Result<WindField> {
    let base = synth_wind(grid, &hourly(AUGUST_2024_START_HOUR, AUGUST_HOURS), seed, 6.0, 3.5)?;
    let storm = layout.storm_cells();
    WindField::from_fn(grid, base.hours(), |h, cell| {
        let s = base.sample(cell, h as f64).expect("covered");
        if !storm.contains(&cell) {
            return (s.u, s.v);
        }
        if s.speed == 0.0 {
            return (STORM_BOOST, 0.0);
        }
        let k = (s.speed + STORM_BOOST) / s.speed;
        (s.u * k, s.v * k)
    })
}

/// Everything needed to run the bundled world.
#[derive(Debug, Clone)]
pub struct GulfMini {
    pub layout: GulfMiniLayout,
    pub scenario: Arc<Scenario>,
    pub trajectories: Vec<Trajectory>,
    pub tasks: Vec<Task>,
}

impl GulfMini {
    /// The task whose route must pass the U-shaped island.
    pub fn u_task(&self) -> Task {
        self.tasks[0]
    }
}

pub fn gulf_mini() -> GulfMini {
    let layout = GulfMiniLayout::new();
    let grid = gulf_mini_world(&layout);
    let trajectories = gulf_mini_trajectories(&grid, &layout, 7).expect("fixture trajectories");
    let (graph, _) = build_graph(&grid, &trajectories, DEFAULT_RELIABILITY_LAMBDA).expect("fixture graph");
    let wind = gulf_mini_wind(&grid, &layout, GULF_MINI_WIND_SEED).expect("fixture wind");
    let tasks = layout.tasks();
    let scenario = Arc::new(Scenario::new(grid, graph, wind).expect("fixture scenario"));
    GulfMini { layout, scenario, trajectories, tasks }
}

/// Grid for random-graph tests: open water around the origin.
pub fn open_water_grid() -> WorldGrid {
    build_world(BBox::new(-62.6, 46.9, -61.4, 47.7).expect("bbox"), DEFAULT_CELL_SIZE_KM, &LandMask::AllWater).expect("grid")
}

/// Random graph grown from the origin cell by random adjacent transitions,
/// some of them one-way.
pub fn random_traffic_graph(grid: &WorldGrid, seed: u64, n_nodes: usize, lambda: f64) -> TrafficGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut builder = GraphBuilder::new(grid);
    let mut visited = vec![CellId::new(0, 0)];
    let mut extra = 0;
    while visited.len() < n_nodes || extra < n_nodes / 3 {
        let from = *visited.choose(&mut rng).expect("non-empty");
        let to = from.step(Direction::ALL[rng.gen_range(0..6)]);
        if !grid.contains(to) {
            continue;
        }
        let known = visited.contains(&to);
        if known == (visited.len() < n_nodes) {
            continue;
        }
        if known {
            extra += 1;
        }
        for _ in 0..rng.gen_range(1..4) {
            builder.add_transition(from, to, rng.gen_range(4.0..20.0));
        }
        if rng.gen_bool(0.5) {
            builder.add_transition(to, from, rng.gen_range(4.0..20.0));
        }
        if !visited.contains(&to) {
            visited.push(to);
        }
    }
    builder.finish(lambda).expect("random graph")
}
