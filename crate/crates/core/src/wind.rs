//! Time-indexed 10 m wind field over the grid cells.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hexworld::{CellId, WorldGrid};
use crate::scalar::Real;

/// Wind vector with derived magnitude and flow direction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindSample<T = f64> {
    /// Eastward component, m/s.
    pub u: T,
    /// Northward component, m/s.
    pub v: T,
    pub speed: T,
    /// `atan2(v, u)` in [-pi, pi]; zero for a calm vector.
    pub direction: T,
}

impl<T: Real> WindSample<T> {
    pub fn from_components(u: T, v: T) -> Self {
        let speed = u.hypot(v);
        let direction = if u == T::zero() && v == T::zero() { T::zero() } else { v.atan2(u) };
        Self { u, v, speed, direction }
    }

    pub fn calm() -> Self {
        Self::from_components(T::zero(), T::zero())
    }
}

/// Hourly wind vectors for every water cell. Times are whole UTC hours since
/// the Unix epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct WindField {
    hours: Vec<i64>,
    cells: Vec<CellId>,
    index: HashMap<CellId, usize>,
    // time-major: uv[t * cells.len() + cell]
    uv: Vec<(f64, f64)>,
}

pub fn hour_from_datetime(dt: DateTime<Utc>) -> i64 {
    dt.timestamp().div_euclid(3600)
}

pub fn hour_to_iso(hour: i64) -> String {
    DateTime::<Utc>::from_timestamp(hour * 3600, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| hour.to_string())
}

pub fn parse_hour(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp().div_euclid(3600));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp().div_euclid(3600));
        }
    }
    Err(Error::Parse(format!("unrecognized hour {s:?}")))
}

/// `n` consecutive hours starting at `first`.
pub fn hourly(first: i64, n: usize) -> Vec<i64> {
    (0..n as i64).map(|i| first + i).collect()
}

impl WindField {
    /// Builds a field from a per-(hour, cell) generator.
    pub fn from_fn(grid: &WorldGrid, hours: &[i64], mut f: impl FnMut(i64, CellId) -> (f64, f64)) -> Result<Self> {
        let hours = sorted_hours(hours)?;
        let cells: Vec<CellId> = grid.cells().collect();
        let mut uv = Vec::with_capacity(hours.len() * cells.len());
        for &h in &hours {
            for &c in &cells {
                let (u, v) = f(h, c);
                if !(u.is_finite() && v.is_finite()) {
                    return Err(Error::Config(format!("non-finite wind at hour {h}, cell {c:?}")));
                }
                uv.push((u, v));
            }
        }
        let index = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        Ok(Self { hours, cells, index, uv })
    }

    pub fn hours(&self) -> &[i64] {
        &self.hours
    }

    pub fn cells(&self) -> &[CellId] {
        &self.cells
    }

    pub fn first_hour(&self) -> i64 {
        self.hours[0]
    }

    pub fn last_hour(&self) -> i64 {
        self.hours[self.hours.len() - 1]
    }

    /// First available hour of every UTC day in the field.
    pub fn day_starts(&self) -> Vec<i64> {
        let mut seen = BTreeSet::new();
        self.hours.iter().copied().filter(|h| seen.insert(h.div_euclid(24))).collect()
    }

    fn nearest_index(&self, t_hours: f64) -> Result<usize> {
        if !(t_hours >= self.first_hour() as f64 && t_hours <= self.last_hour() as f64) {
            return Err(Error::WindTimeOutOfRange(t_hours));
        }
        let i = self.hours.partition_point(|&h| (h as f64) < t_hours);
        if i == 0 {
            return Ok(0);
        }
        let (lo, hi) = (self.hours[i - 1] as f64, self.hours[i.min(self.hours.len() - 1)] as f64);
        Ok(if (t_hours - lo) <= (hi - t_hours) { i - 1 } else { i.min(self.hours.len() - 1) })
    }

    /// Nearest-hour lookup, no temporal interpolation.
    pub fn sample(&self, cell: CellId, t_hours: f64) -> Result<WindSample> {
        let ci = *self.index.get(&cell).ok_or_else(|| Error::MissingWind(format!("cell ({}, {})", cell.q, cell.r)))?;
        let ti = self.nearest_index(t_hours)?;
        let (u, v) = self.uv[ti * self.cells.len() + ci];
        Ok(WindSample::from_components(u, v))
    }

    /// Writes `hour_iso8601,q,r,u,v` rows, hour-major.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["hour_iso8601", "q", "r", "u", "v"])?;
        for (ti, &h) in self.hours.iter().enumerate() {
            let iso = hour_to_iso(h);
            for (ci, c) in self.cells.iter().enumerate() {
                let (u, v) = self.uv[ti * self.cells.len() + ci];
                w.write_record([iso.clone(), c.q.to_string(), c.r.to_string(), u.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn sorted_hours(hours: &[i64]) -> Result<Vec<i64>> {
    let set: BTreeSet<i64> = hours.iter().copied().collect();
    if set.is_empty() {
        return Err(Error::Config("wind field needs at least one hour".into()));
    }
    Ok(set.into_iter().collect())
}

/// One sinusoidal mode over (lat, lon, hours).
#[derive(Debug, Clone, Copy)]
struct Mode {
    k_lat: f64,
    k_lon: f64,
    omega: f64,
    phase: f64,
    amp: f64,
}

impl Mode {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        // spatial wavelengths of 1.5-6 degrees, periods of 6-48 hours
        let tau = std::f64::consts::TAU;
        let wl = rng.gen_range(1.5..6.0);
        let theta = rng.gen_range(0.0..tau);
        Self {
            k_lat: tau / wl * theta.sin(),
            k_lon: tau / wl * theta.cos(),
            omega: tau / rng.gen_range(6.0..48.0),
            phase: rng.gen_range(0.0..tau),
            amp: rng.gen_range(0.5..1.0),
        }
    }
}

fn blend(modes: &[Mode], lat: f64, lon: f64, t: f64) -> f64 {
    let total: f64 = modes.iter().map(|m| m.amp).sum();
    modes.iter().map(|m| m.amp * (m.k_lat * lat + m.k_lon * lon + m.omega * t + m.phase).sin()).sum::<f64>() / total
}

/// Synthetic smooth wind: magnitude `base_speed + gust_amplitude * g` with
/// `g` in [-1, 1] a blend of low-frequency sinusoids (floored at zero), and a
/// seeded prevailing direction that meanders in proportion to the gust share.
pub fn synth_wind(grid: &WorldGrid, hours: &[i64], seed: u64, base_speed: f64, gust_amplitude: f64) -> Result<WindField> {
    if !(base_speed >= 0.0 && gust_amplitude >= 0.0) {
        return Err(Error::Config("wind speeds must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prevailing = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let speed_modes: Vec<Mode> = (0..3).map(|_| Mode::random(&mut rng)).collect();
    let dir_modes: Vec<Mode> = (0..3).map(|_| Mode::random(&mut rng)).collect();
    let peak = base_speed + gust_amplitude;
    let meander = if peak > 0.0 { gust_amplitude / peak * std::f64::consts::FRAC_PI_2 } else { 0.0 };
    let t0 = hours.iter().copied().min().unwrap_or(0);
    let centers: HashMap<CellId, (f64, f64)> = grid.centers().map(|(c, p)| (c, (p.lat, p.lon))).collect();
    WindField::from_fn(grid, hours, |h, c| {
        let (lat, lon) = centers[&c];
        let t = (h - t0) as f64;
        let speed = if gust_amplitude == 0.0 {
            base_speed
        } else {
            (base_speed + gust_amplitude * blend(&speed_modes, lat, lon, t)).clamp(0.0, peak)
        };
        let dir = prevailing + meander * blend(&dir_modes, lat, lon, t);
        (speed * dir.cos(), speed * dir.sin())
    })
}

/// Reads `hour_iso8601,q,r,u,v` rows. Every water cell of `grid` must be
/// present at every hour listed in the file.
pub fn load_wind<R: Read>(grid: &WorldGrid, reader: R) -> Result<WindField> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows: BTreeMap<(i64, CellId), (f64, f64)> = BTreeMap::new();
    let mut hours = BTreeSet::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(Error::Parse(format!("wind line {}: expected 5 fields", line + 2)));
        }
        let bad = |what: &str| Error::Parse(format!("wind line {}: bad {what}", line + 2));
        let h = parse_hour(&rec[0])?;
        let q = rec[1].parse::<i32>().map_err(|_| bad("q"))?;
        let r = rec[2].parse::<i32>().map_err(|_| bad("r"))?;
        let u = rec[3].parse::<f64>().map_err(|_| bad("u"))?;
        let v = rec[4].parse::<f64>().map_err(|_| bad("v"))?;
        let cell = CellId::new(q, r);
        if !grid.contains(cell) {
            return Err(Error::UnknownCell(cell));
        }
        hours.insert(h);
        rows.insert((h, cell), (u, v));
    }
    let hours: Vec<i64> = hours.into_iter().collect();
    for &h in &hours {
        for c in grid.cells() {
            if !rows.contains_key(&(h, c)) {
                return Err(Error::MissingWind(format!("hour {} cell ({}, {})", hour_to_iso(h), c.q, c.r)));
            }
        }
    }
    WindField::from_fn(grid, &hours, |h, c| rows[&(h, c)])
}
