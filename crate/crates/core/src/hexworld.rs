//! Hexagonal lattice over a geographic bounding box.
//!
//! Cells use axial `(q, r)` coordinates on a pointy-top planar lattice. The
//! plane is mapped to latitude/longitude with an equirectangular projection
//! anchored at the bounding-box centre, so neighbouring centres are one
//! `cell_size_km` apart up to the projection's distortion away from the
//! anchor latitude.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine, GeoCoord, EARTH_RADIUS_KM};

/// Default centre-to-centre spacing, roughly the area of a 36 km^2 hexagon.
pub const DEFAULT_CELL_SIZE_KM: f64 = 6.5;

/// Axial hex coordinate. Ordering is lexicographic on `(q, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub q: i32,
    pub r: i32,
}

impl CellId {
    pub const fn new(q: i32, r: i32) -> Self {
        Self { q, r }
    }

    pub fn step(self, dir: Direction) -> Self {
        let (dq, dr) = dir.offset();
        Self::new(self.q + dq, self.r + dr)
    }

    /// Direction from `self` to `other` when the two are lattice neighbours.
    pub fn direction_to(self, other: CellId) -> Option<Direction> {
        let d = (other.q - self.q, other.r - self.r);
        Direction::ALL.into_iter().find(|dir| dir.offset() == d)
    }

    pub fn is_adjacent(self, other: CellId) -> bool {
        self.direction_to(other).is_some()
    }

    /// Lattice (hex) distance ignoring land.
    pub fn lattice_distance(self, other: CellId) -> u32 {
        let dq = other.q - self.q;
        let dr = other.r - self.r;
        ((dq.abs() + dr.abs() + (dq + dr).abs()) / 2) as u32
    }
}

/// One of the six axial directions. The discriminant is the maneuver index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    East = 0,
    SouthEast = 1,
    SouthWest = 2,
    West = 3,
    NorthWest = 4,
    NorthEast = 5,
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::East,
        Direction::SouthEast,
        Direction::SouthWest,
        Direction::West,
        Direction::NorthWest,
        Direction::NorthEast,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn offset(self) -> (i32, i32) {
        match self {
            Direction::East => (1, 0),
            Direction::SouthEast => (1, -1),
            Direction::SouthWest => (0, -1),
            Direction::West => (-1, 0),
            Direction::NorthWest => (-1, 1),
            Direction::NorthEast => (0, 1),
        }
    }

    pub fn opposite(self) -> Self {
        Self::ALL[(self.index() + 3) % 6]
    }
}

/// Neighbour slots indexed by direction; `None` where the lattice neighbour
/// is land or outside the bounding box.
pub type Neighbors = [Option<CellId>; 6];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lon_min: f64,
    pub lat_min: f64,
    pub lon_max: f64,
    pub lat_max: f64,
}

impl BBox {
    pub fn new(lon_min: f64, lat_min: f64, lon_max: f64, lat_max: f64) -> Result<Self> {
        let b = Self { lon_min, lat_min, lon_max, lat_max };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.lon_min, self.lat_min, self.lon_max, self.lat_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.lon_min >= self.lon_max || self.lat_min >= self.lat_max {
            return Err(Error::InvalidBbox(format!("{self:?} is not well-ordered")));
        }
        if self.lat_min < -90.0 || self.lat_max > 90.0 || self.lon_min < -180.0 || self.lon_max > 180.0 {
            return Err(Error::InvalidBbox(format!("{self:?} exceeds coordinate limits")));
        }
        Ok(())
    }

    pub fn contains(&self, p: GeoCoord) -> bool {
        (self.lat_min..=self.lat_max).contains(&p.lat) && (self.lon_min..=self.lon_max).contains(&p.lon)
    }

    pub fn center(&self) -> GeoCoord {
        GeoCoord::new(
            0.5 * (self.lat_min + self.lat_max),
            0.5 * (self.lon_min + self.lon_max),
        )
    }
}

/// Local equirectangular projection plus the axial lattice embedding.
#[derive(Debug, Clone, Copy)]
struct Lattice {
    anchor: GeoCoord,
    km_per_deg_lat: f64,
    km_per_deg_lon: f64,
    spacing: f64,
}

impl Lattice {
    fn new(anchor: GeoCoord, spacing: f64) -> Self {
        let km_per_deg_lat = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        Self {
            anchor,
            km_per_deg_lat,
            km_per_deg_lon: km_per_deg_lat * anchor.lat.to_radians().cos(),
            spacing,
        }
    }

    fn project(&self, p: GeoCoord) -> (f64, f64) {
        (
            (p.lon - self.anchor.lon) * self.km_per_deg_lon,
            (p.lat - self.anchor.lat) * self.km_per_deg_lat,
        )
    }

    fn unproject(&self, x: f64, y: f64) -> GeoCoord {
        GeoCoord::new(
            self.anchor.lat + y / self.km_per_deg_lat,
            self.anchor.lon + x / self.km_per_deg_lon,
        )
    }

    fn center(&self, c: CellId) -> GeoCoord {
        let x = self.spacing * (c.q as f64 + 0.5 * c.r as f64);
        let y = self.spacing * (3f64.sqrt() / 2.0) * c.r as f64;
        self.unproject(x, y)
    }

    fn fractional(&self, p: GeoCoord) -> (f64, f64) {
        let (x, y) = self.project(p);
        let r = y / (self.spacing * 3f64.sqrt() / 2.0);
        let q = x / self.spacing - 0.5 * r;
        (q, r)
    }

    fn round(&self, p: GeoCoord) -> CellId {
        let (q, r) = self.fractional(p);
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
}

/// Polygon in lon/lat degrees: exterior ring plus optional holes.
#[derive(Debug, Clone, PartialEq)]
pub struct LandPolygon {
    pub exterior: Vec<(f64, f64)>,
    pub holes: Vec<Vec<(f64, f64)>>,
}

impl LandPolygon {
    pub fn new(exterior: Vec<(f64, f64)>) -> Self {
        Self { exterior, holes: Vec::new() }
    }

    pub fn contains(&self, p: GeoCoord) -> bool {
        ring_contains(&self.exterior, p) && !self.holes.iter().any(|h| ring_contains(h, p))
    }
}

fn ring_contains(ring: &[(f64, f64)], p: GeoCoord) -> bool {
    let (x, y) = (p.lon, p.lat);
    let mut inside = false;
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = ring[i];
        let (xj, yj) = ring[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Sampled water/land raster; a location takes the value of its nearest sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterRaster {
    points: Vec<(GeoCoord, bool)>,
}

impl WaterRaster {
    pub fn new(points: Vec<(GeoCoord, bool)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Parse("empty water raster".into()));
        }
        Ok(Self { points })
    }

    pub fn is_water(&self, p: GeoCoord) -> bool {
        let cos_lat = p.lat.to_radians().cos();
        self.points
            .iter()
            .min_by(|(a, _), (b, _)| {
                let da = (a.lat - p.lat).powi(2) + ((a.lon - p.lon) * cos_lat).powi(2);
                let db = (b.lat - p.lat).powi(2) + ((b.lon - p.lon) * cos_lat).powi(2);
                da.total_cmp(&db)
            })
            .map(|(_, w)| *w)
            .unwrap_or(false)
    }
}

/// Which lattice positions are navigable. A cell is water iff its centre is.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum LandMask {
    #[default]
    AllWater,
    /// Land polygons.
    Polygons(Vec<LandPolygon>),
    Raster(WaterRaster),
}

impl LandMask {
    pub fn is_water(&self, p: GeoCoord) -> bool {
        match self {
            LandMask::AllWater => true,
            LandMask::Polygons(polys) => !polys.iter().any(|poly| poly.contains(p)),
            LandMask::Raster(raster) => raster.is_water(p),
        }
    }

    /// Reads land polygons from a GeoJSON document (Polygon / MultiPolygon
    /// geometries, bare or inside features and collections).
    pub fn from_geojson_str(text: &str) -> Result<Self> {
        let gj: geojson::GeoJson = text.parse().map_err(|e| Error::Parse(format!("geojson: {e}")))?;
        let mut polygons = Vec::new();
        let mut push_geometry = |g: &geojson::Geometry| collect_polygons(&g.value, &mut polygons);
        match &gj {
            geojson::GeoJson::Geometry(g) => push_geometry(g),
            geojson::GeoJson::Feature(f) => {
                if let Some(g) = &f.geometry {
                    push_geometry(g)
                }
            }
            geojson::GeoJson::FeatureCollection(fc) => {
                for f in &fc.features {
                    if let Some(g) = &f.geometry {
                        push_geometry(g)
                    }
                }
            }
        }
        Ok(LandMask::Polygons(polygons))
    }

    /// Reads a `lat,lon,is_water` raster (header row optional).
    pub fn from_raster_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut points = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::Parse(format!("raster line {}: expected 3 fields", line + 1)));
            }
            let lat = rec[0].parse::<f64>();
            let lon = rec[1].parse::<f64>();
            let (lat, lon) = match (lat, lon) {
                (Ok(lat), Ok(lon)) => (lat, lon),
                _ if line == 0 => continue, // header
                _ => return Err(Error::Parse(format!("raster line {}: bad coordinate", line + 1))),
            };
            let water = match rec[2].to_ascii_lowercase().as_str() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(Error::Parse(format!("raster line {}: bad is_water {other:?}", line + 1))),
            };
            points.push((GeoCoord::new(lat, lon), water));
        }
        Ok(LandMask::Raster(WaterRaster::new(points)?))
    }
}

fn collect_polygons(value: &geojson::Value, out: &mut Vec<LandPolygon>) {
    let ring = |r: &Vec<Vec<f64>>| r.iter().filter(|p| p.len() >= 2).map(|p| (p[0], p[1])).collect::<Vec<_>>();
    let polygon = |rings: &Vec<Vec<Vec<f64>>>| {
        let mut it = rings.iter();
        it.next().map(|ext| LandPolygon { exterior: ring(ext), holes: it.map(ring).collect() })
    };
    match value {
        geojson::Value::Polygon(rings) => out.extend(polygon(rings)),
        geojson::Value::MultiPolygon(polys) => out.extend(polys.iter().filter_map(polygon)),
        geojson::Value::GeometryCollection(gs) => gs.iter().for_each(|g| collect_polygons(&g.value, out)),
        _ => {}
    }
}

/// The navigable hex cells of a study area. Immutable after construction.
#[derive(Debug, Clone)]
pub struct WorldGrid {
    bbox: BBox,
    cell_size_km: f64,
    centers: BTreeMap<CellId, GeoCoord>,
    lattice: Lattice,
}

#[derive(Serialize, Deserialize)]
struct WorldGridFile {
    bbox: [f64; 4],
    cell_size_km: f64,
    cells: Vec<(i32, i32, f64, f64)>,
}

/// Builds the water cells of the lattice covering `bbox`.
pub fn build_world(bbox: BBox, cell_size_km: f64, land: &LandMask) -> Result<WorldGrid> {
    bbox.validate()?;
    if !(cell_size_km > 0.0 && cell_size_km.is_finite()) {
        return Err(Error::InvalidCellSize(cell_size_km));
    }
    let lattice = Lattice::new(bbox.center(), cell_size_km);
    let (x0, y0) = lattice.project(GeoCoord::new(bbox.lat_min, bbox.lon_min));
    let (x1, y1) = lattice.project(GeoCoord::new(bbox.lat_max, bbox.lon_max));
    let row_h = cell_size_km * 3f64.sqrt() / 2.0;
    let (r_lo, r_hi) = ((y0 / row_h).floor() as i32, (y1 / row_h).ceil() as i32);

    let mut centers = BTreeMap::new();
    for r in r_lo..=r_hi {
        let q_lo = (x0 / cell_size_km - 0.5 * r as f64).floor() as i32;
        let q_hi = (x1 / cell_size_km - 0.5 * r as f64).ceil() as i32;
        for q in q_lo..=q_hi {
            let cell = CellId::new(q, r);
            let c = lattice.center(cell);
            if bbox.contains(c) && land.is_water(c) {
                centers.insert(cell, c);
            }
        }
    }
    if centers.is_empty() {
        return Err(Error::NoNavigableCells);
    }
    Ok(WorldGrid { bbox, cell_size_km, centers, lattice })
}

impl WorldGrid {
    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn cell_size_km(&self) -> f64 {
        self.cell_size_km
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn contains(&self, c: CellId) -> bool {
        self.centers.contains_key(&c)
    }

    /// Water cells in lexicographic order.
    pub fn cells(&self) -> impl Iterator<Item = CellId> + '_ {
        self.centers.keys().copied()
    }

    pub fn centers(&self) -> impl Iterator<Item = (CellId, GeoCoord)> + '_ {
        self.centers.iter().map(|(c, p)| (*c, *p))
    }

    pub fn center(&self, c: CellId) -> Result<GeoCoord> {
        self.centers.get(&c).copied().ok_or(Error::UnknownCell(c))
    }

    /// Centre of any lattice position, navigable or not.
    pub fn lattice_center(&self, c: CellId) -> GeoCoord {
        self.lattice.center(c)
    }

    /// Water neighbours by direction slot.
    pub fn neighbors(&self, c: CellId) -> Result<Neighbors> {
        if !self.contains(c) {
            return Err(Error::UnknownCell(c));
        }
        Ok(Direction::ALL.map(|d| Some(c.step(d)).filter(|n| self.contains(*n))))
    }

    pub fn neighbor_list(&self, c: CellId) -> Result<Vec<CellId>> {
        Ok(self.neighbors(c)?.into_iter().flatten().collect())
    }

    /// The lattice cell whose centre is nearest to `p` (ties broken by
    /// lexicographic `(q, r)`); errors when that cell is not navigable.
    pub fn locate(&self, p: GeoCoord) -> Result<CellId> {
        let off = || Error::OffGrid { lat: p.lat, lon: p.lon };
        if !self.bbox.contains(p) {
            return Err(off());
        }
        let guess = self.lattice.round(p);
        let mut best = guess;
        let mut best_d = haversine(p, self.lattice.center(guess));
        for d in Direction::ALL {
            let cand = guess.step(d);
            let dist = haversine(p, self.lattice.center(cand));
            if dist < best_d || (dist == best_d && cand < best) {
                best = cand;
                best_d = dist;
            }
        }
        if self.contains(best) {
            Ok(best)
        } else {
            Err(off())
        }
    }

    /// Hop distances to `goal` over water-cell adjacency.
    pub fn lattice_hop_distances(&self, goal: CellId) -> Result<HashMap<CellId, u32>> {
        if !self.contains(goal) {
            return Err(Error::UnknownCell(goal));
        }
        let mut dist = HashMap::from([(goal, 0u32)]);
        let mut queue = VecDeque::from([goal]);
        while let Some(c) = queue.pop_front() {
            let dc = dist[&c];
            for n in self.neighbors(c)?.into_iter().flatten() {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(n) {
                    e.insert(dc + 1);
                    queue.push_back(n);
                }
            }
        }
        Ok(dist)
    }

    pub fn to_json(&self) -> Result<String> {
        let b = self.bbox;
        let file = WorldGridFile {
            bbox: [b.lon_min, b.lat_min, b.lon_max, b.lat_max],
            cell_size_km: self.cell_size_km,
            cells: self.centers.iter().map(|(c, p)| (c.q, c.r, p.lat, p.lon)).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WorldGridFile = serde_json::from_str(text)?;
        let [lon_min, lat_min, lon_max, lat_max] = file.bbox;
        let bbox = BBox::new(lon_min, lat_min, lon_max, lat_max)?;
        if !(file.cell_size_km > 0.0) {
            return Err(Error::InvalidCellSize(file.cell_size_km));
        }
        let lattice = Lattice::new(bbox.center(), file.cell_size_km);
        let mut centers = BTreeMap::new();
        for (q, r, lat, lon) in file.cells {
            let p = GeoCoord::new(lat, lon);
            if !bbox.contains(p) {
                return Err(Error::Parse(format!("cell ({q}, {r}) centre lies outside bbox")));
            }
            centers.insert(CellId::new(q, r), p);
        }
        if centers.is_empty() {
            return Err(Error::NoNavigableCells);
        }
        Ok(Self { bbox, cell_size_km: file.cell_size_km, centers, lattice })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn open_sea() -> WorldGrid {
        // ~10 x 10 cells
        build_world(BBox::new(-62.45, 47.0, -61.6, 47.55).unwrap(), 6.5, &LandMask::AllWater).unwrap()
    }

    #[test]
    fn interior_cells_have_six_neighbors() {
        let g = open_sea();
        let interior: Vec<_> = g
            .cells()
            .filter(|c| Direction::ALL.iter().all(|d| g.contains(c.step(*d))))
            .collect();
        assert!(interior.len() > 30, "only {} interior cells", interior.len());
        for c in interior {
            assert_eq!(g.neighbor_list(c).unwrap().len(), 6);
        }
    }

    #[test]
    fn corner_cell_has_fewer_neighbors() {
        let g = open_sea();
        let corner = g.cells().next().unwrap();
        assert!(g.neighbor_list(corner).unwrap().len() < 6);
    }

    #[test]
    fn all_land_is_an_error() {
        let bbox = BBox::new(-62.0, 47.0, -61.0, 47.5).unwrap();
        let land = LandMask::Polygons(vec![LandPolygon::new(vec![
            (-63.0, 46.0),
            (-60.0, 46.0),
            (-60.0, 48.0),
            (-63.0, 48.0),
        ])]);
        assert!(matches!(build_world(bbox, 6.5, &land), Err(Error::NoNavigableCells)));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(BBox::new(-61.0, 47.0, -62.0, 48.0).is_err());
        let bbox = BBox::new(-62.0, 47.0, -61.0, 47.5).unwrap();
        assert!(matches!(build_world(bbox, 0.0, &LandMask::AllWater), Err(Error::InvalidCellSize(_))));
    }

    #[test]
    fn checkerboard_raster_neighbors_exclude_land() {
        let bbox = BBox::new(-62.45, 47.0, -61.6, 47.55).unwrap();
        let full = build_world(bbox, 6.5, &LandMask::AllWater).unwrap();
        // raster sampled exactly at the lattice centres, alternating by (q + r) parity
        let points = full
            .centers()
            .map(|(c, p)| (p, (c.q + c.r).rem_euclid(2) == 0))
            .collect::<Vec<_>>();
        let mask = LandMask::Raster(WaterRaster::new(points).unwrap());
        let g = build_world(bbox, 6.5, &mask).unwrap();
        assert!(g.len() < full.len());
        for c in g.cells() {
            assert_eq!((c.q + c.r).rem_euclid(2), 0);
            for n in g.neighbor_list(c).unwrap() {
                assert!(g.contains(n));
                assert_eq!((n.q + n.r).rem_euclid(2), 0, "land neighbour {n:?} listed for {c:?}");
            }
        }
    }

    #[test]
    fn polygon_holes_are_water() {
        let poly = LandPolygon {
            exterior: vec![(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)],
            holes: vec![vec![(1.0, 1.0), (3.0, 1.0), (3.0, 3.0), (1.0, 3.0)]],
        };
        assert!(poly.contains(GeoCoord::new(0.5, 0.5)));
        assert!(!poly.contains(GeoCoord::new(2.0, 2.0)));
        assert!(!poly.contains(GeoCoord::new(5.0, 2.0)));
    }

    #[test]
    fn neighbor_distances_near_cell_size() {
        let g = open_sea();
        for c in g.cells() {
            let pc = g.center(c).unwrap();
            for n in g.neighbor_list(c).unwrap() {
                let d = haversine(pc, g.center(n).unwrap());
                assert!((d / g.cell_size_km() - 1.0).abs() < 0.05, "{c:?}->{n:?}: {d}");
            }
        }
    }

    #[test]
    fn neighbor_symmetry() {
        let g = open_sea();
        for c in g.cells() {
            for (i, n) in g.neighbors(c).unwrap().into_iter().enumerate() {
                if let Some(n) = n {
                    let back = g.neighbors(n).unwrap()[Direction::ALL[i].opposite().index()];
                    assert_eq!(back, Some(c));
                }
            }
        }
    }

    #[test]
    fn unknown_cell_errors() {
        let g = open_sea();
        assert!(matches!(g.neighbors(CellId::new(999, 999)), Err(Error::UnknownCell(_))));
    }

    #[test]
    fn locate_centers_round_trip() {
        let g = open_sea();
        for (c, p) in g.centers() {
            assert_eq!(g.locate(p).unwrap(), c);
        }
    }

    #[test]
    fn locate_outside_bbox_errors() {
        let g = open_sea();
        assert!(matches!(g.locate(GeoCoord::new(10.0, 10.0)), Err(Error::OffGrid { .. })));
    }

    #[test]
    fn locate_matches_brute_force_nearest_center() {
        let g = open_sea();
        let b = g.bbox();
        // every lattice position around the box, navigable or not
        let mut lattice = Vec::new();
        for q in -40..40 {
            for r in -40..40 {
                lattice.push(CellId::new(q, r));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut hits = 0;
        for _ in 0..500 {
            let p = GeoCoord::new(rng.gen_range(b.lat_min..b.lat_max), rng.gen_range(b.lon_min..b.lon_max));
            let nearest = lattice
                .iter()
                .copied()
                .min_by(|a, c| {
                    haversine(p, g.lattice_center(*a))
                        .total_cmp(&haversine(p, g.lattice_center(*c)))
                        .then(a.cmp(c))
                })
                .unwrap();
            match g.locate(p) {
                Ok(c) => {
                    hits += 1;
                    assert_eq!(c, nearest);
                    let best_water = g
                        .centers()
                        .min_by(|(_, a), (_, c)| haversine(p, *a).total_cmp(&haversine(p, *c)))
                        .unwrap()
                        .0;
                    assert_eq!(c, best_water);
                }
                Err(_) => assert!(!g.contains(nearest)),
            }
        }
        assert!(hits > 400);
    }

    #[test]
    fn json_round_trip() {
        let g = open_sea();
        let back = WorldGrid::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back.len(), g.len());
        assert!(back.centers().zip(g.centers()).all(|(a, b)| a == b));
        let p = g.center(CellId::new(0, 0)).unwrap();
        assert_eq!(back.locate(p).unwrap(), CellId::new(0, 0));
    }

    #[test]
    fn raster_csv_parsing() {
        let text = "lat,lon,is_water\n47.0,-62.0,1\n47.0,-61.0,0\n";
        let mask = LandMask::from_raster_csv(text.as_bytes()).unwrap();
        assert!(mask.is_water(GeoCoord::new(47.0, -61.9)));
        assert!(!mask.is_water(GeoCoord::new(47.0, -61.1)));
        assert!(LandMask::from_raster_csv("47.0,-62.0,maybe\n".as_bytes()).is_err());
    }

    #[test]
    fn geojson_polygons() {
        let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{},
            "geometry":{"type":"Polygon","coordinates":[[[-62,47],[-61,47],[-61,48],[-62,48],[-62,47]]]}}]}"#;
        let mask = LandMask::from_geojson_str(text).unwrap();
        assert!(!mask.is_water(GeoCoord::new(47.5, -61.5)));
        assert!(mask.is_water(GeoCoord::new(47.5, -60.5)));
    }

    #[test]
    fn lattice_distance_and_bfs_agree_in_open_water() {
        let g = open_sea();
        let goal = CellId::new(0, 0);
        let d = g.lattice_hop_distances(goal).unwrap();
        for c in g.cells() {
            assert!(d[&c] >= c.lattice_distance(goal));
        }
        assert_eq!(d[&goal], 0);
    }
}
