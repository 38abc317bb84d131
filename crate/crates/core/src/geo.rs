//! Spherical-earth geometry.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Mean earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Kilometres per hour in one knot.
pub const KMH_PER_KNOT: f64 = 1.852;

/// Latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoCoord<T = f64> {
    pub lat: T,
    pub lon: T,
}

impl<T: Real> GeoCoord<T> {
    pub fn new(lat: T, lon: T) -> Self {
        Self { lat, lon }
    }

    /// Latitude in [-90, 90] and longitude in [-180, 180).
    pub fn is_valid(&self) -> bool {
        let (lat, lon) = (self.lat.to_f64_lossy(), self.lon.to_f64_lossy());
        (-90.0..=90.0).contains(&lat) && (-180.0..180.0).contains(&lon)
    }
}

/// Great-circle distance in km (haversine form, R = 6371 km).
pub fn haversine<T: Real>(a: GeoCoord<T>, b: GeoCoord<T>) -> T {
    let two = T::lit(2.0);
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let s_phi = (dphi / two).sin();
    let s_lambda = (dlambda / two).sin();
    let h = s_phi * s_phi + phi1.cos() * phi2.cos() * s_lambda * s_lambda;
    // rounding can push h a hair above 1 for antipodal points
    let h = h.min(T::one()).max(T::zero());
    two * T::lit(EARTH_RADIUS_KM) * h.sqrt().asin()
}

/// Initial great-circle course from `a` to `b`, as a counter-clockwise angle
/// from east in [-pi, pi] (the same frame as `atan2(v, u)` wind vectors).
pub fn initial_heading<T: Real>(a: GeoCoord<T>, b: GeoCoord<T>) -> T {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let east = dlambda.sin() * phi2.cos();
    let north = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    north.atan2(east)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Independent route: spherical law of cosines.
    fn law_of_cosines(a: GeoCoord, b: GeoCoord) -> f64 {
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dl = (b.lon - a.lon).to_radians();
        let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
        EARTH_RADIUS_KM * c.clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn identity_is_zero() {
        let x = GeoCoord::new(47.3, -61.2);
        assert_eq!(haversine(x, x), 0.0);
    }

    #[test]
    fn quarter_great_circle() {
        let d = haversine(GeoCoord::new(0.0, 0.0), GeoCoord::new(0.0, 90.0));
        assert!((d - PI * EARTH_RADIUS_KM / 2.0).abs() < 1e-9);
        assert!((d - 10007.54).abs() < 0.01);
    }

    #[test]
    fn matches_law_of_cosines_one_degree_of_longitude() {
        let a = GeoCoord::new(47.0, -62.0);
        let b = GeoCoord::new(47.0, -61.0);
        let h = haversine(a, b);
        let l = law_of_cosines(a, b);
        assert!(((h - l) / l).abs() < 1e-6, "{h} vs {l}");
    }

    #[test]
    fn works_in_single_precision() {
        let d: f32 = haversine(GeoCoord::new(0.0f32, 0.0), GeoCoord::new(0.0, 90.0));
        assert!((d - 10007.54).abs() < 0.05);
    }

    #[test]
    fn heading_frame() {
        let o = GeoCoord::new(0.0f64, 0.0);
        assert!(initial_heading(o, GeoCoord::new(0.0, 1.0)).abs() < 1e-12);
        assert!((initial_heading(o, GeoCoord::new(1.0, 0.0)) - PI / 2.0).abs() < 1e-12);
        assert!((initial_heading(o, GeoCoord::new(-1.0, 0.0)) + PI / 2.0).abs() < 1e-12);
    }

    fn coord() -> impl Strategy<Value = GeoCoord> {
        (-89.0..89.0f64, -179.0..179.0f64).prop_map(|(lat, lon)| GeoCoord::new(lat, lon))
    }

    proptest! {
        #[test]
        fn symmetric_and_non_negative(a in coord(), b in coord()) {
            let ab = haversine(a, b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - haversine(b, a)).abs() < 1e-9);
        }

        #[test]
        fn triangle_inequality(a in coord(), b in coord(), c in coord()) {
            prop_assert!(haversine(a, c) <= haversine(a, b) + haversine(b, c) + 1e-9);
        }
    }
}
