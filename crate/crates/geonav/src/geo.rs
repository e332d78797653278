//! Geographic points, rectangular regions, and the local planar frame that
//! maps kilometers to degrees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::Rng as _;

/// Kilometers per degree of latitude (and of longitude at the equator).
pub const KM_PER_DEG: f64 = 111.32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon_deg: f64,
    pub lat_deg: f64,
}

impl GeoPoint {
    pub fn new(lon_deg: f64, lat_deg: f64) -> Result<Self> {
        if !lon_deg.is_finite() || !(-180.0..=180.0).contains(&lon_deg) {
            return Err(Error::CoordinateRange {
                name: "lon_deg",
                value: lon_deg,
            });
        }
        if !lat_deg.is_finite() || !(-90.0..=90.0).contains(&lat_deg) {
            return Err(Error::CoordinateRange {
                name: "lat_deg",
                value: lat_deg,
            });
        }
        Ok(GeoPoint { lon_deg, lat_deg })
    }
}

/// Axis-aligned lon/lat box. Bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBounds {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl RegionBounds {
    pub fn new(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64) -> Result<Self> {
        let r = RegionBounds {
            lon_min,
            lon_max,
            lat_min,
            lat_max,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        GeoPoint::new(self.lon_min, self.lat_min)?;
        GeoPoint::new(self.lon_max, self.lat_max)?;
        if self.lon_min >= self.lon_max || self.lat_min >= self.lat_max {
            return Err(Error::Config(format!(
                "empty region: lon [{}, {}], lat [{}, {}]",
                self.lon_min, self.lon_max, self.lat_min, self.lat_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        p.lon_deg >= self.lon_min
            && p.lon_deg <= self.lon_max
            && p.lat_deg >= self.lat_min
            && p.lat_deg <= self.lat_max
    }

    pub fn contains_region(&self, other: &RegionBounds) -> bool {
        other.lon_min >= self.lon_min
            && other.lon_max <= self.lon_max
            && other.lat_min >= self.lat_min
            && other.lat_max <= self.lat_max
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lon_deg: 0.5 * (self.lon_min + self.lon_max),
            lat_deg: 0.5 * (self.lat_min + self.lat_max),
        }
    }

    pub fn sample_uniform(&self, rng: &mut Rng) -> GeoPoint {
        GeoPoint {
            lon_deg: rng.gen_range(self.lon_min..=self.lon_max),
            lat_deg: rng.gen_range(self.lat_min..=self.lat_max),
        }
    }

    /// Shrink the box by `margin_deg` on every side.
    pub fn shrunk(&self, margin_deg: f64) -> Result<RegionBounds> {
        RegionBounds::new(
            self.lon_min + margin_deg,
            self.lon_max - margin_deg,
            self.lat_min + margin_deg,
            self.lat_max - margin_deg,
        )
    }
}

/// Local equirectangular frame: x is kilometers east of the anchor, y is
/// kilometers north. Longitude scaling is fixed at the frame's reference
/// latitude (the region mid-latitude), which keeps the map affine and exactly
/// invertible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub anchor: GeoPoint,
    pub km_per_deg_lat: f64,
    pub km_per_deg_lon: f64,
}

impl LocalFrame {
    pub fn for_region(region: &RegionBounds) -> LocalFrame {
        let mid_lat = 0.5 * (region.lat_min + region.lat_max);
        LocalFrame {
            anchor: GeoPoint {
                lon_deg: region.lon_min,
                lat_deg: region.lat_min,
            },
            km_per_deg_lat: KM_PER_DEG,
            km_per_deg_lon: KM_PER_DEG * mid_lat.to_radians().cos(),
        }
    }

    pub fn to_km(&self, p: &GeoPoint) -> (f64, f64) {
        (
            (p.lon_deg - self.anchor.lon_deg) * self.km_per_deg_lon,
            (p.lat_deg - self.anchor.lat_deg) * self.km_per_deg_lat,
        )
    }

    pub fn to_geo(&self, x_km: f64, y_km: f64) -> GeoPoint {
        GeoPoint {
            lon_deg: self.anchor.lon_deg + x_km / self.km_per_deg_lon,
            lat_deg: self.anchor.lat_deg + y_km / self.km_per_deg_lat,
        }
    }

    pub fn distance_km(&self, a: &GeoPoint, b: &GeoPoint) -> f64 {
        let (ax, ay) = self.to_km(a);
        let (bx, by) = self.to_km(b);
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }

    /// Planar bearing from `a` to `b` in radians, measured from east (+x)
    /// counterclockwise, matching the vehicle heading convention.
    pub fn bearing_rad(&self, a: &GeoPoint, b: &GeoPoint) -> f64 {
        let (ax, ay) = self.to_km(a);
        let (bx, by) = self.to_km(b);
        (by - ay).atan2(bx - ax)
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(rad: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut a = rad % two_pi;
    if a <= -std::f64::consts::PI {
        a += two_pi;
    } else if a > std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

/// Unsigned angular distance in [0, pi].
pub fn angular_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn region() -> RegionBounds {
        RegionBounds::new(90.0, 95.0, -15.0, -10.0).unwrap()
    }

    #[test]
    fn frame_round_trips_points() {
        let frame = LocalFrame::for_region(&region());
        for &(lon, lat) in &[(90.0, -15.0), (92.5, -12.5), (95.0, -10.0), (91.3, -14.7)] {
            let p = GeoPoint::new(lon, lat).unwrap();
            let (x, y) = frame.to_km(&p);
            let q = frame.to_geo(x, y);
            assert!((q.lon_deg - p.lon_deg).abs() < 1e-9);
            assert!((q.lat_deg - p.lat_deg).abs() < 1e-9);
        }
    }

    #[test]
    fn lon_scale_uses_mid_latitude() {
        let frame = LocalFrame::for_region(&region());
        let expected = KM_PER_DEG * (-12.5f64).to_radians().cos();
        assert!((frame.km_per_deg_lon - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_coordinates() {
        assert!(GeoPoint::new(190.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -91.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(RegionBounds::new(10.0, 10.0, 0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn wrap_angle_stays_in_range(x in -100.0f64..100.0) {
            let w = wrap_angle(x);
            prop_assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI + 1e-12);
            // Same direction: difference is a multiple of 2*pi.
            let k = (x - w) / std::f64::consts::TAU;
            prop_assert!((k - k.round()).abs() < 1e-9);
        }

        #[test]
        fn angular_distance_symmetric(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            prop_assert!((angular_distance(a, b) - angular_distance(b, a)).abs() < 1e-12);
            prop_assert!(angular_distance(a, b) <= std::f64::consts::PI + 1e-12);
        }
    }
}
