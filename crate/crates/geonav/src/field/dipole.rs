//! Analytic tilted-dipole field.
//!
//! Centered dipole evaluated at the surface. With magnetic latitude `lam`
//! (angle from the magnetic equator) and equatorial surface intensity `B0`:
//!
//! ```text
//! BH = B0 * cos(lam)            horizontal, pointing at the magnetic north pole
//! BZ = 2 * B0 * sin(lam)        vertical, down in the northern magnetic hemisphere
//! BF = B0 * sqrt(1 + 3 sin^2(lam))
//! tan(I) = 2 * tan(lam)
//! ```
//!
//! Declination is the great-circle bearing from the point to the magnetic
//! north pole. Everything is differentiable in closed form, which makes this
//! backend the gradient oracle for the finite-difference path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{derive_elements, Element, FieldProvider, FieldSample, FieldVector};
use crate::geo::{GeoPoint, LocalFrame, RegionBounds};

/// Margin (degrees of latitude) kept between coverage and the magnetic poles,
/// where declination is singular.
const POLE_MARGIN_DEG: f64 = 5.0;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DipoleFieldSpec {
    /// Equatorial surface intensity in nT (total intensity at the magnetic equator).
    pub moment_nt: f64,
    /// Tilt of the dipole axis against the rotation axis, degrees.
    pub tilt_deg: f64,
    /// Tilt meridian: the magnetic north pole sits at longitude `center.lon_deg`
    /// and latitude `90 - tilt_deg + center.lat_deg`.
    pub center: GeoPoint,
}

impl Default for DipoleFieldSpec {
    fn default() -> Self {
        DipoleFieldSpec {
            moment_nt: 31000.0,
            tilt_deg: 11.0,
            center: GeoPoint {
                lon_deg: 0.0,
                lat_deg: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct DipoleField {
    spec: DipoleFieldSpec,
    pole_lat_rad: f64,
    pole_lon_rad: f64,
    coverage: RegionBounds,
}

impl DipoleField {
    pub fn new(spec: DipoleFieldSpec) -> Result<Self> {
        if !(spec.moment_nt > 0.0) {
            return Err(Error::Config(format!(
                "dipole moment must be positive, got {}",
                spec.moment_nt
            )));
        }
        let pole_lat_deg = 90.0 - spec.tilt_deg + spec.center.lat_deg;
        if !(5.0..=90.0).contains(&pole_lat_deg.abs()) {
            return Err(Error::Config(format!(
                "dipole pole latitude {pole_lat_deg} too close to the equator"
            )));
        }
        let lat_cap = pole_lat_deg.abs() - POLE_MARGIN_DEG;
        Ok(DipoleField {
            spec,
            pole_lat_rad: pole_lat_deg.to_radians(),
            pole_lon_rad: spec.center.lon_deg.to_radians(),
            coverage: RegionBounds {
                lon_min: -180.0,
                lon_max: 180.0,
                lat_min: -lat_cap,
                lat_max: lat_cap,
            },
        })
    }

    pub fn spec(&self) -> &DipoleFieldSpec {
        &self.spec
    }

    /// sin of the magnetic latitude at `p` (spherical law of cosines against
    /// the magnetic pole).
    fn sin_maglat(&self, lat: f64, lon: f64) -> f64 {
        lat.sin() * self.pole_lat_rad.sin()
            + lat.cos() * self.pole_lat_rad.cos() * (lon - self.pole_lon_rad).cos()
    }

    /// Bearing terms toward the magnetic pole: D = atan2(num, den).
    fn bearing_terms(&self, lat: f64, lon: f64) -> (f64, f64) {
        let dlon = self.pole_lon_rad - lon;
        let num = dlon.sin() * self.pole_lat_rad.cos();
        let den = lat.cos() * self.pole_lat_rad.sin()
            - lat.sin() * self.pole_lat_rad.cos() * dlon.cos();
        (num, den)
    }

    /// Exact spatial derivatives of one element, in units per km of the given
    /// frame. Independent derivation used as the oracle for the generic
    /// finite-difference `gradient`.
    pub fn analytic_gradient(
        &self,
        frame: &LocalFrame,
        p: &GeoPoint,
        element: Element,
    ) -> Result<(f64, f64)> {
        if !self.contains(p) {
            return Err(Error::OutOfCoverage {
                lon_deg: p.lon_deg,
                lat_deg: p.lat_deg,
            });
        }
        let lat = p.lat_deg.to_radians();
        let lon = p.lon_deg.to_radians();
        let b0 = self.spec.moment_nt;
        let sl = self.sin_maglat(lat, lon);
        let cl = (1.0 - sl * sl).max(1e-12).sqrt();

        // d(sin lam)/d(lat), d(sin lam)/d(lon)
        let dlon = lon - self.pole_lon_rad;
        let dsl_dlat =
            lat.cos() * self.pole_lat_rad.sin() - lat.sin() * self.pole_lat_rad.cos() * dlon.cos();
        let dsl_dlon = -lat.cos() * self.pole_lat_rad.cos() * dlon.sin();

        let (dval_dlat, dval_dlon) = match element {
            Element::Bh => {
                // BH = B0 cos(lam); dBH = -B0 sin(lam) dlam, dlam = dsl / cos(lam)
                let f = -b0 * sl / cl;
                (f * dsl_dlat, f * dsl_dlon)
            }
            Element::Incl => {
                // I = atan(2 tan lam); dI/dlam = 2 / (1 + 3 sin^2 lam)
                let f = 2.0 / (1.0 + 3.0 * sl * sl) / cl;
                (f * dsl_dlat, f * dsl_dlon)
            }
            Element::Decl => {
                let (num, den) = self.bearing_terms(lat, lon);
                let r2 = num * num + den * den;
                if r2 < 1e-18 {
                    return Err(Error::IndeterminateHeading);
                }
                // num = sin(pole_lon - lon) cos(latp): d/dlat = 0
                let dnum_dlat = 0.0;
                let dnum_dlon = -(self.pole_lon_rad - lon).cos() * self.pole_lat_rad.cos();
                // den: d/dlat = -sin(lat) sin(latp) - cos(lat) cos(latp) cos(dlon) = -sin(lam)
                let dden_dlat = -sl;
                let dden_dlon =
                    -lat.sin() * self.pole_lat_rad.cos() * (self.pole_lon_rad - lon).sin();
                (
                    (den * dnum_dlat - num * dden_dlat) / r2,
                    (den * dnum_dlon - num * dden_dlon) / r2,
                )
            }
        };

        let rad_per_km_east = 1.0_f64.to_radians() / frame.km_per_deg_lon;
        let rad_per_km_north = 1.0_f64.to_radians() / frame.km_per_deg_lat;
        Ok((dval_dlon * rad_per_km_east, dval_dlat * rad_per_km_north))
    }
}

impl FieldProvider for DipoleField {
    fn coverage(&self) -> RegionBounds {
        self.coverage
    }

    fn sample(&self, p: &GeoPoint) -> Result<FieldSample> {
        if !self.contains(p) {
            return Err(Error::OutOfCoverage {
                lon_deg: p.lon_deg,
                lat_deg: p.lat_deg,
            });
        }
        let lat = p.lat_deg.to_radians();
        let lon = p.lon_deg.to_radians();
        let sl = self.sin_maglat(lat, lon);
        let h = self.spec.moment_nt * (1.0 - sl * sl).max(0.0).sqrt();
        let z = 2.0 * self.spec.moment_nt * sl;
        let (num, den) = self.bearing_terms(lat, lon);
        let bearing = num.atan2(den);
        derive_elements(FieldVector {
            bx: h * bearing.cos(),
            by: h * bearing.sin(),
            bz: z,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::gradient;

    fn default_field() -> DipoleField {
        DipoleField::new(DipoleFieldSpec::default()).unwrap()
    }

    #[test]
    fn magnetic_equator_has_flat_inclination_and_full_horizontal() {
        let f = default_field();
        // On the tilt meridian the magnetic equator sits at lat = -tilt... the
        // point with maglat 0 along lon = pole_lon + 180 is lat = tilt - 90 +
        // ... simpler: find it by bisection on sin_maglat along lon = 120.
        let lon = 120.0f64;
        let mut lo = -40.0f64;
        let mut hi = 40.0f64;
        let sin_at = |lat_deg: f64| {
            f.sin_maglat(lat_deg.to_radians(), lon.to_radians())
        };
        assert!(sin_at(lo) < 0.0 && sin_at(hi) > 0.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if sin_at(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let eq_lat = 0.5 * (lo + hi);
        let s = f.sample(&GeoPoint::new(lon, eq_lat).unwrap()).unwrap();
        assert!(s.incl_rad.abs() < 1e-9);
        assert!((s.bh - f.spec().moment_nt).abs() < 1e-3);
        assert!((s.bf - f.spec().moment_nt).abs() < 1e-3);
    }

    #[test]
    fn bh_decreases_and_inclination_steepens_toward_pole() {
        let f = default_field();
        for lon in [-120.0, 0.0, 90.0, 135.0] {
            let mut prev: Option<FieldSample> = None;
            // March south from just below the magnetic equator; magnetic
            // latitude magnitude increases monotonically along a meridian.
            for i in 0..40 {
                let lat = -12.0 - i as f64;
                if lat < f.coverage().lat_min {
                    break;
                }
                let s = f.sample(&GeoPoint::new(lon, lat).unwrap()).unwrap();
                if let Some(p) = prev {
                    assert!(
                        s.bh < p.bh,
                        "bh must decrease toward the pole at lon {lon}, lat {lat}"
                    );
                    assert!(
                        s.incl_rad.abs() > p.incl_rad.abs(),
                        "|I| must increase toward the pole at lon {lon}, lat {lat}"
                    );
                }
                prev = Some(s);
            }
        }
    }

    #[test]
    fn southern_hemisphere_points_have_negative_inclination() {
        let f = default_field();
        let s = f.sample(&GeoPoint::new(92.0, -30.0).unwrap()).unwrap();
        assert!(s.incl_rad < 0.0);
        assert!(s.bz < 0.0);
    }

    #[test]
    fn finite_difference_matches_analytic_gradient() {
        let f = default_field();
        let region = RegionBounds::new(90.0, 135.0, -35.0, -10.0).unwrap();
        let frame = LocalFrame::for_region(&region);
        let mut rng = crate::rng::rng_from(3, "dipole/gradcheck");
        for _ in 0..200 {
            let p = region.sample_uniform(&mut rng);
            for e in crate::field::ALL_ELEMENTS {
                let (gx, gy) = f.analytic_gradient(&frame, &p, e).unwrap();
                let g = gradient(&f, &frame, &p, e, 1.0).unwrap();
                let scale = gx.abs().max(gy.abs()).max(1e-12);
                assert!(
                    (g.east_per_km - gx).abs() / scale < 1e-4,
                    "east gradient mismatch for {e:?} at {p:?}: fd {} vs analytic {gx}",
                    g.east_per_km
                );
                assert!(
                    (g.north_per_km - gy).abs() / scale < 1e-4,
                    "north gradient mismatch for {e:?} at {p:?}: fd {} vs analytic {gy}",
                    g.north_per_km
                );
            }
        }
    }

    #[test]
    fn out_of_coverage_is_reported() {
        let f = default_field();
        let p = GeoPoint::new(0.0, 80.0).unwrap();
        assert!(matches!(
            f.sample(&p),
            Err(Error::OutOfCoverage { .. })
        ));
    }
}
