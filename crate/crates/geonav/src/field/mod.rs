//! Geomagnetic field elements and field providers.
//!
//! A field provider answers "what is the field at this point" for any point
//! inside its coverage. Three backends ship:
//!
//! - [`FieldGrid`] — bilinear interpolation over an ingested lon/lat grid of
//!   vector components (the production path, fed by precomputed model data).
//! - [`DipoleField`] — analytic tilted-dipole field, used as a closed-form
//!   test oracle and for self-contained desk-scale experiments.
//! - [`LinearElementField`] — synthetic field whose elements are affine in
//!   local kilometers; gradients and objective landscapes are known exactly.

mod dipole;
mod grid;
mod linear;

pub use dipole::{DipoleField, DipoleFieldSpec};
pub use grid::FieldGrid;
pub use linear::LinearElementField;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{wrap_angle, GeoPoint, LocalFrame, RegionBounds};

/// Horizontal intensity below this (nT) leaves declination undefined.
pub const DEGENERATE_BH_NT: f64 = 1e-9;

/// Field vector in local geographic axes: x north, y east, z down, in nT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldVector {
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
}

/// The seven geomagnetic elements at a point.
///
/// `decl_rad` is the declination D (angle from geographic north to the
/// horizontal field, positive eastward), `incl_rad` the inclination I (dip
/// angle, positive downward). Both are stored in radians; degrees exist only
/// at I/O boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub bf: f64,
    pub bh: f64,
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
    pub decl_rad: f64,
    pub incl_rad: f64,
    /// Set when `bh` is too small for D to mean anything; D is reported as 0.
    pub degenerate_horizontal: bool,
}

/// The three elements observable by the vehicle's magnetometer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Element {
    #[serde(rename = "D")]
    Decl,
    #[serde(rename = "I")]
    Incl,
    #[serde(rename = "BH")]
    Bh,
}

pub const ALL_ELEMENTS: [Element; 3] = [Element::Decl, Element::Incl, Element::Bh];

impl Element {
    pub fn name(&self) -> &'static str {
        match self {
            Element::Decl => "D",
            Element::Incl => "I",
            Element::Bh => "BH",
        }
    }

    /// Difference `a - b` for this element; angular elements wrap.
    pub fn delta(&self, a: f64, b: f64) -> f64 {
        match self {
            Element::Decl => wrap_angle(a - b),
            _ => a - b,
        }
    }
}

impl FieldSample {
    pub fn element(&self, e: Element) -> f64 {
        match e {
            Element::Decl => self.decl_rad,
            Element::Incl => self.incl_rad,
            Element::Bh => self.bh,
        }
    }

    /// Rebuild the vector components from (bf, D, I). Inverse of
    /// [`derive_elements`] for non-degenerate samples.
    pub fn vector_from_elements(&self) -> FieldVector {
        FieldVector {
            bx: self.bf * self.incl_rad.cos() * self.decl_rad.cos(),
            by: self.bf * self.incl_rad.cos() * self.decl_rad.sin(),
            bz: self.bf * self.incl_rad.sin(),
        }
    }
}

/// Compute all seven elements from the three vector components.
///
/// D is taken as `atan2(by, bx)` rather than an arccos form: the arccos loses
/// the sign of westward declination. Vertical fields (bh ~ 0) set the
/// degenerate flag and report D = 0 instead of NaN.
pub fn derive_elements(v: FieldVector) -> Result<FieldSample> {
    if !(v.bx.is_finite() && v.by.is_finite() && v.bz.is_finite()) {
        return Err(Error::NonFinite("field vector component"));
    }
    let bh = v.bx.hypot(v.by);
    let bf = bh.hypot(v.bz);
    let incl_rad = v.bz.atan2(bh);
    let degenerate = bh < DEGENERATE_BH_NT;
    let decl_rad = if degenerate { 0.0 } else { v.by.atan2(v.bx) };
    Ok(FieldSample {
        bf,
        bh,
        bx: v.bx,
        by: v.by,
        bz: v.bz,
        decl_rad,
        incl_rad,
        degenerate_horizontal: degenerate,
    })
}

/// Per-km horizontal gradient of one element: `east` pairs with the x (east)
/// axis of the local frame, `north` with y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGradient {
    pub east_per_km: f64,
    pub north_per_km: f64,
    /// True when a coverage boundary forced a one-sided difference.
    pub one_sided: bool,
}

/// A source of geomagnetic field values over a rectangular coverage area.
///
/// Providers are immutable after construction; all methods are pure and safe
/// to call from any number of threads.
pub trait FieldProvider: Sync + Send {
    fn coverage(&self) -> RegionBounds;

    fn sample(&self, p: &GeoPoint) -> Result<FieldSample>;

    fn contains(&self, p: &GeoPoint) -> bool {
        self.coverage().contains(p)
    }
}

impl<T: FieldProvider + ?Sized> FieldProvider for &T {
    fn coverage(&self) -> RegionBounds {
        (**self).coverage()
    }
    fn sample(&self, p: &GeoPoint) -> Result<FieldSample> {
        (**self).sample(p)
    }
    fn contains(&self, p: &GeoPoint) -> bool {
        (**self).contains(p)
    }
}

/// Central-difference gradient of `element` at `p`, with step `h_km` mapped to
/// degree offsets through `frame`. Falls back to a one-sided difference along
/// an axis whose far neighbor leaves coverage (flagged); errors only when both
/// neighbors on an axis are out of coverage.
pub fn gradient(
    provider: &dyn FieldProvider,
    frame: &LocalFrame,
    p: &GeoPoint,
    element: Element,
    h_km: f64,
) -> Result<ElementGradient> {
    let (x, y) = frame.to_km(p);
    let value_at = |x_km: f64, y_km: f64| -> Option<f64> {
        let q = frame.to_geo(x_km, y_km);
        if !provider.contains(&q) {
            return None;
        }
        provider.sample(&q).ok().map(|s| s.element(element))
    };
    let center = || -> Result<f64> {
        Ok(provider.sample(p)?.element(element))
    };

    let mut one_sided = false;
    let mut axis = |dx: f64, dy: f64| -> Result<f64> {
        let plus = value_at(x + dx * h_km, y + dy * h_km);
        let minus = value_at(x - dx * h_km, y - dy * h_km);
        match (plus, minus) {
            (Some(a), Some(b)) => Ok(element.delta(a, b) / (2.0 * h_km)),
            (Some(a), None) => {
                one_sided = true;
                Ok(element.delta(a, center()?) / h_km)
            }
            (None, Some(b)) => {
                one_sided = true;
                Ok(element.delta(center()?, b) / h_km)
            }
            (None, None) => Err(Error::OutOfCoverage {
                lon_deg: p.lon_deg,
                lat_deg: p.lat_deg,
            }),
        }
    };

    let east_per_km = axis(1.0, 0.0)?;
    let north_per_km = axis(0.0, 1.0)?;
    Ok(ElementGradient {
        east_per_km,
        north_per_km,
        one_sided,
    })
}
