//! Synthetic field whose observable elements are affine functions of local
//! kilometers. Objective landscapes, gradients, and optimal headings are all
//! known in closed form, which makes this the workhorse backend for oracle
//! tests and calibration experiments.

use crate::error::{Error, Result};
use crate::field::{FieldProvider, FieldSample, FieldVector};
use crate::geo::{GeoPoint, LocalFrame, RegionBounds};

/// Element values: `value = base + grad.0 * x_km + grad.1 * y_km` in the
/// field's own frame (x east, y north).
#[derive(Debug, Clone)]
pub struct LinearElementField {
    coverage: RegionBounds,
    frame: LocalFrame,
    pub decl_base: f64,
    pub decl_grad: (f64, f64),
    pub incl_base: f64,
    pub incl_grad: (f64, f64),
    pub bh_base: f64,
    pub bh_grad: (f64, f64),
}

impl LinearElementField {
    pub fn new(coverage: RegionBounds) -> Result<Self> {
        coverage.validate()?;
        let frame = LocalFrame::for_region(&coverage);
        Ok(LinearElementField {
            coverage,
            frame,
            decl_base: 0.0,
            decl_grad: (0.0, 0.0),
            incl_base: -0.5,
            incl_grad: (0.0, 0.0),
            bh_base: 30000.0,
            bh_grad: (0.0, 0.0),
        })
    }

    pub fn frame(&self) -> &LocalFrame {
        &self.frame
    }

    pub fn decl(mut self, base: f64, grad: (f64, f64)) -> Self {
        self.decl_base = base;
        self.decl_grad = grad;
        self
    }

    pub fn incl(mut self, base: f64, grad: (f64, f64)) -> Self {
        self.incl_base = base;
        self.incl_grad = grad;
        self
    }

    pub fn bh(mut self, base: f64, grad: (f64, f64)) -> Self {
        self.bh_base = base;
        self.bh_grad = grad;
        self
    }

    fn elements_at(&self, p: &GeoPoint) -> (f64, f64, f64) {
        let (x, y) = self.frame.to_km(p);
        (
            self.decl_base + self.decl_grad.0 * x + self.decl_grad.1 * y,
            self.incl_base + self.incl_grad.0 * x + self.incl_grad.1 * y,
            self.bh_base + self.bh_grad.0 * x + self.bh_grad.1 * y,
        )
    }
}

impl FieldProvider for LinearElementField {
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
        let (d, i, bh) = self.elements_at(p);
        debug_assert!(
            d.abs() < std::f64::consts::PI && i.abs() < 1.5 && bh > 0.0,
            "linear field parameters left the element ranges"
        );
        // Build the unique consistent vector for (D, I, BH).
        let v = FieldVector {
            bx: bh * d.cos(),
            by: bh * d.sin(),
            bz: bh * i.tan(),
        };
        let mut s = crate::field::derive_elements(v)?;
        // Kill representation round-off so tests see the affine values exactly.
        s.decl_rad = d;
        s.incl_rad = i;
        s.bh = bh;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{gradient, Element};

    #[test]
    fn elements_are_exactly_affine() {
        let region = RegionBounds::new(0.0, 5.0, 0.0, 5.0).unwrap();
        let f = LinearElementField::new(region)
            .unwrap()
            .decl(0.01, (1e-4, -2e-4))
            .incl(-0.4, (3e-5, 1e-5))
            .bh(30000.0, (2.0, -1.0));
        let frame = *f.frame();
        let p = frame.to_geo(37.5, 112.25);
        let s = f.sample(&p).unwrap();
        assert!((s.decl_rad - (0.01 + 1e-4 * 37.5 - 2e-4 * 112.25)).abs() < 1e-12);
        assert!((s.bh - (30000.0 + 2.0 * 37.5 - 112.25)).abs() < 1e-9);
        for (e, want) in [
            (Element::Decl, (1e-4, -2e-4)),
            (Element::Incl, (3e-5, 1e-5)),
            (Element::Bh, (2.0, -1.0)),
        ] {
            let g = gradient(&f, &frame, &p, e, 1.0).unwrap();
            assert!((g.east_per_km - want.0).abs() < 1e-9);
            assert!((g.north_per_km - want.1).abs() < 1e-9);
        }
    }

    #[test]
    fn sample_and_vector_stay_consistent() {
        let region = RegionBounds::new(0.0, 5.0, 0.0, 5.0).unwrap();
        let f = LinearElementField::new(region)
            .unwrap()
            .decl(0.2, (5e-4, 0.0))
            .bh(28000.0, (0.0, 3.0));
        let p = f.frame().to_geo(100.0, 200.0);
        let s = f.sample(&p).unwrap();
        let v = s.vector_from_elements();
        assert!((v.bx - s.bx).abs() / s.bf < 1e-9);
        assert!((v.by - s.by).abs() / s.bf < 1e-9);
        assert!((v.bz - s.bz).abs() / s.bf < 1e-9);
    }
}
