//! Regular lon/lat grid of field vectors with bilinear interpolation.
//!
//! CSV format: header `lon_deg,lat_deg,bx_nt,by_nt,bz_nt`, rows sorted
//! lat-major then lon, `#` starts a comment line. Values use a decimal point
//! and no thousands separators.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{derive_elements, FieldProvider, FieldSample, FieldVector};
use crate::geo::{GeoPoint, RegionBounds};

#[derive(Debug, Clone)]
pub struct FieldGrid {
    /// Node coordinates as written in the file; kept verbatim so that saving
    /// and loading never perturbs samples.
    lon_axis: Vec<f64>,
    lat_axis: Vec<f64>,
    dlon_deg: f64,
    dlat_deg: f64,
    /// Lat-major: index = ilat * nlon + ilon.
    cells: Vec<FieldVector>,
}

impl FieldGrid {
    pub fn new(
        origin: GeoPoint,
        dlon_deg: f64,
        dlat_deg: f64,
        nlon: usize,
        nlat: usize,
        cells: Vec<FieldVector>,
    ) -> Result<Self> {
        let lon_axis = (0..nlon)
            .map(|i| origin.lon_deg + i as f64 * dlon_deg)
            .collect();
        let lat_axis = (0..nlat)
            .map(|j| origin.lat_deg + j as f64 * dlat_deg)
            .collect();
        Self::from_axes(lon_axis, lat_axis, cells)
    }

    fn from_axes(lon_axis: Vec<f64>, lat_axis: Vec<f64>, cells: Vec<FieldVector>) -> Result<Self> {
        let (nlon, nlat) = (lon_axis.len(), lat_axis.len());
        if nlon < 2 || nlat < 2 {
            return Err(Error::GridGeometry(format!(
                "need at least 2x2 nodes, got {nlon}x{nlat}"
            )));
        }
        if cells.len() != nlon * nlat {
            return Err(Error::GridGeometry(format!(
                "cell count {} does not match {nlon}x{nlat}",
                cells.len()
            )));
        }
        axis_uniform("lon", &lon_axis)?;
        axis_uniform("lat", &lat_axis)?;
        GeoPoint::new(lon_axis[0], lat_axis[0])?;
        GeoPoint::new(*lon_axis.last().unwrap(), *lat_axis.last().unwrap())?;
        for (i, c) in cells.iter().enumerate() {
            if !(c.bx.is_finite() && c.by.is_finite() && c.bz.is_finite()) {
                return Err(Error::GridGeometry(format!(
                    "non-finite component in cell {i}"
                )));
            }
        }
        Ok(FieldGrid {
            dlon_deg: lon_axis[1] - lon_axis[0],
            dlat_deg: lat_axis[1] - lat_axis[0],
            lon_axis,
            lat_axis,
            cells,
        })
    }

    /// Build a grid by sampling a closed-form component function over a region.
    /// `f(lon_deg, lat_deg) -> FieldVector`.
    pub fn from_fn(
        region: &RegionBounds,
        nlon: usize,
        nlat: usize,
        f: impl Fn(f64, f64) -> FieldVector,
    ) -> Result<Self> {
        if nlon < 2 || nlat < 2 {
            return Err(Error::GridGeometry("need at least 2x2 nodes".into()));
        }
        let dlon = (region.lon_max - region.lon_min) / (nlon - 1) as f64;
        let dlat = (region.lat_max - region.lat_min) / (nlat - 1) as f64;
        let mut cells = Vec::with_capacity(nlon * nlat);
        for ilat in 0..nlat {
            for ilon in 0..nlon {
                let lon = region.lon_min + ilon as f64 * dlon;
                let lat = region.lat_min + ilat as f64 * dlat;
                cells.push(f(lon, lat));
            }
        }
        FieldGrid::new(
            GeoPoint {
                lon_deg: region.lon_min,
                lat_deg: region.lat_min,
            },
            dlon,
            dlat,
            nlon,
            nlat,
            cells,
        )
    }

    pub fn nlon(&self) -> usize {
        self.lon_axis.len()
    }

    pub fn nlat(&self) -> usize {
        self.lat_axis.len()
    }

    pub fn node(&self, ilon: usize, ilat: usize) -> FieldVector {
        self.cells[ilat * self.lon_axis.len() + ilon]
    }

    pub fn node_point(&self, ilon: usize, ilat: usize) -> GeoPoint {
        GeoPoint {
            lon_deg: self.lon_axis[ilon],
            lat_deg: self.lat_axis[ilat],
        }
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(BufReader::new(file))
    }

    pub fn parse(reader: impl Read) -> Result<Self> {
        let reader = BufReader::new(reader);
        let mut rows: Vec<(f64, f64, FieldVector)> = Vec::new();
        let mut header_seen = false;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::GridParse {
                line: line_no,
                msg: e.to_string(),
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if !header_seen {
                let cols: Vec<&str> = trimmed.split(',').map(str::trim).collect();
                if cols != ["lon_deg", "lat_deg", "bx_nt", "by_nt", "bz_nt"] {
                    return Err(Error::GridParse {
                        line: line_no,
                        msg: format!("unexpected header `{trimmed}`"),
                    });
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(Error::GridParse {
                    line: line_no,
                    msg: format!("expected 5 columns, got {}", fields.len()),
                });
            }
            let mut vals = [0.0f64; 5];
            for (i, f) in fields.iter().enumerate() {
                vals[i] = f.parse().map_err(|_| Error::GridParse {
                    line: line_no,
                    msg: format!("cannot parse `{f}` as a number"),
                })?;
            }
            rows.push((
                vals[0],
                vals[1],
                FieldVector {
                    bx: vals[2],
                    by: vals[3],
                    bz: vals[4],
                },
            ));
        }
        if !header_seen {
            return Err(Error::GridParse {
                line: 0,
                msg: "missing header".into(),
            });
        }
        Self::from_rows(rows)
    }

    fn from_rows(rows: Vec<(f64, f64, FieldVector)>) -> Result<Self> {
        if rows.len() < 4 {
            return Err(Error::GridGeometry(format!(
                "need at least 4 rows for a 2x2 grid, got {}",
                rows.len()
            )));
        }
        // First lat block defines the lon axis.
        let lat0 = rows[0].1;
        let lons: Vec<f64> = rows
            .iter()
            .take_while(|r| r.1 == lat0)
            .map(|r| r.0)
            .collect();
        let nlon = lons.len();
        if nlon < 2 {
            return Err(Error::GridGeometry(
                "fewer than 2 longitude nodes in first latitude block".into(),
            ));
        }
        if rows.len() % nlon != 0 {
            return Err(Error::GridGeometry(format!(
                "row count {} is not a multiple of longitude count {nlon} (missing cell?)",
                rows.len()
            )));
        }
        let nlat = rows.len() / nlon;
        if nlat < 2 {
            return Err(Error::GridGeometry("fewer than 2 latitude nodes".into()));
        }
        axis_uniform("lon", &lons)?;
        let lats: Vec<f64> = (0..nlat).map(|i| rows[i * nlon].1).collect();
        axis_uniform("lat", &lats)?;
        // Every row must sit exactly on the lattice, lat-major then lon.
        for (i, row) in rows.iter().enumerate() {
            let expect_lon = lons[i % nlon];
            let expect_lat = lats[i / nlon];
            if row.0 != expect_lon || row.1 != expect_lat {
                return Err(Error::GridGeometry(format!(
                    "row {i} at ({}, {}) breaks lat-major ordering; expected ({expect_lon}, {expect_lat})",
                    row.0, row.1
                )));
            }
        }
        let cells = rows.into_iter().map(|r| r.2).collect();
        FieldGrid::from_axes(lons, lats, cells)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
        writeln!(w, "lon_deg,lat_deg,bx_nt,by_nt,bz_nt").map_err(io_err)?;
        for ilat in 0..self.nlat() {
            for ilon in 0..self.nlon() {
                let p = self.node_point(ilon, ilat);
                let c = self.node(ilon, ilat);
                // Default float formatting round-trips f64 exactly.
                writeln!(w, "{},{},{},{},{}", p.lon_deg, p.lat_deg, c.bx, c.by, c.bz)
                    .map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    fn cell_index(axis: &[f64], step: f64, x: f64) -> usize {
        let guess = ((x - axis[0]) / step).floor() as isize;
        let mut i = guess.clamp(0, axis.len() as isize - 2) as usize;
        // Axis values are file-verbatim; correct any ulp-level misplacement.
        while i > 0 && x < axis[i] {
            i -= 1;
        }
        while i + 2 < axis.len() && x >= axis[i + 1] {
            i += 1;
        }
        i
    }

    fn interpolate(&self, p: &GeoPoint) -> FieldVector {
        let i = Self::cell_index(&self.lon_axis, self.dlon_deg, p.lon_deg);
        let j = Self::cell_index(&self.lat_axis, self.dlat_deg, p.lat_deg);
        let fu = (p.lon_deg - self.lon_axis[i]) / (self.lon_axis[i + 1] - self.lon_axis[i]);
        let fv = (p.lat_deg - self.lat_axis[j]) / (self.lat_axis[j + 1] - self.lat_axis[j]);
        let c00 = self.node(i, j);
        let c10 = self.node(i + 1, j);
        let c01 = self.node(i, j + 1);
        let c11 = self.node(i + 1, j + 1);
        let lerp2 = |a: f64, b: f64, c: f64, d: f64| {
            let lo = a + (b - a) * fu;
            let hi = c + (d - c) * fu;
            lo + (hi - lo) * fv
        };
        FieldVector {
            bx: lerp2(c00.bx, c10.bx, c01.bx, c11.bx),
            by: lerp2(c00.by, c10.by, c01.by, c11.by),
            bz: lerp2(c00.bz, c10.bz, c01.bz, c11.bz),
        }
    }
}

fn axis_uniform(name: &str, vals: &[f64]) -> Result<()> {
    let step = vals[1] - vals[0];
    if !(step > 0.0) {
        return Err(Error::GridGeometry(format!(
            "{name} axis not strictly increasing near {}",
            vals[0]
        )));
    }
    for w in vals.windows(2) {
        let d = w[1] - w[0];
        if !(d > 0.0) {
            return Err(Error::GridGeometry(format!(
                "{name} axis not strictly increasing near {}",
                w[0]
            )));
        }
        if (d - step).abs() > 1e-9 * step.abs().max(1.0) {
            return Err(Error::GridGeometry(format!(
                "{name} axis spacing not uniform: {step} vs {d}"
            )));
        }
    }
    Ok(())
}

impl FieldProvider for FieldGrid {
    fn coverage(&self) -> RegionBounds {
        RegionBounds {
            lon_min: self.lon_axis[0],
            lon_max: *self.lon_axis.last().unwrap(),
            lat_min: self.lat_axis[0],
            lat_max: *self.lat_axis.last().unwrap(),
        }
    }

    fn sample(&self, p: &GeoPoint) -> Result<FieldSample> {
        if !self.contains(p) {
            return Err(Error::OutOfCoverage {
                lon_deg: p.lon_deg,
                lat_deg: p.lat_deg,
            });
        }
        derive_elements(self.interpolate(p))
    }
}
