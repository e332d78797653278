//! Navigation tasks: generation by rejection sampling and the goal-radius
//! calibration that maps the objective threshold to a physical distance.

use serde::{Deserialize, Serialize};

use crate::env::objective;
use crate::error::{Error, Result};
use crate::field::{FieldProvider, ALL_ELEMENTS};
use crate::geo::{GeoPoint, LocalFrame, RegionBounds};
use crate::rng::Rng;

/// One navigation problem: reach `destination` from `origin` before
/// `max_steps` run out; success is objective < `zeta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavTask {
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    pub zeta: f64,
    pub max_steps: u32,
}

impl NavTask {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0) {
            return Err(Error::Config(format!("zeta must be positive, got {}", self.zeta)));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if self.origin == self.destination {
            return Err(Error::DegenerateTask("origin equals destination".into()));
        }
        Ok(())
    }
}

/// Smallest square deficit denominator accepted by the objective.
pub const MIN_DENOMINATOR: f64 = 1e-18;

/// Per-element lower bounds on the |destination - origin| deficit a task must
/// exhibit. The objective divides by these deficits squared, so floors keep
/// its scale bounded; zero floors fall back to the bare denominator guard.
pub type DeficitFloors = [f64; 3];

pub const NO_FLOORS: DeficitFloors = [0.0; 3];

/// Generate `n` tasks with both endpoints uniform in `region` and planar
/// distance within `[d_min_km, d_max_km]`. Tasks whose element deficits fall
/// below the floors (or the absolute denominator guard) are rejected and
/// resampled; gives up with [`Error::SamplingExhausted`] after a bounded
/// number of attempts.
#[allow(clippy::too_many_arguments)]
pub fn generate_tasks(
    provider: &dyn FieldProvider,
    frame: &LocalFrame,
    region: &RegionBounds,
    n: usize,
    d_min_km: f64,
    d_max_km: f64,
    zeta: f64,
    max_steps: u32,
    floors: &DeficitFloors,
    rng: &mut Rng,
) -> Result<Vec<NavTask>> {
    if !(d_min_km < d_max_km) || !(d_min_km >= 0.0) {
        return Err(Error::Config(format!(
            "bad distance window [{d_min_km}, {d_max_km}]"
        )));
    }
    if !provider.coverage().contains_region(region) {
        return Err(Error::Config(
            "task region is not inside the field coverage".into(),
        ));
    }
    let max_attempts = 10_000 + 2_000 * n;
    let mut tasks = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while tasks.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::SamplingExhausted { attempts });
        }
        let origin = region.sample_uniform(rng);
        let destination = region.sample_uniform(rng);
        let d = frame.distance_km(&origin, &destination);
        if d < d_min_km || d > d_max_km {
            continue;
        }
        let (Ok(so), Ok(sd)) = (provider.sample(&origin), provider.sample(&destination)) else {
            continue;
        };
        if so.degenerate_horizontal || sd.degenerate_horizontal {
            continue;
        }
        let degenerate = ALL_ELEMENTS.iter().enumerate().any(|(k, &e)| {
            let deficit = e.delta(sd.element(e), so.element(e));
            deficit * deficit <= MIN_DENOMINATOR || deficit.abs() < floors[k]
        });
        if degenerate {
            continue;
        }
        let task = NavTask {
            origin,
            destination,
            zeta,
            max_steps,
        };
        debug_assert!((objective(&so, &sd, &so).unwrap() - 3.0).abs() < 1e-12);
        tasks.push(task);
    }
    Ok(tasks)
}

/// Map the success threshold to a physical goal radius for a region: the
/// largest distance from a destination at which the objective still dips
/// below `zeta`, probed along rays from sampled destinations. Successful
/// episodes always end within this radius of the destination.
pub fn calibrate_goal_radius(
    provider: &dyn FieldProvider,
    frame: &LocalFrame,
    region: &RegionBounds,
    zeta: f64,
    n_tasks: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let tasks = generate_tasks(
        provider, frame, region, n_tasks, 30.0, 50.0, zeta, 250, &NO_FLOORS, rng,
    )?;
    let n_rays = 16;
    let mut worst: f64 = 0.0;
    for task in &tasks {
        let so = provider.sample(&task.origin)?;
        let sd = provider.sample(&task.destination)?;
        let (dx, dy) = frame.to_km(&task.destination);
        let d0 = frame.distance_km(&task.origin, &task.destination);
        for ray in 0..n_rays {
            let theta = ray as f64 / n_rays as f64 * std::f64::consts::TAU;
            let f_at = |r: f64| -> Option<f64> {
                let p = frame.to_geo(dx + r * theta.cos(), dy + r * theta.sin());
                if !provider.contains(&p) {
                    return None;
                }
                let s = provider.sample(&p).ok()?;
                objective(&s, &sd, &so).ok()
            };
            // Grow until the objective exceeds zeta, then bisect the crossing.
            let mut lo = 0.0;
            let mut hi = 0.05;
            let mut crossed = false;
            while hi <= 2.0 * d0 {
                match f_at(hi) {
                    Some(f) if f < zeta => {
                        lo = hi;
                        hi *= 2.0;
                    }
                    Some(_) => {
                        crossed = true;
                        break;
                    }
                    None => break,
                }
            }
            if !crossed {
                worst = worst.max(lo);
                continue;
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                match f_at(mid) {
                    Some(f) if f < zeta => lo = mid,
                    _ => hi = mid,
                }
            }
            worst = worst.max(hi);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{DipoleField, DipoleFieldSpec};
    use crate::rng::rng_from;

    fn setup() -> (DipoleField, RegionBounds, LocalFrame) {
        let field = DipoleField::new(DipoleFieldSpec::default()).unwrap();
        let region = RegionBounds::new(90.0, 95.0, -15.0, -10.0).unwrap();
        let frame = LocalFrame::for_region(&region);
        (field, region, frame)
    }

    #[test]
    fn distances_stay_in_window() {
        let (field, region, frame) = setup();
        let mut rng = rng_from(11, "tasks");
        let tasks =
            generate_tasks(
                &field, &frame, &region, 1000, 30.0, 50.0, 0.05, 250, &NO_FLOORS, &mut rng,
            )
            .unwrap();
        assert_eq!(tasks.len(), 1000);
        for t in &tasks {
            let d = frame.distance_km(&t.origin, &t.destination);
            assert!((30.0..=50.0).contains(&d), "distance {d} outside window");
            assert!(region.contains(&t.origin) && region.contains(&t.destination));
        }
    }

    #[test]
    fn infeasible_window_exhausts() {
        let (field, region, frame) = setup();
        let mut rng = rng_from(11, "tasks/infeasible");
        // The region spans ~550 km; no pair can be 5000 km apart.
        let r = generate_tasks(
            &field, &frame, &region, 1, 5000.0, 5001.0, 0.05, 250, &NO_FLOORS, &mut rng,
        );
        assert!(matches!(r, Err(Error::SamplingExhausted { .. })));
    }

    #[test]
    fn same_seed_same_tasks() {
        let (field, region, frame) = setup();
        let gen = |label: &str| {
            let mut rng = rng_from(7, label);
            generate_tasks(&field, &frame, &region, 50, 30.0, 50.0, 0.05, 250, &NO_FLOORS, &mut rng)
                .unwrap()
        };
        let a = gen("tasks/det");
        let b = gen("tasks/det");
        assert_eq!(a, b);
    }

    #[test]
    fn goal_radius_is_sane_for_dipole_region() {
        let (field, region, frame) = setup();
        let mut rng = rng_from(3, "calibration");
        let r = calibrate_goal_radius(&field, &frame, &region, 0.05, 8, &mut rng).unwrap();
        // The dipole's I and BH gradients are nearly collinear, so the
        // objective's sublevel sets are elongated valleys; the worst-ray
        // radius runs tens of km at zeta = 0.05, but stays below the task
        // length scale.
        assert!(r > 1.0 && r < 45.0, "calibrated radius {r} km");
        // Tighter threshold gives a tighter radius, roughly like sqrt(zeta).
        let mut rng = rng_from(3, "calibration");
        let r_tight = calibrate_goal_radius(&field, &frame, &region, 0.005, 8, &mut rng).unwrap();
        assert!(r_tight < 0.5 * r, "tight radius {r_tight} vs {r}");
    }
}
