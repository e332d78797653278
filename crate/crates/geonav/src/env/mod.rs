//! Goal-conditioned navigation environment: planar vehicle kinematics over a
//! field provider, the normalized element-deficit objective, observation
//! construction, and the episode lifecycle.

mod task;

pub use task::{
    calibrate_goal_radius, generate_tasks, DeficitFloors, NavTask, MIN_DENOMINATOR, NO_FLOORS,
};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{gradient, FieldProvider, FieldSample, ALL_ELEMENTS};
use crate::geo::{wrap_angle, GeoPoint, LocalFrame, RegionBounds};
use crate::reward::{predicted_heading, total_reward, RewardConfig};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Success threshold on the objective.
    pub zeta: f64,
    pub max_steps: u32,
    /// Finite-difference step for element gradients, km.
    pub gradient_step_km: f64,
    /// Turn increment bound, radians (clip is symmetric).
    pub psi_max_rad: f64,
    /// Step distance bound, km.
    pub dist_max_km: f64,
    /// The vehicle operates inside its region plus this margin; leaving it
    /// ends the episode as a coverage failure. Keeps the objective bounded
    /// even over analytically unbounded field backends.
    #[serde(default = "default_operating_margin")]
    pub operating_margin_deg: f64,
}

fn default_operating_margin() -> f64 {
    0.5
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            zeta: 0.05,
            max_steps: 250,
            gradient_step_km: 1.0,
            psi_max_rad: std::f64::consts::FRAC_PI_2,
            dist_max_km: 50.0,
            operating_margin_deg: default_operating_margin(),
        }
    }
}

/// Turn increment and travel distance for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub psi_rad: f64,
    pub dist_km: f64,
}

/// Affine map between physical actions and the normalized [-1, 1]^2 action
/// space used by the learners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionMap {
    pub psi_max_rad: f64,
    pub dist_max_km: f64,
}

impl ActionMap {
    pub fn from_env(cfg: &EnvConfig) -> Self {
        ActionMap {
            psi_max_rad: cfg.psi_max_rad,
            dist_max_km: cfg.dist_max_km,
        }
    }

    pub fn normalize(&self, a: &Action) -> [f64; 2] {
        [
            (a.psi_rad / self.psi_max_rad).clamp(-1.0, 1.0),
            (2.0 * a.dist_km / self.dist_max_km - 1.0).clamp(-1.0, 1.0),
        ]
    }

    pub fn denormalize(&self, u: &[f64; 2]) -> Action {
        Action {
            psi_rad: u[0].clamp(-1.0, 1.0) * self.psi_max_rad,
            dist_km: (u[1].clamp(-1.0, 1.0) + 1.0) * 0.5 * self.dist_max_km,
        }
    }
}

/// Six normalized reals: the tracked elements at the current position, then
/// at the destination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; 6]);

/// Affine min-max normalization of the three observed elements, fitted once
/// over the super-region so the same map is valid in every training region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl ObsNormalizer {
    /// Fit from provider samples on an `n x n` lattice over `region`.
    pub fn fit(provider: &dyn FieldProvider, region: &RegionBounds, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config("normalizer lattice needs n >= 2".into()));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for i in 0..n {
            for j in 0..n {
                let p = GeoPoint {
                    lon_deg: region.lon_min
                        + (region.lon_max - region.lon_min) * i as f64 / (n - 1) as f64,
                    lat_deg: region.lat_min
                        + (region.lat_max - region.lat_min) * j as f64 / (n - 1) as f64,
                };
                let s = provider.sample(&p)?;
                for (k, &e) in ALL_ELEMENTS.iter().enumerate() {
                    let v = s.element(e);
                    lo[k] = lo[k].min(v);
                    hi[k] = hi[k].max(v);
                }
            }
        }
        for k in 0..3 {
            if !(hi[k] - lo[k] > 1e-12) {
                return Err(Error::Config(format!(
                    "element {} is constant over the normalization region",
                    ALL_ELEMENTS[k].name()
                )));
            }
        }
        Ok(ObsNormalizer { lo, hi })
    }

    pub fn normalize(&self, s: &FieldSample) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (k, &e) in ALL_ELEMENTS.iter().enumerate() {
            out[k] = 2.0 * (s.element(e) - self.lo[k]) / (self.hi[k] - self.lo[k]) - 1.0;
        }
        out
    }

    pub fn denormalize(&self, v: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = self.lo[k] + (v[k] + 1.0) * 0.5 * (self.hi[k] - self.lo[k]);
        }
        out
    }
}

/// Normalized objective: sum over the three observed elements of the squared
/// remaining deficit divided by the squared origin deficit. 3 at the origin,
/// 0 at the destination.
pub fn objective(current: &FieldSample, dest: &FieldSample, origin: &FieldSample) -> Result<f64> {
    let mut f = 0.0;
    for &e in ALL_ELEMENTS.iter() {
        let denom = e.delta(dest.element(e), origin.element(e));
        let denom2 = denom * denom;
        if denom2 <= MIN_DENOMINATOR {
            return Err(Error::DegenerateTask(format!(
                "origin deficit of {} underflows",
                e.name()
            )));
        }
        let num = e.delta(dest.element(e), current.element(e));
        f += num * num / denom2;
    }
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Goal,
    StepBudget,
    OutOfCoverage,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Goal => "goal",
            Termination::StepBudget => "step_budget",
            Termination::OutOfCoverage => "out_of_coverage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x_km: f64,
    pub y_km: f64,
    pub heading_rad: f64,
    pub step: u32,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward_total: f64,
    pub reward_extrinsic: f64,
    pub reward_intrinsic: f64,
    pub done: bool,
    pub termination: Option<Termination>,
    /// Diagnostics only; never fed to policies.
    pub true_position: GeoPoint,
    /// Objective value after the step (unchanged on out-of-coverage).
    pub objective: f64,
    /// The parallel-approach prediction used for the intrinsic term, if any.
    pub predicted_heading: Option<f64>,
}

struct Episode {
    task: NavTask,
    origin_sample: FieldSample,
    dest_sample: FieldSample,
    dest_obs: [f64; 3],
    state: VehicleState,
    f_prev: f64,
    last_obs: Observation,
    done: bool,
}

/// One environment instance owns one episode at a time. Many instances may
/// run concurrently over a shared immutable provider.
pub struct NavEnv<'p> {
    provider: &'p dyn FieldProvider,
    frame: LocalFrame,
    normalizer: ObsNormalizer,
    cfg: EnvConfig,
    reward_cfg: RewardConfig,
    operating: RegionBounds,
    episode: Option<Episode>,
}

impl<'p> NavEnv<'p> {
    pub fn new(
        provider: &'p dyn FieldProvider,
        region: &RegionBounds,
        normalizer: ObsNormalizer,
        cfg: EnvConfig,
        reward_cfg: RewardConfig,
    ) -> Result<Self> {
        if !provider.coverage().contains_region(region) {
            return Err(Error::Config(
                "environment region is not inside field coverage".into(),
            ));
        }
        // Operating area: the region padded by the margin, never exceeding
        // the provider's coverage.
        let cov = provider.coverage();
        let m = cfg.operating_margin_deg;
        let operating = RegionBounds {
            lon_min: (region.lon_min - m).max(cov.lon_min),
            lon_max: (region.lon_max + m).min(cov.lon_max),
            lat_min: (region.lat_min - m).max(cov.lat_min),
            lat_max: (region.lat_max + m).min(cov.lat_max),
        };
        operating.validate()?;
        Ok(NavEnv {
            provider,
            frame: LocalFrame::for_region(region),
            normalizer,
            cfg,
            reward_cfg,
            operating,
            episode: None,
        })
    }

    /// The area the vehicle may occupy; leaving it terminates the episode.
    pub fn operating_region(&self) -> &RegionBounds {
        &self.operating
    }

    pub fn frame(&self) -> &LocalFrame {
        &self.frame
    }

    pub fn provider(&self) -> &'p dyn FieldProvider {
        self.provider
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward_cfg
    }

    pub fn action_map(&self) -> ActionMap {
        ActionMap::from_env(&self.cfg)
    }

    pub fn normalizer(&self) -> ObsNormalizer {
        self.normalizer
    }

    pub fn state(&self) -> Result<&VehicleState> {
        self.episode
            .as_ref()
            .map(|e| &e.state)
            .ok_or(Error::NoEpisode)
    }

    pub fn task(&self) -> Result<&NavTask> {
        self.episode
            .as_ref()
            .map(|e| &e.task)
            .ok_or(Error::NoEpisode)
    }

    pub fn objective_value(&self) -> Result<f64> {
        self.episode.as_ref().map(|e| e.f_prev).ok_or(Error::NoEpisode)
    }

    pub fn origin_sample(&self) -> Result<&FieldSample> {
        self.episode
            .as_ref()
            .map(|e| &e.origin_sample)
            .ok_or(Error::NoEpisode)
    }

    pub fn dest_sample(&self) -> Result<&FieldSample> {
        self.episode
            .as_ref()
            .map(|e| &e.dest_sample)
            .ok_or(Error::NoEpisode)
    }

    pub fn current_position(&self) -> Result<GeoPoint> {
        let e = self.episode.as_ref().ok_or(Error::NoEpisode)?;
        Ok(self.frame.to_geo(e.state.x_km, e.state.y_km))
    }

    fn observation(&self, current: &FieldSample, dest_obs: &[f64; 3]) -> Observation {
        let cur = self.normalizer.normalize(current);
        Observation([cur[0], cur[1], cur[2], dest_obs[0], dest_obs[1], dest_obs[2]])
    }

    /// Start an episode: vehicle at the task origin, heading due east.
    pub fn reset(&mut self, task: &NavTask) -> Result<(VehicleState, Observation)> {
        task.validate()?;
        for (name, p) in [("origin", &task.origin), ("destination", &task.destination)] {
            if !self.provider.contains(p) {
                return Err(Error::Config(format!(
                    "task {name} outside coverage: lon {}, lat {}",
                    p.lon_deg, p.lat_deg
                )));
            }
        }
        let origin_sample = self.provider.sample(&task.origin)?;
        let dest_sample = self.provider.sample(&task.destination)?;
        // Validates non-degeneracy; equals 3 by construction.
        let f0 = objective(&origin_sample, &dest_sample, &origin_sample)?;
        let (x, y) = self.frame.to_km(&task.origin);
        let state = VehicleState {
            x_km: x,
            y_km: y,
            heading_rad: 0.0,
            step: 0,
        };
        let dest_obs = {
            let d = self.normalizer.normalize(&dest_sample);
            [d[0], d[1], d[2]]
        };
        let obs = self.observation(&origin_sample, &dest_obs);
        self.episode = Some(Episode {
            task: *task,
            origin_sample,
            dest_sample,
            dest_obs,
            state,
            f_prev: f0,
            last_obs: obs,
            done: false,
        });
        Ok((state, obs))
    }

    /// Advance one step. The action is clipped to the kinematic bounds before
    /// it is applied.
    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        let cfg = self.cfg;
        let reward_cfg = self.reward_cfg;
        let frame = self.frame;
        let ep = self.episode.as_mut().ok_or(Error::NoEpisode)?;
        if ep.done {
            return Err(Error::EpisodeDone);
        }
        let psi = action.psi_rad.clamp(-cfg.psi_max_rad, cfg.psi_max_rad);
        let dist = action.dist_km.clamp(0.0, cfg.dist_max_km);
        if !psi.is_finite() || !dist.is_finite() {
            return Err(Error::NonFinite("action"));
        }

        // Parallel-approach prediction at the pre-step position. A zero-length
        // step has no course, so the intrinsic term only applies to moving
        // steps; this also keeps a parked vehicle from farming the alignment
        // bonus.
        let pre_pos = frame.to_geo(ep.state.x_km, ep.state.y_km);
        let lambda_pred = if matches!(reward_cfg.variant, crate::reward::RewardVariant::Shaped)
            && reward_cfg.beta != 0.0
            && dist > 0.0
        {
            let pair = reward_cfg.pair;
            let cur = self.provider.sample(&pre_pos)?;
            let g1 = gradient(self.provider, &frame, &pre_pos, pair.0, cfg.gradient_step_km);
            let g2 = gradient(self.provider, &frame, &pre_pos, pair.1, cfg.gradient_step_km);
            match (g1, g2) {
                (Ok(g1), Ok(g2)) => {
                    predicted_heading(&cur, &ep.dest_sample, &g1, &g2, pair).ok()
                }
                _ => None,
            }
        } else {
            None
        };

        let heading = wrap_angle(ep.state.heading_rad + psi);
        let x = ep.state.x_km + dist * heading.cos();
        let y = ep.state.y_km + dist * heading.sin();
        let position = frame.to_geo(x, y);
        let next_step = ep.state.step + 1;

        if !self.operating.contains(&position) || !self.provider.contains(&position) {
            ep.state = VehicleState {
                x_km: x,
                y_km: y,
                heading_rad: heading,
                step: next_step,
            };
            ep.done = true;
            return Ok(StepOutcome {
                obs: ep.last_obs,
                reward_total: 0.0,
                reward_extrinsic: 0.0,
                reward_intrinsic: 0.0,
                done: true,
                termination: Some(Termination::OutOfCoverage),
                true_position: position,
                objective: ep.f_prev,
                predicted_heading: lambda_pred,
            });
        }

        let sample = self.provider.sample(&position)?;
        let f_now = objective(&sample, &ep.dest_sample, &ep.origin_sample)?;
        let at_goal = f_now < ep.task.zeta;
        let termination = if at_goal {
            Some(Termination::Goal)
        } else if next_step >= ep.task.max_steps {
            Some(Termination::StepBudget)
        } else {
            None
        };
        let rewards = total_reward(at_goal, f_now, ep.f_prev, heading, lambda_pred, &reward_cfg);
        let obs = {
            let cur = self.normalizer.normalize(&sample);
            Observation([
                cur[0], cur[1], cur[2], ep.dest_obs[0], ep.dest_obs[1], ep.dest_obs[2],
            ])
        };

        ep.state = VehicleState {
            x_km: x,
            y_km: y,
            heading_rad: heading,
            step: next_step,
        };
        ep.f_prev = f_now;
        ep.last_obs = obs;
        ep.done = termination.is_some();

        Ok(StepOutcome {
            obs,
            reward_total: rewards.total,
            reward_extrinsic: rewards.extrinsic,
            reward_intrinsic: rewards.intrinsic,
            done: ep.done,
            termination,
            true_position: position,
            objective: f_now,
            predicted_heading: lambda_pred,
        })
    }
}

/// One row of the per-episode trajectory log.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryRow {
    pub step: u32,
    pub x_km: f64,
    pub y_km: f64,
    pub lon_deg: f64,
    pub lat_deg: f64,
    pub heading_rad: f64,
    pub psi_rad: f64,
    pub dist_km: f64,
    pub objective: f64,
    pub reward_ext: f64,
    pub reward_int: f64,
}

pub fn write_trajectory_csv(path: impl AsRef<Path>, rows: &[TrajectoryRow]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(f);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(
        w,
        "step,x_km,y_km,lon_deg,lat_deg,heading_rad,psi_rad,dist_km,F,reward_ext,reward_int"
    )
    .map_err(io_err)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.x_km,
            r.y_km,
            r.lon_deg,
            r.lat_deg,
            r.heading_rad,
            r.psi_rad,
            r.dist_km,
            r.objective,
            r.reward_ext,
            r.reward_int
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{DipoleField, DipoleFieldSpec, LinearElementField};
    use crate::reward::RewardVariant;
    use crate::rng::rng_from;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

    fn dipole_env() -> (DipoleField, RegionBounds) {
        let field = DipoleField::new(DipoleFieldSpec::default()).unwrap();
        let region = RegionBounds::new(90.0, 95.0, -15.0, -10.0).unwrap();
        (field, region)
    }

    fn make_env<'p>(provider: &'p dyn FieldProvider, region: &RegionBounds) -> NavEnv<'p> {
        let normalizer = ObsNormalizer::fit(provider, region, 17).unwrap();
        NavEnv::new(
            provider,
            region,
            normalizer,
            EnvConfig::default(),
            RewardConfig::default(),
        )
        .unwrap()
    }

    fn some_task(env: &NavEnv, seed_label: &str) -> NavTask {
        let mut rng = rng_from(17, seed_label);
        let region = RegionBounds::new(90.5, 94.5, -14.5, -10.5).unwrap();
        generate_tasks(
            env.provider(),
            env.frame(),
            &region,
            1,
            30.0,
            50.0,
            env.config().zeta,
            env.config().max_steps,
            &NO_FLOORS,
            &mut rng,
        )
        .unwrap()[0]
    }

    #[test]
    fn objective_fixed_points() {
        let (field, region) = dipole_env();
        let env = make_env(&field, &region);
        let task = some_task(&env, "objective");
        let so = field.sample(&task.origin).unwrap();
        let sd = field.sample(&task.destination).unwrap();
        assert!((objective(&so, &sd, &so).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(objective(&sd, &sd, &so).unwrap(), 0.0);
    }

    #[test]
    fn objective_halfway_case() {
        // Element values exactly halfway: each term (0.5)^2.
        let region = RegionBounds::new(0.0, 6.0, 0.0, 6.0).unwrap();
        let f = LinearElementField::new(region)
            .unwrap()
            .decl(0.0, (1e-4, 0.0))
            .incl(-0.4, (5e-5, 0.0))
            .bh(30000.0, (1.0, 0.0));
        let frame = *f.frame();
        let so = f.sample(&frame.to_geo(0.0, 0.0)).unwrap();
        let sd = f.sample(&frame.to_geo(40.0, 0.0)).unwrap();
        let sh = f.sample(&frame.to_geo(20.0, 0.0)).unwrap();
        assert!((objective(&sh, &sd, &so).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn kinematics_hand_cases() {
        let (field, region) = dipole_env();
        let mut env = make_env(&field, &region);
        let task = some_task(&env, "kinematics");
        let (s0, _) = env.reset(&task).unwrap();
        assert_eq!(s0.heading_rad, 0.0);

        // Straight east.
        env.step(&Action { psi_rad: 0.0, dist_km: 10.0 }).unwrap();
        let s1 = *env.state().unwrap();
        assert!((s1.x_km - (s0.x_km + 10.0)).abs() < 1e-12);
        assert!((s1.y_km - s0.y_km).abs() < 1e-12);
        assert_eq!(s1.heading_rad, 0.0);

        // Quarter turn left, then north.
        env.step(&Action { psi_rad: FRAC_PI_2, dist_km: 10.0 }).unwrap();
        let s2 = *env.state().unwrap();
        assert!((s2.x_km - s1.x_km).abs() < 1e-9);
        assert!((s2.y_km - (s1.y_km + 10.0)).abs() < 1e-12);
        assert!((s2.heading_rad - FRAC_PI_2).abs() < 1e-15);

        // Heading pi/4 then psi -pi/4 with sqrt(2): displacement (sqrt(2), 0).
        env.reset(&task).unwrap();
        env.step(&Action { psi_rad: FRAC_PI_4, dist_km: 0.0 }).unwrap();
        env.step(&Action { psi_rad: -FRAC_PI_4, dist_km: SQRT_2 }).unwrap();
        let s = *env.state().unwrap();
        assert!((s.x_km - (s0.x_km + SQRT_2)).abs() < 1e-12);
        assert!((s.y_km - s0.y_km).abs() < 1e-12);
        assert!(s.heading_rad.abs() < 1e-15);
    }

    #[test]
    fn step_displacement_is_norm_preserving() {
        let (field, region) = dipole_env();
        let mut env = make_env(&field, &region);
        let task = some_task(&env, "norm");
        env.reset(&task).unwrap();
        let mut rng = rng_from(23, "norm/actions");
        use rand::Rng as _;
        for _ in 0..50 {
            let before = *env.state().unwrap();
            let a = Action {
                psi_rad: rng.gen_range(-FRAC_PI_2..FRAC_PI_2),
                dist_km: rng.gen_range(0.0..5.0),
            };
            let out = env.step(&a).unwrap();
            if out.done {
                env.reset(&task).unwrap();
                continue;
            }
            let after = *env.state().unwrap();
            let d = ((after.x_km - before.x_km).powi(2) + (after.y_km - before.y_km).powi(2))
                .sqrt();
            assert!((d - a.dist_km).abs() < 1e-12);
        }
    }

    #[test]
    fn reset_is_deterministic_and_normalized() {
        let (field, region) = dipole_env();
        let mut env = make_env(&field, &region);
        let task = some_task(&env, "reset");
        let (s1, o1) = env.reset(&task).unwrap();
        let (s2, o2) = env.reset(&task).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(o1, o2);
        for v in o1.0 {
            assert!(v.is_finite());
            assert!((-1.0..=1.0).contains(&v), "obs component {v} out of range");
        }
    }

    #[test]
    fn normalizer_round_trips() {
        let (field, region) = dipole_env();
        let norm = ObsNormalizer::fit(&field, &region, 17).unwrap();
        let mut rng = rng_from(9, "normalizer");
        for _ in 0..100 {
            let p = region.sample_uniform(&mut rng);
            let s = field.sample(&p).unwrap();
            let n = norm.normalize(&s);
            let raw = norm.denormalize(&n);
            assert!((raw[0] - s.decl_rad).abs() < 1e-9);
            assert!((raw[1] - s.incl_rad).abs() < 1e-9);
            assert!((raw[2] - s.bh).abs() < 1e-6 * s.bh.abs().max(1.0));
        }
    }

    #[test]
    fn goal_termination_and_reward() {
        // Walk straight at the destination with an oracle bearing policy;
        // the episode must end in Goal with the 200 bonus.
        let (field, region) = dipole_env();
        let mut env = make_env(&field, &region);
        let task = some_task(&env, "goal");
        env.reset(&task).unwrap();
        let dest = task.destination;
        let mut last = None;
        for _ in 0..task.max_steps {
            let pos = env.current_position().unwrap();
            let bearing = env.frame().bearing_rad(&pos, &dest);
            let remaining = env.frame().distance_km(&pos, &dest);
            let heading = env.state().unwrap().heading_rad;
            let a = Action {
                psi_rad: wrap_angle(bearing - heading),
                dist_km: remaining.min(50.0),
            };
            let out = env.step(&a).unwrap();
            if out.done {
                last = Some(out);
                break;
            }
        }
        let out = last.expect("episode should terminate");
        assert_eq!(out.termination, Some(Termination::Goal));
        assert!(out.objective < task.zeta);
        assert_eq!(out.reward_extrinsic, 200.0);
    }

    #[test]
    fn out_of_coverage_terminates_as_failure() {
        let (field, region) = dipole_env();
        let mut env = make_env(&field, &region);
        let task = some_task(&env, "coverage");
        env.reset(&task).unwrap();
        // Turn north once, then march straight until the coverage cap.
        let mut terminated = None;
        let mut psi = FRAC_PI_2;
        for _ in 0..100000 {
            let out = env.step(&Action { psi_rad: psi, dist_km: 50.0 }).unwrap();
            psi = 0.0;
            if out.done {
                terminated = out.termination;
                break;
            }
        }
        // 250-step budget at 50 km/step reaches ~12500 km; the coverage edge
        // at lat 74 is ~9800 km away, so coverage must trip first.
        assert_eq!(terminated, Some(Termination::OutOfCoverage));
        assert!(env.step(&Action { psi_rad: 0.0, dist_km: 1.0 }).is_err());
    }

    #[test]
    fn step_budget_termination() {
        let (field, region) = dipole_env();
        let mut env = make_env(&field, &region);
        let task = some_task(&env, "budget");
        env.reset(&task).unwrap();
        let mut last = None;
        for _ in 0..task.max_steps {
            let out = env.step(&Action { psi_rad: 0.0, dist_km: 0.0 }).unwrap();
            if out.done {
                last = Some(out);
                break;
            }
        }
        let out = last.unwrap();
        assert_eq!(out.termination, Some(Termination::StepBudget));
        assert_eq!(env.state().unwrap().step, task.max_steps);
    }

    #[test]
    fn objective_symmetric_under_element_exchange() {
        // F sums per-element ratios; exchanging element roles leaves it fixed.
        // Construct two linear fields whose (D, I) assignments are swapped and
        // compare objectives at mirrored probe points.
        let region = RegionBounds::new(0.0, 6.0, 0.0, 6.0).unwrap();
        let f1 = LinearElementField::new(region)
            .unwrap()
            .decl(0.0, (1e-4, 0.0))
            .incl(-0.4, (0.0, 1e-4))
            .bh(30000.0, (1.0, 1.0));
        let f2 = LinearElementField::new(region)
            .unwrap()
            .decl(-0.4, (0.0, 1e-4))
            .incl(0.0, (1e-4, 0.0))
            .bh(30000.0, (1.0, 1.0));
        let fr = *f1.frame();
        let (o, d, c) = (fr.to_geo(10.0, 20.0), fr.to_geo(60.0, 50.0), fr.to_geo(33.0, 41.0));
        let fa = objective(
            &f1.sample(&c).unwrap(),
            &f1.sample(&d).unwrap(),
            &f1.sample(&o).unwrap(),
        )
        .unwrap();
        let fb = objective(
            &f2.sample(&c).unwrap(),
            &f2.sample(&d).unwrap(),
            &f2.sample(&o).unwrap(),
        )
        .unwrap();
        assert!((fa - fb).abs() < 1e-12);
    }

    #[test]
    fn shaped_variant_emits_intrinsic_term() {
        let (field, region) = dipole_env();
        let normalizer = ObsNormalizer::fit(&field, &region, 17).unwrap();
        let mut env = NavEnv::new(
            &field,
            &region,
            normalizer,
            EnvConfig::default(),
            RewardConfig {
                variant: RewardVariant::Shaped,
                ..Default::default()
            },
        )
        .unwrap();
        let task = some_task(&env, "shaped");
        env.reset(&task).unwrap();
        let out = env.step(&Action { psi_rad: 0.3, dist_km: 5.0 }).unwrap();
        assert!(out.predicted_heading.is_some());
        assert!(out.reward_intrinsic.abs() > 0.0);
        assert!(out.reward_intrinsic <= FRAC_PI_4 + 1e-12);
    }
}
